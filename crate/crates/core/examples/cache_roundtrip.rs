//! Encodes sampled and Top-K targets with each cache scheme and reports
//! size and reconstruction error.
//!
//! `cargo run --example cache_roundtrip`

use sparse_kd::distributions::{zipf, Rng};
use sparse_kd::logit_cache::{decode, encode, CacheScheme};
use sparse_kd::sparsify::{self, SparseTarget};

fn run(name: &str, targets: &[SparseTarget], scheme: CacheScheme, param: u32) -> sparse_kd::Result<()> {
    let vocab = targets[0].vocab_size();
    let bytes = encode(targets, scheme, vocab, param)?;
    let (header, back) = decode(&bytes)?;
    let mut worst_rel: f64 = 0.0;
    for (a, b) in back.iter().zip(targets) {
        for (x, y) in a.entries().iter().zip(b.entries()) {
            worst_rel = worst_rel.max((x.1 - y.1).abs() / y.1);
        }
    }
    println!(
        "{name:<12} positions={} bytes={} ({:.1}/pos) worst rel err={:.3}%",
        header.position_count,
        bytes.len(),
        bytes.len() as f64 / targets.len() as f64,
        100.0 * worst_rel
    );
    Ok(())
}

fn main() -> sparse_kd::Result<()> {
    let t = zipf(50_000)?;
    let mut rng = Rng::new(3);
    let sampled: Vec<_> = (0..1000).map(|_| sparsify::random_sampling(&t, 50, 1.0, &mut rng)).collect::<Result<_, _>>()?;
    let top: Vec<_> = (0..1000).map(|_| sparsify::top_k(&t, 20, true)).collect::<Result<_, _>>()?;
    run("rs-counts", &sampled, CacheScheme::RandomSamplingCounts, 50)?;
    run("topk-ratio", &top, CacheScheme::TopKRatio, 20)?;
    run("topk-linear", &top, CacheScheme::TopKLinear, 20)?;
    Ok(())
}
