//! Head of each sparse target, averaged, on a Zipf teacher.
//!
//! `cargo run --release --example zipf_targets -- [vocab] [k]`

use sparse_kd::experiments::{zipf_targets, ZipfTargetsConfig};

fn main() -> sparse_kd::Result<()> {
    let mut args = std::env::args().skip(1);
    let mut cfg = ZipfTargetsConfig::default();
    if let Some(v) = args.next() {
        cfg.vocab_size = v.parse().expect("vocab size");
    }
    if let Some(k) = args.next() {
        cfg.k = k.parse().expect("k");
    }
    let z = zipf_targets(&cfg)?;
    println!("V={} K={} draws/target={} targets={}", cfg.vocab_size, cfg.k, cfg.n_samples, cfg.n_rounds);
    println!("mean distinct tokens per sampled target: {:.2}", z.mean_unique);
    println!("{:>5} {:>10} {:>10} {:>10} {:>10}", "token", "truth", "topk", "naive", "sampled");
    for i in 0..cfg.k.min(10).max(1) {
        println!(
            "{:>5} {:>10.5} {:>10.5} {:>10.5} {:>10.5}",
            i + 1,
            z.ground_truth[i],
            z.topk_normalized[i],
            z.naive_fix[i],
            z.random_sampling_mean[i]
        );
    }
    let tail = |v: &[f64]| v[cfg.k..].iter().sum::<f64>();
    println!(
        "mass beyond K: truth {:.4}  topk {:.4}  naive {:.4}  sampled {:.4}",
        tail(&z.ground_truth),
        tail(&z.topk_normalized),
        tail(&z.naive_fix),
        tail(&z.random_sampling_mean)
    );
    Ok(())
}
