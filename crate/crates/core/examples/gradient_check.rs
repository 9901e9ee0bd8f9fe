//! Analytic KD gradients against central finite differences.
//!
//! `cargo run --example gradient_check -- [seed]`

use sparse_kd::distributions::{softmax, zipf, Rng};
use sparse_kd::gradcheck::{central_difference, worst_mismatch, FD_STEP};
use sparse_kd::kd_loss::{ghost_grad, ghost_loss, grad_general, kld_loss};
use sparse_kd::sparsify::{self, SparseTarget};

fn main() -> sparse_kd::Result<()> {
    let seed = std::env::args().nth(1).map_or(0, |s| s.parse().expect("seed"));
    let mut rng = Rng::new(seed);
    let t = zipf(50)?;
    let logits: Vec<f64> = (0..t.len()).map(|_| rng.normal()).collect();
    let p = softmax(&logits)?;
    let targets: Vec<(&str, SparseTarget)> = vec![
        ("dense", SparseTarget::dense(&t)),
        ("top-k raw", sparsify::top_k(&t, 5, false)?),
        ("top-k norm", sparsify::top_k(&t, 5, true)?),
        ("sampled", sparsify::random_sampling(&t, 10, 1.0, &mut rng)?),
        ("naive fix", sparsify::naive_fix(&t, 5, 17)?),
    ];
    for (name, s) in &targets {
        let analytic = grad_general(&p, s)?;
        let numeric = central_difference(|z| kld_loss(z, s).unwrap(), &logits, FD_STEP);
        report(name, analytic.as_slice(), &numeric);
    }
    let g = sparsify::ghost_token(&t, 5)?;
    let numeric = central_difference(|z| ghost_loss(z, &g).unwrap(), &logits, FD_STEP);
    report("ghost", ghost_grad(&p, &g)?.as_slice(), &numeric);
    Ok(())
}

fn report(name: &str, analytic: &[f64], numeric: &[f64]) {
    let max_err = analytic.iter().zip(numeric).map(|(a, n)| (a - n).abs()).fold(0.0, f64::max);
    let ok = worst_mismatch(analytic, numeric, 1e-6, 1e-9).is_none();
    println!("{name:<11} sum={:+.2e} max|a-fd|={max_err:.2e} {}", analytic.iter().sum::<f64>(), if ok { "ok" } else { "MISMATCH" });
}
