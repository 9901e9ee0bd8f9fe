//! Distinct tokens drawn versus sampling rounds, with a log-log fit.
//!
//! `cargo run --release --example unique_tokens -- [vocab]`

use sparse_kd::experiments::{unique_curve, UniqueCurveConfig};

fn main() -> sparse_kd::Result<()> {
    let mut cfg = UniqueCurveConfig::default();
    if let Some(v) = std::env::args().nth(1) {
        cfg.vocab_size = v.parse().expect("vocab size");
    }
    let curve = unique_curve(&cfg)?;
    println!("zipf({}), {} repeats", cfg.vocab_size, cfg.repeats);
    for (n, u) in &curve.points {
        println!("  N={n:<5} unique={u:8.2}");
    }
    let f = curve.fit;
    println!("unique ~ {:.3} * N^{:.3}  (R^2 {:.4})", f.intercept.exp(), f.slope, f.r_squared);
    Ok(())
}
