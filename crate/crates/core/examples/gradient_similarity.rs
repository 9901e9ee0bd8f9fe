//! Angle and norm ratio between sparse-target parameter gradients and the
//! FullKD gradient, averaged over seeds.
//!
//! `cargo run --release --example gradient_similarity -- [seeds]`

use sparse_kd::experiments::{grad_sim, GradSimConfig};

fn main() -> sparse_kd::Result<()> {
    let mut cfg = GradSimConfig::desk();
    if let Some(n) = std::env::args().nth(1) {
        cfg.repeats = n.parse().expect("number of seeds");
    }
    let t0 = std::time::Instant::now();
    let r = grad_sim(&cfg, 0)?;
    for s in &r.per_seed {
        let cells: Vec<String> = s
            .rows
            .iter()
            .map(|row| format!("{} {:5.1}° x{:.3}", row.label, row.angle_degrees, row.norm_ratio))
            .collect();
        println!("seed {:<3} {}", s.seed, cells.join("  |  "));
    }
    println!("mean over {} seeds ({:.1?}):", r.per_seed.len(), t0.elapsed());
    for (label, angle, ratio) in &r.mean {
        println!("  {label:<12} angle {angle:6.2}°  norm ratio {ratio:.4}");
    }
    Ok(())
}
