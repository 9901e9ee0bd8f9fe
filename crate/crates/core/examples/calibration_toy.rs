//! Trains a CE teacher on the Gaussian-cluster task and compares student
//! calibration under CE, FullKD, Top-K and random-sampling targets.
//!
//! `cargo run --release --example calibration_toy -- [seed] [rounds]`

use sparse_kd::experiments::{ToyConfig, ToySetup};
use sparse_kd::toytrain::TrainScheme;

fn main() -> sparse_kd::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map_or(0, |s| s.parse().expect("seed"));
    let mut cfg = ToyConfig::desk();
    if let Some(r) = args.next() {
        cfg.train.num_rounds = r.parse().expect("rounds");
    }
    let t0 = std::time::Instant::now();
    let setup = ToySetup::new(&cfg, seed)?;
    println!(
        "teacher     acc {:.3}  ece {:6.2}%  ({:.1?})",
        setup.teacher_accuracy,
        setup.teacher_report.ece * 100.0,
        t0.elapsed()
    );
    let schemes = [
        TrainScheme::StudentCe,
        TrainScheme::FullKd,
        TrainScheme::TopK { k: 7 },
        TrainScheme::RandomSampling { rounds: 50, temperature: 1.0 },
    ];
    for scheme in schemes {
        let t = std::time::Instant::now();
        let run = setup.student(&cfg, scheme)?;
        println!(
            "{:<11} acc {:.3}  ece {:6.2}%  ({:.1?})",
            run.label,
            run.accuracy,
            run.ece_percent,
            t.elapsed()
        );
    }
    Ok(())
}
