//! Reliability diagram for a predictions file.
//!
//! `cargo run --example ece_report -- [predictions.json] [bins]`

use sparse_kd::calibration::DEFAULT_BINS;
use sparse_kd::experiments::{ece_report, read_predictions};

fn main() -> sparse_kd::Result<()> {
    let mut args = std::env::args().skip(1);
    let path = args
        .next()
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/predictions.json").into());
    let bins = args.next().map_or(DEFAULT_BINS, |b| b.parse().expect("bins"));
    let r = ece_report(&read_predictions(&path)?, bins)?;
    println!("{} predictions, accuracy {:.3}, ECE {:.2}%", r.report.n_samples, r.accuracy, r.ece_percent);
    for b in r.report.bins.iter().filter(|b| b.count > 0) {
        let bar = "#".repeat((40.0 * b.accuracy).round() as usize);
        println!("[{:.1},{:.1}) n={:<4} conf {:.3} acc {:.3} {bar}", b.lower, b.upper, b.count, b.mean_confidence, b.accuracy);
    }
    Ok(())
}
