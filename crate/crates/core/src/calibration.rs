//! Expected Calibration Error over equal-width confidence bins.
//!
//! Confidence is the maximum predicted probability and a prediction counts as
//! correct when its argmax (lowest index on ties) equals the label. ECE is a
//! fraction in `[0, 1]`; multiply by 100 for the percentages usually reported.

use serde::{Deserialize, Serialize};

use crate::distributions::ProbVector;
use crate::error::{invalid, Result};

pub const DEFAULT_BINS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub probs: ProbVector,
    pub label: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    /// Zero for empty bins.
    pub mean_confidence: f64,
    /// Zero for empty bins.
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityReport {
    pub bins: Vec<ReliabilityBin>,
    pub ece: f64,
    pub n_samples: usize,
    pub n_bins: usize,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl ReliabilityReport {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn accuracy(&self) -> f64 {
        let correct: f64 = self.bins.iter().map(|b| b.accuracy * b.count as f64).sum();
        correct / self.n_samples as f64
    }
}

/// Reliability statistics for full probability vectors.
pub fn reliability(predictions: &[Prediction], n_bins: usize) -> Result<ReliabilityReport> {
    let scored: Vec<(f64, bool)> = predictions
        .iter()
        .map(|p| {
            if p.label >= p.probs.len() {
                return Err(invalid(format!(
                    "label {} outside {} classes",
                    p.label,
                    p.probs.len()
                )));
            }
            Ok((p.probs.max(), p.probs.argmax() == p.label))
        })
        .collect::<Result<_>>()?;
    reliability_from_scores(&scored, n_bins)
}

/// Reliability statistics for precomputed `(confidence, correct)` pairs.
pub fn reliability_from_scores(scores: &[(f64, bool)], n_bins: usize) -> Result<ReliabilityReport> {
    if scores.is_empty() {
        return Err(invalid("reliability needs at least one prediction"));
    }
    if n_bins == 0 {
        return Err(invalid("n_bins must be >= 1"));
    }
    let mut count = vec![0usize; n_bins];
    let mut conf_sum = vec![0.0f64; n_bins];
    let mut correct = vec![0usize; n_bins];
    for &(c, ok) in scores {
        if !(0.0..=1.0).contains(&c) {
            return Err(invalid(format!("confidence {c} outside [0, 1]")));
        }
        let b = ((c * n_bins as f64) as usize).min(n_bins - 1);
        count[b] += 1;
        conf_sum[b] += c;
        correct[b] += ok as usize;
    }
    let n = scores.len() as f64;
    let bins: Vec<ReliabilityBin> = (0..n_bins)
        .map(|b| {
            let (mean_confidence, accuracy) = if count[b] == 0 {
                (0.0, 0.0)
            } else {
                (
                    conf_sum[b] / count[b] as f64,
                    correct[b] as f64 / count[b] as f64,
                )
            };
            ReliabilityBin {
                lower: b as f64 / n_bins as f64,
                upper: (b + 1) as f64 / n_bins as f64,
                count: count[b],
                mean_confidence,
                accuracy,
            }
        })
        .collect();
    let ece = bins
        .iter()
        .map(|b| b.count as f64 / n * (b.accuracy - b.mean_confidence).abs())
        .sum();
    Ok(ReliabilityReport {
        bins,
        ece,
        n_samples: scores.len(),
        n_bins,
        seed: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn pred(probs: &[f64], label: usize) -> Prediction {
        Prediction {
            probs: ProbVector::new(probs.to_vec()).unwrap(),
            label,
        }
    }

    #[test]
    fn confident_and_correct_is_calibrated() {
        let preds = vec![pred(&[1.0, 0.0], 0), pred(&[0.0, 1.0], 1)];
        let r = reliability(&preds, 10).unwrap();
        assert_eq!(r.ece, 0.0);
        assert_eq!(r.bins[9].count, 2);
    }

    #[test]
    fn single_wrong_sample() {
        let r = reliability(&[pred(&[0.9, 0.1], 1)], 10).unwrap();
        assert_abs_diff_eq!(r.ece, 0.9, epsilon = 1e-12);
        assert_eq!(r.bins[9].count, 1);
    }

    #[test]
    fn matched_accuracy_gives_small_ece() {
        // 700 of 1000 correct at confidence 0.7
        let scores: Vec<(f64, bool)> = (0..1000).map(|i| (0.7, i % 10 < 7)).collect();
        let r = reliability_from_scores(&scores, 10).unwrap();
        assert!(r.ece <= 0.03, "{}", r.ece);
    }

    #[test]
    fn empty_bins_and_invariants() {
        let scores = [(0.55, true), (0.95, false), (0.15, true), (0.05, false)];
        let r = reliability_from_scores(&scores, 10).unwrap();
        assert_eq!(r.bins.iter().map(|b| b.count).sum::<usize>(), 4);
        let empty = &r.bins[3];
        assert_eq!((empty.count, empty.mean_confidence, empty.accuracy), (0, 0.0, 0.0));
        let recomputed: f64 = r
            .bins
            .iter()
            .map(|b| b.count as f64 / 4.0 * (b.accuracy - b.mean_confidence).abs())
            .sum();
        assert_abs_diff_eq!(r.ece, recomputed, epsilon = 1e-12);
        for (i, b) in r.bins.iter().enumerate() {
            assert_abs_diff_eq!(b.upper - b.lower, 0.1, epsilon = 1e-12);
            assert_abs_diff_eq!(b.lower, i as f64 / 10.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn errors() {
        assert!(reliability(&[], 10).is_err());
        assert!(reliability(&[pred(&[1.0], 0)], 0).is_err());
        assert!(reliability(&[pred(&[1.0], 3)], 10).is_err());
    }

    #[test]
    fn json_field_names() {
        let r = reliability(&[pred(&[0.6, 0.4], 0)], 2).unwrap().with_seed(9);
        let v: serde_json::Value = serde_json::to_value(&r).unwrap();
        for key in ["bins", "ece", "n_samples", "n_bins", "seed"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
    }
}
