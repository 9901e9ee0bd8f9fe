//! Dense probability vectors, synthetic generators and seeded categorical sampling.
//!
//! Everything here works in `f64`. A [`ProbVector`] is validated on
//! construction: entries must be non-negative and sum to one within
//! [`RENORMALIZE_TOL`]; anything within that band is rescaled so the stored
//! sum is one to [`SUM_TOL`].

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Allowed deviation of a stored [`ProbVector`] sum from one.
pub const SUM_TOL: f64 = 1e-9;
/// Inputs whose sum is within this distance of one are renormalized instead of rejected.
pub const RENORMALIZE_TOL: f64 = 1e-6;
/// Generator identity recorded in every emitted result file.
pub const RNG_ALGORITHM: &str = "ChaCha8 (rand_chacha 0.9, seed_from_u64 + stream)";

/// A dense probability distribution over a vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct ProbVector {
    values: Vec<f64>,
}

impl ProbVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(invalid("probability vector must be non-empty"));
        }
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < 0.0)
        {
            return Err(invalid(format!("entry {i} is {v}, expected a finite value >= 0")));
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > RENORMALIZE_TOL {
            return Err(invalid(format!("probabilities sum to {sum}, expected 1")));
        }
        let mut pv = Self { values };
        if (sum - 1.0).abs() > SUM_TOL / 4.0 {
            pv.values.iter_mut().for_each(|v| *v /= sum);
        }
        Ok(pv)
    }

    /// Normalizes arbitrary non-negative weights.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        let sum: f64 = weights.iter().sum();
        if !(sum.is_finite() && sum > 0.0) {
            return Err(invalid(format!("weights must have a positive finite sum, got {sum}")));
        }
        Self::new(weights.into_iter().map(|w| w / sum).collect())
    }

    pub fn uniform(vocab_size: usize) -> Result<Self> {
        if vocab_size == 0 {
            return Err(invalid("vocab_size must be >= 1"));
        }
        Ok(Self {
            values: vec![1.0 / vocab_size as f64; vocab_size],
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, i: usize) -> f64 {
        self.values[i]
    }

    /// Index of the largest probability; ties go to the lower index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = i;
            }
        }
        best
    }

    pub fn max(&self) -> f64 {
        self.values[self.argmax()]
    }

    /// Shannon entropy with `0 log 0 = 0`.
    pub fn entropy(&self) -> f64 {
        -self
            .values
            .iter()
            .filter(|&&v| v > 0.0)
            .map(|&v| v * v.ln())
            .sum::<f64>()
    }
}

impl<'de> Deserialize<'de> for ProbVector {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let values = Vec::<f64>::deserialize(d)?;
        ProbVector::new(values).map_err(serde::de::Error::custom)
    }
}

/// Seedable deterministic generator. One per thread of execution.
///
/// Backed by ChaCha8 with 64-bit stream selection, so independent streams
/// (training batches, held-out batches, sampling) can share one seed.
#[derive(Debug, Clone)]
pub struct Rng {
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { inner }
    }

    /// Derives an independent child generator; advances `self`.
    pub fn fork(&mut self, stream: u64) -> Self {
        let seed = self.inner.next_u64();
        Self::with_stream(seed, stream)
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        use rand::Rng as _;
        self.inner.random_range(0..n)
    }
}

impl RngCore for Rng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// Zipf distribution: element `i` (1-indexed) proportional to `1/i`.
pub fn zipf(vocab_size: usize) -> Result<ProbVector> {
    zipf_with_exponent(vocab_size, 1.0)
}

/// Generalized Zipf: element `i` proportional to `i^-exponent`.
pub fn zipf_with_exponent(vocab_size: usize, exponent: f64) -> Result<ProbVector> {
    if vocab_size == 0 {
        return Err(invalid("vocab_size must be >= 1"));
    }
    if !exponent.is_finite() || exponent < 0.0 {
        return Err(invalid(format!("zipf exponent must be >= 0, got {exponent}")));
    }
    let raw: Vec<f64> = (1..=vocab_size)
        .map(|i| (i as f64).powf(-exponent))
        .collect();
    // Sum smallest-first to keep the harmonic sum accurate for large vocabularies.
    let total: f64 = raw.iter().rev().sum();
    Ok(ProbVector {
        values: raw.into_iter().map(|v| v / total).collect(),
    })
}

/// Max-shifted softmax.
pub fn softmax(logits: &[f64]) -> Result<ProbVector> {
    Ok(softmax_with_log(logits)?.0)
}

/// `x_i - logsumexp(x)`, computed stably.
pub fn log_softmax(logits: &[f64]) -> Result<Vec<f64>> {
    Ok(softmax_with_log(logits)?.1)
}

/// [`softmax`] and [`log_softmax`] from one pass over the exponentials.
pub fn softmax_with_log(logits: &[f64]) -> Result<(ProbVector, Vec<f64>)> {
    check_logits(logits)?;
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut values: Vec<f64> = logits.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = values.iter().sum();
    let lse = max + sum.ln();
    let log_p = logits.iter().map(|&x| x - lse).collect();
    values.iter_mut().for_each(|v| *v /= sum);
    Ok((ProbVector { values }, log_p))
}

pub(crate) fn check_logits(logits: &[f64]) -> Result<()> {
    if logits.is_empty() {
        return Err(invalid("logits must be non-empty"));
    }
    if let Some((i, x)) = logits.iter().enumerate().find(|(_, x)| !x.is_finite()) {
        return Err(invalid(format!("logit {i} is not finite ({x})")));
    }
    Ok(())
}

/// Inverse-transform sampler over a fixed distribution.
///
/// Uniforms are drawn in a batch, sorted, and located on the cumulative
/// distribution, so drawn ids come out in non-decreasing order. Tokens with
/// zero probability are never returned.
#[derive(Debug, Clone)]
pub struct Categorical {
    cdf: Vec<f64>,
    last_positive: usize,
}

impl Categorical {
    pub fn new(dist: &ProbVector) -> Self {
        let mut acc = 0.0;
        let cdf: Vec<f64> = dist
            .as_slice()
            .iter()
            .map(|&p| {
                acc += p;
                acc
            })
            .collect();
        let last_positive = dist
            .as_slice()
            .iter()
            .rposition(|&p| p > 0.0)
            .unwrap_or(0);
        Self { cdf, last_positive }
    }

    pub fn len(&self) -> usize {
        self.cdf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cdf.is_empty()
    }

    /// `n` draws as token ids in non-decreasing order.
    pub fn sample_sorted(&self, n: usize, rng: &mut Rng) -> Vec<usize> {
        let total = self.cdf[self.last_positive];
        let mut uniforms: Vec<f64> = (0..n).map(|_| rng.uniform() * total).collect();
        uniforms.sort_by(f64::total_cmp);
        let mut ids = Vec::with_capacity(n);
        let mut lo = 0;
        for u in uniforms {
            // first index with cdf > u; zero-mass tokens share their predecessor's cdf
            lo += self.cdf[lo..=self.last_positive].partition_point(|&c| c <= u);
            let id = lo.min(self.last_positive);
            ids.push(id);
            lo = id;
        }
        ids
    }

    /// Multinomial counts of `n` draws.
    pub fn counts(&self, n: usize, rng: &mut Rng) -> Vec<u64> {
        let mut counts = vec![0u64; self.cdf.len()];
        for id in self.sample_sorted(n, rng) {
            counts[id] += 1;
        }
        counts
    }

    /// Sparse `(id, count)` pairs with ascending ids.
    pub fn sparse_counts(&self, n: usize, rng: &mut Rng) -> Vec<(usize, u64)> {
        let mut out: Vec<(usize, u64)> = Vec::new();
        for id in self.sample_sorted(n, rng) {
            match out.last_mut() {
                Some((last, c)) if *last == id => *c += 1,
                _ => out.push((id, 1)),
            }
        }
        out
    }
}

/// Draws `n_draws` tokens from `dist`, returning per-token counts.
pub fn sample_categorical(dist: &ProbVector, n_draws: usize, rng: &mut Rng) -> Result<Vec<u64>> {
    if n_draws == 0 {
        return Err(invalid("n_draws must be >= 1"));
    }
    Ok(Categorical::new(dist).counts(n_draws, rng))
}
