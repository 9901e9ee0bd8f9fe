//! Sparse distillation targets built from a dense teacher distribution.
//!
//! Each constructor returns a [`SparseTarget`] holding `(token id, weight)`
//! pairs in ascending id order. Which weight-sum constraint applies depends
//! on the [`Scheme`]:
//!
//! | scheme                                   | weight sum              |
//! |------------------------------------------|-------------------------|
//! | raw Top-K, Top-p, ghost-token base        | `<= 1`                  |
//! | normalized Top-K, naive fix, label smoothing, random sampling, dense, one-hot | `= 1` |
//!
//! Label smoothing spreads the residual mass over *all* classes, Top-K
//! members included. The variant that spreads it only over the tail is not
//! provided.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::distributions::{Categorical, ProbVector, Rng, SUM_TOL};
use crate::error::{invalid, Result};

/// How a [`SparseTarget`] was produced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Scheme {
    Dense,
    OneHot,
    TopK { k: usize, normalized: bool },
    TopP { p: f64, k_cap: usize },
    LabelSmoothing { k: usize },
    NaiveFix { k: usize },
    GhostToken { k: usize },
    RandomSampling { rounds: usize, temperature: f64 },
}

impl Scheme {
    /// Whether targets of this scheme must carry unit mass.
    pub fn is_normalized(&self) -> bool {
        match self {
            Scheme::TopK { normalized, .. } => *normalized,
            Scheme::TopP { .. } | Scheme::GhostToken { .. } => false,
            _ => true,
        }
    }

    /// Temperature-0 proposals sample uniformly over the support; training with them
    /// is known to diverge.
    pub fn uses_uniform_proposal(&self) -> bool {
        matches!(self, Scheme::RandomSampling { temperature, .. } if *temperature == 0.0)
    }
}

/// Sparse set of `(token id, weight)` pairs over a vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTarget")]
pub struct SparseTarget {
    vocab_size: usize,
    scheme: Scheme,
    entries: Vec<(u32, f64)>,
    weight_sum: f64,
}

#[derive(Deserialize)]
struct RawTarget {
    vocab_size: usize,
    scheme: Scheme,
    entries: Vec<(u32, f64)>,
    weight_sum: f64,
}

impl TryFrom<RawTarget> for SparseTarget {
    type Error = crate::error::Error;

    fn try_from(raw: RawTarget) -> Result<Self> {
        let t = SparseTarget::new(raw.vocab_size, raw.scheme, raw.entries)?;
        if (t.weight_sum - raw.weight_sum).abs() > 1e-12 {
            return Err(invalid(format!(
                "stored weight_sum {} disagrees with entries ({})",
                raw.weight_sum, t.weight_sum
            )));
        }
        Ok(t)
    }
}

impl SparseTarget {
    /// Validates and wraps entries. Entries must have strictly increasing ids
    /// below `vocab_size` and strictly positive weights.
    pub fn new(vocab_size: usize, scheme: Scheme, entries: Vec<(u32, f64)>) -> Result<Self> {
        if vocab_size == 0 {
            return Err(invalid("vocab_size must be >= 1"));
        }
        for w in entries.windows(2) {
            if w[0].0 >= w[1].0 {
                return Err(invalid(format!(
                    "token ids must be strictly increasing ({} then {})",
                    w[0].0, w[1].0
                )));
            }
        }
        if let Some(&(id, _)) = entries.last() {
            if id as usize >= vocab_size {
                return Err(invalid(format!("token id {id} outside vocabulary of {vocab_size}")));
            }
        }
        if let Some(&(id, w)) = entries.iter().find(|(_, w)| !(w.is_finite() && *w > 0.0)) {
            return Err(invalid(format!("token {id} has non-positive weight {w}")));
        }
        let weight_sum: f64 = entries.iter().map(|e| e.1).sum();
        if scheme.is_normalized() {
            if (weight_sum - 1.0).abs() > SUM_TOL {
                return Err(invalid(format!(
                    "{scheme:?} target must sum to 1, got {weight_sum}"
                )));
            }
        } else if weight_sum > 1.0 + SUM_TOL {
            return Err(invalid(format!("{scheme:?} target exceeds unit mass: {weight_sum}")));
        }
        Ok(Self {
            vocab_size,
            scheme,
            entries,
            weight_sum,
        })
    }

    /// The full teacher distribution, zero entries dropped.
    pub fn dense(t: &ProbVector) -> Self {
        let entries = nonzero_entries(t, 0..t.len());
        Self::unchecked(t.len(), Scheme::Dense, entries)
    }

    pub fn one_hot(vocab_size: usize, label: usize) -> Result<Self> {
        if label >= vocab_size {
            return Err(invalid(format!("label {label} outside vocabulary of {vocab_size}")));
        }
        Self::new(vocab_size, Scheme::OneHot, vec![(label as u32, 1.0)])
    }

    fn unchecked(vocab_size: usize, scheme: Scheme, entries: Vec<(u32, f64)>) -> Self {
        let weight_sum = entries.iter().map(|e| e.1).sum();
        Self {
            vocab_size,
            scheme,
            entries,
            weight_sum,
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn weight_sum(&self) -> f64 {
        self.weight_sum
    }

    pub fn weight(&self, token: usize) -> f64 {
        self.entries
            .binary_search_by_key(&(token as u32), |e| e.0)
            .map(|i| self.entries[i].1)
            .unwrap_or(0.0)
    }

    pub fn contains(&self, token: usize) -> bool {
        self.entries
            .binary_search_by_key(&(token as u32), |e| e.0)
            .is_ok()
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.vocab_size];
        for &(id, w) in &self.entries {
            out[id as usize] = w;
        }
        out
    }

    /// Adds this target's weights into `acc` (length `vocab_size`).
    pub fn accumulate_into(&self, acc: &mut [f64]) {
        for &(id, w) in &self.entries {
            acc[id as usize] += w;
        }
    }
}

/// Raw Top-K target plus the mass of everything outside it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GhostTarget {
    base: SparseTarget,
    ghost_weight: f64,
}

impl GhostTarget {
    pub fn new(base: SparseTarget, ghost_weight: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&ghost_weight) {
            return Err(invalid(format!("ghost weight {ghost_weight} outside [0, 1]")));
        }
        if (base.weight_sum + ghost_weight - 1.0).abs() > SUM_TOL {
            return Err(invalid(format!(
                "ghost weight {ghost_weight} does not complement base mass {}",
                base.weight_sum
            )));
        }
        Ok(Self { base, ghost_weight })
    }

    pub fn base(&self) -> &SparseTarget {
        &self.base
    }

    pub fn ghost_weight(&self) -> f64 {
        self.ghost_weight
    }

    pub fn vocab_size(&self) -> usize {
        self.base.vocab_size
    }
}

/// Descending probability, ties broken by lower id.
fn rank_order(t: &[f64], a: usize, b: usize) -> Ordering {
    t[b].total_cmp(&t[a]).then(a.cmp(&b))
}

/// Ids of the `k` most probable tokens, best first.
pub fn ranked_ids(t: &ProbVector, k: usize) -> Vec<usize> {
    let p = t.as_slice();
    let mut ids: Vec<usize> = (0..p.len()).collect();
    let k = k.min(p.len());
    if k < ids.len() && k > 0 {
        ids.select_nth_unstable_by(k - 1, |&a, &b| rank_order(p, a, b));
        ids.truncate(k);
    }
    ids.sort_unstable_by(|&a, &b| rank_order(p, a, b));
    ids.truncate(k);
    ids
}

fn nonzero_entries(t: &ProbVector, ids: impl IntoIterator<Item = usize>) -> Vec<(u32, f64)> {
    let mut entries: Vec<(u32, f64)> = ids
        .into_iter()
        .filter(|&i| t.get(i) > 0.0)
        .map(|i| (i as u32, t.get(i)))
        .collect();
    entries.sort_unstable_by_key(|e| e.0);
    entries
}

fn check_k(t: &ProbVector, k: usize) -> Result<()> {
    if k == 0 || k > t.len() {
        return Err(invalid(format!("k = {k} must lie in [1, {}]", t.len())));
    }
    Ok(())
}

/// The `k` largest teacher probabilities, optionally rescaled to unit mass.
pub fn top_k(t: &ProbVector, k: usize, normalize: bool) -> Result<SparseTarget> {
    check_k(t, k)?;
    let mut entries = nonzero_entries(t, ranked_ids(t, k));
    if normalize {
        let mass: f64 = entries.iter().map(|e| e.1).sum();
        entries.iter_mut().for_each(|e| e.1 /= mass);
    }
    Ok(SparseTarget::unchecked(
        t.len(),
        Scheme::TopK { k, normalized: normalize },
        entries,
    ))
}

/// Nucleus target: the shortest descending prefix reaching mass `p`, at most
/// `k_cap` tokens, raw weights.
pub fn top_p(t: &ProbVector, p: f64, k_cap: usize) -> Result<SparseTarget> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(invalid(format!("top-p mass {p} outside (0, 1]")));
    }
    if k_cap == 0 {
        return Err(invalid("k_cap must be >= 1"));
    }
    let order = ranked_ids(t, t.len());
    let mut kept = Vec::new();
    let mut mass = 0.0;
    for id in order.into_iter().take(k_cap) {
        if t.get(id) == 0.0 {
            break;
        }
        kept.push(id);
        mass += t.get(id);
        // absorb summation rounding, e.g. 0.1 + 0.2 + 0.3 vs 0.6
        if mass + 1e-12 >= p {
            break;
        }
    }
    Ok(SparseTarget::unchecked(
        t.len(),
        Scheme::TopP { p, k_cap },
        nonzero_entries(t, kept),
    ))
}

/// Top-K plus the residual mass spread evenly over every class.
pub fn label_smoothing(t: &ProbVector, k: usize) -> Result<SparseTarget> {
    check_k(t, k)?;
    let top = ranked_ids(t, k);
    let kept: f64 = top.iter().map(|&i| t.get(i)).sum();
    let share = (1.0 - kept).max(0.0) / t.len() as f64;
    let mut dense = vec![share; t.len()];
    for &i in &top {
        dense[i] += t.get(i);
    }
    let entries = dense
        .into_iter()
        .enumerate()
        .filter(|(_, w)| *w > 0.0)
        .map(|(i, w)| (i as u32, w))
        .collect();
    Ok(SparseTarget::unchecked(t.len(), Scheme::LabelSmoothing { k }, entries))
}

/// Top-K with the residual mass moved onto the ground-truth token.
pub fn naive_fix(t: &ProbVector, k: usize, ground_truth: usize) -> Result<SparseTarget> {
    check_k(t, k)?;
    if ground_truth >= t.len() {
        return Err(invalid(format!(
            "ground truth {ground_truth} outside vocabulary of {}",
            t.len()
        )));
    }
    let mut entries = nonzero_entries(t, ranked_ids(t, k));
    let kept: f64 = entries.iter().map(|e| e.1).sum();
    let residual = (1.0 - kept).max(0.0);
    let gt = ground_truth as u32;
    match entries.binary_search_by_key(&gt, |e| e.0) {
        Ok(i) => entries[i].1 += residual,
        Err(i) if residual > 0.0 => entries.insert(i, (gt, residual)),
        Err(_) => {}
    }
    Ok(SparseTarget::unchecked(t.len(), Scheme::NaiveFix { k }, entries))
}

/// Raw Top-K plus a ghost class carrying the remaining teacher mass.
pub fn ghost_token(t: &ProbVector, k: usize) -> Result<GhostTarget> {
    check_k(t, k)?;
    let base = SparseTarget::unchecked(
        t.len(),
        Scheme::GhostToken { k },
        nonzero_entries(t, ranked_ids(t, k)),
    );
    let ghost_weight = (1.0 - base.weight_sum).clamp(0.0, 1.0);
    Ok(GhostTarget { base, ghost_weight })
}

/// Reusable importance sampler with proposal `q ∝ t^temperature`.
///
/// Each of `rounds` draws from `q` contributes likelihood ratio `t/q`; the
/// accumulated ratios are normalized to unit mass. At temperature 1 the
/// weights are exactly `count / rounds`.
#[derive(Debug, Clone)]
pub struct RandomSampler {
    vocab_size: usize,
    rounds: usize,
    temperature: f64,
    proposal: Categorical,
    // (1 - temperature) ln t: the log likelihood ratio up to a constant
    log_ratio: Vec<f64>,
}

impl RandomSampler {
    pub fn new(t: &ProbVector, rounds: usize, temperature: f64) -> Result<Self> {
        if rounds == 0 {
            return Err(invalid("sampling rounds must be >= 1"));
        }
        if !(temperature.is_finite() && temperature >= 0.0) {
            return Err(invalid(format!("temperature must be >= 0, got {temperature}")));
        }
        if temperature == 0.0 {
            log::warn!("temperature 0 gives a uniform proposal over the support; training with it diverges");
        }
        let (proposal, log_ratio) = if temperature == 1.0 {
            (Categorical::new(t), Vec::new())
        } else {
            let tempered: Vec<f64> = t
                .as_slice()
                .iter()
                .map(|&p| if p > 0.0 { p.powf(temperature) } else { 0.0 })
                .collect();
            let q = ProbVector::from_weights(tempered)
                .map_err(|_| invalid("teacher has no mass left after tempering"))?;
            let log_ratio = t
                .as_slice()
                .iter()
                .map(|&p| if p > 0.0 { (1.0 - temperature) * p.ln() } else { f64::NEG_INFINITY })
                .collect();
            (Categorical::new(&q), log_ratio)
        };
        Ok(Self {
            vocab_size: t.len(),
            rounds,
            temperature,
            proposal,
            log_ratio,
        })
    }

    pub fn rounds(&self) -> usize {
        self.rounds
    }

    pub fn sample(&self, rng: &mut Rng) -> SparseTarget {
        let counts = self.proposal.sparse_counts(self.rounds, rng);
        let scheme = Scheme::RandomSampling {
            rounds: self.rounds,
            temperature: self.temperature,
        };
        let entries: Vec<(u32, f64)> = if self.temperature == 1.0 {
            let n = self.rounds as f64;
            counts.into_iter().map(|(i, c)| (i as u32, c as f64 / n)).collect()
        } else {
            let shift = counts
                .iter()
                .map(|&(i, _)| self.log_ratio[i])
                .fold(f64::NEG_INFINITY, f64::max);
            let raw: Vec<(u32, f64)> = counts
                .into_iter()
                .map(|(i, c)| (i as u32, c as f64 * (self.log_ratio[i] - shift).exp()))
                .filter(|e| e.1 > 0.0)
                .collect();
            let total: f64 = raw.iter().map(|e| e.1).sum();
            raw.into_iter().map(|(i, w)| (i, w / total)).collect()
        };
        SparseTarget::unchecked(self.vocab_size, scheme, entries)
    }
}

/// One importance-sampled target; see [`RandomSampler`].
pub fn random_sampling(
    t: &ProbVector,
    n_rounds: usize,
    temperature: f64,
    rng: &mut Rng,
) -> Result<SparseTarget> {
    Ok(RandomSampler::new(t, n_rounds, temperature)?.sample(rng))
}

/// Mean number of distinct tokens drawn for each round count.
pub fn unique_token_curve(
    t: &ProbVector,
    round_counts: &[usize],
    repetitions: usize,
    rng: &mut Rng,
) -> Result<Vec<(usize, f64)>> {
    if repetitions == 0 {
        return Err(invalid("repetitions must be >= 1"));
    }
    if round_counts.contains(&0) {
        return Err(invalid("round counts must be >= 1"));
    }
    let sampler = Categorical::new(t);
    Ok(round_counts
        .iter()
        .map(|&n| {
            let total: usize = (0..repetitions)
                .map(|_| sampler.sparse_counts(n, rng).len())
                .sum();
            (n, total as f64 / repetitions as f64)
        })
        .collect())
}

/// Smallest round count whose mean unique-token count reaches `target_unique`,
/// searched up to `max_rounds`.
pub fn rounds_for_unique(
    t: &ProbVector,
    target_unique: f64,
    repetitions: usize,
    max_rounds: usize,
    rng: &mut Rng,
) -> Result<usize> {
    let sampler = Categorical::new(t);
    let mean_unique = |n: usize, rng: &mut Rng| {
        (0..repetitions)
            .map(|_| sampler.sparse_counts(n, rng).len())
            .sum::<usize>() as f64
            / repetitions as f64
    };
    let (mut lo, mut hi) = (1usize, 1usize);
    while mean_unique(hi, rng) < target_unique {
        if hi >= max_rounds {
            return Err(invalid(format!(
                "{target_unique} unique tokens not reached within {max_rounds} rounds"
            )));
        }
        lo = hi;
        hi = (hi * 2).min(max_rounds);
    }
    while lo < hi {
        let mid = (lo + hi) / 2;
        if mean_unique(mid, rng) < target_unique {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

/// Least-squares line through `(ln x, ln y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PowerLawFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn power_law_fit(points: &[(usize, f64)]) -> Result<PowerLawFit> {
    if points.len() < 2 {
        return Err(invalid("power-law fit needs at least two points"));
    }
    if points.iter().any(|&(x, y)| x == 0 || y <= 0.0) {
        return Err(invalid("power-law fit needs positive coordinates"));
    }
    let xs: Vec<f64> = points.iter().map(|p| (p.0 as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(invalid("power-law fit needs distinct x values"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(PowerLawFit {
        slope,
        intercept,
        r_squared,
    })
}
