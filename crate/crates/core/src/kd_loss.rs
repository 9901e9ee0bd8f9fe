//! Distillation losses on student logits and their logit-level gradients.
//!
//! Every loss here is `f(softmax(x))` for some probability-space function `f`,
//! so each gradient is a vector-Jacobian product through the softmax:
//! `∂L/∂x_j = p_j (a_j − Σ_i a_i p_i)` with `a = ∂f/∂p`. For the KL family
//! this collapses to `(Σ t_i) p_j − t_j`.
//!
//! `0 log 0` is taken as zero. A log argument below [`LOG_FLOOR`] is clamped
//! to it, unless clamping would move the loss by more than 1e-9, in which case
//! a [`Error::Singularity`] is returned.

use serde::Serialize;

use crate::distributions::{log_softmax, softmax, softmax_with_log, ProbVector};
use crate::error::{invalid, Error, Result};
use crate::sparsify::{GhostTarget, SparseTarget};

pub const LOG_FLOOR: f64 = 1e-300;
const CLAMP_TOL: f64 = 1e-9;

/// Per-logit gradient of a loss.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct GradVector(Vec<f64>);

impl GradVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, g| f64::max(m, g.abs()))
    }
}

fn check_len(expected: usize, got: usize, what: &str) -> Result<()> {
    if expected != got {
        return Err(invalid(format!("{what}: length {got}, expected {expected}")));
    }
    Ok(())
}

/// `weight · ln(x)` with the clamping rule described at module level.
fn weighted_ln(weight: f64, x: f64, what: &str) -> Result<f64> {
    if weight == 0.0 {
        return Ok(0.0);
    }
    if x >= LOG_FLOOR {
        return Ok(weight * x.ln());
    }
    let shift = if x > 0.0 {
        weight * (LOG_FLOOR.ln() - x.ln())
    } else {
        f64::INFINITY
    };
    if shift.abs() > CLAMP_TOL {
        return Err(Error::Singularity(format!(
            "log of {x} weighted by {weight} in {what}"
        )));
    }
    Ok(weight * LOG_FLOOR.ln())
}

/// `Σ t_i log(t_i / p_i)` over the target's entries, `p = softmax(logits)`.
pub fn kld_loss(student_logits: &[f64], target: &SparseTarget) -> Result<f64> {
    check_len(target.vocab_size(), student_logits.len(), "student logits")?;
    Ok(kld_from_log_probs(&log_softmax(student_logits)?, target))
}

fn kld_from_log_probs(log_p: &[f64], target: &SparseTarget) -> f64 {
    target
        .entries()
        .iter()
        .map(|&(i, t)| t * (t.ln() - log_p[i as usize]))
        .sum()
}

/// `−Σ t_i log p_i` over the target's entries.
pub fn ce_loss(student_logits: &[f64], target: &SparseTarget) -> Result<f64> {
    check_len(target.vocab_size(), student_logits.len(), "student logits")?;
    let log_p = log_softmax(student_logits)?;
    Ok(-target
        .entries()
        .iter()
        .map(|&(i, t)| t * log_p[i as usize])
        .sum::<f64>())
}

/// `(Σ t_i) p_j − t_j`: the gradient of both [`kld_loss`] and [`ce_loss`].
pub fn grad_general(student_probs: &ProbVector, target: &SparseTarget) -> Result<GradVector> {
    check_len(target.vocab_size(), student_probs.len(), "student probabilities")?;
    let mass = target.weight_sum();
    let mut g: Vec<f64> = student_probs.as_slice().iter().map(|&p| mass * p).collect();
    for &(i, t) in target.entries() {
        g[i as usize] -= t;
    }
    Ok(GradVector(g))
}

/// Student mass on the ghost target's explicit tokens, and outside them.
/// The tail is summed directly so it stays accurate when the kept mass is near 1.
fn split_mass(p: &[f64], target: &GhostTarget) -> (f64, f64) {
    let base = target.base();
    let kept: f64 = base.entries().iter().map(|&(i, _)| p[i as usize]).sum();
    let tail: f64 = p
        .iter()
        .enumerate()
        .filter(|(i, _)| !base.contains(*i))
        .map(|(_, v)| v)
        .sum();
    (kept, tail)
}

/// Top-K KL plus a ghost class comparing the teacher's residual mass to the
/// student's mass outside the kept tokens.
pub fn ghost_loss(student_logits: &[f64], target: &GhostTarget) -> Result<f64> {
    check_len(target.vocab_size(), student_logits.len(), "student logits")?;
    let (p, log_p) = softmax_with_log(student_logits)?;
    ghost_from_probs(&p, &log_p, target)
}

fn ghost_from_probs(p: &ProbVector, log_p: &[f64], target: &GhostTarget) -> Result<f64> {
    let explicit = kld_from_log_probs(log_p, target.base());
    let g = target.ghost_weight();
    if g == 0.0 {
        return Ok(explicit);
    }
    let (_, student_tail) = split_mass(p.as_slice(), target);
    let ghost = weighted_ln(g, g, "ghost loss")? - weighted_ln(g, student_tail, "ghost loss")?;
    Ok(explicit + ghost)
}

/// Gradient of [`ghost_loss`]: `p_j − t_j` on kept tokens, and
/// `p_j · Σ_K(t_i − p_i) / (1 − Σ_K p_i)` elsewhere.
pub fn ghost_grad(student_probs: &ProbVector, target: &GhostTarget) -> Result<GradVector> {
    check_len(target.vocab_size(), student_probs.len(), "student probabilities")?;
    let p = student_probs.as_slice();
    let base = target.base();
    let (student_kept, student_tail) = split_mass(p, target);
    let tail_scale = if target.ghost_weight() == 0.0 && student_tail == 0.0 {
        0.0
    } else {
        if student_tail <= 0.0 {
            return Err(Error::Singularity(
                "student puts no mass outside the ghost target's tokens".into(),
            ));
        }
        (base.weight_sum() - student_kept) / student_tail
    };
    let mut g: Vec<f64> = p.iter().map(|&pj| tail_scale * pj).collect();
    for &(i, t) in base.entries() {
        let i = i as usize;
        g[i] = p[i] - t;
    }
    Ok(GradVector(g))
}

fn dense_pair(student_logits: &[f64], target: &ProbVector) -> Result<ProbVector> {
    check_len(target.len(), student_logits.len(), "student logits")?;
    softmax(student_logits)
}

/// `Σ p_i log(p_i / t_i)`.
pub fn reverse_kld_loss(student_logits: &[f64], target: &ProbVector) -> Result<f64> {
    let p = dense_pair(student_logits, target)?;
    let mut loss = 0.0;
    for (&pi, &ti) in p.as_slice().iter().zip(target.as_slice()) {
        loss += weighted_ln(pi, pi, "reverse KLD")? - weighted_ln(pi, ti, "reverse KLD")?;
    }
    Ok(loss)
}

/// Mean squared error between probability vectors.
pub fn mse_loss(student_logits: &[f64], target: &ProbVector) -> Result<f64> {
    let p = dense_pair(student_logits, target)?;
    let n = p.len() as f64;
    Ok(p.as_slice()
        .iter()
        .zip(target.as_slice())
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / n)
}

/// Summed absolute difference between probability vectors.
pub fn l1_loss(student_logits: &[f64], target: &ProbVector) -> Result<f64> {
    let p = dense_pair(student_logits, target)?;
    Ok(p.as_slice()
        .iter()
        .zip(target.as_slice())
        .map(|(a, b)| (a - b).abs())
        .sum())
}

/// Pulls a probability-space gradient `a` back through the softmax.
fn softmax_vjp(p: &[f64], a: &[f64]) -> GradVector {
    let dot: f64 = p.iter().zip(a).map(|(p, a)| p * a).sum();
    GradVector(p.iter().zip(a).map(|(p, a)| p * (a - dot)).collect())
}

pub fn reverse_kld_grad(student_probs: &ProbVector, target: &ProbVector) -> Result<GradVector> {
    check_len(target.len(), student_probs.len(), "student probabilities")?;
    let p = student_probs.as_slice();
    let mut a = Vec::with_capacity(p.len());
    for (&pi, &ti) in p.iter().zip(target.as_slice()) {
        if pi == 0.0 {
            a.push(0.0);
        } else if ti == 0.0 {
            return Err(Error::Singularity(
                "reverse KLD gradient with zero target under positive student mass".into(),
            ));
        } else {
            a.push(pi.ln() - ti.ln());
        }
    }
    Ok(softmax_vjp(p, &a))
}

pub fn mse_grad(student_probs: &ProbVector, target: &ProbVector) -> Result<GradVector> {
    check_len(target.len(), student_probs.len(), "student probabilities")?;
    let p = student_probs.as_slice();
    let scale = 2.0 / p.len() as f64;
    let a: Vec<f64> = p
        .iter()
        .zip(target.as_slice())
        .map(|(pi, ti)| scale * (pi - ti))
        .collect();
    Ok(softmax_vjp(p, &a))
}

/// Subgradient of [`l1_loss`], using `sign(0) = 0`.
pub fn l1_grad(student_probs: &ProbVector, target: &ProbVector) -> Result<GradVector> {
    check_len(target.len(), student_probs.len(), "student probabilities")?;
    let p = student_probs.as_slice();
    let a: Vec<f64> = p
        .iter()
        .zip(target.as_slice())
        .map(|(pi, ti)| {
            let d = pi - ti;
            if d == 0.0 {
                0.0
            } else {
                d.signum()
            }
        })
        .collect();
    Ok(softmax_vjp(p, &a))
}

/// Loss and gradient for one row under an arbitrary target type.
pub trait DistillTarget {
    fn loss(&self, student_logits: &[f64]) -> Result<f64>;
    /// [`loss`](Self::loss) from precomputed student probabilities and log-probabilities.
    fn loss_from_probs(&self, student_probs: &ProbVector, student_log_probs: &[f64]) -> Result<f64>;
    fn grad(&self, student_probs: &ProbVector) -> Result<GradVector>;
}

impl DistillTarget for SparseTarget {
    fn loss(&self, student_logits: &[f64]) -> Result<f64> {
        kld_loss(student_logits, self)
    }

    fn loss_from_probs(&self, student_probs: &ProbVector, student_log_probs: &[f64]) -> Result<f64> {
        check_len(self.vocab_size(), student_probs.len(), "student probabilities")?;
        Ok(kld_from_log_probs(student_log_probs, self))
    }

    fn grad(&self, student_probs: &ProbVector) -> Result<GradVector> {
        grad_general(student_probs, self)
    }
}

impl DistillTarget for GhostTarget {
    fn loss(&self, student_logits: &[f64]) -> Result<f64> {
        ghost_loss(student_logits, self)
    }

    fn loss_from_probs(&self, student_probs: &ProbVector, student_log_probs: &[f64]) -> Result<f64> {
        check_len(self.vocab_size(), student_probs.len(), "student probabilities")?;
        ghost_from_probs(student_probs, student_log_probs, self)
    }

    fn grad(&self, student_probs: &ProbVector) -> Result<GradVector> {
        ghost_grad(student_probs, self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::{zipf, Rng};
    use crate::gradcheck::{assert_gradients_close, central_difference};
    use crate::sparsify::{ghost_token, top_k, Scheme};
    use approx::assert_abs_diff_eq;

    fn pv(v: &[f64]) -> ProbVector {
        ProbVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn kld_examples() {
        let logits = [0.3, -1.2, 2.0, 0.1];
        let t = SparseTarget::dense(&softmax(&logits).unwrap());
        assert_abs_diff_eq!(kld_loss(&logits, &t).unwrap(), 0.0, epsilon = 1e-15);
        let one = SparseTarget::dense(&pv(&[1.0, 0.0]));
        assert_abs_diff_eq!(kld_loss(&[0.0, 0.0], &one).unwrap(), 2f64.ln(), epsilon = 1e-15);
        assert!(kld_loss(&[0.0, f64::NAN], &one).is_err());
        assert!(kld_loss(&[0.0, 0.0, 0.0], &one).is_err());
    }

    #[test]
    fn top_k_optimum_has_negative_loss_and_zero_gradient() {
        let t = zipf(6).unwrap();
        let target = top_k(&t, 3, false).unwrap();
        let a = target.weight_sum();
        // approach p_i = t_i / a on K, 0 elsewhere through logits
        let logits: Vec<f64> = (0..6)
            .map(|i| if target.contains(i) { (t.get(i) / a).ln() } else { -800.0 })
            .collect();
        let p = softmax(&logits).unwrap();
        let g = grad_general(&p, &target).unwrap();
        assert!(g.max_abs() <= 1e-9, "{g:?}");
        assert!(kld_loss(&logits, &target).unwrap() < 0.0);
    }

    #[test]
    fn ce_examples() {
        let one = SparseTarget::one_hot(3, 1).unwrap();
        assert_abs_diff_eq!(ce_loss(&[-800.0, 0.0, -800.0], &one).unwrap(), 0.0, epsilon = 1e-15);
        let logits = [0.5, 1.5, -0.5];
        let p = softmax(&logits).unwrap();
        assert_abs_diff_eq!(ce_loss(&logits, &one).unwrap(), -p.get(1).ln(), epsilon = 1e-14);
    }

    #[test]
    fn grad_general_examples() {
        let p = pv(&[0.5, 0.5]);
        let t = SparseTarget::dense(&p);
        assert_eq!(grad_general(&p, &t).unwrap().as_slice(), &[0.0, 0.0]);
        let raw = SparseTarget::new(2, Scheme::TopK { k: 1, normalized: false }, vec![(0, 0.7)]).unwrap();
        let g = grad_general(&p, &raw).unwrap();
        assert_abs_diff_eq!(g.as_slice()[0], -0.35, epsilon = 1e-15);
        assert_abs_diff_eq!(g.as_slice()[1], 0.35, epsilon = 1e-15);
    }

    #[test]
    fn grad_general_matches_finite_differences() {
        let mut rng = Rng::new(17);
        for v in [4usize, 16, 64] {
            let logits: Vec<f64> = (0..v).map(|_| 2.0 * rng.normal()).collect();
            let teacher = softmax(&(0..v).map(|_| 2.0 * rng.normal()).collect::<Vec<_>>()).unwrap();
            let target = top_k(&teacher, (v / 4).max(1), false).unwrap();
            let numeric = central_difference(|x| kld_loss(x, &target).unwrap(), &logits, 1e-5);
            let analytic = grad_general(&softmax(&logits).unwrap(), &target).unwrap();
            assert_gradients_close(analytic.as_slice(), &numeric, 1e-6, 1e-9);
        }
    }

    #[test]
    fn ghost_examples() {
        let t = zipf(5).unwrap();
        let g = ghost_token(&t, 2).unwrap();
        let logits: Vec<f64> = t.as_slice().iter().map(|p| p.ln()).collect();
        assert_abs_diff_eq!(ghost_loss(&logits, &g).unwrap(), 0.0, epsilon = 1e-14);
        let grad = ghost_grad(&t, &g).unwrap();
        assert!(grad.max_abs() < 1e-15);

        let full = ghost_token(&t, 5).unwrap();
        let x = [0.2, -0.4, 1.0, 0.0, 0.3];
        let dense = SparseTarget::dense(&t);
        assert_abs_diff_eq!(
            ghost_loss(&x, &full).unwrap(),
            kld_loss(&x, &dense).unwrap(),
            epsilon = 1e-14
        );
    }

    #[test]
    fn ghost_grad_of_kept_tokens_is_full_kd_gradient() {
        let t = zipf(8).unwrap();
        let g = ghost_token(&t, 3).unwrap();
        let p = softmax(&[0.1, 0.9, -0.3, 0.4, 0.0, -1.0, 0.5, 0.2]).unwrap();
        let grad = ghost_grad(&p, &g).unwrap();
        for &(i, ti) in g.base().entries() {
            assert_eq!(grad.as_slice()[i as usize], p.get(i as usize) - ti);
        }
    }

    #[test]
    fn ghost_singularity() {
        let t = zipf(3).unwrap();
        let g = ghost_token(&t, 1).unwrap();
        let logits = [0.0, -1e4, -1e4];
        assert!(matches!(ghost_loss(&logits, &g), Err(Error::Singularity(_))));
        let p = pv(&[1.0, 0.0, 0.0]);
        assert!(matches!(ghost_grad(&p, &g), Err(Error::Singularity(_))));
    }

    #[test]
    fn alternative_divergences() {
        let t = pv(&[0.75, 0.25]);
        let x = [0.0, 0.0];
        assert_abs_diff_eq!(mse_loss(&x, &t).unwrap(), 0.0625, epsilon = 1e-15);
        assert_abs_diff_eq!(l1_loss(&x, &t).unwrap(), 0.5, epsilon = 1e-15);
        let want = 0.5 * (0.5f64 / 0.75).ln() + 0.5 * (0.5f64 / 0.25).ln();
        assert_abs_diff_eq!(reverse_kld_loss(&x, &t).unwrap(), want, epsilon = 1e-15);

        let same = [0.3, -0.2, 1.1];
        let p = softmax(&same).unwrap();
        assert_abs_diff_eq!(reverse_kld_loss(&same, &p).unwrap(), 0.0, epsilon = 1e-15);
        assert_eq!(mse_loss(&same, &p).unwrap(), 0.0);
        assert_eq!(l1_loss(&same, &p).unwrap(), 0.0);

        let hole = pv(&[1.0, 0.0]);
        assert!(matches!(reverse_kld_loss(&x, &hole), Err(Error::Singularity(_))));
        // a sub-floor target under negligible student mass is clamped, not an error
        let near_hole = pv(&[1.0, 1e-310]);
        assert!(reverse_kld_loss(&[0.0, -745.0], &near_hole).is_ok());
        assert!(matches!(reverse_kld_loss(&[0.0, 0.0], &near_hole), Err(Error::Singularity(_))));
    }

    #[test]
    fn alternative_gradients_match_finite_differences() {
        let mut rng = Rng::new(3);
        for v in [4usize, 16] {
            let x: Vec<f64> = (0..v).map(|_| rng.normal()).collect();
            let t = softmax(&(0..v).map(|_| rng.normal()).collect::<Vec<_>>()).unwrap();
            let p = softmax(&x).unwrap();
            let cases: [(fn(&[f64], &ProbVector) -> Result<f64>, GradVector); 3] = [
                (reverse_kld_loss, reverse_kld_grad(&p, &t).unwrap()),
                (mse_loss, mse_grad(&p, &t).unwrap()),
                (l1_loss, l1_grad(&p, &t).unwrap()),
            ];
            for (loss, analytic) in cases {
                let numeric = central_difference(|z| loss(z, &t).unwrap(), &x, 1e-5);
                assert_gradients_close(analytic.as_slice(), &numeric, 1e-6, 1e-9);
            }
        }
    }

    #[test]
    fn precomputed_probs_give_identical_loss() {
        let mut rng = Rng::new(8);
        let t = zipf(40).unwrap();
        let logits: Vec<f64> = (0..40).map(|_| 3.0 * rng.normal()).collect();
        let (p, log_p) = softmax_with_log(&logits).unwrap();
        assert_eq!(p, softmax(&logits).unwrap());
        assert_eq!(log_p, log_softmax(&logits).unwrap());
        let sparse = top_k(&t, 6, false).unwrap();
        assert_eq!(sparse.loss_from_probs(&p, &log_p).unwrap(), sparse.loss(&logits).unwrap());
        let ghost = ghost_token(&t, 6).unwrap();
        assert_eq!(ghost.loss_from_probs(&p, &log_p).unwrap(), ghost.loss(&logits).unwrap());
    }
}
