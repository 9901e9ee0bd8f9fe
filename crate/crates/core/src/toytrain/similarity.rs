use serde::Serialize;

use crate::distributions::Rng;
use crate::error::{Error, Result};

use super::mlp::MlpModel;
use super::task::SyntheticTask;
use super::train::{batch_objective, TrainScheme};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimilarityRow {
    pub scheme: TrainScheme,
    pub label: String,
    pub angle_degrees: f64,
    pub norm_ratio: f64,
    /// Number of sampled targets averaged (1 for deterministic schemes).
    pub repeats: usize,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Angle between two vectors in degrees.
///
/// Uses `2·atan2(|â − b̂|, |â + b̂|)`, which stays accurate near 0° and 180°
/// where `acos` of the cosine loses precision.
pub fn angle_degrees(a: &[f64], b: &[f64]) -> Result<f64> {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::UndefinedAngle("zero gradient vector".into()));
    }
    let (mut diff, mut sum) = (0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (u, v) = (x / na, y / nb);
        diff += (u - v).powi(2);
        sum += (u + v).powi(2);
    }
    Ok((2.0 * diff.sqrt().atan2(sum.sqrt())).to_degrees())
}

/// Flattened parameter gradient of `student` on one batch.
pub fn parameter_gradient(
    scheme: TrainScheme,
    teacher: &MlpModel,
    student: &MlpModel,
    inputs: ndarray::ArrayView2<f64>,
    labels: &[usize],
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    let cache = student.forward_with_cache(inputs)?;
    let teacher_logits = teacher.forward(inputs)?;
    let (_, logit_grads) = batch_objective(
        scheme,
        cache.logits.view(),
        Some(teacher_logits.view()),
        labels,
        rng,
    )?;
    Ok(student.backward_from_cache(&cache, logit_grads.view())?.to_flat())
}

/// Compares each scheme's parameter gradient with the FullKD gradient on one
/// batch. Stochastic schemes are averaged over `repeats` sampled targets.
pub fn gradient_similarity(
    teacher: &MlpModel,
    student: &MlpModel,
    task: &SyntheticTask,
    schemes: &[TrainScheme],
    batch_size: usize,
    repeats: usize,
    rng: &mut Rng,
) -> Result<Vec<SimilarityRow>> {
    let (x, labels) = task.batch(batch_size, rng)?;
    let reference = parameter_gradient(TrainScheme::FullKd, teacher, student, x.view(), &labels, rng)?;
    let reference_norm = norm(&reference);
    if reference_norm == 0.0 {
        return Err(Error::UndefinedAngle("FullKD reference gradient is zero".into()));
    }
    schemes
        .iter()
        .map(|&scheme| {
            let n = if scheme.is_stochastic() { repeats.max(1) } else { 1 };
            let (mut angle, mut ratio) = (0.0, 0.0);
            for _ in 0..n {
                let g = parameter_gradient(scheme, teacher, student, x.view(), &labels, rng)?;
                angle += angle_degrees(&g, &reference)?;
                ratio += norm(&g) / reference_norm;
            }
            Ok(SimilarityRow {
                scheme,
                label: scheme.label(),
                angle_degrees: angle / n as f64,
                norm_ratio: ratio / n as f64,
                repeats: n,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toytrain::task::make_task;
    use approx::assert_abs_diff_eq;

    #[test]
    fn angles() {
        assert_eq!(angle_degrees(&[1.0, 2.0], &[2.0, 4.0]).unwrap(), 0.0);
        assert_abs_diff_eq!(angle_degrees(&[1.0, 0.0], &[0.0, 3.0]).unwrap(), 90.0, epsilon = 1e-12);
        assert_abs_diff_eq!(angle_degrees(&[1.0, 0.0], &[-1.0, 0.0]).unwrap(), 180.0, epsilon = 1e-12);
        assert!(matches!(angle_degrees(&[0.0], &[1.0]), Err(Error::UndefinedAngle(_))));
    }

    #[test]
    fn full_kd_against_itself() {
        let mut rng = Rng::new(8);
        let task = make_task(6, 4, 1.0, &mut rng).unwrap();
        let teacher = MlpModel::new(4, 8, 6, &mut rng);
        let student = MlpModel::new(4, 5, 6, &mut rng);
        let rows = gradient_similarity(
            &teacher,
            &student,
            &task,
            &[TrainScheme::FullKd, TrainScheme::TopK { k: 2 }],
            32,
            3,
            &mut rng,
        )
        .unwrap();
        assert_eq!(rows[0].angle_degrees, 0.0);
        assert_eq!(rows[0].norm_ratio, 1.0);
        assert!(rows[1].angle_degrees > 0.0);
    }

    #[test]
    fn zero_reference_is_an_error() {
        let mut rng = Rng::new(1);
        let task = make_task(3, 2, 1.0, &mut rng).unwrap();
        let zero = MlpModel::zeros(2, 3, 3);
        // identical (zero) teacher and student give p == t and a zero gradient
        let res = gradient_similarity(&zero, &zero, &task, &[TrainScheme::TopK { k: 1 }], 4, 1, &mut rng);
        assert!(matches!(res, Err(Error::UndefinedAngle(_))));
    }
}
