use ndarray::{Array1, Array2};
use serde::Serialize;

use crate::distributions::Rng;
use crate::error::{invalid, Result};

/// Gaussian clusters around uniform random class centers.
///
/// Each class has its own noise scale `uniform(0, 1) · base_sigma`. A
/// `base_sigma` of zero is accepted and makes every sample its class center.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SyntheticTask {
    pub num_classes: usize,
    pub num_dim: usize,
    pub class_centers: Array2<f64>,
    pub class_sigma: Array1<f64>,
    pub base_sigma: f64,
}

impl SyntheticTask {
    pub fn new(num_classes: usize, num_dim: usize, base_sigma: f64, rng: &mut Rng) -> Result<Self> {
        if num_classes == 0 || num_dim == 0 {
            return Err(invalid("num_classes and num_dim must be positive"));
        }
        if !(base_sigma.is_finite() && base_sigma >= 0.0) {
            return Err(invalid(format!("base_sigma must be >= 0, got {base_sigma}")));
        }
        let class_centers = Array2::from_shape_simple_fn((num_classes, num_dim), || rng.uniform());
        let class_sigma = Array1::from_shape_simple_fn(num_classes, || rng.uniform() * base_sigma);
        Ok(Self {
            num_classes,
            num_dim,
            class_centers,
            class_sigma,
            base_sigma,
        })
    }

    /// `batch_size` samples with uniform labels.
    pub fn batch(&self, batch_size: usize, rng: &mut Rng) -> Result<(Array2<f64>, Vec<usize>)> {
        if batch_size == 0 {
            return Err(invalid("batch_size must be >= 1"));
        }
        let labels: Vec<usize> = (0..batch_size).map(|_| rng.below(self.num_classes)).collect();
        let mut inputs = Array2::zeros((batch_size, self.num_dim));
        for (mut row, &label) in inputs.rows_mut().into_iter().zip(&labels) {
            let sigma = self.class_sigma[label];
            for (x, &c) in row.iter_mut().zip(self.class_centers.row(label)) {
                *x = c + rng.normal() * sigma;
            }
        }
        Ok((inputs, labels))
    }
}

pub fn make_task(num_classes: usize, num_dim: usize, base_sigma: f64, rng: &mut Rng) -> Result<SyntheticTask> {
    SyntheticTask::new(num_classes, num_dim, base_sigma, rng)
}

pub fn get_batch(task: &SyntheticTask, batch_size: usize, rng: &mut Rng) -> Result<(Array2<f64>, Vec<usize>)> {
    task.batch(batch_size, rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigma_bounds() {
        let task = make_task(64, 8, 1.5, &mut Rng::new(1)).unwrap();
        assert!(task.class_sigma.iter().all(|&s| s >= 0.0 && s <= 1.5));
        assert!(task.class_centers.iter().all(|&c| (0.0..1.0).contains(&c)));
        assert!(make_task(0, 8, 1.0, &mut Rng::new(1)).is_err());
    }

    #[test]
    fn zero_sigma_returns_centers() {
        let task = make_task(5, 3, 0.0, &mut Rng::new(2)).unwrap();
        let (x, labels) = task.batch(20, &mut Rng::new(3)).unwrap();
        for (row, &l) in x.rows().into_iter().zip(&labels) {
            assert_eq!(row, task.class_centers.row(l));
        }
    }

    #[test]
    fn batches_are_reproducible() {
        let task = make_task(10, 4, 1.0, &mut Rng::new(5)).unwrap();
        let a = task.batch(16, &mut Rng::new(9)).unwrap();
        let b = task.batch(16, &mut Rng::new(9)).unwrap();
        assert_eq!(a, b);
        assert!(task.batch(0, &mut Rng::new(9)).is_err());
    }

    #[test]
    fn labels_are_uniform() {
        let classes = 8;
        let task = make_task(classes, 2, 1.0, &mut Rng::new(6)).unwrap();
        let mut rng = Rng::new(7);
        let n = 100_000;
        let (_, labels) = task.batch(n, &mut rng).unwrap();
        let mut counts = vec![0usize; classes];
        labels.iter().for_each(|&l| counts[l] += 1);
        let p = 1.0 / classes as f64;
        let se = (n as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - n as f64 * p).abs() < 3.0 * se, "count {c}");
        }
    }
}
