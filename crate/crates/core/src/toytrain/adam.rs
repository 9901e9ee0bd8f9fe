use serde::Serialize;

use crate::error::{Error, Result};

use super::mlp::MlpModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Bias-corrected Adam without weight decay.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    first: Vec<f64>,
    second: Vec<f64>,
}

impl AdamState {
    pub fn new(config: AdamConfig, num_parameters: usize) -> Self {
        Self {
            config,
            step: 0,
            first: vec![0.0; num_parameters],
            second: vec![0.0; num_parameters],
        }
    }

    pub fn for_model(config: AdamConfig, model: &MlpModel) -> Self {
        Self::new(config, model.num_parameters())
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update over parameter tensors laid out like `grads`.
    pub fn update(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        let total: usize = grads.iter().map(|g| g.len()).sum();
        if params.len() != grads.len()
            || params.iter().zip(grads).any(|(p, g)| p.len() != g.len())
            || total != self.first.len()
        {
            return Err(Error::InvalidArgument(
                "parameter and gradient layouts differ".into(),
            ));
        }
        if grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
            return Err(Error::Divergence {
                step: self.step as usize + 1,
                reason: "non-finite gradient".into(),
            });
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, epsilon } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        let mut offset = 0;
        for (p, g) in params.iter_mut().zip(grads) {
            let m = &mut self.first[offset..offset + g.len()];
            let v = &mut self.second[offset..offset + g.len()];
            for (((p, &g), m), v) in p.iter_mut().zip(g.iter()).zip(m).zip(v) {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + epsilon);
            }
            offset += g.len();
        }
        Ok(())
    }
}

pub fn adam_step(state: &mut AdamState, params: &mut MlpModel, grads: &MlpModel) -> Result<()> {
    let g = grads.tensors();
    let mut p = params.tensors_mut();
    state.update(&mut p, &g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::Rng;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut rng = Rng::new(1);
        let mut m = MlpModel::new(3, 4, 2, &mut rng);
        let before = m.clone();
        let mut s = AdamState::for_model(AdamConfig::new(1e-2), &m);
        adam_step(&mut s, &mut m, &before.zeros_like()).unwrap();
        assert_eq!(m, before);
        assert_eq!(s.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let lr = 1e-3;
        let mut s = AdamState::new(AdamConfig::new(lr), 4);
        let mut p = vec![1.0, -2.0, 0.5, 3.0];
        let g = vec![0.3, -2.0, 1e-3, -0.07];
        let before = p.clone();
        s.update(&mut [&mut p[..]], &[&g[..]]).unwrap();
        for ((a, b), g) in p.iter().zip(&before).zip(&g) {
            assert!(((a - b) + lr * g.signum()).abs() < 1e-6, "{a} {b}");
        }
    }

    #[test]
    fn non_finite_gradient_is_divergence() {
        let mut s = AdamState::new(AdamConfig::new(1e-3), 2);
        let mut p = vec![0.0, 0.0];
        let err = s.update(&mut [&mut p[..]], &[&[f64::NAN, 0.0][..]]).unwrap_err();
        assert!(matches!(err, Error::Divergence { step: 1, .. }));
    }

    #[test]
    fn deterministic() {
        let run = || {
            let mut s = AdamState::new(AdamConfig::new(1e-2), 3);
            let mut p = vec![0.1, 0.2, 0.3];
            for i in 0..10 {
                let g = [i as f64 * 0.1, -0.5, 0.25];
                s.update(&mut [&mut p[..]], &[&g[..]]).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
    }
}
