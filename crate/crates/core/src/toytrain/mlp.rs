use std::f64::consts::{FRAC_1_SQRT_2, PI};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::Serialize;

use crate::distributions::Rng;
use crate::error::{invalid, Result};

/// Exact GELU, `x Φ(x)`.
pub fn gelu(x: f64) -> f64 {
    x * normal_cdf(x)
}

pub fn gelu_derivative(x: f64) -> f64 {
    gelu_derivative_with_cdf(x, normal_cdf(x))
}

fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

fn gelu_derivative_with_cdf(x: f64, cdf: f64) -> f64 {
    let pdf = (-0.5 * x * x).exp() / (2.0 * PI).sqrt();
    cdf + x * pdf
}

/// Activations and the normal CDF at each pre-activation.
fn gelu_with_cdf(pre: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let cdf = pre.mapv(normal_cdf);
    let mut act = pre.clone();
    act.zip_mut_with(&cdf, |x, &c| *x *= c);
    (act, cdf)
}

/// Affine layer `y = x W + b` with `W` stored as `[in, out]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Array2::zeros((fan_in, fan_out)),
            bias: Array1::zeros(fan_out),
        }
    }

    /// Uniform in `±1/sqrt(fan_in)` for weights and biases.
    pub fn init(fan_in: usize, fan_out: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let mut draw = || (2.0 * rng.uniform() - 1.0) * bound;
        let weight = Array2::from_shape_simple_fn((fan_in, fan_out), &mut draw);
        let bias = Array1::from_shape_simple_fn(fan_out, &mut draw);
        Self { weight, bias }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.nrows()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.ncols()
    }

    fn apply(&self, x: ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.weight) + &self.bias
    }
}

/// Three-layer GELU perceptron: `W3 gelu(W2 gelu(W1 x + b1) + b2) + b3`.
///
/// Gradients use the same type, one tensor per parameter.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MlpModel {
    pub layers: [Dense; 3],
}

pub type MlpGrads = MlpModel;

/// Intermediate activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    inputs: Array2<f64>,
    pre1: Array2<f64>,
    cdf1: Array2<f64>,
    act1: Array2<f64>,
    pre2: Array2<f64>,
    cdf2: Array2<f64>,
    act2: Array2<f64>,
    pub logits: Array2<f64>,
}

impl MlpModel {
    pub fn new(num_dim: usize, hidden: usize, num_classes: usize, rng: &mut Rng) -> Self {
        Self {
            layers: [
                Dense::init(num_dim, hidden, rng),
                Dense::init(hidden, hidden, rng),
                Dense::init(hidden, num_classes, rng),
            ],
        }
    }

    pub fn zeros(num_dim: usize, hidden: usize, num_classes: usize) -> Self {
        Self {
            layers: [
                Dense::zeros(num_dim, hidden),
                Dense::zeros(hidden, hidden),
                Dense::zeros(hidden, num_classes),
            ],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.input_dim(), self.hidden(), self.num_classes())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn hidden(&self) -> usize {
        self.layers[0].fan_out()
    }

    pub fn num_classes(&self) -> usize {
        self.layers[2].fan_out()
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Parameter tensors in a fixed order: `W1, b1, W2, b2, W3, b3`.
    pub fn tensors(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| {
                [
                    l.weight.as_slice().expect("standard layout"),
                    l.bias.as_slice().expect("standard layout"),
                ]
            })
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                [
                    l.weight.as_slice_mut().expect("standard layout"),
                    l.bias.as_slice_mut().expect("standard layout"),
                ]
            })
            .collect()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_parameters() {
            return Err(invalid(format!(
                "expected {} parameters, got {}",
                self.num_parameters(),
                flat.len()
            )));
        }
        let mut offset = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            t.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    fn check_inputs(&self, inputs: &ArrayView2<f64>) -> Result<()> {
        if inputs.ncols() != self.input_dim() {
            return Err(invalid(format!(
                "input width {} does not match model input dimension {}",
                inputs.ncols(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, inputs: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.forward_with_cache(inputs)?.logits)
    }

    pub fn forward_with_cache(&self, inputs: ArrayView2<f64>) -> Result<ForwardCache> {
        self.check_inputs(&inputs)?;
        let pre1 = self.layers[0].apply(inputs.view());
        let (act1, cdf1) = gelu_with_cdf(&pre1);
        let pre2 = self.layers[1].apply(act1.view());
        let (act2, cdf2) = gelu_with_cdf(&pre2);
        let logits = self.layers[2].apply(act2.view());
        Ok(ForwardCache {
            inputs: inputs.to_owned(),
            pre1,
            cdf1,
            act1,
            pre2,
            cdf2,
            act2,
            logits,
        })
    }

    /// Parameter gradients given upstream gradients on the logits.
    pub fn backward(&self, inputs: ArrayView2<f64>, logit_grads: ArrayView2<f64>) -> Result<MlpGrads> {
        let cache = self.forward_with_cache(inputs)?;
        self.backward_from_cache(&cache, logit_grads)
    }

    pub fn backward_from_cache(
        &self,
        cache: &ForwardCache,
        logit_grads: ArrayView2<f64>,
    ) -> Result<MlpGrads> {
        if logit_grads.dim() != cache.logits.dim() {
            return Err(invalid(format!(
                "logit gradient shape {:?} does not match logits {:?}",
                logit_grads.dim(),
                cache.logits.dim()
            )));
        }
        let layer_grad = |input: &Array2<f64>, upstream: &ArrayView2<f64>| Dense {
            weight: input.t().dot(upstream),
            bias: upstream.sum_axis(Axis(0)),
        };
        let g3 = layer_grad(&cache.act2, &logit_grads);
        let mut d2 = logit_grads.dot(&self.layers[2].weight.t());
        ndarray::Zip::from(&mut d2)
            .and(&cache.pre2)
            .and(&cache.cdf2)
            .for_each(|d, &z, &c| *d *= gelu_derivative_with_cdf(z, c));
        let g2 = layer_grad(&cache.act1, &d2.view());
        let mut d1 = d2.dot(&self.layers[1].weight.t());
        ndarray::Zip::from(&mut d1)
            .and(&cache.pre1)
            .and(&cache.cdf1)
            .for_each(|d, &z, &c| *d *= gelu_derivative_with_cdf(z, c));
        let g1 = layer_grad(&cache.inputs, &d1.view());
        Ok(MlpModel { layers: [g1, g2, g3] })
    }
}
