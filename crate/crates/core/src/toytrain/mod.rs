//! From-scratch toy distillation experiments: a three-layer GELU MLP, Adam,
//! a Gaussian-cluster classification task, training under every target
//! scheme, and gradient comparison against FullKD.

pub mod adam;
pub mod mlp;
pub mod similarity;
pub mod task;
pub mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use mlp::{gelu, gelu_derivative, Dense, ForwardCache, MlpGrads, MlpModel};
pub use similarity::{angle_degrees, gradient_similarity, parameter_gradient, SimilarityRow};
pub use task::{get_batch, make_task, SyntheticTask};
pub use train::{batch_objective, evaluate, train, IntervalStats, TrainConfig, TrainOutcome, TrainScheme};
