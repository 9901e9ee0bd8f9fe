//! Sparse knowledge-distillation targets and the tooling to study them.
//!
//! * [`distributions`]: probability vectors, Zipf and softmax, seeded categorical sampling
//! * [`sparsify`]: Top-K, Top-p, label smoothing, naive fix, ghost token and
//!   importance-sampled random-sampling targets
//! * [`kd_loss`]: KL / CE / ghost / alternative divergences with logit gradients
//! * [`calibration`]: reliability bins and expected calibration error
//! * [`toytrain`]: MLP + Adam toy experiments (calibration, gradient similarity)
//! * [`logit_cache`]: the bit-packed 24-bit-per-entry teacher cache
//! * [`experiments`]: the CLI-facing drivers that emit CSV / JSON
//!
//! Runnable walkthroughs live in `examples/`; `cargo run --example` lists them.

pub mod calibration;
pub mod distributions;
pub mod error;
pub mod experiments;
pub mod gradcheck;
pub mod kd_loss;
pub mod logit_cache;
pub mod sparsify;
pub mod toytrain;

pub use distributions::{ProbVector, Rng};
pub use error::{Error, Result};
pub use sparsify::{GhostTarget, Scheme, SparseTarget};
