use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::calibration::{reliability_from_scores, ReliabilityReport, DEFAULT_BINS};
use crate::distributions::{softmax, softmax_with_log, ProbVector, Rng};
use crate::error::{invalid, Error, Result};
use crate::kd_loss::DistillTarget;
use crate::sparsify::{self, RandomSampler, SparseTarget};

use super::adam::{adam_step, AdamConfig, AdamState};
use super::mlp::MlpModel;
use super::task::SyntheticTask;

/// Stream ids for the generators a training run derives from its seed.
const INIT_STREAM: u64 = 1;
const BATCH_STREAM: u64 = 2;
const SAMPLING_STREAM: u64 = 3;
const EVAL_STREAM: u64 = 7;
const INTERVAL_EVAL_STREAM: u64 = 8;

/// Training objective. Everything except the two CE variants distills from a teacher.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrainScheme {
    /// Cross-entropy on labels, using the teacher's hidden width.
    TeacherCe,
    /// Cross-entropy on labels, using the student's hidden width.
    StudentCe,
    FullKd,
    /// Raw (unnormalized) Top-K teacher probabilities.
    TopK { k: usize },
    /// Raw nucleus target: smallest prefix reaching mass `p`, at most `k_cap` tokens.
    TopP { p: f64, k_cap: usize },
    RandomSampling { rounds: usize, temperature: f64 },
    GhostToken { k: usize },
    NaiveFix { k: usize },
    LabelSmoothing { k: usize },
}

impl TrainScheme {
    pub fn needs_teacher(&self) -> bool {
        !matches!(self, TrainScheme::TeacherCe | TrainScheme::StudentCe)
    }

    pub fn is_stochastic(&self) -> bool {
        matches!(self, TrainScheme::RandomSampling { .. })
    }

    pub fn label(&self) -> String {
        match self {
            TrainScheme::TeacherCe => "teacher-ce".into(),
            TrainScheme::StudentCe => "student-ce".into(),
            TrainScheme::FullKd => "fullkd".into(),
            TrainScheme::TopK { k } => format!("topk-{k}"),
            TrainScheme::TopP { p, .. } => format!("topp-{p}"),
            TrainScheme::RandomSampling { rounds, temperature } if *temperature == 1.0 => {
                format!("rs-{rounds}")
            }
            TrainScheme::RandomSampling { rounds, temperature } => {
                format!("rs-{rounds}-t{temperature}")
            }
            TrainScheme::GhostToken { k } => format!("ghost-{k}"),
            TrainScheme::NaiveFix { k } => format!("naive-fix-{k}"),
            TrainScheme::LabelSmoothing { k } => format!("label-smoothing-{k}"),
        }
    }

    /// Parses a scheme name, taking numeric parameters from the arguments.
    /// `k` doubles as the cap on Top-p targets.
    pub fn parse(name: &str, k: usize, rounds: usize, temperature: f64, top_p: f64) -> Result<Self> {
        Ok(match name {
            "teacher-ce" | "teacher" => TrainScheme::TeacherCe,
            "student-ce" | "ce" | "student" => TrainScheme::StudentCe,
            "fullkd" | "full-kd" => TrainScheme::FullKd,
            "topk" | "top-k" => TrainScheme::TopK { k },
            "topp" | "top-p" => TrainScheme::TopP { p: top_p, k_cap: k },
            "rs" | "random-sampling" => TrainScheme::RandomSampling { rounds, temperature },
            "ghost" | "ghost-token" => TrainScheme::GhostToken { k },
            "naive-fix" => TrainScheme::NaiveFix { k },
            "label-smoothing" | "smoothing" => TrainScheme::LabelSmoothing { k },
            other => return Err(invalid(format!("unknown scheme '{other}'"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hidden_teacher: usize,
    pub hidden_student: usize,
    pub lr: f64,
    pub num_rounds: usize,
    pub batch_size: usize,
    pub eval_batches: usize,
    pub eval_batch_size: usize,
    /// Steps between history entries; 0 disables them.
    pub eval_interval: usize,
    pub interval_eval_batches: usize,
    pub n_bins: usize,
    /// Seed of the held-out evaluation stream, shared across runs so
    /// students are scored on identical batches.
    pub eval_seed: u64,
}

impl TrainConfig {
    /// Single-core scale: 2000 rounds of 512 samples.
    pub fn desk() -> Self {
        Self {
            hidden_teacher: 128,
            hidden_student: 96,
            lr: 2e-3,
            num_rounds: 2000,
            batch_size: 512,
            eval_batches: 20,
            eval_batch_size: 1024,
            eval_interval: 500,
            interval_eval_batches: 1,
            n_bins: DEFAULT_BINS,
            eval_seed: 0x5eed_e7a1,
        }
    }

    /// The original constants: 20000 rounds of 4096, 100 evaluation batches.
    pub fn full_scale() -> Self {
        Self {
            num_rounds: 20_000,
            batch_size: 4096,
            eval_batches: 100,
            eval_batch_size: 4096,
            eval_interval: 2000,
            ..Self::desk()
        }
    }

    pub fn hidden_for(&self, scheme: TrainScheme) -> usize {
        match scheme {
            TrainScheme::TeacherCe => self.hidden_teacher,
            _ => self.hidden_student,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntervalStats {
    pub step: usize,
    /// Mean training loss since the previous entry.
    pub train_loss: f64,
    pub accuracy: f64,
    pub ece: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: MlpModel,
    pub report: ReliabilityReport,
    pub accuracy: f64,
    pub history: Vec<IntervalStats>,
}

fn row(a: &ArrayView2<f64>, r: usize) -> Vec<f64> {
    a.row(r).to_vec()
}

/// Builds one row's target under the scheme and returns its (loss, logit gradient).
fn row_objective(
    scheme: TrainScheme,
    student_logits: &[f64],
    teacher: Option<&ProbVector>,
    label: usize,
    rng: &mut Rng,
) -> Result<(f64, Vec<f64>)> {
    let v = student_logits.len();
    let (p, log_p) = softmax_with_log(student_logits)?;
    let teacher = || teacher.ok_or_else(|| invalid("scheme requires a teacher"));
    let eval = |target: &dyn DistillTarget| -> Result<(f64, Vec<f64>)> {
        Ok((target.loss_from_probs(&p, &log_p)?, target.grad(&p)?.into_inner()))
    };
    match scheme {
        TrainScheme::TeacherCe | TrainScheme::StudentCe => eval(&SparseTarget::one_hot(v, label)?),
        TrainScheme::FullKd => eval(&SparseTarget::dense(teacher()?)),
        TrainScheme::TopK { k } => eval(&sparsify::top_k(teacher()?, k, false)?),
        TrainScheme::TopP { p, k_cap } => eval(&sparsify::top_p(teacher()?, p, k_cap)?),
        TrainScheme::RandomSampling { rounds, temperature } => {
            eval(&RandomSampler::new(teacher()?, rounds, temperature)?.sample(rng))
        }
        TrainScheme::GhostToken { k } => eval(&sparsify::ghost_token(teacher()?, k)?),
        TrainScheme::NaiveFix { k } => eval(&sparsify::naive_fix(teacher()?, k, label)?),
        TrainScheme::LabelSmoothing { k } => eval(&sparsify::label_smoothing(teacher()?, k)?),
    }
}

/// Mean loss over a batch and its gradient with respect to the student logits.
pub fn batch_objective(
    scheme: TrainScheme,
    student_logits: ArrayView2<f64>,
    teacher_logits: Option<ArrayView2<f64>>,
    labels: &[usize],
    rng: &mut Rng,
) -> Result<(f64, Array2<f64>)> {
    let (b, v) = student_logits.dim();
    if labels.len() != b {
        return Err(invalid(format!("{} labels for a batch of {b}", labels.len())));
    }
    if let Some(t) = &teacher_logits {
        if t.dim() != (b, v) {
            return Err(invalid("teacher and student logits differ in shape"));
        }
    } else if scheme.needs_teacher() {
        return Err(invalid(format!("{} requires teacher logits", scheme.label())));
    }
    let scale = 1.0 / b as f64;
    let mut grads = Array2::zeros((b, v));
    let mut loss = 0.0;
    for r in 0..b {
        let teacher_probs = teacher_logits
            .as_ref()
            .map(|t| softmax(&row(t, r)))
            .transpose()?;
        let (l, g) = row_objective(
            scheme,
            &row(&student_logits, r),
            teacher_probs.as_ref(),
            labels[r],
            rng,
        )?;
        loss += l * scale;
        for (dst, src) in grads.row_mut(r).iter_mut().zip(g) {
            *dst = src * scale;
        }
    }
    Ok((loss, grads))
}

/// Scores a model on `batches` fresh batches drawn from `rng`.
pub fn evaluate(
    model: &MlpModel,
    task: &SyntheticTask,
    batches: usize,
    batch_size: usize,
    n_bins: usize,
    rng: &mut Rng,
) -> Result<(ReliabilityReport, f64)> {
    let mut scores = Vec::with_capacity(batches * batch_size);
    for _ in 0..batches {
        let (x, labels) = task.batch(batch_size, rng)?;
        let logits = model.forward(x.view())?;
        for (r, &label) in labels.iter().enumerate() {
            let p = softmax(&row(&logits.view(), r))?;
            scores.push((p.max(), p.argmax() == label));
        }
    }
    let accuracy = scores.iter().filter(|s| s.1).count() as f64 / scores.len() as f64;
    Ok((reliability_from_scores(&scores, n_bins)?, accuracy))
}

/// Trains a fresh model under `scheme`.
///
/// Initialization, training batches and target sampling use independent
/// streams forked from `rng`, so two runs from the same seed see the same
/// initial weights and data regardless of scheme. Held-out scoring uses
/// `config.eval_seed`.
pub fn train(
    scheme: TrainScheme,
    task: &SyntheticTask,
    config: &TrainConfig,
    teacher: Option<&MlpModel>,
    rng: &mut Rng,
) -> Result<TrainOutcome> {
    if scheme.needs_teacher() && teacher.is_none() {
        return Err(invalid(format!("{} requires a trained teacher", scheme.label())));
    }
    if config.num_rounds == 0 || config.batch_size == 0 {
        return Err(invalid("num_rounds and batch_size must be positive"));
    }
    let mut init_rng = rng.fork(INIT_STREAM);
    let mut batch_rng = rng.fork(BATCH_STREAM);
    let mut sampling_rng = rng.fork(SAMPLING_STREAM);
    let mut interval_rng = Rng::with_stream(config.eval_seed, INTERVAL_EVAL_STREAM);

    let mut model = MlpModel::new(
        task.num_dim,
        config.hidden_for(scheme),
        task.num_classes,
        &mut init_rng,
    );
    let mut adam = AdamState::for_model(AdamConfig::new(config.lr), &model);
    let mut history = Vec::new();
    let mut interval_loss = 0.0;
    let mut interval_steps = 0usize;

    for step in 1..=config.num_rounds {
        let (x, labels) = task.batch(config.batch_size, &mut batch_rng)?;
        let cache = model.forward_with_cache(x.view())?;
        let teacher_logits = teacher.map(|t| t.forward(x.view())).transpose()?;
        let (loss, logit_grads) = batch_objective(
            scheme,
            cache.logits.view(),
            teacher_logits.as_ref().map(|t| t.view()),
            &labels,
            &mut sampling_rng,
        )?;
        if !loss.is_finite() {
            return Err(Error::Divergence {
                step,
                reason: format!("loss is {loss}"),
            });
        }
        let grads = model.backward_from_cache(&cache, logit_grads.view())?;
        adam_step(&mut adam, &mut model, &grads).map_err(|e| match e {
            Error::Divergence { reason, .. } => Error::Divergence { step, reason },
            other => other,
        })?;
        interval_loss += loss;
        interval_steps += 1;

        if config.eval_interval > 0 && (step % config.eval_interval == 0 || step == config.num_rounds) {
            let (report, accuracy) = evaluate(
                &model,
                task,
                config.interval_eval_batches.max(1),
                config.eval_batch_size,
                config.n_bins,
                &mut interval_rng,
            )?;
            history.push(IntervalStats {
                step,
                train_loss: interval_loss / interval_steps as f64,
                accuracy,
                ece: report.ece,
            });
            log::debug!("{} step {step}: loss {:.4} acc {:.3} ece {:.4}", scheme.label(), interval_loss / interval_steps as f64, accuracy, report.ece);
            interval_loss = 0.0;
            interval_steps = 0;
        }
    }

    let mut eval_rng = Rng::with_stream(config.eval_seed, EVAL_STREAM);
    let (report, accuracy) = evaluate(
        &model,
        task,
        config.eval_batches.max(1),
        config.eval_batch_size,
        config.n_bins,
        &mut eval_rng,
    )?;
    Ok(TrainOutcome {
        model,
        report,
        accuracy,
        history,
    })
}
