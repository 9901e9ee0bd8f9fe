//! Drivers behind the `sparsekd` subcommands.
//!
//! Each driver is deterministic given its seed and returns a [`RunRecord`]
//! (or CSV text whose first line is a `#` comment carrying the record), so
//! every output embeds the resolved configuration.

use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::calibration::{reliability, Prediction, ReliabilityReport};
use crate::distributions::{softmax, zipf, Categorical, ProbVector, Rng, RNG_ALGORITHM};
use crate::error::{invalid, Result};
use crate::logit_cache::{self, CacheHeader, CacheScheme};
use crate::sparsify::{self, power_law_fit, unique_token_curve, PowerLawFit, RandomSampler, Scheme, SparseTarget};
use crate::toytrain::{
    gradient_similarity, make_task, train, IntervalStats, MlpModel, SimilarityRow, SyntheticTask, TrainConfig,
    TrainScheme,
};

/// Stream ids used to derive a toy experiment's generators from its seed.
const TASK_STREAM: u64 = 100;
const TEACHER_STREAM: u64 = 101;
const STUDENT_STREAM: u64 = 102;
const PROBE_STREAM: u64 = 103;

#[derive(Debug, Clone, Serialize)]
pub struct RunRecord<C, R> {
    pub command: String,
    pub version: String,
    pub rng: String,
    pub seed: u64,
    pub config: C,
    pub result: R,
}

impl<C: Serialize, R: Serialize> RunRecord<C, R> {
    pub fn new(command: &str, seed: u64, config: C, result: R) -> Self {
        Self {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            rng: RNG_ALGORITHM.into(),
            seed,
            config,
            result,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// A run record without its result, as a one-line CSV comment.
fn csv_comment<C: Serialize>(command: &str, seed: u64, config: &C) -> Result<String> {
    let head = RunRecord::new(command, seed, config, ());
    Ok(format!("# {}\n", serde_json::to_string(&head)?))
}

/// Writes `text` to `out`, or to stdout when `out` is `None`.
pub fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            stdout.flush()?;
        }
    }
    Ok(())
}

/// Reads CSV produced by the drivers, skipping `#` comment lines.
pub fn read_csv_rows(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .filter(|l| !l.starts_with('#') && !l.is_empty())
        .skip(1)
        .map(|l| l.split(',').map(str::to_owned).collect())
        .collect()
}

// ---------------------------------------------------------------- zipf-targets

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZipfTargetsConfig {
    pub vocab_size: usize,
    pub k: usize,
    /// Categorical draws per random-sampling target.
    pub n_samples: usize,
    /// Independent random-sampling targets averaged.
    pub n_rounds: usize,
    pub seed: u64,
}

impl Default for ZipfTargetsConfig {
    fn default() -> Self {
        Self {
            vocab_size: 100_000,
            k: 20,
            n_samples: 22,
            n_rounds: 1000,
            seed: 12345,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZipfTargets {
    pub ground_truth: Vec<f64>,
    pub topk_normalized: Vec<f64>,
    /// Naive fix averaged over a ground-truth label drawn from the teacher,
    /// i.e. the raw Top-K values plus `t_i` times the dropped mass.
    pub naive_fix: Vec<f64>,
    pub random_sampling_mean: Vec<f64>,
    /// Mean distinct tokens per random-sampling target.
    pub mean_unique: f64,
}

impl ZipfTargets {
    /// Standard error of `random_sampling_mean[i]` under exact multinomial sampling.
    pub fn random_sampling_se(&self, cfg: &ZipfTargetsConfig, i: usize) -> f64 {
        let t = self.ground_truth[i];
        (t * (1.0 - t) / (cfg.n_samples * cfg.n_rounds) as f64).sqrt()
    }
}

pub fn zipf_targets(cfg: &ZipfTargetsConfig) -> Result<ZipfTargets> {
    if cfg.k == 0 || cfg.k > cfg.vocab_size {
        return Err(invalid(format!("k must be in 1..={}", cfg.vocab_size)));
    }
    if cfg.n_samples == 0 || cfg.n_rounds == 0 {
        return Err(invalid("n_samples and n_rounds must be >= 1"));
    }
    let t = zipf(cfg.vocab_size)?;
    let v = cfg.vocab_size;
    let topk = sparsify::top_k(&t, cfg.k, true)?.to_dense();
    let raw = sparsify::top_k(&t, cfg.k, false)?;
    let residual = 1.0 - raw.weight_sum();
    let raw = raw.to_dense();
    let naive_fix: Vec<f64> = (0..v).map(|i| raw[i] + residual * t.get(i)).collect();

    let sampler = RandomSampler::new(&t, cfg.n_samples, 1.0)?;
    let mut rng = Rng::new(cfg.seed);
    let mut acc = vec![0.0; v];
    let mut unique = 0usize;
    for _ in 0..cfg.n_rounds {
        let s = sampler.sample(&mut rng);
        unique += s.len();
        s.accumulate_into(&mut acc);
    }
    let random_sampling_mean = acc.iter().map(|a| a / cfg.n_rounds as f64).collect();
    Ok(ZipfTargets {
        ground_truth: t.into_inner(),
        topk_normalized: topk,
        naive_fix,
        random_sampling_mean,
        mean_unique: unique as f64 / cfg.n_rounds as f64,
    })
}

pub fn cmd_zipf_targets(cfg: &ZipfTargetsConfig) -> Result<String> {
    let z = zipf_targets(cfg)?;
    let mut out = csv_comment("zipf-targets", cfg.seed, cfg)?;
    out.push_str("token_index,ground_truth,topk_normalized,naive_fix,random_sampling_mean\n");
    for i in 0..cfg.vocab_size {
        writeln!(
            out,
            "{},{},{},{},{}",
            i + 1,
            z.ground_truth[i],
            z.topk_normalized[i],
            z.naive_fix[i],
            z.random_sampling_mean[i]
        )
        .expect("writing to a String");
    }
    log::info!("mean unique tokens per sampled target: {:.2}", z.mean_unique);
    Ok(out)
}

// ------------------------------------------------------------------- toy setup

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyConfig {
    pub classes: usize,
    pub dim: usize,
    pub base_sigma: f64,
    pub train: TrainConfig,
}

impl ToyConfig {
    /// 128 classes in 32 dimensions, trained with [`TrainConfig::desk`].
    pub fn desk() -> Self {
        Self {
            classes: 128,
            dim: 32,
            base_sigma: 1.5,
            train: TrainConfig::desk(),
        }
    }

    /// 1024 classes in 128 dimensions, trained with [`TrainConfig::full_scale`].
    pub fn full_scale() -> Self {
        Self {
            classes: 1024,
            dim: 128,
            base_sigma: 1.5,
            train: TrainConfig::full_scale(),
        }
    }
}

/// A task and a CE-trained teacher derived from one seed.
pub struct ToySetup {
    pub seed: u64,
    pub task: SyntheticTask,
    pub teacher: MlpModel,
    pub teacher_report: ReliabilityReport,
    pub teacher_accuracy: f64,
}

impl ToySetup {
    pub fn new(cfg: &ToyConfig, seed: u64) -> Result<Self> {
        let task = make_task(cfg.classes, cfg.dim, cfg.base_sigma, &mut Rng::with_stream(seed, TASK_STREAM))?;
        let out = train(
            TrainScheme::TeacherCe,
            &task,
            &cfg.train,
            None,
            &mut Rng::with_stream(seed, TEACHER_STREAM),
        )?;
        log::info!("seed {seed}: teacher accuracy {:.3}, ece {:.4}", out.accuracy, out.report.ece);
        Ok(Self {
            seed,
            task,
            teacher: out.model,
            teacher_report: out.report.with_seed(seed),
            teacher_accuracy: out.accuracy,
        })
    }

    /// Trains a student; every scheme starts from the same initial weights
    /// and sees the same batches.
    pub fn student(&self, cfg: &ToyConfig, scheme: TrainScheme) -> Result<StudentRun> {
        let teacher = scheme.needs_teacher().then_some(&self.teacher);
        let out = train(
            scheme,
            &self.task,
            &cfg.train,
            teacher,
            &mut Rng::with_stream(self.seed, STUDENT_STREAM),
        )?;
        log::info!(
            "seed {}: {} accuracy {:.3}, ece {:.4}",
            self.seed,
            scheme.label(),
            out.accuracy,
            out.report.ece
        );
        Ok(StudentRun {
            scheme,
            label: scheme.label(),
            accuracy: out.accuracy,
            ece_percent: out.report.ece * 100.0,
            report: out.report.with_seed(self.seed),
            history: out.history,
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StudentRun {
    pub scheme: TrainScheme,
    pub label: String,
    pub accuracy: f64,
    pub ece_percent: f64,
    pub report: ReliabilityReport,
    pub history: Vec<IntervalStats>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainToyResult {
    pub seed: u64,
    pub teacher_accuracy: Option<f64>,
    pub teacher_ece_percent: Option<f64>,
    pub student: StudentRun,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct TrainToyConfig {
    pub scheme: TrainScheme,
    pub toy: ToyConfig,
    pub repeats: usize,
}

/// One run per repeat, seeded `seed + index`.
pub fn train_toy(cfg: &TrainToyConfig, seed: u64) -> Result<Vec<TrainToyResult>> {
    (0..cfg.repeats.max(1) as u64)
        .map(|i| {
            let s = seed.wrapping_add(i);
            let (teacher_accuracy, teacher_ece_percent, student) = if cfg.scheme.needs_teacher() {
                let setup = ToySetup::new(&cfg.toy, s)?;
                let student = setup.student(&cfg.toy, cfg.scheme)?;
                (
                    Some(setup.teacher_accuracy),
                    Some(setup.teacher_report.ece * 100.0),
                    student,
                )
            } else {
                let task = make_task(
                    cfg.toy.classes,
                    cfg.toy.dim,
                    cfg.toy.base_sigma,
                    &mut Rng::with_stream(s, TASK_STREAM),
                )?;
                let out = train(cfg.scheme, &task, &cfg.toy.train, None, &mut Rng::with_stream(s, STUDENT_STREAM))?;
                let student = StudentRun {
                    scheme: cfg.scheme,
                    label: cfg.scheme.label(),
                    accuracy: out.accuracy,
                    ece_percent: out.report.ece * 100.0,
                    report: out.report.with_seed(s),
                    history: out.history,
                };
                (None, None, student)
            };
            Ok(TrainToyResult {
                seed: s,
                teacher_accuracy,
                teacher_ece_percent,
                student,
            })
        })
        .collect()
}

pub fn cmd_train_toy(cfg: &TrainToyConfig, seed: u64) -> Result<String> {
    RunRecord::new("train-toy", seed, cfg, train_toy(cfg, seed)?).to_json()
}

// -------------------------------------------------------------------- grad-sim

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradSimConfig {
    pub toy: ToyConfig,
    /// Top-K size compared against random sampling.
    pub k: usize,
    /// Mean distinct tokens the random-sampling budget is matched to.
    pub target_unique: f64,
    /// Explicit sampling rounds; overrides the unique-token match.
    pub rounds: Option<usize>,
    pub temperature: f64,
    /// FullKD steps taken by the student before gradients are compared.
    pub student_rounds: usize,
    pub batch_size: usize,
    /// Sampled targets averaged per random-sampling row.
    pub samples_per_seed: usize,
    pub repeats: usize,
}

impl GradSimConfig {
    pub fn desk() -> Self {
        let mut toy = ToyConfig::desk();
        toy.train.num_rounds = 400;
        toy.train.batch_size = 256;
        toy.train.eval_interval = 0;
        toy.train.eval_batches = 1;
        Self {
            toy,
            k: 12,
            target_unique: 12.0,
            rounds: None,
            temperature: 1.0,
            student_rounds: 100,
            batch_size: 4096,
            samples_per_seed: 4,
            repeats: 10,
        }
    }
}

/// Smallest round count whose mean distinct-token count over the rows of
/// `teacher` reaches `target_unique`.
pub fn matched_rounds(teacher: &[ProbVector], target_unique: f64, rng: &mut Rng) -> Result<usize> {
    const MAX_ROUNDS: usize = 1 << 16;
    if teacher.is_empty() {
        return Err(invalid("no teacher rows"));
    }
    let samplers: Vec<Categorical> = teacher.iter().map(Categorical::new).collect();
    let mean_unique = |n: usize, rng: &mut Rng| {
        samplers.iter().map(|s| s.sparse_counts(n, rng).len()).sum::<usize>() as f64 / samplers.len() as f64
    };
    let (mut lo, mut hi) = (1usize, 1usize);
    while mean_unique(hi, rng) < target_unique {
        if hi >= MAX_ROUNDS {
            return Err(invalid(format!("{target_unique} unique tokens not reached within {MAX_ROUNDS} rounds")));
        }
        lo = hi;
        hi = (hi * 2).min(MAX_ROUNDS);
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

#[derive(Debug, Clone, Serialize)]
pub struct GradSimSeed {
    pub seed: u64,
    pub rounds: usize,
    pub rows: Vec<SimilarityRow>,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradSimResult {
    pub per_seed: Vec<GradSimSeed>,
    /// Rows averaged over seeds, in scheme order.
    pub mean: Vec<(String, f64, f64)>,
}

/// One seed: teacher, a briefly FullKD-trained student, and a gradient
/// comparison on a fresh batch.
pub fn grad_sim_seed(cfg: &GradSimConfig, seed: u64) -> Result<GradSimSeed> {
    let setup = ToySetup::new(&cfg.toy, seed)?;
    let mut student_cfg = cfg.toy.train;
    student_cfg.num_rounds = cfg.student_rounds.max(1);
    let student = train(
        TrainScheme::FullKd,
        &setup.task,
        &student_cfg,
        Some(&setup.teacher),
        &mut Rng::with_stream(seed, STUDENT_STREAM),
    )?
    .model;
    let mut probe = Rng::with_stream(seed, PROBE_STREAM);
    let rounds = match cfg.rounds {
        Some(n) => n,
        None => {
            let (x, _) = setup.task.batch(cfg.batch_size.min(512), &mut probe)?;
            let logits = setup.teacher.forward(x.view())?;
            let rows = logits
                .rows()
                .into_iter()
                .map(|r| softmax(&r.to_vec()))
                .collect::<Result<Vec<_>>>()?;
            matched_rounds(&rows, cfg.target_unique, &mut probe)?
        }
    };
    let schemes = [
        TrainScheme::FullKd,
        TrainScheme::TopK { k: cfg.k },
        TrainScheme::RandomSampling {
            rounds,
            temperature: cfg.temperature,
        },
    ];
    let rows = gradient_similarity(
        &setup.teacher,
        &student,
        &setup.task,
        &schemes,
        cfg.batch_size,
        cfg.samples_per_seed,
        &mut probe,
    )?;
    Ok(GradSimSeed { seed, rounds, rows })
}

pub fn grad_sim(cfg: &GradSimConfig, seed: u64) -> Result<GradSimResult> {
    let per_seed = (0..cfg.repeats.max(1) as u64)
        .map(|i| grad_sim_seed(cfg, seed.wrapping_add(i)))
        .collect::<Result<Vec<_>>>()?;
    let n = per_seed.len() as f64;
    let mean = (0..per_seed[0].rows.len())
        .map(|j| {
            let label = match per_seed[0].rows[j].scheme {
                TrainScheme::RandomSampling { .. } => "rs-matched".to_string(),
                _ => per_seed[0].rows[j].label.clone(),
            };
            let angle = per_seed.iter().map(|s| s.rows[j].angle_degrees).sum::<f64>() / n;
            let ratio = per_seed.iter().map(|s| s.rows[j].norm_ratio).sum::<f64>() / n;
            (label, angle, ratio)
        })
        .collect();
    Ok(GradSimResult { per_seed, mean })
}

pub fn cmd_grad_sim(cfg: &GradSimConfig, seed: u64) -> Result<String> {
    let r = grad_sim(cfg, seed)?;
    let rounds: Vec<usize> = r.per_seed.iter().map(|s| s.rounds).collect();
    log::info!("random-sampling rounds per seed: {rounds:?}");
    let mut out = csv_comment("grad-sim", seed, cfg)?;
    out.push_str("scheme,angle_deg,norm_ratio\n");
    for (label, angle, ratio) in &r.mean {
        writeln!(out, "{label},{angle},{ratio}").expect("writing to a String");
    }
    Ok(out)
}

// ---------------------------------------------------------------- unique-curve

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniqueCurveConfig {
    pub vocab_size: usize,
    pub rounds: Vec<usize>,
    pub repeats: usize,
    pub seed: u64,
}

impl Default for UniqueCurveConfig {
    fn default() -> Self {
        Self {
            vocab_size: 100_000,
            rounds: vec![5, 10, 20, 50, 100, 200],
            repeats: 200,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UniqueCurve {
    pub points: Vec<(usize, f64)>,
    pub fit: PowerLawFit,
}

/// Mean distinct tokens per round count on a Zipf teacher, with a log-log fit.
pub fn unique_curve(cfg: &UniqueCurveConfig) -> Result<UniqueCurve> {
    let t = zipf(cfg.vocab_size)?;
    let points = unique_token_curve(&t, &cfg.rounds, cfg.repeats, &mut Rng::new(cfg.seed))?;
    let fit = power_law_fit(&points)?;
    Ok(UniqueCurve { points, fit })
}

pub fn cmd_unique_curve(cfg: &UniqueCurveConfig) -> Result<String> {
    RunRecord::new("unique-curve", cfg.seed, cfg, unique_curve(cfg)?).to_json()
}

// ----------------------------------------------------------------------- cache

/// One JSON-encoded [`SparseTarget`] per line.
pub fn read_targets_jsonl(path: impl AsRef<Path>) -> Result<Vec<SparseTarget>> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for line in file.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

pub fn targets_to_jsonl(targets: &[SparseTarget]) -> Result<String> {
    let mut out = String::new();
    for t in targets {
        out.push_str(&serde_json::to_string(t)?);
        out.push('\n');
    }
    Ok(out)
}

/// Scheme and parameter implied by the first target, when unambiguous.
pub fn infer_cache_scheme(targets: &[SparseTarget]) -> Option<(CacheScheme, u32)> {
    match targets.first()?.scheme() {
        Scheme::RandomSampling { rounds, temperature } if temperature == 1.0 => {
            Some((CacheScheme::RandomSamplingCounts, rounds as u32))
        }
        Scheme::TopK { k, .. } => Some((CacheScheme::TopKRatio, k as u32)),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct CachePackSummary {
    pub scheme_id: u8,
    pub param: u32,
    pub vocab_size: usize,
    pub positions: usize,
    pub bytes: usize,
}

/// Packs a JSONL target file into a cache file.
///
/// `scheme` and `param` default to what the first target implies, and
/// `vocab_size` to the first target's vocabulary.
pub fn cmd_cache_pack(
    input: &Path,
    output: &Path,
    scheme: Option<CacheScheme>,
    param: Option<u32>,
    vocab_size: Option<usize>,
) -> Result<CachePackSummary> {
    let targets = read_targets_jsonl(input)?;
    let inferred = infer_cache_scheme(&targets);
    let scheme = scheme
        .or(inferred.map(|s| s.0))
        .ok_or_else(|| invalid("cannot infer a cache scheme; pass --scheme"))?;
    let param = match param {
        Some(p) => p,
        None => match inferred {
            Some((s, p)) if s == scheme || scheme != CacheScheme::RandomSamplingCounts => p,
            _ => return Err(invalid("count encoding needs the sampling rounds; pass --rounds")),
        },
    };
    let vocab_size = vocab_size
        .or(targets.first().map(|t| t.vocab_size()))
        .ok_or_else(|| invalid("empty input; pass --vocab-size"))?;
    let bytes = logit_cache::encode(&targets, scheme, vocab_size, param)?;
    std::fs::write(output, &bytes)?;
    Ok(CachePackSummary {
        scheme_id: scheme.id(),
        param,
        vocab_size,
        positions: targets.len(),
        bytes: bytes.len(),
    })
}

/// Decodes a cache file back to JSONL text.
pub fn cmd_cache_unpack(input: &Path) -> Result<(CacheHeader, String)> {
    let (header, targets) = logit_cache::read_cache(input)?;
    Ok((header, targets_to_jsonl(&targets)?))
}

// ------------------------------------------------------------------------- ece

#[derive(Debug, Clone, Serialize)]
pub struct EceResult {
    pub ece_percent: f64,
    pub accuracy: f64,
    pub report: ReliabilityReport,
}

/// Reads a JSON array of `{"probs": [...], "label": n}` predictions.
pub fn read_predictions(path: impl AsRef<Path>) -> Result<Vec<Prediction>> {
    Ok(serde_json::from_slice(&std::fs::read(path)?)?)
}

pub fn ece_report(predictions: &[Prediction], n_bins: usize) -> Result<EceResult> {
    let report = reliability(predictions, n_bins)?;
    Ok(EceResult {
        ece_percent: report.ece * 100.0,
        accuracy: report.accuracy(),
        report,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct EceConfig {
    pub input: String,
    pub n_bins: usize,
}

pub fn cmd_ece(input: &Path, n_bins: usize) -> Result<String> {
    let result = ece_report(&read_predictions(input)?, n_bins)?;
    let cfg = EceConfig {
        input: input.display().to_string(),
        n_bins,
    };
    RunRecord::new("ece", 0, cfg, result).to_json()
}
