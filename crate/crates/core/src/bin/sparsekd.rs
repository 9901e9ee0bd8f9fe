use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sparse_kd::experiments::{
    self, GradSimConfig, ToyConfig, TrainToyConfig, UniqueCurveConfig, ZipfTargetsConfig,
};
use sparse_kd::logit_cache::CacheScheme;
use sparse_kd::toytrain::TrainScheme;
use sparse_kd::{Error, Result};

#[derive(Parser)]
#[command(name = "sparsekd", version, about = "Sparse knowledge-distillation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ground truth, Top-K, naive-fix and random-sampling targets on a Zipf teacher (CSV).
    ZipfTargets {
        #[arg(long, default_value_t = 100_000)]
        vocab_size: usize,
        #[arg(long, default_value_t = 20)]
        k: usize,
        /// Draws per sampled target.
        #[arg(long, default_value_t = 22)]
        samples: usize,
        /// Sampled targets averaged.
        #[arg(long, default_value_t = 1000)]
        rounds: usize,
        #[arg(long, default_value_t = 12345)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Trains one student on the toy task and reports calibration (JSON).
    TrainToy {
        #[arg(long)]
        scheme: String,
        #[command(flatten)]
        toy: ToyArgs,
        #[arg(long, default_value_t = 7)]
        k: usize,
        #[arg(long, default_value_t = 50)]
        rounds: usize,
        #[arg(long, default_value_t = 1.0)]
        temperature: f64,
        /// Mass threshold for `--scheme top-p` (capped at `--k` tokens).
        #[arg(long, default_value_t = 0.9)]
        top_p: f64,
        #[arg(long, default_value_t = 1)]
        repeats: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Angle and norm ratio of sparse-target gradients against FullKD (CSV).
    GradSim {
        #[command(flatten)]
        toy: ToyArgs,
        #[arg(long, default_value_t = 12)]
        k: usize,
        /// Sampling rounds; matched to K distinct tokens when omitted.
        #[arg(long)]
        rounds: Option<usize>,
        #[arg(long, default_value_t = 1.0)]
        temperature: f64,
        #[arg(long, default_value_t = 10)]
        repeats: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Distinct tokens drawn versus sampling rounds, with a log-log fit (JSON).
    UniqueCurve {
        #[arg(long, default_value_t = 100_000)]
        vocab_size: usize,
        /// Comma-separated round counts.
        #[arg(long, value_delimiter = ',', default_values_t = [5, 10, 20, 50, 100, 200])]
        rounds: Vec<usize>,
        #[arg(long, default_value_t = 200)]
        repeats: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Packs a JSONL file of sparse targets into a binary cache.
    CachePack {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// topk-linear, topk-ratio or rs-counts; inferred from the first target when omitted.
        #[arg(long)]
        scheme: Option<String>,
        /// Header parameter K for the Top-K schemes.
        #[arg(long)]
        k: Option<u32>,
        /// Sampling rounds N for count encoding.
        #[arg(long)]
        rounds: Option<u32>,
        #[arg(long)]
        vocab_size: Option<usize>,
    },
    /// Decodes a binary cache to JSONL.
    CacheUnpack {
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Reliability bins and ECE for a JSON array of predictions.
    Ece {
        input: PathBuf,
        #[arg(long, default_value_t = 10)]
        bins: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct ToyArgs {
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    hidden_teacher: Option<usize>,
    #[arg(long)]
    hidden_student: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    train_rounds: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    bins: Option<usize>,
    /// Large 1024-class, 20000-round configuration.
    #[arg(long)]
    paper_scale: bool,
}

impl ToyArgs {
    fn resolve(&self, base: ToyConfig) -> ToyConfig {
        let mut cfg = if self.paper_scale { ToyConfig::full_scale() } else { base };
        let t = &mut cfg.train;
        cfg.classes = self.classes.unwrap_or(cfg.classes);
        cfg.dim = self.dim.unwrap_or(cfg.dim);
        t.hidden_teacher = self.hidden_teacher.unwrap_or(t.hidden_teacher);
        t.hidden_student = self.hidden_student.unwrap_or(t.hidden_student);
        t.lr = self.lr.unwrap_or(t.lr);
        t.num_rounds = self.train_rounds.unwrap_or(t.num_rounds);
        t.batch_size = self.batch_size.unwrap_or(t.batch_size);
        t.n_bins = self.bins.unwrap_or(t.n_bins);
        cfg
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::ZipfTargets { vocab_size, k, samples, rounds, seed, out } => {
            let cfg = ZipfTargetsConfig {
                vocab_size,
                k,
                n_samples: samples,
                n_rounds: rounds,
                seed,
            };
            experiments::emit(&experiments::cmd_zipf_targets(&cfg)?, out.as_deref())
        }
        Command::TrainToy { scheme, toy, k, rounds, temperature, top_p, repeats, seed, out } => {
            let cfg = TrainToyConfig {
                scheme: TrainScheme::parse(&scheme, k, rounds, temperature, top_p)?,
                toy: toy.resolve(ToyConfig::desk()),
                repeats,
            };
            experiments::emit(&experiments::cmd_train_toy(&cfg, seed)?, out.as_deref())
        }
        Command::GradSim { toy, k, rounds, temperature, repeats, seed, out } => {
            let base = GradSimConfig::desk();
            let cfg = GradSimConfig {
                toy: toy.resolve(base.toy),
                k,
                target_unique: k as f64,
                rounds,
                temperature,
                repeats,
                ..base
            };
            experiments::emit(&experiments::cmd_grad_sim(&cfg, seed)?, out.as_deref())
        }
        Command::UniqueCurve { vocab_size, rounds, repeats, seed, out } => {
            let cfg = UniqueCurveConfig {
                vocab_size,
                rounds,
                repeats,
                seed,
            };
            experiments::emit(&experiments::cmd_unique_curve(&cfg)?, out.as_deref())
        }
        Command::CachePack { input, out, scheme, k, rounds, vocab_size } => {
            let scheme = scheme.as_deref().map(CacheScheme::parse).transpose()?;
            let summary = experiments::cmd_cache_pack(&input, &out, scheme, rounds.or(k), vocab_size)?;
            eprintln!("{}", serde_json::to_string(&summary)?);
            Ok(())
        }
        Command::CacheUnpack { input, out } => {
            let (_, jsonl) = experiments::cmd_cache_unpack(&input)?;
            experiments::emit(&jsonl, out.as_deref())
        }
        Command::Ece { input, bins, out } => {
            experiments::emit(&experiments::cmd_ece(&input, bins)?, out.as_deref())
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidArgument(_) => 2,
        Error::CorruptFile { .. } | Error::UnsupportedVersion(_) | Error::Io(_) | Error::Json(_) => 3,
        Error::Singularity(_) | Error::Divergence { .. } | Error::UndefinedAngle(_) => 4,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
