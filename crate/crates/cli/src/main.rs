//! `eagle`: run the routing service, generate synthetic data, benchmark
//! routers, and audit a service's data directory.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::builder::TypedValueParser;
use clap::{Args, Parser, Subcommand};
use eagle_core::baselines::DEFAULT_KNN_K;
use eagle_core::harness::{RouterKind, DEFAULT_GRID_POINTS, DEFAULT_TRAIN_FRACTION};
use eagle_core::rating::DEFAULT_K_FACTOR;
use eagle_core::router::{DEFAULT_N_NEIGHBORS, DEFAULT_P_GLOBAL};

/// Raised for bad flag combinations that clap cannot check on its own.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Debug, Parser)]
#[command(name = "eagle", version, about = "ELO-based LLM router")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the HTTP routing service.
    Serve(ServeArgs),
    /// Write a synthetic dataset with planted cluster structure.
    GenSynth(GenSynthArgs),
    /// Sweep routers over a budget grid and report AUC.
    Bench(BenchArgs),
    /// Train on growing prefixes of the training split; report update time and AUC.
    Incremental(IncrementalArgs),
    /// Sweep the fusion weight P and the neighbour count N.
    Ablation(AblationArgs),
    /// Check that a data directory's ratings equal a replay of its log.
    ReplayVerify(ReplayVerifyArgs),
}

fn unit_interval(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("{v} is not in [0, 1]"))
    }
}

fn positive_f64(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(format!("{v} must be positive"))
    }
}

fn non_negative_f64(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v.is_finite() && v >= 0.0 {
        Ok(v)
    } else {
        Err(format!("{v} must be non-negative"))
    }
}

fn train_fraction(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v < 1.0 {
        Ok(v)
    } else {
        Err(format!("{v} is not in (0, 1)"))
    }
}

/// Router settings shared by the service and the experiments.
#[derive(Debug, Clone, Args)]
pub struct RouterArgs {
    /// Weight of the global table in the fused score.
    #[arg(long, default_value_t = DEFAULT_P_GLOBAL, value_parser = unit_interval)]
    pub p: f64,
    /// Neighbours replayed into the local table.
    #[arg(long, default_value_t = DEFAULT_N_NEIGHBORS, value_parser = clap::value_parser!(u32).range(1..).map(|v| v as usize))]
    pub n: usize,
    /// ELO K-factor.
    #[arg(long, default_value_t = DEFAULT_K_FACTOR, value_parser = positive_f64)]
    pub k: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = "EAGLE_DATA_DIR", default_value = "eagle-data")]
    pub data_dir: PathBuf,
    /// 0 picks a free port.
    #[arg(long, env = "EAGLE_PORT", default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[command(flatten)]
    pub router: RouterArgs,
    /// Embedding dimension accepted by the service.
    #[arg(long, default_value_t = eagle_service::DEFAULT_DIM, value_parser = clap::value_parser!(u32).range(1..).map(|v| v as usize))]
    pub dim: usize,
    /// Probability of proposing a second model for comparison.
    #[arg(long, default_value_t = 0.0, value_parser = unit_interval)]
    pub exploration_rate: f64,
    /// Text-embedding endpoint; enables `text` in requests.
    #[arg(long, env = "EAGLE_EMBED_URL")]
    pub embed_url: Option<String>,
    #[arg(long, default_value_t = eagle_service::DEFAULT_EMBED_TIMEOUT_MS)]
    pub embed_timeout_ms: u64,
}

#[derive(Debug, Args)]
pub struct GenSynthArgs {
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u32).range(2..).map(|v| v as usize))]
    pub models: usize,
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u32).range(1..).map(|v| v as usize))]
    pub clusters: usize,
    /// Queries per cluster.
    #[arg(long, default_value_t = 250, value_parser = clap::value_parser!(u32).range(1..).map(|v| v as usize))]
    pub queries: usize,
    #[arg(long, default_value_t = 32, value_parser = clap::value_parser!(u32).range(2..).map(|v| v as usize))]
    pub dim: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Standard deviation of the quality noise.
    #[arg(long, default_value_t = 0.05, value_parser = non_negative_f64)]
    pub noise: f64,
    /// Two models, two clusters, each model strong on one cluster only.
    #[arg(long)]
    pub opposing: bool,
    #[arg(long)]
    pub out: PathBuf,
}

/// Dataset loading and feedback simulation settings.
#[derive(Debug, Clone, Args)]
pub struct HarnessArgs {
    #[command(flatten)]
    pub router: RouterArgs,
    /// Neighbours averaged by the kNN baseline.
    #[arg(long, default_value_t = DEFAULT_KNN_K, value_parser = clap::value_parser!(u32).range(1..).map(|v| v as usize))]
    pub knn_k: usize,
    #[arg(long, default_value_t = DEFAULT_TRAIN_FRACTION, value_parser = train_fraction)]
    pub train_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
    /// Simulated pairwise comparisons per training query.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..).map(|v| v as usize))]
    pub pairs_per_query: usize,
    /// Quality gap below which a comparison counts as a draw.
    #[arg(long, default_value_t = 0.0, value_parser = non_negative_f64)]
    pub draw_margin: f64,
    #[arg(long, default_value_t = DEFAULT_GRID_POINTS, value_parser = clap::value_parser!(u32).range(2..).map(|v| v as usize))]
    pub grid_points: usize,
    /// Run sweeps on one thread.
    #[arg(long)]
    pub sequential: bool,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Directory holding dataset.jsonl and registry.json.
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "eagle,knn,random,oracle")]
    pub routers: Vec<RouterKind>,
    /// Explicit budgets, strictly increasing; default is an even grid from
    /// the cheapest to the most expensive model.
    #[arg(long, value_delimiter = ',')]
    pub budgets: Vec<f64>,
    /// Extra router from precomputed predictions, as NAME=PATH.
    #[arg(long = "predictions")]
    pub predictions: Vec<String>,
    #[command(flatten)]
    pub harness: HarnessArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct IncrementalArgs {
    /// Dataset directories; AUC and times are summed over them.
    #[arg(long, value_delimiter = ',', required = true)]
    pub dataset: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "0.7,0.85,1.0")]
    pub stages: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "eagle,knn,random,oracle")]
    pub routers: Vec<RouterKind>,
    /// Each timed section runs this many times; the median is reported.
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u32).range(1..).map(|v| v as usize))]
    pub repeats: usize,
    /// Skip AUC evaluation.
    #[arg(long)]
    pub timing_only: bool,
    #[command(flatten)]
    pub harness: HarnessArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AblationArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0,0.25,0.5,0.75,1", value_parser = unit_interval)]
    pub p_values: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "1,5,10,20,40", value_parser = clap::value_parser!(u32).range(1..).map(|v| v as usize))]
    pub n_values: Vec<usize>,
    #[command(flatten)]
    pub harness: HarnessArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReplayVerifyArgs {
    #[arg(long, env = "EAGLE_DATA_DIR")]
    pub data_dir: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Serve(a) => commands::serve(a),
        Command::GenSynth(a) => commands::gen_synth(a),
        Command::Bench(a) => commands::bench(a),
        Command::Incremental(a) => commands::incremental(a),
        Command::Ablation(a) => commands::ablation(a),
        Command::ReplayVerify(a) => commands::replay_verify(a),
    };
    match result {
        Ok(code) => code,
        Err(e) if e.is::<UsageError>() => {
            eprintln!("error: {e}");
            eprintln!("run `eagle --help` for usage");
            ExitCode::from(2)
        }
        Err(e) => {
            // Core errors already embed their cause in their message.
            let mut msg = e.to_string();
            for cause in e.chain().skip(1) {
                let c = cause.to_string();
                if !msg.ends_with(&c) {
                    msg = format!("{msg}: {c}");
                }
            }
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
