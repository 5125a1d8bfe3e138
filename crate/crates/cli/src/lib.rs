//! The `evoarena` command line.
//!
//! Exit codes:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 1 | any other failure (I/O, simulation) |
//! | 2 | invalid arguments |
//! | 3 | verification failed (log replay mismatch, or results rejected by the server) |
//! | 4 | protocol failure talking to the server |

mod evolve;
mod serve;
mod verify;
mod worker;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use evoarena_core::evolution::{EvolutionParams, ParamsPatch};
use evoarena_core::AnimatKind;

pub use evolve::{evolve, EvolveOutput};

pub const EXIT_OK: u8 = 0;
pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_INVALID_ARGS: u8 = 2;
pub const EXIT_VERIFICATION: u8 = 3;
pub const EXIT_PROTOCOL: u8 = 4;

/// Evolve walking animats, locally or across workers, and verify their logs.
///
/// Every flag can also be set through an `EVOARENA_`-prefixed environment
/// variable; flags take precedence.
#[derive(Debug, Parser)]
#[command(name = "evoarena", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a 1+1 evolution locally and write its history, best genome and best log.
    Evolve(EvolveArgs),
    /// Evaluate tasks from a session server until the session closes.
    Worker(WorkerArgs),
    /// Replay a .simlog and compare every frame.
    Verify(VerifyArgs),
    /// Run the session server.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Quadruped,
    Octopod,
    SimsCrawler,
}

impl From<KindArg> for AnimatKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Quadruped => AnimatKind::Quadruped,
            KindArg::Octopod => AnimatKind::Octopod,
            KindArg::SimsCrawler => AnimatKind::SimsCrawler,
        }
    }
}

/// Evolution parameters; unset values keep their defaults.
#[derive(Debug, Clone, Args)]
pub struct ParamArgs {
    /// Mutation standard deviation as a fraction of each gene's range [default: 0.1]
    #[arg(long, alias = "mutation_sigma_scale", env = "EVOARENA_MUTATION_SIGMA_SCALE")]
    pub mutation_sigma_scale: Option<f64>,
    /// Probability that a gene is mutated [default: 0.3]
    #[arg(long, alias = "per_gene_mutation_prob", env = "EVOARENA_PER_GENE_MUTATION_PROB")]
    pub per_gene_mutation_prob: Option<f64>,
    /// Fitness window in seconds [default: 10]
    #[arg(long, alias = "eval_duration", env = "EVOARENA_EVAL_DURATION")]
    pub eval_duration: Option<f64>,
    /// Settling time before the fitness window, seconds [default: 1]
    #[arg(long, alias = "settle_duration", env = "EVOARENA_SETTLE_DURATION")]
    pub settle_duration: Option<f64>,
}

impl ParamArgs {
    pub fn patch(&self) -> ParamsPatch {
        ParamsPatch {
            mutation_sigma_scale: self.mutation_sigma_scale,
            per_gene_mutation_prob: self.per_gene_mutation_prob,
            eval_duration: self.eval_duration,
            settle_duration: self.settle_duration,
        }
    }

    pub fn resolve(&self) -> Result<EvolutionParams, String> {
        EvolutionParams::default().patched(&self.patch()).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, Args)]
pub struct EvolveArgs {
    #[arg(long, value_enum, env = "EVOARENA_KIND")]
    pub kind: KindArg,
    #[arg(long, default_value_t = 1, env = "EVOARENA_SEED")]
    pub seed: u64,
    /// Number of evaluations, including the initial random parent
    #[arg(long, default_value_t = 200, env = "EVOARENA_N_EVALS")]
    pub n_evals: usize,
    #[command(flatten)]
    pub params: ParamArgs,
    /// Directory for history.jsonl, best_genome.json and best.simlog
    #[arg(long, default_value = "evoarena-out", env = "EVOARENA_OUT_DIR")]
    pub out_dir: PathBuf,
    /// Also stream each record as a JSON line to this path ("-" for stdout)
    #[arg(long, env = "EVOARENA_RECORDS_OUT")]
    pub records_out: Option<PathBuf>,
    /// Suppress the per-evaluation progress lines
    #[arg(long, short)]
    pub quiet: bool,
}

#[derive(Debug, Clone, Args)]
pub struct WorkerArgs {
    /// Base URL of the session server
    #[arg(long, default_value = "http://127.0.0.1:8080", env = "EVOARENA_SERVER")]
    pub server: String,
    #[arg(long, env = "EVOARENA_SESSION")]
    pub session: String,
    /// Identifies this worker to the server [default: worker-<pid>]
    #[arg(long, env = "EVOARENA_WORKER_ID")]
    pub worker_id: Option<String>,
    /// Stop after submitting this many results
    #[arg(long, env = "EVOARENA_MAX_TASKS")]
    pub max_tasks: Option<usize>,
    /// Exit after this many consecutive verification rejections
    #[arg(long, default_value_t = 3, env = "EVOARENA_MAX_REJECTIONS")]
    pub max_rejections: usize,
}

#[derive(Debug, Clone, Args)]
pub struct VerifyArgs {
    pub log: PathBuf,
    /// Largest acceptable position error in meters; use 1e-6 for logs from another build
    #[arg(long, default_value_t = evoarena_core::simlog::replay::SAME_BUILD_TOLERANCE, env = "EVOARENA_TOLERANCE")]
    pub tolerance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DigestCheckArg {
    Exact,
    FitnessOnly,
}

#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080", env = "EVOARENA_BIND")]
    pub bind: String,
    #[arg(long, default_value = "evoarena-data", env = "EVOARENA_DATA_DIR")]
    pub data_dir: PathBuf,
    /// Serve the web client from this directory
    #[arg(long, env = "EVOARENA_STATIC_DIR")]
    pub static_dir: Option<PathBuf>,
    /// Seconds a worker may hold a task before it is issued again
    #[arg(long, default_value_t = 60.0, env = "EVOARENA_LEASE_SECONDS")]
    pub lease_seconds: f64,
    /// Fraction of results re-simulated (every worker's first always is)
    #[arg(long, default_value_t = 0.1, env = "EVOARENA_VERIFY_FRACTION")]
    pub verify_fraction: f64,
    /// Compare log digests exactly, or only fitness (for mixed worker builds)
    #[arg(long, value_enum, default_value_t = DigestCheckArg::Exact, env = "EVOARENA_DIGEST_CHECK")]
    pub digest_check: DigestCheckArg,
    /// Concurrent verification simulations [default: number of CPUs]
    #[arg(long, env = "EVOARENA_VERIFY_WORKERS")]
    pub verify_workers: Option<usize>,
}

/// Logs to stderr; filtered by `EVOARENA_LOG` (default `info`).
pub fn init_logging() {
    let filter = tracing_subscriber::EnvFilter::try_from_env("EVOARENA_LOG")
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info"));
    let _ = tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).try_init();
}

/// Runs a parsed command and returns its exit code.
pub fn run(cli: Cli) -> u8 {
    match cli.command {
        Command::Evolve(args) => evolve::run(&args),
        Command::Worker(args) => worker::run(&args),
        Command::Verify(args) => verify::run(&args),
        Command::Serve(args) => serve::run(&args),
    }
}

fn runtime() -> std::io::Result<tokio::runtime::Runtime> {
    tokio::runtime::Builder::new_multi_thread().enable_all().build()
}
