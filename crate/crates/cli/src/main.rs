mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::RunConfig;

/// Predictive tracking toolkit: corpus handling, predictor training and
/// evaluation, closed-loop simulation and a live session server.
#[derive(Debug, Parser)]
#[command(name = "jerktrack", version)]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Normalize a raw stroke corpus (JSON lines) into velocity sequences.
    Ingest(IngestArgs),
    /// Write a synthetic raw stroke corpus.
    Synth(SynthArgs),
    /// Train a predictor and write its model file and loss report.
    Train(TrainArgs),
    /// Score predictors on a corpus and print the summary table.
    Eval(EvalArgs),
    /// Run closed-loop tracking of one sequence in one or more modes.
    Simulate(SimulateArgs),
    /// Serve live tracking sessions over WebSocket.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub count: usize,
    #[arg(long, default_value_t = jerktrack::dataset::synth::CORPUS_NOISE)]
    pub noise: f64,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Write one polyline letter instead of a mixed corpus.
    #[arg(long)]
    pub letter: Option<char>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// lstm, dybm or dybm-esn.
    #[arg(long)]
    pub kind: Option<String>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// `LABEL=PATH` or `LABEL=builtin:KIND`; repeatable.
    #[arg(long = "model", value_name = "LABEL=SOURCE")]
    pub models: Vec<String>,
    /// Labels scored with online learning on (default: dybm-online, dybm-esn).
    #[arg(long = "online", value_name = "LABEL")]
    pub online: Vec<String>,
    /// Leave out the constant-velocity baseline row.
    #[arg(long)]
    pub no_baseline: bool,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Corpus holding the reference sequence; defaults to a synthetic letter.
    #[arg(long)]
    pub sequence: Option<PathBuf>,
    /// Sequence id within the corpus (default: the first).
    #[arg(long)]
    pub id: Option<String>,
    /// Synthetic letter used when no corpus is given (default K).
    #[arg(long)]
    pub letter: Option<char>,
    /// feedback-only, with-prediction, perfect-prediction, switching, or all.
    #[arg(long = "mode", value_delimiter = ',')]
    pub modes: Vec<String>,
    /// Model file for the prediction modes (default: constant velocity).
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Feedforward source while switching: predictor or perfect.
    #[arg(long)]
    pub switch_source: Option<String>,
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub tail_steps: Option<usize>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub addr: Option<String>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Keep online-learned parameters across session resets.
    #[arg(long)]
    pub retain_online: bool,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub queue_capacity: Option<usize>,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(jerktrack::Error),
    /// A failure tied to one file.
    At(PathBuf, jerktrack::Error),
}

impl From<jerktrack::Error> for CliError {
    fn from(e: jerktrack::Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(e) if e.is_numerical() => 3,
            CliError::Core(e) if e.is_data() => 2,
            CliError::Core(_) => 1,
            CliError::At(_, e) if e.is_numerical() => 3,
            CliError::At(..) => 2,
        }
    }
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(value) = std::env::var("JERKTRACK_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("JERKTRACK_THREADS must be a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(format!("cannot size the worker pool: {e}")))
}

fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    let cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    match cli.command {
        Command::Ingest(a) => commands::ingest(&a),
        Command::Synth(a) => commands::synth(&a, &cfg),
        Command::Train(a) => commands::train(&a, &cfg),
        Command::Eval(a) => commands::eval(&a, &cfg),
        Command::Simulate(a) => commands::simulate(&a, &cfg),
        Command::Serve(a) => commands::serve(&a, &cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match &e {
                CliError::Usage(m) => eprintln!("error: {m}"),
                CliError::Core(err) => eprintln!("error: {err}"),
                CliError::At(path, err) => eprintln!("error: {}: {err}", path.display()),
            }
            ExitCode::from(e.exit_code())
        }
    }
}
