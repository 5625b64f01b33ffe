mod bench;
mod manifest;
mod run;
mod tools;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use stmamba::data::Dataset;
use stmamba::model::Ablation;
use stmamba::ErrorKind;

#[derive(Parser)]
#[command(name = "stmamba", version, about = "Spatial-temporal Mamba network for EEG motor imagery")]
struct Cli {
    /// Print reports as JSON on stdout.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write checkpoint, history, report and manifest.
    Train(TrainArgs),
    /// Evaluate a checkpoint on an archive.
    Eval(EvalArgs),
    /// Run the built-in gradient, scan, pooling and augmentation checks.
    Selftest(SelftestArgs),
    /// Time the selective scan over a sweep of sequence lengths.
    Bench(BenchArgs),
    /// Convert a CSV trial directory into an archive.
    Convert(ConvertArgs),
    /// Write a synthetic motor-imagery archive.
    Synth(SynthArgs),
    /// Summarize the reports of several run directories.
    Table(TableArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

#[derive(Args, Clone)]
pub struct SynthShape {
    /// Number of classes.
    #[arg(long, default_value_t = 4)]
    pub classes: usize,
    /// Number of electrodes.
    #[arg(long, default_value_t = 8)]
    pub channels: usize,
    /// Samples per trial.
    #[arg(long, default_value_t = 960)]
    pub samples: usize,
    /// Training-session trials per class.
    #[arg(long, default_value_t = 100)]
    pub trials_per_class: usize,
    /// Test-session trials per class.
    #[arg(long, default_value_t = 50)]
    pub test_per_class: usize,
    /// Signal-to-noise ratio of the class rhythm in dB.
    #[arg(long, default_value_t = 10.0, allow_hyphen_values = true)]
    pub snr: f64,
}

#[derive(Args)]
pub struct TrainArgs {
    /// Archive (.eta) or CSV directory. Synthetic data is generated when absent.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value = "synth", value_parser = parse_dataset)]
    pub dataset: Dataset,
    /// Subject label recorded in the report.
    #[arg(long)]
    pub subject: Option<String>,
    #[arg(long, default_value = "full", value_parser = parse_ablation)]
    pub ablation: Ablation,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Run directory; must not already hold a manifest.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Artificial trials per real trial and epoch (0 disables augmentation).
    #[arg(long)]
    pub augment: Option<usize>,
    #[arg(long, default_value_t = 0.2)]
    pub val_fraction: f64,
    #[arg(long, value_enum, default_value = "f32")]
    pub precision: Precision,
    #[command(flatten)]
    pub synth: SynthShape,
    /// Re-run exactly the configuration recorded in a manifest; all other
    /// run flags are ignored.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Archive (.eta) or CSV directory with the raw evaluation trials.
    #[arg(long)]
    pub data: PathBuf,
    /// Standardization statistics; defaults to standardization.json next to
    /// the checkpoint.
    #[arg(long)]
    pub stats: Option<PathBuf>,
}

#[derive(Args)]
pub struct SelftestArgs {
    #[arg(long, hide = true)]
    pub inject_fault: Option<String>,
    #[arg(long, hide = true, default_value_t = 1.5)]
    pub fault_factor: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ScanKind {
    Seq,
    Par,
    Kernel,
}

#[derive(Args)]
pub struct BenchArgs {
    #[arg(long, value_enum, default_value = "seq")]
    pub scan: ScanKind,
    /// Sequence lengths.
    #[arg(long = "L", value_delimiter = ',', default_values_t = [256, 512, 1024, 2048])]
    pub lengths: Vec<usize>,
    /// Channel counts.
    #[arg(long = "d", value_delimiter = ',', default_values_t = [16])]
    pub widths: Vec<usize>,
    #[arg(long, default_value_t = 16)]
    pub state: usize,
    #[arg(long, default_value_t = 21)]
    pub repeats: usize,
    /// Use time-invariant parameters (required by the kernel form).
    #[arg(long)]
    pub lti: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args)]
pub struct ConvertArgs {
    #[arg(long, value_parser = ["csv"])]
    pub from: String,
    #[arg(long, value_parser = ["eta"])]
    pub to: String,
    /// CSV directory containing manifest.csv.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub shape: SynthShape,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Args)]
pub struct TableArgs {
    /// Run directories containing report.json.
    #[arg(required = true)]
    pub runs: Vec<PathBuf>,
}

fn parse_dataset(s: &str) -> Result<Dataset, String> {
    s.parse().map_err(|e: stmamba::Error| e.to_string())
}

fn parse_ablation(s: &str) -> Result<Ablation, String> {
    s.parse().map_err(|e: stmamba::Error| e.to_string())
}

/// A failure with the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn user(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }

    pub fn check(message: impl Into<String>) -> Self {
        Self { code: 1, message: message.into() }
    }
}

impl From<stmamba::Error> for Failure {
    fn from(e: stmamba::Error) -> Self {
        let code = match e.kind() {
            ErrorKind::User => 2,
            ErrorKind::Data => 3,
            ErrorKind::Numerical => 4,
        };
        Self { code, message: e.to_string() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        stmamba::Error::from(e).into()
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        stmamba::Error::from(e).into()
    }
}

pub type Outcome = Result<(), Failure>;

/// Prints `value` as JSON when requested, otherwise runs `human`.
pub fn emit<T: serde::Serialize>(json: bool, value: &T, human: impl FnOnce()) -> Outcome {
    if json {
        println!("{}", serde_json::to_string_pretty(value)?);
    } else {
        human();
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => run::train(a, cli.json),
        Command::Eval(a) => run::eval(a, cli.json),
        Command::Selftest(a) => tools::selftest(a, cli.json),
        Command::Bench(a) => bench::bench(a, cli.json),
        Command::Convert(a) => tools::convert(a, cli.json),
        Command::Synth(a) => tools::synth(a, cli.json),
        Command::Table(a) => tools::table(a, cli.json),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
