use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::CONFIG_ENV;

#[derive(Debug, Parser)]
#[command(name = "scanflow", version, about = "Flow-level port and net scan detection")]
pub struct Cli {
    /// TOML run configuration; built-in defaults when absent.
    #[arg(long, global = true, env = CONFIG_ENV, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Abort on the first malformed input line or ground-truth entry.
    #[arg(long, global = true)]
    pub strict: bool,

    /// Raise log verbosity on stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Flag dominant senders and receivers in a flow file.
    Detect(DetectArgs),
    /// Score detections against MAWILab-style ground truth.
    Evaluate(EvaluateArgs),
    /// Time the batch engine over a sweep of worker counts.
    Bench(BenchArgs),
    /// Generate a seeded synthetic trace with matching ground truth.
    Synth(SynthArgs),
    /// Group a packet-summary file into flow records.
    AggregatePackets(AggregateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Batch,
    Stream,
}

#[derive(Debug, Clone, Default, Args)]
pub struct DetectorOverrides {
    /// Ratio threshold, overriding `detector.threshold`.
    #[arg(long)]
    pub threshold: Option<f64>,

    /// Slice length in seconds, overriding `slice.seconds`.
    #[arg(long)]
    pub slice_seconds: Option<f64>,

    /// Worker threads, overriding `engine.workers`.
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    pub flow_file: PathBuf,

    #[arg(short, long, value_name = "PATH")]
    pub out: PathBuf,

    #[command(flatten)]
    pub overrides: DetectorOverrides,

    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CaseArg {
    #[value(name = "1")]
    Raw,
    #[value(name = "2")]
    Filtered,
    #[value(name = "3")]
    Rules,
    All,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Flow file of a single trace; use `--batch` for several.
    #[arg(required_unless_present = "batch")]
    pub flow_file: Option<PathBuf>,

    #[arg(long, required_unless_present = "batch", conflicts_with = "batch", value_name = "XML")]
    pub anomalous: Option<PathBuf>,

    #[arg(long, required_unless_present = "batch", conflicts_with = "batch", value_name = "XML")]
    pub notice: Option<PathBuf>,

    /// CSV listing `trace_id,flow_file,anomalous_xml,notice_xml` per line.
    #[arg(long, conflicts_with = "flow_file", value_name = "CSV")]
    pub batch: Option<PathBuf>,

    #[arg(long, value_enum, default_value = "all")]
    pub case: CaseArg,

    /// Comma-separated thresholds, overriding `detector.thresholds`.
    #[arg(long, value_delimiter = ',')]
    pub thresholds: Option<Vec<f64>>,

    #[arg(long)]
    pub slice_seconds: Option<f64>,

    #[arg(long)]
    pub workers: Option<usize>,

    #[arg(short, long, value_name = "PATH")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    pub flow_file: PathBuf,

    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u32).range(1..))]
    pub repetitions: u32,

    /// Comma-separated worker counts; defaults to `engine.workers`.
    #[arg(long, value_delimiter = ',')]
    pub workers_sweep: Option<Vec<usize>>,

    #[command(flatten)]
    pub overrides: DetectorOverrides,

    #[arg(short, long, value_name = "PATH")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    pub spec_file: PathBuf,

    /// Flow file to write; ground truth goes next to it.
    #[arg(short, long, value_name = "PATH")]
    pub out: PathBuf,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct AggregateArgs {
    pub packet_file: PathBuf,

    #[arg(short, long, value_name = "PATH")]
    pub out: PathBuf,

    #[arg(long, default_value_t = 60.0, value_name = "SECONDS")]
    pub idle_timeout: f64,
}
