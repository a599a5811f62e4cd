//! The `dam` command-line tool.
//!
//! Every command writes line-delimited JSON: a header line carrying the tool
//! version and the effective configuration (plus its digest), then records.
//! Output is buffered and only written once the command has succeeded.
//!
//! Exit codes: 0 success, 1 usage error, 2 bad input data, 3 internal error.

mod commands;
mod inputs;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::Error;
use crate::policy::Variant;

pub use inputs::{read_result, ResultFile};

#[derive(Debug, Parser)]
#[command(name = "dam", version, about = "Distractor-aware memory tracking toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Track one sequence and write per-frame results.
    Track(TrackArgs),
    /// Score result files against ground truth.
    Eval(EvalArgs),
    /// Run several variants over a set of sequences.
    Ablate(AblateArgs),
    /// Vary one threshold and report overlap per value.
    Sweep(SweepArgs),
    /// Track under a real-time budget.
    Rt(RtArgs),
    /// Classify frames and sequences by distractor presence.
    Distill(DistillArgs),
    /// Run a scenario and save every candidate set as a replay trace.
    Record(RecordArgs),
    /// Answer protocol requests on stdin/stdout from a trace.
    ServeTrace(ServeArgs),
}

/// Flags shared by every command that reads the run configuration.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output file; stdout when omitted.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct PolicyArgs {
    #[arg(long)]
    pub variant: Option<Variant>,
    #[arg(long)]
    pub delta: Option<u64>,
    #[arg(long)]
    pub theta_anc: Option<f64>,
    #[arg(long)]
    pub theta_iou: Option<f64>,
    #[arg(long)]
    pub theta_area: Option<f64>,
    #[arg(long)]
    pub theta_m: Option<usize>,
    #[arg(long)]
    pub n_dam: Option<usize>,
}

/// Where sequences come from.
#[derive(Debug, Clone, Default, Args)]
pub struct InputArgs {
    /// Replay trace (repeatable).
    #[arg(long)]
    pub trace: Vec<PathBuf>,
    /// `crossing`, `suite`, or a scenario JSON file (repeatable).
    #[arg(long)]
    pub scenario: Vec<String>,
    /// Seed of the generated crossing suite.
    #[arg(long, default_value_t = 0)]
    pub suite_seed: u64,
    #[arg(long, default_value_t = 20)]
    pub suite_size: usize,
    /// Comma-separated run lengths of the initialization mask, for traces
    /// without a header line.
    #[arg(long)]
    pub init_rle: Option<String>,
}

#[derive(Debug, Args)]
pub struct TrackArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub policy: PolicyArgs,
    #[command(flatten)]
    pub input: InputArgs,
    /// External predictor speaking the protocol; frames and the init mask
    /// still come from `--trace`.
    #[arg(long)]
    pub bridge: Option<String>,
    #[arg(long = "bridge-arg", allow_hyphen_values = true)]
    pub bridge_args: Vec<String>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Result file (repeatable).
    #[arg(long, required = true)]
    pub result: Vec<PathBuf>,
    /// Ground truth per result: a trace with ground truth, a result file, or
    /// `scenario:<crossing|file>`.
    #[arg(long, required = true)]
    pub gt: Vec<String>,
    /// Comma-separated subset of quality,accuracy,robustness,auc,ao,failed.
    #[arg(long, default_value = "quality,accuracy,robustness,auc,ao,failed")]
    pub metrics: String,
    /// Also emit accuracy/robustness rows for plotting.
    #[arg(long)]
    pub ar_table: bool,
    /// Success threshold on iou.
    #[arg(long)]
    pub success_iou: Option<f64>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub policy: PolicyArgs,
    #[command(flatten)]
    pub input: InputArgs,
    /// Comma-separated variants; all when omitted.
    #[arg(long)]
    pub variants: Option<String>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub policy: PolicyArgs,
    #[command(flatten)]
    pub input: InputArgs,
    /// theta_anc, theta_iou or theta_area.
    #[arg(long)]
    pub param: String,
    /// start:stop:step, inclusive of stop.
    #[arg(long)]
    pub range: String,
}

#[derive(Debug, Args)]
pub struct RtArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub policy: PolicyArgs,
    #[command(flatten)]
    pub input: InputArgs,
    /// Frame rate of the simulated stream; `inf` processes every frame.
    #[arg(long)]
    pub fps: Option<f64>,
    /// Constant per-frame latency.
    #[arg(long, conflicts_with_all = ["latency_file", "latency_normal"])]
    pub latency_ms: Option<f64>,
    /// One latency per tracked frame, one number per line.
    #[arg(long, conflicts_with = "latency_normal")]
    pub latency_file: Option<PathBuf>,
    /// `mean,std` of a seeded normal latency (clamped at 0).
    #[arg(long)]
    pub latency_normal: Option<String>,
}

#[derive(Debug, Args)]
pub struct DistillArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Line-delimited frame manifest.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub ratio_threshold: Option<f64>,
    #[arg(long)]
    pub frame_fraction: Option<f64>,
    /// Score by cosine distance instead of similarity.
    #[arg(long)]
    pub distance: bool,
}

#[derive(Debug, Args)]
pub struct RecordArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub policy: PolicyArgs,
    /// `crossing` or a scenario JSON file.
    #[arg(long)]
    pub scenario: String,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub trace: PathBuf,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Run(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Run(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Run(e) if e.is_data_error() => 2,
            CliError::Run(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            // Library messages already embed their sources.
            CliError::Run(e) => write!(f, "{e}"),
        }
    }
}

pub(crate) fn usage<T>(msg: impl Into<String>) -> Result<T, CliError> {
    Err(CliError::Usage(msg.into()))
}

#[derive(Serialize)]
struct Header<'a> {
    #[serde(rename = "type")]
    kind: &'static str,
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    config_digest: String,
    config: &'a RunConfig,
}

/// Buffered line-delimited output.
pub(crate) struct Output {
    buf: Vec<u8>,
}

impl Output {
    pub(crate) fn new(command: &str, cfg: &RunConfig) -> Self {
        let mut o = Output { buf: Vec::new() };
        o.record(&Header {
            kind: "header",
            tool: "dam",
            version: env!("CARGO_PKG_VERSION"),
            command,
            config_digest: cfg.digest(),
            config: cfg,
        });
        o
    }

    /// No tool header; used for traces, which carry their own header line.
    pub(crate) fn raw() -> Self {
        Output { buf: Vec::new() }
    }

    pub(crate) fn trace(&mut self, t: &crate::tracker::trace::Trace) -> Result<(), Error> {
        t.write(&mut self.buf)
    }

    pub(crate) fn record<T: Serialize + ?Sized>(&mut self, value: &T) {
        serde_json::to_writer(&mut self.buf, value).expect("records serialize");
        self.buf.push(b'\n');
    }

    fn finish(self, out: Option<&Path>) -> Result<(), Error> {
        match out {
            Some(p) => std::fs::write(p, &self.buf).map_err(|e| Error::from(e).in_file(p.display().to_string())),
            None => {
                let mut stdout = std::io::stdout().lock();
                stdout.write_all(&self.buf)?;
                stdout.flush()?;
                Ok(())
            }
        }
    }
}

/// Loads the config file (if any) and applies the shared overrides.
pub(crate) fn base_config(common: &CommonArgs) -> Result<RunConfig, CliError> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(w) = common.workers {
        cfg.workers = w;
    }
    if let Some(o) = &common.out {
        cfg.io.out = Some(o.clone());
    }
    Ok(cfg)
}

pub(crate) fn apply_policy_args(cfg: &mut RunConfig, p: &PolicyArgs) {
    let pc = &mut cfg.policy;
    if let Some(v) = p.variant {
        pc.variant = v;
    }
    if let Some(v) = p.delta {
        pc.delta = v;
    }
    if let Some(v) = p.theta_anc {
        pc.theta_anc = v;
    }
    if let Some(v) = p.theta_iou {
        pc.theta_iou = v;
    }
    if let Some(v) = p.theta_area {
        pc.theta_area = v;
    }
    if let Some(v) = p.theta_m {
        pc.theta_m = v;
    }
    if let Some(v) = p.n_dam {
        cfg.bank.n_dam = v;
    }
}

/// Runs a parsed command.
pub fn run(cli: Cli) -> Result<(), CliError> {
    let (output, out_path) = match cli.command {
        Command::Track(a) => commands::track(a)?,
        Command::Eval(a) => commands::eval(a)?,
        Command::Ablate(a) => commands::ablate(a)?,
        Command::Sweep(a) => commands::sweep(a)?,
        Command::Rt(a) => commands::rt(a)?,
        Command::Distill(a) => commands::distill(a)?,
        Command::Record(a) => commands::record(a)?,
        Command::ServeTrace(a) => return commands::serve_trace(a),
    };
    output.finish(out_path.as_deref())?;
    Ok(())
}

/// Entry point of the binary: parses `args`, runs, and maps the outcome to an
/// exit code.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("dam: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
