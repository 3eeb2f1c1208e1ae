//! Argument definitions, subcommand wiring and the exit-code contract of
//! the `fbhdr` binary.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or format error,
//! 3 numerical failure.

mod commands;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand};

/// Environment variable that replaces the built-in default seed.
pub const SEED_ENV: &str = "FBHDR_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Success = 0,
    Usage = 1,
    Data = 2,
    Numerical = 3,
}

impl From<Exit> for ExitCode {
    fn from(e: Exit) -> Self {
        ExitCode::from(e as u8)
    }
}

/// A failed command: what to print and how to exit.
#[derive(Debug)]
pub struct Failure {
    pub exit: Exit,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Self { exit: Exit::Usage, message: message.into() }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self { exit: Exit::Data, message: message.into() }
    }

    pub fn numerical(message: impl Into<String>) -> Self {
        Self { exit: Exit::Numerical, message: message.into() }
    }
}

impl From<fbhdr::Error> for Failure {
    fn from(e: fbhdr::Error) -> Self {
        use fbhdr::Error::*;
        let exit = match &e {
            Config(_) => Exit::Usage,
            Training { .. } | NonFiniteGradient { .. } => Exit::Numerical,
            Shape { .. } | Contract(_) | Domain(_) | Format { .. } | Validation(_) | Io { .. } => {
                Exit::Data
            }
        };
        Self { exit, message: e.to_string() }
    }
}

#[derive(Debug, Parser)]
#[command(name = "fbhdr", version, about = "Single-image HDR reconstruction with a feedback network")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model; writes a checkpoint and an epoch loss log
    Train(TrainArgs),
    /// Reconstruct an HDR image from one LDR image
    Infer(InferArgs),
    /// Score a checkpoint on a directory of pairs and write a CSV report
    Eval(EvalArgs),
    /// Write the EV-2 / EV0 / EV+2 stack the network sees
    Bracket(BracketArgs),
    /// Tone-map an HDR image for display (global Reinhard)
    Tonemap(TonemapArgs),
    /// Convert between PFM and Radiance RGBE
    Convert(ConvertArgs),
    /// Compare analytic and finite-difference gradients of the training loss
    Gradcheck(GradcheckArgs),
    /// Run one ablation variant and write its manifest
    Ablate(AblateArgs),
    /// Write generated LDR/HDR pairs to a directory
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("source").required(true).args(["data", "synth"])))]
pub struct TrainArgs {
    /// Training configuration, one key=value per line
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
    /// Directory of <stem>.ppm / <stem>.hdr pairs; the seeded 80% split is used
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
    /// Train on N generated scenes instead of files
    #[arg(long, value_name = "N")]
    pub synth: Option<usize>,
    /// Checkpoint to write
    #[arg(long, value_name = "CKPT")]
    pub out: PathBuf,
    /// Loss log CSV (epoch,mean_loss,lr) [default: CKPT with extension .loss.csv]
    #[arg(long, value_name = "CSV")]
    pub log: Option<PathBuf>,
    /// Continue from this checkpoint; only `epochs` and `checkpoint_every` may differ from it
    #[arg(long, value_name = "CKPT")]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    /// Checkpoint written by `train`
    #[arg(long, value_name = "CKPT")]
    pub ckpt: PathBuf,
    /// Input LDR image (binary PPM)
    #[arg(long = "in", value_name = "LDR")]
    pub input: PathBuf,
    /// Output HDR image (.hdr or .pfm)
    #[arg(long, value_name = "HDR")]
    pub out: PathBuf,
    /// Also write every feedback iteration's output as iter<t>.hdr
    #[arg(long, value_name = "DIR")]
    pub trace_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint written by `train`; its seed selects the test split
    #[arg(long, value_name = "CKPT")]
    pub ckpt: PathBuf,
    /// Directory of <stem>.ppm / <stem>.hdr pairs
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    /// CSV report to write (path,psnr_db,ssim plus a mean row)
    #[arg(long, value_name = "CSV")]
    pub report: PathBuf,
    /// Score every pair instead of the checkpoint seed's 20% test split
    #[arg(long)]
    pub all: bool,
}

#[derive(Debug, Args)]
pub struct BracketArgs {
    /// Input LDR image (binary PPM)
    pub input: PathBuf,
    /// Output prefix; writes <PREFIX>m2.ppm, <PREFIX>0.ppm and <PREFIX>p2.ppm
    pub prefix: String,
    /// Camera response exponent
    #[arg(long, default_value_t = fbhdr::exposure::DEFAULT_GAMMA)]
    pub gamma: f64,
}

#[derive(Debug, Args)]
pub struct TonemapArgs {
    /// Input HDR image (.hdr or .pfm)
    pub input: PathBuf,
    /// Output LDR image (binary PPM)
    pub output: PathBuf,
    /// Key value a
    #[arg(long, default_value_t = 0.18)]
    pub key: f64,
    /// Scaled luminance mapped to white; omit for L/(1+L)
    #[arg(long)]
    pub white: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    /// Input HDR image (.hdr or .pfm)
    pub input: PathBuf,
    /// Output HDR image (.hdr or .pfm)
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Input extent as HxW
    #[arg(long, default_value = "8x8", value_name = "HxW")]
    pub size: String,
    /// Feature width C
    #[arg(long, default_value_t = 8)]
    pub channels: usize,
    /// Feedback iterations T
    #[arg(long, default_value_t = 2)]
    pub iters: usize,
    /// Dense-block growth rate g
    #[arg(long, default_value_t = 4)]
    pub growth: usize,
    /// Scale every convolution weight gradient by 1.01 (negative control)
    #[arg(long)]
    pub inject_fault: bool,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Base training configuration [default: built-in defaults]
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Drop the first-level EV0 skip connection
    #[arg(long)]
    pub no_skip1: bool,
    /// Drop the second-level EV0 skip connection
    #[arg(long)]
    pub no_skip2: bool,
    /// Set the L1 weight to zero
    #[arg(long)]
    pub no_l1: bool,
    /// Set the perceptual weight to zero
    #[arg(long)]
    pub no_lper: bool,
    /// Training steps to run on one generated scene
    #[arg(long, default_value_t = 1)]
    pub steps: usize,
    /// Manifest to write
    #[arg(long, value_name = "PATH")]
    pub manifest: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Number of pairs
    #[arg(long, value_name = "N")]
    pub count: usize,
    /// Side length of each square image
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    /// Output directory (created if missing)
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

/// Parses `args` (program name first), runs the command and maps the
/// outcome to an exit code. Errors go to stderr.
pub fn main_with<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { Exit::Usage } else { Exit::Success }.into();
        }
    };
    match run(cli.command) {
        Ok(()) => Exit::Success.into(),
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.exit.into()
        }
    }
}

pub fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Train(a) => commands::train(a),
        Command::Infer(a) => commands::infer(a),
        Command::Eval(a) => commands::eval(a),
        Command::Bracket(a) => commands::bracket(a),
        Command::Tonemap(a) => commands::tonemap(a),
        Command::Convert(a) => commands::convert(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::Ablate(a) => commands::ablate(a),
        Command::Synth(a) => commands::synth(a),
    }
}
