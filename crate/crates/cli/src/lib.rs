//! `plainusr` command-line tool.
//!
//! Exit codes: 0 success, 2 usage error, 3 file or format error,
//! 4 verification failure. Reports go to stdout as JSON, diagnostics to
//! stderr.

pub mod commands;
pub mod error;
pub mod imaging;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use plainusr::lia::LiaVariant;
use plainusr::metrics::ImageMode;
use plainusr::{Init, UnitKind, Variant};

pub use error::{CliError, EXIT_FILE, EXIT_USAGE, EXIT_VERIFY};

#[derive(Debug, Parser)]
#[command(
    name = "plainusr",
    version,
    about = "Build, fuse, verify, profile and run PlainUSR super-resolution models"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a randomly initialized training-form checkpoint.
    Build(BuildArgs),
    /// Collapse a training checkpoint into its deployable single-conv form.
    Fuse(FuseArgs),
    /// Upscale an 8-bit RGB PNG.
    Infer(InferArgs),
    /// Check that fusion and both backbone schedules preserve the output.
    Verify(VerifyArgs),
    /// Parameter, MAC and activation counts as JSON.
    Profile(ProfileArgs),
    /// Wall-clock latency as JSON.
    Bench(BenchArgs),
    /// PSNR and SSIM between two PNGs as JSON.
    Metrics(MetricsArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DTypeArg {
    F32,
    F64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InitArg {
    Training,
    Random,
}

impl From<InitArg> for Init {
    fn from(v: InitArg) -> Self {
        match v {
            InitArg::Training => Init::Training,
            InitArg::Random => Init::Random,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum UnitArg {
    Repmbconv,
    Conv,
}

impl From<UnitArg> for UnitKind {
    fn from(v: UnitArg) -> Self {
        match v {
            UnitArg::Repmbconv => UnitKind::Repmbconv,
            UnitArg::Conv => UnitKind::Conv,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Rgb,
    Y,
}

impl From<ModeArg> for ImageMode {
    fn from(v: ModeArg) -> Self {
        match v {
            ModeArg::Rgb => ImageMode::Rgb,
            ModeArg::Y => ImageMode::Y,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormArg {
    Training,
    Fused,
}

/// Architecture selection shared by `build`, `profile` and `bench`.
#[derive(Debug, Clone, Args)]
pub struct ArchArgs {
    /// Named size: U, T, S, M, B or L.
    #[arg(long, conflicts_with = "channels")]
    pub variant: Option<Variant>,
    /// Explicit stage widths, widest first, e.g. `64,48,32`.
    #[arg(long, value_delimiter = ',')]
    pub channels: Option<Vec<usize>>,
    #[arg(long, default_value_t = 4)]
    pub scale: usize,
    /// Attention variant, I through VI.
    #[arg(long, default_value = "VI")]
    pub attention: LiaVariant,
    #[arg(long, value_enum, default_value_t = UnitArg::Repmbconv)]
    pub unit: UnitArg,
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    #[command(flatten)]
    pub arch: ArchArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = DTypeArg::F32)]
    pub dtype: DTypeArg,
    /// `random` draws the reparameterization scales away from their
    /// training-start values, which exercises fusion harder.
    #[arg(long, value_enum, default_value_t = InitArg::Training)]
    pub init: InitArg,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    pub input: PathBuf,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(short, long)]
    pub model: PathBuf,
    #[arg(short, long)]
    pub input: PathBuf,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    pub checkpoint: PathBuf,
    /// Side of the random square probe image.
    #[arg(long, default_value_t = 32)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Maximum absolute error; defaults to 1e-4 for f32 and 1e-9 for f64.
    #[arg(long)]
    pub tolerance: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ProfileArgs {
    #[command(flatten)]
    pub arch: ArchArgs,
    /// Profile a checkpoint instead of a named architecture.
    #[arg(long, conflicts_with_all = ["variant", "channels"])]
    pub checkpoint: Option<PathBuf>,
    /// Square input side in pixels.
    #[arg(long, default_value_t = 256)]
    pub size: usize,
    /// Count the training form instead of the fused one.
    #[arg(long, value_enum, default_value_t = FormArg::Fused)]
    pub form: FormArg,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub arch: ArchArgs,
    #[arg(long, conflicts_with_all = ["variant", "channels"])]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 256)]
    pub size: usize,
    #[arg(long, default_value_t = 1)]
    pub warmup: usize,
    #[arg(long, default_value_t = 5)]
    pub iters: usize,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    #[arg(long, value_enum, default_value_t = FormArg::Fused)]
    pub form: FormArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    pub reference: PathBuf,
    pub test: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::Rgb)]
    pub mode: ModeArg,
    /// Pixels dropped from every edge before comparison.
    #[arg(long, default_value_t = 0)]
    pub crop_border: usize,
}

/// Parses `argv` (program name first), runs the command, writes the
/// report to `out` and diagnostics to `err`. Returns the exit code.
pub fn run_with<I, S>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 {
                write!(out, "{text}")
            } else {
                write!(err, "{text}")
            };
            return code;
        }
    };
    match commands::execute(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    run_with(argv, &mut std::io::stdout().lock(), &mut std::io::stderr().lock())
}
