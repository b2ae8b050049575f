use std::io::Write;
use std::path::Path;

use plainusr::bench::{self, BenchConfig};
use plainusr::init::ParamRng;
use plainusr::io::{self, AnyModel};
use plainusr::metrics::{self, ProfileReport};
use plainusr::{build_model_with, ops, Error, Form, Init, ModelConfig, PlainUsrModel, Scalar, Schedule, Tensor4};
use serde::Serialize;

use crate::error::{CliError, Result};
use crate::imaging;
use crate::{
    ArchArgs, BenchArgs, BuildArgs, Command, DTypeArg, FormArg, FuseArgs, InferArgs, MetricsArgs, ProfileArgs,
    VerifyArgs,
};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

macro_rules! with_model {
    ($any:expr, $m:ident => $body:expr) => {
        match $any {
            AnyModel::F32($m) => $body,
            AnyModel::F64($m) => $body,
        }
    };
}

pub fn execute(cmd: Command, out: &mut dyn Write) -> Result<()> {
    match cmd {
        Command::Build(a) => build(a),
        Command::Fuse(a) => fuse(a),
        Command::Infer(a) => infer(a),
        Command::Verify(a) => verify(a, out),
        Command::Profile(a) => profile(a, out),
        Command::Bench(a) => bench_cmd(a, out),
        Command::Metrics(a) => metrics_cmd(a, out),
    }
}

fn emit(out: &mut dyn Write, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("report serializes");
    writeln!(out, "{text}").map_err(|source| CliError::Io {
        path: "<stdout>".into(),
        source,
    })
}

fn load(path: &Path) -> Result<AnyModel> {
    io::load_any(path).map_err(|source| CliError::Checkpoint {
        path: path.into(),
        source,
    })
}

fn save<T: Scalar>(m: &PlainUsrModel<T>, path: &Path) -> Result<()> {
    io::save(m, path).map_err(|source| CliError::Checkpoint {
        path: path.into(),
        source,
    })
}

impl ArchArgs {
    pub fn config(&self) -> Result<ModelConfig> {
        let cfg = match (&self.variant, &self.channels) {
            (_, Some(ch)) => ModelConfig::new(ch.clone(), self.scale),
            (Some(v), None) => ModelConfig::preset(*v, self.scale),
            (None, None) => return Err(CliError::Usage("one of --variant or --channels is required".into())),
        }
        .with_attention(self.attention)
        .with_unit(self.unit.into());
        cfg.validate()?;
        Ok(cfg)
    }
}

fn build(a: BuildArgs) -> Result<()> {
    let cfg = a.arch.config()?;
    let init: Init = a.init.into();
    match a.dtype {
        DTypeArg::F32 => save(&build_model_with::<f32>(&cfg, a.seed, init)?, &a.output),
        DTypeArg::F64 => save(&build_model_with::<f64>(&cfg, a.seed, init)?, &a.output),
    }
}

fn fuse(a: FuseArgs) -> Result<()> {
    with_model!(load(&a.input)?, m => {
        if m.form == Form::Fused {
            return Err(CliError::Usage(format!("{} is already fused", a.input.display())));
        }
        save(&m.fuse()?, &a.output)
    })
}

fn infer(a: InferArgs) -> Result<()> {
    with_model!(load(&a.model)?, m => upscale_file(&m, &a.input, &a.output))
}

fn upscale_file<T: Scalar>(m: &PlainUsrModel<T>, input: &Path, output: &Path) -> Result<()> {
    let x: Tensor4<T> = imaging::read_png(input)?;
    let y = upscale(m, &x)?;
    imaging::write_png(output, &y)
}

/// Runs the model, reflect-padding inputs below the attention minimum and
/// cropping the result back to `scale × input`.
pub fn upscale<T: Scalar>(m: &PlainUsrModel<T>, x: &Tensor4<T>) -> Result<Tensor4<T>> {
    let s = x.shape();
    let padded = imaging::pad_to_min(x, m.config.min_input_side());
    let y = m.forward(&padded)?;
    Ok(imaging::crop(&y, s.h * m.config.scale, s.w * m.config.scale))
}

#[derive(Debug, Serialize)]
pub struct VerifyReport {
    pub schema_version: u32,
    pub dtype: String,
    pub tolerance: f64,
    pub probe: [usize; 2],
    pub units_checked: usize,
    pub block_max_error: f64,
    pub schedule_max_error: f64,
    pub end_to_end_max_error: f64,
    pub passed: bool,
}

fn verify(a: VerifyArgs, out: &mut dyn Write) -> Result<()> {
    let report = with_model!(load(&a.checkpoint)?, m => verify_model(&m, &a)?);
    emit(out, &report)?;
    if report.passed {
        Ok(())
    } else {
        Err(CliError::Verification(format!(
            "block {:.3e}, schedule {:.3e}, end-to-end {:.3e} against tolerance {:.1e}",
            report.block_max_error, report.schedule_max_error, report.end_to_end_max_error, report.tolerance
        )))
    }
}

pub fn verify_model<T: Scalar>(m: &PlainUsrModel<T>, a: &VerifyArgs) -> Result<VerifyReport> {
    if m.form != Form::Training {
        return Err(Error::WrongForm {
            op: "verify",
            required: Form::Training.name(),
            found: m.form.name(),
        }
        .into());
    }
    if a.size < m.config.min_input_side() {
        return Err(CliError::Usage(format!(
            "--size must be at least {} for this model",
            m.config.min_input_side()
        )));
    }
    let tolerance = a.tolerance.unwrap_or(match T::DTYPE {
        plainusr::DType::F32 => 1e-4,
        plainusr::DType::F64 => 1e-9,
    });
    let mut rng = ParamRng::new(a.seed);
    let (mut units, mut block_err) = (0, 0.0f64);
    for b in &m.blocks {
        for unit in [&b.conv1, &b.conv2] {
            let x: Tensor4<T> = rng.uniform_tensor([1, b.width, a.size, a.size], 0.0, 1.0);
            let fused = unit.fuse()?;
            let d = unit.forward(x.view())?.max_abs_diff(&ops::conv2d(&x, &fused)?)?;
            block_err = block_err.max(d);
            units += 1;
        }
    }
    let fused = m.fuse()?;
    let x: Tensor4<T> = rng.uniform_tensor([1, m.config.in_channels, a.size, a.size], 0.0, 1.0);
    let mut schedule_err = 0.0f64;
    for model in [m, &fused] {
        let split = model.forward_with_schedule(&x, Schedule::SplitConcat)?;
        let inplace = model.forward_with_schedule(&x, Schedule::ChannelIndex)?;
        schedule_err = schedule_err.max(split.max_abs_diff(&inplace)?);
    }
    let e2e = m.forward_train(&x)?.max_abs_diff(&fused.forward_fused(&x)?)?;
    Ok(VerifyReport {
        schema_version: REPORT_SCHEMA_VERSION,
        dtype: T::DTYPE.name().into(),
        tolerance,
        probe: [a.size, a.size],
        units_checked: units,
        block_max_error: block_err,
        schedule_max_error: schedule_err,
        end_to_end_max_error: e2e,
        passed: block_err <= tolerance && schedule_err == 0.0 && e2e <= tolerance,
    })
}

#[derive(Debug, Serialize)]
pub struct ProfileOutput {
    #[serde(flatten)]
    pub report: ProfileReport,
    /// False when the totals include attention overhead, whose counting
    /// convention is this implementation's own.
    pub normative: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

fn profile(a: ProfileArgs, out: &mut dyn Write) -> Result<()> {
    if a.size == 0 {
        return Err(CliError::Usage("--size must be positive".into()));
    }
    let (report, cfg) = match &a.checkpoint {
        Some(path) => with_model!(load(path)?, m => {
            let m = match (a.form, m.form) {
                (FormArg::Fused, Form::Training) => m.fuse()?,
                (FormArg::Training, Form::Fused) => {
                    return Err(CliError::Usage("a fused checkpoint has no training form to profile".into()))
                }
                _ => m,
            };
            (metrics::profile(&m, a.size, a.size), m.config.clone())
        }),
        None => {
            let cfg = a.arch.config()?;
            let form = match a.form {
                FormArg::Fused => Form::Fused,
                FormArg::Training => Form::Training,
            };
            let m = PlainUsrModel::<f32>::skeleton(&cfg, form)?;
            (metrics::profile(&m, a.size, a.size), cfg)
        }
    };
    let normative = !cfg.attention.variant.has_params();
    let note = (!normative).then(|| {
        "attention overhead counted as pooling plus two convolutions at reduced resolution; \
         published totals for attention-equipped models are reference points, not targets"
            .to_owned()
    });
    emit(
        out,
        &ProfileOutput {
            report,
            normative,
            note,
        },
    )
}

fn bench_cmd(a: BenchArgs, out: &mut dyn Write) -> Result<()> {
    if a.size == 0 || a.iters == 0 {
        return Err(CliError::Usage("--size and --iters must be positive".into()));
    }
    let cfg = BenchConfig {
        height: a.size,
        width: a.size,
        warmup: a.warmup,
        iters: a.iters,
        threads: a.threads.max(1),
    };
    let any = match &a.checkpoint {
        Some(path) => load(path)?,
        None => AnyModel::F32(build_model_with(&a.arch.config()?, a.seed, Init::Training)?),
    };
    let report = with_model!(any, m => {
        let m = match (a.form, m.form) {
            (FormArg::Fused, Form::Training) => m.fuse()?,
            (FormArg::Training, Form::Fused) => {
                return Err(CliError::Usage("a fused checkpoint has no training form to benchmark".into()))
            }
            _ => m,
        };
        bench::bench(&m, cfg)?
    });
    emit(out, &report)
}

#[derive(Debug, Serialize)]
pub struct MetricsReport {
    pub schema_version: u32,
    pub mode: metrics::ImageMode,
    pub crop_border: usize,
    pub psnr_db: f64,
    /// Absent when the compared region is smaller than the SSIM window.
    pub ssim: Option<f64>,
}

fn metrics_cmd(a: MetricsArgs, out: &mut dyn Write) -> Result<()> {
    let reference: Tensor4<f64> = imaging::read_png(&a.reference)?;
    let test: Tensor4<f64> = imaging::read_png(&a.test)?;
    if reference.shape() != test.shape() {
        return Err(CliError::Usage(format!(
            "image sizes differ: {} vs {}",
            reference.shape(),
            test.shape()
        )));
    }
    let s = reference.shape();
    let b = a.crop_border;
    if 2 * b >= s.h || 2 * b >= s.w {
        return Err(CliError::Usage(format!(
            "--crop-border {b} leaves nothing of a {}x{} image",
            s.h, s.w
        )));
    }
    let shave = |x: &Tensor4<f64>| {
        Tensor4::from_fn([s.n, s.c, s.h - 2 * b, s.w - 2 * b], |[n, c, y, xx]| {
            x.at(n, c, y + b, xx + b)
        })
    };
    let (r, t) = (shave(&reference), shave(&test));
    let mode = a.mode.into();
    let small = r.shape().h < metrics::SSIM_WINDOW || r.shape().w < metrics::SSIM_WINDOW;
    let report = MetricsReport {
        schema_version: REPORT_SCHEMA_VERSION,
        mode,
        crop_border: b,
        psnr_db: metrics::psnr(&r, &t, mode)?,
        ssim: if small {
            None
        } else {
            Some(metrics::ssim(&r, &t, mode)?)
        },
    };
    emit(out, &report)
}
