//! Wall-clock latency harness.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::backbone::PlainUsrModel;
use crate::error::{Error, Result};
use crate::init::ParamRng;
use crate::tensor::{Scalar, Tensor4};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub height: usize,
    pub width: usize,
    pub warmup: usize,
    pub iters: usize,
    /// Worker threads for the convolution kernels; 1 means single threaded.
    pub threads: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            height: 256,
            width: 256,
            warmup: 1,
            iters: 5,
            threads: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub os: String,
    pub arch: String,
    pub logical_cpus: usize,
    pub parallel_kernels: bool,
    pub dtype: String,
    pub crate_version: String,
}

impl Environment {
    pub fn capture<T: Scalar>() -> Self {
        Self {
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
            logical_cpus: std::thread::available_parallelism().map_or(1, |n| n.get()),
            parallel_kernels: cfg!(feature = "parallel"),
            dtype: T::DTYPE.name().into(),
            crate_version: env!("CARGO_PKG_VERSION").into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub form: String,
    pub config: BenchConfig,
    pub samples_ms: Vec<f64>,
    pub median_ms: f64,
    pub p95_ms: f64,
    pub environment: Environment,
}

/// Median (mean of the middle pair for even counts) and nearest-rank p95.
pub fn summarize(samples: &[f64]) -> Option<(f64, f64)> {
    if samples.is_empty() {
        return None;
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    let median = if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    };
    let rank = ((0.95 * n as f64).ceil() as usize).clamp(1, n);
    Some((median, s[rank - 1]))
}

/// Times `f` `iters` times after `warmup` untimed calls.
pub fn time_runs(warmup: usize, iters: usize, mut f: impl FnMut() -> Result<()>) -> Result<Vec<f64>> {
    for _ in 0..warmup {
        f()?;
    }
    (0..iters)
        .map(|_| {
            let t = Instant::now();
            f()?;
            Ok(t.elapsed().as_secs_f64() * 1e3)
        })
        .collect()
}

/// Benchmarks the form-appropriate forward pass on a fixed random image.
pub fn bench<T: Scalar>(m: &PlainUsrModel<T>, cfg: BenchConfig) -> Result<BenchReport> {
    if cfg.iters == 0 {
        return Err(Error::invalid("bench", "iters must be >= 1"));
    }
    let x: Tensor4<T> = ParamRng::new(0).uniform_tensor([1, m.config.in_channels, cfg.height, cfg.width], 0.0, 1.0);
    let run = || time_runs(cfg.warmup, cfg.iters, || m.forward(&x).map(drop));
    let samples = with_threads(cfg.threads, run)?;
    let (median_ms, p95_ms) = summarize(&samples).expect("iters >= 1");
    Ok(BenchReport {
        form: m.form.name().into(),
        config: cfg,
        samples_ms: samples,
        median_ms,
        p95_ms,
        environment: Environment::capture::<T>(),
    })
}

#[cfg(feature = "parallel")]
fn with_threads<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> R {
    match rayon::ThreadPoolBuilder::new().num_threads(threads.max(1)).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

#[cfg(not(feature = "parallel"))]
fn with_threads<R>(_threads: usize, f: impl FnOnce() -> R) -> R {
    f()
}
