//! Model profiling and image quality metrics.
//!
//! Counting conventions: a conv contributes `k_h·k_w·(c_in/groups)·c_out`
//! MACs per output pixel (bias adds excluded), its parameters include the
//! bias, and its output elements count as activations. Pooling,
//! activations, scaling, upsampling and pixel shuffle contribute nothing.

use serde::{Deserialize, Serialize};

use crate::backbone::{ConvUnit, PlainUsrModel};
use crate::error::{Error, Result};
use crate::ops::ConvParams;
use crate::tensor::{Scalar, Tensor4};

pub const PROFILE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerProfile {
    pub name: String,
    pub kind: String,
    pub params: u64,
    pub macs: u64,
    pub activations: u64,
    /// `[c, h, w]` of the layer output for one image.
    pub output: [usize; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileReport {
    pub schema_version: u32,
    pub form: String,
    pub input: [usize; 2],
    pub params: u64,
    pub macs: u64,
    pub activations: u64,
    /// Estimated peak of live full-resolution features in the channel-index
    /// schedule: the persistent buffer plus the largest block temporary.
    pub peak_feature_bytes: u64,
    pub layers: Vec<LayerProfile>,
}

struct Profiler {
    layers: Vec<LayerProfile>,
}

impl Profiler {
    fn conv<T: Scalar>(&mut self, name: String, c: &ConvParams<T>, h: usize, w: usize) -> (usize, usize) {
        let (oh, ow) = c.output_hw(h, w).unwrap_or((0, 0));
        let pixels = (oh * ow) as u64;
        self.layers.push(LayerProfile {
            name,
            kind: "conv".into(),
            params: c.param_count() as u64,
            macs: c.macs_per_pixel() as u64 * pixels,
            activations: c.c_out() as u64 * pixels,
            output: [c.c_out(), oh, ow],
        });
        (oh, ow)
    }

    fn free(&mut self, name: String, kind: &str, params: usize, output: [usize; 3]) {
        self.layers.push(LayerProfile {
            name,
            kind: kind.into(),
            params: params as u64,
            macs: 0,
            activations: 0,
            output,
        });
    }
}

/// Counts parameters, MACs and activations for one `h × w` input image.
pub fn profile<T: Scalar>(m: &PlainUsrModel<T>, h: usize, w: usize) -> ProfileReport {
    let mut p = Profiler { layers: Vec::new() };
    p.conv("head".into(), &m.head, h, w);
    let variant = m.config.attention.variant;
    let mut largest_temp = 0usize;
    for (i, b) in m.blocks.iter().enumerate() {
        for (slot, unit) in [("rep1", &b.conv1), ("rep2", &b.conv2)] {
            let prefix = format!("blocks.{i}.{slot}");
            match unit {
                ConvUnit::Conv(c) => {
                    p.conv(prefix, c, h, w);
                }
                ConvUnit::Rep(r) => {
                    p.conv(format!("{prefix}.k1"), &r.k1, h, w);
                    p.conv(format!("{prefix}.k2"), &r.k2_conv, h, w);
                    p.conv(format!("{prefix}.k3"), &r.k3, h, w);
                    let extra = r.s.len() + r.v.len() + r.se_w1.data().len() + r.se_w2.data().len();
                    p.free(format!("{prefix}.scale_se"), "scale", extra, [b.width, h, w]);
                }
            }
        }
        largest_temp = largest_temp.max(b.width.max(variant.interaction_order()) * h * w);
        if let Some(a) = &b.attention {
            let (ph, pw) = a.pool.output_hw(h, w).unwrap_or((0, 0));
            p.free(format!("blocks.{i}.lia.pool"), "pool", 0, [b.width, ph, pw]);
            let (ah, aw) = p.conv(format!("blocks.{i}.lia.conv_a"), &a.conv_a, ph, pw);
            p.conv(format!("blocks.{i}.lia.conv_b"), &a.conv_b, ah, aw);
        }
    }
    p.conv("tail".into(), &m.tail, h, w);
    let s = m.config.scale;
    p.free(
        "pixel_shuffle".into(),
        "shuffle",
        0,
        [m.config.in_channels, h * s, w * s],
    );

    let buffer = m.config.stage_channels[0] * h * w;
    let layers = p.layers;
    ProfileReport {
        schema_version: PROFILE_SCHEMA_VERSION,
        form: m.form.name().into(),
        input: [h, w],
        params: layers.iter().map(|l| l.params).sum(),
        macs: layers.iter().map(|l| l.macs).sum(),
        activations: layers.iter().map(|l| l.activations).sum(),
        peak_feature_bytes: ((buffer + largest_temp) * T::DTYPE.size()) as u64,
        layers,
    }
}

/// Channel handling for quality metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageMode {
    /// Every channel as is.
    Rgb,
    /// Full-range BT.601 luma `0.299 R + 0.587 G + 0.114 B`.
    Y,
}

/// Reported for identical images in place of +inf.
pub const PSNR_CAP_DB: f64 = 100.0;

fn planes<T: Scalar>(x: &Tensor4<T>, mode: ImageMode) -> Result<Vec<Vec<f64>>> {
    let s = x.shape();
    match mode {
        ImageMode::Rgb => Ok((0..s.n)
            .flat_map(|n| (0..s.c).map(move |c| (n, c)))
            .map(|(n, c)| x.view().plane(n, c).iter().map(|v| v.as_f64()).collect())
            .collect()),
        ImageMode::Y => {
            if s.c != 3 {
                return Err(Error::ChannelMismatch {
                    op: "luma",
                    expected: 3,
                    got: s.c,
                });
            }
            Ok((0..s.n)
                .map(|n| {
                    let v = x.view();
                    let (r, g, b) = (v.plane(n, 0), v.plane(n, 1), v.plane(n, 2));
                    (0..s.plane())
                        .map(|i| 0.299 * r[i].as_f64() + 0.587 * g[i].as_f64() + 0.114 * b[i].as_f64())
                        .collect()
                })
                .collect())
        }
    }
}

fn check_same<T: Scalar>(op: &'static str, a: &Tensor4<T>, b: &Tensor4<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op,
            lhs: a.shape(),
            rhs: b.shape(),
        });
    }
    Ok(())
}

/// `10·log10(1 / MSE)` for images in [0, 1]; identical inputs give
/// [`PSNR_CAP_DB`].
pub fn psnr<T: Scalar>(a: &Tensor4<T>, b: &Tensor4<T>, mode: ImageMode) -> Result<f64> {
    check_same("psnr", a, b)?;
    let (pa, pb) = (planes(a, mode)?, planes(b, mode)?);
    let (mut sum, mut count) = (0.0, 0usize);
    for (x, y) in pa.iter().zip(&pb) {
        sum += x.iter().zip(y).map(|(u, v)| (u - v) * (u - v)).sum::<f64>();
        count += x.len();
    }
    if count == 0 {
        return Err(Error::invalid("psnr", "empty image"));
    }
    let mse = sum / count as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB))
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Normalized 1-D Gaussian taps of the SSIM window.
pub fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let mut taps = [0.0; SSIM_WINDOW];
    let r = (SSIM_WINDOW / 2) as f64;
    for (i, t) in taps.iter_mut().enumerate() {
        let d = i as f64 - r;
        *t = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    taps
}

/// Valid-mode separable Gaussian filter.
fn filter_valid(src: &[f64], h: usize, w: usize, taps: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().enumerate().map(|(k, t)| t * src[y * w + x + k]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps.iter().enumerate().map(|(k, t)| t * rows[(y + k) * ow + x]).sum();
        }
    }
    out
}

fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize, taps: &[f64; SSIM_WINDOW]) -> f64 {
    let c1 = (SSIM_K1 * 1.0) * (SSIM_K1 * 1.0);
    let c2 = (SSIM_K2 * 1.0) * (SSIM_K2 * 1.0);
    let prod = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> { a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect() };
    let mu_a = filter_valid(a, h, w, taps);
    let mu_b = filter_valid(b, h, w, taps);
    let e_aa = filter_valid(&prod(&|x, _| x * x), h, w, taps);
    let e_bb = filter_valid(&prod(&|_, y| y * y), h, w, taps);
    let e_ab = filter_valid(&prod(&|x, y| x * y), h, w, taps);
    let n = mu_a.len();
    let mut total = 0.0;
    for i in 0..n {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let var_a = e_aa[i] - ma * ma;
        let var_b = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
    }
    total / n as f64
}

/// Single-scale SSIM (11×11 Gaussian window, σ = 1.5, K1 = 0.01,
/// K2 = 0.03, dynamic range 1), valid region only, averaged over planes.
pub fn ssim<T: Scalar>(a: &Tensor4<T>, b: &Tensor4<T>, mode: ImageMode) -> Result<f64> {
    check_same("ssim", a, b)?;
    let s = a.shape();
    if s.h < SSIM_WINDOW || s.w < SSIM_WINDOW {
        return Err(Error::invalid(
            "ssim",
            format!(
                "image {}x{} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window",
                s.h, s.w
            ),
        ));
    }
    let taps = gaussian_taps();
    let (pa, pb) = (planes(a, mode)?, planes(b, mode)?);
    if pa.is_empty() {
        return Err(Error::invalid("ssim", "empty image"));
    }
    let sum: f64 = pa.iter().zip(&pb).map(|(x, y)| ssim_plane(x, y, s.h, s.w, &taps)).sum();
    Ok(sum / pa.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::{build_model, ModelConfig, Variant};
    use crate::init::ParamRng;
    use crate::lia::LiaVariant;

    #[test]
    fn psnr_closed_form() {
        let a = Tensor4::<f64>::zeros([1, 3, 4, 4]);
        let b = Tensor4::full([1, 3, 4, 4], 0.5);
        let v = psnr(&a, &b, ImageMode::Rgb).unwrap();
        assert!((v - 6.0206).abs() < 1e-3);
        assert!((psnr(&a, &b, ImageMode::Y).unwrap() - v).abs() < 1e-9);
        assert_eq!(psnr(&a, &a, ImageMode::Rgb).unwrap(), PSNR_CAP_DB);
    }

    #[test]
    fn psnr_is_symmetric_and_checks_shapes() {
        let mut rng = ParamRng::new(3);
        let a = rng.uniform_tensor::<f32>([1, 3, 8, 8], 0.0, 1.0);
        let b = rng.uniform_tensor::<f32>([1, 3, 8, 8], 0.0, 1.0);
        assert_eq!(psnr(&a, &b, ImageMode::Y).unwrap(), psnr(&b, &a, ImageMode::Y).unwrap());
        let c = Tensor4::<f32>::zeros([1, 3, 8, 9]);
        assert!(psnr(&a, &c, ImageMode::Rgb).is_err());
        let gray = Tensor4::<f32>::zeros([1, 1, 8, 8]);
        assert!(psnr(&gray, &gray, ImageMode::Y).is_err());
    }

    #[test]
    fn ssim_bounds_and_identity() {
        let mut rng = ParamRng::new(4);
        let a = rng.uniform_tensor::<f64>([1, 3, 16, 16], 0.0, 1.0);
        let b = rng.uniform_tensor::<f64>([1, 3, 16, 16], 0.0, 1.0);
        assert!((ssim(&a, &a, ImageMode::Rgb).unwrap() - 1.0).abs() < 1e-12);
        let v = ssim(&a, &b, ImageMode::Y).unwrap();
        assert!((-1.0..=1.0).contains(&v));
        let small = Tensor4::<f64>::zeros([1, 3, 10, 16]);
        assert!(ssim(&small, &small, ImageMode::Rgb).is_err());
    }

    #[test]
    fn profile_totals_equal_layer_sums_and_param_count() {
        let cfg = ModelConfig::preset(Variant::S, 4);
        let m = build_model::<f32>(&cfg, 0).unwrap();
        for model in [m.clone(), m.fuse().unwrap()] {
            let r = profile(&model, 32, 24);
            assert_eq!(r.params, model.param_count() as u64);
            assert_eq!(r.macs, r.layers.iter().map(|l| l.macs).sum::<u64>());
        }
    }

    #[test]
    fn profile_scales_with_area() {
        let cfg = ModelConfig::preset(Variant::U, 2).with_attention(LiaVariant::Identity);
        let m = build_model::<f32>(&cfg, 0).unwrap().fuse().unwrap();
        let a = profile(&m, 32, 32);
        let b = profile(&m, 32, 64);
        assert_eq!(b.macs, 2 * a.macs);
        assert_eq!(b.activations, 2 * a.activations);
    }

    #[test]
    fn single_conv_params() {
        let c = ConvParams::<f32>::zeros(64, 64, 3, 1, 1);
        assert_eq!(c.param_count(), 36_928);
    }
}
