//! Target-independent bodies of the exported functions.

use plainusr::init::ParamRng;
use plainusr::lia::{lia_modulators, LiaVariant};
use plainusr::metrics::profile as profile_model;
use plainusr::reparam::{self, RepGeometry};
use plainusr::{build_model, ops, Form, Init, ModelConfig, PlainUsrModel, RepMBConvParams, Tensor4, Variant};
use serde::Serialize;

#[derive(Debug, Serialize)]
pub struct FusionCheck {
    pub channels: usize,
    pub training_params: usize,
    pub fused_params: usize,
    pub vanilla_params: usize,
    pub max_abs_error: f64,
    /// Centre tap of the fused kernel for each output channel's own input
    /// channel; close to 1 when the residual dominates.
    pub diagonal_centre: Vec<f32>,
}

pub fn fusion_check(channels: usize, seed: u64, size: usize) -> Result<FusionCheck, String> {
    if !(1..=64).contains(&channels) || !(1..=128).contains(&size) {
        return Err("channels must be in 1..=64 and size in 1..=128".into());
    }
    let g = RepGeometry {
        channels,
        expansion: 2,
        kernel: 3,
        se_reduction: 4,
        identity_branch: true,
    };
    let mut rng = ParamRng::new(seed);
    let p = RepMBConvParams::<f32>::init(g, &mut rng, Init::Random);
    let x: Tensor4<f32> = rng.uniform_tensor([1, channels, size, size], 0.0, 1.0);
    let fused = reparam::fuse(&p).map_err(|e| e.to_string())?;
    let a = reparam::forward_train(&x, &p).map_err(|e| e.to_string())?;
    let b = ops::conv2d(&x, &fused).map_err(|e| e.to_string())?;
    Ok(FusionCheck {
        channels,
        training_params: p.param_count(),
        fused_params: fused.param_count(),
        vanilla_params: channels * channels * 9 + channels,
        max_abs_error: a.max_abs_diff(&b).map_err(|e| e.to_string())?,
        diagonal_centre: (0..channels).map(|c| fused.kernel().at(c, c, 1, 1)).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapKind {
    Gate,
    Importance,
    Combined,
}

impl MapKind {
    pub fn parse(s: &str) -> Result<Self, String> {
        match s {
            "gate" => Ok(MapKind::Gate),
            "importance" => Ok(MapKind::Importance),
            "combined" => Ok(MapKind::Combined),
            _ => Err(format!("unknown map `{s}`, expected gate, importance or combined")),
        }
    }
}

/// Runs an image through the head of a randomly initialized variant-U
/// model and returns the first block's attention map as min-max
/// normalized grey RGBA of the same size.
pub fn importance_map(rgba: &[u8], width: usize, height: usize, seed: u64, kind: MapKind) -> Result<Vec<u8>, String> {
    if rgba.len() != width * height * 4 {
        return Err(format!(
            "expected {} RGBA bytes, got {}",
            width * height * 4,
            rgba.len()
        ));
    }
    let m: PlainUsrModel<f32> = build_model(&ModelConfig::preset(Variant::U, 2), seed).map_err(|e| e.to_string())?;
    if width < m.config.min_input_side() || height < m.config.min_input_side() {
        return Err(format!("image must be at least {0}x{0}", m.config.min_input_side()));
    }
    let x = Tensor4::from_fn([1, 3, height, width], |[_, c, y, xx]| {
        f32::from(rgba[(y * width + xx) * 4 + c]) / 255.0
    });
    let feat = ops::conv2d(&x, &m.head).map_err(|e| e.to_string())?;
    let maps =
        lia_modulators(feat.view(), m.blocks[0].attention.as_ref(), LiaVariant::Full).map_err(|e| e.to_string())?;
    let map = match kind {
        MapKind::Gate => maps[0].clone(),
        MapKind::Importance => maps[1].clone(),
        MapKind::Combined => Tensor4::from_fn([1, 1, height, width], |[n, c, y, xx]| {
            maps[0].at(n, c, y, xx) * maps[1].at(n, c, y, xx)
        }),
    };
    let (lo, hi) = map
        .data()
        .iter()
        .fold((f32::MAX, f32::MIN), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    Ok(map
        .data()
        .iter()
        .flat_map(|&v| {
            let g = ((v - lo) / span * 255.0).round() as u8;
            [g, g, g, 255]
        })
        .collect())
}

pub fn profile_json(variant: &str, scale: usize, size: usize, attention: &str) -> Result<String, String> {
    let v: Variant = variant.parse().map_err(|e: plainusr::Error| e.to_string())?;
    let a: LiaVariant = attention.parse().map_err(|e: plainusr::Error| e.to_string())?;
    if size == 0 || size > 4096 {
        return Err("size must be in 1..=4096".into());
    }
    let cfg = ModelConfig::preset(v, scale).with_attention(a);
    let m = PlainUsrModel::<f32>::skeleton(&cfg, Form::Fused).map_err(|e| e.to_string())?;
    serde_json::to_string_pretty(&profile_model(&m, size, size)).map_err(|e| e.to_string())
}
