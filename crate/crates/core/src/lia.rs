//! Local importance-based attention (LIA).
//!
//! ```text
//! A(X) = σ(X[0]) ⊙ ψ(σ(I(X))) ⊙ X
//! ```
//!
//! `I(X)` is a single-channel importance map computed at reduced resolution
//! (softpool, then a strided squeeze conv, then a conv to one channel), `ψ`
//! is bilinear upsampling back to the input size and `σ(X[0])` gates with
//! the first input channel. Both modulators lie in (0, 1) and broadcast over
//! every channel.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::init::ParamRng;
use crate::ops::{self, ConvParams, Window};
use crate::tensor::{Scalar, Tensor4, TensorView, TensorViewMut};

/// Pooling used to measure local importance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImportanceMode {
    #[default]
    Softpool,
    Maxpool,
}

/// Ablation variants of the attention module.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum LiaVariant {
    /// No attention: `X`.
    #[serde(rename = "I")]
    Identity,
    /// Gate only: `σ(X[0]) ⊙ X`.
    #[serde(rename = "II")]
    GateOnly,
    /// Importance only: `ψ(σ(I(X))) ⊙ X`.
    #[serde(rename = "III")]
    ImportanceOnly,
    /// Full module with max-pooled importance.
    #[serde(rename = "IV")]
    MaxImportance,
    /// Full module with sigmoid and upsampling swapped: `σ(ψ(I(X)))`.
    #[serde(rename = "V")]
    SwappedActivation,
    /// Full module.
    #[default]
    #[serde(rename = "VI")]
    Full,
}

impl LiaVariant {
    pub const ALL: [LiaVariant; 6] = [
        LiaVariant::Identity,
        LiaVariant::GateOnly,
        LiaVariant::ImportanceOnly,
        LiaVariant::MaxImportance,
        LiaVariant::SwappedActivation,
        LiaVariant::Full,
    ];

    /// Whether the variant carries importance-branch convolutions.
    pub fn has_params(self) -> bool {
        !matches!(self, LiaVariant::Identity | LiaVariant::GateOnly)
    }

    /// Number of input-derived maps multiplied into the features.
    pub fn interaction_order(self) -> usize {
        match self {
            LiaVariant::Identity => 0,
            LiaVariant::GateOnly | LiaVariant::ImportanceOnly => 1,
            _ => 2,
        }
    }

    pub fn roman(self) -> &'static str {
        match self {
            LiaVariant::Identity => "I",
            LiaVariant::GateOnly => "II",
            LiaVariant::ImportanceOnly => "III",
            LiaVariant::MaxImportance => "IV",
            LiaVariant::SwappedActivation => "V",
            LiaVariant::Full => "VI",
        }
    }
}

impl fmt::Display for LiaVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.roman())
    }
}

impl FromStr for LiaVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LiaVariant::ALL
            .into_iter()
            .find(|v| v.roman().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid("LiaVariant", format!("unknown variant `{s}`")))
    }
}

/// Static hyperparameters of an attention module.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LiaGeometry {
    pub channels: usize,
    pub squeeze: usize,
    pub kernel: usize,
    pub pool_kernel: usize,
    pub pool_stride: usize,
    pub conv_stride: usize,
}

impl LiaGeometry {
    pub fn squeezed(&self) -> usize {
        (self.channels / self.squeeze.max(1)).max(1)
    }

    /// Smallest square input the downsampling chain accepts.
    pub fn min_input_side(&self) -> usize {
        let pool = Window::square(self.pool_kernel, self.pool_stride);
        (1..=4096)
            .find(|&s| {
                pool.output_hw(s, s)
                    .and_then(|(h, _)| ops::conv_out_len(h, self.kernel, self.conv_stride, self.kernel / 2))
                    .and_then(|h| ops::conv_out_len(h, self.kernel, 1, self.kernel / 2))
                    .is_some()
            })
            .unwrap_or(usize::MAX)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LiaParams<T> {
    /// Strided squeeze conv, `C -> C/q`.
    pub conv_a: ConvParams<T>,
    /// `C/q -> 1`.
    pub conv_b: ConvParams<T>,
    pub pool: Window,
    pub mode: ImportanceMode,
}

impl<T: Scalar> LiaParams<T> {
    pub fn zeros(g: LiaGeometry) -> Self {
        let k = g.kernel;
        Self {
            conv_a: ConvParams::zeros(g.squeezed(), g.channels, k, g.conv_stride, k / 2),
            conv_b: ConvParams::zeros(1, g.squeezed(), k, 1, k / 2),
            pool: Window::square(g.pool_kernel, g.pool_stride),
            mode: ImportanceMode::Softpool,
        }
    }

    pub fn init(g: LiaGeometry, rng: &mut ParamRng) -> Self {
        let k = g.kernel;
        Self {
            conv_a: rng.conv(g.squeezed(), g.channels, k, g.conv_stride, k / 2, 1.0),
            conv_b: rng.conv(1, g.squeezed(), k, 1, k / 2, 1.0),
            pool: Window::square(g.pool_kernel, g.pool_stride),
            mode: ImportanceMode::Softpool,
        }
    }

    pub fn param_count(&self) -> usize {
        self.conv_a.param_count() + self.conv_b.param_count()
    }

    pub fn cast<U: Scalar>(&self) -> LiaParams<U> {
        LiaParams {
            conv_a: self.conv_a.cast(),
            conv_b: self.conv_b.cast(),
            pool: self.pool,
            mode: self.mode,
        }
    }
}

/// Reduced-resolution importance map `I(X)`, one channel, no activation.
pub fn local_importance<'a, T: Scalar>(x: impl Into<TensorView<'a, T>>, p: &LiaParams<T>) -> Result<Tensor4<T>> {
    importance_with_mode(x.into(), p, p.mode)
}

fn importance_with_mode<T: Scalar>(x: TensorView<'_, T>, p: &LiaParams<T>, mode: ImportanceMode) -> Result<Tensor4<T>> {
    if p.conv_b.c_out() != 1 {
        return Err(Error::invalid(
            "local_importance",
            "importance map must have one channel",
        ));
    }
    let pooled = match mode {
        ImportanceMode::Softpool => ops::softpool2d(x, p.pool),
        ImportanceMode::Maxpool => ops::maxpool2d(x, p.pool),
    }
    .map_err(|_| Error::EmptyOutput {
        op: "local_importance",
        input: x.shape(),
    })?;
    let squeezed = ops::conv2d(&pooled, &p.conv_a)?;
    ops::conv2d(&squeezed, &p.conv_b)
}

fn gate<T: Scalar>(x: TensorView<'_, T>) -> Result<Tensor4<T>> {
    if x.shape().c == 0 {
        return Err(Error::invalid("lia gate", "input has no channels"));
    }
    Ok(x.channels(0, 1)?.to_tensor().map(ops::sigmoid_scalar))
}

/// The single-channel, full-resolution maps that `variant` multiplies into
/// `x`, in application order. Their count is the interaction order.
pub fn lia_modulators<T: Scalar>(
    x: TensorView<'_, T>,
    p: Option<&LiaParams<T>>,
    variant: LiaVariant,
) -> Result<Vec<Tensor4<T>>> {
    let s = x.shape();
    let params = || p.ok_or_else(|| Error::invalid("lia", format!("variant {variant} needs importance parameters")));
    let upsampled = |mode: ImportanceMode, swapped: bool| -> Result<Tensor4<T>> {
        let imp = importance_with_mode(x, params()?, mode)?;
        if swapped {
            Ok(ops::sigmoid(&ops::bilinear_resize(&imp, s.h, s.w)?))
        } else {
            ops::bilinear_resize(&ops::sigmoid(&imp), s.h, s.w)
        }
    };
    Ok(match variant {
        LiaVariant::Identity => vec![],
        LiaVariant::GateOnly => vec![gate(x)?],
        LiaVariant::ImportanceOnly => vec![upsampled(params()?.mode, false)?],
        LiaVariant::MaxImportance => vec![gate(x)?, upsampled(ImportanceMode::Maxpool, false)?],
        LiaVariant::SwappedActivation => vec![gate(x)?, upsampled(params()?.mode, true)?],
        LiaVariant::Full => vec![gate(x)?, upsampled(params()?.mode, false)?],
    })
}

/// Multiplies every channel of `x` by each single-channel map in turn.
pub fn modulate_inplace<T: Scalar>(x: &mut TensorViewMut<'_, T>, maps: &[Tensor4<T>]) -> Result<()> {
    let s = x.shape();
    for m in maps {
        let ms = m.shape();
        if ms.n != s.n || ms.c != 1 || ms.h != s.h || ms.w != s.w {
            return Err(Error::ShapeMismatch {
                op: "modulate",
                lhs: s,
                rhs: ms,
            });
        }
    }
    let plane = s.plane();
    if plane == 0 {
        return Ok(());
    }
    for n in 0..s.n {
        let item = x.item_mut(n);
        for m in maps {
            let map = m.view().item(n);
            for chan in item.chunks_mut(plane) {
                for (v, &g) in chan.iter_mut().zip(map) {
                    *v = *v * g;
                }
            }
        }
    }
    Ok(())
}

/// Applies `variant` to `x` in place.
pub fn attend_inplace<T: Scalar>(
    x: &mut TensorViewMut<'_, T>,
    p: Option<&LiaParams<T>>,
    variant: LiaVariant,
) -> Result<()> {
    let maps = lia_modulators(x.as_view(), p, variant)?;
    modulate_inplace(x, &maps)
}

pub fn lia_variant<'a, T: Scalar>(
    x: impl Into<TensorView<'a, T>>,
    p: &LiaParams<T>,
    variant: LiaVariant,
) -> Result<Tensor4<T>> {
    let mut out = x.into().to_tensor();
    attend_inplace(&mut out.view_mut(), Some(p), variant)?;
    Ok(out)
}

/// The full module, `σ(X[0]) ⊙ ψ(σ(I(X))) ⊙ X`.
pub fn apply_lia<'a, T: Scalar>(x: impl Into<TensorView<'a, T>>, p: &LiaParams<T>) -> Result<Tensor4<T>> {
    lia_variant(x, p, LiaVariant::Full)
}
