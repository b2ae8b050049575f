//! The PlainUSR network: a 3×3 head conv, a channel-wise U-Net of H-blocks
//! (two RepMBConv units, each followed by GELU, then attention) and a 3×3
//! tail conv with pixel shuffle.
//!
//! An S-stage backbone with widths `C_0 >= C_1 >= ... >= C_{S-1}` runs
//! `2S - 1` blocks at widths `C_0, ..., C_{S-1}, ..., C_0`. Two schedules
//! evaluate it:
//!
//! * [`Schedule::SplitConcat`]: after each descending block the features are
//!   split into the first `C_{i+1}` channels (processed further) and the
//!   remainder (held); ascending blocks run on `concat(processed, held)`.
//! * [`Schedule::ChannelIndex`]: a single `C_0`-channel buffer; block `i`
//!   reads and writes channels `[0, width_i)` in place.
//!
//! Both perform the same arithmetic on the same values, so they agree
//! bit-for-bit.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::init::{Init, ParamRng};
use crate::lia::{self, LiaGeometry, LiaParams, LiaVariant};
use crate::ops::{self, ConvParams};
use crate::reparam::{self, RepGeometry, RepMBConvParams};
use crate::tensor::{Scalar, Tensor4, TensorView, TensorViewMut};

/// Named model sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    U,
    T,
    S,
    M,
    B,
    L,
}

impl Variant {
    pub const ALL: [Variant; 6] = [Variant::U, Variant::T, Variant::S, Variant::M, Variant::B, Variant::L];

    pub fn stage_channels(self) -> &'static [usize] {
        match self {
            Variant::U => &[16, 8],
            Variant::T => &[32, 16],
            Variant::S => &[32, 16, 8],
            Variant::M => &[48, 32, 16],
            Variant::B => &[64, 48, 32],
            Variant::L => &[80, 64, 48],
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}`, expected one of U T S M B L")))
    }
}

/// Which convolution unit the blocks are built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnitKind {
    #[default]
    Repmbconv,
    /// Plain k×k convolutions; the deployable-footprint baseline.
    Conv,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionConfig {
    pub variant: LiaVariant,
    pub squeeze: usize,
    pub kernel: usize,
    pub pool_kernel: usize,
    pub pool_stride: usize,
    pub conv_stride: usize,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        Self {
            variant: LiaVariant::Full,
            squeeze: 4,
            kernel: 3,
            pool_kernel: 2,
            pool_stride: 2,
            conv_stride: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub stage_channels: Vec<usize>,
    pub scale: usize,
    pub kernel: usize,
    pub in_channels: usize,
    pub expansion: usize,
    pub se_reduction: usize,
    pub identity_branch: bool,
    pub unit: UnitKind,
    pub attention: AttentionConfig,
}

impl ModelConfig {
    pub fn new(stage_channels: Vec<usize>, scale: usize) -> Self {
        Self {
            stage_channels,
            scale,
            kernel: 3,
            in_channels: 3,
            expansion: 2,
            se_reduction: 4,
            identity_branch: true,
            unit: UnitKind::Repmbconv,
            attention: AttentionConfig::default(),
        }
    }

    pub fn preset(variant: Variant, scale: usize) -> Self {
        Self::new(variant.stage_channels().to_vec(), scale)
    }

    pub fn with_attention(mut self, variant: LiaVariant) -> Self {
        self.attention.variant = variant;
        self
    }

    pub fn with_unit(mut self, unit: UnitKind) -> Self {
        self.unit = unit;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let ch = &self.stage_channels;
        if ch.is_empty() || ch.contains(&0) {
            return bad(format!("stage channels must be non-empty and positive, got {ch:?}"));
        }
        if ch.windows(2).any(|w| w[1] > w[0]) {
            return bad(format!("stage channels must be non-increasing, got {ch:?}"));
        }
        if !(2..=4).contains(&self.scale) {
            return bad(format!("scale must be 2, 3 or 4, got {}", self.scale));
        }
        if self.kernel.is_multiple_of(2) {
            return bad(format!("kernel size must be odd, got {}", self.kernel));
        }
        if self.in_channels == 0 || self.expansion == 0 || self.se_reduction == 0 {
            return bad("in_channels, expansion and se_reduction must be >= 1".into());
        }
        let a = &self.attention;
        if a.squeeze == 0
            || a.kernel.is_multiple_of(2)
            || a.pool_kernel == 0
            || a.pool_stride == 0
            || a.conv_stride == 0
        {
            return bad("invalid attention geometry".into());
        }
        Ok(())
    }

    pub fn stages(&self) -> usize {
        self.stage_channels.len()
    }

    /// Width of each block in execution order; `2S - 1` entries.
    pub fn block_widths(&self) -> Vec<usize> {
        let ch = &self.stage_channels;
        ch.iter().chain(ch.iter().rev().skip(1)).copied().collect()
    }

    pub fn rep_geometry(&self, width: usize) -> RepGeometry {
        RepGeometry {
            channels: width,
            expansion: self.expansion,
            kernel: self.kernel,
            se_reduction: self.se_reduction,
            identity_branch: self.identity_branch,
        }
    }

    pub fn lia_geometry(&self, width: usize) -> LiaGeometry {
        let a = &self.attention;
        LiaGeometry {
            channels: width,
            squeeze: a.squeeze,
            kernel: a.kernel,
            pool_kernel: a.pool_kernel,
            pool_stride: a.pool_stride,
            conv_stride: a.conv_stride,
        }
    }

    /// Smallest square input every block accepts.
    pub fn min_input_side(&self) -> usize {
        if self.attention.variant.has_params() {
            self.lia_geometry(1).min_input_side()
        } else {
            1
        }
    }

    pub fn out_channels(&self) -> usize {
        self.in_channels * self.scale * self.scale
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Form {
    Training,
    Fused,
}

impl Form {
    pub fn code(self) -> u8 {
        match self {
            Form::Training => 0,
            Form::Fused => 1,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(Form::Training),
            1 => Some(Form::Fused),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Form::Training => "training",
            Form::Fused => "fused",
        }
    }
}

/// One convolution slot of an H-block.
#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum ConvUnit<T> {
    /// Training-form RepMBConv (residual inside).
    Rep(RepMBConvParams<T>),
    /// A single k×k conv: either a fused RepMBConv or a baseline conv.
    Conv(ConvParams<T>),
}

impl<T: Scalar> ConvUnit<T> {
    pub fn param_count(&self) -> usize {
        match self {
            ConvUnit::Rep(p) => p.param_count(),
            ConvUnit::Conv(c) => c.param_count(),
        }
    }

    pub fn forward(&self, x: TensorView<'_, T>) -> Result<Tensor4<T>> {
        match self {
            ConvUnit::Rep(p) => reparam::forward_train(x, p),
            ConvUnit::Conv(c) => ops::conv2d(x, c),
        }
    }

    pub fn forward_into(&self, x: TensorView<'_, T>, out: &mut TensorViewMut<'_, T>) -> Result<()> {
        match self {
            ConvUnit::Rep(p) => out.copy_from(reparam::forward_train(x, p)?.view()),
            ConvUnit::Conv(c) => ops::conv2d_into(x, c, out),
        }
    }

    pub fn fuse(&self) -> Result<ConvParams<T>> {
        match self {
            ConvUnit::Rep(p) => reparam::fuse(p),
            ConvUnit::Conv(c) => Ok(c.clone()),
        }
    }

    fn cast<U: Scalar>(&self) -> ConvUnit<U> {
        match self {
            ConvUnit::Rep(p) => ConvUnit::Rep(p.cast()),
            ConvUnit::Conv(c) => ConvUnit::Conv(c.cast()),
        }
    }
}

/// Two conv units and the attention module.
#[derive(Debug, Clone, PartialEq)]
pub struct HBlock<T> {
    pub width: usize,
    pub conv1: ConvUnit<T>,
    pub conv2: ConvUnit<T>,
    pub attention: Option<LiaParams<T>>,
}

impl<T: Scalar> HBlock<T> {
    pub fn param_count(&self) -> usize {
        self.conv1.param_count() + self.conv2.param_count() + self.attention.as_ref().map_or(0, LiaParams::param_count)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlainUsrModel<T> {
    pub config: ModelConfig,
    pub form: Form,
    pub head: ConvParams<T>,
    pub blocks: Vec<HBlock<T>>,
    pub tail: ConvParams<T>,
}

/// A parameter tensor under its canonical checkpoint name.
pub struct NamedTensor<'a, T> {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: &'a [T],
}

pub struct NamedTensorMut<'a, T> {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: &'a mut [T],
}

/// Peak count of live full-resolution feature elements during a
/// channel-index forward: the persistent buffer plus block temporaries.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FeatureMemory {
    pub buffer_elements: usize,
    pub peak_elements: usize,
}

#[derive(Default)]
struct Meter {
    live: usize,
    peak: usize,
}

impl Meter {
    fn alloc(&mut self, n: usize) {
        self.live += n;
        self.peak = self.peak.max(self.live);
    }

    fn free(&mut self, n: usize) {
        self.live -= n;
    }
}

/// Forward evaluation order for the U-shaped backbone.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schedule {
    SplitConcat,
    ChannelIndex,
}

/// Builds a model with [`Init::Training`] initialization.
pub fn build_model<T: Scalar>(cfg: &ModelConfig, seed: u64) -> Result<PlainUsrModel<T>> {
    build_model_with(cfg, seed, Init::Training)
}

pub fn build_model_with<T: Scalar>(cfg: &ModelConfig, seed: u64, init: Init) -> Result<PlainUsrModel<T>> {
    cfg.validate()?;
    let mut rng = ParamRng::new(seed);
    let (k, c0) = (cfg.kernel, cfg.stage_channels[0]);
    let head = rng.conv(c0, cfg.in_channels, k, 1, k / 2, 1.0);
    let unit = |rng: &mut ParamRng, width: usize| match cfg.unit {
        UnitKind::Repmbconv => ConvUnit::Rep(RepMBConvParams::init(cfg.rep_geometry(width), rng, init)),
        UnitKind::Conv => ConvUnit::Conv(rng.conv(width, width, k, 1, k / 2, 1.0)),
    };
    let blocks = cfg
        .block_widths()
        .into_iter()
        .map(|width| {
            let conv1 = unit(&mut rng, width);
            let conv2 = unit(&mut rng, width);
            let attention = cfg
                .attention
                .variant
                .has_params()
                .then(|| LiaParams::init(cfg.lia_geometry(width), &mut rng));
            HBlock {
                width,
                conv1,
                conv2,
                attention,
            }
        })
        .collect();
    let tail = rng.conv(cfg.out_channels(), c0, k, 1, k / 2, 1.0);
    Ok(PlainUsrModel {
        config: cfg.clone(),
        form: Form::Training,
        head,
        blocks,
        tail,
    })
}

impl<T: Scalar> PlainUsrModel<T> {
    /// All-zero model with the tensor layout implied by `cfg` and `form`.
    pub fn skeleton(cfg: &ModelConfig, form: Form) -> Result<Self> {
        cfg.validate()?;
        let (k, c0) = (cfg.kernel, cfg.stage_channels[0]);
        let plain = form == Form::Fused || cfg.unit == UnitKind::Conv;
        let unit = |width: usize| {
            if plain {
                ConvUnit::Conv(ConvParams::zeros(width, width, k, 1, k / 2))
            } else {
                ConvUnit::Rep(RepMBConvParams::zeros(cfg.rep_geometry(width)))
            }
        };
        let blocks = cfg
            .block_widths()
            .into_iter()
            .map(|width| HBlock {
                width,
                conv1: unit(width),
                conv2: unit(width),
                attention: cfg
                    .attention
                    .variant
                    .has_params()
                    .then(|| LiaParams::zeros(cfg.lia_geometry(width))),
            })
            .collect();
        Ok(Self {
            config: cfg.clone(),
            form,
            head: ConvParams::zeros(c0, cfg.in_channels, k, 1, k / 2),
            blocks,
            tail: ConvParams::zeros(cfg.out_channels(), c0, k, 1, k / 2),
        })
    }

    pub fn param_count(&self) -> usize {
        self.head.param_count() + self.blocks.iter().map(HBlock::param_count).sum::<usize>() + self.tail.param_count()
    }

    pub fn cast<U: Scalar>(&self) -> PlainUsrModel<U> {
        PlainUsrModel {
            config: self.config.clone(),
            form: self.form,
            head: self.head.cast(),
            blocks: self
                .blocks
                .iter()
                .map(|b| HBlock {
                    width: b.width,
                    conv1: b.conv1.cast(),
                    conv2: b.conv2.cast(),
                    attention: b.attention.as_ref().map(LiaParams::cast),
                })
                .collect(),
            tail: self.tail.cast(),
        }
    }

    /// Every parameter tensor in canonical (checkpoint) order.
    pub fn named_tensors(&self) -> Vec<NamedTensor<'_, T>> {
        let mut out = Vec::new();
        push_conv(&mut out, "head", &self.head);
        for (i, b) in self.blocks.iter().enumerate() {
            for (slot, unit) in [("rep1", &b.conv1), ("rep2", &b.conv2)] {
                let prefix = format!("blocks.{i}.{slot}");
                match unit {
                    ConvUnit::Conv(c) => push_conv(&mut out, &prefix, c),
                    ConvUnit::Rep(p) => {
                        push_conv(&mut out, &format!("{prefix}.k1"), &p.k1);
                        push_conv(&mut out, &format!("{prefix}.k2"), &p.k2_conv);
                        push_conv(&mut out, &format!("{prefix}.k3"), &p.k3);
                        let cm = p.s.len();
                        out.push(NamedTensor {
                            name: format!("{prefix}.s"),
                            dims: vec![cm],
                            data: &p.s,
                        });
                        out.push(NamedTensor {
                            name: format!("{prefix}.v"),
                            dims: vec![cm],
                            data: &p.v,
                        });
                        out.push(NamedTensor {
                            name: format!("{prefix}.se.w1"),
                            dims: vec![p.se_w1.rows(), p.se_w1.cols()],
                            data: p.se_w1.data(),
                        });
                        out.push(NamedTensor {
                            name: format!("{prefix}.se.w2"),
                            dims: vec![p.se_w2.rows(), p.se_w2.cols()],
                            data: p.se_w2.data(),
                        });
                    }
                }
            }
            if let Some(a) = &b.attention {
                push_conv(&mut out, &format!("blocks.{i}.lia.conv_a"), &a.conv_a);
                push_conv(&mut out, &format!("blocks.{i}.lia.conv_b"), &a.conv_b);
            }
        }
        push_conv(&mut out, "tail", &self.tail);
        out
    }

    /// Mutable counterpart of [`named_tensors`](Self::named_tensors), same order.
    pub fn named_tensors_mut(&mut self) -> Vec<NamedTensorMut<'_, T>> {
        let mut out = Vec::new();
        push_conv_mut(&mut out, "head".into(), &mut self.head);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            for (slot, unit) in [("rep1", &mut b.conv1), ("rep2", &mut b.conv2)] {
                let prefix = format!("blocks.{i}.{slot}");
                match unit {
                    ConvUnit::Conv(c) => push_conv_mut(&mut out, prefix, c),
                    ConvUnit::Rep(p) => {
                        push_conv_mut(&mut out, format!("{prefix}.k1"), &mut p.k1);
                        push_conv_mut(&mut out, format!("{prefix}.k2"), &mut p.k2_conv);
                        push_conv_mut(&mut out, format!("{prefix}.k3"), &mut p.k3);
                        let cm = p.s.len();
                        out.push(NamedTensorMut {
                            name: format!("{prefix}.s"),
                            dims: vec![cm],
                            data: &mut p.s,
                        });
                        out.push(NamedTensorMut {
                            name: format!("{prefix}.v"),
                            dims: vec![cm],
                            data: &mut p.v,
                        });
                        let (r1, c1) = (p.se_w1.rows(), p.se_w1.cols());
                        out.push(NamedTensorMut {
                            name: format!("{prefix}.se.w1"),
                            dims: vec![r1, c1],
                            data: p.se_w1.data_mut(),
                        });
                        let (r2, c2) = (p.se_w2.rows(), p.se_w2.cols());
                        out.push(NamedTensorMut {
                            name: format!("{prefix}.se.w2"),
                            dims: vec![r2, c2],
                            data: p.se_w2.data_mut(),
                        });
                    }
                }
            }
            if let Some(a) = &mut b.attention {
                push_conv_mut(&mut out, format!("blocks.{i}.lia.conv_a"), &mut a.conv_a);
                push_conv_mut(&mut out, format!("blocks.{i}.lia.conv_b"), &mut a.conv_b);
            }
        }
        push_conv_mut(&mut out, "tail".into(), &mut self.tail);
        out
    }

    /// Replaces every RepMBConv by its fused conv. Head, tail and attention
    /// are copied unchanged.
    pub fn fuse(&self) -> Result<Self> {
        if self.form == Form::Fused {
            return Err(Error::WrongForm {
                op: "fuse_model",
                required: Form::Training.name(),
                found: Form::Fused.name(),
            });
        }
        let blocks = self
            .blocks
            .iter()
            .map(|b| {
                Ok(HBlock {
                    width: b.width,
                    conv1: ConvUnit::Conv(b.conv1.fuse()?),
                    conv2: ConvUnit::Conv(b.conv2.fuse()?),
                    attention: b.attention.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config: self.config.clone(),
            form: Form::Fused,
            head: self.head.clone(),
            blocks,
            tail: self.tail.clone(),
        })
    }

    fn check_input(&self, x: &Tensor4<T>) -> Result<()> {
        if x.shape().c != self.config.in_channels {
            return Err(Error::ChannelMismatch {
                op: "PlainUsrModel::forward",
                expected: self.config.in_channels,
                got: x.shape().c,
            });
        }
        if self.blocks.len() != 2 * self.config.stages() - 1 {
            return Err(Error::Config(format!(
                "{} blocks for {} stages",
                self.blocks.len(),
                self.config.stages()
            )));
        }
        Ok(())
    }

    fn run_block(
        &self,
        block: &HBlock<T>,
        feat: &mut TensorViewMut<'_, T>,
        mut meter: Option<&mut Meter>,
    ) -> Result<()> {
        if feat.shape().c != block.width {
            return Err(Error::ChannelMismatch {
                op: "HBlock",
                expected: block.width,
                got: feat.shape().c,
            });
        }
        let mut t1 = block.conv1.forward(feat.as_view())?;
        let t1_len = t1.shape().numel();
        if let Some(m) = meter.as_deref_mut() {
            m.alloc(t1_len);
        }
        ops::gelu_inplace(&mut t1.view_mut());
        block.conv2.forward_into(t1.view(), feat)?;
        drop(t1);
        if let Some(m) = meter.as_deref_mut() {
            m.free(t1_len);
        }
        ops::gelu_inplace(feat);

        let maps = lia::lia_modulators(feat.as_view(), block.attention.as_ref(), self.config.attention.variant)?;
        let maps_len: usize = maps.iter().map(|m| m.shape().numel()).sum();
        if let Some(m) = meter.as_deref_mut() {
            m.alloc(maps_len);
        }
        lia::modulate_inplace(feat, &maps)?;
        if let Some(m) = meter {
            m.free(maps_len);
        }
        Ok(())
    }

    fn backbone_split_concat(&self, mut feat: Tensor4<T>) -> Result<Tensor4<T>> {
        let ch = &self.config.stage_channels;
        let s = ch.len();
        let mut held = Vec::with_capacity(s - 1);
        for i in 0..s - 1 {
            self.run_block(&self.blocks[i], &mut feat.view_mut(), None)?;
            let c = feat.shape().c;
            let remainder = ops::slice_channels(&feat, ch[i + 1], c)?;
            feat = ops::slice_channels(&feat, 0, ch[i + 1])?;
            held.push(remainder);
        }
        self.run_block(&self.blocks[s - 1], &mut feat.view_mut(), None)?;
        for block in &self.blocks[s..] {
            let remainder = held.pop().expect("one held tensor per descending block");
            feat = ops::concat_channels(&feat, &remainder)?;
            self.run_block(block, &mut feat.view_mut(), None)?;
        }
        Ok(feat)
    }

    fn backbone_channel_index(&self, buffer: &mut Tensor4<T>, mut meter: Option<&mut Meter>) -> Result<()> {
        for block in &self.blocks {
            let mut view = buffer.channels_mut(0, block.width)?;
            self.run_block(block, &mut view, meter.as_deref_mut())?;
        }
        Ok(())
    }

    fn reconstruct(&self, feat: &Tensor4<T>) -> Result<Tensor4<T>> {
        let y = ops::conv2d(feat, &self.tail)?;
        ops::pixel_shuffle(&y, self.config.scale)
    }

    /// Runs the network with an explicit backbone schedule, regardless of form.
    pub fn forward_with_schedule(&self, x: &Tensor4<T>, schedule: Schedule) -> Result<Tensor4<T>> {
        self.check_input(x)?;
        let feat = ops::conv2d(x, &self.head)?;
        let feat = match schedule {
            Schedule::SplitConcat => self.backbone_split_concat(feat)?,
            Schedule::ChannelIndex => {
                let mut buffer = feat;
                self.backbone_channel_index(&mut buffer, None)?;
                buffer
            }
        };
        self.reconstruct(&feat)
    }

    /// Training-style evaluation through split/concat.
    pub fn forward_train(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        self.forward_with_schedule(x, Schedule::SplitConcat)
    }

    /// Deployment evaluation: one persistent buffer, in-place channel ranges.
    pub fn forward_fused(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        Ok(self.forward_fused_metered(x)?.0)
    }

    pub fn forward_fused_metered(&self, x: &Tensor4<T>) -> Result<(Tensor4<T>, FeatureMemory)> {
        if self.form != Form::Fused {
            return Err(Error::WrongForm {
                op: "forward_fused",
                required: Form::Fused.name(),
                found: self.form.name(),
            });
        }
        self.check_input(x)?;
        let mut meter = Meter::default();
        let mut buffer = ops::conv2d(x, &self.head)?;
        let buffer_elements = buffer.shape().numel();
        meter.alloc(buffer_elements);
        self.backbone_channel_index(&mut buffer, Some(&mut meter))?;
        let y = self.reconstruct(&buffer)?;
        Ok((
            y,
            FeatureMemory {
                buffer_elements,
                peak_elements: meter.peak,
            },
        ))
    }

    /// Form-appropriate forward.
    pub fn forward(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        match self.form {
            Form::Training => self.forward_train(x),
            Form::Fused => self.forward_fused(x),
        }
    }
}

/// Free-function form of [`PlainUsrModel::fuse`].
pub fn fuse_model<T: Scalar>(m: &PlainUsrModel<T>) -> Result<PlainUsrModel<T>> {
    m.fuse()
}

fn push_conv<'a, T: Scalar>(out: &mut Vec<NamedTensor<'a, T>>, prefix: &str, c: &'a ConvParams<T>) {
    out.push(NamedTensor {
        name: format!("{prefix}.kernel"),
        dims: c.kernel().shape().dims().to_vec(),
        data: c.kernel().data(),
    });
    out.push(NamedTensor {
        name: format!("{prefix}.bias"),
        dims: vec![c.bias().len()],
        data: c.bias(),
    });
}

fn push_conv_mut<'a, T: Scalar>(out: &mut Vec<NamedTensorMut<'a, T>>, prefix: String, c: &'a mut ConvParams<T>) {
    let dims = c.kernel().shape().dims().to_vec();
    let (kernel, bias) = c.parts_mut();
    let nb = bias.len();
    out.push(NamedTensorMut {
        name: format!("{prefix}.kernel"),
        dims,
        data: kernel,
    });
    out.push(NamedTensorMut {
        name: format!("{prefix}.bias"),
        dims: vec![nb],
        data: bias,
    });
}
