//! Numerical operators over [`Tensor4`].
//!
//! Convolution accumulates each output element sequentially: input
//! channels outermost, then kernel rows, then kernel columns, starting
//! from zero, with the bias added after the sum. Planes are computed
//! independently (optionally in parallel), so results are bit-identical
//! for any thread count.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape4, Tensor4, TensorView, TensorViewMut};

/// Convolution weights plus geometry. The kernel is laid out as
/// `(c_out, c_in / groups, k_h, k_w)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams<T> {
    kernel: Tensor4<T>,
    bias: Vec<T>,
    stride: usize,
    padding: usize,
    groups: usize,
}

impl<T: Scalar> ConvParams<T> {
    pub fn new(kernel: Tensor4<T>, bias: Vec<T>, stride: usize, padding: usize, groups: usize) -> Result<Self> {
        let ks = kernel.shape();
        if groups == 0 || stride == 0 {
            return Err(Error::invalid("ConvParams", "stride and groups must be >= 1"));
        }
        if ks.n == 0 || ks.c == 0 || ks.h == 0 || ks.w == 0 {
            return Err(Error::invalid("ConvParams", format!("empty kernel {ks}")));
        }
        if !ks.n.is_multiple_of(groups) {
            return Err(Error::invalid(
                "ConvParams",
                format!("c_out {} not divisible by groups {groups}", ks.n),
            ));
        }
        if bias.len() != ks.n {
            return Err(Error::invalid(
                "ConvParams",
                format!("bias length {} != c_out {}", bias.len(), ks.n),
            ));
        }
        Ok(Self {
            kernel,
            bias,
            stride,
            padding,
            groups,
        })
    }

    /// Stride-1 convolution with `k/2` zero padding, i.e. shape preserving
    /// for odd square kernels.
    pub fn same(kernel: Tensor4<T>, bias: Vec<T>) -> Result<Self> {
        let pad = kernel.shape().h / 2;
        Self::new(kernel, bias, 1, pad, 1)
    }

    pub fn zeros(c_out: usize, c_in: usize, k: usize, stride: usize, padding: usize) -> Self {
        Self {
            kernel: Tensor4::zeros([c_out, c_in, k, k]),
            bias: vec![T::zero(); c_out],
            stride,
            padding,
            groups: 1,
        }
    }

    pub fn kernel(&self) -> &Tensor4<T> {
        &self.kernel
    }

    pub fn kernel_mut(&mut self) -> &mut [T] {
        self.kernel.data_mut()
    }

    pub fn bias(&self) -> &[T] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [T] {
        &mut self.bias
    }

    pub(crate) fn parts_mut(&mut self) -> (&mut [T], &mut [T]) {
        (self.kernel.data_mut(), &mut self.bias)
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn padding(&self) -> usize {
        self.padding
    }

    pub fn groups(&self) -> usize {
        self.groups
    }

    pub fn c_out(&self) -> usize {
        self.kernel.shape().n
    }

    pub fn c_in(&self) -> usize {
        self.kernel.shape().c * self.groups
    }

    pub fn kernel_hw(&self) -> (usize, usize) {
        (self.kernel.shape().h, self.kernel.shape().w)
    }

    pub fn param_count(&self) -> usize {
        self.kernel.shape().numel() + self.bias.len()
    }

    /// Multiply-accumulates for one output pixel.
    pub fn macs_per_pixel(&self) -> usize {
        self.kernel.shape().numel()
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let (kh, kw) = self.kernel_hw();
        conv_out_len(h, kh, self.stride, self.padding).zip(conv_out_len(w, kw, self.stride, self.padding))
    }

    pub fn cast<U: Scalar>(&self) -> ConvParams<U> {
        ConvParams {
            kernel: self.kernel.cast(),
            bias: self.bias.iter().map(|b| U::from_f64_lossy(b.as_f64())).collect(),
            stride: self.stride,
            padding: self.padding,
            groups: self.groups,
        }
    }
}

pub(crate) fn conv_out_len(len: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = len + 2 * pad;
    (padded >= k && len > 0).then(|| (padded - k) / stride + 1)
}

pub fn conv2d<'a, T: Scalar>(x: impl Into<TensorView<'a, T>>, p: &ConvParams<T>) -> Result<Tensor4<T>> {
    conv2d_padded(x, p, p.padding)
}

/// `conv2d` with the padding of `p` replaced by `padding`.
pub fn conv2d_padded<'a, T: Scalar>(
    x: impl Into<TensorView<'a, T>>,
    p: &ConvParams<T>,
    padding: usize,
) -> Result<Tensor4<T>> {
    let x = x.into();
    let out_shape = conv_output_shape(x.shape(), p, padding)?;
    let mut out = Tensor4::zeros(out_shape);
    conv2d_unchecked(x, p, padding, &mut out.view_mut());
    Ok(out)
}

/// Convolves `x` and writes the result into `out`, which may be a channel
/// range of a larger buffer. `out` must not alias `x`.
pub fn conv2d_into<T: Scalar>(x: TensorView<'_, T>, p: &ConvParams<T>, out: &mut TensorViewMut<'_, T>) -> Result<()> {
    let out_shape = conv_output_shape(x.shape(), p, p.padding)?;
    if out.shape() != out_shape {
        return Err(Error::ShapeMismatch {
            op: "conv2d_into",
            lhs: out_shape,
            rhs: out.shape(),
        });
    }
    conv2d_unchecked(x, p, p.padding, out);
    Ok(())
}

fn conv_output_shape<T: Scalar>(xs: Shape4, p: &ConvParams<T>, padding: usize) -> Result<Shape4> {
    if xs.c != p.c_in() {
        return Err(Error::ChannelMismatch {
            op: "conv2d",
            expected: p.c_in(),
            got: xs.c,
        });
    }
    let (kh, kw) = p.kernel_hw();
    let oh = conv_out_len(xs.h, kh, p.stride, padding);
    let ow = conv_out_len(xs.w, kw, p.stride, padding);
    match oh.zip(ow) {
        Some((oh, ow)) => Ok(Shape4::new(xs.n, p.c_out(), oh, ow)),
        None => Err(Error::EmptyOutput {
            op: "conv2d",
            input: xs,
        }),
    }
}

fn conv2d_unchecked<T: Scalar>(
    x: TensorView<'_, T>,
    p: &ConvParams<T>,
    padding: usize,
    out: &mut TensorViewMut<'_, T>,
) {
    let os = out.shape();
    let plane = os.plane();
    if plane == 0 || os.c == 0 {
        return;
    }
    for n in 0..os.n {
        for_each_plane(out.item_mut(n), plane, |co, dst| {
            conv_plane(x, p, padding, n, co, os.h, os.w, dst);
        });
    }
}

#[cfg(feature = "parallel")]
fn for_each_plane<T: Scalar>(item: &mut [T], plane: usize, f: impl Fn(usize, &mut [T]) + Sync) {
    use rayon::prelude::*;
    item.par_chunks_mut(plane).enumerate().for_each(|(c, dst)| f(c, dst));
}

#[cfg(not(feature = "parallel"))]
fn for_each_plane<T: Scalar>(item: &mut [T], plane: usize, f: impl Fn(usize, &mut [T])) {
    item.chunks_mut(plane).enumerate().for_each(|(c, dst)| f(c, dst));
}

/// Computes output plane `(n, co)`. Each output element receives its
/// terms in (input channel, kernel row, kernel column) order; rows are
/// processed as whole slices, which does not change that per-element order.
#[allow(clippy::too_many_arguments)]
fn conv_plane<T: Scalar>(
    x: TensorView<'_, T>,
    p: &ConvParams<T>,
    pad: usize,
    n: usize,
    co: usize,
    oh: usize,
    ow: usize,
    dst: &mut [T],
) {
    let xs = x.shape();
    let ks = p.kernel.shape();
    let (kh_n, kw_n) = (ks.h, ks.w);
    let cin_g = ks.c;
    let cout_g = ks.n / p.groups;
    let g = co / cout_g;
    let stride = p.stride;
    let kernel = p.kernel.data();

    dst.iter_mut().for_each(|v| *v = T::zero());

    for ci in 0..cin_g {
        let src = x.plane(n, g * cin_g + ci);
        let wbase = (co * cin_g + ci) * kh_n * kw_n;
        for kh in 0..kh_n {
            for kw in 0..kw_n {
                let wv = kernel[wbase + kh * kw_n + kw];
                // valid output column range for this kernel column
                let ox_lo = if kw >= pad { 0 } else { (pad - kw).div_ceil(stride) };
                if xs.w + pad <= kw {
                    continue;
                }
                let ox_hi = ((xs.w + pad - kw - 1) / stride + 1).min(ow);
                if ox_lo >= ox_hi {
                    continue;
                }
                for oy in 0..oh {
                    let iy = oy * stride + kh;
                    if iy < pad || iy - pad >= xs.h {
                        continue;
                    }
                    let row = &src[(iy - pad) * xs.w..(iy - pad + 1) * xs.w];
                    let out_row = &mut dst[oy * ow + ox_lo..oy * ow + ox_hi];
                    let ix0 = ox_lo * stride + kw - pad;
                    if stride == 1 {
                        let in_row = &row[ix0..ix0 + out_row.len()];
                        for (o, &i) in out_row.iter_mut().zip(in_row) {
                            *o = *o + wv * i;
                        }
                    } else {
                        for (j, o) in out_row.iter_mut().enumerate() {
                            *o = *o + wv * row[ix0 + j * stride];
                        }
                    }
                }
            }
        }
    }

    let b = p.bias[co];
    dst.iter_mut().for_each(|v| *v = *v + b);
}

/// Zero-pads the spatial dimensions by `pad` on every side.
pub fn pad_zero<'a, T: Scalar>(x: impl Into<TensorView<'a, T>>, pad: usize) -> Tensor4<T> {
    let x = x.into();
    let s = x.shape();
    let (h, w) = (s.h + 2 * pad, s.w + 2 * pad);
    let mut out = Tensor4::zeros([s.n, s.c, h, w]);
    for n in 0..s.n {
        for c in 0..s.c {
            let src = x.plane(n, c);
            for y in 0..s.h {
                let start = out.offset(n, c, y + pad, pad);
                out.data_mut()[start..start + s.w].copy_from_slice(&src[y * s.w..(y + 1) * s.w]);
            }
        }
    }
    out
}

/// Window geometry for pooling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
}

impl Window {
    pub const fn square(k: usize, stride: usize) -> Self {
        Self {
            kh: k,
            kw: k,
            sh: stride,
            sw: stride,
        }
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        if self.kh == 0 || self.kw == 0 || self.sh == 0 || self.sw == 0 || h < self.kh || w < self.kw {
            return None;
        }
        Some(((h - self.kh) / self.sh + 1, (w - self.kw) / self.sw + 1))
    }
}

fn pool2d<'a, T: Scalar>(
    op: &'static str,
    x: impl Into<TensorView<'a, T>>,
    win: Window,
    mut reduce: impl FnMut(&mut dyn Iterator<Item = T>) -> T,
) -> Result<Tensor4<T>> {
    let x = x.into();
    let s = x.shape();
    let (oh, ow) = win.output_hw(s.h, s.w).ok_or(Error::EmptyOutput { op, input: s })?;
    let mut out = Tensor4::zeros([s.n, s.c, oh, ow]);
    let mut idx = 0;
    for n in 0..s.n {
        for c in 0..s.c {
            let src = x.plane(n, c);
            for oy in 0..oh {
                for ox in 0..ow {
                    let (y0, x0) = (oy * win.sh, ox * win.sw);
                    let mut it = (0..win.kh)
                        .flat_map(|dy| (0..win.kw).map(move |dx| (y0 + dy) * s.w + x0 + dx))
                        .map(|i| src[i]);
                    out.data_mut()[idx] = reduce(&mut it);
                    idx += 1;
                }
            }
        }
    }
    Ok(out)
}

/// Softmax-weighted pooling: each output is `sum_i x_i e^{x_i} / sum_j e^{x_j}`
/// over its window, with exponentials shifted by the window maximum.
pub fn softpool2d<'a, T: Scalar>(x: impl Into<TensorView<'a, T>>, win: Window) -> Result<Tensor4<T>> {
    let mut buf = Vec::with_capacity(win.kh * win.kw);
    pool2d("softpool2d", x, win, move |it| {
        buf.clear();
        buf.extend(it);
        let m = buf.iter().copied().fold(T::neg_infinity(), T::max);
        let (mut num, mut den) = (T::zero(), T::zero());
        for &v in &buf {
            let e = (v - m).exp();
            num = num + v * e;
            den = den + e;
        }
        num / den
    })
}

pub fn maxpool2d<'a, T: Scalar>(x: impl Into<TensorView<'a, T>>, win: Window) -> Result<Tensor4<T>> {
    pool2d("maxpool2d", x, win, |it| it.fold(T::neg_infinity(), T::max))
}

/// Bilinear resampling with half-pixel centers (align-corners = false).
/// Source coordinates below zero clamp to the first row/column.
pub fn bilinear_resize<'a, T: Scalar>(
    x: impl Into<TensorView<'a, T>>,
    out_h: usize,
    out_w: usize,
) -> Result<Tensor4<T>> {
    let x = x.into();
    let s = x.shape();
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid("bilinear_resize", "zero target size"));
    }
    if s.h == 0 || s.w == 0 {
        return Err(Error::EmptyOutput {
            op: "bilinear_resize",
            input: s,
        });
    }
    let taps = |in_len: usize, out_len: usize| -> Vec<(usize, usize, T)> {
        let scale = in_len as f64 / out_len as f64;
        (0..out_len)
            .map(|o| {
                let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
                let i0 = (src.floor() as usize).min(in_len - 1);
                let i1 = (i0 + 1).min(in_len - 1);
                (i0, i1, T::from_f64_lossy(src - i0 as f64))
            })
            .collect()
    };
    let ys = taps(s.h, out_h);
    let xs = taps(s.w, out_w);
    let mut out = Tensor4::zeros([s.n, s.c, out_h, out_w]);
    let mut idx = 0;
    let one = T::one();
    for n in 0..s.n {
        for c in 0..s.c {
            let src = x.plane(n, c);
            for &(y0, y1, ly) in &ys {
                for &(x0, x1, lx) in &xs {
                    let top = src[y0 * s.w + x0] * (one - lx) + src[y0 * s.w + x1] * lx;
                    let bot = src[y1 * s.w + x0] * (one - lx) + src[y1 * s.w + x1] * lx;
                    out.data_mut()[idx] = top * (one - ly) + bot * ly;
                    idx += 1;
                }
            }
        }
    }
    Ok(out)
}

/// Depth-to-space: channel `c*r*r + i*r + j` moves to spatial offset `(i, j)`
/// of output channel `c`.
pub fn pixel_shuffle<T: Scalar>(x: &Tensor4<T>, r: usize) -> Result<Tensor4<T>> {
    let s = x.shape();
    if r == 0 || !s.c.is_multiple_of(r * r) {
        return Err(Error::invalid(
            "pixel_shuffle",
            format!("{} channels not divisible by r^2 = {}", s.c, r * r),
        ));
    }
    let oc = s.c / (r * r);
    let mut out = Tensor4::zeros([s.n, oc, s.h * r, s.w * r]);
    for n in 0..s.n {
        for c in 0..oc {
            for i in 0..r {
                for j in 0..r {
                    let src_c = c * r * r + i * r + j;
                    for y in 0..s.h {
                        for xx in 0..s.w {
                            out.set(n, c, y * r + i, xx * r + j, x.at(n, src_c, y, xx));
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Inverse of [`pixel_shuffle`].
pub fn pixel_unshuffle<T: Scalar>(x: &Tensor4<T>, r: usize) -> Result<Tensor4<T>> {
    let s = x.shape();
    if r == 0 || !s.h.is_multiple_of(r) || !s.w.is_multiple_of(r) {
        return Err(Error::invalid(
            "pixel_unshuffle",
            format!("spatial size {}x{} not divisible by {r}", s.h, s.w),
        ));
    }
    let (oh, ow) = (s.h / r, s.w / r);
    let mut out = Tensor4::zeros([s.n, s.c * r * r, oh, ow]);
    for n in 0..s.n {
        for c in 0..s.c {
            for i in 0..r {
                for j in 0..r {
                    let dst_c = c * r * r + i * r + j;
                    for y in 0..oh {
                        for xx in 0..ow {
                            out.set(n, dst_c, y, xx, x.at(n, c, y * r + i, xx * r + j));
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

#[inline]
pub fn sigmoid_scalar<T: Scalar>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}

/// Exact GELU: `x * (1 + erf(x / sqrt 2)) / 2`.
#[inline]
pub fn gelu_scalar<T: Scalar>(v: T) -> T {
    let half = T::from_f64_lossy(0.5);
    let inv_sqrt2 = T::from_f64_lossy(std::f64::consts::FRAC_1_SQRT_2);
    half * v * (T::one() + (v * inv_sqrt2).erf())
}

pub fn sigmoid<T: Scalar>(x: &Tensor4<T>) -> Tensor4<T> {
    x.map(sigmoid_scalar)
}

pub fn gelu<T: Scalar>(x: &Tensor4<T>) -> Tensor4<T> {
    x.map(gelu_scalar)
}

pub fn gelu_inplace<T: Scalar>(x: &mut TensorViewMut<'_, T>) {
    x.for_each_mut(|v| *v = gelu_scalar(*v));
}

/// Multiplies channel `c` by `v[c]`.
pub fn scale_channels<T: Scalar>(x: &Tensor4<T>, v: &[T]) -> Result<Tensor4<T>> {
    let mut out = x.clone();
    scale_channels_inplace(&mut out, v)?;
    Ok(out)
}

pub fn scale_channels_inplace<T: Scalar>(x: &mut Tensor4<T>, v: &[T]) -> Result<()> {
    let s = x.shape();
    if v.len() != s.c {
        return Err(Error::ChannelMismatch {
            op: "scale_channels",
            expected: s.c,
            got: v.len(),
        });
    }
    let plane = s.plane();
    if plane == 0 {
        return Ok(());
    }
    for (i, chunk) in x.data_mut().chunks_mut(plane).enumerate() {
        let f = v[i % s.c];
        chunk.iter_mut().for_each(|e| *e = *e * f);
    }
    Ok(())
}

pub fn add<T: Scalar>(x: &Tensor4<T>, y: &Tensor4<T>) -> Result<Tensor4<T>> {
    let mut out = x.clone();
    add_inplace(&mut out, y)?;
    Ok(out)
}

pub fn add_inplace<T: Scalar>(x: &mut Tensor4<T>, y: &Tensor4<T>) -> Result<()> {
    if x.shape() != y.shape() {
        return Err(Error::ShapeMismatch {
            op: "add",
            lhs: x.shape(),
            rhs: y.shape(),
        });
    }
    x.data_mut().iter_mut().zip(y.data()).for_each(|(a, &b)| *a = *a + b);
    Ok(())
}

/// Copies channels `[lo, hi)` into a new tensor. Use
/// [`Tensor4::channels`] for the zero-copy equivalent.
pub fn slice_channels<T: Scalar>(x: &Tensor4<T>, lo: usize, hi: usize) -> Result<Tensor4<T>> {
    Ok(x.channels(lo, hi)?.to_tensor())
}

/// Overwrites channels `[lo, hi)` of `x` with `y`.
pub fn write_channels<T: Scalar>(x: &mut Tensor4<T>, lo: usize, hi: usize, y: &Tensor4<T>) -> Result<()> {
    x.channels_mut(lo, hi)?.copy_from(y.view())
}

/// Concatenates along the channel axis, `a` first.
pub fn concat_channels<T: Scalar>(a: &Tensor4<T>, b: &Tensor4<T>) -> Result<Tensor4<T>> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.n != sb.n || sa.h != sb.h || sa.w != sb.w {
        return Err(Error::ShapeMismatch {
            op: "concat_channels",
            lhs: sa,
            rhs: sb,
        });
    }
    let mut data = Vec::with_capacity(sa.numel() + sb.numel());
    for n in 0..sa.n {
        data.extend_from_slice(a.view().item(n));
        data.extend_from_slice(b.view().item(n));
    }
    Tensor4::from_vec(sa.with_c(sa.c + sb.c), data)
}
