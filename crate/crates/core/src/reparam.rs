//! RepMBConv: an MBConv-shaped block whose nonlinearities are replaced by
//! linear surrogates, so that the whole block collapses into one k×k
//! convolution for deployment.
//!
//! Training topology, for input `x` with `C` channels and `C_m = e·C`:
//!
//! ```text
//! y = [((x * K1 + b1) ⊙ s * K2 + b2) ⊙ se(v) * K3 + b3] + x
//! ```
//!
//! `K2` is a dense k×k conv plus an optional identity branch (merged before
//! use), `s` a per-channel scale in place of the first GELU, and `se(v)` a
//! squeeze-excitation gate evaluated on a learnable vector rather than on
//! the input, so it is constant at inference.
//!
//! The deployed kernel is `((K1 ⊙ s) * K2 ⊙ se(v)) * K3 + I` with the
//! matching bias. For this to hold at image borders, the k×k conv of the
//! training path sees the expanded features of the *zero-padded* input,
//! whose border value is `b1 ⊙ s` rather than zero. [`forward_train`]
//! therefore pads `x` first and runs the k×k conv unpadded.

use crate::error::{Error, Result};
use crate::init::{Init, ParamRng};
use crate::ops::{self, ConvParams};
use crate::tensor::{Scalar, Tensor4, TensorView};

/// Row-major dense matrix, applied as `y = W x`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> DenseMatrix<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::invalid(
                "DenseMatrix",
                format!("{} values for a {rows}x{cols} matrix", data.len()),
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn apply(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.cols {
            return Err(Error::ChannelMismatch {
                op: "DenseMatrix::apply",
                expected: self.cols,
                got: x.len(),
            });
        }
        Ok(self
            .data
            .chunks(self.cols)
            .map(|row| row.iter().zip(x).fold(T::zero(), |acc, (&w, &v)| acc + w * v))
            .collect())
    }

    pub fn cast<U: Scalar>(&self) -> DenseMatrix<U> {
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| U::from_f64_lossy(v.as_f64())).collect(),
        }
    }
}

/// Static hyperparameters of one RepMBConv block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RepGeometry {
    pub channels: usize,
    pub expansion: usize,
    pub kernel: usize,
    pub se_reduction: usize,
    pub identity_branch: bool,
}

impl RepGeometry {
    pub fn expanded(&self) -> usize {
        self.channels * self.expansion
    }

    pub fn se_hidden(&self) -> usize {
        (self.expanded() / self.se_reduction.max(1)).max(1)
    }
}

/// The learnable groups of a training-form RepMBConv.
#[derive(Debug, Clone, PartialEq)]
pub struct RepMBConvParams<T> {
    /// 1×1 expansion, `C -> C_m`.
    pub k1: ConvParams<T>,
    /// k×k dense conv, `C_m -> C_m`; the identity branch is added on top.
    pub k2_conv: ConvParams<T>,
    pub identity_branch: bool,
    /// 1×1 squeeze, `C_m -> C`.
    pub k3: ConvParams<T>,
    /// Per-channel scale replacing the first GELU.
    pub s: Vec<T>,
    /// Learnable SE input.
    pub v: Vec<T>,
    /// `C_m / r x C_m`.
    pub se_w1: DenseMatrix<T>,
    /// `C_m x C_m / r`.
    pub se_w2: DenseMatrix<T>,
}

impl<T: Scalar> RepMBConvParams<T> {
    /// All-zero parameters of the given geometry, `s` and `v` included.
    pub fn zeros(g: RepGeometry) -> Self {
        let (c, cm, k, hid) = (g.channels, g.expanded(), g.kernel, g.se_hidden());
        Self {
            k1: ConvParams::zeros(cm, c, 1, 1, 0),
            k2_conv: ConvParams::zeros(cm, cm, k, 1, k / 2),
            identity_branch: g.identity_branch,
            k3: ConvParams::zeros(c, cm, 1, 1, 0),
            s: vec![T::zero(); cm],
            v: vec![T::zero(); cm],
            se_w1: DenseMatrix::zeros(hid, cm),
            se_w2: DenseMatrix::zeros(cm, hid),
        }
    }

    pub fn init(g: RepGeometry, rng: &mut ParamRng, init: Init) -> Self {
        let (c, cm, k, hid) = (g.channels, g.expanded(), g.kernel, g.se_hidden());
        let k1 = rng.conv(cm, c, 1, 1, 0, 1.0);
        let k2_gain = match init {
            Init::Training => 1e-2,
            Init::Random => 1.0,
        };
        let k2_conv = rng.conv(cm, cm, k, 1, k / 2, k2_gain);
        let k3 = rng.conv(c, cm, 1, 1, 0, 1.0);
        let b1 = 1.0 / (cm as f64).sqrt();
        let b2 = 1.0 / (hid as f64).sqrt();
        let se_w1 = DenseMatrix::new(hid, cm, rng.uniform_vec(hid * cm, -b1, b1)).expect("shape");
        let se_w2 = DenseMatrix::new(cm, hid, rng.uniform_vec(cm * hid, -b2, b2)).expect("shape");
        let (s, v) = match init {
            Init::Training => (vec![T::one(); cm], vec![T::zero(); cm]),
            Init::Random => (rng.uniform_vec(cm, 0.5, 1.5), rng.uniform_vec(cm, -1.0, 1.0)),
        };
        Self {
            k1,
            k2_conv,
            identity_branch: g.identity_branch,
            k3,
            s,
            v,
            se_w1,
            se_w2,
        }
    }

    pub fn channels(&self) -> usize {
        self.k1.c_in()
    }

    pub fn expanded(&self) -> usize {
        self.k1.c_out()
    }

    pub fn kernel_size(&self) -> usize {
        self.k2_conv.kernel_hw().0
    }

    pub fn geometry(&self) -> RepGeometry {
        RepGeometry {
            channels: self.channels(),
            expansion: self.expanded() / self.channels().max(1),
            kernel: self.kernel_size(),
            se_reduction: self.expanded() / self.se_w1.rows().max(1),
            identity_branch: self.identity_branch,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (c, cm) = (self.channels(), self.expanded());
        let (kh, kw) = self.k2_conv.kernel_hw();
        let bad = |reason: String| Err(Error::invalid("RepMBConvParams", reason));
        if self.k1.kernel_hw() != (1, 1) || self.k3.kernel_hw() != (1, 1) {
            return bad("K1 and K3 must be 1x1".into());
        }
        if kh != kw || kh % 2 == 0 {
            return bad(format!("K2 must be square with odd size, got {kh}x{kw}"));
        }
        if c == 0 || cm % c != 0 {
            return bad(format!("C_m = {cm} is not a multiple of C = {c}"));
        }
        if self.k2_conv.c_in() != cm || self.k2_conv.c_out() != cm {
            return bad("K2 must map C_m -> C_m".into());
        }
        if self.k3.c_in() != cm || self.k3.c_out() != c {
            return bad("K3 must map C_m -> C".into());
        }
        if self.k2_conv.groups() != 1 || self.k1.groups() != 1 || self.k3.groups() != 1 {
            return bad("grouped convolutions are not fusable here".into());
        }
        if self.s.len() != cm || self.v.len() != cm {
            return bad("s and v must have length C_m".into());
        }
        if self.se_w1.cols() != cm || self.se_w2.rows() != cm || self.se_w2.cols() != self.se_w1.rows() {
            return bad("SE matrices inconsistent with C_m".into());
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.k1.param_count()
            + self.k2_conv.param_count()
            + self.k3.param_count()
            + self.s.len()
            + self.v.len()
            + self.se_w1.data().len()
            + self.se_w2.data().len()
    }

    pub fn cast<U: Scalar>(&self) -> RepMBConvParams<U> {
        RepMBConvParams {
            k1: self.k1.cast(),
            k2_conv: self.k2_conv.cast(),
            identity_branch: self.identity_branch,
            k3: self.k3.cast(),
            s: self.s.iter().map(|v| U::from_f64_lossy(v.as_f64())).collect(),
            v: self.v.iter().map(|v| U::from_f64_lossy(v.as_f64())).collect(),
            se_w1: self.se_w1.cast(),
            se_w2: self.se_w2.cast(),
        }
    }
}

/// Kernel of shape `(c, c, k, k)` with a 1 at `[i, i, k/2, k/2]`.
pub fn identity_kernel<T: Scalar>(c: usize, k: usize) -> Result<Tensor4<T>> {
    if k.is_multiple_of(2) || c == 0 {
        return Err(Error::invalid(
            "identity_kernel",
            format!("need odd k and c >= 1, got c={c} k={k}"),
        ));
    }
    let mut t = Tensor4::zeros([c, c, k, k]);
    for i in 0..c {
        t.set(i, i, k / 2, k / 2, T::one());
    }
    Ok(t)
}

/// `sigmoid(W2 · relu(W1 · v))`; depends only on parameters.
pub fn se_vector<T: Scalar>(v: &[T], w1: &DenseMatrix<T>, w2: &DenseMatrix<T>) -> Result<Vec<T>> {
    let hidden: Vec<T> = w1.apply(v)?.into_iter().map(|h| h.max(T::zero())).collect();
    Ok(w2.apply(&hidden)?.into_iter().map(ops::sigmoid_scalar).collect())
}

/// `K2` with the identity branch folded in.
pub fn effective_k2<T: Scalar>(p: &RepMBConvParams<T>) -> Result<ConvParams<T>> {
    let mut k2 = p.k2_conv.clone();
    if p.identity_branch {
        let cm = p.expanded();
        let k = p.kernel_size();
        let id = identity_kernel::<T>(cm, k)?;
        k2.kernel_mut()
            .iter_mut()
            .zip(id.data())
            .for_each(|(a, &b)| *a = *a + b);
    }
    Ok(k2)
}

/// Scales output channel `o` (kernel slice and bias) by `s[o]`.
pub fn scale_output_channels<T: Scalar>(p: &ConvParams<T>, s: &[T]) -> Result<ConvParams<T>> {
    if s.len() != p.c_out() {
        return Err(Error::ChannelMismatch {
            op: "scale_output_channels",
            expected: p.c_out(),
            got: s.len(),
        });
    }
    let mut out = p.clone();
    let per_out = p.kernel().shape().numel() / p.c_out();
    for (o, chunk) in out.kernel_mut().chunks_mut(per_out).enumerate() {
        chunk.iter_mut().for_each(|w| *w = *w * s[o]);
    }
    out.bias_mut().iter_mut().zip(s).for_each(|(b, &f)| *b = *b * f);
    Ok(out)
}

/// Scales input channel `i` of the kernel by `s[i]`; the bias is unchanged.
pub fn scale_input_channels<T: Scalar>(p: &ConvParams<T>, s: &[T]) -> Result<ConvParams<T>> {
    if p.groups() != 1 || s.len() != p.c_in() {
        return Err(Error::ChannelMismatch {
            op: "scale_input_channels",
            expected: p.c_in(),
            got: s.len(),
        });
    }
    let mut out = p.clone();
    let (kh, kw) = p.kernel_hw();
    let plane = kh * kw;
    let cin = p.c_in();
    for (j, chunk) in out.kernel_mut().chunks_mut(plane).enumerate() {
        let f = s[j % cin];
        chunk.iter_mut().for_each(|w| *w = *w * f);
    }
    Ok(out)
}

fn check_pointwise<T: Scalar>(op: &'static str, p: &ConvParams<T>) -> Result<()> {
    if p.kernel_hw() != (1, 1) || p.stride() != 1 || p.groups() != 1 || p.padding() != 0 {
        return Err(Error::invalid(op, "expected an unpadded stride-1 1x1 conv"));
    }
    Ok(())
}

/// Folds a 1×1 conv `k1` into the k×k conv `k2` that follows it:
/// `conv(conv(pad(x), k1), k2 unpadded) == conv(x, merged)`.
///
/// `merged[o, i] = Σ_m k2[o, m] · k1[m, i]`, and the bias is `k2` applied to
/// the constant field `b1`: `b2[o] + Σ_m (Σ_ab k2[o, m, a, b]) · b1[m]`.
pub fn merge_pointwise_into_kxk<T: Scalar>(k1: &ConvParams<T>, k2: &ConvParams<T>) -> Result<ConvParams<T>> {
    check_pointwise("merge_pointwise_into_kxk", k1)?;
    if k2.groups() != 1 {
        return Err(Error::invalid("merge_pointwise_into_kxk", "k2 must be ungrouped"));
    }
    if k2.c_in() != k1.c_out() {
        return Err(Error::ChannelMismatch {
            op: "merge_pointwise_into_kxk",
            expected: k2.c_in(),
            got: k1.c_out(),
        });
    }
    let (c_in, c_mid, c_out) = (k1.c_in(), k1.c_out(), k2.c_out());
    let (kh, kw) = k2.kernel_hw();
    let plane = kh * kw;
    let w1 = k1.kernel().data();
    let w2 = k2.kernel().data();
    let mut kernel = Tensor4::<T>::zeros([c_out, c_in, kh, kw]);
    let mut bias = k2.bias().to_vec();
    {
        let out = kernel.data_mut();
        for o in 0..c_out {
            for m in 0..c_mid {
                let k2_om = &w2[(o * c_mid + m) * plane..(o * c_mid + m + 1) * plane];
                let k2_sum = k2_om.iter().copied().fold(T::zero(), |a, b| a + b);
                bias[o] = bias[o] + k2_sum * k1.bias()[m];
                for i in 0..c_in {
                    let f = w1[m * c_in + i];
                    let dst = &mut out[(o * c_in + i) * plane..(o * c_in + i + 1) * plane];
                    for (d, &w) in dst.iter_mut().zip(k2_om) {
                        *d = *d + w * f;
                    }
                }
            }
        }
    }
    ConvParams::new(kernel, bias, k2.stride(), k2.padding(), 1)
}

/// Folds a 1×1 conv `k3` into the k×k conv `k2` that precedes it:
/// `merged[o, i] = Σ_m k3[o, m] · k2[m, i]`, bias `b3 + k3 · b2`.
pub fn merge_kxk_into_pointwise<T: Scalar>(k2: &ConvParams<T>, k3: &ConvParams<T>) -> Result<ConvParams<T>> {
    check_pointwise("merge_kxk_into_pointwise", k3)?;
    if k2.groups() != 1 {
        return Err(Error::invalid("merge_kxk_into_pointwise", "k2 must be ungrouped"));
    }
    if k3.c_in() != k2.c_out() {
        return Err(Error::ChannelMismatch {
            op: "merge_kxk_into_pointwise",
            expected: k3.c_in(),
            got: k2.c_out(),
        });
    }
    let (c_in, c_mid, c_out) = (k2.c_in(), k2.c_out(), k3.c_out());
    let (kh, kw) = k2.kernel_hw();
    let block = c_in * kh * kw;
    let w2 = k2.kernel().data();
    let w3 = k3.kernel().data();
    let mut kernel = Tensor4::<T>::zeros([c_out, c_in, kh, kw]);
    let mut bias = k3.bias().to_vec();
    {
        let out = kernel.data_mut();
        for o in 0..c_out {
            let dst = &mut out[o * block..(o + 1) * block];
            for m in 0..c_mid {
                let f = w3[o * c_mid + m];
                bias[o] = bias[o] + f * k2.bias()[m];
                for (d, &w) in dst.iter_mut().zip(&w2[m * block..(m + 1) * block]) {
                    *d = *d + f * w;
                }
            }
        }
    }
    ConvParams::new(kernel, bias, k2.stride(), k2.padding(), 1)
}

/// Training-form forward pass, residual included.
pub fn forward_train<'a, T: Scalar>(x: impl Into<TensorView<'a, T>>, p: &RepMBConvParams<T>) -> Result<Tensor4<T>> {
    let x = x.into();
    p.validate()?;
    if x.shape().c != p.channels() {
        return Err(Error::ChannelMismatch {
            op: "RepMBConv::forward_train",
            expected: p.channels(),
            got: x.shape().c,
        });
    }
    let pad = p.kernel_size() / 2;
    let k2 = effective_k2(p)?;
    let se = se_vector(&p.v, &p.se_w1, &p.se_w2)?;

    let padded = ops::pad_zero(x, pad);
    let mut h = ops::conv2d(&padded, &p.k1)?;
    ops::scale_channels_inplace(&mut h, &p.s)?;
    let mut h = ops::conv2d_padded(&h, &k2, 0)?;
    ops::scale_channels_inplace(&mut h, &se)?;
    let mut y = ops::conv2d(&h, &p.k3)?;
    let residual = x.to_tensor();
    ops::add_inplace(&mut y, &residual)?;
    Ok(y)
}

/// Collapses the block into a single k×k, stride-1, `k/2`-padded conv with
/// `C·C·k·k + C` parameters.
pub fn fuse<T: Scalar>(p: &RepMBConvParams<T>) -> Result<ConvParams<T>> {
    p.validate()?;
    let se = se_vector(&p.v, &p.se_w1, &p.se_w2)?;
    let k1s = scale_output_channels(&p.k1, &p.s)?;
    let k2 = effective_k2(p)?;
    let front = merge_pointwise_into_kxk(&k1s, &k2)?;
    let k3se = scale_input_channels(&p.k3, &se)?;
    let mut fused = merge_kxk_into_pointwise(&front, &k3se)?;
    let id = identity_kernel::<T>(p.channels(), p.kernel_size())?;
    fused
        .kernel_mut()
        .iter_mut()
        .zip(id.data())
        .for_each(|(a, &b)| *a = *a + b);
    Ok(fused)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape4;

    fn geom(c: usize) -> RepGeometry {
        RepGeometry {
            channels: c,
            expansion: 2,
            kernel: 3,
            se_reduction: 4,
            identity_branch: true,
        }
    }

    fn input(seed: u64, shape: [usize; 4]) -> Tensor4<f64> {
        ParamRng::new(seed).uniform_tensor(shape, 0.0, 1.0)
    }

    #[test]
    fn identity_kernel_layout() {
        let k = identity_kernel::<f32>(1, 1).unwrap();
        assert_eq!(k.data(), &[1.0]);
        let k = identity_kernel::<f32>(2, 3).unwrap();
        let ones: Vec<[usize; 4]> = (0..36)
            .filter(|&i| k.data()[i] == 1.0)
            .map(|i| [i / 18, (i / 9) % 2, (i / 3) % 3, i % 3])
            .collect();
        assert_eq!(ones, vec![[0, 0, 1, 1], [1, 1, 1, 1]]);
        assert!(identity_kernel::<f32>(2, 2).is_err());
    }

    #[test]
    fn identity_kernel_conv_is_identity() {
        let x = input(3, [2, 4, 6, 5]);
        let p = ConvParams::same(identity_kernel(4, 3).unwrap(), vec![0.0; 4]).unwrap();
        assert_eq!(ops::conv2d(&x, &p).unwrap(), x);
    }

    #[test]
    fn se_vector_cases() {
        let mut rng = ParamRng::new(1);
        let w1 = DenseMatrix::new(2, 8, rng.uniform_vec::<f64>(16, -1.0, 1.0)).unwrap();
        let v: Vec<f64> = rng.uniform_vec(8, -2.0, 2.0);
        let zero_w2 = DenseMatrix::zeros(8, 2);
        assert!(se_vector(&v, &w1, &zero_w2).unwrap().iter().all(|&e| e == 0.5));

        let w2 = DenseMatrix::new(8, 2, rng.uniform_vec(16, -1.0, 1.0)).unwrap();
        assert!(se_vector(&[0.0; 8], &w1, &w2).unwrap().iter().all(|&e| e == 0.5));
        assert!(se_vector(&v, &w1, &w2).unwrap().iter().all(|&e| e > 0.0 && e < 1.0));
        assert!(se_vector(&v[..4], &w1, &w2).is_err());
    }

    #[test]
    fn merge_pointwise_trivial_cases() {
        let mut rng = ParamRng::new(5);
        let k2: ConvParams<f64> = rng.conv(3, 3, 3, 1, 1, 1.0);
        let id1 = ConvParams::new(identity_kernel(3, 1).unwrap(), vec![0.0; 3], 1, 0, 1).unwrap();
        assert_eq!(merge_pointwise_into_kxk(&id1, &k2).unwrap(), k2);

        let k1 = ConvParams::new(Tensor4::full([1, 1, 1, 1], 2.0), vec![0.0], 1, 0, 1).unwrap();
        let ones = ConvParams::same(Tensor4::full([1, 1, 3, 3], 1.0), vec![0.0]).unwrap();
        let merged = merge_pointwise_into_kxk(&k1, &ones).unwrap();
        assert!(merged.kernel().data().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn merge_pointwise_matches_sequential_convs() {
        let mut rng = ParamRng::new(11);
        let k1: ConvParams<f64> = rng.conv(6, 3, 1, 1, 0, 1.0);
        let k2: ConvParams<f64> = rng.conv(6, 6, 3, 1, 1, 1.0);
        let merged = merge_pointwise_into_kxk(&k1, &k2).unwrap();
        let x = input(12, [1, 3, 8, 8]);
        let seq = ops::conv2d_padded(&ops::conv2d(&ops::pad_zero(&x, 1), &k1).unwrap(), &k2, 0).unwrap();
        let fused = ops::conv2d(&x, &merged).unwrap();
        assert!(seq.max_abs_diff(&fused).unwrap() < 1e-12);

        let x32 = x.cast::<f32>();
        let (k1, k2, merged) = (k1.cast::<f32>(), k2.cast::<f32>(), merged.cast::<f32>());
        let seq = ops::conv2d_padded(&ops::conv2d(&ops::pad_zero(&x32, 1), &k1).unwrap(), &k2, 0).unwrap();
        assert!(seq.max_abs_diff(&ops::conv2d(&x32, &merged).unwrap()).unwrap() < 1e-6);
    }

    #[test]
    fn merge_kxk_cases() {
        let mut rng = ParamRng::new(21);
        let k2: ConvParams<f64> = rng.conv(6, 3, 3, 1, 1, 1.0);
        let id = ConvParams::new(identity_kernel(6, 1).unwrap(), vec![0.0; 6], 1, 0, 1).unwrap();
        assert_eq!(merge_kxk_into_pointwise(&k2, &id).unwrap(), k2);

        let zero = ConvParams::new(Tensor4::zeros([2, 6, 1, 1]), vec![0.25, -0.5], 1, 0, 1).unwrap();
        let m = merge_kxk_into_pointwise(&k2, &zero).unwrap();
        assert!(m.kernel().data().iter().all(|&v| v == 0.0));
        assert_eq!(m.bias(), &[0.25, -0.5]);

        let k3: ConvParams<f64> = rng.conv(4, 6, 1, 1, 0, 1.0);
        let m = merge_kxk_into_pointwise(&k2, &k3).unwrap();
        let x = input(22, [1, 3, 8, 8]);
        let seq = ops::conv2d(&ops::conv2d(&x, &k2).unwrap(), &k3).unwrap();
        assert!(seq.max_abs_diff(&ops::conv2d(&x, &m).unwrap()).unwrap() < 1e-12);
    }

    #[test]
    fn merge_rejects_mismatched_shapes() {
        let mut rng = ParamRng::new(2);
        let k1: ConvParams<f32> = rng.conv(5, 3, 1, 1, 0, 1.0);
        let k2: ConvParams<f32> = rng.conv(6, 6, 3, 1, 1, 1.0);
        assert!(merge_pointwise_into_kxk(&k1, &k2).is_err());
        assert!(merge_pointwise_into_kxk(&k2, &k2).is_err());
        assert!(merge_kxk_into_pointwise(&k2, &k1).is_err());
    }

    #[test]
    fn zero_inner_weights_leave_only_the_residual() {
        let p = RepMBConvParams::<f64>::zeros(RepGeometry {
            identity_branch: false,
            ..geom(4)
        });
        let x = input(7, [1, 4, 5, 5]);
        assert_eq!(forward_train(&x, &p).unwrap(), x);
        let f = fuse(&p).unwrap();
        assert_eq!(f.kernel(), &identity_kernel::<f64>(4, 3).unwrap());
        assert_eq!(f.bias(), p.k3.bias());
    }

    #[test]
    fn stacked_identities_double_the_input() {
        let c = 3;
        let mut p = RepMBConvParams::<f64>::zeros(RepGeometry {
            expansion: 1,
            ..geom(c)
        });
        p.k1 = ConvParams::new(identity_kernel(c, 1).unwrap(), vec![0.0; c], 1, 0, 1).unwrap();
        p.k3 = p.k1.clone();
        p.s = vec![1.0; c];
        // force se(v) = 1: a huge positive pre-activation saturates the sigmoid
        p.se_w1 = DenseMatrix::new(1, c, vec![1.0; c]).unwrap();
        p.se_w2 = DenseMatrix::new(c, 1, vec![1e4; c]).unwrap();
        p.v = vec![1.0; c];
        let x = input(8, [1, c, 4, 4]);
        let y = forward_train(&x, &p).unwrap();
        assert!(y.max_abs_diff(&x.map(|v| 2.0 * v)).unwrap() < 1e-12);
    }

    #[test]
    fn fused_geometry_matches_vanilla_conv() {
        let mut rng = ParamRng::new(0);
        let p = RepMBConvParams::<f32>::init(geom(64), &mut rng, Init::Random);
        let f = fuse(&p).unwrap();
        assert_eq!(f.kernel().shape(), Shape4::new(64, 64, 3, 3));
        assert_eq!((f.stride(), f.padding(), f.groups()), (1, 1, 1));
        assert_eq!(f.param_count(), 36_928);
    }

    #[test]
    fn fuse_is_deterministic() {
        let mut rng = ParamRng::new(9);
        let p = RepMBConvParams::<f32>::init(geom(8), &mut rng, Init::Random);
        assert_eq!(fuse(&p).unwrap(), fuse(&p).unwrap());
    }

    #[test]
    fn scale_ordering_is_irrelevant() {
        // (x*K1+b1)⊙s equals x*(K1⊙s) + b1⊙s
        let mut rng = ParamRng::new(31);
        let k1: ConvParams<f64> = rng.conv(8, 4, 1, 1, 0, 1.0);
        let s: Vec<f64> = rng.uniform_vec(8, 0.5, 1.5);
        let x = input(32, [1, 4, 6, 6]);
        let a = ops::scale_channels(&ops::conv2d(&x, &k1).unwrap(), &s).unwrap();
        let b = ops::conv2d(&x, &scale_output_channels(&k1, &s).unwrap()).unwrap();
        assert!(a.max_abs_diff(&b).unwrap() < 1e-13);
    }

    #[test]
    fn forward_rejects_channel_mismatch() {
        let p = RepMBConvParams::<f32>::zeros(geom(4));
        let x = Tensor4::<f32>::zeros([1, 3, 4, 4]);
        assert!(matches!(forward_train(&x, &p), Err(Error::ChannelMismatch { .. })));
    }
}
