//! Dense NCHW tensors and borrowed channel-range views.
//!
//! [`Tensor4`] owns its data in row-major `(n, c, h, w)` order. A
//! [`TensorView`] or [`TensorViewMut`] addresses a contiguous channel range
//! of a tensor without copying: within one batch item the range is
//! contiguous, and consecutive batch items are `batch_stride` elements
//! apart. The fused backbone runs every block on such a view of a single
//! persistent feature buffer.

use std::fmt;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Element type code, shared with the checkpoint format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(DType::F32),
            1 => Some(DType::F64),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DType::F32 => "f32",
            DType::F64 => "f64",
        }
    }
}

impl fmt::Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Real scalar usable as a tensor element. Implemented for `f32` (the
/// inference dtype) and `f64` (verification).
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Default + fmt::Debug + fmt::Display + Send + Sync + 'static
{
    const DTYPE: DType;

    fn erf(self) -> Self;

    fn write_le(self, out: &mut Vec<u8>);

    /// Reads one value from exactly `DTYPE.size()` little-endian bytes.
    fn read_le(bytes: &[u8]) -> Self;

    #[inline]
    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 converts to any Scalar")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("Scalar converts to f64")
    }
}

impl Scalar for f32 {
    const DTYPE: DType = DType::F32;

    #[inline]
    fn erf(self) -> Self {
        libm::erff(self)
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
}

impl Scalar for f64 {
    const DTYPE: DType = DType::F64;

    #[inline]
    fn erf(self) -> Self {
        libm::erf(self)
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape4 {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape4 {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self { n, c, h, w }
    }

    pub const fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub const fn plane(&self) -> usize {
        self.h * self.w
    }

    pub const fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    pub const fn with_c(self, c: usize) -> Self {
        Self { c, ..self }
    }
}

impl fmt::Display for Shape4 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.c, self.h, self.w)
    }
}

impl From<[usize; 4]> for Shape4 {
    fn from(d: [usize; 4]) -> Self {
        Self::new(d[0], d[1], d[2], d[3])
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor4<T> {
    shape: Shape4,
    data: Vec<T>,
}

impl<T: fmt::Debug> fmt::Debug for Tensor4<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor4")
            .field("shape", &self.shape)
            .field("data", &format_args!("[{} elements]", self.data.len()))
            .finish()
    }
}

impl<T: Scalar> Tensor4<T> {
    pub fn zeros(shape: impl Into<Shape4>) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: impl Into<Shape4>, value: T) -> Self {
        let shape = shape.into();
        Self {
            shape,
            data: vec![value; shape.numel()],
        }
    }

    pub fn from_vec(shape: impl Into<Shape4>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        if data.len() != shape.numel() {
            return Err(Error::DataLength {
                shape,
                len: data.len(),
                expected: shape.numel(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn from_fn(shape: impl Into<Shape4>, mut f: impl FnMut([usize; 4]) -> T) -> Self {
        let shape = shape.into();
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..shape.n {
            for c in 0..shape.c {
                for y in 0..shape.h {
                    for x in 0..shape.w {
                        data.push(f([n, c, y, x]));
                    }
                }
            }
        }
        Self { shape, data }
    }

    #[inline]
    pub fn shape(&self) -> Shape4 {
        self.shape
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn offset(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        let s = self.shape;
        ((n * s.c + c) * s.h + y) * s.w + x
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> T {
        self.data[self.offset(n, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: T) {
        let i = self.offset(n, c, y, x);
        self.data[i] = v;
    }

    pub fn view(&self) -> TensorView<'_, T> {
        TensorView {
            data: &self.data,
            shape: self.shape,
            batch_stride: self.shape.c * self.shape.plane(),
        }
    }

    pub fn view_mut(&mut self) -> TensorViewMut<'_, T> {
        let shape = self.shape;
        TensorViewMut {
            data: &mut self.data,
            shape,
            batch_stride: shape.c * shape.plane(),
        }
    }

    /// Zero-copy view of channels `[lo, hi)`.
    pub fn channels(&self, lo: usize, hi: usize) -> Result<TensorView<'_, T>> {
        self.view().channels(lo, hi)
    }

    /// Zero-copy mutable view of channels `[lo, hi)`.
    pub fn channels_mut(&mut self, lo: usize, hi: usize) -> Result<TensorViewMut<'_, T>> {
        check_channel_range("channels_mut", self.shape.c, lo, hi)?;
        let shape = self.shape;
        let plane = shape.plane();
        let batch_stride = shape.c * plane;
        let end = if shape.n == 0 {
            lo * plane
        } else {
            (shape.n - 1) * batch_stride + hi * plane
        };
        Ok(TensorViewMut {
            data: &mut self.data[lo * plane..end],
            shape: shape.with_c(hi - lo),
            batch_stride,
        })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor4<U> {
        Tensor4 {
            shape: self.shape,
            data: self.data.iter().map(|v| U::from_f64_lossy(v.as_f64())).collect(),
        }
    }

    /// Largest absolute elementwise difference, computed in f64.
    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op: "max_abs_diff",
                lhs: self.shape,
                rhs: other.shape,
            });
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max))
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|v| v.as_f64().abs()).fold(0.0, f64::max)
    }
}

fn check_channel_range(op: &'static str, c: usize, lo: usize, hi: usize) -> Result<()> {
    if lo > hi || hi > c {
        return Err(Error::invalid(op, format!("channel range [{lo}, {hi}) outside 0..{c}")));
    }
    Ok(())
}

/// Read-only view over a channel range of an NCHW tensor.
#[derive(Clone, Copy)]
pub struct TensorView<'a, T> {
    data: &'a [T],
    shape: Shape4,
    batch_stride: usize,
}

impl<'a, T: Scalar> TensorView<'a, T> {
    #[inline]
    pub fn shape(&self) -> Shape4 {
        self.shape
    }

    /// The `h*w` plane of channel `c` of batch item `n`.
    #[inline]
    pub fn plane(&self, n: usize, c: usize) -> &'a [T] {
        let p = self.shape.plane();
        let start = n * self.batch_stride + c * p;
        &self.data[start..start + p]
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> T {
        self.plane(n, c)[y * self.shape.w + x]
    }

    pub fn channels(&self, lo: usize, hi: usize) -> Result<TensorView<'a, T>> {
        check_channel_range("channels", self.shape.c, lo, hi)?;
        let plane = self.shape.plane();
        let end = if self.shape.n == 0 {
            lo * plane
        } else {
            (self.shape.n - 1) * self.batch_stride + hi * plane
        };
        Ok(TensorView {
            data: &self.data[lo * plane..end],
            shape: self.shape.with_c(hi - lo),
            batch_stride: self.batch_stride,
        })
    }

    /// True when the view covers its storage densely (no batch gaps).
    pub fn is_dense(&self) -> bool {
        self.shape.n <= 1 || self.batch_stride == self.shape.c * self.shape.plane()
    }

    /// Copies the viewed elements into a new tensor.
    pub fn to_tensor(&self) -> Tensor4<T> {
        let s = self.shape;
        let mut data = Vec::with_capacity(s.numel());
        for n in 0..s.n {
            let start = n * self.batch_stride;
            data.extend_from_slice(&self.data[start..start + s.c * s.plane()]);
        }
        Tensor4 { shape: s, data }
    }

    /// The contiguous block of batch item `n` (all viewed channels).
    #[inline]
    pub fn item(&self, n: usize) -> &'a [T] {
        let start = n * self.batch_stride;
        &self.data[start..start + self.shape.c * self.shape.plane()]
    }
}

impl<'a, T: Scalar> From<&'a Tensor4<T>> for TensorView<'a, T> {
    fn from(t: &'a Tensor4<T>) -> Self {
        t.view()
    }
}

/// Mutable view over a channel range of an NCHW tensor.
pub struct TensorViewMut<'a, T> {
    data: &'a mut [T],
    shape: Shape4,
    batch_stride: usize,
}

impl<'a, T: Scalar> TensorViewMut<'a, T> {
    #[inline]
    pub fn shape(&self) -> Shape4 {
        self.shape
    }

    pub fn as_view(&self) -> TensorView<'_, T> {
        TensorView {
            data: self.data,
            shape: self.shape,
            batch_stride: self.batch_stride,
        }
    }

    pub fn reborrow(&mut self) -> TensorViewMut<'_, T> {
        TensorViewMut {
            data: self.data,
            shape: self.shape,
            batch_stride: self.batch_stride,
        }
    }

    /// Mutable block of batch item `n` covering all viewed channels.
    #[inline]
    pub fn item_mut(&mut self, n: usize) -> &mut [T] {
        let len = self.shape.c * self.shape.plane();
        let start = n * self.batch_stride;
        &mut self.data[start..start + len]
    }

    pub fn for_each_mut(&mut self, mut f: impl FnMut(&mut T)) {
        for n in 0..self.shape.n {
            self.item_mut(n).iter_mut().for_each(&mut f);
        }
    }

    /// Overwrites the viewed elements with `src`, which must match in shape.
    pub fn copy_from(&mut self, src: TensorView<'_, T>) -> Result<()> {
        if src.shape() != self.shape {
            return Err(Error::ShapeMismatch {
                op: "copy_from",
                lhs: self.shape,
                rhs: src.shape(),
            });
        }
        for n in 0..self.shape.n {
            self.item_mut(n).copy_from_slice(src.item(n));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length() {
        assert!(Tensor4::<f32>::from_vec([1, 2, 2, 2], vec![0.0; 7]).is_err());
        assert!(Tensor4::<f32>::from_vec([1, 2, 2, 2], vec![0.0; 8]).is_ok());
    }

    #[test]
    fn channel_views_are_zero_copy_prefixes() {
        let t = Tensor4::<f32>::from_fn([2, 4, 2, 3], |[n, c, y, x]| (n * 1000 + c * 100 + y * 10 + x) as f32);
        let v = t.channels(1, 3).unwrap();
        assert_eq!(v.shape(), Shape4::new(2, 2, 2, 3));
        assert_eq!(v.at(1, 0, 1, 2), 1112.0);
        assert!(!v.is_dense());
        let copy = v.to_tensor();
        assert_eq!(copy.at(1, 1, 0, 0), 1200.0);
        assert_eq!(copy.shape().numel(), 24);
    }

    #[test]
    fn channels_mut_writes_through() {
        let mut t = Tensor4::<f64>::zeros([2, 3, 1, 2]);
        {
            let mut v = t.channels_mut(0, 2).unwrap();
            v.for_each_mut(|x| *x = 1.0);
        }
        assert_eq!(t.at(0, 1, 0, 1), 1.0);
        assert_eq!(t.at(0, 2, 0, 1), 0.0);
        assert_eq!(t.at(1, 0, 0, 0), 1.0);
        assert_eq!(t.at(1, 2, 0, 0), 0.0);
    }

    #[test]
    fn bad_channel_range_is_rejected() {
        let t = Tensor4::<f32>::zeros([1, 3, 2, 2]);
        assert!(t.channels(2, 4).is_err());
        assert!(t.channels(2, 1).is_err());
    }

    #[test]
    fn dtype_codes_round_trip() {
        for d in [DType::F32, DType::F64] {
            assert_eq!(DType::from_code(d.code()), Some(d));
        }
        assert_eq!(DType::from_code(7), None);
    }
}
