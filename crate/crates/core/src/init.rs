//! Seeded parameter initialization.
//!
//! Values are drawn in f64 and cast, so an f32 and an f64 model built from
//! the same seed hold the same parameters up to rounding.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ops::ConvParams;
use crate::tensor::{Scalar, Tensor4};

/// Parameter initialization scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Init {
    /// Trainer starting point: RepMBConv blocks start close to
    /// `x + K3 * K1 * x` with a near-zero spatial kernel, `s = 1`, `v = 0`.
    #[default]
    Training,
    /// Every learnable group drawn at full scale. Used to stress fusion.
    Random,
}

pub struct ParamRng(ChaCha8Rng);

impl ParamRng {
    pub fn new(seed: u64) -> Self {
        Self(ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        self.0.gen_range(lo..hi)
    }

    pub fn uniform_vec<T: Scalar>(&mut self, len: usize, lo: f64, hi: f64) -> Vec<T> {
        (0..len).map(|_| T::from_f64_lossy(self.uniform(lo, hi))).collect()
    }

    pub fn uniform_tensor<T: Scalar>(&mut self, shape: [usize; 4], lo: f64, hi: f64) -> Tensor4<T> {
        Tensor4::from_fn(shape, |_| T::from_f64_lossy(self.uniform(lo, hi)))
    }

    /// Conv with the usual fan-in scaled uniform init on kernel and bias,
    /// kernel additionally multiplied by `gain`.
    pub fn conv<T: Scalar>(
        &mut self,
        c_out: usize,
        c_in: usize,
        k: usize,
        stride: usize,
        padding: usize,
        gain: f64,
    ) -> ConvParams<T> {
        let bound = 1.0 / ((c_in * k * k) as f64).sqrt();
        let kernel = Tensor4::from_fn([c_out, c_in, k, k], |_| {
            T::from_f64_lossy(gain * self.uniform(-bound, bound))
        });
        let bias = self.uniform_vec(c_out, -bound, bound);
        ConvParams::new(kernel, bias, stride, padding, 1).expect("valid conv geometry")
    }
}
