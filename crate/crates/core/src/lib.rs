//! PlainUSR: a plain, reparameterizable super-resolution network.
//!
//! * [`reparam`]: RepMBConv and its closed-form fusion into one convolution.
//! * [`lia`]: local importance-based attention.
//! * [`backbone`]: the channel-wise U-Net and the full model, with
//!   split/concat and in-place channel-index schedules.
//! * [`io`]: the `PUSR` checkpoint format.
//! * [`metrics`] and [`bench`]: profiling, PSNR/SSIM, latency.

pub mod backbone;
pub mod bench;
pub mod error;
pub mod init;
pub mod io;
pub mod lia;
pub mod metrics;
pub mod ops;
pub mod reparam;
pub mod tensor;

pub use backbone::{
    build_model, build_model_with, fuse_model, ConvUnit, Form, HBlock, ModelConfig, PlainUsrModel, Schedule, UnitKind,
    Variant,
};
pub use error::{CheckpointError, Error, Result};
pub use init::Init;
pub use lia::{LiaParams, LiaVariant};
pub use ops::ConvParams;
pub use reparam::RepMBConvParams;
pub use tensor::{DType, Scalar, Shape4, Tensor4, TensorView, TensorViewMut};
