//! Speech enhancement with selective state-space models, built on a small
//! tape-based reverse-mode autodiff engine generic over `f32`/`f64`.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::should_implement_trait, clippy::needless_range_loop, clippy::large_enum_variant)]

pub mod autodiff;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod params;
pub mod pipeline;
pub mod scalar;
pub mod spectral;
pub mod ssm;
pub mod tensor;

pub use error::{Error, Result};
pub use params::ParamSet;
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Tape32 = autodiff::Tape<f32>;
pub type Tape64 = autodiff::Tape<f64>;
pub type ParamSet32 = ParamSet<f32>;
pub type ParamSet64 = ParamSet<f64>;
pub type Stft32 = spectral::Stft<f32>;
pub type Stft64 = spectral::Stft<f64>;
