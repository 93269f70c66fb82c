//! Content-weighted lossy image codec with a single tunable importance
//! shift: multi-scale encoder, importance masker, quantizer, decoder,
//! multi-scale discriminator, Huffman bitstream, quality metrics and
//! rate curve fitting.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below pick the two concrete precisions.

pub mod adversary;
pub mod bitstream;
pub mod codec;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod scalar;
pub mod tunability;

pub use codec::{Codec, CodecProbe, EntropyMode};
pub use error::{Error, Result};
pub use pipeline::{Arch, GeneratorParams, Pipeline, PipelineConfig, SurrogateMode};
pub use scalar::Scalar;

pub type Tensor32 = nn::Tensor<f32>;
pub type Tensor64 = nn::Tensor<f64>;
pub type ParamStore32 = nn::ParamStore<f32>;
pub type ParamStore64 = nn::ParamStore<f64>;
pub type Codec32 = Codec<f32>;
pub type Codec64 = Codec<f64>;
