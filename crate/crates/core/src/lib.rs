//! Ternary multimodal transformer toolkit.
//!
//! Weights of the decoder are stored as packed trits with a per-tensor
//! scale and executed by integer add/subtract kernels; the vision tower and
//! projector stay in f32. See the crate README for the container layout.

pub mod blocks;
pub mod error;
pub mod io;
pub mod kernels;
pub mod pipeline;
pub mod quant;
pub mod tensor;
pub mod train;

pub use error::{Category, Error, Result};
pub use io::{Container, Precision, PrecisionMap};
pub use kernels::{bitlinear_forward, dense_reference_forward, Decode, KernelPlan};
pub use pipeline::{GenerationParams, Model, ModelConfig, Session};
pub use quant::{PackedTernaryMatrix, QuantizedTokens, TritMatrix};
pub use tensor::Tensor;
