//! A small deep-learning library built around the MSConv block: two
//! spatially aligned convolution branches fused by element-wise
//! multiplication (which feeds a channel attention) and element-wise
//! subtraction (which is reweighted by that attention).
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`]: channel-last rank-4 tensors, direct convolution and the
//!   element-wise/channel primitives, plus the `MSCT` tensor file format.
//! - [`grad`]: an explicit reverse-mode tape with analytic backward rules
//!   and a central-difference gradient checker.
//! - [`block`]: the MSConv block, its softmax-weighted SKConv twin, the
//!   ablation variants and the parameter/FLOP accounting.
//! - [`model`]: a desk-scale residual backbone and margin-softmax losses.
//! - [`data`]: synthetic identity datasets and verification metrics.
//! - [`train`]: run configuration, SGD with cosine annealing, training,
//!   ablation runs, gradient-check runners and feature visualisation.
//!
//! Everything is deterministic: identical inputs, seeds and precision give
//! bit-identical results.

pub mod block;
pub mod data;
pub mod error;
pub mod grad;
pub mod model;
pub mod param;
pub mod real;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use real::Real;
pub use tensor::{ChannelVec, ConvKernel, Dims4, Matrix, Tensor4};
