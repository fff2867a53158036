//! Quantized low-rank gradient training.
//!
//! Weights live in INT8, gradient projection matrices in INT4, low-rank
//! Adam moments in 8 bits, and weight updates are applied with stochastic
//! rounding. Projection matrices are recomputed by SVD on a per-layer
//! interval that doubles once the layer's subspace stops moving.

pub mod error;
pub mod linalg;
pub mod model;
pub mod optimizer;
pub mod quant;
pub mod rng;
pub mod scalar;
pub mod subspace;
pub mod train;

pub use error::{Error, Result};
pub use linalg::{Matrix, Svd};
pub use quant::{ParamStore, Precision, QuantSpec, QuantizedTensor, Rounding};
pub use scalar::Scalar;

pub type Matrix32 = Matrix<f32>;
pub type Matrix64 = Matrix<f64>;
pub type QuantizedTensor32 = QuantizedTensor<f32>;
pub type QuantizedTensor64 = QuantizedTensor<f64>;
pub type ParamStore32 = ParamStore<f32>;
pub type ProjectionState32 = subspace::ProjectionState<f32>;
pub type ProjectionState64 = subspace::ProjectionState<f64>;
pub type AdamState32 = optimizer::AdamState<f32>;
