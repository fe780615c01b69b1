#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod coeffs;
pub mod error;
pub mod frame;
pub mod hilbert;
pub mod markov;
pub mod scalar;
pub mod simulate;
pub mod experiment;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type HVec64 = hilbert::HVec<f64>;
pub type HVec32 = hilbert::HVec<f32>;
pub type Semigroup64 = frame::ContractionSemigroup<f64>;
pub type Semigroup32 = frame::ContractionSemigroup<f32>;
pub type DilationFrame64 = frame::DilationFrame<f64>;
pub type DilationFrame32 = frame::DilationFrame<f32>;
pub type CoefficientModel64 = coeffs::CoefficientModel<f64>;
pub type CoefficientModel32 = coeffs::CoefficientModel<f32>;
