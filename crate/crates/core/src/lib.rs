//! Dynamic translation sandbox for a flexible SIMD architecture.

pub mod corpus;
pub mod experiment;
pub mod guest;
pub mod host;
pub mod ir;
pub mod metrics;
pub mod report;
pub mod scalar;
pub mod translate;
pub mod timing;
pub mod tol;
pub mod vectorize;

/// Lane view of a vector register holding single-precision values.
pub type F32Lanes = host::Lanes<f32>;
/// Lane view of a vector register holding double-precision values.
pub type F64Lanes = host::Lanes<f64>;
