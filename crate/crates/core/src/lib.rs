//! Verifiable client selection for federated learning.
//!
//! Clients prove in an R1CS circuit that the cosine statistics they report
//! against a server-held benchmark model were computed honestly; the server
//! selects the best-aligned clients and audits their uploads by hash.

pub mod attestation;
pub mod circuit;
pub mod error;
pub mod field;
pub mod fixedpoint;
pub mod harness;
pub mod learning;
pub mod protocol;
pub mod scalar;

pub use error::{Error, Result};
pub use field::FieldElement;
pub use scalar::Scalar;

/// Double-precision instantiations.
pub type Dataset = learning::Dataset<f64>;
pub type ModelParams = learning::ModelParams<f64>;
