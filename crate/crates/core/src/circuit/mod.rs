//! Constraint system for the metric statement, its witness generator and the
//! field-native sponge used for commitments.

pub mod metric;
pub mod r1cs;
pub mod sponge;

pub use metric::{
    build_metric_circuit, check_satisfied, diagnose, MetricCircuit, MetricLayout, PublicStatement, Witness,
    PUBLIC_SLOTS,
};
pub use r1cs::{CircuitDigest, ConstraintSystem, R1csBuilder, Term, Unsatisfied};
pub use sponge::{sponge_hash, Sponge};
