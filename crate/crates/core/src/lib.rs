//! Physics-informed neural power-flow solving.
//!
//! The crate parses transmission cases, evaluates AC power-flow mismatches,
//! solves them with Newton-Raphson, and trains an MLP to map load
//! perturbations directly to bus voltages using only the physics residual as
//! supervision.

// `!(x >= lo)` style checks are used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod case;
pub mod eval;
pub mod grad;
pub mod network;
pub mod newton;
pub mod power;
pub mod sampling;
pub mod sparse;
pub mod train;

pub use case::{parse_case, BusType, CaseData, CaseError};
pub use network::{ArchitectureSpec, NetworkParams};
pub use newton::{solve_newton, NewtonOptions, NewtonResult};
pub use power::{PerturbationVector, PowerInjection, PowerSystem, StateVector};

/// Crate version, stamped into exported artifacts.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// SHA-256 (hex) of a value's JSON serialization; used to tag artifacts with
/// the settings that produced them.
pub fn config_digest<T: serde::Serialize>(value: &T) -> String {
    use sha2::{Digest, Sha256};
    let json = serde_json::to_string(value).expect("settings serialize to JSON");
    hex::encode(Sha256::digest(json.as_bytes()))
}
