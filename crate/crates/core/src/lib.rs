//! Federated dual-encoder training with subspace-excision unlearning.

pub mod error;
pub mod experiment;
pub mod federation;
pub mod gsd;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod oracles;
pub mod rng;
pub mod unlearn;

pub use error::{Error, Result};

/// SHA-256 of the canonical JSON form of `value`. Object keys are sorted,
/// so the hash does not depend on field or key order.
pub fn config_hash<T: serde::Serialize>(value: &T) -> String {
    let canonical = serde_json::to_value(value).expect("config serializes to JSON");
    rng::sha256_hex(canonical.to_string().as_bytes())
}
