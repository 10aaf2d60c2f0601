//! Disentangle request sentences into content and strategy vectors, predict
//! request success with a two-level attentional LSTM, rank strategy triples
//! by success, and edit weak requests.

pub mod analysis;
pub mod baselines;
pub mod corpus;
pub mod editor;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod persuader;
pub mod vae;

pub use error::{Error, Result};

/// First 8 bytes (16 hex digits) of the SHA-256 of the value's JSON form.
pub fn stable_hash<T: serde::Serialize>(value: &T) -> String {
    use sha2::{Digest, Sha256};
    let text = serde_json::to_string(value).expect("value serializes to JSON");
    hex::encode(&Sha256::digest(text.as_bytes())[..8])
}
