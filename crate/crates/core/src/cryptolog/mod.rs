//! Cipher operation reconstruction from hook logs.

pub mod algorithm;
pub mod assemble;
pub mod event;
pub mod keys;
pub mod nesting;

pub use algorithm::{Algorithm, CipherFamily};
pub use assemble::{assemble_operations, CryptoOperation, Direction};
pub use event::{CipherEvent, Method, OpKind};
pub use keys::{
    classify_key_fixedness, collect_key_observations, extract_nonsdk_key_candidates, Fixedness, KeyCandidate,
    KeyContext, KeyObservation, KeyOrigin, KeyRecord,
};
pub use nesting::{detect_nested_chains, nested_chains};
