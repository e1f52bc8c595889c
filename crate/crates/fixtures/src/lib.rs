//! Synthetic bundle generator with ground truth, for testing the inspector.

pub mod amplifier;
pub mod ciphers;
pub mod error;
pub mod expected;
pub mod generate;
pub mod manifest;
pub mod net;
pub mod score;
pub mod transform;

pub use amplifier::{run_amplifier_server, AmplifierServer};
pub use error::{FixtureError, Result};
pub use expected::{Expected, EXPECTED_FILE};
pub use generate::{build, generate_bundle, load_manifest, Generated};
pub use manifest::FixtureManifest;
pub use score::{score_run, Score, Scorecard};
