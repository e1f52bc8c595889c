//! Offline inspection of mobile-app traffic for privacy leaks carried over
//! non-standard and custom-encrypted channels.
//!
//! The pipeline reads one *bundle* per app run (packet capture, decrypted
//! HTTPS records, cipher hook logs, file-operation logs and the device PII
//! profile), reconstructs cipher operations from the hook events, expands
//! the PII profile into a dictionary of transformed needles and then looks
//! for those needles in every channel, either in the clear or inside the
//! plaintext of an operation whose ciphertext was observed on the wire.
//!
//! ```no_run
//! use covertscope::{ingest, pipeline, report};
//!
//! let bundle = ingest::ingest_bundle("run-0".as_ref())?.bundle;
//! let report = pipeline::analyze_corpus(&[bundle], &pipeline::InspectOptions::default())?;
//! let json = report::render_report(&report, report::Format::Json)?;
//! # Ok::<(), Box<dyn std::error::Error>>(())
//! ```

pub mod audit;
pub mod codec;
pub mod cryptolog;
pub mod error;
pub mod ingest;
pub mod inspector;
pub mod needles;
pub mod pipeline;
pub mod report;
pub mod search;

pub use error::{Error, Result};
