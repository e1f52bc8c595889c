//! Security weakness checks: weak ciphers and key handling, hardcoded keys
//! and UDP amplification.

pub mod amplification;
pub mod hardcoded;
pub mod weak;

pub use amplification::{
    compute_amplification_offline, probe_amplification_active, replay_set_from_flows, AmpMode, AmpStatus,
    AmplificationResult, ProbeConfig, Ratio, ReplayItem, DEFAULT_CONCURRENCY, DEFAULT_THRESHOLD, DEFAULT_WAIT, EXCLUDED_PORTS,
};
pub use hardcoded::{find_hardcoded_keys, HardcodedMatch, KeyEncoding};
pub use weak::{flag_keys, flag_weak_crypto, RunScope, Subject, WeaknessFlag, WeaknessKind};
