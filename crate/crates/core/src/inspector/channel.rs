//! Regular versus custom-encrypted channel classification per protocol.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::LocationKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelProtocol {
    Http,
    Https,
    NonHttp,
    NetworkWide,
}

impl ChannelProtocol {
    pub const PER_PROTOCOL: [ChannelProtocol; 3] = [ChannelProtocol::Https, ChannelProtocol::Http, ChannelProtocol::NonHttp];

    /// `None` for file locations, which are not network channels.
    pub fn of(kind: LocationKind) -> Option<Self> {
        match kind {
            LocationKind::Http => Some(ChannelProtocol::Http),
            LocationKind::Https => Some(ChannelProtocol::Https),
            LocationKind::NonHttp => Some(ChannelProtocol::NonHttp),
            LocationKind::File => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelClass {
    Regular,
    CustomEncrypted,
}

/// Hosts receiving one subject over one protocol, in the clear and inside
/// custom encryption.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelSummary<K> {
    pub subject: K,
    pub protocol: ChannelProtocol,
    pub hosts_regular: BTreeSet<String>,
    pub hosts_custom: BTreeSet<String>,
}

impl<K> ChannelSummary<K> {
    /// Sent to some host without custom encryption and never with it.
    pub fn is_regular(&self) -> bool {
        !self.hosts_regular.is_empty() && self.hosts_custom.is_empty()
    }

    pub fn is_custom_encrypted(&self) -> bool {
        !self.hosts_custom.is_empty()
    }

    /// Some host receives it only inside custom encryption.
    pub fn is_custom_for_some_hosts(&self) -> bool {
        self.hosts_custom.difference(&self.hosts_regular).next().is_some()
    }

    pub fn is_only_custom(&self) -> bool {
        self.hosts_regular.is_empty() && !self.hosts_custom.is_empty()
    }

    pub fn has(&self, class: ChannelClass) -> bool {
        match class {
            ChannelClass::Regular => !self.hosts_regular.is_empty(),
            ChannelClass::CustomEncrypted => !self.hosts_custom.is_empty(),
        }
    }
}

/// One sighting: subject, location kind, host and whether it was inside
/// custom encryption.
pub type Observation<K> = (K, LocationKind, String, bool);

/// Groups sightings per (subject, protocol) and adds the pooled
/// network-wide summary of each subject. File sightings are ignored.
pub fn classify_channel<K: Ord + Clone>(observations: impl IntoIterator<Item = Observation<K>>) -> Vec<ChannelSummary<K>> {
    let mut groups: BTreeMap<(K, ChannelProtocol), (BTreeSet<String>, BTreeSet<String>)> = BTreeMap::new();
    for (subject, kind, host, custom) in observations {
        let Some(proto) = ChannelProtocol::of(kind) else { continue };
        for p in [proto, ChannelProtocol::NetworkWide] {
            let (regular, customs) = groups.entry((subject.clone(), p)).or_default();
            if custom {
                customs.insert(host.clone());
            } else {
                regular.insert(host.clone());
            }
        }
    }
    groups
        .into_iter()
        .map(|((subject, protocol), (hosts_regular, hosts_custom))| ChannelSummary { subject, protocol, hosts_regular, hosts_custom })
        .collect()
}
