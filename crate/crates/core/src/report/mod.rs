//! Corpus-level aggregation of per-run results and report rendering.

mod render;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

pub use render::{exit_code, parse_report, render_report, Format};

use crate::audit::{AmplificationResult, WeaknessFlag};
use crate::cryptolog::{Direction, KeyRecord};
use crate::error::{Error, Result};
use crate::inspector::{
    classify_channel, ChannelProtocol, CovertFileReport, CredentialFinding, CredentialKind, DowngradeReport, KeyTransmission,
    LeakFinding, Location, LocationKind, MediaFinding,
};
use crate::needles::{Category, ContentColumn, DataType, KnownType, Protection, Purpose};

/// Version of the JSON layout produced by [`render_report`].
pub const SCHEMA_VERSION: &str = "1.0.0";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperationSummary {
    pub op_id: usize,
    pub algorithm: String,
    pub direction: Direction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key_digest: Option<String>,
    pub plaintext_len: usize,
    pub ciphertext_len: usize,
    pub depth: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_op: Option<usize>,
    pub children: Vec<usize>,
    pub orphan: bool,
    pub incomplete: bool,
    pub nonsdk: bool,
    pub anomaly: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub first_ts: f64,
    /// Where the ciphertext was located.
    pub seen_in: Vec<Location>,
}

/// Everything found in one bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub app_id: String,
    pub run_id: String,
    pub device_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub app_version: Option<String>,
    pub needle_count: usize,
    pub findings: Vec<LeakFinding>,
    pub credentials: Vec<CredentialFinding>,
    pub downgrades: Vec<DowngradeReport>,
    pub key_transmissions: Vec<KeyTransmission>,
    /// Media-looking payloads that match no device sample.
    pub unmatched_media: Vec<MediaFinding>,
    pub operations: Vec<OperationSummary>,
    pub weaknesses: Vec<WeaknessFlag>,
    pub amplification: Vec<AmplificationResult>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunId {
    pub run_id: String,
    pub device_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppSummary {
    pub app_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub app_version: Option<String>,
    pub runs: Vec<RunId>,
    pub leaks: usize,
    pub custom_encrypted_leaks: usize,
    pub data_types: BTreeSet<DataType>,
    pub flagged_weaknesses: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelCell {
    pub regular: usize,
    pub custom: usize,
}

/// One data type: apps sending it per protocol, in the clear and under
/// custom encryption.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataTypeRow {
    pub data_type: DataType,
    pub category: Category,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub protection: Option<Protection>,
    pub purpose: Purpose,
    pub https: ChannelCell,
    pub http: ChannelCell,
    pub non_http: ChannelCell,
    pub network_wide: ChannelCell,
    /// Apps sending it at all; an app using both channels counts once.
    pub overall: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelRow {
    Regular,
    CustomEncrypted,
    CustomForSomeHosts,
    OnlyCustomEncrypted,
}

impl ChannelRow {
    pub const ALL: [ChannelRow; 4] =
        [ChannelRow::Regular, ChannelRow::CustomEncrypted, ChannelRow::CustomForSomeHosts, ChannelRow::OnlyCustomEncrypted];

    pub fn title(self) -> &'static str {
        match self {
            ChannelRow::Regular => "Regular",
            ChannelRow::CustomEncrypted => "Custom Encrypted",
            ChannelRow::CustomForSomeHosts => "Custom Encrypted for Some Hosts",
            ChannelRow::OnlyCustomEncrypted => "Only Custom Encrypted",
        }
    }
}

/// Apps per content column for one protocol and channel class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelMatrixRow {
    pub protocol: ChannelProtocol,
    pub channel: ChannelRow,
    pub counts: BTreeMap<ContentColumn, usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HostRank {
    pub host: String,
    pub apps: usize,
    pub data_types: BTreeSet<DataType>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AmplificationEntry {
    pub app_id: String,
    pub run_id: String,
    pub device_id: String,
    pub result: AmplificationResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusReport {
    pub schema_version: String,
    pub apps: Vec<AppSummary>,
    pub data_type_matrix: Vec<DataTypeRow>,
    pub channel_matrix: Vec<ChannelMatrixRow>,
    pub weaknesses: Vec<WeaknessFlag>,
    pub amplification: Vec<AmplificationEntry>,
    pub covert_files: Vec<CovertFileReport>,
    /// Hosts receiving custom-encrypted PII, most apps first.
    pub host_ranking: Vec<HostRank>,
    pub key_records: Vec<KeyRecord>,
    pub runs: Vec<RunReport>,
    pub notes: Vec<String>,
}

/// Corpus-wide results that do not belong to a single run.
#[derive(Debug, Clone, Default)]
pub struct CorpusExtras {
    pub key_records: Vec<KeyRecord>,
    pub key_flags: Vec<WeaknessFlag>,
    pub covert_files: Vec<CovertFileReport>,
    pub active_amplification: Vec<AmplificationEntry>,
    pub notes: Vec<String>,
}

fn content_column(t: &DataType) -> ContentColumn {
    if t.is_password_input() {
        ContentColumn::Password
    } else {
        ContentColumn::for_data_type(t)
    }
}

fn network_outbound(f: &LeakFinding) -> bool {
    f.is_outbound() && f.location.kind != LocationKind::File
}

fn data_type_matrix(runs: &[RunReport]) -> Vec<DataTypeRow> {
    let mut per_app: BTreeMap<&str, Vec<(DataType, LocationKind, String, bool)>> = BTreeMap::new();
    for r in runs {
        let obs = per_app.entry(&r.app_id).or_default();
        obs.extend(
            r.findings
                .iter()
                .filter(|f| network_outbound(f))
                .map(|f| (f.pii_type.clone(), f.location.kind, f.host.clone(), f.custom_encrypted)),
        );
    }
    let mut cells: BTreeMap<(DataType, ChannelProtocol), (BTreeSet<&str>, BTreeSet<&str>)> = BTreeMap::new();
    for (app, obs) in &per_app {
        for s in classify_channel(obs.iter().cloned()) {
            let (reg, cus) = cells.entry((s.subject.clone(), s.protocol)).or_default();
            if !s.hosts_regular.is_empty() {
                reg.insert(app);
            }
            if !s.hosts_custom.is_empty() {
                cus.insert(app);
            }
        }
    }
    let mut types: BTreeSet<DataType> = KnownType::ALL.iter().map(|k| DataType::Known(*k)).collect();
    types.extend(cells.keys().map(|(t, _)| t.clone()));
    let mut types: Vec<DataType> = types.into_iter().collect();
    types.sort_by(|a, b| a.rank().cmp(&b.rank()).then_with(|| a.cmp(b)));
    types
        .into_iter()
        .map(|t| {
            let cell = |p| {
                cells
                    .get(&(t.clone(), p))
                    .map(|(r, c)| ChannelCell { regular: r.len(), custom: c.len() })
                    .unwrap_or_default()
            };
            let overall = cells
                .get(&(t.clone(), ChannelProtocol::NetworkWide))
                .map(|(r, c)| r.union(c).count())
                .unwrap_or(0);
            DataTypeRow {
                category: t.category(),
                protection: match &t {
                    DataType::Known(k) => Some(k.protection()),
                    DataType::Input(_) => None,
                },
                purpose: t.purpose(),
                https: cell(ChannelProtocol::Https),
                http: cell(ChannelProtocol::Http),
                non_http: cell(ChannelProtocol::NonHttp),
                network_wide: cell(ChannelProtocol::NetworkWide),
                overall,
                data_type: t,
            }
        })
        .collect()
}

fn channel_matrix(runs: &[RunReport]) -> Vec<ChannelMatrixRow> {
    type Subject = (ContentColumn, String);
    let mut per_app: BTreeMap<&str, Vec<(Subject, LocationKind, String, bool)>> = BTreeMap::new();
    for r in runs {
        let obs = per_app.entry(&r.app_id).or_default();
        for f in r.findings.iter().filter(|f| network_outbound(f)) {
            obs.push(((content_column(&f.pii_type), f.pii_type.label()), f.location.kind, f.host.clone(), f.custom_encrypted));
        }
        for c in r.credentials.iter().filter(|c| c.location.direction == crate::inspector::FlowDirection::Outbound) {
            let col = if c.kind == CredentialKind::Password { ContentColumn::Password } else { ContentColumn::Token };
            obs.push(((col, c.value_digest.clone()), c.location.kind, c.host.clone(), c.custom_encrypted));
        }
        // a key on the wire exposes the custom channel it protects
        for k in &r.key_transmissions {
            obs.push(((ContentColumn::KeyTransmission, k.key_digest.clone()), k.channel, k.host.clone(), true));
        }
    }
    let mut apps: BTreeMap<(ChannelProtocol, ChannelRow, ContentColumn), BTreeSet<&str>> = BTreeMap::new();
    for (app, obs) in &per_app {
        for s in classify_channel(obs.iter().cloned()) {
            let col = s.subject.0;
            for row in ChannelRow::ALL {
                let hit = match row {
                    ChannelRow::Regular => s.is_regular(),
                    ChannelRow::CustomEncrypted => s.is_custom_encrypted(),
                    ChannelRow::CustomForSomeHosts => s.is_custom_for_some_hosts(),
                    ChannelRow::OnlyCustomEncrypted => s.is_only_custom(),
                };
                if hit {
                    apps.entry((s.protocol, row, col)).or_default().insert(app);
                }
            }
        }
    }
    let mut out = Vec::new();
    for protocol in [ChannelProtocol::Http, ChannelProtocol::Https, ChannelProtocol::NonHttp, ChannelProtocol::NetworkWide] {
        for channel in ChannelRow::ALL {
            let counts = ContentColumn::ALL
                .iter()
                .map(|&c| (c, apps.get(&(protocol, channel, c)).map_or(0, BTreeSet::len)))
                .collect();
            out.push(ChannelMatrixRow { protocol, channel, counts });
        }
    }
    out
}

fn host_ranking(runs: &[RunReport]) -> Vec<HostRank> {
    let mut hosts: BTreeMap<&str, (BTreeSet<&str>, BTreeSet<DataType>)> = BTreeMap::new();
    for r in runs {
        for f in r.findings.iter().filter(|f| f.custom_encrypted && network_outbound(f)) {
            let e = hosts.entry(&f.host).or_default();
            e.0.insert(&r.app_id);
            e.1.insert(f.pii_type.clone());
        }
    }
    let mut out: Vec<HostRank> = hosts
        .into_iter()
        .map(|(host, (apps, data_types))| HostRank { host: host.to_string(), apps: apps.len(), data_types })
        .collect();
    out.sort_by(|a, b| b.apps.cmp(&a.apps).then_with(|| a.host.cmp(&b.host)));
    out
}

/// Builds the corpus report. The result does not depend on the order of
/// `runs`. Runs of one app reporting different versions are rejected.
pub fn aggregate_findings(mut runs: Vec<RunReport>, extras: CorpusExtras) -> Result<CorpusReport> {
    runs.sort_by(|a, b| (&a.app_id, &a.run_id, &a.device_id).cmp(&(&b.app_id, &b.run_id, &b.device_id)));
    let mut apps: BTreeMap<&str, AppSummary> = BTreeMap::new();
    for r in &runs {
        let s = apps.entry(&r.app_id).or_insert_with(|| AppSummary {
            app_id: r.app_id.clone(),
            app_version: None,
            runs: Vec::new(),
            leaks: 0,
            custom_encrypted_leaks: 0,
            data_types: BTreeSet::new(),
            flagged_weaknesses: 0,
        });
        match (&s.app_version, &r.app_version) {
            (Some(a), Some(b)) if a != b => {
                return Err(Error::Consistency(format!(
                    "app `{}` reports version `{a}` and `{b}` in different runs",
                    r.app_id
                )))
            }
            (None, Some(b)) => s.app_version = Some(b.clone()),
            _ => {}
        }
        s.runs.push(RunId { run_id: r.run_id.clone(), device_id: r.device_id.clone() });
        let out: Vec<&LeakFinding> = r.findings.iter().filter(|f| f.is_outbound()).collect();
        s.leaks += out.len();
        s.custom_encrypted_leaks += out.iter().filter(|f| f.custom_encrypted).count();
        s.data_types.extend(out.iter().map(|f| f.pii_type.clone()));
        s.flagged_weaknesses += r.weaknesses.iter().filter(|w| !w.informational).count();
    }
    for f in extras.key_flags.iter().filter(|f| !f.informational) {
        if let Some(s) = apps.get_mut(f.app_id.as_str()) {
            s.flagged_weaknesses += 1;
        }
    }
    let apps: Vec<AppSummary> = apps.into_values().collect();

    let mut weaknesses: Vec<WeaknessFlag> = runs.iter().flat_map(|r| r.weaknesses.iter().cloned()).collect();
    weaknesses.extend(extras.key_flags);
    weaknesses.sort();
    weaknesses.dedup();

    let mut amplification: Vec<AmplificationEntry> = runs
        .iter()
        .flat_map(|r| {
            r.amplification.iter().map(|a| AmplificationEntry {
                app_id: r.app_id.clone(),
                run_id: r.run_id.clone(),
                device_id: r.device_id.clone(),
                result: a.clone(),
            })
        })
        .collect();
    amplification.extend(extras.active_amplification);
    amplification.sort();

    let mut covert_files = extras.covert_files;
    covert_files.sort_by(|a, b| a.path.cmp(&b.path));
    let mut key_records = extras.key_records;
    key_records.sort_by(|a, b| (&a.app_id, &a.key_digest).cmp(&(&b.app_id, &b.key_digest)));
    for k in &mut key_records {
        k.key.clear();
    }
    let mut notes = extras.notes;
    notes.sort();
    notes.dedup();

    Ok(CorpusReport {
        schema_version: SCHEMA_VERSION.to_string(),
        data_type_matrix: data_type_matrix(&runs),
        channel_matrix: channel_matrix(&runs),
        host_ranking: host_ranking(&runs),
        apps,
        weaknesses,
        amplification,
        covert_files,
        key_records,
        runs,
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inspector::FlowDirection;

    pub(crate) fn run(app: &str, run_id: &str) -> RunReport {
        RunReport {
            app_id: app.into(),
            run_id: run_id.into(),
            device_id: "dev".into(),
            app_version: None,
            needle_count: 0,
            findings: vec![],
            credentials: vec![],
            downgrades: vec![],
            key_transmissions: vec![],
            unmatched_media: vec![],
            operations: vec![],
            weaknesses: vec![],
            amplification: vec![],
            notes: vec![],
        }
    }

    pub(crate) fn finding(app: &str, t: KnownType, kind: LocationKind, host: &str, custom: bool) -> LeakFinding {
        LeakFinding {
            app_id: app.into(),
            run_id: "r".into(),
            device_id: "dev".into(),
            pii_type: DataType::Known(t),
            needle_id: 0,
            needle_chain: vec![],
            gps_tier: None,
            location: Location { kind, flow_id: Some(0), path: None, part: "raw".into(), direction: FlowDirection::Outbound, offset: 0 },
            host: host.into(),
            ts: 0.0,
            custom_encrypted: custom,
            encryption_chain: if custom { vec![0] } else { vec![] },
            chain_algorithms: if custom { vec!["AES/ECB".into()] } else { vec![] },
            plaintext_offset: custom.then_some(0),
            evidence: String::new(),
        }
    }

    fn row<'a>(r: &'a CorpusReport, t: KnownType) -> &'a DataTypeRow {
        r.data_type_matrix.iter().find(|x| x.data_type == DataType::Known(t)).unwrap()
    }

    #[test]
    fn single_regular_https_leak() {
        let mut a = run("a", "r");
        a.findings.push(finding("a", KnownType::DeviceId, LocationKind::Https, "h", false));
        let rep = aggregate_findings(vec![a], CorpusExtras::default()).unwrap();
        let r = row(&rep, KnownType::DeviceId);
        assert_eq!(r.https, ChannelCell { regular: 1, custom: 0 });
        assert_eq!(r.overall, 1);
    }

    #[test]
    fn both_channels_count_once_overall() {
        let mut a = run("a", "r");
        a.findings.push(finding("a", KnownType::AdvertisingId, LocationKind::Https, "h", false));
        a.findings.push(finding("a", KnownType::AdvertisingId, LocationKind::Https, "h2", true));
        let rep = aggregate_findings(vec![a], CorpusExtras::default()).unwrap();
        let r = row(&rep, KnownType::AdvertisingId);
        assert_eq!(r.https, ChannelCell { regular: 1, custom: 1 });
        assert_eq!(r.network_wide, ChannelCell { regular: 1, custom: 1 });
        assert_eq!(r.overall, 1);
    }

    #[test]
    fn empty_corpus_is_all_zero() {
        let rep = aggregate_findings(vec![], CorpusExtras::default()).unwrap();
        assert_eq!(rep.data_type_matrix.len(), 30);
        assert!(rep.data_type_matrix.iter().all(|r| r.overall == 0));
        assert!(rep.channel_matrix.iter().all(|r| r.counts.values().all(|&c| c == 0)));
        assert_eq!(rep.channel_matrix.len(), 16);
    }

    #[test]
    fn conflicting_versions_rejected() {
        let mut a = run("a", "r1");
        a.app_version = Some("1.0".into());
        let mut b = run("a", "r2");
        b.app_version = Some("2.0".into());
        assert!(matches!(aggregate_findings(vec![a, b], CorpusExtras::default()), Err(Error::Consistency(_))));
    }

    #[test]
    fn host_ranking_orders_by_apps_then_host() {
        let mut a = run("a", "r");
        a.findings.push(finding("a", KnownType::DeviceId, LocationKind::NonHttp, "z.example", true));
        a.findings.push(finding("a", KnownType::DeviceId, LocationKind::NonHttp, "b.example", true));
        let mut b = run("b", "r");
        b.findings.push(finding("b", KnownType::DeviceId, LocationKind::Http, "z.example", true));
        let rep = aggregate_findings(vec![b, a], CorpusExtras::default()).unwrap();
        let hosts: Vec<_> = rep.host_ranking.iter().map(|h| (h.host.as_str(), h.apps)).collect();
        assert_eq!(hosts, [("z.example", 2), ("b.example", 1)]);
    }
}
