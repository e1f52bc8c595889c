//! End-to-end analysis of bundles into a corpus report.

use std::collections::{BTreeMap, BTreeSet};

use crate::audit::{
    compute_amplification_offline, flag_keys, flag_weak_crypto, probe_amplification_active, replay_set_from_flows, ProbeConfig,
    RunScope, DEFAULT_THRESHOLD,
};
use crate::codec::digest_hex;
use crate::cryptolog::{
    assemble_operations, classify_key_fixedness, collect_key_observations, detect_nested_chains, nested_chains, CryptoOperation,
    KeyContext, KeyObservation,
};
use crate::error::Result;
use crate::ingest::{AnalysisBundle, FileOp};
use crate::inspector::{
    build_units, detect_covert_files, detect_key_transmission, detect_media_exfil, detect_token_downgrade, extract_credentials,
    match_ciphertext, plaintext_views, search_needles, EvidencePolicy, LocationKind, NeedleIndex, RunContext,
};
use crate::needles::build_needle_set;
use crate::report::{aggregate_findings, AmplificationEntry, CorpusExtras, CorpusReport, OperationSummary, RunReport};

#[derive(Debug, Clone)]
pub struct InspectOptions {
    /// Raw evidence excerpts instead of masked ones.
    pub unsafe_evidence: bool,
    /// Amplification ratio at or above which a destination is flagged.
    pub amp_threshold: f64,
    /// Replay recorded UDP payloads against their destinations.
    pub active_probe: Option<ProbeConfig>,
}

impl Default for InspectOptions {
    fn default() -> Self {
        InspectOptions { unsafe_evidence: false, amp_threshold: DEFAULT_THRESHOLD, active_probe: None }
    }
}

/// One bundle's report plus what corpus-level checks need from it.
#[derive(Debug, Clone)]
pub struct BundleResult {
    pub report: RunReport,
    pub key_observations: Vec<KeyObservation>,
    /// Channel kinds each key's ciphertext was seen on, by key digest.
    pub key_exposure: BTreeMap<String, BTreeSet<LocationKind>>,
    pub file_ops: Vec<FileOp>,
}

fn summarize(op: &CryptoOperation, seen_in: Vec<crate::inspector::Location>) -> OperationSummary {
    OperationSummary {
        op_id: op.op_id,
        algorithm: op.algorithm.label(),
        direction: op.direction,
        key_digest: op.key.as_deref().map(digest_hex),
        plaintext_len: op.plaintext.len(),
        ciphertext_len: op.ciphertext.len(),
        depth: op.depth,
        parent_op: op.parent_op,
        children: op.children.clone(),
        orphan: op.orphan,
        incomplete: op.incomplete,
        nonsdk: op.nonsdk,
        anomaly: op.anomaly,
        name: op.name.clone(),
        first_ts: op.first_ts,
        seen_in,
    }
}

pub fn analyze_bundle(bundle: &AnalysisBundle, opts: &InspectOptions) -> BundleResult {
    let mut notes: Vec<String> = bundle.warnings.clone();
    let index = NeedleIndex::new(build_needle_set(&bundle.profile));
    let mut ops = assemble_operations(&bundle.cipher_events);
    notes.extend(detect_nested_chains(&mut ops));
    let units = build_units(bundle);
    let (links, link_notes) = match_ciphertext(&ops, &units);
    notes.extend(link_notes);
    let views = plaintext_views(&ops, &links);
    let ctx = RunContext {
        bundle,
        units: &units,
        ops: &ops,
        links: &links,
        views: &views,
        policy: EvidencePolicy { unsafe_evidence: opts.unsafe_evidence },
    };

    let mut findings = search_needles(&ctx, &index);
    let (media, unmatched_media) = detect_media_exfil(&ctx);
    findings.extend(media);
    let mut credentials = extract_credentials(&ctx);
    let downgrades = detect_token_downgrade(&ctx, &credentials);
    for c in &mut credentials {
        c.secret.clear();
    }
    let key_transmissions = detect_key_transmission(&ctx);

    // exposure of an operation covers everything nested inside it
    let mut exposure: BTreeMap<usize, BTreeSet<LocationKind>> = BTreeMap::new();
    let mut seen_in: BTreeMap<usize, Vec<crate::inspector::Location>> = BTreeMap::new();
    for l in &links {
        let kind = units[l.unit].kind;
        seen_in.entry(l.op).or_default().push(ctx.location(l.unit, l.offset));
        for chain in nested_chains(&ops, l.op) {
            for op in chain {
                exposure.entry(op).or_default().insert(kind);
            }
        }
    }
    let scope = RunScope { app_id: &bundle.app_id, run_id: &bundle.run_id, device_id: &bundle.device_id };
    let weaknesses = flag_weak_crypto(scope, &ops, &exposure);
    let mut key_exposure: BTreeMap<String, BTreeSet<LocationKind>> = BTreeMap::new();
    for op in &ops {
        if let (Some(key), Some(kinds)) = (&op.key, exposure.get(&op.op_id)) {
            key_exposure.entry(digest_hex(key)).or_default().extend(kinds.iter().copied());
        }
    }

    let operations = ops
        .iter()
        .map(|op| summarize(op, seen_in.remove(&op.op_id).unwrap_or_default()))
        .collect();
    let amplification = compute_amplification_offline(&bundle.flows, opts.amp_threshold);

    BundleResult {
        report: RunReport {
            app_id: bundle.app_id.clone(),
            run_id: bundle.run_id.clone(),
            device_id: bundle.device_id.clone(),
            app_version: bundle.app_version.clone(),
            needle_count: index.needles().len(),
            findings,
            credentials,
            downgrades,
            key_transmissions,
            unmatched_media,
            operations,
            weaknesses,
            amplification,
            notes,
        },
        key_observations: collect_key_observations(bundle, &ops),
        key_exposure,
        file_ops: bundle.file_ops.clone(),
    }
}

/// Analyses every bundle and aggregates the corpus report. The report does
/// not depend on the order of `bundles`.
pub fn analyze_corpus(bundles: &[AnalysisBundle], opts: &InspectOptions) -> Result<CorpusReport> {
    let mut order: Vec<&AnalysisBundle> = bundles.iter().collect();
    order.sort_by(|a, b| (&a.app_id, &a.run_id, &a.device_id).cmp(&(&b.app_id, &b.run_id, &b.device_id)));
    let results: Vec<BundleResult> = order.iter().map(|b| analyze_bundle(b, opts)).collect();

    let mut kctx = KeyContext::default();
    let mut notes = Vec::new();
    for b in &order {
        kctx.devices.entry(b.app_id.clone()).or_default().insert(b.device_id.clone());
        if let Some(pkg) = &b.package_blobs {
            kctx.packages.entry(b.app_id.clone()).or_default().push(pkg);
        }
    }
    let observations: Vec<KeyObservation> = results.iter().flat_map(|r| r.key_observations.iter().cloned()).collect();
    let key_records = classify_key_fixedness(&observations, &kctx);
    let mut key_exposure: BTreeMap<(String, String), BTreeSet<LocationKind>> = BTreeMap::new();
    for r in &results {
        for (digest, kinds) in &r.key_exposure {
            key_exposure
                .entry((r.report.app_id.clone(), digest.clone()))
                .or_default()
                .extend(kinds.iter().copied());
        }
    }
    let key_flags = flag_keys(&key_records, &key_exposure);

    let file_ops: Vec<(&str, &[FileOp])> = results.iter().map(|r| (r.report.app_id.as_str(), r.file_ops.as_slice())).collect();
    let all_findings: Vec<_> = results.iter().flat_map(|r| r.report.findings.iter().cloned()).collect();
    let covert_files = detect_covert_files(&file_ops, &all_findings);

    let mut active_amplification = Vec::new();
    if let Some(cfg) = &opts.active_probe {
        for b in &order {
            let items = replay_set_from_flows(&b.flows);
            if items.is_empty() {
                continue;
            }
            for result in probe_amplification_active(&items, cfg) {
                active_amplification.push(AmplificationEntry {
                    app_id: b.app_id.clone(),
                    run_id: b.run_id.clone(),
                    device_id: b.device_id.clone(),
                    result,
                });
            }
        }
        notes.push(format!("active amplification probing waited {} s after the last resend", cfg.wait.as_secs_f64()));
    }

    aggregate_findings(
        results.into_iter().map(|r| r.report).collect(),
        CorpusExtras { key_records, key_flags, covert_files, active_amplification, notes },
    )
}
