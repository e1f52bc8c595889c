//! JSON and markdown output.

use std::fmt::Write as _;
use std::str::FromStr;

use super::CorpusReport;
use crate::error::{Error, Result};
use crate::inspector::ChannelProtocol;
use crate::needles::ContentColumn;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Json,
    Markdown,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(Format::Json),
            "markdown" | "md" => Ok(Format::Markdown),
            _ => Err(Error::UnknownFormat(s.to_string())),
        }
    }
}

/// Renders the report. JSON objects have their keys sorted, so equal
/// reports render to identical bytes.
pub fn render_report(report: &CorpusReport, format: Format) -> Result<Vec<u8>> {
    match format {
        Format::Json => {
            // serde_json::Value keeps object keys in a BTreeMap
            let value = serde_json::to_value(report)?;
            let mut out = serde_json::to_vec_pretty(&value)?;
            out.push(b'\n');
            Ok(out)
        }
        Format::Markdown => Ok(markdown(report).into_bytes()),
    }
}

pub fn parse_report(bytes: &[u8]) -> Result<CorpusReport> {
    Ok(serde_json::from_slice(bytes)?)
}

/// 2 when the report holds a flagged weakness or a flagged amplification
/// ratio, 0 otherwise.
pub fn exit_code(report: &CorpusReport) -> i32 {
    let weak = report.weaknesses.iter().any(|w| !w.informational);
    let amp = report.amplification.iter().any(|a| a.result.flagged);
    if weak || amp {
        2
    } else {
        0
    }
}

fn protocol_title(p: ChannelProtocol) -> &'static str {
    match p {
        ChannelProtocol::Http => "HTTP",
        ChannelProtocol::Https => "HTTPS",
        ChannelProtocol::NonHttp => "Non-HTTP",
        ChannelProtocol::NetworkWide => "Overall",
    }
}

fn cell(text: &str) -> String {
    text.replace('|', "\\|")
}

fn markdown(r: &CorpusReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# Inspection report\n");
    let _ = writeln!(s, "Schema {}. {} apps, {} runs.\n", r.schema_version, r.apps.len(), r.runs.len());

    let _ = writeln!(s, "## Apps\n");
    let _ = writeln!(s, "| App | Version | Runs | Leaks | Custom-encrypted | Flagged weaknesses |");
    let _ = writeln!(s, "|---|---|---:|---:|---:|---:|");
    for a in &r.apps {
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {} | {} |",
            cell(&a.app_id),
            a.app_version.as_deref().unwrap_or("-"),
            a.runs.len(),
            a.leaks,
            a.custom_encrypted_leaks,
            a.flagged_weaknesses
        );
    }

    let _ = writeln!(s, "\n## On-device information sent over the network\n");
    let _ = writeln!(s, "R = regular channel, C = custom encrypted.\n");
    let _ = writeln!(s, "| Data type | HTTPS R | HTTPS C | HTTP R | HTTP C | Non-HTTP R | Non-HTTP C | Network R | Network C | Overall |");
    let _ = writeln!(s, "|---|---:|---:|---:|---:|---:|---:|---:|---:|---:|");
    for row in &r.data_type_matrix {
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {} | {} | {} | {} | {} | {} |",
            cell(&row.data_type.label()),
            row.https.regular,
            row.https.custom,
            row.http.regular,
            row.http.custom,
            row.non_http.regular,
            row.non_http.custom,
            row.network_wide.regular,
            row.network_wide.custom,
            row.overall
        );
    }

    let _ = writeln!(s, "\n## Content types per protocol and channel\n");
    let mut header = String::from("| Protocol | Channel |");
    let mut rule = String::from("|---|---|");
    for c in ContentColumn::ALL {
        let _ = write!(header, " {} |", c.title());
        rule.push_str("---:|");
    }
    let _ = writeln!(s, "{header}\n{rule}");
    for row in &r.channel_matrix {
        let _ = write!(s, "| {} | {} |", protocol_title(row.protocol), row.channel.title());
        for c in ContentColumn::ALL {
            let _ = write!(s, " {} |", row.counts.get(c).copied().unwrap_or(0));
        }
        s.push('\n');
    }

    let _ = writeln!(s, "\n## Weaknesses\n");
    if r.weaknesses.is_empty() {
        let _ = writeln!(s, "None.");
    } else {
        let _ = writeln!(s, "| App | Subject | Kind | Algorithm | Exposure | Informational |");
        let _ = writeln!(s, "|---|---|---|---|---|---|");
        for w in &r.weaknesses {
            let subject = match &w.subject {
                crate::audit::Subject::Operation { run_id, device_id, op_id } => format!("{run_id}/{device_id} op {op_id}"),
                crate::audit::Subject::Key { key_digest } => format!("key {}", &key_digest[..key_digest.len().min(16)]),
            };
            let exposure: Vec<String> = w.exposure.iter().map(|e| e.to_string()).collect();
            let _ = writeln!(
                s,
                "| {} | {} | {} | {} | {} | {} |",
                cell(&w.app_id),
                cell(&subject),
                w.kind.as_str(),
                cell(&w.algorithm),
                exposure.join(", "),
                if w.informational { "yes" } else { "no" }
            );
        }
    }

    let _ = writeln!(s, "\n## UDP amplification\n");
    if r.amplification.is_empty() {
        let _ = writeln!(s, "None measured.");
    } else {
        let _ = writeln!(s, "| App | Run | Destination | Mode | Sent | Received | Ratio | Status | Flagged |");
        let _ = writeln!(s, "|---|---|---|---|---:|---:|---|---|---|");
        for a in &r.amplification {
            let ratio = a.result.ratio.map_or("-".to_string(), |q| format!("{}/{}", q.numerator, q.denominator));
            let _ = writeln!(
                s,
                "| {} | {} | {} | {:?} | {} | {} | {} | {:?} | {} |",
                cell(&a.app_id),
                cell(&a.run_id),
                a.result.destination,
                a.result.mode,
                a.result.sent_bytes,
                a.result.received_bytes,
                ratio,
                a.result.status,
                if a.result.flagged { "yes" } else { "no" }
            );
        }
    }

    let _ = writeln!(s, "\n## Shared-storage files\n");
    if r.covert_files.is_empty() {
        let _ = writeln!(s, "None.");
    } else {
        let _ = writeln!(s, "| Path | Writers | Readers | Cross-app | PII | Custom-encrypted |");
        let _ = writeln!(s, "|---|---|---|---|---|---|");
        for f in &r.covert_files {
            let join = |v: &std::collections::BTreeSet<String>| v.iter().cloned().collect::<Vec<_>>().join(", ");
            let pii: Vec<String> = f.pii_types.iter().map(|t| t.label()).collect();
            let _ = writeln!(
                s,
                "| {} | {} | {} | {} | {} | {} |",
                cell(&f.path),
                cell(&join(&f.writers)),
                cell(&join(&f.readers)),
                if f.cross_app { "yes" } else { "no" },
                cell(&pii.join(", ")),
                if f.custom_encrypted { "yes" } else { "no" }
            );
        }
    }

    let _ = writeln!(s, "\n## Recipients of custom-encrypted PII\n");
    if r.host_ranking.is_empty() {
        let _ = writeln!(s, "None.");
    } else {
        let _ = writeln!(s, "| Host | Apps | Data types |");
        let _ = writeln!(s, "|---|---:|---|");
        for h in &r.host_ranking {
            let types: Vec<String> = h.data_types.iter().map(|t| t.label()).collect();
            let _ = writeln!(s, "| {} | {} | {} |", cell(&h.host), h.apps, cell(&types.join(", ")));
        }
    }

    let downgrades: Vec<_> = r.runs.iter().flat_map(|run| &run.downgrades).collect();
    let _ = writeln!(s, "\n## Credentials leaving HTTPS\n");
    if downgrades.is_empty() {
        let _ = writeln!(s, "None.");
    } else {
        let _ = writeln!(s, "| App | Run | Kind | Field | HTTPS host | Later channel | Later host | Custom-encrypted |");
        let _ = writeln!(s, "|---|---|---|---|---|---|---|---|");
        for d in downgrades {
            let _ = writeln!(
                s,
                "| {} | {} | {:?} | {} | {} | {} | {} | {} |",
                cell(&d.app_id),
                cell(&d.run_id),
                d.kind,
                cell(&d.key_name),
                cell(&d.first_seen.host),
                d.later_seen.kind,
                cell(&d.later_seen.host),
                if d.later_seen.custom_encrypted { "yes" } else { "no" }
            );
        }
    }

    if !r.notes.is_empty() || r.runs.iter().any(|run| !run.notes.is_empty()) {
        let _ = writeln!(s, "\n## Notes\n");
        for n in &r.notes {
            let _ = writeln!(s, "- {n}");
        }
        for run in &r.runs {
            for n in &run.notes {
                let _ = writeln!(s, "- {}/{}: {n}", run.app_id, run.run_id);
            }
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::super::tests::{finding, run};
    use super::super::{aggregate_findings, CorpusExtras};
    use super::*;
    use crate::audit::{Subject, WeaknessFlag, WeaknessKind};
    use crate::inspector::LocationKind;
    use crate::needles::KnownType;

    #[test]
    fn json_is_stable_and_round_trips() {
        let mut a = run("a", "r");
        a.findings.push(finding("a", KnownType::DeviceId, LocationKind::Http, "h", true));
        let rep = aggregate_findings(vec![a], CorpusExtras::default()).unwrap();
        let one = render_report(&rep, Format::Json).unwrap();
        let two = render_report(&rep, Format::Json).unwrap();
        assert_eq!(one, two);
        assert_eq!(parse_report(&one).unwrap(), rep);
        assert!(String::from_utf8(render_report(&rep, Format::Markdown).unwrap()).unwrap().contains("| Device ID |"));
    }

    #[test]
    fn exit_code_follows_flags() {
        let mut a = run("a", "r");
        let rep = aggregate_findings(vec![a.clone()], CorpusExtras::default()).unwrap();
        assert_eq!(exit_code(&rep), 0);
        a.weaknesses.push(WeaknessFlag {
            app_id: "a".into(),
            subject: Subject::Operation { run_id: "r".into(), device_id: "dev".into(), op_id: 0 },
            kind: WeaknessKind::WeakCipherDes,
            algorithm: "DES/ECB".into(),
            exposure: Default::default(),
            informational: false,
            extended: false,
        });
        let rep = aggregate_findings(vec![a], CorpusExtras::default()).unwrap();
        assert_eq!(exit_code(&rep), 2);
    }

    #[test]
    fn unknown_format_is_an_error() {
        assert!(matches!("yaml".parse::<Format>(), Err(Error::UnknownFormat(_))));
        assert_eq!("JSON".parse::<Format>().unwrap(), Format::Json);
    }
}
