//! Compares an inspector report with a bundle's sidecar.

use std::collections::BTreeMap;

use covertscope::report::{CorpusReport, RunReport};
use serde::Serialize;

use crate::expected::Expected;
use crate::transform::{self, Step};

/// Multiset comparison of one finding family.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Score {
    pub expected: usize,
    pub reported: usize,
    pub matched: usize,
    pub missing: Vec<String>,
    pub unexpected: Vec<String>,
}

impl Score {
    fn compare(mut expected: Vec<String>, reported: Vec<String>) -> Score {
        let (n_exp, n_rep) = (expected.len(), reported.len());
        let mut unexpected = Vec::new();
        for r in reported {
            match expected.iter().position(|e| *e == r) {
                Some(i) => {
                    expected.swap_remove(i);
                }
                None => unexpected.push(r),
            }
        }
        expected.sort();
        unexpected.sort();
        Score { expected: n_exp, reported: n_rep, matched: n_rep - unexpected.len(), missing: expected, unexpected }
    }

    pub fn recall(&self) -> f64 {
        if self.expected == 0 {
            1.0
        } else {
            self.matched as f64 / self.expected as f64
        }
    }

    pub fn precision(&self) -> f64 {
        if self.reported == 0 {
            1.0
        } else {
            self.matched as f64 / self.reported as f64
        }
    }

    pub fn is_exact(&self) -> bool {
        self.missing.is_empty() && self.unexpected.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Scorecard {
    pub leaks: Score,
    pub credentials: Score,
    pub downgrades: Score,
    pub key_transmissions: Score,
    pub covert_files: Score,
    pub amplification: Score,
    pub weaknesses: Score,
    pub operations: Score,
}

impl Scorecard {
    pub fn families(&self) -> [(&'static str, &Score); 8] {
        [
            ("leaks", &self.leaks),
            ("credentials", &self.credentials),
            ("downgrades", &self.downgrades),
            ("key_transmissions", &self.key_transmissions),
            ("covert_files", &self.covert_files),
            ("amplification", &self.amplification),
            ("weaknesses", &self.weaknesses),
            ("operations", &self.operations),
        ]
    }

    pub fn is_exact(&self) -> bool {
        self.families().iter().all(|(_, s)| s.is_exact())
    }
}

fn name<T: Serialize>(v: &T) -> String {
    match serde_json::to_value(v) {
        Ok(serde_json::Value::String(s)) => s,
        Ok(other) => other.to_string(),
        Err(_) => String::new(),
    }
}

fn pattern(chain: &[Step], value: &str) -> String {
    hex::encode(transform::apply(chain, value.as_bytes()))
}

/// Scores one run. `corpus` supplies corpus-level results (covert files,
/// key flags); only entries of the run's app are considered. Offline
/// amplification results are flagged at `threshold`.
pub fn score_run(expected: &Expected, run: &RunReport, corpus: &CorpusReport, threshold: f64) -> Scorecard {
    let values: BTreeMap<&str, &str> = expected.leaks.iter().map(|l| (l.pii_type.as_str(), l.value.as_str())).collect();

    let exp_leaks = expected
        .leaks
        .iter()
        .map(|l| {
            format!(
                "{} via {} to {} custom={} chain={:?} pattern={}",
                l.pii_type,
                l.channel,
                l.host,
                l.custom_encrypted,
                l.chain_algorithms,
                pattern(&l.needle_chain, &l.value)
            )
        })
        .collect();
    let found_leaks = run
        .findings
        .iter()
        .map(|f| {
            let label = f.pii_type.label();
            let steps: Vec<Step> = f.needle_chain.iter().filter_map(|t| serde_json::from_value(serde_json::to_value(t).ok()?).ok()).collect();
            let value = values.get(label.as_str()).copied().unwrap_or("");
            format!(
                "{} via {} to {} custom={} chain={:?} pattern={}",
                label,
                name(&f.location.kind),
                f.host,
                f.custom_encrypted,
                f.chain_algorithms,
                pattern(&steps, value)
            )
        })
        .collect();

    let credentials = Score::compare(
        expected
            .credentials
            .iter()
            .map(|c| format!("{} {} as {} via {} to {} custom={}", c.kind, c.key_name, c.structure, c.channel, c.host, c.custom_encrypted))
            .collect(),
        run.credentials
            .iter()
            .map(|c| {
                format!(
                    "{} {} as {} via {} to {} custom={}",
                    name(&c.kind),
                    c.key_name,
                    name(&c.structure),
                    name(&c.location.kind),
                    c.host,
                    c.custom_encrypted
                )
            })
            .collect(),
    );

    let downgrades = Score::compare(
        expected
            .downgrades
            .iter()
            .map(|d| format!("{} {} later via {} custom={}", d.kind, d.key_name, d.later_channel, d.later_custom))
            .collect(),
        run.downgrades
            .iter()
            .map(|d| format!("{} {} later via {} custom={}", name(&d.kind), d.key_name, name(&d.later_seen.kind), d.later_seen.custom_encrypted))
            .collect(),
    );

    let key_transmissions = Score::compare(
        expected.key_transmissions.iter().map(|k| format!("{} to {} as {}", k.channel, k.host, k.encoding)).collect(),
        run.key_transmissions.iter().map(|k| format!("{} to {} as {}", name(&k.channel), k.host, name(&k.encoding))).collect(),
    );

    let app = expected.app_id.as_str();
    let covert_files = Score::compare(
        expected
            .covert_files
            .iter()
            .map(|c| format!("{} w={:?} r={:?} pii={:?} custom={}", c.path, c.writers, c.readers, c.pii_types, c.custom_encrypted))
            .collect(),
        corpus
            .covert_files
            .iter()
            .filter(|c| c.writers.contains(app) || c.readers.contains(app))
            .map(|c| {
                let pii: std::collections::BTreeSet<String> = c.pii_types.iter().map(|t| t.label()).collect();
                format!("{} w={:?} r={:?} pii={:?} custom={}", c.path, c.writers, c.readers, pii, c.custom_encrypted)
            })
            .collect(),
    );

    let amplification = Score::compare(
        expected
            .amplification
            .iter()
            .map(|a| format!("{} sent={} received={} flagged={}", a.destination, a.sent, a.received, a.flagged(threshold)))
            .collect(),
        run.amplification
            .iter()
            .map(|a| format!("{} sent={} received={} flagged={}", a.destination, a.sent_bytes, a.received_bytes, a.flagged))
            .collect(),
    );

    let weaknesses = Score::compare(
        expected.weaknesses.clone(),
        corpus.weaknesses.iter().filter(|w| w.app_id == app).map(|w| name(&w.kind)).collect(),
    );

    let operations = Score::compare(
        expected
            .operations
            .iter()
            .map(|o| format!("{} depth={} pt={} ct={}", o.label, o.depth, o.plaintext_len, o.ciphertext_len))
            .collect(),
        run.operations
            .iter()
            .map(|o| format!("{} depth={} pt={} ct={}", o.algorithm, o.depth, o.plaintext_len, o.ciphertext_len))
            .collect(),
    );

    Scorecard {
        leaks: Score::compare(exp_leaks, found_leaks),
        credentials,
        downgrades,
        key_transmissions,
        covert_files,
        amplification,
        weaknesses,
        operations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn multiset_comparison() {
        let s = Score::compare(vec!["a".into(), "a".into(), "b".into()], vec!["a".into(), "c".into()]);
        assert_eq!(s.matched, 1);
        assert_eq!(s.missing, vec!["a".to_string(), "b".to_string()]);
        assert_eq!(s.unexpected, vec!["c".to_string()]);
        assert!((s.recall() - 1.0 / 3.0).abs() < 1e-12);
        assert!((s.precision() - 0.5).abs() < 1e-12);
    }
}
