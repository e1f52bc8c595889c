//! Shared-storage files used to pass data between apps.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{LeakFinding, LocationKind};
use crate::ingest::{is_shared_storage, FileOp, FileOpKind};
use crate::needles::DataType;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CovertFileReport {
    /// Path relative to the shared-storage root.
    pub path: String,
    pub writers: BTreeSet<String>,
    /// Apps that opened or read the file.
    pub readers: BTreeSet<String>,
    /// Read or opened by an app other than a writer.
    pub cross_app: bool,
    pub pii_types: BTreeSet<DataType>,
    pub custom_encrypted: bool,
}

/// Shared-storage files written during the analysed runs. `file_ops` pairs
/// an app id with one run's file operations; `findings` supplies the PII
/// located in write buffers. A file is cross-app when some app other than
/// its writers opened or read it.
pub fn detect_covert_files(file_ops: &[(&str, &[FileOp])], findings: &[LeakFinding]) -> Vec<CovertFileReport> {
    let mut writers: BTreeMap<&str, BTreeSet<String>> = BTreeMap::new();
    let mut readers: BTreeMap<&str, BTreeSet<String>> = BTreeMap::new();
    for (app, ops) in file_ops {
        for op in ops.iter() {
            match op.kind {
                FileOpKind::Write => {
                    writers.entry(&op.path).or_default().insert(app.to_string());
                }
                FileOpKind::Rename | FileOpKind::Move => {
                    if let Some(t) = &op.target {
                        writers.entry(t).or_default().insert(app.to_string());
                    }
                }
                FileOpKind::Open | FileOpKind::Read => {
                    readers.entry(&op.path).or_default().insert(app.to_string());
                }
                FileOpKind::Remove => {}
            }
        }
    }
    let mut pii: BTreeMap<&str, (BTreeSet<DataType>, bool)> = BTreeMap::new();
    for f in findings.iter().filter(|f| f.location.kind == LocationKind::File) {
        if let Some(p) = &f.location.path {
            let e = pii.entry(p).or_default();
            e.0.insert(f.pii_type.clone());
            e.1 |= f.custom_encrypted;
        }
    }
    writers
        .into_iter()
        .filter(|(path, _)| is_shared_storage(path))
        .map(|(path, writers)| {
            let readers = readers.remove(path).unwrap_or_default();
            let cross_app = readers.iter().any(|r| !writers.contains(r));
            let (pii_types, custom_encrypted) = pii.remove(path).unwrap_or_default();
            CovertFileReport { path: path.to_string(), writers, readers, cross_app, pii_types, custom_encrypted }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn op(kind: FileOpKind, path: &str) -> FileOp {
        FileOp { ts: 0.0, kind, path: path.into(), buffer: None, target: None }
    }

    #[test]
    fn cross_app_needs_another_reader() {
        let a = [op(FileOpKind::Write, ".cc/x"), op(FileOpKind::Write, "/data/data/a/f")];
        let b = [op(FileOpKind::Open, ".cc/x")];
        let single = detect_covert_files(&[("a", &a)], &[]);
        assert_eq!(single.len(), 1);
        assert!(!single[0].cross_app);
        let both = detect_covert_files(&[("a", &a), ("b", &b)], &[]);
        assert!(both[0].cross_app);
        assert_eq!(both[0].readers, ["b".to_string()].into());
    }
}
