//! Scan result rendering.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::discovery::Partition;
use crate::id::{parse_swhid, NodeId};
use crate::tree::{MerkleNode, SourceTree};

/// How report keys are spelled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PathStyle {
    /// Scan root joined with the relative path.
    #[default]
    Absolute,
    /// `./`-prefixed, relative to the scan root.
    Relative,
}

/// Value of one JSON report entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportEntry {
    pub known: bool,
    pub swhid: String,
}

fn render_key(tree: &SourceTree, node: &MerkleNode, style: PathStyle) -> String {
    let mut key = match style {
        PathStyle::Absolute => tree.root_path().join(node.path()).to_string_lossy().into_owned(),
        PathStyle::Relative => Path::new(".").join(node.path()).to_string_lossy().into_owned(),
    };
    if node.is_dir() && !key.ends_with('/') {
        key.push('/');
    }
    key
}

/// One entry per scanned path, files and directories alike.
pub fn report_entries(partition: &Partition, tree: &SourceTree, style: PathStyle) -> BTreeMap<String, ReportEntry> {
    tree.root()
        .visit()
        .map(|node| {
            let entry = ReportEntry {
                known: partition.known.contains(node.path()),
                swhid: node.id().to_string(),
            };
            (render_key(tree, node, style), entry)
        })
        .collect()
}

/// Pretty-printed JSON object keyed by path, keys sorted.
pub fn render_json(partition: &Partition, tree: &SourceTree, style: PathStyle) -> String {
    let entries = report_entries(partition, tree, style);
    serde_json::to_string_pretty(&entries).expect("report entries always serialize")
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("report is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("entry {key:?}: {message}")]
    Entry { key: String, message: String },
}

/// Rebuilds a partition from a JSON report. `prefix` is stripped from keys
/// (the scan root for absolute reports, `.` for relative ones).
pub fn parse_json_report(text: &str, prefix: &Path) -> Result<Partition, ReportError> {
    let entries: BTreeMap<String, ReportEntry> = serde_json::from_str(text)?;
    let mut partition = Partition::default();
    for (key, entry) in entries {
        let bad = |message: String| ReportError::Entry {
            key: key.clone(),
            message,
        };
        let id: NodeId = parse_swhid(&entry.swhid).map_err(|e| bad(e.to_string()))?;
        if id.is_dir() != key.ends_with('/') {
            return Err(bad("directory keys, and only those, end with '/'".into()));
        }
        let rel = Path::new(&key)
            .strip_prefix(prefix)
            .map_err(|_| bad(format!("not under {}", prefix.display())))?
            .to_path_buf();
        if let Some(previous) = partition.by_id.insert(id, entry.known) {
            if previous != entry.known {
                return Err(bad("same id reported with two statuses".into()));
            }
        }
        if entry.known {
            partition.known.insert(rel);
        } else {
            partition.unknown.insert(rel);
        }
    }
    Ok(partition)
}

fn marker(known: bool) -> &'static str {
    if known {
        "[known]"
    } else {
        "[unknown]"
    }
}

/// Whether every path in the subtree shares one status; `None` if mixed.
fn uniform(node: &MerkleNode, partition: &Partition, memo: &mut BTreeMap<PathBuf, Option<bool>>) -> Option<bool> {
    if let Some(v) = memo.get(node.path()) {
        return *v;
    }
    let own = partition.known.contains(node.path());
    let mut result = Some(own);
    for child in node.children() {
        if uniform(child, partition, memo) != Some(own) {
            result = None;
        }
    }
    memo.insert(node.path().to_path_buf(), result);
    result
}

/// `ls -R`-like listing, two spaces of indent per level. With `collapse`,
/// a directory whose whole subtree shares one status is printed as a single
/// line carrying the count of hidden entries.
pub fn render_text(partition: &Partition, tree: &SourceTree, collapse: bool, style: PathStyle) -> String {
    let mut out = String::new();
    let mut memo = BTreeMap::new();
    let mut stack: Vec<(&MerkleNode, usize)> = vec![(tree.root(), 0)];
    while let Some((node, depth)) = stack.pop() {
        let known = partition.known.contains(node.path());
        let label = if depth == 0 {
            render_key(tree, node, style)
        } else {
            let mut name = String::from_utf8_lossy(node.name()).into_owned();
            if node.is_dir() {
                name.push('/');
            }
            name
        };
        let indent = "  ".repeat(depth);
        if collapse && node.is_dir() && !node.children().is_empty() && uniform(node, partition, &mut memo).is_some() {
            let hidden = node.visit().count() - 1;
            let _ = writeln!(out, "{indent}{label} ({hidden} entries) {}", marker(known));
            continue;
        }
        let _ = writeln!(out, "{indent}{label} {}", marker(known));
        stack.extend(node.children().iter().rev().map(|c| (c, depth + 1)));
    }
    out
}

/// Paths present in the tree but missing from a partition, and vice versa.
pub fn coverage_gaps(partition: &Partition, tree: &SourceTree) -> (BTreeSet<PathBuf>, BTreeSet<PathBuf>) {
    let scanned: BTreeSet<PathBuf> = tree.root().visit().map(|n| n.path().to_path_buf()).collect();
    let reported: BTreeSet<PathBuf> = partition.known.union(&partition.unknown).cloned().collect();
    (
        scanned.difference(&reported).cloned().collect(),
        reported.difference(&scanned).cloned().collect(),
    )
}
