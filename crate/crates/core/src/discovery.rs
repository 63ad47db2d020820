//! Known/unknown partitioning of a scanned tree against a knowledge base.
//!
//! The default strategy is layered discovery: a breadth-first walk from the
//! root that stops descending as soon as a directory is reported known,
//! since every descendant of a known directory is known as well. Every node
//! of the current frontier goes to the knowledge base in one batch.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::id::NodeId;
use crate::kb::{dedup, KbBackend, KbError};
use crate::tree::{MerkleNode, SourceTree};

#[derive(Debug, Error)]
pub enum DiscoveryError {
    #[error("knowledge base query failed: {0}")]
    Kb(#[from] KbError),
    #[error("knowledge base gave no answer for {0}")]
    MissingAnswer(NodeId),
}

/// Order in which nodes are submitted to the knowledge base.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub enum Strategy {
    #[default]
    Layered,
    Baseline,
    FileFirst,
    DirectoryFirst,
    Random(u64),
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::Layered => f.write_str("layered"),
            Strategy::Baseline => f.write_str("baseline"),
            Strategy::FileFirst => f.write_str("file_first"),
            Strategy::DirectoryFirst => f.write_str("directory_first"),
            Strategy::Random(seed) => write!(f, "random({seed})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown strategy {0:?}; expected layered, baseline, file_first, directory_first or random(SEED)")]
pub struct ParseStrategyError(String);

impl FromStr for Strategy {
    type Err = ParseStrategyError;

    /// Accepts the display form; `random:SEED` and `random` (seed 0) are
    /// accepted too.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ParseStrategyError(s.to_owned());
        Ok(match s {
            "layered" => Strategy::Layered,
            "baseline" => Strategy::Baseline,
            "file_first" | "file-first" => Strategy::FileFirst,
            "directory_first" | "directory-first" => Strategy::DirectoryFirst,
            "random" => Strategy::Random(0),
            _ => {
                let seed = s
                    .strip_prefix("random(")
                    .and_then(|r| r.strip_suffix(')'))
                    .or_else(|| s.strip_prefix("random:"))
                    .ok_or_else(err)?;
                Strategy::Random(seed.parse().map_err(|_| err())?)
            }
        })
    }
}

impl Serialize for Strategy {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Strategy {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// The known/unknown split of every scanned path.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Partition {
    pub known: BTreeSet<PathBuf>,
    pub unknown: BTreeSet<PathBuf>,
    pub by_id: BTreeMap<NodeId, bool>,
}

impl Partition {
    fn from_status(root: &MerkleNode, status: HashMap<NodeId, bool>) -> Self {
        let mut partition = Partition::default();
        for node in root.visit() {
            let path = node.path().to_path_buf();
            if status[&node.id()] {
                partition.known.insert(path);
            } else {
                partition.unknown.insert(path);
            }
        }
        partition.by_id = status.into_iter().collect();
        partition
    }

    /// Status of a root-relative path, if it was scanned.
    pub fn is_known(&self, path: &Path) -> Option<bool> {
        if self.known.contains(path) {
            Some(true)
        } else if self.unknown.contains(path) {
            Some(false)
        } else {
            None
        }
    }

    pub fn len(&self) -> usize {
        self.known.len() + self.unknown.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Counters and timing for one discovery run.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanStats {
    /// Distinct ids sent to the knowledge base.
    pub lookups: u64,
    /// Files plus directories, counting duplicates.
    pub tree_size: usize,
    pub distinct_nodes: usize,
    pub elapsed: Duration,
    pub strategy: Strategy,
    pub kb_label: String,
    /// Known directories with an unknown child, as seen by strategies that
    /// query below known directories.
    pub inconsistencies: usize,
}

/// Status bookkeeping shared by all strategies.
struct Resolver<'a> {
    kb: &'a dyn KbBackend,
    status: HashMap<NodeId, bool>,
    lookups: u64,
}

impl<'a> Resolver<'a> {
    fn new(kb: &'a dyn KbBackend, capacity: usize) -> Self {
        Self {
            kb,
            status: HashMap::with_capacity(capacity),
            lookups: 0,
        }
    }

    /// Queries the ids among `ids` that have no status yet.
    fn query(&mut self, ids: impl IntoIterator<Item = NodeId>) -> Result<(), DiscoveryError> {
        let pending: Vec<NodeId> = ids
            .into_iter()
            .filter(|id| !self.status.contains_key(id))
            .collect();
        let pending = dedup(&pending);
        if pending.is_empty() {
            return Ok(());
        }
        let answers = self.kb.knows(&pending)?;
        for id in &pending {
            let known = *answers.get(id).ok_or(DiscoveryError::MissingAnswer(*id))?;
            self.status.insert(*id, known);
        }
        self.lookups += pending.len() as u64;
        Ok(())
    }

    fn is_known(&self, node: &MerkleNode) -> bool {
        self.status[&node.id()]
    }

    /// Propagates a known directory's status to its whole subtree.
    fn mark_known(&mut self, node: &MerkleNode) {
        for descendant in node.visit() {
            self.status.entry(descendant.id()).or_insert(true);
        }
    }

    /// Breadth-first walk with pruning under known directories. With
    /// `dirs_only`, files are neither queried nor walked.
    fn walk_layers(&mut self, root: &MerkleNode, dirs_only: bool) -> Result<(), DiscoveryError> {
        let mut frontier = vec![root];
        while !frontier.is_empty() {
            self.query(frontier.iter().map(|n| n.id()))?;
            let mut next = Vec::new();
            for node in frontier {
                match (self.is_known(node), node.is_dir()) {
                    (true, true) => self.mark_known(node),
                    (false, true) => next.extend(
                        node.children()
                            .iter()
                            .filter(|c| !dirs_only || c.is_dir()),
                    ),
                    (_, false) => {}
                }
            }
            frontier = next;
        }
        Ok(())
    }
}

fn finish(
    tree: &SourceTree,
    kb: &dyn KbBackend,
    strategy: Strategy,
    started: Instant,
    resolver: Resolver<'_>,
    inconsistencies: usize,
) -> (Partition, ScanStats) {
    let stats = ScanStats {
        lookups: resolver.lookups,
        tree_size: tree.size(),
        distinct_nodes: tree.distinct_count(),
        elapsed: started.elapsed(),
        strategy,
        kb_label: kb.label().to_owned(),
        inconsistencies,
    };
    (Partition::from_status(tree.root(), resolver.status), stats)
}

/// Layered breadth-first discovery with subtree pruning.
pub fn layered_discovery(
    tree: &SourceTree,
    kb: &dyn KbBackend,
) -> Result<(Partition, ScanStats), DiscoveryError> {
    let started = Instant::now();
    let mut r = Resolver::new(kb, tree.distinct_count());
    r.walk_layers(tree.root(), false)?;
    Ok(finish(tree, kb, Strategy::Layered, started, r, 0))
}

/// Queries every distinct node once and keeps the raw answers.
pub fn baseline_discovery(
    tree: &SourceTree,
    kb: &dyn KbBackend,
) -> Result<(Partition, ScanStats), DiscoveryError> {
    let started = Instant::now();
    let mut r = Resolver::new(kb, tree.distinct_count());
    r.query(tree.root().visit().map(MerkleNode::id))?;
    let mut inconsistencies = 0;
    let mut checked = BTreeSet::new();
    for node in tree.root().visit() {
        if node.is_dir() && r.is_known(node) && checked.insert(node.id()) {
            if let Some(child) = node.children().iter().find(|c| !r.is_known(c)) {
                log::warn!(
                    "knowledge base is not Merkle-consistent: {} is known but {} is not",
                    node.id(),
                    child.id()
                );
                inconsistencies += 1;
            }
        }
    }
    Ok(finish(tree, kb, Strategy::Baseline, started, r, inconsistencies))
}

/// Marks every directory holding an unknown file (at any depth) unknown.
fn infer_unknown_dirs(node: &MerkleNode, status: &mut HashMap<NodeId, bool>) -> bool {
    if !node.is_dir() {
        return !status[&node.id()];
    }
    if status.get(&node.id()) == Some(&false) {
        return true;
    }
    let mut any_unknown = false;
    for child in node.children() {
        any_unknown |= infer_unknown_dirs(child, status);
    }
    if any_unknown {
        status.insert(node.id(), false);
    }
    any_unknown
}

fn file_first(r: &mut Resolver<'_>, root: &MerkleNode) -> Result<(), DiscoveryError> {
    r.query(root.visit().filter(|n| !n.is_dir()).map(MerkleNode::id))?;
    infer_unknown_dirs(root, &mut r.status);
    r.walk_layers(root, true)
}

fn directory_first(r: &mut Resolver<'_>, root: &MerkleNode) -> Result<(), DiscoveryError> {
    r.walk_layers(root, true)?;
    r.query(root.visit().filter(|n| !n.is_dir()).map(MerkleNode::id))
}

fn random_order(r: &mut Resolver<'_>, root: &MerkleNode, seed: u64) -> Result<(), DiscoveryError> {
    let mut nodes: HashMap<NodeId, &MerkleNode> = HashMap::new();
    let mut order = Vec::new();
    for node in root.visit() {
        if nodes.insert(node.id(), node).is_none() {
            order.push(node.id());
        }
    }
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    for id in order {
        if r.status.contains_key(&id) {
            continue;
        }
        r.query([id])?;
        let node = nodes[&id];
        if node.is_dir() && r.is_known(node) {
            r.mark_known(node);
        }
    }
    Ok(())
}

/// Runs discovery with the chosen strategy.
pub fn strategy_discovery(
    tree: &SourceTree,
    kb: &dyn KbBackend,
    strategy: Strategy,
) -> Result<(Partition, ScanStats), DiscoveryError> {
    let started = Instant::now();
    let mut r = Resolver::new(kb, tree.distinct_count());
    match strategy {
        Strategy::Layered => return layered_discovery(tree, kb),
        Strategy::Baseline => return baseline_discovery(tree, kb),
        Strategy::FileFirst => file_first(&mut r, tree.root())?,
        Strategy::DirectoryFirst => directory_first(&mut r, tree.root())?,
        Strategy::Random(seed) => random_order(&mut r, tree.root(), seed)?,
    }
    Ok(finish(tree, kb, strategy, started, r, 0))
}
