//! Simulated knowledge bases covering a fraction of a corpus.
//!
//! `known-100` holds every node of every tree. Lower coverage levels are
//! derived by marking a random share of leaves unknown and then dropping
//! every directory that contains one of them, so the result stays
//! Merkle-consistent. One seeded permutation of the leaves is shared by all
//! fractions, which makes the levels nested.

use std::collections::{BTreeSet, HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::id::NodeId;
use crate::kb::KbSet;
use crate::tree::{MerkleNode, SourceTree};

#[derive(Debug, Clone, PartialEq, Error)]
#[error("unknown leaf fraction {0} is outside [0, 1]")]
pub struct CoverageError(f64);

/// How much of the corpus a degraded KB forgets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoverageSpec {
    unknown_leaf_fraction: f64,
    pub seed: u64,
}

impl CoverageSpec {
    pub fn new(unknown_leaf_fraction: f64, seed: u64) -> Result<Self, CoverageError> {
        if !(0.0..=1.0).contains(&unknown_leaf_fraction) {
            return Err(CoverageError(unknown_leaf_fraction));
        }
        Ok(Self {
            unknown_leaf_fraction,
            seed,
        })
    }

    /// Coverage for a `known-<pct>` KB.
    pub fn known_percent(pct: u8, seed: u64) -> Result<Self, CoverageError> {
        Self::new(1.0 - f64::from(pct) / 100.0, seed)
    }

    pub fn unknown_leaf_fraction(&self) -> f64 {
        self.unknown_leaf_fraction
    }

    /// `known-<pct>` label, rounded to the nearest percent.
    pub fn label(&self) -> String {
        format!(
            "known-{}",
            ((1.0 - self.unknown_leaf_fraction) * 100.0).round() as u32
        )
    }

    /// Number of leaves to remove out of `leaves`.
    fn removed(&self, leaves: usize) -> usize {
        if self.unknown_leaf_fraction >= 1.0 {
            return leaves;
        }
        // the epsilon absorbs products like 0.7 * 10 = 6.999…
        ((self.unknown_leaf_fraction * leaves as f64) + 1e-9).floor() as usize
    }
}

/// Distinct-id view of a corpus: child ids of every directory id.
struct Dag {
    children: HashMap<NodeId, Vec<NodeId>>,
    leaves: BTreeSet<NodeId>,
}

impl Dag {
    fn new(trees: &[SourceTree]) -> Self {
        let mut dag = Dag {
            children: HashMap::new(),
            leaves: BTreeSet::new(),
        };
        for tree in trees {
            for node in tree.root().visit() {
                dag.add(node);
            }
        }
        dag
    }

    fn add(&mut self, node: &MerkleNode) {
        if node.children().is_empty() {
            self.leaves.insert(node.id());
        }
        if node.is_dir() {
            self.children
                .entry(node.id())
                .or_insert_with(|| node.children().iter().map(MerkleNode::id).collect());
        }
    }

    /// Whether `id` is, or recursively contains, a removed id.
    fn tainted(&self, id: NodeId, removed: &HashSet<NodeId>, memo: &mut HashMap<NodeId, bool>) -> bool {
        if let Some(&t) = memo.get(&id) {
            return t;
        }
        let t = removed.contains(&id)
            || self
                .children
                .get(&id)
                .is_some_and(|kids| kids.iter().any(|k| self.tainted(*k, removed, memo)));
        memo.insert(id, t);
        t
    }
}

/// The `known-100` KB: every distinct id of every tree.
pub fn build_full_kb(trees: &[SourceTree]) -> KbSet {
    KbSet::new(
        "known-100",
        trees.iter().flat_map(|t| t.node_index().keys().copied()),
    )
}

/// Forgets a seeded share of leaves and every directory above them.
///
/// Leaves are nodes without children: files and empty directories.
pub fn degrade_kb(full: &KbSet, trees: &[SourceTree], spec: &CoverageSpec) -> KbSet {
    let dag = Dag::new(trees);
    let mut order: Vec<NodeId> = dag.leaves.iter().copied().collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let removed: HashSet<NodeId> = order[..spec.removed(order.len())].iter().copied().collect();
    let mut memo = HashMap::new();
    let ids = full
        .ids
        .iter()
        .copied()
        .filter(|id| !dag.tainted(*id, &removed, &mut memo));
    KbSet::new(spec.label(), ids)
}

/// A directory the KB knows while one of its children is unknown.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Violation {
    pub directory: NodeId,
    pub descendant: NodeId,
}

/// Lists every (known directory, unknown child) pair in the corpus.
///
/// Checking direct children suffices: a known directory with a missing
/// deeper descendant has a missing child on the path to it, or a known
/// child that is itself in violation.
pub fn check_merkle_consistency(kb: &KbSet, trees: &[SourceTree]) -> Vec<Violation> {
    let dag = Dag::new(trees);
    let mut violations: Vec<Violation> = dag
        .children
        .iter()
        .filter(|(dir, _)| kb.contains(dir))
        .flat_map(|(dir, kids)| {
            kids.iter()
                .filter(|k| !kb.contains(k))
                .map(|k| Violation {
                    directory: *dir,
                    descendant: *k,
                })
        })
        .collect();
    violations.sort();
    violations.dedup();
    violations
}

/// KBs for several `known-<pct>` levels sharing one seed.
pub fn coverage_ladder(trees: &[SourceTree], percents: &[u8], seed: u64) -> Result<Vec<KbSet>, CoverageError> {
    let full = build_full_kb(trees);
    percents
        .iter()
        .map(|pct| Ok(degrade_kb(&full, trees, &CoverageSpec::known_percent(*pct, seed)?)))
        .collect()
}
