//! Content-addressed scanner that splits a local code base into artifacts a
//! knowledge base already knows and artifacts it has never seen.
//!
//! The code base is hashed into a Git-compatible Merkle DAG ([`tree`]), whose
//! node ids ([`id`]) are then looked up in a knowledge base ([`kb`]) using
//! layered breadth-first discovery ([`discovery`]). Known directories are
//! never descended into.

pub mod bench;
pub mod discovery;
pub mod id;
pub mod kb;
pub mod report;
pub mod server;
pub mod simulator;
pub mod tree;

pub use discovery::{
    baseline_discovery, layered_discovery, strategy_discovery, DiscoveryError, Partition,
    ScanStats, Strategy,
};
pub use id::{blob_id, dir_id, parse_swhid, render_swhid, DirEntry, EntryMode, NodeId, NodeKind};
pub use kb::{load_kb_file, save_kb_file, HttpConfig, HttpKb, KbBackend, KbError, KbSet, MemoryKb};
pub use tree::{build_tree, MerkleNode, ScanConfig, SourceTree};
