//! Shared fixtures: random trees, on-disk materialization and a Git oracle.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::os::unix::ffi::OsStrExt;
use std::os::unix::fs::{symlink, PermissionsExt};
use std::path::{Path, PathBuf};
use std::process::Command;

use priorscan::tree::{MerkleNode, SourceTree};
use priorscan::{EntryMode, KbBackend, KbError, NodeId};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

/// A generated file-system shape.
#[derive(Debug, Clone)]
pub enum Shape {
    File { name: Vec<u8>, content: Vec<u8>, exec: bool },
    Link { name: Vec<u8>, target: Vec<u8> },
    Dir { name: Vec<u8>, children: Vec<Shape> },
}

impl Shape {
    pub fn name(&self) -> &[u8] {
        match self {
            Shape::File { name, .. } | Shape::Link { name, .. } | Shape::Dir { name, .. } => name,
        }
    }

    fn set_name(&mut self, new: Vec<u8>) {
        match self {
            Shape::File { name, .. } | Shape::Link { name, .. } | Shape::Dir { name, .. } => *name = new,
        }
    }

    pub fn count(&self) -> usize {
        match self {
            Shape::Dir { children, .. } => 1 + children.iter().map(Shape::count).sum::<usize>(),
            _ => 1,
        }
    }

    pub fn to_node(&self) -> MerkleNode {
        match self {
            Shape::File { name, content, exec } => MerkleNode::file(
                name.clone(),
                content,
                if *exec { EntryMode::Executable } else { EntryMode::Regular },
            ),
            Shape::Link { name, target } => MerkleNode::file(name.clone(), target, EntryMode::Symlink),
            Shape::Dir { name, children } => {
                MerkleNode::directory(name.clone(), children.iter().map(Shape::to_node).collect()).unwrap()
            }
        }
    }

    pub fn to_tree(&self) -> SourceTree {
        SourceTree::from_root(self.to_node(), "/synthetic")
    }

    /// Writes the shape's children under `dir`.
    pub fn materialize(&self, dir: &Path) {
        let Shape::Dir { children, .. } = self else {
            panic!("root must be a directory")
        };
        fs::create_dir_all(dir).unwrap();
        for child in children {
            let path = dir.join(std::ffi::OsStr::from_bytes(child.name()));
            match child {
                Shape::File { content, exec, .. } => {
                    fs::write(&path, content).unwrap();
                    let mode = if *exec { 0o755 } else { 0o644 };
                    fs::set_permissions(&path, fs::Permissions::from_mode(mode)).unwrap();
                }
                Shape::Link { target, .. } => {
                    symlink(std::ffi::OsStr::from_bytes(target), &path).unwrap();
                }
                Shape::Dir { .. } => child.materialize(&path),
            }
        }
    }
}

/// Knobs for [`random_shape`].
#[derive(Debug, Clone, Copy)]
pub struct Gen {
    pub max_nodes: usize,
    pub max_depth: usize,
    pub empty_dirs: bool,
    pub symlinks: bool,
    pub fanout: usize,
}

impl Default for Gen {
    fn default() -> Self {
        Self {
            max_nodes: 200,
            max_depth: 6,
            empty_dirs: true,
            symlinks: true,
            fanout: 6,
        }
    }
}

const NAME_ALPHABET: &[&[u8]] = &[b"a", b"b", b".", b"-", b"_", b"0", b"A", "é".as_bytes(), b"z"];

fn random_name(rng: &mut ChaCha8Rng) -> Vec<u8> {
    loop {
        let len = rng.gen_range(1..=4);
        let name: Vec<u8> = (0..len)
            .flat_map(|_| NAME_ALPHABET.choose(rng).unwrap().iter().copied())
            .collect();
        if name != b"." && name != b".." {
            return name;
        }
    }
}

struct Builder<'a> {
    rng: &'a mut ChaCha8Rng,
    budget: usize,
    gen: Gen,
    pool: Vec<Shape>,
}

impl Builder<'_> {
    fn content(&mut self) -> Vec<u8> {
        // a small shared pool makes duplicate blobs common
        if self.rng.gen_bool(0.3) {
            vec![b'0' + self.rng.gen_range(0..4u8)]
        } else {
            let len = self.rng.gen_range(0..64);
            (0..len).map(|_| self.rng.gen()).collect()
        }
    }

    fn leaf(&mut self, name: Vec<u8>) -> Shape {
        if self.gen.symlinks && self.rng.gen_bool(0.1) {
            let target = random_name(self.rng);
            Shape::Link { name, target }
        } else {
            let content = self.content();
            Shape::File { name, content, exec: self.rng.gen_bool(0.2) }
        }
    }

    fn dir(&mut self, name: Vec<u8>, depth: usize) -> Shape {
        let mut names = BTreeSet::new();
        let mut children = Vec::new();
        let want = self.rng.gen_range(0..=self.gen.fanout);
        for _ in 0..want {
            if self.budget == 0 {
                break;
            }
            let child_name = random_name(self.rng);
            if !names.insert(child_name.clone()) {
                continue;
            }
            self.budget -= 1;
            let roll: f64 = self.rng.gen();
            let child = if depth < self.gen.max_depth && roll < 0.1 && !self.pool.is_empty() {
                // reuse an earlier subtree verbatim when it fits the budget
                let mut copy = self.pool.choose(self.rng).unwrap().clone();
                if copy.count() - 1 <= self.budget {
                    self.budget -= copy.count() - 1;
                    copy.set_name(child_name);
                    copy
                } else {
                    self.leaf(child_name)
                }
            } else if depth < self.gen.max_depth && roll < 0.35 {
                let d = self.dir(child_name, depth + 1);
                self.pool.push(d.clone());
                d
            } else {
                self.leaf(child_name)
            };
            children.push(child);
        }
        if children.is_empty() && !self.gen.empty_dirs {
            let content = self.content();
            children.push(Shape::File { name: b"f".to_vec(), content, exec: false });
        }
        Shape::Dir { name, children }
    }
}

/// A random directory shape with at most about `gen.max_nodes` nodes.
pub fn random_shape(seed: u64, gen: Gen) -> Shape {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut builder = Builder {
        rng: &mut rng,
        budget: gen.max_nodes.saturating_sub(1),
        gen,
        pool: Vec::new(),
    };
    builder.dir(Vec::new(), 0)
}

pub fn random_tree(seed: u64, gen: Gen) -> SourceTree {
    random_shape(seed, gen).to_tree()
}

/// A wide tree of exactly `nodes` files and directories.
pub fn big_tree(nodes: usize, seed: u64) -> SourceTree {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    fn grow(rng: &mut ChaCha8Rng, budget: &mut usize, depth: usize) -> Vec<MerkleNode> {
        let mut kids = Vec::new();
        let mut i = 0usize;
        while *budget > 0 && i < 24 {
            *budget -= 1;
            let name = format!("n{i}");
            if depth < 4 && rng.gen_bool(0.3) {
                let sub = grow(rng, budget, depth + 1);
                kids.push(MerkleNode::directory(name, sub).unwrap());
            } else {
                let content = format!("{}-{}", rng.gen::<u64>(), i);
                kids.push(MerkleNode::file(name, content.as_bytes(), EntryMode::Regular));
            }
            i += 1;
        }
        kids
    }
    let mut remaining = nodes - 1;
    let mut top = Vec::new();
    let mut idx = 0;
    while remaining > 0 {
        remaining -= 1;
        let sub = grow(&mut rng, &mut remaining, 1);
        top.push(MerkleNode::directory(format!("top{idx}"), sub).unwrap());
        idx += 1;
    }
    SourceTree::from_root(MerkleNode::directory("", top).unwrap(), "/big")
}

/// Object ids Git assigns to every path of a work tree, plus the root tree.
pub struct GitIds {
    pub root: String,
    pub by_path: BTreeMap<PathBuf, String>,
}

fn git(dir: &Path, git_dir: &Path, args: &[&str]) -> Vec<u8> {
    let out = Command::new("git")
        .arg("--git-dir")
        .arg(git_dir)
        .arg("--work-tree")
        .arg(dir)
        .args(["-c", "core.fileMode=true", "-c", "core.symlinks=true", "-c", "core.excludesFile=/dev/null"])
        .args(args)
        .env("GIT_CONFIG_GLOBAL", "/dev/null")
        .env("GIT_CONFIG_NOSYSTEM", "1")
        .output()
        .expect("git must be installed for oracle tests");
    assert!(out.status.success(), "git {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out.stdout
}

/// Indexes `dir` into a throwaway repository and reads back Git's ids.
pub fn git_oracle(dir: &Path, scratch: &Path) -> GitIds {
    let git_dir = scratch.join("oracle.git");
    let _ = fs::remove_dir_all(&git_dir);
    let status = Command::new("git")
        .args(["init", "-q", "--bare"])
        .arg(&git_dir)
        .env("GIT_CONFIG_GLOBAL", "/dev/null")
        .status()
        .unwrap();
    assert!(status.success());
    git(dir, &git_dir, &["add", "-A", "."]);
    let root = String::from_utf8(git(dir, &git_dir, &["write-tree"])).unwrap().trim().to_owned();
    let listing = git(dir, &git_dir, &["ls-tree", "-r", "-t", "-z", &root]);
    let mut by_path = BTreeMap::new();
    for record in listing.split(|b| *b == 0).filter(|r| !r.is_empty()) {
        let tab = record.iter().position(|b| *b == b'\t').unwrap();
        let meta = std::str::from_utf8(&record[..tab]).unwrap();
        let hash = meta.split(' ').nth(2).unwrap().to_owned();
        let path = PathBuf::from(std::ffi::OsStr::from_bytes(&record[tab + 1..]));
        by_path.insert(path, hash);
    }
    GitIds { root, by_path }
}

/// Wraps a backend and records every id it was asked about.
pub struct Recording<B> {
    pub inner: B,
    pub queried: Mutex<Vec<NodeId>>,
    pub calls: AtomicU64,
}

impl<B> Recording<B> {
    pub fn new(inner: B) -> Self {
        Self { inner, queried: Mutex::new(Vec::new()), calls: AtomicU64::new(0) }
    }
}

impl<B: KbBackend> KbBackend for Recording<B> {
    fn knows(&self, ids: &[NodeId]) -> Result<HashMap<NodeId, bool>, KbError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.queried.lock().unwrap().extend_from_slice(ids);
        self.inner.knows(ids)
    }

    fn lookups(&self) -> u64 {
        self.inner.lookups()
    }

    fn label(&self) -> &str {
        self.inner.label()
    }
}
