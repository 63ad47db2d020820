//! In-memory Merkle DAG model of a scanned code base.

use std::collections::{BTreeSet, HashMap};
use std::ffi::OsStr;
use std::fs;
use std::io;
use std::os::unix::ffi::OsStrExt;
use std::os::unix::fs::{MetadataExt, PermissionsExt};
use std::path::{Path, PathBuf};

use globset::{Glob, GlobSet, GlobSetBuilder};
use rayon::prelude::*;
use thiserror::Error;

use crate::id::{self, blob_id, DirEntry, DirEntryError, EntryMode, NodeId, NodeKind};

/// Directory names never descended into.
pub const DEFAULT_EXCLUDES: &[&str] = &[".git", ".hg", ".svn"];

#[derive(Debug, Error)]
pub enum TreeError {
    #[error("cannot read scan root {path}: {source}")]
    Root { path: PathBuf, source: io::Error },
    #[error("scan root {0} is not a directory")]
    NotADirectory(PathBuf),
    #[error("invalid exclude pattern {pattern:?}: {source}")]
    Pattern {
        pattern: String,
        source: globset::Error,
    },
    #[error("max_depth must be positive")]
    ZeroDepth,
    #[error(transparent)]
    Entry(#[from] DirEntryError),
}

/// A per-path problem that did not abort the scan.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScanWarning {
    pub path: PathBuf,
    pub message: String,
}

/// One node of the scanned tree. Children are kept in Git tree order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MerkleNode {
    id: NodeId,
    name: Vec<u8>,
    path: PathBuf,
    mode: EntryMode,
    children: Vec<MerkleNode>,
    size_bytes: u64,
}

impl MerkleNode {
    /// A file node with the given bytes. `mode` must not be `Directory`.
    pub fn file(name: impl Into<Vec<u8>>, content: &[u8], mode: EntryMode) -> Self {
        assert!(mode != EntryMode::Directory, "file nodes need a file mode");
        let name = name.into();
        Self {
            id: blob_id(content),
            path: PathBuf::from(OsStr::from_bytes(&name)),
            name,
            mode,
            children: Vec::new(),
            size_bytes: content.len() as u64,
        }
    }

    /// A directory node over `children`; names must be unique.
    pub fn directory(
        name: impl Into<Vec<u8>>,
        mut children: Vec<MerkleNode>,
    ) -> Result<Self, DirEntryError> {
        let mut entries: Vec<DirEntry> = children.iter().map(MerkleNode::as_entry).collect();
        id::sort_entries(&mut entries)?;
        children.sort_by(|a, b| {
            id::git_name_cmp(&a.name, a.is_dir(), &b.name, b.is_dir())
        });
        let name = name.into();
        Ok(Self {
            id: id::dir_id_sorted(&entries),
            path: PathBuf::from(OsStr::from_bytes(&name)),
            name,
            mode: EntryMode::Directory,
            children,
            size_bytes: 0,
        })
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn kind(&self) -> NodeKind {
        self.id.kind()
    }

    pub fn is_dir(&self) -> bool {
        self.id.is_dir()
    }

    /// Entry name; empty for the root.
    pub fn name(&self) -> &[u8] {
        &self.name
    }

    /// Path relative to the scan root; empty for the root.
    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn mode(&self) -> EntryMode {
        self.mode
    }

    /// Size of the content in bytes; zero for directories.
    pub fn size_bytes(&self) -> u64 {
        self.size_bytes
    }

    /// Direct descendants only.
    pub fn children(&self) -> &[MerkleNode] {
        &self.children
    }

    /// This node and all its recursive descendants, in pre-order.
    pub fn visit(&self) -> Visit<'_> {
        Visit { stack: vec![self] }
    }

    fn as_entry(&self) -> DirEntry {
        DirEntry::new(self.name.clone(), self.id, self.mode)
    }

    fn rebase(&mut self, parent: &Path) {
        self.path = if self.name.is_empty() {
            parent.to_path_buf()
        } else {
            parent.join(OsStr::from_bytes(&self.name))
        };
        let path = self.path.clone();
        for child in &mut self.children {
            child.rebase(&path);
        }
    }

    /// Recomputes every directory id from its children and compares it with
    /// the stored one. Returns the first mismatching path.
    pub fn check_ids(&self) -> Result<(), PathBuf> {
        if !self.is_dir() {
            return Ok(());
        }
        for child in &self.children {
            child.check_ids()?;
        }
        let entries: Vec<DirEntry> = self.children.iter().map(MerkleNode::as_entry).collect();
        match id::dir_id(&entries) {
            Ok(id) if id == self.id => Ok(()),
            _ => Err(self.path.clone()),
        }
    }
}

/// Pre-order iterator returned by [`MerkleNode::visit`].
pub struct Visit<'a> {
    stack: Vec<&'a MerkleNode>,
}

impl<'a> Iterator for Visit<'a> {
    type Item = &'a MerkleNode;

    fn next(&mut self) -> Option<Self::Item> {
        let node = self.stack.pop()?;
        self.stack.extend(node.children.iter().rev());
        Some(node)
    }
}

/// Filesystem walk options.
#[derive(Debug, Clone, Default)]
pub struct ScanConfig {
    pub exclude_patterns: Vec<String>,
    pub follow_symlinks: bool,
    pub max_depth: Option<usize>,
}

impl ScanConfig {
    fn compile(&self) -> Result<GlobSet, TreeError> {
        if self.max_depth == Some(0) {
            return Err(TreeError::ZeroDepth);
        }
        let mut builder = GlobSetBuilder::new();
        for pattern in &self.exclude_patterns {
            let glob = Glob::new(pattern).map_err(|source| TreeError::Pattern {
                pattern: pattern.clone(),
                source,
            })?;
            builder.add(glob);
        }
        builder.build().map_err(|source| TreeError::Pattern {
            pattern: self.exclude_patterns.join(","),
            source,
        })
    }
}

/// A built code base: its root node plus an index of where each id occurs.
#[derive(Debug, Clone)]
pub struct SourceTree {
    root: MerkleNode,
    root_path: PathBuf,
    node_index: HashMap<NodeId, BTreeSet<PathBuf>>,
    file_count: usize,
    dir_count: usize,
    warnings: Vec<ScanWarning>,
}

impl SourceTree {
    /// Wraps an in-memory directory node. The root's own name is dropped and
    /// all paths are recomputed relative to it.
    pub fn from_root(mut root: MerkleNode, root_path: impl Into<PathBuf>) -> Self {
        assert!(root.is_dir(), "tree root must be a directory");
        root.name.clear();
        root.rebase(Path::new(""));
        let mut node_index: HashMap<NodeId, BTreeSet<PathBuf>> = HashMap::new();
        let (mut file_count, mut dir_count) = (0, 0);
        for node in root.visit() {
            if node.is_dir() {
                dir_count += 1;
            } else {
                file_count += 1;
            }
            node_index
                .entry(node.id)
                .or_default()
                .insert(node.path.clone());
        }
        Self {
            root,
            root_path: root_path.into(),
            node_index,
            file_count,
            dir_count,
            warnings: Vec::new(),
        }
    }

    pub fn root(&self) -> &MerkleNode {
        &self.root
    }

    /// The filesystem directory the tree was built from.
    pub fn root_path(&self) -> &Path {
        &self.root_path
    }

    pub fn node_index(&self) -> &HashMap<NodeId, BTreeSet<PathBuf>> {
        &self.node_index
    }

    pub fn file_count(&self) -> usize {
        self.file_count
    }

    pub fn dir_count(&self) -> usize {
        self.dir_count
    }

    /// Files plus directories, counting every occurrence.
    pub fn size(&self) -> usize {
        self.file_count + self.dir_count
    }

    /// Number of distinct node ids.
    pub fn distinct_count(&self) -> usize {
        self.node_index.len()
    }

    pub fn warnings(&self) -> &[ScanWarning] {
        &self.warnings
    }

    /// Looks up the node stored at a root-relative path.
    pub fn find(&self, path: &Path) -> Option<&MerkleNode> {
        let mut node = &self.root;
        for component in path.components() {
            let name = component.as_os_str().as_bytes();
            node = node.children.iter().find(|c| c.name == name)?;
        }
        Some(node)
    }
}

struct Walker {
    excludes: GlobSet,
    follow_symlinks: bool,
    max_depth: Option<usize>,
}

type Built = (Option<MerkleNode>, Vec<ScanWarning>);

impl Walker {
    fn excluded(&self, rel: &Path, name: &OsStr) -> bool {
        DEFAULT_EXCLUDES.iter().any(|x| name.as_bytes() == x.as_bytes())
            || self.excludes.is_match(rel)
            || self.excludes.is_match(name)
    }

    fn warn(path: &Path, message: impl Into<String>) -> Built {
        let warning = ScanWarning {
            path: path.to_path_buf(),
            message: message.into(),
        };
        log::warn!("skipping {}: {}", warning.path.display(), warning.message);
        (None, vec![warning])
    }

    /// Builds the node for `abs`; `ancestors` holds (dev, inode) pairs of
    /// the directories above it for symlink loop detection.
    fn entry(&self, abs: &Path, rel: &Path, depth: usize, ancestors: &[(u64, u64)]) -> Built {
        let name = rel.file_name().map(OsStr::as_bytes).unwrap_or_default().to_vec();
        let meta = match fs::symlink_metadata(abs) {
            Ok(m) => m,
            Err(e) => return Self::warn(rel, e.to_string()),
        };
        let meta = if meta.file_type().is_symlink() && self.follow_symlinks {
            match fs::metadata(abs) {
                Ok(m) => m,
                Err(e) => return Self::warn(rel, format!("dangling symlink: {e}")),
            }
        } else {
            meta
        };
        let ft = meta.file_type();
        if ft.is_symlink() {
            return match fs::read_link(abs) {
                Ok(target) => (
                    Some(MerkleNode::file(
                        name,
                        target.as_os_str().as_bytes(),
                        EntryMode::Symlink,
                    )),
                    Vec::new(),
                ),
                Err(e) => Self::warn(rel, e.to_string()),
            };
        }
        if ft.is_file() {
            let mode = if meta.permissions().mode() & 0o100 != 0 {
                EntryMode::Executable
            } else {
                EntryMode::Regular
            };
            return match fs::read(abs) {
                Ok(bytes) => (Some(MerkleNode::file(name, &bytes, mode)), Vec::new()),
                Err(e) => Self::warn(rel, e.to_string()),
            };
        }
        if ft.is_dir() {
            let key = (meta.dev(), meta.ino());
            if ancestors.contains(&key) {
                return Self::warn(rel, "directory cycle through symlink");
            }
            let mut chain = ancestors.to_vec();
            chain.push(key);
            return match fs::read_dir(abs) {
                Ok(rd) => self.directory(abs, rel, name, rd, depth, &chain),
                Err(e) => Self::warn(rel, e.to_string()),
            };
        }
        Self::warn(rel, "special file has no Git representation")
    }

    fn directory(
        &self,
        abs: &Path,
        rel: &Path,
        name: Vec<u8>,
        rd: fs::ReadDir,
        depth: usize,
        chain: &[(u64, u64)],
    ) -> Built {
        let mut warnings = Vec::new();
        let mut names = Vec::new();
        if self.max_depth.is_none_or(|max| depth < max) {
            for item in rd {
                match item {
                    Ok(item) => {
                        let entry_name = item.file_name();
                        if !self.excluded(&rel.join(&entry_name), &entry_name) {
                            names.push(entry_name);
                        }
                    }
                    Err(e) => warnings.push(ScanWarning {
                        path: rel.to_path_buf(),
                        message: e.to_string(),
                    }),
                }
            }
        }
        names.sort();
        let built: Vec<Built> = names
            .par_iter()
            .map(|n| self.entry(&abs.join(n), &rel.join(n), depth + 1, chain))
            .collect();
        let mut children = Vec::with_capacity(built.len());
        for (node, w) in built {
            children.extend(node);
            warnings.extend(w);
        }
        match MerkleNode::directory(name, children) {
            Ok(node) => (Some(node), warnings),
            // read_dir never yields duplicate or invalid names
            Err(e) => {
                warnings.extend(Self::warn(rel, e.to_string()).1);
                (None, warnings)
            }
        }
    }
}

/// Walks `root_path` and builds its Merkle DAG.
pub fn build_tree(root_path: &Path, config: &ScanConfig) -> Result<SourceTree, TreeError> {
    let excludes = config.compile()?;
    let meta = fs::metadata(root_path).map_err(|source| TreeError::Root {
        path: root_path.to_path_buf(),
        source,
    })?;
    if !meta.is_dir() {
        return Err(TreeError::NotADirectory(root_path.to_path_buf()));
    }
    let rd = fs::read_dir(root_path).map_err(|source| TreeError::Root {
        path: root_path.to_path_buf(),
        source,
    })?;
    let walker = Walker {
        excludes,
        follow_symlinks: config.follow_symlinks,
        max_depth: config.max_depth,
    };
    let chain = [(meta.dev(), meta.ino())];
    let (root, warnings) = walker.directory(root_path, Path::new(""), Vec::new(), rd, 0, &chain);
    let root = root.expect("directory construction from read_dir names cannot fail");
    let absolute = fs::canonicalize(root_path).unwrap_or_else(|_| root_path.to_path_buf());
    let mut tree = SourceTree::from_root(root, absolute);
    tree.warnings = warnings;
    Ok(tree)
}
