//! Intrinsic node identifiers.
//!
//! Identifiers are computed the way Git hashes blob and tree objects, which
//! makes them compatible with version 1 SWHIDs (`swh:1:cnt:…`, `swh:1:dir:…`).

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha1::{Digest, Sha1};
use thiserror::Error;

/// Length in bytes of a SHA-1 digest.
pub const DIGEST_LEN: usize = 20;

const SWHID_SCHEME: &str = "swh";
const SWHID_VERSION: &str = "1";

/// The two Merkle node kinds a scan produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NodeKind {
    /// A file blob.
    Content,
    /// A source tree.
    Directory,
}

impl NodeKind {
    /// Short tag used in SWHIDs.
    pub fn tag(self) -> &'static str {
        match self {
            NodeKind::Content => "cnt",
            NodeKind::Directory => "dir",
        }
    }
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// A typed intrinsic identifier: node kind plus SHA-1 digest.
///
/// The derived ordering (kind first, then digest bytes) coincides with the
/// lexicographic ordering of the textual SWHID form.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId {
    kind: NodeKind,
    digest: [u8; DIGEST_LEN],
}

impl NodeId {
    pub const fn new(kind: NodeKind, digest: [u8; DIGEST_LEN]) -> Self {
        Self { kind, digest }
    }

    pub fn kind(&self) -> NodeKind {
        self.kind
    }

    pub fn digest(&self) -> &[u8; DIGEST_LEN] {
        &self.digest
    }

    pub fn is_dir(&self) -> bool {
        self.kind == NodeKind::Directory
    }

    /// Lowercase hex rendering of the digest.
    pub fn digest_hex(&self) -> String {
        hex::encode(self.digest)
    }

    /// Renders the identifier as a SWHID string.
    pub fn to_swhid(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{SWHID_SCHEME}:{SWHID_VERSION}:{}:{}",
            self.kind,
            self.digest_hex()
        )
    }
}

impl fmt::Debug for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "NodeId({self})")
    }
}

/// The component of a SWHID that failed to parse.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SwhidError {
    #[error("malformed SWHID {input:?}: expected 4 colon-separated components")]
    Shape { input: String },
    #[error("malformed SWHID {input:?}: scheme must be \"swh\"")]
    Scheme { input: String },
    #[error("malformed SWHID {input:?}: unsupported version, only \"1\" is accepted")]
    Version { input: String },
    #[error("malformed SWHID {input:?}: unsupported kind {kind:?}, expected \"cnt\" or \"dir\"")]
    Kind { input: String, kind: String },
    #[error("malformed SWHID {input:?}: digest must be 40 lowercase hex characters")]
    Digest { input: String },
}

/// Parses `swh:1:(cnt|dir):<40 lowercase hex>`.
pub fn parse_swhid(s: &str) -> Result<NodeId, SwhidError> {
    let input = || s.to_owned();
    let mut parts = s.split(':');
    let (Some(scheme), Some(version), Some(kind), Some(digest), None) = (
        parts.next(),
        parts.next(),
        parts.next(),
        parts.next(),
        parts.next(),
    ) else {
        return Err(SwhidError::Shape { input: input() });
    };
    if scheme != SWHID_SCHEME {
        return Err(SwhidError::Scheme { input: input() });
    }
    if version != SWHID_VERSION {
        return Err(SwhidError::Version { input: input() });
    }
    let kind = match kind {
        "cnt" => NodeKind::Content,
        "dir" => NodeKind::Directory,
        other => {
            return Err(SwhidError::Kind {
                input: input(),
                kind: other.to_owned(),
            })
        }
    };
    let valid_hex = digest.len() == 2 * DIGEST_LEN
        && digest
            .bytes()
            .all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b));
    if !valid_hex {
        return Err(SwhidError::Digest { input: input() });
    }
    let mut raw = [0u8; DIGEST_LEN];
    hex::decode_to_slice(digest, &mut raw).map_err(|_| SwhidError::Digest { input: input() })?;
    Ok(NodeId::new(kind, raw))
}

/// Renders an identifier as its SWHID string.
pub fn render_swhid(id: &NodeId) -> String {
    id.to_string()
}

impl FromStr for NodeId {
    type Err = SwhidError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_swhid(s)
    }
}

impl Serialize for NodeId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for NodeId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        parse_swhid(&s).map_err(serde::de::Error::custom)
    }
}

/// Git tree entry modes. Other filesystem mode bits never reach the hash.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EntryMode {
    Regular,
    Executable,
    Symlink,
    Directory,
}

impl EntryMode {
    /// Octal mode string as written in Git tree objects.
    pub fn git_mode(self) -> &'static [u8] {
        match self {
            EntryMode::Regular => b"100644",
            EntryMode::Executable => b"100755",
            EntryMode::Symlink => b"120000",
            EntryMode::Directory => b"40000",
        }
    }

    /// Node kind an entry with this mode must point to.
    pub fn target_kind(self) -> NodeKind {
        match self {
            EntryMode::Directory => NodeKind::Directory,
            _ => NodeKind::Content,
        }
    }
}

/// One named edge from a directory to a child node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DirEntry {
    pub name: Vec<u8>,
    pub target: NodeId,
    pub perm: EntryMode,
}

impl DirEntry {
    pub fn new(name: impl Into<Vec<u8>>, target: NodeId, perm: EntryMode) -> Self {
        Self {
            name: name.into(),
            target,
            perm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DirEntryError {
    #[error("duplicate entry name {0:?}")]
    DuplicateName(String),
    #[error("invalid entry name {0:?}: names must be nonempty and contain no NUL or '/'")]
    InvalidName(String),
    #[error("entry {name:?} has mode {perm:?} but points to a {kind} node")]
    ModeMismatch {
        name: String,
        perm: EntryMode,
        kind: NodeKind,
    },
}

/// Git's tree entry ordering: bytewise, with directory names compared as if
/// they ended in `/`.
pub fn git_name_cmp(a: &[u8], a_is_dir: bool, b: &[u8], b_is_dir: bool) -> Ordering {
    let common = a.len().min(b.len());
    match a[..common].cmp(&b[..common]) {
        Ordering::Equal => {}
        other => return other,
    }
    let terminator = |name: &[u8], is_dir: bool| -> u8 {
        match name.get(common) {
            Some(&c) => c,
            None if is_dir => b'/',
            None => 0,
        }
    };
    terminator(a, a_is_dir).cmp(&terminator(b, b_is_dir))
}

fn hash_object(kind: &[u8], payload: &[u8]) -> [u8; DIGEST_LEN] {
    let mut hasher = Sha1::new();
    hasher.update(kind);
    hasher.update(b" ");
    hasher.update(payload.len().to_string().as_bytes());
    hasher.update([0u8]);
    hasher.update(payload);
    hasher.finalize().into()
}

/// Identifier of a file blob: SHA-1 over `"blob <len>\0" + content`.
pub fn blob_id(content: &[u8]) -> NodeId {
    NodeId::new(NodeKind::Content, hash_object(b"blob", content))
}

/// Sorts entries into Git tree order after validating them.
pub fn sort_entries(entries: &mut [DirEntry]) -> Result<(), DirEntryError> {
    let mut seen = HashSet::with_capacity(entries.len());
    for entry in entries.iter() {
        let lossy = || String::from_utf8_lossy(&entry.name).into_owned();
        if entry.name.is_empty() || entry.name.contains(&0) || entry.name.contains(&b'/') {
            return Err(DirEntryError::InvalidName(lossy()));
        }
        if entry.perm.target_kind() != entry.target.kind() {
            return Err(DirEntryError::ModeMismatch {
                name: lossy(),
                perm: entry.perm,
                kind: entry.target.kind(),
            });
        }
        if !seen.insert(entry.name.as_slice()) {
            return Err(DirEntryError::DuplicateName(lossy()));
        }
    }
    entries.sort_by(|a, b| {
        git_name_cmp(
            &a.name,
            a.perm == EntryMode::Directory,
            &b.name,
            b.perm == EntryMode::Directory,
        )
    });
    Ok(())
}

/// Serializes already-sorted entries into a Git tree payload.
fn tree_payload(sorted: &[DirEntry]) -> Vec<u8> {
    let mut payload = Vec::with_capacity(sorted.len() * (DIGEST_LEN + 16));
    for entry in sorted {
        payload.extend_from_slice(entry.perm.git_mode());
        payload.push(b' ');
        payload.extend_from_slice(&entry.name);
        payload.push(0);
        payload.extend_from_slice(entry.target.digest());
    }
    payload
}

/// Identifier of a directory, hashed as a Git tree object.
///
/// Input order does not matter; entries are put in canonical order first.
pub fn dir_id(entries: &[DirEntry]) -> Result<NodeId, DirEntryError> {
    let mut sorted = entries.to_vec();
    sort_entries(&mut sorted)?;
    Ok(dir_id_sorted(&sorted))
}

/// Like [`dir_id`] but trusts the caller to pass validated, sorted entries.
pub(crate) fn dir_id_sorted(sorted: &[DirEntry]) -> NodeId {
    NodeId::new(
        NodeKind::Directory,
        hash_object(b"tree", &tree_payload(sorted)),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn hex_id(kind: NodeKind, hex: &str) -> NodeId {
        let mut raw = [0u8; DIGEST_LEN];
        hex::decode_to_slice(hex, &mut raw).unwrap();
        NodeId::new(kind, raw)
    }

    // Expected digests below were produced with `git hash-object` and
    // `git write-tree` on the same inputs.
    #[test]
    fn empty_blob_matches_git() {
        assert_eq!(
            blob_id(b"").digest_hex(),
            "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391"
        );
    }

    #[test]
    fn hello_blob_matches_git() {
        let id = blob_id(b"hello\n");
        assert_eq!(id.digest_hex(), "ce013625030ba8dba906f756967f9e9ca394464a");
        assert_eq!(id, blob_id(b"hello\n"));
    }

    #[test]
    fn empty_tree_matches_git() {
        assert_eq!(
            dir_id(&[]).unwrap().digest_hex(),
            "4b825dc642cb6eb9a060e54bf8d69288fbee4904"
        );
    }

    #[test]
    fn single_file_tree_matches_git() {
        let entries = [DirEntry::new("a", blob_id(b"hello\n"), EntryMode::Regular)];
        assert_eq!(
            dir_id(&entries).unwrap().digest_hex(),
            "0976950c1fdbcb52435a433913017bf044b3a58f"
        );
    }

    #[test]
    fn file_sorts_before_dotted_dir() {
        // file `a` + dir `a.b/` containing file `f` = "y"
        let sub = dir_id(&[DirEntry::new("f", blob_id(b"y"), EntryMode::Regular)]).unwrap();
        assert_eq!(sub.digest_hex(), "a4b98a5ad98e151a7bc748a8c6f576d3685fa864");
        let entries = [
            DirEntry::new("a.b", sub, EntryMode::Directory),
            DirEntry::new("a", blob_id(b"x"), EntryMode::Regular),
        ];
        assert_eq!(
            dir_id(&entries).unwrap().digest_hex(),
            "044edf3cb2da9d59b1430e044897e6c9d156306d"
        );
    }

    #[test]
    fn dir_sorts_after_dotted_file() {
        // dir `a/` containing `f` = "x" + file `a.b` = "y"; git lists a.b first
        let sub = dir_id(&[DirEntry::new("f", blob_id(b"x"), EntryMode::Regular)]).unwrap();
        assert_eq!(sub.digest_hex(), "2561a62d4223eb7660d3b6b02b707048382f4019");
        let mut entries = vec![
            DirEntry::new("a", sub, EntryMode::Directory),
            DirEntry::new("a.b", blob_id(b"y"), EntryMode::Regular),
        ];
        sort_entries(&mut entries).unwrap();
        assert_eq!(entries[0].name, b"a.b");
        assert_eq!(
            dir_id(&entries).unwrap().digest_hex(),
            "5af039afd23bc38e546ffb6d54e7393cfe41c073"
        );
    }

    #[test]
    fn duplicate_names_rejected() {
        let entries = [
            DirEntry::new("a", blob_id(b"1"), EntryMode::Regular),
            DirEntry::new("a", dir_id(&[]).unwrap(), EntryMode::Directory),
        ];
        assert!(matches!(
            dir_id(&entries),
            Err(DirEntryError::DuplicateName(_))
        ));
    }

    #[test]
    fn bad_names_and_modes_rejected() {
        for name in [&b""[..], b"a/b", b"a\0b"] {
            let e = [DirEntry::new(name, blob_id(b""), EntryMode::Regular)];
            assert!(matches!(dir_id(&e), Err(DirEntryError::InvalidName(_))));
        }
        let e = [DirEntry::new("d", blob_id(b""), EntryMode::Directory)];
        assert!(matches!(dir_id(&e), Err(DirEntryError::ModeMismatch { .. })));
    }

    #[test]
    fn renders_known_swhids() {
        let cnt = hex_id(NodeKind::Content, "94a9ed024d3859793618152ea559a168bbcbb5e2");
        assert_eq!(
            render_swhid(&cnt),
            "swh:1:cnt:94a9ed024d3859793618152ea559a168bbcbb5e2"
        );
        let dir = hex_id(NodeKind::Directory, "d198bc9d7a6bcf6db04f476d29314f157507d505");
        assert_eq!(
            dir.to_swhid(),
            "swh:1:dir:d198bc9d7a6bcf6db04f476d29314f157507d505"
        );
        assert_eq!(
            parse_swhid("swh:1:cnt:94a9ed024d3859793618152ea559a168bbcbb5e2").unwrap(),
            cnt
        );
    }

    #[test]
    fn parse_errors_name_the_component() {
        let rev = parse_swhid("swh:1:rev:979d7c803a1478c1e65a6cf8a827c16a746e3aa1");
        assert!(matches!(rev, Err(SwhidError::Kind { ref kind, .. }) if kind == "rev"));
        assert!(matches!(
            parse_swhid("swh:1:cnt:XYZ"),
            Err(SwhidError::Digest { .. })
        ));
        assert!(matches!(
            parse_swhid("swh:1:cnt:94A9ED024D3859793618152EA559A168BBCBB5E2"),
            Err(SwhidError::Digest { .. })
        ));
        assert!(matches!(
            parse_swhid("swh:1:cnt:94a9ed024d3859793618152ea559a168bbcbb5e"),
            Err(SwhidError::Digest { .. })
        ));
        assert!(matches!(
            parse_swhid("swx:1:cnt:94a9ed024d3859793618152ea559a168bbcbb5e2"),
            Err(SwhidError::Scheme { .. })
        ));
        assert!(matches!(
            parse_swhid("swh:2:cnt:94a9ed024d3859793618152ea559a168bbcbb5e2"),
            Err(SwhidError::Version { .. })
        ));
        assert!(matches!(
            parse_swhid("swh:1:cnt:94a9ed024d3859793618152ea559a168bbcbb5e2;origin=x:y"),
            Err(SwhidError::Shape { .. })
        ));
        assert!(matches!(parse_swhid(""), Err(SwhidError::Shape { .. })));
    }

    #[test]
    fn serde_uses_textual_form() {
        let id = blob_id(b"hello\n");
        let json = serde_json::to_string(&id).unwrap();
        assert_eq!(
            json,
            "\"swh:1:cnt:ce013625030ba8dba906f756967f9e9ca394464a\""
        );
        assert_eq!(serde_json::from_str::<NodeId>(&json).unwrap(), id);
    }

    proptest! {
        #[test]
        fn render_parse_round_trip(dir in any::<bool>(), digest in any::<[u8; 20]>()) {
            let kind = if dir { NodeKind::Directory } else { NodeKind::Content };
            let id = NodeId::new(kind, digest);
            let text = render_swhid(&id);
            prop_assert_eq!(text.len(), 50);
            prop_assert_eq!(parse_swhid(&text).unwrap(), id);
            prop_assert_eq!(render_swhid(&parse_swhid(&text).unwrap()), text);
        }

        #[test]
        fn ordering_matches_text(a in any::<[u8; 20]>(), b in any::<[u8; 20]>(), ka in any::<bool>(), kb in any::<bool>()) {
            let mk = |d: bool, g| NodeId::new(if d { NodeKind::Directory } else { NodeKind::Content }, g);
            let (x, y) = (mk(ka, a), mk(kb, b));
            prop_assert_eq!(x.cmp(&y), x.to_string().cmp(&y.to_string()));
        }

        #[test]
        fn entry_order_is_input_independent(
            names in proptest::collection::hash_set("[ab.\\-_0]{1,4}", 1..12),
            seed in any::<u64>(),
        ) {
            let entries: Vec<DirEntry> = names
                .iter()
                .enumerate()
                .map(|(i, n)| {
                    if (seed >> (i % 64)) & 1 == 1 {
                        DirEntry::new(n.as_bytes(), dir_id(&[]).unwrap(), EntryMode::Directory)
                    } else {
                        DirEntry::new(n.as_bytes(), blob_id(n.as_bytes()), EntryMode::Regular)
                    }
                })
                .collect();
            let mut reversed = entries.clone();
            reversed.reverse();
            prop_assert_eq!(dir_id(&entries).unwrap(), dir_id(&reversed).unwrap());
        }
    }
}
