//! Knowledge base backends: a `knows` oracle over node ids.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use thiserror::Error;

use crate::id::{parse_swhid, NodeId, SwhidError};

/// Default number of ids sent per `/known` request.
pub const DEFAULT_BATCH_SIZE: usize = 1000;

#[derive(Debug, Error)]
pub enum KbError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}:{line}: {source}")]
    Parse {
        path: PathBuf,
        line: usize,
        source: SwhidError,
    },
    #[error("invalid knowledge base URL {0:?}")]
    Url(String),
    #[error("request for chunk {chunk} failed: {message}")]
    Transport { chunk: usize, message: String },
    #[error("chunk {chunk}: server answered HTTP {status}: {body}")]
    Status {
        chunk: usize,
        status: u16,
        body: String,
    },
    #[error("chunk {chunk}: malformed response: {message}")]
    MalformedResponse { chunk: usize, message: String },
    #[error("chunk {chunk} still failing after {attempts} attempts: {last}")]
    RetriesExhausted {
        chunk: usize,
        attempts: u32,
        last: Box<KbError>,
    },
}

impl KbError {
    /// Transport failures, timeouts, 429 and 5xx answers may succeed on retry.
    pub fn is_retryable(&self) -> bool {
        match self {
            KbError::Transport { .. } => true,
            KbError::Status { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

/// A set of known ids with a human readable label such as `known-90`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KbSet {
    pub ids: HashSet<NodeId>,
    pub label: String,
}

impl KbSet {
    pub fn new(label: impl Into<String>, ids: impl IntoIterator<Item = NodeId>) -> Self {
        Self {
            ids: ids.into_iter().collect(),
            label: label.into(),
        }
    }

    pub fn contains(&self, id: &NodeId) -> bool {
        self.ids.contains(id)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Batch membership oracle.
///
/// `knows` answers once per distinct input id, and `lookups` counts ids
/// queried so far (not round trips).
pub trait KbBackend: Send + Sync {
    fn knows(&self, ids: &[NodeId]) -> Result<HashMap<NodeId, bool>, KbError>;

    fn lookups(&self) -> u64;

    fn label(&self) -> &str;
}

impl<T: KbBackend + ?Sized> KbBackend for Box<T> {
    fn knows(&self, ids: &[NodeId]) -> Result<HashMap<NodeId, bool>, KbError> {
        (**self).knows(ids)
    }

    fn lookups(&self) -> u64 {
        (**self).lookups()
    }

    fn label(&self) -> &str {
        (**self).label()
    }
}

/// Distinct ids in first-seen order.
pub(crate) fn dedup(ids: &[NodeId]) -> Vec<NodeId> {
    let mut seen = HashSet::with_capacity(ids.len());
    ids.iter().copied().filter(|id| seen.insert(*id)).collect()
}

/// Backend answering from a [`KbSet`] held in memory.
#[derive(Debug)]
pub struct MemoryKb {
    set: Arc<KbSet>,
    counter: AtomicU64,
}

impl MemoryKb {
    pub fn new(set: impl Into<Arc<KbSet>>) -> Self {
        Self {
            set: set.into(),
            counter: AtomicU64::new(0),
        }
    }

    /// Loads a KB file into memory.
    pub fn open(path: &Path) -> Result<Self, KbError> {
        Ok(Self::new(load_kb_file(path)?))
    }

    pub fn set(&self) -> &Arc<KbSet> {
        &self.set
    }
}

impl KbBackend for MemoryKb {
    fn knows(&self, ids: &[NodeId]) -> Result<HashMap<NodeId, bool>, KbError> {
        let answers: HashMap<NodeId, bool> =
            ids.iter().map(|id| (*id, self.set.contains(id))).collect();
        self.counter
            .fetch_add(answers.len() as u64, Ordering::Relaxed);
        Ok(answers)
    }

    fn lookups(&self) -> u64 {
        self.counter.load(Ordering::Relaxed)
    }

    fn label(&self) -> &str {
        &self.set.label
    }
}

/// Reads a newline-delimited SWHID file. The label is the file stem.
pub fn load_kb_file(path: &Path) -> Result<KbSet, KbError> {
    let io_err = |source| KbError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = fs::File::open(path).map_err(io_err)?;
    let mut ids = HashSet::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err)?;
        let id = parse_swhid(&line).map_err(|source| KbError::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            source,
        })?;
        ids.insert(id);
    }
    let label = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(KbSet { ids, label })
}

/// Writes the set as sorted SWHID lines.
pub fn save_kb_file(kb: &KbSet, path: &Path) -> Result<(), KbError> {
    let io_err = |source| KbError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut lines: Vec<String> = kb.ids.iter().map(NodeId::to_string).collect();
    lines.sort_unstable();
    let mut out = BufWriter::new(fs::File::create(path).map_err(io_err)?);
    for line in &lines {
        out.write_all(line.as_bytes()).map_err(io_err)?;
        out.write_all(b"\n").map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

/// Settings for [`HttpKb`].
#[derive(Debug, Clone)]
pub struct HttpConfig {
    /// Base URL; requests go to `<base_url>/known`.
    pub base_url: String,
    pub batch_size: usize,
    pub timeout: Duration,
    /// Extra attempts per chunk after the first one.
    pub retries: u32,
    /// Delay before the first retry, doubled on each further retry.
    pub backoff: Duration,
    /// Sent as `Authorization: Bearer <token>` when set.
    pub token: Option<String>,
}

impl HttpConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            batch_size: DEFAULT_BATCH_SIZE,
            timeout: Duration::from_secs(30),
            retries: 3,
            backoff: Duration::from_millis(200),
            token: None,
        }
    }
}

/// Backend posting batches to a remote `/known` endpoint.
pub struct HttpKb {
    agent: ureq::Agent,
    endpoint: String,
    config: HttpConfig,
    counter: AtomicU64,
}

impl HttpKb {
    pub fn new(config: HttpConfig) -> Result<Self, KbError> {
        let base = config.base_url.trim_end_matches('/');
        let valid = (base.starts_with("http://") || base.starts_with("https://"))
            && base.parse::<ureq::http::Uri>().is_ok();
        if !valid || config.batch_size == 0 {
            return Err(KbError::Url(config.base_url.clone()));
        }
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            agent,
            endpoint: format!("{base}/known"),
            config,
            counter: AtomicU64::new(0),
        })
    }

    fn post_chunk(&self, chunk: usize, ids: &[NodeId]) -> Result<HashMap<NodeId, bool>, KbError> {
        let body: Vec<String> = ids.iter().map(NodeId::to_string).collect();
        let mut request = self
            .agent
            .post(&self.endpoint)
            .header("Content-Type", "application/json");
        if let Some(token) = &self.config.token {
            request = request.header("Authorization", format!("Bearer {token}"));
        }
        let transport = |e: ureq::Error| KbError::Transport {
            chunk,
            message: e.to_string(),
        };
        let mut response = request.send_json(&body).map_err(transport)?;
        let status = response.status().as_u16();
        let text = response.body_mut().read_to_string().map_err(transport)?;
        if !(200..300).contains(&status) {
            return Err(KbError::Status {
                chunk,
                status,
                body: text,
            });
        }
        let malformed = |message: String| KbError::MalformedResponse { chunk, message };
        let parsed: HashMap<String, KnownFlag> =
            serde_json::from_str(&text).map_err(|e| malformed(e.to_string()))?;
        let mut answers = HashMap::with_capacity(ids.len());
        for (key, flag) in parsed {
            let id = parse_swhid(&key).map_err(|e| malformed(e.to_string()))?;
            answers.insert(id, flag.known);
        }
        if let Some(missing) = ids.iter().find(|id| !answers.contains_key(id)) {
            return Err(malformed(format!("no answer for {missing}")));
        }
        answers.retain(|id, _| ids.contains(id));
        Ok(answers)
    }

    fn post_with_retry(
        &self,
        chunk: usize,
        ids: &[NodeId],
    ) -> Result<HashMap<NodeId, bool>, KbError> {
        let mut delay = self.config.backoff;
        let mut attempt = 0;
        loop {
            attempt += 1;
            match self.post_chunk(chunk, ids) {
                Ok(answers) => return Ok(answers),
                Err(e) if e.is_retryable() && attempt <= self.config.retries => {
                    log::warn!("{e}; retrying in {delay:?}");
                    thread::sleep(delay);
                    delay *= 2;
                }
                Err(e) if e.is_retryable() => {
                    return Err(KbError::RetriesExhausted {
                        chunk,
                        attempts: attempt,
                        last: Box::new(e),
                    })
                }
                Err(e) => return Err(e),
            }
        }
    }
}

#[derive(serde::Deserialize)]
struct KnownFlag {
    known: bool,
}

impl KbBackend for HttpKb {
    fn knows(&self, ids: &[NodeId]) -> Result<HashMap<NodeId, bool>, KbError> {
        let distinct = dedup(ids);
        let mut answers = HashMap::with_capacity(distinct.len());
        for (chunk, part) in distinct.chunks(self.config.batch_size).enumerate() {
            answers.extend(self.post_with_retry(chunk + 1, part)?);
        }
        self.counter
            .fetch_add(distinct.len() as u64, Ordering::Relaxed);
        Ok(answers)
    }

    fn lookups(&self) -> u64 {
        self.counter.load(Ordering::Relaxed)
    }

    fn label(&self) -> &str {
        &self.config.base_url
    }
}
