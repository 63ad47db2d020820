//! Lookup-count benchmarks over a corpus × knowledge base × strategy grid.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::discovery::{strategy_discovery, Strategy};
use crate::kb::{load_kb_file, HttpConfig, HttpKb, KbBackend, KbError, KbSet, MemoryKb};
use crate::tree::SourceTree;

/// CSV column order of exported records.
pub const CSV_HEADER: [&str; 7] = [
    "codebase",
    "tree_size",
    "strategy",
    "kb_label",
    "lookups",
    "lookup_fraction",
    "elapsed_ms",
];

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("manifest {0} lists no code bases")]
    EmptyManifest(PathBuf),
    #[error("no records to summarize")]
    NoRecords,
    #[error("no successful records for strategy {strategy} on {kb_label}")]
    EmptyCell { strategy: Strategy, kb_label: String },
}

/// Where a benchmark cell gets its knowledge base from.
#[derive(Debug, Clone)]
pub enum KbSource {
    Memory(Arc<KbSet>),
    File(PathBuf),
    Http(HttpConfig),
}

impl KbSource {
    pub fn label(&self) -> String {
        match self {
            KbSource::Memory(set) => set.label.clone(),
            KbSource::File(path) => path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| path.display().to_string()),
            KbSource::Http(config) => config.base_url.clone(),
        }
    }

    /// Loads file sources into memory so every cell reuses one copy.
    fn preload(&self) -> Result<KbSource, KbError> {
        match self {
            KbSource::File(path) => {
                let mut set = load_kb_file(path)?;
                set.label = self.label();
                Ok(KbSource::Memory(Arc::new(set)))
            }
            other => Ok(other.clone()),
        }
    }

    /// A fresh backend with a zeroed lookup counter.
    pub fn open(&self) -> Result<Box<dyn KbBackend>, KbError> {
        Ok(match self {
            KbSource::Memory(set) => Box::new(MemoryKb::new(set.clone())),
            KbSource::File(path) => Box::new(MemoryKb::open(path)?),
            KbSource::Http(config) => Box::new(HttpKb::new(config.clone())?),
        })
    }
}

/// One (code base, KB, strategy) measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRecord {
    pub codebase: String,
    pub tree_size: usize,
    pub strategy: Strategy,
    pub kb_label: String,
    pub lookups: u64,
    /// `lookups` over the number of distinct nodes.
    pub lookup_fraction: f64,
    /// Discovery time only; tree building is not included.
    pub elapsed: Duration,
    /// Set on failed cells, whose numeric fields are then zero.
    pub error: Option<String>,
}

impl BenchRecord {
    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }
}

fn run_cell(name: &str, tree: &SourceTree, kb: &Result<KbSource, String>, label: &str, strategy: Strategy) -> BenchRecord {
    let mut record = BenchRecord {
        codebase: name.to_owned(),
        tree_size: tree.size(),
        strategy,
        kb_label: label.to_owned(),
        lookups: 0,
        lookup_fraction: 0.0,
        elapsed: Duration::ZERO,
        error: None,
    };
    let outcome = kb
        .as_ref()
        .map_err(Clone::clone)
        .and_then(|source| source.open().map_err(|e| e.to_string()))
        .and_then(|backend| {
            strategy_discovery(tree, backend.as_ref(), strategy).map_err(|e| e.to_string())
        });
    match outcome {
        Ok((_, stats)) => {
            record.lookups = stats.lookups;
            record.lookup_fraction = stats.lookups as f64 / tree.distinct_count().max(1) as f64;
            record.elapsed = stats.elapsed;
        }
        Err(e) => record.error = Some(e),
    }
    record
}

/// Runs every (code base, KB, strategy) cell on up to `workers` threads.
///
/// Failing cells become error records. Output is sorted by code base, KB
/// label and strategy.
pub fn run_grid(
    corpus: &[(String, SourceTree)],
    kbs: &[KbSource],
    strategies: &[Strategy],
    workers: usize,
) -> Vec<BenchRecord> {
    let loaded: Vec<(String, Result<KbSource, String>)> = kbs
        .iter()
        .map(|kb| (kb.label(), kb.preload().map_err(|e| e.to_string())))
        .collect();
    let cells: Vec<(usize, usize, Strategy)> = (0..corpus.len())
        .flat_map(|c| (0..loaded.len()).map(move |k| (c, k)))
        .flat_map(|(c, k)| strategies.iter().map(move |s| (c, k, *s)))
        .collect();
    let run = || {
        cells
            .par_iter()
            .map(|&(c, k, s)| {
                let (name, tree) = &corpus[c];
                let (label, kb) = &loaded[k];
                run_cell(name, tree, kb, label, s)
            })
            .collect::<Vec<_>>()
    };
    let mut records = match rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
    {
        Ok(pool) => pool.install(run),
        Err(_) => run(),
    };
    records.sort_by(|a, b| {
        (&a.codebase, &a.kb_label, a.strategy).cmp(&(&b.codebase, &b.kb_label, b.strategy))
    });
    records
}

/// Reads a corpus manifest: one code base path per line; blank lines and
/// `#` comments are ignored.
pub fn load_manifest(path: &Path) -> Result<Vec<PathBuf>, BenchError> {
    let text = fs::read_to_string(path).map_err(|source| BenchError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    let roots: Vec<PathBuf> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| base.join(l))
        .collect();
    if roots.is_empty() {
        return Err(BenchError::EmptyManifest(path.to_path_buf()));
    }
    Ok(roots)
}

/// Mean and nearest-rank percentiles of one metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Distribution {
    pub mean: f64,
    pub median: f64,
    pub p75: f64,
    pub p90: f64,
    pub p95: f64,
    pub p99: f64,
}

/// Nearest-rank percentile of sorted samples: the value at rank ⌈p·n/100⌉.
pub fn nearest_rank(sorted: &[f64], pct: usize) -> f64 {
    let n = sorted.len();
    let rank = (pct * n).div_ceil(100).max(1);
    sorted[rank - 1]
}

impl Distribution {
    fn of(mut samples: Vec<f64>) -> Self {
        samples.sort_by(f64::total_cmp);
        let mean = samples.iter().sum::<f64>() / samples.len() as f64;
        Self {
            mean,
            median: nearest_rank(&samples, 50),
            p75: nearest_rank(&samples, 75),
            p90: nearest_rank(&samples, 90),
            p95: nearest_rank(&samples, 95),
            p99: nearest_rank(&samples, 99),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellSummary {
    pub strategy: Strategy,
    pub kb_label: String,
    pub samples: usize,
    pub lookup_fraction: Distribution,
    pub elapsed_ms: Distribution,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchSummary {
    pub cells: Vec<CellSummary>,
}

impl BenchSummary {
    pub fn cell(&self, strategy: Strategy, kb_label: &str) -> Option<&CellSummary> {
        self.cells
            .iter()
            .find(|c| c.strategy == strategy && c.kb_label == kb_label)
    }
}

/// Per (strategy, KB) statistics over successful records.
pub fn summarize(records: &[BenchRecord]) -> Result<BenchSummary, BenchError> {
    if records.is_empty() {
        return Err(BenchError::NoRecords);
    }
    let mut groups: BTreeMap<(Strategy, String), Vec<&BenchRecord>> = BTreeMap::new();
    for r in records {
        groups
            .entry((r.strategy, r.kb_label.clone()))
            .or_default()
            .push(r);
    }
    let mut cells = Vec::with_capacity(groups.len());
    for ((strategy, kb_label), group) in groups {
        let ok: Vec<&BenchRecord> = group.into_iter().filter(|r| r.is_ok()).collect();
        if ok.is_empty() {
            return Err(BenchError::EmptyCell { strategy, kb_label });
        }
        cells.push(CellSummary {
            strategy,
            kb_label,
            samples: ok.len(),
            lookup_fraction: Distribution::of(ok.iter().map(|r| r.lookup_fraction).collect()),
            elapsed_ms: Distribution::of(ok.iter().map(|r| duration_ms(r.elapsed)).collect()),
        });
    }
    Ok(BenchSummary { cells })
}

fn duration_ms(d: Duration) -> f64 {
    d.as_nanos() as f64 / 1e6
}

fn ms_duration(ms: f64) -> Duration {
    Duration::from_nanos((ms * 1e6).round() as u64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Csv,
    Jsonl,
}

impl ExportFormat {
    /// `.jsonl` selects JSON lines; anything else is CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") => ExportFormat::Jsonl,
            _ => ExportFormat::Csv,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct JsonRow {
    codebase: String,
    tree_size: usize,
    strategy: Strategy,
    kb_label: String,
    lookups: u64,
    lookup_fraction: f64,
    elapsed_ms: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

/// Writes records as CSV (fixed header, see [`CSV_HEADER`]) or JSON lines.
///
/// CSV rows of failed cells leave the three measurement columns empty; the
/// error text itself is only kept by the JSON lines format.
pub fn export_records(records: &[BenchRecord], path: &Path, format: ExportFormat) -> Result<(), BenchError> {
    let io_err = |source| BenchError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = fs::File::create(path).map_err(io_err)?;
    match format {
        ExportFormat::Csv => {
            let mut w = csv::Writer::from_writer(file);
            let fmt = |e: csv::Error| BenchError::Format {
                path: path.to_path_buf(),
                message: e.to_string(),
            };
            w.write_record(CSV_HEADER).map_err(fmt)?;
            for r in records {
                let (lookups, fraction, elapsed) = if r.is_ok() {
                    (
                        r.lookups.to_string(),
                        r.lookup_fraction.to_string(),
                        duration_ms(r.elapsed).to_string(),
                    )
                } else {
                    Default::default()
                };
                w.write_record([
                    r.codebase.as_str(),
                    &r.tree_size.to_string(),
                    &r.strategy.to_string(),
                    &r.kb_label,
                    &lookups,
                    &fraction,
                    &elapsed,
                ])
                .map_err(fmt)?;
            }
            w.flush().map_err(io_err)
        }
        ExportFormat::Jsonl => {
            let mut w = BufWriter::new(file);
            for r in records {
                let row = JsonRow {
                    codebase: r.codebase.clone(),
                    tree_size: r.tree_size,
                    strategy: r.strategy,
                    kb_label: r.kb_label.clone(),
                    lookups: r.lookups,
                    lookup_fraction: r.lookup_fraction,
                    elapsed_ms: duration_ms(r.elapsed),
                    error: r.error.clone(),
                };
                serde_json::to_writer(&mut w, &row).map_err(|e| BenchError::Format {
                    path: path.to_path_buf(),
                    message: e.to_string(),
                })?;
                w.write_all(b"\n").map_err(io_err)?;
            }
            w.flush().map_err(io_err)
        }
    }
}

/// Reads records written by [`export_records`].
pub fn import_records(path: &Path, format: ExportFormat) -> Result<Vec<BenchRecord>, BenchError> {
    let io_err = |source| BenchError::Io {
        path: path.to_path_buf(),
        source,
    };
    let bad = |message: String| BenchError::Format {
        path: path.to_path_buf(),
        message,
    };
    let file = fs::File::open(path).map_err(io_err)?;
    let mut records = Vec::new();
    match format {
        ExportFormat::Csv => {
            let mut reader = csv::Reader::from_reader(file);
            let header = reader.headers().map_err(|e| bad(e.to_string()))?;
            if header.iter().ne(CSV_HEADER) {
                return Err(bad(format!("unexpected header {header:?}")));
            }
            for row in reader.records() {
                let row = row.map_err(|e| bad(e.to_string()))?;
                let field = |i: usize| row.get(i).unwrap_or_default();
                let num = |i: usize| -> Result<f64, BenchError> {
                    field(i).parse().map_err(|_| bad(format!("bad number {:?}", field(i))))
                };
                let failed = field(4).is_empty();
                let mut record = BenchRecord {
                    codebase: field(0).to_owned(),
                    tree_size: field(1).parse().map_err(|_| bad(format!("bad size {:?}", field(1))))?,
                    strategy: field(2).parse().map_err(|e| bad(format!("{e}")))?,
                    kb_label: field(3).to_owned(),
                    lookups: 0,
                    lookup_fraction: 0.0,
                    elapsed: Duration::ZERO,
                    error: failed.then(String::new),
                };
                if !failed {
                    record.lookups = field(4).parse().map_err(|_| bad(format!("bad lookups {:?}", field(4))))?;
                    record.lookup_fraction = num(5)?;
                    record.elapsed = ms_duration(num(6)?);
                }
                records.push(record);
            }
        }
        ExportFormat::Jsonl => {
            for line in BufReader::new(file).lines() {
                let line = line.map_err(io_err)?;
                let row: JsonRow = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
                records.push(BenchRecord {
                    codebase: row.codebase,
                    tree_size: row.tree_size,
                    strategy: row.strategy,
                    kb_label: row.kb_label,
                    lookups: row.lookups,
                    lookup_fraction: row.lookup_fraction,
                    elapsed: ms_duration(row.elapsed_ms),
                    error: row.error,
                });
            }
        }
    }
    Ok(records)
}
