use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use priorscan::bench::{export_records, load_manifest, run_grid, summarize, ExportFormat, KbSource};
use priorscan::report::{render_json, render_text, PathStyle};
use priorscan::server::{serve, ServerConfig};
use priorscan::simulator::coverage_ladder;
use priorscan::{
    build_tree, save_kb_file, strategy_discovery, HttpConfig, HttpKb, KbBackend, MemoryKb, ScanConfig, SourceTree,
    Strategy,
};

#[derive(Parser)]
#[command(name = "priorscan", version, about = "Find which parts of a source tree are already archived")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Classify every file and directory under ROOT as known or unknown.
    Scan(ScanArgs),
    /// Knowledge base utilities.
    Db {
        #[command(subcommand)]
        command: DbCommand,
    },
    /// Write simulated knowledge bases for a corpus.
    Simulate(SimulateArgs),
    /// Measure lookup counts and timings over a corpus.
    Bench(BenchArgs),
}

#[derive(Subcommand)]
enum DbCommand {
    /// Serve a knowledge base file over HTTP.
    Serve(ServeArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Args)]
#[command(group = clap::ArgGroup::new("source").required(true).args(["api", "kb"]))]
struct ScanArgs {
    root: PathBuf,
    #[arg(short = 'f', long, value_enum, default_value = "text")]
    format: Format,
    #[arg(long, default_value = "layered")]
    strategy: Strategy,
    /// Base URL of a knowledge base server.
    #[arg(long)]
    api: Option<String>,
    /// Local knowledge base file, one SWHID per line.
    #[arg(long)]
    kb: Option<PathBuf>,
    /// Glob of paths to skip; repeatable.
    #[arg(long)]
    exclude: Vec<String>,
    /// Print lookup counts and timings to stderr.
    #[arg(long)]
    stats: bool,
    /// Exit with status 2 if anything is known.
    #[arg(long)]
    fail_on_known: bool,
    /// Report keys relative to ROOT.
    #[arg(long)]
    relative: bool,
    /// Fold uniform subtrees into one line (text format).
    #[arg(long)]
    collapse: bool,
    #[arg(long, default_value_t = 1000)]
    batch_size: usize,
    /// Request timeout in seconds.
    #[arg(long, default_value_t = 30)]
    timeout: u64,
    #[arg(long, default_value_t = 3)]
    retries: u32,
    #[arg(long, env = "PRIORSCAN_API_TOKEN", hide_env_values = true)]
    token: Option<String>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(short = 'f', long)]
    file: PathBuf,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long, default_value_t = 8100)]
    port: u16,
    #[arg(long, default_value_t = 1000)]
    max_batch: usize,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(short = 'm', long)]
    manifest: PathBuf,
    /// Known percentages, e.g. 0,10,20,...,100.
    #[arg(long, value_delimiter = ',', required = true, value_parser = clap::value_parser!(u8).range(0..=100))]
    fractions: Vec<u8>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(short = 'o', long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(short = 'm', long)]
    manifest: PathBuf,
    #[arg(long, required = true, num_args = 1..)]
    kb: Vec<PathBuf>,
    #[arg(long, num_args = 1.., default_value = "layered")]
    strategy: Vec<Strategy>,
    /// Output file; `.jsonl` selects JSON lines, anything else CSV.
    #[arg(short = 'o', long)]
    out: PathBuf,
    #[arg(long, default_value_t = 4)]
    workers: usize,
}

fn scan(args: ScanArgs) -> Result<ExitCode> {
    let config = ScanConfig {
        exclude_patterns: args.exclude,
        ..ScanConfig::default()
    };
    let tree = build_tree(&args.root, &config).with_context(|| format!("scanning {}", args.root.display()))?;
    for w in tree.warnings() {
        log::warn!("{}: {}", w.path.display(), w.message);
    }
    let kb: Box<dyn KbBackend> = match (&args.api, &args.kb) {
        (Some(url), _) => Box::new(HttpKb::new(HttpConfig {
            batch_size: args.batch_size,
            timeout: Duration::from_secs(args.timeout),
            retries: args.retries,
            token: args.token,
            ..HttpConfig::new(url.as_str())
        })?),
        (None, Some(path)) => Box::new(MemoryKb::open(path)?),
        (None, None) => bail!("one of --api or --kb is required"),
    };
    let (partition, stats) = strategy_discovery(&tree, kb.as_ref(), args.strategy)?;
    let style = if args.relative { PathStyle::Relative } else { PathStyle::Absolute };
    let mut out = match args.format {
        Format::Json => render_json(&partition, &tree, style),
        Format::Text => render_text(&partition, &tree, args.collapse, style),
    };
    if !out.ends_with('\n') {
        out.push('\n');
    }
    std::io::stdout().lock().write_all(out.as_bytes())?;
    if args.stats {
        eprintln!(
            "strategy={} kb={} lookups={} tree_size={} distinct_nodes={} known={} unknown={} elapsed_ms={:.3}",
            stats.strategy,
            stats.kb_label,
            stats.lookups,
            stats.tree_size,
            stats.distinct_nodes,
            partition.known.len(),
            partition.unknown.len(),
            stats.elapsed.as_secs_f64() * 1e3,
        );
    }
    if args.fail_on_known && !partition.known.is_empty() {
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

fn db_serve(args: ServeArgs) -> Result<ExitCode> {
    let config = ServerConfig {
        host: args.host,
        port: args.port,
        kb_path: args.file,
        max_batch: args.max_batch,
    };
    serve(&config)?;
    Ok(ExitCode::SUCCESS)
}

fn codebase_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn load_corpus(manifest: &Path) -> Result<Vec<(String, SourceTree)>> {
    load_manifest(manifest)?
        .iter()
        .map(|root| {
            let tree = build_tree(root, &ScanConfig::default()).with_context(|| format!("scanning {}", root.display()))?;
            Ok((codebase_name(root), tree))
        })
        .collect()
}

fn simulate(args: SimulateArgs) -> Result<ExitCode> {
    let corpus = load_corpus(&args.manifest)?;
    let trees: Vec<SourceTree> = corpus.into_iter().map(|(_, t)| t).collect();
    let kbs = coverage_ladder(&trees, &args.fractions, args.seed)?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    for (pct, kb) in args.fractions.iter().zip(&kbs) {
        let path = args.out.join(format!("known-{pct}.swhids"));
        save_kb_file(kb, &path)?;
        println!("{}\t{}", path.display(), kb.len());
    }
    Ok(ExitCode::SUCCESS)
}

fn bench(args: BenchArgs) -> Result<ExitCode> {
    let corpus = load_corpus(&args.manifest)?;
    let kbs: Vec<KbSource> = args.kb.into_iter().map(KbSource::File).collect();
    let records = run_grid(&corpus, &kbs, &args.strategy, args.workers);
    export_records(&records, &args.out, ExportFormat::from_path(&args.out))?;
    let failed: Vec<_> = records.iter().filter(|r| !r.is_ok()).collect();
    for r in &failed {
        log::error!(
            "{} / {} / {}: {}",
            r.codebase,
            r.kb_label,
            r.strategy,
            r.error.as_deref().unwrap_or_default()
        );
    }
    let summary = summarize(&records)?;
    println!("strategy\tkb\tsamples\tmean_fraction\tp95_fraction\tmean_ms\tp95_ms");
    for c in &summary.cells {
        println!(
            "{}\t{}\t{}\t{:.4}\t{:.4}\t{:.3}\t{:.3}",
            c.strategy,
            c.kb_label,
            c.samples,
            c.lookup_fraction.mean,
            c.lookup_fraction.p95,
            c.elapsed_ms.mean,
            c.elapsed_ms.p95
        );
    }
    if !failed.is_empty() {
        bail!("{} of {} cells failed", failed.len(), records.len());
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let outcome = match cli.command {
        Command::Scan(args) => scan(args),
        Command::Db { command: DbCommand::Serve(args) } => db_serve(args),
        Command::Simulate(args) => simulate(args),
        Command::Bench(args) => bench(args),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
