//! `travista` command line. Exit codes: 0 success, 1 runtime error, 2 usage error.

use crate::api;
use clap::{Args, Parser, Subcommand};
use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use travista::bench::{
    generate_corpus, run_scaling_bench, ScalingOptions, WorkloadSpec, COPY_SHIFT_US,
};
use travista::report::render_report;
use travista::store::{AggregateParams, Store, StoreError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const DEFAULT_PORT: u16 = 8714;

#[derive(Debug, Parser)]
#[command(name = "travista", version, about = "Cross-trace aggregation for diagnosing single slow requests")]
pub struct Cli {
    /// Store directory.
    #[arg(long, global = true, env = "TRAVISTA_DATA", default_value = "travista-data")]
    pub data_dir: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Ingest trace documents (`.json`, or `.jsonl` with one per line); directories are walked.
    Ingest {
        #[arg(required = true)]
        paths: Vec<PathBuf>,
        /// Do not fail on traces that are already stored.
        #[arg(long)]
        skip_duplicates: bool,
    },
    /// Serve the HTTP API until interrupted.
    Serve {
        #[arg(long, env = "TRAVISTA_PORT", default_value_t = DEFAULT_PORT)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: std::net::IpAddr,
        #[arg(long, default_value_t = api::DEFAULT_MAX_BODY_MB)]
        max_body_mb: usize,
    },
    /// Measure aggregate load latency against stores of growing size.
    Bench(BenchArgs),
    /// Print a diagnosis of one stored trace.
    Report {
        trace_id: String,
        #[command(flatten)]
        params: ParamArgs,
        /// Emit the structured report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Write a synthetic corpus as JSON lines.
    Generate {
        /// Workload spec; the bundled ComposePost workload if omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Override the workload's trace count.
        #[arg(long)]
        traces: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Also write the planted anomaly's location here.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct ParamArgs {
    #[arg(long, default_value_t = travista::aggregation::DEFAULT_BINS)]
    pub bins: usize,
    #[arg(long, default_value_t = travista::aggregation::DEFAULT_THRESHOLD)]
    pub threshold: f64,
    #[arg(long, default_value_t = travista::aggregation::DEFAULT_RARITY_CUTOFF)]
    pub rarity_cutoff: f64,
}

impl ParamArgs {
    fn params(&self) -> Result<AggregateParams, String> {
        let p = AggregateParams {
            bins: self.bins,
            threshold: self.threshold,
            rarity_cutoff: self.rarity_cutoff,
        };
        p.validate().map_err(|e| e.to_string())?;
        Ok(p)
    }
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Workload spec; the bundled ComposePost workload if omitted.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Copy factors, strictly increasing.
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
    pub copies: Vec<usize>,
    #[arg(long, default_value_t = 1000)]
    pub iters: usize,
    #[arg(long, default_value = "bench.csv")]
    pub out: PathBuf,
    /// Give every copy identical timestamps.
    #[arg(long)]
    pub overlap_copies: bool,
    /// Offset between consecutive copies.
    #[arg(long, default_value_t = COPY_SHIFT_US)]
    pub shift_us: i64,
    /// Override the workload's trace count.
    #[arg(long)]
    pub traces: Option<usize>,
    /// Override the workload's arrival interval.
    #[arg(long)]
    pub arrival_us: Option<i64>,
    #[command(flatten)]
    pub params: ParamArgs,
}

/// A failure with the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_USAGE,
        message: message.into(),
    }
}

fn runtime(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_RUNTIME,
        message: message.into(),
    }
}

impl From<StoreError> for Failure {
    fn from(e: StoreError) -> Self {
        runtime(format!("{}: {e}", e.code()))
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        runtime(e.to_string())
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

pub fn execute(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Ingest {
            paths,
            skip_duplicates,
        } => cmd_ingest(&cli.data_dir, &paths, skip_duplicates),
        Command::Serve {
            port,
            host,
            max_body_mb,
        } => cmd_serve(&cli.data_dir, SocketAddr::new(host, port), max_body_mb),
        Command::Bench(args) => cmd_bench(&args),
        Command::Report {
            trace_id,
            params,
            json,
        } => cmd_report(&cli.data_dir, &trace_id, &params, json),
        Command::Generate {
            spec,
            out,
            traces,
            seed,
            truth,
        } => cmd_generate(spec.as_deref(), &out, traces, seed, truth.as_deref()),
    }
}

fn load_spec(path: Option<&Path>) -> Result<WorkloadSpec, Failure> {
    match path {
        None => Ok(WorkloadSpec::compose_post()),
        Some(p) => {
            let raw = fs::read_to_string(p)
                .map_err(|e| runtime(format!("reading {}: {e}", p.display())))?;
            WorkloadSpec::from_json(&raw).map_err(|e| usage(format!("{}: {e}", p.display())))
        }
    }
}

#[derive(Debug, Default)]
pub struct IngestSummary {
    pub files: usize,
    pub accepted: usize,
    pub duplicates: usize,
    pub rejected: BTreeMap<String, usize>,
    pub preprocessing_us: f64,
}

fn collect_inputs(paths: &[PathBuf]) -> Result<Vec<PathBuf>, Failure> {
    let mut files = Vec::new();
    for root in paths {
        let meta = fs::metadata(root).map_err(|e| runtime(format!("{}: {e}", root.display())))?;
        if meta.is_file() {
            files.push(root.clone());
            continue;
        }
        let mut found = Vec::new();
        for entry in walkdir::WalkDir::new(root) {
            let entry = entry.map_err(|e| runtime(e.to_string()))?;
            let ext = entry.path().extension().and_then(|e| e.to_str());
            if entry.file_type().is_file() && matches!(ext, Some("json" | "jsonl")) {
                found.push(entry.into_path());
            }
        }
        found.sort();
        files.extend(found);
    }
    Ok(files)
}

fn cmd_ingest(data_dir: &Path, paths: &[PathBuf], skip_duplicates: bool) -> Result<(), Failure> {
    let files = collect_inputs(paths)?;
    let store = Store::open(data_dir)?;
    let mut s = IngestSummary::default();
    let record = |raw: &[u8], origin: &str, s: &mut IngestSummary| match store.ingest_document(raw) {
        Ok((receipt, _)) => {
            s.accepted += 1;
            s.preprocessing_us += receipt.preprocessing_us;
        }
        Err(StoreError::Duplicate(_)) if skip_duplicates => s.duplicates += 1,
        Err(e) => {
            eprintln!("rejected {origin}: {}: {e}", e.code());
            *s.rejected.entry(e.code().to_string()).or_default() += 1;
        }
    };
    for file in &files {
        let raw = fs::read(file).map_err(|e| runtime(format!("{}: {e}", file.display())))?;
        s.files += 1;
        let name = file.display().to_string();
        if file.extension().is_some_and(|e| e == "jsonl") {
            for (n, line) in raw.split(|&b| b == b'\n').enumerate() {
                if !line.iter().all(u8::is_ascii_whitespace) {
                    record(line, &format!("{name}:{}", n + 1), &mut s);
                }
            }
        } else {
            record(&raw, &name, &mut s);
        }
    }
    store.flush()?;

    let rejected: usize = s.rejected.values().sum();
    println!("files read:       {}", s.files);
    println!("traces accepted:  {}", s.accepted);
    if skip_duplicates {
        println!("duplicates skipped: {}", s.duplicates);
    }
    println!("traces rejected:  {rejected}");
    for (code, n) in &s.rejected {
        println!("  {code}: {n}");
    }
    if s.accepted > 0 {
        println!(
            "mean preprocessing: {:.1} us/trace",
            s.preprocessing_us / s.accepted as f64
        );
    }
    let stats = store.snapshot().stats();
    println!(
        "store: {} traces, {} tasks, {} events",
        stats.traces, stats.tasks, stats.events
    );
    if rejected > 0 {
        return Err(runtime(format!("{rejected} trace(s) rejected")));
    }
    Ok(())
}

fn cmd_serve(data_dir: &Path, addr: SocketAddr, max_body_mb: usize) -> Result<(), Failure> {
    if max_body_mb == 0 {
        return Err(usage("--max-body-mb must be at least 1"));
    }
    let store = Arc::new(Store::open(data_dir)?);
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| runtime(format!("binding {addr}: {e}")))?;
        eprintln!("listening on http://{}", listener.local_addr()?);
        let app = api::router(store.clone(), max_body_mb * 1024 * 1024);
        axum::serve(listener, app)
            .with_graceful_shutdown(shutdown_signal())
            .await?;
        Ok::<_, Failure>(())
    })?;
    store.flush()?;
    eprintln!("store flushed, bye");
    Ok(())
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
}

fn cmd_bench(args: &BenchArgs) -> Result<(), Failure> {
    let params = args.params.params().map_err(usage)?;
    if args.copies.is_empty()
        || args.copies[0] == 0
        || args.copies.windows(2).any(|w| w[0] >= w[1])
    {
        return Err(usage("--copies must be positive and strictly increasing"));
    }
    if args.iters == 0 {
        return Err(usage("--iters must be at least 1"));
    }
    let mut spec = load_spec(args.spec.as_deref())?;
    if let Some(n) = args.traces {
        spec.traces_per_run = n;
        if spec.anomalies.focal.as_ref().is_some_and(|f| f.trace_index >= n) {
            spec.anomalies.focal = None;
        }
    }
    if let Some(a) = args.arrival_us {
        spec.arrival_interval_us = a;
    }
    let corpus = generate_corpus(&spec).map_err(|e| usage(e.to_string()))?;
    eprintln!(
        "base corpus: {} traces; copies {:?}; {} iterations each",
        corpus.traces.len(),
        args.copies,
        args.iters
    );
    let options = ScalingOptions {
        overlap_copies: args.overlap_copies,
        shift_us: args.shift_us,
        params,
    };
    let result = run_scaling_bench(&corpus.traces, &args.copies, args.iters, options)
        .map_err(|e| runtime(e.to_string()))?;
    let file = fs::File::create(&args.out)
        .map_err(|e| runtime(format!("{}: {e}", args.out.display())))?;
    result
        .write_csv(BufWriter::new(file))
        .map_err(|e| runtime(e.to_string()))?;
    print!("{}", result.summary_table());
    println!("wrote {} rows to {}", result.rows.len(), args.out.display());
    Ok(())
}

fn cmd_report(data_dir: &Path, trace_id: &str, args: &ParamArgs, json: bool) -> Result<(), Failure> {
    let params = args.params().map_err(usage)?;
    if !data_dir.join(travista::store::LOG_FILE).exists() {
        return Err(runtime(format!("no store at {}", data_dir.display())));
    }
    let store = Store::open(data_dir)?;
    let (payload, _) = store.snapshot().load_trace_aggregates(trace_id, params)?;
    let mut out = io::stdout().lock();
    if json {
        let report = travista::report::Report::from_payload(&payload);
        serde_json::to_writer_pretty(&mut out, &report).map_err(|e| runtime(e.to_string()))?;
        writeln!(out)?;
    } else {
        out.write_all(render_report(&payload).as_bytes())?;
    }
    Ok(())
}

fn cmd_generate(
    spec: Option<&Path>,
    out: &Path,
    traces: Option<usize>,
    seed: Option<u64>,
    truth: Option<&Path>,
) -> Result<(), Failure> {
    let mut spec = load_spec(spec)?;
    if let Some(n) = traces {
        spec.traces_per_run = n;
        if spec.anomalies.focal.as_ref().is_some_and(|f| f.trace_index >= n) {
            spec.anomalies.focal = None;
        }
    }
    if let Some(s) = seed {
        spec.seed = s;
    }
    let corpus = generate_corpus(&spec).map_err(|e| usage(e.to_string()))?;
    let mut w = BufWriter::new(
        fs::File::create(out).map_err(|e| runtime(format!("{}: {e}", out.display())))?,
    );
    for t in &corpus.traces {
        w.write_all(&t.to_canonical_json())?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    if let (Some(path), Some(gt)) = (truth, &corpus.ground_truth) {
        let json = serde_json::to_vec_pretty(gt).map_err(|e| runtime(e.to_string()))?;
        fs::write(path, json)?;
    }
    println!("wrote {} traces to {}", corpus.traces.len(), out.display());
    if let Some(gt) = &corpus.ground_truth {
        println!(
            "planted anomaly: trace {} task {} ({}) on {}",
            gt.trace_id, gt.task_id, gt.task_type, gt.process_id
        );
    }
    Ok(())
}
