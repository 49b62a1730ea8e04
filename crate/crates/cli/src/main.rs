//! `dynconn`: generate update streams, ingest them with metrics, and verify
//! the engine against an exact oracle.
//!
//! Log verbosity is read from `DYNCONN_LOG` (for example `DYNCONN_LOG=debug`).

mod metrics;

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{debug, info};

use dynconn::engine::{ConnectivityEngine, EngineConfig, Fault, Mode};
use dynconn::oracle::ShadowGraph;
use dynconn::stream::{
    check_legal, gen_fixed_forest_stream, gen_standard_stream, interleave_queries, read_edge_list, read_file,
    write_file, LegalityChecker, OpKind, StreamOp,
};

use metrics::{LatencyHistogram, RunMetrics};

const LOG_ENV: &str = "DYNCONN_LOG";
const VERIFY_VERTEX_LIMIT: u64 = 4096;

#[derive(Parser)]
#[command(name = "dynconn", version, about = "Fully dynamic connectivity over sketched level forests")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build an update stream from an edge list.
    Gen(GenArgs),
    /// Run a stream through the engine and report throughput metrics.
    Ingest(IngestArgs),
    /// Run a stream through the engine and an exact oracle in lockstep.
    Verify(VerifyArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum StreamKind {
    /// Insert every edge, then delete every edge, each in random order.
    Standard,
    /// Insert a spanning forest, then toggle the remaining edges repeatedly.
    FixedForest,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, value_enum)]
    kind: StreamKind,
    /// Edge list, one `u v` pair per line.
    #[arg(long)]
    input: PathBuf,
    /// Insert/delete rounds of the non-forest edges.
    #[arg(long, default_value_t = 20)]
    repeats: usize,
    /// Interleave bursts of random connectivity queries.
    #[arg(long)]
    queries: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Vertex count; defaults to the largest id in the edge list plus one.
    #[arg(long)]
    vertices: Option<u32>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct EngineArgs {
    #[arg(long, default_value = "parallel")]
    mode: Mode,
    /// Number of levels; defaults to 2 ceil(log2 V) + 1.
    #[arg(long)]
    levels: Option<usize>,
    #[arg(long, default_value_t = 128)]
    buffer: usize,
    /// Level worker threads; 1 runs every level on the calling thread.
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl EngineArgs {
    fn config(&self, vertices: u32) -> EngineConfig {
        let mut cfg = EngineConfig::new(vertices).with_mode(self.mode).with_seed(self.seed);
        if let Some(l) = self.levels {
            cfg.num_levels = l;
        }
        cfg.buffer_capacity = self.buffer;
        cfg.workers = self.workers;
        cfg
    }
}

#[derive(Args)]
struct IngestArgs {
    stream: PathBuf,
    #[command(flatten)]
    engine: EngineArgs,
    /// Write metrics JSON here instead of stdout.
    #[arg(long)]
    metrics_out: Option<PathBuf>,
    /// Write one `0`/`1` line per query answer.
    #[arg(long)]
    answers_out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FaultKind {
    /// Drop the smallest forest edge from every level and mirror.
    Sever,
    /// Drop one forest edge from the top level only.
    DropLevel,
}

#[derive(Args)]
struct VerifyArgs {
    stream: PathBuf,
    #[command(flatten)]
    engine: EngineArgs,
    /// Only check stream legality.
    #[arg(long)]
    legal_only: bool,
    /// Audit every invariant after each operation.
    #[arg(long)]
    check_invariants: bool,
    /// Corrupt the engine to exercise the failure path.
    #[arg(long, value_enum)]
    inject_fault: Option<FaultKind>,
    /// Op index before which the fault is injected; defaults to the end.
    #[arg(long)]
    fault_at: Option<usize>,
    /// Allow streams with more than 4096 vertices.
    #[arg(long)]
    force: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or(LOG_ENV, "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(a) => gen(a).map(|_| ExitCode::SUCCESS),
        Command::Ingest(a) => ingest(a).map(|_| ExitCode::SUCCESS),
        Command::Verify(a) => verify(a),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        ExitCode::from(2)
    })
}

type CliResult<T> = Result<T, String>;

fn gen(a: GenArgs) -> CliResult<()> {
    let file = File::open(&a.input).map_err(|e| format!("{}: {e}", a.input.display()))?;
    let (n, edges) = read_edge_list(BufReader::new(file)).map_err(|e| e.to_string())?;
    let n = match a.vertices {
        Some(v) if v < n => return Err(format!("--vertices {v} is below the largest id in the edge list")),
        Some(v) => v,
        None => n,
    };
    let mut ops = match a.kind {
        StreamKind::Standard => gen_standard_stream(&edges, a.seed),
        StreamKind::FixedForest => gen_fixed_forest_stream(n, &edges, a.repeats, a.seed),
    };
    if a.queries {
        ops = interleave_queries(&ops, n, a.seed ^ 0x9e37_79b9);
    }
    check_legal(&ops, n as u64).map_err(|v| format!("generated stream is illegal: {v}"))?;
    write_file(&a.out, n as u64, &ops).map_err(|e| e.to_string())?;
    println!("wrote {} ops over {n} vertices to {}", ops.len(), a.out.display());
    Ok(())
}

fn load(path: &Path) -> CliResult<(u32, Vec<StreamOp>)> {
    let (header, ops) = read_file(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let n = u32::try_from(header.vertex_count).map_err(|_| "vertex count exceeds u32".to_string())?;
    info!("loaded {} ops over {n} vertices", ops.len());
    Ok((n, ops))
}

fn ingest(a: IngestArgs) -> CliResult<()> {
    let (n, ops) = load(&a.stream)?;
    let mut engine = ConnectivityEngine::new(a.engine.config(n)).map_err(|e| e.to_string())?;
    let mut legal = LegalityChecker::new(n as u64);
    let (mut upd, mut qry) = (LatencyHistogram::default(), LatencyHistogram::default());
    let mut answers = Vec::new();
    for (i, op) in ops.iter().enumerate() {
        legal.check(op).map_err(|k| format!("stream violation at op {i}: {k:?} on ({}, {})", op.u, op.v))?;
        let t = Instant::now();
        match op.kind {
            OpKind::Query => {
                let ans = engine.query(op.u, op.v).map_err(|e| e.to_string())?;
                qry.record(t.elapsed().as_nanos() as u64);
                answers.push(ans);
            }
            kind => {
                engine.update(op.u, op.v, kind == OpKind::Delete).map_err(|e| e.to_string())?;
                upd.record(t.elapsed().as_nanos() as u64);
            }
        }
    }
    let t = Instant::now();
    engine.flush().map_err(|e| e.to_string())?;
    // The closing flush belongs to update time but is not an update sample.
    upd.total_ns += t.elapsed().as_nanos() as u64;
    let stats = engine.stats();
    debug!("engine stats {stats:?}");
    let peak = engine.memory_bytes().map_err(|e| e.to_string())? as u64;
    info!("mean latency: update {:.0} ns, query {:.0} ns", upd.mean_ns(), qry.mean_ns());
    let m = RunMetrics::new(upd, qry, peak, stats.isolated_updates, stats.normal_updates);
    let json = serde_json::to_string_pretty(&m).map_err(|e| e.to_string())?;
    match &a.metrics_out {
        Some(p) => std::fs::write(p, json + "\n").map_err(|e| format!("{}: {e}", p.display()))?,
        None => println!("{json}"),
    }
    if let Some(p) = &a.answers_out {
        let mut w = BufWriter::new(File::create(p).map_err(|e| format!("{}: {e}", p.display()))?);
        for ans in answers {
            writeln!(w, "{}", u8::from(ans)).map_err(|e| e.to_string())?;
        }
        w.flush().map_err(|e| e.to_string())?;
    }
    Ok(())
}

#[derive(Default)]
struct Report {
    ops: usize,
    queries: usize,
    mismatches: usize,
    first_mismatch: Option<String>,
    invariant_violations: usize,
    first_violation: Option<String>,
    illegal: Option<String>,
}

impl Report {
    fn clean(&self) -> bool {
        self.mismatches == 0 && self.invariant_violations == 0 && self.illegal.is_none()
    }

    fn mismatch(&mut self, what: String) {
        self.mismatches += 1;
        self.first_mismatch.get_or_insert(what);
    }

    fn print(&self) {
        println!("ops: {}", self.ops);
        println!("queries: {}", self.queries);
        println!("mismatches: {}", self.mismatches);
        if let Some(m) = &self.first_mismatch {
            println!("first mismatch: {m}");
        }
        println!("invariant violations: {}", self.invariant_violations);
        if let Some(v) = &self.first_violation {
            println!("first violation: {v}");
        }
        if let Some(v) = &self.illegal {
            println!("illegal stream: {v}");
        }
        println!("{}", if self.clean() { "PASS" } else { "FAIL" });
    }
}

fn verify(a: VerifyArgs) -> CliResult<ExitCode> {
    let (n, ops) = load(&a.stream)?;
    if n as u64 > VERIFY_VERTEX_LIMIT && !a.force {
        return Err(format!("{n} vertices exceeds the verify limit of {VERIFY_VERTEX_LIMIT}; pass --force"));
    }
    let mut report = Report { ops: ops.len(), ..Report::default() };
    if a.legal_only {
        if let Err(v) = check_legal(&ops, n as u64) {
            report.illegal = Some(v.to_string());
        }
        report.print();
        return Ok(exit(&report));
    }
    let mut engine = ConnectivityEngine::new(a.engine.config(n)).map_err(|e| e.to_string())?;
    let mut oracle = ShadowGraph::new(n);
    let fault_at = a.fault_at.unwrap_or(ops.len());
    let audit = |engine: &mut ConnectivityEngine, report: &mut Report, at: String| -> CliResult<()> {
        let r = engine.check_invariants().map_err(|e| e.to_string())?;
        if !r.is_clean() {
            report.invariant_violations += r.violations.len();
            report.first_violation.get_or_insert(format!("{at}: {:?}", r.violations[0]));
        }
        Ok(())
    };
    for (i, op) in ops.iter().enumerate() {
        if i == fault_at {
            inject(&mut engine, a.inject_fault)?;
        }
        if let Err(k) = oracle.apply(op) {
            report.illegal = Some(format!("op {i}: {k:?} on ({}, {})", op.u, op.v));
            break;
        }
        match op.kind {
            OpKind::Query => {
                report.queries += 1;
                let got = engine.query(op.u, op.v).map_err(|e| e.to_string())?;
                let want = oracle.connected(op.u, op.v);
                if got != want {
                    report.mismatch(format!("op {i}: query ({}, {}) gave {got}, expected {want}", op.u, op.v));
                }
            }
            kind => engine.update(op.u, op.v, kind == OpKind::Delete).map_err(|e| e.to_string())?,
        }
        if a.check_invariants {
            audit(&mut engine, &mut report, format!("after op {i}"))?;
        }
    }
    if fault_at >= ops.len() {
        inject(&mut engine, a.inject_fault)?;
    }
    if report.illegal.is_none() {
        sweep(&mut engine, &oracle, &mut report)?;
        if a.check_invariants || a.inject_fault.is_some() {
            audit(&mut engine, &mut report, "at end of stream".into())?;
        }
    }
    report.print();
    Ok(exit(&report))
}

fn inject(engine: &mut ConnectivityEngine, fault: Option<FaultKind>) -> CliResult<()> {
    let fault = match fault {
        None => return Ok(()),
        Some(FaultKind::Sever) => Fault::SeverEdge,
        Some(FaultKind::DropLevel) => Fault::DropFromLevel { level: engine.top() },
    };
    let hit = engine.inject_fault(fault).map_err(|e| e.to_string())?;
    info!("injected {fault:?}, edge {hit:?}");
    Ok(())
}

/// Compares the final partition: each vertex against its component's smallest
/// member, and consecutive component representatives against each other.
fn sweep(engine: &mut ConnectivityEngine, oracle: &ShadowGraph, report: &mut Report) -> CliResult<()> {
    let labels = oracle.components();
    let mut reps: Vec<u32> = labels.clone();
    reps.sort_unstable();
    reps.dedup();
    for (v, &rep) in labels.iter().enumerate() {
        if !engine.query(v as u32, rep).map_err(|e| e.to_string())? {
            report.mismatch(format!("final sweep: {v} and {rep} reported disconnected"));
        }
    }
    for w in reps.windows(2) {
        if engine.query(w[0], w[1]).map_err(|e| e.to_string())? {
            report.mismatch(format!("final sweep: {} and {} reported connected", w[0], w[1]));
        }
    }
    Ok(())
}

fn exit(report: &Report) -> ExitCode {
    if report.clean() { ExitCode::SUCCESS } else { ExitCode::FAILURE }
}
