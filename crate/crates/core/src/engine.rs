//! The dynamic connectivity engine.
//!
//! Levels `0..=top` each hold a [`CutsetLevel`]. The coordinator owns the
//! weighted top forest (a [`LinkCutForest`] whose edge weights are insertion
//! levels), a sketchless query forest mirroring level `top`, the map from
//! forest edge to its lowest level, and the update buffer.
//!
//! Levels are reached only through message rounds on an [`Executor`], either
//! inline or on worker threads that each own a subset of levels. Both run the
//! same per-level handler, so they are behaviourally identical.
//!
//! The invariants maintained, whp, are:
//! * level 0 has no edges;
//! * every level's forest is contained in the next level's forest;
//! * a level component whose sketch yields an edge is strictly contained in its
//!   component one level up.

use std::collections::HashMap;
use std::fmt;
use std::ops::Range;
use std::str::FromStr;
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::Arc;
use std::thread::JoinHandle;

use thiserror::Error;

use crate::cutset::{CutsetError, CutsetLevel, HeightMode, StructuralOp};
use crate::ett::{EttError, EulerTourForest};
use crate::lct::{LctError, LinkCutForest};
use crate::sketch::mix64;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EngineError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("invalid edge ({0}, {1})")]
    InvalidEdge(u32, u32),
    #[error("invalid query ({0}, {1})")]
    InvalidQuery(u32, u32),
    #[error("internal error: {0}")]
    Internal(String),
}

impl From<CutsetError> for EngineError {
    fn from(e: CutsetError) -> Self {
        EngineError::Internal(e.to_string())
    }
}

impl From<EttError> for EngineError {
    fn from(e: EttError) -> Self {
        EngineError::Internal(e.to_string())
    }
}

impl From<LctError> for EngineError {
    fn from(e: LctError) -> Self {
        EngineError::Internal(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    /// One level at a time, from level 0, for every update.
    Sequential,
    /// All levels in one round, restoration only from the lowest violation.
    Parallel,
    /// Speculative batches of `buffer_capacity` updates.
    BufferedParallel,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Sequential => "sequential",
            Mode::Parallel => "parallel",
            Mode::BufferedParallel => "buffered",
        })
    }
}

impl FromStr for Mode {
    type Err = EngineError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sequential" => Ok(Mode::Sequential),
            "parallel" => Ok(Mode::Parallel),
            "buffered" | "buffered-parallel" => Ok(Mode::BufferedParallel),
            _ => Err(EngineError::InvalidConfig(format!("unknown mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub vertices: u32,
    /// `top + 1`.
    pub num_levels: usize,
    pub columns: u32,
    /// Measured per-query sketch success probability.
    pub success_p: f64,
    pub seed: u64,
    pub buffer_capacity: usize,
    pub mode: Mode,
    /// Level workers; 1 runs levels inline on the calling thread.
    pub workers: usize,
    /// Threads replaying sketch additions inside one structural op.
    pub helpers: usize,
    pub heights: HeightMode,
}

pub const DEFAULT_COLUMNS: u32 = 7;
pub const DEFAULT_SUCCESS_P: f64 = 0.9;
pub const DEFAULT_BUFFER: usize = 128;

impl EngineConfig {
    pub fn new(vertices: u32) -> Self {
        EngineConfig {
            vertices,
            num_levels: default_num_levels(vertices),
            columns: DEFAULT_COLUMNS,
            success_p: DEFAULT_SUCCESS_P,
            seed: 0,
            buffer_capacity: DEFAULT_BUFFER,
            mode: Mode::Parallel,
            workers: 1,
            helpers: 1,
            heights: HeightMode::Reduced,
        }
    }

    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |m: &str| Err(EngineError::InvalidConfig(m.to_string()));
        if self.vertices == 0 {
            return bad("vertex count must be positive");
        }
        if self.num_levels < 2 {
            return bad("need at least two levels");
        }
        if self.columns == 0 {
            return bad("need at least one sketch column");
        }
        if !(self.success_p > 0.0 && self.success_p < 1.0) {
            return bad("success probability must lie in (0, 1)");
        }
        if self.buffer_capacity == 0 {
            return bad("buffer capacity must be positive");
        }
        if self.workers == 0 || self.helpers == 0 {
            return bad("worker and helper counts must be positive");
        }
        Ok(())
    }
}

fn ceil_log2(x: u64) -> u32 {
    if x <= 1 { 0 } else { 64 - (x - 1).leading_zeros() }
}

/// Practical default: `2 * ceil(log2 V) + 1`, at least 2.
pub fn default_num_levels(vertices: u32) -> usize {
    (2 * ceil_log2(vertices as u64) as usize + 1).max(2)
}

/// `top = ceil(max(2 alpha / beta, 8 c ln V / beta))` with
/// `alpha = ceil(log_{4/(4-p)} V)` and `beta = (1 - p) / (1 - p/2)`.
pub fn theoretical_top(vertices: u64, p: f64, columns: u32) -> Result<usize, EngineError> {
    if !(p > 0.0 && p < 1.0) {
        return Err(EngineError::InvalidConfig("p must lie in (0, 1)".into()));
    }
    if columns == 0 || vertices < 2 {
        return Err(EngineError::InvalidConfig("need c >= 1 and V >= 2".into()));
    }
    let ln_v = (vertices as f64).ln();
    let alpha = (ln_v / (4.0 / (4.0 - p)).ln()).ceil();
    let beta = (1.0 - p) / (1.0 - p / 2.0);
    let top = (2.0 * alpha / beta).max(8.0 * columns as f64 * ln_v / beta);
    Ok(top.ceil() as usize)
}

/// Level count `top + 1` for the safe `top` above.
pub fn compute_num_levels(vertices: u64, p: f64, columns: u32) -> Result<usize, EngineError> {
    Ok(theoretical_top(vertices, p, columns)? + 1)
}

#[inline]
fn key(u: u32, v: u32) -> (u32, u32) {
    (u.min(v), u.max(v))
}

/// Phase-A work for one update at every level.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct LevelOp {
    u: u32,
    v: u32,
    /// Lowest level holding the edge when a forest edge is deleted.
    cut_from: Option<usize>,
}

/// What a level sees at both endpoints right after one update.
#[derive(Debug, Clone, Copy, Default)]
struct Obs {
    size: [u64; 2],
    query: [Option<(u32, u32)>; 2],
}

/// Per-level view for the invariant checker.
#[derive(Debug, Clone)]
pub struct LevelSnapshot {
    pub edges: Vec<(u32, u32)>,
    pub component: Vec<u32>,
    pub size: Vec<u64>,
    pub query: Vec<Option<(u32, u32)>>,
    pub audit: Result<(), String>,
}

type Link = (u32, u32, usize);

#[derive(Debug)]
enum Cmd {
    Apply { ops: Vec<LevelOp>, observe: bool, log: bool },
    Revert { from: usize },
    Probe { w: u32, level: usize },
    Structural { cut: Option<Link>, link: Option<Link>, helpers: usize },
    CutOnly { u: u32, v: u32 },
    Serialize,
    Memory,
    Snapshot,
}

#[derive(Debug)]
enum Resp {
    Observed(Vec<Obs>),
    Probed { query: Option<(u32, u32)>, size: u64 },
    Tasks(usize),
    Bytes(Vec<u8>),
    Memory(usize),
    Snapshot(Box<LevelSnapshot>),
    Done,
    Failed(String),
}

/// The levels one worker owns, with their speculative logs.
struct LevelGroup {
    top: usize,
    levels: Vec<(CutsetLevel, Vec<(u32, u32, bool)>)>,
}

impl LevelGroup {
    fn handle(&mut self, cmd: &Cmd, range: &Range<usize>) -> Vec<(usize, Resp)> {
        let top = self.top;
        let mut out = Vec::new();
        for (level, log) in self.levels.iter_mut() {
            let i = level.level();
            if !range.contains(&i) {
                continue;
            }
            let r = Self::handle_level(top, level, log, cmd).unwrap_or_else(|e| Resp::Failed(format!("level {i}: {e}")));
            out.push((i, r));
        }
        out
    }

    fn handle_level(top: usize, l: &mut CutsetLevel, log: &mut Vec<(u32, u32, bool)>, cmd: &Cmd) -> Result<Resp, CutsetError> {
        let i = l.level();
        Ok(match cmd {
            Cmd::Apply { ops, observe, log: keep } => {
                if *keep {
                    log.clear();
                }
                let mut obs = Vec::with_capacity(if *observe { ops.len() } else { 0 });
                for op in ops {
                    l.update(op.u, op.v)?;
                    let cut = op.cut_from.is_some_and(|from| i >= from);
                    if cut {
                        l.cut(op.u, op.v)?;
                    }
                    if *keep {
                        log.push((op.u, op.v, cut));
                    }
                    if *observe {
                        let mut o = Obs { size: [l.component_size(op.u), l.component_size(op.v)], query: [None; 2] };
                        if i < top {
                            o.query = [l.query(op.u), l.query(op.v)];
                        }
                        obs.push(o);
                    }
                }
                Resp::Observed(obs)
            }
            Cmd::Revert { from } => {
                for &(u, v, cut) in log.iter().skip(*from).rev() {
                    if cut {
                        l.link(u, v)?;
                    }
                    l.update(u, v)?;
                }
                log.clear();
                Resp::Done
            }
            Cmd::Probe { w, level } => Resp::Probed {
                query: if i == *level { l.query(*w) } else { None },
                size: l.component_size(*w),
            },
            Cmd::Structural { cut, link, helpers } => {
                let mut tasks = 0;
                if let Some((x, y, from)) = *cut {
                    if i >= from {
                        tasks += l.parallel_structural_op(StructuralOp::Cut(x, y), *helpers)?;
                    }
                }
                if let Some((a, b, from)) = *link {
                    if i >= from {
                        tasks += l.parallel_structural_op(StructuralOp::Link(a, b), *helpers)?;
                    }
                }
                Resp::Tasks(tasks)
            }
            Cmd::CutOnly { u, v } => {
                l.cut(*u, *v)?;
                Resp::Done
            }
            Cmd::Serialize => {
                let mut out = Vec::new();
                l.serialize(&mut out);
                Resp::Bytes(out)
            }
            Cmd::Memory => Resp::Memory(l.peak_bytes()),
            Cmd::Snapshot => {
                let n = l.vertex_count();
                let f = l.forest();
                let mut ids: HashMap<u32, (u32, Option<(u32, u32)>)> = HashMap::new();
                let mut snap = LevelSnapshot {
                    edges: f.edges(),
                    component: Vec::with_capacity(n as usize),
                    size: Vec::with_capacity(n as usize),
                    query: Vec::with_capacity(n as usize),
                    audit: f.check(),
                };
                for v in 0..n {
                    let (label, q) = *ids.entry(f.component_id(v)).or_insert_with(|| (v, l.query(v)));
                    snap.component.push(label);
                    snap.size.push(l.component_size(v));
                    snap.query.push(q);
                }
                Resp::Snapshot(Box::new(snap))
            }
        })
    }
}

struct Worker {
    tx: Sender<(Arc<Cmd>, Range<usize>)>,
    handle: Option<JoinHandle<()>>,
}

/// Runs message rounds against the levels.
enum Executor {
    Inline(LevelGroup),
    Threads { workers: Vec<Worker>, rx: Receiver<Vec<(usize, Resp)>> },
}

impl Executor {
    fn new(levels: Vec<CutsetLevel>, workers: usize) -> Self {
        let top = levels.len() - 1;
        if workers <= 1 {
            return Executor::Inline(LevelGroup { top, levels: levels.into_iter().map(|l| (l, Vec::new())).collect() });
        }
        let count = workers.min(levels.len());
        let mut groups: Vec<LevelGroup> = (0..count).map(|_| LevelGroup { top, levels: Vec::new() }).collect();
        for l in levels {
            groups[l.level() % count].levels.push((l, Vec::new()));
        }
        let (reply_tx, rx) = channel();
        let workers = groups
            .into_iter()
            .enumerate()
            .map(|(w, mut group)| {
                let (tx, cmd_rx) = channel::<(Arc<Cmd>, Range<usize>)>();
                let reply = reply_tx.clone();
                let handle = std::thread::Builder::new()
                    .name(format!("level-worker-{w}"))
                    .spawn(move || {
                        while let Ok((cmd, range)) = cmd_rx.recv() {
                            if reply.send(group.handle(&cmd, &range)).is_err() {
                                break;
                            }
                        }
                    })
                    .expect("spawn level worker");
                Worker { tx, handle: Some(handle) }
            })
            .collect();
        Executor::Threads { workers, rx }
    }

    /// Sends `cmd` to every level in `range` and gathers replies by level.
    fn round(&mut self, cmd: Cmd, range: Range<usize>) -> Vec<(usize, Resp)> {
        match self {
            Executor::Inline(group) => group.handle(&cmd, &range),
            Executor::Threads { workers, rx } => {
                let count = workers.len();
                let cmd = Arc::new(cmd);
                let mut sent = 0;
                for (w, worker) in workers.iter().enumerate() {
                    if range.clone().any(|l| l % count == w) {
                        worker.tx.send((Arc::clone(&cmd), range.clone())).expect("level worker alive");
                        sent += 1;
                    }
                }
                let mut out: Vec<(usize, Resp)> =
                    (0..sent).flat_map(|_| rx.recv().expect("level worker reply")).collect();
                out.sort_by_key(|r| r.0);
                out
            }
        }
    }
}

impl Drop for Executor {
    fn drop(&mut self) {
        if let Executor::Threads { workers, .. } = self {
            let handles: Vec<_> = workers.iter_mut().filter_map(|w| w.handle.take()).collect();
            workers.clear();
            for h in handles {
                let _ = h.join();
            }
        }
    }
}

/// Counters for instrumentation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EngineStats {
    /// Updates that induced at least one link or cut in some level.
    pub isolated_updates: u64,
    pub normal_updates: u64,
    /// Components found violating the strict-containment invariant.
    pub isolated_components: u64,
    /// Buffered updates whose speculative work was undone.
    pub reverted_updates: u64,
    pub buffer_flushes: u64,
    pub message_rounds: u64,
    /// Sketch additions logged by structural ops.
    pub structural_tasks: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    /// An edge at level 0.
    I1 { edge: (u32, u32) },
    /// `edge` is in level `level` but not in `level + 1`.
    I2 { level: usize, edge: (u32, u32) },
    /// The component of `vertex` at `level` yields `edge` yet equals its parent component.
    I3 { level: usize, vertex: u32, edge: (u32, u32) },
    /// A sampled edge does not leave the sampled component.
    UnsoundQuery { level: usize, vertex: u32, edge: (u32, u32) },
    /// Top forest, weighted forest, query forest and edge map disagree.
    Mirror(String),
    /// A forest failed its structural audit.
    Structure { level: Option<usize>, detail: String },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct InvariantReport {
    pub violations: Vec<Violation>,
}

impl InvariantReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Test hooks that corrupt the structure on purpose.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Removes the smallest forest edge everywhere while leaving it in the
    /// graph, as if it had been deleted without updating the sketches.
    SeverEdge,
    /// Removes the smallest forest edge below `level` from `level` only.
    DropFromLevel { level: usize },
}

pub struct ConnectivityEngine {
    cfg: EngineConfig,
    exec: Executor,
    tree: LinkCutForest,
    query_forest: EulerTourForest,
    forest_edges: HashMap<(u32, u32), usize>,
    peak_forest_edges: usize,
    buffer: Vec<(u32, u32, bool)>,
    stats: EngineStats,
}

impl fmt::Debug for ConnectivityEngine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ConnectivityEngine").field("cfg", &self.cfg).field("stats", &self.stats).finish()
    }
}

impl ConnectivityEngine {
    pub fn new(cfg: EngineConfig) -> Result<Self, EngineError> {
        cfg.validate()?;
        let levels = (0..cfg.num_levels)
            .map(|i| CutsetLevel::new(cfg.vertices, i, cfg.seed, cfg.columns, cfg.heights))
            .collect::<Result<Vec<_>, _>>()?;
        let dist = cfg.heights.distribution(cfg.vertices, mix64(cfg.seed ^ 0x7175_6572_79));
        Ok(ConnectivityEngine {
            exec: Executor::new(levels, cfg.workers),
            tree: LinkCutForest::new(cfg.vertices),
            query_forest: EulerTourForest::new(cfg.vertices, dist, None),
            forest_edges: HashMap::new(),
            peak_forest_edges: 0,
            buffer: Vec::with_capacity(cfg.buffer_capacity),
            stats: EngineStats::default(),
            cfg,
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    pub fn stats(&self) -> EngineStats {
        self.stats
    }

    pub fn top(&self) -> usize {
        self.cfg.num_levels - 1
    }

    pub fn pending(&self) -> usize {
        self.buffer.len()
    }

    /// Forest edges of the top level with their lowest level, sorted.
    pub fn forest_edges(&self) -> Vec<(u32, u32, usize)> {
        let mut out: Vec<_> = self.forest_edges.iter().map(|(&(a, b), &l)| (a, b, l)).collect();
        out.sort_unstable();
        out
    }

    fn round(&mut self, cmd: Cmd, range: Range<usize>) -> Result<Vec<(usize, Resp)>, EngineError> {
        self.stats.message_rounds += 1;
        let out = self.exec.round(cmd, range);
        if let Some((_, Resp::Failed(msg))) = out.iter().find(|r| matches!(r.1, Resp::Failed(_))) {
            return Err(EngineError::Internal(msg.clone()));
        }
        Ok(out)
    }

    fn all(&self) -> Range<usize> {
        0..self.cfg.num_levels
    }

    fn check_edge(&self, u: u32, v: u32) -> Result<(), EngineError> {
        if u == v || u >= self.cfg.vertices || v >= self.cfg.vertices {
            return Err(EngineError::InvalidEdge(u, v));
        }
        Ok(())
    }

    /// Processes one update. The caller guarantees stream legality: inserts
    /// only of absent edges and deletes only of present ones.
    pub fn update(&mut self, u: u32, v: u32, is_deletion: bool) -> Result<(), EngineError> {
        self.check_edge(u, v)?;
        match self.cfg.mode {
            Mode::Sequential => self.update_sequential(u, v, is_deletion),
            Mode::Parallel => self.update_parallel(u, v, is_deletion),
            Mode::BufferedParallel => {
                self.buffer.push((u, v, is_deletion));
                if self.buffer.len() >= self.cfg.buffer_capacity {
                    self.flush()?;
                }
                Ok(())
            }
        }
    }

    pub fn insert(&mut self, u: u32, v: u32) -> Result<(), EngineError> {
        self.update(u, v, false)
    }

    pub fn delete(&mut self, u: u32, v: u32) -> Result<(), EngineError> {
        self.update(u, v, true)
    }

    /// Flushes pending updates, then answers from the query forest.
    pub fn query(&mut self, u: u32, v: u32) -> Result<bool, EngineError> {
        if u >= self.cfg.vertices || v >= self.cfg.vertices {
            return Err(EngineError::InvalidQuery(u, v));
        }
        self.flush()?;
        Ok(self.query_forest.connected(u, v))
    }

    /// Removes a deleted forest edge from the coordinator's structures and
    /// returns the lowest level that holds it.
    fn detach_forest_edge(&mut self, u: u32, v: u32) -> Result<Option<usize>, EngineError> {
        let Some(level) = self.forest_edges.remove(&key(u, v)) else {
            return Ok(None);
        };
        self.tree.cut(u, v)?;
        self.query_forest.cut(u, v)?;
        Ok(Some(level))
    }

    fn attach_forest_edge(&mut self, u: u32, v: u32, level: usize) -> Result<(), EngineError> {
        self.tree.link(u, v, level as u32)?;
        self.query_forest.link(u, v)?;
        self.forest_edges.insert(key(u, v), level);
        self.peak_forest_edges = self.peak_forest_edges.max(self.forest_edges.len());
        Ok(())
    }

    /// Phase A over a batch; observations are indexed `[level][op]`.
    fn apply(&mut self, ops: Vec<LevelOp>, observe: bool, log: bool) -> Result<Vec<Vec<Obs>>, EngineError> {
        let range = self.all();
        let out = self.round(Cmd::Apply { ops, observe, log }, range)?;
        Ok(out
            .into_iter()
            .map(|(_, r)| match r {
                Resp::Observed(o) => o,
                _ => Vec::new(),
            })
            .collect())
    }

    /// Lowest level whose component at either endpoint of op `j` is isolated.
    fn lowest_violation(&self, obs: &[Vec<Obs>], j: usize) -> Option<usize> {
        (0..self.top()).find(|&i| (0..2).any(|w| obs[i][j].query[w].is_some() && obs[i][j].size[w] == obs[i + 1][j].size[w]))
    }

    fn probe(&mut self, w: u32, level: usize) -> Result<(Option<(u32, u32)>, u64, u64), EngineError> {
        let out = self.round(Cmd::Probe { w, level }, level..level + 2)?;
        let mut q = None;
        let mut sizes = [0u64; 2];
        for (i, r) in out {
            if let Resp::Probed { query, size } = r {
                sizes[i - level] = size;
                if i == level {
                    q = query;
                }
            }
        }
        Ok((q, sizes[0], sizes[1]))
    }

    /// Links `(a, b)` at levels above `i`, first cutting the heaviest edge of
    /// the cycle it would close.
    fn promote(&mut self, a: u32, b: u32, i: usize) -> Result<(), EngineError> {
        let cut = if self.tree.connected(a, b) {
            let (x, y, l) = self.tree.path_query(a, b)?;
            self.detach_forest_edge(x, y)?;
            Some((x, y, l as usize))
        } else {
            None
        };
        self.attach_forest_edge(a, b, i + 1)?;
        let from = cut.map_or(i + 1, |c| c.2.min(i + 1));
        let helpers = self.cfg.helpers;
        let out = self.round(Cmd::Structural { cut, link: Some((a, b, i + 1)), helpers }, from..self.cfg.num_levels)?;
        for (_, r) in out {
            if let Resp::Tasks(t) = r {
                self.stats.structural_tasks += t as u64;
            }
        }
        Ok(())
    }

    /// Restoration sweep for update `(u, v)` from level `start`; returns
    /// whether any link was made.
    fn restore(&mut self, u: u32, v: u32, start: usize) -> Result<bool, EngineError> {
        let mut any = false;
        for i in start..self.top() {
            for w in [u, v] {
                let (q, here, above) = self.probe(w, i)?;
                if let Some((a, b)) = q {
                    if here == above {
                        self.stats.isolated_components += 1;
                        self.promote(a, b, i)?;
                        any = true;
                    }
                }
            }
        }
        Ok(any)
    }

    fn count(&mut self, isolated: bool) {
        if isolated {
            self.stats.isolated_updates += 1;
        } else {
            self.stats.normal_updates += 1;
        }
    }

    fn update_sequential(&mut self, u: u32, v: u32, del: bool) -> Result<(), EngineError> {
        let cut_from = if del { self.detach_forest_edge(u, v)? } else { None };
        self.apply(vec![LevelOp { u, v, cut_from }], false, false)?;
        let linked = self.restore(u, v, 0)?;
        self.count(cut_from.is_some() || linked);
        Ok(())
    }

    fn update_parallel(&mut self, u: u32, v: u32, del: bool) -> Result<(), EngineError> {
        let cut_from = if del { self.detach_forest_edge(u, v)? } else { None };
        let obs = self.apply(vec![LevelOp { u, v, cut_from }], true, false)?;
        // Early return when no level reports a violation.
        let linked = match self.lowest_violation(&obs, 0) {
            None => false,
            Some(min) => self.restore(u, v, min)?,
        };
        self.count(cut_from.is_some() || linked);
        Ok(())
    }

    /// Processes every buffered update.
    pub fn flush(&mut self) -> Result<(), EngineError> {
        if self.buffer.is_empty() {
            return Ok(());
        }
        self.stats.buffer_flushes += 1;
        let batch = std::mem::take(&mut self.buffer);
        let mut ops = Vec::with_capacity(batch.len());
        let mut detached = Vec::new();
        for (j, &(u, v, del)) in batch.iter().enumerate() {
            let cut_from = if del { self.detach_forest_edge(u, v)? } else { None };
            if let Some(l) = cut_from {
                detached.push((j, u, v, l));
            }
            ops.push(LevelOp { u, v, cut_from });
        }
        let obs = self.apply(ops.clone(), true, true)?;
        let earliest = (0..batch.len()).find_map(|j| self.lowest_violation(&obs, j).map(|m| (j, m)));
        let Some((k, min)) = earliest else {
            for op in &ops {
                self.count(op.cut_from.is_some());
            }
            self.buffer = batch;
            self.buffer.clear();
            return Ok(());
        };
        if k + 1 < batch.len() {
            self.round(Cmd::Revert { from: k + 1 }, self.all())?;
            for &(_, u, v, l) in detached.iter().rev().filter(|d| d.0 > k) {
                self.attach_forest_edge(u, v, l)?;
            }
            self.stats.reverted_updates += (batch.len() - k - 1) as u64;
        }
        for op in &ops[..k] {
            self.count(op.cut_from.is_some());
        }
        let (u, v, _) = batch[k];
        self.restore(u, v, min)?;
        self.count(true);
        for &(u, v, del) in &batch[k + 1..] {
            self.update_parallel(u, v, del)?;
        }
        self.buffer = batch;
        self.buffer.clear();
        Ok(())
    }

    /// Canonical bytes of the whole engine, after flushing.
    pub fn serialize(&mut self) -> Result<Vec<u8>, EngineError> {
        self.flush()?;
        let mut out = Vec::new();
        out.extend_from_slice(b"DCE1");
        out.extend_from_slice(&self.cfg.vertices.to_le_bytes());
        out.extend_from_slice(&(self.cfg.num_levels as u32).to_le_bytes());
        for (_, r) in self.round(Cmd::Serialize, self.all())? {
            if let Resp::Bytes(b) = r {
                out.extend_from_slice(&(b.len() as u64).to_le_bytes());
                out.extend_from_slice(&b);
            }
        }
        let tree = self.tree.edges();
        out.extend_from_slice(&(tree.len() as u32).to_le_bytes());
        for (a, b, w) in tree {
            for x in [a, b, w] {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        self.query_forest.serialize(&mut out);
        let map = self.forest_edges();
        out.extend_from_slice(&(map.len() as u32).to_le_bytes());
        for (a, b, l) in map {
            for x in [a, b, l as u32] {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    /// High-water bytes of all engine structures.
    pub fn memory_bytes(&mut self) -> Result<usize, EngineError> {
        let mut total = 0;
        for (_, r) in self.round(Cmd::Memory, self.all())? {
            if let Resp::Memory(b) = r {
                total += b;
            }
        }
        let entry = std::mem::size_of::<((u32, u32), usize)>();
        Ok(total
            + self.tree.peak_bytes()
            + self.query_forest.peak_bytes()
            + self.peak_forest_edges * entry
            + self.cfg.buffer_capacity * std::mem::size_of::<(u32, u32, bool)>())
    }

    /// Exhaustive check of all invariants. Test instrumentation only: it
    /// queries every component at every level.
    pub fn check_invariants(&mut self) -> Result<InvariantReport, EngineError> {
        self.flush()?;
        let snaps: Vec<LevelSnapshot> = self
            .round(Cmd::Snapshot, self.all())?
            .into_iter()
            .filter_map(|(_, r)| match r {
                Resp::Snapshot(s) => Some(*s),
                _ => None,
            })
            .collect();
        let mut report = InvariantReport::default();
        let vs = &mut report.violations;
        for (i, s) in snaps.iter().enumerate() {
            if let Err(detail) = &s.audit {
                vs.push(Violation::Structure { level: Some(i), detail: detail.clone() });
            }
        }
        if let Err(detail) = self.query_forest.check() {
            vs.push(Violation::Structure { level: None, detail });
        }
        for &edge in &snaps[0].edges {
            vs.push(Violation::I1 { edge });
        }
        for i in 0..self.top() {
            let above: std::collections::HashSet<_> = snaps[i + 1].edges.iter().copied().collect();
            for &edge in &snaps[i].edges {
                if !above.contains(&edge) {
                    vs.push(Violation::I2 { level: i, edge });
                }
            }
        }
        for (i, s) in snaps.iter().enumerate().take(self.top()) {
            for v in 0..self.cfg.vertices as usize {
                if s.component[v] != v as u32 {
                    continue;
                }
                let Some((a, b)) = s.query[v] else { continue };
                let (ca, cb) = (s.component[a as usize], s.component[b as usize]);
                if (ca == s.component[v]) == (cb == s.component[v]) {
                    vs.push(Violation::UnsoundQuery { level: i, vertex: v as u32, edge: (a, b) });
                } else if s.size[v] == snaps[i + 1].size[v] {
                    vs.push(Violation::I3 { level: i, vertex: v as u32, edge: (a, b) });
                }
            }
        }
        let top_edges = &snaps[self.top()].edges;
        let tree: Vec<(u32, u32)> = self.tree.edges().into_iter().map(|(a, b, _)| (a, b)).collect();
        let map: Vec<(u32, u32)> = self.forest_edges().into_iter().map(|(a, b, _)| (a, b)).collect();
        if &tree != top_edges {
            vs.push(Violation::Mirror("weighted forest differs from the top level".into()));
        }
        if &self.query_forest.edges() != top_edges {
            vs.push(Violation::Mirror("query forest differs from the top level".into()));
        }
        if &map != top_edges {
            vs.push(Violation::Mirror("edge map differs from the top level".into()));
        }
        for (a, b, l) in self.forest_edges() {
            let lowest = snaps.iter().position(|s| s.edges.binary_search(&(a, b)).is_ok());
            if lowest != Some(l) {
                vs.push(Violation::Mirror(format!("edge ({a}, {b}) recorded at level {l}, lowest holder {lowest:?}")));
            }
            if self.tree.weight(a, b) != Some(l as u32) {
                vs.push(Violation::Mirror(format!("edge ({a}, {b}) has the wrong weight")));
            }
        }
        Ok(report)
    }

    /// Corrupts the structure for fault-injection tests; returns the edge hit.
    pub fn inject_fault(&mut self, fault: Fault) -> Result<Option<(u32, u32)>, EngineError> {
        self.flush()?;
        match fault {
            Fault::SeverEdge => {
                let Some((a, b, l)) = self.forest_edges().first().copied() else { return Ok(None) };
                self.detach_forest_edge(a, b)?;
                let helpers = self.cfg.helpers;
                self.round(Cmd::Structural { cut: Some((a, b, l)), link: None, helpers }, l..self.cfg.num_levels)?;
                Ok(Some((a, b)))
            }
            Fault::DropFromLevel { level } => {
                let Some((a, b, _)) = self.forest_edges().into_iter().find(|e| e.2 < level) else { return Ok(None) };
                if level >= self.cfg.num_levels {
                    return Ok(None);
                }
                self.round(Cmd::CutOnly { u: a, v: b }, level..level + 1)?;
                Ok(Some((a, b)))
            }
        }
    }
}
