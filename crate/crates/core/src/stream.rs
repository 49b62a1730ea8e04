//! Binary update streams, legality checking and workload generators.
//!
//! Layout: a 22-byte header (`"CPKS"`, version `u16`, vertex count `u64`, op
//! count `u64`) followed by 9-byte records (kind `u8`, `u` and `v` as `u32`).
//! All integers are little-endian.

use std::collections::{HashSet, VecDeque};
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"CPKS";
pub const VERSION: u16 = 1;
pub const HEADER_BYTES: usize = 22;
pub const RECORD_BYTES: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Insert,
    Delete,
    Query,
}

impl OpKind {
    pub fn code(self) -> u8 {
        match self {
            OpKind::Insert => 0,
            OpKind::Delete => 1,
            OpKind::Query => 2,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(OpKind::Insert),
            1 => Some(OpKind::Delete),
            2 => Some(OpKind::Query),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamOp {
    pub kind: OpKind,
    pub u: u32,
    pub v: u32,
}

impl StreamOp {
    pub fn insert(u: u32, v: u32) -> Self {
        StreamOp { kind: OpKind::Insert, u, v }
    }
    pub fn delete(u: u32, v: u32) -> Self {
        StreamOp { kind: OpKind::Delete, u, v }
    }
    pub fn query(u: u32, v: u32) -> Self {
        StreamOp { kind: OpKind::Query, u, v }
    }
    pub fn is_update(&self) -> bool {
        self.kind != OpKind::Query
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamHeader {
    pub version: u16,
    pub vertex_count: u64,
    pub op_count: u64,
}

impl StreamHeader {
    pub fn new(vertex_count: u64, op_count: u64) -> Self {
        StreamHeader { version: VERSION, vertex_count, op_count }
    }
}

#[derive(Debug, Error)]
pub enum StreamError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic bytes")]
    BadMagic,
    #[error("unsupported stream version {0}")]
    BadVersion(u16),
    #[error("stream truncated after {0} records")]
    Truncated(u64),
    #[error("record {index}: unknown op kind {kind}")]
    BadKind { index: u64, kind: u8 },
    #[error("record {index}: u and v are both {u}")]
    SelfLoop { index: u64, u: u32 },
    #[error("header announces {announced} ops but {written} were given")]
    CountMismatch { announced: u64, written: u64 },
    #[error("edge list line {line}: {reason}")]
    EdgeList { line: usize, reason: String },
}

pub fn write_stream<W: Write>(mut w: W, header: &StreamHeader, ops: &[StreamOp]) -> Result<(), StreamError> {
    if header.op_count != ops.len() as u64 {
        return Err(StreamError::CountMismatch { announced: header.op_count, written: ops.len() as u64 });
    }
    w.write_all(&MAGIC)?;
    w.write_all(&header.version.to_le_bytes())?;
    w.write_all(&header.vertex_count.to_le_bytes())?;
    w.write_all(&header.op_count.to_le_bytes())?;
    for op in ops {
        let mut rec = [0u8; RECORD_BYTES];
        rec[0] = op.kind.code();
        rec[1..5].copy_from_slice(&op.u.to_le_bytes());
        rec[5..9].copy_from_slice(&op.v.to_le_bytes());
        w.write_all(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_file(path: &Path, vertex_count: u64, ops: &[StreamOp]) -> Result<(), StreamError> {
    let w = BufWriter::new(File::create(path)?);
    write_stream(w, &StreamHeader::new(vertex_count, ops.len() as u64), ops)
}

/// Sequential reader over the records following a header.
pub struct StreamReader<R> {
    inner: R,
    remaining: u64,
    index: u64,
}

impl<R: Read> Iterator for StreamReader<R> {
    type Item = Result<StreamOp, StreamError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.remaining == 0 {
            return None;
        }
        let mut rec = [0u8; RECORD_BYTES];
        if let Err(e) = self.inner.read_exact(&mut rec) {
            self.remaining = 0;
            return Some(Err(match e.kind() {
                io::ErrorKind::UnexpectedEof => StreamError::Truncated(self.index),
                _ => StreamError::Io(e),
            }));
        }
        let index = self.index;
        self.index += 1;
        self.remaining -= 1;
        let Some(kind) = OpKind::from_code(rec[0]) else {
            return Some(Err(StreamError::BadKind { index, kind: rec[0] }));
        };
        let u = u32::from_le_bytes(rec[1..5].try_into().unwrap());
        let v = u32::from_le_bytes(rec[5..9].try_into().unwrap());
        if u == v {
            return Some(Err(StreamError::SelfLoop { index, u }));
        }
        Some(Ok(StreamOp { kind, u, v }))
    }
}

pub fn read_stream<R: Read>(mut r: R) -> Result<(StreamHeader, StreamReader<R>), StreamError> {
    let mut head = [0u8; HEADER_BYTES];
    r.read_exact(&mut head).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => StreamError::Truncated(0),
        _ => StreamError::Io(e),
    })?;
    if head[0..4] != MAGIC {
        return Err(StreamError::BadMagic);
    }
    let version = u16::from_le_bytes([head[4], head[5]]);
    if version != VERSION {
        return Err(StreamError::BadVersion(version));
    }
    let vertex_count = u64::from_le_bytes(head[6..14].try_into().unwrap());
    let op_count = u64::from_le_bytes(head[14..22].try_into().unwrap());
    let header = StreamHeader { version, vertex_count, op_count };
    Ok((header, StreamReader { inner: r, remaining: op_count, index: 0 }))
}

pub fn read_file(path: &Path) -> Result<(StreamHeader, Vec<StreamOp>), StreamError> {
    let (header, reader) = read_stream(BufReader::new(File::open(path)?))?;
    let ops = reader.collect::<Result<Vec<_>, _>>()?;
    Ok((header, ops))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    AlreadyPresent,
    Absent,
    SelfLoop,
    OutOfRange,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("op {index} ({op:?}) is illegal: {kind:?}")]
pub struct Violation {
    pub index: usize,
    pub op: StreamOp,
    pub kind: ViolationKind,
}

/// Incremental legality tracker holding the current edge set.
#[derive(Debug, Clone)]
pub struct LegalityChecker {
    n: u64,
    edges: HashSet<(u32, u32)>,
}

impl LegalityChecker {
    pub fn new(vertex_count: u64) -> Self {
        LegalityChecker { n: vertex_count, edges: HashSet::new() }
    }

    pub fn check(&mut self, op: &StreamOp) -> Result<(), ViolationKind> {
        if op.u == op.v {
            return Err(ViolationKind::SelfLoop);
        }
        if op.u as u64 >= self.n || op.v as u64 >= self.n {
            return Err(ViolationKind::OutOfRange);
        }
        let e = (op.u.min(op.v), op.u.max(op.v));
        match op.kind {
            OpKind::Insert if !self.edges.insert(e) => Err(ViolationKind::AlreadyPresent),
            OpKind::Delete if !self.edges.remove(&e) => Err(ViolationKind::Absent),
            _ => Ok(()),
        }
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }
}

pub fn check_legal(ops: &[StreamOp], vertex_count: u64) -> Result<(), Violation> {
    let mut c = LegalityChecker::new(vertex_count);
    for (index, op) in ops.iter().enumerate() {
        c.check(op).map_err(|kind| Violation { index, op: *op, kind })?;
    }
    Ok(())
}

/// Reads `u v` pairs, one per line; blank lines and `#` comments are skipped.
/// Returns the vertex count (largest id plus one) and the edges.
pub fn read_edge_list<R: BufRead>(r: R) -> Result<(u32, Vec<(u32, u32)>), StreamError> {
    let mut edges = Vec::new();
    let mut seen = HashSet::new();
    let mut n = 0u32;
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let bad = |reason: &str| StreamError::EdgeList { line: i + 1, reason: reason.to_string() };
        let mut it = body.split_whitespace();
        let (Some(a), Some(b), None) = (it.next(), it.next(), it.next()) else {
            return Err(bad("expected two vertex ids"));
        };
        let u: u32 = a.parse().map_err(|_| bad("vertex id is not an integer"))?;
        let v: u32 = b.parse().map_err(|_| bad("vertex id is not an integer"))?;
        if u == v {
            return Err(bad("self-loop"));
        }
        if !seen.insert((u.min(v), u.max(v))) {
            return Err(bad("duplicate edge"));
        }
        n = n.max(u.max(v) + 1);
        edges.push((u, v));
    }
    Ok((n, edges))
}

/// All inserts, then all deletes, each in a seeded random order.
pub fn gen_standard_stream(edges: &[(u32, u32)], seed: u64) -> Vec<StreamOp> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order = edges.to_vec();
    order.shuffle(&mut rng);
    let mut ops: Vec<StreamOp> = order.iter().map(|&(u, v)| StreamOp::insert(u, v)).collect();
    order.shuffle(&mut rng);
    ops.extend(order.iter().map(|&(u, v)| StreamOp::delete(u, v)));
    ops
}

/// Splits `edges` into a BFS spanning forest, rooted at the lowest id of each
/// component, and the remaining edges.
pub fn spanning_forest(n: u32, edges: &[(u32, u32)]) -> (Vec<(u32, u32)>, Vec<(u32, u32)>) {
    let mut adj: Vec<Vec<(u32, usize)>> = vec![Vec::new(); n as usize];
    for (i, &(u, v)) in edges.iter().enumerate() {
        adj[u as usize].push((v, i));
        adj[v as usize].push((u, i));
    }
    let mut seen = vec![false; n as usize];
    let mut in_forest = vec![false; edges.len()];
    for s in 0..n as usize {
        if seen[s] {
            continue;
        }
        seen[s] = true;
        let mut queue = VecDeque::from([s]);
        while let Some(x) = queue.pop_front() {
            for &(y, i) in &adj[x] {
                if !seen[y as usize] {
                    seen[y as usize] = true;
                    in_forest[i] = true;
                    queue.push_back(y as usize);
                }
            }
        }
    }
    let (mut forest, mut rest) = (Vec::new(), Vec::new());
    for (i, &e) in edges.iter().enumerate() {
        if in_forest[i] { forest.push(e) } else { rest.push(e) }
    }
    (forest, rest)
}

/// Forest edges inserted once and kept; every other edge is inserted and then
/// deleted `repeats` times, each round in fresh random orders.
pub fn gen_fixed_forest_stream(n: u32, edges: &[(u32, u32)], repeats: usize, seed: u64) -> Vec<StreamOp> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut forest, mut rest) = spanning_forest(n, edges);
    forest.shuffle(&mut rng);
    let mut ops: Vec<StreamOp> = forest.iter().map(|&(u, v)| StreamOp::insert(u, v)).collect();
    for _ in 0..repeats {
        rest.shuffle(&mut rng);
        ops.extend(rest.iter().map(|&(u, v)| StreamOp::insert(u, v)));
        rest.shuffle(&mut rng);
        ops.extend(rest.iter().map(|&(u, v)| StreamOp::delete(u, v)));
    }
    ops
}

/// Queries in a burst following an update run of length `rho`.
pub fn query_burst_len(rho: usize) -> usize {
    rho / 9
}

fn random_query(rng: &mut ChaCha8Rng, n: u32) -> StreamOp {
    let u = rng.gen_range(0..n);
    loop {
        let v = rng.gen_range(0..n);
        if v != u {
            return StreamOp::query(u, v);
        }
    }
}

/// Inserts a burst of uniform queries after every run of 1000 to 2000 updates.
/// A final short run gets a burst sized from its actual length.
pub fn interleave_queries(ops: &[StreamOp], n: u32, seed: u64) -> Vec<StreamOp> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(ops.len() + ops.len() / 9 + 1);
    let mut pos = 0;
    while pos < ops.len() {
        let rho: usize = rng.gen_range(1000..=2000);
        let take = rho.min(ops.len() - pos);
        out.extend_from_slice(&ops[pos..pos + take]);
        pos += take;
        if n >= 2 {
            for _ in 0..query_burst_len(take) {
                out.push(random_query(&mut rng, n));
            }
        }
    }
    out
}

/// `m` distinct random edges over `n` vertices.
pub fn gnm_graph(n: u32, m: usize, seed: u64) -> Vec<(u32, u32)> {
    let max = n as u64 * (n as u64).saturating_sub(1) / 2;
    assert!(m as u64 <= max, "G({n}, {m}) has too many edges");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::with_capacity(m);
    let mut out = Vec::with_capacity(m);
    while out.len() < m {
        let (u, v) = (rng.gen_range(0..n), rng.gen_range(0..n));
        if u != v && seen.insert((u.min(v), u.max(v))) {
            out.push((u.min(v), u.max(v)));
        }
    }
    out
}

/// A legal stream of random inserts, deletes and queries whose edge count
/// hovers around `target_edges`.
pub fn random_update_stream(n: u32, len: usize, target_edges: usize, query_fraction: f64, seed: u64) -> Vec<StreamOp> {
    assert!(n >= 2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max = (n as usize) * (n as usize - 1) / 2;
    let target = target_edges.clamp(1, max);
    let mut present: Vec<(u32, u32)> = Vec::new();
    let mut slot: std::collections::HashMap<(u32, u32), usize> = std::collections::HashMap::new();
    let mut out = Vec::with_capacity(len);
    while out.len() < len {
        if rng.gen_bool(query_fraction) {
            out.push(random_query(&mut rng, n));
            continue;
        }
        let insert_p = target as f64 / (target + present.len()) as f64;
        if present.is_empty() || (present.len() < max && rng.gen_bool(insert_p)) {
            let (u, v) = loop {
                let (u, v) = (rng.gen_range(0..n), rng.gen_range(0..n));
                if u != v && !slot.contains_key(&(u.min(v), u.max(v))) {
                    break (u, v);
                }
            };
            slot.insert((u.min(v), u.max(v)), present.len());
            present.push((u.min(v), u.max(v)));
            out.push(StreamOp::insert(u, v));
        } else {
            let i = rng.gen_range(0..present.len());
            let e = present.swap_remove(i);
            slot.remove(&e);
            if i < present.len() {
                slot.insert(present[i], i);
            }
            let (u, v) = if rng.gen_bool(0.5) { e } else { (e.1, e.0) };
            out.push(StreamOp::delete(u, v));
        }
    }
    out
}
