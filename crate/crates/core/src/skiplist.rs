//! Augmented skip lists with parent pointers.
//!
//! A node is a tower of levels. Level `l` of node `n` aggregates the level-`l-1`
//! values from `n` up to (not including) the next level-`l` node.
//!
//! The first node of a list is kept strictly taller than every other node by
//! giving it extra levels above its sampled height. Its top level is then the
//! only node on that level and holds the aggregate of the whole list, and every
//! other node has a parent: the rightmost node one level above its top that is
//! at or left of it. Heights sampled at creation never change; only the extra
//! levels of the first node come and go.
//!
//! Sketch aggregates live in an optional [`SketchArena`]. Structural operations
//! never read sketch words; they append [`SketchTask`]s that the caller flushes,
//! either inline or across helpers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use smallvec::{smallvec, SmallVec};
use thiserror::Error;

use crate::arena::{SketchArena, SketchTask, NIL};
use crate::sketch::{BucketHit, Sketch, SketchConfig};

pub type NodeId = u32;

const MAX_HEIGHT: u8 = 60;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SkipError {
    #[error("node {0} does not belong to the given list")]
    WrongList(NodeId),
    #[error("lists are not disjoint roots")]
    Corruption,
    #[error("node {0} cannot take this update")]
    InvalidTarget(NodeId),
}

/// How tower heights are drawn.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeightDistribution {
    pub promotion_probability: f64,
    pub seed: u64,
}

impl HeightDistribution {
    /// Promotion probability `1 / log2(n)`, with `log2(n)` clamped to at least 2.
    pub fn reduced(n: u64, seed: u64) -> Self {
        let lg = (n.max(1) as f64).log2().max(2.0);
        HeightDistribution { promotion_probability: 1.0 / lg, seed }
    }

    pub fn classic(seed: u64) -> Self {
        HeightDistribution { promotion_probability: 0.5, seed }
    }
}

/// Element count plus an optional sketch. Merge is `+` and XOR.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Aggregate {
    pub count: u64,
    pub sketch: Option<Sketch>,
}

#[derive(Debug, Clone, Copy)]
struct Level {
    prev: u32,
    next: u32,
    count: u32,
    slot: u32,
}

impl Level {
    const EMPTY: Level = Level { prev: NIL, next: NIL, count: 0, slot: NIL };
}

#[derive(Debug, Clone)]
struct Node {
    real: u8,
    parent: u32,
    payload: u32,
    levels: SmallVec<[Level; 3]>,
}

#[derive(Debug, Clone)]
pub struct SkipForest {
    nodes: Vec<Node>,
    free: Vec<u32>,
    live: usize,
    peak_live: usize,
    rng: ChaCha8Rng,
    p: f64,
    arena: Option<SketchArena>,
    tasks: Vec<SketchTask>,
    tasks_logged: u64,
}

impl SkipForest {
    pub fn new(dist: HeightDistribution, sketch: Option<SketchConfig>) -> Self {
        assert!(dist.promotion_probability > 0.0 && dist.promotion_probability < 1.0);
        SkipForest {
            nodes: Vec::new(),
            free: Vec::new(),
            live: 0,
            peak_live: 0,
            rng: ChaCha8Rng::seed_from_u64(dist.seed),
            p: dist.promotion_probability,
            arena: sketch.map(SketchArena::new),
            tasks: Vec::new(),
            tasks_logged: 0,
        }
    }

    pub fn is_augmented(&self) -> bool {
        self.arena.is_some()
    }

    pub fn arena(&self) -> Option<&SketchArena> {
        self.arena.as_ref()
    }

    #[inline]
    fn eff(&self, n: u32) -> usize {
        self.nodes[n as usize].levels.len()
    }

    #[inline]
    fn lv(&self, n: u32, l: usize) -> &Level {
        &self.nodes[n as usize].levels[l]
    }

    #[inline]
    fn lv_mut(&mut self, n: u32, l: usize) -> &mut Level {
        &mut self.nodes[n as usize].levels[l]
    }

    #[inline]
    fn next(&self, n: u32, l: usize) -> u32 {
        self.lv(n, l).next
    }

    #[inline]
    fn prev(&self, n: u32, l: usize) -> u32 {
        self.lv(n, l).prev
    }

    #[inline]
    fn parent(&self, n: u32) -> u32 {
        self.nodes[n as usize].parent
    }

    /// Sampled height of a node.
    pub fn height(&self, n: NodeId) -> usize {
        self.nodes[n as usize].real as usize
    }

    /// Number of levels currently stored for a node, including the extra levels
    /// of a first node.
    pub fn levels(&self, n: NodeId) -> usize {
        self.eff(n)
    }

    pub fn payload(&self, n: NodeId) -> u32 {
        self.nodes[n as usize].payload
    }

    pub fn next_node(&self, n: NodeId) -> Option<NodeId> {
        Some(self.next(n, 0)).filter(|&x| x != NIL)
    }

    pub fn prev_node(&self, n: NodeId) -> Option<NodeId> {
        Some(self.prev(n, 0)).filter(|&x| x != NIL)
    }

    pub fn is_root(&self, n: NodeId) -> bool {
        self.prev(n, 0) == NIL
    }

    /// Bottom-level sketch slot of a node, if it carries one.
    pub fn bottom_slot(&self, n: NodeId) -> Option<u32> {
        Some(self.lv(n, 0).slot).filter(|&s| s != NIL)
    }

    pub fn bottom_count(&self, n: NodeId) -> u64 {
        self.lv(n, 0).count as u64
    }

    fn sample_height(&mut self) -> u8 {
        let mut h = 1;
        while h < MAX_HEIGHT && self.rng.gen::<f64>() < self.p {
            h += 1;
        }
        h
    }

    fn alloc_slot(&mut self) -> u32 {
        match self.arena.as_mut() {
            Some(a) => a.alloc(),
            None => NIL,
        }
    }

    fn release_slot(&mut self, s: u32) {
        if s != NIL {
            if let Some(a) = self.arena.as_mut() {
                a.release(s);
            }
        }
    }

    fn log(&mut self, dst: u32, a: u32, b: u32) {
        if dst != NIL {
            self.tasks.push(SketchTask { dst, a, b });
            self.tasks_logged += 1;
        }
    }

    /// `dst` becomes the XOR of `srcs`.
    fn log_set(&mut self, dst: u32, srcs: &[u32]) {
        match srcs {
            [] => self.log(dst, NIL, NIL),
            [a] => self.log(dst, *a, NIL),
            [a, b, rest @ ..] => {
                self.log(dst, *a, *b);
                for &s in rest {
                    self.log(dst, dst, s);
                }
            }
        }
    }

    /// Creates a singleton list. With `sketch`, the node gets a zero bottom sketch.
    pub fn create(&mut self, payload: u32, count: u32, sketch: bool) -> Result<NodeId, SkipError> {
        let real = self.sample_height();
        let augmented = self.arena.is_some();
        if sketch && !augmented {
            return Err(SkipError::InvalidTarget(NIL));
        }
        let mut levels: SmallVec<[Level; 3]> = smallvec![Level::EMPTY; real as usize];
        for l in 0..real as usize {
            levels[l].count = count;
            if l > 0 || sketch {
                levels[l].slot = self.alloc_slot();
            }
        }
        for l in 0..real as usize {
            let below = if l == 0 { NIL } else { levels[l - 1].slot };
            self.log(levels[l].slot, below, NIL);
        }
        let node = Node { real, parent: NIL, payload, levels };
        self.live += 1;
        self.peak_live = self.peak_live.max(self.live);
        let id = match self.free.pop() {
            Some(id) => {
                self.nodes[id as usize] = node;
                id
            }
            None => {
                self.nodes.push(node);
                (self.nodes.len() - 1) as u32
            }
        };
        Ok(id)
    }

    /// Frees a singleton node.
    pub fn destroy(&mut self, n: NodeId) -> Result<(), SkipError> {
        if self.prev(n, 0) != NIL || self.next(n, 0) != NIL {
            return Err(SkipError::InvalidTarget(n));
        }
        let slots: SmallVec<[u32; 8]> = self.nodes[n as usize].levels.iter().map(|l| l.slot).collect();
        for s in slots {
            self.release_slot(s);
        }
        self.nodes[n as usize].levels.clear();
        self.free.push(n);
        self.live -= 1;
        Ok(())
    }

    /// Builds a list from `(payload, count)` pairs; bottom sketches start at zero.
    pub fn make(&mut self, items: &[(u32, u32)], sketch: bool) -> Result<Option<NodeId>, SkipError> {
        let mut root = None;
        for &(payload, count) in items {
            let n = self.create(payload, count, sketch)?;
            root = Some(match root {
                None => n,
                Some(r) => self.join_roots(r, n),
            });
        }
        self.flush_tasks(1);
        Ok(root)
    }

    /// First node of `n`'s list, reached through parent pointers.
    pub fn find_root(&self, mut n: NodeId) -> NodeId {
        loop {
            let p = self.parent(n);
            if p == NIL {
                return n;
            }
            n = p;
        }
    }

    /// Parent hops taken by [`SkipForest::find_root`].
    pub fn root_hops(&self, mut n: NodeId) -> usize {
        let mut hops = 0;
        while self.parent(n) != NIL {
            n = self.parent(n);
            hops += 1;
        }
        hops
    }

    /// Nodes visited by a top-down search from the root to `n`.
    pub fn search_path_len(&self, n: NodeId) -> usize {
        let mut len = 1;
        let mut cur = n;
        loop {
            let p = self.parent(cur);
            if p == NIL {
                return len + self.eff(cur) - 1;
            }
            let l = self.eff(cur) - 1;
            let mut m = cur;
            while m != p {
                m = self.prev(m, l);
                len += 1;
            }
            cur = p;
        }
    }

    /// Count and sketch slot of the root tower's top level.
    pub fn root_summary(&self, n: NodeId) -> (u64, Option<u32>) {
        let r = self.find_root(n);
        let top = self.lv(r, self.eff(r) - 1);
        (top.count as u64, Some(top.slot).filter(|&s| s != NIL))
    }

    pub fn root_aggregate(&self, n: Option<NodeId>) -> Aggregate {
        let Some(n) = n else { return Aggregate::default() };
        let (count, slot) = self.root_summary(n);
        let sketch = match (&self.arena, slot) {
            (Some(a), Some(s)) => Some(a.to_sketch(s)),
            _ => None,
        };
        Aggregate { count, sketch }
    }

    /// Sketch query on the whole list containing `n`.
    pub fn query_root(&self, n: NodeId) -> Option<u64> {
        let (_, slot) = self.root_summary(n);
        self.arena.as_ref().and_then(|a| a.query(slot?))
    }

    /// `(node, level)` pairs whose aggregate covers `n`, from level 0 up.
    fn upward_path(&self, n: u32) -> SmallVec<[(u32, usize); 16]> {
        let mut path = smallvec![(n, 0)];
        let mut r = n;
        let mut l = 1;
        loop {
            while l >= self.eff(r) {
                let p = self.parent(r);
                if p == NIL {
                    return path;
                }
                r = p;
            }
            path.push((r, l));
            l += 1;
        }
    }

    /// Toggles `index` in the bottom sketch of `n` and every aggregate above it.
    pub fn point_toggle(&mut self, n: NodeId, index: u64) -> Result<(), SkipError> {
        let hits = match &self.arena {
            Some(a) => {
                a.hasher().check_index(index).map_err(|_| SkipError::InvalidTarget(n))?;
                a.hits(index)
            }
            None => return Err(SkipError::InvalidTarget(n)),
        };
        self.point_toggle_hits(n, index, &hits)
    }

    /// As [`SkipForest::point_toggle`] with precomputed bucket hits.
    pub fn point_toggle_hits(&mut self, n: NodeId, index: u64, hits: &[BucketHit]) -> Result<(), SkipError> {
        if self.bottom_slot(n).is_none() {
            return Err(SkipError::InvalidTarget(n));
        }
        debug_assert!(self.tasks.is_empty(), "point update with pending structural tasks");
        let slots: SmallVec<[u32; 16]> = self.upward_path(n).iter().map(|&(r, l)| self.lv(r, l).slot).collect();
        self.arena.as_mut().unwrap().toggle_slots(&slots, index, hits);
        Ok(())
    }

    /// Adds `delta` to the count of `n` and every aggregate above it.
    pub fn point_count(&mut self, n: NodeId, delta: i64) {
        for (r, l) in self.upward_path(n) {
            let c = &mut self.lv_mut(r, l).count;
            *c = (*c as i64 + delta) as u32;
        }
    }

    /// Moves the bottom value of the detached singleton `from` onto `to`, which
    /// must have an empty bottom value.
    pub fn transfer_bottom(&mut self, from: NodeId, to: NodeId) -> Result<(), SkipError> {
        if self.prev(from, 0) != NIL || self.next(from, 0) != NIL {
            return Err(SkipError::InvalidTarget(from));
        }
        let to_bottom = *self.lv(to, 0);
        if to_bottom.count != 0 || to_bottom.slot != NIL {
            return Err(SkipError::InvalidTarget(to));
        }
        let moved = *self.lv(from, 0);
        {
            let f = self.lv_mut(from, 0);
            f.count = 0;
            f.slot = NIL;
        }
        {
            let t = self.lv_mut(to, 0);
            t.count = moved.count;
            t.slot = moved.slot;
        }
        for (r, l) in self.upward_path(to).into_iter().skip(1) {
            let lvl = self.lv_mut(r, l);
            lvl.count += moved.count;
            let dst = lvl.slot;
            if moved.slot != NIL {
                self.log(dst, dst, moved.slot);
            }
        }
        Ok(())
    }

    /// Recomputes level `l` of `n` from the level below.
    fn recompute(&mut self, n: u32, l: usize) {
        let mut count = self.lv(n, l - 1).count;
        let mut srcs: SmallVec<[u32; 16]> = SmallVec::new();
        let s = self.lv(n, l - 1).slot;
        if s != NIL {
            srcs.push(s);
        }
        let mut m = self.next(n, l - 1);
        while m != NIL && self.eff(m) <= l {
            let lv = self.lv(m, l - 1);
            count += lv.count;
            if lv.slot != NIL {
                srcs.push(lv.slot);
            }
            m = lv.next;
        }
        self.lv_mut(n, l).count = count;
        let dst = self.lv(n, l).slot;
        self.log_set(dst, &srcs);
    }

    fn push_level(&mut self, n: u32) {
        let slot = self.alloc_slot();
        self.nodes[n as usize].levels.push(Level { slot, ..Level::EMPTY });
    }

    /// Concatenates two lists given their roots. Returns the new root.
    pub fn join(&mut self, a: Option<NodeId>, b: Option<NodeId>) -> Result<Option<NodeId>, SkipError> {
        match (a, b) {
            (None, x) | (x, None) => Ok(x),
            (Some(a), Some(b)) => {
                if a == b || !self.is_root(a) || !self.is_root(b) {
                    return Err(SkipError::Corruption);
                }
                Ok(Some(self.join_roots(a, b)))
            }
        }
    }

    pub(crate) fn join_roots(&mut self, a: u32, b: u32) -> u32 {
        let ea = self.eff(a);
        let rb = self.nodes[b as usize].real as usize;
        let eb = self.eff(b);
        let hb = if eb > rb { eb - 1 } else { rb };

        let mut last: SmallVec<[u32; 16]> = smallvec![NIL; ea];
        let mut cur = a;
        for l in (0..ea).rev() {
            loop {
                let nx = self.next(cur, l);
                if nx == NIL {
                    break;
                }
                cur = nx;
            }
            last[l] = cur;
        }

        let mut first_b: SmallVec<[u32; 16]> = smallvec![NIL; eb];
        for f in first_b.iter_mut().take(rb) {
            *f = b;
        }
        for l in rb..eb {
            let f = self.next(b, l);
            first_b[l] = f;
            if f != NIL {
                self.lv_mut(f, l).prev = NIL;
            }
            let s = self.lv(b, l).slot;
            self.release_slot(s);
        }
        self.nodes[b as usize].levels.truncate(rb);

        let new_ea = ea.max(hb + 1);
        for _ in ea..new_ea {
            self.push_level(a);
            last.push(a);
        }

        for l in 0..eb {
            let f = first_b[l];
            if f != NIL {
                self.lv_mut(last[l], l).next = f;
                self.lv_mut(f, l).prev = last[l];
            }
        }

        for l in 1..=hb {
            let mut m = first_b[l - 1];
            while m != NIL && self.eff(m) <= l {
                if self.eff(m) == l {
                    self.nodes[m as usize].parent = last[l];
                }
                m = self.next(m, l - 1);
            }
        }

        for l in 1..new_ea {
            self.recompute(last[l], l);
        }
        a
    }

    /// Splits `list` just before `at`. Returns the roots of both parts.
    pub fn split(&mut self, list: NodeId, at: NodeId) -> Result<(Option<NodeId>, NodeId), SkipError> {
        if !self.is_root(list) || self.find_root(at) != list {
            return Err(SkipError::WrongList(at));
        }
        Ok(self.split_at(at))
    }

    pub(crate) fn split_at(&mut self, x: u32) -> (Option<u32>, u32) {
        if self.prev(x, 0) == NIL {
            return (None, x);
        }
        let rx = self.eff(x);
        let mut pred: SmallVec<[u32; 16]> = (0..rx).map(|l| self.prev(x, l)).collect();
        let mut p = self.parent(x);
        let mut l = rx;
        while p != NIL {
            while l < self.eff(p) {
                pred.push(p);
                l += 1;
            }
            p = self.parent(p);
        }
        let e = pred.len();
        let f = pred[e - 1];

        let first_r: SmallVec<[u32; 16]> =
            (0..e).map(|l| if l < rx { x } else { self.next(pred[l], l) }).collect();
        for l in 0..e {
            self.lv_mut(pred[l], l).next = NIL;
            if first_r[l] != NIL {
                self.lv_mut(first_r[l], l).prev = NIL;
            }
        }

        let others_left = (0..e).rev().find(|&l| pred[l] != f).map_or(0, |l| l + 1);
        let new_ef = (self.nodes[f as usize].real as usize).max(others_left + 1);
        for l in new_ef..e {
            let s = self.lv(f, l).slot;
            self.release_slot(s);
        }
        self.nodes[f as usize].levels.truncate(new_ef);

        let others_right = (0..e)
            .rev()
            .find(|&l| (if l < rx { self.next(x, l) } else { first_r[l] }) != NIL)
            .map_or(0, |l| l + 1);
        let new_ex = rx.max(others_right + 1);
        for l in rx..new_ex {
            self.push_level(x);
            let fr = first_r[l];
            self.lv_mut(x, l).next = fr;
            if fr != NIL {
                self.lv_mut(fr, l).prev = x;
            }
        }
        self.nodes[x as usize].parent = NIL;

        for l in rx..new_ex {
            let mut m = self.next(x, l - 1);
            while m != NIL && self.eff(m) <= l {
                if self.eff(m) == l {
                    self.nodes[m as usize].parent = x;
                }
                m = self.next(m, l - 1);
            }
        }

        for l in rx..new_ef {
            self.recompute(pred[l], l);
        }
        for l in rx..new_ex {
            self.recompute(x, l);
        }
        (Some(f), x)
    }

    /// Last node of the list rooted at `root`.
    pub fn last_node(&self, root: NodeId) -> NodeId {
        let mut cur = root;
        for l in (0..self.eff(root)).rev() {
            while self.next(cur, l) != NIL {
                cur = self.next(cur, l);
            }
        }
        cur
    }

    /// Bottom-level nodes of the list in order.
    pub fn elements(&self, root: NodeId) -> Vec<NodeId> {
        let mut out = Vec::new();
        let mut cur = root;
        while cur != NIL {
            out.push(cur);
            cur = self.next(cur, 0);
        }
        out
    }

    /// Sketch additions logged so far, over the forest's lifetime.
    pub fn tasks_logged(&self) -> u64 {
        self.tasks_logged
    }

    pub fn pending_tasks(&self) -> &[SketchTask] {
        &self.tasks
    }

    /// Executes all pending sketch tasks with `helpers` workers.
    pub fn flush_tasks(&mut self, helpers: usize) {
        if let Some(a) = self.arena.as_mut() {
            a.execute(&self.tasks, helpers);
        }
        self.tasks.clear();
    }

    pub fn slot_words(&self, slot: u32) -> Vec<u64> {
        self.arena.as_ref().expect("augmented forest").words(slot)
    }

    /// High-water memory of nodes and sketches, in bytes.
    pub fn peak_bytes(&self) -> usize {
        let node = std::mem::size_of::<Node>();
        self.peak_live * node + self.arena.as_ref().map_or(0, |a| a.peak_bytes())
    }

    /// One line per level, top first, listing payloads in order.
    pub fn dump(&self, root: NodeId) -> String {
        let mut out = String::new();
        for l in (0..self.eff(root)).rev() {
            out.push_str(&format!("L{l}:"));
            let mut cur = root;
            while cur != NIL {
                out.push_str(&format!(" {}", self.payload(cur)));
                cur = self.next(cur, l);
            }
            out.push('\n');
        }
        out
    }

    /// Full structural and aggregate check of one list.
    pub fn check_list(&self, root: NodeId) -> Result<(), String> {
        if !self.is_root(root) || self.parent(root) != NIL {
            return Err(format!("{root} is not a root"));
        }
        let elems = self.elements(root);
        for w in elems.windows(2) {
            if self.prev(w[1], 0) != w[0] {
                return Err(format!("bottom prev link broken at {}", w[1]));
            }
        }
        let max_other = elems.iter().skip(1).map(|&n| self.height(n)).max().unwrap_or(0);
        if self.eff(root) != self.height(root).max(max_other + 1) {
            return Err(format!("root has {} levels, expected {}", self.eff(root), self.height(root).max(max_other + 1)));
        }
        for &n in &elems[1..] {
            if self.eff(n) != self.height(n) {
                return Err(format!("node {n} carries extra levels"));
            }
        }
        for l in 0..self.eff(root) {
            let want: Vec<u32> = elems.iter().copied().filter(|&n| self.eff(n) > l).collect();
            let mut got = Vec::new();
            let mut cur = root;
            let mut prev = NIL;
            while cur != NIL {
                if self.prev(cur, l) != prev {
                    return Err(format!("prev link broken at node {cur} level {l}"));
                }
                got.push(cur);
                prev = cur;
                cur = self.next(cur, l);
            }
            if got != want {
                return Err(format!("level {l} is not the filtered bottom sequence"));
            }
        }
        let mut taller: Vec<u32> = Vec::new();
        for &n in &elems {
            if n != root {
                let h = self.eff(n);
                let want = taller.iter().rev().copied().find(|&t| self.eff(t) > h).unwrap_or(NIL);
                if self.parent(n) != want {
                    return Err(format!("node {n} has parent {} but expected {want}", self.parent(n)));
                }
            }
            taller.push(n);
        }
        for (i, &n) in elems.iter().enumerate() {
            for l in 1..self.eff(n) {
                let span: Vec<u32> = elems[i..]
                    .iter()
                    .copied()
                    .take_while(|&m| m == n || self.eff(m) <= l)
                    .filter(|&m| self.eff(m) > l - 1)
                    .collect();
                let count: u32 = span.iter().map(|&m| self.lv(m, l - 1).count).sum();
                if count != self.lv(n, l).count {
                    return Err(format!("count mismatch at node {n} level {l}"));
                }
                if let Some(a) = &self.arena {
                    let dst = self.lv(n, l).slot;
                    if dst == NIL {
                        return Err(format!("missing sketch at node {n} level {l}"));
                    }
                    let mut want = vec![0u64; a.config().total_words()];
                    for &m in &span {
                        let s = self.lv(m, l - 1).slot;
                        if s != NIL {
                            for (w, x) in want.iter_mut().zip(a.words(s)) {
                                *w ^= x;
                            }
                        }
                    }
                    if a.words(dst) != want {
                        return Err(format!("sketch mismatch at node {n} level {l}"));
                    }
                }
            }
        }
        Ok(())
    }
}
