//! Euler tour forests over [`SkipForest`] lists.
//!
//! A tree with `k` vertices is stored as a tour of `2k - 1` vertex occurrences
//! in which consecutive occurrences are tree neighbours. Exactly one occurrence
//! per vertex is designated: it has count 1 and, in an augmented forest, carries
//! the vertex sketch. Every other occurrence is empty, so the root aggregate of a
//! tour is the component's vertex count and sketch sum.
//!
//! For each directed arc `x -> y` the forest remembers the `y` occurrence that
//! the tour enters through that arc.

use std::collections::HashMap;

use thiserror::Error;

use crate::sketch::{encode_edge, BucketHit, EdgeIndex, Sketch, SketchConfig};
use crate::skiplist::{Aggregate, HeightDistribution, NodeId, SkipForest};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EttError {
    #[error("cannot link {0} and {1}: already connected")]
    IllegalLink(u32, u32),
    #[error("cannot cut {0}-{1}: not a forest edge")]
    IllegalCut(u32, u32),
    #[error("vertex {0} out of range")]
    InvalidVertex(u32),
    #[error("operation needs a sketch-augmented forest")]
    Unsupported,
}

#[inline]
fn arc(x: u32, y: u32) -> u64 {
    ((x as u64) << 32) | y as u64
}

#[derive(Debug, Clone)]
pub struct EulerTourForest {
    n: u32,
    sl: SkipForest,
    designated: Vec<NodeId>,
    arcs: HashMap<u64, NodeId>,
    peak_arcs: usize,
}

impl EulerTourForest {
    /// `n` singleton trees. With a sketch config every vertex starts with a zero sketch.
    pub fn new(n: u32, dist: HeightDistribution, sketch: Option<SketchConfig>) -> Self {
        let augmented = sketch.is_some();
        let mut sl = SkipForest::new(dist, sketch);
        let designated = (0..n).map(|v| sl.create(v, 1, augmented).expect("fresh node")).collect();
        sl.flush_tasks(1);
        EulerTourForest { n, sl, designated, arcs: HashMap::new(), peak_arcs: 0 }
    }

    pub fn vertex_count(&self) -> u32 {
        self.n
    }

    pub fn is_augmented(&self) -> bool {
        self.sl.is_augmented()
    }

    pub fn lists(&self) -> &SkipForest {
        &self.sl
    }

    fn check_vertex(&self, v: u32) -> Result<(), EttError> {
        if v >= self.n {
            return Err(EttError::InvalidVertex(v));
        }
        Ok(())
    }

    /// Identifier of `v`'s component, valid until the next structural change.
    pub fn component_id(&self, v: u32) -> NodeId {
        self.sl.find_root(self.designated[v as usize])
    }

    pub fn connected(&self, u: u32, v: u32) -> bool {
        u == v || self.component_id(u) == self.component_id(v)
    }

    pub fn component_size(&self, v: u32) -> u64 {
        self.sl.root_summary(self.designated[v as usize]).0
    }

    pub fn component_aggregate(&self, v: u32) -> Aggregate {
        self.sl.root_aggregate(Some(self.designated[v as usize]))
    }

    /// Samples an index from the sketch sum of `v`'s component.
    pub fn query(&self, v: u32) -> Option<EdgeIndex> {
        self.sl.query_root(self.designated[v as usize]).map(EdgeIndex)
    }

    pub fn has_edge(&self, u: u32, v: u32) -> bool {
        self.arcs.contains_key(&arc(u, v))
    }

    pub fn edge_count(&self) -> usize {
        self.arcs.len() / 2
    }

    /// Forest edges as `(min, max)` pairs, sorted.
    pub fn edges(&self) -> Vec<(u32, u32)> {
        let mut out: Vec<(u32, u32)> = self
            .arcs
            .keys()
            .map(|&k| ((k >> 32) as u32, k as u32))
            .filter(|&(x, y)| x < y)
            .collect();
        out.sort_unstable();
        out
    }

    pub fn vertex_sketch(&self, v: u32) -> Option<Sketch> {
        let slot = self.sl.bottom_slot(self.designated[v as usize])?;
        self.sl.arena().map(|a| a.to_sketch(slot))
    }

    pub fn vertex_update(&mut self, v: u32, i: EdgeIndex) -> Result<(), EttError> {
        self.check_vertex(v)?;
        if !self.is_augmented() {
            return Err(EttError::Unsupported);
        }
        self.sl.point_toggle(self.designated[v as usize], i.0).map_err(|_| EttError::Unsupported)
    }

    pub fn vertex_update_hits(&mut self, v: u32, i: EdgeIndex, hits: &[BucketHit]) -> Result<(), EttError> {
        self.check_vertex(v)?;
        self.sl.point_toggle_hits(self.designated[v as usize], i.0, hits).map_err(|_| EttError::Unsupported)
    }

    /// Toggles edge `(u, v)` in both endpoint sketches.
    pub fn edge_update(&mut self, u: u32, v: u32) -> Result<EdgeIndex, EttError> {
        let idx = encode_edge(u as u64, v as u64, self.n as u64).map_err(|_| EttError::InvalidVertex(u.max(v)))?;
        let arena = self.sl.arena().ok_or(EttError::Unsupported)?;
        let hits = arena.hits(idx.0);
        self.vertex_update_hits(u, idx, &hits)?;
        self.vertex_update_hits(v, idx, &hits)?;
        Ok(idx)
    }

    /// Moves the designated value of the detached occurrence `from` of `x` onto `to`.
    fn migrate_if_designated(&mut self, x: u32, from: NodeId, to: NodeId) {
        if self.designated[x as usize] == from {
            self.sl.transfer_bottom(from, to).expect("target occurrence is empty");
            self.designated[x as usize] = to;
        }
    }

    /// Rotates `w`'s tour so that it starts at `w`'s designated occurrence.
    fn reroot(&mut self, w: u32) {
        let o = self.designated[w as usize];
        let f = self.sl.find_root(o);
        if self.sl.payload(f) == w {
            return;
        }
        let pv = self.sl.payload(self.sl.prev_node(o).expect("o is not first"));
        let (_, ob) = self.sl.split_at(o);
        let rest = self.sl.next_node(f).map(|a1| self.sl.split_at(a1).1);
        let r = self.sl.payload(f);
        let tail = self.sl.last_node(ob);
        self.migrate_if_designated(r, f, tail);
        self.sl.destroy(f).expect("detached");
        let t = match rest {
            Some(rest) => self.sl.join_roots(ob, rest),
            None => ob,
        };
        let wnew = self.sl.create(w, 0, false).expect("plain node");
        self.sl.join_roots(t, wnew);
        self.arcs.insert(arc(pv, w), wnew);
    }

    /// Links without executing sketch additions; see [`EulerTourForest::flush`].
    pub fn link_deferred(&mut self, u: u32, v: u32) -> Result<(), EttError> {
        self.check_vertex(u)?;
        self.check_vertex(v)?;
        if self.connected(u, v) {
            return Err(EttError::IllegalLink(u, v));
        }
        self.reroot(v);
        let tv = self.component_id(v);
        let ou = self.designated[u as usize];
        let ru = self.sl.find_root(ou);
        let right = self.sl.next_node(ou).map(|nx| self.sl.split_at(nx).1);
        let j = self.sl.join_roots(ru, tv);
        let unew = self.sl.create(u, 0, false).expect("plain node");
        let j = self.sl.join_roots(j, unew);
        if let Some(r) = right {
            self.sl.join_roots(j, r);
        }
        self.arcs.insert(arc(u, v), tv);
        self.arcs.insert(arc(v, u), unew);
        self.peak_arcs = self.peak_arcs.max(self.arcs.len());
        Ok(())
    }

    /// Cuts without executing sketch additions; see [`EulerTourForest::flush`].
    pub fn cut_deferred(&mut self, u: u32, v: u32) -> Result<(), EttError> {
        if u >= self.n || v >= self.n || !self.has_edge(u, v) {
            return Err(EttError::IllegalCut(u, v));
        }
        self.reroot(u);
        let a1 = self.arcs[&arc(u, v)];
        let a2 = self.arcs[&arc(v, u)];
        let (p, _) = self.sl.split_at(a1);
        let p = p.expect("tour starts at u");
        self.sl.split_at(a2);
        let rest = self.sl.next_node(a2).map(|n2| self.sl.split_at(n2).1);
        let tail = self.sl.last_node(p);
        self.migrate_if_designated(u, a2, tail);
        self.sl.destroy(a2).expect("detached");
        if let Some(r) = rest {
            self.sl.join_roots(p, r);
        }
        self.arcs.remove(&arc(u, v));
        self.arcs.remove(&arc(v, u));
        Ok(())
    }

    /// Executes pending sketch additions with `helpers` workers.
    pub fn flush(&mut self, helpers: usize) {
        self.sl.flush_tasks(helpers);
    }

    pub fn pending_tasks(&self) -> usize {
        self.sl.pending_tasks().len()
    }

    pub fn link(&mut self, u: u32, v: u32) -> Result<(), EttError> {
        self.link_deferred(u, v)?;
        self.flush(1);
        Ok(())
    }

    pub fn cut(&mut self, u: u32, v: u32) -> Result<(), EttError> {
        self.cut_deferred(u, v)?;
        self.flush(1);
        Ok(())
    }

    /// Canonical bytes: vertex count, sorted edges, then each vertex sketch.
    ///
    /// Tour order depends on the history of reroots, so it is not part of the
    /// canonical form; every observable answer depends only on what is written.
    pub fn serialize(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.n.to_le_bytes());
        out.push(self.is_augmented() as u8);
        let edges = self.edges();
        out.extend_from_slice(&(edges.len() as u32).to_le_bytes());
        for (a, b) in edges {
            out.extend_from_slice(&a.to_le_bytes());
            out.extend_from_slice(&b.to_le_bytes());
        }
        if let Some(arena) = self.sl.arena() {
            for &d in &self.designated {
                for w in arena.words(self.sl.bottom_slot(d).expect("designated carries a sketch")) {
                    out.extend_from_slice(&w.to_le_bytes());
                }
            }
        }
    }

    pub fn peak_bytes(&self) -> usize {
        self.sl.peak_bytes()
            + self.designated.len() * std::mem::size_of::<NodeId>()
            + self.peak_arcs * (std::mem::size_of::<u64>() + std::mem::size_of::<NodeId>())
    }

    /// Structural audit: list invariants, tour shape, designation and arcs.
    pub fn check(&self) -> Result<(), String> {
        let mut roots: Vec<NodeId> = (0..self.n).map(|v| self.component_id(v)).collect();
        roots.sort_unstable();
        roots.dedup();
        let mut total = 0u64;
        for &r in &roots {
            self.sl.check_list(r)?;
            let elems = self.sl.elements(r);
            let mut vertices: Vec<u32> = Vec::new();
            for &e in &elems {
                let x = self.sl.payload(e);
                let designated = self.designated[x as usize] == e;
                if designated != (self.sl.bottom_count(e) == 1) {
                    return Err(format!("occurrence {e} of {x} has the wrong count"));
                }
                if self.sl.bottom_slot(e).is_some() != (designated && self.is_augmented()) {
                    return Err(format!("occurrence {e} of {x} has the wrong sketch placement"));
                }
                if designated {
                    vertices.push(x);
                }
            }
            if elems.len() != 2 * vertices.len() - 1 {
                return Err(format!("tour of {} vertices has {} occurrences", vertices.len(), elems.len()));
            }
            if self.sl.payload(elems[0]) != self.sl.payload(*elems.last().unwrap()) {
                return Err("tour does not close".into());
            }
            for w in elems.windows(2) {
                let (x, y) = (self.sl.payload(w[0]), self.sl.payload(w[1]));
                if self.arcs.get(&arc(x, y)) != Some(&w[1]) {
                    return Err(format!("arc {x}->{y} does not enter occurrence {}", w[1]));
                }
            }
            total += self.sl.root_summary(r).0;
        }
        if total != self.n as u64 {
            return Err(format!("component counts sum to {total}, expected {}", self.n));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn forest(n: u32, seed: u64) -> EulerTourForest {
        let cfg = SketchConfig::for_vertices(n as u64, 7, seed).unwrap();
        EulerTourForest::new(n, HeightDistribution { promotion_probability: 0.35, seed }, Some(cfg))
    }

    struct Dsu(Vec<u32>);
    impl Dsu {
        fn find(&mut self, x: u32) -> u32 {
            let p = self.0[x as usize];
            if p == x {
                return x;
            }
            let r = self.find(p);
            self.0[x as usize] = r;
            r
        }
    }

    /// Component labels by BFS over the given edges.
    fn bfs_labels(n: u32, edges: &[(u32, u32)]) -> Vec<u32> {
        let mut adj = vec![Vec::new(); n as usize];
        for &(a, b) in edges {
            adj[a as usize].push(b);
            adj[b as usize].push(a);
        }
        let mut label = vec![u32::MAX; n as usize];
        for s in 0..n {
            if label[s as usize] != u32::MAX {
                continue;
            }
            let mut stack = vec![s];
            label[s as usize] = s;
            while let Some(x) = stack.pop() {
                for &y in &adj[x as usize] {
                    if label[y as usize] == u32::MAX {
                        label[y as usize] = s;
                        stack.push(y);
                    }
                }
            }
        }
        label
    }

    fn same_partition(f: &EulerTourForest, labels: &[u32]) -> bool {
        (0..f.vertex_count()).all(|u| {
            (0..f.vertex_count()).all(|v| f.connected(u, v) == (labels[u as usize] == labels[v as usize]))
        })
    }

    #[test]
    fn fresh_forest() {
        let f = forest(5, 1);
        assert!(f.connected(2, 2));
        assert!(!f.connected(0, 1));
        assert_eq!(f.component_size(3), 1);
        f.check().unwrap();
    }

    #[test]
    fn link_two_singletons() {
        let mut f = forest(4, 2);
        f.link(0, 1).unwrap();
        assert!(f.connected(0, 1));
        assert_eq!(f.component_size(0), 2);
        assert_eq!(f.link(1, 0), Err(EttError::IllegalLink(1, 0)));
        f.check().unwrap();
    }

    #[test]
    fn link_cut_round_trip() {
        let mut f = forest(6, 3);
        f.link(0, 1).unwrap();
        f.link(2, 3).unwrap();
        f.edge_update(1, 4).unwrap();
        f.edge_update(3, 5).unwrap();
        let before = (f.component_aggregate(0), f.component_aggregate(2));
        let mut bytes = Vec::new();
        f.serialize(&mut bytes);
        f.link(1, 3).unwrap();
        f.cut(1, 3).unwrap();
        assert_eq!((f.component_aggregate(0), f.component_aggregate(2)), before);
        let mut after = Vec::new();
        f.serialize(&mut after);
        assert_eq!(bytes, after);
        f.check().unwrap();
    }

    #[test]
    fn cut_two_path() {
        let mut f = forest(3, 4);
        f.edge_update(0, 2).unwrap();
        let s0 = f.vertex_sketch(0).unwrap();
        f.link(0, 1).unwrap();
        f.cut(0, 1).unwrap();
        assert!(!f.connected(0, 1));
        assert_eq!(f.vertex_sketch(0).unwrap(), s0);
        assert_eq!(f.component_aggregate(0).sketch.unwrap(), s0);
        assert_eq!(f.component_size(1), 1);
        assert_eq!(f.cut(0, 1), Err(EttError::IllegalCut(0, 1)));
    }

    #[test]
    fn cut_middle_of_path() {
        let mut f = forest(5, 5);
        for i in 0..4 {
            f.link(i, i + 1).unwrap();
        }
        f.cut(2, 3).unwrap();
        let labels = bfs_labels(5, &[(0, 1), (1, 2), (3, 4)]);
        assert!(same_partition(&f, &labels));
        assert_eq!(f.component_size(0), 3);
        assert_eq!(f.component_size(4), 2);
        f.check().unwrap();
    }

    #[test]
    fn internal_edge_cancels() {
        let mut f = forest(4, 6);
        f.edge_update(0, 1).unwrap();
        f.link(0, 1).unwrap();
        let idx01 = encode_edge(0, 1, 4).unwrap();
        assert_ne!(f.query(0), Some(idx01));
        assert_eq!(f.query(0), None);
        f.edge_update(1, 2).unwrap();
        assert_eq!(f.query(0), Some(encode_edge(1, 2, 4).unwrap()));
    }

    #[test]
    fn singleton_aggregate() {
        let mut f = forest(8, 7);
        let i = encode_edge(3, 6, 8).unwrap();
        f.vertex_update(3, i).unwrap();
        let mut s = Sketch::zero(SketchConfig::for_vertices(8, 7, 7).unwrap());
        s.update(i).unwrap();
        assert_eq!(f.component_aggregate(3), Aggregate { count: 1, sketch: Some(s) });
        f.vertex_update(3, i).unwrap();
        assert!(f.component_aggregate(3).sketch.unwrap().is_zero());
    }

    #[test]
    fn sketchless_rejects_updates() {
        let mut f = EulerTourForest::new(4, HeightDistribution::classic(1), None);
        assert_eq!(f.vertex_update(0, EdgeIndex(1)), Err(EttError::Unsupported));
        f.link(0, 1).unwrap();
        assert!(f.connected(1, 0));
        f.check().unwrap();
    }

    #[test]
    fn random_links_match_union_find() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 60;
        let mut f = forest(n, 8);
        let mut dsu = Dsu((0..n).collect());
        for _ in 0..400 {
            let (u, v) = (rng.gen_range(0..n), rng.gen_range(0..n));
            let (ru, rv) = (dsu.find(u), dsu.find(v));
            if ru != rv {
                f.link(u, v).unwrap();
                dsu.0[ru as usize] = rv;
            }
        }
        for u in 0..n {
            for v in 0..n {
                assert_eq!(f.connected(u, v), dsu.find(u) == dsu.find(v));
            }
        }
        f.check().unwrap();
    }

    #[test]
    fn random_link_cut_interleavings() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 40u32;
        let mut f = forest(n, 9);
        let mut tree: Vec<(u32, u32)> = Vec::new();
        for _ in 0..200 {
            let (u, v) = (rng.gen_range(0..n), rng.gen_range(0..n));
            if u != v {
                f.edge_update(u, v).unwrap();
            }
        }
        for step in 0..1000 {
            if !tree.is_empty() && rng.gen_bool(0.4) {
                let (u, v) = tree.swap_remove(rng.gen_range(0..tree.len()));
                if rng.gen_bool(0.5) { f.cut(u, v).unwrap() } else { f.cut(v, u).unwrap() }
            } else {
                let (u, v) = (rng.gen_range(0..n), rng.gen_range(0..n));
                if u != v && !f.connected(u, v) {
                    f.link(u, v).unwrap();
                    tree.push((u.min(v), u.max(v)));
                }
            }
            let labels = bfs_labels(n, &tree);
            assert!(same_partition(&f, &labels), "step {step}");
            if step % 50 == 0 {
                f.check().unwrap();
                for v in 0..n {
                    let mut want = Sketch::zero(SketchConfig::for_vertices(n as u64, 7, 9).unwrap());
                    let mut size = 0;
                    for x in 0..n {
                        if labels[x as usize] == labels[v as usize] {
                            want.add(&f.vertex_sketch(x).unwrap()).unwrap();
                            size += 1;
                        }
                    }
                    assert_eq!(f.component_aggregate(v), Aggregate { count: size, sketch: Some(want) });
                }
            }
        }
        let mut edges = tree.clone();
        edges.sort_unstable();
        assert_eq!(f.edges(), edges);
    }

    #[test]
    fn deferred_matches_inline_for_any_helpers() {
        let build = |helpers: usize| {
            let mut f = forest(30, 10);
            let mut rng = ChaCha8Rng::seed_from_u64(10);
            for _ in 0..100 {
                let (u, v) = (rng.gen_range(0..30), rng.gen_range(0..30));
                if u != v {
                    f.edge_update(u, v).unwrap();
                }
            }
            let mut tree = Vec::new();
            for _ in 0..200 {
                let (u, v) = (rng.gen_range(0..30), rng.gen_range(0..30));
                if u != v && !f.connected(u, v) {
                    f.link_deferred(u, v).unwrap();
                    tree.push((u, v));
                } else if let Some((a, b)) = tree.pop() {
                    f.cut_deferred(a, b).unwrap();
                }
                f.flush(helpers);
            }
            let mut out = Vec::new();
            f.serialize(&mut out);
            out
        };
        let one = build(1);
        for h in [2, 4, 8] {
            assert_eq!(build(h), one);
        }
    }
}
