//! One level of the connectivity structure: a spanning forest whose components
//! can sample an edge leaving them.

use thiserror::Error;

use crate::ett::{EttError, EulerTourForest};
use crate::sketch::{decode_edge, mix64, EdgeIndex, SketchConfig, SketchError};
use crate::skiplist::HeightDistribution;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CutsetError {
    #[error(transparent)]
    Forest(#[from] EttError),
    #[error(transparent)]
    Sketch(#[from] SketchError),
}

/// How tower heights are drawn for a level's skip lists.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HeightMode {
    /// Promotion probability `1 / log2 V`.
    Reduced,
    /// Promotion probability `1/2`.
    Classic,
}

impl HeightMode {
    pub fn distribution(self, vertices: u32, seed: u64) -> HeightDistribution {
        match self {
            HeightMode::Reduced => HeightDistribution::reduced(vertices as u64, seed),
            HeightMode::Classic => HeightDistribution::classic(seed),
        }
    }
}

/// Independent per-level seed derived from the master seed.
pub fn level_seed(master: u64, level: usize) -> u64 {
    mix64(master ^ mix64(0x6c65_7665_6c00 + level as u64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StructuralOp {
    Link(u32, u32),
    Cut(u32, u32),
}

#[derive(Debug, Clone)]
pub struct CutsetLevel {
    level: usize,
    seed: u64,
    forest: EulerTourForest,
}

impl CutsetLevel {
    pub fn new(vertices: u32, level: usize, master_seed: u64, columns: u32, heights: HeightMode) -> Result<Self, CutsetError> {
        let seed = level_seed(master_seed, level);
        let cfg = SketchConfig::for_vertices(vertices as u64, columns, seed)?;
        let dist = heights.distribution(vertices, mix64(seed ^ 0x5eed));
        Ok(CutsetLevel { level, seed, forest: EulerTourForest::new(vertices, dist, Some(cfg)) })
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn forest(&self) -> &EulerTourForest {
        &self.forest
    }

    pub fn vertex_count(&self) -> u32 {
        self.forest.vertex_count()
    }

    /// Toggles edge `(u, v)` in the level's sketches.
    pub fn update(&mut self, u: u32, v: u32) -> Result<EdgeIndex, CutsetError> {
        Ok(self.forest.edge_update(u, v)?)
    }

    pub fn link(&mut self, u: u32, v: u32) -> Result<(), CutsetError> {
        Ok(self.forest.link(u, v)?)
    }

    pub fn cut(&mut self, u: u32, v: u32) -> Result<(), CutsetError> {
        Ok(self.forest.cut(u, v)?)
    }

    pub fn has_edge(&self, u: u32, v: u32) -> bool {
        self.forest.has_edge(u, v)
    }

    pub fn connected(&self, u: u32, v: u32) -> bool {
        self.forest.connected(u, v)
    }

    pub fn component_size(&self, v: u32) -> u64 {
        self.forest.component_size(v)
    }

    /// An edge crossing the cut of `v`'s component, if the sketch sum yields one.
    pub fn query(&self, v: u32) -> Option<(u32, u32)> {
        let idx = self.forest.query(v)?;
        let (a, b) = decode_edge(idx, self.vertex_count() as u64).ok()?;
        Some((a as u32, b as u32))
    }

    /// Runs a link or cut in two phases: the structural change logs its sketch
    /// additions, then `helpers` workers replay the log over disjoint word
    /// ranges. Returns the number of logged additions.
    pub fn parallel_structural_op(&mut self, op: StructuralOp, helpers: usize) -> Result<usize, CutsetError> {
        match op {
            StructuralOp::Link(u, v) => self.forest.link_deferred(u, v)?,
            StructuralOp::Cut(u, v) => self.forest.cut_deferred(u, v)?,
        }
        let tasks = self.forest.pending_tasks();
        self.forest.flush(helpers);
        Ok(tasks)
    }

    pub fn serialize(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&(self.level as u32).to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        self.forest.serialize(out);
    }

    pub fn peak_bytes(&self) -> usize {
        self.forest.peak_bytes()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    fn level(n: u32, seed: u64) -> CutsetLevel {
        CutsetLevel::new(n, 0, seed, 7, HeightMode::Reduced).unwrap()
    }

    fn bytes(l: &CutsetLevel) -> Vec<u8> {
        let mut out = Vec::new();
        l.serialize(&mut out);
        out
    }

    #[test]
    fn toggle_twice_restores_state() {
        let mut l = level(10, 1);
        let before = bytes(&l);
        l.update(3, 7).unwrap();
        assert_ne!(bytes(&l), before);
        l.update(7, 3).unwrap();
        assert_eq!(bytes(&l), before);
        assert!(l.update(4, 4).is_err());
    }

    #[test]
    fn single_incident_edge() {
        let mut l = level(5, 2);
        assert_eq!(l.query(0), None);
        l.update(0, 1).unwrap();
        assert_eq!(l.query(0), Some((0, 1)));
    }

    #[test]
    fn internal_edge_cancels() {
        let mut l = level(4, 3);
        l.update(0, 1).unwrap();
        l.update(1, 2).unwrap();
        l.link(0, 1).unwrap();
        assert_eq!(l.query(0), Some((1, 2)));
        assert_eq!(l.query(3), None);
    }

    /// Random graph, random spanning subforest, queries checked against the edge set.
    #[test]
    fn queries_are_cut_edges() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (mut ok, mut tried) = (0, 0);
        for trial in 0..30 {
            let n = rng.gen_range(8..80u32);
            let mut l = level(n, trial);
            let mut edges = HashSet::new();
            for _ in 0..rng.gen_range(n..4 * n) {
                let (a, b) = (rng.gen_range(0..n), rng.gen_range(0..n));
                if a != b && edges.insert((a.min(b), a.max(b))) {
                    l.update(a, b).unwrap();
                }
            }
            let mut list: Vec<_> = edges.iter().copied().collect();
            list.sort_unstable();
            list.shuffle(&mut rng);
            for &(a, b) in &list {
                if rng.gen_bool(0.5) && !l.connected(a, b) {
                    l.link(a, b).unwrap();
                }
            }
            for v in 0..n {
                let crossing = edges.iter().any(|&(a, b)| l.connected(a, v) != l.connected(b, v));
                match l.query(v) {
                    Some((a, b)) => {
                        assert!(edges.contains(&(a, b)));
                        assert_ne!(l.connected(a, v), l.connected(b, v));
                        ok += 1;
                        tried += 1;
                    }
                    None if crossing => tried += 1,
                    None => {}
                }
            }
        }
        assert!(ok as f64 >= 0.9 * tried as f64, "{ok}/{tried}");
    }

    #[test]
    fn helper_counts_give_identical_levels() {
        let run = |helpers: usize| {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let mut l = level(50, 5);
            for _ in 0..150 {
                let (a, b) = (rng.gen_range(0..50), rng.gen_range(0..50));
                if a != b {
                    l.update(a, b).unwrap();
                }
            }
            let mut tree = Vec::new();
            let mut snapshots = Vec::new();
            for _ in 0..120 {
                let (a, b) = (rng.gen_range(0..50), rng.gen_range(0..50));
                if a != b && !l.connected(a, b) {
                    l.parallel_structural_op(StructuralOp::Link(a, b), helpers).unwrap();
                    tree.push((a, b));
                } else if !tree.is_empty() {
                    let (a, b) = tree.swap_remove(rng.gen_range(0..tree.len()));
                    l.parallel_structural_op(StructuralOp::Cut(a, b), helpers).unwrap();
                }
                snapshots.push(bytes(&l));
            }
            snapshots
        };
        let sequential = {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let mut l = level(50, 5);
            for _ in 0..150 {
                let (a, b) = (rng.gen_range(0..50), rng.gen_range(0..50));
                if a != b {
                    l.update(a, b).unwrap();
                }
            }
            let mut tree = Vec::new();
            let mut snapshots = Vec::new();
            for _ in 0..120 {
                let (a, b) = (rng.gen_range(0..50), rng.gen_range(0..50));
                if a != b && !l.connected(a, b) {
                    l.link(a, b).unwrap();
                    tree.push((a, b));
                } else if !tree.is_empty() {
                    let (a, b) = tree.swap_remove(rng.gen_range(0..tree.len()));
                    l.cut(a, b).unwrap();
                }
                snapshots.push(bytes(&l));
            }
            snapshots
        };
        for h in [1, 2, 4, 8] {
            assert_eq!(run(h), sequential, "helpers={h}");
        }
    }

    #[test]
    fn cut_task_count_is_polylog() {
        let n = 1001u32;
        let lg = (n as f64).log2();
        let mut worst = 0;
        for seed in 0..10 {
            let mut l = level(n, seed);
            for v in 0..500 {
                l.link(v, v + 1).unwrap();
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..20 {
                let v = rng.gen_range(0..500);
                let tasks = l.parallel_structural_op(StructuralOp::Cut(v, v + 1), 1).unwrap();
                worst = worst.max(tasks);
                l.link(v, v + 1).unwrap();
            }
        }
        assert!(worst as f64 <= 8.0 * lg * lg, "worst task count {worst}");
    }

    #[test]
    fn non_forest_edges_do_not_grow_state() {
        let mut l = level(40, 6);
        for v in 0..39 {
            l.update(v, v + 1).unwrap();
            l.link(v, v + 1).unwrap();
        }
        let size = bytes(&l).len();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..390 {
            let (a, b): (u32, u32) = (rng.gen_range(0..40), rng.gen_range(0..40));
            if a != b && a.abs_diff(b) != 1 {
                l.update(a, b).unwrap();
            }
        }
        assert_eq!(bytes(&l).len(), size);
    }
}
