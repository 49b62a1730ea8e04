//! Lossless reference answers for testing the sketch-based engine.
//!
//! Two independent implementations are provided so they can cross-check each
//! other: BFS over an adjacency set, and a union-find that is rebuilt from the
//! edge list after deletions.

use std::collections::{HashSet, VecDeque};

use crate::stream::{OpKind, StreamOp, ViolationKind};

fn norm(u: u32, v: u32) -> (u32, u32) {
    (u.min(v), u.max(v))
}

fn validate(n: u32, u: u32, v: u32) -> Result<(), ViolationKind> {
    if u == v {
        return Err(ViolationKind::SelfLoop);
    }
    if u >= n || v >= n {
        return Err(ViolationKind::OutOfRange);
    }
    Ok(())
}

/// Exact edge set with BFS connectivity.
#[derive(Debug, Clone)]
pub struct ShadowGraph {
    n: u32,
    adj: Vec<HashSet<u32>>,
    edges: usize,
}

impl ShadowGraph {
    pub fn new(n: u32) -> Self {
        ShadowGraph { n, adj: vec![HashSet::new(); n as usize], edges: 0 }
    }

    pub fn vertex_count(&self) -> u32 {
        self.n
    }

    pub fn edge_count(&self) -> usize {
        self.edges
    }

    pub fn contains(&self, u: u32, v: u32) -> bool {
        u < self.n && self.adj[u as usize].contains(&v)
    }

    pub fn insert(&mut self, u: u32, v: u32) -> Result<(), ViolationKind> {
        validate(self.n, u, v)?;
        if !self.adj[u as usize].insert(v) {
            return Err(ViolationKind::AlreadyPresent);
        }
        self.adj[v as usize].insert(u);
        self.edges += 1;
        Ok(())
    }

    pub fn delete(&mut self, u: u32, v: u32) -> Result<(), ViolationKind> {
        validate(self.n, u, v)?;
        if !self.adj[u as usize].remove(&v) {
            return Err(ViolationKind::Absent);
        }
        self.adj[v as usize].remove(&u);
        self.edges -= 1;
        Ok(())
    }

    /// Applies an update; queries leave the graph unchanged.
    pub fn apply(&mut self, op: &StreamOp) -> Result<(), ViolationKind> {
        match op.kind {
            OpKind::Insert => self.insert(op.u, op.v),
            OpKind::Delete => self.delete(op.u, op.v),
            OpKind::Query => validate(self.n, op.u, op.v),
        }
    }

    pub fn connected(&self, u: u32, v: u32) -> bool {
        if u == v {
            return true;
        }
        let mut seen = vec![false; self.n as usize];
        seen[u as usize] = true;
        let mut queue = VecDeque::from([u]);
        while let Some(x) = queue.pop_front() {
            for &y in &self.adj[x as usize] {
                if y == v {
                    return true;
                }
                if !seen[y as usize] {
                    seen[y as usize] = true;
                    queue.push_back(y);
                }
            }
        }
        false
    }

    /// Component label per vertex: the smallest vertex id in its component.
    pub fn components(&self) -> Vec<u32> {
        let mut label = vec![u32::MAX; self.n as usize];
        for s in 0..self.n {
            if label[s as usize] != u32::MAX {
                continue;
            }
            label[s as usize] = s;
            let mut queue = VecDeque::from([s]);
            while let Some(x) = queue.pop_front() {
                for &y in &self.adj[x as usize] {
                    if label[y as usize] == u32::MAX {
                        label[y as usize] = s;
                        queue.push_back(y);
                    }
                }
            }
        }
        label
    }

    /// Whether `(a, b)` is a graph edge whose endpoints carry different labels.
    pub fn crosses(&self, labels: &[u32], a: u32, b: u32) -> bool {
        self.contains(a, b) && labels[a as usize] != labels[b as usize]
    }

    pub fn edges(&self) -> Vec<(u32, u32)> {
        let mut out: Vec<_> = (0..self.n)
            .flat_map(|u| self.adj[u as usize].iter().filter(move |&&v| u < v).map(move |&v| (u, v)))
            .collect();
        out.sort_unstable();
        out
    }
}

/// Union-find over an edge list, rebuilt lazily after any deletion.
#[derive(Debug, Clone)]
pub struct RebuildUnionFind {
    parent: Vec<u32>,
    rank: Vec<u8>,
    edges: Vec<(u32, u32)>,
    dirty: bool,
}

impl RebuildUnionFind {
    pub fn new(n: u32) -> Self {
        RebuildUnionFind { parent: (0..n).collect(), rank: vec![0; n as usize], edges: Vec::new(), dirty: false }
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let p = self.parent[x as usize];
            self.parent[x as usize] = self.parent[p as usize];
            x = p;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        let (ka, kb) = (self.rank[ra as usize], self.rank[rb as usize]);
        if ka < kb {
            self.parent[ra as usize] = rb;
        } else {
            self.parent[rb as usize] = ra;
            if ka == kb {
                self.rank[ra as usize] += 1;
            }
        }
    }

    fn rebuild(&mut self) {
        for (i, p) in self.parent.iter_mut().enumerate() {
            *p = i as u32;
        }
        self.rank.fill(0);
        for k in 0..self.edges.len() {
            let (a, b) = self.edges[k];
            self.union(a, b);
        }
        self.dirty = false;
    }

    pub fn apply(&mut self, op: &StreamOp) -> Result<(), ViolationKind> {
        let n = self.parent.len() as u32;
        validate(n, op.u, op.v)?;
        let e = norm(op.u, op.v);
        match op.kind {
            OpKind::Insert => {
                if self.edges.contains(&e) {
                    return Err(ViolationKind::AlreadyPresent);
                }
                self.edges.push(e);
                if !self.dirty {
                    self.union(e.0, e.1);
                }
            }
            OpKind::Delete => {
                let i = self.edges.iter().position(|&x| x == e).ok_or(ViolationKind::Absent)?;
                self.edges.swap_remove(i);
                self.dirty = true;
            }
            OpKind::Query => {}
        }
        Ok(())
    }

    pub fn connected(&mut self, u: u32, v: u32) -> bool {
        if self.dirty {
            self.rebuild();
        }
        self.find(u) == self.find(v)
    }
}
