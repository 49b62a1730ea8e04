//! Link-cut trees with path maximum over edge weights.
//!
//! Edges are explicit splay nodes; vertices carry weight `-1` so that every path
//! maximum lands on an edge. Each splay subtree tracks both its leftmost and its
//! rightmost maximum, which lets a reversal swap them in O(1) and fixes the tie
//! rule: on the path from `u` the first maximal edge wins.

use std::collections::HashMap;

use thiserror::Error;

const NIL: u32 = u32::MAX;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LctError {
    #[error("cannot link {0} and {1}: already connected")]
    IllegalLink(u32, u32),
    #[error("cannot cut {0}-{1}: no such edge")]
    IllegalCut(u32, u32),
    #[error("no path between {0} and {1}")]
    NoPath(u32, u32),
    #[error("vertex {0} out of range")]
    InvalidVertex(u32),
}

#[derive(Debug, Clone, Copy)]
struct Node {
    ch: [u32; 2],
    p: u32,
    rev: bool,
    w: i64,
    lo: u32,
    hi: u32,
    ends: (u32, u32),
}

#[inline]
fn key(u: u32, v: u32) -> (u32, u32) {
    (u.min(v), u.max(v))
}

#[derive(Debug, Clone)]
pub struct LinkCutForest {
    n: u32,
    t: Vec<Node>,
    free: Vec<u32>,
    edges: HashMap<(u32, u32), u32>,
    peak_edges: usize,
}

impl LinkCutForest {
    pub fn new(n: u32) -> Self {
        let t = (0..n)
            .map(|v| Node { ch: [NIL; 2], p: NIL, rev: false, w: -1, lo: v, hi: v, ends: (v, v) })
            .collect();
        LinkCutForest { n, t, free: Vec::new(), edges: HashMap::new(), peak_edges: 0 }
    }

    pub fn vertex_count(&self) -> u32 {
        self.n
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn weight(&self, u: u32, v: u32) -> Option<u32> {
        self.edges.get(&key(u, v)).map(|&e| self.t[e as usize].w as u32)
    }

    /// `(min, max, weight)` triples, sorted.
    pub fn edges(&self) -> Vec<(u32, u32, u32)> {
        let mut out: Vec<_> = self.edges.iter().map(|(&(a, b), &e)| (a, b, self.t[e as usize].w as u32)).collect();
        out.sort_unstable();
        out
    }

    pub fn peak_bytes(&self) -> usize {
        let per_edge = std::mem::size_of::<Node>() + std::mem::size_of::<((u32, u32), u32)>();
        self.n as usize * std::mem::size_of::<Node>() + self.peak_edges * per_edge
    }

    fn is_root(&self, x: u32) -> bool {
        let p = self.t[x as usize].p;
        p == NIL || (self.t[p as usize].ch[0] != x && self.t[p as usize].ch[1] != x)
    }

    fn apply_rev(&mut self, x: u32) {
        if x == NIL {
            return;
        }
        let n = &mut self.t[x as usize];
        n.ch.swap(0, 1);
        std::mem::swap(&mut n.lo, &mut n.hi);
        n.rev = !n.rev;
    }

    fn push(&mut self, x: u32) {
        if self.t[x as usize].rev {
            let [a, b] = self.t[x as usize].ch;
            self.apply_rev(a);
            self.apply_rev(b);
            self.t[x as usize].rev = false;
        }
    }

    fn wt(&self, x: u32) -> i64 {
        self.t[x as usize].w
    }

    fn pull(&mut self, x: u32) {
        let [l, r] = self.t[x as usize].ch;
        let mut mx = self.wt(x);
        if l != NIL {
            mx = mx.max(self.wt(self.t[l as usize].lo));
        }
        if r != NIL {
            mx = mx.max(self.wt(self.t[r as usize].lo));
        }
        let lo = if l != NIL && self.wt(self.t[l as usize].lo) == mx {
            self.t[l as usize].lo
        } else if self.wt(x) == mx {
            x
        } else {
            self.t[r as usize].lo
        };
        let hi = if r != NIL && self.wt(self.t[r as usize].hi) == mx {
            self.t[r as usize].hi
        } else if self.wt(x) == mx {
            x
        } else {
            self.t[l as usize].hi
        };
        let n = &mut self.t[x as usize];
        n.lo = lo;
        n.hi = hi;
    }

    fn rotate(&mut self, x: u32) {
        let p = self.t[x as usize].p;
        let g = self.t[p as usize].p;
        let dir = (self.t[p as usize].ch[1] == x) as usize;
        let b = self.t[x as usize].ch[dir ^ 1];
        if !self.is_root(p) {
            let gd = (self.t[g as usize].ch[1] == p) as usize;
            self.t[g as usize].ch[gd] = x;
        }
        self.t[x as usize].p = g;
        self.t[x as usize].ch[dir ^ 1] = p;
        self.t[p as usize].p = x;
        self.t[p as usize].ch[dir] = b;
        if b != NIL {
            self.t[b as usize].p = p;
        }
        self.pull(p);
        self.pull(x);
    }

    fn splay(&mut self, x: u32) {
        let mut stack = vec![x];
        let mut y = x;
        while !self.is_root(y) {
            y = self.t[y as usize].p;
            stack.push(y);
        }
        while let Some(z) = stack.pop() {
            self.push(z);
        }
        while !self.is_root(x) {
            let p = self.t[x as usize].p;
            if !self.is_root(p) {
                let g = self.t[p as usize].p;
                let zigzig = (self.t[g as usize].ch[1] == p) == (self.t[p as usize].ch[1] == x);
                self.rotate(if zigzig { p } else { x });
            }
            self.rotate(x);
        }
    }

    fn access(&mut self, x: u32) {
        let mut last = NIL;
        let mut y = x;
        while y != NIL {
            self.splay(y);
            self.t[y as usize].ch[1] = last;
            self.pull(y);
            last = y;
            y = self.t[y as usize].p;
        }
        self.splay(x);
    }

    fn evert(&mut self, x: u32) {
        self.access(x);
        self.apply_rev(x);
    }

    fn find_root(&mut self, x: u32) -> u32 {
        self.access(x);
        let mut y = x;
        loop {
            self.push(y);
            let l = self.t[y as usize].ch[0];
            if l == NIL {
                break;
            }
            y = l;
        }
        self.splay(y);
        y
    }

    fn check(&self, v: u32) -> Result<(), LctError> {
        if v >= self.n {
            return Err(LctError::InvalidVertex(v));
        }
        Ok(())
    }

    pub fn connected(&mut self, u: u32, v: u32) -> bool {
        u == v || self.find_root(u) == self.find_root(v)
    }

    fn attach(&mut self, x: u32, y: u32) {
        self.evert(x);
        self.t[x as usize].p = y;
    }

    fn detach(&mut self, x: u32, y: u32) {
        self.evert(x);
        self.access(y);
        debug_assert_eq!(self.t[y as usize].ch[0], x);
        self.t[y as usize].ch[0] = NIL;
        self.t[x as usize].p = NIL;
        self.pull(y);
    }

    pub fn link(&mut self, u: u32, v: u32, weight: u32) -> Result<(), LctError> {
        self.check(u)?;
        self.check(v)?;
        if self.connected(u, v) {
            return Err(LctError::IllegalLink(u, v));
        }
        let node = Node { ch: [NIL; 2], p: NIL, rev: false, w: weight as i64, lo: 0, hi: 0, ends: key(u, v) };
        let e = match self.free.pop() {
            Some(e) => {
                self.t[e as usize] = node;
                e
            }
            None => {
                self.t.push(node);
                (self.t.len() - 1) as u32
            }
        };
        self.t[e as usize].lo = e;
        self.t[e as usize].hi = e;
        self.attach(u, e);
        self.attach(e, v);
        self.edges.insert(key(u, v), e);
        self.peak_edges = self.peak_edges.max(self.edges.len());
        Ok(())
    }

    pub fn cut(&mut self, u: u32, v: u32) -> Result<(), LctError> {
        let e = self.edges.remove(&key(u, v)).ok_or(LctError::IllegalCut(u, v))?;
        self.detach(u, e);
        self.detach(e, v);
        self.free.push(e);
        Ok(())
    }

    /// A maximum-weight edge on the `u`-`v` path, endpoints ordered as walked
    /// from `u`. Among equal maxima the one reached first from `u` is returned.
    pub fn path_query(&mut self, u: u32, v: u32) -> Result<(u32, u32, u32), LctError> {
        self.check(u)?;
        self.check(v)?;
        if u == v || !self.connected(u, v) {
            return Err(LctError::NoPath(u, v));
        }
        self.evert(u);
        self.access(v);
        let e = self.t[v as usize].lo;
        self.splay(e);
        self.push(e);
        let mut pred = self.t[e as usize].ch[0];
        loop {
            self.push(pred);
            let r = self.t[pred as usize].ch[1];
            if r == NIL {
                break;
            }
            pred = r;
        }
        self.splay(pred);
        let (a, b) = self.t[e as usize].ends;
        let other = if pred == a { b } else { a };
        Ok((pred, other, self.t[e as usize].w as u32))
    }
}
