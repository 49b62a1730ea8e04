//! Slot storage for many sketches sharing one config.
//!
//! Words are kept in one plane per column: slot `s` owns
//! `plane[c][s * wpc .. (s + 1) * wpc]`. A column of one sketch is a contiguous
//! word block, so handing whole planes to different helpers partitions every
//! sketch into disjoint blocks without any shared mutation.

use crate::sketch::{BucketHit, Sketch, SketchConfig, SketchHasher};

pub const NIL: u32 = u32::MAX;

/// `dst = a ^ b`, where `NIL` stands for the zero sketch.
///
/// A task may read `dst` itself (`a == dst`), which gives accumulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SketchTask {
    pub dst: u32,
    pub a: u32,
    pub b: u32,
}

#[derive(Debug, Clone)]
pub struct SketchArena {
    hasher: SketchHasher,
    wpc: usize,
    planes: Vec<Vec<u64>>,
    free: Vec<u32>,
    slots: u32,
    live: u32,
    peak_live: u32,
}

impl SketchArena {
    pub fn new(config: SketchConfig) -> Self {
        SketchArena {
            hasher: config.hasher(),
            wpc: config.words_per_column(),
            planes: vec![Vec::new(); config.num_columns as usize],
            free: Vec::new(),
            slots: 0,
            live: 0,
            peak_live: 0,
        }
    }

    pub fn config(&self) -> &SketchConfig {
        self.hasher.config()
    }

    pub fn hasher(&self) -> &SketchHasher {
        &self.hasher
    }

    /// Allocates a slot. Its contents are unspecified until a task writes it.
    pub fn alloc(&mut self) -> u32 {
        self.live += 1;
        self.peak_live = self.peak_live.max(self.live);
        if let Some(s) = self.free.pop() {
            return s;
        }
        let s = self.slots;
        self.slots += 1;
        for p in &mut self.planes {
            p.resize(self.slots as usize * self.wpc, 0);
        }
        s
    }

    pub fn release(&mut self, slot: u32) {
        debug_assert!(slot < self.slots);
        self.live -= 1;
        self.free.push(slot);
    }

    pub fn live_slots(&self) -> usize {
        self.live as usize
    }

    pub fn slot_bytes(&self) -> usize {
        8 * self.config().total_words()
    }

    /// High-water mark of live slots, in bytes.
    pub fn peak_bytes(&self) -> usize {
        self.peak_live as usize * self.slot_bytes()
    }

    pub fn zero(&mut self, slot: u32) {
        let r = self.range(slot);
        for p in &mut self.planes {
            p[r.clone()].fill(0);
        }
    }

    #[inline]
    fn range(&self, slot: u32) -> std::ops::Range<usize> {
        let s = slot as usize * self.wpc;
        s..s + self.wpc
    }

    pub fn hits(&self, index: u64) -> Vec<BucketHit> {
        (0..self.planes.len()).map(|c| self.hasher.hit(index, c)).collect()
    }

    /// Applies the toggle described by `hits` to every slot in `slots`.
    pub fn toggle_slots(&mut self, slots: &[u32], index: u64, hits: &[BucketHit]) {
        let wpc = self.wpc;
        for (c, plane) in self.planes.iter_mut().enumerate() {
            let at = 2 * hits[c].depth as usize;
            for &s in slots {
                let base = s as usize * wpc + at;
                plane[base] ^= index;
                plane[base + 1] ^= hits[c].checksum;
            }
        }
    }

    pub fn query(&self, slot: u32) -> Option<u64> {
        let r = self.range(slot);
        self.planes.iter().enumerate().find_map(|(c, p)| self.hasher.query_column(&p[r.clone()], c))
    }

    pub fn is_zero(&self, slot: u32) -> bool {
        let r = self.range(slot);
        self.planes.iter().all(|p| p[r.clone()].iter().all(|&w| w == 0))
    }

    /// Copies a slot out as a column-major word vector.
    pub fn words(&self, slot: u32) -> Vec<u64> {
        let r = self.range(slot);
        self.planes.iter().flat_map(|p| p[r.clone()].iter().copied()).collect()
    }

    pub fn to_sketch(&self, slot: u32) -> Sketch {
        Sketch::from_words(*self.config(), self.words(slot)).expect("slot holds a full sketch")
    }

    /// Runs `tasks` in order. With more than one helper, planes are dealt out
    /// round-robin and each helper replays the whole sequence on its planes.
    pub fn execute(&mut self, tasks: &[SketchTask], helpers: usize) {
        if tasks.is_empty() {
            return;
        }
        let wpc = self.wpc;
        let helpers = helpers.clamp(1, self.planes.len());
        if helpers == 1 {
            for p in &mut self.planes {
                run_plane(p, wpc, tasks);
            }
            return;
        }
        let mut groups: Vec<Vec<&mut Vec<u64>>> = (0..helpers).map(|_| Vec::new()).collect();
        for (c, p) in self.planes.iter_mut().enumerate() {
            groups[c % helpers].push(p);
        }
        std::thread::scope(|scope| {
            for group in groups {
                scope.spawn(move || {
                    for p in group {
                        run_plane(p, wpc, tasks);
                    }
                });
            }
        });
    }
}

fn run_plane(plane: &mut [u64], wpc: usize, tasks: &[SketchTask]) {
    for t in tasks {
        let d = t.dst as usize * wpc;
        match (t.a, t.b) {
            (NIL, NIL) => plane[d..d + wpc].fill(0),
            (a, NIL) | (NIL, a) => {
                let a = a as usize * wpc;
                if a != d {
                    plane.copy_within(a..a + wpc, d);
                }
            }
            (a, b) => {
                let (a, b) = (a as usize * wpc, b as usize * wpc);
                if a == b {
                    plane[d..d + wpc].fill(0);
                } else if a == d {
                    let (dst, src) = pair(plane, wpc, d, b);
                    xor_assign(dst, src);
                } else if b == d {
                    let (dst, src) = pair(plane, wpc, d, a);
                    xor_assign(dst, src);
                } else {
                    let (dst, x, y) = triple(plane, wpc, d, a, b);
                    for ((o, p), q) in dst.iter_mut().zip(x).zip(y) {
                        *o = p ^ q;
                    }
                }
            }
        }
    }
}

#[inline]
fn xor_assign(dst: &mut [u64], src: &[u64]) {
    for (x, y) in dst.iter_mut().zip(src) {
        *x ^= *y;
    }
}

/// Disjoint blocks at word offsets `d != s`, the first mutable.
#[inline]
fn pair(plane: &mut [u64], wpc: usize, d: usize, s: usize) -> (&mut [u64], &[u64]) {
    if d < s {
        let (lo, hi) = plane.split_at_mut(s);
        (&mut lo[d..d + wpc], &hi[..wpc])
    } else {
        let (lo, hi) = plane.split_at_mut(d);
        (&mut hi[..wpc], &lo[s..s + wpc])
    }
}

/// Three pairwise distinct blocks, the first mutable.
#[inline]
fn triple(plane: &mut [u64], wpc: usize, d: usize, a: usize, b: usize) -> (&mut [u64], &[u64], &[u64]) {
    let (lo, hi) = (a.min(b), a.max(b));
    let (first, second) = if lo == a { (0, 1) } else { (1, 0) };
    let (dst, blocks): (&mut [u64], [&[u64]; 2]) = if d < lo {
        let (x, rest) = plane.split_at_mut(lo);
        (&mut x[d..d + wpc], [&rest[..wpc], &rest[hi - lo..hi - lo + wpc]])
    } else if d < hi {
        let (x, rest) = plane.split_at_mut(d);
        let (y, z) = rest.split_at_mut(wpc);
        (y, [&x[lo..lo + wpc], &z[hi - d - wpc..hi - d]])
    } else {
        let (x, rest) = plane.split_at_mut(d);
        (&mut rest[..wpc], [&x[lo..lo + wpc], &x[hi..hi + wpc]])
    };
    (dst, blocks[first], blocks[second])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sketch::EdgeIndex;

    fn arena() -> SketchArena {
        SketchArena::new(SketchConfig::for_vertices(64, 7, 5).unwrap())
    }

    #[test]
    fn toggle_matches_owned_sketch() {
        let mut a = arena();
        let s = a.alloc();
        a.zero(s);
        let mut owned = Sketch::zero(*a.config());
        for i in [3u64, 99, 1000] {
            let hits = a.hits(i);
            a.toggle_slots(&[s], i, &hits);
            owned.update(EdgeIndex(i)).unwrap();
        }
        assert_eq!(a.to_sketch(s), owned);
        assert_eq!(a.words(s), owned.words());
        assert_eq!(a.query(s), owned.query().map(|e| e.0));
    }

    #[test]
    fn tasks_xor_copy_zero() {
        let mut a = arena();
        let slots: Vec<u32> = (0..4).map(|_| a.alloc()).collect();
        for &s in &slots {
            a.zero(s);
        }
        let h1 = a.hits(1);
        a.toggle_slots(&[slots[0]], 1, &h1);
        let h2 = a.hits(2);
        a.toggle_slots(&[slots[1]], 2, &h2);
        let tasks = [
            SketchTask { dst: slots[2], a: slots[0], b: slots[1] },
            SketchTask { dst: slots[3], a: slots[2], b: NIL },
            SketchTask { dst: slots[3], a: slots[3], b: slots[1] },
            SketchTask { dst: slots[0], a: NIL, b: NIL },
        ];
        a.execute(&tasks, 1);
        assert!(a.is_zero(slots[0]));
        let mut want = Sketch::zero(*a.config());
        want.update(EdgeIndex(1)).unwrap();
        assert_eq!(a.to_sketch(slots[3]), want);
        want.update(EdgeIndex(2)).unwrap();
        assert_eq!(a.to_sketch(slots[2]), want);
    }

    #[test]
    fn helper_counts_agree() {
        let mut base = arena();
        let slots: Vec<u32> = (0..6).map(|_| base.alloc()).collect();
        for (k, &s) in slots.iter().enumerate() {
            base.zero(s);
            let h = base.hits(k as u64 * 31 + 1);
            base.toggle_slots(&[s], k as u64 * 31 + 1, &h);
        }
        let tasks: Vec<SketchTask> = (0..40)
            .map(|k| SketchTask { dst: slots[k % 6], a: slots[(k * 7 + 1) % 6], b: if k % 3 == 0 { NIL } else { slots[(k + 2) % 6] } })
            .collect();
        let mut reference = base.clone();
        reference.execute(&tasks, 1);
        for h in [2, 4, 8] {
            let mut other = base.clone();
            other.execute(&tasks, h);
            for &s in &slots {
                assert_eq!(other.words(s), reference.words(s), "helpers={h}");
            }
        }
    }

    #[test]
    fn peak_tracks_high_water() {
        let mut a = arena();
        let x = a.alloc();
        let y = a.alloc();
        a.release(x);
        let z = a.alloc();
        assert_eq!(z, x);
        a.release(y);
        assert_eq!(a.live_slots(), 1);
        assert_eq!(a.peak_bytes(), 2 * a.slot_bytes());
    }

    #[test]
    fn run_plane_matches_naive_replay() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let (wpc, slots) = (6usize, 9u32);
        let mut plane: Vec<u64> = (0..wpc * slots as usize).map(|_| rng.gen()).collect();
        let mut naive = plane.clone();
        let pick = |rng: &mut rand_chacha::ChaCha8Rng| if rng.gen_bool(0.1) { NIL } else { rng.gen_range(0..slots) };
        let tasks: Vec<SketchTask> =
            (0..2000).map(|_| SketchTask { dst: rng.gen_range(0..slots), a: pick(&mut rng), b: pick(&mut rng) }).collect();
        run_plane(&mut plane, wpc, &tasks);
        let word = |p: &[u64], s: u32, k: usize| if s == NIL { 0 } else { p[s as usize * wpc + k] };
        for t in &tasks {
            for k in 0..wpc {
                let v = word(&naive, t.a, k) ^ word(&naive, t.b, k);
                naive[t.dst as usize * wpc + k] = v;
            }
        }
        assert_eq!(plane, naive);
    }
}
