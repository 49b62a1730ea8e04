//! ℓ0 sampler over F₂ vectors indexed by unordered vertex pairs.
//!
//! Every column holds `buckets_per_column` buckets of `(index_xor, checksum_xor)`.
//! An update touches exactly one bucket per column, chosen by a seeded geometric
//! depth. A query scans each column from the deepest bucket upward and returns
//! the first bucket whose checksum verifies.

use thiserror::Error;

/// Default number of columns.
pub const DEFAULT_COLUMNS: u32 = 7;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SketchError {
    #[error("invalid edge ({u}, {v}) for {n} vertices")]
    InvalidEdge { u: u64, v: u64, n: u64 },
    #[error("index {index} outside universe of size {universe}")]
    InvalidIndex { index: u64, universe: u64 },
    #[error("sketch configurations differ")]
    ConfigMismatch,
    #[error("invalid sketch configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("malformed sketch bytes: {0}")]
    Format(&'static str),
}

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Rank of an unordered vertex pair among all pairs `(a, b)` with `a < b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EdgeIndex(pub u64);

/// Number of unordered pairs over `n` vertices.
pub fn universe_for(n: u64) -> u64 {
    ((n as u128 * n.saturating_sub(1) as u128) / 2) as u64
}

#[inline]
fn row_start(a: u64, n: u64) -> u128 {
    let a = a as u128;
    a * n as u128 - a * (a + 1) / 2
}

pub fn encode_edge(u: u64, v: u64, n: u64) -> Result<EdgeIndex, SketchError> {
    if u == v || u >= n || v >= n {
        return Err(SketchError::InvalidEdge { u, v, n });
    }
    let (a, b) = if u < v { (u, v) } else { (v, u) };
    Ok(EdgeIndex((row_start(a, n) + (b - a - 1) as u128) as u64))
}

/// Inverse of [`encode_edge`]; returns the pair with the smaller id first.
pub fn decode_edge(idx: EdgeIndex, n: u64) -> Result<(u64, u64), SketchError> {
    let i = idx.0 as u128;
    if idx.0 >= universe_for(n) {
        return Err(SketchError::InvalidIndex { index: idx.0, universe: universe_for(n) });
    }
    // Largest a with row_start(a) <= i.
    let (mut lo, mut hi) = (0u64, n - 1);
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if row_start(mid, n) <= i {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let a = lo;
    let b = a + 1 + (i - row_start(a, n)) as u64;
    Ok((a, b))
}

fn ceil_log2(x: u64) -> u32 {
    if x <= 1 {
        0
    } else {
        64 - (x - 1).leading_zeros()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SketchConfig {
    pub universe_size: u64,
    pub num_columns: u32,
    pub buckets_per_column: u32,
    pub seed: u64,
}

impl SketchConfig {
    /// Config with the minimum legal bucket count for `universe_size`.
    pub fn new(universe_size: u64, num_columns: u32, seed: u64) -> Result<Self, SketchError> {
        let buckets = ceil_log2(universe_size.max(2)) + 1;
        Self::with_buckets(universe_size, num_columns, buckets, seed)
    }

    pub fn with_buckets(
        universe_size: u64,
        num_columns: u32,
        buckets_per_column: u32,
        seed: u64,
    ) -> Result<Self, SketchError> {
        if num_columns == 0 {
            return Err(SketchError::InvalidConfig("num_columns must be at least 1"));
        }
        if buckets_per_column < ceil_log2(universe_size.max(2)) + 1 || buckets_per_column > 64 {
            return Err(SketchError::InvalidConfig("buckets_per_column out of range"));
        }
        Ok(SketchConfig { universe_size, num_columns, buckets_per_column, seed })
    }

    /// Config for the edge universe of an `n`-vertex graph.
    pub fn for_vertices(n: u64, num_columns: u32, seed: u64) -> Result<Self, SketchError> {
        Self::new(universe_for(n), num_columns, seed)
    }

    /// Words occupied by one column: two per bucket.
    pub fn words_per_column(&self) -> usize {
        2 * self.buckets_per_column as usize
    }

    pub fn total_words(&self) -> usize {
        self.words_per_column() * self.num_columns as usize
    }

    pub fn hasher(&self) -> SketchHasher {
        SketchHasher::new(*self)
    }

    const BYTES: usize = 8 + 4 + 4 + 8;

    fn write_le(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.universe_size.to_le_bytes());
        out.extend_from_slice(&self.num_columns.to_le_bytes());
        out.extend_from_slice(&self.buckets_per_column.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
    }
}

/// Per-column bucket choice for one index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BucketHit {
    pub depth: u32,
    pub checksum: u64,
}

/// Seeded hash functions for a config, with per-column keys precomputed.
#[derive(Debug, Clone)]
pub struct SketchHasher {
    config: SketchConfig,
    depth_keys: Vec<u64>,
    check_keys: Vec<u64>,
}

impl SketchHasher {
    pub fn new(config: SketchConfig) -> Self {
        let cols = config.num_columns as u64;
        let depth_keys = (0..cols).map(|c| mix64(config.seed ^ mix64(2 * c + 1))).collect();
        let check_keys = (0..cols)
            .map(|c| mix64(config.seed.rotate_left(29) ^ mix64(2 * c + 2) ^ 0x5bd1_e995_7f4a_7c15))
            .collect();
        SketchHasher { config, depth_keys, check_keys }
    }

    pub fn config(&self) -> &SketchConfig {
        &self.config
    }

    #[inline]
    pub fn depth(&self, index: u64, column: usize) -> u32 {
        let h = mix64(index ^ self.depth_keys[column]);
        h.trailing_zeros().min(self.config.buckets_per_column - 1)
    }

    #[inline]
    pub fn checksum(&self, index: u64, column: usize) -> u64 {
        let k = self.check_keys[column];
        mix64(mix64(index ^ k).wrapping_add(k))
    }

    #[inline]
    pub fn hit(&self, index: u64, column: usize) -> BucketHit {
        BucketHit { depth: self.depth(index, column), checksum: self.checksum(index, column) }
    }

    pub fn check_index(&self, index: u64) -> Result<(), SketchError> {
        if index >= self.config.universe_size {
            return Err(SketchError::InvalidIndex { index, universe: self.config.universe_size });
        }
        Ok(())
    }

    /// Toggles `index` inside one column's words.
    #[inline]
    pub fn toggle_column(&self, column_words: &mut [u64], index: u64, hit: BucketHit) {
        let at = 2 * hit.depth as usize;
        column_words[at] ^= index;
        column_words[at + 1] ^= hit.checksum;
    }

    /// Scans one column from the deepest bucket to the shallowest.
    #[inline]
    pub fn query_column(&self, column_words: &[u64], column: usize) -> Option<u64> {
        for d in (0..self.config.buckets_per_column as usize).rev() {
            let (idx, chk) = (column_words[2 * d], column_words[2 * d + 1]);
            if idx == 0 && chk == 0 {
                continue;
            }
            if idx < self.config.universe_size && chk == self.checksum(idx, column) {
                return Some(idx);
            }
        }
        None
    }
}

/// An owned sketch. Words are stored column-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sketch {
    config: SketchConfig,
    words: Vec<u64>,
}

impl Sketch {
    pub fn zero(config: SketchConfig) -> Self {
        Sketch { config, words: vec![0; config.total_words()] }
    }

    pub fn from_words(config: SketchConfig, words: Vec<u64>) -> Result<Self, SketchError> {
        if words.len() != config.total_words() {
            return Err(SketchError::Format("word count does not match config"));
        }
        Ok(Sketch { config, words })
    }

    pub fn config(&self) -> &SketchConfig {
        &self.config
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn is_zero(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    /// Toggle with a freshly built hasher. Prefer [`Sketch::update_with`] in loops.
    pub fn update(&mut self, index: EdgeIndex) -> Result<(), SketchError> {
        let h = self.config.hasher();
        self.update_with(&h, index)
    }

    pub fn update_with(&mut self, h: &SketchHasher, index: EdgeIndex) -> Result<(), SketchError> {
        if *h.config() != self.config {
            return Err(SketchError::ConfigMismatch);
        }
        h.check_index(index.0)?;
        let wpc = self.config.words_per_column();
        for (c, col) in self.words.chunks_exact_mut(wpc).enumerate() {
            h.toggle_column(col, index.0, h.hit(index.0, c));
        }
        Ok(())
    }

    pub fn add(&mut self, other: &Sketch) -> Result<(), SketchError> {
        if other.config != self.config {
            return Err(SketchError::ConfigMismatch);
        }
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a ^= b;
        }
        Ok(())
    }

    pub fn query(&self) -> Option<EdgeIndex> {
        self.query_with(&self.config.hasher())
    }

    pub fn query_with(&self, h: &SketchHasher) -> Option<EdgeIndex> {
        let wpc = self.config.words_per_column();
        self.words
            .chunks_exact(wpc)
            .enumerate()
            .find_map(|(c, col)| h.query_column(col, c))
            .map(EdgeIndex)
    }

    /// Config fields, then bucket words column-major, all little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(SketchConfig::BYTES + 8 * self.words.len());
        self.config.write_le(&mut out);
        for w in &self.words {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, SketchError> {
        if bytes.len() < SketchConfig::BYTES {
            return Err(SketchError::Format("truncated config"));
        }
        let u64_at = |i: usize| u64::from_le_bytes(bytes[i..i + 8].try_into().unwrap());
        let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
        let config = SketchConfig::with_buckets(u64_at(0), u32_at(8), u32_at(12), u64_at(16))?;
        let body = &bytes[SketchConfig::BYTES..];
        if body.len() != 8 * config.total_words() {
            return Err(SketchError::Format("word count does not match config"));
        }
        let words = body.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(Sketch { config, words })
    }
}
