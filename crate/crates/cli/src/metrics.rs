//! Run metrics emitted by `ingest`.

use serde::Serialize;

/// Bumped whenever a field is added, removed or renamed.
pub const SCHEMA_VERSION: u32 = 1;

/// Power-of-two latency buckets: bucket `i` counts samples in `[2^i, 2^(i+1))`
/// nanoseconds, with zero counted in bucket 0.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LatencyHistogram {
    pub count: u64,
    pub total_ns: u64,
    pub max_ns: u64,
    pub buckets: Vec<u64>,
}

impl LatencyHistogram {
    pub fn record(&mut self, ns: u64) {
        let b = (63 - ns.max(1).leading_zeros()) as usize;
        if self.buckets.len() <= b {
            self.buckets.resize(b + 1, 0);
        }
        self.buckets[b] += 1;
        self.count += 1;
        self.total_ns += ns;
        self.max_ns = self.max_ns.max(ns);
    }

    pub fn mean_ns(&self) -> f64 {
        if self.count == 0 { 0.0 } else { self.total_ns as f64 / self.count as f64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunMetrics {
    pub schema_version: u32,
    pub updates_per_second: f64,
    /// Query time includes the buffer flush each query forces.
    pub queries_per_second: f64,
    pub peak_memory_bytes: u64,
    pub isolated_update_count: u64,
    pub normal_update_count: u64,
    pub update_latency: LatencyHistogram,
    pub query_latency: LatencyHistogram,
}

impl RunMetrics {
    pub fn new(
        update_latency: LatencyHistogram,
        query_latency: LatencyHistogram,
        peak_memory_bytes: u64,
        isolated: u64,
        normal: u64,
    ) -> Self {
        let rate = |h: &LatencyHistogram| if h.total_ns == 0 { 0.0 } else { h.count as f64 * 1e9 / h.total_ns as f64 };
        RunMetrics {
            schema_version: SCHEMA_VERSION,
            updates_per_second: rate(&update_latency),
            queries_per_second: rate(&query_latency),
            peak_memory_bytes,
            isolated_update_count: isolated,
            normal_update_count: normal,
            update_latency,
            query_latency,
        }
    }
}
