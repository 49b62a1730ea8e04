use proptest::prelude::*;
use tempfile::TempDir;

use dynconn::engine::{ConnectivityEngine, EngineConfig, Mode};
use dynconn::oracle::{RebuildUnionFind, ShadowGraph};
use dynconn::stream::{
    check_legal, gen_fixed_forest_stream, gen_standard_stream, gnm_graph, interleave_queries, random_update_stream,
    read_file, write_file, OpKind, StreamOp,
};

fn engine(n: u32, mode: Mode, seed: u64, buffer: usize) -> ConnectivityEngine {
    let mut cfg = EngineConfig::new(n).with_mode(mode).with_seed(seed);
    cfg.buffer_capacity = buffer;
    ConnectivityEngine::new(cfg).unwrap()
}

/// Turns arbitrary vertex pairs into a legal stream: a pair toggles its edge,
/// and every third pair is a query instead.
fn legalize(n: u32, pairs: &[(u32, u32, bool)]) -> Vec<StreamOp> {
    let mut g = ShadowGraph::new(n);
    pairs
        .iter()
        .filter(|(u, v, _)| u != v)
        .map(|&(u, v, query)| {
            if query {
                StreamOp::query(u, v)
            } else if g.contains(u, v) {
                g.delete(u, v).unwrap();
                StreamOp::delete(u, v)
            } else {
                g.insert(u, v).unwrap();
                StreamOp::insert(u, v)
            }
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn engine_matches_oracle(
        n in 2u32..14,
        raw in prop::collection::vec((0u32..14, 0u32..14, prop::bool::weighted(0.3)), 1..120),
        seed in 0u64..1000,
        mode in prop::sample::select(vec![Mode::Sequential, Mode::Parallel, Mode::BufferedParallel]),
        buffer in 1usize..10,
    ) {
        let pairs: Vec<_> = raw.into_iter().map(|(u, v, q)| (u % n, v % n, q)).collect();
        let ops = legalize(n, &pairs);
        let mut e = engine(n, mode, seed, buffer);
        let mut g = ShadowGraph::new(n);
        for op in &ops {
            g.apply(op).unwrap();
            match op.kind {
                OpKind::Query => prop_assert_eq!(e.query(op.u, op.v).unwrap(), g.connected(op.u, op.v)),
                kind => e.update(op.u, op.v, kind == OpKind::Delete).unwrap(),
            }
        }
        let report = e.check_invariants().unwrap();
        prop_assert!(report.is_clean(), "{:?}", report.violations);
        let labels = g.components();
        for u in 0..n {
            prop_assert_eq!(e.query(u, labels[u as usize]).unwrap(), true);
        }
    }
}

#[test]
fn file_round_trip_drives_engine() {
    let dir = TempDir::new().unwrap();
    let n = 40;
    let ops = interleave_queries(&gen_fixed_forest_stream(n, &gnm_graph(n, 150, 1), 3, 2), n, 3);
    check_legal(&ops, n as u64).unwrap();
    let path = dir.path().join("s.bin");
    write_file(&path, n as u64, &ops).unwrap();
    let (header, back) = read_file(&path).unwrap();
    assert_eq!(header.vertex_count, n as u64);
    assert_eq!(back, ops);

    let mut e = engine(n, Mode::BufferedParallel, 4, 64);
    let mut uf = RebuildUnionFind::new(n);
    for op in &back {
        uf.apply(op).unwrap();
        match op.kind {
            OpKind::Query => assert_eq!(e.query(op.u, op.v).unwrap(), uf.connected(op.u, op.v)),
            kind => e.update(op.u, op.v, kind == OpKind::Delete).unwrap(),
        }
    }
    // The forest is never deleted, so only its insertions can be isolated.
    let s = e.stats();
    assert_eq!(s.isolated_updates + s.normal_updates, back.iter().filter(|o| o.is_update()).count() as u64);
}

#[test]
fn standard_stream_ends_empty() {
    let n = 30;
    let ops = gen_standard_stream(&gnm_graph(n, 120, 5), 6);
    let mut e = engine(n, Mode::Parallel, 7, 1);
    for op in &ops {
        e.update(op.u, op.v, op.kind == OpKind::Delete).unwrap();
    }
    assert!(e.forest_edges().is_empty());
    assert!(e.check_invariants().unwrap().is_clean());
    for v in 1..n {
        assert!(!e.query(0, v).unwrap());
    }
    let fresh = engine(n, Mode::Parallel, 7, 1).serialize().unwrap();
    assert_eq!(e.serialize().unwrap(), fresh);
}

#[test]
fn seeds_change_state_but_not_answers() {
    let n = 25;
    let ops = random_update_stream(n, 800, 30, 0.2, 8);
    let run = |seed| {
        let mut e = engine(n, Mode::Parallel, seed, 1);
        let answers: Vec<bool> = ops
            .iter()
            .filter_map(|op| match op.kind {
                OpKind::Query => Some(e.query(op.u, op.v).unwrap()),
                kind => {
                    e.update(op.u, op.v, kind == OpKind::Delete).unwrap();
                    None
                }
            })
            .collect();
        (answers, e.serialize().unwrap())
    };
    let (a1, s1) = run(1);
    let (a2, s2) = run(2);
    let (a1b, s1b) = run(1);
    assert_eq!(a1, a2);
    assert_ne!(s1, s2);
    assert_eq!((a1, s1), (a1b, s1b));
}
