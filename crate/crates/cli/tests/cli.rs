use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

use dynconn::stream::{gnm_graph, random_update_stream, read_file, write_file, OpKind, StreamOp};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dynconn")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn edge_list(dir: &Path, name: &str, edges: &[(u32, u32)]) -> PathBuf {
    let p = dir.join(name);
    let body: String = edges.iter().map(|(a, b)| format!("{a} {b}\n")).collect();
    std::fs::write(&p, format!("# test graph\n{body}")).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gen(dir: &Path, kind: &str, edges: &Path, extra: &[&str]) -> PathBuf {
    let out = dir.join(format!("{kind}-{}.bin", extra.join("")));
    let mut args = vec!["gen", "--kind", kind, "--input", s(edges), "--out", s(&out)];
    args.extend_from_slice(extra);
    let o = run(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

const K3: [(u32, u32); 3] = [(0, 1), (1, 2), (0, 2)];

#[test]
fn gen_standard_on_triangle() {
    let dir = TempDir::new().unwrap();
    let k3 = edge_list(dir.path(), "k3.txt", &K3);
    let (header, ops) = read_file(&gen(dir.path(), "standard", &k3, &[])).unwrap();
    assert_eq!(header.vertex_count, 3);
    assert_eq!(ops.len(), 6);
    assert_eq!(ops.iter().filter(|o| o.kind == OpKind::Insert).count(), 3);
    let (_, with_queries) = read_file(&gen(dir.path(), "standard", &k3, &["--queries"])).unwrap();
    assert_eq!(with_queries.iter().filter(|o| o.is_update()).count(), 6);
}

#[test]
fn gen_fixed_forest_on_triangle() {
    let dir = TempDir::new().unwrap();
    let k3 = edge_list(dir.path(), "k3.txt", &K3);
    let out = gen(dir.path(), "fixed-forest", &k3, &["--repeats", "20"]);
    let (_, ops) = read_file(&out).unwrap();
    assert_eq!(ops.len(), 42);
    let o = run(&["verify", s(&out), "--legal-only"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("PASS"));
}

#[test]
fn generated_streams_are_legal() {
    let dir = TempDir::new().unwrap();
    let g = edge_list(dir.path(), "g.txt", &gnm_graph(50, 200, 3));
    for kind in ["standard", "fixed-forest"] {
        let out = gen(dir.path(), kind, &g, &["--queries", "--seed", "4", "--repeats", "3"]);
        let o = run(&["verify", s(&out), "--legal-only"]);
        assert!(o.status.success(), "{kind}: {}", stdout(&o));
    }
}

#[test]
fn gen_rejects_bad_input() {
    let dir = TempDir::new().unwrap();
    let bad = edge_list(dir.path(), "loop.txt", &[(1, 1)]);
    let o = run(&["gen", "--kind", "standard", "--input", s(&bad), "--out", s(&dir.path().join("x"))]);
    assert!(!o.status.success());
    let o = run(&["gen", "--kind", "standard", "--input", s(&dir.path().join("missing")), "--out", "x"]);
    assert!(!o.status.success());
}

fn write_ops(dir: &Path, name: &str, n: u64, ops: &[StreamOp]) -> PathBuf {
    let p = dir.join(name);
    write_file(&p, n, ops).unwrap();
    p
}

fn answers(dir: &Path, stream: &Path, mode: &str) -> String {
    let out = dir.join(format!("answers-{mode}.txt"));
    let o = run(&["ingest", s(stream), "--mode", mode, "--buffer", "16", "--answers-out", s(&out), "--metrics-out", s(&dir.join("m.json"))]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    std::fs::read_to_string(out).unwrap()
}

#[test]
fn ingest_modes_give_identical_answers() {
    let dir = TempDir::new().unwrap();
    let stream = write_ops(dir.path(), "tiny.bin", 20, &random_update_stream(20, 400, 20, 0.2, 5));
    let seq = answers(dir.path(), &stream, "sequential");
    assert!(!seq.is_empty());
    assert_eq!(seq, answers(dir.path(), &stream, "buffered"));
    assert_eq!(seq, answers(dir.path(), &stream, "parallel"));
}

fn metrics(dir: &Path, stream: &Path) -> Value {
    let out = dir.join("metrics.json");
    let o = run(&["ingest", s(stream), "--metrics-out", s(&out), "--seed", "3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_str(&std::fs::read_to_string(out).unwrap()).unwrap()
}

fn schema(v: &Value, prefix: &str, out: &mut Vec<String>) {
    if let Value::Object(map) = v {
        for (k, x) in map {
            let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
            match x {
                Value::Object(_) => schema(x, &path, out),
                Value::Array(_) => out.push(format!("{path}: array")),
                Value::Number(_) => out.push(format!("{path}: number")),
                Value::String(_) => out.push(format!("{path}: string")),
                Value::Bool(_) => out.push(format!("{path}: bool")),
                Value::Null => out.push(format!("{path}: null")),
            }
        }
    }
}

#[test]
fn metrics_match_golden_schema() {
    let dir = TempDir::new().unwrap();
    let ops = random_update_stream(30, 500, 30, 0.1, 6);
    let stream = write_ops(dir.path(), "s.bin", 30, &ops);
    let m = metrics(dir.path(), &stream);
    let mut keys = Vec::new();
    schema(&m, "", &mut keys);
    keys.sort();
    let golden = include_str!("golden/metrics_schema.txt");
    assert_eq!(keys, golden.lines().collect::<Vec<_>>());
    let updates = ops.iter().filter(|o| o.is_update()).count() as u64;
    assert_eq!(m["isolated_update_count"].as_u64().unwrap() + m["normal_update_count"].as_u64().unwrap(), updates);
    assert_eq!(m["update_latency"]["count"].as_u64().unwrap(), updates);
    assert_eq!(m["schema_version"], 1);
    assert!(m["peak_memory_bytes"].as_u64().unwrap() > 0);
}

#[test]
fn dense_streams_isolate_fewer_updates() {
    let dir = TempDir::new().unwrap();
    let frac = |m: usize, name: &str| {
        let g = edge_list(dir.path(), name, &gnm_graph(64, m, 7));
        let stream = gen(dir.path(), "standard", &g, &["--seed", name]);
        let v = metrics(dir.path(), &stream);
        let iso = v["isolated_update_count"].as_f64().unwrap();
        iso / (iso + v["normal_update_count"].as_f64().unwrap())
    };
    let (dense, sparse) = (frac(1500, "1"), frac(80, "2"));
    assert!(dense * 3.0 < sparse, "dense {dense}, sparse {sparse}");
}

#[test]
fn ingest_aborts_on_illegal_stream() {
    let dir = TempDir::new().unwrap();
    let ops = [StreamOp::insert(0, 1), StreamOp::insert(1, 2), StreamOp::query(0, 2), StreamOp::delete(2, 3)];
    let stream = write_ops(dir.path(), "bad.bin", 5, &ops);
    let o = run(&["ingest", s(&stream)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("op 3"));
    let o = run(&["verify", s(&stream)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("illegal stream: op 3"));
}

#[test]
fn verify_generated_stream_is_clean() {
    let dir = TempDir::new().unwrap();
    let stream = write_ops(dir.path(), "v.bin", 64, &random_update_stream(64, 3000, 64, 0.1, 8));
    for mode in ["sequential", "parallel", "buffered"] {
        let o = run(&["verify", s(&stream), "--mode", mode]);
        let out = stdout(&o);
        assert!(o.status.success(), "{mode}: {out}");
        assert!(out.contains("mismatches: 0"));
    }
}

#[test]
fn verify_with_invariant_checks_is_clean() {
    let dir = TempDir::new().unwrap();
    let stream = write_ops(dir.path(), "c.bin", 32, &random_update_stream(32, 1000, 32, 0.1, 9));
    let o = run(&["verify", s(&stream), "--check-invariants", "--workers", "3"]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(stdout(&o).contains("invariant violations: 0"));
}

#[test]
fn injected_faults_are_reported() {
    let dir = TempDir::new().unwrap();
    let path: Vec<StreamOp> = (0..15).map(|v| StreamOp::insert(v, v + 1)).collect();
    let stream = write_ops(dir.path(), "p.bin", 16, &path);
    let o = run(&["verify", s(&stream), "--inject-fault", "sever"]);
    let out = stdout(&o);
    assert_eq!(o.status.code(), Some(1), "{out}");
    assert!(!out.contains("mismatches: 0"), "{out}");
    let o = run(&["verify", s(&stream), "--inject-fault", "drop-level"]);
    let out = stdout(&o);
    assert_eq!(o.status.code(), Some(1), "{out}");
    assert!(!out.contains("invariant violations: 0"), "{out}");
}

#[test]
fn verify_guards_large_streams() {
    let dir = TempDir::new().unwrap();
    let stream = write_ops(dir.path(), "big.bin", 5000, &[StreamOp::insert(0, 4999), StreamOp::query(0, 4999)]);
    let o = run(&["verify", s(&stream)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--force"));
    let o = run(&["verify", s(&stream), "--force"]);
    assert!(o.status.success(), "{}", stdout(&o));
}
