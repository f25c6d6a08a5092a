//! CLI acceptance: the full mock pipeline is byte-deterministic, the demo
//! trajectory matches its golden run, and exit codes classify failures.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pathforge"))
}

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../pathforge/fixtures")
        .join(name)
}

fn run_ok(args: &[&str]) -> String {
    let output = bin().args(args).output().expect("spawn pathforge");
    assert!(
        output.status.success(),
        "pathforge {args:?} failed:\n{}\n{}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
    String::from_utf8_lossy(&output.stdout).to_string()
}

/// One full mock pipeline pass into `dir`; returns the produced files.
fn run_pipeline(dir: &Path) -> Vec<PathBuf> {
    let graph = fixture("toy_graph.json");
    let graph = graph.to_str().unwrap();
    let path_of = |name: &str| dir.join(name);
    let s = |p: &PathBuf| p.to_str().unwrap().to_string();

    let anchored = path_of("anchored.jsonl");
    run_ok(&[
        "anchor", "--graph", graph,
        "--extraction", fixture("extraction_fig.json").to_str().unwrap(),
        "--out", &s(&anchored), "--mock",
    ]);
    let paths = path_of("paths.jsonl");
    run_ok(&["paths", "--graph", graph, "--anchored", &s(&anchored), "--out", &s(&paths), "--mock"]);
    let triplets = path_of("triplets.jsonl");
    run_ok(&[
        "synth", "--graph", graph, "--anchored", &s(&anchored), "--paths", &s(&paths),
        "--out", &s(&triplets), "--case-id", "case-7", "--mock",
    ]);
    let kept = path_of("kept.jsonl");
    let dropped = path_of("dropped.jsonl");
    run_ok(&[
        "filter", "--input", &s(&triplets), "--kept", &s(&kept), "--dropped", &s(&dropped), "--mock",
    ]);
    let sft = path_of("sft.jsonl");
    run_ok(&["augment", "--input", &s(&kept), "--out", &s(&sft), "--mock"]);

    // Pair the kept triplets into prediction / ground-truth records.
    let mut pred_lines = String::new();
    let mut gt_lines = String::new();
    for line in std::fs::read_to_string(&kept).unwrap().lines() {
        let t: serde_json::Value = serde_json::from_str(line).unwrap();
        let chain = t["chain"].as_str().unwrap();
        let answer = t["answer"].as_str().unwrap();
        let response =
            format!("<observe> {chain} </observe> <think> Hence: {answer}. </think> <answer> {answer} </answer>");
        pred_lines.push_str(&serde_json::json!({ "response": response }).to_string());
        pred_lines.push('\n');
        let entities: Vec<&str> = t["entities"]
            .as_array()
            .unwrap()
            .iter()
            .filter_map(|e| e["node_id"].as_str())
            .collect();
        gt_lines.push_str(&serde_json::json!({ "answer": answer, "entities": entities }).to_string());
        gt_lines.push('\n');
    }
    let pred = path_of("pred.jsonl");
    let gt = path_of("gt.jsonl");
    std::fs::write(&pred, pred_lines).unwrap();
    std::fs::write(&gt, gt_lines).unwrap();
    let rewards = path_of("rewards.jsonl");
    run_ok(&[
        "reward", "--pred", &s(&pred), "--gt", &s(&gt), "--graph", graph,
        "--out", &s(&rewards), "--mock",
    ]);
    vec![anchored, paths, triplets, kept, dropped, sft, rewards]
}

#[test]
fn criterion_12_end_to_end_mock_determinism() {
    let started = Instant::now();
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let files_a = run_pipeline(dir_a.path());
    let files_b = run_pipeline(dir_b.path());
    assert_eq!(files_a.len(), files_b.len());
    for (a, b) in files_a.iter().zip(&files_b) {
        let bytes_a = std::fs::read(a).unwrap();
        let bytes_b = std::fs::read(b).unwrap();
        assert!(!bytes_a.is_empty() || a.file_name() == b.file_name());
        assert_eq!(
            bytes_a,
            bytes_b,
            "outputs diverge for {:?}",
            a.file_name().unwrap()
        );
    }
    // The pipeline produced real content: one kept triplet, ten SFT samples.
    let kept = std::fs::read_to_string(dir_a.path().join("kept.jsonl")).unwrap();
    assert_eq!(kept.lines().count(), 1);
    let sft = std::fs::read_to_string(dir_a.path().join("sft.jsonl")).unwrap();
    assert_eq!(sft.lines().count(), 10);
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 60.0, "pipeline took {elapsed:?}");
    println!("criterion 12 (end-to-end mock determinism, {elapsed:?}): PASS");
}

#[test]
fn grpo_demo_matches_golden_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("traj.csv");
    let stdout = run_ok(&[
        "grpo-demo", "--seed", "7", "--iters", "200",
        "--out", out.to_str().unwrap(), "--mock",
    ]);
    let got = std::fs::read_to_string(&out).unwrap();
    let golden = std::fs::read_to_string(
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/golden_grpo_seed7_iters200.csv"),
    )
    .unwrap();
    assert_eq!(got, golden, "trajectory diverged from the golden run");
    let last = got.lines().last().unwrap();
    let mean: f64 = last.split(',').nth(1).unwrap().parse().unwrap();
    assert!((mean - 2.4).abs() <= 0.05 * 2.4, "final mean {mean}");
    assert!(stdout.contains("final mean reward"));
    println!("grpo-demo golden trajectory: PASS");
}

#[test]
fn kg_stats_match_hand_counts() {
    let stdout = run_ok(&["kg", "stats", fixture("toy_graph.json").to_str().unwrap()]);
    let stats: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(stats["total_nodes"], 9);
    assert_eq!(stats["total_edges"], 8);
    assert_eq!(stats["relation_count"], 10);
    assert_eq!(stats["nodes_by_kind"]["PhysicalEntity"], 4);
    assert_eq!(stats["nodes_by_kind"]["Phenotype"], 3);
    assert_eq!(stats["nodes_by_kind"]["Diagnosis"], 2);

    let stdout = run_ok(&["kg", "stats", fixture("six_nodes.json").to_str().unwrap()]);
    let stats: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(stats["total_nodes"], 6);
    assert_eq!(stats["total_edges"], 7);
    println!("kg stats hand counts: PASS");
}

#[test]
fn kg_build_and_prune_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let fused = dir.path().join("fused.json");
    run_ok(&[
        "kg", "build",
        "--graph-a", fixture("graph_a.json").to_str().unwrap(),
        "--graph-b", fixture("graph_b.json").to_str().unwrap(),
        "--out", fused.to_str().unwrap(),
        "--mock",
    ]);
    let stdout = run_ok(&["kg", "stats", fused.to_str().unwrap()]);
    let stats: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    // One exact-id pair collapses (the scripted-similarity pairs need the
    // test embedder, so only the shared MONDO id aligns here).
    assert_eq!(stats["total_nodes"], 9);
    let pruned = dir.path().join("pruned.json");
    run_ok(&["kg", "prune", fused.to_str().unwrap(), "--out", pruned.to_str().unwrap()]);
    let stdout = run_ok(&["kg", "stats", pruned.to_str().unwrap()]);
    let stats: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert!(stats["total_nodes"].as_u64().unwrap() <= 9);
}

#[test]
fn validation_errors_exit_one() {
    let output = bin()
        .args(["kg", "stats", "/nonexistent/graph.json"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"reward": {"alpha": 1.0, "beta": 7.0, "epsilon": 1e-8}}"#).unwrap();
    let output = bin()
        .args([
            "--config", cfg.to_str().unwrap(),
            "kg", "stats", fixture("toy_graph.json").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("reward.beta"), "stderr: {stderr}");
}

#[test]
fn service_failures_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("live.json");
    std::fs::write(
        &cfg,
        r#"{"services":{"judge":{"endpoint":"http://127.0.0.1:1/never","model_name":"m","timeout_secs":1,"max_inflight":1}}}"#,
    )
    .unwrap();
    let pred = dir.path().join("pred.jsonl");
    let gt = dir.path().join("gt.jsonl");
    std::fs::write(&pred, "{\"response\":\"<observe> a </observe> <think> b </think> <answer> c </answer>\"}\n").unwrap();
    std::fs::write(&gt, "{\"answer\":\"c\",\"entities\":[]}\n").unwrap();
    let out = dir.path().join("rewards.jsonl");
    let output = bin()
        .args([
            "--config", cfg.to_str().unwrap(),
            "reward",
            "--pred", pred.to_str().unwrap(),
            "--gt", gt.to_str().unwrap(),
            "--graph", fixture("toy_graph.json").to_str().unwrap(),
            "--out", out.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2), "stderr: {}", String::from_utf8_lossy(&output.stderr));
}
