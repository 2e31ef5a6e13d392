use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn ktree(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ktree"))
        .args(args)
        .env_remove("KTREE_STEP")
        .env_remove("KTREE_EPS")
        .env_remove("KTREE_FLOOR")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = ktree(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn path_str(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).display().to_string()
}

fn tree_mass(t: &Value) -> f64 {
    let tops: f64 = t["tops"]
        .as_object()
        .unwrap()
        .values()
        .map(|v| v.as_f64().unwrap())
        .sum();
    let edges: f64 = t["edges"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| {
            e["blocks"]
                .as_array()
                .unwrap()
                .iter()
                .map(|b| b.as_f64().unwrap())
                .sum::<f64>()
                + e["dust"].as_f64().unwrap()
        })
        .sum();
    tops + edges
}

#[test]
fn one_tree_has_the_documented_json() {
    assert_eq!(
        ok(&["sample-tree", "--k", "1", "--mass", "2.5"]),
        "{\"labels\":[1],\"shape\":[],\"tops\":{\"1\":2.5},\"edges\":[]}\n"
    );
}

#[test]
fn sampled_three_tree_has_unit_mass() {
    for seed in ["1", "2", "3"] {
        let out = ok(&["sample-tree", "--k", "3", "--mass", "1", "--seed", seed]);
        let t: Value = serde_json::from_str(&out).unwrap();
        assert_eq!(t["labels"], serde_json::json!([1, 2, 3]));
        assert_eq!(t["shape"].as_array().unwrap().len(), 2);
        assert!((tree_mass(&t) - 1.0).abs() < 1e-12);
    }
}

#[test]
fn same_seed_gives_identical_files() {
    let dir = TempDir::new().unwrap();
    let (a, b) = (path_str(&dir, "a.json"), path_str(&dir, "b.json"));
    ok(&["sample-tree", "--k", "4", "--seed", "9", "--out", &a]);
    ok(&["sample-tree", "--k", "4", "--seed", "9", "--out", &b]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let m = read_json(&dir.path().join("a.json.manifest.json"));
    assert_eq!(m["command"], "sample-tree");
}

#[test]
fn killed_run_ends_at_its_first_event() {
    let dir = TempDir::new().unwrap();
    let out = path_str(&dir, "killed.json");
    ok(&[
        "evolve",
        "--mode",
        "killed",
        "--k",
        "3",
        "--horizon",
        "inf",
        "--seed",
        "5",
        "--pdip-blocks",
        "100",
        "--out",
        &out,
    ]);
    let t = read_json(Path::new(&out));
    assert_eq!(t["terminal"], "degenerated");
    let events = t["events"].as_array().unwrap();
    assert_eq!(events.len(), 1);
    assert_eq!(events[0]["t"], t["end_time"]);
    assert!(dir.path().join("killed.csv").exists());
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| {
            // the shape column is quoted and comes last
            let (head, shape) = l.split_once(",\"").unwrap_or((l, ""));
            let mut cols: Vec<String> = head.split(',').map(String::from).collect();
            cols.push(shape.trim_end_matches('"').to_string());
            cols
        })
        .collect()
}

fn label_sets(rows: &[Vec<String>]) -> Vec<Vec<u32>> {
    rows.iter()
        .map(|r| {
            r[2].split_whitespace()
                .map(|x| x.parse().unwrap())
                .collect()
        })
        .collect()
}

#[test]
fn nonresampling_label_set_shrinks() {
    let dir = TempDir::new().unwrap();
    let out = path_str(&dir, "nr.json");
    let record: Vec<String> = (1..60).map(|i| format!("{}", i as f64 * 0.05)).collect();
    ok(&[
        "evolve",
        "--mode",
        "nonresampling",
        "--k",
        "4",
        "--horizon",
        "3",
        "--seed",
        "2",
        "--pdip-blocks",
        "100",
        "--floor",
        "0",
        "--record",
        &record.join(","),
        "--out",
        &out,
    ]);
    let t = read_json(Path::new(&out));
    assert!(!t["events"].as_array().unwrap().is_empty());
    let sets = label_sets(&csv_rows(&dir.path().join("nr.csv")));
    assert!(sets.len() >= 2);
    for w in sets.windows(2) {
        assert!(
            w[1].iter().all(|x| w[0].contains(x)),
            "{:?} -> {:?}",
            w[0],
            w[1]
        );
    }
}

#[test]
fn resampling_keeps_every_label() {
    let dir = TempDir::new().unwrap();
    let out = path_str(&dir, "rs.json");
    ok(&[
        "evolve",
        "--mode",
        "resampling",
        "--k",
        "3",
        "--horizon",
        "2",
        "--seed",
        "3",
        "--pdip-blocks",
        "100",
        "--record",
        "0.25,0.5,0.75,1,1.25,1.5,1.75",
        "--out",
        &out,
    ]);
    let rows = csv_rows(&dir.path().join("rs.csv"));
    let t = read_json(Path::new(&out));
    let kept = if t["terminal"] == "mass_floor" {
        rows.len() - 1
    } else {
        rows.len()
    };
    for s in &label_sets(&rows)[..kept] {
        assert_eq!(s, &[1, 2, 3]);
    }
}

#[test]
fn invalid_initial_tree_is_rejected_with_the_reason() {
    let dir = TempDir::new().unwrap();
    let init = dir.path().join("bad.json");
    std::fs::write(
        &init,
        r#"{"labels":[1,2],"shape":[[1,2]],"tops":{"1":0.0,"2":0.0},"edges":[{"labels":[1,2],"blocks":[0.5],"dust":0.0}]}"#,
    )
    .unwrap();
    let out = ktree(&[
        "evolve",
        "--mode",
        "killed",
        "--init",
        init.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("two zero tops"), "{err}");
}

#[test]
fn projection_to_one_label_keeps_the_mass() {
    let dir = TempDir::new().unwrap();
    let two = path_str(&dir, "two.json");
    ok(&[
        "sample-tree",
        "--k",
        "2",
        "--mass",
        "3",
        "--seed",
        "8",
        "--out",
        &two,
    ]);
    let one: Value = serde_json::from_str(&ok(&["project", "--in", &two, "--to-k", "1"])).unwrap();
    assert_eq!(one["labels"], serde_json::json!([1]));
    assert_eq!(one["edges"], serde_json::json!([]));
    assert!((one["tops"]["1"].as_f64().unwrap() - 3.0).abs() < 1e-12);
}

#[test]
fn projections_compose_at_file_level() {
    let dir = TempDir::new().unwrap();
    let four = path_str(&dir, "four.json");
    ok(&[
        "sample-tree",
        "--k",
        "4",
        "--seed",
        "11",
        "--pdip-blocks",
        "50",
        "--out",
        &four,
    ]);
    let step = path_str(&dir, "step.json");
    let twice = path_str(&dir, "twice.json");
    let direct = path_str(&dir, "direct.json");
    ok(&["project", "--in", &four, "--drop", "4", "--out", &step]);
    ok(&["project", "--in", &step, "--drop", "3", "--out", &twice]);
    ok(&["project", "--in", &four, "--to-k", "2", "--out", &direct]);
    assert_eq!(
        std::fs::read(&twice).unwrap(),
        std::fs::read(&direct).unwrap()
    );
}

#[test]
fn projection_above_the_largest_label_is_the_identity() {
    let dir = TempDir::new().unwrap();
    let three = path_str(&dir, "three.json");
    let same = path_str(&dir, "same.json");
    ok(&["sample-tree", "--k", "3", "--seed", "12", "--out", &three]);
    ok(&["project", "--in", &three, "--to-k", "7", "--out", &same]);
    assert_eq!(
        std::fs::read(&three).unwrap(),
        std::fs::read(&same).unwrap()
    );
}

#[test]
fn dropping_the_last_label_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let one = path_str(&dir, "one.json");
    ok(&["sample-tree", "--k", "1", "--out", &one]);
    assert_eq!(
        ktree(&["project", "--in", &one, "--drop", "1"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn projected_trajectory_keeps_the_mass_column() {
    let dir = TempDir::new().unwrap();
    let run = path_str(&dir, "run.json");
    let proj = path_str(&dir, "proj.json");
    ok(&[
        "evolve",
        "--mode",
        "resampling",
        "--k",
        "3",
        "--horizon",
        "0.3",
        "--seed",
        "4",
        "--pdip-blocks",
        "100",
        "--record",
        "0.1,0.2",
        "--out",
        &run,
    ]);
    ok(&["project", "--in", &run, "--to-k", "2", "--out", &proj]);
    let (a, b) = (read_json(Path::new(&run)), read_json(Path::new(&proj)));
    assert_eq!(b["manifest"]["command"], "project");
    let states_a = a["states"].as_array().unwrap();
    let states_b = b["states"].as_array().unwrap();
    assert_eq!(states_a.len(), states_b.len());
    for (x, y) in states_a.iter().zip(states_b) {
        assert_eq!(y["tree"]["labels"], serde_json::json!([1, 2]));
        let (ma, mb) = (tree_mass(&x["tree"]), tree_mass(&y["tree"]));
        assert!((ma - mb).abs() < 1e-12 * ma.max(1.0));
    }
}

#[test]
fn env_defaults_are_recorded_and_flags_win() {
    let dir = TempDir::new().unwrap();
    let out = path_str(&dir, "env.json");
    let status = Command::new(env!("CARGO_BIN_EXE_ktree"))
        .args([
            "evolve",
            "--mode",
            "killed",
            "--k",
            "2",
            "--horizon",
            "0.05",
            "--pdip-blocks",
            "50",
            "--eps",
            "0.001",
            "--out",
            &out,
        ])
        .env("KTREE_STEP", "0.02")
        .env("KTREE_EPS", "0.5")
        .env_remove("KTREE_FLOOR")
        .status()
        .unwrap();
    assert!(status.success());
    let m = &read_json(Path::new(&out))["manifest"];
    assert_eq!(m["config"]["step"], 0.02);
    assert_eq!(m["config"]["eps"], 0.001);
    assert_eq!(m["sources"]["step"], "env");
    assert_eq!(m["sources"]["eps"], "flag");
    assert_eq!(m["sources"]["floor"], "default");
}

#[test]
fn replay_reproduces_the_file() {
    let dir = TempDir::new().unwrap();
    let out = path_str(&dir, "orig.json");
    let status = Command::new(env!("CARGO_BIN_EXE_ktree"))
        .args([
            "evolve",
            "--mode",
            "resampling",
            "--k",
            "3",
            "--horizon",
            "0.4",
            "--seed",
            "6",
            "--pdip-blocks",
            "80",
            "--record",
            "0.2",
            "--record-u",
            "0.05",
            "--out",
            &out,
        ])
        .env("KTREE_STEP", "0.02")
        .status()
        .unwrap();
    assert!(status.success());
    let before = std::fs::read_to_string(&out).unwrap();
    let csv_before = std::fs::read_to_string(dir.path().join("orig.csv")).unwrap();
    // replayed without KTREE_STEP set; the manifest restores it
    ok(&["replay", &out]);
    assert!(std::fs::read_to_string(&out).unwrap() == before);
    assert!(std::fs::read_to_string(dir.path().join("orig.csv")).unwrap() == csv_before);
}

#[test]
fn verify_dropped_label_reports_the_targets() {
    let out = ok(&[
        "verify",
        "--suite",
        "dropped_label",
        "--k",
        "3",
        "--N",
        "10000",
    ]);
    let r: Value = serde_json::from_str(out.lines().next().unwrap()).unwrap();
    assert_eq!(r["suite"], "dropped_label");
    assert_eq!(r["pass"], true);
    let targets: Vec<f64> = r["checks"]
        .as_array()
        .unwrap()
        .iter()
        .filter_map(|c| c["target"].as_f64())
        .collect();
    for want in [2.0 / 9.0, 7.0 / 9.0] {
        assert!(
            targets.iter().any(|t| (t - want).abs() < 1e-12),
            "{targets:?}"
        );
    }
}

#[test]
fn verify_survival_targets_one_eighth() {
    let out = ok(&[
        "verify", "--suite", "survival", "--k", "3", "--gamma", "1", "--y", "0.5", "--N", "2000",
    ]);
    let r: Value = serde_json::from_str(out.trim()).unwrap();
    assert_eq!(r["checks"][0]["target"], 0.125);
}

#[test]
fn verify_exit_codes() {
    assert_eq!(
        ktree(&["verify", "--suite", "no_such_suite"]).status.code(),
        Some(2)
    );
    assert_eq!(
        ktree(&["verify", "--suite", "combinatorics"]).status.code(),
        Some(0)
    );
    assert_eq!(ktree(&["sample-tree", "--k", "x"]).status.code(), Some(2));
}
