use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ordibench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ordibench"))
        .args(args)
        .env_remove("ORDIBENCH_JOBS")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, name: &str, shape: [&str; 2]) -> std::path::PathBuf {
    let p = dir.join(name);
    let args = ["synth", "--identities", shape[0], "--per-identity", shape[1], "--dim", "16", "--seed", "7", "-o", path_str(&p)];
    let out = ordibench(&args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    p
}

#[test]
fn synth_writes_rows_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let a = synth(dir.path(), "a.csv", ["50", "4"]);
    let b = synth(dir.path(), "b.csv", ["50", "4"]);
    let text = fs::read_to_string(&a).unwrap();
    assert_eq!(text.lines().count(), 201);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn synth_rejects_zero_identities() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("d.csv");
    let out = ordibench(&["synth", "--identities", "0", "-o", path_str(&p)]);
    assert_eq!(code(&out), 2);
    assert!(!p.exists());
}

#[test]
fn se_splits_pass_audit_and_rs_splits_leak() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "d.csv", ["50", "4"]);
    for (mode, sub) in [("se", "se"), ("rs", "rs")] {
        let out_dir = dir.path().join(sub);
        let out = ordibench(&[
            "split", "--dataset", path_str(&data), "--mode", mode, "--fractions", "0.6,0.2,0.2", "--n", "5", "-o",
            path_str(&out_dir),
        ]);
        assert_eq!(code(&out), 0);
    }
    for i in 0..5 {
        let split = dir.path().join("se").join(format!("split{i}.json"));
        let out = ordibench(&["audit", "--split", path_str(&split), "--dataset", path_str(&data)]);
        assert_eq!(code(&out), 0, "{}", stdout(&out));
        assert!(stdout(&out).contains("identity overlap: train/val=0 train/test=0 val/test=0"));
    }
    let leaking = (0..5)
        .filter(|i| {
            let split = dir.path().join("rs").join(format!("split{i}.json"));
            code(&ordibench(&["audit", "--split", path_str(&split), "--dataset", path_str(&data)])) == 1
        })
        .count();
    assert!(leaking >= 4, "only {leaking} random splits leaked");
}

#[test]
fn split_without_dataset_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = ordibench(&["split", "--mode", "se", "-o", path_str(dir.path())]);
    assert_eq!(code(&out), 2);
    let missing = dir.path().join("missing.csv");
    let out = ordibench(&["split", "--dataset", path_str(&missing), "-o", path_str(dir.path())]);
    assert_eq!(code(&out), 2);
}

#[test]
fn audit_flags_planted_overlap_and_unknown_ids() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "d.csv", ["4", "2"]);
    let planted = r#"{"mode":"random","seed":0,"fractions":[0.5,0.25,0.25],
        "train":["id0000-000","id0001-000","id0001-001","id0002-000"],
        "val":["id0000-001","id0003-000"],
        "test":["id0002-001","id0003-001"]}"#;
    let split = dir.path().join("planted.json");
    fs::write(&split, planted).unwrap();
    let json = dir.path().join("audit.json");
    let out = ordibench(&["audit", "--split", path_str(&split), "--dataset", path_str(&data), "--json", path_str(&json)]);
    assert_eq!(code(&out), 1);
    assert!(stdout(&out).contains("leaked identities: id0000,id0002,id0003"));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(report["leaked_identities"].as_array().unwrap().len(), 3);

    let bogus = planted.replace("id0003-001", "nobody");
    fs::write(&split, bogus).unwrap();
    let out = ordibench(&["audit", "--split", path_str(&split), "--dataset", path_str(&data)]);
    assert_eq!(code(&out), 2);
}

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let p = dir.join("config.json");
    fs::write(&p, body).unwrap();
    p
}

const SMALL_RUN: &str = r#"{
  "datasets": [{"name": "syn", "synth": {"dimension": 6, "seed": 3}}],
  "split": {"mode": "subject-exclusive", "n_splits": 2},
  "methods": [{"family": "cross-entropy"}, {"family": "sord", "sigma": 1.5}],
  "train": {"epochs": 4, "hidden_dims": [8]},
  "output_dir": "out"
}"#;

#[test]
fn run_writes_records_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_RUN);
    let out = ordibench(&["run", path_str(&cfg)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let runs = fs::read(dir.path().join("out/runs.csv")).unwrap();
    let text = String::from_utf8(runs.clone()).unwrap();
    assert_eq!(text.lines().next().unwrap(), "dataset,method,split,seed,val_mae,test_mae,selected_epoch,wall_time");
    assert_eq!(text.lines().count(), 5);
    for f in ["mae_matrix.csv", "mae_std.csv", "mae_matrix_splits.csv", "rank_report.txt", "rank_report.json", "splits/syn_split1.json"] {
        assert!(dir.path().join("out").join(f).exists(), "{f} missing");
    }

    let again = dir.path().join("again");
    let out = ordibench(&["run", path_str(&cfg), "--output-dir", path_str(&again), "--jobs", "1"]);
    assert_eq!(code(&out), 0);
    assert_eq!(fs::read(dir.path().join("again/runs.csv")).unwrap(), runs);
    assert_eq!(
        fs::read(dir.path().join("again/mae_matrix.csv")).unwrap(),
        fs::read(dir.path().join("out/mae_matrix.csv")).unwrap()
    );
}

#[test]
fn run_lays_out_cross_dataset_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{
          "datasets": [{"name": "a", "synth": {"dimension": 6, "seed": 1}}, {"name": "b", "synth": {"dimension": 6, "seed": 2}}],
          "held_out": [{"name": "c", "synth": {"dimension": 6, "seed": 4}}],
          "split": {"n_splits": 2},
          "methods": [{"family": "cross-entropy"}, {"family": "dldl"}],
          "train": {"epochs": 2, "hidden_dims": [8]}
        }"#,
    );
    let out_dir = dir.path().join("out");
    let out = ordibench(&["run", path_str(&cfg), "-o", path_str(&out_dir)]);
    assert_eq!(code(&out), 0);
    let matrix = fs::read_to_string(dir.path().join("out/mae_matrix.csv")).unwrap();
    let rows: Vec<&str> = matrix.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(rows, ["a", "a->c", "b", "b->c"]);
}

#[test]
fn run_reports_failed_cells_and_continues() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &SMALL_RUN.replace(r#""epochs": 4"#, r#""epochs": 4, "learning_rate": 1e300"#));
    let out = ordibench(&["run", path_str(&cfg)]);
    assert_eq!(code(&out), 1);
    let failures: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/failures.json")).unwrap()).unwrap();
    assert!(!failures.as_array().unwrap().is_empty());
    assert!(dir.path().join("out/runs.csv").exists());
}

#[test]
fn run_rejects_invalid_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"datasets": [], "methods": [{"family": "coral"}]}"#);
    assert_eq!(code(&ordibench(&["run", path_str(&cfg)])), 2);
    let cfg = write_config(dir.path(), r#"{"datasets": [{"name": "a", "synth": {}}], "methods": [{"family": "nope"}]}"#);
    assert_eq!(code(&ordibench(&["run", path_str(&cfg)])), 2);
}

#[test]
fn compare_forced_ranking_and_ties() {
    let dir = tempfile::tempdir().unwrap();
    let forced = dir.path().join("forced.csv");
    fs::write(&forced, "dataset,a,b,c\nd1,1,2,3\nd2,1,2,3\nd3,1,2,3\nd4,1,2,3\n").unwrap();
    let json = dir.path().join("forced.json");
    let out = ordibench(&["compare", path_str(&forced), "--json", path_str(&json)]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    assert!(text.contains("# alpha=0.05"));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(&json).unwrap()).unwrap();
    assert!((report["friedman_chi2"].as_f64().unwrap() - 8.0).abs() < 1e-12);
    assert_eq!(report["cd_diagram"].as_array().unwrap().len(), 3);

    let tied = dir.path().join("tied.csv");
    fs::write(&tied, "dataset,a,b,c\nd1,2,2,2\nd2,5,5,5\nd3,1,1,1\n").unwrap();
    let out = ordibench(&["compare", path_str(&tied)]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    assert!(text.contains("# p=1\n"), "{text}");
    assert!(text.contains("# significant_pairs=\n"), "{text}");
}

#[test]
fn compare_rejects_malformed_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "dataset,a,b\nd1,1\n").unwrap();
    assert_eq!(code(&ordibench(&["compare", path_str(&bad)])), 2);
}

#[test]
fn leakage_demo_reports_pairs_and_gap() {
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("leak.json");
    let out = ordibench(&["leakage-demo", "--seeds", "5", "--epochs", "5", "--json", path_str(&json)]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    assert!(text.contains("seed,rs_mae,se_mae,gap"));
    assert!(text.contains("# mean_gap="));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(report["pairs"].as_array().unwrap().len(), 5);
    assert!(report["std_gap"].is_number());
}
