use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn plmr(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_plmr"))
        .args(args)
        .current_dir(cwd)
        .env_remove("PLMR_SEED")
        .output()
        .unwrap()
}

fn ok(args: &[&str], cwd: &Path) -> Output {
    let out = plmr(args, cwd);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn files(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_file() {
            out.insert(
                path.strip_prefix(dir).unwrap().to_path_buf(),
                fs::read(&path).unwrap(),
            );
        }
    }
    out
}

fn simulated(cwd: &Path, extra: &[&str]) {
    let mut args = vec![
        "simulate",
        "--seed",
        "7",
        "--students",
        "80",
        "--homeworks",
        "6",
        "--out",
        ".",
    ];
    args.extend_from_slice(extra);
    ok(&args, cwd);
}

#[test]
fn simulate_smoke_writes_artifacts_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    ok(
        &[
            "simulate",
            "--seed",
            "7",
            "--students",
            "200",
            "--homeworks",
            "6",
            "--out",
            "sim",
        ],
        dir.path(),
    );
    let sim = dir.path().join("sim");
    for name in [
        "events.jsonl",
        "catalog.json",
        "truth.csv",
        "planted.json",
        "manifest.json",
    ] {
        assert!(sim.join(name).is_file(), "{name} missing");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(sim.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["config"]["students"], 200);
    assert_eq!(manifest["outputs"].as_array().unwrap().len(), 4);
    assert_eq!(manifest["version"], env!("CARGO_PKG_VERSION"));
}

#[test]
fn evaluate_smoke_prints_metrics_json() {
    let dir = tempfile::tempdir().unwrap();
    simulated(dir.path(), &[]);
    let out = ok(
        &[
            "evaluate",
            "--protocol",
            "previous_hw",
            "--target",
            "4",
            "--model",
            "plmr",
            "--l",
            "5",
            "--out",
            "eval",
        ],
        dir.path(),
    );
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["target"], 4);
    assert_eq!(report["model"], "plmr(l=5,gamma=0.0001)");
    assert!(report["rmse"].as_f64().unwrap() > 0.0);
    let files = files(&dir.path().join("eval"));
    assert!(files.contains_key(Path::new("metrics.json")));
    assert!(files.contains_key(Path::new("metrics.csv")));
    assert!(files.contains_key(Path::new("manifest.json")));
}

#[test]
fn usage_errors_exit_one_with_usage_text() {
    let dir = tempfile::tempdir().unwrap();
    let out = plmr(&["evaluate", "--no-such-flag"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    let out = plmr(&["evaluate", "--protocol", "sideways"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn data_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = plmr(&["evaluate", "--log", "missing.jsonl"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    simulated(dir.path(), &[]);
    let out = plmr(
        &["evaluate", "--protocol", "previous_one_hw", "--target", "1"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    let out = plmr(
        &["evaluate", "--model", "ktidem", "--target", "3"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2), "kt-idem needs binary grades");
}

#[test]
fn divergence_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    simulated(dir.path(), &[]);
    fs::write(
        dir.path().join("wild.toml"),
        "[train]\nstep = { fixed = 10000.0 }\n",
    )
    .unwrap();
    let out = plmr(
        &[
            "train",
            "--config",
            "wild.toml",
            "--target",
            "3",
            "--out",
            "t",
        ],
        dir.path(),
    );
    assert_eq!(
        out.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn seed_precedence_flag_env_file() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("sim.toml"), "seed = 5\nstudents = 30\n").unwrap();
    let seed_of = |out: &str| -> u64 {
        let m: serde_json::Value = serde_json::from_str(
            &fs::read_to_string(dir.path().join(out).join("manifest.json")).unwrap(),
        )
        .unwrap();
        m["seed"].as_u64().unwrap()
    };
    ok(
        &["simulate", "--config", "sim.toml", "--out", "a"],
        dir.path(),
    );
    assert_eq!(seed_of("a"), 5);
    let status = Command::new(env!("CARGO_BIN_EXE_plmr"))
        .args(["simulate", "--config", "sim.toml", "--out", "b"])
        .current_dir(dir.path())
        .env("PLMR_SEED", "6")
        .status()
        .unwrap();
    assert!(status.success());
    assert_eq!(seed_of("b"), 6);
    let status = Command::new(env!("CARGO_BIN_EXE_plmr"))
        .args([
            "simulate", "--config", "sim.toml", "--seed", "8", "--out", "c",
        ])
        .current_dir(dir.path())
        .env("PLMR_SEED", "6")
        .status()
        .unwrap();
    assert!(status.success());
    assert_eq!(seed_of("c"), 8);
    let m: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("c/manifest.json")).unwrap())
            .unwrap();
    assert_eq!(m["config"]["students"], 30);
}

#[test]
fn ablate_importance_sweep_and_featurize_run() {
    let dir = tempfile::tempdir().unwrap();
    simulated(dir.path(), &["--grading", "binary"]);
    ok(&["featurize", "--out", "f"], dir.path());
    let csv = fs::read_to_string(dir.path().join("f/features.csv")).unwrap();
    assert!(csv.lines().next().unwrap().contains("NumSession"));

    let out = ok(
        &[
            "ablate",
            "--target",
            "3",
            "--remove-group",
            "quiz",
            "--remove-group",
            "video",
            "--out",
            "a",
        ],
        dir.path(),
    );
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["removed"].as_array().unwrap().len(), 2);

    let out = ok(&["importance", "--target", "4", "--out", "i"], dir.path());
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["features"].as_array().unwrap().len(), 20);

    ok(
        &[
            "sweep",
            "--protocol",
            "previous_one_hw",
            "--models",
            "plmr,meanscore,ktidem",
            "--ls",
            "1,2",
            "--loss",
            "logistic",
            "--jobs",
            "2",
            "--out",
            "s",
        ],
        dir.path(),
    );
    let table = fs::read_to_string(dir.path().join("s/table_accuracy.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 1 + 5 + 1);
    assert!(lines[0].contains("kt-idem"));
    assert!(lines.last().unwrap().starts_with("Avg"));
}
