use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn rigba(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rigba"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A short straight scene so solving stays quick.
fn small_config(dir: &Path) -> PathBuf {
    let path = dir.join("config.json");
    fs::write(
        &path,
        r#"{ "trajectory": "straight", "n_time_steps": 6, "n_landmarks": 200 }"#,
    )
    .unwrap();
    path
}

fn generate(dir: &Path, config: &Path, seed: u64, name: &str) -> PathBuf {
    let out = dir.join(name);
    let o = rigba(&["generate", "--config", arg(config), "--seed", &seed.to_string(), "--out", arg(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

#[test]
fn generate_is_deterministic_and_seed_dependent() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    let files = ["truth.rigba", "initial.rigba", "scene.json"];
    let a = generate(dir.path(), &config, 7, "a");
    let first: Vec<Vec<u8>> = files.iter().map(|f| fs::read(a.join(f)).unwrap()).collect();
    generate(dir.path(), &config, 7, "a");
    for (file, bytes) in files.iter().zip(&first) {
        assert_eq!(&fs::read(a.join(file)).unwrap(), bytes, "{file}");
    }
    let c = generate(dir.path(), &config, 8, "c");
    let count = |p: &Path, kind: &str| {
        fs::read_to_string(p)
            .unwrap()
            .lines()
            .filter(|l| l.starts_with(kind))
            .count()
    };
    for kind in ["IMAGE", "LANDMARK", "RIG_PAIR"] {
        assert_eq!(count(&a.join("truth.rigba"), kind), count(&c.join("truth.rigba"), kind));
    }
    let obs = |p: &Path| -> Vec<String> {
        fs::read_to_string(p.join("truth.rigba"))
            .unwrap()
            .lines()
            .filter(|l| l.starts_with("OBS"))
            .map(String::from)
            .collect()
    };
    assert_ne!(obs(&a), obs(&c));
}

#[test]
fn solve_and_evaluate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    let scene = generate(dir.path(), &config, 3, "scene");
    let initial = scene.join("initial.rigba");
    let truth = scene.join("truth.rigba");

    let mut solved = Vec::new();
    for mode in ["traditional", "constrained"] {
        let out = dir.path().join(mode);
        let o = rigba(&["solve", arg(&initial), "--config", arg(&config), "--mode", mode, "--out", arg(&out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        for file in ["solved.rigba", "trace.csv", "solve_report.json", "landmarks.ply"] {
            assert!(out.join(file).exists(), "{mode}: {file}");
        }
        let trace = fs::read_to_string(out.join("trace.csv")).unwrap();
        let header: Vec<&str> = trace.lines().next().unwrap().split(',').collect();
        let weight = header.iter().position(|h| *h == "weight").unwrap();
        let weights: Vec<f64> = trace
            .lines()
            .skip(1)
            .map(|l| l.split(',').nth(weight).unwrap().parse().unwrap())
            .collect();
        assert!(!weights.is_empty());
        if mode == "traditional" {
            assert!(weights.iter().all(|w| *w == 0.0));
        } else {
            assert!(weights.iter().any(|w| *w > 0.0));
        }
        solved.push(out.join("solved.rigba"));
    }

    let out = dir.path().join("eval");
    let o = rigba(&["eval", arg(&solved[1]), arg(&truth), "--baseline", arg(&solved[0]), "--out", arg(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert!(report["improvement_percent"].is_number());
    assert!(fs::read_to_string(out.join("report.csv")).unwrap().lines().count() == 2);

    let out = dir.path().join("self");
    let o = rigba(&["eval", arg(&truth), arg(&truth), "--out", arg(&out)]);
    assert!(o.status.success());
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    for key in ["mean_absolute_distance", "max_center_error", "max_rotation_error"] {
        assert!(report[key].as_f64().unwrap().abs() < 1e-9, "{key}");
    }
    assert!(report["endpoint_drift"]["norm"].as_f64().unwrap() < 1e-9);
}

#[test]
fn eval_names_missing_landmark() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    let scene = generate(dir.path(), &config, 1, "scene");
    let truth = fs::read_to_string(scene.join("truth.rigba")).unwrap();
    let pruned: String = truth
        .lines()
        .filter(|l| !l.starts_with("LANDMARK 5 ") && !(l.starts_with("OBS ") && l.split(' ').nth(2) == Some("5")))
        .map(|l| format!("{l}\n"))
        .collect();
    let pruned_path = dir.path().join("pruned.rigba");
    fs::write(&pruned_path, pruned).unwrap();
    let o = rigba(&["eval", arg(&scene.join("truth.rigba")), arg(&pruned_path), "--out", arg(&dir.path().join("e"))]);
    assert_eq!(o.status.code(), Some(5));
    assert!(String::from_utf8_lossy(&o.stderr).contains("landmark 5"));
}

#[test]
fn failures_have_distinct_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.rigba");
    assert_eq!(rigba(&["solve", arg(&missing)]).status.code(), Some(1));

    let bad = dir.path().join("bad.rigba");
    fs::write(&bad, "RIGBA 1\nIMAGE 0 0\n").unwrap();
    let o = rigba(&["solve", arg(&bad)]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));

    let config = dir.path().join("config.json");
    fs::write(&config, r#"{ "no_such_key": 1 }"#).unwrap();
    assert_eq!(rigba(&["generate", "--config", arg(&config)]).status.code(), Some(2));
    fs::write(&config, r#"{ "n_time_steps": 1 }"#).unwrap();
    assert_eq!(rigba(&["generate", "--config", arg(&config)]).status.code(), Some(2));
    assert_eq!(rigba(&["frobnicate"]).status.code(), Some(2));
}
