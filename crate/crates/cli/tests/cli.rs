use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn metatrip(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_metatrip")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(code(&metatrip(&[])), 1);
    assert_eq!(code(&metatrip(&["frobnicate"])), 1);
    assert_eq!(code(&metatrip(&["mine", "--target", "many"])), 1);
    assert_eq!(code(&metatrip(&["--help"])), 0);
}

#[test]
fn data_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "[miner]\ntau_min = 0.2\nbogus = 1\n").unwrap();
    let o = metatrip(&["--config", cfg.to_str().unwrap(), "run"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 3"));

    let out = dir.path().join("out");
    let o = metatrip(&["--out", out.to_str().unwrap(), "mine", "--train", "missing.jsonl"]);
    assert_eq!(code(&o), 2);
    let o = metatrip(&["score", "{\"entries\": 3}", "[]"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn score_prints_a_breakdown() {
    let o = metatrip(&[
        "score",
        r#"[{"disease":"pneumonia","adj":["mild"],"dir":["left"]},{"disease":"edema","adj":[],"dir":[]}]"#,
        r#"{"schema":1,"id":"x","entries":[{"disease":"pneumonia","adj":["mild","severe"],"dir":["right"]}]}"#,
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!((v["total"].as_f64().unwrap() - 0.45).abs() < 1e-12);
    assert_eq!(v["shared_diseases"][0]["disease"], "pneumonia");

    let o = metatrip(&["score", "--semantics", "intersection", "--gamma0", "0.85", "--gamma1", "0.1", "--gamma2", "0.05",
        r#"[{"disease":"pneumonia","adj":["mild"],"dir":["left"]},{"disease":"edema","adj":[],"dir":[]}]"#,
        r#"[{"disease":"pneumonia","adj":["mild","severe"],"dir":["right"]}]"#]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!((v["total"].as_f64().unwrap() - 0.45 / 0.95).abs() < 1e-12);
    let o = metatrip(&["score", "--gamma0", "0.5", "[]", "[]"]);
    assert_eq!(code(&o), 2);
}

fn read_dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = walk(dir).into_iter().map(|p| (p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap())).collect();
    files.sort();
    files
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    fs::read_dir(dir)
        .unwrap()
        .flat_map(|e| {
            let p = e.unwrap().path();
            if p.is_dir() { walk(&p) } else { vec![p] }
        })
        .collect()
}

#[test]
fn synth_is_deterministic_and_feeds_extract() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        let o = metatrip(&["--seed", "3", "--out", d.to_str().unwrap(), "synth", "--classes", "3", "--train-per-class", "5", "--heldout-per-class", "2"]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let (fa, fb) = (read_dir_bytes(&a), read_dir_bytes(&b));
    assert_eq!(fa, fb);
    assert_eq!(fs::read_to_string(a.join("train.jsonl")).unwrap().lines().count(), 15);
    assert_eq!(fs::read_to_string(a.join("heldout.jsonl")).unwrap().lines().count(), 6);

    let out = dir.path().join("run");
    let train = a.join("train.jsonl");
    let args = ["--out", out.to_str().unwrap(), "extract", "--train", train.to_str().unwrap()];
    assert_eq!(code(&metatrip(&args)), 0);
    let o = metatrip(&args);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stderr).contains("extract: skipped"));
    assert_eq!(fs::read_to_string(out.join("train.entities.jsonl")).unwrap().lines().count(), 16);
}
