use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use fdia_core::harness::{ExperimentConfig, ATTACK_EVAL_HEADER};

fn lab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fdia-lab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

/// A case14 config small enough to run every stage in a second or two.
fn small_config(dir: &Path) -> String {
    let mut cfg = ExperimentConfig::for_case("case14").unwrap();
    cfg.dataset.count = 500;
    cfg.detector.hidden = vec![16, 8];
    cfg.detector.epochs = 3;
    cfg.detector.batch_size = 32;
    cfg.attacks.iterations = Some(3);
    cfg.attacks.population = Some(4);
    cfg.defense.paddings = vec![2];
    cfg.out = dir.join("runs").display().to_string();
    let path = dir.join("config.json");
    fs::write(&path, cfg.to_json()).unwrap();
    path.display().to_string()
}

#[test]
fn every_stage_runs_and_writes_the_output_tree() {
    let tmp = tempfile::tempdir().unwrap();
    let config = small_config(tmp.path());
    for args in [
        vec!["gen"],
        vec!["train"],
        vec!["train", "--padding", "2"],
        vec!["attack"],
        vec!["embed"],
        vec!["report"],
    ] {
        let mut full = args.clone();
        full.extend(["--config", &config]);
        let out = lab(&full);
        assert_eq!(code(&out), 0, "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let case = tmp.path().join("runs/case14");
    for file in [
        "dataset/train.csv",
        "dataset/val.csv",
        "dataset/test.csv",
        "dataset/manifest.json",
        "models/model_p0.json",
        "models/model_p2.json",
        "curves/loss_p0.csv",
        "curves/loss_p2.csv",
        "eval/attack_eval.csv",
        "embed/embedding.csv",
        "report.json",
    ] {
        assert!(case.join(file).is_file(), "missing {file}");
    }
    let eval = fs::read_to_string(case.join("eval/attack_eval.csv")).unwrap();
    assert_eq!(eval.lines().next().unwrap(), ATTACK_EVAL_HEADER);
    // 4 strategies x 3 k values x 2 padding sizes
    assert_eq!(eval.lines().count(), 1 + 24);
    let curve = fs::read_to_string(case.join("curves/loss_p2.csv")).unwrap();
    assert_eq!(curve.lines().next().unwrap(), "epoch,train_loss,val_loss,val_accuracy");
    let train = fs::read_to_string(case.join("dataset/train.csv")).unwrap();
    assert!(train.starts_with("meter_0,"));
    assert_eq!(train.lines().count(), 1 + 400);
}

#[test]
fn same_seed_reproduces_bytes() {
    let tmp = tempfile::tempdir().unwrap();
    let config = small_config(tmp.path());
    let mut runs = Vec::new();
    for name in ["a", "b"] {
        let out_dir = tmp.path().join(name);
        let out_dir = out_dir.to_str().unwrap();
        for stage in [&["gen"][..], &["train"], &["train", "--padding", "2"], &["attack"]] {
            let mut args = stage.to_vec();
            args.extend(["--config", &config, "--out", out_dir]);
            let out = lab(&args);
            assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        }
        runs.push(tmp.path().join(name).join("case14"));
    }
    for file in [
        "dataset/train.csv",
        "dataset/test.csv",
        "models/model_p0.json",
        "models/model_p2.json",
        "eval/attack_eval.csv",
    ] {
        assert_eq!(
            fs::read(runs[0].join(file)).unwrap(),
            fs::read(runs[1].join(file)).unwrap(),
            "{file} differs"
        );
    }
    let other = tmp.path().join("c");
    lab(&["gen", "--config", &config, "--out", other.to_str().unwrap(), "--seed", "99"]);
    assert_ne!(
        fs::read(runs[0].join("dataset/train.csv")).unwrap(),
        fs::read(other.join("case14/dataset/train.csv")).unwrap()
    );
}

#[test]
fn usage_and_config_errors_exit_1() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&lab(&["bogus"])), 1);
    assert_eq!(code(&lab(&["gen", "--seed", "abc"])), 1);
    assert_eq!(code(&lab(&["gen", "--case", "case9"])), 1);
    assert_eq!(code(&lab(&["attack", "--padding", "2"])), 1);

    let bad = tmp.path().join("bad.json");
    fs::write(&bad, r#"{"case": "case14", "surprise": true}"#).unwrap();
    let out = lab(&["gen", "--config", bad.to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    assert!(!out.stderr.is_empty());

    let missing = tmp.path().join("nope.json");
    assert_eq!(code(&lab(&["gen", "--config", missing.to_str().unwrap()])), 1);
    assert_eq!(code(&lab(&["--help"])), 0);
}

#[test]
fn runtime_failures_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let config = small_config(tmp.path());
    // No dataset has been generated yet.
    let out = lab(&["train", "--config", &config]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing"));

    lab(&["gen", "--config", &config]);
    lab(&["train", "--config", &config]);
    lab(&["train", "--config", &config, "--padding", "2"]);
    lab(&["attack", "--config", &config]);
    let cells = tmp.path().join("runs/case14/eval/cells");
    fs::remove_file(cells.join("iterative_gaussian_k8_eps0.5_p0.json")).unwrap();
    let out = lab(&["report", "--config", &config]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("iterative_gaussian_k8_eps0.5_p0"));
}
