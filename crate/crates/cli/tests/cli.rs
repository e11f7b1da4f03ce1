use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn kgsm(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kgsm"))
        .arg("--set")
        .arg(format!("output.dir={}", dir.display()))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn kgsm")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL: &[&str] = &[
    "--set",
    "data.synthetic.n_sites=6",
    "--set",
    "data.synthetic.n_timesteps=20",
    "--set",
    "data.synthetic.n_clusters=2",
];

fn simulate(dir: &Path, extra: &[&str]) -> PathBuf {
    let mut args = SMALL.to_vec();
    args.extend_from_slice(extra);
    args.push("simulate");
    let o = kgsm(dir, &args);
    assert!(o.status.success(), "{}", stderr(&o));
    dir.join("synthetic.csv")
}

#[test]
fn simulate_writes_expected_rows() {
    let dir = tempfile::tempdir().unwrap();
    let csv = simulate(dir.path(), &[]);
    let text = fs::read_to_string(csv).unwrap();
    assert_eq!(text.lines().count(), 1 + 6 * 20);
    let truth: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("truth.json")).unwrap()).unwrap();
    assert_eq!(truth["sites"].as_array().unwrap().len(), 6);
}

#[test]
fn simulate_is_seed_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = tempfile::tempdir().unwrap();
    let fa = fs::read(simulate(a.path(), &["--seed", "5"])).unwrap();
    let fb = fs::read(simulate(b.path(), &["--seed", "5"])).unwrap();
    let fc = fs::read(simulate(c.path(), &["--seed", "6"])).unwrap();
    assert_eq!(fa, fb);
    assert_ne!(fa, fc);
}

#[test]
fn invalid_config_names_key_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = kgsm(&out, &["--set", "data.synthetic.noise_db=-1", "simulate"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("data.synthetic.noise_db"), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn unknown_key_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "[training]\nwindw = 4\n").unwrap();
    let o = kgsm(dir.path(), &["--config", cfg.to_str().unwrap(), "simulate"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("training.windw"));
}

#[test]
fn config_file_and_override_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "[data.synthetic]\nn_sites = 3\nn_timesteps = 5\nn_clusters = 1\n").unwrap();
    let o = kgsm(
        dir.path(),
        &[
            "--config",
            cfg.to_str().unwrap(),
            "--set",
            "data.synthetic.n_timesteps=7",
            "simulate",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(dir.path().join("synthetic.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + 3 * 7);
}

#[test]
fn calibrate_recovers_linear_noise_free_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let csv = simulate(
        dir.path(),
        &[
            "--set",
            "data.synthetic.noise_db=0",
            "--set",
            "data.synthetic.nonlinear=false",
        ],
    );
    let o = kgsm(
        dir.path(),
        &["--set", &format!("data.csv={}", csv.display()), "calibrate"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let doc: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("calibration.json")).unwrap()).unwrap();
    for (key, truth) in [("a", 0.02), ("c", -25.0), ("d", 30.0)] {
        let got = doc[key].as_f64().unwrap();
        assert!(((got - truth) / truth).abs() < 0.01, "{key}: {got} vs {truth}");
    }
    for key in ["b", "theta_deg", "objective", "iterations", "converged"] {
        assert!(doc.get(key).is_some(), "missing {key}");
    }
}

#[test]
fn calibrate_without_reference_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let csv = simulate(dir.path(), &[]);
    let text = fs::read_to_string(&csv).unwrap();
    let mut stripped = String::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            stripped.push_str(line);
        } else {
            let (head, _) = line.rsplit_once(',').unwrap();
            stripped.push_str(head);
            stripped.push(',');
        }
        stripped.push('\n');
    }
    let unlabeled = dir.path().join("unlabeled.csv");
    fs::write(&unlabeled, stripped).unwrap();
    let out = dir.path().join("cal");
    let o = Command::new(env!("CARGO_BIN_EXE_kgsm"))
        .args(["--set", &format!("output.dir={}", out.display())])
        .args(["--set", &format!("data.csv={}", unlabeled.display()), "calibrate"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("sm_ref"));
    assert!(!out.join("calibration.json").exists());
}

#[test]
fn missing_input_file_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = kgsm(dir.path(), &["--set", "data.csv=/definitely/not/here.csv", "calibrate"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("data.csv"));
}

fn read_predictions(path: &Path) -> Vec<(String, String, f64)> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("site_id,timestamp,sm_pred"));
    lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].to_string(), f[1].to_string(), f[2].parse().unwrap())
        })
        .collect()
}

#[test]
fn train_then_predict_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let csv = simulate(dir.path(), &[]);
    let data = format!("data.csv={}", csv.display());
    let quick = [
        "--set",
        &data,
        "--set",
        "training.epochs=5",
        "--set",
        "training.hidden=6",
        "--set",
        "training.window=4",
    ];
    let mut args = quick.to_vec();
    args.push("train");
    let o = kgsm(dir.path(), &args);
    assert!(o.status.success(), "{}", stderr(&o));

    let log = fs::read_to_string(dir.path().join("training_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 6);
    let ckpt = dir.path().join("model.json");
    let pred_dir = dir.path().join("pred");
    let o = kgsm(
        &pred_dir,
        &["--set", &data, "predict", "--checkpoint", ckpt.to_str().unwrap()],
    );
    assert!(o.status.success(), "{}", stderr(&o));

    let preds = read_predictions(&pred_dir.join("predictions.csv"));
    let input = fs::read_to_string(&csv).unwrap();
    let keys: Vec<(String, String)> = input
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].to_string(), f[3].to_string())
        })
        .collect();
    assert_eq!(
        keys,
        preds.iter().map(|(s, t, _)| (s.clone(), t.clone())).collect::<Vec<_>>()
    );

    let train_preds = read_predictions(&dir.path().join("train_predictions.csv"));
    assert!(!train_preds.is_empty());
    for row in &train_preds {
        assert!(preds.contains(row), "{row:?} not reproduced");
    }
}

#[test]
fn checkpoint_version_mismatch_is_explicit() {
    let dir = tempfile::tempdir().unwrap();
    let csv = simulate(dir.path(), &[]);
    let data = format!("data.csv={}", csv.display());
    let o = kgsm(
        dir.path(),
        &[
            "--set",
            &data,
            "--set",
            "training.epochs=1",
            "--set",
            "training.hidden=2",
            "train",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let ckpt = dir.path().join("model.json");
    let mut doc: Value = serde_json::from_str(&fs::read_to_string(&ckpt).unwrap()).unwrap();
    doc["format"] = Value::String("kgsm-lstm-checkpoint/0".into());
    let old = dir.path().join("old.json");
    fs::write(&old, doc.to_string()).unwrap();
    let o = kgsm(
        dir.path(),
        &["--set", &data, "predict", "--checkpoint", old.to_str().unwrap()],
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("kgsm-lstm-checkpoint/0"), "{}", stderr(&o));
}

#[test]
fn missing_checkpoint_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = kgsm(dir.path(), &["predict", "--checkpoint", "/definitely/not/here.json"]);
    assert_eq!(o.status.code(), Some(3));
}

fn crossval(dir: &Path, seed: &str) -> Vec<u8> {
    let mut args = SMALL.to_vec();
    args.extend_from_slice(&[
        "--set",
        "cv.folds=2",
        "--set",
        "training.epochs=3",
        "--set",
        "training.hidden=4",
        "--seed",
        seed,
        "crossval",
    ]);
    let o = kgsm(dir, &args);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = String::from_utf8(o.stdout).unwrap();
    assert!(table.contains("kg_lstm") && table.contains("wcm"));
    fs::read(dir.join("report.json")).unwrap()
}

#[test]
fn crossval_reproducible_and_seed_sensitive() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = tempfile::tempdir().unwrap();
    let ra = crossval(a.path(), "3");
    assert_eq!(ra, crossval(b.path(), "3"));
    assert_ne!(ra, crossval(c.path(), "4"));

    let report: Value = serde_json::from_slice(&ra).unwrap();
    for method in ["wcm", "kg_lstm"] {
        for scope in ["fold0", "fold1", "pooled"] {
            let m = &report[method][scope];
            for key in ["rmse", "r", "bias", "n", "fitted_a"] {
                assert!(m.get(key).is_some(), "{method}.{scope}.{key}");
            }
        }
    }
    assert!(a.path().join("summary.txt").exists());
    assert!(a.path().join("scatter_fold1_kg_lstm.csv").exists());
}

fn leaf_keys(v: &toml::Value, out: &mut Vec<String>) {
    if let toml::Value::Table(t) = v {
        for (k, v) in t {
            if v.is_table() {
                leaf_keys(v, out);
            } else {
                out.push(k.clone());
            }
        }
    }
}

#[test]
fn help_documents_every_key() {
    let o = Command::new(env!("CARGO_BIN_EXE_kgsm")).arg("--help").output().unwrap();
    assert!(o.status.success());
    let help = String::from_utf8(o.stdout).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let shown = kgsm(dir.path(), &["config"]);
    assert!(shown.status.success());
    let defaults = String::from_utf8(shown.stdout).unwrap();
    let mut keys = Vec::new();
    leaf_keys(&toml::from_str::<toml::Value>(&defaults).unwrap(), &mut keys);
    keys.push("csv".into());
    for k in keys {
        assert!(
            help.lines().any(|l| l.split_whitespace().next() == Some(k.as_str())),
            "--help does not document `{k}`"
        );
    }
}
