use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

/// Small corpus and a one-epoch tiny encoder so every command runs in seconds.
const SMALL: &[&str] = &[
    "synth.n_subjects=4",
    "synth.clips_per_subject=2",
    "synth.frame_size=40",
    "synth.n_frames=90",
    "split.test_fraction=0.25",
    "model.clip_len=8",
    "model.frame_size=16",
    "train.batch_size=2",
    "train.epochs=1",
    "train.mlp_dim=8",
    "eval.head_epochs=20",
    "eval.finetune_epochs=1",
    "eval.finetune_batch_size=2",
];

fn rppg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rppg"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn run_small(command: &str, out: &Path, extra: &[String]) -> Output {
    let mut args: Vec<String> = vec![command.into(), "--out".into(), out.display().to_string()];
    for s in SMALL.iter().map(|s| s.to_string()).chain(extra.iter().cloned()) {
        args.push("--set".into());
        args.push(s);
    }
    rppg(&args.iter().map(String::as_str).collect::<Vec<_>>())
}

fn assert_ok(output: &Output) {
    assert!(output.status.success(), "stderr: {}", String::from_utf8_lossy(&output.stderr));
}

fn code(output: &Output) -> i32 {
    output.status.code().expect("exited normally")
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                files.insert(path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    files
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn synth_writes_labels_and_clips_reproducibly() {
    let tmp = TempDir::new().unwrap();
    let a = tmp.path().join("a");
    assert_ok(&run_small("synth", &a, &[]));
    let labels = fs::read_to_string(a.join("labels.csv")).unwrap();
    assert_eq!(labels.lines().next(), Some("subject_id,clip_id,hr_bpm"));
    assert_eq!(labels.lines().count(), 1 + 8);
    assert!(a.join("subject000/c000/frames.bin").exists());

    // Re-running from the snapshot alone is bit-exact.
    let b = tmp.path().join("b");
    let snapshot = a.join("resolved.cfg").display().to_string();
    assert_ok(&rppg(&["synth", "--config", &snapshot, "--out", b.to_str().unwrap()]));
    assert_eq!(tree(&a), tree(&b));
}

#[test]
fn shipped_configs_resolve() {
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let tmp = TempDir::new().unwrap();
    for name in ["synthetic", "mahnob", "ubfc", "vipl"] {
        let path = configs.join(format!("{name}.cfg"));
        let out = tmp.path().join(name);
        // An unreadable predictions file is a data error raised after the config resolved.
        let output = rppg(&[
            "evaluate",
            "--config",
            path.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--predictions",
            "/nonexistent.csv",
        ]);
        assert_eq!(code(&output), 3, "{name}: {}", String::from_utf8_lossy(&output.stderr));
        assert!(out.join("resolved.cfg").exists());
    }
}

#[test]
fn evaluate_hand_written_predictions() {
    let tmp = TempDir::new().unwrap();
    let csv = tmp.path().join("pred.csv");
    fs::write(&csv, "clip_id,pred_bpm,true_bpm\na,72,70\nb,78,80\nc,90,85\n").unwrap();
    let out = tmp.path().join("eval");
    assert_ok(&rppg(&["evaluate", "--out", out.to_str().unwrap(), "--predictions", csv.to_str().unwrap()]));
    let metrics = json(&out.join("metrics.json"));
    assert!((metrics["mae"].as_f64().unwrap() - 3.0).abs() < 1e-12);
    assert!((metrics["rmse"].as_f64().unwrap() - (33.0f64 / 3.0).sqrt()).abs() < 1e-12);
    assert_eq!(metrics["n"], 3);
    assert!(out.join("resolved.cfg").exists());
}

#[test]
fn exit_codes() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("x");
    let out_s = out.to_str().unwrap();
    assert_eq!(code(&rppg(&["synth", "--out", out_s, "--set", "train.temperature=1"])), 2);
    assert_eq!(code(&rppg(&["synth", "--out", out_s, "--set", "train.strides=1,6"])), 2);
    assert_eq!(code(&rppg(&["synth", "--out", out_s, "--set", "train.batch_size=1"])), 2);
    assert_eq!(code(&rppg(&["bogus"])), 2);
    assert_eq!(code(&rppg(&["synth"])), 2);

    let missing = tmp.path().join("missing");
    let set = format!("data.dir={}", missing.display());
    assert_eq!(code(&run_small("linear-eval", &out, &[set])), 3);

    let csv = tmp.path().join("bad.csv");
    fs::write(&csv, "clip,pred,truth\na,1,2\n").unwrap();
    assert_eq!(code(&rppg(&["evaluate", "--out", out_s, "--predictions", csv.to_str().unwrap()])), 3);

    let output = run_small("pretrain", &out, &["train.lr=1e30".into()]);
    assert_eq!(code(&output), 4, "{}", String::from_utf8_lossy(&output.stderr));
    assert!(String::from_utf8_lossy(&output.stderr).contains("diverged"));
}

#[test]
fn pretrain_then_evaluate_on_a_stored_dataset() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    assert_ok(&run_small("synth", &data, &[]));
    let before = tree(&data);
    let data_set = format!("data.dir={}", data.display());

    let pre = tmp.path().join("pre");
    assert_ok(&run_small("pretrain", &pre, &[data_set.clone()]));
    let log = fs::read_to_string(pre.join("training_log.csv")).unwrap();
    assert_eq!(log.lines().next(), Some("step,l_contrastive,l_roi,l_stride,l_total,lr,wall_time_s"));
    assert!(pre.join("checkpoint.bin").exists());
    assert!(json(&pre.join("pseudo_label_accuracy.json"))["roi"].is_number());

    let ckpt = format!("model.checkpoint={}", pre.join("checkpoint.bin").display());
    let lin = tmp.path().join("linear");
    assert_ok(&run_small("linear-eval", &lin, &[data_set.clone(), ckpt.clone()]));
    let metrics = json(&lin.join("metrics.json"));
    for key in ["sd", "mae", "rmse", "r", "n"] {
        assert!(metrics.get(key).is_some(), "{key} missing");
    }
    assert_eq!(metrics["n"], 2);
    let predictions = fs::read_to_string(lin.join("predictions.csv")).unwrap();
    assert_eq!(predictions.lines().next(), Some("clip_id,pred_bpm,true_bpm"));
    assert_eq!(predictions.lines().count(), 3);

    let audit = json(&lin.join("audit.json"));
    let subjects = |key: &str| -> Vec<String> {
        audit[key].as_array().unwrap().iter().map(|v| v.as_str().unwrap().to_string()).collect()
    };
    let test_subjects = subjects("test_subjects");
    assert_eq!(test_subjects.len(), 1);
    for clip in subjects("train_clips") {
        assert!(!test_subjects.iter().any(|s| clip.starts_with(&format!("{s}/"))), "{clip}");
    }

    // Re-running from the snapshot reproduces the metrics exactly.
    let again = tmp.path().join("again");
    let snapshot = lin.join("resolved.cfg").display().to_string();
    assert_ok(&rppg(&["linear-eval", "--config", &snapshot, "--out", again.to_str().unwrap()]));
    assert_eq!(json(&again.join("metrics.json")), metrics);

    let ft = tmp.path().join("finetune");
    assert_ok(&run_small("finetune", &ft, &[data_set, ckpt]));
    assert!(json(&ft.join("metrics.json"))["mae"].is_number());

    assert_eq!(tree(&data), before, "input dataset was modified");

    let report = tmp.path().join("report");
    let output = rppg(&[
        "report",
        "--out",
        report.to_str().unwrap(),
        lin.to_str().unwrap(),
        ft.to_str().unwrap(),
    ]);
    assert_ok(&output);
    let table = fs::read_to_string(report.join("report.txt")).unwrap();
    assert!(table.contains("linear") && table.contains("finetune"));
    assert!(fs::read_to_string(report.join("report.svg")).unwrap().starts_with("<svg"));
}

#[test]
fn finetune_without_checkpoint_uses_a_random_encoder() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("ft");
    assert_ok(&run_small("finetune", &out, &[]));
    let snapshot = fs::read_to_string(out.join("resolved.cfg")).unwrap();
    assert!(snapshot.contains("model.checkpoint = \n"));
    assert!(snapshot.contains("train.epochs = 1\n"));
}
