use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use ia1_cli::pipeline::RunManifest;

fn ia1(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ia1"))
        .args(args)
        .env("IA1_THREADS", "1")
        .output()
        .expect("spawn ia1")
}

fn ok(args: &[&str]) -> String {
    let out = ia1(args);
    assert!(
        out.status.success(),
        "ia1 {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn demo_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/desk_demo")
}

/// Copies the demo inputs (not any previous run) into `dst`.
fn copy_demo(dst: &Path) {
    for entry in std::fs::read_dir(demo_dir()).unwrap() {
        let entry = entry.unwrap();
        if entry.file_type().unwrap().is_file() {
            std::fs::copy(entry.path(), dst.join(entry.file_name())).unwrap();
        }
    }
}

#[test]
fn desk_demo_pipeline_runs_and_reruns_identically() {
    let tmp = tempfile::tempdir().unwrap();
    copy_demo(tmp.path());
    let config = tmp.path().join("config.json");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));

    let start = Instant::now();
    ok(&["pipeline", "--config", s(&config), "--out-dir", s(&a)]);
    assert!(start.elapsed() < Duration::from_secs(600));
    ok(&["pipeline", "--config", s(&config), "--out-dir", s(&b)]);

    let ma = RunManifest::read(&a.join("manifest.json")).unwrap();
    let mb = RunManifest::read(&b.join("manifest.json")).unwrap();
    assert_eq!(ma.outputs, mb.outputs);
    for f in [
        "dataset.jsonl",
        "val.jsonl",
        "old.jsonl",
        "plan.jsonl",
        "model.bin",
        "curves.csv",
        "metrics.json",
        "metrics.csv",
        "metrics_baseline.json",
        "deltas.csv",
        "curves_smoothed.csv",
    ] {
        assert!(a.join(f).is_file(), "{f} missing");
        assert!(ma.outputs.contains_key(f), "{f} not in manifest");
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f} differs"
        );
    }
    let manifest_text = std::fs::read_to_string(a.join("manifest.json")).unwrap();
    assert!(!manifest_text.contains(s(&a)), "manifest mentions its output directory");

    let deltas = std::fs::read_to_string(a.join("deltas.csv")).unwrap();
    let langs: Vec<&str> = deltas.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(langs, ["eng", "qaa", "all"]);

    let curves = std::fs::read_to_string(a.join("curves.csv")).unwrap();
    assert!(curves.lines().any(|l| l.contains(",val,val,")));

    ok(&[
        "verify",
        "--manifest",
        s(&a.join("manifest.json")),
        "--out-dir",
        s(&tmp.path().join("v")),
    ]);
}

#[test]
fn seed_flag_changes_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    copy_demo(tmp.path());
    let config = tmp.path().join("config.json");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["pipeline", "--config", s(&config), "--out-dir", s(&a)]);
    ok(&["--seed", "7", "pipeline", "--config", s(&config), "--out-dir", s(&b)]);
    let ma = RunManifest::read(&a.join("manifest.json")).unwrap();
    let mb = RunManifest::read(&b.join("manifest.json")).unwrap();
    assert_eq!(mb.seed, 7);
    assert_ne!(ma.outputs["dataset.jsonl"], mb.outputs["dataset.jsonl"]);
}

fn edit_config(dir: &Path, f: impl FnOnce(&mut serde_json::Value)) -> PathBuf {
    let path = dir.join("config.json");
    let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    f(&mut v);
    std::fs::write(&path, serde_json::to_string_pretty(&v).unwrap()).unwrap();
    path
}

#[test]
fn missing_classify_templates_is_a_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    copy_demo(tmp.path());
    let templates: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("templates.json")).unwrap()).unwrap();
    let mut stripped = templates.clone();
    stripped["templates"]
        .as_array_mut()
        .unwrap()
        .retain(|t| t["task"] != "classify");
    assert_ne!(stripped, templates);
    std::fs::write(tmp.path().join("no_cls.json"), stripped.to_string()).unwrap();
    let config = edit_config(tmp.path(), |v| v["eval"]["templates"] = "no_cls.json".into());

    let out_dir = tmp.path().join("run");
    let out = ia1(&["pipeline", "--config", s(&config), "--out-dir", s(&out_dir)]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("classify"));
    assert!(!out_dir.exists(), "nothing is written before validation passes");
}

#[test]
fn missing_input_and_bad_config_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    copy_demo(tmp.path());
    std::fs::remove_file(tmp.path().join("old.tsv")).unwrap();
    let out = ia1(&["pipeline", "--config", s(&tmp.path().join("config.json"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("old.tsv"));

    let config = edit_config(tmp.path(), |v| v["train"]["learning_rate"] = (-1.0).into());
    assert_eq!(ia1(&["pipeline", "--config", s(&config)]).status.code(), Some(2));

    let config = edit_config(tmp.path(), |v| v["surprise"] = 1.into());
    assert_eq!(ia1(&["pipeline", "--config", s(&config)]).status.code(), Some(2));

    assert_eq!(ia1(&["generate", "--bogus"]).status.code(), Some(2));
    assert_eq!(
        ia1(&["pipeline", "--config", "/nonexistent/config.json"]).status.code(),
        Some(2)
    );
}

#[test]
fn subcommands_chain() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    copy_demo(d);
    let p = |f: &str| d.join(f);

    ok(&[
        "--seed",
        "1",
        "generate",
        "--src",
        s(&p("corpus.eng")),
        "--tgt",
        s(&p("corpus.qaa")),
        "--src-lang",
        "eng",
        "--tgt-lang",
        "qaa",
        "--tasks",
        "word,mt",
        "--templates",
        s(&p("templates.json")),
        "--out",
        s(&p("new.jsonl")),
    ]);
    ok(&[
        "convert-old",
        "--tsv",
        s(&p("old.tsv")),
        "--lang",
        "eng",
        "--out",
        s(&p("old.jsonl")),
    ]);
    ok(&[
        "--seed",
        "1",
        "schedule",
        "--new",
        s(&p("new.jsonl")),
        "--old",
        s(&p("old.jsonl")),
        "--replay",
        "20",
        "--batch-size",
        "4",
        "--out",
        s(&p("plan.jsonl")),
    ]);
    let plan = std::fs::read_to_string(p("plan.jsonl")).unwrap();
    assert!(
        plan.contains("\"new_path\":\"new.jsonl\""),
        "plan paths are relative: {}",
        &plan[..200]
    );

    std::fs::write(
        p("train.json"),
        r#"{"max_steps": 20, "eval_interval": 10, "model": {"d_model": 16, "n_layers": 1, "n_heads": 2, "context": 128}}"#,
    )
    .unwrap();
    ok(&[
        "train",
        "--schedule",
        s(&p("plan.jsonl")),
        "--config",
        s(&p("train.json")),
        "--val",
        s(&p("new.jsonl")),
        "--out-model",
        s(&p("m.bin")),
        "--curves",
        s(&p("curves.csv")),
    ]);
    let curves = std::fs::read_to_string(p("curves.csv")).unwrap();
    assert!(curves.starts_with("step,tag,split,loss\n"));
    assert!(curves.contains("20,new,val,"));
    assert_eq!(curves.lines().filter(|l| l.contains(",all,train,")).count(), 20);

    for (out, model) in [("base.json", "m.bin"), ("run.json", "m.bin")] {
        ok(&[
            "eval",
            "--model",
            s(&p(model)),
            "--data",
            s(&p("eval.tsv")),
            "--templates",
            s(&p("templates.json")),
            "--verbalizers",
            s(&p("verbalizers.json")),
            "--out",
            s(&p(out)),
        ]);
    }
    assert!(p("run.csv").is_file());
    ok(&[
        "report",
        "--curves",
        s(&p("curves.csv")),
        "--metrics",
        s(&p("run.json")),
        "--baseline",
        s(&p("base.json")),
        "--window",
        "3",
        "--out-dir",
        s(&p("report")),
    ]);
    let deltas = std::fs::read_to_string(p("report/deltas.csv")).unwrap();
    for line in deltas.lines().skip(1) {
        let delta: f64 = line.split(',').nth(5).unwrap().parse().unwrap();
        assert_eq!(delta, 0.0, "same model, zero delta: {line}");
    }

    // Continue training from the checkpoint.
    ok(&[
        "train",
        "--schedule",
        s(&p("plan.jsonl")),
        "--config",
        s(&p("train.json")),
        "--init-model",
        s(&p("m.bin")),
        "--out-model",
        s(&p("m2.bin")),
        "--curves",
        s(&p("curves2.csv")),
    ]);
    assert_ne!(std::fs::read(p("m.bin")).unwrap(), std::fs::read(p("m2.bin")).unwrap());

    // A dataset edited after scheduling no longer matches the plan.
    let mut new = std::fs::read_to_string(p("new.jsonl")).unwrap();
    new = new.replacen("\"target\":\"", "\"target\":\"x", 1);
    std::fs::write(p("new.jsonl"), new).unwrap();
    let out = ia1(&[
        "train",
        "--schedule",
        s(&p("plan.jsonl")),
        "--out-model",
        s(&p("m3.bin")),
        "--curves",
        s(&p("c3.csv")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("digest"));
}

#[test]
fn replay_without_old_data_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    copy_demo(d);
    ok(&[
        "convert-old",
        "--tsv",
        s(&d.join("old.tsv")),
        "--lang",
        "eng",
        "--out",
        s(&d.join("old.jsonl")),
    ]);
    let out = ia1(&[
        "schedule",
        "--new",
        s(&d.join("old.jsonl")),
        "--replay",
        "5",
        "--out",
        s(&d.join("p.jsonl")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn verify_detects_tampered_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    copy_demo(tmp.path());
    let a = tmp.path().join("a");
    ok(&[
        "pipeline",
        "--config",
        s(&tmp.path().join("config.json")),
        "--out-dir",
        s(&a),
    ]);
    let manifest = a.join("manifest.json");
    let mut m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&manifest).unwrap()).unwrap();
    m["outputs"]["model.bin"] = "0".repeat(64).into();
    std::fs::write(&manifest, m.to_string()).unwrap();
    let out = ia1(&[
        "verify",
        "--manifest",
        s(&manifest),
        "--out-dir",
        s(&tmp.path().join("v")),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("model.bin"));

    let out = ia1(&["verify", "--manifest", s(&manifest), "--out-dir", s(&a)]);
    assert_eq!(out.status.code(), Some(2), "a non-empty output directory is refused");
}

#[test]
fn ablation_experiment_writes_curves() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("ablation.json");
    std::fs::write(&cfg, r#"{"pairs": 40, "steps": 10, "eval_interval": 5, "model": {"d_model": 16, "n_layers": 1, "n_heads": 2, "context": 96}}"#).unwrap();
    let out_dir = tmp.path().join("out");
    ok(&["experiment", "ablation", "--config", s(&cfg), "--out-dir", s(&out_dir)]);
    for name in ["mono", "cd", "mt", "cd_mt"] {
        let text = std::fs::read_to_string(out_dir.join(format!("curves_{name}.csv"))).unwrap();
        assert!(text.contains("10,mix,val,"), "{name}");
    }
}
