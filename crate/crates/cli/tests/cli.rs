use std::path::PathBuf;
use std::process::{Command, Output};

use hopper_core::bench::{load_dataset, EvalReport, SourceDataset};

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn hopper(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hopper"))
        .args(args)
        .env_remove("RUST_LOG")
        .output()
        .expect("binary runs")
}

fn offline(args: &[&str]) -> Output {
    let config = fixtures().join("offline.toml");
    let mut all = vec!["--config", config.to_str().unwrap(), "--offline"];
    all.extend_from_slice(args);
    hopper(&all)
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(hopper(&["--help"]).status.code(), Some(0));
    assert_eq!(hopper(&["--version"]).status.code(), Some(0));
    assert_eq!(hopper(&["eval", "--help"]).status.code(), Some(0));
}

#[test]
fn unknown_mode_is_a_usage_error() {
    let out = offline(&["eval", "--dataset", "x.jsonl", "--mode", "sideways"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("--mode"), "{err}");
    assert!(err.contains("direct-io"), "{err}");
    assert_eq!(hopper(&["frobnicate"]).status.code(), Some(1));
}

#[test]
fn runtime_failures_exit_two() {
    let out = offline(&["eval", "--dataset", "/definitely/missing.jsonl"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.jsonl"));
    let out = hopper(&["--config", "/no/such/config.toml", "train-toy", "--steps", "1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn golden_rollout_from_the_binary() {
    let golden = std::fs::read_to_string(fixtures().join("golden/two_hop.txt")).unwrap();
    let out = offline(&[
        "rollout",
        "--prompt-id",
        "two-hop",
        "--question",
        "Who was the mother of the maternal grandmother of Aldric of Vellmar?",
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(String::from_utf8(out.stdout).unwrap(), golden);
}

#[test]
fn eval_writes_report_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("r.json");
    let csv = dir.path().join("r.csv");
    let out = offline(&[
        "eval",
        "--dataset",
        fixtures().join("mini.jsonl").to_str().unwrap(),
        "--mode",
        "direct-io",
        "--report-out",
        report.to_str().unwrap(),
        "--csv-out",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r = EvalReport::read_json(&report).unwrap();
    assert!(r.is_consistent());
    assert_eq!(r.meta.n, 20);
    assert_eq!(r.meta.dataset, "mini");
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 21);
}

#[test]
fn train_toy_writes_two_hundred_rows() {
    let dir = tempfile::tempdir().unwrap();
    let curve = dir.path().join("curve.csv");
    let out = hopper(&["train-toy", "--curve-out", curve.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let text = std::fs::read_to_string(&curve).unwrap();
    assert_eq!(text.lines().count(), 201);
    assert!(text.starts_with("step,mean_reward,kl,clip_fraction\n0,"));
}

#[test]
fn mixture_output_reloads() {
    let dir = tempfile::tempdir().unwrap();
    let mk = |name: &str, n: usize| {
        let p = dir.path().join(name);
        let lines: Vec<String> = (0..n)
            .map(|i| format!(r#"{{"id":"{name}-{i}","question":"q{i}","answer":"ans {i}"}}"#))
            .collect();
        std::fs::write(&p, lines.join("\n")).unwrap();
        p
    };
    let hot = mk("hotpot.jsonl", 30);
    let wiki = mk("2wiki.jsonl", 30);
    let out_path = dir.path().join("mix.jsonl");
    let args = |seed: &'static str| {
        vec![
            "--seed".to_string(), seed.into(), "mixture".into(),
            "--hotpot".into(), hot.to_str().unwrap().into(),
            "--twowiki".into(), wiki.to_str().unwrap().into(),
            "--out".into(), out_path.to_str().unwrap().into(),
            "--total".into(), "20".into(), "--ratio".into(), "0.5".into(),
        ]
    };
    let run = |seed| {
        let a = args(seed);
        let refs: Vec<&str> = a.iter().map(String::as_str).collect();
        let out = hopper(&refs);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        std::fs::read_to_string(&out_path).unwrap()
    };
    let first = run("3");
    assert_eq!(first, run("3"));
    assert_ne!(first, run("4"));
    let mixed = load_dataset(&out_path, Some(SourceDataset::Custom)).unwrap();
    assert_eq!(mixed.len(), 20);
    assert_eq!(mixed.iter().filter(|s| s.id.starts_with("hotpot")).count(), 10);

    // No ratio anywhere is a runtime error, not a silent default.
    let out = hopper(&[
        "mixture", "--hotpot", hot.to_str().unwrap(), "--twowiki", wiki.to_str().unwrap(),
        "--out", out_path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn export_batch_from_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("b.jsonl");
    let out = offline(&[
        "export-batch",
        "--prompts",
        fixtures().join("train_prompts.jsonl").to_str().unwrap(),
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let (header, groups) = hopper_core::grpo::import_batch(&out_path).unwrap();
    assert_eq!(header.records, 36);
    assert_eq!(groups.len(), 3);
}
