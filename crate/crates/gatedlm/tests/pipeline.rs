//! End-to-end pipeline through the CLI binary: sample -> tokenize -> pack ->
//! train -> eval -> inspect, plus exit-code contracts.

use std::path::Path;
use std::process::Command;

use gatedlm::corpus::write_documents;
use gatedlm::synthetic::synthetic_domain_documents;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gatedlm"))
}

fn run_ok(args: &[&str]) -> String {
    let out = bin().args(args).output().expect("spawn gatedlm");
    assert!(
        out.status.success(),
        "command {:?} failed: {}\n{}",
        args,
        String::from_utf8_lossy(&out.stderr),
        String::from_utf8_lossy(&out.stdout)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn write_plan(dir: &Path) -> std::path::PathBuf {
    let mut plan = Vec::new();
    for (i, (domain, ratio)) in
        [("web", 0.6), ("law", 0.25), ("wiki", 0.15)].iter().enumerate()
    {
        let docs = synthetic_domain_documents(domain, 400, 50 + i as u64);
        let src = dir.join(format!("{domain}.jsonl"));
        write_documents(&docs, &src).unwrap();
        plan.push(serde_json::json!({"domain": domain, "ratio": ratio, "source": src}));
    }
    let plan_path = dir.join("plan.json");
    std::fs::write(&plan_path, serde_json::to_string_pretty(&plan).unwrap()).unwrap();
    plan_path
}

#[test]
fn full_pipeline_via_cli() {
    let dir = tempfile::tempdir().unwrap();
    let plan = write_plan(dir.path());
    let sample_dir = dir.path().join("sample");
    let stdout = run_ok(&[
        "sample",
        "--plan",
        plan.to_str().unwrap(),
        "--total-words",
        "2000",
        "--seed",
        "3",
        "--out",
        sample_dir.to_str().unwrap(),
    ]);
    assert!(stdout.contains("Ratio (%)"));
    assert!(sample_dir.join("manifest.json").exists());
    assert!(sample_dir.join("resolved-config.json").exists());
    let corpus = sample_dir.join("corpus.jsonl");

    let vocab = dir.path().join("vocab.json");
    run_ok(&[
        "tokenize",
        "--corpus",
        corpus.to_str().unwrap(),
        "--vocab-size",
        "300",
        "--out",
        vocab.to_str().unwrap(),
    ]);

    let data = dir.path().join("data.pkds");
    let stdout = run_ok(&[
        "pack",
        "--corpus",
        corpus.to_str().unwrap(),
        "--vocab",
        vocab.to_str().unwrap(),
        "--chunk-len",
        "32",
        "--out",
        data.to_str().unwrap(),
    ]);
    assert!(stdout.contains("chunks of 32"));

    let train_dir = dir.path().join("train");
    run_ok(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--hidden-size",
        "16",
        "--layers",
        "1",
        "--expand-ratio",
        "4",
        "--heads",
        "2",
        "--epochs",
        "1",
        "--batch-size",
        "8",
        "--workers",
        "2",
        "--out",
        train_dir.to_str().unwrap(),
    ]);
    for artifact in ["resolved-config.json", "train-config.json", "metrics.jsonl", "report.json"] {
        assert!(train_dir.join(artifact).exists(), "missing {artifact}");
    }
    let ckpt = train_dir.join("epoch-001.ckpt");
    assert!(ckpt.exists());

    // Evaluation over a small pairs file plus perplexity.
    let pairs_path = dir.path().join("pairs.jsonl");
    let pairs = [
        serde_json::json!({"good": "webw1 webw2", "bad": "webw2 zq", "tag": "t"}),
        serde_json::json!({"good": "laww3 laww4", "bad": "zz yy", "tag": "t"}),
    ];
    let content: String = pairs.iter().map(|p| p.to_string() + "\n").collect();
    std::fs::write(&pairs_path, content).unwrap();
    let report_path = dir.path().join("eval.json");
    let stdout = run_ok(&[
        "eval",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--vocab",
        vocab.to_str().unwrap(),
        "--pairs",
        pairs_path.to_str().unwrap(),
        "--perplexity",
        data.to_str().unwrap(),
        "--out",
        report_path.to_str().unwrap(),
    ]);
    assert!(stdout.contains("macro-average"));
    assert!(report_path.exists());

    let stdout = run_ok(&["inspect", "--checkpoint", ckpt.to_str().unwrap()]);
    assert!(stdout.contains("parameters"));
    assert!(stdout.contains("monotone non-decreasing: true"));

    // Distillation from the trained checkpoint.
    let distill_dir = dir.path().join("distill");
    run_ok(&[
        "distill",
        "--data",
        data.to_str().unwrap(),
        "--teacher",
        ckpt.to_str().unwrap(),
        "--alpha",
        "0.5",
        "--epochs",
        "1",
        "--batch-size",
        "8",
        "--out",
        distill_dir.to_str().unwrap(),
    ]);
    assert!(distill_dir.join("epoch-001.ckpt").exists());
}

#[test]
fn unknown_flags_are_rejected() {
    let out = bin().args(["train", "--no-such-flag"]).output().unwrap();
    assert!(!out.status.success());
}

#[test]
fn categorized_exit_codes() {
    // Usage error: eval with no tasks requested.
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("none.ckpt");
    let out = bin()
        .args(["eval", "--checkpoint", missing.to_str().unwrap(), "--vocab", "x.json"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    // Ingestion failure (missing files) maps to the data exit code.
    assert_eq!(out.status.code(), Some(4), "stderr: {}", String::from_utf8_lossy(&out.stderr));

    let out = bin().args(["inspect"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2)); // usage error
}

#[test]
fn sample_is_reproducible_at_cli_level() {
    let dir = tempfile::tempdir().unwrap();
    let plan = write_plan(dir.path());
    let run = |name: &str| {
        let out_dir = dir.path().join(name);
        run_ok(&[
            "sample",
            "--plan",
            plan.to_str().unwrap(),
            "--total-words",
            "1500",
            "--seed",
            "9",
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        std::fs::read(out_dir.join("corpus.jsonl")).unwrap()
    };
    assert_eq!(run("a"), run("b"));
}
