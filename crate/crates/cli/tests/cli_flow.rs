//! End-to-end flow through the binary: degrade -> genqa -> eval -> report.

use std::process::Command;

use duskbench_core::qa::fixture::{corpus_frames, write_corpus};
use duskbench_core::qa::QaTables;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_duskbench")
}

#[test]
fn degrade_genqa_eval_report_flow() {
    let dir = tempfile::tempdir().unwrap();
    let tables = QaTables::builtin();
    let manifest = write_corpus(&corpus_frames(4), &tables, dir.path().join("corpus")).unwrap();
    let manifest_path = dir.path().join("manifest.jsonl");
    manifest.save(&manifest_path).unwrap();

    let images = dir.path().join("degraded");
    let status = Command::new(bin())
        .args([
            "degrade",
            "--manifest",
            manifest_path.to_str().unwrap(),
            "--levels",
            "L0,L3",
            "--out",
            images.to_str().unwrap(),
            "--seed",
            "5",
        ])
        .status()
        .unwrap();
    assert!(status.success());
    // 4 frames x 2 levels x 2 variants.
    assert!(images.join("s00/f000/L3/noise.png").exists());
    assert!(images.join("s00/f000/L3/noise.json").exists());

    // Exactly two variants per (frame, level), sharing the same exposure drop.
    let sidecar = |name: &str| -> serde_json::Value {
        serde_json::from_str(
            &std::fs::read_to_string(images.join("s00/f000/L3").join(name)).unwrap(),
        )
        .unwrap()
    };
    let ev = sidecar("ev.json");
    let noise = sidecar("noise.json");
    assert_eq!(ev["delta_ev"], noise["delta_ev"]);
    assert_eq!(ev["delta_ev"], serde_json::json!(6.0));
    assert!(noise["camera"]["system_gain_k"].is_f64());
    assert_eq!(
        std::fs::read_dir(images.join("s00/f000/L3"))
            .unwrap()
            .count(),
        4
    );

    let qa_path = dir.path().join("qa.jsonl");
    let review_path = dir.path().join("review.md");
    let status = Command::new(bin())
        .args([
            "genqa",
            "--manifest",
            manifest_path.to_str().unwrap(),
            "--out",
            qa_path.to_str().unwrap(),
            "--seed",
            "5",
            "--stats-cache",
            dir.path().join("cache").to_str().unwrap(),
            "--review-export",
            review_path.to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert!(status.success());
    assert_eq!(
        std::fs::read_to_string(&qa_path).unwrap().lines().count(),
        20
    );
    assert!(std::fs::read_to_string(&review_path)
        .unwrap()
        .contains("| family |"));

    let model_path = dir.path().join("model.toml");
    std::fs::write(&model_path, "id = \"oracle\"\nkind = \"stub-oracle\"\n").unwrap();
    let journal = dir.path().join("journal.jsonl");
    let status = Command::new(bin())
        .args([
            "eval",
            "--qa",
            qa_path.to_str().unwrap(),
            "--images",
            images.to_str().unwrap(),
            "--model",
            model_path.to_str().unwrap(),
            "--conditions",
            "L0,L3,L3+noise",
            "--out",
            journal.to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert!(status.success());
    assert_eq!(
        std::fs::read_to_string(&journal).unwrap().lines().count(),
        20 * 3
    );

    // Resuming adds nothing.
    let status = Command::new(bin())
        .args([
            "eval",
            "--qa",
            qa_path.to_str().unwrap(),
            "--images",
            images.to_str().unwrap(),
            "--model",
            model_path.to_str().unwrap(),
            "--conditions",
            "L0,L3,L3+noise",
            "--out",
            journal.to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert!(status.success());
    assert_eq!(
        std::fs::read_to_string(&journal).unwrap().lines().count(),
        20 * 3
    );

    let report_path = dir.path().join("report.md");
    let status = Command::new(bin())
        .args([
            "report",
            "--journal",
            journal.to_str().unwrap(),
            "--format",
            "md",
            "--out",
            report_path.to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert!(status.success());
    let report = std::fs::read_to_string(&report_path).unwrap();
    assert!(report.contains("## oracle"));
    assert!(report.contains("| L3+noise | 20 | 100.00 |"));

    // CSV and JSON renderings also work.
    for format in ["csv", "json"] {
        let out = Command::new(bin())
            .args([
                "report",
                "--journal",
                journal.to_str().unwrap(),
                "--format",
                format,
            ])
            .output()
            .unwrap();
        assert!(out.status.success());
        assert!(!out.stdout.is_empty());
    }

    // Missing journal is an I/O error: exit code 2.
    let status = Command::new(bin())
        .args([
            "report",
            "--journal",
            dir.path().join("nope.jsonl").to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}
