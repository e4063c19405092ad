//! End-to-end tests of the command-line interface: every verb runs, reruns
//! are byte-identical, and bad invocations fail with nonzero exits.

use std::path::Path;
use std::process::{Command, Output};

use tempfile::tempdir;

fn parabart(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_parabart"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn assert_success(out: &Output, what: &str) {
    assert!(
        out.status.success(),
        "{what} failed: {}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("reading {path:?}: {e}"))
}

#[test]
fn help_exits_zero_and_lists_every_verb() {
    let out = parabart(&["--help"]);
    assert_success(&out, "--help");
    let text = String::from_utf8_lossy(&out.stdout);
    for verb in [
        "gen-synth",
        "train",
        "embed",
        "eval-sts",
        "probe",
        "qqp-split",
        "qqp-eval",
        "grad-check",
    ] {
        assert!(text.contains(verb), "help is missing {verb}");
    }
}

#[test]
fn unknown_verbs_and_flags_are_rejected() {
    let out = parabart(&["frobnicate"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));

    let out = parabart(&["gen-synth", "--out", "/tmp/x", "--frobnicate"]);
    assert!(!out.status.success());

    let out = parabart(&["train", "--corpus", "/nonexistent.jsonl", "--out", "/tmp/x"]);
    assert!(!out.status.success(), "missing corpus must fail");
}

#[test]
fn thread_cap_env_var_is_validated() {
    let dir = tempdir().unwrap();
    let run = |threads: &str| {
        Command::new(env!("CARGO_BIN_EXE_parabart"))
            .args([
                "gen-synth",
                "--out",
                dir.path().join(threads).to_str().unwrap(),
                "--n",
                "10",
            ])
            .env("PARABART_THREADS", threads)
            .output()
            .expect("binary runs")
    };
    assert!(run("2").status.success());
    let bad = run("0");
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("PARABART_THREADS"));
}

#[test]
fn gen_synth_and_train_are_rerun_identical() {
    let dir = tempdir().unwrap();
    let data = dir.path().join("data");
    let data_s = data.to_str().unwrap();
    assert_success(
        &parabart(&["gen-synth", "--out", data_s, "--n", "60", "--seed", "5"]),
        "gen-synth",
    );
    for f in ["corpus.jsonl", "heldout.jsonl", "tagset.txt", "probe.tsv", "sts.tsv", "qqp.tsv", "manifest.json"] {
        assert!(data.join(f).exists(), "gen-synth did not write {f}");
    }

    let corpus = data.join("corpus.jsonl");
    let train = |out: &Path| {
        assert_success(
            &parabart(&[
                "train",
                "--corpus",
                corpus.to_str().unwrap(),
                "--out",
                out.to_str().unwrap(),
                "--seed",
                "3",
                "--mode",
                "full",
                "--epochs",
                "1",
                "--d-model",
                "16",
                "--heads",
                "2",
                "--layers-sem",
                "1",
            ]),
            "train",
        );
    };
    let m1 = dir.path().join("m1");
    let m2 = dir.path().join("m2");
    train(&m1);
    train(&m2);
    assert_eq!(
        read(&m1.join("model.pbt")),
        read(&m2.join("model.pbt")),
        "fixed-seed training must be bitwise reproducible"
    );
    assert!(m1.join("manifest.json").exists());
    assert!(m1.join("val_log.csv").exists());
}

#[test]
fn qqp_split_is_rerun_identical_and_eval_reports_threshold() {
    let dir = tempdir().unwrap();
    let data = dir.path().join("data");
    let data_s = data.to_str().unwrap();
    assert_success(
        &parabart(&["gen-synth", "--out", data_s, "--n", "40", "--seed", "11"]),
        "gen-synth",
    );
    let pool = data.join("qqp.tsv");
    let split = |out: &Path| {
        assert_success(
            &parabart(&[
                "qqp-split",
                "--data",
                pool.to_str().unwrap(),
                "--out",
                out.to_str().unwrap(),
                "--n",
                "50",
                "--seed",
                "9",
            ]),
            "qqp-split",
        );
    };
    let s1 = dir.path().join("s1");
    split(&s1);
    let first: Vec<(&str, Vec<u8>)> = ["easy.tsv", "hard.tsv", "manifest.json"]
        .map(|f| (f, read(&s1.join(f))))
        .into_iter()
        .collect();
    split(&s1);
    for (f, bytes) in &first {
        assert_eq!(&read(&s1.join(f)), bytes, "{f} differs between reruns");
    }

    let model = dir.path().join("model");
    assert_success(
        &parabart(&[
            "train",
            "--corpus",
            data.join("corpus.jsonl").to_str().unwrap(),
            "--out",
            model.to_str().unwrap(),
            "--epochs",
            "1",
            "--d-model",
            "16",
            "--heads",
            "2",
            "--layers-sem",
            "1",
        ]),
        "train",
    );
    let out = parabart(&[
        "qqp-eval",
        "--model",
        model.to_str().unwrap(),
        "--data",
        s1.join("easy.tsv").to_str().unwrap(),
    ]);
    assert_success(&out, "qqp-eval");
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("\"threshold\""), "{text}");
    assert!(text.contains("\"accuracy\""), "{text}");
}

#[test]
fn eval_sts_probe_and_embed_work_against_a_checkpoint() {
    let dir = tempdir().unwrap();
    let data = dir.path().join("data");
    assert_success(
        &parabart(&[
            "gen-synth",
            "--out",
            data.to_str().unwrap(),
            "--n",
            "40",
            "--seed",
            "2",
        ]),
        "gen-synth",
    );
    let model = dir.path().join("model");
    assert_success(
        &parabart(&[
            "train",
            "--corpus",
            data.join("corpus.jsonl").to_str().unwrap(),
            "--out",
            model.to_str().unwrap(),
            "--epochs",
            "1",
            "--d-model",
            "16",
            "--heads",
            "2",
            "--layers-sem",
            "1",
        ]),
        "train",
    );
    let model_s = model.to_str().unwrap();

    let report_dir = dir.path().join("sts-report");
    let out = parabart(&[
        "eval-sts",
        "--model",
        model_s,
        "--data",
        data.join("sts.tsv").to_str().unwrap(),
        "--out",
        report_dir.to_str().unwrap(),
    ]);
    assert_success(&out, "eval-sts");
    assert!(String::from_utf8_lossy(&out.stdout).contains("pearson_r"));
    let report = String::from_utf8(read(&report_dir.join("report.json"))).unwrap();
    assert!(report.contains("\"metric\": \"pearson_r\""), "{report}");
    assert!(report_dir.join("manifest.json").exists());

    let out = parabart(&[
        "probe",
        "--model",
        model_s,
        "--data",
        data.join("probe.tsv").to_str().unwrap(),
        "--hidden",
        "20",
        "--seed",
        "4",
    ]);
    assert_success(&out, "probe");
    assert!(String::from_utf8_lossy(&out.stdout).contains("test_accuracy"));

    let sents = dir.path().join("sents.txt");
    std::fs::write(&sents, "the cat is clear .\n\nit is that simple .\n").unwrap();
    let out = parabart(&["embed", "--model", model_s, "--data", sents.to_str().unwrap()]);
    assert_success(&out, "embed");
    let text = String::from_utf8_lossy(&out.stdout);
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows.len(), 2, "blank line skipped: {text}");
    assert_eq!(rows[0].split_whitespace().count(), 16);
}

#[test]
fn grad_check_passes_and_writes_a_report() {
    let dir = tempdir().unwrap();
    let out_dir = dir.path().join("gc");
    let out = parabart(&[
        "grad-check",
        "--seed",
        "1",
        "--n",
        "1",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_success(&out, "grad-check");
    let report = String::from_utf8(read(&out_dir.join("report.json"))).unwrap();
    assert!(report.contains("\"pass\": true"), "{report}");
}
