use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_persuasion"));
    c.env("RUST_LOG", "warn");
    c
}

fn run(args: &[&str], cwd: &Path) -> Output {
    bin().args(args).current_dir(cwd).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn gen_writes_one_line_per_request() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["gen", "--n", "1000", "--seed", "7", "--out", "c.jsonl"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(dir.path().join("c.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 1000);

    let o = run(&["gen", "--n", "1000", "--seed", "7", "--out", "d.jsonl"], dir.path());
    assert_eq!(code(&o), 0);
    assert_eq!(std::fs::read(dir.path().join("d.jsonl")).unwrap(), text.as_bytes());
}

#[test]
fn verify_fixture_passes_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["verify-fixture", "--out", "ranks.csv"], dir.path());
    assert_eq!(code(&o), 0);
    let out = stdout(&o);
    let r: f64 = out.split_whitespace().nth(2).unwrap().parse().unwrap();
    assert!(r <= -0.85, "{out}");
    let csv = std::fs::read_to_string(dir.path().join("ranks.csv")).unwrap();
    let first = csv.lines().next().unwrap();
    assert!(first.starts_with(&format!("# persuasion {} config=", env!("CARGO_PKG_VERSION"))), "{first}");
    assert!(first.contains("seeds=gen:42,"));
    assert!(csv.lines().nth(2).unwrap().starts_with("1,Po Po EOS,"));
    assert!(dir.path().join("ranks.tsv").is_file());
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[], dir.path());
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    assert_eq!(code(&run(&["frobnicate"], dir.path())), 2);
    assert_eq!(code(&run(&["gen", "--bogus"], dir.path())), 2);
    assert_eq!(code(&run(&["baseline", "svm"], dir.path())), 2);
    assert_eq!(code(&run(&["--help"], dir.path())), 0);
}

#[test]
fn module_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["train-vae", "--corpus", "missing.jsonl"], dir.path());
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing.jsonl"));
    std::fs::write(dir.path().join("bad.json"), "{\"seeds\": 3}").unwrap();
    assert_eq!(code(&run(&["--config", "bad.json", "verify-fixture"], dir.path())), 1);
}

#[test]
fn print_config_merges_file_and_flags_without_running() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("run.json"),
        r#"{"seeds": {"gen": 9, "edit": 4}, "gen": {"n_requests": 50}}"#,
    )
    .unwrap();
    let o = run(
        &["--config", "run.json", "--print-config", "gen", "--n", "12", "--out", "x.jsonl"],
        dir.path(),
    );
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["gen"]["n_requests"], 12);
    assert_eq!(v["seeds"]["gen"], 9);
    assert_eq!(v["seeds"]["edit"], 4);
    assert_eq!(v["seeds"]["vae"], 7);
    assert_eq!(v["paths"]["corpus"], "x.jsonl");
    assert!(!dir.path().join("x.jsonl").exists());
}

const TINY: &str = r#"{
  "paths": {"corpus": "c.jsonl", "vae": "m/vae.json", "classifier": "m/clf.json", "reports": "out"},
  "gen": {"n_requests": 150},
  "split": {"labeled_train": 30, "unlabeled_train": 60, "val": 20, "test": 20},
  "vae": {"embed_dim": 8, "latent_dim": 4, "hidden_dim": 6},
  "vae_train": {"epochs": 1},
  "persuader": {"latent_dim": 4, "attention_dim": 4, "hidden_dim": 6, "mlp_hidden": 4},
  "classifier_train": {"epochs": 2},
  "sentence_lstm": {"embed_dim": 8, "hidden_dim": 6, "epochs": 1},
  "edit": {"runs": 2, "triples": "ranked", "ranked_k": 2},
  "analysis": {"min_freq": 0.0}
}"#;

#[test]
fn tiny_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("run.json"), TINY).unwrap();
    let steps: [&[&str]; 8] = [
        &["gen"],
        &["train-vae"],
        &["train-clf"],
        &["baseline", "nb"],
        &["baseline", "random"],
        &["baseline", "sentence-lstm"],
        &["analyze"],
        &["edit"],
    ];
    for step in steps {
        let mut args = vec!["--config", "run.json"];
        args.extend_from_slice(step);
        let o = run(&args, d);
        assert_eq!(code(&o), 0, "{step:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    for report in [
        "vae_metrics.csv",
        "classifier_metrics.csv",
        "baseline_naive_bayes.csv",
        "baseline_random.csv",
        "baseline_sentence_lstm.csv",
        "triplets.csv",
        "triplets.tsv",
        "analysis_summary.csv",
        "edits.csv",
    ] {
        let text = std::fs::read_to_string(d.join("out").join(report)).unwrap();
        assert!(text.starts_with("# persuasion "), "{report}");
        assert!(text.lines().next().unwrap().contains(" config="), "{report}");
    }
    let edits = std::fs::read_to_string(d.join("out/edits.csv")).unwrap();
    let ops: Vec<&str> = edits.lines().skip(2).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(ops, ["insert", "delete", "swap"]);

    // same config, same artifacts
    let first = std::fs::read(d.join("m/clf.json")).unwrap();
    let o = run(&["--config", "run.json", "train-clf"], d);
    assert_eq!(code(&o), 0);
    assert_eq!(std::fs::read(d.join("m/clf.json")).unwrap(), first);
    let again = std::fs::read_to_string(d.join("out/edits.csv")).unwrap();
    let o = run(&["--config", "run.json", "edit"], d);
    assert_eq!(code(&o), 0);
    assert_eq!(std::fs::read_to_string(d.join("out/edits.csv")).unwrap(), again);
}
