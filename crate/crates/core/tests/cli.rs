use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_patchcorr");

const SUBCOMMANDS: [&str; 15] = [
    "ingest",
    "gen-synthetic",
    "fragments",
    "train-embedder",
    "embed",
    "import-embeddings",
    "features",
    "stats",
    "filter",
    "top1",
    "train",
    "crossval",
    "combine",
    "explain",
    "compare",
];

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .current_dir(dir)
        .env_remove("PATCHCORR_OUT_DIR")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Synthetic corpus with its own embeddings and both feature tables.
fn prepared() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["gen-synthetic", "--patches", "80", "--bugs", "20"]);
    ok(
        d,
        &[
            "import-embeddings",
            "out/synthetic_embeddings.jsonl",
            "--provider",
            "synthetic",
        ],
    );
    ok(d, &["features"]);
    dir
}

#[test]
fn help_documents_every_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    let top = ok(dir.path(), &["--help"]);
    for s in SUBCOMMANDS {
        assert!(top.contains(s), "top-level help lacks {s}");
        let sub = ok(dir.path(), &[s, "--help"]);
        assert!(sub.contains("--out-dir"), "{s} --help lacks global flags");
    }
    assert!(top.contains("PATCHCORR_OUT_DIR"));
}

#[test]
fn usage_errors_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(dir.path(), &["no-such-command"]).status.code(), Some(2));
    assert_eq!(
        run(dir.path(), &["crossval", "--bogus"]).status.code(),
        Some(2)
    );
    assert_eq!(
        run(dir.path(), &["crossval", "--learner", "svm"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn missing_input_is_an_input_error_with_module_and_hint() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["fragments"]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("error[corpus]"), "{err}");
    assert!(err.contains("hint:"), "{err}");

    let out = run(dir.path(), &["crossval"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error[features]"));
}

#[test]
fn ingest_reports_rejections_and_duplicates() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let diff = "--- a/A.java\\n+++ b/A.java\\n@@ -1 +1 @@\\n-x = 1;\\n+x = 2;\\n";
    let lines = [
        format!(r#"{{"patch_id":"p1","bug_id":"B-1","project":"P","tool":"t","label":"correct","diff_text":"{diff}"}}"#),
        format!(r#"{{"patch_id":"p2","bug_id":"B-1","project":"P","tool":"t","label":"incorrect","diff_text":"{diff}"}}"#),
        "not json".to_string(),
        r#"{"patch_id":"p3","bug_id":"B-2","project":"P","tool":"t","label":"maybe","diff_text":""}"#.to_string(),
    ];
    std::fs::write(d.join("in.jsonl"), lines.join("\n")).unwrap();
    let stdout = ok(d, &["ingest", "in.jsonl"]);
    assert!(stdout.contains("ingested 1 patches"), "{stdout}");
    let report = json(&d.join("out/ingest_report.json"));
    assert_eq!(report["report"]["duplicates"], 1);
    let rejected: Vec<u64> = report["report"]["rejected"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["line"].as_u64().unwrap())
        .collect();
    // Line 2 repeats line 1's diff: counted as a duplicate, not a rejection.
    assert_eq!(rejected, [3, 4]);
    assert!(report.get("run_config").is_some());
}

#[test]
fn stats_then_filter_writes_verdicts_and_recalls() {
    let dir = prepared();
    let d = dir.path();
    ok(d, &["stats"]);
    let summary = ok(d, &["filter", "--policy", "q1"]);
    assert!(
        summary.contains("+Recall") && summary.contains("-Recall"),
        "{summary}"
    );
    let f = json(&d.join("out/filter.json"));
    for key in [
        "stats",
        "policy",
        "+CP",
        "-IP",
        "+Recall",
        "-Recall",
        "run_config",
    ] {
        assert!(f.get(key).is_some(), "filter.json lacks {key}");
    }
    let verdicts = std::fs::read_to_string(d.join("out/verdicts.csv")).unwrap();
    assert_eq!(verdicts.lines().count(), 81);
    assert!(d.join("out/verdicts.csv.meta.json").exists());

    // A threshold taken from another run's stats file.
    ok(
        d,
        &["filter", "--stats", "out/stats.json", "--policy", "median"],
    );
    let fixed = ok(d, &["filter", "--policy", "fixed", "--value", "-1"]);
    assert!(fixed.contains("+Recall 100.0%"), "{fixed}");
    assert_eq!(
        run(d, &["filter", "--policy", "fixed"]).status.code(),
        Some(4)
    );
    ok(d, &["top1"]);
    assert_eq!(
        json(&d.join("out/top1.json"))["selections"]
            .as_array()
            .unwrap()
            .len(),
        20
    );
}

#[test]
fn crossval_and_combine_reports() {
    let dir = prepared();
    let d = dir.path();
    ok(
        d,
        &[
            "crossval",
            "--learner",
            "gbt",
            "--features",
            "learned",
            "--k",
            "5",
            "--seed",
            "42",
        ],
    );
    let first = std::fs::read(d.join("out/crossval_learned_gbt.json")).unwrap();
    let report: Value = serde_json::from_slice(&first).unwrap();
    assert_eq!(report["learner"], "gbt");
    assert_eq!(report["k"], 5);
    assert_eq!(report["config_echo"]["k"], 5);
    assert_eq!(report["per_fold"].as_array().unwrap().len(), 5);
    ok(
        d,
        &[
            "crossval",
            "--learner",
            "gbt",
            "--features",
            "learned",
            "--k",
            "5",
            "--seed",
            "42",
        ],
    );
    assert_eq!(
        first,
        std::fs::read(d.join("out/crossval_learned_gbt.json")).unwrap()
    );

    let oof = std::fs::read_to_string(d.join("out/oof_crossval_learned_gbt.csv")).unwrap();
    assert_eq!(
        oof.lines().next().unwrap(),
        "patch_id,bug_id,label,probability,fold"
    );
    assert_eq!(oof.lines().count(), 81);

    ok(
        d,
        &[
            "combine",
            "--strategy",
            "concat",
            "--learner",
            "gbt",
            "--k",
            "5",
        ],
    );
    let c = json(&d.join("out/combine_concat_gbt.json"));
    assert_eq!(c["strategy"], "concat");
    assert_eq!(c["learner"], "gbt");

    ok(
        d,
        &[
            "crossval",
            "--features",
            "engineered",
            "--learner",
            "lr",
            "--k",
            "5",
        ],
    );
    let out = ok(
        d,
        &[
            "compare",
            "out/oof_crossval_learned_gbt.csv",
            "out/oof_crossval_engineered_lr.csv",
        ],
    );
    assert!(out.contains("80 shared patches"), "{out}");
    let cmp = json(&d.join("out/compare.json"));
    let c = &cmp["comparison"]["correct_identified"];
    let i = &cmp["comparison"]["incorrect_filtered"];
    let total: u64 = ["both", "only_a", "only_b", "neither"]
        .iter()
        .map(|k| c[k].as_u64().unwrap() + i[k].as_u64().unwrap())
        .sum();
    assert_eq!(total, 80);
}

#[test]
fn config_file_with_flag_overrides() {
    let dir = prepared();
    let d = dir.path();
    std::fs::write(
        d.join("run.json"),
        r#"{"k": 4, "learner": "dt", "seed": 3}"#,
    )
    .unwrap();
    ok(d, &["--config", "run.json", "crossval", "--seed", "9"]);
    let r = json(&d.join("out/crossval_learned_dt.json"));
    assert_eq!(r["k"], 4);
    assert_eq!(r["seed"], 9);
    assert_eq!(r["config_echo"]["learner"], "dt");

    std::fs::write(d.join("bad.json"), r#"{"kk": 4}"#).unwrap();
    let out = run(d, &["--config", "bad.json", "crossval"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown config field"));
}

#[test]
fn out_dir_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(BIN)
        .current_dir(dir.path())
        .env("PATCHCORR_OUT_DIR", "elsewhere")
        .args(["gen-synthetic", "--patches", "10", "--bugs", "5"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(dir.path().join("elsewhere/corpus.jsonl").exists());
}

#[test]
fn train_writes_a_loadable_model_and_explain_refuses_inexact_learners() {
    let dir = prepared();
    let d = dir.path();
    ok(d, &["train", "--features", "concat", "--learner", "rf"]);
    let path = d.join("out/model_concat_rf.json");
    let m = patchcorr::learn::TrainedModel::load(&path).unwrap();
    assert_eq!(m.feature_count, 18 + 72);
    assert_eq!(json(&path)["feature_names"].as_array().unwrap().len(), 90);

    ok(
        d,
        &[
            "explain",
            "--features",
            "concat",
            "--model-file",
            "out/model_concat_rf.json",
        ],
    );
    assert!(d.join("out/explain_concat_rf.csv").exists());

    for learner in ["nb", "dnn"] {
        let out = run(d, &["explain", "--learner", learner]);
        assert_eq!(out.status.code(), Some(4), "{learner}");
        assert!(String::from_utf8_lossy(&out.stderr).contains("error[explain]"));
    }
    let out = run(
        d,
        &["explain", "--learner", "gbt", "--interaction", "nope,B-0"],
    );
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn explain_artifacts() {
    let dir = prepared();
    let d = dir.path();
    let out = ok(
        d,
        &[
            "explain",
            "--features",
            "concat",
            "--learner",
            "gbt",
            "--interaction",
            "B-0,wrapsIf",
        ],
    );
    assert!(out.contains("Margin space"), "{out}");
    let csv = std::fs::read_to_string(d.join("out/explain_concat_gbt.csv")).unwrap();
    assert_eq!(
        csv.lines().next().unwrap(),
        "patch_id,feature_name,contribution"
    );
    assert_eq!(csv.lines().count(), 1 + 80 * 90);
    let imp = json(&d.join("out/importance_concat_gbt.json"));
    assert_eq!(imp["space"], "margin");
    assert!(imp["max_additivity_gap"].as_f64().unwrap() <= 1e-6);
    assert_eq!(imp["importance"]["ranked"].as_array().unwrap().len(), 90);
    let plot = json(&d.join("out/plot_concat_gbt.json"));
    assert_eq!(plot["features"].as_array().unwrap().len(), 20);
    let inter = json(&d.join("out/interaction_concat_gbt.json"));
    assert_eq!(inter["per_patch"].as_array().unwrap().len(), 80);
}

#[test]
fn every_json_artifact_embeds_the_configuration() {
    let dir = prepared();
    let d = dir.path();
    ok(d, &["stats"]);
    ok(d, &["crossval", "--k", "4"]);
    for entry in std::fs::read_dir(d.join("out")).unwrap() {
        let p = entry.unwrap().path();
        if p.extension().is_some_and(|e| e == "json") {
            let v = json(&p);
            assert!(
                v.get("run_config").is_some() || v.get("config_echo").is_some(),
                "{} has no configuration",
                p.display()
            );
        }
    }
}
