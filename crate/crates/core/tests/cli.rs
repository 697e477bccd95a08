mod common;

use common::{cli, cli_ok, small_pipeline, tree, GROUPS};
use serde_json::Value;

fn error_of(out: &std::process::Output) -> Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().rev().find(|l| l.starts_with('{')).expect("json error line");
    serde_json::from_str(line).unwrap()
}

#[test]
fn full_pipeline_produces_every_artifact() {
    let ws = tempfile::tempdir().unwrap();
    small_pipeline(ws.path(), 3, 2, Some("4-6"));
    let files = tree(ws.path());
    for g in GROUPS {
        for name in [
            format!("models/mini.{g}.speaker.svm.json"),
            format!("features/mini/{g}.speaker.tsv"),
            format!("reports/train.mini.{g}.speaker.svm.json"),
            format!("reports/cv.mini.{g}.speaker.svm.tsv"),
        ] {
            assert!(files.contains_key(&name), "missing {name}");
        }
    }
    for name in [
        "models/mini.4-6.speaker.ffn.json",
        "reports/crosseval.crosseval.tsv",
        "reports/report.tsv",
        "reports/report.json",
        "plots/boundary.mini.1-3.speaker.svm.tsv",
        "plots/support_vectors.mini.1-3.speaker.svm.tsv",
        "plots/projection.mini.1-3.speaker.svm.tsv",
    ] {
        assert!(files.contains_key(name), "missing {name}");
    }

    let model: Value = serde_json::from_slice(&files["models/mini.1-3.speaker.svm.json"]).unwrap();
    assert_eq!(model["provenance"]["seed"], 3);
    assert!(model["provenance"]["best_config"].is_object());

    let report = String::from_utf8(files["reports/report.tsv"].clone()).unwrap();
    let svm_row = report.lines().find(|l| l.starts_with("mini\tspeaker\tsvm")).unwrap();
    assert_eq!(svm_row.split('\t').count(), 7);
    assert!(report.lines().any(|l| l.starts_with("mini\tspeaker\tffn")));

    let matrix = String::from_utf8(files["reports/crosseval.crosseval.tsv"].clone()).unwrap();
    let rows: Vec<&str> = matrix.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows[0], "corpus\t1-3\t4-6\t7-9\t10-12");
    assert_eq!(rows.len(), 4);

    let runs = files.keys().filter(|k| k.starts_with("reports/runs/")).count();
    assert!(runs >= 10, "{runs} run logs");
}

#[test]
fn missing_features_is_a_missing_input_error() {
    let ws = tempfile::tempdir().unwrap();
    let out = cli(ws.path(), &["train", "--features", "features/none/1-3.speaker.tsv", "--estimator", "svm"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_of(&out)["error"]["category"], "missing-input");
}

#[test]
fn corrupt_corpus_fails_validation() {
    let ws = tempfile::tempdir().unwrap();
    std::fs::write(ws.path().join("s.json"), r#"{"corpus_id": "tiny", "n_speakers_per_class": 3}"#).unwrap();
    cli_ok(ws.path(), &["synth", "--spec", "s.json"]);
    let victim = ws.path().join("corpora/tiny/emb/tiny-c0000-u00.emb");
    let bytes = std::fs::read(&victim).unwrap();
    std::fs::write(&victim, &bytes[..bytes.len() - 4]).unwrap();
    let out = cli(ws.path(), &["validate", "--manifest", "corpora/tiny/manifest.json"]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(error_of(&out)["error"]["category"], "validation");
    let report: Value =
        serde_json::from_slice(&std::fs::read(ws.path().join("reports/validate.tiny.json")).unwrap()).unwrap();
    assert_eq!(report["pass"], false);
    assert_eq!(report["failures"], 1);
}

#[test]
fn bad_arguments_are_rejected() {
    let ws = tempfile::tempdir().unwrap();
    assert!(!cli(ws.path(), &["--jobs", "0", "report"]).status.success());
    assert!(!cli(ws.path(), &["synth", "--magnitude", "3"]).status.success());
    assert!(!cli(ws.path(), &["train", "--estimator", "svm"]).status.success());
}

#[test]
fn reruns_are_byte_identical_across_thread_counts() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    small_pipeline(a.path(), 11, 1, Some("1-3"));
    small_pipeline(b.path(), 11, 4, Some("1-3"));
    let (ta, tb) = (tree(a.path()), tree(b.path()));
    assert_eq!(ta.keys().collect::<Vec<_>>(), tb.keys().collect::<Vec<_>>());
    for (k, v) in &ta {
        assert!(tb[k] == *v, "{k} differs");
    }
}
