//! Drives the command-line pipeline in-process on a fresh workspace:
//! synth, validate, aggregate, train, eval, crosseval, boundary, project
//! and report. Every artifact lands under the printed workspace directory.
//!
//!     cargo run --release --example full_pipeline [-- <workspace>]

use clap::Parser;
use pathoprobe::cli::{run, Cli};

fn step(args: &[&str]) -> pathoprobe::Result<()> {
    println!("$ pathoprobe {}", args[1..].join(" "));
    run(&Cli::parse_from(args))
}

fn with<'a>(base: &[&'a str], rest: &[&'a str]) -> Vec<&'a str> {
    base.iter().chain(rest).copied().collect()
}

fn main() -> pathoprobe::Result<()> {
    let keep = std::env::args().nth(1);
    let tmp = tempfile::tempdir().expect("temp dir");
    let ws = keep.unwrap_or_else(|| tmp.path().display().to_string());
    let spec = format!("{ws}/small.json");
    std::fs::create_dir_all(&ws).expect("workspace");
    std::fs::write(&spec, r#"{"corpus_id": "demo", "n_speakers_per_class": 25}"#).expect("spec");

    let base = ["pathoprobe", "--workspace", &ws, "--seed", "7"];
    step(&with(&base, &["synth", "--spec", &spec]))?;
    step(&with(&base, &["synth", "--spec", &spec, "--shift", "condition", "--magnitude", "8"]))?;
    let corpora = ["demo", "demo-condition-8"];
    for c in corpora {
        let manifest = format!("{ws}/corpora/{c}/manifest.json");
        step(&with(&base, &["validate", "--manifest", &manifest]))?;
        step(&with(&base, &["aggregate", "--manifest", &manifest]))?;
    }
    let mut models = Vec::new();
    for g in ["1-3", "4-6", "7-9", "10-12"] {
        let features = format!("{ws}/features/demo/{g}.speaker.tsv");
        step(&with(&base, &["train", "--features", &features, "--estimator", "svm"]))?;
        let model = format!("{ws}/models/demo.{g}.speaker.svm.json");
        step(&with(&base, &["eval", "--model", &model, "--features", &features, "--split", "test"]))?;
        models.push(model);
    }
    let mut args = with(&base, &["crosseval", "--models"]);
    args.extend(models.iter().map(String::as_str));
    args.push("--corpora");
    args.extend(corpora);
    step(&args)?;
    let features = format!("{ws}/features/demo/1-3.speaker.tsv");
    step(&with(&base, &["boundary", "--model", &models[0], "--features", &features, "--pairs", "60", "--lines", "20", "--sphere-samples", "3"]))?;
    step(&with(&base, &["project", "--model", &models[0], "--features", &features, "--perplexity", "15"]))?;
    step(&with(&base, &["report"]))?;
    println!("workspace: {ws}");
    Ok(())
}
