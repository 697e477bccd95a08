//! Trains one SVM per layer group on a synthetic corpus and applies all of
//! them to healthy corpora with different recording conditions and content.
//! The matrix reports the percentage of speakers classified as pathologic.
//!
//!     cargo run --release --example cross_corpus

use pathoprobe::aggregate::{build_all_groups, Level};
use pathoprobe::cross_eval::eval_matrix;
use pathoprobe::model::TrainedModel;
use pathoprobe::model_selection::{accuracy, fit_config, grid_search_cv, split_train_test, GridSpec, TrainSettings};
use pathoprobe::synth::{gen_corpus, gen_shifted_variant, ShiftKind, SynthSpec};

fn main() -> pathoprobe::Result<()> {
    let dir = tempfile::tempdir().expect("temp dir");
    let spec = SynthSpec::default();
    let base = gen_corpus(&spec, dir.path().join("base"))?;
    let settings = TrainSettings::default();
    let mut models = Vec::new();
    for data in build_all_groups(&base, Level::Speaker)? {
        let (train, test) = split_train_test(&data, 0.8, 1)?;
        let cv = grid_search_cv(&train, &GridSpec::svm(), 5, 2, &settings)?;
        let classifier = fit_config(&train, cv.best_config(), &settings, 3)?;
        println!("group {:>5}: {} test accuracy {:.3}", data.group.name(), cv.best_config(), accuracy(&classifier, &test)?);
        models.push(TrainedModel {
            model_id: format!("synth.{}", data.group),
            group: data.group,
            train_corpus: spec.corpus_id.clone(),
            classifier,
            provenance: serde_json::Value::Null,
        });
    }

    let mut corpora = Vec::new();
    for (kind, magnitude) in [
        (ShiftKind::Condition, 0.0),
        (ShiftKind::Condition, 8.0),
        (ShiftKind::Content, 8.0),
        (ShiftKind::Age, 10.0),
    ] {
        let m = gen_shifted_variant(&spec, kind, magnitude, dir.path().join(format!("{kind}-{magnitude}")))?;
        corpora.push((m.corpus_id.clone(), build_all_groups(&m, Level::Speaker)?.to_vec()));
    }
    let matrix = eval_matrix(&models, &corpora)?;
    println!("\n% classified as pathologic");
    print!("{}", matrix.to_tsv());
    Ok(())
}
