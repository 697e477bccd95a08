//! Samples points on the p = 0.5 surface of a trained SVM: bisection between
//! opposite-class pairs, lines between keypoints and spheres around them.
//!
//!     cargo run --release --example decision_boundary

use pathoprobe::aggregate::{build_dataset, LayerGroup, Level};
use pathoprobe::boundary::{
    export_support_vectors, generate_keypoints, refine_keypoints, refinement_bound, Generation, DEFAULT_TOL,
};
use pathoprobe::corpus_store::Label;
use pathoprobe::model::ProbabilisticClassifier;
use pathoprobe::model_selection::{fit_config, GridConfig, TrainSettings};
use pathoprobe::synth::{gen_corpus, SynthSpec};

fn main() -> pathoprobe::Result<()> {
    let dir = tempfile::tempdir().expect("temp dir");
    let spec = SynthSpec {
        n_speakers_per_class: 40,
        label_separation: 2.0,
        ..SynthSpec::default()
    };
    let manifest = gen_corpus(&spec, dir.path())?;
    let data = build_dataset(&manifest, LayerGroup::L1_3, Level::Speaker)?;
    let model = fit_config(&data, &GridConfig::Svm { c: 10.0, gamma: 1e-3 }, &TrainSettings::default(), 0)?;

    let pick = |l: Label| -> Vec<&[f64]> { data.rows.iter().filter(|r| r.label == l).map(|r| r.x.as_slice()).collect() };
    let keypoints = generate_keypoints(&model, &pick(Label::Pathologic), &pick(Label::Control), 100, DEFAULT_TOL, 1)?;
    let (lines, sphere) = (40, 5);
    let mut cloud = refine_keypoints(&model, &keypoints, lines, sphere, DEFAULT_TOL, 2)?;
    cloud.support_vectors = export_support_vectors(&model).0;

    println!("{} keypoints from 100 pairs", keypoints.len());
    for g in [Generation::Segment, Generation::KeypointLine, Generation::Hypersphere] {
        println!("  {g:>13}: {}", cloud.count(g));
    }
    println!(
        "total {} (bound {}), {} support vectors",
        cloud.points.len(),
        keypoints.len() + refinement_bound(keypoints.len(), lines, sphere),
        cloud.support_vectors.len()
    );
    let worst = cloud
        .points
        .iter()
        .map(|p| (model.predict_proba(&p.x).unwrap() - 0.5).abs())
        .fold(0.0, f64::max);
    println!("largest |p - 0.5| on re-evaluation: {worst:.2e}");
    let out = dir.path().join("boundary.tsv");
    std::fs::write(&out, cloud.to_tsv()).expect("write cloud");
    println!("cloud written to {}", out.display());
    Ok(())
}
