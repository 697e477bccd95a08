//! Exact t-SNE: first on two Gaussian blobs, then on data, support vectors
//! and decision-boundary points of a trained SVM, as in a boundary plot.
//!
//!     cargo run --release --example tsne_projection

use pathoprobe::aggregate::{build_dataset, LayerGroup, Level};
use pathoprobe::boundary::{export_support_vectors, generate_keypoints, project_boundary, refine_keypoints, DEFAULT_TOL};
use pathoprobe::corpus_store::Label;
use pathoprobe::model_selection::{fit_config, GridConfig, TrainSettings};
use pathoprobe::synth::{gen_corpus, SynthSpec};
use pathoprobe::tsne::{tsne_embed, TsneConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn main() -> pathoprobe::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let blobs: Vec<Vec<f64>> = (0..60)
        .map(|i| {
            (0..10)
                .map(|d| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z + if d == 0 && i >= 30 { 15.0 } else { 0.0 }
                })
                .collect()
        })
        .collect();
    let result = tsne_embed(&blobs, &TsneConfig::new(10.0, 1))?;
    println!(
        "blobs: KL {:.3} after exaggeration, {:.3} at the end",
        result.kl_at(251),
        result.kl_at(1000)
    );
    let centroid = |r: std::ops::Range<usize>| {
        let n = r.len() as f64;
        let c = result.coords[r].iter().fold([0.0, 0.0], |a, p| [a[0] + p[0], a[1] + p[1]]);
        [c[0] / n, c[1] / n]
    };
    println!("blob centroids {:.1?} and {:.1?}", centroid(0..30), centroid(30..60));

    let dir = tempfile::tempdir().expect("temp dir");
    let spec = SynthSpec {
        n_speakers_per_class: 30,
        label_separation: 3.0,
        ..SynthSpec::default()
    };
    let data = build_dataset(&gen_corpus(&spec, dir.path())?, LayerGroup::L1_3, Level::Speaker)?;
    let model = fit_config(&data, &GridConfig::Svm { c: 10.0, gamma: 1e-3 }, &TrainSettings::default(), 0)?;
    let pick = |l: Label| -> Vec<&[f64]> { data.rows.iter().filter(|r| r.label == l).map(|r| r.x.as_slice()).collect() };
    let keypoints = generate_keypoints(&model, &pick(Label::Pathologic), &pick(Label::Control), 40, DEFAULT_TOL, 1)?;
    let mut cloud = refine_keypoints(&model, &keypoints, 15, 2, DEFAULT_TOL, 2)?;
    cloud.support_vectors = export_support_vectors(&model).0;
    let projection = project_boundary(&data, &cloud, 20.0, 3)?;
    println!("\nboundary plot: {} points, final KL {:.3}", projection.points.len(), projection.kl_final);
    for line in projection.to_tsv().lines().take(4) {
        println!("  {line}");
    }
    Ok(())
}
