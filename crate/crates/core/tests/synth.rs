use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use pathoprobe::aggregate::{build_dataset, FeatureMatrix, LayerGroup, Level};
use pathoprobe::corpus_store::{validate_corpus, Label, LabelScheme};
use pathoprobe::model_selection::{accuracy, fit_config, grid_search_cv, split_train_test, GridSpec, TrainSettings};
use pathoprobe::synth::{gen_corpus, gen_shifted_variant, ShiftKind, SynthBasis, SynthSpec};

fn small(seed: u64) -> SynthSpec {
    SynthSpec {
        n_speakers_per_class: 12,
        seed,
        ..SynthSpec::default()
    }
}

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for sub in [dir.to_path_buf(), dir.join("emb")] {
        for e in fs::read_dir(&sub).unwrap() {
            let p = e.unwrap().path();
            if p.is_file() {
                out.insert(p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

fn class_means(data: &FeatureMatrix) -> (Vec<f64>, Vec<f64>) {
    let mean = |label| {
        let rows: Vec<&[f64]> = data.rows.iter().filter(|r| r.label == label).map(|r| r.x.as_slice()).collect();
        let mut m = vec![0.0; data.dim()];
        for r in &rows {
            m.iter_mut().zip(*r).for_each(|(a, b)| *a += b / rows.len() as f64);
        }
        m
    };
    (mean(Label::Control), mean(Label::Pathologic))
}

#[test]
fn same_spec_and_seed_give_identical_bytes() {
    let (a, b, c) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    gen_corpus(&small(4), a.path()).unwrap();
    gen_corpus(&small(4), b.path()).unwrap();
    gen_corpus(&small(5), c.path()).unwrap();
    let (fa, fb, fc) = (files(a.path()), files(b.path()), files(c.path()));
    assert_eq!(fa.len(), 2 + 24 * 3);
    assert_eq!(fa, fb);
    assert_ne!(fa, fc);
}

#[test]
fn generated_corpora_validate() {
    let dir = tempfile::tempdir().unwrap();
    let base = small(1);
    let m = gen_corpus(&base, dir.path().join("base")).unwrap();
    let report = validate_corpus(&m);
    assert!(report.pass, "{report:?}");
    assert_eq!((report.utterances, report.speakers), (72, 24));
    for (kind, magnitude) in [(ShiftKind::Condition, 8.0), (ShiftKind::Age, 10.0), (ShiftKind::Content, 8.0)] {
        let m = gen_shifted_variant(&base, kind, magnitude, dir.path().join(kind.to_string())).unwrap();
        assert!(validate_corpus(&m).pass);
        assert_eq!(m.label_scheme, LabelScheme::Control);
        assert!(m.utterances.iter().all(|u| u.label == Label::Control));
        assert_eq!(m.utterances.len(), 36);
    }
}

#[test]
fn invalid_specs_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    for spec in [
        SynthSpec { noise_std: 0.0, ..small(0) },
        SynthSpec { content_clusters: 0, ..small(0) },
        SynthSpec { label_separation: -1.0, ..small(0) },
    ] {
        assert!(gen_corpus(&spec, dir.path()).is_err());
    }
    let mut spec = small(0);
    spec.layer_profile.age[2] = -0.5;
    assert!(gen_corpus(&spec, dir.path()).is_err());
}

#[test]
fn class_mean_distance_matches_separation() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec {
        n_speakers_per_class: 100,
        seed: 21,
        ..SynthSpec::default()
    };
    let m = gen_corpus(&spec, dir.path()).unwrap();
    let data = build_dataset(&m, LayerGroup::L1_3, Level::Speaker).unwrap();
    let (c, p) = class_means(&data);
    let diff: Vec<f64> = p.iter().zip(&c).map(|(a, b)| a - b).collect();
    let along_axis = dot(&diff, &SynthBasis::new(&spec).label_axis) / spec.noise_std;
    let euclid = dot(&diff, &diff).sqrt() / spec.noise_std;
    for d in [along_axis, euclid] {
        assert!((d - spec.label_separation).abs() <= 0.05 * spec.label_separation, "distance {d}");
    }
}

#[test]
fn zeroed_profile_weight_decouples_the_covariate() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = SynthSpec {
        n_speakers_per_class: 100,
        seed: 8,
        ..SynthSpec::default()
    };
    spec.layer_profile.age = [0.0, 1.0, 1.0, 0.0];
    let m = gen_corpus(&spec, dir.path()).unwrap();
    let basis = SynthBasis::new(&spec);
    let ages: BTreeMap<&str, f64> = m.utterances.iter().map(|u| (u.speaker_id.as_str(), u.age_years.unwrap())).collect();

    let age_corr = |group| {
        let data = build_dataset(&m, group, Level::Speaker).unwrap();
        let proj: Vec<f64> = data.rows.iter().map(|r| dot(&r.x, &basis.age_axis)).collect();
        let age: Vec<f64> = data.rows.iter().map(|r| ages[r.unit_id.as_str()]).collect();
        assert_eq!(proj.len(), 200);
        pearson(&proj, &age)
    };
    assert!(age_corr(LayerGroup::L1_3).abs() < 0.1);
    assert!(age_corr(LayerGroup::L4_6) > 0.5);

    // content is off in groups 1-3 by default
    let content: BTreeMap<&str, usize> = m
        .utterances
        .iter()
        .map(|u| (u.utterance_id.as_str(), u.content_tag.trim_start_matches("content-").parse().unwrap()))
        .collect();
    let content_corr = |group| {
        let data = build_dataset(&m, group, Level::Utterance).unwrap();
        let rows = &data.rows[..200];
        let proj: Vec<f64> = rows.iter().map(|r| dot(&r.x, &basis.content_centers[0])).collect();
        let hit: Vec<f64> = rows.iter().map(|r| f64::from(content[r.unit_id.as_str()] == 0)).collect();
        pearson(&proj, &hit)
    };
    assert!(content_corr(LayerGroup::L1_3).abs() < 0.1);
    assert!(content_corr(LayerGroup::L7_9) > 0.5);
}

fn svm_test_accuracy(spec: &SynthSpec) -> f64 {
    let dir = tempfile::tempdir().unwrap();
    let m = gen_corpus(spec, dir.path()).unwrap();
    let data = build_dataset(&m, LayerGroup::L1_3, Level::Speaker).unwrap();
    let (train, test) = split_train_test(&data, 0.8, 2).unwrap();
    let settings = TrainSettings::default();
    let cv = grid_search_cv(&train, &GridSpec::svm(), 5, 2, &settings).unwrap();
    let model = fit_config(&train, cv.best_config(), &settings, 2).unwrap();
    accuracy(&model, &test).unwrap()
}

#[test]
fn label_separation_controls_svm_accuracy() {
    let null = SynthSpec {
        label_separation: 0.0,
        condition_offset: 0.0,
        age_scale: 0.0,
        content_spread: 0.0,
        seed: 13,
        ..SynthSpec::default()
    };
    let acc = svm_test_accuracy(&null);
    assert!((acc - 0.5).abs() <= 0.1, "accuracy {acc}");
    assert_eq!(svm_test_accuracy(&SynthSpec::default()), 1.0);
}
