//! Stratified train/test split, 5-fold grid search over the SVM grid, final
//! fit and a binomial significance test on the held-out set.
//!
//!     cargo run --release --example grid_search

use pathoprobe::aggregate::{build_dataset, LayerGroup, Level};
use pathoprobe::model_selection::{
    correct_count, fit_config, grid_search_cv, significance_test, split_train_test, GridSpec, TrainSettings,
};
use pathoprobe::seed::derive_seed;
use pathoprobe::synth::{gen_corpus, SynthSpec};

fn main() -> pathoprobe::Result<()> {
    let dir = tempfile::tempdir().expect("temp dir");
    // a harder corpus than the default so the grid has something to choose
    let spec = SynthSpec {
        n_speakers_per_class: 40,
        label_separation: 1.0,
        ..SynthSpec::default()
    };
    let manifest = gen_corpus(&spec, dir.path())?;
    let data = build_dataset(&manifest, LayerGroup::L1_3, Level::Speaker)?;

    let seed = 42;
    let (train, test) = split_train_test(&data, 0.8, derive_seed(seed, "split"))?;
    let settings = TrainSettings::default();
    let cv = grid_search_cv(&train, &GridSpec::svm(), 5, derive_seed(seed, "cv"), &settings)?;
    print!("{}", cv.to_tsv());
    println!("selected {} (mean fold accuracy {:.3})", cv.best_config(), cv.best_cell().mean);

    let model = fit_config(&train, cv.best_config(), &settings, derive_seed(seed, "final"))?;
    let (correct, n) = correct_count(&model, &test)?;
    let p = significance_test(correct as u64, n as u64, 0.5)?;
    println!("test accuracy {correct}/{n}, one-sided binomial p = {p:.2e}");
    Ok(())
}
