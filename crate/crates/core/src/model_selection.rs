//! Train/test splitting, stratified k-fold grid search, accuracy and an
//! exact binomial significance test.

use std::collections::BTreeSet;
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregate::FeatureMatrix;
use crate::corpus_store::Label;
use crate::error::{Error, Result};
use crate::ffn::{param_count, train_ffn, Activation, FfnConfig, HIDDEN_UNITS, LEARNING_RATES};
use crate::model::{Classifier, Estimator, ProbabilisticClassifier};
use crate::seed::derive_seed;
use crate::svm::{train_svm, SvmParams, DEFAULT_TOL};

pub const SVM_GAMMAS: [f64; 5] = [1e-5, 1e-4, 1e-3, 1e-2, 1e-1];
pub const SVM_CS: [f64; 4] = [5.0, 10.0, 20.0, 50.0];
pub const DEFAULT_FOLDS: usize = 5;
pub const TRAIN_RATIO: f64 = 0.8;
/// Minimum speakers per class accepted by `split_train_test`.
pub const MIN_ROWS_PER_CLASS: usize = 5;

/// Speakers in order of first appearance, their labels, and the speaker
/// index of every row.
pub fn speaker_groups(data: &FeatureMatrix) -> Result<(Vec<Label>, Vec<usize>)> {
    let mut index = std::collections::HashMap::new();
    let mut labels = Vec::new();
    let mut of_row = Vec::with_capacity(data.len());
    for row in &data.rows {
        let g = *index.entry(row.speaker_id.as_str()).or_insert_with(|| {
            labels.push(row.label);
            labels.len() - 1
        });
        if labels[g] != row.label {
            return Err(Error::InvalidInput(format!("speaker {} has rows with both labels", row.speaker_id)));
        }
        of_row.push(g);
    }
    Ok((labels, of_row))
}

/// Stratified split by speaker: each class contributes
/// `round(ratio * n_speakers)` speakers, with all their rows, to the
/// training side. Both sides keep the input's row order.
pub fn split_train_test(data: &FeatureMatrix, ratio: f64, seed: u64) -> Result<(FeatureMatrix, FeatureMatrix)> {
    if !(0.0..1.0).contains(&ratio) || ratio == 0.0 {
        return Err(Error::InvalidInput(format!("split ratio must lie in (0, 1), got {ratio}")));
    }
    let (labels, of_row) = speaker_groups(data)?;
    let neg = labels.iter().filter(|&&l| l == Label::Control).count();
    let pos = labels.len() - neg;
    if neg < MIN_ROWS_PER_CLASS || pos < MIN_ROWS_PER_CLASS {
        return Err(Error::TooFewRows(format!(
            "need at least {MIN_ROWS_PER_CLASS} speakers per class, have {neg} control / {pos} pathologic"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut in_train = vec![false; labels.len()];
    for class in [Label::Control, Label::Pathologic] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&g| labels[g] == class).collect();
        idx.shuffle(&mut rng);
        let n_train = (idx.len() as f64 * ratio).round() as usize;
        for &g in &idx[..n_train] {
            in_train[g] = true;
        }
    }
    let (train, test): (Vec<usize>, Vec<usize>) = (0..data.len()).partition(|&i| in_train[of_row[i]]);
    Ok((data.subset(&train), data.subset(&test)))
}

/// Fold index for each row. Rows of each class are shuffled and dealt
/// round-robin, continuing the deal across classes, so fold sizes differ
/// by at most one and so do per-fold class counts.
pub fn stratified_folds(labels: &[Label], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 folds, got {k}")));
    }
    for class in [Label::Control, Label::Pathologic] {
        let n = labels.iter().filter(|&&l| l == class).count();
        if n < k {
            return Err(Error::Degenerate(format!(
                "class {} has {n} rows, fewer than {k} folds",
                class.as_u8()
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![0; labels.len()];
    let mut slot = 0;
    for class in [Label::Control, Label::Pathologic] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        for i in idx {
            assignment[i] = slot % k;
            slot += 1;
        }
    }
    Ok(assignment)
}

/// Fold index for each row, dealing whole speakers with `stratified_folds`.
/// Equal to `stratified_folds` on the row labels when every row is its own
/// speaker.
pub fn stratified_speaker_folds(data: &FeatureMatrix, k: usize, seed: u64) -> Result<Vec<usize>> {
    let (labels, of_row) = speaker_groups(data)?;
    let by_speaker = stratified_folds(&labels, k, seed)?;
    Ok(of_row.iter().map(|&g| by_speaker[g]).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "estimator", rename_all = "lowercase")]
pub enum GridConfig {
    Svm {
        c: f64,
        gamma: f64,
    },
    Ffn {
        learning_rate: f64,
        activation: Activation,
        hidden_layers: usize,
        hidden_units: usize,
    },
}

impl GridConfig {
    pub fn estimator(&self) -> Estimator {
        match self {
            GridConfig::Svm { .. } => Estimator::Svm,
            GridConfig::Ffn { .. } => Estimator::Ffn,
        }
    }

    /// Stable textual key; also used for per-cell seed derivation.
    pub fn key(&self) -> String {
        match *self {
            GridConfig::Svm { c, gamma } => format!("svm:C={c}:gamma={gamma:e}"),
            GridConfig::Ffn {
                learning_rate,
                activation,
                hidden_layers,
                hidden_units,
            } => format!("ffn:lr={learning_rate:e}:act={activation}:layers={hidden_layers}:units={hidden_units}"),
        }
    }

    pub fn ffn_config(&self, base: &FfnConfig, seed: u64) -> Option<FfnConfig> {
        match *self {
            GridConfig::Ffn {
                learning_rate,
                activation,
                hidden_layers,
                hidden_units,
            } => Some(FfnConfig {
                learning_rate,
                activation,
                hidden_layers,
                hidden_units,
                seed,
                ..*base
            }),
            GridConfig::Svm { .. } => None,
        }
    }

    /// Ordering used to break accuracy ties: smaller sorts first and wins.
    fn tie_key(&self, input_dim: usize) -> (f64, f64, f64) {
        match *self {
            GridConfig::Svm { c, gamma } => (c, gamma, 0.0),
            GridConfig::Ffn {
                learning_rate,
                activation,
                hidden_layers,
                hidden_units,
            } => {
                let mut sizes = vec![input_dim];
                sizes.extend(std::iter::repeat(hidden_units).take(hidden_layers));
                sizes.push(1);
                let act = match activation {
                    Activation::Tanh => 0.0,
                    Activation::Relu => 1.0,
                };
                (param_count(&sizes) as f64, learning_rate, act)
            }
        }
    }
}

impl fmt::Display for GridConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.key())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub estimator: Estimator,
    pub configs: Vec<GridConfig>,
}

impl GridSpec {
    /// gamma in {1e-5 .. 1e-1} x C in {5, 10, 20, 50}.
    pub fn svm() -> GridSpec {
        let configs = SVM_CS
            .iter()
            .flat_map(|&c| SVM_GAMMAS.iter().map(move |&gamma| GridConfig::Svm { c, gamma }))
            .collect();
        GridSpec {
            estimator: Estimator::Svm,
            configs,
        }
    }

    /// learning rate x activation x hidden layers {2, 3} x hidden units {32, 64, 128}.
    pub fn ffn() -> GridSpec {
        let mut configs = Vec::new();
        for &learning_rate in &LEARNING_RATES {
            for activation in [Activation::Tanh, Activation::Relu] {
                for hidden_layers in [2, 3] {
                    for &hidden_units in &HIDDEN_UNITS {
                        configs.push(GridConfig::Ffn {
                            learning_rate,
                            activation,
                            hidden_layers,
                            hidden_units,
                        });
                    }
                }
            }
        }
        GridSpec {
            estimator: Estimator::Ffn,
            configs,
        }
    }

    pub fn for_estimator(estimator: Estimator) -> GridSpec {
        match estimator {
            Estimator::Svm => GridSpec::svm(),
            Estimator::Ffn => GridSpec::ffn(),
        }
    }
}

/// Settings shared by every cell of a search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainSettings {
    pub svm_tol: f64,
    pub ffn: FfnConfig,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            svm_tol: DEFAULT_TOL,
            ffn: FfnConfig::default(),
        }
    }
}

/// Trains one configuration on `data`.
pub fn fit_config(data: &FeatureMatrix, config: &GridConfig, settings: &TrainSettings, seed: u64) -> Result<Classifier> {
    data.require_both_classes()?;
    let x = data.features();
    let y = data.labels();
    match *config {
        GridConfig::Svm { c, gamma } => {
            let params = SvmParams {
                c,
                gamma,
                tol: settings.svm_tol,
                seed,
            };
            Ok(Classifier::Svm(train_svm(&x, &y, params)?))
        }
        GridConfig::Ffn { .. } => {
            let cfg = config.ffn_config(&settings.ffn, seed).expect("ffn config");
            let (model, _log) = train_ffn(&x, &y, &cfg)?;
            Ok(Classifier::Ffn(model))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fold {
    pub index: usize,
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub config: GridConfig,
    pub fold_accuracies: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    /// Folds whose training failed (scored as accuracy 0), with the error.
    pub failures: Vec<(usize, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub estimator: Estimator,
    pub k: usize,
    pub seed: u64,
    pub cells: Vec<CellResult>,
    pub best: usize,
    pub folds: Vec<Fold>,
}

impl CvResult {
    pub fn best_config(&self) -> &GridConfig {
        &self.cells[self.best].config
    }

    pub fn best_cell(&self) -> &CellResult {
        &self.cells[self.best]
    }

    /// Delimited table: config, fold accuracies, mean, std.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("config");
        for f in 0..self.k {
            out.push_str(&format!("\tfold{}", f + 1));
        }
        out.push_str("\tmean\tstd\n");
        for cell in &self.cells {
            out.push_str(&cell.config.key());
            for a in &cell.fold_accuracies {
                out.push_str(&format!("\t{a:.6}"));
            }
            out.push_str(&format!("\t{:.6}\t{:.6}\n", cell.mean, cell.std));
        }
        out
    }
}

/// Fraction of rows predicted correctly.
pub fn accuracy<M: ProbabilisticClassifier + ?Sized>(model: &M, data: &FeatureMatrix) -> Result<f64> {
    let (correct, n) = correct_count(model, data)?;
    Ok(correct as f64 / n as f64)
}

pub fn correct_count<M: ProbabilisticClassifier + ?Sized>(model: &M, data: &FeatureMatrix) -> Result<(usize, usize)> {
    if data.is_empty() {
        return Err(Error::Empty("test set"));
    }
    let mut correct = 0;
    for row in &data.rows {
        if model.predict(&row.x)? == row.label {
            correct += 1;
        }
    }
    Ok((correct, data.len()))
}

/// Stratified k-fold search over every grid cell. All cells see the same
/// folds; each cell trains with a seed derived from its key, so results do
/// not depend on execution order.
pub fn grid_search_cv(
    train: &FeatureMatrix,
    spec: &GridSpec,
    k: usize,
    seed: u64,
    settings: &TrainSettings,
) -> Result<CvResult> {
    if spec.configs.is_empty() {
        return Err(Error::Empty("grid"));
    }
    let assignment = stratified_speaker_folds(train, k, derive_seed(seed, "cv-folds"))?;
    let folds: Vec<(FeatureMatrix, FeatureMatrix, Fold)> = (0..k)
        .map(|f| {
            let tr: Vec<usize> = (0..train.len()).filter(|&i| assignment[i] != f).collect();
            let va: Vec<usize> = (0..train.len()).filter(|&i| assignment[i] == f).collect();
            let (tr_m, va_m) = (train.subset(&tr), train.subset(&va));
            let fold = Fold {
                index: f,
                train_ids: tr_m.rows.iter().map(|r| r.unit_id.clone()).collect(),
                val_ids: va_m.rows.iter().map(|r| r.unit_id.clone()).collect(),
            };
            (tr_m, va_m, fold)
        })
        .collect();
    for (tr, va, fold) in &folds {
        if tr.require_both_classes().is_err() || va.is_empty() {
            return Err(Error::Degenerate(format!("fold {} is degenerate", fold.index)));
        }
    }

    let jobs: Vec<(usize, usize)> = (0..spec.configs.len()).flat_map(|c| (0..k).map(move |f| (c, f))).collect();
    let outcomes: Vec<std::result::Result<f64, String>> = jobs
        .par_iter()
        .map(|&(c, f)| {
            let config = &spec.configs[c];
            let cell_seed = derive_seed(seed, &format!("{}#fold{}", config.key(), f));
            let (tr, va, _) = &folds[f];
            fit_config(tr, config, settings, cell_seed)
                .and_then(|m| accuracy(&m, va))
                .map_err(|e| e.to_string())
        })
        .collect();

    let cells: Vec<CellResult> = spec
        .configs
        .iter()
        .enumerate()
        .map(|(c, config)| {
            let mut fold_accuracies = Vec::with_capacity(k);
            let mut failures = Vec::new();
            for f in 0..k {
                match &outcomes[c * k + f] {
                    Ok(a) => fold_accuracies.push(*a),
                    Err(e) => {
                        log::warn!("{} fold {f} failed: {e}", config.key());
                        fold_accuracies.push(0.0);
                        failures.push((f, e.clone()));
                    }
                }
            }
            let mean = fold_accuracies.iter().sum::<f64>() / k as f64;
            let var = fold_accuracies.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / k as f64;
            CellResult {
                config: *config,
                fold_accuracies,
                mean,
                std: var.sqrt(),
                failures,
            }
        })
        .collect();

    let dim = train.dim();
    let best = (0..cells.len())
        .min_by(|&a, &b| {
            cells[b]
                .mean
                .total_cmp(&cells[a].mean)
                .then_with(|| {
                    let (ka, kb) = (cells[a].config.tie_key(dim), cells[b].config.tie_key(dim));
                    ka.0.total_cmp(&kb.0)
                        .then(ka.1.total_cmp(&kb.1))
                        .then(ka.2.total_cmp(&kb.2))
                })
        })
        .expect("grid is nonempty");

    Ok(CvResult {
        estimator: spec.estimator,
        k,
        seed,
        cells,
        best,
        folds: folds.into_iter().map(|(_, _, f)| f).collect(),
    })
}

/// One-sided exact binomial test against `chance`:
/// `P(X >= correct)` for `X ~ Binomial(n, chance)`.
pub fn significance_test(correct: u64, n: u64, chance: f64) -> Result<f64> {
    if n == 0 || correct > n {
        return Err(Error::InvalidInput(format!("invalid counts: {correct} correct of {n}")));
    }
    if !(chance > 0.0 && chance < 1.0) {
        return Err(Error::InvalidInput(format!("chance level must lie in (0, 1), got {chance}")));
    }
    let q = 1.0 - chance;
    if n <= 1000 {
        // Exact for small n: C(n, i) is an integer-valued f64 while it
        // stays below 2^53, and powers of 0.5 are exact.
        let mut total = 0.0;
        let mut binom = 1.0f64; // C(n, 0)
        for i in 0..=n {
            if i >= correct {
                total += binom * chance.powi(i as i32) * q.powi((n - i) as i32);
            }
            binom = binom * (n - i) as f64 / (i + 1) as f64;
        }
        return Ok(total.min(1.0));
    }
    use statrs::function::gamma::ln_gamma;
    let ln_n1 = ln_gamma(n as f64 + 1.0);
    let total: f64 = (correct..=n)
        .map(|i| {
            let ln_c = ln_n1 - ln_gamma(i as f64 + 1.0) - ln_gamma((n - i) as f64 + 1.0);
            (ln_c + i as f64 * chance.ln() + (n - i) as f64 * q.ln()).exp()
        })
        .sum();
    Ok(total.min(1.0))
}

/// Row ids in every fold log, for leak checks against a test set.
pub fn fold_ids(cv: &CvResult) -> BTreeSet<&str> {
    cv.folds
        .iter()
        .flat_map(|f| f.train_ids.iter().chain(&f.val_ids))
        .map(String::as_str)
        .collect()
}
