//! Out-of-domain application of trained models: the "% classified as
//! pathologic" matrix with corpus rows and layer-group columns.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregate::{FeatureMatrix, LayerGroup};
use crate::corpus_store::Label;
use crate::error::{Error, Result};
use crate::model::{ProbabilisticClassifier, TrainedModel};

/// Rounds to one decimal, as reported.
pub fn round1(v: f64) -> f64 {
    (v * 10.0).round() / 10.0
}

/// Percentage of rows predicted pathologic, rounded to one decimal.
pub fn percent_pathologic(predictions: &[Label]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::Empty("corpus"));
    }
    let hits = predictions.iter().filter(|&&l| l == Label::Pathologic).count();
    Ok(round1(100.0 * hits as f64 / predictions.len() as f64))
}

/// Features are passed through the model's own scaler, never refitted.
pub fn cross_apply(model: &TrainedModel, corpus: &FeatureMatrix) -> Result<f64> {
    if corpus.is_empty() {
        return Err(Error::Empty("corpus"));
    }
    if corpus.group != model.group {
        return Err(Error::GroupMismatch {
            model: model.group.to_string(),
            features: corpus.group.to_string(),
        });
    }
    let predictions = corpus
        .rows
        .iter()
        .map(|r| model.predict(&r.x))
        .collect::<Result<Vec<_>>>()?;
    percent_pathologic(&predictions)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossEvalMatrix {
    pub corpora: Vec<String>,
    pub groups: Vec<LayerGroup>,
    pub model_ids: Vec<String>,
    /// `cells[corpus][group]`, percent in [0, 100].
    pub cells: Vec<Vec<f64>>,
}

impl CrossEvalMatrix {
    pub fn cell(&self, corpus: &str, group: LayerGroup) -> Option<f64> {
        let r = self.corpora.iter().position(|c| c == corpus)?;
        let c = self.groups.iter().position(|&g| g == group)?;
        Some(self.cells[r][c])
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("corpus");
        for g in &self.groups {
            out.push('\t');
            out.push_str(g.name());
        }
        out.push('\n');
        for (name, row) in self.corpora.iter().zip(&self.cells) {
            out.push_str(name);
            for v in row {
                out.push_str(&format!("\t{v:.1}"));
            }
            out.push('\n');
        }
        out
    }
}

/// `models` holds one model per column; `corpora[c][g]` is corpus `c`
/// aggregated at the layer group of `models[g]`.
pub fn eval_matrix(models: &[TrainedModel], corpora: &[(String, Vec<FeatureMatrix>)]) -> Result<CrossEvalMatrix> {
    let mut seen = std::collections::BTreeSet::new();
    for m in models {
        if !seen.insert(m.group) {
            return Err(Error::InvalidInput(format!("two models for layer group {}", m.group)));
        }
    }
    let mut names = std::collections::BTreeSet::new();
    for (name, feats) in corpora {
        if !names.insert(name.as_str()) {
            return Err(Error::InvalidInput(format!("duplicate corpus {name}")));
        }
        if feats.len() != models.len() {
            return Err(Error::InvalidInput(format!(
                "corpus {name} has {} feature matrices for {} models",
                feats.len(),
                models.len()
            )));
        }
    }
    let jobs: Vec<(usize, usize)> = (0..corpora.len()).flat_map(|c| (0..models.len()).map(move |g| (c, g))).collect();
    let values: Vec<f64> = jobs
        .par_iter()
        .map(|&(c, g)| {
            let (name, feats) = &corpora[c];
            cross_apply(&models[g], &feats[g])
                .map_err(|e| e.context(format!("cell [{name}][{}]", models[g].group)))
        })
        .collect::<Result<_>>()?;
    let cells = values.chunks(models.len().max(1)).map(<[f64]>::to_vec).collect();
    Ok(CrossEvalMatrix {
        corpora: corpora.iter().map(|(n, _)| n.clone()).collect(),
        groups: models.iter().map(|m| m.group).collect(),
        model_ids: models.iter().map(|m| m.model_id.clone()).collect(),
        cells,
    })
}
