//! Trained classifiers behind one interface, plus the on-disk model
//! document (JSON, exact float round trip).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::aggregate::LayerGroup;
use crate::corpus_store::Label;
use crate::error::{Error, Result};
use crate::ffn::FfnModel;
use crate::svm::SvmModel;

/// A classifier that emits the probability of the pathologic class.
pub trait ProbabilisticClassifier: Sync {
    fn dim(&self) -> usize;

    fn predict_proba(&self, x: &[f64]) -> Result<f64>;

    /// Pathologic iff the probability is at least 0.5.
    fn predict(&self, x: &[f64]) -> Result<Label> {
        Ok(if self.predict_proba(x)? >= 0.5 {
            Label::Pathologic
        } else {
            Label::Control
        })
    }
}

impl ProbabilisticClassifier for SvmModel {
    fn dim(&self) -> usize {
        SvmModel::dim(self)
    }

    fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        SvmModel::predict_proba(self, x)
    }
}

impl ProbabilisticClassifier for FfnModel {
    fn dim(&self) -> usize {
        FfnModel::dim(self)
    }

    fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        self.forward(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    Svm,
    Ffn,
}

impl std::fmt::Display for Estimator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Estimator::Svm => "svm",
            Estimator::Ffn => "ffn",
        })
    }
}

impl std::str::FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "svm" => Ok(Estimator::Svm),
            "ffn" => Ok(Estimator::Ffn),
            _ => Err(Error::InvalidInput(format!("unknown estimator {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Classifier {
    Svm(SvmModel),
    Ffn(FfnModel),
}

impl Classifier {
    pub fn estimator(&self) -> Estimator {
        match self {
            Classifier::Svm(_) => Estimator::Svm,
            Classifier::Ffn(_) => Estimator::Ffn,
        }
    }
}

impl ProbabilisticClassifier for Classifier {
    fn dim(&self) -> usize {
        match self {
            Classifier::Svm(m) => m.dim(),
            Classifier::Ffn(m) => m.dim(),
        }
    }

    fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        match self {
            Classifier::Svm(m) => m.predict_proba(x),
            Classifier::Ffn(m) => m.forward(x),
        }
    }
}

/// A classifier bound to the layer group and corpus it was trained on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub model_id: String,
    pub group: LayerGroup,
    pub train_corpus: String,
    pub classifier: Classifier,
    /// Free-form provenance: configuration and seeds that produced the model.
    pub provenance: serde_json::Value,
}

impl TrainedModel {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string(self).expect("model serializes");
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

impl ProbabilisticClassifier for TrainedModel {
    fn dim(&self) -> usize {
        self.classifier.dim()
    }

    fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        self.classifier.predict_proba(x)
    }
}
