//! Layer-wise probing of self-supervised speech embeddings for pathological
//! speech detection.
//!
//! The pipeline: embedding files ([`corpus_store`]) are pooled over time,
//! layer groups and speakers ([`aggregate`]), classified with an RBF SVM
//! ([`svm`], [`platt`]) or a feedforward network ([`ffn`]) selected by
//! grid-search cross-validation ([`model_selection`]), applied to
//! out-of-domain corpora ([`cross_eval`]), and inspected through
//! decision-boundary maps ([`boundary`]) projected with t-SNE ([`tsne`]).
//! [`synth`] generates corpora with controlled confounds; [`cli`] wires
//! everything into workspace commands.

pub mod aggregate;
pub mod boundary;
pub mod cli;
pub mod corpus_store;
pub mod cross_eval;
pub mod error;
pub mod ffn;
pub mod model;
pub mod model_selection;
pub mod platt;
pub mod scaler;
pub mod seed;
pub mod svm;
pub mod synth;
pub mod tsne;

pub use error::{Error, Result};
