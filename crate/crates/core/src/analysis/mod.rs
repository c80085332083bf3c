//! Discussion-level embeddings and what can be measured on them: a 2-D PCA
//! projection, k-NN probe accuracy, silhouette, polarization statistics, and
//! nearest-prototype lookup.

mod io;
mod metrics;
mod pca;

use std::collections::{BTreeMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoder::{encode_values, EncoderConfig, EncoderError, EncoderParams, TreeView};
use crate::graph::Corpus;
use crate::numerics::{NumericsError, RngStream};

pub use io::{
    analyze, read_embeddings_csv, write_embeddings_csv, write_projection_csv, AnalysisConfig, AnalysisReport,
    FieldMetrics, Metric, EMBEDDING_ID_COLUMNS,
};
pub use metrics::{knn_probe, nearest_prototypes, polarization_metrics, silhouette, LabelStats, Polarization};
pub use pca::{pca_2d, Projection, ProjectionRow};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("need at least {needed} rows, have {found}")]
    TooFewRows { needed: usize, found: usize },
    #[error("duplicate discussion id {0:?}")]
    DuplicateId(String),
    #[error("embedding of {discussion_id:?} has dimension {found}, expected {expected}")]
    Dimension {
        discussion_id: String,
        expected: usize,
        found: usize,
    },
    #[error("embedding of {0:?} is not finite")]
    NonFinite(String),
    #[error("k must be odd and at least 1, got {0}")]
    BadK(usize),
    #[error("k = {k} exceeds {available} available rows")]
    KTooLarge { k: usize, available: usize },
    #[error("folds must be at least 2, got {0}")]
    BadFolds(usize),
    #[error("label {label:?} has {count} members, needs at least {needed}")]
    LabelRarity { label: String, count: usize, needed: usize },
    #[error("need at least 2 distinct labels, found {0}")]
    TooFewLabels(usize),
    #[error("empty embedding set")]
    Empty,
    #[error("query has dimension {found}, set has {expected}")]
    QueryDimension { expected: usize, found: usize },
    #[error("embeddings file: {0}")]
    Csv(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelField {
    Community,
    #[default]
    Group,
}

impl LabelField {
    pub fn name(self) -> &'static str {
        match self {
            LabelField::Community => "community",
            LabelField::Group => "group",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingRow {
    pub discussion_id: String,
    pub community_id: String,
    pub group_id: String,
    pub embedding: Vec<f64>,
}

impl EmbeddingRow {
    pub fn label(&self, field: LabelField) -> &str {
        match field {
            LabelField::Community => &self.community_id,
            LabelField::Group => &self.group_id,
        }
    }
}

/// Rows with unique ids and equal-length, finite embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSet {
    rows: Vec<EmbeddingRow>,
    dim: usize,
}

impl EmbeddingSet {
    pub fn new(rows: Vec<EmbeddingRow>) -> Result<Self, AnalysisError> {
        let dim = rows.first().map_or(0, |r| r.embedding.len());
        let mut seen = HashSet::new();
        for r in &rows {
            if !seen.insert(r.discussion_id.as_str()) {
                return Err(AnalysisError::DuplicateId(r.discussion_id.clone()));
            }
            if r.embedding.len() != dim {
                return Err(AnalysisError::Dimension {
                    discussion_id: r.discussion_id.clone(),
                    expected: dim,
                    found: r.embedding.len(),
                });
            }
            if r.embedding.iter().any(|x| !x.is_finite()) {
                return Err(AnalysisError::NonFinite(r.discussion_id.clone()));
            }
        }
        Ok(Self { rows, dim })
    }

    pub fn rows(&self) -> &[EmbeddingRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn labels(&self, field: LabelField) -> Vec<&str> {
        self.rows.iter().map(|r| r.label(field)).collect()
    }

    /// Same rows with every embedding passed through `f`.
    pub fn map_embeddings(&self, f: impl Fn(&[f64]) -> Vec<f64>) -> Result<Self, AnalysisError> {
        Self::new(
            self.rows
                .iter()
                .map(|r| EmbeddingRow {
                    embedding: f(&r.embedding),
                    ..r.clone()
                })
                .collect(),
        )
    }

    /// Rows with the selected indices, in the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
            dim: self.dim,
        }
    }
}

/// Mean final-layer representation over the non-root comments of each
/// uncorrupted tree (the root alone for single-comment trees).
pub fn embed_corpus(
    params: &EncoderParams<f64>,
    config: &EncoderConfig,
    corpus: &Corpus,
) -> Result<EmbeddingSet, AnalysisError> {
    params.validate(config)?;
    let rows = corpus
        .trees
        .par_iter()
        .map(|t| {
            let view = TreeView::full(t);
            let h = encode_values(&view, &params.store, config)?;
            let nodes = view.readout_nodes();
            let d = h.cols();
            let mut e = vec![0.0; d];
            for &v in &nodes {
                for (acc, x) in e.iter_mut().zip(h.row(v)) {
                    *acc += x;
                }
            }
            let inv = 1.0 / nodes.len() as f64;
            e.iter_mut().for_each(|x| *x *= inv);
            Ok(EmbeddingRow {
                discussion_id: t.discussion_id.clone(),
                community_id: t.community_id.clone(),
                group_id: corpus.group_of(t).to_string(),
                embedding: e,
            })
        })
        .collect::<Result<Vec<_>, EncoderError>>()?;
    EmbeddingSet::new(rows)
}

/// Splits corpus indices into `(train, held_out)`, holding out
/// `round(fraction · size)` discussions of every community.
pub fn stratified_split(corpus: &Corpus, fraction: f64, rng: &mut RngStream) -> (Vec<usize>, Vec<usize>) {
    let mut by_community: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, t) in corpus.trees.iter().enumerate() {
        by_community.entry(t.community_id.as_str()).or_default().push(i);
    }
    let mut train = Vec::new();
    let mut held = Vec::new();
    for members in by_community.into_values() {
        let k = (fraction * members.len() as f64).round() as usize;
        let picked: HashSet<usize> = rng.sample_indices(members.len(), k).into_iter().collect();
        for (j, &i) in members.iter().enumerate() {
            if picked.contains(&j) {
                held.push(i);
            } else {
                train.push(i);
            }
        }
    }
    train.sort_unstable();
    held.sort_unstable();
    (train, held)
}

#[cfg(test)]
mod tests;
