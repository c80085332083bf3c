use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::format::fmt17;
use crate::numerics::RngStream;

use super::{
    knn_probe, pca_2d, polarization_metrics, silhouette, AnalysisError, EmbeddingRow, EmbeddingSet, LabelField,
    Polarization, Projection,
};

pub const EMBEDDING_ID_COLUMNS: [&str; 3] = ["discussion_id", "community_id", "group_id"];

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> AnalysisError + '_ {
    move |source| AnalysisError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn csv_err(e: csv::Error) -> AnalysisError {
    AnalysisError::Csv(e.to_string())
}

pub fn write_embeddings_csv(set: &EmbeddingSet, path: &Path) -> Result<(), AnalysisError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = csv::Writer::from_writer(file);
    let mut header: Vec<String> = EMBEDDING_ID_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend((0..set.dim()).map(|i| format!("e{i}")));
    w.write_record(&header).map_err(csv_err)?;
    for r in set.rows() {
        let mut rec = vec![r.discussion_id.clone(), r.community_id.clone(), r.group_id.clone()];
        rec.extend(r.embedding.iter().map(|&x| fmt17(x)));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_embeddings_csv(path: &Path) -> Result<EmbeddingSet, AnalysisError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut r = csv::Reader::from_reader(file);
    let header = r.headers().map_err(csv_err)?.clone();
    let dim = header.len().saturating_sub(3);
    let expected: Vec<String> = EMBEDDING_ID_COLUMNS
        .iter()
        .map(|s| s.to_string())
        .chain((0..dim).map(|i| format!("e{i}")))
        .collect();
    if header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(AnalysisError::Csv(format!(
            "header must be discussion_id,community_id,group_id,e0..e{{d-1}}, got {:?}",
            header.iter().collect::<Vec<_>>()
        )));
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let embedding = rec
            .iter()
            .skip(3)
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| AnalysisError::Csv(format!("row {}: {e}", i + 2)))?;
        rows.push(EmbeddingRow {
            discussion_id: rec[0].to_string(),
            community_id: rec[1].to_string(),
            group_id: rec[2].to_string(),
            embedding,
        });
    }
    EmbeddingSet::new(rows)
}

pub fn write_projection_csv(projection: &Projection, path: &Path) -> Result<(), AnalysisError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(["discussion_id", "x", "y", "group_id"])
        .map_err(csv_err)?;
    for r in &projection.rows {
        w.write_record([r.discussion_id.as_str(), &fmt17(r.x), &fmt17(r.y), r.group_id.as_str()])
            .map_err(csv_err)?;
    }
    w.flush().map_err(io_err(path))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    pub k: usize,
    pub folds: usize,
    pub seed: u64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            k: 5,
            folds: 4,
            seed: 0,
        }
    }
}

/// A metric per label field, or why it could not be computed.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Metric<T> {
    Value(T),
    Unavailable { error: String },
}

impl<T> Metric<T> {
    fn from(r: Result<T, AnalysisError>) -> Self {
        match r {
            Ok(v) => Metric::Value(v),
            Err(e) => Metric::Unavailable { error: e.to_string() },
        }
    }

    pub fn value(&self) -> Option<&T> {
        match self {
            Metric::Value(v) => Some(v),
            Metric::Unavailable { .. } => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FieldMetrics {
    pub knn_accuracy: Metric<f64>,
    pub silhouette: Metric<f64>,
    pub polarization: Metric<Polarization>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AnalysisReport {
    pub rows: usize,
    pub dim: usize,
    pub config: AnalysisConfig,
    pub explained_variance: [f64; 2],
    pub zero_variance: bool,
    pub group: FieldMetrics,
    pub community: FieldMetrics,
}

impl AnalysisReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

/// Projection plus separation and polarization metrics at both label levels.
/// Each field's k-NN folds use their own stream derived from `config.seed`.
pub fn analyze(set: &EmbeddingSet, config: &AnalysisConfig) -> Result<(Projection, AnalysisReport), AnalysisError> {
    let projection = pca_2d(set)?;
    let field = |f: LabelField| {
        let mut rng = RngStream::new(config.seed, f as u64);
        FieldMetrics {
            knn_accuracy: Metric::from(knn_probe(set, f, config.k, config.folds, &mut rng)),
            silhouette: Metric::from(silhouette(set, f)),
            polarization: Metric::from(polarization_metrics(set, f)),
        }
    };
    let report = AnalysisReport {
        rows: set.len(),
        dim: set.dim(),
        config: config.clone(),
        explained_variance: projection.explained,
        zero_variance: projection.zero_variance,
        group: field(LabelField::Group),
        community: field(LabelField::Community),
    };
    Ok((projection, report))
}
