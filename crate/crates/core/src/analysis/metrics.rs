use std::cmp::Ordering;
use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::numerics::{cosine, RngStream};

use super::{AnalysisError, EmbeddingSet, LabelField};

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn members_by_label(set: &EmbeddingSet, field: LabelField) -> BTreeMap<&str, Vec<usize>> {
    let mut out: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in set.rows().iter().enumerate() {
        out.entry(r.label(field)).or_default().push(i);
    }
    out
}

fn require_members(groups: &BTreeMap<&str, Vec<usize>>, needed: usize) -> Result<(), AnalysisError> {
    for (label, m) in groups {
        if m.len() < needed {
            return Err(AnalysisError::LabelRarity {
                label: label.to_string(),
                count: m.len(),
                needed,
            });
        }
    }
    Ok(())
}

/// Majority label among the `k` cosine-nearest rows of `train`; ties go to
/// the smaller summed distance, then the lexicographically smaller label.
pub(crate) fn knn_predict<'a>(query: &[f64], train: &[(&'a str, &[f64])], k: usize) -> &'a str {
    let mut dist: Vec<(f64, usize)> = train
        .iter()
        .enumerate()
        .map(|(j, (_, e))| (1.0 - cosine(query, e), j))
        .collect();
    dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut votes: BTreeMap<&str, (usize, f64)> = BTreeMap::new();
    for &(d, j) in &dist[..k] {
        let v = votes.entry(train[j].0).or_insert((0, 0.0));
        v.0 += 1;
        v.1 += d;
    }
    let mut best: Option<(&str, usize, f64)> = None;
    for (label, (count, sum)) in votes {
        let better = match best {
            None => true,
            Some((_, bc, bs)) => count > bc || (count == bc && sum < bs),
        };
        if better {
            best = Some((label, count, sum));
        }
    }
    best.expect("k >= 1").0
}

/// Mean over `folds` stratified folds of held-out k-NN accuracy under cosine
/// distance. Fold assignment: for each label in sorted order, its rows are
/// shuffled with `rng` and dealt round-robin into folds.
pub fn knn_probe(
    set: &EmbeddingSet,
    field: LabelField,
    k: usize,
    folds: usize,
    rng: &mut RngStream,
) -> Result<f64, AnalysisError> {
    if k == 0 || k.is_multiple_of(2) {
        return Err(AnalysisError::BadK(k));
    }
    if folds < 2 {
        return Err(AnalysisError::BadFolds(folds));
    }
    let groups = members_by_label(set, field);
    require_members(&groups, folds)?;
    let mut fold_of = vec![0; set.len()];
    for members in groups.values() {
        let mut shuffled = members.clone();
        rng.shuffle(&mut shuffled);
        for (pos, &i) in shuffled.iter().enumerate() {
            fold_of[i] = pos % folds;
        }
    }
    let rows = set.rows();
    let mut total = 0.0;
    for f in 0..folds {
        let train: Vec<(&str, &[f64])> = (0..rows.len())
            .filter(|&i| fold_of[i] != f)
            .map(|i| (rows[i].label(field), rows[i].embedding.as_slice()))
            .collect();
        if k > train.len() {
            return Err(AnalysisError::KTooLarge {
                k,
                available: train.len(),
            });
        }
        let test: Vec<usize> = (0..rows.len()).filter(|&i| fold_of[i] == f).collect();
        let correct: usize = test
            .par_iter()
            .map(|&i| usize::from(knn_predict(&rows[i].embedding, &train, k) == rows[i].label(field)))
            .sum();
        total += correct as f64 / test.len() as f64;
    }
    Ok(total / folds as f64)
}

/// Mean silhouette under Euclidean distance; a row scores 0 when both its
/// intra- and nearest inter-label mean distances are 0.
pub fn silhouette(set: &EmbeddingSet, field: LabelField) -> Result<f64, AnalysisError> {
    let groups = members_by_label(set, field);
    if groups.len() < 2 {
        return Err(AnalysisError::TooFewLabels(groups.len()));
    }
    require_members(&groups, 2)?;
    let rows = set.rows();
    let label_index: BTreeMap<&str, usize> = groups.keys().enumerate().map(|(i, &l)| (l, i)).collect();
    let sizes: Vec<usize> = groups.values().map(Vec::len).collect();
    let scores: Vec<f64> = (0..rows.len())
        .into_par_iter()
        .map(|i| {
            let mut sums = vec![0.0; sizes.len()];
            for (j, r) in rows.iter().enumerate() {
                if j != i {
                    sums[label_index[r.label(field)]] += euclidean(&rows[i].embedding, &r.embedding);
                }
            }
            let own = label_index[rows[i].label(field)];
            let a = sums[own] / (sizes[own] - 1) as f64;
            let b = (0..sizes.len())
                .filter(|&l| l != own)
                .map(|l| sums[l] / sizes[l] as f64)
                .fold(f64::INFINITY, f64::min);
            let m = a.max(b);
            if m == 0.0 {
                0.0
            } else {
                (b - a) / m
            }
        })
        .collect();
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LabelStats {
    pub label: String,
    pub size: usize,
    pub centroid: Vec<f64>,
    /// Mean squared Euclidean distance to the centroid.
    pub within_variance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Polarization {
    pub labels: Vec<LabelStats>,
    /// `(label_a, label_b, ‖centroid_a − centroid_b‖)` for `a < b`.
    pub distances: Vec<(String, String, f64)>,
}

pub fn polarization_metrics(set: &EmbeddingSet, field: LabelField) -> Result<Polarization, AnalysisError> {
    if set.is_empty() {
        return Err(AnalysisError::Empty);
    }
    let rows = set.rows();
    let labels: Vec<LabelStats> = members_by_label(set, field)
        .into_iter()
        .map(|(label, members)| {
            let mut centroid = vec![0.0; set.dim()];
            for &i in &members {
                for (c, x) in centroid.iter_mut().zip(&rows[i].embedding) {
                    *c += x;
                }
            }
            centroid.iter_mut().for_each(|c| *c /= members.len() as f64);
            let within_variance = members
                .iter()
                .map(|&i| euclidean(&rows[i].embedding, &centroid).powi(2))
                .sum::<f64>()
                / members.len() as f64;
            LabelStats {
                label: label.to_string(),
                size: members.len(),
                centroid,
                within_variance,
            }
        })
        .collect();
    let mut distances = Vec::new();
    for (i, a) in labels.iter().enumerate() {
        for b in &labels[i + 1..] {
            distances.push((a.label.clone(), b.label.clone(), euclidean(&a.centroid, &b.centroid)));
        }
    }
    Ok(Polarization { labels, distances })
}

/// The `k` rows most cosine-similar to `query`, most similar first; equal
/// similarities are ordered by discussion id.
pub fn nearest_prototypes(query: &[f64], set: &EmbeddingSet, k: usize) -> Result<Vec<(String, f64)>, AnalysisError> {
    if set.is_empty() {
        return Err(AnalysisError::Empty);
    }
    if query.len() != set.dim() {
        return Err(AnalysisError::QueryDimension {
            expected: set.dim(),
            found: query.len(),
        });
    }
    if k > set.len() {
        return Err(AnalysisError::KTooLarge {
            k,
            available: set.len(),
        });
    }
    let mut scored: Vec<(&str, f64)> = set
        .rows()
        .iter()
        .map(|r| (r.discussion_id.as_str(), cosine(query, &r.embedding)))
        .collect();
    scored.sort_by(|a, b| match b.1.total_cmp(&a.1) {
        Ordering::Equal => a.0.cmp(b.0),
        o => o,
    });
    Ok(scored.into_iter().take(k).map(|(id, s)| (id.to_string(), s)).collect())
}
