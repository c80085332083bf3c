use serde::Serialize;

use crate::numerics::{symmetric_eigen, Tensor};

use super::{AnalysisError, EmbeddingSet};

const JACOBI_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProjectionRow {
    pub discussion_id: String,
    pub x: f64,
    pub y: f64,
    pub group_id: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Projection {
    pub rows: Vec<ProjectionRow>,
    /// Fraction of total variance along each axis.
    pub explained: [f64; 2],
    /// Unit principal directions, sign-normalized.
    pub components: [Vec<f64>; 2],
    /// Set when the data has no variance; both coordinates are then 0.
    pub zero_variance: bool,
}

fn orient(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v.get(best).is_some_and(|&x| x < 0.0) {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Projection of the mean-centred embeddings onto the top two eigenvectors
/// of their covariance. Each direction is flipped so its largest-magnitude
/// coordinate is positive.
pub fn pca_2d(set: &EmbeddingSet) -> Result<Projection, AnalysisError> {
    let n = set.len();
    if n < 3 {
        return Err(AnalysisError::TooFewRows { needed: 3, found: n });
    }
    let d = set.dim();
    let mut mean = vec![0.0; d];
    for r in set.rows() {
        for (m, x) in mean.iter_mut().zip(&r.embedding) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centred: Vec<Vec<f64>> = set
        .rows()
        .iter()
        .map(|r| r.embedding.iter().zip(&mean).map(|(x, m)| x - m).collect())
        .collect();
    let mut cov = vec![0.0; d * d];
    for c in &centred {
        for i in 0..d {
            for j in i..d {
                cov[i * d + j] += c[i] * c[j];
            }
        }
    }
    let scale = 1.0 / (n - 1) as f64;
    for i in 0..d {
        for j in i..d {
            cov[i * d + j] *= scale;
            cov[j * d + i] = cov[i * d + j];
        }
    }
    let total: f64 = (0..d).map(|i| cov[i * d + i]).sum();
    let magnitude = 1.0 + mean.iter().map(|m| m * m).sum::<f64>();
    let zero_variance = total <= 1e-24 * magnitude;

    let eig = symmetric_eigen(&Tensor::new(vec![d, d], cov)?, JACOBI_TOL)?;
    let mut components = [vec![0.0; d], vec![0.0; d]];
    let mut explained = [0.0; 2];
    for (k, comp) in components.iter_mut().enumerate().take(d) {
        for (i, c) in comp.iter_mut().enumerate() {
            *c = eig.vectors.get(i, k);
        }
        orient(comp);
        if !zero_variance {
            explained[k] = eig.values[k].max(0.0) / total;
        }
    }
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let rows = set
        .rows()
        .iter()
        .zip(&centred)
        .map(|(r, c)| {
            let (x, y) = if zero_variance {
                (0.0, 0.0)
            } else {
                (dot(c, &components[0]), dot(c, &components[1]))
            };
            ProjectionRow {
                discussion_id: r.discussion_id.clone(),
                x,
                y,
                group_id: r.group_id.clone(),
            }
        })
        .collect();
    if zero_variance {
        log::warn!("embeddings have zero variance; projection is degenerate");
    }
    Ok(Projection {
        rows,
        explained,
        components,
        zero_variance,
    })
}
