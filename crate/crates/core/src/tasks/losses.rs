use crate::encoder::{project, readout_mean, EncoderError};
use crate::numerics::{ParamVars, Scalar, Tensor, Var};

use super::{EdgePair, NodeSample, ReconLoss, TaskError};

pub const LOGIT_CLAMP: f64 = 30.0;

fn stack_rows<'t, S: Scalar>(hs: &[Var<'t, S>]) -> Result<(Var<'t, S>, Vec<usize>), TaskError> {
    let first = hs.first().ok_or(TaskError::EmptyBatch)?;
    let mut offsets = Vec::with_capacity(hs.len());
    let mut total = 0;
    for h in hs {
        offsets.push(total);
        total += h.shape()[0];
    }
    let all = if hs.len() == 1 {
        *first
    } else {
        first.tape().concat_rows(hs)?
    };
    Ok((all, offsets))
}

/// Clamped logits `h_pᵀ W_e h_c` for each pair, as an `m × 1` column.
pub fn edge_logits<'t, S: Scalar>(
    hs: &[Var<'t, S>],
    pairs: &[EdgePair],
    pv: &ParamVars<'t, S>,
) -> Result<Var<'t, S>, TaskError> {
    if pairs.is_empty() {
        return Err(TaskError::EmptyPairs);
    }
    let (all, offsets) = stack_rows(hs)?;
    let parents: Vec<usize> = pairs.iter().map(|p| offsets[p.parent.view] + p.parent.node).collect();
    let children: Vec<usize> = pairs.iter().map(|p| offsets[p.child.view] + p.child.node).collect();
    let hp = all.gather_rows(&parents)?;
    let hc = all.gather_rows(&children)?;
    let c = S::lit(LOGIT_CLAMP);
    Ok(hp.matmul(pv.get("edge.bilinear")?)?.mul(hc)?.sum_rows().clamp(-c, c))
}

/// Mean binary cross-entropy of `sigmoid(logit)` against the pair labels,
/// computed as `softplus(z) - y·z`.
pub fn edge_loss<'t, S: Scalar>(
    hs: &[Var<'t, S>],
    pairs: &[EdgePair],
    pv: &ParamVars<'t, S>,
) -> Result<Var<'t, S>, TaskError> {
    let z = edge_logits(hs, pairs, pv)?;
    bce_from_logits(z, pairs.iter().map(|p| p.label))
}

pub(crate) fn bce_from_logits<'t, S: Scalar>(
    z: Var<'t, S>,
    labels: impl Iterator<Item = bool>,
) -> Result<Var<'t, S>, TaskError> {
    let y: Vec<S> = labels.map(|l| if l { S::one() } else { S::zero() }).collect();
    let y = z.tape().constant(Tensor::new(vec![y.len(), 1], y)?);
    Ok(z.softplus().sub(z.mul(y)?)?.mean())
}

/// Reconstruction head output for every masked node, stacked in sample order.
pub fn reconstructions<'t, S: Scalar>(
    hs: &[Var<'t, S>],
    samples: &[NodeSample],
    pv: &ParamVars<'t, S>,
) -> Result<Var<'t, S>, TaskError> {
    let (all, offsets) = stack_rows(hs)?;
    let offsets = &offsets;
    let rows: Vec<usize> = samples
        .iter()
        .enumerate()
        .flat_map(|(i, s)| s.masked.iter().map(move |&v| offsets[i] + v))
        .collect();
    if rows.is_empty() {
        return Err(TaskError::NoMaskedNodes);
    }
    Ok(all
        .gather_rows(&rows)?
        .matmul(pv.get("recon.weight")?)?
        .add_row(pv.get("recon.bias")?)?)
}

/// Mean over masked nodes of `1 - cos(ŷ, target)` (or of the squared error
/// per feature with [`ReconLoss::Mse`]).
pub fn node_loss<'t, S: Scalar>(
    hs: &[Var<'t, S>],
    samples: &[NodeSample],
    pv: &ParamVars<'t, S>,
    kind: ReconLoss,
) -> Result<Var<'t, S>, TaskError> {
    let y_hat = reconstructions(hs, samples, pv)?;
    let d = y_hat.shape()[1];
    let targets: Vec<S> = samples
        .iter()
        .flat_map(|s| s.targets.iter().flatten().map(|&x| S::lit(x)))
        .collect();
    let m = targets.len() / d;
    let t = y_hat.tape().constant(Tensor::new(vec![m, d], targets)?);
    Ok(match kind {
        ReconLoss::Cosine => y_hat
            .l2_normalize_rows(S::lit(crate::encoder::NORMALIZE_EPS))
            .mul(t.l2_normalize_rows(S::lit(crate::encoder::NORMALIZE_EPS)))?
            .sum_rows()
            .scale(-S::one())
            .add_scalar(S::one())
            .mean(),
        ReconLoss::Mse => {
            let e = y_hat.sub(t)?;
            e.mul(e)?.mean()
        }
    })
}

/// Symmetric InfoNCE over unit rows `za`, `zb` (`B × d`).
///
/// With `groups`, the denominator for anchor `i` keeps only `i` itself and
/// items whose group differs from `i`'s.
pub fn info_nce<'t, S: Scalar>(
    za: Var<'t, S>,
    zb: Var<'t, S>,
    groups: Option<&[&str]>,
    tau: f64,
) -> Result<Var<'t, S>, TaskError> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(TaskError::Tau(tau));
    }
    let (sa, sb) = (za.shape(), zb.shape());
    if sa != sb {
        return Err(TaskError::BatchMismatch {
            left: sa[0],
            right: sb[0],
        });
    }
    let b = sa[0];
    if let Some(g) = groups {
        if g.len() != b {
            return Err(TaskError::BatchMismatch {
                left: b,
                right: g.len(),
            });
        }
    }
    let tape = za.tape();
    let c = S::lit(LOGIT_CLAMP);
    let logits = za.matmul(zb.t())?.scale(S::lit(1.0 / tau)).clamp(-c, c);
    let mask = groups.map(|g| {
        (0..b * b)
            .map(|k| {
                let (i, j) = (k / b, k % b);
                i == j || g[i] != g[j]
            })
            .collect::<Vec<bool>>()
    });
    let eye = tape.constant(Tensor::identity(b));
    let diag = logits.mul(eye)?.sum_rows();
    let forward = logits.log_sum_exp_rows(mask.clone())?.sub(diag)?.mean();
    let backward = logits.t().log_sum_exp_rows(mask)?.sub(diag)?.mean();
    Ok(forward.add(backward)?.scale(S::lit(0.5)))
}

/// Projected, unit-norm discussion embeddings for a list of encoded views,
/// each averaged over `readouts[i]`.
pub fn projected_embeddings<'t, S: Scalar>(
    hs: &[Var<'t, S>],
    readouts: &[Vec<usize>],
    pv: &ParamVars<'t, S>,
) -> Result<Var<'t, S>, TaskError> {
    let zs = hs
        .iter()
        .zip(readouts)
        .map(|(h, r)| readout_mean(*h, r))
        .collect::<Result<Vec<_>, EncoderError>>()?;
    let (z, _) = stack_rows(&zs)?;
    Ok(project(z, pv)?)
}
