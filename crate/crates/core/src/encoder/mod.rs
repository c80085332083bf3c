//! The discussion graph transformer.
//!
//! Node input is `project(features or mask) + depth_embedding + sibling_embedding`,
//! followed by pre-norm transformer blocks whose self-attention scores carry an
//! additive per-head bias indexed by the distance bucket of each node pair,
//! and a final layer norm.

mod params;
mod view;

use thiserror::Error;

use crate::numerics::{NumericsError, ParamStore, ParamVars, Scalar, Tape, Tensor, Var};

pub use params::{init_params, param_layout, EncoderConfig, EncoderParams, Init, INIT_STD};
pub use view::TreeView;

pub const LAYER_NORM_EPS: f64 = 1e-5;
pub const NORMALIZE_EPS: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("encoder config: {0}")]
    Config(String),
    #[error("view has feature dimension {found}, encoder expects {expected}")]
    Dimension { expected: usize, found: usize },
    #[error("tree view: {0}")]
    View(String),
    #[error("readout over an empty node subset")]
    EmptySubset,
    #[error("encoder params: {0}")]
    InvalidParams(String),
}

fn affine<'t, S: Scalar>(x: Var<'t, S>, pv: &ParamVars<'t, S>, prefix: &str) -> Result<Var<'t, S>, NumericsError> {
    x.matmul(pv.get(&format!("{prefix}.weight"))?)?
        .add_row(pv.get(&format!("{prefix}.bias"))?)
}

fn layer_norm<'t, S: Scalar>(x: Var<'t, S>, pv: &ParamVars<'t, S>, prefix: &str) -> Result<Var<'t, S>, NumericsError> {
    x.layer_norm_rows(S::lit(LAYER_NORM_EPS))
        .mul_row(pv.get(&format!("{prefix}.gain"))?)?
        .add_row(pv.get(&format!("{prefix}.bias"))?)
}

/// Node representations `H` (`n × d_model`) for `view`.
pub fn encode<'t, S: Scalar>(
    tape: &'t Tape<S>,
    pv: &ParamVars<'t, S>,
    view: &TreeView,
    config: &EncoderConfig,
) -> Result<Var<'t, S>, EncoderError> {
    if view.d_feat() != config.d_feat {
        return Err(EncoderError::Dimension {
            expected: config.d_feat,
            found: view.d_feat(),
        });
    }
    let n = view.len();
    let df = config.d_feat;

    let mut feats = Vec::with_capacity(n * df);
    for v in 0..n {
        if view.is_masked(v) {
            feats.extend(std::iter::repeat_n(S::zero(), df));
        } else {
            feats.extend(view.feature_row(v).iter().map(|&x| S::lit(x)));
        }
    }
    let mut input = tape.constant(Tensor::new(vec![n, df], feats)?);
    let masked = view.masked_nodes();
    if !masked.is_empty() {
        let mut indicator = vec![S::zero(); n * df];
        for &v in &masked {
            indicator[v * df..(v + 1) * df].fill(S::one());
        }
        let indicator = tape.constant(Tensor::new(vec![n, df], indicator)?);
        let mask_rows = pv.get("mask")?.gather_rows(&vec![0; n])?.mul(indicator)?;
        input = input.add(mask_rows)?;
    }

    let cap = config.max_depth_bucket;
    let depths: Vec<usize> = (0..n).map(|v| view.depth(v).min(cap)).collect();
    let siblings: Vec<usize> = (0..n).map(|v| view.sibling_index(v).min(cap)).collect();
    let mut h = affine(input, pv, "input")?
        .add(pv.get("depth_embedding")?.gather_rows(&depths)?)?
        .add(pv.get("sibling_embedding")?.gather_rows(&siblings)?)?;

    let nb = config.distance_buckets();
    let buckets: Vec<usize> = (0..n * n).map(|k| view.bucket(k / n, k % n, config)).collect();
    let table = pv.get("distance_bias")?;
    let biases = (0..config.n_heads)
        .map(|head| {
            let idx: Vec<usize> = buckets.iter().map(|&b| head * nb + b).collect();
            table.gather_elems(&idx, &[n, n])
        })
        .collect::<Result<Vec<_>, _>>()?;

    let dh = config.head_dim();
    let scale = S::lit(1.0 / (dh as f64).sqrt());
    for l in 0..config.n_layers {
        let p = |s: &str| format!("layers.{l}.{s}");
        let a = layer_norm(h, pv, &p("ln1"))?;
        let q = affine(a, pv, &p("attn.q"))?;
        let k = a.matmul(pv.get(&p("attn.k.weight"))?)?;
        let v = affine(a, pv, &p("attn.v"))?;
        let mut heads = Vec::with_capacity(config.n_heads);
        for (head, bias) in biases.iter().enumerate() {
            let qh = q.slice_cols(head * dh, dh)?;
            let kh = k.slice_cols(head * dh, dh)?;
            let vh = v.slice_cols(head * dh, dh)?;
            let scores = qh.matmul(kh.t())?.scale(scale).add(*bias)?;
            heads.push(scores.softmax_rows().matmul(vh)?);
        }
        let attn = if heads.len() == 1 {
            heads[0]
        } else {
            tape.concat_cols(&heads)?
        };
        h = h.add(affine(attn, pv, &p("attn.o"))?)?;

        let f = layer_norm(h, pv, &p("ln2"))?;
        let f = affine(affine(f, pv, &p("ff.in"))?.gelu(), pv, &p("ff.out"))?;
        h = h.add(f)?;
    }
    Ok(layer_norm(h, pv, "final_ln")?)
}

/// Mean of the selected rows of `h`, as a `1 × d` row.
pub fn readout_mean<'t, S: Scalar>(h: Var<'t, S>, subset: &[usize]) -> Result<Var<'t, S>, EncoderError> {
    if subset.is_empty() {
        return Err(EncoderError::EmptySubset);
    }
    Ok(h.gather_rows(subset)?.mean_rows())
}

/// Contrastive projection head: two layers with GELU between, rows
/// L2-normalized (norm guarded by `1e-12`).
pub fn project<'t, S: Scalar>(z: Var<'t, S>, pv: &ParamVars<'t, S>) -> Result<Var<'t, S>, EncoderError> {
    let hidden = affine(z, pv, "proj.hidden")?.gelu();
    Ok(affine(hidden, pv, "proj.out")?.l2_normalize_rows(S::lit(NORMALIZE_EPS)))
}

/// Discussion embedding of `view`: encode, then average [`TreeView::readout_nodes`].
pub fn discussion_embedding<'t, S: Scalar>(
    tape: &'t Tape<S>,
    pv: &ParamVars<'t, S>,
    view: &TreeView,
    config: &EncoderConfig,
) -> Result<Var<'t, S>, EncoderError> {
    let h = encode(tape, pv, view, config)?;
    readout_mean(h, &view.readout_nodes())
}

/// Forward-only [`encode`].
pub fn encode_values<S: Scalar>(
    view: &TreeView,
    params: &ParamStore<S>,
    config: &EncoderConfig,
) -> Result<Tensor<S>, EncoderError> {
    let tape = Tape::new();
    let pv = params.register(&tape);
    Ok(encode(&tape, &pv, view, config)?.value())
}
