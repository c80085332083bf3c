use serde::{Deserialize, Serialize};

use crate::numerics::{ParamStore, RngStream, Scalar, Tensor};

use super::EncoderError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub d_feat: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    pub d_proj: usize,
    pub max_depth_bucket: usize,
    pub max_dist_bucket: usize,
    pub tau_default: f64,
}

impl EncoderConfig {
    /// Desk-scale defaults for 16-d features.
    pub fn reference(d_feat: usize) -> Self {
        Self {
            d_feat,
            d_model: 32,
            n_heads: 2,
            n_layers: 2,
            d_ff: 64,
            d_proj: 16,
            max_depth_bucket: 6,
            max_dist_bucket: 11,
            tau_default: 0.1,
        }
    }

    /// Smallest useful shape, sized for finite-difference checks.
    pub fn tiny(d_feat: usize) -> Self {
        Self {
            d_feat,
            d_model: 8,
            n_heads: 2,
            n_layers: 1,
            d_ff: 16,
            d_proj: 4,
            max_depth_bucket: 3,
            max_dist_bucket: 4,
            tau_default: 0.5,
        }
    }

    pub fn validate(&self) -> Result<(), EncoderError> {
        let dims = [
            self.d_feat,
            self.d_model,
            self.n_heads,
            self.n_layers,
            self.d_ff,
            self.d_proj,
            self.max_depth_bucket,
            self.max_dist_bucket,
        ];
        if dims.contains(&0) {
            return Err(EncoderError::Config("all dimensions must be positive".into()));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(EncoderError::Config(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !(self.tau_default > 0.0 && self.tau_default.is_finite()) {
            return Err(EncoderError::Config("tau_default must be positive".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn distance_buckets(&self) -> usize {
        self.max_dist_bucket + 2
    }

    pub fn disconnected_bucket(&self) -> usize {
        self.max_dist_bucket + 1
    }

    /// Number of learnable scalars, from the shapes in [`param_layout`].
    pub fn param_count(&self) -> usize {
        param_layout(self)
            .iter()
            .map(|(_, shape, _)| shape.iter().product::<usize>())
            .sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    Normal,
    Zeros,
    Ones,
}

/// Name, shape, and initializer of every encoder parameter.
pub fn param_layout(c: &EncoderConfig) -> Vec<(String, Vec<usize>, Init)> {
    let (dm, df) = (c.d_model, c.d_feat);
    let mut out: Vec<(String, Vec<usize>, Init)> = vec![
        ("input.weight".into(), vec![df, dm], Init::Normal),
        ("input.bias".into(), vec![1, dm], Init::Zeros),
        ("mask".into(), vec![1, df], Init::Normal),
        ("depth_embedding".into(), vec![c.max_depth_bucket + 1, dm], Init::Normal),
        (
            "sibling_embedding".into(),
            vec![c.max_depth_bucket + 1, dm],
            Init::Normal,
        ),
        (
            "distance_bias".into(),
            vec![c.n_heads, c.distance_buckets()],
            Init::Normal,
        ),
    ];
    for l in 0..c.n_layers {
        let p = |s: &str| format!("layers.{l}.{s}");
        out.push((p("ln1.gain"), vec![1, dm], Init::Ones));
        out.push((p("ln1.bias"), vec![1, dm], Init::Zeros));
        // no key bias: it shifts each score row by a constant, which softmax ignores
        for m in ["q", "k", "v", "o"] {
            out.push((p(&format!("attn.{m}.weight")), vec![dm, dm], Init::Normal));
            if m != "k" {
                out.push((p(&format!("attn.{m}.bias")), vec![1, dm], Init::Zeros));
            }
        }
        out.push((p("ln2.gain"), vec![1, dm], Init::Ones));
        out.push((p("ln2.bias"), vec![1, dm], Init::Zeros));
        out.push((p("ff.in.weight"), vec![dm, c.d_ff], Init::Normal));
        out.push((p("ff.in.bias"), vec![1, c.d_ff], Init::Zeros));
        out.push((p("ff.out.weight"), vec![c.d_ff, dm], Init::Normal));
        out.push((p("ff.out.bias"), vec![1, dm], Init::Zeros));
    }
    out.extend([
        ("final_ln.gain".into(), vec![1, dm], Init::Ones),
        ("final_ln.bias".into(), vec![1, dm], Init::Zeros),
        ("recon.weight".into(), vec![dm, df], Init::Normal),
        ("recon.bias".into(), vec![1, df], Init::Zeros),
        ("edge.bilinear".into(), vec![dm, dm], Init::Normal),
        ("proj.hidden.weight".into(), vec![dm, dm], Init::Normal),
        ("proj.hidden.bias".into(), vec![1, dm], Init::Zeros),
        ("proj.out.weight".into(), vec![dm, c.d_proj], Init::Normal),
        ("proj.out.bias".into(), vec![1, c.d_proj], Init::Zeros),
    ]);
    out
}

pub const INIT_STD: f64 = 0.02;

/// All learnable encoder weights, heads included.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams<S> {
    pub store: ParamStore<S>,
}

/// Weights ~ N(0, 0.02²), biases 0, layer-norm gains 1. Entries are drawn in
/// layout order from `rng`.
pub fn init_params<S: Scalar>(config: &EncoderConfig, rng: &mut RngStream) -> Result<EncoderParams<S>, EncoderError> {
    config.validate()?;
    let mut store = ParamStore::new();
    for (name, shape, init) in param_layout(config) {
        let n: usize = shape.iter().product();
        let data = match init {
            Init::Normal => (0..n).map(|_| S::lit(INIT_STD * rng.normal())).collect(),
            Init::Zeros => vec![S::zero(); n],
            Init::Ones => vec![S::one(); n],
        };
        store.insert(name, Tensor::new(shape, data)?);
    }
    Ok(EncoderParams { store })
}

impl<S: Scalar> EncoderParams<S> {
    /// Checks names and shapes against `config`, finiteness, and that no
    /// layer-norm gain vector is identically zero.
    pub fn validate(&self, config: &EncoderConfig) -> Result<(), EncoderError> {
        let layout = param_layout(config);
        if layout.len() != self.store.len() {
            return Err(EncoderError::InvalidParams(format!(
                "expected {} tensors, found {}",
                layout.len(),
                self.store.len()
            )));
        }
        for (name, shape, _) in &layout {
            let t = self
                .store
                .get(name)
                .ok_or_else(|| EncoderError::InvalidParams(format!("missing {name}")))?;
            if t.shape() != shape.as_slice() {
                return Err(EncoderError::InvalidParams(format!(
                    "{name} has shape {:?}, config implies {:?}",
                    t.shape(),
                    shape
                )));
            }
            if !t.all_finite() {
                return Err(EncoderError::InvalidParams(format!("{name} has non-finite entries")));
            }
            if name.ends_with(".gain") && t.data().iter().all(|&x| x == S::zero()) {
                return Err(EncoderError::InvalidParams(format!("{name} is all zero")));
            }
        }
        Ok(())
    }
}
