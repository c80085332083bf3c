//! Self-supervised pre-training of a discussion graph transformer on
//! community norms, with synthetic norm-parameterized corpora and
//! embedding-space analysis.

pub mod analysis;
pub mod commands;
pub mod encoder;
pub mod format;
pub mod graph;
pub mod numerics;
pub mod synth;
pub mod tasks;
pub mod trainer;

/// Scalar used by training, analysis and the command-line tool.
pub type Real = f64;
pub type Tensor = numerics::Tensor<Real>;
pub type Tape = numerics::Tape<Real>;
pub type Var<'t> = numerics::Var<'t, Real>;
pub type ParamStore = numerics::ParamStore<Real>;
pub type ParamVars<'t> = numerics::ParamVars<'t, Real>;
pub type Gradients = numerics::Gradients<Real>;
pub type AdamState = numerics::AdamState<Real>;
pub type EncoderParams = encoder::EncoderParams<Real>;
