use crate::encoder::{EncoderConfig, EncoderParams};
use crate::graph::Corpus;
use crate::numerics::{BackwardMutation, GradCheck, GradCheckReport};
use crate::tasks::{combined_loss, TaskError};

use super::{check_setup, initial_params, step_batches, step_rng, TrainConfig, TrainError};

/// Non-gain weights are multiplied by this before checking, so that true
/// gradients sit well above finite-difference round-off.
pub const PROBE_SCALE: f64 = 10.0;
const FD_STEP: f64 = 1e-5;
const MAX_NODES: usize = 8;
const MAX_D_MODEL: usize = 8;

/// The parameter point at which [`grad_check_model`] compares gradients.
pub fn gradcheck_probe_params(encoder: &EncoderConfig, train: &TrainConfig) -> Result<EncoderParams<f64>, TrainError> {
    let mut params = initial_params(encoder, train)?;
    for (name, t) in params.store.iter_mut() {
        if name.ends_with(".gain") {
            continue;
        }
        for x in t.data_mut() {
            *x *= PROBE_SCALE;
        }
    }
    Ok(params)
}

/// Finite-difference check of the full combined loss (weights from `train`)
/// on one batch holding every tree of `corpus`.
pub fn grad_check_model(
    corpus: &Corpus,
    encoder: &EncoderConfig,
    train: &TrainConfig,
    mutation: Option<BackwardMutation>,
) -> Result<GradCheckReport, TrainError> {
    check_setup(corpus, encoder, train)?;
    if encoder.d_model > MAX_D_MODEL {
        return Err(TrainError::Config(format!(
            "gradient check needs d_model <= {MAX_D_MODEL}, got {}",
            encoder.d_model
        )));
    }
    if let Some(t) = corpus.trees.iter().find(|t| t.len() > MAX_NODES) {
        return Err(TrainError::Config(format!(
            "gradient check needs trees of at most {MAX_NODES} comments; {} has {}",
            t.discussion_id,
            t.len()
        )));
    }
    let params = gradcheck_probe_params(encoder, train)?;
    let all: Vec<usize> = (0..corpus.len()).collect();
    let (batches, _) = step_batches(corpus, &all, train, &step_rng(train, 0, 0))?;
    let weights = train.weights();
    let settings = train.loss_settings();
    let mut check = GradCheck::new(FD_STEP);
    check.mutation = mutation;
    let report = check.run::<_, TaskError, _>(&params.store, |tape, pv| {
        Ok(combined_loss(tape, pv, encoder, &batches, &weights, &settings)?.total)
    })?;
    Ok(report)
}
