use serde::{Deserialize, Serialize};

use crate::tasks::{LossSettings, ReconLoss, TaskWeights};

use super::TrainError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub edge_w: f64,
    pub node_w: f64,
    pub branch_w: f64,
    pub community_w: f64,
    pub mask_ratio_edge: f64,
    pub mask_ratio_node: f64,
    pub neg_per_pos: usize,
    pub tau: f64,
    pub seed: u64,
    pub checkpoint_every: usize,
    #[serde(default)]
    pub recon_loss: ReconLoss,
    /// Extra cross-discussion negatives added to each edge batch.
    #[serde(default)]
    pub cross_tree_negatives: usize,
}

impl TrainConfig {
    /// All four tasks at weight 1.
    pub fn reference(seed: u64) -> Self {
        Self {
            epochs: 20,
            batch_size: 16,
            lr: 1e-3,
            edge_w: 1.0,
            node_w: 1.0,
            branch_w: 1.0,
            community_w: 1.0,
            mask_ratio_edge: 0.15,
            mask_ratio_node: 0.15,
            neg_per_pos: 1,
            tau: 0.1,
            seed,
            checkpoint_every: 5,
            recon_loss: ReconLoss::Cosine,
            cross_tree_negatives: 0,
        }
    }

    /// Short run on small batches, paired with the tiny encoder and corpus.
    pub fn tiny(seed: u64) -> Self {
        Self {
            epochs: 2,
            batch_size: 4,
            tau: 0.5,
            mask_ratio_edge: 0.3,
            mask_ratio_node: 0.3,
            checkpoint_every: 1,
            ..Self::reference(seed)
        }
    }

    pub fn weights(&self) -> TaskWeights {
        TaskWeights {
            edge: self.edge_w,
            node: self.node_w,
            branch: self.branch_w,
            community: self.community_w,
        }
    }

    pub fn with_weights(mut self, w: TaskWeights) -> Self {
        self.edge_w = w.edge;
        self.node_w = w.node;
        self.branch_w = w.branch;
        self.community_w = w.community;
        self
    }

    pub fn loss_settings(&self) -> LossSettings {
        LossSettings {
            tau: self.tau,
            recon: self.recon_loss,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |m: String| Err(TrainError::Config(m));
        if self.batch_size == 0 {
            return fail("batch_size must be positive".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail(format!("lr must be positive, got {}", self.lr));
        }
        for (name, r) in [
            ("mask_ratio_edge", self.mask_ratio_edge),
            ("mask_ratio_node", self.mask_ratio_node),
        ] {
            if !(r > 0.0 && r <= 0.5) {
                return fail(format!("{name} must lie in (0, 0.5], got {r}"));
            }
        }
        if self.neg_per_pos == 0 {
            return fail("neg_per_pos must be positive".into());
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return fail(format!("tau must be positive, got {}", self.tau));
        }
        if self.checkpoint_every == 0 {
            return fail("checkpoint_every must be positive".into());
        }
        self.weights().validate()?;
        Ok(())
    }
}
