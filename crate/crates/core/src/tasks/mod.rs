//! Pre-training objectives: reply-edge classification, masked-comment
//! reconstruction, branch contrast and community contrast, plus their
//! weighted combination.

mod losses;
mod sampling;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoder::{encode, EncoderConfig, EncoderError, TreeView};
use crate::numerics::{NumericsError, ParamVars, Scalar, Tape, Tensor, Var};

pub use losses::{edge_logits, edge_loss, info_nce, node_loss, projected_embeddings, reconstructions, LOGIT_CLAMP};
pub use sampling::{
    community_capacity, sample_branch_pair, sample_community_batch, sample_community_indices, sample_edge_task,
    sample_node_task, ContrastiveBatch, EdgeBatch, EdgePair, EdgeSample, NodeBatch, NodeRef, NodeSample, Skip,
};

#[derive(Debug, Error)]
pub enum TaskError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error("task config: {0}")]
    Config(String),
    #[error("edge task has no candidate pairs")]
    EmptyPairs,
    #[error("node task has no masked nodes")]
    NoMaskedNodes,
    #[error("empty batch")]
    EmptyBatch,
    #[error("temperature must be positive and finite, got {0}")]
    Tau(f64),
    #[error("batch sizes differ: {left} vs {right}")]
    BatchMismatch { left: usize, right: usize },
    #[error("all task weights are zero")]
    NoTask,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReconLoss {
    #[default]
    Cosine,
    Mse,
}

/// The four objectives, in reporting order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Task {
    Edge,
    Node,
    Branch,
    Community,
}

impl Task {
    pub const ALL: [Task; 4] = [Task::Edge, Task::Node, Task::Branch, Task::Community];

    pub fn name(self) -> &'static str {
        match self {
            Task::Edge => "edge",
            Task::Node => "node",
            Task::Branch => "branch",
            Task::Community => "community",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TaskWeights {
    pub edge: f64,
    pub node: f64,
    pub branch: f64,
    pub community: f64,
}

impl TaskWeights {
    pub fn get(&self, task: Task) -> f64 {
        match task {
            Task::Edge => self.edge,
            Task::Node => self.node,
            Task::Branch => self.branch,
            Task::Community => self.community,
        }
    }

    pub fn only(task: Task) -> Self {
        let mut w = TaskWeights {
            edge: 0.0,
            node: 0.0,
            branch: 0.0,
            community: 0.0,
        };
        match task {
            Task::Edge => w.edge = 1.0,
            Task::Node => w.node = 1.0,
            Task::Branch => w.branch = 1.0,
            Task::Community => w.community = 1.0,
        }
        w
    }

    pub fn validate(&self) -> Result<(), TaskError> {
        for t in Task::ALL {
            let w = self.get(t);
            if !(w >= 0.0 && w.is_finite()) {
                return Err(TaskError::Config(format!(
                    "{} weight must be finite and >= 0, got {w}",
                    t.name()
                )));
            }
        }
        if Task::ALL.iter().all(|&t| self.get(t) == 0.0) {
            return Err(TaskError::NoTask);
        }
        Ok(())
    }
}

/// Batches drawn for one optimization step. An empty batch marks the task
/// as ineligible for this step.
#[derive(Clone, Debug, Default)]
pub struct TaskBatches {
    pub edge: EdgeBatch,
    pub node: NodeBatch,
    pub branch: ContrastiveBatch,
    pub community: ContrastiveBatch,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossSettings {
    pub tau: f64,
    pub recon: ReconLoss,
}

/// Weighted total plus the unweighted loss of each computed task
/// (`None` for zero weight or an empty batch).
pub struct TaskLosses<'t, S: Scalar> {
    pub total: Var<'t, S>,
    pub components: [Option<Var<'t, S>>; 4],
}

impl<S: Scalar> TaskLosses<'_, S> {
    pub fn component(&self, task: Task) -> Option<S> {
        self.components[task as usize].map(|v| v.item())
    }
}

fn encode_all<'t, 'a, S: Scalar>(
    tape: &'t Tape<S>,
    pv: &ParamVars<'t, S>,
    views: impl Iterator<Item = &'a TreeView>,
    config: &EncoderConfig,
) -> Result<Vec<Var<'t, S>>, TaskError> {
    views
        .map(|v| encode(tape, pv, v, config).map_err(TaskError::from))
        .collect()
}

fn contrastive_loss<'t, S: Scalar>(
    tape: &'t Tape<S>,
    pv: &ParamVars<'t, S>,
    batch: &ContrastiveBatch,
    config: &EncoderConfig,
    grouped: bool,
    tau: f64,
) -> Result<Var<'t, S>, TaskError> {
    let readouts = |views: &[TreeView]| views.iter().map(|v| v.readout_nodes()).collect::<Vec<_>>();
    let ha = encode_all(tape, pv, batch.anchors.iter(), config)?;
    let hb = encode_all(tape, pv, batch.positives.iter(), config)?;
    let za = projected_embeddings(&ha, &readouts(&batch.anchors), pv)?;
    let zb = projected_embeddings(&hb, &readouts(&batch.positives), pv)?;
    let groups = batch.groups();
    info_nce(za, zb, grouped.then_some(groups.as_slice()), tau)
}

/// `Σ w_t · L_t` over tasks with positive weight and a non-empty batch.
pub fn combined_loss<'t, S: Scalar>(
    tape: &'t Tape<S>,
    pv: &ParamVars<'t, S>,
    config: &EncoderConfig,
    batches: &TaskBatches,
    weights: &TaskWeights,
    settings: &LossSettings,
) -> Result<TaskLosses<'t, S>, TaskError> {
    weights.validate()?;
    let mut components = [None; 4];
    for task in Task::ALL {
        if weights.get(task) == 0.0 {
            continue;
        }
        let loss = match task {
            Task::Edge if !batches.edge.is_empty() => {
                let hs = encode_all(tape, pv, batches.edge.views.iter(), config)?;
                Some(edge_loss(&hs, &batches.edge.pairs, pv)?)
            }
            Task::Node if !batches.node.is_empty() => {
                let hs = encode_all(tape, pv, batches.node.samples.iter().map(|s| &s.view), config)?;
                Some(node_loss(&hs, &batches.node.samples, pv, settings.recon)?)
            }
            Task::Branch if !batches.branch.is_empty() => Some(contrastive_loss(
                tape,
                pv,
                &batches.branch,
                config,
                false,
                settings.tau,
            )?),
            Task::Community if !batches.community.is_empty() => Some(contrastive_loss(
                tape,
                pv,
                &batches.community,
                config,
                true,
                settings.tau,
            )?),
            _ => None,
        };
        components[task as usize] = loss;
    }
    let mut total: Option<Var<'t, S>> = None;
    for task in Task::ALL {
        if let Some(l) = components[task as usize] {
            let term = l.scale(S::lit(weights.get(task)));
            total = Some(match total {
                Some(t) => t.add(term)?,
                None => term,
            });
        }
    }
    let total = total.unwrap_or_else(|| tape.constant(Tensor::scalar(S::zero())));
    Ok(TaskLosses { total, components })
}
