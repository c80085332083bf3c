//! Deterministic multi-task pre-training: every step draws fresh batches for
//! all active tasks, sums their weighted losses, and takes one Adam step.

mod checkpoint;
mod config;
mod gradcheck;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use thiserror::Error;

use crate::encoder::{init_params, EncoderConfig, EncoderError, EncoderParams};
use crate::format::fmt17;
use crate::graph::Corpus;
use crate::numerics::{adam_step, AdamConfig, AdamState, NumericsError, RngStream, Tape};
use crate::tasks::{
    combined_loss, community_capacity, sample_branch_pair, sample_community_batch, sample_edge_task, sample_node_task,
    Task, TaskBatches, TaskError,
};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError, FORMAT_VERSION};
pub use config::TrainConfig;
pub use gradcheck::{grad_check_model, gradcheck_probe_params, PROBE_SCALE};

/// Stream id of the parameter-initialization RNG.
pub const INIT_STREAM: u64 = 0x1417;
const SHUFFLE_STREAM: u64 = 0x5407;
const STEP_STREAM: u64 = 0x57e9;

pub const LOSS_CSV_HEADER: &str = "epoch,edge,node,branch,community,combined,seconds";

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("train config: {0}")]
    Config(String),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFinite { epoch: usize, step: usize },
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Per-epoch means. Steps where a task had no eligible tree count as 0, so
/// `combined` is exactly the weighted sum of the four task means.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Indexed by [`Task`].
    pub losses: [f64; 4],
    pub combined: f64,
    pub seconds: f64,
    pub steps: usize,
    /// Trees (edge, node, branch) or steps (community) that yielded a batch.
    pub eligible: [usize; 4],
}

impl EpochRecord {
    pub fn loss(&self, task: Task) -> f64 {
        self.losses[task as usize]
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
}

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(LOSS_CSV_HEADER);
        out.push('\n');
        for r in &self.epochs {
            let _ = write!(out, "{}", r.epoch);
            for x in r.losses.iter().chain([&r.combined]) {
                let _ = write!(out, ",{}", fmt17(*x));
            }
            let _ = writeln!(out, ",{:.3}", r.seconds);
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), TrainError> {
        fs::write(path, self.to_csv()).map_err(|source| TrainError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    /// Per-epoch losses with timing stripped, for determinism comparisons.
    pub fn losses_only(&self) -> Vec<([f64; 4], f64)> {
        self.epochs.iter().map(|r| (r.losses, r.combined)).collect()
    }
}

/// Initial parameters for `config`, seeded by `train.seed`.
pub fn initial_params(encoder: &EncoderConfig, train: &TrainConfig) -> Result<EncoderParams<f64>, TrainError> {
    Ok(init_params(encoder, &mut RngStream::new(train.seed, INIT_STREAM))?)
}

/// Checks that the configs fit together and that the corpus can feed every
/// active task.
pub fn check_setup(corpus: &Corpus, encoder: &EncoderConfig, train: &TrainConfig) -> Result<(), TrainError> {
    encoder.validate()?;
    train.validate()?;
    if corpus.d_feat != encoder.d_feat {
        return Err(TrainError::Encoder(EncoderError::Dimension {
            expected: encoder.d_feat,
            found: corpus.d_feat,
        }));
    }
    if corpus.is_empty() {
        return Err(TrainError::Config("empty corpus".into()));
    }
    if train.community_w > 0.0 && community_capacity(corpus) < 2 {
        return Err(TrainError::Config(
            "community task needs at least 2 groups with at least 2 discussions each".into(),
        ));
    }
    Ok(())
}

/// Batches for one optimization step over `trees` (corpus indices). Each
/// task samples from its own stream derived from `rng`.
pub fn step_batches(
    corpus: &Corpus,
    trees: &[usize],
    config: &TrainConfig,
    rng: &RngStream,
) -> Result<(TaskBatches, [usize; 4]), TaskError> {
    let weights = config.weights();
    let mut batches = TaskBatches::default();
    let mut eligible = [0; 4];
    let task_rng = |t: Task| rng.derive(t as u64);
    if weights.edge > 0.0 {
        let mut r = task_rng(Task::Edge);
        for &i in trees {
            if let Ok(s) = sample_edge_task(&corpus.trees[i], config.mask_ratio_edge, config.neg_per_pos, &mut r) {
                batches.edge.push(s);
                eligible[Task::Edge as usize] += 1;
            }
        }
        batches
            .edge
            .add_cross_tree_negatives(config.cross_tree_negatives, &mut r);
    }
    if weights.node > 0.0 {
        let mut r = task_rng(Task::Node);
        for &i in trees {
            if let Ok(s) = sample_node_task(&corpus.trees[i], config.mask_ratio_node, &mut r) {
                batches.node.samples.push(s);
                eligible[Task::Node as usize] += 1;
            }
        }
    }
    if weights.branch > 0.0 {
        let mut r = task_rng(Task::Branch);
        for &i in trees {
            let t = &corpus.trees[i];
            if let Ok((a, p)) = sample_branch_pair(t, &mut r) {
                let b = &mut batches.branch;
                b.anchors.push(a);
                b.positives.push(p);
                b.provenance
                    .push((t.discussion_id.clone(), corpus.group_of(t).to_string()));
                b.positive_ids.push(t.discussion_id.clone());
                eligible[Task::Branch as usize] += 1;
            }
        }
    }
    if weights.community > 0.0 {
        let size = config.batch_size.min(community_capacity(corpus));
        batches.community = sample_community_batch(corpus, size, &mut task_rng(Task::Community))?;
        eligible[Task::Community as usize] += 1;
    }
    Ok((batches, eligible))
}

/// Step RNG for `(epoch, step)`; independent of how earlier steps consumed
/// randomness.
pub fn step_rng(config: &TrainConfig, epoch: usize, step: usize) -> RngStream {
    RngStream::new(config.seed, STEP_STREAM).derive(((epoch as u64) << 32) | step as u64)
}

/// Trains freshly initialized parameters.
pub fn train(
    corpus: &Corpus,
    encoder: &EncoderConfig,
    config: &TrainConfig,
) -> Result<(EncoderParams<f64>, TrainReport), TrainError> {
    check_setup(corpus, encoder, config)?;
    let params = initial_params(encoder, config)?;
    train_from(corpus, encoder, config, params, |_, _| Ok(()))
}

/// Trains `params` in place for `config.epochs` epochs, calling `on_epoch`
/// after each one.
pub fn train_from<F>(
    corpus: &Corpus,
    encoder: &EncoderConfig,
    config: &TrainConfig,
    mut params: EncoderParams<f64>,
    mut on_epoch: F,
) -> Result<(EncoderParams<f64>, TrainReport), TrainError>
where
    F: FnMut(&EpochRecord, &EncoderParams<f64>) -> Result<(), TrainError>,
{
    check_setup(corpus, encoder, config)?;
    params.validate(encoder)?;
    let weights = config.weights();
    let settings = config.loss_settings();
    let mut adam = AdamState::new(
        &params.store,
        AdamConfig {
            lr: config.lr,
            ..AdamConfig::default()
        },
    );
    let mut shuffle_rng = RngStream::new(config.seed, SHUFFLE_STREAM);
    let mut report = TrainReport::default();
    let mut order: Vec<usize> = (0..corpus.len()).collect();

    for epoch in 1..=config.epochs {
        let started = Instant::now();
        shuffle_rng.shuffle(&mut order);
        let mut sums = [0.0; 4];
        let mut combined = 0.0;
        let mut eligible = [0; 4];
        let chunks: Vec<&[usize]> = order.chunks(config.batch_size).collect();
        for (step, trees) in chunks.iter().enumerate() {
            let (batches, counts) = step_batches(corpus, trees, config, &step_rng(config, epoch, step))?;
            let tape = Tape::new();
            let pv = params.store.register(&tape);
            let losses = combined_loss(&tape, &pv, encoder, &batches, &weights, &settings)?;
            let total = losses.total.item();
            if !total.is_finite() {
                return Err(TrainError::NonFinite { epoch, step });
            }
            for t in Task::ALL {
                sums[t as usize] += losses.component(t).unwrap_or(0.0);
                eligible[t as usize] += counts[t as usize];
            }
            combined += total;
            let grads = tape.backward(losses.total)?.into_params();
            adam_step(&mut params.store, &grads, &mut adam)?;
        }
        let steps = chunks.len();
        let record = EpochRecord {
            epoch,
            losses: sums.map(|s| s / steps as f64),
            combined: combined / steps as f64,
            seconds: started.elapsed().as_secs_f64(),
            steps,
            eligible,
        };
        log::info!(
            "epoch {epoch}: combined {:.6}, eligible edge {} node {} branch {} community {}",
            record.combined,
            eligible[0],
            eligible[1],
            eligible[2],
            eligible[3]
        );
        on_epoch(&record, &params)?;
        report.epochs.push(record);
    }
    Ok((params, report))
}
