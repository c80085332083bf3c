//! The batch commands behind the `normforge` binary. Every command takes a
//! fully resolved [`RunConfig`], writes its artifacts plus a `config.json`
//! echo into one output directory, and returns a JSON summary. Input
//! files come from `config.paths`.

mod config;
mod error;

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use crate::analysis::{analyze, embed_corpus, read_embeddings_csv, write_embeddings_csv, write_projection_csv};
use crate::graph::{read_corpus, write_corpus};
use crate::synth::{generate_corpus, ingest_external};
use crate::tasks::{Task, TaskWeights};
use crate::trainer::{grad_check_model, initial_params, load_checkpoint, save_checkpoint, train_from, Checkpoint};

pub use config::{apply_override, load_config, run_dir, Paths, RunConfig};
pub use error::CommandError;

pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const LOSS_FILE: &str = "loss.csv";
pub const EMBEDDINGS_FILE: &str = "embeddings.csv";
pub const PROJECTION_FILE: &str = "projection.csv";
pub const METRICS_FILE: &str = "metrics.json";
pub const GRADCHECK_FILE: &str = "gradcheck.json";
pub const CONFIG_ECHO_FILE: &str = "config.json";
pub const GRADCHECK_THRESHOLD: f64 = 1e-4;

fn prepare(out: &Path, config: &RunConfig) -> Result<(), CommandError> {
    fs::create_dir_all(out).map_err(|e| CommandError::io(out, e))?;
    let path = out.join(CONFIG_ECHO_FILE);
    fs::write(&path, config.to_json()).map_err(|e| CommandError::io(&path, e))
}

fn input(configured: &Option<String>, what: &str) -> Result<PathBuf, CommandError> {
    configured
        .as_ref()
        .map(PathBuf::from)
        .ok_or_else(|| CommandError::config(format!("no {what} path given (--{what} or paths.{what})")))
}

fn show(p: &Path) -> String {
    p.display().to_string()
}

/// Synthetic corpus from `config.synth`.
pub fn cmd_gen(config: &RunConfig, out: &Path) -> Result<Value, CommandError> {
    prepare(out, config)?;
    let corpus = generate_corpus(&config.synth)?;
    let path = out.join(CORPUS_FILE);
    write_corpus(&corpus, &path)?;
    Ok(json!({ "corpus": show(&path), "discussions": corpus.len(), "d_feat": corpus.d_feat }))
}

/// External discussions plus a `{community_id: group_id}` file, validated
/// and rewritten as a corpus.
pub fn cmd_ingest(config: &RunConfig, out: &Path) -> Result<Value, CommandError> {
    let data = input(&config.paths.data, "data")?;
    let grouping = input(&config.paths.grouping, "grouping")?;
    prepare(out, config)?;
    let corpus = ingest_external(&data, &grouping)?;
    let path = out.join(CORPUS_FILE);
    write_corpus(&corpus, &path)?;
    Ok(json!({ "corpus": show(&path), "discussions": corpus.len(), "d_feat": corpus.d_feat }))
}

fn checkpoint_of(config: &RunConfig, params: crate::encoder::EncoderParams<f64>) -> Checkpoint {
    Checkpoint {
        encoder_config: config.encoder.clone(),
        train_config: config.train.clone(),
        params,
    }
}

/// Pre-trains an encoder. Writes the final checkpoint, the loss log, and an
/// intermediate checkpoint every `train.checkpoint_every` epochs.
pub fn cmd_pretrain(config: &RunConfig, out: &Path) -> Result<Value, CommandError> {
    config.train.weights().validate()?;
    let corpus_path = input(&config.paths.corpus, "corpus")?;
    let corpus = read_corpus(&corpus_path)?;
    prepare(out, config)?;
    let params = initial_params(&config.encoder, &config.train)?;
    let every = config.train.checkpoint_every;
    let (params, report) = train_from(&corpus, &config.encoder, &config.train, params, |record, params| {
        if record.epoch % every == 0 && record.epoch < config.train.epochs {
            let path = out.join(format!("checkpoint-epoch{:04}.json", record.epoch));
            save_checkpoint(&checkpoint_of(config, params.clone()), &path)?;
        }
        Ok(())
    })?;
    let ckpt = out.join(CHECKPOINT_FILE);
    save_checkpoint(&checkpoint_of(config, params), &ckpt)?;
    let loss = out.join(LOSS_FILE);
    report.write_csv(&loss)?;
    let last = report.epochs.last();
    Ok(json!({
        "checkpoint": show(&ckpt),
        "loss_log": show(&loss),
        "epochs": report.epochs.len(),
        "final_combined_loss": last.map(|r| r.combined),
    }))
}

/// Discussion embeddings of a corpus under a checkpoint.
pub fn cmd_embed(config: &RunConfig, out: &Path) -> Result<Value, CommandError> {
    let ckpt_path = input(&config.paths.checkpoint, "checkpoint")?;
    let corpus_path = input(&config.paths.corpus, "corpus")?;
    let ckpt = load_checkpoint(&ckpt_path)?;
    let corpus = read_corpus(&corpus_path)?;
    prepare(out, config)?;
    let set = embed_corpus(&ckpt.params, &ckpt.encoder_config, &corpus)?;
    let path = out.join(EMBEDDINGS_FILE);
    write_embeddings_csv(&set, &path)?;
    Ok(json!({ "embeddings": show(&path), "rows": set.len(), "dim": set.dim() }))
}

/// PCA projection and separation/polarization metrics for an embeddings file.
pub fn cmd_analyze(config: &RunConfig, out: &Path) -> Result<Value, CommandError> {
    let path = input(&config.paths.embeddings, "embeddings")?;
    let set = read_embeddings_csv(&path)?;
    prepare(out, config)?;
    let (projection, report) = analyze(&set, &config.analysis)?;
    let proj = out.join(PROJECTION_FILE);
    write_projection_csv(&projection, &proj)?;
    let metrics = out.join(METRICS_FILE);
    fs::write(&metrics, report.to_json()).map_err(|e| CommandError::io(&metrics, e))?;
    Ok(json!({
        "projection": show(&proj),
        "metrics": show(&metrics),
        "group_knn_accuracy": report.group.knn_accuracy.value(),
        "group_silhouette": report.group.silhouette.value(),
    }))
}

/// Finite-difference check of the model gradient on a corpus drawn from
/// `config.synth`: all active tasks jointly, then each active task alone.
pub fn cmd_gradcheck(config: &RunConfig, out: &Path) -> Result<Value, CommandError> {
    config.train.weights().validate()?;
    let corpus = generate_corpus(&config.synth)?;
    prepare(out, config)?;
    let mut results = serde_json::Map::new();
    let mut worst: f64 = 0.0;
    let joint = grad_check_model(&corpus, &config.encoder, &config.train, None)?;
    worst = worst.max(joint.max_rel_error);
    results.insert("joint".into(), json!(joint.max_rel_error));
    for task in Task::ALL {
        if config.train.weights().get(task) == 0.0 {
            continue;
        }
        let single = config.train.clone().with_weights(TaskWeights::only(task));
        let r = grad_check_model(&corpus, &config.encoder, &single, None)?;
        worst = worst.max(r.max_rel_error);
        results.insert(task.name().into(), json!(r.max_rel_error));
    }
    let passed = worst < GRADCHECK_THRESHOLD;
    let summary = json!({
        "passed": passed,
        "threshold": GRADCHECK_THRESHOLD,
        "max_rel_error": worst,
        "per_check": results,
    });
    let path = out.join(GRADCHECK_FILE);
    fs::write(
        &path,
        format!("{}\n", serde_json::to_string_pretty(&summary).expect("json")),
    )
    .map_err(|e| CommandError::io(&path, e))?;
    if !passed {
        return Err(CommandError::new(
            "GRADCHECK_FAILED",
            "trainer",
            format!("max relative error {worst:e} exceeds {GRADCHECK_THRESHOLD:e}"),
        ));
    }
    Ok(summary)
}
