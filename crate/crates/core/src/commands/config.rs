use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::CommandError;
use crate::analysis::AnalysisConfig;
use crate::encoder::EncoderConfig;
use crate::synth::SynthConfig;
use crate::trainer::TrainConfig;

/// Input files; each command reads the ones it needs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub corpus: Option<String>,
    pub data: Option<String>,
    pub grouping: Option<String>,
    pub checkpoint: Option<String>,
    pub embeddings: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub synth: SynthConfig,
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default)]
    pub paths: Paths,
}

impl RunConfig {
    /// Four communities in two groups, 200 discussions each, 16-d features.
    pub fn reference() -> Self {
        let synth = SynthConfig::reference(0, 200);
        Self {
            encoder: EncoderConfig::reference(synth.d_feat()),
            synth,
            train: TrainConfig::reference(0),
            analysis: AnalysisConfig::default(),
            paths: Paths::default(),
        }
    }

    /// Small enough for the finite-difference gradient check.
    pub fn tiny() -> Self {
        let synth = SynthConfig::tiny(0, 2);
        Self {
            encoder: EncoderConfig::tiny(synth.d_feat()),
            synth,
            train: TrainConfig::tiny(0),
            analysis: AnalysisConfig::default(),
            paths: Paths::default(),
        }
    }

    /// Pretty JSON with a trailing newline.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, CommandError> {
        serde_json::from_str(text).map_err(|e| CommandError::config(e.to_string()))
    }

    /// Sets the synthesis, training and analysis seeds together.
    pub fn set_seed(&mut self, seed: u64) {
        self.synth.seed = seed;
        self.train.seed = seed;
        self.analysis.seed = seed;
    }
}

/// Applies one `dotted.path=value` override. The value is read as JSON when
/// it parses and as a plain string otherwise; the path must already exist.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<(), CommandError> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CommandError::config(format!("override {assignment:?} is not key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    for key in path.split('.') {
        node = match node {
            Value::Object(map) => map.get_mut(key),
            Value::Array(items) => key.parse::<usize>().ok().and_then(|i| items.get_mut(i)),
            _ => None,
        }
        .ok_or_else(|| CommandError::config(format!("unknown config key {path:?}")))?;
    }
    *node = value;
    Ok(())
}

/// The reference config, or the file at `path`, with overrides applied in
/// order and `seed` (if any) applied last.
pub fn load_config(path: Option<&Path>, overrides: &[String], seed: Option<u64>) -> Result<RunConfig, CommandError> {
    let base = match path {
        Some(p) => RunConfig::from_json(&fs::read_to_string(p).map_err(|e| CommandError::io(p, e))?)
            .map_err(|e| CommandError::config(format!("{}: {}", p.display(), e.message)))?,
        None => RunConfig::reference(),
    };
    let mut value = serde_json::to_value(&base).expect("config serializes");
    for o in overrides {
        apply_override(&mut value, o)?;
    }
    let mut config: RunConfig = serde_json::from_value(value).map_err(|e| CommandError::config(e.to_string()))?;
    if let Some(seed) = seed {
        config.set_seed(seed);
    }
    Ok(config)
}

/// `runs/<command>-<first 16 hex digits of SHA-256 over the resolved config>`.
pub fn run_dir(command: &str, config: &RunConfig) -> PathBuf {
    let digest = Sha256::digest(config.to_json().as_bytes());
    PathBuf::from("runs").join(format!("{command}-{}", &hex::encode(digest)[..16]))
}
