use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;
use thiserror::Error;

use crate::encoder::{param_layout, EncoderConfig, EncoderParams};
use crate::format::{byte_offset, raw_f64_array};
use crate::numerics::{ParamStore, Tensor};

use super::TrainConfig;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("checkpoint format_version {found}, expected {FORMAT_VERSION}")]
    Version { found: u64 },
    #[error("checkpoint shape mismatch: {0}")]
    Shape(String),
}

/// Parameters plus the configs that produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub encoder_config: EncoderConfig,
    pub train_config: TrainConfig,
    pub params: EncoderParams<f64>,
}

#[derive(Serialize)]
struct Out<'a> {
    format_version: u32,
    encoder_config: &'a EncoderConfig,
    train_config: &'a TrainConfig,
    params: BTreeMap<&'a str, Box<RawValue>>,
}

#[derive(Deserialize)]
struct Version {
    format_version: u64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct In {
    #[allow(dead_code)]
    format_version: u64,
    encoder_config: EncoderConfig,
    train_config: TrainConfig,
    params: BTreeMap<String, Vec<f64>>,
}

impl Checkpoint {
    pub fn to_json(&self) -> String {
        let out = Out {
            format_version: FORMAT_VERSION,
            encoder_config: &self.encoder_config,
            train_config: &self.train_config,
            params: self
                .params
                .store
                .iter()
                .map(|(name, t)| (name.as_str(), raw_f64_array(t.data())))
                .collect(),
        };
        let mut s = serde_json::to_string_pretty(&out).expect("checkpoint serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, CheckpointError> {
        let parse_err = |e: serde_json::Error| CheckpointError::Parse {
            offset: byte_offset(text, e.line(), e.column()),
            message: e.to_string(),
        };
        let version: Version = serde_json::from_str(text).map_err(parse_err)?;
        if version.format_version != u64::from(FORMAT_VERSION) {
            return Err(CheckpointError::Version {
                found: version.format_version,
            });
        }
        let raw: In = serde_json::from_str(text).map_err(parse_err)?;
        let config = raw.encoder_config;
        config.validate().map_err(|e| CheckpointError::Shape(e.to_string()))?;
        let mut flat = raw.params;
        let mut store = ParamStore::new();
        for (name, shape, _) in param_layout(&config) {
            let data = flat
                .remove(&name)
                .ok_or_else(|| CheckpointError::Shape(format!("missing parameter {name}")))?;
            let want: usize = shape.iter().product();
            if data.len() != want {
                return Err(CheckpointError::Shape(format!(
                    "{name} has {} values, config implies {want}",
                    data.len()
                )));
            }
            store.insert(name, Tensor::new(shape, data).expect("length checked"));
        }
        if let Some(extra) = flat.keys().next() {
            return Err(CheckpointError::Shape(format!("unexpected parameter {extra}")));
        }
        let params = EncoderParams { store };
        params
            .validate(&config)
            .map_err(|e| CheckpointError::Shape(e.to_string()))?;
        Ok(Self {
            encoder_config: config,
            train_config: raw.train_config,
            params,
        })
    }

    /// Refuses to pair these parameters with an encoder config of a
    /// different shape.
    pub fn check_compatible(&self, config: &EncoderConfig) -> Result<(), CheckpointError> {
        if config != &self.encoder_config {
            return Err(CheckpointError::Shape(format!(
                "checkpoint encoder config {:?} differs from requested {:?}",
                self.encoder_config, config
            )));
        }
        Ok(())
    }
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: &Path) -> Result<(), CheckpointError> {
    fs::write(path, checkpoint.to_json()).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let text = fs::read_to_string(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Checkpoint::from_json(&text)
}
