use serde::Serialize;

use crate::analysis::AnalysisError;
use crate::encoder::EncoderError;
use crate::graph::CorpusError;
use crate::synth::SynthError;
use crate::tasks::TaskError;
use crate::trainer::{CheckpointError, TrainError};

/// A failure with a stable machine-readable code and the module it came from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CommandError {
    pub code: &'static str,
    pub module: &'static str,
    pub message: String,
}

impl std::fmt::Display for CommandError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[{}/{}] {}", self.module, self.code, self.message)
    }
}

impl std::error::Error for CommandError {}

impl CommandError {
    pub fn new(code: &'static str, module: &'static str, message: impl Into<String>) -> Self {
        Self {
            code,
            module,
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new("CONFIG_INVALID", "cli", message)
    }

    pub fn io(path: &std::path::Path, e: std::io::Error) -> Self {
        Self::new("IO_ERROR", "cli", format!("{}: {e}", path.display()))
    }

    /// `{"error": {"code", "module", "message"}}`
    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": self }).to_string()
    }
}

impl From<CorpusError> for CommandError {
    fn from(e: CorpusError) -> Self {
        let code = match &e {
            CorpusError::Io(_) => "CORPUS_IO",
            CorpusError::Header(_) | CorpusError::Line { .. } => "CORPUS_PARSE",
            CorpusError::Unmapped(_) | CorpusError::Grouping(_) => "CORPUS_GROUPING",
            CorpusError::Dimension { .. } => "CORPUS_DIMENSION",
            CorpusError::DuplicateDiscussion(_) | CorpusError::Invalid(_) => "CORPUS_INVALID",
        };
        Self::new(code, "graph", e.to_string())
    }
}

impl From<SynthError> for CommandError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Corpus(c) => c.into(),
            SynthError::Grouping(_) => Self::new("CORPUS_GROUPING", "synth", e.to_string()),
            other => Self::new("SYNTH_CONFIG", "synth", other.to_string()),
        }
    }
}

impl From<EncoderError> for CommandError {
    fn from(e: EncoderError) -> Self {
        let code = match &e {
            EncoderError::Config(_) => "ENCODER_CONFIG",
            EncoderError::Dimension { .. } => "ENCODER_DIMENSION",
            EncoderError::InvalidParams(_) => "ENCODER_PARAMS",
            _ => "ENCODER_ERROR",
        };
        Self::new(code, "encoder", e.to_string())
    }
}

impl From<TaskError> for CommandError {
    fn from(e: TaskError) -> Self {
        match e {
            TaskError::NoTask => Self::new("CONFIG_NO_TASK", "tasks", e.to_string()),
            TaskError::Encoder(inner) => inner.into(),
            TaskError::Config(_) => Self::new("TASK_CONFIG", "tasks", e.to_string()),
            other => Self::new("TASK_ERROR", "tasks", other.to_string()),
        }
    }
}

impl From<CheckpointError> for CommandError {
    fn from(e: CheckpointError) -> Self {
        let code = match &e {
            CheckpointError::Io { .. } => "CHECKPOINT_IO",
            CheckpointError::Parse { .. } => "CHECKPOINT_PARSE",
            CheckpointError::Version { .. } => "CHECKPOINT_VERSION",
            CheckpointError::Shape(_) => "CHECKPOINT_SHAPE",
        };
        Self::new(code, "trainer", e.to_string())
    }
}

impl From<TrainError> for CommandError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Task(t) => t.into(),
            TrainError::Encoder(t) => t.into(),
            TrainError::Checkpoint(t) => t.into(),
            TrainError::Config(_) => Self::new("TRAIN_CONFIG", "trainer", e.to_string()),
            TrainError::NonFinite { .. } => Self::new("TRAIN_NON_FINITE", "trainer", e.to_string()),
            other => Self::new("TRAIN_ERROR", "trainer", other.to_string()),
        }
    }
}

impl From<AnalysisError> for CommandError {
    fn from(e: AnalysisError) -> Self {
        let code = match &e {
            AnalysisError::Encoder(inner) => return inner.clone_into_command(),
            AnalysisError::Csv(_) => "ANALYSIS_INPUT",
            AnalysisError::Io { .. } => "ANALYSIS_IO",
            AnalysisError::TooFewRows { .. } | AnalysisError::Empty => "ANALYSIS_TOO_FEW_ROWS",
            _ => "ANALYSIS_ERROR",
        };
        Self::new(code, "analysis", e.to_string())
    }
}

trait IntoCommand {
    fn clone_into_command(&self) -> CommandError;
}

impl IntoCommand for EncoderError {
    fn clone_into_command(&self) -> CommandError {
        let code = match self {
            EncoderError::Dimension { .. } => "ENCODER_DIMENSION",
            EncoderError::InvalidParams(_) => "ENCODER_PARAMS",
            _ => "ENCODER_ERROR",
        };
        CommandError::new(code, "encoder", self.to_string())
    }
}
