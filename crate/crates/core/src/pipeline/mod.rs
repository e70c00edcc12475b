//! Stage orchestration behind the `telerisk` command: one JSON config,
//! plain CSV/JSON artifacts on disk, and exit codes by failure class.

mod artifacts;
mod config;
mod stages;

pub use artifacts::{header_line, read_artifact_csv, ARTIFACT_VERSION};
pub use config::{
    Auto, ClassifyConfig, Criterion, DepthSetting, GammaSetting, InputConfig, PipelineConfig, RiskConfig, Scheme,
    Search, SelectionConfig, WaveletConfig,
};
pub use stages::Stage;

use crate::classifier::ClassifierError;
use crate::portfolio::PortfolioError;
use crate::risk::RiskError;
use crate::severity::SeverityError;
use crate::trip::IngestError;
use crate::wavelet::WaveletError;
use std::fmt;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numerical,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Config => 2,
            ErrorKind::Data => 3,
            ErrorKind::Numerical => 4,
        }
    }
}

impl fmt::Display for ErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ErrorKind::Config => "config error",
            ErrorKind::Data => "data error",
            ErrorKind::Numerical => "numerical failure",
        })
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{kind}: {message}")]
pub struct PipelineError {
    pub kind: ErrorKind,
    pub message: String,
}

impl PipelineError {
    pub fn new(kind: ErrorKind, message: impl Into<String>) -> Self {
        Self { kind, message: message.into() }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Config, message)
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Data, message)
    }

    pub fn numerical(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Numerical, message)
    }

    pub fn exit_code(&self) -> i32 {
        self.kind.exit_code()
    }

    /// Prefixes the message, keeping the kind.
    pub fn context(self, what: impl fmt::Display) -> Self {
        Self { kind: self.kind, message: format!("{what}: {}", self.message) }
    }
}

impl From<WaveletError> for PipelineError {
    fn from(e: WaveletError) -> Self {
        let kind = match e {
            WaveletError::SeriesTooShort { .. } => ErrorKind::Data,
            WaveletError::ZeroVarianceSignal => ErrorKind::Numerical,
            _ => ErrorKind::Config,
        };
        Self::new(kind, e.to_string())
    }
}

impl From<IngestError> for PipelineError {
    fn from(e: IngestError) -> Self {
        match e {
            IngestError::InfeasibleSpec(_) => Self::config(e.to_string()),
            IngestError::Wavelet(w) => w.into(),
            _ => Self::data(e.to_string()),
        }
    }
}

impl From<PortfolioError> for PipelineError {
    fn from(e: PortfolioError) -> Self {
        let kind = match e {
            PortfolioError::BadConfig(_) => ErrorKind::Config,
            PortfolioError::ZeroVarianceSignal => ErrorKind::Numerical,
            _ => ErrorKind::Data,
        };
        Self::new(kind, e.to_string())
    }
}

impl From<SeverityError> for PipelineError {
    fn from(e: SeverityError) -> Self {
        let kind = match e {
            SeverityError::InvalidConfig(_) => ErrorKind::Config,
            _ => ErrorKind::Numerical,
        };
        Self::new(kind, e.to_string())
    }
}

impl From<RiskError> for PipelineError {
    fn from(e: RiskError) -> Self {
        let kind = match e {
            RiskError::BadOmega(_) | RiskError::BadWeights(_) => ErrorKind::Config,
            _ => ErrorKind::Data,
        };
        Self::new(kind, e.to_string())
    }
}

impl From<ClassifierError> for PipelineError {
    fn from(e: ClassifierError) -> Self {
        match e {
            ClassifierError::BadConfig(_) => Self::config(e.to_string()),
            ClassifierError::DegenerateInnerSplit(_) => Self::numerical(e.to_string()),
            ClassifierError::Risk(r) => r.into(),
            _ => Self::data(e.to_string()),
        }
    }
}

impl From<std::io::Error> for PipelineError {
    fn from(e: std::io::Error) -> Self {
        Self::data(e.to_string())
    }
}

impl From<csv::Error> for PipelineError {
    fn from(e: csv::Error) -> Self {
        Self::data(e.to_string())
    }
}

impl From<serde_json::Error> for PipelineError {
    fn from(e: serde_json::Error) -> Self {
        Self::data(e.to_string())
    }
}

/// A validated config bound to an output directory.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub config: PipelineConfig,
    pub out_dir: PathBuf,
    pub config_hash: String,
    /// Reuse fitted selection cells whose inputs are unchanged.
    pub resume: bool,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Result<Self, PipelineError> {
        config.validate()?;
        Ok(Self { out_dir: config.output_dir.clone(), config_hash: config.hash(), config, resume: false })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    pub fn out_dir(&self) -> &Path {
        &self.out_dir
    }

    pub fn run(&self, stage: Stage) -> Result<(), PipelineError> {
        std::fs::create_dir_all(&self.out_dir)
            .map_err(|e| PipelineError::config(format!("output dir {}: {e}", self.out_dir.display())))?;
        log::info!("{} (config {})", stage.name(), &self.config_hash[..12]);
        stages::run(self, stage)
    }
}
