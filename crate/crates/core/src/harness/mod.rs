//! Experiment orchestration: training the suite, evaluation runs and reports.

pub mod config;
mod dump;
pub mod experiments;
pub mod report;
pub mod suite;

use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use log::info;
use thiserror::Error;

use crate::adaptive::AdaptiveError;
use crate::attacks::AttackError;
use crate::classifier::ClassifierError;
use crate::dataset::IdxError;
use crate::ensemble::EnsembleError;
use crate::persist::PersistError;
use crate::transforms::TransformError;

pub use config::{ArchitectureChoice, ExperimentConfig, DATA_DIR_ENV};
pub use dump::{read_ae_dump, AeDump};
pub use experiments::{benign, hybrid, paa_grid, taa_sweep, train, transfer};
pub use report::{write_report, write_timing, ExperimentReport, ReportFormat, ReportRow, Table};
pub use suite::{DataSplits, Manifest, ManifestEntry, Suite};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("model file missing: {}", .0.display())]
    MissingModel(PathBuf),
    #[error("models in {} were trained with different settings", .0.display())]
    StaleModels(PathBuf),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Data(#[from] IdxError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Persist(#[from] PersistError),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
    #[error(transparent)]
    Adaptive(#[from] AdaptiveError),
    #[error(transparent)]
    Transform(#[from] TransformError),
}

impl HarnessError {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Train,
    Benign,
    Transfer,
    Taa,
    Paa,
    Hybrid,
}

impl Command {
    pub const ALL: [Command; 6] = [
        Command::Train,
        Command::Benign,
        Command::Transfer,
        Command::Taa,
        Command::Paa,
        Command::Hybrid,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Train => "train",
            Command::Benign => "benign",
            Command::Transfer => "transfer",
            Command::Taa => "taa",
            Command::Paa => "paa",
            Command::Hybrid => "hybrid",
        }
    }
}

impl FromStr for Command {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Command::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| HarnessError::Invalid(format!("unknown command '{s}'")))
    }
}

/// Runs `command`, writing its report as CSV and JSON plus a timing file
/// under `cfg.reports_dir`. Returns the files written.
pub fn run(command: Command, cfg: &ExperimentConfig) -> Result<Vec<PathBuf>, HarnessError> {
    cfg.validate()?;
    let start = Instant::now();
    let splits = DataSplits::load(cfg)?;
    let report = if command == Command::Train {
        train(cfg, &splits)?
    } else {
        let suite = Suite::load(cfg)?;
        match command {
            Command::Benign => benign(cfg, &suite, &splits)?,
            Command::Transfer => transfer(cfg, &suite, &splits)?,
            Command::Taa => taa_sweep(cfg, &suite, &splits)?,
            Command::Paa => paa_grid(cfg, &suite, &splits)?,
            Command::Hybrid => hybrid(cfg, &suite, &splits)?,
            Command::Train => unreachable!(),
        }
    };
    let mut written = write_report(&report, &cfg.reports_dir, ReportFormat::Csv)?;
    written.extend(write_report(&report, &cfg.reports_dir, ReportFormat::Json)?);
    let seconds = start.elapsed().as_secs_f64();
    written.push(write_timing(&cfg.reports_dir, command.name(), seconds)?);
    info!("{} finished in {seconds:.1}s", command.name());
    Ok(written)
}
