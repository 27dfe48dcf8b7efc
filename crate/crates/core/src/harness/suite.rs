//! Data splits and the trained model suite on disk.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::info;
use serde::{Deserialize, Serialize};

use super::config::{hex_digest, ExperimentConfig};
use super::HarnessError;
use crate::classifier::{train_submodel_with_report, SubModel};
use crate::dataset::{load_mnist_dir, split_val_test, take_subset, LabelledSet};
use crate::persist::{encode_weights, load_weights};
use crate::rng::{derive_seed, str_hash};
use crate::transforms::{registry, TransformSpec};

pub const MANIFEST: &str = "manifest.json";

/// Seeded subsets derived from the standard train and test files.
#[derive(Debug, Clone)]
pub struct DataSplits {
    pub train: LabelledSet,
    /// Early-stopping set, drawn from the validation half of the test file.
    pub early_stop: LabelledSet,
    /// Sample for transferability ranking, also from the validation half.
    pub ranking: LabelledSet,
    /// Evaluation subset of the held-out test half.
    pub eval: LabelledSet,
}

fn clamp_subset(set: &LabelledSet, n: usize, seed: u64) -> Result<LabelledSet, HarnessError> {
    Ok(take_subset(set, n.min(set.len()), seed)?)
}

impl DataSplits {
    pub fn load(cfg: &ExperimentConfig) -> Result<Self, HarnessError> {
        let train = load_mnist_dir(&cfg.data_dir, true)?;
        let test = load_mnist_dir(&cfg.data_dir, false)?;
        let (val, held_out) = split_val_test(&test, derive_seed(cfg.seed, 2));
        Ok(Self {
            train: clamp_subset(&train, cfg.train_subset, derive_seed(cfg.seed, 1))?,
            early_stop: clamp_subset(&val, cfg.val_subset, derive_seed(cfg.seed, 3))?,
            ranking: clamp_subset(&val, cfg.ranking_sample, derive_seed(cfg.seed, 5))?,
            eval: clamp_subset(&held_out, cfg.eval_subset, derive_seed(cfg.seed, 4))?,
        })
    }
}

/// The first `n` examples of `set`.
pub fn prefix(set: &LabelledSet, n: usize) -> LabelledSet {
    let idx: Vec<usize> = (0..n.min(set.len())).collect();
    set.select(&idx)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub file: String,
    pub sha256: String,
    pub best_epoch: usize,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub training_fingerprint: String,
    pub models: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn read(dir: &Path) -> Result<Option<Self>, HarnessError> {
        let path = dir.join(MANIFEST);
        if !path.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(&path).map_err(|e| HarnessError::io(&path, e))?;
        Ok(Some(serde_json::from_str(&text)?))
    }

    fn write(&self, dir: &Path) -> Result<(), HarnessError> {
        let path = dir.join(MANIFEST);
        let text = serde_json::to_string_pretty(self)?;
        fs::write(&path, text).map_err(|e| HarnessError::io(&path, e))
    }

    pub fn entry(&self, id: &str) -> Option<&ManifestEntry> {
        self.models.iter().find(|e| e.id == id)
    }
}

/// The "original" model, the reversible members and, optionally, the
/// irreversible ones, in registry order.
pub fn suite_specs(include_irreversible: bool) -> Vec<TransformSpec> {
    std::iter::once(TransformSpec::identity()).chain(registry(include_irreversible)).collect()
}

fn model_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.egw"))
}

fn file_digest(path: &Path) -> Option<String> {
    fs::read(path).ok().map(|b| hex_digest(&b))
}

/// Trains every suite member whose weights are missing or stale, then writes
/// the manifest. Existing files trained under the same settings are reused.
pub fn train_suite(cfg: &ExperimentConfig, splits: &DataSplits) -> Result<Manifest, HarnessError> {
    let dir = &cfg.models_dir;
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let fingerprint = cfg.training_fingerprint();
    let previous = Manifest::read(dir)?.filter(|m| m.training_fingerprint == fingerprint);
    let train_cfg = cfg.train_config();
    let mut manifest = Manifest {
        training_fingerprint: fingerprint,
        models: Vec::new(),
    };
    for spec in suite_specs(cfg.include_irreversible) {
        let path = model_path(dir, &spec.id);
        let reusable = previous
            .as_ref()
            .and_then(|m| m.entry(&spec.id))
            .filter(|e| file_digest(&path).as_deref() == Some(e.sha256.as_str()));
        if let Some(entry) = reusable {
            info!("{}: reusing {}", spec.id, path.display());
            manifest.models.push(entry.clone());
            continue;
        }
        info!("{}: training", spec.id);
        let seed = derive_seed(cfg.seed, str_hash(&spec.id));
        let (model, report) = train_submodel_with_report(&spec, &splits.train, &splits.early_stop, &train_cfg, seed)?;
        let bytes = encode_weights(&model.weights);
        fs::write(&path, &bytes).map_err(|e| HarnessError::io(&path, e))?;
        let best = report
            .history
            .iter()
            .find(|s| s.epoch == report.best_epoch)
            .copied();
        manifest.models.push(ManifestEntry {
            id: spec.id.clone(),
            file: format!("{}.egw", spec.id),
            sha256: hex_digest(&bytes),
            best_epoch: report.best_epoch,
            val_loss: report.best_val_loss,
            val_accuracy: best.map_or(0.0, |s| s.val_accuracy),
        });
        // Persist progress so an interrupted run resumes.
        let mut partial = manifest.clone();
        if let Some(prev) = &previous {
            for e in &prev.models {
                if partial.entry(&e.id).is_none() {
                    partial.models.push(e.clone());
                }
            }
        }
        partial.write(dir)?;
    }
    manifest.write(dir)?;
    Ok(manifest)
}

#[derive(Debug, Clone)]
pub struct Suite {
    pub original: Arc<SubModel>,
    pub reversible: Vec<Arc<SubModel>>,
    pub irreversible: Vec<Arc<SubModel>>,
}

impl Suite {
    /// Loads every model listed for this configuration; irreversible members
    /// are loaded only when `include_irreversible` is set.
    pub fn load(cfg: &ExperimentConfig) -> Result<Self, HarnessError> {
        let dir = &cfg.models_dir;
        let manifest = Manifest::read(dir)?.ok_or_else(|| HarnessError::MissingModel(dir.join(MANIFEST)))?;
        if manifest.training_fingerprint != cfg.training_fingerprint() {
            return Err(HarnessError::StaleModels(dir.clone()));
        }
        let load = |spec: TransformSpec| -> Result<Arc<SubModel>, HarnessError> {
            let path = model_path(dir, &spec.id);
            if manifest.entry(&spec.id).is_none() || !path.exists() {
                return Err(HarnessError::MissingModel(path));
            }
            Ok(Arc::new(SubModel::new(spec, load_weights(&path)?)))
        };
        let original = load(TransformSpec::identity())?;
        let reversible = registry(false).into_iter().map(load).collect::<Result<_, _>>()?;
        let irreversible = if cfg.include_irreversible {
            registry(true).into_iter().filter(|s| !s.reversible).map(load).collect::<Result<_, _>>()?
        } else {
            Vec::new()
        };
        Ok(Self {
            original,
            reversible,
            irreversible,
        })
    }

    pub fn find(&self, id: &str) -> Option<&Arc<SubModel>> {
        std::iter::once(&self.original)
            .chain(&self.reversible)
            .chain(&self.irreversible)
            .find(|m| m.id() == id)
    }
}
