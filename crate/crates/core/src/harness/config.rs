//! Experiment configuration: `key = value` files with `#` comments.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::HarnessError;
use crate::adaptive::Aggregation;
use crate::attacks::AttackConfig;
use crate::classifier::TrainConfig;
use crate::ensemble::Strategy;
use crate::network::Architecture;
use crate::optim::AdamConfig;

pub const DATA_DIR_ENV: &str = "GAUNTLET_DATA_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArchitectureChoice {
    Compact,
    Full,
}

impl ArchitectureChoice {
    pub fn architecture(self) -> Architecture {
        match self {
            ArchitectureChoice::Compact => Architecture::compact(),
            ArchitectureChoice::Full => Architecture::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(skip)]
    pub data_dir: PathBuf,
    #[serde(skip)]
    pub models_dir: PathBuf,
    #[serde(skip)]
    pub reports_dir: PathBuf,
    #[serde(skip)]
    pub dump_aes: bool,

    pub seed: u64,
    pub rd_seed: u64,

    pub architecture: ArchitectureChoice,
    pub train_subset: usize,
    pub val_subset: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub max_epochs: usize,
    pub patience: usize,
    pub include_irreversible: bool,

    /// Presets for benign, transfer and TAA experiments.
    pub attacks: Vec<String>,
    /// Presets for PAA.
    pub paa_attacks: Vec<String>,
    pub strategies: Vec<Strategy>,
    pub aggregations: Vec<Aggregation>,
    pub budget: f64,
    pub paa_max_rounds: usize,

    pub eval_subset: usize,
    pub ranking_sample: usize,
    pub transfer_subset: usize,
    pub paa_subset: usize,
    /// Attack every target in TAA, or only the top-ranked one.
    pub taa_all_targets: bool,

    pub hybrid_attack: String,
    pub hybrid_m: Vec<usize>,
    pub repetitions: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data_dir: std::env::var_os(DATA_DIR_ENV).map_or_else(|| PathBuf::from("data/mnist"), PathBuf::from),
            models_dir: PathBuf::from("models"),
            reports_dir: PathBuf::from("reports"),
            dump_aes: false,
            seed: 0,
            rd_seed: 0,
            architecture: ArchitectureChoice::Compact,
            train_subset: 10_000,
            val_subset: 1_000,
            batch_size: 64,
            learning_rate: 1e-3,
            max_epochs: 30,
            patience: 5,
            include_irreversible: false,
            attacks: ["taa-fgsm", "taa-pgd", "cw", "deepfool"].map(String::from).to_vec(),
            paa_attacks: ["paa-fgsm", "paa-pgd", "cw", "deepfool"].map(String::from).to_vec(),
            strategies: Strategy::ALL.to_vec(),
            aggregations: Aggregation::ALL.to_vec(),
            budget: 0.3,
            paa_max_rounds: 20,
            eval_subset: 500,
            ranking_sample: 100,
            transfer_subset: 100,
            paa_subset: 100,
            taa_all_targets: true,
            hybrid_attack: "taa-pgd".to_string(),
            hybrid_m: vec![0, 7, 14],
            repetitions: 5,
        }
    }
}

fn parse_list<T>(value: &str, f: impl Fn(&str) -> Result<T, String>) -> Result<Vec<T>, String> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(f)
        .collect()
}

fn parse_num<T: std::str::FromStr>(value: &str) -> Result<T, String> {
    value.parse().map_err(|_| format!("'{value}' is not a valid number"))
}

fn parse_bool(value: &str) -> Result<bool, String> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        other => Err(format!("'{other}' is not a boolean")),
    }
}

fn check_preset(name: &str) -> Result<String, String> {
    AttackConfig::preset(name).map(|_| name.to_string()).map_err(|e| e.to_string())
}

impl ExperimentConfig {
    /// Paper-sized data and the full-width network.
    pub fn full_scale(mut self) -> Self {
        self.architecture = ArchitectureChoice::Full;
        self.train_subset = 60_000;
        self.val_subset = 5_000;
        self.eval_subset = 5_000;
        self.transfer_subset = 5_000;
        self.paa_subset = 5_000;
        self
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let v = value.trim();
        match key.trim() {
            "data_dir" => self.data_dir = PathBuf::from(v),
            "models_dir" => self.models_dir = PathBuf::from(v),
            "reports_dir" => self.reports_dir = PathBuf::from(v),
            "dump_aes" => self.dump_aes = parse_bool(v)?,
            "scale" => match v {
                "desk" => {}
                "full" => *self = self.clone().full_scale(),
                other => return Err(format!("unknown scale '{other}'")),
            },
            "seed" => self.seed = parse_num(v)?,
            "rd_seed" => self.rd_seed = parse_num(v)?,
            "architecture" => {
                self.architecture = match v {
                    "compact" => ArchitectureChoice::Compact,
                    "full" => ArchitectureChoice::Full,
                    other => return Err(format!("unknown architecture '{other}'")),
                }
            }
            "train_subset" => self.train_subset = parse_num(v)?,
            "val_subset" => self.val_subset = parse_num(v)?,
            "batch_size" => self.batch_size = parse_num(v)?,
            "learning_rate" => self.learning_rate = parse_num(v)?,
            "max_epochs" => self.max_epochs = parse_num(v)?,
            "patience" => self.patience = parse_num(v)?,
            "include_irreversible" => self.include_irreversible = parse_bool(v)?,
            "attacks" => self.attacks = parse_list(v, check_preset)?,
            "paa_attacks" => self.paa_attacks = parse_list(v, check_preset)?,
            "strategies" => self.strategies = parse_list(v, |s| s.parse().map_err(|e: crate::ensemble::EnsembleError| e.to_string()))?,
            "aggregations" => self.aggregations = parse_list(v, str::parse)?,
            "budget" => self.budget = parse_num(v)?,
            "paa_max_rounds" => self.paa_max_rounds = parse_num(v)?,
            "eval_subset" => self.eval_subset = parse_num(v)?,
            "ranking_sample" => self.ranking_sample = parse_num(v)?,
            "transfer_subset" => self.transfer_subset = parse_num(v)?,
            "paa_subset" => self.paa_subset = parse_num(v)?,
            "taa_all_targets" => self.taa_all_targets = parse_bool(v)?,
            "hybrid_attack" => self.hybrid_attack = check_preset(v)?,
            "hybrid_m" => self.hybrid_m = parse_list(v, parse_num)?,
            "repetitions" => self.repetitions = parse_num(v)?,
            other => return Err(format!("unknown key '{other}'")),
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<(), HarnessError> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| HarnessError::Config {
                line: n + 1,
                message: format!("expected 'key = value', got '{line}'"),
            })?;
            self.set(key, value).map_err(|message| HarnessError::Config { line: n + 1, message })?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Invalid(m.to_string()));
        if self.train_subset == 0 || self.val_subset == 0 || self.eval_subset == 0 {
            return bad("data subsets must be non-empty");
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return bad("batch_size and max_epochs must be positive");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if !(self.budget.is_finite() && self.budget >= 0.0) {
            return bad("budget must be non-negative");
        }
        if self.strategies.is_empty() || self.attacks.is_empty() {
            return bad("strategies and attacks must be non-empty");
        }
        if self.ranking_sample == 0 {
            return bad("ranking_sample must be at least 1");
        }
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            architecture: self.architecture.architecture(),
            adam: AdamConfig {
                learning_rate: self.learning_rate,
                ..AdamConfig::default()
            },
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
        }
    }

    /// Hex SHA-256 of the canonical JSON form (paths and output flags excluded).
    pub fn fingerprint(&self) -> String {
        hex_digest(serde_json::to_string(self).expect("config serializes").as_bytes())
    }

    /// Fingerprint of the settings that determine trained weights.
    pub fn training_fingerprint(&self) -> String {
        let key = serde_json::json!({
            "seed": self.seed,
            "train": self.train_config(),
            "train_subset": self.train_subset,
            "val_subset": self.val_subset,
        });
        hex_digest(key.to_string().as_bytes())
    }
}

pub fn hex_digest(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut s = String::with_capacity(64);
    for b in digest {
        write!(s, "{b:02x}").expect("string write");
    }
    s
}
