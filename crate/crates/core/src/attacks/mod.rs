//! Gradient-based evasion attacks against a single differentiable classifier.
//!
//! Every attack works in the victim's own input domain: for a sub-model that
//! is the transformed image, not the raw one.

mod cw;
mod deepfool;
mod gradient;
mod linear;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::Differentiable;
use crate::tensor::{Tensor, TensorError};

pub use cw::cw_l2;
pub use deepfool::deepfool;
pub use gradient::{fgsm, pgd, pgd_full};
pub use linear::LinearModel;

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("invalid attack config: {0}")]
    InvalidConfig(String),
    #[error("unknown attack preset '{0}'")]
    UnknownPreset(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Fgsm,
    Pgd,
    #[serde(rename = "cw-l2")]
    CwL2,
    #[serde(rename = "deepfool")]
    DeepFool,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Fgsm => "fgsm",
            Algorithm::Pgd => "pgd",
            Algorithm::CwL2 => "cw-l2",
            Algorithm::DeepFool => "deepfool",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = AttackError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "fgsm" => Ok(Algorithm::Fgsm),
            "pgd" => Ok(Algorithm::Pgd),
            "cw" | "cw-l2" | "cwl2" => Ok(Algorithm::CwL2),
            "deepfool" => Ok(Algorithm::DeepFool),
            other => Err(AttackError::InvalidConfig(format!("unknown algorithm '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Norm {
    Linf,
    L2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub algorithm: Algorithm,
    pub norm: Norm,
    pub epsilon: f32,
    pub step_size: f32,
    pub max_iterations: usize,
    pub binary_search_steps: usize,
    pub initial_constant: f32,
    pub learning_rate: f32,
    pub overshoot: f32,
    pub num_candidates: usize,
    /// PGD only: stop at the first iterate that fools the model.
    #[serde(default = "default_early_stop")]
    pub early_stop: bool,
}

fn default_early_stop() -> bool {
    true
}

/// Names accepted by [`AttackConfig::preset`].
pub const PRESETS: [&str; 6] = ["taa-fgsm", "paa-fgsm", "taa-pgd", "paa-pgd", "cw", "deepfool"];

impl AttackConfig {
    fn base(algorithm: Algorithm, norm: Norm) -> Self {
        Self {
            algorithm,
            norm,
            epsilon: 0.0,
            step_size: 0.0,
            max_iterations: 1,
            binary_search_steps: 1,
            initial_constant: 0.0,
            learning_rate: 0.0,
            overshoot: 0.0,
            num_candidates: 1,
            early_stop: true,
        }
    }

    pub fn fgsm(epsilon: f32) -> Self {
        Self {
            epsilon,
            step_size: epsilon,
            ..Self::base(Algorithm::Fgsm, Norm::Linf)
        }
    }

    /// Step size defaults to a tenth of the budget.
    pub fn pgd(epsilon: f32, max_iterations: usize) -> Self {
        Self {
            epsilon,
            step_size: epsilon / 10.0,
            max_iterations,
            ..Self::base(Algorithm::Pgd, Norm::Linf)
        }
    }

    pub fn cw() -> Self {
        Self {
            max_iterations: 100,
            binary_search_steps: 10,
            initial_constant: 0.01,
            learning_rate: 0.01,
            ..Self::base(Algorithm::CwL2, Norm::L2)
        }
    }

    pub fn deepfool() -> Self {
        Self {
            max_iterations: 100,
            overshoot: 1e-6,
            num_candidates: 3,
            ..Self::base(Algorithm::DeepFool, Norm::L2)
        }
    }

    /// Runs PGD for every iteration instead of stopping once the model is fooled.
    pub fn full_budget(self) -> Self {
        Self { early_stop: false, ..self }
    }

    pub fn preset(name: &str) -> Result<Self, AttackError> {
        Ok(match name {
            "taa-fgsm" => Self::fgsm(0.3),
            "paa-fgsm" => Self::fgsm(0.05),
            "taa-pgd" => Self::pgd(0.3, 100).full_budget(),
            "paa-pgd" => Self::pgd(0.05, 250).full_budget(),
            "cw" => Self::cw(),
            "deepfool" => Self::deepfool(),
            other => return Err(AttackError::UnknownPreset(other.to_string())),
        })
    }

    pub fn validate(&self) -> Result<(), AttackError> {
        let fail = |m: &str| Err(AttackError::InvalidConfig(m.to_string()));
        let finite = [
            self.epsilon,
            self.step_size,
            self.initial_constant,
            self.learning_rate,
            self.overshoot,
        ]
        .iter()
        .all(|v| v.is_finite() && *v >= 0.0);
        if !finite {
            return fail("scalars must be finite and non-negative");
        }
        match self.algorithm {
            Algorithm::Fgsm | Algorithm::Pgd => {
                if self.norm != Norm::Linf {
                    return fail("FGSM and PGD use the L-inf norm");
                }
                if self.epsilon <= 0.0 {
                    return fail("epsilon must be positive");
                }
                if self.algorithm == Algorithm::Pgd && !(self.step_size > 0.0 && self.step_size < self.epsilon) {
                    return fail("PGD step size must lie in (0, epsilon)");
                }
            }
            Algorithm::CwL2 | Algorithm::DeepFool => {
                if self.norm != Norm::L2 {
                    return fail("CW and DeepFool use the L2 norm");
                }
                if self.max_iterations == 0 {
                    return fail("max_iterations must be positive");
                }
                if self.algorithm == Algorithm::CwL2 && self.binary_search_steps == 0 {
                    return fail("binary_search_steps must be positive");
                }
                if self.algorithm == Algorithm::DeepFool && self.num_candidates == 0 {
                    return fail("num_candidates must be positive");
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackResult {
    pub adversarial: Tensor,
    /// The victim's label on `adversarial` differs from the ground truth.
    pub success: bool,
    pub iterations_used: usize,
    pub l2_distortion: f64,
}

impl AttackResult {
    fn new<M: Differentiable>(model: &M, x: &Tensor, y: usize, adversarial: Tensor, iterations_used: usize) -> Result<Self, AttackError> {
        let success = model.predict_label(&adversarial)? != y;
        let l2_distortion = adversarial.sub(x)?.l2_norm();
        Ok(Self {
            adversarial,
            success,
            iterations_used,
            l2_distortion,
        })
    }
}

/// Runs the configured attack.
pub fn run<M: Differentiable>(model: &M, x: &Tensor, y: usize, config: &AttackConfig) -> Result<AttackResult, AttackError> {
    config.validate()?;
    match config.algorithm {
        Algorithm::Fgsm => fgsm(model, x, y, config.epsilon),
        Algorithm::Pgd if config.early_stop => pgd(model, x, y, config.epsilon, config.step_size, config.max_iterations),
        Algorithm::Pgd => pgd_full(model, x, y, config.epsilon, config.step_size, config.max_iterations),
        Algorithm::CwL2 => cw_l2(model, x, y, config),
        Algorithm::DeepFool => deepfool(model, x, y, config),
    }
}
