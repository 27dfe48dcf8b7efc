//! Combining member predictions under the five ensemble strategies.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{ClassifierError, Prediction, SubModel};
use crate::dataset::LabelledSet;
use crate::rng::{derive_seed, seeded};
use crate::tensor::{argmax, Tensor};

#[derive(Debug, Error)]
pub enum EnsembleError {
    #[error("ensemble has no members")]
    Empty,
    #[error("duplicate member id '{0}'")]
    DuplicateMember(String),
    #[error("unknown ensemble strategy '{0}'")]
    UnknownStrategy(String),
    #[error("members disagree on the number of classes")]
    ClassCountMismatch,
    #[error("evaluation set is empty")]
    EmptySet,
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
}

/// Anything that can vote in an ensemble. Implementations classify the raw
/// input, applying their own preprocessing.
pub trait Member: Send + Sync {
    fn id(&self) -> &str;
    fn predict(&self, x: &Tensor) -> Result<Prediction, ClassifierError>;
}

impl Member for SubModel {
    fn id(&self) -> &str {
        &self.spec.id
    }

    fn predict(&self, x: &Tensor) -> Result<Prediction, ClassifierError> {
        SubModel::predict(self, x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Rd,
    Mv,
    T2mv,
    Avep,
    Avel,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [Strategy::Rd, Strategy::Mv, Strategy::T2mv, Strategy::Avep, Strategy::Avel];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Rd => "rd",
            Strategy::Mv => "mv",
            Strategy::T2mv => "t2mv",
            Strategy::Avep => "avep",
            Strategy::Avel => "avel",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = EnsembleError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| EnsembleError::UnknownStrategy(s.to_string()))
    }
}

#[derive(Clone)]
pub struct EnsembleConfig {
    members: Vec<Arc<dyn Member>>,
    pub strategy: Strategy,
    pub rd_seed: u64,
}

impl fmt::Debug for EnsembleConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EnsembleConfig")
            .field("members", &self.member_ids())
            .field("strategy", &self.strategy)
            .field("rd_seed", &self.rd_seed)
            .finish()
    }
}

impl EnsembleConfig {
    pub fn new(members: Vec<Arc<dyn Member>>, strategy: Strategy, rd_seed: u64) -> Result<Self, EnsembleError> {
        if members.is_empty() {
            return Err(EnsembleError::Empty);
        }
        let mut seen = HashSet::new();
        for m in &members {
            if !seen.insert(m.id().to_string()) {
                return Err(EnsembleError::DuplicateMember(m.id().to_string()));
            }
        }
        Ok(Self {
            members,
            strategy,
            rd_seed,
        })
    }

    pub fn from_submodels(models: &[Arc<SubModel>], strategy: Strategy, rd_seed: u64) -> Result<Self, EnsembleError> {
        Self::new(
            models.iter().map(|m| Arc::clone(m) as Arc<dyn Member>).collect(),
            strategy,
            rd_seed,
        )
    }

    pub fn members(&self) -> &[Arc<dyn Member>] {
        &self.members
    }

    pub fn member_ids(&self) -> Vec<&str> {
        self.members.iter().map(|m| m.id()).collect()
    }

    pub fn with_strategy(&self, strategy: Strategy) -> Self {
        Self {
            strategy,
            ..self.clone()
        }
    }

    /// Member consulted by RD for the example at `index`.
    pub fn rd_member(&self, index: u64) -> usize {
        rd_index(self.rd_seed, index, self.members.len())
    }
}

/// Member index RD consults for example `index` of an ensemble of `n`.
pub fn rd_index(rd_seed: u64, index: u64, n: usize) -> usize {
    seeded(derive_seed(rd_seed, index)).random_range(0..n)
}

/// Label chosen by `strategy` from already computed member predictions.
pub fn decide(strategy: Strategy, predictions: &[Prediction], rd_seed: u64, index: u64) -> Result<usize, EnsembleError> {
    if strategy == Strategy::Rd {
        if predictions.is_empty() {
            return Err(EnsembleError::Empty);
        }
        return Ok(predictions[rd_index(rd_seed, index, predictions.len())].label);
    }
    combine(strategy, predictions)
}

/// Label with the most votes; ties go to the larger summed
/// probability, then lower label.
fn plurality(votes: &[u32], prob_sums: &[f64]) -> usize {
    let mut best = 0;
    for k in 1..votes.len() {
        let better = votes[k] > votes[best] || (votes[k] == votes[best] && prob_sums[k] > prob_sums[best]);
        if better {
            best = k;
        }
    }
    best
}

/// Indices of the two largest probabilities, lower index first on ties.
fn top2(p: &[f32]) -> [usize; 2] {
    let first = argmax(p);
    let mut second = if first == 0 { 1 } else { 0 };
    for (k, &v) in p.iter().enumerate() {
        if k != first && v > p[second] {
            second = k;
        }
    }
    [first, second]
}

/// Combines the predictions of every member. RD is not handled here since it
/// consults a single member; see [`EnsembleConfig::rd_member`].
pub fn combine(strategy: Strategy, predictions: &[Prediction]) -> Result<usize, EnsembleError> {
    let first = predictions.first().ok_or(EnsembleError::Empty)?;
    let classes = first.probabilities.len();
    if predictions
        .iter()
        .any(|p| p.probabilities.len() != classes || p.logits.len() != classes)
    {
        return Err(EnsembleError::ClassCountMismatch);
    }
    let sum_over = |f: &dyn Fn(&Prediction) -> &[f32]| -> Vec<f64> {
        let mut acc = vec![0.0f64; classes];
        for p in predictions {
            for (a, &v) in acc.iter_mut().zip(f(p)) {
                *a += f64::from(v);
            }
        }
        acc
    };
    let argmax64 = |v: &[f64]| {
        let mut best = 0;
        for k in 1..v.len() {
            if v[k] > v[best] {
                best = k;
            }
        }
        best
    };
    Ok(match strategy {
        Strategy::Rd => first.label,
        Strategy::Mv | Strategy::T2mv => {
            let mut votes = vec![0u32; classes];
            for p in predictions {
                if strategy == Strategy::Mv {
                    votes[p.label] += 1;
                } else {
                    for k in top2(&p.probabilities) {
                        votes[k] += 1;
                    }
                }
            }
            plurality(&votes, &sum_over(&|p| &p.probabilities))
        }
        Strategy::Avep => argmax64(&sum_over(&|p| &p.probabilities)),
        Strategy::Avel => argmax64(&sum_over(&|p| &p.logits)),
    })
}

pub fn ensemble_predict(config: &EnsembleConfig, x: &Tensor) -> Result<usize, EnsembleError> {
    ensemble_predict_indexed(config, x, 0)
}

/// Prediction for the example at position `index` of an evaluation run;
/// the index seeds RD's member choice.
pub fn ensemble_predict_indexed(config: &EnsembleConfig, x: &Tensor, index: u64) -> Result<usize, EnsembleError> {
    if config.strategy == Strategy::Rd {
        return Ok(config.members[config.rd_member(index)].predict(x)?.label);
    }
    let preds = member_predictions(config, x)?;
    combine(config.strategy, &preds)
}

pub fn member_predictions(config: &EnsembleConfig, x: &Tensor) -> Result<Vec<Prediction>, EnsembleError> {
    Ok(config.members.iter().map(|m| m.predict(x)).collect::<Result<_, _>>()?)
}

pub fn ensemble_accuracy(config: &EnsembleConfig, set: &LabelledSet) -> Result<f64, EnsembleError> {
    Ok(accuracy_by_strategy(config, set, &[config.strategy])?[0])
}

/// Accuracy of the same members under several strategies, evaluating each
/// member once per example.
pub fn accuracy_by_strategy(
    config: &EnsembleConfig,
    set: &LabelledSet,
    strategies: &[Strategy],
) -> Result<Vec<f64>, EnsembleError> {
    if set.is_empty() {
        return Err(EnsembleError::EmptySet);
    }
    let mut correct = vec![0usize; strategies.len()];
    for (i, (x, y)) in set.iter().enumerate() {
        let preds = member_predictions(config, x)?;
        for (s, c) in strategies.iter().zip(correct.iter_mut()) {
            let label = if *s == Strategy::Rd {
                preds[config.rd_member(i as u64)].label
            } else {
                combine(*s, &preds)?
            };
            if label == y {
                *c += 1;
            }
        }
    }
    Ok(correct.iter().map(|&c| c as f64 / set.len() as f64).collect())
}
