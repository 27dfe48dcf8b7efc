//! How often adversarial examples crafted on one member fool the others.

use std::fmt::Write as _;
use std::sync::Arc;

use log::debug;
use serde::{Deserialize, Serialize};

use super::AdaptiveError;
use crate::attacks::{run, AttackConfig};
use crate::classifier::SubModel;
use crate::dataset::LabelledSet;
use crate::ensemble::Member;
use crate::tensor::Tensor;
use crate::transforms::{apply, reset};

/// Adversarial examples crafted on one victim, mapped back to the original
/// image space, one per example of the evaluation set.
#[derive(Debug, Clone, PartialEq)]
pub struct VictimAes {
    pub victim: String,
    /// Clean inputs the victim already misclassifies are kept as they are.
    pub adversarials: Vec<Tensor>,
    pub clean_correct: Vec<bool>,
    /// The victim misclassifies the example's adversarial.
    pub fooled: Vec<bool>,
}

impl VictimAes {
    /// Indices attacked from a correct clean prediction that now fool the victim.
    pub fn successful(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.adversarials.len()).filter(|&i| self.clean_correct[i] && self.fooled[i])
    }
}

pub fn generate_victim_aes(victim: &SubModel, attack: &AttackConfig, set: &LabelledSet) -> Result<VictimAes, AdaptiveError> {
    if !victim.spec.is_resettable() {
        return Err(AdaptiveError::Irreversible(victim.spec.id.clone()));
    }
    let mut out = VictimAes {
        victim: victim.spec.id.clone(),
        adversarials: Vec::with_capacity(set.len()),
        clean_correct: Vec::with_capacity(set.len()),
        fooled: Vec::with_capacity(set.len()),
    };
    for (x, y) in set.iter() {
        let correct = Member::predict(victim, x)?.label == y;
        let adv = if correct {
            let xt = apply(&victim.spec, x)?;
            let r = run(victim, &xt, y, attack)?;
            reset(&victim.spec, &r.adversarial)?
        } else {
            x.clone()
        };
        let fooled = Member::predict(victim, &adv)?.label != y;
        out.adversarials.push(adv);
        out.clean_correct.push(correct);
        out.fooled.push(fooled);
    }
    debug!(
        "{}: {} of {} examples fooled",
        out.victim,
        out.successful().count(),
        set.len()
    );
    Ok(out)
}

/// Victims as rows, evaluators as columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferMatrix {
    pub victims: Vec<String>,
    pub evaluators: Vec<String>,
    /// `None` for every entry of a victim with no successful examples.
    pub rates: Vec<Vec<Option<f64>>>,
    pub ae_counts: Vec<usize>,
    /// Row mean over evaluators other than the victim itself.
    pub averages: Vec<Option<f64>>,
}

impl TransferMatrix {
    pub fn rate(&self, victim: &str, evaluator: &str) -> Option<f64> {
        let r = self.victims.iter().position(|v| v == victim)?;
        let c = self.evaluators.iter().position(|e| e == evaluator)?;
        self.rates[r][c]
    }

    /// Mean of the defined row averages.
    pub fn mean_average(&self) -> Option<f64> {
        let defined: Vec<f64> = self.averages.iter().flatten().copied().collect();
        (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
    }

    /// Header `victim,aes,<evaluators...>,Average`; undefined cells are `NA`.
    pub fn to_csv(&self) -> String {
        let cell = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |r| format!("{r:.4}"));
        let mut s = String::from("victim,aes");
        for e in &self.evaluators {
            s.push(',');
            s.push_str(e);
        }
        s.push_str(",Average\n");
        for (i, v) in self.victims.iter().enumerate() {
            write!(s, "{v},{}", self.ae_counts[i]).expect("string write");
            for &r in &self.rates[i] {
                s.push(',');
                s.push_str(&cell(r));
            }
            s.push(',');
            s.push_str(&cell(self.averages[i]));
            s.push('\n');
        }
        s
    }
}

pub fn transfer_matrix_from_aes(
    aes: &[VictimAes],
    evaluators: &[Arc<dyn Member>],
    set: &LabelledSet,
) -> Result<TransferMatrix, AdaptiveError> {
    let mut m = TransferMatrix {
        victims: aes.iter().map(|a| a.victim.clone()).collect(),
        evaluators: evaluators.iter().map(|e| e.id().to_string()).collect(),
        rates: Vec::with_capacity(aes.len()),
        ae_counts: Vec::with_capacity(aes.len()),
        averages: Vec::with_capacity(aes.len()),
    };
    for a in aes {
        let successful: Vec<usize> = a.successful().collect();
        m.ae_counts.push(successful.len());
        if successful.is_empty() {
            m.rates.push(vec![None; evaluators.len()]);
            m.averages.push(None);
            continue;
        }
        let mut row = Vec::with_capacity(evaluators.len());
        for e in evaluators {
            let mut fooled = 0usize;
            for &i in &successful {
                if e.predict(&a.adversarials[i])?.label != set.get(i).1 {
                    fooled += 1;
                }
            }
            row.push(Some(fooled as f64 / successful.len() as f64));
        }
        let others: Vec<f64> = evaluators
            .iter()
            .zip(&row)
            .filter(|(e, _)| e.id() != a.victim)
            .filter_map(|(_, r)| *r)
            .collect();
        m.averages
            .push((!others.is_empty()).then(|| others.iter().sum::<f64>() / others.len() as f64));
        m.rates.push(row);
    }
    Ok(m)
}

/// Attacks every victim over `set` and measures transfer to `evaluators`.
/// Only examples the victim classifies correctly are attacked.
pub fn transfer_matrix(
    victims: &[Arc<SubModel>],
    evaluators: &[Arc<dyn Member>],
    attack: &AttackConfig,
    set: &LabelledSet,
) -> Result<TransferMatrix, AdaptiveError> {
    let aes = victims
        .iter()
        .map(|v| generate_victim_aes(v, attack, set))
        .collect::<Result<Vec<_>, _>>()?;
    transfer_matrix_from_aes(&aes, evaluators, set)
}

/// Members ordered by the accuracy the other members keep on their
/// adversarial examples, lowest (most transferable) first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferRanking {
    pub entries: Vec<(String, f64)>,
}

impl TransferRanking {
    /// Sorts ascending by score, breaking exact ties by id.
    pub fn from_scores(mut entries: Vec<(String, f64)>) -> Self {
        entries.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
        Self { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> Vec<&str> {
        self.entries.iter().map(|(id, _)| id.as_str()).collect()
    }

    pub fn top(&self) -> Option<&str> {
        self.entries.first().map(|(id, _)| id.as_str())
    }

    /// 1-based position of `id`.
    pub fn position(&self, id: &str) -> Option<usize> {
        self.entries.iter().position(|(e, _)| e == id).map(|p| p + 1)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("rank,member,other_accuracy\n");
        for (i, (id, score)) in self.entries.iter().enumerate() {
            writeln!(s, "{},{id},{score:.4}", i + 1).expect("string write");
        }
        s
    }
}

/// Scores each candidate by the mean accuracy of the other members on all of
/// its examples. A lone member is scored by its own accuracy.
pub fn transfer_ranking_from_aes(
    aes: &[VictimAes],
    members: &[Arc<dyn Member>],
    set: &LabelledSet,
) -> Result<TransferRanking, AdaptiveError> {
    if set.is_empty() {
        return Err(AdaptiveError::EmptySet);
    }
    if aes.len() != members.len() || aes.iter().any(|a| !members.iter().any(|m| m.id() == a.victim)) {
        return Err(AdaptiveError::RankingMismatch);
    }
    let mut scores = Vec::with_capacity(aes.len());
    for a in aes {
        let judges: Vec<&Arc<dyn Member>> = if members.len() == 1 {
            members.iter().collect()
        } else {
            members.iter().filter(|m| m.id() != a.victim).collect()
        };
        let mut total = 0.0;
        for judge in &judges {
            let mut correct = 0usize;
            for (i, adv) in a.adversarials.iter().enumerate() {
                if judge.predict(adv)?.label == set.get(i).1 {
                    correct += 1;
                }
            }
            total += correct as f64 / set.len() as f64;
        }
        scores.push((a.victim.clone(), total / judges.len() as f64));
    }
    Ok(TransferRanking::from_scores(scores))
}

pub fn transfer_ranking(
    members: &[Arc<SubModel>],
    attack: &AttackConfig,
    sample: &LabelledSet,
) -> Result<TransferRanking, AdaptiveError> {
    if members.is_empty() {
        return Err(AdaptiveError::NoMembers);
    }
    let aes = members
        .iter()
        .map(|m| generate_victim_aes(m, attack, sample))
        .collect::<Result<Vec<_>, _>>()?;
    let as_members: Vec<Arc<dyn Member>> = members.iter().map(|m| Arc::clone(m) as Arc<dyn Member>).collect();
    transfer_ranking_from_aes(&aes, &as_members, sample)
}
