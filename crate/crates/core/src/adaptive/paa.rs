use std::sync::Arc;

use log::trace;
use serde::{Deserialize, Serialize};

use super::{aggregate, dissimilarity, AdaptiveError, Aggregation, TransferRanking};
use crate::attacks::{run, AttackConfig};
use crate::classifier::{Prediction, SubModel};
use crate::ensemble::{combine, Member, Strategy};
use crate::tensor::Tensor;
use crate::transforms::{apply, reset};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PaaConfig {
    pub attack: AttackConfig,
    pub aggregation: Aggregation,
    /// Largest accepted dissimilarity to the clean input.
    pub budget: f64,
    /// Upper bound on aggregation rounds.
    pub max_rounds: usize,
}

impl PaaConfig {
    pub fn new(attack: AttackConfig, aggregation: Aggregation) -> Self {
        Self {
            attack,
            aggregation,
            budget: 0.3,
            max_rounds: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PaaOutcome {
    pub adversarial: Tensor,
    pub dissimilarity: f64,
    pub rounds: usize,
    /// Members misclassifying `adversarial`.
    pub fooled_members: usize,
    /// Majority vote of the members misclassifies `adversarial`.
    pub success: bool,
}

/// Repeatedly attacks every member not yet fooled, aggregates their
/// perturbations and keeps the result while it stays within the
/// dissimilarity budget.
pub fn paa(
    x: &Tensor,
    y: usize,
    members: &[Arc<SubModel>],
    ranking: &TransferRanking,
    config: &PaaConfig,
) -> Result<PaaOutcome, AdaptiveError> {
    if members.is_empty() {
        return Err(AdaptiveError::NoMembers);
    }
    let mut ordered: Vec<(usize, &Arc<SubModel>)> = Vec::with_capacity(members.len());
    for m in members {
        if !m.spec.is_resettable() {
            return Err(AdaptiveError::Irreversible(m.id().to_string()));
        }
        let pos = ranking.position(m.id()).ok_or_else(|| AdaptiveError::NotRanked(m.id().to_string()))?;
        ordered.push((pos, m));
    }
    ordered.sort_by_key(|(pos, _)| *pos);
    if x.l2_norm() == 0.0 {
        return Err(AdaptiveError::ZeroReference);
    }

    let predictions = |img: &Tensor| -> Result<Vec<Prediction>, AdaptiveError> {
        ordered
            .iter()
            .map(|(_, m)| Member::predict(m.as_ref(), img).map_err(AdaptiveError::from))
            .collect()
    };
    let mut x_adv = x.clone();
    let mut preds = predictions(&x_adv)?;
    let mut rounds = 0;

    // Once fooled, a member is never attacked again.
    let mut candidates: Vec<bool> = preds.iter().map(|p| p.label == y).collect();
    if config.budget > 0.0 {
        while rounds < config.max_rounds {
            let remaining: Vec<usize> = (0..ordered.len()).filter(|&i| candidates[i]).collect();
            if remaining.is_empty() {
                break;
            }
            let mut deltas = Vec::with_capacity(remaining.len());
            let mut positions = Vec::with_capacity(remaining.len());
            for &i in &remaining {
                let (pos, m) = ordered[i];
                let xt = apply(&m.spec, &x_adv)?;
                let r = run(m.as_ref(), &xt, y, &config.attack)?;
                deltas.push(reset(&m.spec, &r.adversarial)?.sub(&x_adv)?);
                positions.push(pos);
            }
            let step = aggregate(&deltas, config.aggregation, &positions, ranking.len())?;
            let x_tmp = x_adv.add(&step)?.clip(0.0, 1.0);
            let dis = dissimilarity(&x_tmp, x)?;
            trace!("round {rounds}: {} members left, dissimilarity {dis:.4}", remaining.len());
            if dis > config.budget || x_tmp == x_adv {
                break;
            }
            x_adv = x_tmp;
            preds = predictions(&x_adv)?;
            for (c, p) in candidates.iter_mut().zip(&preds) {
                *c &= p.label == y;
            }
            rounds += 1;
        }
    }

    let fooled_members = preds.iter().filter(|p| p.label != y).count();
    let success = combine(Strategy::Mv, &preds)? != y;
    Ok(PaaOutcome {
        dissimilarity: dissimilarity(&x_adv, x)?,
        adversarial: x_adv,
        rounds,
        fooled_members,
        success,
    })
}
