use std::sync::Arc;

use super::{AdaptiveError, TransferRanking};
use crate::attacks::{run, AttackConfig, AttackResult};
use crate::classifier::SubModel;
use crate::ensemble::Member;
use crate::tensor::Tensor;
use crate::transforms::{apply, reset};

/// Attacks only the most transferable member, in its transformed domain,
/// and maps the result back to the original space.
///
/// `success` and `iterations_used` describe the attack on the target; the
/// caller judges the example against the full ensemble.
pub fn taa(
    x: &Tensor,
    y: usize,
    attack: &AttackConfig,
    ranking: &TransferRanking,
    members: &[Arc<SubModel>],
) -> Result<AttackResult, AdaptiveError> {
    let top = ranking.top().ok_or(AdaptiveError::NoMembers)?;
    let target = members
        .iter()
        .find(|m| m.id() == top)
        .ok_or_else(|| AdaptiveError::NotRanked(top.to_string()))?;
    if !target.spec.is_resettable() {
        return Err(AdaptiveError::Irreversible(top.to_string()));
    }
    let xt = apply(&target.spec, x)?;
    let r = run(target.as_ref(), &xt, y, attack)?;
    let adversarial = reset(&target.spec, &r.adversarial)?;
    let success = Member::predict(target.as_ref(), &adversarial)?.label != y;
    let l2_distortion = adversarial.sub(x)?.l2_norm();
    Ok(AttackResult {
        adversarial,
        success,
        iterations_used: r.iterations_used,
        l2_distortion,
    })
}
