use super::{AttackConfig, AttackError, AttackResult};
use crate::network::Differentiable;
use crate::tensor::{argmax, Tensor};

/// Added to each step length so the linearized boundary is actually crossed.
const STEP_PAD: f64 = 1e-4;

/// The `n` highest-scoring classes other than `y`.
fn candidates(logits: &[f32], y: usize, n: usize) -> Vec<usize> {
    let mut ks: Vec<usize> = (0..logits.len()).filter(|&k| k != y).collect();
    ks.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
    ks.truncate(n);
    ks
}

/// Repeatedly steps to the nearest linearized decision boundary among the
/// candidate classes, accumulating the total perturbation.
pub fn deepfool<M: Differentiable>(model: &M, x: &Tensor, y: usize, cfg: &AttackConfig) -> Result<AttackResult, AttackError> {
    let (logits0, _) = model.forward(x)?;
    let ks = candidates(&logits0, y, cfg.num_candidates);
    let mut r_total = vec![0.0f64; x.len()];
    let mut adv = x.clone();
    let mut used = 0;
    let scale = 1.0 + f64::from(cfg.overshoot);

    while used < cfg.max_iterations {
        let (logits, tape) = model.forward(&adv)?;
        if argmax(&logits) != y || ks.is_empty() {
            break;
        }
        let mut nearest: Option<(f64, Tensor)> = None;
        for &k in &ks {
            let mut dlogits = vec![0.0; logits.len()];
            dlogits[k] = 1.0;
            dlogits[y] = -1.0;
            let w = model.input_vjp(&tape, &dlogits);
            let norm = w.l2_norm();
            if norm == 0.0 {
                continue;
            }
            let f = f64::from(logits[k]) - f64::from(logits[y]);
            let dist = f.abs() / norm;
            if nearest.as_ref().is_none_or(|(d, _)| dist < *d) {
                nearest = Some((dist, w));
            }
        }
        let Some((dist, w)) = nearest else { break };
        let norm = w.l2_norm();
        let coef = (dist + STEP_PAD) / norm;
        for (r, &wi) in r_total.iter_mut().zip(w.data()) {
            *r += coef * f64::from(wi);
        }
        let data = x
            .data()
            .iter()
            .zip(&r_total)
            .map(|(&x0, &r)| ((f64::from(x0) + scale * r) as f32).clamp(0.0, 1.0))
            .collect();
        adv = Tensor::new(x.dims().to_vec(), data)?;
        used += 1;
    }
    AttackResult::new(model, x, y, adv, used)
}
