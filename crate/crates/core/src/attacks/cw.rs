//! Carlini–Wagner L2 with the tanh change of variables.

use super::{AttackConfig, AttackError, AttackResult};
use crate::network::Differentiable;
use crate::tensor::{argmax, Tensor};

const C_MIN: f32 = 1e-4;
const C_MAX: f32 = 1e4;
/// Keeps `atanh` finite at pixels equal to 0 or 1.
const TANH_SQUASH: f32 = 0.999_999;

fn to_tanh_space(x: &Tensor) -> Tensor {
    x.map(|v| ((2.0 * v - 1.0) * TANH_SQUASH).atanh())
}

fn from_tanh_space(w: &Tensor) -> Tensor {
    w.map(|v| 0.5 * (v.tanh() + 1.0))
}

/// Largest logit other than `y`.
fn runner_up(logits: &[f32], y: usize) -> usize {
    let mut best = if y == 0 { 1 } else { 0 };
    for (k, &z) in logits.iter().enumerate() {
        if k != y && z > logits[best] {
            best = k;
        }
    }
    best
}

struct Best {
    adversarial: Tensor,
    l2: f64,
}

/// Minimizes `‖x' − x‖² + c·max(Z_y − max_{k≠y} Z_k, 0)` over
/// `x' = (tanh(w) + 1)/2` by gradient descent, searching over `c`.
pub fn cw_l2<M: Differentiable>(model: &M, x: &Tensor, y: usize, cfg: &AttackConfig) -> Result<AttackResult, AttackError> {
    let w0 = to_tanh_space(x);
    let mut best: Option<Best> = None;
    let mut closest = (f64::INFINITY, x.clone());
    let mut c = cfg.initial_constant.clamp(C_MIN, C_MAX);
    let (mut lower, mut upper): (Option<f32>, Option<f32>) = (None, None);
    let mut total_iterations = 0;
    let lr = cfg.learning_rate;
    let check_every = (cfg.max_iterations / 10).max(1);

    for _ in 0..cfg.binary_search_steps {
        let mut w = w0.clone();
        let mut round_success = false;
        let mut previous_loss = f64::INFINITY;
        for it in 0..cfg.max_iterations {
            let xp = from_tanh_space(&w);
            let (logits, tape) = model.forward(&xp)?;
            let j = runner_up(&logits, y);
            let margin = logits[y] - logits[j];
            let diff = xp.sub(x)?;
            let dist = diff.l2_norm();
            let loss = dist * dist + f64::from(c) * f64::from(margin.max(0.0));
            total_iterations += 1;

            if argmax(&logits) != y {
                round_success = true;
                if best.as_ref().is_none_or(|b| dist < b.l2) {
                    best = Some(Best {
                        adversarial: xp.clone(),
                        l2: dist,
                    });
                }
            } else if f64::from(margin) < closest.0 {
                closest = (f64::from(margin), xp.clone());
            }

            if it % check_every == 0 {
                if loss > previous_loss * 0.9999 {
                    break;
                }
                previous_loss = loss;
            }

            let mut grad = diff.scale(2.0);
            if margin > 0.0 {
                let mut dlogits = vec![0.0; logits.len()];
                dlogits[y] = c;
                dlogits[j] = -c;
                let g_attack = model.input_vjp(&tape, &dlogits);
                grad = grad.add(&g_attack)?;
            }
            // dx'/dw = (1 − tanh²(w))/2
            let step = w.zip_map(&grad, |wi, gi| {
                let t = wi.tanh();
                wi - lr * gi * 0.5 * (1.0 - t * t)
            })?;
            w = step;
        }

        if round_success {
            upper = Some(upper.map_or(c, |u| u.min(c)));
            c = match lower {
                Some(l) => 0.5 * (l + c),
                None => 0.5 * c,
            };
        } else {
            lower = Some(lower.map_or(c, |l| l.max(c)));
            c = match upper {
                Some(u) => 0.5 * (c + u),
                None => 2.0 * c,
            };
        }
        c = c.clamp(C_MIN, C_MAX);
    }

    let adversarial = match best {
        Some(b) => b.adversarial,
        None => closest.1,
    };
    AttackResult::new(model, x, y, adversarial, total_iterations)
}
