use super::{AttackError, AttackResult};
use crate::layers::cross_entropy;
use crate::network::Differentiable;
use crate::tensor::{argmax, Tensor};

/// Label and `∇ₓL` at `x`.
fn label_and_gradient<M: Differentiable>(model: &M, x: &Tensor, y: usize) -> Result<(usize, Tensor), AttackError> {
    let (logits, tape) = model.forward(x)?;
    let (_, dlogits) = cross_entropy(&logits, y);
    Ok((argmax(&logits), model.input_vjp(&tape, &dlogits)))
}

fn signed_step(x: &Tensor, grad: &Tensor, step: f32) -> Tensor {
    x.zip_map(grad, |v, g| {
        if g > 0.0 {
            v + step
        } else if g < 0.0 {
            v - step
        } else {
            v
        }
    })
    .expect("gradient matches input")
}

pub fn fgsm<M: Differentiable>(model: &M, x: &Tensor, y: usize, epsilon: f32) -> Result<AttackResult, AttackError> {
    let (_, grad) = label_and_gradient(model, x, y)?;
    if grad.data().iter().all(|&g| g == 0.0) || epsilon == 0.0 {
        return AttackResult::new(model, x, y, x.clone(), 0);
    }
    let adv = signed_step(x, &grad, epsilon).clip(0.0, 1.0);
    AttackResult::new(model, x, y, adv, 1)
}

/// Signed-gradient ascent from `x`, projected onto the L∞ ball and the unit
/// box after every step; stops as soon as the label flips.
pub fn pgd<M: Differentiable>(
    model: &M,
    x: &Tensor,
    y: usize,
    epsilon: f32,
    step_size: f32,
    max_iterations: usize,
) -> Result<AttackResult, AttackError> {
    pgd_loop(model, x, y, epsilon, step_size, max_iterations, true)
}

/// [`pgd`] that spends the whole iteration budget, pushing past the
/// decision boundary once it is crossed.
pub fn pgd_full<M: Differentiable>(
    model: &M,
    x: &Tensor,
    y: usize,
    epsilon: f32,
    step_size: f32,
    max_iterations: usize,
) -> Result<AttackResult, AttackError> {
    pgd_loop(model, x, y, epsilon, step_size, max_iterations, false)
}

fn pgd_loop<M: Differentiable>(
    model: &M,
    x: &Tensor,
    y: usize,
    epsilon: f32,
    step_size: f32,
    max_iterations: usize,
    early_stop: bool,
) -> Result<AttackResult, AttackError> {
    let mut adv = x.clone();
    let mut used = 0;
    while used < max_iterations {
        let (label, grad) = label_and_gradient(model, &adv, y)?;
        if (early_stop && label != y) || grad.data().iter().all(|&g| g == 0.0) {
            break;
        }
        let stepped = signed_step(&adv, &grad, step_size);
        adv = stepped
            .zip_map(x, |v, x0| v.clamp(x0 - epsilon, x0 + epsilon).clamp(0.0, 1.0))
            .expect("same shape");
        used += 1;
    }
    AttackResult::new(model, x, y, adv, used)
}
