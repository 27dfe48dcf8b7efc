//! The numeric core on its own: forward, backward and Adam on a handful of
//! random images, plus a finite-difference look at one input gradient.
//!
//!     cargo run --release --example overfit

use gauntlet::network::{loss_and_gradients, model_forward, Architecture, ClassifierWeights};
use gauntlet::optim::{adam_step, AdamConfig, AdamState};
use gauntlet::rng::seeded;
use gauntlet::tensor::Tensor;
use rand::Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let arch = Architecture::compact();
    let mut rng = seeded(1);
    let mut weights = ClassifierWeights::init_he(arch, &mut rng)?;
    println!("compact network: {} parameters", weights.num_parameters());

    let batch: Vec<(Tensor, usize)> = (0..8)
        .map(|i| (Tensor::from_fn(&[28, 28, 1], |_| rng.random::<f32>()), i % 10))
        .collect();

    // Analytic versus central-difference derivative for one pixel, before training.
    let (x, y) = &batch[0];
    let (_, g) = loss_and_gradients(&weights, x, *y)?;
    let pixel = 14 * 28 + 14;
    let h = 1e-3;
    let mut plus = x.clone();
    plus.data_mut()[pixel] += h;
    let mut minus = x.clone();
    minus.data_mut()[pixel] -= h;
    let numeric = (loss_and_gradients(&weights, &plus, *y)?.0 - loss_and_gradients(&weights, &minus, *y)?.0)
        / (2.0 * f64::from(h));
    println!("d loss / d pixel: analytic {:.6}, numeric {numeric:.6}", g.input_grad.data()[pixel]);

    let cfg = AdamConfig::default();
    let mut state = AdamState::new(weights.params());
    for step in 0..=60 {
        let mut total = 0.0;
        let mut grads = weights.zero_grads();
        for (x, y) in &batch {
            let (loss, g) = loss_and_gradients(&weights, x, *y)?;
            total += loss;
            for (acc, p) in grads.iter_mut().zip(&g.parameter_grads) {
                *acc = acc.add(p)?;
            }
        }
        let grads: Vec<Tensor> = grads.iter().map(|g| g.scale(1.0 / batch.len() as f32)).collect();
        adam_step(weights.params_mut(), &grads, &mut state, &cfg)?;
        if step % 10 == 0 {
            println!("step {step:>2}: mean loss {:.4}", total / batch.len() as f64);
        }
    }

    let correct = batch
        .iter()
        .filter(|(x, y)| model_forward(&weights, x).map(|l| l.argmax() == *y).unwrap_or(false))
        .count();
    println!("memorized {correct}/{} labels", batch.len());

    Ok(())
}
