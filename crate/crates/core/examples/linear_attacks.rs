//! Every attack against a two-class linear model, where the smallest L2
//! perturbation that crosses the boundary is known in closed form.
//!
//!     cargo run --example linear_attacks

use gauntlet::attacks::{run, AttackConfig, LinearModel};
use gauntlet::network::Differentiable;
use gauntlet::tensor::Tensor;
use rand::Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let n = 28 * 28;
    let mut rng = gauntlet::rng::seeded(7);
    let w0: Vec<f32> = (0..n).map(|_| rng.random_range(-0.05..0.05)).collect();
    let w1: Vec<f32> = (0..n).map(|_| rng.random_range(-0.05..0.05)).collect();
    let x = Tensor::from_fn(&[28, 28, 1], |_| rng.random_range(0.4..0.6));

    let diff: Vec<f64> = w0.iter().zip(&w1).map(|(a, b)| f64::from(a - b)).collect();
    let norm = diff.iter().map(|d| d * d).sum::<f64>().sqrt();
    let dot: f64 = diff.iter().zip(x.data()).map(|(d, &v)| d * f64::from(v)).sum();
    let target_distance = 0.5;
    let b0 = (target_distance * norm - dot) as f32;

    let mut weights = w0;
    weights.extend(w1);
    let model = LinearModel::new(vec![28, 28, 1], weights, vec![b0, 0.0])?;
    let label = model.predict_label(&x)?;
    println!("clean label {label}, distance to boundary {target_distance:.4}");

    for name in ["taa-fgsm", "paa-fgsm", "taa-pgd", "cw", "deepfool"] {
        let r = run(&model, &x, label, &AttackConfig::preset(name)?)?;
        println!(
            "{name:>9}: success {:<5} L2 {:.4}  Linf {:.4}  iterations {}",
            r.success,
            r.l2_distortion,
            r.adversarial.sub(&x)?.linf_norm(),
            r.iterations_used
        );
    }
    Ok(())
}
