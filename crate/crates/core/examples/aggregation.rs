//! The four ways PAA merges per-member perturbations, on a 1×4 toy image.
//!
//!     cargo run --example aggregation

use gauntlet::adaptive::{aggregate, wsump_weights, Aggregation};
use gauntlet::tensor::Tensor;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let deltas = vec![
        Tensor::new(vec![1, 4, 1], vec![0.05, -0.10, 0.30, 0.0])?,
        Tensor::new(vec![1, 4, 1], vec![0.05, 0.20, -0.05, 0.0])?,
        Tensor::new(vec![1, 4, 1], vec![-0.05, 0.20, 0.05, 0.10])?,
    ];
    // Members at places 1, 2 and 5 of a ranking of 14.
    let positions = [1, 2, 5];
    for a in Aggregation::ALL {
        let out = aggregate(&deltas, a, &positions, 14)?;
        println!("{:>6}: {:?}", a.name(), out.data());
    }
    let w = wsump_weights(14);
    println!("WSumP weights for 14 ranked members: {:.4?}", w);
    Ok(())
}
