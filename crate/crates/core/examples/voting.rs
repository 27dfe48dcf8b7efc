//! Ensemble strategies on hand-made member outputs.
//!
//!     cargo run --example voting

use gauntlet::classifier::Prediction;
use gauntlet::ensemble::{combine, Strategy};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // Three members, four classes. Two lean to class 1, one is very sure of 2.
    let members = vec![
        Prediction::from_logits(vec![0.0, 2.0, 1.5, 0.0]),
        Prediction::from_logits(vec![0.0, 1.8, 1.7, 0.0]),
        Prediction::from_logits(vec![0.0, 0.0, 9.0, 0.0]),
    ];
    for s in [Strategy::Mv, Strategy::T2mv, Strategy::Avep, Strategy::Avel] {
        println!("{:>5} -> class {}", s.name(), combine(s, &members)?);
    }
    println!("   rd -> one member chosen per example from a seeded stream");
    Ok(())
}
