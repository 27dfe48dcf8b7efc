//! The transformation registry: reversible specs round-trip exactly,
//! irreversible ones only go forward.
//!
//!     cargo run --example transform_registry

use gauntlet::tensor::Tensor;
use gauntlet::transforms::{apply, registry, reset};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let x = Tensor::from_fn(&[28, 28, 1], |i| ((i * 37) % 101) as f32 / 100.0);
    for spec in registry(true) {
        let y = apply(&spec, &x)?;
        let changed = y.data().iter().zip(x.data()).filter(|(a, b)| a != b).count();
        match reset(&spec, &y) {
            Ok(back) => println!("{:<24} reversible   {changed:>3} pixels moved, round trip exact: {}", spec.id, back == x),
            Err(e) => println!("{:<24} irreversible {changed:>3} pixels changed ({e})", spec.id),
        }
    }
    Ok(())
}
