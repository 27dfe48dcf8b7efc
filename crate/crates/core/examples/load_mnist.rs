//! Reads the MNIST IDX files and draws the seeded subsets the harness uses.
//!
//!     GAUNTLET_DATA_DIR=data/mnist cargo run --release --example load_mnist

use gauntlet::dataset::{load_mnist_dir, split_val_test, take_subset};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::var("GAUNTLET_DATA_DIR").unwrap_or_else(|_| "data/mnist".into());
    let train = load_mnist_dir(&dir, true)?;
    let test = load_mnist_dir(&dir, false)?;
    println!("train {} images, test {} images", train.len(), test.len());

    let (val, held_out) = split_val_test(&test, 7);
    let subset = take_subset(&train, 1000, 7)?;
    println!("validation {}, held-out test {}, training subset {}", val.len(), held_out.len(), subset.len());

    let mut counts = [0usize; 10];
    for &l in subset.labels() {
        counts[l as usize] += 1;
    }
    println!("class counts in the subset: {counts:?}");

    let (x, y) = subset.get(0);
    let ink = x.data().iter().filter(|&&v| v > 0.5).count();
    println!("first subset image: label {y}, {ink} of {} pixels above 0.5", x.len());
    for row in x.data().chunks(28).step_by(2) {
        let line: String = row.iter().map(|&v| if v > 0.5 { '#' } else if v > 0.1 { '+' } else { '.' }).collect();
        println!("  {line}");
    }
    Ok(())
}
