//! Trains one sub-model on rotated digits and saves its weights.
//!
//!     GAUNTLET_DATA_DIR=data/mnist cargo run --release --example train_one

use gauntlet::classifier::{train_submodel_with_report, TrainConfig};
use gauntlet::dataset::{load_mnist_dir, split_val_test, take_subset};
use gauntlet::network::Architecture;
use gauntlet::persist::{load_weights, save_weights};
use gauntlet::transforms::lookup;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let dir = std::env::var("GAUNTLET_DATA_DIR").unwrap_or_else(|_| "data/mnist".into());
    let train = take_subset(&load_mnist_dir(&dir, true)?, 3000, 1)?;
    let (val, test) = split_val_test(&load_mnist_dir(&dir, false)?, 2);
    let val = take_subset(&val, 500, 3)?;

    let spec = lookup("rotate-90")?;
    let cfg = TrainConfig {
        architecture: Architecture::compact(),
        max_epochs: 4,
        ..TrainConfig::default()
    };
    let (model, report) = train_submodel_with_report(&spec, &train, &val, &cfg, 42)?;
    println!("best epoch {} (val loss {:.4})", report.best_epoch, report.best_val_loss);
    println!("test accuracy {:.4}", model.accuracy(&take_subset(&test, 1000, 4)?)?);

    let path = std::env::temp_dir().join("rotate-90.egw");
    save_weights(&model.weights, &path)?;
    assert_eq!(load_weights(&path)?, model.weights);
    println!("weights written to {}", path.display());
    Ok(())
}
