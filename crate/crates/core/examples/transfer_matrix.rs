//! How well PGD examples crafted on one sub-model fool the others.
//! Needs a trained suite (`gauntlet train --config configs/desk.conf`).
//!
//!     cargo run --release --example transfer_matrix [config]

use std::sync::Arc;

use gauntlet::adaptive::transfer_matrix;
use gauntlet::attacks::AttackConfig;
use gauntlet::ensemble::Member;
use gauntlet::harness::suite::prefix;
use gauntlet::harness::{DataSplits, ExperimentConfig, Suite};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args().nth(1).unwrap_or_else(|| "configs/desk.conf".into());
    let cfg = ExperimentConfig::load(&path)?;
    let suite = Suite::load(&cfg)?;
    let set = prefix(&DataSplits::load(&cfg)?.eval, 20);

    let victims = vec![
        Arc::clone(&suite.original),
        Arc::clone(suite.find("shift-up").unwrap()),
        Arc::clone(suite.find("flip-horizontal").unwrap()),
        Arc::clone(suite.find("rotate-90").unwrap()),
    ];
    let evaluators: Vec<Arc<dyn Member>> = victims.iter().map(|m| Arc::clone(m) as Arc<dyn Member>).collect();
    for preset in ["taa-fgsm", "taa-pgd"] {
        let m = transfer_matrix(&victims, &evaluators, &AttackConfig::preset(preset)?, &set)?;
        println!("{preset}\n{}", m.to_csv());
    }
    Ok(())
}
