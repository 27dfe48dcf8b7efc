//! Drives the harness from code rather than the CLI.
//!
//!     cargo run --release --example run_experiment [config] [command]

use gauntlet::harness::{run, Command, ExperimentConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let path = args.next().unwrap_or_else(|| "configs/desk.conf".into());
    let command: Command = args.next().as_deref().unwrap_or("benign").parse()?;
    let mut cfg = ExperimentConfig::load(&path)?;
    cfg.reports_dir = std::env::temp_dir().join("gauntlet-reports");
    for file in run(command, &cfg)? {
        println!("{}", file.display());
    }
    Ok(())
}
