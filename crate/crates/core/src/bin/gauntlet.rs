use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use gauntlet::ensemble::Strategy;
use gauntlet::harness::{run, Command, ExperimentConfig, DATA_DIR_ENV};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Cmd {
    Train,
    Benign,
    Transfer,
    Taa,
    Paa,
    Hybrid,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Train => Command::Train,
            Cmd::Benign => Command::Benign,
            Cmd::Transfer => Command::Transfer,
            Cmd::Taa => Command::Taa,
            Cmd::Paa => Command::Paa,
            Cmd::Hybrid => Command::Hybrid,
        }
    }
}

/// Train transformation ensembles and run attack experiments against them.
#[derive(Debug, Parser)]
#[command(name = "gauntlet", version)]
struct Cli {
    command: Cmd,
    /// `key = value` config file; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Attack preset, e.g. taa-pgd or paa-fgsm.
    #[arg(long)]
    attack: Option<String>,
    /// Single ensemble strategy: rd, mv, t2mv, avep or avel.
    #[arg(long)]
    ensemble: Option<Strategy>,
    /// Dissimilarity budget for PAA.
    #[arg(long)]
    budget: Option<f64>,
    /// Number of examples the command evaluates.
    #[arg(long)]
    subset: Option<usize>,
    #[arg(long)]
    dump_aes: bool,
    #[arg(long, env = DATA_DIR_ENV)]
    data_dir: Option<PathBuf>,
}

fn configure(cli: &Cli) -> Result<ExperimentConfig, String> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path).map_err(|e| e.to_string())?,
        None => ExperimentConfig::default(),
    };
    if let Some(dir) = &cli.data_dir {
        cfg.data_dir = dir.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(s) = cli.ensemble {
        cfg.strategies = vec![s];
    }
    if let Some(b) = cli.budget {
        cfg.budget = b;
    }
    cfg.dump_aes |= cli.dump_aes;
    if let Some(a) = &cli.attack {
        let key = match cli.command {
            Cmd::Paa => "paa_attacks",
            Cmd::Hybrid => "hybrid_attack",
            _ => "attacks",
        };
        cfg.set(key, a)?;
    }
    if let Some(n) = cli.subset {
        match cli.command {
            Cmd::Train => cfg.train_subset = n,
            Cmd::Transfer => cfg.transfer_subset = n,
            Cmd::Paa => cfg.paa_subset = n,
            _ => cfg.eval_subset = n,
        }
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = configure(&cli).and_then(|cfg| run(cli.command.into(), &cfg).map_err(|e| e.to_string()));
    match result {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
