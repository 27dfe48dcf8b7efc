//! Ranks the reversible members by transferability, then attacks the
//! ensemble through its best target (TAA) and by aggregating every
//! member's perturbation (PAA).
//!
//!     cargo run --release --example adaptive_attacks [config]

use gauntlet::adaptive::{paa, taa, transfer_ranking, Aggregation, PaaConfig};
use gauntlet::attacks::AttackConfig;
use gauntlet::ensemble::{ensemble_predict, EnsembleConfig, Strategy};
use gauntlet::harness::suite::prefix;
use gauntlet::harness::{DataSplits, ExperimentConfig, Suite};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args().nth(1).unwrap_or_else(|| "configs/desk.conf".into());
    let cfg = ExperimentConfig::load(&path)?;
    let suite = Suite::load(&cfg)?;
    let splits = DataSplits::load(&cfg)?;
    let members = &suite.reversible;
    let ensemble = EnsembleConfig::from_submodels(members, Strategy::Mv, cfg.rd_seed)?;

    let pgd = AttackConfig::preset("taa-pgd")?;
    let ranking = transfer_ranking(members, &pgd, &prefix(&splits.ranking, 30))?;
    println!("{}", ranking.to_csv());

    let set = prefix(&splits.eval, 20);
    let mut taa_correct = 0;
    for (x, y) in set.iter() {
        let r = taa(x, y, &pgd, &ranking, members)?;
        taa_correct += usize::from(ensemble_predict(&ensemble, &r.adversarial)? == y);
    }
    println!("TAA (PGD on {}): MV accuracy {:.2}", ranking.top().unwrap(), taa_correct as f64 / set.len() as f64);

    let paa_cfg = PaaConfig::new(AttackConfig::preset("paa-pgd")?, Aggregation::WSumP);
    let paa_ranking = transfer_ranking(members, &paa_cfg.attack, &prefix(&splits.ranking, 30))?;
    let small = prefix(&set, 8);
    let mut paa_correct = 0;
    for (x, y) in small.iter() {
        let out = paa(x, y, members, &paa_ranking, &paa_cfg)?;
        println!("  rounds {:>2}  dissimilarity {:.3}  members fooled {:>2}", out.rounds, out.dissimilarity, out.fooled_members);
        paa_correct += usize::from(!out.success);
    }
    println!("PAA (PGD, WSumP): MV accuracy {:.2}", paa_correct as f64 / small.len() as f64);
    Ok(())
}
