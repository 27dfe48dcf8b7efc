//! The experiment runs behind each CLI command.

use std::sync::Arc;

use log::info;
use rand::seq::index::sample;

use super::config::ExperimentConfig;
use super::dump::write_ae_dump;
use super::report::{ExperimentReport, Table};
use super::suite::{prefix, train_suite, DataSplits, Suite};
use super::HarnessError;
use crate::adaptive::{dissimilarity, paa, transfer_matrix, transfer_ranking, PaaConfig, TransferMatrix, TransferRanking};
use crate::attacks::{run, AttackConfig};
use crate::classifier::{Prediction, SubModel};
use crate::dataset::LabelledSet;
use crate::ensemble::{decide, Member, Strategy};
use crate::rng::{derive_seed, seeded};
use crate::tensor::Tensor;
use crate::transforms::{apply, reset};

/// Predictions of every model on every image, indexed `[image][model]`.
pub fn predict_all(models: &[Arc<SubModel>], images: &[Tensor]) -> Result<Vec<Vec<Prediction>>, HarnessError> {
    images
        .iter()
        .map(|x| {
            models
                .iter()
                .map(|m| Member::predict(m.as_ref(), x).map_err(HarnessError::from))
                .collect()
        })
        .collect()
}

/// Accuracy of each strategy over cached predictions, using the members at
/// `columns`. RD draws its member per example index.
pub fn strategy_accuracies(
    preds: &[Vec<Prediction>],
    columns: &[usize],
    labels: &[u8],
    strategies: &[Strategy],
    rd_seed: u64,
) -> Result<Vec<f64>, HarnessError> {
    if preds.is_empty() {
        return Err(HarnessError::Invalid("no examples to evaluate".into()));
    }
    let mut correct = vec![0usize; strategies.len()];
    for (i, row) in preds.iter().enumerate() {
        let chosen: Vec<Prediction> = columns.iter().map(|&c| row[c].clone()).collect();
        for (s, c) in strategies.iter().zip(correct.iter_mut()) {
            if decide(*s, &chosen, rd_seed, i as u64)? == usize::from(labels[i]) {
                *c += 1;
            }
        }
    }
    Ok(correct.iter().map(|&c| c as f64 / preds.len() as f64).collect())
}

/// Attacks `target` in its own domain on every example of `set` and maps
/// each result back to the original image space.
pub fn craft(target: &SubModel, attack: &AttackConfig, set: &LabelledSet) -> Result<Vec<Tensor>, HarnessError> {
    set.iter()
        .map(|(x, y)| {
            let xt = apply(&target.spec, x)?;
            let r = run(target, &xt, y, attack)?;
            Ok(reset(&target.spec, &r.adversarial)?)
        })
        .collect()
}

pub fn mean_dissimilarity(aes: &[Tensor], set: &LabelledSet) -> Result<f64, HarnessError> {
    let mut total = 0.0;
    for (adv, (x, _)) in aes.iter().zip(set.iter()) {
        total += dissimilarity(adv, x)?;
    }
    Ok(total / aes.len().max(1) as f64)
}

fn strategy_columns(cfg: &ExperimentConfig) -> Vec<String> {
    cfg.strategies.iter().map(|s| s.name().to_string()).collect()
}

fn some(values: Vec<f64>) -> Vec<Option<f64>> {
    values.into_iter().map(Some).collect()
}

fn preset(name: &str) -> Result<AttackConfig, HarnessError> {
    Ok(AttackConfig::preset(name)?)
}

fn ranking_table(name: &str, rankings: &[(String, TransferRanking)]) -> Table {
    let mut t = Table::new(name, &["attack", "rank", "member"], vec!["other_accuracy".into()]);
    for (attack, r) in rankings {
        for (i, (id, score)) in r.entries.iter().enumerate() {
            t.push(vec![attack.clone(), (i + 1).to_string(), id.clone()], vec![Some(*score)]);
        }
    }
    t
}

fn maybe_dump(cfg: &ExperimentConfig, kind: &str, name: &str, victim: &str, set: &LabelledSet, aes: &[Tensor]) -> Result<(), HarnessError> {
    if cfg.dump_aes {
        let labels: Vec<usize> = set.labels().iter().map(|&l| usize::from(l)).collect();
        write_ae_dump(&cfg.reports_dir.join("aes").join(kind), name, victim, &labels, aes)?;
    }
    Ok(())
}

/// Trains (or reuses) the suite and reports each model's early-stopping result.
pub fn train(cfg: &ExperimentConfig, splits: &DataSplits) -> Result<ExperimentReport, HarnessError> {
    let manifest = train_suite(cfg, splits)?;
    let mut t = Table::new(
        "models",
        &["model"],
        vec!["best_epoch".into(), "val_loss".into(), "val_accuracy".into()],
    );
    for e in &manifest.models {
        t.push(
            vec![e.id.clone()],
            vec![Some(e.best_epoch as f64), Some(e.val_loss), Some(e.val_accuracy)],
        );
    }
    let mut report = ExperimentReport::new("train", cfg);
    report.tables.push(t);
    Ok(report)
}

/// Clean accuracy of every model and of the ensembles under each strategy.
pub fn benign(cfg: &ExperimentConfig, suite: &Suite, splits: &DataSplits) -> Result<ExperimentReport, HarnessError> {
    let set = &splits.eval;
    let mut all = vec![Arc::clone(&suite.original)];
    all.extend(suite.reversible.iter().cloned());
    all.extend(suite.irreversible.iter().cloned());
    let preds = predict_all(&all, set.images())?;

    let mut models = Table::new("models", &["model"], vec!["accuracy".into()]);
    for (c, m) in all.iter().enumerate() {
        let acc = strategy_accuracies(&preds, &[c], set.labels(), &[Strategy::Mv], cfg.rd_seed)?[0];
        models.push(vec![m.id().to_string()], vec![Some(acc)]);
    }

    let mut ens = Table::new("ensembles", &["ensemble", "members"], strategy_columns(cfg));
    let n_rev = suite.reversible.len();
    let n_irr = suite.irreversible.len();
    let mut groups = vec![("reversible", (1..=n_rev).collect::<Vec<_>>())];
    if n_irr > 0 {
        groups.push(("irreversible", (n_rev + 1..=n_rev + n_irr).collect()));
        groups.push(("hybrid", (1..=n_rev + n_irr).collect()));
    }
    for (name, cols) in groups {
        let acc = strategy_accuracies(&preds, &cols, set.labels(), &cfg.strategies, cfg.rd_seed)?;
        ens.push(vec![name.to_string(), cols.len().to_string()], some(acc));
    }

    let mut report = ExperimentReport::new("benign", cfg);
    report.tables.push(models);
    report.tables.push(ens);
    Ok(report)
}

/// Transfer matrices over the original and reversible models, one per preset.
pub fn transfer_matrices(cfg: &ExperimentConfig, suite: &Suite, set: &LabelledSet) -> Result<Vec<(String, TransferMatrix)>, HarnessError> {
    let mut victims = vec![Arc::clone(&suite.original)];
    victims.extend(suite.reversible.iter().cloned());
    let evaluators: Vec<Arc<dyn Member>> = victims.iter().map(|m| Arc::clone(m) as Arc<dyn Member>).collect();
    cfg.attacks
        .iter()
        .map(|name| {
            info!("transfer: {name}");
            Ok((name.clone(), transfer_matrix(&victims, &evaluators, &preset(name)?, set)?))
        })
        .collect()
}

pub fn transfer(cfg: &ExperimentConfig, suite: &Suite, splits: &DataSplits) -> Result<ExperimentReport, HarnessError> {
    let set = prefix(&splits.eval, cfg.transfer_subset);
    let mut report = ExperimentReport::new("transfer", cfg);
    for (name, m) in transfer_matrices(cfg, suite, &set)? {
        let mut columns = vec!["aes".to_string()];
        columns.extend(m.evaluators.iter().cloned());
        columns.push("Average".into());
        let mut t = Table::new(name, &["victim"], columns);
        for (i, v) in m.victims.iter().enumerate() {
            let mut values = vec![Some(m.ae_counts[i] as f64)];
            values.extend(m.rates[i].iter().copied());
            values.push(m.averages[i]);
            t.push(vec![v.clone()], values);
        }
        report.tables.push(t);
    }
    Ok(report)
}

/// Transferability ranking of the reversible members for each preset.
pub fn rank_members(suite: &Suite, presets: &[String], sample: &LabelledSet) -> Result<Vec<(String, TransferRanking)>, HarnessError> {
    presets
        .iter()
        .map(|name| {
            info!("ranking: {name}");
            Ok((name.clone(), transfer_ranking(&suite.reversible, &preset(name)?, sample)?))
        })
        .collect()
}

/// Reversible-ensemble accuracy on AEs crafted against single targets.
pub fn taa_sweep(cfg: &ExperimentConfig, suite: &Suite, splits: &DataSplits) -> Result<ExperimentReport, HarnessError> {
    let set = &splits.eval;
    let columns: Vec<usize> = (0..suite.reversible.len()).collect();
    let mut value_columns = strategy_columns(cfg);
    value_columns.push("Dis".into());
    let mut t = Table::new("accuracy", &["attack", "target", "rank"], value_columns);

    let clean = predict_all(&suite.reversible, set.images())?;
    let mut row = some(strategy_accuracies(&clean, &columns, set.labels(), &cfg.strategies, cfg.rd_seed)?);
    row.push(Some(0.0));
    t.push(vec!["benign".into(), "-".into(), "-".into()], row);

    let rankings = rank_members(suite, &cfg.attacks, &splits.ranking)?;
    for (name, ranking) in &rankings {
        let attack = preset(name)?;
        let mut targets: Vec<(Arc<SubModel>, String)> = Vec::new();
        let ranked = ranking.ids();
        let chosen = if cfg.taa_all_targets { &ranked[..] } else { &ranked[..1] };
        if cfg.taa_all_targets {
            targets.push((Arc::clone(&suite.original), "-".into()));
        }
        for id in chosen {
            let m = suite.find(id).ok_or_else(|| HarnessError::Invalid(format!("ranked member '{id}' not loaded")))?;
            targets.push((Arc::clone(m), ranking.position(id).unwrap_or(0).to_string()));
        }
        for (target, rank) in targets {
            info!("taa: {name} on {}", target.id());
            let aes = craft(&target, &attack, set)?;
            maybe_dump(cfg, "taa", &format!("{name}_{}", target.id()), target.id(), set, &aes)?;
            let preds = predict_all(&suite.reversible, &aes)?;
            let mut row = some(strategy_accuracies(&preds, &columns, set.labels(), &cfg.strategies, cfg.rd_seed)?);
            row.push(Some(mean_dissimilarity(&aes, set)?));
            t.push(vec![name.clone(), target.id().to_string(), rank], row);
        }
    }

    let mut report = ExperimentReport::new("taa", cfg);
    report.tables.push(t);
    report.tables.push(ranking_table("ranking", &rankings));
    Ok(report)
}

/// Adversarial examples produced by PAA for every example of `set`, and
/// their dissimilarities.
pub fn paa_examples(
    suite: &Suite,
    ranking: &TransferRanking,
    config: &PaaConfig,
    set: &LabelledSet,
) -> Result<(Vec<Tensor>, Vec<f64>), HarnessError> {
    let mut aes = Vec::with_capacity(set.len());
    let mut dis = Vec::with_capacity(set.len());
    for (x, y) in set.iter() {
        let out = paa(x, y, &suite.reversible, ranking, config)?;
        dis.push(out.dissimilarity);
        aes.push(out.adversarial);
    }
    Ok((aes, dis))
}

/// Attacks × aggregations grid of reversible-ensemble accuracy under PAA.
pub fn paa_grid(cfg: &ExperimentConfig, suite: &Suite, splits: &DataSplits) -> Result<ExperimentReport, HarnessError> {
    let set = prefix(&splits.eval, cfg.paa_subset);
    let columns: Vec<usize> = (0..suite.reversible.len()).collect();
    let mut value_columns = strategy_columns(cfg);
    value_columns.push("Dis".into());
    value_columns.push("MaxDis".into());
    let mut t = Table::new("accuracy", &["attack", "aggregation"], value_columns);
    let rankings = rank_members(suite, &cfg.paa_attacks, &splits.ranking)?;
    for (name, ranking) in &rankings {
        for &aggregation in &cfg.aggregations {
            info!("paa: {name} with {aggregation}");
            let config = PaaConfig {
                budget: cfg.budget,
                max_rounds: cfg.paa_max_rounds,
                ..PaaConfig::new(preset(name)?, aggregation)
            };
            let (aes, dis) = paa_examples(suite, ranking, &config, &set)?;
            maybe_dump(cfg, "paa", &format!("{name}_{aggregation}"), "reversible", &set, &aes)?;
            let preds = predict_all(&suite.reversible, &aes)?;
            let mut row = some(strategy_accuracies(&preds, &columns, set.labels(), &cfg.strategies, cfg.rd_seed)?);
            row.push(Some(dis.iter().sum::<f64>() / dis.len().max(1) as f64));
            row.push(Some(dis.iter().copied().fold(0.0, f64::max)));
            t.push(vec![name.clone(), aggregation.to_string()], row);
        }
    }
    let mut report = ExperimentReport::new("paa", cfg);
    report.tables.push(t);
    report.tables.push(ranking_table("ranking", &rankings));
    Ok(report)
}

/// Members drawn for one (m, repetition) cell of the hybrid sweep, as
/// column indices into `[reversible..., irreversible...]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HybridDraw {
    pub irreversible: Vec<usize>,
    pub reversible: Vec<usize>,
}

pub fn hybrid_draw(seed: u64, m: usize, repetition: usize, n_rev: usize, n_irr: usize) -> HybridDraw {
    let mut rng = seeded(derive_seed(derive_seed(seed, 6), (m as u64) << 32 | repetition as u64));
    let mut irreversible: Vec<usize> = sample(&mut rng, n_irr, m.min(n_irr)).into_iter().map(|i| n_rev + i).collect();
    let mut reversible = sample(&mut rng, n_rev, m.min(n_rev)).into_vec();
    irreversible.sort_unstable();
    reversible.sort_unstable();
    HybridDraw { irreversible, reversible }
}

pub const HYBRID_ENSEMBLES: [&str; 3] = ["reversible+irreversible", "irreversible", "reversible"];

/// Accuracy of reversible, irreversible and combined ensembles on AEs
/// crafted against the original model.
pub fn hybrid(cfg: &ExperimentConfig, suite: &Suite, splits: &DataSplits) -> Result<ExperimentReport, HarnessError> {
    let n_rev = suite.reversible.len();
    let n_irr = suite.irreversible.len();
    if let Some(&m) = cfg.hybrid_m.iter().find(|&&m| m > n_irr) {
        return Err(HarnessError::Invalid(format!(
            "m = {m} exceeds the {n_irr} irreversible models available"
        )));
    }
    let set = &splits.eval;
    let attack = preset(&cfg.hybrid_attack)?;
    info!("hybrid: crafting {} on original", cfg.hybrid_attack);
    let aes = craft(&suite.original, &attack, set)?;
    maybe_dump(cfg, "hybrid", &format!("{}_original", cfg.hybrid_attack), "original", set, &aes)?;
    let mut members: Vec<Arc<SubModel>> = suite.reversible.clone();
    members.extend(suite.irreversible.iter().cloned());
    let preds = predict_all(&members, &aes)?;
    let all_rev: Vec<usize> = (0..n_rev).collect();

    let mut t = Table::new("accuracy", &["m", "repetition", "ensemble"], strategy_columns(cfg));
    let mut means = Table::new("mean", &["m", "ensemble"], strategy_columns(cfg));
    for &m in &cfg.hybrid_m {
        let mut sums = vec![vec![0.0; cfg.strategies.len()]; HYBRID_ENSEMBLES.len()];
        let mut counts = [0usize; 3];
        for rep in 0..cfg.repetitions.max(1) {
            let draw = hybrid_draw(cfg.seed, m, rep, n_rev, n_irr);
            let mut combined = all_rev.clone();
            combined.extend(&draw.irreversible);
            for (e, cols) in [combined, draw.irreversible, draw.reversible].iter().enumerate() {
                let values = if cols.is_empty() {
                    vec![None; cfg.strategies.len()]
                } else {
                    let acc = strategy_accuracies(&preds, cols, set.labels(), &cfg.strategies, cfg.rd_seed)?;
                    for (s, a) in sums[e].iter_mut().zip(&acc) {
                        *s += a;
                    }
                    counts[e] += 1;
                    some(acc)
                };
                t.push(vec![m.to_string(), rep.to_string(), HYBRID_ENSEMBLES[e].to_string()], values);
            }
        }
        for (e, name) in HYBRID_ENSEMBLES.iter().enumerate() {
            let values = if counts[e] == 0 {
                vec![None; cfg.strategies.len()]
            } else {
                sums[e].iter().map(|s| Some(s / counts[e] as f64)).collect()
            };
            means.push(vec![m.to_string(), name.to_string()], values);
        }
    }
    let mut report = ExperimentReport::new("hybrid", cfg);
    report.tables.push(t);
    report.tables.push(means);
    Ok(report)
}
