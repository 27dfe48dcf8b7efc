//! End-to-end runs of every command on a small synthetic digit set.

use std::fs;
use std::path::Path;

use gauntlet::harness::{read_ae_dump, run, Command, ExperimentConfig, HarnessError, Manifest, Table};
use gauntlet::rng::seeded;
use rand::Rng;

fn write_idx(dir: &Path, prefix: &str, n: usize, seed: u64) {
    let mut rng = seeded(seed);
    let mut images = vec![0, 0, 8, 3];
    for d in [n as u32, 28, 28] {
        images.extend_from_slice(&d.to_be_bytes());
    }
    let mut labels = vec![0, 0, 8, 1];
    labels.extend_from_slice(&(n as u32).to_be_bytes());
    for i in 0..n {
        let class = i % 10;
        labels.push(class as u8);
        for y in 0..28 {
            for x in 0..28 {
                let on = (y / 3 == class || x / 3 == class) && (4..24).contains(&x.min(y).max(4));
                let base: u8 = if on { 220 } else { 10 };
                images.push(base.saturating_add(rng.random_range(0..30)));
            }
        }
    }
    fs::write(dir.join(format!("{prefix}-images-idx3-ubyte")), images).unwrap();
    fs::write(dir.join(format!("{prefix}-labels-idx1-ubyte")), labels).unwrap();
}

fn config(root: &Path) -> ExperimentConfig {
    let data = root.join("data");
    fs::create_dir_all(&data).unwrap();
    write_idx(&data, "train", 200, 1);
    write_idx(&data, "t10k", 120, 2);
    let text = format!(
        "data_dir = {}\nmodels_dir = {}\nreports_dir = {}\n\
         train_subset = 200\nval_subset = 40\nmax_epochs = 2\npatience = 1\n\
         include_irreversible = true\neval_subset = 20\nranking_sample = 10\n\
         transfer_subset = 10\npaa_subset = 6\npaa_max_rounds = 3\n\
         attacks = taa-fgsm\npaa_attacks = paa-fgsm\nhybrid_attack = taa-fgsm\n\
         hybrid_m = 0, 3\nrepetitions = 2\n",
        data.display(),
        root.join("models").display(),
        root.join("reports").display()
    );
    ExperimentConfig::parse(&text).unwrap()
}

fn read(path: &Path) -> String {
    fs::read_to_string(path).unwrap()
}

#[test]
fn full_pipeline() {
    let root = tempfile::tempdir().unwrap();
    let mut cfg = config(root.path());

    let err = run(Command::Benign, &cfg).unwrap_err();
    assert!(matches!(err, HarnessError::MissingModel(_)), "{err}");

    run(Command::Train, &cfg).unwrap();
    let models = fs::read_dir(&cfg.models_dir).unwrap().filter(|e| {
        e.as_ref().unwrap().path().extension().is_some_and(|x| x == "egw")
    });
    assert_eq!(models.count(), 29);
    let manifest = Manifest::read(&cfg.models_dir).unwrap().unwrap();
    assert_eq!(manifest.models.len(), 29);
    assert_eq!(manifest.models[0].id, "original");
    let first = read(&cfg.models_dir.join("manifest.json"));
    run(Command::Train, &cfg).unwrap();
    assert_eq!(read(&cfg.models_dir.join("manifest.json")), first);

    let reports = cfg.reports_dir.clone();
    run(Command::Benign, &cfg).unwrap();
    let benign = Table::from_csv("ensembles", 2, &read(&reports.join("benign_ensembles.csv"))).unwrap();
    assert_eq!(benign.value_columns, ["rd", "mv", "t2mv", "avep", "avel"]);
    assert_eq!(benign.rows.len(), 3);

    run(Command::Transfer, &cfg).unwrap();
    let transfer = Table::from_csv("taa-fgsm", 1, &read(&reports.join("transfer_taa-fgsm.csv"))).unwrap();
    assert_eq!(transfer.rows.len(), 15);
    for row in &transfer.rows {
        let v = &row.keys[0];
        if transfer.cell(&[v], "aes").unwrap() > 0.0 {
            assert_eq!(transfer.cell(&[v], v), Some(1.0), "diagonal for {v}");
        }
    }

    cfg.dump_aes = true;
    run(Command::Taa, &cfg).unwrap();
    let taa_csv = read(&reports.join("taa_accuracy.csv"));
    let taa = Table::from_csv("accuracy", 3, &taa_csv).unwrap();
    // benign, original and the 14 ranked targets
    assert_eq!(taa.rows.len(), 16);
    assert_eq!(taa.rows[0].keys, ["benign", "-", "-"]);
    assert!(taa.rows.iter().flat_map(|r| &r.values).all(|v| v.is_some_and(|a| (0.0..=1.0).contains(&a))));
    let taa_json = read(&reports.join("taa.json"));
    assert!(taa_json.contains(&cfg.fingerprint()));

    // A dumped set of AEs reproduces its accuracy cell.
    let (meta, aes) = read_ae_dump(reports.join("aes/taa/taa-fgsm_original.json")).unwrap();
    let suite = gauntlet::harness::Suite::load(&cfg).unwrap();
    let cfg_mv = gauntlet::ensemble::EnsembleConfig::from_submodels(&suite.reversible, gauntlet::ensemble::Strategy::Mv, 0).unwrap();
    let correct = aes
        .iter()
        .zip(&meta.labels)
        .filter(|(x, &y)| gauntlet::ensemble::ensemble_predict(&cfg_mv, x).unwrap() == y)
        .count();
    let recomputed = correct as f64 / aes.len() as f64;
    let cell = taa.cell(&["taa-fgsm", "original", "-"], "mv").unwrap();
    assert!((recomputed - cell).abs() < 1e-4);
    cfg.dump_aes = false;

    run(Command::Paa, &cfg).unwrap();
    let paa = Table::from_csv("accuracy", 2, &read(&reports.join("paa_accuracy.csv"))).unwrap();
    assert_eq!(paa.rows.len(), 4);
    for r in &paa.rows {
        assert!(paa.cell(&[&r.keys[0], &r.keys[1]], "MaxDis").unwrap() <= 0.3);
    }

    run(Command::Hybrid, &cfg).unwrap();
    let hybrid = Table::from_csv("accuracy", 3, &read(&reports.join("hybrid_accuracy.csv"))).unwrap();
    assert_eq!(hybrid.rows.len(), 2 * 2 * 3);
    assert_eq!(hybrid.cell(&["0", "0", "irreversible"], "mv"), None);
    let m0 = hybrid.cell(&["0", "1", "reversible+irreversible"], "mv").unwrap();
    assert_eq!(hybrid.cell(&["0", "0", "reversible+irreversible"], "mv"), Some(m0));

    // Identical config, identical payload.
    run(Command::Taa, &cfg).unwrap();
    assert_eq!(read(&reports.join("taa_accuracy.csv")), taa_csv);
    assert_eq!(read(&reports.join("taa.json")), taa_json);

    cfg.hybrid_m = vec![15];
    assert!(matches!(run(Command::Hybrid, &cfg), Err(HarnessError::Invalid(_))));
}
