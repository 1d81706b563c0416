use std::path::Path;

use activeseed::active::{AlRunRecord, RoundRecord, StrategyKind};
use activeseed::kernels::KernelKind;
use activeseed::mixture::ViConfig;
use activeseed_cli::evaluate::{evaluate_dir, EvaluateOptions};
use activeseed_cli::run::{record_path, write_record, RecordHeader};

/// Stand-ins for the five published columns; the report only needs five
/// distinct classifier ids.
const COLUMNS: [(StrategyKind, KernelKind); 5] = [
    (StrategyKind::FourDs, KernelKind::Rwm),
    (StrategyKind::Uncertainty, KernelKind::Rwm),
    (StrategyKind::Random, KernelKind::Rwm),
    (StrategyKind::FourDs, KernelKind::Rbf),
    (StrategyKind::Uncertainty, KernelKind::Rbf),
];

fn published() -> Vec<(String, Vec<f64>)> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/published_accuracy.csv");
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records()
        .map(|rec| {
            let rec = rec.unwrap();
            (rec[0].to_string(), (1..6).map(|i| rec[i].parse::<f64>().unwrap() / 100.0).collect())
        })
        .collect()
}

fn write_run(out: &Path, dataset: &str, fold: usize, strategy: StrategyKind, kernel: KernelKind, curve: &[(usize, f64)]) {
    let rounds = curve
        .iter()
        .enumerate()
        .map(|(i, &(n, acc))| RoundRecord {
            round: i + 1,
            labeled: n,
            selected: vec![],
            labels: vec![],
            train_accuracy: 1.0,
            test_accuracy: acc,
            components: 1,
            support_vectors: 1,
            converged: true,
            weights: None,
            elapsed_ms: None,
        })
        .collect();
    let run = AlRunRecord {
        dataset: dataset.into(),
        fold,
        strategy,
        kernel,
        hyperparameters: None,
        rounds,
    };
    let header = RecordHeader {
        manifest: "synthetic".into(),
        dataset: dataset.into(),
        fold,
        strategy,
        kernel,
        budget: curve.last().unwrap().0,
        vi: ViConfig::default(),
        initial_components: 1,
        hyperparameters: None,
    };
    write_record(&record_path(out, dataset, strategy, kernel, fold), &header, &run).unwrap();
}

/// Tie-averaged rank by counting: 1 + #better + #tied/2.
fn oracle_ranks(rows: &[Vec<f64>]) -> Vec<f64> {
    let s = rows[0].len();
    let mut mean = vec![0.0; s];
    for row in rows {
        for j in 0..s {
            let better = row.iter().filter(|&&v| v > row[j]).count() as f64;
            let tied = row.iter().filter(|&&v| v == row[j]).count() as f64 - 1.0;
            mean[j] += (1.0 + better + tied / 2.0) / rows.len() as f64;
        }
    }
    mean
}

#[test]
fn synthesized_published_accuracies_give_the_rank_row() {
    let dir = tempfile::tempdir().unwrap();
    let table = published();
    for (ds, row) in &table {
        for (j, &(s, k)) in COLUMNS.iter().enumerate() {
            write_run(dir.path(), ds, 0, s, k, &[(10, 0.5), (20, row[j])]);
        }
    }
    let order: Vec<String> = COLUMNS.iter().map(|(s, k)| format!("{k}-{s}")).collect();
    let opts = EvaluateOptions {
        classifiers: Some(order),
        ..Default::default()
    };
    let out = dir.path().join("report");
    let report = evaluate_dir(dir.path(), &out, &opts).unwrap();
    assert!(report.gaps.is_empty());
    let ranks = report.ranks.unwrap();
    let rows: Vec<Vec<f64>> = table.iter().map(|(_, r)| r.clone()).collect();
    let expected = oracle_ranks(&rows);
    for (a, b) in ranks.mean_ranks.iter().zip(&expected) {
        assert!((a - b).abs() < 1e-12);
    }
    // Printed two-decimal accuracies tie on one dataset; with ties averaged
    // four columns move by 0.5/20 from the published rank row.
    let printed = [1.750, 3.075, 3.200, 3.050, 3.925];
    let moved: Vec<f64> = ranks.mean_ranks.iter().zip(printed).map(|(a, p)| ((a - p) * 1000.0).round() / 1000.0).collect();
    assert_eq!(moved, vec![0.025, -0.025, 0.025, -0.025, 0.0]);
    assert_eq!(ranks.wins, vec![11.0, 0.0, 4.5, 3.5, 1.0]);
    let cd = report.cd.unwrap();
    assert!((cd.cd - 1.258).abs() < 1e-3);
    assert!(report.friedman.unwrap().reject);
    for f in ["rp.csv", "dur.csv", "aulc.csv", "curves.csv", "cd.json", "report.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    assert!(std::fs::read_to_string(out.join("rp.csv")).unwrap().contains("synthetic"));
}

#[test]
fn empty_directory_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(evaluate_dir(dir.path(), &dir.path().join("r"), &EvaluateOptions::default()).is_err());
}

#[test]
fn partial_matrix_is_flagged() {
    let dir = tempfile::tempdir().unwrap();
    let (us, fds) = (StrategyKind::Uncertainty, StrategyKind::FourDs);
    let rbf = KernelKind::Rbf;
    for fold in 0..2 {
        write_run(dir.path(), "a", fold, us, rbf, &[(4, 0.5), (8, 0.7), (10, 0.8)]);
        write_run(dir.path(), "b", fold, us, rbf, &[(4, 0.5), (10, 0.8)]);
        write_run(dir.path(), "b", fold, fds, rbf, &[(4, 0.6), (10, 0.9)]);
    }
    write_run(dir.path(), "a", 0, fds, rbf, &[(4, 0.6), (10, 0.9)]);
    let report = evaluate_dir(dir.path(), &dir.path().join("r"), &EvaluateOptions::default()).unwrap();
    assert_eq!(report.gaps.len(), 1);
    assert_eq!(report.gaps[0].dataset, "a");
    assert_eq!(report.gaps[0].missing_folds, vec![1]);
    assert_eq!(report.ranked_datasets, vec!["b"]);
    let rp = std::fs::read_to_string(dir.path().join("r/rp.csv")).unwrap();
    assert!(rp.lines().any(|l| l.starts_with("a,,")), "{rp}");
}
