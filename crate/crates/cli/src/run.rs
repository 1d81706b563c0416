use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use activeseed::active::{fit_initial_model, read_jsonl, run_pal, write_jsonl, AlRunRecord, PalSession, SimulatedOracle, StrategyKind};
use activeseed::dataset::{stratified_kfold, FoldSplit};
use activeseed::json::to_line_precise;
use activeseed::kernels::KernelKind;
use activeseed::mixture::{MixtureModel, ViConfig};
use activeseed::svm::GridPoint;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::manifest::{LoadedDataset, RunManifest};
use crate::CliError;

/// First line of every record file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordHeader {
    pub manifest: String,
    pub dataset: String,
    pub fold: usize,
    pub strategy: StrategyKind,
    pub kernel: KernelKind,
    pub budget: usize,
    pub vi: ViConfig,
    pub initial_components: usize,
    pub hyperparameters: Option<GridPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellStatus {
    pub dataset: String,
    pub fold: usize,
    pub strategy: StrategyKind,
    pub kernel: KernelKind,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub manifest_hash: String,
    pub manifest: RunManifest,
    pub cells: Vec<CellStatus>,
}

impl RunSummary {
    pub fn all_ok(&self) -> bool {
        self.cells.iter().all(|c| c.ok)
    }
}

pub fn record_path(out: &Path, dataset: &str, strategy: StrategyKind, kernel: KernelKind, fold: usize) -> PathBuf {
    out.join(dataset).join(format!("{strategy}-{kernel}")).join(format!("fold{fold}.jsonl"))
}

pub fn write_record(path: &Path, header: &RecordHeader, record: &AlRunRecord) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{}", to_line_precise(header)?)?;
    write_jsonl(&record.rounds, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn read_record(path: &Path) -> Result<(RecordHeader, AlRunRecord), CliError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut first = String::new();
    r.read_line(&mut first)?;
    let header: RecordHeader =
        serde_json::from_str(&first).map_err(|e| CliError::Record(format!("{}: {e}", path.display())))?;
    let rounds = read_jsonl(r)?;
    let record = AlRunRecord {
        dataset: header.dataset.clone(),
        fold: header.fold,
        strategy: header.strategy,
        kernel: header.kernel,
        hyperparameters: header.hyperparameters,
        rounds,
    };
    Ok((header, record))
}

struct FoldJob {
    dataset: usize,
    split: FoldSplit,
    fitted: Result<(ViConfig, MixtureModel), String>,
}

/// Runs every dataset × fold × strategy × kernel cell with a simulated
/// oracle and writes one record file per cell plus `manifest.json`.
/// Failing cells are reported in the summary without stopping the others.
pub fn run_manifest(manifest: &RunManifest, base: &Path, out: &Path) -> Result<RunSummary, CliError> {
    manifest.validate()?;
    let hash = manifest.hash();
    std::fs::create_dir_all(out)?;
    let loaded: Vec<Result<LoadedDataset, String>> =
        manifest.datasets.iter().map(|d| d.load(base).map_err(|e| e.to_string())).collect();
    let folds = manifest.folds_to_run();
    let seed = manifest.seed;

    let mut prepared: Vec<(usize, Result<Vec<FoldSplit>, String>)> = Vec::new();
    for (i, l) in loaded.iter().enumerate() {
        let splits = l.as_ref().map_err(Clone::clone).and_then(|d| {
            let all = stratified_kfold(&d.data, manifest.folds, seed).map_err(|e| e.to_string())?;
            Ok(folds.iter().map(|&f| all[f].clone()).collect())
        });
        prepared.push((i, splits));
    }

    let jobs: Vec<(usize, usize, Result<FoldSplit, String>)> = prepared
        .iter()
        .flat_map(|(i, splits)| {
            folds.iter().enumerate().map(move |(k, &f)| {
                (*i, f, splits.as_ref().map(|s| s[k].clone()).map_err(Clone::clone))
            })
        })
        .collect();
    let fitted: Vec<(usize, usize, Result<FoldJob, String>)> = jobs
        .into_par_iter()
        .map(|(i, f, split)| {
            let job = split.map(|split| {
                let d = loaded[i].as_ref().expect("split exists only for loaded data");
                let vi = ViConfig { seed, ..manifest.vi.clone() };
                let fitted = fit_initial_model(&d.data, &split.pool, &manifest.vi_grid, &vi)
                    .map(|(cfg, m, _)| (cfg, m))
                    .map_err(|e| e.to_string());
                FoldJob { dataset: i, split, fitted }
            });
            (i, f, job)
        })
        .collect();

    let mut cells = Vec::new();
    for (i, f, job) in &fitted {
        for &strategy in &manifest.strategies {
            for &kernel in &manifest.kernels {
                cells.push((*i, *f, job, strategy, kernel));
            }
        }
    }
    let statuses: Vec<CellStatus> = cells
        .into_par_iter()
        .map(|(i, fold, job, strategy, kernel)| {
            let entry = &manifest.datasets[i];
            let result = job.as_ref().map_err(Clone::clone).and_then(|job| run_cell(manifest, &hash, &loaded, job, strategy, kernel, out));
            match result {
                Ok((file, acc)) => CellStatus {
                    dataset: entry.name.clone(),
                    fold,
                    strategy,
                    kernel,
                    ok: true,
                    file: Some(file),
                    final_accuracy: acc,
                    error: None,
                },
                Err(e) => {
                    tracing::error!(dataset = %entry.name, fold, %strategy, %kernel, "cell failed: {e}");
                    CellStatus {
                        dataset: entry.name.clone(),
                        fold,
                        strategy,
                        kernel,
                        ok: false,
                        file: None,
                        final_accuracy: None,
                        error: Some(e),
                    }
                }
            }
        })
        .collect();

    let summary = RunSummary {
        manifest_hash: hash,
        manifest: manifest.clone(),
        cells: statuses,
    };
    let mut w = BufWriter::new(File::create(out.join("manifest.json"))?);
    serde_json::to_writer_pretty(&mut w, &summary)?;
    w.flush()?;
    Ok(summary)
}

fn run_cell(
    manifest: &RunManifest,
    hash: &str,
    loaded: &[Result<LoadedDataset, String>],
    job: &FoldJob,
    strategy: StrategyKind,
    kernel: KernelKind,
    out: &Path,
) -> Result<(PathBuf, Option<f64>), String> {
    let d = loaded[job.dataset].as_ref().map_err(Clone::clone)?;
    let (vi, model) = job.fitted.as_ref().map_err(Clone::clone)?;
    let cfg = manifest.settings.config(strategy, kernel, d.entry.budget, manifest.seed);
    let mut session =
        PalSession::new(Arc::clone(&d.data), job.split.clone(), model.clone(), cfg).map_err(|e| e.to_string())?;
    let mut oracle = SimulatedOracle::new(&d.data);
    let record = run_pal(&mut session, &mut oracle).map_err(|e| e.to_string())?;
    let header = RecordHeader {
        manifest: hash.to_string(),
        dataset: d.entry.name.clone(),
        fold: job.split.fold,
        strategy,
        kernel,
        budget: d.entry.budget,
        vi: vi.clone(),
        initial_components: model.n_components(),
        hyperparameters: record.hyperparameters,
    };
    let rel = record_path(Path::new(""), &d.entry.name, strategy, kernel, job.split.fold);
    write_record(&out.join(&rel), &header, &record).map_err(|e| e.to_string())?;
    Ok((rel, record.final_accuracy()))
}
