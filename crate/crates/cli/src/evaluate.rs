use std::path::{Path, PathBuf};

use activeseed::active::AlRunRecord;
use activeseed::eval::{EvaluationReport, QTable, ReportInput};

use crate::run::read_record;
use crate::CliError;

pub struct EvaluateOptions {
    pub classifiers: Option<Vec<String>>,
    pub baseline: String,
    pub alpha: f64,
    pub q_table: QTable,
}

impl Default for EvaluateOptions {
    fn default() -> Self {
        EvaluateOptions {
            classifiers: None,
            baseline: "rbf-us".into(),
            alpha: 0.1,
            q_table: QTable::Published,
        }
    }
}

/// Every `<dataset>/<strategy>-<kernel>/fold<k>.jsonl` below `dir`, sorted.
pub fn record_files(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut files = Vec::new();
    for ds in std::fs::read_dir(dir)? {
        let ds = ds?.path();
        if !ds.is_dir() {
            continue;
        }
        for cell in std::fs::read_dir(&ds)? {
            let cell = cell?.path();
            if !cell.is_dir() {
                continue;
            }
            for f in std::fs::read_dir(&cell)? {
                let f = f?.path();
                let name = f.file_name().and_then(|n| n.to_str()).unwrap_or_default();
                if name.starts_with("fold") && name.ends_with(".jsonl") {
                    files.push(f);
                }
            }
        }
    }
    files.sort();
    Ok(files)
}

/// Builds the report from the records in `records` and writes it to `out`.
pub fn evaluate_dir(records: &Path, out: &Path, opts: &EvaluateOptions) -> Result<EvaluationReport, CliError> {
    let files = record_files(records)?;
    if files.is_empty() {
        return Err(CliError::Record(format!("no run records under {}", records.display())));
    }
    let mut runs: Vec<AlRunRecord> = Vec::with_capacity(files.len());
    let mut hashes = Vec::new();
    for f in &files {
        let (header, run) = read_record(f)?;
        hashes.push(header.manifest);
        runs.push(run);
    }
    hashes.sort();
    hashes.dedup();
    let tag = (hashes.len() == 1).then(|| hashes.remove(0));
    let input = ReportInput {
        runs: &runs,
        classifiers: opts.classifiers.clone(),
        baseline: opts.baseline.clone(),
        alpha: opts.alpha,
        q_table: opts.q_table,
        tag,
    };
    let report = EvaluationReport::build(&input)?;
    report.write_to(out)?;
    Ok(report)
}
