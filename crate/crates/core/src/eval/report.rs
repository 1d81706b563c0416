use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    aulc, cd_groups, dur, friedman_test, nemenyi_cd, q_alpha, rp_rank, target_accuracy, Aulc, Dur, EvalError,
    FriedmanTest, LearningCurve, QTable, RankTable,
};
use crate::active::AlRunRecord;

/// Test accuracy at the round with the highest training accuracy; the
/// latest such round wins ties.
pub fn rp_accuracy(run: &AlRunRecord) -> Option<f64> {
    run.rounds
        .iter()
        .max_by(|a, b| a.train_accuracy.total_cmp(&b.train_accuracy))
        .map(|r| r.test_accuracy)
}

/// `kernel-strategy`, e.g. `rwm-4ds`.
pub fn classifier_id(run: &AlRunRecord) -> String {
    format!("{}-{}", run.kernel, run.strategy)
}

pub struct ReportInput<'a> {
    pub runs: &'a [AlRunRecord],
    /// Column order; `None` sorts the ids found in `runs`.
    pub classifiers: Option<Vec<String>>,
    pub baseline: String,
    pub alpha: f64,
    pub q_table: QTable,
    /// Written into every output file when set.
    pub tag: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gap {
    pub dataset: String,
    pub classifier: String,
    pub missing_folds: Vec<usize>,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DurCell {
    pub target: f64,
    pub budget: f64,
    #[serde(flatten)]
    pub dur: Dur,
}

impl DurCell {
    /// `0.556 (45)`, or `>1.748 (>500)` when the target was not reached.
    pub fn display(&self) -> String {
        let mark = if self.dur.reached { "" } else { ">" };
        format!("{mark}{:.3} ({mark}{})", self.dur.ratio, self.dur.samples)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdPlot {
    pub alpha: f64,
    pub q: f64,
    pub q_standard: f64,
    pub cd: f64,
    pub cd_standard: f64,
    /// Mean rank per classifier, in column order.
    pub positions: Vec<(String, f64)>,
    /// Classifiers not separated by the critical difference.
    pub groups: Vec<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub tag: Option<String>,
    pub classifiers: Vec<String>,
    pub baseline: String,
    pub datasets: Vec<String>,
    /// `accuracy[dataset][classifier]`, fold mean; `None` for gaps.
    pub accuracy: Vec<Vec<Option<f64>>>,
    /// Datasets with every classifier present; ranks cover these only.
    pub ranked_datasets: Vec<String>,
    pub ranks: Option<RankTable>,
    pub friedman: Option<FriedmanTest>,
    pub cd: Option<CdPlot>,
    pub dur: Vec<Vec<Option<DurCell>>>,
    pub aulc: Vec<Vec<Option<Aulc>>>,
    pub curves: Vec<(String, LearningCurve)>,
    pub gaps: Vec<Gap>,
}

impl EvaluationReport {
    pub fn build(input: &ReportInput<'_>) -> Result<Self, EvalError> {
        if input.runs.is_empty() {
            return Err(EvalError::Empty("run records"));
        }
        let mut cells: BTreeMap<String, BTreeMap<String, Vec<&AlRunRecord>>> = BTreeMap::new();
        for run in input.runs {
            cells.entry(run.dataset.clone()).or_default().entry(classifier_id(run)).or_default().push(run);
        }
        let classifiers = match &input.classifiers {
            Some(c) => c.clone(),
            None => {
                let ids: BTreeSet<String> = input.runs.iter().map(classifier_id).collect();
                ids.into_iter().collect()
            }
        };
        let datasets: Vec<String> = cells.keys().cloned().collect();
        let mut gaps = Vec::new();
        let mut accuracy = Vec::new();
        let mut curves = Vec::new();
        let mut curve_grid: Vec<Vec<Option<LearningCurve>>> = Vec::new();

        for ds in &datasets {
            let by_clf = &cells[ds];
            let all_folds: BTreeSet<usize> = by_clf.values().flatten().map(|r| r.fold).collect();
            let mut acc_row = Vec::new();
            let mut curve_row = Vec::new();
            for clf in &classifiers {
                let runs = by_clf.get(clf).map(Vec::as_slice).unwrap_or(&[]);
                let have: BTreeSet<usize> = runs.iter().map(|r| r.fold).collect();
                let missing: Vec<usize> = all_folds.difference(&have).copied().collect();
                if runs.is_empty() {
                    gaps.push(Gap {
                        dataset: ds.clone(),
                        classifier: clf.clone(),
                        missing_folds: missing,
                        reason: "no runs".into(),
                    });
                    acc_row.push(None);
                    curve_row.push(None);
                    continue;
                }
                if !missing.is_empty() {
                    gaps.push(Gap {
                        dataset: ds.clone(),
                        classifier: clf.clone(),
                        missing_folds: missing.clone(),
                        reason: "missing folds".into(),
                    });
                }
                let fold_acc: Vec<f64> = runs.iter().filter_map(|r| rp_accuracy(r)).collect();
                let complete = missing.is_empty() && fold_acc.len() == runs.len();
                acc_row.push(complete.then(|| fold_acc.iter().sum::<f64>() / fold_acc.len() as f64));
                let fold_curves: Vec<Vec<(f64, f64)>> =
                    runs.iter().map(|r| r.curve().into_iter().map(|(x, y)| (x as f64, y)).collect()).collect();
                let curve = LearningCurve::from_folds(clf.clone(), &fold_curves).ok();
                if let Some(c) = &curve {
                    curves.push((ds.clone(), c.clone()));
                }
                curve_row.push(curve);
            }
            accuracy.push(acc_row);
            curve_grid.push(curve_row);
        }

        let complete: Vec<usize> = (0..datasets.len()).filter(|&i| accuracy[i].iter().all(Option::is_some)).collect();
        let ranked_datasets: Vec<String> = complete.iter().map(|&i| datasets[i].clone()).collect();
        let (ranks, friedman, cd) = if complete.is_empty() || classifiers.len() < 2 {
            (None, None, None)
        } else {
            let table: Vec<Vec<f64>> =
                complete.iter().map(|&i| accuracy[i].iter().map(|a| a.expect("complete row")).collect()).collect();
            let ranks = rp_rank(&table)?;
            let n = table.len();
            let friedman = friedman_test(&ranks.mean_ranks, n, input.alpha);
            let cd = cd_plot(&classifiers, &ranks.mean_ranks, n, input.alpha, input.q_table).ok();
            (Some(ranks), Some(friedman), cd)
        };

        let base_col = classifiers.iter().position(|c| *c == input.baseline);
        let mut dur_table = Vec::new();
        let mut aulc_table = Vec::new();
        for (i, ds) in datasets.iter().enumerate() {
            let base = base_col.and_then(|b| curve_grid[i][b].as_ref());
            let target = base.map(|b| {
                let budget = *b.budget.last().expect("non-empty curve");
                target_accuracy(b, budget).map(|t| (t, budget)).map_err(|e| e.to_string())
            });
            let mut dur_row = Vec::new();
            let mut aulc_row = Vec::new();
            for (j, clf) in classifiers.iter().enumerate() {
                let curve = curve_grid[i][j].as_ref();
                let (d, a) = match (curve, base, &target) {
                    (Some(c), Some(b), Some(t)) => {
                        let d = t.clone().and_then(|(target, budget)| {
                            dur(c, b, target, budget).map(|dur| DurCell { target, budget, dur }).map_err(|e| e.to_string())
                        });
                        (d, aulc(c, b).ok())
                    }
                    _ => (Err("no baseline curve".to_string()), None),
                };
                if curve.is_some() {
                    if let Err(e) = &d {
                        gaps.push(Gap {
                            dataset: ds.clone(),
                            classifier: clf.clone(),
                            missing_folds: Vec::new(),
                            reason: format!("data utilization: {e}"),
                        });
                    }
                }
                dur_row.push(d.ok());
                aulc_row.push(a);
            }
            dur_table.push(dur_row);
            aulc_table.push(aulc_row);
        }

        Ok(EvaluationReport {
            tag: input.tag.clone(),
            classifiers,
            baseline: input.baseline.clone(),
            datasets,
            accuracy,
            ranked_datasets,
            ranks,
            friedman,
            cd,
            dur: dur_table,
            aulc: aulc_table,
            curves,
            gaps,
        })
    }

    /// Writes `rp.csv`, `dur.csv`, `aulc.csv`, `curves.csv`, `cd.json`
    /// and `report.json` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<(), EvalError> {
        std::fs::create_dir_all(dir)?;
        self.write_rp(&dir.join("rp.csv"))?;
        self.write_table(&dir.join("dur.csv"), |i, j| self.dur[i][j].map(|d| d.display()))?;
        self.write_table(&dir.join("aulc.csv"), |i, j| self.aulc[i][j].map(|a| format!("{:.3}", a.mean_points)))?;
        self.write_curves(&dir.join("curves.csv"))?;
        let cd = serde_json::json!({
            "tag": self.tag,
            "cd": self.cd,
            "friedman": self.friedman,
            "datasets": self.ranked_datasets,
        });
        serde_json::to_writer_pretty(BufWriter::new(File::create(dir.join("cd.json"))?), &cd)?;
        serde_json::to_writer_pretty(BufWriter::new(File::create(dir.join("report.json"))?), self)?;
        Ok(())
    }

    fn header(&self) -> Vec<String> {
        let mut h = vec!["dataset".to_string()];
        h.extend(self.classifiers.iter().cloned());
        if self.tag.is_some() {
            h.push("manifest".into());
        }
        h
    }

    fn push_tag(&self, row: &mut Vec<String>) {
        if let Some(t) = &self.tag {
            row.push(t.clone());
        }
    }

    fn write_rp(&self, path: &Path) -> Result<(), EvalError> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(self.header())?;
        for (i, ds) in self.datasets.iter().enumerate() {
            let mut row = vec![ds.clone()];
            row.extend(self.accuracy[i].iter().map(|a| a.map(|v| format!("{:.2}", 100.0 * v)).unwrap_or_default()));
            self.push_tag(&mut row);
            w.write_record(&row)?;
        }
        if let Some(r) = &self.ranks {
            for (name, vals, digits) in [("rank", &r.mean_ranks, 3), ("wins", &r.wins, 1)] {
                let mut row = vec![name.to_string()];
                row.extend(vals.iter().map(|v| format!("{v:.digits$}")));
                self.push_tag(&mut row);
                w.write_record(&row)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    fn write_table(&self, path: &Path, cell: impl Fn(usize, usize) -> Option<String>) -> Result<(), EvalError> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(self.header())?;
        for (i, ds) in self.datasets.iter().enumerate() {
            let mut row = vec![ds.clone()];
            row.extend((0..self.classifiers.len()).map(|j| cell(i, j).unwrap_or_default()));
            self.push_tag(&mut row);
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    fn write_curves(&self, path: &Path) -> Result<(), EvalError> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["dataset", "classifier", "budget", "mean", "std", "folds"];
        if self.tag.is_some() {
            header.push("manifest");
        }
        w.write_record(&header)?;
        for (ds, c) in &self.curves {
            for k in 0..c.budget.len() {
                let mut row = vec![
                    ds.clone(),
                    c.id.clone(),
                    c.budget[k].to_string(),
                    c.mean[k].to_string(),
                    c.std[k].to_string(),
                    c.folds.to_string(),
                ];
                self.push_tag(&mut row);
                w.write_record(&row)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn cd_plot(classifiers: &[String], mean_ranks: &[f64], n: usize, alpha: f64, table: QTable) -> Result<CdPlot, EvalError> {
    let s = classifiers.len();
    let cd = nemenyi_cd(s, n, alpha, table)?;
    let groups = cd_groups(mean_ranks, cd)
        .into_iter()
        .map(|g| g.into_iter().map(|j| classifiers[j].clone()).collect())
        .collect();
    Ok(CdPlot {
        alpha,
        q: q_alpha(s, alpha, table)?,
        q_standard: q_alpha(s, alpha, QTable::Standard)?,
        cd,
        cd_standard: nemenyi_cd(s, n, alpha, QTable::Standard)?,
        positions: classifiers.iter().cloned().zip(mean_ranks.iter().copied()).collect(),
        groups,
    })
}
