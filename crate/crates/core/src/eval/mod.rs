//! Comparison of finished runs: rank statistics, data utilization and
//! learning-curve areas.

mod report;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

pub use report::{classifier_id, rp_accuracy, CdPlot, DurCell, EvaluationReport, Gap, ReportInput};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("ragged accuracy table")]
    Ragged,
    #[error("no studentized range value for alpha {alpha} and {classifiers} classifiers")]
    NoQuantile { alpha: f64, classifiers: usize },
    #[error("no budget points in [{lo}, {hi}]")]
    EmptyWindow { lo: f64, hi: f64 },
    #[error("baseline never reaches its target {0}")]
    BaselineMissesTarget(f64),
    #[error("curves do not overlap")]
    NoOverlap,
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankTable {
    /// `ranks[dataset][classifier]`, 1 = best, ties averaged.
    pub ranks: Vec<Vec<f64>>,
    pub mean_ranks: Vec<f64>,
    /// Datasets won; a tie for first splits the win.
    pub wins: Vec<f64>,
}

/// Average ranks with ties sharing the mean of their positions. Higher
/// values get lower ranks.
fn tie_ranks(row: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..row.len()).collect();
    order.sort_by(|&a, &b| row[b].total_cmp(&row[a]));
    let mut ranks = vec![0.0; row.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && row[order[j + 1]] == row[order[i]] {
            j += 1;
        }
        let shared = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = shared;
        }
        i = j + 1;
    }
    ranks
}

/// Ranks classifiers (columns) on every dataset (row) by accuracy.
pub fn rp_rank(accuracy: &[Vec<f64>]) -> Result<RankTable, EvalError> {
    let s = accuracy.first().ok_or(EvalError::Empty("accuracy table"))?.len();
    if s == 0 {
        return Err(EvalError::Empty("classifiers"));
    }
    if accuracy.iter().any(|r| r.len() != s) {
        return Err(EvalError::Ragged);
    }
    let ranks: Vec<Vec<f64>> = accuracy.iter().map(|r| tie_ranks(r)).collect();
    let n = ranks.len() as f64;
    let mean_ranks = (0..s).map(|j| ranks.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let mut wins = vec![0.0; s];
    for r in &ranks {
        let best = r.iter().copied().fold(f64::INFINITY, f64::min);
        let tied: Vec<usize> = (0..s).filter(|&j| r[j] == best).collect();
        for &j in &tied {
            wins[j] += 1.0 / tied.len() as f64;
        }
    }
    Ok(RankTable { ranks, mean_ranks, wins })
}

/// `12N / (S(S+1)) · (Σ R_j² − S(S+1)²/4)`.
pub fn friedman_statistic(mean_ranks: &[f64], n_datasets: usize) -> f64 {
    let s = mean_ranks.len() as f64;
    let sum_sq: f64 = mean_ranks.iter().map(|r| r * r).sum();
    12.0 * n_datasets as f64 / (s * (s + 1.0)) * (sum_sq - s * (s + 1.0) * (s + 1.0) / 4.0)
}

/// Upper `alpha` quantile of the χ² distribution.
pub fn chi2_critical(df: usize, alpha: f64) -> f64 {
    ChiSquared::new(df as f64).expect("positive degrees of freedom").inverse_cdf(1.0 - alpha)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FriedmanTest {
    pub statistic: f64,
    pub df: usize,
    pub alpha: f64,
    pub critical: f64,
    pub reject: bool,
}

pub fn friedman_test(mean_ranks: &[f64], n_datasets: usize, alpha: f64) -> FriedmanTest {
    let statistic = friedman_statistic(mean_ranks, n_datasets);
    let df = mean_ranks.len().saturating_sub(1).max(1);
    let critical = chi2_critical(df, alpha);
    FriedmanTest {
        statistic,
        df,
        alpha,
        critical,
        reject: statistic > critical,
    }
}

/// Source of studentized-range quantiles for the Nemenyi test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QTable {
    /// Standard values (range statistic divided by √2), α ∈ {0.05, 0.1}.
    Standard,
    /// As `Standard`, except q(0.1, 5) = 2.516, the value behind the
    /// published critical difference of 1.258.
    Published,
}

const Q_05: [f64; 9] = [1.960, 2.343, 2.569, 2.728, 2.850, 2.949, 3.031, 3.102, 3.164];
const Q_10: [f64; 9] = [1.645, 2.052, 2.291, 2.459, 2.589, 2.693, 2.780, 2.855, 2.920];

pub fn q_alpha(classifiers: usize, alpha: f64, table: QTable) -> Result<f64, EvalError> {
    let err = EvalError::NoQuantile { alpha, classifiers };
    if !(2..=10).contains(&classifiers) {
        return Err(err);
    }
    let row = if (alpha - 0.05).abs() < 1e-12 {
        &Q_05
    } else if (alpha - 0.1).abs() < 1e-12 {
        if table == QTable::Published && classifiers == 5 {
            return Ok(2.516);
        }
        &Q_10
    } else {
        return Err(err);
    };
    Ok(row[classifiers - 2])
}

/// `q_α · √(S(S+1) / 6N)`.
pub fn nemenyi_cd(classifiers: usize, n_datasets: usize, alpha: f64, table: QTable) -> Result<f64, EvalError> {
    let q = q_alpha(classifiers, alpha, table)?;
    let s = classifiers as f64;
    Ok(q * (s * (s + 1.0) / (6.0 * n_datasets as f64)).sqrt())
}

/// Maximal runs of classifiers (sorted by mean rank) whose rank spread is
/// below the critical difference. Returned as classifier indices.
pub fn cd_groups(mean_ranks: &[f64], cd: f64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..mean_ranks.len()).collect();
    order.sort_by(|&a, &b| mean_ranks[a].total_cmp(&mean_ranks[b]).then(a.cmp(&b)));
    let mut groups: Vec<(usize, usize)> = Vec::new();
    for start in 0..order.len() {
        let mut end = start;
        while end + 1 < order.len() && mean_ranks[order[end + 1]] - mean_ranks[order[start]] < cd {
            end += 1;
        }
        if groups.last().is_none_or(|&(_, e)| end > e) {
            groups.push((start, end));
        }
    }
    groups.into_iter().map(|(s, e)| order[s..=e].to_vec()).collect()
}

/// Mean test accuracy over folds at increasing numbers of labeled samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub id: String,
    pub budget: Vec<f64>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub folds: usize,
}

impl LearningCurve {
    pub fn new(id: impl Into<String>, points: &[(f64, f64)]) -> Self {
        LearningCurve {
            id: id.into(),
            budget: points.iter().map(|p| p.0).collect(),
            mean: points.iter().map(|p| p.1).collect(),
            std: vec![0.0; points.len()],
            folds: 1,
        }
    }

    /// Averages fold curves on the union of their budget points, each
    /// fold linearly interpolated and restricted to the common range.
    pub fn from_folds(id: impl Into<String>, folds: &[Vec<(f64, f64)>]) -> Result<Self, EvalError> {
        let folds: Vec<&Vec<(f64, f64)>> = folds.iter().filter(|f| !f.is_empty()).collect();
        if folds.is_empty() {
            return Err(EvalError::Empty("fold curves"));
        }
        let lo = folds.iter().map(|f| f[0].0).fold(f64::NEG_INFINITY, f64::max);
        let hi = folds.iter().map(|f| f[f.len() - 1].0).fold(f64::INFINITY, f64::min);
        if lo > hi {
            return Err(EvalError::NoOverlap);
        }
        let grid = union_grid(folds.iter().flat_map(|f| f.iter().map(|p| p.0)), lo, hi);
        let n = folds.len() as f64;
        let mut mean = Vec::with_capacity(grid.len());
        let mut std = Vec::with_capacity(grid.len());
        for &x in &grid {
            let vals: Vec<f64> = folds.iter().map(|f| interpolate(f, x).expect("inside common range")).collect();
            let m = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
            mean.push(m);
            std.push(var.sqrt());
        }
        Ok(LearningCurve {
            id: id.into(),
            budget: grid,
            mean,
            std,
            folds: folds.len(),
        })
    }

    pub fn points(&self) -> Vec<(f64, f64)> {
        self.budget.iter().copied().zip(self.mean.iter().copied()).collect()
    }

    pub fn at(&self, x: f64) -> Option<f64> {
        interpolate(&self.points(), x)
    }
}

fn union_grid(xs: impl IntoIterator<Item = f64>, lo: f64, hi: f64) -> Vec<f64> {
    let mut grid: Vec<f64> = xs.into_iter().filter(|&x| x >= lo && x <= hi).collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    grid
}

/// Piecewise-linear value at `x`; `None` outside the curve's range.
pub fn interpolate(points: &[(f64, f64)], x: f64) -> Option<f64> {
    let first = points.first()?;
    let last = points.last()?;
    if x < first.0 || x > last.0 {
        return None;
    }
    let i = points.partition_point(|p| p.0 < x);
    if points[i].0 == x {
        return Some(points[i].1);
    }
    let (a, b) = (points[i - 1], points[i]);
    Some(a.1 + (b.1 - a.1) * (x - a.0) / (b.0 - a.0))
}

/// Mean baseline accuracy over budget points in `[0.8·budget, budget]`.
pub fn target_accuracy(baseline: &LearningCurve, budget: f64) -> Result<f64, EvalError> {
    let lo = 0.8 * budget;
    let vals: Vec<f64> = baseline
        .budget
        .iter()
        .zip(&baseline.mean)
        .filter(|(&x, _)| x >= lo && x <= budget)
        .map(|(_, &m)| m)
        .collect();
    if vals.is_empty() {
        return Err(EvalError::EmptyWindow { lo, hi: budget });
    }
    Ok(vals.iter().sum::<f64>() / vals.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dur {
    pub ratio: f64,
    /// Labeled samples needed; the budget when the target is never reached.
    pub samples: f64,
    pub baseline_samples: f64,
    pub reached: bool,
}

/// First budget point at which `curve` reaches `target`.
pub fn samples_to_target(curve: &LearningCurve, target: f64) -> Option<f64> {
    curve.budget.iter().zip(&curve.mean).find(|(_, &m)| m >= target).map(|(&x, _)| x)
}

/// Data utilization ratio of `curve` against `baseline`. A curve that
/// never reaches the target reports `budget / baseline samples` with
/// `reached = false`.
pub fn dur(curve: &LearningCurve, baseline: &LearningCurve, target: f64, budget: f64) -> Result<Dur, EvalError> {
    let base = samples_to_target(baseline, target).ok_or(EvalError::BaselineMissesTarget(target))?;
    Ok(dur_from_counts(samples_to_target(curve, target), base, budget))
}

pub fn dur_from_counts(samples: Option<f64>, baseline_samples: f64, budget: f64) -> Dur {
    match samples {
        Some(s) => Dur {
            ratio: s / baseline_samples,
            samples: s,
            baseline_samples,
            reached: true,
        },
        None => Dur {
            ratio: budget / baseline_samples,
            samples: budget,
            baseline_samples,
            reached: false,
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aulc {
    /// Mean accuracy difference in percentage points.
    pub mean_points: f64,
    /// Trapezoid area of the accuracy difference over the budget axis.
    pub raw_area: f64,
}

/// Area between two learning curves over their common budget range.
pub fn aulc(curve: &LearningCurve, baseline: &LearningCurve) -> Result<Aulc, EvalError> {
    let (a, b) = (curve.points(), baseline.points());
    let (Some(a0), Some(b0)) = (a.first(), b.first()) else {
        return Err(EvalError::Empty("learning curve"));
    };
    let lo = a0.0.max(b0.0);
    let hi = a[a.len() - 1].0.min(b[b.len() - 1].0);
    if lo > hi {
        return Err(EvalError::NoOverlap);
    }
    let grid = union_grid(a.iter().chain(&b).map(|p| p.0), lo, hi);
    let diff: Vec<f64> = grid
        .iter()
        .map(|&x| interpolate(&a, x).expect("in range") - interpolate(&b, x).expect("in range"))
        .collect();
    if grid.len() == 1 {
        return Ok(Aulc {
            mean_points: 100.0 * diff[0],
            raw_area: 0.0,
        });
    }
    let raw_area: f64 = grid.windows(2).zip(diff.windows(2)).map(|(x, d)| 0.5 * (d[0] + d[1]) * (x[1] - x[0])).sum();
    Ok(Aulc {
        mean_points: 100.0 * raw_area / (hi - lo),
        raw_area,
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn ties_share_ranks() {
        let t = rp_rank(&[vec![0.7, 0.7, 0.7, 0.7]]).unwrap();
        assert_eq!(t.ranks[0], vec![2.5; 4]);
        assert_eq!(t.wins, vec![0.25; 4]);
        let t = rp_rank(&[vec![0.9, 0.8], vec![0.1, 0.3]]).unwrap();
        assert_eq!(t.ranks, vec![vec![1.0, 2.0], vec![2.0, 1.0]]);
        assert_eq!(t.wins, vec![1.0, 1.0]);
        assert!(rp_rank(&[vec![0.1], vec![0.1, 0.2]]).is_err());
    }

    #[test]
    fn friedman_basics() {
        assert_eq!(friedman_statistic(&[2.0, 2.0, 2.0], 10), 0.0);
        assert!((chi2_critical(4, 0.1) - 7.779).abs() < 1e-3);
        assert!((chi2_critical(1, 0.05) - 3.841).abs() < 1e-3);
    }

    #[test]
    fn nemenyi() {
        let cd = nemenyi_cd(5, 20, 0.1, QTable::Published).unwrap();
        assert!((cd - 2.516 * (30.0f64 / 120.0).sqrt()).abs() < 1e-12);
        assert!((nemenyi_cd(5, 20, 0.1, QTable::Standard).unwrap() - 2.459 * 0.5).abs() < 1e-12);
        let mut prev = f64::INFINITY;
        for n in [2, 5, 20, 100, 10_000] {
            let cd = nemenyi_cd(4, n, 0.05, QTable::Standard).unwrap();
            assert!(cd < prev);
            prev = cd;
        }
        assert_eq!(q_alpha(2, 0.05, QTable::Standard).unwrap(), 1.960);
        assert!(q_alpha(11, 0.05, QTable::Standard).is_err());
        assert!(q_alpha(3, 0.01, QTable::Standard).is_err());
    }

    #[test]
    fn groups() {
        let g = cd_groups(&[1.75, 3.075, 3.2, 3.05, 3.925], 1.258);
        assert_eq!(g, vec![vec![0], vec![3, 1, 2, 4]]);
        assert_eq!(cd_groups(&[1.0, 1.1], 0.5), vec![vec![0, 1]]);
    }

    #[test]
    fn target_window() {
        let flat = LearningCurve::new("b", &[(10.0, 0.9), (50.0, 0.9), (100.0, 0.9)]);
        assert!((target_accuracy(&flat, 100.0).unwrap() - 0.9).abs() < 1e-15);
        let ramp: Vec<(f64, f64)> = (0..=10).map(|i| (i as f64 * 10.0, i as f64 / 10.0)).collect();
        let c = LearningCurve::new("r", &ramp);
        assert!((target_accuracy(&c, 100.0).unwrap() - (0.8 + 0.9 + 1.0) / 3.0).abs() < 1e-12);
        let edge = LearningCurve::new("e", &[(80.0, 0.42)]);
        assert_eq!(target_accuracy(&edge, 100.0).unwrap(), 0.42);
        assert!(target_accuracy(&LearningCurve::new("x", &[(10.0, 0.5)]), 100.0).is_err());
    }

    #[test]
    fn dur_cases() {
        let base = LearningCurve::new("b", &[(10.0, 0.5), (20.0, 0.8), (30.0, 0.9)]);
        let d = dur(&base, &base, 0.8, 30.0).unwrap();
        assert_eq!(d.ratio, 1.0);
        let never = LearningCurve::new("n", &[(10.0, 0.1), (30.0, 0.2)]);
        let d = dur(&never, &base, 0.8, 30.0).unwrap();
        assert!(!d.reached);
        assert_eq!(d.ratio, 1.5);
        assert!(dur(&base, &never, 0.8, 30.0).is_err());
        assert_eq!(format!("{:.3}", dur_from_counts(Some(45.0), 81.0, 500.0).ratio), "0.556");
    }

    #[test]
    fn aulc_cases() {
        let b = LearningCurve::new("b", &[(0.0, 0.5), (10.0, 0.7), (20.0, 0.9)]);
        assert_eq!(aulc(&b, &b).unwrap().mean_points, 0.0);
        let up = LearningCurve::new("u", &[(0.0, 0.51), (10.0, 0.71), (20.0, 0.91)]);
        assert!((aulc(&up, &b).unwrap().mean_points - 1.0).abs() < 1e-9);
        // Two segments: difference 0 → 0.2 → 0, area = 0.5·0.2·10 · 2 = 2.
        let hump = LearningCurve::new("h", &[(0.0, 0.5), (10.0, 0.9), (20.0, 0.9)]);
        let r = aulc(&hump, &b).unwrap();
        assert!((r.raw_area - 2.0).abs() < 1e-12);
        assert!((r.mean_points - 10.0).abs() < 1e-9);
        // A sparser grid is aligned by interpolation.
        let coarse = LearningCurve::new("c", &[(0.0, 0.5), (20.0, 0.9)]);
        assert!(aulc(&coarse, &b).unwrap().raw_area.abs() < 1e-12);
    }

    #[test]
    fn fold_average() {
        let c = LearningCurve::from_folds("x", &[vec![(8.0, 0.5), (13.0, 0.7)], vec![(8.0, 0.7), (9.0, 0.8), (13.0, 0.9)]]).unwrap();
        assert_eq!(c.budget, vec![8.0, 9.0, 13.0]);
        assert!((c.mean[1] - (0.54 + 0.8) / 2.0).abs() < 1e-12);
        assert!((c.std[0] - 0.1).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn rank_rows_sum(rows in proptest::collection::vec(proptest::collection::vec(0u8..5, 4), 1..8)) {
            let acc: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|&v| v as f64 / 4.0).collect()).collect();
            let t = rp_rank(&acc).unwrap();
            for r in &t.ranks {
                prop_assert!((r.iter().sum::<f64>() - 10.0).abs() < 1e-12);
            }
            prop_assert!((t.wins.iter().sum::<f64>() - acc.len() as f64).abs() < 1e-9);
        }

        #[test]
        fn friedman_invariant_under_monotone_maps(rows in proptest::collection::vec(proptest::collection::vec(0.0f64..1.0, 5), 2..10)) {
            let a = rp_rank(&rows).unwrap();
            let mapped: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|v| v.powi(3) * 7.0 - 2.0).collect()).collect();
            let b = rp_rank(&mapped).unwrap();
            prop_assert_eq!(friedman_statistic(&a.mean_ranks, rows.len()), friedman_statistic(&b.mean_ranks, rows.len()));
        }

        #[test]
        fn aulc_antisymmetric(ys in proptest::collection::vec(0.0f64..1.0, 2..12), zs in proptest::collection::vec(0.0f64..1.0, 2..12)) {
            let a = LearningCurve::new("a", &ys.iter().enumerate().map(|(i, &y)| (i as f64 * 3.0, y)).collect::<Vec<_>>());
            let b = LearningCurve::new("b", &zs.iter().enumerate().map(|(i, &y)| (i as f64 * 2.0, y)).collect::<Vec<_>>());
            let ab = aulc(&a, &b).unwrap();
            let ba = aulc(&b, &a).unwrap();
            prop_assert!((ab.mean_points + ba.mean_points).abs() < 1e-12);
            prop_assert!((ab.raw_area + ba.raw_area).abs() < 1e-12);
        }
    }
}
