//! Hyperparameter grid search on the initial labeled set.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{train_csvm_lenient, SmoConfig, SvmError, SvmModel};
use crate::dataset::SampleId;
use crate::kernels::{GramMatrix, KernelContext, KernelKind, KernelSpec, PairDistance};

fn powers_of_ten() -> Vec<f64> {
    (-3..=2).map(|i| 10f64.powi(i)).collect()
}

fn tenths() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSearchSpec {
    pub c_grid: Vec<f64>,
    pub gamma_grid: Vec<f64>,
    pub alpha_grid: Vec<f64>,
    pub beta_grid: Vec<f64>,
    pub inner_folds: usize,
    /// Weight of inner validation accuracy; the rest goes to agreement with
    /// the reference labels on the pool.
    pub validation_weight: f64,
    pub smo: SmoConfig,
}

impl Default for GridSearchSpec {
    fn default() -> Self {
        GridSearchSpec {
            c_grid: powers_of_ten(),
            gamma_grid: powers_of_ten(),
            alpha_grid: vec![1.0],
            beta_grid: vec![1.0],
            inner_folds: 4,
            validation_weight: 0.5,
            smo: SmoConfig {
                max_iterations: Some(20_000),
                ..SmoConfig::default()
            },
        }
    }
}

impl GridSearchSpec {
    /// Default grid; the RWM kernel on data with categorical attributes also
    /// searches its continuous/categorical weights.
    pub fn for_kernel(kind: KernelKind, has_categorical: bool) -> Self {
        if kind == KernelKind::Rwm && has_categorical {
            GridSearchSpec {
                alpha_grid: tenths(),
                beta_grid: tenths(),
                ..Self::default()
            }
        } else {
            Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SvmError> {
        for (g, name) in [
            (&self.c_grid, "C"),
            (&self.gamma_grid, "gamma"),
            (&self.alpha_grid, "alpha"),
            (&self.beta_grid, "beta"),
        ] {
            if g.is_empty() {
                return Err(SvmError::Invalid(format!("empty {name} grid")));
            }
        }
        if self.c_grid.iter().chain(&self.gamma_grid).any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(SvmError::Invalid("C and gamma must be positive".into()));
        }
        if self.inner_folds < 2 {
            return Err(SvmError::Invalid(format!("{} inner folds", self.inner_folds)));
        }
        if !(0.0..=1.0).contains(&self.validation_weight) {
            return Err(SvmError::Invalid(format!("validation weight {}", self.validation_weight)));
        }
        Ok(())
    }

    /// All grid points in search order: C varies slowest, then γ, α, β.
    pub fn points(&self, kind: KernelKind) -> Vec<GridPoint> {
        let mut out = Vec::new();
        for &c in &self.c_grid {
            for &gamma in &self.gamma_grid {
                for &alpha in &self.alpha_grid {
                    for &beta in &self.beta_grid {
                        out.push(GridPoint {
                            c,
                            kernel: KernelSpec { kind, gamma, alpha, beta },
                        });
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub c: f64,
    pub kernel: KernelSpec,
}

/// What the search sees. Ids index `ctx`.
pub struct TuneInput<'a> {
    pub ctx: &'a KernelContext,
    pub labeled: &'a [(SampleId, usize)],
    pub pool: &'a [SampleId],
    /// Reference labels for `pool` (e.g. the mixture classifier's argmax).
    pub reference: Option<&'a [usize]>,
    pub n_classes: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointScore {
    pub point: GridPoint,
    pub validation_accuracy: f64,
    pub agreement: Option<f64>,
    pub score: f64,
    /// Every multiplier of the model fitted on all labeled samples sits at
    /// C. Such a fit scales with C, so its predictions (and score) are
    /// identical across a whole range of C, and its bias is pinned by the
    /// box constraint instead of a margin sample.
    #[serde(default)]
    pub saturated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub best: PointScore,
    /// Every grid point in search order.
    pub scores: Vec<PointScore>,
    pub folds: Vec<Vec<usize>>,
}

/// Splits positions `0..labels.len()` into `k` folds: each class is shuffled
/// and dealt round-robin, continuing where the previous class stopped.
///
/// A class with at least two members must appear in every training split;
/// failing that the deal is repeated once with another seed. Singleton
/// classes are necessarily missing from one training split and are allowed.
pub fn inner_folds(labels: &[usize], k: usize, seed: u64) -> Result<Vec<Vec<usize>>, SvmError> {
    let n = labels.len();
    if n < 2 {
        return Err(SvmError::Invalid(format!("{n} labeled samples, need at least 2")));
    }
    let k = k.min(n);
    let n_classes = labels.iter().max().map_or(0, |&c| c + 1);
    let deal = |seed: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut folds = vec![Vec::new(); k];
        let mut next = 0;
        for c in 0..n_classes {
            let mut members: Vec<usize> = (0..n).filter(|&i| labels[i] == c).collect();
            members.shuffle(&mut rng);
            for i in members {
                folds[next % k].push(i);
                next += 1;
            }
        }
        folds.iter_mut().for_each(|f| f.sort_unstable());
        folds
    };
    let absent = |folds: &[Vec<usize>]| {
        (0..n_classes).find(|&c| {
            let total = labels.iter().filter(|&&l| l == c).count();
            total >= 2 && folds.iter().any(|f| f.iter().filter(|&&i| labels[i] == c).count() == total)
        })
    };
    let folds = deal(seed);
    match absent(&folds) {
        None => Ok(folds),
        Some(_) => {
            let folds = deal(seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
            match absent(&folds) {
                None => Ok(folds),
                Some(class) => Err(SvmError::ClassAbsent { class }),
            }
        }
    }
}

fn accuracy(pred: impl Iterator<Item = (usize, usize)>) -> f64 {
    let (mut hit, mut n) = (0usize, 0usize);
    for (a, b) in pred {
        hit += usize::from(a == b);
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        hit as f64 / n as f64
    }
}

fn is_saturated(m: &SvmModel) -> bool {
    m.machines().iter().all(|b| b.coef.iter().all(|a| a.abs() >= b.c * (1.0 - 1e-9)))
}

/// Exhaustive search over `spec`. Pair distances are computed once; each
/// kernel parameter triple is evaluated in parallel. The highest combined
/// score among unsaturated points wins, the earliest grid point among
/// equals; saturated points compete only when nothing else is left.
pub fn tune_hyperparams(input: &TuneInput, kind: KernelKind, spec: &GridSearchSpec) -> Result<TuneResult, SvmError> {
    spec.validate()?;
    if input.ctx.kind() != kind {
        return Err(SvmError::Invalid(format!("context is {} but tuning {kind}", input.ctx.kind())));
    }
    if let Some(r) = input.reference {
        if r.len() != input.pool.len() {
            return Err(SvmError::Invalid("reference labels do not match the pool".into()));
        }
    }
    let labels: Vec<usize> = input.labeled.iter().map(|&(_, c)| c).collect();
    let folds = inner_folds(&labels, spec.inner_folds, input.seed)?;
    let n = labels.len();
    let ids: Vec<SampleId> = input.labeled.iter().map(|&(id, _)| id).collect();

    let inner: Vec<PairDistance> = (0..n * n).into_par_iter().map(|t| input.ctx.distance(ids[t / n], ids[t % n])).collect();
    let use_pool = input.reference.is_some() && spec.validation_weight < 1.0 && !input.pool.is_empty();
    let cross: Vec<Vec<PairDistance>> = if use_pool {
        input
            .pool
            .par_iter()
            .map(|&u| ids.iter().map(|&l| input.ctx.distance(l, u)).collect())
            .collect()
    } else {
        Vec::new()
    };

    let mut kernels = Vec::new();
    for &gamma in &spec.gamma_grid {
        for &alpha in &spec.alpha_grid {
            for &beta in &spec.beta_grid {
                kernels.push(KernelSpec { kind, gamma, alpha, beta });
            }
        }
    }

    // scores[kernel][c]
    let per_kernel: Vec<Vec<PointScore>> = kernels
        .par_iter()
        .map(|ks| {
            let k_inner: Vec<f64> = inner
                .iter()
                .enumerate()
                .map(|(t, &d)| if t / n == t % n { 1.0 } else { ks.value(d) })
                .collect();
            let fold_grams: Vec<(Vec<usize>, GramMatrix)> = folds
                .iter()
                .map(|val| {
                    let train: Vec<usize> = (0..n).filter(|i| !val.contains(i)).collect();
                    let g = GramMatrix::from_fn(train.clone(), |a, b| k_inner[train[a] * n + train[b]]);
                    (train, g)
                })
                .collect();
            let full = GramMatrix::from_fn((0..n).collect(), |a, b| k_inner[a * n + b]);
            spec.c_grid
                .iter()
                .map(|&c| {
                    let mut fold_acc = Vec::with_capacity(folds.len());
                    for ((train, g), val) in fold_grams.iter().zip(&folds) {
                        let train_labels: Vec<usize> = train.iter().map(|&i| labels[i]).collect();
                        let acc = match train_csvm_lenient(g, &train_labels, input.n_classes, c, &spec.smo) {
                            Ok(m) => accuracy(val.iter().map(|&v| (m.predict(&|s| k_inner[s * n + v]), labels[v]))),
                            Err(_) => 0.0,
                        };
                        fold_acc.push(acc);
                    }
                    let validation_accuracy = fold_acc.iter().sum::<f64>() / fold_acc.len() as f64;
                    let full_model = train_csvm_lenient(&full, &labels, input.n_classes, c, &spec.smo).ok();
                    let saturated = full_model.as_ref().is_some_and(is_saturated);
                    let agreement = if use_pool {
                        let reference = input.reference.expect("checked above");
                        Some(match &full_model {
                            Some(m) => accuracy(
                                cross
                                    .iter()
                                    .zip(reference)
                                    .map(|(col, &r)| (m.predict(&|s| ks.value(col[s])), r)),
                            ),
                            None => 0.0,
                        })
                    } else {
                        None
                    };
                    let score = match agreement {
                        Some(a) => spec.validation_weight * validation_accuracy + (1.0 - spec.validation_weight) * a,
                        None => validation_accuracy,
                    };
                    PointScore {
                        point: GridPoint { c, kernel: *ks },
                        validation_accuracy,
                        agreement,
                        score,
                        saturated,
                    }
                })
                .collect()
        })
        .collect();

    let mut scores = Vec::with_capacity(kernels.len() * spec.c_grid.len());
    for ci in 0..spec.c_grid.len() {
        for row in &per_kernel {
            scores.push(row[ci]);
        }
    }
    let candidates: Vec<&PointScore> = if scores.iter().all(|s| s.saturated) {
        scores.iter().collect()
    } else {
        scores.iter().filter(|s| !s.saturated).collect()
    };
    let mut best = *candidates[0];
    for s in &candidates[1..] {
        if s.score > best.score {
            best = **s;
        }
    }
    Ok(TuneResult { best, scores, folds })
}
