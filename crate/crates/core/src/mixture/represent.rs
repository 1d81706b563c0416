use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{train_vi, MixtureError, MixtureModel, ViConfig};
use crate::dataset::{FeatureLayout, Sample};
use crate::linalg::log_sum_exp;

/// Isotropic Gaussian Parzen window over the continuous part of a sample set.
#[derive(Debug, Clone)]
pub struct ParzenWindow {
    points: Vec<Vec<f64>>,
    bandwidth: f64,
}

/// Silverman's rule of thumb for an isotropic kernel:
/// `h = σ̄ · (4 / ((d+2) n))^(1/(d+4))` with `σ̄` the mean per-dimension
/// standard deviation. Falls back to 1 for degenerate spreads.
pub fn parzen_bandwidth(points: &[Vec<f64>]) -> f64 {
    let n = points.len();
    let d = points.first().map_or(0, Vec::len);
    if n < 2 || d == 0 {
        return 1.0;
    }
    let mut mean_sd = 0.0;
    for j in 0..d {
        let m = points.iter().map(|p| p[j]).sum::<f64>() / n as f64;
        let var = points.iter().map(|p| (p[j] - m).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        mean_sd += var.sqrt();
    }
    mean_sd /= d as f64;
    let h = mean_sd * (4.0 / ((d as f64 + 2.0) * n as f64)).powf(1.0 / (d as f64 + 4.0));
    if h > 0.0 && h.is_finite() {
        h
    } else {
        1.0
    }
}

impl ParzenWindow {
    pub fn new(samples: &[&Sample]) -> Self {
        let points: Vec<Vec<f64>> = samples.iter().map(|s| s.continuous.clone()).collect();
        let bandwidth = parzen_bandwidth(&points);
        ParzenWindow { points, bandwidth }
    }

    pub fn with_bandwidth(samples: &[&Sample], bandwidth: f64) -> Self {
        ParzenWindow {
            points: samples.iter().map(|s| s.continuous.clone()).collect(),
            bandwidth,
        }
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        let d = x.len() as f64;
        let h2 = self.bandwidth * self.bandwidth;
        let norm = -0.5 * d * (2.0 * std::f64::consts::PI * h2).ln() - (self.points.len() as f64).ln();
        let terms: Vec<f64> = self
            .points
            .iter()
            .map(|p| -0.5 * p.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / h2)
            .collect();
        norm + log_sum_exp(&terms)
    }
}

/// Continuous-marginal log density of a mixture.
fn continuous_log_density(m: &MixtureModel, x: &[f64]) -> f64 {
    let terms: Vec<f64> = m.components().iter().map(|c| c.weight().ln() + c.log_density(x, &[])).collect();
    log_sum_exp(&terms)
}

/// Symmetric KL divergence between two densities given by their log values
/// on a common sample set. Both are normalized over the set first.
fn symmetric_kl(log_p: &[f64], log_q: &[f64]) -> f64 {
    let zp = log_sum_exp(log_p);
    let zq = log_sum_exp(log_q);
    log_p
        .iter()
        .zip(log_q)
        .map(|(lp, lq)| {
            let (a, b) = (lp - zp, lq - zq);
            (a.exp() - b.exp()) * (a - b)
        })
        .sum::<f64>()
        .max(0.0)
}

/// Dissimilarity between `m` and a Parzen estimate built from `samples`,
/// both evaluated on `samples` (lower is a better fit). Categorical
/// dimensions are ignored; a model without continuous dimensions scores 0.
pub fn representativity(m: &MixtureModel, samples: &[&Sample]) -> f64 {
    let parzen = ParzenWindow::new(samples);
    let log_q: Vec<f64> = samples.iter().map(|s| parzen.log_density(&s.continuous)).collect();
    representativity_against(m, samples, &log_q)
}

fn representativity_against(m: &MixtureModel, samples: &[&Sample], parzen_log: &[f64]) -> f64 {
    if m.layout().n_continuous == 0 || samples.len() < 2 {
        return 0.0;
    }
    let log_p: Vec<f64> = samples.iter().map(|s| continuous_log_density(m, &s.continuous)).collect();
    symmetric_kl(&log_p, parzen_log)
}

/// Candidate values for the VI hyperparameter search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViGrid {
    pub max_components: Vec<usize>,
    pub covariance_scale: Vec<f64>,
    pub weight_concentration: Vec<f64>,
}

impl Default for ViGrid {
    fn default() -> Self {
        ViGrid {
            max_components: vec![10],
            covariance_scale: vec![0.02, 0.1, 0.5],
            weight_concentration: vec![0.01, 1.0],
        }
    }
}

impl ViGrid {
    pub fn candidates(&self, base: &ViConfig) -> Vec<ViConfig> {
        let mut out = Vec::new();
        for &j in &self.max_components {
            for &s in &self.covariance_scale {
                for &w in &self.weight_concentration {
                    out.push(ViConfig {
                        max_components: j,
                        covariance_scale: s,
                        weight_concentration: w,
                        prune_threshold: None,
                        ..base.clone()
                    });
                }
            }
        }
        out
    }
}

/// Trains one model per grid point and keeps the one with the lowest
/// representativity score (first in grid order on ties).
pub fn tune_vi(
    samples: &[&Sample],
    layout: &FeatureLayout,
    grid: &ViGrid,
    base: &ViConfig,
) -> Result<(ViConfig, MixtureModel, f64), MixtureError> {
    let candidates = grid.candidates(base);
    if candidates.is_empty() {
        return Err(MixtureError::Invalid("empty VI grid".into()));
    }
    let parzen = ParzenWindow::new(samples);
    let parzen_log: Vec<f64> = samples.iter().map(|s| parzen.log_density(&s.continuous)).collect();
    let results: Vec<Result<(MixtureModel, f64), MixtureError>> = candidates
        .par_iter()
        .map(|cfg| {
            let m = train_vi(samples, layout, cfg)?;
            let score = representativity_against(&m, samples, &parzen_log);
            Ok((m, score))
        })
        .collect();
    let mut best: Option<(usize, MixtureModel, f64)> = None;
    for (i, r) in results.into_iter().enumerate() {
        let (m, score) = r?;
        if best.as_ref().is_none_or(|(_, _, s)| score < *s) {
            best = Some((i, m, score));
        }
    }
    let (i, m, score) = best.expect("non-empty grid");
    Ok((candidates[i].clone(), m, score))
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    use super::*;
    use crate::mixture::tests::model;

    fn line(n: usize, seed: u64) -> Vec<Sample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|i| Sample::new(i, vec![rng.sample::<f64, _>(StandardNormal) * 2.0 + 1.0], None)).collect()
    }

    #[test]
    fn good_fit_beats_shifted_model() {
        let pts = line(300, 4);
        let refs: Vec<&Sample> = pts.iter().collect();
        let good = train_vi(&refs, &FeatureLayout::continuous_only(1), &ViConfig::default()).unwrap();
        let mean = good.components()[0].mean()[0];
        let var = good.components()[0].covariance()[(0, 0)];
        let shifted = model(&[(1.0, &[mean + 5.0], &[var])]);
        assert!(representativity(&good, &refs) < representativity(&shifted, &refs));
    }

    #[test]
    fn self_divergence_is_zero_and_symmetric() {
        let pts = line(50, 1);
        let refs: Vec<&Sample> = pts.iter().collect();
        let p = ParzenWindow::new(&refs);
        let lp: Vec<f64> = refs.iter().map(|s| p.log_density(&s.continuous)).collect();
        assert!(symmetric_kl(&lp, &lp).abs() < 1e-15);
        let other = ParzenWindow::with_bandwidth(&refs, p.bandwidth() * 3.0);
        let lq: Vec<f64> = refs.iter().map(|s| other.log_density(&s.continuous)).collect();
        assert!((symmetric_kl(&lp, &lq) - symmetric_kl(&lq, &lp)).abs() < 1e-15);
    }

    #[test]
    fn silverman_bandwidth_one_dimension() {
        let pts: Vec<Vec<f64>> = (0..100).map(|i| vec![i as f64]).collect();
        let sd = (100.0f64 * 101.0 / 12.0).sqrt();
        let expected = sd * (4.0f64 / 300.0).powf(0.2);
        assert!((parzen_bandwidth(&pts) - expected).abs() < 1e-12);
    }

    #[test]
    fn grid_keeps_best_scoring_candidate() {
        let pts = line(120, 8);
        let refs: Vec<&Sample> = pts.iter().collect();
        let grid = ViGrid {
            max_components: vec![1, 5],
            covariance_scale: vec![0.1],
            weight_concentration: vec![0.01],
        };
        let (cfg, m, score) = tune_vi(&refs, &FeatureLayout::continuous_only(1), &grid, &ViConfig::default()).unwrap();
        for c in grid.candidates(&ViConfig::default()) {
            let other = train_vi(&refs, &FeatureLayout::continuous_only(1), &c).unwrap();
            assert!(score <= representativity(&other, &refs) + 1e-15);
        }
        assert_eq!(representativity(&m, &refs), score);
        assert!(grid.max_components.contains(&cfg.max_components));
    }
}
