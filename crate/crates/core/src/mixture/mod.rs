//! Mixture density models over mixed continuous/categorical samples.
//!
//! A component is a multivariate Gaussian over the continuous part times an
//! independent multinomial per categorical attribute. Models are estimated by
//! variational Bayes ([`train_vi`]), scored against a Parzen estimate
//! ([`representativity`]), turned into generative classifiers
//! ([`CmmSha`], [`CmmSep`]) and refined once labels arrive
//! ([`refine_transductive`]).

mod cmm;
mod refine;
mod represent;
mod vi;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dataset::{FeatureLayout, Sample};
use crate::linalg;

pub use cmm::{classify_cmm_sep, classify_cmm_sha, fit_cmm_sep, fit_cmm_sha, CmmSep, CmmSha};
pub use refine::{disputed_components, refine_transductive, RefineConfig};
pub use represent::{parzen_bandwidth, representativity, tune_vi, ParzenWindow, ViGrid};
pub use vi::{single_component, train_vi, train_vi_traced, ViConfig, ViFit};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, thiserror::Error)]
pub enum MixtureError {
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("sample has no usable dimensions")]
    NoDimensions,
    #[error("model has no components")]
    Empty,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid parameter: {0}")]
    Invalid(String),
    #[error("covariance of component {0} could not be factorized")]
    NotPositiveDefinite(usize),
    #[error("labeled set is empty")]
    NoLabels,
    #[error("model document: {0}")]
    Document(String),
}

/// One mixture component: weight, Gaussian over the continuous part and a
/// probability vector per categorical attribute.
#[derive(Debug, Clone)]
pub struct Component {
    weight: f64,
    mean: Vec<f64>,
    covariance: DMatrix<f64>,
    categorical: Vec<Vec<f64>>,
    factor: DMatrix<f64>,
    precision: DMatrix<f64>,
    log_det: f64,
    log_categorical: Vec<Vec<f64>>,
}

impl Component {
    /// Builds a component, symmetrizing the covariance and adding a ridge if
    /// it is not positive definite. Category probabilities are normalized.
    pub fn new(
        weight: f64,
        mean: Vec<f64>,
        covariance: DMatrix<f64>,
        categorical: Vec<Vec<f64>>,
    ) -> Result<Self, MixtureError> {
        let d = mean.len();
        if covariance.nrows() != d || covariance.ncols() != d {
            return Err(MixtureError::Dimension(format!(
                "covariance is {}x{}, mean has {d} entries",
                covariance.nrows(),
                covariance.ncols()
            )));
        }
        if !(weight >= 0.0 && weight.is_finite()) {
            return Err(MixtureError::Invalid(format!("weight {weight}")));
        }
        let mut covariance = linalg::symmetrize(covariance);
        let (factor, ridge) = linalg::regularized_cholesky(&covariance).ok_or(MixtureError::NotPositiveDefinite(0))?;
        if ridge > 0.0 {
            for i in 0..d {
                covariance[(i, i)] += ridge;
            }
        }
        let mut probs = Vec::with_capacity(categorical.len());
        for block in categorical {
            let total: f64 = block.iter().sum();
            if block.iter().any(|p| *p < 0.0 || !p.is_finite()) || !(total > 0.0) {
                return Err(MixtureError::Invalid("category probabilities".into()));
            }
            probs.push(block.iter().map(|p| p / total).collect::<Vec<_>>());
        }
        let log_categorical = probs.iter().map(|b| b.iter().map(|p| p.ln()).collect()).collect();
        Ok(Component {
            weight,
            log_det: linalg::log_det_from_factor(&factor),
            precision: linalg::inverse_from_factor(&factor),
            mean,
            covariance,
            categorical: probs,
            factor,
            log_categorical,
        })
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    /// Lower Cholesky factor of the covariance.
    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    pub fn categorical(&self) -> &[Vec<f64>] {
        &self.categorical
    }

    /// Squared Mahalanobis distance of `x` to the component mean.
    pub fn mahalanobis_sq(&self, x: &[f64]) -> f64 {
        linalg::quad_form_inv(&self.factor, x, &self.mean)
    }

    /// Maps `x` into the whitened space of this component, where Euclidean
    /// distance equals Mahalanobis distance.
    pub fn whiten(&self, x: &[f64]) -> Vec<f64> {
        linalg::forward_solve(&self.factor, x)
    }

    /// `ln p(x | component)` given category codes for the categorical part.
    pub fn log_density(&self, x: &[f64], codes: &[usize]) -> f64 {
        let d = self.mean.len();
        let mut lp = 0.0;
        if d > 0 {
            lp -= 0.5 * (d as f64 * LN_2PI + self.log_det + self.mahalanobis_sq(x));
        }
        for (block, &code) in self.log_categorical.iter().zip(codes) {
            lp += block[code];
        }
        lp
    }
}

/// Finite mixture `p(x) = Σ_j π_j p(x|j)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(into = "MixtureDocument", try_from = "MixtureDocument")]
pub struct MixtureModel {
    layout: FeatureLayout,
    components: Vec<Component>,
}

impl MixtureModel {
    /// Validates dimensions and renormalizes the weights.
    pub fn new(layout: FeatureLayout, mut components: Vec<Component>) -> Result<Self, MixtureError> {
        if components.is_empty() {
            return Err(MixtureError::Empty);
        }
        for (j, c) in components.iter().enumerate() {
            if c.mean.len() != layout.n_continuous {
                return Err(MixtureError::Dimension(format!(
                    "component {j} has {} continuous dims, layout {}",
                    c.mean.len(),
                    layout.n_continuous
                )));
            }
            let sizes: Vec<usize> = c.categorical.iter().map(Vec::len).collect();
            if sizes != layout.categorical {
                return Err(MixtureError::Dimension(format!("component {j} category sizes {sizes:?}")));
            }
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if !(total > 0.0) {
            return Err(MixtureError::Invalid("weights sum to zero".into()));
        }
        for c in &mut components {
            c.weight /= total;
        }
        Ok(MixtureModel { layout, components })
    }

    pub fn layout(&self) -> &FeatureLayout {
        &self.layout
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.weight).collect()
    }

    pub fn into_components(self) -> Vec<Component> {
        self.components
    }

    fn codes(&self, x: &Sample) -> Vec<usize> {
        if self.layout.categorical.is_empty() {
            Vec::new()
        } else {
            self.layout.category_codes(&x.categorical)
        }
    }

    /// `ln p(x|j)` for every component.
    pub fn component_log_densities(&self, x: &Sample) -> Vec<f64> {
        let codes = self.codes(x);
        self.components.iter().map(|c| c.log_density(&x.continuous, &codes)).collect()
    }

    /// `ln π_j + ln p(x|j)` for every component.
    pub fn log_joint(&self, x: &Sample) -> Vec<f64> {
        self.component_log_densities(x)
            .into_iter()
            .zip(&self.components)
            .map(|(lp, c)| c.weight.ln() + lp)
            .collect()
    }

    /// Posterior component probabilities, computed in log space.
    ///
    /// If every joint term is `-inf` or not finite, the result is one-hot on
    /// the component with the largest log joint (ties and fully degenerate
    /// inputs fall back to the largest component density, then index 0).
    pub fn responsibilities(&self, x: &Sample) -> Vec<f64> {
        responsibilities_from_log_joint(&self.log_joint(x), || self.component_log_densities(x))
    }

    pub fn log_density(&self, x: &Sample) -> f64 {
        linalg::log_sum_exp(&self.log_joint(x))
    }

    pub fn density(&self, x: &Sample) -> f64 {
        self.log_density(x).exp()
    }

    pub fn to_json(&self) -> String {
        crate::json::to_string_precise(&MixtureDocument::from(self.clone())).expect("mixture documents always serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, MixtureError> {
        let doc: MixtureDocument = serde_json::from_str(text).map_err(|e| MixtureError::Document(e.to_string()))?;
        MixtureModel::try_from(doc)
    }
}

pub(crate) fn responsibilities_from_log_joint(log_joint: &[f64], fallback: impl FnOnce() -> Vec<f64>) -> Vec<f64> {
    let max = log_joint.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max.is_finite() {
        let mut out: Vec<f64> = log_joint.iter().map(|v| (v - max).exp()).collect();
        let total: f64 = out.iter().sum();
        if total.is_finite() && total > 0.0 {
            out.iter_mut().for_each(|v| *v /= total);
            return out;
        }
    }
    let mut best = argmax(log_joint);
    if !log_joint.get(best).is_some_and(|v| v.is_finite()) {
        best = argmax(&fallback());
    }
    let mut out = vec![0.0; log_joint.len()];
    if let Some(v) = out.get_mut(best) {
        *v = 1.0;
    }
    out
}

/// Index of the largest finite-or-infinite value, ignoring NaN; lowest index
/// wins ties; 0 if nothing compares.
pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (i, &x) in v.iter().enumerate() {
        if x > best_val {
            best = i;
            best_val = x;
        }
    }
    best
}

const FORMAT: &str = "activeseed.mixture";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ComponentDocument {
    weight: f64,
    mean: Vec<f64>,
    covariance: Vec<Vec<f64>>,
    categorical: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct MixtureDocument {
    format: String,
    version: u32,
    layout: FeatureLayout,
    components: Vec<ComponentDocument>,
}

impl From<MixtureModel> for MixtureDocument {
    fn from(m: MixtureModel) -> Self {
        MixtureDocument {
            format: FORMAT.into(),
            version: VERSION,
            layout: m.layout,
            components: m
                .components
                .into_iter()
                .map(|c| ComponentDocument {
                    weight: c.weight,
                    covariance: c.covariance.row_iter().map(|r| r.iter().copied().collect()).collect(),
                    mean: c.mean,
                    categorical: c.categorical,
                })
                .collect(),
        }
    }
}

impl TryFrom<MixtureDocument> for MixtureModel {
    type Error = MixtureError;

    fn try_from(doc: MixtureDocument) -> Result<Self, Self::Error> {
        if doc.format != FORMAT || doc.version != VERSION {
            return Err(MixtureError::Document(format!("unsupported {} v{}", doc.format, doc.version)));
        }
        let components = doc
            .components
            .into_iter()
            .map(|c| {
                let d = c.mean.len();
                if c.covariance.len() != d || c.covariance.iter().any(|r| r.len() != d) {
                    return Err(MixtureError::Document("covariance shape".into()));
                }
                let cov = DMatrix::from_fn(d, d, |i, k| c.covariance[i][k]);
                Component::new(c.weight, c.mean, cov, c.categorical)
            })
            .collect::<Result<Vec<_>, _>>()?;
        // Weights were normalized when written; keep them bit-exact.
        let weights: Vec<f64> = components.iter().map(|c| c.weight).collect();
        let mut model = MixtureModel::new(doc.layout, components)?;
        for (c, w) in model.components.iter_mut().zip(weights) {
            c.weight = w;
        }
        Ok(model)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use proptest::prelude::*;

    use super::*;

    pub(crate) fn diag_component(weight: f64, mean: &[f64], var: &[f64]) -> Component {
        Component::new(
            weight,
            mean.to_vec(),
            DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(var)),
            Vec::new(),
        )
        .unwrap()
    }

    pub(crate) fn model(parts: &[(f64, &[f64], &[f64])]) -> MixtureModel {
        let d = parts[0].1.len();
        MixtureModel::new(
            FeatureLayout::continuous_only(d),
            parts.iter().map(|(w, m, v)| diag_component(*w, m, v)).collect(),
        )
        .unwrap()
    }

    pub(crate) fn pt(x: &[f64]) -> Sample {
        Sample::new(0, x.to_vec(), None)
    }

    fn normal_pdf(x: f64, mu: f64, var: f64) -> f64 {
        (-(x - mu).powi(2) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
    }

    #[test]
    fn single_component_has_unit_responsibility() {
        let m = model(&[(1.0, &[0.0], &[1.0])]);
        assert_eq!(m.responsibilities(&pt(&[3.0])), vec![1.0]);
    }

    #[test]
    fn equidistant_point_splits_evenly() {
        let m = model(&[(0.5, &[-1.0, 0.0], &[1.0, 2.0]), (0.5, &[1.0, 0.0], &[1.0, 2.0])]);
        let r = m.responsibilities(&pt(&[0.0, 0.7]));
        assert!((r[0] - 0.5).abs() < 1e-12 && (r[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn scalar_responsibility_oracle() {
        let m = model(&[(0.7, &[0.0], &[1.0]), (0.3, &[4.0], &[1.0])]);
        let a = 0.7 * normal_pdf(2.0, 0.0, 1.0);
        let b = 0.3 * normal_pdf(2.0, 4.0, 1.0);
        let r = m.responsibilities(&pt(&[2.0]));
        assert!((r[0] - a / (a + b)).abs() < 1e-14);
        assert!((r[1] - b / (a + b)).abs() < 1e-14);
    }

    #[test]
    fn standard_normal_density_at_zero() {
        let m = model(&[(1.0, &[0.0], &[1.0])]);
        assert!((m.density(&pt(&[0.0])) - 0.398_942_280_401_432_7).abs() < 1e-15);
    }

    #[test]
    fn zero_weight_component_changes_nothing() {
        let base = model(&[(0.6, &[0.0], &[1.0]), (0.4, &[2.0], &[0.5])]);
        let extended = model(&[(0.6, &[0.0], &[1.0]), (0.4, &[2.0], &[0.5]), (0.0, &[-3.0], &[2.0])]);
        for x in [-2.0, 0.1, 1.7, 5.0] {
            assert_eq!(base.density(&pt(&[x])), extended.density(&pt(&[x])));
        }
    }

    #[test]
    fn termwise_density_oracle_with_categories() {
        let layout = FeatureLayout {
            n_continuous: 2,
            categorical: vec![3, 2],
        };
        let cov_a = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.5]);
        let cov_b = DMatrix::from_row_slice(2, 2, &[2.0, -0.4, -0.4, 1.0]);
        let m = MixtureModel::new(
            layout.clone(),
            vec![
                Component::new(0.25, vec![0.0, 1.0], cov_a.clone(), vec![vec![0.2, 0.5, 0.3], vec![0.9, 0.1]]).unwrap(),
                Component::new(0.75, vec![1.0, -1.0], cov_b.clone(), vec![vec![0.6, 0.2, 0.2], vec![0.4, 0.6]]).unwrap(),
            ],
        )
        .unwrap();
        let x = Sample {
            id: 0,
            continuous: vec![0.4, -0.2],
            categorical: layout.encode_codes(&[1, 0]),
            label: None,
        };
        let gauss = |mu: [f64; 2], cov: &DMatrix<f64>| {
            let det = cov[(0, 0)] * cov[(1, 1)] - cov[(0, 1)] * cov[(1, 0)];
            let (dx, dy) = (x.continuous[0] - mu[0], x.continuous[1] - mu[1]);
            let q = (cov[(1, 1)] * dx * dx - 2.0 * cov[(0, 1)] * dx * dy + cov[(0, 0)] * dy * dy) / det;
            (-0.5 * q).exp() / (2.0 * std::f64::consts::PI * det.sqrt())
        };
        let expected = 0.25 * gauss([0.0, 1.0], &cov_a) * 0.5 * 0.9 + 0.75 * gauss([1.0, -1.0], &cov_b) * 0.2 * 0.4;
        assert!((m.density(&x) - expected).abs() / expected < 1e-10);
    }

    #[test]
    fn underflow_falls_back_to_one_hot() {
        let m = model(&[(0.5, &[0.0], &[1e-4]), (0.5, &[1.0], &[1e-4])]);
        let r = m.responsibilities(&pt(&[1e6]));
        assert_eq!(r.iter().sum::<f64>(), 1.0);
        assert_eq!(r, vec![0.0, 1.0]);
    }

    #[test]
    fn density_integrates_to_one_in_two_dims() {
        let m = model(&[(0.3, &[0.0, 0.0], &[1.0, 0.5]), (0.7, &[2.0, 1.0], &[0.3, 0.8])]);
        let (lo, hi, steps) = (-7.0, 9.0, 400);
        let h = (hi - lo) / steps as f64;
        let mut total = 0.0;
        for i in 0..steps {
            for j in 0..steps {
                let x = lo + (i as f64 + 0.5) * h;
                let y = lo + (j as f64 + 0.5) * h;
                total += m.density(&pt(&[x, y])) * h * h;
            }
        }
        assert!((total - 1.0).abs() < 0.02, "integral {total}");
    }

    #[test]
    fn json_round_trip_is_exact() {
        let m = model(&[(0.3, &[0.1, -2.0], &[1.0 / 3.0, 0.5]), (0.7, &[2.0, 1.0], &[0.3, 0.8])]);
        let text = m.to_json();
        assert!(text.contains("activeseed.mixture"));
        let back = MixtureModel::from_json(&text).unwrap();
        for (a, b) in m.components().iter().zip(back.components()) {
            assert_eq!(a.weight().to_bits(), b.weight().to_bits());
            assert_eq!(a.covariance(), b.covariance());
            assert_eq!(a.mean(), b.mean());
        }
    }

    proptest! {
        #[test]
        fn responsibilities_normalized_and_shift_invariant(
            x in -20.0f64..20.0,
            y in -20.0f64..20.0,
            shift in -500.0f64..500.0,
        ) {
            let m = model(&[
                (0.2, &[0.0, 0.0], &[1.0, 0.5]),
                (0.5, &[3.0, -1.0], &[0.4, 2.0]),
                (0.3, &[-2.0, 4.0], &[1.5, 1.5]),
            ]);
            let r = m.responsibilities(&pt(&[x, y]));
            prop_assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let shifted: Vec<f64> = m.log_joint(&pt(&[x, y])).iter().map(|v| v + shift).collect();
            let r2 = responsibilities_from_log_joint(&shifted, Vec::new);
            for (a, b) in r.iter().zip(&r2) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }
}
