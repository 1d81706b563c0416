//! Multi-class C-SVM on precomputed kernels.
//!
//! Classes are separated one-vs-one; every pair of classes present in the
//! training labels gets a [`BinaryMachine`] trained by [`smo::solve`].
//! Models never own kernel data. Evaluating a model at a point takes a
//! closure returning `K(support, point)` for a support sample id, so the
//! caller decides whether values come from a cache, a Gram row, or a fresh
//! computation.

pub mod smo;
mod tune;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::SampleId;
use crate::kernels::{GramMatrix, KernelError, KernelSpec};

pub use smo::{SmoConfig, SmoSolution};
pub use tune::{inner_folds, tune_hyperparams, GridPoint, GridSearchSpec, PointScore, TuneInput, TuneResult};

#[derive(Debug, thiserror::Error)]
pub enum SvmError {
    #[error("invalid SVM input: {0}")]
    Invalid(String),
    #[error("no training samples")]
    NoSamples,
    #[error("SMO did not converge (KKT gap {gap:.3e}); the Gram matrix may be indefinite")]
    NotConverged { gap: f64, model: Box<SvmModel> },
    #[error("class {class} is missing from an inner training split")]
    ClassAbsent { class: usize },
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("model document: {0}")]
    Document(String),
}

/// One-vs-one machine separating `positive` (f > 0) from `negative`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryMachine {
    pub positive: usize,
    pub negative: usize,
    /// Samples with non-zero multipliers.
    pub support: Vec<SampleId>,
    /// Signed multipliers `α·y`, aligned with `support`.
    pub coef: Vec<f64>,
    pub bias: f64,
    pub c: f64,
    pub iterations: usize,
    pub kkt_gap: f64,
    pub converged: bool,
}

impl BinaryMachine {
    pub fn decision(&self, kernel: &dyn Fn(SampleId) -> f64) -> f64 {
        self.support.iter().zip(&self.coef).map(|(&s, &a)| a * kernel(s)).sum::<f64>() + self.bias
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "SvmDocument", try_from = "SvmDocument")]
pub struct SvmModel {
    n_classes: usize,
    classes: Vec<usize>,
    machines: Vec<BinaryMachine>,
    kernel: Option<KernelSpec>,
}

/// Per-machine decision values at one point, in machine order.
#[derive(Debug, Clone, PartialEq)]
pub struct Decisions(pub Vec<f64>);

impl SvmModel {
    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    /// Classes that occurred in the training labels, ascending.
    pub fn classes(&self) -> &[usize] {
        &self.classes
    }

    pub fn machines(&self) -> &[BinaryMachine] {
        &self.machines
    }

    pub fn kernel(&self) -> Option<&KernelSpec> {
        self.kernel.as_ref()
    }

    pub fn with_kernel(mut self, spec: KernelSpec) -> Self {
        self.kernel = Some(spec);
        self
    }

    pub fn converged(&self) -> bool {
        self.machines.iter().all(|m| m.converged)
    }

    /// Union of support ids over all machines, ascending.
    pub fn support_ids(&self) -> Vec<SampleId> {
        let mut ids: Vec<SampleId> = self.machines.iter().flat_map(|m| m.support.iter().copied()).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    pub fn decisions(&self, kernel: &dyn Fn(SampleId) -> f64) -> Decisions {
        Decisions(self.machines.iter().map(|m| m.decision(kernel)).collect())
    }

    /// One-vs-one vote. Ties go to the class with the larger summed `|f|`
    /// over the machines it won, then to the smaller class index.
    pub fn predict_from(&self, d: &Decisions) -> usize {
        if self.machines.is_empty() {
            return self.classes.first().copied().unwrap_or(0);
        }
        let mut votes = vec![0usize; self.n_classes];
        let mut strength = vec![0.0f64; self.n_classes];
        for (m, &f) in self.machines.iter().zip(&d.0) {
            let winner = if f > 0.0 { m.positive } else { m.negative };
            votes[winner] += 1;
            strength[winner] += f.abs();
        }
        let mut best = self.classes[0];
        for &c in &self.classes[1..] {
            if votes[c] > votes[best] || (votes[c] == votes[best] && strength[c] > strength[best]) {
                best = c;
            }
        }
        best
    }

    /// Smallest `|f|` over all machines; 0 for a single-class model.
    pub fn distance_from(&self, d: &Decisions) -> f64 {
        d.0.iter().map(|f| f.abs()).fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.min(v)))).unwrap_or(0.0)
    }

    pub fn predict(&self, kernel: &dyn Fn(SampleId) -> f64) -> usize {
        self.predict_from(&self.decisions(kernel))
    }

    pub fn decision_distance(&self, kernel: &dyn Fn(SampleId) -> f64) -> f64 {
        self.distance_from(&self.decisions(kernel))
    }

    pub fn to_json(&self) -> String {
        crate::json::to_string_precise(self).expect("SVM documents always serialize")
    }

    pub fn from_json(s: &str) -> Result<Self, SvmError> {
        serde_json::from_str(s).map_err(|e| SvmError::Document(e.to_string()))
    }
}

const FORMAT: &str = "activeseed.svm";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct SvmDocument {
    format: String,
    version: u32,
    n_classes: usize,
    classes: Vec<usize>,
    kernel: Option<KernelSpec>,
    machines: Vec<BinaryMachine>,
}

impl From<SvmModel> for SvmDocument {
    fn from(m: SvmModel) -> Self {
        SvmDocument {
            format: FORMAT.into(),
            version: VERSION,
            n_classes: m.n_classes,
            classes: m.classes,
            kernel: m.kernel,
            machines: m.machines,
        }
    }
}

impl TryFrom<SvmDocument> for SvmModel {
    type Error = String;

    fn try_from(d: SvmDocument) -> Result<Self, Self::Error> {
        if d.format != FORMAT || d.version != VERSION {
            return Err(format!("unsupported document {} v{}", d.format, d.version));
        }
        let k = d.classes.len();
        if d.machines.len() != k * k.saturating_sub(1) / 2 {
            return Err(format!("{} machines for {k} classes", d.machines.len()));
        }
        if d.classes.iter().any(|&c| c >= d.n_classes) {
            return Err("class index out of range".into());
        }
        if d.machines.iter().any(|m| m.support.len() != m.coef.len()) {
            return Err("support and coefficient lengths differ".into());
        }
        Ok(SvmModel {
            n_classes: d.n_classes,
            classes: d.classes,
            machines: d.machines,
            kernel: d.kernel,
        })
    }
}

/// Trains a one-vs-one C-SVM. `labels[i]` belongs to `gram.ids[i]`.
///
/// Machines for all class pairs are trained; if any of them stops at the
/// iteration limit the complete model is returned inside
/// [`SvmError::NotConverged`].
pub fn train_csvm(gram: &GramMatrix, labels: &[usize], n_classes: usize, c: f64, cfg: &SmoConfig) -> Result<SvmModel, SvmError> {
    if gram.n() == 0 {
        return Err(SvmError::NoSamples);
    }
    if labels.len() != gram.n() {
        return Err(SvmError::Invalid(format!("{} labels for {} Gram rows", labels.len(), gram.n())));
    }
    if !(c > 0.0 && c.is_finite()) {
        return Err(SvmError::Invalid(format!("C = {c}")));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
        return Err(SvmError::Invalid(format!("label {bad} with {n_classes} classes")));
    }
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let pairs: Vec<(usize, usize)> = classes
        .iter()
        .enumerate()
        .flat_map(|(i, &p)| classes[i + 1..].iter().map(move |&q| (p, q)))
        .collect();
    let machines: Vec<BinaryMachine> = pairs
        .par_iter()
        .map(|&(p, q)| {
            let idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == p || labels[i] == q).collect();
            let y: Vec<f64> = idx.iter().map(|&i| if labels[i] == p { 1.0 } else { -1.0 }).collect();
            let sol = smo::solve(&|a, b| gram.get(idx[a], idx[b]), &y, c, cfg);
            let (support, coef) = idx
                .iter()
                .zip(&y)
                .zip(&sol.alpha)
                .filter(|(_, &a)| a > 0.0)
                .map(|((&i, &yi), &a)| (gram.ids[i], a * yi))
                .unzip();
            BinaryMachine {
                positive: p,
                negative: q,
                support,
                coef,
                bias: sol.bias,
                c,
                iterations: sol.iterations,
                kkt_gap: sol.gap,
                converged: sol.converged,
            }
        })
        .collect();
    let model = SvmModel {
        n_classes,
        classes,
        machines,
        kernel: None,
    };
    if model.converged() {
        Ok(model)
    } else {
        let gap = model.machines.iter().map(|m| m.kkt_gap).fold(0.0, f64::max);
        Err(SvmError::NotConverged {
            gap,
            model: Box::new(model),
        })
    }
}

/// Like [`train_csvm`] but keeps a non-converged model.
pub fn train_csvm_lenient(gram: &GramMatrix, labels: &[usize], n_classes: usize, c: f64, cfg: &SmoConfig) -> Result<SvmModel, SvmError> {
    match train_csvm(gram, labels, n_classes, c, cfg) {
        Err(SvmError::NotConverged { model, .. }) => Ok(*model),
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::rbf_kernel;

    fn rbf_gram(points: &[Vec<f64>], gamma: f64) -> GramMatrix {
        GramMatrix::from_fn((0..points.len()).collect(), |i, j| rbf_kernel(gamma, &points[i], &points[j]))
    }

    fn kernel_at<'a>(points: &'a [Vec<f64>], gamma: f64, x: &'a [f64]) -> impl Fn(SampleId) -> f64 + 'a {
        move |s| rbf_kernel(gamma, &points[s], x)
    }

    #[test]
    fn two_points_have_unit_margin() {
        let pts = vec![vec![0.0, 0.0], vec![1.0, 1.0]];
        let m = train_csvm(&rbf_gram(&pts, 1.0), &[0, 1], 2, 100.0, &SmoConfig::default()).unwrap();
        assert_eq!(m.machines().len(), 1);
        assert_eq!(m.machines()[0].support, vec![0, 1]);
        let d0 = m.decisions(&kernel_at(&pts, 1.0, &pts[0]));
        let d1 = m.decisions(&kernel_at(&pts, 1.0, &pts[1]));
        assert!((d0.0[0] - 1.0).abs() < 1e-6);
        assert!((d1.0[0] + 1.0).abs() < 1e-6);
        assert!((m.distance_from(&d0) - 1.0).abs() < 1e-6);
        assert_eq!(m.predict_from(&d0), 0);
        assert_eq!(m.predict_from(&d1), 1);
        // Midpoint lies on the boundary by symmetry.
        let mid = m.decision_distance(&kernel_at(&pts, 1.0, &[0.5, 0.5]));
        assert!(mid < 1e-6);
    }

    #[test]
    fn three_class_distance_is_min_pairwise() {
        let centers = [[0.0, 0.0], [4.0, 0.0], [0.0, 4.0]];
        let mut pts = Vec::new();
        let mut labels = Vec::new();
        for (c, ctr) in centers.iter().enumerate() {
            for k in 0..5 {
                let a = k as f64 * 1.3;
                pts.push(vec![ctr[0] + 0.5 * a.cos(), ctr[1] + 0.5 * a.sin()]);
                labels.push(c);
            }
        }
        let g = rbf_gram(&pts, 0.5);
        let m = train_csvm(&g, &labels, 3, 10.0, &SmoConfig::default()).unwrap();
        assert_eq!(m.machines().len(), 3);
        let x = [1.7, 1.1];
        // Each pair trained independently on its own two classes.
        let mut pairwise = Vec::new();
        for (p, q) in [(0, 1), (0, 2), (1, 2)] {
            let idx: Vec<usize> = (0..pts.len()).filter(|&i| labels[i] == p || labels[i] == q).collect();
            let sub: Vec<Vec<f64>> = idx.iter().map(|&i| pts[i].clone()).collect();
            let sub_labels: Vec<usize> = idx.iter().map(|&i| usize::from(labels[i] == q)).collect();
            let bm = train_csvm(&rbf_gram(&sub, 0.5), &sub_labels, 2, 10.0, &SmoConfig::default()).unwrap();
            pairwise.push(bm.decisions(&kernel_at(&sub, 0.5, &x)).0[0].abs());
        }
        let expected = pairwise.iter().copied().fold(f64::INFINITY, f64::min);
        let got = m.decision_distance(&kernel_at(&pts, 0.5, &x));
        assert!((got - expected).abs() < 1e-6, "{got} vs {expected}");
        for (i, p) in pts.iter().enumerate() {
            assert_eq!(m.predict(&kernel_at(&pts, 0.5, p)), labels[i]);
        }
    }

    #[test]
    fn dual_feasibility_per_machine() {
        let pts: Vec<Vec<f64>> = (0..24).map(|i| vec![(i as f64 * 0.7).sin() * 2.0, (i as f64 * 1.9).cos() * 2.0]).collect();
        let labels: Vec<usize> = (0..24).map(|i| i % 3).collect();
        let m = train_csvm_lenient(&rbf_gram(&pts, 1.0), &labels, 3, 5.0, &SmoConfig::default()).unwrap();
        for bm in m.machines() {
            let s: f64 = bm.coef.iter().sum();
            assert!(s.abs() < 1e-8);
            assert!(bm.coef.iter().all(|a| a.abs() <= bm.c + 1e-12));
        }
    }

    #[test]
    fn scaling_gram_and_c_keeps_signs() {
        let pts = vec![vec![0.0, 0.0], vec![1.0, 0.5]];
        let probes = [[-1.0, 0.0], [0.2, 0.1], [0.9, 0.4], [3.0, 1.0]];
        let base = train_csvm(&rbf_gram(&pts, 1.0), &[0, 1], 2, 100.0, &SmoConfig::default()).unwrap();
        for scale in [0.01, 3.0, 250.0] {
            let mut g = rbf_gram(&pts, 1.0);
            g.values.iter_mut().for_each(|v| *v *= scale);
            let m = train_csvm(&g, &[0, 1], 2, 100.0 * scale, &SmoConfig::default()).unwrap();
            for x in &probes {
                let k = |s: SampleId| scale * rbf_kernel(1.0, &pts[s], x);
                assert_eq!(m.predict(&k), base.predict(&kernel_at(&pts, 1.0, x)));
            }
        }
    }

    #[test]
    fn single_class_model() {
        let pts = vec![vec![0.0], vec![1.0]];
        let m = train_csvm(&rbf_gram(&pts, 1.0), &[2, 2], 3, 1.0, &SmoConfig::default()).unwrap();
        assert!(m.machines().is_empty());
        assert_eq!(m.predict(&|_| 0.0), 2);
        assert_eq!(m.decision_distance(&|_| 0.0), 0.0);
    }

    #[test]
    fn vote_ties_use_strength_then_index() {
        let machine = |p, q| BinaryMachine {
            positive: p,
            negative: q,
            support: vec![],
            coef: vec![],
            bias: 0.0,
            c: 1.0,
            iterations: 0,
            kkt_gap: 0.0,
            converged: true,
        };
        let m = SvmModel {
            n_classes: 3,
            classes: vec![0, 1, 2],
            machines: vec![machine(0, 1), machine(0, 2), machine(1, 2)],
            kernel: None,
        };
        // 0 beats 1, 2 beats 0, 1 beats 2: one vote each.
        assert_eq!(m.predict_from(&Decisions(vec![0.5, -0.2, 0.9])), 1);
        assert_eq!(m.predict_from(&Decisions(vec![0.5, -0.5, 0.5])), 0);
        assert_eq!(m.predict_from(&Decisions(vec![1.0, 1.0, 1.0])), 0);
    }

    #[test]
    fn json_round_trip() {
        let pts = vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![0.3, 2.0]];
        let m = train_csvm(&rbf_gram(&pts, 0.7), &[0, 1, 2], 3, 3.0, &SmoConfig::default())
            .unwrap()
            .with_kernel(KernelSpec::rbf(0.7));
        let s = m.to_json();
        assert!(s.contains("\"activeseed.svm\""));
        assert_eq!(SvmModel::from_json(&s).unwrap(), m);
        let broken = s.replace("\"version\": 1", "\"version\": 9");
        assert!(SvmModel::from_json(&broken).is_err());
    }

    #[test]
    fn rejects_bad_input() {
        let g = rbf_gram(&[vec![0.0]], 1.0);
        assert!(matches!(train_csvm(&g, &[0], 2, 0.0, &SmoConfig::default()), Err(SvmError::Invalid(_))));
        assert!(matches!(train_csvm(&g, &[5], 2, 1.0, &SmoConfig::default()), Err(SvmError::Invalid(_))));
    }
}
