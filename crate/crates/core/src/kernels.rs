//! RBF and responsibility-weighted Mahalanobis kernels, Gram matrices.
//!
//! Pairwise work is split in two: a [`KernelContext`] turns each sample into
//! whitened per-component coordinates once per mixture model, and yields
//! [`PairDistance`]s (squared continuous distance plus categorical mismatch
//! count). A [`KernelSpec`] maps those to kernel values, so width and
//! weighting parameters can change without recomputing distances.

use std::io::{Read, Write};
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{FeatureLayout, Sample, SampleId};
use crate::mixture::MixtureModel;

#[derive(Debug, thiserror::Error)]
pub enum KernelError {
    #[error("invalid kernel parameter: {0}")]
    Invalid(String),
    #[error("the RWM kernel needs a mixture model")]
    MissingModel,
    #[error("model layout {model:?} does not match data layout {data:?}")]
    Layout { model: FeatureLayout, data: FeatureLayout },
    #[error("gram file: {0}")]
    Io(#[from] std::io::Error),
    #[error("gram file: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Rbf,
    Rwm,
}

impl std::fmt::Display for KernelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            KernelKind::Rbf => "rbf",
            KernelKind::Rwm => "rwm",
        })
    }
}

impl std::str::FromStr for KernelKind {
    type Err = KernelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "rbf" => Ok(KernelKind::Rbf),
            "rwm" => Ok(KernelKind::Rwm),
            other => Err(KernelError::Invalid(format!("unknown kernel '{other}'"))),
        }
    }
}

/// Kernel kind and parameters. `alpha`/`beta` weight the continuous and
/// categorical parts of the RWM kernel; the RBF kernel ignores them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub gamma: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl KernelSpec {
    pub fn rbf(gamma: f64) -> Self {
        KernelSpec {
            kind: KernelKind::Rbf,
            gamma,
            alpha: 1.0,
            beta: 1.0,
        }
    }

    pub fn rwm(gamma: f64) -> Self {
        KernelSpec {
            kind: KernelKind::Rwm,
            ..KernelSpec::rbf(gamma)
        }
    }

    pub fn validate(&self) -> Result<(), KernelError> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(KernelError::Invalid(format!("gamma {}", self.gamma)));
        }
        for (v, name) in [(self.alpha, "alpha"), (self.beta, "beta")] {
            if !(0.0..=1.0).contains(&v) {
                return Err(KernelError::Invalid(format!("{name} {v} outside [0, 1]")));
            }
        }
        Ok(())
    }

    /// Kernel value from precomputed distance parts.
    pub fn value(&self, d: PairDistance) -> f64 {
        let exponent = match self.kind {
            // Squared Euclidean distance over the 1-of-K encoding counts 2
            // per mismatched attribute.
            KernelKind::Rbf => d.continuous_sq + 2.0 * d.mismatches,
            KernelKind::Rwm => self.alpha * d.continuous_sq + self.beta * d.mismatches * d.mismatches,
        };
        (-self.gamma * exponent).exp()
    }
}

pub fn mahalanobis(precision: &DMatrix<f64>, a: &[f64], b: &[f64]) -> f64 {
    let diff = nalgebra::DVector::from_iterator(a.len(), a.iter().zip(b).map(|(x, y)| x - y));
    (diff.transpose() * precision * &diff)[(0, 0)].max(0.0).sqrt()
}

/// Responsibility-weighted sum of per-component Mahalanobis distances over
/// the continuous parts.
pub fn rwm_distance(m: &MixtureModel, a: &Sample, b: &Sample) -> f64 {
    let ra = m.responsibilities(a);
    let rb = m.responsibilities(b);
    m.components()
        .iter()
        .zip(ra.iter().zip(&rb))
        .map(|(c, (pa, pb))| 0.5 * (pa + pb) * mahalanobis(c.precision(), &a.continuous, &b.continuous))
        .sum()
}

pub fn rwm_kernel(m: &MixtureModel, gamma: f64, a: &Sample, b: &Sample) -> f64 {
    (-gamma * rwm_distance(m, a, b).powi(2)).exp()
}

/// Number of categorical attributes whose categories differ.
pub fn mismatch_count(layout: &FeatureLayout, a: &Sample, b: &Sample) -> usize {
    if layout.categorical.is_empty() {
        return 0;
    }
    layout
        .category_codes(&a.categorical)
        .iter()
        .zip(layout.category_codes(&b.categorical))
        .filter(|(x, y)| **x != *y)
        .count()
}

pub fn rwm_kernel_mixed(m: &MixtureModel, gamma: f64, alpha: f64, beta: f64, a: &Sample, b: &Sample) -> f64 {
    let cont = rwm_distance(m, a, b);
    let cat = mismatch_count(m.layout(), a, b) as f64;
    (-gamma * (alpha * cont * cont + beta * cat * cat)).exp()
}

pub fn rbf_kernel(gamma: f64, a: &[f64], b: &[f64]) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-gamma * d2).exp()
}

/// Distance parts of one sample pair.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PairDistance {
    /// Squared Euclidean (RBF) or squared RWM distance of the continuous parts.
    pub continuous_sq: f64,
    pub mismatches: f64,
}

#[derive(Debug, Clone)]
struct Embedded {
    continuous: Vec<f64>,
    codes: Vec<usize>,
    resp: Vec<f64>,
    /// Continuous part whitened by each component's covariance factor.
    whitened: Vec<Vec<f64>>,
}

/// Per-sample precomputation for a kernel kind and (for RWM) a model.
/// Indexed by position in the slice it was built from, which for whole
/// datasets equals the sample id.
#[derive(Debug, Clone)]
pub struct KernelContext {
    kind: KernelKind,
    model: Option<Arc<MixtureModel>>,
    points: Vec<Embedded>,
}

impl KernelContext {
    pub fn new(kind: KernelKind, model: Option<Arc<MixtureModel>>, samples: &[Sample], layout: &FeatureLayout) -> Result<Self, KernelError> {
        if kind == KernelKind::Rwm {
            let m = model.as_ref().ok_or(KernelError::MissingModel)?;
            if m.layout() != layout {
                return Err(KernelError::Layout {
                    model: m.layout().clone(),
                    data: layout.clone(),
                });
            }
        }
        let points = samples
            .par_iter()
            .map(|s| {
                let codes = if layout.categorical.is_empty() { Vec::new() } else { layout.category_codes(&s.categorical) };
                let (resp, whitened) = match (&model, kind) {
                    (Some(m), KernelKind::Rwm) => (
                        m.responsibilities(s),
                        m.components().iter().map(|c| c.whiten(&s.continuous)).collect(),
                    ),
                    _ => (Vec::new(), Vec::new()),
                };
                Embedded {
                    continuous: s.continuous.clone(),
                    codes,
                    resp,
                    whitened,
                }
            })
            .collect();
        Ok(KernelContext {
            kind,
            model: if kind == KernelKind::Rwm { model } else { None },
            points,
        })
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    pub fn model(&self) -> Option<&Arc<MixtureModel>> {
        self.model.as_ref()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn distance(&self, a: usize, b: usize) -> PairDistance {
        let (pa, pb) = (&self.points[a], &self.points[b]);
        let continuous_sq = match self.kind {
            KernelKind::Rbf => pa.continuous.iter().zip(&pb.continuous).map(|(x, y)| (x - y) * (x - y)).sum(),
            KernelKind::Rwm => {
                let mut acc = 0.0;
                for j in 0..pa.resp.len() {
                    let w = 0.5 * (pa.resp[j] + pb.resp[j]);
                    if w > 0.0 {
                        let d2: f64 = pa.whitened[j].iter().zip(&pb.whitened[j]).map(|(x, y)| (x - y) * (x - y)).sum();
                        acc += w * d2.sqrt();
                    }
                }
                acc * acc
            }
        };
        let mismatches = pa.codes.iter().zip(&pb.codes).filter(|(x, y)| x != y).count() as f64;
        PairDistance {
            continuous_sq,
            mismatches,
        }
    }

    /// Distances from `a` to every point.
    pub fn column(&self, a: usize) -> Vec<PairDistance> {
        (0..self.points.len()).map(|b| self.distance(a, b)).collect()
    }
}

/// Dense symmetric kernel matrix over `ids`.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    pub ids: Vec<SampleId>,
    /// Row-major `n × n` values.
    pub values: Vec<f64>,
}

impl GramMatrix {
    pub fn n(&self) -> usize {
        self.ids.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.ids.len() + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.ids.len();
        &self.values[i * n..(i + 1) * n]
    }

    /// Builds the matrix from a pair function, evaluating the upper triangle
    /// once and mirroring it.
    pub fn from_fn(ids: Vec<SampleId>, f: impl Fn(usize, usize) -> f64 + Sync) -> Self {
        let n = ids.len();
        let upper: Vec<Vec<f64>> = (0..n).into_par_iter().map(|i| (i..n).map(|j| f(i, j)).collect()).collect();
        let mut values = vec![0.0; n * n];
        for (i, row) in upper.iter().enumerate() {
            for (off, &v) in row.iter().enumerate() {
                let j = i + off;
                values[i * n + j] = v;
                values[j * n + i] = v;
            }
        }
        GramMatrix { ids, values }
    }

    /// Replaces negative eigenvalues by zero. Symmetry is restored by
    /// mirroring the upper triangle afterwards.
    pub fn clip_spectrum(&mut self) {
        let n = self.n();
        let m = DMatrix::from_row_slice(n, n, &self.values);
        let eig = SymmetricEigen::new(m);
        let clipped = eig.eigenvalues.map(|v| v.max(0.0));
        let rebuilt = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
        for i in 0..n {
            for j in i..n {
                let v = rebuilt[(i, j)];
                self.values[i * n + j] = v;
                self.values[j * n + i] = v;
            }
        }
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let n = self.n();
        if n == 0 {
            return 0.0;
        }
        let eig = SymmetricEigen::new(DMatrix::from_row_slice(n, n, &self.values));
        eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Gram matrix of `spec` over the given positions of `ctx`.
pub fn gram(spec: &KernelSpec, ctx: &KernelContext, ids: &[SampleId]) -> GramMatrix {
    GramMatrix::from_fn(ids.to_vec(), |i, j| if i == j { 1.0 } else { spec.value(ctx.distance(ids[i], ids[j])) })
}

const GRAM_MAGIC: &[u8; 8] = b"ASGRAM01";

/// Writes a 16-byte header (magic, `n` as little-endian u64) followed by the
/// row-major little-endian values.
pub fn write_gram(g: &GramMatrix, mut w: impl Write) -> Result<(), KernelError> {
    w.write_all(GRAM_MAGIC)?;
    w.write_all(&(g.n() as u64).to_le_bytes())?;
    for v in &g.values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Reads a matrix written by [`write_gram`]; ids are `0..n`.
pub fn read_gram(mut r: impl Read) -> Result<GramMatrix, KernelError> {
    let mut header = [0u8; 16];
    r.read_exact(&mut header)?;
    if &header[..8] != GRAM_MAGIC {
        return Err(KernelError::Format("bad magic".into()));
    }
    let n = u64::from_le_bytes(header[8..].try_into().expect("8 bytes")) as usize;
    let mut raw = Vec::new();
    r.read_to_end(&mut raw)?;
    if raw.len() != n * n * 8 {
        return Err(KernelError::Format(format!("expected {} bytes of values, found {}", n * n * 8, raw.len())));
    }
    let values = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    Ok(GramMatrix {
        ids: (0..n).collect(),
        values,
    })
}
