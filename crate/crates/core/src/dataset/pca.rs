use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::{Attribute, AttributeKind, Dataset, DatasetError, Sample, Schema};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PcaProjection {
    pub mean: Vec<f64>,
    /// `D × target`, columns are unit-length principal axes.
    pub components: DMatrix<f64>,
    /// All covariance eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
    pub retained: f64,
}

impl PcaProjection {
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        let centered = DVector::from_iterator(x.len(), x.iter().zip(&self.mean).map(|(v, m)| v - m));
        (self.components.transpose() * centered).iter().copied().collect()
    }
}

/// Projects a fully continuous dataset onto its leading principal axes.
///
/// Axes come from the eigendecomposition of the sample covariance, sorted
/// by eigenvalue; each axis is flipped so its largest-magnitude loading is
/// positive.
pub fn pca_project(d: &Dataset, target: usize) -> Result<(Dataset, PcaProjection), DatasetError> {
    let layout = d.layout();
    if target == 0 {
        return Err(DatasetError::Pca("target dimension must be positive".into()));
    }
    if layout.n_categorical() > 0 {
        return Err(DatasetError::Pca("dataset has categorical attributes".into()));
    }
    let dims = layout.n_continuous;
    if target > dims {
        return Err(DatasetError::Pca(format!("target {target} exceeds {dims} dimensions")));
    }
    let n = d.len();
    if n < 2 {
        return Err(DatasetError::Pca("need at least two samples".into()));
    }

    let mut mean = vec![0.0; dims];
    for s in &d.samples {
        for (m, v) in mean.iter_mut().zip(&s.continuous) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered = DMatrix::from_fn(n, dims, |i, j| d.samples[i].continuous[j] - mean[j]);
    let cov = (centered.transpose() * &centered) / (n as f64 - 1.0);

    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..dims).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();

    let mut components = DMatrix::zeros(dims, target);
    for (col, &src) in order.iter().take(target).enumerate() {
        let mut axis = eig.eigenvectors.column(src).into_owned();
        let pivot = axis.iter().copied().fold(0.0f64, |best, v| if v.abs() > best.abs() { v } else { best });
        if pivot < 0.0 {
            axis.neg_mut();
        }
        components.set_column(col, &axis);
    }

    let total: f64 = eigenvalues.iter().sum();
    let kept: f64 = eigenvalues.iter().take(target).sum();
    let retained = if total > 0.0 { kept / total } else { 1.0 };

    let projection = PcaProjection {
        mean,
        components,
        eigenvalues,
        retained,
    };
    let samples = d
        .samples
        .iter()
        .map(|s| Sample {
            id: s.id,
            continuous: projection.project(&s.continuous),
            categorical: Vec::new(),
            label: s.label,
        })
        .collect();
    let schema = Schema {
        attributes: (1..=target)
            .map(|i| Attribute {
                name: format!("pc{i}"),
                kind: AttributeKind::Continuous,
            })
            .collect(),
        label: d.schema.label.clone(),
    };
    let mut provenance = d.provenance.clone();
    provenance.pca_retained = Some(retained);
    Ok((
        Dataset {
            schema,
            samples,
            provenance,
        },
        projection,
    ))
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    use super::*;

    fn dataset(points: Vec<Vec<f64>>) -> Dataset {
        let dims = points[0].len();
        let names: Vec<String> = (0..dims).map(|i| format!("x{i}")).collect();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let samples = points
            .into_iter()
            .enumerate()
            .map(|(i, p)| Sample::new(i, p, Some(0)))
            .collect();
        Dataset::from_samples("p", Schema::continuous(&refs, "y", &["a"]), samples).unwrap()
    }

    fn random_points(n: usize, dims: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| (0..dims).map(|j| rng.sample::<f64, _>(StandardNormal) * (j + 1) as f64).collect())
            .collect()
    }

    #[test]
    fn full_basis_keeps_everything() {
        let d = dataset(random_points(60, 4, 1));
        let (_, p) = pca_project(&d, 4).unwrap();
        assert!((p.retained - 1.0).abs() < 1e-9);
    }

    #[test]
    fn diagonal_line_is_one_dimensional() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts = (0..300)
            .map(|_| {
                let t: f64 = rng.sample(StandardNormal);
                let e: f64 = rng.sample::<f64, _>(StandardNormal) * 0.01;
                vec![t + e, t - e]
            })
            .collect();
        let (proj, p) = pca_project(&dataset(pts), 1).unwrap();
        assert!(p.retained > 0.99, "retained {}", p.retained);
        assert_eq!(proj.layout().n_continuous, 1);
        let axis = p.components.column(0);
        assert!((axis[0] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-3);
        assert!(axis[1] > 0.0);
    }

    #[test]
    fn components_are_orthonormal() {
        let d = dataset(random_points(100, 6, 2));
        let (_, p) = pca_project(&d, 4).unwrap();
        let gram = p.components.transpose() * &p.components;
        let eye = DMatrix::<f64>::identity(4, 4);
        assert!((gram - eye).abs().max() < 1e-9);
    }

    #[test]
    fn rejects_zero_and_oversized_targets() {
        let d = dataset(random_points(10, 3, 3));
        assert!(pca_project(&d, 0).is_err());
        assert!(pca_project(&d, 4).is_err());
    }
}
