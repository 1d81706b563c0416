//! Small dense helpers shared by the mixture and kernel code.

use nalgebra::DMatrix;

/// Lower Cholesky factor of `m`, adding `εI` until the factorization
/// succeeds. The first ridge is `1e-6` times the mean diagonal entry (or
/// `1e-6` when that is not positive) and grows tenfold per retry.
///
/// Returns the factor and the ridge that was added (0 when none was needed).
pub(crate) fn regularized_cholesky(m: &DMatrix<f64>) -> Option<(DMatrix<f64>, f64)> {
    let n = m.nrows();
    if n == 0 {
        return Some((DMatrix::zeros(0, 0), 0.0));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return None;
    }
    if let Some(c) = m.clone().cholesky() {
        return Some((c.l(), 0.0));
    }
    let mean_diag = m.diagonal().mean();
    let mut ridge = if mean_diag > 0.0 { 1e-6 * mean_diag } else { 1e-6 };
    for _ in 0..16 {
        let mut shifted = m.clone();
        for i in 0..n {
            shifted[(i, i)] += ridge;
        }
        if let Some(c) = shifted.cholesky() {
            return Some((c.l(), ridge));
        }
        ridge *= 10.0;
    }
    None
}

/// `ln det(L Lᵀ)` from a lower Cholesky factor.
pub(crate) fn log_det_from_factor(l: &DMatrix<f64>) -> f64 {
    2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

/// Solves `L y = v` by forward substitution.
pub(crate) fn forward_solve(l: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    let n = v.len();
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut acc = v[i];
        for (k, yk) in y.iter().enumerate().take(i) {
            acc -= l[(i, k)] * yk;
        }
        y[i] = acc / l[(i, i)];
    }
    y
}

/// `(a−b)ᵀ (L Lᵀ)⁻¹ (a−b)` for a lower factor `L`.
pub(crate) fn quad_form_inv(l: &DMatrix<f64>, a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    forward_solve(l, &diff).iter().map(|v| v * v).sum()
}

/// Inverse of `L Lᵀ`.
pub(crate) fn inverse_from_factor(l: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    let mut inv_l = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        let col = forward_solve(l, &e);
        for i in 0..n {
            inv_l[(i, j)] = col[i];
        }
    }
    let out = inv_l.transpose() * inv_l;
    symmetrize(out)
}

pub(crate) fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    let t = m.transpose();
    (m + t) * 0.5
}

/// `Σ_ij a_ij b_ji`, the trace of `A B`.
pub(crate) fn trace_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            acc += a[(i, j)] * b[(j, i)];
        }
    }
    acc
}

/// Numerically stable `ln Σ exp(v)`; `-inf` for an empty or all-`-inf` input.
pub(crate) fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}
