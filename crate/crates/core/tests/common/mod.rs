//! Independent reference routines shared by the integration tests.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};

/// Exact minimizer of `½ αᵀQα − Σα` subject to `0 ≤ α ≤ C`, `yᵀα = 0`,
/// with `Q_ij = y_i y_j K_ij`, found by enumerating which variables sit at
/// 0, at C or strictly inside. Each free set gives a linear KKT system.
/// Needs a positive definite `K`; exponential in `n`, so keep `n ≤ 10`.
pub fn brute_force_dual(k: &[Vec<f64>], y: &[f64], c: f64) -> (Vec<f64>, f64) {
    let n = y.len();
    let q = DMatrix::from_fn(n, n, |i, j| y[i] * y[j] * k[i][j]);
    let objective = |a: &[f64]| {
        let v = DVector::from_column_slice(a);
        0.5 * (v.transpose() * &q * &v)[(0, 0)] - a.iter().sum::<f64>()
    };
    let mut best: Option<(Vec<f64>, f64)> = None;
    let total = 3usize.pow(n as u32);
    for code in 0..total {
        // 0 = at zero, 1 = at C, 2 = free.
        let mut state = vec![0u8; n];
        let mut rest = code;
        for s in state.iter_mut() {
            *s = (rest % 3) as u8;
            rest /= 3;
        }
        let free: Vec<usize> = (0..n).filter(|&i| state[i] == 2).collect();
        let mut alpha: Vec<f64> = state.iter().map(|&s| if s == 1 { c } else { 0.0 }).collect();
        if !free.is_empty() {
            let m = free.len();
            let mut a = DMatrix::zeros(m + 1, m + 1);
            let mut b = DVector::zeros(m + 1);
            for (r, &i) in free.iter().enumerate() {
                for (s, &j) in free.iter().enumerate() {
                    a[(r, s)] = q[(i, j)];
                }
                a[(r, m)] = y[i];
                a[(m, r)] = y[i];
                let fixed: f64 = (0..n).filter(|j| state[*j] != 2).map(|j| q[(i, j)] * alpha[j]).sum();
                b[r] = 1.0 - fixed;
            }
            b[m] = -(0..n).filter(|j| state[*j] != 2).map(|j| y[j] * alpha[j]).sum::<f64>();
            let Some(sol) = a.lu().solve(&b) else { continue };
            for (r, &i) in free.iter().enumerate() {
                alpha[i] = sol[r];
            }
            if free.iter().any(|&i| alpha[i] < -1e-9 || alpha[i] > c + 1e-9) {
                continue;
            }
        }
        if y.iter().zip(&alpha).map(|(a, b)| a * b).sum::<f64>().abs() > 1e-8 {
            continue;
        }
        let f = objective(&alpha);
        if best.as_ref().is_none_or(|(_, bf)| f < *bf) {
            best = Some((alpha, f));
        }
    }
    best.expect("the zero vector is always feasible")
}

/// Largest violation of the first-order optimality conditions of the dual:
/// `max_{up} −y∇f − min_{low} −y∇f`.
pub fn max_violation(k: &[Vec<f64>], y: &[f64], alpha: &[f64], c: f64) -> f64 {
    let n = y.len();
    let grad: Vec<f64> = (0..n).map(|i| (0..n).map(|j| y[i] * y[j] * k[i][j] * alpha[j]).sum::<f64>() - 1.0).collect();
    let eps = 1e-12 * c.max(1.0);
    let mut up = f64::NEG_INFINITY;
    let mut low = f64::INFINITY;
    for i in 0..n {
        let v = -y[i] * grad[i];
        let below_c = alpha[i] < c - eps;
        let above_0 = alpha[i] > eps;
        if (y[i] > 0.0 && below_c) || (y[i] < 0.0 && above_0) {
            up = up.max(v);
        }
        if (y[i] > 0.0 && above_0) || (y[i] < 0.0 && below_c) {
            low = low.min(v);
        }
    }
    (up - low).max(0.0)
}
