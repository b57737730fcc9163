//! Closed-form ridge and Gaussian kernel ridge regressors.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::stats;

fn solve_spd(a: DMatrix<f64>, b: DVector<f64>) -> Result<DVector<f64>> {
    if let Some(ch) = a.clone().cholesky() {
        return Ok(ch.solve(&b));
    }
    a.svd(true, true)
        .solve(&b, 1e-14)
        .map_err(|e| Error::Consistency(format!("linear solve failed: {e}")))
}

/// Ridge regression with an unpenalized intercept. Returns
/// `(weights, intercept)`.
pub fn fit_ridge(xs: &[Vec<f64>], ys: &[f64], lambda: f64) -> Result<(Vec<f64>, f64)> {
    let n = xs.len();
    let p = xs.first().map_or(0, Vec::len);
    let x_mean: Vec<f64> = (0..p).map(|j| xs.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let y_mean = stats::mean(ys);
    let xc = DMatrix::from_fn(n, p, |i, j| xs[i][j] - x_mean[j]);
    let yc = DVector::from_iterator(n, ys.iter().map(|y| y - y_mean));
    let mut gram = xc.transpose() * &xc;
    for j in 0..p {
        gram[(j, j)] += lambda;
    }
    let beta = solve_spd(gram, xc.transpose() * yc)?;
    let weights: Vec<f64> = beta.iter().copied().collect();
    let intercept = y_mean - weights.iter().zip(&x_mean).map(|(w, m)| w * m).sum::<f64>();
    Ok((weights, intercept))
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Median pairwise Euclidean distance; 1 when all points coincide.
pub fn median_bandwidth(xs: &[Vec<f64>]) -> f64 {
    let mut d = Vec::with_capacity(xs.len() * xs.len().saturating_sub(1) / 2);
    for i in 0..xs.len() {
        for j in i + 1..xs.len() {
            d.push(squared_distance(&xs[i], &xs[j]).sqrt());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    let m = stats::median(&d);
    if m > 0.0 {
        m
    } else {
        1.0
    }
}

pub fn gaussian(a: &[f64], b: &[f64], bandwidth: f64) -> f64 {
    (-squared_distance(a, b) / (2.0 * bandwidth * bandwidth)).exp()
}

/// Kernel ridge dual coefficients `(K + λI)⁻¹ y`.
pub fn fit_kernel_ridge(xs: &[Vec<f64>], ys: &[f64], bandwidth: f64, lambda: f64) -> Result<Vec<f64>> {
    let n = xs.len();
    let mut k = DMatrix::from_fn(n, n, |i, j| gaussian(&xs[i], &xs[j], bandwidth));
    for i in 0..n {
        k[(i, i)] += lambda;
    }
    let alpha = solve_spd(k, DVector::from_column_slice(ys))?;
    Ok(alpha.iter().copied().collect())
}
