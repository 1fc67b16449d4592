//! Local-linear-regression test for non-harmonic eigenvectors.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::DMapsModel;
use crate::error::{param, Result};
use crate::linalg;

const RIDGE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    /// `residuals[i]` belongs to eigenvector index `i + 1`.
    pub residuals: Vec<f64>,
    pub threshold: f64,
    pub bandwidth_factor: f64,
    /// Eigenvector indices (into the model's columns) with residual at or above the threshold.
    pub selected: Vec<usize>,
}

/// Normalized leave-one-out residual of a local linear regression of
/// `target` on the rows of `predictors`.
///
/// Gaussian weights use bandwidth `factor * median pairwise distance`. Singular
/// local systems are ridge-regularized with 1e-10.
pub fn local_linear_residual(
    predictors: ArrayView2<f64>,
    target: ArrayView1<f64>,
    factor: f64,
) -> f64 {
    let n = predictors.nrows();
    let p = predictors.ncols();
    assert_eq!(target.len(), n, "target length must match predictor rows");
    let denom: f64 = target.iter().map(|v| v * v).sum();
    if n < 2 || denom == 0.0 {
        return 0.0;
    }

    let pred: Vec<f64> = predictors.iter().copied().collect();
    let row = |i: usize| &pred[i * p..(i + 1) * p];

    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            dists.push(linalg::sq_dist_slice(row(i), row(j)).sqrt());
        }
    }
    let bw = factor * linalg::median(&mut dists);
    drop(dists);
    let inv_bw2 = if bw > 0.0 { 1.0 / (bw * bw) } else { 0.0 };

    let q = p + 1;
    let mut ata = vec![0.0; q * q];
    let mut atb = vec![0.0; q];
    let mut z = vec![0.0; q];
    let mut sse = 0.0;
    for i in 0..n {
        ata.iter_mut().for_each(|v| *v = 0.0);
        atb.iter_mut().for_each(|v| *v = 0.0);
        let xi = row(i);
        for j in 0..n {
            if j == i {
                continue;
            }
            let xj = row(j);
            let w = (-linalg::sq_dist_slice(xi, xj) * inv_bw2).exp();
            if w == 0.0 {
                continue;
            }
            z[0] = 1.0;
            for c in 0..p {
                z[c + 1] = xj[c] - xi[c];
            }
            for a in 0..q {
                let wa = w * z[a];
                atb[a] += wa * target[j];
                for b in 0..=a {
                    ata[a * q + b] += wa * z[b];
                }
            }
        }
        for a in 0..q {
            for b in 0..a {
                ata[b * q + a] = ata[a * q + b];
            }
        }
        let coef = linalg::cholesky_solve(&ata, &atb, q).or_else(|| {
            for a in 0..q {
                ata[a * q + a] += RIDGE;
            }
            linalg::cholesky_solve(&ata, &atb, q)
        });
        let fit = coef.map_or(0.0, |c| c[0]);
        let r = target[i] - fit;
        sse += r * r;
    }
    (sse / denom).sqrt()
}

/// Residual `r_k` for each nontrivial eigenvector `k >= 1` of the model.
pub fn nonharmonic_residuals(
    model: &DMapsModel,
    bandwidth_factor: f64,
    threshold: f64,
) -> Result<ResidualReport> {
    if !(bandwidth_factor > 0.0) {
        return param(format!("bandwidth factor must be positive, got {bandwidth_factor}"));
    }
    let n_cols = model.eigvecs.ncols();
    if n_cols < 4 {
        return param(format!(
            "residual test needs at least 3 nontrivial eigenpairs, got {}",
            n_cols.saturating_sub(1)
        ));
    }
    let residuals = embedding_residuals(model.eigvecs.view(), bandwidth_factor);
    let selected = residuals
        .iter()
        .enumerate()
        .filter(|(_, &r)| r >= threshold)
        .map(|(i, _)| i + 1)
        .collect();
    Ok(ResidualReport {
        residuals,
        threshold,
        bandwidth_factor,
        selected,
    })
}

/// Residuals for columns `1..` of an embedding whose column 0 is the trivial vector.
pub(crate) fn embedding_residuals(eigvecs: ArrayView2<f64>, factor: f64) -> Vec<f64> {
    let n_cols = eigvecs.ncols();
    let mut out = vec![1.0];
    for k in 2..n_cols {
        let idx: Vec<usize> = (1..k).collect();
        let pred: Array2<f64> = eigvecs.select(Axis(1), &idx);
        out.push(local_linear_residual(pred.view(), eigvecs.column(k), factor));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array1, Array2};

    #[test]
    fn harmonic_pair_has_small_residual() {
        let n = 400;
        let phi1 = Array1::from_shape_fn(n, |i| -1.0 + 2.0 * i as f64 / (n - 1) as f64);
        let phi2 = phi1.mapv(|v| v * v - 1.0 / 3.0);
        let pred = phi1.clone().insert_axis(Axis(1));
        let r = local_linear_residual(pred.view(), phi2.view(), 1.0 / 3.0);
        assert!(r < 0.1, "residual {r}");
    }

    #[test]
    fn independent_direction_has_large_residual() {
        // grid on a square: the second coordinate is not a function of the first
        let side = 20;
        let mut emb = Array2::zeros((side * side, 3));
        for a in 0..side {
            for b in 0..side {
                let i = a * side + b;
                emb[[i, 0]] = 1.0;
                emb[[i, 1]] = a as f64 / side as f64 - 0.5;
                emb[[i, 2]] = b as f64 / side as f64 - 0.5;
            }
        }
        let r = embedding_residuals(emb.view(), 1.0 / 3.0);
        assert_eq!(r[0], 1.0);
        assert!(r[1] > 0.9, "residual {}", r[1]);
    }

    #[test]
    fn identical_predictors_fall_back_without_failing() {
        let pred = Array2::<f64>::zeros((10, 1));
        let target = Array1::from_shape_fn(10, |i| i as f64);
        let r = local_linear_residual(pred.view(), target.view(), 0.3);
        assert!(r.is_finite());
    }

    #[test]
    fn linear_target_is_fit_exactly() {
        let n = 50;
        let pred = Array2::from_shape_fn((n, 2), |(i, j)| ((i * (j + 3)) % 17) as f64 / 17.0);
        let target = Array1::from_shape_fn(n, |i| 2.0 * pred[[i, 0]] - pred[[i, 1]] + 0.5);
        let r = local_linear_residual(pred.view(), target.view(), 0.5);
        assert!(r < 1e-8, "residual {r}");
    }
}
