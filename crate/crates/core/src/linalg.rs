//! Dense linear-algebra helpers shared by the kernel methods.

use faer::{Mat, Side};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Squared Euclidean distances between the rows of `a` and the rows of `b`.
pub fn sq_dists(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
    assert_eq!(a.ncols(), b.ncols(), "row dimension mismatch");
    let mut out = Array2::zeros((a.nrows(), b.nrows()));
    for (i, ra) in a.outer_iter().enumerate() {
        let mut row = out.row_mut(i);
        for (j, rb) in b.outer_iter().enumerate() {
            row[j] = sq_dist(ra, rb);
        }
    }
    out
}

/// Pairwise squared distances of a point set, symmetric with an exact zero diagonal.
pub fn pairwise_sq_dists(a: ArrayView2<f64>) -> Array2<f64> {
    let n = a.nrows();
    let mut out = Array2::zeros((n, n));
    for i in 0..n {
        let ri = a.row(i);
        for j in (i + 1)..n {
            let d = sq_dist(ri, a.row(j));
            out[[i, j]] = d;
            out[[j, i]] = d;
        }
    }
    out
}

#[inline]
pub fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[inline]
pub fn sq_dist_slice(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Median of the strict upper triangle of a symmetric matrix.
pub fn upper_triangle_median(m: &Array2<f64>) -> f64 {
    let n = m.nrows();
    let mut vals = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            vals.push(m[[i, j]]);
        }
    }
    median(&mut vals)
}

/// Median (mean of the two middle values for even lengths). Panics on empty input.
pub fn median(vals: &mut [f64]) -> f64 {
    assert!(!vals.is_empty(), "median of empty slice");
    vals.sort_by(|a, b| a.total_cmp(b));
    let n = vals.len();
    if n % 2 == 1 {
        vals[n / 2]
    } else {
        0.5 * (vals[n / 2 - 1] + vals[n / 2])
    }
}

pub fn logsumexp(vals: &[f64]) -> f64 {
    let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + vals.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Eigendecomposition of a symmetric matrix, eigenpairs sorted by descending eigenvalue.
///
/// Only the lower triangle is read. Returns at most `n_keep` pairs.
pub fn symmetric_eigen(m: &Array2<f64>, n_keep: usize) -> Result<(Vec<f64>, Array2<f64>)> {
    let n = m.nrows();
    if n != m.ncols() {
        return Err(Error::Shape {
            expected: "square matrix".into(),
            got: format!("{}x{}", n, m.ncols()),
        });
    }
    let mat = Mat::<f64>::from_fn(n, n, |i, j| m[[i, j]]);
    let evd = mat
        .self_adjoint_eigen(Side::Lower)
        .map_err(|_| Error::EigenNoConvergence { size: n })?;
    let s = evd.S();
    let u = evd.U();
    let keep = n_keep.min(n);
    let mut vals = Vec::with_capacity(keep);
    let mut vecs = Array2::zeros((n, keep));
    // faer returns ascending order
    for c in 0..keep {
        let src = n - 1 - c;
        vals.push(s[src]);
        for r in 0..n {
            vecs[[r, c]] = u[(r, src)];
        }
    }
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(Error::EigenNoConvergence { size: n });
    }
    Ok((vals, vecs))
}

/// Flips each column so its largest-magnitude entry is positive.
pub fn fix_signs(vecs: &mut Array2<f64>) {
    for mut col in vecs.axis_iter_mut(Axis(1)) {
        let mut best = 0.0f64;
        for &v in col.iter() {
            if v.abs() > best.abs() {
                best = v;
            }
        }
        if best < 0.0 {
            col.mapv_inplace(|v| -v);
        }
    }
}

/// Solves the small symmetric positive definite system `a x = b` by Cholesky.
/// Returns `None` when a pivot is not strictly positive.
pub fn cholesky_solve(a: &[f64], b: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if !(s > 0.0) || !s.is_finite() {
                    return None;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * y[k];
        }
        y[i] = s / l[i * n + i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in (i + 1)..n {
            s -= l[k * n + i] * x[k];
        }
        x[i] = s / l[i * n + i];
    }
    Some(x)
}

/// Inverse of a symmetric positive definite matrix, `None` if not SPD.
pub fn spd_inverse(a: &Array2<f64>) -> Option<Array2<f64>> {
    let n = a.nrows();
    let flat: Vec<f64> = a.iter().copied().collect();
    let mut inv = Array2::zeros((n, n));
    for c in 0..n {
        let mut e = vec![0.0; n];
        e[c] = 1.0;
        let x = cholesky_solve(&flat, &e, n)?;
        for r in 0..n {
            inv[[r, c]] = x[r];
        }
    }
    Some(inv)
}

/// Column means of a matrix with rows as samples.
pub fn column_means(a: ArrayView2<f64>) -> Array1<f64> {
    a.mean_axis(Axis(0)).expect("non-empty matrix")
}

pub fn max_pairwise_distance(a: ArrayView2<f64>) -> f64 {
    let mut best = 0.0f64;
    for i in 0..a.nrows() {
        for j in (i + 1)..a.nrows() {
            best = best.max(sq_dist(a.row(i), a.row(j)));
        }
    }
    best.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn eigen_of_diagonal_is_sorted_descending() {
        let m = array![[1.0, 0.0, 0.0], [0.0, 3.0, 0.0], [0.0, 0.0, 2.0]];
        let (vals, vecs) = symmetric_eigen(&m, 3).unwrap();
        assert_eq!(vals, vec![3.0, 2.0, 1.0]);
        assert!((vecs[[1, 0]].abs() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn cholesky_solves_spd_and_rejects_singular() {
        let a = [4.0, 2.0, 2.0, 3.0];
        let x = cholesky_solve(&a, &[2.0, 1.0], 2).unwrap();
        assert!((4.0 * x[0] + 2.0 * x[1] - 2.0).abs() < 1e-14);
        assert!((2.0 * x[0] + 3.0 * x[1] - 1.0).abs() < 1e-14);
        assert!(cholesky_solve(&[1.0, 1.0, 1.0, 1.0], &[1.0, 1.0], 2).is_none());
    }

    #[test]
    fn logsumexp_is_stable() {
        let v = [-1000.0, -1000.0];
        assert!((logsumexp(&v) - (-1000.0 + 2f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
