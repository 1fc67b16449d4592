//! Two-sample comparison statistics.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Two-sample Kolmogorov–Smirnov statistic by a merge over the sorted samples.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 1.0;
    }
    let mut xa = a.to_vec();
    let mut xb = b.to_vec();
    xa.sort_by(f64::total_cmp);
    xb.sort_by(f64::total_cmp);
    let (na, nb) = (xa.len() as f64, xb.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d = 0.0f64;
    while i < xa.len() && j < xb.len() {
        let v = if xa[i] <= xb[j] { xa[i] } else { xb[j] };
        while i < xa.len() && xa[i] <= v {
            i += 1;
        }
        while j < xb.len() && xb[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = if x.len() > 1 {
        x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalMetrics {
    pub ks: Vec<f64>,
    /// Absolute differences of the per-coordinate means.
    pub mean_delta: Vec<f64>,
    /// Absolute differences of the per-coordinate variances.
    pub var_delta: Vec<f64>,
}

impl MarginalMetrics {
    pub fn max_ks(&self) -> f64 {
        self.ks.iter().copied().fold(0.0, f64::max)
    }
}

pub fn marginal_metrics(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<MarginalMetrics> {
    if a.nrows() == 0 || b.nrows() == 0 {
        return Err(Error::Parameter("marginal metrics need non-empty samples".into()));
    }
    if a.ncols() != b.ncols() {
        return Err(Error::Shape {
            expected: format!("{} columns", a.ncols()),
            got: b.ncols().to_string(),
        });
    }
    let mut out = MarginalMetrics {
        ks: Vec::new(),
        mean_delta: Vec::new(),
        var_delta: Vec::new(),
    };
    for c in 0..a.ncols() {
        let ca: Vec<f64> = a.column(c).to_vec();
        let cb: Vec<f64> = b.column(c).to_vec();
        out.ks.push(ks_statistic(&ca, &cb));
        let (ma, va) = mean_var(&ca);
        let (mb, vb) = mean_var(&cb);
        out.mean_delta.push((ma - mb).abs());
        out.var_delta.push((va - vb).abs());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;
    use ndarray::{array, Array2};
    use rand::Rng as _;

    #[test]
    fn identical_and_disjoint() {
        let a = [0.3, 0.1, 0.7, 0.7, 0.2];
        assert!(ks_statistic(&a, &a) <= 1.0 / 5.0);
        assert_eq!(ks_statistic(&a, &a), 0.0);
        assert_eq!(ks_statistic(&[0.0, 1.0], &[2.0, 3.0, 4.0]), 1.0);
    }

    #[test]
    fn hand_example() {
        // a = {1, 2, 3}, b = {2.5}: after 2 the gap is 2/3 - 0
        assert!((ks_statistic(&[1.0, 2.0, 3.0], &[2.5]) - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn uniform_null() {
        let mut r1 = rng_from(1);
        let mut r2 = rng_from(2);
        let a: Vec<f64> = (0..5000).map(|_| r1.random::<f64>()).collect();
        let b: Vec<f64> = (0..5000).map(|_| r2.random::<f64>()).collect();
        assert!(ks_statistic(&a, &b) < 0.04);
    }

    #[test]
    fn marginal_shapes() {
        let a = array![[0.0, 1.0], [1.0, 2.0]];
        let m = marginal_metrics(a.view(), a.view()).unwrap();
        assert_eq!(m.ks, vec![0.0, 0.0]);
        assert_eq!(m.mean_delta, vec![0.0, 0.0]);
        assert!(marginal_metrics(a.view(), Array2::zeros((3, 1)).view()).is_err());
    }
}
