//! S-curve benchmark surface and a brute-force distance oracle for it.

use std::f64::consts::FRAC_PI_2;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{param, Result};
use crate::rng::rng_from;

pub const DEFAULT_T_RANGE: (f64, f64) = (-3.0, 3.0);
pub const DEFAULT_GRID: usize = 20_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SCurve {
    /// Rows `(x, y, z)`.
    pub points: Array2<f64>,
    /// Generating parameter of each row.
    pub t: Array1<f64>,
}

#[inline]
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Backbone `(sin(pi t / 2), sign(t) (1 - cos(pi t / 2)))` in the x-z plane.
pub fn backbone(t: f64) -> (f64, f64) {
    let a = FRAC_PI_2 * t;
    (a.sin(), sign(t) * (1.0 - a.cos()))
}

pub fn s_curve_point(t: f64, h: f64) -> [f64; 3] {
    let (x, z) = backbone(t);
    [x, h, z]
}

fn check_range(t_range: (f64, f64)) -> Result<()> {
    if !(t_range.0 < t_range.1) || !t_range.0.is_finite() || !t_range.1.is_finite() {
        return param(format!("empty t range [{}, {}]", t_range.0, t_range.1));
    }
    Ok(())
}

/// `n` points with `t` uniform on `t_range` and `h` uniform on `[-1, 1]`.
pub fn gen_s_curve(n: usize, t_range: (f64, f64), seed: u64) -> Result<SCurve> {
    check_range(t_range)?;
    if n == 0 {
        return param("need at least one point");
    }
    let mut rng = rng_from(seed);
    let mut points = Array2::zeros((n, 3));
    let mut ts = Array1::zeros(n);
    for i in 0..n {
        let t = rng.random_range(t_range.0..t_range.1);
        let h = rng.random_range(-1.0..1.0);
        let p = s_curve_point(t, h);
        points.row_mut(i).assign(&ArrayView1::from(&p));
        ts[i] = t;
    }
    Ok(SCurve { points, t: ts })
}

/// Distance to the surface by a dense grid over `t`.
#[derive(Debug, Clone)]
pub struct SManifold {
    grid: Vec<(f64, f64)>,
}

impl SManifold {
    pub fn new(t_range: (f64, f64), n_grid: usize) -> Result<Self> {
        check_range(t_range)?;
        if n_grid < 2 {
            return param("grid needs at least two nodes");
        }
        let grid = (0..n_grid)
            .map(|i| {
                let t = t_range.0 + (t_range.1 - t_range.0) * i as f64 / (n_grid - 1) as f64;
                backbone(t)
            })
            .collect();
        Ok(Self { grid })
    }

    pub fn distance(&self, p: ArrayView1<f64>) -> f64 {
        let (x, y, z) = (p[0], p[1], p[2]);
        let d2 = self
            .grid
            .iter()
            .map(|&(bx, bz)| (x - bx) * (x - bx) + (z - bz) * (z - bz))
            .fold(f64::INFINITY, f64::min);
        let ex = (y.abs() - 1.0).max(0.0);
        (d2 + ex * ex).sqrt()
    }

    pub fn distances(&self, pts: ArrayView2<f64>) -> Vec<f64> {
        pts.outer_iter().map(|p| self.distance(p)).collect()
    }
}

pub fn distance_to_s_manifold(x: ArrayView1<f64>, t_range: (f64, f64)) -> Result<f64> {
    Ok(SManifold::new(t_range, DEFAULT_GRID)?.distance(x))
}
