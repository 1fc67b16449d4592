//! Diffusion Maps: kernel construction, Markov normalization, the spectral
//! embedding, and Nyström restriction of new ambient points.

mod residuals;

pub use residuals::{local_linear_residual, nonharmonic_residuals, ResidualReport};

use log::warn;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::linalg;

/// Restriction skips coordinates whose eigenvalue magnitude is below this.
pub const MIN_RESTRICT_EIGVAL: f64 = 1e-8;

/// Default non-harmonic residual threshold.
pub const DEFAULT_RESIDUAL_THRESHOLD: f64 = 0.2;

/// Default local-regression bandwidth as a fraction of the median predictor distance.
pub const DEFAULT_BANDWIDTH_FACTOR: f64 = 1.0 / 3.0;

/// N points in R^d.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmbientDataset {
    points: Array2<f64>,
    columns: Option<Vec<String>>,
}

impl AmbientDataset {
    pub fn new(points: Array2<f64>, columns: Option<Vec<String>>) -> Result<Self> {
        if points.nrows() < 2 {
            return param(format!("dataset needs at least 2 points, got {}", points.nrows()));
        }
        if points.ncols() < 1 {
            return param("dataset needs at least one column");
        }
        if let Some((idx, _)) = points.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return param(format!(
                "non-finite entry at row {}, column {}",
                idx / points.ncols(),
                idx % points.ncols()
            ));
        }
        if let Some(cols) = &columns {
            if cols.len() != points.ncols() {
                return Err(Error::Shape {
                    expected: format!("{} column names", points.ncols()),
                    got: cols.len().to_string(),
                });
            }
        }
        Ok(Self { points, columns })
    }

    pub fn points(&self) -> ArrayView2<'_, f64> {
        self.points.view()
    }

    pub fn columns(&self) -> Option<&[String]> {
        self.columns.as_deref()
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn into_points(self) -> Array2<f64> {
        self.points
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DMapsConfig {
    /// Squared kernel bandwidth.
    pub epsilon: f64,
    /// Density normalization exponent; 1 gives the Laplace–Beltrami operator.
    pub alpha: f64,
    /// Number of nontrivial eigenpairs. The fitted model also keeps the trivial
    /// pair at index 0, so it holds `n_eig + 1` pairs.
    pub n_eig: usize,
}

impl DMapsConfig {
    pub fn new(epsilon: f64) -> Self {
        Self {
            epsilon,
            alpha: 1.0,
            n_eig: 10,
        }
    }

    pub fn validate(&self, n_points: usize) -> Result<()> {
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return param(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return param(format!("alpha must lie in [0, 1], got {}", self.alpha));
        }
        if self.n_eig == 0 || self.n_eig >= n_points {
            return param(format!(
                "n_eig must be in [1, {}), got {}",
                n_points, self.n_eig
            ));
        }
        Ok(())
    }
}

/// Markov normalization of a kernel matrix.
#[derive(Debug, Clone)]
pub struct MarkovMatrix {
    /// Row-stochastic matrix `D^{-1} K~`.
    pub m: Array2<f64>,
    /// Kernel row sums (point densities).
    pub p: Array1<f64>,
    /// Row sums of the density-normalized kernel.
    pub d: Array1<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DMapsModel {
    pub config: DMapsConfig,
    pub train_points: Array2<f64>,
    /// Eigenvalues, descending; index 0 is the trivial eigenvalue 1.
    pub eigvals: Vec<f64>,
    /// Eigenvectors as columns, scaled to unit root-mean-square so the trivial one is all ones.
    pub eigvecs: Array2<f64>,
    pub point_density: Array1<f64>,
    /// Indices of the non-harmonic coordinates, empty until selection has run.
    pub selected: Vec<usize>,
}

/// Gaussian kernel `exp(-|xi - xj|^2 / (2 eps))`.
pub fn build_kernel(points: ArrayView2<f64>, epsilon: f64) -> Result<Array2<f64>> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return param(format!("epsilon must be positive, got {epsilon}"));
    }
    if points.iter().any(|v| !v.is_finite()) {
        return param("points contain non-finite values");
    }
    let mut k = linalg::pairwise_sq_dists(points);
    let scale = -0.5 / epsilon;
    k.mapv_inplace(|d2| (d2 * scale).exp());
    Ok(k)
}

pub fn normalize_markov(k: &Array2<f64>, alpha: f64) -> Result<MarkovMatrix> {
    let n = k.nrows();
    if n != k.ncols() {
        return Err(Error::Shape {
            expected: "square kernel".into(),
            got: format!("{}x{}", n, k.ncols()),
        });
    }
    let p = k.sum_axis(Axis(1));
    if let Some(index) = p.iter().position(|&v| !(v > 0.0)) {
        return Err(Error::DegenerateKernel { index });
    }
    let p_alpha = p.mapv(|v| v.powf(-alpha));
    let mut m = k.clone();
    for ((i, j), v) in m.indexed_iter_mut() {
        *v *= p_alpha[i] * p_alpha[j];
    }
    let d = m.sum_axis(Axis(1));
    if let Some(index) = d.iter().position(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::DegenerateKernel { index });
    }
    for (mut row, &di) in m.axis_iter_mut(Axis(0)).zip(d.iter()) {
        row.mapv_inplace(|v| v / di);
    }
    Ok(MarkovMatrix { m, p, d })
}

/// Eigenpairs of a row-stochastic `M = D^{-1} K~` through its symmetric
/// conjugate `D^{1/2} M D^{-1/2}`. Returns `n_keep` pairs, descending.
pub fn eigendecompose_markov(
    m: &Array2<f64>,
    d: &Array1<f64>,
    n_keep: usize,
) -> Result<(Vec<f64>, Array2<f64>)> {
    let n = m.nrows();
    if d.len() != n || m.ncols() != n {
        return Err(Error::Shape {
            expected: format!("{n}x{n} matrix and {n} degrees"),
            got: format!("{}x{} and {}", m.nrows(), m.ncols(), d.len()),
        });
    }
    let sd = d.mapv(f64::sqrt);
    let mut ms = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let a = sd[i] * m[[i, j]] / sd[j];
            let b = sd[j] * m[[j, i]] / sd[i];
            let v = 0.5 * (a + b);
            ms[[i, j]] = v;
            ms[[j, i]] = v;
        }
    }
    let (vals, v) = linalg::symmetric_eigen(&ms, n_keep)?;
    let mut phi = v;
    for (mut row, &s) in phi.axis_iter_mut(Axis(0)).zip(sd.iter()) {
        row.mapv_inplace(|x| x / s);
    }
    let rms_target = (n as f64).sqrt();
    for mut col in phi.axis_iter_mut(Axis(1)) {
        let norm = col.dot(&col).sqrt();
        if norm > 0.0 {
            col.mapv_inplace(|x| x * rms_target / norm);
        }
    }
    linalg::fix_signs(&mut phi);
    Ok((vals, phi))
}

pub fn fit_dmaps(data: &AmbientDataset, config: DMapsConfig) -> Result<DMapsModel> {
    config.validate(data.len())?;
    let k = build_kernel(data.points(), config.epsilon)?;
    let markov = normalize_markov(&k, config.alpha)?;
    drop(k);
    let (eigvals, eigvecs) = eigendecompose_markov(&markov.m, &markov.d, config.n_eig + 1)?;
    Ok(DMapsModel {
        config,
        train_points: data.points().to_owned(),
        eigvals,
        eigvecs,
        point_density: markov.p,
        selected: Vec::new(),
    })
}

/// Default bandwidth: half the median pairwise squared distance.
pub fn tune_epsilon(points: ArrayView2<f64>) -> Result<f64> {
    if points.nrows() < 2 {
        return param("need at least two points to tune epsilon");
    }
    let d2 = linalg::pairwise_sq_dists(points);
    let med = linalg::upper_triangle_median(&d2);
    if !(med > 0.0) {
        return Err(Error::DegenerateData(
            "median pairwise distance is zero (points are identical)".into(),
        ));
    }
    Ok(med / 2.0)
}

impl DMapsModel {
    pub fn n_points(&self) -> usize {
        self.train_points.nrows()
    }

    /// Runs the local-linear-regression test and stores the selected indices.
    pub fn select_nonharmonic(
        &mut self,
        bandwidth_factor: f64,
        threshold: f64,
    ) -> Result<ResidualReport> {
        let report = nonharmonic_residuals(self, bandwidth_factor, threshold)?;
        self.selected = report.selected.clone();
        Ok(report)
    }

    /// Training-set values of the selected coordinates, N x k.
    pub fn latent_coords(&self) -> Array2<f64> {
        self.eigvecs.select(Axis(1), &self.selected)
    }

    /// Selected coordinates that can be restricted (eigenvalue not near zero).
    pub fn restrictable(&self) -> Vec<usize> {
        self.selected
            .iter()
            .copied()
            .filter(|&b| self.eigvals[b].abs() >= MIN_RESTRICT_EIGVAL)
            .collect()
    }

    /// Nyström weights `A(x_new, x_i)`, a probability vector over the training points.
    pub fn restriction_weights(&self, x_new: ArrayView1<f64>) -> Result<Array1<f64>> {
        if x_new.len() != self.train_points.ncols() {
            return Err(Error::Shape {
                expected: format!("point of dimension {}", self.train_points.ncols()),
                got: x_new.len().to_string(),
            });
        }
        let scale = -0.5 / self.config.epsilon;
        let mut kern: Array1<f64> = self
            .train_points
            .outer_iter()
            .map(|xj| (linalg::sq_dist(x_new, xj) * scale).exp())
            .collect();
        let p_new: f64 = kern.sum();
        if !(p_new >= 1e-300) {
            return Err(Error::OutOfSupport { density: p_new });
        }
        let alpha = self.config.alpha;
        let p_new_a = p_new.powf(alpha);
        for (k, &pj) in kern.iter_mut().zip(self.point_density.iter()) {
            *k /= p_new_a * pj.powf(alpha);
        }
        let total = kern.sum();
        if !(total > 0.0) {
            return Err(Error::OutOfSupport { density: p_new });
        }
        kern.mapv_inplace(|v| v / total);
        Ok(kern)
    }

    /// Restriction onto arbitrary eigen-coordinates. Coordinates whose eigenvalue
    /// is below [`MIN_RESTRICT_EIGVAL`] are an error here.
    pub fn restrict_coords(&self, x_new: ArrayView1<f64>, coords: &[usize]) -> Result<Array1<f64>> {
        for &b in coords {
            if b >= self.eigvals.len() {
                return param(format!("coordinate {b} out of range"));
            }
            if self.eigvals[b].abs() < MIN_RESTRICT_EIGVAL {
                return param(format!(
                    "coordinate {b} has eigenvalue {:e}; cannot restrict",
                    self.eigvals[b]
                ));
            }
        }
        let a = self.restriction_weights(x_new)?;
        Ok(coords
            .iter()
            .map(|&b| a.dot(&self.eigvecs.column(b)) / self.eigvals[b])
            .collect())
    }

    /// Latent coordinates of a new ambient point over [`Self::restrictable`].
    pub fn restrict(&self, x_new: ArrayView1<f64>) -> Result<Array1<f64>> {
        let coords = self.restrictable();
        if coords.len() < self.selected.len() {
            warn!(
                "restriction skips {} selected coordinate(s) with near-zero eigenvalue",
                self.selected.len() - coords.len()
            );
        }
        self.restrict_coords(x_new, &coords)
    }

    pub fn restrict_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let coords = self.restrictable();
        let mut out = Array2::zeros((x.nrows(), coords.len()));
        for (i, row) in x.outer_iter().enumerate() {
            let v = self.restrict_coords(row, &coords)?;
            out.row_mut(i).assign(&v);
        }
        Ok(out)
    }
}
