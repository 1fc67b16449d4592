//! Latent Harmonics: a Geometric-Harmonics basis on the latent coordinates,
//! used to lift latent samples back to the ambient space.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::linalg;

const LIFT_CHUNK: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GHConfig {
    /// Squared kernel bandwidth. `None` uses `epsilon2_factor` times the median heuristic.
    pub epsilon2: Option<f64>,
    pub epsilon2_factor: f64,
    pub cutoff_delta: f64,
}

impl Default for GHConfig {
    fn default() -> Self {
        Self {
            epsilon2: None,
            epsilon2_factor: 1.0,
            cutoff_delta: 1e-8,
        }
    }
}

impl GHConfig {
    pub fn resolve_epsilon(&self, latent: ArrayView2<f64>) -> Result<f64> {
        match self.epsilon2 {
            Some(e) => Ok(e),
            None => {
                if !(self.epsilon2_factor > 0.0) {
                    return param(format!(
                        "epsilon2_factor must be positive, got {}",
                        self.epsilon2_factor
                    ));
                }
                Ok(self.epsilon2_factor * crate::dmaps::tune_epsilon(latent)?)
            }
        }
    }
}

/// Fitted Latent-Harmonics model.
///
/// The basis eigenvectors are not serialized; extension only needs the
/// precomputed weights `W = Psi diag(1/sigma) C`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GHModel {
    pub epsilon2: f64,
    pub cutoff_delta: f64,
    pub basis_eigvals: Vec<f64>,
    #[serde(skip)]
    pub basis_eigvecs: Option<Array2<f64>>,
    pub train_latent: Array2<f64>,
    /// Entry `(j, c)` is the projection of ambient coordinate `c` on basis vector `j`.
    pub proj_coeffs: Array2<f64>,
    pub extension_weights: Array2<f64>,
}

fn latent_kernel(a: ArrayView2<f64>, b: ArrayView2<f64>, epsilon2: f64) -> Array2<f64> {
    let mut k = linalg::sq_dists(a, b);
    let scale = -0.5 / epsilon2;
    k.mapv_inplace(|d| (d * scale).exp());
    k
}

pub fn fit_latent_harmonics(
    latent: ArrayView2<f64>,
    targets: ArrayView2<f64>,
    epsilon2: f64,
    cutoff_delta: f64,
) -> Result<GHModel> {
    let n = latent.nrows();
    if latent.ncols() == 0 || n == 0 {
        return param("latent coordinates must be non-empty");
    }
    if targets.nrows() != n {
        return Err(Error::Shape {
            expected: format!("{n} target rows"),
            got: targets.nrows().to_string(),
        });
    }
    if !(epsilon2 > 0.0) || !epsilon2.is_finite() {
        return param(format!("epsilon2 must be positive, got {epsilon2}"));
    }
    if !(cutoff_delta > 0.0 && cutoff_delta < 1.0) {
        return param(format!("cutoff_delta must lie in (0, 1), got {cutoff_delta}"));
    }
    if latent.iter().chain(targets.iter()).any(|v| !v.is_finite()) {
        return param("latent coordinates and targets must be finite");
    }
    let k = latent_kernel(latent, latent, epsilon2);
    let (vals, vecs) = linalg::symmetric_eigen(&k, n)?;
    drop(k);
    let sigma0 = vals[0];
    let keep = vals.iter().take_while(|&&s| s >= cutoff_delta * sigma0 && s > 0.0).count();
    if keep == 0 {
        return Err(Error::Config(
            "no Latent-Harmonics eigenpair survives the cutoff".into(),
        ));
    }
    let basis_eigvals = vals[..keep].to_vec();
    let psi = vecs.slice(s![.., ..keep]).to_owned();
    let proj_coeffs = psi.t().dot(&targets);
    let mut scaled = proj_coeffs.clone();
    for (mut row, &sigma) in scaled.axis_iter_mut(Axis(0)).zip(basis_eigvals.iter()) {
        row.mapv_inplace(|v| v / sigma);
    }
    let extension_weights = psi.dot(&scaled);
    Ok(GHModel {
        epsilon2,
        cutoff_delta,
        basis_eigvals,
        basis_eigvecs: Some(psi),
        train_latent: latent.to_owned(),
        proj_coeffs,
        extension_weights,
    })
}

impl GHModel {
    pub fn n_basis(&self) -> usize {
        self.basis_eigvals.len()
    }

    pub fn latent_dim(&self) -> usize {
        self.train_latent.ncols()
    }

    pub fn ambient_dim(&self) -> usize {
        self.extension_weights.ncols()
    }

    fn check_dim(&self, k: usize) -> Result<()> {
        if k != self.latent_dim() {
            return Err(Error::Shape {
                expected: format!("latent dimension {}", self.latent_dim()),
                got: k.to_string(),
            });
        }
        Ok(())
    }

    /// Extended basis functions `Psi_j(phi_new)`. Requires the basis in memory.
    pub fn basis_at(&self, phi_new: ArrayView1<f64>) -> Result<Array1<f64>> {
        self.check_dim(phi_new.len())?;
        let psi = self
            .basis_eigvecs
            .as_ref()
            .ok_or_else(|| Error::Config("basis eigenvectors were not persisted".into()))?;
        let kv = self.kernel_row(phi_new);
        let mut out = psi.t().dot(&kv);
        for (v, &s) in out.iter_mut().zip(self.basis_eigvals.iter()) {
            *v /= s;
        }
        Ok(out)
    }

    fn kernel_row(&self, phi_new: ArrayView1<f64>) -> Array1<f64> {
        let scale = -0.5 / self.epsilon2;
        self.train_latent
            .outer_iter()
            .map(|r| (linalg::sq_dist(phi_new, r) * scale).exp())
            .collect()
    }

    pub fn extend(&self, phi_new: ArrayView1<f64>) -> Result<Array1<f64>> {
        self.check_dim(phi_new.len())?;
        Ok(self.kernel_row(phi_new).dot(&self.extension_weights))
    }

    pub fn lift(&self, phi_batch: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_dim(phi_batch.ncols())?;
        let m = phi_batch.nrows();
        let mut out = Array2::zeros((m, self.ambient_dim()));
        let mut start = 0;
        while start < m {
            let end = (start + LIFT_CHUNK).min(m);
            let chunk = phi_batch.slice(s![start..end, ..]);
            let k = latent_kernel(chunk, self.train_latent.view(), self.epsilon2);
            out.slice_mut(s![start..end, ..])
                .assign(&k.dot(&self.extension_weights));
            start = end;
        }
        Ok(out)
    }

    /// Reconstruction of the targets at the training nodes.
    pub fn reconstruct_training(&self) -> Result<Array2<f64>> {
        self.lift(self.train_latent.view())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn circle(n: usize) -> (Array2<f64>, Array2<f64>) {
        let latent = Array2::from_shape_fn((n, 1), |(i, _)| i as f64 / n as f64);
        let targets = Array2::from_shape_fn((n, 2), |(i, j)| {
            let a = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
            if j == 0 { a.cos() } else { a.sin() }
        });
        (latent, targets)
    }

    #[test]
    fn three_point_kernel_and_basis() {
        let latent = array![[0.0], [1.0], [2.0]];
        let targets = array![[1.0], [2.0], [4.0]];
        let m = fit_latent_harmonics(latent.view(), targets.view(), 1.0, 1e-12).unwrap();
        let e05 = (-0.5f64).exp();
        let e2 = (-2.0f64).exp();
        let k = array![[1.0, e05, e2], [e05, 1.0, e05], [e2, e05, 1.0]];
        let psi = m.basis_eigvecs.as_ref().unwrap();
        for (j, &sigma) in m.basis_eigvals.iter().enumerate() {
            let kv = k.dot(&psi.column(j));
            for r in 0..3 {
                assert!((kv[r] - sigma * psi[[r, j]]).abs() < 1e-12);
            }
        }
        // orthonormal
        let g = psi.t().dot(psi);
        for a in 0..3 {
            for b in 0..3 {
                let e = if a == b { 1.0 } else { 0.0 };
                assert!((g[[a, b]] - e).abs() < 1e-12);
            }
        }
        // char poly trace and determinant
        let tr: f64 = m.basis_eigvals.iter().sum();
        assert!((tr - 3.0).abs() < 1e-12);
        let det = 1.0 - 2.0 * e05 * e05 - e2 * e2 + 2.0 * e05 * e05 * e2;
        let prod: f64 = m.basis_eigvals.iter().product();
        assert!((prod - det).abs() < 1e-12);
    }

    #[test]
    fn full_basis_reproduces_targets_at_nodes() {
        let (latent, targets) = circle(40);
        let m = fit_latent_harmonics(latent.view(), targets.view(), 0.01, 1e-12).unwrap();
        let rec = m.reconstruct_training().unwrap();
        for (a, b) in rec.iter().zip(targets.iter()) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn constant_target_is_reproduced() {
        let (latent, _) = circle(30);
        let targets = Array2::from_elem((30, 1), 2.5);
        let m = fit_latent_harmonics(latent.view(), targets.view(), 0.001, 1e-12).unwrap();
        assert_eq!(m.n_basis(), 30);
        for v in m.reconstruct_training().unwrap().iter() {
            assert!((v - 2.5).abs() < 1e-8);
        }
    }

    #[test]
    fn zero_targets_extend_to_zero() {
        let (latent, _) = circle(20);
        let targets = Array2::zeros((20, 3));
        let m = fit_latent_harmonics(latent.view(), targets.view(), 0.02, 1e-8).unwrap();
        let out = m.extend(array![0.123].view()).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn extend_matches_dense_oracle() {
        let (latent, targets) = circle(25);
        let eps = 0.01;
        let m = fit_latent_harmonics(latent.view(), targets.view(), eps, 1e-10).unwrap();
        let x = array![(5.0 + 0.5) / 25.0];
        let got = m.extend(x.view()).unwrap();
        let psi = m.basis_eigvecs.as_ref().unwrap();
        let mut expect = Array1::<f64>::zeros(2);
        for j in 0..m.n_basis() {
            let mut psi_new = 0.0;
            for i in 0..25 {
                let d2 = (x[0] - latent[[i, 0]]).powi(2);
                psi_new += (-d2 / (2.0 * eps)).exp() * psi[[i, j]];
            }
            psi_new /= m.basis_eigvals[j];
            for c in 0..2 {
                let coeff: f64 = (0..25).map(|i| targets[[i, c]] * psi[[i, j]]).sum();
                expect[c] += coeff * psi_new;
            }
        }
        for c in 0..2 {
            assert!((got[c] - expect[c]).abs() < 1e-9);
            let (a, b) = (targets[[5, c]], targets[[6, c]]);
            assert!(got[c] > a.min(b) - 1e-3 && got[c] < a.max(b) + 1e-3);
        }
    }

    #[test]
    fn lift_empty_batch() {
        let (latent, targets) = circle(10);
        let m = fit_latent_harmonics(latent.view(), targets.view(), 0.05, 1e-8).unwrap();
        let out = m.lift(Array2::zeros((0, 1)).view()).unwrap();
        assert_eq!(out.dim(), (0, 2));
    }

    #[test]
    fn cutoff_monotonicity() {
        let (latent, targets) = circle(50);
        let mut prev = f64::INFINITY;
        for delta in [1e-1, 1e-2, 1e-4, 1e-6, 1e-10] {
            let m = fit_latent_harmonics(latent.view(), targets.view(), 0.02, delta).unwrap();
            let rec = m.reconstruct_training().unwrap();
            let err: f64 = (&rec - &targets).mapv(|v| v * v).sum();
            assert!(err <= prev + 1e-9, "delta {delta}: {err} > {prev}");
            prev = err;
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        let (latent, targets) = circle(10);
        assert!(fit_latent_harmonics(latent.view(), targets.view(), 0.0, 1e-8).is_err());
        assert!(fit_latent_harmonics(latent.view(), targets.view(), 0.1, 1.0).is_err());
        assert!(fit_latent_harmonics(latent.view(), targets.slice(s![..5, ..]), 0.1, 1e-8).is_err());
    }

    #[test]
    fn serde_round_trip_keeps_lift() {
        let (latent, targets) = circle(15);
        let m = fit_latent_harmonics(latent.view(), targets.view(), 0.02, 1e-8).unwrap();
        let json = serde_json::to_string(&m).unwrap();
        let back: GHModel = serde_json::from_str(&json).unwrap();
        assert!(back.basis_eigvecs.is_none());
        let x = array![[0.31], [0.77]];
        assert_eq!(m.lift(x.view()).unwrap(), back.lift(x.view()).unwrap());
    }
}
