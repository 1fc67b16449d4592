//! Probabilistic Learning on Manifolds: PCA whitening, a Gaussian-mixture
//! potential, a Diffusion-Maps reduced basis and the damped Itô sampler.

use log::debug;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dmaps::{build_kernel, eigendecompose_markov, normalize_markov};
use crate::error::{param, Error, Result};
use crate::linalg;
use crate::rng::{rng_from, standard_normal_matrix, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlomPca {
    pub mean: Array1<f64>,
    /// Columns are the retained principal directions, n x nu.
    pub pca_eigvecs: Array2<f64>,
    pub pca_eigvals: Array1<f64>,
    /// Whitened training coordinates, nu x N.
    pub eta_d: Array2<f64>,
}

impl PlomPca {
    pub fn nu(&self) -> usize {
        self.pca_eigvals.len()
    }

    /// Maps whitened coordinates (nu x M) back to data rows (M x n).
    pub fn reconstruct(&self, h: ArrayView2<f64>) -> Array2<f64> {
        let scaled = self.pca_eigvecs.dot(&Array2::from_diag(&self.pca_eigvals.mapv(f64::sqrt)));
        let mut out = scaled.dot(&h).reversed_axes();
        out += &self.mean;
        out
    }
}

/// PCA of the rows of `data` (N samples x n features), keeping eigenvalues above `tol * max`.
pub fn pca_reduce(data: ArrayView2<f64>, tol: f64) -> Result<PlomPca> {
    let (n_samples, n_feat) = data.dim();
    if n_samples < 2 {
        return param("PCA needs at least two samples");
    }
    if !(tol > 0.0 && tol < 1.0) {
        return param(format!("tol must lie in (0, 1), got {tol}"));
    }
    let mean = linalg::column_means(data);
    let centered = &data - &mean;
    let cov = centered.t().dot(&centered) / (n_samples as f64 - 1.0);
    let (vals, vecs) = linalg::symmetric_eigen(&cov, n_feat)?;
    let max = vals[0];
    if !(max > 0.0) {
        return Err(Error::DegenerateData("covariance has rank zero".into()));
    }
    let nu = vals.iter().take_while(|&&v| v > tol * max).count();
    let pca_eigvals = Array1::from(vals[..nu].to_vec());
    let mut pca_eigvecs = vecs.slice(s![.., ..nu]).to_owned();
    linalg::fix_signs(&mut pca_eigvecs);
    let mut eta_d = pca_eigvecs.t().dot(&centered.t());
    for (mut row, &mu) in eta_d.outer_iter_mut().zip(pca_eigvals.iter()) {
        row.mapv_inplace(|v| v / mu.sqrt());
    }
    Ok(PlomPca {
        mean,
        pca_eigvecs,
        pca_eigvals,
        eta_d,
    })
}

/// Silverman bandwidth `s` and the normalizing modification `s_hat = s / sqrt(s^2 + (N-1)/N)`.
pub fn silverman_params(n: usize, nu: usize) -> (f64, f64) {
    let nf = n as f64;
    let nuf = nu as f64;
    let s = (4.0 / (nf * (2.0 + nuf))).powf(1.0 / (nuf + 4.0));
    let s_hat = s / (s * s + (nf - 1.0) / nf).sqrt();
    (s, s_hat)
}

/// Gaussian mixture with centers `(s_hat / s) eta_j` and bandwidth `s_hat`.
#[derive(Debug, Clone)]
pub struct Mixture {
    /// One row of center coordinates per component, so inner loops are contiguous.
    centers: Vec<Vec<f64>>,
    inv_bw2: f64,
}

impl Mixture {
    pub fn new(eta_d: ArrayView2<f64>, s: f64, s_hat: f64) -> Self {
        let r = s_hat / s;
        let centers = eta_d
            .outer_iter()
            .map(|row| row.iter().map(|&v| r * v).collect())
            .collect();
        Self {
            centers,
            inv_bw2: 1.0 / (s_hat * s_hat),
        }
    }

    fn n_centers(&self) -> usize {
        self.centers.first().map_or(0, Vec::len)
    }

    /// Log kernel of every center at `u` into `logs`; returns the maximum.
    #[inline(always)]
    fn log_kernels(&self, u: &[f64], logs: &mut Vec<f64>) -> f64 {
        logs.clear();
        logs.resize(self.n_centers(), 0.0);
        for (row, &ui) in self.centers.iter().zip(u) {
            for (l, &c) in logs.iter_mut().zip(row) {
                let d = c - ui;
                *l += d * d;
            }
        }
        let k = -0.5 * self.inv_bw2;
        // four independent lanes keep the reduction vectorizable
        let mut lanes = [f64::NEG_INFINITY; 4];
        let mut chunks = logs.chunks_exact_mut(4);
        for c in &mut chunks {
            for (m, l) in lanes.iter_mut().zip(c.iter_mut()) {
                *l *= k;
                *m = if *l > *m { *l } else { *m };
            }
        }
        for l in chunks.into_remainder() {
            *l *= k;
            lanes[0] = lanes[0].max(*l);
        }
        lanes.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn log_density(&self, u: &[f64]) -> f64 {
        let mut logs = Vec::new();
        self.log_kernels(u, &mut logs);
        linalg::logsumexp(&logs) - (self.n_centers() as f64).ln()
    }

    /// `grad log q(u)` written into `out`; `scratch` holds one value per center.
    pub fn gradient_into(&self, u: &[f64], out: &mut [f64], scratch: &mut Vec<f64>) {
        #[cfg(target_arch = "x86_64")]
        if std::arch::is_x86_feature_detected!("avx2") && std::arch::is_x86_feature_detected!("fma") {
            // SAFETY: the required CPU features were detected at runtime.
            unsafe { self.gradient_avx2(u, out, scratch) };
            return;
        }
        self.gradient_body(u, out, scratch);
    }

    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx2,fma")]
    unsafe fn gradient_avx2(&self, u: &[f64], out: &mut [f64], scratch: &mut Vec<f64>) {
        self.gradient_body(u, out, scratch);
    }

    #[inline(always)]
    fn gradient_body(&self, u: &[f64], out: &mut [f64], scratch: &mut Vec<f64>) {
        let max = self.log_kernels(u, scratch);
        let total = exp_shifted_in_place(scratch, max);
        for ((o, row), &ui) in out.iter_mut().zip(&self.centers).zip(u) {
            *o = (lane_dot(row, scratch) / total - ui) * self.inv_bw2;
        }
    }

    /// Gradient at every column of `u` (nu x M).
    pub fn gradient_columns(&self, u: ArrayView2<f64>) -> Array2<f64> {
        let (nu, m) = u.dim();
        let mut out = Array2::zeros((nu, m));
        let mut scratch = Vec::with_capacity(self.n_centers());
        let mut ucol = vec![0.0; nu];
        let mut g = vec![0.0; nu];
        for j in 0..m {
            for c in 0..nu {
                ucol[c] = u[[c, j]];
            }
            self.gradient_into(&ucol, &mut g, &mut scratch);
            for c in 0..nu {
                out[[c, j]] = g[c];
            }
        }
        out
    }
}

/// `exp(x)` for `x <= 0` without branches, so the calling loop vectorizes.
/// Range reduction `x = n ln2 + r`, `|r| <= ln2 / 2`, then a degree-12 Taylor
/// polynomial; agrees with `f64::exp` to a few ulp and flushes below `-708` to zero.
#[inline(always)]
fn exp_nonpositive(x: f64) -> f64 {
    const SHIFTER: f64 = 6755399441055744.0; // 1.5 * 2^52
    const LN2_HI: f64 = 6.931_471_803_691_238_164_90e-1;
    const LN2_LO: f64 = 1.908_214_929_270_587_700_02e-10;
    let xc = x.max(-708.0);
    let t = xc * std::f64::consts::LOG2_E + SHIFTER;
    let n = t - SHIFTER;
    let r = (xc - n * LN2_HI) - n * LN2_LO;
    let mut p = 1.0 / 479_001_600.0;
    for k in (1..12).rev() {
        p = p * r + INV_FACT[k];
    }
    p = p * r + 1.0;
    let scale = f64::from_bits(t.to_bits().wrapping_add(1023) << 52);
    if x < -708.0 {
        0.0
    } else {
        p * scale
    }
}

const INV_FACT: [f64; 12] = [
    1.0,
    1.0,
    1.0 / 2.0,
    1.0 / 6.0,
    1.0 / 24.0,
    1.0 / 120.0,
    1.0 / 720.0,
    1.0 / 5040.0,
    1.0 / 40320.0,
    1.0 / 362_880.0,
    1.0 / 3_628_800.0,
    1.0 / 39_916_800.0,
];

/// `v <- exp(v - shift)` for `v <= shift`; returns the sum.
#[inline(always)]
fn exp_shifted_in_place(v: &mut [f64], shift: f64) -> f64 {
    for x in v.iter_mut() {
        *x = exp_nonpositive(*x - shift);
    }
    lane_sum(v)
}

#[inline(always)]
fn lane_sum(v: &[f64]) -> f64 {
    let mut lanes = [0.0; 8];
    let c = v.chunks_exact(8);
    let tail: f64 = c.remainder().iter().sum();
    for x in c {
        for k in 0..8 {
            lanes[k] += x[k];
        }
    }
    lanes.iter().sum::<f64>() + tail
}

/// Dot product with independent partial sums, which lets the loop vectorize.
#[inline(always)]
fn lane_dot(a: &[f64], b: &[f64]) -> f64 {
    let mut lanes = [0.0; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            lanes[k] += x[k] * y[k];
        }
    }
    lanes.iter().sum::<f64>() + tail
}

/// `grad_u log q(u)` for the PLoM mixture built on `eta_d` (nu x N).
pub fn potential_gradient(eta_d: ArrayView2<f64>, u: ArrayView1<f64>, s: f64, s_hat: f64) -> Result<Array1<f64>> {
    if u.len() != eta_d.nrows() {
        return Err(Error::Shape {
            expected: format!("length {}", eta_d.nrows()),
            got: u.len().to_string(),
        });
    }
    let mix = Mixture::new(eta_d, s, s_hat);
    let uv = u.to_vec();
    let mut out = vec![0.0; u.len()];
    let mut scratch = Vec::new();
    mix.gradient_into(&uv, &mut out, &mut scratch);
    Ok(Array1::from(out))
}

/// Diffusion-Maps basis of the N columns of `eta_d` with its right inverse.
#[derive(Debug, Clone)]
pub struct ReducedBasis {
    pub g: Array2<f64>,
    pub a: Array2<f64>,
    /// Leading transition-matrix eigenvalues, descending.
    pub eigvals: Vec<f64>,
}

/// Basis size at the largest ratio `lambda_i / lambda_{i+1}` for `i >= 1`,
/// counting the constant vector.
pub fn choose_basis_size(eigvals: &[f64]) -> usize {
    let mut best = (f64::NEG_INFINITY, 2);
    for i in 1..eigvals.len().saturating_sub(1) {
        let (a, b) = (eigvals[i], eigvals[i + 1]);
        if a <= 0.0 {
            break;
        }
        let ratio = if b > 0.0 { a / b } else { f64::INFINITY };
        if ratio > best.0 {
            best = (ratio, i + 1);
        }
    }
    best.1
}

/// Right inverse `a = g (g^T g)^{-1}`.
pub fn right_inverse(g: &Array2<f64>) -> Result<Array2<f64>> {
    let gram = g.t().dot(g);
    let inv = linalg::spd_inverse(&gram)
        .ok_or_else(|| Error::BasisDegenerate(format!("g^T g is singular for m = {}", g.ncols())))?;
    Ok(g.dot(&inv))
}

/// Diffusion-Maps basis with `m` vectors, or the largest-gap choice when `m` is `None`.
/// `n_spectrum` eigenvalues are kept for reporting.
pub fn dmaps_basis(
    eta_d: ArrayView2<f64>,
    epsilon: f64,
    m: Option<usize>,
    n_spectrum: usize,
) -> Result<ReducedBasis> {
    let n = eta_d.ncols();
    if let Some(m) = m {
        if m == 0 || m > n {
            return param(format!("basis size must be in [1, {n}], got {m}"));
        }
    }
    let points = eta_d.t();
    let k = build_kernel(points, epsilon)?;
    let markov = normalize_markov(&k, 1.0)?;
    drop(k);
    let n_keep = n_spectrum.max(m.unwrap_or(0)).min(n);
    let (eigvals, vecs) = eigendecompose_markov(&markov.m, &markov.d, n_keep)?;
    let m = m.unwrap_or_else(|| choose_basis_size(&eigvals));
    let g = vecs.slice(s![.., ..m]).to_owned();
    let a = right_inverse(&g)?;
    Ok(ReducedBasis { g, a, eigvals })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlomConfig {
    pub tol: f64,
    pub epsilon: f64,
    /// Reduced basis size; `None` picks the largest spectral gap.
    pub m: Option<usize>,
    pub f0: f64,
    pub delta_r: f64,
    /// Defaults to `4 / (f0 * delta_r)`.
    pub burn_in: Option<usize>,
    /// Defaults to `0.5 / (f0 * delta_r)`.
    pub thinning: Option<usize>,
    pub n_spectrum: usize,
    /// Multiplies each basis vector by its eigenvalue; the span is unchanged.
    pub scale_basis: bool,
}

impl Default for PlomConfig {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            epsilon: 10.0,
            m: None,
            f0: 1.0,
            delta_r: 5e-4,
            burn_in: None,
            thinning: None,
            n_spectrum: 10,
            scale_basis: false,
        }
    }
}

impl PlomConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.f0 > 0.0) || !(self.delta_r > 0.0) {
            return param("f0 and delta_r must be positive");
        }
        if !(self.epsilon > 0.0) {
            return param(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return param(format!("tol must lie in (0, 1), got {}", self.tol));
        }
        if self.thinning == Some(0) {
            return param("thinning must be at least 1");
        }
        Ok(())
    }

    pub fn resolved_burn_in(&self) -> usize {
        self.burn_in
            .unwrap_or_else(|| (4.0 / (self.f0 * self.delta_r)).round() as usize)
    }

    pub fn resolved_thinning(&self) -> usize {
        self.thinning
            .unwrap_or_else(|| ((0.5 / (self.f0 * self.delta_r)).round() as usize).max(1))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlomModel {
    pub pca: PlomPca,
    pub s_nu: f64,
    pub s_hat_nu: f64,
    pub g: Array2<f64>,
    pub a: Array2<f64>,
    pub spectrum: Vec<f64>,
    pub f0: f64,
    pub delta_r: f64,
    pub m: usize,
    pub burn_in: usize,
    pub thinning: usize,
}

pub fn fit_plom(data: ArrayView2<f64>, cfg: &PlomConfig) -> Result<PlomModel> {
    cfg.validate()?;
    let pca = pca_reduce(data, cfg.tol)?;
    let (s_nu, s_hat_nu) = silverman_params(data.nrows(), pca.nu());
    let mut basis = dmaps_basis(pca.eta_d.view(), cfg.epsilon, cfg.m, cfg.n_spectrum)?;
    if cfg.scale_basis {
        for (mut col, &lam) in basis.g.axis_iter_mut(Axis(1)).zip(basis.eigvals.iter()) {
            col *= lam;
        }
        basis.a = right_inverse(&basis.g)?;
    }
    debug!(
        "PLoM basis m = {} with spectrum {:?}",
        basis.g.ncols(),
        basis.eigvals
    );
    Ok(PlomModel {
        m: basis.g.ncols(),
        pca,
        s_nu,
        s_hat_nu,
        g: basis.g,
        a: basis.a,
        spectrum: basis.eigvals,
        f0: cfg.f0,
        delta_r: cfg.delta_r,
        burn_in: cfg.resolved_burn_in(),
        thinning: cfg.resolved_thinning(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct IsdeState {
    pub z: Array2<f64>,
    pub y: Array2<f64>,
    pub step: usize,
}

/// Stepper for the reduced-order ISDE.
pub struct Isde<'a> {
    model: &'a PlomModel,
    mixture: Mixture,
    rng: Rng,
    pub force_scale: f64,
    pub noise_scale: f64,
}

impl<'a> Isde<'a> {
    pub fn new(model: &'a PlomModel, seed: u64) -> Self {
        Self {
            mixture: Mixture::new(model.pca.eta_d.view(), model.s_nu, model.s_hat_nu),
            model,
            rng: rng_from(seed),
            force_scale: 1.0,
            noise_scale: 1.0,
        }
    }

    /// `Z(0) = eta_d a`, `Y(0) = N a` with `N` standard normal.
    pub fn initial_state(&mut self) -> IsdeState {
        let (nu, n) = self.model.pca.eta_d.dim();
        let noise = standard_normal_matrix(nu, n, &mut self.rng);
        IsdeState {
            z: self.model.pca.eta_d.dot(&self.model.a),
            y: noise.dot(&self.model.a),
            step: 0,
        }
    }

    /// One Störmer–Verlet step.
    pub fn step(&mut self, st: &mut IsdeState) -> Result<()> {
        let m = self.model;
        let dr = m.delta_r;
        let bh = m.f0 * dr / 4.0;
        let (nu, n) = m.pca.eta_d.dim();
        st.z.scaled_add(0.5 * dr, &st.y);
        let mut drive = Array2::zeros((nu, n));
        if self.force_scale != 0.0 {
            let u = st.z.dot(&m.g.t());
            let l = self.mixture.gradient_columns(u.view());
            drive.scaled_add(self.force_scale * dr / (1.0 + bh), &l);
        }
        if self.noise_scale != 0.0 {
            let sd = dr.sqrt();
            let amp = self.noise_scale * m.f0.sqrt() / (1.0 + bh);
            drive.mapv_inplace(|v| {
                let z: f64 = StandardNormal.sample(&mut self.rng);
                v + amp * sd * z
            });
        }
        st.y *= (1.0 - bh) / (1.0 + bh);
        st.y += &drive.dot(&m.a);
        st.z.scaled_add(0.5 * dr, &st.y);
        st.step += 1;
        if st.z.iter().chain(st.y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                step: st.step,
                context: "ISDE",
            });
        }
        Ok(())
    }

    /// Collects `n_samples` columns of `H = Z g^T` (nu x n_samples) after burn-in,
    /// one state every `thinning` steps.
    pub fn run(&mut self, n_samples: usize) -> Result<Array2<f64>> {
        let (nu, n) = self.model.pca.eta_d.dim();
        let mut out = Array2::zeros((nu, n_samples));
        if n_samples == 0 {
            return Ok(out);
        }
        let mut st = self.initial_state();
        for _ in 0..self.model.burn_in {
            self.step(&mut st)?;
        }
        let mut filled = 0;
        while filled < n_samples {
            for _ in 0..self.model.thinning {
                self.step(&mut st)?;
            }
            let h = st.z.dot(&self.model.g.t());
            let take = (n_samples - filled).min(n);
            out.slice_mut(s![.., filled..filled + take])
                .assign(&h.slice(s![.., ..take]));
            filled += take;
        }
        Ok(out)
    }
}

/// New realizations of `H` (nu x n_samples).
pub fn isde_run(model: &PlomModel, n_samples: usize, seed: u64) -> Result<Array2<f64>> {
    Isde::new(model, seed).run(n_samples)
}

/// Fits PLoM on the rows of `data` and returns `n_samples` new rows.
pub fn plom_sample(
    data: ArrayView2<f64>,
    n_samples: usize,
    cfg: &PlomConfig,
    seed: u64,
) -> Result<(PlomModel, Array2<f64>)> {
    let model = fit_plom(data, cfg)?;
    let h = isde_run(&model, n_samples, seed)?;
    let out = model.pca.reconstruct(h.view());
    Ok((model, out))
}

/// Row mean and sample covariance of `eta` (nu x N), for checks.
pub fn row_moments(eta: ArrayView2<f64>) -> (Array1<f64>, Array2<f64>) {
    let n = eta.ncols() as f64;
    let mean = eta.mean_axis(Axis(1)).expect("non-empty");
    let c = &eta - &mean.view().insert_axis(Axis(1));
    let cov = c.dot(&c.t()) / (n - 1.0);
    (mean, cov)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn fast_exp_matches_std() {
        let mut worst: f64 = 0.0;
        for i in 0..200_000 {
            let x = -708.0 * (i as f64 / 199_999.0).powi(3);
            let e = x.exp();
            worst = worst.max((exp_nonpositive(x) - e).abs() / e);
        }
        assert!(worst < 1e-15, "{worst}");
        assert_eq!(exp_nonpositive(0.0), 1.0);
        assert_eq!(exp_nonpositive(-800.0), 0.0);
    }

    #[test]
    fn silverman_examples() {
        let (s, sh) = silverman_params(100, 2);
        assert!((s - 0.01f64.powf(1.0 / 6.0)).abs() < 1e-15);
        assert!((s - 0.46416).abs() < 1e-5);
        let expect = s / (s * s + 0.99).sqrt();
        assert!((sh - expect).abs() < 1e-15);
        // quoted to five digits as 0.42278; the formula gives 0.422759
        assert!((sh - 0.42278).abs() < 5e-5);
        let (big, _) = silverman_params(1_000_000, 2);
        assert!(big < 0.12);
    }

    #[test]
    fn mixture_variance_is_one() {
        // centers (s_hat/s) eta with population variance (N-1)/N, plus s_hat^2
        for &(n, nu) in &[(10usize, 1usize), (100, 2), (3000, 2)] {
            let (s, sh) = silverman_params(n, nu);
            let nf = n as f64;
            let var = (sh / s).powi(2) * (nf - 1.0) / nf + sh * sh;
            assert!((var - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn pca_whitening_and_reconstruction() {
        let mut rng = rng_from(3);
        let z = standard_normal_matrix(200, 3, &mut rng);
        let mix = array![[2.0, 0.3, 0.0], [0.1, 1.0, 0.5], [0.0, -0.4, 0.2]];
        let data = z.dot(&mix) + &array![1.0, -2.0, 0.5];
        let p = pca_reduce(data.view(), 1e-12).unwrap();
        assert_eq!(p.nu(), 3);
        let (mean, cov) = row_moments(p.eta_d.view());
        assert!(mean.iter().all(|v| v.abs() < 1e-10));
        for i in 0..3 {
            for j in 0..3 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((cov[[i, j]] - e).abs() < 1e-8);
            }
        }
        let rec = p.reconstruct(p.eta_d.view());
        for (a, b) in rec.iter().zip(data.iter()) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn pca_line_keeps_one_component() {
        let data = Array2::from_shape_fn((50, 3), |(i, j)| i as f64 * [1.0, 2.0, -0.5][j]);
        let p = pca_reduce(data.view(), 1e-8).unwrap();
        assert_eq!(p.nu(), 1);
        let flat = Array2::from_elem((5, 2), 3.0);
        assert!(matches!(pca_reduce(flat.view(), 1e-8), Err(Error::DegenerateData(_))));
    }

    #[test]
    fn pca_hand_matrix_matches_oracle() {
        // 4 samples in R^3
        let data = array![[1.0, 2.0, 0.0], [2.0, 0.0, 1.0], [0.0, 1.0, 3.0], [3.0, 1.0, 2.0]];
        let p = pca_reduce(data.view(), 1e-10).unwrap();
        let mean = array![1.5, 1.0, 1.5];
        let c = &data - &mean;
        let cov = c.t().dot(&c) / 3.0;
        for (j, &mu) in p.pca_eigvals.iter().enumerate() {
            let v = p.pca_eigvecs.column(j);
            let cv = cov.dot(&v);
            for r in 0..3 {
                assert!((cv[r] - mu * v[r]).abs() < 1e-12);
            }
            for i in 0..4 {
                let eta = c.row(i).dot(&v) / mu.sqrt();
                assert!((p.eta_d[[j, i]] - eta).abs() < 1e-12);
            }
        }
        let tr: f64 = p.pca_eigvals.sum();
        assert!((tr - (cov[[0, 0]] + cov[[1, 1]] + cov[[2, 2]])).abs() < 1e-12);
    }

    #[test]
    fn gradient_examples() {
        let (s, sh) = (0.5, 0.4);
        let one = array![[1.0], [2.0]];
        let u = array![0.3, -0.1];
        let g = potential_gradient(one.view(), u.view(), s, sh).unwrap();
        let c = one.column(0).mapv(|v| v * sh / s);
        for i in 0..2 {
            assert!((g[i] - (c[i] - u[i]) / (sh * sh)).abs() < 1e-12);
        }
        let sym = array![[-1.0, 1.0]];
        let z = potential_gradient(sym.view(), array![0.0].view(), s, sh).unwrap();
        assert!(z[0].abs() < 1e-14);
    }

    #[test]
    fn gradient_finite_differences() {
        let eta = array![[0.1, -1.0, 0.7, 1.5, -0.3], [0.4, 0.2, -1.1, 0.9, 0.0]];
        let (s, sh) = silverman_params(5, 2);
        let mix = Mixture::new(eta.view(), s, sh);
        let u = [0.25, -0.35];
        let g = potential_gradient(eta.view(), array![u[0], u[1]].view(), s, sh).unwrap();
        for i in 0..2 {
            let h = 1e-6;
            let mut up = u;
            up[i] += h;
            let mut um = u;
            um[i] -= h;
            let fd = (mix.log_density(&up) - mix.log_density(&um)) / (2.0 * h);
            assert!(((fd - g[i]) / g[i]).abs() < 1e-6, "{fd} vs {}", g[i]);
        }
    }

    #[test]
    fn basis_right_inverse() {
        let mut rng = rng_from(4);
        let eta = standard_normal_matrix(2, 60, &mut rng);
        let b = dmaps_basis(eta.view(), 1.0, Some(5), 10).unwrap();
        let ga = b.g.t().dot(&b.a);
        for i in 0..5 {
            for j in 0..5 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((ga[[i, j]] - e).abs() < 1e-10);
            }
        }
        let full = dmaps_basis(eta.view(), 1.0, Some(60), 10).unwrap();
        let h = standard_normal_matrix(2, 60, &mut rng);
        let proj = h.dot(&full.a).dot(&full.g.t());
        for (x, y) in proj.iter().zip(h.iter()) {
            assert!((x - y).abs() < 1e-8);
        }
        assert!(dmaps_basis(eta.view(), 1.0, Some(61), 10).is_err());
    }

    #[test]
    fn basis_size_from_gap() {
        assert_eq!(choose_basis_size(&[1.0, 0.1016, 0.1003, 0.0084, 0.006]), 3);
        assert_eq!(choose_basis_size(&[1.0, 0.5, 0.05, 0.04]), 2);
    }

    fn toy_model(n: usize, m: Option<usize>, seed: u64) -> PlomModel {
        let mut rng = rng_from(seed);
        let data = standard_normal_matrix(n, 2, &mut rng);
        fit_plom(
            data.view(),
            &PlomConfig {
                m,
                burn_in: Some(200),
                thinning: Some(50),
                ..PlomConfig::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn scaled_basis_keeps_span() {
        let plain = toy_model(40, Some(4), 6);
        let mut rng = rng_from(6);
        let data = standard_normal_matrix(40, 2, &mut rng);
        let cfg = PlomConfig {
            m: Some(4),
            scale_basis: true,
            ..PlomConfig::default()
        };
        let scaled = fit_plom(data.view(), &cfg).unwrap();
        let eye = scaled.g.t().dot(&scaled.a);
        for ((i, j), v) in eye.indexed_iter() {
            assert!((v - if i == j { 1.0 } else { 0.0 }).abs() < 1e-10);
        }
        // projector g a^T is basis-independent
        let p0 = plain.g.dot(&plain.a.t());
        let p1 = scaled.g.dot(&scaled.a.t());
        for (x, y) in p0.iter().zip(p1.iter()) {
            assert!((x - y).abs() < 1e-8);
        }
    }

    #[test]
    fn free_damped_motion() {
        let model = toy_model(40, Some(4), 1);
        let mut isde = Isde::new(&model, 2);
        isde.force_scale = 0.0;
        isde.noise_scale = 0.0;
        let mut st = isde.initial_state();
        let y0 = st.y.clone();
        let z0 = st.z.clone();
        let steps = 400;
        for _ in 0..steps {
            isde.step(&mut st).unwrap();
        }
        let bh = model.f0 * model.delta_r / 4.0;
        let rho: f64 = (1.0 - bh) / (1.0 + bh);
        let expect_y = &y0 * rho.powi(steps);
        for (a, b) in st.y.iter().zip(expect_y.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        // Z(k) = Z0 + dr/2 * sum_{i<k} (Y_i + Y_{i+1})
        let dr = model.delta_r;
        let geo: f64 = (0..steps).map(|i| rho.powi(i) * (1.0 + rho)).sum::<f64>() * 0.5 * dr;
        let expect_z = &z0 + &(&y0 * geo);
        for (a, b) in st.z.iter().zip(expect_z.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn isde_is_seeded_and_sized() {
        let model = toy_model(30, Some(3), 5);
        let a = isde_run(&model, 70, 9).unwrap();
        let b = isde_run(&model, 70, 9).unwrap();
        assert_eq!(a.dim(), (2, 70));
        assert_eq!(a, b);
        assert_eq!(isde_run(&model, 0, 9).unwrap().dim(), (2, 0));
    }

    #[test]
    fn planar_data_stays_in_plane() {
        let mut rng = rng_from(8);
        let z = standard_normal_matrix(80, 2, &mut rng);
        let basis = array![[1.0, 0.0, 1.0], [0.0, 1.0, -1.0]];
        let data = z.dot(&basis) + &array![0.5, 0.5, 0.5];
        let cfg = PlomConfig {
            burn_in: Some(100),
            thinning: Some(20),
            m: Some(5),
            tol: 1e-8,
            ..PlomConfig::default()
        };
        let (model, out) = plom_sample(data.view(), 100, &cfg, 1).unwrap();
        assert_eq!(model.pca.nu(), 2);
        assert_eq!(out.dim(), (100, 3));
        // normal of the plane x - y - z = const
        let normal = array![1.0, -1.0, -1.0];
        let c0 = array![0.5, 0.5, 0.5].dot(&normal);
        for row in out.outer_iter() {
            assert!((row.dot(&normal) - c0).abs() < 1e-8);
        }
        let (_, empty) = plom_sample(data.view(), 0, &cfg, 1).unwrap();
        assert_eq!(empty.nrows(), 0);
    }
}
