//! Forward-SDE schedule, Monte-Carlo score estimation and reverse-time
//! integration of the probability-flow ODE and the reverse SDE.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::index::sample as sample_indices;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::rng::{derive_seed, rng_from, stage_seed, standard_normal_matrix};

/// Schedule `alpha_t = 1 - t`, `beta_t^2 = t`, clipped to `[t_min, t_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiffusionSchedule {
    pub t_min: f64,
    pub t_max: f64,
}

impl Default for DiffusionSchedule {
    fn default() -> Self {
        Self {
            t_min: 1e-3,
            t_max: 1.0 - 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleValues {
    pub alpha: f64,
    pub beta: f64,
    pub b: f64,
    pub sigma2: f64,
}

impl DiffusionSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_min > 0.0 && self.t_min < self.t_max && self.t_max < 1.0) {
            return param(format!(
                "schedule needs 0 < t_min < t_max < 1, got [{}, {}]",
                self.t_min, self.t_max
            ));
        }
        Ok(())
    }

    #[inline]
    pub fn alpha(t: f64) -> f64 {
        1.0 - t
    }

    #[inline]
    pub fn beta2(t: f64) -> f64 {
        t
    }

    #[inline]
    pub fn drift_coef(t: f64) -> f64 {
        -1.0 / (1.0 - t)
    }

    #[inline]
    pub fn sigma2(t: f64) -> f64 {
        (1.0 + t) / (1.0 - t)
    }

    pub fn eval(&self, t: f64) -> Result<ScheduleValues> {
        if !(t >= self.t_min && t <= self.t_max) {
            return param(format!(
                "t = {t} outside [{}, {}]",
                self.t_min, self.t_max
            ));
        }
        Ok(ScheduleValues {
            alpha: Self::alpha(t),
            beta: t.sqrt(),
            b: Self::drift_coef(t),
            sigma2: Self::sigma2(t),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    OdeRk4,
    OdeEuler,
    SdeEulerMaruyama,
}

/// Placement of the integration nodes on `[t_min, t_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeGrid {
    /// Uniform in `t`.
    Uniform,
    /// Uniform in `sqrt(t)`, refining near `t_min` where the score is stiff.
    SqrtUniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoreConfig {
    /// Minibatch size; `None` means `min(N, 256)`.
    pub minibatch_size: Option<usize>,
    pub rng_seed: u64,
    pub steps: usize,
    pub integrator: Integrator,
    pub grid: TimeGrid,
    pub schedule: DiffusionSchedule,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        Self {
            minibatch_size: None,
            rng_seed: 0,
            steps: 500,
            integrator: Integrator::OdeRk4,
            grid: TimeGrid::SqrtUniform,
            schedule: DiffusionSchedule::default(),
        }
    }
}

impl ScoreConfig {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        if self.steps < 10 {
            return param(format!("steps must be at least 10, got {}", self.steps));
        }
        if self.minibatch_size == Some(0) {
            return param("minibatch_size must be at least 1");
        }
        Ok(())
    }

    pub fn resolved_minibatch(&self, n: usize) -> usize {
        self.minibatch_size.unwrap_or(256).min(n)
    }

    /// Integration nodes from `t_max` down to `t_min`, `steps + 1` values.
    pub fn time_nodes(&self) -> Vec<f64> {
        let (lo, hi) = (self.schedule.t_min, self.schedule.t_max);
        let n = self.steps;
        (0..=n)
            .map(|i| {
                let f = i as f64 / n as f64;
                match self.grid {
                    TimeGrid::Uniform => hi + (lo - hi) * f,
                    TimeGrid::SqrtUniform => {
                        let s = hi.sqrt() + (lo.sqrt() - hi.sqrt()) * f;
                        s * s
                    }
                }
            })
            .map(|t: f64| t.clamp(lo, hi))
            .collect()
    }
}

/// Gaussian draws paired with the terminal states they were mapped to.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPairs {
    pub inputs: Array2<f64>,
    pub outputs: Array2<f64>,
}

impl LabeledPairs {
    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.nrows() == 0
    }
}

/// Batched score `S(x, t)`; `step` identifies the integration step so that
/// stochastic estimators can derive per-step randomness.
pub trait ScoreFunction {
    fn dim(&self) -> usize;
    fn score_batch(&self, x: ArrayView2<f64>, t: f64, step: usize) -> Result<Array2<f64>>;
}

/// Gradient of `log f(x_t | x0)`.
pub fn conditional_score(x_t: ArrayView1<f64>, x0: ArrayView1<f64>, t: f64) -> Result<Array1<f64>> {
    if !(t > 0.0 && t < 1.0) {
        return param(format!("conditional score needs t in (0, 1), got {t}"));
    }
    if x_t.len() != x0.len() {
        return Err(Error::Shape {
            expected: format!("length {}", x0.len()),
            got: x_t.len().to_string(),
        });
    }
    let a = DiffusionSchedule::alpha(t);
    let b2 = DiffusionSchedule::beta2(t);
    Ok(x_t
        .iter()
        .zip(x0.iter())
        .map(|(&x, &c)| -(x - a * c) / b2)
        .collect())
}

/// Monte-Carlo score of the data mixture with a fresh minibatch per step.
#[derive(Debug, Clone)]
pub struct McScore<'a> {
    data: ArrayView2<'a, f64>,
    minibatch: usize,
    seed: u64,
}

impl<'a> McScore<'a> {
    pub fn new(data: ArrayView2<'a, f64>, cfg: &ScoreConfig) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return param("score data must be non-empty");
        }
        cfg.validate()?;
        Ok(Self {
            data,
            minibatch: cfg.resolved_minibatch(data.nrows()),
            seed: stage_seed(cfg.rng_seed, "mc-minibatch"),
        })
    }

    pub fn minibatch_indices(&self, step: usize) -> Vec<usize> {
        let n = self.data.nrows();
        if self.minibatch >= n {
            return (0..n).collect();
        }
        let mut rng = rng_from(derive_seed(self.seed, step as u64));
        let mut idx = sample_indices(&mut rng, n, self.minibatch).into_vec();
        idx.sort_unstable();
        idx
    }

    /// Normalized mixture weights over the given centers.
    pub fn weights(&self, x: ArrayView1<f64>, t: f64, idx: &[usize]) -> Vec<f64> {
        let a = DiffusionSchedule::alpha(t);
        let inv = -0.5 / DiffusionSchedule::beta2(t);
        let mut logw: Vec<f64> = idx
            .iter()
            .map(|&n| {
                let c = self.data.row(n);
                let d2: f64 = x.iter().zip(c.iter()).map(|(&xi, &ci)| (xi - a * ci).powi(2)).sum();
                d2 * inv
            })
            .collect();
        let lse = crate::linalg::logsumexp(&logw);
        logw.iter_mut().for_each(|l| *l = (*l - lse).exp());
        logw
    }

    fn score_row(&self, x: ArrayView1<f64>, t: f64, idx: &[usize], out: &mut [f64]) {
        let a = DiffusionSchedule::alpha(t);
        let b2 = DiffusionSchedule::beta2(t);
        let w = self.weights(x, t, idx);
        out.iter_mut().for_each(|v| *v = 0.0);
        for (&n, &wn) in idx.iter().zip(w.iter()) {
            let c = self.data.row(n);
            for (o, &ci) in out.iter_mut().zip(c.iter()) {
                *o += wn * ci;
            }
        }
        for (o, &xi) in out.iter_mut().zip(x.iter()) {
            *o = -(xi - a * *o) / b2;
        }
    }
}

impl ScoreFunction for McScore<'_> {
    fn dim(&self) -> usize {
        self.data.ncols()
    }

    fn score_batch(&self, x: ArrayView2<f64>, t: f64, step: usize) -> Result<Array2<f64>> {
        if !(t > 0.0 && t < 1.0) {
            return param(format!("score needs t in (0, 1), got {t}"));
        }
        let idx = self.minibatch_indices(step);
        let k = self.dim();
        let mut out = Array2::zeros((x.nrows(), k));
        for (row, mut o) in x.outer_iter().zip(out.outer_iter_mut()) {
            self.score_row(row, t, &idx, o.as_slice_mut().expect("contiguous row"));
        }
        Ok(out)
    }
}

/// Monte-Carlo score at a single point using the step-0 minibatch of `cfg`.
pub fn mc_score(
    data: ArrayView2<f64>,
    x_t: ArrayView1<f64>,
    t: f64,
    cfg: &ScoreConfig,
) -> Result<Array1<f64>> {
    let s = McScore::new(data, cfg)?;
    if x_t.len() != s.dim() {
        return Err(Error::Shape {
            expected: format!("length {}", s.dim()),
            got: x_t.len().to_string(),
        });
    }
    let x = x_t.insert_axis(Axis(0));
    Ok(s.score_batch(x, t, 0)?.row(0).to_owned())
}

fn ode_drift<S: ScoreFunction + ?Sized>(
    score: &S,
    x: &Array2<f64>,
    t: f64,
    step: usize,
) -> Result<Array2<f64>> {
    let s = score.score_batch(x.view(), t, step)?;
    let b = DiffusionSchedule::drift_coef(t);
    let half_s2 = 0.5 * DiffusionSchedule::sigma2(t);
    Ok(x * b - &(s * half_s2))
}

fn check_finite(x: &Array2<f64>, step: usize, context: &'static str) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Divergence { step, context })
    }
}

fn check_start<S: ScoreFunction + ?Sized>(score: &S, y: &ArrayView2<f64>, cfg: &ScoreConfig) -> Result<()> {
    cfg.validate()?;
    if y.ncols() != score.dim() {
        return Err(Error::Shape {
            expected: format!("{} columns", score.dim()),
            got: y.ncols().to_string(),
        });
    }
    if y.iter().any(|v| !v.is_finite()) {
        return param("initial states must be finite");
    }
    Ok(())
}

/// Probability-flow ODE `dx/dt = b(t) x - sigma^2(t) S(x, t) / 2` from `t_max` to `t_min`,
/// one trajectory per row of `y`.
pub fn reverse_ode_integrate<S: ScoreFunction + ?Sized>(
    score: &S,
    y: ArrayView2<f64>,
    cfg: &ScoreConfig,
) -> Result<Array2<f64>> {
    check_start(score, &y, cfg)?;
    let nodes = cfg.time_nodes();
    let mut x = y.to_owned();
    for step in 0..cfg.steps {
        let (t0, t1) = (nodes[step], nodes[step + 1]);
        let h = t1 - t0;
        match cfg.integrator {
            Integrator::OdeEuler => {
                let k1 = ode_drift(score, &x, t0, step)?;
                x.scaled_add(h, &k1);
            }
            Integrator::OdeRk4 | Integrator::SdeEulerMaruyama => {
                let tm = t0 + 0.5 * h;
                let k1 = ode_drift(score, &x, t0, step)?;
                let k2 = ode_drift(score, &(&x + &(&k1 * (0.5 * h))), tm, step)?;
                let k3 = ode_drift(score, &(&x + &(&k2 * (0.5 * h))), tm, step)?;
                let k4 = ode_drift(score, &(&x + &(&k3 * h)), t1, step)?;
                let incr = (k1 + &(k2 * 2.0) + &(k3 * 2.0) + &k4) * (h / 6.0);
                x += &incr;
            }
        }
        check_finite(&x, step, "reverse ODE")?;
    }
    Ok(x)
}

/// Euler–Maruyama on the reverse SDE `dx = [b x - sigma^2 S] dt + sigma dW`.
/// Row `r` draws its noise from a stream seeded by `(noise_seed, row_offset + r)`.
pub fn reverse_sde_integrate<S: ScoreFunction + ?Sized>(
    score: &S,
    y: ArrayView2<f64>,
    cfg: &ScoreConfig,
    noise_seed: u64,
    row_offset: usize,
) -> Result<Array2<f64>> {
    euler_maruyama(score, y, cfg, noise_seed, row_offset, 1.0)
}

fn euler_maruyama<S: ScoreFunction + ?Sized>(
    score: &S,
    y: ArrayView2<f64>,
    cfg: &ScoreConfig,
    noise_seed: u64,
    row_offset: usize,
    noise_scale: f64,
) -> Result<Array2<f64>> {
    check_start(score, &y, cfg)?;
    let nodes = cfg.time_nodes();
    let mut rngs: Vec<_> = (0..y.nrows())
        .map(|r| rng_from(derive_seed(noise_seed, (row_offset + r) as u64)))
        .collect();
    let mut x = y.to_owned();
    for step in 0..cfg.steps {
        let (t0, t1) = (nodes[step], nodes[step + 1]);
        let h = t1 - t0;
        let s = score.score_batch(x.view(), t0, step)?;
        let b = DiffusionSchedule::drift_coef(t0);
        let s2 = DiffusionSchedule::sigma2(t0);
        let amp = noise_scale * (s2 * h.abs()).sqrt();
        for ((mut xr, sr), rng) in x.outer_iter_mut().zip(s.outer_iter()).zip(rngs.iter_mut()) {
            for (xv, &sv) in xr.iter_mut().zip(sr.iter()) {
                let z: f64 = StandardNormal.sample(rng);
                *xv += (b * *xv - s2 * sv) * h + amp * z;
            }
        }
        check_finite(&x, step, "reverse SDE")?;
    }
    Ok(x)
}

/// Draws `m` Gaussian inputs and maps each through the probability-flow ODE
/// driven by the Monte-Carlo score of `data`.
pub fn generate_labeled_pairs(data: ArrayView2<f64>, m: usize, cfg: &ScoreConfig) -> Result<LabeledPairs> {
    let score = McScore::new(data, cfg)?;
    let k = data.ncols();
    let mut rng = rng_from(stage_seed(cfg.rng_seed, "pairs-inputs"));
    let inputs = standard_normal_matrix(m, k, &mut rng);
    if m == 0 {
        return Ok(LabeledPairs {
            outputs: inputs.clone(),
            inputs,
        });
    }
    let outputs = match cfg.integrator {
        Integrator::SdeEulerMaruyama => reverse_sde_integrate(
            &score,
            inputs.view(),
            cfg,
            stage_seed(cfg.rng_seed, "pairs-noise"),
            0,
        )?,
        _ => reverse_ode_integrate(&score, inputs.view(), cfg)?,
    };
    Ok(LabeledPairs { inputs, outputs })
}
