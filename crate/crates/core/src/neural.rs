//! Small fully connected networks with hand-written backpropagation and Adam.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::rng::{rng_from, stage_seed, standard_normal_matrix, Rng};
use crate::score::{DiffusionSchedule, ScoreFunction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Softplus,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Softplus => {
                if z > 30.0 {
                    z
                } else {
                    z.exp().ln_1p()
                }
            }
        }
    }

    /// Derivative given pre-activation `z` and activation `a`.
    #[inline]
    fn deriv(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Softplus => 1.0 / (1.0 + (-z).exp()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Architecture {
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64, 64],
            activation: Activation::Tanh,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    Beta2,
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub rng_seed: u64,
    pub weighting: Weighting,
    /// Learning rate at the last epoch as a fraction of the initial one (cosine decay).
    pub final_lr_factor: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 500,
            batch_size: 128,
            rng_seed: 0,
            weighting: Weighting::Beta2,
            final_lr_factor: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return param(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            return param("batch_size must be at least 1");
        }
        if !(self.final_lr_factor > 0.0 && self.final_lr_factor <= 1.0) {
            return param(format!(
                "final_lr_factor must lie in (0, 1], got {}",
                self.final_lr_factor
            ));
        }
        Ok(())
    }

    fn lr_at(&self, epoch: usize) -> f64 {
        if self.epochs <= 1 || self.final_lr_factor == 1.0 {
            return self.learning_rate;
        }
        let f = epoch as f64 / (self.epochs - 1) as f64;
        let c = 0.5 * (1.0 + (std::f64::consts::PI * f).cos());
        self.learning_rate * (self.final_lr_factor + (1.0 - self.final_lr_factor) * c)
    }
}

/// Per-epoch mean losses.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub losses: Vec<f64>,
}

impl TrainReport {
    pub fn final_loss(&self) -> Option<f64> {
        self.losses.last().copied()
    }
}

/// Multilayer perceptron; the last layer is affine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "MlpRecord", try_from = "MlpRecord")]
pub struct Mlp {
    layer_sizes: Vec<usize>,
    /// `weights[l]` maps layer `l` to layer `l + 1`, shape `(out, in)`.
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
    activation: Activation,
}

#[derive(Serialize, Deserialize)]
struct MlpRecord {
    layer_sizes: Vec<usize>,
    activation: Activation,
    params: Vec<f64>,
}

impl From<Mlp> for MlpRecord {
    fn from(m: Mlp) -> Self {
        MlpRecord {
            params: m.flat_params(),
            layer_sizes: m.layer_sizes,
            activation: m.activation,
        }
    }
}

impl TryFrom<MlpRecord> for Mlp {
    type Error = Error;

    fn try_from(r: MlpRecord) -> Result<Self> {
        let mut m = Mlp::zeros(&r.layer_sizes, r.activation)?;
        if r.params.len() != m.n_params() {
            return Err(Error::Shape {
                expected: format!("{} parameters", m.n_params()),
                got: r.params.len().to_string(),
            });
        }
        m.set_flat_params(&r.params);
        Ok(m)
    }
}

/// Parameter-shaped gradient or optimizer moment.
#[derive(Debug, Clone)]
pub struct Grads {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl Grads {
    fn zeros_like(m: &Mlp) -> Self {
        Grads {
            weights: m.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            biases: m.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }
}

struct Tape {
    pre: Vec<Array2<f64>>,
    act: Vec<Array2<f64>>,
}

impl Mlp {
    pub fn zeros(layer_sizes: &[usize], activation: Activation) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
            return param(format!("invalid layer sizes {layer_sizes:?}"));
        }
        let weights = layer_sizes
            .windows(2)
            .map(|w| Array2::zeros((w[1], w[0])))
            .collect();
        let biases = layer_sizes[1..].iter().map(|&n| Array1::zeros(n)).collect();
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
            activation,
        })
    }

    /// LeCun-normal weights, zero biases.
    pub fn init(layer_sizes: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        let mut m = Self::zeros(layer_sizes, activation)?;
        let mut rng = rng_from(seed);
        for w in m.weights.iter_mut() {
            let fan_in = w.ncols() as f64;
            let dist = Normal::new(0.0, 1.0 / fan_in.sqrt()).expect("finite std");
            w.mapv_inplace(|_| dist.sample(&mut rng));
        }
        Ok(m)
    }

    pub fn with_architecture(input: usize, output: usize, arch: &Architecture, seed: u64) -> Result<Self> {
        let mut sizes = vec![input];
        sizes.extend(&arch.hidden);
        sizes.push(output);
        Self::init(&sizes, arch.activation, seed)
    }

    /// Single affine layer `W x + b`.
    pub fn affine(w: Array2<f64>, b: Array1<f64>) -> Result<Self> {
        if w.nrows() != b.len() {
            return param("bias length must equal weight rows");
        }
        Ok(Self {
            layer_sizes: vec![w.ncols(), w.nrows()],
            weights: vec![w],
            biases: vec![b],
            activation: Activation::Tanh,
        })
    }

    pub fn from_layers(layers: Vec<(Array2<f64>, Array1<f64>)>, activation: Activation) -> Result<Self> {
        if layers.is_empty() {
            return param("network needs at least one layer");
        }
        let mut sizes = vec![layers[0].0.ncols()];
        for (w, b) in &layers {
            if w.ncols() != *sizes.last().expect("non-empty") || w.nrows() != b.len() {
                return param("incompatible layer shapes");
            }
            sizes.push(w.nrows());
        }
        let (weights, biases) = layers.into_iter().unzip();
        Ok(Self {
            layer_sizes: sizes,
            weights,
            biases,
            activation,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().expect("at least two layers")
    }

    pub fn n_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }

    pub fn set_flat_params(&mut self, p: &[f64]) {
        let mut it = p.iter().copied();
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            w.iter_mut().for_each(|v| *v = it.next().expect("enough parameters"));
            b.iter_mut().for_each(|v| *v = it.next().expect("enough parameters"));
        }
    }

    fn check_input(&self, cols: usize) -> Result<()> {
        if cols != self.input_dim() {
            return Err(Error::Shape {
                expected: format!("input of width {}", self.input_dim()),
                got: cols.to_string(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, input: ArrayView1<f64>) -> Result<Array1<f64>> {
        let x = input.insert_axis(Axis(0));
        Ok(self.forward_batch(x)?.row(0).to_owned())
    }

    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(x.ncols())?;
        let last = self.weights.len() - 1;
        let mut a = x.to_owned();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = a.dot(&w.t());
            z += b;
            if l < last {
                let act = self.activation;
                z.mapv_inplace(|v| act.apply(v));
            }
            a = z;
        }
        Ok(a)
    }

    fn forward_tape(&self, x: ArrayView2<f64>) -> Tape {
        let last = self.weights.len() - 1;
        let mut pre = Vec::with_capacity(self.weights.len());
        let mut act = vec![x.to_owned()];
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = act[l].dot(&w.t());
            z += b;
            let a = if l < last {
                let f = self.activation;
                z.mapv(|v| f.apply(v))
            } else {
                z.clone()
            };
            pre.push(z);
            act.push(a);
        }
        Tape { pre, act }
    }

    /// Weighted squared-error loss `sum_b w_b |f(x_b) - y_b|^2 / (B * k)` and its gradient.
    pub fn loss_and_grad(
        &self,
        x: ArrayView2<f64>,
        y: ArrayView2<f64>,
        sample_weights: Option<ArrayView1<f64>>,
    ) -> Result<(f64, Grads)> {
        self.check_input(x.ncols())?;
        if y.nrows() != x.nrows() || y.ncols() != self.output_dim() {
            return Err(Error::Shape {
                expected: format!("{}x{} targets", x.nrows(), self.output_dim()),
                got: format!("{}x{}", y.nrows(), y.ncols()),
            });
        }
        let tape = self.forward_tape(x);
        let out = tape.act.last().expect("output layer");
        let norm = 1.0 / (x.nrows() * self.output_dim()).max(1) as f64;
        let mut delta = out - &y;
        let mut loss = 0.0;
        for (b, mut row) in delta.outer_iter_mut().enumerate() {
            let w = sample_weights.map_or(1.0, |sw| sw[b]);
            loss += w * row.iter().map(|v| v * v).sum::<f64>();
            row.mapv_inplace(|v| 2.0 * w * norm * v);
        }
        loss *= norm;
        let mut grads = Grads::zeros_like(self);
        let n_layers = self.weights.len();
        for l in (0..n_layers).rev() {
            if l < n_layers - 1 {
                let f = self.activation;
                ndarray::Zip::from(&mut delta)
                    .and(&tape.pre[l])
                    .and(&tape.act[l + 1])
                    .for_each(|d, &z, &a| *d *= f.deriv(z, a));
            }
            grads.weights[l] = delta.t().dot(&tape.act[l]);
            grads.biases[l] = delta.sum_axis(Axis(0));
            if l > 0 {
                delta = delta.dot(&self.weights[l]);
            }
        }
        Ok((loss, grads))
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| w.iter_mut().chain(b.iter_mut()))
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, net: &mut Mlp, grads: &Grads, lr: f64) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        self.t += 1;
        let c1 = 1.0 - B1.powi(self.t);
        let c2 = 1.0 - B2.powi(self.t);
        let g = grads.flat();
        for (((p, g), m), v) in net
            .params_mut()
            .zip(g.iter())
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *m = B1 * *m + (1.0 - B1) * g;
            *v = B2 * *v + (1.0 - B2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + EPS);
        }
    }
}

fn gather(a: ArrayView2<f64>, idx: &[usize]) -> Array2<f64> {
    a.select(Axis(0), idx)
}

/// Supervised regression of `outputs` on `inputs` with Adam on the mean squared error.
pub fn mlp_train_mse(
    inputs: ArrayView2<f64>,
    outputs: ArrayView2<f64>,
    arch: &Architecture,
    cfg: &TrainConfig,
) -> Result<(Mlp, TrainReport)> {
    cfg.validate()?;
    if inputs.nrows() == 0 {
        return param("training needs at least one pair");
    }
    if inputs.nrows() != outputs.nrows() {
        return Err(Error::Shape {
            expected: format!("{} output rows", inputs.nrows()),
            got: outputs.nrows().to_string(),
        });
    }
    let net = Mlp::with_architecture(
        inputs.ncols(),
        outputs.ncols(),
        arch,
        stage_seed(cfg.rng_seed, "mlp-init"),
    )?;
    train_mse_from(net, inputs, outputs, cfg)
}

/// Continues MSE training from an existing network.
pub fn train_mse_from(
    mut net: Mlp,
    inputs: ArrayView2<f64>,
    outputs: ArrayView2<f64>,
    cfg: &TrainConfig,
) -> Result<(Mlp, TrainReport)> {
    cfg.validate()?;
    let n = inputs.nrows();
    let mut rng = rng_from(stage_seed(cfg.rng_seed, "mlp-shuffle"));
    let mut adam = Adam::new(net.n_params());
    let mut order: Vec<usize> = (0..n).collect();
    let mut report = TrainReport::default();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let lr = cfg.lr_at(epoch);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let xb = gather(inputs, chunk);
            let yb = gather(outputs, chunk);
            let (loss, grads) = net.loss_and_grad(xb.view(), yb.view(), None)?;
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    step: epoch,
                    context: "MSE training",
                });
            }
            adam.step(&mut net, &grads, lr);
            total += loss * chunk.len() as f64;
        }
        report.losses.push(total / n as f64);
    }
    Ok((net, report))
}

/// Largest relative discrepancy between backpropagated and central-difference
/// gradients of the squared-error loss, over every parameter.
pub fn mlp_grad_check(net: &Mlp, x: ArrayView2<f64>, y: ArrayView2<f64>) -> Result<f64> {
    let (_, grads) = net.loss_and_grad(x, y, None)?;
    let analytic = grads.flat();
    let base = net.flat_params();
    let h = 1e-5;
    let mut probe = net.clone();
    let mut worst = 0.0f64;
    for i in 0..base.len() {
        let mut p = base.clone();
        p[i] = base[i] + h;
        probe.set_flat_params(&p);
        let (lp, _) = probe.loss_and_grad(x, y, None)?;
        p[i] = base[i] - h;
        probe.set_flat_params(&p);
        let (lm, _) = probe.loss_and_grad(x, y, None)?;
        let fd = (lp - lm) / (2.0 * h);
        let scale = fd.abs().max(analytic[i].abs()).max(1e-7);
        worst = worst.max((fd - analytic[i]).abs() / scale);
    }
    Ok(worst)
}

/// Maps `m` standard-normal draws through the network.
pub fn nn_sample(net: &Mlp, m: usize, seed: u64) -> Result<Array2<f64>> {
    let mut rng = rng_from(seed);
    let z = standard_normal_matrix(m, net.input_dim(), &mut rng);
    if m == 0 {
        return Ok(Array2::zeros((0, net.output_dim())));
    }
    net.forward_batch(z.view())
}

/// Score network `s(x, t) = net([x, t]) / beta_t`.
///
/// Dividing by `beta_t` lets the network predict the bounded quantity `-noise`
/// instead of a score that grows like `1 / beta_t` near `t = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreNet {
    pub net: Mlp,
    pub schedule: DiffusionSchedule,
}

impl ScoreNet {
    pub fn eval(&self, x: ArrayView2<f64>, t: f64) -> Result<Array2<f64>> {
        let k = x.ncols();
        let mut inp = Array2::from_elem((x.nrows(), k + 1), t);
        inp.slice_mut(s![.., ..k]).assign(&x);
        let out = self.net.forward_batch(inp.view())?;
        Ok(out / DiffusionSchedule::beta2(t).sqrt())
    }
}

impl ScoreFunction for ScoreNet {
    fn dim(&self) -> usize {
        self.net.output_dim()
    }

    fn score_batch(&self, x: ArrayView2<f64>, t: f64, _step: usize) -> Result<Array2<f64>> {
        self.eval(x, t)
    }
}

/// Denoising score matching with `x_t = alpha_t x0 + beta_t eps` and target
/// `-eps / beta_t`, weighted by `lambda(t)`.
pub fn train_score_matching(
    data: ArrayView2<f64>,
    arch: &Architecture,
    cfg: &TrainConfig,
    schedule: DiffusionSchedule,
) -> Result<(ScoreNet, TrainReport)> {
    cfg.validate()?;
    schedule.validate()?;
    let (n, k) = data.dim();
    if n == 0 || k == 0 {
        return param("score matching needs non-empty data");
    }
    let mut net = Mlp::with_architecture(k + 1, k, arch, stage_seed(cfg.rng_seed, "score-init"))?;
    let mut rng: Rng = rng_from(stage_seed(cfg.rng_seed, "score-batches"));
    let mut adam = Adam::new(net.n_params());
    let mut order: Vec<usize> = (0..n).collect();
    let mut report = TrainReport::default();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let lr = cfg.lr_at(epoch);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let b = chunk.len();
            let mut inp = Array2::zeros((b, k + 1));
            let mut tgt = Array2::zeros((b, k));
            let mut w = Array1::zeros(b);
            for (r, &i) in chunk.iter().enumerate() {
                let t = rng.random_range(schedule.t_min..schedule.t_max);
                let alpha = DiffusionSchedule::alpha(t);
                let beta = DiffusionSchedule::beta2(t).sqrt();
                for c in 0..k {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    inp[[r, c]] = alpha * data[[i, c]] + beta * e;
                    // net output equals beta * s, so the target is -eps
                    tgt[[r, c]] = -e;
                }
                inp[[r, k]] = t;
                // lambda(t) |s - target|^2 = lambda(t) / beta^2 |net - (-eps)|^2
                w[r] = match cfg.weighting {
                    Weighting::Beta2 => 1.0,
                    Weighting::Constant => 1.0 / (beta * beta),
                };
            }
            let (loss, grads) = net.loss_and_grad(inp.view(), tgt.view(), Some(w.view()))?;
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    step: epoch,
                    context: "score matching",
                });
            }
            adam.step(&mut net, &grads, lr);
            total += loss * b as f64;
        }
        report.losses.push(total / n as f64);
    }
    Ok((ScoreNet { net, schedule }, report))
}
