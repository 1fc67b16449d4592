//! End-to-end runs: embedding, latent sampling, filtering, lifting and metrics.

use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::dmaps::{
    fit_dmaps, tune_epsilon, AmbientDataset, DMapsConfig, DMapsModel, ResidualReport,
    DEFAULT_BANDWIDTH_FACTOR, DEFAULT_RESIDUAL_THRESHOLD,
};
use crate::error::{param, Error, Result};
use crate::filter::{build_index, mean_nearest_distance, select_neighbor_indices};
use crate::io::{numbered_headers, read_csv, write_csv, write_json};
use crate::latent_harmonics::{fit_latent_harmonics, GHConfig, GHModel};
use crate::metrics::{marginal_metrics, MarginalMetrics};
use crate::neural::{
    mlp_train_mse, nn_sample, train_score_matching, Architecture, TrainConfig, TrainReport,
};
use crate::plom::{fit_plom, isde_run, PlomConfig};
use crate::rng::{rng_from, stage_seed, standard_normal_matrix};
use crate::score::{
    generate_labeled_pairs, reverse_ode_integrate, reverse_sde_integrate, Integrator, ScoreConfig,
};
use crate::scurve::{gen_s_curve, SManifold, DEFAULT_GRID};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Msgm1,
    Msgm2,
    Mplom,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Msgm1 => "msgm1",
            Method::Msgm2 => "msgm2",
            Method::Mplom => "mplom",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "msgm1" => Ok(Method::Msgm1),
            "msgm2" => Ok(Method::Msgm2),
            "mplom" => Ok(Method::Mplom),
            _ => param(format!("unknown method {s:?} (expected msgm1, msgm2 or mplom)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    SCurve { n: usize, t_range: (f64, f64) },
    Csv { path: PathBuf },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::SCurve {
            n: 3000,
            t_range: crate::scurve::DEFAULT_T_RANGE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DMapsSettings {
    /// `None` uses the median heuristic.
    pub epsilon: Option<f64>,
    pub alpha: f64,
    pub n_eig: usize,
    pub residual_threshold: f64,
    pub bandwidth_factor: f64,
    /// Skips the residual test and uses these eigenvector indices.
    pub selected: Option<Vec<usize>>,
}

impl Default for DMapsSettings {
    fn default() -> Self {
        Self {
            epsilon: None,
            alpha: 1.0,
            n_eig: 10,
            residual_threshold: DEFAULT_RESIDUAL_THRESHOLD,
            bandwidth_factor: DEFAULT_BANDWIDTH_FACTOR,
            selected: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    /// Neighbors kept per training point.
    pub n: usize,
    /// Number of latent samples generated before filtering.
    pub oversample: usize,
    pub dedup: bool,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            n: 10,
            oversample: 100_000,
            dedup: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Msgm1Config {
    pub n_pairs: usize,
    pub arch: Architecture,
    pub train: TrainConfig,
}

impl Default for Msgm1Config {
    fn default() -> Self {
        Self {
            n_pairs: 5000,
            arch: Architecture::default(),
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Msgm2Config {
    pub arch: Architecture,
    pub train: TrainConfig,
    /// Integrator for sampling with the learned score.
    pub integrator: Integrator,
    pub steps: usize,
}

impl Default for Msgm2Config {
    fn default() -> Self {
        Self {
            arch: Architecture::default(),
            train: TrainConfig {
                epochs: 2000,
                ..TrainConfig::default()
            },
            integrator: Integrator::SdeEulerMaruyama,
            steps: 500,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlomRunConfig {
    pub params: PlomConfig,
    /// Realizations to generate; `None` means `filter.n * N`.
    pub n_samples: Option<usize>,
}

impl Default for PlomRunConfig {
    fn default() -> Self {
        Self {
            params: PlomConfig::default(),
            n_samples: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Size of the fresh reference draw for generator-backed data.
    pub reference_n: usize,
    pub histogram_bins: usize,
    /// Lifted unfiltered samples used for the filter comparison; 0 disables it.
    pub unfiltered_probe: usize,
    pub baseline_samples: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            reference_n: 30_000,
            histogram_bins: 50,
            unfiltered_probe: 30_000,
            baseline_samples: 5000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub method: Method,
    pub seed: u64,
    pub data: DataSource,
    pub dmaps: DMapsSettings,
    pub gh: GHConfig,
    /// Z-score latent coordinates before sampling.
    pub standardize_latent: bool,
    pub score: ScoreConfig,
    pub msgm1: Msgm1Config,
    pub msgm2: Msgm2Config,
    pub plom: PlomRunConfig,
    pub filter: FilterConfig,
    pub eval: EvalConfig,
    pub out_dir: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            method: Method::Msgm1,
            seed: 0,
            data: DataSource::default(),
            dmaps: DMapsSettings::default(),
            gh: GHConfig::default(),
            standardize_latent: true,
            score: ScoreConfig::default(),
            msgm1: Msgm1Config::default(),
            msgm2: Msgm2Config::default(),
            plom: PlomRunConfig::default(),
            filter: FilterConfig::default(),
            eval: EvalConfig::default(),
            out_dir: None,
        }
    }
}

impl PipelineConfig {
    /// Settings for the S-curve benchmark: kernel bandwidths that resolve the two
    /// non-harmonic coordinates and a tight lifting bandwidth.
    pub fn s_curve() -> Self {
        Self {
            dmaps: DMapsSettings {
                epsilon: Some(0.1),
                n_eig: 11,
                ..DMapsSettings::default()
            },
            gh: GHConfig {
                epsilon2_factor: 0.02,
                ..GHConfig::default()
            },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.score.validate()?;
        self.msgm1.train.validate()?;
        self.msgm2.train.validate()?;
        self.plom.params.validate()?;
        if self.filter.n == 0 {
            return Err(Error::Config("filter.n must be at least 1".into()));
        }
        if self.msgm2.steps < 10 {
            return Err(Error::Config("msgm2.steps must be at least 10".into()));
        }
        if let DataSource::SCurve { n, t_range } = self.data {
            if n < 2 || !(t_range.0 < t_range.1) {
                return Err(Error::Config("s_curve needs n >= 2 and a non-empty t_range".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceStats {
    pub mean: f64,
    pub max: f64,
}

impl DistanceStats {
    fn from(d: &[f64]) -> Self {
        let mean = if d.is_empty() { 0.0 } else { d.iter().sum::<f64>() / d.len() as f64 };
        Self {
            mean,
            max: d.iter().copied().fold(0.0, f64::max),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method: String,
    pub seed: u64,
    pub n_train: usize,
    pub latent_dim: usize,
    pub selected_coords: Vec<usize>,
    pub residuals: Option<Vec<f64>>,
    pub n_generated: usize,
    pub n_selected: usize,
    pub n_output: usize,
    pub n_reference: usize,
    /// Output vs reference, per ambient coordinate.
    pub ambient: MarginalMetrics,
    /// Selected latent samples vs training latent coordinates.
    pub latent: MarginalMetrics,
    /// Distance of the output to the nearest training point.
    pub distance_to_data: DistanceStats,
    /// Distance to the analytic surface, for generator-backed data.
    pub distance_to_manifold: Option<DistanceStats>,
    /// Same, for unfiltered generated samples lifted directly.
    pub unfiltered_distance_to_manifold: Option<DistanceStats>,
    pub plom_spectrum: Option<Vec<f64>>,
    pub plom_basis_size: Option<usize>,
    pub timings: Vec<StageTiming>,
}

struct Timer {
    stages: Vec<StageTiming>,
    last: Instant,
}

impl Timer {
    fn new() -> Self {
        Self {
            stages: Vec::new(),
            last: Instant::now(),
        }
    }

    fn lap(&mut self, stage: &str) {
        let now = Instant::now();
        let seconds = (now - self.last).as_secs_f64();
        info!("{stage}: {seconds:.2} s");
        self.stages.push(StageTiming {
            stage: stage.to_string(),
            seconds,
        });
        self.last = now;
    }
}

/// Training data plus optional ground truth.
#[derive(Debug, Clone)]
pub struct LoadedData {
    pub dataset: AmbientDataset,
    pub headers: Vec<String>,
    pub t_range: Option<(f64, f64)>,
}

pub fn load_data(source: &DataSource, seed: u64) -> Result<LoadedData> {
    match source {
        DataSource::SCurve { n, t_range } => {
            let s = gen_s_curve(*n, *t_range, stage_seed(seed, "data"))?;
            let headers = vec!["x".to_string(), "y".to_string(), "z".to_string()];
            Ok(LoadedData {
                dataset: AmbientDataset::new(s.points, Some(headers.clone()))?,
                headers,
                t_range: Some(*t_range),
            })
        }
        DataSource::Csv { path } => {
            let t = read_csv(path)?;
            Ok(LoadedData {
                dataset: AmbientDataset::new(t.data, Some(t.headers.clone()))?,
                headers: t.headers,
                t_range: None,
            })
        }
    }
}

/// Diffusion Maps embedding plus the lifting model.
#[derive(Debug, Clone)]
pub struct ManifoldFit {
    pub dmaps: DMapsModel,
    pub residuals: Option<ResidualReport>,
    pub latent: Array2<f64>,
    pub gh: GHModel,
}

pub fn fit_manifold(data: &AmbientDataset, cfg: &PipelineConfig) -> Result<ManifoldFit> {
    let epsilon = match cfg.dmaps.epsilon {
        Some(e) => e,
        None => tune_epsilon(data.points())?,
    };
    let n_eig = cfg.dmaps.n_eig.min(data.len() - 1);
    let mut dmaps = fit_dmaps(
        data,
        DMapsConfig {
            epsilon,
            alpha: cfg.dmaps.alpha,
            n_eig,
        },
    )?;
    let residuals = match &cfg.dmaps.selected {
        Some(sel) => {
            if sel.is_empty() || sel.iter().any(|&i| i == 0 || i > n_eig) {
                return Err(Error::Config(format!(
                    "selected coordinates must lie in [1, {n_eig}]"
                )));
            }
            dmaps.selected = sel.clone();
            None
        }
        None => Some(dmaps.select_nonharmonic(
            cfg.dmaps.bandwidth_factor,
            cfg.dmaps.residual_threshold,
        )?),
    };
    info!("selected latent coordinates {:?}", dmaps.selected);
    let latent = dmaps.latent_coords();
    let eps2 = cfg.gh.resolve_epsilon(latent.view())?;
    let gh = fit_latent_harmonics(latent.view(), data.points(), eps2, cfg.gh.cutoff_delta)?;
    Ok(ManifoldFit {
        dmaps,
        residuals,
        latent,
        gh,
    })
}

/// Per-column affine normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Array1<f64>,
    pub scale: Array1<f64>,
}

impl Standardizer {
    pub fn fit(x: ArrayView2<f64>, enabled: bool) -> Self {
        let k = x.ncols();
        if !enabled || x.nrows() < 2 {
            return Self {
                mean: Array1::zeros(k),
                scale: Array1::ones(k),
            };
        }
        let mean = x.mean_axis(Axis(0)).expect("non-empty");
        let scale = x.std_axis(Axis(0), 1.0).mapv(|s| if s > 0.0 { s } else { 1.0 });
        Self { mean, scale }
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        (&x - &self.mean) / &self.scale
    }

    pub fn inverse(&self, z: ArrayView2<f64>) -> Array2<f64> {
        &z * &self.scale + &self.mean
    }
}

fn write_losses(path: &Path, r: &TrainReport) -> Result<()> {
    let data = Array2::from_shape_fn((r.losses.len(), 2), |(i, j)| {
        if j == 0 { i as f64 } else { r.losses[i] }
    });
    write_csv(path, &["epoch".to_string(), "loss".to_string()], data.view())
}

fn histograms(a: ArrayView2<f64>, b: ArrayView2<f64>, bins: usize) -> Array2<f64> {
    let k = a.ncols();
    let mut out = Array2::zeros((k * bins, 5));
    for c in 0..k {
        let (lo, hi) = a
            .column(c)
            .iter()
            .chain(b.column(c).iter())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
        let width = ((hi - lo) / bins as f64).max(f64::MIN_POSITIVE);
        let count = |x: ndarray::ArrayView1<f64>| {
            let mut h = vec![0.0; bins];
            for &v in x {
                let i = (((v - lo) / width) as usize).min(bins - 1);
                h[i] += 1.0;
            }
            let norm = x.len().max(1) as f64 * width;
            h.into_iter().map(move |v| v / norm).collect::<Vec<_>>()
        };
        let ha = count(a.column(c));
        let hb = count(b.column(c));
        for i in 0..bins {
            let r = c * bins + i;
            out[[r, 0]] = c as f64;
            out[[r, 1]] = lo + width * i as f64;
            out[[r, 2]] = lo + width * (i + 1) as f64;
            out[[r, 3]] = ha[i];
            out[[r, 4]] = hb[i];
        }
    }
    out
}

/// Artifact writer; a no-op without an output directory.
struct Artifacts {
    dir: Option<PathBuf>,
}

impl Artifacts {
    fn path(&self, name: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(name))
    }

    fn csv(&self, name: &str, headers: &[String], data: ArrayView2<f64>) -> Result<()> {
        match self.path(name) {
            Some(p) => write_csv(p, headers, data),
            None => Ok(()),
        }
    }

    fn json<T: Serialize + ?Sized>(&self, name: &str, v: &T) -> Result<()> {
        match self.path(name) {
            Some(p) => write_json(p, v),
            None => Ok(()),
        }
    }

    fn losses(&self, name: &str, r: &TrainReport) -> Result<()> {
        match self.path(name) {
            Some(p) => write_losses(&p, r),
            None => Ok(()),
        }
    }
}

/// Everything a run produced, besides the report.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: MetricsReport,
    pub samples: Array2<f64>,
    pub reference: Array2<f64>,
    pub generated_latent: Array2<f64>,
    pub selected_latent: Array2<f64>,
    pub fit: ManifoldFit,
}

/// Evaluation of a finished sample set against a reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_a: usize,
    pub n_b: usize,
    pub marginals: MarginalMetrics,
    pub distance_to_manifold: Option<DistanceStats>,
}

pub fn evaluate(a: ArrayView2<f64>, b: ArrayView2<f64>, s_curve: Option<(f64, f64)>) -> Result<EvalReport> {
    let marginals = marginal_metrics(a, b)?;
    let distance_to_manifold = match s_curve {
        Some(r) => {
            if a.ncols() != 3 {
                return param("surface distance needs three columns");
            }
            let m = SManifold::new(r, DEFAULT_GRID)?;
            Some(DistanceStats::from(&m.distances(a)))
        }
        None => None,
    };
    Ok(EvalReport {
        n_a: a.nrows(),
        n_b: b.nrows(),
        marginals,
        distance_to_manifold,
    })
}

fn reference_set(loaded: &LoadedData, cfg: &PipelineConfig) -> Result<Array2<f64>> {
    match (&cfg.data, loaded.t_range) {
        (DataSource::SCurve { .. }, Some(r)) => {
            Ok(gen_s_curve(cfg.eval.reference_n, r, stage_seed(cfg.seed, "reference"))?.points)
        }
        _ => Ok(loaded.dataset.points().to_owned()),
    }
}

/// Runs the configured method end to end. Artifacts are written as each stage
/// finishes when `cfg.out_dir` is set.
pub fn run(cfg: &PipelineConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let art = Artifacts {
        dir: cfg.out_dir.clone(),
    };
    art.json("config.json", cfg)?;
    let mut timer = Timer::new();
    let loaded = load_data(&cfg.data, cfg.seed)?;
    let data = &loaded.dataset;
    art.csv("data.csv", &loaded.headers, data.points())?;
    timer.lap("load");

    let fit = fit_manifold(data, cfg)?;
    let k = fit.latent.ncols();
    let latent_headers = numbered_headers("phi", k);
    art.json("dmaps.json", &fit.dmaps)?;
    if let Some(r) = &fit.residuals {
        art.json("residuals.json", r)?;
    }
    art.json("gh.json", &fit.gh)?;
    art.csv("latent.csv", &latent_headers, fit.latent.view())?;
    timer.lap("embed");

    let std = Standardizer::fit(fit.latent.view(), cfg.standardize_latent);
    let z_train = std.forward(fit.latent.view());
    let n_train = data.len();
    let mut plom_spectrum = None;
    let mut plom_basis_size = None;

    let (generated, filtered) = match cfg.method {
        Method::Msgm1 => {
            let score_cfg = ScoreConfig {
                rng_seed: stage_seed(cfg.seed, "msgm1-score"),
                ..cfg.score
            };
            let pairs = generate_labeled_pairs(z_train.view(), cfg.msgm1.n_pairs, &score_cfg)?;
            let pair_mat = ndarray::concatenate![Axis(1), pairs.inputs, pairs.outputs];
            let mut ph = numbered_headers("y", k);
            ph.extend(latent_headers.iter().cloned());
            art.csv("pairs.csv", &ph, pair_mat.view())?;
            drop(pair_mat);
            timer.lap("labeled_pairs");
            let train = TrainConfig {
                rng_seed: stage_seed(cfg.seed, "msgm1-train"),
                ..cfg.msgm1.train
            };
            let (net, report) = mlp_train_mse(pairs.inputs.view(), pairs.outputs.view(), &cfg.msgm1.arch, &train)?;
            art.json("generator.json", &net)?;
            art.losses("generator_loss.csv", &report)?;
            timer.lap("train_generator");
            let z = nn_sample(&net, cfg.filter.oversample, stage_seed(cfg.seed, "msgm1-sample"))?;
            timer.lap("generate");
            (std.inverse(z.view()), true)
        }
        Method::Msgm2 => {
            let train = TrainConfig {
                rng_seed: stage_seed(cfg.seed, "msgm2-train"),
                ..cfg.msgm2.train
            };
            let (net, report) = train_score_matching(z_train.view(), &cfg.msgm2.arch, &train, cfg.score.schedule)?;
            art.json("score_net.json", &net)?;
            art.losses("score_loss.csv", &report)?;
            timer.lap("train_score");
            let icfg = ScoreConfig {
                steps: cfg.msgm2.steps,
                integrator: cfg.msgm2.integrator,
                rng_seed: stage_seed(cfg.seed, "msgm2-sample"),
                ..cfg.score
            };
            let mut rng = rng_from(stage_seed(cfg.seed, "msgm2-init"));
            let y = standard_normal_matrix(cfg.filter.oversample, k, &mut rng);
            let noise_seed = stage_seed(cfg.seed, "msgm2-noise");
            let mut z = Array2::zeros((y.nrows(), k));
            const CHUNK: usize = 4096;
            let mut start = 0;
            while start < y.nrows() {
                let end = (start + CHUNK).min(y.nrows());
                let yc = y.slice(ndarray::s![start..end, ..]);
                let out = match icfg.integrator {
                    Integrator::SdeEulerMaruyama => reverse_sde_integrate(&net, yc, &icfg, noise_seed, start)?,
                    _ => reverse_ode_integrate(&net, yc, &icfg)?,
                };
                z.slice_mut(ndarray::s![start..end, ..]).assign(&out);
                start = end;
            }
            timer.lap("generate");
            (std.inverse(z.view()), true)
        }
        Method::Mplom => {
            let model = fit_plom(z_train.view(), &cfg.plom.params)?;
            plom_spectrum = Some(model.spectrum.clone());
            plom_basis_size = Some(model.m);
            art.json("plom.json", &model)?;
            timer.lap("fit_plom");
            let n = cfg.plom.n_samples.unwrap_or(cfg.filter.n * n_train);
            let h = isde_run(&model, n, stage_seed(cfg.seed, "mplom-isde"))?;
            let z = model.pca.reconstruct(h.view());
            timer.lap("generate");
            (std.inverse(z.view()), false)
        }
    };
    art.csv("generated_latent.csv", &latent_headers, generated.view())?;

    let selected = if filtered {
        let index = build_index(generated.view())?;
        let idx = select_neighbor_indices(&index, fit.latent.view(), cfg.filter.n, cfg.filter.dedup)?;
        generated.select(Axis(0), &idx)
    } else {
        generated.clone()
    };
    art.csv("selected_latent.csv", &latent_headers, selected.view())?;
    timer.lap("filter");

    let samples = fit.gh.lift(selected.view())?;
    art.csv("samples.csv", &loaded.headers, samples.view())?;
    timer.lap("lift");

    let reference = reference_set(&loaded, cfg)?;
    art.csv("reference.csv", &loaded.headers, reference.view())?;
    let ambient = marginal_metrics(samples.view(), reference.view())?;
    let latent = marginal_metrics(selected.view(), fit.latent.view())?;
    let data_index = build_index(data.points())?;
    let d_data = mean_nearest_distance(samples.view(), &data_index);
    let max_d_data = {
        let mut q = vec![0.0; samples.ncols()];
        samples
            .outer_iter()
            .map(|r| {
                q.iter_mut().zip(r.iter()).for_each(|(a, &b)| *a = b);
                data_index.knn(&q, 1)[0].sq_dist.sqrt()
            })
            .fold(0.0, f64::max)
    };
    let (distance_to_manifold, unfiltered) = match loaded.t_range {
        Some(r) if samples.ncols() == 3 => {
            let m = SManifold::new(r, DEFAULT_GRID)?;
            let d = DistanceStats::from(&m.distances(samples.view()));
            let u = if filtered && cfg.eval.unfiltered_probe > 0 {
                let probe = cfg.eval.unfiltered_probe.min(generated.nrows());
                let lifted = fit.gh.lift(generated.slice(ndarray::s![..probe, ..]))?;
                Some(DistanceStats::from(&m.distances(lifted.view())))
            } else {
                None
            };
            (Some(d), u)
        }
        _ => (None, None),
    };
    if let Some(p) = art.path("histograms.csv") {
        let h = histograms(samples.view(), reference.view(), cfg.eval.histogram_bins.max(1));
        let headers: Vec<String> = ["coord", "bin_lo", "bin_hi", "density_samples", "density_reference"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        write_csv(p, &headers, h.view())?;
    }
    timer.lap("metrics");

    let report = MetricsReport {
        method: cfg.method.name().to_string(),
        seed: cfg.seed,
        n_train,
        latent_dim: k,
        selected_coords: fit.dmaps.selected.clone(),
        residuals: fit.residuals.as_ref().map(|r| r.residuals.clone()),
        n_generated: generated.nrows(),
        n_selected: selected.nrows(),
        n_output: samples.nrows(),
        n_reference: reference.nrows(),
        ambient,
        latent,
        distance_to_data: DistanceStats {
            mean: d_data,
            max: max_d_data,
        },
        distance_to_manifold,
        unfiltered_distance_to_manifold: unfiltered,
        plom_spectrum,
        plom_basis_size,
        timings: timer.stages,
    };
    art.json("metrics.json", &report)?;
    Ok(RunOutput {
        report,
        samples,
        reference,
        generated_latent: generated,
        selected_latent: selected,
        fit,
    })
}

/// Score-based sampling directly in the ambient space, without the latent
/// embedding, filter or lift. Returns the raw samples.
pub fn run_ambient_baseline(cfg: &PipelineConfig) -> Result<Array2<f64>> {
    cfg.validate()?;
    let loaded = load_data(&cfg.data, cfg.seed)?;
    let x = loaded.dataset.points();
    let std = Standardizer::fit(x, true);
    let z = std.forward(x);
    let score_cfg = ScoreConfig {
        rng_seed: stage_seed(cfg.seed, "baseline-score"),
        ..cfg.score
    };
    let pairs = generate_labeled_pairs(z.view(), cfg.msgm1.n_pairs, &score_cfg)?;
    let train = TrainConfig {
        rng_seed: stage_seed(cfg.seed, "baseline-train"),
        ..cfg.msgm1.train
    };
    let (net, _) = mlp_train_mse(pairs.inputs.view(), pairs.outputs.view(), &cfg.msgm1.arch, &train)?;
    let s = nn_sample(&net, cfg.eval.baseline_samples, stage_seed(cfg.seed, "baseline-sample"))?;
    Ok(std.inverse(s.view()))
}
