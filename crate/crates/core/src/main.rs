use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use manifold_sampler::dmaps::AmbientDataset;
use manifold_sampler::error::{Error, Result};
use manifold_sampler::io::{read_csv, read_json, write_csv, write_json};
use manifold_sampler::latent_harmonics::GHModel;
use manifold_sampler::pipeline::{self, DataSource, Method, PipelineConfig};
use manifold_sampler::scurve::{gen_s_curve, DEFAULT_T_RANGE};

#[derive(Parser)]
#[command(name = "manifold-sampler", version, about = "Generative sampling on data manifolds")]
struct Cli {
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample the S-curve benchmark surface.
    GenData {
        #[arg(long, default_value_t = 3000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_T_RANGE.0, allow_negative_numbers = true)]
        t_min: f64,
        #[arg(long, default_value_t = DEFAULT_T_RANGE.1, allow_negative_numbers = true)]
        t_max: f64,
    },
    /// Fit the Diffusion Maps embedding and the lifting model.
    Fit {
        #[command(flatten)]
        common: Common,
    },
    /// Run a full sampling pipeline.
    Sample {
        #[arg(long, value_parser = ["msgm1", "msgm2", "mplom"])]
        method: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Lift latent points to the ambient space with a fitted model.
    Lift {
        /// Lifting model written by `fit` or `sample`.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare two sample sets.
    Eval {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Also report distances to the S-curve surface.
        #[arg(long)]
        s_curve: bool,
    },
}

#[derive(clap::Args)]
struct Common {
    /// JSON pipeline configuration; omitted fields take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// CSV dataset, overriding the configured data source.
    #[arg(long)]
    data: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(p) => read_json(p)?,
            None => PipelineConfig::s_curve(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.out_dir = Some(o.clone());
        }
        if let Some(d) = &self.data {
            cfg.data = DataSource::Csv { path: d.clone() };
        }
        Ok(cfg)
    }
}

fn out_dir(cfg: &PipelineConfig) -> PathBuf {
    cfg.out_dir.clone().unwrap_or_else(|| PathBuf::from("."))
}

fn fit_only(cfg: &PipelineConfig) -> Result<()> {
    cfg.validate()?;
    let dir = out_dir(cfg);
    let loaded = pipeline::load_data(&cfg.data, cfg.seed)?;
    write_csv(dir.join("data.csv"), &loaded.headers, loaded.dataset.points())?;
    let fit = pipeline::fit_manifold(&loaded.dataset, cfg)?;
    write_json(dir.join("dmaps.json"), &fit.dmaps)?;
    if let Some(r) = &fit.residuals {
        write_json(dir.join("residuals.json"), r)?;
    }
    write_json(dir.join("gh.json"), &fit.gh)?;
    let headers = manifold_sampler::io::numbered_headers("phi", fit.latent.ncols());
    write_csv(dir.join("latent.csv"), &headers, fit.latent.view())
}

fn lift(model: &Path, input: &Path, out: &Path) -> Result<()> {
    let gh: GHModel = read_json(model)?;
    let t = read_csv(input)?;
    let lifted = gh.lift(t.data.view())?;
    let headers = manifold_sampler::io::numbered_headers("x", lifted.ncols());
    write_csv(out.join("lifted.csv"), &headers, lifted.view())
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData {
            n,
            seed,
            out,
            t_min,
            t_max,
        } => {
            let s = gen_s_curve(n, (t_min, t_max), seed)?;
            let headers = vec!["x".to_string(), "y".to_string(), "z".to_string()];
            write_csv(out.join("data.csv"), &headers, s.points.view())?;
            let t = s.t.insert_axis(ndarray::Axis(1));
            write_csv(out.join("t.csv"), &["t".to_string()], t.view())
        }
        Command::Fit { common } => fit_only(&common.load()?),
        Command::Sample { method, common } => {
            let mut cfg = common.load()?;
            if let Some(m) = method {
                cfg.method = m.parse::<Method>()?;
            }
            cfg.out_dir = Some(out_dir(&cfg));
            let r = pipeline::run(&cfg)?;
            eprintln!(
                "{}: {} samples, max KS {:.4}",
                r.report.method,
                r.report.n_output,
                r.report.ambient.max_ks()
            );
            Ok(())
        }
        Command::Lift { model, input, out } => lift(&model, &input, &out),
        Command::Eval { a, b, out, s_curve } => {
            let ta = read_csv(&a)?;
            let tb = read_csv(&b)?;
            // validates finiteness and size like training data
            AmbientDataset::new(ta.data.clone(), None)?;
            let range = s_curve.then_some(DEFAULT_T_RANGE);
            let r = pipeline::evaluate(ta.data.view(), tb.data.view(), range)?;
            write_json(out.join("metrics.json"), &r)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    if e.is_numeric() {
        2
    } else {
        1
    }
}
