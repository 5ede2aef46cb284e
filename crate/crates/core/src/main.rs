//! Command-line front end.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sa_diffusion::checkpoint::Checkpoint;
use sa_diffusion::dataset;
use sa_diffusion::error::{Error, Result};
use sa_diffusion::experiment::{run_experiment, ExperimentConfig};
use sa_diffusion::forward::DataBatch;
use sa_diffusion::gap::{bounds_check_exact, bounds_check_mc, gap_experiment_x_start};
use sa_diffusion::sampler::{self, SamplerKind};
use sa_diffusion::training;

/// Environment variable naming the default output root.
const OUT_ENV: &str = "SA_DIFFUSION_OUT";

#[derive(Parser)]
#[command(name = "sa-diffusion", about = "Sequence-aware diffusion models on synthetic 2-D data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model per the config and write checkpoint + metrics.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the training seed from the config.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample from a trained checkpoint.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Config supplying the noise schedule; defaults to the standard
        /// linear schedule at the checkpoint's timestep count.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "ddpm")]
        kind: CliSamplerKind,
        #[arg(long)]
        n_steps: Option<usize>,
        #[arg(long, default_value_t = 1024)]
        batch: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also dump every intermediate state.
        #[arg(long)]
        trajectory: bool,
    },
    /// Evaluate the cumulative estimation gap of a checkpoint.
    GapEval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Verify the loss-bound inequalities for a (possibly untrained) model.
    BoundsCheck {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Monte-Carlo draws; exact finite-sum evaluation when omitted.
        #[arg(long)]
        mc: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write all schedule coefficient columns as CSV.
    ScheduleDump {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the full train -> sample -> metrics -> gap pipeline.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum CliSamplerKind {
    Ddpm,
    Ddim,
}

impl From<CliSamplerKind> for SamplerKind {
    fn from(k: CliSamplerKind) -> SamplerKind {
        match k {
            CliSamplerKind::Ddpm => SamplerKind::Ddpm,
            CliSamplerKind::Ddim => SamplerKind::Ddim,
        }
    }
}

fn out_dir(flag: Option<PathBuf>, cfg: Option<&PathBuf>, name: &str) -> PathBuf {
    flag.or_else(|| cfg.cloned())
        .or_else(|| std::env::var_os(OUT_ENV).map(|v| PathBuf::from(v).join(name)))
        .unwrap_or_else(|| PathBuf::from("out").join(name))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))
}

fn write_file(path: &Path, write: impl FnOnce(&mut dyn std::io::Write) -> std::io::Result<()>) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = std::io::BufWriter::new(file);
    write(&mut w).map_err(|e| Error::io(path.display().to_string(), e))?;
    use std::io::Write;
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, seed, out } => {
            let mut cfg = ExperimentConfig::from_path(&config)?;
            if let Some(seed) = seed {
                cfg.train.seed = seed;
            }
            let dir = out_dir(out, cfg.out_dir.as_ref(), &cfg.name);
            ensure_dir(&dir)?;
            let sched = cfg.schedule.build()?;
            let ds = dataset::generate(&cfg.dataset, cfg.seed)?;
            let result = training::train(&cfg.train, &ds.points, &sched)?;
            write_file(&dir.join("metrics.csv"), |w| {
                training::write_metrics_csv(&result.log, w)
            })?;
            let ckpt = Checkpoint {
                version: sa_diffusion::checkpoint::CHECKPOINT_VERSION,
                train_config: cfg.train.clone(),
                params: result.params,
                ema: result.ema,
                opt_state: result.opt,
                step: cfg.train.steps,
            };
            let path = dir.join("checkpoint.json");
            ckpt.save(&path)?;
            println!("wrote {} and metrics.csv", path.display());
        }
        Command::Sample { checkpoint, config, kind, n_steps, batch, seed, out, trajectory } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let sched = match &config {
                Some(path) => ExperimentConfig::from_path(path)?.schedule.build()?,
                None => sa_diffusion::NoiseSchedule::linear(ckpt.params.timesteps, 1e-4, 0.02)?,
            };
            let dir = out_dir(out, None, "samples");
            ensure_dir(&dir)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let traj = sampler::sample(
                &ckpt.params,
                &sched,
                kind.into(),
                n_steps.unwrap_or(sched.timesteps),
                batch,
                ckpt.params.data_dim,
                Default::default(),
                false,
                &mut rng,
            )?;
            write_file(&dir.join("samples.csv"), |w| {
                sampler::write_samples_csv(traj.terminal(), w)
            })?;
            if trajectory {
                write_file(&dir.join("trajectory.csv"), |w| {
                    sampler::write_trajectory_csv(&traj, w)
                })?;
            }
            println!("wrote {}", dir.join("samples.csv").display());
        }
        Command::GapEval { config, checkpoint, seed, out } => {
            let mut cfg = ExperimentConfig::from_path(&config)?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            let gap_spec = cfg.gap.clone().ok_or_else(|| {
                Error::Config(format!("{}: gap-eval needs a `gap` section", config.display()))
            })?;
            let ckpt = Checkpoint::load(&checkpoint)?;
            let sched = cfg.schedule.build()?;
            let ds = dataset::generate(&cfg.dataset, cfg.seed)?;
            let n = gap_spec.batch.min(ds.points.batch);
            let x0 = DataBatch::new(n, ds.points.dim, ds.points.data[..n * ds.points.dim].to_vec());
            let report = gap_experiment_x_start(
                &ckpt.params,
                &sched,
                &x0,
                gap_spec.t_start,
                gap_spec.sampler.unwrap_or(cfg.sampler.kind),
                cfg.sampler.variance,
                &mut ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7e7e),
            )?;
            let dir = out_dir(out, cfg.out_dir.as_ref(), &cfg.name);
            ensure_dir(&dir)?;
            write_file(&dir.join("gaps.csv"), |w| report.write_csv(w))?;
            println!(
                "terminal cumulative gap {} over {} steps; wrote {}",
                report.terminal_gap_norm,
                report.timesteps.len(),
                dir.join("gaps.csv").display()
            );
        }
        Command::BoundsCheck { config, checkpoint, mc, seed } => {
            let mut cfg = ExperimentConfig::from_path(&config)?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            let sched = cfg.schedule.build()?;
            let ds = dataset::generate(&cfg.dataset, cfg.seed)?;
            let n = ds.points.batch.min(64);
            let x0 = DataBatch::new(n, ds.points.dim, ds.points.data[..n * ds.points.dim].to_vec());
            let params = match &checkpoint {
                Some(path) => Checkpoint::load(path)?.params,
                None => sa_diffusion::predictor::PredictorParams::init(
                    ds.points.dim,
                    &cfg.train.hidden_sizes,
                    cfg.train.time_embed_dim,
                    sched.timesteps,
                    &mut ChaCha8Rng::seed_from_u64(cfg.seed),
                )?,
            };
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x1b1b);
            let report = match mc {
                None => bounds_check_exact(&params, &sched, cfg.train.k, &x0, &mut rng)?,
                Some(n_mc) => bounds_check_mc(&params, &sched, cfg.train.k, &x0, n_mc, &mut rng)?,
            };
            report
                .print(std::io::stdout().lock())
                .map_err(|e| Error::io("stdout", e))?;
            if !(report.upper_holds && report.lower_holds) {
                return Err(Error::Config(format!(
                    "bound verification failed for {}",
                    config.display()
                )));
            }
        }
        Command::ScheduleDump { config, out } => {
            let cfg = ExperimentConfig::from_path(&config)?;
            let sched = cfg.schedule.build()?;
            let dir = out_dir(out, cfg.out_dir.as_ref(), &cfg.name);
            ensure_dir(&dir)?;
            write_file(&dir.join("schedule.csv"), |w| sched.write_csv(w))?;
            println!("wrote {}", dir.join("schedule.csv").display());
        }
        Command::Run { config, seed, out } => {
            let mut cfg = ExperimentConfig::from_path(&config)?;
            if let Some(seed) = seed {
                cfg.seed = seed;
                cfg.train.seed = seed;
            }
            let dir = out_dir(out, cfg.out_dir.as_ref(), &cfg.name);
            let summary = run_experiment(&cfg, &dir)?;
            println!("wrote {} ({} rows)", dir.join("summary.json").display(), summary.rows.len());
        }
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
