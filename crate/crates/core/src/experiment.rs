//! Experiment harness: config schema and the train → sample → metrics →
//! gap-eval pipeline with CSV/SVG/JSON artifacts.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, CHECKPOINT_VERSION};
use crate::dataset::{self, DatasetKind, DatasetSpec};
use crate::error::{Error, Result};
use crate::forward::DataBatch;
use crate::gap::{gap_experiment_x_start, GapReport};
use crate::metrics::{mode_coverage, sliced_wasserstein};
use crate::sampler::{self, SamplerKind, VarianceKind};
use crate::schedule::NoiseSchedule;
use crate::svg;
use crate::training::{self, train, LossKind, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Linear,
    Cosine,
}

fn default_timesteps() -> usize {
    100
}
fn default_beta_start() -> f64 {
    1e-4
}
fn default_beta_end() -> f64 {
    0.02
}
fn default_s_offset() -> f64 {
    0.008
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScheduleSpec {
    pub kind: ScheduleKind,
    #[serde(default = "default_timesteps")]
    pub timesteps: usize,
    #[serde(default = "default_beta_start")]
    pub beta_start: f64,
    #[serde(default = "default_beta_end")]
    pub beta_end: f64,
    #[serde(default = "default_s_offset")]
    pub s_offset: f64,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        ScheduleSpec {
            kind: ScheduleKind::Linear,
            timesteps: default_timesteps(),
            beta_start: default_beta_start(),
            beta_end: default_beta_end(),
            s_offset: default_s_offset(),
        }
    }
}

impl ScheduleSpec {
    pub fn build(&self) -> Result<NoiseSchedule> {
        match self.kind {
            ScheduleKind::Linear => {
                NoiseSchedule::linear(self.timesteps, self.beta_start, self.beta_end)
            }
            ScheduleKind::Cosine => NoiseSchedule::cosine(self.timesteps, self.s_offset),
        }
    }
}

fn default_n_samples() -> usize {
    1024
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SamplerSpec {
    pub kind: SamplerKind,
    /// Number of denoising steps; defaults to the full schedule length.
    #[serde(default)]
    pub n_steps: Option<usize>,
    #[serde(default)]
    pub variance: VarianceKind,
    #[serde(default = "default_n_samples")]
    pub n_samples: usize,
}

impl Default for SamplerSpec {
    fn default() -> Self {
        SamplerSpec {
            kind: SamplerKind::Ddpm,
            n_steps: None,
            variance: VarianceKind::BetaTilde,
            n_samples: default_n_samples(),
        }
    }
}

fn default_n_projections() -> usize {
    128
}
fn default_mode_radius() -> f64 {
    0.15
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricSpec {
    #[serde(default = "default_n_projections")]
    pub n_projections: usize,
    #[serde(default = "default_mode_radius")]
    pub mode_radius: f64,
}

impl Default for MetricSpec {
    fn default() -> Self {
        MetricSpec { n_projections: default_n_projections(), mode_radius: default_mode_radius() }
    }
}

fn default_gap_batch() -> usize {
    2000
}

/// Settings for the known-x0 gap trace; when present, gaps.csv is emitted.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GapSpec {
    pub t_start: usize,
    #[serde(default = "default_gap_batch")]
    pub batch: usize,
    #[serde(default)]
    pub sampler: Option<SamplerKind>,
}

fn default_name() -> String {
    "experiment".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default)]
    pub schedule: ScheduleSpec,
    pub train: TrainConfig,
    #[serde(default)]
    pub sampler: SamplerSpec,
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub metrics: MetricSpec,
    #[serde(default)]
    pub gap: Option<GapSpec>,
    /// When present, the whole pipeline is repeated once per lambda with
    /// the first entry acting as the baseline for the gap ratio.
    #[serde(default)]
    pub lambdas: Option<Vec<f64>>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    /// Seed for dataset generation, sampling, metrics, and the gap trace;
    /// the training loop is seeded separately by `train.seed`.
    #[serde(default)]
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<ExperimentConfig> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryRow {
    pub lambda: f64,
    pub final_l_simple: f64,
    pub final_l_sa: f64,
    pub sliced_wasserstein: f64,
    pub mode_coverage: Option<usize>,
    pub terminal_gap: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub name: String,
    pub seed: u64,
    pub rows: Vec<SummaryRow>,
    /// Terminal gap of each row divided by the first row's, when gap
    /// traces were produced; rows[0] is 1 by construction.
    pub terminal_gap_ratio: Option<Vec<f64>>,
}

fn stage<T, E: std::fmt::Display>(name: &str, key: &str, r: std::result::Result<T, E>) -> Result<T> {
    r.map_err(|e| Error::Config(format!("{name} stage failed (config key `{key}`): {e}")))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?,
    ))
}

struct RunArtifacts {
    row: SummaryRow,
    gap_report: Option<GapReport>,
}

fn run_single(cfg: &ExperimentConfig, train_cfg: &TrainConfig, dir: &Path) -> Result<RunArtifacts> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let sched = stage("schedule", "schedule", cfg.schedule.build())?;
    let ds = stage("dataset", "dataset", dataset::generate(&cfg.dataset, cfg.seed))?;

    let result = stage("train", "train", train(train_cfg, &ds.points, &sched))?;
    {
        let mut w = create(&dir.join("metrics.csv"))?;
        stage("train", "train", training::write_metrics_csv(&result.log, &mut w))?;
        stage("train", "train", w.flush())?;
    }
    let ckpt = Checkpoint {
        version: CHECKPOINT_VERSION,
        train_config: train_cfg.clone(),
        params: result.params.clone(),
        ema: result.ema.clone(),
        opt_state: result.opt.clone(),
        step: train_cfg.steps,
    };
    ckpt.save(&dir.join("checkpoint.json"))?;

    let tail = result.log.len().min(100).max(1);
    let recent = &result.log[result.log.len().saturating_sub(tail)..];
    let final_l_simple = recent.iter().map(|b| b.l_simple).sum::<f64>() / recent.len() as f64;
    let final_l_sa = recent.iter().map(|b| b.l_sa).sum::<f64>() / recent.len() as f64;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5a5a);
    let n_steps = cfg.sampler.n_steps.unwrap_or(sched.timesteps);
    let traj = stage(
        "sample",
        "sampler",
        sampler::sample(
            &result.params,
            &sched,
            cfg.sampler.kind,
            n_steps,
            cfg.sampler.n_samples,
            ds.points.dim,
            cfg.sampler.variance,
            false,
            &mut rng,
        ),
    )?;
    let samples = traj.terminal();
    {
        let mut w = create(&dir.join("samples.csv"))?;
        stage("sample", "sampler", sampler::write_samples_csv(samples, &mut w))?;
        stage("sample", "sampler", w.flush())?;
    }

    let sw = stage(
        "metrics",
        "metrics",
        sliced_wasserstein(samples, &ds.points, cfg.metrics.n_projections, cfg.seed ^ 0x3c3c),
    )?;
    let coverage = if cfg.dataset.kind == DatasetKind::GaussianRing {
        let centers = dataset::ring_mode_centers(&ds);
        Some(stage("metrics", "metrics", mode_coverage(samples, &centers, cfg.metrics.mode_radius))?)
    } else {
        None
    };

    let mut gap_report = None;
    if let Some(gap_spec) = &cfg.gap {
        let n = gap_spec.batch.min(ds.points.batch);
        let x0 = DataBatch::new(n, ds.points.dim, ds.points.data[..n * ds.points.dim].to_vec());
        let report = stage(
            "gap-eval",
            "gap",
            gap_experiment_x_start(
                &result.params,
                &sched,
                &x0,
                gap_spec.t_start,
                gap_spec.sampler.unwrap_or(cfg.sampler.kind),
                cfg.sampler.variance,
                &mut ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7e7e),
            ),
        )?;
        let mut w = create(&dir.join("gaps.csv"))?;
        stage("gap-eval", "gap", report.write_csv(&mut w))?;
        stage("gap-eval", "gap", w.flush())?;
        gap_report = Some(report);
    }

    write_plots(dir, &result.log, &ds.points, samples, gap_report.as_ref())?;

    Ok(RunArtifacts {
        row: SummaryRow {
            lambda: train_cfg.lambda,
            final_l_simple,
            final_l_sa,
            sliced_wasserstein: sw,
            mode_coverage: coverage,
            terminal_gap: gap_report.as_ref().map(|r| r.terminal_gap_norm),
        },
        gap_report,
    })
}

fn write_plots(
    dir: &Path,
    log: &[crate::training::LossBreakdown],
    data: &DataBatch,
    samples: &DataBatch,
    gap: Option<&GapReport>,
) -> Result<()> {
    if !log.is_empty() {
        let steps: Vec<f64> = (0..log.len()).map(|i| i as f64).collect();
        let l_simple: Vec<f64> = log.iter().map(|b| b.l_simple).collect();
        let l_sa: Vec<f64> = log.iter().map(|b| b.l_sa).collect();
        let series = [
            svg::Series { label: "l_simple", xs: &steps, ys: &l_simple, color: "#1f77b4" },
            svg::Series { label: "l_sa", xs: &steps, ys: &l_sa, color: "#d62728" },
        ];
        let mut w = create(&dir.join("loss.svg"))?;
        stage("plot", "out_dir", svg::line_chart(&mut w, "training loss", &series))?;
    }
    if data.dim == 2 {
        let split = |b: &DataBatch| -> (Vec<f64>, Vec<f64>) {
            ((0..b.batch).map(|i| b.row(i)[0]).collect(), (0..b.batch).map(|i| b.row(i)[1]).collect())
        };
        let (dx, dy) = split(data);
        let (sx, sy) = split(samples);
        let series = [
            svg::Series { label: "data", xs: &dx, ys: &dy, color: "#1f77b4" },
            svg::Series { label: "samples", xs: &sx, ys: &sy, color: "#d62728" },
        ];
        let mut w = create(&dir.join("samples.svg"))?;
        stage("plot", "out_dir", svg::scatter_chart(&mut w, "data vs samples", &series))?;
    }
    if let Some(report) = gap {
        let ts: Vec<f64> = report.timesteps.iter().map(|t| *t as f64).collect();
        let series = [
            svg::Series {
                label: "per-step gap",
                xs: &ts,
                ys: &report.per_step_gap_norm,
                color: "#1f77b4",
            },
            svg::Series {
                label: "cumulative gap",
                xs: &ts,
                ys: &report.cumulative_gap_norm,
                color: "#d62728",
            },
        ];
        let mut w = create(&dir.join("gaps.svg"))?;
        stage("plot", "out_dir", svg::line_chart(&mut w, "estimation gap", &series))?;
    }
    Ok(())
}

/// Runs the configured pipeline (once, or once per lambda for sweeps) and
/// writes all artifacts under `out_root`, returning the summary that was
/// also written to summary.json.
pub fn run_experiment(cfg: &ExperimentConfig, out_root: &Path) -> Result<ExperimentSummary> {
    std::fs::create_dir_all(out_root).map_err(|e| Error::io(out_root.display().to_string(), e))?;
    let mut rows = Vec::new();
    let mut gap_terminals = Vec::new();
    match &cfg.lambdas {
        None => {
            let artifacts = run_single(cfg, &cfg.train, out_root)?;
            if let Some(r) = &artifacts.gap_report {
                gap_terminals.push(r.terminal_gap_norm);
            }
            rows.push(artifacts.row);
        }
        Some(lambdas) => {
            if lambdas.is_empty() {
                return Err(Error::Config("lambdas sweep must be nonempty".into()));
            }
            for (i, lambda) in lambdas.iter().enumerate() {
                let mut train_cfg = cfg.train.clone();
                train_cfg.lambda = *lambda;
                if *lambda > 0.0 {
                    train_cfg.loss_kind = LossKind::SequenceAware;
                }
                let dir = out_root.join(format!("lambda_{i}"));
                let artifacts = run_single(cfg, &train_cfg, &dir)?;
                if let Some(r) = &artifacts.gap_report {
                    gap_terminals.push(r.terminal_gap_norm);
                }
                rows.push(artifacts.row);
            }
        }
    }
    let terminal_gap_ratio = if gap_terminals.len() == rows.len() && !gap_terminals.is_empty() {
        let base = gap_terminals[0];
        Some(gap_terminals.iter().map(|g| g / base).collect())
    } else {
        None
    };
    let summary = ExperimentSummary {
        name: cfg.name.clone(),
        seed: cfg.seed,
        rows,
        terminal_gap_ratio,
    };
    let path = out_root.join("summary.json");
    let text = serde_json::to_string_pretty(&summary)
        .map_err(|e| Error::json(path.display().to_string(), e))?;
    std::fs::write(&path, text).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> ExperimentConfig {
        ExperimentConfig {
            name: "tiny".into(),
            schedule: ScheduleSpec { timesteps: 10, ..ScheduleSpec::default() },
            train: TrainConfig {
                loss_kind: LossKind::SequenceAware,
                lambda: 1.0,
                batch_size: 16,
                steps: 30,
                hidden_sizes: vec![8, 8],
                time_embed_dim: 4,
                seed: 1,
                ..TrainConfig::default()
            },
            sampler: SamplerSpec { n_samples: 32, ..SamplerSpec::default() },
            dataset: DatasetSpec { kind: DatasetKind::GaussianRing, n_points: 64, dim: 2 },
            metrics: MetricSpec { n_projections: 16, ..MetricSpec::default() },
            gap: Some(GapSpec { t_start: 5, batch: 8, sampler: None }),
            lambdas: None,
            out_dir: None,
            seed: 3,
        }
    }

    fn temp_dir(tag: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("sa-diffusion-exp-{tag}"));
        let _ = std::fs::remove_dir_all(&dir);
        dir
    }

    #[test]
    fn single_run_writes_all_artifacts() {
        let out = temp_dir("single");
        let cfg = tiny_config();
        let summary = run_experiment(&cfg, &out).unwrap();
        assert_eq!(summary.rows.len(), 1);
        assert!(summary.rows[0].mode_coverage.is_some());
        assert!(summary.rows[0].terminal_gap.is_some());
        for file in ["metrics.csv", "samples.csv", "gaps.csv", "summary.json", "loss.svg", "samples.svg", "gaps.svg", "checkpoint.json"] {
            assert!(out.join(file).exists(), "missing {file}");
        }
        std::fs::remove_dir_all(&out).unwrap();
    }

    #[test]
    fn rerun_is_byte_identical() {
        let out_a = temp_dir("det-a");
        let out_b = temp_dir("det-b");
        let cfg = tiny_config();
        run_experiment(&cfg, &out_a).unwrap();
        run_experiment(&cfg, &out_b).unwrap();
        for file in ["metrics.csv", "samples.csv", "gaps.csv", "summary.json"] {
            let a = std::fs::read(out_a.join(file)).unwrap();
            let b = std::fs::read(out_b.join(file)).unwrap();
            assert_eq!(a, b, "{file} differs between identical runs");
        }
        std::fs::remove_dir_all(&out_a).unwrap();
        std::fs::remove_dir_all(&out_b).unwrap();
    }

    #[test]
    fn lambda_sweep_produces_one_row_per_lambda() {
        let out = temp_dir("sweep");
        let mut cfg = tiny_config();
        cfg.train.steps = 10;
        cfg.lambdas = Some(vec![0.0, 0.5, 1.0, 2.0]);
        let summary = run_experiment(&cfg, &out).unwrap();
        assert_eq!(summary.rows.len(), 4);
        let lambdas: Vec<f64> = summary.rows.iter().map(|r| r.lambda).collect();
        assert_eq!(lambdas, vec![0.0, 0.5, 1.0, 2.0]);
        let ratios = summary.terminal_gap_ratio.unwrap();
        assert_eq!(ratios.len(), 4);
        assert_eq!(ratios[0], 1.0);
        for i in 0..4 {
            assert!(out.join(format!("lambda_{i}")).join("summary.json").exists() == false);
            assert!(out.join(format!("lambda_{i}")).join("metrics.csv").exists());
        }
        std::fs::remove_dir_all(&out).unwrap();
    }

    #[test]
    fn stage_errors_name_stage_and_key() {
        let out = temp_dir("badcfg");
        let mut cfg = tiny_config();
        cfg.schedule.beta_start = -1.0;
        let err = run_experiment(&cfg, &out).unwrap_err().to_string();
        assert!(err.contains("schedule"), "{err}");
        let mut cfg = tiny_config();
        cfg.gap = Some(GapSpec { t_start: 999, batch: 8, sampler: None });
        let err = run_experiment(&cfg, &out).unwrap_err().to_string();
        assert!(err.contains("gap"), "{err}");
        let _ = std::fs::remove_dir_all(&out);
    }

    #[test]
    fn config_json_round_trip_with_defaults() {
        let text = r#"{
            "train": {"loss_kind": "simple", "batch_size": 8, "steps": 5, "seed": 0},
            "dataset": {"kind": "delta_point", "n_points": 4, "dim": 2}
        }"#;
        let cfg: ExperimentConfig = serde_json::from_str(text).unwrap();
        assert_eq!(cfg.schedule.timesteps, 100);
        assert_eq!(cfg.metrics.n_projections, 128);
        assert!(cfg.gap.is_none());
        assert_eq!(cfg.sampler.kind, SamplerKind::Ddpm);
    }
}
