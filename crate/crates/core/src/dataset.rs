//! Synthetic 2-D datasets with per-dimension affine normalization.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::DataBatch;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    GaussianRing,
    SwissRoll,
    Checkerboard,
    DeltaPoint,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    pub n_points: usize,
    #[serde(default = "default_dim")]
    pub dim: usize,
}

fn default_dim() -> usize {
    2
}

/// Generated points together with the affine normalization that maps raw
/// coordinates to the stored (zero-mean, unit-variance) ones:
/// stored = (raw - shift) / scale.
#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub points: DataBatch,
    pub spec: DatasetSpec,
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl SyntheticDataset {
    /// Maps a raw-coordinate point into normalized coordinates.
    pub fn normalize_point(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter()
            .zip(self.shift.iter().zip(&self.scale))
            .map(|(v, (sh, sc))| (v - sh) / sc)
            .collect()
    }

    /// Inverse of [`normalize_point`](Self::normalize_point).
    pub fn denormalize_point(&self, stored: &[f64]) -> Vec<f64> {
        stored
            .iter()
            .zip(self.shift.iter().zip(&self.scale))
            .map(|(v, (sh, sc))| v * sc + sh)
            .collect()
    }
}

const RING_MODES: usize = 8;
const RING_STD: f64 = 0.05;
const DELTA_VALUE: f64 = 0.5;

fn ring_center_raw(i: usize) -> [f64; 2] {
    let angle = 2.0 * std::f64::consts::PI * i as f64 / RING_MODES as f64;
    [angle.cos(), angle.sin()]
}

/// The 8 ring-mode centers in the dataset's normalized coordinates.
pub fn ring_mode_centers(dataset: &SyntheticDataset) -> Vec<Vec<f64>> {
    (0..RING_MODES)
        .map(|i| dataset.normalize_point(&ring_center_raw(i)))
        .collect()
}

pub fn generate(spec: &DatasetSpec, seed: u64) -> Result<SyntheticDataset> {
    if spec.n_points == 0 {
        return Err(Error::Argument("dataset must have at least one point".into()));
    }
    if spec.kind != DatasetKind::DeltaPoint && spec.dim != 2 {
        return Err(Error::Argument(format!(
            "{:?} requires dim = 2, got {}",
            spec.kind, spec.dim
        )));
    }
    if spec.dim == 0 {
        return Err(Error::Argument("dim must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = DataBatch::zeros(spec.n_points, spec.dim);
    match spec.kind {
        DatasetKind::GaussianRing => {
            for i in 0..spec.n_points {
                let mode = rng.gen_range(0..RING_MODES);
                let c = ring_center_raw(mode);
                let row = points.row_mut(i);
                row[0] = c[0] + RING_STD * rng.sample::<f64, _>(StandardNormal);
                row[1] = c[1] + RING_STD * rng.sample::<f64, _>(StandardNormal);
            }
        }
        DatasetKind::SwissRoll => {
            for i in 0..spec.n_points {
                let u: f64 = rng.gen_range(0.0..1.0);
                let angle = 1.5 * std::f64::consts::PI * (1.0 + 2.0 * u);
                let row = points.row_mut(i);
                row[0] = angle * angle.cos() + 0.05 * rng.sample::<f64, _>(StandardNormal);
                row[1] = angle * angle.sin() + 0.05 * rng.sample::<f64, _>(StandardNormal);
            }
        }
        DatasetKind::Checkerboard => {
            for i in 0..spec.n_points {
                let x1: f64 = rng.gen_range(-2.0..2.0);
                let shift = if rng.gen_range(0..2) == 0 { 0.0 } else { -2.0 };
                let x2 = rng.gen_range(0.0..1.0) + shift + (x1.floor().rem_euclid(2.0));
                let row = points.row_mut(i);
                row[0] = x1 * 2.0;
                row[1] = x2 * 2.0;
            }
        }
        DatasetKind::DeltaPoint => {
            for v in points.data.iter_mut() {
                *v = DELTA_VALUE;
            }
        }
    }
    let (shift, scale) = normalization(&points);
    for i in 0..spec.n_points {
        let row = points.row_mut(i);
        for (v, (sh, sc)) in row.iter_mut().zip(shift.iter().zip(&scale)) {
            *v = (*v - sh) / sc;
        }
    }
    Ok(SyntheticDataset { points, spec: spec.clone(), shift, scale })
}

/// Per-dimension mean and standard deviation; degenerate dimensions keep
/// the identity transform so a delta dataset survives normalization.
fn normalization(points: &DataBatch) -> (Vec<f64>, Vec<f64>) {
    let n = points.batch as f64;
    let mut shift = vec![0.0; points.dim];
    let mut scale = vec![1.0; points.dim];
    for d in 0..points.dim {
        let mut sum = 0.0;
        for i in 0..points.batch {
            sum += points.row(i)[d];
        }
        let mean = sum / n;
        let mut var = 0.0;
        for i in 0..points.batch {
            let v = points.row(i)[d] - mean;
            var += v * v;
        }
        var /= n;
        if var > 1e-18 {
            shift[d] = mean;
            scale[d] = var.sqrt();
        }
    }
    (shift, scale)
}
