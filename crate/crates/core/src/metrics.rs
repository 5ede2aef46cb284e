//! Sample-quality metrics: sliced Wasserstein distance and mode coverage.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::forward::DataBatch;

/// Average over random unit directions of the 1-D 2-Wasserstein distance
/// between the projected empirical distributions. Batches of unequal size
/// are compared through the quantile functions of the sorted projections.
pub fn sliced_wasserstein(
    a: &DataBatch,
    b: &DataBatch,
    n_projections: usize,
    seed: u64,
) -> Result<f64> {
    if a.dim != b.dim {
        return Err(Error::ShapeMismatch {
            expected: format!("dim {}", a.dim),
            got: format!("dim {}", b.dim),
        });
    }
    if a.batch == 0 || b.batch == 0 {
        return Err(Error::Argument("sliced_wasserstein requires nonempty batches".into()));
    }
    if n_projections == 0 {
        return Err(Error::Argument("n_projections must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for _ in 0..n_projections {
        let dir = random_unit(a.dim, &mut rng);
        let mut pa = project_sorted(a, &dir);
        let mut pb = project_sorted(b, &dir);
        total += wasserstein2_1d(&mut pa, &mut pb);
    }
    Ok(total / n_projections as f64)
}

fn random_unit<R: Rng>(dim: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn project_sorted(batch: &DataBatch, dir: &[f64]) -> Vec<f64> {
    let mut out: Vec<f64> = (0..batch.batch)
        .map(|i| batch.row(i).iter().zip(dir).map(|(x, d)| x * d).sum())
        .collect();
    out.sort_by(|x, y| x.partial_cmp(y).unwrap());
    out
}

/// W2 between two sorted 1-D samples via quantile-function integration on
/// the merged grid of both empirical CDF breakpoints.
fn wasserstein2_1d(a: &mut [f64], b: &mut [f64]) -> f64 {
    if a.len() == b.len() {
        let n = a.len() as f64;
        let sq: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum();
        return (sq / n).sqrt();
    }
    let na = a.len() as f64;
    let nb = b.len() as f64;
    let mut grid: Vec<f64> = (1..a.len()).map(|i| i as f64 / na).collect();
    grid.extend((1..b.len()).map(|i| i as f64 / nb));
    grid.push(1.0);
    grid.sort_by(|x, y| x.partial_cmp(y).unwrap());
    grid.dedup();
    let mut prev = 0.0;
    let mut acc = 0.0;
    for q in grid {
        // Quantile values on the half-open interval (prev, q].
        let ia = ((q * na).ceil() as usize - 1).min(a.len() - 1);
        let ib = ((q * nb).ceil() as usize - 1).min(b.len() - 1);
        let diff = a[ia] - b[ib];
        acc += diff * diff * (q - prev);
        prev = q;
    }
    acc.sqrt()
}

/// Number of centers with at least one sample within `radius`.
pub fn mode_coverage(samples: &DataBatch, centers: &[Vec<f64>], radius: f64) -> Result<usize> {
    if centers.is_empty() {
        return Err(Error::Argument("mode_coverage requires at least one center".into()));
    }
    let r_sq = radius * radius;
    let mut covered = 0;
    for c in centers {
        if c.len() != samples.dim {
            return Err(Error::ShapeMismatch {
                expected: format!("center dim {}", samples.dim),
                got: format!("{}", c.len()),
            });
        }
        let hit = (0..samples.batch).any(|i| {
            samples
                .row(i)
                .iter()
                .zip(c)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                <= r_sq
        });
        if hit {
            covered += 1;
        }
    }
    Ok(covered)
}
