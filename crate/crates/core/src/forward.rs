//! Closed-form forward diffusion and exact posterior moments.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::schedule::NoiseSchedule;

/// A batch of points, row-major `(batch, dim)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DataBatch {
    pub data: Vec<f64>,
    pub batch: usize,
    pub dim: usize,
}

impl DataBatch {
    pub fn new(batch: usize, dim: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), batch * dim);
        DataBatch { data, batch, dim }
    }

    pub fn zeros(batch: usize, dim: usize) -> Self {
        DataBatch { data: vec![0.0; batch * dim], batch, dim }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Standard normal batch from the given rng.
    pub fn standard_normal<R: Rng>(batch: usize, dim: usize, rng: &mut R) -> Self {
        let data = (0..batch * dim).map(|_| rng.sample(StandardNormal)).collect();
        DataBatch { data, batch, dim }
    }

    pub fn same_shape(&self, other: &DataBatch) -> bool {
        self.batch == other.batch && self.dim == other.dim
    }

    fn shape_err(&self, other: &DataBatch) -> Error {
        Error::ShapeMismatch {
            expected: format!("({}, {})", self.batch, self.dim),
            got: format!("({}, {})", other.batch, other.dim),
        }
    }
}

fn check_t(sched: &NoiseSchedule, t: usize) -> Result<()> {
    if t < 1 || t > sched.timesteps {
        return Err(Error::Argument(format!(
            "timestep {t} outside 1..={}",
            sched.timesteps
        )));
    }
    Ok(())
}

/// x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps, elementwise.
pub fn diffuse(sched: &NoiseSchedule, x0: &DataBatch, t: usize, eps: &DataBatch) -> Result<DataBatch> {
    check_t(sched, t)?;
    if !x0.same_shape(eps) {
        return Err(x0.shape_err(eps));
    }
    let signal = sched.alpha_bar[t].sqrt();
    let noise = (1.0 - sched.alpha_bar[t]).sqrt();
    let data = x0
        .data
        .iter()
        .zip(&eps.data)
        .map(|(x, e)| signal * x + noise * e)
        .collect();
    Ok(DataBatch::new(x0.batch, x0.dim, data))
}

/// Inverts `diffuse`: eps = (x_t - sqrt(alpha_bar_t) x0) / sqrt(1 - alpha_bar_t).
pub fn recover_noise(sched: &NoiseSchedule, x0: &DataBatch, xt: &DataBatch, t: usize) -> Result<DataBatch> {
    check_t(sched, t)?;
    if !x0.same_shape(xt) {
        return Err(x0.shape_err(xt));
    }
    let signal = sched.alpha_bar[t].sqrt();
    let noise = (1.0 - sched.alpha_bar[t]).sqrt();
    let data = x0
        .data
        .iter()
        .zip(&xt.data)
        .map(|(x, y)| (y - signal * x) / noise)
        .collect();
    Ok(DataBatch::new(x0.batch, x0.dim, data))
}

/// Posterior mean gamma1_t x0 + gamma2_t x_t of q(x_{t-1} | x_t, x0).
///
/// The posterior variance is `sched.beta_tilde[t]`. Requires t >= 2; the t=1
/// step is handled by the sampler's final step.
pub fn posterior_mean(sched: &NoiseSchedule, x0: &DataBatch, xt: &DataBatch, t: usize) -> Result<DataBatch> {
    if t < 2 || t > sched.timesteps {
        return Err(Error::Argument(format!(
            "posterior_mean requires 2 <= t <= {}, got {t}",
            sched.timesteps
        )));
    }
    if !x0.same_shape(xt) {
        return Err(x0.shape_err(xt));
    }
    let g1 = sched.gamma1[t];
    let g2 = sched.gamma2[t];
    let data = x0
        .data
        .iter()
        .zip(&xt.data)
        .map(|(x, y)| g1 * x + g2 * y)
        .collect();
    Ok(DataBatch::new(x0.batch, x0.dim, data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sched() -> NoiseSchedule {
        NoiseSchedule::linear(100, 1e-4, 0.02).unwrap()
    }

    #[test]
    fn diffuse_zero_noise_scales_signal() {
        let s = sched();
        let x0 = DataBatch::new(1, 2, vec![1.0, -2.0]);
        let eps = DataBatch::zeros(1, 2);
        let xt = diffuse(&s, &x0, 50, &eps).unwrap();
        let c = s.alpha_bar[50].sqrt();
        assert_eq!(xt.data, vec![c, -2.0 * c]);
    }

    #[test]
    fn diffuse_hand_case() {
        // alpha_bar = 0.25: x_t = 0.5 * 2 + sqrt(0.75) * 1.
        let s = NoiseSchedule::linear(2, 0.5, 0.5).unwrap();
        assert_eq!(s.alpha_bar[2], 0.25);
        let x0 = DataBatch::new(1, 1, vec![2.0]);
        let eps = DataBatch::new(1, 1, vec![1.0]);
        let xt = diffuse(&s, &x0, 2, &eps).unwrap();
        assert!((xt.data[0] - (1.0 + 0.75f64.sqrt())).abs() < 1e-15);
        assert!((xt.data[0] - 1.8660254).abs() < 1e-6);
    }

    #[test]
    fn diffuse_zero_signal() {
        let s = sched();
        let x0 = DataBatch::zeros(2, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let eps = DataBatch::standard_normal(2, 3, &mut rng);
        let xt = diffuse(&s, &x0, 10, &eps).unwrap();
        let c = (1.0 - s.alpha_bar[10]).sqrt();
        for (got, e) in xt.data.iter().zip(&eps.data) {
            assert!((got - c * e).abs() < 1e-15);
        }
    }

    #[test]
    fn recover_noise_round_trip() {
        let s = sched();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x0 = DataBatch::standard_normal(4, 2, &mut rng);
        for t in [1, 2, 50, 100] {
            let eps = DataBatch::standard_normal(4, 2, &mut rng);
            let xt = diffuse(&s, &x0, t, &eps).unwrap();
            let rec = recover_noise(&s, &x0, &xt, t).unwrap();
            for (a, b) in rec.data.iter().zip(&eps.data) {
                assert!((a - b).abs() < 1e-12, "t={t}");
            }
        }
    }

    #[test]
    fn recover_noise_zero_on_pure_signal() {
        let s = sched();
        let x0 = DataBatch::new(1, 2, vec![0.3, -0.7]);
        let xt = diffuse(&s, &x0, 30, &DataBatch::zeros(1, 2)).unwrap();
        let rec = recover_noise(&s, &x0, &xt, 30).unwrap();
        for v in rec.data {
            assert!(v.abs() < 1e-14);
        }
    }

    #[test]
    fn recover_noise_hand_case() {
        let s = NoiseSchedule::linear(2, 0.5, 0.5).unwrap();
        let x0 = DataBatch::new(1, 1, vec![2.0]);
        let xt = DataBatch::new(1, 1, vec![1.0 + 0.75f64.sqrt()]);
        let rec = recover_noise(&s, &x0, &xt, 2).unwrap();
        assert!((rec.data[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn posterior_mean_zero_noise_path() {
        // With x_t on the noise-free path the gamma identity gives
        // sqrt(alpha_bar_{t-1}) x0.
        let s = sched();
        let x0 = DataBatch::new(1, 2, vec![1.5, -0.5]);
        for t in [2, 40, 100] {
            let xt = diffuse(&s, &x0, t, &DataBatch::zeros(1, 2)).unwrap();
            let mean = posterior_mean(&s, &x0, &xt, t).unwrap();
            let c = s.alpha_bar[t - 1].sqrt();
            for (m, x) in mean.data.iter().zip(&x0.data) {
                assert!((m - c * x).abs() < 1e-13, "t={t}");
            }
        }
    }

    #[test]
    fn posterior_mean_zero_x0() {
        let s = sched();
        let x0 = DataBatch::zeros(1, 2);
        let xt = DataBatch::new(1, 2, vec![0.4, 0.9]);
        let mean = posterior_mean(&s, &x0, &xt, 10).unwrap();
        for (m, y) in mean.data.iter().zip(&xt.data) {
            assert!((m - s.gamma2[10] * y).abs() < 1e-15);
        }
    }

    #[test]
    fn posterior_mean_matches_raw_beta_formula() {
        let s = sched();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x0 = DataBatch::standard_normal(3, 2, &mut rng);
        let xt = DataBatch::standard_normal(3, 2, &mut rng);
        let t = 37;
        // Recompute gamma coefficients from the raw beta array.
        let mut ab = vec![1.0f64; s.timesteps + 1];
        for u in 1..=s.timesteps {
            ab[u] = ab[u - 1] * (1.0 - s.beta[u]);
        }
        let g1 = ab[t - 1].sqrt() * s.beta[t] / (1.0 - ab[t]);
        let g2 = (1.0 - s.beta[t]).sqrt() * (1.0 - ab[t - 1]) / (1.0 - ab[t]);
        let mean = posterior_mean(&s, &x0, &xt, t).unwrap();
        for i in 0..mean.data.len() {
            let expect = g1 * x0.data[i] + g2 * xt.data[i];
            assert!(((mean.data[i] - expect) / expect).abs() < 1e-12);
        }
    }

    #[test]
    fn posterior_mean_rejects_t1() {
        let s = sched();
        let x = DataBatch::zeros(1, 2);
        assert!(posterior_mean(&s, &x, &x, 1).is_err());
    }

    #[test]
    fn shape_mismatch_rejected() {
        let s = sched();
        let a = DataBatch::zeros(2, 2);
        let b = DataBatch::zeros(2, 3);
        assert!(diffuse(&s, &a, 5, &b).is_err());
        assert!(recover_noise(&s, &a, &b, 5).is_err());
    }

    #[test]
    fn diffuse_monte_carlo_moments() {
        let s = sched();
        let x0 = DataBatch::new(1, 1, vec![0.7]);
        let t = 60;
        let n = 100_000usize;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let eps = DataBatch::standard_normal(1, 1, &mut rng);
            let xt = diffuse(&s, &x0, t, &eps).unwrap();
            sum += xt.data[0];
            sum_sq += xt.data[0] * xt.data[0];
        }
        let mean = sum / n as f64;
        let var = sum_sq / n as f64 - mean * mean;
        let expect_mean = s.alpha_bar[t].sqrt() * 0.7;
        let expect_var = 1.0 - s.alpha_bar[t];
        let se_mean = (expect_var / n as f64).sqrt();
        let se_var = expect_var * (2.0 / n as f64).sqrt();
        assert!((mean - expect_mean).abs() < 4.0 * se_mean);
        assert!((var - expect_var).abs() < 4.0 * se_var);
    }
}
