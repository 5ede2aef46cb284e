//! Per-step, cumulative, and total estimation gaps; the reverse-distribution
//! coefficients; and verification of the sandwich bound relating the
//! weighted conventional loss, the sequence-aware loss, and the total gap.

use rand::Rng;

use crate::error::{Error, Result};
use crate::forward::{diffuse, recover_noise, DataBatch};
use crate::predictor::NoisePredictor;
use crate::sampler::{ddim_step, ddpm_step_between, SamplerKind, VarianceKind};
use crate::schedule::NoiseSchedule;
use crate::training::window_weight;

/// Gap statistics over a batch, aligned with the visited timesteps.
#[derive(Debug, Clone)]
pub struct GapReport {
    /// Visited timesteps, from start_timestep down to 2.
    pub timesteps: Vec<usize>,
    /// Mean over the batch of the per-step gap norm at each visited t.
    pub per_step_gap_norm: Vec<f64>,
    /// Mean over the batch of the cumulative gap norm at each visited t.
    pub cumulative_gap_norm: Vec<f64>,
    /// Mean cumulative gap norm at t = 2.
    pub terminal_gap_norm: f64,
    /// The cumulative gap vectors at t = 2, one row per batch entry.
    pub terminal_gap: DataBatch,
    pub batch: usize,
    pub start_timestep: usize,
}

impl GapReport {
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,per_step_gap,cumulative_gap")?;
        for (i, t) in self.timesteps.iter().enumerate() {
            writeln!(w, "{},{},{}", t, self.per_step_gap_norm[i], self.cumulative_gap_norm[i])?;
        }
        Ok(())
    }
}

fn mean_row_norm(batch: &DataBatch) -> f64 {
    let mut acc = 0.0;
    for i in 0..batch.batch {
        acc += batch.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
    }
    acc / batch.batch as f64
}

fn gap_scale(sched: &NoiseSchedule, t: usize) -> f64 {
    sched.gamma1[t] * (1.0 - sched.alpha_bar[t]).sqrt() / sched.alpha_bar[t].sqrt()
}

fn check_gap_t(sched: &NoiseSchedule, t: usize) -> Result<()> {
    if t < 2 || t > sched.timesteps {
        return Err(Error::Argument(format!(
            "gap timestep must be in 2..={}, got {t}",
            sched.timesteps
        )));
    }
    Ok(())
}

/// Per-step gap gamma1_t * sqrt((1-ab_t)/ab_t) * (f(x_t, t) - eps_t), one
/// row per batch entry. x_t is formed from (x0, eps_t).
pub fn step_gap(
    pred: &dyn NoisePredictor,
    sched: &NoiseSchedule,
    x0: &DataBatch,
    eps_t: &DataBatch,
    t: usize,
) -> Result<DataBatch> {
    check_gap_t(sched, t)?;
    let xt = diffuse(sched, x0, t, eps_t)?;
    let out = pred.predict(&xt, t);
    let scale = gap_scale(sched, t);
    let data = out
        .data
        .iter()
        .zip(&eps_t.data)
        .map(|(f, e)| scale * (f - e))
        .collect();
    Ok(DataBatch::new(x0.batch, x0.dim, data))
}

/// Cumulative gap by the backward recursion d_bar_t = d_t + gamma2_t *
/// d_bar_{t+1}, from t_start down to 2 (d_bar at t_start is the local gap
/// only). `eps_seq[i]` is the true noise at t = t_start - i.
pub fn cumulative_gap(
    pred: &dyn NoisePredictor,
    sched: &NoiseSchedule,
    x0: &DataBatch,
    eps_seq: &[DataBatch],
    t_start: usize,
) -> Result<GapReport> {
    check_gap_t(sched, t_start)?;
    let needed = t_start - 1;
    if eps_seq.len() < needed {
        return Err(Error::Argument(format!(
            "need noises for {needed} steps (t_start down to 2), got {}",
            eps_seq.len()
        )));
    }
    let mut timesteps = Vec::with_capacity(needed);
    let mut per_step = Vec::with_capacity(needed);
    let mut cumulative = Vec::with_capacity(needed);
    let mut dbar = DataBatch::zeros(x0.batch, x0.dim);
    for (i, t) in (2..=t_start).rev().enumerate() {
        let d_t = step_gap(pred, sched, x0, &eps_seq[i], t)?;
        if t == t_start {
            dbar = d_t.clone();
        } else {
            let g2 = sched.gamma2[t];
            for (acc, d) in dbar.data.iter_mut().zip(&d_t.data) {
                *acc = d + g2 * *acc;
            }
        }
        timesteps.push(t);
        per_step.push(mean_row_norm(&d_t));
        cumulative.push(mean_row_norm(&dbar));
    }
    Ok(GapReport {
        timesteps,
        per_step_gap_norm: per_step,
        terminal_gap_norm: *cumulative.last().unwrap(),
        cumulative_gap_norm: cumulative,
        terminal_gap: dbar,
        batch: x0.batch,
        start_timestep: t_start,
    })
}

/// Total gap as the tau-weighted sum over steps 2..T. `eps_seq[i]` is the
/// true noise at t = T - i (same ordering as [`cumulative_gap`] with
/// t_start = T).
pub fn total_gap(
    pred: &dyn NoisePredictor,
    sched: &NoiseSchedule,
    x0: &DataBatch,
    eps_seq: &[DataBatch],
) -> Result<DataBatch> {
    let t_max = sched.timesteps;
    if eps_seq.len() < t_max - 1 {
        return Err(Error::Argument(format!(
            "need noises for all steps 2..={t_max}, got {}",
            eps_seq.len()
        )));
    }
    let mut acc = DataBatch::zeros(x0.batch, x0.dim);
    for (i, t) in (2..=t_max).rev().enumerate() {
        let eps = &eps_seq[i];
        let xt = diffuse(sched, x0, t, eps)?;
        let out = pred.predict(&xt, t);
        let tau = sched.tau[t];
        for (a, (f, e)) in acc.data.iter_mut().zip(out.data.iter().zip(&eps.data)) {
            *a += tau * (f - e);
        }
    }
    Ok(acc)
}

/// Coefficients of q(x_{t-1} | x_T, x0): mean decomposition in (x0, eps_T)
/// and the variance recursion, populated for t in 2..=T.
#[derive(Debug, Clone)]
pub struct ReverseDistCoeffs {
    pub mu_prime_x0_coeff: Vec<f64>,
    pub mu_prime_eps_coeff: Vec<f64>,
    pub beta_prime: Vec<f64>,
}

pub fn reverse_dist_coeffs(sched: &NoiseSchedule) -> ReverseDistCoeffs {
    let t_max = sched.timesteps;
    let ab = &sched.alpha_bar;
    let mut x0_coeff = vec![0.0; t_max + 1];
    let mut eps_coeff = vec![0.0; t_max + 1];
    let mut beta_prime = vec![0.0; t_max + 1];
    for t in 2..=t_max {
        x0_coeff[t] = ab[t - 1].sqrt();
        eps_coeff[t] = ab[t_max].sqrt() * (1.0 - ab[t - 1]) / (ab[t - 1] * (1.0 - ab[t_max])).sqrt();
    }
    beta_prime[t_max] = sched.beta_tilde[t_max];
    for t in (2..t_max).rev() {
        beta_prime[t] = sched.gamma2[t].powi(2) * beta_prime[t + 1] + sched.beta_tilde[t];
    }
    ReverseDistCoeffs { mu_prime_x0_coeff: x0_coeff, mu_prime_eps_coeff: eps_coeff, beta_prime }
}

/// Estimates of the three bound quantities and whether each inequality in
/// the sandwich (T-1)/(T+K) * L_simple_tau >= L_sa >= L_theta / (T+K)^2
/// holds.
#[derive(Debug, Clone)]
pub struct BoundsReport {
    pub l_simple_tau: f64,
    pub l_sa: f64,
    pub l_theta: f64,
    /// Standard errors; zero in exact mode.
    pub se_simple_tau: f64,
    pub se_sa: f64,
    pub se_theta: f64,
    pub upper_holds: bool,
    pub lower_holds: bool,
    pub k: usize,
    pub timesteps: usize,
}

impl BoundsReport {
    pub fn print<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        let t = self.timesteps as f64;
        let k = self.k as f64;
        writeln!(w, "L_simple_tau = {} (se {})", self.l_simple_tau, self.se_simple_tau)?;
        writeln!(w, "L_sa         = {} (se {})", self.l_sa, self.se_sa)?;
        writeln!(w, "L_theta      = {} (se {})", self.l_theta, self.se_theta)?;
        writeln!(
            w,
            "upper bound ((T-1)/(T+K)) L_simple_tau >= L_sa : {} ({} >= {})",
            if self.upper_holds { "PASS" } else { "FAIL" },
            (t - 1.0) / (t + k) * self.l_simple_tau,
            self.l_sa
        )?;
        writeln!(
            w,
            "lower bound L_sa >= L_theta / (T+K)^2          : {} ({} >= {})",
            if self.lower_holds { "PASS" } else { "FAIL" },
            self.l_sa,
            self.l_theta / ((t + k) * (t + k))
        )?;
        Ok(())
    }
}

fn check_bounds_k(k: usize) -> Result<()> {
    if k < 2 {
        return Err(Error::Argument(format!("bounds check requires K >= 2, got {k}")));
    }
    Ok(())
}

/// Exact-finite-sum verification: the three quantities are evaluated as
/// full sums over t for one fixed draw of the noise sequence, so the
/// inequalities must hold deterministically (they are pointwise Jensen
/// consequences). Intended for small T.
pub fn bounds_check_exact<R: Rng>(
    pred: &dyn NoisePredictor,
    sched: &NoiseSchedule,
    k: usize,
    x0: &DataBatch,
    rng: &mut R,
) -> Result<BoundsReport> {
    check_bounds_k(k)?;
    let t_max = sched.timesteps;
    // One noise per timestep, shared by all three sums.
    let mut eps = vec![DataBatch::zeros(0, 0)];
    for _ in 1..=t_max {
        eps.push(DataBatch::standard_normal(x0.batch, x0.dim, rng));
    }
    // Per-row error vectors tau_t * (f - eps) for t in 2..=T.
    let mut weighted_err: Vec<DataBatch> = vec![DataBatch::zeros(0, 0); t_max + 1];
    for t in 2..=t_max {
        let xt = diffuse(sched, x0, t, &eps[t])?;
        let out = pred.predict(&xt, t);
        let tau = sched.tau[t];
        weighted_err[t] = DataBatch::new(
            x0.batch,
            x0.dim,
            out.data
                .iter()
                .zip(&eps[t].data)
                .map(|(f, e)| tau * (f - e))
                .collect(),
        );
    }
    let batch = x0.batch as f64;
    let sq_norm_mean = |b: &DataBatch| b.data.iter().map(|v| v * v).sum::<f64>() / batch;

    let l_simple_tau = (2..=t_max).map(|t| sq_norm_mean(&weighted_err[t])).sum::<f64>()
        / (t_max - 1) as f64;

    let mut sa_sum = 0.0;
    for t in (1 - k as i64)..=(t_max as i64) {
        let mut residual = DataBatch::zeros(x0.batch, x0.dim);
        for s in t..t + k as i64 {
            if window_weight(sched, s, true) == 0.0 {
                continue;
            }
            for (r, e) in residual.data.iter_mut().zip(&weighted_err[s as usize].data) {
                *r += e / k as f64;
            }
        }
        sa_sum += sq_norm_mean(&residual);
    }
    let l_sa = sa_sum / (t_max + k) as f64;

    let mut total = DataBatch::zeros(x0.batch, x0.dim);
    for t in 2..=t_max {
        for (a, e) in total.data.iter_mut().zip(&weighted_err[t].data) {
            *a += e;
        }
    }
    let l_theta = sq_norm_mean(&total);

    let tk = (t_max + k) as f64;
    let slack = 1e-12;
    let upper = (t_max as f64 - 1.0) / tk * l_simple_tau;
    let lower = l_theta / (tk * tk);
    Ok(BoundsReport {
        l_simple_tau,
        l_sa,
        l_theta,
        se_simple_tau: 0.0,
        se_sa: 0.0,
        se_theta: 0.0,
        upper_holds: upper >= l_sa - slack * l_sa.abs().max(1.0),
        lower_holds: l_sa >= lower - slack * lower.abs().max(1.0),
        k,
        timesteps: t_max,
    })
}

/// Monte-Carlo estimates of the three quantities with standard errors;
/// each inequality is accepted if it holds within three combined standard
/// errors.
pub fn bounds_check_mc<R: Rng>(
    pred: &dyn NoisePredictor,
    sched: &NoiseSchedule,
    k: usize,
    x0: &DataBatch,
    n_mc: usize,
    rng: &mut R,
) -> Result<BoundsReport> {
    check_bounds_k(k)?;
    if n_mc < 2 {
        return Err(Error::Argument("n_mc must be >= 2".into()));
    }
    let t_max = sched.timesteps;
    let dim = x0.dim;
    let mut simple_samples = Vec::with_capacity(n_mc);
    let mut sa_samples = Vec::with_capacity(n_mc);
    let mut theta_samples = Vec::with_capacity(n_mc);
    for _ in 0..n_mc {
        let row = rng.gen_range(0..x0.batch);
        let x0_row = DataBatch::new(1, dim, x0.row(row).to_vec());

        // L_simple_tau sample: t uniform on {2..T}.
        let t = rng.gen_range(2..=t_max);
        let eps = DataBatch::standard_normal(1, dim, rng);
        let xt = diffuse(sched, &x0_row, t, &eps)?;
        let out = pred.predict(&xt, t);
        let tau = sched.tau[t];
        let val: f64 = out
            .data
            .iter()
            .zip(&eps.data)
            .map(|(f, e)| (tau * (f - e)).powi(2))
            .sum();
        simple_samples.push(val);

        // L_sa sample: window start uniform on {1-K..T}.
        let t = rng.gen_range(1 - k as i64..=t_max as i64);
        let mut residual = vec![0.0; dim];
        for s in t..t + k as i64 {
            if window_weight(sched, s, true) == 0.0 {
                continue;
            }
            let s = s as usize;
            let eps = DataBatch::standard_normal(1, dim, rng);
            let xs = diffuse(sched, &x0_row, s, &eps)?;
            let out = pred.predict(&xs, s);
            let tau = sched.tau[s];
            for (r, (f, e)) in residual.iter_mut().zip(out.data.iter().zip(&eps.data)) {
                *r += tau * (f - e) / k as f64;
            }
        }
        sa_samples.push(residual.iter().map(|v| v * v).sum());

        // L_theta sample: full noise sequence.
        let mut eps_seq = Vec::with_capacity(t_max - 1);
        for _ in (2..=t_max).rev() {
            eps_seq.push(DataBatch::standard_normal(1, dim, rng));
        }
        let gap = total_gap(pred, sched, &x0_row, &eps_seq)?;
        theta_samples.push(gap.data.iter().map(|v| v * v).sum());
    }
    let stats = |samples: &[f64]| {
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        (mean, (var / n).sqrt())
    };
    let (l_simple_tau, se_simple_tau) = stats(&simple_samples);
    let (l_sa, se_sa) = stats(&sa_samples);
    let (l_theta, se_theta) = stats(&theta_samples);
    let tk = (t_max + k) as f64;
    let upper = (t_max as f64 - 1.0) / tk * l_simple_tau;
    let upper_se = (t_max as f64 - 1.0) / tk * se_simple_tau;
    let lower = l_theta / (tk * tk);
    let lower_se = se_theta / (tk * tk);
    Ok(BoundsReport {
        l_simple_tau,
        l_sa,
        l_theta,
        se_simple_tau,
        se_sa,
        se_theta,
        upper_holds: upper >= l_sa - 3.0 * (upper_se + se_sa),
        lower_holds: l_sa >= lower - 3.0 * (se_sa + lower_se),
        k,
        timesteps: t_max,
    })
}

/// The x_start protocol: diffuse known data to t_start, denoise with the
/// chosen sampler one full step at a time, and accumulate the cumulative
/// gap against the noises recovered from the known x0 at every visited t.
pub fn gap_experiment_x_start<R: Rng>(
    pred: &dyn NoisePredictor,
    sched: &NoiseSchedule,
    x0: &DataBatch,
    t_start: usize,
    sampler_kind: SamplerKind,
    variance_kind: VarianceKind,
    rng: &mut R,
) -> Result<GapReport> {
    check_gap_t(sched, t_start)?;
    let eps_start = DataBatch::standard_normal(x0.batch, x0.dim, rng);
    let mut state = diffuse(sched, x0, t_start, &eps_start)?;
    let mut timesteps = Vec::new();
    let mut per_step = Vec::new();
    let mut cumulative = Vec::new();
    let mut dbar = DataBatch::zeros(x0.batch, x0.dim);
    for t in (1..=t_start).rev() {
        if t >= 2 {
            // Actual noise for the sampler's current state.
            let eps_t = recover_noise(sched, x0, &state, t)?;
            let out = pred.predict(&state, t);
            let scale = gap_scale(sched, t);
            let d_t = DataBatch::new(
                x0.batch,
                x0.dim,
                out.data
                    .iter()
                    .zip(&eps_t.data)
                    .map(|(f, e)| scale * (f - e))
                    .collect(),
            );
            if t == t_start {
                dbar = d_t.clone();
            } else {
                let g2 = sched.gamma2[t];
                for (acc, d) in dbar.data.iter_mut().zip(&d_t.data) {
                    *acc = d + g2 * *acc;
                }
            }
            timesteps.push(t);
            per_step.push(mean_row_norm(&d_t));
            cumulative.push(mean_row_norm(&dbar));
        }
        state = match sampler_kind {
            SamplerKind::Ddim => ddim_step(pred, sched, &state, t, t - 1)?,
            SamplerKind::Ddpm => {
                let z = if t == 1 {
                    DataBatch::zeros(x0.batch, x0.dim)
                } else {
                    DataBatch::standard_normal(x0.batch, x0.dim, rng)
                };
                ddpm_step_between(pred, sched, &state, t, t - 1, &z, variance_kind)?
            }
        };
    }
    Ok(GapReport {
        timesteps,
        per_step_gap_norm: per_step,
        terminal_gap_norm: *cumulative.last().unwrap(),
        cumulative_gap_norm: cumulative,
        terminal_gap: dbar,
        batch: x0.batch,
        start_timestep: t_start,
    })
}
