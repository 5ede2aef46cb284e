//! Noise schedules and every schedule-derived coefficient.
//!
//! Arrays are 1-based to match the usual diffusion indexing: index 0 is a
//! sentinel (`alpha_bar[0] = 1`) so the t=1 formulas are well defined.

use crate::error::{Error, Result};

/// All timestep-indexed coefficients for a fixed number of diffusion steps.
///
/// Immutable after construction; every array is precomputed in double
/// precision so identity checks are deterministic.
#[derive(Debug, Clone)]
pub struct NoiseSchedule {
    pub timesteps: usize,
    /// beta[t] for t in 1..=T; beta[0] = 0 sentinel.
    pub beta: Vec<f64>,
    /// alpha[t] = 1 - beta[t]; alpha[0] = 1.
    pub alpha: Vec<f64>,
    /// alpha_bar[t] = prod_{s=1..t} alpha[s]; alpha_bar[0] = 1.
    pub alpha_bar: Vec<f64>,
    /// beta_tilde[t] = (1 - alpha_bar[t-1]) / (1 - alpha_bar[t]) * beta[t].
    pub beta_tilde: Vec<f64>,
    /// gamma1[t] = sqrt(alpha_bar[t-1]) * beta[t] / (1 - alpha_bar[t]).
    pub gamma1: Vec<f64>,
    /// gamma2[t] = sqrt(alpha[t]) * (1 - alpha_bar[t-1]) / (1 - alpha_bar[t]).
    pub gamma2: Vec<f64>,
    /// tau[t] for t in 2..=T, 0 elsewhere.
    pub tau: Vec<f64>,
}

impl NoiseSchedule {
    /// Linear beta schedule from `beta_start` at t=1 to `beta_end` at t=T.
    pub fn linear(timesteps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if timesteps < 2 {
            return Err(Error::Config(format!(
                "timesteps must be >= 2, got {timesteps}"
            )));
        }
        if !(beta_start > 0.0) {
            return Err(Error::Config(format!(
                "beta_start must be > 0, got {beta_start}"
            )));
        }
        if beta_end < beta_start {
            return Err(Error::Config(format!(
                "beta_end ({beta_end}) must be >= beta_start ({beta_start})"
            )));
        }
        if !(beta_end < 1.0) {
            return Err(Error::Config(format!(
                "beta_end must be < 1, got {beta_end}"
            )));
        }
        let mut beta = vec![0.0; timesteps + 1];
        let span = (timesteps - 1) as f64;
        for t in 1..=timesteps {
            beta[t] = beta_start + (beta_end - beta_start) * (t - 1) as f64 / span;
        }
        Ok(Self::from_betas(timesteps, beta))
    }

    /// Cosine schedule: alpha_bar[t] = f(t)/f(0) with
    /// f(t) = cos^2(((t/T + s) / (1 + s)) * pi/2), betas clipped to (0, 0.999].
    pub fn cosine(timesteps: usize, s_offset: f64) -> Result<Self> {
        if timesteps < 2 {
            return Err(Error::Config(format!(
                "timesteps must be >= 2, got {timesteps}"
            )));
        }
        if !(s_offset > 0.0) {
            return Err(Error::Config(format!(
                "s_offset must be > 0, got {s_offset}"
            )));
        }
        let f = |t: f64| {
            let angle = ((t / timesteps as f64 + s_offset) / (1.0 + s_offset))
                * std::f64::consts::FRAC_PI_2;
            angle.cos().powi(2)
        };
        let f0 = f(0.0);
        let mut beta = vec![0.0; timesteps + 1];
        let mut prev_ab = 1.0;
        for t in 1..=timesteps {
            let ab = f(t as f64) / f0;
            let b = (1.0 - ab / prev_ab).clamp(f64::MIN_POSITIVE, 0.999);
            beta[t] = b;
            prev_ab *= 1.0 - b;
        }
        Ok(Self::from_betas(timesteps, beta))
    }

    fn from_betas(timesteps: usize, beta: Vec<f64>) -> Self {
        let n = timesteps + 1;
        let mut alpha = vec![1.0; n];
        let mut alpha_bar = vec![1.0; n];
        for t in 1..=timesteps {
            alpha[t] = 1.0 - beta[t];
            alpha_bar[t] = alpha_bar[t - 1] * alpha[t];
        }
        let mut beta_tilde = vec![0.0; n];
        let mut gamma1 = vec![0.0; n];
        let mut gamma2 = vec![0.0; n];
        for t in 1..=timesteps {
            let denom = 1.0 - alpha_bar[t];
            beta_tilde[t] = (1.0 - alpha_bar[t - 1]) / denom * beta[t];
            gamma1[t] = alpha_bar[t - 1].sqrt() * beta[t] / denom;
            gamma2[t] = alpha[t].sqrt() * (1.0 - alpha_bar[t - 1]) / denom;
        }
        let mut sched = NoiseSchedule {
            timesteps,
            beta,
            alpha,
            alpha_bar,
            beta_tilde,
            gamma1,
            gamma2,
            tau: vec![0.0; n],
        };
        for i in 2..=timesteps {
            sched.tau[i] = sched.compute_tau(i);
        }
        sched
    }

    fn compute_tau(&self, i: usize) -> f64 {
        let ab = &self.alpha_bar;
        let bracket =
            (ab[i - 1].sqrt() * (1.0 - ab[1])) / (self.alpha[1].sqrt() * (1.0 - ab[i - 1]));
        bracket * self.gamma1[i] * (1.0 - ab[i]).sqrt() / ab[i].sqrt()
    }

    /// tau_i from the total-gap expansion; 0 for i outside {2..T}.
    pub fn tau_coefficient(&self, i: usize) -> f64 {
        if (2..=self.timesteps).contains(&i) {
            self.tau[i]
        } else {
            0.0
        }
    }

    /// Closed form of prod_{s=t}^{i-1} gamma2[s] for 2 <= t < i <= T.
    pub fn gamma2_product(&self, t: usize, i: usize) -> Result<f64> {
        if !(2 <= t && t < i && i <= self.timesteps) {
            return Err(Error::Argument(format!(
                "gamma2_product requires 2 <= t < i <= T, got t={t}, i={i}, T={}",
                self.timesteps
            )));
        }
        let ab = &self.alpha_bar;
        Ok(ab[i - 1].sqrt() * (1.0 - ab[t - 1]) / (ab[t - 1].sqrt() * (1.0 - ab[i - 1])))
    }

    /// Writes all coefficient arrays as CSV (`schedule-dump` subcommand).
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,beta,alpha,alpha_bar,beta_tilde,gamma1,gamma2,tau")?;
        for t in 1..=self.timesteps {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                t,
                self.beta[t],
                self.alpha[t],
                self.alpha_bar[t],
                self.beta_tilde[t],
                self.gamma1[t],
                self.gamma2[t],
                self.tau[t]
            )?;
        }
        Ok(())
    }
}
