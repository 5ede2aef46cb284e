//! The simple and sequence-aware losses, their combination, and the
//! Adam-based training loop.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{diffuse, DataBatch};
use crate::predictor::{EmaParams, NoisePredictor, PredictorGradients, PredictorParams};
use crate::schedule::NoiseSchedule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Simple,
    SequenceAware,
}

fn default_k() -> usize {
    2
}
fn default_learning_rate() -> f64 {
    2e-4
}
fn default_ema_decay() -> f64 {
    0.9999
}
fn default_hidden_sizes() -> Vec<usize> {
    vec![128, 128, 128]
}
fn default_time_embed_dim() -> usize {
    16
}

/// Training hyperparameters.
///
/// The training step draws t uniformly from {1..T}; the wider window range
/// {1-K..T} appearing in the loss definition is used only by the bound
/// verification in [`crate::gap`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss_kind: LossKind,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub lambda: f64,
    #[serde(default)]
    pub use_tau_weights: bool,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    pub batch_size: usize,
    pub steps: usize,
    #[serde(default = "default_ema_decay")]
    pub ema_decay: f64,
    pub seed: u64,
    #[serde(default = "default_hidden_sizes")]
    pub hidden_sizes: Vec<usize>,
    #[serde(default = "default_time_embed_dim")]
    pub time_embed_dim: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss_kind: LossKind::Simple,
            k: default_k(),
            lambda: 0.0,
            use_tau_weights: false,
            learning_rate: default_learning_rate(),
            batch_size: 128,
            steps: 1000,
            ema_decay: default_ema_decay(),
            seed: 0,
            hidden_sizes: default_hidden_sizes(),
            time_embed_dim: default_time_embed_dim(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.loss_kind == LossKind::SequenceAware && self.k < 2 {
            return Err(Error::Config(format!(
                "sequence_aware loss requires k >= 2, got {}",
                self.k
            )));
        }
        if self.lambda < 0.0 {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Per-step loss values; l_total = l_simple + lambda * l_sa.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_simple: f64,
    pub l_sa: f64,
    pub l_total: f64,
}

/// Weight attached to the window term at timestep s: tau_s when tau
/// weighting is on, the {2..T} indicator otherwise.
pub fn window_weight(sched: &NoiseSchedule, s: i64, use_tau: bool) -> f64 {
    if s < 2 || s > sched.timesteps as i64 {
        return 0.0;
    }
    if use_tau {
        sched.tau[s as usize]
    } else {
        1.0
    }
}

/// Mean-over-batch squared error between the prediction at t and the true
/// noise, plus its parameter gradient.
pub fn simple_loss(
    params: &PredictorParams,
    sched: &NoiseSchedule,
    x0: &DataBatch,
    t: usize,
    eps: &DataBatch,
) -> Result<(f64, PredictorGradients)> {
    let xt = diffuse(sched, x0, t, eps)?;
    let pred = params.forward(&xt, t)?;
    let batch = x0.batch as f64;
    let mut loss = 0.0;
    let mut output_grad = DataBatch::zeros(x0.batch, x0.dim);
    for i in 0..pred.data.len() {
        let e = pred.data[i] - eps.data[i];
        loss += e * e;
        output_grad.data[i] = 2.0 * e / batch;
    }
    let grads = params.backward(&xt, t, &output_grad)?;
    Ok((loss / batch, grads))
}

/// Value-only simple loss for an arbitrary predictor.
pub fn simple_loss_value(
    pred: &dyn NoisePredictor,
    sched: &NoiseSchedule,
    x0: &DataBatch,
    t: usize,
    eps: &DataBatch,
) -> Result<f64> {
    let xt = diffuse(sched, x0, t, eps)?;
    let out = pred.predict(&xt, t);
    let loss: f64 = out
        .data
        .iter()
        .zip(&eps.data)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(loss / x0.batch as f64)
}

struct WindowTerm {
    s: usize,
    weight: f64,
    xs: DataBatch,
    err: DataBatch,
}

fn window_terms(
    pred: &dyn NoisePredictor,
    sched: &NoiseSchedule,
    x0: &DataBatch,
    t: i64,
    eps_seq: &[DataBatch],
    use_tau: bool,
) -> Result<Vec<WindowTerm>> {
    let k = eps_seq.len() as i64;
    if t < 1 - k || t > sched.timesteps as i64 {
        return Err(Error::Argument(format!(
            "window start {t} outside {}..={}",
            1 - k,
            sched.timesteps
        )));
    }
    let mut terms = Vec::new();
    for (offset, eps) in eps_seq.iter().enumerate() {
        let s = t + offset as i64;
        let weight = window_weight(sched, s, use_tau);
        if weight == 0.0 {
            continue;
        }
        let s = s as usize;
        let xs = diffuse(sched, x0, s, eps)?;
        let out = pred.predict(&xs, s);
        let err = DataBatch::new(
            x0.batch,
            x0.dim,
            out.data.iter().zip(&eps.data).map(|(a, b)| a - b).collect(),
        );
        terms.push(WindowTerm { s, weight, xs, err });
    }
    Ok(terms)
}

fn window_residual(terms: &[WindowTerm], batch: usize, dim: usize, k: usize) -> (DataBatch, f64) {
    let mut residual = DataBatch::zeros(batch, dim);
    for term in terms {
        for (r, e) in residual.data.iter_mut().zip(&term.err.data) {
            *r += term.weight / k as f64 * e;
        }
    }
    let loss = residual.data.iter().map(|r| r * r).sum::<f64>() / batch as f64;
    (residual, loss)
}

/// Sequence-aware loss over the window t..t+K-1 (t may be as low as 1-K):
/// mean-over-batch of ||(1/K) sum_s w_s (f(x_s, s) - eps_s)||^2, with its
/// parameter gradient accumulated across the window.
///
/// Each x_s is formed from the same x0 with its own eps_s; terms with zero
/// weight skip the predictor entirely.
pub fn sa_loss(
    params: &PredictorParams,
    sched: &NoiseSchedule,
    x0: &DataBatch,
    t: i64,
    eps_seq: &[DataBatch],
    k: usize,
    use_tau: bool,
) -> Result<(f64, PredictorGradients)> {
    if eps_seq.len() != k {
        return Err(Error::Argument(format!(
            "eps_seq length {} does not match K={k}",
            eps_seq.len()
        )));
    }
    let terms = window_terms(params, sched, x0, t, eps_seq, use_tau)?;
    let (residual, loss) = window_residual(&terms, x0.batch, x0.dim, k);
    let mut grads = PredictorGradients::zeros_like(params);
    let batch = x0.batch as f64;
    for term in &terms {
        let scale = 2.0 * term.weight / (k as f64 * batch);
        let og = DataBatch::new(
            x0.batch,
            x0.dim,
            residual.data.iter().map(|r| scale * r).collect(),
        );
        let g = params.backward(&term.xs, term.s, &og)?;
        grads.add_scaled(&g, 1.0);
    }
    Ok((loss, grads))
}

/// Value-only sequence-aware loss for an arbitrary predictor.
pub fn sa_loss_value(
    pred: &dyn NoisePredictor,
    sched: &NoiseSchedule,
    x0: &DataBatch,
    t: i64,
    eps_seq: &[DataBatch],
    k: usize,
    use_tau: bool,
) -> Result<f64> {
    if eps_seq.len() != k {
        return Err(Error::Argument(format!(
            "eps_seq length {} does not match K={k}",
            eps_seq.len()
        )));
    }
    let terms = window_terms(pred, sched, x0, t, eps_seq, use_tau)?;
    Ok(window_residual(&terms, x0.batch, x0.dim, k).1)
}

/// Adam moment estimates, one entry per parameter (flattened layer order).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(n_params: usize) -> Self {
        AdamState {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn apply(&mut self, params: &mut PredictorParams, grads: &PredictorGradients, lr: f64) {
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - self.beta1.powf(t);
        let bc2 = 1.0 - self.beta2.powf(t);
        let flat = grads.grads_flat();
        let mut idx = 0;
        params.for_each_param_mut(|p| {
            let g = flat[idx];
            self.m[idx] = self.beta1 * self.m[idx] + (1.0 - self.beta1) * g;
            self.v[idx] = self.beta2 * self.v[idx] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[idx] / bc1;
            let v_hat = self.v[idx] / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + self.eps);
            idx += 1;
        });
    }
}

/// One optimization step: draws t and the window noises, evaluates the
/// combined loss, applies Adam, updates the EMA shadow.
///
/// With lambda = 0 (or loss_kind = simple) only the single noise for the
/// simple loss is drawn, so the rng stream matches plain conventional
/// training exactly.
pub fn train_step<R: Rng>(
    params: &mut PredictorParams,
    ema: &mut EmaParams,
    opt: &mut AdamState,
    cfg: &TrainConfig,
    sched: &NoiseSchedule,
    x0: &DataBatch,
    rng: &mut R,
) -> Result<LossBreakdown> {
    cfg.validate()?;
    let t = rng.gen_range(1..=sched.timesteps);
    let eps_t = DataBatch::standard_normal(x0.batch, x0.dim, rng);
    let use_sa = cfg.loss_kind == LossKind::SequenceAware && cfg.lambda > 0.0;

    let (l_simple, mut grads) = simple_loss(params, sched, x0, t, &eps_t)?;
    let mut l_sa = 0.0;
    if use_sa {
        let mut eps_seq = Vec::with_capacity(cfg.k);
        eps_seq.push(eps_t);
        for _ in 1..cfg.k {
            eps_seq.push(DataBatch::standard_normal(x0.batch, x0.dim, rng));
        }
        let (value, sa_grads) = sa_loss(
            params,
            sched,
            x0,
            t as i64,
            &eps_seq,
            cfg.k,
            cfg.use_tau_weights,
        )?;
        l_sa = value;
        grads.add_scaled(&sa_grads, cfg.lambda);
    }
    let l_total = l_simple + cfg.lambda * l_sa;
    if !l_total.is_finite() {
        return Err(Error::NonFinite {
            step: opt.step + 1,
            t,
            detail: format!("l_simple={l_simple}, l_sa={l_sa}"),
        });
    }
    opt.apply(params, &grads, cfg.learning_rate);
    ema.update(params);
    Ok(LossBreakdown { l_simple, l_sa, l_total })
}

/// Result of a full training run.
pub struct TrainResult {
    pub params: PredictorParams,
    pub ema: EmaParams,
    pub opt: AdamState,
    /// One breakdown per step, in order.
    pub log: Vec<LossBreakdown>,
}

/// Runs cfg.steps optimization steps over minibatches drawn from the
/// dataset. Fully determined by (cfg, dataset, schedule).
pub fn train(cfg: &TrainConfig, dataset: &DataBatch, sched: &NoiseSchedule) -> Result<TrainResult> {
    cfg.validate()?;
    if dataset.batch == 0 {
        return Err(Error::Argument("dataset is empty".into()));
    }
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = PredictorParams::init(
        dataset.dim,
        &cfg.hidden_sizes,
        cfg.time_embed_dim,
        sched.timesteps,
        &mut rng,
    )?;
    let mut ema = EmaParams::new(&params, cfg.ema_decay);
    let mut opt = AdamState::new(params.n_params());
    let mut log = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        let mut minibatch = DataBatch::zeros(cfg.batch_size, dataset.dim);
        for i in 0..cfg.batch_size {
            let idx = rng.gen_range(0..dataset.batch);
            minibatch.row_mut(i).copy_from_slice(dataset.row(idx));
        }
        let breakdown = train_step(&mut params, &mut ema, &mut opt, cfg, sched, &minibatch, &mut rng)?;
        log.push(breakdown);
    }
    Ok(TrainResult { params, ema, opt, log })
}

/// Writes the per-step metrics log as CSV.
pub fn write_metrics_csv<W: std::io::Write>(log: &[LossBreakdown], mut w: W) -> std::io::Result<()> {
    writeln!(w, "step,l_simple,l_sa,l_total")?;
    for (i, b) in log.iter().enumerate() {
        writeln!(w, "{},{},{},{}", i + 1, b.l_simple, b.l_sa, b.l_total)?;
    }
    Ok(())
}
