//! The noise predictor: a time-conditioned MLP with hand-written
//! reverse-mode gradients and an EMA shadow copy.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{recover_noise, DataBatch};
use crate::schedule::NoiseSchedule;

/// Anything that maps (x_t, t) to a noise estimate of the same shape.
pub trait NoisePredictor {
    fn predict(&self, xt: &DataBatch, t: usize) -> DataBatch;
}

/// Deterministic sinusoidal features of the integer timestep at
/// geometrically spaced frequencies. `dim` must be even.
pub fn embed_time(t: usize, timesteps: usize, dim: usize) -> Result<Vec<f64>> {
    if dim % 2 != 0 {
        return Err(Error::Config(format!("time embedding dim must be even, got {dim}")));
    }
    let _ = timesteps;
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for k in 0..half {
        let exponent = if half > 1 { k as f64 / (half - 1) as f64 } else { 0.0 };
        let freq = 10_000f64.powf(-exponent);
        let angle = t as f64 * freq;
        out[2 * k] = angle.sin();
        out[2 * k + 1] = angle.cos();
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed in terms of the activation output.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

/// One dense layer; weights are row-major `(out_dim, in_dim)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Layer {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Layer {
    fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Layer { weights: vec![0.0; in_dim * out_dim], biases: vec![0.0; out_dim], in_dim, out_dim }
    }

    fn apply(&self, input: &[f64], output: &mut [f64]) {
        for (o, out) in output.iter_mut().enumerate() {
            let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
            let mut acc = self.biases[o];
            for (w, x) in row.iter().zip(input) {
                acc += w * x;
            }
            *out = acc;
        }
    }
}

/// Weights of the MLP mapping (data dim + time-embedding dim) through the
/// hidden layers back to data dim, plus the hyperparameters that fix its
/// topology.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictorParams {
    pub layers: Vec<Layer>,
    pub hidden_sizes: Vec<usize>,
    pub data_dim: usize,
    pub time_embed_dim: usize,
    pub timesteps: usize,
    pub activation: Activation,
}

/// Per-parameter gradients, same shapes as [`PredictorParams`].
#[derive(Debug, Clone)]
pub struct PredictorGradients {
    pub layers: Vec<Layer>,
}

impl PredictorParams {
    /// Uniform fan-in init for hidden layers, zero-initialized final layer
    /// so the untrained predictor outputs 0.
    pub fn init<R: Rng>(
        data_dim: usize,
        hidden_sizes: &[usize],
        time_embed_dim: usize,
        timesteps: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if time_embed_dim % 2 != 0 {
            return Err(Error::Config(format!(
                "time embedding dim must be even, got {time_embed_dim}"
            )));
        }
        if hidden_sizes.is_empty() {
            return Err(Error::Config("at least one hidden layer required".into()));
        }
        let mut dims = vec![data_dim + time_embed_dim];
        dims.extend_from_slice(hidden_sizes);
        dims.push(data_dim);
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for w in dims.windows(2) {
            let (in_dim, out_dim) = (w[0], w[1]);
            let mut layer = Layer::zeros(in_dim, out_dim);
            let last = layers.len() == dims.len() - 2;
            if !last {
                let bound = 1.0 / (in_dim as f64).sqrt();
                for w in layer.weights.iter_mut() {
                    *w = rng.gen_range(-bound..bound);
                }
                for b in layer.biases.iter_mut() {
                    *b = rng.gen_range(-bound..bound);
                }
            }
            layers.push(layer);
        }
        Ok(PredictorParams {
            layers,
            hidden_sizes: hidden_sizes.to_vec(),
            data_dim,
            time_embed_dim,
            timesteps,
            activation: Activation::Tanh,
        })
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    /// f_theta(x_t, t) for every row of the batch.
    pub fn forward(&self, xt: &DataBatch, t: usize) -> Result<DataBatch> {
        if xt.dim != self.data_dim {
            return Err(Error::ShapeMismatch {
                expected: format!("dim {}", self.data_dim),
                got: format!("dim {}", xt.dim),
            });
        }
        let embed = embed_time(t, self.timesteps, self.time_embed_dim)?;
        let mut out = DataBatch::zeros(xt.batch, self.data_dim);
        let mut buf_a = Vec::new();
        let mut buf_b = Vec::new();
        for i in 0..xt.batch {
            buf_a.clear();
            buf_a.extend_from_slice(xt.row(i));
            buf_a.extend_from_slice(&embed);
            for (li, layer) in self.layers.iter().enumerate() {
                buf_b.resize(layer.out_dim, 0.0);
                layer.apply(&buf_a, &mut buf_b);
                if li + 1 < self.layers.len() {
                    for v in buf_b.iter_mut() {
                        *v = self.activation.apply(*v);
                    }
                }
                std::mem::swap(&mut buf_a, &mut buf_b);
            }
            out.row_mut(i).copy_from_slice(&buf_a);
        }
        Ok(out)
    }

    /// Reverse-mode gradient of `sum(output * output_grad)` with respect to
    /// every parameter, accumulated additively over batch rows.
    pub fn backward(
        &self,
        xt: &DataBatch,
        t: usize,
        output_grad: &DataBatch,
    ) -> Result<PredictorGradients> {
        if xt.dim != self.data_dim {
            return Err(Error::ShapeMismatch {
                expected: format!("dim {}", self.data_dim),
                got: format!("dim {}", xt.dim),
            });
        }
        if output_grad.batch != xt.batch || output_grad.dim != self.data_dim {
            return Err(Error::ShapeMismatch {
                expected: format!("({}, {})", xt.batch, self.data_dim),
                got: format!("({}, {})", output_grad.batch, output_grad.dim),
            });
        }
        let embed = embed_time(t, self.timesteps, self.time_embed_dim)?;
        let mut grads = PredictorGradients {
            layers: self.layers.iter().map(|l| Layer::zeros(l.in_dim, l.out_dim)).collect(),
        };
        let n_layers = self.layers.len();
        // activations[0] is the network input; activations[l+1] the output of
        // layer l (post-activation for hidden layers).
        let mut activations: Vec<Vec<f64>> = Vec::with_capacity(n_layers + 1);
        for i in 0..xt.batch {
            activations.clear();
            let mut input = Vec::with_capacity(self.data_dim + self.time_embed_dim);
            input.extend_from_slice(xt.row(i));
            input.extend_from_slice(&embed);
            activations.push(input);
            for (li, layer) in self.layers.iter().enumerate() {
                let mut out = vec![0.0; layer.out_dim];
                layer.apply(&activations[li], &mut out);
                if li + 1 < n_layers {
                    for v in out.iter_mut() {
                        *v = self.activation.apply(*v);
                    }
                }
                activations.push(out);
            }
            // Adjoint sweep.
            let mut delta: Vec<f64> = output_grad.row(i).to_vec();
            for li in (0..n_layers).rev() {
                let layer = &self.layers[li];
                let grad_layer = &mut grads.layers[li];
                let input = &activations[li];
                for (o, d) in delta.iter().enumerate() {
                    grad_layer.biases[o] += d;
                    let row = &mut grad_layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                    for (g, x) in row.iter_mut().zip(input) {
                        *g += d * x;
                    }
                }
                if li > 0 {
                    let mut prev = vec![0.0; layer.in_dim];
                    for (o, d) in delta.iter().enumerate() {
                        let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                        for (p, w) in prev.iter_mut().zip(row) {
                            *p += d * w;
                        }
                    }
                    // Pre-activation adjoint through the hidden nonlinearity.
                    for (p, y) in prev.iter_mut().zip(&activations[li]) {
                        *p *= self.activation.derivative_from_output(*y);
                    }
                    delta = prev;
                }
            }
        }
        Ok(grads)
    }

    pub fn for_each_param_mut(&mut self, mut f: impl FnMut(&mut f64)) {
        for layer in &mut self.layers {
            for w in &mut layer.weights {
                f(w);
            }
            for b in &mut layer.biases {
                f(b);
            }
        }
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for layer in &self.layers {
            out.extend_from_slice(&layer.weights);
            out.extend_from_slice(&layer.biases);
        }
        out
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) {
        let mut it = flat.iter();
        self.for_each_param_mut(|p| *p = *it.next().expect("flat length mismatch"));
    }
}

impl NoisePredictor for PredictorParams {
    fn predict(&self, xt: &DataBatch, t: usize) -> DataBatch {
        self.forward(xt, t).expect("shape checked by caller")
    }
}

impl PredictorGradients {
    pub fn zeros_like(params: &PredictorParams) -> Self {
        PredictorGradients {
            layers: params.layers.iter().map(|l| Layer::zeros(l.in_dim, l.out_dim)).collect(),
        }
    }

    pub fn grads_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for layer in &self.layers {
            out.extend_from_slice(&layer.weights);
            out.extend_from_slice(&layer.biases);
        }
        out
    }

    pub fn add_scaled(&mut self, other: &PredictorGradients, scale: f64) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weights.iter_mut().zip(&b.weights) {
                *x += scale * y;
            }
            for (x, y) in a.biases.iter_mut().zip(&b.biases) {
                *x += scale * y;
            }
        }
    }
}

/// EMA shadow of the predictor parameters; the shadow is what sampling and
/// gap evaluation use.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmaParams {
    pub shadow: PredictorParams,
    pub decay: f64,
}

impl EmaParams {
    pub fn new(params: &PredictorParams, decay: f64) -> Self {
        EmaParams { shadow: params.clone(), decay }
    }

    /// shadow <- decay * shadow + (1 - decay) * params, elementwise.
    pub fn update(&mut self, params: &PredictorParams) {
        let d = self.decay;
        for (s, p) in self.shadow.layers.iter_mut().zip(&params.layers) {
            for (a, b) in s.weights.iter_mut().zip(&p.weights) {
                *a = d * *a + (1.0 - d) * b;
            }
            for (a, b) in s.biases.iter_mut().zip(&p.biases) {
                *a = d * *a + (1.0 - d) * b;
            }
        }
    }
}

/// Predictor that returns the exact noise for points diffused from a known
/// x0, optionally shifted by a constant offset per dimension.
///
/// Rows of `x0` must align with the rows of the batches passed to `predict`.
pub struct OraclePredictor {
    pub x0: DataBatch,
    pub sched: NoiseSchedule,
    pub offset: Vec<f64>,
}

impl OraclePredictor {
    pub fn exact(x0: DataBatch, sched: NoiseSchedule) -> Self {
        let dim = x0.dim;
        OraclePredictor { x0, sched, offset: vec![0.0; dim] }
    }

    pub fn with_offset(x0: DataBatch, sched: NoiseSchedule, offset: Vec<f64>) -> Self {
        assert_eq!(offset.len(), x0.dim);
        OraclePredictor { x0, sched, offset }
    }
}

impl NoisePredictor for OraclePredictor {
    fn predict(&self, xt: &DataBatch, t: usize) -> DataBatch {
        let mut eps = recover_noise(&self.sched, &self.x0, xt, t).expect("oracle shape");
        for i in 0..eps.batch {
            for (v, c) in eps.row_mut(i).iter_mut().zip(&self.offset) {
                *v += c;
            }
        }
        eps
    }
}
