//! Single-layer LSTM regressor with exact backpropagation through time.
//!
//! Gate rows are stacked in the order input, forget, candidate, output, so
//! `input_weights` is `4H × I` and `recurrent_weights` is `4H × H`, both
//! row-major. The prediction is an affine head on the final hidden state.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;

pub const PARAM_GROUPS: [&str; 6] = [
    "input_weights",
    "recurrent_weights",
    "gate_biases",
    "head_weights",
    "head_bias",
    "log_a",
];

/// Learnable weights of the regressor plus the unconstrained `log_a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    pub input_size: usize,
    pub hidden_size: usize,
    pub input_weights: Vec<f64>,
    pub recurrent_weights: Vec<f64>,
    pub gate_biases: Vec<f64>,
    pub head_weights: Vec<f64>,
    pub head_bias: f64,
    pub log_a: f64,
}

impl LstmParams {
    pub fn zeros(input_size: usize, hidden_size: usize) -> Self {
        let g = 4 * hidden_size;
        Self {
            input_size,
            hidden_size,
            input_weights: vec![0.0; g * input_size],
            recurrent_weights: vec![0.0; g * hidden_size],
            gate_biases: vec![0.0; g],
            head_weights: vec![0.0; hidden_size],
            head_bias: 0.0,
            log_a: 0.0,
        }
    }

    /// Uniform `[-k, k]` weights with `k = 1/√H`, forget-gate bias `+1`.
    pub fn init(input_size: usize, hidden_size: usize, log_a: f64, seed: u64) -> Self {
        let k = 1.0 / (hidden_size as f64).sqrt();
        Self::init_uniform(input_size, hidden_size, k, log_a, seed)
    }

    pub fn init_uniform(input_size: usize, hidden_size: usize, bound: f64, log_a: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Self::zeros(input_size, hidden_size);
        for group in [
            &mut p.input_weights,
            &mut p.recurrent_weights,
            &mut p.gate_biases,
            &mut p.head_weights,
        ] {
            for w in group.iter_mut() {
                *w = rng.random_range(-bound..=bound);
            }
        }
        p.head_bias = rng.random_range(-bound..=bound);
        for j in 0..hidden_size {
            p.gate_biases[hidden_size + j] = 1.0;
        }
        p.log_a = log_a;
        p
    }

    /// Vegetation factor `a = exp(log_a)`.
    pub fn a(&self) -> f64 {
        self.log_a.exp()
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.input_size, self.hidden_size)
    }

    pub fn groups(&self) -> [(&'static str, &[f64]); 6] {
        [
            (PARAM_GROUPS[0], &self.input_weights),
            (PARAM_GROUPS[1], &self.recurrent_weights),
            (PARAM_GROUPS[2], &self.gate_biases),
            (PARAM_GROUPS[3], &self.head_weights),
            (PARAM_GROUPS[4], std::slice::from_ref(&self.head_bias)),
            (PARAM_GROUPS[5], std::slice::from_ref(&self.log_a)),
        ]
    }

    pub fn groups_mut(&mut self) -> [(&'static str, &mut [f64]); 6] {
        [
            (PARAM_GROUPS[0], &mut self.input_weights),
            (PARAM_GROUPS[1], &mut self.recurrent_weights),
            (PARAM_GROUPS[2], &mut self.gate_biases),
            (PARAM_GROUPS[3], &mut self.head_weights),
            (PARAM_GROUPS[4], std::slice::from_mut(&mut self.head_bias)),
            (PARAM_GROUPS[5], std::slice::from_mut(&mut self.log_a)),
        ]
    }

    pub fn num_params(&self) -> usize {
        self.groups().iter().map(|(_, s)| s.len()).sum()
    }

    pub fn check_shape(&self) -> Result<()> {
        let (i, h) = (self.input_size, self.hidden_size);
        if h == 0 || i == 0 {
            return Err(Error::DimensionMismatch("zero input or hidden size".into()));
        }
        if self.input_weights.len() != 4 * h * i
            || self.recurrent_weights.len() != 4 * h * h
            || self.gate_biases.len() != 4 * h
            || self.head_weights.len() != h
        {
            return Err(Error::DimensionMismatch(format!(
                "weight arrays inconsistent with input {i}, hidden {h}"
            )));
        }
        Ok(())
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.input_size == other.input_size && self.hidden_size == other.hidden_size
    }

    pub fn is_finite(&self) -> bool {
        self.groups().iter().all(|(_, s)| s.iter().all(|v| v.is_finite()))
    }

    /// `self += other`, element-wise in a fixed order.
    pub fn add_assign(&mut self, other: &Self) {
        for ((_, dst), (_, src)) in self.groups_mut().into_iter().zip(other.groups()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }

    pub fn scale(&mut self, k: f64) {
        for (_, s) in self.groups_mut() {
            s.iter_mut().for_each(|v| *v *= k);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.groups()
            .iter()
            .flat_map(|(_, s)| s.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.groups().iter().flat_map(|(_, s)| s.iter().copied()).collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_params());
        let mut it = flat.iter();
        for (_, s) in self.groups_mut() {
            for v in s.iter_mut() {
                *v = *it.next().expect("length checked");
            }
        }
    }

    /// `(group name, index within group)` for every flat position.
    pub fn flat_labels(&self) -> Vec<(&'static str, usize)> {
        self.groups()
            .iter()
            .flat_map(|(name, s)| (0..s.len()).map(move |i| (*name, i)))
            .collect()
    }
}

/// Dense `batch × window × dim` input tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct InputTensor {
    pub batch: usize,
    pub window: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl InputTensor {
    pub fn new(batch: usize, window: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != batch * window * dim {
            return Err(Error::DimensionMismatch(format!(
                "input tensor has {} values, expected {batch}×{window}×{dim}",
                data.len()
            )));
        }
        Ok(Self {
            batch,
            window,
            dim,
            data,
        })
    }

    pub fn sample(&self, b: usize) -> &[f64] {
        let len = self.window * self.dim;
        &self.data[b * len..(b + 1) * len]
    }
}

/// Activations retained for the backward pass of one sequence.
#[derive(Debug, Clone)]
pub struct SequenceCache {
    window: usize,
    inputs: Vec<f64>,
    /// Activated gates per step, `window × 4H` (i, f, g, o).
    gates: Vec<f64>,
    /// Cell states including the zero initial state, `(window + 1) × H`.
    cells: Vec<f64>,
    /// Hidden states including the zero initial state, `(window + 1) × H`.
    hidden: Vec<f64>,
    pub output: f64,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Runs one sequence (`window × input_size`, row-major) from zero state.
pub fn forward_sequence(params: &LstmParams, inputs: &[f64], window: usize) -> SequenceCache {
    let (ni, h) = (params.input_size, params.hidden_size);
    debug_assert_eq!(inputs.len(), window * ni);
    let mut gates = vec![0.0; window * 4 * h];
    let mut cells = vec![0.0; (window + 1) * h];
    let mut hidden = vec![0.0; (window + 1) * h];
    let mut z = vec![0.0; 4 * h];

    for t in 0..window {
        let x = &inputs[t * ni..(t + 1) * ni];
        let h_prev = &hidden[t * h..(t + 1) * h];
        for (r, zr) in z.iter_mut().enumerate() {
            let wx: f64 = params.input_weights[r * ni..(r + 1) * ni]
                .iter()
                .zip(x)
                .map(|(w, v)| w * v)
                .sum();
            let uh: f64 = params.recurrent_weights[r * h..(r + 1) * h]
                .iter()
                .zip(h_prev)
                .map(|(u, v)| u * v)
                .sum();
            *zr = wx + uh + params.gate_biases[r];
        }
        let g_t = &mut gates[t * 4 * h..(t + 1) * 4 * h];
        for j in 0..h {
            g_t[j] = sigmoid(z[j]);
            g_t[h + j] = sigmoid(z[h + j]);
            g_t[2 * h + j] = z[2 * h + j].tanh();
            g_t[3 * h + j] = sigmoid(z[3 * h + j]);
        }
        for j in 0..h {
            let (i, f, g, o) = (g_t[j], g_t[h + j], g_t[2 * h + j], g_t[3 * h + j]);
            let c = f * cells[t * h + j] + i * g;
            cells[(t + 1) * h + j] = c;
            hidden[(t + 1) * h + j] = o * c.tanh();
        }
    }
    let last = &hidden[window * h..];
    let output = params.head_weights.iter().zip(last).map(|(w, v)| w * v).sum::<f64>() + params.head_bias;
    SequenceCache {
        window,
        inputs: inputs.to_vec(),
        gates,
        cells,
        hidden,
        output,
    }
}

/// Accumulates `∂L/∂params` into `grads` given `dy = ∂L/∂output` and
/// returns `∂L/∂inputs` (`window × input_size`). `grads.log_a` is untouched.
pub fn backward_sequence(params: &LstmParams, cache: &SequenceCache, dy: f64, grads: &mut LstmParams) -> Vec<f64> {
    let (ni, h, n) = (params.input_size, params.hidden_size, cache.window);
    let mut dx = vec![0.0; n * ni];
    if dy == 0.0 {
        return dx;
    }
    let last = &cache.hidden[n * h..];
    for (g, l) in grads.head_weights.iter_mut().zip(last) {
        *g += dy * l;
    }
    grads.head_bias += dy;

    let mut dh: Vec<f64> = params.head_weights.iter().map(|w| dy * w).collect();
    let mut dc = vec![0.0; h];
    let mut dz = vec![0.0; 4 * h];
    for t in (0..n).rev() {
        let g_t = &cache.gates[t * 4 * h..(t + 1) * 4 * h];
        let c_prev = &cache.cells[t * h..(t + 1) * h];
        let c_t = &cache.cells[(t + 1) * h..(t + 2) * h];
        let h_prev = &cache.hidden[t * h..(t + 1) * h];
        let x = &cache.inputs[t * ni..(t + 1) * ni];

        for j in 0..h {
            let (i, f, g, o) = (g_t[j], g_t[h + j], g_t[2 * h + j], g_t[3 * h + j]);
            let tc = c_t[j].tanh();
            let dct = dc[j] + dh[j] * o * (1.0 - tc * tc);
            dz[j] = dct * g * i * (1.0 - i);
            dz[h + j] = dct * c_prev[j] * f * (1.0 - f);
            dz[2 * h + j] = dct * i * (1.0 - g * g);
            dz[3 * h + j] = dh[j] * tc * o * (1.0 - o);
            dc[j] = dct * f;
        }

        let dx_t = &mut dx[t * ni..(t + 1) * ni];
        dh.iter_mut().for_each(|v| *v = 0.0);
        for (r, &dzr) in dz.iter().enumerate() {
            if dzr == 0.0 {
                continue;
            }
            let w_row = &params.input_weights[r * ni..(r + 1) * ni];
            let gw_row = &mut grads.input_weights[r * ni..(r + 1) * ni];
            for k in 0..ni {
                gw_row[k] += dzr * x[k];
                dx_t[k] += dzr * w_row[k];
            }
            let u_row = &params.recurrent_weights[r * h..(r + 1) * h];
            let gu_row = &mut grads.recurrent_weights[r * h..(r + 1) * h];
            for k in 0..h {
                gu_row[k] += dzr * h_prev[k];
                dh[k] += dzr * u_row[k];
            }
            grads.gate_biases[r] += dzr;
        }
    }
    dx
}

/// Forward pass over a batch.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub predictions: Vec<f64>,
    pub caches: Vec<SequenceCache>,
}

pub fn lstm_forward(inputs: &InputTensor, params: &LstmParams, exec: Exec) -> Result<ForwardPass> {
    params.check_shape()?;
    if inputs.dim != params.input_size {
        return Err(Error::DimensionMismatch(format!(
            "input dim {} but model expects {}",
            inputs.dim, params.input_size
        )));
    }
    if inputs.data.len() != inputs.batch * inputs.window * inputs.dim || inputs.window == 0 {
        return Err(Error::DimensionMismatch("malformed input tensor".into()));
    }
    let caches = exec.map_range(inputs.batch, |b| {
        forward_sequence(params, inputs.sample(b), inputs.window)
    });
    Ok(ForwardPass {
        predictions: caches.iter().map(|c| c.output).collect(),
        caches,
    })
}

/// Parameter gradients (summed over the batch in sample order) and input
/// gradients (`batch × window × dim`) for upstream `∂L/∂prediction`.
pub fn lstm_backward(
    pass: &ForwardPass,
    params: &LstmParams,
    upstream: &[f64],
    exec: Exec,
) -> Result<(LstmParams, Vec<f64>)> {
    if upstream.len() != pass.caches.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} upstream gradients for {} predictions",
            upstream.len(),
            pass.caches.len()
        )));
    }
    let per_sample = exec.map_range(pass.caches.len(), |b| {
        let mut g = params.zeros_like();
        let dx = backward_sequence(params, &pass.caches[b], upstream[b], &mut g);
        (g, dx)
    });
    let mut grads = params.zeros_like();
    let mut dx = Vec::with_capacity(per_sample.iter().map(|(_, d)| d.len()).sum());
    for (g, d) in &per_sample {
        grads.add_assign(g);
        dx.extend_from_slice(d);
    }
    Ok((grads, dx))
}

/// Relative error, falling back to absolute error when both magnitudes are
/// below `1e-12`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    let diff = (analytic - numeric).abs();
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

pub fn central_difference(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientReport {
    pub max_rel_error: f64,
    /// Largest error within each parameter group.
    pub per_parameter_errors: BTreeMap<String, f64>,
}

/// Compares `analytic` against central differences of `loss` at every scalar
/// parameter.
pub fn finite_difference_gradients(
    params: &LstmParams,
    analytic: &LstmParams,
    loss: impl Fn(&LstmParams) -> f64,
    h: f64,
) -> Result<GradientReport> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "finite-difference step must be > 0, got {h}"
        )));
    }
    if !params.same_shape(analytic) {
        return Err(Error::DimensionMismatch(
            "analytic gradient shape differs from parameters".into(),
        ));
    }
    let base = params.to_flat();
    let an = analytic.to_flat();
    let labels = params.flat_labels();
    let mut probe = params.clone();
    let mut per_parameter_errors: BTreeMap<String, f64> = BTreeMap::new();
    let mut max_rel_error: f64 = 0.0;
    let mut flat = base.clone();
    for k in 0..base.len() {
        flat[k] = base[k] + h;
        probe.set_flat(&flat);
        let plus = loss(&probe);
        flat[k] = base[k] - h;
        probe.set_flat(&flat);
        let minus = loss(&probe);
        flat[k] = base[k];
        let numeric = (plus - minus) / (2.0 * h);
        let err = relative_error(an[k], numeric);
        let entry = per_parameter_errors.entry(labels[k].0.to_string()).or_insert(0.0);
        *entry = entry.max(err);
        max_rel_error = max_rel_error.max(err);
    }
    Ok(GradientReport {
        max_rel_error,
        per_parameter_errors,
    })
}

/// Rescales `grads` so its global norm is at most `max_norm`. Returns the
/// norm before clipping.
pub fn clip_global_norm(grads: &mut LstmParams, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm && norm > 0.0 {
        grads.scale(max_norm / norm);
    }
    norm
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub m: LstmParams,
    pub v: LstmParams,
}

impl AdamState {
    pub fn new(params: &LstmParams) -> Self {
        Self {
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }
}

/// One bias-corrected Adam update.
pub fn optimizer_step(
    params: &mut LstmParams,
    grads: &LstmParams,
    state: &mut AdamState,
    config: &AdamConfig,
) -> Result<()> {
    if !params.same_shape(grads) || !params.same_shape(&state.m) || !params.same_shape(&state.v) {
        return Err(Error::DimensionMismatch("optimizer shapes disagree".into()));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - config.beta1.powi(t);
    let c2 = 1.0 - config.beta2.powi(t);
    let AdamState { m, v, .. } = state;
    for (((_, p), (_, g)), ((_, m), (_, v))) in params
        .groups_mut()
        .into_iter()
        .zip(grads.groups())
        .zip(m.groups_mut().into_iter().zip(v.groups_mut()))
    {
        for k in 0..p.len() {
            m[k] = config.beta1 * m[k] + (1.0 - config.beta1) * g[k];
            v[k] = config.beta2 * v[k] + (1.0 - config.beta2) * g[k] * g[k];
            let m_hat = m[k] / c1;
            let v_hat = v[k] / c2;
            p[k] -= config.learning_rate * m_hat / (v_hat.sqrt() + config.epsilon);
        }
    }
    Ok(())
}
