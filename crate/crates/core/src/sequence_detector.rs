//! Bias-free GRU encoder with a linear latent projection, trained with the
//! deep one-class (SVDD) objective. An event's anomaly score is the
//! Euclidean distance of its latent vector from the frozen center.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::{dot, l2_norm, sigmoid, Matrix};
use crate::token_embeddings::EventVector;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DetectorError {
    #[error("dataset contains no events")]
    EmptyDataset,
    #[error("invalid detector configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("input has dimension {got}, detector expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite parameters after epoch {epoch}, update {update}; lower the learning rate")]
    NonFiniteUpdate { epoch: usize, update: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectorDims {
    pub input: usize,
    pub hidden: usize,
    pub latent: usize,
}

/// Names of the seven weight matrices, in [`DetectorParams::matrices`] order.
pub const PARAM_NAMES: [&str; 7] = ["w_z", "w_r", "w_h", "u_z", "u_r", "u_h", "w_out"];

/// GRU gate weights and latent projection. There are no bias vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorParams {
    pub w_z: Matrix,
    pub w_r: Matrix,
    pub w_h: Matrix,
    pub u_z: Matrix,
    pub u_r: Matrix,
    pub u_h: Matrix,
    pub w_out: Matrix,
}

impl DetectorParams {
    pub fn zeros(dims: DetectorDims) -> Self {
        let DetectorDims { input: d, hidden: h, latent: z } = dims;
        DetectorParams {
            w_z: Matrix::zeros(h, d),
            w_r: Matrix::zeros(h, d),
            w_h: Matrix::zeros(h, d),
            u_z: Matrix::zeros(h, h),
            u_r: Matrix::zeros(h, h),
            u_h: Matrix::zeros(h, h),
            w_out: Matrix::zeros(z, h),
        }
    }

    pub fn dims(&self) -> DetectorDims {
        DetectorDims {
            input: self.w_z.cols(),
            hidden: self.w_z.rows(),
            latent: self.w_out.rows(),
        }
    }

    pub fn matrices(&self) -> [&Matrix; 7] {
        [&self.w_z, &self.w_r, &self.w_h, &self.u_z, &self.u_r, &self.u_h, &self.w_out]
    }

    pub fn matrices_mut(&mut self) -> [&mut Matrix; 7] {
        [
            &mut self.w_z,
            &mut self.w_r,
            &mut self.w_h,
            &mut self.u_z,
            &mut self.u_r,
            &mut self.u_h,
            &mut self.w_out,
        ]
    }

    pub fn parameter_count(&self) -> usize {
        self.matrices().iter().map(|m| m.data().len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.matrices().iter().all(|m| m.is_finite())
    }

    /// `latent = W_out · h`
    pub fn project(&self, hidden: &[f64]) -> Vec<f64> {
        self.w_out.matvec(hidden)
    }
}

/// Uniform in `±1/√fan_in` per matrix, drawn in [`PARAM_NAMES`] order.
pub fn init_params(dims: DetectorDims, seed: u64) -> Result<DetectorParams, DetectorError> {
    if dims.input == 0 || dims.hidden == 0 || dims.latent == 0 {
        return Err(DetectorError::InvalidConfig("dimensions must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let DetectorDims { input: d, hidden: h, latent: z } = dims;
    let bd = 1.0 / (d as f64).sqrt();
    let bh = 1.0 / (h as f64).sqrt();
    Ok(DetectorParams {
        w_z: Matrix::uniform(h, d, bd, &mut rng),
        w_r: Matrix::uniform(h, d, bd, &mut rng),
        w_h: Matrix::uniform(h, d, bd, &mut rng),
        u_z: Matrix::uniform(h, h, bh, &mut rng),
        u_r: Matrix::uniform(h, h, bh, &mut rng),
        u_h: Matrix::uniform(h, h, bh, &mut rng),
        w_out: Matrix::uniform(z, h, bh, &mut rng),
    })
}

/// Intermediate values of one GRU step, kept for backpropagation.
#[derive(Debug, Clone)]
struct StepCache {
    update: Vec<f64>,
    reset: Vec<f64>,
    candidate: Vec<f64>,
    hidden: Vec<f64>,
}

fn gru_step_cached(params: &DetectorParams, x: &[f64], h_prev: &[f64]) -> StepCache {
    let n = h_prev.len();
    let mut update = vec![0.0; n];
    let mut reset = vec![0.0; n];
    for i in 0..n {
        update[i] = sigmoid(dot(params.w_z.row(i), x) + dot(params.u_z.row(i), h_prev));
        reset[i] = sigmoid(dot(params.w_r.row(i), x) + dot(params.u_r.row(i), h_prev));
    }
    let gated: Vec<f64> = reset.iter().zip(h_prev).map(|(r, h)| r * h).collect();
    let mut candidate = vec![0.0; n];
    let mut hidden = vec![0.0; n];
    for i in 0..n {
        candidate[i] = (dot(params.w_h.row(i), x) + dot(params.u_h.row(i), &gated)).tanh();
        hidden[i] = (1.0 - update[i]) * h_prev[i] + update[i] * candidate[i];
    }
    StepCache {
        update,
        reset,
        candidate,
        hidden,
    }
}

/// One bias-free GRU step:
///
/// ```text
/// z = σ(W_z x + U_z h)      r = σ(W_r x + U_r h)
/// h̃ = tanh(W_h x + U_h (r ⊙ h))
/// h' = (1 - z) ⊙ h + z ⊙ h̃
/// ```
pub fn gru_step(params: &DetectorParams, x: &[f64], h_prev: &[f64]) -> Vec<f64> {
    gru_step_cached(params, x, h_prev).hidden
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardPass {
    pub latents: Vec<Vec<f64>>,
    pub hidden_final: Vec<f64>,
}

/// Runs the GRU along `xs` from `h0`, projecting every hidden state.
pub fn forward<X: AsRef<[f64]>>(params: &DetectorParams, xs: &[X], h0: &[f64]) -> ForwardPass {
    let mut h = h0.to_vec();
    let mut latents = Vec::with_capacity(xs.len());
    for x in xs {
        h = gru_step(params, x.as_ref(), &h);
        latents.push(params.project(&h));
    }
    ForwardPass {
        latents,
        hidden_final: h,
    }
}

/// Frozen hypersphere center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypersphere {
    pub center: Vec<f64>,
    pub frozen: bool,
}

impl Hypersphere {
    /// `‖latent − c‖₂`
    pub fn distance(&self, latent: &[f64]) -> f64 {
        debug_assert_eq!(latent.len(), self.center.len());
        latent
            .iter()
            .zip(&self.center)
            .map(|(l, c)| (l - c) * (l - c))
            .sum::<f64>()
            .sqrt()
    }
}

pub const DEFAULT_CENTER_FLOOR: f64 = 0.01;

/// Mean latent of a full initial forward pass over every sequence (each
/// started from a zero hidden state). Components smaller in magnitude than
/// `floor` are pushed out to `±floor`; exact zeros go to `+floor`.
pub fn compute_center<X: AsRef<[f64]>>(
    params: &DetectorParams,
    dataset: &[Vec<X>],
    floor: f64,
) -> Result<Hypersphere, DetectorError> {
    let dims = params.dims();
    let mut sum = vec![0.0; dims.latent];
    let mut count = 0usize;
    for seq in dataset {
        let pass = forward(params, seq, &vec![0.0; dims.hidden]);
        for latent in &pass.latents {
            for (s, l) in sum.iter_mut().zip(latent) {
                *s += l;
            }
        }
        count += pass.latents.len();
    }
    if count == 0 {
        return Err(DetectorError::EmptyDataset);
    }
    let center = sum
        .into_iter()
        .map(|s| apply_floor(s / count as f64, floor))
        .collect();
    Ok(Hypersphere {
        center,
        frozen: true,
    })
}

fn apply_floor(value: f64, floor: f64) -> f64 {
    if value.abs() >= floor {
        value
    } else if value < 0.0 {
        -floor
    } else {
        floor
    }
}

/// Mean squared distance of `latents` from `center`; zero for no latents.
pub fn svdd_loss<L: AsRef<[f64]>>(latents: &[L], center: &[f64]) -> f64 {
    if latents.is_empty() {
        return 0.0;
    }
    let total: f64 = latents
        .iter()
        .map(|l| {
            l.as_ref()
                .iter()
                .zip(center)
                .map(|(a, c)| (a - c) * (a - c))
                .sum::<f64>()
        })
        .sum();
    total / latents.len() as f64
}

/// `(λ/2) Σ ‖W‖²_F` over all seven matrices.
pub fn weight_penalty(params: &DetectorParams, lambda: f64) -> f64 {
    if lambda == 0.0 {
        return 0.0;
    }
    0.5 * lambda * params.matrices().iter().map(|m| m.frobenius_sq()).sum::<f64>()
}

/// Objective value and its gradient with respect to every weight matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub loss: f64,
    pub params: DetectorParams,
    pub hidden_final: Vec<f64>,
}

/// `svdd_loss(forward(xs, h0).latents, c) + weight_penalty(λ)` and its exact
/// gradient by backpropagation through time over the whole of `xs`.
/// `h0` is treated as a constant.
pub fn loss_and_gradients<X: AsRef<[f64]>>(
    params: &DetectorParams,
    xs: &[X],
    h0: &[f64],
    center: &[f64],
    lambda: f64,
) -> Gradients {
    let dims = params.dims();
    let mut grads = DetectorParams::zeros(dims);
    let t_len = xs.len();

    let mut caches = Vec::with_capacity(t_len);
    let mut h = h0.to_vec();
    for x in xs {
        let cache = gru_step_cached(params, x.as_ref(), &h);
        h = cache.hidden.clone();
        caches.push(cache);
    }
    let hidden_final = h;

    let mut sq_total = 0.0;
    let scale = if t_len > 0 { 2.0 / t_len as f64 } else { 0.0 };
    let mut dh_next = vec![0.0; dims.hidden];
    let mut d_latent = vec![0.0; dims.latent];
    let mut dh = vec![0.0; dims.hidden];
    let mut d_gated = vec![0.0; dims.hidden];
    let mut da_z = vec![0.0; dims.hidden];
    let mut da_r = vec![0.0; dims.hidden];
    let mut da_h = vec![0.0; dims.hidden];
    for t in (0..t_len).rev() {
        let cache = &caches[t];
        let h_prev: &[f64] = if t == 0 { h0 } else { &caches[t - 1].hidden };
        let x = xs[t].as_ref();

        let latent = params.project(&cache.hidden);
        for k in 0..dims.latent {
            let diff = latent[k] - center[k];
            sq_total += diff * diff;
            d_latent[k] = scale * diff;
        }
        grads.w_out.add_outer(&d_latent, &cache.hidden);
        dh.copy_from_slice(&dh_next);
        params.w_out.add_transpose_matvec(&d_latent, &mut dh);

        let gated: Vec<f64> = cache.reset.iter().zip(h_prev).map(|(r, h)| r * h).collect();
        for i in 0..dims.hidden {
            let z = cache.update[i];
            let cand = cache.candidate[i];
            da_z[i] = dh[i] * (cand - h_prev[i]) * z * (1.0 - z);
            da_h[i] = dh[i] * z * (1.0 - cand * cand);
            dh_next[i] = dh[i] * (1.0 - z);
        }
        grads.w_h.add_outer(&da_h, x);
        grads.u_h.add_outer(&da_h, &gated);
        d_gated.iter_mut().for_each(|v| *v = 0.0);
        params.u_h.add_transpose_matvec(&da_h, &mut d_gated);
        for i in 0..dims.hidden {
            let r = cache.reset[i];
            da_r[i] = d_gated[i] * h_prev[i] * r * (1.0 - r);
            dh_next[i] += d_gated[i] * r;
        }
        grads.w_z.add_outer(&da_z, x);
        grads.u_z.add_outer(&da_z, h_prev);
        grads.w_r.add_outer(&da_r, x);
        grads.u_r.add_outer(&da_r, h_prev);
        params.u_z.add_transpose_matvec(&da_z, &mut dh_next);
        params.u_r.add_transpose_matvec(&da_r, &mut dh_next);
    }

    let mut loss = if t_len > 0 { sq_total / t_len as f64 } else { 0.0 };
    if lambda != 0.0 {
        loss += weight_penalty(params, lambda);
        for (g, w) in grads.matrices_mut().into_iter().zip(params.matrices()) {
            g.axpy(lambda, w);
        }
    }
    Gradients {
        loss,
        params: grads,
        hidden_final,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    pub hidden: usize,
    pub latent: usize,
    /// Truncated-BPTT segment length.
    pub segment_len: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub center_floor: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            hidden: 64,
            latent: 16,
            segment_len: 64,
            epochs: 30,
            learning_rate: 1e-3,
            weight_decay: 0.0,
            center_floor: DEFAULT_CENTER_FLOOR,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<(), DetectorError> {
        if self.hidden == 0 || self.latent == 0 {
            return Err(DetectorError::InvalidConfig("hidden and latent sizes must be positive"));
        }
        if self.segment_len == 0 {
            return Err(DetectorError::InvalidConfig("segment_len must be positive"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(DetectorError::InvalidConfig("learning_rate must be finite and non-negative"));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(DetectorError::InvalidConfig("weight_decay must be finite and non-negative"));
        }
        if !(self.center_floor.is_finite() && self.center_floor > 0.0) {
            return Err(DetectorError::InvalidConfig("center_floor must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedDetector {
    pub params: DetectorParams,
    pub sphere: Hypersphere,
    /// Mean squared distance over each epoch's pass plus the weight penalty.
    pub loss_trace: Vec<f64>,
}

pub fn train_detector<X: AsRef<[f64]>>(
    params: DetectorParams,
    stream: &[X],
    config: &DetectorConfig,
) -> Result<TrainedDetector, DetectorError> {
    train_detector_with(params, stream, config, |_, _| {})
}

/// Deep SVDD training by truncated BPTT with plain gradient descent.
///
/// The center is fixed from the initial parameters before any update. Each
/// epoch walks the stream in contiguous segments of `segment_len`, carrying
/// the hidden state across segments but cutting gradients at their
/// boundaries; every segment contributes one update. `on_epoch` receives the
/// 0-based epoch index and its loss.
pub fn train_detector_with<X: AsRef<[f64]>>(
    mut params: DetectorParams,
    stream: &[X],
    config: &DetectorConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<TrainedDetector, DetectorError> {
    config.validate()?;
    if stream.is_empty() {
        return Err(DetectorError::EmptyDataset);
    }
    let dims = params.dims();
    if let Some(bad) = stream.iter().find(|x| x.as_ref().len() != dims.input) {
        return Err(DetectorError::DimensionMismatch {
            expected: dims.input,
            got: bad.as_ref().len(),
        });
    }
    let whole: Vec<&[f64]> = stream.iter().map(AsRef::as_ref).collect();
    let sphere = compute_center(&params, &[whole], config.center_floor)?;

    let mut loss_trace = Vec::with_capacity(config.epochs);
    let mut update = 0u64;
    for epoch in 0..config.epochs {
        let mut hidden = vec![0.0; dims.hidden];
        let mut sq_total = 0.0;
        for segment in stream.chunks(config.segment_len) {
            let g = loss_and_gradients(&params, segment, &hidden, &sphere.center, config.weight_decay);
            sq_total += (g.loss - weight_penalty(&params, config.weight_decay)) * segment.len() as f64;
            hidden = g.hidden_final;
            if config.learning_rate != 0.0 {
                for (w, gw) in params.matrices_mut().into_iter().zip(g.params.matrices()) {
                    w.axpy(-config.learning_rate, gw);
                }
            }
            update += 1;
            if !params.is_finite() {
                return Err(DetectorError::NonFiniteUpdate { epoch, update });
            }
        }
        let loss = sq_total / stream.len() as f64 + weight_penalty(&params, config.weight_decay);
        if !loss.is_finite() {
            return Err(DetectorError::NonFiniteUpdate { epoch, update });
        }
        on_epoch(epoch, loss);
        loss_trace.push(loss);
    }
    Ok(TrainedDetector {
        params,
        sphere,
        loss_trace,
    })
}

/// Per-stream recurrent state; starts at the zero vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamState {
    pub hidden: Vec<f64>,
    pub events_seen: u64,
}

impl StreamState {
    pub fn new(hidden_dim: usize) -> Self {
        StreamState {
            hidden: vec![0.0; hidden_dim],
            events_seen: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredEvent {
    pub score: f64,
    pub latent: Vec<f64>,
}

/// Advances the stream by one event and scores it.
pub fn score_step(
    params: &DetectorParams,
    sphere: &Hypersphere,
    state: &StreamState,
    event: &EventVector,
) -> (ScoredEvent, StreamState) {
    debug_assert!(sphere.frozen);
    let hidden = gru_step(params, &event.values, &state.hidden);
    let latent = params.project(&hidden);
    let score = sphere.distance(&latent);
    (
        ScoredEvent { score, latent },
        StreamState {
            hidden,
            events_seen: state.events_seen + 1,
        },
    )
}

/// Standard deviation of latents across events, pooled over components.
pub fn latent_spread<L: AsRef<[f64]>>(latents: &[L]) -> f64 {
    if latents.len() < 2 {
        return 0.0;
    }
    let dim = latents[0].as_ref().len();
    let n = latents.len() as f64;
    let mut mean = vec![0.0; dim];
    for l in latents {
        for (m, v) in mean.iter_mut().zip(l.as_ref()) {
            *m += v / n;
        }
    }
    let var: f64 = latents
        .iter()
        .map(|l| l.as_ref().iter().zip(&mean).map(|(v, m)| (v - m) * (v - m)).sum::<f64>())
        .sum::<f64>()
        / (n * dim as f64);
    var.sqrt()
}

pub fn center_norm(sphere: &Hypersphere) -> f64 {
    l2_norm(&sphere.center)
}
