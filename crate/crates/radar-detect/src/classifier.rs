//! Binary LSTM classifiers trained from scratch, coupled into a
//! one-vs-one / one-vs-all ensemble whose pairwise probabilities are
//! fused by `score_i = sum_{j != i} p_ij * (q_i + q_j)`.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::ClassLabel;
use crate::error::{Error, Result};
use crate::features::FeatureVector;
use crate::featsel::FeatureSubset;

pub const DEFAULT_HIDDEN: usize = 80;
pub const MAX_FRAMES: usize = 8;

/// Emitted probabilities are kept this far from 0 and 1 so log-loss and
/// its gradient stay finite no matter how saturated the logits are.
const P_FLOOR: f64 = 1e-12;

const GATES: usize = 4; // input, forget, output, candidate

/// One cluster instance's history: 1 to 8 consecutive 150 ms feature
/// vectors, oldest first.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SequenceExample {
    pub frames: Vec<FeatureVector>,
    pub label: ClassLabel,
}

impl SequenceExample {
    pub fn validate(&self) -> Result<()> {
        if self.frames.is_empty() || self.frames.len() > MAX_FRAMES {
            return Err(Error::InvalidConfig(format!(
                "sequence example must hold 1..={MAX_FRAMES} frames, got {}",
                self.frames.len()
            )));
        }
        let version = &self.frames[0].catalog_version;
        let width = self.frames[0].values.len();
        for frame in &self.frames {
            if frame.catalog_version != *version {
                return Err(Error::CatalogMismatch(format!(
                    "frames mix catalogs {version:?} and {:?}",
                    frame.catalog_version
                )));
            }
            if frame.values.len() != width {
                return Err(Error::InputMismatch(format!(
                    "frame width {} != {}",
                    frame.values.len(),
                    width
                )));
            }
        }
        Ok(())
    }
}

/// Splits an instance's full frame history into disjoint consecutive
/// chunks of at most [`MAX_FRAMES`] frames, oldest first.
pub fn chunk_history(frames: &[FeatureVector], label: ClassLabel) -> Vec<SequenceExample> {
    frames
        .chunks(MAX_FRAMES)
        .map(|chunk| SequenceExample {
            frames: chunk.to_vec(),
            label,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NetKind {
    /// LSTM recurrence over the frames, two-logit softmax on the final
    /// hidden state.
    Recurrent,
    /// Single affine layer over the mean frame. Convex objective; exists
    /// for optimizer sanity checks, not production use.
    Linear,
}

/// Flat-parameter offsets for the recurrent net. Per gate (input, forget,
/// output, candidate): W_x (hidden x width, row major), W_h (hidden x
/// hidden), bias (hidden); then the 2 x hidden output map and its 2 biases.
#[derive(Clone, Copy)]
struct Layout {
    d: usize,
    h: usize,
}

impl Layout {
    fn gate_block(&self) -> usize {
        self.h * self.d + self.h * self.h + self.h
    }
    fn wx(&self, gate: usize) -> usize {
        gate * self.gate_block()
    }
    fn wh(&self, gate: usize) -> usize {
        self.wx(gate) + self.h * self.d
    }
    fn bias(&self, gate: usize) -> usize {
        self.wh(gate) + self.h * self.h
    }
    fn w_out(&self) -> usize {
        GATES * self.gate_block()
    }
    fn b_out(&self) -> usize {
        self.w_out() + 2 * self.h
    }
    fn total(&self) -> usize {
        self.b_out() + 2
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecurrentNet {
    pub kind: NetKind,
    pub input_width: usize,
    /// Hidden state width; 0 for `Linear`.
    pub hidden: usize,
    pub params: Vec<f64>,
    /// Per-input standardization fitted on the training set.
    pub norm_mean: Vec<f64>,
    pub norm_std: Vec<f64>,
}

impl RecurrentNet {
    /// Fresh net with all parameters zero and identity standardization.
    pub fn new(kind: NetKind, input_width: usize, hidden: usize) -> Result<Self> {
        if input_width == 0 {
            return Err(Error::InvalidConfig("input width must be positive".into()));
        }
        let hidden = match kind {
            NetKind::Recurrent => {
                if hidden == 0 {
                    return Err(Error::InvalidConfig("hidden width must be positive".into()));
                }
                hidden
            }
            NetKind::Linear => 0,
        };
        let count = param_count_for(kind, input_width, hidden);
        Ok(Self {
            kind,
            input_width,
            hidden,
            params: vec![0.0; count],
            norm_mean: vec![0.0; input_width],
            norm_std: vec![1.0; input_width],
        })
    }

    pub fn validate(&self) -> Result<()> {
        let expect = param_count_for(self.kind, self.input_width, self.hidden);
        if self.params.len() != expect {
            return Err(Error::InvalidConfig(format!(
                "parameter count {} != expected {expect}",
                self.params.len()
            )));
        }
        if self.norm_mean.len() != self.input_width || self.norm_std.len() != self.input_width {
            return Err(Error::InvalidConfig(
                "standardization width != input width".into(),
            ));
        }
        if !self.params.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { field: "params" });
        }
        Ok(())
    }

    /// Probability of the positive class for one frame sequence.
    pub fn forward(&self, frames: &[Vec<f64>]) -> Result<f64> {
        let frames = self.standardize(frames)?;
        Ok(match self.kind {
            NetKind::Recurrent => self.run_recurrent(&frames).p,
            NetKind::Linear => self.run_linear(&frames).1,
        })
    }

    fn standardize(&self, frames: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        if frames.is_empty() || frames.len() > MAX_FRAMES {
            return Err(Error::InvalidConfig(format!(
                "forward takes 1..={MAX_FRAMES} frames, got {}",
                frames.len()
            )));
        }
        let mut out = Vec::with_capacity(frames.len());
        for frame in frames {
            if frame.len() != self.input_width {
                return Err(Error::InputMismatch(format!(
                    "frame width {} != net input width {}",
                    frame.len(),
                    self.input_width
                )));
            }
            let mut row = Vec::with_capacity(frame.len());
            for (k, &v) in frame.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::NonFinite {
                        field: "frame value",
                    });
                }
                let sd = self.norm_std[k];
                row.push((v - self.norm_mean[k]) / if sd > 0.0 { sd } else { 1.0 });
            }
            out.push(row);
        }
        Ok(out)
    }

    fn run_recurrent(&self, frames: &[Vec<f64>]) -> Cache {
        let lay = Layout {
            d: self.input_width,
            h: self.hidden,
        };
        let (d, h) = (lay.d, lay.h);
        let p = &self.params;
        let mut h_prev = vec![0.0; h];
        let mut c_prev = vec![0.0; h];
        let mut steps = Vec::with_capacity(frames.len());
        for x in frames {
            let mut acts = [
                vec![0.0; h],
                vec![0.0; h],
                vec![0.0; h],
                vec![0.0; h],
            ];
            for (gate, a) in acts.iter_mut().enumerate() {
                let wx = lay.wx(gate);
                let wh = lay.wh(gate);
                let b = lay.bias(gate);
                for j in 0..h {
                    let mut s = p[b + j];
                    let row = wx + j * d;
                    for k in 0..d {
                        s += p[row + k] * x[k];
                    }
                    let row = wh + j * h;
                    for k in 0..h {
                        s += p[row + k] * h_prev[k];
                    }
                    a[j] = s;
                }
            }
            let mut step = StepCache {
                x: x.clone(),
                i: vec![0.0; h],
                f: vec![0.0; h],
                o: vec![0.0; h],
                g: vec![0.0; h],
                c: vec![0.0; h],
                tc: vec![0.0; h],
                h: vec![0.0; h],
            };
            for j in 0..h {
                step.i[j] = sigmoid(acts[0][j]);
                step.f[j] = sigmoid(acts[1][j]);
                step.o[j] = sigmoid(acts[2][j]);
                step.g[j] = acts[3][j].tanh();
                step.c[j] = step.f[j] * c_prev[j] + step.i[j] * step.g[j];
                step.tc[j] = step.c[j].tanh();
                step.h[j] = step.o[j] * step.tc[j];
            }
            h_prev.copy_from_slice(&step.h);
            c_prev.copy_from_slice(&step.c);
            steps.push(step);
        }
        let last = &steps[steps.len() - 1].h;
        let w_out = lay.w_out();
        let b_out = lay.b_out();
        let mut z0 = p[b_out];
        let mut z1 = p[b_out + 1];
        for j in 0..h {
            z0 += p[w_out + j] * last[j];
            z1 += p[w_out + h + j] * last[j];
        }
        Cache {
            steps,
            p: squash(z0, z1),
        }
    }

    /// Returns (mean standardized frame, probability).
    fn run_linear(&self, frames: &[Vec<f64>]) -> (Vec<f64>, f64) {
        let d = self.input_width;
        let mut mean = vec![0.0; d];
        for frame in frames {
            for k in 0..d {
                mean[k] += frame[k];
            }
        }
        let inv = 1.0 / frames.len() as f64;
        for m in &mut mean {
            *m *= inv;
        }
        let p = &self.params;
        let mut z0 = p[2 * d];
        let mut z1 = p[2 * d + 1];
        for k in 0..d {
            z0 += p[k] * mean[k];
            z1 += p[d + k] * mean[k];
        }
        (mean, squash(z0, z1))
    }

    fn init_params(&mut self, rng: &mut ChaCha8Rng) {
        let sd_in = 1.0 / (self.input_width as f64).sqrt();
        match self.kind {
            NetKind::Recurrent => {
                let lay = Layout {
                    d: self.input_width,
                    h: self.hidden,
                };
                let sd_h = 1.0 / (self.hidden as f64).sqrt();
                for gate in 0..GATES {
                    for k in 0..lay.h * lay.d {
                        self.params[lay.wx(gate) + k] = rng.gen_range(-sd_in..sd_in);
                    }
                    for k in 0..lay.h * lay.h {
                        self.params[lay.wh(gate) + k] = rng.gen_range(-sd_h..sd_h);
                    }
                    // forget-gate bias starts open so early gradients reach
                    // back in time
                    let b = if gate == 1 { 1.0 } else { 0.0 };
                    for k in 0..lay.h {
                        self.params[lay.bias(gate) + k] = b;
                    }
                }
                for k in 0..2 * lay.h {
                    self.params[lay.w_out() + k] = rng.gen_range(-sd_h..sd_h);
                }
                self.params[lay.b_out()] = 0.0;
                self.params[lay.b_out() + 1] = 0.0;
            }
            NetKind::Linear => {
                let d = self.input_width;
                for k in 0..2 * d {
                    self.params[k] = rng.gen_range(-sd_in..sd_in);
                }
                self.params[2 * d] = 0.0;
                self.params[2 * d + 1] = 0.0;
            }
        }
    }

    fn fit_norm(&mut self, data: &[BinaryExample]) -> Result<()> {
        let d = self.input_width;
        let mut sum = vec![0.0; d];
        let mut count = 0usize;
        for ex in data {
            for frame in &ex.frames {
                if frame.len() != d {
                    return Err(Error::InputMismatch(format!(
                        "frame width {} != net input width {d}",
                        frame.len()
                    )));
                }
                for k in 0..d {
                    if !frame[k].is_finite() {
                        return Err(Error::NonFinite {
                            field: "frame value",
                        });
                    }
                    sum[k] += frame[k];
                }
                count += 1;
            }
        }
        if count == 0 {
            return Err(Error::InputMismatch("no frames in training set".into()));
        }
        let inv = 1.0 / count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s * inv).collect();
        let mut var = vec![0.0; d];
        for ex in data {
            for frame in &ex.frames {
                for k in 0..d {
                    let dv = frame[k] - mean[k];
                    var[k] += dv * dv;
                }
            }
        }
        self.norm_mean = mean;
        self.norm_std = var
            .iter()
            .map(|v| {
                let sd = (v * inv).sqrt();
                if sd > 0.0 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(())
    }
}

fn param_count_for(kind: NetKind, d: usize, h: usize) -> usize {
    match kind {
        NetKind::Recurrent => Layout { d, h }.total(),
        NetKind::Linear => 2 * d + 2,
    }
}

struct StepCache {
    x: Vec<f64>,
    i: Vec<f64>,
    f: Vec<f64>,
    o: Vec<f64>,
    g: Vec<f64>,
    c: Vec<f64>,
    tc: Vec<f64>,
    h: Vec<f64>,
}

struct Cache {
    steps: Vec<StepCache>,
    p: f64,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Two-logit softmax probability of the positive class (index 1).
fn squash(z0: f64, z1: f64) -> f64 {
    sigmoid(z1 - z0).clamp(P_FLOOR, 1.0 - P_FLOOR)
}

/// One training item for a binary net: frames already projected to the
/// net's feature subset.
#[derive(Debug, Clone)]
pub struct BinaryExample {
    pub frames: Vec<Vec<f64>>,
    pub positive: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Scale each example's loss by total / (2 * count of its class).
    pub class_weighting: bool,
    /// Adam-style adaptive moments; plain gradient steps when false.
    pub adaptive_moments: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            learning_rate: 1e-3,
            batch_size: 64,
            seed: 0,
            class_weighting: true,
            adaptive_moments: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(
                "learning rate must be positive and finite".into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Class-weighted mean cross-entropy over `data` and its gradient with
/// respect to every parameter. `class_weights` is (negative, positive).
pub fn loss_and_grad(
    net: &RecurrentNet,
    data: &[BinaryExample],
    class_weights: (f64, f64),
) -> Result<(f64, Vec<f64>)> {
    let (loss_sum, weight_sum, mut grad) = batch_parts(net, data, None, class_weights)?;
    let inv = 1.0 / weight_sum;
    for g in &mut grad {
        *g *= inv;
    }
    Ok((loss_sum * inv, grad))
}

/// Unnormalized pieces for one batch: (weighted loss sum, weight sum,
/// weighted gradient sum). `idx` of None means the whole set.
fn batch_parts(
    net: &RecurrentNet,
    data: &[BinaryExample],
    idx: Option<&[usize]>,
    class_weights: (f64, f64),
) -> Result<(f64, f64, Vec<f64>)> {
    let count = idx.map_or(data.len(), <[usize]>::len);
    if count == 0 {
        return Err(Error::InputMismatch("empty example set".into()));
    }
    let mut grad = vec![0.0; net.params.len()];
    let mut loss_sum = 0.0;
    let mut weight_sum = 0.0;
    for slot in 0..count {
        let ex = &data[idx.map_or(slot, |ids| ids[slot])];
        let frames = net.standardize(&ex.frames)?;
        let w = if ex.positive {
            class_weights.1
        } else {
            class_weights.0
        };
        weight_sum += w;
        let y = if ex.positive { 1.0 } else { 0.0 };
        match net.kind {
            NetKind::Recurrent => {
                let cache = net.run_recurrent(&frames);
                loss_sum += w * nll(cache.p, ex.positive);
                net.backprop_recurrent(&cache, w * (cache.p - y), &mut grad);
            }
            NetKind::Linear => {
                let (mean, p) = net.run_linear(&frames);
                loss_sum += w * nll(p, ex.positive);
                let du = w * (p - y);
                let d = net.input_width;
                for k in 0..d {
                    grad[k] -= du * mean[k];
                    grad[d + k] += du * mean[k];
                }
                grad[2 * d] -= du;
                grad[2 * d + 1] += du;
            }
        }
    }
    Ok((loss_sum, weight_sum, grad))
}

fn nll(p: f64, positive: bool) -> f64 {
    if positive {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

impl RecurrentNet {
    /// Backpropagation through time for one example. `du` is the loss
    /// gradient at the logit difference z1 - z0.
    fn backprop_recurrent(&self, cache: &Cache, du: f64, grad: &mut [f64]) {
        let lay = Layout {
            d: self.input_width,
            h: self.hidden,
        };
        let (d, h) = (lay.d, lay.h);
        let p = &self.params;
        let w_out = lay.w_out();
        let b_out = lay.b_out();
        let steps = &cache.steps;
        let last = &steps[steps.len() - 1].h;

        // softmax head: dz0 = -du, dz1 = du
        for j in 0..h {
            grad[w_out + j] -= du * last[j];
            grad[w_out + h + j] += du * last[j];
        }
        grad[b_out] -= du;
        grad[b_out + 1] += du;

        let zeros = vec![0.0; h];
        let mut dh: Vec<f64> = (0..h)
            .map(|j| du * (p[w_out + h + j] - p[w_out + j]))
            .collect();
        let mut dc = vec![0.0; h];
        let mut da = [
            vec![0.0; h],
            vec![0.0; h],
            vec![0.0; h],
            vec![0.0; h],
        ];
        for t in (0..steps.len()).rev() {
            let s = &steps[t];
            let (h_prev, c_prev) = if t == 0 {
                (&zeros, &zeros)
            } else {
                (&steps[t - 1].h, &steps[t - 1].c)
            };
            for j in 0..h {
                let d_o = dh[j] * s.tc[j];
                dc[j] += dh[j] * s.o[j] * (1.0 - s.tc[j] * s.tc[j]);
                let d_i = dc[j] * s.g[j];
                let d_g = dc[j] * s.i[j];
                let d_f = dc[j] * c_prev[j];
                da[0][j] = d_i * s.i[j] * (1.0 - s.i[j]);
                da[1][j] = d_f * s.f[j] * (1.0 - s.f[j]);
                da[2][j] = d_o * s.o[j] * (1.0 - s.o[j]);
                da[3][j] = d_g * (1.0 - s.g[j] * s.g[j]);
            }
            let mut dh_prev = vec![0.0; h];
            for j in 0..h {
                dc[j] *= s.f[j]; // becomes dc_prev
            }
            for (gate, da_g) in da.iter().enumerate() {
                let wx = lay.wx(gate);
                let wh = lay.wh(gate);
                let b = lay.bias(gate);
                for j in 0..h {
                    let a = da_g[j];
                    if a == 0.0 {
                        continue;
                    }
                    let row = wx + j * d;
                    for k in 0..d {
                        grad[row + k] += a * s.x[k];
                    }
                    let row = wh + j * h;
                    for k in 0..h {
                        grad[row + k] += a * h_prev[k];
                        dh_prev[k] += p[row + k] * a;
                    }
                    grad[b + j] += a;
                }
            }
            dh = dh_prev;
        }
    }
}

/// Trains a copy of `net` on `data`. Deterministic given the seed: fits
/// standardization, seeds the initial parameters, then runs mini-batch
/// gradient descent on the class-weighted cross-entropy. Returns the
/// trained net and the per-epoch loss curve.
pub fn train(
    net: &RecurrentNet,
    data: &[BinaryExample],
    cfg: &TrainConfig,
) -> Result<(RecurrentNet, Vec<f64>)> {
    cfg.validate()?;
    net.validate()?;
    let n_pos = data.iter().filter(|e| e.positive).count();
    let n_neg = data.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::InputMismatch(
            "training set must contain both classes".into(),
        ));
    }
    for ex in data {
        if ex.frames.is_empty() || ex.frames.len() > MAX_FRAMES {
            return Err(Error::InvalidConfig(format!(
                "training example must hold 1..={MAX_FRAMES} frames, got {}",
                ex.frames.len()
            )));
        }
    }
    let mut out = net.clone();
    out.fit_norm(data)?;
    let class_weights = if cfg.class_weighting {
        let total = data.len() as f64;
        (
            total / (2.0 * n_neg as f64),
            total / (2.0 * n_pos as f64),
        )
    } else {
        (1.0, 1.0)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    out.init_params(&mut rng);

    let (beta1, beta2, eps): (f64, f64, f64) = (0.9, 0.999, 1e-8);
    let mut m = vec![0.0; out.params.len()];
    let mut v = vec![0.0; out.params.len()];
    let mut step = 0u32;
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut weight_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let (lsum, wsum, grad) = batch_parts(&out, data, Some(chunk), class_weights)?;
            if !lsum.is_finite() {
                return Err(Error::TrainingFailed {
                    feature: None,
                    msg: format!("non-finite loss in epoch {epoch}"),
                });
            }
            loss_sum += lsum;
            weight_sum += wsum;
            let inv = 1.0 / wsum;
            if cfg.adaptive_moments {
                step += 1;
                let bc1 = 1.0 - beta1.powi(step as i32);
                let bc2 = 1.0 - beta2.powi(step as i32);
                for k in 0..out.params.len() {
                    let g = grad[k] * inv;
                    m[k] = beta1 * m[k] + (1.0 - beta1) * g;
                    v[k] = beta2 * v[k] + (1.0 - beta2) * g * g;
                    out.params[k] -=
                        cfg.learning_rate * (m[k] / bc1) / ((v[k] / bc2).sqrt() + eps);
                }
            } else {
                for k in 0..out.params.len() {
                    out.params[k] -= cfg.learning_rate * grad[k] * inv;
                }
            }
            if !out.params.iter().all(|p| p.is_finite()) {
                return Err(Error::TrainingFailed {
                    feature: None,
                    msg: format!("parameters diverged in epoch {epoch}"),
                });
            }
        }
        curve.push(loss_sum / weight_sum);
    }
    Ok((out, curve))
}

/// Net tags, ensemble order: three one-vs-all then three one-vs-one.
pub const NET_TAGS: [&str; 6] = ["P", "B", "S", "PvB", "PvS", "BvS"];

/// Binary role of `label` in the training set of net `tag`: Some(true)
/// positive, Some(false) negative, None excluded.
pub fn binary_relabel(tag: &str, label: ClassLabel) -> Option<bool> {
    use ClassLabel::*;
    match tag {
        "P" => Some(label == Pedestrian),
        "B" => Some(label == Bicycle),
        "S" => Some(label == StaticGarbage),
        "PvB" => match label {
            Pedestrian => Some(true),
            Bicycle => Some(false),
            StaticGarbage => None,
        },
        "PvS" => match label {
            Pedestrian => Some(true),
            StaticGarbage => Some(false),
            Bicycle => None,
        },
        "BvS" => match label {
            Bicycle => Some(true),
            StaticGarbage => Some(false),
            Pedestrian => None,
        },
        _ => None,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnsembleMember {
    pub tag: String,
    pub subset: FeatureSubset,
    pub net: RecurrentNet,
}

/// Six trained nets plus everything needed to rerun them: the feature
/// catalog version, per-net subsets, and the training manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnsembleModel {
    pub catalog_version: String,
    pub members: Vec<EnsembleMember>,
    pub manifest: TrainConfig,
}

impl EnsembleModel {
    pub fn validate(&self) -> Result<()> {
        if self.members.len() != NET_TAGS.len() {
            return Err(Error::InvalidConfig(format!(
                "ensemble holds {} nets, expected {}",
                self.members.len(),
                NET_TAGS.len()
            )));
        }
        for (member, tag) in self.members.iter().zip(NET_TAGS) {
            if member.tag != tag {
                return Err(Error::InvalidConfig(format!(
                    "net tagged {:?} where {tag:?} expected",
                    member.tag
                )));
            }
            if member.subset.classifier_tag != tag {
                return Err(Error::InvalidConfig(format!(
                    "subset tagged {:?} attached to net {tag:?}",
                    member.subset.classifier_tag
                )));
            }
            if member.subset.kept.len() != member.net.input_width {
                return Err(Error::InvalidConfig(format!(
                    "net {tag:?}: subset size {} != input width {}",
                    member.subset.kept.len(),
                    member.net.input_width
                )));
            }
            member.net.validate()?;
        }
        Ok(())
    }

    fn member(&self, tag: &str) -> &EnsembleMember {
        self.members
            .iter()
            .find(|m| m.tag == tag)
            .expect("validated ensemble holds all tags")
    }

    /// OVA posteriors q and the pairwise matrix p with p[j][i] = 1 - p[i][j].
    pub fn probabilities(&self, frames: &[FeatureVector]) -> Result<([f64; 3], [[f64; 3]; 3])> {
        self.validate()?;
        for frame in frames {
            if frame.catalog_version != self.catalog_version {
                return Err(Error::CatalogMismatch(format!(
                    "frames carry catalog {:?}, model expects {:?}",
                    frame.catalog_version, self.catalog_version
                )));
            }
        }
        let mut q = [0.0; 3];
        for (slot, tag) in ["P", "B", "S"].iter().enumerate() {
            q[slot] = self.member_forward(tag, frames)?;
        }
        let mut p = [[0.0; 3]; 3];
        for (tag, i, j) in [("PvB", 0, 1), ("PvS", 0, 2), ("BvS", 1, 2)] {
            p[i][j] = self.member_forward(tag, frames)?;
            p[j][i] = 1.0 - p[i][j];
        }
        Ok((q, p))
    }

    fn member_forward(&self, tag: &str, frames: &[FeatureVector]) -> Result<f64> {
        let member = self.member(tag);
        let mut projected = Vec::with_capacity(frames.len());
        for frame in frames {
            let mut row = Vec::with_capacity(member.subset.kept.len());
            for &k in &member.subset.kept {
                let v = *frame.values.get(k).ok_or_else(|| {
                    Error::InputMismatch(format!(
                        "subset index {k} out of range for frame width {}",
                        frame.values.len()
                    ))
                })?;
                row.push(v);
            }
            projected.push(row);
        }
        member.net.forward(&projected)
    }

    pub fn decide(&self, frames: &[FeatureVector]) -> Result<(ClassLabel, [f64; 3])> {
        let (q, p) = self.probabilities(frames)?;
        let scores = decision_scores(&p, &q);
        Ok((argmax_class(&scores), scores))
    }
}

/// Pairwise-coupled fusion: score_i = sum over j != i of p_ij * (q_i + q_j).
pub fn decision_scores(p: &[[f64; 3]; 3], q: &[f64; 3]) -> [f64; 3] {
    let mut scores = [0.0; 3];
    for i in 0..3 {
        for j in 0..3 {
            if i != j {
                scores[i] += p[i][j] * (q[i] + q[j]);
            }
        }
    }
    scores
}

/// First strict maximum, so ties resolve Pedestrian, then Bicycle, then
/// StaticGarbage.
pub fn argmax_class(scores: &[f64; 3]) -> ClassLabel {
    let mut best = 0;
    for i in 1..3 {
        if scores[i] > scores[best] {
            best = i;
        }
    }
    ClassLabel::from_index(best).expect("index in range")
}

/// Full-catalog subsets for all six nets, for runs without selection.
pub fn full_subsets(width: usize) -> Vec<FeatureSubset> {
    NET_TAGS
        .iter()
        .map(|tag| FeatureSubset {
            classifier_tag: tag.to_string(),
            kept: (0..width).collect(),
            scores: Vec::new(),
        })
        .collect()
}

/// Trains all six nets. OVA nets see every example with binary relabeling;
/// OVO nets see only their two classes. Each member trains from its own
/// seed derived from `cfg.seed`.
pub fn train_ensemble(
    examples: &[SequenceExample],
    subsets: &[FeatureSubset],
    hidden: usize,
    cfg: &TrainConfig,
) -> Result<EnsembleModel> {
    cfg.validate()?;
    if examples.is_empty() {
        return Err(Error::InputMismatch("no training examples".into()));
    }
    let version = examples[0].frames[0].catalog_version.clone();
    let width = examples[0].frames[0].values.len();
    for ex in examples {
        ex.validate()?;
        if ex.frames[0].catalog_version != version {
            return Err(Error::CatalogMismatch(format!(
                "examples mix catalogs {version:?} and {:?}",
                ex.frames[0].catalog_version
            )));
        }
        if ex.frames[0].values.len() != width {
            return Err(Error::InputMismatch(format!(
                "examples mix widths {width} and {}",
                ex.frames[0].values.len()
            )));
        }
    }
    let mut members = Vec::with_capacity(NET_TAGS.len());
    for (slot, tag) in NET_TAGS.iter().enumerate() {
        let subset = subsets
            .iter()
            .find(|s| s.classifier_tag == *tag)
            .ok_or_else(|| Error::InvalidConfig(format!("no feature subset for net {tag:?}")))?;
        if subset.kept.is_empty() {
            return Err(Error::InvalidConfig(format!("empty subset for net {tag:?}")));
        }
        if subset.kept.iter().any(|&k| k >= width) {
            return Err(Error::InvalidConfig(format!(
                "subset for net {tag:?} references features beyond width {width}"
            )));
        }
        let data: Vec<BinaryExample> = examples
            .iter()
            .filter_map(|ex| {
                binary_relabel(tag, ex.label).map(|positive| BinaryExample {
                    frames: ex
                        .frames
                        .iter()
                        .map(|f| subset.kept.iter().map(|&k| f.values[k]).collect())
                        .collect(),
                    positive,
                })
            })
            .collect();
        let proto = RecurrentNet::new(NetKind::Recurrent, subset.kept.len(), hidden)?;
        let mut member_cfg = cfg.clone();
        member_cfg.seed = cfg.seed.wrapping_add(slot as u64);
        let (net, _curve) = train(&proto, &data, &member_cfg).map_err(|e| match e {
            Error::InputMismatch(msg) => {
                Error::InputMismatch(format!("net {tag:?}: {msg}"))
            }
            other => other,
        })?;
        members.push(EnsembleMember {
            tag: tag.to_string(),
            subset: subset.clone(),
            net,
        });
    }
    Ok(EnsembleModel {
        catalog_version: version,
        members,
        manifest: cfg.clone(),
    })
}

pub fn save_model(path: impl AsRef<Path>, model: &EnsembleModel) -> Result<()> {
    let path = path.as_ref();
    model.validate()?;
    let json = serde_json::to_string(model)?;
    fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<EnsembleModel> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let model: EnsembleModel = serde_json::from_str(&text)?;
    model.validate()?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn fv(values: Vec<f64>) -> FeatureVector {
        FeatureVector {
            values,
            catalog_version: "toy-v1".into(),
        }
    }

    #[test]
    fn param_layout_counts() {
        let lay = Layout { d: 3, h: 4 };
        assert_eq!(lay.total(), 4 * (12 + 16 + 4) + 8 + 2);
        let net = RecurrentNet::new(NetKind::Recurrent, 3, 4).unwrap();
        assert_eq!(net.params.len(), 138);
        let lin = RecurrentNet::new(NetKind::Linear, 3, 0).unwrap();
        assert_eq!(lin.params.len(), 8);
    }

    #[test]
    fn zero_params_give_exactly_half() {
        let net = RecurrentNet::new(NetKind::Recurrent, 3, 5).unwrap();
        for frames in [
            vec![vec![0.0, 0.0, 0.0]],
            vec![vec![1.0, -2.0, 3.0], vec![4.0, 5.0, -6.0]],
        ] {
            assert_eq!(net.forward(&frames).unwrap(), 0.5);
        }
        let lin = RecurrentNet::new(NetKind::Linear, 3, 0).unwrap();
        assert_eq!(lin.forward(&[vec![9.0, -9.0, 1.0]]).unwrap(), 0.5);
    }

    #[test]
    fn output_stays_inside_open_interval() {
        let mut net = RecurrentNet::new(NetKind::Recurrent, 2, 3).unwrap();
        for (k, p) in net.params.iter_mut().enumerate() {
            *p = if k % 2 == 0 { 1e3 } else { -1e3 };
        }
        for x in [-1e6, -1.0, 0.0, 1.0, 1e6] {
            let p = net.forward(&[vec![x, -x]]).unwrap();
            assert!(p > 0.0 && p < 1.0, "p = {p}");
        }
    }

    /// Every step of a 2-input / 2-hidden net recomputed with plain scalar
    /// arithmetic.
    #[test]
    fn hand_traced_tiny_forward() {
        let mut net = RecurrentNet::new(NetKind::Recurrent, 2, 2).unwrap();
        let lay = Layout { d: 2, h: 2 };
        let wx = [
            [0.10, -0.20, 0.30, 0.40],   // input gate
            [-0.15, 0.25, 0.05, -0.35],  // forget gate
            [0.20, 0.10, -0.10, 0.30],   // output gate
            [0.45, -0.05, -0.25, 0.15],  // candidate
        ];
        let bias = [[0.05, -0.05], [0.10, 0.00], [-0.02, 0.04], [0.07, -0.03]];
        for gate in 0..4 {
            for k in 0..4 {
                net.params[lay.wx(gate) + k] = wx[gate][k];
            }
            // recurrent weights exercise nothing on a 1-frame input; set
            // them anyway to catch accidental use
            for k in 0..4 {
                net.params[lay.wh(gate) + k] = 9.9;
            }
            net.params[lay.bias(gate)] = bias[gate][0];
            net.params[lay.bias(gate) + 1] = bias[gate][1];
        }
        let w_out = [0.50, -0.30, -0.20, 0.70];
        for k in 0..4 {
            net.params[lay.w_out() + k] = w_out[k];
        }
        net.params[lay.b_out()] = 0.01;
        net.params[lay.b_out() + 1] = -0.02;

        let x = [1.2, -0.7];
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let i0 = sig(0.10 * x[0] + -0.20 * x[1] + 0.05);
        let i1 = sig(0.30 * x[0] + 0.40 * x[1] + -0.05);
        let f0 = sig(-0.15 * x[0] + 0.25 * x[1] + 0.10);
        let f1 = sig(0.05 * x[0] + -0.35 * x[1] + 0.00);
        let _ = (f0, f1); // initial cell state is zero, forget path inert
        let o0 = sig(0.20 * x[0] + 0.10 * x[1] + -0.02);
        let o1 = sig(-0.10 * x[0] + 0.30 * x[1] + 0.04);
        let g0 = (0.45 * x[0] + -0.05 * x[1] + 0.07).tanh();
        let g1 = (-0.25 * x[0] + 0.15 * x[1] + -0.03).tanh();
        let c0 = i0 * g0;
        let c1 = i1 * g1;
        let h0 = o0 * c0.tanh();
        let h1 = o1 * c1.tanh();
        let z0 = 0.50 * h0 + -0.30 * h1 + 0.01;
        let z1 = -0.20 * h0 + 0.70 * h1 + -0.02;
        let expect = (z1 - z0).exp() / (1.0 + (z1 - z0).exp());

        let got = net.forward(&[x.to_vec()]).unwrap();
        assert_abs_diff_eq!(got, expect, epsilon = 1e-12);
    }

    #[test]
    fn forward_rejects_bad_input() {
        let net = RecurrentNet::new(NetKind::Recurrent, 2, 2).unwrap();
        assert!(matches!(
            net.forward(&[vec![1.0, 2.0, 3.0]]),
            Err(Error::InputMismatch(_))
        ));
        assert!(matches!(net.forward(&[]), Err(Error::InvalidConfig(_))));
        let nine = vec![vec![0.0, 0.0]; 9];
        assert!(matches!(net.forward(&nine), Err(Error::InvalidConfig(_))));
        assert!(matches!(
            net.forward(&[vec![f64::NAN, 0.0]]),
            Err(Error::NonFinite { .. })
        ));
    }

    fn seeded_net(kind: NetKind, d: usize, h: usize, seed: u64) -> RecurrentNet {
        let mut net = RecurrentNet::new(kind, d, h).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        net.init_params(&mut rng);
        net
    }

    fn grad_check(net: &RecurrentNet, data: &[BinaryExample], weights: (f64, f64)) {
        let (_, analytic) = loss_and_grad(net, data, weights).unwrap();
        let eps = 1e-6;
        let mut probe = net.clone();
        for k in 0..net.params.len() {
            probe.params[k] = net.params[k] + eps;
            let (up, _) = loss_and_grad(&probe, data, weights).unwrap();
            probe.params[k] = net.params[k] - eps;
            let (down, _) = loss_and_grad(&probe, data, weights).unwrap();
            probe.params[k] = net.params[k];
            let numeric = (up - down) / (2.0 * eps);
            let rel = (analytic[k] - numeric).abs()
                / f64::max(1e-8, analytic[k].abs() + numeric.abs());
            assert!(
                rel < 1e-5,
                "param {k}: analytic {} vs numeric {numeric}, rel {rel}",
                analytic[k]
            );
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let net = seeded_net(NetKind::Recurrent, 3, 4, 5);
        let data = vec![
            BinaryExample {
                frames: vec![vec![0.8, -1.1, 0.3]],
                positive: true,
            },
            BinaryExample {
                frames: vec![vec![-0.4, 0.9, 1.2], vec![0.1, 0.2, -0.9]],
                positive: false,
            },
            BinaryExample {
                frames: vec![
                    vec![1.0, 0.0, -1.0],
                    vec![0.5, -0.5, 0.5],
                    vec![-1.2, 0.7, 0.2],
                ],
                positive: true,
            },
        ];
        grad_check(&net, &data, (1.3, 0.7));
    }

    #[test]
    fn linear_gradients_match_finite_differences() {
        let net = seeded_net(NetKind::Linear, 3, 0, 6);
        let data = vec![
            BinaryExample {
                frames: vec![vec![0.3, -0.2, 1.4], vec![-0.6, 0.8, 0.1]],
                positive: true,
            },
            BinaryExample {
                frames: vec![vec![-1.0, 0.5, -0.3]],
                positive: false,
            },
        ];
        grad_check(&net, &data, (1.0, 2.0));
    }

    fn blob(
        rng: &mut ChaCha8Rng,
        center: (f64, f64),
        spread: f64,
        frames: usize,
        positive: bool,
    ) -> BinaryExample {
        let gauss = |rng: &mut ChaCha8Rng| {
            // Box-Muller
            let u: f64 = rng.gen_range(f64::EPSILON..1.0);
            let v: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            (-2.0 * u.ln()).sqrt() * v.cos()
        };
        BinaryExample {
            frames: (0..frames)
                .map(|_| {
                    vec![
                        center.0 + spread * gauss(rng),
                        center.1 + spread * gauss(rng),
                    ]
                })
                .collect(),
            positive,
        }
    }

    #[test]
    fn separable_toy_reaches_high_accuracy() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut data = Vec::new();
        for _ in 0..40 {
            data.push(blob(&mut rng, (1.5, 1.5), 0.3, 3, true));
            data.push(blob(&mut rng, (-1.5, -1.5), 0.3, 3, false));
        }
        let proto = RecurrentNet::new(NetKind::Recurrent, 2, 4).unwrap();
        let cfg = TrainConfig {
            epochs: 200,
            learning_rate: 0.02,
            batch_size: 16,
            seed: 1,
            ..TrainConfig::default()
        };
        let (net, curve) = train(&proto, &data, &cfg).unwrap();
        assert_eq!(curve.len(), 200);
        let correct = data
            .iter()
            .filter(|ex| (net.forward(&ex.frames).unwrap() >= 0.5) == ex.positive)
            .count();
        assert!(
            correct as f64 / data.len() as f64 >= 0.98,
            "accuracy {}/{}",
            correct,
            data.len()
        );
    }

    #[test]
    fn training_is_deterministic_on_a_copied_dataset() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut data = Vec::new();
        for _ in 0..15 {
            data.push(blob(&mut rng, (0.8, 0.0), 0.5, 2, true));
            data.push(blob(&mut rng, (-0.8, 0.0), 0.5, 2, false));
        }
        let copy = data.clone();
        let proto = RecurrentNet::new(NetKind::Recurrent, 2, 3).unwrap();
        let cfg = TrainConfig {
            epochs: 12,
            learning_rate: 0.01,
            batch_size: 8,
            seed: 33,
            ..TrainConfig::default()
        };
        let (a, curve_a) = train(&proto, &data, &cfg).unwrap();
        let (b, curve_b) = train(&proto, &copy, &cfg).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(curve_a, curve_b);
        assert_eq!(a.norm_mean, b.norm_mean);
    }

    #[test]
    fn class_weighting_rescues_minority_recall() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut data = Vec::new();
        for _ in 0..540 {
            data.push(blob(&mut rng, (0.0, 0.0), 1.0, 1, false));
        }
        for _ in 0..60 {
            data.push(blob(&mut rng, (2.2, 2.2), 1.0, 1, true));
        }
        let held_out: Vec<BinaryExample> = (0..400)
            .map(|_| blob(&mut rng, (2.2, 2.2), 1.0, 1, true))
            .collect();
        let proto = RecurrentNet::new(NetKind::Recurrent, 2, 2).unwrap();
        let base = TrainConfig {
            epochs: 100,
            learning_rate: 0.02,
            batch_size: 32,
            seed: 2,
            ..TrainConfig::default()
        };
        let recall = |cfg: &TrainConfig| {
            let (net, _) = train(&proto, &data, cfg).unwrap();
            held_out
                .iter()
                .filter(|ex| net.forward(&ex.frames).unwrap() >= 0.5)
                .count() as f64
                / held_out.len() as f64
        };
        let weighted = recall(&base);
        let unweighted = recall(&TrainConfig {
            class_weighting: false,
            ..base.clone()
        });
        assert!(weighted >= 0.9, "weighted recall {weighted}");
        assert!(unweighted < 0.9, "unweighted recall {unweighted}");
        assert!(weighted > unweighted);
    }

    #[test]
    fn runaway_learning_rate_reports_divergence() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let data = vec![
            blob(&mut rng, (1.0, 1.0), 0.2, 2, true),
            blob(&mut rng, (-1.0, -1.0), 0.2, 2, false),
        ];
        let proto = RecurrentNet::new(NetKind::Recurrent, 2, 3).unwrap();
        // adaptive moments normalize the step to ~learning_rate, so at this
        // scale two same-direction steps overflow the parameter range
        let cfg = TrainConfig {
            epochs: 50,
            learning_rate: 1.7e308,
            batch_size: 4,
            seed: 3,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train(&proto, &data, &cfg),
            Err(Error::TrainingFailed { feature: None, .. })
        ));
    }

    #[test]
    fn convex_surrogate_loss_never_increases() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let mut data = Vec::new();
        for _ in 0..15 {
            data.push(blob(&mut rng, (0.7, 0.2), 0.8, 1, true));
            data.push(blob(&mut rng, (-0.7, -0.2), 0.8, 1, false));
        }
        let proto = RecurrentNet::new(NetKind::Linear, 2, 0).unwrap();
        let cfg = TrainConfig {
            epochs: 60,
            learning_rate: 0.2,
            batch_size: 64, // full batch
            seed: 4,
            adaptive_moments: false,
            ..TrainConfig::default()
        };
        let (_, curve) = train(&proto, &data, &cfg).unwrap();
        for pair in curve.windows(2) {
            assert!(
                pair[1] <= pair[0] + 1e-12,
                "loss rose: {} -> {}",
                pair[0],
                pair[1]
            );
        }
        assert!(curve[curve.len() - 1] < curve[0]);
    }

    #[test]
    fn train_rejects_single_class_and_bad_config() {
        let data = vec![BinaryExample {
            frames: vec![vec![0.0, 0.0]],
            positive: true,
        }];
        let proto = RecurrentNet::new(NetKind::Recurrent, 2, 2).unwrap();
        assert!(matches!(
            train(&proto, &data, &TrainConfig::default()),
            Err(Error::InputMismatch(_))
        ));
        let bad = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!(TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn decide_hand_fixture() {
        let q = [0.8, 0.1, 0.1];
        let mut p = [[0.0; 3]; 3];
        p[0][1] = 0.9;
        p[1][0] = 0.1;
        p[0][2] = 0.9;
        p[2][0] = 0.1;
        p[1][2] = 0.5;
        p[2][1] = 0.5;
        let scores = decision_scores(&p, &q);
        assert_abs_diff_eq!(scores[0], 1.62, epsilon = 1e-12);
        assert_abs_diff_eq!(scores[1], 0.19, epsilon = 1e-12);
        assert_abs_diff_eq!(scores[2], 0.19, epsilon = 1e-12);
        assert_eq!(argmax_class(&scores), ClassLabel::Pedestrian);
    }

    #[test]
    fn decide_ties_break_to_pedestrian() {
        let q = [0.3, 0.3, 0.3];
        let p = [[0.0, 0.5, 0.5], [0.5, 0.0, 0.5], [0.5, 0.5, 0.0]];
        let scores = decision_scores(&p, &q);
        assert_abs_diff_eq!(scores[0], scores[1], epsilon = 1e-15);
        assert_abs_diff_eq!(scores[1], scores[2], epsilon = 1e-15);
        assert_eq!(argmax_class(&scores), ClassLabel::Pedestrian);
    }

    #[test]
    fn decide_invariant_under_q_scaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..100 {
            let q = [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()];
            let mut p = [[0.0; 3]; 3];
            for (i, j) in [(0, 1), (0, 2), (1, 2)] {
                p[i][j] = rng.gen::<f64>();
                p[j][i] = 1.0 - p[i][j];
            }
            let base = decision_scores(&p, &q);
            for c in [0.01, 3.7, 250.0] {
                let scaled_q = [c * q[0], c * q[1], c * q[2]];
                let scaled = decision_scores(&p, &scaled_q);
                for i in 0..3 {
                    assert_abs_diff_eq!(scaled[i], c * base[i], epsilon = 1e-9 * c);
                }
                assert_eq!(argmax_class(&scaled), argmax_class(&base));
            }
        }
    }

    #[test]
    fn binary_relabel_composes_training_sets() {
        use ClassLabel::*;
        assert_eq!(binary_relabel("P", Pedestrian), Some(true));
        assert_eq!(binary_relabel("P", Bicycle), Some(false));
        assert_eq!(binary_relabel("P", StaticGarbage), Some(false));
        assert_eq!(binary_relabel("PvB", Pedestrian), Some(true));
        assert_eq!(binary_relabel("PvB", Bicycle), Some(false));
        assert_eq!(binary_relabel("PvB", StaticGarbage), None);
        assert_eq!(binary_relabel("BvS", Pedestrian), None);
        assert_eq!(binary_relabel("BvS", Bicycle), Some(true));
        assert_eq!(binary_relabel("BvS", StaticGarbage), Some(false));
    }

    #[test]
    fn chunk_history_splits_into_disjoint_chunks() {
        let frames: Vec<FeatureVector> = (0..20).map(|k| fv(vec![k as f64])).collect();
        let chunks = chunk_history(&frames, ClassLabel::Bicycle);
        assert_eq!(
            chunks.iter().map(|c| c.frames.len()).collect::<Vec<_>>(),
            vec![8, 8, 4]
        );
        assert_eq!(chunks[1].frames[0].values[0], 8.0);
        assert!(chunks.iter().all(|c| c.label == ClassLabel::Bicycle));
        assert!(chunks.iter().all(|c| c.validate().is_ok()));
    }

    #[test]
    fn sequence_example_validation() {
        let ok = SequenceExample {
            frames: vec![fv(vec![1.0]), fv(vec![2.0])],
            label: ClassLabel::Pedestrian,
        };
        assert!(ok.validate().is_ok());
        let empty = SequenceExample {
            frames: vec![],
            label: ClassLabel::Pedestrian,
        };
        assert!(empty.validate().is_err());
        let long = SequenceExample {
            frames: vec![fv(vec![1.0]); 9],
            label: ClassLabel::Pedestrian,
        };
        assert!(long.validate().is_err());
        let mut mixed = ok.clone();
        mixed.frames[1].catalog_version = "other".into();
        assert!(matches!(
            mixed.validate(),
            Err(Error::CatalogMismatch(_))
        ));
    }

    fn three_class_examples(per_class: usize, seed: u64) -> Vec<SequenceExample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centers = [(2.0, 0.0), (0.0, 2.0), (-2.0, -2.0)];
        let mut out = Vec::new();
        for (slot, label) in ClassLabel::ALL.iter().enumerate() {
            for _ in 0..per_class {
                let frames = (0..2)
                    .map(|_| {
                        fv(vec![
                            centers[slot].0 + 0.4 * (rng.gen::<f64>() - 0.5),
                            centers[slot].1 + 0.4 * (rng.gen::<f64>() - 0.5),
                        ])
                    })
                    .collect();
                out.push(SequenceExample {
                    frames,
                    label: *label,
                });
            }
        }
        out
    }

    fn toy_ensemble(seed: u64) -> EnsembleModel {
        let examples = three_class_examples(20, seed);
        let cfg = TrainConfig {
            epochs: 30,
            learning_rate: 0.02,
            batch_size: 16,
            seed,
            ..TrainConfig::default()
        };
        train_ensemble(&examples, &full_subsets(2), 3, &cfg).unwrap()
    }

    #[test]
    fn ensemble_classifies_well_separated_toys() {
        let model = toy_ensemble(51);
        model.validate().unwrap();
        let probe = three_class_examples(5, 99);
        let correct = probe
            .iter()
            .filter(|ex| model.decide(&ex.frames).unwrap().0 == ex.label)
            .count();
        assert!(correct >= 13, "only {correct}/15 correct");
    }

    #[test]
    fn pairwise_probabilities_are_complementary() {
        let model = toy_ensemble(52);
        let probe = three_class_examples(2, 7);
        for ex in &probe {
            let (q, p) = model.probabilities(&ex.frames).unwrap();
            for (i, j) in [(0, 1), (0, 2), (1, 2)] {
                assert_abs_diff_eq!(p[i][j] + p[j][i], 1.0, epsilon = 0.0);
            }
            for v in q {
                assert!(v > 0.0 && v < 1.0);
            }
        }
    }

    #[test]
    fn ensemble_training_is_deterministic() {
        let a = toy_ensemble(53);
        let b = toy_ensemble(53);
        for (ma, mb) in a.members.iter().zip(&b.members) {
            assert_eq!(ma.net.params, mb.net.params);
        }
    }

    #[test]
    fn ensemble_requires_all_subsets() {
        let examples = three_class_examples(4, 1);
        let mut subsets = full_subsets(2);
        subsets.retain(|s| s.classifier_tag != "BvS");
        let err = train_ensemble(&examples, &subsets, 2, &TrainConfig::default());
        assert!(matches!(err, Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn model_roundtrips_through_json() {
        let model = toy_ensemble(54);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save_model(&path, &model).unwrap();
        let back = load_model(&path).unwrap();
        assert_eq!(back.catalog_version, model.catalog_version);
        for (ma, mb) in model.members.iter().zip(&back.members) {
            assert_eq!(ma.tag, mb.tag);
            assert_eq!(ma.net.params, mb.net.params);
            assert_eq!(ma.subset.kept, mb.subset.kept);
        }
        let probe = three_class_examples(1, 3);
        let (label_a, scores_a) = model.decide(&probe[0].frames).unwrap();
        let (label_b, scores_b) = back.decide(&probe[0].frames).unwrap();
        assert_eq!(label_a, label_b);
        assert_eq!(scores_a, scores_b);
    }

    #[test]
    fn decide_rejects_foreign_catalog() {
        let model = toy_ensemble(55);
        let frame = FeatureVector {
            values: vec![0.0, 0.0],
            catalog_version: "other".into(),
        };
        assert!(matches!(
            model.decide(&[frame]),
            Err(Error::CatalogMismatch(_))
        ));
    }
}
