//! The stochastic scheduling policy: a single valid-convolution layer with
//! ReLU into a fully-connected softmax head, with hand-written forward and
//! backward passes and an RMSProp-style update. The network is small (about
//! 400k parameters at the default geometry), so no tensor library is used.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::env::{EnvConfig, Observation};

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("length mismatch: {0}")]
    Length(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("checkpoint format error: {0}")]
    Format(String),
    #[error("checkpoint io error on {path}: {source}")]
    Io { path: String, source: io::Error },
}

/// Network geometry and optimizer settings.
#[derive(Debug, Clone, PartialEq)]
pub struct NetConfig {
    pub input_rows: usize,
    pub input_cols: usize,
    pub kernel_size: usize,
    pub num_filters: usize,
    pub num_actions: usize,
    pub learning_rate: f64,
    pub rmsprop_decay: f64,
    pub rmsprop_epsilon: f64,
}

impl NetConfig {
    /// Geometry matching an environment: input is its observation image,
    /// output one logit per action.
    pub fn for_env(env: &EnvConfig) -> Self {
        NetConfig {
            input_rows: env.lookahead_horizon,
            input_cols: env.observation_width(),
            num_actions: env.action_space_size(),
            ..NetConfig::default()
        }
    }

    pub fn conv_rows(&self) -> usize {
        self.input_rows - self.kernel_size + 1
    }

    pub fn conv_cols(&self) -> usize {
        self.input_cols - self.kernel_size + 1
    }

    /// Flattened size of the convolution output across all filters.
    pub fn hidden_size(&self) -> usize {
        self.conv_rows() * self.conv_cols() * self.num_filters
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        if self.kernel_size == 0 || self.kernel_size > self.input_rows.min(self.input_cols) {
            return Err(PolicyError::Shape(format!(
                "kernel size {} does not fit a {}x{} input",
                self.kernel_size, self.input_rows, self.input_cols
            )));
        }
        if self.num_filters == 0 {
            return Err(PolicyError::Shape("num_filters must be >= 1".into()));
        }
        if self.num_actions < 2 {
            return Err(PolicyError::Shape(format!("num_actions {} < 2", self.num_actions)));
        }
        if !(self.learning_rate > 0.0) {
            return Err(PolicyError::Numeric(format!("learning rate {}", self.learning_rate)));
        }
        if !(self.rmsprop_decay > 0.0 && self.rmsprop_decay < 1.0) {
            return Err(PolicyError::Numeric(format!("rmsprop decay {}", self.rmsprop_decay)));
        }
        if !(self.rmsprop_epsilon > 0.0) {
            return Err(PolicyError::Numeric(format!("rmsprop epsilon {}", self.rmsprop_epsilon)));
        }
        Ok(())
    }
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            input_rows: 20,
            input_cols: 124,
            kernel_size: 3,
            num_filters: 16,
            num_actions: 6,
            learning_rate: 1e-3,
            rmsprop_decay: 0.9,
            rmsprop_epsilon: 1e-8,
        }
    }
}

/// One set of network tensors; used both for the weights themselves and for
/// gradients / optimizer accumulators of the same shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensors {
    /// `num_filters` kernels of `kernel_size^2` entries, row-major.
    pub conv_kernels: Vec<f64>,
    pub conv_bias: Vec<f64>,
    /// `num_actions` rows of `hidden_size` entries.
    pub fc_weights: Vec<f64>,
    pub fc_bias: Vec<f64>,
}

impl Tensors {
    pub fn zeros(config: &NetConfig) -> Self {
        Tensors {
            conv_kernels: vec![0.0; config.num_filters * config.kernel_size * config.kernel_size],
            conv_bias: vec![0.0; config.num_filters],
            fc_weights: vec![0.0; config.num_actions * config.hidden_size()],
            fc_bias: vec![0.0; config.num_actions],
        }
    }

    fn parts(&self) -> [&[f64]; 4] {
        [&self.conv_kernels, &self.conv_bias, &self.fc_weights, &self.fc_bias]
    }

    fn parts_mut(&mut self) -> [&mut Vec<f64>; 4] {
        [&mut self.conv_kernels, &mut self.conv_bias, &mut self.fc_weights, &mut self.fc_bias]
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.parts().into_iter().flatten().copied()
    }

    pub fn num_params(&self) -> usize {
        self.parts().iter().map(|p| p.len()).sum()
    }

    pub fn scale(&mut self, factor: f64) {
        for part in self.parts_mut() {
            for v in part.iter_mut() {
                *v *= factor;
            }
        }
    }

    /// Componentwise `self += other`; shapes must agree.
    pub fn add_assign(&mut self, other: &Tensors) {
        for (mine, theirs) in self.parts_mut().into_iter().zip(other.parts()) {
            debug_assert_eq!(mine.len(), theirs.len());
            for (a, b) in mine.iter_mut().zip(theirs) {
                *a += b;
            }
        }
    }

    fn shapes_match(&self, config: &NetConfig) -> bool {
        self.conv_kernels.len() == config.num_filters * config.kernel_size * config.kernel_size
            && self.conv_bias.len() == config.num_filters
            && self.fc_weights.len() == config.num_actions * config.hidden_size()
            && self.fc_bias.len() == config.num_actions
    }
}

/// Policy parameters plus the squared-gradient accumulators of the optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub config: NetConfig,
    pub weights: Tensors,
    pub rms: Tensors,
}

impl PolicyParams {
    /// Zero-mean init scaled by the reciprocal square root of fan-in; biases
    /// zero, so the initial policy is near uniform.
    pub fn init(config: NetConfig, rng: &mut impl Rng) -> Result<Self, PolicyError> {
        config.validate()?;
        let mut weights = Tensors::zeros(&config);
        let conv_fan_in = (config.kernel_size * config.kernel_size) as f64;
        let normal = Normal::new(0.0, 1.0 / conv_fan_in.sqrt()).expect("valid stddev");
        for w in weights.conv_kernels.iter_mut() {
            *w = normal.sample(rng);
        }
        let fc_fan_in = config.hidden_size() as f64;
        let normal = Normal::new(0.0, 1.0 / fc_fan_in.sqrt()).expect("valid stddev");
        for w in weights.fc_weights.iter_mut() {
            *w = normal.sample(rng);
        }
        let rms = Tensors::zeros(&config);
        Ok(PolicyParams { config, weights, rms })
    }

    pub fn zeros(config: NetConfig) -> Result<Self, PolicyError> {
        config.validate()?;
        let weights = Tensors::zeros(&config);
        let rms = Tensors::zeros(&config);
        Ok(PolicyParams { config, weights, rms })
    }
}

/// Everything one forward pass produced, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub input: Observation,
    /// Convolution outputs before ReLU, laid out `[filter][row][col]`.
    pub pre_activation: Vec<f64>,
    /// ReLU outputs, same layout.
    pub hidden: Vec<f64>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

fn check_input_shape(observation: &Observation, config: &NetConfig) -> Result<(), PolicyError> {
    if observation.rows != config.input_rows || observation.cols != config.input_cols {
        return Err(PolicyError::Shape(format!(
            "observation is {}x{}, network expects {}x{}",
            observation.rows, observation.cols, config.input_rows, config.input_cols
        )));
    }
    Ok(())
}

fn image_to_f64(observation: &Observation, out: &mut Vec<f64>) {
    out.clear();
    out.extend(observation.data.iter().map(|&b| f64::from(b)));
}

fn conv_pass(image: &[f64], config: &NetConfig, weights: &Tensors, pre: &mut [f64]) {
    let (cols, k) = (config.input_cols, config.kernel_size);
    let (out_rows, out_cols) = (config.conv_rows(), config.conv_cols());
    for f in 0..config.num_filters {
        let kernel = &weights.conv_kernels[f * k * k..(f + 1) * k * k];
        let bias = weights.conv_bias[f];
        let plane = &mut pre[f * out_rows * out_cols..(f + 1) * out_rows * out_cols];
        for i in 0..out_rows {
            let out_row = &mut plane[i * out_cols..(i + 1) * out_cols];
            out_row.fill(bias);
            for di in 0..k {
                let img_row = &image[(i + di) * cols..(i + di) * cols + cols];
                for dj in 0..k {
                    let w = kernel[di * k + dj];
                    let shifted = &img_row[dj..dj + out_cols];
                    for (o, &x) in out_row.iter_mut().zip(shifted) {
                        *o += w * x;
                    }
                }
            }
        }
    }
}

/// Valid convolution + ReLU over the observation image. Output is
/// `(rows - K + 1) x (cols - K + 1)` per filter.
pub fn conv_forward(
    observation: &Observation,
    params: &PolicyParams,
) -> Result<Vec<f64>, PolicyError> {
    check_input_shape(observation, &params.config)?;
    let mut image = Vec::new();
    image_to_f64(observation, &mut image);
    let mut pre = vec![0.0; params.config.hidden_size()];
    conv_pass(&image, &params.config, &params.weights, &mut pre);
    for v in pre.iter_mut() {
        *v = v.max(0.0);
    }
    Ok(pre)
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Full forward pass, retaining intermediates for the backward pass.
pub fn forward(observation: &Observation, params: &PolicyParams) -> Result<ForwardTrace, PolicyError> {
    check_input_shape(observation, &params.config)?;
    let config = &params.config;
    let mut image = Vec::new();
    image_to_f64(observation, &mut image);

    let mut pre = vec![0.0; config.hidden_size()];
    conv_pass(&image, config, &params.weights, &mut pre);
    let hidden: Vec<f64> = pre.iter().map(|&v| v.max(0.0)).collect();

    let hidden_size = config.hidden_size();
    let mut logits = Vec::with_capacity(config.num_actions);
    for a in 0..config.num_actions {
        let row = &params.weights.fc_weights[a * hidden_size..(a + 1) * hidden_size];
        let dot: f64 = row.iter().zip(&hidden).map(|(w, h)| w * h).sum();
        logits.push(dot + params.weights.fc_bias[a]);
    }
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(PolicyError::Numeric("non-finite logits; parameters diverged".into()));
    }
    let probs = softmax(&logits);
    Ok(ForwardTrace { input: observation.clone(), pre_activation: pre, hidden, logits, probs })
}

/// Draw an action index from a probability vector.
pub fn sample_action(probs: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Index of the largest probability; ties go to the lowest index.
pub fn argmax_action(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate().skip(1) {
        if p > probs[best] {
            best = i;
        }
    }
    best
}

/// Streaming gradient accumulator for `sum_t log probs_t[action_t] * advantage_t`,
/// in the gradient-ascent direction. Owns its scratch buffers so the training
/// loop does not reallocate per step.
pub struct GradAccum {
    grad: Tensors,
    dhidden: Vec<f64>,
    hidden: Vec<f64>,
    image: Vec<f64>,
    steps: usize,
}

impl GradAccum {
    pub fn new(config: &NetConfig) -> Self {
        GradAccum {
            grad: Tensors::zeros(config),
            dhidden: vec![0.0; config.hidden_size()],
            hidden: Vec::new(),
            image: Vec::new(),
            steps: 0,
        }
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn into_grad(self) -> Tensors {
        self.grad
    }

    /// Add one step's gradient contribution from a retained forward trace.
    pub fn accumulate(
        &mut self,
        params: &PolicyParams,
        trace: &ForwardTrace,
        action: usize,
        advantage: f64,
    ) -> Result<(), PolicyError> {
        image_to_f64(&trace.input, &mut self.image);
        self.backward(params, &trace.hidden, &trace.probs, action, advantage)
    }

    /// Add one step's contribution from its observation and action
    /// probabilities, recomputing the hidden layer. This is what the training
    /// loop uses: trajectories keep only the observation and the probs, which
    /// is far smaller than retaining full traces.
    pub fn accumulate_from_observation(
        &mut self,
        params: &PolicyParams,
        observation: &Observation,
        probs: &[f64],
        action: usize,
        advantage: f64,
    ) -> Result<(), PolicyError> {
        check_input_shape(observation, &params.config)?;
        image_to_f64(observation, &mut self.image);
        self.hidden.resize(params.config.hidden_size(), 0.0);
        conv_pass(&self.image, &params.config, &params.weights, &mut self.hidden);
        for v in self.hidden.iter_mut() {
            *v = v.max(0.0);
        }
        let hidden = std::mem::take(&mut self.hidden);
        let result = self.backward(params, &hidden, probs, action, advantage);
        self.hidden = hidden;
        result
    }

    fn backward(
        &mut self,
        params: &PolicyParams,
        hidden: &[f64],
        probs: &[f64],
        action: usize,
        advantage: f64,
    ) -> Result<(), PolicyError> {
        let config = &params.config;
        if action >= config.num_actions {
            return Err(PolicyError::Shape(format!(
                "action {} outside {} outputs",
                action, config.num_actions
            )));
        }
        if probs.len() != config.num_actions {
            return Err(PolicyError::Shape(format!(
                "{} probs for {} actions",
                probs.len(),
                config.num_actions
            )));
        }
        let hidden_size = config.hidden_size();

        // d log softmax: one-hot minus probs, scaled by the advantage.
        let dlogits: Vec<f64> = (0..config.num_actions)
            .map(|a| (f64::from(u8::from(a == action)) - probs[a]) * advantage)
            .collect();

        self.dhidden.fill(0.0);
        for (a, &dz) in dlogits.iter().enumerate() {
            self.grad.fc_bias[a] += dz;
            let grad_row = &mut self.grad.fc_weights[a * hidden_size..(a + 1) * hidden_size];
            let w_row = &params.weights.fc_weights[a * hidden_size..(a + 1) * hidden_size];
            for ((g, dh), (&h, &w)) in grad_row
                .iter_mut()
                .zip(self.dhidden.iter_mut())
                .zip(hidden.iter().zip(w_row))
            {
                *g += dz * h;
                *dh += dz * w;
            }
        }

        // ReLU mask, then fold the masked deltas back onto kernels and biases.
        for (dh, &h) in self.dhidden.iter_mut().zip(hidden) {
            if h <= 0.0 {
                *dh = 0.0;
            }
        }

        let (cols, k) = (config.input_cols, config.kernel_size);
        let (out_rows, out_cols) = (config.conv_rows(), config.conv_cols());
        for f in 0..config.num_filters {
            let plane = &self.dhidden[f * out_rows * out_cols..(f + 1) * out_rows * out_cols];
            let kernel_grad = &mut self.grad.conv_kernels[f * k * k..(f + 1) * k * k];
            let mut bias_acc = 0.0;
            for i in 0..out_rows {
                let drow = &plane[i * out_cols..(i + 1) * out_cols];
                bias_acc += drow.iter().sum::<f64>();
                for di in 0..k {
                    let img_row = &self.image[(i + di) * cols..(i + di) * cols + cols];
                    for dj in 0..k {
                        let shifted = &img_row[dj..dj + out_cols];
                        let acc: f64 = drow.iter().zip(shifted).map(|(d, x)| d * x).sum();
                        kernel_grad[di * k + dj] += acc;
                    }
                }
            }
            self.grad.conv_bias[f] += bias_acc;
        }
        self.steps += 1;
        Ok(())
    }
}

/// Gradient of `sum_t log probs_t[action_t] * advantage_t` with respect to all
/// parameters, in the ascent direction.
pub fn policy_gradient(
    params: &PolicyParams,
    traces: &[ForwardTrace],
    actions: &[usize],
    advantages: &[f64],
) -> Result<Tensors, PolicyError> {
    if traces.len() != actions.len() || traces.len() != advantages.len() {
        return Err(PolicyError::Length(format!(
            "{} traces, {} actions, {} advantages",
            traces.len(),
            actions.len(),
            advantages.len()
        )));
    }
    if advantages.iter().any(|a| !a.is_finite()) {
        return Err(PolicyError::Numeric("non-finite advantage".into()));
    }
    let mut acc = GradAccum::new(&params.config);
    for ((trace, &action), &advantage) in traces.iter().zip(actions).zip(advantages) {
        acc.accumulate(params, trace, action, advantage)?;
    }
    Ok(acc.into_grad())
}

/// RMSProp-style adaptive step in the ascent direction; the squared-gradient
/// accumulators decay even where the gradient is zero.
pub fn apply_update(params: &mut PolicyParams, gradient: &Tensors) -> Result<(), PolicyError> {
    if !gradient.shapes_match(&params.config) {
        return Err(PolicyError::Shape("gradient shape differs from parameters".into()));
    }
    if gradient.iter().any(|g| !g.is_finite()) {
        return Err(PolicyError::Numeric("non-finite gradient".into()));
    }
    let decay = params.config.rmsprop_decay;
    let eps = params.config.rmsprop_epsilon;
    let lr = params.config.learning_rate;
    for ((w, acc), g) in params
        .weights
        .parts_mut()
        .into_iter()
        .flat_map(|p| p.iter_mut())
        .zip(params.rms.parts_mut().into_iter().flat_map(|p| p.iter_mut()))
        .zip(gradient.parts().into_iter().flatten())
    {
        *acc = decay * *acc + (1.0 - decay) * g * g;
        *w += lr * g / (acc.sqrt() + eps);
    }
    if params.weights.iter().any(|w| !w.is_finite()) {
        return Err(PolicyError::Numeric("parameters became non-finite".into()));
    }
    Ok(())
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"RLSCHED1";
const CHECKPOINT_VERSION: u32 = 1;

fn push_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn push_f64(buf: &mut Vec<u8>, v: f64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

/// Write a checkpoint: magic, version, config echo, weight tensors, optimizer
/// accumulators (all little-endian f64), and a trailing SHA-256 prefix.
pub fn save_params(params: &PolicyParams, path: &Path) -> Result<(), PolicyError> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    push_u32(&mut buf, CHECKPOINT_VERSION);
    let c = &params.config;
    for v in [c.input_rows, c.input_cols, c.kernel_size, c.num_filters, c.num_actions] {
        push_u32(&mut buf, v as u32);
    }
    for v in [c.learning_rate, c.rmsprop_decay, c.rmsprop_epsilon] {
        push_f64(&mut buf, v);
    }
    for tensors in [&params.weights, &params.rms] {
        for part in tensors.parts() {
            for &v in part {
                push_f64(&mut buf, v);
            }
        }
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest[..8]);
    let io_err = |source| PolicyError::Io { path: path.display().to_string(), source };
    let mut file = fs::File::create(path).map_err(io_err)?;
    file.write_all(&buf).map_err(io_err)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], PolicyError> {
        if self.pos + n > self.buf.len() {
            return Err(PolicyError::Format(format!(
                "truncated checkpoint: wanted {} bytes at offset {}, file has {}",
                n,
                self.pos,
                self.buf.len()
            )));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, PolicyError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64, PolicyError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64_into(&mut self, out: &mut [f64]) -> Result<(), PolicyError> {
        let bytes = self.take(out.len() * 8)?;
        for (v, chunk) in out.iter_mut().zip(bytes.chunks_exact(8)) {
            *v = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
        }
        Ok(())
    }
}

/// Read a checkpoint written by [`save_params`].
pub fn load_params(path: &Path) -> Result<PolicyParams, PolicyError> {
    let mut buf = Vec::new();
    let io_err = |source| PolicyError::Io { path: path.display().to_string(), source };
    fs::File::open(path).map_err(io_err)?.read_to_end(&mut buf).map_err(io_err)?;
    if buf.len() < CHECKPOINT_MAGIC.len() + 8 {
        return Err(PolicyError::Format("file too short for a checkpoint".into()));
    }
    let (body, stored_sum) = buf.split_at(buf.len() - 8);
    let digest = Sha256::digest(body);
    if stored_sum != &digest[..8] {
        return Err(PolicyError::Format("checksum mismatch".into()));
    }
    let mut r = Reader { buf: body, pos: 0 };
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(PolicyError::Format("bad magic; not a policy checkpoint".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(PolicyError::Format(format!("unsupported checkpoint version {version}")));
    }
    let config = NetConfig {
        input_rows: r.u32()? as usize,
        input_cols: r.u32()? as usize,
        kernel_size: r.u32()? as usize,
        num_filters: r.u32()? as usize,
        num_actions: r.u32()? as usize,
        learning_rate: r.f64()?,
        rmsprop_decay: r.f64()?,
        rmsprop_epsilon: r.f64()?,
    };
    config.validate().map_err(|e| PolicyError::Format(format!("bad config echo: {e}")))?;
    let mut weights = Tensors::zeros(&config);
    let mut rms = Tensors::zeros(&config);
    for tensors in [&mut weights, &mut rms] {
        for part in tensors.parts_mut() {
            r.f64_into(part)?;
        }
    }
    if r.pos != body.len() {
        return Err(PolicyError::Format(format!(
            "{} trailing bytes after parameters",
            body.len() - r.pos
        )));
    }
    Ok(PolicyParams { config, weights, rms })
}

/// Load a checkpoint and verify it matches the expected network geometry.
pub fn load_params_expecting(path: &Path, expected: &NetConfig) -> Result<PolicyParams, PolicyError> {
    let params = load_params(path)?;
    let c = &params.config;
    if (c.input_rows, c.input_cols, c.kernel_size, c.num_filters, c.num_actions)
        != (
            expected.input_rows,
            expected.input_cols,
            expected.kernel_size,
            expected.num_filters,
            expected.num_actions,
        )
    {
        return Err(PolicyError::Shape(format!(
            "checkpoint geometry {}x{} K={} F={} A={} does not match configured {}x{} K={} F={} A={}",
            c.input_rows,
            c.input_cols,
            c.kernel_size,
            c.num_filters,
            c.num_actions,
            expected.input_rows,
            expected.input_cols,
            expected.kernel_size,
            expected.num_filters,
            expected.num_actions,
        )));
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rngstream::{self, StreamKind};
    use rand::RngCore;

    fn tiny_config() -> NetConfig {
        NetConfig {
            input_rows: 5,
            input_cols: 5,
            kernel_size: 2,
            num_filters: 2,
            num_actions: 3,
            ..NetConfig::default()
        }
    }

    fn obs_from(rows: usize, cols: usize, bits: &[u8]) -> Observation {
        Observation { rows, cols, data: bits.to_vec() }
    }

    fn random_obs(config: &NetConfig, rng: &mut impl Rng) -> Observation {
        let data = (0..config.input_rows * config.input_cols)
            .map(|_| u8::from(rng.gen::<f64>() < 0.4))
            .collect();
        Observation { rows: config.input_rows, cols: config.input_cols, data }
    }

    #[test]
    fn conv_output_shape_matches_table_geometry() {
        let config = NetConfig::default();
        assert_eq!(config.conv_rows(), 18);
        assert_eq!(config.conv_cols(), 122);
        assert_eq!(config.hidden_size(), 18 * 122 * 16);
    }

    #[test]
    fn identity_kernel_reproduces_input() {
        let config = NetConfig {
            input_rows: 3,
            input_cols: 4,
            kernel_size: 1,
            num_filters: 1,
            num_actions: 2,
            ..NetConfig::default()
        };
        let mut params = PolicyParams::zeros(config).unwrap();
        params.weights.conv_kernels[0] = 1.0;
        let obs = obs_from(3, 4, &[1, 0, 1, 0, 0, 1, 1, 0, 1, 1, 0, 0]);
        let hidden = conv_forward(&obs, &params).unwrap();
        let want: Vec<f64> = obs.data.iter().map(|&b| f64::from(b)).collect();
        assert_eq!(hidden, want);
    }

    #[test]
    fn all_ones_kernel_sums_windows() {
        let config = NetConfig {
            input_rows: 3,
            input_cols: 3,
            kernel_size: 2,
            num_filters: 1,
            num_actions: 2,
            ..NetConfig::default()
        };
        let mut params = PolicyParams::zeros(config).unwrap();
        params.weights.conv_kernels.fill(1.0);
        let obs = obs_from(3, 3, &[1; 9]);
        let hidden = conv_forward(&obs, &params).unwrap();
        assert_eq!(hidden, vec![4.0; 4]);
    }

    #[test]
    fn conv_rejects_wrong_shape() {
        let params = PolicyParams::zeros(tiny_config()).unwrap();
        let obs = obs_from(4, 5, &[0; 20]);
        assert!(matches!(conv_forward(&obs, &params), Err(PolicyError::Shape(_))));
    }

    #[test]
    fn zero_params_give_uniform_probs() {
        let params = PolicyParams::zeros(tiny_config()).unwrap();
        let obs = obs_from(5, 5, &[1; 25]);
        let trace = forward(&obs, &params).unwrap();
        for &p in &trace.probs {
            assert!((p - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn action_head_sizes_follow_env() {
        let single = NetConfig::for_env(&EnvConfig::default());
        assert_eq!(single.num_actions, 6);
        assert_eq!((single.input_rows, single.input_cols), (20, 124));

        let two = EnvConfig {
            num_machines: 2,
            reward_weights: crate::env::RewardWeights::ones(2),
            ..EnvConfig::default()
        };
        assert_eq!(NetConfig::for_env(&two).num_actions, 11);
    }

    #[test]
    fn softmax_is_normalized_and_positive() {
        let mut rng = rngstream::derive(1, StreamKind::ParamInit, 0, 0, 0);
        let config = tiny_config();
        for _ in 0..50 {
            let params = PolicyParams::init(config.clone(), &mut rng).unwrap();
            let obs = random_obs(&config, &mut rng);
            let trace = forward(&obs, &params).unwrap();
            let sum: f64 = trace.probs.iter().sum();
            assert!((sum - 1.0).abs() <= 1e-9, "sum {sum}");
            assert!(trace.probs.iter().all(|&p| p > 0.0));
        }
    }

    #[test]
    fn logit_shift_leaves_probs_unchanged() {
        let mut rng = rngstream::derive(2, StreamKind::ParamInit, 0, 0, 0);
        let config = tiny_config();
        let mut params = PolicyParams::init(config.clone(), &mut rng).unwrap();
        let obs = random_obs(&config, &mut rng);
        let before = forward(&obs, &params).unwrap();
        for b in params.weights.fc_bias.iter_mut() {
            *b += 7.5;
        }
        let after = forward(&obs, &params).unwrap();
        for (p, q) in before.probs.iter().zip(&after.probs) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let mut rng = rngstream::derive(3, StreamKind::ParamInit, 0, 0, 0);
        let config = tiny_config();
        let params = PolicyParams::init(config.clone(), &mut rng).unwrap();
        let obs = random_obs(&config, &mut rng);
        let a = forward(&obs, &params).unwrap();
        let b = forward(&obs, &params).unwrap();
        assert_eq!(a.logits, b.logits);
        assert_eq!(a.probs, b.probs);
    }

    #[test]
    fn sample_one_hot_is_deterministic() {
        let mut rng = rngstream::derive(4, StreamKind::Rollout, 0, 0, 0);
        for _ in 0..20 {
            assert_eq!(sample_action(&[0.0, 1.0, 0.0], &mut rng), 1);
        }
    }

    #[test]
    fn sample_uniform_frequencies() {
        let mut rng = rngstream::derive(5, StreamKind::Rollout, 0, 0, 0);
        let probs = vec![1.0 / 11.0; 11];
        let mut counts = [0usize; 11];
        let draws = 10_000;
        for _ in 0..draws {
            counts[sample_action(&probs, &mut rng)] += 1;
        }
        for (i, &c) in counts.iter().enumerate() {
            let freq = c as f64 / draws as f64;
            assert!((freq - 1.0 / 11.0).abs() <= 0.01, "action {i} frequency {freq}");
        }
    }

    #[test]
    fn sample_is_reproducible_per_seed() {
        let probs = vec![0.2, 0.5, 0.3];
        let mut a = rngstream::derive(6, StreamKind::Rollout, 0, 0, 0);
        let mut b = rngstream::derive(6, StreamKind::Rollout, 0, 0, 0);
        let sa: Vec<usize> = (0..100).map(|_| sample_action(&probs, &mut a)).collect();
        let sb: Vec<usize> = (0..100).map(|_| sample_action(&probs, &mut b)).collect();
        assert_eq!(sa, sb);
    }

    #[test]
    fn zero_advantages_zero_gradient() {
        let mut rng = rngstream::derive(7, StreamKind::ParamInit, 0, 0, 0);
        let config = tiny_config();
        let params = PolicyParams::init(config.clone(), &mut rng).unwrap();
        let obs = random_obs(&config, &mut rng);
        let trace = forward(&obs, &params).unwrap();
        let grad = policy_gradient(&params, &[trace], &[1], &[0.0]).unwrap();
        assert!(grad.iter().all(|g| g == 0.0));
    }

    #[test]
    fn fc_bias_gradient_is_onehot_minus_probs() {
        let mut rng = rngstream::derive(8, StreamKind::ParamInit, 0, 0, 0);
        let config = tiny_config();
        let params = PolicyParams::init(config.clone(), &mut rng).unwrap();
        let obs = random_obs(&config, &mut rng);
        let trace = forward(&obs, &params).unwrap();
        let advantage = -2.5;
        let action = 2;
        let grad = policy_gradient(&params, &[trace.clone()], &[action], &[advantage]).unwrap();
        for a in 0..3 {
            let want = (f64::from(u8::from(a == action)) - trace.probs[a]) * advantage;
            assert!((grad.fc_bias[a] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn dead_hidden_units_get_no_conv_gradient() {
        let config = tiny_config();
        let mut params = PolicyParams::zeros(config.clone()).unwrap();
        // Negative bias with zero kernels: every pre-activation is negative,
        // so ReLU kills the whole hidden layer.
        params.weights.conv_bias.fill(-1.0);
        let mut rng = rngstream::derive(9, StreamKind::ParamInit, 0, 0, 0);
        let obs = random_obs(&config, &mut rng);
        let trace = forward(&obs, &params).unwrap();
        assert!(trace.hidden.iter().all(|&h| h == 0.0));
        let grad = policy_gradient(&params, &[trace], &[0], &[1.0]).unwrap();
        assert!(grad.conv_kernels.iter().all(|&g| g == 0.0));
        assert!(grad.conv_bias.iter().all(|&g| g == 0.0));
        // The fc bias still learns.
        assert!(grad.fc_bias.iter().any(|&g| g != 0.0));
    }

    #[test]
    fn gradient_length_mismatch_is_an_error() {
        let params = PolicyParams::zeros(tiny_config()).unwrap();
        let obs = obs_from(5, 5, &[0; 25]);
        let trace = forward(&obs, &params).unwrap();
        assert!(matches!(
            policy_gradient(&params, &[trace], &[0, 1], &[1.0]),
            Err(PolicyError::Length(_))
        ));
    }

    /// Total objective used by the finite-difference oracle.
    fn objective(
        params: &PolicyParams,
        observations: &[Observation],
        actions: &[usize],
        advantages: &[f64],
    ) -> f64 {
        observations
            .iter()
            .zip(actions)
            .zip(advantages)
            .map(|((obs, &a), &adv)| forward(obs, params).unwrap().probs[a].ln() * adv)
            .sum()
    }

    #[test]
    fn gradient_matches_central_finite_differences() {
        let config = tiny_config();
        let mut rng = rngstream::derive(10, StreamKind::ParamInit, 0, 0, 0);
        let mut params = PolicyParams::init(config.clone(), &mut rng).unwrap();
        // Zero-init biases put all-zero input windows exactly on the ReLU
        // kink, where a central difference is meaningless. Random biases move
        // every pre-activation to a differentiable point.
        for b in params.weights.conv_bias.iter_mut() {
            *b = rng.gen::<f64>() - 0.5;
        }

        let steps = 4;
        let observations: Vec<Observation> =
            (0..steps).map(|_| random_obs(&config, &mut rng)).collect();
        let actions: Vec<usize> = (0..steps).map(|_| (rng.next_u32() % 3) as usize).collect();
        let advantages: Vec<f64> = (0..steps).map(|_| rng.gen::<f64>() * 4.0 - 2.0).collect();

        let traces: Vec<ForwardTrace> =
            observations.iter().map(|o| forward(o, &params).unwrap()).collect();
        for trace in &traces {
            let margin =
                trace.pre_activation.iter().fold(f64::INFINITY, |m, p| m.min(p.abs()));
            assert!(margin > 1e-3, "pre-activation too close to the ReLU kink: {margin}");
        }
        let analytic = policy_gradient(&params, &traces, &actions, &advantages).unwrap();

        let h = 1e-5;
        let check = |get: &dyn Fn(&Tensors) -> &[f64], get_mut: &dyn Fn(&mut Tensors) -> &mut [f64]| {
            let len = get(&params.weights).len();
            for idx in 0..len {
                let mut plus = params.clone();
                get_mut(&mut plus.weights)[idx] += h;
                let mut minus = params.clone();
                get_mut(&mut minus.weights)[idx] -= h;
                let numeric = (objective(&plus, &observations, &actions, &advantages)
                    - objective(&minus, &observations, &actions, &advantages))
                    / (2.0 * h);
                let a = get(&analytic)[idx];
                let denom = a.abs().max(numeric.abs());
                if denom < 1e-7 {
                    assert!((a - numeric).abs() < 1e-7, "near-zero mismatch {a} vs {numeric}");
                } else {
                    let rel = (a - numeric).abs() / denom;
                    assert!(rel <= 1e-4, "component {idx}: analytic {a}, numeric {numeric}, rel {rel}");
                }
            }
        };
        check(&|t| &t.conv_kernels, &|t| &mut t.conv_kernels);
        check(&|t| &t.conv_bias, &|t| &mut t.conv_bias);
        check(&|t| &t.fc_weights, &|t| &mut t.fc_weights);
        check(&|t| &t.fc_bias, &|t| &mut t.fc_bias);
    }

    #[test]
    fn rmsprop_zero_gradient_decays_accumulator_only() {
        let config = tiny_config();
        let mut rng = rngstream::derive(11, StreamKind::ParamInit, 0, 0, 0);
        let mut params = PolicyParams::init(config.clone(), &mut rng).unwrap();
        params.rms.fc_bias.fill(4.0);
        let before = params.weights.clone();
        apply_update(&mut params, &Tensors::zeros(&config)).unwrap();
        assert_eq!(params.weights, before);
        for &acc in &params.rms.fc_bias {
            assert!((acc - 3.6).abs() < 1e-12); // 0.9 * 4.0
        }
    }

    #[test]
    fn rmsprop_step_magnitude_approaches_learning_rate() {
        // With a constant gradient g the accumulator converges to g^2, so the
        // per-component step tends to lr * |g| / (|g| + eps), i.e. nearly lr.
        let config = tiny_config();
        let mut params = PolicyParams::zeros(config.clone()).unwrap();
        let mut grad = Tensors::zeros(&config);
        grad.fc_bias.fill(0.5);
        let mut prev = params.weights.fc_bias[0];
        let mut step = 0.0;
        for _ in 0..200 {
            apply_update(&mut params, &grad).unwrap();
            step = params.weights.fc_bias[0] - prev;
            prev = params.weights.fc_bias[0];
        }
        let want = config.learning_rate * 0.5 / (0.5 + config.rmsprop_epsilon);
        assert!((step - want).abs() < 1e-9, "step {step}, want {want}");
    }

    #[test]
    fn rmsprop_rejects_non_finite_gradient() {
        let config = tiny_config();
        let mut params = PolicyParams::zeros(config.clone()).unwrap();
        let mut grad = Tensors::zeros(&config);
        grad.conv_bias[0] = f64::NAN;
        assert!(matches!(apply_update(&mut params, &grad), Err(PolicyError::Numeric(_))));
    }

    #[test]
    fn checkpoint_round_trip_preserves_forward_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("params.ckpt");
        let config = tiny_config();
        let mut rng = rngstream::derive(12, StreamKind::ParamInit, 0, 0, 0);
        let mut params = PolicyParams::init(config.clone(), &mut rng).unwrap();
        // Give the accumulators a nonzero state so they round-trip too.
        let mut grad = Tensors::zeros(&config);
        grad.fc_bias.fill(0.25);
        apply_update(&mut params, &grad).unwrap();

        save_params(&params, &path).unwrap();
        let loaded = load_params(&path).unwrap();
        assert_eq!(params, loaded);

        let obs = random_obs(&config, &mut rng);
        let a = forward(&obs, &params).unwrap();
        let b = forward(&obs, &loaded).unwrap();
        assert_eq!(a.logits, b.logits);
    }

    #[test]
    fn checkpoint_wrong_actions_is_shape_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("params.ckpt");
        let params = PolicyParams::zeros(tiny_config()).unwrap();
        save_params(&params, &path).unwrap();
        let expected = NetConfig { num_actions: 4, ..tiny_config() };
        assert!(matches!(load_params_expecting(&path, &expected), Err(PolicyError::Shape(_))));
    }

    #[test]
    fn truncated_checkpoint_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("params.ckpt");
        let params = PolicyParams::zeros(tiny_config()).unwrap();
        save_params(&params, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(load_params(&path), Err(PolicyError::Format(_))));

        std::fs::write(&path, &bytes[..10]).unwrap();
        assert!(matches!(load_params(&path), Err(PolicyError::Format(_))));
    }

    #[test]
    fn corrupted_checkpoint_fails_checksum() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("params.ckpt");
        let params = PolicyParams::zeros(tiny_config()).unwrap();
        save_params(&params, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0xff;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_params(&path), Err(PolicyError::Format(_))));
    }
}
