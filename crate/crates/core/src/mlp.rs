//! Small trainable ε-predictor: a two-hidden-layer SiLU MLP over
//! [z, sinusoidal time embedding, one-hot label], trained with manual
//! backpropagation on the noise-regression loss E‖ε − ε̂(z_t, t)‖².
//!
//! Parameters live in one flat vector in declaration order
//! (W1, b1, W2, b2, W3, b3; weights row-major, rows = outputs), which is
//! also the checkpoint order.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;

use crate::denoiser::{Denoiser, GaussianMixture};
use crate::error::{param, Error, Result};
use crate::rng::{self, standard_normal, RngStream};
use crate::schedule::NoiseSchedule;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"GSCMLP\0\0";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const DEFAULT_TIME_FREQS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MlpShape {
    pub d: usize,
    pub hidden: usize,
    pub labels: usize,
    /// Sinusoid frequencies; the embedding has 2·freqs entries.
    pub freqs: usize,
}

impl MlpShape {
    pub fn input_width(&self) -> usize {
        self.d + 2 * self.freqs + self.labels
    }

    fn offsets(&self) -> [usize; 7] {
        let (i, h, d) = (self.input_width(), self.hidden, self.d);
        let sizes = [h * i, h, h * h, h, d * h, d];
        let mut o = [0; 7];
        for k in 0..6 {
            o[k + 1] = o[k] + sizes[k];
        }
        o
    }

    pub fn param_count(&self) -> usize {
        self.offsets()[6]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    shape: MlpShape,
    params: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// Pre-activations and activations of one forward pass.
struct Trace {
    input: Vec<f64>,
    pre1: Vec<f64>,
    act1: Vec<f64>,
    pre2: Vec<f64>,
    act2: Vec<f64>,
    out: Vec<f64>,
}

fn affine(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    let n_in = x.len();
    b.iter()
        .enumerate()
        .map(|(r, bias)| bias + w[r * n_in..(r + 1) * n_in].iter().zip(x).map(|(a, v)| a * v).sum::<f64>())
        .collect()
}

/// Uniform Glorot bound for a layer.
pub fn init_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

impl Mlp {
    pub fn init(d: usize, hidden: usize, labels: usize, rng: &mut RngStream) -> Result<Self> {
        Self::init_with_freqs(MlpShape { d, hidden, labels, freqs: DEFAULT_TIME_FREQS }, rng)
    }

    /// Glorot-uniform weights and zero biases.
    pub fn init_with_freqs(shape: MlpShape, rng: &mut RngStream) -> Result<Self> {
        if shape.d == 0 || shape.hidden == 0 {
            return Err(param("MLP needs d >= 1 and hidden >= 1"));
        }
        let o = shape.offsets();
        let mut params = vec![0.0; shape.param_count()];
        let layers = [
            (0, shape.input_width(), shape.hidden),
            (2, shape.hidden, shape.hidden),
            (4, shape.hidden, shape.d),
        ];
        for (k, fan_in, fan_out) in layers {
            let bound = init_bound(fan_in, fan_out);
            for p in &mut params[o[k]..o[k + 1]] {
                *p = rng.random_range(-bound..bound);
            }
        }
        Ok(Self { shape, params })
    }

    pub fn from_params(shape: MlpShape, params: Vec<f64>) -> Result<Self> {
        if params.len() != shape.param_count() {
            return Err(param(format!(
                "expected {} parameters, got {}",
                shape.param_count(),
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(param("parameters must be finite"));
        }
        Ok(Self { shape, params })
    }

    pub fn shape(&self) -> MlpShape {
        self.shape
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn block(&self, k: usize) -> &[f64] {
        let o = self.shape.offsets();
        &self.params[o[k]..o[k + 1]]
    }

    fn build_input(&self, z: &[f64], t: usize, cond: Option<usize>) -> Result<Vec<f64>> {
        if z.len() != self.shape.d {
            return Err(param(format!("input dimension {} does not match MLP dimension {}", z.len(), self.shape.d)));
        }
        let mut input = Vec::with_capacity(self.shape.input_width());
        input.extend_from_slice(z);
        let f = self.shape.freqs;
        for k in 0..f {
            let w = (-(10_000f64.ln()) * k as f64 / f as f64).exp();
            input.push((t as f64 * w).sin());
            input.push((t as f64 * w).cos());
        }
        let mut onehot = vec![0.0; self.shape.labels];
        if let Some(j) = cond {
            if j >= self.shape.labels {
                return Err(param(format!("label {j} out of range for {} labels", self.shape.labels)));
            }
            onehot[j] = 1.0;
        }
        input.extend(onehot);
        Ok(input)
    }

    fn forward(&self, z: &[f64], t: usize, cond: Option<usize>) -> Result<Trace> {
        let input = self.build_input(z, t, cond)?;
        let pre1 = affine(self.block(0), self.block(1), &input);
        let act1: Vec<f64> = pre1.iter().map(|&x| silu(x)).collect();
        let pre2 = affine(self.block(2), self.block(3), &act1);
        let act2: Vec<f64> = pre2.iter().map(|&x| silu(x)).collect();
        let out = affine(self.block(4), self.block(5), &act2);
        Ok(Trace { input, pre1, act1, pre2, act2, out })
    }

    /// Accumulates ∂L/∂θ for upstream gradient `g_out` = ∂L/∂out into `grad`.
    fn backward(&self, tr: &Trace, g_out: &[f64], grad: &mut [f64]) {
        let o = self.shape.offsets();
        let (n_in, h) = (self.shape.input_width(), self.shape.hidden);
        let w2 = self.block(2);
        let w3 = self.block(4);

        let mut g_act2 = vec![0.0; h];
        for (r, g) in g_out.iter().enumerate() {
            grad[o[5] + r] += g;
            for c in 0..h {
                grad[o[4] + r * h + c] += g * tr.act2[c];
                g_act2[c] += g * w3[r * h + c];
            }
        }
        let g_pre2: Vec<f64> = g_act2.iter().zip(&tr.pre2).map(|(g, x)| g * silu_grad(*x)).collect();
        let mut g_act1 = vec![0.0; h];
        for (r, g) in g_pre2.iter().enumerate() {
            grad[o[3] + r] += g;
            for c in 0..h {
                grad[o[2] + r * h + c] += g * tr.act1[c];
                g_act1[c] += g * w2[r * h + c];
            }
        }
        for (r, (g, x)) in g_act1.iter().zip(&tr.pre1).enumerate() {
            let g = g * silu_grad(*x);
            grad[o[1] + r] += g;
            for c in 0..n_in {
                grad[o[0] + r * n_in + c] += g * tr.input[c];
            }
        }
    }

    /// Mean squared error of the batch, averaged over samples and dimensions.
    pub fn batch_loss(&self, batch: &[TrainingExample]) -> Result<f64> {
        let mut total = 0.0;
        for ex in batch {
            let tr = self.forward(&ex.z_t, ex.t, ex.label)?;
            total += tr.out.iter().zip(&ex.eps).map(|(p, e)| (p - e) * (p - e)).sum::<f64>();
        }
        Ok(total / (batch.len() * self.shape.d) as f64)
    }

    /// Loss and its gradient with respect to every parameter.
    pub fn loss_and_grad(&self, batch: &[TrainingExample]) -> Result<(f64, Vec<f64>)> {
        let mut grad = vec![0.0; self.params.len()];
        let scale = 1.0 / (batch.len() * self.shape.d) as f64;
        let mut total = 0.0;
        for ex in batch {
            let tr = self.forward(&ex.z_t, ex.t, ex.label)?;
            let g_out: Vec<f64> = tr.out.iter().zip(&ex.eps).map(|(p, e)| 2.0 * scale * (p - e)).collect();
            total += tr.out.iter().zip(&ex.eps).map(|(p, e)| (p - e) * (p - e)).sum::<f64>();
            self.backward(&tr, &g_out, &mut grad);
        }
        Ok((total * scale, grad))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(&self.to_bytes())?;
        f.flush()?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 20 + 8 * self.params.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        for v in [self.shape.d, self.shape.hidden, self.shape.labels, self.shape.freqs] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 28 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(bad("missing checkpoint magic"));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().unwrap());
        if word(0) != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {}", word(0))));
        }
        let shape = MlpShape {
            d: word(1) as usize,
            hidden: word(2) as usize,
            labels: word(3) as usize,
            freqs: word(4) as usize,
        };
        let body = &bytes[28..];
        if body.len() != 8 * shape.param_count() {
            return Err(bad("checkpoint length does not match its layer sizes"));
        }
        let params = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Self::from_params(shape, params).map_err(|e| Error::Checkpoint(e.to_string()))
    }
}

impl Denoiser for Mlp {
    fn dim(&self) -> usize {
        self.shape.d
    }

    fn predict(&self, z: &[f64], t: usize, cond: Option<usize>) -> Result<Vec<f64>> {
        Ok(self.forward(z, t, cond)?.out)
    }
}

/// One (z_t, t, label, ε) regression example.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub z_t: Vec<f64>,
    pub t: usize,
    pub label: Option<usize>,
    pub eps: Vec<f64>,
}

/// Draws z₀ from the source, t uniform in 1..=T and ε ~ N(0, I), and forms
/// z_t = √ᾱ_t z₀ + √(1−ᾱ_t) ε. Labels are dropped with `label_dropout`.
pub fn draw_examples(
    source: &GaussianMixture,
    schedule: &NoiseSchedule,
    n: usize,
    use_labels: bool,
    label_dropout: f64,
    rng: &mut RngStream,
) -> Result<Vec<TrainingExample>> {
    let mut out = Vec::with_capacity(n);
    for (j, x0) in source.sample_labelled(n, rng)? {
        let t = rng.random_range(1..=schedule.t_train());
        let ab = schedule.alpha_bar(t);
        let eps: Vec<f64> = (0..x0.len()).map(|_| standard_normal(rng)).collect();
        let z_t = x0.iter().zip(&eps).map(|(x, e)| ab.sqrt() * x + (1.0 - ab).sqrt() * e).collect();
        let keep = use_labels && rng.random::<f64>() >= label_dropout;
        out.push(TrainingExample { z_t, t, label: keep.then_some(j), eps });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Optimizer {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub optimizer: Optimizer,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub label_dropout: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-3,
            batch_size: 128,
            iterations: 5000,
            optimizer: Optimizer::Adam,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            label_dropout: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(param("learning rate must be finite and >= 0"));
        }
        if self.batch_size == 0 || self.iterations == 0 {
            return Err(param("batch size and iteration count must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.epsilon > 0.0) {
            return Err(param("Adam hyperparameters out of range"));
        }
        if !(0.0..=1.0).contains(&self.label_dropout) {
            return Err(param("label dropout must lie in [0, 1]"));
        }
        Ok(())
    }
}

pub struct TrainOutcome {
    pub model: Mlp,
    pub losses: Vec<f64>,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], step: 0 }
    }

    fn update(&mut self, params: &mut [f64], grad: &[f64], cfg: &TrainConfig) {
        self.step += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.step);
        let c2 = 1.0 - cfg.beta2.powi(self.step);
        for i in 0..params.len() {
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * grad[i];
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
}

pub fn train_denoiser(
    mut model: Mlp,
    source: &GaussianMixture,
    schedule: &NoiseSchedule,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if source.dim() != model.shape.d {
        return Err(param(format!("source dimension {} does not match network {}", source.dim(), model.shape.d)));
    }
    let use_labels = model.shape.labels > 0;
    if use_labels && model.shape.labels < source.component_count() {
        return Err(param("network has fewer labels than source components"));
    }
    let mut rng = rng::stream(cfg.seed, rng::ids::TRAINING);
    let mut adam = Adam::new(model.params.len());
    let mut losses = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let batch = draw_examples(source, schedule, cfg.batch_size, use_labels, cfg.label_dropout, &mut rng)?;
        let (loss, grad) = model.loss_and_grad(&batch)?;
        losses.push(loss);
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence { iteration: it, loss, trace: losses });
        }
        match cfg.optimizer {
            Optimizer::Adam => adam.update(&mut model.params, &grad, cfg),
            Optimizer::Sgd => {
                for (p, g) in model.params.iter_mut().zip(&grad) {
                    *p -= cfg.learning_rate * g;
                }
            }
        }
    }
    Ok(TrainOutcome { model, losses })
}

/// Mean of the first and last `window` losses.
pub fn smoothed_endpoints(losses: &[f64], window: usize) -> (f64, f64) {
    let w = window.clamp(1, losses.len().max(1));
    let head = losses.iter().take(w).sum::<f64>() / w as f64;
    let tail = losses.iter().rev().take(w).sum::<f64>() / w as f64;
    (head, tail)
}
