//! Fully connected ReLU network `f(x; θ) = √m · W_L σ(W_{L−1} σ(⋯ σ(W₁x)))`.
//!
//! Parameters are stored as one flat vector in a fixed order: `W₁` row-major,
//! then `W₂ … W_L`, each row-major. Gradient features, covariance dimensions
//! and saved parameter files all use this order. With input dimension `d`,
//! width `m` and depth `L` the parameter count is `m·d + m²·(L−2) + m`.
//!
//! The ReLU derivative at exactly zero is taken to be zero.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use rand::seq::index;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::seed::{substream, StreamRng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrainMode {
    /// Exact gradient descent on the full regularized loss.
    FullGradient,
    /// Minibatch SGD on the loss divided by the number of samples. The
    /// minimizer is unchanged; each of the `gd_steps` steps samples
    /// `batch_size` points without replacement.
    Stochastic { batch_size: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub input_dim: usize,
    pub width: usize,
    pub depth: usize,
    pub step_size: f64,
    pub gd_steps: usize,
    pub reg: f64,
    pub train_mode: TrainMode,
    /// Resume training from the supplied parameters instead of `θ⁰`.
    pub warm_start: bool,
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || !self.input_dim.is_multiple_of(2) {
            return Err(Error::config(format!(
                "input dimension must be positive and even, got {}",
                self.input_dim
            )));
        }
        if self.width == 0 || !self.width.is_multiple_of(2) {
            return Err(Error::config(format!(
                "width must be positive and even, got {}",
                self.width
            )));
        }
        if self.depth < 2 {
            return Err(Error::config(format!(
                "depth must be at least 2, got {}",
                self.depth
            )));
        }
        if !(self.step_size.is_finite() && self.step_size > 0.0) {
            return Err(Error::config("step size must be positive"));
        }
        if !(self.reg.is_finite() && self.reg > 0.0) {
            return Err(Error::config("regularization lambda must be positive"));
        }
        if let TrainMode::Stochastic { batch_size: 0 } = self.train_mode {
            return Err(Error::config("SGD batch size must be positive"));
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        param_count(self.input_dim, self.width, self.depth)
    }
}

pub fn param_count(input_dim: usize, width: usize, depth: usize) -> usize {
    width * input_dim + width * width * depth.saturating_sub(2) + width
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct LayerShape {
    rows: usize,
    cols: usize,
    offset: usize,
}

/// Network weights plus the frozen initialization `θ⁰`.
#[derive(Debug, Clone)]
pub struct NetworkParams {
    input_dim: usize,
    width: usize,
    shapes: Vec<LayerShape>,
    theta: Vec<f64>,
    theta0: Arc<[f64]>,
    seed: Option<u64>,
}

/// `φ = ∇_θ f(x; θ) / √m`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientFeature(pub Vec<f64>);

impl GradientFeature {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

fn layer_shapes(input_dim: usize, width: usize, depth: usize) -> Vec<LayerShape> {
    let mut shapes = Vec::with_capacity(depth);
    let mut offset = 0;
    for l in 0..depth {
        let rows = if l + 1 == depth { 1 } else { width };
        let cols = if l == 0 { input_dim } else { width };
        shapes.push(LayerShape { rows, cols, offset });
        offset += rows * cols;
    }
    shapes
}

struct ForwardCache {
    // Post-activation inputs to each layer; acts[0] = x.
    acts: Vec<Vec<f64>>,
    // Pre-activations of each hidden layer.
    pre: Vec<Vec<f64>>,
    output: f64,
}

fn relu(z: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        0.0
    }
}

impl NetworkParams {
    /// Symmetric initialization: hidden layers are `[[W, 0], [0, W]]` with
    /// `W` entries drawn from `N(0, 4/m)`, and the output layer is `(w, −w)`
    /// with `w` entries drawn from `N(0, 2/m)`. The network then outputs
    /// exactly zero on any context whose two halves are equal.
    pub fn init_symmetric(config: &NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (d, m, depth) = (config.input_dim, config.width, config.depth);
        let shapes = layer_shapes(d, m, depth);
        let mut theta = vec![0.0; config.num_params()];
        let mut rng = substream(seed, "network-init", 0);
        let hidden = Normal::new(0.0, (4.0 / m as f64).sqrt()).expect("valid normal");
        let output = Normal::new(0.0, (2.0 / m as f64).sqrt()).expect("valid normal");

        for shape in &shapes[..depth - 1] {
            let (half_rows, half_cols) = (shape.rows / 2, shape.cols / 2);
            for i in 0..half_rows {
                for j in 0..half_cols {
                    let w = hidden.sample(&mut rng);
                    theta[shape.offset + i * shape.cols + j] = w;
                    theta[shape.offset + (i + half_rows) * shape.cols + j + half_cols] = w;
                }
            }
        }
        let last = shapes[depth - 1];
        let half = m / 2;
        for j in 0..half {
            let w = output.sample(&mut rng);
            theta[last.offset + j] = w;
            theta[last.offset + j + half] = -w;
        }

        Ok(Self {
            input_dim: d,
            width: m,
            shapes,
            theta0: theta.clone().into(),
            theta,
            seed: Some(seed),
        })
    }

    /// Builds parameters from explicit row-major layer matrices. The given
    /// weights also become `θ⁰`.
    pub fn from_layers(input_dim: usize, width: usize, layers: &[Vec<f64>]) -> Result<Self> {
        let depth = layers.len();
        if depth < 2 {
            return Err(Error::config("depth must be at least 2"));
        }
        let shapes = layer_shapes(input_dim, width, depth);
        for (l, (shape, w)) in shapes.iter().zip(layers).enumerate() {
            if w.len() != shape.rows * shape.cols {
                return Err(Error::input(format!(
                    "layer {} has {} entries, expected {}x{}",
                    l + 1,
                    w.len(),
                    shape.rows,
                    shape.cols
                )));
            }
        }
        let theta: Vec<f64> = layers.concat();
        ensure_finite(&theta, "layer weights")?;
        Ok(Self {
            input_dim,
            width,
            shapes,
            theta0: theta.clone().into(),
            theta,
            seed: None,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn depth(&self) -> usize {
        self.shapes.len()
    }

    pub fn num_params(&self) -> usize {
        self.theta.len()
    }

    pub fn flat(&self) -> &[f64] {
        &self.theta
    }

    pub fn theta0(&self) -> &[f64] {
        &self.theta0
    }

    /// Row-major weights of layer `l` (0-based).
    pub fn layer(&self, l: usize) -> &[f64] {
        let s = self.shapes[l];
        &self.theta[s.offset..s.offset + s.rows * s.cols]
    }

    /// Replaces the current weights; `θ⁰` is left untouched.
    pub fn set_flat(&mut self, theta: Vec<f64>) -> Result<()> {
        if theta.len() != self.theta.len() {
            return Err(Error::input("parameter vector has the wrong length"));
        }
        ensure_finite(&theta, "parameters")?;
        self.theta = theta;
        Ok(())
    }

    /// Current weights reset to `θ⁰`.
    pub fn at_init(&self) -> Self {
        Self {
            theta: self.theta0.to_vec(),
            ..self.clone()
        }
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::input(format!(
                "context has dimension {}, network expects {}",
                x.len(),
                self.input_dim
            )));
        }
        ensure_finite(x, "context")
    }

    fn forward_cache(&self, x: &[f64]) -> ForwardCache {
        let depth = self.shapes.len();
        let mut acts = Vec::with_capacity(depth);
        let mut pre = Vec::with_capacity(depth - 1);
        acts.push(x.to_vec());
        for shape in &self.shapes[..depth - 1] {
            let input = acts.last().expect("non-empty");
            let w = &self.theta[shape.offset..shape.offset + shape.rows * shape.cols];
            let z: Vec<f64> = w
                .chunks_exact(shape.cols)
                .map(|row| crate::covariance::dot(row, input))
                .collect();
            acts.push(z.iter().copied().map(relu).collect());
            pre.push(z);
        }
        let last = self.shapes[depth - 1];
        let w_out = &self.theta[last.offset..last.offset + last.cols];
        let output = (self.width as f64).sqrt()
            * crate::covariance::dot(w_out, acts.last().expect("non-empty"));
        ForwardCache { acts, pre, output }
    }

    /// Adds `coeff · ∇_θ f` into `out`.
    fn backprop(&self, cache: &ForwardCache, coeff: f64, out: &mut [f64]) {
        let depth = self.shapes.len();
        let scale = coeff * (self.width as f64).sqrt();
        let last = self.shapes[depth - 1];
        let w_out = &self.theta[last.offset..last.offset + last.cols];
        let h = &cache.acts[depth - 1];
        for (g, a) in out[last.offset..last.offset + last.cols].iter_mut().zip(h) {
            *g += scale * a;
        }
        // delta = ∂(coeff·f)/∂(pre-activation) of the current hidden layer.
        let mut delta: Vec<f64> = w_out
            .iter()
            .zip(&cache.pre[depth - 2])
            .map(|(w, z)| if *z > 0.0 { scale * w } else { 0.0 })
            .collect();
        for l in (0..depth - 1).rev() {
            let shape = self.shapes[l];
            let input = &cache.acts[l];
            let grad = &mut out[shape.offset..shape.offset + shape.rows * shape.cols];
            for (row, di) in grad.chunks_exact_mut(shape.cols).zip(&delta) {
                if *di != 0.0 {
                    for (g, a) in row.iter_mut().zip(input) {
                        *g += di * a;
                    }
                }
            }
            if l > 0 {
                let w = &self.theta[shape.offset..shape.offset + shape.rows * shape.cols];
                let mut next = vec![0.0; shape.cols];
                for (row, di) in w.chunks_exact(shape.cols).zip(&delta) {
                    if *di != 0.0 {
                        for (n, wij) in next.iter_mut().zip(row) {
                            *n += di * wij;
                        }
                    }
                }
                for (n, z) in next.iter_mut().zip(&cache.pre[l - 1]) {
                    if *z <= 0.0 {
                        *n = 0.0;
                    }
                }
                delta = next;
            }
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        Ok(self.forward_cache(x).output)
    }

    /// Network output and `∇_θ f` (unscaled).
    pub fn value_and_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check_input(x)?;
        let cache = self.forward_cache(x);
        let mut grad = vec![0.0; self.theta.len()];
        self.backprop(&cache, 1.0, &mut grad);
        Ok((cache.output, grad))
    }

    /// Gradient feature `φ = ∇_θ f(x; θ) / √m`.
    pub fn grad_features(&self, x: &[f64]) -> Result<GradientFeature> {
        self.check_input(x)?;
        let cache = self.forward_cache(x);
        let mut grad = vec![0.0; self.theta.len()];
        self.backprop(&cache, 1.0 / (self.width as f64).sqrt(), &mut grad);
        Ok(GradientFeature(grad))
    }

    /// Output and gradient feature in one pass.
    pub fn value_and_features(&self, x: &[f64]) -> Result<(f64, GradientFeature)> {
        self.check_input(x)?;
        let cache = self.forward_cache(x);
        let mut grad = vec![0.0; self.theta.len()];
        self.backprop(&cache, 1.0 / (self.width as f64).sqrt(), &mut grad);
        Ok((cache.output, GradientFeature(grad)))
    }

    /// Writes a plain-text parameter file: a header line, then `θ` and `θ⁰`
    /// one value per line with round-trip precision.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        let seed = self
            .seed
            .map_or_else(|| "none".to_string(), |s| s.to_string());
        let _ = writeln!(
            out,
            "# bnucb-params v1 d={} m={} L={} seed={} p={}",
            self.input_dim,
            self.width,
            self.depth(),
            seed,
            self.num_params()
        );
        for v in self.theta.iter().chain(self.theta0.iter()) {
            let _ = writeln!(out, "{v:?}");
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::input("empty parameter file"))?;
        let field = |key: &str| -> Option<&str> {
            header
                .split_whitespace()
                .find_map(|tok| tok.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
        };
        let parse_usize = |key: &str| -> Result<usize> {
            field(key)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::input(format!("parameter file header lacks {key}")))
        };
        if !header.starts_with("# bnucb-params v1") {
            return Err(Error::input("not a bnucb parameter file"));
        }
        let (d, m, depth) = (parse_usize("d")?, parse_usize("m")?, parse_usize("L")?);
        let seed = field("seed").and_then(|s| s.parse().ok());
        let p = param_count(d, m, depth);
        let values: Vec<f64> = lines
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                l.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::input(format!("bad parameter value {l:?}")))
            })
            .collect::<Result<_>>()?;
        if values.len() != 2 * p {
            return Err(Error::input(format!(
                "parameter file holds {} values, expected {}",
                values.len(),
                2 * p
            )));
        }
        Ok(Self {
            input_dim: d,
            width: m,
            shapes: layer_shapes(d, m, depth),
            theta: values[..p].to_vec(),
            theta0: values[p..].to_vec().into(),
            seed,
        })
    }
}

/// `L(θ) = Σ (f(xᵢ; θ) − rᵢ)²/2 + mλ‖θ − θ⁰‖²/2`.
pub fn regularized_loss(
    config: &NetworkConfig,
    params: &NetworkParams,
    contexts: &[Vec<f64>],
    rewards: &[f64],
) -> Result<f64> {
    check_training_set(contexts, rewards)?;
    let mut data = 0.0;
    for (x, r) in contexts.iter().zip(rewards) {
        let f = params.forward(x)?;
        data += 0.5 * (f - r) * (f - r);
    }
    let reg: f64 = params
        .theta
        .iter()
        .zip(params.theta0.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(data + 0.5 * params.width as f64 * config.reg * reg)
}

fn check_training_set(contexts: &[Vec<f64>], rewards: &[f64]) -> Result<()> {
    if contexts.len() != rewards.len() {
        return Err(Error::input(format!(
            "{} contexts but {} rewards",
            contexts.len(),
            rewards.len()
        )));
    }
    ensure_finite(rewards, "rewards")
}

/// Gradient descent on the regularized square loss.
///
/// Starts from `θ⁰` (or from `params` when `warm_start` is set) and returns
/// the parameters after `gd_steps` steps. An empty training set returns `θ⁰`,
/// the minimizer of the remaining regularizer.
pub fn train_nn(
    config: &NetworkConfig,
    params: &NetworkParams,
    contexts: &[Vec<f64>],
    rewards: &[f64],
    seed: u64,
) -> Result<NetworkParams> {
    config.validate()?;
    check_training_set(contexts, rewards)?;
    if params.input_dim != config.input_dim
        || params.width != config.width
        || params.depth() != config.depth
    {
        return Err(Error::config(
            "network parameters do not match the network config",
        ));
    }
    if contexts.is_empty() {
        return Ok(params.at_init());
    }
    for x in contexts {
        params.check_input(x)?;
    }
    let mut net = if config.warm_start {
        params.clone()
    } else {
        params.at_init()
    };
    let reg = config.width as f64 * config.reg;
    let n = contexts.len();
    let mut grad = vec![0.0; net.num_params()];
    let mut rng: StreamRng = substream(seed, "train-sgd", 0);

    for step in 0..config.gd_steps {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let reg_coeff = match config.train_mode {
            TrainMode::FullGradient => {
                for (x, r) in contexts.iter().zip(rewards) {
                    let cache = net.forward_cache(x);
                    net.backprop(&cache, cache.output - r, &mut grad);
                }
                reg
            }
            TrainMode::Stochastic { batch_size } => {
                let k = batch_size.min(n);
                let inv_k = 1.0 / k as f64;
                for i in index::sample(&mut rng, n, k).iter() {
                    let cache = net.forward_cache(&contexts[i]);
                    net.backprop(&cache, (cache.output - rewards[i]) * inv_k, &mut grad);
                }
                reg / n as f64
            }
        };
        for ((t, g), t0) in net.theta.iter_mut().zip(&grad).zip(net.theta0.iter()) {
            *t -= config.step_size * (g + reg_coeff * (*t - t0));
        }
        if net.theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical(format!(
                "training diverged at step {step} (non-finite parameters)"
            )));
        }
    }
    Ok(net)
}
