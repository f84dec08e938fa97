//! Activation functions and a small convergence lab.
//!
//! GELU is computed in its exact form `x * Phi(x)` with `Phi` built on the
//! error function below, never on the tanh approximation.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("non-finite input {0}")]
    NonFinite(f64),
    #[error("invalid convergence config: {0}")]
    InvalidConfig(String),
}

const FRAC_2_SQRT_PI: f64 = std::f64::consts::FRAC_2_SQRT_PI;
const SERIES_LIMIT: f64 = 3.0;
const CF_DEPTH: usize = 120;

/// Error function, absolute error below 1e-12.
///
/// `|x| < 3` uses the positive-term series
/// `erf(x) = 2/sqrt(pi) * exp(-x^2) * sum_n (2x^2)^n x / (1*3*...*(2n+1))`;
/// larger arguments go through [`erfc`].
pub fn erf(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x.abs() >= SERIES_LIMIT {
        let tail = erfc_cf(x.abs());
        return (1.0 - tail).copysign(x);
    }
    erf_series(x)
}

/// Complementary error function `1 - erf(x)`, accurate in the far tail.
pub fn erfc(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x >= SERIES_LIMIT {
        erfc_cf(x)
    } else if x <= -SERIES_LIMIT {
        2.0 - erfc_cf(-x)
    } else {
        1.0 - erf_series(x)
    }
}

fn erf_series(x: f64) -> f64 {
    let x2 = x * x;
    let mut term = x;
    let mut sum = x;
    let mut n = 0.0;
    loop {
        n += 1.0;
        term *= 2.0 * x2 / (2.0 * n + 1.0);
        sum += term;
        if term.abs() <= 1e-17 * sum.abs() {
            break;
        }
    }
    FRAC_2_SQRT_PI * (-x2).exp() * sum
}

/// Continued fraction
/// `erfc(x) = exp(-x^2)/sqrt(pi) / (x + (1/2)/(x + 1/(x + (3/2)/(x + ...))))`
/// evaluated bottom-up, for `x >= 3`.
fn erfc_cf(x: f64) -> f64 {
    if x > 27.0 {
        return 0.0;
    }
    let mut f = x;
    for n in (1..=CF_DEPTH).rev() {
        f = x + (n as f64 / 2.0) / f;
    }
    (-x * x).exp() / (PI.sqrt() * f)
}

/// Standard normal cumulative distribution.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

fn finite(x: f64) -> Result<f64, NumericsError> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(NumericsError::NonFinite(x))
    }
}

pub fn relu(x: f64) -> Result<f64, NumericsError> {
    finite(x).map(|x| x.max(0.0))
}

/// Derivative of ReLU; 0 at the kink.
pub fn relu_grad(x: f64) -> Result<f64, NumericsError> {
    finite(x).map(|x| if x > 0.0 { 1.0 } else { 0.0 })
}

pub fn gelu(x: f64) -> Result<f64, NumericsError> {
    finite(x).map(|x| x * normal_cdf(x))
}

/// `Phi(x) + x * phi(x)`.
pub fn gelu_grad(x: f64) -> Result<f64, NumericsError> {
    finite(x).map(|x| normal_cdf(x) + x * normal_pdf(x))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationKind {
    Relu,
    Gelu,
}

impl ActivationKind {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            ActivationKind::Relu => x.max(0.0),
            ActivationKind::Gelu => x * normal_cdf(x),
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            ActivationKind::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            ActivationKind::Gelu => normal_cdf(x) + x * normal_pdf(x),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ActivationKind::Relu => "relu",
            ActivationKind::Gelu => "gelu",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    GradientDescent,
    /// Adam with decoupled weight decay.
    AdamW {
        beta1: f64,
        beta2: f64,
        epsilon: f64,
        weight_decay: f64,
    },
}

impl Optimizer {
    /// Betas 0.9 / 0.999 and weight decay 1e-4, the GSR training recipe.
    pub fn adamw() -> Self {
        Optimizer::AdamW {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceConfig {
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub epochs: usize,
    pub loss_threshold: f64,
    /// Size of the synthetic regression set.
    pub samples: usize,
    pub optimizer: Optimizer,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        ConvergenceConfig {
            seed: 0,
            hidden: vec![16, 16],
            learning_rate: 0.01,
            epochs: 300,
            loss_threshold: 0.01,
            samples: 128,
            optimizer: Optimizer::adamw(),
        }
    }
}

impl ConvergenceConfig {
    pub fn validate(&self) -> Result<(), NumericsError> {
        let bad = |m: &str| Err(NumericsError::InvalidConfig(m.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be >= 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        if self.samples == 0 {
            return bad("samples must be >= 1");
        }
        if self.hidden.contains(&0) {
            return bad("hidden layer sizes must be positive");
        }
        if let Optimizer::AdamW { beta1, beta2, .. } = self.optimizer {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) {
                return bad("betas must lie in [0, 1)");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationRun {
    pub activation: ActivationKind,
    /// Full-batch loss after each epoch. Shorter than `epochs` only when
    /// training diverged.
    pub losses: Vec<f64>,
    /// First epoch (1-based) whose loss fell below the threshold.
    pub epochs_to_threshold: Option<usize>,
    pub diverged_at: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub seed: u64,
    pub config: ConvergenceConfig,
    pub runs: Vec<ActivationRun>,
}

impl ConvergenceReport {
    pub fn run(&self, kind: ActivationKind) -> Option<&ActivationRun> {
        self.runs.iter().find(|r| r.activation == kind)
    }
}

/// Regression samples: inputs in `[-2, 2]^2`, a smooth nonlinear target.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Vec<[f64; 2]>,
    pub targets: Vec<f64>,
}

impl Dataset {
    pub fn synthetic(seed: u64, samples: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_da7a);
        let inputs: Vec<[f64; 2]> = (0..samples)
            .map(|_| [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)])
            .collect();
        let targets = inputs
            .iter()
            .map(|[a, b]| 0.5 * (PI * a / 2.0).sin() + 0.3 * b * b - 0.2 * a * b)
            .collect();
        Dataset { inputs, targets }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Dense {
    inputs: usize,
    outputs: usize,
    /// Row-major `outputs x inputs`.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

/// Fully connected network with scalar output and a linear last layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Dense>,
    activation: ActivationKind,
}

impl Mlp {
    /// Xavier-uniform weights, zero biases.
    pub fn new(input: usize, hidden: &[usize], activation: ActivationKind, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sizes = vec![input];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let layers = sizes
            .windows(2)
            .map(|w| {
                let limit = (6.0 / (w[0] + w[1]) as f64).sqrt();
                Dense {
                    inputs: w[0],
                    outputs: w[1],
                    weights: (0..w[0] * w[1]).map(|_| rng.random_range(-limit..limit)).collect(),
                    bias: vec![0.0; w[1]],
                }
            })
            .collect();
        Mlp { layers, activation }
    }

    pub fn with_activation(&self, activation: ActivationKind) -> Self {
        Mlp {
            layers: self.layers.clone(),
            activation,
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Weights then biases, layer by layer.
    pub fn parameters(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }

    pub fn set_parameters(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.parameter_count());
        let mut it = params.iter().copied();
        for l in &mut self.layers {
            for w in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *w = it.next().unwrap();
            }
        }
    }

    /// Returns pre-activations and activations of every layer.
    fn forward(&self, x: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut act = vec![x.to_vec()];
        let last = self.layers.len() - 1;
        for (li, l) in self.layers.iter().enumerate() {
            let input = act.last().unwrap();
            let z: Vec<f64> = (0..l.outputs)
                .map(|o| {
                    let row = &l.weights[o * l.inputs..(o + 1) * l.inputs];
                    l.bias[o] + row.iter().zip(input).map(|(w, a)| w * a).sum::<f64>()
                })
                .collect();
            let a = if li == last {
                z.clone()
            } else {
                z.iter().map(|&v| self.activation.apply(v)).collect()
            };
            pre.push(z);
            act.push(a);
        }
        (pre, act)
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.forward(x).1.last().unwrap()[0]
    }

    /// Mean squared error over the dataset.
    pub fn loss(&self, data: &Dataset) -> f64 {
        let n = data.inputs.len() as f64;
        data.inputs
            .iter()
            .zip(&data.targets)
            .map(|(x, y)| (self.predict(x) - y).powi(2))
            .sum::<f64>()
            / n
    }

    /// Loss and its gradient, laid out like [`Mlp::parameters`].
    pub fn loss_and_gradient(&self, data: &Dataset) -> (f64, Vec<f64>) {
        let n = data.inputs.len() as f64;
        let mut grad_w: Vec<Vec<f64>> = self.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect();
        let mut grad_b: Vec<Vec<f64>> = self.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect();
        let mut loss = 0.0;
        let last = self.layers.len() - 1;
        for (x, y) in data.inputs.iter().zip(&data.targets) {
            let (pre, act) = self.forward(x);
            let err = act[last + 1][0] - y;
            loss += err * err;
            // dL/dz for the output layer
            let mut delta = vec![2.0 * err / n];
            for li in (0..=last).rev() {
                let l = &self.layers[li];
                let input = &act[li];
                for o in 0..l.outputs {
                    grad_b[li][o] += delta[o];
                    for i in 0..l.inputs {
                        grad_w[li][o * l.inputs + i] += delta[o] * input[i];
                    }
                }
                if li == 0 {
                    break;
                }
                let below = &pre[li - 1];
                delta = (0..l.inputs)
                    .map(|i| {
                        let back: f64 = (0..l.outputs).map(|o| l.weights[o * l.inputs + i] * delta[o]).sum();
                        back * self.activation.derivative(below[i])
                    })
                    .collect();
            }
        }
        let grad = grad_w
            .into_iter()
            .zip(grad_b)
            .flat_map(|(w, b)| w.into_iter().chain(b))
            .collect();
        (loss / n, grad)
    }
}

struct OptimizerState {
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

fn apply_update(opt: &Optimizer, lr: f64, params: &mut [f64], grad: &[f64], state: &mut OptimizerState) {
    match *opt {
        Optimizer::GradientDescent => {
            for (p, g) in params.iter_mut().zip(grad) {
                *p -= lr * g;
            }
        }
        Optimizer::AdamW {
            beta1,
            beta2,
            epsilon,
            weight_decay,
        } => {
            state.step += 1;
            let t = state.step as i32;
            let c1 = 1.0 - beta1.powi(t);
            let c2 = 1.0 - beta2.powi(t);
            for i in 0..params.len() {
                state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * grad[i];
                state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * grad[i] * grad[i];
                let m_hat = state.m[i] / c1;
                let v_hat = state.v[i] / c2;
                params[i] -= lr * (m_hat / (v_hat.sqrt() + epsilon) + weight_decay * params[i]);
            }
        }
    }
}

fn train(initial: &Mlp, data: &Dataset, config: &ConvergenceConfig) -> ActivationRun {
    let mut net = initial.clone();
    let mut params = net.parameters();
    let mut state = OptimizerState {
        step: 0,
        m: vec![0.0; params.len()],
        v: vec![0.0; params.len()],
    };
    let mut losses = Vec::with_capacity(config.epochs);
    let mut epochs_to_threshold = None;
    let mut diverged_at = None;
    for epoch in 1..=config.epochs {
        let (_, grad) = net.loss_and_gradient(data);
        apply_update(&config.optimizer, config.learning_rate, &mut params, &grad, &mut state);
        net.set_parameters(&params);
        let loss = net.loss(data);
        if !loss.is_finite() {
            diverged_at = Some(epoch);
            break;
        }
        losses.push(loss);
        if epochs_to_threshold.is_none() && loss < config.loss_threshold {
            epochs_to_threshold = Some(epoch);
        }
    }
    ActivationRun {
        activation: net.activation,
        losses,
        epochs_to_threshold,
        diverged_at,
    }
}

/// Trains the same seed-initialized network once with GELU and once with
/// ReLU and reports both loss curves.
pub fn run_convergence_lab(config: &ConvergenceConfig) -> Result<ConvergenceReport, NumericsError> {
    config.validate()?;
    let data = Dataset::synthetic(config.seed, config.samples);
    let base = Mlp::new(2, &config.hidden, ActivationKind::Gelu, config.seed);
    let relu_net = base.with_activation(ActivationKind::Relu);
    let (gelu_run, relu_run) = par::join(|| train(&base, &data, config), || train(&relu_net, &data, config));
    Ok(ConvergenceReport {
        seed: config.seed,
        config: config.clone(),
        runs: vec![gelu_run, relu_run],
    })
}
