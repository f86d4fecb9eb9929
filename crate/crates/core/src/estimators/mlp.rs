//! Small fully-connected regression networks: tanh hidden layers, identity
//! output, mean-squared-error loss. Trained either by Levenberg-Marquardt
//! (damped Gauss-Newton on the full batch) or by (mini-)batch gradient
//! descent.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Layer {
    inputs: usize,
    outputs: usize,
    /// Row-major `outputs x inputs`.
    weights: Vec<f64>,
    biases: Vec<f64>,
}

impl Layer {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            biases: vec![0.0; outputs],
        }
    }

    fn forward(&self, input: &[f64], out: &mut [f64]) {
        for (o, row) in out.iter_mut().zip(self.weights.chunks_exact(self.inputs)) {
            *o = row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>();
        }
        for (o, b) in out.iter_mut().zip(&self.biases) {
            *o += b;
        }
    }
}

/// Feed-forward network with `tanh` hidden units and a linear output layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layers: Vec<Layer>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Optimizer {
    #[default]
    LevenbergMarquardt,
    GradientDescent,
}

/// Training hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainParams {
    pub optimizer: Optimizer,
    /// Step size; gradient descent only.
    pub learning_rate: f64,
    /// Passes over the data, or damped Gauss-Newton iterations.
    pub epochs: usize,
    /// `None` trains full-batch. Gradient descent only.
    pub batch_size: Option<usize>,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self {
            optimizer: Optimizer::LevenbergMarquardt,
            learning_rate: 0.05,
            epochs: 50,
            batch_size: None,
        }
    }
}

impl TrainParams {
    pub fn gradient_descent(learning_rate: f64, epochs: usize) -> Self {
        Self {
            optimizer: Optimizer::GradientDescent,
            learning_rate,
            epochs,
            batch_size: None,
        }
    }
}

/// Initial damping, its adjustment factor, and the level at which a step is
/// abandoned.
const LM_DAMPING: (f64, f64, f64) = (1e-3, 10.0, 1e10);
const LM_MIN_GRADIENT: f64 = 1e-9;

/// Outcome of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub initial_mse: f64,
    pub final_mse: f64,
    /// Largest absolute training residual over samples and outputs.
    pub max_error: f64,
}

/// Flat gradient buffer mirroring the layer structure.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Mlp {
    /// All-zero network. Its output is identically zero.
    pub fn zeros(layer_sizes: &[usize]) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
            return Err(Error::InvalidParameter(format!(
                "bad layer sizes {layer_sizes:?}"
            )));
        }
        Ok(Self {
            layers: layer_sizes
                .windows(2)
                .map(|w| Layer::zeros(w[0], w[1]))
                .collect(),
        })
    }

    /// Weights and biases uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn random<R: Rng + ?Sized>(layer_sizes: &[usize], rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(layer_sizes)?;
        for layer in &mut net.layers {
            let bound = 1.0 / (layer.inputs as f64).sqrt();
            for w in layer.weights.iter_mut().chain(layer.biases.iter_mut()) {
                *w = rng.random_range(-bound..=bound);
            }
        }
        Ok(net)
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.layers[0].inputs];
        sizes.extend(self.layers.iter().map(|l| l.outputs));
        sizes
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs)
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }

    /// Bias of the output layer (the final hidden-to-output bias).
    pub fn output_bias(&self) -> &[f64] {
        &self.layers.last().expect("non-empty network").biases
    }

    pub fn zero_output_layer(&mut self) {
        let last = self.layers.last_mut().expect("non-empty network");
        last.weights.fill(0.0);
        last.biases.fill(0.0);
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.biases).all(|v| v.is_finite()))
    }

    /// Visits every parameter in a fixed order (layer, weights then biases).
    pub fn parameters_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.biases.iter_mut()))
    }

    pub fn parameters(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.biases).copied())
            .collect()
    }

    fn set_parameters(&mut self, values: &[f64]) {
        for (p, v) in self.parameters_mut().zip(values) {
            *p = *v;
        }
    }

    pub fn predict(&self, input: &[f64]) -> Vec<f64> {
        let mut acts = self.activation_buffers();
        self.forward_into(input, &mut acts);
        acts.pop().unwrap_or_default()
    }

    /// Convenience for single-output networks.
    pub fn predict_scalar(&self, input: &[f64]) -> f64 {
        self.predict(input)[0]
    }

    fn activation_buffers(&self) -> Vec<Vec<f64>> {
        self.layers.iter().map(|l| vec![0.0; l.outputs]).collect()
    }

    /// Fills `acts[l]` with the post-activation output of layer `l`.
    fn forward_into(&self, input: &[f64], acts: &mut [Vec<f64>]) {
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let (before, after) = acts.split_at_mut(l);
            let src: &[f64] = if l == 0 { input } else { &before[l - 1] };
            let dst = &mut after[0];
            layer.forward(src, dst);
            if l != last {
                dst.iter_mut().for_each(|v| *v = v.tanh());
            }
        }
    }

    fn zero_gradient(&self) -> Gradient {
        Gradient {
            weights: self.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            biases: self.layers.iter().map(|l| vec![0.0; l.biases.len()]).collect(),
        }
    }

    /// Mean squared error over a batch of samples.
    pub fn mse(&self, inputs: &[Vec<f64>], targets: &[Vec<f64>]) -> f64 {
        let mut acts = self.activation_buffers();
        let mut total = 0.0;
        let mut count = 0usize;
        for (x, t) in inputs.iter().zip(targets) {
            self.forward_into(x, &mut acts);
            let out = acts.last().expect("non-empty network");
            total += out.iter().zip(t).map(|(o, t)| (o - t) * (o - t)).sum::<f64>();
            count += t.len();
        }
        total / count.max(1) as f64
    }

    /// Largest absolute residual over samples and outputs.
    pub fn max_abs_error(&self, inputs: &[Vec<f64>], targets: &[Vec<f64>]) -> f64 {
        inputs
            .iter()
            .zip(targets)
            .flat_map(|(x, t)| {
                let out = self.predict(x);
                out.into_iter().zip(t.iter()).map(|(o, t)| (o - t).abs()).collect::<Vec<_>>()
            })
            .fold(0.0, f64::max)
    }

    /// Loss value and analytic gradient of the MSE over the given samples.
    pub fn loss_and_gradient(&self, inputs: &[Vec<f64>], targets: &[Vec<f64>]) -> (f64, Gradient) {
        let idx: Vec<usize> = (0..inputs.len()).collect();
        let mut grad = self.zero_gradient();
        let mut scratch = Scratch::new(self);
        let loss = self.accumulate(inputs, targets, &idx, &mut grad, &mut scratch);
        (loss, grad)
    }

    /// Accumulates the MSE gradient of the samples in `batch` into `grad`
    /// (after zeroing it) and returns the batch loss.
    fn accumulate(
        &self,
        inputs: &[Vec<f64>],
        targets: &[Vec<f64>],
        batch: &[usize],
        grad: &mut Gradient,
        s: &mut Scratch,
    ) -> f64 {
        grad.weights.iter_mut().for_each(|g| g.fill(0.0));
        grad.biases.iter_mut().for_each(|g| g.fill(0.0));
        let outputs = self.output_width();
        let scale = 2.0 / (batch.len() * outputs) as f64;
        let last = self.layers.len() - 1;
        let mut loss = 0.0;
        for &j in batch {
            let x = &inputs[j];
            self.forward_into(x, &mut s.acts);
            // dL/d(pre-activation) of the output layer
            let delta = &mut s.deltas[last];
            for ((d, o), t) in delta.iter_mut().zip(&s.acts[last]).zip(&targets[j]) {
                let r = o - t;
                loss += r * r;
                *d = scale * r;
            }
            for l in (0..=last).rev() {
                let layer = &self.layers[l];
                let src: &[f64] = if l == 0 { x } else { &s.acts[l - 1] };
                let gw = &mut grad.weights[l];
                let gb = &mut grad.biases[l];
                let delta = &s.deltas[l];
                for (o, &d) in delta.iter().enumerate() {
                    gb[o] += d;
                    let row = &mut gw[o * layer.inputs..(o + 1) * layer.inputs];
                    for (g, a) in row.iter_mut().zip(src) {
                        *g += d * a;
                    }
                }
                if l > 0 {
                    let (lower, upper) = s.deltas.split_at_mut(l);
                    let prev = &mut lower[l - 1];
                    prev.fill(0.0);
                    for (o, &d) in upper[0].iter().enumerate() {
                        let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                        for (p, w) in prev.iter_mut().zip(row) {
                            *p += d * w;
                        }
                    }
                    for (p, a) in prev.iter_mut().zip(&s.acts[l - 1]) {
                        *p *= 1.0 - a * a;
                    }
                }
            }
        }
        loss / (batch.len() * outputs) as f64
    }

    fn apply(&mut self, grad: &Gradient, learning_rate: f64) {
        for (layer, (gw, gb)) in self
            .layers
            .iter_mut()
            .zip(grad.weights.iter().zip(&grad.biases))
        {
            for (w, g) in layer.weights.iter_mut().zip(gw) {
                *w -= learning_rate * g;
            }
            for (b, g) in layer.biases.iter_mut().zip(gb) {
                *b -= learning_rate * g;
            }
        }
    }

    /// Trains in place. The rng only shuffles mini-batches; full-batch
    /// training never touches it.
    pub fn train<R: Rng + ?Sized>(
        &mut self,
        inputs: &[Vec<f64>],
        targets: &[Vec<f64>],
        params: &TrainParams,
        rng: &mut R,
    ) -> Result<TrainReport> {
        check_len(inputs.len(), targets.len(), "training targets")?;
        if inputs.is_empty() {
            return Err(Error::InvalidParameter("empty training set".into()));
        }
        for (x, t) in inputs.iter().zip(targets) {
            check_len(self.input_width(), x.len(), "network input")?;
            check_len(self.output_width(), t.len(), "network output")?;
        }
        let initial_mse = self.mse(inputs, targets);
        match params.optimizer {
            Optimizer::LevenbergMarquardt => self.levenberg_marquardt(inputs, targets, params.epochs)?,
            Optimizer::GradientDescent => self.gradient_descent(inputs, targets, params, rng)?,
        }
        let final_mse = self.mse(inputs, targets);
        if !final_mse.is_finite() || !self.is_finite() {
            return Err(Error::Divergence {
                epoch: params.epochs,
            });
        }
        Ok(TrainReport {
            initial_mse,
            final_mse,
            max_error: self.max_abs_error(inputs, targets),
        })
    }

    fn gradient_descent<R: Rng + ?Sized>(
        &mut self,
        inputs: &[Vec<f64>],
        targets: &[Vec<f64>],
        params: &TrainParams,
        rng: &mut R,
    ) -> Result<()> {
        if !(params.learning_rate > 0.0) {
            return Err(Error::InvalidParameter("learning rate must be positive".into()));
        }
        let mut order: Vec<usize> = (0..inputs.len()).collect();
        let batch = params
            .batch_size
            .filter(|&b| b > 0 && b < inputs.len())
            .unwrap_or(inputs.len());
        let mut grad = self.zero_gradient();
        let mut scratch = Scratch::new(self);
        for epoch in 0..params.epochs {
            if batch < inputs.len() {
                order.shuffle(rng);
            }
            for chunk in order.chunks(batch) {
                let loss = self.accumulate(inputs, targets, chunk, &mut grad, &mut scratch);
                if !loss.is_finite() {
                    return Err(Error::Divergence { epoch });
                }
                self.apply(&grad, params.learning_rate);
            }
        }
        Ok(())
    }

    /// Residuals `out - target` stacked sample by sample, and optionally
    /// their Jacobian with respect to the flattened parameters.
    fn residuals(
        &self,
        inputs: &[Vec<f64>],
        targets: &[Vec<f64>],
        mut jacobian: Option<&mut DMatrix<f64>>,
        s: &mut Scratch,
    ) -> DVector<f64> {
        let outputs = self.output_width();
        let last = self.layers.len() - 1;
        let offsets: Vec<usize> = self
            .layers
            .iter()
            .scan(0, |acc, l| {
                let start = *acc;
                *acc += l.weights.len() + l.biases.len();
                Some(start)
            })
            .collect();
        let mut r = DVector::zeros(inputs.len() * outputs);
        for (j, (x, t)) in inputs.iter().zip(targets).enumerate() {
            self.forward_into(x, &mut s.acts);
            for (o, (out, t)) in s.acts[last].iter().zip(t).enumerate() {
                r[j * outputs + o] = out - t;
            }
            let Some(jac) = jacobian.as_deref_mut() else {
                continue;
            };
            for o in 0..outputs {
                let row = j * outputs + o;
                s.deltas[last].fill(0.0);
                s.deltas[last][o] = 1.0;
                for l in (0..=last).rev() {
                    let layer = &self.layers[l];
                    let src: &[f64] = if l == 0 { x } else { &s.acts[l - 1] };
                    let base = offsets[l];
                    let bias_base = base + layer.weights.len();
                    for (u, &d) in s.deltas[l].iter().enumerate() {
                        jac[(row, bias_base + u)] = d;
                        for (i, a) in src.iter().enumerate() {
                            jac[(row, base + u * layer.inputs + i)] = d * a;
                        }
                    }
                    if l > 0 {
                        let (lower, upper) = s.deltas.split_at_mut(l);
                        let prev = &mut lower[l - 1];
                        prev.fill(0.0);
                        for (u, &d) in upper[0].iter().enumerate() {
                            let w = &layer.weights[u * layer.inputs..(u + 1) * layer.inputs];
                            for (p, w) in prev.iter_mut().zip(w) {
                                *p += d * w;
                            }
                        }
                        for (p, a) in prev.iter_mut().zip(&s.acts[l - 1]) {
                            *p *= 1.0 - a * a;
                        }
                    }
                }
            }
        }
        r
    }

    /// Full-batch Levenberg-Marquardt on the sum of squared residuals.
    /// Stops after `iterations` accepted steps, when the gradient vanishes,
    /// or when no damping level yields a decrease.
    fn levenberg_marquardt(
        &mut self,
        inputs: &[Vec<f64>],
        targets: &[Vec<f64>],
        iterations: usize,
    ) -> Result<()> {
        let (mut damping, factor, max_damping) = LM_DAMPING;
        let count = self.parameter_count();
        let rows = inputs.len() * self.output_width();
        let mut s = Scratch::new(self);
        let mut jac = DMatrix::zeros(rows, count);
        let mut theta = DVector::from_vec(self.parameters());
        let mut trial = self.clone();
        for epoch in 0..iterations {
            let r = self.residuals(inputs, targets, Some(&mut jac), &mut s);
            let sse = r.norm_squared();
            if !sse.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            let grad = jac.tr_mul(&r);
            if grad.amax() < LM_MIN_GRADIENT {
                break;
            }
            let jtj = jac.tr_mul(&jac);
            let accepted = loop {
                if damping > max_damping {
                    break false;
                }
                let mut a = jtj.clone();
                for k in 0..count {
                    a[(k, k)] += damping;
                }
                let step = a.cholesky().map(|c| c.solve(&grad));
                if let Some(step) = step {
                    let candidate = &theta - step;
                    trial.set_parameters(candidate.as_slice());
                    let next = trial.residuals(inputs, targets, None, &mut s).norm_squared();
                    if next < sse {
                        theta = candidate;
                        self.set_parameters(theta.as_slice());
                        damping = (damping / factor).max(1e-20);
                        break true;
                    }
                }
                damping *= factor;
            };
            if !accepted {
                break;
            }
        }
        Ok(())
    }
}

struct Scratch {
    acts: Vec<Vec<f64>>,
    deltas: Vec<Vec<f64>>,
}

impl Scratch {
    fn new(net: &Mlp) -> Self {
        Self {
            acts: net.activation_buffers(),
            deltas: net.activation_buffers(),
        }
    }
}
