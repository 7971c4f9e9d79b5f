//! Fully connected ReLU network trained as a 5-way star classifier with
//! softmax cross-entropy, an L2 penalty and Adam on shuffled minibatches.
//! Ratings are decoded as the expectation over the predicted distribution.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const N_CLASSES: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// L2 penalty on the weights (biases are not penalized).
    pub l2: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub hidden: Vec<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            l2: 0.0001,
            batch_size: 200,
            epochs: 30,
            patience: 5,
            hidden: vec![200, 40, 8],
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.learning_rate, self.beta1, self.beta2, self.epsilon];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite()))
            || self.beta1 >= 1.0
            || self.beta2 >= 1.0
            || !(self.l2 >= 0.0)
            || self.batch_size == 0
            || self.epochs == 0
            || self.hidden.iter().any(|&w| w == 0)
        {
            return Err(Error::Config(format!("invalid MLP training config {self:?}")));
        }
        Ok(())
    }
}

/// One fully connected layer; `weights` is `outputs x inputs`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn zeros_like(&self) -> Dense {
        Dense {
            inputs: self.inputs,
            outputs: self.outputs,
            weights: vec![0.0; self.weights.len()],
            bias: vec![0.0; self.bias.len()],
        }
    }

    /// Glorot-uniform weights and biases.
    fn glorot<R: Rng>(inputs: usize, outputs: usize, rng: &mut R) -> Dense {
        let bound = (6.0 / (inputs + outputs) as f64).sqrt();
        Dense {
            inputs,
            outputs,
            weights: (0..inputs * outputs).map(|_| rng.gen_range(-bound..bound)).collect(),
            bias: (0..outputs).map(|_| rng.gen_range(-bound..bound)).collect(),
        }
    }

    fn forward(&self, input: &[f64], batch: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(batch * self.outputs);
        for x in input.chunks_exact(self.inputs) {
            for o in 0..self.outputs {
                let w = &self.weights[o * self.inputs..(o + 1) * self.inputs];
                out.push(self.bias[o] + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>());
            }
        }
        out
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights.iter_mut().chain(self.bias.iter_mut())
    }

    fn params(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().chain(self.bias.iter())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub layers: Vec<Dense>,
}

fn relu_in_place(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = x.max(0.0));
}

fn softmax_in_place(logits: &mut [f64]) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for z in logits.iter_mut() {
        *z = (*z - max).exp();
        total += *z;
    }
    logits.iter_mut().for_each(|p| *p /= total);
}

/// Star labels 1..=5 as class indices 0..=4.
pub fn star_classes(y: &[f64]) -> Result<Vec<usize>> {
    y.iter()
        .map(|&t| {
            if t.fract() == 0.0 && (1.0..=N_CLASSES as f64).contains(&t) {
                Ok(t as usize - 1)
            } else {
                Err(Error::Input(format!("target {t} is not a star class in 1..=5")))
            }
        })
        .collect()
}

impl MlpModel {
    /// Randomly initialized network with layer widths `input, hidden.., 5`.
    pub fn new(input: usize, hidden: &[usize], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::with_rng(input, hidden, &mut rng)
    }

    fn with_rng<R: Rng>(input: usize, hidden: &[usize], rng: &mut R) -> Self {
        let mut widths = vec![input];
        widths.extend_from_slice(hidden);
        widths.push(N_CLASSES);
        let layers = widths
            .windows(2)
            .map(|w| Dense::glorot(w[0], w[1], rng))
            .collect();
        MlpModel { layers }
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_width()];
        w.extend(self.layers.iter().map(|l| l.outputs));
        w
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn n_parameters(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Activations of every layer; the last entry holds class probabilities.
    fn forward(&self, input: &[f64], batch: usize) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(input.to_vec());
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = layer.forward(&acts[k], batch);
            if k + 1 < self.layers.len() {
                relu_in_place(&mut z);
            } else {
                z.chunks_exact_mut(layer.outputs).for_each(softmax_in_place);
            }
            acts.push(z);
        }
        acts
    }

    pub fn predict_proba(&self, x: &Matrix) -> Result<Vec<[f64; N_CLASSES]>> {
        x.expect_cols(self.input_width())?;
        let mut out = Vec::with_capacity(x.rows());
        // bounded chunks keep the activation buffers small
        for start in (0..x.rows()).step_by(1024) {
            let end = (start + 1024).min(x.rows());
            let input = &x.data()[start * x.cols()..end * x.cols()];
            let acts = self.forward(input, end - start);
            for p in acts.last().unwrap().chunks_exact(N_CLASSES) {
                out.push(p.try_into().expect("five classes"));
            }
        }
        Ok(out)
    }

    /// Expected star rating, always within [1, 5].
    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        Ok(self
            .predict_proba(x)?
            .iter()
            .map(|p| p.iter().enumerate().map(|(k, pk)| (k + 1) as f64 * pk).sum())
            .collect())
    }

    /// Mean cross-entropy plus `l2 / (2 * batch) * |W|^2` over the given rows,
    /// with the gradient of that loss for every layer.
    pub fn loss_and_gradient(&self, x: &Matrix, labels: &[usize], l2: f64) -> (f64, Vec<Dense>) {
        let batch = x.rows();
        let acts = self.forward(x.data(), batch);
        let probs = acts.last().unwrap();
        let scale = 1.0 / batch as f64;

        let mut loss = 0.0;
        let mut delta = probs.clone();
        for (s, &label) in labels.iter().enumerate() {
            loss -= probs[s * N_CLASSES + label].ln();
            delta[s * N_CLASSES + label] -= 1.0;
        }
        loss *= scale;
        delta.iter_mut().for_each(|d| *d *= scale);
        let penalty: f64 = self
            .layers
            .iter()
            .flat_map(|l| l.weights.iter())
            .map(|w| w * w)
            .sum();
        loss += 0.5 * l2 * scale * penalty;

        let mut grads: Vec<Dense> = self.layers.iter().map(Dense::zeros_like).collect();
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let input = &acts[k];
            let grad = &mut grads[k];
            let mut back = vec![0.0; batch * layer.inputs];
            for s in 0..batch {
                let xin = &input[s * layer.inputs..(s + 1) * layer.inputs];
                let din = &mut back[s * layer.inputs..(s + 1) * layer.inputs];
                for o in 0..layer.outputs {
                    let d = delta[s * layer.outputs + o];
                    if d == 0.0 {
                        continue;
                    }
                    grad.bias[o] += d;
                    let w = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    let gw = &mut grad.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    for i in 0..layer.inputs {
                        gw[i] += d * xin[i];
                        din[i] += d * w[i];
                    }
                }
            }
            for (g, w) in grad.weights.iter_mut().zip(&layer.weights) {
                *g += l2 * scale * w;
            }
            if k > 0 {
                // relu derivative: zero where the forward activation was clipped
                for (d, a) in back.iter_mut().zip(input) {
                    if *a <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            delta = back;
        }
        (loss, grads)
    }
}

/// Adam state for every parameter of a network.
#[derive(Debug, Clone)]
pub struct Adam {
    first: Vec<Dense>,
    second: Vec<Dense>,
    step: i32,
}

impl Adam {
    pub fn new(model: &MlpModel) -> Self {
        Adam {
            first: model.layers.iter().map(Dense::zeros_like).collect(),
            second: model.layers.iter().map(Dense::zeros_like).collect(),
            step: 0,
        }
    }

    pub fn update(&mut self, model: &mut MlpModel, grads: &[Dense], cfg: &TrainConfig) {
        self.step += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.step);
        let bc2 = 1.0 - cfg.beta2.powi(self.step);
        for (((layer, g), m), v) in model
            .layers
            .iter_mut()
            .zip(grads)
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            for (((p, g), m), v) in layer
                .params_mut()
                .zip(g.params())
                .zip(m.params_mut())
                .zip(v.params_mut())
            {
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
            }
        }
    }
}

/// Held-out rows used for early stopping.
pub struct Validation<'a> {
    pub x: &'a Matrix,
    pub y: &'a [f64],
}

/// Trains for `cfg.epochs` epochs.
pub fn fit_mlp(x: &Matrix, y: &[f64], cfg: &TrainConfig) -> Result<MlpModel> {
    train(x, y, cfg, None)
}

/// Trains with early stopping on validation RMSE and returns the parameters
/// of the best epoch.
pub fn fit_mlp_early_stopping(
    x: &Matrix,
    y: &[f64],
    cfg: &TrainConfig,
    validation: Validation<'_>,
) -> Result<MlpModel> {
    train(x, y, cfg, Some(validation))
}

fn rmse(pred: &[f64], y: &[f64]) -> f64 {
    (pred.iter().zip(y).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / y.len() as f64).sqrt()
}

fn train(x: &Matrix, y: &[f64], cfg: &TrainConfig, validation: Option<Validation<'_>>) -> Result<MlpModel> {
    cfg.validate()?;
    if x.rows() != y.len() {
        return Err(Error::Input(format!("{} rows but {} targets", x.rows(), y.len())));
    }
    if x.rows() == 0 {
        return Err(Error::Fit("no training rows".into()));
    }
    let labels = star_classes(y)?;
    if let Some(v) = &validation {
        v.x.expect_cols(x.cols())?;
        if v.x.rows() != v.y.len() || v.y.is_empty() {
            return Err(Error::Input("validation rows and targets disagree".into()));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = MlpModel::with_rng(x.cols(), &cfg.hidden, &mut rng);
    let mut adam = Adam::new(&model);
    let mut order: Vec<usize> = (0..x.rows()).collect();
    let mut best: Option<(f64, MlpModel)> = None;
    let mut stale = 0;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let bx = x.select_rows(batch);
            let by: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let (loss, grads) = model.loss_and_gradient(&bx, &by, cfg.l2);
            if !loss.is_finite() {
                return Err(Error::Divergence(format!("loss {loss} in epoch {epoch}")));
            }
            epoch_loss += loss * batch.len() as f64;
            adam.update(&mut model, &grads, cfg);
        }
        log::debug!("mlp epoch {epoch}: loss {:.6}", epoch_loss / x.rows() as f64);

        if let Some(v) = &validation {
            let score = rmse(&model.predict(v.x)?, v.y);
            match &best {
                Some((b, _)) if score >= *b => {
                    stale += 1;
                    if stale >= cfg.patience {
                        break;
                    }
                }
                _ => {
                    best = Some((score, model.clone()));
                    stale = 0;
                }
            }
        }
    }
    Ok(best.map_or(model, |(_, m)| m))
}
