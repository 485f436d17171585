//! Weighted softmax cross-entropy, Adam, and the seeded training loop.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::model::{Model, N_OUTPUTS};
use super::tensor::Tensor;
use crate::pulses::Pulse;
use crate::{Error, Result};

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 32,
            epochs: 30,
            rng_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning rate must be finite and >= 0".into()));
        }
        if self.epochs < 1 || self.batch_size < 1 {
            return Err(Error::Config("epochs and batch size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Numerically stabilized weighted mean cross-entropy over two-logit rows.
/// Returns the scalar loss and d(loss)/d(logits).
pub fn softmax_cross_entropy(
    logits: &Tensor,
    labels: &[usize],
    weights: &[f64],
) -> Result<(f64, Tensor)> {
    if logits.shape.len() != 2 || logits.shape[1] != N_OUTPUTS {
        return Err(Error::Shape(format!(
            "logits shape {:?}, expected [N, {N_OUTPUTS}]",
            logits.shape
        )));
    }
    let n = logits.shape[0];
    if labels.len() != n || weights.len() != n {
        return Err(Error::Shape("labels/weights length mismatch".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= N_OUTPUTS) {
        return Err(Error::Train(format!("label {bad} out of range")));
    }
    let mut loss = 0.0;
    let mut grad = Tensor::zeros(&logits.shape);
    for i in 0..n {
        let row = &logits.data[i * N_OUTPUTS..(i + 1) * N_OUTPUTS];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|&v| (v - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        let log_sum = sum.ln() + max;
        loss += weights[i] * (log_sum - row[labels[i]]);
        for (k, &e) in exps.iter().enumerate() {
            let softmax = e / sum;
            let onehot = if k == labels[i] { 1.0 } else { 0.0 };
            grad.data[i * N_OUTPUTS + k] = weights[i] * (softmax - onehot) / n as f64;
        }
    }
    Ok((loss / n as f64, grad))
}

/// Inverse-class-frequency sample weights: w_c = n / (2 * n_c). Keeps the
/// minority class from being drowned out under heavy imbalance.
pub fn class_weights(labels: &[usize]) -> Result<Vec<f64>> {
    let n = labels.len();
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = n - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Train(
            "training set must contain both classes".into(),
        ));
    }
    let w = [
        n as f64 / (2.0 * n_neg as f64),
        n as f64 / (2.0 * n_pos as f64),
    ];
    Ok(labels.iter().map(|&l| w[l]).collect())
}

fn adam_step(model: &mut Model, step: usize, config: &TrainConfig) {
    let t = step as f64;
    let bias1 = 1.0 - config.beta1.powf(t);
    let bias2 = 1.0 - config.beta2.powf(t);
    model.visit_params(&mut |_, p| {
        for i in 0..p.value.data.len() {
            let g = p.grad.data[i];
            p.adam_m.data[i] = config.beta1 * p.adam_m.data[i] + (1.0 - config.beta1) * g;
            p.adam_v.data[i] = config.beta2 * p.adam_v.data[i] + (1.0 - config.beta2) * g * g;
            let m_hat = p.adam_m.data[i] / bias1;
            let v_hat = p.adam_v.data[i] / bias2;
            p.value.data[i] -= config.learning_rate * m_hat / (v_hat.sqrt() + config.epsilon);
        }
    });
}

/// Seeded mini-batch Adam on weighted cross-entropy. Returns the per-epoch
/// loss trace. Deterministic given (seed, dataset order): the shuffle
/// permutation is drawn once from the seed, so identical runs see
/// identical batches.
pub fn train(
    model: &mut Model,
    pulses: &[Pulse],
    labels: &[usize],
    config: &TrainConfig,
) -> Result<Vec<f64>> {
    config.validate()?;
    if pulses.is_empty() || pulses.len() != labels.len() {
        return Err(Error::Train("empty dataset or label length mismatch".into()));
    }
    let weights = class_weights(labels)?;

    let mut order: Vec<usize> = (0..pulses.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    order.shuffle(&mut rng);

    let n = pulses.len();
    let mut trace = Vec::with_capacity(config.epochs);
    let mut step = 0usize;
    for epoch in 0..config.epochs {
        model.train_mode = true;
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let batch_pulses: Vec<&Pulse> = batch.iter().map(|&i| &pulses[i]).collect();
            let batch_labels: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let batch_weights: Vec<f64> = batch.iter().map(|&i| weights[i]).collect();
            let input = model.pulses_to_input(&batch_pulses)?;
            let logits = model.forward(&input)?;
            let (loss, grad) = softmax_cross_entropy(&logits, &batch_labels, &batch_weights)?;
            epoch_loss += loss * batch.len() as f64;
            model.zero_grads();
            model.backward(&grad)?;
            step += 1;
            adam_step(model, step, config);
        }
        let epoch_loss = epoch_loss / n as f64;
        if !epoch_loss.is_finite() || !model.params_finite() {
            return Err(Error::Train(format!(
                "non-finite state at epoch {epoch} (loss {epoch_loss})"
            )));
        }
        trace.push(epoch_loss);
    }
    model.train_mode = false;
    model.trained = true;
    Ok(trace)
}

/// Probability of the positive class for each pulse, in eval mode.
pub fn predict_proba(model: &mut Model, pulses: &[Pulse]) -> Result<Vec<f64>> {
    model.train_mode = false;
    let mut out = Vec::with_capacity(pulses.len());
    for chunk in pulses.chunks(64) {
        let refs: Vec<&Pulse> = chunk.iter().collect();
        let input = model.pulses_to_input(&refs)?;
        let logits = model.forward(&input)?;
        for i in 0..chunk.len() {
            let a = logits.data[i * N_OUTPUTS];
            let b = logits.data[i * N_OUTPUTS + 1];
            let max = a.max(b);
            let ea = (a - max).exp();
            let eb = (b - max).exp();
            out.push(eb / (ea + eb));
        }
    }
    Ok(out)
}
