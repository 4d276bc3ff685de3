//! Offline training: LSTM by backpropagation through time with Adam, the
//! DyBM by streaming passes, and a finite-difference gradient check.

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::NormalizedSequence;
use crate::error::{Error, Result};
use crate::predictors::{
    sequence_loss, sequence_loss_grad, Dybm, DybmConfig, Lstm, LstmParams, PaddedSequence, Predictor, DEFAULT_HIDDEN,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub shuffle: bool,
    /// Global gradient-norm clip; 0 disables clipping.
    pub clip_norm: f64,
    pub hidden: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            batch_size: 16,
            learning_rate: 1e-3,
            seed: 0,
            shuffle: true,
            clip_norm: 5.0,
            hidden: DEFAULT_HIDDEN,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if !(self.clip_norm.is_finite() && self.clip_norm >= 0.0) {
            return Err(Error::invalid("clip norm must be finite and nonnegative"));
        }
        if self.hidden == 0 {
            return Err(Error::invalid("hidden size must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
    pub epoch_seconds: Vec<f64>,
    pub checksum: String,
}

impl TrainReport {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["epoch", "loss", "seconds"])?;
        for (i, (l, s)) in self.epoch_losses.iter().zip(&self.epoch_seconds).enumerate() {
            w.write_record([(i + 1).to_string(), l.to_string(), s.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn check_corpus(corpus: &[NormalizedSequence]) -> Result<()> {
    if corpus.is_empty() {
        return Err(Error::invalid("training corpus is empty"));
    }
    Ok(())
}

fn epoch_order(n: usize, shuffle: bool, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    if shuffle {
        order.shuffle(rng);
    }
    order
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * grad[i];
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * grad[i] * grad[i];
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

/// Mean loss and its gradient over one batch of sequences, zero-padded to
/// the longest. Gradients are computed in parallel and summed in batch
/// order, so results do not depend on the thread count.
fn batch_gradient(params: &LstmParams, batch: &[&NormalizedSequence]) -> Result<(f64, usize, Vec<f64>)> {
    let pad = batch.iter().map(|s| s.len()).max().unwrap_or(0);
    let padded = batch
        .iter()
        .map(|s| PaddedSequence::new(&s.velocity_vecs(), pad))
        .collect::<Result<Vec<_>>>()?;
    let grads: Vec<_> = padded.par_iter().map(|seq| sequence_loss_grad(params, seq)).collect();
    let mut loss = 0.0;
    let mut count = 0;
    let mut flat = vec![0.0; params.n_params()];
    for g in grads {
        loss += g.loss_sum;
        count += g.count;
        for (acc, x) in flat.iter_mut().zip(g.grad.to_flat()) {
            *acc += x;
        }
    }
    Ok((loss, count, flat))
}

/// Trains a fresh LSTM seeded from `cfg.seed`.
pub fn train_lstm(corpus: &[NormalizedSequence], cfg: &TrainConfig) -> Result<(Lstm, TrainReport)> {
    cfg.validate()?;
    train_lstm_from(LstmParams::random(2, cfg.hidden, 2, cfg.seed), corpus, cfg)
}

/// Minimizes the mean one-step-ahead squared error starting from `params`.
/// On divergence the error carries the losses of the completed epochs.
pub fn train_lstm_from(
    mut params: LstmParams,
    corpus: &[NormalizedSequence],
    cfg: &TrainConfig,
) -> Result<(Lstm, TrainReport)> {
    cfg.validate()?;
    check_corpus(corpus)?;
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7261_696e);
    let mut adam = Adam::new(params.n_params());
    let mut losses = Vec::with_capacity(cfg.epochs);
    let mut seconds = Vec::with_capacity(cfg.epochs);
    let mut flat = params.to_flat();

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let order = epoch_order(corpus.len(), cfg.shuffle, &mut rng);
        let mut epoch_loss = 0.0;
        let mut epoch_count = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<_> = chunk.iter().map(|&i| &corpus[i]).collect();
            let (loss, count, mut grad) = batch_gradient(&params, &batch)?;
            if count == 0 {
                continue;
            }
            let scale = 1.0 / count as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if !loss.is_finite() || !norm.is_finite() {
                return Err(Error::TrainingDiverged { epoch, losses });
            }
            if cfg.clip_norm > 0.0 && norm > cfg.clip_norm {
                let k = cfg.clip_norm / norm;
                grad.iter_mut().for_each(|g| *g *= k);
            }
            adam.step(&mut flat, &grad, cfg.learning_rate);
            params.set_flat(&flat)?;
            epoch_loss += loss;
            epoch_count += count;
        }
        let mean = if epoch_count > 0 { epoch_loss / epoch_count as f64 } else { 0.0 };
        log::info!("epoch {} loss {mean:.6}", epoch + 1);
        losses.push(mean);
        seconds.push(started.elapsed().as_secs_f64());
    }
    if params.tensors().iter().any(|t| t.iter().any(|v| !v.is_finite())) {
        return Err(Error::TrainingDiverged { epoch: cfg.epochs - 1, losses });
    }
    let model = Lstm::new(params)?;
    let report = TrainReport { epoch_losses: losses, epoch_seconds: seconds, checksum: model.parameter_checksum() };
    Ok((model, report))
}

/// Streams the corpus through the DyBM learning rule for `cfg.epochs`
/// passes, resetting FIFO and traces at each sequence start. The returned
/// model has learning switched off.
pub fn train_dybm_offline(
    corpus: &[NormalizedSequence],
    dybm: &DybmConfig,
    cfg: &TrainConfig,
) -> Result<(Dybm, TrainReport)> {
    cfg.validate()?;
    check_corpus(corpus)?;
    let mut model = Dybm::new(dybm.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6479_626d);
    let mut losses = Vec::with_capacity(cfg.epochs);
    let mut seconds = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let started = Instant::now();
        let mut sum = 0.0;
        let mut count = 0;
        for i in epoch_order(corpus.len(), cfg.shuffle, &mut rng) {
            model.reset();
            for v in corpus[i].velocity_vecs() {
                let pred = model.predict_one()?;
                sum += pred.iter().zip(&v).map(|(p, t)| (p - t).powi(2)).sum::<f64>();
                count += v.len();
                model.learn_step(&v)?;
            }
        }
        losses.push(if count > 0 { sum / count as f64 } else { 0.0 });
        seconds.push(started.elapsed().as_secs_f64());
    }
    model.reset();
    model.set_learning(false);
    let report = TrainReport { epoch_losses: losses, epoch_seconds: seconds, checksum: model.parameter_checksum() };
    Ok((model, report))
}

/// Worst disagreement between the analytic and central-difference gradients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientCheck {
    pub max_relative: f64,
    pub max_absolute: f64,
}

/// Relative errors are taken against `max(|analytic|, |numeric|, 1e-6)` so
/// parameters with vanishing gradient do not dominate.
pub fn gradient_errors(params: &LstmParams, samples: &[Vec<f64>], epsilon: f64) -> Result<GradientCheck> {
    if samples.len() < 2 {
        return Err(Error::invalid("gradient check needs a sequence of at least 2 samples"));
    }
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::invalid("epsilon must be positive"));
    }
    params.validate()?;
    let seq = PaddedSequence::new(samples, 0)?;
    let analytic = sequence_loss_grad(params, &seq).grad.to_flat();
    let base = params.to_flat();
    let mut probe = params.clone();
    let mut flat = base.clone();
    let mut out = GradientCheck { max_relative: 0.0, max_absolute: 0.0 };
    for i in 0..base.len() {
        flat[i] = base[i] + epsilon;
        probe.set_flat(&flat)?;
        let plus = sequence_loss(&probe, &seq).0;
        flat[i] = base[i] - epsilon;
        probe.set_flat(&flat)?;
        let minus = sequence_loss(&probe, &seq).0;
        flat[i] = base[i];
        let numeric = (plus - minus) / (2.0 * epsilon);
        let abs = (numeric - analytic[i]).abs();
        let rel = abs / numeric.abs().max(analytic[i].abs()).max(1e-6);
        out.max_absolute = out.max_absolute.max(abs);
        out.max_relative = out.max_relative.max(rel);
    }
    Ok(out)
}

pub fn gradient_check(params: &LstmParams, samples: &[Vec<f64>], epsilon: f64) -> Result<f64> {
    Ok(gradient_errors(params, samples, epsilon)?.max_relative)
}
