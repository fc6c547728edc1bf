//! Deterministic mini-batch training with MSE loss, Adam updates and early
//! stopping.

mod history;

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use history::{EpochRecord, TrainingHistory};

use crate::data::WindowSample;
use crate::models::{Mode, ModelError, ModelKind, SurrogateModel};
use crate::nn::{NnError, Tape, Tensor, Var};

/// Samples per forward pass when scoring the validation split.
const EVAL_CHUNK: usize = 512;

/// Separates the dropout stream from the shuffle stream.
const DROPOUT_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training setup: {0}")]
    Argument(String),
    #[error("training diverged at epoch {epoch}, batch {batch}: loss {loss}")]
    Divergence { epoch: usize, batch: usize, loss: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Chronological tail of the training data held out for early stopping.
    pub validation_fraction: f64,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Global gradient-norm ceiling.
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 64,
            max_epochs: 200,
            patience: 10,
            validation_fraction: 0.1,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            clip_norm: None,
        }
    }
}

impl TrainConfig {
    pub const DEFAULT_RECURRENT_CLIP: f64 = 5.0;

    /// Defaults, with clipping switched on for recurrent architectures.
    pub fn for_kind(kind: ModelKind) -> Self {
        Self {
            clip_norm: kind.is_recurrent().then_some(Self::DEFAULT_RECURRENT_CLIP),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |msg: String| Err(TrainError::Argument(msg));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate {} must be finite and >= 0", self.learning_rate));
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if self.max_epochs == 0 {
            return bad("max epochs must be at least 1".into());
        }
        if self.patience == 0 {
            return bad("patience must be at least 1".into());
        }
        if !(0.0..0.5).contains(&self.validation_fraction) {
            return bad(format!("validation fraction {} outside [0, 0.5)", self.validation_fraction));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad(format!("moment coefficients ({}, {}) outside [0, 1)", self.beta1, self.beta2));
        }
        if !(self.epsilon > 0.0) {
            return bad(format!("epsilon {} must be > 0", self.epsilon));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0 && c.is_finite()) {
                return bad(format!("clip threshold {c} must be finite and > 0"));
            }
        }
        Ok(())
    }
}

/// Records the mean squared error between `pred` and `target` on `tape`.
pub fn mse_loss(tape: &mut Tape, pred: Var, target: Var) -> Result<Var, NnError> {
    tape.mse(pred, target)
}

/// Mean squared error of two equally shaped tensors.
pub fn mse(pred: &Tensor, target: &Tensor) -> Result<f64, NnError> {
    if pred.shape() != target.shape() {
        return Err(NnError::Dimension {
            op: "mse",
            left: pred.shape().to_vec(),
            right: target.shape().to_vec(),
        });
    }
    if pred.is_empty() {
        return Err(NnError::Argument("mse of empty tensors".into()));
    }
    let sse: f64 = pred.data().iter().zip(target.data()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(sse / pred.len() as f64)
}

/// Mean squared error of `model` over `samples` with dropout disabled.
pub fn evaluate_loss(model: &SurrogateModel, samples: &[WindowSample]) -> Result<f64, TrainError> {
    if samples.is_empty() {
        return Err(TrainError::Argument("no samples to score".into()));
    }
    let (mut sse, mut count) = (0.0, 0usize);
    for chunk in samples.chunks(EVAL_CHUNK) {
        let pred = model.predict(chunk)?;
        let target = model.encode_targets(chunk)?;
        sse += pred.data().iter().zip(target.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        count += target.len();
    }
    Ok(sse / count as f64)
}

fn gather_rows(t: &Tensor, rows: &[usize]) -> Tensor {
    let width: usize = t.shape()[1..].iter().product();
    let mut data = Vec::with_capacity(rows.len() * width);
    for &r in rows {
        data.extend_from_slice(&t.data()[r * width..(r + 1) * width]);
    }
    let mut shape = t.shape().to_vec();
    shape[0] = rows.len();
    Tensor::new(shape, data).expect("gathered rows keep their width")
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: i32,
}

/// Fits `model` to `data` (already normalized, in chronological order).
///
/// The last `validation_fraction` of `data` is held out; when it is empty the
/// epoch training loss drives early stopping instead. On return the model
/// holds the parameters of the best monitored epoch and is in inference mode.
pub fn train(
    mut model: SurrogateModel,
    data: &[WindowSample],
    config: &TrainConfig,
) -> Result<(SurrogateModel, TrainingHistory), TrainError> {
    config.validate()?;
    if data.is_empty() {
        return Err(TrainError::Argument("no training samples".into()));
    }
    if model.kind() == ModelKind::Persistence {
        return Err(TrainError::Argument("persistence has no trainable parameters".into()));
    }
    let n_val = (data.len() as f64 * config.validation_fraction).floor() as usize;
    let (fit, val) = data.split_at(data.len() - n_val);
    if fit.is_empty() {
        return Err(TrainError::Argument("validation split leaves no training samples".into()));
    }
    let inputs = model.encode_inputs(fit)?;
    let targets = model.encode_targets(fit)?;

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.seed ^ DROPOUT_STREAM);
    model.set_mode(Mode::Train);
    let mut adam = {
        let params = model.params();
        Adam {
            m: params.iter().map(|p| vec![0.0; p.value().len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.value().len()]).collect(),
            step: 0,
        }
    };
    let mut order: Vec<usize> = (0..fit.len()).collect();
    let mut history = TrainingHistory::default();
    let mut best = (f64::INFINITY, model.params().values());
    let mut since_best = 0;

    for epoch in 1..=config.max_epochs {
        let started = Instant::now();
        order.shuffle(&mut shuffle_rng);
        let (mut sse_sum, mut grad_max, mut applied_max) = (0.0, 0.0f64, 0.0f64);
        for (b, rows) in order.chunks(config.batch_size).enumerate() {
            let mut tape = Tape::new();
            let x = tape.input(gather_rows(&inputs, rows));
            let y = tape.input(gather_rows(&targets, rows));
            let pred = model.forward(&mut tape, x, Some(&mut dropout_rng))?;
            let loss = mse_loss(&mut tape, pred, y)?;
            let value = tape.value(loss).item();
            if !value.is_finite() {
                model.set_mode(Mode::Inference);
                return Err(TrainError::Divergence {
                    epoch,
                    batch: b + 1,
                    loss: value,
                });
            }
            sse_sum += value * rows.len() as f64;
            let params = model.params_mut()?;
            params.zero_grad();
            tape.backward(loss, &Tensor::scalar(1.0), params)?;
            let norm = params.grad_norm();
            grad_max = grad_max.max(norm);
            let scale = match config.clip_norm {
                Some(c) if norm > c => c / norm,
                _ => 1.0,
            };
            applied_max = applied_max.max(norm * scale);
            adam.step += 1;
            let bc1 = 1.0 - config.beta1.powi(adam.step);
            let bc2 = 1.0 - config.beta2.powi(adam.step);
            for ((p, m), v) in params.iter_mut().zip(&mut adam.m).zip(&mut adam.v) {
                let g: Vec<f64> = p.gradient().data().iter().map(|g| g * scale).collect();
                for (((w, g), m), v) in p.value_mut().data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                    *m = config.beta1 * *m + (1.0 - config.beta1) * g;
                    *v = config.beta2 * *v + (1.0 - config.beta2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *w -= config.learning_rate * m_hat / (v_hat.sqrt() + config.epsilon);
                }
            }
        }
        let train_loss = sse_sum / fit.len() as f64;
        let val_loss = if val.is_empty() {
            None
        } else {
            Some(evaluate_loss(&model, val)?)
        };
        let monitored = val_loss.unwrap_or(train_loss);
        if !monitored.is_finite() {
            model.set_mode(Mode::Inference);
            return Err(TrainError::Divergence {
                epoch,
                batch: 0,
                loss: monitored,
            });
        }
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            seconds: started.elapsed().as_secs_f64(),
            max_grad_norm: grad_max,
            max_applied_grad_norm: applied_max,
        });
        log::debug!("epoch {epoch}: train {train_loss:.6e} val {val_loss:?}");
        if monitored < best.0 {
            best = (monitored, model.params().values());
            history.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                history.stopped_early = true;
                break;
            }
        }
    }
    model.params_mut()?.restore(&best.1)?;
    model.params_mut()?.zero_grad();
    model.set_mode(Mode::Inference);
    Ok((model, history))
}
