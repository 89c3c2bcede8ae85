//! Minibatch SGD with a two-phase learning rate.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::LabeledDataset;
use crate::network::{Model, ModelError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("training diverged at epoch {epoch}, batch {batch}: {reason} (learning rate {lr} too high?)")]
    Diverged {
        epoch: usize,
        batch: usize,
        lr: f64,
        reason: String,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Learning rate for epochs `0..phase_split`.
    pub lr_phase1: f64,
    /// Learning rate from epoch `phase_split` on.
    pub lr_phase2: f64,
    pub phase_split: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            lr_phase1: 0.1,
            lr_phase2: 0.05,
            phase_split: 50,
            batch_size: 32,
            seed: 0,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |m: String| Err(TrainError::Config(m));
        if !(self.lr_phase1 > 0.0 && self.lr_phase2 > 0.0) {
            return fail("learning rates must be positive".into());
        }
        if self.phase_split > self.epochs {
            return fail(format!(
                "phase split {} beyond {} epochs",
                self.phase_split, self.epochs
            ));
        }
        if self.batch_size == 0 {
            return fail("batch size must be at least 1".into());
        }
        Ok(())
    }

    pub fn learning_rate(&self, epoch: usize) -> f64 {
        if epoch < self.phase_split {
            self.lr_phase1
        } else {
            self.lr_phase2
        }
    }
}

/// Mean training loss and training accuracy of every epoch, measured on the
/// minibatches as they were visited.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub loss: Vec<f64>,
    pub accuracy: Vec<f64>,
}

impl TrainHistory {
    pub fn final_accuracy(&self) -> Option<f64> {
        self.accuracy.last().copied()
    }

    /// `epoch,loss,train_acc` rows with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss,train_acc\n");
        for (e, (l, a)) in self.loss.iter().zip(&self.accuracy).enumerate() {
            out.push_str(&format!("{},{l},{a}\n", e + 1));
        }
        out
    }
}

pub fn train(mut model: Model, ds: &LabeledDataset, cfg: &TrainConfig) -> Result<(Model, TrainHistory), TrainError> {
    cfg.validate()?;
    if ds.num_classes() != model.num_classes() {
        return Err(TrainError::Config(format!(
            "dataset has {} classes, model has {}",
            ds.num_classes(),
            model.num_classes()
        )));
    }
    if ds.dim() != model.input_dim() {
        return Err(TrainError::Config(format!(
            "dataset inputs have dimension {}, model expects {}",
            ds.dim(),
            model.input_dim()
        )));
    }
    if ds.is_empty() && cfg.epochs > 0 {
        return Err(TrainError::Config("empty training set".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..ds.len()).collect();
    let mut history = TrainHistory::default();
    for epoch in 0..cfg.epochs {
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }
        let lr = cfg.learning_rate(epoch);
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for (batch, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let diverged = |reason: String| TrainError::Diverged {
                epoch,
                batch,
                lr,
                reason,
            };
            let step = model
                .batch_gradients(chunk.iter().map(|&i| (ds.input(i), ds.label(i))))
                .map_err(|e| diverged(e.to_string()))?;
            if !step.loss_sum.is_finite() {
                return Err(diverged("non-finite loss".into()));
            }
            loss_sum += step.loss_sum;
            correct += step.correct;
            for (param, grad) in model.params_mut().into_iter().zip(&step.grads) {
                param.sub_scaled(grad, lr).map_err(|e| diverged(e.to_string()))?;
            }
        }
        history.loss.push(loss_sum / ds.len() as f64);
        history.accuracy.push(correct as f64 / ds.len() as f64);
    }
    Ok((model, history))
}

/// Fraction of examples whose arg-max prediction equals the label.
pub fn test_accuracy(model: &Model, ds: &LabeledDataset) -> Result<f64, TrainError> {
    if ds.is_empty() {
        return Err(TrainError::Config("cannot measure accuracy on an empty dataset".into()));
    }
    let mut correct = 0;
    for (x, label) in ds.iter() {
        if model.predict(x)? == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / ds.len() as f64)
}
