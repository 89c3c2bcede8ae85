//! Prototype synthesis: inputs generated from a trained model alone.
//!
//! A prototype for class `l` is found by descending the cross-entropy
//! `-ln f_l(m)` with respect to the input `m`, using unit-length steps
//! scaled by `eta`:
//!
//! ```text
//! m <- m - eta * grad / |grad|
//! ```
//!
//! Seed prototypes start from random vectors, one per class. Core prototypes
//! start from the seed of every *other* class `j` and are driven into class
//! `l`, giving `k - 1` cores per class. Each run stops once the loss is at
//! most `delta_loss`, i.e. once `f_l(m) >= exp(-delta_loss)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::json;
use crate::network::{Model, ModelError};

/// Gradient norms below this stop a run instead of being divided by.
pub const STALL_NORM: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ProtoError {
    #[error("invalid prototype configuration: {0}")]
    Config(String),
    #[error("gradient vanished (norm {norm:e}) at loss {loss}")]
    Stalled { loss: f64, norm: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum InitDistribution {
    #[default]
    StandardNormal,
    Uniform01,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtoConfig {
    pub delta_loss: f64,
    pub eta: f64,
    pub max_iters: usize,
    pub init: InitDistribution,
    pub seed: u64,
}

impl Default for ProtoConfig {
    fn default() -> Self {
        ProtoConfig {
            delta_loss: 0.01,
            eta: 0.05,
            max_iters: 2000,
            init: InitDistribution::StandardNormal,
            seed: 0,
        }
    }
}

impl ProtoConfig {
    pub fn validate(&self) -> Result<(), ProtoError> {
        let positive = |x: f64| x > 0.0;
        if !positive(self.delta_loss) || !positive(self.eta) || self.max_iters == 0 {
            return Err(ProtoError::Config(format!(
                "need delta_loss > 0, eta > 0 and max_iters >= 1 (got {}, {}, {})",
                self.delta_loss, self.eta, self.max_iters
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prototype {
    pub target: usize,
    /// Class whose seed this core prototype started from; `None` for seeds.
    pub origin: Option<usize>,
    pub converged: bool,
    pub final_loss: f64,
    pub iterations: usize,
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtoMetadata {
    pub config: ProtoConfig,
    pub model_hash: String,
    pub num_classes: usize,
    pub input_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeSet {
    pub metadata: ProtoMetadata,
    /// One per class, in class order.
    pub seeds: Vec<Prototype>,
    /// `k - 1` per target class, ordered by target then origin.
    pub cores: Vec<Prototype>,
}

impl PrototypeSet {
    /// The seed of class `l` followed by the cores targeting `l`.
    pub fn class_members(&self, class: usize) -> impl Iterator<Item = &Prototype> {
        self.seeds.iter().chain(&self.cores).filter(move |p| p.target == class)
    }

    pub fn all(&self) -> impl Iterator<Item = &Prototype> {
        self.seeds.iter().chain(&self.cores)
    }

    pub fn unconverged(&self) -> usize {
        self.all().filter(|p| !p.converged).count()
    }

    pub fn to_json(&self) -> String {
        json::to_exact_string(self).expect("prototype set serializes")
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }
}

/// Result of a single normalized descent step.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub next: Vec<f64>,
    /// Loss at the input *before* the step.
    pub loss: f64,
}

/// One update `m - eta * grad / |grad|` towards class `target`.
pub fn prototype_step(model: &Model, m: &[f64], target: usize, eta: f64) -> Result<Step, ProtoError> {
    let (loss, grad) = model.loss_and_input_grad(m, target)?;
    Ok(Step {
        next: normalized_step(m, &grad, eta, loss)?,
        loss,
    })
}

fn normalized_step(m: &[f64], grad: &[f64], eta: f64, loss: f64) -> Result<Vec<f64>, ProtoError> {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm.is_nan() || norm < STALL_NORM {
        return Err(ProtoError::Stalled { loss, norm });
    }
    Ok(m.iter().zip(grad).map(|(x, g)| x - eta * g / norm).collect())
}

/// Descends from `start` until the loss is at most `delta_loss`, the
/// gradient stalls, or `max_iters` steps have been taken.
fn descend(
    model: &Model,
    start: Vec<f64>,
    target: usize,
    origin: Option<usize>,
    cfg: &ProtoConfig,
) -> Result<Prototype, ProtoError> {
    let mut m = start;
    let mut iterations = 0;
    loop {
        let (loss, grad) = model.loss_and_input_grad(&m, target)?;
        let done = |m: Vec<f64>, converged| Prototype {
            target,
            origin,
            converged,
            final_loss: loss,
            iterations,
            vector: m,
        };
        if loss <= cfg.delta_loss {
            return Ok(done(m, true));
        }
        if iterations >= cfg.max_iters {
            return Ok(done(m, false));
        }
        match normalized_step(&m, &grad, cfg.eta, loss) {
            Ok(next) => m = next,
            Err(ProtoError::Stalled { .. }) => return Ok(done(m, false)),
            Err(e) => return Err(e),
        }
        iterations += 1;
    }
}

/// Starting point of the seed for `class`; each class has its own ChaCha8
/// stream so serial and parallel generation agree.
fn initial_vector(cfg: &ProtoConfig, class: usize, dim: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(class as u64);
    match cfg.init {
        InitDistribution::StandardNormal => (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect(),
        InitDistribution::Uniform01 => {
            let u = Uniform::new(0.0, 1.0).expect("valid range");
            (0..dim).map(|_| u.sample(&mut rng)).collect()
        }
    }
}

pub fn generate_seed_prototypes(model: &Model, cfg: &ProtoConfig) -> Result<Vec<Prototype>, ProtoError> {
    cfg.validate()?;
    (0..model.num_classes())
        .into_par_iter()
        .map(|l| descend(model, initial_vector(cfg, l, model.input_dim()), l, None, cfg))
        .collect()
}

pub fn generate_core_prototypes(
    model: &Model,
    seeds: &[Prototype],
    cfg: &ProtoConfig,
) -> Result<Vec<Prototype>, ProtoError> {
    cfg.validate()?;
    let k = model.num_classes();
    let mut by_class: Vec<Option<&Prototype>> = vec![None; k];
    for s in seeds {
        if s.target >= k || by_class[s.target].replace(s).is_some() {
            return Err(ProtoError::Config(format!(
                "seed set has a duplicate or out-of-range class {}",
                s.target
            )));
        }
    }
    let by_class: Vec<&Prototype> = by_class
        .into_iter()
        .enumerate()
        .map(|(l, s)| s.ok_or_else(|| ProtoError::Config(format!("no seed prototype for class {l}"))))
        .collect::<Result<_, _>>()?;

    let jobs: Vec<(usize, usize)> = (0..k)
        .flat_map(|l| (0..k).filter(move |&j| j != l).map(move |j| (l, j)))
        .collect();
    jobs.into_par_iter()
        .map(|(l, j)| descend(model, by_class[j].vector.clone(), l, Some(j), cfg))
        .collect()
}

/// Seeds then cores, packaged with the configuration and model hash.
pub fn generate_prototypes(model: &Model, cfg: &ProtoConfig) -> Result<PrototypeSet, ProtoError> {
    let seeds = generate_seed_prototypes(model, cfg)?;
    let cores = generate_core_prototypes(model, &seeds, cfg)?;
    Ok(PrototypeSet {
        metadata: ProtoMetadata {
            config: cfg.clone(),
            model_hash: model.content_hash(),
            num_classes: model.num_classes(),
            input_dim: model.input_dim(),
        },
        seeds,
        cores,
    })
}
