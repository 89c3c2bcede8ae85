//! Finite-difference checks of the tape's gradients.
//!
//! The numeric side evaluates the loss through the plain forward kernels
//! ([`Model::logits`]), never through a tape, so the two paths share no
//! differentiation code.

use crate::network::ResolvedLayer;
use crate::network::{Model, ModelError};
use crate::tensor::kernels::{affine, conv2d, log_sum_exp};
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-5;

/// Errors are measured relative to `max(|a|, |b|, ERROR_FLOOR)`; gradients
/// below the floor are compared absolutely.
pub const ERROR_FLOOR: f64 = 1e-7;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(ERROR_FLOOR)
}

/// `(f(x + h e_i) - f(x - h e_i)) / 2h` for every coordinate `i`.
pub fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Cross-entropy of `x` against `target`, evaluated without a tape.
pub fn plain_loss(model: &Model, x: &[f64], target: usize) -> Result<f64, ModelError> {
    let z = model.logits(x)?;
    Ok(log_sum_exp(&z) - z[target])
}

/// Smallest absolute pre-activation of any ReLU unit on input `x`. A
/// finite-difference probe of size `h` is kink-free when this comfortably
/// exceeds the change `h` can cause.
pub fn kink_margin(model: &Model, x: &[f64]) -> Result<f64, ModelError> {
    let mut h = Tensor::vector(x.to_vec())?.into_data();
    if h.len() != model.input_dim() {
        return Err(ModelError::InputShape {
            expected: model.input_dim(),
            got: h.len(),
        });
    }
    let mut margin = f64::INFINITY;
    for layer in model.extractor() {
        let (w, b) = (layer.weight.data(), layer.bias.data());
        let z = match layer.kind {
            ResolvedLayer::Dense { inputs, outputs } => affine(&h, w, b, outputs, inputs),
            ResolvedLayer::Conv(geom) => conv2d(&h, w, b, &geom),
        };
        margin = z.iter().fold(margin, |m, v| m.min(v.abs()));
        h = z.into_iter().map(|v| v.max(0.0)).collect();
    }
    Ok(margin)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_param_error: f64,
    pub max_input_error: f64,
    /// Name of the entry with the largest error, e.g. `classifier.weight[3]`
    /// or `input[0]`.
    pub worst: String,
    pub entries: usize,
}

impl GradCheck {
    pub fn max_error(&self) -> f64 {
        self.max_param_error.max(self.max_input_error)
    }
}

/// Compares every parameter gradient and the input gradient of the loss at
/// `(x, target)` with central differences of step `h`.
pub fn check_model(model: &Model, x: &[f64], target: usize, h: f64) -> Result<GradCheck, ModelError> {
    let analytic = model.batch_gradients([(x, target)])?.grads;
    let (_, input_grad) = model.loss_and_input_grad(x, target)?;

    let mut report = GradCheck {
        max_param_error: 0.0,
        max_input_error: 0.0,
        worst: String::new(),
        entries: 0,
    };
    let mut worst = -1.0;
    let mut note = |name: String, err: f64, slot: &mut f64| {
        *slot = slot.max(err);
        if err > worst {
            worst = err;
            return Some(name);
        }
        None
    };

    let names = model.param_names();
    for (pi, grad) in analytic.iter().enumerate() {
        let base = model.params()[pi].clone();
        let loss_at = |values: &[f64]| {
            let mut probe = model.clone();
            *probe.params_mut()[pi] = Tensor::new(base.shape().to_vec(), values.to_vec()).expect("same shape");
            plain_loss(&probe, x, target).expect("valid input")
        };
        let numeric = central_difference(loss_at, base.data(), h);
        for (i, (&a, n)) in grad.data().iter().zip(numeric).enumerate() {
            if let Some(name) = note(
                format!("{}[{i}]", names[pi]),
                relative_error(a, n),
                &mut report.max_param_error,
            ) {
                report.worst = name;
            }
            report.entries += 1;
        }
    }

    let numeric = central_difference(|v| plain_loss(model, v, target).expect("valid input"), x, h);
    for (i, (&a, n)) in input_grad.iter().zip(numeric).enumerate() {
        if let Some(name) = note(format!("input[{i}]"), relative_error(a, n), &mut report.max_input_error) {
            report.worst = name;
        }
        report.entries += 1;
    }
    Ok(report)
}
