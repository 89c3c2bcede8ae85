//! The classifier `f(x) = softmax(W g(x) + b)` and its feature tap `g`.

mod io;
mod spec;

pub use io::{load_model, save_model, FORMAT_VERSION};
pub use spec::{parse_hidden, ConvSpec, LayerSpec, NetworkSpec, ResolvedLayer};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::tensor::{kernels, Tape, Tensor, TensorError, Var};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("input has {got} values, model expects {expected}")]
    InputShape { expected: usize, got: usize },
    #[error("class {target} out of range for {classes} classes")]
    ClassOutOfRange { target: usize, classes: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("model file: field '{field}': {message}")]
    Format { field: String, message: String },
    #[error("model file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// One extractor stage: an affine map or convolution, then ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub kind: ResolvedLayer,
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    spec: NetworkSpec,
    extractor: Vec<Layer>,
    classifier_weight: Tensor,
    classifier_bias: Tensor,
    labels: Option<Vec<String>>,
}

/// Summed loss and parameter gradients over a batch of examples.
#[derive(Debug, Clone)]
pub struct BatchGradients {
    pub loss_sum: f64,
    pub correct: usize,
    /// Gradient of the mean loss, one tensor per parameter in
    /// [`Model::param_names`] order.
    pub grads: Vec<Tensor>,
}

impl Model {
    /// Builds a model with He-normal weights (`std = sqrt(2 / fan_in)`) and
    /// zero biases, drawn from a ChaCha8 stream seeded with `spec.seed`.
    pub fn build(spec: NetworkSpec) -> Result<Model, ModelError> {
        let layers = spec.extractor_layers()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut he = |shape: Vec<usize>, fan_in: usize| -> Result<Tensor, ModelError> {
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
            let n = shape.iter().product();
            let data = (0..n).map(|_| normal.sample(&mut rng)).collect();
            Ok(Tensor::new(shape, data)?)
        };
        let mut extractor = Vec::with_capacity(layers.len());
        for kind in layers {
            extractor.push(Layer {
                weight: he(kind.weight_shape(), kind.fan_in())?,
                bias: Tensor::zeros(vec![kind.bias_len()]),
                kind,
            });
        }
        let classifier_weight = he(vec![spec.num_classes, spec.feature_dim], spec.feature_dim)?;
        let classifier_bias = Tensor::zeros(vec![spec.num_classes]);
        Ok(Model {
            spec,
            extractor,
            classifier_weight,
            classifier_bias,
            labels: None,
        })
    }

    pub(crate) fn from_parts(
        spec: NetworkSpec,
        extractor: Vec<Layer>,
        classifier_weight: Tensor,
        classifier_bias: Tensor,
        labels: Option<Vec<String>>,
    ) -> Model {
        Model {
            spec,
            extractor,
            classifier_weight,
            classifier_bias,
            labels,
        }
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn num_classes(&self) -> usize {
        self.spec.num_classes
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim
    }

    pub fn feature_dim(&self) -> usize {
        self.spec.feature_dim
    }

    pub fn extractor(&self) -> &[Layer] {
        &self.extractor
    }

    /// The `k x q` classifier weight matrix `W`.
    pub fn classifier_weights(&self) -> &Tensor {
        &self.classifier_weight
    }

    pub fn classifier_bias(&self) -> &Tensor {
        &self.classifier_bias
    }

    /// Original class names, when the model was trained on relabeled data.
    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    pub fn set_labels(&mut self, labels: Option<Vec<String>>) {
        self.labels = labels;
    }

    /// Parameter names in declaration order: extractor stages first, then
    /// the classifier.
    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(2 * self.extractor.len() + 2);
        for i in 0..self.extractor.len() {
            names.push(format!("extractor.{i}.weight"));
            names.push(format!("extractor.{i}.bias"));
        }
        names.push("classifier.weight".into());
        names.push("classifier.bias".into());
        names
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut out: Vec<&Tensor> = self.extractor.iter().flat_map(|l| [&l.weight, &l.bias]).collect();
        out.push(&self.classifier_weight);
        out.push(&self.classifier_bias);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = self
            .extractor
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect();
        out.push(&mut self.classifier_weight);
        out.push(&mut self.classifier_bias);
        out
    }

    /// The feature vector `v = g(x)`; every component is `>= 0`.
    pub fn extract_features(&self, x: &[f64]) -> Result<Vec<f64>, ModelError> {
        self.check_input(x)?;
        let mut h = x.to_vec();
        for layer in &self.extractor {
            let pre = match &layer.kind {
                ResolvedLayer::Dense { inputs, outputs } => {
                    kernels::affine(&h, layer.weight.data(), layer.bias.data(), *outputs, *inputs)
                }
                ResolvedLayer::Conv(geom) => kernels::conv2d(&h, layer.weight.data(), layer.bias.data(), geom),
            };
            h = kernels::relu(&pre);
        }
        crate::tensor::check_finite("extract_features", &h)?;
        Ok(h)
    }

    /// Classifier logits `W v + b` for a feature vector `v`.
    pub fn classify_features(&self, features: &[f64]) -> Result<Vec<f64>, ModelError> {
        if features.len() != self.spec.feature_dim {
            return Err(ModelError::InputShape {
                expected: self.spec.feature_dim,
                got: features.len(),
            });
        }
        let z = kernels::affine(
            features,
            self.classifier_weight.data(),
            self.classifier_bias.data(),
            self.spec.num_classes,
            self.spec.feature_dim,
        );
        crate::tensor::check_finite("classify_features", &z)?;
        Ok(z)
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>, ModelError> {
        self.classify_features(&self.extract_features(x)?)
    }

    /// Class probabilities `softmax(W g(x) + b)`.
    pub fn forward_full(&self, x: &[f64]) -> Result<Vec<f64>, ModelError> {
        Ok(kernels::softmax(&self.logits(x)?))
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize, ModelError> {
        Ok(kernels::argmax(&self.logits(x)?))
    }

    /// Pushes every parameter onto `tape` in [`param_names`](Self::param_names) order.
    pub fn register_params(&self, tape: &mut Tape, requires_grad: bool) -> Vec<Var> {
        self.params()
            .into_iter()
            .map(|p| tape.leaf(p.clone(), requires_grad))
            .collect()
    }

    /// Records the forward pass of `x` on `tape` using parameter handles
    /// from [`register_params`](Self::register_params). Returns the feature
    /// and logit nodes.
    pub fn record_forward(&self, tape: &mut Tape, x: Var, params: &[Var]) -> Result<(Var, Var), ModelError> {
        assert_eq!(params.len(), 2 * self.extractor.len() + 2, "parameter handle count");
        if tape.value(x).len() != self.spec.input_dim {
            return Err(ModelError::InputShape {
                expected: self.spec.input_dim,
                got: tape.value(x).len(),
            });
        }
        let mut h = x;
        for (layer, pair) in self.extractor.iter().zip(params.chunks_exact(2)) {
            let pre = match layer.kind {
                ResolvedLayer::Dense { .. } => tape.affine(h, pair[0], pair[1])?,
                ResolvedLayer::Conv(geom) => tape.conv2d(h, pair[0], pair[1], geom)?,
            };
            h = tape.relu(pre)?;
        }
        let n = params.len();
        let logits = tape.affine(h, params[n - 2], params[n - 1])?;
        Ok((h, logits))
    }

    /// Cross-entropy of `x` against the one-hot `target` and its gradient
    /// with respect to the input `x`.
    pub fn loss_and_input_grad(&self, x: &[f64], target: usize) -> Result<(f64, Vec<f64>), ModelError> {
        self.check_input(x)?;
        self.check_class(target)?;
        let mut tape = Tape::new();
        let params = self.register_params(&mut tape, false);
        let xv = tape.leaf(Tensor::vector(x.to_vec())?, true);
        let (_, logits) = self.record_forward(&mut tape, xv, &params)?;
        let loss = tape.softmax_cross_entropy(logits, target)?;
        tape.backward(loss)?;
        let value = tape.value(loss).item().expect("scalar loss");
        let grad = tape.grad(xv).expect("input reaches loss").data().to_vec();
        Ok((value, grad))
    }

    /// Mean cross-entropy over a batch and its parameter gradients.
    pub fn batch_gradients<'a, I>(&self, batch: I) -> Result<BatchGradients, ModelError>
    where
        I: IntoIterator<Item = (&'a [f64], usize)>,
    {
        let mut tape = Tape::new();
        let params = self.register_params(&mut tape, true);
        let mut losses = Vec::new();
        let mut correct = 0;
        for (x, label) in batch {
            self.check_input(x)?;
            self.check_class(label)?;
            let xv = tape.constant(Tensor::vector(x.to_vec())?);
            let (_, logits) = self.record_forward(&mut tape, xv, &params)?;
            if kernels::argmax(tape.value(logits).data()) == label {
                correct += 1;
            }
            losses.push(tape.softmax_cross_entropy(logits, label)?);
        }
        if losses.is_empty() {
            return Err(ModelError::InputShape {
                expected: self.spec.input_dim,
                got: 0,
            });
        }
        let total = tape.add_n(&losses)?;
        let mean = tape.scale(total, 1.0 / losses.len() as f64)?;
        tape.backward(mean)?;
        let grads = params
            .iter()
            .zip(self.params())
            .map(|(&v, p)| {
                tape.grad(v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(p.shape().to_vec()))
            })
            .collect();
        Ok(BatchGradients {
            loss_sum: tape.value(total).item().expect("scalar"),
            correct,
            grads,
        })
    }

    fn check_input(&self, x: &[f64]) -> Result<(), ModelError> {
        if x.len() != self.spec.input_dim {
            return Err(ModelError::InputShape {
                expected: self.spec.input_dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    fn check_class(&self, target: usize) -> Result<(), ModelError> {
        if target >= self.spec.num_classes {
            return Err(ModelError::ClassOutOfRange {
                target,
                classes: self.spec.num_classes,
            });
        }
        Ok(())
    }
}
