//! Model files.
//!
//! A model is one JSON document:
//!
//! ```text
//! {"version":1,
//!  "spec":{"p":8,"q":32,"k":4,"hidden":[64],"seed":1},
//!  "params":{"extractor.0.weight":[...], ..., "classifier.bias":[...]},
//!  "labels":["a","b",...]}            <- optional
//! ```
//!
//! Parameters appear in declaration order as flat row-major arrays, each
//! value written with 17 significant digits so loading reproduces the saved
//! bits exactly.

use std::fs;
use std::path::Path;

use serde_json::{Map, Value};

use super::{Layer, Model, ModelError, NetworkSpec};
use crate::json;
use crate::tensor::Tensor;

pub const FORMAT_VERSION: u64 = 1;

impl Model {
    pub fn to_json(&self) -> String {
        let mut params = Map::new();
        for (name, tensor) in self.param_names().into_iter().zip(self.params()) {
            params.insert(name, Value::from(tensor.data().to_vec()));
        }
        let mut doc = Map::new();
        doc.insert("version".into(), Value::from(FORMAT_VERSION));
        doc.insert(
            "spec".into(),
            serde_json::to_value(&self.spec).expect("spec serializes"),
        );
        doc.insert("params".into(), Value::Object(params));
        if let Some(labels) = &self.labels {
            doc.insert("labels".into(), Value::from(labels.clone()));
        }
        json::to_exact_string(&Value::Object(doc)).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Model, ModelError> {
        let doc: Value = serde_json::from_str(text).map_err(|e| format_err("<document>", e))?;
        let doc = doc
            .as_object()
            .ok_or_else(|| format_err("<document>", "not a JSON object"))?;

        let version = doc
            .get("version")
            .and_then(Value::as_u64)
            .ok_or_else(|| format_err("version", "missing or not an integer"))?;
        if version != FORMAT_VERSION {
            return Err(format_err(
                "version",
                format!("unsupported version {version}, expected {FORMAT_VERSION}"),
            ));
        }

        let spec: NetworkSpec =
            serde_json::from_value(doc.get("spec").cloned().ok_or_else(|| format_err("spec", "missing"))?)
                .map_err(|e| format_err("spec", e))?;
        let layers = spec.extractor_layers()?;

        let params = doc
            .get("params")
            .and_then(Value::as_object)
            .ok_or_else(|| format_err("params", "missing or not an object"))?;
        let take = |name: String, shape: Vec<usize>| -> Result<Tensor, ModelError> {
            let values = params
                .get(&name)
                .and_then(Value::as_array)
                .ok_or_else(|| format_err(&name, "missing or not an array"))?;
            let data = values
                .iter()
                .map(|v| v.as_f64().ok_or_else(|| format_err(&name, "non-numeric value")))
                .collect::<Result<Vec<_>, _>>()?;
            Tensor::new(shape, data).map_err(|e| format_err(&name, e))
        };

        let mut extractor = Vec::with_capacity(layers.len());
        for (i, kind) in layers.into_iter().enumerate() {
            let weight = take(format!("extractor.{i}.weight"), kind.weight_shape())?;
            let bias = take(format!("extractor.{i}.bias"), vec![kind.bias_len()])?;
            extractor.push(Layer { kind, weight, bias });
        }
        let classifier_weight = take("classifier.weight".into(), vec![spec.num_classes, spec.feature_dim])?;
        let classifier_bias = take("classifier.bias".into(), vec![spec.num_classes])?;

        let expected = 2 * extractor.len() + 2;
        if params.len() != expected {
            let known: Vec<String> = (0..extractor.len())
                .flat_map(|i| [format!("extractor.{i}.weight"), format!("extractor.{i}.bias")])
                .chain(["classifier.weight".into(), "classifier.bias".into()])
                .collect();
            let extra = params.keys().find(|k| !known.contains(k)).cloned().unwrap_or_default();
            return Err(format_err(&extra, "unexpected parameter"));
        }

        let labels = match doc.get("labels") {
            None => None,
            Some(v) => {
                let labels: Vec<String> = serde_json::from_value(v.clone()).map_err(|e| format_err("labels", e))?;
                if labels.len() != spec.num_classes {
                    return Err(format_err(
                        "labels",
                        format!("{} names for {} classes", labels.len(), spec.num_classes),
                    ));
                }
                Some(labels)
            }
        };

        Ok(Model::from_parts(
            spec,
            extractor,
            classifier_weight,
            classifier_bias,
            labels,
        ))
    }

    /// SHA-256 of the serialized model.
    pub fn content_hash(&self) -> String {
        json::sha256_hex(self.to_json().as_bytes())
    }
}

pub fn save_model(model: &Model, path: impl AsRef<Path>) -> Result<(), ModelError> {
    let path = path.as_ref();
    fs::write(path, model.to_json()).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model, ModelError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Model::from_json(&text)
}

fn format_err(field: &str, message: impl ToString) -> ModelError {
    ModelError::Format {
        field: field.to_string(),
        message: message.to_string(),
    }
}
