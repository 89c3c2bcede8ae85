//! Dataless evaluation of trained one-hot neural classifiers.
//!
//! Given only a model, `protoscope` scores
//!
//! * the classifier layer, by how close to orthogonal its class weight
//!   vectors are ([`metrics::classifier_orthogonality`]), and
//! * the feature extractor, by synthesizing class prototypes from the model
//!   itself ([`proto`]) and measuring how tightly each class's prototype
//!   features cluster and how far apart the classes sit
//!   ([`metrics::evaluate_dataless`]). Those two statistics give an upper
//!   and a lower estimate of test accuracy.
//!
//! [`tensor`] provides the reverse-mode differentiation used both to train
//! models ([`trainer`]) and to differentiate a loss with respect to the
//! model input. [`data`] supplies synthetic and CSV datasets for training
//! and for checking the estimates against real held-out accuracy.
//!
//! ```
//! use protoscope::data::{gen_blobs, BlobConfig};
//! use protoscope::network::{Model, NetworkSpec};
//! use protoscope::trainer::{train, TrainConfig};
//! use protoscope::proto::{generate_prototypes, ProtoConfig};
//! use protoscope::metrics::evaluate_dataless;
//!
//! let data = gen_blobs(&BlobConfig { k: 3, p: 4, per_class: 40, ..Default::default() })?;
//! let model = Model::build(NetworkSpec::dense(4, 16, 3, &[16], 7))?;
//! let cfg = TrainConfig { epochs: 20, phase_split: 10, ..Default::default() };
//! let (model, _history) = train(model, &data, &cfg)?;
//!
//! let protos = generate_prototypes(&model, &ProtoConfig::default())?;
//! let report = evaluate_dataless(&model, &protos)?;
//! assert!(report.lower_bound <= 1.0 && report.upper_bound <= 1.0);
//! # Ok::<(), Box<dyn std::error::Error>>(())
//! ```

pub mod data;
pub mod gradcheck;
pub mod json;
pub mod metrics;
pub mod network;
pub mod proto;
pub mod tensor;
pub mod trainer;
