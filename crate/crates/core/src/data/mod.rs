//! Labeled datasets: synthetic blobs, CSV files, and stratified subsets.

mod blobs;
mod csv_io;

pub use blobs::{gen_blobs, BlobConfig};
pub use csv_io::{dataset_reads, load_csv, write_csv, CsvOptions, LabelPolicy};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: u64, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// `n` examples of dimension `p` with labels in `0..k`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    dim: usize,
    num_classes: usize,
    inputs: Vec<f64>,
    labels: Vec<usize>,
    label_names: Option<Vec<String>>,
}

impl LabeledDataset {
    pub fn new(dim: usize, num_classes: usize, inputs: Vec<f64>, labels: Vec<usize>) -> Result<Self, DataError> {
        if dim == 0 {
            return Err(DataError::Config("input dimension must be at least 1".into()));
        }
        if inputs.len() != dim * labels.len() {
            return Err(DataError::Config(format!(
                "{} values do not form {} rows of dimension {dim}",
                inputs.len(),
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(DataError::Config(format!("label {bad} outside 0..{num_classes}")));
        }
        if inputs.iter().any(|v| !v.is_finite()) {
            return Err(DataError::Config("inputs must be finite".into()));
        }
        Ok(LabeledDataset {
            dim,
            num_classes,
            inputs,
            labels,
            label_names: None,
        })
    }

    pub fn with_label_names(mut self, names: Vec<String>) -> Result<Self, DataError> {
        if names.len() != self.num_classes {
            return Err(DataError::Config(format!(
                "{} label names for {} classes",
                names.len(),
                self.num_classes
            )));
        }
        self.label_names = Some(names);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Original names of the classes `0..k`, when the labels were remapped.
    pub fn label_names(&self) -> Option<&[String]> {
        self.label_names.as_deref()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], usize)> + '_ {
        self.inputs.chunks_exact(self.dim).zip(self.labels.iter().copied())
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Rows `indices`, in the given order.
    pub fn select(&self, indices: &[usize]) -> LabeledDataset {
        let mut inputs = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            inputs.extend_from_slice(self.input(i));
        }
        LabeledDataset {
            dim: self.dim,
            num_classes: self.num_classes,
            inputs,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            label_names: self.label_names.clone(),
        }
    }

    fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut by_class = vec![Vec::new(); self.num_classes];
        for (i, &l) in self.labels.iter().enumerate() {
            by_class[l].push(i);
        }
        by_class
    }
}

/// `round(fraction * n)` with halves rounded up.
fn stratum_count(fraction: f64, n: usize) -> usize {
    (fraction * n as f64 + 0.5).floor() as usize
}

/// Keeps `round(fraction * n_l)` examples of every class `l`, drawn
/// uniformly without replacement. Kept rows stay in their original order.
pub fn partition_fraction(ds: &LabeledDataset, fraction: f64, seed: u64) -> Result<LabeledDataset, DataError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(DataError::Config(format!(
            "fraction must lie in (0, 1], got {fraction}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = Vec::new();
    for (class, members) in ds.indices_by_class().into_iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        let count = stratum_count(fraction, members.len()).min(members.len());
        if count == 0 {
            return Err(DataError::Config(format!(
                "fraction {fraction} leaves class {class} ({} examples) empty",
                members.len()
            )));
        }
        keep.extend(sample(&mut rng, members.len(), count).into_iter().map(|j| members[j]));
    }
    keep.sort_unstable();
    Ok(ds.select(&keep))
}

/// Stratified split into disjoint `(train, test)` sets holding
/// `round(test_fraction * n_l)` test examples of each class.
pub fn split_train_test(
    ds: &LabeledDataset,
    test_fraction: f64,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset), DataError> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(DataError::Config(format!(
            "test fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut in_test = vec![false; ds.len()];
    for (class, members) in ds.indices_by_class().into_iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        let count = stratum_count(test_fraction, members.len());
        if count == 0 || count == members.len() {
            return Err(DataError::Config(format!(
                "test fraction {test_fraction} leaves class {class} ({} examples) without a train or test example",
                members.len()
            )));
        }
        for j in sample(&mut rng, members.len(), count) {
            in_test[members[j]] = true;
        }
    }
    let (test, train): (Vec<usize>, Vec<usize>) = (0..ds.len()).partition(|&i| in_test[i]);
    Ok((ds.select(&train), ds.select(&test)))
}
