//! Classifier orthogonality, within-class similarity, between-class
//! separation, and the accuracy bracket derived from the last two.
//!
//! All similarities are cosines. For a model with ReLU features every cosine
//! lies in `[0, 1]`.
//!
//! * `h_w = 1 - mean_{i<j} cos(W_i, W_j)` over the rows of the classifier
//!   weight matrix. Near 1 means near-orthogonal class directions.
//! * `m_in` averages, over classes, the mean off-diagonal entry of the Gram
//!   matrix `G Gᵀ` of that class's unit feature vectors.
//! * `cs_bt` averages, over ordered class pairs `(l, l')`, the mean cosine
//!   between the (re-normalized) mean feature direction of `l` and each
//!   feature vector of `l'`; `m_bt = 1 - cs_bt`.
//! * upper bound `= m_in - 2 std_in`, lower bound `= 1 - (cs_bt + 2 std_bt)`,
//!   where each std is the sample standard deviation of the pooled
//!   individual cosines behind the corresponding mean.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::{Model, ModelError};
use crate::proto::PrototypeSet;
use crate::tensor::Tensor;

/// Norms below this make a cosine undefined.
pub const MIN_NORM: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("cosine similarity undefined: {0} has (near) zero norm")]
    ZeroNorm(String),
    #[error("vectors of length {0} and {1} cannot be compared")]
    LengthMismatch(usize, usize),
    #[error("need at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("classes {classes:?} have fewer than 2 usable feature vectors")]
    SparseClasses { classes: Vec<usize> },
    #[error("prototype set does not match the model: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `(a · b) / (|a| |b|)`.
pub fn cos_sim(a: &[f64], b: &[f64]) -> Result<f64, MetricError> {
    if a.len() != b.len() {
        return Err(MetricError::LengthMismatch(a.len(), b.len()));
    }
    let (na, nb) = (norm(a), norm(b));
    if na < MIN_NORM {
        return Err(MetricError::ZeroNorm("first vector".into()));
    }
    if nb < MIN_NORM {
        return Err(MetricError::ZeroNorm("second vector".into()));
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Mean of `xs` and its sample standard deviation (`n - 1` denominator;
/// zero for fewer than two values).
fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Orthogonality {
    pub h_w: f64,
    pub mean_cosine: f64,
    /// `acos(mean_cosine)` in degrees.
    pub mean_angle_deg: f64,
}

/// Pairwise orthogonality of the rows of a `k x q` weight matrix.
pub fn classifier_orthogonality(w: &Tensor) -> Result<Orthogonality, MetricError> {
    if w.shape().len() != 2 {
        return Err(MetricError::Mismatch(format!(
            "weight matrix has shape {:?}",
            w.shape()
        )));
    }
    let k = w.shape()[0];
    if k < 2 {
        return Err(MetricError::TooFewClasses(k));
    }
    if let Some(row) = (0..k).find(|&i| norm(w.row(i)) < MIN_NORM) {
        return Err(MetricError::ZeroNorm(format!("weight row {row}")));
    }
    let mut total = 0.0;
    for i in 1..k {
        for j in 0..i {
            total += cos_sim(w.row(i), w.row(j))?;
        }
    }
    let mean_cosine = total * 2.0 / (k * (k - 1)) as f64;
    Ok(Orthogonality {
        h_w: 1.0 - mean_cosine,
        mean_cosine,
        mean_angle_deg: mean_cosine.clamp(-1.0, 1.0).acos().to_degrees(),
    })
}

/// Unit-normalized feature vectors grouped by class.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGroup {
    dim: usize,
    classes: Vec<Vec<Vec<f64>>>,
    excluded_zero: usize,
}

impl FeatureGroup {
    /// Normalizes every vector; vectors with norm below [`MIN_NORM`] are
    /// dropped and counted.
    pub fn new(classes: Vec<Vec<Vec<f64>>>) -> Result<Self, MetricError> {
        let dim = classes.iter().flatten().map(Vec::len).next().unwrap_or(0);
        let mut excluded_zero = 0;
        let mut out = Vec::with_capacity(classes.len());
        for members in classes {
            let mut unit = Vec::with_capacity(members.len());
            for v in members {
                if v.len() != dim {
                    return Err(MetricError::LengthMismatch(dim, v.len()));
                }
                let n = norm(&v);
                if n < MIN_NORM {
                    excluded_zero += 1;
                } else {
                    unit.push(v.into_iter().map(|x| x / n).collect());
                }
            }
            out.push(unit);
        }
        Ok(FeatureGroup {
            dim,
            classes: out,
            excluded_zero,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Unit vectors of class `l` (the rows of its `G` matrix).
    pub fn class(&self, l: usize) -> &[Vec<f64>] {
        &self.classes[l]
    }

    pub fn counts(&self) -> Vec<usize> {
        self.classes.iter().map(Vec::len).collect()
    }

    pub fn excluded_zero(&self) -> usize {
        self.excluded_zero
    }

    /// Whether every component is nonnegative, as it is for ReLU features.
    pub fn is_nonnegative(&self) -> bool {
        self.classes.iter().flatten().flatten().all(|&x| x >= -1e-12)
    }

    fn check_populated(&self) -> Result<(), MetricError> {
        if self.classes.len() < 2 {
            return Err(MetricError::TooFewClasses(self.classes.len()));
        }
        let sparse: Vec<usize> = (0..self.classes.len()).filter(|&l| self.classes[l].len() < 2).collect();
        if !sparse.is_empty() {
            return Err(MetricError::SparseClasses { classes: sparse });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WithinClass {
    pub mean: f64,
    pub std: f64,
    pub per_class: Vec<f64>,
}

/// `G Gᵀ` for row vectors `rows`.
fn gram(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    rows.iter().map(|a| rows.iter().map(|b| dot(a, b)).collect()).collect()
}

pub fn within_class_similarity(fg: &FeatureGroup) -> Result<WithinClass, MetricError> {
    fg.check_populated()?;
    let mut pooled = Vec::new();
    let mut per_class = Vec::with_capacity(fg.num_classes());
    for members in &fg.classes {
        let g = gram(members);
        let upper: Vec<f64> = (0..g.len())
            .flat_map(|i| ((i + 1)..g.len()).map(move |j| (i, j)))
            .map(|(i, j)| g[i][j])
            .collect();
        per_class.push(upper.iter().sum::<f64>() / upper.len() as f64);
        pooled.extend(upper);
    }
    let mean = per_class.iter().sum::<f64>() / per_class.len() as f64;
    let (_, std) = mean_std(&pooled);
    Ok(WithinClass { mean, std, per_class })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetweenClass {
    pub cs_mean: f64,
    pub cs_std: f64,
    pub m_bt: f64,
}

pub fn between_class_separation(fg: &FeatureGroup) -> Result<BetweenClass, MetricError> {
    fg.check_populated()?;
    let k = fg.num_classes();
    let mut directions = Vec::with_capacity(k);
    for (l, members) in fg.classes.iter().enumerate() {
        let mut mean = vec![0.0; fg.dim];
        for v in members {
            mean.iter_mut().zip(v).for_each(|(m, x)| *m += x);
        }
        let n = norm(&mean);
        if n < MIN_NORM {
            return Err(MetricError::ZeroNorm(format!("mean feature vector of class {l}")));
        }
        directions.push(mean.into_iter().map(|x| x / n).collect::<Vec<f64>>());
    }

    let mut pooled = Vec::new();
    let mut pair_means = Vec::with_capacity(k * (k - 1));
    for (l, direction) in directions.iter().enumerate() {
        for (other, members) in fg.classes.iter().enumerate() {
            if other == l {
                continue;
            }
            let cosines: Vec<f64> = members.iter().map(|v| dot(v, direction)).collect();
            pair_means.push(cosines.iter().sum::<f64>() / cosines.len() as f64);
            pooled.extend(cosines);
        }
    }
    let cs_mean = pair_means.iter().sum::<f64>() / pair_means.len() as f64;
    let (_, cs_std) = mean_std(&pooled);
    Ok(BetweenClass {
        cs_mean,
        cs_std,
        m_bt: 1.0 - cs_mean,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracyBounds {
    /// `1 - (cs_mean + 2 cs_std)`, unclamped.
    pub lower: f64,
    /// `m_in - 2 std_in`, unclamped.
    pub upper: f64,
    pub lower_clamped: f64,
    pub upper_clamped: f64,
    /// Either raw bound fell outside `[0, 1]`.
    pub clamped: bool,
}

pub fn accuracy_bounds(within: &WithinClass, between: &BetweenClass) -> AccuracyBounds {
    bounds_from_stats(within.mean, within.std, between.cs_mean, between.cs_std)
}

/// The bracket from the four summary statistics directly.
pub fn bounds_from_stats(m_in: f64, in_std: f64, cs_bt: f64, bt_std: f64) -> AccuracyBounds {
    let upper = m_in - 2.0 * in_std;
    let lower = 1.0 - (cs_bt + 2.0 * bt_std);
    let (lower_clamped, upper_clamped) = (lower.clamp(0.0, 1.0), upper.clamp(0.0, 1.0));
    AccuracyBounds {
        lower,
        upper,
        lower_clamped,
        upper_clamped,
        clamped: lower_clamped != lower || upper_clamped != upper,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub h_w: f64,
    pub mean_weight_angle_deg: f64,
    pub m_in_mean: f64,
    pub m_in_std: f64,
    pub m_in_per_class: Vec<f64>,
    pub bt_cossim_mean: f64,
    pub bt_cossim_std: f64,
    pub cs_bt_plus_2std: f64,
    pub m_bt: f64,
    pub upper_bound: f64,
    pub lower_bound: f64,
    pub upper_bound_clamped: f64,
    pub lower_bound_clamped: f64,
    pub bounds_clamped: bool,
    pub vectors_per_class: Vec<usize>,
    pub excluded_zero_features: usize,
    pub excluded_unconverged: usize,
    /// Held-out accuracy, present only when a test set was supplied.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub accuracy: Option<f64>,
}

impl MetricReport {
    pub fn assemble(
        orthogonality: &Orthogonality,
        within: &WithinClass,
        between: &BetweenClass,
        fg: &FeatureGroup,
        excluded_unconverged: usize,
    ) -> MetricReport {
        let bounds = accuracy_bounds(within, between);
        MetricReport {
            h_w: orthogonality.h_w,
            mean_weight_angle_deg: orthogonality.mean_angle_deg,
            m_in_mean: within.mean,
            m_in_std: within.std,
            m_in_per_class: within.per_class.clone(),
            bt_cossim_mean: between.cs_mean,
            bt_cossim_std: between.cs_std,
            cs_bt_plus_2std: between.cs_mean + 2.0 * between.cs_std,
            m_bt: between.m_bt,
            upper_bound: bounds.upper,
            lower_bound: bounds.lower,
            upper_bound_clamped: bounds.upper_clamped,
            lower_bound_clamped: bounds.lower_clamped,
            bounds_clamped: bounds.clamped,
            vectors_per_class: fg.counts(),
            excluded_zero_features: fg.excluded_zero(),
            excluded_unconverged,
            accuracy: None,
        }
    }

    pub const CSV_HEADER: &'static str = "fraction,m_in,in_std,upper,cs_bt,bt_std,cs_bt_plus_2std,m_bt_lower,accuracy";

    /// One row in [`CSV_HEADER`](Self::CSV_HEADER) order; `fraction` and
    /// `accuracy` are left empty when unknown.
    pub fn csv_row(&self, fraction: Option<f64>) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{}",
            opt(fraction),
            self.m_in_mean,
            self.m_in_std,
            self.upper_bound,
            self.bt_cossim_mean,
            self.bt_cossim_std,
            self.cs_bt_plus_2std,
            self.lower_bound,
            opt(self.accuracy),
        )
    }
}

/// Feature vectors of the converged prototypes of every class: the class
/// seed and the cores targeting it. Returns the group and the number of
/// prototypes left out because they did not converge.
pub fn prototype_features(model: &Model, protos: &PrototypeSet) -> Result<(FeatureGroup, usize), MetricError> {
    let k = model.num_classes();
    if protos.seeds.len() != k || protos.cores.len() != k * (k - 1) {
        return Err(MetricError::Mismatch(format!(
            "expected {k} seeds and {} cores, found {} and {}",
            k * (k - 1),
            protos.seeds.len(),
            protos.cores.len()
        )));
    }
    let mut unconverged = 0;
    let mut classes = vec![Vec::new(); k];
    for p in protos.all() {
        if p.target >= k {
            return Err(MetricError::Mismatch(format!("prototype targets class {}", p.target)));
        }
        if p.converged {
            classes[p.target].push(model.extract_features(&p.vector)?);
        } else {
            unconverged += 1;
        }
    }
    Ok((FeatureGroup::new(classes)?, unconverged))
}

/// The complete dataless report for `model` from its prototypes.
pub fn evaluate_dataless(model: &Model, protos: &PrototypeSet) -> Result<MetricReport, MetricError> {
    let orthogonality = classifier_orthogonality(model.classifier_weights())?;
    let (fg, unconverged) = prototype_features(model, protos)?;
    let within = within_class_similarity(&fg)?;
    let between = between_class_separation(&fg)?;
    Ok(MetricReport::assemble(
        &orthogonality,
        &within,
        &between,
        &fg,
        unconverged,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fg(classes: &[&[&[f64]]]) -> FeatureGroup {
        FeatureGroup::new(classes.iter().map(|c| c.iter().map(|v| v.to_vec()).collect()).collect()).unwrap()
    }

    #[test]
    fn cosine_cases() {
        assert_eq!(cos_sim(&[2.0, 0.0], &[5.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cos_sim(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!((cos_sim(&[1.0, 1.0], &[1.0, 0.0]).unwrap() - 0.5f64.sqrt()).abs() < 1e-15);
        assert!(matches!(
            cos_sim(&[0.0, 0.0], &[1.0, 0.0]),
            Err(MetricError::ZeroNorm(_))
        ));
        assert!(cos_sim(&[1.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn orthogonality_cases() {
        let o = classifier_orthogonality(&Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap()).unwrap();
        assert_eq!((o.h_w, o.mean_angle_deg), (1.0, 90.0));
        let o = classifier_orthogonality(&Tensor::matrix(2, 2, vec![1.0, 0.0, 1.0, 0.0]).unwrap()).unwrap();
        assert_eq!((o.h_w, o.mean_angle_deg), (0.0, 0.0));
    }

    #[test]
    fn orthogonality_three_rows() {
        // Pairwise dot products of (1,0), (0,1), (1,1)/√2: 0, 1/√2, 1/√2.
        let r = 0.5f64.sqrt();
        let w = Tensor::matrix(3, 2, vec![1.0, 0.0, 0.0, 1.0, r, r]).unwrap();
        let o = classifier_orthogonality(&w).unwrap();
        let mean = (0.0 + r + r) / 3.0;
        assert!((o.mean_cosine - mean).abs() < 1e-15);
        assert!((o.h_w - 0.528_595).abs() < 1e-6);
        assert!((o.mean_angle_deg - 61.874).abs() < 1e-3);
    }

    #[test]
    fn zero_row_named() {
        let w = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        match classifier_orthogonality(&w) {
            Err(MetricError::ZeroNorm(what)) => assert!(what.contains("row 1")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn identical_vectors_are_perfectly_similar() {
        let g = fg(&[&[&[1.0, 2.0], &[2.0, 4.0], &[0.5, 1.0]], &[&[3.0, 0.0], &[1.0, 0.0]]]);
        let w = within_class_similarity(&g).unwrap();
        assert!((w.mean - 1.0).abs() < 1e-15);
        assert!(w.std.abs() < 1e-15);
    }

    #[test]
    fn two_class_hand_case() {
        let g = fg(&[&[&[1.0, 0.0], &[0.0, 1.0]], &[&[1.0, 1.0], &[2.0, 2.0]]]);
        let w = within_class_similarity(&g).unwrap();
        assert!(w.per_class[0].abs() < 1e-15);
        assert!((w.per_class[1] - 1.0).abs() < 1e-15);
        assert!((w.mean - 0.5).abs() < 1e-15);
    }

    #[test]
    fn sparse_class_named() {
        let g = fg(&[&[&[1.0, 0.0], &[0.0, 1.0]], &[&[1.0, 1.0], &[0.0, 0.0]]]);
        assert_eq!(g.excluded_zero(), 1);
        match within_class_similarity(&g) {
            Err(MetricError::SparseClasses { classes }) => assert_eq!(classes, vec![1]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn between_class_extremes() {
        let same = fg(&[&[&[1.0, 2.0], &[1.0, 2.0]], &[&[1.0, 2.0], &[2.0, 4.0]]]);
        let b = between_class_separation(&same).unwrap();
        assert!((b.cs_mean - 1.0).abs() < 1e-15 && b.m_bt.abs() < 1e-15);

        let ortho = fg(&[&[&[1.0, 0.0], &[3.0, 0.0]], &[&[0.0, 1.0], &[0.0, 2.0]]]);
        let b = between_class_separation(&ortho).unwrap();
        assert_eq!((b.cs_mean, b.m_bt), (0.0, 1.0));
    }

    #[test]
    fn opposite_directions_cancel_class_mean() {
        let g = fg(&[&[&[1.0, 0.0], &[-1.0, 0.0]], &[&[0.0, 1.0], &[0.0, 1.0]]]);
        assert!(matches!(between_class_separation(&g), Err(MetricError::ZeroNorm(_))));
    }

    #[test]
    fn bounds_match_reported_tables() {
        assert!((bounds_from_stats(0.9844, 0.0077, 0.0, 0.0).upper - 0.9690).abs() < 1e-4);
        assert!((bounds_from_stats(1.0, 0.0, 0.3721, 0.1140).lower - 0.3998).abs() < 1e-3);
        assert!((bounds_from_stats(1.0, 0.0, 0.2897, 0.0858).lower - 0.5386).abs() < 1e-3);
    }

    #[test]
    fn bounds_clamp_flag() {
        let b = bounds_from_stats(0.5, 0.4, 0.9, 0.2);
        assert!(b.clamped);
        assert_eq!((b.lower_clamped, b.upper_clamped), (0.0, 0.0));
        assert!(b.lower < 0.0 && b.upper < 0.0);
        assert!(!bounds_from_stats(0.99, 0.001, 0.1, 0.05).clamped);
    }

    #[test]
    fn csv_row_leaves_unknowns_empty() {
        let g = fg(&[&[&[1.0, 0.0], &[1.0, 0.1]], &[&[0.0, 1.0], &[0.1, 1.0]]]);
        let o = classifier_orthogonality(&Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap()).unwrap();
        let mut r = MetricReport::assemble(
            &o,
            &within_class_similarity(&g).unwrap(),
            &between_class_separation(&g).unwrap(),
            &g,
            0,
        );
        let row = r.csv_row(None);
        assert!(row.starts_with(','));
        assert!(row.ends_with(','));
        assert_eq!(row.split(',').count(), MetricReport::CSV_HEADER.split(',').count());
        r.accuracy = Some(0.75);
        assert!(r.csv_row(Some(0.25)).starts_with("0.25,"));
        assert!(r.csv_row(Some(0.25)).ends_with(",0.75"));
    }
}
