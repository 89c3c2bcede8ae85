use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{DataError, LabeledDataset};

/// Isotropic Gaussian clusters, one per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobConfig {
    pub k: usize,
    pub per_class: usize,
    pub p: usize,
    /// Distance between cluster means (exact when `k <= p + 1`).
    pub separation: f64,
    /// Per-coordinate standard deviation around each mean.
    pub spread: f64,
    pub seed: u64,
}

impl Default for BlobConfig {
    fn default() -> Self {
        BlobConfig {
            k: 4,
            per_class: 100,
            p: 8,
            separation: 10.0,
            spread: 0.5,
            seed: 0,
        }
    }
}

/// Draws `per_class` points around each of `k` means, class by class.
///
/// When `k <= p + 1` the means are the vertices of a regular simplex with
/// edge `separation`, centred on the origin and randomly rotated. Otherwise
/// they are random directions at radius `separation`, redrawn until every
/// pair is at least `separation / 2` apart.
pub fn gen_blobs(cfg: &BlobConfig) -> Result<LabeledDataset, DataError> {
    if cfg.k < 2 || cfg.per_class < 1 || cfg.p < 1 {
        return Err(DataError::Config(format!(
            "blobs need k >= 2, per_class >= 1 and p >= 1 (got k={}, per_class={}, p={})",
            cfg.k, cfg.per_class, cfg.p
        )));
    }
    if !(cfg.separation > 0.0 && cfg.separation.is_finite()) || !(cfg.spread > 0.0 && cfg.spread.is_finite()) {
        return Err(DataError::Config("separation and spread must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let means = if cfg.k <= cfg.p + 1 {
        simplex_means(cfg, &mut rng)
    } else {
        scattered_means(cfg, &mut rng)?
    };

    let mut inputs = Vec::with_capacity(cfg.k * cfg.per_class * cfg.p);
    let mut labels = Vec::with_capacity(cfg.k * cfg.per_class);
    for (class, mean) in means.iter().enumerate() {
        for _ in 0..cfg.per_class {
            inputs.extend(mean.iter().map(|m| {
                let z: f64 = StandardNormal.sample(&mut rng);
                m + cfg.spread * z
            }));
            labels.push(class);
        }
    }
    LabeledDataset::new(cfg.p, cfg.k, inputs, labels)
}

fn simplex_means(cfg: &BlobConfig, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let p = cfg.p;
    // Unit basis vectors are pairwise sqrt(2) apart; the (p+1)-th vertex
    // c * (1, ..., 1) with c = (1 - sqrt(p + 1)) / p is too.
    let mut vertices: Vec<Vec<f64>> = (0..cfg.k.min(p))
        .map(|i| (0..p).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    if cfg.k == p + 1 {
        let c = (1.0 - ((p + 1) as f64).sqrt()) / p as f64;
        vertices.push(vec![c; p]);
    }
    let centroid: Vec<f64> = (0..p)
        .map(|j| vertices.iter().map(|v| v[j]).sum::<f64>() / cfg.k as f64)
        .collect();
    let rotation = random_orthogonal(p, rng);
    let scale = cfg.separation / 2f64.sqrt();
    vertices
        .iter()
        .map(|v| {
            let centred: Vec<f64> = v.iter().zip(&centroid).map(|(a, c)| a - c).collect();
            rotation
                .iter()
                .map(|row| scale * row.iter().zip(&centred).map(|(r, x)| r * x).sum::<f64>())
                .collect()
        })
        .collect()
}

/// Rows of a random orthogonal matrix: Gram-Schmidt on Gaussian rows.
fn random_orthogonal(p: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(p);
    while rows.len() < p {
        let mut v: Vec<f64> = (0..p).map(|_| StandardNormal.sample(rng)).collect();
        for r in &rows {
            let dot: f64 = r.iter().zip(&v).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(r).for_each(|(x, a)| *x -= dot * a);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            rows.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    rows
}

fn scattered_means(cfg: &BlobConfig, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<f64>>, DataError> {
    const MAX_DRAWS: usize = 100_000;
    let min_dist = cfg.separation / 2.0;
    let mut means: Vec<Vec<f64>> = Vec::with_capacity(cfg.k);
    let mut draws = 0;
    while means.len() < cfg.k {
        draws += 1;
        if draws > MAX_DRAWS {
            return Err(DataError::Config(format!(
                "could not place {} means {min_dist} apart in {} dimensions",
                cfg.k, cfg.p
            )));
        }
        let v: Vec<f64> = (0..cfg.p).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-9 {
            continue;
        }
        let candidate: Vec<f64> = v.iter().map(|x| cfg.separation * x / norm).collect();
        let far_enough = means.iter().all(|m| {
            m.iter()
                .zip(&candidate)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt()
                >= min_dist
        });
        if far_enough {
            means.push(candidate);
        }
    }
    Ok(means)
}
