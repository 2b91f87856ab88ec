use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::MultiLabelDataset;
use crate::error::{Error, Result};
use crate::numcore::{DenseMatrix, Scalar};

const MAX_TASK_RETRIES: usize = 10;
const FEATURE_NOISE: f64 = 0.1;

/// Parameters of the latent-factor multi-label generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    pub m: usize,
    pub d: usize,
    /// Cosine between two task directions in the same orthogonal group.
    pub rho: f64,
    pub label_noise: f64,
    pub missing_frac: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 || self.d == 0 {
            return Err(Error::Config("n, m, d must all be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::Config(format!("rho must be in [0,1], got {}", self.rho)));
        }
        if !(0.0..1.0).contains(&self.label_noise) {
            return Err(Error::Config(format!(
                "label noise must be in [0,1), got {}",
                self.label_noise
            )));
        }
        if !(0.0..1.0).contains(&self.missing_frac) {
            return Err(Error::Config(format!(
                "missing fraction must be in [0,1), got {}",
                self.missing_frac
            )));
        }
        Ok(())
    }
}

fn normal_vec(k: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..k).map(|_| StandardNormal.sample(rng)).collect()
}

fn normalized(mut v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Unit vector orthogonal to every vector in `basis` (assumed orthonormal).
fn orthogonal_draw(k: usize, basis: &[&[f64]], rng: &mut impl Rng) -> Vec<f64> {
    let mut v = normal_vec(k, rng);
    for b in basis {
        let p = dot(&v, b);
        v.iter_mut().zip(b.iter()).for_each(|(x, y)| *x -= p * y);
    }
    normalized(v)
}

/// Latent `u ~ N(0, I_k)` with `k = min(d, 8)`; features `A·u + 0.1·ε`;
/// task `j` labels `1[b_j·u > 0]` with
/// `b_j ∝ √ρ·b_shared + √(1-ρ)·b_private_j` (both unit vectors), then
/// independent flips with probability `label_noise` and deletions with
/// probability `missing_frac`. Private directions are orthogonal to the
/// shared one and to each other within consecutive groups of `k - 1` tasks,
/// so in-group directions have cosine exactly ρ. A task left without both
/// classes is redrawn (new private direction and noise) up to ten times.
pub fn generate_synthetic<S: Scalar>(spec: &SyntheticSpec) -> Result<MultiLabelDataset<S>> {
    spec.validate()?;
    let SyntheticSpec { n, m, d, rho, .. } = *spec;
    let k = d.min(8);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let scale = 1.0 / (k as f64).sqrt();
    let mixing: Vec<Vec<f64>> = (0..d)
        .map(|_| normal_vec(k, &mut rng).into_iter().map(|a| a * scale).collect())
        .collect();
    let latent: Vec<Vec<f64>> = (0..n).map(|_| normal_vec(k, &mut rng)).collect();
    let mut features = Vec::with_capacity(n * d);
    for u in &latent {
        for a in &mixing {
            let eps: f64 = StandardNormal.sample(&mut rng);
            features.push(S::lit(dot(a, u) + FEATURE_NOISE * eps));
        }
    }

    let shared = normalized(normal_vec(k, &mut rng));
    let (ws, wp) = (rho.sqrt(), (1.0 - rho).sqrt());
    let group = k.saturating_sub(1).max(1);
    let mut privates: Vec<Vec<f64>> = Vec::with_capacity(m);
    let mut columns: Vec<Vec<Option<bool>>> = Vec::with_capacity(m);
    for j in 0..m {
        let mut accepted = None;
        for _ in 0..=MAX_TASK_RETRIES {
            let private = if k > 1 {
                let start = j - j % group;
                let basis: Vec<&[f64]> = std::iter::once(shared.as_slice())
                    .chain(privates[start..j].iter().map(Vec::as_slice))
                    .collect();
                orthogonal_draw(k, &basis, &mut rng)
            } else {
                normalized(normal_vec(k, &mut rng))
            };
            let dir = normalized(shared.iter().zip(&private).map(|(s, p)| ws * s + wp * p).collect());
            let col: Vec<Option<bool>> = latent
                .iter()
                .map(|u| {
                    let mut y = dot(&dir, u) > 0.0;
                    if rng.random::<f64>() < spec.label_noise {
                        y = !y;
                    }
                    (rng.random::<f64>() >= spec.missing_frac).then_some(y)
                })
                .collect();
            let pos = col.contains(&Some(true));
            let neg = col.contains(&Some(false));
            if pos && neg {
                accepted = Some((col, private));
                break;
            }
        }
        let (col, private) = accepted.ok_or_else(|| {
            Error::Generation(format!(
                "task {j} stayed single-class after {MAX_TASK_RETRIES} retries"
            ))
        })?;
        columns.push(col);
        privates.push(private);
    }

    let labels = (0..n).map(|i| columns.iter().map(|c| c[i]).collect()).collect();
    let names = (0..m).map(|j| format!("task{j}")).collect();
    MultiLabelDataset::new(DenseMatrix::from_vec(n, d, features)?, labels, names)
}
