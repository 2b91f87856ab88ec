use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Disjoint train/val/test row indices covering every example once.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitSpec {
    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.val.len(), self.test.len())
    }
}

/// Shuffled partition of `0..n`. Validation and test sizes are
/// `round(n·fraction)`; train takes the remainder. Each index list is
/// returned sorted.
pub fn split(n: usize, fractions: (f64, f64, f64), seed: u64) -> Result<SplitSpec> {
    let (ft, fv, fs) = fractions;
    if [ft, fv, fs].iter().any(|f| !(0.0..=1.0).contains(f)) {
        return Err(Error::Range(format!("split fractions must be in [0,1]: {fractions:?}")));
    }
    if (ft + fv + fs - 1.0).abs() > 1e-9 {
        return Err(Error::Range(format!("split fractions must sum to 1: {fractions:?}")));
    }
    let n_val = (n as f64 * fv).round() as usize;
    let n_test = (n as f64 * fs).round() as usize;
    if n_val + n_test > n {
        return Err(Error::Size(format!("n = {n} too small for {fractions:?}")));
    }
    let n_train = n - n_val - n_test;
    for (name, f, size) in [("train", ft, n_train), ("val", fv, n_val), ("test", fs, n_test)] {
        if f > 0.0 && size == 0 {
            return Err(Error::Size(format!("{name} split is empty for n = {n}")));
        }
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let take = |k: usize, from: &mut Vec<usize>| {
        let mut part: Vec<usize> = from.drain(..k).collect();
        part.sort_unstable();
        part
    };
    let val = take(n_val, &mut idx);
    let test = take(n_test, &mut idx);
    let train = take(n_train, &mut idx);
    Ok(SplitSpec { train, val, test })
}
