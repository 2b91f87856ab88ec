use super::MultiLabelDataset;
use crate::numcore::{DenseMatrix, Scalar};

/// Task-by-task Pearson correlation of label columns.
#[derive(Clone, Debug, PartialEq)]
pub struct PearsonMatrix {
    pub values: DenseMatrix<f64>,
    /// Pairs `(a, b)` with `a <= b` whose entry was set to 0 because fewer
    /// than two rows are jointly observed or a column has no variance there.
    pub flagged: Vec<(usize, usize)>,
}

/// Pearson correlation over rows where both labels are observed.
pub fn pearson_matrix<S: Scalar>(ds: &MultiLabelDataset<S>) -> PearsonMatrix {
    let m = ds.m();
    let mut values = DenseMatrix::zeros(m, m);
    let mut flagged = Vec::new();
    let cols: Vec<Vec<Option<bool>>> = (0..m).map(|j| ds.column(j)).collect();
    for a in 0..m {
        for b in a..m {
            let pairs: Vec<(f64, f64)> = cols[a]
                .iter()
                .zip(&cols[b])
                .filter_map(|(x, y)| match (x, y) {
                    (Some(x), Some(y)) => Some((f64::from(u8::from(*x)), f64::from(u8::from(*y)))),
                    _ => None,
                })
                .collect();
            let r = correlation(&pairs);
            match r {
                Some(r) => {
                    values.set(a, b, r);
                    values.set(b, a, r);
                }
                None => flagged.push((a, b)),
            }
        }
    }
    PearsonMatrix { values, flagged }
}

fn correlation(pairs: &[(f64, f64)]) -> Option<f64> {
    if pairs.len() < 2 {
        return None;
    }
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for &(x, y) in pairs {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    // Identical or complementary columns give |r| = 1 up to rounding; snap
    // those so the heat map reads exactly ±1.
    let r = sxy / (sxx.sqrt() * syy.sqrt());
    Some(r.clamp(-1.0, 1.0)).map(|r| if (r.abs() - 1.0).abs() < 1e-12 { r.signum() } else { r })
}
