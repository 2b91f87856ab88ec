//! Multi-label datasets with missing labels, and the samplers that carve
//! them into episodes for each learning setting.

mod csv;
mod episodes;
mod pearson;
mod split;
mod synthetic;

use std::collections::BTreeSet;

pub use self::csv::{load_csv, parse_csv, save_csv, to_csv_string};
pub use episodes::{
    example_rng, fixed_subset, sample_fewshot, sample_meta, sample_relational, sample_relational_meta, sample_support, standard_batch,
    EpisodeBatch, FewShotSpec, LabeledPair, MetaPhase, MetaSpec,
};
pub use pearson::{pearson_matrix, PearsonMatrix};
pub use split::{split, SplitSpec};
pub use synthetic::{generate_synthetic, SyntheticSpec};

use crate::error::{Error, Result};
use crate::numcore::{DenseMatrix, Scalar};

/// Features plus an `n × m` label grid where each cell is positive,
/// negative, or missing (`None`).
#[derive(Clone, Debug, PartialEq)]
pub struct MultiLabelDataset<S> {
    features: DenseMatrix<S>,
    labels: Vec<Option<bool>>,
    task_names: Vec<String>,
}

impl<S: Scalar> MultiLabelDataset<S> {
    /// Validates dimensions, task-name uniqueness, and that each task has at
    /// least one observed label.
    pub fn new(
        features: DenseMatrix<S>,
        labels: Vec<Vec<Option<bool>>>,
        task_names: Vec<String>,
    ) -> Result<Self> {
        let n = features.rows();
        let m = task_names.len();
        if labels.len() != n {
            return Err(Error::Dimension {
                op: "dataset labels",
                left: (n, m),
                right: (labels.len(), m),
            });
        }
        let mut flat = Vec::with_capacity(n * m);
        for (i, row) in labels.into_iter().enumerate() {
            if row.len() != m {
                return Err(Error::Dimension {
                    op: "dataset label row",
                    left: (i, m),
                    right: (i, row.len()),
                });
            }
            flat.extend(row);
        }
        let unique: BTreeSet<&String> = task_names.iter().collect();
        if unique.len() != m {
            return Err(Error::Contract("task names must be unique".into()));
        }
        let ds = Self {
            features,
            labels: flat,
            task_names,
        };
        for j in 0..m {
            if (0..n).all(|i| ds.label(i, j).is_none()) {
                return Err(Error::Contract(format!(
                    "task {} has no observed label",
                    ds.task_names[j]
                )));
            }
        }
        Ok(ds)
    }

    pub fn n(&self) -> usize {
        self.features.rows()
    }

    pub fn m(&self) -> usize {
        self.task_names.len()
    }

    pub fn d(&self) -> usize {
        self.features.cols()
    }

    pub fn features(&self) -> &DenseMatrix<S> {
        &self.features
    }

    pub fn task_names(&self) -> &[String] {
        &self.task_names
    }

    #[inline]
    pub fn label(&self, example: usize, task: usize) -> Option<bool> {
        self.labels[example * self.m() + task]
    }

    /// Observed `(task, label)` pairs of one example, by task index.
    pub fn observed(&self, example: usize) -> impl Iterator<Item = (usize, bool)> + '_ {
        let m = self.m();
        self.labels[example * m..(example + 1) * m]
            .iter()
            .enumerate()
            .filter_map(|(j, l)| l.map(|y| (j, y)))
    }

    /// Label column of one task (all rows).
    pub fn column(&self, task: usize) -> Vec<Option<bool>> {
        (0..self.n()).map(|i| self.label(i, task)).collect()
    }

    /// Positive count per task over observed labels.
    pub fn positives_per_task(&self) -> Vec<usize> {
        (0..self.m())
            .map(|j| (0..self.n()).filter(|&i| self.label(i, j) == Some(true)).count())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn feats(n: usize) -> DenseMatrix<f64> {
        DenseMatrix::zeros(n, 1)
    }

    #[test]
    fn rejects_duplicate_names() {
        let r = MultiLabelDataset::new(
            feats(1),
            vec![vec![Some(true), Some(false)]],
            vec!["a".into(), "a".into()],
        );
        assert!(r.is_err());
    }

    #[test]
    fn rejects_unobserved_task() {
        let r = MultiLabelDataset::new(feats(2), vec![vec![None], vec![None]], vec!["a".into()]);
        assert!(r.is_err());
    }

    #[test]
    fn observed_skips_missing() {
        let ds = MultiLabelDataset::new(
            feats(2),
            vec![vec![Some(true), None, Some(false)], vec![None, Some(true), None]],
            vec!["a".into(), "b".into(), "c".into()],
        )
        .unwrap();
        let obs: Vec<_> = ds.observed(0).collect();
        assert_eq!(obs, vec![(0, true), (2, false)]);
    }
}
