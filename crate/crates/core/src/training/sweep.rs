use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{train, Setting, TrainConfig};
use crate::datasets::MultiLabelDataset;
use crate::error::{Error, Result};
use crate::metrics::{mean_std, MeanStd};
use crate::numcore::Scalar;

/// One trained cell of a sweep: the swept value, the run seed and the test
/// macro AUC (`None` when no task had both classes).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub seed: u64,
    pub metric: Option<f64>,
}

/// Test macro AUC for every `(ratio, seed)` cell. A standard config is run
/// in the relational setting, since the ratio has no effect otherwise.
pub fn sweep_aux_ratio<S: Scalar>(
    ds: &MultiLabelDataset<S>,
    base: &TrainConfig,
    ratios: &[f64],
    seeds: &[u64],
    workers: usize,
) -> Result<Vec<SweepRow>> {
    let setting = if base.setting == Setting::Standard { Setting::Relational } else { base.setting };
    run_cells(ds, ratios, seeds, workers, |&ratio, seed| TrainConfig {
        setting,
        aux_ratio: ratio,
        seed,
        ..base.clone()
    })
}

pub fn sweep_layers<S: Scalar>(
    ds: &MultiLabelDataset<S>,
    base: &TrainConfig,
    layers: &[usize],
    seeds: &[u64],
    workers: usize,
) -> Result<Vec<SweepRow>> {
    let values: Vec<f64> = layers.iter().map(|&l| l as f64).collect();
    run_cells(ds, &values, seeds, workers, |&l, seed| TrainConfig {
        layers: l as usize,
        seed,
        ..base.clone()
    })
}

fn run_cells<S: Scalar>(
    ds: &MultiLabelDataset<S>,
    values: &[f64],
    seeds: &[u64],
    workers: usize,
    make: impl Fn(&f64, u64) -> TrainConfig + Sync,
) -> Result<Vec<SweepRow>> {
    let cells: Vec<(f64, u64)> = values
        .iter()
        .flat_map(|&v| seeds.iter().map(move |&s| (v, s)))
        .collect();
    let run = |&(value, seed): &(f64, u64)| -> Result<SweepRow> {
        let (_, history) = train(ds, &make(&value, seed))?;
        Ok(SweepRow {
            value,
            seed,
            metric: history.test.and_then(|r| r.macro_auc),
        })
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| cells.par_iter().map(run).collect())
}

/// Mean and sample standard deviation of the defined metrics per swept
/// value, in ascending value order. Values with no defined metric are
/// dropped.
pub fn summarize(rows: &[SweepRow]) -> Vec<(f64, MeanStd)> {
    let mut by_value: BTreeMap<u64, (f64, Vec<f64>)> = BTreeMap::new();
    for row in rows {
        let entry = by_value.entry(order_key(row.value)).or_insert((row.value, Vec::new()));
        entry.1.extend(row.metric);
    }
    by_value
        .into_values()
        .filter_map(|(v, metrics)| mean_std(&metrics).ok().map(|ms| (v, ms)))
        .collect()
}

// Total order on non-negative finite floats.
fn order_key(v: f64) -> u64 {
    v.to_bits()
}

/// CSV with header `<name>,seed,metric`; undefined metrics are empty.
pub fn sweep_csv(rows: &[SweepRow], name: &str) -> String {
    let mut out = format!("{name},seed,metric\n");
    for r in rows {
        let metric = r.metric.map(|m| m.to_string()).unwrap_or_default();
        out.push_str(&format!("{},{},{}\n", r.value, r.seed, metric));
    }
    out
}
