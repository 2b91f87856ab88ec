//! Ranking metrics per task, macro averages, and aggregation over runs.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_inputs(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::Dimension {
            op: "metric",
            left: (scores.len(), 1),
            right: (labels.len(), 1),
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("metric scores"));
    }
    Ok(())
}

/// Mann–Whitney ROC AUC: the fraction of (positive, negative) pairs where
/// the positive scores higher, ties counting one half.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_inputs(scores, labels)?;
    let pos = labels.iter().filter(|&&l| l).count() as u64;
    let neg = labels.len() as u64 - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric("roc_auc needs both classes"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the U statistic, kept integral so the result is one division.
    let mut twice_u: u64 = 0;
    let mut neg_below: u64 = 0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let group_pos = order[start..end].iter().filter(|&&i| labels[i]).count() as u64;
        let group_neg = (end - start) as u64 - group_pos;
        twice_u += group_pos * (2 * neg_below + group_neg);
        neg_below += group_neg;
        start = end;
    }
    Ok(twice_u as f64 / (2 * pos * neg) as f64)
}

/// Average precision `Σ_k P(k)·Δrecall(k)` over the ranking by descending
/// score. Equal scores keep their original index order.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_inputs(scores, labels)?;
    let pos = labels.iter().filter(|&&l| l).count();
    if pos == 0 {
        return Err(Error::UndefinedMetric("average_precision needs a positive"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal));
    let mut hits = 0usize;
    let mut total = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] {
            hits += 1;
            total += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(total / pos as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub task: String,
    pub auc: Option<f64>,
    pub ap: Option<f64>,
    pub n_pos: usize,
    pub n_neg: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_task: Vec<TaskMetrics>,
    /// Unweighted mean AUC over tasks that have both classes.
    pub macro_auc: Option<f64>,
    #[serde(rename = "mAP")]
    pub map: Option<f64>,
    /// Tasks left out of the macro averages (single class or no data).
    pub excluded_tasks: Vec<String>,
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

impl MetricsReport {
    /// One entry per task: `(name, scores, labels)`.
    pub fn from_predictions(tasks: &[(String, Vec<f64>, Vec<bool>)]) -> Result<Self> {
        let mut per_task = Vec::with_capacity(tasks.len());
        let mut excluded = Vec::new();
        for (name, scores, labels) in tasks {
            let n_pos = labels.iter().filter(|&&l| l).count();
            let n_neg = labels.len() - n_pos;
            let auc = match roc_auc(scores, labels) {
                Ok(v) => Some(v),
                Err(Error::UndefinedMetric(_)) => None,
                Err(e) => return Err(e),
            };
            let ap = match average_precision(scores, labels) {
                Ok(v) => Some(v),
                Err(Error::UndefinedMetric(_)) => None,
                Err(e) => return Err(e),
            };
            if auc.is_none() {
                excluded.push(name.clone());
            }
            per_task.push(TaskMetrics {
                task: name.clone(),
                auc,
                ap,
                n_pos,
                n_neg,
            });
        }
        // Both averages run over the same task set so they stay comparable.
        let kept: Vec<&TaskMetrics> = per_task.iter().filter(|t| t.auc.is_some()).collect();
        let aucs: Vec<f64> = kept.iter().filter_map(|t| t.auc).collect();
        let aps: Vec<f64> = kept.iter().filter_map(|t| t.ap).collect();
        Ok(Self {
            macro_auc: mean(&aucs),
            map: mean(&aps),
            per_task,
            excluded_tasks: excluded,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

/// Sample mean and standard deviation (`n - 1` denominator; 0 for `n = 1`).
pub fn mean_std(values: &[f64]) -> Result<MeanStd> {
    let Some(m) = mean(values) else {
        return Err(Error::Aggregation("no values to aggregate".into()));
    };
    let std = if values.len() < 2 {
        0.0
    } else {
        let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
        (ss / (values.len() - 1) as f64).sqrt()
    };
    Ok(MeanStd { mean: m, std })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub n_runs: usize,
    pub macro_auc: Option<MeanStd>,
    #[serde(rename = "mAP")]
    pub map: Option<MeanStd>,
    /// Set when a single run makes the standard deviation meaningless.
    pub std_undefined: bool,
}

/// Mean ± std of the macro metrics across runs over the same tasks.
pub fn aggregate(reports: &[MetricsReport]) -> Result<AggregateReport> {
    let first = reports
        .first()
        .ok_or_else(|| Error::Aggregation("no reports".into()))?;
    let names: Vec<&str> = first.per_task.iter().map(|t| t.task.as_str()).collect();
    for r in &reports[1..] {
        let other: Vec<&str> = r.per_task.iter().map(|t| t.task.as_str()).collect();
        if other != names {
            return Err(Error::Aggregation("reports cover different task sets".into()));
        }
    }
    let collect = |f: fn(&MetricsReport) -> Option<f64>| -> Result<Option<MeanStd>> {
        let vals: Vec<f64> = reports.iter().filter_map(f).collect();
        if vals.is_empty() {
            Ok(None)
        } else {
            mean_std(&vals).map(Some)
        }
    };
    Ok(AggregateReport {
        n_runs: reports.len(),
        macro_auc: collect(|r| r.macro_auc)?,
        map: collect(|r| r.map)?,
        std_undefined: reports.len() < 2,
    })
}
