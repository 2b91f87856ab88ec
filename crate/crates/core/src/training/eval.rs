use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{fewshot_groups, Plan, Setting};
use crate::datasets::{
    fixed_subset, sample_fewshot, sample_relational, sample_support, EpisodeBatch, FewShotSpec, LabeledPair, MetaPhase,
    MultiLabelDataset,
};
use crate::error::Result;
use crate::metrics::MetricsReport;
use crate::model::{EncodedBatch, MetaLinkModel};
use crate::numcore::{bce_with_logits, Scalar};

/// How evaluation graphs are built.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSpec {
    pub setting: Setting,
    pub aux_ratio: f64,
    pub shots: usize,
    pub batch_size: usize,
    pub ways: Option<usize>,
    /// Few-shot queries per class.
    pub queries: usize,
    /// Few-shot episodes.
    pub episodes: usize,
    /// Fixes every auxiliary subset and support draw.
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub report: MetricsReport,
    /// Mean BCE over every scored target.
    pub loss: f64,
    pub targets: usize,
    /// Batches in which a target pair was also an input edge.
    pub leakage: usize,
    /// Few-shot only: fraction of query examples whose top logit is the positive.
    pub accuracy: Option<f64>,
}

/// Scores `examples` under `spec`.
///
/// Standard and relational runs draw the same per-example auxiliary subsets
/// for a given seed and ratio; the standard setting simply drops them as
/// inputs, so both score the same targets. Meta settings draw one support
/// set from the training split and score every example's held-out labels.
pub fn evaluate<S: Scalar>(
    model: &MetaLinkModel<S>,
    ds: &MultiLabelDataset<S>,
    plan: &Plan,
    examples: &[usize],
    spec: &EvalSpec,
) -> Result<Evaluation> {
    let scored_tasks: Vec<usize> = if spec.setting.is_meta() {
        plan.unseen_tasks.clone()
    } else {
        (0..ds.m()).collect()
    };
    let batches = eval_batches(ds, plan, examples, spec)?;

    let mut per_task: Vec<(Vec<f64>, Vec<bool>)> = vec![(Vec::new(), Vec::new()); ds.m()];
    let mut all_logits = Vec::new();
    let mut all_labels = Vec::new();
    let mut leakage = 0;
    let (mut hits, mut rows) = (0usize, 0usize);
    for batch in &batches {
        leakage += usize::from(super::count_leaks(batch) > 0);
        if batch.query_targets.is_empty() {
            continue;
        }
        let enc = EncodedBatch::new(ds, batch)?;
        let logits = model.predict(&enc)?;
        for (p, &l) in batch.query_targets.iter().zip(&logits) {
            per_task[p.task].0.push(l.as_f64());
            per_task[p.task].1.push(p.label);
        }
        if spec.setting == Setting::Fewshot {
            for (members, positive) in fewshot_groups(&enc)? {
                let best = members
                    .iter()
                    .enumerate()
                    .max_by(|a, b| logits[*a.1].partial_cmp(&logits[*b.1]).expect("finite logits"))
                    .map(|(i, _)| i);
                hits += usize::from(best == Some(positive));
                rows += 1;
            }
        }
        all_labels.extend(enc.labels.iter().copied());
        all_logits.extend(logits);
    }

    let named: Vec<(String, Vec<f64>, Vec<bool>)> = scored_tasks
        .iter()
        .map(|&t| {
            let (s, l) = std::mem::take(&mut per_task[t]);
            (ds.task_names()[t].clone(), s, l)
        })
        .collect();
    let report = MetricsReport::from_predictions(&named)?;
    let loss = if all_logits.is_empty() {
        f64::NAN
    } else {
        bce_with_logits(&all_logits, &all_labels, &vec![S::one(); all_labels.len()])?.as_f64()
    };
    Ok(Evaluation {
        report,
        loss,
        targets: all_logits.len(),
        leakage,
        accuracy: (rows > 0).then(|| hits as f64 / rows as f64),
    })
}

pub(super) fn eval_batches<S: Scalar>(
    ds: &MultiLabelDataset<S>,
    plan: &Plan,
    examples: &[usize],
    spec: &EvalSpec,
) -> Result<Vec<EpisodeBatch>> {
    match spec.setting {
        Setting::Standard | Setting::Relational => {
            // The fixed-seed path never touches this generator.
            let mut unused = ChaCha8Rng::seed_from_u64(0);
            examples
                .chunks(spec.batch_size)
                .map(|chunk| {
                    let mut batch = sample_relational(ds, chunk, spec.aux_ratio, &mut unused, Some(spec.seed))?;
                    if spec.setting == Setting::Standard {
                        batch.query_known.clear();
                    }
                    Ok(batch)
                })
                .collect()
        }
        Setting::Meta | Setting::RelationalMeta => {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            let (support_examples, support) =
                sample_support(ds, &plan.split.train, &plan.unseen_tasks, spec.shots, &mut rng)?;
            let in_support: BTreeSet<usize> = support_examples.iter().copied().collect();
            let queries: Vec<usize> = examples.iter().copied().filter(|e| !in_support.contains(e)).collect();
            let k = if spec.setting == Setting::RelationalMeta {
                (spec.aux_ratio * plan.seen_tasks.len() as f64).floor() as usize
            } else {
                0
            };
            let pairs = |ex: usize, tasks: &[usize]| -> Vec<LabeledPair> {
                tasks
                    .iter()
                    .filter_map(|&task| ds.label(ex, task).map(|label| LabeledPair { example: ex, task, label }))
                    .collect()
            };
            Ok(queries
                .chunks(spec.batch_size)
                .map(|chunk| {
                    let mut query_known = Vec::new();
                    let mut query_targets = Vec::new();
                    for &ex in chunk {
                        let observed: Vec<usize> =
                            plan.seen_tasks.iter().copied().filter(|&t| ds.label(ex, t).is_some()).collect();
                        query_known.extend(pairs(ex, &fixed_subset(&observed, k, spec.seed, ex)));
                        query_targets.extend(pairs(ex, &plan.unseen_tasks));
                    }
                    EpisodeBatch {
                        support_examples: support_examples.clone(),
                        query_examples: chunk.to_vec(),
                        support: support.clone(),
                        query_known,
                        query_targets,
                        seen_tasks: plan.seen_tasks.clone(),
                        unseen_tasks: plan.unseen_tasks.clone(),
                        meta_tasks: plan.unseen_tasks.clone(),
                    }
                })
                .collect())
        }
        Setting::Fewshot => {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            let fs = FewShotSpec {
                examples,
                seen_tasks: &plan.seen_tasks,
                unseen_tasks: &plan.unseen_tasks,
                phase: MetaPhase::Test,
                ways: spec.ways.unwrap_or(plan.unseen_tasks.len()),
                shots: spec.shots,
                queries: spec.queries,
            };
            (0..spec.episodes).map(|_| sample_fewshot(ds, &fs, &mut rng)).collect()
        }
    }
}
