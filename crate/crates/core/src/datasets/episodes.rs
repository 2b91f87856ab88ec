//! Episode samplers. Every sampler returns an [`EpisodeBatch`] whose known
//! labels become graph edges and whose targets are the links to predict.

use std::collections::BTreeSet;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::MultiLabelDataset;
use crate::error::{Error, Result};
use crate::numcore::Scalar;

const META_RETRIES: usize = 100;

/// One observed `(example, task, label)` triple.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LabeledPair {
    pub example: usize,
    pub task: usize,
    pub label: bool,
}

impl LabeledPair {
    pub fn key(&self) -> (usize, usize) {
        (self.example, self.task)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MetaPhase {
    Train,
    Test,
}

/// One training or evaluation unit.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeBatch {
    pub support_examples: Vec<usize>,
    pub query_examples: Vec<usize>,
    /// Labels of support examples on the episode's meta tasks.
    pub support: Vec<LabeledPair>,
    /// Auxiliary labels of query examples, available as input.
    pub query_known: Vec<LabeledPair>,
    /// Labels to predict.
    pub query_targets: Vec<LabeledPair>,
    pub seen_tasks: Vec<usize>,
    pub unseen_tasks: Vec<usize>,
    /// Tasks whose nodes start from the ones vector in this episode.
    pub meta_tasks: Vec<usize>,
}

impl EpisodeBatch {
    /// Support examples followed by query examples: the graph's data-node order.
    pub fn examples(&self) -> Vec<usize> {
        self.support_examples
            .iter()
            .chain(&self.query_examples)
            .copied()
            .collect()
    }

    /// Every label given as input (support plus auxiliary), i.e. the edges.
    pub fn known_labels(&self) -> impl Iterator<Item = &LabeledPair> {
        self.support.iter().chain(&self.query_known)
    }

    /// Every task that gets a node: known-label tasks, target tasks, meta tasks.
    pub fn tasks(&self) -> Vec<usize> {
        let set: BTreeSet<usize> = self
            .known_labels()
            .chain(&self.query_targets)
            .map(|p| p.task)
            .chain(self.meta_tasks.iter().copied())
            .collect();
        set.into_iter().collect()
    }

    pub fn aux_tasks(&self, example: usize) -> Vec<usize> {
        self.query_known
            .iter()
            .filter(|p| p.example == example)
            .map(|p| p.task)
            .collect()
    }

    pub fn test_tasks(&self, example: usize) -> Vec<usize> {
        self.query_targets
            .iter()
            .filter(|p| p.example == example)
            .map(|p| p.task)
            .collect()
    }

    /// Checks the structural invariants, and in meta phases that every
    /// target lies in the phase's task set.
    pub fn validate<S: Scalar>(&self, ds: &MultiLabelDataset<S>, phase: Option<MetaPhase>) -> Result<()> {
        let support: BTreeSet<usize> = self.support_examples.iter().copied().collect();
        if self.query_examples.iter().any(|e| support.contains(e)) {
            return Err(Error::Contract("support and query examples overlap".into()));
        }
        let known: BTreeSet<(usize, usize)> = self.known_labels().map(LabeledPair::key).collect();
        if known.len() != self.support.len() + self.query_known.len() {
            return Err(Error::Contract("duplicate known label".into()));
        }
        for t in &self.query_targets {
            if known.contains(&t.key()) {
                return Err(Error::Leakage {
                    data: t.example,
                    task: t.task,
                });
            }
        }
        for p in self.known_labels().chain(&self.query_targets) {
            if ds.label(p.example, p.task) != Some(p.label) {
                return Err(Error::Contract(format!(
                    "pair ({}, {}) does not match an observed label",
                    p.example, p.task
                )));
            }
        }
        let unseen: BTreeSet<usize> = self.unseen_tasks.iter().copied().collect();
        if self.seen_tasks.iter().any(|t| unseen.contains(t)) {
            return Err(Error::Contract("seen and unseen tasks overlap".into()));
        }
        match phase {
            Some(MetaPhase::Train) => {
                let touched = self.known_labels().chain(&self.query_targets);
                if let Some(p) = touched.into_iter().find(|p| unseen.contains(&p.task)) {
                    return Err(Error::Contract(format!(
                        "training episode touches unseen task {}",
                        p.task
                    )));
                }
            }
            Some(MetaPhase::Test) => {
                if let Some(p) = self.query_targets.iter().find(|p| !unseen.contains(&p.task)) {
                    return Err(Error::Contract(format!(
                        "test episode targets seen task {}",
                        p.task
                    )));
                }
            }
            None => {}
        }
        Ok(())
    }

    /// True when any edge or target touches a task in `tasks`.
    pub fn touches_any(&self, tasks: &[usize]) -> bool {
        let set: BTreeSet<usize> = tasks.iter().copied().collect();
        self.known_labels()
            .chain(&self.query_targets)
            .any(|p| set.contains(&p.task))
    }
}

/// Deterministic generator for per-example draws that must not depend on
/// batch composition.
pub fn example_rng(seed: u64, example: usize) -> ChaCha8Rng {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    ChaCha8Rng::seed_from_u64(mix(seed ^ mix(example as u64)))
}

fn aux_count(ratio: f64, tasks: usize) -> Result<usize> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(Error::Range(format!("aux ratio must be in [0,1), got {ratio}")));
    }
    Ok((ratio * tasks as f64).floor() as usize)
}

/// Draws `k` of `candidates` uniformly (sorted). Touches `rng` only when a
/// real choice is made.
fn choose<R: Rng + ?Sized>(candidates: &[usize], k: usize, rng: &mut R) -> Vec<usize> {
    if k == 0 {
        return Vec::new();
    }
    if k >= candidates.len() {
        return candidates.to_vec();
    }
    let mut picked: Vec<usize> = index::sample(rng, candidates.len(), k)
        .into_iter()
        .map(|i| candidates[i])
        .collect();
    picked.sort_unstable();
    picked
}

/// `k` of `candidates` drawn as a fixed function of `(seed, example)`.
pub fn fixed_subset(candidates: &[usize], k: usize, seed: u64, example: usize) -> Vec<usize> {
    choose(candidates, k, &mut example_rng(seed, example))
}

enum AuxDraw<'a, R: ?Sized> {
    Shared(&'a mut R),
    PerExample(u64),
}

impl<R: Rng + ?Sized> AuxDraw<'_, R> {
    fn choose(&mut self, example: usize, candidates: &[usize], k: usize) -> Vec<usize> {
        match self {
            AuxDraw::Shared(rng) => choose(candidates, k, *rng),
            AuxDraw::PerExample(seed) => fixed_subset(candidates, k, *seed, example),
        }
    }
}

fn relational_inner<S: Scalar, R: Rng + ?Sized>(
    ds: &MultiLabelDataset<S>,
    examples: &[usize],
    aux_ratio: f64,
    mut draw: AuxDraw<'_, R>,
) -> Result<EpisodeBatch> {
    let k = aux_count(aux_ratio, ds.m())?;
    let mut batch = EpisodeBatch {
        query_examples: examples.to_vec(),
        seen_tasks: (0..ds.m()).collect(),
        ..Default::default()
    };
    for &ex in examples {
        if ex >= ds.n() {
            return Err(Error::IndexOutOfRange {
                index: ex,
                len: ds.n(),
            });
        }
        let observed: Vec<(usize, bool)> = ds.observed(ex).collect();
        let tasks: Vec<usize> = observed.iter().map(|o| o.0).collect();
        // Keep at least one target when the example has few labels.
        let k_eff = k.min(tasks.len().saturating_sub(1));
        let aux: BTreeSet<usize> = draw.choose(ex, &tasks, k_eff).into_iter().collect();
        for (task, label) in observed {
            let pair = LabeledPair {
                example: ex,
                task,
                label,
            };
            if aux.contains(&task) {
                batch.query_known.push(pair);
            } else {
                batch.query_targets.push(pair);
            }
        }
    }
    Ok(batch)
}

/// Standard setting: every observed label of every example is a target.
pub fn standard_batch<S: Scalar>(ds: &MultiLabelDataset<S>, examples: &[usize]) -> Result<EpisodeBatch> {
    relational_inner::<S, ChaCha8Rng>(ds, examples, 0.0, AuxDraw::PerExample(0))
}

/// Relational setting. Each example independently reveals
/// `floor(aux_ratio·m)` of its observed labels as auxiliary inputs; the
/// rest are targets. Pass `aux_seed` to make each example's draw a fixed
/// function of `(aux_seed, example)` instead of consuming `rng`.
pub fn sample_relational<S: Scalar, R: Rng + ?Sized>(
    ds: &MultiLabelDataset<S>,
    examples: &[usize],
    aux_ratio: f64,
    rng: &mut R,
    aux_seed: Option<u64>,
) -> Result<EpisodeBatch> {
    let draw = match aux_seed {
        Some(seed) => AuxDraw::PerExample(seed),
        None => AuxDraw::Shared(rng),
    };
    relational_inner(ds, examples, aux_ratio, draw)
}

/// Parameters of a meta episode.
#[derive(Clone, Debug)]
pub struct MetaSpec<'a> {
    /// Candidate examples for support and query.
    pub examples: &'a [usize],
    pub seen_tasks: &'a [usize],
    pub unseen_tasks: &'a [usize],
    /// Train draws meta tasks from the seen set, test from the unseen set.
    pub phase: MetaPhase,
    /// Number of meta tasks per episode; `None` takes the whole phase set.
    pub ways: Option<usize>,
    pub shots: usize,
    pub query_size: usize,
    /// Fixes each query example's auxiliary draw as a function of this seed.
    pub aux_seed: Option<u64>,
}

fn meta_inner<S: Scalar, R: Rng + ?Sized>(
    ds: &MultiLabelDataset<S>,
    spec: &MetaSpec<'_>,
    aux_ratio: f64,
    rng: &mut R,
) -> Result<EpisodeBatch> {
    if spec.shots == 0 {
        return Err(Error::Sampling("shots must be >= 1".into()));
    }
    if spec.query_size == 0 {
        return Err(Error::Sampling("query size must be >= 1".into()));
    }
    let unseen: BTreeSet<usize> = spec.unseen_tasks.iter().copied().collect();
    if spec.seen_tasks.iter().any(|t| unseen.contains(t)) {
        return Err(Error::Sampling("seen and unseen task sets intersect".into()));
    }
    let pool: Vec<usize> = match spec.phase {
        MetaPhase::Train => spec.seen_tasks.to_vec(),
        MetaPhase::Test => spec.unseen_tasks.to_vec(),
    };
    let ways = spec.ways.unwrap_or(pool.len()).min(pool.len());
    if ways == 0 {
        return Err(Error::Sampling("episode has no meta tasks".into()));
    }
    let need = spec.shots + spec.query_size;
    if spec.examples.len() < need {
        return Err(Error::Sampling(format!(
            "need {need} examples, only {} available",
            spec.examples.len()
        )));
    }
    let k_aux = aux_count(aux_ratio, spec.seen_tasks.len())?;

    for _ in 0..META_RETRIES {
        let tasks = if ways == pool.len() {
            let mut p = pool.clone();
            p.sort_unstable();
            p
        } else {
            choose(&pool, ways, rng)
        };
        let picked = index::sample(rng, spec.examples.len(), need).into_vec();
        let mut support_ex: Vec<usize> = picked[..spec.shots].iter().map(|&i| spec.examples[i]).collect();
        let mut query_ex: Vec<usize> = picked[spec.shots..].iter().map(|&i| spec.examples[i]).collect();
        support_ex.sort_unstable();
        query_ex.sort_unstable();

        let labeled = |exs: &[usize]| -> Vec<LabeledPair> {
            exs.iter()
                .flat_map(|&ex| {
                    tasks.iter().filter_map(move |&task| {
                        ds.label(ex, task).map(|label| LabeledPair {
                            example: ex,
                            task,
                            label,
                        })
                    })
                })
                .collect()
        };
        let support = labeled(&support_ex);
        let both_classes = tasks.iter().all(|&t| {
            let pos = support.iter().any(|p| p.task == t && p.label);
            let neg = support.iter().any(|p| p.task == t && !p.label);
            pos && neg
        });
        let targets = labeled(&query_ex);
        if !both_classes || targets.is_empty() {
            continue;
        }

        let mut query_known = Vec::new();
        if k_aux > 0 {
            let meta: BTreeSet<usize> = tasks.iter().copied().collect();
            let mut draw = match spec.aux_seed {
                Some(seed) => AuxDraw::PerExample(seed),
                None => AuxDraw::Shared(&mut *rng),
            };
            for &ex in &query_ex {
                let candidates: Vec<usize> = spec
                    .seen_tasks
                    .iter()
                    .copied()
                    .filter(|t| !meta.contains(t) && ds.label(ex, *t).is_some())
                    .collect::<BTreeSet<_>>()
                    .into_iter()
                    .collect();
                for task in draw.choose(ex, &candidates, k_aux) {
                    query_known.push(LabeledPair {
                        example: ex,
                        task,
                        label: ds.label(ex, task).expect("candidate is observed"),
                    });
                }
            }
        }

        let mut seen = spec.seen_tasks.to_vec();
        seen.sort_unstable();
        let mut unseen_sorted = spec.unseen_tasks.to_vec();
        unseen_sorted.sort_unstable();
        return Ok(EpisodeBatch {
            support_examples: support_ex,
            query_examples: query_ex,
            support,
            query_known,
            query_targets: targets,
            seen_tasks: seen,
            unseen_tasks: unseen_sorted,
            meta_tasks: tasks,
        });
    }
    Err(Error::Sampling(format!(
        "no episode with both classes on every meta task after {META_RETRIES} attempts"
    )))
}

/// `shots` examples from `pool` (sorted) whose labels give every task in
/// `tasks` at least one positive and one negative, with those labels.
pub fn sample_support<S: Scalar, R: Rng + ?Sized>(
    ds: &MultiLabelDataset<S>,
    pool: &[usize],
    tasks: &[usize],
    shots: usize,
    rng: &mut R,
) -> Result<(Vec<usize>, Vec<LabeledPair>)> {
    if shots == 0 || shots > pool.len() {
        return Err(Error::Sampling(format!(
            "cannot draw {shots} support examples from {}",
            pool.len()
        )));
    }
    for _ in 0..META_RETRIES {
        let mut picked: Vec<usize> = index::sample(rng, pool.len(), shots)
            .into_iter()
            .map(|i| pool[i])
            .collect();
        picked.sort_unstable();
        let pairs: Vec<LabeledPair> = picked
            .iter()
            .flat_map(|&example| {
                tasks.iter().filter_map(move |&task| {
                    ds.label(example, task).map(|label| LabeledPair { example, task, label })
                })
            })
            .collect();
        let ok = tasks.iter().all(|&t| {
            pairs.iter().any(|p| p.task == t && p.label) && pairs.iter().any(|p| p.task == t && !p.label)
        });
        if ok {
            return Ok((picked, pairs));
        }
    }
    Err(Error::Sampling(format!(
        "no support set with both classes on every task after {META_RETRIES} attempts"
    )))
}

/// Meta setting: labeled support on the episode's meta tasks, query targets
/// on the same tasks.
pub fn sample_meta<S: Scalar, R: Rng + ?Sized>(
    ds: &MultiLabelDataset<S>,
    spec: &MetaSpec<'_>,
    rng: &mut R,
) -> Result<EpisodeBatch> {
    meta_inner(ds, spec, 0.0, rng)
}

/// Relational meta setting: [`sample_meta`] plus, per query example,
/// `floor(aux_ratio·|seen|)` observed labels on seen non-meta tasks.
pub fn sample_relational_meta<S: Scalar, R: Rng + ?Sized>(
    ds: &MultiLabelDataset<S>,
    spec: &MetaSpec<'_>,
    aux_ratio: f64,
    rng: &mut R,
) -> Result<EpisodeBatch> {
    meta_inner(ds, spec, aux_ratio, rng)
}

/// Parameters of an N-way single-positive episode.
#[derive(Clone, Debug)]
pub struct FewShotSpec<'a> {
    pub examples: &'a [usize],
    pub seen_tasks: &'a [usize],
    pub unseen_tasks: &'a [usize],
    pub phase: MetaPhase,
    pub ways: usize,
    /// Support examples per class.
    pub shots: usize,
    /// Query examples per class.
    pub queries: usize,
}

/// N-way episode: N tasks act as classes; an example belongs to a class when
/// it is observed on all N tasks and positive on exactly that one. Support
/// examples reveal all N links; each query example has its N links as
/// targets with exactly one positive.
pub fn sample_fewshot<S: Scalar, R: Rng + ?Sized>(
    ds: &MultiLabelDataset<S>,
    spec: &FewShotSpec<'_>,
    rng: &mut R,
) -> Result<EpisodeBatch> {
    if spec.ways < 2 || spec.shots == 0 || spec.queries == 0 {
        return Err(Error::Sampling("few-shot needs ways >= 2, shots >= 1, queries >= 1".into()));
    }
    let pool = match spec.phase {
        MetaPhase::Train => spec.seen_tasks,
        MetaPhase::Test => spec.unseen_tasks,
    };
    if pool.len() < spec.ways {
        return Err(Error::Sampling(format!(
            "{}-way episode from {} tasks",
            spec.ways,
            pool.len()
        )));
    }
    for _ in 0..META_RETRIES {
        let tasks = choose(pool, spec.ways, rng);
        let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); spec.ways];
        for &ex in spec.examples {
            let labels: Option<Vec<bool>> = tasks.iter().map(|&t| ds.label(ex, t)).collect();
            if let Some(labels) = labels {
                let pos: Vec<usize> = (0..labels.len()).filter(|&c| labels[c]).collect();
                if let [c] = pos[..] {
                    by_class[c].push(ex);
                }
            }
        }
        if by_class.iter().any(|c| c.len() < spec.shots + spec.queries) {
            continue;
        }
        let mut support_ex = Vec::new();
        let mut query_ex = Vec::new();
        for members in &by_class {
            let picked = index::sample(rng, members.len(), spec.shots + spec.queries).into_vec();
            support_ex.extend(picked[..spec.shots].iter().map(|&i| members[i]));
            query_ex.extend(picked[spec.shots..].iter().map(|&i| members[i]));
        }
        support_ex.sort_unstable();
        query_ex.sort_unstable();
        let links = |exs: &[usize]| -> Vec<LabeledPair> {
            exs.iter()
                .flat_map(|&ex| {
                    tasks.iter().map(move |&task| LabeledPair {
                        example: ex,
                        task,
                        label: ds.label(ex, task).expect("class members are fully observed"),
                    })
                })
                .collect()
        };
        let mut seen = spec.seen_tasks.to_vec();
        seen.sort_unstable();
        let mut unseen = spec.unseen_tasks.to_vec();
        unseen.sort_unstable();
        return Ok(EpisodeBatch {
            support: links(&support_ex),
            query_targets: links(&query_ex),
            query_known: Vec::new(),
            support_examples: support_ex,
            query_examples: query_ex,
            seen_tasks: seen,
            unseen_tasks: unseen,
            meta_tasks: tasks,
        });
    }
    Err(Error::Sampling(format!(
        "not enough single-positive examples for a {}-way {}-shot episode",
        spec.ways, spec.shots
    )))
}
