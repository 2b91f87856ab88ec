//! Training loops for the standard, relational, meta, relational-meta and
//! few-shot settings, plus evaluation and sweeps.

mod eval;
mod sweep;

use std::collections::BTreeSet;
use std::time::Instant;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use eval::{evaluate, EvalSpec, Evaluation};
pub use sweep::{summarize, sweep_aux_ratio, sweep_csv, sweep_layers, SweepRow};

use crate::datasets::{
    example_rng, sample_fewshot, sample_meta, sample_relational, sample_relational_meta, split, EpisodeBatch,
    FewShotSpec, MetaPhase, MetaSpec, MultiLabelDataset, SplitSpec,
};
use crate::error::{Error, Result};
use crate::metrics::MetricsReport;
use crate::model::{EncodedBatch, HeadKind, MetaLinkModel, ModelConfig};
use crate::numcore::{cosine_lr, Adam, Scalar, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    Standard,
    Relational,
    Meta,
    RelationalMeta,
    Fewshot,
}

impl Setting {
    pub fn is_meta(self) -> bool {
        matches!(self, Setting::Meta | Setting::RelationalMeta | Setting::Fewshot)
    }

    pub fn uses_aux(self) -> bool {
        matches!(self, Setting::Relational | Setting::RelationalMeta)
    }
}

impl std::str::FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "standard" => Setting::Standard,
            "relational" => Setting::Relational,
            "meta" => Setting::Meta,
            "relational_meta" => Setting::RelationalMeta,
            "fewshot" => Setting::Fewshot,
            other => return Err(Error::Config(format!("unknown setting {other:?}"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub setting: Setting,
    /// Fraction of tasks revealed per example. In the standard setting it
    /// only selects which targets are scored, so results line up with a
    /// relational run of the same ratio.
    pub aux_ratio: f64,
    pub held_out_task_fraction: f64,
    /// Support examples per episode (per class in the few-shot setting).
    pub shots: usize,
    /// Query examples per meta episode (per class in the few-shot setting).
    pub query_size: usize,
    /// Meta tasks per episode; `None` uses the number of held-out tasks.
    pub ways: Option<usize>,
    pub batch_size: usize,
    pub epochs: usize,
    pub base_lr: f64,
    pub weight_decay: f64,
    pub layers: usize,
    pub hidden: Vec<usize>,
    pub embed_dim: usize,
    pub shared_weights: bool,
    pub head: HeadKind,
    pub seed: u64,
    pub eval_every: usize,
    pub split: (f64, f64, f64),
    /// Few-shot evaluation episodes.
    pub eval_episodes: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            setting: Setting::Standard,
            aux_ratio: 0.2,
            held_out_task_fraction: 0.2,
            shots: 64,
            query_size: 128,
            ways: None,
            batch_size: 128,
            epochs: 50,
            base_lr: 1e-3,
            weight_decay: 0.0,
            layers: 2,
            hidden: vec![64, 64],
            embed_dim: 64,
            shared_weights: false,
            head: HeadKind::Mlp,
            seed: 0,
            eval_every: 1,
            split: (0.8, 0.1, 0.1),
            eval_episodes: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, m: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(0.0..1.0).contains(&self.aux_ratio) {
            return bad(format!("aux_ratio must be in [0,1), got {}", self.aux_ratio));
        }
        if self.batch_size == 0 || self.query_size == 0 || self.shots == 0 || self.eval_every == 0 {
            return bad("batch_size, query_size, shots and eval_every must be >= 1".into());
        }
        if !self.base_lr.is_finite() || self.base_lr < 0.0 || !self.weight_decay.is_finite() || self.weight_decay < 0.0 {
            return bad("base_lr and weight_decay must be finite and >= 0".into());
        }
        if self.embed_dim == 0 || self.hidden.contains(&0) {
            return bad("widths must be >= 1".into());
        }
        if self.setting.is_meta() {
            if !(self.held_out_task_fraction > 0.0 && self.held_out_task_fraction < 1.0) {
                return bad("meta settings need 0 < held_out_task_fraction < 1".into());
            }
            let unseen = held_out_count(self.held_out_task_fraction, m);
            if unseen == 0 || unseen >= m {
                return bad(format!(
                    "held_out_task_fraction {} leaves {unseen} of {m} tasks unseen",
                    self.held_out_task_fraction
                ));
            }
            let ways = self.ways.unwrap_or(unseen);
            if ways == 0 || ways > m - unseen {
                return bad(format!("{ways}-way episodes need that many seen tasks"));
            }
            if self.setting == Setting::Fewshot && (ways < 2 || ways > unseen) {
                return bad(format!("few-shot needs 2 <= ways <= {unseen} held-out tasks"));
            }
        }
        Ok(())
    }

    /// Evaluation parameters used for validation and test scoring.
    pub fn eval_spec(&self) -> EvalSpec {
        EvalSpec {
            setting: self.setting,
            aux_ratio: self.aux_ratio,
            shots: self.shots,
            batch_size: self.batch_size,
            ways: self.ways,
            queries: self.query_size,
            episodes: self.eval_episodes,
            seed: derive_seed(self.seed, Stream::Eval),
        }
    }
}

fn held_out_count(fraction: f64, m: usize) -> usize {
    (fraction * m as f64).floor() as usize
}

#[derive(Clone, Copy)]
enum Stream {
    Split = 1,
    Tasks = 2,
    Init = 3,
    Train = 4,
    Eval = 5,
}

/// Independent seed for one consumer of the run seed.
fn derive_seed(seed: u64, stream: Stream) -> u64 {
    example_rng(seed, stream as usize).random()
}

/// Example split and task partition for a run; fixed by dataset size, task
/// count and config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub split: SplitSpec,
    pub seen_tasks: Vec<usize>,
    pub unseen_tasks: Vec<usize>,
}

pub fn plan<S: Scalar>(ds: &MultiLabelDataset<S>, cfg: &TrainConfig) -> Result<Plan> {
    cfg.validate(ds.m())?;
    let split = split(ds.n(), cfg.split, derive_seed(cfg.seed, Stream::Split))?;
    let m = ds.m();
    let (seen, unseen) = if cfg.setting.is_meta() {
        let k = held_out_count(cfg.held_out_task_fraction, m);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, Stream::Tasks));
        let held: BTreeSet<usize> = index::sample(&mut rng, m, k).into_iter().collect();
        ((0..m).filter(|t| !held.contains(t)).collect(), held.into_iter().collect())
    } else {
        ((0..m).collect(), Vec::new())
    };
    Ok(Plan {
        split,
        seen_tasks: seen,
        unseen_tasks: unseen,
    })
}

pub fn model_config(cfg: &TrainConfig, input_dim: usize, plan: &Plan) -> ModelConfig {
    ModelConfig {
        input_dim,
        hidden: cfg.hidden.clone(),
        embed_dim: cfg.embed_dim,
        layers: cfg.layers,
        shared_weights: cfg.shared_weights,
        head: cfg.head,
        seen_tasks: plan.seen_tasks.clone(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    /// Validation macro AUC, for epochs where it was evaluated.
    pub val_metric: Vec<Option<f64>>,
    /// Learning rate of each epoch's first step.
    pub lr: Vec<f64>,
    /// Loss of every optimizer step, in order.
    pub step_loss: Vec<f64>,
    /// Seconds per epoch. Not serialized, so artifacts stay reproducible.
    #[serde(skip)]
    pub wall_clock: Vec<f64>,
    pub best_epoch: Option<usize>,
    /// Batches in which a target pair was also an input edge.
    pub leakage_violations: usize,
    /// Training batches that touched a held-out task.
    pub meta_violations: usize,
    pub plan: Plan,
    pub test: Option<MetricsReport>,
}

/// Target pairs that also appear as known labels.
pub fn count_leaks(batch: &EpisodeBatch) -> usize {
    let known: BTreeSet<(usize, usize)> = batch.known_labels().map(|p| p.key()).collect();
    batch.query_targets.iter().filter(|p| known.contains(&p.key())).count()
}

/// Masked BCE over every query target.
pub fn episode_loss_multilabel<S: Scalar>(
    model: &MetaLinkModel<S>,
    tape: &mut Tape<'_, S>,
    batch: &EncodedBatch<S>,
) -> Result<Var> {
    if batch.targets.is_empty() {
        return Err(Error::EmptyLoss);
    }
    let out = model.forward_encoded(tape, batch)?;
    tape.bce_with_logits(out.logits, &batch.labels, &vec![S::one(); batch.labels.len()])
}

/// Softmax cross-entropy across each query example's candidate tasks,
/// averaged over examples. Every example needs exactly one positive.
pub fn episode_loss_fewshot<S: Scalar>(
    model: &MetaLinkModel<S>,
    tape: &mut Tape<'_, S>,
    batch: &EncodedBatch<S>,
) -> Result<Var> {
    let groups = fewshot_groups(batch)?;
    let out = model.forward_encoded(tape, batch)?;
    tape.softmax_ce(out.logits, &groups)
}

pub(crate) fn fewshot_groups<S: Scalar>(batch: &EncodedBatch<S>) -> Result<Vec<(Vec<usize>, usize)>> {
    let rows: BTreeSet<usize> = batch.targets.iter().map(|t| t.0).collect();
    if rows.is_empty() {
        return Err(Error::EmptyLoss);
    }
    rows.into_iter()
        .map(|r| {
            let members: Vec<usize> = (0..batch.targets.len()).filter(|&k| batch.targets[k].0 == r).collect();
            let positives: Vec<usize> = (0..members.len())
                .filter(|&i| batch.labels[members[i]] == S::one())
                .collect();
            match positives[..] {
                [p] => Ok((members, p)),
                _ => Err(Error::Contract(format!(
                    "query row {r} has {} positives, expected exactly one",
                    positives.len()
                ))),
            }
        })
        .collect()
}

fn iterations_per_epoch(cfg: &TrainConfig, n_train: usize, ways: usize) -> usize {
    let per = match cfg.setting {
        Setting::Standard | Setting::Relational => cfg.batch_size,
        Setting::Meta | Setting::RelationalMeta => cfg.query_size,
        Setting::Fewshot => cfg.query_size * ways,
    };
    n_train.div_ceil(per).max(1)
}

fn divergence(epoch: usize, step: usize, err: Error) -> Error {
    match err {
        Error::NonFinite(what) => Error::Divergence(format!("epoch {epoch}, step {step}: non-finite {what}")),
        other => other,
    }
}

/// Trains a model from scratch under `cfg`. The returned model holds the
/// parameters with the best validation macro AUC (the last ones if
/// validation never produced a value); the history carries the test report
/// of that model.
pub fn train<S: Scalar>(ds: &MultiLabelDataset<S>, cfg: &TrainConfig) -> Result<(MetaLinkModel<S>, TrainHistory)> {
    let plan = plan(ds, cfg)?;
    let mut model = MetaLinkModel::new(model_config(cfg, ds.d(), &plan), derive_seed(cfg.seed, Stream::Init))?;
    let mut history = TrainHistory {
        train_loss: Vec::new(),
        val_metric: Vec::new(),
        lr: Vec::new(),
        step_loss: Vec::new(),
        wall_clock: Vec::new(),
        best_epoch: None,
        leakage_violations: 0,
        meta_violations: 0,
        plan: plan.clone(),
        test: None,
    };
    if cfg.epochs == 0 {
        return Ok((model, history));
    }

    let ways = cfg.ways.unwrap_or(plan.unseen_tasks.len());
    let iters = iterations_per_epoch(cfg, plan.split.train.len(), ways);
    let total = cfg.epochs * iters;
    let mut adam = Adam::new(model.params()).with_weight_decay(S::lit(cfg.weight_decay));
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, Stream::Train));
    let eval_spec = cfg.eval_spec();
    let mut best: Option<(f64, crate::numcore::ParamStore<S>)> = None;
    let mut step = 0usize;

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let batches = training_batches(ds, cfg, &plan, iters, ways, &mut rng)?;
        let mut losses = Vec::with_capacity(batches.len());
        history.lr.push(cosine_lr(cfg.base_lr, step, total)?);
        for batch in &batches {
            let lr = cosine_lr(S::lit(cfg.base_lr), step, total)?;
            history.leakage_violations += usize::from(count_leaks(batch) > 0);
            if cfg.setting.is_meta() && batch.touches_any(&plan.unseen_tasks) {
                history.meta_violations += 1;
            }
            step += 1;
            if batch.query_targets.is_empty() {
                continue;
            }
            let enc = EncodedBatch::new(ds, batch)?;
            let mut tape = Tape::new(model.params());
            let loss = if cfg.setting == Setting::Fewshot {
                episode_loss_fewshot(&model, &mut tape, &enc)
            } else {
                episode_loss_multilabel(&model, &mut tape, &enc)
            }
            .map_err(|e| divergence(epoch, step, e))?;
            let value = tape.value(loss).get(0, 0).as_f64();
            let grads = tape.backward(loss)?;
            if !grads.is_finite() {
                return Err(Error::Divergence(format!("epoch {epoch}, step {step}: non-finite gradient")));
            }
            adam.step(model.params_mut(), &grads, lr)?;
            losses.push(value);
            history.step_loss.push(value);
        }
        history
            .train_loss
            .push(if losses.is_empty() { 0.0 } else { losses.iter().sum::<f64>() / losses.len() as f64 });

        let evaluate_now = (epoch + 1) % cfg.eval_every == 0 || epoch + 1 == cfg.epochs;
        let val = if evaluate_now && !plan.split.val.is_empty() {
            evaluate(&model, ds, &plan, &plan.split.val, &eval_spec)?.report.macro_auc
        } else {
            None
        };
        if let Some(v) = val {
            if best.as_ref().is_none_or(|(b, _)| v > *b) {
                best = Some((v, model.params().clone()));
                history.best_epoch = Some(epoch);
            }
        }
        history.val_metric.push(val);
        history.wall_clock.push(started.elapsed().as_secs_f64());
    }
    if let Some((_, params)) = best {
        *model.params_mut() = params;
    }
    if !plan.split.test.is_empty() {
        history.test = Some(evaluate(&model, ds, &plan, &plan.split.test, &eval_spec)?.report);
    }
    Ok((model, history))
}

fn training_batches<S: Scalar>(
    ds: &MultiLabelDataset<S>,
    cfg: &TrainConfig,
    plan: &Plan,
    iters: usize,
    ways: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<EpisodeBatch>> {
    let train = &plan.split.train;
    match cfg.setting {
        Setting::Standard | Setting::Relational => {
            let ratio = if cfg.setting == Setting::Relational { cfg.aux_ratio } else { 0.0 };
            let mut order = train.clone();
            order.shuffle(rng);
            order
                .chunks(cfg.batch_size)
                .map(|chunk| sample_relational(ds, chunk, ratio, rng, None))
                .collect()
        }
        Setting::Meta | Setting::RelationalMeta => {
            let spec = MetaSpec {
                examples: train,
                seen_tasks: &plan.seen_tasks,
                unseen_tasks: &plan.unseen_tasks,
                phase: MetaPhase::Train,
                ways: Some(ways),
                shots: cfg.shots,
                query_size: cfg.query_size.min(train.len().saturating_sub(cfg.shots)).max(1),
                aux_seed: None,
            };
            (0..iters)
                .map(|_| {
                    if cfg.setting == Setting::Meta {
                        sample_meta(ds, &spec, rng)
                    } else {
                        sample_relational_meta(ds, &spec, cfg.aux_ratio, rng)
                    }
                })
                .collect()
        }
        Setting::Fewshot => {
            let spec = FewShotSpec {
                examples: train,
                seen_tasks: &plan.seen_tasks,
                unseen_tasks: &plan.unseen_tasks,
                phase: MetaPhase::Train,
                ways,
                shots: cfg.shots,
                queries: cfg.query_size,
            };
            (0..iters).map(|_| sample_fewshot(ds, &spec, rng)).collect()
        }
    }
}

#[cfg(test)]
mod tests;
