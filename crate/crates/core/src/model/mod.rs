//! Feature extractor, task heads, and the edge-labeled message-passing
//! predictor over a batch's knowledge graph.

mod checkpoint;

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::{EpisodeBatch, MultiLabelDataset};
use crate::error::{Error, Result};
use crate::kgraph::{KnowledgeGraph, KnownLabel};
use crate::numcore::{DenseMatrix, ParamId, ParamStore, Scalar, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    /// `Concat(h_i, h_j) → D → 1` with a ReLU in between.
    Mlp,
    /// `Σ_k h_i[k]·h_j[k]`, no parameters.
    Dot,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_dim: usize,
    /// Hidden widths of the feature extractor.
    pub hidden: Vec<usize>,
    /// Embedding width `D`, shared by data embeddings, task heads and every
    /// message-passing layer.
    pub embed_dim: usize,
    pub layers: usize,
    pub shared_weights: bool,
    pub head: HeadKind,
    /// Dataset task indices that own a trained head row, ascending.
    pub seen_tasks: Vec<usize>,
}

impl ModelConfig {
    pub fn new(input_dim: usize, seen_tasks: Vec<usize>) -> Self {
        Self {
            input_dim,
            hidden: vec![64, 64],
            embed_dim: 64,
            layers: 2,
            shared_weights: false,
            head: HeadKind::Mlp,
            seen_tasks,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.embed_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::Config("widths must be >= 1".into()));
        }
        if self.seen_tasks.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("seen tasks must be strictly ascending".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Dense {
    w: ParamId,
    b: ParamId,
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct LayerIds {
    w_t2d: ParamId,
    w_d2t: ParamId,
    o: ParamId,
    u_data: ParamId,
    u_task: ParamId,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum HeadIds {
    Mlp(Dense, Dense),
    Dot,
}

#[derive(Clone, Debug, PartialEq)]
struct Ids {
    extractor: Vec<Dense>,
    task_heads: ParamId,
    layers: Vec<LayerIds>,
    heads: Vec<HeadIds>,
}

/// What shape each named parameter must have for a config.
fn layout(cfg: &ModelConfig) -> Vec<(String, (usize, usize))> {
    let d = cfg.embed_dim;
    let mut out = Vec::new();
    let mut widths = vec![cfg.input_dim];
    widths.extend(&cfg.hidden);
    widths.push(d);
    for (l, w) in widths.windows(2).enumerate() {
        out.push((format!("extractor.{l}.w"), (w[0], w[1])));
        out.push((format!("extractor.{l}.b"), (1, w[1])));
    }
    out.push(("task_heads".into(), (cfg.seen_tasks.len(), d)));
    for l in 1..=cfg.layers {
        if cfg.shared_weights {
            out.push((format!("gnn.{l}.w"), (d, d)));
        } else {
            out.push((format!("gnn.{l}.w_t2d"), (d, d)));
            out.push((format!("gnn.{l}.w_d2t"), (d, d)));
        }
        out.push((format!("gnn.{l}.o"), (1, d)));
        if cfg.shared_weights {
            out.push((format!("gnn.{l}.u"), (2 * d, d)));
        } else {
            out.push((format!("gnn.{l}.u_data"), (2 * d, d)));
            out.push((format!("gnn.{l}.u_task"), (2 * d, d)));
        }
    }
    if cfg.head == HeadKind::Mlp {
        let first = if cfg.layers == 0 { 0 } else { 1 };
        for l in first..=cfg.layers {
            out.push((format!("head.{l}.w1"), (2 * d, d)));
            out.push((format!("head.{l}.b1"), (1, d)));
            out.push((format!("head.{l}.w2"), (d, 1)));
            out.push((format!("head.{l}.b2"), (1, 1)));
        }
    }
    out
}

fn resolve_ids<S: Scalar>(cfg: &ModelConfig, store: &ParamStore<S>) -> Result<Ids> {
    let expected = layout(cfg);
    if expected.len() != store.len() {
        return Err(Error::Config(format!(
            "expected {} parameters, found {}",
            expected.len(),
            store.len()
        )));
    }
    for (name, shape) in &expected {
        let id = store
            .id_of(name)
            .ok_or_else(|| Error::Config(format!("missing parameter {name}")))?;
        if store.get(id).shape() != *shape {
            return Err(Error::Dimension {
                op: "parameter shape",
                left: store.get(id).shape(),
                right: *shape,
            });
        }
    }
    let id = |name: String| store.id_of(&name).expect("checked above");
    let extractor = (0..=cfg.hidden.len())
        .map(|l| Dense {
            w: id(format!("extractor.{l}.w")),
            b: id(format!("extractor.{l}.b")),
        })
        .collect();
    let layers = (1..=cfg.layers)
        .map(|l| {
            let (w_t2d, w_d2t, u_data, u_task) = if cfg.shared_weights {
                let w = id(format!("gnn.{l}.w"));
                let u = id(format!("gnn.{l}.u"));
                (w, w, u, u)
            } else {
                (
                    id(format!("gnn.{l}.w_t2d")),
                    id(format!("gnn.{l}.w_d2t")),
                    id(format!("gnn.{l}.u_data")),
                    id(format!("gnn.{l}.u_task")),
                )
            };
            LayerIds {
                w_t2d,
                w_d2t,
                o: id(format!("gnn.{l}.o")),
                u_data,
                u_task,
            }
        })
        .collect();
    let first = if cfg.layers == 0 { 0 } else { 1 };
    let heads = (first..=cfg.layers)
        .map(|l| match cfg.head {
            HeadKind::Mlp => HeadIds::Mlp(
                Dense {
                    w: id(format!("head.{l}.w1")),
                    b: id(format!("head.{l}.b1")),
                },
                Dense {
                    w: id(format!("head.{l}.w2")),
                    b: id(format!("head.{l}.b2")),
                },
            ),
            HeadKind::Dot => HeadIds::Dot,
        })
        .collect();
    Ok(Ids {
        extractor,
        task_heads: id("task_heads".into()),
        layers,
        heads,
    })
}

/// A batch translated into node space: row `r` of `features` is data node
/// `r`, known labels and targets reference rows and dataset task indices.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedBatch<S> {
    pub features: DenseMatrix<S>,
    pub known: Vec<KnownLabel>,
    pub ones_tasks: Vec<usize>,
    pub targets: Vec<(usize, usize)>,
    pub labels: Vec<S>,
    /// Dataset example of each row.
    pub examples: Vec<usize>,
}

impl<S: Scalar> EncodedBatch<S> {
    pub fn new(ds: &MultiLabelDataset<S>, batch: &EpisodeBatch) -> Result<Self> {
        let examples = batch.examples();
        let features = ds.features().select_rows(&examples)?;
        let row_of: BTreeMap<usize, usize> = examples.iter().enumerate().map(|(r, &e)| (e, r)).collect();
        let row = |e: usize| {
            row_of
                .get(&e)
                .copied()
                .ok_or_else(|| Error::Lookup(format!("example {e} is not in the batch")))
        };
        let known = batch
            .known_labels()
            .map(|p| Ok(KnownLabel::new(row(p.example)?, p.task, p.label)))
            .collect::<Result<_>>()?;
        let targets = batch
            .query_targets
            .iter()
            .map(|p| Ok((row(p.example)?, p.task)))
            .collect::<Result<_>>()?;
        let labels = batch
            .query_targets
            .iter()
            .map(|p| if p.label { S::one() } else { S::zero() })
            .collect();
        Ok(Self {
            features,
            known,
            ones_tasks: batch.meta_tasks.clone(),
            targets,
            labels,
            examples,
        })
    }
}

/// Result of a forward pass.
pub struct Forward<S> {
    /// `|targets| × 1` summed logits.
    pub logits: Var,
    /// One `|targets| × 1` logit per prediction head, before summation.
    pub layer_logits: Vec<Var>,
    pub graph: KnowledgeGraph<S>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetaLinkModel<S> {
    config: ModelConfig,
    params: ParamStore<S>,
    ids: Ids,
}

impl<S: Scalar> MetaLinkModel<S> {
    /// Random initialization: LeCun-normal weights, zero biases.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        for (name, (r, c)) in layout(&config) {
            let value = if name.ends_with(".b") || name.ends_with(".b1") || name.ends_with(".b2") {
                DenseMatrix::zeros(r, c)
            } else {
                DenseMatrix::random_normal(r, c, 1.0 / (r.max(1) as f64).sqrt(), &mut rng)
            };
            params.add(name, value)?;
        }
        let ids = resolve_ids(&config, &params)?;
        Ok(Self { config, params, ids })
    }

    pub fn from_parts(config: ModelConfig, params: ParamStore<S>) -> Result<Self> {
        config.validate()?;
        let ids = resolve_ids(&config, &params)?;
        Ok(Self { config, params, ids })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<S> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<S> {
        &mut self.params
    }

    /// Adds `N(0, std²)` noise to every parameter. Fresh models have zero
    /// biases, which can park ReLU inputs exactly on the kink (a data row
    /// with every hidden unit dead embeds to exactly zero); finite-difference
    /// checks need a generic point instead.
    pub fn perturb<R: Rng + ?Sized>(&mut self, std: f64, rng: &mut R) -> Result<()> {
        let ids: Vec<ParamId> = self.params.ids().collect();
        for id in ids {
            let (r, c) = self.params.get(id).shape();
            let noisy = self.params.get(id).add(&DenseMatrix::random_normal(r, c, std, rng))?;
            *self.params.get_mut(id) = noisy;
        }
        Ok(())
    }

    /// Head row of a seen task.
    pub fn task_row(&self, task: usize) -> Option<usize> {
        self.config.seen_tasks.binary_search(&task).ok()
    }

    /// `f_θ(X)`: the MLP with ReLU between layers and a linear output.
    pub fn extract_features(&self, tape: &mut Tape<'_, S>, x: Var) -> Result<Var> {
        let mut h = x;
        let last = self.ids.extractor.len() - 1;
        for (l, layer) in self.ids.extractor.iter().enumerate() {
            let w = tape.param(layer.w);
            let b = tape.param(layer.b);
            h = tape.affine(h, w, b)?;
            if l < last {
                h = tape.relu(h)?;
            }
        }
        Ok(h)
    }

    /// Edge predictor on the target pairs `(rows[k], cols[k])`. The first MLP
    /// layer on `Concat(h_i, h_j)` is split into its data and task halves and
    /// applied per node before gathering, which is the same affine map.
    fn head_logit(
        &self,
        tape: &mut Tape<'_, S>,
        head: HeadIds,
        (h_data, rows): (Var, &[usize]),
        (h_task, cols): (Var, &[usize]),
    ) -> Result<Var> {
        match head {
            HeadIds::Mlp(first, second) => {
                let d = self.config.embed_dim;
                let w1 = tape.param(first.w);
                let top: Vec<usize> = (0..d).collect();
                let bottom: Vec<usize> = (d..2 * d).collect();
                let w_data = tape.gather_rows(w1, &top)?;
                let w_task = tape.gather_rows(w1, &bottom)?;
                let p_data = tape.matmul(h_data, w_data)?;
                let p_task = tape.matmul(h_task, w_task)?;
                let pi = tape.gather_rows(p_data, rows)?;
                let pj = tape.gather_rows(p_task, cols)?;
                let x = tape.add(pi, pj)?;
                let b1 = tape.param(first.b);
                let h = tape.add_bias(x, b1)?;
                let h = tape.relu(h)?;
                let (w2, b2) = (tape.param(second.w), tape.param(second.b));
                tape.affine(h, w2, b2)
            }
            HeadIds::Dot => {
                let hi = tape.gather_rows(h_data, rows)?;
                let hj = tape.gather_rows(h_task, cols)?;
                let p = tape.mul(hi, hj)?;
                tape.row_sum(p)
            }
        }
    }

    /// One message-passing layer. For every node `v`,
    /// `h_v' = Concat(Mean_u ReLU(W_dir·h_u + O·y_uv), h_v) · U_type(v)`,
    /// with the empty mean taken as the zero vector.
    fn layer(
        &self,
        tape: &mut Tape<'_, S>,
        ids: LayerIds,
        graph: &KnowledgeGraph<S>,
        h_data: Var,
        h_task: Var,
    ) -> Result<(Var, Var)> {
        let d = self.config.embed_dim;
        let (n_d, n_t) = (graph.num_data(), graph.num_tasks());
        let (agg_data, agg_task) = if graph.edges.is_empty() {
            (
                tape.constant(DenseMatrix::zeros(n_d, d))?,
                tape.constant(DenseMatrix::zeros(n_t, d))?,
            )
        } else {
            let di: Vec<usize> = graph.edges.iter().map(|e| e.data).collect();
            let ti: Vec<usize> = graph.edges.iter().map(|e| e.task).collect();
            let y = DenseMatrix::from_vec(
                graph.edges.len(),
                1,
                graph.edges.iter().map(|e| S::lit(f64::from(e.label))).collect(),
            )?;
            let y = tape.constant(y)?;
            let o = tape.param(ids.o);
            let label_term = tape.matmul(y, o)?;

            // Projecting node-wise before gathering costs O(nodes) matmuls
            // instead of O(edges), with the same per-edge value.
            let w_t2d = tape.param(ids.w_t2d);
            let proj_task = tape.matmul(h_task, w_t2d)?;
            let to_data = tape.gather_rows(proj_task, &ti)?;
            let to_data = tape.add(to_data, label_term)?;
            let to_data = tape.relu(to_data)?;
            let agg_data = tape.scatter_mean(to_data, &di, n_d)?;

            let w_d2t = tape.param(ids.w_d2t);
            let proj_data = tape.matmul(h_data, w_d2t)?;
            let to_task = tape.gather_rows(proj_data, &di)?;
            let to_task = tape.add(to_task, label_term)?;
            let to_task = tape.relu(to_task)?;
            let agg_task = tape.scatter_mean(to_task, &ti, n_t)?;
            (agg_data, agg_task)
        };
        let cat_data = tape.concat_cols(agg_data, h_data)?;
        let u_data = tape.param(ids.u_data);
        let new_data = tape.matmul(cat_data, u_data)?;
        let cat_task = tape.concat_cols(agg_task, h_task)?;
        let u_task = tape.param(ids.u_task);
        let new_task = tape.matmul(cat_task, u_task)?;
        Ok((new_data, new_task))
    }

    /// Initial task-node embeddings: trained head rows for seen tasks, the
    /// ones vector for tasks flagged unseen.
    fn task_init(&self, tape: &mut Tape<'_, S>, graph: &KnowledgeGraph<S>) -> Result<Var> {
        let d = self.config.embed_dim;
        let heads = tape.param(self.ids.task_heads);
        let mut parts = Vec::with_capacity(graph.num_tasks());
        for node in &graph.task_nodes {
            let part = if node.unseen {
                tape.constant(DenseMatrix::ones(1, d))?
            } else {
                let row = self
                    .task_row(node.task)
                    .ok_or_else(|| Error::Lookup(format!("task {} has no head", node.task)))?;
                tape.gather_rows(heads, &[row])?
            };
            parts.push(part);
        }
        if parts.is_empty() {
            return tape.constant(DenseMatrix::zeros(0, d));
        }
        tape.concat_rows(&parts)
    }

    /// Embeds the batch, builds its graph, runs the layers, and returns the
    /// sum of every layer head's logit for each `(row, task)` target.
    pub fn forward(
        &self,
        tape: &mut Tape<'_, S>,
        features: &DenseMatrix<S>,
        known: &[KnownLabel],
        ones_tasks: &[usize],
        targets: &[(usize, usize)],
    ) -> Result<Forward<S>> {
        let x = tape.constant(features.clone())?;
        let z = self.extract_features(tape, x)?;

        let heads = self.params.get(self.ids.task_heads);
        let weights: BTreeMap<usize, Vec<S>> = self
            .config
            .seen_tasks
            .iter()
            .enumerate()
            .map(|(r, &t)| (t, heads.row(r).to_vec()))
            .collect();
        let target_tasks: Vec<usize> = targets.iter().map(|t| t.1).collect();
        let graph = KnowledgeGraph::build(tape.value(z), &weights, ones_tasks, known, &target_tasks)?;
        let pairs = graph.resolve_targets(targets)?;
        if pairs.is_empty() {
            return Err(Error::EmptyLoss);
        }
        let rows: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let cols: Vec<usize> = pairs.iter().map(|p| p.1).collect();

        let mut h_data = z;
        let mut h_task = self.task_init(tape, &graph)?;
        let mut layer_logits = Vec::with_capacity(self.ids.heads.len());
        if self.ids.layers.is_empty() {
            layer_logits.push(self.head_logit(tape, self.ids.heads[0], (h_data, &rows), (h_task, &cols))?);
        }
        for (l, &layer) in self.ids.layers.iter().enumerate() {
            (h_data, h_task) = self.layer(tape, layer, &graph, h_data, h_task)?;
            layer_logits.push(self.head_logit(tape, self.ids.heads[l], (h_data, &rows), (h_task, &cols))?);
        }
        let mut logits = layer_logits[0];
        for &extra in &layer_logits[1..] {
            logits = tape.add(logits, extra)?;
        }
        Ok(Forward {
            logits,
            layer_logits,
            graph,
        })
    }

    pub fn forward_encoded(&self, tape: &mut Tape<'_, S>, batch: &EncodedBatch<S>) -> Result<Forward<S>> {
        self.forward(tape, &batch.features, &batch.known, &batch.ones_tasks, &batch.targets)
    }

    /// Logits for the batch's targets, in `query_targets` order.
    pub fn predict(&self, batch: &EncodedBatch<S>) -> Result<Vec<S>> {
        let mut tape = Tape::new(&self.params);
        let out = self.forward_encoded(&mut tape, batch)?;
        Ok(tape.value(out.logits).values().to_vec())
    }
}

#[cfg(test)]
mod tests;
