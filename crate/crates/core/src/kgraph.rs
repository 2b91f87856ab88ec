//! Batch-local bipartite graph between data nodes and task nodes. Edges carry
//! known labels; they are stored once and read in both directions.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numcore::{DenseMatrix, Scalar};

/// A known label in node space: batch row, dataset task index, label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct KnownLabel {
    pub data: usize,
    pub task: usize,
    pub label: u8,
}

impl KnownLabel {
    pub fn new(data: usize, task: usize, label: bool) -> Self {
        Self {
            data,
            task,
            label: u8::from(label),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DataNode<S> {
    pub row: usize,
    pub init: Vec<S>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TaskNode<S> {
    /// Dataset task index.
    pub task: usize,
    pub init: Vec<S>,
    /// Initialized with the ones vector instead of a trained head row.
    pub unseen: bool,
}

/// Edge between data node `data` and task node `task` (node indices).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct Edge {
    pub data: usize,
    pub task: usize,
    pub label: u8,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NodeRef {
    Data(usize),
    Task(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KnowledgeGraph<S> {
    pub data_nodes: Vec<DataNode<S>>,
    pub task_nodes: Vec<TaskNode<S>>,
    /// Sorted by `(data, task)`.
    pub edges: Vec<Edge>,
    #[serde(skip)]
    task_position: BTreeMap<usize, usize>,
    #[serde(skip)]
    data_adj: Vec<Vec<(usize, u8)>>,
    #[serde(skip)]
    task_adj: Vec<Vec<(usize, u8)>>,
}

impl<S: Scalar> KnowledgeGraph<S> {
    /// Builds the graph for one batch.
    ///
    /// `embeddings` has one row per data node. Task nodes are created for
    /// every task named in `known`, `extra_tasks`, or `unseen_tasks`, in
    /// ascending task order. Tasks listed in `unseen_tasks` start from the
    /// ones vector; every other task needs an entry in `task_weights`.
    pub fn build(
        embeddings: &DenseMatrix<S>,
        task_weights: &BTreeMap<usize, Vec<S>>,
        unseen_tasks: &[usize],
        known: &[KnownLabel],
        extra_tasks: &[usize],
    ) -> Result<Self> {
        let (n, dim) = embeddings.shape();
        let unseen: BTreeSet<usize> = unseen_tasks.iter().copied().collect();
        let tasks: BTreeSet<usize> = known
            .iter()
            .map(|k| k.task)
            .chain(extra_tasks.iter().copied())
            .chain(unseen.iter().copied())
            .collect();

        let mut task_nodes = Vec::with_capacity(tasks.len());
        let mut task_position = BTreeMap::new();
        for &task in &tasks {
            let is_unseen = unseen.contains(&task);
            let init = if is_unseen {
                vec![S::one(); dim]
            } else {
                let w = task_weights
                    .get(&task)
                    .ok_or_else(|| Error::Lookup(format!("no task head for task {task}")))?;
                if w.len() != dim {
                    return Err(Error::Dimension {
                        op: "task node init",
                        left: (1, w.len()),
                        right: (1, dim),
                    });
                }
                w.clone()
            };
            task_position.insert(task, task_nodes.len());
            task_nodes.push(TaskNode {
                task,
                init,
                unseen: is_unseen,
            });
        }

        let mut edges = Vec::with_capacity(known.len());
        for k in known {
            if k.data >= n {
                return Err(Error::IndexOutOfRange { index: k.data, len: n });
            }
            if k.label > 1 {
                return Err(Error::Construction(format!(
                    "edge ({}, {}) has label {}",
                    k.data, k.task, k.label
                )));
            }
            edges.push(Edge {
                data: k.data,
                task: task_position[&k.task],
                label: k.label,
            });
        }
        edges.sort_unstable();
        if let Some(w) = edges.windows(2).find(|w| (w[0].data, w[0].task) == (w[1].data, w[1].task)) {
            return Err(Error::Construction(format!(
                "duplicate edge (data {}, task {})",
                w[0].data, task_nodes[w[0].task].task
            )));
        }

        let mut data_adj = vec![Vec::new(); n];
        let mut task_adj = vec![Vec::new(); task_nodes.len()];
        for e in &edges {
            data_adj[e.data].push((e.task, e.label));
            task_adj[e.task].push((e.data, e.label));
        }
        // Edges are sorted by data node, so task_adj is already in order;
        // data_adj rows are sorted by task node for the same reason.
        let data_nodes = (0..n)
            .map(|row| DataNode {
                row,
                init: embeddings.row(row).to_vec(),
            })
            .collect();
        Ok(Self {
            data_nodes,
            task_nodes,
            edges,
            task_position,
            data_adj,
            task_adj,
        })
    }

    pub fn num_data(&self) -> usize {
        self.data_nodes.len()
    }

    pub fn num_tasks(&self) -> usize {
        self.task_nodes.len()
    }

    pub fn dim(&self) -> usize {
        self.data_nodes
            .first()
            .map(|d| d.init.len())
            .or_else(|| self.task_nodes.first().map(|t| t.init.len()))
            .unwrap_or(0)
    }

    /// Task node index of dataset task `task`.
    pub fn task_node(&self, task: usize) -> Result<usize> {
        self.task_position
            .get(&task)
            .copied()
            .ok_or_else(|| Error::Lookup(format!("task {task} has no node")))
    }

    /// Incident nodes with edge labels, ordered by neighbor index.
    pub fn neighbors(&self, node: NodeRef) -> Result<Vec<(NodeRef, u8)>> {
        match node {
            NodeRef::Data(i) => self
                .data_adj
                .get(i)
                .map(|adj| adj.iter().map(|&(t, y)| (NodeRef::Task(t), y)).collect())
                .ok_or_else(|| Error::Lookup(format!("no data node {i}"))),
            NodeRef::Task(j) => self
                .task_adj
                .get(j)
                .map(|adj| adj.iter().map(|&(d, y)| (NodeRef::Data(d), y)).collect())
                .ok_or_else(|| Error::Lookup(format!("no task node {j}"))),
        }
    }

    pub fn has_edge(&self, data: usize, task_node: usize) -> bool {
        self.data_adj
            .get(data)
            .is_some_and(|adj| adj.binary_search_by_key(&task_node, |&(t, _)| t).is_ok())
    }

    /// Maps `(data row, dataset task)` targets to `(data node, task node)`,
    /// rejecting any target that is also an edge.
    pub fn resolve_targets(&self, targets: &[(usize, usize)]) -> Result<Vec<(usize, usize)>> {
        targets
            .iter()
            .map(|&(data, task)| {
                if data >= self.num_data() {
                    return Err(Error::IndexOutOfRange {
                        index: data,
                        len: self.num_data(),
                    });
                }
                let t = self.task_node(task)?;
                if self.has_edge(data, t) {
                    return Err(Error::Leakage { data, task });
                }
                Ok((data, t))
            })
            .collect()
    }

    /// Debug dump; the layout is not a stable format.
    pub fn to_json(&self) -> Result<String>
    where
        S: Serialize,
    {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
