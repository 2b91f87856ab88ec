//! Matrix-valued reverse-mode differentiation.
//!
//! A [`ParamStore`] owns named trainable matrices across iterations. Each
//! forward pass records onto a fresh [`Tape`] that borrows the store;
//! [`Tape::backward`] returns one gradient per registered parameter, zero
//! for parameters the loss never touched. A parameter used at several
//! places in the graph (shared weights) accumulates into a single slot.

use serde::{Deserialize, Serialize};

use super::loss::{bce_with_logits, log_sum_exp, sigmoid_scalar};
use super::{DenseMatrix, Scalar};
use crate::error::{Error, Result};

/// Handle to a parameter slot in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable matrices, in registration order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<S> {
    names: Vec<String>,
    values: Vec<DenseMatrix<S>>,
}

impl<S: Scalar> Default for ParamStore<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Registers a parameter. Names must be unique.
    pub fn add(&mut self, name: impl Into<String>, value: DenseMatrix<S>) -> Result<ParamId> {
        let name = name.into();
        if self.names.contains(&name) {
            return Err(Error::Contract(format!("duplicate parameter name {name}")));
        }
        self.names.push(name);
        self.values.push(value);
        Ok(ParamId(self.values.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &DenseMatrix<S> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut DenseMatrix<S> {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &DenseMatrix<S>)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.values().len()).sum()
    }
}

/// Gradients aligned one-to-one with the parameters of a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<S> {
    grads: Vec<DenseMatrix<S>>,
}

impl<S: Scalar> Gradients<S> {
    /// All-zero accumulators shaped like `store`.
    pub fn zeros_like(store: &ParamStore<S>) -> Self {
        Self {
            grads: store
                .values
                .iter()
                .map(|v| DenseMatrix::zeros(v.rows(), v.cols()))
                .collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &DenseMatrix<S> {
        &self.grads[id.0]
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &DenseMatrix<S>> {
        self.grads.iter()
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().all(DenseMatrix::is_finite)
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<S> {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    ConcatCols(Var, Var),
    ConcatRows(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    ScatterMean {
        src: Var,
        dest: Vec<usize>,
        counts: Vec<usize>,
    },
    MeanRows(Vec<Var>),
    RowSum(Var),
    Sum(Var),
    Bce {
        logits: Var,
        targets: Vec<S>,
        mask: Vec<S>,
    },
    SoftmaxCe {
        logits: Var,
        groups: Vec<(Vec<usize>, usize)>,
    },
}

struct Node<S> {
    value: DenseMatrix<S>,
    op: Op<S>,
}

/// Recording of one forward computation over a borrowed [`ParamStore`].
pub struct Tape<'p, S> {
    params: &'p ParamStore<S>,
    nodes: Vec<Node<S>>,
}

fn dim_err(op: &'static str, a: (usize, usize), b: (usize, usize)) -> Error {
    Error::Dimension {
        op,
        left: a,
        right: b,
    }
}

impl<'p, S: Scalar> Tape<'p, S> {
    pub fn new(params: &'p ParamStore<S>) -> Self {
        Self {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn params(&self) -> &'p ParamStore<S> {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &DenseMatrix<S> {
        &self.nodes[v.0].value
    }

    fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: DenseMatrix<S>, op: Op<S>, name: &'static str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(name));
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records a non-trainable input.
    pub fn constant(&mut self, value: DenseMatrix<S>) -> Result<Var> {
        self.push(value, Op::Constant, "constant")
    }

    /// Records a read of a registered parameter.
    pub fn param(&mut self, id: ParamId) -> Var {
        let value = self.params.get(id).clone();
        self.nodes.push(Node {
            value,
            op: Op::Param(id),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        self.push(value, Op::MatMul(a, b), "matmul")
    }

    /// Adds the single row `bias` to every row of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xs, bs) = (self.shape(x), self.shape(bias));
        if bs.0 != 1 || bs.1 != xs.1 {
            return Err(dim_err("add_bias", xs, bs));
        }
        let mut value = self.value(x).clone();
        let b = self.value(bias).values().to_vec();
        for r in 0..xs.0 {
            for (o, &bv) in value.row_mut(r).iter_mut().zip(&b) {
                *o += bv;
            }
        }
        self.push(value, Op::AddBias(x, bias), "add_bias")
    }

    /// Row i of the output is `x_i · w + b`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        if xs.1 != ws.0 {
            return Err(dim_err("affine", xs, ws));
        }
        if bs != (1, ws.1) {
            return Err(dim_err("affine", ws, bs));
        }
        let xw = self.matmul(x, w)?;
        self.add_bias(xw, b)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        self.push(value, Op::Add(a, b), "add")
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(dim_err("mul", sa, sb));
        }
        let vals = self
            .value(a)
            .values()
            .iter()
            .zip(self.value(b).values())
            .map(|(&x, &y)| x * y)
            .collect();
        let value = DenseMatrix::from_vec(sa.0, sa.1, vals)?;
        self.push(value, Op::Mul(a, b), "mul")
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).map(|v| v.max(S::zero()));
        self.push(value, Op::Relu(x), "relu")
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).map(sigmoid_scalar);
        self.push(value, Op::Sigmoid(x), "sigmoid")
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.0 != sb.0 {
            return Err(dim_err("concat_cols", sa, sb));
        }
        let (va, vb) = (self.value(a), self.value(b));
        let mut vals = Vec::with_capacity(sa.0 * (sa.1 + sb.1));
        for r in 0..sa.0 {
            vals.extend_from_slice(va.row(r));
            vals.extend_from_slice(vb.row(r));
        }
        let value = DenseMatrix::from_vec(sa.0, sa.1 + sb.1, vals)?;
        self.push(value, Op::ConcatCols(a, b), "concat_cols")
    }

    /// Stacks the inputs vertically. All inputs need the same column count.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::Contract("concat_rows of nothing".into()));
        };
        let cols = self.shape(first).1;
        let mut vals = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.1 != cols {
                return Err(dim_err("concat_rows", self.shape(first), s));
            }
            rows += s.0;
            vals.extend_from_slice(self.value(p).values());
        }
        let value = DenseMatrix::from_vec(rows, cols, vals)?;
        self.push(value, Op::ConcatRows(parts.to_vec()), "concat_rows")
    }

    /// Row k of the output is row `indices[k]` of `x`; repeats allowed.
    pub fn gather_rows(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let value = self.value(x).select_rows(indices)?;
        self.push(value, Op::GatherRows(x, indices.to_vec()), "gather_rows")
    }

    /// Averages rows of `src` into `out_rows` buckets: row e contributes to
    /// bucket `dest[e]`. Empty buckets are zero rows.
    pub fn scatter_mean(&mut self, src: Var, dest: &[usize], out_rows: usize) -> Result<Var> {
        let (n, c) = self.shape(src);
        if dest.len() != n {
            return Err(dim_err("scatter_mean", (n, c), (dest.len(), 1)));
        }
        let mut counts = vec![0usize; out_rows];
        for &d in dest {
            if d >= out_rows {
                return Err(Error::IndexOutOfRange {
                    index: d,
                    len: out_rows,
                });
            }
            counts[d] += 1;
        }
        let mut value = DenseMatrix::zeros(out_rows, c);
        let sv = self.value(src);
        for (e, &d) in dest.iter().enumerate() {
            let k = S::one() / S::lit(counts[d] as f64);
            for (o, &v) in value.row_mut(d).iter_mut().zip(sv.row(e)) {
                *o += v * k;
            }
        }
        self.push(
            value,
            Op::ScatterMean {
                src,
                dest: dest.to_vec(),
                counts,
            },
            "scatter_mean",
        )
    }

    /// Mean of a list of `1 × cols` rows; the empty list yields the zero row.
    pub fn mean_rows(&mut self, rows: &[Var], cols: usize) -> Result<Var> {
        let mut value = DenseMatrix::zeros(1, cols);
        if !rows.is_empty() {
            let k = S::one() / S::lit(rows.len() as f64);
            for &r in rows {
                let s = self.shape(r);
                if s != (1, cols) {
                    return Err(dim_err("mean_rows", (1, cols), s));
                }
                for (o, &v) in value.row_mut(0).iter_mut().zip(self.value(r).values()) {
                    *o += v * k;
                }
            }
        }
        self.push(value, Op::MeanRows(rows.to_vec()), "mean_rows")
    }

    /// `n × c → n × 1` row sums.
    pub fn row_sum(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let vals = (0..v.rows()).map(|r| v.row(r).iter().copied().sum()).collect();
        let value = DenseMatrix::from_vec(v.rows(), 1, vals)?;
        self.push(value, Op::RowSum(x), "row_sum")
    }

    /// Sum of all entries as a `1 × 1` value.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let value = DenseMatrix::from_vec(1, 1, vec![self.value(x).sum()])?;
        self.push(value, Op::Sum(x), "sum")
    }

    /// Masked mean binary cross-entropy on logits (any shape, read flat).
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[S], mask: &[S]) -> Result<Var> {
        let loss = bce_with_logits(self.value(logits).values(), targets, mask)?;
        let value = DenseMatrix::from_vec(1, 1, vec![loss])?;
        self.push(
            value,
            Op::Bce {
                logits,
                targets: targets.to_vec(),
                mask: mask.to_vec(),
            },
            "bce_with_logits",
        )
    }

    /// Softmax cross-entropy averaged over groups. Each group lists the flat
    /// logit positions competing with each other and the position (within
    /// the group) of the correct one.
    pub fn softmax_ce(&mut self, logits: Var, groups: &[(Vec<usize>, usize)]) -> Result<Var> {
        if groups.is_empty() {
            return Err(Error::EmptyLoss);
        }
        let flat = self.value(logits).values();
        let mut total = S::zero();
        for (members, target) in groups {
            if *target >= members.len() {
                return Err(Error::IndexOutOfRange {
                    index: *target,
                    len: members.len(),
                });
            }
            let mut row = Vec::with_capacity(members.len());
            for &p in members {
                row.push(*flat.get(p).ok_or(Error::IndexOutOfRange {
                    index: p,
                    len: flat.len(),
                })?);
            }
            total += log_sum_exp(&row) - row[*target];
        }
        let value = DenseMatrix::from_vec(1, 1, vec![total / S::lit(groups.len() as f64)])?;
        self.push(
            value,
            Op::SoftmaxCe {
                logits,
                groups: groups.to_vec(),
            },
            "softmax_ce",
        )
    }

    /// Reverse sweep from a scalar `loss`, returning one gradient per
    /// parameter of the store.
    pub fn backward(&self, loss: Var) -> Result<Gradients<S>> {
        if self.shape(loss) != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a 1x1 loss, got {:?}",
                self.shape(loss)
            )));
        }
        let mut grads = Gradients::zeros_like(self.params);
        let mut adj: Vec<Option<DenseMatrix<S>>> = (0..=loss.0).map(|_| None).collect();
        adj[loss.0] = Some(DenseMatrix::ones(1, 1));

        fn acc<S: Scalar>(adj: &mut [Option<DenseMatrix<S>>], v: Var, g: DenseMatrix<S>) {
            match &mut adj[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => grads.grads[id.0].add_assign(&g),
                Op::MatMul(a, b) => {
                    let ga = g.matmul_nt(self.value(*b));
                    let gb = self.value(*a).matmul_tn(&g);
                    acc(&mut adj, *a, ga);
                    acc(&mut adj, *b, gb);
                }
                Op::AddBias(x, b) => {
                    let mut gb = DenseMatrix::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (o, &v) in gb.row_mut(0).iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    acc(&mut adj, *b, gb);
                    acc(&mut adj, *x, g);
                }
                Op::Add(a, b) => {
                    acc(&mut adj, *a, g.clone());
                    acc(&mut adj, *b, g);
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let mut ga = g.clone();
                    for (o, &y) in ga.values_mut().iter_mut().zip(vb.values()) {
                        *o *= y;
                    }
                    let mut gb = g;
                    for (o, &x) in gb.values_mut().iter_mut().zip(va.values()) {
                        *o *= x;
                    }
                    acc(&mut adj, *a, ga);
                    acc(&mut adj, *b, gb);
                }
                Op::Relu(x) => {
                    let mut gx = g;
                    for (o, &v) in gx.values_mut().iter_mut().zip(self.value(*x).values()) {
                        if v <= S::zero() {
                            *o = S::zero();
                        }
                    }
                    acc(&mut adj, *x, gx);
                }
                Op::Sigmoid(x) => {
                    let mut gx = g;
                    for (o, &s) in gx.values_mut().iter_mut().zip(node.value.values()) {
                        *o *= s * (S::one() - s);
                    }
                    acc(&mut adj, *x, gx);
                }
                Op::ConcatCols(a, b) => {
                    let ca = self.shape(*a).1;
                    let cb = self.shape(*b).1;
                    let mut ga = DenseMatrix::zeros(g.rows(), ca);
                    let mut gb = DenseMatrix::zeros(g.rows(), cb);
                    for r in 0..g.rows() {
                        ga.row_mut(r).copy_from_slice(&g.row(r)[..ca]);
                        gb.row_mut(r).copy_from_slice(&g.row(r)[ca..]);
                    }
                    acc(&mut adj, *a, ga);
                    acc(&mut adj, *b, gb);
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let (r, c) = self.shape(p);
                        let vals = g.values()[offset * c..(offset + r) * c].to_vec();
                        offset += r;
                        acc(&mut adj, p, DenseMatrix::from_vec(r, c, vals)?);
                    }
                }
                Op::GatherRows(x, indices) => {
                    let (r, c) = self.shape(*x);
                    let mut gx = DenseMatrix::zeros(r, c);
                    for (k, &i) in indices.iter().enumerate() {
                        for (o, &v) in gx.row_mut(i).iter_mut().zip(g.row(k)) {
                            *o += v;
                        }
                    }
                    acc(&mut adj, *x, gx);
                }
                Op::ScatterMean { src, dest, counts } => {
                    let (r, c) = self.shape(*src);
                    let mut gs = DenseMatrix::zeros(r, c);
                    for (e, &d) in dest.iter().enumerate() {
                        let k = S::one() / S::lit(counts[d] as f64);
                        for (o, &v) in gs.row_mut(e).iter_mut().zip(g.row(d)) {
                            *o = v * k;
                        }
                    }
                    acc(&mut adj, *src, gs);
                }
                Op::MeanRows(rows) => {
                    if !rows.is_empty() {
                        let part = g.scaled(S::one() / S::lit(rows.len() as f64));
                        for &r in rows {
                            acc(&mut adj, r, part.clone());
                        }
                    }
                }
                Op::RowSum(x) => {
                    let (r, c) = self.shape(*x);
                    let mut gx = DenseMatrix::zeros(r, c);
                    for i in 0..r {
                        let gi = g.get(i, 0);
                        gx.row_mut(i).iter_mut().for_each(|o| *o = gi);
                    }
                    acc(&mut adj, *x, gx);
                }
                Op::Sum(x) => {
                    let (r, c) = self.shape(*x);
                    acc(&mut adj, *x, DenseMatrix::filled(r, c, g.get(0, 0)));
                }
                Op::Bce {
                    logits,
                    targets,
                    mask,
                } => {
                    let lv = self.value(*logits);
                    let count: S = mask.iter().copied().sum();
                    let up = g.get(0, 0) / count;
                    let vals = lv
                        .values()
                        .iter()
                        .zip(targets)
                        .zip(mask)
                        .map(|((&l, &t), &m)| m * (sigmoid_scalar(l) - t) * up)
                        .collect();
                    acc(&mut adj, *logits, DenseMatrix::from_vec(lv.rows(), lv.cols(), vals)?);
                }
                Op::SoftmaxCe { logits, groups } => {
                    let lv = self.value(*logits);
                    let up = g.get(0, 0) / S::lit(groups.len() as f64);
                    let mut gl = DenseMatrix::zeros(lv.rows(), lv.cols());
                    for (members, target) in groups {
                        let row: Vec<S> = members.iter().map(|&p| lv.values()[p]).collect();
                        let lse = log_sum_exp(&row);
                        for (k, &p) in members.iter().enumerate() {
                            let mut d = (row[k] - lse).exp();
                            if k == *target {
                                d -= S::one();
                            }
                            gl.values_mut()[p] += d * up;
                        }
                    }
                    acc(&mut adj, *logits, gl);
                }
            }
        }
        Ok(grads)
    }
}
