//! Tape-based reverse-mode differentiation.
//!
//! Every operation on a [`Graph`] evaluates eagerly and appends a node, so the
//! node list is already in topological order. [`Graph::backward`] walks it in
//! reverse exactly once.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::numerics::params::ParamStore;
use crate::numerics::tensor::{sigmoid, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `a . b^T`
    MatMulNt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddRow(Var, Var),
    /// Multiply by a one-element tensor.
    MulScalar(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    Sigmoid(Var),
    Tanh(Var),
    Abs(Var),
    /// Row softmax, optionally reweighted by a per-column prior:
    /// `y_ij = s_j exp(x_ij) / sum_k s_k exp(x_ik)`. `unscaled` keeps
    /// `exp(x_ij - max_i) / Z_i` for the prior gradient.
    Softmax {
        x: Var,
        prior: Option<Var>,
        unscaled: Option<Tensor>,
    },
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    Reshape(Var),
    MeanRows(Var),
    Sum(Var),
    Mean(Var),
    /// One-element tensor repeated to a vector.
    Broadcast(Var),
    /// Mean binary cross-entropy of `sigmoid(logits)` against fixed targets.
    BceLogits(Var, Tensor),
}

struct Node {
    value: Tensor,
    op: Op,
}

/// The computation record of one forward pass.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: BTreeMap<String, Var>,
}

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "{what}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn constant(&mut self, v: f64) -> Var {
        self.input(Tensor::scalar(v))
    }

    /// Leaf for a named parameter; repeated requests return the same node.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let value = store
            .get(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter '{name}'")))?
            .clone();
        let v = self.push(value, Op::Leaf);
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn params(&self) -> &BTreeMap<String, Var> {
        &self.params
    }

    /// True when every recorded value is finite.
    pub fn all_finite(&self) -> bool {
        self.nodes.iter().all(|n| n.value.is_finite())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul_nt(self.value(b))?;
        Ok(self.push(v, Op::MatMulNt(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        Ok(self.push(v, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x / y)?;
        Ok(self.push(v, Op::Div(a, b)))
    }

    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let v = self.value(a).add_row(self.value(bias))?;
        Ok(self.push(v, Op::AddRow(a, bias)))
    }

    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        if self.value(s).len() != 1 {
            return Err(Error::Shape("mul_scalar needs a one-element factor".into()));
        }
        let k = self.value(s).item();
        let v = self.value(a).map(|x| x * k);
        Ok(self.push(v, Op::MulScalar(a, s)))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a).map(|x| x * k);
        self.push(v, Op::Scale(a, k))
    }

    pub fn add_const(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a).map(|x| x + k);
        self.push(v, Op::AddConst(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(libm::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::abs);
        self.push(v, Op::Abs(a))
    }

    pub fn softmax(&mut self, x: Var) -> Var {
        let v = self.value(x).softmax_rows();
        self.push(
            v,
            Op::Softmax {
                x,
                prior: None,
                unscaled: None,
            },
        )
    }

    /// Row softmax with a non-negative multiplicative prior over columns.
    /// A zero prior removes that column exactly.
    pub fn softmax_with_prior(&mut self, x: Var, prior: Var) -> Result<Var> {
        let xv = self.value(x);
        let pv = self.value(prior);
        let n = xv.cols();
        if pv.len() != n {
            return Err(Error::Shape(format!(
                "prior of {} values for {n} columns",
                pv.len()
            )));
        }
        if pv.data().iter().any(|&s| s < 0.0) {
            return Err(Error::Config("softmax prior must be non-negative".into()));
        }
        let mut out = xv.clone();
        let mut unscaled = xv.clone();
        for (o_row, u_row) in out
            .data_mut()
            .chunks_mut(n)
            .zip(unscaled.data_mut().chunks_mut(n))
        {
            let max = o_row
                .iter()
                .zip(pv.data())
                .filter(|(_, &s)| s > 0.0)
                .map(|(&o, _)| o)
                .fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for ((o, u), &s) in o_row.iter_mut().zip(u_row.iter_mut()).zip(pv.data()) {
                *u = libm::exp(*o - max);
                *o = if s > 0.0 { s * *u } else { 0.0 };
                z += *o;
            }
            if z == 0.0 {
                return Err(Error::NonFinite("softmax prior has no mass".into()));
            }
            o_row.iter_mut().for_each(|o| *o /= z);
            u_row.iter_mut().for_each(|u| *u /= z);
        }
        Ok(self.push(
            out,
            Op::Softmax {
                x,
                prior: Some(prior),
                unscaled: Some(unscaled),
            },
        ))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let v = self.value(a).slice_rows(start, len)?;
        Ok(self.push(v, Op::SliceRows(a, start)))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let v = self.value(a).slice_cols(start, len)?;
        Ok(self.push(v, Op::SliceCols(a, start)))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let v = {
            let ts: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
            Tensor::concat_rows(&ts)?
        };
        Ok(self.push(v, Op::ConcatRows(parts.to_vec())))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let v = {
            let ts: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
            Tensor::concat_cols(&ts)?
        };
        Ok(self.push(v, Op::ConcatCols(parts.to_vec())))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(a).reshape(shape)?;
        Ok(self.push(v, Op::Reshape(a)))
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let v = self.value(a).mean_rows();
        self.push(v, Op::MeanRows(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        self.push(v, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let v = Tensor::scalar(t.sum() / t.len() as f64);
        self.push(v, Op::Mean(a))
    }

    pub fn broadcast(&mut self, a: Var, n: usize) -> Result<Var> {
        if self.value(a).len() != 1 {
            return Err(Error::Shape("broadcast needs a one-element tensor".into()));
        }
        let v = Tensor::filled(&[n], self.value(a).item());
        Ok(self.push(v, Op::Broadcast(a)))
    }

    pub fn bce_with_logits(&mut self, logits: Var, targets: Tensor) -> Result<Var> {
        let x = self.value(logits);
        same_shape(x, &targets, "bce_with_logits")?;
        let n = x.len() as f64;
        let total: f64 = x
            .data()
            .iter()
            .zip(targets.data())
            .map(|(&x, &t)| x.max(0.0) - x * t + libm::log1p(libm::exp(-x.abs())))
            .sum();
        Ok(self.push(Tensor::scalar(total / n), Op::BceLogits(logits, targets)))
    }

    /// Gradients of a one-element `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Shape(format!(
                "loss must be scalar, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::filled(self.value(loss).shape(), 1.0));

        fn acc(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let y = &node.value;
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let da = g.matmul_nt(self.value(*b))?;
                    let db = self.value(*a).matmul_tn(&g)?;
                    acc(&mut grads, *a, da.reshape(self.value(*a).shape())?);
                    acc(&mut grads, *b, db.reshape(self.value(*b).shape())?);
                }
                Op::MatMulNt(a, b) => {
                    let da = g.matmul(self.value(*b))?;
                    let db = g.matmul_tn(self.value(*a))?;
                    acc(&mut grads, *a, da.reshape(self.value(*a).shape())?);
                    acc(&mut grads, *b, db.reshape(self.value(*b).shape())?);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g.clone());
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, g.map(|v| -v));
                    acc(&mut grads, *a, g.clone());
                }
                Op::Mul(a, b) => {
                    let da = g.zip_map(self.value(*b), |g, b| g * b)?;
                    let db = g.zip_map(self.value(*a), |g, a| g * a)?;
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::Div(a, b) => {
                    let bv = self.value(*b);
                    let da = g.zip_map(bv, |g, b| g / b)?;
                    let db = g.zip_map(y, |g, y| g * y)?.zip_map(bv, |gy, b| -gy / b)?;
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::AddRow(a, bias) => {
                    let n = g.cols();
                    let mut db = vec![0.0; n];
                    for row in g.data().chunks(n) {
                        db.iter_mut().zip(row).for_each(|(d, &v)| *d += v);
                    }
                    let db = Tensor::new(self.value(*bias).shape().to_vec(), db)?;
                    acc(&mut grads, *bias, db);
                    acc(&mut grads, *a, g.clone());
                }
                Op::MulScalar(a, s) => {
                    let k = self.value(*s).item();
                    let ds: f64 = g
                        .data()
                        .iter()
                        .zip(self.value(*a).data())
                        .map(|(g, a)| g * a)
                        .sum();
                    acc(&mut grads, *s, Tensor::filled(self.value(*s).shape(), ds));
                    acc(&mut grads, *a, g.map(|v| v * k));
                }
                Op::Scale(a, k) => {
                    let k = *k;
                    acc(&mut grads, *a, g.map(|v| v * k));
                }
                Op::AddConst(a) => acc(&mut grads, *a, g.clone()),
                Op::Sigmoid(a) => {
                    let da = g.zip_map(y, |g, y| g * y * (1.0 - y))?;
                    acc(&mut grads, *a, da);
                }
                Op::Tanh(a) => {
                    let da = g.zip_map(y, |g, y| g * (1.0 - y * y))?;
                    acc(&mut grads, *a, da);
                }
                Op::Abs(a) => {
                    let da = g.zip_map(self.value(*a), |g, x| {
                        g * x.signum() * (x != 0.0) as u8 as f64
                    })?;
                    acc(&mut grads, *a, da);
                }
                Op::Softmax { x, prior, unscaled } => {
                    let n = y.cols();
                    let mut dx = vec![0.0; y.len()];
                    let mut dprior = vec![0.0; n];
                    for (r, (y_row, g_row)) in
                        y.data().chunks(n).zip(g.data().chunks(n)).enumerate()
                    {
                        let dot: f64 = y_row.iter().zip(g_row).map(|(y, g)| y * g).sum();
                        for j in 0..n {
                            dx[r * n + j] = y_row[j] * (g_row[j] - dot);
                        }
                        if let Some(u) = unscaled {
                            let u_row = u.row(r);
                            for j in 0..n {
                                dprior[j] += u_row[j] * (g_row[j] - dot);
                            }
                        }
                    }
                    acc(&mut grads, *x, Tensor::new(y.shape().to_vec(), dx)?);
                    if let Some(p) = prior {
                        let shape = self.value(*p).shape().to_vec();
                        acc(&mut grads, *p, Tensor::new(shape, dprior)?);
                    }
                }
                Op::SliceRows(a, start) => {
                    let av = self.value(*a);
                    let n = av.cols();
                    let mut da = Tensor::zeros(av.shape());
                    da.data_mut()[start * n..start * n + g.len()].copy_from_slice(g.data());
                    acc(&mut grads, *a, da);
                }
                Op::SliceCols(a, start) => {
                    let av = self.value(*a);
                    let (n, len) = (av.cols(), g.cols());
                    let mut da = Tensor::zeros(av.shape());
                    for (r, g_row) in g.data().chunks(len).enumerate() {
                        da.data_mut()[r * n + start..r * n + start + len].copy_from_slice(g_row);
                    }
                    acc(&mut grads, *a, da);
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let shape = self.value(*p).shape().to_vec();
                        let len = self.value(*p).len();
                        let part = Tensor::new(shape, g.data()[offset..offset + len].to_vec())?;
                        offset += len;
                        acc(&mut grads, *p, part);
                    }
                }
                Op::ConcatCols(parts) => {
                    let total = g.cols();
                    let mut offset = 0;
                    for p in parts {
                        let pv = self.value(*p);
                        let w = pv.cols();
                        let mut part = Vec::with_capacity(pv.len());
                        for row in g.data().chunks(total) {
                            part.extend_from_slice(&row[offset..offset + w]);
                        }
                        offset += w;
                        acc(&mut grads, *p, Tensor::new(pv.shape().to_vec(), part)?);
                    }
                }
                Op::Reshape(a) => {
                    let da = g.reshape(self.value(*a).shape())?;
                    acc(&mut grads, *a, da);
                }
                Op::MeanRows(a) => {
                    let av = self.value(*a);
                    let m = av.rows() as f64;
                    let n = av.cols();
                    let mut da = Vec::with_capacity(av.len());
                    for _ in 0..av.rows() {
                        da.extend(g.data()[..n].iter().map(|v| v / m));
                    }
                    acc(&mut grads, *a, Tensor::new(av.shape().to_vec(), da)?);
                }
                Op::Sum(a) => {
                    let gv = g.item();
                    acc(&mut grads, *a, Tensor::filled(self.value(*a).shape(), gv));
                }
                Op::Mean(a) => {
                    let av = self.value(*a);
                    let gv = g.item() / av.len() as f64;
                    acc(&mut grads, *a, Tensor::filled(av.shape(), gv));
                }
                Op::Broadcast(a) => {
                    let shape = self.value(*a).shape().to_vec();
                    acc(&mut grads, *a, Tensor::filled(&shape, g.sum()));
                }
                Op::BceLogits(logits, targets) => {
                    let xv = self.value(*logits);
                    let k = g.item() / xv.len() as f64;
                    let dx = xv.zip_map(targets, |x, t| k * (sigmoid(x) - t))?;
                    acc(&mut grads, *logits, dx);
                }
            }
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

/// Per-node gradients from one backward pass.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, zero when the loss does not depend on it.
    pub fn wrt(&self, graph: &Graph, v: Var) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(graph.value(v).shape()))
    }

    /// Gradients for every parameter in `store`; parameters that were never
    /// touched by the graph get zeros.
    pub fn param_grads(&self, graph: &Graph, store: &ParamStore) -> BTreeMap<String, Tensor> {
        store
            .iter()
            .map(|(name, value)| {
                let g = graph
                    .params()
                    .get(name)
                    .and_then(|&v| self.get(v).cloned())
                    .unwrap_or_else(|| Tensor::zeros(value.shape()));
                (name.to_string(), g)
            })
            .collect()
    }
}
