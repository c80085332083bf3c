//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! Operations on [`Var`] handles are appended to a [`Tape`]; [`Tape::backward`]
//! replays them in reverse to accumulate gradients into every leaf. Leaves
//! created with [`Tape::param`] are reported by name.

use std::cell::RefCell;
use std::collections::BTreeMap;

use super::tensor::{matmul_raw, softmax_in_place};
use super::{NumericsError, ParamStore, Scalar, Tensor};

/// Operation kinds, used to target a [`BackwardMutation`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    MatMul,
    Transpose,
    Add,
    Sub,
    Mul,
    AddRow,
    MulRow,
    Scale,
    AddScalar,
    Gelu,
    Softplus,
    Clamp,
    SoftmaxRows,
    LogSumExpRows,
    LayerNormRows,
    L2NormalizeRows,
    GatherRows,
    GatherElems,
    SliceCols,
    ConcatCols,
    ConcatRows,
    SumRows,
    MeanRows,
    Sum,
    Mean,
}

/// Deliberate corruption of a backward rule. Only useful for checking that the
/// gradient checker notices broken derivatives.
#[derive(Clone, Debug, PartialEq)]
pub enum BackwardMutation {
    /// Multiply every input gradient produced by ops of this kind.
    ScaleOp { kind: OpKind, factor: f64 },
    /// Multiply the accumulated gradient of every named leaf with this prefix.
    ScaleParam { prefix: String, factor: f64 },
}

#[derive(Clone, Debug)]
enum Op<S> {
    Leaf,
    MatMul(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    MulRow(usize, usize),
    Scale(usize, S),
    AddScalar(usize),
    Gelu(usize),
    Softplus(usize),
    Clamp(usize, S, S),
    SoftmaxRows(usize),
    LogSumExpRows(usize, Option<Vec<bool>>),
    LayerNormRows(usize, S),
    L2NormalizeRows(usize, S),
    GatherRows(usize, Vec<usize>),
    GatherElems(usize, Vec<usize>),
    SliceCols(usize, usize),
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    SumRows(usize),
    MeanRows(usize),
    Sum(usize),
    Mean(usize),
}

impl<S> Op<S> {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::MatMul(..) => OpKind::MatMul,
            Op::Transpose(..) => OpKind::Transpose,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::AddRow(..) => OpKind::AddRow,
            Op::MulRow(..) => OpKind::MulRow,
            Op::Scale(..) => OpKind::Scale,
            Op::AddScalar(..) => OpKind::AddScalar,
            Op::Gelu(..) => OpKind::Gelu,
            Op::Softplus(..) => OpKind::Softplus,
            Op::Clamp(..) => OpKind::Clamp,
            Op::SoftmaxRows(..) => OpKind::SoftmaxRows,
            Op::LogSumExpRows(..) => OpKind::LogSumExpRows,
            Op::LayerNormRows(..) => OpKind::LayerNormRows,
            Op::L2NormalizeRows(..) => OpKind::L2NormalizeRows,
            Op::GatherRows(..) => OpKind::GatherRows,
            Op::GatherElems(..) => OpKind::GatherElems,
            Op::SliceCols(..) => OpKind::SliceCols,
            Op::ConcatCols(..) => OpKind::ConcatCols,
            Op::ConcatRows(..) => OpKind::ConcatRows,
            Op::SumRows(..) => OpKind::SumRows,
            Op::MeanRows(..) => OpKind::MeanRows,
            Op::Sum(..) => OpKind::Sum,
            Op::Mean(..) => OpKind::Mean,
        }
    }
}

struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
    name: Option<String>,
    requires_grad: bool,
}

/// Records operations for one forward/backward pass.
pub struct Tape<S> {
    nodes: RefCell<Vec<Node<S>>>,
    mutation: Option<BackwardMutation>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, S> {
    tape: &'t Tape<S>,
    id: usize,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            mutation: None,
        }
    }

    pub fn with_mutation(mutation: Option<BackwardMutation>) -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            mutation,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor<S>, op: Op<S>, name: Option<String>, requires_grad: bool) -> Var<'_, S> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            name,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// A value that never receives a gradient.
    pub fn constant(&self, value: Tensor<S>) -> Var<'_, S> {
        self.push(value, Op::Leaf, None, false)
    }

    /// An anonymous differentiable leaf.
    pub fn leaf(&self, value: Tensor<S>) -> Var<'_, S> {
        self.push(value, Op::Leaf, None, true)
    }

    /// A named differentiable leaf; its gradient is reported under `name`.
    pub fn param(&self, name: &str, value: Tensor<S>) -> Var<'_, S> {
        self.push(value, Op::Leaf, Some(name.to_string()), true)
    }

    fn record(&self, value: Tensor<S>, op: Op<S>, inputs: &[usize]) -> Var<'_, S> {
        let rg = {
            let nodes = self.nodes.borrow();
            inputs.iter().any(|&i| nodes[i].requires_grad)
        };
        self.push(value, op, None, rg)
    }

    fn with_values<R>(&self, f: impl FnOnce(&[Node<S>]) -> R) -> R {
        f(&self.nodes.borrow())
    }

    /// Concatenates equal-height matrices side by side.
    pub fn concat_cols(&self, parts: &[Var<'_, S>]) -> Result<Var<'_, S>, NumericsError> {
        let ids: Vec<usize> = parts.iter().map(|v| v.id).collect();
        let value = self.with_values(|nodes| {
            let m = nodes[ids[0]].value.rows();
            let mut widths = Vec::with_capacity(ids.len());
            for &i in &ids {
                let v = &nodes[i].value;
                if v.rows() != m {
                    return Err(NumericsError::Dimension {
                        op: "concat_cols",
                        left: nodes[ids[0]].value.shape().to_vec(),
                        right: v.shape().to_vec(),
                    });
                }
                widths.push(v.cols());
            }
            let n: usize = widths.iter().sum();
            let mut out = Vec::with_capacity(m * n);
            for r in 0..m {
                for &i in &ids {
                    out.extend_from_slice(nodes[i].value.row(r));
                }
            }
            Ok(Tensor::from_raw(vec![m, n], out))
        })?;
        Ok(self.record(value, Op::ConcatCols(ids.clone()), &ids))
    }

    /// Stacks equal-width matrices vertically.
    pub fn concat_rows(&self, parts: &[Var<'_, S>]) -> Result<Var<'_, S>, NumericsError> {
        let ids: Vec<usize> = parts.iter().map(|v| v.id).collect();
        let value = self.with_values(|nodes| {
            let n = nodes[ids[0]].value.cols();
            let mut out = Vec::new();
            let mut m = 0;
            for &i in &ids {
                let v = &nodes[i].value;
                if v.cols() != n {
                    return Err(NumericsError::Dimension {
                        op: "concat_rows",
                        left: nodes[ids[0]].value.shape().to_vec(),
                        right: v.shape().to_vec(),
                    });
                }
                m += v.rows();
                out.extend_from_slice(v.data());
            }
            Ok(Tensor::from_raw(vec![m, n], out))
        })?;
        Ok(self.record(value, Op::ConcatRows(ids.clone()), &ids))
    }

    /// Gradients of the scalar `loss` with respect to every leaf.
    pub fn backward(&self, loss: Var<'_, S>) -> Result<Gradients<S>, NumericsError> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if !root.value.is_scalar() {
            return Err(NumericsError::NotScalar {
                shape: root.value.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor<S>>> = vec![None; nodes.len()];
        grads[loss.id] = Some(Tensor::filled(root.value.shape(), S::one()));
        let op_factor = match &self.mutation {
            Some(BackwardMutation::ScaleOp { kind, factor }) => Some((*kind, S::lit(*factor))),
            _ => None,
        };

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let mut contribs = backward_rule(&nodes, node, &g);
            if let Some((kind, factor)) = op_factor {
                if kind == node.op.kind() {
                    for (_, t) in contribs.iter_mut() {
                        *t = t.map(|x| x * factor);
                    }
                }
            }
            for (input, t) in contribs {
                if !nodes[input].requires_grad {
                    continue;
                }
                match &mut grads[input] {
                    Some(acc) => acc.add_assign(&t),
                    slot @ None => *slot = Some(t),
                }
            }
        }

        let mut named = BTreeMap::new();
        let mut leaves = BTreeMap::new();
        for (id, node) in nodes.iter().enumerate() {
            if !matches!(node.op, Op::Leaf) || !node.requires_grad {
                continue;
            }
            let mut g = grads[id].take().unwrap_or_else(|| Tensor::zeros(node.value.shape()));
            if let (Some(name), Some(BackwardMutation::ScaleParam { prefix, factor })) = (&node.name, &self.mutation) {
                if name.starts_with(prefix.as_str()) {
                    let f = S::lit(*factor);
                    g = g.map(|x| x * f);
                }
            }
            match &node.name {
                Some(name) => {
                    named
                        .entry(name.clone())
                        .and_modify(|acc: &mut Tensor<S>| acc.add_assign(&g))
                        .or_insert(g);
                }
                None => {
                    leaves.insert(id, g);
                }
            }
        }
        Ok(Gradients {
            named: ParamStore::from_map(named),
            leaves,
        })
    }
}

/// Result of [`Tape::backward`].
#[derive(Clone, Debug)]
pub struct Gradients<S> {
    named: ParamStore<S>,
    leaves: BTreeMap<usize, Tensor<S>>,
}

impl<S: Scalar> Gradients<S> {
    /// Gradient of an anonymous leaf.
    pub fn wrt(&self, var: Var<'_, S>) -> Option<&Tensor<S>> {
        self.leaves.get(&var.id)
    }

    pub fn params(&self) -> &ParamStore<S> {
        &self.named
    }

    pub fn into_params(self) -> ParamStore<S> {
        self.named
    }
}

fn col_sums<S: Scalar>(g: &Tensor<S>) -> Tensor<S> {
    let n = g.cols();
    let mut out = vec![S::zero(); n];
    for row in g.data().chunks(n) {
        for (o, &x) in out.iter_mut().zip(row) {
            *o = *o + x;
        }
    }
    Tensor::from_raw(vec![1, n], out)
}

fn zip_map<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>, f: impl Fn(S, S) -> S) -> Tensor<S> {
    Tensor::from_raw(
        a.shape().to_vec(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
    )
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C: f64 = 0.044_715;

fn gelu<S: Scalar>(x: S) -> S {
    let k = S::lit(GELU_K);
    let c = S::lit(GELU_C);
    let half = S::lit(0.5);
    half * x * (S::one() + (k * (x + c * x * x * x)).tanh())
}

fn gelu_grad<S: Scalar>(x: S) -> S {
    let k = S::lit(GELU_K);
    let c = S::lit(GELU_C);
    let half = S::lit(0.5);
    let t = (k * (x + c * x * x * x)).tanh();
    half * (S::one() + t) + half * x * (S::one() - t * t) * k * (S::one() + S::lit(3.0) * c * x * x)
}

fn softplus<S: Scalar>(x: S) -> S {
    x.max(S::zero()) + (-x.abs()).exp().ln_1p()
}

fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

fn layer_norm_row<S: Scalar>(row: &[S], eps: S) -> (Vec<S>, S) {
    let n = S::from_usize(row.len()).unwrap();
    let mean = row.iter().copied().sum::<S>() / n;
    let var = row.iter().map(|&x| (x - mean) * (x - mean)).sum::<S>() / n;
    let inv = S::one() / (var + eps).sqrt();
    (row.iter().map(|&x| (x - mean) * inv).collect(), inv)
}

fn backward_rule<S: Scalar>(nodes: &[Node<S>], node: &Node<S>, g: &Tensor<S>) -> Vec<(usize, Tensor<S>)> {
    let val = |i: usize| &nodes[i].value;
    let rg = |i: usize| nodes[i].requires_grad;
    match &node.op {
        Op::Leaf => vec![],
        Op::MatMul(a, b) => {
            let mut out = Vec::with_capacity(2);
            if rg(*a) {
                out.push((*a, matmul_raw(g, val(*b), false, true)));
            }
            if rg(*b) {
                out.push((*b, matmul_raw(val(*a), g, true, false)));
            }
            out
        }
        Op::Transpose(a) => vec![(*a, g.transpose())],
        Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
        Op::Sub(a, b) => vec![(*a, g.clone()), (*b, g.map(|x| -x))],
        Op::Mul(a, b) => vec![
            (*a, zip_map(g, val(*b), |x, y| x * y)),
            (*b, zip_map(g, val(*a), |x, y| x * y)),
        ],
        Op::AddRow(a, b) => vec![(*a, g.clone()), (*b, col_sums(g))],
        Op::MulRow(a, b) => {
            let row = val(*b).data();
            let n = row.len();
            let ga = Tensor::from_raw(
                g.shape().to_vec(),
                g.data().iter().enumerate().map(|(k, &x)| x * row[k % n]).collect(),
            );
            let gb = col_sums(&zip_map(g, val(*a), |x, y| x * y));
            vec![(*a, ga), (*b, gb)]
        }
        Op::Scale(a, c) => vec![(*a, g.map(|x| x * *c))],
        Op::AddScalar(a) => vec![(*a, g.clone())],
        Op::Gelu(a) => vec![(*a, zip_map(g, val(*a), |gx, x| gx * gelu_grad(x)))],
        Op::Softplus(a) => vec![(*a, zip_map(g, val(*a), |gx, x| gx * sigmoid(x)))],
        Op::Clamp(a, lo, hi) => vec![(
            *a,
            zip_map(g, val(*a), |gx, x| if x >= *lo && x <= *hi { gx } else { S::zero() }),
        )],
        Op::SoftmaxRows(a) => {
            let y = &node.value;
            let n = y.cols();
            let mut out = Vec::with_capacity(y.len());
            for (yr, gr) in y.data().chunks(n).zip(g.data().chunks(n)) {
                let dot: S = yr.iter().zip(gr).map(|(&p, &q)| p * q).sum();
                out.extend(yr.iter().zip(gr).map(|(&p, &q)| p * (q - dot)));
            }
            vec![(*a, Tensor::from_raw(y.shape().to_vec(), out))]
        }
        Op::LogSumExpRows(a, mask) => {
            let x = val(*a);
            let n = x.cols();
            let mut out = Vec::with_capacity(x.len());
            for (r, row) in x.data().chunks(n).enumerate() {
                let mut p: Vec<S> = row.to_vec();
                masked_softmax(&mut p, mask.as_ref().map(|m| &m[r * n..(r + 1) * n]));
                let gr = g.data()[r];
                out.extend(p.into_iter().map(|v| v * gr));
            }
            vec![(*a, Tensor::from_raw(x.shape().to_vec(), out))]
        }
        Op::LayerNormRows(a, eps) => {
            let x = val(*a);
            let n = x.cols();
            let nf = S::from_usize(n).unwrap();
            let mut out = Vec::with_capacity(x.len());
            for (row, gr) in x.data().chunks(n).zip(g.data().chunks(n)) {
                let (xhat, inv) = layer_norm_row(row, *eps);
                let sum_g: S = gr.iter().copied().sum();
                let sum_gx: S = gr.iter().zip(&xhat).map(|(&p, &q)| p * q).sum();
                out.extend(
                    gr.iter()
                        .zip(&xhat)
                        .map(|(&gi, &xi)| inv / nf * (nf * gi - sum_g - xi * sum_gx)),
                );
            }
            vec![(*a, Tensor::from_raw(x.shape().to_vec(), out))]
        }
        Op::L2NormalizeRows(a, eps) => {
            let x = val(*a);
            let n = x.cols();
            let mut out = Vec::with_capacity(x.len());
            for (row, gr) in x.data().chunks(n).zip(g.data().chunks(n)) {
                let r = row.iter().map(|&v| v * v).sum::<S>().sqrt();
                let d = r + *eps;
                let xg: S = row.iter().zip(gr).map(|(&p, &q)| p * q).sum();
                let coef = if r > S::zero() { xg / (d * d * r) } else { S::zero() };
                out.extend(row.iter().zip(gr).map(|(&xi, &gi)| gi / d - xi * coef));
            }
            vec![(*a, Tensor::from_raw(x.shape().to_vec(), out))]
        }
        Op::GatherRows(a, idx) => {
            let x = val(*a);
            let n = x.cols();
            let mut out = Tensor::zeros(x.shape());
            let od = out.data_mut();
            for (r, &src) in idx.iter().enumerate() {
                for c in 0..n {
                    od[src * n + c] = od[src * n + c] + g.data()[r * n + c];
                }
            }
            vec![(*a, out)]
        }
        Op::GatherElems(a, idx) => {
            let mut out = Tensor::zeros(val(*a).shape());
            let od = out.data_mut();
            for (k, &src) in idx.iter().enumerate() {
                od[src] = od[src] + g.data()[k];
            }
            vec![(*a, out)]
        }
        Op::SliceCols(a, start) => {
            let x = val(*a);
            let n = x.cols();
            let w = g.cols();
            let mut out = Tensor::zeros(x.shape());
            let od = out.data_mut();
            for r in 0..x.rows() {
                od[r * n + start..r * n + start + w].copy_from_slice(g.row(r));
            }
            vec![(*a, out)]
        }
        Op::ConcatCols(ids) => {
            let m = g.rows();
            let mut offset = 0;
            let mut out = Vec::with_capacity(ids.len());
            for &i in ids {
                let w = val(i).cols();
                let mut part = Vec::with_capacity(m * w);
                for r in 0..m {
                    part.extend_from_slice(&g.row(r)[offset..offset + w]);
                }
                out.push((i, Tensor::from_raw(vec![m, w], part)));
                offset += w;
            }
            out
        }
        Op::ConcatRows(ids) => {
            let n = g.cols();
            let mut offset = 0;
            let mut out = Vec::with_capacity(ids.len());
            for &i in ids {
                let h = val(i).rows();
                let part = g.data()[offset * n..(offset + h) * n].to_vec();
                out.push((i, Tensor::from_raw(vec![h, n], part)));
                offset += h;
            }
            out
        }
        Op::SumRows(a) => {
            let x = val(*a);
            let n = x.cols();
            let out = (0..x.len()).map(|k| g.data()[k / n]).collect();
            vec![(*a, Tensor::from_raw(x.shape().to_vec(), out))]
        }
        Op::MeanRows(a) => {
            let x = val(*a);
            let n = x.cols();
            let inv = S::one() / S::from_usize(x.rows()).unwrap();
            let out = (0..x.len()).map(|k| g.data()[k % n] * inv).collect();
            vec![(*a, Tensor::from_raw(x.shape().to_vec(), out))]
        }
        Op::Sum(a) => vec![(*a, Tensor::filled(val(*a).shape(), g.item()))],
        Op::Mean(a) => {
            let x = val(*a);
            let inv = S::one() / S::from_usize(x.len()).unwrap();
            vec![(*a, Tensor::filled(x.shape(), g.item() * inv))]
        }
    }
}

/// Softmax over the entries selected by `mask`; unselected entries become 0.
fn masked_softmax<S: Scalar>(row: &mut [S], mask: Option<&[bool]>) {
    match mask {
        None => softmax_in_place(row),
        Some(m) => {
            let max = row
                .iter()
                .zip(m)
                .filter(|(_, &keep)| keep)
                .fold(S::neg_infinity(), |a, (&b, _)| a.max(b));
            let mut total = S::zero();
            for (x, &keep) in row.iter_mut().zip(m) {
                *x = if keep { (*x - max).exp() } else { S::zero() };
                total = total + *x;
            }
            for x in row.iter_mut() {
                *x = *x / total;
            }
        }
    }
}

fn dim_err(op: &'static str, a: &Tensor<impl Scalar>, b: &Tensor<impl Scalar>) -> NumericsError {
    NumericsError::Dimension {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

impl<'t, S: Scalar> Var<'t, S> {
    pub fn value(&self) -> Tensor<S> {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    /// First element; the value of a scalar.
    pub fn item(&self) -> S {
        self.tape.nodes.borrow()[self.id].value.item()
    }

    pub fn tape(&self) -> &'t Tape<S> {
        self.tape
    }

    fn unary(self, op: Op<S>, f: impl FnOnce(&Tensor<S>) -> Tensor<S>) -> Var<'t, S> {
        let value = self.tape.with_values(|nodes| f(&nodes[self.id].value));
        self.tape.record(value, op, &[self.id])
    }

    fn binary(
        self,
        other: Var<'t, S>,
        op: Op<S>,
        f: impl FnOnce(&Tensor<S>, &Tensor<S>) -> Result<Tensor<S>, NumericsError>,
    ) -> Result<Var<'t, S>, NumericsError> {
        let value = self
            .tape
            .with_values(|nodes| f(&nodes[self.id].value, &nodes[other.id].value))?;
        Ok(self.tape.record(value, op, &[self.id, other.id]))
    }

    pub fn matmul(self, other: Var<'t, S>) -> Result<Var<'t, S>, NumericsError> {
        self.binary(other, Op::MatMul(self.id, other.id), |a, b| a.matmul(b))
    }

    pub fn t(self) -> Var<'t, S> {
        self.unary(Op::Transpose(self.id), Tensor::transpose)
    }

    pub fn add(self, other: Var<'t, S>) -> Result<Var<'t, S>, NumericsError> {
        self.binary(other, Op::Add(self.id, other.id), |a, b| {
            if a.shape() != b.shape() {
                return Err(dim_err("add", a, b));
            }
            Ok(zip_map(a, b, |x, y| x + y))
        })
    }

    pub fn sub(self, other: Var<'t, S>) -> Result<Var<'t, S>, NumericsError> {
        self.binary(other, Op::Sub(self.id, other.id), |a, b| {
            if a.shape() != b.shape() {
                return Err(dim_err("sub", a, b));
            }
            Ok(zip_map(a, b, |x, y| x - y))
        })
    }

    /// Elementwise product.
    pub fn mul(self, other: Var<'t, S>) -> Result<Var<'t, S>, NumericsError> {
        self.binary(other, Op::Mul(self.id, other.id), |a, b| {
            if a.shape() != b.shape() {
                return Err(dim_err("mul", a, b));
            }
            Ok(zip_map(a, b, |x, y| x * y))
        })
    }

    /// Adds a `1×n` row to every row of an `m×n` matrix.
    pub fn add_row(self, row: Var<'t, S>) -> Result<Var<'t, S>, NumericsError> {
        self.binary(row, Op::AddRow(self.id, row.id), |a, b| {
            if b.len() != a.cols() || b.rows() != 1 {
                return Err(dim_err("add_row", a, b));
            }
            let n = a.cols();
            let r = b.data();
            Ok(Tensor::from_raw(
                a.shape().to_vec(),
                a.data().iter().enumerate().map(|(k, &x)| x + r[k % n]).collect(),
            ))
        })
    }

    /// Multiplies every row of an `m×n` matrix elementwise by a `1×n` row.
    pub fn mul_row(self, row: Var<'t, S>) -> Result<Var<'t, S>, NumericsError> {
        self.binary(row, Op::MulRow(self.id, row.id), |a, b| {
            if b.len() != a.cols() || b.rows() != 1 {
                return Err(dim_err("mul_row", a, b));
            }
            let n = a.cols();
            let r = b.data();
            Ok(Tensor::from_raw(
                a.shape().to_vec(),
                a.data().iter().enumerate().map(|(k, &x)| x * r[k % n]).collect(),
            ))
        })
    }

    pub fn scale(self, c: S) -> Var<'t, S> {
        self.unary(Op::Scale(self.id, c), |a| a.map(|x| x * c))
    }

    pub fn add_scalar(self, c: S) -> Var<'t, S> {
        self.unary(Op::AddScalar(self.id), |a| a.map(|x| x + c))
    }

    /// GELU, tanh approximation.
    pub fn gelu(self) -> Var<'t, S> {
        self.unary(Op::Gelu(self.id), |a| a.map(gelu))
    }

    /// `ln(1 + e^x)`, evaluated stably.
    pub fn softplus(self) -> Var<'t, S> {
        self.unary(Op::Softplus(self.id), |a| a.map(softplus))
    }

    pub fn clamp(self, lo: S, hi: S) -> Var<'t, S> {
        self.unary(Op::Clamp(self.id, lo, hi), |a| a.map(|x| x.max(lo).min(hi)))
    }

    pub fn softmax_rows(self) -> Var<'t, S> {
        self.unary(Op::SoftmaxRows(self.id), Tensor::softmax_rows)
    }

    /// Row-wise log-sum-exp over the entries where `mask` is true (all entries
    /// when `mask` is `None`). Returns an `m×1` column.
    pub fn log_sum_exp_rows(self, mask: Option<Vec<bool>>) -> Result<Var<'t, S>, NumericsError> {
        let value = self.tape.with_values(|nodes| {
            let x = &nodes[self.id].value;
            let n = x.cols();
            if let Some(m) = &mask {
                if m.len() != x.len() {
                    return Err(NumericsError::Dimension {
                        op: "log_sum_exp_rows",
                        left: x.shape().to_vec(),
                        right: vec![m.len()],
                    });
                }
            }
            let mut out = Vec::with_capacity(x.rows());
            for (r, row) in x.data().chunks(n).enumerate() {
                let keep = |j: usize| mask.as_ref().is_none_or(|m| m[r * n + j]);
                let max = (0..n)
                    .filter(|&j| keep(j))
                    .fold(S::neg_infinity(), |a, j| a.max(row[j]));
                let total: S = (0..n).filter(|&j| keep(j)).map(|j| (row[j] - max).exp()).sum();
                out.push(max + total.ln());
            }
            Ok(Tensor::from_raw(vec![x.rows(), 1], out))
        })?;
        Ok(self.tape.record(value, Op::LogSumExpRows(self.id, mask), &[self.id]))
    }

    /// Normalizes every row to zero mean and unit variance (no affine part).
    pub fn layer_norm_rows(self, eps: S) -> Var<'t, S> {
        self.unary(Op::LayerNormRows(self.id, eps), |a| {
            let n = a.cols();
            let mut out = Vec::with_capacity(a.len());
            for row in a.data().chunks(n) {
                out.extend(layer_norm_row(row, eps).0);
            }
            Tensor::from_raw(a.shape().to_vec(), out)
        })
    }

    /// Divides every row by its L2 norm plus `eps`.
    pub fn l2_normalize_rows(self, eps: S) -> Var<'t, S> {
        self.unary(Op::L2NormalizeRows(self.id, eps), |a| {
            let n = a.cols();
            let mut out = Vec::with_capacity(a.len());
            for row in a.data().chunks(n) {
                let d = row.iter().map(|&v| v * v).sum::<S>().sqrt() + eps;
                out.extend(row.iter().map(|&v| v / d));
            }
            Tensor::from_raw(a.shape().to_vec(), out)
        })
    }

    /// Selects rows by index (repeats allowed).
    pub fn gather_rows(self, idx: &[usize]) -> Result<Var<'t, S>, NumericsError> {
        let value = self.tape.with_values(|nodes| {
            let x = &nodes[self.id].value;
            if idx.is_empty() || idx.iter().any(|&i| i >= x.rows()) {
                return Err(NumericsError::Dimension {
                    op: "gather_rows",
                    left: x.shape().to_vec(),
                    right: vec![idx.len()],
                });
            }
            let n = x.cols();
            let mut out = Vec::with_capacity(idx.len() * n);
            for &i in idx {
                out.extend_from_slice(x.row(i));
            }
            Ok(Tensor::from_raw(vec![idx.len(), n], out))
        })?;
        Ok(self
            .tape
            .record(value, Op::GatherRows(self.id, idx.to_vec()), &[self.id]))
    }

    /// Selects flat elements by index into a tensor of `shape`.
    pub fn gather_elems(self, idx: &[usize], shape: &[usize]) -> Result<Var<'t, S>, NumericsError> {
        let value = self.tape.with_values(|nodes| {
            let x = &nodes[self.id].value;
            if idx.len() != shape.iter().product::<usize>() || idx.iter().any(|&i| i >= x.len()) {
                return Err(NumericsError::Dimension {
                    op: "gather_elems",
                    left: x.shape().to_vec(),
                    right: shape.to_vec(),
                });
            }
            Ok(Tensor::from_raw(
                shape.to_vec(),
                idx.iter().map(|&i| x.data()[i]).collect(),
            ))
        })?;
        Ok(self
            .tape
            .record(value, Op::GatherElems(self.id, idx.to_vec()), &[self.id]))
    }

    pub fn slice_cols(self, start: usize, width: usize) -> Result<Var<'t, S>, NumericsError> {
        let value = self.tape.with_values(|nodes| {
            let x = &nodes[self.id].value;
            if width == 0 || start + width > x.cols() {
                return Err(NumericsError::Dimension {
                    op: "slice_cols",
                    left: x.shape().to_vec(),
                    right: vec![start, width],
                });
            }
            let mut out = Vec::with_capacity(x.rows() * width);
            for r in 0..x.rows() {
                out.extend_from_slice(&x.row(r)[start..start + width]);
            }
            Ok(Tensor::from_raw(vec![x.rows(), width], out))
        })?;
        Ok(self.tape.record(value, Op::SliceCols(self.id, start), &[self.id]))
    }

    /// Row sums as an `m×1` column.
    pub fn sum_rows(self) -> Var<'t, S> {
        self.unary(Op::SumRows(self.id), |a| {
            let n = a.cols();
            Tensor::from_raw(
                vec![a.rows(), 1],
                a.data().chunks(n).map(|r| r.iter().copied().sum()).collect(),
            )
        })
    }

    /// Column means as a `1×n` row.
    pub fn mean_rows(self) -> Var<'t, S> {
        self.unary(Op::MeanRows(self.id), |a| {
            let inv = S::one() / S::from_usize(a.rows()).unwrap();
            col_sums(a).map(|x| x * inv)
        })
    }

    pub fn sum(self) -> Var<'t, S> {
        self.unary(Op::Sum(self.id), |a| Tensor::scalar(a.data().iter().copied().sum()))
    }

    pub fn mean(self) -> Var<'t, S> {
        self.unary(Op::Mean(self.id), |a| {
            Tensor::scalar(a.data().iter().copied().sum::<S>() / S::from_usize(a.len()).unwrap())
        })
    }
}
