//! Reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Tape`] records nodes in creation order, which is already a topological
//! order of the graph, so [`Tape::backward`] walks it once in reverse.
//! Trainable weights live in a [`ParamStore`] outside the tape; a tape only
//! holds copies of their values, and backward accumulates into the store.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::activation::{mish, mish_derivative};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Matrix,
    pub grad: Matrix,
}

/// Named trainable parameters. Names are unique.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
    index: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::contract(format!("duplicate parameter name {name:?}")));
        }
        let id = ParamId(self.params.len());
        let (r, c) = value.shape();
        self.params.push(Parameter {
            name: name.clone(),
            value,
            grad: Matrix::zeros(r, c),
        });
        self.index.insert(name, id);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Parameter> {
        self.id(name).map(|id| &mut self.params[id.0])
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn ids(&self) -> Vec<ParamId> {
        (0..self.params.len()).map(ParamId).collect()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Copies every gradient, in id order.
    pub fn grads(&self) -> Vec<Matrix> {
        self.params.iter().map(|p| p.grad.clone()).collect()
    }
}

/// L2 norm of the concatenation of the listed parameters' gradients.
pub fn grad_l2_norm(store: &ParamStore, ids: &[ParamId]) -> Result<f64> {
    if ids.is_empty() {
        return Err(Error::contract("grad_l2_norm over an empty parameter list"));
    }
    Ok(ids
        .iter()
        .map(|&id| store.get(id).grad.sum_squares())
        .sum::<f64>()
        .sqrt())
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    /// Same shape, or `b` a 1 x cols row broadcast over `a`.
    Add(Var, Var),
    /// Same shape, or `b` a rows x 1 column broadcast over `a`.
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Mish(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    SoftmaxRows(Var),
    Column(Var, usize),
    Mean(Var),
    Sum(Var),
    Square(Var),
    Abs(Var),
    Mse(Var, Var),
}

#[derive(Debug, Clone)]
struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Constant leaf (no gradient).
    pub fn input(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Input, false)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.get(id).value.clone(), Op::Param(id), true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let value = if va.shape() == vb.shape() {
            va.zip_map(vb, |x, y| x + y)
        } else if vb.rows() == 1 && vb.cols() == va.cols() {
            let bias = vb.as_slice();
            Matrix::from_fn(va.rows(), va.cols(), |r, c| va.get(r, c) + bias[c])
        } else {
            return Err(Error::Shape {
                op: "add",
                left: va.shape(),
                right: vb.shape(),
            });
        };
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let value = if va.shape() == vb.shape() {
            va.zip_map(vb, |x, y| x * y)
        } else if vb.cols() == 1 && vb.rows() == va.rows() {
            Matrix::from_fn(va.rows(), va.cols(), |r, c| va.get(r, c) * vb.get(r, 0))
        } else {
            return Err(Error::Shape {
                op: "mul",
                left: va.shape(),
                right: vb.shape(),
            });
        };
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let value = self.value(a).map(|x| x * k);
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, k), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(crate::activation::relu);
        let rg = self.rg(a);
        self.push(value, Op::Relu(a), rg)
    }

    pub fn mish(&mut self, a: Var) -> Var {
        let value = self.value(a).map(mish);
        let rg = self.rg(a);
        self.push(value, Op::Mish(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        let rg = self.rg(a);
        self.push(value, Op::Tanh(a), rg)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::exp);
        let rg = self.rg(a);
        self.push(value, Op::Exp(a), rg)
    }

    pub fn log(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::ln);
        let rg = self.rg(a);
        self.push(value, Op::Log(a), rg)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let value = softmax_rows(self.value(a));
        let rg = self.rg(a);
        self.push(value, Op::SoftmaxRows(a), rg)
    }

    /// Column `k` as a rows x 1 matrix.
    pub fn column(&mut self, a: Var, k: usize) -> Result<Var> {
        let va = self.value(a);
        if k >= va.cols() {
            return Err(Error::Shape {
                op: "column",
                left: va.shape(),
                right: (k, 1),
            });
        }
        let value = Matrix::from_vec(va.rows(), 1, va.column(k))?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::Column(a, k), rg))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let value = Matrix::scalar(va.sum() / va.len() as f64);
        let rg = self.rg(a);
        self.push(value, Op::Mean(a), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Matrix::scalar(self.value(a).sum());
        let rg = self.rg(a);
        self.push(value, Op::Sum(a), rg)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x * x);
        let rg = self.rg(a);
        self.push(value, Op::Square(a), rg)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::abs);
        let rg = self.rg(a);
        self.push(value, Op::Abs(a), rg)
    }

    /// Mean squared difference, a 1x1 node.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (vp, vt) = (self.value(pred), self.value(target));
        if vp.shape() != vt.shape() {
            return Err(Error::Shape {
                op: "mse",
                left: vp.shape(),
                right: vt.shape(),
            });
        }
        let n = vp.len() as f64;
        let sse: f64 = vp
            .as_slice()
            .iter()
            .zip(vt.as_slice())
            .map(|(p, t)| (p - t) * (p - t))
            .sum();
        let rg = self.rg(pred) || self.rg(target);
        Ok(self.push(Matrix::scalar(sse / n), Op::Mse(pred, target), rg))
    }

    /// Accumulates d`loss`/d`param` into `store` for every parameter reachable
    /// from `loss`. Intermediate adjoints are dropped on return.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        let shape = self.value(loss).shape();
        if shape != (1, 1) {
            return Err(Error::contract(format!(
                "backward needs a 1x1 loss, got {}x{}",
                shape.0, shape.1
            )));
        }
        let mut adj: Vec<Option<Matrix>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(Matrix::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = adj[i].take() else { continue };
            match node.op {
                Op::Input => {}
                Op::Param(id) => store.get_mut(id).grad.add_assign(&g),
                Op::MatMul(a, b) => {
                    if self.rg(a) {
                        let ga = g.matmul_t(self.value(b))?;
                        accumulate(&mut adj, a, ga);
                    }
                    if self.rg(b) {
                        let gb = self.value(a).t_matmul(&g)?;
                        accumulate(&mut adj, b, gb);
                    }
                }
                Op::Add(a, b) => {
                    if self.rg(b) {
                        let gb = if self.value(b).shape() == g.shape() {
                            g.clone()
                        } else {
                            g.sum_rows()
                        };
                        accumulate(&mut adj, b, gb);
                    }
                    if self.rg(a) {
                        accumulate(&mut adj, a, g);
                    }
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.value(a), self.value(b));
                    let same = va.shape() == vb.shape();
                    if self.rg(a) {
                        let ga = if same {
                            g.zip_map(vb, |x, y| x * y)
                        } else {
                            Matrix::from_fn(g.rows(), g.cols(), |r, c| g.get(r, c) * vb.get(r, 0))
                        };
                        accumulate(&mut adj, a, ga);
                    }
                    if self.rg(b) {
                        let gb = if same {
                            g.zip_map(va, |x, y| x * y)
                        } else {
                            Matrix::from_fn(vb.rows(), 1, |r, _| {
                                g.row(r).iter().zip(va.row(r)).map(|(x, y)| x * y).sum()
                            })
                        };
                        accumulate(&mut adj, b, gb);
                    }
                }
                Op::Scale(a, k) => accumulate(&mut adj, a, g.map(|x| x * k)),
                Op::Relu(a) => {
                    let ga = g.zip_map(self.value(a), |gx, x| if x > 0.0 { gx } else { 0.0 });
                    accumulate(&mut adj, a, ga);
                }
                Op::Mish(a) => {
                    let ga = g.zip_map(self.value(a), |gx, x| gx * mish_derivative(x));
                    accumulate(&mut adj, a, ga);
                }
                Op::Tanh(a) => {
                    let ga = g.zip_map(&node.value, |gx, y| gx * (1.0 - y * y));
                    accumulate(&mut adj, a, ga);
                }
                Op::Exp(a) => {
                    let ga = g.zip_map(&node.value, |gx, y| gx * y);
                    accumulate(&mut adj, a, ga);
                }
                Op::Log(a) => {
                    let ga = g.zip_map(self.value(a), |gx, x| gx / x);
                    accumulate(&mut adj, a, ga);
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut ga = Matrix::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let dot: f64 = g.row(r).iter().zip(y.row(r)).map(|(p, q)| p * q).sum();
                        for c in 0..y.cols() {
                            ga.set(r, c, y.get(r, c) * (g.get(r, c) - dot));
                        }
                    }
                    accumulate(&mut adj, a, ga);
                }
                Op::Column(a, k) => {
                    let va = self.value(a);
                    let mut ga = Matrix::zeros(va.rows(), va.cols());
                    for r in 0..va.rows() {
                        ga.set(r, k, g.get(r, 0));
                    }
                    accumulate(&mut adj, a, ga);
                }
                Op::Mean(a) => {
                    let va = self.value(a);
                    let gx = g.item() / va.len() as f64;
                    accumulate(&mut adj, a, Matrix::filled(va.rows(), va.cols(), gx));
                }
                Op::Sum(a) => {
                    let va = self.value(a);
                    accumulate(&mut adj, a, Matrix::filled(va.rows(), va.cols(), g.item()));
                }
                Op::Square(a) => {
                    let ga = g.zip_map(self.value(a), |gx, x| 2.0 * x * gx);
                    accumulate(&mut adj, a, ga);
                }
                Op::Abs(a) => {
                    let ga = g.zip_map(self.value(a), |gx, x| gx * sign(x));
                    accumulate(&mut adj, a, ga);
                }
                Op::Mse(p, t) => {
                    let (vp, vt) = (self.value(p), self.value(t));
                    let k = 2.0 * g.item() / vp.len() as f64;
                    let gp = vp.zip_map(vt, |x, y| k * (x - y));
                    if self.rg(t) {
                        accumulate(&mut adj, t, gp.map(|x| -x));
                    }
                    if self.rg(p) {
                        accumulate(&mut adj, p, gp);
                    }
                }
            }
        }
        Ok(())
    }
}

fn accumulate(adj: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut adj[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

/// Signum with `sign(0) = 0`.
pub fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Numerically stable row-wise softmax.
pub fn softmax_rows(m: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(m.rows(), m.cols());
    for r in 0..m.rows() {
        let row = m.row(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|x| (x - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        for (c, e) in exps.into_iter().enumerate() {
            out.set(r, c, e / total);
        }
    }
    out
}
