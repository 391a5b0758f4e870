//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied to its [`Var`] handles. Calling
//! [`Graph::backward`] on a scalar walks the tape in reverse and adds
//! `d loss / d leaf` into the gradient accumulator of every leaf created with
//! `requires_grad`. Accumulators are only cleared by [`Graph::zero_grad`], so
//! two backward passes over the same loss leave exactly twice the gradient.
//!
//! Graphs are cheap and meant to be rebuilt for every mini-batch.

use crate::autodiff::matrix::{matmul_nt_acc, matmul_tn_acc, Matrix};
use crate::error::{Error, Result};

/// Probabilities are clamped into `[BCE_EPS, 1 - BCE_EPS]` before the log.
pub const BCE_EPS: f64 = 1e-7;

/// Handle to a node of a [`Graph`]. Only meaningful for the graph that issued it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Scale(Var, f64),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    Hcat(Var, Var),
    SelectRows(Var, Vec<usize>),
    Sum(Var),
    Sqrt(Var),
    Bce(Var, Matrix),
    BceLogits(Var, Matrix),
    Mse(Var, Matrix),
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
    /// Accumulated gradient; only populated for leaves that require it.
    grad: Option<Matrix>,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Matrix, requires_grad: bool) -> Var {
        let grad = requires_grad.then(|| Matrix::zeros(value.rows(), value.cols()));
        self.push_node(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            grad,
        })
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Matrix) -> Var {
        self.leaf(value, true)
    }

    /// A leaf that never receives gradient.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Scalar value of a 1×1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.shape(), (1, 1));
        m.data()[0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, `None` for constants and interior nodes.
    pub fn grad(&self, v: Var) -> Option<&Matrix> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            if let Some(g) = &mut n.grad {
                g.fill(0.0);
            }
        }
    }

    fn push_node(&mut self, node: Node) -> Var {
        self.nodes.push(node);
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Matrix, op: Op, parents: &[Var]) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.push_node(Node {
            value,
            op,
            requires_grad,
            grad: None,
        })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b), &[a, b]))
    }

    /// `x + bias`, with a `1 × cols` bias broadcast over the rows of `x`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        if bv.rows() != 1 || bv.cols() != xv.cols() {
            return Err(Error::Dimension {
                op: "add_row",
                lhs: xv.shape(),
                rhs: bv.shape(),
            });
        }
        let mut value = xv.clone();
        for r in 0..value.rows() {
            for (o, b) in value.row_mut(r).iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        Ok(self.push(value, Op::AddRow(x, bias), &[x, bias]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.value(a).same_shape(self.value(b), "add")?;
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        Ok(self.push(value, Op::Add(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let value = self.value(a).map(|v| v * k);
        self.push(value, Op::Scale(a, k), &[a])
    }

    /// `a - b`, recorded as `a + (-1)·b`.
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let nb = self.scale(b, -1.0);
        self.add(a, nb)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let value = self.value(a).map(|v| if v > 0.0 { v } else { slope * v });
        self.push(value, Op::LeakyRelu(a, slope), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.leaky_relu(a, 0.0)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        self.push(value, Op::Sigmoid(a), &[a])
    }

    /// `[a | b]`.
    pub fn hcat(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).hcat(self.value(b))?;
        Ok(self.push(value, Op::Hcat(a, b), &[a, b]))
    }

    /// Gathers rows; rows that are not selected receive zero gradient.
    pub fn select_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let src = self.value(a);
        if let Some(&bad) = indices.iter().find(|&&i| i >= src.rows()) {
            return Err(Error::Contract(format!(
                "row index {bad} out of range for {} rows",
                src.rows()
            )));
        }
        let value = src.select_rows(indices);
        Ok(self.push(value, Op::SelectRows(a, indices.to_vec()), &[a]))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Matrix::filled(1, 1, self.value(a).sum());
        self.push(value, Op::Sum(a), &[a])
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::sqrt);
        self.push(value, Op::Sqrt(a), &[a])
    }

    /// Mean binary cross-entropy `-[t ln p + (1-t) ln(1-p)]` over all entries,
    /// with `p` clamped into `[BCE_EPS, 1 - BCE_EPS]`.
    pub fn bce(&mut self, predicted: Var, target: &Matrix) -> Result<Var> {
        let p = self.value(predicted);
        p.same_shape(target, "bce_loss")?;
        if p.is_empty() {
            return Err(Error::Contract("bce_loss on an empty batch".into()));
        }
        let total: f64 = p
            .data()
            .iter()
            .zip(target.data())
            .map(|(&p, &t)| {
                let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
                -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
            })
            .sum();
        let value = Matrix::filled(1, 1, total / p.len() as f64);
        Ok(self.push(value, Op::Bce(predicted, target.clone()), &[predicted]))
    }

    /// Mean binary cross-entropy of `sigmoid(logits)` computed in logit space:
    /// `max(x, 0) − x t + ln(1 + e^{−|x|})`. No clamp, so the gradient
    /// `sigmoid(x) − t` never vanishes on saturated heads.
    pub fn bce_with_logits(&mut self, logits: Var, target: &Matrix) -> Result<Var> {
        let x = self.value(logits);
        x.same_shape(target, "bce_with_logits")?;
        if x.is_empty() {
            return Err(Error::Contract("bce_with_logits on an empty batch".into()));
        }
        let total: f64 = x
            .data()
            .iter()
            .zip(target.data())
            .map(|(&x, &t)| x.max(0.0) - x * t + (-x.abs()).exp().ln_1p())
            .sum();
        let value = Matrix::filled(1, 1, total / x.len() as f64);
        Ok(self.push(value, Op::BceLogits(logits, target.clone()), &[logits]))
    }

    /// `(1/N) Σ_rows ‖target − reconstruction‖²`, N the number of rows.
    pub fn mse(&mut self, reconstruction: Var, target: &Matrix) -> Result<Var> {
        let r = self.value(reconstruction);
        r.same_shape(target, "mse_loss")?;
        if r.rows() == 0 {
            return Err(Error::Contract("mse_loss on an empty batch".into()));
        }
        let total: f64 = r
            .data()
            .iter()
            .zip(target.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let value = Matrix::filled(1, 1, total / r.rows() as f64);
        Ok(self.push(value, Op::Mse(reconstruction, target.clone()), &[reconstruction]))
    }

    /// Adds `d loss / d leaf` into every trainable leaf's accumulator.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.value(loss).shape();
        if shape != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {shape:?}"
            )));
        }
        let mut adj: Vec<Option<Matrix>> = (0..=loss.0).map(|_| None).collect();
        adj[loss.0] = Some(Matrix::filled(1, 1, 1.0));

        for id in (0..=loss.0).rev() {
            let Some(up) = adj[id].take() else { continue };
            if !self.nodes[id].requires_grad {
                continue;
            }
            let node = &self.nodes[id];
            match &node.op {
                Op::Leaf => {
                    let g = self.nodes[id].grad.as_mut().expect("trainable leaf");
                    g.add_assign(&up);
                }
                Op::MatMul(a, b) => {
                    let (a, b) = (*a, *b);
                    if self.requires_grad(a) {
                        let bv = self.value(b);
                        let (ar, ac) = self.value(a).shape();
                        let mut da = Matrix::zeros(ar, ac);
                        matmul_nt_acc(&up, bv, &mut da);
                        accumulate(&mut adj, a, da);
                    }
                    if self.requires_grad(b) {
                        let av = self.value(a);
                        let mut db = Matrix::zeros(av.cols(), up.cols());
                        matmul_tn_acc(av, &up, &mut db);
                        accumulate(&mut adj, b, db);
                    }
                }
                Op::AddRow(x, bias) => {
                    let (x, bias) = (*x, *bias);
                    if self.requires_grad(bias) {
                        let mut db = Matrix::zeros(1, up.cols());
                        for r in 0..up.rows() {
                            for (d, u) in db.data_mut().iter_mut().zip(up.row(r)) {
                                *d += u;
                            }
                        }
                        accumulate(&mut adj, bias, db);
                    }
                    if self.requires_grad(x) {
                        accumulate(&mut adj, x, up);
                    }
                }
                Op::Add(a, b) => {
                    let (a, b) = (*a, *b);
                    if self.requires_grad(a) {
                        accumulate(&mut adj, a, up.clone());
                    }
                    if self.requires_grad(b) {
                        accumulate(&mut adj, b, up);
                    }
                }
                Op::Scale(a, k) => {
                    let (a, k) = (*a, *k);
                    let mut d = up;
                    d.scale_assign(k);
                    accumulate(&mut adj, a, d);
                }
                Op::LeakyRelu(a, slope) => {
                    let (a, slope) = (*a, *slope);
                    let mut d = up;
                    for (g, &x) in d.data_mut().iter_mut().zip(self.value(a).data()) {
                        if x <= 0.0 {
                            *g *= slope;
                        }
                    }
                    accumulate(&mut adj, a, d);
                }
                Op::Sigmoid(a) => {
                    let a = *a;
                    let mut d = up;
                    for (g, &s) in d.data_mut().iter_mut().zip(node.value.data()) {
                        *g *= s * (1.0 - s);
                    }
                    accumulate(&mut adj, a, d);
                }
                Op::Hcat(a, b) => {
                    let (a, b) = (*a, *b);
                    let ac = self.value(a).cols();
                    let bc = self.value(b).cols();
                    if self.requires_grad(a) {
                        let mut da = Matrix::zeros(up.rows(), ac);
                        for r in 0..up.rows() {
                            da.row_mut(r).copy_from_slice(&up.row(r)[..ac]);
                        }
                        accumulate(&mut adj, a, da);
                    }
                    if self.requires_grad(b) {
                        let mut db = Matrix::zeros(up.rows(), bc);
                        for r in 0..up.rows() {
                            db.row_mut(r).copy_from_slice(&up.row(r)[ac..]);
                        }
                        accumulate(&mut adj, b, db);
                    }
                }
                Op::SelectRows(a, indices) => {
                    let a = *a;
                    let mut d = Matrix::zeros(self.value(a).rows(), up.cols());
                    for (k, &i) in indices.iter().enumerate() {
                        for (o, u) in d.row_mut(i).iter_mut().zip(up.row(k)) {
                            *o += u;
                        }
                    }
                    accumulate(&mut adj, a, d);
                }
                Op::Sum(a) => {
                    let a = *a;
                    let (r, c) = self.value(a).shape();
                    accumulate(&mut adj, a, Matrix::filled(r, c, up.data()[0]));
                }
                Op::Sqrt(a) => {
                    let a = *a;
                    let mut d = up;
                    for (g, &s) in d.data_mut().iter_mut().zip(node.value.data()) {
                        *g *= if s > 0.0 { 0.5 / s } else { 0.0 };
                    }
                    accumulate(&mut adj, a, d);
                }
                Op::Bce(p, target) => {
                    let p = *p;
                    let pv = self.value(p);
                    let k = up.data()[0] / pv.len() as f64;
                    let mut d = Matrix::zeros(pv.rows(), pv.cols());
                    for ((g, &p), &t) in d.data_mut().iter_mut().zip(pv.data()).zip(target.data()) {
                        // The clamp is flat outside its range.
                        if p > BCE_EPS && p < 1.0 - BCE_EPS {
                            *g = k * (-t / p + (1.0 - t) / (1.0 - p));
                        }
                    }
                    accumulate(&mut adj, p, d);
                }
                Op::BceLogits(x, target) => {
                    let x = *x;
                    let xv = self.value(x);
                    let k = up.data()[0] / xv.len() as f64;
                    let mut d = Matrix::zeros(xv.rows(), xv.cols());
                    for ((g, &x), &t) in d.data_mut().iter_mut().zip(xv.data()).zip(target.data()) {
                        *g = k * (sigmoid(x) - t);
                    }
                    accumulate(&mut adj, x, d);
                }
                Op::Mse(r, target) => {
                    let r = *r;
                    let rv = self.value(r);
                    let k = 2.0 * up.data()[0] / rv.rows() as f64;
                    let mut d = Matrix::zeros(rv.rows(), rv.cols());
                    for ((g, &x), &t) in d.data_mut().iter_mut().zip(rv.data()).zip(target.data()) {
                        *g = k * (x - t);
                    }
                    accumulate(&mut adj, r, d);
                }
            }
        }
        Ok(())
    }
}

fn accumulate(adj: &mut [Option<Matrix>], v: Var, d: Matrix) {
    match &mut adj[v.0] {
        Some(existing) => existing.add_assign(&d),
        slot @ None => *slot = Some(d),
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
