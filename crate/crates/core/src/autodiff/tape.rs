use std::collections::HashSet;

use super::tensor::{matmul_raw, softmax_in_place, Param, Tensor};
use super::Scalar;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Relu(Var),
    Mask(Var, Vec<T>),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, T),
    Sum(Var),
    SoftmaxCe {
        logits: Var,
        denom: T,
        /// Per-row `softmax - onehot`, zeroed for ignored or clamped rows.
        local_grad: Vec<T>,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    param: Option<Param<T>>,
}

/// Per-node gradients produced by [`Tape::gradients`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the loss w.r.t. `var`; `None` when `var` is not an ancestor
    /// of the loss through differentiable nodes.
    pub fn get(&self, var: Var) -> Option<&[T]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }
}

/// Append-only record of operations for reverse-mode differentiation.
///
/// Nodes are stored in creation order, so parents always precede children.
#[derive(Debug)]
pub struct Tape<T = f64> {
    nodes: Vec<Node<T>>,
    frozen: HashSet<usize>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            frozen: HashSet::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Parameters registered after this call enter the tape as constants.
    pub fn freeze<'a>(&mut self, params: impl IntoIterator<Item = &'a Param<T>>) {
        self.frozen.extend(params.into_iter().map(Param::key));
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// First element of the value, for scalar losses.
    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value.data()[0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Records a parameter leaf. Gradients flow back into the parameter's
    /// buffer on [`Tape::backward`] unless it was frozen on this tape.
    pub fn param(&mut self, p: &Param<T>) -> Var {
        let trainable = !self.frozen.contains(&p.key());
        let value = p.value().clone();
        let v = self.push(value, Op::Leaf, trainable);
        if trainable {
            self.nodes[v.0].param = Some(p.clone());
        }
        v
    }

    /// Constant copy of `v`; nothing upstream receives gradient through it.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Shape {
                op: "matmul",
                expected: vec![sa.get(1).copied().unwrap_or(0)],
                got: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let data = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        let value = Tensor::new(vec![m, n], data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    /// Adds a length-`n` bias to every row of an `m × n` matrix.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let n = self.value(x).cols();
        if self.value(bias).len() != n {
            return Err(Error::Shape {
                op: "add_bias",
                expected: vec![n],
                got: self.value(bias).shape().to_vec(),
            });
        }
        let b = self.value(bias).data().to_vec();
        let mut value = self.value(x).clone();
        for row in value.data_mut().chunks_mut(n.max(1)) {
            for (o, &bv) in row.iter_mut().zip(&b) {
                *o = *o + bv;
            }
        }
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(value, Op::AddBias(x, bias), rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(T::zero()));
        let rg = self.rg(x);
        self.push(value, Op::Relu(x), rg)
    }

    /// Elementwise product with a constant mask of the same length.
    pub fn mul_mask(&mut self, x: Var, mask: Vec<T>) -> Result<Var> {
        if mask.len() != self.value(x).len() {
            return Err(Error::Shape {
                op: "mul_mask",
                expected: self.value(x).shape().to_vec(),
                got: vec![mask.len()],
            });
        }
        let mut value = self.value(x).clone();
        for (o, &m) in value.data_mut().iter_mut().zip(&mask) {
            *o = *o * m;
        }
        let rg = self.rg(x);
        Ok(self.push(value, Op::Mask(x, mask), rg))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::Shape {
                op,
                expected: self.value(a).shape().to_vec(),
                got: self.value(b).shape().to_vec(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x - y)
            .collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let value = self.value(x).map(|v| v * c);
        let rg = self.rg(x);
        self.push(value, Op::Scale(x, c), rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().copied().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(total), Op::Sum(x), rg)
    }

    /// Cross-entropy of row softmax against class targets.
    ///
    /// Rows with target `-1` contribute zero. The per-row losses are summed and
    /// divided by `denom`. The target probability is clamped to `[eps, 1]`
    /// before the log, so a clamped row has zero gradient.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[i64], denom: usize, eps: T) -> Result<Var> {
        let value = self.value(logits);
        let (b, k) = (value.rows(), value.cols());
        if value.shape().len() != 2 || targets.len() != b {
            return Err(Error::Shape {
                op: "softmax_cross_entropy",
                expected: vec![targets.len(), k],
                got: value.shape().to_vec(),
            });
        }
        if k < 2 {
            return Err(Error::Contract(format!(
                "cross-entropy needs at least 2 classes, got {k}"
            )));
        }
        if denom == 0 {
            return Err(Error::Contract("reduction denominator must be positive".into()));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t < -1 || t >= k as i64) {
            return Err(Error::TargetIndex {
                target: bad,
                classes: k,
            });
        }
        let mut probs = value.data().to_vec();
        let mut total = T::zero();
        for (row, &t) in probs.chunks_mut(k).zip(targets) {
            if t < 0 {
                row.iter_mut().for_each(|v| *v = T::zero());
                continue;
            }
            softmax_in_place(row);
            let p = row[t as usize];
            if p.is_nan() {
                total = total + p;
            } else if p < eps {
                total = total - eps.ln();
                row.iter_mut().for_each(|v| *v = T::zero());
            } else {
                total = total - p.min(T::one()).ln();
                row[t as usize] = row[t as usize] - T::one();
            }
        }
        let denom = T::from_usize(denom).expect("denominator fits in scalar");
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(total / denom),
            Op::SoftmaxCe {
                logits,
                denom,
                local_grad: probs,
            },
            rg,
        ))
    }

    /// Gradients of a scalar `loss` w.r.t. every recorded node.
    pub fn gradients(&self, loss: Var) -> Result<Gradients<T>> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if node.requires_grad {
                self.propagate(node, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Accumulates d`loss`/d`param` into every trainable parameter's buffer.
    /// Repeated calls add up.
    pub fn backward(&self, loss: Var) -> Result<()> {
        let grads = self.gradients(loss)?;
        for (node, g) in self.nodes.iter().zip(&grads.grads) {
            if let (Some(p), Some(g)) = (&node.param, g) {
                p.accumulate_grad(g);
            }
        }
        Ok(())
    }

    fn propagate(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let nodes = &self.nodes;
        let send = |grads: &mut [Option<Vec<T>>], to: Var, contrib: Vec<T>| {
            if !nodes[to.0].requires_grad {
                return;
            }
            match &mut grads[to.0] {
                Some(acc) => acc.iter_mut().zip(contrib).for_each(|(a, c)| *a = *a + c),
                slot @ None => *slot = Some(contrib),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                if self.rg(*a) {
                    // dA = dC · Bᵀ
                    let mut da = vec![T::zero(); m * k];
                    for i in 0..m {
                        let gi = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let br = &bv.data()[p * n..(p + 1) * n];
                            da[i * k + p] = gi.iter().zip(br).map(|(&x, &y)| x * y).sum();
                        }
                    }
                    send(grads, *a, da);
                }
                if self.rg(*b) {
                    // dB = Aᵀ · dC
                    let mut db = vec![T::zero(); k * n];
                    for i in 0..m {
                        let gi = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let aval = av.data()[i * k + p];
                            if aval == T::zero() {
                                continue;
                            }
                            for (o, &gv) in db[p * n..(p + 1) * n].iter_mut().zip(gi) {
                                *o = *o + aval * gv;
                            }
                        }
                    }
                    send(grads, *b, db);
                }
            }
            Op::AddBias(x, bias) => {
                let n = self.value(*x).cols();
                if self.rg(*bias) {
                    let mut db = vec![T::zero(); n];
                    for row in g.chunks(n.max(1)) {
                        db.iter_mut().zip(row).for_each(|(a, &v)| *a = *a + v);
                    }
                    send(grads, *bias, db);
                }
                send(grads, *x, g.to_vec());
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                let dx = g
                    .iter()
                    .zip(xv)
                    .map(|(&gv, &v)| if v > T::zero() { gv } else { T::zero() })
                    .collect();
                send(grads, *x, dx);
            }
            Op::Mask(x, mask) => {
                let dx = g.iter().zip(mask).map(|(&gv, &m)| gv * m).collect();
                send(grads, *x, dx);
            }
            Op::Add(a, b) => {
                send(grads, *a, g.to_vec());
                send(grads, *b, g.to_vec());
            }
            Op::Sub(a, b) => {
                send(grads, *a, g.to_vec());
                send(grads, *b, g.iter().map(|&v| -v).collect());
            }
            Op::Scale(x, c) => {
                send(grads, *x, g.iter().map(|&v| v * *c).collect());
            }
            Op::Sum(x) => {
                send(grads, *x, vec![g[0]; self.value(*x).len()]);
            }
            Op::SoftmaxCe {
                logits,
                denom,
                local_grad,
            } => {
                let scale = g[0] / *denom;
                send(grads, *logits, local_grad.iter().map(|&v| v * scale).collect());
            }
        }
    }
}
