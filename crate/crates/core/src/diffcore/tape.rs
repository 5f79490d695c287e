//! Reverse-mode gradient tape.
//!
//! Every operation appends a node holding its forward value, so nodes are
//! always in topological order and [`Tape::backward`] is a single reverse
//! sweep. Accumulation order is fixed by node order, which makes gradients
//! bit-reproducible.

use super::tensor::{row_cross_entropy, sigmoid, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Affine(Var, Var, Var),
    Relu(Var),
    SoftmaxProbs(Var),
    RowCrossEntropy {
        logits: Var,
        labels: Vec<u8>,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<u8>,
    },
    Mul(Var, Var),
    /// `x ⊙ scale + offset`; the offset does not enter the gradient.
    ScaleShift {
        input: Var,
        scale: Vec<f64>,
    },
    NegLn(Var),
    Sum(Var),
    MaskedMean {
        input: Var,
        mask: Vec<f64>,
        count: f64,
    },
    Abs(Var),
    Max {
        inputs: Vec<Var>,
        winner: usize,
    },
    WeightedSum {
        inputs: Vec<Var>,
        weights: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of a forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar root with respect to every `requires_grad` leaf.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for a leaf created with [`Tape::var`]; `None` for constants
    /// and interior nodes.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Gradient of a differentiable leaf, panicking if `var` is not one.
    pub fn wrt(&self, var: Var) -> &Tensor {
        self.get(var)
            .expect("gradient requested for a node that is not a differentiable leaf")
    }
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

    /// Differentiable leaf.
    pub fn var(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Non-differentiable leaf.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Value of a scalar node.
    pub fn scalar(&self, v: Var) -> f64 {
        let t = self.value(v);
        debug_assert!(t.is_scalar());
        t.data()[0]
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn expect_scalar(&self, op: &'static str, v: Var) -> Result<f64> {
        let t = self.value(v);
        t.item().ok_or_else(|| Error::shape(op, t.shape(), (1, 1)))
    }

    fn check_labels(&self, op: &'static str, logits: Var, labels: &[u8]) -> Result<()> {
        let t = self.value(logits);
        if t.cols() != 2 || t.rows() != labels.len() {
            return Err(Error::shape(op, t.shape(), (labels.len(), 2)));
        }
        if labels.is_empty() {
            return Err(Error::Contract(format!("{op}: empty batch")));
        }
        if labels.iter().any(|&y| y > 1) {
            return Err(Error::Contract(format!("{op}: labels must be 0 or 1")));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let value = self.value(x).affine(self.value(w), self.value(b))?;
        let rg = self.rg(&[x, w, b]);
        Ok(self.push(value, Op::Affine(x, w, b), rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).relu();
        let rg = self.rg(&[x]);
        self.push(value, Op::Relu(x), rg)
    }

    /// Class-1 probability per row of `m x 2` logits (`m x 1` result).
    pub fn softmax_probs(&mut self, logits: Var) -> Result<Var> {
        let value = self.value(logits).softmax_probs()?;
        let rg = self.rg(&[logits]);
        Ok(self.push(value, Op::SoftmaxProbs(logits), rg))
    }

    /// Per-row `-ln softmax(z)_y` as an `m x 1` column.
    pub fn row_cross_entropy(&mut self, logits: Var, labels: &[u8]) -> Result<Var> {
        self.check_labels("row_cross_entropy", logits, labels)?;
        let value = Tensor::column(&row_cross_entropy(self.value(logits), labels));
        let rg = self.rg(&[logits]);
        Ok(self.push(
            value,
            Op::RowCrossEntropy {
                logits,
                labels: labels.to_vec(),
            },
            rg,
        ))
    }

    /// Mean cross-entropy over the batch.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[u8]) -> Result<Var> {
        self.check_labels("cross_entropy", logits, labels)?;
        let rows = row_cross_entropy(self.value(logits), labels);
        let mean = rows.iter().sum::<f64>() / rows.len() as f64;
        let rg = self.rg(&[logits]);
        Ok(self.push(
            Tensor::scalar(mean),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
            },
            rg,
        ))
    }

    /// Elementwise product of equally shaped nodes.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape("mul", ta.shape(), tb.shape()));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| x * y)
            .collect();
        let value = Tensor::new(ta.rows(), ta.cols(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    /// `x ⊙ scale + offset` with constant per-element `scale` and `offset`.
    pub fn scale_shift(&mut self, x: Var, scale: &[f64], offset: &[f64]) -> Result<Var> {
        let t = self.value(x);
        if scale.len() != t.len() || offset.len() != t.len() {
            return Err(Error::Shape {
                op: "scale_shift",
                lhs: format!("{}x{}", t.rows(), t.cols()),
                rhs: format!("{} scales, {} offsets", scale.len(), offset.len()),
            });
        }
        let data = t
            .data()
            .iter()
            .zip(scale.iter().zip(offset))
            .map(|(v, (s, o))| v * s + o)
            .collect();
        let value = Tensor::new(t.rows(), t.cols(), data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(
            value,
            Op::ScaleShift {
                input: x,
                scale: scale.to_vec(),
            },
            rg,
        ))
    }

    /// Elementwise `-ln x`; inputs must be strictly positive.
    pub fn neg_ln(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.data().iter().any(|&v| v <= 0.0) {
            return Err(Error::Contract("neg_ln: non-positive input".into()));
        }
        let value = t.map(|v| -v.ln());
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::NegLn(x), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).data().iter().sum());
        let rg = self.rg(&[x]);
        self.push(value, Op::Sum(x), rg)
    }

    /// `Σ v_i mask_i / Σ mask_i`; `mask` is a constant 0/1 vector.
    pub fn masked_mean(&mut self, v: Var, mask: &[f64]) -> Result<Var> {
        let t = self.value(v);
        if t.len() != mask.len() {
            return Err(Error::Shape {
                op: "masked_mean",
                lhs: format!("{}x{}", t.rows(), t.cols()),
                rhs: format!("mask of {}", mask.len()),
            });
        }
        if mask.iter().any(|&m| m != 0.0 && m != 1.0) {
            return Err(Error::Contract(
                "masked_mean: mask entries must be 0 or 1".into(),
            ));
        }
        let count: f64 = mask.iter().sum();
        if count == 0.0 {
            return Err(Error::EmptyGroup(
                "masked_mean: mask selects no rows".into(),
            ));
        }
        let total: f64 = t.data().iter().zip(mask).map(|(x, m)| x * m).sum();
        let rg = self.rg(&[v]);
        Ok(self.push(
            Tensor::scalar(total / count),
            Op::MaskedMean {
                input: v,
                mask: mask.to_vec(),
                count,
            },
            rg,
        ))
    }

    pub fn abs(&mut self, s: Var) -> Result<Var> {
        let v = self.expect_scalar("abs", s)?;
        let rg = self.rg(&[s]);
        Ok(self.push(Tensor::scalar(v.abs()), Op::Abs(s), rg))
    }

    /// Maximum of scalars; the subgradient goes to the lowest-index argmax.
    pub fn max(&mut self, inputs: &[Var]) -> Result<Var> {
        if inputs.is_empty() {
            return Err(Error::Contract("max of zero scalars".into()));
        }
        let mut winner = 0;
        let mut best = self.expect_scalar("max", inputs[0])?;
        for (i, &v) in inputs.iter().enumerate().skip(1) {
            let x = self.expect_scalar("max", v)?;
            if x > best {
                best = x;
                winner = i;
            }
        }
        let rg = self.rg(inputs);
        Ok(self.push(
            Tensor::scalar(best),
            Op::Max {
                inputs: inputs.to_vec(),
                winner,
            },
            rg,
        ))
    }

    /// Index (into `inputs`) that received the subgradient of a `max` node.
    pub fn max_winner(&self, v: Var) -> Option<usize> {
        match &self.nodes[v.0].op {
            Op::Max { winner, .. } => Some(*winner),
            _ => None,
        }
    }

    pub fn weighted_sum(&mut self, inputs: &[Var], weights: &[f64]) -> Result<Var> {
        if inputs.len() != weights.len() {
            return Err(Error::Contract(format!(
                "weighted_sum: {} scalars but {} weights",
                inputs.len(),
                weights.len()
            )));
        }
        let mut total = 0.0;
        for (&v, w) in inputs.iter().zip(weights) {
            total += w * self.expect_scalar("weighted_sum", v)?;
        }
        let rg = self.rg(inputs);
        Ok(self.push(
            Tensor::scalar(total),
            Op::WeightedSum {
                inputs: inputs.to_vec(),
                weights: weights.to_vec(),
            },
            rg,
        ))
    }

    /// Reverse sweep from a scalar `root`.
    ///
    /// Every differentiable leaf receives a gradient, zero-filled when it does
    /// not influence the root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let rt = &self.nodes[root.0].value;
        if !rt.is_scalar() {
            return Err(Error::Contract(format!(
                "backward root must be scalar, got {}x{}",
                rt.rows(),
                rt.cols()
            )));
        }
        let mut adj: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[root.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = adj[idx].take() else { continue };
            self.propagate(node, &g, &mut adj);
            adj[idx] = Some(g);
        }

        let grads = self
            .nodes
            .iter()
            .zip(adj)
            .map(|(node, g)| {
                (matches!(node.op, Op::Leaf) && node.requires_grad).then(|| {
                    g.unwrap_or_else(|| Tensor::zeros(node.value.rows(), node.value.cols()))
                })
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &Tensor, adj: &mut [Option<Tensor>]) {
        let mut send = |v: Var, contrib: Tensor| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut adj[v.0] {
                Some(acc) => acc.add_assign(&contrib),
                slot @ None => *slot = Some(contrib),
            }
        };
        let val = |v: Var| &self.nodes[v.0].value;

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                send(*a, g.matmul_t(val(*b)));
                send(*b, val(*a).t_matmul(g));
            }
            Op::Affine(x, w, b) => {
                send(*x, g.matmul_t(val(*w)));
                send(*w, val(*x).t_matmul(g));
                send(*b, g.col_sums());
            }
            Op::Relu(x) => {
                let xv = val(*x);
                let data = xv
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&z, &gz)| if z > 0.0 { gz } else { 0.0 })
                    .collect();
                send(*x, Tensor::new(xv.rows(), xv.cols(), data).unwrap());
            }
            Op::SoftmaxProbs(logits) => {
                let p = &node.value;
                let mut data = Vec::with_capacity(p.len() * 2);
                for (pi, gi) in p.data().iter().zip(g.data()) {
                    let d = pi * (1.0 - pi) * gi;
                    data.push(-d);
                    data.push(d);
                }
                send(*logits, Tensor::new(p.rows(), 2, data).unwrap());
            }
            Op::RowCrossEntropy { logits, labels } => {
                send(*logits, ce_logit_grad(val(*logits), labels, g.data()));
            }
            Op::CrossEntropy { logits, labels } => {
                let scale = g.data()[0] / labels.len() as f64;
                let per_row = vec![scale; labels.len()];
                send(*logits, ce_logit_grad(val(*logits), labels, &per_row));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let ga = tb.data().iter().zip(g.data()).map(|(x, y)| x * y).collect();
                let gb = ta.data().iter().zip(g.data()).map(|(x, y)| x * y).collect();
                send(*a, Tensor::new(ta.rows(), ta.cols(), ga).unwrap());
                send(*b, Tensor::new(tb.rows(), tb.cols(), gb).unwrap());
            }
            Op::ScaleShift { input, scale } => {
                let t = val(*input);
                let data = scale.iter().zip(g.data()).map(|(s, gi)| s * gi).collect();
                send(*input, Tensor::new(t.rows(), t.cols(), data).unwrap());
            }
            Op::NegLn(x) => {
                let t = val(*x);
                let data = t
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(v, gi)| -gi / v)
                    .collect();
                send(*x, Tensor::new(t.rows(), t.cols(), data).unwrap());
            }
            Op::Sum(x) => {
                let t = val(*x);
                send(*x, Tensor::filled(t.rows(), t.cols(), g.data()[0]));
            }
            Op::MaskedMean { input, mask, count } => {
                let t = val(*input);
                let gs = g.data()[0] / count;
                let data = mask.iter().map(|m| m * gs).collect();
                send(*input, Tensor::new(t.rows(), t.cols(), data).unwrap());
            }
            Op::Abs(s) => {
                let x = val(*s).data()[0];
                let sign = if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                send(*s, Tensor::scalar(sign * g.data()[0]));
            }
            Op::Max { inputs, winner } => {
                send(inputs[*winner], g.clone());
            }
            Op::WeightedSum { inputs, weights } => {
                for (v, w) in inputs.iter().zip(weights) {
                    send(*v, Tensor::scalar(w * g.data()[0]));
                }
            }
        }
    }
}

/// d(-ln softmax(z)_y)/dz scaled per row: `(softmax(z) - onehot(y)) * g_row`.
fn ce_logit_grad(logits: &Tensor, labels: &[u8], row_scale: &[f64]) -> Tensor {
    let mut data = Vec::with_capacity(labels.len() * 2);
    for ((z, &y), &s) in logits.data().chunks(2).zip(labels).zip(row_scale) {
        let p1 = sigmoid(z[1] - z[0]);
        let y = f64::from(y);
        data.push(((1.0 - p1) - (1.0 - y)) * s);
        data.push((p1 - y) * s);
    }
    Tensor::new(labels.len(), 2, data).unwrap()
}
