//! Tape-based reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! Every primitive is evaluated eagerly when it is recorded, so a [`Tape`]
//! always holds the value of each node. [`Tape::backward`] walks the nodes in
//! reverse recording order, which is a valid reverse topological order because
//! a node can only reference nodes recorded before it.
//!
//! Derivative conventions at non-differentiable points:
//!
//! - `clip(lo, hi)` has derivative 1 on the closed interval `[lo, hi]`, so
//!   the linear path stays alive at the threshold.
//! - `sign` has derivative 0 everywhere, and `sign(0) = 1`.
//! - `abs` and `relu` have derivative 0 at the origin.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a node on the [`Tape`] that issued it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct VarId {
    tape: u64,
    index: usize,
}

impl VarId {
    pub fn index(self) -> usize {
        self.index
    }
}

/// The primitive operations a tape can record.
#[derive(Clone, Debug, PartialEq)]
pub enum Primitive {
    Add,
    Sub,
    /// Elementwise product.
    Mul,
    /// `[m,k] x [k,n]`.
    MatMul,
    /// Adds a rank-1 bias over the last axis.
    AddBias,
    /// Expands a rank-1 tensor of length 1 or `shape[last]` to `shape`.
    Broadcast { shape: Vec<usize> },
    Scale(f64),
    Shift(f64),
    Clip { lo: f64, hi: f64 },
    Sigmoid,
    Tanh,
    Exp,
    Log,
    Square,
    Abs,
    Sign,
    Relu,
    /// `mask[i] ? a[i] : b[i]`.
    Select { mask: Vec<bool> },
    Sum,
    /// Mean of a rank-2 tensor over `axis`.
    MeanAxis(usize),
    /// Mean negative log-likelihood of `targets` under `softmax(logits)`.
    SoftmaxCrossEntropy { targets: Vec<usize> },
}

impl Primitive {
    pub fn name(&self) -> &'static str {
        match self {
            Primitive::Add => "add",
            Primitive::Sub => "sub",
            Primitive::Mul => "mul",
            Primitive::MatMul => "matmul",
            Primitive::AddBias => "add_bias",
            Primitive::Broadcast { .. } => "broadcast",
            Primitive::Scale(_) => "scale",
            Primitive::Shift(_) => "shift",
            Primitive::Clip { .. } => "clip",
            Primitive::Sigmoid => "sigmoid",
            Primitive::Tanh => "tanh",
            Primitive::Exp => "exp",
            Primitive::Log => "log",
            Primitive::Square => "square",
            Primitive::Abs => "abs",
            Primitive::Sign => "sign",
            Primitive::Relu => "relu",
            Primitive::Select { .. } => "select",
            Primitive::Sum => "sum",
            Primitive::MeanAxis(_) => "mean_axis",
            Primitive::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
        }
    }

    pub fn arity(&self) -> usize {
        match self {
            Primitive::Add
            | Primitive::Sub
            | Primitive::Mul
            | Primitive::MatMul
            | Primitive::AddBias
            | Primitive::Select { .. } => 2,
            _ => 1,
        }
    }
}

/// Numerically stable logistic function; `sigmoid(0) == 0.5` exactly.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Sign with `sgn(0) = 1`.
pub fn sign(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

fn unary(x: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    x.map(f)
}

fn forward(prim: &Primitive, inputs: &[&Tensor]) -> Result<Tensor> {
    let name = prim.name();
    let x = inputs[0];
    Ok(match prim {
        Primitive::Add => x.zip_map(inputs[1], name, |a, b| a + b)?,
        Primitive::Sub => x.zip_map(inputs[1], name, |a, b| a - b)?,
        Primitive::Mul => x.zip_map(inputs[1], name, |a, b| a * b)?,
        Primitive::MatMul => x.matmul(inputs[1])?,
        Primitive::AddBias => {
            let b = inputs[1];
            if b.rank() != 1 || x.rank() == 0 || b.len() != x.last_dim() {
                return Err(Error::Shape {
                    op: name,
                    lhs: x.shape().to_vec(),
                    rhs: b.shape().to_vec(),
                });
            }
            let n = b.len();
            let mut out = x.clone();
            for row in out.data_mut().chunks_mut(n) {
                for (o, bv) in row.iter_mut().zip(b.data()) {
                    *o += bv;
                }
            }
            out
        }
        Primitive::Broadcast { shape } => {
            let target_last = shape.last().copied().unwrap_or(1);
            if x.rank() != 1 || !(x.len() == 1 || x.len() == target_last) {
                return Err(Error::Shape {
                    op: name,
                    lhs: x.shape().to_vec(),
                    rhs: shape.clone(),
                });
            }
            let src = x.data();
            let n = src.len();
            Tensor::from_fn(shape, |i| src[i % n])
        }
        Primitive::Scale(k) => unary(x, |v| k * v),
        Primitive::Shift(k) => unary(x, |v| v + k),
        Primitive::Clip { lo, hi } => unary(x, |v| v.max(*lo).min(*hi)),
        Primitive::Sigmoid => unary(x, sigmoid),
        Primitive::Tanh => unary(x, f64::tanh),
        Primitive::Exp => unary(x, f64::exp),
        Primitive::Log => unary(x, f64::ln),
        Primitive::Square => unary(x, |v| v * v),
        Primitive::Abs => unary(x, f64::abs),
        Primitive::Sign => unary(x, sign),
        Primitive::Relu => unary(x, |v| if v > 0.0 { v } else { 0.0 }),
        Primitive::Select { mask } => {
            let b = inputs[1];
            x.expect_same_shape(b, name)?;
            if mask.len() != x.len() {
                return Err(Error::Shape {
                    op: name,
                    lhs: x.shape().to_vec(),
                    rhs: vec![mask.len()],
                });
            }
            let data = mask
                .iter()
                .zip(x.data().iter().zip(b.data()))
                .map(|(&m, (&a, &b))| if m { a } else { b })
                .collect();
            Tensor::new(x.shape().to_vec(), data)?
        }
        Primitive::Sum => Tensor::scalar(x.sum()),
        Primitive::MeanAxis(axis) => {
            let [m, n] = x.shape()[..] else {
                return Err(Error::Shape {
                    op: name,
                    lhs: x.shape().to_vec(),
                    rhs: vec![*axis],
                });
            };
            match axis {
                0 => {
                    let mut out = vec![0.0; n];
                    for row in x.data().chunks(n) {
                        for (o, v) in out.iter_mut().zip(row) {
                            *o += v;
                        }
                    }
                    Tensor::vector(out.into_iter().map(|v| v / m as f64).collect())
                }
                1 => Tensor::vector(
                    x.data()
                        .chunks(n)
                        .map(|row| row.iter().sum::<f64>() / n as f64)
                        .collect(),
                ),
                _ => {
                    return Err(Error::InvalidArgument(format!(
                        "mean_axis: axis {axis} out of range for rank 2"
                    )))
                }
            }
        }
        Primitive::SoftmaxCrossEntropy { targets } => {
            let k = check_logits(x, targets)?;
            let mut total = 0.0;
            for (row, &t) in x.data().chunks(k).zip(targets) {
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                total += lse - row[t];
            }
            Tensor::scalar(total / targets.len() as f64)
        }
    })
}

fn check_logits(x: &Tensor, targets: &[usize]) -> Result<usize> {
    let name = "softmax_cross_entropy";
    let [b, k] = x.shape()[..] else {
        return Err(Error::Shape {
            op: name,
            lhs: x.shape().to_vec(),
            rhs: vec![targets.len()],
        });
    };
    if b != targets.len() || b == 0 {
        return Err(Error::Shape {
            op: name,
            lhs: x.shape().to_vec(),
            rhs: vec![targets.len()],
        });
    }
    if let Some(&t) = targets.iter().find(|&&t| t >= k) {
        return Err(Error::InvalidArgument(format!(
            "{name}: target class {t} out of range for {k} classes"
        )));
    }
    Ok(k)
}

/// Vector-Jacobian products for each input, given the upstream gradient `g`.
fn vjp(prim: &Primitive, inputs: &[&Tensor], out: &Tensor, g: &Tensor) -> Vec<Tensor> {
    let x = inputs[0];
    let along = |f: &dyn Fn(f64, f64) -> f64| -> Tensor {
        Tensor::from_fn(x.shape(), |i| f(x.data()[i], g.data()[i]))
    };
    match prim {
        Primitive::Add => vec![g.clone(), g.clone()],
        Primitive::Sub => vec![g.clone(), g.map(|v| -v)],
        Primitive::Mul => {
            let b = inputs[1];
            vec![
                Tensor::from_fn(x.shape(), |i| g.data()[i] * b.data()[i]),
                Tensor::from_fn(x.shape(), |i| g.data()[i] * x.data()[i]),
            ]
        }
        Primitive::MatMul => {
            let b = inputs[1];
            let bt = b.transpose().expect("rank checked on record");
            let xt = x.transpose().expect("rank checked on record");
            vec![
                g.matmul(&bt).expect("shapes checked on record"),
                xt.matmul(g).expect("shapes checked on record"),
            ]
        }
        Primitive::AddBias => {
            let n = inputs[1].len();
            let mut gb = vec![0.0; n];
            for row in g.data().chunks(n) {
                for (acc, v) in gb.iter_mut().zip(row) {
                    *acc += v;
                }
            }
            vec![g.clone(), Tensor::vector(gb)]
        }
        Primitive::Broadcast { .. } => {
            let n = x.len();
            let mut gx = vec![0.0; n];
            for (i, v) in g.data().iter().enumerate() {
                gx[i % n] += v;
            }
            vec![Tensor::vector(gx)]
        }
        Primitive::Scale(k) => vec![g.map(|v| k * v)],
        Primitive::Shift(_) => vec![g.clone()],
        Primitive::Clip { lo, hi } => {
            vec![along(&|xv, gv| if xv >= *lo && xv <= *hi { gv } else { 0.0 })]
        }
        Primitive::Sigmoid => vec![Tensor::from_fn(x.shape(), |i| {
            let y = out.data()[i];
            g.data()[i] * y * (1.0 - y)
        })],
        Primitive::Tanh => vec![Tensor::from_fn(x.shape(), |i| {
            let y = out.data()[i];
            g.data()[i] * (1.0 - y * y)
        })],
        Primitive::Exp => vec![Tensor::from_fn(x.shape(), |i| g.data()[i] * out.data()[i])],
        Primitive::Log => vec![along(&|xv, gv| gv / xv)],
        Primitive::Square => vec![along(&|xv, gv| 2.0 * xv * gv)],
        Primitive::Abs => vec![along(&|xv, gv| {
            if xv > 0.0 {
                gv
            } else if xv < 0.0 {
                -gv
            } else {
                0.0
            }
        })],
        Primitive::Sign => vec![Tensor::zeros(x.shape())],
        Primitive::Relu => vec![along(&|xv, gv| if xv > 0.0 { gv } else { 0.0 })],
        Primitive::Select { mask } => vec![
            Tensor::from_fn(x.shape(), |i| if mask[i] { g.data()[i] } else { 0.0 }),
            Tensor::from_fn(x.shape(), |i| if mask[i] { 0.0 } else { g.data()[i] }),
        ],
        Primitive::Sum => {
            let gv = g.data()[0];
            vec![Tensor::full(x.shape(), gv)]
        }
        Primitive::MeanAxis(axis) => {
            let (m, n) = (x.shape()[0], x.shape()[1]);
            let gd = g.data();
            let grad = if *axis == 0 {
                Tensor::from_fn(x.shape(), |i| gd[i % n] / m as f64)
            } else {
                Tensor::from_fn(x.shape(), |i| gd[i / n] / n as f64)
            };
            vec![grad]
        }
        Primitive::SoftmaxCrossEntropy { targets } => {
            let k = x.last_dim();
            let scale = g.data()[0] / targets.len() as f64;
            let mut grad = Vec::with_capacity(x.len());
            for (row, &t) in x.data().chunks(k).zip(targets) {
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
                let z: f64 = exps.iter().sum();
                for (j, e) in exps.into_iter().enumerate() {
                    let onehot = if j == t { 1.0 } else { 0.0 };
                    grad.push((e / z - onehot) * scale);
                }
            }
            vec![Tensor::new(x.shape().to_vec(), grad).expect("same length as logits")]
        }
    }
}

enum NodeKind {
    Leaf,
    Op {
        prim: Primitive,
        inputs: Vec<usize>,
    },
}

struct Node {
    value: Tensor,
    kind: NodeKind,
}

/// Records primitive operations for a single forward pass.
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Adds an input node. Constants are leaves whose gradient is never read.
    pub fn leaf(&mut self, value: Tensor) -> VarId {
        self.push(value, NodeKind::Leaf)
    }

    pub fn constant(&mut self, value: Tensor) -> VarId {
        self.leaf(value)
    }

    fn push(&mut self, value: Tensor, kind: NodeKind) -> VarId {
        self.nodes.push(Node { value, kind });
        VarId {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn check(&self, v: VarId) -> Result<usize> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(Error::ForeignVar { index: v.index });
        }
        Ok(v.index)
    }

    /// Value of `v`.
    ///
    /// Panics if `v` was issued by another tape.
    pub fn value(&self, v: VarId) -> &Tensor {
        let idx = self.check(v).expect("VarId used on a tape that did not issue it");
        &self.nodes[idx].value
    }

    /// Evaluates `prim` on the values of `inputs` and records it.
    pub fn record(&mut self, prim: Primitive, inputs: &[VarId]) -> Result<VarId> {
        if inputs.len() != prim.arity() {
            return Err(Error::InvalidArgument(format!(
                "{} takes {} inputs, got {}",
                prim.name(),
                prim.arity(),
                inputs.len()
            )));
        }
        let idx = inputs
            .iter()
            .map(|&v| self.check(v))
            .collect::<Result<Vec<_>>>()?;
        let values: Vec<&Tensor> = idx.iter().map(|&i| &self.nodes[i].value).collect();
        let value = forward(&prim, &values)?;
        Ok(self.push(value, NodeKind::Op { prim, inputs: idx }))
    }

    pub fn add(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.record(Primitive::Add, &[a, b])
    }

    pub fn sub(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.record(Primitive::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.record(Primitive::Mul, &[a, b])
    }

    pub fn matmul(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.record(Primitive::MatMul, &[a, b])
    }

    pub fn add_bias(&mut self, x: VarId, bias: VarId) -> Result<VarId> {
        self.record(Primitive::AddBias, &[x, bias])
    }

    pub fn broadcast(&mut self, x: VarId, shape: &[usize]) -> Result<VarId> {
        self.record(
            Primitive::Broadcast {
                shape: shape.to_vec(),
            },
            &[x],
        )
    }

    pub fn scale(&mut self, x: VarId, k: f64) -> Result<VarId> {
        self.record(Primitive::Scale(k), &[x])
    }

    pub fn shift(&mut self, x: VarId, k: f64) -> Result<VarId> {
        self.record(Primitive::Shift(k), &[x])
    }

    pub fn clip(&mut self, x: VarId, lo: f64, hi: f64) -> Result<VarId> {
        if !(lo <= hi) {
            return Err(Error::InvalidArgument(format!("clip: lo {lo} > hi {hi}")));
        }
        self.record(Primitive::Clip { lo, hi }, &[x])
    }

    pub fn sigmoid(&mut self, x: VarId) -> Result<VarId> {
        self.record(Primitive::Sigmoid, &[x])
    }

    pub fn tanh(&mut self, x: VarId) -> Result<VarId> {
        self.record(Primitive::Tanh, &[x])
    }

    pub fn exp(&mut self, x: VarId) -> Result<VarId> {
        self.record(Primitive::Exp, &[x])
    }

    pub fn log(&mut self, x: VarId) -> Result<VarId> {
        self.record(Primitive::Log, &[x])
    }

    pub fn square(&mut self, x: VarId) -> Result<VarId> {
        self.record(Primitive::Square, &[x])
    }

    pub fn abs(&mut self, x: VarId) -> Result<VarId> {
        self.record(Primitive::Abs, &[x])
    }

    pub fn sign(&mut self, x: VarId) -> Result<VarId> {
        self.record(Primitive::Sign, &[x])
    }

    pub fn relu(&mut self, x: VarId) -> Result<VarId> {
        self.record(Primitive::Relu, &[x])
    }

    pub fn select(&mut self, mask: Vec<bool>, a: VarId, b: VarId) -> Result<VarId> {
        self.record(Primitive::Select { mask }, &[a, b])
    }

    pub fn sum(&mut self, x: VarId) -> Result<VarId> {
        self.record(Primitive::Sum, &[x])
    }

    pub fn mean_axis(&mut self, x: VarId, axis: usize) -> Result<VarId> {
        self.record(Primitive::MeanAxis(axis), &[x])
    }

    pub fn softmax_cross_entropy(&mut self, logits: VarId, targets: &[usize]) -> Result<VarId> {
        self.record(
            Primitive::SoftmaxCrossEntropy {
                targets: targets.to_vec(),
            },
            &[logits],
        )
    }

    /// Gradient of the scalar `root` with respect to every node on the tape.
    ///
    /// Nodes that `root` does not depend on receive zeros.
    pub fn backward(&self, root: VarId) -> Result<Gradients> {
        let root_idx = self.check(root)?;
        let root_value = &self.nodes[root_idx].value;
        if root_value.len() != 1 {
            return Err(Error::NonScalarRoot(root_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; root_idx + 1];
        grads[root_idx] = Some(Tensor::ones(root_value.shape()));
        for i in (0..=root_idx).rev() {
            let NodeKind::Op { prim, inputs } = &self.nodes[i].kind else {
                continue;
            };
            let Some(g) = grads[i].take() else {
                continue;
            };
            let values: Vec<&Tensor> = inputs.iter().map(|&j| &self.nodes[j].value).collect();
            let contributions = vjp(prim, &values, &self.nodes[i].value, &g);
            for (&j, c) in inputs.iter().zip(contributions) {
                match &mut grads[j] {
                    Some(acc) => acc.add_assign(&c)?,
                    slot @ None => *slot = Some(c),
                }
            }
            grads[i] = Some(g);
        }
        let grads = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, node)| {
                grads
                    .get_mut(i)
                    .and_then(Option::take)
                    .unwrap_or_else(|| Tensor::zeros(node.value.shape()))
            })
            .collect();
        Ok(Gradients {
            tape: self.id,
            grads,
        })
    }
}

/// Result of [`Tape::backward`].
pub struct Gradients {
    tape: u64,
    grads: Vec<Tensor>,
}

impl Gradients {
    pub fn get(&self, v: VarId) -> Result<&Tensor> {
        if v.tape != self.tape || v.index >= self.grads.len() {
            return Err(Error::ForeignVar { index: v.index });
        }
        Ok(&self.grads[v.index])
    }
}
