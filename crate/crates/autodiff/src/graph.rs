//! Define-by-run computation graph.
//!
//! Every op evaluates eagerly and appends a node, so node order is a valid
//! topological order and `backward` is a single reverse sweep.

use crate::error::{Result, TensorError};
use crate::kernels;
use crate::tensor::{strides_of, Tensor};

/// Handle to a node inside one [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul {
        a: usize,
        b: usize,
    },
    Add {
        a: usize,
        b: usize,
    },
    Mul {
        a: usize,
        b: usize,
    },
    Permute {
        x: usize,
        axes: Vec<usize>,
    },
    Reshape {
        x: usize,
    },
    Slice {
        x: usize,
        axis: usize,
        start: usize,
    },
    Concat {
        xs: Vec<usize>,
        axis: usize,
    },
    Softmax {
        x: usize,
    },
    Log {
        x: usize,
    },
    Exp {
        x: usize,
    },
    Silu {
        x: usize,
    },
    LayerNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        stats: Vec<(f64, f64)>,
    },
    Gather {
        table: usize,
        indices: Vec<usize>,
    },
    CrossEntropy {
        logits: usize,
        targets: Vec<Option<usize>>,
        probs: Vec<f64>,
        count: usize,
    },
    Sum {
        x: usize,
    },
    L2Normalize {
        x: usize,
        norms: Vec<f64>,
    },
    RotatePairs {
        x: usize,
        cos: Vec<f64>,
        sin: Vec<f64>,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul { .. } => "matmul",
            Op::Add { .. } => "add",
            Op::Mul { .. } => "mul",
            Op::Permute { .. } => "transpose",
            Op::Reshape { .. } => "reshape",
            Op::Slice { .. } => "slice",
            Op::Concat { .. } => "concat",
            Op::Softmax { .. } => "softmax",
            Op::Log { .. } => "log",
            Op::Exp { .. } => "exp",
            Op::Silu { .. } => "silu",
            Op::LayerNorm { .. } => "layernorm",
            Op::Gather { .. } => "embedding",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::Sum { .. } => "sum",
            Op::L2Normalize { .. } => "l2_normalize",
            Op::RotatePairs { .. } => "rotate_pairs",
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of evaluated operations plus, after [`Graph::backward`],
/// the gradients of every leaf that requires them.
#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Option<Vec<Option<Tensor>>>,
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

    /// Leaf that receives a gradient.
    pub fn variable(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, false)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Result<Var> {
        let node = self.nodes.len();
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: "leaf", node });
        }
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Ok(Var(node))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn check(&self, v: Var) -> Result<&Tensor> {
        self.nodes
            .get(v.0)
            .map(|n| &n.value)
            .ok_or(TensorError::UnknownVar(v.0))
    }

    fn mismatch(&self, op: &'static str, detail: String) -> TensorError {
        TensorError::ShapeMismatch {
            op,
            node: Some(self.nodes.len()),
            detail,
        }
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[usize]) -> Result<Var> {
        let node = self.nodes.len();
        if !value.is_finite() {
            return Err(TensorError::NonFinite {
                op: op.name(),
                node,
            });
        }
        let requires_grad = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(node))
    }

    /// Batched matrix product `[.., m, k] x [.., k, n]`.
    ///
    /// The right operand is either rank 2 (shared by every batch entry) or
    /// carries exactly the same leading dimensions as the left one.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.check(a)?, self.check(b)?);
        let plan = matmul_plan(ta.shape(), tb.shape()).ok_or_else(|| {
            self.mismatch("matmul", format!("{:?} x {:?}", ta.shape(), tb.shape()))
        })?;
        let mut out = vec![0.0; plan.out_shape.iter().product()];
        plan.forward(ta.data(), tb.data(), &mut out);
        let value = Tensor::from_parts(plan.out_shape, out);
        self.push(value, Op::MatMul { a: a.0, b: b.0 }, &[a.0, b.0])
    }

    /// Element-wise sum with right-aligned broadcasting.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary("add", a, b, |x, y| x + y)?;
        self.push(out, Op::Add { a: a.0, b: b.0 }, &[a.0, b.0])
    }

    /// Element-wise product with right-aligned broadcasting.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary("mul", a, b, |x, y| x * y)?;
        self.push(out, Op::Mul { a: a.0, b: b.0 }, &[a.0, b.0])
    }

    fn binary(
        &self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let (ta, tb) = (self.check(a)?, self.check(b)?);
        let out_shape = broadcast_shape(ta.shape(), tb.shape()).ok_or_else(|| {
            self.mismatch(
                op,
                format!("cannot broadcast {:?} with {:?}", ta.shape(), tb.shape()),
            )
        })?;
        let mut out = vec![0.0; out_shape.iter().product()];
        if ta.shape() == tb.shape() {
            for ((o, x), y) in out.iter_mut().zip(ta.data()).zip(tb.data()) {
                *o = f(*x, *y);
            }
        } else {
            let sa = broadcast_strides(ta.shape(), &out_shape);
            let sb = broadcast_strides(tb.shape(), &out_shape);
            let (da, db) = (ta.data(), tb.data());
            kernels::broadcast_walk(&out_shape, &sa, &sb, |o, i, j| out[o] = f(da[i], db[j]));
        }
        Ok(Tensor::from_parts(out_shape, out))
    }

    /// Multiplies by a constant scalar.
    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let c = self.constant(Tensor::scalar(factor))?;
        self.mul(x, c)
    }

    /// Adds a constant tensor (broadcast like [`Graph::add`]).
    pub fn add_constant(&mut self, x: Var, c: Tensor) -> Result<Var> {
        let c = self.constant(c)?;
        self.add(x, c)
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let t = self.check(x)?;
        let mut seen = vec![false; t.rank()];
        if axes.len() != t.rank()
            || axes
                .iter()
                .any(|&a| a >= t.rank() || std::mem::replace(&mut seen[a], true))
        {
            return Err(self.mismatch(
                "transpose",
                format!("axes {axes:?} for shape {:?}", t.shape()),
            ));
        }
        let (shape, data) = kernels::permute(t.data(), t.shape(), axes);
        self.push(
            Tensor::from_parts(shape, data),
            Op::Permute {
                x: x.0,
                axes: axes.to_vec(),
            },
            &[x.0],
        )
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let rank = self.check(x)?.rank();
        if rank < 2 {
            return Err(self.mismatch(
                "transpose",
                format!("rank {rank} tensor has no matrix axes"),
            ));
        }
        let mut axes: Vec<usize> = (0..rank).collect();
        axes.swap(rank - 2, rank - 1);
        self.permute(x, &axes)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.check(x)?;
        if shape.iter().product::<usize>() != t.numel() || shape.contains(&0) {
            return Err(self.mismatch("reshape", format!("{:?} -> {shape:?}", t.shape())));
        }
        let value = Tensor::from_parts(shape.to_vec(), t.data().to_vec());
        self.push(value, Op::Reshape { x: x.0 }, &[x.0])
    }

    /// Elements `start..end` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let t = self.check(x)?;
        if axis >= t.rank() || start >= end || end > t.shape()[axis] {
            return Err(self.mismatch(
                "slice",
                format!("axis {axis} range {start}..{end} of {:?}", t.shape()),
            ));
        }
        let (outer, dim, inner) = split_axis(t.shape(), axis);
        let len = end - start;
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * dim * inner;
            out.extend_from_slice(&t.data()[base + start * inner..base + end * inner]);
        }
        let mut shape = t.shape().to_vec();
        shape[axis] = len;
        self.push(
            Tensor::from_parts(shape, out),
            Op::Slice {
                x: x.0,
                axis,
                start,
            },
            &[x.0],
        )
    }

    /// Joins tensors along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = xs
            .first()
            .ok_or_else(|| self.mismatch("concat", "no inputs".into()))?;
        let base_shape = self.check(*first)?.shape().to_vec();
        if axis >= base_shape.len() {
            return Err(self.mismatch(
                "concat",
                format!("axis {axis} out of range for {base_shape:?}"),
            ));
        }
        let mut total = 0;
        for &v in xs {
            let s = self.check(v)?.shape();
            let compatible = s.len() == base_shape.len()
                && s.iter()
                    .zip(&base_shape)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(self.mismatch(
                    "concat",
                    format!("{s:?} vs {base_shape:?} along axis {axis}"),
                ));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&base_shape, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in xs {
                let t = &self.nodes[v.0].value;
                let block = t.shape()[axis] * inner;
                out.extend_from_slice(&t.data()[o * block..(o + 1) * block]);
            }
        }
        let mut shape = base_shape;
        shape[axis] = total;
        let ids: Vec<usize> = xs.iter().map(|v| v.0).collect();
        self.push(
            Tensor::from_parts(shape, out),
            Op::Concat {
                xs: ids.clone(),
                axis,
            },
            &ids,
        )
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let t = self.check(x)?;
        let cols = last_dim(t.shape());
        let mut out = t.data().to_vec();
        for row in out.chunks_mut(cols) {
            kernels::softmax_in_place(row);
        }
        self.push(
            Tensor::from_parts(t.shape().to_vec(), out),
            Op::Softmax { x: x.0 },
            &[x.0],
        )
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        let out = self.unary(x, f64::ln)?;
        self.push(out, Op::Log { x: x.0 }, &[x.0])
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        let out = self.unary(x, f64::exp)?;
        self.push(out, Op::Exp { x: x.0 }, &[x.0])
    }

    /// `x * sigmoid(x)`.
    pub fn silu(&mut self, x: Var) -> Result<Var> {
        let out = self.unary(x, |v| v * kernels::sigmoid(v))?;
        self.push(out, Op::Silu { x: x.0 }, &[x.0])
    }

    fn unary(&self, x: Var, f: impl Fn(f64) -> f64) -> Result<Tensor> {
        let t = self.check(x)?;
        Ok(Tensor::from_parts(
            t.shape().to_vec(),
            t.data().iter().map(|&v| f(v)).collect(),
        ))
    }

    /// Layer normalization over the last axis with affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (t, g, b) = (self.check(x)?, self.check(gamma)?, self.check(beta)?);
        let d = last_dim(t.shape());
        if g.shape() != [d] || b.shape() != [d] {
            return Err(self.mismatch(
                "layernorm",
                format!(
                    "gain {:?} / bias {:?} for features {d}",
                    g.shape(),
                    b.shape()
                ),
            ));
        }
        let mut out = vec![0.0; t.numel()];
        let mut stats = Vec::with_capacity(t.numel() / d);
        for (row, o) in t.data().chunks(d).zip(out.chunks_mut(d)) {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let rstd = 1.0 / (var + eps).sqrt();
            for i in 0..d {
                o[i] = (row[i] - mean) * rstd * g.data()[i] + b.data()[i];
            }
            stats.push((mean, rstd));
        }
        let value = Tensor::from_parts(t.shape().to_vec(), out);
        self.push(
            value,
            Op::LayerNorm {
                x: x.0,
                gamma: gamma.0,
                beta: beta.0,
                stats,
            },
            &[x.0, gamma.0, beta.0],
        )
    }

    /// Embedding lookup: rows of a `[vocab, d]` table, giving `[indices.len(), d]`.
    pub fn embedding(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let t = self.check(table)?;
        if t.rank() != 2 || indices.is_empty() {
            return Err(self.mismatch(
                "embedding",
                format!("table {:?} with {} indices", t.shape(), indices.len()),
            ));
        }
        let (rows, d) = (t.shape()[0], t.shape()[1]);
        if let Some(bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(self.mismatch(
                "embedding",
                format!("index {bad} out of range for {rows} rows"),
            ));
        }
        let mut out = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            out.extend_from_slice(&t.data()[i * d..(i + 1) * d]);
        }
        let value = Tensor::from_parts(vec![indices.len(), d], out);
        self.push(
            value,
            Op::Gather {
                table: table.0,
                indices: indices.to_vec(),
            },
            &[table.0],
        )
    }

    /// Mean cross-entropy of `[n, classes]` logits over the rows whose target
    /// is `Some`; unlabeled rows contribute nothing.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>]) -> Result<Var> {
        let t = self.check(logits)?;
        if t.rank() != 2 || t.shape()[0] != targets.len() {
            return Err(self.mismatch(
                "cross_entropy",
                format!("logits {:?} with {} targets", t.shape(), targets.len()),
            ));
        }
        let classes = t.shape()[1];
        if let Some(bad) = targets.iter().flatten().find(|&&c| c >= classes) {
            return Err(self.mismatch(
                "cross_entropy",
                format!("target {bad} out of range for {classes} classes"),
            ));
        }
        let count = targets.iter().flatten().count();
        if count == 0 {
            return Err(TensorError::InvalidArgument(
                "cross_entropy needs at least one labeled row".into(),
            ));
        }
        let mut probs = t.data().to_vec();
        let mut total = 0.0;
        for (row, (p, target)) in t
            .data()
            .chunks(classes)
            .zip(probs.chunks_mut(classes).zip(targets))
        {
            let lse = kernels::log_sum_exp(row);
            kernels::softmax_in_place(p);
            if let Some(c) = target {
                total += lse - row[*c];
            }
        }
        let value = Tensor::scalar(total / count as f64);
        let op = Op::CrossEntropy {
            logits: logits.0,
            targets: targets.to_vec(),
            probs,
            count,
        };
        self.push(value, op, &[logits.0])
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let t = self.check(x)?;
        let value = Tensor::scalar(t.data().iter().sum());
        self.push(value, Op::Sum { x: x.0 }, &[x.0])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.check(x)?.numel();
        let s = self.sum(x)?;
        self.scale(s, 1.0 / n as f64)
    }

    /// Divides every vector along the last axis by its Euclidean norm.
    pub fn l2_normalize(&mut self, x: Var) -> Result<Var> {
        let t = self.check(x)?;
        let d = last_dim(t.shape());
        let mut out = t.data().to_vec();
        let mut norms = Vec::with_capacity(t.numel() / d);
        for (r, row) in out.chunks_mut(d).enumerate() {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(TensorError::ZeroNorm {
                    node: self.nodes.len(),
                    row: r,
                });
            }
            row.iter_mut().for_each(|v| *v /= norm);
            norms.push(norm);
        }
        let value = Tensor::from_parts(t.shape().to_vec(), out);
        self.push(value, Op::L2Normalize { x: x.0, norms }, &[x.0])
    }

    /// Rotates consecutive pairs `(x[2i], x[2i+1])` of the last axis.
    ///
    /// `x` is `[.., seq, d]`; `cos` and `sin` are `[seq, d/2]` tables, so every
    /// leading index shares the per-position angles.
    pub fn rotate_pairs(&mut self, x: Var, cos: &[f64], sin: &[f64]) -> Result<Var> {
        let t = self.check(x)?;
        let rank = t.rank();
        if rank < 2 || !last_dim(t.shape()).is_multiple_of(2) {
            return Err(self.mismatch(
                "rotate_pairs",
                format!("input {:?} needs [.., seq, even]", t.shape()),
            ));
        }
        let (seq, d) = (t.shape()[rank - 2], t.shape()[rank - 1]);
        if cos.len() != seq * d / 2 || sin.len() != cos.len() {
            return Err(self.mismatch(
                "rotate_pairs",
                format!(
                    "tables of {} / {} entries for seq {seq}, dim {d}",
                    cos.len(),
                    sin.len()
                ),
            ));
        }
        let mut out = t.data().to_vec();
        kernels::rotate(&mut out, seq, d, cos, sin, false);
        let value = Tensor::from_parts(t.shape().to_vec(), out);
        let op = Op::RotatePairs {
            x: x.0,
            cos: cos.to_vec(),
            sin: sin.to_vec(),
        };
        self.push(value, op, &[x.0])
    }

    /// Reverse sweep from a scalar `loss`; afterwards [`Graph::grad`] returns
    /// the accumulated gradient of each leaf that requires one.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let t = self.check(loss)?;
        if t.numel() != 1 {
            return Err(TensorError::NotScalar {
                shape: t.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if let Op::Leaf = node.op {
                grads[id] = Some(g);
                continue;
            }
            self.backprop_node(id, &g, &mut grads);
        }
        let leaf_grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, n)| match (g, &n.op) {
                (Some(g), Op::Leaf) => Some(Tensor::from_parts(n.value.shape().to_vec(), g)),
                _ => None,
            })
            .collect();
        self.grads = Some(leaf_grads);
        Ok(())
    }

    /// Gradient of a leaf after [`Graph::backward`]; `None` for leaves that do
    /// not require gradients or are unreachable from the loss.
    pub fn grad(&self, v: Var) -> Result<Option<&Tensor>> {
        let grads = self.grads.as_ref().ok_or(TensorError::BackwardNotRun)?;
        let slot = grads.get(v.0).ok_or(TensorError::UnknownVar(v.0))?;
        Ok(slot.as_ref())
    }

    /// Like [`Graph::grad`] but yields zeros for leaves the loss does not reach.
    pub fn grad_or_zeros(&self, v: Var) -> Result<Tensor> {
        Ok(match self.grad(v)? {
            Some(g) => g.clone(),
            None => Tensor::zeros(self.value(v).shape()),
        })
    }

    fn backprop_node(&self, id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        let wants = |i: usize| self.nodes[i].requires_grad;
        let val = |i: usize| &self.nodes[i].value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let plan =
                    matmul_plan(val(*a).shape(), val(*b).shape()).expect("validated in forward");
                if wants(*a) {
                    let slot = slot(grads, *a, val(*a).numel());
                    plan.grad_lhs(g, val(*b).data(), slot);
                }
                if wants(*b) {
                    let slot = slot(grads, *b, val(*b).numel());
                    plan.grad_rhs(val(*a).data(), g, slot);
                }
            }
            Op::Add { a, b } => {
                for &(x, _) in [(a, b), (b, a)].iter() {
                    if !wants(*x) {
                        continue;
                    }
                    let tx = val(*x);
                    let out = slot(grads, *x, tx.numel());
                    if tx.shape() == node.value.shape() {
                        out.iter_mut().zip(g).for_each(|(o, gi)| *o += gi);
                    } else {
                        let sx = broadcast_strides(tx.shape(), node.value.shape());
                        let zero = vec![0; sx.len()];
                        kernels::broadcast_walk(node.value.shape(), &sx, &zero, |o, i, _| {
                            out[i] += g[o]
                        });
                    }
                }
            }
            Op::Mul { a, b } => {
                let out_shape = node.value.shape();
                let sa = broadcast_strides(val(*a).shape(), out_shape);
                let sb = broadcast_strides(val(*b).shape(), out_shape);
                for &(x, y, sx, sy) in [(a, b, &sa, &sb), (b, a, &sb, &sa)].iter() {
                    if !wants(*x) {
                        continue;
                    }
                    let other = val(*y).data();
                    let out = slot(grads, *x, val(*x).numel());
                    kernels::broadcast_walk(out_shape, sx, sy, |o, i, j| out[i] += g[o] * other[j]);
                }
            }
            Op::Permute { x, axes } => {
                if wants(*x) {
                    let mut inverse = vec![0; axes.len()];
                    for (i, &a) in axes.iter().enumerate() {
                        inverse[a] = i;
                    }
                    let (_, back) = kernels::permute(g, node.value.shape(), &inverse);
                    add_into(slot(grads, *x, back.len()), &back);
                }
            }
            Op::Reshape { x } => {
                if wants(*x) {
                    add_into(slot(grads, *x, g.len()), g);
                }
            }
            Op::Slice { x, axis, start } => {
                if wants(*x) {
                    let in_shape = val(*x).shape();
                    let (outer, dim, inner) = split_axis(in_shape, *axis);
                    let len = node.value.shape()[*axis];
                    let out = slot(grads, *x, val(*x).numel());
                    for o in 0..outer {
                        let dst = o * dim * inner + start * inner;
                        let src = o * len * inner;
                        add_into(&mut out[dst..dst + len * inner], &g[src..src + len * inner]);
                    }
                }
            }
            Op::Concat { xs, axis } => {
                let (outer, total, inner) = split_axis(node.value.shape(), *axis);
                let mut offset = 0;
                for &x in xs {
                    let len = val(x).shape()[*axis];
                    if wants(x) {
                        let out = slot(grads, x, val(x).numel());
                        for o in 0..outer {
                            let src = o * total * inner + offset * inner;
                            let dst = o * len * inner;
                            add_into(&mut out[dst..dst + len * inner], &g[src..src + len * inner]);
                        }
                    }
                    offset += len;
                }
            }
            Op::Softmax { x } => {
                if wants(*x) {
                    let y = node.value.data();
                    let cols = last_dim(node.value.shape());
                    let out = slot(grads, *x, y.len());
                    for ((yr, gr), or) in
                        y.chunks(cols).zip(g.chunks(cols)).zip(out.chunks_mut(cols))
                    {
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for i in 0..cols {
                            or[i] += yr[i] * (gr[i] - dot);
                        }
                    }
                }
            }
            Op::Log { x } => {
                if wants(*x) {
                    let xv = val(*x).data();
                    let out = slot(grads, *x, xv.len());
                    for i in 0..xv.len() {
                        out[i] += g[i] / xv[i];
                    }
                }
            }
            Op::Exp { x } => {
                if wants(*x) {
                    let y = node.value.data();
                    let out = slot(grads, *x, y.len());
                    for i in 0..y.len() {
                        out[i] += g[i] * y[i];
                    }
                }
            }
            Op::Silu { x } => {
                if wants(*x) {
                    let xv = val(*x).data();
                    let out = slot(grads, *x, xv.len());
                    for i in 0..xv.len() {
                        let s = kernels::sigmoid(xv[i]);
                        out[i] += g[i] * s * (1.0 + xv[i] * (1.0 - s));
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                stats,
            } => {
                let xv = val(*x).data();
                let gv = val(*gamma).data();
                let d = gv.len();
                let mut dgamma = vec![0.0; d];
                let mut dbeta = vec![0.0; d];
                let mut dx = vec![0.0; if wants(*x) { xv.len() } else { 0 }];
                let mut dxhat = vec![0.0; d];
                for (r, &(mean, rstd)) in stats.iter().enumerate() {
                    let row = &xv[r * d..(r + 1) * d];
                    let gr = &g[r * d..(r + 1) * d];
                    let (mut m1, mut m2) = (0.0, 0.0);
                    for i in 0..d {
                        let xhat = (row[i] - mean) * rstd;
                        dgamma[i] += gr[i] * xhat;
                        dbeta[i] += gr[i];
                        dxhat[i] = gr[i] * gv[i];
                        m1 += dxhat[i];
                        m2 += dxhat[i] * xhat;
                    }
                    if !dx.is_empty() {
                        let (m1, m2) = (m1 / d as f64, m2 / d as f64);
                        for i in 0..d {
                            let xhat = (row[i] - mean) * rstd;
                            dx[r * d + i] = rstd * (dxhat[i] - m1 - xhat * m2);
                        }
                    }
                }
                if wants(*x) {
                    add_into(slot(grads, *x, xv.len()), &dx);
                }
                if wants(*gamma) {
                    add_into(slot(grads, *gamma, d), &dgamma);
                }
                if wants(*beta) {
                    add_into(slot(grads, *beta, d), &dbeta);
                }
            }
            Op::Gather { table, indices } => {
                if wants(*table) {
                    let d = val(*table).shape()[1];
                    let out = slot(grads, *table, val(*table).numel());
                    for (r, &i) in indices.iter().enumerate() {
                        add_into(&mut out[i * d..(i + 1) * d], &g[r * d..(r + 1) * d]);
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
                count,
            } => {
                if wants(*logits) {
                    let classes = val(*logits).shape()[1];
                    let scale = g[0] / *count as f64;
                    let out = slot(grads, *logits, probs.len());
                    for (r, target) in targets.iter().enumerate() {
                        let Some(c) = target else { continue };
                        let row = &probs[r * classes..(r + 1) * classes];
                        let o = &mut out[r * classes..(r + 1) * classes];
                        for i in 0..classes {
                            o[i] += scale * row[i];
                        }
                        o[*c] -= scale;
                    }
                }
            }
            Op::Sum { x } => {
                if wants(*x) {
                    let out = slot(grads, *x, val(*x).numel());
                    out.iter_mut().for_each(|o| *o += g[0]);
                }
            }
            Op::L2Normalize { x, norms } => {
                if wants(*x) {
                    let y = node.value.data();
                    let d = last_dim(node.value.shape());
                    let out = slot(grads, *x, y.len());
                    for (r, norm) in norms.iter().enumerate() {
                        let yr = &y[r * d..(r + 1) * d];
                        let gr = &g[r * d..(r + 1) * d];
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for i in 0..d {
                            out[r * d + i] += (gr[i] - yr[i] * dot) / norm;
                        }
                    }
                }
            }
            Op::RotatePairs { x, cos, sin } => {
                if wants(*x) {
                    let shape = node.value.shape();
                    let rank = shape.len();
                    let mut back = g.to_vec();
                    kernels::rotate(&mut back, shape[rank - 2], shape[rank - 1], cos, sin, true);
                    add_into(slot(grads, *x, back.len()), &back);
                }
            }
        }
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], id: usize, n: usize) -> &mut Vec<f64> {
    grads[id].get_or_insert_with(|| vec![0.0; n])
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

fn last_dim(shape: &[usize]) -> usize {
    *shape.last().unwrap_or(&1)
}

/// `(product before axis, axis length, product after axis)`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (
        shape[..axis].iter().product(),
        shape[axis],
        shape[axis + 1..].iter().product(),
    )
}

/// Right-aligned (numpy-style) broadcast of two shapes.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank {
            a[i + a.len() - rank]
        } else {
            1
        };
        let db = if i + b.len() >= rank {
            b[i + b.len() - rank]
        } else {
            1
        };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Strides of `shape` viewed inside the broadcast `out` shape (0 on broadcast axes).
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let own = strides_of(shape);
    let offset = out.len() - shape.len();
    (0..out.len())
        .map(|i| {
            if i < offset || shape[i - offset] == 1 {
                0
            } else {
                own[i - offset]
            }
        })
        .collect()
}

struct MatMulPlan {
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
    shared_rhs: bool,
    out_shape: Vec<usize>,
}

fn matmul_plan(a: &[usize], b: &[usize]) -> Option<MatMulPlan> {
    if a.len() < 2 || b.len() < 2 {
        return None;
    }
    let (m, k) = (a[a.len() - 2], a[a.len() - 1]);
    let (kb, n) = (b[b.len() - 2], b[b.len() - 1]);
    if k != kb {
        return None;
    }
    let lead = &a[..a.len() - 2];
    let shared_rhs = b.len() == 2;
    if !shared_rhs && lead != &b[..b.len() - 2] {
        return None;
    }
    let mut out_shape = lead.to_vec();
    out_shape.extend([m, n]);
    Some(MatMulPlan {
        batch: lead.iter().product(),
        m,
        k,
        n,
        shared_rhs,
        out_shape,
    })
}

impl MatMulPlan {
    fn forward(&self, a: &[f64], b: &[f64], c: &mut [f64]) {
        let (m, k, n) = (self.m, self.k, self.n);
        if self.shared_rhs {
            kernels::gemm(self.batch * m, k, n, a, (k, 1), b, (n, 1), c, 0.0);
            return;
        }
        for i in 0..self.batch {
            kernels::gemm(
                m,
                k,
                n,
                &a[i * m * k..],
                (k, 1),
                &b[i * k * n..],
                (n, 1),
                &mut c[i * m * n..(i + 1) * m * n],
                0.0,
            );
        }
    }

    /// `dA += dC · Bᵀ`
    fn grad_lhs(&self, dc: &[f64], b: &[f64], da: &mut [f64]) {
        let (m, k, n) = (self.m, self.k, self.n);
        if self.shared_rhs {
            kernels::gemm(self.batch * m, n, k, dc, (n, 1), b, (1, n), da, 1.0);
            return;
        }
        for i in 0..self.batch {
            kernels::gemm(
                m,
                n,
                k,
                &dc[i * m * n..],
                (n, 1),
                &b[i * k * n..],
                (1, n),
                &mut da[i * m * k..(i + 1) * m * k],
                1.0,
            );
        }
    }

    /// `dB += Aᵀ · dC`
    fn grad_rhs(&self, a: &[f64], dc: &[f64], db: &mut [f64]) {
        let (m, k, n) = (self.m, self.k, self.n);
        if self.shared_rhs {
            kernels::gemm(k, self.batch * m, n, a, (1, k), dc, (n, 1), db, 1.0);
            return;
        }
        for i in 0..self.batch {
            kernels::gemm(
                k,
                m,
                n,
                &a[i * m * k..],
                (1, k),
                &dc[i * m * n..],
                (n, 1),
                &mut db[i * k * n..(i + 1) * k * n],
                1.0,
            );
        }
    }
}
