//! Operation tape and reverse-mode accumulation.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::{Array, AutodiffError};

/// Handle of a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Scale(NodeId, f64),
    MatMul(NodeId, NodeId),
    Concat(Vec<NodeId>, Axis),
    Slice(NodeId, Axis, usize),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Softmax(NodeId),
    Embedding(NodeId, Vec<usize>),
    Dropout(NodeId, Vec<f64>),
    Sum(NodeId),
    Stack(Vec<NodeId>),
    AttnScores(NodeId, NodeId),
    AttnContext(NodeId, NodeId),
    Nll {
        logits: NodeId,
        targets: Vec<usize>,
        pad: usize,
        probs: Vec<f64>,
        count: usize,
    },
}

#[derive(Debug)]
struct Node {
    value: Array,
    op: Op,
    requires_grad: bool,
}

/// Records primitive operations in execution order, so inputs always
/// precede the node that consumes them.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Array>>,
}

impl Gradients {
    /// Gradient of a node, `None` when the loss does not depend on it.
    pub fn get(&self, id: NodeId) -> Option<&Array> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    /// Gradient of a node, zeros of `shape` when unreachable.
    pub fn get_or_zeros(&self, id: NodeId, shape: &[usize]) -> Array {
        self.get(id).cloned().unwrap_or_else(|| Array::zeros(shape))
    }

    pub fn take(&mut self, id: NodeId) -> Option<Array> {
        self.grads.get_mut(id.0).and_then(Option::take)
    }
}

fn mismatch(op: &'static str, a: &Array, b: &Array) -> AutodiffError {
    AutodiffError::ShapeMismatch {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

fn require2(op: &'static str, a: &Array) -> Result<(usize, usize), AutodiffError> {
    a.dims2().ok_or_else(|| AutodiffError::ShapeMismatch {
        op,
        left: a.shape().to_vec(),
        right: Vec::new(),
    })
}

/// `c = alpha * a * b + beta * c` with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() > (m - 1) * rsa + (k - 1) * csa);
    assert!(b.len() > (k - 1) * rsb + (n - 1) * csb);
    assert!(c.len() >= m * n);
    // SAFETY: the asserts above keep every strided access inside the slices,
    // and `c` is exclusively borrowed.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Gradient accumulator for input `j`, or `None` if it takes no gradient.
fn slot<'g>(nodes: &[Node], grads: &'g mut [Option<Array>], j: NodeId) -> Option<&'g mut Array> {
    if !nodes[j.0].requires_grad {
        return None;
    }
    Some(grads[j.0].get_or_insert_with(|| Array::zeros(nodes[j.0].value.shape())))
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

fn softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &x) in out.iter_mut().zip(row) {
        *o = libm::exp(x - max);
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
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

    pub fn value(&self, id: NodeId) -> &Array {
        &self.nodes[id.0].value
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn push(&mut self, value: Array, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn rg(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|&i| self.nodes[i.0].requires_grad)
    }

    /// A differentiable input.
    pub fn param(&mut self, value: Array) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    /// A constant input; no gradient is accumulated for it.
    pub fn constant(&mut self, value: Array) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    fn zip_same(
        &mut self,
        op: &'static str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
        make: impl FnOnce(NodeId, NodeId) -> Op,
    ) -> Result<NodeId, AutodiffError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(mismatch(op, va, vb));
        }
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Array::from_vec(va.shape(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, make(a, b), rg))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.zip_same("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.zip_same("sub", a, b, |x, y| x - y, Op::Sub)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.zip_same("mul", a, b, |x, y| x * y, Op::Mul)
    }

    /// Adds a bias row (`[C]` or `[1, C]`) to every row of `a` (`[R, C]`).
    pub fn add_row(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId, AutodiffError> {
        let (va, vb) = (self.value(a), self.value(bias));
        let (_, c) = require2("add_row", va)?;
        if vb.len() != c || vb.shape().len() > 2 || (vb.shape().len() == 2 && vb.shape()[0] != 1) {
            return Err(mismatch("add_row", va, vb));
        }
        let mut value = va.clone();
        for row in value.data_mut().chunks_mut(c) {
            for (x, b) in row.iter_mut().zip(vb.data()) {
                *x += b;
            }
        }
        let rg = self.rg(&[a, bias]);
        Ok(self.push(value, Op::AddRow(a, bias), rg))
    }

    pub fn scale(&mut self, a: NodeId, k: f64) -> NodeId {
        let mut value = self.value(a).clone();
        value.scale_assign(k);
        let rg = self.rg(&[a]);
        self.push(value, Op::Scale(a, k), rg)
    }

    /// `[M, K] x [K, N] -> [M, N]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        let (va, vb) = (self.value(a), self.value(b));
        let (m, k) = require2("matmul", va)?;
        let (k2, n) = require2("matmul", vb)?;
        if k != k2 {
            return Err(mismatch("matmul", va, vb));
        }
        let mut out = Array::zeros(&[m, n]);
        gemm(
            m,
            k,
            n,
            va.data(),
            (k, 1),
            vb.data(),
            (n, 1),
            0.0,
            out.data_mut(),
        );
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    /// Concatenates 2-D arrays along rows or columns.
    pub fn concat(&mut self, inputs: &[NodeId], axis: Axis) -> Result<NodeId, AutodiffError> {
        let first = *inputs.first().ok_or(AutodiffError::EmptyInput("concat"))?;
        let (r0, c0) = require2("concat", self.value(first))?;
        let mut dims = Vec::with_capacity(inputs.len());
        for &id in inputs {
            let v = self.value(id);
            let (r, c) = require2("concat", v)?;
            let ok = match axis {
                Axis::Rows => c == c0,
                Axis::Cols => r == r0,
            };
            if !ok {
                return Err(mismatch("concat", self.value(first), v));
            }
            dims.push((r, c));
        }
        let value = match axis {
            Axis::Rows => {
                let rows = dims.iter().map(|d| d.0).sum();
                let mut data = Vec::with_capacity(rows * c0);
                for &id in inputs {
                    data.extend_from_slice(self.value(id).data());
                }
                Array::from_vec(&[rows, c0], data)?
            }
            Axis::Cols => {
                let cols: usize = dims.iter().map(|d| d.1).sum();
                let mut data = Vec::with_capacity(r0 * cols);
                for r in 0..r0 {
                    for &id in inputs {
                        data.extend_from_slice(self.value(id).row(r));
                    }
                }
                Array::from_vec(&[r0, cols], data)?
            }
        };
        let rg = self.rg(inputs);
        Ok(self.push(value, Op::Concat(inputs.to_vec(), axis), rg))
    }

    /// Half-open `start..end` range of rows or columns of a 2-D array.
    pub fn slice(
        &mut self,
        a: NodeId,
        axis: Axis,
        start: usize,
        end: usize,
    ) -> Result<NodeId, AutodiffError> {
        let va = self.value(a);
        let (r, c) = require2("slice", va)?;
        let limit = if axis == Axis::Rows { r } else { c };
        if start >= end || end > limit {
            return Err(AutodiffError::SliceOutOfRange {
                start,
                end,
                len: limit,
            });
        }
        let value = match axis {
            Axis::Rows => {
                Array::from_vec(&[end - start, c], va.data()[start * c..end * c].to_vec())?
            }
            Axis::Cols => {
                let mut data = Vec::with_capacity(r * (end - start));
                for i in 0..r {
                    data.extend_from_slice(&va.row(i)[start..end]);
                }
                Array::from_vec(&[r, end - start], data)?
            }
        };
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::Slice(a, axis, start), rg))
    }

    fn map(&mut self, a: NodeId, f: impl Fn(f64) -> f64, op: Op) -> NodeId {
        let va = self.value(a);
        let data = va.data().iter().map(|&x| f(x)).collect();
        let value = Array::from_vec(va.shape(), data).expect("same shape");
        let rg = self.rg(&[a]);
        self.push(value, op, rg)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.map(a, libm::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.map(a, sigmoid, Op::Sigmoid(a))
    }

    /// Softmax over the last axis (each row of a 2-D array).
    pub fn softmax(&mut self, a: NodeId) -> NodeId {
        let va = self.value(a);
        let c = *va.shape().last().unwrap();
        let mut value = Array::zeros(va.shape());
        for (src, dst) in va.data().chunks(c).zip(value.data_mut().chunks_mut(c)) {
            softmax_row(src, dst);
        }
        let rg = self.rg(&[a]);
        self.push(value, Op::Softmax(a), rg)
    }

    /// Gathers rows of `table` (`[V, E]`) -> `[indices.len(), E]`.
    pub fn embedding(&mut self, table: NodeId, indices: &[usize]) -> Result<NodeId, AutodiffError> {
        let vt = self.value(table);
        let (v, e) = require2("embedding", vt)?;
        if indices.is_empty() {
            return Err(AutodiffError::EmptyInput("embedding"));
        }
        let mut data = Vec::with_capacity(indices.len() * e);
        for &i in indices {
            if i >= v {
                return Err(AutodiffError::IndexOutOfVocab { index: i, vocab: v });
            }
            data.extend_from_slice(vt.row(i));
        }
        let value = Array::from_vec(&[indices.len(), e], data)?;
        let rg = self.rg(&[table]);
        Ok(self.push(value, Op::Embedding(table, indices.to_vec()), rg))
    }

    /// Inverted dropout. Identity when `rng` is `None` (evaluation) or the
    /// rate is zero; otherwise each element is zeroed with probability
    /// `rate` and survivors are scaled by `1 / (1 - rate)`.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        a: NodeId,
        rate: f64,
        rng: Option<&mut R>,
    ) -> NodeId {
        let Some(rng) = rng else { return a };
        if rate <= 0.0 {
            return a;
        }
        let keep = 1.0 - rate;
        let n = self.value(a).len();
        let mask: Vec<f64> = (0..n)
            .map(|_| {
                if rng.random::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            })
            .collect();
        self.dropout_with_mask(a, mask)
    }

    /// Multiplies by a fixed mask (already scaled).
    pub fn dropout_with_mask(&mut self, a: NodeId, mask: Vec<f64>) -> NodeId {
        let va = self.value(a);
        assert_eq!(va.len(), mask.len(), "dropout mask length");
        let data = va.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let value = Array::from_vec(va.shape(), data).expect("same shape");
        let rg = self.rg(&[a]);
        self.push(value, Op::Dropout(a, mask), rg)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let total = self.value(a).data().iter().sum();
        let rg = self.rg(&[a]);
        self.push(Array::scalar(total), Op::Sum(a), rg)
    }

    /// Stacks `S` arrays of shape `[B, D]` into `[B, S, D]`.
    pub fn stack(&mut self, steps: &[NodeId]) -> Result<NodeId, AutodiffError> {
        let first = *steps.first().ok_or(AutodiffError::EmptyInput("stack"))?;
        let (b, d) = require2("stack", self.value(first))?;
        for &id in steps {
            if self.value(id).shape() != [b, d] {
                return Err(mismatch("stack", self.value(first), self.value(id)));
            }
        }
        let s = steps.len();
        let mut data = vec![0.0; b * s * d];
        for (t, &id) in steps.iter().enumerate() {
            let v = self.value(id);
            for i in 0..b {
                data[(i * s + t) * d..(i * s + t + 1) * d].copy_from_slice(v.row(i));
            }
        }
        let value = Array::from_vec(&[b, s, d], data)?;
        let rg = self.rg(steps);
        Ok(self.push(value, Op::Stack(steps.to_vec()), rg))
    }

    fn attn_dims(&self, memory: NodeId) -> Result<(usize, usize, usize), AutodiffError> {
        match self.value(memory).shape()[..] {
            [b, s, d] => Ok((b, s, d)),
            _ => Err(AutodiffError::ShapeMismatch {
                op: "attention",
                left: self.value(memory).shape().to_vec(),
                right: Vec::new(),
            }),
        }
    }

    /// Dot-product scores: `memory [B, S, D]`, `query [B, D]` -> `[B, S]`.
    pub fn attn_scores(&mut self, memory: NodeId, query: NodeId) -> Result<NodeId, AutodiffError> {
        let (b, s, d) = self.attn_dims(memory)?;
        let (vm, vq) = (self.value(memory), self.value(query));
        if vq.shape() != [b, d] {
            return Err(mismatch("attn_scores", vm, vq));
        }
        let (m, q) = (vm.data(), vq.data());
        let mut out = vec![0.0; b * s];
        for i in 0..b {
            let qi = &q[i * d..(i + 1) * d];
            for t in 0..s {
                let row = &m[(i * s + t) * d..(i * s + t + 1) * d];
                out[i * s + t] = row.iter().zip(qi).map(|(x, y)| x * y).sum();
            }
        }
        let value = Array::from_vec(&[b, s], out)?;
        let rg = self.rg(&[memory, query]);
        Ok(self.push(value, Op::AttnScores(memory, query), rg))
    }

    /// Weighted sum: `weights [B, S]`, `memory [B, S, D]` -> `[B, D]`.
    pub fn attn_context(
        &mut self,
        weights: NodeId,
        memory: NodeId,
    ) -> Result<NodeId, AutodiffError> {
        let (b, s, d) = self.attn_dims(memory)?;
        let (vw, vm) = (self.value(weights), self.value(memory));
        if vw.shape() != [b, s] {
            return Err(mismatch("attn_context", vw, vm));
        }
        let (w, m) = (vw.data(), vm.data());
        let mut out = vec![0.0; b * d];
        for i in 0..b {
            let oi = &mut out[i * d..(i + 1) * d];
            for t in 0..s {
                let wt = w[i * s + t];
                let row = &m[(i * s + t) * d..(i * s + t + 1) * d];
                for (o, x) in oi.iter_mut().zip(row) {
                    *o += wt * x;
                }
            }
        }
        let value = Array::from_vec(&[b, d], out)?;
        let rg = self.rg(&[weights, memory]);
        Ok(self.push(value, Op::AttnContext(weights, memory), rg))
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax of
    /// `logits [N, V]`; rows whose target equals `pad` are excluded from
    /// both sum and count. All-pad input yields zero.
    pub fn nll_loss(
        &mut self,
        logits: NodeId,
        targets: &[usize],
        pad: usize,
    ) -> Result<NodeId, AutodiffError> {
        let vl = self.value(logits);
        let (n, v) = require2("nll_loss", vl)?;
        if targets.len() != n {
            return Err(AutodiffError::ShapeMismatch {
                op: "nll_loss",
                left: vl.shape().to_vec(),
                right: vec![targets.len()],
            });
        }
        let mut probs = vec![0.0; n * v];
        let mut total = 0.0;
        let mut count = 0;
        for (i, &t) in targets.iter().enumerate() {
            if t == pad {
                continue;
            }
            if t >= v {
                return Err(AutodiffError::IndexOutOfVocab { index: t, vocab: v });
            }
            let row = vl.row(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + libm::log(row.iter().map(|x| libm::exp(x - max)).sum::<f64>());
            total += lse - row[t];
            count += 1;
            softmax_row(row, &mut probs[i * v..(i + 1) * v]);
        }
        let loss = if count == 0 {
            0.0
        } else {
            total / count as f64
        };
        let rg = self.rg(&[logits]) && count > 0;
        Ok(self.push(
            Array::scalar(loss),
            Op::Nll {
                logits,
                targets: targets.to_vec(),
                pad,
                probs,
                count,
            },
            rg,
        ))
    }

    /// Gradients of a scalar node with respect to every node it depends on.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients, AutodiffError> {
        let v = self.value(loss);
        if !v.is_scalar() {
            return Err(AutodiffError::NonScalarLoss(v.shape().to_vec()));
        }
        self.backward_with_seed(loss, Array::from_vec(v.shape(), vec![1.0])?)
    }

    /// Reverse accumulation starting from an arbitrary upstream gradient.
    pub fn backward_with_seed(
        &self,
        root: NodeId,
        seed: Array,
    ) -> Result<Gradients, AutodiffError> {
        if seed.shape() != self.value(root).shape() {
            return Err(mismatch("backward", self.value(root), &seed));
        }
        let mut grads: Vec<Option<Array>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.nodes[root.0].requires_grad {
            grads[root.0] = Some(seed);
        }
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, i: usize, g: &Array, grads: &mut [Option<Array>]) {
        let node = &self.nodes[i];
        let nodes = &self.nodes;
        macro_rules! acc {
            ($j:expr) => {
                slot(nodes, grads, $j)
            };
        }
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if let Some(ga) = acc!(*a) {
                    ga.add_assign(g);
                }
                if let Some(gb) = acc!(*b) {
                    gb.add_assign(g);
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = acc!(*a) {
                    ga.add_assign(g);
                }
                if let Some(gb) = acc!(*b) {
                    for (x, y) in gb.data_mut().iter_mut().zip(gd) {
                        *x -= y;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
                if let Some(ga) = acc!(*a) {
                    for ((x, gi), bi) in ga.data_mut().iter_mut().zip(gd).zip(vb.data()) {
                        *x += gi * bi;
                    }
                }
                if let Some(gb) = acc!(*b) {
                    for ((x, gi), ai) in gb.data_mut().iter_mut().zip(gd).zip(va.data()) {
                        *x += gi * ai;
                    }
                }
            }
            Op::AddRow(a, bias) => {
                if let Some(ga) = acc!(*a) {
                    ga.add_assign(g);
                }
                if let Some(gb) = acc!(*bias) {
                    let c = gb.len();
                    for row in gd.chunks(c) {
                        for (x, y) in gb.data_mut().iter_mut().zip(row) {
                            *x += y;
                        }
                    }
                }
            }
            Op::Scale(a, k) => {
                if let Some(ga) = acc!(*a) {
                    for (x, y) in ga.data_mut().iter_mut().zip(gd) {
                        *x += k * y;
                    }
                }
            }
            Op::MatMul(a, b) => {
                let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
                let (m, k) = va.dims2().unwrap();
                let n = vb.dims2().unwrap().1;
                if let Some(ga) = acc!(*a) {
                    // dA += G * B^T
                    gemm(m, n, k, gd, (n, 1), vb.data(), (1, n), 1.0, ga.data_mut());
                }
                if let Some(gb) = acc!(*b) {
                    // dB += A^T * G
                    gemm(k, m, n, va.data(), (1, k), gd, (n, 1), 1.0, gb.data_mut());
                }
            }
            Op::Concat(inputs, axis) => {
                let (_, cols) = g.dims2().unwrap();
                let mut offset = 0;
                for &id in inputs {
                    let (r, c) = nodes[id.0].value.dims2().unwrap();
                    if let Some(gi) = acc!(id) {
                        match axis {
                            Axis::Rows => {
                                for (x, y) in gi
                                    .data_mut()
                                    .iter_mut()
                                    .zip(&gd[offset * cols..(offset + r) * cols])
                                {
                                    *x += y;
                                }
                            }
                            Axis::Cols => {
                                for row in 0..r {
                                    let src = &gd[row * cols + offset..row * cols + offset + c];
                                    for (x, y) in
                                        gi.data_mut()[row * c..(row + 1) * c].iter_mut().zip(src)
                                    {
                                        *x += y;
                                    }
                                }
                            }
                        }
                    }
                    offset += if *axis == Axis::Rows { r } else { c };
                }
            }
            Op::Slice(a, axis, start) => {
                let (r, c) = nodes[a.0].value.dims2().unwrap();
                if let Some(ga) = acc!(*a) {
                    match axis {
                        Axis::Rows => {
                            for (x, y) in ga.data_mut()[start * c..].iter_mut().zip(gd) {
                                *x += y;
                            }
                        }
                        Axis::Cols => {
                            let w = g.dims2().unwrap().1;
                            for row in 0..r {
                                let dst = &mut ga.data_mut()[row * c + start..row * c + start + w];
                                for (x, y) in dst.iter_mut().zip(&gd[row * w..(row + 1) * w]) {
                                    *x += y;
                                }
                            }
                        }
                    }
                }
            }
            Op::Tanh(a) => {
                if let Some(ga) = acc!(*a) {
                    for ((x, gi), y) in ga.data_mut().iter_mut().zip(gd).zip(node.value.data()) {
                        *x += gi * (1.0 - y * y);
                    }
                }
            }
            Op::Sigmoid(a) => {
                if let Some(ga) = acc!(*a) {
                    for ((x, gi), y) in ga.data_mut().iter_mut().zip(gd).zip(node.value.data()) {
                        *x += gi * y * (1.0 - y);
                    }
                }
            }
            Op::Softmax(a) => {
                if let Some(ga) = acc!(*a) {
                    let c = *node.value.shape().last().unwrap();
                    let y = node.value.data();
                    for ((dst, gr), yr) in ga
                        .data_mut()
                        .chunks_mut(c)
                        .zip(gd.chunks(c))
                        .zip(y.chunks(c))
                    {
                        let dot: f64 = gr.iter().zip(yr).map(|(p, q)| p * q).sum();
                        for ((x, gi), yi) in dst.iter_mut().zip(gr).zip(yr) {
                            *x += yi * (gi - dot);
                        }
                    }
                }
            }
            Op::Embedding(table, indices) => {
                if let Some(gt) = acc!(*table) {
                    let e = gt.dims2().unwrap().1;
                    for (r, &idx) in indices.iter().enumerate() {
                        let dst = &mut gt.data_mut()[idx * e..(idx + 1) * e];
                        for (x, y) in dst.iter_mut().zip(&gd[r * e..(r + 1) * e]) {
                            *x += y;
                        }
                    }
                }
            }
            Op::Dropout(a, mask) => {
                if let Some(ga) = acc!(*a) {
                    for ((x, gi), m) in ga.data_mut().iter_mut().zip(gd).zip(mask) {
                        *x += gi * m;
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(ga) = acc!(*a) {
                    for x in ga.data_mut() {
                        *x += gd[0];
                    }
                }
            }
            Op::Stack(steps) => {
                let [b, s, d] = node.value.shape()[..] else {
                    unreachable!()
                };
                for (t, &id) in steps.iter().enumerate() {
                    if let Some(gi) = acc!(id) {
                        for i in 0..b {
                            let src = &gd[(i * s + t) * d..(i * s + t + 1) * d];
                            for (x, y) in gi.data_mut()[i * d..(i + 1) * d].iter_mut().zip(src) {
                                *x += y;
                            }
                        }
                    }
                }
            }
            Op::AttnScores(memory, query) => {
                let vm = &nodes[memory.0].value;
                let vq = &nodes[query.0].value;
                let [b, s, d] = vm.shape()[..] else {
                    unreachable!()
                };
                if let Some(gm) = acc!(*memory) {
                    let gm = gm.data_mut();
                    for i in 0..b {
                        let qi = &vq.data()[i * d..(i + 1) * d];
                        for t in 0..s {
                            let w = gd[i * s + t];
                            for (x, q) in
                                gm[(i * s + t) * d..(i * s + t + 1) * d].iter_mut().zip(qi)
                            {
                                *x += w * q;
                            }
                        }
                    }
                }
                if let Some(gq) = acc!(*query) {
                    let gq = gq.data_mut();
                    for i in 0..b {
                        for t in 0..s {
                            let w = gd[i * s + t];
                            let row = &vm.data()[(i * s + t) * d..(i * s + t + 1) * d];
                            for (x, m) in gq[i * d..(i + 1) * d].iter_mut().zip(row) {
                                *x += w * m;
                            }
                        }
                    }
                }
            }
            Op::AttnContext(weights, memory) => {
                let vw = &nodes[weights.0].value;
                let vm = &nodes[memory.0].value;
                let [b, s, d] = vm.shape()[..] else {
                    unreachable!()
                };
                if let Some(gw) = acc!(*weights) {
                    let gw = gw.data_mut();
                    for i in 0..b {
                        let gi = &gd[i * d..(i + 1) * d];
                        for t in 0..s {
                            let row = &vm.data()[(i * s + t) * d..(i * s + t + 1) * d];
                            gw[i * s + t] += row.iter().zip(gi).map(|(m, y)| m * y).sum::<f64>();
                        }
                    }
                }
                if let Some(gm) = acc!(*memory) {
                    let gm = gm.data_mut();
                    for i in 0..b {
                        let gi = &gd[i * d..(i + 1) * d];
                        for t in 0..s {
                            let w = vw.data()[i * s + t];
                            for (x, y) in
                                gm[(i * s + t) * d..(i * s + t + 1) * d].iter_mut().zip(gi)
                            {
                                *x += w * y;
                            }
                        }
                    }
                }
            }
            Op::Nll {
                logits,
                targets,
                pad,
                probs,
                count,
            } => {
                if let Some(gl) = acc!(*logits) {
                    let v = gl.dims2().unwrap().1;
                    let k = gd[0] / *count as f64;
                    let gl = gl.data_mut();
                    for (i, &t) in targets.iter().enumerate() {
                        if t == *pad {
                            continue;
                        }
                        for (x, p) in gl[i * v..(i + 1) * v]
                            .iter_mut()
                            .zip(&probs[i * v..(i + 1) * v])
                        {
                            *x += k * p;
                        }
                        gl[i * v + t] -= k;
                    }
                }
            }
        }
    }
}
