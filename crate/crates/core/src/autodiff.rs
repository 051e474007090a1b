//! Reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Tape`] records every primitive applied to its variables. Nodes are
//! appended in evaluation order, so parents always precede children and a
//! reverse sweep over the node list is a valid reverse topological order.
//!
//! ```
//! use gpnn::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let w = tape.param(Tensor::vector(vec![1.0, -2.0]));
//! let y = tape.add(w, w).unwrap();
//! let loss = tape.sum_all(y).unwrap();
//! tape.backward(loss).unwrap();
//! assert_eq!(tape.grad(w).unwrap().data(), &[2.0, 2.0]);
//! ```
//!
//! Tapes are single-owner and never shared: there is no global tape.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Dims, Error, Result};
use crate::tensor::Tensor;

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    idx: usize,
    tape: u64,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Sigmoid(usize),
    Tanh(usize),
    Relu(usize),
    Log { input: usize, floor: f64 },
    AddRow(usize, usize),
    MulRows(usize, usize),
    Concat { inputs: Vec<usize>, axis: usize },
    Softmax { input: usize, axis: usize },
    ReduceSum { input: usize, axis: usize },
    SumAll(usize),
    L1(usize, usize),
    Reshape(usize),
    GatherRows { input: usize, indices: Vec<usize> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Elementwise operations exposed through [`Tape::elementwise`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Elementwise {
    Add,
    Sub,
    Mul,
    Sigmoid,
    Tanh,
    Relu,
    Scale(f64),
}

#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
    grads: Option<Vec<Tensor>>,
    recording: bool,
    consumed: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

/// Splits `shape` around `axis` into (outer, len, inner) extents.
fn fibers(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    /// A tape that records operations for a later [`Tape::backward`].
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            grads: None,
            recording: true,
            consumed: false,
        }
    }

    /// A tape that only evaluates values. Backward is unavailable.
    pub fn inference() -> Self {
        Tape {
            recording: false,
            ..Tape::new()
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops all recorded nodes and gradients. Variables created before the
    /// call must not be used afterwards.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.grads = None;
        self.consumed = false;
        self.id = NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed);
    }

    /// Registers a differentiable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Registers a leaf that is treated as a constant input. Its gradient is
    /// still available after backward.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let op = if self.recording { op } else { Op::Leaf };
        self.nodes.push(Node { value, op });
        Var {
            idx: self.nodes.len() - 1,
            tape: self.id,
        }
    }

    fn check(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.idx >= self.nodes.len() {
            return Err(Error::NotOnTape);
        }
        Ok(v.idx)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let i = self
            .check(v)
            .expect("variable does not belong to this tape");
        &self.nodes[i].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    /// Gradient of the last backward's loss with respect to `v`.
    pub fn grad(&self, v: Var) -> Result<&Tensor> {
        let i = self.check(v)?;
        match &self.grads {
            Some(g) => Ok(&g[i]),
            None => Err(Error::NotRecording),
        }
    }

    fn binary_same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(usize, usize)> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let (sa, sb) = (self.nodes[ia].value.shape(), self.nodes[ib].value.shape());
        if sa != sb {
            return Err(Error::shape(op, sa, sb));
        }
        Ok((ia, ib))
    }

    fn zip_map(&self, ia: usize, ib: usize, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let a = &self.nodes[ia].value;
        let b = &self.nodes[ib].value;
        let data = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::from_parts(a.shape().to_vec(), data)
    }

    /// Matrix product of `a[m×k]` and `b[k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let (va, vb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        if va.rank() != 2 || vb.rank() != 2 || va.shape()[1] != vb.shape()[0] {
            return Err(Error::shape("matmul", va.shape(), vb.shape()));
        }
        let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
        let out = matmul_nn(va.data(), vb.data(), m, k, n);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul(ia, ib)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let va = &self.nodes[ia].value;
        if va.rank() != 2 {
            return Err(Error::AxisOutOfRange {
                op: "transpose",
                axis: 1,
                rank: va.rank(),
            });
        }
        let (r, c) = (va.shape()[0], va.shape()[1]);
        let out = transpose_data(va.data(), r, c);
        Ok(self.push(Tensor::from_parts(vec![c, r], out), Op::Transpose(ia)))
    }

    pub fn elementwise(&mut self, op: Elementwise, args: &[Var]) -> Result<Var> {
        let arity = match op {
            Elementwise::Add | Elementwise::Sub | Elementwise::Mul => 2,
            _ => 1,
        };
        if args.len() != arity {
            return Err(Error::Config(format!(
                "{op:?} takes {arity} operand(s), got {}",
                args.len()
            )));
        }
        match op {
            Elementwise::Add => self.add(args[0], args[1]),
            Elementwise::Sub => self.sub(args[0], args[1]),
            Elementwise::Mul => self.mul(args[0], args[1]),
            Elementwise::Sigmoid => self.sigmoid(args[0]),
            Elementwise::Tanh => self.tanh(args[0]),
            Elementwise::Relu => self.relu(args[0]),
            Elementwise::Scale(c) => self.scale(args[0], c),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = self.binary_same_shape("add", a, b)?;
        let out = self.zip_map(ia, ib, |x, y| x + y);
        Ok(self.push(out, Op::Add(ia, ib)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = self.binary_same_shape("sub", a, b)?;
        let out = self.zip_map(ia, ib, |x, y| x - y);
        Ok(self.push(out, Op::Sub(ia, ib)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = self.binary_same_shape("mul", a, b)?;
        let out = self.zip_map(ia, ib, |x, y| x * y);
        Ok(self.push(out, Op::Mul(ia, ib)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let ia = self.check(a)?;
        let out = self.nodes[ia].value.map(|x| x * c);
        Ok(self.push(out, Op::Scale(ia, c)))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let ia = self.check(a)?;
        let out = self.nodes[ia].value.map(|x| x + c);
        Ok(self.push(out, Op::AddScalar(ia)))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let out = self.nodes[ia].value.map(sigmoid);
        Ok(self.push(out, Op::Sigmoid(ia)))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let out = self.nodes[ia].value.map(f64::tanh);
        Ok(self.push(out, Op::Tanh(ia)))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let out = self.nodes[ia].value.map(|x| x.max(0.0));
        Ok(self.push(out, Op::Relu(ia)))
    }

    /// Natural log of `max(x, floor)`; the gradient is zero where clamped.
    pub fn log_clamped(&mut self, a: Var, floor: f64) -> Result<Var> {
        let ia = self.check(a)?;
        let out = self.nodes[ia].value.map(|x| x.max(floor).ln());
        Ok(self.push(out, Op::Log { input: ia, floor }))
    }

    /// Adds `b[d]` to every row of `a[n×d]`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let (va, vb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        if va.rank() != 2 || vb.rank() != 1 || va.shape()[1] != vb.shape()[0] {
            return Err(Error::shape("add_row", va.shape(), vb.shape()));
        }
        let d = vb.numel();
        let mut out = va.data().to_vec();
        for row in out.chunks_mut(d) {
            for (x, b) in row.iter_mut().zip(vb.data()) {
                *x += b;
            }
        }
        let shape = va.shape().to_vec();
        Ok(self.push(Tensor::from_parts(shape, out), Op::AddRow(ia, ib)))
    }

    /// Scales row `i` of `a[n×d]` by `w[i]`.
    pub fn mul_rows(&mut self, a: Var, w: Var) -> Result<Var> {
        let (ia, iw) = (self.check(a)?, self.check(w)?);
        let (va, vw) = (&self.nodes[ia].value, &self.nodes[iw].value);
        if va.rank() != 2 || vw.rank() != 1 || va.shape()[0] != vw.shape()[0] {
            return Err(Error::shape("mul_rows", va.shape(), vw.shape()));
        }
        let d = va.shape()[1];
        let mut out = va.data().to_vec();
        for (row, &s) in out.chunks_mut(d).zip(vw.data()) {
            for x in row {
                *x *= s;
            }
        }
        let shape = va.shape().to_vec();
        Ok(self.push(Tensor::from_parts(shape, out), Op::MulRows(ia, iw)))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let idx = inputs
            .iter()
            .map(|&v| self.check(v))
            .collect::<Result<Vec<_>>>()?;
        let first = match idx.first() {
            Some(&i) => self.nodes[i].value.shape().to_vec(),
            None => return Err(Error::Config("concat of zero tensors".into())),
        };
        if axis >= first.len() {
            return Err(Error::AxisOutOfRange {
                op: "concat",
                axis,
                rank: first.len(),
            });
        }
        let mut total = 0;
        for &i in &idx {
            let s = self.nodes[i].value.shape();
            let compatible = s.len() == first.len()
                && s.iter()
                    .zip(&first)
                    .enumerate()
                    .all(|(d, (x, y))| d == axis || x == y);
            if !compatible {
                return Err(Error::shape("concat", &first, s));
            }
            total += s[axis];
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &i in &idx {
                let v = &self.nodes[i].value;
                let block = v.shape()[axis] * inner;
                out.extend_from_slice(&v.data()[o * block..(o + 1) * block]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::Concat { inputs: idx, axis },
        ))
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let ia = self.check(a)?;
        let va = &self.nodes[ia].value;
        if axis >= va.rank() {
            return Err(Error::AxisOutOfRange {
                op: "softmax",
                axis,
                rank: va.rank(),
            });
        }
        let (outer, len, inner) = fibers(va.shape(), axis);
        let src = va.data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for j in 0..inner {
                let at = |k: usize| o * len * inner + k * inner + j;
                let max = (0..len)
                    .map(|k| src[at(k)])
                    .fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for k in 0..len {
                    let e = (src[at(k)] - max).exp();
                    out[at(k)] = e;
                    total += e;
                }
                for k in 0..len {
                    out[at(k)] /= total;
                }
            }
        }
        let shape = va.shape().to_vec();
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::Softmax { input: ia, axis },
        ))
    }

    /// Sums over `axis`, removing it from the shape.
    pub fn reduce_sum(&mut self, a: Var, axis: usize) -> Result<Var> {
        let ia = self.check(a)?;
        let va = &self.nodes[ia].value;
        if axis >= va.rank() {
            return Err(Error::AxisOutOfRange {
                op: "reduce_sum",
                axis,
                rank: va.rank(),
            });
        }
        let (outer, len, inner) = fibers(va.shape(), axis);
        let src = va.data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for k in 0..len {
                let base = o * len * inner + k * inner;
                for j in 0..inner {
                    out[o * inner + j] += src[base + j];
                }
            }
        }
        let mut shape = va.shape().to_vec();
        shape.remove(axis);
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::ReduceSum { input: ia, axis },
        ))
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let total = self.nodes[ia].value.sum();
        Ok(self.push(Tensor::scalar(total), Op::SumAll(ia)))
    }

    pub fn mean_all(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).numel() as f64;
        let s = self.sum_all(a)?;
        self.scale(s, 1.0 / n)
    }

    /// Mean absolute difference. The subgradient at `a == b` is zero.
    pub fn l1(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = self.binary_same_shape("l1", a, b)?;
        let va = &self.nodes[ia].value;
        let vb = &self.nodes[ib].value;
        let total: f64 = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(x, y)| (x - y).abs())
            .sum();
        let mean = total / va.numel() as f64;
        Ok(self.push(Tensor::scalar(mean), Op::L1(ia, ib)))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let ia = self.check(a)?;
        let out = self.nodes[ia].value.reshape(shape)?;
        Ok(self.push(out, Op::Reshape(ia)))
    }

    /// Selects rows (slices along the first axis) of `a` by index.
    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let ia = self.check(a)?;
        let va = &self.nodes[ia].value;
        if va.rank() == 0 {
            return Err(Error::AxisOutOfRange {
                op: "gather_rows",
                axis: 0,
                rank: 0,
            });
        }
        if indices.is_empty() {
            return Err(Error::Config("gather_rows with no indices".into()));
        }
        let rows = va.shape()[0];
        let width = va.numel() / rows;
        let mut out = Vec::with_capacity(indices.len() * width);
        for &r in indices {
            if r >= rows {
                return Err(Error::IndexOutOfRange {
                    op: "gather_rows",
                    index: r,
                    len: rows,
                });
            }
            out.extend_from_slice(&va.data()[r * width..(r + 1) * width]);
        }
        let mut shape = va.shape().to_vec();
        shape[0] = indices.len();
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::GatherRows {
                input: ia,
                indices: indices.to_vec(),
            },
        ))
    }

    /// Propagates d`loss` back to every recorded node.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let li = self.check(loss)?;
        if !self.recording {
            return Err(Error::NotRecording);
        }
        if self.consumed {
            return Err(Error::BackwardTwice);
        }
        let lv = &self.nodes[li].value;
        if !lv.is_scalar() {
            return Err(Error::NonScalarLoss(Dims(lv.shape().to_vec())));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[li] = Some(Tensor::ones(lv.shape()));

        for i in (0..=li).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }

        let filled = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, n)| g.unwrap_or_else(|| Tensor::zeros(n.value.shape())))
            .collect();
        self.grads = Some(filled);
        self.consumed = true;
        Ok(())
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let out = &node.value;
        let val = |j: usize| &self.nodes[j].value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
                let ga = matmul_nt(g.data(), vb.data(), m, n, k);
                let gb = matmul_tn(va.data(), g.data(), m, k, n);
                accumulate(grads, *a, Tensor::from_parts(vec![m, k], ga));
                accumulate(grads, *b, Tensor::from_parts(vec![k, n], gb));
            }
            Op::Transpose(a) => {
                let (r, c) = (g.shape()[0], g.shape()[1]);
                accumulate(
                    grads,
                    *a,
                    Tensor::from_parts(vec![c, r], transpose_data(g.data(), r, c)),
                );
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let ga = zip(g, val(*b), |x, y| x * y);
                let gb = zip(g, val(*a), |x, y| x * y);
                accumulate(grads, *a, ga);
                accumulate(grads, *b, gb);
            }
            Op::Scale(a, c) => accumulate(grads, *a, g.map(|x| x * c)),
            Op::AddScalar(a) => accumulate(grads, *a, g.clone()),
            Op::Sigmoid(a) => accumulate(grads, *a, zip(g, out, |x, y| x * y * (1.0 - y))),
            Op::Tanh(a) => accumulate(grads, *a, zip(g, out, |x, y| x * (1.0 - y * y))),
            Op::Relu(a) => accumulate(
                grads,
                *a,
                zip(g, val(*a), |x, y| if y > 0.0 { x } else { 0.0 }),
            ),
            Op::Log { input, floor } => {
                let f = *floor;
                let gi = zip(g, val(*input), |x, y| if y > f { x / y } else { 0.0 });
                accumulate(grads, *input, gi);
            }
            Op::AddRow(a, b) => {
                accumulate(grads, *a, g.clone());
                let d = val(*b).numel();
                let mut gb = vec![0.0; d];
                for row in g.data().chunks(d) {
                    for (s, x) in gb.iter_mut().zip(row) {
                        *s += x;
                    }
                }
                accumulate(grads, *b, Tensor::from_parts(vec![d], gb));
            }
            Op::MulRows(a, w) => {
                let (va, vw) = (val(*a), val(*w));
                let d = va.shape()[1];
                let mut ga = g.data().to_vec();
                let mut gw = vec![0.0; vw.numel()];
                for (r, (grow, arow)) in g.data().chunks(d).zip(va.data().chunks(d)).enumerate() {
                    let s = vw.data()[r];
                    for (x, &y) in ga[r * d..(r + 1) * d].iter_mut().zip(grow) {
                        *x = y * s;
                    }
                    gw[r] = grow.iter().zip(arow).map(|(x, y)| x * y).sum();
                }
                accumulate(grads, *a, Tensor::from_parts(va.shape().to_vec(), ga));
                accumulate(grads, *w, Tensor::from_parts(vec![vw.numel()], gw));
            }
            Op::Concat { inputs, axis } => {
                let shape = out.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[*axis + 1..].iter().product();
                let total = shape[*axis] * inner;
                let mut offset = 0;
                for &p in inputs {
                    let ps = val(p).shape();
                    let block = ps[*axis] * inner;
                    let mut gp = Vec::with_capacity(outer * block);
                    for o in 0..outer {
                        let start = o * total + offset;
                        gp.extend_from_slice(&g.data()[start..start + block]);
                    }
                    accumulate(grads, p, Tensor::from_parts(ps.to_vec(), gp));
                    offset += block;
                }
            }
            Op::Softmax { input, axis } => {
                let (outer, len, inner) = fibers(out.shape(), *axis);
                let y = out.data();
                let mut gi = vec![0.0; y.len()];
                for o in 0..outer {
                    for j in 0..inner {
                        let at = |k: usize| o * len * inner + k * inner + j;
                        let dot: f64 = (0..len).map(|k| g.data()[at(k)] * y[at(k)]).sum();
                        for k in 0..len {
                            gi[at(k)] = y[at(k)] * (g.data()[at(k)] - dot);
                        }
                    }
                }
                accumulate(grads, *input, Tensor::from_parts(out.shape().to_vec(), gi));
            }
            Op::ReduceSum { input, axis } => {
                let src = val(*input).shape();
                let (outer, len, inner) = fibers(src, *axis);
                let mut gi = vec![0.0; outer * len * inner];
                for o in 0..outer {
                    for k in 0..len {
                        let base = o * len * inner + k * inner;
                        gi[base..base + inner]
                            .copy_from_slice(&g.data()[o * inner..(o + 1) * inner]);
                    }
                }
                accumulate(grads, *input, Tensor::from_parts(src.to_vec(), gi));
            }
            Op::SumAll(a) => {
                accumulate(grads, *a, Tensor::full(val(*a).shape(), g.item()));
            }
            Op::L1(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                let c = g.item() / va.numel() as f64;
                let ga = zip(va, vb, |x, y| {
                    if x > y {
                        c
                    } else if x < y {
                        -c
                    } else {
                        0.0
                    }
                });
                let gb = ga.map(|x| -x);
                accumulate(grads, *a, ga);
                accumulate(grads, *b, gb);
            }
            Op::Reshape(a) => {
                let shape = val(*a).shape().to_vec();
                accumulate(grads, *a, Tensor::from_parts(shape, g.data().to_vec()));
            }
            Op::GatherRows { input, indices } => {
                let src = val(*input);
                let width = src.numel() / src.shape()[0];
                let mut gi = vec![0.0; src.numel()];
                for (k, &r) in indices.iter().enumerate() {
                    for (x, y) in gi[r * width..(r + 1) * width]
                        .iter_mut()
                        .zip(&g.data()[k * width..(k + 1) * width])
                    {
                        *x += y;
                    }
                }
                accumulate(grads, *input, Tensor::from_parts(src.shape().to_vec(), gi));
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], idx: usize, g: Tensor) {
    match &mut grads[idx] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::from_parts(a.shape().to_vec(), data)
}

fn transpose_data(src: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = src[i * c + j];
        }
    }
    out
}

/// `a[m×k] · b[k×n]`
fn matmul_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let x = a[i * k + p];
            for (o, y) in orow.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += x * y;
            }
        }
    }
    out
}

/// `g[m×n] · b[k×n]ᵀ`
fn matmul_nt(g: &[f64], b: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * k];
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            out[i * k + p] = grow
                .iter()
                .zip(&b[p * n..(p + 1) * n])
                .map(|(x, y)| x * y)
                .sum();
        }
    }
    out
}

/// `a[m×k]ᵀ · g[m×n]`
fn matmul_tn(a: &[f64], g: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * n];
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let x = a[i * k + p];
            for (o, y) in out[p * n..(p + 1) * n].iter_mut().zip(grow) {
                *o += x * y;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn matmul_identity_and_hand_product() {
        let mut t = Tape::new();
        let i = t.constant(Tensor::eye(2));
        let m = t.constant(mat(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let p = t.matmul(i, m).unwrap();
        assert_eq!(t.value(p).data(), &[1.0, 2.0, 3.0, 4.0]);

        let a = t.constant(mat(&[&[1.0, 2.0]]));
        let b = t.constant(mat(&[&[3.0], &[4.0]]));
        let c = t.matmul(a, b).unwrap();
        assert_eq!(t.value(c).data(), &[11.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::zeros(&[2, 3]));
        let b = t.constant(Tensor::zeros(&[2, 3]));
        let err = t.matmul(a, b).unwrap_err();
        assert_eq!(
            err.to_string(),
            "dimension mismatch in matmul: [2x3] vs [2x3]"
        );
    }

    #[test]
    fn elementwise_shape_mismatch() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::zeros(&[2]));
        let b = t.constant(Tensor::zeros(&[3]));
        assert!(matches!(t.add(a, b), Err(Error::ShapeMismatch { .. })));
        assert!(t.elementwise(Elementwise::Mul, &[a]).is_err());
    }

    #[test]
    fn activations_at_zero() {
        let mut t = Tape::new();
        let z = t.constant(Tensor::scalar(0.0));
        let s = t.sigmoid(z).unwrap();
        let h = t.tanh(z).unwrap();
        assert_eq!(t.value(s).item(), 0.5);
        assert_eq!(t.value(h).item(), 0.0);
    }

    #[test]
    fn softmax_concat_l1_basics() {
        let mut t = Tape::new();
        let z = t.constant(Tensor::zeros(&[3]));
        let s = t.softmax(z, 0).unwrap();
        for &p in t.value(s).data() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        let a = t.constant(Tensor::vector(vec![1.0, 2.0]));
        let b = t.constant(Tensor::vector(vec![3.0]));
        let c = t.concat(&[a, b], 0).unwrap();
        assert_eq!(t.value(c).data(), &[1.0, 2.0, 3.0]);
        let l = t.l1(a, a).unwrap();
        assert_eq!(t.value(l).item(), 0.0);
        assert!(matches!(t.softmax(z, 1), Err(Error::AxisOutOfRange { .. })));
    }

    #[test]
    fn sum_gives_ones_gradient() {
        let mut t = Tape::new();
        let w = t.param(Tensor::new(vec![2, 3], (0..6).map(f64::from).collect()).unwrap());
        let l = t.sum_all(w).unwrap();
        t.backward(l).unwrap();
        assert_eq!(t.grad(w).unwrap(), &Tensor::ones(&[2, 3]));
    }

    #[test]
    fn reuse_accumulates() {
        let mut t = Tape::new();
        let w = t.param(Tensor::scalar(3.0));
        let y = t.add(w, w).unwrap();
        t.backward(y).unwrap();
        assert_eq!(t.grad(w).unwrap().item(), 2.0);
    }

    #[test]
    fn backward_errors() {
        let mut t = Tape::new();
        let w = t.param(Tensor::zeros(&[2]));
        assert!(matches!(t.backward(w), Err(Error::NonScalarLoss(_))));
        let l = t.sum_all(w).unwrap();
        t.backward(l).unwrap();
        assert!(matches!(t.backward(l), Err(Error::BackwardTwice)));
        t.clear();
        assert!(matches!(t.backward(l), Err(Error::NotOnTape)));

        let mut other = Tape::new();
        let foreign = other.param(Tensor::scalar(1.0));
        let mut t2 = Tape::new();
        assert!(matches!(t2.backward(foreign), Err(Error::NotOnTape)));

        let mut inf = Tape::inference();
        let x = inf.param(Tensor::scalar(1.0));
        assert!(matches!(inf.backward(x), Err(Error::NotRecording)));
    }

    #[test]
    fn gradient_buffers_match_shapes() {
        let mut t = Tape::new();
        let a = t.param(Tensor::ones(&[2, 3]));
        let b = t.param(Tensor::ones(&[3, 4]));
        let unused = t.param(Tensor::ones(&[5]));
        let c = t.matmul(a, b).unwrap();
        let l = t.sum_all(c).unwrap();
        t.backward(l).unwrap();
        for v in [a, b, unused, c, l] {
            assert_eq!(t.grad(v).unwrap().shape(), t.value(v).shape());
        }
        assert_eq!(t.grad(unused).unwrap().sum(), 0.0);
    }
}
