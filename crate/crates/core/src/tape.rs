//! Reverse-mode gradient tape over [`Array`] values.
//!
//! Each op records its inputs and forward value; `backward` replays the
//! record in reverse creation order, visiting each node once. Forward
//! values are computed by the same kernels as untaped execution.

use crate::array::Array;
use crate::kernels;
use crate::param::ParamStore;
use crate::{Error, Result};

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct NodeId(pub(crate) usize);

enum Op {
    /// Input with no gradient consumer (constants, data).
    Leaf,
    /// Named trainable leaf; gradients are collected for it.
    Param(String),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Scale(NodeId, f64),
    Exp(NodeId),
    Relu(NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Abs(NodeId),
    SoftmaxRows(NodeId),
    Matmul(NodeId, NodeId),
    MatmulNt(NodeId, NodeId),
    MatmulTn(NodeId, NodeId),
    Conv1d { x: NodeId, w: NodeId, b: NodeId, stride: usize, pad: usize },
    Conv2d { x: NodeId, w: NodeId, b: NodeId },
    PoolLastAxis { x: NodeId, bins: usize },
    Correlate1d { signal: NodeId, kernel: NodeId },
    InterpRows { x: NodeId, target: usize },
    SliceRows { x: NodeId, start: usize, end: usize },
    ConcatRows(Vec<NodeId>),
    StackCols(Vec<NodeId>),
    Sum(NodeId),
    Reshape(NodeId),
}

struct Node {
    value: Array,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
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

    fn push(&mut self, value: Array, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Array) -> NodeId {
        self.push(value, Op::Leaf)
    }

    /// Record a parameter from the store as a differentiable leaf.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<NodeId> {
        let p = store
            .get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter {name}")))?;
        Ok(self.push(p.value.clone(), Op::Param(name.to_string())))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).zip(self.value(b), |x, y| x + y)?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).zip(self.value(b), |x, y| x - y)?;
        Ok(self.push(v, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).zip(self.value(b), |x, y| x * y)?;
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).zip(self.value(b), |x, y| x / y)?;
        Ok(self.push(v, Op::Div(a, b)))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.value(a).map(|x| x * c);
        self.push(v, Op::Scale(a, c))
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::exp);
        self.push(v, Op::Exp(a))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(kernels::sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn abs(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::abs);
        self.push(v, Op::Abs(a))
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let v = kernels::softmax_rows(self.value(a))?;
        Ok(self.push(v, Op::SoftmaxRows(a)))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = kernels::matmul(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::Matmul(a, b)))
    }

    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = kernels::matmul_nt(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::MatmulNt(a, b)))
    }

    pub fn matmul_tn(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = kernels::matmul_tn(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::MatmulTn(a, b)))
    }

    pub fn conv1d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: NodeId,
        stride: usize,
        pad: usize,
    ) -> Result<NodeId> {
        let v = kernels::conv1d(self.value(x), self.value(w), self.value(b), stride, pad)?;
        Ok(self.push(v, Op::Conv1d { x, w, b, stride, pad }))
    }

    pub fn conv2d_same3(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let v = kernels::conv2d_same3(self.value(x), self.value(w), self.value(b))?;
        Ok(self.push(v, Op::Conv2d { x, w, b }))
    }

    pub fn pool_last_axis(&mut self, x: NodeId, bins: usize) -> Result<NodeId> {
        let v = kernels::pool_last_axis(self.value(x), bins)?;
        Ok(self.push(v, Op::PoolLastAxis { x, bins }))
    }

    pub fn correlate1d(&mut self, signal: NodeId, kernel: NodeId) -> Result<NodeId> {
        let v = kernels::correlate1d(self.value(signal), self.value(kernel))?;
        Ok(self.push(v, Op::Correlate1d { signal, kernel }))
    }

    pub fn interp_rows(&mut self, x: NodeId, target: usize) -> Result<NodeId> {
        let v = kernels::interp_linear(self.value(x), target)?;
        Ok(self.push(v, Op::InterpRows { x, target }))
    }

    pub fn slice_rows(&mut self, x: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let src = self.value(x);
        let rows = src.rows();
        if start > end || end > rows {
            return Err(Error::InvalidArgument(format!(
                "slice_rows {start}..{end} of {rows} rows"
            )));
        }
        let rs = src.row_size();
        let mut shape = src.shape().to_vec();
        shape[0] = end - start;
        let data = src.data()[start * rs..end * rs].to_vec();
        let v = Array::from_vec(&shape, data)?;
        Ok(self.push(v, Op::SliceRows { x, start, end }))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::InvalidArgument("concat_rows: no inputs".into()));
        }
        let rs = self.value(parts[0]).row_size();
        let trailing = self.value(parts[0]).shape()[1..].to_vec();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let a = self.value(p);
            if a.shape()[1..] != trailing[..] {
                return Err(Error::Shape(format!(
                    "concat_rows trailing dims {:?} vs {:?}",
                    &a.shape()[1..],
                    trailing
                )));
            }
            rows += a.rows();
            data.extend_from_slice(a.data());
        }
        let mut shape = vec![rows];
        shape.extend_from_slice(&trailing);
        debug_assert_eq!(rows * rs, data.len());
        let v = Array::from_vec(&shape, data)?;
        Ok(self.push(v, Op::ConcatRows(parts.to_vec())))
    }

    /// Stack S length-F vectors into an `[F,S]` matrix, column j from input j.
    pub fn stack_cols(&mut self, cols: &[NodeId]) -> Result<NodeId> {
        if cols.is_empty() {
            return Err(Error::InvalidArgument("stack_cols: no inputs".into()));
        }
        let f = self.value(cols[0]).len();
        for &c in cols {
            let a = self.value(c);
            if a.shape().len() != 1 || a.len() != f {
                return Err(Error::Shape(format!(
                    "stack_cols expects length-{f} vectors, got {:?}",
                    a.shape()
                )));
            }
        }
        let s = cols.len();
        let mut out = Array::zeros(&[f, s]);
        for (j, &c) in cols.iter().enumerate() {
            let col = self.value(c).data().to_vec();
            for (i, v) in col.into_iter().enumerate() {
                out.set2(i, j, v);
            }
        }
        Ok(self.push(out, Op::StackCols(cols.to_vec())))
    }

    /// Sum of all entries, as a one-element array.
    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let v = Array::scalar(self.value(x).sum());
        self.push(v, Op::Sum(x))
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let v = self.value(x).reshaped(shape)?;
        Ok(self.push(v, Op::Reshape(x)))
    }

    /// Reverse sweep from a scalar loss; returns per-node gradients.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::InvalidArgument(format!(
                "backward: loss must be scalar, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Array>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Array::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].clone() else { continue };
            self.propagate(i, &g, &mut grads)?;
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, i: usize, g: &Array, grads: &mut [Option<Array>]) -> Result<()> {
        let accum = |grads: &mut [Option<Array>], id: NodeId, contrib: Array| {
            match &mut grads[id.0] {
                Some(existing) => existing.add_assign(&contrib),
                slot => *slot = Some(contrib),
            }
        };
        match &self.nodes[i].op {
            Op::Leaf | Op::Param(_) => {}
            Op::Add(a, b) => {
                accum(grads, *a, g.clone());
                accum(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                accum(grads, *a, g.clone());
                accum(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                accum(grads, *a, g.zip(self.value(*b), |gv, bv| gv * bv)?);
                accum(grads, *b, g.zip(self.value(*a), |gv, av| gv * av)?);
            }
            Op::Div(a, b) => {
                let bv = self.value(*b);
                accum(grads, *a, g.zip(bv, |gv, b| gv / b)?);
                let av = self.value(*a);
                let mut db = g.zip(av, |gv, a| gv * a)?;
                let db2 = db.zip(bv, |x, b| -x / (b * b))?;
                db = db2;
                accum(grads, *b, db);
            }
            Op::Scale(a, c) => accum(grads, *a, g.map(|x| x * c)),
            Op::Exp(a) => accum(grads, *a, g.zip(&self.nodes[i].value, |gv, y| gv * y)?),
            Op::Relu(a) => {
                accum(grads, *a, g.zip(self.value(*a), |gv, x| if x > 0.0 { gv } else { 0.0 })?)
            }
            Op::Sigmoid(a) => {
                accum(grads, *a, g.zip(&self.nodes[i].value, |gv, y| gv * y * (1.0 - y))?)
            }
            Op::Tanh(a) => {
                accum(grads, *a, g.zip(&self.nodes[i].value, |gv, y| gv * (1.0 - y * y))?)
            }
            Op::Abs(a) => accum(
                grads,
                *a,
                g.zip(self.value(*a), |gv, x| {
                    if x > 0.0 {
                        gv
                    } else if x < 0.0 {
                        -gv
                    } else {
                        0.0
                    }
                })?,
            ),
            Op::SoftmaxRows(a) => {
                let y = &self.nodes[i].value;
                let (r, c) = (y.rows(), y.row_size());
                let mut dx = Array::zeros(&[r, c]);
                for row in 0..r {
                    let dot: f64 = (0..c).map(|j| g.at2(row, j) * y.at2(row, j)).sum();
                    for j in 0..c {
                        dx.set2(row, j, y.at2(row, j) * (g.at2(row, j) - dot));
                    }
                }
                accum(grads, *a, dx);
            }
            Op::Matmul(a, b) => {
                accum(grads, *a, kernels::matmul_nt(g, self.value(*b))?);
                accum(grads, *b, kernels::matmul_tn(self.value(*a), g)?);
            }
            Op::MatmulNt(a, b) => {
                accum(grads, *a, kernels::matmul(g, self.value(*b))?);
                accum(grads, *b, kernels::matmul_tn(g, self.value(*a))?);
            }
            Op::MatmulTn(a, b) => {
                accum(grads, *a, kernels::matmul_nt(self.value(*b), g)?);
                accum(grads, *b, kernels::matmul(self.value(*a), g)?);
            }
            Op::Conv1d { x, w, b, stride, pad } => {
                let (dx, dw, db) =
                    conv1d_backward(self.value(*x), self.value(*w), g, *stride, *pad);
                accum(grads, *x, dx);
                accum(grads, *w, dw);
                accum(grads, *b, db);
            }
            Op::Conv2d { x, w, b } => {
                let (dx, dw, db) = conv2d_backward(self.value(*x), self.value(*w), g);
                accum(grads, *x, dx);
                accum(grads, *w, dw);
                accum(grads, *b, db);
            }
            Op::PoolLastAxis { x, bins } => {
                let xv = self.value(*x);
                let (c, h, w) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
                let spans = kernels::adaptive_bins(w, *bins);
                let mut dx = Array::zeros(&[c, h, w]);
                for ch in 0..c {
                    for i in 0..h {
                        for (m, &(s, e)) in spans.iter().enumerate() {
                            let gv = g.at2(i, ch * bins + m) / (e - s) as f64;
                            for j in s..e {
                                dx.data_mut()[ch * h * w + i * w + j] += gv;
                            }
                        }
                    }
                }
                accum(grads, *x, dx);
            }
            Op::Correlate1d { signal, kernel } => {
                let (dx, dk) = correlate1d_backward(self.value(*signal), self.value(*kernel), g);
                accum(grads, *signal, dx);
                accum(grads, *kernel, dk);
            }
            Op::InterpRows { x, target } => {
                let xv = self.value(*x);
                let (k, d) = (xv.rows(), xv.row_size());
                let mut dx = Array::zeros(xv.shape());
                for (i, (lo, hi, wgt)) in
                    kernels::interp_positions(k, *target).into_iter().enumerate()
                {
                    for c in 0..d {
                        let gv = g.at2(i, c);
                        dx.data_mut()[lo * d + c] += (1.0 - wgt) * gv;
                        if hi != lo {
                            dx.data_mut()[hi * d + c] += wgt * gv;
                        }
                    }
                }
                accum(grads, *x, dx);
            }
            Op::SliceRows { x, start, end } => {
                let xv = self.value(*x);
                let rs = xv.row_size();
                let mut dx = Array::zeros(xv.shape());
                dx.data_mut()[start * rs..end * rs].copy_from_slice(g.data());
                accum(grads, *x, dx);
            }
            Op::ConcatRows(parts) => {
                let rs = self.value(parts[0]).row_size();
                let mut offset = 0;
                for &p in parts {
                    let rows = self.value(p).rows();
                    let part = Array::from_vec(
                        self.value(p).shape(),
                        g.data()[offset..offset + rows * rs].to_vec(),
                    )?;
                    accum(grads, p, part);
                    offset += rows * rs;
                }
            }
            Op::StackCols(cols) => {
                let s = cols.len();
                for (j, &c) in cols.iter().enumerate() {
                    let f = self.value(c).len();
                    let dcol: Vec<f64> = (0..f).map(|i| g.data()[i * s + j]).collect();
                    accum(grads, c, Array::from_vec(&[f], dcol)?);
                }
            }
            Op::Sum(x) => {
                let gv = g.value();
                accum(grads, *x, Array::filled(self.value(*x).shape(), gv));
            }
            Op::Reshape(x) => {
                accum(grads, *x, g.reshaped(self.value(*x).shape())?);
            }
        }
        Ok(())
    }
}

/// Gradients from one backward sweep, indexed by node.
pub struct Gradients {
    grads: Vec<Option<Array>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Array> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    /// Accumulate gradients of all `Param` nodes on `tape` into the store.
    pub fn apply_to(&self, tape: &Tape, store: &mut ParamStore) -> Result<()> {
        for (i, node) in tape.nodes.iter().enumerate() {
            if let Op::Param(name) = &node.op {
                if let Some(g) = self.grads[i].as_ref() {
                    store.accumulate_grad(name, g)?;
                }
            }
        }
        Ok(())
    }
}

fn conv1d_backward(
    x: &Array,
    w: &Array,
    g: &Array,
    stride: usize,
    pad: usize,
) -> (Array, Array, Array) {
    let (f, cin) = (x.rows(), x.row_size());
    let (kw, cout) = (w.shape()[0], w.shape()[2]);
    let fo = g.rows();
    let mut dx = Array::zeros(x.shape());
    let mut dw = Array::zeros(w.shape());
    let mut db = Array::zeros(&[cout]);
    for t in 0..fo {
        for co in 0..cout {
            let gv = g.at2(t, co);
            if gv == 0.0 {
                continue;
            }
            db.data_mut()[co] += gv;
            for j in 0..kw {
                let src = (t * stride + j) as isize - pad as isize;
                if src < 0 || src >= f as isize {
                    continue;
                }
                let src = src as usize;
                for ci in 0..cin {
                    dx.data_mut()[src * cin + ci] += gv * w.data()[(j * cin + ci) * cout + co];
                    dw.data_mut()[(j * cin + ci) * cout + co] += gv * x.at2(src, ci);
                }
            }
        }
    }
    (dx, dw, db)
}

fn conv2d_backward(x: &Array, w: &Array, g: &Array) -> (Array, Array, Array) {
    let (h, wd) = (x.rows(), x.row_size());
    let cout = w.shape()[0];
    let plane = h * wd;
    let mut dx = Array::zeros(x.shape());
    let mut dw = Array::zeros(w.shape());
    let mut db = Array::zeros(&[cout]);
    for c in 0..cout {
        for i in 0..h as isize {
            for j in 0..wd as isize {
                let gv = g.data()[c * plane + (i as usize) * wd + j as usize];
                if gv == 0.0 {
                    continue;
                }
                db.data_mut()[c] += gv;
                for di in 0..3isize {
                    for dj in 0..3isize {
                        let si = i + di - 1;
                        let sj = j + dj - 1;
                        if si < 0 || si >= h as isize || sj < 0 || sj >= wd as isize {
                            continue;
                        }
                        let widx = c * 9 + (di * 3 + dj) as usize;
                        dx.data_mut()[(si as usize) * wd + sj as usize] += gv * w.data()[widx];
                        dw.data_mut()[widx] += gv * x.at2(si as usize, sj as usize);
                    }
                }
            }
        }
    }
    (dx, dw, db)
}

fn correlate1d_backward(signal: &Array, kernel: &Array, g: &Array) -> (Array, Array) {
    let (f, d) = (signal.rows(), signal.row_size());
    let s = kernel.rows();
    let off = (s / 2) as isize;
    let mut dx = Array::zeros(signal.shape());
    let mut dk = Array::zeros(kernel.shape());
    for t in 0..f as isize {
        let gv = g.data()[t as usize];
        if gv == 0.0 {
            continue;
        }
        for j in 0..s as isize {
            let src = t + j - off;
            if src < 0 || src >= f as isize {
                continue;
            }
            for c in 0..d {
                dx.data_mut()[(src as usize) * d + c] += gv * kernel.at2(j as usize, c);
                dk.data_mut()[(j as usize) * d + c] += gv * signal.at2(src as usize, c);
            }
        }
    }
    (dx, dk)
}
