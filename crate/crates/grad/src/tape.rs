//! Define-by-run tape. A fresh [`Tape`] is built for every forward pass;
//! parameters are read in place from a borrowed [`ParamStore`] and their
//! gradients land in a [`GradBuffer`] on [`Tape::backward`].

use crate::error::GradError;
use crate::params::{GradBuffer, ParamId, ParamStore};
use crate::tensor::{matmul_raw, Tensor};

/// Handle to a node on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Axis for softmax and concatenation on rank-2 values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

#[derive(Debug, Clone)]
enum Op {
    Param(ParamId),
    Const,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Tanh(usize),
    Sigmoid(usize),
    Exp(usize),
    Log(usize),
    LogClamped(usize, f64),
    Softmax(usize, Axis),
    LogSoftmax(usize, Axis),
    Concat(Vec<usize>, Axis),
    MeanRows(usize),
    MaxRows(usize, Vec<usize>),
    Embedding(usize, Vec<usize>),
    SliceRows(usize, usize),
    Reshape(usize),
    Sum(usize),
    Pick(usize, usize),
    Normalize(usize),
    Js(usize, usize, f64),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Param(_) => "param",
            Op::Const => "const",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Tanh(_) => "tanh",
            Op::Sigmoid(_) => "sigmoid",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::LogClamped(..) => "log_clamped",
            Op::Softmax(..) => "softmax",
            Op::LogSoftmax(..) => "log_softmax",
            Op::Concat(..) => "concat",
            Op::MeanRows(_) => "mean_pool",
            Op::MaxRows(..) => "max_pool",
            Op::Embedding(..) => "embedding",
            Op::SliceRows(..) => "slice_rows",
            Op::Reshape(_) => "reshape",
            Op::Sum(_) => "sum",
            Op::Pick(..) => "pick",
            Op::Normalize(_) => "normalize",
            Op::Js(..) => "js_divergence",
        }
    }
}

struct Node {
    // `None` for parameters: their values live in the store.
    value: Option<Tensor>,
    op: Op,
    // whether any parameter leaf feeds into this node
    needs_grad: bool,
}

pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

/// How two operands of an elementwise op line up.
#[derive(Clone, Copy)]
enum Broadcast {
    Same,
    Row,
    Scalar,
}

fn broadcast_kind(op: &'static str, a: &Tensor, b: &Tensor) -> Result<Broadcast, GradError> {
    if a.shape() == b.shape() {
        return Ok(Broadcast::Same);
    }
    if b.len() == 1 {
        return Ok(Broadcast::Scalar);
    }
    let (_, ac) = a.dims2();
    let (br, bc) = b.dims2();
    if br == 1 && bc == ac && a.shape().len() == 2 {
        return Ok(Broadcast::Row);
    }
    Err(GradError::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    })
}

fn zip_broadcast(a: &Tensor, b: &Tensor, kind: Broadcast, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let bd = b.data();
    let data: Vec<f64> = match kind {
        Broadcast::Same => a.data().iter().zip(bd).map(|(&x, &y)| f(x, y)).collect(),
        Broadcast::Scalar => a.data().iter().map(|&x| f(x, bd[0])).collect(),
        Broadcast::Row => {
            let c = bd.len();
            a.data()
                .iter()
                .enumerate()
                .map(|(i, &x)| f(x, bd[i % c]))
                .collect()
        }
    };
    Tensor::new(a.shape().to_vec(), data).expect("shape preserved")
}

/// Reduce a gradient shaped like the broadcast result back to `b`'s shape.
fn reduce_broadcast(grad: &[f64], b: &Tensor, kind: Broadcast) -> Tensor {
    match kind {
        Broadcast::Same => Tensor::new(b.shape().to_vec(), grad.to_vec()).expect("same shape"),
        Broadcast::Scalar => {
            let mut t = Tensor::zeros(b.shape());
            t.data_mut()[0] = grad.iter().sum();
            t
        }
        Broadcast::Row => {
            let c = b.len();
            let mut t = Tensor::zeros(b.shape());
            for (i, g) in grad.iter().enumerate() {
                t.data_mut()[i % c] += g;
            }
            t
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Row-wise (axis = Cols) or column-wise (axis = Rows) lanes of a rank-2 value.
fn lanes(t: &Tensor, axis: Axis) -> (usize, usize, usize, usize) {
    // returns (num_lanes, lane_len, lane_stride, elem_stride)
    let (r, c) = t.dims2();
    match axis {
        Axis::Cols => (r, c, c, 1),
        Axis::Rows => (c, r, 1, c),
    }
}

fn softmax_lanes(t: &Tensor, axis: Axis, log: bool) -> Tensor {
    let (n, len, lane_stride, elem_stride) = lanes(t, axis);
    let mut out = vec![0.0; t.len()];
    let d = t.data();
    for l in 0..n {
        let base = l * lane_stride;
        let idx = |k: usize| base + k * elem_stride;
        let max = (0..len)
            .map(|k| d[idx(k)])
            .fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = (0..len).map(|k| (d[idx(k)] - max).exp()).sum();
        let lz = z.ln();
        for k in 0..len {
            out[idx(k)] = if log {
                d[idx(k)] - max - lz
            } else {
                (d[idx(k)] - max).exp() / z
            };
        }
    }
    Tensor::new(t.shape().to_vec(), out).expect("shape preserved")
}

/// Jensen-Shannon divergence in nats with `0 ln 0 = 0`.
pub fn js_value(p: &[f64], q: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        let m = 0.5 * (a + b);
        if a > 0.0 {
            acc += 0.5 * a * (a / m).ln();
        }
        if b > 0.0 {
            acc += 0.5 * b * (b / m).ln();
        }
    }
    acc.max(0.0)
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::with_capacity(256),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.val(v.0)
    }

    fn val(&self, i: usize) -> &Tensor {
        match &self.nodes[i].value {
            Some(t) => t,
            None => match self.nodes[i].op {
                Op::Param(id) => self.params.get(id),
                _ => unreachable!("only params store values out of line"),
            },
        }
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        debug_assert!(
            value.all_finite() || !self.inputs_finite(&op),
            "{} produced non-finite output from finite inputs",
            op.name()
        );
        let needs_grad = self.any_input(&op, |i| self.nodes[i].needs_grad);
        self.nodes.push(Node {
            value: Some(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn inputs_finite(&self, op: &Op) -> bool {
        // log of a non-positive value is the caller's problem, not ours
        if matches!(op, Op::Log(_)) {
            return false;
        }
        !self.any_input(op, |i| !self.val(i).all_finite())
    }

    fn any_input(&self, op: &Op, f: impl Fn(usize) -> bool) -> bool {
        let check = |i: &usize| f(*i);
        match op {
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Js(a, b, _) => {
                check(a) || check(b)
            }
            Op::Concat(xs, _) => xs.iter().any(check),
            Op::Log(a)
            | Op::Scale(a, _)
            | Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::Exp(a)
            | Op::LogClamped(a, _)
            | Op::Softmax(a, _)
            | Op::LogSoftmax(a, _)
            | Op::MeanRows(a)
            | Op::MaxRows(a, _)
            | Op::Embedding(a, _)
            | Op::SliceRows(a, _)
            | Op::Reshape(a)
            | Op::Sum(a)
            | Op::Pick(a, _)
            | Op::Normalize(a) => check(a),
            Op::Param(_) | Op::Const => false,
        }
    }

    /// Leaf reading a parameter from the store.
    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op: Op::Const,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Stop-gradient copy of `v`.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.val(v.0).clone();
        self.constant(t)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        let (ta, tb) = (self.val(a.0), self.val(b.0));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.cols() != tb.rows() {
            return Err(GradError::ShapeMismatch {
                op: "matmul",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let (m, k) = ta.dims2();
        let n = tb.cols();
        let out = matmul_raw(ta.data(), tb.data(), m, k, n);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a.0, b.0)))
    }

    fn elementwise(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, GradError> {
        let (ta, tb) = (self.val(a.0), self.val(b.0));
        let kind = broadcast_kind(name, ta, tb)?;
        let out = zip_broadcast(ta, tb, kind, f);
        Ok(self.push(out, op))
    }

    /// `a + b`; `b` may be a row broadcast over `a`'s rows, or a scalar.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        self.elementwise("add", a, b, |x, y| x + y, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        self.elementwise("sub", a, b, |x, y| x - y, Op::Sub(a.0, b.0))
    }

    /// Elementwise product with the same broadcasting as [`Tape::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        self.elementwise("mul", a, b, |x, y| x * y, Op::Mul(a.0, b.0))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.val(a.0).map(|x| x * c);
        self.push(out, Op::Scale(a.0, c))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.val(a.0).map(f64::tanh);
        self.push(out, Op::Tanh(a.0))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.val(a.0).map(sigmoid);
        self.push(out, Op::Sigmoid(a.0))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.val(a.0).map(f64::exp);
        self.push(out, Op::Exp(a.0))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let out = self.val(a.0).map(f64::ln);
        self.push(out, Op::Log(a.0))
    }

    /// `ln(max(x, floor))`; no gradient flows through clamped entries.
    pub fn log_clamped(&mut self, a: Var, floor: f64) -> Var {
        let out = self.val(a.0).map(|x| x.max(floor).ln());
        self.push(out, Op::LogClamped(a.0, floor))
    }

    pub fn softmax(&mut self, a: Var, axis: Axis) -> Var {
        let out = softmax_lanes(self.val(a.0), axis, false);
        self.push(out, Op::Softmax(a.0, axis))
    }

    pub fn log_softmax(&mut self, a: Var, axis: Axis) -> Var {
        let out = softmax_lanes(self.val(a.0), axis, true);
        self.push(out, Op::LogSoftmax(a.0, axis))
    }

    pub fn concat(&mut self, parts: &[Var], axis: Axis) -> Result<Var, GradError> {
        let first = parts.first().ok_or_else(|| GradError::InvalidArgument {
            op: "concat",
            reason: "no inputs".into(),
        })?;
        let (r0, c0) = self.val(first.0).dims2();
        for p in &parts[1..] {
            let (r, c) = self.val(p.0).dims2();
            let ok = match axis {
                Axis::Rows => c == c0,
                Axis::Cols => r == r0,
            };
            if !ok {
                return Err(GradError::ShapeMismatch {
                    op: "concat",
                    lhs: vec![r0, c0],
                    rhs: vec![r, c],
                });
            }
        }
        let out = match axis {
            Axis::Rows => {
                let mut data = Vec::new();
                let mut rows = 0;
                for p in parts {
                    let t = self.val(p.0);
                    rows += t.rows();
                    data.extend_from_slice(t.data());
                }
                Tensor::new(vec![rows, c0], data)?
            }
            Axis::Cols => {
                let cols: usize = parts.iter().map(|p| self.val(p.0).cols()).sum();
                let mut data = Vec::with_capacity(r0 * cols);
                for r in 0..r0 {
                    for p in parts {
                        data.extend_from_slice(self.val(p.0).row_slice(r));
                    }
                }
                Tensor::new(vec![r0, cols], data)?
            }
        };
        Ok(self.push(out, Op::Concat(parts.iter().map(|p| p.0).collect(), axis)))
    }

    /// Mean over rows: `m x n -> 1 x n`.
    pub fn mean_pool(&mut self, a: Var) -> Result<Var, GradError> {
        let t = self.val(a.0);
        let (r, c) = t.dims2();
        if r == 0 {
            return Err(GradError::InvalidArgument {
                op: "mean_pool",
                reason: "zero rows".into(),
            });
        }
        let mut out = vec![0.0; c];
        for i in 0..r {
            for (o, v) in out.iter_mut().zip(t.row_slice(i)) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|v| *v /= r as f64);
        Ok(self.push(Tensor::row(out), Op::MeanRows(a.0)))
    }

    /// Max over rows: `m x n -> 1 x n`. Ties go to the first row.
    pub fn max_pool(&mut self, a: Var) -> Result<Var, GradError> {
        let t = self.val(a.0);
        let (r, c) = t.dims2();
        if r == 0 {
            return Err(GradError::InvalidArgument {
                op: "max_pool",
                reason: "zero rows".into(),
            });
        }
        let mut out = t.row_slice(0).to_vec();
        let mut arg = vec![0usize; c];
        for i in 1..r {
            for (j, &v) in t.row_slice(i).iter().enumerate() {
                if v > out[j] {
                    out[j] = v;
                    arg[j] = i;
                }
            }
        }
        Ok(self.push(Tensor::row(out), Op::MaxRows(a.0, arg)))
    }

    /// Gather rows of `table` (`V x d`) for `ids`: result `len(ids) x d`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var, GradError> {
        let t = self.val(table.0);
        let (v, d) = t.dims2();
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(GradError::InvalidArgument {
                op: "embedding",
                reason: format!("id {bad} out of range for vocab of {v}"),
            });
        }
        let mut data = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            data.extend_from_slice(t.row_slice(i));
        }
        let out = Tensor::new(vec![ids.len(), d], data)?;
        Ok(self.push(out, Op::Embedding(table.0, ids.to_vec())))
    }

    /// Rows `start..end` of a rank-2 value.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var, GradError> {
        let t = self.val(a.0);
        let (r, c) = t.dims2();
        if start >= end || end > r {
            return Err(GradError::InvalidArgument {
                op: "slice_rows",
                reason: format!("range {start}..{end} invalid for {r} rows"),
            });
        }
        let out = Tensor::new(vec![end - start, c], t.data()[start * c..end * c].to_vec())?;
        Ok(self.push(out, Op::SliceRows(a.0, start)))
    }

    pub fn row(&mut self, a: Var, i: usize) -> Result<Var, GradError> {
        self.slice_rows(a, i, i + 1)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, GradError> {
        let out = self.val(a.0).clone().reshaped(shape)?;
        Ok(self.push(out, Op::Reshape(a.0)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.val(a.0).sum();
        self.push(Tensor::scalar(s), Op::Sum(a.0))
    }

    /// Scalar at flat index `i`.
    pub fn pick(&mut self, a: Var, i: usize) -> Result<Var, GradError> {
        let t = self.val(a.0);
        if i >= t.len() {
            return Err(GradError::InvalidArgument {
                op: "pick",
                reason: format!("index {i} out of range for {} elements", t.len()),
            });
        }
        let v = t.data()[i];
        Ok(self.push(Tensor::scalar(v), Op::Pick(a.0, i)))
    }

    /// `x / sum(x)` over all entries.
    pub fn normalize(&mut self, a: Var) -> Result<Var, GradError> {
        let t = self.val(a.0);
        let s = t.sum();
        if s <= 0.0 || !s.is_finite() {
            return Err(GradError::InvalidArgument {
                op: "normalize",
                reason: format!("sum must be positive, got {s}"),
            });
        }
        let out = t.map(|x| x / s);
        Ok(self.push(out, Op::Normalize(a.0)))
    }

    /// Jensen-Shannon divergence of two distributions with equal length.
    /// `floor` guards the logarithm in the backward pass.
    pub fn js_divergence(&mut self, p: Var, q: Var, floor: f64) -> Result<Var, GradError> {
        let (tp, tq) = (self.val(p.0), self.val(q.0));
        if tp.len() != tq.len() {
            return Err(GradError::ShapeMismatch {
                op: "js_divergence",
                lhs: tp.shape().to_vec(),
                rhs: tq.shape().to_vec(),
            });
        }
        let v = js_value(tp.data(), tq.data());
        Ok(self.push(Tensor::scalar(v), Op::Js(p.0, q.0, floor)))
    }

    /// Accumulate d(loss)/d(param) into `grads` for every parameter leaf
    /// reachable from `loss`.
    pub fn backward(&self, loss: Var, grads: &mut GradBuffer) -> Result<(), GradError> {
        let node_grads = self.node_grads(loss)?;
        for (i, g) in node_grads.into_iter().enumerate() {
            if let (Op::Param(id), Some(g)) = (&self.nodes[i].op, g) {
                grads.get_mut(*id).add_assign(&g);
            }
        }
        Ok(())
    }

    /// Gradient of `loss` with respect to every node; `None` where the node
    /// does not influence the loss or no parameter feeds into it.
    pub fn node_grads(&self, loss: Var) -> Result<Vec<Option<Tensor>>, GradError> {
        let lt = self.val(loss.0);
        if lt.len() != 1 {
            return Err(GradError::NonScalarLoss(lt.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::filled(lt.shape(), 1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(grads)
    }

    fn backprop_node(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let out = self.val(i);
        let gd = g.data();
        let needs = |j: usize| self.nodes[j].needs_grad;
        let mut acc = |j: usize, t: Tensor| {
            if !self.nodes[j].needs_grad {
                return;
            }
            match &mut grads[j] {
                Some(existing) => existing.add_assign(&t),
                slot @ None => *slot = Some(t),
            }
        };
        match &self.nodes[i].op {
            Op::Param(_) | Op::Const => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.val(*a), self.val(*b));
                let (m, k) = ta.dims2();
                let n = tb.cols();
                let (ad, bd) = (ta.data(), tb.data());
                if needs(*a) {
                    // da = g * b^T
                    let mut da = vec![0.0; m * k];
                    for r in 0..m {
                        let grow = &gd[r * n..(r + 1) * n];
                        for p in 0..k {
                            let brow = &bd[p * n..(p + 1) * n];
                            da[r * k + p] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                        }
                    }
                    acc(*a, Tensor::new(vec![m, k], da).expect("matmul grad"));
                }
                if needs(*b) {
                    // db = a^T * g
                    let mut db = vec![0.0; k * n];
                    for r in 0..m {
                        let grow = &gd[r * n..(r + 1) * n];
                        for p in 0..k {
                            let av = ad[r * k + p];
                            if av == 0.0 {
                                continue;
                            }
                            for (o, &gv) in db[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                *o += av * gv;
                            }
                        }
                    }
                    acc(*b, Tensor::new(vec![k, n], db).expect("matmul grad"));
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(self.nodes[i].op, Op::Sub(..)) {
                    -1.0
                } else {
                    1.0
                };
                let (ta, tb) = (self.val(*a), self.val(*b));
                let kind = broadcast_kind("add", ta, tb).expect("checked in forward");
                acc(*a, g.clone());
                let gb: Vec<f64> = gd.iter().map(|v| sign * v).collect();
                acc(*b, reduce_broadcast(&gb, tb, kind));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.val(*a), self.val(*b));
                let kind = broadcast_kind("mul", ta, tb).expect("checked in forward");
                let bb = zip_broadcast(ta, tb, kind, |_, y| y);
                let da: Vec<f64> = gd.iter().zip(bb.data()).map(|(g, y)| g * y).collect();
                let gb: Vec<f64> = gd.iter().zip(ta.data()).map(|(g, x)| g * x).collect();
                acc(*a, Tensor::new(ta.shape().to_vec(), da).expect("mul grad"));
                acc(*b, reduce_broadcast(&gb, tb, kind));
            }
            Op::Scale(a, c) => acc(*a, g.map(|v| v * c)),
            Op::Tanh(a) => {
                let d = gd.iter().zip(out.data()).map(|(g, y)| g * (1.0 - y * y));
                acc(
                    *a,
                    Tensor::new(out.shape().to_vec(), d.collect()).expect("tanh grad"),
                );
            }
            Op::Sigmoid(a) => {
                let d = gd.iter().zip(out.data()).map(|(g, y)| g * y * (1.0 - y));
                acc(
                    *a,
                    Tensor::new(out.shape().to_vec(), d.collect()).expect("sigmoid grad"),
                );
            }
            Op::Exp(a) => {
                let d = gd.iter().zip(out.data()).map(|(g, y)| g * y);
                acc(
                    *a,
                    Tensor::new(out.shape().to_vec(), d.collect()).expect("exp grad"),
                );
            }
            Op::Log(a) => {
                let x = self.val(*a);
                let d = gd.iter().zip(x.data()).map(|(g, x)| g / x);
                acc(
                    *a,
                    Tensor::new(x.shape().to_vec(), d.collect()).expect("log grad"),
                );
            }
            Op::LogClamped(a, floor) => {
                let x = self.val(*a);
                let d = gd
                    .iter()
                    .zip(x.data())
                    .map(|(g, &x)| if x > *floor { g / x } else { 0.0 });
                acc(
                    *a,
                    Tensor::new(x.shape().to_vec(), d.collect()).expect("log grad"),
                );
            }
            Op::Softmax(a, axis) => {
                let (n, len, ls, es) = lanes(out, *axis);
                let y = out.data();
                let mut d = vec![0.0; y.len()];
                for l in 0..n {
                    let idx = |k: usize| l * ls + k * es;
                    let dot: f64 = (0..len).map(|k| gd[idx(k)] * y[idx(k)]).sum();
                    for k in 0..len {
                        d[idx(k)] = y[idx(k)] * (gd[idx(k)] - dot);
                    }
                }
                acc(
                    *a,
                    Tensor::new(out.shape().to_vec(), d).expect("softmax grad"),
                );
            }
            Op::LogSoftmax(a, axis) => {
                let (n, len, ls, es) = lanes(out, *axis);
                let y = out.data();
                let mut d = vec![0.0; y.len()];
                for l in 0..n {
                    let idx = |k: usize| l * ls + k * es;
                    let gs: f64 = (0..len).map(|k| gd[idx(k)]).sum();
                    for k in 0..len {
                        d[idx(k)] = gd[idx(k)] - y[idx(k)].exp() * gs;
                    }
                }
                acc(
                    *a,
                    Tensor::new(out.shape().to_vec(), d).expect("log_softmax grad"),
                );
            }
            Op::Concat(parts, axis) => {
                let (_, total_cols) = out.dims2();
                let mut row_off = 0;
                let mut col_off = 0;
                for &p in parts {
                    let t = self.val(p);
                    let (r, c) = t.dims2();
                    let mut d = Vec::with_capacity(r * c);
                    match axis {
                        Axis::Rows => {
                            d.extend_from_slice(&gd[row_off * c..(row_off + r) * c]);
                            row_off += r;
                        }
                        Axis::Cols => {
                            for rr in 0..r {
                                let s = rr * total_cols + col_off;
                                d.extend_from_slice(&gd[s..s + c]);
                            }
                            col_off += c;
                        }
                    }
                    acc(p, Tensor::new(t.shape().to_vec(), d).expect("concat grad"));
                }
            }
            Op::MeanRows(a) => {
                let t = self.val(*a);
                let (r, c) = t.dims2();
                let mut d = vec![0.0; r * c];
                for rr in 0..r {
                    for j in 0..c {
                        d[rr * c + j] = gd[j] / r as f64;
                    }
                }
                acc(*a, Tensor::new(t.shape().to_vec(), d).expect("mean grad"));
            }
            Op::MaxRows(a, arg) => {
                let t = self.val(*a);
                let c = t.cols();
                let mut d = Tensor::zeros(t.shape());
                for (j, &r) in arg.iter().enumerate() {
                    d.data_mut()[r * c + j] += gd[j];
                }
                acc(*a, d);
            }
            Op::Embedding(table, ids) => {
                let t = self.val(*table);
                let dim = t.cols();
                let mut d = Tensor::zeros(t.shape());
                for (k, &id) in ids.iter().enumerate() {
                    let dst = &mut d.data_mut()[id * dim..(id + 1) * dim];
                    for (o, v) in dst.iter_mut().zip(&gd[k * dim..(k + 1) * dim]) {
                        *o += v;
                    }
                }
                acc(*table, d);
            }
            Op::SliceRows(a, start) => {
                let t = self.val(*a);
                let c = t.cols();
                let mut d = Tensor::zeros(t.shape());
                d.data_mut()[start * c..start * c + gd.len()].copy_from_slice(gd);
                acc(*a, d);
            }
            Op::Reshape(a) => {
                let t = self.val(*a);
                acc(
                    *a,
                    Tensor::new(t.shape().to_vec(), gd.to_vec()).expect("reshape grad"),
                );
            }
            Op::Sum(a) => {
                let t = self.val(*a);
                acc(*a, Tensor::filled(t.shape(), gd[0]));
            }
            Op::Pick(a, k) => {
                let t = self.val(*a);
                let mut d = Tensor::zeros(t.shape());
                d.data_mut()[*k] = gd[0];
                acc(*a, d);
            }
            Op::Normalize(a) => {
                let x = self.val(*a);
                let s = x.sum();
                let y = out.data();
                let dot: f64 = gd.iter().zip(y).map(|(g, y)| g * y).sum();
                let d = gd.iter().map(|g| (g - dot) / s).collect();
                acc(
                    *a,
                    Tensor::new(x.shape().to_vec(), d).expect("normalize grad"),
                );
            }
            Op::Js(p, q, floor) => {
                let (tp, tq) = (self.val(*p), self.val(*q));
                let scale = gd[0];
                let side = |a: &Tensor, b: &Tensor| -> Tensor {
                    let d = a
                        .data()
                        .iter()
                        .zip(b.data())
                        .map(|(&x, &y)| {
                            let m = 0.5 * (x + y);
                            if m <= 0.0 {
                                0.0
                            } else {
                                scale * 0.5 * (x.max(*floor) / m).ln()
                            }
                        })
                        .collect();
                    Tensor::new(a.shape().to_vec(), d).expect("js grad")
                };
                acc(*p, side(tp, tq));
                acc(*q, side(tq, tp));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let x = tape.constant(Tensor::row(vec![0.0, 0.0, 0.0]));
        let y = tape.softmax(x, Axis::Cols);
        assert!(close(tape.value(y).data(), &[1.0 / 3.0; 3], 1e-15));
    }

    #[test]
    fn matmul_with_identity() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let i = tape.constant(Tensor::identity(2));
        let m = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = tape.constant(m.clone());
        let y = tape.matmul(i, b).unwrap();
        assert_eq!(tape.value(y), &m);
    }

    #[test]
    fn max_pool_over_rows() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let x = tape.constant(Tensor::from_rows(&[vec![1.0, 5.0], vec![3.0, 2.0]]).unwrap());
        let y = tape.max_pool(x).unwrap();
        assert_eq!(tape.value(y).data(), &[3.0, 5.0]);
    }

    #[test]
    fn shape_errors_name_the_op() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        let err = tape.matmul(a, b).unwrap_err();
        assert_eq!(
            err,
            GradError::ShapeMismatch {
                op: "matmul",
                lhs: vec![2, 3],
                rhs: vec![2, 3]
            }
        );
        assert!(err.to_string().starts_with("matmul"));
        let c = tape.constant(Tensor::zeros(&[3, 2]));
        assert!(tape.add(a, c).is_err());
    }

    #[test]
    fn square_has_gradient_six_at_three() {
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::scalar(3.0));
        let mut tape = Tape::new(&store);
        let xv = tape.param(x);
        let y = tape.mul(xv, xv).unwrap();
        let mut grads = GradBuffer::for_store(&store);
        tape.backward(y, &mut grads).unwrap();
        assert_eq!(grads.get(x).item(), 6.0);
    }

    #[test]
    fn constant_graph_gives_zero_gradients() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::row(vec![1.0, 2.0]));
        let mut tape = Tape::new(&store);
        let c = tape.constant(Tensor::row(vec![3.0, 4.0]));
        let s = tape.sum(c);
        let mut grads = GradBuffer::for_store(&store);
        tape.backward(s, &mut grads).unwrap();
        assert!(grads.is_zero(w));
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let c = tape.constant(Tensor::row(vec![3.0, 4.0]));
        let mut grads = GradBuffer::for_store(&store);
        assert_eq!(
            tape.backward(c, &mut grads),
            Err(GradError::NonScalarLoss(vec![1, 2]))
        );
    }

    #[test]
    fn detach_blocks_gradient() {
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::scalar(2.0));
        let mut tape = Tape::new(&store);
        let xv = tape.param(x);
        let d = tape.detach(xv);
        let y = tape.mul(xv, d).unwrap();
        let mut grads = GradBuffer::for_store(&store);
        tape.backward(y, &mut grads).unwrap();
        // d/dx (x * sg(x)) = sg(x)
        assert_eq!(grads.get(x).item(), 2.0);
    }

    #[test]
    fn embedding_rejects_out_of_range_ids() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let t = tape.constant(Tensor::zeros(&[3, 2]));
        assert!(tape.embedding(t, &[0, 3]).is_err());
    }

    #[test]
    fn js_value_closed_forms() {
        assert_eq!(js_value(&[0.3, 0.7], &[0.3, 0.7]), 0.0);
        let v = js_value(&[1.0, 0.0], &[0.0, 1.0]);
        assert!((v - std::f64::consts::LN_2).abs() < 1e-15);
    }
}
