//! Reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Tape`] records every operation in insertion order, which is also a
//! topological order of the computation. [`Tape::backward`] walks the record
//! once in reverse and accumulates gradients additively into parents. Only
//! leaves created with [`Tape::param`] (and everything downstream of them)
//! take part in the backward sweep; constants are skipped.
//!
//! Broadcasting is limited to [`Tape::add_bias`], which adds a `1×c` row to
//! every row of an `r×c` matrix. All other shape changes are explicit.

mod gradcheck;

pub use gradcheck::{
    check_gradients, relative_error, GradCheckEntry, GRADCHECK_FLOOR, GRADCHECK_STEP, GRADCHECK_TOL, KINK_TOL,
};

use std::fmt;
use std::str::FromStr;

use crate::error::{shape_err, Error, Result};
use crate::tensor::{gemm, Matrix};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Kind of a recorded operation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    MatMul,
    Add,
    AddBias,
    Hadamard,
    Sigmoid,
    Tanh,
    Relu,
    Scale,
    GroupedMatMul,
    ConcatCols,
    SliceCols,
    SliceRows,
    Sum,
    Mean,
    Pinball,
}

impl OpKind {
    pub const DIFFERENTIABLE: [OpKind; 15] = [
        OpKind::MatMul,
        OpKind::GroupedMatMul,
        OpKind::Add,
        OpKind::AddBias,
        OpKind::Hadamard,
        OpKind::Sigmoid,
        OpKind::Tanh,
        OpKind::Relu,
        OpKind::Scale,
        OpKind::ConcatCols,
        OpKind::SliceCols,
        OpKind::SliceRows,
        OpKind::Sum,
        OpKind::Mean,
        OpKind::Pinball,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::MatMul => "matmul",
            OpKind::Add => "add",
            OpKind::AddBias => "add_bias",
            OpKind::Hadamard => "hadamard",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Tanh => "tanh",
            OpKind::Relu => "relu",
            OpKind::Scale => "scale",
            OpKind::GroupedMatMul => "grouped_matmul",
            OpKind::ConcatCols => "concat_cols",
            OpKind::SliceCols => "slice_cols",
            OpKind::SliceRows => "slice_rows",
            OpKind::Sum => "sum",
            OpKind::Mean => "mean",
            OpKind::Pinball => "pinball",
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OpKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        std::iter::once(OpKind::Leaf)
            .chain(OpKind::DIFFERENTIABLE)
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown op `{s}`")))
    }
}

#[derive(Clone, Copy, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Hadamard(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Scale(Var, f64),
    GroupedMatMul(Var, Var),
    ConcatCols(Var, Var),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    Sum(Var),
    Mean(Var),
    Pinball { pred: Var, target: Var, q: f64 },
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::MatMul(..) => OpKind::MatMul,
            Op::Add(..) => OpKind::Add,
            Op::AddBias(..) => OpKind::AddBias,
            Op::Hadamard(..) => OpKind::Hadamard,
            Op::Sigmoid(_) => OpKind::Sigmoid,
            Op::Tanh(_) => OpKind::Tanh,
            Op::Relu(_) => OpKind::Relu,
            Op::Scale(..) => OpKind::Scale,
            Op::GroupedMatMul(..) => OpKind::GroupedMatMul,
            Op::ConcatCols(..) => OpKind::ConcatCols,
            Op::SliceCols(..) => OpKind::SliceCols,
            Op::SliceRows(..) => OpKind::SliceRows,
            Op::Sum(_) => OpKind::Sum,
            Op::Mean(_) => OpKind::Mean,
            Op::Pinball { .. } => OpKind::Pinball,
        }
    }
}

struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

/// Append-only record of a computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
    fault: Option<OpKind>,
}

/// Logistic sigmoid, numerically stable on both tails.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Pinball (quantile) loss of a single prediction at level `q`.
pub fn pinball_value(pred: f64, target: f64, q: f64) -> f64 {
    if pred <= target {
        q * (target - pred)
    } else {
        (1.0 - q) * (pred - target)
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    /// Tape whose backward rule for `kind` is deliberately wrong. Used to
    /// prove the gradient checker catches broken rules.
    #[doc(hidden)]
    pub fn with_fault(kind: OpKind) -> Self {
        Tape {
            fault: Some(kind),
            ..Tape::default()
        }
    }

    pub fn fault(&self) -> Option<OpKind> {
        self.fault
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Clears the record so the tape can be reused for a new step.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.consumed = false;
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// Scalar value of a `1×1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.as_slice()[0]
    }

    fn push(&mut self, value: Matrix, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn record(&mut self, value: Matrix, op: Op, parents: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: op.kind().name() });
        }
        let needs_grad = parents.iter().any(|p| self.nodes[p.0].needs_grad);
        Ok(self.push(value, op, needs_grad))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return shape_err(op, format!("{sa:?} vs {sb:?}"));
        }
        Ok(())
    }

    fn zip(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Matrix {
        let (va, vb) = (self.value(a), self.value(b));
        let data = va
            .as_slice()
            .iter()
            .zip(vb.as_slice())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Matrix::from_vec(va.rows(), va.cols(), data).expect("same shape")
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        self.record(value, Op::MatMul(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let value = self.zip(a, b, |x, y| x + y);
        self.record(value, Op::Add(a, b), &[a, b])
    }

    /// Adds a `1×c` bias row to every row of `a`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let ((r, c), sb) = (self.shape(a), self.shape(bias));
        if sb != (1, c) {
            return shape_err("add_bias", format!("{r}x{c} + {sb:?}"));
        }
        let mut value = self.value(a).clone();
        let row = self.value(bias).as_slice().to_vec();
        for i in 0..r {
            for (v, b) in value.row_mut(i).iter_mut().zip(&row) {
                *v += b;
            }
        }
        self.record(value, Op::AddBias(a, bias), &[a, bias])
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("hadamard", a, b)?;
        let value = self.zip(a, b, |x, y| x * y);
        self.record(value, Op::Hadamard(a, b), &[a, b])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(sigmoid);
        self.record(value, Op::Sigmoid(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(f64::tanh);
        self.record(value, Op::Tanh(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(|x| x.max(0.0));
        self.record(value, Op::Relu(a), &[a])
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let value = self.value(a).map(|x| x * s);
        self.record(value, Op::Scale(a, s), &[a])
    }

    /// Row-wise matrix product with a separate weight block per row: row
    /// `i` of `a` (`r×k`) is multiplied by rows `i·k..(i+1)·k` of `w`
    /// (`(r·k)×n`), giving an `r×n` result.
    pub fn grouped_matmul(&mut self, a: Var, w: Var) -> Result<Var> {
        let ((r, k), (wr, n)) = (self.shape(a), self.shape(w));
        if wr != r * k {
            return shape_err("grouped_matmul", format!("{r}x{k} rows against {wr}x{n} weight blocks"));
        }
        let (va, vw) = (self.value(a), self.value(w));
        let mut value = Matrix::zeros(r, n);
        for i in 0..r {
            let out = value.row_mut(i);
            for (kk, &x) in va.row(i).iter().enumerate() {
                for (o, wv) in out.iter_mut().zip(vw.row(i * k + kk)) {
                    *o += x * wv;
                }
            }
        }
        self.record(value, Op::GroupedMatMul(a, w), &[a, w])
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let ((ra, ca), (rb, cb)) = (self.shape(a), self.shape(b));
        if ra != rb {
            return shape_err("concat_cols", format!("{ra}x{ca} ‖ {rb}x{cb}"));
        }
        let (va, vb) = (self.value(a), self.value(b));
        let mut data = Vec::with_capacity(ra * (ca + cb));
        for r in 0..ra {
            data.extend_from_slice(va.row(r));
            data.extend_from_slice(vb.row(r));
        }
        let value = Matrix::from_vec(ra, ca + cb, data)?;
        self.record(value, Op::ConcatCols(a, b), &[a, b])
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (r, c) = self.shape(a);
        if start > end || end > c {
            return shape_err("slice_cols", format!("{start}..{end} of {r}x{c}"));
        }
        let value = self.value(a).slice_cols(start, end);
        self.record(value, Op::SliceCols(a, start), &[a])
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (r, c) = self.shape(a);
        if start > end || end > r {
            return shape_err("slice_rows", format!("{start}..{end} of {r}x{c}"));
        }
        let value = self.value(a).slice_rows(start, end);
        self.record(value, Op::SliceRows(a, start), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let value = Matrix::filled(1, 1, self.value(a).sum());
        self.record(value, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let m = self.value(a);
        if m.is_empty() {
            return shape_err("mean", "empty operand");
        }
        let value = Matrix::filled(1, 1, m.sum() / m.len() as f64);
        self.record(value, Op::Mean(a), &[a])
    }

    /// Element-wise pinball loss at quantile level `q`.
    pub fn pinball(&mut self, pred: Var, target: Var, q: f64) -> Result<Var> {
        self.same_shape("pinball", pred, target)?;
        if !(0.0..=1.0).contains(&q) {
            return Err(Error::InvalidInput(format!("quantile level {q} outside [0, 1]")));
        }
        let value = self.zip(pred, target, |p, y| pinball_value(p, y, q));
        self.record(value, Op::Pinball { pred, target, q }, &[pred, target])
    }

    /// Back-propagates from the scalar `loss`.
    ///
    /// Returns gradients for every trainable leaf; leaves the loss does not
    /// depend on get zeros. A tape supports one backward pass per
    /// [`Tape::reset`].
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::BackwardConsumed);
        }
        if self.shape(loss) != (1, 1) {
            return shape_err("backward", format!("loss must be 1x1, got {:?}", self.shape(loss)));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.nodes[loss.0].needs_grad {
            grads[loss.0] = Some(Matrix::filled(1, 1, 1.0));
        }

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) || !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let factor = if self.fault == Some(node.op.kind()) { 1.5 } else { 1.0 };
            self.propagate(node, &g, factor, &mut grads);
        }

        let shapes = self.nodes.iter().map(|n| n.value.shape()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, node: &Node, g: &Matrix, factor: f64, grads: &mut [Option<Matrix>]) {
        let wants = |v: Var| self.nodes[v.0].needs_grad;
        let val = |v: Var| &self.nodes[v.0].value;
        match node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if wants(a) {
                    let (buf, beta) = grad_buf(grads, a, val(a).shape());
                    gemm(g, false, val(b), true, buf, beta);
                    if factor != 1.0 {
                        buf.scale_in_place(factor);
                    }
                }
                if wants(b) {
                    let (buf, beta) = grad_buf(grads, b, val(b).shape());
                    gemm(val(a), true, g, false, buf, beta);
                }
            }
            Op::Add(a, b) => {
                for p in [a, b] {
                    if wants(p) {
                        accumulate(grads, p, g, factor);
                    }
                }
            }
            Op::AddBias(a, bias) => {
                if wants(a) {
                    accumulate(grads, a, g, factor);
                }
                if wants(bias) {
                    let mut colsum = Matrix::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (s, v) in colsum.as_mut_slice().iter_mut().zip(g.row(r)) {
                            *s += v;
                        }
                    }
                    accumulate(grads, bias, &colsum, 1.0);
                }
            }
            Op::Hadamard(a, b) => {
                if wants(a) {
                    accumulate(grads, a, &elementwise(g, val(b), |g, y| g * y), factor);
                }
                if wants(b) {
                    accumulate(grads, b, &elementwise(g, val(a), |g, x| g * x), 1.0);
                }
            }
            Op::Sigmoid(a) => {
                let d = elementwise(g, &node.value, |g, s| g * s * (1.0 - s));
                accumulate(grads, a, &d, factor);
            }
            Op::Tanh(a) => {
                let d = elementwise(g, &node.value, |g, t| g * (1.0 - t * t));
                accumulate(grads, a, &d, factor);
            }
            Op::Relu(a) => {
                let d = elementwise(g, val(a), |g, x| if x > 0.0 { g } else { 0.0 });
                accumulate(grads, a, &d, factor);
            }
            Op::Scale(a, s) => accumulate(grads, a, g, s * factor),
            Op::GroupedMatMul(a, w) => {
                let (va, vw) = (val(a), val(w));
                let k = va.cols();
                if wants(a) {
                    let d = Matrix::from_fn(va.rows(), k, |i, kk| {
                        g.row(i).iter().zip(vw.row(i * k + kk)).map(|(g, w)| g * w).sum()
                    });
                    accumulate(grads, a, &d, factor);
                }
                if wants(w) {
                    let (buf, _) = grad_buf(grads, w, vw.shape());
                    for i in 0..va.rows() {
                        for (kk, &x) in va.row(i).iter().enumerate() {
                            for (d, gv) in buf.row_mut(i * k + kk).iter_mut().zip(g.row(i)) {
                                *d += x * gv;
                            }
                        }
                    }
                }
            }
            Op::ConcatCols(a, b) => {
                let ca = val(a).cols();
                if wants(a) {
                    accumulate(grads, a, &g.slice_cols(0, ca), factor);
                }
                if wants(b) {
                    accumulate(grads, b, &g.slice_cols(ca, g.cols()), 1.0);
                }
            }
            Op::SliceCols(a, start) => {
                let (buf, _) = grad_buf(grads, a, val(a).shape());
                for r in 0..g.rows() {
                    let dst = &mut buf.row_mut(r)[start..start + g.cols()];
                    for (d, v) in dst.iter_mut().zip(g.row(r)) {
                        *d += v * factor;
                    }
                }
            }
            Op::SliceRows(a, start) => {
                let (buf, _) = grad_buf(grads, a, val(a).shape());
                let cols = g.cols();
                let dst = &mut buf.as_mut_slice()[start * cols..start * cols + g.len()];
                for (d, v) in dst.iter_mut().zip(g.as_slice()) {
                    *d += v * factor;
                }
            }
            Op::Sum(a) => {
                let s = g.as_slice()[0] * factor;
                let (r, c) = val(a).shape();
                accumulate(grads, a, &Matrix::filled(r, c, s), 1.0);
            }
            Op::Mean(a) => {
                let m = val(a);
                let s = g.as_slice()[0] * factor / m.len() as f64;
                accumulate(grads, a, &Matrix::filled(m.rows(), m.cols(), s), 1.0);
            }
            Op::Pinball { pred, target, q } => {
                let (p, y) = (val(pred), val(target));
                // At pred == target the q-side branch is taken, matching the forward rule.
                let slope = |p: f64, y: f64| if p <= y { -q } else { 1.0 - q };
                if wants(pred) {
                    let mut d = elementwise(p, y, slope);
                    for (d, gv) in d.as_mut_slice().iter_mut().zip(g.as_slice()) {
                        *d *= gv;
                    }
                    accumulate(grads, pred, &d, factor);
                }
                if wants(target) {
                    let mut d = elementwise(p, y, |p, y| -slope(p, y));
                    for (d, gv) in d.as_mut_slice().iter_mut().zip(g.as_slice()) {
                        *d *= gv;
                    }
                    accumulate(grads, target, &d, 1.0);
                }
            }
        }
    }
}

fn elementwise(a: &Matrix, b: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
    let data = a.as_slice().iter().zip(b.as_slice()).map(|(&x, &y)| f(x, y)).collect();
    Matrix::from_vec(a.rows(), a.cols(), data).expect("same shape")
}

/// Gradient buffer for `v`, plus the `beta` a GEMM should use when writing
/// into it (0 for a fresh buffer, 1 to accumulate).
fn grad_buf(grads: &mut [Option<Matrix>], v: Var, shape: (usize, usize)) -> (&mut Matrix, f64) {
    let slot = &mut grads[v.0];
    let beta = if slot.is_some() { 1.0 } else { 0.0 };
    (slot.get_or_insert_with(|| Matrix::zeros(shape.0, shape.1)), beta)
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, contribution: &Matrix, factor: f64) {
    match &mut grads[v.0] {
        Some(acc) => {
            for (a, c) in acc.as_mut_slice().iter_mut().zip(contribution.as_slice()) {
                *a += c * factor;
            }
        }
        slot @ None => {
            let mut m = contribution.clone();
            if factor != 1.0 {
                m.scale_in_place(factor);
            }
            *slot = Some(m);
        }
    }
}

/// Result of a backward pass.
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient of a trainable leaf; zeros when the loss does not depend on it.
    pub fn get(&self, v: Var) -> Matrix {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                Matrix::zeros(r, c)
            }
        }
    }

    /// Moves the gradients of `vars` out, in order.
    pub fn take_all(mut self, vars: &[Var]) -> Vec<Matrix> {
        vars.iter()
            .map(|v| {
                self.grads[v.0].take().unwrap_or_else(|| {
                    let (r, c) = self.shapes[v.0];
                    Matrix::zeros(r, c)
                })
            })
            .collect()
    }
}
