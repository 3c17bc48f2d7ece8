use rand::Rng;

use super::{Gradients, ParamStore, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Value {
    Owned(Tensor),
    Param(usize),
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    ScaleRows(Var, Var),
    Affine(Var, f64),
    Concat(Vec<Var>),
    Tanh(Var),
    Relu(Var),
    Sigmoid(Var),
    Ln(Var),
    Clamp(Var, f64, f64),
    Softmax { input: Var, segments: Vec<usize> },
    Gather { input: Var, index: Vec<usize> },
    Scatter { input: Var, index: Vec<usize> },
    MeanRows(Var),
    Sum(Var),
    Dropout { input: Var, mask: Vec<f64> },
}

struct Node {
    value: Value,
    op: Op,
    requires_grad: bool,
}

/// Record of executed operations. Nodes are appended in execution order, so
/// every node comes after its inputs.
pub struct Tape<'p> {
    params: Option<&'p ParamStore>,
    bound: Vec<Option<Var>>,
    nodes: Vec<Node>,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p> Tape<'p> {
    pub fn new() -> Self {
        Self {
            params: None,
            bound: Vec::new(),
            nodes: Vec::new(),
        }
    }

    /// A tape that can read parameters from `params` by name.
    pub fn with_params(params: &'p ParamStore) -> Self {
        Self {
            params: Some(params),
            bound: vec![None; params.len()],
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(i) => self.params.expect("param node without store").tensor(*i),
        }
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.value(v).shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, name: &'static str) -> Result<Var, TensorError> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: name });
        }
        let requires_grad = match &op {
            Op::Leaf => false,
            other => inputs(other).iter().any(|v| self.nodes[v.0].requires_grad),
        };
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records a leaf value.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Result<Var, TensorError> {
        let v = self.push(value, Op::Leaf, "leaf")?;
        self.nodes[v.0].requires_grad = requires_grad;
        Ok(v)
    }

    pub fn constant(&mut self, value: Tensor) -> Result<Var, TensorError> {
        self.leaf(value, false)
    }

    /// Binds a stored parameter onto the tape; repeated calls return the same node.
    pub fn param(&mut self, name: &str) -> Result<Var, TensorError> {
        let store = self
            .params
            .ok_or_else(|| TensorError::UnknownParam(name.to_string()))?;
        let idx = store
            .index_of(name)
            .ok_or_else(|| TensorError::UnknownParam(name.to_string()))?;
        if let Some(v) = self.bound[idx] {
            return Ok(v);
        }
        self.nodes.push(Node {
            value: Value::Param(idx),
            op: Op::Leaf,
            requires_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.bound[idx] = Some(v);
        Ok(v)
    }

    /// Shape of a stored parameter, without binding it.
    pub fn params_shape(&self, name: &str) -> Option<[usize; 2]> {
        self.params.and_then(|p| p.get(name)).map(Tensor::shape)
    }

    /// Whether a parameter of this name exists in the attached store.
    pub fn has_param(&self, name: &str) -> bool {
        self.params.is_some_and(|p| p.index_of(name).is_some())
    }

    fn mismatch(op: &'static str, shapes: Vec<[usize; 2]>) -> TensorError {
        TensorError::ShapeMismatch { op, shapes }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols() != tb.rows() {
            return Err(Self::mismatch("matmul", vec![ta.shape(), tb.shape()]));
        }
        let out = ta.matmul(tb);
        self.push(out, Op::MatMul(a, b), "matmul")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if !ta.same_shape(tb) {
            return Err(Self::mismatch("add", vec![ta.shape(), tb.shape()]));
        }
        let mut out = ta.clone();
        out.add_assign(tb);
        self.push(out, Op::Add(a, b), "add")
    }

    /// Adds a `1 x m` row to every row of an `n x m` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(row));
        if tb.rows() != 1 || ta.cols() != tb.cols() {
            return Err(Self::mismatch("add_row", vec![ta.shape(), tb.shape()]));
        }
        let m = ta.cols();
        let mut out = ta.clone();
        for chunk in out.data_mut().chunks_mut(m) {
            for (o, b) in chunk.iter_mut().zip(tb.data()) {
                *o += b;
            }
        }
        self.push(out, Op::AddRow(a, row), "add_row")
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if !ta.same_shape(tb) {
            return Err(Self::mismatch("mul", vec![ta.shape(), tb.shape()]));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::new(ta.rows(), ta.cols(), data)?;
        self.push(out, Op::Mul(a, b), "mul")
    }

    /// Multiplies row `i` of an `n x m` matrix by entry `i` of an `n x 1` column.
    pub fn scale_rows(&mut self, a: Var, weights: Var) -> Result<Var, TensorError> {
        let (ta, tw) = (self.value(a), self.value(weights));
        if tw.cols() != 1 || tw.rows() != ta.rows() {
            return Err(Self::mismatch("scale_rows", vec![ta.shape(), tw.shape()]));
        }
        let m = ta.cols();
        let mut out = ta.clone();
        for (chunk, w) in out.data_mut().chunks_mut(m).zip(tw.data()) {
            for o in chunk {
                *o *= w;
            }
        }
        self.push(out, Op::ScaleRows(a, weights), "scale_rows")
    }

    /// `scale * a + shift`, elementwise.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Result<Var, TensorError> {
        let out = self.value(a).map(|v| scale * v + shift);
        self.push(out, Op::Affine(a, scale), "affine")
    }

    /// Concatenation along the last axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = *parts.first().ok_or(TensorError::NoInputs("concat"))?;
        let rows = self.value(first).rows();
        if parts.iter().any(|&p| self.value(p).rows() != rows) {
            let shapes = parts.iter().map(|&p| self.shape(p)).collect();
            return Err(Self::mismatch("concat", shapes));
        }
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        let out = Tensor::new(rows, cols, data)?;
        self.push(out, Op::Concat(parts.to_vec()), "concat")
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, TensorError> {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a), "tanh")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, TensorError> {
        let out = self.value(a).map(|v| v.max(0.0));
        self.push(out, Op::Relu(a), "relu")
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, TensorError> {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a), "sigmoid")
    }

    /// Natural log; fails on non-positive inputs.
    pub fn ln(&mut self, a: Var) -> Result<Var, TensorError> {
        let out = self.value(a).map(f64::ln);
        self.push(out, Op::Ln(a), "ln")
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var, TensorError> {
        if lo > hi {
            return Err(TensorError::InvalidArgument(format!(
                "clamp bounds {lo} > {hi}"
            )));
        }
        let out = self.value(a).map(|v| v.clamp(lo, hi));
        self.push(out, Op::Clamp(a, lo, hi), "clamp")
    }

    /// Softmax over every element of `a`.
    pub fn softmax(&mut self, a: Var) -> Result<Var, TensorError> {
        let n = self.value(a).len();
        self.segment_softmax(a, &vec![0; n])
    }

    /// Softmax within index sets: element `k` is normalized together with
    /// every other element carrying the same `segments[k]` id.
    pub fn segment_softmax(&mut self, a: Var, segments: &[usize]) -> Result<Var, TensorError> {
        let t = self.value(a);
        if t.len() != segments.len() {
            return Err(TensorError::DataLength {
                expected: t.len(),
                actual: segments.len(),
            });
        }
        let out_data = segment_softmax_values(t.data(), segments);
        let out = Tensor::new(t.rows(), t.cols(), out_data)?;
        self.push(
            out,
            Op::Softmax {
                input: a,
                segments: segments.to_vec(),
            },
            "softmax",
        )
    }

    /// Selects rows by index; indices may repeat.
    pub fn gather_rows(&mut self, a: Var, index: &[usize]) -> Result<Var, TensorError> {
        let t = self.value(a);
        if index.is_empty() {
            return Err(TensorError::NoInputs("gather_rows"));
        }
        let mut data = Vec::with_capacity(index.len() * t.cols());
        for &i in index {
            if i >= t.rows() {
                return Err(TensorError::IndexOutOfRange {
                    op: "gather_rows",
                    index: i,
                    len: t.rows(),
                });
            }
            data.extend_from_slice(t.row_slice(i));
        }
        let out = Tensor::new(index.len(), t.cols(), data)?;
        self.push(
            out,
            Op::Gather {
                input: a,
                index: index.to_vec(),
            },
            "gather_rows",
        )
    }

    /// Weighted-sum scatter: output row `index[k]` accumulates input row `k`.
    /// Output rows that receive nothing are zero.
    pub fn scatter_add_rows(
        &mut self,
        a: Var,
        index: &[usize],
        out_rows: usize,
    ) -> Result<Var, TensorError> {
        let t = self.value(a);
        if index.len() != t.rows() {
            return Err(TensorError::DataLength {
                expected: t.rows(),
                actual: index.len(),
            });
        }
        let m = t.cols();
        let mut out = Tensor::zeros(out_rows.max(1), m);
        if out_rows == 0 {
            return Err(TensorError::EmptyShape { rows: 0, cols: m });
        }
        for (k, &dst) in index.iter().enumerate() {
            if dst >= out_rows {
                return Err(TensorError::IndexOutOfRange {
                    op: "scatter_add_rows",
                    index: dst,
                    len: out_rows,
                });
            }
            let src = t.row_slice(k);
            for (o, s) in out.data_mut()[dst * m..(dst + 1) * m].iter_mut().zip(src) {
                *o += s;
            }
        }
        self.push(
            out,
            Op::Scatter {
                input: a,
                index: index.to_vec(),
            },
            "scatter_add_rows",
        )
    }

    /// Column-wise mean over rows, producing `1 x m`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var, TensorError> {
        let t = self.value(a);
        let (n, m) = (t.rows(), t.cols());
        let mut out = vec![0.0; m];
        for r in 0..n {
            for (o, v) in out.iter_mut().zip(t.row_slice(r)) {
                *o += v;
            }
        }
        for o in &mut out {
            *o /= n as f64;
        }
        let out = Tensor::new(1, m, out)?;
        self.push(out, Op::MeanRows(a), "mean_rows")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, TensorError> {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), "sum")
    }

    /// Inverted dropout. Identity when `training` is false or `p == 0`.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        a: Var,
        p: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<Var, TensorError> {
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::InvalidArgument(format!(
                "dropout probability {p} outside [0, 1)"
            )));
        }
        if !training || p == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 / (1.0 - p);
        let t = self.value(a);
        let mask: Vec<f64> = (0..t.len())
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let data = t.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let out = Tensor::new(t.rows(), t.cols(), data)?;
        self.push(out, Op::Dropout { input: a, mask }, "dropout")
    }

    /// Reverse pass from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients, TensorError> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(TensorError::NonScalarLoss(lt.shape()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }

        let params = self.params.map(|store| {
            (0..store.len())
                .map(|i| {
                    self.bound[i]
                        .and_then(|v| grads[v.0].clone())
                        .unwrap_or_else(|| {
                            let [r, c] = store.tensor(i).shape();
                            Tensor::zeros(r, c)
                        })
                })
                .collect()
        });
        Ok(Gradients::new(grads, params.unwrap_or_default()))
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let out = self.value(Var(idx));
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.nodes[a.0].requires_grad {
                    self.accumulate(grads, *a, g.matmul_t(tb));
                }
                if self.nodes[b.0].requires_grad {
                    self.accumulate(grads, *b, ta.t_matmul(g));
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::AddRow(a, row) => {
                self.accumulate(grads, *a, g.clone());
                if self.nodes[row.0].requires_grad {
                    let m = g.cols();
                    let mut acc = vec![0.0; m];
                    for chunk in g.data().chunks(m) {
                        for (o, v) in acc.iter_mut().zip(chunk) {
                            *o += v;
                        }
                    }
                    self.accumulate(grads, *row, Tensor::new(1, m, acc).unwrap());
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.nodes[a.0].requires_grad {
                    let d = g.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
                    self.accumulate(grads, *a, Tensor::new(g.rows(), g.cols(), d).unwrap());
                }
                if self.nodes[b.0].requires_grad {
                    let d = g.data().iter().zip(ta.data()).map(|(x, y)| x * y).collect();
                    self.accumulate(grads, *b, Tensor::new(g.rows(), g.cols(), d).unwrap());
                }
            }
            Op::ScaleRows(a, w) => {
                let (ta, tw) = (self.value(*a), self.value(*w));
                let m = ta.cols();
                if self.nodes[a.0].requires_grad {
                    let mut d = g.clone();
                    for (chunk, s) in d.data_mut().chunks_mut(m).zip(tw.data()) {
                        for v in chunk {
                            *v *= s;
                        }
                    }
                    self.accumulate(grads, *a, d);
                }
                if self.nodes[w.0].requires_grad {
                    let d = g
                        .data()
                        .chunks(m)
                        .zip(ta.data().chunks(m))
                        .map(|(gr, ar)| gr.iter().zip(ar).map(|(x, y)| x * y).sum())
                        .collect();
                    self.accumulate(grads, *w, Tensor::column(d).unwrap());
                }
            }
            Op::Affine(a, scale) => {
                self.accumulate(grads, *a, g.map(|v| v * scale));
            }
            Op::Concat(parts) => {
                let rows = g.rows();
                let mut offset = 0;
                for &p in parts {
                    let c = self.value(p).cols();
                    if self.nodes[p.0].requires_grad {
                        let mut d = Vec::with_capacity(rows * c);
                        for r in 0..rows {
                            d.extend_from_slice(&g.row_slice(r)[offset..offset + c]);
                        }
                        self.accumulate(grads, p, Tensor::new(rows, c, d).unwrap());
                    }
                    offset += c;
                }
            }
            Op::Tanh(a) => {
                let d = g
                    .data()
                    .iter()
                    .zip(out.data())
                    .map(|(gv, y)| gv * (1.0 - y * y))
                    .collect();
                self.accumulate(grads, *a, Tensor::new(g.rows(), g.cols(), d).unwrap());
            }
            Op::Relu(a) => {
                let d = g
                    .data()
                    .iter()
                    .zip(self.value(*a).data())
                    .map(|(gv, x)| if *x > 0.0 { *gv } else { 0.0 })
                    .collect();
                self.accumulate(grads, *a, Tensor::new(g.rows(), g.cols(), d).unwrap());
            }
            Op::Sigmoid(a) => {
                let d = g
                    .data()
                    .iter()
                    .zip(out.data())
                    .map(|(gv, y)| gv * y * (1.0 - y))
                    .collect();
                self.accumulate(grads, *a, Tensor::new(g.rows(), g.cols(), d).unwrap());
            }
            Op::Ln(a) => {
                let d = g
                    .data()
                    .iter()
                    .zip(self.value(*a).data())
                    .map(|(gv, x)| gv / x)
                    .collect();
                self.accumulate(grads, *a, Tensor::new(g.rows(), g.cols(), d).unwrap());
            }
            Op::Clamp(a, lo, hi) => {
                let d = g
                    .data()
                    .iter()
                    .zip(self.value(*a).data())
                    .map(|(gv, x)| if x > lo && x < hi { *gv } else { 0.0 })
                    .collect();
                self.accumulate(grads, *a, Tensor::new(g.rows(), g.cols(), d).unwrap());
            }
            Op::Softmax { input, segments } => {
                let n_seg = segments.iter().copied().max().map_or(0, |m| m + 1);
                let mut dot = vec![0.0; n_seg];
                for ((gv, y), &s) in g.data().iter().zip(out.data()).zip(segments) {
                    dot[s] += gv * y;
                }
                let d = g
                    .data()
                    .iter()
                    .zip(out.data())
                    .zip(segments)
                    .map(|((gv, y), &s)| y * (gv - dot[s]))
                    .collect();
                self.accumulate(grads, *input, Tensor::new(g.rows(), g.cols(), d).unwrap());
            }
            Op::Gather { input, index } => {
                let t = self.value(*input);
                let m = t.cols();
                let mut d = Tensor::zeros(t.rows(), m);
                for (k, &src) in index.iter().enumerate() {
                    let gr = g.row_slice(k);
                    for (o, v) in d.data_mut()[src * m..(src + 1) * m].iter_mut().zip(gr) {
                        *o += v;
                    }
                }
                self.accumulate(grads, *input, d);
            }
            Op::Scatter { input, index } => {
                let m = g.cols();
                let mut d = Vec::with_capacity(index.len() * m);
                for &dst in index {
                    d.extend_from_slice(g.row_slice(dst));
                }
                self.accumulate(grads, *input, Tensor::new(index.len(), m, d).unwrap());
            }
            Op::MeanRows(a) => {
                let t = self.value(*a);
                let n = t.rows() as f64;
                let mut d = Vec::with_capacity(t.len());
                for _ in 0..t.rows() {
                    d.extend(g.data().iter().map(|v| v / n));
                }
                self.accumulate(grads, *a, Tensor::new(t.rows(), t.cols(), d).unwrap());
            }
            Op::Sum(a) => {
                let t = self.value(*a);
                let s = g.data()[0];
                self.accumulate(grads, *a, Tensor::filled(t.rows(), t.cols(), s));
            }
            Op::Dropout { input, mask } => {
                let d = g.data().iter().zip(mask).map(|(gv, m)| gv * m).collect();
                self.accumulate(grads, *input, Tensor::new(g.rows(), g.cols(), d).unwrap());
            }
        }
    }
}

fn inputs(op: &Op) -> Vec<Var> {
    match op {
        Op::Leaf => vec![],
        Op::MatMul(a, b) | Op::Add(a, b) | Op::AddRow(a, b) | Op::Mul(a, b) | Op::ScaleRows(a, b) => {
            vec![*a, *b]
        }
        Op::Concat(parts) => parts.clone(),
        Op::Affine(a, _)
        | Op::Tanh(a)
        | Op::Relu(a)
        | Op::Sigmoid(a)
        | Op::Ln(a)
        | Op::Clamp(a, _, _)
        | Op::MeanRows(a)
        | Op::Sum(a) => vec![*a],
        Op::Softmax { input, .. }
        | Op::Gather { input, .. }
        | Op::Scatter { input, .. }
        | Op::Dropout { input, .. } => vec![*input],
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Max-subtracted softmax within each segment.
pub(crate) fn segment_softmax_values(x: &[f64], segments: &[usize]) -> Vec<f64> {
    let n_seg = segments.iter().copied().max().map_or(0, |m| m + 1);
    let mut max = vec![f64::NEG_INFINITY; n_seg];
    for (&v, &s) in x.iter().zip(segments) {
        max[s] = max[s].max(v);
    }
    let exps: Vec<f64> = x
        .iter()
        .zip(segments)
        .map(|(&v, &s)| (v - max[s]).exp())
        .collect();
    let mut denom = vec![0.0; n_seg];
    for (e, &s) in exps.iter().zip(segments) {
        denom[s] += e;
    }
    exps.iter()
        .zip(segments)
        .map(|(e, &s)| e / denom[s])
        .collect()
}
