use std::collections::HashMap;
use std::hash::{DefaultHasher, Hasher};

use super::params::{ParamId, ParamStore};
use super::tensor::{matmul_into, matmul_nt_into, matmul_tn_into, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    DivCol(Var, Var),
    Scale(Var, f64),
    DivScalar(Var, f64),
    AddScalar(Var),
    MatMul(Var, Var),
    Transpose(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    Reshape(Var),
    GatherRows(Var, Vec<usize>),
    SegmentMax(Var, Vec<usize>),
    SegmentSum(Var, usize),
    SoftmaxRows(Var),
    Sigmoid(Var),
    Relu(Var),
    Abs(Var),
    Recip(Var),
    RowNorm(Var),
    Sum(Var),
    Mean(Var),
    Lerp { gate: Var, a: Var, x: Var },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddRow(..) => "add_row",
            Op::MulCol(..) => "mul_col",
            Op::DivCol(..) => "div_col",
            Op::Scale(..) => "scale",
            Op::DivScalar(..) => "div_scalar",
            Op::AddScalar(..) => "add_scalar",
            Op::MatMul(..) => "matmul",
            Op::Transpose(..) => "transpose",
            Op::ConcatCols(..) => "concat_cols",
            Op::SliceCols(..) => "slice_cols",
            Op::Reshape(..) => "reshape",
            Op::GatherRows(..) => "gather_rows",
            Op::SegmentMax(..) => "segment_max",
            Op::SegmentSum(..) => "segment_sum",
            Op::SoftmaxRows(..) => "softmax_rows",
            Op::Sigmoid(..) => "sigmoid",
            Op::Relu(..) => "relu",
            Op::Abs(..) => "abs",
            Op::Recip(..) => "recip",
            Op::RowNorm(..) => "row_norm",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::Lerp { .. } => "lerp",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of a forward computation.
///
/// Nodes are only ever pushed after their inputs, so the node list is a
/// topological order and backward is a single reverse sweep.
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    bound: HashMap<ParamId, Var>,
    choices: DefaultHasher,
    validate: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            bound: HashMap::new(),
            choices: DefaultHasher::new(),
            validate: cfg!(debug_assertions),
        }
    }

    /// Enables or disables the finiteness check run after every op.
    pub fn set_validation(&mut self, on: bool) {
        self.validate = on;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Fingerprint of every discrete choice made so far (gather indices,
    /// argmax positions, ReLU and abs sign patterns). Two evaluations with
    /// equal fingerprints lie on the same smooth piece of the function.
    pub fn choice_signature(&self) -> u64 {
        self.choices.finish()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Result<Var> {
        if self.validate && !value.is_finite() {
            return Err(Error::NonFinite(op.name().to_string()));
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn mat_dims(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        let s = self.shape(v);
        if s.len() != 2 {
            return Err(Error::shape(op, s, &[0, 0]));
        }
        Ok((s[0], s[1]))
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf whose gradient is tracked.
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Binds a stored parameter as a leaf; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.bound.get(&id) {
            return v;
        }
        let p = store.get(id);
        let v = if p.trainable {
            self.variable(p.tensor.clone())
        } else {
            self.constant(p.tensor.clone())
        };
        self.bound.insert(id, v);
        v
    }

    // ---------------------------------------------------------------- ops

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::Mul(a, b), rg)
    }

    /// Adds a length-`C` row vector (shape `[C]` or `[1, C]`) to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (_, c) = self.mat_dims("add_row", x)?;
        if self.value(row).len() != c {
            return Err(Error::shape("add_row", self.shape(x), self.shape(row)));
        }
        let mut v = self.value(x).clone();
        let r = self.value(row).data().to_vec();
        for chunk in v.data_mut().chunks_mut(c) {
            for (o, b) in chunk.iter_mut().zip(&r) {
                *o += b;
            }
        }
        let rg = self.rg(x) || self.rg(row);
        self.push(v, Op::AddRow(x, row), rg)
    }

    fn col_check(&self, op: &'static str, x: Var, col: Var) -> Result<usize> {
        let (n, c) = self.mat_dims(op, x)?;
        let cs = self.shape(col);
        if cs != [n, 1] {
            return Err(Error::shape(op, self.shape(x), cs));
        }
        Ok(c)
    }

    /// Multiplies row `i` of `x` by `col[i]`.
    pub fn mul_col(&mut self, x: Var, col: Var) -> Result<Var> {
        let c = self.col_check("mul_col", x, col)?;
        let mut v = self.value(x).clone();
        let s = self.value(col).data().to_vec();
        for (chunk, &k) in v.data_mut().chunks_mut(c).zip(&s) {
            chunk.iter_mut().for_each(|o| *o *= k);
        }
        let rg = self.rg(x) || self.rg(col);
        self.push(v, Op::MulCol(x, col), rg)
    }

    /// Divides row `i` of `x` by `col[i]`.
    pub fn div_col(&mut self, x: Var, col: Var) -> Result<Var> {
        let c = self.col_check("div_col", x, col)?;
        let mut v = self.value(x).clone();
        let s = self.value(col).data().to_vec();
        for (chunk, &k) in v.data_mut().chunks_mut(c).zip(&s) {
            chunk.iter_mut().for_each(|o| *o /= k);
        }
        let rg = self.rg(x) || self.rg(col);
        self.push(v, Op::DivCol(x, col), rg)
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Result<Var> {
        let v = self.value(x).map(|a| a * k);
        let rg = self.rg(x);
        self.push(v, Op::Scale(x, k), rg)
    }

    pub fn div_scalar(&mut self, x: Var, d: f64) -> Result<Var> {
        let v = self.value(x).map(|a| a / d);
        let rg = self.rg(x);
        self.push(v, Op::DivScalar(x, d), rg)
    }

    pub fn add_scalar(&mut self, x: Var, k: f64) -> Result<Var> {
        let v = self.value(x).map(|a| a + k);
        let rg = self.rg(x);
        self.push(v, Op::AddScalar(x), rg)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.mat_dims("matmul", a)?;
        let (k2, n) = self.mat_dims("matmul", b)?;
        if k != k2 {
            return Err(Error::shape("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = vec![0.0; m * n];
        matmul_into(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a, b), rg)
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        self.mat_dims("transpose", x)?;
        let v = self.value(x).transpose2();
        let rg = self.rg(x);
        self.push(v, Op::Transpose(x), rg)
    }

    /// Concatenates matrices with equal row counts along the feature axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::invalid("concat_cols: no inputs"))?;
        let (n, _) = self.mat_dims("concat_cols", first)?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.mat_dims("concat_cols", p)?;
            if r != n {
                return Err(Error::shape("concat_cols", self.shape(first), self.shape(p)));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(n * total);
        for i in 0..n {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(i));
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(Tensor::matrix(n, total, out)?, Op::ConcatCols(parts.to_vec()), rg)
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (n, c) = self.mat_dims("slice_cols", x)?;
        if start >= end || end > c {
            return Err(Error::Index {
                op: "slice_cols",
                index: end,
                len: c,
            });
        }
        let mut out = Vec::with_capacity(n * (end - start));
        for i in 0..n {
            out.extend_from_slice(&self.value(x).row(i)[start..end]);
        }
        let rg = self.rg(x);
        self.push(Tensor::matrix(n, end - start, out)?, Op::SliceCols(x, start), rg)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).clone().reshaped(shape)?;
        let rg = self.rg(x);
        self.push(v, Op::Reshape(x), rg)
    }

    /// Row `i` of the result is row `indices[i]` of `x`. Indices may repeat.
    pub fn gather_rows(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let (n, c) = self.mat_dims("gather_rows", x)?;
        let mut out = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            if i >= n {
                return Err(Error::Index {
                    op: "gather_rows",
                    index: i,
                    len: n,
                });
            }
            out.extend_from_slice(self.value(x).row(i));
            self.choices.write_usize(i);
        }
        let rg = self.rg(x);
        self.push(
            Tensor::matrix(indices.len(), c, out)?,
            Op::GatherRows(x, indices.to_vec()),
            rg,
        )
    }

    /// Column-wise max over consecutive groups of `group` rows: `(N*g) x C -> N x C`.
    /// Ties resolve to the lowest row.
    pub fn segment_max(&mut self, x: Var, group: usize) -> Result<Var> {
        let (n, c) = self.mat_dims("segment_max", x)?;
        if group == 0 || n % group != 0 {
            return Err(Error::shape("segment_max", self.shape(x), &[group]));
        }
        let segs = n / group;
        let xv = self.value(x);
        let mut out = vec![0.0; segs * c];
        let mut arg = vec![0usize; segs * c];
        for s in 0..segs {
            for j in 0..c {
                let mut best = s * group;
                let mut bv = xv.get2(best, j);
                for r in s * group + 1..(s + 1) * group {
                    let v = xv.get2(r, j);
                    if v > bv {
                        bv = v;
                        best = r;
                    }
                }
                out[s * c + j] = bv;
                arg[s * c + j] = best;
            }
        }
        for &a in &arg {
            self.choices.write_usize(a);
        }
        let rg = self.rg(x);
        self.push(Tensor::matrix(segs, c, out)?, Op::SegmentMax(x, arg), rg)
    }

    /// Column-wise max over all rows: `N x C -> 1 x C`.
    pub fn max_rows(&mut self, x: Var) -> Result<Var> {
        let (n, _) = self.mat_dims("max_rows", x)?;
        self.segment_max(x, n)
    }

    /// Column-wise sum over consecutive groups of `group` rows.
    pub fn segment_sum(&mut self, x: Var, group: usize) -> Result<Var> {
        let (n, c) = self.mat_dims("segment_sum", x)?;
        if group == 0 || n % group != 0 {
            return Err(Error::shape("segment_sum", self.shape(x), &[group]));
        }
        let segs = n / group;
        let mut out = vec![0.0; segs * c];
        for r in 0..n {
            let s = r / group;
            for (o, v) in out[s * c..(s + 1) * c].iter_mut().zip(self.value(x).row(r)) {
                *o += v;
            }
        }
        let rg = self.rg(x);
        self.push(Tensor::matrix(segs, c, out)?, Op::SegmentSum(x, group), rg)
    }

    /// Softmax along the last axis of a matrix.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let (n, c) = self.mat_dims("softmax_rows", x)?;
        let mut v = self.value(x).clone();
        for i in 0..n {
            softmax_in_place(v.row_mut(i));
        }
        debug_assert_eq!(v.cols(), c);
        let rg = self.rg(x);
        self.push(v, Op::SoftmaxRows(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).map(sigmoid);
        let rg = self.rg(x);
        self.push(v, Op::Sigmoid(x), rg)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).map(|a| if a > 0.0 { a } else { 0.0 });
        hash_signs(&mut self.choices, self.nodes[x.0].value.data());
        let rg = self.rg(x);
        self.push(v, Op::Relu(x), rg)
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).map(f64::abs);
        hash_signs(&mut self.choices, self.nodes[x.0].value.data());
        let rg = self.rg(x);
        self.push(v, Op::Abs(x), rg)
    }

    pub fn recip(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).map(|a| 1.0 / a);
        let rg = self.rg(x);
        self.push(v, Op::Recip(x), rg)
    }

    /// Euclidean norm of every row: `N x C -> N x 1`.
    pub fn row_norm(&mut self, x: Var) -> Result<Var> {
        let (n, _) = self.mat_dims("row_norm", x)?;
        let xv = self.value(x);
        let out: Vec<f64> = (0..n)
            .map(|i| xv.row(i).iter().map(|a| a * a).sum::<f64>().sqrt())
            .collect();
        let rg = self.rg(x);
        self.push(Tensor::matrix(n, 1, out)?, Op::RowNorm(x), rg)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let v = Tensor::scalar(self.value(x).sum());
        let rg = self.rg(x);
        self.push(v, Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.is_empty() {
            return Err(Error::invalid("mean of empty tensor"));
        }
        let v = Tensor::scalar(t.sum() / t.len() as f64);
        let rg = self.rg(x);
        self.push(v, Op::Mean(x), rg)
    }

    /// Gated convex mix `(1 - gate) * a + gate * x`, evaluated as
    /// `a + gate * (x - a)` and clamped to the closed interval spanned by
    /// `a` and `x` so the result never leaves it through rounding.
    pub fn lerp(&mut self, gate: Var, a: Var, x: Var) -> Result<Var> {
        self.same_shape("lerp", gate, a)?;
        self.same_shape("lerp", a, x)?;
        let (gv, av, xv) = (self.value(gate), self.value(a), self.value(x));
        let data = gv
            .data()
            .iter()
            .zip(av.data().iter().zip(xv.data()))
            .map(|(&g, (&a, &x))| {
                let v = a + g * (x - a);
                v.clamp(a.min(x), a.max(x))
            })
            .collect();
        let v = Tensor::new(av.shape().to_vec(), data)?;
        let rg = self.rg(gate) || self.rg(a) || self.rg(x);
        self.push(v, Op::Lerp { gate, a, x }, rg)
    }

    // ----------------------------------------------------------- backward

    /// Reverse sweep from a scalar root. Gradients are retrievable through
    /// [`Tape::grad`] and [`Tape::param_grads`] afterwards.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        let rs = self.shape(root);
        if !rs.is_empty() {
            return Err(Error::NonScalarRoot(rs.to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::ones(rs));
        for id in (0..=root.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            if !self.nodes[id].requires_grad {
                grads[id] = Some(g);
                continue;
            }
            self.propagate(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradients aligned with `store`; parameters not reached by the last
    /// backward pass get zeros.
    pub fn param_grads(&self, store: &ParamStore) -> Vec<Tensor> {
        store
            .iter()
            .map(|(id, p)| {
                self.bound
                    .get(&id)
                    .and_then(|&v| self.grad(v).cloned())
                    .unwrap_or_else(|| Tensor::zeros(p.tensor.shape()))
            })
            .collect()
    }

    fn propagate(&self, id: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[id];
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.acc(grads, *a, || g.clone());
                self.acc(grads, *b, || g.clone());
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, || g.clone());
                self.acc(grads, *b, || g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                self.acc(grads, *a, || g.zip_map(self.value(*b), |x, y| x * y));
                self.acc(grads, *b, || g.zip_map(self.value(*a), |x, y| x * y));
            }
            Op::AddRow(x, row) => {
                self.acc(grads, *x, || g.clone());
                self.acc(grads, *row, || {
                    let c = g.cols();
                    let mut out = vec![0.0; c];
                    for chunk in gd.chunks(c) {
                        for (o, v) in out.iter_mut().zip(chunk) {
                            *o += v;
                        }
                    }
                    Tensor::new(self.shape(*row).to_vec(), out).expect("row shape")
                });
            }
            Op::MulCol(x, col) => {
                let c = g.cols();
                let s = self.value(*col).data();
                self.acc(grads, *x, || {
                    let mut out = g.clone();
                    for (chunk, &k) in out.data_mut().chunks_mut(c).zip(s) {
                        chunk.iter_mut().for_each(|o| *o *= k);
                    }
                    out
                });
                self.acc(grads, *col, || {
                    let xv = self.value(*x).data();
                    let out = gd
                        .chunks(c)
                        .zip(xv.chunks(c))
                        .map(|(gr, xr)| gr.iter().zip(xr).map(|(a, b)| a * b).sum())
                        .collect();
                    Tensor::matrix(s.len(), 1, out).expect("col shape")
                });
            }
            Op::DivCol(x, col) => {
                let c = g.cols();
                let s = self.value(*col).data();
                self.acc(grads, *x, || {
                    let mut out = g.clone();
                    for (chunk, &k) in out.data_mut().chunks_mut(c).zip(s) {
                        chunk.iter_mut().for_each(|o| *o /= k);
                    }
                    out
                });
                self.acc(grads, *col, || {
                    let xv = self.value(*x).data();
                    let out = gd
                        .chunks(c)
                        .zip(xv.chunks(c))
                        .zip(s)
                        .map(|((gr, xr), &k)| -gr.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>() / (k * k))
                        .collect();
                    Tensor::matrix(s.len(), 1, out).expect("col shape")
                });
            }
            Op::Scale(x, k) => self.acc(grads, *x, || g.map(|v| v * k)),
            Op::DivScalar(x, d) => self.acc(grads, *x, || g.map(|v| v / d)),
            Op::AddScalar(x) => self.acc(grads, *x, || g.clone()),
            Op::MatMul(a, b) => {
                let (m, k) = (self.value(*a).rows(), self.value(*a).cols());
                let n = self.value(*b).cols();
                self.acc(grads, *a, || {
                    let mut out = vec![0.0; m * k];
                    matmul_nt_into(gd, self.value(*b).data(), &mut out, m, k, n);
                    Tensor::matrix(m, k, out).expect("matmul grad")
                });
                self.acc(grads, *b, || {
                    let mut out = vec![0.0; k * n];
                    matmul_tn_into(self.value(*a).data(), gd, &mut out, m, k, n);
                    Tensor::matrix(k, n, out).expect("matmul grad")
                });
            }
            Op::Transpose(x) => self.acc(grads, *x, || g.transpose2()),
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    let start = offset;
                    self.acc(grads, p, || {
                        let mut out = Vec::with_capacity(g.rows() * w);
                        for i in 0..g.rows() {
                            out.extend_from_slice(&g.row(i)[start..start + w]);
                        }
                        Tensor::matrix(g.rows(), w, out).expect("concat grad")
                    });
                    offset += w;
                }
            }
            Op::SliceCols(x, start) => self.acc(grads, *x, || {
                let xs = self.value(*x);
                let mut out = Tensor::zeros(xs.shape());
                let w = g.cols();
                for i in 0..g.rows() {
                    out.row_mut(i)[*start..start + w].copy_from_slice(g.row(i));
                }
                out
            }),
            Op::Reshape(x) => self.acc(grads, *x, || g.clone().reshaped(self.shape(*x)).expect("reshape grad")),
            Op::GatherRows(x, idx) => self.acc(grads, *x, || {
                let mut out = Tensor::zeros(self.shape(*x));
                for (r, &i) in idx.iter().enumerate() {
                    for (o, v) in out.row_mut(i).iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
                out
            }),
            Op::SegmentMax(x, arg) => self.acc(grads, *x, || {
                let mut out = Tensor::zeros(self.shape(*x));
                let c = g.cols();
                let od = out.data_mut();
                for (e, (&src, &gv)) in arg.iter().zip(gd).enumerate() {
                    od[src * c + e % c] += gv;
                }
                out
            }),
            Op::SegmentSum(x, group) => self.acc(grads, *x, || {
                let xs = self.shape(*x);
                let mut out = Tensor::zeros(xs);
                for r in 0..out.rows() {
                    out.row_mut(r).copy_from_slice(g.row(r / group));
                }
                out
            }),
            Op::SoftmaxRows(x) => self.acc(grads, *x, || {
                let y = &node.value;
                let mut out = g.clone();
                for i in 0..y.rows() {
                    let yr = y.row(i);
                    let dot: f64 = g.row(i).iter().zip(yr).map(|(a, b)| a * b).sum();
                    for (o, &yv) in out.row_mut(i).iter_mut().zip(yr) {
                        *o = yv * (*o - dot);
                    }
                }
                out
            }),
            Op::Sigmoid(x) => self.acc(grads, *x, || g.zip_map(&node.value, |gv, y| gv * y * (1.0 - y))),
            Op::Relu(x) => self.acc(grads, *x, || {
                g.zip_map(self.value(*x), |gv, xv| if xv > 0.0 { gv } else { 0.0 })
            }),
            Op::Abs(x) => self.acc(grads, *x, || {
                g.zip_map(self.value(*x), |gv, xv| {
                    if xv > 0.0 {
                        gv
                    } else if xv < 0.0 {
                        -gv
                    } else {
                        0.0
                    }
                })
            }),
            Op::Recip(x) => self.acc(grads, *x, || g.zip_map(self.value(*x), |gv, xv| -gv / (xv * xv))),
            Op::RowNorm(x) => self.acc(grads, *x, || {
                let xv = self.value(*x);
                let mut out = xv.clone();
                for i in 0..xv.rows() {
                    let n = node.value.data()[i];
                    let gi = gd[i];
                    for o in out.row_mut(i) {
                        *o = if n > 0.0 { gi * *o / n } else { 0.0 };
                    }
                }
                out
            }),
            Op::Sum(x) => self.acc(grads, *x, || Tensor::full(self.shape(*x), gd[0])),
            Op::Mean(x) => self.acc(grads, *x, || {
                let n = self.value(*x).len() as f64;
                Tensor::full(self.shape(*x), gd[0] / n)
            }),
            Op::Lerp { gate, a, x } => {
                let (gv, av, xv) = (self.value(*gate), self.value(*a), self.value(*x));
                self.acc(grads, *gate, || {
                    let diff = xv.zip_map(av, |x, a| x - a);
                    g.zip_map(&diff, |gr, d| gr * d)
                });
                self.acc(grads, *a, || g.zip_map(gv, |gr, s| gr * (1.0 - s)));
                self.acc(grads, *x, || g.zip_map(gv, |gr, s| gr * s));
            }
        }
    }

    fn acc(&self, grads: &mut [Option<Tensor>], target: Var, f: impl FnOnce() -> Tensor) {
        if !self.nodes[target.0].requires_grad {
            return;
        }
        let contrib = f();
        match &mut grads[target.0] {
            Some(existing) => existing.add_assign(&contrib),
            slot @ None => *slot = Some(contrib),
        }
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

fn hash_signs(h: &mut DefaultHasher, data: &[f64]) {
    let mut word = 0u64;
    for (i, &v) in data.iter().enumerate() {
        let s = if v > 0.0 {
            1
        } else if v < 0.0 {
            2
        } else {
            3
        };
        word = word.rotate_left(2) ^ s;
        if i % 32 == 31 {
            h.write_u64(word);
            word = 0;
        }
    }
    h.write_u64(word);
}
