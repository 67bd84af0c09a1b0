//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s in creation
//! order, so the tape is topologically sorted by construction. Values are
//! computed eagerly; [`Graph::backward`] walks the tape in reverse.

use super::{
    kth_smallest_index, matmul_at_raw, matmul_bt_raw, matmul_raw, pairwise_sq_dists_raw, Result,
    Tensor, TensorError,
};

/// Negative-side slope of `leaky_relu`.
pub const LEAKY_SLOPE: f64 = 0.01;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Broadcast {
    Same,
    /// rhs is `[1, cols]`, repeated over the rows of lhs.
    Row,
    /// rhs holds a single value.
    Scalar,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var, Broadcast),
    Sub(Var, Var, Broadcast),
    Mul(Var, Var, Broadcast),
    Div(Var, Var, Broadcast),
    Exp(Var),
    Log(Var),
    Tanh(Var),
    LeakyRelu(Var),
    Square(Var),
    Sqrt(Var),
    Sum(Var),
    Mean(Var),
    Scale(Var, f64),
    AddScalar(Var),
    ClampMin(Var, f64),
    Concat(Vec<Var>),
    SliceCols(Var, usize, usize),
    PermuteColumns(Var, Vec<usize>),
    PairwiseSqDists(Var, Var),
    /// One selected column per row (min / k-th smallest).
    Select(Var, Vec<usize>),
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

fn broadcast_mode(op: &'static str, a: &Tensor, b: &Tensor) -> Result<Broadcast> {
    if a.shape() == b.shape() {
        Ok(Broadcast::Same)
    } else if b.len() == 1 {
        Ok(Broadcast::Scalar)
    } else if a.shape().len() == 2 && b.shape() == [1, a.cols()] {
        Ok(Broadcast::Row)
    } else {
        Err(mismatch(op, a, b))
    }
}

#[inline]
fn rhs_index(mode: Broadcast, i: usize, cols: usize) -> usize {
    match mode {
        Broadcast::Same => i,
        Broadcast::Row => i % cols,
        Broadcast::Scalar => 0,
    }
}

/// Sums a full-size gradient down to the shape of a broadcast operand.
fn reduce_to(mode: Broadcast, g: Vec<f64>, cols: usize, shape: &[usize]) -> Tensor {
    match mode {
        Broadcast::Same => Tensor::raw(shape.to_vec(), g),
        Broadcast::Row => {
            let mut out = vec![0.0; cols];
            for (i, v) in g.iter().enumerate() {
                out[i % cols] += v;
            }
            Tensor::raw(shape.to_vec(), out)
        }
        Broadcast::Scalar => Tensor::raw(shape.to_vec(), vec![g.iter().sum()]),
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, x) in existing.data_mut().iter_mut().zip(g.data()) {
                *e += x;
            }
        }
        slot @ None => *slot = Some(g),
    }
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

    /// A trainable leaf; it always receives a gradient from `backward`.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value, true)
    }

    /// A leaf that is never differentiated.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: Op, value: Tensor, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k) = av.require_matrix("matmul")?;
        let (k2, n) = bv.require_matrix("matmul")?;
        if k != k2 {
            return Err(mismatch("matmul", av, bv));
        }
        let out = matmul_raw(av.data(), bv.data(), m, k, n);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::MatMul(a, b), Tensor::raw(vec![m, n], out), needs))
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        make: fn(Var, Var, Broadcast) -> Op,
    ) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let mode = broadcast_mode(name, av, bv)?;
        let cols = av.cols();
        let bd = bv.data();
        let out: Vec<f64> = av
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, bd[rhs_index(mode, i, cols)]))
            .collect();
        let shape = av.shape().to_vec();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(make(a, b, mode), Tensor::raw(shape, out), needs))
    }

    /// Elementwise sum; `b` may be a `[1, cols]` row or a single value.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, |x, y| x / y, Op::Div)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let av = self.value(a);
        let out = av.data().iter().map(|&x| f(x)).collect();
        let t = Tensor::raw(av.shape().to_vec(), out);
        let needs = self.needs(a);
        self.push(op, t, needs)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.require_positive("log", a)?;
        Ok(self.unary(a, f64::ln, Op::Log(a)))
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        self.require_positive("sqrt", a)?;
        Ok(self.unary(a, f64::sqrt, Op::Sqrt(a)))
    }

    fn require_positive(&self, op: &'static str, a: Var) -> Result<()> {
        if let Some(bad) = self.value(a).data().iter().find(|v| !(**v > 0.0)) {
            return Err(TensorError::Domain {
                op,
                detail: format!("argument must be positive, found {bad}"),
            });
        }
        Ok(())
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn leaky_relu(&mut self, a: Var) -> Var {
        self.unary(
            a,
            |x| if x > 0.0 { x } else { LEAKY_SLOPE * x },
            Op::LeakyRelu(a),
        )
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| c * x, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x + c, Op::AddScalar(a))
    }

    /// `max(a, floor)`; the gradient is zero where the floor is active.
    pub fn clamp_min(&mut self, a: Var, floor: f64) -> Var {
        self.unary(a, |x| x.max(floor), Op::ClampMin(a, floor))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let needs = self.needs(a);
        self.push(Op::Sum(a), Tensor::scalar(s), needs)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let s = av.data().iter().sum::<f64>() / av.len() as f64;
        let needs = self.needs(a);
        self.push(Op::Mean(a), Tensor::scalar(s), needs)
    }

    /// Column-wise concatenation of matrices with equal row counts.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or(TensorError::InvalidArgument {
            op: "concat",
            detail: "no inputs".into(),
        })?;
        let rows = self.value(*first).require_matrix("concat")?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let (r, c) = self.value(*p).require_matrix("concat")?;
            if r != rows {
                return Err(mismatch("concat", self.value(*first), self.value(*p)));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for p in parts {
                out.extend_from_slice(self.value(*p).row(i));
            }
        }
        let needs = parts.iter().any(|p| self.needs(*p));
        Ok(self.push(
            Op::Concat(parts.to_vec()),
            Tensor::raw(vec![rows, total], out),
            needs,
        ))
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let av = self.value(a);
        let (rows, cols) = av.require_matrix("slice")?;
        if start >= end || end > cols {
            return Err(TensorError::InvalidArgument {
                op: "slice",
                detail: format!("range {start}..{end} out of bounds for {cols} columns"),
            });
        }
        let mut out = Vec::with_capacity(rows * (end - start));
        for i in 0..rows {
            out.extend_from_slice(&av.row(i)[start..end]);
        }
        let needs = self.needs(a);
        Ok(self.push(
            Op::SliceCols(a, start, end),
            Tensor::raw(vec![rows, end - start], out),
            needs,
        ))
    }

    /// `out[:, j] = a[:, perm[j]]`.
    pub fn permute_columns(&mut self, a: Var, perm: &[usize]) -> Result<Var> {
        let av = self.value(a);
        let (rows, cols) = av.require_matrix("permute_columns")?;
        let mut seen = vec![false; cols];
        if perm.len() != cols
            || perm
                .iter()
                .any(|&p| p >= cols || std::mem::replace(&mut seen[p], true))
        {
            return Err(TensorError::InvalidArgument {
                op: "permute_columns",
                detail: format!("{perm:?} is not a permutation of {cols} columns"),
            });
        }
        let mut out = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            let r = av.row(i);
            out.extend(perm.iter().map(|&p| r[p]));
        }
        let needs = self.needs(a);
        Ok(self.push(
            Op::PermuteColumns(a, perm.to_vec()),
            Tensor::raw(vec![rows, cols], out),
            needs,
        ))
    }

    /// `out[i, j] = |a_i - b_j|^2` for row sets `a[n,d]`, `b[m,d]`.
    pub fn pairwise_sq_dists(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (n, d) = av.require_matrix("pairwise_sq_dists")?;
        let (m, d2) = bv.require_matrix("pairwise_sq_dists")?;
        if d != d2 {
            return Err(mismatch("pairwise_sq_dists", av, bv));
        }
        let out = pairwise_sq_dists_raw(av.data(), bv.data(), d);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(
            Op::PairwiseSqDists(a, b),
            Tensor::raw(vec![n, m], out),
            needs,
        ))
    }

    /// Row minima as a `[rows, 1]` column.
    pub fn min_over_rows(&mut self, a: Var) -> Result<Var> {
        self.kth_smallest_over_rows(a, 1)
    }

    /// The `k`-th smallest entry (1-based) of every row, as a `[rows, 1]`
    /// column. Ties go to the lowest column index.
    pub fn kth_smallest_over_rows(&mut self, a: Var, k: usize) -> Result<Var> {
        let av = self.value(a);
        let (rows, cols) = av.require_matrix("kth_smallest_over_rows")?;
        if k == 0 || k > cols {
            return Err(TensorError::InvalidArgument {
                op: "kth_smallest_over_rows",
                detail: format!("k = {k} with {cols} columns"),
            });
        }
        let picks: Vec<usize> = (0..rows)
            .map(|i| kth_smallest_index(av.row(i), k))
            .collect();
        let out = picks
            .iter()
            .enumerate()
            .map(|(i, &j)| av.get(i, j))
            .collect();
        let needs = self.needs(a);
        Ok(self.push(Op::Select(a, picks), Tensor::raw(vec![rows, 1], out), needs))
    }

    /// Reverse sweep from a scalar `loss`.
    ///
    /// Every node reachable from `loss` gets a gradient of its own shape, and
    /// every [`Graph::param`] leaf gets one even if unreachable (zeros).
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(TensorError::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::raw(lv.shape().to_vec(), vec![1.0]));

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[id] = Some(g);
        }

        for (i, node) in self.nodes.iter().enumerate() {
            if node.needs_grad && matches!(node.op, Op::Leaf) && grads[i].is_none() {
                grads[i] = Some(Tensor::zeros(node.value.shape()));
            }
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let gd = g.data();
        let out = &node.value;
        let shape_of = |v: Var| self.value(v).shape().to_vec();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k) = (av.rows(), av.cols());
                let n = bv.cols();
                if self.needs(*a) {
                    let ga = matmul_bt_raw(gd, bv.data(), m, n, k);
                    accumulate(grads, *a, Tensor::raw(vec![m, k], ga));
                }
                if self.needs(*b) {
                    let gb = matmul_at_raw(av.data(), gd, m, k, n);
                    accumulate(grads, *b, Tensor::raw(vec![k, n], gb));
                }
            }
            Op::Add(a, b, mode) | Op::Sub(a, b, mode) => {
                let sign = if matches!(node.op, Op::Add(..)) {
                    1.0
                } else {
                    -1.0
                };
                if self.needs(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if self.needs(*b) {
                    let gb = gd.iter().map(|v| sign * v).collect();
                    accumulate(grads, *b, reduce_to(*mode, gb, out.cols(), &shape_of(*b)));
                }
            }
            Op::Mul(a, b, mode) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let cols = out.cols();
                if self.needs(*a) {
                    let ga = gd
                        .iter()
                        .enumerate()
                        .map(|(i, gi)| gi * bv[rhs_index(*mode, i, cols)])
                        .collect();
                    accumulate(grads, *a, Tensor::raw(shape_of(*a), ga));
                }
                if self.needs(*b) {
                    let gb = gd.iter().zip(av).map(|(gi, x)| gi * x).collect();
                    accumulate(grads, *b, reduce_to(*mode, gb, cols, &shape_of(*b)));
                }
            }
            Op::Div(a, b, mode) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let cols = out.cols();
                if self.needs(*a) {
                    let ga = gd
                        .iter()
                        .enumerate()
                        .map(|(i, gi)| gi / bv[rhs_index(*mode, i, cols)])
                        .collect();
                    accumulate(grads, *a, Tensor::raw(shape_of(*a), ga));
                }
                if self.needs(*b) {
                    let gb = gd
                        .iter()
                        .enumerate()
                        .map(|(i, gi)| {
                            let y = bv[rhs_index(*mode, i, cols)];
                            -gi * av[i] / (y * y)
                        })
                        .collect();
                    accumulate(grads, *b, reduce_to(*mode, gb, cols, &shape_of(*b)));
                }
            }
            Op::Exp(a) => self.elementwise_back(*a, out, g, grads, |_, y| y),
            Op::Log(a) => self.elementwise_back(*a, out, g, grads, |x, _| 1.0 / x),
            Op::Tanh(a) => self.elementwise_back(*a, out, g, grads, |_, y| 1.0 - y * y),
            Op::LeakyRelu(a) => {
                self.elementwise_back(
                    *a,
                    out,
                    g,
                    grads,
                    |x, _| {
                        if x > 0.0 {
                            1.0
                        } else {
                            LEAKY_SLOPE
                        }
                    },
                )
            }
            Op::Square(a) => self.elementwise_back(*a, out, g, grads, |x, _| 2.0 * x),
            Op::Sqrt(a) => self.elementwise_back(*a, out, g, grads, |_, y| 0.5 / y),
            Op::Scale(a, c) => self.elementwise_back(*a, out, g, grads, |_, _| *c),
            Op::AddScalar(a) => self.elementwise_back(*a, out, g, grads, |_, _| 1.0),
            Op::ClampMin(a, floor) => {
                self.elementwise_back(*a, out, g, grads, |x, _| if x > *floor { 1.0 } else { 0.0 })
            }
            Op::Sum(a) | Op::Mean(a) => {
                let shape = shape_of(*a);
                let n: usize = shape.iter().product();
                let scale = if matches!(node.op, Op::Mean(_)) {
                    gd[0] / n as f64
                } else {
                    gd[0]
                };
                accumulate(grads, *a, Tensor::raw(shape, vec![scale; n]));
            }
            Op::Concat(parts) => {
                let rows = out.rows();
                let total = out.cols();
                let mut offset = 0;
                for p in parts {
                    let w = self.value(*p).cols();
                    if self.needs(*p) {
                        let mut gp = Vec::with_capacity(rows * w);
                        for i in 0..rows {
                            gp.extend_from_slice(&gd[i * total + offset..i * total + offset + w]);
                        }
                        accumulate(grads, *p, Tensor::raw(vec![rows, w], gp));
                    }
                    offset += w;
                }
            }
            Op::SliceCols(a, start, end) => {
                let (rows, cols) = (self.value(*a).rows(), self.value(*a).cols());
                let w = end - start;
                let mut ga = vec![0.0; rows * cols];
                for i in 0..rows {
                    ga[i * cols + start..i * cols + end].copy_from_slice(&gd[i * w..(i + 1) * w]);
                }
                accumulate(grads, *a, Tensor::raw(vec![rows, cols], ga));
            }
            Op::PermuteColumns(a, perm) => {
                let cols = perm.len();
                let mut ga = vec![0.0; gd.len()];
                for (i, row) in gd.chunks(cols).enumerate() {
                    for (j, &p) in perm.iter().enumerate() {
                        ga[i * cols + p] += row[j];
                    }
                }
                accumulate(grads, *a, Tensor::raw(shape_of(*a), ga));
            }
            Op::PairwiseSqDists(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let d = av.cols();
                let (n, m) = (av.rows(), bv.rows());
                let mut ga = vec![0.0; n * d];
                let mut gb = vec![0.0; m * d];
                for i in 0..n {
                    let ai = av.row(i);
                    for j in 0..m {
                        let gij = gd[i * m + j];
                        if gij == 0.0 {
                            continue;
                        }
                        let bj = bv.row(j);
                        for c in 0..d {
                            let diff = 2.0 * gij * (ai[c] - bj[c]);
                            ga[i * d + c] += diff;
                            gb[j * d + c] -= diff;
                        }
                    }
                }
                if self.needs(*a) {
                    accumulate(grads, *a, Tensor::raw(vec![n, d], ga));
                }
                if self.needs(*b) {
                    accumulate(grads, *b, Tensor::raw(vec![m, d], gb));
                }
            }
            Op::Select(a, picks) => {
                let cols = self.value(*a).cols();
                let mut ga = vec![0.0; picks.len() * cols];
                for (i, &j) in picks.iter().enumerate() {
                    ga[i * cols + j] = gd[i];
                }
                accumulate(grads, *a, Tensor::raw(shape_of(*a), ga));
            }
        }
    }

    /// `d(in) = g * f(x, y)` for an elementwise op with input `x`, output `y`.
    fn elementwise_back(
        &self,
        a: Var,
        out: &Tensor,
        g: &Tensor,
        grads: &mut [Option<Tensor>],
        f: impl Fn(f64, f64) -> f64,
    ) {
        let x = self.value(a);
        let ga = x
            .data()
            .iter()
            .zip(out.data())
            .zip(g.data())
            .map(|((&xi, &yi), &gi)| gi * f(xi, yi))
            .collect();
        accumulate(grads, a, Tensor::raw(x.shape().to_vec(), ga));
    }
}
