//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation as a node holding its forward value.
//! Parameters are borrowed from a [`ParameterSet`], so building a graph for
//! inference never copies weights. [`Graph::backward`] walks the tape in
//! reverse and returns gradients for every registered parameter.
//!
//! All 2-D operations view a tensor as `[rows(), cols()]`.

use std::borrow::Cow;
use std::collections::HashMap;

use crate::error::{shape_err, Error, Result};
use crate::params::ParameterSet;
use crate::tensor::{axpy, dot, Tensor};

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Min(Var, Var),
    Clamp(Var, f64, f64),
    Sum(Var),
    Mean(Var),
    SumCols(Var),
    LogSoftmax(Var),
    Pick(Var, Vec<usize>),
    SoftmaxCrossEntropy(Var, Vec<usize>),
    SliceRows(Var, usize),
    Reshape(Var),
    Conv2d { input: Var, kernel: Var, stride: usize },
}

struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Graph<'a> {
    nodes: Vec<Node<'a>>,
    params: Vec<(String, Var)>,
    param_index: HashMap<String, Var>,
}

impl<'a> Graph<'a> {
    pub fn new() -> Self {
        Self::default()
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

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value: Cow::Owned(value), op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Constant input; no gradient flows into it.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Input, false)
    }

    /// Borrowed constant input.
    pub fn input_ref(&mut self, value: &'a Tensor) -> Var {
        self.nodes.push(Node { value: Cow::Borrowed(value), op: Op::Input, needs_grad: false });
        Var(self.nodes.len() - 1)
    }

    /// Registers (or returns the already registered) trainable tensor `name`.
    pub fn param(&mut self, name: &str, value: &'a Tensor) -> Var {
        if let Some(&v) = self.param_index.get(name) {
            return v;
        }
        self.nodes.push(Node { value: Cow::Borrowed(value), op: Op::Param, needs_grad: true });
        let v = Var(self.nodes.len() - 1);
        self.params.push((name.to_string(), v));
        self.param_index.insert(name.to_string(), v);
        v
    }

    /// Registers parameter `name` from a set.
    pub fn param_from(&mut self, set: &'a ParameterSet, name: &str) -> Result<Var> {
        let t = set.get(name)?;
        Ok(self.param(name, t))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k, n) = (av.rows(), av.cols(), bv.cols());
        if bv.rows() != k || bv.shape().len() == 1 {
            return Err(shape_err("matmul inner dimension", [k, n], bv.shape()));
        }
        let mut out = vec![0.0; m * n];
        let (ad, bd) = (av.data(), bv.data());
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let x = ad[i * k + p];
                if x != 0.0 {
                    axpy(x, &bd[p * n..(p + 1) * n], orow);
                }
            }
        }
        let g = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), g))
    }

    /// `a · bᵀ` for `a: [m, k]`, `b: [n, k]`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k, n) = (av.rows(), av.cols(), bv.rows());
        if bv.cols() != k {
            return Err(shape_err("matmul_t shared dimension", k, bv.cols()));
        }
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let ar = av.row(i);
            for j in 0..n {
                out[i * n + j] = dot(ar, bv.row(j));
            }
        }
        let g = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMulT(a, b), g))
    }

    fn zip_same(&mut self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.len() != bv.len() {
            return Err(shape_err(what, av.shape(), bv.shape()));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor::new(av.shape().to_vec(), data)?;
        let g = self.needs(a) || self.needs(b);
        Ok(self.push(t, op, g))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn min(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, "min", f64::min, Op::Min(a, b))
    }

    fn row_broadcast(&mut self, a: Var, r: Var, mul: bool) -> Result<Var> {
        let (av, rv) = (self.value(a), self.value(r));
        let n = av.cols();
        if rv.len() != n {
            return Err(shape_err("row broadcast", n, rv.shape()));
        }
        let mut data = av.data().to_vec();
        for row in data.chunks_exact_mut(n) {
            for (x, &y) in row.iter_mut().zip(rv.data()) {
                if mul {
                    *x *= y
                } else {
                    *x += y
                }
            }
        }
        let t = Tensor::new(av.shape().to_vec(), data)?;
        let g = self.needs(a) || self.needs(r);
        let op = if mul { Op::MulRow(a, r) } else { Op::AddRow(a, r) };
        Ok(self.push(t, op, g))
    }

    /// Adds the vector `r` to every row of `a`.
    pub fn add_row(&mut self, a: Var, r: Var) -> Result<Var> {
        self.row_broadcast(a, r, false)
    }

    /// Multiplies every row of `a` elementwise by `r`.
    pub fn mul_row(&mut self, a: Var, r: Var) -> Result<Var> {
        self.row_broadcast(a, r, true)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = self.value(a).map(f);
        let g = self.needs(a);
        self.push(t, op, g)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| c * x, Op::Scale(a, c))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x + c, Op::AddScalar(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Log(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, |x| x.clamp(lo, hi), Op::Clamp(a, lo, hi))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        let g = self.needs(a);
        self.push(Tensor::scalar(s), Op::Sum(a), g)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s = v.sum() / v.len() as f64;
        let g = self.needs(a);
        self.push(Tensor::scalar(s), Op::Mean(a), g)
    }

    /// Row sums: `[m, n] -> [m, 1]`.
    pub fn sum_cols(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        let m = v.rows();
        let data = (0..m).map(|i| v.row(i).iter().sum()).collect();
        let t = Tensor::new(vec![m, 1], data)?;
        let g = self.needs(a);
        Ok(self.push(t, Op::SumCols(a), g))
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let n = v.cols();
        let mut data = v.data().to_vec();
        for row in data.chunks_exact_mut(n) {
            let lse = log_sum_exp(row);
            row.iter_mut().for_each(|x| *x -= lse);
        }
        let t = Tensor::new(v.shape().to_vec(), data).expect("same shape");
        let g = self.needs(a);
        self.push(t, Op::LogSoftmax(a), g)
    }

    /// Selects `a[i, idx[i]]` for every row: `[m, n] -> [m, 1]`.
    pub fn pick(&mut self, a: Var, idx: Vec<usize>) -> Result<Var> {
        let v = self.value(a);
        let (m, n) = (v.rows(), v.cols());
        if idx.len() != m || idx.iter().any(|&j| j >= n) {
            return Err(Error::Shape(format!("pick: {} indices for [{m}, {n}]", idx.len())));
        }
        let data = idx.iter().enumerate().map(|(i, &j)| v.data()[i * n + j]).collect();
        let t = Tensor::new(vec![m, 1], data)?;
        let g = self.needs(a);
        Ok(self.push(t, Op::Pick(a, idx), g))
    }

    /// Mean over rows of the softmax cross-entropy between each row of
    /// `logits` and its integer target class.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: Vec<usize>) -> Result<Var> {
        let v = self.value(logits);
        let (m, n) = (v.rows(), v.cols());
        if targets.len() != m || targets.iter().any(|&t| t >= n) {
            return Err(Error::Shape(format!(
                "cross-entropy: {} targets for logits [{m}, {n}]",
                targets.len()
            )));
        }
        let mut total = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            let row = v.row(i);
            total += log_sum_exp(row) - row[t];
        }
        let g = self.needs(logits);
        Ok(self.push(Tensor::scalar(total / m as f64), Op::SoftmaxCrossEntropy(logits, targets), g))
    }

    /// Rows `start..end` of a 2-D view.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let v = self.value(a);
        let (m, n) = (v.rows(), v.cols());
        if start >= end || end > m {
            return Err(Error::Shape(format!("slice_rows {start}..{end} of {m} rows")));
        }
        let t = Tensor::new(vec![end - start, n], v.data()[start * n..end * n].to_vec())?;
        let g = self.needs(a);
        Ok(self.push(t, Op::SliceRows(a, start), g))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).clone().reshape(shape)?;
        let g = self.needs(a);
        Ok(self.push(t, Op::Reshape(a), g))
    }

    /// Valid (unpadded) 2-D convolution.
    ///
    /// `input: [N, H, W, C]`, `kernel: [KH, KW, C, O]` → `[N, HO, WO, O]`
    /// with `HO = (H - KH) / stride + 1`.
    pub fn conv2d(&mut self, input: Var, kernel: Var, stride: usize) -> Result<Var> {
        let (iv, kv) = (self.value(input), self.value(kernel));
        let geo = ConvGeometry::new(iv.shape(), kv.shape(), stride)?;
        let mut out = vec![0.0; geo.n * geo.ho * geo.wo * geo.o];
        let (id, kd) = (iv.data(), kv.data());
        for b in 0..geo.n {
            for oy in 0..geo.ho {
                for ox in 0..geo.wo {
                    let o0 = geo.out_offset(b, oy, ox);
                    let opix = &mut out[o0..o0 + geo.o];
                    for ky in 0..geo.kh {
                        for kx in 0..geo.kw {
                            let i0 = geo.in_offset(b, oy * stride + ky, ox * stride + kx);
                            for c in 0..geo.c {
                                let x = id[i0 + c];
                                if x != 0.0 {
                                    let k0 = geo.kernel_offset(ky, kx, c);
                                    axpy(x, &kd[k0..k0 + geo.o], opix);
                                }
                            }
                        }
                    }
                }
            }
        }
        let t = Tensor::new(vec![geo.n, geo.ho, geo.wo, geo.o], out)?;
        let g = self.needs(input) || self.needs(kernel);
        Ok(self.push(t, Op::Conv2d { input, kernel, stride }, g))
    }

    /// Reverse pass from the scalar `loss`. Returns a gradient tensor for
    /// every registered parameter; unreached parameters get zeros.
    pub fn backward(&self, loss: Var) -> Result<ParameterSet> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::Invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        if !lv.is_finite() {
            return Err(Error::NonFinite("loss".into()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::filled(lv.shape(), 1.0));

        for i in (0..=loss.0).rev() {
            let Some(dy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            self.propagate(&node.op, &node.value, &dy, &mut grads)?;
            if matches!(node.op, Op::Param) {
                grads[i] = Some(dy);
            }
        }

        let mut out = ParameterSet::default();
        for (name, v) in &self.params {
            let g = grads[..]
                .get(v.0)
                .and_then(|g| g.clone())
                .unwrap_or_else(|| Tensor::zeros(self.value(*v).shape()));
            out.insert(name, g);
        }
        Ok(out)
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Tensor>], v: Var) -> Option<&'g mut Tensor> {
        if !self.needs(v) {
            return None;
        }
        let shape = self.value(v).shape();
        Some(grads[v.0].get_or_insert_with(|| Tensor::zeros(shape)))
    }

    fn propagate(&self, op: &Op, y: &Tensor, dy: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let d = dy.data();
        match op {
            Op::Input | Op::Param => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                if let Some(ga) = self.slot(grads, *a) {
                    let gd = ga.data_mut();
                    for i in 0..m {
                        let drow = &d[i * n..(i + 1) * n];
                        for p in 0..k {
                            gd[i * k + p] += dot(drow, bv.row(p));
                        }
                    }
                }
                if let Some(gb) = self.slot(grads, *b) {
                    let gd = gb.data_mut();
                    let ad = av.data();
                    for i in 0..m {
                        let drow = &d[i * n..(i + 1) * n];
                        for p in 0..k {
                            let x = ad[i * k + p];
                            if x != 0.0 {
                                axpy(x, drow, &mut gd[p * n..(p + 1) * n]);
                            }
                        }
                    }
                }
            }
            Op::MatMulT(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.rows());
                if let Some(ga) = self.slot(grads, *a) {
                    let gd = ga.data_mut();
                    for i in 0..m {
                        for j in 0..n {
                            let g = d[i * n + j];
                            if g != 0.0 {
                                axpy(g, bv.row(j), &mut gd[i * k..(i + 1) * k]);
                            }
                        }
                    }
                }
                if let Some(gb) = self.slot(grads, *b) {
                    let gd = gb.data_mut();
                    for i in 0..m {
                        for j in 0..n {
                            let g = d[i * n + j];
                            if g != 0.0 {
                                axpy(g, av.row(i), &mut gd[j * k..(j + 1) * k]);
                            }
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                if let Some(ga) = self.slot(grads, *a) {
                    ga.add_assign(dy);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    gb.add_assign(dy);
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = self.slot(grads, *a) {
                    ga.add_assign(dy);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    gb.data_mut().iter_mut().zip(d).for_each(|(g, x)| *g -= x);
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if let Some(ga) = self.slot(grads, *a) {
                    for ((g, x), y) in ga.data_mut().iter_mut().zip(d).zip(bv.data()) {
                        *g += x * y;
                    }
                }
                if let Some(gb) = self.slot(grads, *b) {
                    for ((g, x), y) in gb.data_mut().iter_mut().zip(d).zip(av.data()) {
                        *g += x * y;
                    }
                }
            }
            Op::AddRow(a, r) => {
                let n = self.value(*r).len();
                if let Some(ga) = self.slot(grads, *a) {
                    ga.add_assign(dy);
                }
                if let Some(gr) = self.slot(grads, *r) {
                    let gd = gr.data_mut();
                    for row in d.chunks_exact(n) {
                        axpy(1.0, row, gd);
                    }
                }
            }
            Op::MulRow(a, r) => {
                let (av, rv) = (self.value(*a), self.value(*r));
                let n = rv.len();
                if let Some(ga) = self.slot(grads, *a) {
                    for (grow, drow) in ga.data_mut().chunks_exact_mut(n).zip(d.chunks_exact(n)) {
                        for ((g, x), s) in grow.iter_mut().zip(drow).zip(rv.data()) {
                            *g += x * s;
                        }
                    }
                }
                if let Some(gr) = self.slot(grads, *r) {
                    let gd = gr.data_mut();
                    for (arow, drow) in av.data().chunks_exact(n).zip(d.chunks_exact(n)) {
                        for ((g, x), s) in gd.iter_mut().zip(drow).zip(arow) {
                            *g += x * s;
                        }
                    }
                }
            }
            Op::Scale(a, c) => {
                if let Some(ga) = self.slot(grads, *a) {
                    axpy(*c, d, ga.data_mut());
                }
            }
            Op::AddScalar(a) | Op::Reshape(a) => {
                if let Some(ga) = self.slot(grads, *a) {
                    ga.add_assign(dy);
                }
            }
            Op::Tanh(a) => self.pointwise(grads, *a, d, y.data(), |_, y| 1.0 - y * y),
            Op::Sigmoid(a) => self.pointwise(grads, *a, d, y.data(), |_, y| y * (1.0 - y)),
            Op::Exp(a) => self.pointwise(grads, *a, d, y.data(), |_, y| y),
            Op::Log(a) => self.pointwise(grads, *a, d, y.data(), |x, _| 1.0 / x),
            Op::Square(a) => self.pointwise(grads, *a, d, y.data(), |x, _| 2.0 * x),
            Op::Clamp(a, lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                self.pointwise(grads, *a, d, y.data(), |x, _| if x >= lo && x <= hi { 1.0 } else { 0.0 })
            }
            Op::Min(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let pick_a: Vec<bool> = av.data().iter().zip(bv.data()).map(|(x, y)| x <= y).collect();
                if let Some(ga) = self.slot(grads, *a) {
                    for ((g, x), &p) in ga.data_mut().iter_mut().zip(d).zip(&pick_a) {
                        if p {
                            *g += x;
                        }
                    }
                }
                if let Some(gb) = self.slot(grads, *b) {
                    for ((g, x), &p) in gb.data_mut().iter_mut().zip(d).zip(&pick_a) {
                        if !p {
                            *g += x;
                        }
                    }
                }
            }
            Op::Sum(a) => {
                let s = d[0];
                if let Some(ga) = self.slot(grads, *a) {
                    ga.data_mut().iter_mut().for_each(|g| *g += s);
                }
            }
            Op::Mean(a) => {
                let n = self.value(*a).len() as f64;
                let s = d[0] / n;
                if let Some(ga) = self.slot(grads, *a) {
                    ga.data_mut().iter_mut().for_each(|g| *g += s);
                }
            }
            Op::SumCols(a) => {
                let n = self.value(*a).cols();
                if let Some(ga) = self.slot(grads, *a) {
                    for (row, &s) in ga.data_mut().chunks_exact_mut(n).zip(d) {
                        row.iter_mut().for_each(|g| *g += s);
                    }
                }
            }
            Op::LogSoftmax(a) => {
                let n = y.cols();
                if let Some(ga) = self.slot(grads, *a) {
                    for ((grow, drow), yrow) in ga
                        .data_mut()
                        .chunks_exact_mut(n)
                        .zip(d.chunks_exact(n))
                        .zip(y.data().chunks_exact(n))
                    {
                        let total: f64 = drow.iter().sum();
                        for ((g, x), ly) in grow.iter_mut().zip(drow).zip(yrow) {
                            *g += x - ly.exp() * total;
                        }
                    }
                }
            }
            Op::Pick(a, idx) => {
                let n = self.value(*a).cols();
                if let Some(ga) = self.slot(grads, *a) {
                    let gd = ga.data_mut();
                    for (i, &j) in idx.iter().enumerate() {
                        gd[i * n + j] += d[i];
                    }
                }
            }
            Op::SoftmaxCrossEntropy(logits, targets) => {
                let lv = self.value(*logits);
                let (m, n) = (lv.rows(), lv.cols());
                let s = d[0] / m as f64;
                if let Some(ga) = self.slot(grads, *logits) {
                    let gd = ga.data_mut();
                    for (i, &t) in targets.iter().enumerate() {
                        let row = lv.row(i);
                        let lse = log_sum_exp(row);
                        for j in 0..n {
                            let p = (row[j] - lse).exp();
                            let onehot = if j == t { 1.0 } else { 0.0 };
                            gd[i * n + j] += s * (p - onehot);
                        }
                    }
                }
            }
            Op::SliceRows(a, start) => {
                let n = y.cols();
                if let Some(ga) = self.slot(grads, *a) {
                    let off = start * n;
                    axpy(1.0, d, &mut ga.data_mut()[off..off + d.len()]);
                }
            }
            Op::Conv2d { input, kernel, stride } => {
                let (iv, kv) = (self.value(*input), self.value(*kernel));
                let geo = ConvGeometry::new(iv.shape(), kv.shape(), *stride)?;
                if let Some(gk) = self.slot(grads, *kernel) {
                    let gd = gk.data_mut();
                    let id = iv.data();
                    geo.for_each_tap(|o0, i0, k0| {
                        let dpix = &d[o0..o0 + geo.o];
                        for c in 0..geo.c {
                            let x = id[i0 + c];
                            if x != 0.0 {
                                axpy(x, dpix, &mut gd[k0 + c * geo.o..k0 + (c + 1) * geo.o]);
                            }
                        }
                    });
                }
                if let Some(gi) = self.slot(grads, *input) {
                    let gd = gi.data_mut();
                    let kd = kv.data();
                    geo.for_each_tap(|o0, i0, k0| {
                        let dpix = &d[o0..o0 + geo.o];
                        for c in 0..geo.c {
                            let kr = &kd[k0 + c * geo.o..k0 + (c + 1) * geo.o];
                            gd[i0 + c] += dot(kr, dpix);
                        }
                    });
                }
            }
        }
        Ok(())
    }

    fn pointwise(
        &self,
        grads: &mut [Option<Tensor>],
        a: Var,
        d: &[f64],
        y: &[f64],
        deriv: impl Fn(f64, f64) -> f64,
    ) {
        let x = self.value(a).data();
        if let Some(ga) = self.slot(grads, a) {
            for (((g, dy), xi), yi) in ga.data_mut().iter_mut().zip(d).zip(x).zip(y) {
                *g += dy * deriv(*xi, *yi);
            }
        }
    }
}

struct ConvGeometry {
    n: usize,
    h: usize,
    w: usize,
    c: usize,
    kh: usize,
    kw: usize,
    o: usize,
    ho: usize,
    wo: usize,
    stride: usize,
}

impl ConvGeometry {
    fn new(input: &[usize], kernel: &[usize], stride: usize) -> Result<Self> {
        if input.len() != 4 || kernel.len() != 4 {
            return Err(Error::Shape(format!(
                "conv2d wants [N,H,W,C] input and [KH,KW,C,O] kernel, got {input:?} and {kernel:?}"
            )));
        }
        let (n, h, w, c) = (input[0], input[1], input[2], input[3]);
        let (kh, kw, kc, o) = (kernel[0], kernel[1], kernel[2], kernel[3]);
        if kc != c {
            return Err(shape_err("conv2d channels", kc, c));
        }
        if stride == 0 || h < kh || w < kw {
            return Err(Error::Shape(format!(
                "conv2d input {h}x{w} smaller than kernel {kh}x{kw}"
            )));
        }
        let ho = (h - kh) / stride + 1;
        let wo = (w - kw) / stride + 1;
        Ok(Self { n, h, w, c, kh, kw, o, ho, wo, stride })
    }

    fn in_offset(&self, b: usize, y: usize, x: usize) -> usize {
        ((b * self.h + y) * self.w + x) * self.c
    }

    fn out_offset(&self, b: usize, y: usize, x: usize) -> usize {
        ((b * self.ho + y) * self.wo + x) * self.o
    }

    fn kernel_offset(&self, ky: usize, kx: usize, c: usize) -> usize {
        ((ky * self.kw + kx) * self.c + c) * self.o
    }

    /// Calls `f(out_offset, in_offset, kernel_offset)` for every
    /// (output pixel, kernel tap) pair; channel offsets are left to `f`.
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        for b in 0..self.n {
            for oy in 0..self.ho {
                for ox in 0..self.wo {
                    let o0 = self.out_offset(b, oy, ox);
                    for ky in 0..self.kh {
                        for kx in 0..self.kw {
                            let i0 = self.in_offset(b, oy * self.stride + ky, ox * self.stride + kx);
                            f(o0, i0, self.kernel_offset(ky, kx, 0));
                        }
                    }
                }
            }
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient() {
        let w = Tensor::vector(vec![1.0, 2.0]);
        let mut g = Graph::new();
        let wv = g.param("w", &w);
        let sq = g.mul(wv, wv).unwrap();
        let loss = g.sum(sq);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get("w").unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn constant_loss_gives_zero_gradients() {
        let w = Tensor::vector(vec![1.0, 2.0]);
        let mut g = Graph::new();
        let _ = g.param("w", &w);
        let c = g.input(Tensor::scalar(3.0));
        let loss = g.sum(c);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get("w").unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let w = Tensor::vector(vec![1.0, 2.0]);
        let mut g = Graph::new();
        let wv = g.param("w", &w);
        assert!(g.backward(wv).is_err());
    }

    #[test]
    fn cross_entropy_of_hand_logits() {
        let mut g = Graph::new();
        let l = g.input(Tensor::matrix(1, 3, vec![1.0, 0.0, 0.0]).unwrap());
        let ce = g.softmax_cross_entropy(l, vec![0]).unwrap();
        let expected = -(1f64.exp() / (1f64.exp() + 2.0)).ln();
        assert!((g.value(ce).item() - expected).abs() < 1e-12);
        assert!((expected - 0.551_444_7).abs() < 1e-6);
    }

    #[test]
    fn matmul_shapes_checked() {
        let mut g = Graph::new();
        let a = g.input(Tensor::zeros(&[2, 3]));
        let b = g.input(Tensor::zeros(&[2, 3]));
        assert!(g.matmul(a, b).is_err());
        let c = g.matmul_t(a, b).unwrap();
        assert_eq!(g.value(c).shape(), &[2, 2]);
    }

    #[test]
    fn log_sum_exp_is_stable() {
        assert!((log_sum_exp(&[1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-9);
    }
}
