//! Define-by-run computation record.
//!
//! Every primitive is evaluated as soon as it is recorded, so building the
//! record *is* the forward pass. [`Graph::backward`] replays the nodes in
//! reverse and accumulates adjoints into the trainable parameter leaves.

use std::collections::{BTreeMap, HashMap};
use std::rc::Rc;

use super::linalg::{col2im, gemm, im2col, Window};
use super::{DiffError, ParamSet, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Row-compressed sparse square matrix, applied block-wise by [`Graph::spmm`].
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseMatrix {
    /// Builds from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut rows: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); n];
        for &(i, j, v) in triplets {
            assert!(i < n && j < n, "triplet ({i},{j}) out of range for n={n}");
            *rows[i].entry(j).or_insert(0.0) += v;
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for row in rows {
            for (j, v) in row {
                cols.push(j);
                vals.push(v);
            }
            row_ptr.push(cols.len());
        }
        SparseMatrix { n, row_ptr, cols, vals }
    }

    pub fn identity(n: usize) -> Self {
        let t: Vec<_> = (0..n).map(|i| (i, i, 1.0)).collect();
        Self::from_triplets(n, &t)
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|&(c, _)| c == j).map_or(0.0, |(_, v)| v)
    }

    /// Permutes rows and columns: entry `(i, j)` moves to `(perm[i], perm[j])`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut t = Vec::with_capacity(self.vals.len());
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                t.push((perm[i], perm[j], v));
            }
        }
        Self::from_triplets(self.n, &t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unary {
    Neg,
    Tanh,
    Sigmoid,
    Relu,
    Softplus,
    Sqrt,
    Square,
    Abs,
    Exp,
}

impl Unary {
    fn apply(self, x: f64) -> f64 {
        match self {
            Unary::Neg => -x,
            Unary::Tanh => x.tanh(),
            Unary::Sigmoid => sigmoid(x),
            Unary::Relu => x.max(0.0),
            Unary::Softplus => softplus(x),
            Unary::Sqrt => x.sqrt(),
            Unary::Square => x * x,
            Unary::Abs => x.abs(),
            Unary::Exp => x.exp(),
        }
    }

    /// Derivative expressed through the input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Unary::Neg => -1.0,
            Unary::Tanh => 1.0 - y * y,
            Unary::Sigmoid => y * (1.0 - y),
            Unary::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Unary::Softplus => sigmoid(x),
            Unary::Sqrt => 0.5 / y,
            Unary::Square => 2.0 * x,
            Unary::Abs => sign(x),
            Unary::Exp => y,
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.max(0.0) + (-x.abs()).exp().ln_1p()
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

const BCE_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone)]
enum Op {
    Param,
    Input,
    Constant,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    MulConst(Var, Rc<Vec<f64>>),
    Scale(Var, f64),
    AddScalar(Var),
    AddRowBias(Var, Var),
    BroadcastRows(Var),
    MatMul(Var, Var),
    Conv2d { x: Var, w: Var, b: Var, stride: usize, pad: usize },
    ConvTranspose2d { x: Var, w: Var, b: Var, stride: usize, pad: usize },
    MaxPool2d { x: Var, argmax: Vec<usize> },
    SpMM { adj: Rc<SparseMatrix>, x: Var },
    Unary(Var, Unary),
    Concat(Vec<Var>),
    Reshape(Var),
    Rows { x: Var, start: usize },
    Cols { x: Var, start: usize },
    SumAll(Var),
    MeanAll(Var),
    BlockMeanRows { x: Var, block: usize },
    GroupMeanRows { x: Var, groups: Rc<Vec<Vec<usize>>> },
    Mse(Var, Var),
    L1(Var, Var),
    Bce { p: Var, target: Rc<Vec<f64>> },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Param => "param",
            Op::Input => "input",
            Op::Constant => "constant",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::MulConst(..) => "mul_const",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::AddRowBias(..) => "add_row_bias",
            Op::BroadcastRows(..) => "broadcast_rows",
            Op::MatMul(..) => "matmul",
            Op::Conv2d { .. } => "conv2d",
            Op::ConvTranspose2d { .. } => "conv_transpose2d",
            Op::MaxPool2d { .. } => "max_pool2d",
            Op::SpMM { .. } => "spmm",
            Op::Unary(_, u) => match u {
                Unary::Neg => "neg",
                Unary::Tanh => "tanh",
                Unary::Sigmoid => "sigmoid",
                Unary::Relu => "relu",
                Unary::Softplus => "softplus",
                Unary::Sqrt => "sqrt",
                Unary::Square => "square",
                Unary::Abs => "abs",
                Unary::Exp => "exp",
            },
            Op::Concat(..) => "concat",
            Op::Reshape(..) => "reshape",
            Op::Rows { .. } => "rows",
            Op::Cols { .. } => "cols",
            Op::SumAll(..) => "sum",
            Op::MeanAll(..) => "mean",
            Op::BlockMeanRows { .. } => "block_mean_rows",
            Op::GroupMeanRows { .. } => "group_mean_rows",
            Op::Mse(..) => "mse",
            Op::L1(..) => "l1",
            Op::Bce { .. } => "bce",
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Parameter leaves bound into a graph, looked up by name.
#[derive(Debug, Clone, Default)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Result<Var, DiffError> {
        self.vars.get(name).copied().ok_or_else(|| DiffError::UnknownParam(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.vars.keys().map(String::as_str)
    }
}

/// Gradients of a scalar with respect to every trainable parameter leaf.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients {
    grads: BTreeMap<String, Tensor>,
}

impl Gradients {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.grads.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.grads.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn insert(&mut self, name: String, grad: Tensor) {
        self.grads.insert(name, grad);
    }

    /// Elementwise `self += other`; names missing from `self` are adopted.
    pub fn accumulate(&mut self, other: &Gradients) {
        for (name, g) in &other.grads {
            match self.grads.get_mut(name) {
                Some(acc) => acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, b)| *a += b),
                None => {
                    self.grads.insert(name.clone(), g.clone());
                }
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.grads.values_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= factor);
        }
    }

    /// Keeps only gradients whose name starts with `prefix`.
    pub fn retain_prefix(&mut self, prefix: &str) {
        self.grads.retain(|k, _| k.starts_with(prefix));
    }

    pub fn global_norm(&self) -> f64 {
        self.grads.values().flat_map(|g| g.data()).map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    param_names: HashMap<String, Var>,
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn requires(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn shape_err(&self, op: &str, detail: String) -> DiffError {
        DiffError::Shape { node: format!("#{} ({op})", self.nodes.len()), detail }
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> Result<Var, DiffError> {
        if !value.is_finite() {
            return Err(DiffError::NonFinite { node: format!("#{} ({})", self.nodes.len(), op.name()) });
        }
        self.nodes.push(Node { op, value, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn input(&mut self, value: Tensor) -> Result<Var, DiffError> {
        self.push(Op::Input, value, false)
    }

    pub fn constant(&mut self, value: Tensor) -> Result<Var, DiffError> {
        self.push(Op::Constant, value, false)
    }

    /// Records every tensor of `params` as a leaf. Trainable leaves receive
    /// gradients from [`Graph::backward`]; frozen ones behave as constants.
    pub fn bind(&mut self, params: &ParamSet, trainable: bool) -> Result<Bound, DiffError> {
        let mut bound = Bound::default();
        for (name, t) in params.iter() {
            if self.param_names.contains_key(name) {
                return Err(DiffError::DuplicateParam(name.to_string()));
            }
            let var = if trainable {
                let v = self.push(Op::Param, t.clone(), true)?;
                self.param_names.insert(name.to_string(), v);
                v
            } else {
                self.push(Op::Constant, t.clone(), false)?
            };
            bound.vars.insert(name.to_string(), var);
        }
        Ok(bound)
    }

    fn binary_same(&mut self, a: Var, b: Var, name: &str) -> Result<(), DiffError> {
        if self.shape(a) != self.shape(b) {
            return Err(self.shape_err(name, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let ta = self.value(a);
        let tb = self.value(b);
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data).expect("shape preserved")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.binary_same(a, b, "add")?;
        let v = self.zip_with(a, b, |x, y| x + y);
        let rg = self.requires(a) || self.requires(b);
        self.push(Op::Add(a, b), v, rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.binary_same(a, b, "sub")?;
        let v = self.zip_with(a, b, |x, y| x - y);
        let rg = self.requires(a) || self.requires(b);
        self.push(Op::Sub(a, b), v, rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.binary_same(a, b, "mul")?;
        let v = self.zip_with(a, b, |x, y| x * y);
        let rg = self.requires(a) || self.requires(b);
        self.push(Op::Mul(a, b), v, rg)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.binary_same(a, b, "div")?;
        let v = self.zip_with(a, b, |x, y| x / y);
        let rg = self.requires(a) || self.requires(b);
        self.push(Op::Div(a, b), v, rg)
    }

    /// Elementwise product with a constant tensor of the same shape.
    pub fn mul_const(&mut self, a: Var, c: &Tensor) -> Result<Var, DiffError> {
        if self.shape(a) != c.shape() {
            return Err(self.shape_err("mul_const", format!("{:?} vs {:?}", self.shape(a), c.shape())));
        }
        let ta = self.value(a);
        let data = ta.data().iter().zip(c.data()).map(|(x, y)| x * y).collect();
        let v = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.requires(a);
        self.push(Op::MulConst(a, Rc::new(c.data().to_vec())), v, rg)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var, DiffError> {
        let ta = self.value(a);
        let v = Tensor::new(ta.shape().to_vec(), ta.data().iter().map(|x| x * factor).collect())?;
        let rg = self.requires(a);
        self.push(Op::Scale(a, factor), v, rg)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var, DiffError> {
        let ta = self.value(a);
        let v = Tensor::new(ta.shape().to_vec(), ta.data().iter().map(|x| x + c).collect())?;
        let rg = self.requires(a);
        self.push(Op::AddScalar(a), v, rg)
    }

    /// `x[m, n] + bias[n]` with the bias broadcast over rows.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var, DiffError> {
        let Some((m, n)) = self.value(x).dims2() else {
            return Err(self.shape_err("add_row_bias", format!("input must be 2D, got {:?}", self.shape(x))));
        };
        if self.value(bias).len() != n {
            return Err(self.shape_err("add_row_bias", format!("bias {:?} for {n} columns", self.shape(bias))));
        }
        let tb = self.value(bias).data();
        let mut data = self.value(x).data().to_vec();
        for r in 0..m {
            data[r * n..(r + 1) * n].iter_mut().zip(tb).for_each(|(d, b)| *d += b);
        }
        let v = Tensor::new(vec![m, n], data)?;
        let rg = self.requires(x) || self.requires(bias);
        self.push(Op::AddRowBias(x, bias), v, rg)
    }

    /// Repeats a `[1, n]` row `m` times.
    pub fn broadcast_rows(&mut self, x: Var, m: usize) -> Result<Var, DiffError> {
        let n = match self.value(x).dims2() {
            Some((1, n)) => n,
            _ => return Err(self.shape_err("broadcast_rows", format!("expected [1, n], got {:?}", self.shape(x)))),
        };
        let row = self.value(x).data();
        let data: Vec<f64> = (0..m).flat_map(|_| row.iter().copied()).collect();
        let v = Tensor::new(vec![m, n], data)?;
        let rg = self.requires(x);
        self.push(Op::BroadcastRows(x), v, rg)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (Some((m, k)), Some((k2, n))) = (self.value(a).dims2(), self.value(b).dims2()) else {
            return Err(self.shape_err("matmul", format!("{:?} x {:?}", self.shape(a), self.shape(b))));
        };
        if k != k2 {
            return Err(self.shape_err("matmul", format!("{:?} x {:?}", self.shape(a), self.shape(b))));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, 1.0, self.value(a).data(), false, self.value(b).data(), false, 0.0, &mut out);
        let v = Tensor::new(vec![m, n], out)?;
        let rg = self.requires(a) || self.requires(b);
        self.push(Op::MatMul(a, b), v, rg)
    }

    fn dims4(&self, v: Var, op: &str) -> Result<[usize; 4], DiffError> {
        match self.shape(v) {
            [a, b, c, d] => Ok([*a, *b, *c, *d]),
            s => Err(self.shape_err(op, format!("expected 4D tensor, got {s:?}"))),
        }
    }

    /// Cross-correlation of `x[B, C, H, W]` with `w[O, C, kh, kw]` plus bias `b[O]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var, DiffError> {
        let [batch, c, h, wd] = self.dims4(x, "conv2d")?;
        let [o, c2, kh, kw] = self.dims4(w, "conv2d")?;
        if c != c2 || self.value(b).len() != o || stride == 0 {
            return Err(self.shape_err(
                "conv2d",
                format!("input {:?}, kernel {:?}, bias {:?}, stride {stride}", self.shape(x), self.shape(w), self.shape(b)),
            ));
        }
        if h + 2 * pad < kh || wd + 2 * pad < kw {
            return Err(self.shape_err("conv2d", format!("kernel {kh}x{kw} larger than padded input {h}x{wd}")));
        }
        let out_h = (h + 2 * pad - kh) / stride + 1;
        let out_w = (wd + 2 * pad - kw) / stride + 1;
        let win = Window { channels: c, h, w: wd, kh, kw, stride, pad, out_h, out_w };
        let mut cols = vec![0.0; win.col_rows() * win.col_cols()];
        let plane_in = c * h * wd;
        let plane_out = o * out_h * out_w;
        let mut out = vec![0.0; batch * plane_out];
        let xd = self.value(x).data();
        let wdat = self.value(w).data();
        let bias = self.value(b).data();
        for bi in 0..batch {
            im2col(&xd[bi * plane_in..(bi + 1) * plane_in], &win, &mut cols);
            let dst = &mut out[bi * plane_out..(bi + 1) * plane_out];
            for (oc, chunk) in dst.chunks_mut(out_h * out_w).enumerate() {
                chunk.fill(bias[oc]);
            }
            gemm(o, win.col_rows(), win.col_cols(), 1.0, wdat, false, &cols, false, 1.0, dst);
        }
        let v = Tensor::new(vec![batch, o, out_h, out_w], out)?;
        let rg = self.requires(x) || self.requires(w) || self.requires(b);
        self.push(Op::Conv2d { x, w, b, stride, pad }, v, rg)
    }

    /// Transposed convolution (adjoint of [`Graph::conv2d`] in its input):
    /// `x[B, C, H, W]`, `w[C, O, kh, kw]`, bias `b[O]`, output
    /// `[B, O, (H-1)*stride - 2*pad + kh + output_pad, ...]`.
    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        pad: usize,
        output_pad: usize,
    ) -> Result<Var, DiffError> {
        let [batch, c, h, wd] = self.dims4(x, "conv_transpose2d")?;
        let [c2, o, kh, kw] = self.dims4(w, "conv_transpose2d")?;
        if c != c2 || self.value(b).len() != o || stride == 0 || output_pad >= stride {
            return Err(self.shape_err(
                "conv_transpose2d",
                format!("input {:?}, kernel {:?}, bias {:?}, stride {stride}", self.shape(x), self.shape(w), self.shape(b)),
            ));
        }
        let full_h = (h - 1) * stride + kh + output_pad;
        let full_w = (wd - 1) * stride + kw + output_pad;
        if full_h <= 2 * pad || full_w <= 2 * pad {
            return Err(self.shape_err("conv_transpose2d", "padding removes the whole output".into()));
        }
        let out_h = full_h - 2 * pad;
        let out_w = full_w - 2 * pad;
        // Window over the output plane, producing the h x w input grid.
        let win = Window { channels: o, h: out_h, w: out_w, kh, kw, stride, pad, out_h: h, out_w: wd };
        let mut cols = vec![0.0; win.col_rows() * win.col_cols()];
        let plane_in = c * h * wd;
        let plane_out = o * out_h * out_w;
        let mut out = vec![0.0; batch * plane_out];
        let xd = self.value(x).data();
        let wdat = self.value(w).data();
        let bias = self.value(b).data();
        for bi in 0..batch {
            gemm(win.col_rows(), c, h * wd, 1.0, wdat, true, &xd[bi * plane_in..(bi + 1) * plane_in], false, 0.0, &mut cols);
            let dst = &mut out[bi * plane_out..(bi + 1) * plane_out];
            for (oc, chunk) in dst.chunks_mut(out_h * out_w).enumerate() {
                chunk.fill(bias[oc]);
            }
            col2im(&cols, &win, dst);
        }
        let v = Tensor::new(vec![batch, o, out_h, out_w], out)?;
        let rg = self.requires(x) || self.requires(w) || self.requires(b);
        self.push(Op::ConvTranspose2d { x, w, b, stride, pad }, v, rg)
    }

    /// Non-overlapping `k x k` max pooling (trailing rows/columns dropped).
    pub fn max_pool2d(&mut self, x: Var, k: usize) -> Result<Var, DiffError> {
        let [batch, c, h, w] = self.dims4(x, "max_pool2d")?;
        if k == 0 || h < k || w < k {
            return Err(self.shape_err("max_pool2d", format!("window {k} on {h}x{w}")));
        }
        let (oh, ow) = (h / k, w / k);
        let xd = self.value(x).data();
        let mut out = Vec::with_capacity(batch * c * oh * ow);
        let mut argmax = Vec::with_capacity(batch * c * oh * ow);
        for plane in 0..batch * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = usize::MAX;
                    let mut best_v = f64::NEG_INFINITY;
                    for dy in 0..k {
                        for dx in 0..k {
                            let idx = base + (oy * k + dy) * w + ox * k + dx;
                            if xd[idx] > best_v {
                                best_v = xd[idx];
                                best = idx;
                            }
                        }
                    }
                    out.push(best_v);
                    argmax.push(best);
                }
            }
        }
        let v = Tensor::new(vec![batch, c, oh, ow], out)?;
        let rg = self.requires(x);
        self.push(Op::MaxPool2d { x, argmax }, v, rg)
    }

    /// Block-diagonal sparse product: `x` holds `B` stacked `[n, F]` blocks
    /// and each block is left-multiplied by `adj`.
    pub fn spmm(&mut self, adj: &Rc<SparseMatrix>, x: Var) -> Result<Var, DiffError> {
        let n = adj.size();
        let Some((rows, f)) = self.value(x).dims2() else {
            return Err(self.shape_err("spmm", format!("input must be 2D, got {:?}", self.shape(x))));
        };
        if n == 0 || rows % n != 0 {
            return Err(self.shape_err("spmm", format!("{rows} feature rows for a {n}-vertex graph")));
        }
        let xd = self.value(x).data();
        let mut out = vec![0.0; rows * f];
        for blk in 0..rows / n {
            let off = blk * n;
            for i in 0..n {
                let dst = &mut out[(off + i) * f..(off + i + 1) * f];
                for (j, a) in adj.row(i) {
                    let src = &xd[(off + j) * f..(off + j + 1) * f];
                    dst.iter_mut().zip(src).for_each(|(d, s)| *d += a * s);
                }
            }
        }
        let v = Tensor::new(vec![rows, f], out)?;
        let rg = self.requires(x);
        self.push(Op::SpMM { adj: Rc::clone(adj), x }, v, rg)
    }

    pub fn unary(&mut self, x: Var, kind: Unary) -> Result<Var, DiffError> {
        let tx = self.value(x);
        let v = Tensor::new(tx.shape().to_vec(), tx.data().iter().map(|&a| kind.apply(a)).collect())?;
        let rg = self.requires(x);
        self.push(Op::Unary(x, kind), v, rg)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var, DiffError> {
        self.unary(x, Unary::Tanh)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var, DiffError> {
        self.unary(x, Unary::Sigmoid)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, DiffError> {
        self.unary(x, Unary::Relu)
    }

    pub fn softplus(&mut self, x: Var) -> Result<Var, DiffError> {
        self.unary(x, Unary::Softplus)
    }

    pub fn square(&mut self, x: Var) -> Result<Var, DiffError> {
        self.unary(x, Unary::Square)
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var, DiffError> {
        self.unary(x, Unary::Sqrt)
    }

    pub fn neg(&mut self, x: Var) -> Result<Var, DiffError> {
        self.unary(x, Unary::Neg)
    }

    /// Concatenates 2D tensors with equal row counts along columns.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, DiffError> {
        if parts.is_empty() {
            return Err(self.shape_err("concat", "no inputs".into()));
        }
        let mut widths = Vec::with_capacity(parts.len());
        let mut rows = None;
        for &p in parts {
            let Some((r, c)) = self.value(p).dims2() else {
                return Err(self.shape_err("concat", format!("inputs must be 2D, got {:?}", self.shape(p))));
            };
            if *rows.get_or_insert(r) != r {
                return Err(self.shape_err("concat", format!("row counts differ: {r} vs {}", rows.unwrap())));
            }
            widths.push(c);
        }
        let rows = rows.unwrap();
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &c) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[r * c..(r + 1) * c]);
            }
        }
        let v = Tensor::new(vec![rows, total], data)?;
        let rg = parts.iter().any(|&p| self.requires(p));
        self.push(Op::Concat(parts.to_vec()), v, rg)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, DiffError> {
        let v = self
            .value(x)
            .clone()
            .reshape(shape)
            .map_err(|e| self.shape_err("reshape", e.to_string()))?;
        let rg = self.requires(x);
        self.push(Op::Reshape(x), v, rg)
    }

    /// Rows `start..start+len` of a 2D tensor.
    pub fn rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var, DiffError> {
        let Some((m, n)) = self.value(x).dims2() else {
            return Err(self.shape_err("rows", format!("input must be 2D, got {:?}", self.shape(x))));
        };
        if len == 0 || start + len > m {
            return Err(self.shape_err("rows", format!("rows {start}..{} of {m}", start + len)));
        }
        let data = self.value(x).data()[start * n..(start + len) * n].to_vec();
        let v = Tensor::new(vec![len, n], data)?;
        let rg = self.requires(x);
        self.push(Op::Rows { x, start }, v, rg)
    }

    /// Columns `start..start+len` of a 2D tensor.
    pub fn cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var, DiffError> {
        let Some((m, n)) = self.value(x).dims2() else {
            return Err(self.shape_err("cols", format!("input must be 2D, got {:?}", self.shape(x))));
        };
        if len == 0 || start + len > n {
            return Err(self.shape_err("cols", format!("cols {start}..{} of {n}", start + len)));
        }
        let xd = self.value(x).data();
        let data: Vec<f64> = (0..m).flat_map(|r| xd[r * n + start..r * n + start + len].iter().copied()).collect();
        let v = Tensor::new(vec![m, len], data)?;
        let rg = self.requires(x);
        self.push(Op::Cols { x, start }, v, rg)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, DiffError> {
        let s = self.value(x).data().iter().sum();
        let rg = self.requires(x);
        self.push(Op::SumAll(x), Tensor::scalar(s), rg)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var, DiffError> {
        let t = self.value(x);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        let rg = self.requires(x);
        self.push(Op::MeanAll(x), Tensor::scalar(s), rg)
    }

    /// Averages each consecutive block of `block` rows: `[B*block, F] -> [B, F]`.
    pub fn block_mean_rows(&mut self, x: Var, block: usize) -> Result<Var, DiffError> {
        let Some((m, f)) = self.value(x).dims2() else {
            return Err(self.shape_err("block_mean_rows", format!("input must be 2D, got {:?}", self.shape(x))));
        };
        if block == 0 || m % block != 0 {
            return Err(self.shape_err("block_mean_rows", format!("{m} rows in blocks of {block}")));
        }
        let xd = self.value(x).data();
        let nb = m / block;
        let mut out = vec![0.0; nb * f];
        for r in 0..m {
            let dst = &mut out[(r / block) * f..(r / block + 1) * f];
            dst.iter_mut().zip(&xd[r * f..(r + 1) * f]).for_each(|(d, s)| *d += s);
        }
        out.iter_mut().for_each(|v| *v /= block as f64);
        let v = Tensor::new(vec![nb, f], out)?;
        let rg = self.requires(x);
        self.push(Op::BlockMeanRows { x, block }, v, rg)
    }

    /// Row `k` of the result is the mean of the rows of `x` listed in
    /// `groups[k]`: `[m, F] -> [groups.len(), F]`.
    pub fn group_mean_rows(&mut self, x: Var, groups: &Rc<Vec<Vec<usize>>>) -> Result<Var, DiffError> {
        let Some((m, f)) = self.value(x).dims2() else {
            return Err(self.shape_err("group_mean_rows", format!("input must be 2D, got {:?}", self.shape(x))));
        };
        if let Some(bad) = groups.iter().find(|grp| grp.is_empty() || grp.iter().any(|&r| r >= m)) {
            return Err(self.shape_err("group_mean_rows", format!("group {bad:?} is empty or outside {m} rows")));
        }
        let xd = self.value(x).data();
        let mut out = vec![0.0; groups.len() * f];
        for (k, grp) in groups.iter().enumerate() {
            let dst = &mut out[k * f..(k + 1) * f];
            for &r in grp {
                dst.iter_mut().zip(&xd[r * f..(r + 1) * f]).for_each(|(d, s)| *d += s);
            }
            let inv = 1.0 / grp.len() as f64;
            dst.iter_mut().for_each(|v| *v *= inv);
        }
        let v = Tensor::new(vec![groups.len(), f], out)?;
        let rg = self.requires(x);
        self.push(Op::GroupMeanRows { x, groups: Rc::clone(groups) }, v, rg)
    }

    /// Mean squared error over all elements.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.binary_same(a, b, "mse")?;
        let n = self.value(a).len() as f64;
        let s: f64 = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| (x - y) * (x - y)).sum();
        let rg = self.requires(a) || self.requires(b);
        self.push(Op::Mse(a, b), Tensor::scalar(s / n), rg)
    }

    /// Mean absolute difference over all elements.
    pub fn l1(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.binary_same(a, b, "l1")?;
        let n = self.value(a).len() as f64;
        let s: f64 = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| (x - y).abs()).sum();
        let rg = self.requires(a) || self.requires(b);
        self.push(Op::L1(a, b), Tensor::scalar(s / n), rg)
    }

    /// Mean binary cross-entropy of probabilities `p` against fixed targets.
    pub fn bce(&mut self, p: Var, target: &[f64]) -> Result<Var, DiffError> {
        if self.value(p).len() != target.len() {
            return Err(self.shape_err("bce", format!("{} probabilities, {} targets", self.value(p).len(), target.len())));
        }
        let n = target.len() as f64;
        let s: f64 = self
            .value(p)
            .data()
            .iter()
            .zip(target)
            .map(|(&q, &t)| {
                let q = q.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
                -(t * q.ln() + (1.0 - t) * (1.0 - q).ln())
            })
            .sum();
        let rg = self.requires(p);
        self.push(Op::Bce { p, target: Rc::new(target.to_vec()) }, Tensor::scalar(s / n), rg)
    }

    /// Reverse sweep from a scalar. Returns a gradient for every trainable
    /// leaf bound into this graph, zero-filled where the loss does not
    /// depend on it.
    pub fn backward(&self, loss: Var) -> Result<Gradients, DiffError> {
        if self.value(loss).len() != 1 {
            return Err(DiffError::NotScalar(self.value(loss).shape().to_vec()));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if let Op::Param = node.op {
                adj[idx] = Some(g);
                continue;
            }
            self.propagate(idx, &g, &mut adj);
        }
        let mut grads = Gradients::default();
        for (name, &var) in &self.param_names {
            let shape = self.value(var).shape();
            let t = match adj.get(var.0).and_then(|a| a.clone()) {
                Some(data) => Tensor::new(shape.to_vec(), data)?,
                None => Tensor::zeros(shape),
            };
            grads.insert(name.clone(), t);
        }
        Ok(grads)
    }

    fn propagate(&self, idx: usize, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let y = node.value.data();
        match &node.op {
            Op::Param | Op::Input | Op::Constant => {}
            Op::Add(a, b) => {
                self.acc(adj, *a, |d| add_into(d, g));
                self.acc(adj, *b, |d| add_into(d, g));
            }
            Op::Sub(a, b) => {
                self.acc(adj, *a, |d| add_into(d, g));
                self.acc(adj, *b, |d| d.iter_mut().zip(g).for_each(|(d, g)| *d -= g));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                self.acc(adj, *a, |d| zip3(d, g, vb, |g, o| g * o));
                self.acc(adj, *b, |d| zip3(d, g, va, |g, o| g * o));
            }
            Op::Div(a, b) => {
                let vb = self.value(*b).data();
                self.acc(adj, *a, |d| zip3(d, g, vb, |g, o| g / o));
                // d(a/b)/db = -y/b
                self.acc(adj, *b, |d| {
                    for ((d, g), (y, b)) in d.iter_mut().zip(g).zip(y.iter().zip(vb)) {
                        *d -= g * y / b;
                    }
                });
            }
            Op::MulConst(a, c) => self.acc(adj, *a, |d| zip3(d, g, c, |g, o| g * o)),
            Op::Scale(a, f) => self.acc(adj, *a, |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g * f)),
            Op::AddScalar(a) | Op::Reshape(a) => self.acc(adj, *a, |d| add_into(d, g)),
            Op::AddRowBias(x, b) => {
                self.acc(adj, *x, |d| add_into(d, g));
                let n = self.value(*b).len();
                self.acc(adj, *b, |d| {
                    for row in g.chunks(n) {
                        add_into(d, row);
                    }
                });
            }
            Op::BroadcastRows(x) => {
                let n = self.value(*x).len();
                self.acc(adj, *x, |d| {
                    for row in g.chunks(n) {
                        add_into(d, row);
                    }
                });
            }
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).dims2().unwrap();
                let n = self.value(*b).len() / k;
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                // dA = G B^T, dB = A^T G
                self.acc(adj, *a, |d| gemm(m, n, k, 1.0, g, false, vb, true, 1.0, d));
                self.acc(adj, *b, |d| gemm(k, m, n, 1.0, va, true, g, false, 1.0, d));
            }
            Op::Conv2d { x, w, b, stride, pad } => self.conv2d_backward(adj, g, *x, *w, *b, *stride, *pad, node.value.shape()),
            Op::ConvTranspose2d { x, w, b, stride, pad } => {
                self.conv_t_backward(adj, g, *x, *w, *b, *stride, *pad, node.value.shape())
            }
            Op::MaxPool2d { x, argmax } => self.acc(adj, *x, |d| {
                for (&i, gv) in argmax.iter().zip(g) {
                    d[i] += gv;
                }
            }),
            Op::SpMM { adj: a, x } => {
                let n = a.size();
                let f = node.value.shape()[1];
                let rows = node.value.shape()[0];
                self.acc(adj, *x, |d| {
                    for blk in 0..rows / n {
                        let off = blk * n;
                        for i in 0..n {
                            let src = &g[(off + i) * f..(off + i + 1) * f];
                            for (j, av) in a.row(i) {
                                let dst = &mut d[(off + j) * f..(off + j + 1) * f];
                                dst.iter_mut().zip(src).for_each(|(d, s)| *d += av * s);
                            }
                        }
                    }
                });
            }
            Op::Unary(x, kind) => {
                let vx = self.value(*x).data();
                self.acc(adj, *x, |d| {
                    for ((d, g), (xv, yv)) in d.iter_mut().zip(g).zip(vx.iter().zip(y)) {
                        *d += g * kind.derivative(*xv, *yv);
                    }
                });
            }
            Op::Concat(parts) => {
                let total = node.value.shape()[1];
                let rows = node.value.shape()[0];
                let mut off = 0;
                for &p in parts {
                    let c = self.value(p).shape()[1];
                    self.acc(adj, p, |d| {
                        for r in 0..rows {
                            add_into(&mut d[r * c..(r + 1) * c], &g[r * total + off..r * total + off + c]);
                        }
                    });
                    off += c;
                }
            }
            Op::Rows { x, start } => {
                let n = node.value.shape()[1];
                self.acc(adj, *x, |d| add_into(&mut d[start * n..start * n + g.len()], g));
            }
            Op::Cols { x, start } => {
                let (m, len) = node.value.dims2().unwrap();
                let n = self.value(*x).shape()[1];
                self.acc(adj, *x, |d| {
                    for r in 0..m {
                        add_into(&mut d[r * n + start..r * n + start + len], &g[r * len..(r + 1) * len]);
                    }
                });
            }
            Op::SumAll(x) => self.acc(adj, *x, |d| d.iter_mut().for_each(|d| *d += g[0])),
            Op::MeanAll(x) => {
                let n = self.value(*x).len() as f64;
                self.acc(adj, *x, |d| d.iter_mut().for_each(|d| *d += g[0] / n));
            }
            Op::BlockMeanRows { x, block } => {
                let f = node.value.shape()[1];
                let inv = 1.0 / *block as f64;
                self.acc(adj, *x, |d| {
                    for (r, row) in d.chunks_mut(f).enumerate() {
                        let src = &g[(r / block) * f..(r / block + 1) * f];
                        row.iter_mut().zip(src).for_each(|(d, s)| *d += s * inv);
                    }
                });
            }
            Op::GroupMeanRows { x, groups } => {
                let f = node.value.shape()[1];
                self.acc(adj, *x, |d| {
                    for (k, grp) in groups.iter().enumerate() {
                        let inv = 1.0 / grp.len() as f64;
                        let src = &g[k * f..(k + 1) * f];
                        for &r in grp {
                            d[r * f..(r + 1) * f].iter_mut().zip(src).for_each(|(d, s)| *d += s * inv);
                        }
                    }
                });
            }
            Op::Mse(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                let s = 2.0 * g[0] / va.len() as f64;
                self.acc(adj, *a, |d| {
                    for (d, (x, y)) in d.iter_mut().zip(va.iter().zip(vb)) {
                        *d += s * (x - y);
                    }
                });
                self.acc(adj, *b, |d| {
                    for (d, (x, y)) in d.iter_mut().zip(va.iter().zip(vb)) {
                        *d -= s * (x - y);
                    }
                });
            }
            Op::L1(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                let s = g[0] / va.len() as f64;
                self.acc(adj, *a, |d| {
                    for (d, (x, y)) in d.iter_mut().zip(va.iter().zip(vb)) {
                        *d += s * sign(x - y);
                    }
                });
                self.acc(adj, *b, |d| {
                    for (d, (x, y)) in d.iter_mut().zip(va.iter().zip(vb)) {
                        *d -= s * sign(x - y);
                    }
                });
            }
            Op::Bce { p, target } => {
                let vp = self.value(*p).data();
                let s = g[0] / vp.len() as f64;
                self.acc(adj, *p, |d| {
                    for (d, (&q, &t)) in d.iter_mut().zip(vp.iter().zip(target.iter())) {
                        if q <= BCE_CLAMP || q >= 1.0 - BCE_CLAMP {
                            continue;
                        }
                        *d += s * (q - t) / (q * (1.0 - q));
                    }
                });
            }
        }
    }

    fn acc(&self, adj: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.requires(v) {
            return;
        }
        let slot = adj[v.0].get_or_insert_with(|| vec![0.0; self.value(v).len()]);
        f(slot);
    }

    #[allow(clippy::too_many_arguments)]
    fn conv2d_backward(
        &self,
        adj: &mut [Option<Vec<f64>>],
        g: &[f64],
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        pad: usize,
        out_shape: &[usize],
    ) {
        let [batch, c, h, wd] = self.dims4(x, "conv2d").unwrap();
        let [o, _, kh, kw] = self.dims4(w, "conv2d").unwrap();
        let (out_h, out_w) = (out_shape[2], out_shape[3]);
        let win = Window { channels: c, h, w: wd, kh, kw, stride, pad, out_h, out_w };
        let (rows, ncols) = (win.col_rows(), win.col_cols());
        let plane_in = c * h * wd;
        let plane_out = o * ncols;
        let xd = self.value(x).data();
        let wdat = self.value(w).data();

        if self.requires(b) {
            self.acc(adj, b, |d| {
                for bi in 0..batch {
                    for (oc, chunk) in g[bi * plane_out..(bi + 1) * plane_out].chunks(ncols).enumerate() {
                        d[oc] += chunk.iter().sum::<f64>();
                    }
                }
            });
        }
        let mut cols = vec![0.0; rows * ncols];
        if self.requires(w) {
            let mut dw = vec![0.0; o * rows];
            for bi in 0..batch {
                im2col(&xd[bi * plane_in..(bi + 1) * plane_in], &win, &mut cols);
                gemm(o, ncols, rows, 1.0, &g[bi * plane_out..(bi + 1) * plane_out], false, &cols, true, 1.0, &mut dw);
            }
            self.acc(adj, w, |d| add_into(d, &dw));
        }
        if self.requires(x) {
            self.acc(adj, x, |d| {
                for bi in 0..batch {
                    gemm(rows, o, ncols, 1.0, wdat, true, &g[bi * plane_out..(bi + 1) * plane_out], false, 0.0, &mut cols);
                    col2im(&cols, &win, &mut d[bi * plane_in..(bi + 1) * plane_in]);
                }
            });
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn conv_t_backward(
        &self,
        adj: &mut [Option<Vec<f64>>],
        g: &[f64],
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        pad: usize,
        out_shape: &[usize],
    ) {
        let [batch, c, h, wd] = self.dims4(x, "conv_transpose2d").unwrap();
        let [_, o, kh, kw] = self.dims4(w, "conv_transpose2d").unwrap();
        let (out_h, out_w) = (out_shape[2], out_shape[3]);
        let win = Window { channels: o, h: out_h, w: out_w, kh, kw, stride, pad, out_h: h, out_w: wd };
        let (rows, ncols) = (win.col_rows(), win.col_cols());
        let plane_in = c * h * wd;
        let plane_out = o * out_h * out_w;
        let xd = self.value(x).data();
        let wdat = self.value(w).data();

        if self.requires(b) {
            self.acc(adj, b, |d| {
                for bi in 0..batch {
                    for (oc, chunk) in g[bi * plane_out..(bi + 1) * plane_out].chunks(out_h * out_w).enumerate() {
                        d[oc] += chunk.iter().sum::<f64>();
                    }
                }
            });
        }
        let mut cols = vec![0.0; rows * ncols];
        let mut dw = if self.requires(w) { Some(vec![0.0; c * rows]) } else { None };
        let mut dx = if self.requires(x) { Some(vec![0.0; batch * plane_in]) } else { None };
        for bi in 0..batch {
            im2col(&g[bi * plane_out..(bi + 1) * plane_out], &win, &mut cols);
            if let Some(dw) = dw.as_mut() {
                gemm(c, ncols, rows, 1.0, &xd[bi * plane_in..(bi + 1) * plane_in], false, &cols, true, 1.0, dw);
            }
            if let Some(dx) = dx.as_mut() {
                gemm(c, rows, ncols, 1.0, wdat, false, &cols, false, 0.0, &mut dx[bi * plane_in..(bi + 1) * plane_in]);
            }
        }
        if let Some(dw) = dw {
            self.acc(adj, w, |d| add_into(d, &dw));
        }
        if let Some(dx) = dx {
            self.acc(adj, x, |d| add_into(d, &dx));
        }
    }
}

fn add_into(d: &mut [f64], g: &[f64]) {
    d.iter_mut().zip(g).for_each(|(d, g)| *d += g);
}

fn zip3(d: &mut [f64], g: &[f64], o: &[f64], f: impl Fn(f64, f64) -> f64) {
    for (d, (g, o)) in d.iter_mut().zip(g.iter().zip(o)) {
        *d += f(*g, *o);
    }
}
