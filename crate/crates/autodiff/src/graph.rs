//! The differentiation tape.
//!
//! Every operation appends a node holding its computed value. Backward passes
//! are themselves written in terms of tape operations, so the gradient of a
//! gradient is obtained by simply calling [`Graph::grad`] again on nodes that
//! were produced by an earlier call with `create_graph = true`.
//!
//! Matrix-shaped operations (`matmul`, `repeat_*`, `group_sum_*`, the column
//! slicing family) require 2-D operands; callers move between views with
//! [`Graph::reshape`], which is free apart from a copy of the values.

use std::rc::Rc;

use crate::error::TensorError;
use crate::tensor::{gemm, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Geometry of a 2-D convolution over NHWC input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    /// "Same" padding in the TensorFlow sense: `out = ceil(in / stride)`, with
    /// any odd padding going to the bottom/right.
    pub fn same(batch: usize, height: usize, width: usize, channels: usize, kernel: usize, stride: usize) -> Self {
        let out_h = height.div_ceil(stride);
        let out_w = width.div_ceil(stride);
        let pad_h = ((out_h - 1) * stride + kernel).saturating_sub(height);
        let pad_w = ((out_w - 1) * stride + kernel).saturating_sub(width);
        Self {
            batch,
            height,
            width,
            channels,
            kernel_h: kernel,
            kernel_w: kernel,
            stride,
            pad_top: pad_h / 2,
            pad_left: pad_w / 2,
            out_h,
            out_w,
        }
    }

    /// No padding; only windows that fit entirely are kept.
    pub fn valid(batch: usize, height: usize, width: usize, channels: usize, kernel: usize, stride: usize) -> Self {
        Self {
            batch,
            height,
            width,
            channels,
            kernel_h: kernel,
            kernel_w: kernel,
            stride,
            pad_top: 0,
            pad_left: 0,
            out_h: (height - kernel) / stride + 1,
            out_w: (width - kernel) / stride + 1,
        }
    }

    pub fn patch_len(&self) -> usize {
        self.kernel_h * self.kernel_w * self.channels
    }

    pub fn input_shape(&self) -> [usize; 4] {
        [self.batch, self.height, self.width, self.channels]
    }

    fn cols_shape(&self) -> [usize; 2] {
        [self.batch * self.out_h * self.out_w, self.patch_len()]
    }

    /// Visits `(column-matrix offset, input offset)` for every in-bounds tap.
    fn for_each_tap(&self, mut visit: impl FnMut(usize, usize)) {
        let pl = self.patch_len();
        let mut row = 0;
        for b in 0..self.batch {
            for oy in 0..self.out_h {
                for ox in 0..self.out_w {
                    let base = row * pl;
                    for ky in 0..self.kernel_h {
                        let iy = (oy * self.stride + ky) as isize - self.pad_top as isize;
                        if iy < 0 || iy >= self.height as isize {
                            continue;
                        }
                        for kx in 0..self.kernel_w {
                            let ix = (ox * self.stride + kx) as isize - self.pad_left as isize;
                            if ix < 0 || ix >= self.width as isize {
                                continue;
                            }
                            let src = ((b * self.height + iy as usize) * self.width + ix as usize) * self.channels;
                            let dst = base + (ky * self.kernel_w + kx) * self.channels;
                            for ch in 0..self.channels {
                                visit(dst + ch, src + ch);
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Neg(Var),
    Scale(Var, f64),
    AddScalar(Var),
    Exp(Var),
    Ln(Var),
    Powf(Var, f64),
    Softplus(Var),
    Sigmoid(Var),
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Reshape(Var),
    RepeatRows(Var, usize),
    GroupSumRows(Var, usize),
    RepeatCols(Var, usize),
    GroupSumCols(Var, usize),
    /// `x [R, C]` combined with `v [1, C]` (`rows`) or `v [R, 1]` (columns).
    Broadcast { x: Var, v: Var, rows: bool, mul: bool },
    ConcatCols(Vec<Var>),
    SliceCols { x: Var, start: usize },
    PadCols { x: Var, start: usize },
    Im2Col { x: Var, geom: ConvGeom },
    Col2Im { cols: Var, geom: ConvGeom },
    Gather { x: Var, index: Rc<Vec<usize>> },
    ScatterAdd { x: Var, index: Rc<Vec<usize>> },
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) | MatMul { a, b, .. } | Broadcast { x: a, v: b, .. } => vec![*a, *b],
            Neg(a) | Scale(a, _) | AddScalar(a) | Exp(a) | Ln(a) | Powf(a, _) | Softplus(a) | Sigmoid(a)
            | Reshape(a) | RepeatRows(a, _) | GroupSumRows(a, _) | RepeatCols(a, _) | GroupSumCols(a, _) => {
                vec![*a]
            }
            ConcatCols(xs) => xs.clone(),
            SliceCols { x, .. } | PadCols { x, .. } | Im2Col { x, .. } | Gather { x, .. } | ScatterAdd { x, .. } => {
                vec![*x]
            }
            Col2Im { cols, .. } => vec![*cols],
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// First non-finite value seen on a tape.
#[derive(Clone, Debug, PartialEq)]
pub struct Fault {
    pub node: usize,
    pub op: String,
}

/// A differentiable computation tape.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    no_grad: bool,
}

type R = Result<Var, TensorError>;

fn shape_err(op: &'static str, detail: String) -> TensorError {
    TensorError::Shape { op, detail }
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

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// The first node holding a NaN or infinity, if any. This scans the whole
    /// tape; callers on a hot path check their outputs first and only ask
    /// for the culprit when one of them is non-finite.
    pub fn fault(&self) -> Option<Fault> {
        self.nodes.iter().position(|n| !n.value.is_finite()).map(|i| {
            let name = format!("{:?}", self.nodes[i].op);
            let name = name.split(['(', ' ', '{']).next().unwrap_or_default().to_string();
            Fault { node: i, op: name }
        })
    }

    /// A differentiable leaf (a parameter or an input we want gradients for).
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Leaf, true)
    }

    /// A leaf with no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Leaf, false)
    }

    fn push_raw(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let requires_grad = !self.no_grad && op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.push_raw(value, op, requires_grad)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), TensorError> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    fn dims2(&self, op: &'static str, v: Var) -> Result<(usize, usize), TensorError> {
        self.value(v).dims2(op)
    }

    // ---- element-wise --------------------------------------------------

    pub fn add(&mut self, a: Var, b: Var) -> R {
        self.same_shape("add", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> R {
        self.same_shape("sub", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        Ok(self.push(v, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> R {
        self.same_shape("mul", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn neg(&mut self, a: Var) -> R {
        let v = self.value(a).map(|x| -x);
        Ok(self.push(v, Op::Neg(a)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> R {
        let v = self.value(a).map(|x| x * c);
        Ok(self.push(v, Op::Scale(a, c)))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> R {
        let v = self.value(a).map(|x| x + c);
        Ok(self.push(v, Op::AddScalar(a)))
    }

    pub fn exp(&mut self, a: Var) -> R {
        let v = self.value(a).map(f64::exp);
        Ok(self.push(v, Op::Exp(a)))
    }

    pub fn ln(&mut self, a: Var) -> R {
        let v = self.value(a).map(f64::ln);
        Ok(self.push(v, Op::Ln(a)))
    }

    pub fn powf(&mut self, a: Var, p: f64) -> R {
        let v = self.value(a).map(|x| x.powf(p));
        Ok(self.push(v, Op::Powf(a, p)))
    }

    /// `log(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&mut self, a: Var) -> R {
        let v = self.value(a).map(softplus);
        Ok(self.push(v, Op::Softplus(a)))
    }

    pub fn sigmoid(&mut self, a: Var) -> R {
        let v = self.value(a).map(sigmoid);
        Ok(self.push(v, Op::Sigmoid(a)))
    }

    // ---- matrix-shaped -------------------------------------------------

    /// `op(a) · op(b)`, where `ta`/`tb` transpose the stored matrices.
    pub fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> R {
        let ad = self.dims2("matmul", a)?;
        let bd = self.dims2("matmul", b)?;
        let (c, m, n) = gemm(self.value(a).data(), ad, ta, self.value(b).data(), bd, tb)?;
        let v = Tensor::new(&[m, n], c)?;
        Ok(self.push(v, Op::MatMul { a, b, ta, tb }))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> R {
        self.matmul_t(a, b, false, false)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> R {
        let v = self.value(a).clone().reshape(shape)?;
        Ok(self.push(v, Op::Reshape(a)))
    }

    /// `[R, C] -> [R*k, C]`, each row repeated `k` times consecutively.
    pub fn repeat_rows(&mut self, a: Var, k: usize) -> R {
        let (r, c) = self.dims2("repeat_rows", a)?;
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(r * k * c);
        for row in src.chunks_exact(c.max(1)).take(r) {
            for _ in 0..k {
                out.extend_from_slice(row);
            }
        }
        let v = Tensor::new(&[r * k, c], out)?;
        Ok(self.push(v, Op::RepeatRows(a, k)))
    }

    /// `[R*k, C] -> [R, C]`, summing consecutive groups of `k` rows.
    pub fn group_sum_rows(&mut self, a: Var, k: usize) -> R {
        let (rk, c) = self.dims2("group_sum_rows", a)?;
        if k == 0 || rk % k != 0 {
            return Err(shape_err("group_sum_rows", format!("{} rows not divisible by {}", rk, k)));
        }
        let r = rk / k;
        let src = self.value(a).data();
        let mut out = vec![0.0; r * c];
        for (i, row) in src.chunks_exact(c.max(1)).enumerate().take(rk) {
            let dst = &mut out[(i / k) * c..(i / k + 1) * c];
            for (d, s) in dst.iter_mut().zip(row) {
                *d += s;
            }
        }
        let v = Tensor::new(&[r, c], out)?;
        Ok(self.push(v, Op::GroupSumRows(a, k)))
    }

    /// `[R, C] -> [R, C*k]`, each entry repeated `k` times consecutively.
    pub fn repeat_cols(&mut self, a: Var, k: usize) -> R {
        let (r, c) = self.dims2("repeat_cols", a)?;
        let mut out = Vec::with_capacity(r * c * k);
        for &x in self.value(a).data() {
            out.extend(std::iter::repeat_n(x, k));
        }
        let v = Tensor::new(&[r, c * k], out)?;
        Ok(self.push(v, Op::RepeatCols(a, k)))
    }

    /// `[R, C*k] -> [R, C]`, summing consecutive groups of `k` columns.
    pub fn group_sum_cols(&mut self, a: Var, k: usize) -> R {
        let (r, ck) = self.dims2("group_sum_cols", a)?;
        if k == 0 || ck % k != 0 {
            return Err(shape_err("group_sum_cols", format!("{} cols not divisible by {}", ck, k)));
        }
        let out: Vec<f64> = self.value(a).data().chunks_exact(k).map(|g| g.iter().sum()).collect();
        let v = Tensor::new(&[r, ck / k], out)?;
        Ok(self.push(v, Op::GroupSumCols(a, k)))
    }

    fn broadcast(&mut self, x: Var, v: Var, rows: bool, mul: bool) -> R {
        let (r, c) = self.dims2("broadcast", x)?;
        let want = if rows { (1, c) } else { (r, 1) };
        if self.dims2("broadcast", v)? != want {
            return Err(shape_err("broadcast", format!("{:?} against [{}, {}]", self.shape(v), r, c)));
        }
        let (xd, vd) = (self.value(x).data(), self.value(v).data());
        let mut out = Vec::with_capacity(r * c);
        for (i, row) in xd.chunks_exact(c.max(1)).enumerate().take(r) {
            match (rows, mul) {
                (true, false) => out.extend(row.iter().zip(vd).map(|(a, b)| a + b)),
                (true, true) => out.extend(row.iter().zip(vd).map(|(a, b)| a * b)),
                (false, false) => out.extend(row.iter().map(|a| a + vd[i])),
                (false, true) => out.extend(row.iter().map(|a| a * vd[i])),
            }
        }
        let t = Tensor::new(&[r, c], out)?;
        Ok(self.push(t, Op::Broadcast { x, v, rows, mul }))
    }

    /// Adds a `[1, C]` vector to every row of an `[R, C]` matrix.
    pub fn add_row_vector(&mut self, x: Var, v: Var) -> R {
        self.broadcast(x, v, true, false)
    }

    /// Multiplies every row of an `[R, C]` matrix by a `[1, C]` vector.
    pub fn mul_row_vector(&mut self, x: Var, v: Var) -> R {
        self.broadcast(x, v, true, true)
    }

    /// Adds `v[i]` (`v` is `[R, 1]`) to row `i` of an `[R, C]` matrix.
    pub fn add_col_vector(&mut self, x: Var, v: Var) -> R {
        self.broadcast(x, v, false, false)
    }

    /// Multiplies row `i` of an `[R, C]` matrix by `v[i]`.
    pub fn mul_col_vector(&mut self, x: Var, v: Var) -> R {
        self.broadcast(x, v, false, true)
    }

    pub fn concat_cols(&mut self, xs: &[Var]) -> R {
        if xs.is_empty() {
            return Err(shape_err("concat_cols", "no inputs".into()));
        }
        let r = self.dims2("concat_cols", xs[0])?.0;
        let mut widths = Vec::with_capacity(xs.len());
        for &x in xs {
            let (xr, xc) = self.dims2("concat_cols", x)?;
            if xr != r {
                return Err(shape_err("concat_cols", format!("row counts {} vs {}", r, xr)));
            }
            widths.push(xc);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(r * total);
        for row in 0..r {
            for (&x, &w) in xs.iter().zip(&widths) {
                out.extend_from_slice(&self.value(x).data()[row * w..(row + 1) * w]);
            }
        }
        let v = Tensor::new(&[r, total], out)?;
        Ok(self.push(v, Op::ConcatCols(xs.to_vec())))
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> R {
        let (r, c) = self.dims2("slice_cols", a)?;
        if start > end || end > c {
            return Err(shape_err("slice_cols", format!("{}..{} of {} cols", start, end, c)));
        }
        let w = end - start;
        let mut out = Vec::with_capacity(r * w);
        for row in self.value(a).data().chunks_exact(c.max(1)).take(r) {
            out.extend_from_slice(&row[start..end]);
        }
        let v = Tensor::new(&[r, w], out)?;
        Ok(self.push(v, Op::SliceCols { x: a, start }))
    }

    /// Places a `[R, w]` matrix at column `start` of a zero `[R, total]` matrix.
    pub fn pad_cols(&mut self, a: Var, start: usize, total: usize) -> R {
        let (r, w) = self.dims2("pad_cols", a)?;
        if start + w > total {
            return Err(shape_err("pad_cols", format!("{}+{} > {}", start, w, total)));
        }
        let mut out = vec![0.0; r * total];
        for (i, row) in self.value(a).data().chunks_exact(w.max(1)).enumerate().take(r) {
            out[i * total + start..i * total + start + w].copy_from_slice(row);
        }
        let v = Tensor::new(&[r, total], out)?;
        Ok(self.push(v, Op::PadCols { x: a, start }))
    }

    // ---- convolution plumbing -------------------------------------------

    /// Unfolds NHWC input into a `[N*OH*OW, KH*KW*C]` patch matrix.
    pub fn im2col(&mut self, x: Var, geom: ConvGeom) -> R {
        if self.shape(x) != geom.input_shape() {
            return Err(shape_err("im2col", format!("{:?} vs {:?}", self.shape(x), geom.input_shape())));
        }
        let src = self.value(x).data();
        let cs = geom.cols_shape();
        let mut out = vec![0.0; cs[0] * cs[1]];
        geom.for_each_tap(|dst, s| out[dst] = src[s]);
        let v = Tensor::new(&cs, out)?;
        Ok(self.push(v, Op::Im2Col { x, geom }))
    }

    /// Adjoint of [`Graph::im2col`]: scatter-adds patches back into NHWC.
    pub fn col2im(&mut self, cols: Var, geom: ConvGeom) -> R {
        if self.shape(cols) != geom.cols_shape() {
            return Err(shape_err("col2im", format!("{:?} vs {:?}", self.shape(cols), geom.cols_shape())));
        }
        let src = self.value(cols).data();
        let is = geom.input_shape();
        let mut out = vec![0.0; is.iter().product()];
        geom.for_each_tap(|c, dst| out[dst] += src[c]);
        let v = Tensor::new(&is, out)?;
        Ok(self.push(v, Op::Col2Im { cols, geom }))
    }

    /// `out[i] = x[index[i]]` over the flattened input.
    pub fn gather(&mut self, x: Var, index: Rc<Vec<usize>>, shape: &[usize]) -> R {
        let src = self.value(x).data();
        if let Some(&bad) = index.iter().find(|&&i| i >= src.len()) {
            return Err(shape_err("gather", format!("index {} out of {}", bad, src.len())));
        }
        let out = index.iter().map(|&i| src[i]).collect();
        let v = Tensor::new(shape, out)?;
        Ok(self.push(v, Op::Gather { x, index }))
    }

    /// Adjoint of [`Graph::gather`]: `out[index[i]] += x[i]`.
    pub fn scatter_add(&mut self, x: Var, index: Rc<Vec<usize>>, shape: &[usize]) -> R {
        let n: usize = shape.iter().product();
        let src = self.value(x).data();
        if src.len() != index.len() {
            return Err(shape_err("scatter_add", format!("{} values, {} indices", src.len(), index.len())));
        }
        let mut out = vec![0.0; n];
        for (&i, &s) in index.iter().zip(src) {
            if i >= n {
                return Err(shape_err("scatter_add", format!("index {} out of {}", i, n)));
            }
            out[i] += s;
        }
        let v = Tensor::new(shape, out)?;
        Ok(self.push(v, Op::ScatterAdd { x, index }))
    }

    // ---- reductions ----------------------------------------------------

    /// Sum of every entry, as a `[1, 1]` node.
    pub fn sum_all(&mut self, a: Var) -> R {
        let n = self.value(a).len();
        let flat = self.reshape(a, &[1, n])?;
        self.group_sum_cols(flat, n)
    }

    pub fn mean_all(&mut self, a: Var) -> R {
        let n = self.value(a).len();
        let s = self.sum_all(a)?;
        self.scale(s, 1.0 / n as f64)
    }

    // ---- differentiation -----------------------------------------------

    /// Gradients of the scalar `output` with respect to each of `wrt`.
    ///
    /// With `create_graph` the returned nodes are themselves differentiable,
    /// which is what a gradient penalty needs. A `wrt` node that `output`
    /// does not depend on gets an all-zero constant of its own shape.
    pub fn grad(&mut self, output: Var, wrt: &[Var], create_graph: bool) -> Result<Vec<Var>, TensorError> {
        if self.value(output).len() != 1 {
            return Err(TensorError::NonScalarOutput(self.shape(output).to_vec()));
        }
        let n = output.0 + 1;
        // Nodes that depend on at least one `wrt` node.
        let mut on_path = vec![false; n];
        for w in wrt {
            if w.0 < n {
                on_path[w.0] = true;
            }
        }
        for i in 0..n {
            if !on_path[i] && self.nodes[i].op.inputs().iter().any(|v| on_path[v.0]) {
                on_path[i] = true;
            }
        }

        let saved = self.no_grad;
        self.no_grad = saved || !create_graph;
        let result = self.backward(output, n, &on_path);
        self.no_grad = saved;
        let grads = result?;

        Ok(wrt
            .iter()
            .map(|w| match grads.get(w.0).copied().flatten() {
                Some(g) => g,
                None => {
                    let z = Tensor::zeros(self.shape(*w));
                    self.constant(z)
                }
            })
            .collect())
    }

    fn backward(&mut self, output: Var, n: usize, on_path: &[bool]) -> Result<Vec<Option<Var>>, TensorError> {
        let mut grads: Vec<Option<Var>> = vec![None; n];
        if !on_path[output.0] {
            return Ok(grads);
        }
        let seed = Tensor::ones(self.shape(output));
        grads[output.0] = Some(self.constant(seed));
        for i in (0..n).rev() {
            let Some(gy) = grads[i] else { continue };
            if !on_path[i] || matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            for (input, g) in self.vjp(Var(i), gy, on_path)? {
                grads[input.0] = Some(match grads[input.0] {
                    None => g,
                    Some(prev) => self.add(prev, g)?,
                });
            }
        }
        Ok(grads)
    }

    /// Vector-Jacobian products of node `y` for the inputs on the gradient path.
    fn vjp(&mut self, y: Var, gy: Var, need: &[bool]) -> Result<Vec<(Var, Var)>, TensorError> {
        let op = self.nodes[y.0].op.clone();
        let want = |v: &Var| need[v.0];
        let mut out = Vec::with_capacity(2);
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if want(&a) {
                    out.push((a, gy));
                }
                if want(&b) {
                    out.push((b, gy));
                }
            }
            Op::Sub(a, b) => {
                if want(&a) {
                    out.push((a, gy));
                }
                if want(&b) {
                    out.push((b, self.neg(gy)?));
                }
            }
            Op::Mul(a, b) => {
                if want(&a) {
                    out.push((a, self.mul(gy, b)?));
                }
                if want(&b) {
                    out.push((b, self.mul(gy, a)?));
                }
            }
            Op::Neg(a) => out.push((a, self.neg(gy)?)),
            Op::Scale(a, c) => out.push((a, self.scale(gy, c)?)),
            Op::AddScalar(a) => out.push((a, gy)),
            Op::Exp(a) => out.push((a, self.mul(gy, y)?)),
            Op::Ln(a) => {
                let inv = self.powf(a, -1.0)?;
                out.push((a, self.mul(gy, inv)?));
            }
            Op::Powf(a, p) => {
                let d = self.powf(a, p - 1.0)?;
                let d = self.scale(d, p)?;
                out.push((a, self.mul(gy, d)?));
            }
            Op::Softplus(a) => {
                let s = self.sigmoid(a)?;
                out.push((a, self.mul(gy, s)?));
            }
            Op::Sigmoid(a) => {
                let one_minus = self.neg(y)?;
                let one_minus = self.add_scalar(one_minus, 1.0)?;
                let d = self.mul(y, one_minus)?;
                out.push((a, self.mul(gy, d)?));
            }
            Op::MatMul { a, b, ta, tb } => {
                if want(&a) {
                    let ga = if ta { self.matmul_t(b, gy, tb, true)? } else { self.matmul_t(gy, b, false, !tb)? };
                    out.push((a, ga));
                }
                if want(&b) {
                    let gb = if tb { self.matmul_t(gy, a, true, ta)? } else { self.matmul_t(a, gy, !ta, false)? };
                    out.push((b, gb));
                }
            }
            Op::Reshape(a) => {
                let s = self.shape(a).to_vec();
                out.push((a, self.reshape(gy, &s)?));
            }
            Op::RepeatRows(a, k) => out.push((a, self.group_sum_rows(gy, k)?)),
            Op::GroupSumRows(a, k) => out.push((a, self.repeat_rows(gy, k)?)),
            Op::RepeatCols(a, k) => out.push((a, self.group_sum_cols(gy, k)?)),
            Op::GroupSumCols(a, k) => out.push((a, self.repeat_cols(gy, k)?)),
            Op::Broadcast { x, v, rows, mul } => {
                let (r, c) = self.dims2("broadcast", x)?;
                if want(&x) {
                    let gx = if mul { self.broadcast(gy, v, rows, true)? } else { gy };
                    out.push((x, gx));
                }
                if want(&v) {
                    let g = if mul { self.mul(gy, x)? } else { gy };
                    let gv = if rows { self.group_sum_rows(g, r)? } else { self.group_sum_cols(g, c)? };
                    out.push((v, gv));
                }
            }
            Op::ConcatCols(xs) => {
                let mut start = 0;
                for x in xs {
                    let w = self.dims2("concat_cols", x)?.1;
                    if want(&x) {
                        out.push((x, self.slice_cols(gy, start, start + w)?));
                    }
                    start += w;
                }
            }
            Op::SliceCols { x, start } => {
                let total = self.dims2("slice_cols", x)?.1;
                out.push((x, self.pad_cols(gy, start, total)?));
            }
            Op::PadCols { x, start } => {
                let w = self.dims2("pad_cols", x)?.1;
                out.push((x, self.slice_cols(gy, start, start + w)?));
            }
            Op::Im2Col { x, geom } => out.push((x, self.col2im(gy, geom)?)),
            Op::Col2Im { cols, geom } => out.push((cols, self.im2col(gy, geom)?)),
            Op::Gather { x, index } => {
                let s = self.shape(x).to_vec();
                out.push((x, self.scatter_add(gy, index, &s)?));
            }
            Op::ScatterAdd { x, index } => {
                let s = self.shape(x).to_vec();
                out.push((x, self.gather(gy, index, &s)?));
            }
        }
        Ok(out)
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

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}
