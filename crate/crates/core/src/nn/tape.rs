//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every forward primitive appends one node holding its output value and the
//! information needed to compute input gradients. [`Tape::backward`] walks
//! the nodes once, newest first.

use std::sync::Arc;

use crate::error::{Error, Result};

use super::kernels::{self, ConvGeom, Rulebook};
use super::tensor::numel;
use super::{ParamId, ParamStore, Scalar, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Param(ParamId),
    MatMul { a: Var, b: Var, m: usize, k: usize, n: usize },
    Linear { x: Var, w: Var, b: Var, m: usize, k: usize, n: usize },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine { x: Var, scale: T },
    ScaleBy { x: Var, s: Var },
    Relu(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Clamp { x: Var, lo: T, hi: T },
    Minimum(Var, Var),
    Concat { parts: Vec<(Var, usize)>, rows: usize },
    Narrow { x: Var, start: usize, len: usize, width: usize },
    Transpose { x: Var, m: usize, n: usize },
    Sum(Var),
    Mean(Var),
    SumRows { x: Var, n: usize },
    L2NormalizeRows { x: Var, n: usize, eps: T },
    LogSoftmaxRows { x: Var, n: usize },
    GatherCols { x: Var, idx: Vec<usize>, n: usize },
    TanhLogJacobian(Var),
    Conv2d { x: Var, w: Var, b: Var, geom: ConvGeom },
    SparseConv { x: Var, w: Var, b: Var, book: Arc<Rulebook>, cin: usize, cout: usize },
    Scatter { x: Var, cells: Arc<Vec<usize>>, c: usize },
    GlobalMaxPool { x: Var, argmax: Vec<usize> },
    Reshape(Var),
}

#[derive(Clone, Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Ordered record of primitive operations.
#[derive(Clone, Debug, Default)]
pub struct Tape<T = f32> {
    nodes: Vec<Node<T>>,
}

/// Per-node gradients produced by [`Tape::backward`].
#[derive(Clone, Debug)]
pub struct Grads<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Grads<T> {
    /// Gradient of the loss with respect to `v`, or `None` if no gradient
    /// reached it.
    pub fn of(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

fn shape_panic(op: &str, a: &[usize], b: &[usize]) -> ! {
    panic!("{op}: shape mismatch between {a:?} and {b:?}")
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn data(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, shape: &[usize], data: Vec<T>, op: Op<T>, requires_grad: bool) -> Var {
        let id = self.nodes.len();
        self.nodes.push(Node {
            value: Tensor::from_vec(shape, data),
            op,
            requires_grad,
        });
        Var(id)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    // -- leaves -----------------------------------------------------------

    /// A constant input; gradients stop here.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        let shape = t.shape().to_vec();
        self.push(&shape, t.into_data(), Op::Leaf, false)
    }

    pub fn input(&mut self, shape: &[usize], data: Vec<T>) -> Var {
        self.push(shape, data, Op::Leaf, false)
    }

    /// A leaf that receives a gradient slot without being a parameter.
    pub fn leaf_with_grad(&mut self, t: Tensor<T>) -> Var {
        let shape = t.shape().to_vec();
        self.push(&shape, t.into_data(), Op::Leaf, true)
    }

    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let t = store.tensor(id);
        self.push(t.shape(), t.data().to_vec(), Op::Param(id), true)
    }

    /// Parameter value recorded as a constant (no gradient flows to it).
    pub fn param_frozen(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let t = store.tensor(id);
        self.push(t.shape(), t.data().to_vec(), Op::Leaf, false)
    }

    /// Stop-gradient: a constant copy of `v`'s current value.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.nodes[v.0].value.clone();
        let shape = t.shape().to_vec();
        self.push(&shape, t.into_data(), Op::Leaf, false)
    }

    // -- linear algebra ---------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            shape_panic("matmul", &sa, &sb);
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        kernels::matmul_acc(self.data(a), self.data(b), &mut out, m, k, n);
        let rg = self.rg(&[a, b]);
        self.push(&[m, n], out, Op::MatMul { a, b, m, k, n }, rg)
    }

    /// `x·w + b` with `x: [m,k]`, `w: [k,n]`, `b: [n]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let (sx, sw, sb) = (
            self.shape(x).to_vec(),
            self.shape(w).to_vec(),
            self.shape(b).to_vec(),
        );
        if sx.len() != 2 || sw.len() != 2 || sx[1] != sw[0] {
            shape_panic("linear", &sx, &sw);
        }
        if sb != [sw[1]] {
            shape_panic("linear bias", &sw, &sb);
        }
        let (m, k, n) = (sx[0], sx[1], sw[1]);
        let mut out = Vec::with_capacity(m * n);
        for _ in 0..m {
            out.extend_from_slice(self.data(b));
        }
        kernels::matmul_acc(self.data(x), self.data(w), &mut out, m, k, n);
        let rg = self.rg(&[x, w, b]);
        self.push(&[m, n], out, Op::Linear { x, w, b, m, k, n }, rg)
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let s = self.shape(x).to_vec();
        if s.len() != 2 {
            panic!("transpose: expected rank-2 tensor, got {s:?}");
        }
        let (m, n) = (s[0], s[1]);
        let d = self.data(x);
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = d[i * n + j];
            }
        }
        let rg = self.rg(&[x]);
        self.push(&[n, m], out, Op::Transpose { x, m, n }, rg)
    }

    // -- elementwise ------------------------------------------------------

    fn binary(&mut self, a: Var, b: Var, name: &str, f: impl Fn(T, T) -> T, op: Op<T>) -> Var {
        if self.shape(a) != self.shape(b) {
            shape_panic(name, self.shape(a), self.shape(b));
        }
        let out = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(&[a, b]);
        self.push(&shape, out, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn minimum(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, "minimum", |x, y| if y < x { y } else { x }, Op::Minimum(a, b))
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let out = self.data(x).iter().map(|&v| f(v)).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(&[x]);
        self.push(&shape, out, op, rg)
    }

    /// `scale·x + shift`.
    pub fn affine(&mut self, x: Var, scale: T, shift: T) -> Var {
        self.unary(x, |v| scale * v + shift, Op::Affine { x, scale })
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.affine(x, -T::one(), T::zero())
    }

    /// Multiplies every element of `x` by the single element of `s`.
    pub fn scale_by(&mut self, x: Var, s: Var) -> Var {
        if numel(self.shape(s)) != 1 {
            shape_panic("scale_by", self.shape(x), self.shape(s));
        }
        let sv = self.data(s)[0];
        let out = self.data(x).iter().map(|&v| v * sv).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(&[x, s]);
        self.push(&shape, out, Op::ScaleBy { x, s }, rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| if v > T::zero() { v } else { T::zero() }, Op::Relu(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.tanh(), Op::Tanh(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.exp(), Op::Exp(x))
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.ln(), Op::Log(x))
    }

    /// Clamp into `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(&mut self, x: Var, lo: T, hi: T) -> Var {
        self.unary(x, |v| v.max(lo).min(hi), Op::Clamp { x, lo, hi })
    }

    /// `log(1 − tanh(x)²)`, evaluated as `2·(ln 2 − x − softplus(−2x))`.
    pub fn tanh_log_jacobian(&mut self, x: Var) -> Var {
        let two = T::lit(2.0);
        let ln2 = T::lit(std::f64::consts::LN_2);
        self.unary(
            x,
            |v| {
                let z = -two * v;
                let softplus = if z > T::zero() {
                    z + (-z).exp().ln_1p()
                } else {
                    z.exp().ln_1p()
                };
                two * (ln2 - v - softplus)
            },
            Op::TanhLogJacobian(x),
        )
    }

    // -- shape ------------------------------------------------------------

    /// Concatenates rank-2 tensors along the column axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols: no inputs");
        let rows = self.shape(parts[0])[0];
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.len() != 2 || s[0] != rows {
                shape_panic("concat_cols", self.shape(parts[0]), s);
            }
            widths.push(s[1]);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.data(p)[r * w..(r + 1) * w]);
            }
        }
        let rg = self.rg(parts);
        let parts = parts.iter().copied().zip(widths).collect();
        self.push(&[rows, total], out, Op::Concat { parts, rows }, rg)
    }

    /// Columns `start..start+len` of a rank-2 tensor.
    pub fn narrow_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let s = self.shape(x).to_vec();
        if s.len() != 2 || start + len > s[1] {
            panic!("narrow_cols: cannot take columns {start}..{} of {s:?}", start + len);
        }
        let (rows, width) = (s[0], s[1]);
        let d = self.data(x);
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&d[r * width + start..r * width + start + len]);
        }
        let rg = self.rg(&[x]);
        self.push(&[rows, len], out, Op::Narrow { x, start, len, width }, rg)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        if numel(shape) != numel(self.shape(x)) {
            shape_panic("reshape", self.shape(x), shape);
        }
        let d = self.data(x).to_vec();
        let rg = self.rg(&[x]);
        self.push(shape, d, Op::Reshape(x), rg)
    }

    // -- reductions -------------------------------------------------------

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.data(x).iter().copied().sum();
        let rg = self.rg(&[x]);
        self.push(&[1], vec![s], Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.data(x).len();
        assert!(n > 0, "mean of empty tensor");
        let s: T = self.data(x).iter().copied().sum();
        let rg = self.rg(&[x]);
        self.push(&[1], vec![s / T::lit(n as f64)], Op::Mean(x), rg)
    }

    /// Sum along the last axis of a rank-2 tensor: `[m,n] → [m]`.
    pub fn sum_rows(&mut self, x: Var) -> Var {
        let s = self.shape(x).to_vec();
        assert_eq!(s.len(), 2, "sum_rows: expected rank 2, got {s:?}");
        let n = s[1];
        let out = self
            .data(x)
            .chunks_exact(n)
            .map(|r| r.iter().copied().sum())
            .collect();
        let rg = self.rg(&[x]);
        self.push(&[s[0]], out, Op::SumRows { x, n }, rg)
    }

    /// Row-wise `x / max(‖x‖, eps)`.
    pub fn l2_normalize_rows(&mut self, x: Var, eps: T) -> Var {
        let s = self.shape(x).to_vec();
        assert_eq!(s.len(), 2, "l2_normalize_rows: expected rank 2, got {s:?}");
        let n = s[1];
        let mut out = Vec::with_capacity(numel(&s));
        for r in self.data(x).chunks_exact(n) {
            let norm = r.iter().map(|&v| v * v).sum::<T>().sqrt().max(eps);
            out.extend(r.iter().map(|&v| v / norm));
        }
        let rg = self.rg(&[x]);
        self.push(&s, out, Op::L2NormalizeRows { x, n, eps }, rg)
    }

    /// Log-softmax over each row of a rank-2 tensor.
    pub fn log_softmax_rows(&mut self, x: Var) -> Var {
        let s = self.shape(x).to_vec();
        assert_eq!(s.len(), 2, "log_softmax_rows: expected rank 2, got {s:?}");
        let n = s[1];
        let mut out = Vec::with_capacity(numel(&s));
        for r in self.data(x).chunks_exact(n) {
            let mx = r.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = mx + r.iter().map(|&v| (v - mx).exp()).sum::<T>().ln();
            out.extend(r.iter().map(|&v| v - lse));
        }
        let rg = self.rg(&[x]);
        self.push(&s, out, Op::LogSoftmaxRows { x, n }, rg)
    }

    /// `out[i] = x[i, idx[i]]`.
    pub fn gather_cols(&mut self, x: Var, idx: &[usize]) -> Var {
        let s = self.shape(x).to_vec();
        if s.len() != 2 || s[0] != idx.len() {
            shape_panic("gather_cols", &s, &[idx.len()]);
        }
        let n = s[1];
        let d = self.data(x);
        let out = idx
            .iter()
            .enumerate()
            .map(|(i, &j)| {
                assert!(j < n, "gather_cols: column {j} out of range {n}");
                d[i * n + j]
            })
            .collect();
        let rg = self.rg(&[x]);
        self.push(&[idx.len()], out, Op::GatherCols { x, idx: idx.to_vec(), n }, rg)
    }

    // -- convolution ------------------------------------------------------

    /// Dense NHWC convolution. `x: [n,h,w,cin]`, `w: [kh,kw,cin,cout]`,
    /// `b: [cout]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Var {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 4 || sw.len() != 4 || sx[3] != sw[2] {
            shape_panic("conv2d", &sx, &sw);
        }
        if self.shape(b) != [sw[3]] {
            shape_panic("conv2d bias", &sw, self.shape(b));
        }
        assert!(stride > 0, "conv2d: stride must be positive");
        let geom = ConvGeom {
            n: sx[0],
            h: sx[1],
            w: sx[2],
            cin: sx[3],
            cout: sw[3],
            kh: sw[0],
            kw: sw[1],
            stride,
            pad,
        };
        let (ho, wo) = geom.out_hw();
        let out = kernels::conv2d_forward(self.data(x), self.data(w), self.data(b), &geom);
        let rg = self.rg(&[x, w, b]);
        self.push(&[geom.n, ho, wo, geom.cout], out, Op::Conv2d { x, w, b, geom }, rg)
    }

    /// Sparse convolution over site features `x: [n_in, cin]` with weights
    /// `w: [taps, cin, cout]` (any leading layout whose product is `taps`).
    pub fn sparse_conv(&mut self, x: Var, w: Var, b: Var, book: Arc<Rulebook>) -> Var {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 2 || sx[0] != book.n_in {
            shape_panic("sparse_conv input", &sx, &[book.n_in]);
        }
        let cin = sx[1];
        let cout = *sw.last().expect("weight rank");
        if numel(&sw) != book.taps * cin * cout {
            shape_panic("sparse_conv weight", &sx, &sw);
        }
        if self.shape(b) != [cout] {
            shape_panic("sparse_conv bias", &sw, self.shape(b));
        }
        let out =
            kernels::sparse_conv_forward(self.data(x), self.data(w), self.data(b), &book, cin, cout);
        let rg = self.rg(&[x, w, b]);
        let n_out = book.n_out;
        self.push(&[n_out, cout], out, Op::SparseConv { x, w, b, book, cin, cout }, rg)
    }

    /// Writes row `i` of `x: [n, c]` to spatial cell `cells[i]` of a zero
    /// tensor whose leading dims are `dense_shape` (channels appended).
    pub fn scatter(&mut self, x: Var, cells: Arc<Vec<usize>>, dense_shape: &[usize]) -> Var {
        let s = self.shape(x).to_vec();
        if s.len() != 2 || s[0] != cells.len() {
            shape_panic("scatter", &s, &[cells.len()]);
        }
        let c = s[1];
        let n_cells = numel(dense_shape);
        let mut out = vec![T::zero(); n_cells * c];
        let d = self.data(x);
        for (i, &cell) in cells.iter().enumerate() {
            assert!(cell < n_cells, "scatter: cell {cell} outside {dense_shape:?}");
            out[cell * c..(cell + 1) * c].copy_from_slice(&d[i * c..(i + 1) * c]);
        }
        let mut shape = dense_shape.to_vec();
        shape.push(c);
        let rg = self.rg(&[x]);
        self.push(&shape, out, Op::Scatter { x, cells, c }, rg)
    }

    /// Max over all spatial positions: `[n,h,w,c] → [n,c]`. Ties resolve to
    /// the first position in row-major order.
    pub fn global_max_pool(&mut self, x: Var) -> Var {
        let s = self.shape(x).to_vec();
        assert_eq!(s.len(), 4, "global_max_pool: expected NHWC, got {s:?}");
        let (n, hw, c) = (s[0], s[1] * s[2], s[3]);
        assert!(hw > 0, "global_max_pool: empty spatial extent");
        let d = self.data(x);
        let mut out = vec![T::zero(); n * c];
        let mut argmax = vec![0usize; n * c];
        for b in 0..n {
            for ch in 0..c {
                let mut best = b * hw * c + ch;
                for p in 1..hw {
                    let i = (b * hw + p) * c + ch;
                    if d[i] > d[best] {
                        best = i;
                    }
                }
                out[b * c + ch] = d[best];
                argmax[b * c + ch] = best;
            }
        }
        let rg = self.rg(&[x]);
        self.push(&[n, c], out, Op::GlobalMaxPool { x, argmax }, rg)
    }

    // -- backward ---------------------------------------------------------

    /// Back-propagates from the scalar `loss`, accumulating parameter
    /// gradients into `store`.
    pub fn backward(&self, loss: Var, store: &mut ParamStore<T>) -> Result<Grads<T>> {
        let ls = self.shape(loss);
        if numel(ls) != 1 {
            return Err(Error::NonScalarLoss(ls.to_vec()));
        }
        for (i, node) in self.nodes[..=loss.0].iter().enumerate() {
            if !node.value.is_finite() {
                return Err(Error::NonFinite(format!("forward value of node {i}")));
            }
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                grads[i] = Some(g);
                continue;
            }
            self.backward_node(i, &g, &mut grads, store);
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of node {i}")));
            }
            grads[i] = Some(g);
        }
        Ok(Grads { grads })
    }

    fn take(&self, grads: &mut [Option<Vec<T>>], v: Var) -> Option<Vec<T>> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let n = self.nodes[v.0].value.numel();
        Some(grads[v.0].take().unwrap_or_else(|| vec![T::zero(); n]))
    }

    fn put(grads: &mut [Option<Vec<T>>], v: Var, buf: Option<Vec<T>>) {
        if buf.is_some() {
            grads[v.0] = buf;
        }
    }

    /// Runs `f` on the gradient buffer of `v` when `v` takes a gradient.
    fn with(&self, grads: &mut [Option<Vec<T>>], v: Var, f: impl FnOnce(&mut [T])) {
        if let Some(mut buf) = self.take(grads, v) {
            f(&mut buf);
            grads[v.0] = Some(buf);
        }
    }

    fn backward_node(
        &self,
        i: usize,
        g: &[T],
        grads: &mut [Option<Vec<T>>],
        store: &mut ParamStore<T>,
    ) {
        let out = self.nodes[i].value.data();
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Param(id) => store.tensor_mut(*id).accumulate_grad(g),
            &Op::MatMul { a, b, m, k, n } => {
                let (ad, bd) = (self.data(a), self.data(b));
                let mut ga = self.take(grads, a);
                if a == b {
                    if let Some(s) = ga.as_mut() {
                        let mut tmp = vec![T::zero(); k * n];
                        kernels::matmul_backward(ad, bd, g, Some(s), Some(&mut tmp), m, k, n);
                        add_into(s, &tmp);
                    }
                    Self::put(grads, a, ga);
                } else {
                    let mut gb = self.take(grads, b);
                    kernels::matmul_backward(ad, bd, g, ga.as_deref_mut(), gb.as_deref_mut(), m, k, n);
                    Self::put(grads, a, ga);
                    Self::put(grads, b, gb);
                }
            }
            &Op::Linear { x, w, b, m, k, n } => {
                assert!(x != w && x != b && w != b, "linear: inputs must be distinct nodes");
                let mut gx = self.take(grads, x);
                let mut gw = self.take(grads, w);
                kernels::matmul_backward(self.data(x), self.data(w), g, gx.as_deref_mut(), gw.as_deref_mut(), m, k, n);
                Self::put(grads, x, gx);
                Self::put(grads, w, gw);
                self.with(grads, b, |s| {
                    for row in g.chunks_exact(n) {
                        add_into(s, row);
                    }
                });
            }
            &Op::Add(a, b) => {
                self.with(grads, a, |s| add_into(s, g));
                self.with(grads, b, |s| add_into(s, g));
            }
            &Op::Sub(a, b) => {
                self.with(grads, a, |s| add_into(s, g));
                self.with(grads, b, |s| {
                    for (o, &v) in s.iter_mut().zip(g) {
                        *o -= v;
                    }
                });
            }
            &Op::Mul(a, b) => {
                let (ad, bd) = (self.data(a), self.data(b));
                self.with(grads, a, |s| {
                    for ((o, &gv), &bv) in s.iter_mut().zip(g).zip(bd) {
                        *o += gv * bv;
                    }
                });
                self.with(grads, b, |s| {
                    for ((o, &gv), &av) in s.iter_mut().zip(g).zip(ad) {
                        *o += gv * av;
                    }
                });
            }
            &Op::Affine { x, scale } => self.with(grads, x, |s| {
                for (o, &gv) in s.iter_mut().zip(g) {
                    *o += scale * gv;
                }
            }),
            &Op::ScaleBy { x, s: sv_var } => {
                let sv = self.data(sv_var)[0];
                let xd = self.data(x);
                let gs: T = g.iter().zip(xd).map(|(&gv, &xv)| gv * xv).sum();
                self.with(grads, x, |s| {
                    for (o, &gv) in s.iter_mut().zip(g) {
                        *o += gv * sv;
                    }
                });
                self.with(grads, sv_var, |s| s[0] += gs);
            }
            &Op::Relu(x) => self.with(grads, x, |s| {
                for ((o, &gv), &y) in s.iter_mut().zip(g).zip(out) {
                    if y > T::zero() {
                        *o += gv;
                    }
                }
            }),
            &Op::Tanh(x) => self.with(grads, x, |s| {
                for ((o, &gv), &y) in s.iter_mut().zip(g).zip(out) {
                    *o += gv * (T::one() - y * y);
                }
            }),
            &Op::Exp(x) => self.with(grads, x, |s| {
                for ((o, &gv), &y) in s.iter_mut().zip(g).zip(out) {
                    *o += gv * y;
                }
            }),
            &Op::Log(x) => {
                let xd = self.data(x);
                self.with(grads, x, |s| {
                    for ((o, &gv), &xv) in s.iter_mut().zip(g).zip(xd) {
                        *o += gv / xv;
                    }
                });
            }
            &Op::Clamp { x, lo, hi } => {
                let xd = self.data(x);
                self.with(grads, x, |s| {
                    for ((o, &gv), &xv) in s.iter_mut().zip(g).zip(xd) {
                        if xv >= lo && xv <= hi {
                            *o += gv;
                        }
                    }
                });
            }
            &Op::Minimum(a, b) => {
                let (ad, bd) = (self.data(a), self.data(b));
                self.with(grads, a, |s| {
                    for (((o, &gv), &x), &y) in s.iter_mut().zip(g).zip(ad).zip(bd) {
                        if y >= x {
                            *o += gv;
                        }
                    }
                });
                self.with(grads, b, |s| {
                    for (((o, &gv), &x), &y) in s.iter_mut().zip(g).zip(ad).zip(bd) {
                        if y < x {
                            *o += gv;
                        }
                    }
                });
            }
            Op::Concat { parts, rows } => {
                let total: usize = parts.iter().map(|p| p.1).sum();
                let mut col = 0;
                for &(p, w) in parts {
                    self.with(grads, p, |s| {
                        for r in 0..*rows {
                            let src = &g[r * total + col..r * total + col + w];
                            add_into(&mut s[r * w..(r + 1) * w], src);
                        }
                    });
                    col += w;
                }
            }
            &Op::Narrow { x, start, len, width } => self.with(grads, x, |s| {
                for (r, row) in g.chunks_exact(len).enumerate() {
                    add_into(&mut s[r * width + start..r * width + start + len], row);
                }
            }),
            &Op::Transpose { x, m, n } => self.with(grads, x, |s| {
                for i in 0..m {
                    for j in 0..n {
                        s[i * n + j] += g[j * m + i];
                    }
                }
            }),
            &Op::Sum(x) => self.with(grads, x, |s| {
                for o in s.iter_mut() {
                    *o += g[0];
                }
            }),
            &Op::Mean(x) => self.with(grads, x, |s| {
                let gv = g[0] / T::lit(s.len() as f64);
                for o in s.iter_mut() {
                    *o += gv;
                }
            }),
            &Op::SumRows { x, n } => self.with(grads, x, |s| {
                for (row, &gv) in s.chunks_exact_mut(n).zip(g) {
                    for o in row {
                        *o += gv;
                    }
                }
            }),
            &Op::L2NormalizeRows { x, n, eps } => {
                let xd = self.data(x);
                self.with(grads, x, |s| {
                    for ((srow, xrow), (grow, yrow)) in s
                        .chunks_exact_mut(n)
                        .zip(xd.chunks_exact(n))
                        .zip(g.chunks_exact(n).zip(out.chunks_exact(n)))
                    {
                        let norm = xrow.iter().map(|&v| v * v).sum::<T>().sqrt();
                        if norm > eps {
                            // d(x/|x|) = (g - y (y.g)) / |x|
                            let yg: T = yrow.iter().zip(grow).map(|(&a, &b)| a * b).sum();
                            for ((o, &gv), &yv) in srow.iter_mut().zip(grow).zip(yrow) {
                                *o += (gv - yv * yg) / norm;
                            }
                        } else {
                            for (o, &gv) in srow.iter_mut().zip(grow) {
                                *o += gv / eps;
                            }
                        }
                    }
                });
            }
            &Op::LogSoftmaxRows { x, n } => self.with(grads, x, |s| {
                for ((srow, grow), yrow) in s
                    .chunks_exact_mut(n)
                    .zip(g.chunks_exact(n))
                    .zip(out.chunks_exact(n))
                {
                    let gsum: T = grow.iter().copied().sum();
                    for ((o, &gv), &yv) in srow.iter_mut().zip(grow).zip(yrow) {
                        *o += gv - yv.exp() * gsum;
                    }
                }
            }),
            Op::GatherCols { x, idx, n } => self.with(grads, *x, |s| {
                for (i, (&j, &gv)) in idx.iter().zip(g).enumerate() {
                    s[i * n + j] += gv;
                }
            }),
            &Op::TanhLogJacobian(x) => {
                let xd = self.data(x);
                self.with(grads, x, |s| {
                    for ((o, &gv), &xv) in s.iter_mut().zip(g).zip(xd) {
                        *o -= T::lit(2.0) * xv.tanh() * gv;
                    }
                });
            }
            &Op::Conv2d { x, w, b, geom } => {
                assert!(x != w && x != b && w != b, "conv2d: inputs must be distinct nodes");
                let mut gx = self.take(grads, x);
                let mut gw = self.take(grads, w);
                let mut gb = self.take(grads, b);
                kernels::conv2d_backward(
                    self.data(x),
                    self.data(w),
                    g,
                    &geom,
                    gx.as_deref_mut(),
                    gw.as_deref_mut(),
                    gb.as_deref_mut(),
                );
                Self::put(grads, x, gx);
                Self::put(grads, w, gw);
                Self::put(grads, b, gb);
            }
            Op::SparseConv { x, w, b, book, cin, cout } => {
                let (x, w, b) = (*x, *w, *b);
                assert!(x != w && x != b && w != b, "sparse_conv: inputs must be distinct nodes");
                let mut gx = self.take(grads, x);
                let mut gw = self.take(grads, w);
                let mut gb = self.take(grads, b);
                kernels::sparse_conv_backward(
                    self.data(x),
                    self.data(w),
                    g,
                    book,
                    *cin,
                    *cout,
                    gx.as_deref_mut(),
                    gw.as_deref_mut(),
                    gb.as_deref_mut(),
                );
                Self::put(grads, x, gx);
                Self::put(grads, w, gw);
                Self::put(grads, b, gb);
            }
            Op::Scatter { x, cells, c } => self.with(grads, *x, |s| {
                for (i, &cell) in cells.iter().enumerate() {
                    add_into(&mut s[i * c..(i + 1) * c], &g[cell * c..(cell + 1) * c]);
                }
            }),
            Op::GlobalMaxPool { x, argmax } => self.with(grads, *x, |s| {
                for (&j, &gv) in argmax.iter().zip(g) {
                    s[j] += gv;
                }
            }),
            &Op::Reshape(x) => self.with(grads, x, |s| add_into(s, g)),
        }
    }
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
