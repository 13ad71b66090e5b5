//! Raw forward/backward loops used by the tape. All image tensors are NHWC
//! and all convolution weights are laid out `[kh, kw, cin, cout]`, so the
//! innermost loop always runs over a contiguous output-channel slice.

use super::Scalar;

#[inline]
fn axpy<T: Scalar>(out: &mut [T], a: T, x: &[T]) {
    for (o, &v) in out.iter_mut().zip(x) {
        *o += a * v;
    }
}

#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut lanes = [T::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            lanes[l] += x[l] * y[l];
        }
    }
    let mut acc = T::zero();
    for (&x, &y) in ra.iter().zip(rb) {
        acc += x * y;
    }
    lanes.iter().fold(acc, |s, &l| s + l)
}

/// `out[m,n] = a[m,k] · b[k,n]`, accumulated into `out`.
pub fn matmul_acc<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av != T::zero() {
                axpy(row, av, &b[p * n..(p + 1) * n]);
            }
        }
    }
}

/// Gradients of `out = a·b` given `g = ∂L/∂out`.
#[allow(clippy::too_many_arguments)]
pub fn matmul_backward<T: Scalar>(
    a: &[T],
    b: &[T],
    g: &[T],
    ga: Option<&mut [T]>,
    gb: Option<&mut [T]>,
    m: usize,
    k: usize,
    n: usize,
) {
    if let Some(ga) = ga {
        for i in 0..m {
            let grow = &g[i * n..(i + 1) * n];
            for p in 0..k {
                ga[i * k + p] += dot(grow, &b[p * n..(p + 1) * n]);
            }
        }
    }
    if let Some(gb) = gb {
        for i in 0..m {
            let grow = &g[i * n..(i + 1) * n];
            for p in 0..k {
                let av = a[i * k + p];
                if av != T::zero() {
                    axpy(&mut gb[p * n..(p + 1) * n], av, grow);
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub cin: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_hw(&self) -> (usize, usize) {
        (
            conv_out_len(self.h, self.kh, self.stride, self.pad),
            conv_out_len(self.w, self.kw, self.stride, self.pad),
        )
    }
}

pub fn conv_out_len(len: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    assert!(len + 2 * pad >= kernel, "kernel larger than padded input");
    (len + 2 * pad - kernel) / stride + 1
}

/// Dense 2-D convolution (cross-correlation), NHWC.
pub fn conv2d_forward<T: Scalar>(x: &[T], wgt: &[T], bias: &[T], g: &ConvGeom) -> Vec<T> {
    let (ho, wo) = g.out_hw();
    let mut out = vec![T::zero(); g.n * ho * wo * g.cout];
    for b in 0..g.n {
        for oy in 0..ho {
            for ox in 0..wo {
                let o_off = ((b * ho + oy) * wo + ox) * g.cout;
                let orow = &mut out[o_off..o_off + g.cout];
                orow.copy_from_slice(bias);
                for ky in 0..g.kh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    for kx in 0..g.kw {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix < 0 || ix >= g.w as isize {
                            continue;
                        }
                        let i_off = ((b * g.h + iy as usize) * g.w + ix as usize) * g.cin;
                        let k_off = (ky * g.kw + kx) * g.cin * g.cout;
                        for ci in 0..g.cin {
                            let a = x[i_off + ci];
                            if a != T::zero() {
                                let w0 = k_off + ci * g.cout;
                                axpy(orow, a, &wgt[w0..w0 + g.cout]);
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

pub fn conv2d_backward<T: Scalar>(
    x: &[T],
    wgt: &[T],
    gout: &[T],
    g: &ConvGeom,
    gx: Option<&mut [T]>,
    gw: Option<&mut [T]>,
    gb: Option<&mut [T]>,
) {
    if let Some(gb) = gb {
        for row in gout.chunks_exact(g.cout) {
            for (b, &v) in gb.iter_mut().zip(row) {
                *b += v;
            }
        }
    }
    let (cin, cout) = (g.cin, g.cout);
    if let Some(gx) = gx {
        conv_taps(g, |o_off, i_off, k_off| {
            let grow = &gout[o_off..o_off + cout];
            for (ci, gxi) in gx[i_off..i_off + cin].iter_mut().enumerate() {
                let w0 = k_off + ci * cout;
                *gxi += dot(grow, &wgt[w0..w0 + cout]);
            }
        });
    }
    if let Some(gw) = gw {
        conv_taps(g, |o_off, i_off, k_off| {
            let grow = &gout[o_off..o_off + cout];
            for (ci, &a) in x[i_off..i_off + cin].iter().enumerate() {
                if a != T::zero() {
                    let w0 = k_off + ci * cout;
                    axpy(&mut gw[w0..w0 + cout], a, grow);
                }
            }
        });
    }
}

/// Calls `f(out_offset, in_offset, weight_offset)` for every in-bounds
/// (output pixel, kernel tap) pair.
#[inline]
fn conv_taps(g: &ConvGeom, mut f: impl FnMut(usize, usize, usize)) {
    let (ho, wo) = g.out_hw();
    for b in 0..g.n {
        for oy in 0..ho {
            for ox in 0..wo {
                let o_off = ((b * ho + oy) * wo + ox) * g.cout;
                for ky in 0..g.kh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    for kx in 0..g.kw {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix < 0 || ix >= g.w as isize {
                            continue;
                        }
                        let i_off = ((b * g.h + iy as usize) * g.w + ix as usize) * g.cin;
                        f(o_off, i_off, (ky * g.kw + kx) * g.cin * g.cout);
                    }
                }
            }
        }
    }
}

/// One entry of a sparse-convolution rulebook: input site `input`
/// contributes to output site `output` through kernel tap `tap`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Rule {
    pub output: u32,
    pub tap: u16,
    pub input: u32,
}

/// Site-to-site mapping for a sparse convolution. Rules are sorted by
/// `(output, tap)`, which matches the accumulation order of
/// [`conv2d_forward`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rulebook {
    pub n_in: usize,
    pub n_out: usize,
    pub taps: usize,
    pub rules: Vec<Rule>,
}

pub fn sparse_conv_forward<T: Scalar>(
    x: &[T],
    wgt: &[T],
    bias: &[T],
    book: &Rulebook,
    cin: usize,
    cout: usize,
) -> Vec<T> {
    let mut out = vec![T::zero(); book.n_out * cout];
    for row in out.chunks_exact_mut(cout) {
        row.copy_from_slice(bias);
    }
    for r in &book.rules {
        let o = r.output as usize * cout;
        let i = r.input as usize * cin;
        let k = r.tap as usize * cin * cout;
        let orow = &mut out[o..o + cout];
        for ci in 0..cin {
            let a = x[i + ci];
            if a != T::zero() {
                axpy(orow, a, &wgt[k + ci * cout..k + (ci + 1) * cout]);
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub fn sparse_conv_backward<T: Scalar>(
    x: &[T],
    wgt: &[T],
    gout: &[T],
    book: &Rulebook,
    cin: usize,
    cout: usize,
    gx: Option<&mut [T]>,
    gw: Option<&mut [T]>,
    gb: Option<&mut [T]>,
) {
    if let Some(gb) = gb {
        for row in gout.chunks_exact(cout) {
            for (b, &v) in gb.iter_mut().zip(row) {
                *b += v;
            }
        }
    }
    if let Some(gx) = gx {
        for r in &book.rules {
            let (o, i) = (r.output as usize * cout, r.input as usize * cin);
            let k = r.tap as usize * cin * cout;
            let grow = &gout[o..o + cout];
            for (ci, gxi) in gx[i..i + cin].iter_mut().enumerate() {
                *gxi += dot(grow, &wgt[k + ci * cout..k + (ci + 1) * cout]);
            }
        }
    }
    if let Some(gw) = gw {
        for r in &book.rules {
            let (o, i) = (r.output as usize * cout, r.input as usize * cin);
            let k = r.tap as usize * cin * cout;
            let grow = &gout[o..o + cout];
            for (ci, &a) in x[i..i + cin].iter().enumerate() {
                if a != T::zero() {
                    axpy(&mut gw[k + ci * cout..k + (ci + 1) * cout], a, grow);
                }
            }
        }
    }
}
