//! 2D convolution via im2col and `dgemm`.

use super::{BackwardCtx, Graph, Var};
use crate::tensor::Tensor;

pub fn conv_output_size(input: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - kernel) / stride + 1
}

#[derive(Clone, Copy)]
struct Geom {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geom {
    fn rows(&self) -> usize {
        self.c * self.k * self.k
    }
    fn cols(&self) -> usize {
        self.ho * self.wo
    }
}

/// Output columns `ox` in `lo..hi` read inside the input row for kernel column `kj`.
#[inline]
fn valid_cols(g: &Geom, kj: usize) -> (usize, usize) {
    let lo = g.pad.saturating_sub(kj).div_ceil(g.stride).min(g.wo);
    let hi = if g.w + g.pad > kj {
        ((g.w + g.pad - kj - 1) / g.stride + 1).min(g.wo)
    } else {
        0
    };
    (lo, hi.max(lo))
}

fn im2col(x: &[f64], g: Geom, cols: &mut [f64]) {
    let p = g.cols();
    for c in 0..g.c {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                let (lo, hi) = valid_cols(&g, kj);
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let out = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        out.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    out[..lo].fill(0.0);
                    out[hi..].fill(0.0);
                    if lo == hi {
                        continue;
                    }
                    let first = lo * g.stride + kj - g.pad;
                    if g.stride == 1 {
                        out[lo..hi].copy_from_slice(&src[first..first + hi - lo]);
                    } else {
                        for (o, v) in out[lo..hi]
                            .iter_mut()
                            .zip(src[first..].iter().step_by(g.stride))
                        {
                            *o = *v;
                        }
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f64], g: Geom, x: &mut [f64]) {
    let p = g.cols();
    for c in 0..g.c {
        let plane = &mut x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let src = &cols[row * p..(row + 1) * p];
                let (lo, hi) = valid_cols(&g, kj);
                if lo == hi {
                    continue;
                }
                let first = lo * g.stride + kj - g.pad;
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let s = &src[oy * g.wo + lo..oy * g.wo + hi];
                    if g.stride == 1 {
                        for (d, v) in dst[first..first + hi - lo].iter_mut().zip(s) {
                            *d += v;
                        }
                    } else {
                        for (d, v) in dst[first..].iter_mut().step_by(g.stride).zip(s) {
                            *d += v;
                        }
                    }
                }
            }
        }
    }
}

/// `c = alpha * a(m×k) · b(k×n) + beta * c`, with explicit strides.
#[allow(clippy::too_many_arguments)]
#[inline]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(a.len() > (m - 1) * rsa + (k - 1) * csa);
    debug_assert!(b.len() > (k - 1) * rsb + (n - 1) * csb);
    debug_assert!(c.len() >= m * n);
    // SAFETY: the slices cover every index addressed by the given
    // dimensions and strides (checked above in debug builds) and `c` does
    // not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn geometry(x: &Tensor, w: &Tensor, stride: usize, pad: usize) -> (usize, usize, Geom) {
    let (n, c, h, wd) = x.dims4();
    let (o, wc, k, k2) = w.dims4();
    assert_eq!(c, wc, "conv2d channel mismatch: input {c}, weight {wc}");
    assert_eq!(k, k2, "conv2d expects square kernels");
    assert!(
        h + 2 * pad >= k && wd + 2 * pad >= k,
        "conv2d input smaller than kernel"
    );
    let g = Geom {
        c,
        h,
        w: wd,
        k,
        stride,
        pad,
        ho: conv_output_size(h, k, stride, pad),
        wo: conv_output_size(wd, k, stride, pad),
    };
    (n, o, g)
}

/// Plain forward convolution, no tape.
pub fn conv2d_forward(
    x: &Tensor,
    w: &Tensor,
    b: Option<&Tensor>,
    stride: usize,
    pad: usize,
) -> Tensor {
    let (n, o, g) = geometry(x, w, stride, pad);
    let (kk, p) = (g.rows(), g.cols());
    let in_sz = g.c * g.h * g.w;
    let mut out = Tensor::zeros(&[n, o, g.ho, g.wo]);
    let mut cols = vec![0.0; kk * p];
    for s in 0..n {
        im2col(&x.data()[s * in_sz..(s + 1) * in_sz], g, &mut cols);
        let dst = &mut out.data_mut()[s * o * p..(s + 1) * o * p];
        if let Some(b) = b {
            for (oc, row) in dst.chunks_mut(p).enumerate() {
                row.fill(b.data()[oc]);
            }
        }
        let beta = if b.is_some() { 1.0 } else { 0.0 };
        gemm(o, kk, p, w.data(), (kk, 1), &cols, (p, 1), beta, dst);
    }
    out
}

impl Graph {
    /// Cross-correlation of `x` (N×C×H×W) with `w` (O×C×k×k) plus optional bias (O).
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Var {
        let out = conv2d_forward(
            self.value(x),
            self.value(w),
            b.map(|b| self.value(b)),
            stride,
            pad,
        );
        let mut parents = vec![x, w];
        parents.extend(b);
        self.push(
            out,
            &parents,
            Box::new(move |ctx: &BackwardCtx| conv2d_backward(ctx, stride, pad)),
        )
    }
}

fn conv2d_backward(ctx: &BackwardCtx, stride: usize, pad: usize) -> Vec<Option<Tensor>> {
    let (x, w) = (ctx.inputs[0], ctx.inputs[1]);
    let (n, o, g) = geometry(x, w, stride, pad);
    let (kk, p) = (g.rows(), g.cols());
    let in_sz = g.c * g.h * g.w;
    let gout = ctx.grad.data();

    let need_x = ctx.needs[0];
    let need_w = ctx.needs[1];
    let need_b = ctx.needs.get(2).copied().unwrap_or(false);

    let mut dx = need_x.then(|| Tensor::zeros(x.shape()));
    let mut dw = need_w.then(|| Tensor::zeros(w.shape()));
    let mut db = need_b.then(|| Tensor::zeros(&[o]));
    let mut cols = vec![0.0; kk * p];
    let mut dcols = vec![0.0; if need_x { kk * p } else { 0 }];

    for s in 0..n {
        let go = &gout[s * o * p..(s + 1) * o * p];
        if let Some(db) = db.as_mut() {
            for (oc, row) in go.chunks(p).enumerate() {
                db.data_mut()[oc] += row.iter().sum::<f64>();
            }
        }
        if let Some(dw) = dw.as_mut() {
            im2col(&x.data()[s * in_sz..(s + 1) * in_sz], g, &mut cols);
            // dw(o×kk) += go(o×p) · colsᵀ(p×kk)
            gemm(o, p, kk, go, (p, 1), &cols, (1, p), 1.0, dw.data_mut());
        }
        if let Some(dx) = dx.as_mut() {
            // dcols(kk×p) = wᵀ(kk×o) · go(o×p)
            gemm(kk, o, p, w.data(), (1, kk), go, (p, 1), 0.0, &mut dcols);
            col2im(&dcols, g, &mut dx.data_mut()[s * in_sz..(s + 1) * in_sz]);
        }
    }
    let mut grads = vec![dx, dw];
    if ctx.inputs.len() > 2 {
        grads.push(db);
    }
    grads
}
