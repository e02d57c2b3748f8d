use rand::Rng;

use super::{BackwardCtx, Graph, Var};
use crate::tensor::Tensor;

/// Source taps for one output coordinate of an align-corners=false bilinear resize.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Tap {
    pub i0: usize,
    pub i1: usize,
    pub w0: f64,
    pub w1: f64,
}

pub(crate) fn bilinear_taps(input: usize, output: usize) -> Vec<Tap> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            let frac = src - i0 as f64;
            Tap {
                i0,
                i1,
                w0: 1.0 - frac,
                w1: frac,
            }
        })
        .collect()
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

impl Graph {
    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(
            out,
            &[a, b],
            Box::new(|ctx: &BackwardCtx| vec![Some(ctx.grad.clone()), Some(ctx.grad.clone())]),
        )
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        let out = self.value(x).scale(k);
        self.push(
            out,
            &[x],
            Box::new(move |ctx: &BackwardCtx| vec![Some(ctx.grad.scale(k))]),
        )
    }

    /// Elementwise product with a constant tensor of the same shape.
    pub fn mul_const(&mut self, x: Var, c: Tensor) -> Var {
        let out = self.value(x).zip_map(&c, |a, b| a * b);
        self.push(
            out,
            &[x],
            Box::new(move |ctx: &BackwardCtx| vec![Some(ctx.grad.zip_map(&c, |g, b| g * b))]),
        )
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        self.push(
            out,
            &[x],
            Box::new(|ctx: &BackwardCtx| {
                vec![Some(Tensor::full(
                    ctx.inputs[0].shape(),
                    ctx.grad.data()[0],
                ))]
            }),
        )
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len() as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let out = self.value(x).clone().reshape(shape);
        self.push(
            out,
            &[x],
            Box::new(|ctx: &BackwardCtx| {
                vec![Some(ctx.grad.clone().reshape(ctx.inputs[0].shape()))]
            }),
        )
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        self.push(
            out,
            &[x],
            Box::new(|ctx: &BackwardCtx| {
                vec![Some(ctx.grad.zip_map(ctx.output, |g, s| g * s * (1.0 - s)))]
            }),
        )
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let out = self.value(x).map(|v| if v > 0.0 { v } else { slope * v });
        self.push(
            out,
            &[x],
            Box::new(move |ctx: &BackwardCtx| {
                vec![Some(ctx.grad.zip_map(ctx.inputs[0], |g, v| {
                    if v > 0.0 {
                        g
                    } else {
                        slope * g
                    }
                }))]
            }),
        )
    }

    /// Elementwise clamp; the gradient passes only where the input lies inside `[lo, hi]`.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let out = self.value(x).map(|v| v.clamp(lo, hi));
        self.push(
            out,
            &[x],
            Box::new(move |ctx: &BackwardCtx| {
                vec![Some(ctx.grad.zip_map(ctx.inputs[0], |g, v| {
                    if (lo..=hi).contains(&v) {
                        g
                    } else {
                        0.0
                    }
                }))]
            }),
        )
    }

    /// Identity forward; backward multiplies the upstream gradient by `-lambda`.
    pub fn grad_reverse(&mut self, x: Var, lambda: f64) -> Var {
        assert!(
            lambda >= 0.0,
            "gradient reversal coefficient must be non-negative"
        );
        let out = self.value(x).clone();
        self.push(
            out,
            &[x],
            Box::new(move |ctx: &BackwardCtx| vec![Some(ctx.grad.map(|g| -lambda * g))]),
        )
    }

    /// Per-sample, per-channel normalization over the spatial axes (no affine).
    pub fn instance_norm(&mut self, x: Var, eps: f64) -> Var {
        let xt = self.value(x);
        let (n, c, h, w) = xt.dims4();
        let hw = (h * w) as f64;
        let mut out = Tensor::zeros(xt.shape());
        let mut inv_std = vec![0.0; n * c];
        for s in 0..n {
            for ch in 0..c {
                let plane = xt.plane(s, ch);
                let mean = plane.iter().sum::<f64>() / hw;
                let var = plane.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / hw;
                let is = 1.0 / (var + eps).sqrt();
                inv_std[s * c + ch] = is;
                for (o, v) in out.plane_mut(s, ch).iter_mut().zip(plane) {
                    *o = (v - mean) * is;
                }
            }
        }
        self.push(
            out,
            &[x],
            Box::new(move |ctx: &BackwardCtx| {
                let y = ctx.output;
                let mut dx = Tensor::zeros(y.shape());
                for s in 0..n {
                    for ch in 0..c {
                        let g = ctx.grad.plane(s, ch);
                        let yp = y.plane(s, ch);
                        let mg = g.iter().sum::<f64>() / hw;
                        let mgy = g.iter().zip(yp).map(|(a, b)| a * b).sum::<f64>() / hw;
                        let is = inv_std[s * c + ch];
                        for ((d, gv), yv) in dx.plane_mut(s, ch).iter_mut().zip(g).zip(yp) {
                            *d = is * (gv - mg - yv * mgy);
                        }
                    }
                }
                vec![Some(dx)]
            }),
        )
    }

    /// Batch normalization with batch statistics. Returns the output together
    /// with the per-channel batch mean and biased variance.
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> (Var, Vec<f64>, Vec<f64>) {
        let xt = self.value(x);
        let (n, c, h, w) = xt.dims4();
        let count = (n * h * w) as f64;
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for ch in 0..c {
            let m = (0..n)
                .map(|s| xt.plane(s, ch).iter().sum::<f64>())
                .sum::<f64>()
                / count;
            let v = (0..n)
                .map(|s| {
                    xt.plane(s, ch)
                        .iter()
                        .map(|v| (v - m) * (v - m))
                        .sum::<f64>()
                })
                .sum::<f64>()
                / count;
            mean[ch] = m;
            var[ch] = v;
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = Tensor::zeros(xt.shape());
        for s in 0..n {
            for ch in 0..c {
                let (m, is) = (mean[ch], inv_std[ch]);
                for (o, v) in xhat.plane_mut(s, ch).iter_mut().zip(xt.plane(s, ch)) {
                    *o = (v - m) * is;
                }
            }
        }
        let (gt, bt) = (self.value(gamma).data().to_vec(), self.value(beta).data());
        let mut out = xhat.clone();
        for s in 0..n {
            for ch in 0..c {
                let (gv, bv) = (gt[ch], bt[ch]);
                out.plane_mut(s, ch)
                    .iter_mut()
                    .for_each(|o| *o = *o * gv + bv);
            }
        }
        let y = self.push(
            out,
            &[x, gamma, beta],
            Box::new(move |ctx: &BackwardCtx| {
                let g = ctx.grad;
                let gamma = ctx.inputs[1].data();
                let mut dgamma = Tensor::zeros(&[c]);
                let mut dbeta = Tensor::zeros(&[c]);
                let mut dx = Tensor::zeros(g.shape());
                for ch in 0..c {
                    let mut sg = 0.0;
                    let mut sgx = 0.0;
                    for s in 0..n {
                        for (gv, xv) in g.plane(s, ch).iter().zip(xhat.plane(s, ch)) {
                            sg += gv;
                            sgx += gv * xv;
                        }
                    }
                    dbeta.data_mut()[ch] = sg;
                    dgamma.data_mut()[ch] = sgx;
                    let k = gamma[ch] * inv_std[ch];
                    let (mg, mgx) = (sg / count, sgx / count);
                    for s in 0..n {
                        let gp = g.plane(s, ch);
                        let xp = xhat.plane(s, ch);
                        for ((d, gv), xv) in dx.plane_mut(s, ch).iter_mut().zip(gp).zip(xp) {
                            *d = k * (gv - mg - xv * mgx);
                        }
                    }
                }
                vec![Some(dx), Some(dgamma), Some(dbeta)]
            }),
        );
        (y, mean, var)
    }

    /// Batch normalization with fixed (running) statistics.
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[f64],
        running_var: &[f64],
        eps: f64,
    ) -> Var {
        let xt = self.value(x);
        let (n, c, _, _) = xt.dims4();
        let inv_std: Vec<f64> = running_var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mean = running_mean.to_vec();
        let gt = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut out = xt.clone();
        for s in 0..n {
            for ch in 0..c {
                let k = gt[ch] * inv_std[ch];
                let (m, b) = (mean[ch], bt[ch]);
                out.plane_mut(s, ch)
                    .iter_mut()
                    .for_each(|o| *o = (*o - m) * k + b);
            }
        }
        self.push(
            out,
            &[x, gamma, beta],
            Box::new(move |ctx: &BackwardCtx| {
                let g = ctx.grad;
                let x = ctx.inputs[0];
                let gamma = ctx.inputs[1].data();
                let mut dx = Tensor::zeros(g.shape());
                let mut dgamma = Tensor::zeros(&[c]);
                let mut dbeta = Tensor::zeros(&[c]);
                for s in 0..n {
                    for ch in 0..c {
                        let is = inv_std[ch];
                        let k = gamma[ch] * is;
                        let gp = g.plane(s, ch);
                        for ((d, gv), xv) in
                            dx.plane_mut(s, ch).iter_mut().zip(gp).zip(x.plane(s, ch))
                        {
                            *d = gv * k;
                            dgamma.data_mut()[ch] += gv * (xv - mean[ch]) * is;
                            dbeta.data_mut()[ch] += gv;
                        }
                    }
                }
                vec![Some(dx), Some(dgamma), Some(dbeta)]
            }),
        )
    }

    /// 2×2 max pooling with stride 2. Spatial dims must be even.
    pub fn max_pool2(&mut self, x: Var) -> Var {
        let xt = self.value(x);
        let (n, c, h, w) = xt.dims4();
        assert!(
            h % 2 == 0 && w % 2 == 0,
            "max_pool2 needs even spatial dims"
        );
        let (ho, wo) = (h / 2, w / 2);
        let mut out = Tensor::zeros(&[n, c, ho, wo]);
        let mut argmax = vec![0usize; n * c * ho * wo];
        for s in 0..n {
            for ch in 0..c {
                let plane = xt.plane(s, ch);
                let base = (s * c + ch) * ho * wo;
                let op = out.plane_mut(s, ch);
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut best = 2 * oy * w + 2 * ox;
                        for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                            let idx = (2 * oy + dy) * w + 2 * ox + dx;
                            if plane[idx] > plane[best] {
                                best = idx;
                            }
                        }
                        op[oy * wo + ox] = plane[best];
                        argmax[base + oy * wo + ox] = best;
                    }
                }
            }
        }
        self.push(
            out,
            &[x],
            Box::new(move |ctx: &BackwardCtx| {
                let mut dx = Tensor::zeros(&[n, c, h, w]);
                for s in 0..n {
                    for ch in 0..c {
                        let base = (s * c + ch) * ho * wo;
                        let g = ctx.grad.plane(s, ch).to_vec();
                        let dp = dx.plane_mut(s, ch);
                        for (i, gv) in g.iter().enumerate() {
                            dp[argmax[base + i]] += gv;
                        }
                    }
                }
                vec![Some(dx)]
            }),
        )
    }

    /// Bilinear resize of every plane to `oh × ow` (half-pixel centres, edge clamped).
    pub fn resize_bilinear(&mut self, x: Var, oh: usize, ow: usize) -> Var {
        let xt = self.value(x);
        let (n, c, h, w) = xt.dims4();
        if (h, w) == (oh, ow) {
            return x;
        }
        let ty = bilinear_taps(h, oh);
        let tx = bilinear_taps(w, ow);
        let mut out = Tensor::zeros(&[n, c, oh, ow]);
        for s in 0..n {
            for ch in 0..c {
                let plane = xt.plane(s, ch);
                let op = out.plane_mut(s, ch);
                for (oy, a) in ty.iter().enumerate() {
                    let r0 = &plane[a.i0 * w..(a.i0 + 1) * w];
                    let r1 = &plane[a.i1 * w..(a.i1 + 1) * w];
                    for (ox, b) in tx.iter().enumerate() {
                        op[oy * ow + ox] = a.w0 * (b.w0 * r0[b.i0] + b.w1 * r0[b.i1])
                            + a.w1 * (b.w0 * r1[b.i0] + b.w1 * r1[b.i1]);
                    }
                }
            }
        }
        self.push(
            out,
            &[x],
            Box::new(move |ctx: &BackwardCtx| {
                let mut dx = Tensor::zeros(&[n, c, h, w]);
                for s in 0..n {
                    for ch in 0..c {
                        let g = ctx.grad.plane(s, ch).to_vec();
                        let dp = dx.plane_mut(s, ch);
                        for (oy, a) in ty.iter().enumerate() {
                            for (ox, b) in tx.iter().enumerate() {
                                let gv = g[oy * ow + ox];
                                dp[a.i0 * w + b.i0] += a.w0 * b.w0 * gv;
                                dp[a.i0 * w + b.i1] += a.w0 * b.w1 * gv;
                                dp[a.i1 * w + b.i0] += a.w1 * b.w0 * gv;
                                dp[a.i1 * w + b.i1] += a.w1 * b.w1 * gv;
                            }
                        }
                    }
                }
                vec![Some(dx)]
            }),
        )
    }

    /// Concatenate NCHW tensors along the channel axis.
    pub fn concat_channels(&mut self, xs: &[Var]) -> Var {
        assert!(!xs.is_empty());
        let (n, _, h, w) = self.value(xs[0]).dims4();
        let chans: Vec<usize> = xs
            .iter()
            .map(|&v| {
                let (vn, vc, vh, vw) = self.value(v).dims4();
                assert_eq!((vn, vh, vw), (n, h, w), "concat_channels shape mismatch");
                vc
            })
            .collect();
        let total: usize = chans.iter().sum();
        let hw = h * w;
        let mut out = Tensor::zeros(&[n, total, h, w]);
        for s in 0..n {
            let mut off = 0;
            for (&v, &cc) in xs.iter().zip(&chans) {
                let src = &self.value(v).data()[s * cc * hw..(s + 1) * cc * hw];
                let dst = (s * total + off) * hw;
                out.data_mut()[dst..dst + cc * hw].copy_from_slice(src);
                off += cc;
            }
        }
        self.push(
            out,
            xs,
            Box::new(move |ctx: &BackwardCtx| {
                let mut grads = Vec::with_capacity(chans.len());
                let mut off = 0;
                for (i, &cc) in chans.iter().enumerate() {
                    if !ctx.needs[i] {
                        grads.push(None);
                        off += cc;
                        continue;
                    }
                    let mut d = Tensor::zeros(&[n, cc, h, w]);
                    for s in 0..n {
                        let src = (s * total + off) * hw;
                        d.data_mut()[s * cc * hw..(s + 1) * cc * hw]
                            .copy_from_slice(&ctx.grad.data()[src..src + cc * hw]);
                    }
                    grads.push(Some(d));
                    off += cc;
                }
                grads
            }),
        )
    }

    /// Rows `start..start+len` along the batch axis.
    pub fn narrow_batch(&mut self, x: Var, start: usize, len: usize) -> Var {
        let out = self.value(x).narrow_batch(start, len);
        self.push(
            out,
            &[x],
            Box::new(move |ctx: &BackwardCtx| {
                let inp = ctx.inputs[0];
                let row: usize = inp.shape()[1..].iter().product();
                let mut d = Tensor::zeros(inp.shape());
                d.data_mut()[start * row..(start + len) * row].copy_from_slice(ctx.grad.data());
                vec![Some(d)]
            }),
        )
    }

    pub fn cat_batch(&mut self, xs: &[Var]) -> Var {
        let parts: Vec<&Tensor> = xs.iter().map(|&v| self.value(v)).collect();
        let sizes: Vec<usize> = parts.iter().map(|t| t.shape()[0]).collect();
        let out = Tensor::cat_batch(&parts);
        self.push(
            out,
            xs,
            Box::new(move |ctx: &BackwardCtx| {
                let mut start = 0;
                sizes
                    .iter()
                    .enumerate()
                    .map(|(i, &len)| {
                        let g = ctx.needs[i].then(|| ctx.grad.narrow_batch(start, len));
                        start += len;
                        g
                    })
                    .collect()
            }),
        )
    }

    /// `x (N×F) · wᵀ (F×O) + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let (xt, wt, bt) = (self.value(x), self.value(w), self.value(b));
        let (n, f) = (xt.shape()[0], xt.shape()[1]);
        let o = wt.shape()[0];
        assert_eq!(wt.shape()[1], f, "linear: feature mismatch");
        let mut out = Tensor::zeros(&[n, o]);
        for s in 0..n {
            let xr = &xt.data()[s * f..(s + 1) * f];
            for k in 0..o {
                let wr = &wt.data()[k * f..(k + 1) * f];
                out.data_mut()[s * o + k] =
                    bt.data()[k] + xr.iter().zip(wr).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        self.push(
            out,
            &[x, w, b],
            Box::new(move |ctx: &BackwardCtx| {
                let (x, w, g) = (ctx.inputs[0], ctx.inputs[1], ctx.grad);
                let mut dx = Tensor::zeros(&[n, f]);
                let mut dw = Tensor::zeros(&[o, f]);
                let mut db = Tensor::zeros(&[o]);
                for s in 0..n {
                    let xr = &x.data()[s * f..(s + 1) * f];
                    for k in 0..o {
                        let gv = g.data()[s * o + k];
                        if gv == 0.0 {
                            continue;
                        }
                        db.data_mut()[k] += gv;
                        let wr = &w.data()[k * f..(k + 1) * f];
                        let dxr = &mut dx.data_mut()[s * f..(s + 1) * f];
                        for (d, wv) in dxr.iter_mut().zip(wr) {
                            *d += gv * wv;
                        }
                        let dwr = &mut dw.data_mut()[k * f..(k + 1) * f];
                        for (d, xv) in dwr.iter_mut().zip(xr) {
                            *d += gv * xv;
                        }
                    }
                }
                vec![Some(dx), Some(dw), Some(db)]
            }),
        )
    }

    /// Inverted dropout: zero with probability `p`, scale survivors by `1/(1-p)`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, rng: &mut R) -> Var {
        assert!((0.0..1.0).contains(&p));
        if p == 0.0 {
            return x;
        }
        let keep = 1.0 / (1.0 - p);
        let mask = Tensor::from_fn(self.value(x).shape(), |_| {
            if rng.random::<f64>() < p {
                0.0
            } else {
                keep
            }
        });
        self.mul_const(x, mask)
    }
}
