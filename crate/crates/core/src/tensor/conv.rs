//! Image ops on `B×C×H×W` tensors.

use super::graph::Var;
use super::kernels::transpose2;
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

fn dims4<T: Scalar>(op: &'static str, x: &Tensor<T>) -> Result<[usize; 4]> {
    match *x.shape() {
        [b, c, h, w] => Ok([b, c, h, w]),
        _ => Err(Error::dim(op, format!("expected B×C×H×W, got {:?}", x.shape()))),
    }
}

struct ConvGeom {
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    /// Output positions `(k, o)` that read input coordinate `i` through
    /// kernel offset `k`, along one axis.
    fn taps(&self, i: usize, k_len: usize, o_len: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..k_len).filter_map(move |k| {
            let t = (i + self.pad).checked_sub(k)?;
            if t % self.stride != 0 || t / self.stride >= o_len {
                return None;
            }
            Some((k, t / self.stride))
        })
    }

    fn rows(&self, iy: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.taps(iy, self.kh, self.oh)
    }

    fn cols(&self, ix: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.taps(ix, self.kw, self.ow)
    }
}

/// Running per-channel statistics of a batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormStats<T: Scalar = f64> {
    pub mean: Tensor<T>,
    pub var: Tensor<T>,
}

impl<T: Scalar> BatchNormStats<T> {
    pub fn new(channels: usize) -> Self {
        BatchNormStats {
            mean: Tensor::zeros(vec![channels]),
            var: Tensor::ones(vec![channels]),
        }
    }
}

impl<'g, T: Scalar> Var<'g, T> {
    /// 2-D cross-correlation with zero padding.
    ///
    /// `self` is `B×C×H×W`, `weight` is `F×C×kh×kw`, `bias` is `F`.
    pub fn conv2d(
        self,
        weight: Var<'g, T>,
        bias: Var<'g, T>,
        stride: usize,
        pad: usize,
    ) -> Result<Var<'g, T>> {
        self.same_graph(&weight, "conv2d")?;
        self.same_graph(&bias, "conv2d")?;
        let (x, wt, bs) = (self.value(), weight.value(), bias.value());
        let [b, c, h, w] = dims4("conv2d", &x)?;
        let [f, wc, kh, kw] = dims4("conv2d", &wt)?;
        if wc != c {
            return Err(Error::dim(
                "conv2d",
                format!("weight {:?} expects {wc} channels, input {:?} has {c}", wt.shape(), x.shape()),
            ));
        }
        if bs.shape() != [f] {
            return Err(Error::dim(
                "conv2d",
                format!("bias {:?} must be [{f}]", bs.shape()),
            ));
        }
        if stride == 0 {
            return Err(Error::dim("conv2d", "stride must be >= 1"));
        }
        if kh > h + 2 * pad || kw > w + 2 * pad {
            return Err(Error::dim(
                "conv2d",
                format!("kernel {kh}×{kw} larger than padded input {}×{}", h + 2 * pad, w + 2 * pad),
            ));
        }
        let geom = ConvGeom {
            kh,
            kw,
            stride,
            pad,
            oh: (h + 2 * pad - kh) / stride + 1,
            ow: (w + 2 * pad - kw) / stride + 1,
        };
        let (oh, ow) = (geom.oh, geom.ow);
        let plane = oh * ow;
        let taps = c * kh * kw;
        // Direct convolution, scattering each nonzero input pixel into the
        // outputs it touches. Filters and accumulators are channels-last so
        // the inner loop runs over output channels; binary chart inputs are
        // mostly zeros and cost almost nothing.
        let wr = transpose2(wt.data(), f, taps);
        let mut out = vec![T::zero(); b * f * plane];
        let mut acc = vec![T::zero(); plane * f];
        for n in 0..b {
            let img = &x.data()[n * c * h * w..(n + 1) * c * h * w];
            acc.fill(T::zero());
            for ci in 0..c {
                for iy in 0..h {
                    for ix in 0..w {
                        let v = img[(ci * h + iy) * w + ix];
                        if v == T::zero() {
                            continue;
                        }
                        for (ki, oy) in geom.rows(iy) {
                            for (kj, ox) in geom.cols(ix) {
                                let tap = (ci * kh + ki) * kw + kj;
                                let wrow = &wr[tap * f..(tap + 1) * f];
                                let arow = &mut acc[(oy * ow + ox) * f..(oy * ow + ox + 1) * f];
                                for (a, &wv) in arow.iter_mut().zip(wrow) {
                                    *a += v * wv;
                                }
                            }
                        }
                    }
                }
            }
            let dst = &mut out[n * f * plane..(n + 1) * f * plane];
            for (fi, o_plane) in dst.chunks_mut(plane).enumerate() {
                let bias = bs.data()[fi];
                for (p, o) in o_plane.iter_mut().enumerate() {
                    *o = bias + acc[p * f + fi];
                }
            }
        }
        let need_dx = self.requires_grad();
        let out_shape = vec![b, f, oh, ow];
        self.graph.push(
            "conv2d",
            Tensor::from_parts(out_shape, out),
            &[self, weight, bias],
            Box::new(move |g| {
                let mut dx = vec![T::zero(); b * c * h * w];
                let mut dwr = vec![T::zero(); taps * f];
                let mut db = vec![T::zero(); f];
                let mut gcl = vec![T::zero(); plane * f];
                for n in 0..b {
                    let gn = &g.data()[n * f * plane..(n + 1) * f * plane];
                    for (fi, g_plane) in gn.chunks(plane).enumerate() {
                        db[fi] += g_plane.iter().copied().sum::<T>();
                        for (p, &gv) in g_plane.iter().enumerate() {
                            gcl[p * f + fi] = gv;
                        }
                    }
                    let img = &x.data()[n * c * h * w..(n + 1) * c * h * w];
                    let dimg = &mut dx[n * c * h * w..(n + 1) * c * h * w];
                    for ci in 0..c {
                        for iy in 0..h {
                            for ix in 0..w {
                                let idx = (ci * h + iy) * w + ix;
                                let v = img[idx];
                                if v == T::zero() && !need_dx {
                                    continue;
                                }
                                let mut dv = T::zero();
                                for (ki, oy) in geom.rows(iy) {
                                    for (kj, ox) in geom.cols(ix) {
                                        let tap = (ci * kh + ki) * kw + kj;
                                        let grow = &gcl[(oy * ow + ox) * f..(oy * ow + ox + 1) * f];
                                        if v != T::zero() {
                                            let drow = &mut dwr[tap * f..(tap + 1) * f];
                                            for (d, &gv) in drow.iter_mut().zip(grow) {
                                                *d += v * gv;
                                            }
                                        }
                                        if need_dx {
                                            let wrow = &wr[tap * f..(tap + 1) * f];
                                            for (&wv, &gv) in wrow.iter().zip(grow) {
                                                dv += wv * gv;
                                            }
                                        }
                                    }
                                }
                                if need_dx {
                                    dimg[idx] = dv;
                                }
                            }
                        }
                    }
                }
                vec![
                    Tensor::from_parts(vec![b, c, h, w], dx),
                    Tensor::from_parts(wt.shape().to_vec(), transpose2(&dwr, taps, f)),
                    Tensor::from_parts(vec![f], db),
                ]
            }),
        )
    }

    /// Per-channel batch normalization.
    ///
    /// In training mode the batch mean and biased variance normalize the
    /// input and are blended into `stats` with weight `momentum`. In eval mode
    /// `stats` is used as-is and left untouched.
    pub fn batchnorm2d(
        self,
        gamma: Var<'g, T>,
        beta: Var<'g, T>,
        stats: &mut BatchNormStats<T>,
        training: bool,
        momentum: f64,
        eps: f64,
    ) -> Result<Var<'g, T>> {
        self.same_graph(&gamma, "batchnorm2d")?;
        self.same_graph(&beta, "batchnorm2d")?;
        let x = self.value();
        let [b, c, h, w] = dims4("batchnorm2d", &x)?;
        let (gm, bt) = (gamma.value(), beta.value());
        for (name, t) in [("gamma", &gm), ("beta", &bt), ("running mean", &stats.mean), ("running var", &stats.var)] {
            if t.shape() != [c] {
                return Err(Error::dim(
                    "batchnorm2d",
                    format!("{name} {:?} must be [{c}]", t.shape()),
                ));
            }
        }
        let hw = h * w;
        let count = b * hw;
        if training && count < 2 {
            return Err(Error::dim(
                "batchnorm2d",
                "training mode needs at least 2 values per channel",
            ));
        }
        let eps_t = T::from_f64(eps);
        let xd = x.data();
        let at = move |n: usize, ch: usize| (n * c + ch) * hw;

        let (mean, var): (Vec<T>, Vec<T>) = if training {
            let inv = T::from_f64(1.0 / count as f64);
            (0..c)
                .map(|ch| {
                    let mut s = T::zero();
                    for n in 0..b {
                        s += xd[at(n, ch)..at(n, ch) + hw].iter().copied().sum::<T>();
                    }
                    let mu = s * inv;
                    let mut v = T::zero();
                    for n in 0..b {
                        v += xd[at(n, ch)..at(n, ch) + hw]
                            .iter()
                            .map(|&e| (e - mu) * (e - mu))
                            .sum::<T>();
                    }
                    (mu, v * inv)
                })
                .unzip()
        } else {
            (stats.mean.data().to_vec(), stats.var.data().to_vec())
        };

        let mut inv_std = Vec::with_capacity(c);
        for (ch, &v) in var.iter().enumerate() {
            let denom = v + eps_t;
            if !(denom > T::zero()) {
                return Err(Error::numeric(
                    "batchnorm2d",
                    format!("channel {ch} has variance {v} and eps = {eps}"),
                ));
            }
            inv_std.push(T::one() / denom.sqrt());
        }

        let mut xhat = vec![T::zero(); x.len()];
        let mut y = vec![T::zero(); x.len()];
        for n in 0..b {
            for ch in 0..c {
                let (mu, is) = (mean[ch], inv_std[ch]);
                let (gv, bv) = (gm.data()[ch], bt.data()[ch]);
                let r = at(n, ch)..at(n, ch) + hw;
                for ((hv, yv), &xv) in xhat[r.clone()].iter_mut().zip(&mut y[r.clone()]).zip(&xd[r]) {
                    *hv = (xv - mu) * is;
                    *yv = gv * *hv + bv;
                }
            }
        }

        if training {
            let m = T::from_f64(momentum);
            let keep = T::one() - m;
            let sm = stats.mean.data_mut();
            for (r, &mu) in sm.iter_mut().zip(&mean) {
                *r = keep * *r + m * mu;
            }
            let sv = stats.var.data_mut();
            for (r, &v) in sv.iter_mut().zip(&var) {
                *r = keep * *r + m * v;
            }
        }

        let shape = x.shape().to_vec();
        self.graph.push(
            "batchnorm2d",
            Tensor::from_parts(shape.clone(), y),
            &[self, gamma, beta],
            Box::new(move |g| {
                let gd = g.data();
                let mut dx = vec![T::zero(); gd.len()];
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                let inv_n = T::from_f64(1.0 / count as f64);
                for ch in 0..c {
                    let gv = gm.data()[ch];
                    let mut sum_g = T::zero();
                    let mut sum_gh = T::zero();
                    for n in 0..b {
                        let r = at(n, ch)..at(n, ch) + hw;
                        for (&gg, &hv) in gd[r.clone()].iter().zip(&xhat[r]) {
                            sum_g += gg;
                            sum_gh += gg * hv;
                        }
                    }
                    dgamma[ch] = sum_gh;
                    dbeta[ch] = sum_g;
                    let is = inv_std[ch];
                    for n in 0..b {
                        let r = at(n, ch)..at(n, ch) + hw;
                        for ((d, &gg), &hv) in dx[r.clone()].iter_mut().zip(&gd[r.clone()]).zip(&xhat[r]) {
                            *d = if training {
                                gv * is * (gg - inv_n * sum_g - hv * inv_n * sum_gh)
                            } else {
                                gv * is * gg
                            };
                        }
                    }
                }
                vec![
                    Tensor::from_parts(shape, dx),
                    Tensor::from_parts(vec![c], dgamma),
                    Tensor::from_parts(vec![c], dbeta),
                ]
            }),
        )
    }

    /// Window maximum. Ties go to the first element in row-major window order.
    pub fn maxpool2d(self, k: usize, stride: usize) -> Result<Var<'g, T>> {
        let x = self.value();
        let [b, c, h, w] = dims4("maxpool2d", &x)?;
        if k == 0 || stride == 0 {
            return Err(Error::dim("maxpool2d", "window and stride must be >= 1"));
        }
        if k > h || k > w {
            return Err(Error::dim(
                "maxpool2d",
                format!("window {k} larger than input {h}×{w}"),
            ));
        }
        let (oh, ow) = ((h - k) / stride + 1, (w - k) / stride + 1);
        let planes = b * c;
        let mut out = Vec::with_capacity(planes * oh * ow);
        let mut argmax = Vec::with_capacity(planes * oh * ow);
        for p in 0..planes {
            let plane = &x.data()[p * h * w..(p + 1) * h * w];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = oy * stride * w + ox * stride;
                    for ky in 0..k {
                        for kx in 0..k {
                            let idx = (oy * stride + ky) * w + ox * stride + kx;
                            if plane[idx] > plane[best] {
                                best = idx;
                            }
                        }
                    }
                    out.push(plane[best]);
                    argmax.push(p * h * w + best);
                }
            }
        }
        self.graph.push(
            "maxpool2d",
            Tensor::from_parts(vec![b, c, oh, ow], out),
            &[self],
            Box::new(move |g| {
                let mut dx = vec![T::zero(); b * c * h * w];
                for (&src, &gv) in argmax.iter().zip(g.data()) {
                    dx[src] += gv;
                }
                vec![Tensor::from_parts(vec![b, c, h, w], dx)]
            }),
        )
    }

    /// Mean over the spatial axes: `B×C×H×W → B×C`.
    pub fn global_avgpool(self) -> Result<Var<'g, T>> {
        let x = self.value();
        let [b, c, h, w] = dims4("global_avgpool", &x)?;
        self.reshape(vec![b, c, h * w])?.mean_axis(2)
    }
}
