//! Naive-loop references for conv2d, maxpool2d, attention and interval_sample.
//! Each suite panics on the first mismatch beyond `TOL`.

use qdist::charts::interval_sample;
use qdist::model::attention;
use qdist::tensor::{Graph, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TOL: f64 = 1e-10;

fn rand_vec(rng: &mut ChaCha8Rng, n: usize, sparse: bool) -> Vec<f64> {
    (0..n)
        .map(|_| {
            if sparse && rng.random_bool(0.5) {
                0.0
            } else {
                rng.random_range(-1.0..1.0)
            }
        })
        .collect()
}

fn assert_close(what: &str, got: &[f64], want: &[f64]) {
    assert_eq!(got.len(), want.len(), "{what}: length");
    for (i, (g, w)) in got.iter().zip(want).enumerate() {
        assert!((g - w).abs() <= TOL, "{what}[{i}]: {g} vs {w}");
    }
}

// ---- conv2d ----

#[derive(Clone, Copy, Debug)]
struct Conv {
    b: usize,
    c: usize,
    h: usize,
    w: usize,
    f: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
}

impl Conv {
    fn out(&self) -> Option<(usize, usize)> {
        let (ph, pw) = (self.h + 2 * self.pad, self.w + 2 * self.pad);
        (self.kh <= ph && self.kw <= pw)
            .then(|| ((ph - self.kh) / self.stride + 1, (pw - self.kw) / self.stride + 1))
    }
}

/// Returns (y, dx, dw, db) for upstream gradient `gy`.
fn conv_oracle(s: Conv, x: &[f64], wt: &[f64], bias: &[f64], gy: &[f64]) -> [Vec<f64>; 4] {
    let (oh, ow) = s.out().unwrap();
    let xi = |b: usize, c: usize, y: usize, x: usize| ((b * s.c + c) * s.h + y) * s.w + x;
    let wi = |f: usize, c: usize, i: usize, j: usize| ((f * s.c + c) * s.kh + i) * s.kw + j;
    let yi = |b: usize, f: usize, y: usize, x: usize| ((b * s.f + f) * oh + y) * ow + x;
    let mut y = vec![0.0; s.b * s.f * oh * ow];
    let mut dx = vec![0.0; x.len()];
    let mut dw = vec![0.0; wt.len()];
    let mut db = vec![0.0; bias.len()];
    for b in 0..s.b {
        for f in 0..s.f {
            for oy in 0..oh {
                for ox in 0..ow {
                    let o = yi(b, f, oy, ox);
                    let mut acc = bias[f];
                    db[f] += gy[o];
                    for c in 0..s.c {
                        for i in 0..s.kh {
                            for j in 0..s.kw {
                                let iy = (oy * s.stride + i) as isize - s.pad as isize;
                                let ix = (ox * s.stride + j) as isize - s.pad as isize;
                                if iy < 0 || ix < 0 || iy >= s.h as isize || ix >= s.w as isize {
                                    continue;
                                }
                                let (iy, ix) = (iy as usize, ix as usize);
                                acc += x[xi(b, c, iy, ix)] * wt[wi(f, c, i, j)];
                                dx[xi(b, c, iy, ix)] += gy[o] * wt[wi(f, c, i, j)];
                                dw[wi(f, c, i, j)] += gy[o] * x[xi(b, c, iy, ix)];
                            }
                        }
                    }
                    y[o] = acc;
                }
            }
        }
    }
    [y, dx, dw, db]
}

fn check_conv(s: Conv, rng: &mut ChaCha8Rng, sparse: bool) {
    let x = rand_vec(rng, s.b * s.c * s.h * s.w, sparse);
    let wt = rand_vec(rng, s.f * s.c * s.kh * s.kw, false);
    let bias = rand_vec(rng, s.f, false);
    let g = Graph::new();
    let xv = g.leaf(Tensor::from_vec(vec![s.b, s.c, s.h, s.w], x.clone()).unwrap());
    let wv = g.leaf(Tensor::from_vec(vec![s.f, s.c, s.kh, s.kw], wt.clone()).unwrap());
    let bv = g.leaf(Tensor::from_vec(vec![s.f], bias.clone()).unwrap());
    let Some((oh, ow)) = s.out() else {
        assert!(xv.conv2d(wv, bv, s.stride, s.pad).is_err(), "{s:?}");
        return;
    };
    let y = xv.conv2d(wv, bv, s.stride, s.pad).unwrap();
    assert_eq!(y.shape(), vec![s.b, s.f, oh, ow], "{s:?}");
    let gy = rand_vec(rng, s.b * s.f * oh * ow, false);
    let loss = y.mul(g.constant(Tensor::from_vec(y.shape(), gy.clone()).unwrap())).unwrap().sum().unwrap();
    g.backward(loss).unwrap();
    let [ry, rdx, rdw, rdb] = conv_oracle(s, &x, &wt, &bias, &gy);
    let what = format!("{s:?}");
    assert_close(&format!("y {what}"), y.value().data(), &ry);
    assert_close(&format!("dx {what}"), g.grad(xv).unwrap().data(), &rdx);
    assert_close(&format!("dw {what}"), g.grad(wv).unwrap().data(), &rdw);
    assert_close(&format!("db {what}"), g.grad(bv).unwrap().data(), &rdb);
}

pub fn conv2d_exhaustive_small_shapes() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for h in 1..=8 {
        for w in 1..=8 {
            for kh in 1..=3 {
                for kw in 1..=3 {
                    for stride in 1..=3 {
                        for pad in 0..=2 {
                            let s = Conv { b: 1, c: 2, h, w, f: 2, kh, kw, stride, pad };
                            check_conv(s, &mut rng, (h + w) % 2 == 0);
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d_random_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for case in 0..100 {
        let s = Conv {
            b: rng.random_range(1..=4),
            c: rng.random_range(1..=8),
            h: rng.random_range(1..=8),
            w: rng.random_range(1..=8),
            f: rng.random_range(1..=8),
            kh: rng.random_range(1..=8),
            kw: rng.random_range(1..=8),
            stride: rng.random_range(1..=4),
            pad: rng.random_range(0..=3),
        };
        check_conv(s, &mut rng, case % 3 == 0);
    }
}

// ---- maxpool2d ----

/// First maximum in row-major window order.
fn maxpool_oracle(x: &[f64], planes: usize, h: usize, w: usize, k: usize, stride: usize) -> (Vec<f64>, Vec<usize>) {
    let (oh, ow) = ((h - k) / stride + 1, (w - k) / stride + 1);
    let mut y = Vec::new();
    let mut src = Vec::new();
    for p in 0..planes {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best: Option<usize> = None;
                for i in 0..k {
                    for j in 0..k {
                        let idx = p * h * w + (oy * stride + i) * w + ox * stride + j;
                        if best.is_none_or(|b| x[idx] > x[b]) {
                            best = Some(idx);
                        }
                    }
                }
                y.push(x[best.unwrap()]);
                src.push(best.unwrap());
            }
        }
    }
    (y, src)
}

fn check_maxpool(b: usize, c: usize, h: usize, w: usize, k: usize, stride: usize, x: Vec<f64>, rng: &mut ChaCha8Rng) {
    let g = Graph::new();
    let xv = g.leaf(Tensor::from_vec(vec![b, c, h, w], x.clone()).unwrap());
    if k > h || k > w {
        assert!(xv.maxpool2d(k, stride).is_err());
        return;
    }
    let y = xv.maxpool2d(k, stride).unwrap();
    let (ry, src) = maxpool_oracle(&x, b * c, h, w, k, stride);
    assert_eq!(y.value().data(), &ry[..], "b{b} c{c} {h}x{w} k{k} s{stride}");
    let gy = rand_vec(rng, ry.len(), false);
    let loss = y.mul(g.constant(Tensor::from_vec(y.shape(), gy.clone()).unwrap())).unwrap().sum().unwrap();
    g.backward(loss).unwrap();
    let mut rdx = vec![0.0; x.len()];
    for (&s, &gv) in src.iter().zip(&gy) {
        rdx[s] += gv;
    }
    assert_close("maxpool dx", g.grad(xv).unwrap().data(), &rdx);
}

pub fn maxpool2d_exhaustive_small_shapes() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for h in 1..=8 {
        for w in 1..=8 {
            for k in 1..=8 {
                for stride in 1..=3 {
                    let x = rand_vec(&mut rng, 2 * h * w, false);
                    check_maxpool(1, 2, h, w, k, stride, x, &mut rng);
                }
            }
        }
    }
}

pub fn maxpool2d_random_cases_with_ties() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for case in 0..100 {
        let (b, c) = (rng.random_range(1..=4), rng.random_range(1..=8));
        let (h, w) = (rng.random_range(1..=8), rng.random_range(1..=8));
        let k = rng.random_range(1..=h.min(w));
        let stride = rng.random_range(1..=4);
        // Every other case draws from {0, 1} so windows tie.
        let x: Vec<f64> = if case % 2 == 0 {
            (0..b * c * h * w).map(|_| f64::from(rng.random_range(0..2u8))).collect()
        } else {
            rand_vec(&mut rng, b * c * h * w, false)
        };
        check_maxpool(b, c, h, w, k, stride, x, &mut rng);
    }
}

// ---- attention ----

fn attention_oracle(q: &[f64], k: &[f64], v: &[f64], b: usize, t: usize, s: usize, d: usize, dv: usize) -> Vec<f64> {
    let mut out = vec![0.0; b * t * dv];
    for bi in 0..b {
        for i in 0..t {
            let mut scores = vec![0.0; s];
            for (j, sc) in scores.iter_mut().enumerate() {
                for e in 0..d {
                    *sc += q[(bi * t + i) * d + e] * k[(bi * s + j) * d + e];
                }
                *sc /= (d as f64).sqrt();
            }
            let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = scores.iter().map(|x| (x - m).exp()).sum();
            for j in 0..s {
                let p = (scores[j] - m).exp() / z;
                for e in 0..dv {
                    out[(bi * t + i) * dv + e] += p * v[(bi * s + j) * dv + e];
                }
            }
        }
    }
    out
}

fn check_attention(b: usize, t: usize, s: usize, d: usize, dv: usize, rng: &mut ChaCha8Rng) {
    let scale = 3.0;
    let q: Vec<f64> = rand_vec(rng, b * t * d, false).iter().map(|v| v * scale).collect();
    let k: Vec<f64> = rand_vec(rng, b * s * d, false).iter().map(|v| v * scale).collect();
    let v = rand_vec(rng, b * s * dv, false);
    let g = Graph::new();
    let out = attention(
        g.constant(Tensor::from_vec(vec![b, t, d], q.clone()).unwrap()),
        g.constant(Tensor::from_vec(vec![b, s, d], k.clone()).unwrap()),
        g.constant(Tensor::from_vec(vec![b, s, dv], v.clone()).unwrap()),
    )
    .unwrap();
    assert_eq!(out.shape(), vec![b, t, dv]);
    assert_close(
        &format!("attention b{b} t{t} s{s} d{d} dv{dv}"),
        out.value().data(),
        &attention_oracle(&q, &k, &v, b, t, s, d, dv),
    );
}

pub fn attention_exhaustive_small_shapes() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for b in 1..=2 {
        for t in 1..=8 {
            for s in 1..=8 {
                for d in 1..=8 {
                    check_attention(b, t, s, d, d, &mut rng);
                }
            }
        }
    }
}

pub fn attention_random_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..100 {
        let (b, t, s) = (rng.random_range(1..=8), rng.random_range(1..=8), rng.random_range(1..=8));
        let (d, dv) = (rng.random_range(1..=8), rng.random_range(1..=8));
        check_attention(b, t, s, d, dv, &mut rng);
    }
}

// ---- interval_sample ----

/// Index `i` is the largest `j` with `j·M ≤ i·N`, found by walking forward.
fn sample_oracle(series: &[f64], m: usize) -> Vec<f64> {
    let n = series.len();
    if n <= m {
        return series.to_vec();
    }
    let mut out = Vec::new();
    let mut j = 0;
    for i in 0..m {
        while (j + 1) * m <= i * n {
            j += 1;
        }
        out.push(series[j]);
    }
    out
}

pub fn interval_sample_exhaustive_small() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for n in 1..=8 {
        for m in 2..=8 {
            let series = rand_vec(&mut rng, n, false);
            let got = interval_sample(&series, m).unwrap();
            assert_eq!(got, sample_oracle(&series, m), "n{n} m{m}");
            assert_eq!(got.len(), n.min(m));
            assert_eq!(got[0], series[0]);
        }
        assert!(interval_sample(&rand_vec(&mut rng, n, false), 1).is_err());
    }
    assert!(interval_sample(&[], 4).is_err());
}

pub fn interval_sample_random_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..100 {
        let n = rng.random_range(1..=1000);
        let m = rng.random_range(2..=500);
        let series = rand_vec(&mut rng, n, false);
        assert_eq!(interval_sample(&series, m).unwrap(), sample_oracle(&series, m), "n{n} m{m}");
    }
}

pub fn interval_sample_documented_examples() {
    let s: Vec<f64> = (0..10).map(f64::from).collect();
    assert_eq!(interval_sample(&s, 5).unwrap(), vec![0.0, 2.0, 4.0, 6.0, 8.0]);
    let s: Vec<f64> = (0..40).map(f64::from).collect();
    assert_eq!(interval_sample(&s, 100).unwrap(), s);
    assert_eq!(interval_sample(&s, 40).unwrap(), s);
}

pub const SUITES: &[(&str, fn())] = &[
    ("conv2d exhaustive", conv2d_exhaustive_small_shapes),
    ("conv2d random", conv2d_random_cases),
    ("maxpool2d exhaustive", maxpool2d_exhaustive_small_shapes),
    ("maxpool2d random", maxpool2d_random_cases_with_ties),
    ("attention exhaustive", attention_exhaustive_small_shapes),
    ("attention random", attention_random_cases),
    ("interval_sample exhaustive", interval_sample_exhaustive_small),
    ("interval_sample random", interval_sample_random_cases),
    ("interval_sample examples", interval_sample_documented_examples),
];
