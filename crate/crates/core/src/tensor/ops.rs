//! Element-wise, reduction, linear-algebra and layout ops.

use super::graph::Var;
use super::kernels::{gemm_nn, gemm_nt, gemm_tn, permute, split_axis};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

fn same_shape<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(
            op,
            format!("shapes {:?} and {:?} differ", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

fn zip_map<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_parts(a.shape().to_vec(), data)
}

impl<'g, T: Scalar> Var<'g, T> {
    pub fn add(self, other: Var<'g, T>) -> Result<Var<'g, T>> {
        self.same_graph(&other, "add")?;
        let (a, b) = (self.value(), other.value());
        same_shape("add", &a, &b)?;
        let out = zip_map(&a, &b, |x, y| x + y);
        self.graph
            .push("add", out, &[self, other], Box::new(|g| vec![g.clone(), g.clone()]))
    }

    pub fn sub(self, other: Var<'g, T>) -> Result<Var<'g, T>> {
        self.same_graph(&other, "sub")?;
        let (a, b) = (self.value(), other.value());
        same_shape("sub", &a, &b)?;
        let out = zip_map(&a, &b, |x, y| x - y);
        self.graph.push(
            "sub",
            out,
            &[self, other],
            Box::new(|g| vec![g.clone(), g.map(|v| -v)]),
        )
    }

    /// Element-wise product.
    pub fn mul(self, other: Var<'g, T>) -> Result<Var<'g, T>> {
        self.same_graph(&other, "mul")?;
        let (a, b) = (self.value(), other.value());
        same_shape("mul", &a, &b)?;
        let out = zip_map(&a, &b, |x, y| x * y);
        self.graph.push(
            "mul",
            out,
            &[self, other],
            Box::new(move |g| vec![zip_map(g, &b, |u, v| u * v), zip_map(g, &a, |u, v| u * v)]),
        )
    }

    /// Adds `bias[D]` to every row of `self[..., D]`.
    pub fn add_bias(self, bias: Var<'g, T>) -> Result<Var<'g, T>> {
        self.same_graph(&bias, "add_bias")?;
        let (x, b) = (self.value(), bias.value());
        let d = *x.shape().last().unwrap();
        if b.ndim() != 1 || b.len() != d {
            return Err(Error::dim(
                "add_bias",
                format!("bias {:?} does not match last axis of {:?}", b.shape(), x.shape()),
            ));
        }
        let mut out = x.data().to_vec();
        for row in out.chunks_mut(d) {
            for (o, &bv) in row.iter_mut().zip(b.data()) {
                *o += bv;
            }
        }
        let out = Tensor::from_parts(x.shape().to_vec(), out);
        self.graph.push(
            "add_bias",
            out,
            &[self, bias],
            Box::new(move |g| {
                let mut db = vec![T::zero(); d];
                for row in g.data().chunks(d) {
                    for (acc, &v) in db.iter_mut().zip(row) {
                        *acc += v;
                    }
                }
                vec![g.clone(), Tensor::from_parts(vec![d], db)]
            }),
        )
    }

    /// Multiplies every element by a constant.
    pub fn scale(self, s: f64) -> Result<Var<'g, T>> {
        let s = T::from_f64(s);
        let out = self.value().map(|v| v * s);
        self.graph
            .push("scale", out, &[self], Box::new(move |g| vec![g.map(|v| v * s)]))
    }

    pub fn sigmoid(self) -> Result<Var<'g, T>> {
        let y = self.value().map(|v| T::one() / (T::one() + (-v).exp()));
        let saved = y.clone();
        let broken = fault::sigmoid_backward();
        self.graph.push(
            "sigmoid",
            y,
            &[self],
            Box::new(move |g| {
                if broken {
                    vec![zip_map(g, &saved, |u, s| u * s)]
                } else {
                    vec![zip_map(g, &saved, |u, s| u * s * (T::one() - s))]
                }
            }),
        )
    }

    pub fn relu(self) -> Result<Var<'g, T>> {
        let x = self.value();
        let y = x.map(|v| if v > T::zero() { v } else { T::zero() });
        self.graph.push(
            "relu",
            y,
            &[self],
            Box::new(move |g| {
                vec![zip_map(g, &x, |u, v| if v > T::zero() { u } else { T::zero() })]
            }),
        )
    }

    /// Element-wise op with a caller-supplied derivative. `df` receives the
    /// input value.
    pub fn map_unary(
        self,
        name: &'static str,
        f: impl Fn(T) -> T,
        df: impl Fn(T) -> T + 'static,
    ) -> Result<Var<'g, T>> {
        let x = self.value();
        let y = x.map(f);
        self.graph.push(
            name,
            y,
            &[self],
            Box::new(move |g| vec![zip_map(g, &x, |u, v| u * df(v))]),
        )
    }

    /// Sum of all elements, as a one-element tensor.
    pub fn sum(self) -> Result<Var<'g, T>> {
        let x = self.value();
        let shape = x.shape().to_vec();
        let s: T = x.data().iter().copied().sum();
        self.graph.push(
            "sum",
            Tensor::scalar(s),
            &[self],
            Box::new(move |g| vec![Tensor::full(shape, g.data()[0])]),
        )
    }

    /// Mean of all elements, as a one-element tensor.
    pub fn mean(self) -> Result<Var<'g, T>> {
        let n = self.value().len() as f64;
        self.sum()?.scale(1.0 / n)
    }

    /// Mean over `axis`, removing it. A rank-1 input yields shape `[1]`.
    pub fn mean_axis(self, axis: usize) -> Result<Var<'g, T>> {
        let x = self.value();
        if axis >= x.ndim() {
            return Err(Error::dim(
                "mean_axis",
                format!("axis {axis} out of range for {:?}", x.shape()),
            ));
        }
        let (outer, n, inner) = split_axis(x.shape(), axis);
        let inv = T::from_f64(1.0 / n as f64);
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for a in 0..n {
                let src = &x.data()[(o * n + a) * inner..(o * n + a + 1) * inner];
                for (acc, &v) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *acc += v;
                }
            }
        }
        for v in out.iter_mut() {
            *v *= inv;
        }
        let mut shape: Vec<usize> = x.shape().to_vec();
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        let in_shape = x.shape().to_vec();
        self.graph.push(
            "mean_axis",
            Tensor::from_parts(shape, out),
            &[self],
            Box::new(move |g| {
                let mut dx = vec![T::zero(); outer * n * inner];
                for o in 0..outer {
                    let src = &g.data()[o * inner..(o + 1) * inner];
                    for a in 0..n {
                        let dst = &mut dx[(o * n + a) * inner..(o * n + a + 1) * inner];
                        for (d, &v) in dst.iter_mut().zip(src) {
                            *d = v * inv;
                        }
                    }
                }
                vec![Tensor::from_parts(in_shape, dx)]
            }),
        )
    }

    /// Matrix product of `self[m×k]` and `other[k×p]`.
    pub fn matmul(self, other: Var<'g, T>) -> Result<Var<'g, T>> {
        self.same_graph(&other, "matmul")?;
        let (a, b) = (self.value(), other.value());
        if a.ndim() != 2 || b.ndim() != 2 || a.shape()[1] != b.shape()[0] {
            return Err(Error::dim(
                "matmul",
                format!("cannot multiply {:?} by {:?}", a.shape(), b.shape()),
            ));
        }
        let (m, k, p) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let mut c = vec![T::zero(); m * p];
        gemm_nn(a.data(), b.data(), &mut c, m, k, p);
        self.graph.push(
            "matmul",
            Tensor::from_parts(vec![m, p], c),
            &[self, other],
            Box::new(move |g| {
                // dA = dC·Bᵀ, dB = Aᵀ·dC
                let mut da = vec![T::zero(); m * k];
                gemm_nt(g.data(), b.data(), &mut da, m, p, k);
                let mut db = vec![T::zero(); k * p];
                gemm_tn(a.data(), g.data(), &mut db, k, m, p);
                vec![
                    Tensor::from_parts(vec![m, k], da),
                    Tensor::from_parts(vec![k, p], db),
                ]
            }),
        )
    }

    /// Batched matrix product of `self[B×m×k]` and `other[B×k×p]`.
    pub fn bmm(self, other: Var<'g, T>) -> Result<Var<'g, T>> {
        self.same_graph(&other, "bmm")?;
        let (a, b) = (self.value(), other.value());
        if a.ndim() != 3
            || b.ndim() != 3
            || a.shape()[0] != b.shape()[0]
            || a.shape()[2] != b.shape()[1]
        {
            return Err(Error::dim(
                "bmm",
                format!("cannot batch-multiply {:?} by {:?}", a.shape(), b.shape()),
            ));
        }
        let (bs, m, k, p) = (a.shape()[0], a.shape()[1], a.shape()[2], b.shape()[2]);
        let mut c = vec![T::zero(); bs * m * p];
        for i in 0..bs {
            gemm_nn(
                &a.data()[i * m * k..(i + 1) * m * k],
                &b.data()[i * k * p..(i + 1) * k * p],
                &mut c[i * m * p..(i + 1) * m * p],
                m,
                k,
                p,
            );
        }
        self.graph.push(
            "bmm",
            Tensor::from_parts(vec![bs, m, p], c),
            &[self, other],
            Box::new(move |g| {
                let mut da = vec![T::zero(); bs * m * k];
                let mut db = vec![T::zero(); bs * k * p];
                for i in 0..bs {
                    let gi = &g.data()[i * m * p..(i + 1) * m * p];
                    gemm_nt(
                        gi,
                        &b.data()[i * k * p..(i + 1) * k * p],
                        &mut da[i * m * k..(i + 1) * m * k],
                        m,
                        p,
                        k,
                    );
                    gemm_tn(
                        &a.data()[i * m * k..(i + 1) * m * k],
                        gi,
                        &mut db[i * k * p..(i + 1) * k * p],
                        k,
                        m,
                        p,
                    );
                }
                vec![
                    Tensor::from_parts(vec![bs, m, k], da),
                    Tensor::from_parts(vec![bs, k, p], db),
                ]
            }),
        )
    }

    /// `self[..., in] · weight[in×out] + bias[out]`, applied row-wise.
    pub fn linear(self, weight: Var<'g, T>, bias: Option<Var<'g, T>>) -> Result<Var<'g, T>> {
        let shape = self.shape();
        let w_shape = weight.shape();
        let d_in = *shape.last().unwrap();
        if w_shape.len() != 2 || w_shape[0] != d_in {
            return Err(Error::dim(
                "linear",
                format!("weight {w_shape:?} does not accept input {shape:?}"),
            ));
        }
        let rows = shape.iter().product::<usize>() / d_in;
        let mut y = self.reshape(vec![rows, d_in])?.matmul(weight)?;
        if let Some(b) = bias {
            y = y.add_bias(b)?;
        }
        let mut out_shape = shape;
        *out_shape.last_mut().unwrap() = w_shape[1];
        y.reshape(out_shape)
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Var<'g, T>> {
        let x = self.value();
        let in_shape = x.shape().to_vec();
        let y = x.reshape(shape)?;
        self.graph.push(
            "reshape",
            y,
            &[self],
            Box::new(move |g| vec![g.reshape(in_shape).expect("same element count")]),
        )
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(self, perm: &[usize]) -> Result<Var<'g, T>> {
        let x = self.value();
        let nd = x.ndim();
        let mut seen = vec![false; nd];
        if perm.len() != nd || perm.iter().any(|&p| p >= nd || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::dim(
                "permute",
                format!("{perm:?} is not a permutation of {nd} axes"),
            ));
        }
        let (shape, data) = permute(x.data(), x.shape(), perm);
        let mut inverse = vec![0; nd];
        for (i, &p) in perm.iter().enumerate() {
            inverse[p] = i;
        }
        self.graph.push(
            "permute",
            Tensor::from_parts(shape, data),
            &[self],
            Box::new(move |g| {
                let (s, d) = permute(g.data(), g.shape(), &inverse);
                vec![Tensor::from_parts(s, d)]
            }),
        )
    }

    /// Swaps the last two axes.
    pub fn transpose_last(self) -> Result<Var<'g, T>> {
        let nd = self.shape().len();
        if nd < 2 {
            return Err(Error::dim("transpose_last", "need at least 2 axes"));
        }
        let mut perm: Vec<usize> = (0..nd).collect();
        perm.swap(nd - 2, nd - 1);
        self.permute(&perm)
    }

    /// Slice `[start, start+len)` along `axis`.
    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Result<Var<'g, T>> {
        let x = self.value();
        if axis >= x.ndim() || len == 0 || start + len > x.shape()[axis] {
            return Err(Error::dim(
                "narrow",
                format!("range {start}..{} on axis {axis} of {:?}", start + len, x.shape()),
            ));
        }
        let (outer, n, inner) = split_axis(x.shape(), axis);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * n + start) * inner;
            out.extend_from_slice(&x.data()[base..base + len * inner]);
        }
        let mut shape = x.shape().to_vec();
        shape[axis] = len;
        let in_shape = x.shape().to_vec();
        self.graph.push(
            "narrow",
            Tensor::from_parts(shape, out),
            &[self],
            Box::new(move |g| {
                let mut dx = vec![T::zero(); outer * n * inner];
                for o in 0..outer {
                    let base = (o * n + start) * inner;
                    dx[base..base + len * inner]
                        .copy_from_slice(&g.data()[o * len * inner..(o + 1) * len * inner]);
                }
                vec![Tensor::from_parts(in_shape, dx)]
            }),
        )
    }

    /// Softmax along `axis`.
    pub fn softmax(self, axis: usize) -> Result<Var<'g, T>> {
        let x = self.value();
        if axis >= x.ndim() {
            return Err(Error::dim(
                "softmax",
                format!("axis {axis} out of range for {:?}", x.shape()),
            ));
        }
        let (outer, n, inner) = split_axis(x.shape(), axis);
        let mut y = vec![T::zero(); x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |a: usize| (o * n + a) * inner + i;
                let mut max = T::neg_infinity();
                for a in 0..n {
                    max = max.max(x.data()[at(a)]);
                }
                let mut total = T::zero();
                for a in 0..n {
                    let e = (x.data()[at(a)] - max).exp();
                    y[at(a)] = e;
                    total += e;
                }
                for a in 0..n {
                    y[at(a)] = y[at(a)] / total;
                }
            }
        }
        let y = Tensor::from_parts(x.shape().to_vec(), y);
        let saved = y.clone();
        self.graph.push(
            "softmax",
            y,
            &[self],
            Box::new(move |g| {
                // dx = y ⊙ (g − Σ g⊙y)
                let (y, gd) = (saved.data(), g.data());
                let mut dx = vec![T::zero(); y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |a: usize| (o * n + a) * inner + i;
                        let mut dot = T::zero();
                        for a in 0..n {
                            dot += gd[at(a)] * y[at(a)];
                        }
                        for a in 0..n {
                            dx[at(a)] = y[at(a)] * (gd[at(a)] - dot);
                        }
                    }
                }
                vec![Tensor::from_parts(saved.shape().to_vec(), dx)]
            }),
        )
    }

    /// Normalizes each row along the last axis to zero mean and unit
    /// variance, then applies `gamma[D]`, `beta[D]`.
    pub fn layer_norm(self, gamma: Var<'g, T>, beta: Var<'g, T>, eps: f64) -> Result<Var<'g, T>> {
        self.same_graph(&gamma, "layer_norm")?;
        self.same_graph(&beta, "layer_norm")?;
        let x = self.value();
        let d = *x.shape().last().unwrap();
        let (gm, bt) = (gamma.value(), beta.value());
        if gm.shape() != [d] || bt.shape() != [d] {
            return Err(Error::dim(
                "layer_norm",
                format!(
                    "gamma {:?} / beta {:?} must be [{d}] for input {:?}",
                    gm.shape(),
                    bt.shape(),
                    x.shape()
                ),
            ));
        }
        let rows = x.len() / d;
        let eps_t = T::from_f64(eps);
        let inv_d = T::from_f64(1.0 / d as f64);
        let mut xhat = vec![T::zero(); x.len()];
        let mut inv_std = vec![T::zero(); rows];
        for r in 0..rows {
            let row = &x.data()[r * d..(r + 1) * d];
            let mu = row.iter().copied().sum::<T>() * inv_d;
            let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() * inv_d;
            let denom = var + eps_t;
            if denom <= T::zero() {
                return Err(Error::numeric(
                    "layer_norm",
                    format!("row {r} has zero variance and eps = {eps}"),
                ));
            }
            let is = T::one() / denom.sqrt();
            inv_std[r] = is;
            for (h, &v) in xhat[r * d..(r + 1) * d].iter_mut().zip(row) {
                *h = (v - mu) * is;
            }
        }
        let mut y = vec![T::zero(); x.len()];
        for (r, row) in y.chunks_mut(d).enumerate() {
            for j in 0..d {
                row[j] = gm.data()[j] * xhat[r * d + j] + bt.data()[j];
            }
        }
        let shape = x.shape().to_vec();
        self.graph.push(
            "layer_norm",
            Tensor::from_parts(shape.clone(), y),
            &[self, gamma, beta],
            Box::new(move |g| {
                let gd = g.data();
                let mut dx = vec![T::zero(); gd.len()];
                let mut dgamma = vec![T::zero(); d];
                let mut dbeta = vec![T::zero(); d];
                for r in 0..rows {
                    let gr = &gd[r * d..(r + 1) * d];
                    let hr = &xhat[r * d..(r + 1) * d];
                    let mut sum_dh = T::zero();
                    let mut sum_dh_h = T::zero();
                    for j in 0..d {
                        let dh = gr[j] * gm.data()[j];
                        sum_dh += dh;
                        sum_dh_h += dh * hr[j];
                        dgamma[j] += gr[j] * hr[j];
                        dbeta[j] += gr[j];
                    }
                    for j in 0..d {
                        let dh = gr[j] * gm.data()[j];
                        dx[r * d + j] =
                            inv_std[r] * (dh - inv_d * sum_dh - hr[j] * inv_d * sum_dh_h);
                    }
                }
                vec![
                    Tensor::from_parts(shape, dx),
                    Tensor::from_parts(vec![d], dgamma),
                    Tensor::from_parts(vec![d], dbeta),
                ]
            }),
        )
    }
}

/// Concatenates along `axis`; all other extents must agree.
pub fn concat<'g, T: Scalar>(parts: &[Var<'g, T>], axis: usize) -> Result<Var<'g, T>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::dim("concat", "nothing to concatenate"))?;
    let values: Vec<Tensor<T>> = parts.iter().map(|p| p.value()).collect();
    let base = values[0].shape().to_vec();
    if axis >= base.len() {
        return Err(Error::dim(
            "concat",
            format!("axis {axis} out of range for {base:?}"),
        ));
    }
    for (p, v) in parts.iter().zip(&values) {
        first.same_graph(p, "concat")?;
        let s = v.shape();
        if s.len() != base.len()
            || s.iter()
                .zip(&base)
                .enumerate()
                .any(|(i, (a, b))| i != axis && a != b)
        {
            return Err(Error::dim(
                "concat",
                format!("cannot concatenate {s:?} with {base:?} on axis {axis}"),
            ));
        }
    }
    let outer: usize = base[..axis].iter().product();
    let inner: usize = base[axis + 1..].iter().product();
    let extents: Vec<usize> = values.iter().map(|v| v.shape()[axis]).collect();
    let total: usize = extents.iter().sum();
    let mut out = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for (v, &e) in values.iter().zip(&extents) {
            out.extend_from_slice(&v.data()[o * e * inner..(o + 1) * e * inner]);
        }
    }
    let mut shape = base.clone();
    shape[axis] = total;
    let in_shapes: Vec<Vec<usize>> = values.iter().map(|v| v.shape().to_vec()).collect();
    first.graph.push(
        "concat",
        Tensor::from_parts(shape, out),
        parts,
        Box::new(move |g| {
            let mut grads: Vec<Vec<T>> = extents
                .iter()
                .map(|&e| Vec::with_capacity(outer * e * inner))
                .collect();
            let mut off = 0;
            for _ in 0..outer {
                for (gr, &e) in grads.iter_mut().zip(&extents) {
                    gr.extend_from_slice(&g.data()[off..off + e * inner]);
                    off += e * inner;
                }
            }
            grads
                .into_iter()
                .zip(in_shapes)
                .map(|(d, s)| Tensor::from_parts(s, d))
                .collect()
        }),
    )
}

/// Deliberate gradient corruption, for exercising the gradient checker.
#[doc(hidden)]
pub mod fault {
    use std::cell::Cell;

    thread_local! {
        static SIGMOID_BACKWARD: Cell<bool> = const { Cell::new(false) };
    }

    /// Sigmoid nodes created on this thread while set drop the `1 − σ`
    /// factor from their derivative.
    pub fn set_sigmoid_backward(on: bool) {
        SIGMOID_BACKWARD.with(|c| c.set(on));
    }

    pub fn sigmoid_backward() -> bool {
        SIGMOID_BACKWARD.with(Cell::get)
    }
}

#[cfg(test)]
mod tests {
    use super::super::Graph;
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let g = Graph::new();
        let i = g.constant(Tensor::eye(2));
        let a = g.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        assert_eq!(i.matmul(a).unwrap().value().data(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(a.matmul(i).unwrap().value().data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn matmul_row_by_column() {
        let g = Graph::new();
        let a = g.constant(t(&[1, 2], &[1.0, 2.0]));
        let b = g.constant(t(&[2, 1], &[3.0, 4.0]));
        assert_eq!(a.matmul(b).unwrap().value().data(), &[11.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let g = Graph::<f64>::new();
        let a = g.constant(Tensor::zeros(vec![2, 3]));
        let b = g.constant(Tensor::zeros(vec![2, 3]));
        let msg = a.matmul(b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn sum_of_squares_gradient() {
        let g = Graph::new();
        let x = g.leaf(t(&[3], &[1.0, 2.0, 3.0]));
        let loss = x.mul(x).unwrap().sum().unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn sum_gradient_is_ones() {
        let g = Graph::<f64>::new();
        let x = g.leaf(Tensor::full(vec![2, 3, 4], 0.7));
        g.backward(x.sum().unwrap()).unwrap();
        assert!(g.grad(x).unwrap().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn sigmoid_at_zero() {
        let g = Graph::new();
        let x = g.leaf(t(&[1], &[0.0]));
        let y = x.sigmoid().unwrap();
        assert_eq!(y.value().data(), &[0.5]);
        g.backward(y.sum().unwrap()).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[0.25]);
    }

    #[test]
    fn softmax_uniform_for_equal_inputs() {
        let g = Graph::new();
        let x = g.constant(Tensor::<f64>::full(vec![2, 5], 3.3));
        let y = x.softmax(1).unwrap().value();
        assert!(y.data().iter().all(|&v| (v - 0.2).abs() < 1e-15));
        assert!(g.constant(Tensor::<f64>::zeros(vec![2])).softmax(1).is_err());
    }

    #[test]
    fn layer_norm_moments() {
        let g = Graph::new();
        let x = g.constant(t(&[1, 3], &[1.0, 2.0, 3.0]));
        let gamma = g.constant(Tensor::ones(vec![3]));
        let beta = g.constant(Tensor::zeros(vec![3]));
        let y = x.layer_norm(gamma, beta, 1e-5).unwrap().value();
        let mean = y.data().iter().sum::<f64>() / 3.0;
        let var = y.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 3.0;
        assert!(mean.abs() < 1e-12);
        // biased variance of [1,2,3] is 2/3; eps shifts the result by var/(var+eps)
        let expected = (2.0 / 3.0) / (2.0 / 3.0 + 1e-5);
        assert!((var - expected).abs() < 1e-12, "{var}");
    }

    #[test]
    fn concat_and_narrow_invert() {
        let g = Graph::new();
        let a = g.leaf(t(&[2, 1, 2], &[1.0, 2.0, 3.0, 4.0]));
        let b = g.leaf(t(&[2, 1, 2], &[5.0, 6.0, 7.0, 8.0]));
        let c = concat(&[a, b], 1).unwrap();
        assert_eq!(c.shape(), vec![2, 2, 2]);
        assert_eq!(c.value().data(), &[1.0, 2.0, 5.0, 6.0, 3.0, 4.0, 7.0, 8.0]);
        let back = c.narrow(1, 1, 1).unwrap();
        assert_eq!(back.value(), b.value());
        g.backward(back.sum().unwrap()).unwrap();
        assert_eq!(g.grad(a).unwrap().data(), &[0.0; 4]);
        assert_eq!(g.grad(b).unwrap().data(), &[1.0; 4]);
    }

    #[test]
    fn add_rejects_broadcast() {
        let g = Graph::<f64>::new();
        let a = g.constant(Tensor::zeros(vec![2, 3]));
        let b = g.constant(Tensor::zeros(vec![3]));
        assert!(matches!(a.add(b), Err(Error::Dimension { .. })));
        assert!(a.add_bias(b).is_ok());
    }

    #[test]
    fn overflow_is_reported() {
        let g = Graph::<f64>::new();
        let a = g.constant(Tensor::full(vec![1], 1e300));
        assert!(matches!(a.mul(a), Err(Error::Numeric { .. })));
    }
}
