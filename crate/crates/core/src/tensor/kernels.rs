//! Row-major GEMM and layout helpers shared by the ops.
//!
//! All kernels accumulate into `c` and use a fixed loop order, so results are
//! reproducible bit-for-bit for a given input.

use super::Scalar;

/// `c[m×p] += a[m×k] · b[k×p]`
pub(crate) fn gemm_nn<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, p: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * p);
    debug_assert_eq!(c.len(), m * p);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut c[i * p..(i + 1) * p];
        for (t, &av) in a_row.iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            let b_row = &b[t * p..(t + 1) * p];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += av * bv;
            }
        }
    }
}

/// `c[m×p] += aᵀ · b` with `a` stored as `k×m`, `b` as `k×p`.
pub(crate) fn gemm_tn<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, p: usize) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * p);
    debug_assert_eq!(c.len(), m * p);
    for t in 0..k {
        let a_row = &a[t * m..(t + 1) * m];
        let b_row = &b[t * p..(t + 1) * p];
        for (i, &av) in a_row.iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            let c_row = &mut c[i * p..(i + 1) * p];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += av * bv;
            }
        }
    }
}

/// `c[m×p] += a · bᵀ` with `a` stored as `m×k`, `b` as `p×k`.
pub(crate) fn gemm_nt<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, p: usize) {
    let bt = transpose2(b, p, k);
    gemm_nn(a, &bt, c, m, k, p);
}

/// Transposes a row-major `rows×cols` matrix.
pub(crate) fn transpose2<T: Scalar>(x: &[T], rows: usize, cols: usize) -> Vec<T> {
    debug_assert_eq!(x.len(), rows * cols);
    let mut out = vec![T::zero(); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = x[r * cols + c];
        }
    }
    out
}

/// Splits `shape` around `axis` into (outer, extent, inner) element counts.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Reorders axes: output axis `i` is input axis `perm[i]`.
pub(crate) fn permute<T: Scalar>(x: &[T], shape: &[usize], perm: &[usize]) -> (Vec<usize>, Vec<T>) {
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let in_strides = strides(shape);
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let n = x.len();
    let mut out = Vec::with_capacity(n);
    let nd = out_shape.len();
    let mut idx = vec![0usize; nd];
    let mut src = 0usize;
    for _ in 0..n {
        out.push(x[src]);
        for d in (0..nd).rev() {
            idx[d] += 1;
            src += src_strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            src -= src_strides[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    (out_shape, out)
}
