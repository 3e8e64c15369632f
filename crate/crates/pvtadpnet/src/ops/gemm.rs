//! Row-major matrix multiply kernels shared by matmul and conv2d.
//!
//! Each output row is produced by exactly one thread with a fixed-order
//! inner reduction, so serial and rayon runs are bit-identical.

use rayon::prelude::*;

use crate::scalar::Elem;

const PAR_THRESHOLD: usize = 1 << 15;

/// c[m,n] += a[m,k] * b[k,n]
pub fn gemm_nn<E: Elem>(m: usize, k: usize, n: usize, a: &[E], b: &[E], c: &mut [E]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let row = |i: usize, crow: &mut [E]| {
        for p in 0..k {
            let av = a[i * k + p];
            if av == E::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv = *cv + av * bv;
            }
        }
    };
    if m * n * k >= PAR_THRESHOLD && m > 1 {
        c.par_chunks_mut(n)
            .enumerate()
            .for_each(|(i, crow)| row(i, crow));
    } else {
        for (i, crow) in c.chunks_mut(n).enumerate() {
            row(i, crow);
        }
    }
}

/// c[m,n] += a[m,k] * b^T where b is stored as [n,k].
pub fn gemm_nt<E: Elem>(m: usize, k: usize, n: usize, a: &[E], bt: &[E], c: &mut [E]) {
    let b = transpose(bt, n, k);
    gemm_nn(m, k, n, a, &b, c);
}

/// c[m,n] += a^T * b where a is stored as [k,m].
pub fn gemm_tn<E: Elem>(m: usize, k: usize, n: usize, at: &[E], b: &[E], c: &mut [E]) {
    let a = transpose(at, k, m);
    gemm_nn(m, k, n, &a, b, c);
}

/// Transposes a row-major [rows, cols] buffer into [cols, rows].
pub fn transpose<E: Elem>(src: &[E], rows: usize, cols: usize) -> Vec<E> {
    debug_assert_eq!(src.len(), rows * cols);
    let mut out = vec![E::zero(); src.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = src[r * cols + c];
        }
    }
    out
}
