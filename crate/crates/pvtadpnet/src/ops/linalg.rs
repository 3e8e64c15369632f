//! Matrix products and linear layers on the tape.

use super::gemm::{gemm_nn, gemm_nt, gemm_tn};
use crate::scalar::Elem;
use crate::tape::{Tape, TensorId};
use crate::tensor::Tensor;

/// Splits a shape into (batch, rows, cols). Rank 2 has batch 1; rank 3 is
/// interpreted as [batch, rows, cols].
fn brc(shape: &[usize]) -> (usize, usize, usize) {
    match shape.len() {
        2 => (1, shape[0], shape[1]),
        3 => (shape[0], shape[1], shape[2]),
        _ => panic!("matmul expects rank 2 or 3, got {shape:?}"),
    }
}

/// `a @ b`. Supported: [M,K]x[K,N], [B,M,K]x[B,K,N], and [B,M,K]x[K,N]
/// (rhs shared over the batch, its gradient summed over it).
pub fn matmul<E: Elem>(tape: &mut Tape<E>, a: TensorId, b: TensorId) -> TensorId {
    let (av, bv) = (tape.value(a), tape.value(b));
    let (ba, m, k) = brc(&av.shape);
    let (bb, k2, n) = brc(&bv.shape);
    assert_eq!(k, k2, "inner-dimension mismatch: {:?} @ {:?}", av.shape, bv.shape);
    assert!(
        bb == ba || bb == 1,
        "batch mismatch: {:?} @ {:?}",
        av.shape,
        bv.shape
    );
    let mut out = vec![E::zero(); ba * m * n];
    for i in 0..ba {
        let bs = if bb == 1 { 0 } else { i };
        gemm_nn(
            m,
            k,
            n,
            &av.data[i * m * k..(i + 1) * m * k],
            &bv.data[bs * k * n..(bs + 1) * k * n],
            &mut out[i * m * n..(i + 1) * m * n],
        );
    }
    let out_shape = if av.shape.len() == 2 && bv.shape.len() == 2 {
        vec![m, n]
    } else {
        vec![ba, m, n]
    };
    tape.count_flops(2 * (ba * m * k * n) as u64);
    tape.push_op(
        Tensor::new(out_shape, out),
        vec![a, b],
        Box::new(move |gout, parents, _| {
            let (av, bv) = (parents[0], parents[1]);
            let mut da = vec![E::zero(); av.numel()];
            let mut db = vec![E::zero(); bv.numel()];
            for i in 0..ba {
                let bs = if bb == 1 { 0 } else { i };
                let g = &gout.data[i * m * n..(i + 1) * m * n];
                // dA = g . B^T
                gemm_nt(
                    m,
                    n,
                    k,
                    g,
                    &bv.data[bs * k * n..(bs + 1) * k * n],
                    &mut da[i * m * k..(i + 1) * m * k],
                );
                // dB += A^T . g
                gemm_tn(
                    k,
                    m,
                    n,
                    &av.data[i * m * k..(i + 1) * m * k],
                    g,
                    &mut db[bs * k * n..(bs + 1) * k * n],
                );
            }
            vec![
                Tensor::new(av.shape.clone(), da),
                Tensor::new(bv.shape.clone(), db),
            ]
        }),
    )
}

/// `a @ b^T` with b stored row-major as [.., N, K]. Used for attention
/// scores q.k^T without materializing a transpose on the tape.
pub fn matmul_nt<E: Elem>(tape: &mut Tape<E>, a: TensorId, b: TensorId) -> TensorId {
    let (av, bv) = (tape.value(a), tape.value(b));
    let (ba, m, k) = brc(&av.shape);
    let (bb, n, k2) = brc(&bv.shape);
    assert_eq!(k, k2, "inner-dimension mismatch: {:?} @ {:?}^T", av.shape, bv.shape);
    assert!(bb == ba, "batch mismatch");
    let mut out = vec![E::zero(); ba * m * n];
    for i in 0..ba {
        gemm_nt(
            m,
            k,
            n,
            &av.data[i * m * k..(i + 1) * m * k],
            &bv.data[i * n * k..(i + 1) * n * k],
            &mut out[i * m * n..(i + 1) * m * n],
        );
    }
    let out_shape = if av.shape.len() == 2 {
        vec![m, n]
    } else {
        vec![ba, m, n]
    };
    tape.count_flops(2 * (ba * m * k * n) as u64);
    tape.push_op(
        Tensor::new(out_shape, out),
        vec![a, b],
        Box::new(move |gout, parents, _| {
            let (av, bv) = (parents[0], parents[1]);
            let mut da = vec![E::zero(); av.numel()];
            let mut db = vec![E::zero(); bv.numel()];
            for i in 0..ba {
                let g = &gout.data[i * m * n..(i + 1) * m * n];
                // y = A B^T  =>  dA = g . B ; dB = g^T . A
                gemm_nn(
                    m,
                    n,
                    k,
                    g,
                    &bv.data[i * n * k..(i + 1) * n * k],
                    &mut da[i * m * k..(i + 1) * m * k],
                );
                gemm_tn(
                    n,
                    m,
                    k,
                    g,
                    &av.data[i * m * k..(i + 1) * m * k],
                    &mut db[i * n * k..(i + 1) * n * k],
                );
            }
            vec![
                Tensor::new(av.shape.clone(), da),
                Tensor::new(bv.shape.clone(), db),
            ]
        }),
    )
}

/// Adds a bias vector over the last axis: x[.., N] + b[N].
pub fn add_bias_last<E: Elem>(tape: &mut Tape<E>, x: TensorId, bias: TensorId) -> TensorId {
    let (xv, bv) = (tape.value(x), tape.value(bias));
    let n = *xv.shape.last().expect("rank >= 1");
    assert_eq!(bv.shape, vec![n], "bias must be [last-dim]");
    let data: Vec<E> = xv
        .data
        .iter()
        .enumerate()
        .map(|(i, &v)| v + bv.data[i % n])
        .collect();
    let value = Tensor::new(xv.shape.clone(), data);
    tape.count_flops(value.numel() as u64);
    tape.push_op(
        value,
        vec![x, bias],
        Box::new(move |gout, parents, _| {
            let mut db = vec![E::zero(); n];
            for (i, &g) in gout.data.iter().enumerate() {
                db[i % n] = db[i % n] + g;
            }
            vec![gout.clone(), Tensor::new(parents[1].shape.clone(), db)]
        }),
    )
}

/// Fully connected layer over the last axis: x[..,K] @ w[K,N] (+ bias[N]).
pub fn linear<E: Elem>(
    tape: &mut Tape<E>,
    x: TensorId,
    w: TensorId,
    bias: Option<TensorId>,
) -> TensorId {
    let y = matmul(tape, x, w);
    match bias {
        Some(b) => add_bias_last(tape, y, b),
        None => y,
    }
}

/// Scales channel c of x[B,C,H,W] by s[b,c]; the SE reweighting.
pub fn scale_channels<E: Elem>(tape: &mut Tape<E>, x: TensorId, s: TensorId) -> TensorId {
    let (xv, sv) = (tape.value(x), tape.value(s));
    assert_eq!(xv.rank(), 4, "scale_channels expects [B,C,H,W]");
    let (b, c, h, w) = (xv.shape[0], xv.shape[1], xv.shape[2], xv.shape[3]);
    assert_eq!(sv.shape, vec![b, c], "scale vector must be [B,C]");
    let hw = h * w;
    let mut data = xv.data.clone();
    for bi in 0..b {
        for ci in 0..c {
            let f = sv.data[bi * c + ci];
            for v in &mut data[(bi * c + ci) * hw..(bi * c + ci + 1) * hw] {
                *v = *v * f;
            }
        }
    }
    let value = Tensor::new(xv.shape.clone(), data);
    tape.count_flops(value.numel() as u64);
    tape.push_op(
        value,
        vec![x, s],
        Box::new(move |gout, parents, _| {
            let (xv, sv) = (parents[0], parents[1]);
            let mut dx = vec![E::zero(); xv.numel()];
            let mut ds = vec![E::zero(); sv.numel()];
            for bi in 0..b {
                for ci in 0..c {
                    let f = sv.data[bi * c + ci];
                    let base = (bi * c + ci) * hw;
                    let mut acc = E::zero();
                    for i in 0..hw {
                        dx[base + i] = gout.data[base + i] * f;
                        acc = acc + gout.data[base + i] * xv.data[base + i];
                    }
                    ds[bi * c + ci] = acc;
                }
            }
            vec![
                Tensor::new(xv.shape.clone(), dx),
                Tensor::new(sv.shape.clone(), ds),
            ]
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::sum_all;

    #[test]
    fn identity_matmul() {
        let mut t = Tape::<f64>::new();
        let eye = t.leaf(Tensor::from_f64(&[2, 2], &[1.0, 0.0, 0.0, 1.0]), false);
        let x = t.leaf(Tensor::from_f64(&[2, 2], &[1.0, 2.0, 3.0, 4.0]), false);
        let y = matmul(&mut t, eye, x);
        assert_eq!(t.value(y).data, t.value(x).data);
    }

    #[test]
    fn known_product() {
        let mut t = Tape::<f64>::new();
        let a = t.leaf(Tensor::from_f64(&[2, 2], &[1.0, 2.0, 3.0, 4.0]), false);
        let b = t.leaf(Tensor::from_f64(&[2, 1], &[1.0, 1.0]), false);
        let y = matmul(&mut t, a, b);
        assert_eq!(t.value(y).data, vec![3.0, 7.0]);
    }

    #[test]
    fn shared_rhs_grad_sums_over_batch() {
        let mut t = Tape::<f64>::new();
        let a = t.leaf(Tensor::ones(&[2, 1, 3]), true);
        let w = t.leaf(Tensor::ones(&[3, 2]), true);
        let y = matmul(&mut t, a, w);
        assert_eq!(t.shape(y), &[2, 1, 2]);
        let s = sum_all(&mut t, y);
        t.backward(s);
        // each w element sees both batch rows of ones
        assert_eq!(t.grad(w).unwrap().data, vec![2.0; 6]);
    }

    #[test]
    fn scale_channels_halves() {
        let mut t = Tape::<f64>::new();
        let x = t.leaf(Tensor::from_f64(&[1, 1, 2, 2], &[2.0, 4.0, 6.0, 8.0]), false);
        let s = t.leaf(Tensor::from_f64(&[1, 1], &[0.5]), false);
        let y = scale_channels(&mut t, x, s);
        assert_eq!(t.value(y).data, vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    #[should_panic(expected = "inner-dimension")]
    fn inner_dim_mismatch_rejected() {
        let mut t = Tape::<f64>::new();
        let a = t.leaf(Tensor::zeros(&[2, 3]), false);
        let b = t.leaf(Tensor::zeros(&[4, 2]), false);
        matmul(&mut t, a, b);
    }
}
