//! Layout ops: channel concat, token/feature-map conversion, head split.

use crate::scalar::Elem;
use crate::tape::{Tape, TensorId};
use crate::tensor::Tensor;

/// Concatenates [B,Ci,H,W] tensors along the channel axis in argument order.
pub fn concat_channels<E: Elem>(tape: &mut Tape<E>, xs: &[TensorId]) -> TensorId {
    assert!(!xs.is_empty(), "concat of zero tensors");
    let shapes: Vec<Vec<usize>> = xs.iter().map(|&x| tape.value(x).shape.clone()).collect();
    let (b, h, w) = (shapes[0][0], shapes[0][2], shapes[0][3]);
    for s in &shapes {
        assert_eq!(s.len(), 4, "concat_channels expects [B,C,H,W]");
        assert!(
            s[0] == b && s[2] == h && s[3] == w,
            "spatial mismatch in concat: {:?} vs {:?}",
            shapes[0],
            s
        );
    }
    let chans: Vec<usize> = shapes.iter().map(|s| s[1]).collect();
    let ctot: usize = chans.iter().sum();
    let hw = h * w;
    let mut out = vec![E::zero(); b * ctot * hw];
    for bi in 0..b {
        let mut coff = 0;
        for (&x, &ci) in xs.iter().zip(&chans) {
            let src = &tape.value(x).data[bi * ci * hw..(bi + 1) * ci * hw];
            out[(bi * ctot + coff) * hw..(bi * ctot + coff + ci) * hw].copy_from_slice(src);
            coff += ci;
        }
    }
    tape.push_op(
        Tensor::new(vec![b, ctot, h, w], out),
        xs.to_vec(),
        Box::new(move |gout, parents, _| {
            let mut grads = Vec::with_capacity(parents.len());
            let mut coff = 0;
            for (p, &ci) in parents.iter().zip(&chans) {
                let mut d = vec![E::zero(); p.numel()];
                for bi in 0..b {
                    d[bi * ci * hw..(bi + 1) * ci * hw].copy_from_slice(
                        &gout.data[(bi * ctot + coff) * hw..(bi * ctot + coff + ci) * hw],
                    );
                }
                grads.push(Tensor::new(p.shape.clone(), d));
                coff += ci;
            }
            grads
        }),
    )
}

/// Zero-pads x[B,C,H,W] by independent amounts per edge. Backward slices
/// the interior back out.
pub fn pad2d<E: Elem>(
    tape: &mut Tape<E>,
    x: TensorId,
    top: usize,
    bottom: usize,
    left: usize,
    right: usize,
) -> TensorId {
    let xv = tape.value(x);
    assert_eq!(xv.rank(), 4, "pad2d expects [B,C,H,W]");
    let (b, c, h, w) = (xv.shape[0], xv.shape[1], xv.shape[2], xv.shape[3]);
    let (ho, wo) = (h + top + bottom, w + left + right);
    let mut out = vec![E::zero(); b * c * ho * wo];
    for bc in 0..b * c {
        for y in 0..h {
            let src = &xv.data[(bc * h + y) * w..(bc * h + y + 1) * w];
            out[(bc * ho + y + top) * wo + left..(bc * ho + y + top) * wo + left + w]
                .copy_from_slice(src);
        }
    }
    tape.push_op(
        Tensor::new(vec![b, c, ho, wo], out),
        vec![x],
        Box::new(move |gout, parents, _| {
            let mut dx = vec![E::zero(); parents[0].numel()];
            for bc in 0..b * c {
                for y in 0..h {
                    dx[(bc * h + y) * w..(bc * h + y + 1) * w].copy_from_slice(
                        &gout.data
                            [(bc * ho + y + top) * wo + left..(bc * ho + y + top) * wo + left + w],
                    );
                }
            }
            vec![Tensor::new(parents[0].shape.clone(), dx)]
        }),
    )
}

/// [B,C,H,W] -> [B,H*W,C] token layout.
pub fn nchw_to_tokens<E: Elem>(tape: &mut Tape<E>, x: TensorId) -> TensorId {
    let xv = tape.value(x);
    assert_eq!(xv.rank(), 4);
    let (b, c, h, w) = (xv.shape[0], xv.shape[1], xv.shape[2], xv.shape[3]);
    let n = h * w;
    let mut out = vec![E::zero(); xv.numel()];
    for bi in 0..b {
        for ci in 0..c {
            for i in 0..n {
                out[(bi * n + i) * c + ci] = xv.data[(bi * c + ci) * n + i];
            }
        }
    }
    tape.push_op(
        Tensor::new(vec![b, n, c], out),
        vec![x],
        Box::new(move |gout, parents, _| {
            let mut dx = vec![E::zero(); parents[0].numel()];
            for bi in 0..b {
                for ci in 0..c {
                    for i in 0..n {
                        dx[(bi * c + ci) * n + i] = gout.data[(bi * n + i) * c + ci];
                    }
                }
            }
            vec![Tensor::new(parents[0].shape.clone(), dx)]
        }),
    )
}

/// [B,H*W,C] -> [B,C,H,W].
pub fn tokens_to_nchw<E: Elem>(tape: &mut Tape<E>, x: TensorId, h: usize, w: usize) -> TensorId {
    let xv = tape.value(x);
    assert_eq!(xv.rank(), 3);
    let (b, n, c) = (xv.shape[0], xv.shape[1], xv.shape[2]);
    assert_eq!(n, h * w, "token count {n} != {h}x{w}");
    let mut out = vec![E::zero(); xv.numel()];
    for bi in 0..b {
        for ci in 0..c {
            for i in 0..n {
                out[(bi * c + ci) * n + i] = xv.data[(bi * n + i) * c + ci];
            }
        }
    }
    tape.push_op(
        Tensor::new(vec![b, c, h, w], out),
        vec![x],
        Box::new(move |gout, parents, _| {
            let mut dx = vec![E::zero(); parents[0].numel()];
            for bi in 0..b {
                for ci in 0..c {
                    for i in 0..n {
                        dx[(bi * n + i) * c + ci] = gout.data[(bi * c + ci) * n + i];
                    }
                }
            }
            vec![Tensor::new(parents[0].shape.clone(), dx)]
        }),
    )
}

/// [B,N,C] -> [B*heads, N, C/heads] for multi-head attention.
pub fn split_heads<E: Elem>(tape: &mut Tape<E>, x: TensorId, heads: usize) -> TensorId {
    let xv = tape.value(x);
    assert_eq!(xv.rank(), 3);
    let (b, n, c) = (xv.shape[0], xv.shape[1], xv.shape[2]);
    assert!(c % heads == 0, "channels {c} not divisible by heads {heads}");
    let dh = c / heads;
    let mut out = vec![E::zero(); xv.numel()];
    for bi in 0..b {
        for hi in 0..heads {
            for i in 0..n {
                for d in 0..dh {
                    out[((bi * heads + hi) * n + i) * dh + d] =
                        xv.data[(bi * n + i) * c + hi * dh + d];
                }
            }
        }
    }
    tape.push_op(
        Tensor::new(vec![b * heads, n, dh], out),
        vec![x],
        Box::new(move |gout, parents, _| {
            let mut dx = vec![E::zero(); parents[0].numel()];
            for bi in 0..b {
                for hi in 0..heads {
                    for i in 0..n {
                        for d in 0..dh {
                            dx[(bi * n + i) * c + hi * dh + d] =
                                gout.data[((bi * heads + hi) * n + i) * dh + d];
                        }
                    }
                }
            }
            vec![Tensor::new(parents[0].shape.clone(), dx)]
        }),
    )
}

/// Inverse of [`split_heads`]: [B*heads, N, dh] -> [B, N, heads*dh].
pub fn merge_heads<E: Elem>(tape: &mut Tape<E>, x: TensorId, heads: usize) -> TensorId {
    let xv = tape.value(x);
    assert_eq!(xv.rank(), 3);
    let (bh, n, dh) = (xv.shape[0], xv.shape[1], xv.shape[2]);
    assert!(bh % heads == 0);
    let b = bh / heads;
    let c = heads * dh;
    let mut out = vec![E::zero(); xv.numel()];
    for bi in 0..b {
        for hi in 0..heads {
            for i in 0..n {
                for d in 0..dh {
                    out[(bi * n + i) * c + hi * dh + d] =
                        xv.data[((bi * heads + hi) * n + i) * dh + d];
                }
            }
        }
    }
    tape.push_op(
        Tensor::new(vec![b, n, c], out),
        vec![x],
        Box::new(move |gout, parents, _| {
            let mut dx = vec![E::zero(); parents[0].numel()];
            for bi in 0..b {
                for hi in 0..heads {
                    for i in 0..n {
                        for d in 0..dh {
                            dx[((bi * heads + hi) * n + i) * dh + d] =
                                gout.data[(bi * n + i) * c + hi * dh + d];
                        }
                    }
                }
            }
            vec![Tensor::new(parents[0].shape.clone(), dx)]
        }),
    )
}
