//! 2D convolution (cross-correlation convention) with stride, padding,
//! and groups, via im2col + gemm. The column matrix is rebuilt in the
//! backward pass instead of being saved.

use super::gemm::{gemm_nn, gemm_nt, gemm_tn};
use crate::scalar::Elem;
use crate::tape::{Tape, TensorId};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct Conv2dSpec {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl Default for Conv2dSpec {
    fn default() -> Self {
        Conv2dSpec {
            stride: 1,
            padding: 0,
            groups: 1,
        }
    }
}

pub fn conv2d_out_dim(h: usize, pad: usize, k: usize, stride: usize) -> usize {
    let num = h + 2 * pad;
    assert!(num >= k, "kernel {k} larger than padded input {num}");
    assert!(
        (num - k) % stride == 0,
        "non-integral conv output size: (H+2p-k) = {} not divisible by stride {}",
        num - k,
        stride
    );
    (num - k) / stride + 1
}

/// Fills `cols` ([cin_g*kh*kw, ho*wo]) for one sample/group.
#[allow(clippy::too_many_arguments)]
fn im2col<E: Elem>(
    x: &[E],
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
    cin_g: usize,
    cols: &mut [E],
) {
    let p = ho * wo;
    for c in 0..cin_g {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (c * kh + ky) * kw + kx;
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    for ox in 0..wo {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        let v = if iy >= 0 && iy < h as isize && ix >= 0 && ix < w as isize
                        {
                            x[(c * h + iy as usize) * w + ix as usize]
                        } else {
                            E::zero()
                        };
                        cols[row * p + oy * wo + ox] = v;
                    }
                }
            }
        }
    }
}

/// Scatter-adds `cols` back into the input gradient (transpose of im2col).
#[allow(clippy::too_many_arguments)]
fn col2im<E: Elem>(
    cols: &[E],
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
    cin_g: usize,
    dx: &mut [E],
) {
    let p = ho * wo;
    for c in 0..cin_g {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (c * kh + ky) * kw + kx;
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..wo {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let di = (c * h + iy as usize) * w + ix as usize;
                        dx[di] = dx[di] + cols[row * p + oy * wo + ox];
                    }
                }
            }
        }
    }
}

/// x[B,Cin,H,W] * w[Cout,Cin/g,kh,kw] (+ bias[Cout]) -> [B,Cout,H',W'].
pub fn conv2d<E: Elem>(
    tape: &mut Tape<E>,
    x: TensorId,
    w: TensorId,
    bias: Option<TensorId>,
    spec: Conv2dSpec,
) -> TensorId {
    let (xv, wv) = (tape.value(x), tape.value(w));
    assert_eq!(xv.rank(), 4, "conv2d input must be [B,Cin,H,W]");
    assert_eq!(wv.rank(), 4, "conv2d weight must be [Cout,Cin/g,kh,kw]");
    let (b, cin, h, wd) = (xv.shape[0], xv.shape[1], xv.shape[2], xv.shape[3]);
    let (cout, cin_g, kh, kw) = (wv.shape[0], wv.shape[1], wv.shape[2], wv.shape[3]);
    let g = spec.groups;
    assert!(
        cin % g == 0 && cout % g == 0 && cin / g == cin_g,
        "channel/group mismatch: cin {cin}, cout {cout}, groups {g}, weight cin/g {cin_g}"
    );
    let ho = conv2d_out_dim(h, spec.padding, kh, spec.stride);
    let wo = conv2d_out_dim(wd, spec.padding, kw, spec.stride);
    let (cout_g, l, p) = (cout / g, cin_g * kh * kw, ho * wo);

    let mut out = vec![E::zero(); b * cout * p];
    let mut cols = vec![E::zero(); l * p];
    for bi in 0..b {
        for gi in 0..g {
            let xs = &xv.data[(bi * cin + gi * cin_g) * h * wd..(bi * cin + (gi + 1) * cin_g) * h * wd];
            im2col(xs, h, wd, kh, kw, spec.stride, spec.padding, ho, wo, cin_g, &mut cols);
            gemm_nn(
                cout_g,
                l,
                p,
                &wv.data[gi * cout_g * l..(gi + 1) * cout_g * l],
                &cols,
                &mut out[(bi * cout + gi * cout_g) * p..(bi * cout + (gi + 1) * cout_g) * p],
            );
        }
    }
    if let Some(bid) = bias {
        let bv = tape.value(bias.unwrap());
        assert_eq!(bv.shape, vec![cout], "conv bias must be [Cout]");
        for bi in 0..b {
            for c in 0..cout {
                let bvv = bv.data[c];
                for v in &mut out[(bi * cout + c) * p..(bi * cout + c + 1) * p] {
                    *v = *v + bvv;
                }
            }
        }
        let _ = bid;
    }
    tape.count_flops(2 * (b * cout * p * l) as u64);

    let mut parents = vec![x, w];
    if let Some(bid) = bias {
        parents.push(bid);
    }
    let has_bias = bias.is_some();
    tape.push_op(
        Tensor::new(vec![b, cout, ho, wo], out),
        parents,
        Box::new(move |gout, parentv, _| {
            let (xv, wv) = (parentv[0], parentv[1]);
            let mut dx = vec![E::zero(); xv.numel()];
            let mut dw = vec![E::zero(); wv.numel()];
            let mut cols = vec![E::zero(); l * p];
            let mut dcols = vec![E::zero(); l * p];
            for bi in 0..b {
                for gi in 0..g {
                    let xs = &xv.data
                        [(bi * cin + gi * cin_g) * h * wd..(bi * cin + (gi + 1) * cin_g) * h * wd];
                    im2col(xs, h, wd, kh, kw, spec.stride, spec.padding, ho, wo, cin_g, &mut cols);
                    let gslice =
                        &gout.data[(bi * cout + gi * cout_g) * p..(bi * cout + (gi + 1) * cout_g) * p];
                    // dW += g . cols^T
                    gemm_nt(
                        cout_g,
                        p,
                        l,
                        gslice,
                        &cols,
                        &mut dw[gi * cout_g * l..(gi + 1) * cout_g * l],
                    );
                    // dcols = W^T . g
                    dcols.fill(E::zero());
                    gemm_tn(
                        l,
                        cout_g,
                        p,
                        &wv.data[gi * cout_g * l..(gi + 1) * cout_g * l],
                        gslice,
                        &mut dcols,
                    );
                    col2im(
                        &dcols,
                        h,
                        wd,
                        kh,
                        kw,
                        spec.stride,
                        spec.padding,
                        ho,
                        wo,
                        cin_g,
                        &mut dx[(bi * cin + gi * cin_g) * h * wd
                            ..(bi * cin + (gi + 1) * cin_g) * h * wd],
                    );
                }
            }
            let mut grads = vec![
                Tensor::new(xv.shape.clone(), dx),
                Tensor::new(wv.shape.clone(), dw),
            ];
            if has_bias {
                let mut db = vec![E::zero(); cout];
                for bi in 0..b {
                    for c in 0..cout {
                        for i in 0..p {
                            db[c] = db[c] + gout.data[(bi * cout + c) * p + i];
                        }
                    }
                }
                grads.push(Tensor::new(vec![cout], db));
            }
            grads
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_by_one_identity_kernel() {
        let mut t = Tape::<f64>::new();
        let x = t.leaf(Tensor::from_f64(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]), false);
        let w = t.leaf(Tensor::from_f64(&[1, 1, 1, 1], &[1.0]), false);
        let y = conv2d(&mut t, x, w, None, Conv2dSpec::default());
        assert_eq!(t.value(y).data, vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn ones_kernel_on_one_hot() {
        // 3x3 all-ones kernel, pad 1, one-hot center input: each output pixel
        // counts the hot pixel inside its 3x3 window -> all ones.
        let mut t = Tape::<f64>::new();
        let mut xv = vec![0.0; 9];
        xv[4] = 1.0; // center
        let x = t.leaf(Tensor::from_f64(&[1, 1, 3, 3], &xv), false);
        let w = t.leaf(Tensor::ones(&[1, 1, 3, 3]), false);
        let y = conv2d(
            &mut t,
            x,
            w,
            None,
            Conv2dSpec {
                padding: 1,
                ..Default::default()
            },
        );
        assert_eq!(t.value(y).data, vec![1.0; 9]);
    }

    #[test]
    fn zero_kernel_zero_output() {
        let mut t = Tape::<f64>::new();
        let x = t.leaf(Tensor::ones(&[2, 3, 4, 4]), false);
        let w = t.leaf(Tensor::zeros(&[5, 3, 3, 3]), false);
        let y = conv2d(
            &mut t,
            x,
            w,
            None,
            Conv2dSpec {
                padding: 1,
                ..Default::default()
            },
        );
        assert_eq!(t.shape(y), &[2, 5, 4, 4]);
        assert!(t.value(y).data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn depthwise_groups() {
        let mut t = Tape::<f64>::new();
        let x = t.leaf(Tensor::from_f64(&[1, 2, 1, 1], &[3.0, 5.0]), false);
        let w = t.leaf(Tensor::from_f64(&[2, 1, 1, 1], &[2.0, 10.0]), false);
        let y = conv2d(
            &mut t,
            x,
            w,
            None,
            Conv2dSpec {
                groups: 2,
                ..Default::default()
            },
        );
        assert_eq!(t.value(y).data, vec![6.0, 50.0]);
    }

    #[test]
    #[should_panic(expected = "non-integral")]
    fn non_integral_output_rejected() {
        let mut t = Tape::<f64>::new();
        let x = t.leaf(Tensor::zeros(&[1, 1, 5, 5]), false);
        let w = t.leaf(Tensor::zeros(&[1, 1, 2, 2]), false);
        conv2d(
            &mut t,
            x,
            w,
            None,
            Conv2dSpec {
                stride: 2,
                ..Default::default()
            },
        );
    }

    #[test]
    #[should_panic(expected = "group mismatch")]
    fn group_mismatch_rejected() {
        let mut t = Tape::<f64>::new();
        let x = t.leaf(Tensor::zeros(&[1, 3, 4, 4]), false);
        let w = t.leaf(Tensor::zeros(&[2, 2, 1, 1]), false);
        conv2d(&mut t, x, w, None, Conv2dSpec::default());
    }
}
