//! Pooling and resampling ops.

use crate::scalar::{el, Elem};
use crate::tape::{Tape, TensorId};
use crate::tensor::Tensor;

/// [B,C,H,W] -> [B,C] per-channel spatial mean.
pub fn global_avg_pool<E: Elem>(tape: &mut Tape<E>, x: TensorId) -> TensorId {
    let xv = tape.value(x);
    assert_eq!(xv.rank(), 4, "global_avg_pool expects [B,C,H,W]");
    let (b, c, h, w) = (xv.shape[0], xv.shape[1], xv.shape[2], xv.shape[3]);
    let hw = h * w;
    let inv = el::<E>(1.0 / hw as f64);
    let mut out = vec![E::zero(); b * c];
    for (i, o) in out.iter_mut().enumerate() {
        let base = i * hw;
        *o = xv.data[base..base + hw].iter().copied().sum::<E>() * inv;
    }
    tape.count_flops(xv.numel() as u64);
    tape.push_op(
        Tensor::new(vec![b, c], out),
        vec![x],
        Box::new(move |gout, parents, _| {
            let mut dx = vec![E::zero(); parents[0].numel()];
            for (i, &g) in gout.data.iter().enumerate() {
                let gv = g * inv;
                for v in &mut dx[i * hw..(i + 1) * hw] {
                    *v = gv;
                }
            }
            vec![Tensor::new(parents[0].shape.clone(), dx)]
        }),
    )
}

/// Strided average pooling by a power-of-two factor (the downsample used
/// by the encoder fusion path).
pub fn avg_pool_down<E: Elem>(tape: &mut Tape<E>, x: TensorId, factor: usize) -> TensorId {
    assert!(
        factor.is_power_of_two() && factor >= 1,
        "downsample factor must be a power of 2, got {factor}"
    );
    let xv = tape.value(x);
    assert_eq!(xv.rank(), 4, "avg_pool_down expects [B,C,H,W]");
    let (b, c, h, w) = (xv.shape[0], xv.shape[1], xv.shape[2], xv.shape[3]);
    assert!(
        h % factor == 0 && w % factor == 0,
        "spatial dims {h}x{w} not divisible by factor {factor}"
    );
    let (ho, wo) = (h / factor, w / factor);
    let inv = el::<E>(1.0 / (factor * factor) as f64);
    let mut out = vec![E::zero(); b * c * ho * wo];
    for bc in 0..b * c {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut s = E::zero();
                for ky in 0..factor {
                    for kx in 0..factor {
                        s = s + xv.data[bc * h * w + (oy * factor + ky) * w + ox * factor + kx];
                    }
                }
                out[bc * ho * wo + oy * wo + ox] = s * inv;
            }
        }
    }
    tape.count_flops(xv.numel() as u64);
    tape.push_op(
        Tensor::new(vec![b, c, ho, wo], out),
        vec![x],
        Box::new(move |gout, parents, _| {
            let mut dx = vec![E::zero(); parents[0].numel()];
            for bc in 0..b * c {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let g = gout.data[bc * ho * wo + oy * wo + ox] * inv;
                        for ky in 0..factor {
                            for kx in 0..factor {
                                dx[bc * h * w + (oy * factor + ky) * w + ox * factor + kx] = g;
                            }
                        }
                    }
                }
            }
            vec![Tensor::new(parents[0].shape.clone(), dx)]
        }),
    )
}

/// Source taps and weights for one output coordinate under the
/// align-corners=false convention at scale 2.
fn bilinear_taps(o: usize, len: usize) -> [(usize, f64); 2] {
    let s = (o as f64 + 0.5) / 2.0 - 0.5;
    let s0 = s.floor();
    let frac = s - s0;
    let i0 = (s0.max(0.0) as usize).min(len - 1);
    let i1 = ((s0 + 1.0).max(0.0) as usize).min(len - 1);
    [(i0, 1.0 - frac), (i1, frac)]
}

/// Bilinear x2 upsampling, align-corners=false. Backward is the transpose.
pub fn upsample_bilinear_2x<E: Elem>(tape: &mut Tape<E>, x: TensorId) -> TensorId {
    let xv = tape.value(x);
    assert_eq!(xv.rank(), 4, "upsample expects [B,C,H,W]");
    let (b, c, h, w) = (xv.shape[0], xv.shape[1], xv.shape[2], xv.shape[3]);
    let (ho, wo) = (2 * h, 2 * w);
    let ytaps: Vec<[(usize, f64); 2]> = (0..ho).map(|o| bilinear_taps(o, h)).collect();
    let xtaps: Vec<[(usize, f64); 2]> = (0..wo).map(|o| bilinear_taps(o, w)).collect();
    let mut out = vec![E::zero(); b * c * ho * wo];
    for bc in 0..b * c {
        let src = &xv.data[bc * h * w..(bc + 1) * h * w];
        let dst = &mut out[bc * ho * wo..(bc + 1) * ho * wo];
        for oy in 0..ho {
            for ox in 0..wo {
                let mut acc = 0.0f64;
                for &(iy, wy) in &ytaps[oy] {
                    for &(ix, wx) in &xtaps[ox] {
                        acc += wy * wx * src[iy * w + ix].as_f64();
                    }
                }
                dst[oy * wo + ox] = el::<E>(acc);
            }
        }
    }
    tape.count_flops(8 * (b * c * ho * wo) as u64);
    tape.push_op(
        Tensor::new(vec![b, c, ho, wo], out),
        vec![x],
        Box::new(move |gout, parents, _| {
            let mut dx = vec![E::zero(); parents[0].numel()];
            for bc in 0..b * c {
                let g = &gout.data[bc * ho * wo..(bc + 1) * ho * wo];
                let d = &mut dx[bc * h * w..(bc + 1) * h * w];
                for oy in 0..ho {
                    for ox in 0..wo {
                        let gv = g[oy * wo + ox].as_f64();
                        for &(iy, wy) in &ytaps[oy] {
                            for &(ix, wx) in &xtaps[ox] {
                                d[iy * w + ix] = d[iy * w + ix] + el::<E>(wy * wx * gv);
                            }
                        }
                    }
                }
            }
            vec![Tensor::new(parents[0].shape.clone(), dx)]
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::sum_all;

    #[test]
    fn gap_constant_and_mean() {
        let mut t = Tape::<f64>::new();
        let x = t.leaf(Tensor::full(&[1, 2, 3, 3], 4.2), false);
        let y = global_avg_pool(&mut t, x);
        assert_eq!(t.shape(y), &[1, 2]);
        for &v in &t.value(y).data {
            assert!((v - 4.2).abs() < 1e-12);
        }

        let x2 = t.leaf(Tensor::from_f64(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]), false);
        let y2 = global_avg_pool(&mut t, x2);
        assert_eq!(t.value(y2).data, vec![2.5]);
    }

    #[test]
    fn gap_backward_spreads_uniformly() {
        let mut t = Tape::<f64>::new();
        let x = t.leaf(Tensor::from_f64(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]), true);
        let y = global_avg_pool(&mut t, x);
        let s = sum_all(&mut t, y);
        t.backward(s);
        assert_eq!(t.grad(x).unwrap().data, vec![0.25; 4]);
    }

    #[test]
    fn constant_maps_stay_constant() {
        let mut t = Tape::<f64>::new();
        let x = t.leaf(Tensor::full(&[1, 1, 4, 4], 3.0), false);
        let up = upsample_bilinear_2x(&mut t, x);
        assert_eq!(t.shape(up), &[1, 1, 8, 8]);
        assert!(t.value(up).data.iter().all(|&v| (v - 3.0).abs() < 1e-12));
        let down = avg_pool_down(&mut t, up, 2);
        assert!(t.value(down).data.iter().all(|&v| (v - 3.0).abs() < 1e-12));
    }

    #[test]
    fn down_of_up_is_identity_on_constant_regions() {
        let mut t = Tape::<f64>::new();
        let x = t.leaf(Tensor::full(&[1, 1, 2, 2], 1.5), false);
        let up = upsample_bilinear_2x(&mut t, x);
        let down = avg_pool_down(&mut t, up, 2);
        let diff = t.value(down).max_abs_diff(t.value(x));
        assert!(diff < 1e-12);
    }

    #[test]
    fn bilinear_2x2_to_4x4_hand_values() {
        // Hand interpolation of [[0,1],[2,3]] at scale 2, align-corners=false.
        // Sample coords per output index: -0.25, 0.25, 0.75, 1.25 (clamped).
        let mut t = Tape::<f64>::new();
        let x = t.leaf(Tensor::from_f64(&[1, 1, 2, 2], &[0.0, 1.0, 2.0, 3.0]), false);
        let y = upsample_bilinear_2x(&mut t, x);
        let expect = [
            0.0, 0.25, 0.75, 1.0, //
            0.5, 0.75, 1.25, 1.5, //
            1.5, 1.75, 2.25, 2.5, //
            2.0, 2.25, 2.75, 3.0,
        ];
        for (a, e) in t.value(y).data.iter().zip(expect) {
            assert!((a - e).abs() < 1e-12, "{a} vs {e}");
        }
    }

    #[test]
    #[should_panic(expected = "power of 2")]
    fn non_power_of_two_factor_rejected() {
        let mut t = Tape::<f64>::new();
        let x = t.leaf(Tensor::zeros(&[1, 1, 6, 6]), false);
        avg_pool_down(&mut t, x, 3);
    }
}
