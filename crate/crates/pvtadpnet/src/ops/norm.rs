//! Softmax, layer norm, and batch norm.

use crate::scalar::{el, Elem};
use crate::tape::{Tape, TensorId};
use crate::tensor::Tensor;

/// Softmax along the last axis, computed with max subtraction.
pub fn softmax_last<E: Elem>(tape: &mut Tape<E>, x: TensorId) -> TensorId {
    let xv = tape.value(x);
    let n = *xv.shape.last().expect("rank >= 1");
    let rows = xv.numel() / n;
    let mut data = vec![E::zero(); xv.numel()];
    for r in 0..rows {
        let row = &xv.data[r * n..(r + 1) * n];
        let m = row.iter().copied().fold(E::neg_infinity(), E::max);
        let mut sum = E::zero();
        for (o, &v) in data[r * n..(r + 1) * n].iter_mut().zip(row.iter()) {
            let e = (v - m).exp();
            *o = e;
            sum = sum + e;
        }
        for o in &mut data[r * n..(r + 1) * n] {
            *o = *o / sum;
        }
    }
    let value = Tensor::new(xv.shape.clone(), data);
    tape.count_flops(4 * value.numel() as u64);
    tape.push_op(
        value,
        vec![x],
        Box::new(move |gout, parents, out| {
            // dx = y * (g - sum(g*y)) per row
            let mut dx = vec![E::zero(); out.numel()];
            for r in 0..rows {
                let y = &out.data[r * n..(r + 1) * n];
                let g = &gout.data[r * n..(r + 1) * n];
                let dot: E = y.iter().zip(g).map(|(&yv, &gv)| yv * gv).sum();
                for i in 0..n {
                    dx[r * n + i] = y[i] * (g[i] - dot);
                }
            }
            vec![Tensor::new(parents[0].shape.clone(), dx)]
        }),
    )
}

/// Layer norm over the last axis with affine gamma/beta of that length.
pub fn layer_norm<E: Elem>(
    tape: &mut Tape<E>,
    x: TensorId,
    gamma: TensorId,
    beta: TensorId,
    eps: f64,
) -> TensorId {
    assert!(eps > 0.0, "eps must be positive");
    let (xv, gv, bv) = (tape.value(x), tape.value(gamma), tape.value(beta));
    let n = *xv.shape.last().expect("rank >= 1");
    assert_eq!(gv.shape, vec![n], "gamma length must match normalized axis");
    assert_eq!(bv.shape, vec![n], "beta length must match normalized axis");
    let rows = xv.numel() / n;
    let epse = el::<E>(eps);
    let nn = el::<E>(n as f64);

    let mut data = vec![E::zero(); xv.numel()];
    let mut inv_std = vec![E::zero(); rows];
    let mut means = vec![E::zero(); rows];
    for r in 0..rows {
        let row = &xv.data[r * n..(r + 1) * n];
        let mu: E = row.iter().copied().sum::<E>() / nn;
        let var: E = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<E>() / nn;
        let inv = E::one() / (var + epse).sqrt();
        means[r] = mu;
        inv_std[r] = inv;
        for i in 0..n {
            data[r * n + i] = gv.data[i] * (row[i] - mu) * inv + bv.data[i];
        }
    }
    let value = Tensor::new(xv.shape.clone(), data);
    tape.count_flops(8 * value.numel() as u64);
    tape.push_op(
        value,
        vec![x, gamma, beta],
        Box::new(move |gout, parents, _| {
            let (xv, gv) = (parents[0], parents[1]);
            let mut dx = vec![E::zero(); xv.numel()];
            let mut dg = vec![E::zero(); n];
            let mut db = vec![E::zero(); n];
            for r in 0..rows {
                let row = &xv.data[r * n..(r + 1) * n];
                let g = &gout.data[r * n..(r + 1) * n];
                let (mu, inv) = (means[r], inv_std[r]);
                let mut mean_dxhat = E::zero();
                let mut mean_dxhat_xhat = E::zero();
                for i in 0..n {
                    let xhat = (row[i] - mu) * inv;
                    let dxhat = g[i] * gv.data[i];
                    dg[i] = dg[i] + g[i] * xhat;
                    db[i] = db[i] + g[i];
                    mean_dxhat = mean_dxhat + dxhat;
                    mean_dxhat_xhat = mean_dxhat_xhat + dxhat * xhat;
                }
                mean_dxhat = mean_dxhat / nn;
                mean_dxhat_xhat = mean_dxhat_xhat / nn;
                for i in 0..n {
                    let xhat = (row[i] - mu) * inv;
                    let dxhat = g[i] * gv.data[i];
                    dx[r * n + i] = inv * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat);
                }
            }
            vec![
                Tensor::new(xv.shape.clone(), dx),
                Tensor::new(vec![n], dg),
                Tensor::new(vec![n], db),
            ]
        }),
    )
}

/// Batch norm over [B,C,H,W] with per-channel affine parameters.
///
/// Training mode normalizes with batch statistics (biased variance) and
/// updates the running buffers in place; eval mode uses the running stats
/// as constants.
#[allow(clippy::too_many_arguments)]
pub fn batch_norm2d<E: Elem>(
    tape: &mut Tape<E>,
    x: TensorId,
    gamma: TensorId,
    beta: TensorId,
    running_mean: &mut Tensor<E>,
    running_var: &mut Tensor<E>,
    eps: f64,
    momentum: f64,
    training: bool,
) -> TensorId {
    assert!(eps > 0.0, "eps must be positive");
    let xv = tape.value(x);
    assert_eq!(xv.rank(), 4, "batch_norm2d expects [B,C,H,W]");
    let (b, c, h, w) = (xv.shape[0], xv.shape[1], xv.shape[2], xv.shape[3]);
    assert_eq!(tape.value(gamma).shape, vec![c]);
    assert_eq!(tape.value(beta).shape, vec![c]);
    assert_eq!(running_mean.shape, vec![c]);
    assert_eq!(running_var.shape, vec![c]);
    let hw = h * w;
    let m = b * hw;
    let me = el::<E>(m as f64);
    let epse = el::<E>(eps);

    let (mean, var) = if training {
        let mut mean = vec![E::zero(); c];
        let mut var = vec![E::zero(); c];
        for ci in 0..c {
            let mut s = E::zero();
            for bi in 0..b {
                for i in 0..hw {
                    s = s + xv.data[(bi * c + ci) * hw + i];
                }
            }
            let mu = s / me;
            let mut v = E::zero();
            for bi in 0..b {
                for i in 0..hw {
                    let d = xv.data[(bi * c + ci) * hw + i] - mu;
                    v = v + d * d;
                }
            }
            mean[ci] = mu;
            var[ci] = v / me;
        }
        let mom = el::<E>(momentum);
        let keep = E::one() - mom;
        for ci in 0..c {
            running_mean.data[ci] = keep * running_mean.data[ci] + mom * mean[ci];
            running_var.data[ci] = keep * running_var.data[ci] + mom * var[ci];
        }
        (mean, var)
    } else {
        (running_mean.data.clone(), running_var.data.clone())
    };

    let gv = tape.value(gamma).data.clone();
    let bv2 = tape.value(beta).data.clone();
    let inv: Vec<E> = var.iter().map(|&v| E::one() / (v + epse).sqrt()).collect();
    let mut data = vec![E::zero(); xv.numel()];
    for bi in 0..b {
        for ci in 0..c {
            let base = (bi * c + ci) * hw;
            for i in 0..hw {
                data[base + i] = gv[ci] * (xv.data[base + i] - mean[ci]) * inv[ci] + bv2[ci];
            }
        }
    }
    let value = Tensor::new(xv.shape.clone(), data);
    tape.count_flops(4 * value.numel() as u64);

    tape.push_op(
        value,
        vec![x, gamma, beta],
        Box::new(move |gout, parents, _| {
            let (xv, gv) = (parents[0], parents[1]);
            let mut dx = vec![E::zero(); xv.numel()];
            let mut dg = vec![E::zero(); c];
            let mut db = vec![E::zero(); c];
            for ci in 0..c {
                let (mu, ivd) = (mean[ci], inv[ci]);
                let gam = gv.data[ci];
                let mut sum_dxhat = E::zero();
                let mut sum_dxhat_xhat = E::zero();
                for bi in 0..b {
                    let base = (bi * c + ci) * hw;
                    for i in 0..hw {
                        let xhat = (xv.data[base + i] - mu) * ivd;
                        let g = gout.data[base + i];
                        dg[ci] = dg[ci] + g * xhat;
                        db[ci] = db[ci] + g;
                        let dxhat = g * gam;
                        sum_dxhat = sum_dxhat + dxhat;
                        sum_dxhat_xhat = sum_dxhat_xhat + dxhat * xhat;
                    }
                }
                for bi in 0..b {
                    let base = (bi * c + ci) * hw;
                    for i in 0..hw {
                        let xhat = (xv.data[base + i] - mu) * ivd;
                        let dxhat = gout.data[base + i] * gam;
                        dx[base + i] = if training {
                            ivd * (dxhat - sum_dxhat / me - xhat * sum_dxhat_xhat / me)
                        } else {
                            dxhat * ivd
                        };
                    }
                }
            }
            vec![
                Tensor::new(xv.shape.clone(), dx),
                Tensor::new(vec![c], dg),
                Tensor::new(vec![c], db),
            ]
        }),
    )
}
