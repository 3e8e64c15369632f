//! Central finite-difference gradient checking.
//!
//! The numeric side only ever calls the forward pass, so it stays
//! independent of every backward closure it is used to verify.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ops;
use crate::tape::{Tape, TensorId};
use crate::tensor::Tensor;

/// Relative error convention used across all gradient checks:
/// |analytic - numeric| / max(1, |numeric|).
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / f64::max(1.0, numeric.abs())
}

/// Central difference of `f` at coordinate `idx` of `x`.
pub fn central_diff(
    f: &mut dyn FnMut(&[f64]) -> f64,
    x: &mut Vec<f64>,
    idx: usize,
    h: f64,
) -> f64 {
    let orig = x[idx];
    x[idx] = orig + h;
    let fp = f(x);
    x[idx] = orig - h;
    let fm = f(x);
    x[idx] = orig;
    (fp - fm) / (2.0 * h)
}

/// Compares an analytic gradient against central differences over all
/// coordinates. Returns the max relative error.
pub fn check_grad(
    f: &mut dyn FnMut(&[f64]) -> f64,
    x: &[f64],
    analytic: &[f64],
    h: f64,
) -> f64 {
    assert_eq!(x.len(), analytic.len());
    let mut xv = x.to_vec();
    let mut worst = 0.0f64;
    for i in 0..xv.len() {
        let num = central_diff(f, &mut xv, i, h);
        worst = worst.max(rel_err(analytic[i], num));
    }
    worst
}

/// Gradient-checks a tape-recorded op: builds `y = build(tape, x)` from a
/// random input of the given shape, takes the probe loss `sum(c * y)` with
/// fixed random weights `c`, and compares the tape gradient of x against
/// central differences. Returns the max relative error.
pub fn check_op(
    shape: &[usize],
    seed: u64,
    h: f64,
    build: impl Fn(&mut Tape<f64>, TensorId) -> TensorId,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    let x0: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();

    // probe weights fixed before we know the output shape; drawn lazily
    let mut probe: Option<Vec<f64>> = None;
    let mut probe_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e3779b97f4a7c15);

    let mut eval = |xs: &[f64], want_grad: bool| -> (f64, Option<Vec<f64>>) {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_f64(shape, xs), true);
        let y = build(&mut tape, x);
        let ynum = tape.value(y).numel();
        let c = probe.get_or_insert_with(|| {
            (0..ynum).map(|_| probe_rng.gen_range(-1.0..1.0)).collect()
        });
        let cshape = tape.value(y).shape.clone();
        let cid = tape.constant(Tensor::from_f64(&cshape, c));
        let prod = ops::mul(&mut tape, y, cid);
        let loss = ops::sum_all(&mut tape, prod);
        let lv = tape.value(loss).item();
        if want_grad {
            tape.backward(loss);
            (lv, Some(tape.grad(x).unwrap().to_f64_vec()))
        } else {
            (lv, None)
        }
    };

    let (_, analytic) = eval(&x0, true);
    let analytic = analytic.unwrap();
    let mut f = |xs: &[f64]| eval(xs, false).0;
    check_grad(&mut f, &x0, &analytic, h)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_grad_passes() {
        let x = [0.7, -1.3, 2.0];
        let analytic: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let mut f = |xs: &[f64]| xs.iter().map(|v| v * v).sum();
        assert!(check_grad(&mut f, &x, &analytic, 1e-4) < 1e-8);
    }

    #[test]
    fn wrong_gradient_is_flagged() {
        let x = [0.7, -1.3, 2.0];
        let wrong: Vec<f64> = x.iter().map(|v| 3.0 * v).collect();
        let mut f = |xs: &[f64]| xs.iter().map(|v| v * v).sum();
        assert!(check_grad(&mut f, &x, &wrong, 1e-4) > 1e-2);
    }
}
