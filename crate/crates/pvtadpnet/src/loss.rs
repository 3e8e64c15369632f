//! Compound training loss: binary cross-entropy plus soft Dice and soft
//! Jaccard terms, each built from tape primitives so the whole loss is
//! differentiable and finite-difference checkable.

use crate::ops;
use crate::scalar::Elem;
use crate::tape::{Tape, TensorId};

/// Clamp bounds applied to predictions inside the BCE term.
pub const BCE_CLAMP: f64 = 1e-7;

#[derive(Clone, Copy, Debug)]
pub struct LossConfig {
    /// Jaccard smoothing factor.
    pub alpha: f64,
    /// Dice stabilizer.
    pub epsilon: f64,
    pub w_bce: f64,
    pub w_dice: f64,
    pub w_jac: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            alpha: 1.0,
            epsilon: 1.0,
            w_bce: 1.0,
            w_dice: 1.0,
            w_jac: 1.0,
        }
    }
}

fn assert_same_shape<E: Elem>(tape: &Tape<E>, pred: TensorId, target: TensorId) {
    assert_eq!(
        tape.shape(pred),
        tape.shape(target),
        "loss shape mismatch: pred {:?} vs target {:?}",
        tape.shape(pred),
        tape.shape(target)
    );
}

/// Mean of -[y ln p + (1-y) ln(1-p)], with p clamped to
/// [BCE_CLAMP, 1-BCE_CLAMP] for stability.
pub fn bce_loss<E: Elem>(tape: &mut Tape<E>, pred: TensorId, target: TensorId) -> TensorId {
    assert_same_shape(tape, pred, target);
    let p = ops::clamp(tape, pred, BCE_CLAMP, 1.0 - BCE_CLAMP);
    let ln_p = ops::ln(tape, p);
    let neg_p = ops::neg(tape, p);
    let one_m_p = ops::add_const(tape, neg_p, 1.0);
    let ln_1mp = ops::ln(tape, one_m_p);
    let neg_y = ops::neg(tape, target);
    let one_m_y = ops::add_const(tape, neg_y, 1.0);
    let a = ops::mul(tape, target, ln_p);
    let b = ops::mul(tape, one_m_y, ln_1mp);
    let s = ops::add(tape, a, b);
    let m = ops::mean_all(tape, s);
    ops::neg(tape, m)
}

/// Soft Jaccard loss alpha * (1 - (I + alpha)/(U + alpha)) with
/// I = sum(y*p) and U = sum(y + p - y*p) over all pixels.
pub fn jaccard_loss<E: Elem>(
    tape: &mut Tape<E>,
    pred: TensorId,
    target: TensorId,
    alpha: f64,
) -> TensorId {
    assert_same_shape(tape, pred, target);
    assert!(alpha > 0.0, "alpha must be positive");
    let yp = ops::mul(tape, target, pred);
    let inter = ops::sum_all(tape, yp);
    let sum_yp = {
        let s = ops::add(tape, target, pred);
        let u = ops::sub(tape, s, yp);
        ops::sum_all(tape, u)
    };
    let num = ops::add_const(tape, inter, alpha);
    let den = ops::add_const(tape, sum_yp, alpha);
    let ratio = ops::div(tape, num, den);
    let neg_r = ops::neg(tape, ratio);
    let one_m_r = ops::add_const(tape, neg_r, 1.0);
    ops::scale(tape, one_m_r, alpha)
}

/// Soft Dice loss 1 - (2*sum(y*p) + eps)/(sum(y) + sum(p) + eps).
pub fn dice_loss<E: Elem>(
    tape: &mut Tape<E>,
    pred: TensorId,
    target: TensorId,
    epsilon: f64,
) -> TensorId {
    assert_same_shape(tape, pred, target);
    assert!(epsilon > 0.0, "epsilon must be positive");
    let yp = ops::mul(tape, target, pred);
    let inter = ops::sum_all(tape, yp);
    let inter2 = ops::scale(tape, inter, 2.0);
    let sy = ops::sum_all(tape, target);
    let sp = ops::sum_all(tape, pred);
    let sums = ops::add(tape, sy, sp);
    let num = ops::add_const(tape, inter2, epsilon);
    let den = ops::add_const(tape, sums, epsilon);
    let ratio = ops::div(tape, num, den);
    let neg_r = ops::neg(tape, ratio);
    ops::add_const(tape, neg_r, 1.0)
}

/// Weighted sum of the three components; the default weights (1,1,1) give
/// the plain BCE + Dice + Jaccard total.
pub fn total_loss<E: Elem>(
    tape: &mut Tape<E>,
    pred: TensorId,
    target: TensorId,
    cfg: &LossConfig,
) -> TensorId {
    let bce = bce_loss(tape, pred, target);
    let dice = dice_loss(tape, pred, target, cfg.epsilon);
    let jac = jaccard_loss(tape, pred, target, cfg.alpha);
    let wb = ops::scale(tape, bce, cfg.w_bce);
    let wd = ops::scale(tape, dice, cfg.w_dice);
    let wj = ops::scale(tape, jac, cfg.w_jac);
    let s = ops::add(tape, wb, wd);
    ops::add(tape, s, wj)
}
