//! Evaluation metrics for binary masks: confusion counts, Dice, IoU,
//! precision/recall, and F-beta, aggregated per image then averaged.

use serde::{Deserialize, Serialize};

use crate::scalar::Elem;
use crate::tensor::Tensor;

/// Default binarization threshold for predicted probabilities.
pub const THRESHOLD: f64 = 0.5;

/// Thresholds probabilities into a boolean mask.
pub fn binarize<E: Elem>(pred: &Tensor<E>, threshold: f64) -> Vec<bool> {
    pred.data.iter().map(|v| v.as_f64() >= threshold).collect()
}

fn as_binary<E: Elem>(mask: &Tensor<E>, what: &str) -> Vec<bool> {
    mask.data
        .iter()
        .map(|v| {
            let f = v.as_f64();
            if f == 0.0 {
                false
            } else if f == 1.0 {
                true
            } else {
                panic!("non-binary {what} value {f}");
            }
        })
        .collect()
}

/// (TP, FP, FN, TN) pixel counts of two equally shaped binary masks.
pub fn confusion_counts<E: Elem>(pred: &Tensor<E>, target: &Tensor<E>) -> (u64, u64, u64, u64) {
    assert_eq!(pred.shape, target.shape, "mask shape mismatch");
    let p = as_binary(pred, "prediction");
    let t = as_binary(target, "target");
    let mut counts = (0u64, 0u64, 0u64, 0u64);
    for (pi, ti) in p.iter().zip(&t) {
        match (pi, ti) {
            (true, true) => counts.0 += 1,
            (true, false) => counts.1 += 1,
            (false, true) => counts.2 += 1,
            (false, false) => counts.3 += 1,
        }
    }
    counts
}

/// 2TP/(2TP+FP+FN); two empty masks score 1.
pub fn dice_coef<E: Elem>(pred: &Tensor<E>, target: &Tensor<E>) -> f64 {
    let (tp, fp, fnn, _) = confusion_counts(pred, target);
    ratio(2 * tp, 2 * tp + fp + fnn)
}

/// TP/(TP+FP+FN); two empty masks score 1.
pub fn iou<E: Elem>(pred: &Tensor<E>, target: &Tensor<E>) -> f64 {
    let (tp, fp, fnn, _) = confusion_counts(pred, target);
    ratio(tp, tp + fp + fnn)
}

/// num/den with the empty-empty convention: 0/0 counts as perfect (1.0).
fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

fn fratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        1.0
    } else {
        num / den
    }
}

/// F-beta from (optionally per-pixel weighted) confusion counts. A uniform
/// (or absent) weight map gives the standard F-beta; beta=2 weights recall
/// twice as heavily as precision.
pub fn f_beta<E: Elem>(
    pred: &Tensor<E>,
    target: &Tensor<E>,
    beta: f64,
    weight_map: Option<&Tensor<E>>,
) -> f64 {
    assert!(beta > 0.0, "beta must be positive");
    assert_eq!(pred.shape, target.shape, "mask shape mismatch");
    let p = as_binary(pred, "prediction");
    let t = as_binary(target, "target");
    let weights: Vec<f64> = match weight_map {
        Some(w) => {
            assert_eq!(w.shape, pred.shape, "weight map shape mismatch");
            w.to_f64_vec()
        }
        None => vec![1.0; p.len()],
    };
    let (mut tp, mut fp, mut fnn) = (0.0, 0.0, 0.0);
    for ((pi, ti), wi) in p.iter().zip(&t).zip(&weights) {
        match (pi, ti) {
            (true, true) => tp += wi,
            (true, false) => fp += wi,
            (false, true) => fnn += wi,
            (false, false) => {}
        }
    }
    if tp + fp + fnn == 0.0 {
        return 1.0; // nothing to find, nothing predicted
    }
    let precision = fratio(tp, tp + fp);
    let recall = fratio(tp, tp + fnn);
    let b2 = beta * beta;
    let den = b2 * precision + recall;
    if den == 0.0 {
        0.0
    } else {
        (1.0 + b2) * precision * recall / den
    }
}

/// Metrics of a single image.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub dice: f64,
    pub iou: f64,
    pub recall: f64,
    pub precision: f64,
    pub f2: f64,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

/// Per-image metrics plus their arithmetic means over the image set.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricsReport {
    pub miou: f64,
    pub mdice: f64,
    pub recall: f64,
    pub precision: f64,
    pub f2: f64,
    pub per_image: Vec<ImageMetrics>,
}

fn image_metrics<E: Elem>(pred: &Tensor<E>, target: &Tensor<E>) -> ImageMetrics {
    let (tp, fp, fnn, tn) = confusion_counts(pred, target);
    ImageMetrics {
        dice: ratio(2 * tp, 2 * tp + fp + fnn),
        iou: ratio(tp, tp + fp + fnn),
        recall: ratio(tp, tp + fnn),
        precision: ratio(tp, tp + fp),
        f2: f_beta(pred, target, 2.0, None),
        tp,
        fp,
        fn_: fnn,
        tn,
    }
}

/// Thresholds predictions [B,1,H,W] at `threshold`, computes per-image
/// metrics against the binary targets, and averages them.
pub fn evaluate_batch<E: Elem>(
    preds: &Tensor<E>,
    targets: &Tensor<E>,
    threshold: f64,
) -> MetricsReport {
    assert_eq!(preds.shape, targets.shape, "batch shape mismatch");
    assert!(preds.rank() == 4, "evaluate_batch expects [B,1,H,W]");
    let b = preds.shape[0];
    assert!(b > 0, "empty batch");
    let per: usize = preds.numel() / b;
    let shape = vec![1, preds.shape[1], preds.shape[2], preds.shape[3]];

    let mut per_image = Vec::with_capacity(b);
    for bi in 0..b {
        let pv: Vec<E> = preds.data[bi * per..(bi + 1) * per]
            .iter()
            .map(|v| {
                if v.as_f64() >= threshold {
                    E::one()
                } else {
                    E::zero()
                }
            })
            .collect();
        let p = Tensor::new(shape.clone(), pv);
        let t = Tensor::new(
            shape.clone(),
            targets.data[bi * per..(bi + 1) * per].to_vec(),
        );
        per_image.push(image_metrics(&p, &t));
    }
    let mean = |f: fn(&ImageMetrics) -> f64| -> f64 {
        per_image.iter().map(f).sum::<f64>() / b as f64
    };
    MetricsReport {
        miou: mean(|m| m.iou),
        mdice: mean(|m| m.dice),
        recall: mean(|m| m.recall),
        precision: mean(|m| m.precision),
        f2: mean(|m| m.f2),
        per_image,
    }
}
