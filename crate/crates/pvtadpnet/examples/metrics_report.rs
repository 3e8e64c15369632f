//! Computes the segmentation metric suite on a small hand-made batch and
//! prints the JSON report used by the `eval` command.

use pvtadpnet::metrics::{dice_coef, evaluate_batch, f_beta, iou};
use pvtadpnet::Tensor;

fn main() {
    // Two 4x4 "images": one near-perfect prediction, one that misses half
    // of the foreground.
    let targets = Tensor::<f64>::from_f64(
        &[2, 1, 4, 4],
        &[
            1., 1., 0., 0., 1., 1., 0., 0., 0., 0., 0., 0., 0., 0., 0., 0., //
            1., 1., 1., 1., 1., 1., 1., 1., 0., 0., 0., 0., 0., 0., 0., 0.,
        ],
    );
    let preds = Tensor::<f64>::from_f64(
        &[2, 1, 4, 4],
        &[
            0.9, 0.8, 0.1, 0.2, 0.7, 0.9, 0.3, 0.1, 0.2, 0.1, 0.0, 0.1, 0.1, 0.0, 0.2, 0.1, //
            0.9, 0.8, 0.2, 0.1, 0.9, 0.7, 0.3, 0.2, 0.1, 0.2, 0.1, 0.0, 0.2, 0.1, 0.0, 0.1,
        ],
    );

    let report = evaluate_batch(&preds, &targets, 0.5);
    println!("{}", serde_json::to_string_pretty(&report).unwrap());

    // Single-pair helpers on already-binary masks, plus the algebraic
    // Dice = 2*IoU/(1+IoU) identity.
    let y = Tensor::<f64>::from_f64(&[4], &[1.0, 1.0, 0.0, 0.0]);
    let p = Tensor::<f64>::from_f64(&[4], &[1.0, 0.0, 1.0, 0.0]);
    let (d, i) = (dice_coef(&p, &y), iou(&p, &y));
    println!("hand case: dice {d:.4}, iou {i:.4}, f2 {:.4}", f_beta(&p, &y, 2.0, None));
    println!("identity check: 2*iou/(1+iou) = {:.4}", 2.0 * i / (1.0 + i));
}
