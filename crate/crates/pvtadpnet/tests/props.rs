//! Property-based invariants over randomly generated inputs.

use proptest::prelude::*;

use pvtadpnet::data::{epoch_batches, Augmentation, Sample};
use pvtadpnet::metrics::{confusion_counts, dice_coef, evaluate_batch, f_beta, iou};
use pvtadpnet::Tensor;

fn mask_strategy(n: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(prop_oneof![Just(0.0f64), Just(1.0f64)], n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    // Metric bounds and the Dice = 2 IoU/(1+IoU) identity.
    #[test]
    fn metric_bounds_and_dice_iou_identity(
        pv in mask_strategy(256),
        yv in mask_strategy(256),
    ) {
        let p = Tensor::<f64>::from_f64(&[256], &pv);
        let y = Tensor::<f64>::from_f64(&[256], &yv);
        let d = dice_coef(&p, &y);
        let i = iou(&p, &y);
        let f2 = f_beta(&p, &y, 2.0, None);
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert!((0.0..=1.0).contains(&i));
        prop_assert!((0.0..=1.0).contains(&f2));
        prop_assert!((d - 2.0 * i / (1.0 + i)).abs() < 1e-9);
        // Dice never sorts below IoU.
        prop_assert!(d + 1e-12 >= i);
    }

    // Confusion counts match a brute-force loop and partition the pixels.
    #[test]
    fn confusion_counts_match_pixel_loop(
        pv in mask_strategy(256),
        yv in mask_strategy(256),
    ) {
        let p = Tensor::<f64>::from_f64(&[256], &pv);
        let y = Tensor::<f64>::from_f64(&[256], &yv);
        let (tp, fp, fnn, tn) = confusion_counts(&p, &y);
        let mut oracle = (0u64, 0u64, 0u64, 0u64);
        for k in 0..256 {
            match (pv[k] == 1.0, yv[k] == 1.0) {
                (true, true) => oracle.0 += 1,
                (true, false) => oracle.1 += 1,
                (false, true) => oracle.2 += 1,
                (false, false) => oracle.3 += 1,
            }
        }
        prop_assert_eq!((tp, fp, fnn, tn), oracle);
        prop_assert_eq!(tp + fp + fnn + tn, 256);
    }

    // Batch report means always equal the arithmetic mean of per-image rows.
    #[test]
    fn report_means_are_arithmetic(
        pv in proptest::collection::vec(0.0f64..1.0, 4 * 16),
        yv in mask_strategy(4 * 16),
    ) {
        let preds = Tensor::<f64>::from_f64(&[4, 1, 4, 4], &pv);
        let targets = Tensor::<f64>::from_f64(&[4, 1, 4, 4], &yv);
        let r = evaluate_batch(&preds, &targets, 0.5);
        let mean = |f: fn(&pvtadpnet::metrics::ImageMetrics) -> f64| {
            r.per_image.iter().map(f).sum::<f64>() / 4.0
        };
        prop_assert!((r.mdice - mean(|m| m.dice)).abs() < 1e-12);
        prop_assert!((r.miou - mean(|m| m.iou)).abs() < 1e-12);
        prop_assert!((r.f2 - mean(|m| m.f2)).abs() < 1e-12);
    }

    // Flips are involutions and every augmentation keeps masks binary and
    // image/mask geometry aligned.
    #[test]
    fn augmentation_geometry_laws(
        img in proptest::collection::vec(0.0f64..1.0, 2 * 4 * 4),
        msk in mask_strategy(4 * 4),
        seed in any::<u64>(),
    ) {
        let sample = Sample {
            image: Tensor::<f32>::from_f64(&[2, 4, 4], &img),
            mask: Tensor::<f32>::from_f64(&[1, 4, 4], &msk),
        };
        let aug = Augmentation::sample(seed);
        let out = aug.apply(&sample);
        prop_assert!(out.mask.data.iter().all(|&v| v == 0.0 || v == 1.0));
        prop_assert_eq!(out.mask.clone(), aug.apply_geometry(&sample.mask));

        let hflip = Augmentation { hflip: true, ..Augmentation::IDENTITY };
        let twice = hflip.apply(&hflip.apply(&sample));
        prop_assert_eq!(twice.image, sample.image);
        prop_assert_eq!(twice.mask, sample.mask);
    }

    // The batcher partitions the index set: every element exactly once,
    // all batches full except possibly the last.
    #[test]
    fn batcher_partition_law(
        n in 1usize..64,
        batch in 1usize..16,
        seed in any::<u64>(),
    ) {
        let indices: Vec<usize> = (0..n).collect();
        let batches = epoch_batches(&indices, batch, seed);
        let mut flat: Vec<usize> = batches.concat();
        flat.sort_unstable();
        prop_assert_eq!(flat, indices);
        for (k, b) in batches.iter().enumerate() {
            if k + 1 < batches.len() {
                prop_assert_eq!(b.len(), batch);
            } else {
                prop_assert!(b.len() <= batch && !b.is_empty());
            }
        }
        // Same seed, same order.
        let again = epoch_batches(&(0..n).collect::<Vec<_>>(), batch, seed);
        prop_assert_eq!(again, batches);
    }
}
