//! End-to-end training demo: generates a synthetic blob dataset, trains the
//! tiny full-variant model for a few epochs with Adam and early stopping,
//! and prints the per-epoch log plus final held-out metrics.

use pvtadpnet::config::{ModelConfig, ModelVariant, TrainConfig};
use pvtadpnet::data::{generate_synthetic, Split, SynthSpec};
use pvtadpnet::model::build_model;
use pvtadpnet::trainer::{evaluate_split, train, TrainOptions};

fn main() {
    let dir = std::env::temp_dir().join("pvtadpnet_example_train");
    let _ = std::fs::remove_dir_all(&dir);

    let index = generate_synthetic(&SynthSpec::new(40, 32, 42), &dir).unwrap();
    println!(
        "dataset: {} pairs ({} train / {} val / {} test)",
        index.len(),
        index.split_indices(Split::Train).len(),
        index.split_indices(Split::Val).len(),
        index.split_indices(Split::Test).len(),
    );

    let model_cfg = ModelConfig::tiny(ModelVariant::Full);
    let mut model = build_model::<f32>(&model_cfg, 42);
    println!("model: {} ({} parameters)", model_cfg.variant.name(), model.param_count());

    let train_cfg = TrainConfig {
        epochs: 5,
        batch_size: 8,
        ..TrainConfig::default()
    };
    let opts = TrainOptions {
        image_size: 32,
        out_dir: Some(dir.join("run")),
        ..Default::default()
    };
    let result = train(&mut model, &index, &train_cfg, &opts).unwrap();
    for log in &result.logs {
        println!(
            "epoch {}: train_loss {:.4}  val_loss {:.4}  val_dice {:.4}  val_iou {:.4}",
            log.epoch, log.train_loss, log.val_loss, log.val_dice, log.val_iou
        );
    }
    println!(
        "best val mDice {:.4} at epoch {} (early stop: {})",
        result.best_metric, result.best_epoch, result.stopped_early
    );

    let test_idx = index.split_indices(Split::Test);
    let (test_loss, report) = evaluate_split(&mut model, &index, &test_idx, 32, 8).unwrap();
    println!(
        "held-out test: loss {:.4}  mDice {:.4}  mIoU {:.4}",
        test_loss, report.mdice, report.miou
    );
}
