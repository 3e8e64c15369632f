//! Checkpoint and inference round trip: trains briefly, saves a
//! checkpoint, restores it into a fresh model, verifies the restored model
//! predicts identically, and writes a predicted mask as a PGM file.

use pvtadpnet::checkpoint::Checkpoint;
use pvtadpnet::config::{ModelConfig, ModelVariant, TrainConfig};
use pvtadpnet::data::{generate_synthetic, load_sample, write_netpbm, Pnm, SynthSpec};
use pvtadpnet::model::build_model;
use pvtadpnet::trainer::{train, TrainOptions};
use pvtadpnet::{Tape, Tensor};

fn main() {
    let dir = std::env::temp_dir().join("pvtadpnet_example_infer");
    let _ = std::fs::remove_dir_all(&dir);
    let index = generate_synthetic(&SynthSpec::new(12, 32, 9), &dir).unwrap();

    let cfg = ModelConfig::tiny(ModelVariant::DsEncRes);
    let mut model = build_model::<f32>(&cfg, 9);
    let train_cfg = TrainConfig { epochs: 2, batch_size: 4, ..TrainConfig::default() };
    let opts = TrainOptions {
        image_size: 32,
        train_indices: Some((0..10).collect()),
        val_indices: Some(vec![10, 11]),
        ..Default::default()
    };
    train(&mut model, &index, &train_cfg, &opts).unwrap();

    // Save, restore into a fresh differently-seeded model, compare outputs.
    let ckpt_path = dir.join("model.ckpt");
    Checkpoint::from_model(&model, 2, 0.0, 0).save(&ckpt_path).unwrap();
    let restored_ckpt = Checkpoint::<f32>::load(&ckpt_path).unwrap();
    let mut restored = build_model::<f32>(&cfg, 12345);
    restored_ckpt.apply_to(&mut restored).unwrap();

    let sample = load_sample(&index.pairs[11].0, &index.pairs[11].1, 32).unwrap();
    let forward = |m: &mut pvtadpnet::model::SegModel<f32>| -> Tensor<f32> {
        let mut tape = Tape::no_grad();
        let x = tape.leaf(sample.image.clone().reshaped(&[1, 3, 32, 32]), false);
        let y = m.forward(&mut tape, x, false);
        tape.value(y).clone()
    };
    let a = forward(&mut model);
    let b = forward(&mut restored);
    println!("restored model matches original: {}", a.data == b.data);

    // Threshold the probabilities and write a PGM mask next to the data.
    let pixels: Vec<u8> = a.data.iter().map(|&p| if p >= 0.5 { 255 } else { 0 }).collect();
    let mask_path = dir.join("predicted_mask.pgm");
    write_netpbm(&mask_path, &Pnm { width: 32, height: 32, channels: 1, pixels }).unwrap();
    println!("wrote {}", mask_path.display());

    // How close is the prediction to the reference mask?
    let pred_bin = Tensor::<f32>::from_f64(
        &[32 * 32],
        &a.data.iter().map(|&p| f64::from(u8::from(p >= 0.5))).collect::<Vec<_>>(),
    );
    let target = sample.mask.clone().reshaped(&[32 * 32]);
    let dice = pvtadpnet::metrics::dice_coef(&pred_bin, &target);
    println!("dice vs reference mask after 2 epochs: {dice:.4}");
}
