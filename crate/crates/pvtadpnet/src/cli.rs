//! Command-line interface: dataset generation, training, evaluation,
//! inference, and the built-in verification suites. The binary in
//! `src/main.rs` is a thin wrapper over [`run`].

use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::checkpoint::Checkpoint;
use crate::config::{ModelVariant, RunConfig};
use crate::data::{generate_synthetic, read_netpbm, write_netpbm, DatasetIndex, Pnm, Split, SynthSpec, DEFAULT_SPLIT};
use crate::model::build_model;
use crate::selftest::{gradcheck_suite, print_table, selftest_suite};
use crate::tape::Tape;
use crate::tensor::Tensor;
use crate::trainer::{evaluate_split, train, TrainOptions};
use crate::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "pvtadpnet", version, about = "Polyp segmentation: train, evaluate, and run pyramid-transformer models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic blob dataset
    GenData {
        /// Output dataset directory
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 50)]
        count: usize,
        /// Square image size (multiple of 16)
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Train a model on an image/mask dataset
    Train {
        /// Dataset root (images/ + masks/)
        #[arg(long)]
        data: PathBuf,
        /// JSON config file (model + train sections)
        #[arg(long)]
        config: Option<PathBuf>,
        /// Model variant: base | dsenc | dsencres | full
        #[arg(long)]
        variant: Option<String>,
        /// Output directory for checkpoints and the epoch log
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config's seed
        #[arg(long)]
        seed: Option<u64>,
        /// Training resolution (multiple of 16)
        #[arg(long, default_value_t = 64)]
        size: usize,
        /// Use the reduced tiny architecture
        #[arg(long, default_value_t = false)]
        tiny: bool,
        /// Apply random augmentation to training batches
        #[arg(long, default_value_t = false)]
        augment: bool,
    },
    /// Evaluate a checkpoint on one dataset split
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        /// train | val | test
        #[arg(long, default_value = "test")]
        split: String,
        /// Write the JSON metrics report here (stdout when omitted)
        #[arg(long)]
        report: Option<PathBuf>,
        /// Evaluation resolution (multiple of 16)
        #[arg(long, default_value_t = 64)]
        size: usize,
    },
    /// Segment a single image
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        /// Input PPM/PGM image; both dimensions must be multiples of 16
        #[arg(long)]
        image: PathBuf,
        /// Output binary PGM mask at the input resolution
        #[arg(long)]
        out_mask: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
    },
    /// Run the finite-difference gradient check suite
    Gradcheck,
    /// Run the full invariant self-test suite
    Selftest,
}

/// Parses the process arguments, runs the command, and returns the exit
/// code. Diagnostics go to stderr.
pub fn run() -> i32 {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

/// Runs one command; `Ok(false)` means a clean run with failed checks.
pub fn execute(cmd: Command) -> Result<bool> {
    match cmd {
        Command::GenData { out, count, size, seed } => {
            let spec = SynthSpec::new(count, size, seed);
            let index = generate_synthetic(&spec, &out)?;
            write_manifest(&out, &index)?;
            println!("wrote {} image/mask pairs under {}", index.len(), out.display());
            Ok(true)
        }
        Command::Train { data, config, variant, out, seed, size, tiny, augment } => {
            let mut cfg = match config {
                Some(p) => RunConfig::load(&p)?,
                None => RunConfig::default(),
            };
            if let Some(v) = variant {
                cfg.model.variant = ModelVariant::from_str(&v)?;
            }
            if tiny {
                let variant = cfg.model.variant;
                cfg.model = crate::config::ModelConfig::tiny(variant);
            }
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            cfg.model.validate()?;
            cfg.train.validate()?;

            let index = DatasetIndex::scan(&data, DEFAULT_SPLIT, cfg.train.seed)?;
            let mut model = build_model::<f32>(&cfg.model, cfg.train.seed);
            let opts = TrainOptions {
                out_dir: Some(out.clone()),
                image_size: size,
                augment,
                verbose: true,
                ..Default::default()
            };
            let result = train(&mut model, &index, &cfg.train, &opts)?;
            println!(
                "trained {} epochs; best val mDice {:.4} at epoch {}; checkpoints in {}",
                result.epochs_run,
                result.best_metric,
                result.best_epoch,
                out.display()
            );
            Ok(true)
        }
        Command::Eval { data, ckpt, split, report, size } => {
            let split = match split.as_str() {
                "train" => Split::Train,
                "val" => Split::Val,
                "test" => Split::Test,
                other => return Err(Error::Config(format!("unknown split {other:?}"))),
            };
            let checkpoint = Checkpoint::<f32>::load(&ckpt)?;
            let mut model = build_model::<f32>(&checkpoint.meta.model, checkpoint.meta.seed);
            checkpoint.apply_to(&mut model)?;
            // The split assignment is a function of (dataset, seed); reusing
            // the training seed keeps held-out samples held out.
            let index = DatasetIndex::scan(&data, DEFAULT_SPLIT, checkpoint.meta.seed)?;
            let indices = index.split_indices(split);
            if indices.is_empty() {
                return Err(Error::Config("selected split is empty".into()));
            }
            let (_, metrics) = evaluate_split(&mut model, &index, &indices, size, 8)?;
            let json = serde_json::to_string_pretty(&metrics)?;
            match report {
                Some(p) => std::fs::write(p, json)?,
                None => println!("{json}"),
            }
            Ok(true)
        }
        Command::Infer { ckpt, image, out_mask, threshold } => {
            let img = read_netpbm(&image)?;
            let (h, w) = (img.height, img.width);
            if h % 16 != 0 || w % 16 != 0 {
                let pad = |d: usize| (16 - d % 16) % 16;
                return Err(Error::Config(format!(
                    "image is {w}x{h}; both dimensions must be multiples of 16 \
                     (pad right by {} and bottom by {} pixels)",
                    pad(w),
                    pad(h)
                )));
            }
            let checkpoint = Checkpoint::<f32>::load(&ckpt)?;
            let mut model = build_model::<f32>(&checkpoint.meta.model, checkpoint.meta.seed);
            checkpoint.apply_to(&mut model)?;

            let mut planes = vec![0.0f64; 3 * h * w];
            for i in 0..h * w {
                for ci in 0..3 {
                    let byte = if img.channels == 3 { img.pixels[i * 3 + ci] } else { img.pixels[i] };
                    planes[ci * h * w + i] = byte as f64 / 255.0;
                }
            }
            let mut tape = Tape::no_grad();
            let x = tape.leaf(Tensor::<f32>::from_f64(&[1, 3, h, w], &planes), false);
            let y = model.forward(&mut tape, x, false);
            let probs = tape.value(y);
            let pixels: Vec<u8> = probs
                .data
                .iter()
                .map(|&p| if (p as f64) >= threshold { 255 } else { 0 })
                .collect();
            write_netpbm(&out_mask, &Pnm { width: w, height: h, channels: 1, pixels })?;
            println!("wrote mask {}", out_mask.display());
            Ok(true)
        }
        Command::Gradcheck => Ok(print_table(&gradcheck_suite())),
        Command::Selftest => Ok(print_table(&selftest_suite())),
    }
}

#[derive(Serialize)]
struct ManifestEntry {
    image: PathBuf,
    mask: PathBuf,
    split: String,
}

fn write_manifest(out: &Path, index: &DatasetIndex) -> Result<()> {
    let entries: Vec<ManifestEntry> = (0..index.len())
        .map(|i| {
            let split = [Split::Train, Split::Val, Split::Test]
                .into_iter()
                .find(|&s| index.split_indices(s).contains(&i))
                .unwrap();
            ManifestEntry {
                image: index.pairs[i].0.clone(),
                mask: index.pairs[i].1.clone(),
                split: match split {
                    Split::Train => "train",
                    Split::Val => "val",
                    Split::Test => "test",
                }
                .to_string(),
            }
        })
        .collect();
    std::fs::write(out.join("manifest.json"), serde_json::to_string_pretty(&entries)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp(name: &str) -> PathBuf {
        let d = std::env::temp_dir().join(format!("pvtadpnet_cli_{name}_{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&d);
        d
    }

    #[test]
    fn gen_data_writes_pairs_and_manifest() {
        let out = tmp("gen");
        let ok = execute(Command::GenData { out: out.clone(), count: 5, size: 16, seed: 1 }).unwrap();
        assert!(ok);
        assert!(out.join("manifest.json").is_file());
        assert_eq!(std::fs::read_dir(out.join("images")).unwrap().count(), 5);
        assert_eq!(std::fs::read_dir(out.join("masks")).unwrap().count(), 5);
    }

    #[test]
    fn bad_variant_is_rejected() {
        let err = execute(Command::Train {
            data: PathBuf::from("/nonexistent"),
            config: None,
            variant: Some("bogus".into()),
            out: tmp("novariant"),
            seed: None,
            size: 64,
            tiny: true,
            augment: false,
        })
        .unwrap_err();
        assert!(err.to_string().contains("bogus"));
    }

    #[test]
    fn infer_rejects_non_multiple_of_16_with_padding_hint() {
        let dir = tmp("infer");
        std::fs::create_dir_all(&dir).unwrap();
        let img = dir.join("odd.pgm");
        write_netpbm(
            &img,
            &Pnm { width: 30, height: 20, channels: 1, pixels: vec![0; 600] },
        )
        .unwrap();
        let err = execute(Command::Infer {
            ckpt: dir.join("missing.ckpt"),
            image: img,
            out_mask: dir.join("mask.pgm"),
            threshold: 0.5,
        })
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("pad right by 2") && msg.contains("bottom by 12"), "{msg}");
    }

    #[test]
    fn train_eval_infer_round_trip_on_tiny_synthetic() {
        let base = tmp("roundtrip");
        let data = base.join("data");
        let run = base.join("run");
        execute(Command::GenData { out: data.clone(), count: 10, size: 32, seed: 3 }).unwrap();

        // One short tiny training run.
        let cfg_path = base.join("cfg.json");
        std::fs::write(&cfg_path, r#"{"train": {"epochs": 1, "batch_size": 4}}"#).unwrap();
        assert!(execute(Command::Train {
            data: data.clone(),
            config: Some(cfg_path),
            variant: Some("base".into()),
            out: run.clone(),
            seed: Some(5),
            size: 32,
            tiny: true,
            augment: false,
        })
        .unwrap());
        assert!(run.join("best.ckpt").is_file());
        assert!(run.join("log.jsonl").is_file());

        // Evaluation writes a report with the fixed schema.
        let report = base.join("report.json");
        assert!(execute(Command::Eval {
            data: data.clone(),
            ckpt: run.join("best.ckpt"),
            split: "test".into(),
            report: Some(report.clone()),
            size: 32,
        })
        .unwrap());
        let parsed: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
        for key in ["miou", "mdice", "recall", "precision", "f2", "per_image"] {
            assert!(parsed.get(key).is_some(), "missing report key {key}");
        }

        // Inference: output dims equal input dims; extreme thresholds give
        // constant masks.
        let image = data.join("images/sample_0000.ppm");
        let mask_out = base.join("pred.pgm");
        for (threshold, expect) in [(1.0, Some(0u8)), (0.0, Some(255u8)), (0.5, None)] {
            assert!(execute(Command::Infer {
                ckpt: run.join("best.ckpt"),
                image: image.clone(),
                out_mask: mask_out.clone(),
                threshold,
            })
            .unwrap());
            let m = read_netpbm(&mask_out).unwrap();
            assert_eq!((m.width, m.height, m.channels), (32, 32, 1));
            if let Some(v) = expect {
                assert!(m.pixels.iter().all(|&p| p == v), "threshold {threshold}");
            }
        }
    }
}
