//! Dataset pipeline: binary Netpbm (P5/P6) parsing and writing, sample
//! loading with resize, seeded geometric/photometric augmentation, a
//! synthetic blob dataset generator, deterministic train/val/test splits,
//! and an epoch batcher.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::Tensor;
use crate::{Error, Result};

/// A decoded Netpbm image: 8-bit pixels, row-major, channel-interleaved.
#[derive(Clone, Debug, PartialEq)]
pub struct Pnm {
    pub width: usize,
    pub height: usize,
    /// 1 for PGM (P5), 3 for PPM (P6).
    pub channels: usize,
    pub pixels: Vec<u8>,
}

fn format_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Format(format!("{}: {}", path.display(), msg.into()))
}

/// Reads a binary PGM (P5) or PPM (P6) file with maxval 255.
pub fn read_netpbm(path: &Path) -> Result<Pnm> {
    let bytes = fs::read(path)?;
    let mut pos = 0usize;

    // Header tokens are separated by whitespace; '#' starts a comment that
    // runs to end of line.
    let mut next_token = |bytes: &[u8]| -> Result<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(format_err(path, "truncated header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };

    let magic = next_token(&bytes)?;
    let channels = match magic.as_str() {
        "P5" => 1,
        "P6" => 3,
        other => return Err(format_err(path, format!("unsupported magic {other:?}"))),
    };
    let parse_dim = |tok: String| -> Result<usize> {
        tok.parse::<usize>()
            .map_err(|_| format_err(path, format!("bad header number {tok:?}")))
    };
    let width = parse_dim(next_token(&bytes)?)?;
    let height = parse_dim(next_token(&bytes)?)?;
    let maxval = parse_dim(next_token(&bytes)?)?;
    if maxval != 255 {
        return Err(format_err(path, format!("unsupported maxval {maxval}")));
    }
    if width == 0 || height == 0 {
        return Err(format_err(path, "zero image dimension"));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let n = width * height * channels;
    if bytes.len() < pos + n {
        return Err(format_err(path, "truncated pixel data"));
    }
    Ok(Pnm {
        width,
        height,
        channels,
        pixels: bytes[pos..pos + n].to_vec(),
    })
}

/// Writes a binary PGM (P5, channels=1) or PPM (P6, channels=3) file.
pub fn write_netpbm(path: &Path, img: &Pnm) -> Result<()> {
    let magic = match img.channels {
        1 => "P5",
        3 => "P6",
        c => return Err(Error::Format(format!("cannot write {c}-channel netpbm"))),
    };
    assert_eq!(
        img.pixels.len(),
        img.width * img.height * img.channels,
        "pixel buffer does not match dimensions"
    );
    let mut out = format!("{magic}\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    fs::write(path, out)?;
    Ok(())
}

/// One image/mask pair as float tensors: image [3,H,W] in [0,1], mask
/// [1,H,W] in {0,1}.
#[derive(Clone, Debug)]
pub struct Sample {
    pub image: Tensor<f32>,
    pub mask: Tensor<f32>,
}

/// Bilinear resize of a [C,H,W] plane stack using half-pixel centers; a
/// same-size resize is exact.
fn resize_bilinear(src: &[f32], c: usize, h: usize, w: usize, oh: usize, ow: usize) -> Vec<f32> {
    let sy = h as f64 / oh as f64;
    let sx = w as f64 / ow as f64;
    let mut out = vec![0.0f32; c * oh * ow];
    for oy in 0..oh {
        let fy = ((oy as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let wy = (fy - y0 as f64) as f32;
        for ox in 0..ow {
            let fx = ((ox as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let wx = (fx - x0 as f64) as f32;
            for ci in 0..c {
                let p = &src[ci * h * w..(ci + 1) * h * w];
                let top = p[y0 * w + x0] * (1.0 - wx) + p[y0 * w + x1] * wx;
                let bot = p[y1 * w + x0] * (1.0 - wx) + p[y1 * w + x1] * wx;
                out[ci * oh * ow + oy * ow + ox] = top * (1.0 - wy) + bot * wy;
            }
        }
    }
    out
}

/// Nearest-neighbor resize of a [C,H,W] plane stack.
fn resize_nearest(src: &[f32], c: usize, h: usize, w: usize, oh: usize, ow: usize) -> Vec<f32> {
    let sy = h as f64 / oh as f64;
    let sx = w as f64 / ow as f64;
    let mut out = vec![0.0f32; c * oh * ow];
    for oy in 0..oh {
        let y = (((oy as f64 + 0.5) * sy).floor() as usize).min(h - 1);
        for ox in 0..ow {
            let x = (((ox as f64 + 0.5) * sx).floor() as usize).min(w - 1);
            for ci in 0..c {
                out[ci * oh * ow + oy * ow + ox] = src[ci * h * w + y * w + x];
            }
        }
    }
    out
}

/// Loads an image/mask pair, resizing to `target_size` (bilinear for the
/// image, nearest for the mask). Grayscale images are replicated to three
/// channels; mask pixels binarize at value >= 128.
pub fn load_sample(image_path: &Path, mask_path: &Path, target_size: usize) -> Result<Sample> {
    let img = read_netpbm(image_path)?;
    let msk = read_netpbm(mask_path)?;
    if msk.channels != 1 {
        return Err(format_err(mask_path, "mask must be grayscale (P5)"));
    }

    // Interleaved u8 -> planar [3,H,W] floats in [0,1].
    let (h, w) = (img.height, img.width);
    let mut planes = vec![0.0f32; 3 * h * w];
    for i in 0..h * w {
        for ci in 0..3 {
            let byte = if img.channels == 3 {
                img.pixels[i * 3 + ci]
            } else {
                img.pixels[i]
            };
            planes[ci * h * w + i] = byte as f32 / 255.0;
        }
    }
    let image = resize_bilinear(&planes, 3, h, w, target_size, target_size);

    let (mh, mw) = (msk.height, msk.width);
    let mplane: Vec<f32> = msk
        .pixels
        .iter()
        .map(|&b| if b >= 128 { 1.0 } else { 0.0 })
        .collect();
    let mask = resize_nearest(&mplane, 1, mh, mw, target_size, target_size);

    Ok(Sample {
        image: Tensor::new(vec![3, target_size, target_size], image),
        mask: Tensor::new(vec![1, target_size, target_size], mask),
    })
}

/// A concrete augmentation: `quarter_turns` counter-clockwise 90-degree
/// rotations, then optional flips, then a brightness scale on the image.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Augmentation {
    pub quarter_turns: u8,
    pub hflip: bool,
    pub vflip: bool,
    pub brightness: f32,
}

impl Augmentation {
    pub const IDENTITY: Augmentation = Augmentation {
        quarter_turns: 0,
        hflip: false,
        vflip: false,
        brightness: 1.0,
    };

    /// Draws a random augmentation from a seed.
    pub fn sample(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Augmentation {
            quarter_turns: rng.gen_range(0..4),
            hflip: rng.gen_bool(0.5),
            vflip: rng.gen_bool(0.5),
            brightness: rng.gen_range(0.8..1.2),
        }
    }

    /// Applies the geometric part to one [C,H,W] tensor.
    pub fn apply_geometry(&self, t: &Tensor<f32>) -> Tensor<f32> {
        assert_eq!(t.rank(), 3, "augmentation expects [C,H,W]");
        let (c, mut h, mut w) = (t.shape[0], t.shape[1], t.shape[2]);
        let mut data = t.data.clone();
        for _ in 0..self.quarter_turns % 4 {
            // 90 degrees counter-clockwise: out[y][x] = in[x][w-1-y].
            let mut rot = vec![0.0f32; data.len()];
            for ci in 0..c {
                for y in 0..w {
                    for x in 0..h {
                        rot[ci * w * h + y * h + x] = data[ci * h * w + x * w + (w - 1 - y)];
                    }
                }
            }
            data = rot;
            std::mem::swap(&mut h, &mut w);
        }
        if self.hflip {
            for ci in 0..c {
                for y in 0..h {
                    data[ci * h * w + y * w..ci * h * w + (y + 1) * w].reverse();
                }
            }
        }
        if self.vflip {
            for ci in 0..c {
                for y in 0..h / 2 {
                    for x in 0..w {
                        data.swap(ci * h * w + y * w + x, ci * h * w + (h - 1 - y) * w + x);
                    }
                }
            }
        }
        Tensor::new(vec![c, h, w], data)
    }

    /// Full application: geometry on both tensors, brightness (clamped to
    /// [0,1]) on the image only.
    pub fn apply(&self, sample: &Sample) -> Sample {
        let mut image = self.apply_geometry(&sample.image);
        if self.brightness != 1.0 {
            for v in &mut image.data {
                *v = (*v * self.brightness).clamp(0.0, 1.0);
            }
        }
        Sample {
            image,
            mask: self.apply_geometry(&sample.mask),
        }
    }
}

/// Applies a seed-determined random augmentation.
pub fn augment(sample: &Sample, seed: u64) -> Sample {
    Augmentation::sample(seed).apply(sample)
}

/// Parameters of the synthetic blob dataset generator.
#[derive(Clone, Debug)]
pub struct SynthSpec {
    pub count: usize,
    /// Square image side; must be divisible by 16.
    pub size: usize,
    /// Inclusive range of blobs per image.
    pub blob_count: (usize, usize),
    /// Blob semi-axis range in pixels; max must stay below size/2.
    pub blob_radius: (f64, f64),
    /// Amplitude of the background texture noise.
    pub texture_amp: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn new(count: usize, size: usize, seed: u64) -> Self {
        SynthSpec {
            count,
            size,
            blob_count: (1, 3),
            blob_radius: (size as f64 / 10.0, size as f64 / 4.0),
            texture_amp: 0.08,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::Config("synthetic count must be positive".into()));
        }
        if self.size % 16 != 0 || self.size == 0 {
            return Err(Error::Config(format!(
                "synthetic image size {} must be a positive multiple of 16",
                self.size
            )));
        }
        if self.blob_count.0 == 0 || self.blob_count.0 > self.blob_count.1 {
            return Err(Error::Config("bad blob count range".into()));
        }
        if !(self.blob_radius.0 > 0.0 && self.blob_radius.0 <= self.blob_radius.1) {
            return Err(Error::Config("bad blob radius range".into()));
        }
        if self.blob_radius.1 >= self.size as f64 / 2.0 {
            return Err(Error::Config("blob radius must stay below size/2".into()));
        }
        Ok(())
    }
}

struct Blob {
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
    angle: f64,
    intensity: [f64; 3],
}

/// Normalized squared elliptical distance; <= 1 is inside the blob.
fn blob_distance(b: &Blob, x: f64, y: f64) -> f64 {
    let (dx, dy) = (x - b.cx, y - b.cy);
    let (s, c) = b.angle.sin_cos();
    let u = dx * c + dy * s;
    let v = -dx * s + dy * c;
    (u / b.rx).powi(2) + (v / b.ry).powi(2)
}

/// Generates `spec.count` image/mask pairs under `out_dir`/images and
/// `out_dir`/masks, then indexes them with the default split fractions.
/// Images are PPM color; masks are exact binary PGM. Deterministic: the same
/// spec always produces byte-identical files.
pub fn generate_synthetic(spec: &SynthSpec, out_dir: &Path) -> Result<DatasetIndex> {
    spec.validate()?;
    let img_dir = out_dir.join("images");
    let msk_dir = out_dir.join("masks");
    fs::create_dir_all(&img_dir)?;
    fs::create_dir_all(&msk_dir)?;

    let s = spec.size;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    for i in 0..spec.count {
        // Redraw blob geometry until the mask covers a sensible foreground
        // fraction (strictly inside (0, 0.5)).
        let (blobs, mask) = loop {
            let n = rng.gen_range(spec.blob_count.0..=spec.blob_count.1);
            let blobs: Vec<Blob> = (0..n)
                .map(|_| Blob {
                    cx: rng.gen_range(0.25 * s as f64..0.75 * s as f64),
                    cy: rng.gen_range(0.25 * s as f64..0.75 * s as f64),
                    rx: rng.gen_range(spec.blob_radius.0..=spec.blob_radius.1),
                    ry: rng.gen_range(spec.blob_radius.0..=spec.blob_radius.1),
                    angle: rng.gen_range(0.0..std::f64::consts::PI),
                    intensity: [
                        rng.gen_range(0.55..0.95),
                        rng.gen_range(0.45..0.85),
                        rng.gen_range(0.45..0.85),
                    ],
                })
                .collect();
            let mask: Vec<bool> = (0..s * s)
                .map(|p| {
                    let (x, y) = ((p % s) as f64 + 0.5, (p / s) as f64 + 0.5);
                    blobs.iter().any(|b| blob_distance(b, x, y) <= 1.0)
                })
                .collect();
            let frac = mask.iter().filter(|&&m| m).count() as f64 / (s * s) as f64;
            if frac > 0.0 && frac < 0.5 {
                break (blobs, mask);
            }
        };

        // Background: smooth low-frequency tint from a coarse grid plus
        // per-pixel texture noise.
        let coarse_n = 8usize.min(s);
        let base: [f64; 3] = [
            rng.gen_range(0.15..0.35),
            rng.gen_range(0.10..0.30),
            rng.gen_range(0.10..0.30),
        ];
        let coarse: Vec<f64> = (0..coarse_n * coarse_n)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let noise: Vec<f64> = (0..s * s).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let mut pixels = vec![0u8; s * s * 3];
        for p in 0..s * s {
            let (x, y) = ((p % s) as f64 + 0.5, (p / s) as f64 + 0.5);
            // Bilinear sample of the coarse grid for the low-frequency term.
            let gx = (x / s as f64 * (coarse_n - 1) as f64).clamp(0.0, (coarse_n - 1) as f64);
            let gy = (y / s as f64 * (coarse_n - 1) as f64).clamp(0.0, (coarse_n - 1) as f64);
            let (x0, y0) = (gx.floor() as usize, gy.floor() as usize);
            let (x1, y1) = ((x0 + 1).min(coarse_n - 1), (y0 + 1).min(coarse_n - 1));
            let (fx, fy) = (gx - x0 as f64, gy - y0 as f64);
            let low = coarse[y0 * coarse_n + x0] * (1.0 - fx) * (1.0 - fy)
                + coarse[y0 * coarse_n + x1] * fx * (1.0 - fy)
                + coarse[y1 * coarse_n + x0] * (1.0 - fx) * fy
                + coarse[y1 * coarse_n + x1] * fx * fy;

            // Soft blob coverage in [0,1]; the sigmoid over the elliptical
            // distance blurs the edge without moving the exact mask.
            let mut cover = 0.0f64;
            let mut tint = [0.0f64; 3];
            for b in &blobs {
                let d = blob_distance(b, x, y);
                let wgt = 1.0 / (1.0 + ((d - 1.0) / 0.15).exp());
                if wgt > cover {
                    cover = wgt;
                    tint = b.intensity;
                }
            }
            for ci in 0..3 {
                let bg = base[ci] + 0.08 * low + spec.texture_amp * noise[p];
                let v = bg * (1.0 - cover) + tint[ci] * cover;
                pixels[p * 3 + ci] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            }
        }

        let mask_pixels: Vec<u8> = mask.iter().map(|&m| if m { 255 } else { 0 }).collect();
        write_netpbm(
            &img_dir.join(format!("sample_{i:04}.ppm")),
            &Pnm {
                width: s,
                height: s,
                channels: 3,
                pixels,
            },
        )?;
        write_netpbm(
            &msk_dir.join(format!("sample_{i:04}.pgm")),
            &Pnm {
                width: s,
                height: s,
                channels: 1,
                pixels: mask_pixels,
            },
        )?;
    }

    DatasetIndex::scan(out_dir, DEFAULT_SPLIT, spec.seed)
}

/// Default train/val/test split fractions.
pub const DEFAULT_SPLIT: (f64, f64, f64) = (0.8, 0.1, 0.1);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Index over a dataset directory: matched image/mask pairs with a
/// deterministic seeded split assignment.
#[derive(Clone, Debug)]
pub struct DatasetIndex {
    pub root: PathBuf,
    /// Sorted by image stem.
    pub pairs: Vec<(PathBuf, PathBuf)>,
    splits: Vec<Split>,
}

impl DatasetIndex {
    /// Scans `<root>/images/*.{ppm,pgm}` and `<root>/masks/*.pgm`, pairing
    /// files by stem, then assigns splits by a seeded shuffle.
    pub fn scan(root: &Path, fractions: (f64, f64, f64), seed: u64) -> Result<Self> {
        let (ft, fv, fs) = fractions;
        if (ft + fv + fs - 1.0).abs() > 1e-9 || ft < 0.0 || fv < 0.0 || fs < 0.0 {
            return Err(Error::Config("split fractions must be >= 0 and sum to 1".into()));
        }
        let img_dir = root.join("images");
        let msk_dir = root.join("masks");

        let mut images: Vec<PathBuf> = fs::read_dir(&img_dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                matches!(
                    p.extension().and_then(|e| e.to_str()),
                    Some("ppm") | Some("pgm")
                )
            })
            .collect();
        images.sort();
        if images.is_empty() {
            return Err(Error::Format(format!("no images under {}", img_dir.display())));
        }

        let mut pairs = Vec::with_capacity(images.len());
        for img in images {
            let stem = img
                .file_stem()
                .and_then(|s| s.to_str())
                .ok_or_else(|| format_err(&img, "bad file name"))?;
            let mask = msk_dir.join(format!("{stem}.pgm"));
            if !mask.is_file() {
                return Err(Error::Format(format!(
                    "image {} has no mask {}",
                    img.display(),
                    mask.display()
                )));
            }
            pairs.push((img, mask));
        }

        let n = pairs.len();
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Fisher-Yates so the assignment depends only on (n, seed).
        for i in (1..n).rev() {
            order.swap(i, rng.gen_range(0..=i));
        }
        let n_train = (n as f64 * ft).round() as usize;
        let n_val = ((n as f64 * fv).round() as usize).min(n - n_train);
        let mut splits = vec![Split::Test; n];
        for (rank, &idx) in order.iter().enumerate() {
            splits[idx] = if rank < n_train {
                Split::Train
            } else if rank < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
        }
        Ok(DatasetIndex {
            root: root.to_path_buf(),
            pairs,
            splits,
        })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Indices (into `pairs`) belonging to one split, in stem order.
    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.splits[i] == split).collect()
    }
}

/// A loaded minibatch: images [B,3,H,W], masks [B,1,H,W].
#[derive(Clone, Debug)]
pub struct Batch {
    pub images: Tensor<f32>,
    pub masks: Tensor<f32>,
    /// Dataset indices of the samples, in batch order.
    pub indices: Vec<usize>,
}

/// Partitions `indices` into seeded-shuffled batches: all full except at
/// most one final partial batch.
pub fn epoch_batches(indices: &[usize], batch_size: usize, shuffle_seed: u64) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1, "batch_size must be >= 1");
    assert!(!indices.is_empty(), "empty index");
    let mut order = indices.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(shuffle_seed);
    for i in (1..order.len()).rev() {
        order.swap(i, rng.gen_range(0..=i));
    }
    order.chunks(batch_size).map(|c| c.to_vec()).collect()
}

/// Loads and stacks one batch. `augment_seed`, when set, applies an
/// independent random augmentation per sample, derived from the seed and
/// the sample's dataset index.
pub fn load_batch(
    index: &DatasetIndex,
    batch_indices: &[usize],
    target_size: usize,
    augment_seed: Option<u64>,
) -> Result<Batch> {
    assert!(!batch_indices.is_empty(), "empty batch");
    let b = batch_indices.len();
    let hw = target_size * target_size;
    let mut images = vec![0.0f32; b * 3 * hw];
    let mut masks = vec![0.0f32; b * hw];
    for (bi, &idx) in batch_indices.iter().enumerate() {
        let (img, msk) = &index.pairs[idx];
        let mut sample = load_sample(img, msk, target_size)?;
        if let Some(seed) = augment_seed {
            sample = augment(&sample, seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ idx as u64);
        }
        images[bi * 3 * hw..(bi + 1) * 3 * hw].copy_from_slice(&sample.image.data);
        masks[bi * hw..(bi + 1) * hw].copy_from_slice(&sample.mask.data);
    }
    Ok(Batch {
        images: Tensor::new(vec![b, 3, target_size, target_size], images),
        masks: Tensor::new(vec![b, 1, target_size, target_size], masks),
        indices: batch_indices.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmpdir(name: &str) -> PathBuf {
        let d = std::env::temp_dir().join(format!("pvtadpnet_data_{name}_{}", std::process::id()));
        let _ = fs::remove_dir_all(&d);
        fs::create_dir_all(&d).unwrap();
        d
    }

    #[test]
    fn netpbm_round_trip_with_comment_header() {
        let d = tmpdir("pnm");
        let img = Pnm {
            width: 3,
            height: 2,
            channels: 3,
            pixels: (0..18).collect(),
        };
        let p = d.join("a.ppm");
        write_netpbm(&p, &img).unwrap();
        assert_eq!(read_netpbm(&p).unwrap(), img);

        // Hand-built header with a comment line.
        let q = d.join("b.pgm");
        let mut bytes = b"P5\n# a comment\n2 2\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 64, 128, 255]);
        fs::write(&q, bytes).unwrap();
        let g = read_netpbm(&q).unwrap();
        assert_eq!((g.width, g.height, g.channels), (2, 2, 1));
        assert_eq!(g.pixels, vec![0, 64, 128, 255]);
    }

    #[test]
    fn mask_binarizes_at_128() {
        let d = tmpdir("thresh");
        let sq = Pnm { width: 2, height: 2, channels: 1, pixels: vec![127, 128, 255, 0] };
        write_netpbm(&d.join("m2.pgm"), &sq).unwrap();
        let iq = Pnm { width: 2, height: 2, channels: 1, pixels: vec![10, 200, 30, 40] };
        write_netpbm(&d.join("i2.pgm"), &iq).unwrap();
        let sample = load_sample(&d.join("i2.pgm"), &d.join("m2.pgm"), 2).unwrap();
        assert_eq!(sample.mask.data, vec![0.0, 1.0, 1.0, 0.0]);
        // Grayscale replicated to three identical channels.
        assert_eq!(sample.image.data[0..4], sample.image.data[4..8]);
        assert!((sample.image.data[1] - 200.0 / 255.0).abs() < 1e-6);
    }

    #[test]
    fn all_white_mask_loads_as_all_ones() {
        let d = tmpdir("white");
        let white = Pnm { width: 4, height: 4, channels: 1, pixels: vec![255; 16] };
        write_netpbm(&d.join("m.pgm"), &white).unwrap();
        write_netpbm(&d.join("i.pgm"), &Pnm { width: 4, height: 4, channels: 1, pixels: vec![7; 16] }).unwrap();
        let s = load_sample(&d.join("i.pgm"), &d.join("m.pgm"), 4).unwrap();
        assert!(s.mask.data.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn native_size_save_load_round_trip_is_bit_exact() {
        let d = tmpdir("rt");
        let spec = SynthSpec::new(1, 16, 3);
        generate_synthetic(&spec, &d).unwrap();
        let img = d.join("images/sample_0000.ppm");
        let msk = d.join("masks/sample_0000.pgm");
        let s = load_sample(&img, &msk, 16).unwrap();
        // Re-quantize and compare against the original bytes.
        let orig = read_netpbm(&img).unwrap();
        for p in 0..16 * 16 {
            for ci in 0..3 {
                let byte = (s.image.data[ci * 256 + p] * 255.0).round() as u8;
                assert_eq!(byte, orig.pixels[p * 3 + ci]);
            }
        }
        let omask = read_netpbm(&msk).unwrap();
        for p in 0..16 * 16 {
            assert_eq!(s.mask.data[p] == 1.0, omask.pixels[p] == 255);
        }
    }

    fn demo_sample() -> Sample {
        Sample {
            image: Tensor::from_f64(&[1, 2, 3], &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6]),
            mask: Tensor::from_f64(&[1, 2, 3], &[1.0, 0.0, 1.0, 0.0, 1.0, 0.0]),
        }
    }

    #[test]
    fn identity_augmentation_is_a_no_op() {
        let s = demo_sample();
        let a = Augmentation::IDENTITY.apply(&s);
        assert_eq!(a.image.data, s.image.data);
        assert_eq!(a.mask.data, s.mask.data);
    }

    #[test]
    fn double_hflip_is_identity() {
        let s = demo_sample();
        let flip = Augmentation { hflip: true, ..Augmentation::IDENTITY };
        let twice = flip.apply(&flip.apply(&s));
        assert_eq!(twice.image, s.image);
        assert_eq!(twice.mask, s.mask);
    }

    #[test]
    fn four_quarter_turns_are_identity_and_mask_stays_binary() {
        let s = demo_sample();
        let rot = Augmentation { quarter_turns: 1, ..Augmentation::IDENTITY };
        let mut cur = s.clone();
        for _ in 0..4 {
            cur = rot.apply(&cur);
            assert!(cur.mask.data.iter().all(|&v| v == 0.0 || v == 1.0));
        }
        assert_eq!(cur.image, s.image);
        assert_eq!(cur.mask, s.mask);
    }

    #[test]
    fn augment_is_seed_deterministic_and_geometry_consistent() {
        let s = demo_sample();
        let a = augment(&s, 77);
        let b = augment(&s, 77);
        assert_eq!(a.image, b.image);
        assert_eq!(a.mask, b.mask);
        // Mask equals the geometric transform applied to the mask directly.
        let aug = Augmentation::sample(77);
        assert_eq!(a.mask, aug.apply_geometry(&s.mask));
    }

    #[test]
    fn synthetic_generation_counts_and_mask_fraction() {
        let d = tmpdir("synth");
        let spec = SynthSpec::new(10, 32, 42);
        let index = generate_synthetic(&spec, &d).unwrap();
        assert_eq!(index.len(), 10);
        for (_, mask) in &index.pairs {
            let m = read_netpbm(mask).unwrap();
            let fg = m.pixels.iter().filter(|&&p| p == 255).count();
            assert!(m.pixels.iter().all(|&p| p == 0 || p == 255));
            let frac = fg as f64 / m.pixels.len() as f64;
            assert!(frac > 0.0 && frac < 0.5, "foreground fraction {frac}");
        }
    }

    #[test]
    fn synthetic_generation_is_byte_deterministic() {
        let d1 = tmpdir("det1");
        let d2 = tmpdir("det2");
        let spec = SynthSpec::new(3, 16, 9);
        generate_synthetic(&spec, &d1).unwrap();
        generate_synthetic(&spec, &d2).unwrap();
        for name in ["images/sample_0001.ppm", "masks/sample_0002.pgm"] {
            assert_eq!(fs::read(d1.join(name)).unwrap(), fs::read(d2.join(name)).unwrap());
        }
    }

    #[test]
    fn split_partitions_and_is_seed_deterministic() {
        let d = tmpdir("split");
        generate_synthetic(&SynthSpec::new(10, 16, 1), &d).unwrap();
        let a = DatasetIndex::scan(&d, DEFAULT_SPLIT, 5).unwrap();
        let b = DatasetIndex::scan(&d, DEFAULT_SPLIT, 5).unwrap();
        let (tr, va, te) = (
            a.split_indices(Split::Train),
            a.split_indices(Split::Val),
            a.split_indices(Split::Test),
        );
        assert_eq!(tr.len(), 8);
        assert_eq!(va.len(), 1);
        assert_eq!(te.len(), 1);
        let mut all: Vec<usize> = tr.iter().chain(&va).chain(&te).copied().collect();
        all.sort();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_eq!(tr, b.split_indices(Split::Train));
    }

    #[test]
    fn missing_mask_is_rejected() {
        let d = tmpdir("nomask");
        fs::create_dir_all(d.join("images")).unwrap();
        fs::create_dir_all(d.join("masks")).unwrap();
        write_netpbm(
            &d.join("images/x.pgm"),
            &Pnm { width: 1, height: 1, channels: 1, pixels: vec![0] },
        )
        .unwrap();
        let err = DatasetIndex::scan(&d, DEFAULT_SPLIT, 0).unwrap_err();
        assert!(err.to_string().contains("no mask"));
    }

    #[test]
    fn batcher_partitions_with_final_partial_batch() {
        let indices: Vec<usize> = (0..10).collect();
        let batches = epoch_batches(&indices, 4, 11);
        assert_eq!(batches.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 4, 2]);
        let mut all: Vec<usize> = batches.concat();
        all.sort();
        assert_eq!(all, indices);
        assert_eq!(epoch_batches(&indices, 4, 11), batches);
        assert_ne!(epoch_batches(&indices, 4, 12), batches);
    }

    #[test]
    fn load_batch_stacks_samples() {
        let d = tmpdir("batch");
        let index = generate_synthetic(&SynthSpec::new(3, 16, 2), &d).unwrap();
        let b = load_batch(&index, &[0, 2], 16, None).unwrap();
        assert_eq!(b.images.shape, vec![2, 3, 16, 16]);
        assert_eq!(b.masks.shape, vec![2, 1, 16, 16]);
        assert!(b.masks.data.iter().all(|&v| v == 0.0 || v == 1.0));
        let single = load_sample(&index.pairs[2].0, &index.pairs[2].1, 16).unwrap();
        assert_eq!(b.images.data[3 * 256..], single.image.data[..]);
    }
}
