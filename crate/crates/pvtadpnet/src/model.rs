//! The segmentation network: pyramid encoder, optional downsample-sum
//! fusion, skip transforms (CBR or adapter), decoder ladder (plain two-conv
//! or residual-SE blocks), and the 1x1 + sigmoid output head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::blocks::{AdapterBlock, BatchNorm, CBRBlock, Conv2d, ResidualSEBlock};
use crate::config::ModelConfig;
use crate::encoder::{Encoder, FuseDownsampleSum};
use crate::ops;
use crate::params::ParamStore;
use crate::scalar::Elem;
use crate::tape::{Tape, TensorId};

/// Skip-connection transform applied to an encoder map before the decoder
/// concatenates it: an adapter for the full variant, CBR otherwise.
#[derive(Clone, Debug)]
pub enum SkipTransform {
    Adapter(AdapterBlock),
    Cbr(CBRBlock),
}

impl SkipTransform {
    fn forward<E: Elem>(
        &self,
        tape: &mut Tape<E>,
        ps: &mut ParamStore<E>,
        x: TensorId,
        training: bool,
    ) -> TensorId {
        match self {
            SkipTransform::Adapter(a) => a.forward(tape, ps, x),
            SkipTransform::Cbr(c) => c.forward(tape, ps, x, training),
        }
    }
}

/// One decoder stage: residual-SE for the stronger variants, or two plain
/// conv-BN-ReLU layers for the baselines.
#[derive(Clone, Debug)]
pub enum DecoderBlock {
    ResSe(ResidualSEBlock),
    Plain {
        conv1: Conv2d,
        bn1: BatchNorm,
        conv2: Conv2d,
        bn2: BatchNorm,
    },
}

impl DecoderBlock {
    fn new<E: Elem>(
        ps: &mut ParamStore<E>,
        rng: &mut ChaCha8Rng,
        name: &str,
        cin: usize,
        cout: usize,
        cfg: &ModelConfig,
    ) -> Self {
        if cfg.variant.uses_residual_se() {
            DecoderBlock::ResSe(ResidualSEBlock::new(ps, rng, name, cin, cout, cfg.se_reduction))
        } else {
            DecoderBlock::Plain {
                conv1: Conv2d::same(ps, rng, &format!("{name}.conv1"), cin, cout, 3, false),
                bn1: BatchNorm::new(ps, &format!("{name}.bn1"), cout),
                conv2: Conv2d::same(ps, rng, &format!("{name}.conv2"), cout, cout, 3, false),
                bn2: BatchNorm::new(ps, &format!("{name}.bn2"), cout),
            }
        }
    }

    fn forward<E: Elem>(
        &self,
        tape: &mut Tape<E>,
        ps: &mut ParamStore<E>,
        x: TensorId,
        training: bool,
    ) -> TensorId {
        match self {
            DecoderBlock::ResSe(b) => b.forward(tape, ps, x, training),
            DecoderBlock::Plain {
                conv1,
                bn1,
                conv2,
                bn2,
            } => {
                let y = conv1.forward(tape, ps, x);
                let y = bn1.forward(tape, ps, y, training);
                let y = ops::relu(tape, y);
                let y = conv2.forward(tape, ps, y);
                let y = bn2.forward(tape, ps, y, training);
                ops::relu(tape, y)
            }
        }
    }
}

/// A built segmentation model: structure plus its owned parameter store.
pub struct SegModel<E: Elem> {
    pub ps: ParamStore<E>,
    pub encoder: Encoder,
    pub fuse: Option<FuseDownsampleSum>,
    pub skip2: SkipTransform,
    pub skip1: SkipTransform,
    pub dec2: DecoderBlock,
    pub dec1: DecoderBlock,
    pub head: Conv2d,
    pub config: ModelConfig,
    pub seed: u64,
}

/// Builds a model with He-uniform conv/linear weights, zero biases, and
/// unit/zero norm affines; bit-identical across builds for a fixed seed.
pub fn build_model<E: Elem>(cfg: &ModelConfig, seed: u64) -> SegModel<E> {
    cfg.validate().expect("inconsistent model config");
    let mut ps = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [c1, c2, c3] = cfg.channels;

    let encoder = Encoder::new(&mut ps, &mut rng, "encoder", 3, &cfg.encoder_config());
    let fuse = cfg
        .variant
        .uses_fusion()
        .then(|| FuseDownsampleSum::new(&mut ps, &mut rng, "fuse", &cfg.channels));

    let skip = |ps: &mut ParamStore<E>, rng: &mut ChaCha8Rng, name: &str, c: usize| {
        if cfg.variant.uses_adapters() {
            SkipTransform::Adapter(AdapterBlock::new(
                ps,
                rng,
                name,
                c,
                c,
                c / cfg.adapter_bottleneck_div,
                cfg.adapter_activation,
                cfg.adapter_shared,
            ))
        } else {
            SkipTransform::Cbr(CBRBlock::new(ps, rng, name, c, c))
        }
    };
    let skip2 = skip(&mut ps, &mut rng, "skip2", c2);
    let skip1 = skip(&mut ps, &mut rng, "skip1", c1);
    let dec2 = DecoderBlock::new(&mut ps, &mut rng, "dec2", c3 + c2, c2, cfg);
    let dec1 = DecoderBlock::new(&mut ps, &mut rng, "dec1", c2 + c1, c1, cfg);
    let head = Conv2d::head(&mut ps, &mut rng, "head", c1, 1);

    SegModel {
        ps,
        encoder,
        fuse,
        skip2,
        skip1,
        dec2,
        dec1,
        head,
        config: cfg.clone(),
        seed,
    }
}

impl<E: Elem> SegModel<E> {
    /// x[B,3,H,W] in [0,1] -> mask probabilities [B,1,H,W] in (0,1).
    pub fn forward(&mut self, tape: &mut Tape<E>, x: TensorId, training: bool) -> TensorId {
        let p = self.encoder.forward(tape, &self.ps, x);
        let (g2, g3) = match &self.fuse {
            Some(f) => f.forward(tape, &self.ps, &p),
            None => (p.f2, p.f3),
        };

        // coarsest -> finest decoder ladder
        let up = ops::upsample_bilinear_2x(tape, g3);
        let s2 = self.skip2.forward(tape, &mut self.ps, g2, training);
        let cat = ops::concat_channels(tape, &[up, s2]);
        let d2 = self.dec2.forward(tape, &mut self.ps, cat, training);

        let up = ops::upsample_bilinear_2x(tape, d2);
        let s1 = self.skip1.forward(tape, &mut self.ps, p.f1, training);
        let cat = ops::concat_channels(tape, &[up, s1]);
        let d1 = self.dec1.forward(tape, &mut self.ps, cat, training);

        // stride 4 -> full resolution
        let up = ops::upsample_bilinear_2x(tape, d1);
        let up = ops::upsample_bilinear_2x(tape, up);
        let logits = self.head.forward(tape, &self.ps, up);
        ops::sigmoid(tape, logits)
    }

    pub fn param_count(&self) -> usize {
        self.ps.param_count()
    }

    /// FLOP estimate of one eval-mode forward at the given input size,
    /// from the per-op counters on a throwaway tape.
    pub fn flop_estimate(&mut self, h: usize, w: usize) -> u64 {
        let mut tape = Tape::no_grad();
        let x = tape.leaf(crate::tensor::Tensor::zeros(&[1, 3, h, w]), false);
        self.forward(&mut tape, x, false);
        tape.flops()
    }
}
