//! Pyramid transformer encoder: overlapping patch embeddings, spatial-
//! reduction attention, convolutional feed-forward blocks, and the
//! downsample-and-sum pyramid fusion.

use rand_chacha::ChaCha8Rng;

use crate::blocks::{Conv2d, LayerNorm, Linear};
use crate::ops::{self, Conv2dSpec};
use crate::params::ParamStore;
use crate::scalar::Elem;
use crate::tape::{Tape, TensorId};

/// Patch strides of the three stages; overall strides 4/8/16.
pub const STAGE_STRIDES: [usize; 3] = [4, 2, 2];

#[derive(Clone, Debug)]
pub struct EncoderConfig {
    pub channels: [usize; 3],
    pub depths: [usize; 3],
    pub sr_ratios: [usize; 3],
    pub heads: [usize; 3],
    pub mlp_ratio: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            channels: [32, 64, 128],
            depths: [2, 2, 2],
            sr_ratios: [4, 2, 1],
            heads: [1, 2, 4],
            mlp_ratio: 4,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) {
        assert!(
            self.channels[0] < self.channels[1] && self.channels[1] < self.channels[2],
            "stage channels must strictly increase: {:?}",
            self.channels
        );
        for i in 0..3 {
            assert!(
                self.channels[i] % self.heads[i] == 0,
                "stage {i}: channels {} not divisible by heads {}",
                self.channels[i],
                self.heads[i]
            );
            assert!(self.sr_ratios[i] >= 1, "sr_ratio must be >= 1");
            assert!(self.depths[i] >= 1, "stage depth must be >= 1");
        }
    }
}

/// Three encoder feature maps at strides 4, 8, and 16.
#[derive(Clone, Copy, Debug)]
pub struct FeaturePyramid {
    pub f1: TensorId,
    pub f2: TensorId,
    pub f3: TensorId,
}

/// Overlapping patch embedding: strided conv (kernel 2s-1, pad s-1)
/// followed by layer norm over channels in token layout.
#[derive(Clone, Debug)]
pub struct PatchEmbed {
    pub conv: Conv2d,
    pub norm: LayerNorm,
    pub stride: usize,
}

impl PatchEmbed {
    pub fn new<E: Elem>(
        ps: &mut ParamStore<E>,
        rng: &mut ChaCha8Rng,
        name: &str,
        cin: usize,
        cout: usize,
        stride: usize,
    ) -> Self {
        // kernel 2s-1 with nominal pad s-1: windows never reach the
        // bottom/right padding, so the strict equivalent pads top/left only
        // (applied as an explicit pad2d before a pad-0 conv).
        let spec = Conv2dSpec {
            stride,
            padding: 0,
            groups: 1,
        };
        PatchEmbed {
            conv: Conv2d::new(ps, rng, &format!("{name}.proj"), cin, cout, 2 * stride - 1, spec, true),
            norm: LayerNorm::new(ps, &format!("{name}.norm"), cout),
            stride,
        }
    }

    /// [B,Cin,H,W] -> (tokens [B,(H/s)(W/s),Cout], H/s, W/s)
    pub fn forward<E: Elem>(
        &self,
        tape: &mut Tape<E>,
        ps: &ParamStore<E>,
        x: TensorId,
    ) -> (TensorId, usize, usize) {
        let (h, w) = (tape.shape(x)[2], tape.shape(x)[3]);
        assert!(
            h % self.stride == 0 && w % self.stride == 0,
            "spatial dims {h}x{w} not divisible by patch stride {}",
            self.stride
        );
        let p = self.stride - 1;
        let padded = ops::pad2d(tape, x, p, 0, p, 0);
        let y = self.conv.forward(tape, ps, padded);
        let (ho, wo) = (tape.shape(y)[2], tape.shape(y)[3]);
        let tok = ops::nchw_to_tokens(tape, y);
        let tok = self.norm.forward(tape, ps, tok);
        (tok, ho, wo)
    }
}

/// Multi-head self-attention whose keys/values are spatially reduced by a
/// strided conv of ratio `sr` (plus layer norm); queries keep full
/// resolution. `sr == 1` is standard multi-head self-attention.
#[derive(Clone, Debug)]
pub struct SraAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub proj: Linear,
    /// Spatial-reduction conv + norm; present iff sr > 1.
    pub sr: Option<(Conv2d, LayerNorm)>,
    pub heads: usize,
    pub sr_ratio: usize,
}

impl SraAttention {
    pub fn new<E: Elem>(
        ps: &mut ParamStore<E>,
        rng: &mut ChaCha8Rng,
        name: &str,
        channels: usize,
        heads: usize,
        sr_ratio: usize,
    ) -> Self {
        assert!(channels % heads == 0);
        let sr = (sr_ratio > 1).then(|| {
            let spec = Conv2dSpec {
                stride: sr_ratio,
                padding: 0,
                groups: 1,
            };
            (
                Conv2d::new(ps, rng, &format!("{name}.sr"), channels, channels, sr_ratio, spec, true),
                LayerNorm::new(ps, &format!("{name}.sr_norm"), channels),
            )
        });
        SraAttention {
            q: Linear::new(ps, rng, &format!("{name}.q"), channels, channels, true),
            k: Linear::new(ps, rng, &format!("{name}.k"), channels, channels, true),
            v: Linear::new(ps, rng, &format!("{name}.v"), channels, channels, true),
            proj: Linear::new(ps, rng, &format!("{name}.proj"), channels, channels, true),
            sr,
            heads,
            sr_ratio,
        }
    }

    /// Forward returning also the attention probabilities
    /// [B*heads, N, M] (rows sum to 1).
    pub fn forward_with_probs<E: Elem>(
        &self,
        tape: &mut Tape<E>,
        ps: &ParamStore<E>,
        x: TensorId,
        h: usize,
        w: usize,
    ) -> (TensorId, TensorId) {
        let shape = tape.shape(x).to_vec();
        assert_eq!(shape.len(), 3, "attention input must be [B,N,C] tokens");
        let (n, c) = (shape[1], shape[2]);
        assert_eq!(n, h * w, "token count {n} != {h}x{w}");
        let dh = c / self.heads;

        let q = self.q.forward(tape, ps, x);
        let kv_src = match &self.sr {
            Some((conv, norm)) => {
                let map = ops::tokens_to_nchw(tape, x, h, w);
                let red = conv.forward(tape, ps, map);
                let tok = ops::nchw_to_tokens(tape, red);
                norm.forward(tape, ps, tok)
            }
            None => x,
        };
        let k = self.k.forward(tape, ps, kv_src);
        let v = self.v.forward(tape, ps, kv_src);

        let qh = ops::split_heads(tape, q, self.heads);
        let kh = ops::split_heads(tape, k, self.heads);
        let vh = ops::split_heads(tape, v, self.heads);
        let scores = ops::matmul_nt(tape, qh, kh);
        let scores = ops::scale(tape, scores, 1.0 / (dh as f64).sqrt());
        let probs = ops::softmax_last(tape, scores);
        let ctx = ops::matmul(tape, probs, vh);
        let merged = ops::merge_heads(tape, ctx, self.heads);
        (self.proj.forward(tape, ps, merged), probs)
    }

    pub fn forward<E: Elem>(
        &self,
        tape: &mut Tape<E>,
        ps: &ParamStore<E>,
        x: TensorId,
        h: usize,
        w: usize,
    ) -> TensorId {
        self.forward_with_probs(tape, ps, x, h, w).0
    }
}

/// Token MLP with a depthwise 3x3 conv between the two linear layers:
/// linear -> depthwise conv -> gelu -> linear.
#[derive(Clone, Debug)]
pub struct ConvFfn {
    pub fc1: Linear,
    pub dw: Conv2d,
    pub fc2: Linear,
}

impl ConvFfn {
    pub fn new<E: Elem>(
        ps: &mut ParamStore<E>,
        rng: &mut ChaCha8Rng,
        name: &str,
        channels: usize,
        hidden: usize,
    ) -> Self {
        let spec = Conv2dSpec {
            stride: 1,
            padding: 1,
            groups: hidden,
        };
        ConvFfn {
            fc1: Linear::new(ps, rng, &format!("{name}.fc1"), channels, hidden, true),
            dw: Conv2d::new(ps, rng, &format!("{name}.dw"), hidden, hidden, 3, spec, true),
            fc2: Linear::new(ps, rng, &format!("{name}.fc2"), hidden, channels, true),
        }
    }

    pub fn forward<E: Elem>(
        &self,
        tape: &mut Tape<E>,
        ps: &ParamStore<E>,
        x: TensorId,
        h: usize,
        w: usize,
    ) -> TensorId {
        let y = self.fc1.forward(tape, ps, x);
        let map = ops::tokens_to_nchw(tape, y, h, w);
        let map = self.dw.forward(tape, ps, map);
        let y = ops::nchw_to_tokens(tape, map);
        let y = ops::gelu(tape, y);
        self.fc2.forward(tape, ps, y)
    }
}

/// Pre-norm transformer block: x + SRA(LN(x)); x + ConvFFN(LN(x)).
#[derive(Clone, Debug)]
pub struct TransformerBlock {
    pub norm1: LayerNorm,
    pub attn: SraAttention,
    pub norm2: LayerNorm,
    pub ffn: ConvFfn,
}

impl TransformerBlock {
    pub fn new<E: Elem>(
        ps: &mut ParamStore<E>,
        rng: &mut ChaCha8Rng,
        name: &str,
        channels: usize,
        heads: usize,
        sr_ratio: usize,
        mlp_ratio: usize,
    ) -> Self {
        TransformerBlock {
            norm1: LayerNorm::new(ps, &format!("{name}.norm1"), channels),
            attn: SraAttention::new(ps, rng, &format!("{name}.attn"), channels, heads, sr_ratio),
            norm2: LayerNorm::new(ps, &format!("{name}.norm2"), channels),
            ffn: ConvFfn::new(ps, rng, &format!("{name}.ffn"), channels, channels * mlp_ratio),
        }
    }

    pub fn forward<E: Elem>(
        &self,
        tape: &mut Tape<E>,
        ps: &ParamStore<E>,
        x: TensorId,
        h: usize,
        w: usize,
    ) -> TensorId {
        let n1 = self.norm1.forward(tape, ps, x);
        let a = self.attn.forward(tape, ps, n1, h, w);
        let x = ops::add(tape, x, a);
        let n2 = self.norm2.forward(tape, ps, x);
        let f = self.ffn.forward(tape, ps, n2, h, w);
        ops::add(tape, x, f)
    }
}

/// One pyramid stage: patch embedding then a run of transformer blocks.
#[derive(Clone, Debug)]
pub struct EncoderStage {
    pub patch: PatchEmbed,
    pub blocks: Vec<TransformerBlock>,
}

impl EncoderStage {
    /// Returns the stage feature map [B,C,h,w].
    pub fn forward<E: Elem>(
        &self,
        tape: &mut Tape<E>,
        ps: &ParamStore<E>,
        x: TensorId,
    ) -> TensorId {
        let (mut tok, h, w) = self.patch.forward(tape, ps, x);
        for blk in &self.blocks {
            tok = blk.forward(tape, ps, tok, h, w);
        }
        ops::tokens_to_nchw(tape, tok, h, w)
    }
}

/// Three-stage pyramid encoder at strides 4/8/16.
#[derive(Clone, Debug)]
pub struct Encoder {
    pub stages: Vec<EncoderStage>,
    pub config: EncoderConfig,
}

impl Encoder {
    pub fn new<E: Elem>(
        ps: &mut ParamStore<E>,
        rng: &mut ChaCha8Rng,
        name: &str,
        in_channels: usize,
        cfg: &EncoderConfig,
    ) -> Self {
        cfg.validate();
        let mut stages = Vec::new();
        let mut cin = in_channels;
        for s in 0..3 {
            let sname = format!("{name}.stage{}", s + 1);
            let patch = PatchEmbed::new(
                ps,
                rng,
                &format!("{sname}.patch"),
                cin,
                cfg.channels[s],
                STAGE_STRIDES[s],
            );
            let blocks = (0..cfg.depths[s])
                .map(|b| {
                    TransformerBlock::new(
                        ps,
                        rng,
                        &format!("{sname}.block{b}"),
                        cfg.channels[s],
                        cfg.heads[s],
                        cfg.sr_ratios[s],
                        cfg.mlp_ratio,
                    )
                })
                .collect();
            stages.push(EncoderStage { patch, blocks });
            cin = cfg.channels[s];
        }
        Encoder {
            stages,
            config: cfg.clone(),
        }
    }

    pub fn forward<E: Elem>(
        &self,
        tape: &mut Tape<E>,
        ps: &ParamStore<E>,
        x: TensorId,
    ) -> FeaturePyramid {
        let (h, w) = (tape.shape(x)[2], tape.shape(x)[3]);
        assert!(
            h % 16 == 0 && w % 16 == 0,
            "encoder input dims {h}x{w} must be divisible by 16"
        );
        let f1 = self.stages[0].forward(tape, ps, x);
        let f2 = self.stages[1].forward(tape, ps, f1);
        let f3 = self.stages[2].forward(tape, ps, f2);
        FeaturePyramid { f1, f2, f3 }
    }
}

/// Downsample-and-sum pyramid fusion: each finer map is average-pooled by 2,
/// projected to the next stage's width by a 1x1 conv, and added in.
#[derive(Clone, Debug)]
pub struct FuseDownsampleSum {
    pub proj12: Conv2d,
    pub proj23: Conv2d,
}

impl FuseDownsampleSum {
    pub fn new<E: Elem>(
        ps: &mut ParamStore<E>,
        rng: &mut ChaCha8Rng,
        name: &str,
        channels: &[usize; 3],
    ) -> Self {
        FuseDownsampleSum {
            proj12: Conv2d::same(ps, rng, &format!("{name}.proj12"), channels[0], channels[1], 1, false),
            proj23: Conv2d::same(ps, rng, &format!("{name}.proj23"), channels[1], channels[2], 1, false),
        }
    }

    /// Returns (g2, g3); f1 passes through unchanged as the finest skip.
    pub fn forward<E: Elem>(
        &self,
        tape: &mut Tape<E>,
        ps: &ParamStore<E>,
        p: &FeaturePyramid,
    ) -> (TensorId, TensorId) {
        let d1 = ops::avg_pool_down(tape, p.f1, 2);
        let d1 = self.proj12.forward(tape, ps, d1);
        let g2 = ops::add(tape, p.f2, d1);
        let d2 = ops::avg_pool_down(tape, g2, 2);
        let d2 = self.proj23.forward(tape, ps, d2);
        let g3 = ops::add(tape, p.f3, d2);
        (g2, g3)
    }
}
