//! Reusable network building blocks: parameterized conv/linear/norm layers
//! and the SE, residual-SE, adapter, and CBR composites used by the
//! segmentation decoder.
//!
//! Blocks store [`ParamId`]s into a [`ParamStore`]; a forward call records
//! the computation on a [`Tape`]. Construction is deterministic given the
//! caller's RNG, so two builds from the same seed are bit-identical.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ops::{self, Conv2dSpec};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Elem;
use crate::tape::{Tape, TensorId};
use crate::tensor::Tensor;

/// Default batch-norm epsilon and running-stat momentum.
pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
/// Default layer-norm epsilon.
pub const LN_EPS: f64 = 1e-6;

/// Nonlinearity selector for the adapter bottleneck.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    LeakyRelu,
    Gelu,
}

impl Activation {
    pub fn apply<E: Elem>(self, tape: &mut Tape<E>, x: TensorId) -> TensorId {
        match self {
            Activation::Relu => ops::relu(tape, x),
            Activation::LeakyRelu => ops::leaky_relu(tape, x, 0.01),
            Activation::Gelu => ops::gelu(tape, x),
        }
    }
}

/// 2D convolution layer: weight (+ optional bias) parameters plus a spec.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub spec: Conv2dSpec,
    pub kernel: usize,
}

impl Conv2d {
    pub fn new<E: Elem>(
        ps: &mut ParamStore<E>,
        rng: &mut ChaCha8Rng,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        spec: Conv2dSpec,
        bias: bool,
    ) -> Self {
        let cin_g = cin / spec.groups;
        let fan_in = cin_g * kernel * kernel;
        let w = ps.add_he_uniform(
            &format!("{name}.w"),
            &[cout, cin_g, kernel, kernel],
            fan_in,
            rng,
        );
        let b = bias.then(|| ps.add_zeros(&format!("{name}.b"), &[cout]));
        Conv2d {
            w,
            b,
            spec,
            kernel,
        }
    }

    /// Stride-1, pad-(k-1)/2 convolution preserving spatial dims.
    pub fn same<E: Elem>(
        ps: &mut ParamStore<E>,
        rng: &mut ChaCha8Rng,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        bias: bool,
    ) -> Self {
        let spec = Conv2dSpec {
            stride: 1,
            padding: (kernel - 1) / 2,
            groups: 1,
        };
        Self::new(ps, rng, name, cin, cout, kernel, spec, bias)
    }

    /// 1x1 output-head conv with small uniform weights (and zero bias), so
    /// a freshly built model's logits stay near zero and the trailing
    /// sigmoid cannot saturate at 32-bit precision.
    pub fn head<E: Elem>(
        ps: &mut ParamStore<E>,
        rng: &mut ChaCha8Rng,
        name: &str,
        cin: usize,
        cout: usize,
    ) -> Self {
        let w = ps.add_uniform(&format!("{name}.w"), &[cout, cin, 1, 1], 0.05, rng);
        let b = Some(ps.add_zeros(&format!("{name}.b"), &[cout]));
        Conv2d {
            w,
            b,
            spec: Conv2dSpec::default(),
            kernel: 1,
        }
    }

    pub fn forward<E: Elem>(
        &self,
        tape: &mut Tape<E>,
        ps: &ParamStore<E>,
        x: TensorId,
    ) -> TensorId {
        let w = tape.param(ps, self.w);
        let b = self.b.map(|b| tape.param(ps, b));
        ops::conv2d(tape, x, w, b, self.spec)
    }
}

/// Fully connected layer over the last axis.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn new<E: Elem>(
        ps: &mut ParamStore<E>,
        rng: &mut ChaCha8Rng,
        name: &str,
        k: usize,
        n: usize,
        bias: bool,
    ) -> Self {
        let w = ps.add_he_uniform(&format!("{name}.w"), &[k, n], k, rng);
        let b = bias.then(|| ps.add_zeros(&format!("{name}.b"), &[n]));
        Linear { w, b }
    }

    /// Zero-initialized weights (used for identity-at-init projections).
    pub fn zeros<E: Elem>(
        ps: &mut ParamStore<E>,
        name: &str,
        k: usize,
        n: usize,
        bias: bool,
    ) -> Self {
        let w = ps.add_zeros(&format!("{name}.w"), &[k, n]);
        let b = bias.then(|| ps.add_zeros(&format!("{name}.b"), &[n]));
        Linear { w, b }
    }

    pub fn forward<E: Elem>(
        &self,
        tape: &mut Tape<E>,
        ps: &ParamStore<E>,
        x: TensorId,
    ) -> TensorId {
        let w = tape.param(ps, self.w);
        let b = self.b.map(|b| tape.param(ps, b));
        ops::linear(tape, x, w, b)
    }
}

/// Per-channel batch norm with learnable affine and running statistics.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm {
    pub fn new<E: Elem>(ps: &mut ParamStore<E>, name: &str, c: usize) -> Self {
        BatchNorm {
            gamma: ps.add_ones(&format!("{name}.gamma"), &[c]),
            beta: ps.add_zeros(&format!("{name}.beta"), &[c]),
            running_mean: ps.add(&format!("{name}.running_mean"), Tensor::zeros(&[c]), false),
            running_var: ps.add(&format!("{name}.running_var"), Tensor::ones(&[c]), false),
        }
    }

    pub fn forward<E: Elem>(
        &self,
        tape: &mut Tape<E>,
        ps: &mut ParamStore<E>,
        x: TensorId,
        training: bool,
    ) -> TensorId {
        let gamma = tape.param(ps, self.gamma);
        let beta = tape.param(ps, self.beta);
        let mut rm = ps.value(self.running_mean).clone();
        let mut rv = ps.value(self.running_var).clone();
        let y = ops::batch_norm2d(
            tape, x, gamma, beta, &mut rm, &mut rv, BN_EPS, BN_MOMENTUM, training,
        );
        if training {
            *ps.value_mut(self.running_mean) = rm;
            *ps.value_mut(self.running_var) = rv;
        }
        y
    }
}

/// Layer norm over the last axis with learnable affine.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new<E: Elem>(ps: &mut ParamStore<E>, name: &str, c: usize) -> Self {
        LayerNorm {
            gamma: ps.add_ones(&format!("{name}.gamma"), &[c]),
            beta: ps.add_zeros(&format!("{name}.beta"), &[c]),
        }
    }

    pub fn forward<E: Elem>(
        &self,
        tape: &mut Tape<E>,
        ps: &ParamStore<E>,
        x: TensorId,
    ) -> TensorId {
        let gamma = tape.param(ps, self.gamma);
        let beta = tape.param(ps, self.beta);
        ops::layer_norm(tape, x, gamma, beta, LN_EPS)
    }
}

/// Squeeze-and-excitation channel attention: global pool to a channel
/// descriptor, two-layer bottleneck, sigmoid gates scaling each channel.
#[derive(Clone, Debug)]
pub struct SEBlock {
    pub w1: Linear,
    pub w2: Linear,
    pub channels: usize,
    pub reduction: usize,
}

impl SEBlock {
    pub fn new<E: Elem>(
        ps: &mut ParamStore<E>,
        rng: &mut ChaCha8Rng,
        name: &str,
        channels: usize,
        reduction: usize,
    ) -> Self {
        let hidden = channels / reduction;
        assert!(hidden >= 1, "channels {channels} / reduction {reduction} < 1");
        SEBlock {
            w1: Linear::new(ps, rng, &format!("{name}.fc1"), channels, hidden, false),
            w2: Linear::new(ps, rng, &format!("{name}.fc2"), hidden, channels, false),
            channels,
            reduction,
        }
    }

    /// u[B,C,H,W] -> s_c * u_c with s = sigmoid(W2 relu(W1 z)), z the
    /// per-channel spatial mean of u.
    pub fn forward<E: Elem>(
        &self,
        tape: &mut Tape<E>,
        ps: &ParamStore<E>,
        u: TensorId,
    ) -> TensorId {
        assert_eq!(
            tape.shape(u)[1],
            self.channels,
            "SE channel mismatch: input {:?}, block {}",
            tape.shape(u),
            self.channels
        );
        let z = ops::global_avg_pool(tape, u);
        let a = self.w1.forward(tape, ps, z);
        let a = ops::relu(tape, a);
        let s = self.w2.forward(tape, ps, a);
        let s = ops::sigmoid(tape, s);
        ops::scale_channels(tape, u, s)
    }
}

/// Residual block with SE attention: 1x1 reduce, two 3x3 convs (each conv
/// batch-normed; the final ReLU is deferred until after the shortcut add),
/// SE gating, shortcut addition, final ReLU.
#[derive(Clone, Debug)]
pub struct ResidualSEBlock {
    pub reduce: Conv2d,
    pub reduce_bn: BatchNorm,
    pub conv_a: Conv2d,
    pub bn_a: BatchNorm,
    pub conv_b: Conv2d,
    pub bn_b: BatchNorm,
    pub se: SEBlock,
    /// 1x1 projection + BN on the shortcut, present iff cin != cout.
    pub shortcut: Option<(Conv2d, BatchNorm)>,
}

impl ResidualSEBlock {
    pub fn new<E: Elem>(
        ps: &mut ParamStore<E>,
        rng: &mut ChaCha8Rng,
        name: &str,
        cin: usize,
        cout: usize,
        se_reduction: usize,
    ) -> Self {
        let shortcut = (cin != cout).then(|| {
            (
                Conv2d::same(ps, rng, &format!("{name}.shortcut"), cin, cout, 1, false),
                BatchNorm::new(ps, &format!("{name}.shortcut_bn"), cout),
            )
        });
        ResidualSEBlock {
            reduce: Conv2d::same(ps, rng, &format!("{name}.reduce"), cin, cout, 1, false),
            reduce_bn: BatchNorm::new(ps, &format!("{name}.reduce_bn"), cout),
            conv_a: Conv2d::same(ps, rng, &format!("{name}.conv_a"), cout, cout, 3, false),
            bn_a: BatchNorm::new(ps, &format!("{name}.bn_a"), cout),
            conv_b: Conv2d::same(ps, rng, &format!("{name}.conv_b"), cout, cout, 3, false),
            bn_b: BatchNorm::new(ps, &format!("{name}.bn_b"), cout),
            se: SEBlock::new(ps, rng, &format!("{name}.se"), cout, se_reduction),
            shortcut,
        }
    }

    pub fn forward<E: Elem>(
        &self,
        tape: &mut Tape<E>,
        ps: &mut ParamStore<E>,
        x: TensorId,
        training: bool,
    ) -> TensorId {
        let h = self.reduce.forward(tape, ps, x);
        let h = self.reduce_bn.forward(tape, ps, h, training);
        let h = ops::relu(tape, h);
        let h = self.conv_a.forward(tape, ps, h);
        let h = self.bn_a.forward(tape, ps, h, training);
        let h = ops::relu(tape, h);
        let h = self.conv_b.forward(tape, ps, h);
        let h = self.bn_b.forward(tape, ps, h, training);
        let h = self.se.forward(tape, ps, h);
        let sc = match &self.shortcut {
            Some((conv, bn)) => {
                let s = conv.forward(tape, ps, x);
                bn.forward(tape, ps, s, training)
            }
            None => x,
        };
        let y = ops::add(tape, h, sc);
        ops::relu(tape, y)
    }
}

/// Skip-connection adapter: two bottleneck pathways (1x1 down-project,
/// nonlinearity, 1x1 up-project) summed. With `shared_params` the parallel
/// pathway reuses the main pathway's weights instead of owning its own.
#[derive(Clone, Debug)]
pub struct AdapterBlock {
    pub main_down: Conv2d,
    pub main_up: Conv2d,
    /// Independent second pathway; `None` means shared with the main one.
    pub parallel: Option<(Conv2d, Conv2d)>,
    pub activation: Activation,
    pub bottleneck: usize,
}

impl AdapterBlock {
    pub fn new<E: Elem>(
        ps: &mut ParamStore<E>,
        rng: &mut ChaCha8Rng,
        name: &str,
        cin: usize,
        cout: usize,
        bottleneck: usize,
        activation: Activation,
        shared_params: bool,
    ) -> Self {
        assert!(
            bottleneck >= 1 && bottleneck < cin,
            "bottleneck {bottleneck} must be in [1, cin {cin})"
        );
        let main_down = Conv2d::same(ps, rng, &format!("{name}.down"), cin, bottleneck, 1, false);
        let main_up = Conv2d::same(ps, rng, &format!("{name}.up"), bottleneck, cout, 1, false);
        let parallel = (!shared_params).then(|| {
            (
                Conv2d::same(ps, rng, &format!("{name}.par_down"), cin, bottleneck, 1, false),
                Conv2d::same(ps, rng, &format!("{name}.par_up"), bottleneck, cout, 1, false),
            )
        });
        AdapterBlock {
            main_down,
            main_up,
            parallel,
            activation,
            bottleneck,
        }
    }

    pub fn forward<E: Elem>(
        &self,
        tape: &mut Tape<E>,
        ps: &ParamStore<E>,
        h: TensorId,
    ) -> TensorId {
        let pathway = |tape: &mut Tape<E>, down: &Conv2d, up: &Conv2d| {
            let d = down.forward(tape, ps, h);
            let a = self.activation.apply(tape, d);
            up.forward(tape, ps, a)
        };
        let main = pathway(tape, &self.main_down, &self.main_up);
        let par = match &self.parallel {
            Some((down, up)) => pathway(tape, down, up),
            None => pathway(tape, &self.main_down, &self.main_up),
        };
        ops::add(tape, main, par)
    }
}

/// Conv 1x1 -> batch norm -> ReLU skip transform.
#[derive(Clone, Debug)]
pub struct CBRBlock {
    pub conv: Conv2d,
    pub bn: BatchNorm,
}

impl CBRBlock {
    pub fn new<E: Elem>(
        ps: &mut ParamStore<E>,
        rng: &mut ChaCha8Rng,
        name: &str,
        cin: usize,
        cout: usize,
    ) -> Self {
        CBRBlock {
            conv: Conv2d::same(ps, rng, &format!("{name}.conv"), cin, cout, 1, false),
            bn: BatchNorm::new(ps, &format!("{name}.bn"), cout),
        }
    }

    pub fn forward<E: Elem>(
        &self,
        tape: &mut Tape<E>,
        ps: &mut ParamStore<E>,
        x: TensorId,
        training: bool,
    ) -> TensorId {
        let y = self.conv.forward(tape, ps, x);
        let y = self.bn.forward(tape, ps, y, training);
        ops::relu(tape, y)
    }
}
