//! Run configuration: model architecture and training hyperparameters,
//! serializable as JSON. Command-line flags override file values.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::blocks::Activation;
use crate::encoder::EncoderConfig;
use crate::{Error, Result};

/// The four ablation variants, ordered by feature composition:
/// each adds one mechanism on top of the previous.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelVariant {
    /// Plain encoder-decoder with CBR skips and two-conv decoder blocks.
    Base,
    /// + downsample-and-sum encoder fusion.
    DsEnc,
    /// + residual-SE decoder blocks.
    DsEncRes,
    /// + adapter skip connections.
    #[default]
    Full,
}

impl ModelVariant {
    pub const ALL: [ModelVariant; 4] = [
        ModelVariant::Base,
        ModelVariant::DsEnc,
        ModelVariant::DsEncRes,
        ModelVariant::Full,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelVariant::Base => "base",
            ModelVariant::DsEnc => "dsenc",
            ModelVariant::DsEncRes => "dsencres",
            ModelVariant::Full => "full",
        }
    }

    pub fn uses_fusion(self) -> bool {
        self >= ModelVariant::DsEnc
    }

    pub fn uses_residual_se(self) -> bool {
        self >= ModelVariant::DsEncRes
    }

    pub fn uses_adapters(self) -> bool {
        self == ModelVariant::Full
    }
}

impl FromStr for ModelVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "base" => Ok(ModelVariant::Base),
            "dsenc" => Ok(ModelVariant::DsEnc),
            "dsencres" => Ok(ModelVariant::DsEncRes),
            "full" => Ok(ModelVariant::Full),
            other => Err(Error::Config(format!(
                "unknown variant {other:?}; expected base|dsenc|dsencres|full"
            ))),
        }
    }
}

fn default_channels() -> [usize; 3] {
    [32, 64, 128]
}
fn default_depths() -> [usize; 3] {
    [2, 2, 2]
}
fn default_sr_ratios() -> [usize; 3] {
    [4, 2, 1]
}
fn default_heads() -> [usize; 3] {
    [1, 2, 4]
}
fn default_mlp_ratio() -> usize {
    4
}
fn default_se_reduction() -> usize {
    8
}
fn default_adapter_bottleneck_div() -> usize {
    2
}

/// Architectural description of one model build.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub variant: ModelVariant,
    pub channels: [usize; 3],
    pub depths: [usize; 3],
    pub sr_ratios: [usize; 3],
    pub heads: [usize; 3],
    pub mlp_ratio: usize,
    pub se_reduction: usize,
    /// Adapter bottleneck width = level channels / this divisor.
    pub adapter_bottleneck_div: usize,
    pub adapter_activation: Activation,
    /// Share the adapter's parallel-pathway weights with its main pathway.
    pub adapter_shared: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            variant: ModelVariant::Full,
            channels: default_channels(),
            depths: default_depths(),
            sr_ratios: default_sr_ratios(),
            heads: default_heads(),
            mlp_ratio: default_mlp_ratio(),
            se_reduction: default_se_reduction(),
            adapter_bottleneck_div: default_adapter_bottleneck_div(),
            adapter_activation: Activation::Relu,
            adapter_shared: false,
        }
    }
}

impl ModelConfig {
    /// A small configuration for tests and gradient checks.
    pub fn tiny(variant: ModelVariant) -> Self {
        ModelConfig {
            variant,
            channels: [8, 16, 32],
            depths: [1, 1, 1],
            sr_ratios: [2, 2, 1],
            heads: [1, 2, 4],
            mlp_ratio: 2,
            se_reduction: 4,
            adapter_bottleneck_div: 2,
            ..Default::default()
        }
    }

    pub fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            channels: self.channels,
            depths: self.depths,
            sr_ratios: self.sr_ratios,
            heads: self.heads,
            mlp_ratio: self.mlp_ratio,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder_config().validate();
        for &c in &self.channels {
            if c / self.se_reduction == 0 {
                return Err(Error::Config(format!(
                    "se_reduction {} too large for channel width {c}",
                    self.se_reduction
                )));
            }
            let bn = c / self.adapter_bottleneck_div;
            if bn == 0 || bn >= c {
                return Err(Error::Config(format!(
                    "adapter_bottleneck_div {} invalid for channel width {c}",
                    self.adapter_bottleneck_div
                )));
            }
        }
        Ok(())
    }
}

/// Optimizer and training-loop hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub early_stop_patience: usize,
    /// Minimum absolute val-mDice improvement that resets patience.
    pub min_delta: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            epochs: 30,
            batch_size: 8,
            early_stop_patience: 5,
            min_delta: 1e-4,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.early_stop_patience < 1 {
            return Err(Error::Config("early_stop_patience must be >= 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// On-disk config file: both sections optional, missing fields defaulted.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.model.validate()?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_names_roundtrip() {
        for v in ModelVariant::ALL {
            assert_eq!(v.name().parse::<ModelVariant>().unwrap(), v);
        }
        assert!("resnet".parse::<ModelVariant>().is_err());
    }

    #[test]
    fn variant_feature_nesting_is_monotone() {
        assert!(!ModelVariant::Base.uses_fusion());
        assert!(ModelVariant::DsEnc.uses_fusion());
        assert!(!ModelVariant::DsEnc.uses_residual_se());
        assert!(ModelVariant::DsEncRes.uses_residual_se());
        assert!(!ModelVariant::DsEncRes.uses_adapters());
        assert!(ModelVariant::Full.uses_adapters());
    }

    #[test]
    fn config_json_roundtrip_and_defaults() {
        let cfg = RunConfig::default();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        let back = RunConfig::from_json(&text).unwrap();
        assert_eq!(cfg, back);

        // empty object takes all defaults
        let empty = RunConfig::from_json("{}").unwrap();
        assert_eq!(empty, RunConfig::default());

        // partial override
        let part = RunConfig::from_json(r#"{"train": {"epochs": 3}}"#).unwrap();
        assert_eq!(part.train.epochs, 3);
        assert_eq!(part.train.batch_size, 8);
        assert_eq!(part.model.variant, ModelVariant::Full);
    }

    #[test]
    fn unknown_fields_rejected() {
        assert!(RunConfig::from_json(r#"{"modle": {}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"train": {"lr": 0.1}}"#).is_err());
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(RunConfig::from_json(r#"{"train": {"learning_rate": 0.0}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"model": {"se_reduction": 1000}}"#).is_err());
    }
}
