use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::augment::AugmentationPolicy;
use crate::error::{Error, Result};
use crate::model::{EncoderConfig, GridMap};
use crate::rationale::{AttentionScaling, GradCamSource, KlDirection, LossWeights};
use crate::variants::{configure_variant_with, VariantMode, VariantOverrides, VariantSpec};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LrSchedule {
    #[default]
    Constant,
    Cosine,
}

/// The `variant` section of a config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VariantConfig {
    pub mode: VariantMode,
    /// Number of branch projections K.
    pub projections: usize,
    pub mlp_hidden: Option<usize>,
}

impl Default for VariantConfig {
    fn default() -> Self {
        VariantConfig {
            mode: VariantMode::Ours,
            projections: 32,
            mlp_hidden: None,
        }
    }
}

/// Test-time preprocessing and feature options.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Resize the shorter side to this before the center crop to `input_size`.
    pub resize: usize,
    pub attention_scaling: AttentionScaling,
    /// Take GAP features regardless of the variant's test aggregation.
    pub force_gap: bool,
    pub batch_size: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            resize: 256,
            attention_scaling: AttentionScaling::Literal,
            force_gap: false,
            batch_size: 64,
        }
    }
}

/// Everything a pretraining run needs. Serialized as human-readable JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub encoder: EncoderConfig,
    pub variant: VariantConfig,
    pub batch_size: usize,
    pub epochs: usize,
    /// Stop after this many optimizer steps, if set.
    pub max_steps: Option<u64>,
    pub lr: f64,
    pub lr_schedule: LrSchedule,
    pub sgd_momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub loss_weights: LossWeights,
    /// Softmax temperature for the attention and GradCAM maps.
    pub map_temperature: f64,
    /// Contrastive temperature.
    pub temperature: f64,
    pub key_momentum: f64,
    pub queue_size: usize,
    pub gradcam_source: GradCamSource,
    pub kl_direction: KlDirection,
    pub target_scaling: TargetScaling,
    pub augmentation: AugmentationPolicy,
    pub eval: EvalConfig,
}

/// How the GradCAM map is scaled before the temperature softmax.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetScaling {
    /// Use G as computed.
    #[default]
    Raw,
    /// Divide G by its maximum (all-zero maps stay zero).
    UnitMax,
}

impl TargetScaling {
    pub fn apply(self, g: &GridMap) -> GridMap {
        let mut out = g.clone();
        let m = g.max();
        if self == TargetScaling::UnitMax && m > 0.0 {
            out.values_mut().iter_mut().for_each(|v| *v /= m);
        }
        out
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            encoder: EncoderConfig::full_scale(),
            variant: VariantConfig::default(),
            batch_size: 128,
            epochs: 100,
            max_steps: None,
            lr: 0.03,
            lr_schedule: LrSchedule::Constant,
            sgd_momentum: 0.9,
            weight_decay: 1e-4,
            seed: 0,
            loss_weights: LossWeights::default(),
            map_temperature: 0.4,
            temperature: 0.2,
            key_momentum: 0.999,
            queue_size: 65536,
            gradcam_source: GradCamSource::PositiveLogit,
            kl_direction: KlDirection::AttentionFirst,
            target_scaling: TargetScaling::Raw,
            augmentation: AugmentationPolicy::standard(224),
            eval: EvalConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Small setting for the synthetic 64 px dataset on one CPU core.
    pub fn desk() -> Self {
        let encoder = EncoderConfig::tiny();
        let size = encoder.input_size;
        TrainConfig {
            encoder,
            batch_size: 32,
            epochs: 40,
            queue_size: 256,
            key_momentum: 0.99,
            augmentation: AugmentationPolicy::desk(size),
            eval: EvalConfig {
                resize: 72,
                ..EvalConfig::default()
            },
            ..TrainConfig::default()
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: TrainConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 over the compact JSON form.
    pub fn hash(&self) -> String {
        let compact = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(compact.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn variant_spec(&self) -> Result<VariantSpec> {
        configure_variant_with(
            self.variant.mode,
            self.variant.projections,
            self.encoder.feature_channels,
            VariantOverrides {
                mlp_hidden: self.variant.mlp_hidden,
                ..VariantOverrides::default()
            },
        )
    }

    /// Encoder config with the projector input widened to the training pooled size.
    pub fn network_config(&self) -> Result<EncoderConfig> {
        let spec = self.variant_spec()?;
        let mut enc = self.encoder.clone();
        if let Some(first) = enc.projector_dims.first_mut() {
            *first = spec.train_pooled_dim;
        }
        Ok(enc)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(what.to_string()));
        self.encoder.validate()?;
        self.variant_spec()?;
        self.loss_weights.validate()?;
        if self.batch_size < 2 {
            return bad("batch_size must be >= 2");
        }
        if self.epochs == 0 && self.max_steps.is_none() {
            return bad("epochs must be >= 1");
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("lr must be finite and >= 0");
        }
        if !(0.0..1.0).contains(&self.sgd_momentum) || self.weight_decay < 0.0 {
            return bad("sgd_momentum must be in [0, 1) and weight_decay >= 0");
        }
        if !(self.map_temperature > 0.0 && self.temperature > 0.0) {
            return bad("temperatures must be > 0");
        }
        if !(0.0..=1.0).contains(&self.key_momentum) {
            return bad("key_momentum must be in [0, 1]");
        }
        if self.queue_size < self.batch_size {
            return bad("queue_size must be >= batch_size");
        }
        if self.augmentation.output_size != self.encoder.input_size {
            return bad("augmentation output size must equal the encoder input size");
        }
        if self.eval.resize < self.encoder.input_size || self.eval.batch_size == 0 {
            return bad("eval resize must be >= input size and eval batch >= 1");
        }
        self.augmentation.validate()
    }

    /// Learning rate at `step` of `total` steps.
    pub fn lr_at(&self, step: u64, total: u64) -> f64 {
        match self.lr_schedule {
            LrSchedule::Constant => self.lr,
            LrSchedule::Cosine => {
                let t = if total == 0 { 0.0 } else { step as f64 / total as f64 };
                0.5 * self.lr * (1.0 + (std::f64::consts::PI * t.min(1.0)).cos())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_the_documented_hyperparameters() {
        let c = TrainConfig::default();
        assert_eq!((c.batch_size, c.epochs), (128, 100));
        assert_eq!((c.lr, c.sgd_momentum, c.weight_decay), (0.03, 0.9, 1e-4));
        assert_eq!(c.queue_size, 65536);
        assert_eq!(c.key_momentum, 0.999);
        assert_eq!(c.augmentation.output_size, 224);
        c.validate().unwrap();
        TrainConfig::desk().validate().unwrap();
    }

    #[test]
    fn json_round_trip_and_partial_files() {
        let c = TrainConfig::desk();
        assert_eq!(TrainConfig::from_json(&c.to_json()).unwrap(), c);
        let partial = r#"{"variant": {"mode": "moco-baseline"}, "lr": 0.1}"#;
        let p = TrainConfig::from_json(partial).unwrap();
        assert_eq!(p.variant.mode, VariantMode::MocoBaseline);
        assert_eq!(p.lr, 0.1);
        assert_ne!(p.hash(), TrainConfig::default().hash());
    }

    #[test]
    fn bilinear_widens_the_projector_input() {
        let mut c = TrainConfig::desk();
        c.variant.mode = VariantMode::SamSslBilinear;
        c.variant.projections = 4;
        assert_eq!(c.network_config().unwrap().projector_dims[0], 64 * 4);
    }

    #[test]
    fn cosine_schedule_ends_at_zero() {
        let mut c = TrainConfig::desk();
        c.lr_schedule = LrSchedule::Cosine;
        assert_eq!(c.lr_at(0, 10), c.lr);
        assert!(c.lr_at(10, 10).abs() < 1e-15);
    }
}
