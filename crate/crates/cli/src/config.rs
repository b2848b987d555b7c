//! Run configuration: one TOML document, overridden field by field by
//! command-line flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use signtune_core::model::EncoderConfig;
use signtune_core::prompts::PromptMode;
use signtune_core::schedule::AdaptiveFactorConfig;
use signtune_core::training::{LossMode, OptimizerKind, Strategy, TrainConfig};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub paths: Paths,
    pub regions: Regions,
    pub prompts: PromptOptions,
    pub encoder: EncoderOptions,
    pub train: TrainOptions,
    pub synthetic: SyntheticOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("runs"),
            paths: Paths::default(),
            regions: Regions::default(),
            prompts: PromptOptions::default(),
            encoder: EncoderOptions::default(),
            train: TrainOptions::default(),
            synthetic: SyntheticOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub taxonomy: Option<PathBuf>,
    pub pools: Option<PathBuf>,
    pub prompts: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub mapping: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub ft_checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Regions {
    pub train: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptOptions {
    pub n_per_class: usize,
    pub mode: String,
    /// Use only the first `n_classes` taxonomy entries.
    pub n_classes: Option<usize>,
}

impl Default for PromptOptions {
    fn default() -> Self {
        Self {
            n_per_class: signtune_core::prompts::DEFAULT_PROMPTS_PER_CLASS,
            mode: PromptMode::default().to_string(),
            n_classes: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderOptions {
    /// Seed of the reference encoder initialization (the zero-shot anchor).
    pub init_seed: u64,
    pub image_side: usize,
    pub hidden: usize,
    pub embed_dim: usize,
    pub vocab_buckets: usize,
}

impl Default for EncoderOptions {
    fn default() -> Self {
        let d = EncoderConfig::default();
        Self {
            init_seed: 0,
            image_side: d.image_side,
            hidden: d.hidden,
            embed_dim: d.embed_dim,
            vocab_buckets: d.vocab_buckets,
        }
    }
}

impl EncoderOptions {
    pub fn config(&self, n_classes: usize) -> EncoderConfig {
        EncoderConfig {
            image_side: self.image_side,
            hidden: self.hidden,
            embed_dim: self.embed_dim,
            vocab_buckets: self.vocab_buckets,
            n_classes,
        }
    }
}

/// Unset fields fall back to the published settings, or to the desk-scale
/// settings when the data is synthetic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainOptions {
    pub strategy: Option<String>,
    pub epochs: Option<u32>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub lambda: Option<f64>,
    pub alpha: Option<f64>,
    pub gamma: Option<f64>,
    pub clamp_lo: Option<f64>,
    pub clamp_hi: Option<f64>,
    pub loss_mode: Option<String>,
    pub optimizer: Option<String>,
    pub weight_decay: Option<f64>,
    pub warmup_steps: Option<usize>,
    pub val_fraction: f64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            strategy: None,
            epochs: None,
            batch_size: None,
            learning_rate: None,
            lambda: None,
            alpha: None,
            gamma: None,
            clamp_lo: None,
            clamp_hi: None,
            loss_mode: None,
            optimizer: None,
            weight_decay: None,
            warmup_steps: None,
            val_fraction: 0.2,
        }
    }
}

fn parse<T: std::str::FromStr<Err = signtune_core::Error>>(value: &Option<String>) -> Result<Option<T>, CliError> {
    value.as_deref().map(str::parse).transpose().map_err(CliError::from)
}

impl TrainOptions {
    pub fn resolve(&self, seed: u64, synthetic: bool) -> Result<TrainConfig, CliError> {
        let base = if synthetic {
            TrainConfig::desk_scale()
        } else {
            TrainConfig::default()
        };
        let epochs = self.epochs.unwrap_or(base.epochs);
        let mut factor = AdaptiveFactorConfig {
            gamma: self.gamma.unwrap_or(base.factor.gamma),
            total_epochs: epochs,
            ..base.factor
        };
        factor.clamp_lo = self.clamp_lo.unwrap_or(factor.clamp_lo);
        factor.clamp_hi = self.clamp_hi.unwrap_or(factor.clamp_hi);
        let cfg = TrainConfig {
            strategy: parse::<Strategy>(&self.strategy)?.unwrap_or(base.strategy),
            epochs,
            batch_size: self.batch_size.unwrap_or(base.batch_size),
            learning_rate: self.learning_rate.unwrap_or(base.learning_rate),
            lambda: self.lambda.unwrap_or(base.lambda),
            alpha: self.alpha.unwrap_or(base.alpha),
            factor,
            seed,
            loss_mode: parse::<LossMode>(&self.loss_mode)?.unwrap_or(base.loss_mode),
            optimizer: parse::<OptimizerKind>(&self.optimizer)?.unwrap_or(base.optimizer),
            weight_decay: self.weight_decay.unwrap_or(base.weight_decay),
            warmup_steps: self.warmup_steps.unwrap_or(base.warmup_steps),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticOptions {
    pub n_classes: usize,
    pub n_regions: usize,
    pub samples_per_class_region: usize,
    pub style_shift_strength: f64,
}

impl Default for SyntheticOptions {
    fn default() -> Self {
        Self {
            n_classes: 6,
            n_regions: 3,
            samples_per_class_region: 50,
            style_shift_strength: 0.4,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn prompt_mode(&self) -> Result<PromptMode, CliError> {
        self.prompts.mode.parse().map_err(CliError::from)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips_through_toml() {
        let cfg = RunConfig::default();
        let back: RunConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unset_training_fields_follow_the_data_profile() {
        let opts = TrainOptions::default();
        assert_eq!(opts.resolve(4, false).unwrap(), TrainConfig { seed: 4, ..TrainConfig::default() });
        assert_eq!(opts.resolve(4, true).unwrap(), TrainConfig { seed: 4, ..TrainConfig::desk_scale() });
    }

    #[test]
    fn epoch_override_also_sets_the_schedule_horizon() {
        let opts = TrainOptions {
            epochs: Some(4),
            gamma: Some(2.0),
            ..TrainOptions::default()
        };
        let cfg = opts.resolve(0, true).unwrap();
        assert_eq!(cfg.factor.total_epochs, 4);
        assert_eq!(cfg.factor.gamma, 2.0);
    }

    #[test]
    fn unknown_names_are_rejected() {
        let opts = TrainOptions {
            optimizer: Some("rmsprop".into()),
            ..TrainOptions::default()
        };
        assert!(opts.resolve(0, false).is_err());
    }
}
