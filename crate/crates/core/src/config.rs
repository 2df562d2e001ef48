use serde::{Deserialize, Serialize};
use tgmr_autograd::SgdConfig;

use crate::error::{Error, Result};
use crate::scene::{DESK_SCALES, NUM_CLASSES};
use crate::training::LossConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub frame_width: f64,
    pub frame_height: f64,
    /// `(cols, rows)` per scale, finest first.
    pub scales: Vec<(usize, usize)>,
    pub num_classes: usize,
    pub hidden_channels: usize,
    pub kernel_size: usize,
    pub attn_dim: usize,
    pub decoder_input_channels: usize,
    pub use_location_encoder: bool,
    pub use_memory_replay: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            frame_width: 192.0,
            frame_height: 96.0,
            scales: DESK_SCALES.to_vec(),
            num_classes: NUM_CLASSES,
            hidden_channels: 32,
            kernel_size: 3,
            attn_dim: 16,
            decoder_input_channels: 4,
            use_location_encoder: true,
            use_memory_replay: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scales.is_empty() {
            return Err(Error::Config("at least one grid scale is required".into()));
        }
        if self.scales.iter().any(|&(c, r)| c == 0 || r == 0) {
            return Err(Error::Config(format!("grid scales must be positive, got {:?}", self.scales)));
        }
        if !(self.frame_width > 0.0 && self.frame_height > 0.0) {
            return Err(Error::Config("frame dimensions must be positive".into()));
        }
        if self.kernel_size % 2 == 0 {
            return Err(Error::Config(format!("kernel_size must be odd, got {}", self.kernel_size)));
        }
        if self.num_classes == 0 || self.hidden_channels == 0 || self.attn_dim == 0 || self.decoder_input_channels == 0 {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        Ok(())
    }

    /// Channels of the decoder state: encoder hidden plus the appended scene.
    pub fn decoder_channels(&self) -> usize {
        self.hidden_channels + self.num_classes
    }
}

/// Whether the exponential time weighting of the regression loss is active.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum TrainMode {
    #[default]
    SingleFuture,
    MultiFuture,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub lr_decay_per_epoch: f64,
    pub weight_decay: f64,
    /// Global gradient-norm cap per update; `null` disables clipping.
    pub grad_clip_norm: Option<f64>,
    pub mode: TrainMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let sgd = SgdConfig::default();
        Self {
            epochs: 30,
            learning_rate: sgd.learning_rate,
            lr_decay_per_epoch: sgd.lr_decay_per_epoch,
            weight_decay: sgd.weight_decay,
            grad_clip_norm: Some(10.0),
            mode: TrainMode::SingleFuture,
        }
    }
}

impl TrainConfig {
    pub fn sgd(&self) -> SgdConfig {
        SgdConfig {
            learning_rate: self.learning_rate,
            lr_decay_per_epoch: self.lr_decay_per_epoch,
            weight_decay: self.weight_decay,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.sgd().validate()?;
        if let Some(c) = self.grad_clip_norm {
            if !(c > 0.0) {
                return Err(Error::Config(format!("grad_clip_norm must be positive, got {c}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeConfig {
    pub k: usize,
    pub diversity_rate: f64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self { k: 20, diversity_rate: 0.5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub loss: LossConfig,
    pub decode: DecodeConfig,
}

impl Config {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.loss.validate()?;
        if self.decode.k == 0 {
            return Err(Error::Config("decode.k must be at least 1".into()));
        }
        if !(self.decode.diversity_rate >= 0.0) {
            return Err(Error::Config("decode.diversity_rate must be non-negative".into()));
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(s)?;
        c.validate()?;
        Ok(c)
    }
}
