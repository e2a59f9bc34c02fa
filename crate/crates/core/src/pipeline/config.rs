use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{PipelineError, Result};
use crate::datapage::{ChannelConfig, PageGeometry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    #[default]
    Cnn,
    Mlp,
    Template,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Cnn => "CNN",
            ModelKind::Mlp => "MLP",
            ModelKind::Template => "TEMPLATE",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cnn" => Ok(ModelKind::Cnn),
            "mlp" => Ok(ModelKind::Mlp),
            "template" => Ok(ModelKind::Template),
            _ => Err(PipelineError::Config(format!("unknown model {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Seeds weight initialization, epoch shuffles and dropout masks.
    pub seed: u64,
    pub dropout_pool: f64,
    pub dropout_fc: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 100,
            learning_rate: 1e-3,
            seed: 0,
            dropout_pool: 0.25,
            dropout_fc: 0.5,
        }
    }
}

/// Everything needed to reproduce one run. `channel.seed` is the master seed
/// for page content and channel randomness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub geometry: PageGeometry,
    pub channel: ChannelConfig,
    pub train_pages: usize,
    pub test_pages: usize,
    pub model: ModelKind,
    pub train: TrainConfig,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            geometry: PageGeometry::desk(),
            channel: ChannelConfig::default(),
            train_pages: 30,
            test_pages: 10,
            model: ModelKind::Cnn,
            train: TrainConfig::default(),
            out_dir: PathBuf::from("out"),
        }
    }
}

/// Modeling choices folded into the fingerprint alongside the config.
const CHANNEL_MODEL: &str = "noise: added after min-max normalization; crop: none";

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        self.channel.validate()?;
        if self.train_pages == 0 || self.test_pages == 0 {
            return Err(PipelineError::Config("train_pages and test_pages must be >= 1".into()));
        }
        let t = &self.train;
        if t.batch_size == 0 {
            return Err(PipelineError::Config("batch_size must be >= 1".into()));
        }
        if !(t.learning_rate.is_finite() && t.learning_rate > 0.0) {
            return Err(PipelineError::Config("learning_rate must be positive".into()));
        }
        crate::nn::layers::check_dropout_rate(t.dropout_pool)?;
        crate::nn::layers::check_dropout_rate(t.dropout_fc)?;
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn channel_model() -> &'static str {
        CHANNEL_MODEL
    }

    /// SHA-256 over the TOML form (output paths excluded) and the channel
    /// modeling choices, as lowercase hex.
    pub fn fingerprint(&self) -> String {
        let mut c = self.clone();
        c.out_dir = PathBuf::new();
        let mut h = Sha256::new();
        h.update(c.to_toml().as_bytes());
        h.update(CHANNEL_MODEL.as_bytes());
        hex(&h.finalize())
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train = 0,
    Test = 1,
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of page `index` in `split`:
///
/// `splitmix64(splitmix64(master) + (2·index + split))` (wrapping add)
///
/// splitmix64 is a bijection on `u64`, so distinct `(split, index)` pairs with
/// `index < 2^63` never share a seed under the same master.
pub fn page_seed(master: u64, split: Split, index: u64) -> u64 {
    splitmix64(splitmix64(master).wrapping_add((index << 1) | split as u64))
}
