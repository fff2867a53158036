use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::optimizer::{AdamConfig, LrSchedule};
use crate::quant::{Precision, Rounding};
use crate::subspace::SubspaceConfig;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Dense Adam on every parameter.
    FullAdam,
    /// Low-rank projected Adam, fixed interval, everything in float.
    #[serde(rename = "galore")]
    GaLore,
    /// Low-rank projected Adam with quantized weights, projections and moments.
    #[default]
    #[serde(rename = "qgalore")]
    QGaLore,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "fulladam" | "full" | "adam" => Ok(Method::FullAdam),
            "galore" => Ok(Method::GaLore),
            "qgalore" => Ok(Method::QGaLore),
            other => Err(Error::Config(format!("unknown method '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataConfig {
    /// Linear regression `y = W x + ε` with a seeded ground truth.
    Synthetic {
        n_features: usize,
        #[serde(default)]
        n_outputs: Option<usize>,
        /// Standard deviation of ε.
        noise: f64,
        #[serde(default = "default_val_size")]
        val_size: usize,
    },
    /// Byte-level text file.
    TextFile { path: PathBuf },
    /// Seeded generated English-like text of the given size.
    GeneratedText { bytes: usize },
}

fn default_val_size() -> usize {
    1024
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig::Synthetic {
            n_features: 16,
            n_outputs: None,
            noise: 0.01,
            val_size: default_val_size(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub method: Method,
    pub model: ModelConfig,
    pub optimizer: AdamConfig,
    pub schedule: LrSchedule,
    pub subspace: SubspaceConfig,
    pub rounding: Rounding,
    pub weight_bits: Precision,
    pub state_bits: Precision,
    pub reset_moments_on_update: bool,
    pub total_steps: u64,
    pub batch_size: usize,
    pub eval_every: u64,
    /// Upper bound on validation examples per evaluation.
    pub eval_examples: usize,
    pub seed: u64,
    pub data: DataConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            method: Method::QGaLore,
            model: ModelConfig::MlpRegressor {
                widths: vec![16, 16],
                bias: true,
            },
            optimizer: AdamConfig::default(),
            schedule: LrSchedule::default(),
            subspace: SubspaceConfig {
                base_interval: 50,
                ..SubspaceConfig::default()
            },
            rounding: Rounding::Stochastic,
            weight_bits: Precision::Int8,
            state_bits: Precision::Int8,
            reset_moments_on_update: false,
            total_steps: 1000,
            batch_size: 64,
            eval_every: 100,
            eval_examples: 2048,
            seed: 0,
            data: DataConfig::default(),
        }
    }
}

impl RunConfig {
    /// Defaults for a method: float everything for the baselines, INT8
    /// weights / INT4 projections / 8-bit moments / SR for Q-GaLore.
    pub fn for_method(method: Method) -> Self {
        let base = Self::default();
        match method {
            Method::QGaLore => base,
            Method::GaLore => Self {
                method,
                weight_bits: Precision::Float,
                state_bits: Precision::Float,
                rounding: Rounding::NearestTiesToEven,
                subspace: SubspaceConfig {
                    precision: Precision::Float,
                    adaptive: false,
                    ..base.subspace
                },
                ..base
            },
            Method::FullAdam => Self {
                method,
                weight_bits: Precision::Float,
                state_bits: Precision::Float,
                rounding: Rounding::NearestTiesToEven,
                subspace: SubspaceConfig {
                    precision: Precision::Float,
                    adaptive: false,
                    ..base.subspace
                },
                optimizer: AdamConfig {
                    alpha: 1.0,
                    ..base.optimizer
                },
                ..base
            },
        }
    }

    /// Applies the method constraints and validates every field.
    pub fn resolve(mut self) -> Result<Self> {
        match self.method {
            Method::GaLore => {
                self.weight_bits = Precision::Float;
                self.subspace.precision = Precision::Float;
                self.subspace.adaptive = false;
            }
            Method::FullAdam => {
                self.subspace.adaptive = false;
            }
            Method::QGaLore => {}
        }
        if self.weight_bits == Precision::Int4 {
            return Err(Error::Config("weights support int8 or float storage".into()));
        }
        if self.state_bits == Precision::Int4 {
            return Err(Error::Config("optimizer moments support int8 or float storage".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be positive".into()));
        }
        if self.eval_examples == 0 {
            return Err(Error::Config("eval_examples must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.schedule.warmup_frac) || !(0.0..=1.0).contains(&self.schedule.min_lr_ratio) {
            return Err(Error::Config("schedule fractions must lie in [0, 1]".into()));
        }
        self.optimizer.validate()?;
        self.subspace.validate()?;
        if let DataConfig::Synthetic { n_features, noise, val_size, .. } = &self.data {
            if *n_features == 0 || *val_size == 0 || !(noise.is_finite() && *noise >= 0.0) {
                return Err(Error::Config("invalid synthetic data settings".into()));
            }
        }
        match (&self.model, &self.data) {
            (ModelConfig::MlpRegressor { .. }, DataConfig::Synthetic { .. }) => {}
            (ModelConfig::TinyCharLm { .. }, DataConfig::TextFile { .. } | DataConfig::GeneratedText { .. }) => {}
            _ => return Err(Error::Config("model architecture does not match the data source".into())),
        }
        Ok(self)
    }

    /// Parses a TOML run description; absent keys keep their defaults.
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("config file: {e}")))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("config serialization: {e}")))
    }

    /// Stable 64-bit fingerprint (FNV-1a over the canonical JSON form).
    pub fn fingerprint(&self) -> u64 {
        let json = serde_json::to_string(self).expect("config serializes");
        json.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
            (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01B3)
        })
    }
}
