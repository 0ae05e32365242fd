//! Run configuration: every hyperparameter of the pipeline in one TOML file.
//!
//! All sections are optional and fall back to [`RunConfig::default`]; unknown
//! keys are rejected. Per-component SGD seeds are derived from the top-level
//! `seed` so one number pins the whole run.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::boost::BoostConfig;
use crate::error::{Error, Result};
use crate::eval::SplitGeometry;
use crate::nn::SgdConfig;
use crate::resnet::ResNetConfig;
use crate::sae::{SaeArch, SaeConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// One model per index.
    PerIndex,
    /// One model trained on the samples of every index.
    Pooled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    pub window_len: usize,
    pub clip_low: f64,
    pub clip_high: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            window_len: 20,
            clip_low: 0.005,
            clip_high: 0.995,
        }
    }
}

/// SGD settings without the seed (derived from [`RunConfig::seed`]).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgdSection {
    pub learning_rate: f64,
    #[serde(default)]
    pub l2_lambda: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl SgdSection {
    pub fn with_seed(&self, seed: u64) -> SgdConfig {
        SgdConfig {
            learning_rate: self.learning_rate,
            l2_lambda: self.l2_lambda,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SaeSection {
    pub arch: SaeArch,
    pub rho: f64,
    pub beta: f64,
    pub sgd: SgdSection,
}

impl Default for SaeSection {
    fn default() -> Self {
        SaeSection {
            arch: SaeArch::Dense { hidden: 10 },
            rho: 0.05,
            beta: 0.1,
            sgd: SgdSection {
                learning_rate: 1.0,
                l2_lambda: 0.0,
                batch_size: 32,
                epochs: 100,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoostSection {
    pub stages: usize,
    pub shrinkage: f64,
    pub blocks: usize,
    pub channels: usize,
    pub kernel: usize,
    /// `sgd.l2_lambda` is the per-stage L2 coefficient on CNN weights.
    pub sgd: SgdSection,
}

impl Default for BoostSection {
    fn default() -> Self {
        BoostSection {
            stages: 10,
            shrinkage: 0.5,
            blocks: 2,
            channels: 8,
            kernel: 3,
            sgd: SgdSection {
                learning_rate: 0.03,
                l2_lambda: 1e-5,
                batch_size: 32,
                epochs: 20,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub mode: Mode,
    /// Worker threads for independent backtest windows; 1 runs serially.
    pub threads: usize,
    pub features: FeatureConfig,
    pub sae: SaeSection,
    pub boost: BoostSection,
    pub split: SplitGeometry,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            mode: Mode::PerIndex,
            threads: 1,
            features: FeatureConfig::default(),
            sae: SaeSection::default(),
            boost: BoostSection::default(),
            split: SplitGeometry::default(),
        }
    }
}

/// Mixes a base seed with a tag into an independent 64-bit seed (splitmix64).
pub fn derive_seed(base: u64, tag: u64) -> u64 {
    let mut z = base ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const SAE_TAG: u64 = 1;
const BOOST_TAG: u64 = 2;

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::from(e).context(path.display()))?;
        Self::from_toml_str(&text).map_err(|e| e.context(path.display()))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let f = &self.features;
        if f.window_len == 0 {
            return Err(Error::Config(
                "features.window_len must be at least 1".into(),
            ));
        }
        if !(0.0 <= f.clip_low && f.clip_low < f.clip_high && f.clip_high <= 1.0) {
            return Err(Error::Config(format!(
                "features clip quantiles must satisfy 0 <= low < high <= 1, got ({}, {})",
                f.clip_low, f.clip_high
            )));
        }
        if self.threads == 0 {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        self.sae_config(0).validate()?;
        self.boost_config(0).validate()?;
        self.split.validate()?;
        if self.split.train_days + self.split.validate_days <= f.window_len {
            return Err(Error::Config(
                "split fit period must be longer than the window length".into(),
            ));
        }
        Ok(())
    }

    pub fn sae_config(&self, run_seed: u64) -> SaeConfig {
        SaeConfig {
            arch: self.sae.arch.clone(),
            rho: self.sae.rho,
            beta: self.sae.beta,
            sgd: self.sae.sgd.with_seed(derive_seed(run_seed, SAE_TAG)),
        }
    }

    pub fn boost_config(&self, run_seed: u64) -> BoostConfig {
        let b = &self.boost;
        BoostConfig {
            stages: b.stages,
            shrinkage: b.shrinkage,
            base: ResNetConfig {
                input_channels: self.sae.arch.hidden(),
                window_len: self.features.window_len,
                blocks: b.blocks,
                channels: b.channels,
                kernel: b.kernel,
            },
            sgd: b.sgd.with_seed(derive_seed(run_seed, BOOST_TAG)),
        }
    }

    /// SHA-256 over the canonical JSON encoding of the config. `threads` is
    /// left out: it never changes results.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(&RunConfig {
            threads: 1,
            ..self.clone()
        })
        .expect("config serializes");
        hex::encode(Sha256::digest(json))
    }
}
