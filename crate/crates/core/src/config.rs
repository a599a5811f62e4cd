//! Run configuration: one TOML document covering every knob. Unknown keys are
//! rejected so typos fail loudly.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::distill::DistillConfig;
use crate::error::Error;
use crate::membank::BankConfig;
use crate::metrics::MetricsConfig;
use crate::policy::PolicyConfig;
use crate::tracker::realtime::LatencyModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RtConfig {
    pub fps: f64,
    pub latency: LatencyModel,
}

impl Default for RtConfig {
    fn default() -> Self {
        Self {
            fps: 30.0,
            latency: LatencyModel::Constant { ms: 0.0 },
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IoConfig {
    /// Default input when a command gets none on the command line.
    pub input: Option<PathBuf>,
    /// Default output path; stdout when unset.
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads for sequence-level parallelism; 0 picks the number of
    /// available cores.
    pub workers: usize,
    pub policy: PolicyConfig,
    pub bank: BankConfig,
    pub distill: DistillConfig,
    pub metrics: MetricsConfig,
    pub rt: RtConfig,
    pub io: IoConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            workers: 1,
            policy: PolicyConfig::default(),
            bank: BankConfig::default(),
            distill: DistillConfig::default(),
            metrics: MetricsConfig::default(),
            rt: RtConfig::default(),
            io: IoConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, Error> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::from(e).in_file(path.display().to_string()))?;
        Self::from_toml(&text).map_err(|e| e.in_file(path.display().to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), Error> {
        self.policy.validate()?;
        self.bank.validate()?;
        self.distill.validate()?;
        self.metrics.validate()?;
        if self.rt.fps.is_nan() || self.rt.fps <= 0.0 {
            return Err(Error::Config(format!("rt.fps must be positive, got {}", self.rt.fps)));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }
}
