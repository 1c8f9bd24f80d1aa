use std::fs;
use std::path::Path;

use candle_core::DType;
use serde::{Deserialize, Serialize};

use super::denoiser::DenoiserNet;
use super::schedule::{build_schedule, DiffusionConfig, NoiseSchedule};
use crate::error::{Error, Result};
use crate::nn::{AdamState, ParamSnapshot};

pub const CHECKPOINT_FORMAT_VERSION: &str = "1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionCheckpoint {
    pub format_version: String,
    pub config: DiffusionConfig,
    pub schedule: NoiseSchedule,
    pub step: u64,
    pub weights: ParamSnapshot,
    #[serde(default)]
    pub optimizer: Option<AdamState>,
}

impl DiffusionCheckpoint {
    pub fn capture(net: &DenoiserNet, step: u64, optimizer: Option<AdamState>) -> Result<Self> {
        Ok(DiffusionCheckpoint {
            format_version: CHECKPOINT_FORMAT_VERSION.into(),
            config: net.config().clone(),
            schedule: build_schedule(net.config())?,
            step,
            weights: net.params().snapshot()?,
            optimizer,
        })
    }

    /// Rebuilds the network in `dtype` with the stored weights.
    pub fn restore(&self, dtype: DType) -> Result<DenoiserNet> {
        let net = DenoiserNet::new(&self.config, dtype)?;
        net.params().restore(&self.weights)?;
        Ok(net)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: DiffusionCheckpoint = serde_json::from_str(&text)?;
        if ckpt.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::FormatVersion {
                what: "diffusion checkpoint",
                found: ckpt.format_version,
                expected: CHECKPOINT_FORMAT_VERSION.into(),
            });
        }
        Ok(ckpt)
    }
}
