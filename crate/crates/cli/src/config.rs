//! Run configuration files (TOML).

use std::path::{Path, PathBuf};

use productae::eval::StopRule;
use productae::{FinetuneConfig, ModelConfig, TrainingConfig};
use serde::{Deserialize, Serialize};

use crate::Failure;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub seed: u64,
    pub precision: Precision,
    pub model: ModelConfig,
    pub training: TrainingSection,
    pub eval: EvalSection,
    pub paths: PathsSection,
}

/// Training schedule; the seed comes from the top level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    pub batch_size: usize,
    pub micro_batch_size: usize,
    pub t_enc: usize,
    pub t_dec: usize,
    pub lr_enc: f64,
    pub lr_dec: f64,
    pub gamma_db: f64,
    pub dec_snr_low_offset: f64,
    pub dec_snr_high_offset: f64,
    pub epochs: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finetune: Option<FinetuneConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    /// Channel SNRs to simulate, in dB.
    #[serde(default)]
    pub snr_db: Vec<f64>,
    /// Eb/N0 points, converted with the model rate.
    #[serde(default)]
    pub ebn0_db: Vec<f64>,
    pub min_block_errors: u64,
    pub max_blocks: u64,
    pub workers: usize,
    pub batch_blocks: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsSection {
    pub checkpoint_dir: PathBuf,
    pub results_csv: PathBuf,
}

impl TrainingSection {
    pub fn with_seed(&self, seed: u64) -> TrainingConfig {
        TrainingConfig {
            batch_size: self.batch_size,
            micro_batch_size: self.micro_batch_size,
            t_enc: self.t_enc,
            t_dec: self.t_dec,
            lr_enc: self.lr_enc,
            lr_dec: self.lr_dec,
            gamma_db: self.gamma_db,
            dec_snr_low_offset: self.dec_snr_low_offset,
            dec_snr_high_offset: self.dec_snr_high_offset,
            epochs: self.epochs,
            finetune: self.finetune,
            seed,
        }
    }
}

impl From<&TrainingConfig> for TrainingSection {
    fn from(c: &TrainingConfig) -> Self {
        Self {
            batch_size: c.batch_size,
            micro_batch_size: c.micro_batch_size,
            t_enc: c.t_enc,
            t_dec: c.t_dec,
            lr_enc: c.lr_enc,
            lr_dec: c.lr_dec,
            gamma_db: c.gamma_db,
            dec_snr_low_offset: c.dec_snr_low_offset,
            dec_snr_high_offset: c.dec_snr_high_offset,
            epochs: c.epochs,
            finetune: c.finetune,
        }
    }
}

impl EvalSection {
    pub fn stop_rule(&self) -> StopRule {
        StopRule {
            min_block_errors: self.min_block_errors,
            min_bit_errors: 0,
            max_blocks: self.max_blocks,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, Failure> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Failure::usage(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::io(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|f| Failure {
            message: format!("{}: {}", path.display(), f.message),
            ..f
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn training(&self) -> TrainingConfig {
        self.training.with_seed(self.seed)
    }

    pub fn validate(&self) -> Result<(), Failure> {
        if self.version != CONFIG_VERSION {
            return Err(Failure::usage(format!(
                "config version {} is not supported (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        if self.seed > i64::MAX as u64 {
            return Err(Failure::usage(format!(
                "seed {} does not fit a TOML integer",
                self.seed
            )));
        }
        let field = |name: &str, e: productae::Error| Failure::usage(format!("[{name}] {e}"));
        self.model.validate().map_err(|e| field("model", e))?;
        self.training()
            .validate()
            .map_err(|e| field("training", e))?;
        self.eval_stop().map_err(|e| field("eval", e))?;
        if self.eval.workers == 0 || self.eval.batch_blocks == 0 {
            return Err(Failure::usage(
                "[eval] workers and batch_blocks must be positive",
            ));
        }
        Ok(())
    }

    fn eval_stop(&self) -> productae::Result<()> {
        self.eval.stop_rule().validate()
    }

    /// A preset shipped with the binary.
    pub fn preset(name: &str) -> Option<Self> {
        let text = match name {
            "productae-15-10" => include_str!("../presets/productae-15-10.toml"),
            "productae-21-14" => include_str!("../presets/productae-21-14.toml"),
            "desk" => include_str!("../presets/desk.toml"),
            _ => return None,
        };
        Some(Self::parse(text).expect("shipped presets are valid"))
    }
}

pub const PRESETS: [&str; 3] = ["productae-15-10", "productae-21-14", "desk"];
