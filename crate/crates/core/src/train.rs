//! Alternating encoder/decoder training.
//!
//! Every epoch runs `T_dec` decoder steps (encoder frozen, per-sample SNR
//! drawn uniformly in dB from `[γ + low, γ + high]`) followed by `T_enc`
//! encoder steps (decoder frozen, one SNR `γ` for the whole batch). A step
//! of batch size `B` is computed as `l = B / B_s` micro-batches whose
//! losses are scaled by `1/l` and whose gradients are accumulated before a
//! single Adam update, which reproduces the mean loss of one batch of `B`.
//! Each step draws fresh messages and noise.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::channel::{sample_noise, sigma2_from_snr_db};
use crate::checkpoint::Checkpoint;
use crate::error::{CheckpointError, Error, Result};
use crate::model::{ModelConfig, ProductAe, Role};
use crate::nn::{zero_grad, Adam, AdamConfig};
use crate::real::Real;
use crate::rng::derive_seed;
use crate::tensor::Tensor;

const TRAIN_STREAM: u64 = 0x7EA1;
const FINETUNE_STREAM: u64 = 0xF17E;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinetuneConfig {
    pub batch_size: usize,
    pub epochs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    /// Information arrays per optimizer step (`B`).
    pub batch_size: usize,
    /// Arrays per forward/backward pass (`B_s`); must divide every batch size.
    pub micro_batch_size: usize,
    pub t_enc: usize,
    pub t_dec: usize,
    pub lr_enc: f64,
    pub lr_dec: f64,
    /// Encoder training SNR `γ` in dB.
    pub gamma_db: f64,
    pub dec_snr_low_offset: f64,
    pub dec_snr_high_offset: f64,
    pub epochs: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finetune: Option<FinetuneConfig>,
    pub seed: u64,
}

impl TrainingConfig {
    /// B=5000, lr=2e-4, T_enc=100, T_dec=500, γ=3 dB, decoder range [γ-2.5, γ+1].
    pub fn reference() -> Self {
        Self {
            batch_size: 5000,
            micro_batch_size: 1000,
            t_enc: 100,
            t_dec: 500,
            lr_enc: 2e-4,
            lr_dec: 2e-4,
            gamma_db: 3.0,
            dec_snr_low_offset: -2.5,
            dec_snr_high_offset: 1.0,
            epochs: 1000,
            finetune: Some(FinetuneConfig {
                batch_size: 50_000,
                epochs: 10,
            }),
            seed: 0,
        }
    }

    /// Single-core profile for the (7,4)² desk model.
    pub fn desk() -> Self {
        Self {
            batch_size: 500,
            micro_batch_size: 500,
            t_enc: 10,
            t_dec: 50,
            lr_enc: 2e-4,
            lr_dec: 2e-4,
            gamma_db: 2.0,
            dec_snr_low_offset: -2.5,
            dec_snr_high_offset: 1.0,
            epochs: 60,
            finetune: None,
            seed: 1,
        }
    }

    /// `l`, the micro-batches per step.
    pub fn micro_batches(&self) -> usize {
        self.batch_size / self.micro_batch_size
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.batch_size == 0 || self.micro_batch_size == 0 {
            return fail("batch_size and micro_batch_size must be positive".into());
        }
        if self.batch_size % self.micro_batch_size != 0 {
            return fail(format!(
                "micro_batch_size {} must divide batch_size {}",
                self.micro_batch_size, self.batch_size
            ));
        }
        for (name, lr) in [("lr_enc", self.lr_enc), ("lr_dec", self.lr_dec)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return fail(format!("{name} must be positive, got {lr}"));
            }
        }
        if !self.gamma_db.is_finite() {
            return fail("gamma_db must be finite".into());
        }
        if self.dec_snr_low_offset.is_nan() || self.dec_snr_low_offset >= self.dec_snr_high_offset {
            return fail(format!(
                "decoder SNR range needs low < high, got [{}, {}]",
                self.dec_snr_low_offset, self.dec_snr_high_offset
            ));
        }
        if let Some(ft) = self.finetune {
            if ft.batch_size == 0 || ft.batch_size % self.micro_batch_size != 0 {
                return fail(format!(
                    "finetune batch_size {} must be a positive multiple of micro_batch_size {}",
                    ft.batch_size, self.micro_batch_size
                ));
            }
        }
        Ok(())
    }

    pub fn snr_policy(&self, role: Role) -> SnrPolicy {
        match role {
            Role::Encoder => SnrPolicy::Fixed(self.gamma_db),
            Role::Decoder => SnrPolicy::Uniform {
                low_db: self.gamma_db + self.dec_snr_low_offset,
                high_db: self.gamma_db + self.dec_snr_high_offset,
            },
        }
    }
}

/// How training SNRs are chosen for a batch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SnrPolicy {
    /// One SNR for every sample.
    Fixed(f64),
    /// One SNR per sample, uniform in dB.
    Uniform { low_db: f64, high_db: f64 },
}

impl SnrPolicy {
    pub fn sample<R: Rng>(&self, rng: &mut R, count: usize) -> Vec<f64> {
        match *self {
            SnrPolicy::Fixed(db) => vec![db; count],
            SnrPolicy::Uniform { low_db, high_db } => (0..count)
                .map(|_| rng.random_range(low_db..high_db))
                .collect(),
        }
    }
}

/// Messages, channel noise and the SNRs the noise was drawn at.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch<T> {
    /// `[B, k2, k1]` uniform random bits.
    pub messages: Tensor<T>,
    /// `[B, n2, n1]` noise, already scaled per sample.
    pub noise: Tensor<T>,
    pub snr_db: Vec<f64>,
}

impl<T: Real> Batch<T> {
    pub fn sample<R: Rng>(
        rng: &mut R,
        model: &ModelConfig,
        size: usize,
        policy: SnrPolicy,
    ) -> Result<Self> {
        let bits = (0..size * model.k())
            .map(|_| {
                if rng.random::<bool>() {
                    T::one()
                } else {
                    T::zero()
                }
            })
            .collect();
        let messages = Tensor::new([size, model.k2, model.k1], bits)?;
        let snr_db = policy.sample(rng, size);
        let sigmas: Vec<f64> = snr_db
            .iter()
            .map(|&s| sigma2_from_snr_db(s).sqrt())
            .collect();
        let noise = sample_noise(rng, &[size, model.n2, model.n1], &sigmas)?;
        Ok(Self {
            messages,
            noise,
            snr_db,
        })
    }

    pub fn len(&self) -> usize {
        self.snr_db.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snr_db.is_empty()
    }

    pub fn slice(&self, start: usize, len: usize) -> Result<Self> {
        Ok(Self {
            messages: self.messages.narrow_leading(start, len)?,
            noise: self.noise.narrow_leading(start, len)?,
            snr_db: self.snr_db[start..start + len].to_vec(),
        })
    }
}

/// Gradient of the mean loss over `batch` for `role`'s parameters, left in
/// their `grad` buffers. Other parameters are untouched. Returns the mean
/// loss.
pub fn accumulate_gradients<T: Real>(
    model: &mut ProductAe<T>,
    role: Role,
    batch: &Batch<T>,
    micro_batch_size: usize,
) -> Result<f64> {
    if micro_batch_size == 0 || batch.len() % micro_batch_size != 0 {
        return Err(Error::Config(format!(
            "micro-batch size {micro_batch_size} does not divide batch of {}",
            batch.len()
        )));
    }
    let parts = batch.len() / micro_batch_size;
    let scale = T::lit(1.0 / parts as f64);
    model.train_only(role);
    zero_grad(model.group_mut(role));
    let mut total = 0.0;
    for i in 0..parts {
        let micro = batch.slice(i * micro_batch_size, micro_batch_size)?;
        let mut tape = Tape::new();
        let (_, loss) = model.forward_loss(&mut tape, &micro.messages, &micro.noise)?;
        total += tape.value(loss).item().f64();
        let scaled = tape.scale(loss, scale);
        let grads = tape.backward(scaled)?;
        for p in model.group_mut(role) {
            p.accumulate(&grads);
        }
    }
    Ok(total / parts as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub epoch: usize,
    pub kind: String,
    pub mean_loss: f64,
    pub wall_ms: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub decoder_steps: usize,
    pub encoder_steps: usize,
    pub decoder_loss: Option<f64>,
    pub encoder_loss: Option<f64>,
    pub wall_ms: u64,
    /// Whether this epoch set a new best decoder loss.
    pub improved: bool,
}

impl EpochStats {
    /// Mean over every step of the epoch.
    pub fn mean_loss(&self) -> Option<f64> {
        let steps = self.decoder_steps + self.encoder_steps;
        if steps == 0 {
            return None;
        }
        let dec = self.decoder_loss.unwrap_or(0.0) * self.decoder_steps as f64;
        let enc = self.encoder_loss.unwrap_or(0.0) * self.encoder_steps as f64;
        Some((dec + enc) / steps as f64)
    }
}

pub struct Trainer<T> {
    pub model: ProductAe<T>,
    pub encoder_optimizer: Adam<T>,
    pub decoder_optimizer: Adam<T>,
    pub config: TrainingConfig,
    pub epoch: usize,
    pub best_loss: Option<f64>,
    rng: ChaCha8Rng,
    checkpoint_path: Option<PathBuf>,
    log: Vec<LogRecord>,
}

impl<T: Real> Trainer<T> {
    pub fn new(model: ProductAe<T>, config: TrainingConfig) -> Result<Self> {
        config.validate()?;
        let encoder_optimizer =
            Adam::new(AdamConfig::with_lr(config.lr_enc), model.encoder.params())?;
        let decoder_optimizer =
            Adam::new(AdamConfig::with_lr(config.lr_dec), model.decoder.params())?;
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(derive_seed(config.seed, TRAIN_STREAM)),
            model,
            encoder_optimizer,
            decoder_optimizer,
            config,
            epoch: 0,
            best_loss: None,
            checkpoint_path: None,
            log: Vec::new(),
        })
    }

    /// Resume from a checkpoint; the sampling stream restarts from the seed
    /// mixed with the stored epoch.
    pub fn from_checkpoint(ckpt: Checkpoint<T>, config: TrainingConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(derive_seed(
                config.seed ^ ckpt.epoch as u64,
                TRAIN_STREAM,
            )),
            model: ckpt.model,
            encoder_optimizer: ckpt.encoder_optimizer,
            decoder_optimizer: ckpt.decoder_optimizer,
            config,
            epoch: ckpt.epoch,
            best_loss: ckpt.best_loss,
            checkpoint_path: None,
            log: Vec::new(),
        })
    }

    /// Where the best model is written whenever the decoder loss improves.
    pub fn with_checkpoint_path(mut self, path: impl Into<PathBuf>) -> Self {
        self.checkpoint_path = Some(path.into());
        self
    }

    pub fn checkpoint_path(&self) -> Option<&Path> {
        self.checkpoint_path.as_deref()
    }

    pub fn log(&self) -> &[LogRecord] {
        &self.log
    }

    pub fn checkpoint(&self) -> Checkpoint<T> {
        Checkpoint {
            model: self.model.clone(),
            encoder_optimizer: self.encoder_optimizer.clone(),
            decoder_optimizer: self.decoder_optimizer.clone(),
            epoch: self.epoch,
            best_loss: self.best_loss,
        }
    }

    pub fn sample_batch(&mut self, role: Role, size: usize) -> Result<Batch<T>> {
        let policy = self.config.snr_policy(role);
        Batch::sample(&mut self.rng, self.model.config(), size, policy)
    }

    /// One optimizer step for `role` on a given batch.
    pub fn step_on_batch(&mut self, role: Role, batch: &Batch<T>) -> Result<f64> {
        let loss =
            accumulate_gradients(&mut self.model, role, batch, self.config.micro_batch_size)?;
        match role {
            Role::Encoder => self
                .encoder_optimizer
                .step(self.model.encoder.params_mut())?,
            Role::Decoder => self
                .decoder_optimizer
                .step(self.model.decoder.params_mut())?,
        }
        Ok(loss)
    }

    fn step(&mut self, role: Role, batch_size: usize) -> Result<f64> {
        let batch = self.sample_batch(role, batch_size)?;
        self.step_on_batch(role, &batch)
    }

    /// Decoder-only update on fresh data over the decoder SNR range.
    pub fn train_decoder_step(&mut self) -> Result<f64> {
        self.step(Role::Decoder, self.config.batch_size)
    }

    /// Encoder-only update on fresh data at `γ`.
    pub fn train_encoder_step(&mut self) -> Result<f64> {
        self.step(Role::Encoder, self.config.batch_size)
    }

    pub fn run_epoch(&mut self) -> Result<EpochStats> {
        self.run_epoch_with(self.config.batch_size, "")
    }

    fn run_epoch_with(&mut self, batch_size: usize, tag: &str) -> Result<EpochStats> {
        let start = Instant::now();
        self.epoch += 1;
        let phase = |this: &mut Self, role: Role, steps: usize| -> Result<(Option<f64>, u64)> {
            let t0 = Instant::now();
            let mut sum = 0.0;
            for _ in 0..steps {
                sum += this.step(role, batch_size)?;
            }
            let mean = (steps > 0).then(|| sum / steps as f64);
            let ms = t0.elapsed().as_millis() as u64;
            if let Some(mean_loss) = mean {
                this.log.push(LogRecord {
                    epoch: this.epoch,
                    kind: format!("{role}{tag}"),
                    mean_loss,
                    wall_ms: ms,
                });
            }
            Ok((mean, ms))
        };
        let (decoder_loss, _) = phase(self, Role::Decoder, self.config.t_dec)?;
        let (encoder_loss, _) = phase(self, Role::Encoder, self.config.t_enc)?;

        let improved = match (decoder_loss, self.best_loss) {
            (Some(loss), None) => loss.is_finite(),
            (Some(loss), Some(best)) => loss < best,
            (None, _) => false,
        };
        if improved {
            self.best_loss = decoder_loss;
            if let Some(path) = self.checkpoint_path.clone() {
                self.checkpoint().save(&path)?;
            }
        }
        Ok(EpochStats {
            epoch: self.epoch,
            decoder_steps: self.config.t_dec,
            encoder_steps: self.config.t_enc,
            decoder_loss,
            encoder_loss,
            wall_ms: start.elapsed().as_millis() as u64,
            improved,
        })
    }

    /// Run `config.epochs` epochs.
    pub fn train(&mut self, mut on_epoch: impl FnMut(&EpochStats)) -> Result<Vec<EpochStats>> {
        let mut all = Vec::with_capacity(self.config.epochs);
        for _ in 0..self.config.epochs {
            let stats = self.run_epoch()?;
            on_epoch(&stats);
            all.push(stats);
        }
        Ok(all)
    }

    /// Reload the best checkpoint and continue for the configured number of
    /// epochs with the large fine-tune batch, realized by gradient
    /// accumulation over micro-batches.
    pub fn large_batch_finetune(
        &mut self,
        mut on_epoch: impl FnMut(&EpochStats),
    ) -> Result<Vec<EpochStats>> {
        let Some(ft) = self.config.finetune else {
            return Ok(Vec::new());
        };
        let path = self
            .checkpoint_path
            .clone()
            .ok_or_else(|| Error::Config("fine-tuning needs a checkpoint path".into()))?;
        if !path.exists() {
            return Err(CheckpointError::Missing(path).into());
        }
        let best = Checkpoint::<T>::load(&path)?;
        self.model = best.model;
        self.encoder_optimizer = best.encoder_optimizer;
        self.decoder_optimizer = best.decoder_optimizer;
        self.epoch = best.epoch;
        self.best_loss = best.best_loss;
        self.rng = ChaCha8Rng::seed_from_u64(derive_seed(
            self.config.seed ^ self.epoch as u64,
            FINETUNE_STREAM,
        ));
        let mut all = Vec::with_capacity(ft.epochs);
        for _ in 0..ft.epochs {
            let stats = self.run_epoch_with(ft.batch_size, "_finetune")?;
            on_epoch(&stats);
            all.push(stats);
        }
        Ok(all)
    }

    pub fn write_log(&self, path: &Path) -> Result<()> {
        write_log(path, &self.log)
    }
}

pub fn write_log(path: &Path, records: &[LogRecord]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
