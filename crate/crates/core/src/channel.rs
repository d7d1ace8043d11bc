//! Real-valued AWGN channel with unit average symbol power.
//!
//! Codewords are normalized to `||c'||² = n`, so the channel SNR is
//! `1/σ²`, with σ² the noise variance per real coded symbol. `Eb/N0`
//! in dB is `SNR + 10 log10(1/R)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Added to the codeword norm before dividing.
pub const NORM_EPS: f64 = 1e-12;

/// Noise variance for an SNR in dB. `+inf` maps to a noiseless channel.
pub fn sigma2_from_snr_db(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

pub fn snr_db_from_sigma2(sigma2: f64) -> f64 {
    -10.0 * sigma2.log10()
}

fn check_rate(rate: f64) -> Result<()> {
    if rate > 0.0 && rate <= 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "code rate must lie in (0, 1], got {rate}"
        )))
    }
}

pub fn ebn0_db_from_snr_db(snr_db: f64, rate: f64) -> Result<f64> {
    check_rate(rate)?;
    Ok(snr_db + 10.0 * (1.0 / rate).log10())
}

pub fn snr_db_from_ebn0_db(ebn0_db: f64, rate: f64) -> Result<f64> {
    check_rate(rate)?;
    Ok(ebn0_db - 10.0 * (1.0 / rate).log10())
}

/// Gaussian tail probability `Q(x) = erfc(x / sqrt 2) / 2`.
pub fn q_function(x: f64) -> f64 {
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChannelParams {
    pub snr_db: f64,
    pub sigma2: f64,
    pub rate: f64,
    pub seed: u64,
}

impl ChannelParams {
    pub fn new(snr_db: f64, rate: f64, seed: u64) -> Result<Self> {
        check_rate(rate)?;
        if snr_db.is_nan() {
            return Err(Error::Config("SNR is NaN".into()));
        }
        Ok(Self {
            snr_db,
            sigma2: sigma2_from_snr_db(snr_db),
            rate,
            seed,
        })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma2.sqrt()
    }

    pub fn ebn0_db(&self) -> f64 {
        self.snr_db + 10.0 * (1.0 / self.rate).log10()
    }
}

/// `c' = sqrt(n) c / (||c|| + eps)` for every length-`n` codeword along the
/// last axis. Differentiable through the norm.
pub fn power_normalize<T: Real>(tape: &mut Tape<T>, c: Var) -> Result<Var> {
    let shape = tape.shape(c).to_vec();
    let n = *shape
        .last()
        .ok_or_else(|| Error::dim("power_normalize", "scalar input"))?;
    let axis = shape.len() - 1;
    let norm = tape.l2_norm(c, axis)?;
    let norm = tape.add_scalar(norm, T::lit(NORM_EPS));
    let inv = tape.recip(norm);
    let unit = if shape.len() == 1 {
        let inv = tape.reshape(inv, &[1])?;
        let row = tape.reshape(c, &[1, n])?;
        let scaled = tape.scale_by(row, inv)?;
        tape.reshape(scaled, &[n])?
    } else {
        tape.scale_by(c, inv)?
    };
    Ok(tape.scale(unit, T::lit((n as f64).sqrt())))
}

/// Value-only form of [`power_normalize`].
pub fn power_normalize_values<T: Real>(c: &Tensor<T>) -> Result<Tensor<T>> {
    let n = *c
        .shape()
        .last()
        .ok_or_else(|| Error::dim("power_normalize", "scalar input"))?;
    let root_n = T::lit((n as f64).sqrt());
    let eps = T::lit(NORM_EPS);
    let mut out = c.clone();
    for word in out.data_mut().chunks_mut(n) {
        let norm = word.iter().map(|&x| x * x).sum::<T>().sqrt();
        let k = root_n / (norm + eps);
        word.iter_mut().for_each(|x| *x *= k);
    }
    Ok(out)
}

/// Gaussian noise source with its own seeded stream.
#[derive(Clone, Debug)]
pub struct AwgnChannel {
    rng: ChaCha8Rng,
}

impl AwgnChannel {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent stream `stream` under `seed`, for parallel workers.
    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { rng }
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// Noise of `shape` where the block at leading index `b` has standard
    /// deviation `sigmas[b]`. A single sigma applies to the whole tensor.
    pub fn noise<T: Real>(&mut self, shape: &[usize], sigmas: &[f64]) -> Result<Tensor<T>> {
        sample_noise(&mut self.rng, shape, sigmas)
    }

    /// `y = c + n`; the noise enters the tape as a constant.
    pub fn add_noise<T: Real>(
        &mut self,
        tape: &mut Tape<T>,
        c: Var,
        params: &ChannelParams,
    ) -> Result<Var> {
        let shape = tape.shape(c).to_vec();
        let noise = self.noise(&shape, &[params.sigma()])?;
        let n = tape.constant(noise);
        tape.add(c, n)
    }
}

pub(crate) fn sample_noise<T: Real, R: rand::Rng>(
    rng: &mut R,
    shape: &[usize],
    sigmas: &[f64],
) -> Result<Tensor<T>> {
    let numel: usize = shape.iter().product();
    let blocks = match sigmas.len() {
        1 => 1,
        len if shape.first() == Some(&len) => len,
        len => {
            return Err(Error::dim(
                "add_noise",
                format!("{len} noise levels for a tensor of shape {shape:?}"),
            ))
        }
    };
    let per_block = numel / blocks;
    let mut data = Vec::with_capacity(numel);
    for &sigma in sigmas {
        for _ in 0..per_block {
            let z: f64 = StandardNormal.sample(rng);
            data.push(T::lit(sigma * z));
        }
    }
    Tensor::new(shape.to_vec(), data)
}
