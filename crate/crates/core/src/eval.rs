//! Monte-Carlo BER/BLER estimation.
//!
//! Blocks are simulated in batches. Batch `j` at an SNR point draws its
//! messages and noise from a generator seeded with `derive_seed(seed, j)`,
//! so every SNR point sees the same underlying standard-normal draws and
//! results do not depend on the worker count: workers evaluate batches in
//! rounds and the counts are merged in batch order, stopping at the first
//! batch after which the stop rule holds.
//!
//! The stop rule counts block errors. Stopping on an error count gives the
//! usual sequential-sampling estimator `errors / trials`, which is slightly
//! biased upwards at small counts; the counts actually used are reported
//! with every result. The confidence half-widths treat bits as independent,
//! which is exact for the uncoded link and an approximation for coded ones.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::channel::{ebn0_db_from_snr_db, q_function, sample_noise, sigma2_from_snr_db};
use crate::error::{Error, Result};
use crate::model::ProductAe;
use crate::real::Real;
use crate::rng::derive_seed;
use crate::tensor::Tensor;

/// Two-sided 95% standard-normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// An end-to-end link: encoder, AWGN channel and hard-decision decoder.
pub trait Link: Sync {
    /// Information bits per block.
    fn k(&self) -> usize;
    /// Real channel symbols per block.
    fn n(&self) -> usize;
    fn rate(&self) -> f64 {
        self.k() as f64 / self.n() as f64
    }
    /// Send `blocks` messages (`blocks * k` bits, block-major) with noise
    /// standard deviation `sigma`, drawing noise from `rng`, and return the
    /// decided bits in the same layout.
    fn transmit_blocks(
        &self,
        bits: &[bool],
        blocks: usize,
        sigma: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<bool>>;
}

impl<T: Real> Link for ProductAe<T> {
    fn k(&self) -> usize {
        self.config().k()
    }

    fn n(&self) -> usize {
        self.config().n()
    }

    fn rate(&self) -> f64 {
        ProductAe::rate(self)
    }

    fn transmit_blocks(
        &self,
        bits: &[bool],
        blocks: usize,
        sigma: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<bool>> {
        let cfg = self.config();
        let data = bits
            .iter()
            .map(|&b| if b { T::one() } else { T::zero() })
            .collect();
        let u = Tensor::new([blocks, cfg.k2, cfg.k1], data)?;
        let noise = sample_noise::<T, _>(rng, &[blocks, cfg.n2, cfg.n1], &[sigma])?;
        let mut tape = Tape::new();
        let u = tape.constant(u);
        let c = self.transmit(&mut tape, u)?;
        let noise = tape.constant(noise);
        let y = tape.add(c, noise)?;
        let logits = self.decoder.decode(&mut tape, y)?;
        Ok(tape
            .value(logits)
            .data()
            .iter()
            .map(|&z| z > T::zero())
            .collect())
    }
}

/// Uncoded antipodal signalling: bit `b` is sent as `2b - 1` and decided by
/// the sign of the received value.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct UncodedBpsk {
    pub block_len: usize,
}

impl UncodedBpsk {
    pub fn new(block_len: usize) -> Self {
        Self { block_len }
    }
}

impl Link for UncodedBpsk {
    fn k(&self) -> usize {
        self.block_len
    }

    fn n(&self) -> usize {
        self.block_len
    }

    fn transmit_blocks(
        &self,
        bits: &[bool],
        blocks: usize,
        sigma: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<bool>> {
        let noise: Tensor<f64> = sample_noise(rng, &[blocks * self.block_len], &[sigma])?;
        Ok(bits
            .iter()
            .zip(noise.data())
            .map(|(&b, &z)| (if b { 1.0 } else { -1.0 }) + z > 0.0)
            .collect())
    }
}

/// Analytic BER of [`UncodedBpsk`], `Q(sqrt(SNR))`.
pub fn uncoded_bpsk_ber(snr_db: f64) -> f64 {
    if snr_db == f64::INFINITY {
        return 0.0;
    }
    if snr_db == f64::NEG_INFINITY {
        return 0.5;
    }
    q_function(10f64.powf(snr_db / 10.0).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StopRule {
    /// Stop once this many blocks have erred...
    pub min_block_errors: u64,
    /// ...and at least this many bits.
    #[serde(default)]
    pub min_bit_errors: u64,
    /// Hard cap on simulated blocks.
    pub max_blocks: u64,
}

impl Default for StopRule {
    fn default() -> Self {
        Self {
            min_block_errors: 100,
            min_bit_errors: 0,
            max_blocks: 1_000_000,
        }
    }
}

impl StopRule {
    pub fn validate(&self) -> Result<()> {
        if self.min_block_errors == 0 || self.max_blocks == 0 {
            return Err(Error::Config(
                "min_block_errors and max_blocks must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalOptions {
    pub stop: StopRule,
    pub seed: u64,
    pub workers: usize,
    /// Blocks per batch.
    pub batch_blocks: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            stop: StopRule::default(),
            seed: 0,
            workers: 1,
            batch_blocks: 1000,
        }
    }
}

/// 95% binomial interval for `errors` out of `trials`: normal approximation,
/// or Wilson score when fewer than 30 errors were seen.
pub fn binomial_interval(errors: u64, trials: u64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = errors as f64 / n;
    let z2 = Z95 * Z95;
    if errors < 30 {
        let denom = 1.0 + z2 / n;
        let center = (p + z2 / (2.0 * n)) / denom;
        let half = Z95 * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
        let lo = if errors == 0 {
            0.0
        } else {
            (center - half).max(0.0)
        };
        let hi = if errors == trials {
            1.0
        } else {
            (center + half).min(1.0)
        };
        (lo, hi)
    } else {
        let half = Z95 * (p * (1.0 - p) / n).sqrt();
        ((p - half).max(0.0), (p + half).min(1.0))
    }
}

/// Half the width of [`binomial_interval`].
pub fn binomial_half_width(errors: u64, trials: u64) -> f64 {
    let (lo, hi) = binomial_interval(errors, trials);
    (hi - lo) / 2.0
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalResult {
    pub snr_db: f64,
    pub ebn0_db: f64,
    pub bits_sent: u64,
    pub bit_errors: u64,
    pub blocks_sent: u64,
    pub block_errors: u64,
    pub ber: f64,
    pub bler: f64,
    pub ber_ci: f64,
    pub bler_ci: f64,
}

impl EvalResult {
    fn from_counts(snr_db: f64, ebn0_db: f64, c: Counts) -> Self {
        let ratio = |e: u64, n: u64| if n == 0 { 0.0 } else { e as f64 / n as f64 };
        Self {
            snr_db,
            ebn0_db,
            bits_sent: c.bits,
            bit_errors: c.bit_errors,
            blocks_sent: c.blocks,
            block_errors: c.block_errors,
            ber: ratio(c.bit_errors, c.bits),
            bler: ratio(c.block_errors, c.blocks),
            ber_ci: binomial_half_width(c.bit_errors, c.bits),
            bler_ci: binomial_half_width(c.block_errors, c.blocks),
        }
    }

    pub fn ber_interval(&self) -> (f64, f64) {
        binomial_interval(self.bit_errors, self.bits_sent)
    }

    pub fn bler_interval(&self) -> (f64, f64) {
        binomial_interval(self.block_errors, self.blocks_sent)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
struct Counts {
    bits: u64,
    bit_errors: u64,
    blocks: u64,
    block_errors: u64,
}

impl Counts {
    fn merge(&mut self, o: Counts) {
        self.bits += o.bits;
        self.bit_errors += o.bit_errors;
        self.blocks += o.blocks;
        self.block_errors += o.block_errors;
    }

    fn done(&self, stop: &StopRule) -> bool {
        (self.block_errors >= stop.min_block_errors && self.bit_errors >= stop.min_bit_errors)
            || self.blocks >= stop.max_blocks
    }
}

fn run_batch<L: Link + ?Sized>(link: &L, sigma: f64, seed: u64, blocks: usize) -> Result<Counts> {
    let k = link.k();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bits: Vec<bool> = (0..blocks * k).map(|_| rng.random()).collect();
    let decided = link.transmit_blocks(&bits, blocks, sigma, &mut rng)?;
    if decided.len() != bits.len() {
        return Err(Error::Contract(format!(
            "link returned {} decisions for {} bits",
            decided.len(),
            bits.len()
        )));
    }
    let mut c = Counts {
        bits: bits.len() as u64,
        blocks: blocks as u64,
        ..Counts::default()
    };
    for (sent, got) in bits.chunks(k).zip(decided.chunks(k)) {
        let wrong = sent.iter().zip(got).filter(|(a, b)| a != b).count() as u64;
        c.bit_errors += wrong;
        c.block_errors += u64::from(wrong > 0);
    }
    Ok(c)
}

/// Estimate BER and BLER of `link` at one SNR.
pub fn monte_carlo_eval<L: Link + ?Sized>(
    link: &L,
    snr_db: f64,
    opts: &EvalOptions,
) -> Result<EvalResult> {
    opts.stop.validate()?;
    if opts.workers == 0 || opts.batch_blocks == 0 {
        return Err(Error::Config(
            "workers and batch_blocks must be positive".into(),
        ));
    }
    if snr_db.is_nan() {
        return Err(Error::Config("SNR is NaN".into()));
    }
    let ebn0_db = ebn0_db_from_snr_db(snr_db, link.rate())?;
    let sigma = sigma2_from_snr_db(snr_db).sqrt();
    let bb = opts.batch_blocks as u64;
    let total_batches = opts.stop.max_blocks.div_ceil(bb);
    let batch_size = |j: u64| bb.min(opts.stop.max_blocks - j * bb) as usize;

    let mut acc = Counts::default();
    let mut next = 0u64;
    'rounds: while next < total_batches {
        let round: Vec<u64> = (next..total_batches.min(next + opts.workers as u64)).collect();
        let results: Vec<Result<Counts>> = if round.len() == 1 {
            vec![run_batch(
                link,
                sigma,
                derive_seed(opts.seed, next),
                batch_size(next),
            )]
        } else {
            std::thread::scope(|s| {
                let handles: Vec<_> = round
                    .iter()
                    .map(|&j| {
                        s.spawn(move || {
                            run_batch(link, sigma, derive_seed(opts.seed, j), batch_size(j))
                        })
                    })
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().unwrap_or_else(|e| std::panic::resume_unwind(e)))
                    .collect()
            })
        };
        for r in results {
            acc.merge(r?);
            if acc.done(&opts.stop) {
                break 'rounds;
            }
        }
        next += round.len() as u64;
    }
    Ok(EvalResult::from_counts(snr_db, ebn0_db, acc))
}

/// [`monte_carlo_eval`] at every point of `snrs_db`, all under the same seed.
pub fn sweep<L: Link + ?Sized>(
    link: &L,
    snrs_db: &[f64],
    opts: &EvalOptions,
) -> Result<Vec<EvalResult>> {
    if snrs_db.is_empty() {
        return Err(Error::Config("empty SNR sweep".into()));
    }
    snrs_db
        .iter()
        .map(|&s| monte_carlo_eval(link, s, opts))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub snr_db: f64,
    pub ebn0_db: f64,
    pub ber: f64,
    pub bler: f64,
    pub ber_ci: f64,
    pub bler_ci: f64,
    pub bits: u64,
    pub blocks: u64,
}

impl From<&EvalResult> for CsvRow {
    fn from(r: &EvalResult) -> Self {
        Self {
            snr_db: r.snr_db,
            ebn0_db: r.ebn0_db,
            ber: r.ber,
            bler: r.bler,
            ber_ci: r.ber_ci,
            bler_ci: r.bler_ci,
            bits: r.bits_sent,
            blocks: r.blocks_sent,
        }
    }
}

pub fn write_csv<W: Write>(out: W, results: &[EvalResult]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in results {
        w.serialize(CsvRow::from(r))?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}

pub fn write_csv_file(path: &Path, results: &[EvalResult]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(std::io::BufWriter::new(file), results)
}
