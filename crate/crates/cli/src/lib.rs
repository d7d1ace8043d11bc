//! The `productae` command-line tool.
//!
//! Exit codes: 0 success, 1 a verification threshold failed, 2 usage or
//! configuration error, 3 I/O error, 4 unreadable or invalid checkpoint.

use std::ffi::OsString;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use productae::checkpoint::{read_header, Checkpoint};
use productae::classical::{verify_product, LinearCode};
use productae::eval::{sweep, write_csv, write_csv_file, EvalOptions, EvalResult, StopRule};
use productae::gradcheck::{check_model, check_ops, tiny_model_config};
use productae::{snr_db_from_ebn0_db, CheckpointError, Error, ProductAe, Real, Trainer};

pub mod config;

use config::{Precision, RunConfig, PRESETS};

pub const EXIT_THRESHOLD: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_CHECKPOINT: i32 = 4;

/// Largest relative error accepted per tape operation.
pub const OP_TOLERANCE: f64 = 1e-4;
/// Largest relative error accepted end to end.
pub const MODEL_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_IO,
            message: message.into(),
        }
    }

    pub fn threshold(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_THRESHOLD,
            message: message.into(),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config(_) => EXIT_USAGE,
            Error::Io { .. } | Error::Csv(_) => EXIT_IO,
            Error::Checkpoint(CheckpointError::Missing(_)) => EXIT_IO,
            Error::Checkpoint(_) => EXIT_CHECKPOINT,
            Error::Dimension { .. } | Error::Contract(_) => EXIT_THRESHOLD,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

type CmdResult = Result<(), Failure>;

#[derive(Debug, Parser)]
#[command(
    name = "productae",
    version,
    about = "Train and evaluate neural product codes over AWGN"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model from a run configuration.
    Train(TrainArgs),
    /// Measure BER/BLER of a checkpoint over a list of SNR or Eb/N0 points.
    Eval(EvalArgs),
    /// Evaluate the points listed in a run configuration.
    Sweep(SweepArgs),
    /// Finite-difference check of every gradient on a tiny model.
    Gradcheck(GradcheckArgs),
    /// Exhaustive checks of small classical product codes.
    Oracle,
}

#[derive(Debug, Args)]
pub struct ConfigSource {
    /// Run configuration file (TOML).
    #[arg(long, required_unless_present = "preset", conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    /// Built-in configuration: productae-15-10, productae-21-14 or desk.
    #[arg(long)]
    pub preset: Option<String>,
}

impl ConfigSource {
    fn load(&self) -> Result<RunConfig, Failure> {
        match (&self.config, &self.preset) {
            (Some(path), _) => RunConfig::load(path),
            (None, Some(name)) => RunConfig::preset(name).ok_or_else(|| {
                Failure::usage(format!(
                    "unknown preset {name:?}; available: {}",
                    PRESETS.join(", ")
                ))
            }),
            (None, None) => Err(Failure::usage("either --config or --preset is required")),
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub source: ConfigSource,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override the number of epochs; 0 writes the initial checkpoint only.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Output directory, overriding `paths.checkpoint_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Suppress per-epoch progress lines.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct StopArgs {
    #[arg(long, default_value_t = 100)]
    pub min_block_errors: u64,
    #[arg(long, default_value_t = 1_000_000)]
    pub max_blocks: u64,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    #[arg(long, default_value_t = 1000)]
    pub batch_blocks: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Channel SNR points in dB: `a:b:step` or a comma-separated list.
    #[arg(long, allow_hyphen_values = true)]
    pub snr: Option<String>,
    /// Eb/N0 points in dB, converted to SNR with the code rate.
    #[arg(long, allow_hyphen_values = true)]
    pub ebn0: Option<String>,
    /// Take the rate for `--ebn0` from the checkpoint.
    #[arg(long)]
    pub rate_from_checkpoint: bool,
    /// Explicit rate for `--ebn0`.
    #[arg(long, conflicts_with = "rate_from_checkpoint")]
    pub rate: Option<f64>,
    #[command(flatten)]
    pub stop: StopArgs,
    /// CSV output file; printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub source: ConfigSource,
    /// Checkpoint to evaluate; defaults to the best checkpoint of the run.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub min_block_errors: Option<u64>,
    #[arg(long)]
    pub max_blocks: Option<u64>,
    /// CSV output file, overriding `paths.results_csv`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Parameters sampled in the end-to-end check.
    #[arg(long, default_value_t = 256)]
    pub samples: usize,
    /// Random draws per operation.
    #[arg(long, default_value_t = 30)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Parse arguments and run; returns the process exit code.
pub fn run<I, S>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 {
                out.write_all(text.as_bytes())
            } else {
                err.write_all(text.as_bytes())
            };
            return code;
        }
    };
    let result = match cli.command {
        Command::Train(a) => cmd_train(&a, out),
        Command::Eval(a) => cmd_eval(&a, out),
        Command::Sweep(a) => cmd_sweep(&a, out),
        Command::Gradcheck(a) => cmd_gradcheck(&a, out),
        Command::Oracle => cmd_oracle(out),
    };
    match result {
        Ok(()) => 0,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}

fn io_err(e: std::io::Error) -> Failure {
    Failure::io(e.to_string())
}

/// `a:b:step` (inclusive of `b` up to rounding) or `x,y,z`.
pub fn parse_points(list: &str) -> Result<Vec<f64>, Failure> {
    let bad = |what: &str| Failure::usage(format!("invalid point list {list:?}: {what}"));
    let num = |s: &str| {
        s.trim()
            .parse::<f64>()
            .map_err(|_| bad(&format!("{s:?} is not a number")))
    };
    let parts: Vec<&str> = list.split(':').collect();
    let points = match parts.as_slice() {
        [a, b, step] => {
            let (a, b, step) = (num(a)?, num(b)?, num(step)?);
            if step.is_nan() || step <= 0.0 || !a.is_finite() || !b.is_finite() {
                return Err(bad("step must be positive and bounds finite"));
            }
            if b < a {
                return Err(bad("end is below start"));
            }
            let count = ((b - a) / step + 1e-9).floor() as usize + 1;
            (0..count).map(|i| a + i as f64 * step).collect()
        }
        [_] => list
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(num)
            .collect::<Result<Vec<_>, _>>()?,
        _ => return Err(bad("expected a:b:step or a comma-separated list")),
    };
    if points.iter().any(|p| p.is_nan()) {
        return Err(bad("NaN point"));
    }
    Ok(points)
}

fn cmd_train(args: &TrainArgs, out: &mut dyn Write) -> CmdResult {
    let mut cfg = args.source.load()?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(epochs) = args.epochs {
        cfg.training.epochs = epochs;
    }
    if let Some(dir) = &args.out {
        cfg.paths.checkpoint_dir = dir.clone();
    }
    cfg.validate()?;
    match cfg.precision {
        Precision::F32 => train_with::<f32>(&cfg, args.quiet, out),
        Precision::F64 => train_with::<f64>(&cfg, args.quiet, out),
    }
}

fn train_with<T: Real>(cfg: &RunConfig, quiet: bool, out: &mut dyn Write) -> CmdResult {
    let dir = &cfg.paths.checkpoint_dir;
    std::fs::create_dir_all(dir).map_err(|e| Failure::io(format!("{}: {e}", dir.display())))?;
    let model = ProductAe::<T>::new(cfg.model, cfg.seed)?;
    let training = cfg.training();
    let mut trainer =
        Trainer::new(model, training.clone())?.with_checkpoint_path(dir.join("best.pae"));
    writeln!(
        out,
        "training ({},{})x({},{}) R={:.4} for {} epochs, seed {}",
        cfg.model.n1,
        cfg.model.k1,
        cfg.model.n2,
        cfg.model.k2,
        cfg.model.rate(),
        training.epochs,
        cfg.seed
    )
    .map_err(io_err)?;

    let mut lines = Vec::new();
    let mut report = |s: &productae::train::EpochStats| {
        if !quiet {
            lines.push(format!(
                "epoch {:>4}  decoder {:.5}  encoder {:.5}  {} ms{}",
                s.epoch,
                s.decoder_loss.unwrap_or(f64::NAN),
                s.encoder_loss.unwrap_or(f64::NAN),
                s.wall_ms,
                if s.improved { "  *" } else { "" }
            ));
        }
    };
    trainer.train(&mut report)?;
    if training.epochs > 0 && training.finetune.is_some() {
        trainer.large_batch_finetune(&mut report)?;
    }
    for l in lines {
        writeln!(out, "{l}").map_err(io_err)?;
    }
    let final_path = dir.join("model.pae");
    trainer.checkpoint().save(&final_path)?;
    if !trainer.log().is_empty() {
        trainer.write_log(&dir.join("train_log.csv"))?;
    }
    writeln!(out, "wrote {}", final_path.display()).map_err(io_err)?;
    Ok(())
}

fn snr_points(args: &EvalArgs, rate: f64) -> Result<Vec<f64>, Failure> {
    let mut points = Vec::new();
    if let Some(list) = &args.snr {
        points.extend(parse_points(list)?);
    }
    if let Some(list) = &args.ebn0 {
        let rate = match (args.rate, args.rate_from_checkpoint) {
            (Some(r), _) => r,
            (None, true) => rate,
            (None, false) => {
                return Err(Failure::usage(
                    "--ebn0 needs --rate-from-checkpoint or --rate",
                ));
            }
        };
        for e in parse_points(list)? {
            points.push(snr_db_from_ebn0_db(e, rate)?);
        }
    }
    if points.is_empty() {
        return Err(Failure::usage(
            "empty sweep: give --snr and/or --ebn0 points",
        ));
    }
    Ok(points)
}

fn eval_checkpoint(
    path: &Path,
    snrs: &[f64],
    opts: &EvalOptions,
) -> Result<Vec<EvalResult>, Failure> {
    let header = read_header(path)?;
    match header.dtype.as_str() {
        "f32" => Ok(sweep(&Checkpoint::<f32>::load(path)?.model, snrs, opts)?),
        "f64" => Ok(sweep(&Checkpoint::<f64>::load(path)?.model, snrs, opts)?),
        other => Err(Failure {
            code: EXIT_CHECKPOINT,
            message: format!("{}: unsupported dtype {other:?}", path.display()),
        }),
    }
}

fn print_results(out: &mut dyn Write, rows: &[EvalResult]) -> CmdResult {
    writeln!(
        out,
        "{:>9} {:>9} {:>12} {:>12} {:>12} {:>10}",
        "snr_db", "ebn0_db", "ber", "bler", "bits", "blocks"
    )
    .map_err(io_err)?;
    for r in rows {
        writeln!(
            out,
            "{:>9.3} {:>9.3} {:>12.4e} {:>12.4e} {:>12} {:>10}",
            r.snr_db, r.ebn0_db, r.ber, r.bler, r.bits_sent, r.blocks_sent
        )
        .map_err(io_err)?;
    }
    Ok(())
}

fn cmd_eval(args: &EvalArgs, out: &mut dyn Write) -> CmdResult {
    let header = read_header(&args.checkpoint)?;
    let snrs = snr_points(args, header.model.rate())?;
    let opts = EvalOptions {
        stop: StopRule {
            min_block_errors: args.stop.min_block_errors,
            min_bit_errors: 0,
            max_blocks: args.stop.max_blocks,
        },
        seed: args.stop.seed,
        workers: args.stop.workers,
        batch_blocks: args.stop.batch_blocks,
    };
    let rows = eval_checkpoint(&args.checkpoint, &snrs, &opts)?;
    match &args.out {
        Some(path) => {
            write_csv_file(path, &rows)?;
            print_results(out, &rows)?;
            writeln!(out, "wrote {}", path.display()).map_err(io_err)
        }
        None => write_csv(out, &rows).map_err(Failure::from),
    }
}

fn cmd_sweep(args: &SweepArgs, out: &mut dyn Write) -> CmdResult {
    let cfg = args.source.load()?;
    let ckpt = match &args.checkpoint {
        Some(p) => p.clone(),
        None => {
            let best = cfg.paths.checkpoint_dir.join("best.pae");
            if best.exists() {
                best
            } else {
                cfg.paths.checkpoint_dir.join("model.pae")
            }
        }
    };
    let header = read_header(&ckpt)?;
    let mut snrs = cfg.eval.snr_db.clone();
    for &e in &cfg.eval.ebn0_db {
        snrs.push(snr_db_from_ebn0_db(e, header.model.rate())?);
    }
    if snrs.is_empty() {
        return Err(Failure::usage(
            "empty sweep: [eval] lists no snr_db or ebn0_db points",
        ));
    }
    let mut stop = cfg.eval.stop_rule();
    if let Some(m) = args.min_block_errors {
        stop.min_block_errors = m;
    }
    if let Some(m) = args.max_blocks {
        stop.max_blocks = m;
    }
    let opts = EvalOptions {
        stop,
        seed: args.seed.unwrap_or(cfg.seed),
        workers: args.workers.unwrap_or(cfg.eval.workers),
        batch_blocks: cfg.eval.batch_blocks,
    };
    let rows = eval_checkpoint(&ckpt, &snrs, &opts)?;
    let path = args.out.clone().unwrap_or(cfg.paths.results_csv.clone());
    write_csv_file(&path, &rows)?;
    print_results(out, &rows)?;
    writeln!(out, "wrote {}", path.display()).map_err(io_err)
}

fn cmd_gradcheck(args: &GradcheckArgs, out: &mut dyn Write) -> CmdResult {
    if args.samples == 0 || args.trials == 0 {
        return Err(Failure::usage("--samples and --trials must be positive"));
    }
    let mut failed = Vec::new();
    let ops = check_ops(args.trials, args.seed)?;
    for r in &ops {
        let ok = r.max_rel_err < OP_TOLERANCE;
        writeln!(
            out,
            "{:<18} {:>6} checks  max rel err {:.3e}  {}",
            r.name,
            r.checked,
            r.max_rel_err,
            verdict(ok)
        )
        .map_err(io_err)?;
        if !ok {
            failed.push(format!("{} ({:.3e} at {})", r.name, r.max_rel_err, r.worst));
        }
    }
    let m = check_model(&tiny_model_config(), args.samples, args.seed)?;
    let ok = m.max_rel_err < MODEL_TOLERANCE;
    writeln!(
        out,
        "{:<18} {:>6} params  max rel err {:.3e}  {}",
        "end-to-end",
        m.checked,
        m.max_rel_err,
        verdict(ok)
    )
    .map_err(io_err)?;
    if !ok {
        failed.push(format!("end-to-end ({:.3e} at {})", m.max_rel_err, m.worst));
    }
    let worst = ops
        .iter()
        .map(|r| r.max_rel_err)
        .fold(m.max_rel_err, f64::max);
    writeln!(out, "max relative error {worst:.3e}").map_err(io_err)?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::threshold(format!(
            "gradient check failed: {}",
            failed.join(", ")
        )))
    }
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

fn cmd_oracle(out: &mut dyn Write) -> CmdResult {
    let spc = LinearCode::single_parity_check(3)?;
    let ham = LinearCode::hamming_7_4();
    let mut failed = Vec::new();
    for (name, c) in [("SPC(3,2)^2", &spc), ("Hamming(7,4)^2", &ham)] {
        let r = verify_product(c, c)?;
        let [d1, _, d] = r.distances;
        writeln!(
            out,
            "{name}: n={} k={} R={:.4} d={d} (component d={d1}), {} messages, params {}, kronecker {}, commutative {}  {}",
            r.params.n(),
            r.params.k(),
            r.params.rate(),
            r.messages,
            verdict(r.params_ok),
            verdict(r.kronecker_ok),
            verdict(r.commutes),
            verdict(r.passed())
        )
        .map_err(io_err)?;
        if !r.passed() {
            failed.push(name);
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::threshold(format!(
            "oracle failed: {}",
            failed.join(", ")
        )))
    }
}
