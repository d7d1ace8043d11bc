use std::path::Path;
use std::process::{Command, Output};

use productae_cli::config::RunConfig;
use productae_cli::parse_points;

fn productae(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_productae"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// A run small enough to train in a debug build.
fn tiny_config(dir: &Path, epochs: usize) -> std::path::PathBuf {
    let mut cfg = RunConfig::preset("desk").unwrap();
    cfg.precision = productae_cli::config::Precision::F64;
    cfg.seed = 9;
    cfg.model = productae::gradcheck::tiny_model_config();
    cfg.training.batch_size = 16;
    cfg.training.micro_batch_size = 8;
    cfg.training.t_enc = 1;
    cfg.training.t_dec = 2;
    cfg.training.epochs = epochs;
    cfg.eval.ebn0_db = vec![];
    cfg.eval.snr_db = vec![0.0, 2.0];
    cfg.eval.min_block_errors = 5;
    cfg.eval.max_blocks = 2000;
    cfg.eval.batch_blocks = 500;
    cfg.paths.checkpoint_dir = dir.join("run");
    cfg.paths.results_csv = dir.join("run/ber.csv");
    let path = dir.join("tiny.toml");
    std::fs::write(&path, cfg.to_toml()).unwrap();
    path
}

#[test]
fn point_lists() {
    assert_eq!(
        parse_points("0:6:1").unwrap(),
        vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0]
    );
    assert_eq!(parse_points("0:1:0.1").unwrap().len(), 11);
    assert_eq!(parse_points("-1,2.5, 4").unwrap(), vec![-1.0, 2.5, 4.0]);
    assert!(parse_points("").unwrap().is_empty());
    for bad in ["0:6:0", "6:0:1", "a,b", "0:1", "0:1:2:3"] {
        assert_eq!(parse_points(bad).unwrap_err().code, 2, "{bad}");
    }
}

#[test]
fn help_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    for args in [&["--help"][..], &["train", "--help"], &["eval", "--help"]] {
        let o = productae(args, dir.path());
        assert_eq!(o.status.code(), Some(0));
        assert!(stdout(&o).contains("Usage"));
    }
    assert_eq!(
        productae(&["frobnicate"], dir.path()).status.code(),
        Some(2)
    );
    assert_eq!(productae(&[], dir.path()).status.code(), Some(2));
}

#[test]
fn zero_epochs_writes_initial_checkpoint_then_eval() {
    let dir = tempfile::tempdir().unwrap();
    let o = productae(
        &[
            "train", "--preset", "desk", "--epochs", "0", "--out", "init",
        ],
        dir.path(),
    );
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let ckpt = dir.path().join("init/model.pae");
    assert!(ckpt.exists());
    assert!(!dir.path().join("init/train_log.csv").exists());
    let header = productae::checkpoint::read_header(&ckpt).unwrap();
    assert_eq!(header.dtype, "f32");
    assert_eq!(header.model, productae::ModelConfig::desk());

    let ck = ckpt.to_str().unwrap();
    let stop = [
        "--min-block-errors",
        "3",
        "--max-blocks",
        "1000",
        "--batch-blocks",
        "200",
    ];

    let mut args = vec!["eval", "--checkpoint", ck, "--snr", "0:6:1"];
    args.extend(stop);
    let o = productae(&args, dir.path());
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let mut rdr = csv::Reader::from_reader(o.stdout.as_slice());
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 7);
    assert_eq!(&rows[3][0], "3.0");

    let mut args = vec![
        "eval",
        "--checkpoint",
        ck,
        "--ebn0",
        "6",
        "--rate-from-checkpoint",
        "--out",
        "pt.csv",
    ];
    args.extend(stop);
    let o = productae(&args, dir.path());
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let mut rdr = csv::Reader::from_path(dir.path().join("pt.csv")).unwrap();
    let headers = rdr.headers().unwrap().clone();
    assert_eq!(&headers[0], "snr_db");
    assert_eq!(&headers[1], "ebn0_db");
    let row = rdr.records().next().unwrap().unwrap();
    let snr: f64 = row[0].parse().unwrap();
    let ebn0: f64 = row[1].parse().unwrap();
    assert!((ebn0 - 6.0).abs() < 1e-12);
    assert!((snr - (6.0 + 10.0 * (16.0f64 / 49.0).log10())).abs() < 1e-12);

    let o = productae(&["eval", "--checkpoint", ck, "--ebn0", "6"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let o = productae(&["eval", "--checkpoint", ck, "--snr", ","], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("empty sweep"));
}

#[test]
fn bad_checkpoints_exit_four() {
    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.pae");
    std::fs::write(&junk, b"definitely not a checkpoint").unwrap();
    let o = productae(
        &["eval", "--checkpoint", junk.to_str().unwrap(), "--snr", "1"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(4));

    let o = productae(
        &["train", "--preset", "desk", "--epochs", "0", "--out", "r"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0));
    let good = std::fs::read(dir.path().join("r/model.pae")).unwrap();
    let cut = dir.path().join("cut.pae");
    std::fs::write(&cut, &good[..good.len() / 2]).unwrap();
    let o = productae(
        &["eval", "--checkpoint", cut.to_str().unwrap(), "--snr", "1"],
        dir.path(),
    );
    assert_eq!(
        o.status.code(),
        Some(4),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );

    let missing = productae(
        &["eval", "--checkpoint", "nope.pae", "--snr", "1"],
        dir.path(),
    );
    assert_eq!(missing.status.code(), Some(3));
}

fn log_without_wall_time(path: &Path) -> Vec<Vec<String>> {
    let mut rdr = csv::Reader::from_path(path).unwrap();
    let headers = rdr.headers().unwrap().clone();
    let wall = headers.iter().position(|h| h == "wall_ms").unwrap();
    rdr.records()
        .map(|r| {
            r.unwrap()
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != wall)
                .map(|(_, f)| f.to_string())
                .collect()
        })
        .collect()
}

#[test]
fn seeded_training_runs_reproduce_the_log() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), 3);
    let cfg = cfg.to_str().unwrap();
    let mut logs = Vec::new();
    for out in ["a", "b"] {
        let o = productae(
            &["train", "--config", cfg, "--out", out, "--quiet"],
            dir.path(),
        );
        assert_eq!(
            o.status.code(),
            Some(0),
            "{}",
            String::from_utf8_lossy(&o.stderr)
        );
        assert!(dir.path().join(out).join("best.pae").exists());
        logs.push(log_without_wall_time(
            &dir.path().join(out).join("train_log.csv"),
        ));
    }
    assert_eq!(logs[0].len(), 6);
    assert_eq!(logs[0], logs[1]);

    let o = productae(
        &[
            "train", "--config", cfg, "--out", "c", "--seed", "10", "--quiet",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0));
    assert_ne!(
        logs[0],
        log_without_wall_time(&dir.path().join("c/train_log.csv"))
    );
}

#[test]
fn sweep_uses_the_config_points() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), 1);
    let cfg = cfg.to_str().unwrap();
    let o = productae(&["train", "--config", cfg, "--quiet"], dir.path());
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let o = productae(&["sweep", "--config", cfg], dir.path());
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let mut rdr = csv::Reader::from_path(dir.path().join("run/ber.csv")).unwrap();
    let snrs: Vec<f64> = rdr
        .records()
        .map(|r| r.unwrap()[0].parse().unwrap())
        .collect();
    assert_eq!(snrs, vec![0.0, 2.0]);
}

#[test]
fn gradcheck_and_oracle_pass() {
    let dir = tempfile::tempdir().unwrap();
    let o = productae(
        &["gradcheck", "--samples", "64", "--trials", "5"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let text = stdout(&o);
    assert!(text.contains("end-to-end"));
    assert!(!text.contains("FAIL"));

    let o = productae(&["oracle"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.contains("SPC(3,2)^2: n=9 k=4"));
    assert!(text.contains("d=4"));
    assert!(text.contains("d=9"));
    assert!(!text.contains("FAIL"));
}
