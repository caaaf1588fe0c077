//! Command-line driver for `catalyst-core`: experiment configuration,
//! deterministic replication and result files.
//!
//! Every run writes its tables, a JSON summary and a `manifest.json` into
//! the output directory. Exit codes: 0 success, 2 configuration error,
//! 3 hard predicate failure, 4 reproducibility failure, 1 anything else.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod table;

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Parser;
use serde_json::{json, Value};

pub use commands::{Command, Context, Outcome};
pub use config::ExperimentConfig;
pub use error::{CliError, CliResult};
pub use manifest::RunManifest;
pub use table::{Cell, Format, Table};

const DEFAULT_OUT_DIR: &str = "catalyst-out";

#[derive(Parser, Debug, Clone)]
#[command(name = "catalyst", version, about = "Voter-catalyst Anderson model experiments")]
pub struct Cli {
    /// Master seed; required by every stochastic command.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads. Results do not depend on it.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// Encoding of the result tables.
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// Read the experiment from a TOML file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Manifest of an earlier run whose tables must be reproduced exactly.
    #[arg(long, global = true)]
    pub verify: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Option<Command>,
}

/// Result of a completed run.
#[derive(Clone, Debug)]
pub struct RunReport {
    pub manifest: RunManifest,
    /// Summary JSON, also written as `<experiment>.json`.
    pub summary: Value,
    pub outcome: Outcome,
    pub out_dir: PathBuf,
    pub format: Format,
}

impl RunReport {
    pub fn table_bytes(&self, name: &str) -> CliResult<Vec<u8>> {
        Ok(std::fs::read(self.out_dir.join(format!("{name}.{}", self.format.extension())))?)
    }
}

fn write(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

/// Runs one parsed invocation and writes its artifacts.
pub fn execute(cli: &Cli) -> CliResult<RunReport> {
    let command = cli.command.as_ref().ok_or_else(|| CliError::Config("no command given".into()))?;
    let stochastic = command.replicas().is_some();
    if stochastic && cli.seed.is_none() {
        return Err(CliError::Config(format!("`{}` needs --seed", command.name())));
    }
    if command.replicas() == Some(0) {
        return Err(CliError::Config("replicas must be at least 1".into()));
    }
    let workers = cli.workers.unwrap_or(1);
    if workers == 0 {
        return Err(CliError::Config("workers must be at least 1".into()));
    }
    let format = cli.format.unwrap_or(Format::Csv);
    let out_dir = cli.out_dir.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
    let ctx = Context { master_seed: cli.seed.unwrap_or(0), workers, out_dir: out_dir.clone(), format };

    // read before this run overwrites it
    let reference = cli.verify.as_deref().map(RunManifest::load).transpose()?;
    let hash = manifest::sha256_hex(format!("{command:?} seed={:?}", cli.seed).as_bytes());
    let mut manifest = RunManifest::new(command.name(), hash, cli.seed, command.replicas(), workers);
    let start = Instant::now();
    let outcome = command.run(&ctx)?;
    manifest.wall_time_seconds = start.elapsed().as_secs_f64();

    for t in &outcome.tables {
        let bytes = t.encode(format)?;
        let name = format!("{}.{}", t.name, format.extension());
        write(&out_dir.join(&name), &bytes)?;
        manifest.artifacts.push(manifest::Artifact { path: name, bytes: bytes.len(), sha256: manifest::sha256_hex(&bytes) });
    }
    manifest.warnings = outcome.warnings.counts.clone();
    manifest.warning_details = outcome.warnings.details.clone();
    let mut failed_hard = Vec::new();
    for p in &outcome.predicates {
        match (p.passed, p.hard) {
            (true, _) => manifest.predicates.passed += 1,
            (false, false) => manifest.predicates.failed_soft += 1,
            (false, true) => {
                manifest.predicates.failed_hard += 1;
                failed_hard.push(format!("{} ({})", p.name, p.detail));
            }
        }
    }
    let summary = json!({
        "experiment": command.name(),
        "result": outcome.summary,
        "predicates": outcome.predicates,
        "warnings": outcome.warnings.counts,
    });
    let mut text = serde_json::to_vec_pretty(&summary).map_err(catalyst_core::Error::from)?;
    text.push(b'\n');
    write(&out_dir.join(format!("{}.json", command.name())), &text)?;
    let mut mtext = serde_json::to_vec_pretty(&manifest).map_err(catalyst_core::Error::from)?;
    mtext.push(b'\n');
    write(&out_dir.join("manifest.json"), &mtext)?;

    if let Some(reference) = &reference {
        manifest.verify_against(reference)?;
    }
    if !failed_hard.is_empty() {
        return Err(CliError::HardPredicate(failed_hard));
    }
    Ok(RunReport { manifest, summary, outcome, out_dir, format })
}

fn parse_args<I, T>(args: I) -> CliResult<Cli>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    Cli::try_parse_from(args).map_err(|e| CliError::Config(e.to_string()))
}

/// Dispatches a configuration to its subcommand.
pub fn run_experiment(cfg: &ExperimentConfig) -> CliResult<RunReport> {
    cfg.validate()?;
    let cli = parse_args(cfg.to_args()?)?;
    execute(&cli)
}

fn run_cli(cli: Cli) -> CliResult<RunReport> {
    let Some(path) = &cli.config else {
        return execute(&cli);
    };
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(c) = &cli.command {
        if c.name() != cfg.experiment {
            return Err(CliError::Config(format!("{} describes `{}`, not `{}`", path.display(), cfg.experiment, c.name())));
        }
    }
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    if cli.seed.is_some() {
        cfg.master_seed = cli.seed;
    }
    if cli.out_dir.is_some() {
        cfg.out_dir = cli.out_dir.clone();
    }
    if cli.format.is_some() {
        cfg.format = cli.format;
    }
    if cli.verify.is_some() {
        cfg.verify = cli.verify.clone();
    }
    run_experiment(&cfg)
}

/// Entry point of the binary; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run_cli(cli) {
        Ok(report) => {
            println!("{}", serde_json::to_string_pretty(&report.summary["result"]).unwrap_or_default());
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp(name: &str) -> PathBuf {
        let d = std::env::temp_dir().join(format!("catalyst-cli-{}-{name}", std::process::id()));
        let _ = std::fs::remove_dir_all(&d);
        d
    }

    #[test]
    fn missing_seed_is_a_config_error() {
        let cli = parse_args(["catalyst", "moment"]).unwrap();
        let e = execute(&cli).unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn unknown_flag_is_a_config_error() {
        let code = main_with_args(["catalyst", "--seed", "1", "moment", "--bogus", "3"]);
        assert_eq!(code, 2);
    }

    #[test]
    fn moment_writes_tables_and_manifest() {
        let dir = tmp("moment");
        let cfg = ExperimentConfig {
            master_seed: Some(5),
            replicas: Some(300),
            out_dir: Some(dir.clone()),
            ..ExperimentConfig::new("moment")
        }
        .with_param("p", 2)
        .with_param("emit_csv", true);
        let r = run_experiment(&cfg).unwrap();
        assert_eq!(r.manifest.artifacts.len(), 2);
        assert_eq!(r.manifest.predicates.failed_hard, 0);
        let weights = Table::from_csv("weights", &r.table_bytes("weights").unwrap()).unwrap();
        assert_eq!(weights.len(), 300);
        assert!(dir.join("manifest.json").exists());
        assert!(dir.join("moment.json").exists());

        let again = ExperimentConfig { workers: 3, verify: Some(dir.join("manifest.json")), ..cfg.clone() };
        let r2 = run_experiment(&again).unwrap();
        assert_eq!(r.table_bytes("moments").unwrap(), r2.table_bytes("moments").unwrap());

        let other = ExperimentConfig { master_seed: Some(6), ..again };
        assert_eq!(run_experiment(&other).unwrap_err().exit_code(), 4);
        let _ = std::fs::remove_dir_all(&dir);
    }

    #[test]
    fn greens_in_low_dimension() {
        let dir = tmp("greens");
        let cli = parse_args(["catalyst", "--out-dir", dir.to_str().unwrap(), "greens", "--dim", "3"]).unwrap();
        let r = execute(&cli).unwrap();
        assert!(r.summary["result"]["g_star"].is_null());
        assert!((r.summary["result"]["g"].as_f64().unwrap() - 1.516386).abs() < 1e-4);
        let cli = parse_args(["catalyst", "--out-dir", dir.to_str().unwrap(), "greens", "--dim", "2"]).unwrap();
        assert_eq!(execute(&cli).unwrap_err().exit_code(), 2);
        let _ = std::fs::remove_dir_all(&dir);
    }

    #[test]
    fn config_file_must_match_subcommand() {
        let dir = tmp("cfg");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("c.toml");
        std::fs::write(&path, "experiment = \"polaron\"\n[params]\nn = 33\nR = 10.0\niters = 5\n").unwrap();
        let p = path.to_str().unwrap();
        let code = main_with_args(["catalyst", "--config", p, "moment"]);
        assert_eq!(code, 2);
        let out = dir.join("out");
        let code = main_with_args(["catalyst", "--config", p, "--out-dir", out.to_str().unwrap()]);
        assert_eq!(code, 0);
        assert!(out.join("polaron_profile.csv").exists());
        let _ = std::fs::remove_dir_all(&dir);
    }
}
