//! Experiment configuration files.
//!
//! A file names one subcommand and gives its flags as flat keys:
//!
//! ```toml
//! experiment = "lyapunov-scan"
//! master_seed = 42
//! replicas = 20000
//!
//! [params]
//! mode = "dual"
//! dim = 5
//! kappas = [0.0, 1.0]
//! t_grid = [1.0, 2.0, 4.0]
//! ```
//!
//! Each `params` key becomes `--key` (underscores turned into dashes), an
//! array becomes a comma-separated list and `true` a bare switch.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::Value;

use crate::error::{CliError, CliResult};
use crate::table::Format;

pub const EXPERIMENTS: &[&str] = &[
    "greens",
    "voter-occupation",
    "voter-persistence",
    "duality-check",
    "moment",
    "lyapunov-scan",
    "dichotomy",
    "polaron",
    "conjecture",
    "block-check",
];

/// Experiments that draw random numbers and therefore need a seed.
pub const STOCHASTIC: &[&str] =
    &["voter-occupation", "voter-persistence", "duality-check", "moment", "lyapunov-scan", "dichotomy", "block-check"];

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: String,
    pub master_seed: Option<u64>,
    pub replicas: Option<usize>,
    #[serde(default = "one")]
    pub workers: usize,
    pub out_dir: Option<PathBuf>,
    pub format: Option<Format>,
    /// Previous manifest whose artifact checksums must be reproduced.
    pub verify: Option<PathBuf>,
    #[serde(default)]
    pub params: toml::Table,
}

impl ExperimentConfig {
    pub fn new(experiment: &str) -> Self {
        ExperimentConfig {
            experiment: experiment.into(),
            master_seed: None,
            replicas: None,
            workers: 1,
            out_dir: None,
            format: None,
            verify: None,
            params: toml::Table::new(),
        }
    }

    pub fn with_param(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.params.insert(key.into(), value.into());
        self
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn is_stochastic(&self) -> bool {
        STOCHASTIC.contains(&self.experiment.as_str())
    }

    pub fn validate(&self) -> CliResult<()> {
        if !EXPERIMENTS.contains(&self.experiment.as_str()) {
            return Err(CliError::Config(format!("unknown experiment `{}`", self.experiment)));
        }
        if self.is_stochastic() && self.master_seed.is_none() {
            return Err(CliError::Config(format!("`{}` needs master_seed", self.experiment)));
        }
        if self.replicas == Some(0) {
            return Err(CliError::Config("replicas must be at least 1".into()));
        }
        if self.workers == 0 {
            return Err(CliError::Config("workers must be at least 1".into()));
        }
        for (k, v) in &self.params {
            flag_value(k, v)?;
        }
        Ok(())
    }

    /// Command line equivalent to this configuration.
    pub fn to_args(&self) -> CliResult<Vec<String>> {
        let mut args = vec!["catalyst".to_string(), "--workers".into(), self.workers.to_string()];
        if let Some(s) = self.master_seed {
            args.extend(["--seed".into(), s.to_string()]);
        }
        if let Some(d) = &self.out_dir {
            args.extend(["--out-dir".into(), d.display().to_string()]);
        }
        if let Some(f) = self.format {
            args.extend(["--format".into(), f.extension().into()]);
        }
        if let Some(v) = &self.verify {
            args.extend(["--verify".into(), v.display().to_string()]);
        }
        args.push(self.experiment.clone());
        if let Some(r) = self.replicas {
            args.extend(["--replicas".into(), r.to_string()]);
        }
        for (k, v) in &self.params {
            let flag = format!("--{}", k.replace('_', "-"));
            match flag_value(k, v)? {
                Some(text) => args.extend([flag, text]),
                None => args.push(flag),
            }
        }
        Ok(args)
    }
}

fn scalar(key: &str, v: &Value) -> CliResult<String> {
    match v {
        Value::String(s) => Ok(s.clone()),
        Value::Integer(i) => Ok(i.to_string()),
        Value::Float(x) => Ok(x.to_string()),
        _ => Err(CliError::Config(format!("key `{key}` must be a number, string or list of them"))),
    }
}

/// `None` for a switch that is on; switches that are off are rejected
/// earlier by leaving them out.
fn flag_value(key: &str, v: &Value) -> CliResult<Option<String>> {
    if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
        return Err(CliError::Config(format!("invalid key `{key}`")));
    }
    match v {
        Value::Boolean(true) => Ok(None),
        Value::Boolean(false) => Err(CliError::Config(format!("switch `{key}` is off by default; remove it"))),
        Value::Array(items) => {
            let parts: CliResult<Vec<String>> = items.iter().map(|x| scalar(key, x)).collect();
            Ok(Some(parts?.join(",")))
        }
        other => scalar(key, other).map(Some),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SCAN: &str = r#"
experiment = "lyapunov-scan"
master_seed = 42
replicas = 200

[params]
mode = "dual"
dim = 5
kappas = [0.0, 1.5]
emit_csv = true
"#;

    #[test]
    fn parses_and_expands_to_flags() {
        let cfg = ExperimentConfig::parse(SCAN).unwrap();
        assert_eq!(cfg.workers, 1);
        let args = cfg.to_args().unwrap();
        let joined = args.join(" ");
        assert!(joined.starts_with("catalyst --workers 1 --seed 42 lyapunov-scan --replicas 200"), "{joined}");
        assert!(joined.contains("--kappas 0,1.5"));
        assert!(joined.contains("--emit-csv"));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = SCAN.replace("replicas = 200", "replicas = 200\nthreads = 4");
        assert!(matches!(ExperimentConfig::parse(&bad), Err(CliError::Config(_))));
    }

    #[test]
    fn seed_required_for_stochastic_runs() {
        let bad = SCAN.replace("master_seed = 42\n", "");
        assert!(ExperimentConfig::parse(&bad).is_err());
        assert!(ExperimentConfig::parse("experiment = \"polaron\"").is_ok());
    }

    #[test]
    fn invalid_ranges_and_shapes() {
        assert!(ExperimentConfig::parse(&SCAN.replace("replicas = 200", "replicas = 0")).is_err());
        assert!(ExperimentConfig::parse(&SCAN.replace("\"lyapunov-scan\"", "\"nope\"")).is_err());
        assert!(ExperimentConfig::parse(&format!("{SCAN}\n[params.nested]\nx = 1\n")).is_err());
        assert!(ExperimentConfig::parse(&SCAN.replace("emit_csv = true", "emit_csv = false")).is_err());
    }
}
