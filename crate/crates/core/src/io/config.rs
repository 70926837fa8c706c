//! Flat key-value run configuration shared by the CLI and JSON config files.
//!
//! Keys are the long flag names (`dt-div`, `keep-samples`, ...). Resolution
//! order per key is command line, then config file, then built-in default.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::Format;
use crate::model::{ModelParams, LAMBDA_C};

/// Environment variable consulted when no thread count is given.
pub const THREADS_ENV: &str = "HYSTERION_THREADS";

/// Every key optional; `None` means "not set at this layer".
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub amplitude: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt_div: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub span: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub law: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub format: Option<Format>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub keep_samples: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
}

macro_rules! layer {
    ($self:ident, $lower:ident, $($field:ident),*) => {
        RunConfig { $($field: $self.$field.clone().or_else(|| $lower.$field.clone())),* }
    };
}

impl RunConfig {
    /// Keys set here win; the rest come from `lower`.
    pub fn over(&self, lower: &RunConfig) -> RunConfig {
        layer!(
            self,
            lower,
            eps,
            sigma,
            a0,
            amplitude,
            n,
            seed,
            dt_div,
            t0,
            span,
            law,
            grid,
            out,
            format,
            keep_samples,
            threads
        )
    }

    /// Reads a config file, or the `config` section of a manifest.
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<RunConfig> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid JSON: {e}")))?;
        let section = match value.get("config") {
            Some(inner) if value.get("tool").is_some() => inner.clone(),
            _ => value,
        };
        serde_json::from_value(section).map_err(|e| Error::Config(format!("invalid config: {e}")))
    }
}

/// Fully resolved settings.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Settings {
    pub params: ModelParams,
    pub n: usize,
    pub seed: u64,
    pub dt_div: f64,
    pub t0: f64,
    pub span: f64,
    pub law: Option<String>,
    pub grid: Option<Vec<f64>>,
    pub out: Option<PathBuf>,
    pub format: Format,
    pub keep_samples: bool,
    pub threads: usize,
}

pub const DEFAULT_EPS: f64 = 1e-3;
pub const DEFAULT_SIGMA: f64 = 0.05;
pub const DEFAULT_A0: f64 = -0.1;
pub const DEFAULT_N: usize = 1000;

impl Settings {
    /// Applies defaults. `env_threads` is the raw value of [`THREADS_ENV`].
    pub fn resolve(cfg: &RunConfig, env_threads: Option<&str>) -> Result<Settings> {
        let amplitude = match (cfg.amplitude, cfg.a0) {
            (Some(_), Some(_)) => {
                return Err(Error::Config("give either a0 or amplitude, not both".into()));
            }
            (Some(a), None) => a,
            (None, a0) => LAMBDA_C + a0.unwrap_or(DEFAULT_A0),
        };
        let params = ModelParams::new(
            cfg.eps.unwrap_or(DEFAULT_EPS),
            cfg.sigma.unwrap_or(DEFAULT_SIGMA),
            amplitude,
        )?;
        let threads = match cfg.threads {
            Some(t) => t,
            None => match env_threads {
                Some(raw) => raw
                    .trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("{THREADS_ENV} must be a positive integer, got `{raw}`")))?,
                None => std::thread::available_parallelism().map_or(1, |n| n.get()),
            },
        };
        if threads == 0 {
            return Err(Error::Config("thread count must be at least 1".into()));
        }
        let dt_div = cfg.dt_div.unwrap_or(crate::sde::DEFAULT_DT_DIV);
        if !(dt_div >= 2.0) {
            return Err(Error::InvalidParameter {
                name: "dt-div",
                value: dt_div,
                reason: "must be at least 2 (dt <= eps/2)",
            });
        }
        let span = cfg.span.unwrap_or(1.0);
        if !(span > 0.0) {
            return Err(Error::InvalidParameter {
                name: "span",
                value: span,
                reason: "must be positive",
            });
        }
        Ok(Settings {
            params,
            n: cfg.n.unwrap_or(DEFAULT_N),
            seed: cfg.seed.unwrap_or(0),
            dt_div,
            t0: cfg.t0.unwrap_or(-0.5),
            span,
            law: cfg.law.clone(),
            grid: cfg.grid.clone(),
            out: cfg.out.clone(),
            format: cfg.format.unwrap_or_default(),
            keep_samples: cfg.keep_samples.unwrap_or(false),
            threads,
        })
    }

    /// The result-determining keys, for manifests. Output location and worker
    /// count are left out: they do not change any emitted byte.
    pub fn to_config(&self) -> RunConfig {
        RunConfig {
            eps: Some(self.params.epsilon),
            sigma: Some(self.params.sigma),
            amplitude: Some(self.params.amplitude),
            n: Some(self.n),
            seed: Some(self.seed),
            dt_div: Some(self.dt_div),
            t0: Some(self.t0),
            span: Some(self.span),
            law: self.law.clone(),
            grid: self.grid.clone(),
            format: Some(self.format),
            keep_samples: Some(self.keep_samples),
            ..RunConfig::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn full(v: f64) -> RunConfig {
        RunConfig {
            eps: Some(v),
            sigma: Some(v),
            a0: Some(v),
            amplitude: None,
            n: Some(v as usize),
            seed: Some(v as u64),
            dt_div: Some(v),
            t0: Some(v),
            span: Some(v),
            law: Some(v.to_string()),
            grid: Some(vec![v]),
            out: Some(PathBuf::from(v.to_string())),
            format: Some(Format::Jsonl),
            keep_samples: Some(true),
            threads: Some(v as usize),
        }
    }

    #[test]
    fn precedence_per_key() {
        let cli = full(1.0);
        let file = full(2.0);
        let merged = cli.over(&file);
        assert_eq!(merged, cli);
        let merged = RunConfig::default().over(&file);
        assert_eq!(merged, file);
        // Each key individually: a CLI value beats the file, a missing one falls through.
        let partial = RunConfig {
            sigma: Some(9.0),
            ..RunConfig::default()
        };
        let merged = partial.over(&file);
        assert_eq!(merged.sigma, Some(9.0));
        assert_eq!(merged.eps, Some(2.0));
        assert_eq!(merged.keep_samples, Some(true));
    }

    #[test]
    fn defaults_apply_last() {
        let s = Settings::resolve(&RunConfig::default(), Some("3")).unwrap();
        assert_eq!(s.params.epsilon, DEFAULT_EPS);
        assert_eq!(s.params.sigma, DEFAULT_SIGMA);
        assert!((s.params.a0() - DEFAULT_A0).abs() < 1e-15);
        assert_eq!(s.threads, 3);
        assert_eq!(s.format, Format::Csv);
        let with_flag = RunConfig {
            threads: Some(2),
            ..RunConfig::default()
        };
        assert_eq!(Settings::resolve(&with_flag, Some("3")).unwrap().threads, 2);
        assert!(Settings::resolve(&RunConfig::default(), Some("x")).is_err());
    }

    #[test]
    fn rejects_conflicting_and_invalid_keys() {
        let both = RunConfig {
            a0: Some(0.1),
            amplitude: Some(0.5),
            ..RunConfig::default()
        };
        assert!(Settings::resolve(&both, None).is_err());
        let bad = RunConfig {
            eps: Some(-1.0),
            ..RunConfig::default()
        };
        assert!(Settings::resolve(&bad, None).is_err());
        assert!(RunConfig::parse(r#"{"epsilon": 0.1}"#).is_err());
    }

    #[test]
    fn parses_flat_file_and_manifest() {
        let cfg = RunConfig::parse(r#"{"eps": 0.002, "dt-div": 100, "keep-samples": true}"#).unwrap();
        assert_eq!(cfg.eps, Some(0.002));
        assert_eq!(cfg.dt_div, Some(100.0));
        assert_eq!(cfg.keep_samples, Some(true));
        let manifest = r#"{"tool": "hysterion", "config": {"sigma": 0.1}, "outputs": []}"#;
        assert_eq!(RunConfig::parse(manifest).unwrap().sigma, Some(0.1));
    }

    #[test]
    fn manifest_config_round_trips() {
        let s = Settings::resolve(&RunConfig::default(), Some("1")).unwrap();
        let text = serde_json::to_string(&s.to_config()).unwrap();
        let back = Settings::resolve(&RunConfig::parse(&text).unwrap(), Some("1")).unwrap();
        assert_eq!(back, s);
    }
}
