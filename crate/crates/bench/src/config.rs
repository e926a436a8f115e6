//! Experiment configuration read from a TOML file.

use std::path::{Path, PathBuf};

use nafa::agent::TrainConfig;
use nafa::baselines::{SwConfig, DEFAULT_LINUCB_ALPHA};
use nafa::energy::{self, EnergyTrace, SyntheticSky};
use nafa::sim::EnvConfig;
use nafa::Params;
use serde::{Deserialize, Serialize};

use crate::BenchError;

pub const POLICIES: [&str; 5] = ["bf", "wf", "linucb", "sw", "nafa"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceKind {
    Csv,
    Synthetic,
}

/// Where a GHI series comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceSpec {
    pub kind: TraceKind,
    /// CSV file, relative to the config file.
    #[serde(default)]
    pub path: Option<PathBuf>,
    /// Days to use; for CSV traces defaults to everything after `offset_days`.
    #[serde(default)]
    pub days: Option<usize>,
    #[serde(default)]
    pub offset_days: usize,
    /// Synthetic generator seed.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub sky: SyntheticSky,
}

impl TraceSpec {
    pub fn load(&self) -> Result<EnergyTrace, BenchError> {
        match self.kind {
            TraceKind::Csv => {
                let path = self.path.as_ref().ok_or_else(|| BenchError::config("csv trace needs `path`"))?;
                let full = energy::load_ghi_csv(path)?;
                let days = self.days.unwrap_or(full.days().saturating_sub(self.offset_days));
                Ok(full.window(self.offset_days, days)?)
            }
            TraceKind::Synthetic => {
                let days = self.days.ok_or_else(|| BenchError::config("synthetic trace needs `days`"))?;
                Ok(self.sky.generate(self.offset_days + days, self.seed)?.window(self.offset_days, days)?)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub policies: Vec<String>,
    pub eta_values: Vec<f64>,
    pub arrival_rates: Vec<f64>,
    /// Length of the single evaluation run on the test trace.
    pub evaluation_days: usize,
    pub train_trace: TraceSpec,
    pub test_trace: TraceSpec,
    #[serde(default)]
    pub sim: Params,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub env: EnvConfig,
    #[serde(default)]
    pub sw: SwConfig,
    #[serde(default = "default_alpha")]
    pub linucb_alpha: f64,
}

fn default_alpha() -> f64 {
    DEFAULT_LINUCB_ALPHA
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, BenchError> {
        toml::from_str(text).map_err(|e| BenchError::config(e.to_string()))
    }

    /// Reads and validates `path`; relative paths inside resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, BenchError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BenchError::config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for spec in [&mut cfg.train_trace, &mut cfg.test_trace] {
            if let Some(p) = &spec.path {
                if p.is_relative() {
                    spec.path = Some(base.join(p));
                }
            }
        }
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        self.sim.validate()?;
        self.train.validate()?;
        self.sw.validate()?;
        if self.policies.is_empty() {
            return Err(BenchError::config("policy list is empty"));
        }
        for p in &self.policies {
            if !POLICIES.contains(&p.as_str()) {
                return Err(BenchError::config(format!("unknown policy `{p}`, expected one of {POLICIES:?}")));
            }
        }
        if self.eta_values.is_empty() || self.arrival_rates.is_empty() {
            return Err(BenchError::config("eta_values and arrival_rates must be non-empty"));
        }
        if self.eta_values.iter().any(|&e| !(e >= 0.0 && e.is_finite())) {
            return Err(BenchError::config("eta values must be finite and non-negative"));
        }
        if self.arrival_rates.iter().any(|&r| !(r > 0.0 && r.is_finite())) {
            return Err(BenchError::config("arrival rates must be positive"));
        }
        if self.evaluation_days == 0 {
            return Err(BenchError::config("evaluation_days must be positive"));
        }
        if self.linucb_alpha.is_nan() || self.linucb_alpha < 0.0 {
            return Err(BenchError::config("linucb_alpha must be non-negative"));
        }
        for (name, spec) in [("train_trace", &self.train_trace), ("test_trace", &self.test_trace)] {
            if spec.kind == TraceKind::Csv {
                match &spec.path {
                    Some(p) if p.is_file() => {}
                    Some(p) => return Err(BenchError::config(format!("{name}: {} does not exist", p.display()))),
                    None => return Err(BenchError::config(format!("{name}: csv trace needs `path`"))),
                }
            }
        }
        Ok(())
    }

    pub fn has_policy(&self, name: &str) -> bool {
        self.policies.iter().any(|p| p == name)
    }

    /// Parameters of one `(eta, arrival_rate)` cell.
    pub fn cell_params(&self, eta: f64, arrival_rate: f64) -> Params {
        Params { eta, arrival_rate, ..self.sim.clone() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
seed = 3
output_dir = "out"
policies = ["bf", "wf"]
eta_values = [0.0]
arrival_rates = [30.0]
evaluation_days = 10

[train_trace]
kind = "synthetic"
days = 10
seed = 1

[test_trace]
kind = "synthetic"
days = 10
seed = 2
"#;

    #[test]
    fn defaults_fill_table_values() {
        let cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.sim, Params::default());
        assert_eq!(cfg.train, TrainConfig::default());
        assert_eq!(cfg.sw, SwConfig::default());
    }

    #[test]
    fn rejects_bad_configs() {
        let bad = MINIMAL.replace(r#"policies = ["bf", "wf"]"#, "policies = []");
        assert!(ExperimentConfig::from_toml(&bad).unwrap().validate().is_err());
        let bad = MINIMAL.replace(r#"["bf", "wf"]"#, r#"["bf", "greedy"]"#);
        assert!(ExperimentConfig::from_toml(&bad).unwrap().validate().is_err());
        let bad = format!("{MINIMAL}\n[train]\nepisodes = 0\n");
        assert!(ExperimentConfig::from_toml(&bad).unwrap().validate().is_err());
        let bad = format!("{MINIMAL}\n[sim]\nbogus = 1\n");
        assert!(ExperimentConfig::from_toml(&bad).is_err());
        let bad = MINIMAL.replacen("kind = \"synthetic\"", "kind = \"csv\"\npath = \"/nonexistent.csv\"", 1);
        assert!(ExperimentConfig::from_toml(&bad).unwrap().validate().is_err());
    }
}
