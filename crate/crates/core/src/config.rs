//! Experiment configuration files (TOML).
//!
//! A config names a data source (a generator section or a CSV path), the
//! estimator settings, metric settings and the number of runs. With `runs > 1`
//! every run gets its own generator and feature seeds derived from the base
//! seeds; [`ExperimentConfig::resolve_run`] produces the self-contained record
//! of one run, which replays that run exactly.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::EstimatorConfig;
use crate::metrics::DetectionConfig;
use crate::seed::derive_seed;
use crate::synth::GeneratorConfig;

/// Overrides `output_dir` when set. Nothing else is read from the environment.
pub const OUTPUT_DIR_ENV: &str = "RFTOPO_OUTPUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "one")]
    pub runs: usize,
    pub output_dir: PathBuf,
    /// Read samples from this CSV instead of generating them.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_csv: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorConfig>,
    #[serde(default)]
    pub estimator: EstimatorConfig,
    #[serde(default)]
    pub estimate: EstimateOptions,
    #[serde(default)]
    pub metrics: MetricsConfig,
    #[serde(default)]
    pub bench: BenchConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimateOptions {
    /// Write the pseudo-adjacency only at `t % emit_every == 0`.
    pub emit_every: usize,
    /// Scale every node to zero mean and unit variance before estimation.
    pub standardize: bool,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        Self { emit_every: 1, standardize: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    pub delta: f64,
    pub exclude_self_loops: bool,
    /// Divide each pseudo-adjacency by its maximum before thresholding.
    pub normalize: bool,
    /// Trailing window of the single-run MSE.
    pub mse_window: usize,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        let d = DetectionConfig::default();
        Self { delta: d.delta, exclude_self_loops: d.exclude_self_loops, normalize: true, mse_window: 100 }
    }
}

impl MetricsConfig {
    pub fn detection(&self) -> DetectionConfig {
        DetectionConfig { delta: self.delta, exclude_self_loops: self.exclude_self_loops }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    /// Number of samples to time; defaults to the data length.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    /// Timing passes; the per-step minimum is reported.
    pub repeats: usize,
    /// Step size of the growing-dictionary reference estimator.
    pub reference_step: f64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self { steps: None, repeats: 1, reference_step: 0.01 }
    }
}

fn one() -> usize {
    1
}

impl ExperimentConfig {
    /// Parses and validates a config; relative paths are resolved against the
    /// config file's directory, so the recorded paths are absolute.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let parent = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        let base = std::fs::canonicalize(parent)?;
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        if let Some(csv) = cfg.data_csv.as_mut() {
            if csv.is_relative() {
                *csv = base.join(&*csv);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Replaces `output_dir` with the environment override, if present.
    pub fn apply_env(&mut self) {
        if let Some(dir) = std::env::var_os(OUTPUT_DIR_ENV).filter(|d| !d.is_empty()) {
            self.output_dir = PathBuf::from(dir);
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::Config("runs must be at least 1".into()));
        }
        match (&self.generator, &self.data_csv) {
            (Some(_), Some(_)) => return Err(Error::Config("give either [generator] or data_csv, not both".into())),
            (None, None) => return Err(Error::Config("a [generator] section or data_csv is required".into())),
            (Some(g), None) => {
                g.validate()?;
                if g.nodes != self.estimator.nodes {
                    return Err(Error::Config(format!(
                        "generator has {} nodes but the estimator expects {}",
                        g.nodes, self.estimator.nodes
                    )));
                }
            }
            (None, Some(p)) => {
                if !p.is_file() {
                    return Err(Error::Config(format!("data_csv {} does not exist", p.display())));
                }
            }
        }
        self.estimator.validate()?;
        self.metrics.detection().validate()?;
        if self.metrics.mse_window == 0 {
            return Err(Error::Config("mse_window must be at least 1".into()));
        }
        if self.estimate.emit_every == 0 {
            return Err(Error::Config("emit_every must be at least 1".into()));
        }
        if self.bench.repeats == 0 {
            return Err(Error::Config("bench repeats must be at least 1".into()));
        }
        if !(self.bench.reference_step > 0.0) || !self.bench.reference_step.is_finite() {
            return Err(Error::Config("bench reference_step must be positive".into()));
        }
        Ok(())
    }

    /// Seed of run `k`: the base seed itself for a single run, otherwise a
    /// child seed derived from the base and `k`, truncated to 63 bits so it
    /// fits a TOML integer.
    pub fn run_seed(&self, base: u64, k: usize) -> u64 {
        if self.runs == 1 {
            base
        } else {
            derive_seed(base, k as u64) >> 1
        }
    }

    /// The single-run record for run `k` with its seeds written out.
    pub fn resolve_run(&self, k: usize) -> Result<Self> {
        if k >= self.runs {
            return Err(Error::invalid(format!("run {k} out of range for {} runs", self.runs)));
        }
        let mut run = self.clone();
        run.runs = 1;
        if let Some(g) = run.generator.as_mut() {
            g.seed = self.run_seed(g.seed, k);
        }
        run.estimator.rff_seed = self.run_seed(self.estimator.rff_seed, k);
        Ok(run)
    }

    pub fn run_dir(&self, k: usize) -> PathBuf {
        self.output_dir.join(format!("run_{k:03}"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
output_dir = "out"

[generator]
length = 100
"#;

    #[test]
    fn defaults_fill_missing_sections() {
        let cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(cfg.runs, 1);
        assert_eq!(cfg.metrics.mse_window, 100);
        assert_eq!(cfg.metrics.delta, 0.05);
        assert_eq!(cfg.estimate.emit_every, 1);
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = format!("{MINIMAL}\nbogus = 1\n");
        assert!(ExperimentConfig::from_toml(&text).is_err());
        let text = MINIMAL.replace("length = 100", "length = 100\nlenght = 3");
        assert!(ExperimentConfig::from_toml(&text).is_err());
    }

    #[test]
    fn data_source_must_be_unique() {
        let mut cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
        cfg.data_csv = Some("x.csv".into());
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        cfg.generator = None;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn node_counts_must_agree() {
        let mut cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
        cfg.estimator.nodes = 3;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn run_records_derive_distinct_seeds() {
        let mut cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
        let single = cfg.resolve_run(0).unwrap();
        assert_eq!(single.generator.as_ref().unwrap().seed, 0);
        cfg.runs = 2;
        let a = cfg.resolve_run(0).unwrap();
        let b = cfg.resolve_run(1).unwrap();
        assert_eq!(a.runs, 1);
        assert_ne!(a.generator.as_ref().unwrap().seed, b.generator.as_ref().unwrap().seed);
        assert_ne!(a.estimator.rff_seed, b.estimator.rff_seed);
        assert_eq!(a, cfg.resolve_run(0).unwrap());
        assert!(cfg.resolve_run(2).is_err());
    }

    #[test]
    fn toml_round_trip() {
        let mut cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
        cfg.estimator.step = crate::estimator::StepSchedule::Reciprocal { gamma: 1000.0 };
        let back = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(cfg, back);
    }
}
