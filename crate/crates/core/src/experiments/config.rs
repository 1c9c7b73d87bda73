use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The experiments the harness knows how to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    FilterVsDense,
    ScalingBench,
    KernelEstimation,
    NrmseTable,
    Forecast,
    GppcaDemo,
    Emulate,
}

const ESTIMATOR_KEYS: [(&str, &str); 4] = [("gamma", "5"), ("eta", "1e-5"), ("tol", "1e-6"), ("max_iter", "100000")];

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 7] = [
        ExperimentKind::FilterVsDense,
        ExperimentKind::ScalingBench,
        ExperimentKind::KernelEstimation,
        ExperimentKind::NrmseTable,
        ExperimentKind::Forecast,
        ExperimentKind::GppcaDemo,
        ExperimentKind::Emulate,
    ];

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s.trim())
            .ok_or_else(|| {
                let names: Vec<&str> = Self::ALL.iter().map(|k| k.name()).collect();
                Error::Config(format!("unknown experiment {s:?}; expected one of {}", names.join(", ")))
            })
    }

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::FilterVsDense => "filter-vs-dense",
            ExperimentKind::ScalingBench => "scaling-bench",
            ExperimentKind::KernelEstimation => "kernel-estimation",
            ExperimentKind::NrmseTable => "nrmse-table",
            ExperimentKind::Forecast => "forecast",
            ExperimentKind::GppcaDemo => "gppca-demo",
            ExperimentKind::Emulate => "emulate",
        }
    }

    /// Every accepted key with its default value.
    pub fn defaults(self) -> Vec<(&'static str, &'static str)> {
        let mut keys: Vec<(&str, &str)> = match self {
            ExperimentKind::FilterVsDense => vec![
                ("sizes", "10,100,500,1000,2000,5000"),
                ("dense_max_n", "5000"),
                ("nu", "2.5"),
                ("gamma", "0.5"),
                ("nugget", "1e-4"),
                ("sigma2", "1"),
                ("noise_sd", "0.1"),
                ("test_points", "200"),
                ("rms_tolerance", "1e-8"),
            ],
            ExperimentKind::ScalingBench => vec![
                ("kernel", "lj"),
                ("design", "uniform"),
                ("sizes", "10,25,50,100,200"),
                ("dim", "2"),
                ("sims", "1"),
                ("frames", "1"),
                ("dt", "0.01"),
                ("grid_points", "200"),
                ("assembly_max_n", "200"),
                ("dense_check_max_n", "10"),
                ("dense_tolerance", "1e-6"),
                ("slope_limit", "2.5"),
            ],
            ExperimentKind::KernelEstimation => vec![
                ("kernel", "lj"),
                ("design", "log-uniform"),
                ("n", "50"),
                ("dim", "2"),
                ("sims", "1"),
                ("frames", "10"),
                ("dt", "0.01"),
                ("noise", "0"),
                ("grid_min", "0"),
                ("grid_max", "auto"),
                ("grid_points", "200"),
                ("variance", "true"),
            ],
            ExperimentKind::NrmseTable => vec![
                ("kernels", "lj,od"),
                ("sizes", "50,200"),
                ("frames", "1,10"),
                ("designs", "uniform,normal,log-uniform"),
                ("replicates", "10"),
                ("dim", "2"),
                ("dt", "0.01"),
                ("noise", "0"),
                ("grid_points", "1000"),
            ],
            ExperimentKind::Forecast => vec![
                ("kernel", "lj"),
                ("design", "log-uniform"),
                ("n", "50"),
                ("dim", "2"),
                ("train_frames", "20"),
                ("steps", "200"),
                ("dt", "0.01"),
                ("inject_truth", "false"),
            ],
            ExperimentKind::GppcaDemo => vec![
                ("n1", "20"),
                ("n2", "200"),
                ("d", "3"),
                ("nu", "2.5"),
                ("gamma", "0.02"),
                ("sigma2", "1"),
                ("snr", "100"),
                ("competitors", "50"),
            ],
            ExperimentKind::Emulate => vec![
                ("train_points", "40"),
                ("test_side", "30"),
                ("nu", "2.5"),
                ("gamma1", "4"),
                ("gamma2", "6"),
                ("nugget", "1e-8"),
            ],
        };
        if matches!(
            self,
            ExperimentKind::ScalingBench | ExperimentKind::KernelEstimation | ExperimentKind::NrmseTable | ExperimentKind::Forecast
        ) {
            keys.extend(ESTIMATOR_KEYS);
        }
        keys
    }
}

/// A fully resolved experiment configuration.
///
/// Parameters are flat string key-value pairs; only the keys listed by
/// [`ExperimentKind::defaults`] are accepted, and values are parsed on use.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub out_dir: PathBuf,
    pub seed: u64,
    params: BTreeMap<String, String>,
}

impl ExperimentConfig {
    pub fn new(experiment: ExperimentKind) -> Self {
        ExperimentConfig {
            experiment,
            out_dir: PathBuf::from("out"),
            seed: 0,
            params: experiment.defaults().into_iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        }
    }

    /// Parses `key = value` lines; `#` starts a comment. A file may name its experiment
    /// with an `experiment` key, which must agree with `expected` when both are given.
    pub fn from_text(expected: Option<ExperimentKind>, text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        let mut named = None;
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {line:?}", no + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if pairs.iter().any(|(seen, _): &(String, String)| seen == k) || (k == "experiment" && named.is_some()) {
                return Err(Error::Config(format!("line {}: key {k:?} given twice", no + 1)));
            }
            if k == "experiment" {
                named = Some(ExperimentKind::parse(v)?);
            } else {
                pairs.push((k.to_string(), v.to_string()));
            }
        }
        let kind = match (expected, named) {
            (Some(a), Some(b)) if a != b => {
                return Err(Error::Config(format!("config is for {} but {} was requested", b.name(), a.name())))
            }
            (Some(a), _) | (None, Some(a)) => a,
            (None, None) => return Err(Error::Config("config does not name an experiment".into())),
        };
        let mut cfg = Self::new(kind);
        for (k, v) in pairs {
            cfg.set(&k, &v)?;
        }
        Ok(cfg)
    }

    pub fn load(expected: Option<ExperimentKind>, path: &Path) -> Result<Self> {
        Self::from_text(expected, &std::fs::read_to_string(path)?)
    }

    /// Overrides one key. `seed` and `out_dir` are accepted alongside the experiment's own keys.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => {
                self.seed = value
                    .parse()
                    .map_err(|_| Error::Config(format!("seed must be a non-negative integer, got {value:?}")))?
            }
            "out_dir" => self.out_dir = PathBuf::from(value),
            _ => match self.params.get_mut(key) {
                Some(slot) => *slot = value.to_string(),
                None => {
                    let known: Vec<&str> = self.params.keys().map(String::as_str).collect();
                    return Err(Error::Config(format!(
                        "unknown key {key:?} for {}; accepted keys: {}",
                        self.experiment.name(),
                        known.join(", ")
                    )));
                }
            },
        }
        Ok(())
    }

    pub fn params(&self) -> &BTreeMap<String, String> {
        &self.params
    }

    pub fn get(&self, key: &str) -> Result<&str> {
        self.params
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Config(format!("{} has no key {key:?}", self.experiment.name())))
    }

    fn parse_as<T: std::str::FromStr>(&self, key: &str, what: &str) -> Result<T> {
        let v = self.get(key)?;
        v.parse()
            .map_err(|_| Error::Config(format!("{key} must be {what}, got {v:?}")))
    }

    pub fn f64(&self, key: &str) -> Result<f64> {
        self.parse_as(key, "a number")
    }

    pub fn usize(&self, key: &str) -> Result<usize> {
        self.parse_as(key, "a non-negative integer")
    }

    pub fn bool(&self, key: &str) -> Result<bool> {
        self.parse_as(key, "true or false")
    }

    /// Comma-separated list of raw items.
    pub fn list(&self, key: &str) -> Result<Vec<String>> {
        let items: Vec<String> = self
            .get(key)?
            .split(',')
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect();
        if items.is_empty() {
            return Err(Error::Config(format!("{key} must list at least one value")));
        }
        Ok(items)
    }

    pub fn usize_list(&self, key: &str) -> Result<Vec<usize>> {
        self.list(key)?
            .iter()
            .map(|s| s.parse().map_err(|_| Error::Config(format!("{key}: {s:?} is not a non-negative integer"))))
            .collect()
    }

    /// Renders the resolved configuration in the same `key = value` syntax it is read from.
    pub fn to_text(&self) -> String {
        let mut out = format!("experiment = {}\nseed = {}\nout_dir = {}\n", self.experiment.name(), self.seed, self.out_dir.display());
        for (k, v) in &self.params {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }
}
