//! Experiment harness: each run resolves a strict [`ExperimentConfig`], writes its CSV
//! outputs atomically into `out_dir`, and finishes with a JSON-lines manifest echoing
//! the resolved configuration.
//!
//! CSV outputs are byte-for-byte reproducible for a fixed config and seed, except for
//! columns whose names end in `_seconds`.

mod config;
mod demos;
mod filter_vs_dense;
mod particle_runs;

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

pub use config::{ExperimentConfig, ExperimentKind};
pub use demos::{branin, run_emulate, run_gppca_demo, EmulateReport, GppcaDemoReport};
pub use filter_vs_dense::{run_filter_vs_dense, test_function, FilterVsDenseReport, FilterVsDenseRow};
pub use particle_runs::{
    reference_nrmse, run_forecast, run_kernel_estimation, run_nrmse_table, run_scaling_bench, BenchRow, ForecastReport,
    KernelEstimationReport, NrmseCell, NrmseTableReport, ScalingBenchReport,
};

use crate::error::Result;
use crate::io::write_jsonl;

/// Mixes a base seed with integer tags (SplitMix64 finalizer per step).
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    let mix = |mut z: u64| {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    };
    tags.iter().fold(mix(base), |acc, &t| mix(acc.rotate_left(23) ^ t))
}

pub(crate) fn seconds_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64()
}

pub(crate) fn out_path(cfg: &ExperimentConfig, file: &str) -> PathBuf {
    cfg.out_dir.join(file)
}

#[derive(Serialize)]
struct ConfigRecord<'a> {
    record: &'static str,
    experiment: &'static str,
    package: &'static str,
    version: &'static str,
    seed: u64,
    out_dir: String,
    params: &'a std::collections::BTreeMap<String, String>,
}

/// Writes `<experiment>-manifest.jsonl`: the resolved config, one line per output file,
/// then the run summary.
pub fn write_manifest<S: Serialize>(cfg: &ExperimentConfig, outputs: &[PathBuf], summary: &S) -> Result<PathBuf> {
    let mut lines = vec![serde_json::to_value(ConfigRecord {
        record: "config",
        experiment: cfg.experiment.name(),
        package: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        seed: cfg.seed,
        out_dir: cfg.out_dir.display().to_string(),
        params: cfg.params(),
    })?];
    for p in outputs {
        let file = p.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default();
        lines.push(serde_json::json!({ "record": "output", "file": file }));
    }
    let mut summary = serde_json::to_value(summary)?;
    if let Some(obj) = summary.as_object_mut() {
        obj.insert("record".into(), "summary".into());
    }
    lines.push(summary);
    let path = manifest_path(&cfg.out_dir, cfg.experiment);
    write_jsonl(&path, &lines)?;
    Ok(path)
}

pub fn manifest_path(out_dir: &Path, kind: ExperimentKind) -> PathBuf {
    out_dir.join(format!("{}-manifest.jsonl", kind.name()))
}

/// Runs whichever experiment `cfg` names and returns its summary as JSON.
pub fn run(cfg: &ExperimentConfig) -> Result<serde_json::Value> {
    let v = match cfg.experiment {
        ExperimentKind::FilterVsDense => serde_json::to_value(run_filter_vs_dense(cfg)?)?,
        ExperimentKind::ScalingBench => serde_json::to_value(run_scaling_bench(cfg)?)?,
        ExperimentKind::KernelEstimation => serde_json::to_value(run_kernel_estimation(cfg)?)?,
        ExperimentKind::NrmseTable => serde_json::to_value(run_nrmse_table(cfg)?)?,
        ExperimentKind::Forecast => serde_json::to_value(run_forecast(cfg)?)?,
        ExperimentKind::GppcaDemo => serde_json::to_value(run_gppca_demo(cfg)?)?,
        ExperimentKind::Emulate => serde_json::to_value(run_emulate(cfg)?)?,
    };
    Ok(v)
}
