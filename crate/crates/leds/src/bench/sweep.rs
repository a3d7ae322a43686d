//! Report series over dataset size, working-set ratio and cost
//! components.

use super::config::{Model, WorkloadConfig};
use super::experiment::{run_experiment, BenchReport};
use super::workload::Pattern;
use crate::Result;

pub const SIZES: [usize; 4] = [100, 1000, 10_000, 100_000];
pub const RATIOS: [f64; 4] = [0.001, 0.01, 0.1, 1.0];

/// One experiment per size, update phase over the whole dataset.
pub fn sweep_dataset_size(cfg: &WorkloadConfig, sizes: &[usize]) -> Result<Vec<BenchReport>> {
    sizes
        .iter()
        .map(|&n| run_experiment(&WorkloadConfig { n, ratio: 1.0, ..cfg.clone() }))
        .collect()
}

/// One experiment per ratio with the delete pattern: the update phase
/// removes that fraction of the original keys.
pub fn sweep_working_set(cfg: &WorkloadConfig, ratios: &[f64]) -> Result<Vec<BenchReport>> {
    ratios
        .iter()
        .map(|&ratio| run_experiment(&WorkloadConfig { ratio, pattern: Pattern::Del, ..cfg.clone() }))
        .collect()
}

/// Automatic-model breakdowns: as configured, with shallow copies, and
/// with the translation cache.
pub fn sweep_breakdown(cfg: &WorkloadConfig) -> Result<Vec<BenchReport>> {
    let base = WorkloadConfig { model: Model::Auto, breakdown: true, ..cfg.clone() };
    [
        base.clone(),
        WorkloadConfig { shallow_copy: true, ..base.clone() },
        WorkloadConfig { cache_translations: true, ..base },
    ]
    .iter()
    .map(run_experiment)
    .collect()
}
