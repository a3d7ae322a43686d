use std::path::PathBuf;

use clap::ValueEnum;
use leds_core::kernels::{KernelKind, LayoutChange};
use serde::{Deserialize, Serialize};

use super::workload::Pattern;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    Skiplist,
    Ctree,
    Btree,
    Rbtree,
    Hashmap,
}

impl Kernel {
    pub const ALL: [Kernel; 5] = [Kernel::Skiplist, Kernel::Ctree, Kernel::Btree, Kernel::Rbtree, Kernel::Hashmap];

    pub fn kind(self) -> KernelKind {
        match self {
            Kernel::Skiplist => KernelKind::Skiplist,
            Kernel::Ctree => KernelKind::Ctree,
            Kernel::Btree => KernelKind::Btree,
            Kernel::Rbtree => KernelKind::Rbtree,
            Kernel::Hashmap => KernelKind::Hashmap,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    /// Widen the key to 64 bits.
    Change,
    /// Append a name field.
    Add,
}

impl Layout {
    pub fn change(self) -> LayoutChange {
        match self {
            Layout::Change => LayoutChange::Change,
            Layout::Add => LayoutChange::Add,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    /// Delete the pool and rebuild it under the new layout.
    Reset,
    /// Offline migration pass, then the updated program.
    Manual,
    /// Extendible layout upgraded on access.
    Auto,
}

/// One experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkloadConfig {
    pub kernel: Kernel,
    pub pattern: Pattern,
    /// Operations in the original phase.
    pub n: usize,
    pub seed: u64,
    pub layout: Layout,
    pub model: Model,
    pub trials: u32,
    /// Fraction of `n` the update phase performs.
    pub ratio: f64,
    pub cache_translations: bool,
    pub shallow_copy: bool,
    /// Also run the differential overhead breakdown (automatic model).
    pub breakdown: bool,
    /// Scratch directory for pool files; a temporary one when unset.
    pub pool: Option<PathBuf>,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        WorkloadConfig {
            kernel: Kernel::Hashmap,
            pattern: Pattern::Del,
            n: 1000,
            seed: 1,
            layout: Layout::Change,
            model: Model::Auto,
            trials: 5,
            ratio: 1.0,
            cache_translations: false,
            shallow_copy: false,
            breakdown: false,
            pool: None,
        }
    }
}

impl WorkloadConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("n must be at least 1".into()));
        }
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if !(self.ratio > 0.0 && self.ratio <= 1.0) {
            return Err(Error::Config(format!("ratio {} outside (0, 1]", self.ratio)));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<WorkloadConfig> {
        let cfg: WorkloadConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}
