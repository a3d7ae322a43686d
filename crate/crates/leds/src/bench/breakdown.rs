//! Differential breakdown of the automatic model's extra cost.
//!
//! Each cost component is neutralized in turn and the update phase is
//! retimed. Extension allocation is neutralized by attaching every
//! extension before the clock starts and leaving the records of removed
//! entries allocated, deep copy by shallow copies. Translation is too
//! cheap per call to separate from run-to-run noise that way, so its
//! checked-minus-unchecked cost is timed in a tight loop over the pool's
//! objects and charged once per translation the automatic phase performs
//! beyond the manual one. What the deltas do not explain is `other` (link
//! loads, extension frees). Runs use in-memory pool images.

use serde::{Deserialize, Serialize};

use super::config::{Model, WorkloadConfig};
use super::experiment::{AutoVariant, Prepared, Residence};
use crate::{Error, Result};

/// Minimum timed rounds per variant.
pub const MIN_ROUNDS: u32 = 3;

/// Raw measurements: per-variant minimum over the rounds, in seconds.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Samples {
    pub rounds: u32,
    pub t_manual: f64,
    pub t_auto: f64,
    pub t_no_alloc: f64,
    pub t_shallow: f64,
    /// Seconds a checked translation costs over an unchecked one.
    pub translation_cost: f64,
    pub translations_manual: u64,
    pub translations_auto: u64,
    pub extensions_auto: u64,
    pub extensions_no_alloc: u64,
    pub deep_copies_auto: u64,
}

/// Fractions of the automatic model's extra cost. They sum to one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Breakdown {
    pub alloc: f64,
    pub translate: f64,
    pub deepcopy: f64,
    pub other: f64,
    pub samples: Samples,
}

impl Breakdown {
    pub fn from_samples(s: Samples) -> Breakdown {
        let extra = (s.t_auto - s.t_manual).max(0.0);
        // a component that never fired costs nothing, whatever the noise says
        let alloc = if s.extensions_auto == 0 { 0.0 } else { (s.t_auto - s.t_no_alloc).max(0.0) };
        let translate = s.translation_cost * s.translations_auto.saturating_sub(s.translations_manual) as f64;
        let deepcopy = if s.deep_copies_auto == 0 { 0.0 } else { (s.t_auto - s.t_shallow).max(0.0) };
        let other = (extra - alloc - translate - deepcopy).max(0.0);
        let total = alloc + translate + deepcopy + other;
        if total <= 0.0 {
            return Breakdown { alloc: 0.0, translate: 0.0, deepcopy: 0.0, other: 1.0, samples: s };
        }
        Breakdown {
            alloc: alloc / total,
            translate: translate / total,
            deepcopy: deepcopy / total,
            other: other / total,
            samples: s,
        }
    }

    pub fn sum(&self) -> f64 {
        self.alloc + self.translate + self.deepcopy + self.other
    }
}

pub(crate) fn measure(prep: &Prepared) -> Result<Breakdown> {
    let rounds = prep.cfg.trials.max(MIN_ROUNDS);
    let mut s = Samples { rounds, ..Default::default() };
    let mut best = [f64::INFINITY; 4];
    let variants = [AutoVariant::Full, AutoVariant::NoAllocation, AutoVariant::ShallowCopy];
    for _ in 0..rounds {
        let m = prep.manual_trial(Residence::Memory)?;
        best[0] = best[0].min(m.update.secs);
        s.translations_manual = m.update.stats.translations;
        for (i, v) in variants.iter().enumerate() {
            let t = prep.auto_trial(*v, Residence::Memory)?;
            if !t.ok {
                return Err(Error::Config(format!("{v:?} breakdown run diverged from the shadow model")));
            }
            best[i + 1] = best[i + 1].min(t.secs);
            match v {
                AutoVariant::Full => {
                    s.translations_auto = t.stats.translations;
                    s.extensions_auto = t.stats.extensions_allocated;
                    s.deep_copies_auto = t.stats.deep_copies;
                }
                AutoVariant::NoAllocation => s.extensions_no_alloc = t.stats.extensions_allocated,
                AutoVariant::ShallowCopy => {}
            }
        }
    }
    [s.t_manual, s.t_auto, s.t_no_alloc, s.t_shallow] = best;
    s.translation_cost = prep.translation_cost()?;
    Ok(Breakdown::from_samples(s))
}

/// Runs the differential breakdown for `cfg` (automatic model only).
pub fn breakdown_report(cfg: &WorkloadConfig) -> Result<Breakdown> {
    if cfg.model != Model::Auto {
        return Err(Error::Config("the breakdown needs the automatic model".into()));
    }
    measure(&Prepared::new(cfg)?)
}
