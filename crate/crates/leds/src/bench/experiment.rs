//! Timed phases of one experiment.
//!
//! The original program runs once into a pool file. Every trial copies
//! that file, so all trials start from identical bytes, and times its
//! phases on the cold copy.

use std::fs;
use std::hint::black_box;
use std::ops::{Deref, DerefMut};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Instant;

use leds_core::kernels::{EntryFormat, Map, NAME_LEN};
use leds_core::leds::CopyMode;
use leds_core::retention::{apply, manual_migrator, run_migration, RetentionPolicy, Verdict};
use leds_core::{Attribution, ObjectId, Pool, TranslationMode, WriteStats};
use serde::{Deserialize, Serialize};

use super::breakdown::{self, Breakdown};
use super::config::{Kernel, Layout, Model, WorkloadConfig};
use super::workload::{generate, replay, Op, Pattern, Workload};
use crate::file::{copy_pool, delete_pool, PoolFile};
use crate::retention::{open_with_policy, VERSION_UPDATED};
use crate::schema::Manifest;
use crate::{Error, Result};

/// Layout name of benchmark pools.
pub const LAYOUT_NAME: &str = "kvmap";

/// Counters of one phase.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseStats {
    pub bytes_user: u64,
    pub bytes_log: u64,
    pub bytes_meta: u64,
    pub workload_bytes: u64,
    pub migration_bytes: u64,
    pub deep_copy_bytes: u64,
    pub structure_bytes: u64,
    pub flush_events: u64,
    pub allocations: u64,
    pub frees: u64,
    pub translations: u64,
    pub extensions_allocated: u64,
    pub deep_copies: u64,
    pub records_migrated: u64,
    pub commits: u64,
    pub aborts: u64,
}

impl From<WriteStats> for PhaseStats {
    fn from(s: WriteStats) -> Self {
        PhaseStats {
            bytes_user: s.bytes_user,
            bytes_log: s.bytes_log,
            bytes_meta: s.bytes_meta,
            workload_bytes: s.user_bytes(Attribution::Workload),
            migration_bytes: s.user_bytes(Attribution::Migration),
            deep_copy_bytes: s.user_bytes(Attribution::DeepCopy),
            structure_bytes: s.user_bytes(Attribution::Structure),
            flush_events: s.flush_events,
            allocations: s.allocations,
            frees: s.frees,
            translations: s.translations,
            extensions_allocated: s.extensions_allocated,
            deep_copies: s.deep_copies,
            records_migrated: s.records_migrated,
            commits: s.commits,
            aborts: s.aborts,
        }
    }
}

impl std::ops::Add for PhaseStats {
    type Output = PhaseStats;

    fn add(self, o: PhaseStats) -> PhaseStats {
        PhaseStats {
            bytes_user: self.bytes_user + o.bytes_user,
            bytes_log: self.bytes_log + o.bytes_log,
            bytes_meta: self.bytes_meta + o.bytes_meta,
            workload_bytes: self.workload_bytes + o.workload_bytes,
            migration_bytes: self.migration_bytes + o.migration_bytes,
            deep_copy_bytes: self.deep_copy_bytes + o.deep_copy_bytes,
            structure_bytes: self.structure_bytes + o.structure_bytes,
            flush_events: self.flush_events + o.flush_events,
            allocations: self.allocations + o.allocations,
            frees: self.frees + o.frees,
            translations: self.translations + o.translations,
            extensions_allocated: self.extensions_allocated + o.extensions_allocated,
            deep_copies: self.deep_copies + o.deep_copies,
            records_migrated: self.records_migrated + o.records_migrated,
            commits: self.commits + o.commits,
            aborts: self.aborts + o.aborts,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bytes {
    pub user: u64,
    pub log: u64,
    pub meta: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Phases {
    pub original: PhaseStats,
    pub retain: Option<PhaseStats>,
    pub manual: Option<PhaseStats>,
    pub auto: Option<PhaseStats>,
}

/// Sample standard deviations of the timings, in seconds.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub retain: Option<f64>,
    pub manual: f64,
    pub auto: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub kernel: Kernel,
    pub pattern: Pattern,
    pub n: usize,
    pub seed: u64,
    pub layout: Layout,
    pub model: Model,
    pub trials: u32,
    pub ratio: f64,
    pub cache_translations: bool,
    pub shallow_copy: bool,
    /// Seconds; the original phase runs once, the rest are trial means.
    pub t_original: f64,
    /// Migration pass (manual and automatic reports) or rebuild (reset).
    pub t_retain: f64,
    /// Update phase on the converted layout.
    pub t_manual: f64,
    /// Update phase on the extendible layout.
    pub t_auto: Option<f64>,
    pub t_stddev: Spread,
    pub overhead_manual_pct: f64,
    pub overhead_auto_pct: Option<f64>,
    /// Bytes stored by the reported model's retention and update phases.
    pub bytes: Bytes,
    /// Records converted by the reported model.
    pub migrations: u64,
    /// User bytes spent converting records.
    pub migration_bytes: u64,
    pub phases: Phases,
    pub breakdown: Option<Breakdown>,
    /// False if any trial left a poisoned pool, failed validation, or
    /// disagreed with the shadow model or with another trial's counters.
    pub valid: bool,
}

/// Manual-model retention overhead, in percent.
pub fn overhead_manual(t_retain: f64, t_manual: f64) -> f64 {
    100.0 * t_retain / t_manual
}

/// Automatic-model overhead over the manual update phase, in percent.
pub fn overhead_auto(t_auto: f64, t_manual: f64) -> f64 {
    100.0 * (t_auto - t_manual) / t_manual
}

pub(crate) fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub(crate) fn stddev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Runs `ops`, one transaction per operation.
pub fn apply_ops(pool: &mut Pool, map: &Map, ops: &[Op]) -> leds_core::Result<()> {
    for op in ops {
        match *op {
            Op::Insert { key, value } => {
                map.insert(pool, key, value)?;
            }
            Op::Delete { key } => {
                map.remove(pool, key)?;
            }
            Op::Toggle { key, value } => {
                if map.lookup(pool, key)?.is_some() {
                    map.remove(pool, key)?;
                } else {
                    map.insert(pool, key, value)?;
                }
            }
        }
    }
    Ok(())
}

/// Checks structure and contents against the shadow model. Reading every
/// entry materializes extensions, so this runs after the counters are read.
fn content_ok(pool: &mut Pool, map: &Map, expected: &[(u64, u64)]) -> Result<bool> {
    if pool.is_poisoned() || map.validate(pool)? != expected.len() as u64 {
        return Ok(false);
    }
    let mut got = pool.transact(|p| map.scan_full(p))?;
    got.sort();
    Ok(got.len() == expected.len()
        && got
            .iter()
            .zip(expected)
            .all(|(v, (k, val))| v.key == *k && v.value == *val && v.name.is_none_or(|n| n == [0u8; NAME_LEN])))
}

/// Variants of the automatic update phase used by the breakdown.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum AutoVariant {
    Full,
    /// Extension records neither allocated nor freed while timed: existing
    /// entries get theirs before the clock starts and removed entries keep
    /// them.
    NoAllocation,
    /// Relocations share extension records instead of cloning them.
    ShallowCopy,
}

/// Where a trial's pool lives: a copied pool file (cold, as reported) or
/// a fully loaded in-memory image (no page faults while timing).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Residence {
    File,
    Memory,
}

enum Handle {
    File(PoolFile),
    Memory(Pool),
}

impl Deref for Handle {
    type Target = Pool;

    fn deref(&self) -> &Pool {
        match self {
            Handle::File(p) => p,
            Handle::Memory(p) => p,
        }
    }
}

impl DerefMut for Handle {
    fn deref_mut(&mut self) -> &mut Pool {
        match self {
            Handle::File(p) => p,
            Handle::Memory(p) => p,
        }
    }
}

fn load(path: &Path) -> Result<Pool> {
    let bytes = fs::read(path).map_err(Error::io(path))?;
    Ok(Pool::open(Box::new(bytes), LAYOUT_NAME)?)
}

pub(crate) struct Trial {
    pub secs: f64,
    pub stats: PhaseStats,
    pub ok: bool,
}

pub(crate) struct ManualTrial {
    pub retain: Trial,
    pub update: Trial,
}

static SCRATCH_SEQ: AtomicU64 = AtomicU64::new(0);

/// Directory holding the pool files of one experiment.
struct Scratch {
    dir: PathBuf,
    owned: bool,
}

impl Scratch {
    fn new(cfg: &WorkloadConfig) -> Result<Scratch> {
        let (dir, owned) = match &cfg.pool {
            Some(d) => (d.clone(), false),
            None => {
                let seq = SCRATCH_SEQ.fetch_add(1, Ordering::Relaxed);
                (std::env::temp_dir().join(format!("ledsbench-{}-{seq}", std::process::id())), true)
            }
        };
        fs::create_dir_all(&dir).map_err(Error::io(&dir))?;
        Ok(Scratch { dir, owned })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }
}

impl Drop for Scratch {
    fn drop(&mut self) {
        if self.owned {
            let _ = fs::remove_dir_all(&self.dir);
        } else {
            for f in ["original.pool", "original-ext.pool", "work.pool"] {
                let p = self.path(f);
                if p.exists() {
                    let _ = delete_pool(&p);
                }
            }
        }
    }
}

/// Pool capacity for `n` original operations plus an update phase of the
/// same size, with room for a full-copy migration.
pub fn pool_capacity(n: usize) -> u64 {
    (32 << 20) + n as u64 * 1024
}

/// Shared state of one experiment: workload, shadow result and the
/// original pool files.
pub(crate) struct Prepared {
    pub cfg: WorkloadConfig,
    pub workload: Workload,
    pub expected: Vec<(u64, u64)>,
    pub t_original: f64,
    pub original: PhaseStats,
    original_v1: PathBuf,
    original_ext: Option<PathBuf>,
    work: PathBuf,
    _scratch: Scratch,
}

impl Prepared {
    pub fn new(cfg: &WorkloadConfig) -> Result<Prepared> {
        cfg.validate()?;
        let scratch = Scratch::new(cfg)?;
        let workload = generate(cfg.pattern, cfg.n, cfg.seed, cfg.ratio);
        let mut shadow = Default::default();
        replay(&mut shadow, &workload.original);
        replay(&mut shadow, &workload.update);
        let expected = shadow.into_iter().collect();
        let original_v1 = scratch.path("original.pool");
        let (t_original, original) = build_original(cfg, &workload, &original_v1, EntryFormat::V1)?;
        let original_ext = if cfg.model == Model::Auto {
            let p = scratch.path("original-ext.pool");
            build_original(cfg, &workload, &p, EntryFormat::Extendible { change: None })?;
            Some(p)
        } else {
            None
        };
        let work = scratch.path("work.pool");
        Ok(Prepared { cfg: cfg.clone(), workload, expected, t_original, original, original_v1, original_ext, work, _scratch: scratch })
    }

    fn mode(&self) -> TranslationMode {
        if self.cfg.cache_translations {
            TranslationMode::Cached
        } else {
            TranslationMode::Checked
        }
    }

    fn checkout(&self, src: &Path, residence: Residence) -> Result<Handle> {
        let mut h = match residence {
            Residence::File => {
                if self.work.exists() {
                    delete_pool(&self.work)?;
                }
                copy_pool(src, &self.work)?;
                Handle::File(PoolFile::open(&self.work, LAYOUT_NAME)?)
            }
            Residence::Memory => Handle::Memory(load(src)?),
        };
        h.set_translation_mode(self.mode());
        Ok(h)
    }

    fn finish(&self, mut h: Handle, map: &Map) -> Result<bool> {
        h.set_translation_mode(TranslationMode::Checked);
        let ok = content_ok(&mut h, map, &self.expected)?;
        if let Handle::File(p) = h {
            drop(p);
            delete_pool(&self.work)?;
        }
        Ok(ok)
    }

    /// Seconds per checked translation beyond an unchecked one, measured
    /// over the live objects of the extendible original.
    pub fn translation_cost(&self) -> Result<f64> {
        let src = self.original_ext.as_ref().ok_or_else(|| Error::Config("automatic original missing".into()))?;
        let mut p = load(src)?;
        let ids: Vec<ObjectId> = p.heap_walk()?.into_iter().filter(|b| b.allocated).map(|b| b.oid).collect();
        if ids.is_empty() {
            return Ok(0.0);
        }
        let reps = (1 << 21) / ids.len() + 1;
        let timed = |p: &mut Pool, mode| -> Result<f64> {
            p.set_translation_mode(mode);
            let t = Instant::now();
            let mut acc = 0u64;
            for _ in 0..reps {
                for id in &ids {
                    acc = acc.wrapping_add(p.translate(black_box(*id))?);
                }
            }
            black_box(acc);
            Ok(t.elapsed().as_secs_f64())
        };
        let (mut checked, mut unchecked) = (f64::INFINITY, f64::INFINITY);
        for _ in 0..7 {
            checked = checked.min(timed(&mut p, TranslationMode::Checked)?);
            unchecked = unchecked.min(timed(&mut p, TranslationMode::Unchecked)?);
        }
        Ok(((checked - unchecked) / (reps * ids.len()) as f64).max(0.0))
    }

    /// Migration pass, then the update phase on the converted layout.
    pub fn manual_trial(&self, residence: Residence) -> Result<ManualTrial> {
        let kind = self.cfg.kernel.kind();
        let change = self.cfg.layout.change();
        let mut p = self.checkout(&self.original_v1, residence)?;
        let pass = manual_migrator(kind, change);
        let s0 = p.stats();
        let t = Instant::now();
        let ms = run_migration(&mut p, &pass)?;
        let t_retain = t.elapsed().as_secs_f64();
        let s1 = p.stats();
        let map = Map::open(&mut p, kind, EntryFormat::manual_target(change))?;
        let t = Instant::now();
        apply_ops(&mut p, &map, &self.workload.update)?;
        let t_update = t.elapsed().as_secs_f64();
        let s2 = p.stats();
        let migrated_ok = ms.records_migrated == s1.delta(&s0).records_migrated;
        let ok = self.finish(p, &map)? && migrated_ok;
        Ok(ManualTrial {
            retain: Trial { secs: t_retain, stats: s1.delta(&s0).into(), ok },
            update: Trial { secs: t_update, stats: s2.delta(&s1).into(), ok },
        })
    }

    /// Update phase over the untouched extendible pool.
    pub fn auto_trial(&self, variant: AutoVariant, residence: Residence) -> Result<Trial> {
        let kind = self.cfg.kernel.kind();
        let change = self.cfg.layout.change();
        let src = self.original_ext.as_ref().ok_or_else(|| Error::Config("automatic original missing".into()))?;
        let mut p = self.checkout(src, residence)?;
        let fp = Manifest::map_entries(Some(change)).fingerprint()?;
        let verdict = apply(&mut p, &RetentionPolicy::automatic(LAYOUT_NAME, VERSION_UPDATED, fp))?;
        let mut map = Map::open(&mut p, kind, EntryFormat::Extendible { change: Some(change) })?;
        if self.cfg.shallow_copy || variant == AutoVariant::ShallowCopy {
            map.set_copy_mode(CopyMode::Shallow);
        }
        if variant == AutoVariant::NoAllocation {
            p.transact(|p| map.materialize_all(p))?;
            map.set_free_on_drop(false);
        }
        let s0 = p.stats();
        let t = Instant::now();
        apply_ops(&mut p, &map, &self.workload.update)?;
        let secs = t.elapsed().as_secs_f64();
        let stats = p.stats().delta(&s0).into();
        let ok = self.finish(p, &map)? && verdict == Verdict::Upgraded { from: 1 };
        Ok(Trial { secs, stats, ok })
    }

    /// Delete and recreate the pool, rebuild it under the new layout, then
    /// run the update phase.
    pub fn reset_trial(&self) -> Result<ManualTrial> {
        let kind = self.cfg.kernel.kind();
        let target = EntryFormat::manual_target(self.cfg.layout.change());
        copy_pool(&self.original_v1, &self.work)?;
        let policy = RetentionPolicy::reset(LAYOUT_NAME, VERSION_UPDATED);
        let t = Instant::now();
        let (mut p, verdict) = open_with_policy(&self.work, &policy, pool_capacity(self.cfg.n))?;
        p.set_translation_mode(self.mode());
        let s0 = p.stats();
        let map = Map::create(&mut p, kind, target)?;
        apply_ops(&mut p, &map, &self.workload.original)?;
        let t_retain = t.elapsed().as_secs_f64();
        let s1 = p.stats();
        let t = Instant::now();
        apply_ops(&mut p, &map, &self.workload.update)?;
        let t_update = t.elapsed().as_secs_f64();
        let s2 = p.stats();
        let ok = self.finish(Handle::File(p), &map)? && verdict == Verdict::ResetRequired;
        Ok(ManualTrial {
            retain: Trial { secs: t_retain, stats: s1.delta(&s0).into(), ok },
            update: Trial { secs: t_update, stats: s2.delta(&s1).into(), ok },
        })
    }
}

fn build_original(cfg: &WorkloadConfig, w: &Workload, path: &Path, format: EntryFormat) -> Result<(f64, PhaseStats)> {
    if path.exists() {
        delete_pool(path)?;
    }
    let mut p = PoolFile::create(path, LAYOUT_NAME, pool_capacity(cfg.n))?;
    if matches!(format, EntryFormat::Extendible { .. }) {
        p.set_schema_fingerprint(Manifest::map_entries(None).fingerprint()?)?;
    }
    let s0 = p.stats();
    let t = Instant::now();
    let map = Map::create(&mut p, cfg.kernel.kind(), format)?;
    apply_ops(&mut p, &map, &w.original)?;
    let secs = t.elapsed().as_secs_f64();
    let stats = p.stats().delta(&s0).into();
    p.close()?;
    Ok((secs, stats))
}

/// Runs every phase of `cfg` for `cfg.trials` trials.
pub fn run_experiment(cfg: &WorkloadConfig) -> Result<BenchReport> {
    let prep = Prepared::new(cfg)?;
    let mut valid = true;
    let (mut t_retain, mut t_manual, mut t_auto) = (Vec::new(), Vec::new(), Vec::new());
    let (mut retain, mut manual, mut auto): (Option<PhaseStats>, Option<PhaseStats>, Option<PhaseStats>) =
        (None, None, None);
    let mut same = |slot: &mut Option<PhaseStats>, s: PhaseStats| match slot {
        Some(prev) => valid &= *prev == s,
        None => *slot = Some(s),
    };
    let mut trials_ok = true;
    for _ in 0..cfg.trials {
        let m = match cfg.model {
            Model::Reset => prep.reset_trial()?,
            Model::Manual | Model::Auto => prep.manual_trial(Residence::File)?,
        };
        trials_ok &= m.retain.ok && m.update.ok;
        t_retain.push(m.retain.secs);
        t_manual.push(m.update.secs);
        same(&mut retain, m.retain.stats);
        same(&mut manual, m.update.stats);
        if cfg.model == Model::Auto {
            let a = prep.auto_trial(AutoVariant::Full, Residence::File)?;
            trials_ok &= a.ok;
            t_auto.push(a.secs);
            same(&mut auto, a.stats);
        }
    }
    let valid = valid && trials_ok;
    let (tr, tm) = (mean(&t_retain), mean(&t_manual));
    let ta = (!t_auto.is_empty()).then(|| mean(&t_auto));
    let (retain, manual) = (retain.expect("trials >= 1"), manual.expect("trials >= 1"));
    let charged = match cfg.model {
        Model::Auto => auto.expect("auto trials"),
        Model::Manual | Model::Reset => retain + manual,
    };
    let migrations = match cfg.model {
        Model::Auto => charged.records_migrated,
        Model::Manual => retain.records_migrated,
        Model::Reset => 0,
    };
    let breakdown = if cfg.breakdown && cfg.model == Model::Auto {
        Some(breakdown::measure(&prep)?)
    } else {
        None
    };
    Ok(BenchReport {
        kernel: cfg.kernel,
        pattern: cfg.pattern,
        n: cfg.n,
        seed: cfg.seed,
        layout: cfg.layout,
        model: cfg.model,
        trials: cfg.trials,
        ratio: cfg.ratio,
        cache_translations: cfg.cache_translations,
        shallow_copy: cfg.shallow_copy,
        t_original: prep.t_original,
        t_retain: tr,
        t_manual: tm,
        t_auto: ta,
        t_stddev: Spread {
            retain: Some(stddev(&t_retain)),
            manual: stddev(&t_manual),
            auto: ta.map(|_| stddev(&t_auto)),
        },
        overhead_manual_pct: overhead_manual(tr, tm),
        overhead_auto_pct: ta.map(|ta| overhead_auto(ta, tm)),
        bytes: Bytes { user: charged.bytes_user, log: charged.bytes_log, meta: charged.bytes_meta },
        migrations,
        migration_bytes: charged.migration_bytes,
        phases: Phases {
            original: prep.original,
            retain: Some(retain),
            manual: Some(manual),
            auto,
        },
        breakdown,
        valid,
    })
}
