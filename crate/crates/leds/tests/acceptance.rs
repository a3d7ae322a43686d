//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use leds::bench::experiment::apply_ops;
use leds::bench::{
    breakdown_report, generate, run_experiment, sweep_working_set, Kernel, Layout, Op, Pattern, WorkloadConfig,
};
use leds::file::{copy_pool, PoolFile};
use leds_core::kernels::{EntryFormat, KernelKind, LayoutChange, Map, NAME_LEN};
use leds_core::pool::FormatOptions;
use leds_core::retention::{manual_migrator, run_migration};
use leds_core::{CrashPlan, Error as CoreError, Pool};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn mib(bytes: u64) -> f64 {
    bytes as f64 / (1024.0 * 1024.0)
}

fn within(got: f64, want: f64, tol: f64) -> bool {
    (got - want).abs() <= tol * want
}

fn mem_pool(mib: usize) -> Pool {
    Pool::format(Box::new(vec![0u8; mib << 20]), FormatOptions::new("accept", 0xacce)).unwrap()
}

/// Independent model of the workload semantics.
fn shadow_of(ops: &[&[Op]]) -> BTreeMap<u64, u64> {
    let mut m = BTreeMap::new();
    for op in ops.iter().flat_map(|o| o.iter()) {
        match *op {
            Op::Insert { key, value } => {
                if !m.contains_key(&key) {
                    m.insert(key, value);
                }
            }
            Op::Delete { key } => {
                m.remove(&key);
            }
            Op::Toggle { key, value } => {
                if m.contains_key(&key) {
                    m.remove(&key);
                } else {
                    m.insert(key, value);
                }
            }
        }
    }
    m
}

// ---------------------------------------------------------------------------

fn write_amplification() -> Outcome {
    let table: [(Kernel, u64, Option<f64>); 5] = [
        (Kernel::Hashmap, 40, Some(3.8)),
        (Kernel::Skiplist, 88, Some(8.4)),
        (Kernel::Ctree, 52, None),
        (Kernel::Rbtree, 76, Some(7.2)),
        (Kernel::Btree, 324, None),
    ];
    let n = 100_000u64;
    let mut notes = Vec::new();
    for (kernel, per_node, total) in table {
        let t = Instant::now();
        let cfg = WorkloadConfig { kernel, n: n as usize, trials: 1, ..Default::default() };
        let r = run_experiment(&cfg).map_err(|e| format!("{kernel:?}: {e}"))?;
        ensure(r.valid, || format!("{kernel:?}: report invalid"))?;
        let manual = r.phases.retain.expect("manual phase");
        let auto = r.phases.auto.expect("auto phase");
        ensure(manual.records_migrated > 0 && manual.migration_bytes == manual.records_migrated * per_node, || {
            format!("{kernel:?}: manual {} B over {} records, want {per_node} B each", manual.migration_bytes, manual.records_migrated)
        })?;
        if kernel.kind().node_per_key() {
            ensure(manual.records_migrated == n, || format!("{kernel:?}: manual migrated {}", manual.records_migrated))?;
        }
        ensure(auto.records_migrated == n && auto.migration_bytes == 40 * n, || {
            format!("{kernel:?}: auto {} B over {} records, want 40 B each for {n}", auto.migration_bytes, auto.records_migrated)
        })?;
        ensure(within(mib(auto.migration_bytes), 3.8, 0.02), || format!("{kernel:?}: auto total {:.2} MiB", mib(auto.migration_bytes)))?;
        if let Some(want) = total {
            let got = mib(manual.migration_bytes);
            ensure(within(got, want, 0.02), || format!("{kernel:?}: manual total {got:.2} MiB, want {want} MiB ±2%"))?;
        }
        notes.push(format!(
            "{}: {per_node}B/node x{} = {:.2} MiB, auto {:.2} MiB ({:.0}s)",
            kernel.kind(),
            manual.records_migrated,
            mib(manual.migration_bytes),
            mib(auto.migration_bytes),
            t.elapsed().as_secs_f64()
        ));
    }
    Ok(notes.join("; "))
}

fn laziness() -> Outcome {
    let cfg = WorkloadConfig { kernel: Kernel::Hashmap, n: 100_000, trials: 1, ..Default::default() };
    let series = sweep_working_set(&cfg, &[0.001, 0.01, 0.1, 1.0]).map_err(|e| e.to_string())?;
    let auto: Vec<u64> = series.iter().map(|r| r.migrations).collect();
    let manual: Vec<u64> = series.iter().map(|r| r.phases.retain.unwrap().records_migrated).collect();
    ensure(series.iter().all(|r| r.valid), || "a report is invalid".into())?;
    ensure(auto == [100, 1000, 10_000, 100_000], || format!("auto migrated {auto:?}"))?;
    ensure(manual == [100_000; 4], || format!("manual migrated {manual:?}"))?;
    Ok(format!("auto {auto:?}, manual {manual:?}"))
}

fn model_equivalence() -> Outcome {
    let mut checked = 0;
    for kernel in Kernel::ALL {
        let kind = kernel.kind();
        for pattern in [Pattern::Del, Pattern::Ins, Pattern::Rand] {
            for change in [LayoutChange::Change, LayoutChange::Add] {
                let tag = format!("{kind} {pattern:?} {change:?}");
                let w = generate(pattern, 1000, 17, 1.0);
                let want = shadow_of(&[&w.original, &w.update]);
                let want: Vec<(u64, u64)> = want.into_iter().collect();

                let mut p = mem_pool(16);
                let m = Map::create(&mut p, kind, EntryFormat::V1).unwrap();
                apply_ops(&mut p, &m, &w.original).unwrap();
                run_migration(&mut p, &manual_migrator(kind, change)).unwrap();
                let m = Map::open(&mut p, kind, EntryFormat::manual_target(change)).unwrap();
                apply_ops(&mut p, &m, &w.update).unwrap();
                m.validate(&mut p).unwrap();
                let mut manual = m.scan_full(&mut p).unwrap();
                manual.sort();

                let mut q = mem_pool(16);
                let m = Map::create(&mut q, kind, EntryFormat::Extendible { change: None }).unwrap();
                apply_ops(&mut q, &m, &w.original).unwrap();
                let m = Map::open(&mut q, kind, EntryFormat::Extendible { change: Some(change) }).unwrap();
                apply_ops(&mut q, &m, &w.update).unwrap();
                m.validate(&mut q).unwrap();
                let desc = m.entries.descriptor().unwrap().clone();
                let places = m.entry_places(&mut q).unwrap();
                let init_ok = q
                    .transact(|q| {
                        for at in &places {
                            let key32 = q.read_field_u64(*at, &desc, "key")?;
                            let ok = match change {
                                LayoutChange::Change => q.read_field_u64(*at, &desc, "key64")? == key32,
                                LayoutChange::Add => q.read_field(*at, &desc, "name")? == vec![0u8; NAME_LEN],
                            };
                            if !ok {
                                return Ok(false);
                            }
                        }
                        Ok(true)
                    })
                    .unwrap();
                ensure(init_ok, || format!("{tag}: initialized field differs from its INIT value"))?;
                let mut auto = q.transact(|q| m.scan_full(q)).unwrap();
                auto.sort();

                for (label, got) in [("manual", &manual), ("auto", &auto)] {
                    let kv: Vec<(u64, u64)> = got.iter().map(|v| (v.key, v.value)).collect();
                    ensure(kv == want, || format!("{tag}: {label} contents differ from the shadow map"))?;
                    let names_ok = got.iter().all(|v| match change {
                        LayoutChange::Change => v.name.is_none(),
                        LayoutChange::Add => v.name == Some([0u8; NAME_LEN]),
                    });
                    ensure(names_ok, || format!("{tag}: {label} name fields wrong"))?;
                }
                ensure(manual == auto, || format!("{tag}: models disagree"))?;
                checked += 1;
            }
        }
    }
    Ok(format!("{checked} kernel/pattern/layout combinations agree with the shadow map"))
}

// ---------------------------------------------------------------------------

#[derive(Debug, PartialEq, Eq, Clone)]
struct Snapshot {
    version: u32,
    format: Option<u32>,
    entries: Vec<(u64, u64)>,
    live_blocks: u64,
    live_bytes: u64,
}

/// Blocks an empty map of `kind` in `format` owns (root and auxiliary).
fn fixed_blocks(kind: KernelKind, format: EntryFormat) -> u64 {
    let mut p = mem_pool(1);
    Map::create(&mut p, kind, format).unwrap();
    p.live_blocks()
}

fn snapshot(p: &mut Pool, kind: KernelKind) -> Result<Snapshot, String> {
    let allocated = p.heap_walk().map_err(|e| e.to_string())?.iter().filter(|b| b.allocated).count() as u64;
    ensure(allocated == p.live_blocks(), || "allocator counters disagree with the heap".into())?;
    let probe = Map::probe(p).map_err(|e| e.to_string())?;
    let mut entries = Vec::new();
    if let Some((_, code)) = probe {
        let format = if code == 1 { EntryFormat::V1 } else { EntryFormat::V2Change };
        let m = Map::open(p, kind, format).map_err(|e| e.to_string())?;
        m.validate(p).map_err(|e| e.to_string())?;
        let reachable = m.nodes(p).map_err(|e| e.to_string())?.len() as u64 + fixed_blocks(kind, format);
        ensure(reachable == p.live_blocks(), || {
            format!("{} live blocks but {reachable} reachable: leak", p.live_blocks())
        })?;
        entries = m.scan(p).map_err(|e| e.to_string())?;
        entries.sort_unstable();
    }
    Ok(Snapshot {
        version: p.layout_version(),
        format: probe.map(|(_, c)| c),
        entries,
        live_blocks: p.live_blocks(),
        live_bytes: p.live_bytes(),
    })
}

/// 21 transactions of map updates, one aborted transaction, one manual
/// migration transaction and 4 more updates on the new layout.
fn crash_script(p: &mut Pool, kind: KernelKind, mut boundary: impl FnMut(&mut Pool)) -> leds_core::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(kind.code().into());
    let m = Map::create(p, kind, EntryFormat::V1)?;
    boundary(p);
    let batch = |p: &mut Pool, m: &Map, wide: bool, rng: &mut ChaCha8Rng| {
        let ops: Vec<(u64, bool)> = (0..5)
            .map(|_| {
                let k = rng.random_range(1..80u64) | if wide && rng.random_bool(0.3) { 1 << 33 } else { 0 };
                (k, rng.random_bool(0.7))
            })
            .collect();
        p.transact(|p| {
            for (k, ins) in &ops {
                if *ins {
                    m.insert(p, *k, k + 1000)?;
                } else {
                    m.remove(p, *k)?;
                }
            }
            Ok(())
        })
    };
    for i in 0..20 {
        batch(p, &m, false, &mut rng)?;
        boundary(p);
        if i == 9 {
            p.tx_begin()?;
            m.insert(p, 999, 1)?;
            p.tx_abort()?;
            boundary(p);
        }
    }
    run_migration(p, &manual_migrator(kind, LayoutChange::Change))?;
    boundary(p);
    let m = Map::open(p, kind, EntryFormat::V2Change)?;
    for _ in 0..4 {
        batch(p, &m, true, &mut rng)?;
        boundary(p);
    }
    Ok(())
}

fn crash_atomicity() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let template = dir.path().join("template.pool");
    PoolFile::create(&template, "accept", 1 << 20).and_then(|p| p.close()).map_err(|e| e.to_string())?;
    let work = dir.path().join("work.pool");
    let fresh = |path: &Path| -> PoolFile {
        if path.exists() {
            leds::file::delete_pool(path).unwrap();
        }
        copy_pool(&template, path).unwrap();
        PoolFile::open(path, "accept").unwrap()
    };
    let mut notes = Vec::new();
    for kernel in Kernel::ALL {
        let kind = kernel.kind();
        let mut p = fresh(&work);
        let mut boundaries = vec![snapshot(&mut p, kind)?];
        let start = p.stats().store_events;
        let mut err = None;
        crash_script(&mut p, kind, |p| match snapshot(p, kind) {
            Ok(s) => boundaries.push(s),
            Err(e) => err = Some(e),
        })
        .map_err(|e| e.to_string())?;
        if let Some(e) = err {
            return Err(format!("{kind}: {e}"));
        }
        let total = p.stats().store_events - start;
        let txs = p.stats().commits + p.stats().aborts;
        drop(p);
        ensure(txs >= 20, || format!("{kind}: only {txs} transactions"))?;
        for k in 1..=total {
            let mut p = fresh(&work);
            p.arm_crash(CrashPlan::at(k)).unwrap();
            let mut committed = 0usize;
            match crash_script(&mut p, kind, |_| committed += 1) {
                Err(CoreError::SimulatedCrash { .. }) => {}
                other => return Err(format!("{kind}: crash {k} gave {other:?}")),
            }
            drop(p);
            let mut r = PoolFile::recover(&work).map_err(|e| e.to_string())?;
            let got = snapshot(&mut r, kind).map_err(|e| format!("{kind} crash {k}: {e}"))?;
            ensure(got == boundaries[committed], || format!("{kind}: crash at store {k} did not land on boundary {committed}"))?;
        }
        notes.push(format!("{kind} {txs} tx/{total} crash points"));
    }
    Ok(notes.join(", "))
}

// ---------------------------------------------------------------------------

fn layout_add() -> Outcome {
    let mut notes = Vec::new();
    for kernel in Kernel::ALL {
        for pattern in [Pattern::Del, Pattern::Ins] {
            let cfg = WorkloadConfig { kernel, pattern, layout: Layout::Add, n: 10_000, trials: 3, ..Default::default() };
            let r = run_experiment(&cfg).map_err(|e| e.to_string())?;
            let tag = format!("{} {pattern:?}", kernel.kind());
            ensure(r.valid, || format!("{tag}: invalid report"))?;
            let auto = r.phases.auto.unwrap();
            let manual = r.phases.retain.unwrap();
            ensure(auto.extensions_allocated == 0 && auto.records_migrated == 0, || {
                format!("{tag}: auto allocated {} extensions", auto.extensions_allocated)
            })?;
            ensure(auto.migration_bytes == 0, || format!("{tag}: auto wrote {} extra bytes", auto.migration_bytes))?;
            let per_node = kernel.kind().node_size(EntryFormat::V2Add);
            ensure(manual.records_migrated > 0 && manual.migration_bytes == manual.records_migrated * per_node, || {
                format!("{tag}: manual wrote {} B for {} records", manual.migration_bytes, manual.records_migrated)
            })?;
            if pattern == Pattern::Del {
                notes.push(format!(
                    "{}: auto {:+.2}% / manual {:.2}%",
                    kernel.kind(),
                    r.overhead_auto_pct.unwrap(),
                    r.overhead_manual_pct
                ));
            }
        }
    }
    Ok(format!("0 extensions and 0 extra bytes everywhere; wall clock (not asserted) {}", notes.join(", ")))
}

fn breakdown_sanity() -> Outcome {
    let cfg = WorkloadConfig { kernel: Kernel::Hashmap, n: 100_000, trials: 5, ..Default::default() };
    let b = breakdown_report(&cfg).map_err(|e| e.to_string())?;
    let line = format!(
        "alloc {:.2}% translate {:.2}% deepcopy {:.2}% other {:.2}%",
        100.0 * b.alloc,
        100.0 * b.translate,
        100.0 * b.deepcopy,
        100.0 * b.other
    );
    ensure((b.sum() - 1.0).abs() < 1e-9, || format!("fractions sum to {}", b.sum()))?;
    ensure(b.alloc > b.translate && b.alloc > b.deepcopy && b.alloc > b.other, || format!("alloc not largest: {line}"))?;
    ensure(b.translate > 0.0, || format!("translation fraction is zero: {line}"))?;
    let plain = run_experiment(&WorkloadConfig { trials: 1, ..cfg.clone() }).map_err(|e| e.to_string())?;
    let cached = run_experiment(&WorkloadConfig { trials: 1, cache_translations: true, ..cfg }).map_err(|e| e.to_string())?;
    let (tp, tc) = (plain.phases.auto.unwrap().translations, cached.phases.auto.unwrap().translations);
    ensure(tc < tp, || format!("cache did not reduce translation misses: {tc} vs {tp}"))?;
    Ok(format!("{line}; translation misses {tp} -> {tc} with the cache"))
}

fn structure_fuzz() -> Outcome {
    let formats = [EntryFormat::V1, EntryFormat::Extendible { change: Some(LayoutChange::Change) }];
    let mut ops_total = 0;
    for kernel in Kernel::ALL {
        let kind = kernel.kind();
        for format in formats {
            let mut p = mem_pool(32);
            let m = Map::create(&mut p, kind, format).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(0xf022 + kind.code() as u64);
            let mut shadow = BTreeMap::new();
            for step in 0..10_000 {
                let key = rng.random_range(1..1500u64);
                let value = rng.random::<u32>() as u64;
                match rng.random_range(0..10) {
                    0..=5 => {
                        let fresh = m.insert(&mut p, key, value).unwrap();
                        ensure(fresh == !shadow.contains_key(&key), || format!("{kind}: insert result at step {step}"))?;
                        shadow.entry(key).or_insert(value);
                    }
                    6..=8 => {
                        let hit = m.remove(&mut p, key).unwrap();
                        ensure(hit == shadow.remove(&key).is_some(), || format!("{kind}: remove result at step {step}"))?;
                    }
                    _ => {
                        let got = m.lookup(&mut p, key).unwrap();
                        ensure(got == shadow.get(&key).copied(), || format!("{kind}: lookup at step {step}"))?;
                    }
                }
                let n = m.validate(&mut p).map_err(|e| format!("{kind} {format:?} step {step}: {e}"))?;
                ensure(n == shadow.len() as u64, || format!("{kind}: count {n} at step {step}"))?;
                // base fields only, so the check itself upgrades nothing
                let mut got = Vec::with_capacity(shadow.len());
                for at in m.entry_places(&mut p).unwrap() {
                    got.push((m.entries.base_key(&mut p, at).unwrap(), m.entries.value(&mut p, at).unwrap()));
                }
                got.sort_unstable();
                ensure(got.iter().eq(shadow.iter().map(|(k, v)| (*k, *v)).collect::<Vec<_>>().iter()), || {
                    format!("{kind} {format:?}: scan differs from the shadow at step {step}")
                })?;
                ops_total += 1;
            }
        }
    }
    Ok(format!("{ops_total} ops, validated after each"))
}

fn main() {
    let criteria: [(u8, &str, fn() -> Outcome); 7] = [
        (1, "write amplification", write_amplification),
        (2, "laziness counting", laziness),
        (3, "model equivalence", model_equivalence),
        (4, "crash atomicity", crash_atomicity),
        (5, "layout add near-zero cost", layout_add),
        (6, "breakdown sanity", breakdown_sanity),
        (7, "structure fuzzing", structure_fuzz),
    ];
    let mut failed = 0;
    for (id, name, f) in criteria {
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS criterion {id} ({name}, {secs:.1}s): {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {id} ({name}, {secs:.1}s): {why}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} of 7 acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all 7 acceptance criteria passed");
}
