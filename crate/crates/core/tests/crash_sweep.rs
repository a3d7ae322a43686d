//! Crash at every persistent store of a scripted multi-transaction run and
//! check that recovery lands exactly on the last committed boundary.

use leds_core::kernels::{EntryFormat, KernelKind, LayoutChange, Map};
use leds_core::pool::FormatOptions;
use leds_core::retention::{manual_migrator, run_migration};
use leds_core::{CrashPlan, Error, Pool, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, PartialEq, Eq, Clone)]
struct State {
    version: u32,
    format: Option<u32>,
    entries: Vec<(u64, u64)>,
    live_blocks: u64,
    live_bytes: u64,
    image: u64,
}

fn fresh() -> Pool {
    Pool::format(Box::new(vec![0u8; 1 << 20]), FormatOptions::new("sweep", 0xc0ffee)).unwrap()
}

/// FNV-1a over header, allocator state and heap (everything but the log).
fn image_hash(p: &Pool) -> u64 {
    let end = p.heap_range().end as usize;
    p.region_bytes()[..end].iter().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ u64::from(*b)).wrapping_mul(0x100_0000_01b3))
}

fn capture(p: &mut Pool, kind: KernelKind) -> State {
    let walk = p.heap_walk().unwrap();
    let allocated = walk.iter().filter(|b| b.allocated).count() as u64;
    assert_eq!(allocated, p.live_blocks(), "allocator counters disagree with the heap");
    let probe = Map::probe(p).unwrap();
    let mut entries = Vec::new();
    if let Some((k, code)) = probe {
        assert_eq!(k, kind);
        let format = if code == 1 { EntryFormat::V1 } else { EntryFormat::V2Change };
        let m = Map::open(p, kind, format).unwrap();
        m.validate(p).unwrap();
        entries = m.scan(p).unwrap();
        entries.sort_unstable();
    }
    State {
        version: p.layout_version(),
        format: probe.map(|(_, c)| c),
        entries,
        live_blocks: p.live_blocks(),
        live_bytes: p.live_bytes(),
        image: image_hash(p),
    }
}

/// Runs the script, calling `boundary` after every committed transaction.
fn script(p: &mut Pool, kind: KernelKind, mut boundary: impl FnMut(&mut Pool)) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let m = Map::create(p, kind, EntryFormat::V1)?;
    boundary(p);
    let batch = |p: &mut Pool, m: &Map, wide: bool, rng: &mut ChaCha8Rng| {
        let ops: Vec<(u64, bool)> = (0..6)
            .map(|_| {
                let k = rng.random_range(1..90u64) | if wide && rng.random_bool(0.3) { 1 << 36 } else { 0 };
                (k, rng.random_bool(0.7))
            })
            .collect();
        p.transact(|p| {
            for (k, ins) in &ops {
                if *ins {
                    m.insert(p, *k, k * 3)?;
                } else {
                    m.remove(p, *k)?;
                }
            }
            Ok(())
        })
    };
    for i in 0..14 {
        batch(p, &m, false, &mut rng)?;
        boundary(p);
        if i == 6 {
            // an aborted transaction in the middle changes nothing
            p.tx_begin()?;
            m.insert(p, 500, 1)?;
            p.tx_abort()?;
            boundary(p);
        }
    }
    run_migration(p, &manual_migrator(kind, LayoutChange::Change))?;
    boundary(p);
    let m = Map::open(p, kind, EntryFormat::V2Change)?;
    for _ in 0..6 {
        batch(p, &m, true, &mut rng)?;
        boundary(p);
    }
    Ok(())
}

fn sweep(kind: KernelKind) {
    let mut p = fresh();
    let mut boundaries = vec![capture(&mut p, kind)];
    let start = p.stats().store_events;
    script(&mut p, kind, |p| {
        let s = capture(p, kind);
        boundaries.push(s);
    })
    .unwrap();
    let total = p.stats().store_events - start;
    assert!(boundaries.len() >= 22, "script must run at least 20 transactions");
    eprintln!("{kind}: {} boundaries, {total} crash points", boundaries.len());
    assert!(boundaries.last().unwrap().entries.len() > 20);

    for k in 1..=total {
        let mut p = fresh();
        p.arm_crash(CrashPlan::at(k)).unwrap();
        let mut committed = 0usize;
        let err = script(&mut p, kind, |_| committed += 1).unwrap_err();
        assert!(matches!(err, Error::SimulatedCrash { .. }), "k={k}: {err:?}");
        assert!(p.is_poisoned());
        let mut r = Pool::recover(p.into_region()).unwrap();
        let got = capture(&mut r, kind);
        assert_eq!(got, boundaries[committed], "{kind}: crash at store {k} after {committed} commits");
    }

    let mut p = fresh();
    p.arm_crash(CrashPlan::at(total + 1)).unwrap();
    script(&mut p, kind, |_| {}).unwrap();
    assert_eq!(&capture(&mut p, kind), boundaries.last().unwrap());
}

#[test]
fn hashmap_run_recovers_at_every_store() {
    sweep(KernelKind::Hashmap);
}

#[test]
fn btree_run_recovers_at_every_store() {
    sweep(KernelKind::Btree);
}

#[test]
fn rbtree_run_recovers_at_every_store() {
    sweep(KernelKind::Rbtree);
}
