use std::collections::BTreeMap;

use leds_core::kernels::{EntryFormat, KernelKind, LayoutChange, Map};
use leds_core::leds::{FieldInit, FieldLayout, InitRule, TypeDescriptor};
use leds_core::pool::FormatOptions;
use leds_core::{Pool, TranslationMode};
use proptest::prelude::*;

fn pool(mib: usize) -> Pool {
    Pool::format(Box::new(vec![0u8; mib << 20]), FormatOptions::new("props", 77)).unwrap()
}

fn kind() -> impl Strategy<Value = KernelKind> {
    prop::sample::select(KernelKind::ALL.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn allocations_are_aligned_and_freeing_restores_baseline(sizes in prop::collection::vec(1u64..3000, 1..60)) {
        let mut p = pool(2);
        let (bytes, blocks) = (p.live_bytes(), p.live_blocks());
        let ids: Vec<_> = sizes.iter().map(|s| p.raw_alloc(*s, true).unwrap()).collect();
        for (id, s) in ids.iter().zip(&sizes) {
            prop_assert_eq!(id.offset % 16, 0);
            prop_assert!(p.read_vec(*id, 0, *s).unwrap().iter().all(|b| *b == 0));
        }
        for id in ids.iter().rev() {
            p.raw_free(*id).unwrap();
        }
        prop_assert_eq!((p.live_bytes(), p.live_blocks()), (bytes, blocks));
    }

    #[test]
    fn abort_restores_the_heap_image(writes in prop::collection::vec((0u64..200, prop::collection::vec(any::<u8>(), 1..40)), 1..30)) {
        let mut p = pool(1);
        let obj = p.raw_alloc(256, true).unwrap();
        let r = p.heap_range();
        let (lo, hi) = (r.start, r.end);
        let before = p.region_bytes()[lo as usize..hi as usize].to_vec();
        p.tx_begin().unwrap();
        for (off, bytes) in &writes {
            p.write_bytes(obj, *off, bytes).unwrap();
            let _ = p.tx_alloc(24).unwrap();
        }
        p.tx_abort().unwrap();
        prop_assert!(p.region_bytes()[lo as usize..hi as usize] == before[..]);
    }

    #[test]
    fn maps_track_a_shadow(k in kind(), ops in prop::collection::vec((1u64..300, any::<bool>()), 1..400)) {
        let mut p = pool(4);
        let m = Map::create(&mut p, k, EntryFormat::V1).unwrap();
        let mut shadow = BTreeMap::new();
        for (key, ins) in ops {
            if ins {
                prop_assert_eq!(m.insert(&mut p, key, key + 1).unwrap(), shadow.insert(key, key + 1).is_none());
            } else {
                prop_assert_eq!(m.remove(&mut p, key).unwrap(), shadow.remove(&key).is_some());
            }
        }
        prop_assert_eq!(m.validate(&mut p).unwrap(), shadow.len() as u64);
        let mut got = m.scan(&mut p).unwrap();
        got.sort_unstable();
        prop_assert_eq!(got, shadow.into_iter().collect::<Vec<_>>());
    }

    #[test]
    fn manual_and_automatic_views_agree(k in kind(), keys in prop::collection::btree_set(1u64..u32::MAX as u64, 0..150), add in any::<bool>()) {
        let change = if add { LayoutChange::Add } else { LayoutChange::Change };
        let mut manual = pool(4);
        let mut auto = pool(4);
        let mm = Map::create(&mut manual, k, EntryFormat::V1).unwrap();
        let am = Map::create(&mut auto, k, EntryFormat::Extendible { change: None }).unwrap();
        for key in &keys {
            mm.insert(&mut manual, *key, key ^ 5).unwrap();
            am.insert(&mut auto, *key, key ^ 5).unwrap();
        }
        let mm = manual.transact(|p| mm.migrate_to(p, EntryFormat::manual_target(change))).unwrap();
        let am = Map::open(&mut auto, k, EntryFormat::Extendible { change: Some(change) }).unwrap();
        let mut a = mm.scan_full(&mut manual).unwrap();
        let mut b = am.scan_full(&mut auto).unwrap();
        a.sort_unstable();
        b.sort_unstable();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn extension_materializes_once_per_object(vals in prop::collection::vec(any::<i32>(), 1..40), reads in 1usize..20) {
        let base = TypeDescriptor::define("obj", vec![FieldLayout::scalar("v", 0, 4)]).unwrap();
        let desc = base
            .append_extension(vec![FieldLayout::scalar("w", 0, 8)], InitRule::Fields(vec![FieldInit::Copy {
                from: "v".into(),
                conversion: leds_core::leds::Conversion::SignExtend,
            }]))
            .unwrap();
        let mut p = pool(2);
        p.set_translation_mode(TranslationMode::Cached);
        let objs: Vec<_> = vals.iter().map(|v| {
            let o = p.raw_alloc(desc.alloc_size(), true).unwrap();
            p.transact(|p| p.write_bytes(o, 0, &v.to_le_bytes())).unwrap();
            o
        }).collect();
        let before = p.stats();
        for _ in 0..reads {
            for (o, v) in objs.iter().zip(&vals) {
                prop_assert_eq!(p.read_field_u64(*o, &desc, "w").unwrap() as i64, i64::from(*v));
            }
        }
        prop_assert_eq!(p.stats().delta(&before).extensions_allocated, vals.len() as u64);
    }
}
