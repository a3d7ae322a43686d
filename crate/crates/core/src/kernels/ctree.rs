//! Crit-bit tree.
//!
//! The root holds one entry. An entry whose slot is a child node is an
//! internal link (its key is unused and zero); an entry whose slot holds an
//! inline value is a leaf; a null slot only appears in the root of an
//! empty tree. A node `{diff, entries[2]}` splits on bit `diff`: keys with
//! that bit clear live under `entries[0]`. Diffs strictly decrease going
//! down, and every key below a node agrees on all bits above its diff.

use alloc::vec;
use alloc::vec::Vec;

use super::migrate::convert_entry;
use super::{Entries, Kernel, Map, Remap, ROOT_PREFIX};
use crate::leds::Place;
use crate::{Error, ObjectId, Pool, Result};

const OFF_TOP: u64 = 16;

pub(crate) struct Ctree;

fn bit(key: u64, diff: u32) -> u64 {
    (key >> diff) & 1
}

fn side(e: &Entries, node: ObjectId, b: u64) -> Place {
    Place::new(node, 4 + b * e.size())
}

fn top(m: &Map) -> Place {
    Place::new(m.root, OFF_TOP)
}

fn is_node(slot: ObjectId) -> bool {
    !slot.is_null() && slot.as_inline_value().is_none()
}

fn diff_of(pool: &mut Pool, node: ObjectId) -> Result<u32> {
    let d = pool.read_u32(node, 0)?;
    if d >= 64 {
        return Err(Error::Corrupt("ctree: diff out of range"));
    }
    Ok(d)
}

/// Descends to the leaf `key` would sit next to. Returns (parent entry,
/// node holding the leaf, leaf entry).
fn descend(pool: &mut Pool, m: &Map, key: u64) -> Result<(Option<Place>, Option<ObjectId>, Place)> {
    let e = &m.entries;
    let mut parent = None;
    let mut node = None;
    let mut at = top(m);
    loop {
        let slot = e.slot(pool, at)?;
        if !is_node(slot) {
            return Ok((parent, node, at));
        }
        let d = diff_of(pool, slot)?;
        parent = Some(at);
        node = Some(slot);
        at = side(e, slot, bit(key, d));
    }
}

fn collect(pool: &mut Pool, e: &Entries, at: Place, leaves: &mut Vec<Place>, nodes: &mut Vec<ObjectId>) -> Result<()> {
    let mut stack = vec![at];
    while let Some(at) = stack.pop() {
        let slot = e.slot(pool, at)?;
        if is_node(slot) {
            nodes.push(slot);
            stack.push(side(e, slot, 1));
            stack.push(side(e, slot, 0));
        } else if !slot.is_null() {
            leaves.push(at);
        }
    }
    Ok(())
}

/// Checks the subtree under `at`; returns its keys in order.
fn check(pool: &mut Pool, e: &Entries, at: Place, above: Option<u32>, keys: &mut Vec<u64>) -> Result<()> {
    let slot = e.slot(pool, at)?;
    if !is_node(slot) {
        if slot.is_null() {
            if above.is_some() {
                return Err(Error::Corrupt("ctree: empty entry below a node"));
            }
        } else {
            keys.push(e.base_key(pool, at)?);
        }
        return Ok(());
    }
    let d = diff_of(pool, slot)?;
    if above.is_some_and(|a| d >= a) {
        return Err(Error::Corrupt("ctree: diffs must decrease downwards"));
    }
    let start = keys.len();
    for b in 0..2 {
        let before = keys.len();
        check(pool, e, side(e, slot, b), Some(d), keys)?;
        if keys.len() == before {
            return Err(Error::Corrupt("ctree: node with an empty side"));
        }
        if keys[before..].iter().any(|k| bit(*k, d) != b) {
            return Err(Error::Corrupt("ctree: key on the wrong side of its crit bit"));
        }
    }
    let sub = &keys[start..];
    let prefix = |k: u64| if d == 63 { 0 } else { k >> (d + 1) };
    if sub.iter().any(|k| prefix(*k) != prefix(sub[0])) {
        return Err(Error::Corrupt("ctree: keys disagree above the crit bit"));
    }
    Ok(())
}

impl Kernel for Ctree {
    fn root_size(e: &Entries) -> u64 {
        ROOT_PREFIX + e.size()
    }

    fn init(_pool: &mut Pool, _m: &Map) -> Result<()> {
        Ok(())
    }

    fn insert(pool: &mut Pool, m: &Map, key: u64, value: u64) -> Result<bool> {
        let e = &m.entries;
        let (_, _, leaf) = descend(pool, m, key)?;
        let val = ObjectId::inline_value(value);
        if e.slot(pool, leaf)?.is_null() {
            e.write_new(pool, leaf, key, val, true)?;
            m.bump_count(pool, true)?;
            return Ok(true);
        }
        let other = e.key(pool, leaf)?;
        if other == key {
            return Ok(false);
        }
        let diff = 63 - (other ^ key).leading_zeros();
        let d = bit(key, diff);

        // find where the new node belongs: above the first node with a lower diff
        let mut at = top(m);
        loop {
            let slot = e.slot(pool, at)?;
            if !is_node(slot) {
                break;
            }
            let nd = diff_of(pool, slot)?;
            if nd < diff {
                break;
            }
            at = side(e, slot, bit(key, nd));
        }

        let node = pool.tx_alloc(m.kind.node_size(e.format))?;
        pool.write_u32(node, 0, diff)?;
        e.write_new(pool, side(e, node, d), key, val, true)?;
        e.copy_through_temp(pool, at, side(e, node, 1 - d))?;
        e.release_copied(pool, at)?;
        e.write_new(pool, at, 0, node, false)?;
        m.bump_count(pool, true)?;
        Ok(true)
    }

    fn remove(pool: &mut Pool, m: &Map, key: u64) -> Result<bool> {
        let e = &m.entries;
        let (parent, node, leaf) = descend(pool, m, key)?;
        if e.slot(pool, leaf)?.is_null() || e.key(pool, leaf)? != key {
            return Ok(false);
        }
        e.drop_entry(pool, leaf)?;
        match (parent, node) {
            (Some(parent), Some(node)) => {
                let d = diff_of(pool, node)?;
                e.move_entries(pool, side(e, node, 1 - bit(key, d)), parent, 1)?;
                pool.tx_free(node)?;
            }
            _ => pool.write_bytes(leaf.oid, leaf.offset, &vec![0u8; e.size() as usize])?,
        }
        m.bump_count(pool, false)?;
        Ok(true)
    }

    fn lookup(pool: &mut Pool, m: &Map, key: u64) -> Result<Option<Place>> {
        let e = &m.entries;
        let (_, _, leaf) = descend(pool, m, key)?;
        if e.slot(pool, leaf)?.is_null() || e.key(pool, leaf)? != key {
            return Ok(None);
        }
        Ok(Some(leaf))
    }

    fn entries(pool: &mut Pool, m: &Map) -> Result<Vec<Place>> {
        let (mut leaves, mut nodes) = (Vec::new(), Vec::new());
        collect(pool, &m.entries, top(m), &mut leaves, &mut nodes)?;
        Ok(leaves)
    }

    fn validate(pool: &mut Pool, m: &Map) -> Result<u64> {
        let mut keys = Vec::new();
        check(pool, &m.entries, top(m), None, &mut keys)?;
        if keys.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Corrupt("ctree: in-order keys not increasing"));
        }
        Ok(keys.len() as u64)
    }

    fn nodes(pool: &mut Pool, m: &Map) -> Result<Vec<ObjectId>> {
        let (mut leaves, mut nodes) = (Vec::new(), Vec::new());
        collect(pool, &m.entries, top(m), &mut leaves, &mut nodes)?;
        Ok(nodes)
    }

    fn convert_node(bytes: &[u8], from: &Entries, to: &Entries, remap: &Remap) -> Result<Vec<u8>> {
        let mut out = bytes[..4].to_vec();
        for b in 0..2 {
            let start = (4 + b * from.size()) as usize;
            out.extend(convert_entry(&bytes[start..start + from.size() as usize], from, to, remap)?);
        }
        Ok(out)
    }

    fn convert_root(pool: &mut Pool, m: &Map, to: &Entries, remap: &Remap) -> Result<Vec<u8>> {
        let old = pool.read_vec(m.root, OFF_TOP, m.entries.size())?;
        convert_entry(&old, &m.entries, to, remap)
    }
}
