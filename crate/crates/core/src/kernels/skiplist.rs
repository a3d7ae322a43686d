//! Four-level skip list with a head sentinel.
//!
//! A node's height is a pure function of its key (a splitmix hash, one
//! extra level per trailing one bit, capped at four), so the same key set
//! always produces the same structure regardless of insertion order.

use alloc::vec;
use alloc::vec::Vec;

use super::migrate::convert_entry;
use super::{link, oid_at, put_oid, Entries, Kernel, Map, Remap, ROOT_PREFIX};
use crate::leds::Place;
use crate::{Attribution, Error, ObjectId, Pool, Result};

pub(crate) const LEVELS: usize = 4;
const OFF_HEAD: u64 = 16;

pub(crate) struct Skiplist;

pub(crate) fn height(key: u64) -> usize {
    let mut z = key.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^= z >> 31;
    1 + (z.trailing_ones() as usize).min(LEVELS - 1)
}

fn next_off(e: &Entries, level: usize) -> u64 {
    e.size() + 16 * level as u64
}

fn head(pool: &mut Pool, m: &Map) -> Result<ObjectId> {
    pool.read_oid(m.root, OFF_HEAD)
}

/// Rightmost node before `key` on every level.
fn predecessors(pool: &mut Pool, m: &Map, key: u64) -> Result<[ObjectId; LEVELS]> {
    let e = &m.entries;
    let mut x = head(pool, m)?;
    let mut update = [ObjectId::NULL; LEVELS];
    for lvl in (0..LEVELS).rev() {
        while let Some(next) = link(pool, x, next_off(e, lvl))? {
            if e.key(pool, next.into())? >= key {
                break;
            }
            x = next;
        }
        update[lvl] = x;
    }
    Ok(update)
}

fn candidate(pool: &mut Pool, m: &Map, pred: ObjectId, key: u64) -> Result<Option<ObjectId>> {
    match link(pool, pred, next_off(&m.entries, 0))? {
        Some(n) if m.entries.key(pool, n.into())? == key => Ok(Some(n)),
        _ => Ok(None),
    }
}

impl Kernel for Skiplist {
    fn root_size(_e: &Entries) -> u64 {
        ROOT_PREFIX + 16
    }

    fn init(pool: &mut Pool, m: &Map) -> Result<()> {
        let head = pool.tx_alloc(m.kind.node_size(m.entries.format))?;
        pool.write_oid(m.root, OFF_HEAD, head)
    }

    fn insert(pool: &mut Pool, m: &Map, key: u64, value: u64) -> Result<bool> {
        let update = predecessors(pool, m, key)?;
        if candidate(pool, m, update[0], key)?.is_some() {
            return Ok(false);
        }
        let e = &m.entries;
        let h = height(key);
        let node = pool.tx_alloc(m.kind.node_size(e.format))?;
        e.write_new(pool, node.into(), key, ObjectId::inline_value(value), true)?;
        let mut links = vec![0u8; 16 * LEVELS];
        for (lvl, pred) in update.iter().enumerate().take(h) {
            put_oid(&mut links, 16 * lvl as u64, pool.read_oid(*pred, next_off(e, lvl))?);
        }
        pool.write_bytes(node, next_off(e, 0), &links[..16 * h])?;
        for (lvl, pred) in update.iter().enumerate().take(h) {
            pool.write_oid(*pred, next_off(e, lvl), node)?;
        }
        m.bump_count(pool, true)?;
        Ok(true)
    }

    fn remove(pool: &mut Pool, m: &Map, key: u64) -> Result<bool> {
        let update = predecessors(pool, m, key)?;
        let Some(node) = candidate(pool, m, update[0], key)? else {
            return Ok(false);
        };
        let e = &m.entries;
        for (lvl, pred) in update.iter().enumerate() {
            if pool.read_oid(*pred, next_off(e, lvl))? != node {
                break;
            }
            let next = pool.read_oid(node, next_off(e, lvl))?;
            pool.write_oid(*pred, next_off(e, lvl), next)?;
        }
        e.drop_entry(pool, node.into())?;
        pool.tx_free(node)?;
        m.bump_count(pool, false)?;
        Ok(true)
    }

    fn lookup(pool: &mut Pool, m: &Map, key: u64) -> Result<Option<Place>> {
        let update = predecessors(pool, m, key)?;
        Ok(candidate(pool, m, update[0], key)?.map(Place::from))
    }

    fn entries(pool: &mut Pool, m: &Map) -> Result<Vec<Place>> {
        Ok(Self::nodes(pool, m)?.into_iter().map(Place::from).collect())
    }

    fn validate(pool: &mut Pool, m: &Map) -> Result<u64> {
        let e = &m.entries;
        let limit = m.len(pool)?;
        let nodes = Self::nodes(pool, m)?;
        if nodes.len() as u64 > limit {
            return Err(Error::Corrupt("skiplist: more nodes than the count"));
        }
        let mut keys = Vec::with_capacity(nodes.len());
        for n in &nodes {
            keys.push(e.base_key(pool, (*n).into())?);
        }
        if keys.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Corrupt("skiplist: level 0 not strictly increasing"));
        }
        let hd = head(pool, m)?;
        for lvl in 1..LEVELS {
            let expected: Vec<ObjectId> = nodes
                .iter()
                .zip(&keys)
                .filter(|(_, k)| height(**k) > lvl)
                .map(|(n, _)| *n)
                .collect();
            let mut got = Vec::new();
            let mut cur = link(pool, hd, next_off(e, lvl))?;
            while let Some(n) = cur {
                got.push(n);
                if got.len() > expected.len() {
                    break;
                }
                cur = link(pool, n, next_off(e, lvl))?;
            }
            if got != expected {
                return Err(Error::Corrupt("skiplist: upper level is not the expected sublist"));
            }
        }
        Ok(nodes.len() as u64)
    }

    fn nodes(pool: &mut Pool, m: &Map) -> Result<Vec<ObjectId>> {
        let limit = m.len(pool)?;
        let mut out = Vec::new();
        let hd = head(pool, m)?;
        let mut cur = link(pool, hd, next_off(&m.entries, 0))?;
        while let Some(n) = cur {
            out.push(n);
            if out.len() as u64 > limit {
                return Err(Error::Corrupt("skiplist: cycle or count mismatch"));
            }
            cur = link(pool, n, next_off(&m.entries, 0))?;
        }
        Ok(out)
    }

    fn convert_node(bytes: &[u8], from: &Entries, to: &Entries, remap: &Remap) -> Result<Vec<u8>> {
        let mut out = convert_entry(bytes, from, to, remap)?;
        for lvl in 0..LEVELS {
            out.extend_from_slice(&remap.get(oid_at(bytes, next_off(from, lvl)))?.to_bytes());
        }
        Ok(out)
    }

    fn convert_root(pool: &mut Pool, m: &Map, to: &Entries, remap: &Remap) -> Result<Vec<u8>> {
        let old = head(pool, m)?;
        let from = &m.entries;
        let mut bytes = vec![0u8; m.kind.node_size(to.format) as usize];
        for lvl in 0..LEVELS {
            let l = remap.get(pool.read_oid(old, next_off(from, lvl))?)?;
            put_oid(&mut bytes, next_off(to, lvl), l);
        }
        let fresh = pool.with_attribution(Attribution::Structure, |p| {
            let fresh = p.tx_alloc(bytes.len() as u64)?;
            p.write_bytes(fresh, 0, &bytes)?;
            p.tx_free(old)?;
            Ok(fresh)
        })?;
        let mut tail = vec![0u8; 16];
        put_oid(&mut tail, 0, fresh);
        Ok(tail)
    }
}
