//! Chained hash map.
//!
//! Root fields: buckets @16 (array of chain heads), nbuckets @32, and the
//! hash coefficients a @40, b @48. Buckets start at 10; the table doubles
//! when the count exceeds ten entries per bucket and halves (never below
//! 10) when it drops under two per bucket. New nodes go to the chain head
//! and rehashing keeps relative order, so chains stay newest-first.

use alloc::vec;
use alloc::vec::Vec;

use super::migrate::convert_entry;
use super::{link, oid_at, place, put_oid, Entries, Kernel, Map, Remap, ROOT_PREFIX};
use crate::leds::Place;
use crate::{Attribution, Error, ObjectId, Pool, Result};

const OFF_BUCKETS: u64 = 16;
const OFF_NBUCKETS: u64 = 32;
const OFF_A: u64 = 40;
const OFF_B: u64 = 48;
const ROOT_SIZE: u64 = 56;

const INITIAL_BUCKETS: u64 = 10;
const GROW_LOAD: u64 = 10;
const SHRINK_LOAD: u64 = 2;
const PRIME: u64 = 32_212_254_719;
const COEFF_A: u64 = 2_654_435_761;
const COEFF_B: u64 = 1_013_904_223;

pub(crate) struct Hashmap;

struct Table {
    buckets: ObjectId,
    n: u64,
    a: u64,
    b: u64,
}

fn table(pool: &mut Pool, m: &Map) -> Result<Table> {
    Ok(Table {
        buckets: pool.read_oid(m.root, OFF_BUCKETS)?,
        n: pool.read_u64(m.root, OFF_NBUCKETS)?,
        a: pool.read_u64(m.root, OFF_A)?,
        b: pool.read_u64(m.root, OFF_B)?,
    })
}

fn hash(t: &Table, n: u64, key: u64) -> u64 {
    let h = (u128::from(t.a) * u128::from(key) + u128::from(t.b)) % u128::from(PRIME);
    (h % u128::from(n)) as u64
}

fn next_off(e: &Entries) -> u64 {
    e.size()
}

fn chain(pool: &mut Pool, e: &Entries, head: ObjectId) -> Result<Vec<ObjectId>> {
    let mut out = Vec::new();
    let mut cur = if head.is_null() { None } else { Some(head) };
    while let Some(node) = cur {
        out.push(node);
        cur = link(pool, node, next_off(e))?;
    }
    Ok(out)
}

fn rebuild(pool: &mut Pool, m: &Map, t: &Table, new_n: u64) -> Result<()> {
    let e = &m.entries;
    let fresh = pool.with_attribution(Attribution::Structure, |p| p.tx_alloc(new_n * 16))?;
    let mut heads = vec![ObjectId::NULL; new_n as usize];
    for i in 0..t.n {
        let head = pool.read_oid(t.buckets, i * 16)?;
        let nodes = chain(pool, e, head)?;
        for node in nodes.into_iter().rev() {
            let key = e.key(pool, node.into())?;
            let h = hash(t, new_n, key) as usize;
            pool.write_oid(node, next_off(e), heads[h])?;
            heads[h] = node;
        }
    }
    pool.with_attribution(Attribution::Structure, |p| {
        let mut bytes = vec![0u8; new_n as usize * 16];
        for (i, h) in heads.iter().enumerate() {
            put_oid(&mut bytes, i as u64 * 16, *h);
        }
        p.write_bytes(fresh, 0, &bytes)?;
        p.tx_free(t.buckets)?;
        p.write_oid(m.root, OFF_BUCKETS, fresh)?;
        p.write_u64(m.root, OFF_NBUCKETS, new_n)
    })
}

/// Finds `key`: (previous node, node) in its bucket chain.
fn find(pool: &mut Pool, m: &Map, t: &Table, key: u64) -> Result<Option<(Option<ObjectId>, ObjectId)>> {
    let e = &m.entries;
    let h = hash(t, t.n, key);
    let mut prev = None;
    let mut cur = link(pool, t.buckets, h * 16)?;
    while let Some(node) = cur {
        if e.key(pool, node.into())? == key {
            return Ok(Some((prev, node)));
        }
        prev = Some(node);
        cur = link(pool, node, next_off(e))?;
    }
    Ok(None)
}

impl Kernel for Hashmap {
    fn root_size(_e: &Entries) -> u64 {
        ROOT_SIZE
    }

    fn init(pool: &mut Pool, m: &Map) -> Result<()> {
        let buckets = pool.tx_alloc(INITIAL_BUCKETS * 16)?;
        let mut fields = [0u8; (ROOT_SIZE - OFF_BUCKETS) as usize];
        fields[..16].copy_from_slice(&buckets.to_bytes());
        fields[16..24].copy_from_slice(&INITIAL_BUCKETS.to_le_bytes());
        fields[24..32].copy_from_slice(&COEFF_A.to_le_bytes());
        fields[32..40].copy_from_slice(&COEFF_B.to_le_bytes());
        pool.write_bytes(m.root, OFF_BUCKETS, &fields)
    }

    fn insert(pool: &mut Pool, m: &Map, key: u64, value: u64) -> Result<bool> {
        let t = table(pool, m)?;
        if find(pool, m, &t, key)?.is_some() {
            return Ok(false);
        }
        let e = &m.entries;
        let h = hash(&t, t.n, key);
        let head = pool.read_oid(t.buckets, h * 16)?;
        let node = pool.tx_alloc(m.kind.node_size(e.format))?;
        e.write_new(pool, node.into(), key, ObjectId::inline_value(value), true)?;
        pool.write_oid(node, next_off(e), head)?;
        pool.write_oid(t.buckets, h * 16, node)?;
        m.bump_count(pool, true)?;
        let count = m.len(pool)?;
        if count > GROW_LOAD * t.n {
            rebuild(pool, m, &t, t.n * 2)?;
        }
        Ok(true)
    }

    fn remove(pool: &mut Pool, m: &Map, key: u64) -> Result<bool> {
        let t = table(pool, m)?;
        let Some((prev, node)) = find(pool, m, &t, key)? else {
            return Ok(false);
        };
        let e = &m.entries;
        let next = pool.read_oid(node, next_off(e))?;
        match prev {
            Some(p) => pool.write_oid(p, next_off(e), next)?,
            None => pool.write_oid(t.buckets, hash(&t, t.n, key) * 16, next)?,
        }
        e.drop_entry(pool, node.into())?;
        pool.tx_free(node)?;
        m.bump_count(pool, false)?;
        let count = m.len(pool)?;
        if count < SHRINK_LOAD * t.n && t.n > INITIAL_BUCKETS {
            rebuild(pool, m, &t, (t.n / 2).max(INITIAL_BUCKETS))?;
        }
        Ok(true)
    }

    fn lookup(pool: &mut Pool, m: &Map, key: u64) -> Result<Option<Place>> {
        let t = table(pool, m)?;
        Ok(find(pool, m, &t, key)?.map(|(_, node)| place(node, 0)))
    }

    fn entries(pool: &mut Pool, m: &Map) -> Result<Vec<Place>> {
        Ok(Self::nodes(pool, m)?.into_iter().map(Place::from).collect())
    }

    fn validate(pool: &mut Pool, m: &Map) -> Result<u64> {
        let t = table(pool, m)?;
        if t.n < INITIAL_BUCKETS || pool.block_capacity(t.buckets)? < t.n * 16 {
            return Err(Error::Corrupt("hashmap: bad bucket array"));
        }
        let limit = m.len(pool)?;
        let mut seen = alloc::collections::BTreeSet::new();
        let mut total = 0u64;
        for i in 0..t.n {
            let mut cur = link(pool, t.buckets, i * 16)?;
            while let Some(node) = cur {
                total += 1;
                if total > limit {
                    return Err(Error::Corrupt("hashmap: more nodes than the count"));
                }
                let key = m.entries.base_key(pool, node.into())?;
                if hash(&t, t.n, key) != i {
                    return Err(Error::Corrupt("hashmap: entry in the wrong bucket"));
                }
                if !seen.insert(key) {
                    return Err(Error::Corrupt("hashmap: duplicate key"));
                }
                cur = link(pool, node, next_off(&m.entries))?;
            }
        }
        Ok(total)
    }

    fn nodes(pool: &mut Pool, m: &Map) -> Result<Vec<ObjectId>> {
        let t = table(pool, m)?;
        let mut out = Vec::new();
        for i in 0..t.n {
            let head = pool.read_oid(t.buckets, i * 16)?;
            out.extend(chain(pool, &m.entries, head)?);
        }
        Ok(out)
    }

    fn convert_node(bytes: &[u8], from: &Entries, to: &Entries, remap: &Remap) -> Result<Vec<u8>> {
        let mut out = convert_entry(bytes, from, to, remap)?;
        out.extend_from_slice(&remap.get(oid_at(bytes, from.size()))?.to_bytes());
        Ok(out)
    }

    fn convert_root(pool: &mut Pool, m: &Map, _to: &Entries, remap: &Remap) -> Result<Vec<u8>> {
        let t = table(pool, m)?;
        let old = pool.read_vec(t.buckets, 0, t.n * 16)?;
        let mut bytes = vec![0u8; old.len()];
        for i in 0..t.n {
            put_oid(&mut bytes, i * 16, remap.get(oid_at(&old, i * 16))?);
        }
        let fresh = pool.tx_alloc(t.n * 16)?;
        pool.write_bytes(fresh, 0, &bytes)?;
        pool.tx_free(t.buckets)?;
        let mut tail = vec![0u8; (ROOT_SIZE - ROOT_PREFIX) as usize];
        put_oid(&mut tail, 0, fresh);
        tail[16..24].copy_from_slice(&t.n.to_le_bytes());
        tail[24..32].copy_from_slice(&t.a.to_le_bytes());
        tail[32..40].copy_from_slice(&t.b.to_le_bytes());
        Ok(tail)
    }
}
