//! Pools backed by memory-mapped files.
//!
//! Each open pool holds an exclusive lock on a sidecar `<pool>.lock` file,
//! so at most one handle per pool file exists at a time.

use std::fs::{self, File, OpenOptions, TryLockError};
use std::ops::{Deref, DerefMut};
use std::path::{Path, PathBuf};

use leds_core::layout::MIN_CAPACITY;
use leds_core::pool::FormatOptions;
use leds_core::{Pool, Region};
use memmap2::MmapMut;

use crate::error::{Error, Result};

/// A writable shared mapping of a whole pool file.
pub struct MappedRegion {
    map: MmapMut,
}

impl MappedRegion {
    fn map(file: &File, path: &Path) -> Result<Self> {
        // SAFETY: the sidecar lock keeps other handles of this library off the
        // file for the lifetime of the mapping.
        let map = unsafe { MmapMut::map_mut(file) }.map_err(Error::io(path))?;
        Ok(MappedRegion { map })
    }
}

impl Region for MappedRegion {
    fn bytes(&self) -> &[u8] {
        &self.map
    }

    fn bytes_mut(&mut self) -> &mut [u8] {
        &mut self.map
    }

    fn sync(&mut self) -> leds_core::Result<()> {
        self.map.flush().map_err(|e| leds_core::Error::Io(e.to_string()))
    }
}

fn lock_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".lock");
    PathBuf::from(name)
}

struct Lock {
    _file: File,
}

impl Lock {
    fn acquire(path: &Path) -> Result<Lock> {
        let lp = lock_path(path);
        let file = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(&lp)
            .map_err(Error::io(&lp))?;
        match file.try_lock() {
            Ok(()) => Ok(Lock { _file: file }),
            Err(TryLockError::WouldBlock) => Err(Error::Locked(path.to_path_buf())),
            Err(TryLockError::Error(e)) => Err(Error::Io { path: lp, source: e }),
        }
    }
}

/// Fresh random pool identity (never zero, never the inline-value tag).
pub fn fresh_uuid() -> u64 {
    loop {
        let u = rand::random::<u64>();
        if u != 0 && u != u64::MAX {
            return u;
        }
    }
}

/// An open pool file. Dereferences to the [`Pool`].
pub struct PoolFile {
    pool: Pool,
    path: PathBuf,
    _lock: Lock,
}

impl PoolFile {
    /// Creates and formats a pool file of `capacity` bytes.
    pub fn create(path: impl AsRef<Path>, layout_name: &str, capacity: u64) -> Result<PoolFile> {
        Self::create_with(path, capacity, FormatOptions::new(layout_name, fresh_uuid()))
    }

    pub fn create_with(path: impl AsRef<Path>, capacity: u64, opts: FormatOptions) -> Result<PoolFile> {
        let path = path.as_ref();
        if capacity < MIN_CAPACITY {
            return Err(leds_core::Error::CapacityTooSmall { requested: capacity, minimum: MIN_CAPACITY }.into());
        }
        let lock = Lock::acquire(path)?;
        if fs::metadata(path).is_ok_and(|m| m.len() > 0) {
            return Err(Error::AlreadyExists(path.to_path_buf()));
        }
        let file = OpenOptions::new()
            .create(true)
            .truncate(true)
            .read(true)
            .write(true)
            .open(path)
            .map_err(Error::io(path))?;
        file.set_len(capacity).map_err(Error::io(path))?;
        let region = MappedRegion::map(&file, path)?;
        let pool = Pool::format(Box::new(region), opts)?;
        Ok(PoolFile { pool, path: path.to_path_buf(), _lock: lock })
    }

    /// Opens a pool, rolling back any interrupted transaction, and checks
    /// its layout name.
    pub fn open(path: impl AsRef<Path>, layout_name: &str) -> Result<PoolFile> {
        Self::attach(path.as_ref(), |r| Pool::open(r, layout_name))
    }

    /// Opens a pool after a crash without checking the layout name.
    pub fn recover(path: impl AsRef<Path>) -> Result<PoolFile> {
        Self::attach(path.as_ref(), Pool::recover)
    }

    fn attach(path: &Path, f: impl FnOnce(Box<dyn Region>) -> leds_core::Result<Pool>) -> Result<PoolFile> {
        let lock = Lock::acquire(path)?;
        let file = OpenOptions::new().read(true).write(true).open(path).map_err(Error::io(path))?;
        let len = file.metadata().map_err(Error::io(path))?.len();
        if len < MIN_CAPACITY {
            return Err(leds_core::Error::BadMagic.into());
        }
        let region = MappedRegion::map(&file, path)?;
        let pool = f(Box::new(region))?;
        Ok(PoolFile { pool, path: path.to_path_buf(), _lock: lock })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Flushes the mapping and releases the handle.
    pub fn close(mut self) -> Result<()> {
        if !self.pool.is_poisoned() {
            self.pool.sync()?;
        }
        Ok(())
    }
}

impl Deref for PoolFile {
    type Target = Pool;

    fn deref(&self) -> &Pool {
        &self.pool
    }
}

impl DerefMut for PoolFile {
    fn deref_mut(&mut self) -> &mut Pool {
        &mut self.pool
    }
}

/// Removes a pool file and its lock file. Fails while a handle is open.
pub fn delete_pool(path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let lock = Lock::acquire(path)?;
    fs::remove_file(path).map_err(Error::io(path))?;
    drop(lock);
    let _ = fs::remove_file(lock_path(path));
    Ok(())
}

/// Copies a closed pool file byte for byte.
pub fn copy_pool(src: impl AsRef<Path>, dst: impl AsRef<Path>) -> Result<()> {
    let (src, dst) = (src.as_ref(), dst.as_ref());
    let _a = Lock::acquire(src)?;
    let _b = Lock::acquire(dst)?;
    fs::copy(src, dst).map_err(Error::io(dst))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use leds_core::Error as CoreError;

    fn core_err(r: Result<PoolFile>) -> CoreError {
        match r {
            Err(Error::Pool(e)) => e,
            Err(e) => panic!("unexpected error {e}"),
            Ok(_) => panic!("expected an error"),
        }
    }

    #[test]
    fn create_close_open_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p");
        let mut p = PoolFile::create(&path, "L", 2 << 20).unwrap();
        assert_eq!(p.live_blocks(), 0);
        let s = p.stats();
        assert_eq!(s.bytes_user, 0);
        assert!(s.bytes_meta > 0);
        let root = p.get_root(64).unwrap();
        p.transact(|p| p.write_u64(root, 8, 42)).unwrap();
        let uuid = p.uuid();
        p.close().unwrap();

        let mut p = PoolFile::open(&path, "L").unwrap();
        assert_eq!(p.root_id(), root);
        assert_eq!(p.uuid(), uuid);
        assert_eq!(p.read_u64(root, 8).unwrap(), 42);
        let off = p.translate(root).unwrap();
        drop(p);
        let raw = fs::read(&path).unwrap();
        assert_eq!(u64::from_le_bytes(raw[off as usize + 8..off as usize + 16].try_into().unwrap()), 42);
    }

    #[test]
    fn layout_name_is_checked() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p");
        PoolFile::create(&path, "L", 1 << 20).unwrap().close().unwrap();
        assert!(matches!(core_err(PoolFile::open(&path, "L2")), CoreError::LayoutMismatch { .. }));
    }

    #[test]
    fn zero_file_has_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("z");
        fs::write(&path, vec![0u8; 1 << 20]).unwrap();
        assert_eq!(core_err(PoolFile::open(&path, "L")), CoreError::BadMagic);
    }

    #[test]
    fn small_capacity_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let r = PoolFile::create(dir.path().join("s"), "L", 4096);
        assert!(matches!(core_err(r), CoreError::CapacityTooSmall { .. }));
    }

    #[test]
    fn existing_pool_is_not_overwritten() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p");
        PoolFile::create(&path, "L", 1 << 20).unwrap().close().unwrap();
        assert!(matches!(PoolFile::create(&path, "L", 1 << 20), Err(Error::AlreadyExists(_))));
    }

    #[test]
    fn second_handle_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p");
        let p = PoolFile::create(&path, "L", 1 << 20).unwrap();
        assert!(matches!(PoolFile::open(&path, "L"), Err(Error::Locked(_))));
        assert!(matches!(delete_pool(&path), Err(Error::Locked(_))));
        drop(p);
        assert!(PoolFile::open(&path, "L").is_ok());
    }

    #[test]
    fn delete_then_recreate_gives_a_new_identity() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p");
        let p = PoolFile::create(&path, "L", 1 << 20).unwrap();
        let uuid = p.uuid();
        p.close().unwrap();
        delete_pool(&path).unwrap();
        assert!(matches!(PoolFile::open(&path, "L"), Err(Error::Io { .. })));
        assert!(matches!(delete_pool(&path), Err(Error::Io { .. })));
        let p = PoolFile::create(&path, "L", 1 << 20).unwrap();
        assert_ne!(p.uuid(), uuid);
        assert_eq!(p.live_blocks(), 0);
    }

    #[test]
    fn crash_then_recover_rolls_back() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p");
        let mut p = PoolFile::create(&path, "L", 1 << 20).unwrap();
        let root = p.get_root(32).unwrap();
        p.transact(|p| p.write_u64(root, 0, 1)).unwrap();
        let blocks = p.live_blocks();
        p.arm_crash(leds_core::CrashPlan::at(6)).unwrap();
        let r = p.transact(|p| {
            p.write_u64(root, 0, 2)?;
            let o = p.tx_alloc(64)?;
            p.write_u64(o, 0, 3)
        });
        assert!(matches!(r, Err(CoreError::SimulatedCrash { .. })));
        drop(p);
        let mut p = PoolFile::recover(&path).unwrap();
        assert_eq!(p.read_u64(root, 0).unwrap(), 1);
        assert_eq!(p.live_blocks(), blocks);
    }
}
