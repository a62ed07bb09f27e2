use std::collections::HashMap;
use std::ops::Deref;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::{Mutex, RwLock};

use crate::algo::Cycle;
use crate::algorithms::side_flag;
use crate::error::{Error, Result};
use crate::kv::dump::{DumpReader, DumpTarget, DumpWriter};
use crate::kv::{GcLedger, KvMode};

/// Slots per arena chunk. Chunks never move, so the snapshotter can walk
/// slots while the client appends new ones.
pub const CHUNK_SLOTS: usize = 1 << 16;

/// Read-from bit of an Hourglass slot; bits 1 and 2 mark "updated in the
/// period of side 0 / side 1".
const HG_READ_FROM: u8 = 1;

#[inline]
fn hg_bit(side: usize) -> u8 {
    2 << side
}

#[derive(Debug, Default)]
struct Meter {
    live: AtomicU64,
    high_water: AtomicU64,
    reclaimed_versions: AtomicU64,
    reclaimed_bytes: AtomicU64,
}

impl Meter {
    fn alloc(&self, len: usize) {
        let live = self.live.fetch_add(len as u64, Ordering::Relaxed) + len as u64;
        self.high_water.fetch_max(live, Ordering::Relaxed);
    }

    fn ledger(&self) -> GcLedger {
        GcLedger {
            live_bytes: self.live.load(Ordering::Relaxed),
            high_water_bytes: self.high_water.load(Ordering::Relaxed),
            reclaimed_versions: self.reclaimed_versions.load(Ordering::Relaxed),
            reclaimed_bytes: self.reclaimed_bytes.load(Ordering::Relaxed),
        }
    }
}

/// One immutable value version. Its bytes are returned to the live-byte
/// meter when the last reference goes away.
pub struct Blob {
    data: Box<[u8]>,
    meter: Arc<Meter>,
}

impl Deref for Blob {
    type Target = [u8];

    fn deref(&self) -> &[u8] {
        &self.data
    }
}

impl Drop for Blob {
    fn drop(&mut self) {
        self.meter.live.fetch_sub(self.data.len() as u64, Ordering::Relaxed);
    }
}

impl std::fmt::Debug for Blob {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Blob({} bytes)", self.data.len())
    }
}

pub type Value = Arc<Blob>;

/// Per-key state. `v` are the two version slots, playing the role of the
/// two page stores; `flags` carries the algorithm's per-page bits.
#[derive(Default)]
struct SlotState {
    key: Option<Arc<str>>,
    v: [Option<Value>; 2],
    flags: u8,
}

impl SlotState {
    fn latest(&self, mode: KvMode) -> Option<&Value> {
        let side = match mode {
            KvMode::Hourglass => (self.flags & HG_READ_FROM) as usize,
            KvMode::Piggyback => usize::from(self.flags == side_flag(1)),
            KvMode::Fork | KvMode::Naive => 0,
        };
        self.v[side].as_ref()
    }
}

type Slot = Mutex<SlotState>;
type Chunk = Arc<[Slot]>;

fn new_chunk() -> Chunk {
    (0..CHUNK_SLOTS).map(|_| Mutex::new(SlotState::default())).collect()
}

#[inline]
fn slot_of(chunks: &[Chunk], i: usize) -> &Slot {
    &chunks[i / CHUNK_SLOTS][i % CHUNK_SLOTS]
}

#[cfg(unix)]
struct ForkChild {
    pid: libc::pid_t,
}

/// State captured at trigger for the snapshotter.
struct Pending {
    checkpoint_id: u64,
    /// Keys that existed at trigger; slots `0..count` in insertion order.
    count: usize,
    /// Version slot frozen for the dump (pD).
    side_d: usize,
    path: Option<PathBuf>,
    copy: Vec<(Arc<str>, Value)>,
    #[cfg(unix)]
    child: Option<ForkChild>,
}

#[derive(Debug, Clone)]
pub struct KvConfig {
    pub max_value_size: usize,
    pub dump: DumpTarget,
    /// Keep every dump file instead of only the latest.
    pub keep_dumps: bool,
}

impl Default for KvConfig {
    fn default() -> Self {
        KvConfig {
            max_value_size: 1 << 20,
            dump: DumpTarget::Null,
            keep_dumps: false,
        }
    }
}

struct Shared {
    mode: KvMode,
    chunks: RwLock<Vec<Chunk>>,
    /// Version slot the client writes (pU).
    u: AtomicUsize,
    cycle: Cycle,
    pending: Mutex<Option<Pending>>,
    meter: Arc<Meter>,
    config: KvConfig,
    last_dump: Mutex<Option<PathBuf>>,
    #[cfg(unix)]
    fork_buf: Mutex<Vec<u8>>,
}

/// Taken-phase report of a trigger.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KvTaken {
    pub checkpoint_id: u64,
    pub records: usize,
    pub duration: Duration,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KvDump {
    pub checkpoint_id: u64,
    pub records: u64,
    /// Records taken from memory rather than the previous dump (HG).
    pub from_memory: u64,
    /// WriteToOnline version shares (PB).
    pub shares: u64,
    pub path: Option<PathBuf>,
    pub bytes: u64,
    pub duration: Duration,
    pub reclaimed_versions: u64,
    pub reclaimed_bytes: u64,
    pub live_after_gc: u64,
}

/// Hash-table key-value store whose values are persisted by a snapshot
/// algorithm at key granularity.
///
/// The store itself is the single client: it is owned by one thread and
/// mutated through `&mut self`. [`KvStore::snapshotter`] hands out the
/// handle the background thread dumps through.
pub struct KvStore {
    shared: Arc<Shared>,
    map: HashMap<Arc<str>, u32>,
    /// Client-side copy of the chunk list; only the client appends.
    chunks: Vec<Chunk>,
    changes: u64,
    dataset_bytes: u64,
}

impl KvStore {
    /// Fork mode falls back to whole-store copy where process duplication
    /// is unavailable; check [`KvStore::mode`].
    pub fn new(mode: KvMode, config: KvConfig) -> Result<Self> {
        if let DumpTarget::Dir(dir) = &config.dump {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        }
        let mode = mode.resolve();
        Ok(KvStore {
            shared: Arc::new(Shared {
                mode,
                chunks: RwLock::new(Vec::new()),
                u: AtomicUsize::new(0),
                cycle: Cycle::new(),
                pending: Mutex::new(None),
                meter: Arc::new(Meter::default()),
                config,
                last_dump: Mutex::new(None),
                #[cfg(unix)]
                fork_buf: Mutex::new(if mode == KvMode::Fork {
                    vec![0; 1 << 20]
                } else {
                    Vec::new()
                }),
            }),
            map: HashMap::new(),
            chunks: Vec::new(),
            changes: 0,
            dataset_bytes: 0,
        })
    }

    pub fn mode(&self) -> KvMode {
        self.shared.mode
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Bytes of the latest version of every key.
    pub fn dataset_bytes(&self) -> u64 {
        self.dataset_bytes
    }

    pub fn ledger(&self) -> GcLedger {
        self.shared.meter.ledger()
    }

    /// Updates since the last trigger.
    pub fn changes(&self) -> u64 {
        self.changes
    }

    pub fn previous_snapshot_done(&self) -> bool {
        self.shared.cycle.is_done()
    }

    pub fn snapshotter(&self) -> KvSnapshotter {
        KvSnapshotter {
            shared: Arc::clone(&self.shared),
        }
    }

    pub fn get(&self, key: &str) -> Option<Value> {
        let &id = self.map.get(key)?;
        slot_of(&self.chunks, id as usize)
            .lock()
            .latest(self.shared.mode)
            .cloned()
    }

    pub fn put(&mut self, key: &str, value: &[u8]) -> Result<()> {
        if key.is_empty() {
            return Err(Error::InvalidParameter("empty key".into()));
        }
        if value.len() > self.shared.config.max_value_size {
            return Err(Error::InvalidParameter(format!(
                "value of {} bytes over the {} byte limit",
                value.len(),
                self.shared.config.max_value_size
            )));
        }
        let blob = Arc::new(Blob {
            data: value.into(),
            meter: Arc::clone(&self.shared.meter),
        });
        self.shared.meter.alloc(value.len());
        let (id, fresh) = match self.map.get(key) {
            Some(&id) => (id as usize, None),
            None => {
                let id = self.map.len();
                if id.is_multiple_of(CHUNK_SLOTS) {
                    let chunk = new_chunk();
                    self.chunks.push(Arc::clone(&chunk));
                    self.shared.chunks.write().push(chunk);
                }
                let key: Arc<str> = key.into();
                self.map.insert(Arc::clone(&key), id as u32);
                (id, Some(key))
            }
        };
        let mode = self.shared.mode;
        let mut s = slot_of(&self.chunks, id).lock();
        if fresh.is_some() {
            s.key = fresh;
        }
        let old_len = s.latest(mode).map_or(0, |v| v.len() as u64);
        self.dataset_bytes = self.dataset_bytes - old_len + value.len() as u64;
        match mode {
            KvMode::Hourglass => {
                let u = self.shared.u.load(Ordering::Relaxed);
                s.flags = (s.flags & !HG_READ_FROM) | hg_bit(u) | u as u8;
                s.v[u] = Some(blob);
            }
            KvMode::Piggyback => {
                let u = self.shared.u.load(Ordering::Relaxed);
                s.v[u] = Some(blob);
                s.flags = side_flag(u);
            }
            KvMode::Fork | KvMode::Naive => s.v[0] = Some(blob),
        }
        drop(s);
        self.changes += 1;
        Ok(())
    }

    /// Taken phase, run on the client thread. Skipped (`None`) when nothing
    /// changed since the last trigger.
    pub fn trigger(&mut self) -> Result<Option<KvTaken>> {
        if self.changes == 0 {
            return Ok(None);
        }
        let start = Instant::now();
        let checkpoint_id = self.shared.cycle.begin()?;
        let mut pending = Pending {
            checkpoint_id,
            count: self.map.len(),
            side_d: 0,
            path: self.shared.config.dump.path(checkpoint_id),
            copy: Vec::new(),
            #[cfg(unix)]
            child: None,
        };
        match self.shared.mode {
            KvMode::Hourglass | KvMode::Piggyback => {
                pending.side_d = self.shared.u.fetch_xor(1, Ordering::AcqRel);
            }
            KvMode::Naive => {
                pending.copy = (0..pending.count)
                    .map(|i| {
                        let s = slot_of(&self.chunks, i).lock();
                        (
                            s.key.clone().expect("slot below count has a key"),
                            s.v[0].clone().expect("slot below count has a value"),
                        )
                    })
                    .collect();
            }
            KvMode::Fork => {
                if let Err(e) = self.fork_child(&mut pending) {
                    self.shared.cycle.finish();
                    return Err(e);
                }
            }
        }
        *self.shared.pending.lock() = Some(pending);
        self.changes = 0;
        Ok(Some(KvTaken {
            checkpoint_id,
            records: self.map.len(),
            duration: start.elapsed(),
        }))
    }

    #[cfg(unix)]
    fn fork_child(&self, pending: &mut Pending) -> Result<()> {
        use std::os::fd::AsRawFd;
        let target = pending.path.clone().unwrap_or_else(|| PathBuf::from("/dev/null"));
        let file = std::fs::File::create(&target).map_err(|e| Error::io(target.display().to_string(), e))?;
        let fd = file.as_raw_fd();
        let mut buf = self.shared.fork_buf.lock();
        let (chunks, count) = (&self.chunks, pending.count);
        let pid = crate::sys::process::spawn(|| {
            crate::sys::lower_current_thread_priority();
            dump_in_child(chunks, count, fd, &mut buf)
        })
        .map_err(|e| Error::io("fork", e))?;
        pending.child = Some(ForkChild { pid });
        Ok(())
    }

    #[cfg(not(unix))]
    fn fork_child(&self, _pending: &mut Pending) -> Result<()> {
        Err(Error::Unsupported("fork".into()))
    }
}

/// Child-process body. Allocation-free: records are staged in `buf`.
#[cfg(unix)]
fn dump_in_child(chunks: &[Chunk], count: usize, fd: libc::c_int, buf: &mut [u8]) -> bool {
    use crate::kv::dump::encode_header;
    use crate::sys::process::write_all_fd;

    struct Staged<'a> {
        fd: libc::c_int,
        buf: &'a mut [u8],
        len: usize,
    }

    impl Staged<'_> {
        fn put(&mut self, bytes: &[u8]) -> bool {
            if self.len + bytes.len() > self.buf.len() {
                if !self.flush() {
                    return false;
                }
                if bytes.len() > self.buf.len() {
                    return write_all_fd(self.fd, bytes);
                }
            }
            self.buf[self.len..self.len + bytes.len()].copy_from_slice(bytes);
            self.len += bytes.len();
            true
        }

        fn flush(&mut self) -> bool {
            let ok = write_all_fd(self.fd, &self.buf[..self.len]);
            self.len = 0;
            ok
        }
    }

    let mut out = Staged { fd, buf, len: 0 };
    if !out.put(&encode_header(count as u64)) {
        return false;
    }
    for i in 0..count {
        let s = slot_of(chunks, i).lock();
        let (Some(key), Some(value)) = (&s.key, &s.v[0]) else {
            return false;
        };
        let ok = out.put(&(key.len() as u32).to_le_bytes())
            && out.put(key.as_bytes())
            && out.put(&(value.len() as u32).to_le_bytes())
            && out.put(value);
        if !ok {
            return false;
        }
    }
    out.flush()
}

/// Background-thread handle: dumps pending snapshots and collects garbage.
#[derive(Clone)]
pub struct KvSnapshotter {
    shared: Arc<Shared>,
}

impl KvSnapshotter {
    /// True once a trigger has fully handed its snapshot over.
    pub fn has_pending(&self) -> bool {
        self.shared.pending.lock().is_some()
    }

    pub fn ledger(&self) -> GcLedger {
        self.shared.meter.ledger()
    }

    /// Dumps the pending snapshot, then reclaims versions that are dumped
    /// and no longer current.
    ///
    /// On a write failure the partial file is removed and the snapshot
    /// stays pending, so a retry dumps the same frozen view. A failed fork
    /// child cannot be retried and ends the snapshot.
    pub fn dump(&self) -> Result<KvDump> {
        let start = Instant::now();
        let checkpoint_id = self.shared.cycle.pending()?;
        let mut pending = self.shared.pending.lock().take().ok_or(Error::NoSnapshotTaken)?;
        debug_assert_eq!(pending.checkpoint_id, checkpoint_id);
        let result = match self.shared.mode {
            KvMode::Hourglass => self.dump_hourglass(&pending),
            KvMode::Piggyback => self.dump_piggyback(&pending),
            KvMode::Naive => self.dump_copy(&pending),
            KvMode::Fork => self.wait_child(&mut pending),
        };
        let mut dump = match result {
            Ok(d) => d,
            Err(e) => {
                if let Some(p) = &pending.path {
                    let _ = std::fs::remove_file(p);
                }
                if self.shared.mode == KvMode::Fork {
                    self.shared.cycle.finish();
                } else {
                    *self.shared.pending.lock() = Some(pending);
                }
                return Err(e);
            }
        };
        let (versions, bytes) = self.collect_garbage(&mut pending);
        if let Some(path) = &dump.path {
            let old = self.shared.last_dump.lock().replace(path.clone());
            if let Some(old) = old.filter(|_| !self.shared.config.keep_dumps) {
                let _ = std::fs::remove_file(old);
            }
        }
        self.shared.cycle.finish();
        dump.reclaimed_versions = versions;
        dump.reclaimed_bytes = bytes;
        dump.live_after_gc = self.shared.meter.live.load(Ordering::Relaxed);
        dump.duration = start.elapsed();
        Ok(dump)
    }

    fn chunks(&self) -> Vec<Chunk> {
        self.shared.chunks.read().clone()
    }

    fn dump_base(pending: &Pending) -> KvDump {
        KvDump {
            checkpoint_id: pending.checkpoint_id,
            records: pending.count as u64,
            from_memory: 0,
            shares: 0,
            path: None,
            bytes: 0,
            duration: Duration::ZERO,
            reclaimed_versions: 0,
            reclaimed_bytes: 0,
            live_after_gc: 0,
        }
    }

    /// Keys updated in the frozen period come from pD; the rest are carried
    /// over from the previous dump, whose records are in the same slot order.
    fn dump_hourglass(&self, pending: &Pending) -> Result<KvDump> {
        let chunks = self.chunks();
        let d = pending.side_d;
        let bit = hg_bit(d);
        let prev_path = self.shared.last_dump.lock().clone();
        let mut prev = match (&pending.path, prev_path) {
            (Some(_), Some(p)) => Some(DumpReader::open(&p)?),
            _ => None,
        };
        let mut w = DumpWriter::create(pending.path.clone(), pending.count as u64)?;
        let mut dump = Self::dump_base(pending);
        let (mut k, mut v) = (Vec::new(), Vec::new());
        for i in 0..pending.count {
            crate::sys::yield_every(i, 1024);
            let carried = match &mut prev {
                Some(r) if (i as u64) < r.count() => r.next_into(&mut k, &mut v)?,
                _ => false,
            };
            let fresh = {
                let s = slot_of(&chunks, i).lock();
                (s.flags & bit != 0).then(|| (s.key.clone(), s.v[d].clone()))
            };
            match fresh {
                Some((Some(key), Some(value))) => {
                    w.record(key.as_bytes(), &value)?;
                    dump.from_memory += 1;
                }
                Some(_) => return Err(Error::Sink(format!("slot {i} marked but empty"))),
                None if carried => w.record(&k, &v)?,
                None if pending.path.is_none() => {}
                None => {
                    return Err(Error::Sink(format!(
                        "slot {i} unchanged but missing from the previous dump"
                    )))
                }
            }
        }
        (dump.path, dump.bytes) = w.finish()?;
        Ok(dump)
    }

    /// WriteToOnline, then a full dump of pD.
    fn dump_piggyback(&self, pending: &Pending) -> Result<KvDump> {
        let chunks = self.chunks();
        let d = pending.side_d;
        let u = d ^ 1;
        let mut dump = Self::dump_base(pending);
        for i in 0..pending.count {
            crate::sys::yield_every(i, 1024);
            let mut s = slot_of(&chunks, i).lock();
            if s.flags == side_flag(d) {
                s.v[u] = s.v[d].clone();
                s.flags = 0;
                dump.shares += 1;
            }
        }
        let mut w = DumpWriter::create(pending.path.clone(), pending.count as u64)?;
        for i in 0..pending.count {
            crate::sys::yield_every(i, 1024);
            let (key, value) = {
                let s = slot_of(&chunks, i).lock();
                (s.key.clone(), s.v[d].clone())
            };
            let (Some(key), Some(value)) = (key, value) else {
                return Err(Error::Sink(format!("slot {i} has no frozen version")));
            };
            w.record(key.as_bytes(), &value)?;
        }
        (dump.path, dump.bytes) = w.finish()?;
        Ok(dump)
    }

    fn dump_copy(&self, pending: &Pending) -> Result<KvDump> {
        let mut w = DumpWriter::create(pending.path.clone(), pending.count as u64)?;
        for (key, value) in &pending.copy {
            w.record(key.as_bytes(), value)?;
        }
        let mut dump = Self::dump_base(pending);
        (dump.path, dump.bytes) = w.finish()?;
        Ok(dump)
    }

    #[cfg(unix)]
    fn wait_child(&self, pending: &mut Pending) -> Result<KvDump> {
        use crate::sys::process;
        let child = pending
            .child
            .take()
            .ok_or_else(|| Error::ChildFailed("no child for pending snapshot".into()))?;
        let status = loop {
            match process::try_wait(child.pid).map_err(|e| Error::io("waitpid", e))? {
                Some(s) => break s,
                None => std::thread::sleep(Duration::from_micros(200)),
            }
        };
        if status != 0 {
            return Err(Error::ChildFailed(format!(
                "pid {} exited with status {status}",
                child.pid
            )));
        }
        let mut dump = Self::dump_base(pending);
        dump.path = pending.path.clone();
        dump.bytes = match &dump.path {
            Some(p) => std::fs::metadata(p)
                .map_err(|e| Error::io(p.display().to_string(), e))?
                .len(),
            None => 0,
        };
        Ok(dump)
    }

    #[cfg(not(unix))]
    fn wait_child(&self, _pending: &mut Pending) -> Result<KvDump> {
        Err(Error::Unsupported("fork".into()))
    }

    /// A version is garbage once it has been dumped and is no longer the
    /// key's latest.
    fn collect_garbage(&self, pending: &mut Pending) -> (u64, u64) {
        let mut garbage = Vec::new();
        match self.shared.mode {
            KvMode::Hourglass | KvMode::Piggyback => {
                let chunks = self.chunks();
                let d = pending.side_d;
                for i in 0..pending.count {
                    crate::sys::yield_every(i, 1024);
                    let mut s = slot_of(&chunks, i).lock();
                    let stale = if self.shared.mode == KvMode::Hourglass {
                        s.flags &= !hg_bit(d);
                        Some(((s.flags & HG_READ_FROM) as usize) ^ 1)
                    } else {
                        (s.flags == side_flag(d ^ 1)).then_some(d)
                    };
                    if let Some(v) = stale.and_then(|side| s.v[side].take()) {
                        garbage.push(v);
                    }
                }
            }
            KvMode::Naive => garbage.extend(pending.copy.drain(..).map(|(_, v)| v)),
            KvMode::Fork => {}
        }
        let (mut versions, mut bytes) = (0, 0);
        for v in garbage {
            if Arc::strong_count(&v) == 1 {
                versions += 1;
                bytes += v.len() as u64;
            }
        }
        let m = &self.shared.meter;
        m.reclaimed_versions.fetch_add(versions, Ordering::Relaxed);
        m.reclaimed_bytes.fetch_add(bytes, Ordering::Relaxed);
        (versions, bytes)
    }
}

impl Drop for Shared {
    fn drop(&mut self) {
        #[cfg(unix)]
        if let Some(child) = self.pending.get_mut().as_mut().and_then(|p| p.child.take()) {
            let _ = crate::sys::process::wait_blocking(child.pid);
        }
    }
}
