//! The client/snapshotter interface shared by every physical algorithm.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::time::Duration;

use crate::error::{Error, Result};
use crate::persist::SnapshotSink;
use crate::store::{Layout, PageImage};
use crate::workload::TraceEntry;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AlgorithmKind {
    Naive,
    CopyOnUpdate,
    Fork,
    Zigzag,
    PingPong,
    Hourglass,
    Piggyback,
}

impl AlgorithmKind {
    pub const ALL: [AlgorithmKind; 7] = [
        AlgorithmKind::Naive,
        AlgorithmKind::CopyOnUpdate,
        AlgorithmKind::Fork,
        AlgorithmKind::Zigzag,
        AlgorithmKind::PingPong,
        AlgorithmKind::Hourglass,
        AlgorithmKind::Piggyback,
    ];

    pub fn id(self) -> &'static str {
        match self {
            AlgorithmKind::Naive => "ns",
            AlgorithmKind::CopyOnUpdate => "cou",
            AlgorithmKind::Fork => "fork",
            AlgorithmKind::Zigzag => "zz",
            AlgorithmKind::PingPong => "pp",
            AlgorithmKind::Hourglass => "hg",
            AlgorithmKind::Piggyback => "pb",
        }
    }

    /// Page-store memory as a multiple of the dataset size.
    pub fn memory_multiplier(self) -> usize {
        match self {
            AlgorithmKind::PingPong => 3,
            _ => 2,
        }
    }

    /// Whether a traverse emits only the pages changed since the last snapshot.
    pub fn is_incremental(self) -> bool {
        matches!(self, AlgorithmKind::PingPong | AlgorithmKind::Hourglass)
    }

    pub fn is_available(self) -> bool {
        match self {
            AlgorithmKind::Fork => cfg!(unix),
            _ => true,
        }
    }
}

impl fmt::Display for AlgorithmKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for AlgorithmKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AlgorithmKind::ALL
            .into_iter()
            .find(|k| k.id() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown algorithm '{s}'")))
    }
}

/// Work done while the client was excluded at trigger time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TakenPhase {
    pub checkpoint_id: u64,
    /// Page copies, flag writes, or designator swaps performed; for fork the
    /// number of pages whose mappings were duplicated.
    pub work: u64,
    pub duration: Duration,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TraverseStats {
    pub checkpoint_id: u64,
    pub pages_emitted: u64,
    pub pages_from_last: u64,
    /// Pages copied by the snapshotter into the online copy (Piggyback).
    pub piggyback_copies: u64,
    pub duration: Duration,
}

/// Running totals for one algorithm instance.
///
/// Every field except `piggyback_copies` is only ever bumped by the client
/// thread (the taken phase runs there too), so those use a plain load and
/// store instead of a locked read-modify-write on the hot path.
#[derive(Debug, Default)]
pub struct Counters {
    logical_writes: AtomicU64,
    physical_writes: AtomicU64,
    snapshot_copies: AtomicU64,
    piggyback_copies: AtomicU64,
    catchup_copies: AtomicU64,
    taken_work: AtomicU64,
    checkpoints: AtomicU64,
}

/// Plain-value copy of [`Counters`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CounterSnapshot {
    /// Client `write` calls.
    pub logical_writes: u64,
    /// Item stores performed on behalf of client writes.
    pub physical_writes: u64,
    /// Synchronous page copies forced by snapshotting: the bulk copy of the
    /// naive snapshot and the pre-image copies of copy-on-update.
    pub snapshot_copies: u64,
    /// Asynchronous page copies made by the snapshotter (Piggyback).
    pub piggyback_copies: u64,
    /// Copies that bring a page of the client's target copy up to date before
    /// a single-item write lands in it. Only needed with multi-item pages.
    pub catchup_copies: u64,
    pub taken_work: u64,
    pub checkpoints: u64,
}

#[inline]
fn bump(cell: &AtomicU64, n: u64) {
    cell.store(cell.load(Ordering::Relaxed) + n, Ordering::Relaxed);
}

impl Counters {
    #[inline]
    pub(crate) fn write(&self, physical: u64) {
        bump(&self.logical_writes, 1);
        bump(&self.physical_writes, physical);
    }

    #[inline]
    pub(crate) fn snapshot_copies(&self, n: u64) {
        bump(&self.snapshot_copies, n);
    }

    #[inline]
    pub(crate) fn piggyback_copy(&self) {
        self.piggyback_copies.fetch_add(1, Ordering::Relaxed);
    }

    #[inline]
    pub(crate) fn catchup_copy(&self) {
        bump(&self.catchup_copies, 1);
    }

    pub(crate) fn taken(&self, work: u64) {
        bump(&self.taken_work, work);
        bump(&self.checkpoints, 1);
    }

    pub fn snapshot(&self) -> CounterSnapshot {
        CounterSnapshot {
            logical_writes: self.logical_writes.load(Ordering::Relaxed),
            physical_writes: self.physical_writes.load(Ordering::Relaxed),
            snapshot_copies: self.snapshot_copies.load(Ordering::Relaxed),
            piggyback_copies: self.piggyback_copies.load(Ordering::Relaxed),
            catchup_copies: self.catchup_copies.load(Ordering::Relaxed),
            taken_work: self.taken_work.load(Ordering::Relaxed),
            checkpoints: self.checkpoints.load(Ordering::Relaxed),
        }
    }
}

/// Consistent snapshot algorithm over a page array.
///
/// Exactly one client thread calls `read`/`write`; exactly one snapshotter
/// thread calls `traverse_snapshot`. `take_snapshot` (and hence `trigger`)
/// must run while the client is excluded: the drivers in this crate call it on
/// the client thread between update batches, which is the quiescent point the
/// framework assumes.
pub trait SnapshotAlgorithm: Send + Sync {
    fn kind(&self) -> AlgorithmKind;

    fn layout(&self) -> &Layout;

    /// Latest value of an item as seen by the client.
    fn read(&self, page: usize, item: usize) -> u32;

    fn write(&self, page: usize, item: usize, value: u32);

    fn previous_snapshot_done(&self) -> bool;

    /// Taken phase. Fails with [`Error::PreviousSnapshotPending`] while the
    /// previous snapshot is still being traversed.
    fn take_snapshot(&self) -> Result<TakenPhase>;

    /// Access phase: walks the snapshot captured by the last `take_snapshot`
    /// into `sink`, then marks the snapshot done.
    fn traverse_snapshot(&self, sink: &mut dyn SnapshotSink) -> Result<TraverseStats>;

    fn counters(&self) -> &Counters;

    /// Bytes held in page stores (flag arrays excluded).
    fn page_store_bytes(&self) -> usize;

    /// True when the reported page-store bytes are logical and the OS shares
    /// physical pages copy-on-write.
    fn shares_pages_with_os(&self) -> bool {
        false
    }

    /// Takes a snapshot if the previous one is done, otherwise does nothing.
    fn trigger(&self) -> Result<Option<TakenPhase>> {
        if !self.previous_snapshot_done() {
            return Ok(None);
        }
        self.take_snapshot().map(Some)
    }

    #[inline]
    fn apply(&self, entry: TraceEntry) {
        self.write(entry.page as usize, self.layout().item_slot(entry.value), entry.value);
    }

    /// Every item as the client currently reads it.
    fn client_view(&self) -> PageImage {
        let layout = *self.layout();
        let mut image = PageImage::zeroed(layout);
        for p in 0..layout.page_count() {
            for i in 0..layout.items_per_page() {
                image.set_item(p, i, self.read(p, i));
            }
        }
        image
    }
}

/// Snapshot-cycle bookkeeping: the done flag and checkpoint numbering.
#[derive(Debug)]
pub(crate) struct Cycle {
    done: AtomicBool,
    last_id: AtomicU64,
}

impl Cycle {
    pub(crate) fn new() -> Self {
        Cycle {
            done: AtomicBool::new(true),
            last_id: AtomicU64::new(0),
        }
    }

    pub(crate) fn is_done(&self) -> bool {
        self.done.load(Ordering::Acquire)
    }

    /// Starts a snapshot; returns its checkpoint id.
    pub(crate) fn begin(&self) -> Result<u64> {
        if self
            .done
            .compare_exchange(true, false, Ordering::AcqRel, Ordering::Acquire)
            .is_err()
        {
            return Err(Error::PreviousSnapshotPending);
        }
        Ok(self.last_id.fetch_add(1, Ordering::AcqRel) + 1)
    }

    /// Id of the snapshot awaiting traversal.
    pub(crate) fn pending(&self) -> Result<u64> {
        if self.is_done() {
            return Err(Error::NoSnapshotTaken);
        }
        Ok(self.last_id.load(Ordering::Acquire))
    }

    pub(crate) fn finish(&self) {
        self.done.store(true, Ordering::Release);
    }
}

/// Construction options shared by all algorithms.
#[derive(Debug, Clone, Default)]
pub struct AlgorithmConfig {
    /// Directory for fork's child-process dump files; the system temp
    /// directory when unset.
    pub spool_dir: Option<PathBuf>,
}

pub fn build(kind: AlgorithmKind, initial: &PageImage, config: &AlgorithmConfig) -> Result<Box<dyn SnapshotAlgorithm>> {
    use crate::algorithms::*;
    Ok(match kind {
        AlgorithmKind::Naive => Box::new(NaiveSnapshot::new(initial)),
        AlgorithmKind::CopyOnUpdate => Box::new(CopyOnUpdate::new(initial)),
        AlgorithmKind::Fork => Box::new(ForkSnapshot::new(initial, config.spool_dir.clone())?),
        AlgorithmKind::Zigzag => Box::new(Zigzag::new(initial)),
        AlgorithmKind::PingPong => Box::new(PingPong::new(initial)),
        AlgorithmKind::Hourglass => Box::new(Hourglass::new(initial)),
        AlgorithmKind::Piggyback => Box::new(Piggyback::new(initial)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_round_trip() {
        for k in AlgorithmKind::ALL {
            assert_eq!(k.id().parse::<AlgorithmKind>().unwrap(), k);
        }
        assert!("calc".parse::<AlgorithmKind>().is_err());
    }

    #[test]
    fn cycle_rules() {
        let c = Cycle::new();
        assert!(matches!(c.pending(), Err(Error::NoSnapshotTaken)));
        assert_eq!(c.begin().unwrap(), 1);
        assert!(matches!(c.begin(), Err(Error::PreviousSnapshotPending)));
        assert_eq!(c.pending().unwrap(), 1);
        c.finish();
        assert_eq!(c.begin().unwrap(), 2);
    }
}
