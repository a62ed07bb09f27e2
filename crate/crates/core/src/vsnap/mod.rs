//! Virtual consistent snapshots over a multi-threaded strict two-phase
//! locking executor.
//!
//! Transactions may be in flight when a snapshot is triggered. The snapshot
//! is consistent with respect to a logical point instead: a prefix of the
//! commit order for CALC, or the set of transactions bound before the
//! designator swap for vHG and vPB.

mod calc;
mod executor;
mod lock;
mod txn;
mod vhg;
mod vpb;

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

pub use calc::{Calc, CalcPhase};
pub use executor::{run_virtual, Executor, TriggerPolicy, TxnSource, VirtualConfig, VirtualRun, DEFAULT_LOCK_TIMEOUT};
pub use lock::LockManager;
pub use txn::{CommitLog, CommitRecord, Transaction, TxnGenerator, TxnOutcome, TxnStatus};
pub use vhg::VirtualHourglass;
pub use vpb::VirtualPiggyback;

use crate::error::{Error, Result};
use crate::persist::SnapshotSink;
use crate::store::{Layout, PageImage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VirtualKind {
    Calc,
    Hourglass,
    Piggyback,
}

impl VirtualKind {
    pub const ALL: [VirtualKind; 3] = [VirtualKind::Calc, VirtualKind::Hourglass, VirtualKind::Piggyback];

    pub fn id(self) -> &'static str {
        match self {
            VirtualKind::Calc => "calc",
            VirtualKind::Hourglass => "vhg",
            VirtualKind::Piggyback => "vpb",
        }
    }
}

impl fmt::Display for VirtualKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for VirtualKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        VirtualKind::ALL
            .into_iter()
            .find(|k| k.id() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown virtual engine '{s}'")))
    }
}

/// Which committed transactions a virtual snapshot contains.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConsistencyPoint {
    /// Commits with sequence number below the bound (CALC).
    CommitsBefore(u64),
    /// Transactions bound in an epoch below the bound (vHG, vPB).
    EpochsBelow(u64),
}

impl ConsistencyPoint {
    pub fn includes(&self, record: &CommitRecord) -> bool {
        match *self {
            ConsistencyPoint::CommitsBefore(seq) => record.seq < seq,
            ConsistencyPoint::EpochsBelow(epoch) => record.epoch < epoch,
        }
    }
}

/// A transaction's attachment to an engine, fixed once all its locks are held.
#[derive(Debug, Clone, Default)]
pub struct Binding {
    pub epoch: u64,
    /// Store the transaction writes (vHG, vPB).
    pub side: usize,
    /// Phase the transaction started in (CALC).
    pub phase: CalcPhase,
    /// Pages this transaction copied into the stable store (CALC).
    pub(crate) copied: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VirtualSnapshot {
    pub checkpoint_id: u64,
    pub point: ConsistencyPoint,
    /// Time spent waiting for in-flight transactions to drain.
    pub drain_wait: Duration,
    /// Trigger to close of the sink.
    pub duration: Duration,
    pub pages_emitted: u64,
    pub piggyback_copies: u64,
}

#[derive(Debug, Default)]
pub struct VirtualCounters {
    snapshot_copies: AtomicU64,
    catchup_copies: AtomicU64,
    piggyback_copies: AtomicU64,
    commits: AtomicU64,
    aborts: AtomicU64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct VirtualCounterSnapshot {
    /// Synchronous pre-image copies made by transactions for a snapshot.
    pub snapshot_copies: u64,
    /// Copies bringing a stale page up to date before a partial write.
    pub catchup_copies: u64,
    /// Snapshotter-side copies into the online store.
    pub piggyback_copies: u64,
    pub commits: u64,
    pub aborts: u64,
}

impl VirtualCounters {
    pub(crate) fn snapshot_copy(&self) {
        self.snapshot_copies.fetch_add(1, Ordering::Relaxed);
    }

    pub(crate) fn catchup_copy(&self) {
        self.catchup_copies.fetch_add(1, Ordering::Relaxed);
    }

    pub(crate) fn piggyback_copy(&self) {
        self.piggyback_copies.fetch_add(1, Ordering::Relaxed);
    }

    pub(crate) fn commit(&self) {
        self.commits.fetch_add(1, Ordering::Relaxed);
    }

    pub(crate) fn abort(&self) {
        self.aborts.fetch_add(1, Ordering::Relaxed);
    }

    pub fn snapshot(&self) -> VirtualCounterSnapshot {
        VirtualCounterSnapshot {
            snapshot_copies: self.snapshot_copies.load(Ordering::Relaxed),
            catchup_copies: self.catchup_copies.load(Ordering::Relaxed),
            piggyback_copies: self.piggyback_copies.load(Ordering::Relaxed),
            commits: self.commits.load(Ordering::Relaxed),
            aborts: self.aborts.load(Ordering::Relaxed),
        }
    }
}

/// Storage engine driven by many transaction threads and one snapshotter.
///
/// The executor calls `bind` after acquiring every lock of a transaction,
/// `read`/`write` while holding them, `commit` before releasing them, and
/// `release` once the transaction's writes (and any undo) are complete.
pub trait VirtualEngine: Send + Sync {
    fn kind(&self) -> VirtualKind;

    fn layout(&self) -> &Layout;

    fn bind(&self) -> Binding;

    fn read(&self, binding: &Binding, page: usize, item: usize) -> u32;

    /// Returns the value overwritten, for the undo list.
    fn write(&self, binding: &mut Binding, page: usize, item: usize, value: u32) -> u32;

    /// Assigns the commit sequence number.
    fn commit(&self, binding: &Binding) -> u64;

    fn release(&self, binding: Binding);

    fn previous_snapshot_done(&self) -> bool;

    /// Starts a snapshot; returns its checkpoint id.
    fn trigger(&self) -> Result<u64>;

    /// Waits out in-flight transactions as the protocol requires, then dumps
    /// the virtual snapshot into `sink`.
    fn traverse(&self, sink: &mut dyn SnapshotSink) -> Result<VirtualSnapshot>;

    fn counters(&self) -> &VirtualCounters;

    /// Latest committed-or-in-flight value of every item.
    fn current_image(&self) -> PageImage;
}

pub fn build_virtual(kind: VirtualKind, initial: &PageImage) -> Box<dyn VirtualEngine> {
    match kind {
        VirtualKind::Calc => Box::new(Calc::new(initial)),
        VirtualKind::Hourglass => Box::new(VirtualHourglass::new(initial)),
        VirtualKind::Piggyback => Box::new(VirtualPiggyback::new(initial)),
    }
}

/// Commit sequencing plus the epoch/designator machinery shared by vHG and
/// vPB. Binding and swapping are serialized by `gate`, so a transaction is
/// attached wholly before or wholly after a swap.
#[derive(Debug, Default)]
pub(crate) struct EpochGate {
    gate: parking_lot::RwLock<()>,
    epoch: AtomicU64,
    /// Side clients currently bind to (pU).
    u: std::sync::atomic::AtomicUsize,
    /// Transactions bound in even and odd epochs still running.
    active: [AtomicU64; 2],
    commit_seq: parking_lot::Mutex<u64>,
}

impl EpochGate {
    pub(crate) fn bind(&self) -> Binding {
        let _g = self.gate.read();
        let epoch = self.epoch.load(Ordering::Acquire);
        self.active[(epoch & 1) as usize].fetch_add(1, Ordering::AcqRel);
        Binding {
            epoch,
            side: self.u.load(Ordering::Acquire),
            ..Binding::default()
        }
    }

    pub(crate) fn release(&self, binding: &Binding) {
        self.active[(binding.epoch & 1) as usize].fetch_sub(1, Ordering::AcqRel);
    }

    pub(crate) fn commit(&self) -> u64 {
        let mut seq = self.commit_seq.lock();
        let s = *seq;
        *seq += 1;
        s
    }

    pub(crate) fn side(&self) -> usize {
        self.u.load(Ordering::Acquire)
    }

    /// Swaps pU and pD and opens a new epoch. Returns the new epoch.
    pub(crate) fn swap(&self) -> u64 {
        let _g = self.gate.write();
        self.u.fetch_xor(1, Ordering::AcqRel);
        self.epoch.fetch_add(1, Ordering::AcqRel) + 1
    }

    /// Detect_and_Waiting: blocks until every transaction bound before the
    /// swap that opened `epoch` has released.
    pub(crate) fn wait_drained(&self, epoch: u64) -> Duration {
        let start = std::time::Instant::now();
        let slot = &self.active[((epoch - 1) & 1) as usize];
        let mut spins = 0;
        while slot.load(Ordering::Acquire) > 0 {
            crate::sys::backoff(&mut spins);
        }
        start.elapsed()
    }
}

#[cfg(test)]
pub(crate) mod testing {
    use super::{Binding, VirtualEngine};
    use crate::store::{Layout, PageImage};

    /// Six single-item pages holding {3, 4, 6, 7, 8, 5}.
    pub(crate) fn table_initial() -> PageImage {
        PageImage::from_items(Layout::single_item(6).unwrap(), &[3, 4, 6, 7, 8, 5]).unwrap()
    }

    pub(crate) fn finish(engine: &dyn VirtualEngine, binding: Binding) {
        engine.commit(&binding);
        engine.release(binding);
    }
}
