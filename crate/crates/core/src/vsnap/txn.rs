use parking_lot::Mutex;

use crate::store::PageImage;
use crate::vsnap::ConsistencyPoint;
use crate::workload::{MixedStream, MixedWorkload, Op};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TxnStatus {
    #[default]
    Active,
    Committed,
    Aborted,
}

/// One-shot transaction with its read and write sets declared up front.
///
/// Each write `(page, value)` lands in item `layout.item_slot(value)` of the
/// page, the same placement trace updates use.
#[derive(Debug, Clone, Default)]
pub struct Transaction {
    pub id: u64,
    pub write_set: Vec<(usize, u32)>,
    pub read_set: Vec<usize>,
    /// Epoch the transaction bound to; set once its locks are held.
    pub start_epoch: Option<u64>,
    pub status: TxnStatus,
    /// Roll back after the writes instead of committing.
    pub abort_after_writes: bool,
}

impl Transaction {
    pub fn new(id: u64, write_set: Vec<(usize, u32)>, read_set: Vec<usize>) -> Self {
        Transaction {
            id,
            write_set,
            read_set,
            ..Transaction::default()
        }
    }

    pub fn writes(id: u64, write_set: &[(usize, u32)]) -> Self {
        Transaction::new(id, write_set.to_vec(), Vec::new())
    }

    /// Sorted, de-duplicated pages the transaction locks.
    pub fn lock_set(&self) -> Vec<usize> {
        let mut pages: Vec<usize> = self
            .write_set
            .iter()
            .map(|&(p, _)| p)
            .chain(self.read_set.iter().copied())
            .collect();
        pages.sort_unstable();
        pages.dedup();
        pages
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TxnOutcome {
    Committed { seq: u64 },
    Aborted { reason: String },
}

impl TxnOutcome {
    pub fn is_committed(&self) -> bool {
        matches!(self, TxnOutcome::Committed { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommitRecord {
    pub seq: u64,
    pub txn_id: u64,
    pub epoch: u64,
    pub writes: Vec<(usize, u32)>,
}

/// Committed transactions, in arbitrary arrival order; `seq` gives the
/// serialization order.
#[derive(Debug, Default)]
pub struct CommitLog {
    records: Mutex<Vec<CommitRecord>>,
}

impl CommitLog {
    pub fn new() -> Self {
        CommitLog::default()
    }

    pub fn push(&self, record: CommitRecord) {
        self.records.lock().push(record);
    }

    pub fn len(&self) -> usize {
        self.records.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records sorted by commit sequence.
    pub fn ordered(&self) -> Vec<CommitRecord> {
        let mut records = self.records.lock().clone();
        records.sort_unstable_by_key(|r| r.seq);
        records
    }

    /// Applies, in commit order, every record `point` includes (all of them
    /// when `point` is `None`) on top of `initial`.
    pub fn replay(&self, initial: &PageImage, point: Option<ConsistencyPoint>) -> PageImage {
        let mut image = initial.clone();
        let layout = *image.layout();
        for r in self.ordered() {
            if point.is_some_and(|pt| !pt.includes(&r)) {
                continue;
            }
            for &(page, value) in &r.writes {
                image.set_item(page, layout.item_slot(value), value);
            }
        }
        image
    }
}

/// Random transactions drawn from a [`MixedWorkload`] whose records are pages.
pub struct TxnGenerator {
    ops: MixedStream,
    ops_per_txn: usize,
    next_id: u64,
    id_stride: u64,
}

impl TxnGenerator {
    /// Thread `thread` of `threads` draws ids `thread, thread + threads, ...`
    /// so ids stay unique across threads.
    pub fn new(workload: &MixedWorkload, ops_per_txn: usize, thread: usize, seed: u64) -> Self {
        TxnGenerator {
            ops: workload.endless(thread, seed),
            ops_per_txn: ops_per_txn.max(1),
            next_id: thread as u64,
            id_stride: workload.threads as u64,
        }
    }

    pub fn next_txn(&mut self) -> Transaction {
        let id = self.next_id;
        self.next_id += self.id_stride;
        let mut txn = Transaction::new(id, Vec::new(), Vec::new());
        for k in 0..self.ops_per_txn {
            match self.ops.next().expect("endless stream") {
                Op::Update(page) => {
                    let value = (id.wrapping_mul(self.ops_per_txn as u64) + k as u64 + 1) as u32;
                    txn.write_set.push((page as usize, value));
                }
                Op::Read(page) => txn.read_set.push(page as usize),
            }
        }
        txn
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::Layout;

    #[test]
    fn replay_respects_seq_and_point() {
        let init = PageImage::zeroed(Layout::single_item(2).unwrap());
        let log = CommitLog::new();
        log.push(CommitRecord {
            seq: 1,
            txn_id: 9,
            epoch: 1,
            writes: vec![(0, 2)],
        });
        log.push(CommitRecord {
            seq: 0,
            txn_id: 4,
            epoch: 0,
            writes: vec![(0, 1), (1, 5)],
        });
        assert_eq!(log.replay(&init, None).first_items(), vec![2, 5]);
        let pt = ConsistencyPoint::EpochsBelow(1);
        assert_eq!(log.replay(&init, Some(pt)).first_items(), vec![1, 5]);
        let pt = ConsistencyPoint::CommitsBefore(0);
        assert_eq!(log.replay(&init, Some(pt)).first_items(), vec![0, 0]);
    }

    #[test]
    fn lock_set_sorted_unique() {
        let t = Transaction::new(0, vec![(5, 1), (2, 2), (5, 3)], vec![2, 0]);
        assert_eq!(t.lock_set(), vec![0, 2, 5]);
    }

    #[test]
    fn generator_ids_interleave() {
        let w = MixedWorkload::new(50, 0, 0.5, 2).unwrap();
        let mut g = TxnGenerator::new(&w, 4, 1, 3);
        let a = g.next_txn();
        let b = g.next_txn();
        assert_eq!((a.id, b.id), (1, 3));
        assert_eq!(a.write_set.len() + a.read_set.len(), 4);
    }
}
