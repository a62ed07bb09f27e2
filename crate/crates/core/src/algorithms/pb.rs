use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use crate::algo::{AlgorithmKind, Counters, Cycle, SnapshotAlgorithm, TakenPhase, TraverseStats};
use crate::algorithms::emit_store_page;
use crate::error::Result;
use crate::persist::{SnapshotKind, SnapshotSink};
use crate::store::{Layout, PageImage, PageStore, TriStateArray};

/// Flag value meaning "latest version lives in store `side`".
#[inline]
pub(crate) fn side_flag(side: usize) -> u8 {
    side as u8 + 1
}

/// Piggyback: pointer swap plus a snapshotter-side copy of out-of-date pages
/// into the online store, so every traverse can dump a full snapshot.
pub struct Piggyback {
    /// `stores[0]` is `D`, `stores[1]` is the shadow `D̄`.
    stores: [PageStore; 2],
    /// 0: copies equal; 1: latest in `D`; 2: latest in `D̄`;
    /// [`TriStateArray::CLAIMED`] while a page is being brought up to date.
    flags: TriStateArray,
    u: AtomicUsize,
    cycle: Cycle,
    counters: Counters,
}

impl Piggyback {
    pub fn new(initial: &PageImage) -> Self {
        Piggyback {
            stores: [PageStore::from_image(initial), PageStore::from_image(initial)],
            flags: TriStateArray::new(initial.layout().page_count()),
            u: AtomicUsize::new(0),
            cycle: Cycle::new(),
            counters: Counters::default(),
        }
    }

    pub fn store(&self, copy: usize) -> &PageStore {
        &self.stores[copy]
    }

    pub fn flags(&self) -> &TriStateArray {
        &self.flags
    }

    pub fn update_side(&self) -> usize {
        self.u.load(Ordering::Acquire)
    }

    /// Copies every page whose latest version sits in pD over to pU and
    /// marks the pair equal. Pages the client already claimed are skipped.
    fn write_to_online(&self, u: usize) -> u64 {
        let d = u ^ 1;
        let stale = side_flag(d);
        let mut copies = 0;
        for k in 0..self.layout().page_count() {
            if self.flags.get(k) == stale && self.flags.try_claim(k, stale) {
                self.stores[u].copy_page_from(&self.stores[d], k);
                self.flags.set(k, 0);
                self.counters.piggyback_copy();
                copies += 1;
            }
        }
        copies
    }

    /// Page not yet written on this side: claim it, catching up from pD or
    /// waiting out the snapshotter's copy.
    #[cold]
    #[inline(never)]
    fn write_slow(&self, u: usize, page: usize, item: usize, value: u32) {
        let mine = side_flag(u);
        let mut spins = 0;
        loop {
            let f = self.flags.get(page);
            if f == mine {
                self.stores[u].write_item(page, item, value);
                break;
            }
            if f == 0 {
                self.stores[u].write_item(page, item, value);
                self.flags.set(page, mine);
                break;
            }
            if f != TriStateArray::CLAIMED && self.flags.try_claim(page, f) {
                // Latest version is in pD and the snapshotter has not copied
                // it yet: bring pU's page up to date before the item lands.
                if self.layout().items_per_page() > 1 {
                    self.stores[u].copy_page_from(&self.stores[u ^ 1], page);
                    self.counters.catchup_copy();
                }
                self.stores[u].write_item(page, item, value);
                self.flags.set(page, mine);
                break;
            }
            crate::sys::backoff(&mut spins);
        }
    }
}

impl SnapshotAlgorithm for Piggyback {
    fn kind(&self) -> AlgorithmKind {
        AlgorithmKind::Piggyback
    }

    fn layout(&self) -> &Layout {
        self.stores[0].layout()
    }

    #[inline]
    fn read(&self, page: usize, item: usize) -> u32 {
        let copy = match self.flags.get(page) {
            2 => 1,
            TriStateArray::CLAIMED => self.u.load(Ordering::Relaxed) ^ 1,
            _ => 0,
        };
        self.stores[copy].read_item(page, item)
    }

    #[inline]
    fn write(&self, page: usize, item: usize, value: u32) {
        let u = self.u.load(Ordering::Relaxed);
        if self.flags.get(page) == side_flag(u) {
            self.stores[u].write_item(page, item, value);
        } else {
            self.write_slow(u, page, item, value);
        }
        self.counters.write(1);
    }

    fn previous_snapshot_done(&self) -> bool {
        self.cycle.is_done()
    }

    fn take_snapshot(&self) -> Result<TakenPhase> {
        let start = Instant::now();
        let checkpoint_id = self.cycle.begin()?;
        self.u.fetch_xor(1, Ordering::AcqRel);
        self.counters.taken(1);
        Ok(TakenPhase {
            checkpoint_id,
            work: 1,
            duration: start.elapsed(),
        })
    }

    /// WriteToOnline followed by Dump-All of pD.
    fn traverse_snapshot(&self, sink: &mut dyn SnapshotSink) -> Result<TraverseStats> {
        let start = Instant::now();
        let checkpoint_id = self.cycle.pending()?;
        let layout = *self.layout();
        let u = self.u.load(Ordering::Acquire);
        let piggyback_copies = self.write_to_online(u);
        sink.open(checkpoint_id, &layout, SnapshotKind::Full)?;
        let mut buf = vec![0u8; layout.page_size()];
        for p in 0..layout.page_count() {
            emit_store_page(sink, &self.stores[u ^ 1], p, &mut buf)?;
        }
        sink.close()?;
        self.cycle.finish();
        Ok(TraverseStats {
            checkpoint_id,
            pages_emitted: layout.page_count() as u64,
            pages_from_last: 0,
            piggyback_copies,
            duration: start.elapsed(),
        })
    }

    fn counters(&self) -> &Counters {
        &self.counters
    }

    fn page_store_bytes(&self) -> usize {
        self.stores.iter().map(PageStore::allocated_bytes).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algorithms::testing::*;
    use crate::persist::MemorySink;

    #[test]
    fn fig6_running_example() {
        let init = example_initial();
        let pb = Piggyback::new(&init);
        pb.write(0, 0, 13);
        assert_eq!(pb.store(0).read_item(0, 0), 13);
        assert_eq!(pb.flags().get(0), 1);
        pb.write(2, 0, 16);
        pb.write(3, 0, 17);
        assert_eq!(pb.flags().to_vec(), vec![1, 0, 1, 1, 0, 0]);

        pb.take_snapshot().unwrap();
        assert_eq!(pb.update_side(), 1);
        pb.write(1, 0, 14);
        assert_eq!(pb.store(1).read_item(1, 0), 14);
        assert_eq!(pb.flags().get(1), 2);
        assert_eq!(pb.read(1, 0), 14);

        let mut sink = MemorySink::new(init);
        let stats = pb.traverse_snapshot(&mut sink).unwrap();
        assert_eq!(stats.piggyback_copies, 3);
        assert_eq!(sink.image().first_items(), vec![13, 4, 16, 17, 8, 5]);
        for p in [0, 2, 3] {
            assert_eq!(pb.store(1).read_item(p, 0), pb.store(0).read_item(p, 0));
        }
        assert_eq!(pb.flags().to_vec(), vec![0, 2, 0, 0, 0, 0]);
        assert_eq!(pb.store(1).to_image(0).first_items(), vec![13, 14, 16, 17, 8, 5]);
    }

    #[test]
    fn client_write_before_piggyback_copy_is_kept() {
        let init = example_initial();
        let pb = Piggyback::new(&init);
        period1(&pb);
        pb.take_snapshot().unwrap();
        pb.write(0, 0, 23);
        let mut sink = MemorySink::new(init);
        let stats = pb.traverse_snapshot(&mut sink).unwrap();
        assert_eq!(stats.piggyback_copies, 2);
        assert_eq!(pb.read(0, 0), 23);
        assert_eq!(sink.image().first_items(), vec![13, 4, 16, 17, 8, 5]);
    }

    #[test]
    fn all_equal_flags_copy_nothing() {
        let init = example_initial();
        let pb = Piggyback::new(&init);
        let mut sink = MemorySink::new(init.clone());
        pb.take_snapshot().unwrap();
        let stats = pb.traverse_snapshot(&mut sink).unwrap();
        assert_eq!(stats.piggyback_copies, 0);
        assert_eq!(sink.image(), &init);
    }
}
