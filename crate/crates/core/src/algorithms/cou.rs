use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Instant;

use parking_lot::Mutex;

use crate::algo::{AlgorithmKind, Counters, Cycle, SnapshotAlgorithm, TakenPhase, TraverseStats};
use crate::error::Result;
use crate::persist::{SnapshotKind, SnapshotSink};
use crate::store::{BitArray, Layout, PageImage, PageStore};

/// Copy-on-update: the first write to a page during an access phase saves
/// the page's pre-image into the shadow store.
pub struct CopyOnUpdate {
    live: PageStore,
    shadow: PageStore,
    dirty: BitArray,
    latches: Box<[Mutex<()>]>,
    active: AtomicBool,
    cycle: Cycle,
    counters: Counters,
}

impl CopyOnUpdate {
    pub fn new(initial: &PageImage) -> Self {
        let layout = *initial.layout();
        CopyOnUpdate {
            live: PageStore::from_image(initial),
            shadow: PageStore::from_image(initial),
            dirty: BitArray::new(layout.page_count(), false),
            latches: (0..layout.page_count()).map(|_| Mutex::new(())).collect(),
            active: AtomicBool::new(false),
            cycle: Cycle::new(),
            counters: Counters::default(),
        }
    }

    pub fn shadow(&self) -> &PageStore {
        &self.shadow
    }

    pub fn dirty(&self) -> &BitArray {
        &self.dirty
    }

    /// The page as the running snapshot sees it.
    pub fn snapshot_item(&self, page: usize, item: usize) -> u32 {
        let _latch = self.latches[page].lock();
        if self.dirty.get(page) {
            self.shadow.read_item(page, item)
        } else {
            self.live.read_item(page, item)
        }
    }
}

impl SnapshotAlgorithm for CopyOnUpdate {
    fn kind(&self) -> AlgorithmKind {
        AlgorithmKind::CopyOnUpdate
    }

    fn layout(&self) -> &Layout {
        self.live.layout()
    }

    #[inline]
    fn read(&self, page: usize, item: usize) -> u32 {
        self.live.read_item(page, item)
    }

    #[inline]
    fn write(&self, page: usize, item: usize, value: u32) {
        if self.active.load(Ordering::Acquire) && !self.dirty.get(page) {
            let _latch = self.latches[page].lock();
            self.shadow.copy_page_from(&self.live, page);
            self.dirty.set(page);
            self.counters.snapshot_copies(1);
            self.live.write_item(page, item, value);
        } else {
            self.live.write_item(page, item, value);
        }
        self.counters.write(1);
    }

    fn previous_snapshot_done(&self) -> bool {
        self.cycle.is_done()
    }

    fn take_snapshot(&self) -> Result<TakenPhase> {
        let start = Instant::now();
        let checkpoint_id = self.cycle.begin()?;
        let work = self.dirty.fill(false) as u64;
        self.active.store(true, Ordering::Release);
        self.counters.taken(work);
        Ok(TakenPhase {
            checkpoint_id,
            work,
            duration: start.elapsed(),
        })
    }

    fn traverse_snapshot(&self, sink: &mut dyn SnapshotSink) -> Result<TraverseStats> {
        let start = Instant::now();
        let checkpoint_id = self.cycle.pending()?;
        let layout = *self.layout();
        sink.open(checkpoint_id, &layout, SnapshotKind::Full)?;
        let wants = sink.wants_pages();
        let mut buf = vec![0u8; layout.page_size()];
        for p in 0..layout.page_count() {
            if wants {
                let _latch = self.latches[p].lock();
                let src = if self.dirty.get(p) { &self.shadow } else { &self.live };
                src.read_page(p, &mut buf);
            } else {
                // The latch still orders the visit against a concurrent first write.
                drop(self.latches[p].lock());
            }
            sink.emit_page(p, if wants { &buf } else { &[] })?;
        }
        sink.close()?;
        self.active.store(false, Ordering::Release);
        self.cycle.finish();
        Ok(TraverseStats {
            checkpoint_id,
            pages_emitted: layout.page_count() as u64,
            duration: start.elapsed(),
            ..TraverseStats::default()
        })
    }

    fn counters(&self) -> &Counters {
        &self.counters
    }

    fn page_store_bytes(&self) -> usize {
        self.live.allocated_bytes() + self.shadow.allocated_bytes()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algorithms::testing::*;
    use crate::persist::MemorySink;

    #[test]
    fn example2_first_write_copies_pre_image() {
        let init = example_initial();
        let cou = CopyOnUpdate::new(&init);
        period1(&cou);
        cou.take_snapshot().unwrap();
        cou.write(0, 0, 23);
        assert_eq!(cou.shadow().read_item(0, 0), 13);
        assert!(cou.dirty().get(0));
        assert_eq!(cou.read(0, 0), 23);
        assert_eq!(cou.snapshot_item(0, 0), 13);

        cou.write(0, 0, 99);
        assert_eq!(cou.shadow().read_item(0, 0), 13);
        assert_eq!(cou.read(0, 0), 99);
        assert_eq!(cou.counters().snapshot().snapshot_copies, 1);

        cou.write(1, 0, 14);
        cou.write(4, 0, 18);
        let mut sink = MemorySink::new(init);
        cou.traverse_snapshot(&mut sink).unwrap();
        assert_eq!(sink.image().first_items(), vec![13, 4, 16, 17, 8, 5]);
        assert_eq!(cou.counters().snapshot().snapshot_copies, 3);
    }

    #[test]
    fn no_copies_outside_access_phase() {
        let cou = CopyOnUpdate::new(&example_initial());
        period1(&cou);
        assert_eq!(cou.counters().snapshot().snapshot_copies, 0);
        assert_eq!(cou.dirty().count_ones(), 0);
    }
}
