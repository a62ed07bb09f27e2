use std::time::Instant;

use crate::algo::{AlgorithmKind, Counters, Cycle, SnapshotAlgorithm, TakenPhase, TraverseStats};
use crate::algorithms::emit_store_page;
use crate::error::Result;
use crate::persist::{SnapshotKind, SnapshotSink};
use crate::store::{Layout, PageImage, PageStore};

/// Naive snapshot: bulk copy of the whole dataset while the client is blocked.
pub struct NaiveSnapshot {
    live: PageStore,
    shadow: PageStore,
    cycle: Cycle,
    counters: Counters,
}

impl NaiveSnapshot {
    pub fn new(initial: &PageImage) -> Self {
        NaiveSnapshot {
            live: PageStore::from_image(initial),
            shadow: PageStore::from_image(initial),
            cycle: Cycle::new(),
            counters: Counters::default(),
        }
    }

    pub fn shadow(&self) -> &PageStore {
        &self.shadow
    }
}

impl SnapshotAlgorithm for NaiveSnapshot {
    fn kind(&self) -> AlgorithmKind {
        AlgorithmKind::Naive
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
        self.live.write_item(page, item, value);
        self.counters.write(1);
    }

    fn previous_snapshot_done(&self) -> bool {
        self.cycle.is_done()
    }

    fn take_snapshot(&self) -> Result<TakenPhase> {
        let start = Instant::now();
        let checkpoint_id = self.cycle.begin()?;
        self.shadow.copy_from(&self.live);
        let work = self.live.layout().page_count() as u64;
        self.counters.snapshot_copies(work);
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
        let mut buf = vec![0u8; layout.page_size()];
        for p in 0..layout.page_count() {
            emit_store_page(sink, &self.shadow, p, &mut buf)?;
        }
        sink.close()?;
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
    fn example1_snapshot_ignores_later_writes() {
        let init = example_initial();
        let ns = NaiveSnapshot::new(&init);
        let mut sink = MemorySink::new(init);
        period1(&ns);
        ns.take_snapshot().unwrap();
        assert_eq!(ns.shadow().to_image(0).first_items(), vec![13, 4, 16, 17, 8, 5]);
        period2(&ns);
        ns.traverse_snapshot(&mut sink).unwrap();
        assert_eq!(sink.image().first_items(), vec![13, 4, 16, 17, 8, 5]);
        assert_eq!(ns.client_view().first_items(), vec![23, 14, 16, 17, 18, 5]);
        assert_eq!(ns.counters().snapshot().snapshot_copies, 6);
    }

    #[test]
    fn untouched_zero_store_snapshots_as_zeros() {
        let init = PageImage::zeroed(Layout::with_pages(3).unwrap());
        let ns = NaiveSnapshot::new(&init);
        let mut sink = MemorySink::new(init.clone());
        ns.take_snapshot().unwrap();
        ns.traverse_snapshot(&mut sink).unwrap();
        assert_eq!(sink.image(), &init);
    }
}
