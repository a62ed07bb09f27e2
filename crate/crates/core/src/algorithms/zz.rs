use std::time::Instant;

use crate::algo::{AlgorithmKind, Counters, Cycle, SnapshotAlgorithm, TakenPhase, TraverseStats};
use crate::algorithms::emit_store_page;
use crate::error::Result;
use crate::persist::{SnapshotKind, SnapshotSink};
use crate::store::{BitArray, Layout, PageImage, PageStore};

/// Zigzag: two copies per page, steered by a read bit and a write bit.
pub struct Zigzag {
    stores: [PageStore; 2],
    read_from: BitArray,
    write_to: BitArray,
    cycle: Cycle,
    counters: Counters,
}

impl Zigzag {
    pub fn new(initial: &PageImage) -> Self {
        let n = initial.layout().page_count();
        Zigzag {
            stores: [PageStore::from_image(initial), PageStore::from_image(initial)],
            read_from: BitArray::new(n, false),
            write_to: BitArray::new(n, true),
            cycle: Cycle::new(),
            counters: Counters::default(),
        }
    }

    /// Copy 0 is `a`, copy 1 is `b`.
    pub fn store(&self, copy: usize) -> &PageStore {
        &self.stores[copy]
    }

    pub fn read_from(&self) -> &BitArray {
        &self.read_from
    }

    pub fn write_to(&self) -> &BitArray {
        &self.write_to
    }
}

impl SnapshotAlgorithm for Zigzag {
    fn kind(&self) -> AlgorithmKind {
        AlgorithmKind::Zigzag
    }

    fn layout(&self) -> &Layout {
        self.stores[0].layout()
    }

    #[inline]
    fn read(&self, page: usize, item: usize) -> u32 {
        self.stores[self.read_from.get(page) as usize].read_item(page, item)
    }

    #[inline]
    fn write(&self, page: usize, item: usize, value: u32) {
        let target = self.write_to.get(page);
        let latest = self.read_from.get(page);
        let dst = &self.stores[target as usize];
        if latest != target {
            if self.layout().items_per_page() > 1 {
                dst.copy_page_from(&self.stores[latest as usize], page);
                self.counters.catchup_copy();
            }
            self.read_from.assign(page, target);
        }
        dst.write_item(page, item, value);
        self.counters.write(1);
    }

    fn previous_snapshot_done(&self) -> bool {
        self.cycle.is_done()
    }

    fn take_snapshot(&self) -> Result<TakenPhase> {
        let start = Instant::now();
        let checkpoint_id = self.cycle.begin()?;
        let work = self.write_to.assign_not(&self.read_from) as u64;
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
            let copy = !self.write_to.get(p) as usize;
            emit_store_page(sink, &self.stores[copy], p, &mut buf)?;
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
        self.stores.iter().map(PageStore::allocated_bytes).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algorithms::testing::*;
    use crate::persist::MemorySink;

    #[test]
    fn example3_running_example() {
        let init = example_initial();
        let zz = Zigzag::new(&init);
        zz.write(0, 0, 13);
        assert_eq!(zz.store(1).read_item(0, 0), 13);
        assert!(zz.read_from().get(0));
        assert_eq!(zz.read(0, 0), 13);
        zz.write(2, 0, 16);
        zz.write(3, 0, 17);
        assert_eq!(zz.read_from().to_vec(), vec![1, 0, 1, 1, 0, 0]);

        zz.take_snapshot().unwrap();
        assert_eq!(zz.write_to().to_vec(), vec![0, 1, 0, 0, 1, 1]);

        zz.write(0, 0, 23);
        assert_eq!(zz.store(0).read_item(0, 0), 23);
        zz.write(1, 0, 14);
        zz.write(4, 0, 18);

        let mut sink = MemorySink::new(init);
        zz.traverse_snapshot(&mut sink).unwrap();
        assert_eq!(sink.image().first_items(), vec![13, 4, 16, 17, 8, 5]);
        assert_eq!(zz.client_view().first_items(), vec![23, 14, 16, 17, 18, 5]);
    }

    #[test]
    fn all_zero_read_bits_restore_initial_write_bits() {
        let zz = Zigzag::new(&example_initial());
        zz.take_snapshot().unwrap();
        assert_eq!(zz.write_to().to_vec(), vec![1; 6]);
    }
}
