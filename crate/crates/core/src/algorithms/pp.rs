use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use crate::algo::{AlgorithmKind, Counters, Cycle, SnapshotAlgorithm, TakenPhase, TraverseStats};
use crate::algorithms::emit_store_page;
use crate::error::Result;
use crate::persist::{SnapshotKind, SnapshotSink};
use crate::store::{BitArray, Layout, PageImage, PageStore};

/// Ping-Pong: the client writes the live copy and an update buffer; a pointer
/// swap turns the update buffer into the incremental snapshot.
pub struct PingPong {
    live: PageStore,
    buffers: [PageStore; 2],
    dirty: [BitArray; 2],
    /// Index of the update buffer; the other one is the durable buffer.
    u: AtomicUsize,
    cycle: Cycle,
    counters: Counters,
}

impl PingPong {
    pub fn new(initial: &PageImage) -> Self {
        let n = initial.layout().page_count();
        PingPong {
            live: PageStore::from_image(initial),
            buffers: [PageStore::from_image(initial), PageStore::from_image(initial)],
            dirty: [BitArray::new(n, false), BitArray::new(n, false)],
            u: AtomicUsize::new(0),
            cycle: Cycle::new(),
            counters: Counters::default(),
        }
    }

    pub fn live(&self) -> &PageStore {
        &self.live
    }

    pub fn update_side(&self) -> usize {
        self.u.load(Ordering::Acquire)
    }

    pub fn buffer(&self, side: usize) -> &PageStore {
        &self.buffers[side]
    }

    pub fn dirty(&self, side: usize) -> &BitArray {
        &self.dirty[side]
    }
}

impl SnapshotAlgorithm for PingPong {
    fn kind(&self) -> AlgorithmKind {
        AlgorithmKind::PingPong
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
        let u = self.u.load(Ordering::Relaxed);
        let (buf, dirty) = (&self.buffers[u], &self.dirty[u]);
        self.live.write_item(page, item, value);
        if dirty.get(page) {
            buf.write_item(page, item, value);
        } else {
            if self.layout().items_per_page() > 1 {
                buf.copy_page_from(&self.live, page);
                self.counters.catchup_copy();
            } else {
                buf.write_item(page, item, value);
            }
            dirty.set(page);
        }
        self.counters.write(2);
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

    fn traverse_snapshot(&self, sink: &mut dyn SnapshotSink) -> Result<TraverseStats> {
        let start = Instant::now();
        let checkpoint_id = self.cycle.pending()?;
        let layout = *self.layout();
        let d = self.u.load(Ordering::Acquire) ^ 1;
        let (buf_d, dirty_d) = (&self.buffers[d], &self.dirty[d]);
        sink.open(checkpoint_id, &layout, SnapshotKind::Incremental)?;
        let mut stats = TraverseStats {
            checkpoint_id,
            ..TraverseStats::default()
        };
        let mut buf = vec![0u8; layout.page_size()];
        for p in 0..layout.page_count() {
            if dirty_d.get(p) {
                dirty_d.clear(p);
                emit_store_page(sink, buf_d, p, &mut buf)?;
                stats.pages_emitted += 1;
            } else {
                sink.emit_from_last(p)?;
                stats.pages_from_last += 1;
            }
        }
        sink.close()?;
        self.cycle.finish();
        stats.duration = start.elapsed();
        Ok(stats)
    }

    fn counters(&self) -> &Counters {
        &self.counters
    }

    fn page_store_bytes(&self) -> usize {
        self.live.allocated_bytes() + self.buffers.iter().map(PageStore::allocated_bytes).sum::<usize>()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algorithms::testing::*;
    use crate::persist::MemorySink;

    #[test]
    fn example4_running_example() {
        let init = example_initial();
        let pp = PingPong::new(&init);
        pp.write(0, 0, 13);
        assert_eq!(pp.live().read_item(0, 0), 13);
        assert_eq!(pp.buffer(0).read_item(0, 0), 13);
        assert!(pp.dirty(0).get(0));
        pp.write(2, 0, 16);
        pp.write(3, 0, 17);

        pp.take_snapshot().unwrap();
        assert_eq!(pp.update_side(), 1);
        assert_eq!(pp.dirty(0).to_vec(), vec![1, 0, 1, 1, 0, 0]);

        let durable = pp.buffer(0).checksum(0..6);
        period2(&pp);
        assert_eq!(pp.buffer(0).checksum(0..6), durable);

        let mut sink = MemorySink::new(init);
        let stats = pp.traverse_snapshot(&mut sink).unwrap();
        assert_eq!(sink.emitted_pages(), &[0, 2, 3]);
        assert_eq!(stats.pages_from_last, 3);
        assert_eq!(sink.image().first_items(), vec![13, 4, 16, 17, 8, 5]);
        assert_eq!(pp.dirty(0).count_ones(), 0);

        let c = pp.counters().snapshot();
        assert_eq!(c.physical_writes, 2 * c.logical_writes);
    }

    #[test]
    fn quiet_period_gives_empty_incremental() {
        let init = example_initial();
        let pp = PingPong::new(&init);
        let mut sink = MemorySink::new(init.clone());
        assert_eq!(snapshot(&pp, &mut sink), init.first_items());
        assert!(sink.emitted_pages().is_empty());
    }
}
