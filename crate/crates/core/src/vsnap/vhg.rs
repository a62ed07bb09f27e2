use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Instant;

use crate::algo::Cycle;
use crate::algorithms::emit_store_page;
use crate::error::Result;
use crate::persist::{SnapshotKind, SnapshotSink};
use crate::store::{BitArray, Layout, PageImage, PageStore};
use crate::vsnap::{
    Binding, ConsistencyPoint, EpochGate, VirtualCounters, VirtualEngine, VirtualKind, VirtualSnapshot,
};

/// Hourglass with per-transaction store binding.
///
/// The trigger swaps designators at once. Transactions bound before the swap
/// keep writing their store, now pD, and the snapshotter waits for them to
/// finish before dumping pD's marked pages.
pub struct VirtualHourglass {
    stores: [PageStore; 2],
    bits: [BitArray; 2],
    read_from: BitArray,
    gate: EpochGate,
    /// Epoch opened by the pending trigger.
    pending_epoch: AtomicU64,
    cycle: Cycle,
    counters: VirtualCounters,
}

impl VirtualHourglass {
    pub fn new(initial: &PageImage) -> Self {
        let n = initial.layout().page_count();
        VirtualHourglass {
            stores: [PageStore::from_image(initial), PageStore::from_image(initial)],
            // The shadow's initial "dump everything" period is the baseline
            // image every sink already holds, so it starts clear.
            bits: [BitArray::new(n, false), BitArray::new(n, false)],
            read_from: BitArray::new(n, false),
            gate: EpochGate::default(),
            pending_epoch: AtomicU64::new(0),
            cycle: Cycle::new(),
            counters: VirtualCounters::default(),
        }
    }

    pub fn store(&self, copy: usize) -> &PageStore {
        &self.stores[copy]
    }

    pub fn update_side(&self) -> usize {
        self.gate.side()
    }
}

impl VirtualEngine for VirtualHourglass {
    fn kind(&self) -> VirtualKind {
        VirtualKind::Hourglass
    }

    fn layout(&self) -> &Layout {
        self.stores[0].layout()
    }

    fn bind(&self) -> Binding {
        self.gate.bind()
    }

    fn read(&self, _binding: &Binding, page: usize, item: usize) -> u32 {
        self.stores[self.read_from.get(page) as usize].read_item(page, item)
    }

    fn write(&self, binding: &mut Binding, page: usize, item: usize, value: u32) -> u32 {
        let u = binding.side;
        // A set bit means a transaction on this side already wrote the page
        // in this period. Page locks order every write from the older side
        // before any from the newer one, so read_from still points here.
        if self.bits[u].get(page) {
            let old = self.stores[u].read_item(page, item);
            self.stores[u].write_item(page, item, value);
            return old;
        }
        self.bits[u].set(page);
        let latest = self.read_from.get(page) as usize;
        let old = self.stores[latest].read_item(page, item);
        if latest != u {
            if self.layout().items_per_page() > 1 {
                self.stores[u].copy_page_from(&self.stores[latest], page);
                self.counters.catchup_copy();
            }
            self.read_from.assign(page, u == 1);
        }
        self.stores[u].write_item(page, item, value);
        old
    }

    fn commit(&self, _binding: &Binding) -> u64 {
        self.counters.commit();
        self.gate.commit()
    }

    fn release(&self, binding: Binding) {
        self.gate.release(&binding);
    }

    fn previous_snapshot_done(&self) -> bool {
        self.cycle.is_done()
    }

    fn trigger(&self) -> Result<u64> {
        let id = self.cycle.begin()?;
        self.pending_epoch.store(self.gate.swap(), Ordering::Release);
        Ok(id)
    }

    fn traverse(&self, sink: &mut dyn SnapshotSink) -> Result<VirtualSnapshot> {
        let start = Instant::now();
        let checkpoint_id = self.cycle.pending()?;
        let epoch = self.pending_epoch.load(Ordering::Acquire);
        let drain_wait = self.gate.wait_drained(epoch);
        let layout = *self.layout();
        let d = self.gate.side() ^ 1;
        let (store_d, bits_d) = (&self.stores[d], &self.bits[d]);
        sink.open(checkpoint_id, &layout, SnapshotKind::Incremental)?;
        let mut emitted = 0;
        let mut buf = vec![0u8; layout.page_size()];
        for p in 0..layout.page_count() {
            if bits_d.get(p) {
                bits_d.clear(p);
                emit_store_page(sink, store_d, p, &mut buf)?;
                emitted += 1;
            } else {
                sink.emit_from_last(p)?;
            }
        }
        sink.close()?;
        self.cycle.finish();
        Ok(VirtualSnapshot {
            checkpoint_id,
            point: ConsistencyPoint::EpochsBelow(epoch),
            drain_wait,
            duration: start.elapsed(),
            pages_emitted: emitted,
            piggyback_copies: 0,
        })
    }

    fn counters(&self) -> &VirtualCounters {
        &self.counters
    }

    fn current_image(&self) -> PageImage {
        let layout = *self.layout();
        let mut image = PageImage::zeroed(layout);
        for p in 0..layout.page_count() {
            self.stores[self.read_from.get(p) as usize].read_page(p, image.page_mut(p));
        }
        image
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::persist::MemorySink;
    use crate::vsnap::testing::*;

    /// Fig 8: T1, T2 bind before the swap and write after it; T3, T4 bind
    /// after. The snapshot of pD holds exactly T1 and T2.
    #[test]
    fn fig8_pre_swap_transactions_only() {
        let init = table_initial();
        let vhg = VirtualHourglass::new(&init);
        let mut t1 = vhg.bind();
        let mut t2 = vhg.bind();
        vhg.trigger().unwrap();
        let mut t3 = vhg.bind();
        let mut t4 = vhg.bind();
        assert_eq!((t1.side, t3.side), (0, 1));
        vhg.write(&mut t1, 0, 0, 13);
        vhg.write(&mut t3, 1, 0, 14);
        vhg.write(&mut t2, 2, 0, 16);
        vhg.write(&mut t4, 4, 0, 18);
        finish(&vhg, t3);
        finish(&vhg, t4);

        std::thread::scope(|s| {
            let h = s.spawn(|| {
                let mut sink = MemorySink::new(init.clone());
                let snap = vhg.traverse(&mut sink).unwrap();
                (snap, sink)
            });
            std::thread::sleep(std::time::Duration::from_millis(20));
            assert!(!h.is_finished(), "traverse must wait for pre-swap transactions");
            finish(&vhg, t1);
            finish(&vhg, t2);
            let (snap, sink) = h.join().unwrap();
            assert_eq!(snap.point, ConsistencyPoint::EpochsBelow(1));
            assert_eq!(sink.image().first_items(), vec![13, 4, 16, 7, 8, 5]);
        });
        assert_eq!(vhg.current_image().first_items(), vec![13, 14, 16, 7, 18, 5]);
        assert_eq!(vhg.counters().snapshot().snapshot_copies, 0);
    }

    #[test]
    fn quiet_swap_is_physical_cycle() {
        let init = table_initial();
        let vhg = VirtualHourglass::new(&init);
        let mut t = vhg.bind();
        vhg.write(&mut t, 3, 0, 17);
        finish(&vhg, t);
        vhg.trigger().unwrap();
        assert!(vhg.trigger().is_err());
        let mut sink = MemorySink::new(init);
        let snap = vhg.traverse(&mut sink).unwrap();
        assert_eq!(snap.pages_emitted, 1);
        assert_eq!(sink.image().first_items(), vec![3, 4, 6, 17, 8, 5]);
    }
}
