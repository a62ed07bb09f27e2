use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Instant;

use crate::algo::Cycle;
use crate::algorithms::{emit_store_page, side_flag};
use crate::error::Result;
use crate::persist::{SnapshotKind, SnapshotSink};
use crate::store::{Layout, PageImage, PageStore, TriStateArray};
use crate::vsnap::{
    Binding, ConsistencyPoint, EpochGate, VirtualCounters, VirtualEngine, VirtualKind, VirtualSnapshot,
};

/// Piggyback with per-transaction store binding. After pre-swap
/// transactions drain, the snapshotter brings pU up to date and dumps all
/// of pD.
pub struct VirtualPiggyback {
    stores: [PageStore; 2],
    flags: TriStateArray,
    gate: EpochGate,
    pending_epoch: AtomicU64,
    cycle: Cycle,
    counters: VirtualCounters,
}

impl VirtualPiggyback {
    pub fn new(initial: &PageImage) -> Self {
        VirtualPiggyback {
            stores: [PageStore::from_image(initial), PageStore::from_image(initial)],
            flags: TriStateArray::new(initial.layout().page_count()),
            gate: EpochGate::default(),
            pending_epoch: AtomicU64::new(0),
            cycle: Cycle::new(),
            counters: VirtualCounters::default(),
        }
    }

    pub fn flags(&self) -> &TriStateArray {
        &self.flags
    }

    fn latest(&self, page: usize) -> usize {
        match self.flags.get(page) {
            2 => 1,
            TriStateArray::CLAIMED => self.gate.side() ^ 1,
            _ => 0,
        }
    }

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
}

impl VirtualEngine for VirtualPiggyback {
    fn kind(&self) -> VirtualKind {
        VirtualKind::Piggyback
    }

    fn layout(&self) -> &Layout {
        self.stores[0].layout()
    }

    fn bind(&self) -> Binding {
        self.gate.bind()
    }

    fn read(&self, _binding: &Binding, page: usize, item: usize) -> u32 {
        self.stores[self.latest(page)].read_item(page, item)
    }

    fn write(&self, binding: &mut Binding, page: usize, item: usize, value: u32) -> u32 {
        let u = binding.side;
        let mine = side_flag(u);
        let mut spins = 0;
        loop {
            let f = self.flags.get(page);
            if f == mine || f == 0 {
                let old = self.stores[if f == 0 { 0 } else { u }].read_item(page, item);
                self.stores[u].write_item(page, item, value);
                if f == 0 {
                    self.flags.set(page, mine);
                }
                return old;
            }
            if f != TriStateArray::CLAIMED && self.flags.try_claim(page, f) {
                let other = u ^ 1;
                let old = self.stores[other].read_item(page, item);
                if self.layout().items_per_page() > 1 {
                    self.stores[u].copy_page_from(&self.stores[other], page);
                    self.counters.catchup_copy();
                }
                self.stores[u].write_item(page, item, value);
                self.flags.set(page, mine);
                return old;
            }
            crate::sys::backoff(&mut spins);
        }
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
        let u = self.gate.side();
        let piggyback_copies = self.write_to_online(u);
        sink.open(checkpoint_id, &layout, SnapshotKind::Full)?;
        let mut buf = vec![0u8; layout.page_size()];
        for p in 0..layout.page_count() {
            emit_store_page(sink, &self.stores[u ^ 1], p, &mut buf)?;
        }
        sink.close()?;
        self.cycle.finish();
        Ok(VirtualSnapshot {
            checkpoint_id,
            point: ConsistencyPoint::EpochsBelow(epoch),
            drain_wait,
            duration: start.elapsed(),
            pages_emitted: layout.page_count() as u64,
            piggyback_copies,
        })
    }

    fn counters(&self) -> &VirtualCounters {
        &self.counters
    }

    fn current_image(&self) -> PageImage {
        let layout = *self.layout();
        let mut image = PageImage::zeroed(layout);
        for p in 0..layout.page_count() {
            self.stores[self.latest(p)].read_page(p, image.page_mut(p));
        }
        image
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::persist::MemorySink;
    use crate::vsnap::testing::*;

    #[test]
    fn example8_full_image_holds_pre_swap_only() {
        let init = table_initial();
        let vpb = VirtualPiggyback::new(&init);
        let mut t0 = vpb.bind();
        vpb.write(&mut t0, 3, 0, 17);
        finish(&vpb, t0);
        let mut t1 = vpb.bind();
        let mut t2 = vpb.bind();
        vpb.trigger().unwrap();
        let mut t3 = vpb.bind();
        let mut t4 = vpb.bind();
        vpb.write(&mut t1, 0, 0, 13);
        vpb.write(&mut t3, 1, 0, 14);
        vpb.write(&mut t2, 2, 0, 16);
        vpb.write(&mut t4, 4, 0, 18);
        finish(&vpb, t3);
        finish(&vpb, t4);
        std::thread::scope(|s| {
            let h = s.spawn(|| {
                let mut sink = MemorySink::new(init.clone());
                let snap = vpb.traverse(&mut sink).unwrap();
                (snap, sink)
            });
            std::thread::sleep(std::time::Duration::from_millis(20));
            assert!(!h.is_finished());
            finish(&vpb, t1);
            finish(&vpb, t2);
            let (snap, sink) = h.join().unwrap();
            // Pages 0, 2, 3 were last written to pD and are copied over.
            assert_eq!(snap.piggyback_copies, 3);
            assert_eq!(sink.image().first_items(), vec![13, 4, 16, 17, 8, 5]);
        });
        assert_eq!(vpb.current_image().first_items(), vec![13, 14, 16, 17, 18, 5]);
        assert_eq!(vpb.counters().snapshot().snapshot_copies, 0);
    }

    #[test]
    fn quiet_swap_is_physical_cycle() {
        let init = table_initial();
        let vpb = VirtualPiggyback::new(&init);
        vpb.trigger().unwrap();
        let mut sink = MemorySink::new(init.clone());
        let snap = vpb.traverse(&mut sink).unwrap();
        assert_eq!(snap.piggyback_copies, 0);
        assert_eq!(sink.image(), &init);
    }
}
