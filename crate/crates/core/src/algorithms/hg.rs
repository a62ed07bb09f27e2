use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use crate::algo::{AlgorithmKind, Counters, Cycle, SnapshotAlgorithm, TakenPhase, TraverseStats};
use crate::algorithms::emit_store_page;
use crate::error::Result;
use crate::persist::{SnapshotKind, SnapshotSink};
use crate::store::{BitArray, Layout, PageImage, PageStore};

/// Hourglass: Zigzag's per-page read bit combined with Ping-Pong's pointer
/// swap. Each store carries the bit array marking the pages it received in
/// its update period, and the two (store, bits) pairs swap roles at trigger.
pub struct Hourglass {
    /// `stores[0]` is `D`, `stores[1]` is the shadow `D̄`.
    stores: [PageStore; 2],
    bits: [BitArray; 2],
    /// Copy holding the latest version of each page.
    read_from: BitArray,
    /// Index of the pair the client writes (pU); the other is pD.
    u: AtomicUsize,
    cycle: Cycle,
    counters: Counters,
}

impl Hourglass {
    pub fn new(initial: &PageImage) -> Self {
        let n = initial.layout().page_count();
        let hg = Hourglass {
            stores: [PageStore::from_image(initial), PageStore::from_image(initial)],
            bits: [BitArray::new(n, false), BitArray::new(n, true)],
            read_from: BitArray::new(n, true),
            u: AtomicUsize::new(0),
            cycle: Cycle::new(),
            counters: Counters::default(),
        };
        // The shadow's all-ones bits mean "dump every page" for the period
        // before the first trigger. That dump is the initial image itself,
        // which every sink already holds as checkpoint 0, so it is retired
        // here rather than left to leak into the next period.
        hg.bits[1].fill(false);
        hg
    }

    pub fn store(&self, copy: usize) -> &PageStore {
        &self.stores[copy]
    }

    pub fn bits(&self, copy: usize) -> &BitArray {
        &self.bits[copy]
    }

    pub fn read_from(&self) -> &BitArray {
        &self.read_from
    }

    pub fn update_side(&self) -> usize {
        self.u.load(Ordering::Acquire)
    }

    /// First write to `page` in this period: mark it, bring pU's copy up to
    /// date, then store the item. Out of line so the common path stays small.
    #[cold]
    #[inline(never)]
    fn first_write(&self, u: usize, page: usize, item: usize, value: u32) {
        self.bits[u].set(page);
        let latest = self.read_from.get(page) as usize;
        if latest != u {
            if self.layout().items_per_page() > 1 {
                self.stores[u].copy_page_from(&self.stores[latest], page);
                self.counters.catchup_copy();
            }
            self.read_from.assign(page, u == 1);
        }
        self.stores[u].write_item(page, item, value);
    }
}

impl SnapshotAlgorithm for Hourglass {
    fn kind(&self) -> AlgorithmKind {
        AlgorithmKind::Hourglass
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
        let u = self.u.load(Ordering::Relaxed);
        // pU's bits start each period clear, so a set bit means this period
        // already wrote the page and read_from points at pU.
        if self.bits[u].get(page) {
            self.stores[u].write_item(page, item, value);
        } else {
            self.first_write(u, page, item, value);
        }
        self.counters.write(1);
    }

    fn previous_snapshot_done(&self) -> bool {
        self.cycle.is_done()
    }

    /// Swaps the store pointers and the bit-array pointers. Both live in one
    /// designator, so the two swaps are a single store here; the work count
    /// still reports the two logical swaps.
    fn take_snapshot(&self) -> Result<TakenPhase> {
        let start = Instant::now();
        let checkpoint_id = self.cycle.begin()?;
        self.u.fetch_xor(1, Ordering::AcqRel);
        self.counters.taken(2);
        Ok(TakenPhase {
            checkpoint_id,
            work: 2,
            duration: start.elapsed(),
        })
    }

    fn traverse_snapshot(&self, sink: &mut dyn SnapshotSink) -> Result<TraverseStats> {
        let start = Instant::now();
        let checkpoint_id = self.cycle.pending()?;
        let layout = *self.layout();
        let d = self.u.load(Ordering::Acquire) ^ 1;
        let (store_d, bits_d) = (&self.stores[d], &self.bits[d]);
        sink.open(checkpoint_id, &layout, SnapshotKind::Incremental)?;
        let mut stats = TraverseStats {
            checkpoint_id,
            ..TraverseStats::default()
        };
        let mut buf = vec![0u8; layout.page_size()];
        for p in 0..layout.page_count() {
            if bits_d.get(p) {
                bits_d.clear(p);
                emit_store_page(sink, store_d, p, &mut buf)?;
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
        self.stores.iter().map(PageStore::allocated_bytes).sum()
    }
}
