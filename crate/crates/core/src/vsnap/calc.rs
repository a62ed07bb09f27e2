use std::sync::atomic::{AtomicU64, AtomicU8, Ordering};
use std::time::{Duration, Instant};

use parking_lot::{Mutex, RwLock};

use crate::algo::Cycle;
use crate::algorithms::emit_store_page;
use crate::error::Result;
use crate::persist::{SnapshotKind, SnapshotSink};
use crate::store::{BitArray, Layout, PageImage, PageStore};
use crate::vsnap::{Binding, ConsistencyPoint, VirtualCounters, VirtualEngine, VirtualKind, VirtualSnapshot};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[repr(u8)]
pub enum CalcPhase {
    #[default]
    Rest = 0,
    Prepare = 1,
    Resolve = 2,
    Capture = 3,
    Complete = 4,
}

impl CalcPhase {
    fn from_u8(v: u8) -> Self {
        match v {
            0 => CalcPhase::Rest,
            1 => CalcPhase::Prepare,
            2 => CalcPhase::Resolve,
            3 => CalcPhase::Capture,
            _ => CalcPhase::Complete,
        }
    }

    /// Transactions starting in these phases save pre-images on first write.
    pub fn copies_on_update(self) -> bool {
        matches!(self, CalcPhase::Prepare | CalcPhase::Resolve | CalcPhase::Capture)
    }
}

/// CALC: live and stable stores with a five-phase cycle.
///
/// The consistency point is the end of the last transaction that started
/// before the trigger. Transactions starting from the trigger until the
/// capture scan ends copy a page's pre-image into the stable store on first
/// write; the scan reads the stable copy where one exists.
pub struct Calc {
    live: PageStore,
    stable: PageStore,
    dirty: BitArray,
    latches: Box<[Mutex<()>]>,
    phase: AtomicU8,
    /// Serializes binding against phase changes.
    gate: RwLock<()>,
    /// Running transactions by start phase.
    active: [AtomicU64; 5],
    commit_seq: Mutex<u64>,
    cycle: Cycle,
    counters: VirtualCounters,
}

impl Calc {
    pub fn new(initial: &PageImage) -> Self {
        let n = initial.layout().page_count();
        Calc {
            live: PageStore::from_image(initial),
            stable: PageStore::new(*initial.layout()),
            dirty: BitArray::new(n, false),
            latches: (0..n).map(|_| Mutex::new(())).collect(),
            phase: AtomicU8::new(CalcPhase::Rest as u8),
            gate: RwLock::new(()),
            active: Default::default(),
            commit_seq: Mutex::new(0),
            cycle: Cycle::new(),
            counters: VirtualCounters::default(),
        }
    }

    pub fn phase(&self) -> CalcPhase {
        CalcPhase::from_u8(self.phase.load(Ordering::Acquire))
    }

    pub fn dirty(&self) -> &BitArray {
        &self.dirty
    }

    fn set_phase(&self, phase: CalcPhase) {
        let _g = self.gate.write();
        self.phase.store(phase as u8, Ordering::Release);
    }

    fn running(&self, phases: &[CalcPhase]) -> u64 {
        phases
            .iter()
            .map(|&p| self.active[p as usize].load(Ordering::Acquire))
            .sum()
    }

    fn wait_until_drained(&self, phases: &[CalcPhase]) -> Duration {
        let start = Instant::now();
        let mut spins = 0;
        while self.running(phases) > 0 {
            crate::sys::backoff(&mut spins);
        }
        start.elapsed()
    }
}

impl VirtualEngine for Calc {
    fn kind(&self) -> VirtualKind {
        VirtualKind::Calc
    }

    fn layout(&self) -> &Layout {
        self.live.layout()
    }

    fn bind(&self) -> Binding {
        let _g = self.gate.read();
        let phase = self.phase();
        self.active[phase as usize].fetch_add(1, Ordering::AcqRel);
        Binding {
            phase,
            ..Binding::default()
        }
    }

    fn read(&self, _binding: &Binding, page: usize, item: usize) -> u32 {
        self.live.read_item(page, item)
    }

    fn write(&self, binding: &mut Binding, page: usize, item: usize, value: u32) -> u32 {
        if binding.phase.copies_on_update() && !self.dirty.get(page) {
            let _latch = self.latches[page].lock();
            if !self.dirty.get(page) {
                self.stable.copy_page_from(&self.live, page);
                self.dirty.set(page);
                self.counters.snapshot_copy();
                binding.copied.push(page);
            }
        }
        let old = self.live.read_item(page, item);
        self.live.write_item(page, item, value);
        old
    }

    /// A transaction that started in prepare and commits before resolve
    /// belongs to the snapshot, so the pre-images it saved are withdrawn.
    fn commit(&self, binding: &Binding) -> u64 {
        let mut seq = self.commit_seq.lock();
        let s = *seq;
        *seq += 1;
        if binding.phase == CalcPhase::Prepare && self.phase() == CalcPhase::Prepare {
            for &p in &binding.copied {
                self.dirty.clear(p);
            }
        }
        self.counters.commit();
        s
    }

    fn release(&self, binding: Binding) {
        self.active[binding.phase as usize].fetch_sub(1, Ordering::AcqRel);
    }

    fn previous_snapshot_done(&self) -> bool {
        self.cycle.is_done()
    }

    fn trigger(&self) -> Result<u64> {
        let id = self.cycle.begin()?;
        self.set_phase(CalcPhase::Prepare);
        Ok(id)
    }

    fn traverse(&self, sink: &mut dyn SnapshotSink) -> Result<VirtualSnapshot> {
        let start = Instant::now();
        let checkpoint_id = self.cycle.pending()?;
        // Rest transactions, and any still running from the last complete
        // phase, finish before the consistency point.
        let mut drain_wait = self.wait_until_drained(&[CalcPhase::Rest, CalcPhase::Complete]);
        let cp = {
            let _g = self.gate.write();
            let seq = self.commit_seq.lock();
            self.phase.store(CalcPhase::Resolve as u8, Ordering::Release);
            *seq
        };
        drain_wait += self.wait_until_drained(&[CalcPhase::Prepare]);
        self.set_phase(CalcPhase::Capture);

        let layout = *self.layout();
        sink.open(checkpoint_id, &layout, SnapshotKind::Full)?;
        let mut buf = vec![0u8; layout.page_size()];
        for p in 0..layout.page_count() {
            let _latch = self.latches[p].lock();
            let src = if self.dirty.get(p) { &self.stable } else { &self.live };
            emit_store_page(sink, src, p, &mut buf)?;
        }
        sink.close()?;

        self.set_phase(CalcPhase::Complete);
        self.wait_until_drained(&[CalcPhase::Resolve, CalcPhase::Capture]);
        self.dirty.fill(false);
        self.set_phase(CalcPhase::Rest);
        self.cycle.finish();
        Ok(VirtualSnapshot {
            checkpoint_id,
            point: ConsistencyPoint::CommitsBefore(cp),
            drain_wait,
            duration: start.elapsed(),
            pages_emitted: layout.page_count() as u64,
            piggyback_copies: 0,
        })
    }

    fn counters(&self) -> &VirtualCounters {
        &self.counters
    }

    fn current_image(&self) -> PageImage {
        self.live.to_image(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::persist::MemorySink;
    use crate::vsnap::testing::*;

    fn wait_for(calc: &Calc, pred: impl Fn(CalcPhase) -> bool) {
        while !pred(calc.phase()) {
            std::thread::sleep(Duration::from_millis(1));
        }
    }

    /// Example 7: T1, T2 run across the trigger; T3 starts and commits in
    /// prepare; T4 starts in prepare and commits after resolve; T5 starts in
    /// resolve and T6 later. The snapshot holds T1, T2 and T3.
    #[test]
    fn example7_contains_t1_t2_t3() {
        let init = table_initial();
        let calc = Calc::new(&init);
        let mut t1 = calc.bind();
        let mut t2 = calc.bind();
        calc.trigger().unwrap();
        assert_eq!(calc.phase(), CalcPhase::Prepare);
        assert!(calc.trigger().is_err());

        let mut t3 = calc.bind();
        calc.write(&mut t3, 2, 0, 16);
        finish(&calc, t3);
        assert!(!calc.dirty().get(2), "prepare commit withdraws its pre-image");
        let mut t4 = calc.bind();
        calc.write(&mut t4, 2, 0, 26);

        std::thread::scope(|s| {
            let h = s.spawn(|| {
                let mut sink = MemorySink::new(init.clone());
                let snap = calc.traverse(&mut sink).unwrap();
                (snap, sink)
            });
            calc.write(&mut t1, 0, 0, 13);
            calc.write(&mut t2, 3, 0, 17);
            finish(&calc, t1);
            finish(&calc, t2);
            wait_for(&calc, |p| p == CalcPhase::Resolve);
            let mut t5 = calc.bind();
            assert_eq!(t5.phase, CalcPhase::Resolve);
            calc.write(&mut t5, 1, 0, 14);
            finish(&calc, t4);
            wait_for(&calc, |p| p != CalcPhase::Resolve);
            let mut t6 = calc.bind();
            calc.write(&mut t6, 4, 0, 18);
            calc.write(&mut t5, 3, 0, 27);
            finish(&calc, t5);
            finish(&calc, t6);
            let (snap, sink) = h.join().unwrap();
            assert_eq!(snap.point, ConsistencyPoint::CommitsBefore(3));
            assert_eq!(sink.image().first_items(), vec![13, 4, 16, 17, 8, 5]);
        });
        assert_eq!(calc.phase(), CalcPhase::Rest);
        assert_eq!(calc.current_image().first_items(), vec![13, 14, 26, 27, 18, 5]);
        assert!(calc.counters().snapshot().snapshot_copies >= 3);
    }

    #[test]
    fn quiet_trigger_copies_nothing() {
        let init = table_initial();
        let calc = Calc::new(&init);
        let mut t = calc.bind();
        calc.write(&mut t, 0, 0, 13);
        finish(&calc, t);
        calc.trigger().unwrap();
        let mut sink = MemorySink::new(init);
        calc.traverse(&mut sink).unwrap();
        assert_eq!(sink.image().first_items(), vec![13, 4, 6, 7, 8, 5]);
        assert_eq!(calc.counters().snapshot().snapshot_copies, 0);
    }
}
