use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, OnceLock};
use std::thread::Thread;
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::persist::SnapshotSink;
use crate::vsnap::{
    CommitLog, CommitRecord, LockManager, Transaction, TxnGenerator, TxnOutcome, TxnStatus, VirtualCounterSnapshot,
    VirtualEngine, VirtualKind, VirtualSnapshot,
};
use crate::workload::MixedWorkload;

pub const DEFAULT_LOCK_TIMEOUT: Duration = Duration::from_secs(1);

/// Strict two-phase locking front end of a [`VirtualEngine`].
pub struct Executor {
    engine: Arc<dyn VirtualEngine>,
    locks: LockManager,
    log: Option<CommitLog>,
    lock_timeout: Duration,
}

impl Executor {
    /// Records every commit; see [`Executor::without_log`].
    pub fn new(engine: Arc<dyn VirtualEngine>) -> Self {
        let pages = engine.layout().page_count();
        Executor {
            engine,
            locks: LockManager::new(pages),
            log: Some(CommitLog::new()),
            lock_timeout: DEFAULT_LOCK_TIMEOUT,
        }
    }

    pub fn without_log(mut self) -> Self {
        self.log = None;
        self
    }

    pub fn with_lock_timeout(mut self, timeout: Duration) -> Self {
        self.lock_timeout = timeout;
        self
    }

    pub fn engine(&self) -> &Arc<dyn VirtualEngine> {
        &self.engine
    }

    pub fn locks(&self) -> &LockManager {
        &self.locks
    }

    pub fn log(&self) -> Option<&CommitLog> {
        self.log.as_ref()
    }

    /// Growing phase (every lock, ascending), bind, reads and writes, then
    /// commit or roll back, then release.
    pub fn execute(&self, txn: &mut Transaction) -> TxnOutcome {
        let engine = self.engine.as_ref();
        let layout = *engine.layout();
        let pages = txn.lock_set();
        if pages.last().is_some_and(|&p| p >= layout.page_count()) {
            return self.aborted(txn, "page out of range");
        }
        if !self.locks.acquire(&pages, self.lock_timeout) {
            return self.aborted(txn, "lock wait timeout");
        }
        let mut binding = engine.bind();
        txn.start_epoch = Some(binding.epoch);
        for &p in &txn.read_set {
            std::hint::black_box(engine.read(&binding, p, 0));
        }
        let mut undo = Vec::with_capacity(txn.write_set.len());
        for &(p, value) in &txn.write_set {
            let item = layout.item_slot(value);
            undo.push((p, item, engine.write(&mut binding, p, item, value)));
        }
        if txn.abort_after_writes {
            for (p, item, old) in undo.into_iter().rev() {
                engine.write(&mut binding, p, item, old);
            }
            engine.release(binding);
            self.locks.release(&pages);
            return self.aborted(txn, "rolled back on request");
        }
        let seq = engine.commit(&binding);
        if let Some(log) = &self.log {
            log.push(CommitRecord {
                seq,
                txn_id: txn.id,
                epoch: binding.epoch,
                writes: txn.write_set.clone(),
            });
        }
        engine.release(binding);
        self.locks.release(&pages);
        txn.status = TxnStatus::Committed;
        TxnOutcome::Committed { seq }
    }

    fn aborted(&self, txn: &mut Transaction, reason: &str) -> TxnOutcome {
        self.engine.counters().abort();
        txn.status = TxnStatus::Aborted;
        TxnOutcome::Aborted { reason: reason.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TriggerPolicy {
    /// Trigger once this many commits have happened since the last trigger.
    AfterCommits(u64),
    /// Trigger on a wall-clock period.
    Every(Duration),
}

#[derive(Debug, Clone)]
pub enum TxnSource {
    /// Shared queue; workers take the next transaction until it runs dry.
    Fixed(Vec<Transaction>),
    /// Unbounded generated transactions; the run is bounded by time or
    /// checkpoints.
    Mixed {
        workload: MixedWorkload,
        ops_per_txn: usize,
        seed: u64,
    },
}

#[derive(Debug, Clone)]
pub struct VirtualConfig {
    pub threads: usize,
    /// Stop once this many snapshots completed; `None` runs to `max_duration`.
    pub checkpoints: Option<usize>,
    pub trigger: TriggerPolicy,
    pub max_duration: Duration,
}

#[derive(Debug, Clone)]
pub struct VirtualRun {
    pub engine: VirtualKind,
    pub threads: usize,
    pub commits: u64,
    pub aborts: u64,
    pub elapsed: Duration,
    pub snapshots: Vec<VirtualSnapshot>,
    pub counters: VirtualCounterSnapshot,
}

impl VirtualRun {
    /// Committed transactions per second.
    pub fn throughput(&self) -> f64 {
        let secs = self.elapsed.as_secs_f64();
        if secs == 0.0 {
            0.0
        } else {
            self.commits as f64 / secs
        }
    }
}

/// Runs `config.threads` transaction threads and one snapshotter thread.
///
/// `on_snapshot` sees each snapshot as soon as its sink is closed, together
/// with the commit log when the executor keeps one.
pub fn run_virtual<S, F>(
    executor: &Executor,
    source: TxnSource,
    config: &VirtualConfig,
    sink: S,
    mut on_snapshot: F,
) -> Result<(VirtualRun, S)>
where
    S: SnapshotSink,
    F: FnMut(&VirtualSnapshot, &S, Option<&CommitLog>) -> Result<()> + Send,
{
    if config.threads == 0 {
        return Err(Error::InvalidParameter("threads must be at least 1".into()));
    }
    let engine = executor.engine().as_ref();
    let stop = AtomicBool::new(false);
    // Commit count at the last trigger and snapshots taken so far, shared so
    // that a commit-count policy can hold new transactions until it fires.
    let triggered_at = AtomicU64::new(0);
    let taken = AtomicUsize::new(0);
    let waker = OnceLock::<Thread>::new();
    let running = AtomicUsize::new(config.threads);
    let cursor = AtomicUsize::new(0);
    let start = Instant::now();

    let (outcomes, snap_result, elapsed) = std::thread::scope(|s| {
        let workers: Vec<_> = (0..config.threads)
            .map(|t| {
                let (stop, running, cursor, source) = (&stop, &running, &cursor, &source);
                let (triggered_at, taken, waker) = (&triggered_at, &taken, &waker);
                s.spawn(move || {
                    let mut tally = (0u64, 0u64);
                    let mut gen = match source {
                        TxnSource::Mixed {
                            workload,
                            ops_per_txn,
                            seed,
                        } => Some(TxnGenerator::new(workload, *ops_per_txn, t, *seed)),
                        TxnSource::Fixed(_) => None,
                    };
                    while !stop.load(Ordering::Relaxed) && start.elapsed() < config.max_duration {
                        // A due trigger wakes the snapshotter and offers it the CPU;
                        // one overdue by a whole interval holds new transactions.
                        if let TriggerPolicy::AfterCommits(n) = config.trigger {
                            let more = config.checkpoints.is_none_or(|c| taken.load(Ordering::Acquire) < c);
                            let since = engine.counters().snapshot().commits - triggered_at.load(Ordering::Acquire);
                            if more && since >= n {
                                if let Some(t) = waker.get() {
                                    t.unpark();
                                }
                                std::thread::yield_now();
                                if since >= 2 * n {
                                    continue;
                                }
                            }
                        }
                        let mut txn = match (&mut gen, source) {
                            (Some(g), _) => g.next_txn(),
                            (None, TxnSource::Fixed(list)) => match list.get(cursor.fetch_add(1, Ordering::Relaxed)) {
                                Some(txn) => txn.clone(),
                                None => break,
                            },
                            (None, TxnSource::Mixed { .. }) => unreachable!(),
                        };
                        if executor.execute(&mut txn).is_committed() {
                            tally.0 += 1;
                        } else {
                            tally.1 += 1;
                        }
                    }
                    running.fetch_sub(1, Ordering::AcqRel);
                    tally
                })
            })
            .collect();

        let snapshotter = {
            let (stop, running, triggered_at, taken, waker) = (&stop, &running, &triggered_at, &taken, &waker);
            let fixed = matches!(source, TxnSource::Fixed(_));
            let on_snapshot = &mut on_snapshot;
            s.spawn(move || {
                let _ = waker.set(std::thread::current());
                let mut sink = sink;
                let mut snapshots = Vec::new();
                let result = (|| -> Result<()> {
                    let mut last_trigger = Instant::now();
                    loop {
                        if running.load(Ordering::Acquire) == 0 || start.elapsed() >= config.max_duration {
                            return Ok(());
                        }
                        if config.checkpoints.is_some_and(|n| snapshots.len() >= n) {
                            // A fixed queue still runs dry.
                            if !fixed {
                                stop.store(true, Ordering::Relaxed);
                            }
                            return Ok(());
                        }
                        let commits = engine.counters().snapshot().commits;
                        let due = match config.trigger {
                            TriggerPolicy::AfterCommits(n) => commits - triggered_at.load(Ordering::Acquire) >= n,
                            TriggerPolicy::Every(d) => last_trigger.elapsed() >= d,
                        };
                        if !due {
                            std::thread::park_timeout(Duration::from_micros(200));
                            continue;
                        }
                        last_trigger = Instant::now();
                        engine.trigger()?;
                        triggered_at.store(engine.counters().snapshot().commits, Ordering::Release);
                        taken.fetch_add(1, Ordering::AcqRel);
                        // Lets transactions start in the new phase even when
                        // the workers share this thread's CPU.
                        std::thread::yield_now();
                        let snap = engine.traverse(&mut sink)?;
                        on_snapshot(&snap, &sink, executor.log())?;
                        snapshots.push(snap);
                    }
                })();
                if result.is_err() {
                    stop.store(true, Ordering::Relaxed);
                }
                result.map(|()| (snapshots, sink))
            })
        };

        let outcomes: Vec<(u64, u64)> = workers
            .into_iter()
            .map(|w| w.join().expect("worker panicked"))
            .collect();
        let elapsed = start.elapsed();
        stop.store(true, Ordering::Relaxed);
        (outcomes, snapshotter.join().expect("snapshotter panicked"), elapsed)
    });

    let (snapshots, sink) = snap_result?;
    let run = VirtualRun {
        engine: engine.kind(),
        threads: config.threads,
        commits: outcomes.iter().map(|o| o.0).sum(),
        aborts: outcomes.iter().map(|o| o.1).sum(),
        elapsed,
        snapshots,
        counters: engine.counters().snapshot(),
    };
    Ok((run, sink))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::{Layout, PageImage};
    use crate::vsnap::{build_virtual, VirtualKind};

    fn executor(kind: VirtualKind, pages: usize) -> (Executor, PageImage) {
        let init = PageImage::zeroed(Layout::single_item(pages).unwrap());
        (Executor::new(Arc::from(build_virtual(kind, &init))), init)
    }

    #[test]
    fn t1_alone_commits() {
        for kind in VirtualKind::ALL {
            let (ex, _) = executor(kind, 6);
            let mut t1 = Transaction::writes(1, &[(0, 13)]);
            assert_eq!(ex.execute(&mut t1), TxnOutcome::Committed { seq: 0 });
            assert_eq!(t1.status, TxnStatus::Committed);
            assert_eq!(ex.engine().current_image().item(0, 0), 13);
        }
    }

    #[test]
    fn rollback_restores_pre_images() {
        for kind in VirtualKind::ALL {
            let (ex, _) = executor(kind, 4);
            ex.execute(&mut Transaction::writes(1, &[(1, 5)]));
            let mut t = Transaction::writes(2, &[(1, 7), (2, 9), (1, 11)]);
            t.abort_after_writes = true;
            assert!(!ex.execute(&mut t).is_committed());
            assert_eq!(ex.engine().current_image().first_items(), vec![0, 5, 0, 0], "{kind}");
            assert_eq!(ex.log().unwrap().len(), 1);
            assert_eq!(ex.engine().counters().snapshot().aborts, 1);
        }
    }

    #[test]
    fn lock_timeout_aborts_without_effects() {
        let (ex, _) = executor(VirtualKind::Hourglass, 4);
        let ex = ex.with_lock_timeout(Duration::from_millis(2));
        assert!(ex.locks().acquire(&[3], Duration::ZERO));
        let mut t = Transaction::writes(1, &[(0, 1), (3, 2)]);
        assert_eq!(
            ex.execute(&mut t),
            TxnOutcome::Aborted {
                reason: "lock wait timeout".into()
            }
        );
        ex.locks().release(&[3]);
        assert_eq!(ex.engine().current_image().first_items(), vec![0; 4]);
        assert!(!ex.locks().is_locked(0));
    }

    #[test]
    fn conflicting_writers_serialize() {
        for kind in VirtualKind::ALL {
            let (ex, _) = executor(kind, 1);
            let outcomes: Vec<TxnOutcome> = std::thread::scope(|s| {
                let a = s.spawn(|| ex.execute(&mut Transaction::writes(1, &[(0, 1)])));
                let b = s.spawn(|| ex.execute(&mut Transaction::writes(2, &[(0, 2)])));
                vec![a.join().unwrap(), b.join().unwrap()]
            });
            let last = ex.log().unwrap().ordered().last().unwrap().writes[0].1;
            assert!(outcomes.iter().all(TxnOutcome::is_committed));
            assert_eq!(ex.engine().current_image().item(0, 0), last, "{kind}");
        }
    }

    #[test]
    fn fixed_source_runs_dry() {
        let (ex, init) = executor(VirtualKind::Piggyback, 10);
        let txns: Vec<Transaction> = (0..200)
            .map(|i| Transaction::writes(i, &[((i % 10) as usize, i as u32 + 1)]))
            .collect();
        let config = VirtualConfig {
            threads: 2,
            checkpoints: None,
            trigger: TriggerPolicy::AfterCommits(50),
            max_duration: Duration::from_secs(30),
        };
        let (run, _) = run_virtual(
            &ex,
            TxnSource::Fixed(txns),
            &config,
            crate::persist::NullSink::new(),
            |_, _, _| Ok(()),
        )
        .unwrap();
        assert_eq!(run.commits, 200);
        let replay = ex.log().unwrap().replay(&init, None);
        assert_eq!(ex.engine().current_image(), replay);
    }
}
