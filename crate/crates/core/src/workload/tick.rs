//! Drivers pairing the client loop with a snapshotter thread.

use std::sync::mpsc;
use std::thread;
use std::time::{Duration, Instant};

use crate::algo::{SnapshotAlgorithm, TakenPhase};
use crate::error::{Error, Result};
use crate::metrics::{CheckpointRecord, PhaseMarker, TickMetrics};
use crate::persist::SnapshotSink;
use crate::sys::lower_current_thread_priority;
use crate::workload::UpdateTrace;

/// Tick-by-tick client schedule: each tick applies `uf` updates, then idles
/// until the tick boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TickSchedule {
    pub tick_length: Duration,
    pub uf: usize,
    pub checkpoint_interval: Duration,
    pub checkpoint_count: usize,
}

impl TickSchedule {
    pub fn new(
        tick_length: Duration,
        uf: usize,
        checkpoint_interval: Duration,
        checkpoint_count: usize,
    ) -> Result<Self> {
        if tick_length.is_zero() {
            return Err(Error::InvalidParameter("tick length must be positive".into()));
        }
        if checkpoint_interval < tick_length {
            return Err(Error::InvalidParameter(format!(
                "checkpoint interval {checkpoint_interval:?} shorter than a tick"
            )));
        }
        if checkpoint_count == 0 {
            return Err(Error::InvalidParameter("checkpoint count must be at least 1".into()));
        }
        Ok(TickSchedule {
            tick_length,
            uf,
            checkpoint_interval,
            checkpoint_count,
        })
    }

    pub fn ticks_per_checkpoint(&self) -> u64 {
        ((self.checkpoint_interval.as_secs_f64() / self.tick_length.as_secs_f64()).round() as u64).max(1)
    }

    /// Ticks up to the last trigger plus one interval for its traverse.
    pub fn planned_ticks(&self) -> u64 {
        (self.checkpoint_count as u64 + 1) * self.ticks_per_checkpoint()
    }

    /// Trace length that covers [`TickSchedule::planned_ticks`].
    pub fn required_entries(&self) -> usize {
        self.planned_ticks() as usize * self.uf
    }

    pub fn updates_per_second(&self) -> f64 {
        self.uf as f64 / self.tick_length.as_secs_f64()
    }
}

/// Everything a tick run produced besides the sink.
#[derive(Debug, Clone, Default)]
pub struct TickRun {
    pub ticks: Vec<TickMetrics>,
    pub checkpoints: Vec<CheckpointRecord>,
    pub trace_consumed: usize,
    /// Checkpoint boundaries reached while the previous snapshot was still
    /// being traversed; the trigger then fires at the first later tick.
    pub deferred_triggers: u64,
}

#[derive(Debug, Clone, Copy)]
struct Triggered {
    taken: TakenPhase,
    tick: u64,
    position: usize,
}

/// Snapshotter thread body: traverse each triggered snapshot into `sink`.
fn snapshotter<S, F>(
    algo: &dyn SnapshotAlgorithm,
    rx: mpsc::Receiver<Triggered>,
    mut sink: S,
    mut on_snapshot: F,
) -> Result<(Vec<CheckpointRecord>, S)>
where
    S: SnapshotSink,
    F: FnMut(&CheckpointRecord, &S) -> Result<()>,
{
    lower_current_thread_priority();
    let mut records = Vec::new();
    for t in rx {
        let stats = algo.traverse_snapshot(&mut sink)?;
        let record = CheckpointRecord {
            checkpoint_id: t.taken.checkpoint_id,
            trigger_tick: t.tick,
            trace_position: t.position as u64,
            taken: t.taken.duration,
            taken_work: t.taken.work,
            overhead: stats.duration,
            pages_emitted: stats.pages_emitted,
            pages_from_last: stats.pages_from_last,
            piggyback_copies: stats.piggyback_copies,
        };
        on_snapshot(&record, &sink)?;
        records.push(record);
    }
    Ok((records, sink))
}

fn join<T>(handle: thread::ScopedJoinHandle<'_, Result<T>>) -> Result<T> {
    handle
        .join()
        .unwrap_or_else(|_| Err(Error::Sink("snapshotter thread panicked".into())))
}

/// Runs the tick schedule until `checkpoint_count` checkpoints have been
/// triggered and traversed.
///
/// Triggers fire at the start of ticks `k * ticks_per_checkpoint` (k ≥ 1), on
/// this thread, between update batches. The snapshotter thread traverses into
/// `sink` and calls `on_snapshot` after each close. A tick whose update stage
/// overruns the tick length is marked and the next tick starts immediately.
pub fn run_ticks<S, F>(
    algo: &dyn SnapshotAlgorithm,
    trace: &UpdateTrace,
    schedule: &TickSchedule,
    sink: S,
    on_snapshot: F,
) -> Result<(TickRun, S)>
where
    S: SnapshotSink,
    F: FnMut(&CheckpointRecord, &S) -> Result<()> + Send,
{
    let entries = trace.entries();
    let per_checkpoint = schedule.ticks_per_checkpoint();
    let uf = schedule.uf;
    thread::scope(|scope| {
        let (tx, rx) = mpsc::channel::<Triggered>();
        let handle = scope.spawn(move || snapshotter(algo, rx, sink, on_snapshot));

        let mut run = TickRun {
            ticks: Vec::with_capacity(schedule.planned_ticks() as usize),
            ..TickRun::default()
        };
        let client = (|| -> Result<()> {
            let mut triggered = 0;
            let mut owed = false;
            let mut next_start = Instant::now();
            for tick in 0u64.. {
                if triggered == schedule.checkpoint_count && algo.previous_snapshot_done() {
                    break;
                }
                if tick > 0 && tick % per_checkpoint == 0 && triggered < schedule.checkpoint_count {
                    owed = true;
                }
                let start = Instant::now();
                let mut phase = PhaseMarker::None;
                if !algo.previous_snapshot_done() {
                    phase = PhaseMarker::AccessPhase;
                    if owed {
                        run.deferred_triggers += 1;
                    }
                } else if owed {
                    let taken = algo.take_snapshot()?;
                    tx.send(Triggered {
                        taken,
                        tick,
                        position: run.trace_consumed,
                    })
                    .map_err(|_| Error::Sink("snapshotter thread exited".into()))?;
                    triggered += 1;
                    owed = false;
                    phase = PhaseMarker::TakenPhase;
                }
                let end = run.trace_consumed + uf;
                if end > entries.len() {
                    return Err(Error::TraceExhausted {
                        consumed: run.trace_consumed,
                    });
                }
                for &e in &entries[run.trace_consumed..end] {
                    algo.apply(e);
                }
                run.trace_consumed = end;
                let latency = start.elapsed();
                if phase == PhaseMarker::None && !algo.previous_snapshot_done() {
                    phase = PhaseMarker::AccessPhase;
                }
                run.ticks.push(TickMetrics {
                    tick_index: tick,
                    latency,
                    updates_applied: uf as u64,
                    overrun: latency > schedule.tick_length,
                    phase,
                });
                next_start += schedule.tick_length;
                let now = Instant::now();
                if now >= next_start {
                    next_start = now;
                } else {
                    thread::sleep(next_start - now);
                }
            }
            Ok(())
        })();
        drop(tx);
        let snap = join(handle);
        client?;
        let (records, sink) = snap?;
        run.checkpoints = records;
        Ok((run, sink))
    })
}

/// Outcome of a no-wait run.
#[derive(Debug, Clone, Default)]
pub struct FullSpeedRun {
    pub updates: u64,
    pub elapsed: Duration,
    pub checkpoints: Vec<CheckpointRecord>,
}

impl FullSpeedRun {
    /// Updates per millisecond; zero for an empty run.
    pub fn throughput_per_ms(&self) -> f64 {
        let ms = self.elapsed.as_secs_f64() * 1e3;
        if self.updates == 0 || ms == 0.0 {
            0.0
        } else {
            self.updates as f64 / ms
        }
    }
}

/// Entries applied between clock checks in [`run_full_speed`].
const FULL_SPEED_BATCH: usize = 4096;

/// Applies updates as fast as possible for `duration`, wrapping around the
/// trace, and triggers a snapshot every `checkpoint_interval` (none when
/// `None`). Trigger costs are part of the measured time.
pub fn run_full_speed<S>(
    algo: &dyn SnapshotAlgorithm,
    trace: &UpdateTrace,
    duration: Duration,
    checkpoint_interval: Option<Duration>,
    sink: S,
) -> Result<(FullSpeedRun, S)>
where
    S: SnapshotSink,
{
    if checkpoint_interval.is_some_and(|i| i.is_zero()) {
        return Err(Error::InvalidParameter("checkpoint interval must be positive".into()));
    }
    let entries = trace.entries();
    if entries.is_empty() && !duration.is_zero() {
        return Err(Error::Empty("full-speed run needs a non-empty trace".into()));
    }
    thread::scope(|scope| {
        let (tx, rx) = mpsc::channel::<Triggered>();
        let handle = scope.spawn(move || snapshotter(algo, rx, sink, |_, _| Ok(())));
        let mut run = FullSpeedRun::default();
        let client = (|| -> Result<()> {
            let start = Instant::now();
            let mut next_trigger = checkpoint_interval.map(|i| start + i);
            let mut pos = 0;
            let mut batches = 0u64;
            while start.elapsed() < duration {
                if let Some(at) = next_trigger {
                    if Instant::now() >= at && algo.previous_snapshot_done() {
                        let taken = algo.take_snapshot()?;
                        tx.send(Triggered {
                            taken,
                            tick: batches,
                            position: run.updates as usize,
                        })
                        .map_err(|_| Error::Sink("snapshotter thread exited".into()))?;
                        next_trigger = checkpoint_interval.map(|i| at + i);
                    }
                }
                let end = (pos + FULL_SPEED_BATCH).min(entries.len());
                for &e in &entries[pos..end] {
                    algo.apply(e);
                }
                run.updates += (end - pos) as u64;
                pos = if end == entries.len() { 0 } else { end };
                batches += 1;
            }
            run.elapsed = start.elapsed();
            Ok(())
        })();
        drop(tx);
        let snap = join(handle);
        client?;
        let (records, sink) = snap?;
        run.checkpoints = records;
        Ok((run, sink))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algo::{build, AlgorithmConfig, AlgorithmKind};
    use crate::oracle::Replayer;
    use crate::persist::{MemorySink, NullSink};
    use crate::store::{Layout, PageImage};
    use crate::workload::generate_trace;

    fn schedule(uf: usize, checkpoints: usize) -> TickSchedule {
        TickSchedule::new(Duration::from_millis(2), uf, Duration::from_millis(10), checkpoints).unwrap()
    }

    #[test]
    fn uf_rate_matches_table() {
        // 128k updates per 100 ms tick on a 4000 MB store of 4-byte items.
        let s = TickSchedule::new(Duration::from_millis(100), 128_000, Duration::from_secs(10), 1).unwrap();
        let items = 4000.0 * 1024.0 * 1024.0 / 4.0;
        let pct = s.updates_per_second() / items * 100.0;
        assert!((pct - 0.128).abs() < 0.01, "{pct}");
    }

    #[test]
    fn tick_accounting_and_oracle() {
        let init = PageImage::zeroed(Layout::with_pages(64).unwrap());
        let s = schedule(50, 3);
        let trace = generate_trace(64, s.required_entries() * 2, 2.0, 5).unwrap();
        let algo = build(AlgorithmKind::Hourglass, &init, &AlgorithmConfig::default()).unwrap();
        let mut oracle = Replayer::new(init.clone());
        let (run, _) = run_ticks(algo.as_ref(), &trace, &s, MemorySink::new(init), |rec, sink| {
            let want = oracle.advance_to(&trace, rec.trace_position as usize)?;
            assert_eq!(sink.image().as_bytes(), want.as_bytes());
            Ok(())
        })
        .unwrap();
        assert_eq!(run.checkpoints.len(), 3);
        let applied: u64 = run.ticks.iter().map(|t| t.updates_applied).sum();
        assert_eq!(applied as usize, run.trace_consumed);
        assert_eq!(algo.counters().snapshot().logical_writes, applied);
        let taken = run.ticks.iter().filter(|t| t.phase == PhaseMarker::TakenPhase).count();
        assert_eq!(taken, 3);
    }

    #[test]
    fn zero_uf_applies_nothing() {
        let init = PageImage::zeroed(Layout::with_pages(8).unwrap());
        let trace = generate_trace(8, 1, 2.0, 1).unwrap();
        let algo = build(AlgorithmKind::Piggyback, &init, &AlgorithmConfig::default()).unwrap();
        let (run, _) = run_ticks(algo.as_ref(), &trace, &schedule(0, 2), NullSink::new(), |_, _| Ok(())).unwrap();
        assert_eq!(run.trace_consumed, 0);
        assert_eq!(run.checkpoints.len(), 2);
    }

    #[test]
    fn short_trace_is_reported() {
        let init = PageImage::zeroed(Layout::with_pages(8).unwrap());
        let trace = generate_trace(8, 10, 2.0, 1).unwrap();
        let algo = build(AlgorithmKind::Naive, &init, &AlgorithmConfig::default()).unwrap();
        let err = run_ticks(algo.as_ref(), &trace, &schedule(4, 2), NullSink::new(), |_, _| Ok(())).unwrap_err();
        assert!(matches!(err, Error::TraceExhausted { consumed: 8 }));
    }

    #[test]
    fn zero_duration_full_speed() {
        let init = PageImage::zeroed(Layout::with_pages(8).unwrap());
        let trace = generate_trace(8, 100, 2.0, 1).unwrap();
        let algo = build(AlgorithmKind::Hourglass, &init, &AlgorithmConfig::default()).unwrap();
        let (run, _) = run_full_speed(algo.as_ref(), &trace, Duration::ZERO, None, NullSink::new()).unwrap();
        assert_eq!(run.updates, 0);
        assert_eq!(run.throughput_per_ms(), 0.0);
    }

    #[test]
    fn full_speed_triggers_and_wraps() {
        let init = PageImage::zeroed(Layout::with_pages(16).unwrap());
        let trace = generate_trace(16, 1000, 2.0, 1).unwrap();
        let algo = build(AlgorithmKind::PingPong, &init, &AlgorithmConfig::default()).unwrap();
        let (run, _) = run_full_speed(
            algo.as_ref(),
            &trace,
            Duration::from_millis(60),
            Some(Duration::from_millis(10)),
            NullSink::new(),
        )
        .unwrap();
        assert!(run.updates > 1000);
        assert!(!run.checkpoints.is_empty());
        assert!(run.throughput_per_ms() > 0.0);
    }
}
