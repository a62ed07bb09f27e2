//! Per-tick latency traces, checkpoint records and their aggregation.

use std::fmt;
use std::fs::File;
use std::path::Path;
use std::str::FromStr;
use std::time::Duration;

use crate::algo::CounterSnapshot;
use crate::error::{Error, Result};

/// What the snapshotter was doing during a tick.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PhaseMarker {
    #[default]
    None,
    /// A trigger fired at the start of this tick.
    TakenPhase,
    /// A traverse was in progress at some point during this tick.
    AccessPhase,
}

impl PhaseMarker {
    pub fn as_str(self) -> &'static str {
        match self {
            PhaseMarker::None => "none",
            PhaseMarker::TakenPhase => "taken_phase",
            PhaseMarker::AccessPhase => "access_phase",
        }
    }
}

impl fmt::Display for PhaseMarker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PhaseMarker {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(PhaseMarker::None),
            "taken_phase" => Ok(PhaseMarker::TakenPhase),
            "access_phase" => Ok(PhaseMarker::AccessPhase),
            _ => Err(Error::InvalidParameter(format!("unknown phase '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TickMetrics {
    pub tick_index: u64,
    /// Update-stage duration, including any taken phase that ran in it.
    pub latency: Duration,
    pub updates_applied: u64,
    pub overrun: bool,
    pub phase: PhaseMarker,
}

/// One completed checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CheckpointRecord {
    pub checkpoint_id: u64,
    pub trigger_tick: u64,
    /// Trace entries applied before the trigger.
    pub trace_position: u64,
    pub taken: Duration,
    pub taken_work: u64,
    /// Traverse plus dump.
    pub overhead: Duration,
    pub pages_emitted: u64,
    pub pages_from_last: u64,
    pub piggyback_copies: u64,
}

/// Page-store accounting for a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MemoryUsage {
    pub peak_page_bytes: usize,
    pub dataset_bytes: usize,
    /// The page bytes are logical; the OS shares physical pages.
    pub shares_pages_with_os: bool,
}

impl MemoryUsage {
    pub fn multiplier(&self) -> f64 {
        if self.dataset_bytes == 0 {
            0.0
        } else {
            self.peak_page_bytes as f64 / self.dataset_bytes as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub algorithm: String,
    pub ticks: Vec<TickMetrics>,
    pub checkpoints: Vec<CheckpointRecord>,
    pub avg_latency: Duration,
    pub median_latency: Duration,
    pub max_latency: Duration,
    /// Tick index of the maximum latency.
    pub max_latency_tick: u64,
    /// Updates per millisecond, for full-speed runs.
    pub max_throughput: Option<f64>,
    pub counters: CounterSnapshot,
    pub memory: MemoryUsage,
}

impl RunReport {
    pub fn overruns(&self) -> usize {
        self.ticks.iter().filter(|t| t.overrun).count()
    }

    /// Max over median tick latency. Infinite when the median is zero but the
    /// maximum is not.
    pub fn spike_ratio(&self) -> f64 {
        ratio(self.max_latency, self.median_latency)
    }

    pub fn mean_checkpoint_overhead(&self) -> Duration {
        mean(self.checkpoints.iter().map(|c| c.overhead))
    }

    pub fn max_taken(&self) -> Duration {
        self.checkpoints.iter().map(|c| c.taken).max().unwrap_or_default()
    }

    /// The tick with the highest latency.
    pub fn max_tick(&self) -> Option<&TickMetrics> {
        self.ticks.iter().find(|t| t.tick_index == self.max_latency_tick)
    }

    /// `(metric, value)` pairs in the order written to `summary.csv`.
    pub fn summary_rows(&self) -> Vec<(&'static str, String)> {
        let us = |d: Duration| format!("{:.3}", d.as_secs_f64() * 1e6);
        let c = &self.counters;
        vec![
            ("algorithm", self.algorithm.clone()),
            ("ticks", self.ticks.len().to_string()),
            ("overruns", self.overruns().to_string()),
            ("avg_latency_us", us(self.avg_latency)),
            ("median_latency_us", us(self.median_latency)),
            ("max_latency_us", us(self.max_latency)),
            ("max_latency_tick", self.max_latency_tick.to_string()),
            ("spike_ratio", format!("{:.3}", self.spike_ratio())),
            (
                "max_throughput_updates_per_ms",
                self.max_throughput.map(|t| format!("{t:.3}")).unwrap_or_default(),
            ),
            ("checkpoints", self.checkpoints.len().to_string()),
            ("mean_checkpoint_overhead_us", us(self.mean_checkpoint_overhead())),
            ("max_taken_us", us(self.max_taken())),
            ("logical_writes", c.logical_writes.to_string()),
            ("physical_writes", c.physical_writes.to_string()),
            ("snapshot_copies", c.snapshot_copies.to_string()),
            ("piggyback_copies", c.piggyback_copies.to_string()),
            ("catchup_copies", c.catchup_copies.to_string()),
            ("taken_work", c.taken_work.to_string()),
            ("peak_page_bytes", self.memory.peak_page_bytes.to_string()),
            ("dataset_bytes", self.memory.dataset_bytes.to_string()),
            ("memory_multiplier", format!("{:.4}", self.memory.multiplier())),
            ("shares_pages_with_os", self.memory.shares_pages_with_os.to_string()),
        ]
    }
}

fn ratio(a: Duration, b: Duration) -> f64 {
    if b.is_zero() {
        if a.is_zero() {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        a.as_secs_f64() / b.as_secs_f64()
    }
}

fn mean(it: impl Iterator<Item = Duration>) -> Duration {
    let (sum, n) = it.fold((Duration::ZERO, 0u32), |(s, n), d| (s + d, n + 1));
    if n == 0 {
        Duration::ZERO
    } else {
        sum / n
    }
}

/// Median of a set of durations (upper median for even counts).
pub fn median(values: &[Duration]) -> Option<Duration> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    let mid = v.len() / 2;
    Some(*v.select_nth_unstable(mid).1)
}

pub fn summarize(
    algorithm: &str,
    ticks: Vec<TickMetrics>,
    checkpoints: Vec<CheckpointRecord>,
    counters: CounterSnapshot,
    memory: MemoryUsage,
) -> Result<RunReport> {
    if ticks.is_empty() {
        return Err(Error::Empty("no tick metrics to summarize".into()));
    }
    let latencies: Vec<Duration> = ticks.iter().map(|t| t.latency).collect();
    let max = ticks
        .iter()
        .max_by_key(|t| (t.latency, std::cmp::Reverse(t.tick_index)))
        .expect("non-empty");
    Ok(RunReport {
        algorithm: algorithm.to_string(),
        avg_latency: mean(latencies.iter().copied()),
        median_latency: median(&latencies).expect("non-empty"),
        max_latency: max.latency,
        max_latency_tick: max.tick_index,
        max_throughput: None,
        ticks,
        checkpoints,
        counters,
        memory,
    })
}

/// Writes `trace.csv`, `summary.csv` and `checkpoints.csv` into `dir`.
pub fn export_csv(report: &RunReport, dir: &Path) -> Result<()> {
    export_csv_window(report, dir, None)
}

/// As [`export_csv`], restricting `trace.csv` to ticks in `window`
/// (half-open, by tick index).
pub fn export_csv_window(report: &RunReport, dir: &Path, window: Option<(u64, u64)>) -> Result<()> {
    if dir.as_os_str().is_empty() {
        return Err(Error::InvalidParameter("empty output path".into()));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;

    let mut w = writer(&dir.join("trace.csv"))?;
    w.write_record(["tick", "latency_us", "phase"])?;
    for t in &report.ticks {
        if window.is_some_and(|(lo, hi)| t.tick_index < lo || t.tick_index >= hi) {
            continue;
        }
        w.write_record([
            t.tick_index.to_string(),
            format!("{:.3}", t.latency.as_secs_f64() * 1e6),
            t.phase.to_string(),
        ])?;
    }
    flush(w, dir)?;

    let mut w = writer(&dir.join("summary.csv"))?;
    w.write_record(["metric", "value"])?;
    for (k, v) in report.summary_rows() {
        w.write_record([k, v.as_str()])?;
    }
    flush(w, dir)?;

    let mut w = writer(&dir.join("checkpoints.csv"))?;
    w.write_record([
        "checkpoint_id",
        "trigger_tick",
        "trace_position",
        "taken_us",
        "taken_work",
        "overhead_us",
        "pages_emitted",
        "pages_from_last",
        "piggyback_copies",
    ])?;
    for c in &report.checkpoints {
        w.write_record([
            c.checkpoint_id.to_string(),
            c.trigger_tick.to_string(),
            c.trace_position.to_string(),
            format!("{:.3}", c.taken.as_secs_f64() * 1e6),
            c.taken_work.to_string(),
            format!("{:.3}", c.overhead.as_secs_f64() * 1e6),
            c.pages_emitted.to_string(),
            c.pages_from_last.to_string(),
            c.piggyback_copies.to_string(),
        ])?;
    }
    flush(w, dir)
}

fn writer(path: &Path) -> Result<csv::Writer<File>> {
    let f = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(csv::Writer::from_writer(f))
}

fn flush(mut w: csv::Writer<File>, dir: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(dir.display().to_string(), e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ticks(ms: &[u64]) -> Vec<TickMetrics> {
        ms.iter()
            .enumerate()
            .map(|(i, &m)| TickMetrics {
                tick_index: i as u64,
                latency: Duration::from_millis(m),
                updates_applied: 10,
                overrun: false,
                phase: if i == 2 {
                    PhaseMarker::TakenPhase
                } else {
                    PhaseMarker::None
                },
            })
            .collect()
    }

    #[test]
    fn average_and_maximum() {
        let r = summarize(
            "ns",
            ticks(&[1, 1, 9, 1]),
            vec![],
            CounterSnapshot::default(),
            MemoryUsage::default(),
        )
        .unwrap();
        assert_eq!(r.avg_latency, Duration::from_millis(3));
        assert_eq!(r.max_latency, Duration::from_millis(9));
        assert_eq!(r.median_latency, Duration::from_millis(1));
        assert_eq!(r.max_tick().unwrap().phase, PhaseMarker::TakenPhase);
        assert_eq!(r.spike_ratio(), 9.0);
    }

    #[test]
    fn empty_stream_is_an_error() {
        assert!(summarize("hg", vec![], vec![], CounterSnapshot::default(), MemoryUsage::default()).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let r = summarize(
            "pb",
            ticks(&[1, 2, 3]),
            vec![],
            CounterSnapshot::default(),
            MemoryUsage::default(),
        )
        .unwrap();
        export_csv(&r, dir.path()).unwrap();
        let mut rd = csv::Reader::from_path(dir.path().join("trace.csv")).unwrap();
        assert_eq!(rd.headers().unwrap(), vec!["tick", "latency_us", "phase"]);
        let rows: Vec<(u64, f64, String)> = rd.deserialize().map(|r| r.unwrap()).collect();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[1], (1, 2000.0, "none".into()));
        assert_eq!(rows[2].2.parse::<PhaseMarker>().unwrap(), PhaseMarker::TakenPhase);

        let mut rd = csv::Reader::from_path(dir.path().join("summary.csv")).unwrap();
        let summary: Vec<(String, String)> = rd.deserialize().map(|r| r.unwrap()).collect();
        let expected: Vec<(String, String)> = r.summary_rows().into_iter().map(|(k, v)| (k.to_string(), v)).collect();
        assert_eq!(summary, expected);

        assert!(export_csv(&r, Path::new("")).is_err());
    }

    #[test]
    fn window_limits_trace_rows() {
        let dir = tempfile::tempdir().unwrap();
        let r = summarize(
            "hg",
            ticks(&[1, 2, 3, 4, 5]),
            vec![],
            CounterSnapshot::default(),
            MemoryUsage::default(),
        )
        .unwrap();
        export_csv_window(&r, dir.path(), Some((1, 3))).unwrap();
        let n = csv::Reader::from_path(dir.path().join("trace.csv"))
            .unwrap()
            .records()
            .count();
        assert_eq!(n, 2);
    }
}
