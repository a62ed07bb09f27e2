use std::fmt::Write as _;
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::kv::{GcLedger, KvDump, KvMode, KvStore, KvTaken};
use crate::metrics::median;
use crate::workload::{MixedWorkload, Op};

/// Key of record `i`.
pub fn record_key(i: u64) -> String {
    format!("user{i}")
}

fn write_key(buf: &mut String, i: u64) {
    buf.clear();
    let _ = write!(buf, "user{i}");
}

fn stamp(value: &mut [u8], n: u64) {
    let k = value.len().min(8);
    value[..k].copy_from_slice(&n.to_le_bytes()[..k]);
}

/// Inserts records `0..count`, each with a `value_size`-byte value.
pub fn load_records(store: &mut KvStore, count: u64, value_size: usize) -> Result<()> {
    let mut key = String::new();
    let mut value = vec![b'v'; value_size];
    for i in 0..count {
        write_key(&mut key, i);
        stamp(&mut value, i);
        store.put(&key, &value)?;
    }
    Ok(())
}

/// Value of every record after the first `upto` operations of the client
/// stream that [`run_kv`] drives over freshly loaded records.
pub fn replay_kv(workload: &MixedWorkload, config: &KvRunConfig, upto: u64) -> Vec<Vec<u8>> {
    let mut values: Vec<Vec<u8>> = (0..workload.record_count)
        .map(|i| {
            let mut v = vec![b'v'; config.value_size];
            stamp(&mut v, i);
            v
        })
        .collect();
    let mut update = vec![b'u'; config.value_size];
    for (n, op) in workload.endless(0, config.seed).take(upto as usize).enumerate() {
        if let Op::Update(r) = op {
            stamp(&mut update, n as u64);
            values[r as usize].clone_from(&update);
        }
    }
    values
}

#[derive(Debug, Clone)]
pub struct KvRunConfig {
    /// Operations per tick.
    pub tick_ops: usize,
    pub tick_length: Duration,
    pub interval: Duration,
    pub checkpoints: usize,
    pub value_size: usize,
    pub seed: u64,
    pub max_duration: Duration,
}

impl Default for KvRunConfig {
    fn default() -> Self {
        KvRunConfig {
            tick_ops: 2000,
            tick_length: Duration::from_millis(10),
            interval: Duration::from_secs(1),
            checkpoints: 5,
            value_size: 100,
            seed: 42,
            max_duration: Duration::from_secs(120),
        }
    }
}

#[derive(Debug, Clone)]
pub struct KvRun {
    pub mode: KvMode,
    pub records: usize,
    /// Latency of every tick's operations, trigger included.
    pub ticks: Vec<Duration>,
    /// Index into `ticks` of each tick that triggered.
    pub trigger_ticks: Vec<usize>,
    /// Operations applied before each trigger.
    pub trigger_ops: Vec<u64>,
    pub taken: Vec<KvTaken>,
    pub dumps: Vec<KvDump>,
    pub ops: u64,
    pub updates: u64,
    pub dataset_bytes: u64,
    pub ledger: GcLedger,
}

impl KvRun {
    /// Longest tick that contained a trigger.
    pub fn max_stall(&self) -> Duration {
        self.trigger_ticks
            .iter()
            .map(|&i| self.ticks[i])
            .max()
            .unwrap_or_default()
    }

    pub fn median_tick(&self) -> Duration {
        median(&self.ticks).unwrap_or_default()
    }

    pub fn update_fraction(&self) -> f64 {
        if self.ops == 0 {
            0.0
        } else {
            self.updates as f64 / self.ops as f64
        }
    }

    /// Highest live-bytes-to-dataset ratio seen right after a collection.
    pub fn max_post_gc_ratio(&self) -> f64 {
        self.dumps
            .iter()
            .map(|d| d.live_after_gc as f64 / self.dataset_bytes as f64)
            .fold(0.0, f64::max)
    }
}

/// Drives `store` as the single client on the calling thread while a
/// background thread dumps and collects garbage. Keys are drawn from
/// `workload` over records `0..record_count`, which must already be loaded.
pub fn run_kv(mut store: KvStore, workload: &MixedWorkload, config: &KvRunConfig) -> Result<(KvRun, KvStore)> {
    if config.checkpoints == 0 || config.tick_ops == 0 {
        return Err(Error::InvalidParameter(
            "checkpoints and tick_ops must be positive".into(),
        ));
    }
    if (store.len() as u64) < workload.record_count {
        return Err(Error::InvalidParameter(format!(
            "store holds {} records, workload addresses {}",
            store.len(),
            workload.record_count
        )));
    }
    let snapshotter = store.snapshotter();
    let stop = AtomicBool::new(false);
    let start = Instant::now();
    let mut run = KvRun {
        mode: store.mode(),
        records: store.len(),
        ticks: Vec::new(),
        trigger_ticks: Vec::new(),
        trigger_ops: Vec::new(),
        taken: Vec::new(),
        dumps: Vec::new(),
        ops: 0,
        updates: 0,
        dataset_bytes: 0,
        ledger: GcLedger::default(),
    };

    let (client, dumps) = std::thread::scope(|s| {
        let bg = s.spawn(|| -> Result<Vec<KvDump>> {
            crate::sys::lower_current_thread_priority();
            let mut dumps = Vec::new();
            loop {
                if snapshotter.has_pending() {
                    dumps.push(snapshotter.dump()?);
                } else if stop.load(Ordering::Acquire) {
                    return Ok(dumps);
                } else {
                    std::thread::sleep(Duration::from_micros(200));
                }
            }
        });

        let client = (|| -> Result<()> {
            let mut ops = workload.endless(0, config.seed);
            let mut key = String::new();
            let mut value = vec![b'u'; config.value_size];
            let mut next_trigger = start + config.interval;
            loop {
                let now = Instant::now();
                if now.duration_since(start) >= config.max_duration || bg.is_finished() {
                    return Ok(());
                }
                if run.taken.len() >= config.checkpoints && store.previous_snapshot_done() {
                    return Ok(());
                }
                if now >= next_trigger && run.taken.len() < config.checkpoints && store.previous_snapshot_done() {
                    if let Some(taken) = store.trigger()? {
                        run.taken.push(taken);
                        run.trigger_ticks.push(run.ticks.len());
                        run.trigger_ops.push(run.ops);
                    }
                    next_trigger = now + config.interval;
                }
                for _ in 0..config.tick_ops {
                    match ops.next().expect("endless stream") {
                        Op::Read(r) => {
                            write_key(&mut key, r);
                            std::hint::black_box(store.get(&key));
                        }
                        Op::Update(r) => {
                            write_key(&mut key, r);
                            stamp(&mut value, run.ops);
                            store.put(&key, &value)?;
                            run.updates += 1;
                        }
                    }
                    run.ops += 1;
                }
                run.ticks.push(now.elapsed());
                let end = now + config.tick_length;
                let rest = end.saturating_duration_since(Instant::now());
                if !rest.is_zero() {
                    std::thread::sleep(rest);
                }
            }
        })();
        stop.store(true, Ordering::Release);
        (client, bg.join().expect("snapshotter panicked"))
    });
    client?;
    run.dumps = dumps?;
    run.dataset_bytes = store.dataset_bytes();
    run.ledger = store.ledger();
    Ok((run, store))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kv::{read_dump, DumpTarget, KvConfig};

    #[test]
    fn short_run_dumps_every_record() {
        let dir = tempfile::tempdir().unwrap();
        let mut kv = KvStore::new(
            KvMode::Hourglass,
            KvConfig {
                dump: DumpTarget::Dir(dir.path().to_path_buf()),
                ..KvConfig::default()
            },
        )
        .unwrap();
        load_records(&mut kv, 1000, 16).unwrap();
        let w = MixedWorkload::new(1000, 0, 0.5, 1).unwrap();
        let config = KvRunConfig {
            tick_ops: 100,
            tick_length: Duration::from_millis(1),
            interval: Duration::from_millis(5),
            checkpoints: 3,
            value_size: 16,
            ..KvRunConfig::default()
        };
        let (run, _kv) = run_kv(kv, &w, &config).unwrap();
        assert_eq!(run.dumps.len(), 3);
        assert_eq!(run.trigger_ticks.len(), 3);
        assert_eq!(run.dumps[0].from_memory, 1000);
        let last = read_dump(run.dumps[2].path.as_ref().unwrap()).unwrap();
        assert_eq!(last.len(), 1000);
        assert_eq!(last[7].0, record_key(7));
        assert!(run.update_fraction() > 0.3);
        let want = replay_kv(&w, &config, run.trigger_ops[2]);
        assert!(last.iter().zip(&want).all(|((_, got), want)| got == want));
    }
}
