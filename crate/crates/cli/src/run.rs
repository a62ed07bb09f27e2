//! One benchmark run end to end: pre-flight, run directory, experiment,
//! verification and CSV output.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};

use snapkit::kv::{load_records, read_dump, record_key, replay_kv, DumpTarget, KvConfig, KvRun, KvRunConfig, KvStore};
use snapkit::metrics::{export_csv_window, summarize, MemoryUsage, PhaseMarker, RunReport};
use snapkit::persist::verify_file;
use snapkit::vsnap::{run_virtual, Executor, TriggerPolicy, TxnSource, VirtualConfig, VirtualRun};
use snapkit::workload::{run_full_speed, run_ticks, TickSchedule};
use snapkit::{
    build, build_virtual, generate_trace, AlgorithmConfig, AlgorithmKind, FileSink, Layout, MemorySink, MixedWorkload,
    NullSink, PageImage, Replayer, SnapshotAlgorithm, UpdateTrace, VirtualEngine, VirtualKind,
};

use crate::config::{BenchConfig, Mode, Selected};

/// Operations per generated transaction in virtual mode.
pub const TXN_OPS: usize = 4;
/// Value size of key-value records.
pub const KV_VALUE_SIZE: usize = 100;
/// Rough per-record overhead of the key-value store beyond its value bytes:
/// slot, key, index entry and allocator headers.
const KV_RECORD_OVERHEAD: u64 = 200;
/// Trace entries generated for full-speed runs, which wrap around.
const FULL_SPEED_TRACE: usize = 1 << 22;

#[derive(Debug, Clone)]
pub struct BenchOutcome {
    pub run_dir: PathBuf,
    /// `(metric, value)` rows, as written to `summary.csv`.
    pub summary: Vec<(String, String)>,
    /// Tick and full-speed runs.
    pub report: Option<RunReport>,
    pub virtual_run: Option<VirtualRun>,
    pub kv_run: Option<KvRun>,
    /// `None` with `--no-verify`.
    pub verified: Option<bool>,
}

impl BenchOutcome {
    pub fn metric(&self, name: &str) -> Option<&str> {
        self.summary.iter().find(|(k, _)| k == name).map(|(_, v)| v.as_str())
    }
}

/// Bytes the run needs in memory: page stores per the algorithm's multiplier
/// plus the trace and, when verifying, the oracle image.
pub fn required_memory(config: &BenchConfig) -> Result<u64> {
    let dataset = Layout::from_megabytes(config.data_mb)?.dataset_bytes() as u64;
    let oracle = if config.verify { dataset } else { 0 };
    let entry = std::mem::size_of::<snapkit::TraceEntry>() as u64;
    Ok(match config.selected()? {
        Selected::Physical(kind) => {
            let trace = match config.mode {
                Mode::FullSpeed => FULL_SPEED_TRACE as u64,
                _ => tick_schedule(config)?.required_entries() as u64,
            };
            kind.memory_multiplier() as u64 * dataset + trace * entry + oracle
        }
        // Live and stable/second stores, plus the replay and sink images.
        Selected::Virtual(_) => 2 * dataset + 2 * oracle,
        Selected::Kv(_) => {
            let record = KV_VALUE_SIZE as u64 + KV_RECORD_OVERHEAD;
            2 * config.records * record
                + if config.verify {
                    config.records * KV_VALUE_SIZE as u64 * 2
                } else {
                    0
                }
        }
    })
}

/// `MemAvailable` from `/proc/meminfo`, when the platform has it.
pub fn available_memory() -> Option<u64> {
    let text = fs::read_to_string("/proc/meminfo").ok()?;
    let line = text.lines().find(|l| l.starts_with("MemAvailable:"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}

fn preflight(config: &BenchConfig) -> Result<()> {
    let need = required_memory(config)?;
    if let Some(have) = available_memory() {
        if need > have {
            bail!(
                "insufficient memory: {} needs about {} MB, {} MB available",
                config.algo,
                need >> 20,
                have >> 20
            );
        }
    }
    Ok(())
}

/// `out/<algo>-<mode>-<unix millis>`, suffixed when taken.
fn create_run_dir(config: &BenchConfig) -> Result<PathBuf> {
    let millis = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .unwrap_or_default()
        .as_millis();
    let base = format!("{}-{}-{millis}", config.algo, config.mode);
    fs::create_dir_all(&config.out).with_context(|| format!("creating {}", config.out.display()))?;
    for n in 0.. {
        let name = if n == 0 { base.clone() } else { format!("{base}-{n}") };
        let dir = config.out.join(name);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e).with_context(|| format!("creating {}", dir.display())),
        }
    }
    unreachable!()
}

fn tick_schedule(config: &BenchConfig) -> Result<TickSchedule> {
    Ok(TickSchedule::new(
        config.tick_length(),
        config.uf,
        config.interval(),
        config.checkpoints,
    )?)
}

fn write_summary(dir: &Path, rows: &[(String, String)]) -> Result<()> {
    let path = dir.join("summary.csv");
    let mut w = csv::Writer::from_path(&path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(["metric", "value"])?;
    for (k, v) in rows {
        w.write_record([k, v])?;
    }
    w.flush()?;
    Ok(())
}

fn us(d: Duration) -> String {
    format!("{:.3}", d.as_secs_f64() * 1e6)
}

fn owned(rows: Vec<(&'static str, String)>) -> Vec<(String, String)> {
    rows.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

/// Runs the configured experiment and writes its directory.
pub fn run_bench(config: &BenchConfig) -> Result<BenchOutcome> {
    config.validate()?;
    preflight(config)?;
    let dir = create_run_dir(config)?;
    fs::write(dir.join("config.txt"), config.echo())?;
    let mut outcome = match config.selected()? {
        Selected::Physical(kind) if config.mode == Mode::Tick => run_tick_mode(config, kind, &dir)?,
        Selected::Physical(kind) => run_full_speed_mode(config, kind, &dir)?,
        Selected::Virtual(kind) => run_virtual_mode(config, kind, &dir)?,
        Selected::Kv(mode) => run_kv_mode(config, mode, &dir)?,
    };
    let verified = match outcome.verified {
        Some(v) => v.to_string(),
        None => "skipped".into(),
    };
    outcome.summary.push(("verified".into(), verified));
    write_summary(&dir, &outcome.summary)?;
    Ok(outcome)
}

fn physical(config: &BenchConfig, kind: AlgorithmKind, dir: &Path) -> Result<(PageImage, Box<dyn SnapshotAlgorithm>)> {
    let init = PageImage::zeroed(Layout::from_megabytes(config.data_mb)?);
    let spool = AlgorithmConfig {
        spool_dir: Some(dir.join("spool")),
    };
    let algo = build(kind, &init, &spool)?;
    Ok((init, algo))
}

fn memory(algo: &dyn SnapshotAlgorithm, init: &PageImage) -> MemoryUsage {
    MemoryUsage {
        peak_page_bytes: algo.page_store_bytes(),
        dataset_bytes: init.layout().dataset_bytes(),
        shares_pages_with_os: algo.shares_pages_with_os(),
    }
}

fn run_tick_mode(config: &BenchConfig, kind: AlgorithmKind, dir: &Path) -> Result<BenchOutcome> {
    let schedule = tick_schedule(config)?;
    let (init, algo) = physical(config, kind, dir)?;
    let trace = generate_trace(
        init.layout().page_count(),
        schedule.required_entries(),
        config.alpha,
        config.seed,
    )?;
    let mut oracle = config.verify.then(|| Replayer::new(init.clone()));
    let mut mismatches = 0u64;
    let run = if config.null_sink {
        run_ticks(algo.as_ref(), &trace, &schedule, NullSink::new(), |_, _| Ok(()))?.0
    } else {
        let sink = FileSink::new(&dir.join("snapshots"), &init)?;
        run_ticks(algo.as_ref(), &trace, &schedule, sink, |rec, sink| {
            if let Some(o) = oracle.as_mut() {
                let want = o.advance_to(&trace, rec.trace_position as usize)?;
                if !verify_file(&sink.last_full().path, want)? {
                    mismatches += 1;
                }
            }
            Ok(())
        })?
        .0
    };
    let _ = fs::remove_dir_all(dir.join("spool"));
    let verified = match oracle {
        Some(mut o) => {
            let live = o.advance_to(&trace, run.trace_consumed)?;
            Some(mismatches == 0 && algo.client_view().as_bytes() == live.as_bytes())
        }
        None => None,
    };
    let report = summarize(
        kind.id(),
        run.ticks,
        run.checkpoints,
        algo.counters().snapshot(),
        memory(algo.as_ref(), &init),
    )?;
    export_csv_window(&report, dir, config.trace_window)?;
    let mut summary = owned(report.summary_rows());
    summary.push(("deferred_triggers".into(), run.deferred_triggers.to_string()));
    Ok(BenchOutcome {
        run_dir: dir.to_path_buf(),
        summary,
        report: Some(report),
        virtual_run: None,
        kv_run: None,
        verified,
    })
}

/// Final state of a client that applied `updates` entries of `trace`,
/// wrapping around: one whole pass, then the remainder.
fn wrapped_replay(init: &PageImage, trace: &UpdateTrace, updates: u64) -> Result<PageImage> {
    let len = trace.len() as u64;
    let mut image = init.clone();
    if updates >= len {
        image = Replayer::new(image).advance_to(trace, trace.len())?.clone();
    }
    let rest = if updates >= len { updates % len } else { updates };
    Ok(Replayer::new(image).advance_to(trace, rest as usize)?.clone())
}

fn run_full_speed_mode(config: &BenchConfig, kind: AlgorithmKind, dir: &Path) -> Result<BenchOutcome> {
    let (init, algo) = physical(config, kind, dir)?;
    let trace = generate_trace(init.layout().page_count(), FULL_SPEED_TRACE, config.alpha, config.seed)?;
    let duration = config.interval() * config.checkpoints as u32;
    let (run, _) = run_full_speed(
        algo.as_ref(),
        &trace,
        duration,
        Some(config.interval()),
        NullSink::new(),
    )?;
    let _ = fs::remove_dir_all(dir.join("spool"));
    let verified = if config.verify {
        let want = wrapped_replay(&init, &trace, run.updates)?;
        Some(algo.client_view().as_bytes() == want.as_bytes())
    } else {
        None
    };
    let report = RunReport {
        algorithm: kind.id().to_string(),
        ticks: Vec::new(),
        checkpoints: run.checkpoints.clone(),
        avg_latency: Duration::ZERO,
        median_latency: Duration::ZERO,
        max_latency: Duration::ZERO,
        max_latency_tick: 0,
        max_throughput: Some(run.throughput_per_ms()),
        counters: algo.counters().snapshot(),
        memory: memory(algo.as_ref(), &init),
    };
    let mut summary = owned(report.summary_rows());
    summary.retain(|(k, _)| !k.contains("latency") && k != "spike_ratio" && k != "overruns" && k != "ticks");
    summary.push(("updates".into(), run.updates.to_string()));
    summary.push(("elapsed_s".into(), format!("{:.3}", run.elapsed.as_secs_f64())));
    write_checkpoints(dir, &report)?;
    Ok(BenchOutcome {
        run_dir: dir.to_path_buf(),
        summary,
        report: Some(report),
        virtual_run: None,
        kv_run: None,
        verified,
    })
}

fn write_checkpoints(dir: &Path, report: &RunReport) -> Result<()> {
    let mut w = csv::Writer::from_path(dir.join("checkpoints.csv"))?;
    w.write_record(["checkpoint", "taken_us", "taken_work", "overhead_us", "pages_emitted"])?;
    for c in &report.checkpoints {
        w.write_record([
            c.checkpoint_id.to_string(),
            us(c.taken),
            c.taken_work.to_string(),
            us(c.overhead),
            c.pages_emitted.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn run_virtual_mode(config: &BenchConfig, kind: VirtualKind, dir: &Path) -> Result<BenchOutcome> {
    // Transactions write whole records, one per page.
    let paged = Layout::from_megabytes(config.data_mb)?;
    let init = PageImage::zeroed(Layout::new(paged.page_count(), paged.page_size(), paged.page_size())?);
    let pages = init.layout().page_count() as u64;
    let engine: Arc<dyn VirtualEngine> = build_virtual(kind, &init).into();
    let mut executor = Executor::new(engine.clone());
    if !config.verify {
        executor = executor.without_log();
    }
    let workload = MixedWorkload::new(pages, 0, config.update_prop, config.threads)?;
    let vconfig = VirtualConfig {
        threads: config.threads,
        checkpoints: Some(config.checkpoints),
        trigger: TriggerPolicy::Every(config.interval()),
        max_duration: config.interval() * (config.checkpoints as u32 + 2) + Duration::from_secs(60),
    };
    let source = TxnSource::Mixed {
        workload,
        ops_per_txn: TXN_OPS,
        seed: config.seed,
    };
    let mut mismatches = 0u64;
    let run = if config.verify {
        let sink = MemorySink::new(init.clone());
        run_virtual(&executor, source, &vconfig, sink, |snap, sink, log| {
            let want = log
                .expect("verifying runs keep the log")
                .replay(&init, Some(snap.point));
            if sink.image().as_bytes() != want.as_bytes() {
                mismatches += 1;
            }
            Ok(())
        })?
        .0
    } else {
        run_virtual(&executor, source, &vconfig, NullSink::new(), |_, _, _| Ok(()))?.0
    };
    let verified = executor.log().map(|log| {
        let want = log.replay(&init, None);
        mismatches == 0 && engine.current_image().as_bytes() == want.as_bytes()
    });

    let mut w = csv::Writer::from_path(dir.join("checkpoints.csv"))?;
    w.write_record([
        "checkpoint",
        "duration_us",
        "drain_wait_us",
        "pages_emitted",
        "piggyback_copies",
    ])?;
    for s in &run.snapshots {
        w.write_record([
            s.checkpoint_id.to_string(),
            us(s.duration),
            us(s.drain_wait),
            s.pages_emitted.to_string(),
            s.piggyback_copies.to_string(),
        ])?;
    }
    w.flush()?;

    let c = run.counters;
    let summary = owned(vec![
        ("engine", kind.id().to_string()),
        ("threads", run.threads.to_string()),
        ("commits", run.commits.to_string()),
        ("aborts", run.aborts.to_string()),
        ("elapsed_s", format!("{:.3}", run.elapsed.as_secs_f64())),
        ("throughput_txn_per_s", format!("{:.1}", run.throughput())),
        ("checkpoints", run.snapshots.len().to_string()),
        ("snapshot_copies", c.snapshot_copies.to_string()),
        ("catchup_copies", c.catchup_copies.to_string()),
        ("piggyback_copies", c.piggyback_copies.to_string()),
    ]);
    Ok(BenchOutcome {
        run_dir: dir.to_path_buf(),
        summary,
        report: None,
        virtual_run: Some(run),
        kv_run: None,
        verified,
    })
}

fn run_kv_mode(config: &BenchConfig, mode: snapkit::kv::KvMode, dir: &Path) -> Result<BenchOutcome> {
    let resolved = mode.resolve();
    let target = if config.null_sink {
        DumpTarget::Null
    } else {
        let d = dir.join("snapshots");
        fs::create_dir_all(&d)?;
        DumpTarget::Dir(d)
    };
    let mut store = KvStore::new(
        resolved,
        KvConfig {
            dump: target,
            ..KvConfig::default()
        },
    )?;
    load_records(&mut store, config.records, KV_VALUE_SIZE)?;
    let workload = MixedWorkload::new(config.records, 0, config.update_prop, 1)?;
    let kv_config = KvRunConfig {
        tick_ops: config.uf,
        tick_length: config.tick_length(),
        interval: config.interval(),
        checkpoints: config.checkpoints,
        value_size: KV_VALUE_SIZE,
        seed: config.seed,
        max_duration: config.interval() * (config.checkpoints as u32 + 2) + Duration::from_secs(120),
    };
    let (run, store) = snapkit::kv::run_kv(store, &workload, &kv_config)?;
    drop(store);

    let verified = match (config.verify, run.dumps.last().and_then(|d| d.path.clone())) {
        (true, Some(path)) => {
            let got = read_dump(&path)?;
            let want = replay_kv(
                &workload,
                &kv_config,
                *run.trigger_ops.last().expect("a dump has a trigger"),
            );
            Some(
                got.len() == want.len()
                    && got
                        .iter()
                        .zip(&want)
                        .enumerate()
                        .all(|(i, ((k, v), w))| *k == record_key(i as u64) && v == w),
            )
        }
        _ => None,
    };

    let mut w = csv::Writer::from_path(dir.join("trace.csv"))?;
    w.write_record(["tick", "latency_us", "phase"])?;
    let window = config.trace_window.unwrap_or((0, u64::MAX));
    for (i, t) in run.ticks.iter().enumerate() {
        if (i as u64) < window.0 || (i as u64) >= window.1 {
            continue;
        }
        let phase = if run.trigger_ticks.contains(&i) {
            PhaseMarker::TakenPhase
        } else {
            PhaseMarker::None
        };
        w.write_record([i.to_string(), us(*t), phase.to_string()])?;
    }
    w.flush()?;

    let ledger = run.ledger;
    let label = if resolved == mode {
        resolved.id().to_string()
    } else {
        format!("{} (fallback for {})", resolved.id(), mode.id())
    };
    let summary = owned(vec![
        ("kv_mode", label),
        ("records", run.records.to_string()),
        ("ticks", run.ticks.len().to_string()),
        ("max_stall_us", us(run.max_stall())),
        ("median_tick_us", us(run.median_tick())),
        (
            "max_taken_us",
            us(run.taken.iter().map(|t| t.duration).max().unwrap_or_default()),
        ),
        ("checkpoints", run.dumps.len().to_string()),
        ("update_fraction", format!("{:.4}", run.update_fraction())),
        ("dataset_bytes", run.dataset_bytes.to_string()),
        ("live_bytes", ledger.live_bytes.to_string()),
        ("high_water_bytes", ledger.high_water_bytes.to_string()),
        ("reclaimed_versions", ledger.reclaimed_versions.to_string()),
        ("reclaimed_bytes", ledger.reclaimed_bytes.to_string()),
        ("max_post_gc_ratio", format!("{:.4}", run.max_post_gc_ratio())),
    ]);
    Ok(BenchOutcome {
        run_dir: dir.to_path_buf(),
        summary,
        report: None,
        virtual_run: None,
        kv_run: Some(run),
        verified,
    })
}
