use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::Parser;

use snapkit_cli::{run_bench, run_matrix, BenchConfig, Sweep, OUT_ENV};

/// Run snapshot benchmarks. Settings come from defaults, then `--config`,
/// then flags; `SNAPKIT_OUT` overrides the output directory.
#[derive(Parser, Debug)]
#[command(name = "snapkit", version)]
struct Args {
    /// Algorithm id: ns, cou, fork, zz, pp, hg, pb (virtual: calc, vhg, vpb).
    #[arg(long)]
    algo: Option<String>,
    /// tick, full-speed, virtual or kv.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    data_mb: Option<String>,
    /// Updates per tick (operations per tick in kv mode).
    #[arg(long)]
    uf: Option<String>,
    #[arg(long)]
    tick_ms: Option<String>,
    /// Seconds between checkpoints.
    #[arg(long)]
    interval_s: Option<String>,
    #[arg(long)]
    checkpoints: Option<String>,
    /// Zipf skew of the update trace.
    #[arg(long)]
    alpha: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// Worker threads in virtual mode.
    #[arg(long)]
    threads: Option<String>,
    /// Share of updates in the mixed workload.
    #[arg(long)]
    update_prop: Option<String>,
    /// Records loaded in kv mode.
    #[arg(long)]
    records: Option<String>,
    #[arg(long)]
    out: Option<String>,
    /// Skip the oracle check.
    #[arg(long)]
    no_verify: bool,
    /// Discard snapshot pages instead of writing files.
    #[arg(long)]
    null_sink: bool,
    /// `key=value` file applied before flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Ticks written to trace.csv, as FROM:TO.
    #[arg(long)]
    trace_window: Option<String>,
    /// Comma-separated algorithms for a sweep.
    #[arg(long, value_delimiter = ',')]
    sweep_algos: Vec<String>,
    /// Comma-separated dataset sizes for a sweep.
    #[arg(long, value_delimiter = ',')]
    sweep_data_mb: Vec<usize>,
    /// Comma-separated update frequencies for a sweep.
    #[arg(long, value_delimiter = ',')]
    sweep_uf: Vec<usize>,
}

impl Args {
    fn flags(&self) -> Vec<(String, String)> {
        let values = [
            ("algo", &self.algo),
            ("mode", &self.mode),
            ("data-mb", &self.data_mb),
            ("uf", &self.uf),
            ("tick-ms", &self.tick_ms),
            ("interval-s", &self.interval_s),
            ("checkpoints", &self.checkpoints),
            ("alpha", &self.alpha),
            ("seed", &self.seed),
            ("threads", &self.threads),
            ("update-prop", &self.update_prop),
            ("records", &self.records),
            ("out", &self.out),
            ("trace-window", &self.trace_window),
        ];
        let mut flags: Vec<(String, String)> = values
            .into_iter()
            .filter_map(|(k, v)| v.as_ref().map(|v| (k.to_string(), v.clone())))
            .collect();
        if self.no_verify {
            flags.push(("no-verify".into(), String::new()));
        }
        if self.null_sink {
            flags.push(("null-sink".into(), String::new()));
        }
        flags
    }

    fn is_sweep(&self) -> bool {
        !(self.sweep_algos.is_empty() && self.sweep_data_mb.is_empty() && self.sweep_uf.is_empty())
    }
}

fn or_single<T: Clone>(list: &[T], single: T) -> Vec<T> {
    if list.is_empty() {
        vec![single]
    } else {
        list.to_vec()
    }
}

/// `Ok(true)` when every run verified or skipped verification.
fn run(args: &Args) -> Result<bool> {
    let config = BenchConfig::resolve(args.config.as_deref(), &args.flags(), std::env::var(OUT_ENV).ok())?;
    if args.is_sweep() {
        let sweep = Sweep {
            algos: or_single(&args.sweep_algos, config.algo.clone()),
            data_mb: or_single(&args.sweep_data_mb, config.data_mb),
            uf: or_single(&args.sweep_uf, config.uf),
        };
        let rows = run_matrix(&config, &sweep)?;
        let mut ok = true;
        for r in &rows {
            match (&r.error, r.verified) {
                (Some(e), _) => println!("{} {}MB uf={}: error: {e}", r.algo, r.data_mb, r.uf),
                (None, v) => {
                    ok &= v != Some(false);
                    println!(
                        "{} {}MB uf={}: max latency {} us, verified {}",
                        r.algo,
                        r.data_mb,
                        r.uf,
                        r.max_latency_us.as_deref().unwrap_or("-"),
                        v.map_or("skipped".into(), |v| v.to_string())
                    );
                }
            }
        }
        println!("matrix: {}", config.out.join("matrix.csv").display());
        return Ok(ok);
    }
    let outcome = run_bench(&config)?;
    for (k, v) in &outcome.summary {
        println!("{k}: {v}");
    }
    println!("run directory: {}", outcome.run_dir.display());
    Ok(outcome.verified != Some(false))
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: snapshot verification failed");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
