//! Sweeps over algorithms, dataset sizes and update frequencies.

use std::path::PathBuf;

use anyhow::{bail, Result};

use crate::config::BenchConfig;
use crate::run::run_bench;

#[derive(Debug, Clone, Default)]
pub struct Sweep {
    pub algos: Vec<String>,
    pub data_mb: Vec<usize>,
    pub uf: Vec<usize>,
}

/// Outcome of one cell. A failed cell keeps its error and the sweep goes on.
#[derive(Debug, Clone)]
pub struct MatrixRow {
    pub algo: String,
    pub data_mb: usize,
    pub uf: usize,
    pub run_dir: Option<PathBuf>,
    pub max_latency_us: Option<String>,
    pub max_throughput: Option<String>,
    pub verified: Option<bool>,
    pub error: Option<String>,
}

/// Runs every combination with `template` supplying the other settings, and
/// writes `matrix.csv` into the template's output directory.
pub fn run_matrix(template: &BenchConfig, sweep: &Sweep) -> Result<Vec<MatrixRow>> {
    if sweep.algos.is_empty() || sweep.data_mb.is_empty() || sweep.uf.is_empty() {
        bail!("sweep lists must not be empty");
    }
    let mut rows = Vec::new();
    for algo in &sweep.algos {
        for &data_mb in &sweep.data_mb {
            for &uf in &sweep.uf {
                let config = BenchConfig {
                    algo: algo.clone(),
                    data_mb,
                    uf,
                    ..template.clone()
                };
                let mut row = MatrixRow {
                    algo: algo.clone(),
                    data_mb,
                    uf,
                    run_dir: None,
                    max_latency_us: None,
                    max_throughput: None,
                    verified: None,
                    error: None,
                };
                match run_bench(&config) {
                    Ok(out) => {
                        row.max_latency_us = out.metric("max_latency_us").map(str::to_string);
                        row.max_throughput = out.metric("max_throughput_updates_per_ms").map(str::to_string);
                        row.verified = out.verified;
                        row.run_dir = Some(out.run_dir);
                    }
                    Err(e) => row.error = Some(format!("{e:#}")),
                }
                rows.push(row);
            }
        }
    }
    std::fs::create_dir_all(&template.out)?;
    let mut w = csv::Writer::from_path(template.out.join("matrix.csv"))?;
    w.write_record([
        "algo",
        "data_mb",
        "uf",
        "max_latency_us",
        "max_throughput_updates_per_ms",
        "verified",
        "run_dir",
        "error",
    ])?;
    for r in &rows {
        w.write_record([
            r.algo.clone(),
            r.data_mb.to_string(),
            r.uf.to_string(),
            r.max_latency_us.clone().unwrap_or_default(),
            r.max_throughput.clone().unwrap_or_default(),
            r.verified.map(|v| v.to_string()).unwrap_or_default(),
            r.run_dir.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(rows)
}
