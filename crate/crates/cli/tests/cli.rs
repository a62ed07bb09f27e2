use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use snapkit_cli::{required_memory, run_bench, run_matrix, BenchConfig, Mode, Sweep, OUT_ENV};

const MIB: u64 = 1 << 20;

/// Small tick run that still fires several checkpoints.
fn quick(out: &Path) -> BenchConfig {
    BenchConfig {
        data_mb: 4,
        uf: 2000,
        tick_ms: 5,
        interval_s: 0.05,
        checkpoints: 3,
        out: out.to_path_buf(),
        ..BenchConfig::default()
    }
}

fn csv_rows(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path)
        .unwrap()
        .records()
        .collect::<Result<_, _>>()
        .unwrap()
}

fn run_dirs(out: &Path) -> Vec<PathBuf> {
    let mut dirs: Vec<_> = fs::read_dir(out)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    dirs
}

#[test]
fn tick_run_marks_every_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let config = BenchConfig {
        data_mb: 128,
        uf: 16_000,
        checkpoints: 5,
        tick_ms: 10,
        interval_s: 0.2,
        ..quick(tmp.path())
    };
    let out = run_bench(&config).unwrap();
    assert_eq!(out.verified, Some(true));

    let trace = csv_rows(&out.run_dir.join("trace.csv"));
    let taken = trace.iter().filter(|r| &r[2] == "taken_phase").count();
    assert_eq!(taken, 5);
    assert!(out.run_dir.join("summary.csv").is_file());
    assert!(out.run_dir.join("snapshots").is_dir());

    let echo = fs::read_to_string(out.run_dir.join("config.txt")).unwrap();
    let mut again = BenchConfig::default();
    again.apply_file(&out.run_dir.join("config.txt")).unwrap();
    assert_eq!(again.echo(), echo);
}

#[test]
fn ping_pong_preflight_counts_three_copies() {
    let config = BenchConfig {
        algo: "pp".into(),
        data_mb: 64,
        uf: 1,
        verify: false,
        ..BenchConfig::default()
    };
    let need = required_memory(&config).unwrap();
    let pages = 3 * 64 * MIB;
    assert!(need >= pages && need < pages + MIB, "{need}");

    let hg = BenchConfig {
        algo: "hg".into(),
        ..config
    };
    assert_eq!(need - required_memory(&hg).unwrap(), 64 * MIB);
}

#[test]
fn oversized_run_is_refused() {
    let tmp = tempfile::tempdir().unwrap();
    let config = BenchConfig {
        data_mb: 1 << 22,
        ..quick(tmp.path())
    };
    let err = run_bench(&config).unwrap_err();
    assert!(format!("{err:#}").contains("memory"), "{err:#}");
}

#[test]
fn identical_runs_write_identical_snapshots() {
    let tmp = tempfile::tempdir().unwrap();
    let config = quick(tmp.path());
    let a = run_bench(&config).unwrap().run_dir;
    let b = run_bench(&config).unwrap().run_dir;
    assert_ne!(a, b);
    let files = |dir: &Path| {
        let mut v: Vec<_> = fs::read_dir(dir.join("snapshots"))
            .unwrap()
            .map(|e| e.unwrap().path())
            .collect();
        v.sort();
        v
    };
    let (fa, fb) = (files(&a), files(&b));
    assert!(!fa.is_empty());
    assert_eq!(fa.len(), fb.len());
    for (x, y) in fa.iter().zip(&fb) {
        assert_eq!(x.file_name(), y.file_name());
        assert!(fs::read(x).unwrap() == fs::read(y).unwrap(), "{} differs", x.display());
    }
}

#[test]
fn matrix_has_a_row_per_cell() {
    let tmp = tempfile::tempdir().unwrap();
    let sweep = Sweep {
        algos: vec!["ns".into(), "hg".into()],
        data_mb: vec![4],
        uf: vec![4000, 8000, 16_000],
    };
    let rows = run_matrix(&quick(tmp.path()), &sweep).unwrap();
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().all(|r| r.error.is_none() && r.verified == Some(true)));
    assert_eq!(csv_rows(&tmp.path().join("matrix.csv")).len(), 6);
}

#[test]
fn matrix_keeps_going_past_a_failed_cell() {
    let tmp = tempfile::tempdir().unwrap();
    let sweep = Sweep {
        algos: vec!["nope".into(), "pb".into()],
        data_mb: vec![4],
        uf: vec![1000],
    };
    let rows = run_matrix(&quick(tmp.path()), &sweep).unwrap();
    assert!(rows[0].error.is_some());
    assert_eq!(rows[1].verified, Some(true));

    let empty = Sweep { algos: vec![], ..sweep };
    assert!(run_matrix(&quick(tmp.path()), &empty).is_err());
}

#[test]
fn other_modes_verify() {
    let tmp = tempfile::tempdir().unwrap();
    let full = BenchConfig {
        mode: Mode::FullSpeed,
        interval_s: 0.1,
        ..quick(tmp.path())
    };
    let virt = BenchConfig {
        algo: "vpb".into(),
        mode: Mode::Virtual,
        threads: 4,
        update_prop: 0.5,
        interval_s: 0.05,
        ..quick(tmp.path())
    };
    let kv = BenchConfig {
        algo: "pb".into(),
        mode: Mode::Kv,
        records: 20_000,
        uf: 500,
        ..quick(tmp.path())
    };
    for config in [full, virt, kv] {
        let out = run_bench(&config).unwrap();
        assert_eq!(out.verified, Some(true), "{}", config.mode);
    }
}

#[test]
fn binary_honours_env_out_and_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let (flag_out, env_out) = (tmp.path().join("flag"), tmp.path().join("env"));
    let config = tmp.path().join("base.txt");
    fs::write(&config, "uf=500\ndata-mb=4\ncheckpoints=2\n").unwrap();

    let status = Command::new(env!("CARGO_BIN_EXE_snapkit"))
        .args(["--config", config.to_str().unwrap()])
        .args(["--uf", "700", "--tick-ms", "5", "--interval-s", "0.05", "--algo", "zz"])
        .arg("--out")
        .arg(&flag_out)
        .env(OUT_ENV, &env_out)
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    assert!(!flag_out.exists());
    let dirs = run_dirs(&env_out);
    assert_eq!(dirs.len(), 1);
    let echo = fs::read_to_string(dirs[0].join("config.txt")).unwrap();
    assert!(echo.contains("uf=700\n") && echo.contains("data-mb=4\n"), "{echo}");

    let bad = Command::new(env!("CARGO_BIN_EXE_snapkit"))
        .args(["--algo", "calc", "--mode", "tick"])
        .env(OUT_ENV, &env_out)
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(1));
}
