//! Benchmark configuration: defaults, a `key=value` file, then flags.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use anyhow::{bail, Context, Result};

use snapkit::kv::KvMode;
use snapkit::{AlgorithmKind, VirtualKind};

/// Environment variable that overrides the output directory.
pub const OUT_ENV: &str = "SNAPKIT_OUT";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Tick-by-tick client with idle padding.
    Tick,
    /// No-wait client, null sink.
    FullSpeed,
    /// Multi-threaded transactions over a virtual snapshot engine.
    Virtual,
    /// Key-value store driven by the mixed workload.
    Kv,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Tick, Mode::FullSpeed, Mode::Virtual, Mode::Kv];

    pub fn id(self) -> &'static str {
        match self {
            Mode::Tick => "tick",
            Mode::FullSpeed => "full-speed",
            Mode::Virtual => "virtual",
            Mode::Kv => "kv",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Mode {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.id() == s)
            .with_context(|| format!("unknown mode '{s}' (tick, full-speed, virtual, kv)"))
    }
}

/// The algorithm a config selects, resolved against its mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selected {
    Physical(AlgorithmKind),
    Virtual(VirtualKind),
    Kv(KvMode),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub algo: String,
    pub mode: Mode,
    pub data_mb: usize,
    pub uf: usize,
    pub tick_ms: u64,
    pub interval_s: f64,
    pub checkpoints: usize,
    pub alpha: f64,
    pub seed: u64,
    pub threads: usize,
    pub update_prop: f64,
    pub records: u64,
    pub out: PathBuf,
    pub verify: bool,
    pub null_sink: bool,
    /// Half-open tick range written to `trace.csv`.
    pub trace_window: Option<(u64, u64)>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            algo: "hg".into(),
            mode: Mode::Tick,
            data_mb: 64,
            uf: 16_000,
            tick_ms: 100,
            interval_s: 5.0,
            checkpoints: 5,
            alpha: 2.0,
            seed: 42,
            threads: 8,
            update_prop: 0.1,
            records: 1_000_000,
            out: PathBuf::from("runs"),
            verify: true,
            null_sink: false,
            trace_window: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| anyhow::anyhow!("{key}: cannot parse '{value}': {e}"))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "" | "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        v => bail!("{key}: expected a boolean, got '{v}'"),
    }
}

impl BenchConfig {
    /// Sets one field by its flag name (with or without leading dashes;
    /// underscores work too).
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().trim_start_matches('-').replace('_', "-");
        let k = key.as_str();
        match k {
            "algo" => self.algo = value.trim().to_string(),
            "mode" => self.mode = value.trim().parse()?,
            "data-mb" => self.data_mb = parse(k, value)?,
            "uf" => self.uf = parse(k, value)?,
            "tick-ms" => self.tick_ms = parse(k, value)?,
            "interval-s" => self.interval_s = parse(k, value)?,
            "checkpoints" => self.checkpoints = parse(k, value)?,
            "alpha" => self.alpha = parse(k, value)?,
            "seed" => self.seed = parse(k, value)?,
            "threads" => self.threads = parse(k, value)?,
            "update-prop" => self.update_prop = parse(k, value)?,
            "records" => self.records = parse(k, value)?,
            "out" => self.out = PathBuf::from(value.trim()),
            "verify" => self.verify = parse_bool(k, value)?,
            "no-verify" => self.verify = !parse_bool(k, value)?,
            "null-sink" => self.null_sink = parse_bool(k, value)?,
            "trace-window" => {
                let (a, b) = value
                    .split_once(':')
                    .with_context(|| format!("trace-window: expected FROM:TO, got '{value}'"))?;
                self.trace_window = Some((parse(k, a)?, parse(k, b)?));
            }
            _ => bail!("unknown config key '{key}'"),
        }
        Ok(())
    }

    /// Applies a `key=value` file. Blank lines and `#` comments are skipped.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').unwrap_or((line, ""));
            self.set(k, v)
                .with_context(|| format!("{}:{}", path.display(), n + 1))?;
        }
        Ok(())
    }

    /// Defaults, then `file`, then `flags`, then `env_out` for the output
    /// directory; validated.
    pub fn resolve(file: Option<&Path>, flags: &[(String, String)], env_out: Option<String>) -> Result<Self> {
        let mut config = BenchConfig::default();
        if let Some(path) = file {
            config.apply_file(path)?;
        }
        for (k, v) in flags {
            config.set(k, v)?;
        }
        if let Some(out) = env_out.filter(|o| !o.is_empty()) {
            config.out = PathBuf::from(out);
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("data-mb", self.data_mb as f64),
            ("uf", self.uf as f64),
            ("tick-ms", self.tick_ms as f64),
            ("interval-s", self.interval_s),
            ("checkpoints", self.checkpoints as f64),
            ("alpha", self.alpha),
            ("threads", self.threads as f64),
            ("records", self.records as f64),
        ];
        for (name, v) in positive {
            if !v.is_finite() || v <= 0.0 {
                bail!("{name} must be positive");
            }
        }
        if !(0.0..=1.0).contains(&self.update_prop) {
            bail!("update-prop must lie in [0, 1]");
        }
        if self.out.as_os_str().is_empty() {
            bail!("empty output directory");
        }
        if let Some((a, b)) = self.trace_window {
            if a >= b {
                bail!("trace-window must be FROM:TO with FROM < TO");
            }
        }
        self.selected()?;
        Ok(())
    }

    /// The algorithm id parsed for the mode.
    pub fn selected(&self) -> Result<Selected> {
        Ok(match self.mode {
            Mode::Tick | Mode::FullSpeed => {
                let kind: AlgorithmKind = self
                    .algo
                    .parse()
                    .with_context(|| format!("'{}' is not a physical algorithm for {} mode", self.algo, self.mode))?;
                if !kind.is_available() {
                    bail!("algorithm '{kind}' unsupported on this platform");
                }
                Selected::Physical(kind)
            }
            Mode::Virtual => Selected::Virtual(
                self.algo
                    .parse()
                    .with_context(|| format!("'{}' is not a virtual engine (calc, vhg, vpb)", self.algo))?,
            ),
            Mode::Kv => Selected::Kv(
                self.algo
                    .parse()
                    .with_context(|| format!("'{}' is not a kv mode (hg, pb, fork, ns)", self.algo))?,
            ),
        })
    }

    pub fn tick_length(&self) -> Duration {
        Duration::from_millis(self.tick_ms)
    }

    pub fn interval(&self) -> Duration {
        Duration::from_secs_f64(self.interval_s)
    }

    /// Every field as `key=value` lines, readable by [`BenchConfig::apply_file`].
    pub fn echo(&self) -> String {
        let mut lines = vec![
            format!("algo={}", self.algo),
            format!("mode={}", self.mode),
            format!("data-mb={}", self.data_mb),
            format!("uf={}", self.uf),
            format!("tick-ms={}", self.tick_ms),
            format!("interval-s={}", self.interval_s),
            format!("checkpoints={}", self.checkpoints),
            format!("alpha={}", self.alpha),
            format!("seed={}", self.seed),
            format!("threads={}", self.threads),
            format!("update-prop={}", self.update_prop),
            format!("records={}", self.records),
            format!("out={}", self.out.display()),
            format!("verify={}", self.verify),
            format!("null-sink={}", self.null_sink),
        ];
        if let Some((a, b)) = self.trace_window {
            lines.push(format!("trace-window={a}:{b}"));
        }
        lines.join("\n") + "\n"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_and_env_overrides_out() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("bench.conf");
        std::fs::write(
            &file,
            "# sweep template\nalgo = pb\nuf=8000\ndata_mb=32\nout=from-file\n",
        )
        .unwrap();
        let flags = vec![("--uf".to_string(), "4000".to_string())];
        let c = BenchConfig::resolve(Some(&file), &flags, Some("from-env".into())).unwrap();
        assert_eq!((c.algo.as_str(), c.uf, c.data_mb), ("pb", 4000, 32));
        assert_eq!(c.out, PathBuf::from("from-env"));
    }

    #[test]
    fn echo_round_trips() {
        let mut c = BenchConfig::default();
        c.set("mode", "kv").unwrap();
        c.set("algo", "fork").unwrap();
        c.set("no-verify", "").unwrap();
        c.set("trace-window", "150:350").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("echo");
        std::fs::write(&file, c.echo()).unwrap();
        let mut back = BenchConfig::default();
        back.apply_file(&file).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn rejects_bad_values() {
        let mut c = BenchConfig::default();
        assert!(c.set("uf", "many").is_err());
        assert!(c.set("colour", "red").is_err());
        c.uf = 0;
        assert!(c.validate().is_err());
        let c = BenchConfig {
            mode: Mode::Virtual,
            ..BenchConfig::default()
        };
        assert!(c.validate().is_err(), "hg is not a virtual engine");
        let c = BenchConfig {
            update_prop: 1.5,
            ..BenchConfig::default()
        };
        assert!(c.validate().is_err());
    }
}
