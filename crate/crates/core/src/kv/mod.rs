//! Embedded key-value store persisted by a snapshot algorithm at key
//! granularity: keys play the role of pages and each key slot holds up to
//! two immutable value versions.

mod dump;
mod runner;
mod store;

use std::fmt;
use std::str::FromStr;

pub use dump::{dump_path, read_dump, DumpReader, DumpTarget, KV_HEADER_LEN, KV_MAGIC};
pub use runner::{load_records, record_key, replay_kv, run_kv, KvRun, KvRunConfig};
pub use store::{Blob, KvConfig, KvDump, KvSnapshotter, KvStore, KvTaken, Value, CHUNK_SLOTS};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KvMode {
    Hourglass,
    Piggyback,
    /// Whole-store dump by a duplicated process.
    Fork,
    /// Whole-store copy of value handles on the client thread.
    Naive,
}

impl KvMode {
    pub const ALL: [KvMode; 4] = [KvMode::Hourglass, KvMode::Piggyback, KvMode::Fork, KvMode::Naive];

    pub fn id(self) -> &'static str {
        match self {
            KvMode::Hourglass => "hg",
            KvMode::Piggyback => "pb",
            KvMode::Fork => "fork",
            KvMode::Naive => "ns",
        }
    }

    /// The mode actually run here: fork falls back to naive without
    /// process duplication.
    pub fn resolve(self) -> KvMode {
        if self == KvMode::Fork && !cfg!(unix) {
            KvMode::Naive
        } else {
            self
        }
    }
}

impl fmt::Display for KvMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for KvMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        KvMode::ALL
            .into_iter()
            .find(|m| m.id() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown kv mode '{s}'")))
    }
}

/// Allocator counters of the value versions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct GcLedger {
    pub live_bytes: u64,
    pub high_water_bytes: u64,
    pub reclaimed_versions: u64,
    pub reclaimed_bytes: u64,
}
