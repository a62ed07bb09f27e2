//! Consistent in-memory snapshot algorithms over a page-array dataset.
//!
//! A client thread updates pages while a snapshotter thread dumps a
//! point-in-time image. The crate provides the seven physical algorithms
//! (naive, copy-on-update, fork, zigzag, ping-pong, hourglass, piggyback),
//! virtual snapshots over a multi-threaded locking executor, workloads,
//! metrics, snapshot files, and a small key-value store built on the same
//! machinery.

pub mod algo;
pub mod algorithms;
pub mod error;
pub mod kv;
pub mod metrics;
pub mod oracle;
pub mod persist;
pub mod store;
pub mod sys;
pub mod vsnap;
pub mod workload;

pub use algo::{
    build, AlgorithmConfig, AlgorithmKind, CounterSnapshot, Counters, SnapshotAlgorithm, TakenPhase, TraverseStats,
};
pub use error::{Error, Result};
pub use oracle::{oracle_replay, Replayer};
pub use persist::{FileSink, MemorySink, NullSink, SnapshotFile, SnapshotKind, SnapshotSink};
pub use store::{BitArray, Layout, PageImage, PageStore, TriStateArray};
pub use vsnap::{build_virtual, VirtualEngine, VirtualKind};
pub use workload::{generate_trace, MixedWorkload, TraceEntry, UpdateTrace};
