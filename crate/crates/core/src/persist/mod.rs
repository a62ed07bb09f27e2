//! Snapshot sinks, snapshot file formats, and Merge.

mod file;
mod sink;

pub use file::{
    merge, verify_file, write_full_image, SnapshotFile, SnapshotHeader, SnapshotKind, FULL_MAGIC, HEADER_LEN,
    INCR_MAGIC,
};
pub use sink::{FileSink, MemorySink, NullSink, SnapshotSink};
