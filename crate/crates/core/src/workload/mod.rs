//! Update traces, the tick-driven client loop and mixed transaction streams.

mod mixed;
mod tick;
mod trace;

pub use mixed::{MixedStream, MixedWorkload, Op, ScrambledZipf, ZIPF_CONSTANT};
pub use tick::{run_full_speed, run_ticks, FullSpeedRun, TickRun, TickSchedule};

pub use trace::{
    generate_trace, generate_trace_with_budget, sequence_value, TraceEntry, UpdateTrace, ZipfPages,
    DEFAULT_TRACE_BUDGET, TRACE_MAGIC,
};
