//! Shared fixtures for the benchmarks.

use snapkit::{generate_trace, AlgorithmKind, Layout, PageImage, UpdateTrace};

/// Skew of the update traces, the harness default.
pub const ALPHA: f64 = 2.0;

pub fn image(megabytes: usize) -> PageImage {
    PageImage::zeroed(Layout::from_megabytes(megabytes).expect("valid size"))
}

pub fn trace(image: &PageImage, entries: usize) -> UpdateTrace {
    generate_trace(image.layout().page_count(), entries, ALPHA, 7).expect("valid trace")
}

/// Algorithms this host can build.
pub fn kinds() -> impl Iterator<Item = AlgorithmKind> {
    AlgorithmKind::ALL.into_iter().filter(|k| k.is_available())
}
