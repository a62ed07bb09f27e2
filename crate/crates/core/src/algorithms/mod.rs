//! The seven physical snapshot algorithms.

mod cou;
mod fork;
mod hg;
mod ns;
mod pb;
mod pp;
mod zz;

pub use cou::CopyOnUpdate;
pub use fork::ForkSnapshot;
pub use hg::Hourglass;
pub use ns::NaiveSnapshot;
pub(crate) use pb::side_flag;
pub use pb::Piggyback;
pub use pp::PingPong;
pub use zz::Zigzag;

use crate::error::Result;
use crate::persist::SnapshotSink;
use crate::store::PageStore;

/// Emits one page of `store`, skipping the byte conversion when the sink
/// discards payloads.
#[inline]
pub(crate) fn emit_store_page(
    sink: &mut dyn SnapshotSink,
    store: &PageStore,
    page: usize,
    buf: &mut [u8],
) -> Result<()> {
    if sink.wants_pages() {
        store.read_page(page, buf);
        sink.emit_page(page, buf)
    } else {
        sink.emit_page(page, &[])
    }
}

#[cfg(test)]
pub(crate) mod testing {
    use crate::algo::SnapshotAlgorithm;
    use crate::persist::MemorySink;
    use crate::store::{Layout, PageImage};

    /// The 6-page, one-item-per-page dataset of the running examples.
    pub(crate) fn example_initial() -> PageImage {
        PageImage::from_items(Layout::single_item(6).unwrap(), &[3, 4, 6, 7, 8, 5]).unwrap()
    }

    /// Period P1 updates of the running example.
    pub(crate) fn period1(algo: &dyn SnapshotAlgorithm) {
        algo.write(0, 0, 13);
        algo.write(2, 0, 16);
        algo.write(3, 0, 17);
    }

    /// Period P2 updates of the running example.
    pub(crate) fn period2(algo: &dyn SnapshotAlgorithm) {
        algo.write(0, 0, 23);
        algo.write(1, 0, 14);
        algo.write(4, 0, 18);
    }

    pub(crate) fn snapshot(algo: &dyn SnapshotAlgorithm, sink: &mut MemorySink) -> Vec<u32> {
        algo.take_snapshot().unwrap();
        algo.traverse_snapshot(sink).unwrap();
        sink.image().first_items()
    }
}
