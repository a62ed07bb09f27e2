//! Brute-force ground truth: replay a trace onto a plain byte image.
//!
//! Deliberately shares nothing with the algorithm write paths beyond the
//! item-slot mapping that defines where a trace value lands.

use crate::error::{Error, Result};
use crate::store::PageImage;
use crate::workload::UpdateTrace;

/// Applies trace entries `[0, upto)` to a copy of `initial`.
pub fn oracle_replay(initial: &PageImage, trace: &UpdateTrace, upto: usize) -> Result<PageImage> {
    let mut replayer = Replayer::new(initial.clone());
    replayer.advance_to(trace, upto)?;
    Ok(replayer.into_image())
}

/// Incremental form of [`oracle_replay`] for checking many positions of one trace.
#[derive(Debug, Clone)]
pub struct Replayer {
    image: PageImage,
    position: usize,
}

impl Replayer {
    pub fn new(initial: PageImage) -> Self {
        Replayer {
            image: initial,
            position: 0,
        }
    }

    pub fn position(&self) -> usize {
        self.position
    }

    pub fn image(&self) -> &PageImage {
        &self.image
    }

    pub fn into_image(self) -> PageImage {
        self.image
    }

    pub fn advance_to(&mut self, trace: &UpdateTrace, upto: usize) -> Result<&PageImage> {
        if upto > trace.len() {
            return Err(Error::TraceOutOfRange { upto, len: trace.len() });
        }
        if upto < self.position {
            return Err(Error::InvalidParameter(format!(
                "replayer at {} cannot rewind to {upto}",
                self.position
            )));
        }
        let layout = *self.image.layout();
        let page_size = layout.page_size();
        let item_size = layout.item_size();
        let page_count = layout.page_count();
        for entry in &trace.entries()[self.position..upto] {
            let page = entry.page as usize;
            if page >= page_count {
                return Err(Error::PageOutOfRange {
                    index: page,
                    page_count,
                });
            }
            let slot = entry.value as usize % (page_size / item_size);
            let off = slot * item_size;
            self.image.page_mut(page)[off..off + 4].copy_from_slice(&entry.value.to_le_bytes());
        }
        self.position = upto;
        self.image.logical_time = upto as u64;
        Ok(&self.image)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::Layout;
    use crate::workload::TraceEntry;

    fn example_initial() -> PageImage {
        PageImage::from_items(Layout::single_item(6).unwrap(), &[3, 4, 6, 7, 8, 5]).unwrap()
    }

    fn table1() -> UpdateTrace {
        UpdateTrace::from_entries(
            6,
            vec![
                TraceEntry::new(0, 13),
                TraceEntry::new(2, 16),
                TraceEntry::new(3, 17),
                TraceEntry::new(0, 23),
                TraceEntry::new(1, 14),
                TraceEntry::new(4, 18),
            ],
        )
    }

    #[test]
    fn first_period_of_table1() {
        let out = oracle_replay(&example_initial(), &table1(), 3).unwrap();
        assert_eq!(out.first_items(), vec![13, 4, 16, 17, 8, 5]);
        assert_eq!(out.logical_time, 3);
    }

    #[test]
    fn both_periods_of_table1() {
        let out = oracle_replay(&example_initial(), &table1(), 6).unwrap();
        assert_eq!(out.first_items(), vec![23, 14, 16, 17, 18, 5]);
    }

    #[test]
    fn empty_replay_is_identity() {
        let init = example_initial();
        assert_eq!(oracle_replay(&init, &table1(), 0).unwrap(), init);
    }

    #[test]
    fn rejects_bad_positions_and_pages() {
        assert!(oracle_replay(&example_initial(), &table1(), 7).is_err());
        let bad = UpdateTrace::from_entries(9, vec![TraceEntry::new(8, 1)]);
        assert!(matches!(
            oracle_replay(&example_initial(), &bad, 1),
            Err(Error::PageOutOfRange { index: 8, .. })
        ));
    }
}
