use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::persist::file::{merge, write_full_image, SnapshotFile, SnapshotHeader, SnapshotKind, SnapshotWriter};
use crate::store::{Layout, PageImage};

/// Receiver of one traverse.
///
/// Pages arrive in ascending index order and every index in
/// `[0, page_count)` is covered exactly once, either with bytes or as
/// "unchanged since the last snapshot".
pub trait SnapshotSink: Send {
    fn open(&mut self, checkpoint_id: u64, layout: &Layout, kind: SnapshotKind) -> Result<()>;

    /// When false, traversals may pass empty slices to [`SnapshotSink::emit_page`].
    fn wants_pages(&self) -> bool {
        true
    }

    fn emit_page(&mut self, index: usize, bytes: &[u8]) -> Result<()>;

    fn emit_from_last(&mut self, index: usize) -> Result<()>;

    fn close(&mut self) -> Result<Option<SnapshotFile>>;
}

/// Checks the emit protocol.
#[derive(Debug, Default)]
struct Cursor {
    open: Option<(u64, usize)>,
    next: usize,
}

impl Cursor {
    fn open(&mut self, id: u64, page_count: usize) -> Result<()> {
        if let Some((prev, _)) = self.open {
            return Err(Error::Sink(format!("checkpoint {prev} still open")));
        }
        self.open = Some((id, page_count));
        self.next = 0;
        Ok(())
    }

    fn step(&mut self, index: usize) -> Result<()> {
        let Some((id, count)) = self.open else {
            return Err(Error::Sink("emit without open".into()));
        };
        if index != self.next || index >= count {
            return Err(Error::Sink(format!(
                "checkpoint {id}: expected page {}, got {index}",
                self.next
            )));
        }
        self.next += 1;
        Ok(())
    }

    fn close(&mut self) -> Result<u64> {
        let Some((id, count)) = self.open.take() else {
            return Err(Error::Sink("close without open".into()));
        };
        if self.next != count {
            return Err(Error::Sink(format!(
                "checkpoint {id}: {} of {count} pages emitted",
                self.next
            )));
        }
        Ok(id)
    }
}

/// Discards everything.
#[derive(Debug, Default)]
pub struct NullSink {
    cursor: Cursor,
    pages: u64,
}

impl NullSink {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn pages_seen(&self) -> u64 {
        self.pages
    }
}

impl SnapshotSink for NullSink {
    fn open(&mut self, checkpoint_id: u64, layout: &Layout, _kind: SnapshotKind) -> Result<()> {
        self.cursor.open(checkpoint_id, layout.page_count())
    }

    fn wants_pages(&self) -> bool {
        false
    }

    fn emit_page(&mut self, index: usize, _bytes: &[u8]) -> Result<()> {
        self.pages += 1;
        self.cursor.step(index)
    }

    fn emit_from_last(&mut self, index: usize) -> Result<()> {
        self.pages += 1;
        self.cursor.step(index)
    }

    fn close(&mut self) -> Result<Option<SnapshotFile>> {
        self.cursor.close().map(|_| None)
    }
}

/// Keeps the latest full image in memory. Incremental snapshots are merged in
/// place: pages reported unchanged simply keep their previous bytes.
#[derive(Debug)]
pub struct MemorySink {
    image: PageImage,
    checkpoint_id: u64,
    cursor: Cursor,
    emitted: Vec<usize>,
}

impl MemorySink {
    /// `baseline` is the snapshot the first incremental is merged onto.
    pub fn new(baseline: PageImage) -> Self {
        MemorySink {
            image: baseline,
            checkpoint_id: 0,
            cursor: Cursor::default(),
            emitted: Vec::new(),
        }
    }

    pub fn image(&self) -> &PageImage {
        &self.image
    }

    pub fn checkpoint_id(&self) -> u64 {
        self.checkpoint_id
    }

    /// Pages carried with bytes in the most recent snapshot.
    pub fn emitted_pages(&self) -> &[usize] {
        &self.emitted
    }
}

impl SnapshotSink for MemorySink {
    fn open(&mut self, checkpoint_id: u64, layout: &Layout, _kind: SnapshotKind) -> Result<()> {
        if layout != self.image.layout() {
            return Err(Error::ShapeMismatch("sink baseline shape differs".into()));
        }
        self.emitted.clear();
        self.cursor.open(checkpoint_id, layout.page_count())
    }

    fn emit_page(&mut self, index: usize, bytes: &[u8]) -> Result<()> {
        self.cursor.step(index)?;
        self.image.page_mut(index).copy_from_slice(bytes);
        self.emitted.push(index);
        Ok(())
    }

    fn emit_from_last(&mut self, index: usize) -> Result<()> {
        self.cursor.step(index)
    }

    fn close(&mut self) -> Result<Option<SnapshotFile>> {
        self.checkpoint_id = self.cursor.close()?;
        Ok(None)
    }
}

/// Dumps to `dir/ckpt-NNNNNN.full`. Incremental snapshots are written as
/// `.incr` and merged with the previous full file on close.
pub struct FileSink {
    dir: PathBuf,
    layout: Layout,
    last_full: SnapshotFile,
    keep_incremental: bool,
    cursor: Cursor,
    writer: Option<SnapshotWriter>,
}

impl FileSink {
    /// Writes `baseline` as checkpoint 0.
    pub fn new(dir: &Path, baseline: &PageImage) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        let last_full = write_full_image(&Self::full_path(dir, 0), 0, baseline)?;
        Ok(FileSink {
            dir: dir.to_path_buf(),
            layout: *baseline.layout(),
            last_full,
            keep_incremental: false,
            cursor: Cursor::default(),
            writer: None,
        })
    }

    pub fn keep_incremental(mut self, keep: bool) -> Self {
        self.keep_incremental = keep;
        self
    }

    pub fn full_path(dir: &Path, id: u64) -> PathBuf {
        dir.join(format!("ckpt-{id:06}.full"))
    }

    pub fn incremental_path(dir: &Path, id: u64) -> PathBuf {
        dir.join(format!("ckpt-{id:06}.incr"))
    }

    pub fn last_full(&self) -> &SnapshotFile {
        &self.last_full
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

impl SnapshotSink for FileSink {
    fn open(&mut self, checkpoint_id: u64, layout: &Layout, kind: SnapshotKind) -> Result<()> {
        if *layout != self.layout {
            return Err(Error::ShapeMismatch("file sink baseline shape differs".into()));
        }
        self.cursor.open(checkpoint_id, layout.page_count())?;
        let path = match kind {
            SnapshotKind::Full => Self::full_path(&self.dir, checkpoint_id),
            SnapshotKind::Incremental => Self::incremental_path(&self.dir, checkpoint_id),
        };
        self.writer = Some(SnapshotWriter::create(
            &path,
            SnapshotHeader::new(kind, checkpoint_id, layout),
        )?);
        Ok(())
    }

    fn emit_page(&mut self, index: usize, bytes: &[u8]) -> Result<()> {
        self.cursor.step(index)?;
        self.writer
            .as_mut()
            .ok_or_else(|| Error::Sink("no open writer".into()))?
            .page(index, bytes)
    }

    fn emit_from_last(&mut self, index: usize) -> Result<()> {
        self.cursor.step(index)?;
        match &self.writer {
            Some(w) if w.kind() == SnapshotKind::Full => {
                Err(Error::Sink(format!("page {index} omitted from a full snapshot")))
            }
            _ => Ok(()),
        }
    }

    fn close(&mut self) -> Result<Option<SnapshotFile>> {
        let id = self.cursor.close()?;
        let writer = self.writer.take().ok_or_else(|| Error::Sink("no open writer".into()))?;
        let written = writer.finish()?;
        let full = match written.header.kind {
            SnapshotKind::Full => written,
            SnapshotKind::Incremental => {
                let merged = merge(&written.path, &self.last_full.path, &Self::full_path(&self.dir, id))?;
                if !self.keep_incremental {
                    std::fs::remove_file(&written.path)
                        .map_err(|e| Error::io(written.path.display().to_string(), e))?;
                }
                merged
            }
        };
        self.last_full = full.clone();
        Ok(Some(full))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn baseline() -> PageImage {
        PageImage::from_items(Layout::single_item(4).unwrap(), &[1, 2, 3, 4]).unwrap()
    }

    #[test]
    fn memory_sink_merges_incremental() {
        let mut sink = MemorySink::new(baseline());
        let layout = *baseline().layout();
        sink.open(1, &layout, SnapshotKind::Incremental).unwrap();
        sink.emit_from_last(0).unwrap();
        sink.emit_page(1, &9u32.to_le_bytes()).unwrap();
        sink.emit_from_last(2).unwrap();
        sink.emit_from_last(3).unwrap();
        sink.close().unwrap();
        assert_eq!(sink.image().first_items(), vec![1, 9, 3, 4]);
        assert_eq!(sink.emitted_pages(), &[1]);
    }

    #[test]
    fn sinks_enforce_order_and_coverage() {
        let layout = *baseline().layout();
        let mut sink = NullSink::new();
        sink.open(1, &layout, SnapshotKind::Full).unwrap();
        sink.emit_page(0, &[]).unwrap();
        assert!(sink.emit_page(2, &[]).is_err());
        let mut sink = NullSink::new();
        sink.open(1, &layout, SnapshotKind::Full).unwrap();
        sink.emit_page(0, &[]).unwrap();
        assert!(sink.close().is_err());
    }

    #[test]
    fn file_sink_chains_incrementals() {
        let dir = tempfile::tempdir().unwrap();
        let base = baseline();
        let layout = *base.layout();
        let mut sink = FileSink::new(dir.path(), &base).unwrap();
        sink.open(1, &layout, SnapshotKind::Incremental).unwrap();
        sink.emit_page(0, &7u32.to_le_bytes()).unwrap();
        for i in 1..4 {
            sink.emit_from_last(i).unwrap();
        }
        let f1 = sink.close().unwrap().unwrap();
        assert_eq!(f1.read_image(4).unwrap().first_items(), vec![7, 2, 3, 4]);
        assert!(!FileSink::incremental_path(dir.path(), 1).exists());

        sink.open(2, &layout, SnapshotKind::Full).unwrap();
        for (i, v) in [5u32, 6, 7, 8].iter().enumerate() {
            sink.emit_page(i, &v.to_le_bytes()).unwrap();
        }
        let f2 = sink.close().unwrap().unwrap();
        assert_eq!(f2.read_image(4).unwrap().first_items(), vec![5, 6, 7, 8]);

        sink.open(3, &layout, SnapshotKind::Full).unwrap();
        assert!(sink.emit_from_last(0).is_err());
    }
}
