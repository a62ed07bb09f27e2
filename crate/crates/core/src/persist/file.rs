//! Full and incremental snapshot files, Merge, and verification.
//!
//! Layout (all integers little-endian u64):
//!
//! ```text
//! magic[8] | checkpoint_id | page_count | page_size | payload
//! ```
//!
//! A full payload is `page_count * page_size` raw bytes. An incremental
//! payload is a run of `(index, page bytes)` records with strictly ascending
//! indices.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::store::{Layout, PageImage};

pub const FULL_MAGIC: &[u8; 8] = b"SNAPFULL";
pub const INCR_MAGIC: &[u8; 8] = b"SNAPINCR";
pub const HEADER_LEN: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SnapshotKind {
    Full,
    Incremental,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SnapshotHeader {
    pub kind: SnapshotKind,
    pub checkpoint_id: u64,
    pub page_count: u64,
    pub page_size: u64,
}

impl SnapshotHeader {
    pub fn new(kind: SnapshotKind, checkpoint_id: u64, layout: &Layout) -> Self {
        SnapshotHeader {
            kind,
            checkpoint_id,
            page_count: layout.page_count() as u64,
            page_size: layout.page_size() as u64,
        }
    }

    pub fn encode(&self) -> [u8; HEADER_LEN] {
        let mut out = [0u8; HEADER_LEN];
        out[..8].copy_from_slice(match self.kind {
            SnapshotKind::Full => FULL_MAGIC,
            SnapshotKind::Incremental => INCR_MAGIC,
        });
        out[8..16].copy_from_slice(&self.checkpoint_id.to_le_bytes());
        out[16..24].copy_from_slice(&self.page_count.to_le_bytes());
        out[24..32].copy_from_slice(&self.page_size.to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8; HEADER_LEN], path: &Path) -> Result<Self> {
        let corrupt = |reason: &str| Error::CorruptHeader {
            path: path.to_path_buf(),
            reason: reason.to_string(),
        };
        let kind = match &bytes[..8] {
            m if m == FULL_MAGIC => SnapshotKind::Full,
            m if m == INCR_MAGIC => SnapshotKind::Incremental,
            _ => return Err(corrupt("unknown magic")),
        };
        let word = |i: usize| u64::from_le_bytes(bytes[8 + 8 * i..16 + 8 * i].try_into().unwrap());
        let header = SnapshotHeader {
            kind,
            checkpoint_id: word(0),
            page_count: word(1),
            page_size: word(2),
        };
        if header.page_count == 0 || header.page_size == 0 {
            return Err(corrupt("zero page count or page size"));
        }
        Ok(header)
    }

    pub fn full_len(&self) -> u64 {
        HEADER_LEN as u64 + self.page_count * self.page_size
    }

    fn same_shape(&self, other: &SnapshotHeader) -> bool {
        self.page_count == other.page_count && self.page_size == other.page_size
    }
}

/// Handle to a snapshot file on disk.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SnapshotFile {
    pub path: PathBuf,
    pub header: SnapshotHeader,
}

impl SnapshotFile {
    pub fn open(path: &Path) -> Result<Self> {
        let mut f = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let header = read_header(&mut f, path)?;
        let len = f
            .metadata()
            .map_err(|e| Error::io(path.display().to_string(), e))?
            .len();
        match header.kind {
            SnapshotKind::Full if len != header.full_len() => {
                return Err(Error::CorruptHeader {
                    path: path.to_path_buf(),
                    reason: format!("full file is {len} bytes, header implies {}", header.full_len()),
                })
            }
            SnapshotKind::Incremental if !(len - HEADER_LEN as u64).is_multiple_of(8 + header.page_size) => {
                return Err(Error::CorruptHeader {
                    path: path.to_path_buf(),
                    reason: "truncated incremental record".into(),
                })
            }
            _ => {}
        }
        Ok(SnapshotFile {
            path: path.to_path_buf(),
            header,
        })
    }

    /// Reads a full snapshot back into memory.
    pub fn read_image(&self, item_size: usize) -> Result<PageImage> {
        if self.header.kind != SnapshotKind::Full {
            return Err(Error::InvalidParameter(format!(
                "{} is not a full snapshot",
                self.path.display()
            )));
        }
        let layout = Layout::new(
            self.header.page_count as usize,
            self.header.page_size as usize,
            item_size,
        )?;
        let bytes = std::fs::read(&self.path).map_err(|e| Error::io(self.path.display().to_string(), e))?;
        let mut image = PageImage::from_bytes(layout, bytes[HEADER_LEN..].to_vec())?;
        image.logical_time = 0;
        Ok(image)
    }
}

fn read_header(r: &mut impl Read, path: &Path) -> Result<SnapshotHeader> {
    let mut buf = [0u8; HEADER_LEN];
    r.read_exact(&mut buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => Error::CorruptHeader {
            path: path.to_path_buf(),
            reason: "file shorter than header".into(),
        },
        _ => Error::io(path.display().to_string(), e),
    })?;
    SnapshotHeader::decode(&buf, path)
}

pub fn write_full_image(path: &Path, checkpoint_id: u64, image: &PageImage) -> Result<SnapshotFile> {
    let header = SnapshotHeader::new(SnapshotKind::Full, checkpoint_id, image.layout());
    let ctx = || path.display().to_string();
    let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(ctx(), e))?);
    w.write_all(&header.encode()).map_err(|e| Error::io(ctx(), e))?;
    w.write_all(image.as_bytes()).map_err(|e| Error::io(ctx(), e))?;
    w.flush().map_err(|e| Error::io(ctx(), e))?;
    Ok(SnapshotFile {
        path: path.to_path_buf(),
        header,
    })
}

/// Overlays `incremental` on `previous_full`, writing a full snapshot to `out`.
pub fn merge(incremental: &Path, previous_full: &Path, out: &Path) -> Result<SnapshotFile> {
    let incr = SnapshotFile::open(incremental)?;
    let prev = SnapshotFile::open(previous_full)?;
    if incr.header.kind != SnapshotKind::Incremental {
        return Err(Error::InvalidParameter(format!(
            "{} is not incremental",
            incremental.display()
        )));
    }
    if prev.header.kind != SnapshotKind::Full {
        return Err(Error::InvalidParameter(format!(
            "{} is not a full snapshot",
            previous_full.display()
        )));
    }
    if !incr.header.same_shape(&prev.header) {
        return Err(Error::ShapeMismatch(format!(
            "incremental {}x{} vs full {}x{}",
            incr.header.page_count, incr.header.page_size, prev.header.page_count, prev.header.page_size
        )));
    }
    if incr.header.checkpoint_id != prev.header.checkpoint_id + 1 {
        return Err(Error::NotConsecutive(format!(
            "incremental {} does not follow full {}",
            incr.header.checkpoint_id, prev.header.checkpoint_id
        )));
    }

    let page_size = incr.header.page_size as usize;
    let page_count = incr.header.page_count;
    let io_err = |p: &Path| {
        let p = p.display().to_string();
        move |e: io::Error| Error::io(p.clone(), e)
    };

    let mut ir = BufReader::new(File::open(incremental).map_err(io_err(incremental))?);
    let mut pr = BufReader::new(File::open(previous_full).map_err(io_err(previous_full))?);
    read_header(&mut ir, incremental)?;
    read_header(&mut pr, previous_full)?;

    let header = SnapshotHeader {
        kind: SnapshotKind::Full,
        ..incr.header
    };
    let mut w = BufWriter::new(File::create(out).map_err(io_err(out))?);
    w.write_all(&header.encode()).map_err(io_err(out))?;

    let mut next_incr = read_incr_index(&mut ir, incremental)?;
    let mut last_index: Option<u64> = None;
    let mut page = vec![0u8; page_size];
    for index in 0..page_count {
        pr.read_exact(&mut page).map_err(io_err(previous_full))?;
        if next_incr == Some(index) {
            ir.read_exact(&mut page).map_err(io_err(incremental))?;
            last_index = Some(index);
            next_incr = read_incr_index(&mut ir, incremental)?;
        }
        w.write_all(&page).map_err(io_err(out))?;
    }
    if let Some(stray) = next_incr {
        let reason = match last_index {
            Some(prev) if stray <= prev => format!("indices not ascending ({prev} then {stray})"),
            _ => format!("index {stray} outside {page_count} pages"),
        };
        return Err(Error::CorruptHeader {
            path: incremental.to_path_buf(),
            reason,
        });
    }
    w.flush().map_err(io_err(out))?;
    Ok(SnapshotFile {
        path: out.to_path_buf(),
        header,
    })
}

fn read_incr_index(r: &mut impl Read, path: &Path) -> Result<Option<u64>> {
    let mut buf = [0u8; 8];
    match r.read_exact(&mut buf) {
        Ok(()) => Ok(Some(u64::from_le_bytes(buf))),
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => Ok(None),
        Err(e) => Err(Error::io(path.display().to_string(), e)),
    }
}

/// True iff the full snapshot at `path` holds exactly `expected`'s pages.
/// Header corruption is an error, not a mismatch.
pub fn verify_file(path: &Path, expected: &PageImage) -> Result<bool> {
    let file = SnapshotFile::open(path)?;
    if file.header.kind != SnapshotKind::Full {
        return Err(Error::InvalidParameter(format!(
            "{} is not a full snapshot",
            path.display()
        )));
    }
    let layout = expected.layout();
    if file.header.page_count != layout.page_count() as u64 || file.header.page_size != layout.page_size() as u64 {
        return Ok(false);
    }
    let mut r = BufReader::new(File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?);
    read_header(&mut r, path)?;
    let mut page = vec![0u8; layout.page_size()];
    for index in 0..layout.page_count() {
        r.read_exact(&mut page)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        if page != expected.page(index) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Streaming writer for one snapshot file.
pub(crate) struct SnapshotWriter {
    path: PathBuf,
    header: SnapshotHeader,
    out: BufWriter<File>,
}

impl SnapshotWriter {
    pub(crate) fn create(path: &Path, header: SnapshotHeader) -> Result<Self> {
        let ctx = || path.display().to_string();
        let mut out = BufWriter::with_capacity(1 << 20, File::create(path).map_err(|e| Error::io(ctx(), e))?);
        out.write_all(&header.encode()).map_err(|e| Error::io(ctx(), e))?;
        Ok(SnapshotWriter {
            path: path.to_path_buf(),
            header,
            out,
        })
    }

    pub(crate) fn kind(&self) -> SnapshotKind {
        self.header.kind
    }

    pub(crate) fn page(&mut self, index: usize, bytes: &[u8]) -> Result<()> {
        let ctx = || self.path.display().to_string();
        if self.header.kind == SnapshotKind::Incremental {
            self.out
                .write_all(&(index as u64).to_le_bytes())
                .map_err(|e| Error::io(ctx(), e))?;
        }
        self.out.write_all(bytes).map_err(|e| Error::io(ctx(), e))
    }

    pub(crate) fn finish(mut self) -> Result<SnapshotFile> {
        self.out
            .flush()
            .map_err(|e| Error::io(self.path.display().to_string(), e))?;
        Ok(SnapshotFile {
            path: self.path,
            header: self.header,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example(items: &[u32]) -> PageImage {
        PageImage::from_items(Layout::single_item(items.len()).unwrap(), items).unwrap()
    }

    fn write_incr(path: &Path, id: u64, layout: &Layout, pages: &[(usize, u32)]) {
        let mut w = SnapshotWriter::create(path, SnapshotHeader::new(SnapshotKind::Incremental, id, layout)).unwrap();
        for (i, v) in pages {
            w.page(*i, &v.to_le_bytes()).unwrap();
        }
        w.finish().unwrap();
    }

    #[test]
    fn merge_running_example() {
        let dir = tempfile::tempdir().unwrap();
        let prev = example(&[3, 4, 6, 7, 8, 5]);
        let full0 = dir.path().join("0.full");
        write_full_image(&full0, 0, &prev).unwrap();
        let incr = dir.path().join("1.incr");
        write_incr(&incr, 1, prev.layout(), &[(0, 13), (2, 16), (3, 17)]);
        let out = dir.path().join("1.full");
        let merged = merge(&incr, &full0, &out).unwrap();
        assert_eq!(merged.header.checkpoint_id, 1);
        assert_eq!(merged.header.kind, SnapshotKind::Full);
        let img = merged.read_image(4).unwrap();
        assert_eq!(img.first_items(), vec![13, 4, 16, 17, 8, 5]);
        assert_eq!(std::fs::metadata(&out).unwrap().len(), 32 + 24);
    }

    #[test]
    fn empty_incremental_is_identity_and_idempotent() {
        let dir = tempfile::tempdir().unwrap();
        let prev = example(&[3, 4, 6, 7, 8, 5]);
        let full0 = dir.path().join("0.full");
        write_full_image(&full0, 0, &prev).unwrap();
        let incr = dir.path().join("1.incr");
        write_incr(&incr, 1, prev.layout(), &[]);
        let out = dir.path().join("1.full");
        merge(&incr, &full0, &out).unwrap();
        let a = std::fs::read(&full0).unwrap();
        let b = std::fs::read(&out).unwrap();
        assert_eq!(a[HEADER_LEN..], b[HEADER_LEN..]);

        let incr2 = dir.path().join("2.incr");
        write_incr(&incr2, 2, prev.layout(), &[]);
        let out2 = dir.path().join("2.full");
        merge(&incr2, &out, &out2).unwrap();
        assert_eq!(std::fs::read(&out2).unwrap()[HEADER_LEN..], b[HEADER_LEN..]);
    }

    #[test]
    fn merge_rejects_mismatches() {
        let dir = tempfile::tempdir().unwrap();
        let prev = example(&[3, 4, 6, 7, 8, 5]);
        let full0 = dir.path().join("0.full");
        write_full_image(&full0, 0, &prev).unwrap();

        let skip = dir.path().join("2.incr");
        write_incr(&skip, 2, prev.layout(), &[(1, 1)]);
        assert!(matches!(
            merge(&skip, &full0, &dir.path().join("x")),
            Err(Error::NotConsecutive(_))
        ));

        let other = Layout::single_item(7).unwrap();
        let shaped = dir.path().join("s.incr");
        write_incr(&shaped, 1, &other, &[]);
        assert!(matches!(
            merge(&shaped, &full0, &dir.path().join("y")),
            Err(Error::ShapeMismatch(_))
        ));

        let unordered = dir.path().join("u.incr");
        write_incr(&unordered, 1, prev.layout(), &[(3, 1), (1, 2)]);
        assert!(merge(&unordered, &full0, &dir.path().join("z")).is_err());
    }

    #[test]
    fn verify_detects_flips_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let img = example(&[3, 4, 6, 7, 8, 5]);
        let path = dir.path().join("v.full");
        write_full_image(&path, 3, &img).unwrap();
        assert!(verify_file(&path, &img).unwrap());

        let mut bytes = std::fs::read(&path).unwrap();
        bytes[HEADER_LEN + 5] ^= 0xff;
        std::fs::write(&path, &bytes).unwrap();
        assert!(!verify_file(&path, &img).unwrap());

        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(verify_file(&path, &img), Err(Error::CorruptHeader { .. })));

        std::fs::write(&path, b"SNAP").unwrap();
        assert!(matches!(verify_file(&path, &img), Err(Error::CorruptHeader { .. })));
    }
}
