//! Key-value dump files: `SNAPKV01`, a little-endian u64 record count, then
//! per record a u32 key length, the key, a u32 value length and the value.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const KV_MAGIC: &[u8; 8] = b"SNAPKV01";
pub const KV_HEADER_LEN: usize = 16;

/// Where dumps go. `Null` still walks and reads every value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DumpTarget {
    Dir(PathBuf),
    Null,
}

impl DumpTarget {
    pub fn path(&self, checkpoint_id: u64) -> Option<PathBuf> {
        match self {
            DumpTarget::Dir(dir) => Some(dump_path(dir, checkpoint_id)),
            DumpTarget::Null => None,
        }
    }
}

pub fn dump_path(dir: &Path, checkpoint_id: u64) -> PathBuf {
    dir.join(format!("kv-{checkpoint_id:06}.snapkv"))
}

pub fn encode_header(count: u64) -> [u8; KV_HEADER_LEN] {
    let mut h = [0u8; KV_HEADER_LEN];
    h[..8].copy_from_slice(KV_MAGIC);
    h[8..].copy_from_slice(&count.to_le_bytes());
    h
}

pub(crate) struct DumpWriter {
    out: Option<(BufWriter<File>, PathBuf)>,
    bytes: u64,
}

impl DumpWriter {
    pub(crate) fn create(path: Option<PathBuf>, count: u64) -> Result<Self> {
        let mut w = DumpWriter { out: None, bytes: 0 };
        if let Some(path) = path {
            let file = File::create(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
            w.out = Some((BufWriter::with_capacity(1 << 20, file), path));
        }
        w.put(&encode_header(count))?;
        Ok(w)
    }

    fn put(&mut self, bytes: &[u8]) -> Result<()> {
        self.bytes += bytes.len() as u64;
        match &mut self.out {
            Some((w, path)) => w.write_all(bytes).map_err(|e| Error::io(path.display().to_string(), e)),
            None => {
                std::hint::black_box(bytes);
                Ok(())
            }
        }
    }

    pub(crate) fn record(&mut self, key: &[u8], value: &[u8]) -> Result<()> {
        self.put(&(key.len() as u32).to_le_bytes())?;
        self.put(key)?;
        self.put(&(value.len() as u32).to_le_bytes())?;
        self.put(value)
    }

    /// Returns the file path and the bytes written.
    pub(crate) fn finish(self) -> Result<(Option<PathBuf>, u64)> {
        match self.out {
            Some((w, path)) => {
                let file = w
                    .into_inner()
                    .map_err(|e| Error::io(path.display().to_string(), e.into_error()))?;
                file.sync_data().map_err(|e| Error::io(path.display().to_string(), e))?;
                Ok((Some(path), self.bytes))
            }
            None => Ok((None, self.bytes)),
        }
    }
}

/// Streaming reader over a dump file.
pub struct DumpReader {
    r: BufReader<File>,
    path: PathBuf,
    count: u64,
    read: u64,
}

impl DumpReader {
    pub fn open(path: &Path) -> Result<Self> {
        let ctx = || path.display().to_string();
        let file = File::open(path).map_err(|e| Error::io(ctx(), e))?;
        let mut r = BufReader::with_capacity(1 << 20, file);
        let mut head = [0u8; KV_HEADER_LEN];
        r.read_exact(&mut head).map_err(|e| Error::io(ctx(), e))?;
        if &head[..8] != KV_MAGIC {
            return Err(Error::CorruptHeader {
                path: path.to_path_buf(),
                reason: "bad magic".into(),
            });
        }
        Ok(DumpReader {
            r,
            path: path.to_path_buf(),
            count: u64::from_le_bytes(head[8..].try_into().expect("8 bytes")),
            read: 0,
        })
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    /// Next record into the given buffers; `false` once all are read.
    pub fn next_into(&mut self, key: &mut Vec<u8>, value: &mut Vec<u8>) -> Result<bool> {
        if self.read == self.count {
            return Ok(false);
        }
        self.field(key)?;
        self.field(value)?;
        self.read += 1;
        Ok(true)
    }

    fn field(&mut self, buf: &mut Vec<u8>) -> Result<()> {
        let ctx = || self.path.display().to_string();
        let mut len = [0u8; 4];
        self.r.read_exact(&mut len).map_err(|e| Error::io(ctx(), e))?;
        buf.resize(u32::from_le_bytes(len) as usize, 0);
        self.r.read_exact(buf).map_err(|e| Error::io(ctx(), e))
    }
}

/// Every record of a dump, in file order.
pub fn read_dump(path: &Path) -> Result<Vec<(String, Vec<u8>)>> {
    let mut r = DumpReader::open(path)?;
    let mut out = Vec::with_capacity(r.count() as usize);
    let (mut k, mut v) = (Vec::new(), Vec::new());
    while r.next_into(&mut k, &mut v)? {
        let key = String::from_utf8(k.clone()).map_err(|_| Error::CorruptHeader {
            path: path.to_path_buf(),
            reason: "key is not UTF-8".into(),
        })?;
        out.push((key, v.clone()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dump_path(dir.path(), 3);
        let mut w = DumpWriter::create(Some(path.clone()), 2).unwrap();
        w.record(b"a", &[13]).unwrap();
        w.record(b"bc", &[]).unwrap();
        let (p, bytes) = w.finish().unwrap();
        assert_eq!(p.as_deref(), Some(path.as_path()));
        assert_eq!(bytes, 16 + (4 + 1 + 4 + 1) + (4 + 2 + 4));
        assert_eq!(
            read_dump(&path).unwrap(),
            vec![("a".into(), vec![13]), ("bc".into(), vec![])]
        );
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x");
        std::fs::write(&path, [0u8; 16]).unwrap();
        assert!(matches!(read_dump(&path), Err(Error::CorruptHeader { .. })));
    }
}
