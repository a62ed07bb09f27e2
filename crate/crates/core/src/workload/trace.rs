//! Pre-generated Zipfian update traces and their on-disk format.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};

use crate::error::{Error, Result};

pub const TRACE_MAGIC: &[u8; 8] = b"SNAPTRC1";
const TRACE_HEADER_LEN: usize = 40;

/// Traces larger than this are refused unless a larger budget is given.
pub const DEFAULT_TRACE_BUDGET: usize = 1 << 30;

/// One `<page_index, value>` update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceEntry {
    pub page: u32,
    pub value: u32,
}

impl TraceEntry {
    pub const fn new(page: u32, value: u32) -> Self {
        TraceEntry { page, value }
    }
}

/// A fully materialized update stream.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateTrace {
    page_count: usize,
    alpha: f64,
    seed: u64,
    entries: Vec<TraceEntry>,
}

impl UpdateTrace {
    /// Hand-built trace (alpha and seed recorded as zero).
    pub fn from_entries(page_count: usize, entries: Vec<TraceEntry>) -> Self {
        UpdateTrace {
            page_count,
            alpha: 0.0,
            seed: 0,
            entries,
        }
    }

    pub fn entries(&self) -> &[TraceEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn page_count(&self) -> usize {
        self.page_count
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut w = BufWriter::new(file);
        let mut header = Vec::with_capacity(TRACE_HEADER_LEN);
        header.extend_from_slice(TRACE_MAGIC);
        header.extend_from_slice(&(self.page_count as u64).to_le_bytes());
        header.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        header.extend_from_slice(&((self.alpha * 1000.0).round() as u64).to_le_bytes());
        header.extend_from_slice(&self.seed.to_le_bytes());
        w.write_all(&header)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        for e in &self.entries {
            w.write_all(&e.page.to_le_bytes())
                .and_then(|_| w.write_all(&e.value.to_le_bytes()))
                .map_err(|e| Error::io(path.display().to_string(), e))?;
        }
        w.flush().map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ctx = || path.display().to_string();
        let file = File::open(path).map_err(|e| Error::io(ctx(), e))?;
        let mut r = BufReader::new(file);
        let mut header = [0u8; TRACE_HEADER_LEN];
        r.read_exact(&mut header).map_err(|e| Error::io(ctx(), e))?;
        if &header[..8] != TRACE_MAGIC {
            return Err(Error::CorruptHeader {
                path: path.to_path_buf(),
                reason: "bad trace magic".into(),
            });
        }
        let word = |i: usize| u64::from_le_bytes(header[8 + i * 8..16 + i * 8].try_into().unwrap());
        let page_count = word(0) as usize;
        let count = word(1) as usize;
        let alpha = word(2) as f64 / 1000.0;
        let seed = word(3);
        let mut entries = Vec::with_capacity(count);
        let mut rec = [0u8; 8];
        for _ in 0..count {
            r.read_exact(&mut rec).map_err(|e| Error::io(ctx(), e))?;
            let page = u32::from_le_bytes(rec[..4].try_into().unwrap());
            if page as usize >= page_count {
                return Err(Error::PageOutOfRange {
                    index: page as usize,
                    page_count,
                });
            }
            entries.push(TraceEntry::new(page, u32::from_le_bytes(rec[4..].try_into().unwrap())));
        }
        Ok(UpdateTrace {
            page_count,
            alpha,
            seed,
            entries,
        })
    }
}

/// Value stored by the `seq`-th update. Never zero for realistic traces, so
/// a lost update cannot hide behind the zero-initialized store.
#[inline]
pub fn sequence_value(seq: usize) -> u32 {
    (seq as u32).wrapping_add(1)
}

/// Zipfian page sampler: rank `r` has probability proportional to `r^-alpha`,
/// and ranks are scattered over page indices by a seeded permutation.
#[derive(Debug, Clone)]
pub struct ZipfPages {
    zipf: Zipf<f64>,
    rank_to_page: Vec<u32>,
}

impl ZipfPages {
    pub fn new(page_count: usize, alpha: f64, rng: &mut impl Rng) -> Result<Self> {
        if page_count == 0 || page_count > u32::MAX as usize {
            return Err(Error::InvalidParameter(format!(
                "page_count {page_count} outside 1..=u32::MAX"
            )));
        }
        if !alpha.is_finite() || alpha <= 0.0 {
            return Err(Error::InvalidParameter(format!("alpha must be > 0, got {alpha}")));
        }
        let zipf = Zipf::new(page_count as f64, alpha).map_err(|e| Error::InvalidParameter(format!("zipf: {e}")))?;
        let mut rank_to_page: Vec<u32> = (0..page_count as u32).collect();
        rank_to_page.shuffle(rng);
        Ok(ZipfPages { zipf, rank_to_page })
    }

    /// Page holding popularity rank `rank` (1-based).
    pub fn page_of_rank(&self, rank: usize) -> u32 {
        self.rank_to_page[rank - 1]
    }

    #[inline]
    pub fn sample(&self, rng: &mut impl Rng) -> u32 {
        let rank = self.zipf.sample(rng) as usize;
        self.rank_to_page[rank.clamp(1, self.rank_to_page.len()) - 1]
    }
}

pub fn generate_trace(page_count: usize, entry_count: usize, alpha: f64, seed: u64) -> Result<UpdateTrace> {
    generate_trace_with_budget(page_count, entry_count, alpha, seed, DEFAULT_TRACE_BUDGET)
}

/// Deterministic for a fixed seed. Value `k` encodes sequence number `k`.
pub fn generate_trace_with_budget(
    page_count: usize,
    entry_count: usize,
    alpha: f64,
    seed: u64,
    budget_bytes: usize,
) -> Result<UpdateTrace> {
    if entry_count == 0 {
        return Err(Error::InvalidParameter("entry_count must be at least 1".into()));
    }
    let bytes = entry_count.saturating_mul(std::mem::size_of::<TraceEntry>());
    if bytes > budget_bytes {
        return Err(Error::TraceBudget {
            entries: entry_count,
            bytes,
            budget: budget_bytes,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pages = ZipfPages::new(page_count, alpha, &mut rng)?;
    let entries = (0..entry_count)
        .map(|seq| TraceEntry::new(pages.sample(&mut rng), sequence_value(seq)))
        .collect();
    Ok(UpdateTrace {
        page_count,
        alpha,
        seed,
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_for_fixed_seed() {
        let a = generate_trace(10_000, 50_000, 2.0, 42).unwrap();
        let b = generate_trace(10_000, 50_000, 2.0, 42).unwrap();
        assert_eq!(a, b);
        let c = generate_trace(10_000, 50_000, 2.0, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn indices_bounded_and_values_sequenced() {
        let t = generate_trace(37, 10_000, 2.0, 7).unwrap();
        assert!(t.entries().iter().all(|e| (e.page as usize) < 37));
        assert!(t.entries().iter().enumerate().all(|(i, e)| e.value == i as u32 + 1));
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(generate_trace(10, 0, 2.0, 1).is_err());
        assert!(generate_trace(10, 10, 0.0, 1).is_err());
        assert!(generate_trace(10, 10, -1.0, 1).is_err());
        assert!(matches!(
            generate_trace_with_budget(10, 1000, 2.0, 1, 100),
            Err(Error::TraceBudget { .. })
        ));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.trc");
        let t = generate_trace(100, 1000, 2.0, 9).unwrap();
        t.save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..8], b"SNAPTRC1");
        assert_eq!(bytes.len(), 40 + 8 * 1000);
        assert_eq!(u64::from_le_bytes(bytes[24..32].try_into().unwrap()), 2000);
        assert_eq!(UpdateTrace::load(&path).unwrap(), t);
    }
}
