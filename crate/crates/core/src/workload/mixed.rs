use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};

use crate::error::{Error, Result};

/// Skew of the request distribution, as in YCSB's default zipfian.
pub const ZIPF_CONSTANT: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    Read(u64),
    Update(u64),
}

impl Op {
    pub fn record(self) -> u64 {
        match self {
            Op::Read(r) | Op::Update(r) => r,
        }
    }

    pub fn is_update(self) -> bool {
        matches!(self, Op::Update(_))
    }
}

/// YCSB-like read/update mix over `record_count` keys.
///
/// Requests follow a scrambled zipfian: popularity ranks are zipfian and
/// hashed onto record ids so hot records are spread over the key space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixedWorkload {
    pub record_count: u64,
    pub operation_count: u64,
    pub update_proportion: f64,
    pub threads: usize,
}

impl MixedWorkload {
    pub fn new(record_count: u64, operation_count: u64, update_proportion: f64, threads: usize) -> Result<Self> {
        if record_count == 0 {
            return Err(Error::InvalidParameter("record_count must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&update_proportion) {
            return Err(Error::InvalidParameter(format!(
                "update_proportion {update_proportion} outside [0, 1]"
            )));
        }
        if threads == 0 {
            return Err(Error::InvalidParameter("threads must be at least 1".into()));
        }
        Ok(MixedWorkload {
            record_count,
            operation_count,
            update_proportion,
            threads,
        })
    }

    /// Share of `operation_count` issued by `thread`; shares differ by at most one.
    pub fn ops_for_thread(&self, thread: usize) -> u64 {
        let t = self.threads as u64;
        self.operation_count / t + u64::from((thread as u64) < self.operation_count % t)
    }

    /// Operation stream of one client thread. Streams of different threads
    /// are independent; each is deterministic for a fixed seed.
    pub fn stream(&self, thread: usize, seed: u64) -> MixedStream {
        MixedStream::new(
            self,
            seed ^ (thread as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
            self.ops_for_thread(thread),
        )
    }

    /// Unbounded stream, for runs limited by time rather than count.
    pub fn endless(&self, thread: usize, seed: u64) -> MixedStream {
        MixedStream::new(
            self,
            seed ^ (thread as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
            u64::MAX,
        )
    }
}

pub struct MixedStream {
    rng: ChaCha8Rng,
    keys: ScrambledZipf,
    update_proportion: f64,
    remaining: u64,
}

impl MixedStream {
    fn new(w: &MixedWorkload, seed: u64, count: u64) -> Self {
        MixedStream {
            rng: ChaCha8Rng::seed_from_u64(seed),
            keys: ScrambledZipf::new(w.record_count),
            update_proportion: w.update_proportion,
            remaining: count,
        }
    }
}

impl Iterator for MixedStream {
    type Item = Op;

    fn next(&mut self) -> Option<Op> {
        if self.remaining == 0 {
            return None;
        }
        if self.remaining != u64::MAX {
            self.remaining -= 1;
        }
        let key = self.keys.sample(&mut self.rng);
        Some(if self.rng.random_bool(self.update_proportion) {
            Op::Update(key)
        } else {
            Op::Read(key)
        })
    }
}

#[derive(Debug, Clone)]
pub struct ScrambledZipf {
    zipf: Zipf<f64>,
    n: u64,
}

impl ScrambledZipf {
    pub fn new(n: u64) -> Self {
        ScrambledZipf {
            zipf: Zipf::new(n as f64, ZIPF_CONSTANT).expect("n >= 1 and a positive exponent"),
            n,
        }
    }

    #[inline]
    pub fn sample(&self, rng: &mut impl Rng) -> u64 {
        let rank = self.zipf.sample(rng) as u64;
        fnv1a64(rank) % self.n
    }
}

fn fnv1a64(v: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in v.to_le_bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shares_cover_operation_count() {
        let w = MixedWorkload::new(10, 10, 0.5, 3).unwrap();
        let shares: Vec<u64> = (0..3).map(|t| w.ops_for_thread(t)).collect();
        assert_eq!(shares, vec![4, 3, 3]);
        assert_eq!((0..3).map(|t| w.stream(t, 1).count() as u64).sum::<u64>(), 10);
    }

    #[test]
    fn keys_in_range_and_deterministic() {
        let w = MixedWorkload::new(1000, 5000, 0.3, 1).unwrap();
        let a: Vec<Op> = w.stream(0, 7).collect();
        assert_eq!(a, w.stream(0, 7).collect::<Vec<_>>());
        assert!(a.iter().all(|op| op.record() < 1000));
    }

    #[test]
    fn rejects_bad_proportion() {
        assert!(MixedWorkload::new(10, 10, 1.5, 1).is_err());
        assert!(MixedWorkload::new(0, 10, 0.5, 1).is_err());
    }
}
