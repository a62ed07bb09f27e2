use std::time::Duration;

use parking_lot::lock_api::{RawMutex as _, RawMutexTimed as _};
use parking_lot::RawMutex;

/// Exclusive page locks for strict two-phase locking.
///
/// Callers acquire a transaction's whole lock set up front, in ascending page
/// order, so waits cannot form a cycle. The timeout is a backstop against a
/// stuck holder, not a deadlock detector.
pub struct LockManager {
    locks: Box<[RawMutex]>,
}

impl LockManager {
    pub fn new(page_count: usize) -> Self {
        LockManager {
            locks: (0..page_count).map(|_| RawMutex::INIT).collect(),
        }
    }

    pub fn page_count(&self) -> usize {
        self.locks.len()
    }

    /// Locks every page in `pages`, which must be sorted and free of
    /// duplicates. On timeout the locks taken so far are released and
    /// `false` is returned.
    pub fn acquire(&self, pages: &[usize], timeout: Duration) -> bool {
        debug_assert!(pages.windows(2).all(|w| w[0] < w[1]));
        for (i, &p) in pages.iter().enumerate() {
            if !self.locks[p].try_lock_for(timeout) {
                self.release(&pages[..i]);
                return false;
            }
        }
        true
    }

    pub fn release(&self, pages: &[usize]) {
        for &p in pages.iter().rev() {
            // SAFETY: callers release exactly the set a successful `acquire`
            // locked on their behalf.
            unsafe { self.locks[p].unlock() };
        }
    }

    pub fn is_locked(&self, page: usize) -> bool {
        self.locks[page].is_locked()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn timeout_releases_partial_set() {
        let lm = LockManager::new(4);
        assert!(lm.acquire(&[2], Duration::ZERO));
        assert!(!lm.acquire(&[0, 1, 2], Duration::from_millis(1)));
        assert!(!lm.is_locked(0) && !lm.is_locked(1));
        lm.release(&[2]);
        assert!(lm.acquire(&[0, 1, 2], Duration::ZERO));
        lm.release(&[0, 1, 2]);
        assert!((0..4).all(|p| !lm.is_locked(p)));
    }
}
