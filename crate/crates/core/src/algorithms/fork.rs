use std::path::PathBuf;

use crate::algo::{AlgorithmKind, Counters, Cycle, SnapshotAlgorithm, TakenPhase, TraverseStats};
use crate::error::{Error, Result};
use crate::persist::SnapshotSink;
use crate::store::{Layout, PageImage, PageStore};

#[cfg(unix)]
use {
    crate::persist::{SnapshotHeader, SnapshotKind, HEADER_LEN},
    crate::sys::process,
    parking_lot::Mutex,
    std::fs::File,
    std::io::{BufReader, Read},
    std::os::fd::AsRawFd,
    std::sync::atomic::{AtomicU64, Ordering},
    std::time::{Duration, Instant},
};

/// Bytes the child hands to each `write(2)`.
#[cfg(unix)]
const CHILD_CHUNK: usize = 1 << 20;

#[cfg(unix)]
struct Child {
    pid: libc::pid_t,
    path: PathBuf,
}

/// Fork: the OS duplicates the process and the child dumps its frozen
/// copy-on-write view of the dataset.
///
/// The child writes a full snapshot file into the spool directory and exits;
/// the snapshotter waits for it and replays the file into the sink.
pub struct ForkSnapshot {
    live: PageStore,
    #[cfg(unix)]
    spool_dir: PathBuf,
    #[cfg(unix)]
    child: Mutex<Option<Child>>,
    /// Staging buffer for the child, allocated up front because the child
    /// must not allocate.
    #[cfg(unix)]
    chunk: Mutex<Vec<u8>>,
    cycle: Cycle,
    counters: Counters,
}

#[cfg(unix)]
static SPOOL_SEQ: AtomicU64 = AtomicU64::new(0);

impl ForkSnapshot {
    /// `spool_dir` defaults to the system temp directory.
    #[cfg(unix)]
    pub fn new(initial: &PageImage, spool_dir: Option<PathBuf>) -> Result<Self> {
        let spool_dir = spool_dir.unwrap_or_else(std::env::temp_dir);
        std::fs::create_dir_all(&spool_dir).map_err(|e| Error::io(spool_dir.display().to_string(), e))?;
        let page_size = initial.layout().page_size();
        let chunk = vec![0u8; CHILD_CHUNK.max(page_size) / page_size * page_size];
        Ok(ForkSnapshot {
            live: PageStore::from_image(initial),
            spool_dir,
            child: Mutex::new(None),
            chunk: Mutex::new(chunk),
            cycle: Cycle::new(),
            counters: Counters::default(),
        })
    }

    #[cfg(not(unix))]
    pub fn new(_initial: &PageImage, _spool_dir: Option<PathBuf>) -> Result<Self> {
        Err(Error::Unsupported("fork requires process duplication".into()))
    }

    pub fn live(&self) -> &PageStore {
        &self.live
    }
}

/// Child-process body: header then every page, in chunks.
#[cfg(unix)]
fn dump_in_child(store: &PageStore, fd: libc::c_int, header: &[u8; HEADER_LEN], chunk: &mut [u8]) -> bool {
    // The child is the background snapshotter; it yields to the client.
    crate::sys::lower_current_thread_priority();
    if !process::write_all_fd(fd, header) {
        return false;
    }
    let page_size = store.layout().page_size();
    let per_chunk = chunk.len() / page_size;
    let count = store.layout().page_count();
    let mut p = 0;
    while p < count {
        let n = per_chunk.min(count - p);
        for (i, buf) in chunk[..n * page_size].chunks_exact_mut(page_size).enumerate() {
            store.read_page(p + i, buf);
        }
        if !process::write_all_fd(fd, &chunk[..n * page_size]) {
            return false;
        }
        p += n;
    }
    true
}

#[cfg(unix)]
impl SnapshotAlgorithm for ForkSnapshot {
    fn kind(&self) -> AlgorithmKind {
        AlgorithmKind::Fork
    }

    fn layout(&self) -> &Layout {
        self.live.layout()
    }

    #[inline]
    fn read(&self, page: usize, item: usize) -> u32 {
        self.live.read_item(page, item)
    }

    #[inline]
    fn write(&self, page: usize, item: usize, value: u32) {
        self.live.write_item(page, item, value);
        self.counters.write(1);
    }

    fn previous_snapshot_done(&self) -> bool {
        self.cycle.is_done()
    }

    /// The duplication call itself. Its cost is the page-table copy, which is
    /// linear in the mapped dataset; `work` records that page count.
    fn take_snapshot(&self) -> Result<TakenPhase> {
        let checkpoint_id = self.cycle.begin()?;
        let layout = *self.layout();
        let path = self.spool_dir.join(format!(
            "fork-{}-{}-{checkpoint_id:06}.snap",
            std::process::id(),
            SPOOL_SEQ.fetch_add(1, Ordering::Relaxed)
        ));
        let file = match File::create(&path) {
            Ok(f) => f,
            Err(e) => {
                self.cycle.finish();
                return Err(Error::io(path.display().to_string(), e));
            }
        };
        let header = SnapshotHeader::new(SnapshotKind::Full, checkpoint_id, &layout).encode();
        let mut chunk = self.chunk.lock();
        let fd = file.as_raw_fd();
        let start = Instant::now();
        let spawned = process::spawn(|| dump_in_child(&self.live, fd, &header, &mut chunk));
        let duration = start.elapsed();
        drop(chunk);
        drop(file);
        let pid = match spawned {
            Ok(pid) => pid,
            Err(e) => {
                let _ = std::fs::remove_file(&path);
                self.cycle.finish();
                return Err(Error::io("fork", e));
            }
        };
        *self.child.lock() = Some(Child { pid, path });
        let work = layout.page_count() as u64;
        self.counters.taken(work);
        Ok(TakenPhase {
            checkpoint_id,
            work,
            duration,
        })
    }

    fn traverse_snapshot(&self, sink: &mut dyn SnapshotSink) -> Result<TraverseStats> {
        let start = Instant::now();
        let checkpoint_id = self.cycle.pending()?;
        let child = self
            .child
            .lock()
            .take()
            .ok_or_else(|| Error::ChildFailed("no child for pending snapshot".into()))?;
        let result = replay_child(&child, checkpoint_id, self.layout(), sink);
        let _ = std::fs::remove_file(&child.path);
        self.cycle.finish();
        result?;
        Ok(TraverseStats {
            checkpoint_id,
            pages_emitted: self.layout().page_count() as u64,
            duration: start.elapsed(),
            ..TraverseStats::default()
        })
    }

    fn counters(&self) -> &Counters {
        &self.counters
    }

    /// Logical bytes: the live store plus the child's copy-on-write view.
    fn page_store_bytes(&self) -> usize {
        2 * self.live.allocated_bytes()
    }

    fn shares_pages_with_os(&self) -> bool {
        true
    }
}

#[cfg(unix)]
fn replay_child(child: &Child, checkpoint_id: u64, layout: &Layout, sink: &mut dyn SnapshotSink) -> Result<()> {
    let status = loop {
        match process::try_wait(child.pid).map_err(|e| Error::io("waitpid", e))? {
            Some(status) => break status,
            None => std::thread::sleep(Duration::from_micros(200)),
        }
    };
    if status != 0 {
        return Err(Error::ChildFailed(format!(
            "pid {} exited with status {status}",
            child.pid
        )));
    }
    let ctx = || child.path.display().to_string();
    let file = File::open(&child.path).map_err(|e| Error::io(ctx(), e))?;
    let mut r = BufReader::with_capacity(CHILD_CHUNK, file);
    let mut head = [0u8; HEADER_LEN];
    r.read_exact(&mut head).map_err(|e| Error::io(ctx(), e))?;
    let header = SnapshotHeader::decode(&head, &child.path)?;
    if header.checkpoint_id != checkpoint_id {
        return Err(Error::ChildFailed(format!(
            "child wrote checkpoint {} for {checkpoint_id}",
            header.checkpoint_id
        )));
    }
    sink.open(checkpoint_id, layout, SnapshotKind::Full)?;
    let wants = sink.wants_pages();
    let mut page = vec![0u8; layout.page_size()];
    for p in 0..layout.page_count() {
        if wants {
            r.read_exact(&mut page).map_err(|e| Error::io(ctx(), e))?;
            sink.emit_page(p, &page)?;
        } else {
            sink.emit_page(p, &[])?;
        }
    }
    sink.close()?;
    Ok(())
}

#[cfg(unix)]
impl Drop for ForkSnapshot {
    fn drop(&mut self) {
        if let Some(child) = self.child.get_mut().take() {
            let _ = process::wait_blocking(child.pid);
            let _ = std::fs::remove_file(&child.path);
        }
    }
}

#[cfg(not(unix))]
impl SnapshotAlgorithm for ForkSnapshot {
    fn kind(&self) -> AlgorithmKind {
        AlgorithmKind::Fork
    }
    fn layout(&self) -> &Layout {
        self.live.layout()
    }
    fn read(&self, page: usize, item: usize) -> u32 {
        self.live.read_item(page, item)
    }
    fn write(&self, page: usize, item: usize, value: u32) {
        self.live.write_item(page, item, value)
    }
    fn previous_snapshot_done(&self) -> bool {
        self.cycle.is_done()
    }
    fn take_snapshot(&self) -> Result<TakenPhase> {
        Err(Error::Unsupported("fork".into()))
    }
    fn traverse_snapshot(&self, _sink: &mut dyn SnapshotSink) -> Result<TraverseStats> {
        Err(Error::Unsupported("fork".into()))
    }
    fn counters(&self) -> &Counters {
        &self.counters
    }
    fn page_store_bytes(&self) -> usize {
        2 * self.live.allocated_bytes()
    }
}

#[cfg(all(test, unix))]
mod tests {
    use super::*;
    use crate::algorithms::testing::*;
    use crate::persist::MemorySink;

    #[test]
    fn child_sees_frozen_view() {
        let init = example_initial();
        let dir = tempfile::tempdir().unwrap();
        let fork = ForkSnapshot::new(&init, Some(dir.path().to_path_buf())).unwrap();
        period1(&fork);
        fork.take_snapshot().unwrap();
        fork.write(0, 0, 23);
        assert!(matches!(fork.take_snapshot(), Err(Error::PreviousSnapshotPending)));
        let mut sink = MemorySink::new(init);
        fork.traverse_snapshot(&mut sink).unwrap();
        assert_eq!(sink.image().first_items(), vec![13, 4, 16, 17, 8, 5]);
        assert_eq!(fork.read(0, 0), 23);
        assert!(fork.previous_snapshot_done());
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
    }
}
