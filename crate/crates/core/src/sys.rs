//! Thin OS helpers: process duplication for fork snapshots and thread niceness.

/// Lowers the calling thread's scheduling priority as far as allowed.
///
/// Best effort: the idle scheduling class where available, else the highest
/// nice value. On a machine with fewer cores than busy threads this keeps a
/// background snapshotter from stealing the client's time slices. Makes no
/// allocation, so a forked child may call it.
pub fn lower_current_thread_priority() {
    #[cfg(target_os = "linux")]
    // SAFETY: `param` outlives the call; the other calls take no pointers.
    // Failure of either is harmless.
    unsafe {
        let param = libc::sched_param { sched_priority: 0 };
        if libc::sched_setscheduler(0, libc::SCHED_IDLE, &param) != 0 {
            let tid = libc::syscall(libc::SYS_gettid) as libc::id_t;
            libc::setpriority(libc::PRIO_PROCESS, tid, 19);
        }
    }
}

#[cfg(unix)]
pub(crate) mod process {
    use std::io;

    /// Runs `child` in a duplicated process and returns the child's pid.
    ///
    /// `child` runs in a single-threaded copy of a possibly multi-threaded
    /// process, so it must not allocate or take locks. It reports success as
    /// its return value, which becomes the exit status.
    pub(crate) fn spawn<F: FnOnce() -> bool>(child: F) -> io::Result<libc::pid_t> {
        // SAFETY: fork has no memory-safety preconditions. The child branch
        // only runs `child`, whose contract forbids allocation and locking,
        // and leaves through _exit without running destructors or atexit hooks.
        match unsafe { libc::fork() } {
            -1 => Err(io::Error::last_os_error()),
            0 => {
                let ok = child();
                unsafe { libc::_exit(if ok { 0 } else { 1 }) }
            }
            pid => Ok(pid),
        }
    }

    /// Non-blocking reap. `Some(code)` once the child has exited; signals map
    /// to `128 + signo`.
    pub(crate) fn try_wait(pid: libc::pid_t) -> io::Result<Option<i32>> {
        wait(pid, libc::WNOHANG)
    }

    pub(crate) fn wait_blocking(pid: libc::pid_t) -> io::Result<i32> {
        wait(pid, 0).map(|s| s.unwrap_or(-1))
    }

    fn wait(pid: libc::pid_t, flags: libc::c_int) -> io::Result<Option<i32>> {
        let mut status = 0;
        loop {
            // SAFETY: `status` is a valid out pointer for the duration of the call.
            let r = unsafe { libc::waitpid(pid, &mut status, flags) };
            if r == 0 {
                return Ok(None);
            }
            if r == -1 {
                let err = io::Error::last_os_error();
                if err.kind() == io::ErrorKind::Interrupted {
                    continue;
                }
                return Err(err);
            }
            return Ok(Some(if libc::WIFEXITED(status) {
                libc::WEXITSTATUS(status)
            } else if libc::WIFSIGNALED(status) {
                128 + libc::WTERMSIG(status)
            } else {
                -1
            }));
        }
    }

    /// `write(2)` until `bytes` is drained. Allocation-free, so it is usable in
    /// a forked child.
    pub(crate) fn write_all_fd(fd: libc::c_int, mut bytes: &[u8]) -> bool {
        while !bytes.is_empty() {
            // SAFETY: the pointer and length describe a live slice.
            let n = unsafe { libc::write(fd, bytes.as_ptr().cast(), bytes.len()) };
            if n < 0 {
                if io::Error::last_os_error().kind() == io::ErrorKind::Interrupted {
                    continue;
                }
                return false;
            }
            bytes = &bytes[n as usize..];
        }
        true
    }
}

/// Spin-wait step that degrades to sleeping. A plain spin or yield can starve
/// a lower-priority thread that holds the awaited state on a single core.
pub(crate) fn backoff(spins: &mut u32) {
    *spins += 1;
    if *spins < 64 {
        std::hint::spin_loop();
    } else if *spins < 128 {
        std::thread::yield_now();
    } else {
        std::thread::sleep(std::time::Duration::from_micros(20));
    }
}

/// Periodic yield for long background loops. A deprioritized thread that
/// is woken as a lock handoff or keeps the CPU past the client's wakeup can
/// otherwise delay the client until the next scheduler tick.
#[inline]
pub(crate) fn yield_every(i: usize, period: usize) {
    if i % period == period - 1 {
        std::thread::yield_now();
    }
}
