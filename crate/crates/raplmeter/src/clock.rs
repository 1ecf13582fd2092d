//! Time sources for the polling loop and the simulated host.
//!
//! The polling loop never sleeps a relative duration: it waits for absolute
//! deadlines, so per-tick jitter cannot accumulate into drift. On Linux the
//! wait is a `timerfd` armed with `TFD_TIMER_ABSTIME`; elsewhere (or if the
//! timer cannot be created) it degrades to targeted sleeps against the
//! monotonic clock.
//!
//! [`VirtualClock`] replaces real time entirely: waiting for a deadline just
//! advances the clock and notifies observers (fixtures refresh their files
//! there), which makes high-frequency runs deterministic and instant.

use std::io;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

/// A monotonic time source with absolute-deadline waiting.
pub trait Clock: Send + Sync {
    /// Monotonic nanoseconds. The zero point is arbitrary but fixed.
    fn now_ns(&self) -> u64;

    /// Maps a monotonic timestamp to integer milliseconds since the Unix
    /// epoch (virtual clocks use their own origin as the epoch).
    fn epoch_ms_of(&self, timestamp_ns: u64) -> u64;

    /// Creates a waiter bound to this clock. Waiters are not shared between
    /// threads; each polling loop owns one.
    fn waiter(&self) -> Box<dyn DeadlineWaiter>;
}

/// Blocks until an absolute deadline on the owning clock's timescale.
pub trait DeadlineWaiter: Send {
    fn wait_until(&mut self, deadline_ns: u64) -> io::Result<()>;
}

/// Real time: monotonic clock + timerfd (or sleep) waits.
pub struct SystemClock {
    anchor_mono_ns: u64,
    anchor_epoch_ms: u64,
}

impl SystemClock {
    pub fn new() -> SystemClock {
        let anchor_mono_ns = raw_monotonic_ns();
        let anchor_epoch_ms = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0);
        SystemClock {
            anchor_mono_ns,
            anchor_epoch_ms,
        }
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        SystemClock::new()
    }
}

impl Clock for SystemClock {
    fn now_ns(&self) -> u64 {
        raw_monotonic_ns()
    }

    fn epoch_ms_of(&self, timestamp_ns: u64) -> u64 {
        let delta_ms = (timestamp_ns as i64 - self.anchor_mono_ns as i64) / 1_000_000;
        (self.anchor_epoch_ms as i64 + delta_ms).max(0) as u64
    }

    fn waiter(&self) -> Box<dyn DeadlineWaiter> {
        Box::new(HybridWaiter::new())
    }
}

#[cfg(target_os = "linux")]
fn raw_monotonic_ns() -> u64 {
    let mut ts = libc::timespec {
        tv_sec: 0,
        tv_nsec: 0,
    };
    let rc = unsafe { libc::clock_gettime(libc::CLOCK_MONOTONIC, &mut ts) };
    assert_eq!(rc, 0, "clock_gettime(CLOCK_MONOTONIC) failed");
    ts.tv_sec as u64 * 1_000_000_000 + ts.tv_nsec as u64
}

#[cfg(not(target_os = "linux"))]
fn raw_monotonic_ns() -> u64 {
    use std::sync::OnceLock;
    use std::time::Instant;
    static ANCHOR: OnceLock<Instant> = OnceLock::new();
    let anchor = ANCHOR.get_or_init(Instant::now);
    anchor.elapsed().as_nanos() as u64
}

/// Hybrid absolute-deadline waiter: the OS timer carries the bulk of the
/// wait, a short spin covers the final stretch.
///
/// OS timer wakeups have a latency tail that varies wildly between hosts
/// (tens of microseconds on bare metal, milliseconds under some
/// hypervisors and sandboxes), and a late wakeup at high frequencies means
/// missed ticks. The waiter measures its own wakeup overshoot, keeps a
/// sticky margin above it, sleeps only until `deadline - margin` and spins
/// the rest on the monotonic clock. On precise hosts the margin stays
/// small and the loop sleeps most of every period; on hosts with a bad
/// tail the margin grows until timing is spin-accurate again.
struct HybridWaiter {
    os_timer: OsTimer,
    margin_ns: u64,
}

/// Margin floor; also the calibration deadline distance.
const MIN_MARGIN_NS: u64 = 200_000;
/// Margin ceiling: longer overshoots switch the affected frequencies to
/// pure spinning rather than growing the spin window without bound.
const MAX_MARGIN_NS: u64 = 5_000_000;

impl HybridWaiter {
    fn new() -> HybridWaiter {
        let mut waiter = HybridWaiter {
            os_timer: OsTimer::new(),
            margin_ns: MIN_MARGIN_NS,
        };
        // one-time calibration: observe the timer's short-sleep overshoot
        for _ in 0..10 {
            let target = raw_monotonic_ns() + MIN_MARGIN_NS;
            if waiter.os_timer.wait_until(target).is_err() {
                break;
            }
            waiter.note_overshoot(target);
        }
        waiter
    }

    fn note_overshoot(&mut self, target_ns: u64) {
        let overshoot = raw_monotonic_ns().saturating_sub(target_ns);
        // sticky: a host that missed by this much once will do it again
        let guarded = overshoot + overshoot / 4;
        self.margin_ns = self
            .margin_ns
            .max(guarded)
            .clamp(MIN_MARGIN_NS, MAX_MARGIN_NS);
    }
}

impl DeadlineWaiter for HybridWaiter {
    fn wait_until(&mut self, deadline_ns: u64) -> io::Result<()> {
        loop {
            let now = raw_monotonic_ns();
            if now >= deadline_ns {
                return Ok(());
            }
            let remaining = deadline_ns - now;
            if remaining > self.margin_ns {
                let target = deadline_ns - self.margin_ns;
                self.os_timer.wait_until(target)?;
                self.note_overshoot(target);
            } else {
                while raw_monotonic_ns() < deadline_ns {
                    std::hint::spin_loop();
                }
                return Ok(());
            }
        }
    }
}

/// The blocking OS wait: a timerfd armed with an absolute CLOCK_MONOTONIC
/// expiry on Linux, targeted sleeps elsewhere (or if timerfd creation
/// fails). Both are absolute-deadline semantics; neither accumulates
/// drift.
enum OsTimer {
    #[cfg(target_os = "linux")]
    TimerFd(libc::c_int),
    Sleep,
}

impl OsTimer {
    fn new() -> OsTimer {
        #[cfg(target_os = "linux")]
        {
            let fd = unsafe { libc::timerfd_create(libc::CLOCK_MONOTONIC, libc::TFD_CLOEXEC) };
            if fd >= 0 {
                return OsTimer::TimerFd(fd);
            }
        }
        OsTimer::Sleep
    }

    fn wait_until(&mut self, deadline_ns: u64) -> io::Result<()> {
        match self {
            #[cfg(target_os = "linux")]
            OsTimer::TimerFd(fd) => {
                if deadline_ns == 0 || deadline_ns <= raw_monotonic_ns() {
                    // an all-zero itimerspec would disarm the timer
                    return Ok(());
                }
                let spec = libc::itimerspec {
                    it_interval: libc::timespec {
                        tv_sec: 0,
                        tv_nsec: 0,
                    },
                    it_value: libc::timespec {
                        tv_sec: (deadline_ns / 1_000_000_000) as libc::time_t,
                        tv_nsec: (deadline_ns % 1_000_000_000) as libc::c_long,
                    },
                };
                let rc = unsafe {
                    libc::timerfd_settime(*fd, libc::TFD_TIMER_ABSTIME, &spec, std::ptr::null_mut())
                };
                if rc != 0 {
                    return Err(io::Error::last_os_error());
                }
                let mut expirations = [0u8; 8];
                loop {
                    let n = unsafe {
                        libc::read(
                            *fd,
                            expirations.as_mut_ptr() as *mut libc::c_void,
                            expirations.len(),
                        )
                    };
                    if n == 8 {
                        return Ok(());
                    }
                    let err = io::Error::last_os_error();
                    if err.kind() != io::ErrorKind::Interrupted {
                        return Err(err);
                    }
                }
            }
            OsTimer::Sleep => loop {
                let now = raw_monotonic_ns();
                if now >= deadline_ns {
                    return Ok(());
                }
                std::thread::sleep(Duration::from_nanos(deadline_ns - now));
            },
        }
    }
}

impl Drop for OsTimer {
    fn drop(&mut self) {
        #[cfg(target_os = "linux")]
        if let OsTimer::TimerFd(fd) = self {
            unsafe { libc::close(*fd) };
        }
    }
}

type AdvanceObserver = Box<dyn Fn(u64) + Send + Sync>;

struct VirtualInner {
    now_ns: AtomicU64,
    observers: Mutex<Vec<AdvanceObserver>>,
}

/// A manually driven clock. Deadline waits return instantly after advancing
/// time, and registered observers run on every advance (so file fixtures
/// can refresh their contents before the loop reads them). Clones share the
/// same timeline.
#[derive(Clone)]
pub struct VirtualClock {
    inner: std::sync::Arc<VirtualInner>,
}

impl VirtualClock {
    pub fn new() -> VirtualClock {
        VirtualClock::starting_at(0)
    }

    pub fn starting_at(now_ns: u64) -> VirtualClock {
        VirtualClock {
            inner: std::sync::Arc::new(VirtualInner {
                now_ns: AtomicU64::new(now_ns),
                observers: Mutex::new(Vec::new()),
            }),
        }
    }

    /// Registers a callback invoked with the new time after every advance.
    /// Callbacks must not register further observers.
    pub fn on_advance(&self, observer: impl Fn(u64) + Send + Sync + 'static) {
        self.inner
            .observers
            .lock()
            .unwrap()
            .push(Box::new(observer));
    }

    /// Moves time forward to `t_ns` (never backwards) and notifies observers.
    pub fn advance_to(&self, t_ns: u64) {
        let now = &self.inner.now_ns;
        let mut current = now.load(Ordering::SeqCst);
        while t_ns > current {
            match now.compare_exchange(current, t_ns, Ordering::SeqCst, Ordering::SeqCst) {
                Ok(_) => break,
                Err(actual) => current = actual,
            }
        }
        let observers = self.inner.observers.lock().unwrap();
        let now = self.inner.now_ns.load(Ordering::SeqCst);
        for obs in observers.iter() {
            obs(now);
        }
    }

    pub fn advance_by(&self, delta_ns: u64) {
        let now = self.inner.now_ns.load(Ordering::SeqCst);
        self.advance_to(now + delta_ns);
    }
}

impl Default for VirtualClock {
    fn default() -> Self {
        VirtualClock::new()
    }
}

impl Clock for VirtualClock {
    fn now_ns(&self) -> u64 {
        self.inner.now_ns.load(Ordering::SeqCst)
    }

    fn epoch_ms_of(&self, timestamp_ns: u64) -> u64 {
        timestamp_ns / 1_000_000
    }

    fn waiter(&self) -> Box<dyn DeadlineWaiter> {
        Box::new(VirtualWaiter {
            clock: self.clone(),
        })
    }
}

struct VirtualWaiter {
    clock: VirtualClock,
}

impl DeadlineWaiter for VirtualWaiter {
    fn wait_until(&mut self, deadline_ns: u64) -> io::Result<()> {
        self.clock.advance_to(deadline_ns);
        Ok(())
    }
}
