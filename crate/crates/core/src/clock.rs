//! Process-wide monotonic clock.
//!
//! Every call to [`now_ns`] returns a value strictly greater than any value
//! previously returned, on any thread, so timestamps taken on both sides of
//! a synchronization point are totally ordered.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::OnceLock;

static LAST: AtomicU64 = AtomicU64::new(0);

#[cfg(not(target_arch = "wasm32"))]
fn raw_ns() -> u64 {
    use std::time::Instant;
    static ORIGIN: OnceLock<Instant> = OnceLock::new();
    ORIGIN.get_or_init(Instant::now).elapsed().as_nanos() as u64
}

// No monotonic clock on wasm32-unknown-unknown; timestamps degrade to a
// logical counter.
#[cfg(target_arch = "wasm32")]
fn raw_ns() -> u64 {
    let _ = OnceLock::<()>::new();
    0
}

pub fn now_ns() -> u64 {
    let raw = raw_ns();
    let mut prev = LAST.load(Ordering::SeqCst);
    loop {
        let next = raw.max(prev + 1);
        match LAST.compare_exchange_weak(prev, next, Ordering::SeqCst, Ordering::SeqCst) {
            Ok(_) => return next,
            Err(actual) => prev = actual,
        }
    }
}

/// Waits `ns` nanoseconds of wall time without sleeping. The loop yields, so
/// on a host with fewer cores than busy threads other threads still make
/// progress while a device access is "in flight".
pub fn spin_for(ns: u64) {
    if ns == 0 {
        return;
    }
    #[cfg(not(target_arch = "wasm32"))]
    {
        let deadline = raw_ns() + ns;
        while raw_ns() < deadline {
            std::thread::yield_now();
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Stopwatch(u64);

impl Stopwatch {
    pub fn start() -> Self {
        Stopwatch(raw_ns())
    }

    pub fn elapsed_ns(&self) -> u64 {
        raw_ns().saturating_sub(self.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strictly_increasing_across_threads() {
        let per_thread: Vec<Vec<u64>> = std::thread::scope(|s| {
            let hs: Vec<_> = (0..4)
                .map(|_| s.spawn(|| (0..1000).map(|_| now_ns()).collect::<Vec<_>>()))
                .collect();
            hs.into_iter().map(|h| h.join().unwrap()).collect()
        });
        let mut all: Vec<u64> = per_thread.iter().flatten().copied().collect();
        for v in &per_thread {
            assert!(v.windows(2).all(|w| w[0] < w[1]));
        }
        let n = all.len();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), n);
    }
}
