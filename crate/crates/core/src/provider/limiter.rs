//! Client-side throttling: a sliding-window rate limiter and a counting
//! semaphore, both driven through a [`Clock`] so tests never sleep.

use std::collections::VecDeque;
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

/// Time source. The system clock sleeps for real; tests substitute a manual
/// clock that advances instantly.
pub trait Clock: Send + Sync {
    fn now(&self) -> Instant;
    fn sleep(&self, duration: Duration);
}

#[derive(Debug, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> Instant {
        Instant::now()
    }

    fn sleep(&self, duration: Duration) {
        std::thread::sleep(duration);
    }
}

/// Manual clock for tests: `sleep` advances time without waiting.
pub struct ManualClock {
    start: Instant,
    offset: Mutex<Duration>,
}

impl ManualClock {
    pub fn new() -> Self {
        ManualClock {
            start: Instant::now(),
            offset: Mutex::new(Duration::ZERO),
        }
    }

    pub fn advance(&self, duration: Duration) {
        *self.offset.lock().unwrap() += duration;
    }
}

impl Default for ManualClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for ManualClock {
    fn now(&self) -> Instant {
        self.start + *self.offset.lock().unwrap()
    }

    fn sleep(&self, duration: Duration) {
        self.advance(duration);
    }
}

/// Allows at most `capacity` departures in any sliding `window`. `acquire`
/// blocks (via the clock) until a slot frees up, then records the departure.
pub struct RateLimiter {
    capacity: usize,
    window: Duration,
    departures: Mutex<VecDeque<Instant>>,
    clock: Arc<dyn Clock>,
}

impl RateLimiter {
    pub fn per_minute(capacity: u32, clock: Arc<dyn Clock>) -> Self {
        RateLimiter {
            capacity: capacity as usize,
            window: Duration::from_secs(60),
            departures: Mutex::new(VecDeque::new()),
            clock,
        }
    }

    pub fn acquire(&self) {
        loop {
            let wait = {
                let mut departures = self.departures.lock().unwrap();
                let now = self.clock.now();
                while let Some(&front) = departures.front() {
                    if now.duration_since(front) >= self.window {
                        departures.pop_front();
                    } else {
                        break;
                    }
                }
                if departures.len() < self.capacity {
                    departures.push_back(now);
                    return;
                }
                // Oldest departure leaves the window after this long.
                self.window - now.duration_since(*departures.front().unwrap())
            };
            self.clock.sleep(wait);
        }
    }
}

/// Counting semaphore bounding in-flight requests per endpoint.
pub struct Semaphore {
    permits: Mutex<usize>,
    available: Condvar,
}

impl Semaphore {
    pub fn new(permits: usize) -> Self {
        Semaphore {
            permits: Mutex::new(permits.max(1)),
            available: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> SemaphoreGuard<'_> {
        let mut permits = self.permits.lock().unwrap();
        while *permits == 0 {
            permits = self.available.wait(permits).unwrap();
        }
        *permits -= 1;
        SemaphoreGuard { semaphore: self }
    }
}

pub struct SemaphoreGuard<'a> {
    semaphore: &'a Semaphore,
}

impl Drop for SemaphoreGuard<'_> {
    fn drop(&mut self) {
        let mut permits = self.semaphore.permits.lock().unwrap();
        *permits += 1;
        self.semaphore.available.notify_one();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Brute-force check of the limiter invariant: no 60-second sliding
    /// window contains more than `capacity` departures.
    fn assert_window_bound(times: &[Instant], capacity: usize, window: Duration) {
        for (i, &start) in times.iter().enumerate() {
            let in_window = times[i..]
                .iter()
                .take_while(|&&t| t.duration_since(start) < window)
                .count();
            assert!(
                in_window <= capacity,
                "window starting at departure {i} saw {in_window} > {capacity}"
            );
        }
    }

    #[test]
    fn limiter_never_exceeds_capacity_in_any_window() {
        let clock = Arc::new(ManualClock::new());
        let limiter = RateLimiter::per_minute(5, clock.clone());
        let mut departures = Vec::new();
        for i in 0..23 {
            limiter.acquire();
            departures.push(clock.now());
            // Irregular inter-arrival pattern, including bursts.
            if i % 3 == 0 {
                clock.advance(Duration::from_secs(2));
            }
        }
        assert_eq!(departures.len(), 23);
        assert_window_bound(&departures, 5, Duration::from_secs(60));
    }

    #[test]
    fn limiter_burst_then_wait() {
        let clock = Arc::new(ManualClock::new());
        let limiter = RateLimiter::per_minute(3, clock.clone());
        let t0 = clock.now();
        for _ in 0..3 {
            limiter.acquire();
        }
        // Fourth acquire must push time past the window edge.
        limiter.acquire();
        assert!(clock.now().duration_since(t0) >= Duration::from_secs(60));
    }

    #[test]
    fn semaphore_bounds_concurrent_holders() {
        use std::sync::atomic::{AtomicUsize, Ordering};

        let semaphore = Arc::new(Semaphore::new(3));
        let active = Arc::new(AtomicUsize::new(0));
        let peak = Arc::new(AtomicUsize::new(0));
        let handles: Vec<_> = (0..16)
            .map(|_| {
                let (semaphore, active, peak) =
                    (semaphore.clone(), active.clone(), peak.clone());
                std::thread::spawn(move || {
                    let _guard = semaphore.acquire();
                    let now = active.fetch_add(1, Ordering::SeqCst) + 1;
                    peak.fetch_max(now, Ordering::SeqCst);
                    std::thread::sleep(Duration::from_millis(2));
                    active.fetch_sub(1, Ordering::SeqCst);
                })
            })
            .collect();
        for handle in handles {
            handle.join().unwrap();
        }
        assert!(peak.load(Ordering::SeqCst) <= 3);
    }
}
