use std::collections::VecDeque;
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

/// Counting semaphore bounding in-flight requests.
pub(crate) struct Semaphore {
    available: Mutex<usize>,
    cond: Condvar,
}

pub(crate) struct Permit<'a> {
    sem: &'a Semaphore,
}

impl Semaphore {
    pub(crate) fn new(permits: usize) -> Self {
        Semaphore {
            available: Mutex::new(permits),
            cond: Condvar::new(),
        }
    }

    pub(crate) fn acquire(&self) -> Permit<'_> {
        let mut n = self.available.lock().unwrap();
        while *n == 0 {
            n = self.cond.wait(n).unwrap();
        }
        *n -= 1;
        Permit { sem: self }
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.sem.available.lock().unwrap() += 1;
        self.sem.cond.notify_one();
    }
}

/// Sliding-window limiter: at most `cap` dispatches in any `window`.
pub struct RateLimiter {
    cap: usize,
    window: Duration,
    recent: Mutex<VecDeque<Instant>>,
}

impl RateLimiter {
    pub fn new(cap: usize, window: Duration) -> Self {
        RateLimiter {
            cap: cap.max(1),
            window,
            recent: Mutex::new(VecDeque::new()),
        }
    }

    pub fn per_minute(cap: usize) -> Self {
        RateLimiter::new(cap, Duration::from_secs(60))
    }

    /// Blocks until a dispatch slot is free, then claims it.
    pub fn wait(&self) {
        loop {
            let sleep_for = {
                let mut recent = self.recent.lock().unwrap();
                let now = Instant::now();
                while recent
                    .front()
                    .is_some_and(|t| now.duration_since(*t) >= self.window)
                {
                    recent.pop_front();
                }
                if recent.len() < self.cap {
                    recent.push_back(now);
                    return;
                }
                self.window - now.duration_since(*recent.front().expect("non-empty"))
            };
            std::thread::sleep(sleep_for);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    #[test]
    fn window_never_exceeds_cap() {
        let limiter = Arc::new(RateLimiter::new(3, Duration::from_millis(150)));
        let stamps = Arc::new(Mutex::new(Vec::new()));
        std::thread::scope(|s| {
            for _ in 0..4 {
                let limiter = limiter.clone();
                let stamps = stamps.clone();
                s.spawn(move || {
                    for _ in 0..2 {
                        limiter.wait();
                        stamps.lock().unwrap().push(Instant::now());
                    }
                });
            }
        });
        let mut stamps = stamps.lock().unwrap().clone();
        stamps.sort();
        assert_eq!(stamps.len(), 8);
        for (i, t) in stamps.iter().enumerate() {
            let in_window = stamps[i..]
                .iter()
                .take_while(|u| u.duration_since(*t) < Duration::from_millis(150))
                .count();
            assert!(in_window <= 3, "{in_window} dispatches inside one window");
        }
    }

    #[test]
    fn semaphore_bounds_holders() {
        let sem = Semaphore::new(2);
        let active = AtomicUsize::new(0);
        let peak = AtomicUsize::new(0);
        std::thread::scope(|s| {
            for _ in 0..6 {
                s.spawn(|| {
                    let _p = sem.acquire();
                    let now = active.fetch_add(1, Ordering::SeqCst) + 1;
                    peak.fetch_max(now, Ordering::SeqCst);
                    std::thread::sleep(Duration::from_millis(10));
                    active.fetch_sub(1, Ordering::SeqCst);
                });
            }
        });
        assert_eq!(peak.load(Ordering::SeqCst), 2);
    }
}
