use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

/// Global cap on in-flight requests plus a minimum spacing between request
/// starts. One instance is shared by every client of an endpoint.
#[derive(Debug)]
pub struct Throttle {
    max_in_flight: usize,
    min_interval: Duration,
    state: Mutex<State>,
    freed: Condvar,
}

#[derive(Debug)]
struct State {
    in_flight: usize,
    next_start: Instant,
}

/// Held while a request is in flight.
pub struct Permit<'a> {
    throttle: &'a Throttle,
}

impl Throttle {
    /// `requests_per_minute = None` disables spacing.
    pub fn new(max_in_flight: usize, requests_per_minute: Option<u32>) -> Self {
        let min_interval = match requests_per_minute {
            Some(r) if r > 0 => Duration::from_secs_f64(60.0 / r as f64),
            _ => Duration::ZERO,
        };
        Throttle {
            max_in_flight: max_in_flight.max(1),
            min_interval,
            state: Mutex::new(State {
                in_flight: 0,
                next_start: Instant::now(),
            }),
            freed: Condvar::new(),
        }
    }

    pub fn unlimited() -> Self {
        Throttle::new(usize::MAX, None)
    }

    pub fn max_in_flight(&self) -> usize {
        self.max_in_flight
    }

    /// Blocks until a slot is free and the spacing allows a new start.
    pub fn acquire(&self) -> Permit<'_> {
        let mut s = self.state.lock().expect("throttle lock");
        while s.in_flight >= self.max_in_flight {
            s = self.freed.wait(s).expect("throttle lock");
        }
        s.in_flight += 1;
        let now = Instant::now();
        let start = s.next_start.max(now);
        s.next_start = start + self.min_interval;
        drop(s);
        if start > now {
            std::thread::sleep(start - now);
        }
        Permit { throttle: self }
    }

    fn release(&self) {
        let mut s = self.state.lock().expect("throttle lock");
        s.in_flight -= 1;
        self.freed.notify_one();
    }

    pub fn in_flight(&self) -> usize {
        self.state.lock().expect("throttle lock").in_flight
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        self.throttle.release();
    }
}
