use std::sync::{Condvar, Mutex};

/// Counting semaphore bounding in-flight requests per endpoint.
#[derive(Debug)]
pub(crate) struct Limiter {
    available: Mutex<usize>,
    freed: Condvar,
}

pub(crate) struct Permit<'a> {
    limiter: &'a Limiter,
}

impl Limiter {
    pub fn new(slots: usize) -> Self {
        Limiter {
            available: Mutex::new(slots.max(1)),
            freed: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut n = self.available.lock().unwrap_or_else(|e| e.into_inner());
        while *n == 0 {
            n = self.freed.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n -= 1;
        Permit { limiter: self }
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.limiter.available.lock().unwrap_or_else(|e| e.into_inner());
        *n += 1;
        self.limiter.freed.notify_one();
    }
}
