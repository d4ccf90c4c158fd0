use std::sync::{Condvar, Mutex};

use super::{Backend, BackendError};
use crate::dialogue::GenerationRequest;

/// Caps the number of concurrent `sample` calls on the inner backend.
pub struct Limited<B> {
    inner: B,
    cap: usize,
    in_flight: Mutex<usize>,
    freed: Condvar,
}

impl<B: Backend> Limited<B> {
    pub fn new(inner: B, cap: usize) -> Self {
        Self {
            inner,
            cap: cap.max(1),
            in_flight: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }

    pub fn cap(&self) -> usize {
        self.cap
    }
}

struct Permit<'a> {
    count: &'a Mutex<usize>,
    freed: &'a Condvar,
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.count.lock().unwrap_or_else(|e| e.into_inner());
        *n -= 1;
        self.freed.notify_one();
    }
}

impl<B: Backend> Limited<B> {
    fn acquire(&self) -> Permit<'_> {
        let mut n = self.in_flight.lock().unwrap_or_else(|e| e.into_inner());
        while *n >= self.cap {
            n = self.freed.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n += 1;
        Permit {
            count: &self.in_flight,
            freed: &self.freed,
        }
    }
}

impl<B: Backend> Backend for Limited<B> {
    fn sample(&self, request: &GenerationRequest) -> Result<Vec<String>, BackendError> {
        let _permit = self.acquire();
        self.inner.sample(request)
    }

    fn deterministic(&self) -> bool {
        self.inner.deterministic()
    }

    fn retry_count(&self) -> u64 {
        self.inner.retry_count()
    }
}
