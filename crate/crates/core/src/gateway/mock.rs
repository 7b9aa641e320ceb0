//! In-process transports for tests and offline runs.

use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use super::{EndpointConfig, Request, Response, Transport, TransportError};

type Script = dyn Fn(&EndpointConfig, &Request, u64) -> Result<Response, TransportError> + Send + Sync;

/// Answers each request with a closure of `(endpoint, request, call_number)`.
/// Records every request and the peak number of concurrent calls.
pub struct ScriptedTransport {
    script: Box<Script>,
    delay: Option<Duration>,
    calls: AtomicU64,
    in_flight: AtomicUsize,
    max_in_flight: AtomicUsize,
    log: Mutex<Vec<(String, Request)>>,
}

impl ScriptedTransport {
    pub fn new<F>(script: F) -> Self
    where
        F: Fn(&EndpointConfig, &Request, u64) -> Result<Response, TransportError> + Send + Sync + 'static,
    {
        ScriptedTransport {
            script: Box::new(script),
            delay: None,
            calls: AtomicU64::new(0),
            in_flight: AtomicUsize::new(0),
            max_in_flight: AtomicUsize::new(0),
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn with_delay(mut self, delay: Duration) -> Self {
        self.delay = Some(delay);
        self
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn max_in_flight(&self) -> usize {
        self.max_in_flight.load(Ordering::SeqCst)
    }

    /// `(model, request)` pairs in arrival order.
    pub fn requests(&self) -> Vec<(String, Request)> {
        self.log.lock().unwrap().clone()
    }

    pub fn requests_for(&self, model: &str) -> Vec<Request> {
        self.requests().into_iter().filter(|(m, _)| m == model).map(|(_, r)| r).collect()
    }
}

impl Transport for ScriptedTransport {
    fn send(&self, endpoint: &EndpointConfig, request: &Request) -> Result<Response, TransportError> {
        let call = self.calls.fetch_add(1, Ordering::SeqCst);
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.max_in_flight.fetch_max(now, Ordering::SeqCst);
        self.log.lock().unwrap().push((endpoint.model.clone(), request.clone()));
        if let Some(d) = self.delay {
            std::thread::sleep(d);
        }
        let out = (self.script)(endpoint, request, call);
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
        out
    }
}

/// Fails loudly if anything tries to reach the network.
#[derive(Debug, Default, Clone, Copy)]
pub struct PanicTransport;

impl Transport for PanicTransport {
    fn send(&self, endpoint: &EndpointConfig, request: &Request) -> Result<Response, TransportError> {
        panic!("network access attempted in offline mode: {} {:?}", endpoint.model, request)
    }
}
