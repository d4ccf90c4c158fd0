use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Backend, BackendError};
use crate::dialogue::{GenerationRequest, StepKind};

/// Fingerprint → decode texts.
pub type Script = BTreeMap<String, Vec<String>>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallLogEntry {
    pub seq: usize,
    pub fingerprint: String,
    pub step: Option<StepKind>,
    /// Calls in flight when this one started, itself included.
    pub concurrent: usize,
    pub hit: bool,
}

/// Serves decodes from a script keyed by request fingerprint.
pub struct ReplayBackend {
    script: Script,
    latency: Option<Duration>,
    log: Mutex<Vec<CallLogEntry>>,
    in_flight: AtomicUsize,
    max_in_flight: AtomicUsize,
}

impl ReplayBackend {
    pub fn new(script: Script) -> Self {
        Self {
            script,
            latency: None,
            log: Mutex::new(Vec::new()),
            in_flight: AtomicUsize::new(0),
            max_in_flight: AtomicUsize::new(0),
        }
    }

    /// Sleeps this long inside every call, to make overlap observable.
    pub fn with_latency(mut self, latency: Duration) -> Self {
        self.latency = Some(latency);
        self
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path)?;
        Ok(Self::new(serde_json::from_str(&text)?))
    }

    pub fn script(&self) -> &Script {
        &self.script
    }

    pub fn call_log(&self) -> Vec<CallLogEntry> {
        self.log.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn max_in_flight(&self) -> usize {
        self.max_in_flight.load(Ordering::SeqCst)
    }

    pub fn misses(&self) -> Vec<CallLogEntry> {
        self.call_log().into_iter().filter(|c| !c.hit).collect()
    }
}

impl Backend for ReplayBackend {
    fn sample(&self, request: &GenerationRequest) -> Result<Vec<String>, BackendError> {
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.max_in_flight.fetch_max(now, Ordering::SeqCst);
        if let Some(latency) = self.latency {
            std::thread::sleep(latency);
        }
        let fingerprint = request.fingerprint();
        let found = self.script.get(&fingerprint).cloned();
        {
            let mut log = self.log.lock().unwrap_or_else(|e| e.into_inner());
            let seq = log.len();
            log.push(CallLogEntry {
                seq,
                fingerprint: fingerprint.clone(),
                step: request.step_kind(),
                concurrent: now,
                hit: found.is_some(),
            });
        }
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
        found.ok_or_else(|| BackendError::ScriptMiss {
            step: request
                .step_kind()
                .map(|k| k.to_string())
                .unwrap_or_else(|| "unknown".into()),
            fingerprint,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dialogue::{Turn, ANSWER_CUE};

    fn req() -> GenerationRequest {
        GenerationRequest {
            preamble: "P".into(),
            dialogue: vec![Turn::user("q"), Turn::instruction(ANSWER_CUE)],
            n_samples: 1,
            temperature: 0.7,
            top_k: None,
            max_tokens: 1024,
            seed: None,
        }
    }

    #[test]
    fn hit_is_verbatim_and_repeatable() {
        let r = req();
        let b = ReplayBackend::new(Script::from([(r.fingerprint(), vec!["Bill Gates.".to_string()])]));
        let a = b.generate(&r).unwrap();
        assert_eq!(a[0].text, "Bill Gates.");
        assert_eq!(b.generate(&r).unwrap(), a);
        assert_eq!(b.call_log().len(), 2);
    }

    #[test]
    fn miss_names_step() {
        let b = ReplayBackend::new(Script::new());
        let err = b.generate(&req()).unwrap_err();
        assert!(err.to_string().contains("initial step"), "{err}");
        assert_eq!(b.misses().len(), 1);
    }
}
