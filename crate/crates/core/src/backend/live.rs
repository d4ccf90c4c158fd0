use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use serde_json::{json, Value};

use super::{Backend, BackendError};
use crate::dialogue::{GenerationRequest, Role};

pub const API_KEY_ENV: &str = "DIVBENCH_API_KEY";

#[derive(Debug, Clone)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

/// Minimal blocking JSON POST, swappable in tests.
pub trait HttpTransport: Send + Sync {
    fn post_json(&self, url: &str, headers: &[(String, String)], body: &Value) -> Result<HttpResponse, String>;
}

pub struct UreqTransport {
    agent: ureq::Agent,
}

impl UreqTransport {
    pub fn new(timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self { agent }
    }
}

impl Default for UreqTransport {
    fn default() -> Self {
        Self::new(Duration::from_secs(300))
    }
}

impl HttpTransport for UreqTransport {
    fn post_json(&self, url: &str, headers: &[(String, String)], body: &Value) -> Result<HttpResponse, String> {
        let mut req = self.agent.post(url);
        for (k, v) in headers {
            req = req.header(k.as_str(), v.as_str());
        }
        let mut resp = req.send_json(body).map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        let body = resp.body_mut().read_to_string().map_err(|e| e.to_string())?;
        Ok(HttpResponse { status, body })
    }
}

/// Chat-completion client with bounded exponential backoff.
pub struct LiveBackend {
    endpoint: String,
    model: String,
    api_key: Option<String>,
    transport: Box<dyn HttpTransport>,
    max_attempts: u32,
    base_delay: Duration,
    max_delay: Duration,
    retries: AtomicU64,
}

impl LiveBackend {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into().trim_end_matches('/').to_string(),
            model: model.into(),
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
            transport: Box::new(UreqTransport::default()),
            max_attempts: 5,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(30),
            retries: AtomicU64::new(0),
        }
    }

    pub fn with_transport(mut self, transport: Box<dyn HttpTransport>) -> Self {
        self.transport = transport;
        self
    }

    pub fn with_api_key(mut self, key: Option<String>) -> Self {
        self.api_key = key;
        self
    }

    pub fn with_backoff(mut self, max_attempts: u32, base_delay: Duration, max_delay: Duration) -> Self {
        self.max_attempts = max_attempts.max(1);
        self.base_delay = base_delay;
        self.max_delay = max_delay;
        self
    }

    pub fn url(&self) -> String {
        format!("{}/v1/chat/completions", self.endpoint)
    }

    pub fn request_body(&self, request: &GenerationRequest) -> Value {
        let mut body = json!({
            "model": self.model,
            "messages": chat_messages(request),
            "n": request.n_samples,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        if let Some(k) = request.top_k {
            body["top_k"] = json!(k);
        }
        body
    }

    fn delay(&self, attempt: u32) -> Duration {
        let factor = 2u32.saturating_pow(attempt.saturating_sub(1));
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }
}

/// Preamble becomes the system message; instruction lines are sent as user
/// text. Adjacent messages with the same role are merged.
pub fn chat_messages(request: &GenerationRequest) -> Vec<Value> {
    let mut out: Vec<(&str, String)> = Vec::new();
    if !request.preamble.is_empty() {
        out.push(("system", request.preamble.clone()));
    }
    for turn in &request.dialogue {
        let role = match turn.role {
            Role::User | Role::Instruction => "user",
            Role::AiModel => "assistant",
        };
        match out.last_mut() {
            Some((r, content)) if *r == role => {
                content.push('\n');
                content.push_str(&turn.text);
            }
            _ => out.push((role, turn.text.clone())),
        }
    }
    out.into_iter()
        .map(|(role, content)| json!({"role": role, "content": content}))
        .collect()
}

fn parse_choices(body: &str) -> Result<Vec<String>, BackendError> {
    let v: Value = serde_json::from_str(body).map_err(|e| BackendError::Protocol(e.to_string()))?;
    let choices = v["choices"]
        .as_array()
        .ok_or_else(|| BackendError::Protocol("missing choices array".into()))?;
    choices
        .iter()
        .map(|c| {
            c["message"]["content"]
                .as_str()
                .map(String::from)
                .ok_or_else(|| BackendError::Protocol("choice without message.content".into()))
        })
        .collect()
}

fn retryable(status: u16) -> bool {
    status == 429 || (500..600).contains(&status)
}

impl Backend for LiveBackend {
    fn sample(&self, request: &GenerationRequest) -> Result<Vec<String>, BackendError> {
        let body = self.request_body(request);
        let mut headers = vec![("Content-Type".to_string(), "application/json".to_string())];
        if let Some(key) = &self.api_key {
            headers.push(("Authorization".into(), format!("Bearer {key}")));
        }
        let url = self.url();
        let mut attempt = 0;
        loop {
            attempt += 1;
            let outcome = self.transport.post_json(&url, &headers, &body);
            let last = attempt >= self.max_attempts;
            match outcome {
                Ok(resp) if (200..300).contains(&resp.status) => return parse_choices(&resp.body),
                Ok(resp) if retryable(resp.status) && !last => {
                    log::warn!("attempt {attempt}: status {}, backing off", resp.status);
                }
                Ok(resp) => {
                    return Err(BackendError::Status {
                        status: resp.status,
                        attempts: attempt,
                        body: resp.body,
                    })
                }
                Err(message) if last => return Err(BackendError::Transport { attempts: attempt, message }),
                Err(message) => log::warn!("attempt {attempt}: {message}, backing off"),
            }
            self.retries.fetch_add(1, Ordering::Relaxed);
            std::thread::sleep(self.delay(attempt));
        }
    }

    fn deterministic(&self) -> bool {
        false
    }

    fn retry_count(&self) -> u64 {
        self.retries.load(Ordering::Relaxed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dialogue::{Turn, ANSWER_CUE};
    use std::sync::Mutex;

    type Headers = Vec<(String, String)>;

    struct Canned {
        responses: Mutex<Vec<Result<HttpResponse, String>>>,
        seen: Mutex<Vec<(Headers, Value)>>,
    }

    impl Canned {
        fn new(mut responses: Vec<Result<HttpResponse, String>>) -> Self {
            responses.reverse();
            Self {
                responses: Mutex::new(responses),
                seen: Mutex::new(Vec::new()),
            }
        }
    }

    impl HttpTransport for &'static Canned {
        fn post_json(&self, _: &str, headers: &[(String, String)], body: &Value) -> Result<HttpResponse, String> {
            self.seen.lock().unwrap().push((headers.to_vec(), body.clone()));
            self.responses.lock().unwrap().pop().expect("unexpected extra call")
        }
    }

    fn status(code: u16) -> Result<HttpResponse, String> {
        Ok(HttpResponse {
            status: code,
            body: "{}".into(),
        })
    }

    fn ok(texts: &[&str]) -> Result<HttpResponse, String> {
        let choices: Vec<Value> = texts
            .iter()
            .map(|t| json!({"message": {"role": "assistant", "content": t}}))
            .collect();
        Ok(HttpResponse {
            status: 200,
            body: json!({ "choices": choices }).to_string(),
        })
    }

    fn req(n: usize) -> GenerationRequest {
        GenerationRequest {
            preamble: "You are an AI model.".into(),
            dialogue: vec![Turn::user("Name a few ceos."), Turn::instruction(ANSWER_CUE)],
            n_samples: n,
            temperature: 0.7,
            top_k: None,
            max_tokens: 1024,
            seed: None,
        }
    }

    fn backend(canned: &'static Canned) -> LiveBackend {
        LiveBackend::new("http://localhost:9/", "m")
            .with_transport(Box::new(canned))
            .with_api_key(Some("secret".into()))
            .with_backoff(5, Duration::from_millis(1), Duration::from_millis(4))
    }

    #[test]
    fn retries_429_then_succeeds() {
        let canned = Box::leak(Box::new(Canned::new(vec![status(429), status(429), ok(&["a", "b"])])));
        let b = backend(canned);
        let d = b.generate(&req(2)).unwrap();
        assert_eq!(d.iter().map(|d| d.text.as_str()).collect::<Vec<_>>(), ["a", "b"]);
        assert_eq!(b.retry_count(), 2);
        let seen = canned.seen.lock().unwrap();
        assert_eq!(seen.len(), 3);
        assert!(seen[0].0.contains(&("Authorization".into(), "Bearer secret".into())));
        let body = &seen[0].1;
        assert_eq!(body["n"], 2);
        assert_eq!(body["max_tokens"], 1024);
        assert!(body.get("top_k").is_none());
        assert_eq!(body["messages"][0]["role"], "system");
        assert_eq!(body["messages"][1]["content"], "Name a few ceos.\nAI model:");
    }

    #[test]
    fn gives_up_after_five_attempts() {
        let canned = Box::leak(Box::new(Canned::new(vec![Err("refused".into()); 5])));
        let err = backend(canned).generate(&req(1)).unwrap_err();
        assert!(matches!(err, BackendError::Transport { attempts: 5, .. }), "{err}");
    }

    #[test]
    fn client_errors_are_not_retried() {
        let canned = Box::leak(Box::new(Canned::new(vec![status(400)])));
        let err = backend(canned).generate(&req(1)).unwrap_err();
        assert!(matches!(err, BackendError::Status { status: 400, attempts: 1, .. }));
    }

    #[test]
    fn short_batch_is_an_error() {
        let canned = Box::leak(Box::new(Canned::new(vec![ok(&["only one"])])));
        let err = backend(canned).generate(&req(5)).unwrap_err();
        assert!(err.to_string().contains("short batch"));
    }

    #[test]
    fn model_turns_map_to_assistant() {
        let mut r = req(1);
        r.dialogue.insert(1, Turn::ai_model("Bill Gates."));
        r.top_k = Some(40);
        let b = LiveBackend::new("http://x", "m");
        let body = b.request_body(&r);
        let roles: Vec<&str> = body["messages"]
            .as_array()
            .unwrap()
            .iter()
            .map(|m| m["role"].as_str().unwrap())
            .collect();
        assert_eq!(roles, ["system", "user", "assistant", "user"]);
        assert_eq!(body["top_k"], 40);
        assert_eq!(b.url(), "http://x/v1/chat/completions");
    }
}
