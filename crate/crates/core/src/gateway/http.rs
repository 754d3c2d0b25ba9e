//! OpenAI-compatible chat-completions client.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{ChatBackend, ChatRequest, ChatResponse, GatewayError, RequestContext, TokenLogprob, TopLogprob};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EndpointConfig {
    /// Base URL up to and including the API version, e.g. `http://host:8000/v1`.
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding a bearer token, if any.
    pub auth_token_env: Option<String>,
    pub timeout_secs: u64,
    /// Retries after the first attempt for transient failures.
    pub max_retries: u32,
    /// Upper bound on concurrent in-flight requests.
    pub parallelism: usize,
    pub requests_per_second: Option<f64>,
    pub backoff_base_ms: u64,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        EndpointConfig {
            base_url: "http://127.0.0.1:8000/v1".into(),
            model: String::new(),
            auth_token_env: None,
            timeout_secs: 60,
            max_retries: 3,
            parallelism: 8,
            requests_per_second: None,
            backoff_base_ms: 500,
        }
    }
}

pub struct HttpBackend {
    config: EndpointConfig,
    client: reqwest::blocking::Client,
    token: Option<String>,
    attempts: AtomicU64,
    next_slot: Mutex<Instant>,
}

impl HttpBackend {
    pub fn new(config: EndpointConfig) -> Result<Self, GatewayError> {
        let token = match &config.auth_token_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                GatewayError::InvalidRequest(format!("environment variable {var} is not set"))
            })?),
            None => None,
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs.max(1)))
            .build()
            .map_err(|e| GatewayError::Transport { attempts: 0, message: e.to_string() })?;
        Ok(HttpBackend { config, client, token, attempts: AtomicU64::new(0), next_slot: Mutex::new(Instant::now()) })
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.config
    }

    /// Total HTTP attempts made so far, retries included.
    pub fn attempts(&self) -> u64 {
        self.attempts.load(Ordering::SeqCst)
    }

    fn url(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }

    fn throttle(&self) {
        let Some(rps) = self.config.requests_per_second.filter(|r| *r > 0.0) else {
            return;
        };
        let gap = Duration::from_secs_f64(1.0 / rps);
        let wait = {
            let mut slot = self.next_slot.lock().expect("rate limiter poisoned");
            let now = Instant::now();
            let start = (*slot).max(now);
            *slot = start + gap;
            start - now
        };
        if !wait.is_zero() {
            std::thread::sleep(wait);
        }
    }

    fn body(&self, request: &ChatRequest) -> Value {
        let mut body = json!({
            "model": self.config.model,
            "messages": request.messages,
            "max_tokens": request.max_tokens,
            "temperature": request.temperature,
        });
        if request.want_logprobs {
            body["logprobs"] = json!(true);
            body["top_logprobs"] = json!(request.top_logprobs_k);
        }
        body
    }
}

fn transient(status: u16) -> bool {
    matches!(status, 429 | 500 | 502 | 503 | 504)
}

impl ChatBackend for HttpBackend {
    fn complete(&self, request: &ChatRequest, _context: &RequestContext<'_>) -> Result<ChatResponse, GatewayError> {
        request.validate()?;
        let body = self.body(request);
        let total = self.config.max_retries + 1;
        let mut last = String::new();
        for attempt in 0..total {
            if attempt > 0 {
                let backoff = self.config.backoff_base_ms.saturating_mul(1 << (attempt - 1).min(16));
                std::thread::sleep(Duration::from_millis(backoff));
            }
            self.throttle();
            self.attempts.fetch_add(1, Ordering::SeqCst);
            let mut req = self.client.post(self.url()).json(&body);
            if let Some(t) = &self.token {
                req = req.bearer_auth(t);
            }
            let resp = match req.send() {
                Ok(r) => r,
                Err(e) => {
                    log::warn!("attempt {} to {} failed: {e}", attempt + 1, self.url());
                    last = e.to_string();
                    continue;
                }
            };
            let status = resp.status().as_u16();
            let text = resp.text().map_err(|e| GatewayError::Decode(e.to_string()))?;
            if (200..300).contains(&status) {
                return decode(&text, request.want_logprobs);
            }
            if !transient(status) {
                return Err(GatewayError::Protocol { status, body: text });
            }
            log::warn!("attempt {} got HTTP {status}", attempt + 1);
            last = format!("HTTP {status}: {text}");
        }
        Err(GatewayError::Transport { attempts: total, message: last })
    }

    fn identity(&self) -> String {
        format!("http:{}#{}", self.config.base_url, self.config.model)
    }
}

fn decode(body: &str, want_logprobs: bool) -> Result<ChatResponse, GatewayError> {
    let v: Value = serde_json::from_str(body).map_err(|e| GatewayError::Decode(e.to_string()))?;
    let choice = v
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| GatewayError::Decode("response has no choices".into()))?;
    let text = choice
        .pointer("/message/content")
        .and_then(Value::as_str)
        .unwrap_or("")
        .to_string();
    let content = choice.pointer("/logprobs/content").and_then(Value::as_array);
    let tokens = match (content, want_logprobs) {
        (Some(items), true) => items.iter().map(decode_token).collect::<Result<Vec<_>, _>>()?,
        (None, true) => return Err(GatewayError::Capability("no logprobs.content in response".into())),
        (_, false) => Vec::new(),
    };
    let resp = ChatResponse { text, tokens };
    resp.check()?;
    Ok(resp)
}

fn decode_token(item: &Value) -> Result<TokenLogprob, GatewayError> {
    let pair = |v: &Value| -> Result<(String, f64), GatewayError> {
        let token = v.get("token").and_then(Value::as_str);
        let lp = v.get("logprob").and_then(Value::as_f64);
        match (token, lp) {
            (Some(t), Some(lp)) => Ok((t.to_string(), lp.min(0.0))),
            _ => Err(GatewayError::Decode(format!("malformed logprob entry {v}"))),
        }
    };
    let (token, logprob) = pair(item)?;
    let mut alternatives = item
        .get("top_logprobs")
        .and_then(Value::as_array)
        .map(|a| a.iter().map(pair).collect::<Result<Vec<_>, _>>())
        .transpose()?
        .unwrap_or_default()
        .into_iter()
        .map(|(token, logprob)| TopLogprob { token, logprob })
        .collect::<Vec<_>>();
    alternatives.sort_by(|a, b| b.logprob.total_cmp(&a.logprob));
    Ok(TokenLogprob { token, logprob, alternatives })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::Arc;

    const OK_BODY: &str = r#"{"choices":[{"message":{"role":"assistant","content":"Ms. X"},
        "logprobs":{"content":[{"token":"Ms","logprob":-0.5108256237659907,
        "top_logprobs":[{"token":"Mr","logprob":-0.916290731874155},{"token":"Ms","logprob":-0.5108256237659907}]},
        {"token":".","logprob":0.0,"top_logprobs":[]},{"token":" X","logprob":-0.0001,"top_logprobs":[]}]}}]}"#;

    /// Serve the given (status, body) pairs in order, one per connection,
    /// and record each request body.
    fn serve(script: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<String>>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let seen = Arc::new(Mutex::new(Vec::new()));
        let seen2 = Arc::clone(&seen);
        std::thread::spawn(move || {
            for (status, body) in script {
                let Ok((mut stream, _)) = listener.accept() else { return };
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    if reader.read_line(&mut line).unwrap() == 0 {
                        break;
                    }
                    let lower = line.to_ascii_lowercase();
                    if let Some(v) = lower.strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                    if line == "\r\n" {
                        break;
                    }
                }
                let mut buf = vec![0u8; len];
                reader.read_exact(&mut buf).unwrap();
                seen2.lock().unwrap().push(String::from_utf8(buf).unwrap());
                let resp = format!(
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                );
                stream.write_all(resp.as_bytes()).unwrap();
            }
        });
        (format!("http://{addr}/v1"), seen)
    }

    fn backend(url: String, retries: u32) -> HttpBackend {
        HttpBackend::new(EndpointConfig {
            base_url: url,
            model: "m".into(),
            max_retries: retries,
            backoff_base_ms: 1,
            timeout_secs: 5,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn decodes_logprobs_and_sends_schema() {
        let (url, seen) = serve(vec![(200, OK_BODY.into())]);
        let b = backend(url, 0);
        let r = b.complete(&ChatRequest::user("prompt"), &RequestContext::None).unwrap();
        assert_eq!(r.text, "Ms. X");
        assert_eq!(r.tokens.len(), 3);
        assert!((r.tokens[0].logprob.exp() - 0.6).abs() < 1e-12);
        assert_eq!(r.tokens[0].alternatives[0].token, "Ms");
        let sent: Value = serde_json::from_str(&seen.lock().unwrap()[0]).unwrap();
        assert_eq!(sent["messages"][0]["role"], "user");
        assert_eq!(sent["messages"][0]["content"], "prompt");
        assert_eq!(sent["logprobs"], true);
        assert_eq!(sent["top_logprobs"], 5);
        assert_eq!(sent["temperature"], 0.0);
    }

    #[test]
    fn two_transient_failures_then_success() {
        let (url, _) = serve(vec![
            (503, "busy".into()),
            (503, "busy".into()),
            (200, OK_BODY.into()),
        ]);
        let b = backend(url, 3);
        let r = b.complete(&ChatRequest::user("p"), &RequestContext::None).unwrap();
        assert_eq!(r.text, "Ms. X");
        assert_eq!(b.attempts(), 3);
    }

    #[test]
    fn retries_exhausted_is_transport_error() {
        let (url, _) = serve(vec![(503, "a".into()), (502, "b".into())]);
        let b = backend(url, 1);
        let e = b.complete(&ChatRequest::user("p"), &RequestContext::None).unwrap_err();
        assert!(matches!(e, GatewayError::Transport { attempts: 2, .. }), "{e}");
    }

    #[test]
    fn non_transient_status_is_protocol_error() {
        let (url, _) = serve(vec![(400, "bad request".into())]);
        let b = backend(url, 3);
        match b.complete(&ChatRequest::user("p"), &RequestContext::None) {
            Err(GatewayError::Protocol { status, body }) => {
                assert_eq!(status, 400);
                assert_eq!(body, "bad request");
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(b.attempts(), 1);
    }

    #[test]
    fn missing_logprobs_is_capability_error() {
        let body = r#"{"choices":[{"message":{"content":"Mr. X"}}]}"#;
        let (url, _) = serve(vec![(200, body.into()), (200, body.into())]);
        let b = backend(url, 0);
        let e = b.complete(&ChatRequest::user("p"), &RequestContext::None).unwrap_err();
        assert!(matches!(e, GatewayError::Capability(_)));
        let mut req = ChatRequest::user("p");
        req.want_logprobs = false;
        assert_eq!(b.complete(&req, &RequestContext::None).unwrap().text, "Mr. X");
    }

    #[test]
    fn unreachable_endpoint() {
        let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        let b = backend(format!("http://127.0.0.1:{port}/v1"), 1);
        let e = b.complete(&ChatRequest::user("p"), &RequestContext::None).unwrap_err();
        assert!(matches!(e, GatewayError::Transport { attempts: 2, .. }));
    }

    #[test]
    fn missing_token_env() {
        let cfg = EndpointConfig {
            auth_token_env: Some("CALLBACK_AUDIT_SURELY_UNSET_VAR".into()),
            ..Default::default()
        };
        assert!(HttpBackend::new(cfg).is_err());
    }
}
