use std::io::Read;
use std::thread;
use std::time::Duration;

use serde::Serialize;

use crate::backend::wire::{self, GenerateRequest, TextBody, TokensBody};
use crate::backend::{BackendInfo, GenerationConfig, ModelBackend};
use crate::entropy::Distribution;
use crate::error::{Error, Result};
use crate::tokens::{TokenId, TokenSequence};

const MAX_BODY_BYTES: u64 = 256 << 20;

/// Bounded exponential backoff.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            base_delay: Duration::from_millis(100),
            max_delay: Duration::from_secs(5),
        }
    }
}

impl RetryPolicy {
    pub fn none() -> Self {
        Self {
            max_retries: 0,
            ..Self::default()
        }
    }

    /// Delay before retry number `attempt` (1-based): `min(base * 2^(attempt-1), max)`.
    pub fn delay(&self, attempt: u32) -> Duration {
        let factor = 1u32 << attempt.saturating_sub(1).min(20);
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }
}

/// How a failed call may be retried.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Idempotency {
    /// Retry transport failures and 5xx responses.
    Idempotent,
    /// Retry only when the connection was never established.
    ConnectOnly,
}

enum Failure {
    Retryable(Error),
    Fatal(Error),
}

/// Client for a model server speaking the protocol in [`wire`].
#[derive(Debug)]
pub struct RemoteBackend {
    base_url: String,
    agent: ureq::Agent,
    timeout: Duration,
    retry: RetryPolicy,
    info: BackendInfo,
}

fn build_agent(timeout: Duration, pool: usize) -> ureq::Agent {
    ureq::AgentBuilder::new()
        .timeout(timeout)
        .max_idle_connections_per_host(pool.max(1))
        .build()
}

impl RemoteBackend {
    /// Connects and fetches `/v1/info`. The connection pool is sized to the
    /// server's `max_parallel_hint`.
    pub fn connect(base_url: &str, timeout: Duration, retry: RetryPolicy) -> Result<Self> {
        let base_url = base_url.trim_end_matches('/').to_string();
        let mut backend = Self {
            base_url,
            agent: build_agent(timeout, 1),
            timeout,
            retry,
            info: BackendInfo {
                name: String::new(),
                vocab_size: 2,
                context_window: 1,
                max_parallel_hint: 1,
            },
        };
        let body = backend.call(wire::INFO_PATH, None::<&()>, Idempotency::Idempotent, 0)?;
        backend.info = wire::decode_info(&body)?;
        backend.agent = build_agent(timeout, backend.info.max_parallel_hint);
        Ok(backend)
    }

    /// Resizes the connection pool, e.g. to the scheduler's `max_parallel`.
    pub fn with_pool_size(mut self, pool: usize) -> Self {
        self.agent = build_agent(self.timeout, pool);
        self
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    fn call<T: Serialize>(
        &self,
        path: &str,
        body: Option<&T>,
        idempotency: Idempotency,
        request_len: usize,
    ) -> Result<Vec<u8>> {
        let url = format!("{}{}", self.base_url, path);
        let mut attempt = 0;
        loop {
            match self.call_once(&url, body, idempotency, request_len) {
                Ok(bytes) => return Ok(bytes),
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Retryable(e)) => {
                    attempt += 1;
                    if attempt > self.retry.max_retries {
                        return Err(e);
                    }
                    thread::sleep(self.retry.delay(attempt));
                }
            }
        }
    }

    fn call_once<T: Serialize>(
        &self,
        url: &str,
        body: Option<&T>,
        idempotency: Idempotency,
        request_len: usize,
    ) -> std::result::Result<Vec<u8>, Failure> {
        let response = match body {
            None => self.agent.get(url).call(),
            Some(b) => {
                let json = serde_json::to_string(b)
                    .map_err(|e| Failure::Fatal(Error::InvalidInput(e.to_string())))?;
                self.agent
                    .post(url)
                    .set("Content-Type", "application/json")
                    .send_string(&json)
            }
        };
        match response {
            Ok(resp) => read_body(resp).map_err(|e| match idempotency {
                Idempotency::Idempotent => Failure::Retryable(e),
                Idempotency::ConnectOnly => Failure::Fatal(e),
            }),
            Err(ureq::Error::Status(code, resp)) => {
                let bytes = read_body(resp).unwrap_or_default();
                if code == 400 {
                    Err(Failure::Fatal(wire::decode_error(
                        &bytes,
                        request_len,
                        self.info.context_window,
                    )))
                } else if code >= 500 {
                    let err = Error::Transport(format!("{url}: server error {code}"));
                    Err(match idempotency {
                        Idempotency::Idempotent => Failure::Retryable(err),
                        Idempotency::ConnectOnly => Failure::Fatal(err),
                    })
                } else {
                    Err(Failure::Fatal(Error::ProtocolViolation(format!(
                        "{url}: unexpected status {code}: {}",
                        String::from_utf8_lossy(&bytes[..bytes.len().min(200)])
                    ))))
                }
            }
            Err(ureq::Error::Transport(t)) => {
                let never_connected = matches!(
                    t.kind(),
                    ureq::ErrorKind::Dns | ureq::ErrorKind::ConnectionFailed
                );
                let err = Error::Transport(t.to_string());
                if idempotency == Idempotency::Idempotent || never_connected {
                    Err(Failure::Retryable(err))
                } else {
                    Err(Failure::Fatal(err))
                }
            }
        }
    }
}

fn read_body(resp: ureq::Response) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    resp.into_reader()
        .take(MAX_BODY_BYTES)
        .read_to_end(&mut buf)
        .map_err(|e| Error::Transport(format!("reading response body: {e}")))?;
    Ok(buf)
}

impl ModelBackend for RemoteBackend {
    fn info(&self) -> &BackendInfo {
        &self.info
    }

    fn tokenize(&self, text: &str) -> Result<TokenSequence> {
        let req = TextBody {
            text: text.to_string(),
        };
        let body = self.call(wire::TOKENIZE_PATH, Some(&req), Idempotency::Idempotent, 0)?;
        Ok(wire::decode_tokens(&body)?.into())
    }

    fn detokenize(&self, tokens: &[TokenId]) -> Result<String> {
        let req = TokensBody {
            tokens: tokens.to_vec(),
        };
        let body = self.call(
            wire::DETOKENIZE_PATH,
            Some(&req),
            Idempotency::Idempotent,
            tokens.len(),
        )?;
        wire::decode_text(&body)
    }

    fn score(&self, tokens: &[TokenId]) -> Result<Distribution> {
        let req = TokensBody {
            tokens: tokens.to_vec(),
        };
        let body = self.call(
            wire::SCORE_PATH,
            Some(&req),
            Idempotency::Idempotent,
            tokens.len(),
        )?;
        wire::decode_score(&body, self.info.vocab_size)
    }

    fn generate_streaming(
        &self,
        tokens: &[TokenId],
        cfg: &GenerationConfig,
        on_token: &mut dyn FnMut(TokenId),
    ) -> Result<()> {
        cfg.validate()?;
        let req = GenerateRequest::new(tokens, cfg);
        let body = self.call(
            wire::GENERATE_PATH,
            Some(&req),
            Idempotency::ConnectOnly,
            tokens.len(),
        )?;
        for t in wire::decode_tokens(&body)? {
            on_token(t);
        }
        Ok(())
    }
}
