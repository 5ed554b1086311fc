#![allow(dead_code)]

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;

use xl3m::backend::wire::{self, ErrorBody, GenerateRequest, ScoreResponse, TextBody, TokensBody};
use xl3m::backend::ModelBackend;
use xl3m::Error;

// ---------------------------------------------------------------------------
// Extended-precision entropy oracle
// ---------------------------------------------------------------------------

/// Double-double accumulator (about 106 bits of significand).
#[derive(Clone, Copy, Default)]
struct DoubleDouble {
    hi: f64,
    lo: f64,
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

impl DoubleDouble {
    fn add(&mut self, x: f64) {
        let (s, e) = two_sum(self.hi, x);
        let e = e + self.lo;
        let (hi, lo) = two_sum(s, e);
        self.hi = hi;
        self.lo = lo;
    }

    /// Adds the exact product `a * b`.
    fn add_product(&mut self, a: f64, b: f64) {
        let p = a * b;
        let err = a.mul_add(b, -p);
        self.add(p);
        self.add(err);
    }

    fn value(&self) -> f64 {
        self.hi + self.lo
    }
}

/// Entropy of softmax(logits): materializes each probability `p_j` and its
/// log, then accumulates `-p_j ln p_j` in double-double arithmetic.
pub fn entropy_softmax_extended(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let shifted: Vec<f64> = logits.iter().map(|l| l - max).collect();
    let exps: Vec<f64> = shifted.iter().map(|s| s.exp()).collect();

    // Z - 1 in double-double: every maximal entry contributes exactly 1.
    let mut z_minus_one = DoubleDouble::default();
    let mut seen_max = false;
    for &e in &exps {
        if e == 1.0 && !seen_max {
            seen_max = true;
            continue;
        }
        z_minus_one.add(e);
    }
    let zm1 = z_minus_one.value();
    let ln_z = zm1.ln_1p();
    let z = 1.0 + zm1;

    let mut acc = DoubleDouble::default();
    for (&s, &e) in shifted.iter().zip(&exps) {
        if e == 0.0 {
            continue;
        }
        let p = e / z;
        let ln_p = s - ln_z;
        acc.add_product(-p, ln_p);
    }
    acc.value()
}

// ---------------------------------------------------------------------------
// Stub model server
// ---------------------------------------------------------------------------

/// Fault knobs for the stub server.
#[derive(Default)]
pub struct Faults {
    /// Answer this many requests (any endpoint) with HTTP 503 before serving.
    pub fail_first: AtomicUsize,
    /// Multiply every returned probability by this factor (1.0 when zero).
    pub mass_scale_bits: AtomicUsize,
    /// Return probabilities instead of log-probabilities from `/v1/score`.
    pub probabilities: std::sync::atomic::AtomicBool,
}

impl Faults {
    pub fn set_mass_scale(&self, scale: f64) {
        self.mass_scale_bits
            .store(scale.to_bits() as usize, Ordering::SeqCst);
    }

    fn mass_scale(&self) -> f64 {
        match self.mass_scale_bits.load(Ordering::SeqCst) {
            0 => 1.0,
            bits => f64::from_bits(bits as u64),
        }
    }
}

/// HTTP server exposing a local backend over the wire protocol.
pub struct StubServer {
    pub url: String,
    pub faults: Arc<Faults>,
    pub requests: Arc<AtomicUsize>,
    server: Arc<tiny_http::Server>,
    workers: Vec<thread::JoinHandle<()>>,
}

impl StubServer {
    pub fn start(backend: Arc<dyn ModelBackend>, workers: usize) -> Self {
        let server = Arc::new(tiny_http::Server::http("127.0.0.1:0").expect("bind stub server"));
        let port = server.server_addr().to_ip().expect("ip listener").port();
        let faults = Arc::new(Faults::default());
        let requests = Arc::new(AtomicUsize::new(0));
        let handles = (0..workers.max(1))
            .map(|_| {
                let server = Arc::clone(&server);
                let backend = Arc::clone(&backend);
                let faults = Arc::clone(&faults);
                let requests = Arc::clone(&requests);
                thread::spawn(move || {
                    while let Ok(mut req) = server.recv() {
                        requests.fetch_add(1, Ordering::SeqCst);
                        let mut body = Vec::new();
                        let _ = req.as_reader().read_to_end(&mut body);
                        let (status, json) = handle(&*backend, &faults, req.url(), &body);
                        let header = tiny_http::Header::from_bytes(
                            &b"Content-Type"[..],
                            &b"application/json"[..],
                        )
                        .unwrap();
                        let resp = tiny_http::Response::from_string(json)
                            .with_status_code(status)
                            .with_header(header);
                        let _ = req.respond(resp);
                    }
                })
            })
            .collect();
        Self {
            url: format!("http://127.0.0.1:{port}"),
            faults,
            requests,
            server,
            workers: handles,
        }
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.server.unblock();
        for _ in 1..self.workers.len() {
            self.server.unblock();
        }
        for h in self.workers.drain(..) {
            let _ = h.join();
        }
    }
}

fn error_json(kind: &str, detail: String) -> String {
    serde_json::to_string(&ErrorBody {
        error: kind.into(),
        detail,
    })
    .unwrap()
}

fn map_error(e: Error) -> (u16, String) {
    match e {
        Error::ContextOverflow { .. } => (400, error_json(wire::CONTEXT_OVERFLOW, e.to_string())),
        Error::TokenOutOfVocab { .. } | Error::ConfigInvalid(_) | Error::ProtocolViolation(_) => {
            (400, error_json(wire::BAD_REQUEST, e.to_string()))
        }
        other => (500, error_json("internal", other.to_string())),
    }
}

fn handle(backend: &dyn ModelBackend, faults: &Faults, url: &str, body: &[u8]) -> (u16, String) {
    if faults
        .fail_first
        .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
        .is_ok()
    {
        return (503, error_json("unavailable", "injected fault".into()));
    }
    let bad = |e: serde_json::Error| (400, error_json(wire::BAD_REQUEST, e.to_string()));
    let result: Result<String, (u16, String)> = match url {
        wire::INFO_PATH => Ok(serde_json::to_string(backend.info()).unwrap()),
        wire::TOKENIZE_PATH => serde_json::from_slice::<TextBody>(body)
            .map_err(bad)
            .and_then(|req| backend.tokenize(&req.text).map_err(map_error))
            .map(|t| serde_json::to_string(&TokensBody { tokens: t.to_vec() }).unwrap()),
        wire::DETOKENIZE_PATH => serde_json::from_slice::<TokensBody>(body)
            .map_err(bad)
            .and_then(|req| backend.detokenize(&req.tokens).map_err(map_error))
            .map(|text| serde_json::to_string(&TextBody { text }).unwrap()),
        wire::SCORE_PATH => serde_json::from_slice::<TokensBody>(body)
            .map_err(bad)
            .and_then(|req| backend.score(&req.tokens).map_err(map_error))
            .map(|d| {
                let scale = faults.mass_scale().ln();
                let probs = faults.probabilities.load(Ordering::SeqCst);
                let logprobs = d
                    .logprobs()
                    .iter()
                    .map(|&lp| {
                        let v = lp + scale;
                        Some(if probs { v.exp() } else { v })
                    })
                    .collect();
                serde_json::to_string(&ScoreResponse { logprobs }).unwrap()
            }),
        wire::GENERATE_PATH => serde_json::from_slice::<GenerateRequest>(body)
            .map_err(bad)
            .and_then(|req| {
                let cfg = req.config().map_err(map_error)?;
                backend.generate(&req.tokens, &cfg).map_err(map_error)
            })
            .map(|t| serde_json::to_string(&TokensBody { tokens: t.to_vec() }).unwrap()),
        _ => Err((404, error_json("not_found", url.to_string()))),
    };
    match result {
        Ok(json) => (200, json),
        Err(e) => e,
    }
}
