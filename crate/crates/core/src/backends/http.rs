//! HTTP backend: JSON over POST to /v1/{chat,detect_segment,point,segment_points}.
//!
//! Retries transport failures and 5xx responses with exponential backoff up to
//! a configurable attempt limit, then surfaces a hard error carrying the
//! attempt log. A semaphore caps the number of in-flight requests across all
//! worker threads.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::digest::BackendRequest;
use super::{
    BackendError, ChatRequest, ChatResponse, DetectSegmentRequest, DetectSegmentResponse,
    InferenceBackend, PointRequest, PointResponse, SegmentPointsRequest, SegmentPointsResponse,
};

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct HttpConfig {
    pub base_url: String,
    /// Per-request timeout in seconds.
    pub timeout_secs: u64,
    /// Total attempts per request (first try included).
    pub max_retries: u32,
    /// Maximum concurrent requests across all workers.
    pub max_in_flight: usize,
    /// Base backoff delay; attempt n sleeps base * 2^(n-1).
    pub backoff_ms: u64,
}

impl Default for HttpConfig {
    fn default() -> Self {
        HttpConfig {
            base_url: "http://127.0.0.1:8080".into(),
            timeout_secs: 120,
            max_retries: 3,
            max_in_flight: 8,
            backoff_ms: 250,
        }
    }
}

/// Counting semaphore on std primitives; ureq is synchronous so this is all
/// the coordination the in-flight cap needs.
struct Semaphore {
    permits: Mutex<usize>,
    available: Condvar,
}

impl Semaphore {
    fn new(permits: usize) -> Self {
        Semaphore {
            permits: Mutex::new(permits.max(1)),
            available: Condvar::new(),
        }
    }

    fn acquire(&self) -> SemaphoreGuard<'_> {
        let mut permits = self.permits.lock().expect("semaphore poisoned");
        while *permits == 0 {
            permits = self.available.wait(permits).expect("semaphore poisoned");
        }
        *permits -= 1;
        SemaphoreGuard { semaphore: self }
    }
}

struct SemaphoreGuard<'a> {
    semaphore: &'a Semaphore,
}

impl Drop for SemaphoreGuard<'_> {
    fn drop(&mut self) {
        let mut permits = self.semaphore.permits.lock().expect("semaphore poisoned");
        *permits += 1;
        self.semaphore.available.notify_one();
    }
}

pub struct HttpBackend {
    agent: ureq::Agent,
    config: HttpConfig,
    limiter: Semaphore,
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        let limiter = Semaphore::new(config.max_in_flight);
        HttpBackend {
            agent,
            config,
            limiter,
        }
    }

    pub fn base_url(&self) -> &str {
        &self.config.base_url
    }

    fn call<Req, Resp>(&self, req: &Req) -> Result<Resp, BackendError>
    where
        Req: BackendRequest + Serialize,
        Resp: DeserializeOwned,
    {
        let _permit = self.limiter.acquire();
        let url = format!(
            "{}{}",
            self.config.base_url.trim_end_matches('/'),
            Req::ENDPOINT
        );
        let attempts = self.config.max_retries.max(1);
        let mut log = Vec::new();
        for attempt in 1..=attempts {
            match self.agent.post(&url).send_json(req) {
                Ok(mut response) => {
                    let status = response.status().as_u16();
                    if (200..300).contains(&status) {
                        return response.body_mut().read_json::<Resp>().map_err(|e| {
                            BackendError::InvalidResponse(format!(
                                "{} returned undecodable body: {e}",
                                Req::ENDPOINT
                            ))
                        });
                    }
                    log.push(format!("attempt {attempt}: http {status}"));
                    if !(500..600).contains(&status) {
                        // client errors will not heal on retry
                        break;
                    }
                }
                Err(e) => log.push(format!("attempt {attempt}: {e}")),
            }
            if attempt < attempts {
                let delay = self.config.backoff_ms.saturating_mul(1 << (attempt - 1));
                std::thread::sleep(Duration::from_millis(delay));
            }
        }
        Err(BackendError::Transport {
            attempts: log.len() as u32,
            log: log.join("; "),
        })
    }
}

impl InferenceBackend for HttpBackend {
    fn chat(&self, req: &ChatRequest) -> Result<ChatResponse, BackendError> {
        self.call(req)
    }

    fn detect_segment(
        &self,
        req: &DetectSegmentRequest,
    ) -> Result<DetectSegmentResponse, BackendError> {
        self.call(req)
    }

    fn point(&self, req: &PointRequest) -> Result<PointResponse, BackendError> {
        self.call(req)
    }

    fn segment_points(
        &self,
        req: &SegmentPointsRequest,
    ) -> Result<SegmentPointsResponse, BackendError> {
        self.call(req)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    /// Minimal scripted HTTP server: each connection gets the next scripted
    /// status; 200 responses carry `body`.
    struct TestServer {
        port: u16,
        hits: Arc<AtomicUsize>,
        peak_in_flight: Arc<AtomicUsize>,
    }

    impl TestServer {
        fn start(script: Vec<u16>, body: &'static str, delay: Duration) -> Self {
            let listener = TcpListener::bind("127.0.0.1:0").unwrap();
            let port = listener.local_addr().unwrap().port();
            let hits = Arc::new(AtomicUsize::new(0));
            let peak = Arc::new(AtomicUsize::new(0));
            let in_flight = Arc::new(AtomicUsize::new(0));
            let hits_bg = hits.clone();
            let peak_bg = peak.clone();
            std::thread::spawn(move || {
                let mut responses = script.into_iter();
                for stream in listener.incoming() {
                    let Ok(stream) = stream else { break };
                    let status = responses.next().unwrap_or(200);
                    let hits = hits_bg.clone();
                    let peak = peak_bg.clone();
                    let in_flight = in_flight.clone();
                    std::thread::spawn(move || {
                        let current = in_flight.fetch_add(1, Ordering::SeqCst) + 1;
                        peak.fetch_max(current, Ordering::SeqCst);
                        hits.fetch_add(1, Ordering::SeqCst);
                        handle(stream, status, body, delay);
                        in_flight.fetch_sub(1, Ordering::SeqCst);
                    });
                }
            });
            TestServer {
                port,
                hits,
                peak_in_flight: peak,
            }
        }

        fn url(&self) -> String {
            format!("http://127.0.0.1:{}", self.port)
        }
    }

    fn handle(stream: std::net::TcpStream, status: u16, body: &str, delay: Duration) {
        let mut reader = BufReader::new(stream);
        let mut content_length = 0usize;
        let mut line = String::new();
        loop {
            line.clear();
            if reader.read_line(&mut line).is_err() || line == "\r\n" || line.is_empty() {
                break;
            }
            if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                content_length = v.trim().parse().unwrap_or(0);
            }
        }
        let mut payload = vec![0u8; content_length];
        let _ = reader.read_exact(&mut payload);
        std::thread::sleep(delay);
        let mut stream = reader.into_inner();
        let reason = if status == 200 { "OK" } else { "ERR" };
        let response = format!(
            "HTTP/1.1 {status} {reason}\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
            body.len()
        );
        let _ = stream.write_all(response.as_bytes());
    }

    fn config(url: String) -> HttpConfig {
        HttpConfig {
            base_url: url,
            timeout_secs: 5,
            max_retries: 3,
            max_in_flight: 8,
            backoff_ms: 1,
        }
    }

    #[test]
    fn recovers_after_transient_500s() {
        let server = TestServer::start(vec![500, 500, 200], r#"{"text":"fine"}"#, Duration::ZERO);
        let backend = HttpBackend::new(config(server.url()));
        let resp = backend
            .chat(&ChatRequest {
                system: "s".into(),
                user: "u".into(),
                temperature: 0.0,
            })
            .unwrap();
        assert_eq!(resp.text, "fine");
        assert_eq!(server.hits.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn three_500s_surface_a_transport_error_with_attempt_log() {
        let server = TestServer::start(vec![500, 500, 500], "{}", Duration::ZERO);
        let backend = HttpBackend::new(config(server.url()));
        let err = backend
            .chat(&ChatRequest {
                system: "s".into(),
                user: "u".into(),
                temperature: 0.0,
            })
            .unwrap_err();
        match err {
            BackendError::Transport { attempts, log } => {
                assert_eq!(attempts, 3);
                assert!(log.contains("attempt 1: http 500"), "{log}");
                assert!(log.contains("attempt 3: http 500"), "{log}");
            }
            other => panic!("expected transport error, got {other}"),
        }
    }

    #[test]
    fn client_errors_do_not_retry() {
        let server = TestServer::start(vec![400, 200], "{}", Duration::ZERO);
        let backend = HttpBackend::new(config(server.url()));
        let err = backend
            .chat(&ChatRequest {
                system: "s".into(),
                user: "u".into(),
                temperature: 0.0,
            })
            .unwrap_err();
        assert!(
            matches!(err, BackendError::Transport { attempts: 1, .. }),
            "{err}"
        );
        assert_eq!(server.hits.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn record_mode_writes_replayable_fixtures() {
        use crate::backends::{FixtureBackend, RecordingBackend};
        let server = TestServer::start(
            Vec::new(),
            r#"{"text":"{\"recorded\": true}"}"#,
            Duration::ZERO,
        );
        let dir = tempfile::tempdir().unwrap();
        let recorder = RecordingBackend::new(HttpBackend::new(config(server.url())), dir.path());
        let req = ChatRequest {
            system: "s".into(),
            user: "u".into(),
            temperature: 0.0,
        };
        let live = recorder.chat(&req).unwrap();

        let replay = FixtureBackend::new(dir.path());
        let replayed = replay.chat(&req).unwrap();
        assert_eq!(live, replayed);
        assert_eq!(
            server.hits.load(Ordering::SeqCst),
            1,
            "replay must not hit the network"
        );
    }

    #[test]
    fn in_flight_limit_is_enforced() {
        let server = TestServer::start(Vec::new(), r#"{"text":"ok"}"#, Duration::from_millis(40));
        let mut cfg = config(server.url());
        cfg.max_in_flight = 2;
        let backend = Arc::new(HttpBackend::new(cfg));
        let mut handles = Vec::new();
        for _ in 0..8 {
            let backend = backend.clone();
            handles.push(std::thread::spawn(move || {
                backend
                    .chat(&ChatRequest {
                        system: "s".into(),
                        user: "u".into(),
                        temperature: 0.0,
                    })
                    .unwrap();
            }));
        }
        for handle in handles {
            handle.join().unwrap();
        }
        assert_eq!(server.hits.load(Ordering::SeqCst), 8);
        assert!(
            server.peak_in_flight.load(Ordering::SeqCst) <= 2,
            "peak {} exceeded the in-flight cap",
            server.peak_in_flight.load(Ordering::SeqCst)
        );
    }
}
