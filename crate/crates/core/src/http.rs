//! Blocking JSON-over-HTTP transport shared by the remote scorer and the chat
//! client: per-request timeout, exponential backoff on transient failures, and
//! a bound on concurrent in-flight requests.

use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

/// A credential that never appears in `Debug` output or logs.
#[derive(Clone, PartialEq, Eq)]
pub struct Secret(String);

impl Secret {
    pub fn new(s: impl Into<String>) -> Self {
        Self(s.into())
    }

    pub fn expose(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for Secret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Secret(***)")
    }
}

#[derive(Debug, Clone)]
pub struct HttpConfig {
    pub timeout: Duration,
    /// Retries after the first attempt.
    pub retries: u32,
    pub backoff: Duration,
    pub max_backoff: Duration,
    pub max_in_flight: usize,
    pub auth: Option<Secret>,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            timeout: Duration::from_secs(60),
            retries: 3,
            backoff: Duration::from_millis(200),
            max_backoff: Duration::from_secs(10),
            max_in_flight: 8,
            auth: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("request to {endpoint} timed out")]
    Timeout { endpoint: String },
    #[error("cannot reach {endpoint}: {message}")]
    Connection { endpoint: String, message: String },
    #[error("{endpoint} answered {status}: {message}")]
    Status {
        endpoint: String,
        status: u16,
        message: String,
    },
    #[error("malformed response from {endpoint}: {message}")]
    Protocol { endpoint: String, message: String },
}

impl TransportError {
    fn retryable(&self) -> bool {
        match self {
            TransportError::Timeout { .. } | TransportError::Connection { .. } => true,
            TransportError::Status { status, .. } => matches!(status, 429 | 500 | 502 | 503 | 504),
            TransportError::Protocol { .. } => false,
        }
    }
}

struct Limiter {
    used: Mutex<usize>,
    cv: Condvar,
    max: usize,
}

struct Permit<'a>(&'a Limiter);

impl Limiter {
    fn acquire(&self) -> Permit<'_> {
        let mut used = self.used.lock().unwrap();
        while *used >= self.max {
            used = self.cv.wait(used).unwrap();
        }
        *used += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.used.lock().unwrap() -= 1;
        self.0.cv.notify_one();
    }
}

pub struct HttpTransport {
    agent: ureq::Agent,
    base: String,
    config: HttpConfig,
    limiter: Limiter,
    requests: AtomicU64,
    retries: AtomicU64,
}

impl HttpTransport {
    pub fn new(base: &str, config: HttpConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            agent,
            base: base.trim_end_matches('/').to_owned(),
            limiter: Limiter {
                used: Mutex::new(0),
                cv: Condvar::new(),
                max: config.max_in_flight.max(1),
            },
            config,
            requests: AtomicU64::new(0),
            retries: AtomicU64::new(0),
        }
    }

    pub fn base(&self) -> &str {
        &self.base
    }

    /// Attempts sent, retries included.
    pub fn requests(&self) -> u64 {
        self.requests.load(Ordering::Relaxed)
    }

    pub fn retries(&self) -> u64 {
        self.retries.load(Ordering::Relaxed)
    }

    pub fn url(&self, path: &str) -> String {
        if path.is_empty() {
            self.base.clone()
        } else {
            format!("{}{}", self.base, path)
        }
    }

    pub fn post_json<B: Serialize, T: DeserializeOwned>(
        &self,
        path: &str,
        body: &B,
    ) -> Result<T, TransportError> {
        self.with_retries(&self.url(path), |url| {
            let mut req = self.agent.post(url).header("Content-Type", "application/json");
            if let Some(auth) = &self.config.auth {
                req = req.header("Authorization", &format!("Bearer {}", auth.expose()));
            }
            req.send_json(body)
        })
    }

    pub fn get_json<T: DeserializeOwned>(&self, path: &str) -> Result<T, TransportError> {
        self.with_retries(&self.url(path), |url| {
            let mut req = self.agent.get(url);
            if let Some(auth) = &self.config.auth {
                req = req.header("Authorization", &format!("Bearer {}", auth.expose()));
            }
            req.call()
        })
    }

    fn with_retries<T: DeserializeOwned>(
        &self,
        url: &str,
        send: impl Fn(&str) -> Result<ureq::http::Response<ureq::Body>, ureq::Error>,
    ) -> Result<T, TransportError> {
        let mut attempt = 0u32;
        loop {
            let result = {
                let _permit = self.limiter.acquire();
                self.requests.fetch_add(1, Ordering::Relaxed);
                self.once(url, &send)
            };
            match result {
                Err(e) if e.retryable() && attempt < self.config.retries => {
                    let wait = self
                        .config
                        .backoff
                        .saturating_mul(1u32 << attempt.min(16))
                        .min(self.config.max_backoff);
                    log::debug!("retrying {url} in {wait:?}: {e}");
                    std::thread::sleep(wait);
                    attempt += 1;
                    self.retries.fetch_add(1, Ordering::Relaxed);
                }
                other => return other,
            }
        }
    }

    fn once<T: DeserializeOwned>(
        &self,
        url: &str,
        send: &impl Fn(&str) -> Result<ureq::http::Response<ureq::Body>, ureq::Error>,
    ) -> Result<T, TransportError> {
        let endpoint = url.to_owned();
        let mut resp = send(url).map_err(|e| match e {
            ureq::Error::Timeout(_) => TransportError::Timeout {
                endpoint: endpoint.clone(),
            },
            ureq::Error::Io(ref io) if io.kind() == std::io::ErrorKind::TimedOut => {
                TransportError::Timeout {
                    endpoint: endpoint.clone(),
                }
            }
            other => TransportError::Connection {
                endpoint: endpoint.clone(),
                message: other.to_string(),
            },
        })?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| match e {
                ureq::Error::Timeout(_) => TransportError::Timeout {
                    endpoint: endpoint.clone(),
                },
                other => TransportError::Connection {
                    endpoint: endpoint.clone(),
                    message: other.to_string(),
                },
            })?;
        if !(200..300).contains(&status) {
            #[derive(serde::Deserialize)]
            struct ErrorBody {
                error: String,
            }
            let message = serde_json::from_str::<ErrorBody>(&text)
                .map(|b| b.error)
                .unwrap_or(text);
            return Err(TransportError::Status {
                endpoint,
                status,
                message,
            });
        }
        serde_json::from_str(&text).map_err(|e| TransportError::Protocol {
            endpoint,
            message: e.to_string(),
        })
    }
}

/// A request seen by [`ScriptedServer`].
#[derive(Debug, Clone)]
pub struct SeenRequest {
    pub method: String,
    pub path: String,
    pub headers: Vec<(String, String)>,
    pub body: String,
}

type Handler = dyn Fn(&SeenRequest) -> (u16, String) + Send + Sync;

/// Minimal single-threaded HTTP/1.1 server answering from a closure, for
/// offline tests of the remote scorer and chat client.
pub struct ScriptedServer {
    addr: String,
    seen: Arc<Mutex<Vec<SeenRequest>>>,
    handle: Option<JoinHandle<()>>,
    stop: Arc<std::sync::atomic::AtomicBool>,
}

impl ScriptedServer {
    pub fn start<F>(handler: F) -> std::io::Result<Self>
    where
        F: Fn(&SeenRequest) -> (u16, String) + Send + Sync + 'static,
    {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        listener.set_nonblocking(true)?;
        let addr = format!("http://{}", listener.local_addr()?);
        let seen = Arc::new(Mutex::new(Vec::new()));
        let stop = Arc::new(std::sync::atomic::AtomicBool::new(false));
        let handler: Arc<Handler> = Arc::new(handler);
        let handle = {
            let seen = seen.clone();
            let stop = stop.clone();
            std::thread::spawn(move || {
                while !stop.load(Ordering::Relaxed) {
                    match listener.accept() {
                        Ok((stream, _)) => {
                            let _ = serve_one(stream, &*handler, &seen);
                        }
                        Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                            std::thread::sleep(Duration::from_millis(2));
                        }
                        Err(_) => break,
                    }
                }
            })
        };
        Ok(Self {
            addr,
            seen,
            handle: Some(handle),
            stop,
        })
    }

    /// Base URL, e.g. `http://127.0.0.1:41234`.
    pub fn url(&self) -> &str {
        &self.addr
    }

    pub fn requests(&self) -> Vec<SeenRequest> {
        self.seen.lock().unwrap().clone()
    }
}

impl Drop for ScriptedServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn serve_one(
    stream: TcpStream,
    handler: &Handler,
    seen: &Mutex<Vec<SeenRequest>>,
) -> std::io::Result<()> {
    stream.set_nonblocking(false)?;
    stream.set_read_timeout(Some(Duration::from_secs(5)))?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut line = String::new();
    reader.read_line(&mut line)?;
    let mut parts = line.split_whitespace();
    let method = parts.next().unwrap_or_default().to_owned();
    let path = parts.next().unwrap_or_default().to_owned();
    let mut headers = Vec::new();
    let mut length = 0usize;
    loop {
        let mut h = String::new();
        reader.read_line(&mut h)?;
        let h = h.trim_end();
        if h.is_empty() {
            break;
        }
        if let Some((k, v)) = h.split_once(':') {
            let (k, v) = (k.trim().to_owned(), v.trim().to_owned());
            if k.eq_ignore_ascii_case("content-length") {
                length = v.parse().unwrap_or(0);
            }
            headers.push((k, v));
        }
    }
    let mut body = vec![0u8; length];
    reader.read_exact(&mut body)?;
    let req = SeenRequest {
        method,
        path,
        headers,
        body: String::from_utf8_lossy(&body).into_owned(),
    };
    let (status, body) = handler(&req);
    seen.lock().unwrap().push(req);
    let mut stream = stream;
    write!(
        stream,
        "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    )?;
    stream.flush()
}
