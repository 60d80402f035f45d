//! Minimal in-process HTTP server for wire tests: captures requests,
//! serves scripted or routed responses, and tracks peak concurrency.
//! Listens on 127.0.0.1 only; no external network is ever touched.
//!
//! Shared by several test binaries; each uses only part of the surface.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

#[derive(Debug, Clone)]
pub struct CapturedRequest {
    pub path: String,
    /// Header names lowercased.
    pub headers: BTreeMap<String, String>,
    pub body: Vec<u8>,
}

impl CapturedRequest {
    pub fn body_text(&self) -> &str {
        std::str::from_utf8(&self.body).expect("request body is UTF-8")
    }
}

pub struct MockResponse {
    pub status: u16,
    pub body: String,
    pub delay: Duration,
}

impl MockResponse {
    /// A well-formed chat completion whose message carries `content`.
    pub fn chat(content: &str) -> Self {
        MockResponse {
            status: 200,
            body: chat_body(content),
            delay: Duration::ZERO,
        }
    }

    pub fn status(status: u16, body: &str) -> Self {
        MockResponse {
            status,
            body: body.to_string(),
            delay: Duration::ZERO,
        }
    }

    pub fn with_delay(mut self, delay: Duration) -> Self {
        self.delay = delay;
        self
    }
}

pub fn chat_body(content: &str) -> String {
    serde_json::to_string(&serde_json::json!({
        "choices": [{"message": {"content": content}}]
    }))
    .expect("chat body serializes")
}

pub struct MockServer {
    pub url: String,
    requests: Arc<Mutex<Vec<CapturedRequest>>>,
    peak: Arc<AtomicUsize>,
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

impl MockServer {
    /// Serves `script` in request order; requests past the end get a 500.
    pub fn scripted(script: Vec<MockResponse>) -> Self {
        let script = Mutex::new(script.into_iter().map(Some).collect::<Vec<_>>());
        Self::start(move |idx, _req| {
            script
                .lock()
                .expect("script lock")
                .get_mut(idx)
                .and_then(Option::take)
                .unwrap_or_else(|| MockResponse::status(500, "script exhausted"))
        })
    }

    /// Routes each request through `handler` (index, request) -> response.
    pub fn start(
        handler: impl Fn(usize, &CapturedRequest) -> MockResponse + Send + Sync + 'static,
    ) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind loopback");
        let addr = listener.local_addr().expect("local addr");
        listener
            .set_nonblocking(true)
            .expect("nonblocking listener");

        let requests = Arc::new(Mutex::new(Vec::new()));
        let peak = Arc::new(AtomicUsize::new(0));
        let stop = Arc::new(AtomicBool::new(false));
        let handler: Arc<dyn Fn(usize, &CapturedRequest) -> MockResponse + Send + Sync> =
            Arc::new(handler);

        let handle = {
            let requests = Arc::clone(&requests);
            let peak = Arc::clone(&peak);
            let stop = Arc::clone(&stop);
            let active = Arc::new(AtomicUsize::new(0));
            let counter = Arc::new(AtomicUsize::new(0));
            thread::spawn(move || {
                let mut workers = Vec::new();
                loop {
                    match listener.accept() {
                        Ok((stream, _)) => {
                            let requests = Arc::clone(&requests);
                            let handler = Arc::clone(&handler);
                            let active = Arc::clone(&active);
                            let peak = Arc::clone(&peak);
                            let counter = Arc::clone(&counter);
                            workers.push(thread::spawn(move || {
                                handle_connection(
                                    stream, &requests, &*handler, &active, &peak, &counter,
                                );
                            }));
                        }
                        Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                            if stop.load(Ordering::SeqCst) {
                                break;
                            }
                            thread::sleep(Duration::from_millis(2));
                        }
                        Err(_) => break,
                    }
                }
                for worker in workers {
                    let _ = worker.join();
                }
            })
        };

        MockServer {
            url: format!("http://{addr}"),
            requests,
            peak,
            stop,
            handle: Some(handle),
        }
    }

    pub fn requests(&self) -> Vec<CapturedRequest> {
        self.requests.lock().expect("requests lock").clone()
    }

    pub fn request_count(&self) -> usize {
        self.requests.lock().expect("requests lock").len()
    }

    /// Highest number of requests that were in flight at once.
    pub fn peak_concurrency(&self) -> usize {
        self.peak.load(Ordering::SeqCst)
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(handle) = self.handle.take() {
            let _ = handle.join();
        }
    }
}

fn handle_connection(
    stream: TcpStream,
    requests: &Mutex<Vec<CapturedRequest>>,
    handler: &(dyn Fn(usize, &CapturedRequest) -> MockResponse + Send + Sync),
    active: &AtomicUsize,
    peak: &AtomicUsize,
    counter: &AtomicUsize,
) {
    stream.set_nonblocking(false).expect("blocking stream");
    stream
        .set_read_timeout(Some(Duration::from_secs(10)))
        .expect("read timeout");
    let mut reader = BufReader::new(stream.try_clone().expect("clone stream"));

    let mut request_line = String::new();
    if reader.read_line(&mut request_line).is_err() || request_line.is_empty() {
        return;
    }
    let path = request_line
        .split_whitespace()
        .nth(1)
        .unwrap_or("")
        .to_string();

    let mut headers = BTreeMap::new();
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).is_err() {
            return;
        }
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some((name, value)) = line.split_once(':') {
            headers.insert(name.trim().to_ascii_lowercase(), value.trim().to_string());
        }
    }

    let length: usize = headers
        .get("content-length")
        .and_then(|v| v.parse().ok())
        .unwrap_or(0);
    let mut body = vec![0u8; length];
    if reader.read_exact(&mut body).is_err() {
        return;
    }

    let in_flight = active.fetch_add(1, Ordering::SeqCst) + 1;
    peak.fetch_max(in_flight, Ordering::SeqCst);

    let captured = CapturedRequest {
        path,
        headers,
        body,
    };
    let index = counter.fetch_add(1, Ordering::SeqCst);
    let response = handler(index, &captured);
    requests.lock().expect("requests lock").push(captured);

    thread::sleep(response.delay);
    active.fetch_sub(1, Ordering::SeqCst);

    let reason = match response.status {
        200 => "OK",
        400 => "Bad Request",
        429 => "Too Many Requests",
        500 => "Internal Server Error",
        503 => "Service Unavailable",
        _ => "Status",
    };
    let mut stream = reader.into_inner();
    let payload = format!(
        "HTTP/1.1 {} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
        response.status,
        response.body.len(),
        response.body
    );
    let _ = stream.write_all(payload.as_bytes());
    let _ = stream.flush();
}
