//! Minimal HTTP/1.1 stub server for exercising the remote clients against
//! scripted responses, including delays (for timeouts) and error statuses.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

pub struct StubResponse {
    pub status: u16,
    pub body: String,
    /// Sleep before answering; longer than the client timeout simulates a
    /// hung upstream.
    pub delay: Option<Duration>,
}

impl StubResponse {
    pub fn json(body: impl Into<String>) -> StubResponse {
        StubResponse {
            status: 200,
            body: body.into(),
            delay: None,
        }
    }

    pub fn status(status: u16, body: impl Into<String>) -> StubResponse {
        StubResponse {
            status,
            body: body.into(),
            delay: None,
        }
    }
}

// Not every test binary inspects every field.
#[allow(dead_code)]
pub struct ReceivedRequest {
    pub path: String,
    pub body: String,
    pub has_auth: bool,
}

type Handler = dyn Fn(usize, &ReceivedRequest) -> StubResponse + Send + Sync;

pub struct StubServer {
    addr: std::net::SocketAddr,
    hits: Arc<AtomicUsize>,
    shutdown: Arc<AtomicBool>,
    handle: Option<std::thread::JoinHandle<()>>,
}

impl StubServer {
    /// Starts a server on an ephemeral port. The handler receives the
    /// 0-based request index (global across connections) and the parsed
    /// request.
    pub fn start<F>(handler: F) -> StubServer
    where
        F: Fn(usize, &ReceivedRequest) -> StubResponse + Send + Sync + 'static,
    {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind stub server");
        let addr = listener.local_addr().unwrap();
        let hits = Arc::new(AtomicUsize::new(0));
        let shutdown = Arc::new(AtomicBool::new(false));
        let handler: Arc<Handler> = Arc::new(handler);
        let thread_hits = hits.clone();
        let thread_shutdown = shutdown.clone();
        let handle = std::thread::spawn(move || {
            for stream in listener.incoming() {
                if thread_shutdown.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                let handler = handler.clone();
                let hits = thread_hits.clone();
                std::thread::spawn(move || handle_connection(stream, &*handler, &hits));
            }
        });
        StubServer {
            addr,
            hits,
            shutdown,
            handle: Some(handle),
        }
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        // Wake the accept loop so it observes the flag.
        let _ = TcpStream::connect(self.addr);
        if let Some(handle) = self.handle.take() {
            let _ = handle.join();
        }
    }
}

fn handle_connection(stream: TcpStream, handler: &Handler, hits: &AtomicUsize) {
    let mut reader = BufReader::new(stream);
    let mut request_line = String::new();
    if reader.read_line(&mut request_line).is_err() || request_line.is_empty() {
        return;
    }
    let path = request_line
        .split_whitespace()
        .nth(1)
        .unwrap_or("/")
        .to_string();
    let mut content_length = 0usize;
    let mut has_auth = false;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).is_err() {
            return;
        }
        let trimmed = line.trim();
        if trimmed.is_empty() {
            break;
        }
        if let Some((name, value)) = trimmed.split_once(':') {
            let name = name.trim().to_ascii_lowercase();
            if name == "content-length" {
                content_length = value.trim().parse().unwrap_or(0);
            } else if name == "authorization" {
                has_auth = !value.trim().is_empty();
            }
        }
    }
    let mut body = vec![0u8; content_length];
    if reader.read_exact(&mut body).is_err() {
        return;
    }
    let request = ReceivedRequest {
        path,
        body: String::from_utf8_lossy(&body).into_owned(),
        has_auth,
    };
    let index = hits.fetch_add(1, Ordering::SeqCst);
    let response = handler(index, &request);
    if let Some(delay) = response.delay {
        std::thread::sleep(delay);
    }
    let payload = format!(
        "HTTP/1.1 {} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
        response.status,
        response.body.len(),
        response.body
    );
    let mut stream = reader.into_inner();
    let _ = stream.write_all(payload.as_bytes());
    let _ = stream.flush();
}
