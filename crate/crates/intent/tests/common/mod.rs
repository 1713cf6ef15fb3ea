//! Local HTTP stub standing in for a chat-completion endpoint.
#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use intent::llm::ModelEndpoint;

/// What the stub does with one request: status code and body.
pub type Handler = dyn Fn(usize, &str) -> (u16, String) + Send + Sync;

pub struct Stub {
    pub url: String,
    requests: Arc<AtomicUsize>,
    max_in_flight: Arc<AtomicUsize>,
}

impl Stub {
    /// Serve `handler(request_index, prompt)` on a random local port. Each
    /// response is held for `delay` so concurrent requests overlap.
    pub fn start(delay: Duration, handler: impl Fn(usize, &str) -> (u16, String) + Send + Sync + 'static) -> Stub {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1", listener.local_addr().unwrap());
        let requests = Arc::new(AtomicUsize::new(0));
        let in_flight = Arc::new(AtomicUsize::new(0));
        let max_in_flight = Arc::new(AtomicUsize::new(0));
        let handler: Arc<Handler> = Arc::new(handler);
        let (r, i, m) = (requests.clone(), in_flight.clone(), max_in_flight.clone());
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { continue };
                let (r, i, m, h) = (r.clone(), i.clone(), m.clone(), handler.clone());
                thread::spawn(move || {
                    let now = i.fetch_add(1, Ordering::SeqCst) + 1;
                    m.fetch_max(now, Ordering::SeqCst);
                    serve(stream, &r, &*h, delay);
                    i.fetch_sub(1, Ordering::SeqCst);
                });
            }
        });
        Stub { url, requests, max_in_flight }
    }

    pub fn requests(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }

    pub fn max_in_flight(&self) -> usize {
        self.max_in_flight.load(Ordering::SeqCst)
    }

    pub fn endpoint(&self) -> ModelEndpoint {
        ModelEndpoint {
            backoff_base_ms: 5,
            backoff_max_ms: 20,
            timeout_secs: 10.0,
            ..ModelEndpoint::new(&self.url, "stub-model")
        }
    }
}

fn serve(stream: TcpStream, counter: &AtomicUsize, handler: &Handler, delay: Duration) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut content_length = 0usize;
    let mut line = String::new();
    loop {
        line.clear();
        if reader.read_line(&mut line).unwrap_or(0) == 0 {
            return;
        }
        let l = line.trim_end();
        if l.is_empty() {
            break;
        }
        if let Some((k, v)) = l.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                content_length = v.trim().parse().unwrap_or(0);
            }
        }
    }
    let mut body = vec![0u8; content_length];
    if reader.read_exact(&mut body).is_err() {
        return;
    }
    let request: serde_json::Value = serde_json::from_slice(&body).unwrap_or_default();
    let prompt = request["messages"][0]["content"].as_str().unwrap_or_default().to_string();
    let index = counter.fetch_add(1, Ordering::SeqCst);
    thread::sleep(delay);
    let (status, body) = handler(index, &prompt);
    let mut stream = stream;
    let _ = write!(
        stream,
        "HTTP/1.1 {status} Stub\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    );
    let _ = stream.flush();
}

/// A successful completion body carrying `text`.
pub fn completion(text: &str) -> String {
    serde_json::json!({
        "choices": [{"index": 0, "message": {"role": "assistant", "content": text}}],
        "usage": {"prompt_tokens": 100, "completion_tokens": 3}
    })
    .to_string()
}

/// The query text embedded in a rendered prompt.
pub fn query_of(prompt: &str) -> String {
    let after = prompt.split("## Query\n").nth(1).unwrap_or_default();
    after.lines().next().unwrap_or_default().trim_matches('"').to_string()
}
