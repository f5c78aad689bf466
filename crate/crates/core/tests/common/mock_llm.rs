//! A minimal HTTP/1.1 chat endpoint on a local port.

use std::collections::VecDeque;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;

use serde_json::{json, Value};

/// A received request: headers (lowercased names) and the parsed body.
#[derive(Clone, Debug)]
pub struct Seen {
    pub headers: Vec<(String, String)>,
    pub body: Value,
}

pub struct MockServer {
    pub url: String,
    pub seen: Arc<Mutex<Vec<Seen>>>,
}

/// Serves requests until the process exits. `respond` maps a request body
/// to `(status, reply text)`; the text is wrapped as a chat completion.
pub fn serve<F>(respond: F) -> MockServer
where
    F: Fn(&Value) -> (u16, String) + Send + Sync + 'static,
{
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = Arc::clone(&seen);
    let respond = Arc::new(respond);
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let log = Arc::clone(&log);
            let respond = Arc::clone(&respond);
            thread::spawn(move || {
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 {
                    return;
                }
                let mut headers = Vec::new();
                let mut length = 0;
                loop {
                    line.clear();
                    reader.read_line(&mut line).unwrap();
                    let l = line.trim_end();
                    if l.is_empty() {
                        break;
                    }
                    if let Some((k, v)) = l.split_once(':') {
                        let (k, v) = (k.trim().to_ascii_lowercase(), v.trim().to_string());
                        if k == "content-length" {
                            length = v.parse().unwrap();
                        }
                        headers.push((k, v));
                    }
                }
                let mut body = vec![0; length];
                reader.read_exact(&mut body).unwrap();
                let body: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
                let (status, text) = respond(&body);
                log.lock().unwrap().push(Seen { headers, body });
                let payload = if status == 200 {
                    json!({"choices": [{"message": {"role": "assistant", "content": text}}]}).to_string()
                } else {
                    json!({"error": text}).to_string()
                };
                let reason = if status == 200 { "OK" } else { "Error" };
                let _ = write!(
                    stream,
                    "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
                    payload.len()
                );
            });
        }
    });
    MockServer { url, seen }
}

/// The user message of a chat request.
pub fn user_text(body: &Value) -> String {
    body["messages"][1]["content"].as_str().unwrap_or_default().to_string()
}

/// Replies with the queued statuses first, then `reply` forever.
pub fn flaky(failures: Vec<u16>, reply: &str) -> MockServer {
    let queue = Mutex::new(VecDeque::from(failures));
    let reply = reply.to_string();
    serve(move |_| match queue.lock().unwrap().pop_front() {
        Some(status) => (status, "unavailable".into()),
        None => (200, reply.clone()),
    })
}
