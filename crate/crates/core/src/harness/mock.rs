//! Local chat-completions endpoint driven by a Rust closure.

use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;

use base64::Engine;
use serde_json::{json, Value};

use crate::error::{Error, Result};

/// A parsed incoming chat request.
#[derive(Debug, Clone)]
pub struct ChatRequest {
    pub model: String,
    /// Decoded image payloads (PNG bytes), in request order.
    pub images: Vec<Vec<u8>>,
    pub prompt: String,
}

#[derive(Debug, Clone)]
pub struct MockReply {
    pub status: u16,
    pub content: String,
}

impl MockReply {
    pub fn ok(content: impl Into<String>) -> Self {
        MockReply { status: 200, content: content.into() }
    }

    pub fn status(status: u16) -> Self {
        MockReply { status, content: String::new() }
    }
}

pub type Handler = Arc<dyn Fn(&ChatRequest) -> MockReply + Send + Sync>;

pub fn parse_chat_request(body: &Value) -> Result<ChatRequest> {
    let bad = |m: &str| Error::Endpoint(format!("malformed chat request: {m}"));
    let model = body.get("model").and_then(Value::as_str).unwrap_or_default().to_string();
    let content = body
        .pointer("/messages/0/content")
        .and_then(Value::as_array)
        .ok_or_else(|| bad("missing messages[0].content"))?;
    let mut images = Vec::new();
    let mut prompt = String::new();
    for part in content {
        match part.get("type").and_then(Value::as_str) {
            Some("image_url") => {
                let url = part
                    .pointer("/image_url/url")
                    .and_then(Value::as_str)
                    .ok_or_else(|| bad("image part without url"))?;
                let (_, b64) = url.split_once(";base64,").ok_or_else(|| bad("image is not a base64 data url"))?;
                images.push(
                    base64::engine::general_purpose::STANDARD
                        .decode(b64)
                        .map_err(|_| bad("invalid base64"))?,
                );
            }
            Some("text") => prompt.push_str(part.get("text").and_then(Value::as_str).unwrap_or_default()),
            _ => return Err(bad("unknown content part")),
        }
    }
    Ok(ChatRequest { model, images, prompt })
}

pub fn completion_body(model: &str, content: &str) -> Value {
    json!({
        "id": "mock-completion",
        "object": "chat.completion",
        "model": model,
        "choices": [{
            "index": 0,
            "message": {"role": "assistant", "content": content},
            "finish_reason": "stop",
        }],
    })
}

pub struct MockServer {
    server: Arc<tiny_http::Server>,
    addr: SocketAddr,
    workers: Vec<JoinHandle<()>>,
}

impl MockServer {
    /// Binds `127.0.0.1:port` (0 picks a free port) and serves on `threads` workers.
    pub fn start(port: u16, threads: usize, handler: Handler) -> Result<Self> {
        Self::bind(&format!("127.0.0.1:{port}"), threads, handler)
    }

    pub fn bind(addr: &str, threads: usize, handler: Handler) -> Result<Self> {
        let server = Arc::new(
            tiny_http::Server::http(addr).map_err(|e| Error::Config(format!("cannot bind {addr}: {e}")))?,
        );
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| Error::Config("mock server has no ip address".into()))?;
        let workers = (0..threads.max(1))
            .map(|_| {
                let server = Arc::clone(&server);
                let handler = Arc::clone(&handler);
                std::thread::spawn(move || {
                    for request in server.incoming_requests() {
                        serve_one(request, handler.as_ref());
                    }
                })
            })
            .collect();
        Ok(MockServer { server, addr, workers })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Base url to put in an endpoint config.
    pub fn base_url(&self) -> String {
        format!("http://{}/v1", self.addr)
    }

    /// Blocks until the process is killed.
    pub fn wait(mut self) {
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        for _ in 0..self.workers.len() {
            self.server.unblock();
        }
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

fn respond_json(request: tiny_http::Request, status: u16, body: &Value) {
    let header = tiny_http::Header::from_bytes("Content-Type", "application/json").expect("static header");
    let resp = tiny_http::Response::from_string(body.to_string())
        .with_status_code(status)
        .with_header(header);
    let _ = request.respond(resp);
}

fn serve_one(mut request: tiny_http::Request, handler: &(dyn Fn(&ChatRequest) -> MockReply + Send + Sync)) {
    if request.method() != &tiny_http::Method::Post || !request.url().ends_with("/chat/completions") {
        respond_json(request, 404, &json!({"error": "not found"}));
        return;
    }
    let mut body = String::new();
    if request.as_reader().read_to_string(&mut body).is_err() {
        respond_json(request, 400, &json!({"error": "unreadable body"}));
        return;
    }
    let parsed = serde_json::from_str::<Value>(&body)
        .map_err(|e| Error::Endpoint(e.to_string()))
        .and_then(|v| parse_chat_request(&v));
    match parsed {
        Ok(req) => {
            let reply = handler(&req);
            if reply.status == 200 {
                respond_json(request, 200, &completion_body(&req.model, &reply.content));
            } else {
                respond_json(request, reply.status, &json!({"error": reply.content}));
            }
        }
        Err(e) => respond_json(request, 400, &json!({"error": e.to_string()})),
    }
}
