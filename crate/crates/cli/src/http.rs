//! Minimal HTTP/1.1 completion transport for the remote ranker and
//! policy: POST a JSON `{prompt, max_tokens}` body, read back `{text}`.
//! Plain `http://` only; tests never need it.

use std::io::{Read, Write};
use std::net::TcpStream;

use pact_core::error::PactError;
use pact_core::fetch::{CompletionClient, CompletionRequest, CompletionResponse};

pub struct HttpCompletionClient {
    host: String,
    port: u16,
    path: String,
}

impl HttpCompletionClient {
    /// `endpoint` looks like `http://host:port/path`.
    pub fn new(endpoint: &str) -> Result<Self, PactError> {
        let rest = endpoint
            .strip_prefix("http://")
            .ok_or_else(|| PactError::Completion("endpoint must start with http://".into()))?;
        let (authority, path) = match rest.find('/') {
            Some(i) => (&rest[..i], rest[i..].to_string()),
            None => (rest, "/".to_string()),
        };
        let (host, port) = match authority.rsplit_once(':') {
            Some((h, p)) => (
                h.to_string(),
                p.parse::<u16>()
                    .map_err(|e| PactError::Completion(format!("bad port: {e}")))?,
            ),
            None => (authority.to_string(), 80),
        };
        Ok(Self { host, port, path })
    }
}

impl CompletionClient for HttpCompletionClient {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, PactError> {
        let body = serde_json::to_string(req).map_err(|e| PactError::Completion(e.to_string()))?;
        let mut stream = TcpStream::connect((self.host.as_str(), self.port))
            .map_err(|e| PactError::Completion(format!("connect failed: {e}")))?;
        let request = format!(
            "POST {} HTTP/1.1\r\nHost: {}\r\nContent-Type: application/json\r\n\
             Content-Length: {}\r\nConnection: close\r\n\r\n{}",
            self.path,
            self.host,
            body.len(),
            body
        );
        stream
            .write_all(request.as_bytes())
            .map_err(|e| PactError::Completion(format!("write failed: {e}")))?;
        let mut raw = Vec::new();
        stream
            .read_to_end(&mut raw)
            .map_err(|e| PactError::Completion(format!("read failed: {e}")))?;
        let text = String::from_utf8_lossy(&raw);
        let (head, response_body) = text
            .split_once("\r\n\r\n")
            .ok_or_else(|| PactError::Completion("malformed HTTP response".into()))?;
        let status = head.lines().next().unwrap_or_default();
        if !status.contains("200") {
            return Err(PactError::Completion(format!("HTTP error: {status}")));
        }
        serde_json::from_str(response_body)
            .map_err(|e| PactError::Completion(format!("bad completion body: {e}")))
    }
}
