//! Chat-completion style web API provider.
//!
//! Speaks the widely implemented `/chat/completions` and `/embeddings`
//! request shapes with bearer authentication.

use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::{ChatRequest, Provider, ProviderError};

pub struct HttpProvider {
    endpoint: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpProvider {
    /// `endpoint` is the API base, e.g. `https://host/v1`.
    pub fn new(endpoint: &str, api_key: Option<String>, timeout: Duration) -> Result<Self, String> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| e.to_string())?;
        Ok(Self {
            endpoint: endpoint.trim_end_matches('/').to_string(),
            api_key,
            client,
        })
    }

    fn post(&self, path: &str, body: serde_json::Value) -> Result<serde_json::Value, ProviderError> {
        let url = format!("{}/{}", self.endpoint, path);
        let mut req = self.client.post(&url).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| ProviderError::Transient(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| ProviderError::Transient(e.to_string()))?;
        if status.is_success() {
            serde_json::from_str(&text).map_err(|e| ProviderError::Fatal(format!("undecodable response: {e}")))
        } else if status.as_u16() == 429 || status.is_server_error() {
            Err(ProviderError::Transient(format!("{status}: {text}")))
        } else {
            Err(ProviderError::Fatal(format!("{status}: {text}")))
        }
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    content: Option<String>,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    index: usize,
    embedding: Vec<f32>,
}

pub(crate) fn chat_body(model: &str, req: &ChatRequest) -> serde_json::Value {
    json!({
        "model": model,
        "temperature": req.temperature,
        "messages": [
            {"role": "system", "content": req.system_prompt},
            {"role": "user", "content": req.user_prompt},
        ],
    })
}

impl Provider for HttpProvider {
    fn chat(&self, model: &str, req: &ChatRequest) -> Result<String, ProviderError> {
        let value = self.post("chat/completions", chat_body(model, req))?;
        let resp: ChatResponse =
            serde_json::from_value(value).map_err(|e| ProviderError::Fatal(format!("unexpected chat response: {e}")))?;
        resp.choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| ProviderError::Transient("chat response carried no content".into()))
    }

    fn embed(&self, model: &str, texts: &[String]) -> Result<Vec<Vec<f32>>, ProviderError> {
        let value = self.post("embeddings", json!({ "model": model, "input": texts }))?;
        let mut resp: EmbeddingResponse = serde_json::from_value(value)
            .map_err(|e| ProviderError::Fatal(format!("unexpected embedding response: {e}")))?;
        resp.data.sort_by_key(|d| d.index);
        Ok(resp.data.into_iter().map(|d| d.embedding).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::mpsc;

    /// Serves one canned HTTP response per connection and reports request bodies.
    fn serve(responses: Vec<(u16, String)>) -> (String, mpsc::Receiver<String>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for (status, body) in responses {
                let (mut stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0usize;
                let mut head = String::new();
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                    head.push_str(&line);
                }
                let mut buf = vec![0u8; len];
                reader.read_exact(&mut buf).unwrap();
                tx.send(format!("{head}\n{}", String::from_utf8(buf).unwrap())).unwrap();
                let reply = format!(
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                    body.len()
                );
                stream.write_all(reply.as_bytes()).unwrap();
            }
        });
        (format!("http://{addr}/v1"), rx)
    }

    #[test]
    fn chat_round_trip_uses_message_list_and_bearer_key() {
        let (url, rx) = serve(vec![(200, r#"{"choices":[{"message":{"content":"hello"}}]}"#.into())]);
        let p = HttpProvider::new(&url, Some("sk-test".into()), Duration::from_secs(5)).unwrap();
        let req = ChatRequest::new("summarize", "sys", "usr").temperature(0.7);
        assert_eq!(p.chat("model-a", &req).unwrap(), "hello");
        let seen = rx.recv().unwrap();
        assert!(seen.contains("POST /v1/chat/completions"));
        assert!(seen.to_ascii_lowercase().contains("authorization: bearer sk-test"));
        assert!(seen.contains(r#""role":"system""#) && seen.contains(r#""content":"usr""#));
        assert!(seen.contains(r#""model":"model-a""#));
    }

    #[test]
    fn status_codes_map_to_retry_classes() {
        let (url, _rx) = serve(vec![(503, "{}".into()), (401, "{}".into())]);
        let p = HttpProvider::new(&url, None, Duration::from_secs(5)).unwrap();
        let req = ChatRequest::new("t", "s", "u");
        assert!(matches!(p.chat("m", &req), Err(ProviderError::Transient(_))));
        assert!(matches!(p.chat("m", &req), Err(ProviderError::Fatal(_))));
    }

    #[test]
    fn embeddings_are_reordered_by_index() {
        let body = r#"{"data":[{"index":1,"embedding":[0.0,1.0]},{"index":0,"embedding":[1.0,0.0]}]}"#;
        let (url, _rx) = serve(vec![(200, body.into())]);
        let p = HttpProvider::new(&url, None, Duration::from_secs(5)).unwrap();
        let v = p.embed("e", &["a".into(), "b".into()]).unwrap();
        assert_eq!(v, vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
    }
}
