use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::{Embedder, GenerationRequest, Generator, ProviderError};

/// Client for servers speaking the OpenAI `/embeddings` and
/// `/chat/completions` wire format.
#[derive(Debug, Clone)]
pub struct OpenAiCompatible {
    base_url: String,
    model: String,
    dim: usize,
    api_key: Option<String>,
    agent: ureq::Agent,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f64>,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    #[serde(default)]
    content: Option<String>,
}

impl OpenAiCompatible {
    pub fn new(
        base_url: impl Into<String>,
        model: impl Into<String>,
        dim: usize,
        api_key: Option<String>,
        timeout: Duration,
    ) -> Self {
        let config = ureq::Agent::config_builder().timeout_global(Some(timeout)).build();
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            model: model.into(),
            dim,
            api_key,
            agent: config.into(),
        }
    }

    fn post<T: serde::de::DeserializeOwned>(&self, path: &str, body: serde_json::Value) -> Result<T, ProviderError> {
        let url = format!("{}{path}", self.base_url);
        let mut request = self.agent.post(&url);
        if let Some(key) = &self.api_key {
            request = request.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = request.send_json(&body).map_err(map_error)?;
        response
            .body_mut()
            .read_json::<T>()
            .map_err(|e| ProviderError::Transport(format!("unreadable response body: {e}")))
    }
}

fn map_error(e: ureq::Error) -> ProviderError {
    match e {
        ureq::Error::StatusCode(code) if code == 429 || code >= 500 => ProviderError::Transport(format!("HTTP {code}")),
        ureq::Error::StatusCode(code) => ProviderError::Rejected(format!("HTTP {code}")),
        other => ProviderError::Transport(other.to_string()),
    }
}

impl Embedder for OpenAiCompatible {
    fn provider_id(&self) -> &str {
        "http-openai-compatible"
    }

    fn model_id(&self) -> &str {
        &self.model
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, ProviderError> {
        let response: EmbeddingResponse = self.post("/embeddings", json!({ "model": self.model, "input": text }))?;
        response
            .data
            .into_iter()
            .next()
            .map(|d| d.embedding)
            .ok_or_else(|| ProviderError::Transport("embedding response has no data".into()))
    }
}

impl Generator for OpenAiCompatible {
    fn default_model(&self) -> &str {
        &self.model
    }

    fn complete(&self, request: &GenerationRequest) -> Result<String, ProviderError> {
        let model = if request.model.is_empty() {
            &self.model
        } else {
            &request.model
        };
        let response: ChatResponse = self.post(
            "/chat/completions",
            json!({
                "model": model,
                "temperature": request.temperature,
                "messages": [{ "role": "user", "content": request.prompt }],
            }),
        )?;
        response
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| ProviderError::Transport("completion response has no content".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::mpsc;

    /// Serve one canned HTTP response and hand back the raw request.
    fn one_shot_server(status: u16, body: &'static str) -> (String, mpsc::Receiver<String>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut head = String::new();
            let mut content_length = 0;
            let mut chunked = false;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let lower = line.to_ascii_lowercase();
                if let Some(v) = lower.strip_prefix("content-length:") {
                    content_length = v.trim().parse().unwrap();
                }
                chunked |= lower.starts_with("transfer-encoding:") && lower.contains("chunked");
                head.push_str(&line);
                if line == "\r\n" {
                    break;
                }
            }
            let mut received = Vec::new();
            if chunked {
                loop {
                    let mut size_line = String::new();
                    reader.read_line(&mut size_line).unwrap();
                    let size = usize::from_str_radix(size_line.trim(), 16).unwrap();
                    let mut chunk = vec![0; size + 2];
                    reader.read_exact(&mut chunk).unwrap();
                    if size == 0 {
                        break;
                    }
                    received.extend_from_slice(&chunk[..size]);
                }
            } else {
                received.resize(content_length, 0);
                reader.read_exact(&mut received).unwrap();
            }
            head.push_str(&String::from_utf8(received).unwrap());
            tx.send(head).unwrap();
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        });
        (format!("http://{addr}/v1"), rx)
    }

    fn body_json(request: &str) -> serde_json::Value {
        let (_, body) = request.split_once("\r\n\r\n").unwrap();
        serde_json::from_str(body).unwrap()
    }

    #[test]
    fn embeds_over_http() {
        let (url, rx) = one_shot_server(200, r#"{"data":[{"embedding":[0.5,0.25,0.0]}]}"#);
        let client = OpenAiCompatible::new(url, "emb-small", 3, Some("k3y".into()), Duration::from_secs(5));
        assert_eq!(client.embed("hello").unwrap(), vec![0.5, 0.25, 0.0]);
        let request = rx.recv().unwrap();
        assert!(request.starts_with("POST /v1/embeddings"));
        assert!(request.contains("Bearer k3y"));
        assert_eq!(body_json(&request)["input"], "hello");
    }

    #[test]
    fn completes_over_http() {
        let (url, rx) = one_shot_server(
            200,
            r#"{"choices":[{"message":{"role":"assistant","content":"A summary."}}]}"#,
        );
        let client = OpenAiCompatible::new(url, "chat-model", 0, None, Duration::from_secs(5));
        let req = GenerationRequest::new("Summarize.", 0.3, "").unwrap();
        assert_eq!(client.generate(&req).unwrap().text, "A summary.");
        let request = rx.recv().unwrap();
        assert!(request.starts_with("POST /v1/chat/completions"));
        let body = body_json(&request);
        assert_eq!(body["model"], "chat-model");
        assert_eq!(body["temperature"], 0.3);
        assert_eq!(body["messages"][0]["content"], "Summarize.");
    }

    #[test]
    fn server_errors_are_retryable_client_errors_are_not() {
        let (url, _rx) = one_shot_server(503, "{}");
        let client = OpenAiCompatible::new(url, "m", 3, None, Duration::from_secs(5));
        assert!(client.embed("x").unwrap_err().is_retryable());

        let (url, _rx) = one_shot_server(401, "{}");
        let client = OpenAiCompatible::new(url, "m", 3, None, Duration::from_secs(5));
        assert!(matches!(client.embed("x"), Err(ProviderError::Rejected(_))));
    }
}
