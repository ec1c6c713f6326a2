use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{content_hash, ProviderError, RetryPolicy};

/// Accepted temperature range, inclusive.
pub const TEMPERATURE_RANGE: (f64, f64) = (0.0, 2.0);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct GenerationRequest {
    pub prompt: String,
    pub temperature: f64,
    pub model: String,
}

impl GenerationRequest {
    pub fn new(prompt: impl Into<String>, temperature: f64, model: impl Into<String>) -> Result<Self, ProviderError> {
        let request = Self {
            prompt: prompt.into(),
            temperature,
            model: model.into(),
        };
        request.validate()?;
        Ok(request)
    }

    pub fn validate(&self) -> Result<(), ProviderError> {
        if self.prompt.trim().is_empty() {
            return Err(ProviderError::InvalidRequest("prompt is empty".into()));
        }
        let (lo, hi) = TEMPERATURE_RANGE;
        if !(lo..=hi).contains(&self.temperature) {
            return Err(ProviderError::InvalidRequest(format!(
                "temperature {} outside [{lo}, {hi}]",
                self.temperature
            )));
        }
        Ok(())
    }

    pub fn digest(&self) -> String {
        request_digest(&self.prompt, self.temperature, &self.model)
    }
}

/// Content hash of a generation request: SHA-256 over the JSON array
/// `[prompt, temperature, model]`, lowercase hex.
pub fn request_digest(prompt: &str, temperature: f64, model: &str) -> String {
    let canonical = serde_json::to_string(&(prompt, temperature, model)).expect("tuple serializes");
    content_hash(canonical.as_bytes())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct GenerationResult {
    pub text: String,
    pub model: String,
    pub request_digest: String,
}

/// Text-generation model.
pub trait Generator: Send + Sync {
    /// Model used when a caller does not pick one.
    fn default_model(&self) -> &str;

    /// True when responses depend on the order requests arrive in, so callers
    /// must not issue them concurrently.
    fn order_sensitive(&self) -> bool {
        false
    }

    /// Produce the completion text for an already validated request.
    fn complete(&self, request: &GenerationRequest) -> Result<String, ProviderError>;

    /// Validate `request`, then complete it.
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResult, ProviderError> {
        request.validate()?;
        let text = self.complete(request)?;
        Ok(GenerationResult {
            text,
            model: request.model.clone(),
            request_digest: request.digest(),
        })
    }
}

/// Adds bounded retries to any generator.
pub struct Retrying<G> {
    inner: G,
    policy: RetryPolicy,
}

impl<G: Generator> Retrying<G> {
    pub fn new(inner: G, policy: RetryPolicy) -> Self {
        Self { inner, policy }
    }
}

impl<G: Generator> Generator for Retrying<G> {
    fn default_model(&self) -> &str {
        self.inner.default_model()
    }

    fn order_sensitive(&self) -> bool {
        self.inner.order_sensitive()
    }

    fn complete(&self, request: &GenerationRequest) -> Result<String, ProviderError> {
        self.policy.run(|| self.inner.complete(request))
    }
}

/// One line of a replay script.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub digest: Option<String>,
    pub response: String,
}

/// Deterministic generator that answers from a script.
///
/// Records carrying a `digest` answer exactly that request. Records without
/// one are handed out in script order, one per distinct request digest; a
/// repeated request gets the response it received the first time.
#[derive(Debug, Default)]
pub struct ReplayGenerator {
    keyed: HashMap<String, String>,
    ordered: Vec<String>,
    assigned: Mutex<(usize, HashMap<String, usize>)>,
    calls: AtomicUsize,
}

impl ReplayGenerator {
    pub fn new(records: impl IntoIterator<Item = ReplayRecord>) -> Self {
        let mut keyed = HashMap::new();
        let mut ordered = Vec::new();
        for record in records {
            match record.digest {
                Some(d) => {
                    keyed.insert(d, record.response);
                }
                None => ordered.push(record.response),
            }
        }
        Self {
            keyed,
            ordered,
            ..Default::default()
        }
    }

    /// Script keyed by the digests of the given requests.
    pub fn keyed(pairs: impl IntoIterator<Item = (GenerationRequest, String)>) -> Self {
        Self::new(pairs.into_iter().map(|(req, response)| ReplayRecord {
            digest: Some(req.digest()),
            response,
        }))
    }

    pub fn load(path: &Path) -> Result<Self, ProviderError> {
        let text = fs::read_to_string(path)
            .map_err(|e| ProviderError::Config(format!("cannot read replay script {}: {e}", path.display())))?;
        let mut records = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record: ReplayRecord = serde_json::from_str(line)
                .map_err(|e| ProviderError::Config(format!("{}:{}: {e}", path.display(), n + 1)))?;
            records.push(record);
        }
        Ok(Self::new(records))
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }
}

impl Generator for ReplayGenerator {
    fn default_model(&self) -> &str {
        "replay"
    }

    fn order_sensitive(&self) -> bool {
        !self.ordered.is_empty()
    }

    fn complete(&self, request: &GenerationRequest) -> Result<String, ProviderError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let digest = request.digest();
        if let Some(response) = self.keyed.get(&digest) {
            return Ok(response.clone());
        }
        let mut guard = self.assigned.lock().unwrap();
        let (next, assigned) = &mut *guard;
        let slot = match assigned.get(&digest) {
            Some(&slot) => slot,
            None if *next < self.ordered.len() => {
                let slot = *next;
                *next += 1;
                assigned.insert(digest.clone(), slot);
                slot
            }
            None => return Err(ProviderError::ScriptMiss { digest }),
        };
        Ok(self.ordered[slot].clone())
    }
}
