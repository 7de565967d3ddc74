use std::path::PathBuf;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use super::prompt::SECTION_HEADERS;
use super::SynthesisError;
use crate::task::split_answer;

/// Assistant text plus the number of requests it took (0 for a cache hit).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub text: String,
    pub attempts: u32,
}

pub trait CompletionClient: Send + Sync {
    fn complete(&self, sample_id: &str, prompt: &str) -> Result<Completion, SynthesisError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EndpointConfig {
    /// Requests go to `{base_url}/chat/completions`.
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    pub token_env: Option<String>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub max_attempts: u32,
    pub initial_backoff_ms: u64,
    pub max_backoff_ms: u64,
    pub max_in_flight: usize,
    pub timeout_secs: u64,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8000/v1".into(),
            model: "gpt-4o".into(),
            token_env: Some("OPENAI_API_KEY".into()),
            temperature: 0.0,
            max_tokens: 4096,
            max_attempts: 5,
            initial_backoff_ms: 500,
            max_backoff_ms: 16_000,
            max_in_flight: 8,
            timeout_secs: 120,
        }
    }
}

struct Semaphore {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Semaphore);

impl Semaphore {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.cv.wait(free).unwrap();
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

pub struct HttpCompletionClient {
    config: EndpointConfig,
    token: Option<String>,
    http: reqwest::blocking::Client,
    slots: Semaphore,
}

enum Failure {
    Retry(String),
    Fatal(SynthesisError),
}

impl HttpCompletionClient {
    pub fn new(config: EndpointConfig) -> Result<Self, SynthesisError> {
        let token = match &config.token_env {
            Some(var) => Some(std::env::var(var).map_err(|_| SynthesisError::MissingToken(var.clone()))?),
            None => None,
        };
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| SynthesisError::BadResponse {
                sample_id: String::new(),
                message: e.to_string(),
            })?;
        Ok(Self {
            slots: Semaphore::new(config.max_in_flight),
            config,
            token,
            http,
        })
    }

    fn url(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }

    fn attempt(&self, sample_id: &str, prompt: &str) -> Result<String, Failure> {
        let body = json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.config.temperature,
            "max_tokens": self.config.max_tokens,
        });
        let mut req = self.http.post(self.url()).json(&body);
        if let Some(t) = &self.token {
            req = req.bearer_auth(t);
        }
        let resp = req.send().map_err(|e| Failure::Retry(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| Failure::Retry(e.to_string()))?;
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(Failure::Retry(format!("status {}: {text}", status.as_u16())));
        }
        if !status.is_success() {
            return Err(Failure::Fatal(SynthesisError::Http {
                sample_id: sample_id.to_string(),
                status: status.as_u16(),
                body: text,
            }));
        }
        let bad = |message: String| {
            Failure::Fatal(SynthesisError::BadResponse {
                sample_id: sample_id.to_string(),
                message,
            })
        };
        let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
        v.pointer("/choices/0/message/content")
            .and_then(|c| c.as_str())
            .map(str::to_string)
            .ok_or_else(|| bad("no choices[0].message.content".into()))
    }
}

impl CompletionClient for HttpCompletionClient {
    fn complete(&self, sample_id: &str, prompt: &str) -> Result<Completion, SynthesisError> {
        let _permit = self.slots.acquire();
        let max = self.config.max_attempts.max(1);
        let mut last = String::new();
        for n in 1..=max {
            match self.attempt(sample_id, prompt) {
                Ok(text) => return Ok(Completion { text, attempts: n }),
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Retry(msg)) => last = msg,
            }
            if n < max {
                let backoff = self
                    .config
                    .initial_backoff_ms
                    .saturating_mul(1 << (n - 1).min(20))
                    .min(self.config.max_backoff_ms);
                std::thread::sleep(Duration::from_millis(backoff));
            }
        }
        Err(SynthesisError::Exhausted {
            sample_id: sample_id.to_string(),
            attempts: max,
            message: last,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StubConfig {
    /// Fraction of responses that leave out one ground-truth entity.
    pub drop_rate: f64,
    /// Fraction of responses that add an entity outside the ground truth.
    pub hallucination_rate: f64,
}

impl Default for StubConfig {
    fn default() -> Self {
        Self {
            drop_rate: 0.2,
            hallucination_rate: 0.05,
        }
    }
}

/// Offline stand-in for a chat endpoint. It answers from the prompt's own
/// ground-truth and knowledge sections; the output depends only on the
/// sample id and prompt.
#[derive(Debug, Clone, Default)]
pub struct StubCompletionClient {
    pub config: StubConfig,
}

pub const STUB_HALLUCINATION: &str = "Unrelated finding";

fn section<'a>(prompt: &'a str, header: &str) -> Vec<&'a str> {
    prompt
        .lines()
        .skip_while(|l| l.trim() != header)
        .skip(1)
        .take_while(|l| !l.starts_with("====") && !SECTION_HEADERS.contains(&l.trim()))
        .filter(|l| !l.trim().is_empty())
        .collect()
}

fn unit(bytes: &[u8]) -> f64 {
    let mut b = [0u8; 8];
    b.copy_from_slice(&bytes[..8]);
    (u64::from_le_bytes(b) >> 11) as f64 / (1u64 << 53) as f64
}

impl CompletionClient for StubCompletionClient {
    fn complete(&self, sample_id: &str, prompt: &str) -> Result<Completion, SynthesisError> {
        let digest = Sha256::new()
            .chain_update(sample_id)
            .chain_update([0])
            .chain_update(prompt)
            .finalize();
        let truth = split_answer(&section(prompt, SECTION_HEADERS[2]).join("\n"));
        let knowledge = section(prompt, SECTION_HEADERS[1]);
        let mut results = truth.clone();
        if results.len() > 1 && unit(&digest[0..8]) < self.config.drop_rate {
            let i = digest[8] as usize % results.len();
            results.remove(i);
        }
        if unit(&digest[16..24]) < self.config.hallucination_rate {
            results.push(STUB_HALLUCINATION.to_string());
        }
        let extraction = if knowledge.is_empty() {
            "**Patient EHR Context**: no linked findings.".to_string()
        } else {
            knowledge
                .iter()
                .map(|k| format!("**Linked finding**: {}", k.trim()))
                .collect::<Vec<_>>()
                .join("\n")
        };
        let reasoning = results
            .iter()
            .map(|r| format!("The extracted findings support {r}."))
            .collect::<Vec<_>>()
            .join("\n");
        let finals = results.iter().map(|r| format!("- {r}")).collect::<Vec<_>>().join("\n");
        Ok(Completion {
            text: format!("## Extraction\n{extraction}\n\n## Reasoning\n{reasoning}\n\n## Final Results\n{finals}\n"),
            attempts: 1,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheEntry {
    sample_id: String,
    prompt_sha256: String,
    text: String,
}

/// Disk cache in front of another client, keyed by sample id and prompt
/// hash. Entries are written to a temporary file and renamed into place.
pub struct CachedClient<C> {
    inner: C,
    dir: PathBuf,
}

impl<C: CompletionClient> CachedClient<C> {
    pub fn new(inner: C, dir: impl Into<PathBuf>) -> Result<Self, SynthesisError> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|e| SynthesisError::Io {
            path: dir.display().to_string(),
            message: e.to_string(),
        })?;
        Ok(Self { inner, dir })
    }

    fn key(sample_id: &str, prompt: &str) -> (String, String) {
        let prompt_hash = hex::encode(Sha256::digest(prompt.as_bytes()));
        let key = hex::encode(
            Sha256::new()
                .chain_update(sample_id)
                .chain_update([0])
                .chain_update(&prompt_hash)
                .finalize(),
        );
        (key, prompt_hash)
    }
}

impl<C: CompletionClient> CompletionClient for CachedClient<C> {
    fn complete(&self, sample_id: &str, prompt: &str) -> Result<Completion, SynthesisError> {
        let (key, prompt_hash) = Self::key(sample_id, prompt);
        let path = self.dir.join(format!("{key}.json"));
        if let Ok(text) = std::fs::read_to_string(&path) {
            if let Ok(entry) = serde_json::from_str::<CacheEntry>(&text) {
                if entry.sample_id == sample_id && entry.prompt_sha256 == prompt_hash {
                    return Ok(Completion {
                        text: entry.text,
                        attempts: 0,
                    });
                }
            }
        }
        let fresh = self.inner.complete(sample_id, prompt)?;
        let entry = CacheEntry {
            sample_id: sample_id.to_string(),
            prompt_sha256: prompt_hash,
            text: fresh.text.clone(),
        };
        let io = |e: std::io::Error| SynthesisError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        };
        let tmp = self.dir.join(format!(".{key}.{}.tmp", std::process::id()));
        std::fs::write(&tmp, serde_json::to_vec(&entry).expect("cache entry serializes")).map_err(io)?;
        std::fs::rename(&tmp, &path).map_err(io)?;
        Ok(fresh)
    }
}
