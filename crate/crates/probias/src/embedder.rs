//! Initial per-label embeddings from label descriptions.
//!
//! Descriptions come from a pluggable acquisition path: an offline stub
//! (default), a JSONL cache, or a chat-completion-style HTTP endpoint.
//! Description text is embedded by a frozen hash-projected token table;
//! no gradient ever flows into it.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::tokenize;
use crate::error::{Error, Result};
use crate::nn::Tensor;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DescriptionSource {
    Stub,
    Cache,
    Remote,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeDescription {
    pub code: String,
    #[serde(rename = "description")]
    pub text: String,
    pub source: DescriptionSource,
}

/// Deterministic three-section prompt asking for the content categories
/// a description must cover.
pub fn render_prompt(code: &str, name: &str) -> Result<String> {
    if name.is_empty() {
        return Err(Error::data("label name must not be empty"));
    }
    Ok(format!(
        "Write a comprehensive description of the medical code {code} (\"{name}\").\n\
         Structure the answer under exactly these three headers:\n\
         ## Clinical context\n\
         Typical presentation, affected population, and disease course of {name}.\n\
         ## Procedural and diagnostic detail\n\
         How {name} is diagnosed, coded, and managed in practice.\n\
         ## Common comorbidities\n\
         Conditions that frequently co-occur with {name} and why.\n"
    ))
}

/// The stub's deterministic offline description.
pub fn stub_description(code: &str, name: &str) -> String {
    format!(
        "Clinical context: {name} (code {code}) presents with findings characteristic of {name}. \
         Procedural and diagnostic detail: documentation supporting code {code} records the \
         defining features of {name}. \
         Common comorbidities: conditions statistically associated with {name} are frequently \
         documented alongside it."
    )
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FetchMode {
    Stub,
    Remote,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LlmConfig {
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
}

impl Default for LlmConfig {
    fn default() -> Self {
        LlmConfig {
            endpoint: String::new(),
            model: String::new(),
            temperature: 0.2,
        }
    }
}

/// Env var holding the bearer token for remote description generation.
pub const LLM_TOKEN_ENV: &str = "PROBIAS_LLM_TOKEN";

/// JSONL-backed description cache, one object per line.
#[derive(Debug, Default)]
pub struct DescriptionCache {
    entries: BTreeMap<String, CodeDescription>,
}

impl DescriptionCache {
    pub fn load(path: &Path) -> Result<Self> {
        let mut cache = DescriptionCache::default();
        if path.exists() {
            for (lineno, line) in fs::read_to_string(path)?.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let entry: CodeDescription = serde_json::from_str(line).map_err(|e| {
                    Error::data(format!("description cache line {}: {e}", lineno + 1))
                })?;
                cache.entries.insert(entry.code.clone(), entry);
            }
        }
        Ok(cache)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for entry in self.entries.values() {
            out.push_str(&serde_json::to_string(entry).expect("entry serializes"));
            out.push('\n');
        }
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        crate::nn::checkpoint::write_atomic(path, out.as_bytes())
    }

    pub fn get(&self, code: &str) -> Option<&CodeDescription> {
        self.entries.get(code)
    }

    pub fn insert(&mut self, entry: CodeDescription) {
        self.entries.insert(entry.code.clone(), entry);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Cache hit wins; otherwise stub mode composes a description offline and
/// remote mode posts the rendered prompt to the configured endpoint.
/// Remote failures fall back to the stub only when `allow_stub_fallback`.
pub fn fetch_description(
    code: &str,
    name: &str,
    mode: FetchMode,
    llm: &LlmConfig,
    cache: &mut DescriptionCache,
    allow_stub_fallback: bool,
) -> Result<CodeDescription> {
    if let Some(hit) = cache.get(code) {
        let mut entry = hit.clone();
        entry.source = DescriptionSource::Cache;
        return Ok(entry);
    }
    let entry = match mode {
        FetchMode::Stub => CodeDescription {
            code: code.to_string(),
            text: stub_description(code, name),
            source: DescriptionSource::Stub,
        },
        FetchMode::Remote => match fetch_remote(code, name, llm) {
            Ok(entry) => entry,
            Err(e) if allow_stub_fallback => {
                eprintln!("warning: remote description for {code} failed ({e}); using stub");
                CodeDescription {
                    code: code.to_string(),
                    text: stub_description(code, name),
                    source: DescriptionSource::Stub,
                }
            }
            Err(e) => return Err(e),
        },
    };
    cache.insert(entry.clone());
    Ok(entry)
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    temperature: f64,
    messages: Vec<ChatMessage<'a>>,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatReply,
}

#[derive(Deserialize)]
struct ChatReply {
    content: String,
}

fn fetch_remote(code: &str, name: &str, llm: &LlmConfig) -> Result<CodeDescription> {
    if llm.endpoint.is_empty() {
        return Err(Error::config("llm.endpoint is not configured"));
    }
    let prompt = render_prompt(code, name)?;
    let body = ChatRequest {
        model: &llm.model,
        temperature: llm.temperature,
        messages: vec![ChatMessage {
            role: "user",
            content: &prompt,
        }],
    };
    let mut req = ureq::post(&llm.endpoint);
    if let Ok(token) = std::env::var(LLM_TOKEN_ENV) {
        req = req.set("Authorization", &format!("Bearer {token}"));
    }
    let resp: ChatResponse = req
        .send_json(serde_json::to_value(&body).expect("request serializes"))
        .map_err(|e| Error::data(format!("remote description request failed: {e}")))?
        .into_json()
        .map_err(|e| Error::data(format!("malformed remote reply: {e}")))?;
    let text = resp
        .choices
        .first()
        .map(|c| c.message.content.trim().to_string())
        .unwrap_or_default();
    if text.is_empty() {
        return Err(Error::data(format!("empty remote reply for code {code}")));
    }
    Ok(CodeDescription {
        code: code.to_string(),
        text,
        source: DescriptionSource::Remote,
    })
}

/// Frozen bag-of-tokens embedder: each token hashes to a fixed
/// pseudorandom vector; a text embeds as the mean over its tokens.
#[derive(Clone, Debug)]
pub struct FrozenHashEmbedder {
    pub dim: usize,
    pub seed: u64,
}

impl FrozenHashEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        FrozenHashEmbedder { dim, seed }
    }

    fn token_vector(&self, token: &str) -> Vec<f64> {
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed ^ fnv1a(token));
        (0..self.dim).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    pub fn embed(&self, text: &str) -> Tensor {
        let tokens = tokenize(text);
        let mut acc = vec![0.0; self.dim];
        if tokens.is_empty() {
            return Tensor::new(vec![self.dim], acc);
        }
        for t in &tokens {
            for (a, v) in acc.iter_mut().zip(self.token_vector(t)) {
                *a += v;
            }
        }
        let n = tokens.len() as f64;
        for a in &mut acc {
            *a /= n;
        }
        Tensor::new(vec![self.dim], acc)
    }

    /// N x d matrix, one embedded text per row.
    pub fn embed_all(&self, texts: &[String]) -> Tensor {
        let rows: Vec<Vec<f64>> = texts.iter().map(|t| self.embed(t).data().to_vec()).collect();
        Tensor::from_rows(&rows)
    }
}

/// FNV-1a: stable across processes and platforms, unlike the std hasher.
fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in s.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}
