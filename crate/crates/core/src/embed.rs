//! Text embedding providers and the on-disk embedding cache.
//!
//! Retrieval over caption conditions needs a text → vector map. Two
//! providers ship here: a remote OpenAI-compatible embeddings client and a
//! deterministic hashed bag-of-words embedder that keeps tests hermetic.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::backend::BackendError;
use crate::error::{Error, Result};

/// Maps condition text to a real vector. Implementations must be safe for
/// concurrent use.
pub trait TextEmbedder: Send + Sync {
    fn embed(&self, text: &str) -> Result<Vec<f64>>;
    /// Stable identity string; caches reject vectors produced by a
    /// different embedder.
    fn identity(&self) -> String;
}

// ── Hashed bag of words ───────────────────────────────────────────────

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// FNV-1a, used for stable token bucketing. The std hasher is not
/// guaranteed stable across releases; this is.
fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = FNV_OFFSET;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

/// Deterministic local embedder: lowercased alphanumeric tokens hashed into
/// `dim` buckets, counts L2-normalized. Similar texts share buckets, so
/// cosine distance behaves sensibly for retrieval tests and the offline
/// mock; it is no substitute for a learned text encoder.
#[derive(Debug, Clone)]
pub struct HashedBagOfWords {
    dim: usize,
}

impl HashedBagOfWords {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid_argument("embedding dimension must be positive"));
        }
        Ok(HashedBagOfWords { dim })
    }

    /// 256 buckets: enough to keep common captions from colliding.
    pub fn default_dim() -> Self {
        HashedBagOfWords { dim: 256 }
    }
}

impl TextEmbedder for HashedBagOfWords {
    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        let lowered = text.to_lowercase();
        let mut tokens: Vec<&str> =
            lowered.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).collect();
        if tokens.is_empty() {
            // Degenerate text (all punctuation): hash it whole so the
            // vector is never zero.
            tokens.push(lowered.trim());
        }
        let mut v = vec![0.0; self.dim];
        for token in tokens {
            let bucket = (fnv1a64(token.as_bytes()) % self.dim as u64) as usize;
            v[bucket] += 1.0;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            for x in &mut v {
                *x /= norm;
            }
        }
        Ok(v)
    }

    fn identity(&self) -> String {
        format!("hashed-bow-{}", self.dim)
    }
}

// ── Remote embedder ───────────────────────────────────────────────────

/// Client for an OpenAI-compatible `/v1/embeddings` endpoint. The API key
/// comes from the caller, who reads it from the environment.
pub struct HttpEmbedder {
    endpoint: String,
    model: String,
    api_key: String,
    client: reqwest::blocking::Client,
}

impl HttpEmbedder {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, api_key: impl Into<String>) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .build()
            .map_err(|e| Error::Backend(BackendError::Config(e.to_string())))?;
        Ok(HttpEmbedder { endpoint: endpoint.into(), model: model.into(), api_key: api_key.into(), client })
    }
}

impl TextEmbedder for HttpEmbedder {
    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        let body = serde_json::json!({ "model": self.model, "input": text });
        let response = self
            .client
            .post(&self.endpoint)
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .map_err(|e| Error::Backend(BackendError::Transport(e.to_string())))?;
        let status = response.status().as_u16();
        let text_body = response
            .text()
            .map_err(|e| Error::Backend(BackendError::Transport(e.to_string())))?;
        if status == 401 || status == 403 {
            return Err(Error::Backend(BackendError::Auth(text_body)));
        }
        if status >= 400 {
            return Err(Error::Backend(BackendError::Http { status, message: text_body }));
        }
        let json: serde_json::Value = serde_json::from_str(&text_body)
            .map_err(|e| Error::Backend(BackendError::MalformedResponse(e.to_string())))?;
        let vector = json["data"][0]["embedding"]
            .as_array()
            .ok_or_else(|| {
                Error::Backend(BackendError::MalformedResponse(
                    "missing data[0].embedding array".to_string(),
                ))
            })?
            .iter()
            .map(|v| v.as_f64().unwrap_or(0.0))
            .collect();
        Ok(vector)
    }

    fn identity(&self) -> String {
        format!("http-{}-{}", self.endpoint, self.model)
    }
}

// ── Sidecar cache ─────────────────────────────────────────────────────

const CACHE_MAGIC: &[u8; 8] = b"LPEMBED1";

/// Embeddings keyed by record id, persisted as a small binary sidecar next
/// to a support set. The file records the producing embedder's identity and
/// vector dimension; mismatches on load are rejected.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingCache {
    identity: String,
    dim: Option<usize>,
    entries: BTreeMap<String, Vec<f64>>,
}

impl EmbeddingCache {
    pub fn new(identity: impl Into<String>) -> Self {
        EmbeddingCache { identity: identity.into(), dim: None, entries: BTreeMap::new() }
    }

    pub fn identity(&self) -> &str {
        &self.identity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.entries.get(id).map(Vec::as_slice)
    }

    pub fn insert(&mut self, id: impl Into<String>, vector: Vec<f64>) -> Result<()> {
        if vector.is_empty() {
            return Err(Error::invalid_argument("cached embedding must be nonempty"));
        }
        match self.dim {
            None => self.dim = Some(vector.len()),
            Some(d) if d != vector.len() => {
                return Err(Error::invalid_argument(format!(
                    "embedding dimension {} does not match cache dimension {d}",
                    vector.len()
                )));
            }
            _ => {}
        }
        self.entries.insert(id.into(), vector);
        Ok(())
    }

    /// Load a cache written by [`save`](Self::save), verifying it was
    /// produced by `expected_identity`.
    pub fn load(path: &Path, expected_identity: &str) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let bad = |msg: &str| Error::data(format!("{}: {msg}", path.display()));

        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
        if &magic != CACHE_MAGIC {
            return Err(bad("not an embedding cache file"));
        }
        let identity = read_string(&mut r).map_err(|_| bad("truncated identity"))?;
        if identity != expected_identity {
            return Err(bad(&format!(
                "cache written by '{identity}', expected '{expected_identity}'"
            )));
        }
        let dim = read_u32(&mut r).map_err(|_| bad("truncated dimension"))? as usize;
        let count = read_u32(&mut r).map_err(|_| bad("truncated count"))? as usize;
        let mut entries = BTreeMap::new();
        for _ in 0..count {
            let id = read_string(&mut r).map_err(|_| bad("truncated entry id"))?;
            let mut vector = Vec::with_capacity(dim);
            for _ in 0..dim {
                let mut buf = [0u8; 8];
                r.read_exact(&mut buf).map_err(|_| bad("truncated vector"))?;
                vector.push(f64::from_le_bytes(buf));
            }
            entries.insert(id, vector);
        }
        Ok(EmbeddingCache { identity, dim: if count > 0 { Some(dim) } else { None }, entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let fail = |e: std::io::Error| Error::io(path, e);
        w.write_all(CACHE_MAGIC).map_err(fail)?;
        write_string(&mut w, &self.identity).map_err(fail)?;
        write_u32(&mut w, self.dim.unwrap_or(0) as u32).map_err(fail)?;
        write_u32(&mut w, self.entries.len() as u32).map_err(fail)?;
        for (id, vector) in &self.entries {
            write_string(&mut w, id).map_err(fail)?;
            for v in vector {
                w.write_all(&v.to_le_bytes()).map_err(fail)?;
            }
        }
        w.flush().map_err(fail)
    }
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn write_u32(w: &mut impl Write, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn read_string(r: &mut impl Read) -> std::io::Result<String> {
    let len = read_u32(r)? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
}

fn write_string(w: &mut impl Write, s: &str) -> std::io::Result<()> {
    write_u32(w, s.len() as u32)?;
    w.write_all(s.as_bytes())
}
