//! Embedding providers (precomputed file or HTTP endpoint) and the
//! persistent embedding cache.

use std::collections::HashMap;
use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::read_features_bin;
use crate::numerics::DenseMatrix;

/// Environment variable holding the bearer token for HTTP providers.
pub const API_KEY_ENV: &str = "EMBEDDINGS_API_KEY";

/// Provider settings as they appear in run configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum EmbeddingSource {
    File {
        /// Matrix in the `features.bin` layout.
        matrix: PathBuf,
        /// JSON array mapping row → node id; identity when absent.
        #[serde(default)]
        index: Option<PathBuf>,
    },
    Http {
        endpoint: String,
        model: String,
        #[serde(default = "default_batch")]
        batch_size: usize,
        #[serde(default = "default_in_flight")]
        max_in_flight: usize,
        #[serde(default = "default_backoff")]
        backoff_ms: u64,
        #[serde(default)]
        cache: Option<PathBuf>,
    },
}

fn default_batch() -> usize {
    64
}
fn default_in_flight() -> usize {
    4
}
fn default_backoff() -> u64 {
    200
}

impl EmbeddingSource {
    pub fn open(&self) -> Result<Box<dyn EmbeddingProvider>> {
        match self {
            EmbeddingSource::File { matrix, index } => Ok(Box::new(FileProvider::open(matrix, index.as_deref())?)),
            EmbeddingSource::Http {
                endpoint,
                model,
                batch_size,
                max_in_flight,
                backoff_ms,
                ..
            } => Ok(Box::new(HttpProvider::new(
                endpoint,
                model,
                *batch_size,
                *max_in_flight,
                Duration::from_millis(*backoff_ms),
                std::env::var(API_KEY_ENV).ok(),
            )?)),
        }
    }

    pub fn cache_path(&self) -> Option<&Path> {
        match self {
            EmbeddingSource::Http { cache, .. } => cache.as_deref(),
            EmbeddingSource::File { .. } => None,
        }
    }
}

/// Something that maps `(node, text)` pairs to fixed-dimension vectors.
pub trait EmbeddingProvider: Send + Sync {
    /// Stable identity used in cache keys.
    fn source_id(&self) -> String;
    fn model(&self) -> &str;
    /// Row `i` embeds item `i`. File providers look up `nodes`; HTTP
    /// providers embed `texts`.
    fn embed(&self, nodes: &[usize], texts: &[String]) -> Result<DenseMatrix>;
    /// Whether results are keyed by text (and therefore cacheable).
    fn text_keyed(&self) -> bool {
        true
    }
}

/// Convenience wrapper: embeds `texts` (with their node ids) through `p`.
pub fn embed_texts(p: &dyn EmbeddingProvider, nodes: &[usize], texts: &[String]) -> Result<DenseMatrix> {
    if nodes.len() != texts.len() {
        return Err(Error::shape("embed_texts", nodes.len(), texts.len()));
    }
    p.embed(nodes, texts)
}

fn as_f32_precision(v: f64) -> f64 {
    f64::from(v as f32)
}

/// Precomputed embeddings indexed by node id.
pub struct FileProvider {
    path: PathBuf,
    matrix: DenseMatrix,
    row_of: HashMap<usize, usize>,
}

impl FileProvider {
    pub fn open(matrix: &Path, index: Option<&Path>) -> Result<Self> {
        let m = read_features_bin(matrix)?;
        let ids: Vec<usize> = match index {
            Some(p) => {
                let bytes = std::fs::read(p).map_err(|e| Error::io(p, e))?;
                serde_json::from_slice(&bytes)?
            }
            None => (0..m.rows()).collect(),
        };
        if ids.len() != m.rows() {
            return Err(Error::shape("embedding index", m.rows(), ids.len()));
        }
        Ok(Self {
            path: matrix.to_path_buf(),
            matrix: m,
            row_of: ids.into_iter().enumerate().map(|(r, id)| (id, r)).collect(),
        })
    }
}

impl EmbeddingProvider for FileProvider {
    fn source_id(&self) -> String {
        format!("file:{}", self.path.display())
    }

    fn model(&self) -> &str {
        "precomputed"
    }

    fn embed(&self, nodes: &[usize], _texts: &[String]) -> Result<DenseMatrix> {
        let rows = nodes
            .iter()
            .map(|n| self.row_of.get(n).copied().ok_or(Error::Provider(format!("node {n} missing from embedding index"))))
            .collect::<Result<Vec<_>>>()?;
        self.matrix.gather_rows(&rows)
    }

    fn text_keyed(&self) -> bool {
        false
    }
}

#[derive(Serialize)]
struct EmbeddingRequest<'a> {
    model: &'a str,
    input: &'a [String],
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    index: usize,
    embedding: Vec<f64>,
}

/// Client for `POST {endpoint}/embeddings`.
pub struct HttpProvider {
    url: String,
    model: String,
    batch_size: usize,
    max_in_flight: usize,
    backoff: Duration,
    api_key: Option<String>,
    agent: ureq::Agent,
}

pub const HTTP_ATTEMPTS: u32 = 3;

impl HttpProvider {
    pub fn new(
        endpoint: &str,
        model: &str,
        batch_size: usize,
        max_in_flight: usize,
        backoff: Duration,
        api_key: Option<String>,
    ) -> Result<Self> {
        if batch_size == 0 || max_in_flight == 0 {
            return Err(Error::Invalid("batch_size and max_in_flight must be >= 1".into()));
        }
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(60)))
            .build()
            .into();
        Ok(Self {
            url: format!("{}/embeddings", endpoint.trim_end_matches('/')),
            model: model.to_string(),
            batch_size,
            max_in_flight,
            backoff,
            api_key,
            agent,
        })
    }

    fn post_once(&self, texts: &[String]) -> std::result::Result<Vec<Vec<f64>>, String> {
        let mut req = self.agent.post(&self.url);
        if let Some(k) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {k}"));
        }
        let mut resp = req
            .send_json(EmbeddingRequest {
                model: &self.model,
                input: texts,
            })
            .map_err(|e| format!("request failed: {e}"))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(format!("HTTP status {}", status.as_u16()));
        }
        let body: EmbeddingResponse = resp.body_mut().read_json().map_err(|e| format!("bad response body: {e}"))?;
        let mut out: Vec<Option<Vec<f64>>> = vec![None; texts.len()];
        for d in body.data {
            let slot = out.get_mut(d.index).ok_or(format!("response index {} out of range", d.index))?;
            *slot = Some(d.embedding.into_iter().map(as_f32_precision).collect());
        }
        out.into_iter()
            .enumerate()
            .map(|(i, v)| v.ok_or(format!("response is missing index {i}")))
            .collect()
    }

    fn post_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        let mut last = String::new();
        for attempt in 0..HTTP_ATTEMPTS {
            if attempt > 0 {
                std::thread::sleep(self.backoff * 2u32.pow(attempt - 1));
            }
            match self.post_once(texts) {
                Ok(v) => return Ok(v),
                Err(e) => {
                    log::warn!("embedding request attempt {} of {HTTP_ATTEMPTS} failed: {e}", attempt + 1);
                    last = e;
                }
            }
        }
        Err(Error::Provider(format!("{} after {HTTP_ATTEMPTS} attempts: {last}", self.url)))
    }
}

impl EmbeddingProvider for HttpProvider {
    fn source_id(&self) -> String {
        format!("http:{}", self.url)
    }

    fn model(&self) -> &str {
        &self.model
    }

    fn embed(&self, _nodes: &[usize], texts: &[String]) -> Result<DenseMatrix> {
        if texts.is_empty() {
            return Err(Error::Empty("embedding inputs"));
        }
        let batches: Vec<&[String]> = texts.chunks(self.batch_size).collect();
        let mut vectors: Vec<Vec<f64>> = Vec::with_capacity(texts.len());
        let mut dim: Option<usize> = None;
        for wave in batches.chunks(self.max_in_flight) {
            let results: Vec<Result<Vec<Vec<f64>>>> = std::thread::scope(|s| {
                let handles: Vec<_> = wave.iter().map(|b| s.spawn(move || self.post_batch(b))).collect();
                handles.into_iter().map(|h| h.join().expect("embedding worker panicked")).collect()
            });
            for r in results {
                for v in r? {
                    match dim {
                        None => dim = Some(v.len()),
                        Some(d) if d != v.len() => return Err(Error::DimensionDrift { expected: d, got: v.len() }),
                        _ => {}
                    }
                    vectors.push(v);
                }
            }
        }
        let d = dim.unwrap_or(0);
        if d == 0 {
            return Err(Error::Provider("provider returned empty vectors".into()));
        }
        DenseMatrix::from_vec(vectors.len(), d, vectors.concat())
    }
}

pub type CacheKey = [u8; 32];

pub fn cache_key(source_id: &str, model: &str, prompt: &str) -> CacheKey {
    let mut h = Sha256::new();
    h.update(source_id.as_bytes());
    h.update([0]);
    h.update(model.as_bytes());
    h.update([0]);
    h.update(prompt.as_bytes());
    h.finalize().into()
}

/// Append-only file of `[32-byte key][u32 dim][dim × f32]` records.
pub struct EmbeddingCache {
    path: PathBuf,
    entries: HashMap<CacheKey, Vec<f32>>,
}

fn parse_cache(bytes: &[u8]) -> std::result::Result<HashMap<CacheKey, Vec<f32>>, String> {
    let mut entries = HashMap::new();
    let mut at = 0;
    let mut record = 0;
    while at < bytes.len() {
        if bytes.len() - at < 36 {
            return Err(format!("record {record}: truncated header"));
        }
        let key: CacheKey = bytes[at..at + 32].try_into().expect("32 bytes");
        let dim = u32::from_le_bytes(bytes[at + 32..at + 36].try_into().expect("4 bytes")) as usize;
        let end = at + 36 + dim * 4;
        if dim == 0 || end > bytes.len() {
            return Err(format!("record {record}: bad record length (dim {dim})"));
        }
        let v = bytes[at + 36..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        entries.insert(key, v);
        at = end;
        record += 1;
    }
    Ok(entries)
}

impl EmbeddingCache {
    /// Loads `path` if it exists. A corrupted file is reported and replaced
    /// by an empty cache.
    pub fn open(path: &Path) -> Result<Self> {
        let entries = match std::fs::read(path) {
            Ok(bytes) => match parse_cache(&bytes) {
                Ok(e) => e,
                Err(msg) => {
                    log::warn!("embedding cache {} is corrupted ({msg}); rebuilding", path.display());
                    std::fs::write(path, []).map_err(|e| Error::io(path, e))?;
                    HashMap::new()
                }
            },
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => HashMap::new(),
            Err(e) => return Err(Error::io(path, e)),
        };
        Ok(Self {
            path: path.to_path_buf(),
            entries,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, key: &CacheKey) -> Option<&[f32]> {
        self.entries.get(key).map(Vec::as_slice)
    }

    fn append(&mut self, records: Vec<(CacheKey, Vec<f32>)>) -> Result<()> {
        let mut buf = Vec::new();
        for (k, v) in &records {
            buf.extend_from_slice(k);
            buf.extend_from_slice(&(v.len() as u32).to_le_bytes());
            for x in v {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| Error::io(&self.path, e))?;
        f.write_all(&buf).map_err(|e| Error::io(&self.path, e))?;
        self.entries.extend(records);
        Ok(())
    }
}

/// Embeddings for `nodes` whose inputs are produced by `render`. Cached
/// prompts skip the provider; identical prompts are sent once. Providers
/// that are not text-keyed bypass the cache.
pub fn get_or_embed<F>(
    provider: &dyn EmbeddingProvider,
    cache: Option<&mut EmbeddingCache>,
    nodes: &[usize],
    render: F,
) -> Result<DenseMatrix>
where
    F: Fn(usize) -> Result<String>,
{
    let texts = nodes.iter().map(|&v| render(v)).collect::<Result<Vec<String>>>()?;
    let cache = match cache {
        Some(c) if provider.text_keyed() => c,
        _ => return embed_texts(provider, nodes, &texts),
    };
    let (sid, model) = (provider.source_id(), provider.model().to_string());
    let keys: Vec<CacheKey> = texts.iter().map(|t| cache_key(&sid, &model, t)).collect();
    let mut miss_nodes = Vec::new();
    let mut miss_texts = Vec::new();
    let mut miss_keys: Vec<CacheKey> = Vec::new();
    for (i, k) in keys.iter().enumerate() {
        if cache.get(k).is_none() && !miss_keys.contains(k) {
            miss_keys.push(*k);
            miss_nodes.push(nodes[i]);
            miss_texts.push(texts[i].clone());
        }
    }
    if !miss_keys.is_empty() {
        let fresh = embed_texts(provider, &miss_nodes, &miss_texts)?;
        let records = miss_keys
            .into_iter()
            .enumerate()
            .map(|(r, k)| (k, fresh.row(r).iter().map(|&x| x as f32).collect()))
            .collect();
        cache.append(records)?;
    }
    let rows: Vec<Vec<f64>> = keys
        .iter()
        .map(|k| cache.get(k).expect("filled above").iter().map(|&x| f64::from(x)).collect())
        .collect();
    let dim = rows[0].len();
    if let Some(r) = rows.iter().find(|r| r.len() != dim) {
        return Err(Error::DimensionDrift { expected: dim, got: r.len() });
    }
    DenseMatrix::from_rows(&rows)
}
