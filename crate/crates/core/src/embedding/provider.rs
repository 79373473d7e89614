use std::collections::HashMap;
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::{norm, EmbeddingProvider, Pooling, ProviderDescriptor, ProviderError, DEFAULT_DIMENSION};

/// Deterministic stand-in for a sentence encoder: `sha256(seed_le || text)`
/// seeds a ChaCha8 stream, `dimension` standard normals are drawn and the
/// result is scaled to unit length. Unrelated texts get unrelated vectors.
#[derive(Debug, Clone)]
pub struct MockProvider {
    seed: u64,
    descriptor: ProviderDescriptor,
}

impl MockProvider {
    pub fn new(seed: u64, dimension: usize) -> Self {
        assert!(dimension >= 2, "embedding dimension must be at least 2");
        Self {
            seed,
            descriptor: ProviderDescriptor {
                provider_id: format!("mock-s{seed}-d{dimension}"),
                dimension,
                pooling: Pooling::Native,
            },
        }
    }

    pub fn vector(&self, text: &str) -> Vec<f64> {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(text.as_bytes());
        let digest = h.finalize();
        let mut first = [0u8; 8];
        first.copy_from_slice(&digest[..8]);
        let mut rng = ChaCha8Rng::seed_from_u64(u64::from_le_bytes(first));
        let raw: Vec<f64> = (0..self.descriptor.dimension)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let n = norm(&raw);
        raw.into_iter().map(|v| v / n).collect()
    }
}

impl EmbeddingProvider for MockProvider {
    fn descriptor(&self) -> &ProviderDescriptor {
        &self.descriptor
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, ProviderError> {
        Ok(texts.iter().map(|t| self.vector(t)).collect())
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Lexical encoder: character 1- to 3-grams hashed into `dimension` signed
/// buckets, then L2-normalized. Texts sharing wording land close together,
/// which is enough for the baseline classifier and for offline fixtures.
#[derive(Debug, Clone)]
pub struct HashedNgramProvider {
    descriptor: ProviderDescriptor,
}

impl HashedNgramProvider {
    pub fn new(dimension: usize) -> Self {
        assert!(dimension >= 2, "embedding dimension must be at least 2");
        Self {
            descriptor: ProviderDescriptor {
                provider_id: format!("ngram-v1-d{dimension}"),
                dimension,
                pooling: Pooling::MeanTokens,
            },
        }
    }

    pub fn vector(&self, text: &str) -> Vec<f64> {
        let dim = self.descriptor.dimension;
        let chars: Vec<char> = text.chars().filter(|c| !c.is_whitespace()).collect();
        let mut v = vec![0.0; dim];
        let mut buf = [0u8; 16];
        for n in 1..=3usize {
            let weight = if n == 1 { 0.5 } else { 1.0 };
            for w in chars.windows(n) {
                let mut key = Vec::with_capacity(1 + 4 * n);
                key.push(n as u8);
                for c in w {
                    key.extend_from_slice(c.encode_utf8(&mut buf).as_bytes());
                }
                let h = fnv1a(&key);
                let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
                v[(h % dim as u64) as usize] += sign * weight;
            }
        }
        let n = norm(&v);
        if n > 0.0 {
            v.iter_mut().for_each(|x| *x /= n);
        }
        v
    }
}

impl EmbeddingProvider for HashedNgramProvider {
    fn descriptor(&self) -> &ProviderDescriptor {
        &self.descriptor
    }

    fn max_batch_size(&self) -> usize {
        1024
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, ProviderError> {
        Ok(texts.iter().map(|t| self.vector(t)).collect())
    }
}

/// Serves vectors from an in-memory table; unknown texts are an error.
#[derive(Debug, Clone)]
pub struct LookupProvider {
    descriptor: ProviderDescriptor,
    table: HashMap<String, Vec<f64>>,
}

impl LookupProvider {
    pub fn new(provider_id: impl Into<String>, dimension: usize) -> Self {
        Self {
            descriptor: ProviderDescriptor {
                provider_id: provider_id.into(),
                dimension,
                pooling: Pooling::Native,
            },
            table: HashMap::new(),
        }
    }

    pub fn insert(&mut self, text: impl Into<String>, vector: Vec<f64>) {
        assert_eq!(vector.len(), self.descriptor.dimension);
        self.table.insert(text.into(), vector);
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }
}

impl EmbeddingProvider for LookupProvider {
    fn descriptor(&self) -> &ProviderDescriptor {
        &self.descriptor
    }

    fn max_batch_size(&self) -> usize {
        usize::MAX
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, ProviderError> {
        texts
            .iter()
            .map(|t| {
                self.table
                    .get(*t)
                    .cloned()
                    .ok_or_else(|| ProviderError(format!("no vector for {t:?}")))
            })
            .collect()
    }
}

/// Declares a provider but refuses to compute; for cache-only runs.
#[derive(Debug, Clone)]
pub struct DisabledProvider {
    descriptor: ProviderDescriptor,
}

impl DisabledProvider {
    pub fn new(descriptor: ProviderDescriptor) -> Self {
        Self { descriptor }
    }
}

impl EmbeddingProvider for DisabledProvider {
    fn descriptor(&self) -> &ProviderDescriptor {
        &self.descriptor
    }

    fn embed(&self, _texts: &[&str]) -> Result<Vec<Vec<f64>>, ProviderError> {
        Err(ProviderError(format!(
            "provider {} is disabled (offline) and the text is not cached",
            self.descriptor.provider_id
        )))
    }
}

/// Remote encoder speaking the common `POST {model, input: [...]}` ->
/// `{data: [{embedding, index}]}` embeddings schema, e.g. a server hosting
/// a Japanese SBERT model.
pub struct HttpProvider {
    descriptor: ProviderDescriptor,
    endpoint: String,
    model: String,
    api_key: Option<String>,
    batch_size: usize,
    agent: ureq::Agent,
}

impl HttpProvider {
    pub fn new(
        provider_id: impl Into<String>,
        endpoint: impl Into<String>,
        model: impl Into<String>,
        dimension: usize,
        batch_size: usize,
        api_key: Option<String>,
    ) -> Self {
        let config = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(120)))
            .build();
        Self {
            descriptor: ProviderDescriptor {
                provider_id: provider_id.into(),
                dimension,
                pooling: Pooling::MeanTokens,
            },
            endpoint: endpoint.into(),
            model: model.into(),
            api_key,
            batch_size: batch_size.max(1),
            agent: ureq::Agent::new_with_config(config),
        }
    }
}

impl EmbeddingProvider for HttpProvider {
    fn descriptor(&self) -> &ProviderDescriptor {
        &self.descriptor
    }

    fn max_batch_size(&self) -> usize {
        self.batch_size
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, ProviderError> {
        let body = json!({"model": self.model, "input": texts}).to_string();
        let mut req = self
            .agent
            .post(&self.endpoint)
            .header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = req.send(body).map_err(|e| ProviderError(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| ProviderError(e.to_string()))?;
        if status >= 400 {
            return Err(ProviderError(format!(
                "HTTP {status}: {}",
                text.chars().take(200).collect::<String>()
            )));
        }
        let root: Value = serde_json::from_str(&text).map_err(|e| ProviderError(e.to_string()))?;
        let data = root
            .get("data")
            .and_then(Value::as_array)
            .ok_or_else(|| ProviderError("response has no `data` array".into()))?;
        let mut out = vec![None; texts.len()];
        for (pos, item) in data.iter().enumerate() {
            let idx = item.get("index").and_then(Value::as_u64).map_or(pos, |i| i as usize);
            let emb = item
                .get("embedding")
                .and_then(Value::as_array)
                .ok_or_else(|| ProviderError(format!("item {pos} has no `embedding`")))?;
            let v: Option<Vec<f64>> = emb.iter().map(Value::as_f64).collect();
            let slot = out
                .get_mut(idx)
                .ok_or_else(|| ProviderError(format!("index {idx} out of range")))?;
            *slot = Some(v.ok_or_else(|| ProviderError(format!("item {pos}: non-numeric value")))?);
        }
        out.into_iter()
            .enumerate()
            .map(|(i, v)| v.ok_or_else(|| ProviderError(format!("no embedding returned for text {i}"))))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Mock,
    Ngram,
    Http,
}

/// `[provider]` section of the pipeline configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    #[serde(default)]
    pub provider_id: Option<String>,
    #[serde(default = "default_dimension")]
    pub dimension: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub model: Option<String>,
    /// Name of the environment variable holding the bearer token.
    #[serde(default)]
    pub api_key_env: Option<String>,
}

fn default_dimension() -> usize {
    DEFAULT_DIMENSION
}

fn default_batch() -> usize {
    64
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            kind: ProviderKind::Ngram,
            provider_id: None,
            dimension: DEFAULT_DIMENSION,
            batch_size: default_batch(),
            seed: 0,
            endpoint: None,
            model: None,
            api_key_env: None,
        }
    }
}

/// Rebuilds a built-in offline provider from its `provider_id`, so stored
/// vectors can be extended without the original configuration.
pub fn local_provider_for_id(id: &str) -> Option<Box<dyn EmbeddingProvider>> {
    if let Some(d) = id.strip_prefix("ngram-v1-d") {
        let dim: usize = d.parse().ok().filter(|&d| d >= 2)?;
        return Some(Box::new(HashedNgramProvider::new(dim)));
    }
    let (seed, dim) = id.strip_prefix("mock-s")?.split_once("-d")?;
    let dim: usize = dim.parse().ok().filter(|&d| d >= 2)?;
    Some(Box::new(MockProvider::new(seed.parse().ok()?, dim)))
}

pub fn provider_from_config(cfg: &ProviderConfig) -> Result<Box<dyn EmbeddingProvider>, ProviderError> {
    if cfg.dimension < 2 {
        return Err(ProviderError("provider dimension must be at least 2".into()));
    }
    match cfg.kind {
        ProviderKind::Mock => Ok(Box::new(MockProvider::new(cfg.seed, cfg.dimension))),
        ProviderKind::Ngram => Ok(Box::new(HashedNgramProvider::new(cfg.dimension))),
        ProviderKind::Http => {
            let endpoint = cfg
                .endpoint
                .clone()
                .ok_or_else(|| ProviderError("http provider needs `endpoint`".into()))?;
            let model = cfg.model.clone().unwrap_or_default();
            let id = cfg
                .provider_id
                .clone()
                .unwrap_or_else(|| format!("http-{model}-d{}", cfg.dimension));
            let key = cfg.api_key_env.as_ref().and_then(|v| std::env::var(v).ok());
            Ok(Box::new(HttpProvider::new(
                id,
                endpoint,
                model,
                cfg.dimension,
                cfg.batch_size,
                key,
            )))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::dot;

    #[test]
    fn mock_vectors_are_unit_length() {
        let p = MockProvider::new(11, 768);
        for t in ["abc", "自衛隊", "a much longer sentence with many words"] {
            assert!((norm(&p.vector(t)) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn mock_depends_on_seed() {
        assert_ne!(MockProvider::new(1, 8).vector("x"), MockProvider::new(2, 8).vector("x"));
    }

    #[test]
    fn ngram_similarity_tracks_wording() {
        let p = HashedNgramProvider::new(256);
        let a = p.vector("原発の再稼働に反対です。");
        let b = p.vector("原発の再稼働に賛成です。");
        let c = p.vector("予算委員会の日程を確認します。");
        assert!(dot(&a, &b) > dot(&a, &c));
        assert!((norm(&a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lookup_rejects_unknown_text() {
        let mut p = LookupProvider::new("t", 2);
        p.insert("a", vec![1.0, 0.0]);
        assert_eq!(p.embed(&["a"]).unwrap(), vec![vec![1.0, 0.0]]);
        assert!(p.embed(&["b"]).is_err());
    }

    #[test]
    fn config_builds_providers() {
        let cfg: ProviderConfig = toml::from_str("kind = \"mock\"\nseed = 5\ndimension = 16").unwrap();
        assert_eq!(provider_from_config(&cfg).unwrap().descriptor().provider_id, "mock-s5-d16");
        let http: ProviderConfig = toml::from_str("kind = \"http\"").unwrap();
        assert!(provider_from_config(&http).is_err());
        assert!(toml::from_str::<ProviderConfig>("kind = \"ngram\"\nbogus = 1").is_err());
    }

    #[test]
    fn local_providers_rebuild_from_their_id() {
        for p in [
            Box::new(HashedNgramProvider::new(64)) as Box<dyn EmbeddingProvider>,
            Box::new(MockProvider::new(9, 32)),
        ] {
            let id = &p.descriptor().provider_id;
            let q = local_provider_for_id(id).unwrap();
            assert_eq!(q.descriptor(), p.descriptor());
            assert_eq!(q.embed(&["テスト"]).unwrap(), p.embed(&["テスト"]).unwrap());
        }
        assert!(local_provider_for_id("http-x-d768").is_none());
        assert!(local_provider_for_id("ngram-v1-dx").is_none());
    }
}
