//! Text embedding: the provider contract, built-in providers, the on-disk
//! cache, and mean aggregation.

mod cache;
mod provider;

pub use cache::{CacheError, EmbeddingCache};
pub use provider::{
    local_provider_for_id, provider_from_config, DisabledProvider, HashedNgramProvider, HttpProvider,
    LookupProvider, MockProvider, ProviderConfig, ProviderKind,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Dimension of the reference sentence encoder.
pub const DEFAULT_DIMENSION: usize = 768;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub provider_id: String,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>, provider_id: impl Into<String>) -> Self {
        Self {
            values,
            provider_id: provider_id.into(),
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        norm(&self.values)
    }

    /// Unit-length copy. A zero vector is returned unchanged.
    pub fn normalized(&self) -> Self {
        let n = self.norm();
        if n == 0.0 {
            return self.clone();
        }
        Self {
            values: self.values.iter().map(|v| v / n).collect(),
            provider_id: self.provider_id.clone(),
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Pooling {
    MeanTokens,
    Native,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderDescriptor {
    pub provider_id: String,
    pub dimension: usize,
    pub pooling: Pooling,
}

#[derive(Debug, Error)]
#[error("{0}")]
pub struct ProviderError(pub String);

/// Synchronous batch embedding. Implementations must return exactly one
/// vector of `descriptor().dimension` finite values per input text.
pub trait EmbeddingProvider: Send + Sync {
    fn descriptor(&self) -> &ProviderDescriptor;

    fn max_batch_size(&self) -> usize {
        64
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, ProviderError>;
}

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("text {index} is empty")]
    EmptyText { index: usize },
    #[error("provider {provider_id} failed on text {index}: {source}")]
    Provider {
        provider_id: String,
        index: usize,
        #[source]
        source: ProviderError,
    },
    #[error("provider contract violation at text {index}: {detail}")]
    Contract { index: usize, detail: String },
    #[error("cannot average an empty list of vectors")]
    Empty,
    #[error("vectors from different providers or dimensions: {0}")]
    Mixed(String),
    #[error(transparent)]
    Cache(#[from] CacheError),
}

/// Provider outputs are rounded to `f32` so cached and freshly computed
/// vectors are bit-identical.
fn quantize(values: Vec<f64>) -> Vec<f64> {
    values.into_iter().map(|v| v as f32 as f64).collect()
}

/// Embeds `texts` in order. Cache hits never reach the provider; misses are
/// sent in chunks of at most `max_batch_size` and written back.
pub fn embed_batch<S: AsRef<str>>(
    texts: &[S],
    provider: &dyn EmbeddingProvider,
    cache: Option<&EmbeddingCache>,
) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
    let desc = provider.descriptor();
    if let Some(c) = cache {
        c.check_descriptor(desc)?;
    }
    for (index, t) in texts.iter().enumerate() {
        if t.as_ref().is_empty() {
            return Err(EmbeddingError::EmptyText { index });
        }
    }

    let mut out: Vec<Option<Vec<f64>>> = texts
        .iter()
        .map(|t| cache.and_then(|c| c.get(t.as_ref())))
        .collect();
    let missing: Vec<usize> = (0..texts.len()).filter(|&i| out[i].is_none()).collect();

    for chunk in missing.chunks(provider.max_batch_size().max(1)) {
        let batch: Vec<&str> = chunk.iter().map(|&i| texts[i].as_ref()).collect();
        let vectors = provider
            .embed(&batch)
            .map_err(|source| EmbeddingError::Provider {
                provider_id: desc.provider_id.clone(),
                index: chunk[0],
                source,
            })?;
        if vectors.len() != chunk.len() {
            return Err(EmbeddingError::Contract {
                index: chunk[0],
                detail: format!("{} texts in, {} vectors out", chunk.len(), vectors.len()),
            });
        }
        for (&i, v) in chunk.iter().zip(vectors) {
            if v.len() != desc.dimension {
                return Err(EmbeddingError::Contract {
                    index: i,
                    detail: format!("dimension {} != declared {}", v.len(), desc.dimension),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(EmbeddingError::Contract {
                    index: i,
                    detail: "non-finite component".into(),
                });
            }
            let v = quantize(v);
            if let Some(c) = cache {
                c.put(texts[i].as_ref(), &v)?;
            }
            out[i] = Some(v);
        }
    }

    Ok(out
        .into_iter()
        .map(|v| EmbeddingVector::new(v.expect("every slot filled"), desc.provider_id.clone()))
        .collect())
}

/// Componentwise mean, summed in input order.
pub fn mean_vector(vectors: &[EmbeddingVector]) -> Result<EmbeddingVector, EmbeddingError> {
    let first = vectors.first().ok_or(EmbeddingError::Empty)?;
    let dim = first.dim();
    let mut sum = vec![0.0; dim];
    for v in vectors {
        if v.provider_id != first.provider_id || v.dim() != dim {
            return Err(EmbeddingError::Mixed(format!(
                "{}/{} vs {}/{}",
                first.provider_id,
                dim,
                v.provider_id,
                v.dim()
            )));
        }
        for (s, x) in sum.iter_mut().zip(&v.values) {
            *s += x;
        }
    }
    let n = vectors.len() as f64;
    Ok(EmbeddingVector::new(
        sum.into_iter().map(|s| s / n).collect(),
        first.provider_id.clone(),
    ))
}
