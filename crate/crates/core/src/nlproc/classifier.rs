//! Five-way sentence-type classification.
//!
//! [`LinearModel`] is a multinomial logistic regression over provider
//! embeddings. Any other model (a fine-tuned transformer behind a service,
//! say) plugs in by implementing [`SentenceClassifier`].

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{LabeledSet, SentenceType};
use crate::embedding::{embed_batch, EmbeddingCache, EmbeddingError, EmbeddingProvider, ProviderDescriptor};
use crate::util::atomic_write;

pub const WEIGHTS_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub label: SentenceType,
    /// Softmax probability of `label`.
    pub confidence: f64,
}

#[derive(Debug, Error)]
pub enum ClassifyError {
    #[error("training set needs at least two distinct labels, found {0}")]
    SingleClass(usize),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error("classifier weights {path}: {detail}")]
    Weights { path: String, detail: String },
    #[error("classifier was trained on {trained} (dim {trained_dim}) but the active provider is {active} (dim {active_dim})")]
    ProviderMismatch {
        trained: String,
        trained_dim: usize,
        active: String,
        active_dim: usize,
    },
}

pub trait SentenceClassifier {
    fn predict(&self, texts: &[&str]) -> Result<Vec<Prediction>, ClassifyError>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub seed: u64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            epochs: 400,
            learning_rate: 2.0,
            l2: 1e-4,
        }
    }
}

/// Weights of a linear softmax head; rows follow `labels`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub schema_version: u32,
    pub provider_id: String,
    pub dimension: usize,
    pub labels: Vec<SentenceType>,
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub train_accuracy: f64,
    pub eval_macro_f1: Option<f64>,
    pub eval_accuracy: Option<f64>,
}

impl LinearModel {
    fn scores(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.bias)
            .map(|(w, b)| b + w.iter().zip(x).map(|(a, v)| a * v).sum::<f64>())
            .collect()
    }

    /// Argmax over softmax scores; on exact ties the label with the lowest
    /// ordinal wins.
    pub fn predict_vector(&self, x: &[f64]) -> Prediction {
        let probs = softmax(&self.scores(x));
        let mut best = 0;
        for k in 1..probs.len() {
            let better = probs[k] > probs[best]
                || (probs[k] == probs[best] && self.labels[k] < self.labels[best]);
            if better {
                best = k;
            }
        }
        Prediction {
            label: self.labels[best],
            confidence: probs[best],
        }
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let mut bytes = serde_json::to_vec(self).expect("plain data");
        bytes.push(b'\n');
        atomic_write(path, &bytes)
    }

    /// Loads weights and refuses them unless they match `active`'s provider
    /// id and dimension.
    pub fn load(path: &Path, active: &ProviderDescriptor) -> Result<Self, ClassifyError> {
        let werr = |detail: String| ClassifyError::Weights {
            path: path.display().to_string(),
            detail,
        };
        let text = fs::read_to_string(path).map_err(|e| werr(e.to_string()))?;
        let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| werr(e.to_string()))?;
        let version = value.get("schema_version").and_then(|v| v.as_u64());
        if version != Some(WEIGHTS_SCHEMA_VERSION as u64) {
            return Err(werr(format!("unsupported schema_version {version:?}")));
        }
        let model: LinearModel = serde_json::from_value(value).map_err(|e| werr(e.to_string()))?;
        let k = model.labels.len();
        if k < 2 || model.weights.len() != k || model.bias.len() != k {
            return Err(werr(format!(
                "{k} labels but {} weight rows and {} biases",
                model.weights.len(),
                model.bias.len()
            )));
        }
        if let Some(row) = model.weights.iter().position(|r| r.len() != model.dimension) {
            return Err(werr(format!("weight row {row} does not have {} columns", model.dimension)));
        }
        if model.provider_id != active.provider_id || model.dimension != active.dimension {
            return Err(ClassifyError::ProviderMismatch {
                trained: model.provider_id,
                trained_dim: model.dimension,
                active: active.provider_id.clone(),
                active_dim: active.dimension,
            });
        }
        Ok(model)
    }
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// A [`LinearModel`] bound to the provider that produces its features.
pub struct EmbeddingClassifier<'a> {
    pub model: LinearModel,
    provider: &'a dyn EmbeddingProvider,
    cache: Option<&'a EmbeddingCache>,
}

impl<'a> EmbeddingClassifier<'a> {
    pub fn new(
        model: LinearModel,
        provider: &'a dyn EmbeddingProvider,
        cache: Option<&'a EmbeddingCache>,
    ) -> Result<Self, ClassifyError> {
        let d = provider.descriptor();
        if model.provider_id != d.provider_id || model.dimension != d.dimension {
            return Err(ClassifyError::ProviderMismatch {
                trained: model.provider_id,
                trained_dim: model.dimension,
                active: d.provider_id.clone(),
                active_dim: d.dimension,
            });
        }
        Ok(Self {
            model,
            provider,
            cache,
        })
    }
}

impl SentenceClassifier for EmbeddingClassifier<'_> {
    fn predict(&self, texts: &[&str]) -> Result<Vec<Prediction>, ClassifyError> {
        let vectors = embed_batch(texts, self.provider, self.cache)?;
        Ok(vectors
            .iter()
            .map(|v| self.model.predict_vector(&v.values))
            .collect())
    }
}

/// Fits a softmax regression with full-batch gradient descent. The seed
/// fixes the initial weights; everything else is deterministic.
pub fn train_classifier(
    train: &LabeledSet,
    eval: Option<&LabeledSet>,
    provider: &dyn EmbeddingProvider,
    cache: Option<&EmbeddingCache>,
    opts: &TrainOptions,
) -> Result<(LinearModel, TrainReport), ClassifyError> {
    let labels = train.distinct_labels();
    if labels.len() < 2 {
        return Err(ClassifyError::SingleClass(labels.len()));
    }
    let texts: Vec<&str> = train.items.iter().map(|(t, _)| t.as_str()).collect();
    let xs: Vec<Vec<f64>> = embed_batch(&texts, provider, cache)?
        .into_iter()
        .map(|v| v.values)
        .collect();
    let ys: Vec<usize> = train
        .items
        .iter()
        .map(|(_, l)| labels.iter().position(|x| x == l).expect("label collected"))
        .collect();

    let desc = provider.descriptor();
    let (k, d, n) = (labels.len(), desc.dimension, xs.len() as f64);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut w: Vec<Vec<f64>> = (0..k)
        .map(|_| (0..d).map(|_| rng.random_range(-1e-3..1e-3)).collect())
        .collect();
    let mut b = vec![0.0; k];

    for _ in 0..opts.epochs {
        let mut gw = vec![vec![0.0; d]; k];
        let mut gb = vec![0.0; k];
        for (x, &y) in xs.iter().zip(&ys) {
            let z: Vec<f64> = (0..k)
                .map(|c| b[c] + w[c].iter().zip(x).map(|(a, v)| a * v).sum::<f64>())
                .collect();
            let p = softmax(&z);
            for c in 0..k {
                let g = p[c] - if c == y { 1.0 } else { 0.0 };
                gb[c] += g;
                for (acc, v) in gw[c].iter_mut().zip(x) {
                    *acc += g * v;
                }
            }
        }
        for c in 0..k {
            for (wj, gj) in w[c].iter_mut().zip(&gw[c]) {
                *wj -= opts.learning_rate * (gj / n + opts.l2 * *wj);
            }
            b[c] -= opts.learning_rate * gb[c] / n;
        }
    }

    let model = LinearModel {
        schema_version: WEIGHTS_SCHEMA_VERSION,
        provider_id: desc.provider_id.clone(),
        dimension: d,
        labels: labels.clone(),
        weights: w,
        bias: b,
    };
    let train_pred: Vec<SentenceType> = xs.iter().map(|x| model.predict_vector(x).label).collect();
    let train_gold: Vec<SentenceType> = train.items.iter().map(|(_, l)| *l).collect();
    let mut report = TrainReport {
        train_accuracy: accuracy(&train_gold, &train_pred),
        eval_macro_f1: None,
        eval_accuracy: None,
    };
    if let Some(eval) = eval {
        let texts: Vec<&str> = eval.items.iter().map(|(t, _)| t.as_str()).collect();
        let vecs = embed_batch(&texts, provider, cache)?;
        let pred: Vec<SentenceType> = vecs.iter().map(|v| model.predict_vector(&v.values).label).collect();
        let gold: Vec<SentenceType> = eval.items.iter().map(|(_, l)| *l).collect();
        report.eval_macro_f1 = Some(macro_f1(&gold, &pred));
        report.eval_accuracy = Some(accuracy(&gold, &pred));
    }
    Ok((model, report))
}

pub fn accuracy(gold: &[SentenceType], pred: &[SentenceType]) -> f64 {
    assert_eq!(gold.len(), pred.len());
    if gold.is_empty() {
        return 0.0;
    }
    gold.iter().zip(pred).filter(|(g, p)| g == p).count() as f64 / gold.len() as f64
}

/// Unweighted mean of per-class F1 over every class seen in `gold` or
/// `pred`. A class with no true positives scores 0.
pub fn macro_f1(gold: &[SentenceType], pred: &[SentenceType]) -> f64 {
    assert_eq!(gold.len(), pred.len());
    let classes: Vec<SentenceType> = SentenceType::ALL
        .into_iter()
        .filter(|c| gold.contains(c) || pred.contains(c))
        .collect();
    if classes.is_empty() {
        return 0.0;
    }
    let f1s = classes.iter().map(|c| {
        let tp = gold.iter().zip(pred).filter(|(g, p)| *g == c && *p == c).count() as f64;
        let fp = gold.iter().zip(pred).filter(|(g, p)| *g != c && *p == c).count() as f64;
        let fneg = gold.iter().zip(pred).filter(|(g, p)| *g == c && *p != c).count() as f64;
        if tp == 0.0 {
            0.0
        } else {
            2.0 * tp / (2.0 * tp + fp + fneg)
        }
    });
    f1s.sum::<f64>() / classes.len() as f64
}

/// Shuffles indices with `seed` and splits each label's items so that
/// `eval_fraction` of them (rounded) go to the second set.
pub fn stratified_split(set: &LabeledSet, eval_fraction: f64, seed: u64) -> (LabeledSet, LabeledSet) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut eval = Vec::new();
    for label in set.distinct_labels() {
        let mut idx: Vec<usize> = (0..set.items.len())
            .filter(|&i| set.items[i].1 == label)
            .collect();
        idx.shuffle(&mut rng);
        let n_eval = (idx.len() as f64 * eval_fraction).round() as usize;
        for (pos, i) in idx.into_iter().enumerate() {
            if pos < n_eval {
                eval.push(set.items[i].clone());
            } else {
                train.push(set.items[i].clone());
            }
        }
    }
    (
        LabeledSet {
            items: train,
            provenance: format!("{} (train split, seed {seed})", set.provenance),
        },
        LabeledSet {
            items: eval,
            provenance: format!("{} (eval split, seed {seed})", set.provenance),
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{LookupProvider, MockProvider};
    use SentenceType::*;

    fn set(items: &[(&str, SentenceType)]) -> LabeledSet {
        LabeledSet {
            items: items.iter().map(|(t, l)| (t.to_string(), *l)).collect(),
            provenance: "test".into(),
        }
    }

    /// Two well-separated clusters: centre ±3 on the first axis plus a small
    /// mock-provider perturbation.
    fn clustered() -> (LabeledSet, LookupProvider) {
        let mock = MockProvider::new(99, 16);
        let mut provider = LookupProvider::new("clusters", 16);
        let mut items = Vec::new();
        for i in 0..20 {
            let label = if i % 2 == 0 { Opinion } else { Fact };
            let text = format!("item {i}");
            let mut v: Vec<f64> = mock.vector(&text).iter().map(|x| 0.3 * x).collect();
            v[0] += if label == Opinion { 3.0 } else { -3.0 };
            provider.insert(text.clone(), v);
            items.push((text, label));
        }
        (LabeledSet { items, provenance: "clusters".into() }, provider)
    }

    #[test]
    fn separable_toy_set_is_fit_exactly() {
        let (data, provider) = clustered();
        let (_, report) = train_classifier(&data, None, &provider, None, &TrainOptions::default()).unwrap();
        assert_eq!(report.train_accuracy, 1.0);
    }

    #[test]
    fn single_label_is_rejected() {
        let p = MockProvider::new(0, 8);
        let data = set(&[("a", Opinion), ("b", Opinion)]);
        assert!(matches!(
            train_classifier(&data, None, &p, None, &TrainOptions::default()),
            Err(ClassifyError::SingleClass(1))
        ));
    }

    #[test]
    fn training_is_deterministic() {
        let (data, provider) = clustered();
        let opts = TrainOptions { seed: 4, epochs: 30, ..Default::default() };
        let (a, _) = train_classifier(&data, None, &provider, None, &opts).unwrap();
        let (b, _) = train_classifier(&data, None, &provider, None, &opts).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ties_go_to_lowest_ordinal() {
        let model = LinearModel {
            schema_version: WEIGHTS_SCHEMA_VERSION,
            provider_id: "p".into(),
            dimension: 2,
            labels: vec![Question, Opinion, Fact],
            weights: vec![vec![0.0; 2]; 3],
            bias: vec![0.0; 3],
        };
        let p = model.predict_vector(&[1.0, 1.0]);
        assert_eq!(p.label, Opinion);
        assert!((p.confidence - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn weights_refuse_other_provider() {
        let dir = tempfile::tempdir().unwrap();
        let (data, provider) = clustered();
        let opts = TrainOptions { epochs: 5, ..Default::default() };
        let (model, _) = train_classifier(&data, None, &provider, None, &opts).unwrap();
        let path = dir.path().join("w.json");
        model.save(&path).unwrap();
        assert_eq!(LinearModel::load(&path, provider.descriptor()).unwrap(), model);
        let other = MockProvider::new(0, 32);
        assert!(matches!(
            LinearModel::load(&path, other.descriptor()),
            Err(ClassifyError::ProviderMismatch { .. })
        ));
    }

    #[test]
    fn macro_f1_examples() {
        assert_eq!(macro_f1(&[Opinion, Fact], &[Opinion, Fact]), 1.0);
        // Opinion: tp1 fp0 fn1 -> 2/3; Fact: tp1 fp1 fn0 -> 2/3
        let f = macro_f1(&[Opinion, Opinion, Fact], &[Opinion, Fact, Fact]);
        assert!((f - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn stratified_split_keeps_proportions() {
        let items: Vec<(String, SentenceType)> = (0..50)
            .map(|i| (format!("t{i}"), if i < 20 { Opinion } else { Fact }))
            .collect();
        let data = LabeledSet { items, provenance: "x".into() };
        let (tr, ev) = stratified_split(&data, 0.2, 1);
        assert_eq!(ev.items.len(), 10);
        assert_eq!(ev.items.iter().filter(|(_, l)| *l == Opinion).count(), 4);
        assert_eq!(tr.items.len() + ev.items.len(), 50);
    }
}
