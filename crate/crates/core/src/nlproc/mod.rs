//! Sentence segmentation and sentence-type classification.

mod classifier;
mod segment;

pub use classifier::{
    accuracy, macro_f1, stratified_split, train_classifier, ClassifyError, EmbeddingClassifier,
    LinearModel, Prediction, SentenceClassifier, TrainOptions, TrainReport, WEIGHTS_SCHEMA_VERSION,
};
pub use segment::segment;

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Sentences shorter than this (in characters, after trimming) are dropped
/// before classification.
pub const MIN_SENTENCE_CHARS: usize = 4;

/// Declaration order is the tie-break order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum SentenceType {
    Opinion,
    Fact,
    Question,
    Description,
    Other,
}

impl SentenceType {
    pub const ALL: [SentenceType; 5] = [
        SentenceType::Opinion,
        SentenceType::Fact,
        SentenceType::Question,
        SentenceType::Description,
        SentenceType::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SentenceType::Opinion => "OPINION",
            SentenceType::Fact => "FACT",
            SentenceType::Question => "QUESTION",
            SentenceType::Description => "DESCRIPTION",
            SentenceType::Other => "OTHER",
        }
    }
}

impl fmt::Display for SentenceType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SentenceType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let up = s.trim().to_ascii_uppercase();
        SentenceType::ALL
            .into_iter()
            .find(|t| t.as_str() == up)
            .ok_or_else(|| format!("unknown sentence type {s:?}"))
    }
}

/// A sentence to classify, addressed by speech and position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub speech_id: String,
    pub index: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceUnit {
    pub speech_id: String,
    pub index: usize,
    pub text: String,
    pub label: SentenceType,
    pub confidence: f64,
}

/// Segments a speech and drops sentences under [`MIN_SENTENCE_CHARS`];
/// surviving sentences are indexed contiguously from 0.
pub fn prepare_sentences(speech_id: &str, text: &str) -> Vec<Sentence> {
    segment(text)
        .into_iter()
        .filter(|s| s.chars().count() >= MIN_SENTENCE_CHARS)
        .enumerate()
        .map(|(index, text)| Sentence {
            speech_id: speech_id.to_string(),
            index,
            text,
        })
        .collect()
}

/// Labels each sentence, preserving order.
pub fn classify(
    sentences: &[Sentence],
    classifier: &dyn SentenceClassifier,
) -> Result<Vec<SentenceUnit>, ClassifyError> {
    if sentences.is_empty() {
        return Ok(Vec::new());
    }
    let texts: Vec<&str> = sentences.iter().map(|s| s.text.as_str()).collect();
    let preds = classifier.predict(&texts)?;
    Ok(sentences
        .iter()
        .zip(preds)
        .map(|(s, p)| SentenceUnit {
            speech_id: s.speech_id.clone(),
            index: s.index,
            text: s.text.clone(),
            label: p.label,
            confidence: p.confidence.clamp(0.0, 1.0),
        })
        .collect())
}

/// Keeps only OPINION units, order preserved.
pub fn filter_opinions(units: &[SentenceUnit]) -> Vec<SentenceUnit> {
    units
        .iter()
        .filter(|u| u.label == SentenceType::Opinion)
        .cloned()
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    pub items: Vec<(String, SentenceType)>,
    pub provenance: String,
}

#[derive(Debug, Error)]
pub enum LabeledSetError {
    #[error("reading labeled set {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("labeled set {path}, row {row}: {detail}")]
    Row { path: String, row: usize, detail: String },
    #[error("labeled set {0} has no items")]
    Empty(String),
}

impl LabeledSet {
    /// Reads a tab-separated file with a `text<TAB>label` header row.
    pub fn load_tsv(path: &Path) -> Result<Self, LabeledSetError> {
        let p = path.display().to_string();
        let mut reader = csv::ReaderBuilder::new()
            .delimiter(b'\t')
            .quoting(false)
            .from_path(path)
            .map_err(|e| LabeledSetError::Io {
                path: p.clone(),
                source: std::io::Error::other(e.to_string()),
            })?;
        let headers = reader.headers().map_err(|e| LabeledSetError::Row {
            path: p.clone(),
            row: 0,
            detail: e.to_string(),
        })?;
        let (ti, li) = match (
            headers.iter().position(|h| h == "text"),
            headers.iter().position(|h| h == "label"),
        ) {
            (Some(t), Some(l)) => (t, l),
            _ => {
                return Err(LabeledSetError::Row {
                    path: p,
                    row: 0,
                    detail: "header must name `text` and `label` columns".into(),
                })
            }
        };
        let mut items = Vec::new();
        for (i, rec) in reader.records().enumerate() {
            let row = i + 2;
            let rec = rec.map_err(|e| LabeledSetError::Row {
                path: p.clone(),
                row,
                detail: e.to_string(),
            })?;
            let text = rec.get(ti).unwrap_or("").trim();
            if text.is_empty() {
                return Err(LabeledSetError::Row { path: p, row, detail: "empty text".into() });
            }
            let label: SentenceType = rec
                .get(li)
                .unwrap_or("")
                .parse()
                .map_err(|detail| LabeledSetError::Row { path: p.clone(), row, detail })?;
            items.push((text.to_string(), label));
        }
        if items.is_empty() {
            return Err(LabeledSetError::Empty(p));
        }
        Ok(Self { items, provenance: p })
    }

    /// Distinct gold labels in ordinal order.
    pub fn distinct_labels(&self) -> Vec<SentenceType> {
        self.items
            .iter()
            .map(|(_, l)| *l)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn label_of(&self, text: &str) -> Option<SentenceType> {
        self.items.iter().find(|(t, _)| t == text).map(|(_, l)| *l)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use SentenceType::*;

    fn unit(i: usize, label: SentenceType) -> SentenceUnit {
        SentenceUnit {
            speech_id: "s".into(),
            index: i,
            text: format!("sentence {i}"),
            label,
            confidence: 0.9,
        }
    }

    #[test]
    fn filter_keeps_only_opinions_in_order() {
        let units = vec![unit(0, Fact), unit(1, Opinion), unit(2, Question), unit(3, Opinion)];
        let kept = filter_opinions(&units);
        assert_eq!(kept.iter().map(|u| u.index).collect::<Vec<_>>(), [1, 3]);
        assert_eq!(filter_opinions(&kept), kept);
    }

    #[test]
    fn all_facts_filter_to_nothing() {
        assert!(filter_opinions(&[unit(0, Fact), unit(1, Fact)]).is_empty());
    }

    #[test]
    fn short_sentences_dropped_and_reindexed() {
        let s = prepare_sentences("sp", "はい。原発の再稼働に反対です。うん。次の質問に移ります。");
        let idx: Vec<_> = s.iter().map(|x| (x.index, x.text.as_str())).collect();
        assert_eq!(idx, [(0, "原発の再稼働に反対です。"), (1, "次の質問に移ります。")]);
    }

    struct Constant;
    impl SentenceClassifier for Constant {
        fn predict(&self, texts: &[&str]) -> Result<Vec<Prediction>, ClassifyError> {
            Ok(texts.iter().map(|_| Prediction { label: Question, confidence: 0.7 }).collect())
        }
    }

    #[test]
    fn classify_empty_and_order() {
        assert!(classify(&[], &Constant).unwrap().is_empty());
        let s = prepare_sentences("sp", "一つ目の文です。二つ目の文です。");
        let u = classify(&s, &Constant).unwrap();
        assert_eq!(u.len(), 2);
        assert_eq!(u[1].text, "二つ目の文です。");
        assert_eq!(u[1].label, Question);
    }

    #[test]
    fn labels_parse_case_insensitively() {
        assert_eq!("opinion".parse::<SentenceType>().unwrap(), Opinion);
        assert!("stance".parse::<SentenceType>().is_err());
    }

    #[test]
    fn tsv_requires_header_and_known_labels() {
        let dir = tempfile::tempdir().unwrap();
        let ok = dir.path().join("ok.tsv");
        std::fs::write(&ok, "text\tlabel\n私は反対です。\tOPINION\n").unwrap();
        let set = LabeledSet::load_tsv(&ok).unwrap();
        assert_eq!(set.label_of("私は反対です。"), Some(Opinion));
        let bad = dir.path().join("bad.tsv");
        std::fs::write(&bad, "text\tlabel\nx\tSTANCE\n").unwrap();
        assert!(matches!(LabeledSet::load_tsv(&bad), Err(LabeledSetError::Row { row: 2, .. })));
        let empty = dir.path().join("empty.tsv");
        std::fs::write(&empty, "text\tlabel\n").unwrap();
        assert!(matches!(LabeledSet::load_tsv(&empty), Err(LabeledSetError::Empty(_))));
    }
}
