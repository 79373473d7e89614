use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::corpus::{ApiConfig, TopicSpec, DEFAULT_BASE_URL, MAX_PAGE_SIZE};
use crate::embedding::{ProviderConfig, ProviderKind};
use crate::evalcmp::Statistic;
use crate::reduce::ReduceMethod;
use crate::scaling::{DEFAULT_MIN_SENTENCES, GROUP_COUNT};
use crate::topics::{DEFAULT_TERMS, DEFAULT_TOPICS};

use super::PipelineError;

/// Top-level pipeline configuration (TOML). Relative paths are resolved
/// against the directory holding the configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub output_dir: PathBuf,
    pub roster: PathBuf,
    /// Embedding cache; defaults to `<output_dir>/cache`.
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    #[serde(default)]
    pub offline: bool,
    #[serde(default = "default_min_sentences")]
    pub min_sentences: usize,
    #[serde(default)]
    pub normalize_sentence_vectors: bool,
    #[serde(default = "default_group_count")]
    pub group_count: usize,
    #[serde(default)]
    pub grouping: GroupingLevel,
    #[serde(default)]
    pub position_statistic: Statistic,
    #[serde(default)]
    pub api: ApiSection,
    pub provider: ProviderConfig,
    pub classifier: ClassifierSection,
    pub topics: Vec<TopicSpec>,
    #[serde(default)]
    pub axes: Vec<AxisSpec>,
    #[serde(default)]
    pub reduce: ReduceSection,
    #[serde(default)]
    pub topic_terms: TopicTermsSection,
    #[serde(default)]
    pub validation: Vec<ValidationSpec>,
}

fn default_min_sentences() -> usize {
    DEFAULT_MIN_SENTENCES
}

fn default_group_count() -> usize {
    GROUP_COUNT
}

/// Whether topic groups come from speakers' groups or from projecting each
/// sentence on its own.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupingLevel {
    #[default]
    Speaker,
    Sentence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ApiSection {
    pub base_url: String,
    pub page_size: u32,
    pub min_interval_ms: u64,
    pub max_retries: u32,
    pub backoff_ms: u64,
    /// Recorded responses; required offline.
    pub replay_dir: Option<PathBuf>,
    /// When set (online only), every response is recorded here.
    pub record_dir: Option<PathBuf>,
}

impl Default for ApiSection {
    fn default() -> Self {
        Self {
            base_url: DEFAULT_BASE_URL.to_string(),
            page_size: MAX_PAGE_SIZE,
            min_interval_ms: 1000,
            max_retries: 5,
            backoff_ms: 1000,
            replay_dir: None,
            record_dir: None,
        }
    }
}

impl ApiSection {
    pub fn client_config(&self, offline: bool) -> ApiConfig {
        if offline {
            return ApiConfig {
                page_size: self.page_size,
                ..ApiConfig::unthrottled(self.base_url.clone())
            };
        }
        ApiConfig {
            base_url: self.base_url.clone(),
            page_size: self.page_size,
            min_interval: Duration::from_millis(self.min_interval_ms),
            max_retries: self.max_retries,
            backoff_base: Duration::from_millis(self.backoff_ms),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierSection {
    /// Trained weights (see `ideoaxis train-classifier`).
    pub weights: PathBuf,
    /// Features the weights were trained on; independent of the stance
    /// embedding provider.
    #[serde(default)]
    pub provider: ProviderConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AxisKind {
    Pair,
    Seeds,
}

/// A reference axis: two named speakers, or two seed bundles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisSpec {
    /// Names the artifacts of this axis (`axes/<id>.json`, ...).
    pub id: String,
    pub topic_id: String,
    pub method: AxisKind,
    #[serde(default)]
    pub pro: Option<String>,
    #[serde(default)]
    pub con: Option<String>,
    #[serde(default)]
    pub pro_bundle: Option<PathBuf>,
    #[serde(default)]
    pub con_bundle: Option<PathBuf>,
    /// Expected content hashes of the bundles; checked when given.
    #[serde(default)]
    pub pro_hash: Option<String>,
    #[serde(default)]
    pub con_hash: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReduceSection {
    pub method: ReduceMethod,
    pub seed: u64,
}

impl Default for ReduceSection {
    fn default() -> Self {
        Self {
            method: ReduceMethod::Pca,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TopicTermsSection {
    pub k: usize,
    pub terms: usize,
    pub seed: u64,
    pub reducer: ReduceMethod,
    pub stopwords: bool,
    pub lexicon_file: Option<PathBuf>,
    pub stopword_file: Option<PathBuf>,
}

impl Default for TopicTermsSection {
    fn default() -> Self {
        Self {
            k: DEFAULT_TOPICS,
            terms: DEFAULT_TERMS,
            seed: 0,
            reducer: ReduceMethod::Pca,
            stopwords: true,
            lexicon_file: None,
            stopword_file: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidationSpec {
    pub topic_id: String,
    pub expert: PathBuf,
    #[serde(default)]
    pub checks: Option<PathBuf>,
}

fn safe_id(id: &str) -> bool {
    !id.is_empty()
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
        && !id.starts_with('.')
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, PipelineError> {
        let cfg: Self = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
    }

    /// Structural checks that need no file access.
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.topics.is_empty() {
            return bad("at least one [[topics]] entry is required".into());
        }
        let mut topic_ids = BTreeSet::new();
        for t in &self.topics {
            t.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
            if !safe_id(&t.topic_id) {
                return bad(format!("topic_id {:?} must be [A-Za-z0-9_.-]", t.topic_id));
            }
            if !topic_ids.insert(t.topic_id.as_str()) {
                return bad(format!("topic {} defined twice", t.topic_id));
            }
        }
        if self.min_sentences == 0 {
            return bad("min_sentences must be at least 1".into());
        }
        if self.group_count != GROUP_COUNT {
            return bad(format!("group_count must be {GROUP_COUNT}"));
        }
        let mut axis_ids = BTreeSet::new();
        for a in &self.axes {
            if !safe_id(&a.id) {
                return bad(format!("axis id {:?} must be [A-Za-z0-9_.-]", a.id));
            }
            if !axis_ids.insert(a.id.as_str()) {
                return bad(format!("axis {} defined twice", a.id));
            }
            if !topic_ids.contains(a.topic_id.as_str()) {
                return bad(format!("axis {} refers to unknown topic {}", a.id, a.topic_id));
            }
            let ok = match a.method {
                AxisKind::Pair => a.pro.is_some() && a.con.is_some() && a.pro_bundle.is_none() && a.con_bundle.is_none(),
                AxisKind::Seeds => a.pro_bundle.is_some() && a.con_bundle.is_some() && a.pro.is_none() && a.con.is_none(),
            };
            if !ok {
                return bad(format!(
                    "axis {}: method pair needs `pro`/`con` names, method seeds needs `pro_bundle`/`con_bundle`",
                    a.id
                ));
            }
        }
        for v in &self.validation {
            if !topic_ids.contains(v.topic_id.as_str()) {
                return bad(format!("validation refers to unknown topic {}", v.topic_id));
            }
        }
        if self.topic_terms.k == 0 || self.topic_terms.terms == 0 {
            return bad("topic_terms.k and topic_terms.terms must be at least 1".into());
        }
        if self.api.page_size == 0 || self.api.page_size > MAX_PAGE_SIZE {
            return bad(format!("api.page_size must be in 1..={MAX_PAGE_SIZE}"));
        }
        for p in [&self.provider, &self.classifier.provider] {
            if p.kind == ProviderKind::Http && p.endpoint.is_none() {
                return bad("http provider needs `endpoint`".into());
            }
        }
        Ok(())
    }

    pub fn topic(&self, id: &str) -> Option<&TopicSpec> {
        self.topics.iter().find(|t| t.topic_id == id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
output_dir = "out"
roster = "roster.toml"

[provider]
kind = "ngram"

[classifier]
weights = "weights.json"

[[topics]]
topic_id = "jsdf"
query_words = ["自衛隊"]
date_from = "2022-01-01"
date_to = "2022-12-31"

[[axes]]
id = "jsdf-pair"
topic_id = "jsdf"
method = "pair"
pro = "甲"
con = "乙"
"#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let c = PipelineConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(c.min_sentences, 5);
        assert_eq!(c.group_count, 3);
        assert_eq!(c.grouping, GroupingLevel::Speaker);
        assert_eq!(c.topic_terms.k, 5);
        assert_eq!(c.api.page_size, 100);
        assert_eq!(c.classifier.provider.kind, ProviderKind::Ngram);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = MINIMAL.replace("min_sentences", "x").replacen("roster =", "rooster = 1\nroster =", 1);
        assert!(matches!(PipelineConfig::from_toml_str(&text), Err(PipelineError::Config(_))));
    }

    #[test]
    fn axis_fields_must_match_method() {
        let text = MINIMAL.replace("pro = \"甲\"", "pro_bundle = \"p.json\"");
        assert!(PipelineConfig::from_toml_str(&text).is_err());
        let text = MINIMAL.replace("topic_id = \"jsdf\"\nmethod", "topic_id = \"npp\"\nmethod");
        assert!(PipelineConfig::from_toml_str(&text).is_err());
    }
}
