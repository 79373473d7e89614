//! Config-driven stage runner with a content-hash manifest.
//!
//! Every stage reads the artifacts of its upstream stages, writes its own
//! subdirectory of the output directory, and appends one manifest entry.
//! A stage whose parameters and input hashes match its latest entry, and
//! whose recorded outputs are still intact on disk, is not recomputed.

mod config;
mod manifest;
mod stages;

pub use config::{
    ApiSection, AxisKind, AxisSpec, ClassifierSection, GroupingLevel, PipelineConfig, ReduceSection,
    TopicTermsSection, ValidationSpec,
};
pub use manifest::{EntryStatus, FileHash, Manifest, ManifestEntry, MANIFEST_FILE};
pub use stages::{ClassifiedSentence, CACHE_DIR};

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::Utc;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::util::{file_sha256, sha256_hex};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{stage} needs the output of {needs}: run {needs} first")]
    MissingUpstream { stage: Stage, needs: Stage },
    #[error("stale artifact {path} (recorded by {stage}); rerun {stage}")]
    Stale { stage: Stage, path: String },
    #[error("{stage} failed: {message}")]
    Stage { stage: Stage, message: String },
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl PipelineError {
    pub fn is_config(&self) -> bool {
        matches!(self, PipelineError::Config(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Stage {
    Ingest,
    Classify,
    Embed,
    Profile,
    Axis,
    Scale,
    Topics,
    Plot,
    Validate,
}

impl Stage {
    pub const ALL: [Stage; 9] = [
        Stage::Ingest,
        Stage::Classify,
        Stage::Embed,
        Stage::Profile,
        Stage::Axis,
        Stage::Scale,
        Stage::Topics,
        Stage::Plot,
        Stage::Validate,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Ingest => "INGEST",
            Stage::Classify => "CLASSIFY",
            Stage::Embed => "EMBED",
            Stage::Profile => "PROFILE",
            Stage::Axis => "AXIS",
            Stage::Scale => "SCALE",
            Stage::Topics => "TOPICS",
            Stage::Plot => "PLOT",
            Stage::Validate => "VALIDATE",
        }
    }

    /// Output subdirectory, relative to the output directory.
    pub fn dir_name(self) -> &'static str {
        match self {
            Stage::Ingest => "corpus",
            Stage::Classify => "sentences",
            Stage::Embed => "embeddings",
            Stage::Profile => "profiles",
            Stage::Axis => "axes",
            Stage::Scale => "results",
            Stage::Topics => "topics",
            Stage::Plot => "plots",
            Stage::Validate => "validate",
        }
    }

    /// Direct upstream stages whose outputs this stage reads.
    pub fn upstream(self, grouping: GroupingLevel) -> Vec<Stage> {
        match self {
            Stage::Ingest => vec![],
            Stage::Classify => vec![Stage::Ingest],
            Stage::Embed => vec![Stage::Classify],
            Stage::Profile => vec![Stage::Embed],
            Stage::Axis => vec![Stage::Profile],
            Stage::Scale => vec![Stage::Profile, Stage::Axis],
            Stage::Topics => match grouping {
                GroupingLevel::Speaker => vec![Stage::Embed, Stage::Scale],
                GroupingLevel::Sentence => vec![Stage::Embed, Stage::Axis, Stage::Scale],
            },
            Stage::Plot => vec![Stage::Profile, Stage::Axis],
            Stage::Validate => vec![Stage::Scale],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let up = s.trim().to_ascii_uppercase();
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == up)
            .ok_or_else(|| format!("unknown stage {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageSummary {
    pub stage: Stage,
    pub status: EntryStatus,
    pub outputs: Vec<FileHash>,
    pub note: String,
    /// Failed sign checks; only VALIDATE sets this.
    pub checks_failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub stages: Vec<StageSummary>,
    /// Sign checks that failed in VALIDATE (the stage itself succeeded).
    pub checks_failed: usize,
}

/// What a stage hands back to the runner.
pub(crate) struct StageOutput {
    /// Paths relative to the output directory.
    pub files: Vec<PathBuf>,
    pub note: String,
    pub checks_failed: usize,
}

pub struct Pipeline {
    config: PipelineConfig,
    config_dir: PathBuf,
    output_dir: PathBuf,
    offline: bool,
}

impl Pipeline {
    /// Loads and validates a configuration file. Relative paths inside it
    /// are resolved against its directory.
    pub fn from_file(path: &Path) -> Result<Self, PipelineError> {
        let config = PipelineConfig::load(path)?;
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self::new(config, dir))
    }

    pub fn new(config: PipelineConfig, config_dir: PathBuf) -> Self {
        let output_dir = config_dir.join(&config.output_dir);
        let offline = config.offline;
        Self {
            config,
            config_dir,
            output_dir,
            offline,
        }
    }

    pub fn with_output_dir(mut self, dir: PathBuf) -> Self {
        self.output_dir = dir;
        self
    }

    /// Forces offline mode on; a config that says offline stays offline.
    pub fn with_offline(mut self, offline: bool) -> Self {
        self.offline |= offline;
        self
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn output_dir(&self) -> &Path {
        &self.output_dir
    }

    pub fn offline(&self) -> bool {
        self.offline
    }

    pub(crate) fn resolve(&self, p: &Path) -> PathBuf {
        self.config_dir.join(p)
    }

    pub fn manifest(&self) -> Result<Manifest, PipelineError> {
        Manifest::open(&self.output_dir)
    }

    /// Runs one stage, reusing its previous outputs when nothing changed.
    pub fn run_stage(&self, stage: Stage) -> Result<StageSummary, PipelineError> {
        self.run_stage_inner(stage, false)
    }

    /// Runs every stage in order. With `from`, earlier stages are taken as
    /// they are in the manifest and `from` onwards is recomputed.
    pub fn run_all(&self, from: Option<Stage>) -> Result<RunSummary, PipelineError> {
        self.run_span(from.unwrap_or(Stage::Ingest), Stage::Validate, from.is_some())
    }

    /// Runs `from..=through` in order, recomputing each stage. Without
    /// `from`, only `through` runs and may be a cache hit. Stops at the
    /// first failure; earlier artifacts stay in place.
    pub fn run_range(&self, from: Option<Stage>, through: Stage) -> Result<RunSummary, PipelineError> {
        self.run_span(from.unwrap_or(through), through, from.is_some())
    }

    fn run_span(&self, first: Stage, through: Stage, force: bool) -> Result<RunSummary, PipelineError> {
        let mut stages = Vec::new();
        let mut checks_failed = 0;
        for stage in Stage::ALL.into_iter().filter(|s| (first..=through).contains(s)) {
            let summary = self.run_stage_inner(stage, force)?;
            log::info!("{stage}: {} {}", summary.status, summary.note);
            checks_failed += summary.checks_failed;
            stages.push(summary);
        }
        Ok(RunSummary {
            stages,
            checks_failed,
        })
    }

    fn run_stage_inner(&self, stage: Stage, force: bool) -> Result<StageSummary, PipelineError> {
        fs::create_dir_all(&self.output_dir).map_err(|source| PipelineError::Io {
            path: self.output_dir.display().to_string(),
            source,
        })?;
        let mut manifest = self.manifest()?;

        let mut inputs = Vec::new();
        for up in stage.upstream(self.config.grouping) {
            let entry = manifest.latest(up).ok_or(PipelineError::MissingUpstream { stage, needs: up })?;
            self.verify_outputs(entry)?;
            inputs.extend(entry.outputs.iter().cloned());
        }
        for p in self.external_inputs(stage) {
            let full = self.resolve(&p);
            let sha256 = file_sha256(&full).map_err(|e| {
                PipelineError::Stage {
                    stage,
                    message: format!("cannot read {}: {e}", full.display()),
                }
            })?;
            inputs.push(FileHash {
                path: p.display().to_string(),
                sha256,
            });
        }
        let params = self.stage_params(stage);
        let fingerprint = fingerprint(stage, &params, &inputs);

        if !force {
            if let Some(prev) = manifest.latest(stage) {
                if prev.fingerprint == fingerprint && self.verify_outputs(prev).is_ok() {
                    let outputs = prev.outputs.clone();
                    let entry = ManifestEntry {
                        stage,
                        status: EntryStatus::CacheHit,
                        fingerprint,
                        params,
                        inputs,
                        outputs: outputs.clone(),
                        note: "inputs unchanged".into(),
                        finished_at: Utc::now(),
                    };
                    manifest.append(entry)?;
                    let failed = if stage == Stage::Validate {
                        stages::count_failed_checks(self)?
                    } else {
                        0
                    };
                    return Ok(StageSummary {
                        stage,
                        status: EntryStatus::CacheHit,
                        outputs,
                        note: "inputs unchanged".into(),
                        checks_failed: failed,
                    });
                }
            }
        }

        let dir = self.output_dir.join(stage.dir_name());
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|source| PipelineError::Io {
                path: dir.display().to_string(),
                source,
            })?;
        }
        fs::create_dir_all(&dir).map_err(|source| PipelineError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        let out = stages::run(self, stage)?;
        let mut outputs = Vec::new();
        let mut files = out.files;
        files.sort();
        for rel in files {
            let full = self.output_dir.join(&rel);
            let sha256 = file_sha256(&full).map_err(|source| PipelineError::Io {
                path: full.display().to_string(),
                source,
            })?;
            outputs.push(FileHash {
                path: rel_string(&rel),
                sha256,
            });
        }
        manifest.append(ManifestEntry {
            stage,
            status: EntryStatus::Run,
            fingerprint,
            params,
            inputs,
            outputs: outputs.clone(),
            note: out.note.clone(),
            finished_at: Utc::now(),
        })?;
        Ok(StageSummary {
            stage,
            status: EntryStatus::Run,
            outputs,
            note: out.note,
            checks_failed: out.checks_failed,
        })
    }

    fn verify_outputs(&self, entry: &ManifestEntry) -> Result<(), PipelineError> {
        for f in &entry.outputs {
            let full = self.output_dir.join(&f.path);
            match file_sha256(&full) {
                Ok(h) if h == f.sha256 => {}
                _ => {
                    return Err(PipelineError::Stale {
                        stage: entry.stage,
                        path: f.path.clone(),
                    })
                }
            }
        }
        Ok(())
    }

    /// Files outside the output directory that a stage reads, as written in
    /// the configuration.
    fn external_inputs(&self, stage: Stage) -> Vec<PathBuf> {
        let c = &self.config;
        match stage {
            Stage::Ingest => {
                let mut v = vec![c.roster.clone()];
                if self.offline {
                    if let Some(dir) = &c.api.replay_dir {
                        v.extend(stages::replay_files(&self.resolve(dir)).into_iter().map(|f| dir.join(f)));
                    }
                }
                v
            }
            Stage::Classify => vec![c.classifier.weights.clone()],
            Stage::Axis => c
                .axes
                .iter()
                .flat_map(|a| [a.pro_bundle.clone(), a.con_bundle.clone()])
                .flatten()
                .collect(),
            Stage::Topics => [c.topic_terms.lexicon_file.clone(), c.topic_terms.stopword_file.clone()]
                .into_iter()
                .flatten()
                .collect(),
            Stage::Validate => c
                .validation
                .iter()
                .flat_map(|v| [Some(v.expert.clone()), v.checks.clone()])
                .flatten()
                .collect(),
            _ => Vec::new(),
        }
    }

    fn stage_params(&self, stage: Stage) -> Value {
        let c = &self.config;
        match stage {
            Stage::Ingest => json!({
                "topics": c.topics,
                "base_url": c.api.base_url,
                "page_size": c.api.page_size,
                "offline": self.offline,
            }),
            Stage::Classify => json!({ "provider": c.classifier.provider }),
            Stage::Embed => json!({ "provider": c.provider }),
            Stage::Profile => json!({
                "min_sentences": c.min_sentences,
                "normalize_sentence_vectors": c.normalize_sentence_vectors,
            }),
            Stage::Axis => json!({
                "axes": c.axes,
                "provider": c.provider,
                "normalize_sentence_vectors": c.normalize_sentence_vectors,
            }),
            Stage::Scale => json!({ "group_count": c.group_count }),
            Stage::Topics => json!({
                "grouping": c.grouping,
                "topic_terms": c.topic_terms,
            }),
            Stage::Plot => json!({ "reduce": c.reduce }),
            Stage::Validate => json!({
                "validation": c.validation,
                "position_statistic": c.position_statistic,
            }),
        }
    }
}

fn fingerprint(stage: Stage, params: &Value, inputs: &[FileHash]) -> String {
    let doc = json!({ "stage": stage, "params": params, "inputs": inputs });
    sha256_hex(serde_json::to_string(&doc).expect("plain data").as_bytes())
}

/// Forward slashes so manifests compare equal across platforms.
fn rel_string(p: &Path) -> String {
    p.components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_names_round_trip() {
        for s in Stage::ALL {
            assert_eq!(s.as_str().parse::<Stage>().unwrap(), s);
            assert_eq!(s.as_str().to_lowercase().parse::<Stage>().unwrap(), s);
        }
        assert!("EXPORT".parse::<Stage>().is_err());
    }

    #[test]
    fn upstream_stages_come_earlier() {
        for s in Stage::ALL {
            for g in [GroupingLevel::Speaker, GroupingLevel::Sentence] {
                assert!(s.upstream(g).iter().all(|u| *u < s));
            }
        }
    }

    #[test]
    fn missing_upstream_message_names_the_stage() {
        let e = PipelineError::MissingUpstream {
            stage: Stage::Scale,
            needs: Stage::Profile,
        };
        assert!(e.to_string().contains("run PROFILE first"));
    }
}
