//! The nine stage bodies. Each writes only below its own directory and
//! returns the files it wrote, relative to the output directory.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use serde_json::json;

use crate::corpus::{
    build_topic_corpus, load_corpus, store_corpus, HttpTransport, MinutesClient, RecordingTransport,
    ReplayTransport, SpeakerRoster, SpeechRecord, UreqTransport,
};
use crate::embedding::{
    embed_batch, provider_from_config, EmbeddingCache, EmbeddingProvider, ProviderConfig, ProviderKind,
};
use crate::evalcmp::{
    cross_group_checks, evaluate_checks, load_checks, load_expert, party_positions, rank_agreement,
    AgreementReport, SignCheckOutcome,
};
use crate::nlproc::{classify, prepare_sentences, EmbeddingClassifier, LinearModel, SentenceType};
use crate::reduce::{plot_payload, reduce_2d, segment_angle_degrees, write_plot, LabeledVector, PlotMeta, PointKind};
use crate::scaling::{
    build_axis_from_pair, build_axis_from_seeds, build_profiles, party_summary, project, read_profiles,
    read_results, split_groups, write_profiles, write_results, AggregationOptions, ProfileInput,
    ProjectionResult, ReferenceAxis, StanceProfile,
};
use crate::seedgen::{load_seeds, SeedBundle, Side};
use crate::topics::{
    render_markdown, topics_report, write_report_json, write_terms_table, GroupedSentence, LexiconTokenizer,
    TopicsOptions,
};
use crate::util::atomic_write;

use super::{AxisKind, AxisSpec, GroupingLevel, Pipeline, PipelineError, Stage, StageOutput};

/// A reduced axis as `(con, pro)` planar points.
type Segment = ([f64; 2], [f64; 2]);

/// Embedding cache directory under the output directory. It is shared
/// scratch space, not a stage artifact, and is not listed in the manifest.
pub const CACHE_DIR: &str = "cache";

/// A segmented and labeled sentence with its speech metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifiedSentence {
    pub topic_id: String,
    pub speech_id: String,
    pub speaker_name: String,
    pub party: String,
    pub index: usize,
    pub text: String,
    pub label: SentenceType,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ValidationOutcome {
    axis_id: String,
    topic_id: String,
    agreement: Option<AgreementReport>,
    sign_checks: Vec<SignCheckOutcome>,
    error: Option<String>,
}

impl ValidationOutcome {
    fn failed_checks(&self) -> usize {
        self.sign_checks.iter().filter(|c| !c.passed).count()
    }
}

pub(crate) fn run(p: &Pipeline, stage: Stage) -> Result<StageOutput, PipelineError> {
    let ctx = Ctx { p, stage };
    match stage {
        Stage::Ingest => ctx.ingest(),
        Stage::Classify => ctx.classify(),
        Stage::Embed => ctx.embed(),
        Stage::Profile => ctx.profile(),
        Stage::Axis => ctx.axis(),
        Stage::Scale => ctx.scale(),
        Stage::Topics => ctx.topics(),
        Stage::Plot => ctx.plot(),
        Stage::Validate => ctx.validate(),
    }
}

/// Recorded API responses in a replay directory, sorted by file name.
pub(crate) fn replay_files(dir: &Path) -> Vec<PathBuf> {
    let mut names: Vec<PathBuf> = fs::read_dir(dir)
        .into_iter()
        .flatten()
        .flatten()
        .filter(|e| e.path().extension().is_some_and(|x| x == "json"))
        .map(|e| PathBuf::from(e.file_name()))
        .collect();
    names.sort();
    names
}

/// Failed sign checks recorded by the last VALIDATE run.
pub(crate) fn count_failed_checks(p: &Pipeline) -> Result<usize, PipelineError> {
    let ctx = Ctx {
        p,
        stage: Stage::Validate,
    };
    let mut n = 0;
    for v in &p.config().validation {
        for a in p.config().axes.iter().filter(|a| a.topic_id == v.topic_id) {
            let o: ValidationOutcome = ctx.read_json(&ctx.rel(Stage::Validate, &format!("{}.json", a.id)))?;
            n += o.failed_checks();
        }
    }
    Ok(n)
}

struct Ctx<'a> {
    p: &'a Pipeline,
    stage: Stage,
}

impl Ctx<'_> {
    fn fail(&self, message: impl ToString) -> PipelineError {
        PipelineError::Stage {
            stage: self.stage,
            message: message.to_string(),
        }
    }

    fn rel(&self, stage: Stage, name: &str) -> PathBuf {
        Path::new(stage.dir_name()).join(name)
    }

    fn abs(&self, rel: &Path) -> PathBuf {
        self.p.output_dir().join(rel)
    }

    fn write_bytes(&self, rel: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
        atomic_write(&self.abs(rel), bytes).map_err(|e| self.fail(format!("{}: {e}", rel.display())))
    }

    fn write_json<T: Serialize>(&self, rel: &Path, value: &T) -> Result<(), PipelineError> {
        let mut bytes = serde_json::to_vec_pretty(value).expect("plain data");
        bytes.push(b'\n');
        self.write_bytes(rel, &bytes)
    }

    fn read_json<T: DeserializeOwned>(&self, rel: &Path) -> Result<T, PipelineError> {
        let text = fs::read_to_string(self.abs(rel)).map_err(|e| self.fail(format!("{}: {e}", rel.display())))?;
        serde_json::from_str(&text).map_err(|e| self.fail(format!("{}: {e}", rel.display())))
    }

    fn write_jsonl<T: Serialize>(&self, rel: &Path, rows: &[T]) -> Result<(), PipelineError> {
        let mut buf = Vec::new();
        for r in rows {
            serde_json::to_writer(&mut buf, r).expect("plain data");
            buf.write_all(b"\n").expect("in-memory write");
        }
        self.write_bytes(rel, &buf)
    }

    fn read_jsonl<T: DeserializeOwned>(&self, rel: &Path) -> Result<Vec<T>, PipelineError> {
        let f = fs::File::open(self.abs(rel)).map_err(|e| self.fail(format!("{}: {e}", rel.display())))?;
        let mut rows = Vec::new();
        for (i, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| self.fail(format!("{}: {e}", rel.display())))?;
            if line.trim().is_empty() {
                continue;
            }
            rows.push(
                serde_json::from_str(&line)
                    .map_err(|e| self.fail(format!("{}, line {}: {e}", rel.display(), i + 1)))?,
            );
        }
        Ok(rows)
    }

    fn provider(&self, cfg: &ProviderConfig) -> Result<Box<dyn EmbeddingProvider>, PipelineError> {
        if self.p.offline() && cfg.kind == ProviderKind::Http {
            return Err(PipelineError::Config(
                "offline runs cannot use the http embedding provider".into(),
            ));
        }
        provider_from_config(cfg).map_err(|e| PipelineError::Config(e.to_string()))
    }

    fn cache(&self, provider: &dyn EmbeddingProvider) -> Result<EmbeddingCache, PipelineError> {
        let dir = match &self.p.config().cache_dir {
            Some(d) => self.p.resolve(d),
            None => self.p.output_dir().join(CACHE_DIR),
        };
        EmbeddingCache::open(&dir, provider.descriptor()).map_err(|e| self.fail(e))
    }

    fn aggregation(&self) -> AggregationOptions {
        AggregationOptions {
            normalize_sentence_vectors: self.p.config().normalize_sentence_vectors,
        }
    }

    fn profiles_of(&self, topic_id: &str) -> Result<Vec<StanceProfile>, PipelineError> {
        let path = self.abs(&self.rel(Stage::Profile, &format!("{topic_id}.jsonl")));
        read_profiles(&path).map_err(|e| self.fail(e))
    }

    fn axis_of(&self, spec: &AxisSpec) -> Result<ReferenceAxis, PipelineError> {
        let path = self.abs(&self.rel(Stage::Axis, &format!("{}.json", spec.id)));
        ReferenceAxis::load(&path).map_err(|e| self.fail(e))
    }

    fn results_of(&self, spec: &AxisSpec) -> Result<Vec<ProjectionResult>, PipelineError> {
        let path = self.abs(&self.rel(Stage::Scale, &format!("{}.csv", spec.id)));
        read_results(&path).map_err(|e| self.fail(e))
    }

    fn ingest(&self) -> Result<StageOutput, PipelineError> {
        let c = self.p.config();
        let roster_path = self.p.resolve(&c.roster);
        let roster = SpeakerRoster::load(&roster_path).map_err(|e| self.fail(e))?;
        let transport: Arc<dyn HttpTransport> = if self.p.offline() {
            let dir = c.api.replay_dir.as_ref().ok_or_else(|| {
                PipelineError::Config("offline ingest needs api.replay_dir (recorded responses)".into())
            })?;
            Arc::new(ReplayTransport::new(self.p.resolve(dir)))
        } else {
            let live = UreqTransport::new(Duration::from_secs(60));
            match &c.api.record_dir {
                Some(dir) => Arc::new(RecordingTransport::new(live, self.p.resolve(dir))),
                None => Arc::new(live),
            }
        };
        let client = MinutesClient::new(transport, c.api.client_config(self.p.offline()));
        let mut files = Vec::new();
        let mut notes = Vec::new();
        for spec in &c.topics {
            let corpus = build_topic_corpus(spec, &roster, &client).map_err(|e| self.fail(e))?;
            let rel = self.rel(Stage::Ingest, &format!("{}.jsonl", spec.topic_id));
            store_corpus(&corpus, &self.abs(&rel)).map_err(|e| self.fail(e))?;
            notes.push(format!("{}: {} speeches", spec.topic_id, corpus.len()));
            files.push(rel);
        }
        Ok(StageOutput {
            files,
            note: notes.join("; "),
            checks_failed: 0,
        })
    }

    fn classify(&self) -> Result<StageOutput, PipelineError> {
        let c = self.p.config();
        let provider = self.provider(&c.classifier.provider)?;
        let cache = self.cache(provider.as_ref())?;
        let model = LinearModel::load(&self.p.resolve(&c.classifier.weights), provider.descriptor())
            .map_err(|e| self.fail(e))?;
        let classifier = EmbeddingClassifier::new(model, provider.as_ref(), Some(&cache)).map_err(|e| self.fail(e))?;
        let mut files = Vec::new();
        let mut notes = Vec::new();
        for spec in &c.topics {
            let corpus: Vec<SpeechRecord> =
                load_corpus(&self.abs(&self.rel(Stage::Ingest, &format!("{}.jsonl", spec.topic_id))))
                    .map_err(|e| self.fail(e))?;
            let mut rows = Vec::new();
            for speech in &corpus {
                let sentences = prepare_sentences(&speech.speech_id, &speech.text);
                let units = classify(&sentences, &classifier).map_err(|e| self.fail(e))?;
                rows.extend(units.into_iter().map(|u| ClassifiedSentence {
                    topic_id: spec.topic_id.clone(),
                    speech_id: u.speech_id,
                    speaker_name: speech.speaker_name.clone(),
                    party: speech.party.clone(),
                    index: u.index,
                    text: u.text,
                    label: u.label,
                    confidence: u.confidence,
                }));
            }
            let opinions = rows.iter().filter(|r| r.label == SentenceType::Opinion).count();
            notes.push(format!("{}: {opinions}/{} opinion sentences", spec.topic_id, rows.len()));
            let rel = self.rel(Stage::Classify, &format!("{}.jsonl", spec.topic_id));
            self.write_jsonl(&rel, &rows)?;
            files.push(rel);
        }
        Ok(StageOutput {
            files,
            note: notes.join("; "),
            checks_failed: 0,
        })
    }

    fn embed(&self) -> Result<StageOutput, PipelineError> {
        let c = self.p.config();
        let provider = self.provider(&c.provider)?;
        let cache = self.cache(provider.as_ref())?;
        let mut files = Vec::new();
        for spec in &c.topics {
            let rows: Vec<ClassifiedSentence> =
                self.read_jsonl(&self.rel(Stage::Classify, &format!("{}.jsonl", spec.topic_id)))?;
            let opinions: Vec<ClassifiedSentence> =
                rows.into_iter().filter(|r| r.label == SentenceType::Opinion).collect();
            let texts: Vec<&str> = opinions.iter().map(|r| r.text.as_str()).collect();
            let vectors = embed_batch(&texts, provider.as_ref(), Some(&cache)).map_err(|e| self.fail(e))?;
            let inputs: Vec<ProfileInput> = opinions
                .into_iter()
                .zip(vectors)
                .map(|(r, vector)| ProfileInput {
                    topic_id: r.topic_id,
                    speaker_name: r.speaker_name,
                    party: r.party,
                    speech_id: r.speech_id,
                    index: r.index,
                    text: r.text,
                    vector,
                })
                .collect();
            let rel = self.rel(Stage::Embed, &format!("{}.jsonl", spec.topic_id));
            self.write_jsonl(&rel, &inputs)?;
            files.push(rel);
        }
        Ok(StageOutput {
            files,
            note: format!("provider {}", provider.descriptor().provider_id),
            checks_failed: 0,
        })
    }

    fn embedded(&self, topic_id: &str) -> Result<Vec<ProfileInput>, PipelineError> {
        self.read_jsonl(&self.rel(Stage::Embed, &format!("{topic_id}.jsonl")))
    }

    fn profile(&self) -> Result<StageOutput, PipelineError> {
        let c = self.p.config();
        let mut files = Vec::new();
        let mut notes = Vec::new();
        for spec in &c.topics {
            let inputs = self.embedded(&spec.topic_id)?;
            let build = build_profiles(&inputs, c.min_sentences, self.aggregation()).map_err(|e| self.fail(e))?;
            let rel = self.rel(Stage::Profile, &format!("{}.jsonl", spec.topic_id));
            write_profiles(&build.profiles, &self.abs(&rel)).map_err(|e| self.fail(e))?;
            let skipped = self.rel(Stage::Profile, &format!("{}.skipped.json", spec.topic_id));
            self.write_json(&skipped, &build.skipped)?;
            notes.push(format!(
                "{}: {} profiles, {} skipped",
                spec.topic_id,
                build.profiles.len(),
                build.skipped.len()
            ));
            files.extend([rel, skipped]);
        }
        Ok(StageOutput {
            files,
            note: notes.join("; "),
            checks_failed: 0,
        })
    }

    fn load_bundle(&self, path: &Path, expected_hash: Option<&str>, spec: &AxisSpec, side: Side) -> Result<SeedBundle, PipelineError> {
        let b = load_seeds(&self.p.resolve(path)).map_err(|e| self.fail(e))?;
        if let Some(h) = expected_hash {
            if b.content_hash != h {
                return Err(self.fail(format!(
                    "axis {}: bundle {} has hash {}, config expects {h}",
                    spec.id,
                    path.display(),
                    b.content_hash
                )));
            }
        }
        if b.topic_id != spec.topic_id || b.side != side {
            return Err(self.fail(format!(
                "axis {}: bundle {} is for {}/{}, expected {}/{}",
                spec.id,
                path.display(),
                b.topic_id,
                b.side.as_str(),
                spec.topic_id,
                side.as_str()
            )));
        }
        Ok(b)
    }

    fn axis(&self) -> Result<StageOutput, PipelineError> {
        let c = self.p.config();
        let mut files = Vec::new();
        let mut seeds_provider = None;
        for spec in &c.axes {
            let axis = match spec.method {
                AxisKind::Pair => {
                    let profiles = self.profiles_of(&spec.topic_id)?;
                    let find = |name: &str| {
                        let name = crate::util::squeeze_whitespace(name);
                        profiles.iter().find(|p| p.speaker_name == name).ok_or_else(|| {
                            self.fail(format!(
                                "axis {}: {name} has no profile in topic {} (not in the roster, or too few opinion sentences)",
                                spec.id, spec.topic_id
                            ))
                        })
                    };
                    let pro = find(spec.pro.as_deref().unwrap_or_default())?;
                    let con = find(spec.con.as_deref().unwrap_or_default())?;
                    build_axis_from_pair(pro, con).map_err(|e| self.fail(format!("axis {}: {e}", spec.id)))?
                }
                AxisKind::Seeds => {
                    let pro = self.load_bundle(
                        spec.pro_bundle.as_deref().expect("validated"),
                        spec.pro_hash.as_deref(),
                        spec,
                        Side::Pro,
                    )?;
                    let con = self.load_bundle(
                        spec.con_bundle.as_deref().expect("validated"),
                        spec.con_hash.as_deref(),
                        spec,
                        Side::Con,
                    )?;
                    if seeds_provider.is_none() {
                        let provider = self.provider(&c.provider)?;
                        let cache = self.cache(provider.as_ref())?;
                        seeds_provider = Some((provider, cache));
                    }
                    let (provider, cache) = seeds_provider.as_ref().expect("set above");
                    let mut axis = build_axis_from_seeds(
                        &spec.topic_id,
                        &pro.texts,
                        &con.texts,
                        provider.as_ref(),
                        Some(cache),
                        self.aggregation(),
                    )
                    .map_err(|e| self.fail(format!("axis {}: {e}", spec.id)))?;
                    axis.seed_hashes = vec![pro.content_hash, con.content_hash];
                    axis
                }
            };
            let rel = self.rel(Stage::Axis, &format!("{}.json", spec.id));
            axis.save(&self.abs(&rel)).map_err(|e| self.fail(e))?;
            files.push(rel);
        }
        Ok(StageOutput {
            files,
            note: format!("{} axes", c.axes.len()),
            checks_failed: 0,
        })
    }

    fn scale(&self) -> Result<StageOutput, PipelineError> {
        let c = self.p.config();
        let mut files = Vec::new();
        for spec in &c.axes {
            let axis = self.axis_of(spec)?;
            let profiles = self.profiles_of(&spec.topic_id)?;
            let projected = profiles
                .iter()
                .map(|p| project(p, &axis))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| self.fail(e))?;
            let results = split_groups(projected, c.group_count)
                .map_err(|e| self.fail(format!("axis {}: {e}", spec.id)))?;
            let rel = self.rel(Stage::Scale, &format!("{}.csv", spec.id));
            write_results(&results, &self.abs(&rel)).map_err(|e| self.fail(e))?;
            let summary = self.rel(Stage::Scale, &format!("{}.summary.json", spec.id));
            self.write_json(&summary, &party_summary(&results))?;
            files.extend([rel, summary]);
        }
        Ok(StageOutput {
            files,
            note: format!("{} axes", c.axes.len()),
            checks_failed: 0,
        })
    }

    fn grouped_sentences(&self, spec: &AxisSpec) -> Result<Vec<GroupedSentence>, PipelineError> {
        let c = self.p.config();
        let inputs = self.embedded(&spec.topic_id)?;
        let id = |r: &ProfileInput| format!("{}#{}", r.speech_id, r.index);
        match c.grouping {
            GroupingLevel::Speaker => {
                let groups: HashMap<String, _> = self
                    .results_of(spec)?
                    .into_iter()
                    .filter_map(|r| r.group.map(|g| (r.speaker_name, g)))
                    .collect();
                Ok(inputs
                    .iter()
                    .filter_map(|r| {
                        groups.get(&r.speaker_name).map(|&group| GroupedSentence {
                            group,
                            id: id(r),
                            text: r.text.clone(),
                            vector: r.vector.values.clone(),
                        })
                    })
                    .collect())
            }
            GroupingLevel::Sentence => {
                let axis = self.axis_of(spec)?;
                let mut projected = Vec::with_capacity(inputs.len());
                for r in &inputs {
                    let (raw, normalized) = axis.locate(&r.vector.values).map_err(|e| self.fail(e))?;
                    projected.push(ProjectionResult {
                        topic_id: r.topic_id.clone(),
                        speaker_name: id(r),
                        party: r.party.clone(),
                        raw,
                        normalized,
                        group: None,
                        n_opinion_sentences: 1,
                    });
                }
                let split = split_groups(projected, c.group_count)
                    .map_err(|e| self.fail(format!("axis {}: {e}", spec.id)))?;
                Ok(inputs
                    .iter()
                    .zip(split)
                    .map(|(r, p)| GroupedSentence {
                        group: p.group.expect("every result grouped"),
                        id: id(r),
                        text: r.text.clone(),
                        vector: r.vector.values.clone(),
                    })
                    .collect())
            }
        }
    }

    fn topics(&self) -> Result<StageOutput, PipelineError> {
        let c = self.p.config();
        let t = &c.topic_terms;
        let lexicon = t.lexicon_file.as_ref().map(|p| self.p.resolve(p));
        let stop = t.stopword_file.as_ref().map(|p| self.p.resolve(p));
        let tokenizer = LexiconTokenizer::from_files(lexicon.as_deref(), stop.as_deref())
            .map_err(|e| self.fail(format!("tokenizer lists: {e}")))?
            .with_stopwords(t.stopwords);
        let opts = TopicsOptions {
            k: t.k,
            terms: t.terms,
            seed: t.seed,
            reducer: t.reducer,
        };
        let mut files = Vec::new();
        let mut group_errors = 0;
        for spec in &c.axes {
            let sentences = self.grouped_sentences(spec)?;
            let report = topics_report(&spec.topic_id, &sentences, &opts, &tokenizer, t.stopwords);
            group_errors += report.groups.iter().filter(|g| g.error.is_some()).count();
            let json_rel = self.rel(Stage::Topics, &format!("{}.json", spec.id));
            let csv_rel = self.rel(Stage::Topics, &format!("{}.csv", spec.id));
            let md_rel = self.rel(Stage::Topics, &format!("{}.md", spec.id));
            write_report_json(&report, &self.abs(&json_rel)).map_err(|e| self.fail(e))?;
            write_terms_table(&report, &self.abs(&csv_rel)).map_err(|e| self.fail(e))?;
            self.write_bytes(&md_rel, render_markdown(&report).as_bytes())?;
            files.extend([json_rel, csv_rel, md_rel]);
        }
        Ok(StageOutput {
            files,
            note: format!("{} axes, {group_errors} groups without topics", c.axes.len()),
            checks_failed: 0,
        })
    }

    fn speaker_vectors(&self, profiles: &[StanceProfile]) -> Vec<LabeledVector> {
        profiles
            .iter()
            .map(|p| LabeledVector {
                id: p.speaker_name.clone(),
                kind: PointKind::Speaker,
                party: Some(p.party.clone()),
                values: p.mean_embedding.values.clone(),
            })
            .collect()
    }

    fn anchor_vectors(&self, id: &str, axis: &ReferenceAxis) -> [LabeledVector; 2] {
        [
            LabeledVector {
                id: format!("{id}:pro"),
                kind: PointKind::AnchorPro,
                party: None,
                values: axis.anchor_pro.values.clone(),
            },
            LabeledVector {
                id: format!("{id}:con"),
                kind: PointKind::AnchorCon,
                party: None,
                values: axis.anchor_con.values.clone(),
            },
        ]
    }

    fn plot(&self) -> Result<StageOutput, PipelineError> {
        let c = self.p.config();
        let dir = self.abs(Path::new(Stage::Plot.dir_name()));
        let mut files = Vec::new();
        let mut by_topic: BTreeMap<&str, Vec<(&AxisSpec, ReferenceAxis)>> = BTreeMap::new();
        for spec in &c.axes {
            let axis = self.axis_of(spec)?;
            let profiles = self.profiles_of(&spec.topic_id)?;
            let mut inputs = self.speaker_vectors(&profiles);
            inputs.extend(self.anchor_vectors(&spec.id, &axis));
            let (points, reduction) =
                reduce_2d(&inputs, c.reduce.method, c.reduce.seed).map_err(|e| self.fail(format!("axis {}: {e}", spec.id)))?;
            let meta = PlotMeta {
                topic_id: spec.topic_id.clone(),
                axis_method: axis.method,
                anchor_labels: axis.anchor_labels.clone(),
                reduction,
            };
            let doc = plot_payload(&points, &meta).map_err(|e| self.fail(e))?;
            let written = write_plot(&doc, &dir, &spec.id).map_err(|e| self.fail(e))?;
            for f in [written.svg, written.sidecar, written.meta] {
                let name = f.file_name().expect("file path").to_string_lossy().into_owned();
                files.push(self.rel(Stage::Plot, &name));
            }
            by_topic.entry(spec.topic_id.as_str()).or_default().push((spec, axis));
        }

        // axes of one topic reduced jointly so their segments can be compared
        for (topic_id, axes) in by_topic.iter().filter(|(_, a)| a.len() > 1) {
            let profiles = self.profiles_of(topic_id)?;
            let mut inputs = self.speaker_vectors(&profiles);
            for (spec, axis) in axes {
                inputs.extend(self.anchor_vectors(&spec.id, axis));
            }
            let (points, reduction) =
                reduce_2d(&inputs, c.reduce.method, c.reduce.seed).map_err(|e| self.fail(format!("topic {topic_id}: {e}")))?;
            let at = |id: String| {
                let p = points.iter().find(|p| p.id == id).expect("anchor reduced");
                [p.x, p.y]
            };
            let segments: Vec<(&str, Segment)> = axes
                .iter()
                .map(|(s, _)| (s.id.as_str(), (at(format!("{}:con", s.id)), at(format!("{}:pro", s.id)))))
                .collect();
            let mut angles = Vec::new();
            for i in 0..segments.len() {
                for j in i + 1..segments.len() {
                    angles.push(json!({
                        "a": segments[i].0,
                        "b": segments[j].0,
                        "degrees": segment_angle_degrees(segments[i].1, segments[j].1),
                    }));
                }
            }
            let rel = self.rel(Stage::Plot, &format!("{topic_id}.angles.json"));
            self.write_json(&rel, &json!({ "topic_id": topic_id, "reduction": reduction, "angles": angles }))?;
            files.push(rel);
        }
        Ok(StageOutput {
            files,
            note: format!("{} plots, method {}", c.axes.len(), c.reduce.method),
            checks_failed: 0,
        })
    }

    fn validate(&self) -> Result<StageOutput, PipelineError> {
        let c = self.p.config();
        let mut files = Vec::new();
        let mut outcomes = Vec::new();
        for v in &c.validation {
            let expert = load_expert(&self.p.resolve(&v.expert)).map_err(|e| self.fail(e))?;
            let checks = match &v.checks {
                Some(p) => load_checks(&self.p.resolve(p)).map_err(|e| self.fail(e))?,
                None => cross_group_checks(&expert, c.position_statistic),
            };
            for spec in c.axes.iter().filter(|a| a.topic_id == v.topic_id) {
                let results = self.results_of(spec)?;
                let sign_checks = evaluate_checks(&results, &checks);
                let agreement = party_positions(&results, c.position_statistic)
                    .and_then(|pos| rank_agreement(&v.topic_id, &pos, &expert));
                let (agreement, error) = match agreement {
                    Ok(mut a) => {
                        a.sign_checks = sign_checks.clone();
                        (Some(a), None)
                    }
                    Err(e) => (None, Some(e.to_string())),
                };
                let outcome = ValidationOutcome {
                    axis_id: spec.id.clone(),
                    topic_id: v.topic_id.clone(),
                    agreement,
                    sign_checks,
                    error,
                };
                let rel = self.rel(Stage::Validate, &format!("{}.json", spec.id));
                self.write_json(&rel, &outcome)?;
                files.push(rel);
                outcomes.push(outcome);
            }
        }
        let rel = self.rel(Stage::Validate, "report.md");
        self.write_bytes(&rel, render_validation(&outcomes).as_bytes())?;
        files.push(rel);
        let failed: usize = outcomes.iter().map(ValidationOutcome::failed_checks).sum();
        let total: usize = outcomes.iter().map(|o| o.sign_checks.len()).sum();
        Ok(StageOutput {
            files,
            note: format!("{} of {total} sign checks passed", total - failed),
            checks_failed: failed,
        })
    }
}

fn render_validation(outcomes: &[ValidationOutcome]) -> String {
    let mut s = String::from("# Validation\n");
    if outcomes.is_empty() {
        s.push_str("\nNo validation configured.\n");
    }
    for o in outcomes {
        s.push_str(&format!("\n## {} ({})\n\n", o.axis_id, o.topic_id));
        match (&o.agreement, &o.error) {
            (Some(a), _) => s.push_str(&format!(
                "| statistic | parties | Spearman rho | Kendall tau-b | pairwise accuracy | pairs |\n|---|---|---|---|---|---|\n| {} | {} | {:.4} | {:.4} | {:.4} | {} |\n",
                a.statistic.as_str(),
                a.parties.join(", "),
                a.spearman_rho,
                a.kendall_tau,
                a.pairwise_accuracy,
                a.comparable_pairs
            )),
            (None, Some(e)) => s.push_str(&format!("Rank agreement unavailable: {e}\n")),
            (None, None) => {}
        }
        if !o.sign_checks.is_empty() {
            s.push_str("\n| check | result | detail |\n|---|---|---|\n");
            for c in &o.sign_checks {
                let verdict = if c.passed { "pass" } else { "FAIL" };
                s.push_str(&format!("| `{}` | {verdict} | {} |\n", c.description, c.detail));
            }
        }
    }
    s
}
