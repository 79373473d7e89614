use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

use ideoaxis_core::corpus::{
    build_topic_corpus, load_corpus, store_corpus, HttpTransport, MinutesClient, RecordingTransport,
    ReplayTransport, SpeakerRoster, UreqTransport,
};
use ideoaxis_core::embedding::{local_provider_for_id, EmbeddingProvider, HashedNgramProvider};
use ideoaxis_core::evalcmp::{
    cross_group_checks, evaluate_checks, load_checks, load_expert, party_positions, rank_agreement, Statistic,
};
use ideoaxis_core::nlproc::{
    classify, prepare_sentences, stratified_split, train_classifier, EmbeddingClassifier, LabeledSet,
    LinearModel, TrainOptions,
};
use ideoaxis_core::pipeline::{ClassifiedSentence, Pipeline, PipelineError, RunSummary, Stage};
use ideoaxis_core::reduce::{plot_payload, reduce_2d, write_plot, LabeledVector, PlotMeta, PointKind, ReduceMethod};
use ideoaxis_core::scaling::{
    build_axis_from_pair, build_axis_from_seeds, party_summary, project, read_profiles, read_results,
    split_groups, write_results, AggregationOptions, ProfileInput, ReferenceAxis, StanceProfile, GROUP_COUNT,
};
use ideoaxis_core::seedgen::{
    generate_seeds, load_seeds, write_bundle, ChatClient, FixtureChatClient, GenerateOptions, HttpChatClient,
    Side, DEFAULT_SEEDS_PER_SIDE,
};
use ideoaxis_core::topics::{
    render_markdown, topics_report, write_report_json, write_terms_table, GroupedSentence, LexiconTokenizer,
    TopicsOptions, DEFAULT_TERMS, DEFAULT_TOPICS,
};

/// Estimate legislators' positions on a controversy from parliamentary
/// speech.
#[derive(Parser)]
#[command(name = "ideoaxis", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every pipeline stage.
#[derive(Args, Clone)]
struct StageArgs {
    /// Pipeline configuration (TOML). Runs the stage through the manifest.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Forbid network access; the API is served from recorded replies.
    #[arg(long)]
    offline: bool,
    /// Recompute from this stage through the requested one.
    #[arg(long)]
    from: Option<Stage>,
}

#[derive(Subcommand)]
enum Command {
    /// Run all nine stages in order.
    Run {
        #[command(flatten)]
        stage: StageArgs,
        /// Output directory (overrides the configuration).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fetch speeches for each topic.
    Ingest {
        #[command(flatten)]
        stage: StageArgs,
        /// Fetch one topic and write its corpus to `--out` (no manifest).
        #[arg(long)]
        topic: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Segment speeches and label sentence types.
    Classify {
        #[command(flatten)]
        stage: StageArgs,
        #[arg(long, requires_all = ["classifier", "out"])]
        corpus: Option<PathBuf>,
        #[arg(long)]
        classifier: Option<PathBuf>,
        /// Topic id recorded on each row (standalone mode).
        #[arg(long, default_value = "")]
        topic: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Embed opinion sentences.
    Embed(PipelineOnly),
    /// Average each speaker's opinion-sentence embeddings.
    Profile(PipelineOnly),
    /// Build reference axes.
    Axis(PipelineOnly),
    /// Project speakers onto an axis and split them into three groups.
    Scale {
        #[command(flatten)]
        stage: StageArgs,
        #[arg(long, requires_all = ["axis", "out"])]
        profiles: Option<PathBuf>,
        /// `pair:<pro>,<con>`, `seeds:<pro_dir>,<con_dir>` or an axis file.
        #[arg(long)]
        axis: Option<String>,
        #[arg(long)]
        normalize_sentence_vectors: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate pro or con seed speeches with a chat model.
    Seedgen {
        #[arg(long)]
        topic: String,
        #[arg(long)]
        side: Side,
        #[arg(long, default_value_t = DEFAULT_SEEDS_PER_SIDE)]
        n: usize,
        /// File holding the prompt text.
        #[arg(long)]
        prompt_file: PathBuf,
        /// OpenAI-compatible base URL (`.../v1`).
        #[arg(long, default_value = "https://api.openai.com/v1")]
        endpoint: String,
        #[arg(long, default_value = "gpt-4")]
        model: String,
        /// Environment variable holding the API key.
        #[arg(long, default_value = "OPENAI_API_KEY")]
        api_key_env: String,
        #[arg(long)]
        temperature: Option<f64>,
        /// Serve completions from a file (one per line) instead of a model.
        #[arg(long)]
        replies: Option<PathBuf>,
        #[arg(long, default_value = "seeds")]
        out_dir: PathBuf,
    },
    /// Topic keywords per group.
    Topics {
        #[command(flatten)]
        stage: StageArgs,
        #[arg(long, requires_all = ["sentences", "out"])]
        results: Option<PathBuf>,
        /// Embedded opinion sentences (EMBED output).
        #[arg(long)]
        sentences: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_TOPICS)]
        k: usize,
        #[arg(long, default_value_t = DEFAULT_TERMS)]
        terms: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "PCA")]
        reducer: ReduceMethod,
        #[arg(long)]
        no_stopwords: bool,
        /// Output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// 2-D projection plot of speakers and anchors.
    Plot {
        #[command(flatten)]
        stage: StageArgs,
        #[arg(long, requires_all = ["axis", "out"])]
        profiles: Option<PathBuf>,
        /// Axis file written by the AXIS stage.
        #[arg(long)]
        axis: Option<PathBuf>,
        #[arg(long, default_value = "PCA")]
        method: ReduceMethod,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare party positions with expert placements.
    Validate {
        #[command(flatten)]
        stage: StageArgs,
        #[arg(long, requires = "expert")]
        results: Option<PathBuf>,
        #[arg(long)]
        expert: Option<PathBuf>,
        /// Sign checks; defaults to every cross-group pair in the expert file.
        #[arg(long)]
        checks: Option<PathBuf>,
        #[arg(long, default_value = "median")]
        statistic: Statistic,
        /// Report file (JSON); printed to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit the sentence-type classifier on a labeled TSV file.
    TrainClassifier {
        #[arg(long)]
        labeled: PathBuf,
        /// Dimension of the n-gram features.
        #[arg(long, default_value_t = 768)]
        dimension: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Held-out share for the reported macro-F1 (0 to skip).
        #[arg(long, default_value_t = 0.2)]
        eval_fraction: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct PipelineOnly {
    #[command(flatten)]
    stage: StageArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Exit status for a run: 0 ok, 1 stage or check failure, 2 configuration.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<PipelineError>() {
        Some(e) if e.is_config() => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn pipeline(args: &StageArgs, out: Option<&Path>) -> Result<Pipeline> {
    let config = args
        .config
        .as_ref()
        .ok_or_else(|| PipelineError::Config("--config is required".into()))?;
    let mut p = Pipeline::from_file(config)?.with_offline(args.offline);
    if let Some(dir) = out {
        p = p.with_output_dir(dir.to_path_buf());
    }
    Ok(p)
}

fn report(summary: &RunSummary) -> u8 {
    for s in &summary.stages {
        println!("{:<9} {:<9} {}", s.stage.as_str(), s.status.as_str(), s.note);
    }
    if summary.checks_failed > 0 {
        eprintln!("{} sign check(s) failed", summary.checks_failed);
        1
    } else {
        0
    }
}

fn run_stage(args: &StageArgs, out: Option<&Path>, stage: Stage) -> Result<u8> {
    let p = pipeline(args, out)?;
    let summary = p.run_range(args.from, stage)?;
    Ok(report(&summary))
}

fn dispatch(cmd: Command) -> Result<u8> {
    match cmd {
        Command::Run { stage, out } => {
            let p = pipeline(&stage, out.as_deref())?;
            Ok(report(&p.run_all(stage.from)?))
        }
        Command::Ingest { stage, topic, out } => match topic {
            Some(t) => ingest_one(&stage, &t, out.as_deref()),
            None => run_stage(&stage, out.as_deref(), Stage::Ingest),
        },
        Command::Classify {
            stage,
            corpus,
            classifier,
            topic,
            out,
        } => match corpus {
            Some(c) => classify_file(&c, &classifier.expect("required"), &topic, &out.expect("required")),
            None => run_stage(&stage, out.as_deref(), Stage::Classify),
        },
        Command::Embed(a) => run_stage(&a.stage, a.out.as_deref(), Stage::Embed),
        Command::Profile(a) => run_stage(&a.stage, a.out.as_deref(), Stage::Profile),
        Command::Axis(a) => run_stage(&a.stage, a.out.as_deref(), Stage::Axis),
        Command::Scale {
            stage,
            profiles,
            axis,
            normalize_sentence_vectors,
            out,
        } => match profiles {
            Some(p) => scale_file(
                &p,
                &axis.expect("required"),
                normalize_sentence_vectors,
                &out.expect("required"),
            ),
            None => run_stage(&stage, out.as_deref(), Stage::Scale),
        },
        Command::Seedgen {
            topic,
            side,
            n,
            prompt_file,
            endpoint,
            model,
            api_key_env,
            temperature,
            replies,
            out_dir,
        } => {
            let prompt = fs::read_to_string(&prompt_file)
                .with_context(|| format!("reading {}", prompt_file.display()))?;
            let client: Box<dyn ChatClient> = match replies {
                Some(path) => {
                    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
                    Box::new(FixtureChatClient::new(
                        "fixture",
                        text.lines().filter(|l| !l.trim().is_empty()).map(str::to_string),
                    ))
                }
                None => Box::new(HttpChatClient::new(endpoint, model, Some(&api_key_env), temperature)?),
            };
            let bundle = generate_seeds(&topic, side, prompt.trim(), n, client.as_ref(), &GenerateOptions::default())?;
            fs::create_dir_all(&out_dir)?;
            let path = write_bundle(&bundle, &out_dir)?;
            println!("{}\t{}", path.display(), bundle.content_hash);
            Ok(0)
        }
        Command::Topics {
            stage,
            results,
            sentences,
            k,
            terms,
            seed,
            reducer,
            no_stopwords,
            out,
        } => match results {
            Some(r) => {
                let opts = TopicsOptions { k, terms, seed, reducer };
                topics_file(&r, &sentences.expect("required"), &opts, !no_stopwords, &out.expect("required"))
            }
            None => run_stage(&stage, out.as_deref(), Stage::Topics),
        },
        Command::Plot {
            stage,
            profiles,
            axis,
            method,
            seed,
            out,
        } => match profiles {
            Some(p) => plot_file(&p, &axis.expect("required"), method, seed, &out.expect("required")),
            None => run_stage(&stage, out.as_deref(), Stage::Plot),
        },
        Command::Validate {
            stage,
            results,
            expert,
            checks,
            statistic,
            out,
        } => match results {
            Some(r) => validate_file(&r, &expert.expect("required"), checks.as_deref(), statistic, out.as_deref()),
            None => run_stage(&stage, out.as_deref(), Stage::Validate),
        },
        Command::TrainClassifier {
            labeled,
            dimension,
            seed,
            eval_fraction,
            out,
        } => train(&labeled, dimension, seed, eval_fraction, &out),
    }
}

fn ingest_one(args: &StageArgs, topic: &str, out: Option<&Path>) -> Result<u8> {
    let p = pipeline(args, None)?;
    let out = out.ok_or_else(|| anyhow!("--out <file> is required with --topic"))?;
    let c = p.config();
    let spec = c
        .topic(topic)
        .ok_or_else(|| PipelineError::Config(format!("topic {topic} is not in the configuration")))?;
    let dir = args.config.as_ref().and_then(|c| c.parent()).unwrap_or(Path::new(""));
    let roster = SpeakerRoster::load(&dir.join(&c.roster))?;
    let transport: Arc<dyn HttpTransport> = if p.offline() {
        let replay = c
            .api
            .replay_dir
            .as_ref()
            .ok_or_else(|| PipelineError::Config("offline ingest needs api.replay_dir".into()))?;
        Arc::new(ReplayTransport::new(dir.join(replay)))
    } else {
        let live = UreqTransport::new(Duration::from_secs(60));
        match &c.api.record_dir {
            Some(rec) => Arc::new(RecordingTransport::new(live, dir.join(rec))),
            None => Arc::new(live),
        }
    };
    let client = MinutesClient::new(transport, c.api.client_config(p.offline()));
    let corpus = build_topic_corpus(spec, &roster, &client)?;
    store_corpus(&corpus, out)?;
    println!("{topic}: {} speeches -> {}", corpus.len(), out.display());
    Ok(0)
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut buf, r)?;
        buf.write_all(b"\n")?;
    }
    fs::write(path, buf).with_context(|| format!("writing {}", path.display()))
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let f = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if !line.trim().is_empty() {
            rows.push(serde_json::from_str(&line).with_context(|| format!("{}, line {}", path.display(), i + 1))?);
        }
    }
    Ok(rows)
}

fn provider_for(id: &str) -> Result<Box<dyn EmbeddingProvider>> {
    local_provider_for_id(id).ok_or_else(|| {
        anyhow!("provider {id} is not a built-in offline provider; use --config with a [provider] section")
    })
}

fn classify_file(corpus: &Path, weights: &Path, topic: &str, out: &Path) -> Result<u8> {
    let raw: LinearModel = serde_json::from_str(&fs::read_to_string(weights)?)
        .with_context(|| format!("reading {}", weights.display()))?;
    let provider = provider_for(&raw.provider_id)?;
    let model = LinearModel::load(weights, provider.descriptor())?;
    let clf = EmbeddingClassifier::new(model, provider.as_ref(), None)?;
    let mut rows = Vec::new();
    for speech in load_corpus(corpus)? {
        let units = classify(&prepare_sentences(&speech.speech_id, &speech.text), &clf)?;
        rows.extend(units.into_iter().map(|u| ClassifiedSentence {
            topic_id: topic.to_string(),
            speech_id: u.speech_id,
            speaker_name: speech.speaker_name.clone(),
            party: speech.party.clone(),
            index: u.index,
            text: u.text,
            label: u.label,
            confidence: u.confidence,
        }));
    }
    write_jsonl(out, &rows)?;
    println!("{} sentences -> {}", rows.len(), out.display());
    Ok(0)
}

fn bundle_texts(dir: &Path, side: Side) -> Result<(Vec<String>, Vec<String>)> {
    let mut paths: Vec<PathBuf> = if dir.is_dir() {
        fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect()
    } else {
        vec![dir.to_path_buf()]
    };
    paths.sort();
    let (mut texts, mut hashes) = (Vec::new(), Vec::new());
    for p in paths {
        let b = load_seeds(&p)?;
        if b.side != side {
            bail!("{} is a {} bundle, expected {}", p.display(), b.side.as_str(), side.as_str());
        }
        texts.extend(b.texts);
        hashes.push(b.content_hash);
    }
    if texts.is_empty() {
        bail!("no seed bundles in {}", dir.display());
    }
    Ok((texts, hashes))
}

fn parse_axis(spec: &str, profiles: &[StanceProfile], opts: AggregationOptions) -> Result<ReferenceAxis> {
    if let Some(rest) = spec.strip_prefix("pair:") {
        let (pro, con) = rest.split_once(',').ok_or_else(|| anyhow!("expected pair:<pro>,<con>"))?;
        let find = |name: &str| {
            profiles
                .iter()
                .find(|p| p.speaker_name == name.trim())
                .ok_or_else(|| anyhow!("no profile for {name}"))
        };
        return Ok(build_axis_from_pair(find(pro)?, find(con)?)?);
    }
    if let Some(rest) = spec.strip_prefix("seeds:") {
        let (pro, con) = rest.split_once(',').ok_or_else(|| anyhow!("expected seeds:<pro_dir>,<con_dir>"))?;
        let first = profiles.first().ok_or_else(|| anyhow!("no profiles"))?;
        let provider = provider_for(&first.mean_embedding.provider_id)?;
        let (pro_texts, mut hashes) = bundle_texts(Path::new(pro), Side::Pro)?;
        let (con_texts, con_hashes) = bundle_texts(Path::new(con), Side::Con)?;
        hashes.extend(con_hashes);
        let mut axis = build_axis_from_seeds(&first.topic_id, &pro_texts, &con_texts, provider.as_ref(), None, opts)?;
        axis.seed_hashes = hashes;
        return Ok(axis);
    }
    Ok(ReferenceAxis::load(Path::new(spec))?)
}

fn scale_file(profiles: &Path, axis: &str, normalize: bool, out: &Path) -> Result<u8> {
    let profiles = read_profiles(profiles)?;
    let opts = AggregationOptions {
        normalize_sentence_vectors: normalize,
    };
    let axis = parse_axis(axis, &profiles, opts)?;
    let projected = profiles.iter().map(|p| project(p, &axis)).collect::<Result<Vec<_>, _>>()?;
    let results = split_groups(projected, GROUP_COUNT)?;
    write_results(&results, out)?;
    for s in party_summary(&results) {
        println!("{:<8} n={:<3} median={:.4}", s.party, s.n, s.median);
    }
    Ok(0)
}

fn topics_file(results: &Path, sentences: &Path, opts: &TopicsOptions, stopwords: bool, out: &Path) -> Result<u8> {
    let groups: HashMap<String, _> = read_results(results)?
        .into_iter()
        .filter_map(|r| r.group.map(|g| (r.speaker_name, g)))
        .collect();
    let inputs: Vec<ProfileInput> = read_jsonl(sentences)?;
    let grouped: Vec<GroupedSentence> = inputs
        .iter()
        .filter_map(|r| {
            groups.get(&r.speaker_name).map(|&group| GroupedSentence {
                group,
                id: format!("{}#{}", r.speech_id, r.index),
                text: r.text.clone(),
                vector: r.vector.values.clone(),
            })
        })
        .collect();
    let topic_id = inputs.first().map(|r| r.topic_id.clone()).unwrap_or_default();
    let tokenizer = LexiconTokenizer::default().with_stopwords(stopwords);
    let report = topics_report(&topic_id, &grouped, opts, &tokenizer, stopwords);
    fs::create_dir_all(out)?;
    let stem = results.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or("topics".into());
    write_report_json(&report, &out.join(format!("{stem}.json")))?;
    write_terms_table(&report, &out.join(format!("{stem}.csv")))?;
    let md = render_markdown(&report);
    fs::write(out.join(format!("{stem}.md")), &md)?;
    print!("{md}");
    Ok(0)
}

fn plot_file(profiles: &Path, axis: &Path, method: ReduceMethod, seed: u64, out: &Path) -> Result<u8> {
    let profiles = read_profiles(profiles)?;
    let axis = ReferenceAxis::load(axis)?;
    let mut inputs: Vec<LabeledVector> = profiles
        .iter()
        .map(|p| LabeledVector {
            id: p.speaker_name.clone(),
            kind: PointKind::Speaker,
            party: Some(p.party.clone()),
            values: p.mean_embedding.values.clone(),
        })
        .collect();
    for (kind, v, label) in [
        (PointKind::AnchorPro, &axis.anchor_pro, &axis.anchor_labels[0]),
        (PointKind::AnchorCon, &axis.anchor_con, &axis.anchor_labels[1]),
    ] {
        inputs.push(LabeledVector {
            id: format!("anchor:{label}"),
            kind,
            party: None,
            values: v.values.clone(),
        });
    }
    let (points, reduction) = reduce_2d(&inputs, method, seed)?;
    let meta = PlotMeta {
        topic_id: axis.topic_id.clone(),
        axis_method: axis.method,
        anchor_labels: axis.anchor_labels.clone(),
        reduction,
    };
    let doc = plot_payload(&points, &meta)?;
    fs::create_dir_all(out)?;
    let files = write_plot(&doc, out, &axis.topic_id)?;
    println!("{}", files.svg.display());
    Ok(0)
}

fn validate_file(
    results: &Path,
    expert: &Path,
    checks: Option<&Path>,
    statistic: Statistic,
    out: Option<&Path>,
) -> Result<u8> {
    let results = read_results(results)?;
    let expert = load_expert(expert)?;
    let checks = match checks {
        Some(p) => load_checks(p)?,
        None => cross_group_checks(&expert, statistic),
    };
    let topic_id = results
        .first()
        .map(|r| r.topic_id.clone())
        .ok_or_else(|| anyhow!("results file is empty"))?;
    let mut report = rank_agreement(&topic_id, &party_positions(&results, statistic)?, &expert)?;
    report.sign_checks = evaluate_checks(&results, &checks);
    let json = serde_json::to_string_pretty(&report)?;
    match out {
        Some(p) => fs::write(p, json + "\n")?,
        None => println!("{json}"),
    }
    for c in &report.sign_checks {
        eprintln!("{} {} ({})", if c.passed { "pass" } else { "FAIL" }, c.description, c.detail);
    }
    Ok(if report.all_checks_pass() { 0 } else { 1 })
}

fn train(labeled: &Path, dimension: usize, seed: u64, eval_fraction: f64, out: &Path) -> Result<u8> {
    let set = LabeledSet::load_tsv(labeled)?;
    let provider = HashedNgramProvider::new(dimension);
    let opts = TrainOptions {
        seed,
        ..Default::default()
    };
    if eval_fraction > 0.0 {
        let (tr, ev) = stratified_split(&set, eval_fraction, seed);
        let (_, rep) = train_classifier(&tr, Some(&ev), &provider, None, &opts)?;
        println!(
            "held-out macro-F1 {:.3}, accuracy {:.3}",
            rep.eval_macro_f1.unwrap_or(f64::NAN),
            rep.eval_accuracy.unwrap_or(f64::NAN)
        );
    }
    let (model, rep) = train_classifier(&set, None, &provider, None, &opts)?;
    model.save(out).with_context(|| format!("writing {}", out.display()))?;
    println!("train accuracy {:.3} -> {}", rep.train_accuracy, out.display());
    Ok(0)
}
