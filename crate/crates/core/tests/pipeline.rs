use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use ideoaxis_core::embedding::ProviderKind;
use ideoaxis_core::pipeline::{
    EntryStatus, ManifestEntry, Pipeline, PipelineConfig, PipelineError, Stage, CACHE_DIR, MANIFEST_FILE,
};

fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/fixture")
}

fn fixture_config() -> PipelineConfig {
    PipelineConfig::load(&fixture_dir().join("config.toml")).unwrap()
}

fn pipeline(config: PipelineConfig, out: &Path) -> Pipeline {
    Pipeline::new(config, fixture_dir()).with_output_dir(out.to_path_buf())
}

fn entries(out: &Path) -> Vec<ManifestEntry> {
    fs::read_to_string(out.join(MANIFEST_FILE))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn files_under(root: &Path, dir: &Path, out: &mut BTreeSet<String>) {
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            files_under(root, &p, out);
        } else {
            let rel = p.strip_prefix(root).unwrap();
            out.insert(rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/"));
        }
    }
}

#[test]
fn full_offline_run_then_cache_hits() {
    let tmp = tempfile::tempdir().unwrap();
    let p = pipeline(fixture_config(), tmp.path());
    let first = p.run_all(None).unwrap();
    assert_eq!(first.stages.len(), 9);
    assert!(first.stages.iter().all(|s| s.status == EntryStatus::Run));
    assert_eq!(first.checks_failed, 0);
    assert!(tmp.path().join("validate/report.md").exists());

    let second = p.run_all(None).unwrap();
    assert!(second.stages.iter().all(|s| s.status == EntryStatus::CacheHit));
    let log = entries(tmp.path());
    assert_eq!(log.len(), 18);
    for (a, b) in log[..9].iter().zip(&log[9..]) {
        assert_eq!(a.fingerprint, b.fingerprint);
        assert_eq!(a.outputs, b.outputs);
    }

    // every artifact is reachable from the manifest
    let mut on_disk = BTreeSet::new();
    files_under(tmp.path(), tmp.path(), &mut on_disk);
    on_disk.retain(|f| f != MANIFEST_FILE && !f.starts_with(&format!("{CACHE_DIR}/")));
    let listed: BTreeSet<String> = log.iter().flat_map(|e| e.outputs.iter().map(|o| o.path.clone())).collect();
    assert_eq!(on_disk, listed);
}

#[test]
fn single_stage_rerun_is_a_cache_hit() {
    let tmp = tempfile::tempdir().unwrap();
    let p = pipeline(fixture_config(), tmp.path());
    p.run_all(None).unwrap();
    let s = p.run_stage(Stage::Scale).unwrap();
    assert_eq!(s.status, EntryStatus::CacheHit);
    let last = entries(tmp.path()).pop().unwrap();
    assert_eq!((last.stage, last.status), (Stage::Scale, EntryStatus::CacheHit));
}

#[test]
fn scale_before_profile_names_the_missing_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let p = pipeline(fixture_config(), tmp.path());
    let err = p.run_stage(Stage::Scale).unwrap_err();
    assert!(
        matches!(err, PipelineError::MissingUpstream { stage: Stage::Scale, needs: Stage::Profile }),
        "{err}"
    );
    assert!(err.to_string().contains("run PROFILE first"));
}

#[test]
fn missing_roster_fails_at_ingest_with_path() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = fixture_config();
    c.roster = PathBuf::from("no-such-roster.toml");
    let err = pipeline(c, tmp.path()).run_all(None).unwrap_err();
    match &err {
        PipelineError::Stage { stage, message } => {
            assert_eq!(*stage, Stage::Ingest);
            assert!(message.contains("no-such-roster.toml"), "{message}");
        }
        other => panic!("unexpected error {other}"),
    }
}

#[test]
fn edited_artifact_is_reported_stale() {
    let tmp = tempfile::tempdir().unwrap();
    let p = pipeline(fixture_config(), tmp.path());
    for s in [Stage::Ingest, Stage::Classify, Stage::Embed, Stage::Profile, Stage::Axis] {
        p.run_stage(s).unwrap();
    }
    let prof = tmp.path().join("profiles/jsdf.jsonl");
    let mut text = fs::read_to_string(&prof).unwrap();
    text.push('\n');
    fs::write(&prof, text).unwrap();
    let err = p.run_stage(Stage::Scale).unwrap_err();
    assert!(matches!(err, PipelineError::Stale { stage: Stage::Profile, .. }), "{err}");
}

#[test]
fn from_scale_after_axis_edit_reruns_only_downstream() {
    let tmp = tempfile::tempdir().unwrap();
    pipeline(fixture_config(), tmp.path()).run_all(None).unwrap();
    let before = entries(tmp.path()).len();

    let mut c = fixture_config();
    let axis = c.axes.iter_mut().find(|a| a.id == "jsdf-pair").unwrap();
    std::mem::swap(&mut axis.pro, &mut axis.con);
    let summary = pipeline(c, tmp.path()).run_all(Some(Stage::Scale)).unwrap();
    let ran: Vec<Stage> = summary.stages.iter().map(|s| s.stage).collect();
    assert_eq!(ran, [Stage::Scale, Stage::Topics, Stage::Plot, Stage::Validate]);
    assert!(summary.stages.iter().all(|s| s.status == EntryStatus::Run));
    let log = entries(tmp.path());
    assert_eq!(log.len(), before + 4);
    assert!(log[before..].iter().all(|e| e.stage >= Stage::Scale));
}

#[test]
fn offline_run_rejects_http_provider() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = fixture_config();
    c.provider.kind = ProviderKind::Http;
    c.provider.endpoint = Some("http://127.0.0.1:9/embed".into());
    let p = pipeline(c, tmp.path());
    for s in [Stage::Ingest, Stage::Classify] {
        p.run_stage(s).unwrap();
    }
    let err = p.run_stage(Stage::Embed).unwrap_err();
    assert!(err.is_config(), "{err}");
}

#[test]
fn sentence_level_grouping_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = fixture_config();
    c.grouping = ideoaxis_core::pipeline::GroupingLevel::Sentence;
    let s = pipeline(c, tmp.path()).run_all(None).unwrap();
    assert_eq!(s.stages.len(), 9);
    let report = ideoaxis_core::topics::read_report_json(&tmp.path().join("topics/npp-seeds.json")).unwrap();
    assert!(report.groups.iter().all(|g| g.error.is_none() && g.n_sentences > 0));
}

#[test]
fn live_template_parses() {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/live/config.toml");
    let c = PipelineConfig::load(&path).unwrap();
    assert!(!c.offline);
    assert_eq!(c.topics.len(), 2);
    assert!(c.topics.iter().all(|t| t.query_words.len() == 5));
}
