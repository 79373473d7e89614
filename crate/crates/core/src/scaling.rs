//! Speaker profiles, reference axes, projection, and the three-way split.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{
    dot, embed_batch, mean_vector, norm, EmbeddingCache, EmbeddingError, EmbeddingProvider,
    EmbeddingVector,
};
use crate::stats::{quantile_sorted, sorted_copy};
use crate::util::atomic_write;

pub const DEFAULT_MIN_SENTENCES: usize = 5;
pub const GROUP_COUNT: usize = 3;

#[derive(Debug, Error)]
pub enum ScalingError {
    #[error("degenerate axis: pro and con anchors coincide ({0})")]
    DegenerateAxis(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("anchors disagree: {0}")]
    Incompatible(String),
    #[error("need at least {needed} results to split, got {got}")]
    TooFewResults { needed: usize, got: usize },
    #[error("only a {GROUP_COUNT}-way split is supported, asked for {0}")]
    UnsupportedGroupCount(usize),
    #[error("seed list for the {0} side is empty")]
    EmptySeeds(&'static str),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error("{path}: {detail}")]
    File { path: String, detail: String },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregationOptions {
    /// Scale every sentence vector to unit length before averaging.
    pub normalize_sentence_vectors: bool,
}

fn aggregate(
    mut vectors: Vec<EmbeddingVector>,
    opts: AggregationOptions,
) -> Result<EmbeddingVector, EmbeddingError> {
    if opts.normalize_sentence_vectors {
        vectors = vectors.iter().map(EmbeddingVector::normalized).collect();
    }
    mean_vector(&vectors)
}

/// One embedded opinion sentence with its speaker metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileInput {
    pub topic_id: String,
    pub speaker_name: String,
    pub party: String,
    pub speech_id: String,
    pub index: usize,
    pub text: String,
    pub vector: EmbeddingVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StanceProfile {
    pub speaker_name: String,
    pub party: String,
    pub topic_id: String,
    pub mean_embedding: EmbeddingVector,
    pub n_opinion_sentences: usize,
    pub n_speeches: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedSpeaker {
    pub topic_id: String,
    pub speaker_name: String,
    pub n_opinion_sentences: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProfileBuild {
    pub profiles: Vec<StanceProfile>,
    pub skipped: Vec<SkippedSpeaker>,
}

/// One profile per `(topic, speaker)`, averaging that speaker's sentence
/// vectors in `(speech_id, index)` order. Speakers below `min_sentences`
/// go to the skip list. Output is ordered by topic then speaker name.
pub fn build_profiles(
    inputs: &[ProfileInput],
    min_sentences: usize,
    opts: AggregationOptions,
) -> Result<ProfileBuild, ScalingError> {
    let min_sentences = min_sentences.max(1);
    let mut by_speaker: BTreeMap<(&str, &str), Vec<&ProfileInput>> = BTreeMap::new();
    for inp in inputs {
        by_speaker
            .entry((inp.topic_id.as_str(), inp.speaker_name.as_str()))
            .or_default()
            .push(inp);
    }
    let mut out = ProfileBuild {
        profiles: Vec::new(),
        skipped: Vec::new(),
    };
    for ((topic, speaker), mut rows) in by_speaker {
        if rows.len() < min_sentences {
            out.skipped.push(SkippedSpeaker {
                topic_id: topic.to_string(),
                speaker_name: speaker.to_string(),
                n_opinion_sentences: rows.len(),
            });
            continue;
        }
        rows.sort_by(|a, b| (&a.speech_id, a.index).cmp(&(&b.speech_id, b.index)));
        let speeches: BTreeSet<&str> = rows.iter().map(|r| r.speech_id.as_str()).collect();
        let mean = aggregate(rows.iter().map(|r| r.vector.clone()).collect(), opts)?;
        out.profiles.push(StanceProfile {
            speaker_name: speaker.to_string(),
            party: rows[0].party.clone(),
            topic_id: topic.to_string(),
            mean_embedding: mean,
            n_opinion_sentences: rows.len(),
            n_speeches: speeches.len(),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum AxisMethod {
    Pair,
    Generated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceAxis {
    pub topic_id: String,
    pub anchor_pro: EmbeddingVector,
    pub anchor_con: EmbeddingVector,
    /// Unit vector from `anchor_con` towards `anchor_pro`.
    pub direction: EmbeddingVector,
    pub method: AxisMethod,
    /// `[pro, con]`
    pub anchor_labels: [String; 2],
    /// Content hashes of the seed bundles the anchors came from.
    #[serde(default)]
    pub seed_hashes: Vec<String>,
}

impl ReferenceAxis {
    pub fn new(
        topic_id: impl Into<String>,
        anchor_pro: EmbeddingVector,
        anchor_con: EmbeddingVector,
        method: AxisMethod,
        anchor_labels: [String; 2],
    ) -> Result<Self, ScalingError> {
        if anchor_pro.provider_id != anchor_con.provider_id {
            return Err(ScalingError::Incompatible(format!(
                "providers {} and {}",
                anchor_pro.provider_id, anchor_con.provider_id
            )));
        }
        if anchor_pro.dim() != anchor_con.dim() {
            return Err(ScalingError::Dimension(format!(
                "anchor dimensions {} and {}",
                anchor_pro.dim(),
                anchor_con.dim()
            )));
        }
        let diff: Vec<f64> = anchor_pro
            .values
            .iter()
            .zip(&anchor_con.values)
            .map(|(p, c)| p - c)
            .collect();
        let span = norm(&diff);
        let scale = anchor_pro.norm().max(anchor_con.norm());
        if !span.is_finite() || span <= 1e-12 * scale || span == 0.0 {
            return Err(ScalingError::DegenerateAxis(format!(
                "{} vs {}",
                anchor_labels[0], anchor_labels[1]
            )));
        }
        let direction = EmbeddingVector::new(
            diff.into_iter().map(|d| d / span).collect(),
            anchor_pro.provider_id.clone(),
        );
        Ok(Self {
            topic_id: topic_id.into(),
            anchor_pro,
            anchor_con,
            direction,
            method,
            anchor_labels,
            seed_hashes: Vec::new(),
        })
    }

    /// Distance between the anchors.
    pub fn span(&self) -> f64 {
        let diff: Vec<f64> = self
            .anchor_pro
            .values
            .iter()
            .zip(&self.anchor_con.values)
            .map(|(p, c)| p - c)
            .collect();
        norm(&diff)
    }

    /// The same axis with the anchors exchanged.
    pub fn swapped(&self) -> Result<Self, ScalingError> {
        let mut a = Self::new(
            self.topic_id.clone(),
            self.anchor_con.clone(),
            self.anchor_pro.clone(),
            self.method,
            [self.anchor_labels[1].clone(), self.anchor_labels[0].clone()],
        )?;
        a.seed_hashes = self.seed_hashes.clone();
        Ok(a)
    }

    /// `(raw, normalized)` position of an arbitrary vector.
    pub fn locate(&self, v: &[f64]) -> Result<(f64, f64), ScalingError> {
        if v.len() != self.direction.dim() {
            return Err(ScalingError::Dimension(format!(
                "vector has {} components, axis has {}",
                v.len(),
                self.direction.dim()
            )));
        }
        let shifted: Vec<f64> = v
            .iter()
            .zip(&self.anchor_con.values)
            .map(|(x, c)| x - c)
            .collect();
        let raw = dot(&shifted, &self.direction.values);
        Ok((raw, raw / self.span()))
    }

    pub fn save(&self, path: &Path) -> Result<(), ScalingError> {
        let mut bytes = serde_json::to_vec(self).expect("plain data");
        bytes.push(b'\n');
        atomic_write(path, &bytes).map_err(|e| ScalingError::File {
            path: path.display().to_string(),
            detail: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, ScalingError> {
        let ferr = |detail: String| ScalingError::File {
            path: path.display().to_string(),
            detail,
        };
        let text = fs::read_to_string(path).map_err(|e| ferr(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| ferr(e.to_string()))
    }
}

/// Anchors are the two speakers' profile means.
pub fn build_axis_from_pair(
    pro: &StanceProfile,
    con: &StanceProfile,
) -> Result<ReferenceAxis, ScalingError> {
    if pro.topic_id != con.topic_id {
        return Err(ScalingError::Incompatible(format!(
            "topics {} and {}",
            pro.topic_id, con.topic_id
        )));
    }
    ReferenceAxis::new(
        pro.topic_id.clone(),
        pro.mean_embedding.clone(),
        con.mean_embedding.clone(),
        AxisMethod::Pair,
        [pro.speaker_name.clone(), con.speaker_name.clone()],
    )
}

/// Anchors are the means of the embedded pro and con seed texts.
pub fn build_axis_from_seeds<S: AsRef<str>>(
    topic_id: &str,
    pro_texts: &[S],
    con_texts: &[S],
    provider: &dyn EmbeddingProvider,
    cache: Option<&EmbeddingCache>,
    opts: AggregationOptions,
) -> Result<ReferenceAxis, ScalingError> {
    if pro_texts.is_empty() {
        return Err(ScalingError::EmptySeeds("pro"));
    }
    if con_texts.is_empty() {
        return Err(ScalingError::EmptySeeds("con"));
    }
    let pro = aggregate(embed_batch(pro_texts, provider, cache)?, opts)?;
    let con = aggregate(embed_batch(con_texts, provider, cache)?, opts)?;
    ReferenceAxis::new(
        topic_id,
        pro,
        con,
        AxisMethod::Generated,
        ["generated-pro".to_string(), "generated-con".to_string()],
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Group {
    Left,
    Center,
    Right,
}

impl Group {
    pub const ALL: [Group; 3] = [Group::Left, Group::Center, Group::Right];

    pub fn as_str(self) -> &'static str {
        match self {
            Group::Left => "LEFT",
            Group::Center => "CENTER",
            Group::Right => "RIGHT",
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Group {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Group::ALL
            .into_iter()
            .find(|g| g.as_str() == s)
            .ok_or_else(|| format!("unknown group {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionResult {
    pub topic_id: String,
    pub speaker_name: String,
    pub party: String,
    /// Signed distance from `anchor_con` along the axis direction.
    pub raw: f64,
    /// 0 at `anchor_con`, 1 at `anchor_pro`; may fall outside `[0, 1]`.
    pub normalized: f64,
    pub group: Option<Group>,
    pub n_opinion_sentences: usize,
}

pub fn project(profile: &StanceProfile, axis: &ReferenceAxis) -> Result<ProjectionResult, ScalingError> {
    let (raw, normalized) = axis.locate(&profile.mean_embedding.values)?;
    Ok(ProjectionResult {
        topic_id: profile.topic_id.clone(),
        speaker_name: profile.speaker_name.clone(),
        party: profile.party.clone(),
        raw,
        normalized,
        group: None,
        n_opinion_sentences: profile.n_opinion_sentences,
    })
}

/// Group sizes for an equal-frequency split of `n` items into `k` groups;
/// the lowest groups absorb the remainder.
pub fn split_sizes(n: usize, k: usize) -> Vec<usize> {
    (0..k).map(|i| n / k + usize::from(i < n % k)).collect()
}

/// Assigns LEFT/CENTER/RIGHT by rank on `normalized` (ties by speaker
/// name). Input order is preserved.
pub fn split_groups(
    mut results: Vec<ProjectionResult>,
    k: usize,
) -> Result<Vec<ProjectionResult>, ScalingError> {
    if k != GROUP_COUNT {
        return Err(ScalingError::UnsupportedGroupCount(k));
    }
    if results.len() < k {
        return Err(ScalingError::TooFewResults {
            needed: k,
            got: results.len(),
        });
    }
    let mut order: Vec<usize> = (0..results.len()).collect();
    order.sort_by(|&a, &b| {
        results[a]
            .normalized
            .total_cmp(&results[b].normalized)
            .then_with(|| results[a].speaker_name.cmp(&results[b].speaker_name))
    });
    let sizes = split_sizes(results.len(), k);
    let mut pos = 0;
    for (g, size) in Group::ALL.into_iter().zip(sizes) {
        for &i in &order[pos..pos + size] {
            results[i].group = Some(g);
        }
        pos += size;
    }
    Ok(results)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartySummary {
    pub party: String,
    pub n: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

/// Five-number summaries of `normalized` per party, ordered by median.
pub fn party_summary(results: &[ProjectionResult]) -> Vec<PartySummary> {
    let mut by_party: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for r in results {
        by_party.entry(r.party.as_str()).or_default().push(r.normalized);
    }
    let mut out: Vec<PartySummary> = by_party
        .into_iter()
        .map(|(party, scores)| {
            let s = sorted_copy(&scores);
            PartySummary {
                party: party.to_string(),
                n: s.len(),
                min: s[0],
                q1: quantile_sorted(&s, 0.25),
                median: quantile_sorted(&s, 0.5),
                q3: quantile_sorted(&s, 0.75),
                max: s[s.len() - 1],
            }
        })
        .collect();
    out.sort_by(|a, b| a.median.total_cmp(&b.median).then_with(|| a.party.cmp(&b.party)));
    out
}

#[derive(Debug, Serialize, Deserialize)]
struct ResultRow {
    topic_id: String,
    speaker_name: String,
    party: String,
    raw: f64,
    normalized: f64,
    group: String,
    n_opinion_sentences: usize,
}

/// CSV with columns `topic_id, speaker_name, party, raw, normalized, group,
/// n_opinion_sentences`. An unassigned group is written empty.
pub fn write_results(results: &[ProjectionResult], path: &Path) -> Result<(), ScalingError> {
    let ferr = |detail: String| ScalingError::File {
        path: path.display().to_string(),
        detail,
    };
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in results {
        w.serialize(ResultRow {
            topic_id: r.topic_id.clone(),
            speaker_name: r.speaker_name.clone(),
            party: r.party.clone(),
            raw: r.raw,
            normalized: r.normalized,
            group: r.group.map(|g| g.to_string()).unwrap_or_default(),
            n_opinion_sentences: r.n_opinion_sentences,
        })
        .map_err(|e| ferr(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| ferr(e.to_string()))?;
    atomic_write(path, &bytes).map_err(|e| ferr(e.to_string()))
}

pub fn read_results(path: &Path) -> Result<Vec<ProjectionResult>, ScalingError> {
    let ferr = |detail: String| ScalingError::File {
        path: path.display().to_string(),
        detail,
    };
    let mut r = csv::Reader::from_path(path).map_err(|e| ferr(e.to_string()))?;
    r.deserialize::<ResultRow>()
        .map(|row| {
            let row = row.map_err(|e| ferr(e.to_string()))?;
            let group = if row.group.is_empty() {
                None
            } else {
                Some(row.group.parse().map_err(ferr)?)
            };
            Ok(ProjectionResult {
                topic_id: row.topic_id,
                speaker_name: row.speaker_name,
                party: row.party,
                raw: row.raw,
                normalized: row.normalized,
                group,
                n_opinion_sentences: row.n_opinion_sentences,
            })
        })
        .collect()
}

/// One JSON profile per line.
pub fn write_profiles(profiles: &[StanceProfile], path: &Path) -> Result<(), ScalingError> {
    let mut buf = Vec::new();
    for p in profiles {
        serde_json::to_writer(&mut buf, p).expect("plain data");
        buf.push(b'\n');
    }
    atomic_write(path, &buf).map_err(|e| ScalingError::File {
        path: path.display().to_string(),
        detail: e.to_string(),
    })
}

pub fn read_profiles(path: &Path) -> Result<Vec<StanceProfile>, ScalingError> {
    let ferr = |detail: String| ScalingError::File {
        path: path.display().to_string(),
        detail,
    };
    let text = fs::read_to_string(path).map_err(|e| ferr(e.to_string()))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| ferr(format!("line {}: {e}", i + 1))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn ev(v: &[f64]) -> EmbeddingVector {
        EmbeddingVector::new(v.to_vec(), "p")
    }

    fn profile(name: &str, party: &str, v: &[f64]) -> StanceProfile {
        StanceProfile {
            speaker_name: name.into(),
            party: party.into(),
            topic_id: "t".into(),
            mean_embedding: ev(v),
            n_opinion_sentences: 5,
            n_speeches: 1,
        }
    }

    fn input(speaker: &str, speech: &str, index: usize, v: &[f64]) -> ProfileInput {
        ProfileInput {
            topic_id: "t".into(),
            speaker_name: speaker.into(),
            party: "LDP".into(),
            speech_id: speech.into(),
            index,
            text: format!("{speech}-{index}"),
            vector: ev(v),
        }
    }

    fn result(name: &str, score: f64) -> ProjectionResult {
        ProjectionResult {
            topic_id: "t".into(),
            speaker_name: name.into(),
            party: "LDP".into(),
            raw: score,
            normalized: score,
            group: None,
            n_opinion_sentences: 5,
        }
    }

    #[test]
    fn profile_mean_over_sentences() {
        let b = build_profiles(
            &[input("a", "s1", 0, &[1.0, 0.0]), input("a", "s2", 0, &[0.0, 1.0])],
            1,
            AggregationOptions::default(),
        )
        .unwrap();
        assert_eq!(b.profiles.len(), 1);
        assert_eq!(b.profiles[0].mean_embedding.values, vec![0.5, 0.5]);
        assert_eq!(b.profiles[0].n_speeches, 2);
    }

    #[test]
    fn speakers_below_threshold_are_skipped() {
        let b = build_profiles(
            &[input("a", "s1", 0, &[1.0, 0.0]), input("a", "s1", 1, &[0.0, 1.0])],
            5,
            AggregationOptions::default(),
        )
        .unwrap();
        assert!(b.profiles.is_empty());
        assert_eq!(
            b.skipped,
            vec![SkippedSpeaker {
                topic_id: "t".into(),
                speaker_name: "a".into(),
                n_opinion_sentences: 2
            }]
        );
    }

    #[test]
    fn speakers_do_not_mix() {
        let b = build_profiles(
            &[input("a", "s1", 0, &[1.0, 0.0]), input("b", "s2", 0, &[0.0, 3.0])],
            1,
            AggregationOptions::default(),
        )
        .unwrap();
        assert_eq!(b.profiles[0].mean_embedding.values, vec![1.0, 0.0]);
        assert_eq!(b.profiles[1].mean_embedding.values, vec![0.0, 3.0]);
    }

    #[test]
    fn normalization_option_scales_sentences_first() {
        let b = build_profiles(
            &[input("a", "s1", 0, &[4.0, 0.0]), input("a", "s1", 1, &[0.0, 2.0])],
            1,
            AggregationOptions { normalize_sentence_vectors: true },
        )
        .unwrap();
        assert_eq!(b.profiles[0].mean_embedding.values, vec![0.5, 0.5]);
    }

    #[test]
    fn pair_axis_direction() {
        let axis = build_axis_from_pair(&profile("pro", "LDP", &[1.0, 0.0]), &profile("con", "JCP", &[0.0, 1.0])).unwrap();
        let s = 1.0 / 2f64.sqrt();
        assert_abs_diff_eq!(axis.direction.values[0], s, epsilon = 1e-15);
        assert_abs_diff_eq!(axis.direction.values[1], -s, epsilon = 1e-15);
        assert_eq!(axis.anchor_labels, ["pro".to_string(), "con".to_string()]);
        assert_eq!(axis.method, AxisMethod::Pair);
    }

    #[test]
    fn identical_anchors_are_degenerate() {
        let p = profile("a", "LDP", &[0.3, 0.3]);
        assert!(matches!(build_axis_from_pair(&p, &p), Err(ScalingError::DegenerateAxis(_))));
    }

    #[test]
    fn projection_midpoint_and_anchor() {
        let axis = ReferenceAxis::new("t", ev(&[2.0, 0.0]), ev(&[0.0, 0.0]), AxisMethod::Pair, ["p".into(), "c".into()]).unwrap();
        let r = project(&profile("x", "LDP", &[1.0, 1.0]), &axis).unwrap();
        assert_abs_diff_eq!(r.normalized, 0.5);
        assert_abs_diff_eq!(r.raw, 1.0);
        let r = project(&profile("x", "LDP", &[2.0, 0.0]), &axis).unwrap();
        assert_abs_diff_eq!(r.normalized, 1.0);
        assert!(project(&profile("x", "LDP", &[1.0]), &axis).is_err());
    }

    #[test]
    fn swap_maps_x_to_one_minus_x() {
        let axis = ReferenceAxis::new("t", ev(&[2.0, 1.0]), ev(&[-1.0, 0.5]), AxisMethod::Pair, ["p".into(), "c".into()]).unwrap();
        let swapped = axis.swapped().unwrap();
        for v in [[0.0, 0.0], [3.0, -2.0], [0.5, 0.7]] {
            let (_, x) = axis.locate(&v).unwrap();
            let (_, y) = swapped.locate(&v).unwrap();
            assert_abs_diff_eq!(x + y, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn split_six() {
        let rs: Vec<_> = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6]
            .iter()
            .enumerate()
            .map(|(i, s)| result(&format!("s{i}"), *s))
            .collect();
        let g: Vec<_> = split_groups(rs, 3).unwrap().iter().map(|r| r.group.unwrap()).collect();
        use Group::*;
        assert_eq!(g, [Left, Left, Center, Center, Right, Right]);
    }

    #[test]
    fn split_seven_left_absorbs() {
        let rs: Vec<_> = (0..7).map(|i| result(&format!("s{i}"), i as f64)).collect();
        let out = split_groups(rs, 3).unwrap();
        let count = |g| out.iter().filter(|r| r.group == Some(g)).count();
        assert_eq!((count(Group::Left), count(Group::Center), count(Group::Right)), (3, 2, 2));
    }

    #[test]
    fn split_ties_by_name() {
        let rs: Vec<_> = ["f", "b", "e", "a", "d", "c"].iter().map(|n| result(n, 0.5)).collect();
        let out = split_groups(rs, 3).unwrap();
        let left: BTreeSet<_> = out.iter().filter(|r| r.group == Some(Group::Left)).map(|r| r.speaker_name.as_str()).collect();
        assert_eq!(left, BTreeSet::from(["a", "b"]));
    }

    #[test]
    fn split_errors() {
        assert!(matches!(split_groups(vec![result("a", 0.0)], 3), Err(ScalingError::TooFewResults { .. })));
        assert!(matches!(split_groups(vec![], 4), Err(ScalingError::UnsupportedGroupCount(4))));
    }

    #[test]
    fn five_number_summaries() {
        let mut a = result("a", 0.0);
        a.party = "JCP".into();
        let mut b = result("b", 1.0);
        b.party = "JCP".into();
        let mut c = result("c", 0.4);
        c.party = "NDP".into();
        let s = party_summary(&[a, b, c]);
        assert_eq!(s[0].party, "NDP");
        assert_eq!((s[0].min, s[0].q1, s[0].median, s[0].q3, s[0].max), (0.4, 0.4, 0.4, 0.4, 0.4));
        assert_eq!((s[1].q1, s[1].median, s[1].q3), (0.25, 0.5, 0.75));
    }

    #[test]
    fn results_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        let mut rs = vec![result("稲田朋美", 0.123456789012345), result("笠井亮", -0.25)];
        rs[0].group = Some(Group::Right);
        write_results(&rs, &p).unwrap();
        assert_eq!(read_results(&p).unwrap(), rs);
        let header = fs::read_to_string(&p).unwrap();
        assert!(header.starts_with("topic_id,speaker_name,party,raw,normalized,group,n_opinion_sentences\n"));
    }
}
