//! Group-wise topic keywords: cluster each group's sentences and describe
//! every cluster by its class-based TF-IDF terms.

mod tokenize;

pub use tokenize::{LexiconTokenizer, Tokenizer, WhitespaceTokenizer, MAX_KANJI_RUN};

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::thread;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::reduce::{pca_2d, umap_2d, ReduceError, ReduceMethod, UmapParams};
use crate::scaling::Group;
use crate::util::atomic_write;

pub const DEFAULT_TOPICS: usize = 5;
pub const DEFAULT_TERMS: usize = 10;

#[derive(Debug, Error)]
pub enum TopicsError {
    #[error("{n} sentences cannot form {k} clusters; use a smaller k")]
    TooFewSentences { n: usize, k: usize },
    #[error("k must be at least 1")]
    ZeroClusters,
    #[error("the number of terms per topic must be at least 1")]
    ZeroTerms,
    #[error("class {0} has no terms")]
    EmptyClass(usize),
    #[error("no classes given")]
    NoClasses,
    #[error(transparent)]
    Reduce(#[from] ReduceError),
    #[error("{path}: {detail}")]
    File { path: String, detail: String },
}

/// k-means with k-means++ seeding; best of `restarts` runs by inertia.
/// Labels are renumbered by first appearance in the input.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64, restarts: usize) -> Result<Vec<usize>, TopicsError> {
    if k == 0 {
        return Err(TopicsError::ZeroClusters);
    }
    if points.len() < k {
        return Err(TopicsError::TooFewSentences { n: points.len(), k });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(f64, Vec<usize>)> = None;
    for _ in 0..restarts.max(1) {
        let (inertia, labels) = lloyd(points, k, &mut rng);
        if best.as_ref().is_none_or(|(b, _)| inertia < *b) {
            best = Some((inertia, labels));
        }
    }
    let labels = best.expect("at least one run").1;
    let mut remap: HashMap<usize, usize> = HashMap::new();
    Ok(labels
        .into_iter()
        .map(|l| {
            let next = remap.len();
            *remap.entry(l).or_insert(next)
        })
        .collect())
}

fn d2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    centers
        .iter()
        .enumerate()
        .map(|(c, ctr)| (c, d2(p, ctr)))
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
}

fn lloyd(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> (f64, Vec<usize>) {
    let n = points.len();
    let mut chosen = vec![rng.random_range(0..n)];
    while chosen.len() < k {
        let centers: Vec<Vec<f64>> = chosen.iter().map(|&i| points[i].clone()).collect();
        let w: Vec<f64> = points.iter().map(|p| nearest(p, &centers).1).collect();
        let total: f64 = w.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random_range(0.0..total);
            let mut idx = n - 1;
            for (i, wi) in w.iter().enumerate() {
                if r < *wi {
                    idx = i;
                    break;
                }
                r -= wi;
            }
            idx
        } else {
            // all remaining points coincide with a centre
            (0..n).find(|i| !chosen.contains(i)).expect("n >= k")
        };
        chosen.push(pick);
    }
    let mut centers: Vec<Vec<f64>> = chosen.iter().map(|&i| points[i].clone()).collect();
    let mut labels = vec![usize::MAX; n];
    for _ in 0..300 {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let (c, _) = nearest(p, &centers);
            if labels[i] != c {
                labels[i] = c;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let dim = points[0].len();
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, x) in sums[l].iter_mut().zip(p) {
                *s += x;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
    }
    let inertia = points.iter().zip(&labels).map(|(p, &l)| d2(p, &centers[l])).sum();
    (inertia, labels)
}

/// Reduces sentence vectors to 2D with `reducer`, then runs seeded k-means.
/// Inputs too small or too flat to reduce are clustered as given.
pub fn cluster_group(
    vectors: &[Vec<f64>],
    k: usize,
    seed: u64,
    reducer: ReduceMethod,
) -> Result<Vec<usize>, TopicsError> {
    if k == 0 {
        return Err(TopicsError::ZeroClusters);
    }
    if vectors.len() < k {
        return Err(TopicsError::TooFewSentences { n: vectors.len(), k });
    }
    let reduced = match reducer {
        ReduceMethod::Pca => pca_2d(vectors).map(|f| f.coords),
        ReduceMethod::Umap => umap_2d(vectors, &UmapParams::default(), seed),
    };
    let planar: Vec<Vec<f64>> = match reduced {
        Ok(c) => c.into_iter().map(|p| p.to_vec()).collect(),
        Err(ReduceError::TooFew { .. } | ReduceError::ZeroVariance) => vectors.to_vec(),
        Err(e) => return Err(e.into()),
    };
    kmeans(&planar, k, seed, 4)
}

/// Class-based TF-IDF scores over a shared, sorted vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct CtfidfScores {
    pub vocabulary: Vec<String>,
    /// `scores[c][t]` for class `c` and `vocabulary[t]`.
    pub scores: Vec<Vec<f64>>,
    /// Raw counts, same layout as `scores`.
    pub counts: Vec<Vec<usize>>,
}

impl CtfidfScores {
    pub fn score(&self, class: usize, term: &str) -> Option<f64> {
        let t = self.vocabulary.binary_search_by(|v| v.as_str().cmp(term)).ok()?;
        Some(self.scores[class][t])
    }

    /// The `n` best terms of `class` present in it, ties broken by term.
    pub fn top_terms(&self, class: usize, n: usize) -> Vec<(String, f64)> {
        let mut idx: Vec<usize> = (0..self.vocabulary.len()).filter(|&t| self.counts[class][t] > 0).collect();
        idx.sort_by(|&a, &b| {
            self.scores[class][b]
                .total_cmp(&self.scores[class][a])
                .then_with(|| self.vocabulary[a].cmp(&self.vocabulary[b]))
        });
        idx.into_iter()
            .take(n)
            .map(|t| (self.vocabulary[t].clone(), self.scores[class][t]))
            .collect()
    }
}

/// `W(t, c) = tf(t, c) · ln(1 + A / f(t))`, with `tf` the count of `t` in
/// class `c`, `f` its count over all classes and `A` the mean number of
/// terms per class.
pub fn ctfidf<S: AsRef<str>>(classes: &[Vec<S>]) -> Result<CtfidfScores, TopicsError> {
    if classes.is_empty() {
        return Err(TopicsError::NoClasses);
    }
    if let Some(c) = classes.iter().position(Vec::is_empty) {
        return Err(TopicsError::EmptyClass(c));
    }
    let mut per_class: Vec<BTreeMap<&str, usize>> = Vec::with_capacity(classes.len());
    let mut total: BTreeMap<&str, usize> = BTreeMap::new();
    for class in classes {
        let mut m = BTreeMap::new();
        for t in class {
            *m.entry(t.as_ref()).or_insert(0) += 1;
            *total.entry(t.as_ref()).or_insert(0) += 1;
        }
        per_class.push(m);
    }
    let n_terms: usize = classes.iter().map(Vec::len).sum();
    let avg = n_terms as f64 / classes.len() as f64;
    let vocabulary: Vec<String> = total.keys().map(|t| t.to_string()).collect();
    let idf: Vec<f64> = total.values().map(|&f| (1.0 + avg / f as f64).ln()).collect();
    let counts: Vec<Vec<usize>> = per_class
        .iter()
        .map(|m| total.keys().map(|t| m.get(t).copied().unwrap_or(0)).collect())
        .collect();
    let scores = counts
        .iter()
        .map(|row| row.iter().zip(&idf).map(|(&tf, w)| tf as f64 * w).collect())
        .collect();
    Ok(CtfidfScores {
        vocabulary,
        scores,
        counts,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicSummary {
    pub group: Group,
    pub topic_index: usize,
    /// Best first; scores nonincreasing.
    pub top_terms: Vec<(String, f64)>,
    pub n_sentences: usize,
}

/// One opinion sentence carrying the group of its speaker (or its own).
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedSentence {
    pub group: Group,
    pub id: String,
    pub text: String,
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupOutcome {
    pub group: Group,
    pub n_sentences: usize,
    pub topics: Vec<TopicSummary>,
    /// Set when this group could not be processed; other groups are unaffected.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicsReport {
    pub topic_id: String,
    pub k: usize,
    pub terms: usize,
    pub seed: u64,
    pub reducer: ReduceMethod,
    pub stopwords: bool,
    pub groups: Vec<GroupOutcome>,
}

#[derive(Debug, Clone)]
pub struct TopicsOptions {
    pub k: usize,
    pub terms: usize,
    pub seed: u64,
    pub reducer: ReduceMethod,
}

impl Default for TopicsOptions {
    fn default() -> Self {
        Self {
            k: DEFAULT_TOPICS,
            terms: DEFAULT_TERMS,
            seed: 0,
            reducer: ReduceMethod::Pca,
        }
    }
}

fn group_topics(
    group: Group,
    sentences: &[&GroupedSentence],
    opts: &TopicsOptions,
    tokenizer: &dyn Tokenizer,
) -> Result<Vec<TopicSummary>, TopicsError> {
    if opts.terms == 0 {
        return Err(TopicsError::ZeroTerms);
    }
    let vectors: Vec<Vec<f64>> = sentences.iter().map(|s| s.vector.clone()).collect();
    let labels = cluster_group(&vectors, opts.k, opts.seed, opts.reducer)?;
    let mut sizes = vec![0usize; opts.k];
    let mut tokens: Vec<Vec<String>> = vec![Vec::new(); opts.k];
    for (s, &l) in sentences.iter().zip(&labels) {
        sizes[l] += 1;
        tokens[l].extend(tokenizer.tokenize(&s.text));
    }
    // topic 0 is the largest cluster
    let mut order: Vec<usize> = (0..opts.k).collect();
    order.sort_by(|&a, &b| sizes[b].cmp(&sizes[a]).then(a.cmp(&b)));
    let scored: Vec<usize> = order.iter().copied().filter(|&c| !tokens[c].is_empty()).collect();
    let scores = if scored.is_empty() {
        None
    } else {
        let classes: Vec<Vec<String>> = scored.iter().map(|&c| tokens[c].clone()).collect();
        Some(ctfidf(&classes)?)
    };
    Ok(order
        .iter()
        .enumerate()
        .map(|(topic_index, &c)| {
            let top_terms = match (&scores, scored.iter().position(|&s| s == c)) {
                (Some(sc), Some(row)) => sc.top_terms(row, opts.terms),
                _ => Vec::new(),
            };
            TopicSummary {
                group,
                topic_index,
                top_terms,
                n_sentences: sizes[c],
            }
        })
        .collect())
}

/// Clusters and describes each group independently (in parallel). A group
/// that fails records its error and does not affect the others.
pub fn topics_report(
    topic_id: &str,
    sentences: &[GroupedSentence],
    opts: &TopicsOptions,
    tokenizer: &dyn Tokenizer,
    stopwords: bool,
) -> TopicsReport {
    let groups = thread::scope(|scope| {
        let handles: Vec<_> = Group::ALL
            .iter()
            .map(|&g| {
                let members: Vec<&GroupedSentence> = sentences.iter().filter(|s| s.group == g).collect();
                scope.spawn(move || {
                    let result = group_topics(g, &members, opts, tokenizer);
                    let (topics, error) = match result {
                        Ok(t) => (t, None),
                        Err(e) => (Vec::new(), Some(e.to_string())),
                    };
                    GroupOutcome {
                        group: g,
                        n_sentences: members.len(),
                        topics,
                        error,
                    }
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("topic worker panicked")).collect()
    });
    TopicsReport {
        topic_id: topic_id.to_string(),
        k: opts.k,
        terms: opts.terms,
        seed: opts.seed,
        reducer: opts.reducer,
        stopwords,
        groups,
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TermRow {
    group: Group,
    topic_index: usize,
    rank: usize,
    term: String,
    score: f64,
}

fn file_err(path: &Path, e: impl ToString) -> TopicsError {
    TopicsError::File {
        path: path.display().to_string(),
        detail: e.to_string(),
    }
}

/// Long-format table: `group, topic_index, rank, term, score`.
pub fn write_terms_table(report: &TopicsReport, path: &Path) -> Result<(), TopicsError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    // header even when no rows follow
    w.write_record(["group", "topic_index", "rank", "term", "score"])
        .map_err(|e| file_err(path, e))?;
    let mut w = {
        let bytes = w.into_inner().map_err(|e| file_err(path, e))?;
        csv::WriterBuilder::new().has_headers(false).from_writer(bytes)
    };
    for g in &report.groups {
        for t in &g.topics {
            for (rank, (term, score)) in t.top_terms.iter().enumerate() {
                w.serialize(TermRow {
                    group: g.group,
                    topic_index: t.topic_index,
                    rank,
                    term: term.clone(),
                    score: *score,
                })
                .map_err(|e| file_err(path, e))?;
            }
        }
    }
    let bytes = w.into_inner().map_err(|e| file_err(path, e))?;
    atomic_write(path, &bytes).map_err(|e| file_err(path, e))
}

/// `(group, topic_index) -> [(term, score)]`, best first.
pub type TermsTable = BTreeMap<(Group, usize), Vec<(String, f64)>>;

/// Reads the long-format table back into a [`TermsTable`].
pub fn read_terms_table(path: &Path) -> Result<TermsTable, TopicsError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| file_err(path, e))?;
    type Ranked = Vec<(usize, String, f64)>;
    let mut out: BTreeMap<(Group, usize), Ranked> = BTreeMap::new();
    for row in r.deserialize::<TermRow>() {
        let row = row.map_err(|e| file_err(path, e))?;
        out.entry((row.group, row.topic_index))
            .or_default()
            .push((row.rank, row.term, row.score));
    }
    Ok(out
        .into_iter()
        .map(|(key, mut rows)| {
            rows.sort_by_key(|r| r.0);
            (key, rows.into_iter().map(|(_, t, s)| (t, s)).collect())
        })
        .collect())
}

/// Markdown table: one row per topic, one column per group.
pub fn render_markdown(report: &TopicsReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# Topic terms: {}\n", report.topic_id);
    let labels = ["Group 0 (Left)", "Group 1 (Centered)", "Group 2 (Right)"];
    let _ = writeln!(s, "| Topics | {} |", labels.join(" | "));
    let _ = writeln!(s, "|---|---|---|---|");
    let cell = |g: &GroupOutcome, i: usize| -> String {
        if let Some(e) = &g.error {
            return if i == 0 { format!("(error: {})", e.replace('|', "/")) } else { String::new() };
        }
        g.topics
            .get(i)
            .map(|t| {
                t.top_terms
                    .iter()
                    .map(|(term, _)| format!("'{}'", term.replace('|', "/")))
                    .collect::<Vec<_>>()
                    .join(", ")
            })
            .unwrap_or_default()
    };
    for i in 0..report.k {
        let cells: Vec<String> = report.groups.iter().map(|g| cell(g, i)).collect();
        let _ = writeln!(s, "| Topic {i} | {} |", cells.join(" | "));
    }
    s
}

pub fn write_report_json(report: &TopicsReport, path: &Path) -> Result<(), TopicsError> {
    let mut bytes = serde_json::to_vec_pretty(report).expect("plain data");
    bytes.push(b'\n');
    atomic_write(path, &bytes).map_err(|e| file_err(path, e))
}

pub fn read_report_json(path: &Path) -> Result<TopicsReport, TopicsError> {
    let text = fs::read_to_string(path).map_err(|e| file_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| file_err(path, e))
}
