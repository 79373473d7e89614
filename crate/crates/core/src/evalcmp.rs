//! Agreement between estimated party positions and expert placements.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scaling::ProjectionResult;
use crate::stats::{kendall_tau_b, median, spearman};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no projected parties")]
    NoParties,
    #[error("only {found} parties in common with the expert source (need 3): {parties:?}")]
    TooFewCommon { found: usize, parties: Vec<String> },
    #[error("rank correlation undefined: {0} positions are all equal")]
    Constant(&'static str),
    #[error("expert file {path}, row {row}: {detail}")]
    Expert { path: String, row: usize, detail: String },
    #[error("sign check {line:?}: {detail}")]
    Check { line: String, detail: String },
    #[error("{path}: {detail}")]
    File { path: String, detail: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Statistic {
    #[default]
    Median,
    Mean,
}

impl Statistic {
    pub fn as_str(self) -> &'static str {
        match self {
            Statistic::Median => "median",
            Statistic::Mean => "mean",
        }
    }

    fn apply(self, values: &[f64]) -> f64 {
        match self {
            Statistic::Median => median(values),
            Statistic::Mean => values.iter().sum::<f64>() / values.len() as f64,
        }
    }
}

impl FromStr for Statistic {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "median" => Ok(Statistic::Median),
            "mean" => Ok(Statistic::Mean),
            _ => Err(format!("unknown statistic {s:?} (median|mean)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartyPosition {
    pub party: String,
    pub position: f64,
    pub n_members: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartyPositions {
    pub statistic: Statistic,
    /// Ordered by party code.
    pub parties: Vec<PartyPosition>,
}

impl PartyPositions {
    pub fn get(&self, party: &str) -> Option<&PartyPosition> {
        self.parties.iter().find(|p| p.party == party)
    }
}

/// Per-party median (or mean) of normalized scores.
pub fn party_positions(results: &[ProjectionResult], statistic: Statistic) -> Result<PartyPositions, EvalError> {
    let mut by_party: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for r in results {
        by_party.entry(&r.party).or_default().push(r.normalized);
    }
    if by_party.is_empty() {
        return Err(EvalError::NoParties);
    }
    Ok(PartyPositions {
        statistic,
        parties: by_party
            .into_iter()
            .map(|(party, v)| PartyPosition {
                party: party.to_string(),
                position: statistic.apply(&v),
                n_members: v.len(),
            })
            .collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertPlacement {
    pub topic_id: String,
    pub party: String,
    /// -1 contra … +1 pro. Shared values mean "same group".
    pub stance: f64,
    pub source: String,
    #[serde(default)]
    pub note: String,
}

/// Reads `topic_id, party, stance, source, note` rows.
pub fn load_expert(path: &Path) -> Result<Vec<ExpertPlacement>, EvalError> {
    let p = path.display().to_string();
    let err = |row: usize, detail: String| EvalError::Expert {
        path: p.clone(),
        row,
        detail,
    };
    let mut reader = csv::Reader::from_path(path).map_err(|e| err(0, e.to_string()))?;
    let mut out: Vec<ExpertPlacement> = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, rec) in reader.deserialize::<ExpertPlacement>().enumerate() {
        let row = i + 2;
        let e = rec.map_err(|e| err(row, e.to_string()))?;
        if !(-1.0..=1.0).contains(&e.stance) {
            return Err(err(row, format!("stance {} outside [-1, 1]", e.stance)));
        }
        if !seen.insert((e.topic_id.clone(), e.party.clone())) {
            return Err(err(row, format!("party {} listed twice for {}", e.party, e.topic_id)));
        }
        out.push(e);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Comparison {
    #[serde(rename = "<")]
    Less,
    #[serde(rename = ">")]
    Greater,
}

/// `median(X) < median(Y)` (or `>`; `mean(...)` also accepted).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignCheck {
    pub statistic: Statistic,
    pub left: String,
    pub op: Comparison,
    pub right: String,
}

impl fmt::Display for SignCheck {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let op = match self.op {
            Comparison::Less => "<",
            Comparison::Greater => ">",
        };
        let s = self.statistic.as_str();
        write!(f, "{s}({}) {op} {s}({})", self.left, self.right)
    }
}

fn parse_term(term: &str) -> Option<(Statistic, String)> {
    let term = term.trim();
    let open = term.find('(')?;
    let inner = term.strip_suffix(')')?.get(open + 1..)?.trim();
    if inner.is_empty() {
        return None;
    }
    Some((term[..open].trim().parse().ok()?, inner.to_string()))
}

impl FromStr for SignCheck {
    type Err = EvalError;

    fn from_str(line: &str) -> Result<Self, Self::Err> {
        let bad = |detail: &str| EvalError::Check {
            line: line.to_string(),
            detail: detail.to_string(),
        };
        let (op, pos) = match (line.find('<'), line.find('>')) {
            (Some(p), None) => (Comparison::Less, p),
            (None, Some(p)) => (Comparison::Greater, p),
            _ => return Err(bad("expected exactly one of < or >")),
        };
        let (ls, lp) = parse_term(&line[..pos]).ok_or_else(|| bad("left side is not stat(PARTY)"))?;
        let (rs, rp) = parse_term(&line[pos + 1..]).ok_or_else(|| bad("right side is not stat(PARTY)"))?;
        if ls != rs {
            return Err(bad("both sides must use the same statistic"));
        }
        Ok(SignCheck {
            statistic: ls,
            left: lp,
            op,
            right: rp,
        })
    }
}

/// One check per non-blank line; `#` starts a comment line.
pub fn parse_checks(text: &str) -> Result<Vec<SignCheck>, EvalError> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::parse)
        .collect()
}

pub fn load_checks(path: &Path) -> Result<Vec<SignCheck>, EvalError> {
    let text = fs::read_to_string(path).map_err(|e| EvalError::File {
        path: path.display().to_string(),
        detail: e.to_string(),
    })?;
    parse_checks(&text)
}

/// Every ordered pair across expert groups, lower group on the left.
pub fn cross_group_checks(expert: &[ExpertPlacement], statistic: Statistic) -> Vec<SignCheck> {
    let mut out = Vec::new();
    for a in expert {
        for b in expert {
            if a.topic_id == b.topic_id && a.stance < b.stance {
                out.push(SignCheck {
                    statistic,
                    left: a.party.clone(),
                    op: Comparison::Less,
                    right: b.party.clone(),
                });
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignCheckOutcome {
    pub description: String,
    pub passed: bool,
    pub detail: String,
}

/// Evaluates checks against party positions computed with the check's own
/// statistic. A party missing from the results fails its check.
pub fn evaluate_checks(results: &[ProjectionResult], checks: &[SignCheck]) -> Vec<SignCheckOutcome> {
    checks
        .iter()
        .map(|c| {
            let positions = party_positions(results, c.statistic).ok();
            let get = |p: &str| positions.as_ref().and_then(|ps| ps.get(p)).map(|x| x.position);
            let (passed, detail) = match (get(&c.left), get(&c.right)) {
                (Some(l), Some(r)) => {
                    let ok = match c.op {
                        Comparison::Less => l < r,
                        Comparison::Greater => l > r,
                    };
                    (ok, format!("{l:.6} vs {r:.6}"))
                }
                (l, r) => {
                    let missing: Vec<&str> = [(l, &c.left), (r, &c.right)]
                        .into_iter()
                        .filter(|(v, _)| v.is_none())
                        .map(|(_, p)| p.as_str())
                        .collect();
                    (false, format!("no projected members for {}", missing.join(", ")))
                }
            };
            SignCheckOutcome {
                description: c.to_string(),
                passed,
                detail,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub topic_id: String,
    pub statistic: Statistic,
    pub parties: Vec<String>,
    pub spearman_rho: f64,
    pub kendall_tau: f64,
    /// Concordant / comparable, over pairs the expert strictly orders.
    pub pairwise_accuracy: f64,
    pub comparable_pairs: usize,
    pub sign_checks: Vec<SignCheckOutcome>,
}

impl AgreementReport {
    pub fn all_checks_pass(&self) -> bool {
        self.sign_checks.iter().all(|c| c.passed)
    }
}

/// Rank metrics over the parties present in both sources. Expert rows for
/// other topics are ignored; parties absent from either side are dropped.
pub fn rank_agreement(
    topic_id: &str,
    ours: &PartyPositions,
    expert: &[ExpertPlacement],
) -> Result<AgreementReport, EvalError> {
    let expert: BTreeMap<&str, f64> = expert
        .iter()
        .filter(|e| e.topic_id == topic_id)
        .map(|e| (e.party.as_str(), e.stance))
        .collect();
    let common: Vec<(&str, f64, f64)> = ours
        .parties
        .iter()
        .filter_map(|p| expert.get(p.party.as_str()).map(|&s| (p.party.as_str(), p.position, s)))
        .collect();
    if common.len() < 3 {
        return Err(EvalError::TooFewCommon {
            found: common.len(),
            parties: common.iter().map(|c| c.0.to_string()).collect(),
        });
    }
    let x: Vec<f64> = common.iter().map(|c| c.1).collect();
    let y: Vec<f64> = common.iter().map(|c| c.2).collect();
    let first = |v: &[f64]| v.iter().all(|a| *a == v[0]);
    if first(&x) {
        return Err(EvalError::Constant("estimated"));
    }
    if first(&y) {
        return Err(EvalError::Constant("expert"));
    }
    let rho = spearman(&x, &y).ok_or(EvalError::Constant("estimated"))?;
    let tau = kendall_tau_b(&x, &y).ok_or(EvalError::Constant("estimated"))?;
    let (mut comparable, mut concordant) = (0usize, 0usize);
    for i in 0..common.len() {
        for j in 0..common.len() {
            if y[i] < y[j] {
                comparable += 1;
                if x[i] < x[j] {
                    concordant += 1;
                }
            }
        }
    }
    Ok(AgreementReport {
        topic_id: topic_id.to_string(),
        statistic: ours.statistic,
        parties: common.iter().map(|c| c.0.to_string()).collect(),
        spearman_rho: rho,
        kendall_tau: tau,
        pairwise_accuracy: concordant as f64 / comparable as f64,
        comparable_pairs: comparable,
        sign_checks: Vec::new(),
    })
}
