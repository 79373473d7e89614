//! 2D reduction (PCA, seeded UMAP) and the anchor-annotated scatter plot.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::scaling::AxisMethod;
use crate::util::atomic_write;

#[derive(Debug, Error)]
pub enum ReduceError {
    #[error("need at least {needed} vectors, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error("vector {index} has dimension {found}, expected {expected}")]
    Dimension {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("vector {0} has a non-finite component")]
    NonFinite(usize),
    #[error("data has zero variance")]
    ZeroVariance,
    #[error("plot needs exactly one {0} point")]
    MissingAnchor(&'static str),
    #[error("{path}: {detail}")]
    File { path: String, detail: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ReduceMethod {
    Pca,
    Umap,
}

impl fmt::Display for ReduceMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReduceMethod::Pca => "PCA",
            ReduceMethod::Umap => "UMAP",
        })
    }
}

impl FromStr for ReduceMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "pca" => Ok(ReduceMethod::Pca),
            "umap" => Ok(ReduceMethod::Umap),
            _ => Err(format!("unknown reducer {s:?} (pca|umap)")),
        }
    }
}

fn check_matrix(vectors: &[Vec<f64>], min: usize) -> Result<usize, ReduceError> {
    if vectors.len() < min {
        return Err(ReduceError::TooFew {
            needed: min,
            got: vectors.len(),
        });
    }
    let dim = vectors[0].len();
    for (index, v) in vectors.iter().enumerate() {
        if v.len() != dim {
            return Err(ReduceError::Dimension {
                index,
                expected: dim,
                found: v.len(),
            });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(ReduceError::NonFinite(index));
        }
    }
    Ok(dim)
}

/// Result of a two-component PCA fit.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaFit {
    pub mean: Vec<f64>,
    /// Unit loading vectors; the largest-magnitude entry of each is positive.
    pub components: [Vec<f64>; 2],
    pub explained_variance: [f64; 2],
    pub coords: Vec<[f64; 2]>,
}

impl PcaFit {
    /// Back-projection of a planar point into the original space.
    pub fn reconstruct(&self, p: [f64; 2]) -> Vec<f64> {
        self.mean
            .iter()
            .enumerate()
            .map(|(d, m)| m + p[0] * self.components[0][d] + p[1] * self.components[1][d])
            .collect()
    }
}

/// Centres the data and projects onto the top two principal directions.
/// Uses the n×n Gram matrix when there are fewer points than dimensions.
pub fn pca_2d(vectors: &[Vec<f64>]) -> Result<PcaFit, ReduceError> {
    let dim = check_matrix(vectors, 3)?;
    let n = vectors.len();
    let mut mean = vec![0.0; dim];
    for v in vectors {
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let xc = DMatrix::from_fn(n, dim, |i, j| vectors[i][j] - mean[j]);

    let scale = xc.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    if scale == 0.0 {
        return Err(ReduceError::ZeroVariance);
    }

    let use_gram = n <= dim;
    let sym = if use_gram {
        &xc * xc.transpose()
    } else {
        xc.transpose() * &xc
    };
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let tol = eig.eigenvalues[order[0]].abs() * 1e-12 * (n.max(dim) as f64);
    if eig.eigenvalues[order[0]] <= tol.max(f64::MIN_POSITIVE) {
        return Err(ReduceError::ZeroVariance);
    }

    let mut components: [Vec<f64>; 2] = [vec![0.0; dim], vec![0.0; dim]];
    let mut explained = [0.0; 2];
    for c in 0..2 {
        let lambda = eig.eigenvalues[order[c]];
        if lambda <= tol {
            continue; // rank-1 data: second component stays zero
        }
        let u = eig.eigenvectors.column(order[c]);
        let mut load: Vec<f64> = if use_gram {
            let v = xc.transpose() * u;
            let s = lambda.sqrt();
            v.iter().map(|x| x / s).collect()
        } else {
            u.iter().copied().collect()
        };
        let nrm = load.iter().map(|x| x * x).sum::<f64>().sqrt();
        load.iter_mut().for_each(|x| *x /= nrm);
        let pivot = load
            .iter()
            .enumerate()
            .fold(0usize, |best, (i, x)| if x.abs() > load[best].abs() { i } else { best });
        if load[pivot] < 0.0 {
            load.iter_mut().for_each(|x| *x = -*x);
        }
        components[c] = load;
        explained[c] = lambda / (n as f64 - 1.0);
    }
    let coords = (0..n)
        .map(|i| {
            let row = xc.row(i);
            let p = |c: &Vec<f64>| row.iter().zip(c).map(|(a, b)| a * b).sum::<f64>();
            [p(&components[0]), p(&components[1])]
        })
        .collect();
    Ok(PcaFit {
        mean,
        components,
        explained_variance: explained,
        coords,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UmapParams {
    pub n_neighbors: usize,
    pub min_dist: f64,
    pub spread: f64,
    pub n_epochs: usize,
    pub learning_rate: f64,
    pub negative_sample_rate: usize,
}

impl Default for UmapParams {
    fn default() -> Self {
        Self {
            n_neighbors: 15,
            min_dist: 0.1,
            spread: 1.0,
            n_epochs: 200,
            learning_rate: 1.0,
            negative_sample_rate: 5,
        }
    }
}

/// Fits the low-dimensional kernel `1 / (1 + a d^(2b))` to the offset
/// exponential implied by `min_dist` and `spread` (Levenberg–Marquardt).
pub fn fit_ab(min_dist: f64, spread: f64) -> (f64, f64) {
    let xs: Vec<f64> = (1..300).map(|i| 3.0 * spread * i as f64 / 299.0).collect();
    let ys: Vec<f64> = xs
        .iter()
        .map(|&x| if x < min_dist { 1.0 } else { (-(x - min_dist) / spread).exp() })
        .collect();
    let sse = |a: f64, b: f64| {
        xs.iter()
            .zip(&ys)
            .map(|(&x, &y)| (1.0 / (1.0 + a * x.powf(2.0 * b)) - y).powi(2))
            .sum::<f64>()
    };
    let (mut a, mut b, mut mu) = (1.0f64, 1.0f64, 1e-3);
    let mut cur = sse(a, b);
    for _ in 0..200 {
        let (mut jtj, mut jtr) = ([[0.0; 2]; 2], [0.0; 2]);
        for (&x, &y) in xs.iter().zip(&ys) {
            let p = x.powf(2.0 * b);
            let den = 1.0 + a * p;
            let r = 1.0 / den - y;
            let ja = -p / (den * den);
            let jb = -a * p * 2.0 * x.ln() / (den * den);
            jtj[0][0] += ja * ja;
            jtj[0][1] += ja * jb;
            jtj[1][1] += jb * jb;
            jtr[0] += ja * r;
            jtr[1] += jb * r;
        }
        let m00 = jtj[0][0] * (1.0 + mu);
        let m11 = jtj[1][1] * (1.0 + mu);
        let det = m00 * m11 - jtj[0][1] * jtj[0][1];
        if det.abs() < 1e-300 {
            break;
        }
        let da = -(m11 * jtr[0] - jtj[0][1] * jtr[1]) / det;
        let db = -(m00 * jtr[1] - jtj[0][1] * jtr[0]) / det;
        let (na, nb) = (a + da, b + db);
        let next = if na > 0.0 && nb > 0.0 { sse(na, nb) } else { f64::INFINITY };
        if next < cur {
            let done = (cur - next) < 1e-15;
            (a, b, cur, mu) = (na, nb, next, mu * 0.3);
            if done {
                break;
            }
        } else {
            mu *= 10.0;
        }
    }
    (a, b)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Symmetrised fuzzy k-nearest-neighbour graph as `(i, j, weight)` edges.
fn fuzzy_graph(vectors: &[Vec<f64>], k: usize) -> Vec<(usize, usize, f64)> {
    let n = vectors.len();
    let target = (k as f64).log2();
    let mut directed: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for i in 0..n {
        let mut d: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| (sq_dist(&vectors[i], &vectors[j]).sqrt(), j))
            .collect();
        d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        d.truncate(k);
        let rho = d.iter().map(|x| x.0).find(|&x| x > 0.0).unwrap_or(0.0);
        let mass = |sigma: f64| {
            d.iter()
                .map(|&(dist, _)| (-((dist - rho).max(0.0)) / sigma).exp())
                .sum::<f64>()
        };
        let (mut lo, mut hi, mut sigma) = (0.0, f64::INFINITY, 1.0);
        for _ in 0..64 {
            let m = mass(sigma);
            if (m - target).abs() < 1e-5 {
                break;
            }
            if m > target {
                hi = sigma;
                sigma = (lo + hi) / 2.0;
            } else {
                lo = sigma;
                sigma = if hi.is_finite() { (lo + hi) / 2.0 } else { sigma * 2.0 };
            }
        }
        let mean_d = d.iter().map(|x| x.0).sum::<f64>() / d.len().max(1) as f64;
        sigma = sigma.max(1e-3 * mean_d).max(1e-12);
        for &(dist, j) in &d {
            let w = (-((dist - rho).max(0.0)) / sigma).exp();
            directed.insert((i, j), w);
        }
    }
    let mut edges = Vec::new();
    for (&(i, j), &w) in &directed {
        let back = directed.get(&(j, i)).copied();
        match back {
            Some(_) if j < i => continue,
            Some(wb) => edges.push((i, j, w + wb - w * wb)),
            None => edges.push((i, j, w)),
        }
    }
    edges
}

fn clip(x: f64) -> f64 {
    x.clamp(-4.0, 4.0)
}

/// Compact UMAP: exact kNN graph, PCA initialisation, SGD layout with
/// negative sampling. Deterministic for a given seed.
#[allow(clippy::needless_range_loop)] // updates y[i] and y[j] together
pub fn umap_2d(vectors: &[Vec<f64>], params: &UmapParams, seed: u64) -> Result<Vec<[f64; 2]>, ReduceError> {
    check_matrix(vectors, 3)?;
    let n = vectors.len();
    let k = params.n_neighbors.clamp(2, n - 1);
    let (a, b) = fit_ab(params.min_dist, params.spread);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut y: Vec<[f64; 2]> = match pca_2d(vectors) {
        Ok(fit) => {
            let m = fit
                .coords
                .iter()
                .flat_map(|p| [p[0].abs(), p[1].abs()])
                .fold(0.0f64, f64::max)
                .max(1e-12);
            fit.coords.iter().map(|p| [p[0] / m * 10.0, p[1] / m * 10.0]).collect()
        }
        Err(ReduceError::ZeroVariance) => vec![[0.0, 0.0]; n],
        Err(e) => return Err(e),
    };
    for p in &mut y {
        p[0] += rng.random_range(-1e-4..1e-4);
        p[1] += rng.random_range(-1e-4..1e-4);
    }

    let edges = fuzzy_graph(vectors, k);
    let wmax = edges.iter().map(|e| e.2).fold(0.0f64, f64::max);
    let eps: Vec<f64> = edges
        .iter()
        .map(|e| if e.2 > 0.0 { wmax / e.2 } else { f64::INFINITY })
        .collect();
    let neg_rate = params.negative_sample_rate as f64;
    let mut next_sample = eps.clone();
    let mut next_neg: Vec<f64> = eps.iter().map(|e| e / neg_rate).collect();

    for epoch in 0..params.n_epochs {
        let alpha = params.learning_rate * (1.0 - epoch as f64 / params.n_epochs as f64);
        let e = epoch as f64;
        for (idx, &(i, j, _)) in edges.iter().enumerate() {
            if next_sample[idx] > e {
                continue;
            }
            let d2 = (y[i][0] - y[j][0]).powi(2) + (y[i][1] - y[j][1]).powi(2);
            if d2 > 0.0 {
                let coef = -2.0 * a * b * d2.powf(b - 1.0) / (1.0 + a * d2.powf(b));
                for c in 0..2 {
                    let g = clip(coef * (y[i][c] - y[j][c])) * alpha;
                    y[i][c] += g;
                    y[j][c] -= g;
                }
            }
            next_sample[idx] += eps[idx];
            let n_neg = ((e - next_neg[idx]) * neg_rate / eps[idx]).max(0.0) as usize;
            for _ in 0..n_neg {
                let kk = rng.random_range(0..n);
                if kk == i {
                    continue;
                }
                let d2 = (y[i][0] - y[kk][0]).powi(2) + (y[i][1] - y[kk][1]).powi(2);
                let coef = if d2 > 0.0 {
                    2.0 * b / ((0.001 + d2) * (1.0 + a * d2.powf(b)))
                } else {
                    0.0
                };
                for c in 0..2 {
                    let g = if coef > 0.0 { clip(coef * (y[i][c] - y[kk][c])) } else { 4.0 };
                    y[i][c] += g * alpha;
                }
            }
            next_neg[idx] += n_neg as f64 * eps[idx] / neg_rate;
        }
    }
    Ok(y)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PointKind {
    Speaker,
    AnchorPro,
    AnchorCon,
    SeedSentence,
}

/// A vector to reduce, with the identity it keeps in the plane.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledVector {
    pub id: String,
    pub kind: PointKind,
    pub party: Option<String>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanarPoint {
    pub id: String,
    pub kind: PointKind,
    pub party: Option<String>,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReductionMeta {
    pub method: ReduceMethod,
    pub seed: u64,
    pub parameters: Value,
}

/// Reduces all inputs (anchors included) in a single joint fit.
pub fn reduce_2d(
    inputs: &[LabeledVector],
    method: ReduceMethod,
    seed: u64,
) -> Result<(Vec<PlanarPoint>, ReductionMeta), ReduceError> {
    let vectors: Vec<Vec<f64>> = inputs.iter().map(|v| v.values.clone()).collect();
    let (coords, parameters) = match method {
        ReduceMethod::Pca => {
            let fit = pca_2d(&vectors)?;
            let params = json!({
                "explained_variance": fit.explained_variance,
                "sign_convention": "largest-magnitude loading positive",
            });
            (fit.coords, params)
        }
        ReduceMethod::Umap => {
            let params = UmapParams::default();
            let (a, b) = fit_ab(params.min_dist, params.spread);
            let coords = umap_2d(&vectors, &params, seed)?;
            let mut p = serde_json::to_value(&params).expect("plain data");
            p["a"] = json!(a);
            p["b"] = json!(b);
            p["init"] = json!("pca");
            (coords, p)
        }
    };
    let points = inputs
        .iter()
        .zip(coords)
        .map(|(v, [x, y])| PlanarPoint {
            id: v.id.clone(),
            kind: v.kind,
            party: v.party.clone(),
            x,
            y,
        })
        .collect();
    Ok((
        points,
        ReductionMeta {
            method,
            seed,
            parameters,
        },
    ))
}

/// Directed angle in degrees (0..=180) between two segments.
pub fn segment_angle_degrees(a: ([f64; 2], [f64; 2]), b: ([f64; 2], [f64; 2])) -> f64 {
    let u = [a.1[0] - a.0[0], a.1[1] - a.0[1]];
    let v = [b.1[0] - b.0[0], b.1[1] - b.0[1]];
    let cos = (u[0] * v[0] + u[1] * v[1]) / (u[0].hypot(u[1]) * v[0].hypot(v[1]));
    cos.clamp(-1.0, 1.0).acos().to_degrees()
}

/// Context for a plot: which axis the anchors came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotMeta {
    pub topic_id: String,
    pub axis_method: AxisMethod,
    pub anchor_labels: [String; 2],
    pub reduction: ReductionMeta,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotDocument {
    pub svg: String,
    pub points: Vec<PlanarPoint>,
    pub meta: PlotMeta,
}

pub fn party_color(party: Option<&str>) -> &'static str {
    match party {
        Some("LDP") => "#3ca324",
        Some("CDP") => "#184589",
        Some("JCP") => "#db001c",
        Some("Komeito") => "#f55881",
        Some("JRP") => "#6fba2c",
        Some("NDP") => "#f8bc00",
        _ => "#888888",
    }
}

const PRO_COLOR: &str = "#1f4fd8";
const CON_COLOR: &str = "#d81f1f";
const SIZE: f64 = 640.0;
const PAD: f64 = 48.0;

fn find_anchor(points: &[PlanarPoint], kind: PointKind, name: &'static str) -> Result<usize, ReduceError> {
    let mut it = points.iter().enumerate().filter(|(_, p)| p.kind == kind);
    match (it.next(), it.next()) {
        (Some((i, _)), None) => Ok(i),
        _ => Err(ReduceError::MissingAnchor(name)),
    }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Scatter plot: one circle per point, speakers coloured by party, anchors
/// enlarged (blue pro, red con) and joined by a single black line.
pub fn plot_payload(points: &[PlanarPoint], meta: &PlotMeta) -> Result<PlotDocument, ReduceError> {
    let pro = find_anchor(points, PointKind::AnchorPro, "ANCHOR_PRO")?;
    let con = find_anchor(points, PointKind::AnchorCon, "ANCHOR_CON")?;
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for p in points {
        x0 = x0.min(p.x);
        x1 = x1.max(p.x);
        y0 = y0.min(p.y);
        y1 = y1.max(p.y);
    }
    let span = (x1 - x0).max(y1 - y0).max(1e-12);
    let sx = |x: f64| PAD + (x - x0) / span * (SIZE - 2.0 * PAD);
    let sy = |y: f64| SIZE - PAD - (y - y0) / span * (SIZE - 2.0 * PAD);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let _ = writeln!(svg, r#"<rect x="0" y="0" width="{SIZE}" height="{SIZE}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{PAD}" y="24" font-size="14" font-family="sans-serif">{} ({:?}; {} vs {})</text>"#,
        esc(&meta.topic_id),
        meta.axis_method,
        esc(&meta.anchor_labels[0]),
        esc(&meta.anchor_labels[1])
    );
    let (a, b) = (&points[con], &points[pro]);
    let _ = writeln!(
        svg,
        r#"<line x1="{:.3}" y1="{:.3}" x2="{:.3}" y2="{:.3}" stroke="black" stroke-width="1.5"/>"#,
        sx(a.x),
        sy(a.y),
        sx(b.x),
        sy(b.y)
    );
    // speakers first so anchors are drawn on top
    let mut order: Vec<&PlanarPoint> = points.iter().filter(|p| !matches!(p.kind, PointKind::AnchorPro | PointKind::AnchorCon)).collect();
    order.push(a);
    order.push(b);
    for p in order {
        let (r, fill) = match p.kind {
            PointKind::AnchorPro => (9.0, PRO_COLOR),
            PointKind::AnchorCon => (9.0, CON_COLOR),
            PointKind::SeedSentence => (3.0, "#999999"),
            PointKind::Speaker => (4.5, party_color(p.party.as_deref())),
        };
        let _ = writeln!(
            svg,
            r#"<circle cx="{:.3}" cy="{:.3}" r="{r}" fill="{fill}" fill-opacity="0.85"><title>{}</title></circle>"#,
            sx(p.x),
            sy(p.y),
            esc(&p.id)
        );
    }
    let mut parties: Vec<&str> = points.iter().filter_map(|p| p.party.as_deref()).collect();
    parties.sort_unstable();
    parties.dedup();
    for (i, party) in parties.iter().enumerate() {
        let y = PAD + 14.0 * i as f64;
        let _ = writeln!(
            svg,
            r#"<rect x="{:.1}" y="{:.1}" width="9" height="9" fill="{}"/><text x="{:.1}" y="{:.1}" font-size="11" font-family="sans-serif">{}</text>"#,
            SIZE - 110.0,
            y,
            party_color(Some(party)),
            SIZE - 96.0,
            y + 9.0,
            esc(party)
        );
    }
    svg.push_str("</svg>\n");
    Ok(PlotDocument {
        svg,
        points: points.to_vec(),
        meta: meta.clone(),
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct SidecarRow {
    id: String,
    kind: PointKind,
    party: String,
    x: f64,
    y: f64,
}

/// Paths written by [`write_plot`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlotFiles {
    pub svg: PathBuf,
    pub sidecar: PathBuf,
    pub meta: PathBuf,
}

fn file_err(path: &Path, e: impl ToString) -> ReduceError {
    ReduceError::File {
        path: path.display().to_string(),
        detail: e.to_string(),
    }
}

/// Writes `<stem>.svg`, `<stem>.points.csv` and `<stem>.meta.json` into `dir`.
pub fn write_plot(doc: &PlotDocument, dir: &Path, stem: &str) -> Result<PlotFiles, ReduceError> {
    let files = PlotFiles {
        svg: dir.join(format!("{stem}.svg")),
        sidecar: dir.join(format!("{stem}.points.csv")),
        meta: dir.join(format!("{stem}.meta.json")),
    };
    let mut w = csv::Writer::from_writer(Vec::new());
    for p in &doc.points {
        w.serialize(SidecarRow {
            id: p.id.clone(),
            kind: p.kind,
            party: p.party.clone().unwrap_or_default(),
            x: p.x,
            y: p.y,
        })
        .map_err(|e| file_err(&files.sidecar, e))?;
    }
    let csv_bytes = w.into_inner().map_err(|e| file_err(&files.sidecar, e))?;
    atomic_write(&files.sidecar, &csv_bytes).map_err(|e| file_err(&files.sidecar, e))?;
    let mut meta = serde_json::to_vec_pretty(&doc.meta).expect("plain data");
    meta.push(b'\n');
    atomic_write(&files.meta, &meta).map_err(|e| file_err(&files.meta, e))?;
    atomic_write(&files.svg, doc.svg.as_bytes()).map_err(|e| file_err(&files.svg, e))?;
    Ok(files)
}

/// Rebuilds the plot from its sidecar table and metadata alone.
pub fn plot_from_sidecar(sidecar: &Path, meta: &Path) -> Result<PlotDocument, ReduceError> {
    let text = fs::read_to_string(meta).map_err(|e| file_err(meta, e))?;
    let meta: PlotMeta = serde_json::from_str(&text).map_err(|e| file_err(sidecar, e))?;
    let mut r = csv::Reader::from_path(sidecar).map_err(|e| file_err(sidecar, e))?;
    let points = r
        .deserialize::<SidecarRow>()
        .map(|row| {
            let row = row.map_err(|e| file_err(sidecar, e))?;
            Ok(PlanarPoint {
                id: row.id,
                kind: row.kind,
                party: (!row.party.is_empty()).then_some(row.party),
                x: row.x,
                y: row.y,
            })
        })
        .collect::<Result<Vec<_>, ReduceError>>()?;
    plot_payload(&points, &meta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn triangle() -> Vec<Vec<f64>> {
        vec![vec![0.0, 0.0, 1.0], vec![3.0, 0.0, 1.0], vec![0.0, 4.0, 1.0]]
    }

    #[test]
    fn pca_preserves_triangle_distances() {
        let data = triangle();
        let fit = pca_2d(&data).unwrap();
        for (i, j) in [(0, 1), (0, 2), (1, 2)] {
            let orig = sq_dist(&data[i], &data[j]).sqrt();
            let c = &fit.coords;
            let red = ((c[i][0] - c[j][0]).powi(2) + (c[i][1] - c[j][1]).powi(2)).sqrt();
            assert_abs_diff_eq!(orig, red, epsilon = 1e-8);
        }
    }

    #[test]
    fn pca_rejects_constant_and_small_input() {
        let same = vec![vec![1.0, 2.0]; 4];
        assert!(matches!(pca_2d(&same), Err(ReduceError::ZeroVariance)));
        assert!(matches!(pca_2d(&same[..2]), Err(ReduceError::TooFew { .. })));
        let ragged = vec![vec![1.0, 2.0], vec![1.0], vec![0.0, 0.0]];
        assert!(matches!(pca_2d(&ragged), Err(ReduceError::Dimension { index: 1, .. })));
    }

    #[test]
    fn pca_sign_convention() {
        let fit = pca_2d(&triangle()).unwrap();
        for c in &fit.components {
            let max = c.iter().copied().fold(0.0f64, |a, x| if x.abs() > a.abs() { x } else { a });
            assert!(max > 0.0);
        }
    }

    #[test]
    fn ab_fit_matches_known_defaults() {
        // reference values for min_dist = 0.1, spread = 1
        let (a, b) = fit_ab(0.1, 1.0);
        assert_abs_diff_eq!(a, 1.577, epsilon = 0.02);
        assert_abs_diff_eq!(b, 0.895, epsilon = 0.01);
    }

    #[test]
    fn umap_is_seeded_and_separates_blobs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut data = Vec::new();
        for c in 0..2 {
            for _ in 0..20 {
                let centre = if c == 0 { 0.0 } else { 10.0 };
                data.push((0..8).map(|_| centre + rng.random_range(-0.5..0.5)).collect::<Vec<f64>>());
            }
        }
        let p = UmapParams::default();
        let a = umap_2d(&data, &p, 11).unwrap();
        assert_eq!(a, umap_2d(&data, &p, 11).unwrap());
        let centroid = |r: std::ops::Range<usize>| {
            let n = r.len() as f64;
            let s = a[r].iter().fold([0.0, 0.0], |s, p| [s[0] + p[0], s[1] + p[1]]);
            [s[0] / n, s[1] / n]
        };
        let (c0, c1) = (centroid(0..20), centroid(20..40));
        let between = ((c0[0] - c1[0]).powi(2) + (c0[1] - c1[1]).powi(2)).sqrt();
        let spread = a[..20].iter().map(|p| ((p[0] - c0[0]).powi(2) + (p[1] - c0[1]).powi(2)).sqrt()).fold(0.0, f64::max);
        assert!(between > 2.0 * spread, "between {between}, spread {spread}");
    }

    fn pt(id: &str, kind: PointKind, x: f64, y: f64) -> PlanarPoint {
        PlanarPoint {
            id: id.into(),
            kind,
            party: (kind == PointKind::Speaker).then(|| "LDP".to_string()),
            x,
            y,
        }
    }

    fn meta() -> PlotMeta {
        PlotMeta {
            topic_id: "jsdf".into(),
            axis_method: AxisMethod::Pair,
            anchor_labels: ["稲田朋美".into(), "笠井亮".into()],
            reduction: ReductionMeta {
                method: ReduceMethod::Pca,
                seed: 0,
                parameters: json!({}),
            },
        }
    }

    #[test]
    fn plot_has_one_mark_per_point_and_one_line() {
        let pts = vec![
            pt("pro", PointKind::AnchorPro, 1.0, 0.0),
            pt("con", PointKind::AnchorCon, -1.0, 0.0),
            pt("a", PointKind::Speaker, 0.0, 0.3),
            pt("b", PointKind::Speaker, 0.2, -0.1),
            pt("c", PointKind::Speaker, 0.1, 0.1),
        ];
        let doc = plot_payload(&pts, &meta()).unwrap();
        assert_eq!(doc.svg.matches("<circle").count(), 5);
        assert_eq!(doc.svg.matches("<line").count(), 1);
        assert!(doc.svg.contains(PRO_COLOR) && doc.svg.contains(CON_COLOR));

        let only_anchors = plot_payload(&pts[..2], &meta()).unwrap();
        assert_eq!(only_anchors.svg.matches("<circle").count(), 2);
        assert_eq!(only_anchors.svg.matches("<line").count(), 1);
    }

    #[test]
    fn plot_requires_both_anchors() {
        let pts = vec![pt("pro", PointKind::AnchorPro, 1.0, 0.0), pt("a", PointKind::Speaker, 0.0, 0.0)];
        assert!(matches!(plot_payload(&pts, &meta()), Err(ReduceError::MissingAnchor("ANCHOR_CON"))));
    }

    #[test]
    fn sidecar_regenerates_plot() {
        let dir = tempfile::tempdir().unwrap();
        let pts = vec![
            pt("pro", PointKind::AnchorPro, 0.123456789012345, 1e-7),
            pt("con", PointKind::AnchorCon, -1.0 / 3.0, 2.0),
            pt("議員", PointKind::Speaker, 0.5, -0.25),
        ];
        let doc = plot_payload(&pts, &meta()).unwrap();
        let files = write_plot(&doc, dir.path(), "jsdf-pair").unwrap();
        let again = plot_from_sidecar(&files.sidecar, &files.meta).unwrap();
        assert_eq!(again, doc);
    }

    #[test]
    fn segment_angles() {
        let a = ([0.0, 0.0], [1.0, 0.0]);
        assert_abs_diff_eq!(segment_angle_degrees(a, ([0.0, 1.0], [2.0, 1.0])), 0.0);
        assert_abs_diff_eq!(segment_angle_degrees(a, ([0.0, 0.0], [0.0, 1.0])), 90.0, epsilon = 1e-12);
        assert_abs_diff_eq!(segment_angle_degrees(a, ([1.0, 0.0], [0.0, 0.0])), 180.0);
    }
}
