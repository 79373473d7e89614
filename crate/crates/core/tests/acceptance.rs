//! Acceptance suite. Runs without the libtest harness so that every
//! criterion prints exactly one PASS/FAIL line regardless of output
//! capture. The networked criterion runs only with `--ignored` or
//! `--include-ignored`:
//!
//!     cargo test -p ideoaxis-core --test acceptance
//!     IDEOAXIS_LIVE_CONFIG=data/live/config.toml \
//!         cargo test -p ideoaxis-core --test acceptance -- --ignored

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use ideoaxis_core::embedding::{EmbeddingVector, HashedNgramProvider, MockProvider};
use ideoaxis_core::evalcmp::{rank_agreement, ExpertPlacement, PartyPosition, PartyPositions, Statistic};
use ideoaxis_core::nlproc::{stratified_split, train_classifier, LabeledSet, TrainOptions};
use ideoaxis_core::pipeline::{ManifestEntry, Pipeline, PipelineConfig, MANIFEST_FILE};
use ideoaxis_core::reduce::pca_2d;
use ideoaxis_core::scaling::{
    build_profiles, project, split_groups, AggregationOptions, AxisMethod, Group, ProfileInput,
    ProjectionResult, ReferenceAxis, StanceProfile,
};
use ideoaxis_core::stats::spearman;
use ideoaxis_core::topics::ctfidf;

type Outcome = Result<String, String>;

/// `(number, name, check, networked)`
type Criterion = (u32, &'static str, fn() -> Outcome, bool);

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(elapsed: Duration, limit_s: u64) -> Result<(), String> {
    check(
        elapsed <= Duration::from_secs(limit_s),
        format!("took {:.2}s, budget {limit_s}s", elapsed.as_secs_f64()),
    )
}

fn workspace() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| normal(rng)).collect()
}

fn ev(values: Vec<f64>, id: &str) -> EmbeddingVector {
    EmbeddingVector::new(values, id)
}

fn profile(name: &str, v: Vec<f64>, id: &str) -> StanceProfile {
    StanceProfile {
        speaker_name: name.to_string(),
        party: "X".to_string(),
        topic_id: "t".to_string(),
        mean_embedding: ev(v, id),
        n_opinion_sentences: 1,
        n_speeches: 1,
    }
}

fn pair_axis(pro: Vec<f64>, con: Vec<f64>, id: &str) -> ReferenceAxis {
    ReferenceAxis::new("t", ev(pro, id), ev(con, id), AxisMethod::Pair, ["pro".into(), "con".into()]).unwrap()
}

/// Ranking by score, ties by name.
fn ranking(results: &[ProjectionResult]) -> Vec<String> {
    let mut r: Vec<&ProjectionResult> = results.iter().collect();
    r.sort_by(|a, b| a.normalized.total_cmp(&b.normalized).then(a.speaker_name.cmp(&b.speaker_name)));
    r.into_iter().map(|p| p.speaker_name.clone()).collect()
}

// 1. Anchors project to exactly 0 and 1.
fn anchor_exactness() -> Outcome {
    let t0 = Instant::now();
    let mut worst = 0.0f64;
    for s in 0..100u64 {
        let mock = MockProvider::new(s, 64);
        let pro = mock.vector(&format!("pro seed {s}"));
        let con = mock.vector(&format!("con seed {s}"));
        let axis = pair_axis(pro.clone(), con.clone(), "mock");
        let (_, p) = axis.locate(&pro).map_err(|e| e.to_string())?;
        let (_, c) = axis.locate(&con).map_err(|e| e.to_string())?;
        worst = worst.max((p - 1.0).abs()).max(c.abs());
    }
    check(worst < 1e-9, format!("max anchor error {worst:e}"))?;
    within(t0.elapsed(), 5)?;
    Ok(format!("100 axes, max error {worst:.1e}"))
}

fn random_orthogonal(rng: &mut ChaCha8Rng, dim: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(dim, dim, |_, _| normal(rng));
    let qr = a.qr();
    let (q, r) = (qr.q(), qr.r());
    // sign fix makes Q Haar-distributed; any orthogonal Q would do here
    let signs = DMatrix::from_diagonal(&r.diagonal().map(|d: f64| d.signum()));
    q * signs
}

// 2. Rotating and translating the whole space leaves scores unchanged.
fn rigid_motion_invariance() -> Outcome {
    let t0 = Instant::now();
    let dim = 48;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let pro = gaussian(&mut rng, dim);
    let con = gaussian(&mut rng, dim);
    let speakers: Vec<Vec<f64>> = (0..40).map(|_| gaussian(&mut rng, dim)).collect();
    let scores = |pro: &[f64], con: &[f64], sp: &[Vec<f64>]| -> Vec<ProjectionResult> {
        let axis = pair_axis(pro.to_vec(), con.to_vec(), "m");
        sp.iter()
            .enumerate()
            .map(|(i, v)| project(&profile(&format!("s{i:02}"), v.clone(), "m"), &axis).unwrap())
            .collect()
    };
    let base = scores(&pro, &con, &speakers);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let q = random_orthogonal(&mut rng, dim);
        let t: Vec<f64> = gaussian(&mut rng, dim).into_iter().map(|x| 10.0 * x).collect();
        let move_ = |v: &[f64]| -> Vec<f64> {
            let r = &q * nalgebra::DVector::from_column_slice(v);
            r.iter().zip(&t).map(|(a, b)| a + b).collect()
        };
        let moved = scores(&move_(&pro), &move_(&con), &speakers.iter().map(|v| move_(v)).collect::<Vec<_>>());
        for (a, b) in base.iter().zip(&moved) {
            worst = worst.max((a.normalized - b.normalized).abs());
        }
        check(ranking(&base) == ranking(&moved), "ranking changed under a rigid motion")?;
    }
    check(worst < 1e-6, format!("max score change {worst:e}"))?;
    within(t0.elapsed(), 30)?;
    Ok(format!("50 motions, max change {worst:.1e}"))
}

// 3. Swapping anchors maps x to 1 - x and reverses the ranking.
fn pair_swap_antisymmetry() -> Outcome {
    let dim = 32;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let axis = pair_axis(gaussian(&mut rng, dim), gaussian(&mut rng, dim), "m");
        let swapped = axis.swapped().map_err(|e| e.to_string())?;
        let profiles: Vec<StanceProfile> =
            (0..30).map(|i| profile(&format!("s{i:02}"), gaussian(&mut rng, dim), "m")).collect();
        let a: Vec<ProjectionResult> = profiles.iter().map(|p| project(p, &axis).unwrap()).collect();
        let b: Vec<ProjectionResult> = profiles.iter().map(|p| project(p, &swapped).unwrap()).collect();
        for (x, y) in a.iter().zip(&b) {
            worst = worst.max((y.normalized - (1.0 - x.normalized)).abs());
        }
        let mut rev = ranking(&a);
        rev.reverse();
        check(ranking(&b) == rev, "swapped ranking is not the reverse")?;
    }
    check(worst < 1e-9, format!("max |x' - (1 - x)| {worst:e}"))?;
    Ok(format!("20 axes x 30 speakers, max error {worst:.1e}"))
}

// 4. Speakers planted at known mixtures of the anchors are recovered.
fn synthetic_recovery() -> Outcome {
    let t0 = Instant::now();
    let dim = 64;
    let mock = MockProvider::new(4, dim);
    let id = "mock-s4-d64";
    let pro = mock.vector("原発の再稼働を進めるべきです。");
    let con = mock.vector("原発は直ちに廃止すべきです。");
    let span: f64 = pro.iter().zip(&con).map(|(p, c)| (p - c).powi(2)).sum::<f64>().sqrt();
    let sigma = 0.1 * span;
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let mut inputs = Vec::new();
    let mut truth = Vec::new();
    for s in 0..100 {
        let w: f64 = rng.random();
        truth.push((format!("speaker{s:03}"), w));
        for i in 0..12 {
            let v: Vec<f64> = pro
                .iter()
                .zip(&con)
                .map(|(p, c)| w * p + (1.0 - w) * c + sigma * normal(&mut rng))
                .collect();
            inputs.push(ProfileInput {
                topic_id: "t".into(),
                speaker_name: format!("speaker{s:03}"),
                party: "X".into(),
                speech_id: format!("sp{}", i / 4),
                index: i,
                text: String::new(),
                vector: ev(v, id),
            });
        }
    }
    let axis = pair_axis(pro, con, id);
    let mut rhos = Vec::new();
    for normalize in [false, true] {
        let opts = AggregationOptions { normalize_sentence_vectors: normalize };
        let built = build_profiles(&inputs, 5, opts).map_err(|e| e.to_string())?;
        check(built.profiles.len() == 100, "profiles missing")?;
        let mut est = Vec::new();
        let mut w = Vec::new();
        for p in &built.profiles {
            est.push(project(p, &axis).map_err(|e| e.to_string())?.normalized);
            w.push(truth.iter().find(|t| t.0 == p.speaker_name).unwrap().1);
        }
        let rho = spearman(&est, &w).ok_or("constant scores")?;
        check(rho >= 0.95, format!("rho {rho:.4} with normalize_sentence_vectors={normalize}"))?;
        rhos.push(rho);
    }
    within(t0.elapsed(), 60)?;
    Ok(format!("rho {:.4} (raw), {:.4} (normalized)", rhos[0], rhos[1]))
}

// 5. c-TF-IDF on the two-class toy corpus.
fn ctfidf_oracle() -> Outcome {
    let s = ctfidf(&[vec!["a", "a", "b"], vec!["b", "b", "b"]]).map_err(|e| e.to_string())?;
    // A = 3 terms per class; f(a) = 2, f(b) = 4
    let wa = 2.0 * (1.0f64 + 3.0 / 2.0).ln();
    let wb = 3.0 * (1.0f64 + 3.0 / 4.0).ln();
    let ga = s.score(0, "a").ok_or("no score for a")?;
    let gb = s.score(1, "b").ok_or("no score for b")?;
    check((ga - 2.0 * 2.5f64.ln()).abs() < 1e-9 && (ga - wa).abs() < 1e-9, format!("W(a,c1) = {ga}"))?;
    check((gb - 3.0 * 1.75f64.ln()).abs() < 1e-9 && (gb - wb).abs() < 1e-9, format!("W(b,c2) = {gb}"))?;
    Ok(format!("W(a,c1) = {ga:.12}, W(b,c2) = {gb:.12}"))
}

fn scored(names_scores: &[(String, f64)]) -> Vec<ProjectionResult> {
    names_scores
        .iter()
        .map(|(n, x)| ProjectionResult {
            topic_id: "t".into(),
            speaker_name: n.clone(),
            party: "X".into(),
            raw: *x,
            normalized: *x,
            group: None,
            n_opinion_sentences: 1,
        })
        .collect()
}

// 6. Tercile split is a balanced, order-consistent partition.
fn group_split_partition() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for n in 6..=200usize {
        // coarse values so that ties occur
        let items: Vec<(String, f64)> = (0..n)
            .map(|i| (format!("m{i:03}"), (rng.random::<f64>() * 20.0).round() / 20.0))
            .collect();
        let out = split_groups(scored(&items), 3).map_err(|e| e.to_string())?;
        let mut sizes = [0usize; 3];
        let mut bounds = [(f64::INFINITY, f64::NEG_INFINITY); 3];
        for r in &out {
            let g = r.group.ok_or("unassigned speaker")? as usize;
            sizes[g] += 1;
            bounds[g] = (bounds[g].0.min(r.normalized), bounds[g].1.max(r.normalized));
        }
        check(sizes.iter().sum::<usize>() == n, format!("n={n}: not a partition"))?;
        check(
            sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1,
            format!("n={n}: sizes {sizes:?}"),
        )?;
        check(
            bounds[0].1 <= bounds[1].0 && bounds[1].1 <= bounds[2].0,
            format!("n={n}: groups overlap {bounds:?}"),
        )?;
        // input order must not matter
        let mut shuffled = items.clone();
        shuffled.shuffle(&mut rng);
        let again = split_groups(scored(&shuffled), 3).map_err(|e| e.to_string())?;
        for r in &again {
            let first = out.iter().find(|o| o.speaker_name == r.speaker_name).unwrap();
            check(first.group == r.group, format!("n={n}: assignment depends on input order"))?;
        }
    }
    // all ties: deterministic by name
    let ties: Vec<(String, f64)> = (0..9).map(|i| (format!("t{i}"), 0.5)).collect();
    let mut rev = ties.clone();
    rev.reverse();
    let a = split_groups(scored(&ties), 3).map_err(|e| e.to_string())?;
    let b = split_groups(scored(&rev), 3).map_err(|e| e.to_string())?;
    for r in a.iter().chain(&b) {
        let i: usize = r.speaker_name[1..].parse().unwrap();
        let want = [Group::Left, Group::Center, Group::Right][i / 3];
        check(r.group == Some(want), "all-ties split is not by name")?;
    }
    Ok("sizes 6..200 balanced and ordered; all-ties split by name".into())
}

// 7. PCA recovers a planted plane exactly and reproducibly.
fn pca_planted_plane() -> Outcome {
    let dim = 768;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let basis = DMatrix::from_fn(dim, 2, |_, _| normal(&mut rng)).qr().q();
    let offset = gaussian(&mut rng, dim);
    let points: Vec<Vec<f64>> = (0..120)
        .map(|_| {
            let a = 3.0 * normal(&mut rng);
            let b = normal(&mut rng);
            (0..dim).map(|d| offset[d] + a * basis[(d, 0)] + b * basis[(d, 1)]).collect()
        })
        .collect();
    let fit = pca_2d(&points).map_err(|e| e.to_string())?;
    let mut residual = 0.0f64;
    for (p, c) in points.iter().zip(&fit.coords) {
        let back = fit.reconstruct(*c);
        residual = residual.max(p.iter().zip(&back).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max));
    }
    check(residual < 1e-8, format!("max residual {residual:e}"))?;
    let again = pca_2d(&points).map_err(|e| e.to_string())?;
    let bits = |f: &ideoaxis_core::reduce::PcaFit| -> Vec<u64> {
        f.coords.iter().flat_map(|c| c.map(f64::to_bits)).collect()
    };
    check(bits(&fit) == bits(&again), "coordinates differ between runs")?;
    Ok(format!("120 points in {dim} dims, max residual {residual:.1e}, bit-stable"))
}

// 8. Baseline sentence-type classifier on the labeled fixture.
fn classifier_baseline() -> Outcome {
    let set = LabeledSet::load_tsv(&workspace().join("data/labeled/sentence_types.tsv")).map_err(|e| e.to_string())?;
    let (train, eval) = stratified_split(&set, 0.2, 7);
    let provider = HashedNgramProvider::new(768);
    let opts = TrainOptions { seed: 7, ..Default::default() };
    let (_, report) = train_classifier(&train, Some(&eval), &provider, None, &opts).map_err(|e| e.to_string())?;
    let f1 = report.eval_macro_f1.ok_or("no held-out score")?;
    check(f1 >= 0.6, format!("macro-F1 {f1:.3}"))?;
    Ok(format!("{} items, held-out macro-F1 {f1:.3}", set.items.len()))
}

// 9. Rank agreement on identical, reversed and monotone-transformed orders.
fn rank_agreement_metrics() -> Outcome {
    let parties = ["JCP", "CDP", "Komeito", "NDP", "JRP", "LDP"];
    let stances = [-1.0, -0.6, 0.1, 0.3, 0.5, 0.9];
    let expert: Vec<ExpertPlacement> = parties
        .iter()
        .zip(stances)
        .map(|(p, s)| ExpertPlacement {
            topic_id: "t".into(),
            party: p.to_string(),
            stance: s,
            source: "synthetic".into(),
            note: String::new(),
        })
        .collect();
    let ours = |xs: &[f64]| PartyPositions {
        statistic: Statistic::Median,
        parties: parties
            .iter()
            .zip(xs)
            .map(|(p, x)| PartyPosition { party: p.to_string(), position: *x, n_members: 3 })
            .collect(),
    };
    let agree = |xs: &[f64]| rank_agreement("t", &ours(xs), &expert).map_err(|e| e.to_string());
    let base = [0.05, 0.2, 0.45, 0.5, 0.62, 0.97];
    let same = agree(&base)?;
    check(
        same.spearman_rho == 1.0 && same.kendall_tau == 1.0 && same.pairwise_accuracy == 1.0,
        format!("identical: {same:?}"),
    )?;
    let reversed: Vec<f64> = base.iter().map(|x| -x).collect();
    let rev = agree(&reversed)?;
    check(
        rev.spearman_rho == -1.0 && rev.kendall_tau == -1.0 && rev.pairwise_accuracy == 0.0,
        format!("reversed: {rev:?}"),
    )?;
    // shuffled estimate, then 20 strictly increasing maps of it
    let mixed = [0.3, 0.1, 0.45, 0.9, 0.62, 0.2];
    let reference = agree(&mixed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for m in 0..20 {
        let a: f64 = rng.random_range(0.1..5.0);
        let b: f64 = rng.random_range(-3.0..3.0);
        let p: f64 = rng.random_range(0.3..3.0);
        let f = |x: f64| -> f64 {
            match m % 4 {
                0 => a * x + b,
                1 => a * x.powf(p) + b,
                2 => (a * x).exp() + b,
                _ => (x + 0.01).ln() * a + (x * x * x),
            }
        };
        let mapped: Vec<f64> = mixed.iter().map(|&x| f(x)).collect();
        let r = agree(&mapped)?;
        check(
            r.spearman_rho == reference.spearman_rho
                && r.kendall_tau == reference.kendall_tau
                && r.pairwise_accuracy == reference.pairwise_accuracy,
            format!("monotone map {m} changed the metrics"),
        )?;
    }
    Ok(format!(
        "identical 1/1/1, reversed -1/-1/0, 20 monotone maps (rho {:.3}, tau {:.3}) invariant",
        reference.spearman_rho, reference.kendall_tau
    ))
}

fn manifest_without_times(dir: &Path) -> Result<Vec<ManifestEntry>, String> {
    let text = fs::read_to_string(dir.join(MANIFEST_FILE)).map_err(|e| e.to_string())?;
    text.lines()
        .map(|l| {
            let mut e: ManifestEntry = serde_json::from_str(l).map_err(|e| e.to_string())?;
            e.finished_at = Default::default();
            Ok(e)
        })
        .collect()
}

// 10. The shipped fixture runs end to end with a reproducible manifest.
fn offline_end_to_end() -> Outcome {
    let fixture = workspace().join("data/fixture");
    let config = PipelineConfig::load(&fixture.join("config.toml")).map_err(|e| e.to_string())?;
    let mut manifests = Vec::new();
    for _ in 0..2 {
        let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
        let summary = Pipeline::new(config.clone(), fixture.clone())
            .with_output_dir(tmp.path().to_path_buf())
            .run_all(None)
            .map_err(|e| e.to_string())?;
        check(summary.stages.len() == 9, format!("{} stages ran", summary.stages.len()))?;
        check(summary.checks_failed == 0, format!("{} validation checks failed", summary.checks_failed))?;
        manifests.push(manifest_without_times(tmp.path())?);
    }
    check(manifests[0] == manifests[1], "manifests differ between runs")?;
    let n_outputs: usize = manifests[0].iter().map(|e| e.outputs.len()).sum();
    Ok(format!("9 stages, {n_outputs} hashed outputs, identical across two runs"))
}

// 11. Live data: party medians follow the expert ordering.
fn live_alignment() -> Outcome {
    let path = std::env::var("IDEOAXIS_LIVE_CONFIG")
        .map(PathBuf::from)
        .unwrap_or_else(|_| workspace().join("data/live/config.toml"));
    let pipeline = Pipeline::from_file(&path).map_err(|e| e.to_string())?;
    check(!pipeline.offline(), "the live configuration must not be offline")?;
    let summary = pipeline.run_all(None).map_err(|e| e.to_string())?;
    check(summary.checks_failed == 0, format!("{} sign checks failed", summary.checks_failed))?;
    Ok(format!("all sign checks hold ({})", path.display()))
}

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        // keeps `cargo test -- --list` working
        return;
    }
    let run_ignored = args.iter().any(|a| a == "--ignored" || a == "--include-ignored");
    let only_ignored = args.iter().any(|a| a == "--ignored");

    let criteria: [Criterion; 11] = [
        (1, "anchor exactness", anchor_exactness, false),
        (2, "rigid-motion invariance", rigid_motion_invariance, false),
        (3, "pair-swap antisymmetry", pair_swap_antisymmetry, false),
        (4, "synthetic recovery", synthetic_recovery, false),
        (5, "c-TF-IDF oracle", ctfidf_oracle, false),
        (6, "group split partition", group_split_partition, false),
        (7, "PCA planted plane", pca_planted_plane, false),
        (8, "classifier baseline", classifier_baseline, false),
        (9, "rank agreement metrics", rank_agreement_metrics, false),
        (10, "offline end-to-end", offline_end_to_end, false),
        (11, "live alignment (networked)", live_alignment, true),
    ];
    let mut failed = 0;
    for (n, name, f, networked) in criteria {
        if networked && !run_ignored || !networked && only_ignored {
            println!("SKIP criterion {n:>2}: {name} (ignored; pass --ignored to run)");
            continue;
        }
        let t0 = Instant::now();
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let secs = t0.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS criterion {n:>2}: {name} — {detail} [{secs:.2}s]"),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {n:>2}: {name} — {why} [{secs:.2}s]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
