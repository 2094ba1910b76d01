//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero when any fails.

mod common;

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use common::*;
use narraframe::corpus::{CorpusPartition, Document, Party};
use narraframe::embedding::{build_cooccurrence, load_embeddings, train_glove_with, EmbeddingModel, GloveParams};
use narraframe::frameaxis::{FrameScorer, Microframe};
use narraframe::geometry::{kmeans, project_umap, trustworthiness, KMeansParams, LabeledVectors, UmapParams};
use narraframe::overrepresentation::weighted_log_odds;
use narraframe::pipeline::{run_pipeline, Manifest, PipelineConfig, Stage, MANIFEST_FILE};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(elapsed: Duration, limit_s: f64) -> Result<(), String> {
    if elapsed.as_secs_f64() < limit_s {
        Ok(())
    } else {
        Err(format!("took {:.2}s, limit {limit_s}s", elapsed.as_secs_f64()))
    }
}

fn partition(name: &str, party: Party, docs: &[Vec<String>]) -> CorpusPartition {
    let docs = docs
        .iter()
        .enumerate()
        .map(|(i, words)| Document::new(format!("{name}{i}"), party.clone(), words.join(" ")))
        .collect();
    CorpusPartition::new(name, docs)
}

fn random_partition(rng: &mut ChaCha8Rng, name: &str, vocab: usize) -> (CorpusPartition, HashMap<String, u64>) {
    let mut counts = HashMap::new();
    let mut docs = Vec::new();
    for w in 0..vocab {
        let c = rng.random_range(0..=20u64);
        if c > 0 {
            counts.insert(format!("w{w}"), c);
            docs.push(vec![format!("w{w}"); c as usize]);
        }
    }
    (partition(name, Party::D, &docs), counts)
}

fn log_odds_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst, mut worst_anti, mut words) = (0.0f64, 0.0f64, 0usize);
    for _ in 0..200 {
        let vocab = rng.random_range(1..=50);
        let (a, ca) = random_partition(&mut rng, "a", vocab);
        let (b, cb) = random_partition(&mut rng, "b", vocab);
        let (bg, cbg) = random_partition(&mut rng, "g", vocab);
        if a.total_tokens() == 0 || b.total_tokens() == 0 || bg.total_tokens() == 0 {
            continue;
        }
        let n = |c: &HashMap<String, u64>| c.values().sum::<u64>() as f64;
        let (ab, ba) = (
            weighted_log_odds(&a, &b, &bg).map_err(|e| e.to_string())?,
            weighted_log_odds(&b, &a, &bg).map_err(|e| e.to_string())?,
        );
        let mut expected = 0;
        for w in 0..vocab {
            let t = format!("w{w}");
            let f = |c: &HashMap<String, u64>| c.get(&t).copied().unwrap_or(0) as f64;
            let (fa, fb, fg) = (f(&ca), f(&cb), f(&cbg));
            if fa + fb == 0.0 || fa + fg == 0.0 || fb + fg == 0.0 {
                continue;
            }
            expected += 1;
            let (s, z) = log_odds_direct(fa, n(&ca), fb, n(&cb), fg, n(&cbg));
            let got = ab.get(&t).ok_or(format!("{t} missing"))?;
            worst = worst.max((got.s - s).abs()).max((got.z.unwrap() - z).abs());
            let back = ba.get(&t).ok_or(format!("{t} missing after swap"))?;
            worst_anti = worst_anti
                .max((got.s + back.s).abs())
                .max((got.z.unwrap() + back.z.unwrap()).abs());
        }
        if expected != ab.scores.len() {
            return Err(format!("scored {} words, expected {expected}", ab.scores.len()));
        }
        words += expected;
    }
    within(start.elapsed(), 5.0)?;
    check(
        worst <= 1e-10 && worst_anti <= 1e-12,
        format!("{words} words, max error {worst:.1e}, antisymmetry {worst_anti:.1e}"),
    )
}

fn log_odds_hand_case() -> Outcome {
    // f_i=2 of n_i=10, f_j=1 of n_j=10, f_bg=1 of n_bg=20.
    let fill = |prefix: &str, n: usize| (0..n).map(|k| format!("{prefix}{k}")).collect::<Vec<_>>();
    let mut i = vec!["x".to_string(), "x".to_string()];
    i.extend(fill("i", 8));
    let mut j = vec!["x".to_string()];
    j.extend(fill("j", 9));
    let mut g = vec!["x".to_string()];
    g.extend(fill("g", 19));
    let r = weighted_log_odds(
        &partition("i", Party::D, &[i]),
        &partition("j", Party::R, &[j]),
        &partition("g", Party::D, &[g]),
    )
    .map_err(|e| e.to_string())?;
    let x = r.get("x").ok_or("x not scored")?;
    let (s, z) = (x.s, x.z.unwrap());
    check(
        (s - 0.4395).abs() <= 1e-3 && (z - 0.4815).abs() <= 1e-3,
        format!("s={s:.4} z={z:.4}"),
    )
}

fn frameaxis_bruteforce() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let dim = 25;
    let words: Vec<String> = (0..80).map(|k| format!("v{k}")).collect();
    let vectors: HashMap<String, Vec<f64>> = words
        .iter()
        .map(|w| (w.clone(), (0..dim).map(|_| normal.sample(&mut rng)).collect()))
        .collect();
    let model = EmbeddingModel::new(dim, words.iter().map(|w| (w.clone(), vectors[w].clone())).collect())
        .map_err(|e| e.to_string())?;
    let scorer = FrameScorer::without_stopwords(&model);

    // Some tokens are out of vocabulary and must be skipped.
    let token = |rng: &mut ChaCha8Rng| {
        if rng.random_bool(0.1) {
            format!("oov{}", rng.random_range(0..5))
        } else {
            words.choose(rng).unwrap().clone()
        }
    };
    let docs: Vec<Vec<String>> = (0..500)
        .map(|_| {
            let len = rng.random_range(1..=30);
            (0..len).map(|_| token(&mut rng)).collect()
        })
        .collect();
    let background: Vec<Vec<String>> = (0..200).map(|_| (0..20).map(|_| token(&mut rng)).collect()).collect();
    let bg = partition("bg", Party::D, &background);
    let bg_tokens: Vec<&str> = background.iter().flatten().map(String::as_str).collect();

    let (mut worst, mut worst_swap, mut range_ok, mut scored) = (0.0f64, 0.0f64, true, 0usize);
    for _ in 0..20 {
        let pair: Vec<&String> = words.choose_multiple(&mut rng, 2).collect();
        let (neg, pos) = (pair[0].as_str(), pair[1].as_str());
        let frame = Microframe::new(&model, neg, pos).map_err(|e| e.to_string())?;
        let swapped = frame.swapped();
        let baseline = scorer.baseline_bias(&bg, &frame).map_err(|e| e.to_string())?;
        let baseline_swapped = scorer.baseline_bias(&bg, &swapped).map_err(|e| e.to_string())?;
        let expected_baseline = mean(&contributions(&bg_tokens, &vectors, neg, pos));
        worst = worst.max((baseline.value - expected_baseline).abs());

        for (k, d) in docs.iter().enumerate() {
            let doc = Document::new(format!("d{k}"), Party::D, d.join(" "));
            let toks: Vec<&str> = d.iter().map(String::as_str).collect();
            let c = contributions(&toks, &vectors, neg, pos);
            let got = scorer.score(&doc, &frame, &baseline);
            if c.is_empty() {
                if got.is_some() {
                    return Err("document without vocabulary words was scored".into());
                }
                continue;
            }
            let got = got.ok_or("scorable document was skipped")?;
            let bias = mean(&c);
            let intensity = mean(&c.iter().map(|x| (x - expected_baseline).powi(2)).collect::<Vec<_>>());
            worst = worst
                .max((got.bias - bias).abs())
                .max((got.intensity - intensity).abs());
            range_ok &= (-1.0..=1.0).contains(&got.bias);
            let flip = scorer.score(&doc, &swapped, &baseline_swapped).unwrap();
            worst_swap = worst_swap
                .max((flip.bias + got.bias).abs())
                .max((flip.intensity - got.intensity).abs());
            scored += 1;
        }
    }
    within(start.elapsed(), 10.0)?;
    check(
        worst <= 1e-9 && worst_swap <= 1e-12 && range_ok,
        format!("{scored} scores, max error {worst:.1e}, pole swap {worst_swap:.1e}, biases in range: {range_ok}"),
    )
}

fn cooccurrence_exact() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut worst, mut cells) = (0.0f64, 0usize);
    for _ in 0..50 {
        let vocab = rng.random_range(2..=15);
        let ndocs = rng.random_range(1..=8);
        let docs: Vec<Vec<String>> = (0..ndocs)
            .map(|_| {
                let len = rng.random_range(1..=25);
                (0..len).map(|_| format!("t{}", rng.random_range(0..vocab))).collect()
            })
            .collect();
        let window = rng.random_range(1..=6);
        let min_count = rng.random_range(1..=3);
        let corpus = partition("c", Party::D, &docs);
        let refs: Vec<Vec<&str>> = docs.iter().map(|d| d.iter().map(String::as_str).collect()).collect();
        let expected = cooccurrence_brute(&refs, window, min_count);
        let table = match build_cooccurrence(&corpus, window, min_count) {
            Ok(t) => t,
            Err(_) if expected.is_empty() => continue,
            Err(e) => return Err(e.to_string()),
        };
        let got: BTreeMap<(String, String), f64> = table
            .entries()
            .iter()
            .map(|e| {
                let v = table.vocab();
                ((v[e.row as usize].clone(), v[e.col as usize].clone()), e.value)
            })
            .collect();
        if got.len() != expected.len() || got.keys().ne(expected.keys()) {
            return Err(format!("cell sets differ: {} vs {}", got.len(), expected.len()));
        }
        for (k, v) in &expected {
            worst = worst.max((got[k] - v).abs());
        }
        cells += expected.len();
    }
    check(worst <= 1e-12, format!("{cells} cells, max error {worst:.1e}"))
}

fn synthetic_sentences(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec<String>> {
    // Four topics, each with its own words, plus shared function words.
    let topics: Vec<Vec<String>> = (0..4).map(|t| (0..12).map(|k| format!("t{t}w{k}")).collect()).collect();
    let shared: Vec<String> = (0..8).map(|k| format!("s{k}")).collect();
    (0..n)
        .map(|_| {
            let topic = &topics[rng.random_range(0..topics.len())];
            let len = rng.random_range(8..=16);
            (0..len)
                .map(|_| {
                    if rng.random_bool(0.25) {
                        shared.choose(rng).unwrap().clone()
                    } else {
                        topic.choose(rng).unwrap().clone()
                    }
                })
                .collect()
        })
        .collect()
}

fn glove_progress() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let corpus = partition("g", Party::D, &synthetic_sentences(&mut rng, 200));
    let table = build_cooccurrence(&corpus, 10, 1).map_err(|e| e.to_string())?;
    let cells: Vec<(usize, usize, f64)> = table
        .entries()
        .iter()
        .map(|e| (e.row as usize, e.col as usize, e.value))
        .collect();
    let params = GloveParams {
        dim: 50,
        epochs: 50,
        workers: 1,
        seed: 7,
        ..GloveParams::default()
    };
    let mut objectives = BTreeMap::new();
    let training = train_glove_with(&table, &params, |epoch, p| {
        if epoch == 1 || epoch == 50 {
            let j = glove_objective(
                &cells,
                p.dim,
                &p.word,
                &p.context,
                &p.word_bias,
                &p.context_bias,
                params.x_max,
                params.alpha,
            );
            objectives.insert(epoch, j);
        }
    })
    .map_err(|e| e.to_string())?;
    let (first, last) = (objectives[&1], objectives[&50]);

    let model = training.embedding().map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("vectors.txt");
    model.save(&path).map_err(|e| e.to_string())?;
    let back = load_embeddings(&path).map_err(|e| e.to_string())?;
    let bitwise = back.tokens() == model.tokens()
        && model.tokens().iter().all(|t| {
            let (a, b) = (model.vector(t).unwrap(), back.vector(t).unwrap());
            a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
        });
    within(start.elapsed(), 60.0)?;
    check(
        last <= 0.5 * first && bitwise,
        format!(
            "objective {first:.2} -> {last:.2} ({:.1}%), round trip bitwise: {bitwise}",
            100.0 * last / first
        ),
    )
}

fn blobs(per: usize, dim: usize, sep: f64, seed: u64) -> (LabeledVectors, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let (mut labels, mut rows, mut truth) = (Vec::new(), Vec::new(), Vec::new());
    for c in 0..3 {
        for i in 0..per {
            let row = (0..dim)
                .map(|d| normal.sample(&mut rng) + if d == c { sep } else { 0.0 })
                .collect();
            labels.push(format!("p{c}_{i}"));
            rows.push(row);
            truth.push(c);
        }
    }
    (LabeledVectors::new(labels, rows).unwrap(), truth)
}

fn umap_quality() -> Outcome {
    let start = Instant::now();
    let (points, truth) = blobs(100, 50, 10.0, 5);
    let params = UmapParams::default();
    let a = project_umap(&points, &params).map_err(|e| e.to_string())?;
    let b = project_umap(&points, &params).map_err(|e| e.to_string())?;
    let bitwise = a
        .coords
        .iter()
        .flatten()
        .zip(b.coords.iter().flatten())
        .all(|(x, y)| x.to_bits() == y.to_bits());
    let clusters = kmeans(
        &a.to_vectors(),
        &KMeansParams {
            k: 3,
            ..KMeansParams::default()
        },
    )
    .map_err(|e| e.to_string())?;
    let p = purity(&clusters.assignment, &truth);
    let t = trustworthiness(&points, &a, 15).map_err(|e| e.to_string())?;
    within(start.elapsed(), 30.0)?;
    check(
        p >= 0.9 && t >= 0.80 && bitwise,
        format!("purity {p:.3}, trustworthiness {t:.3}, bitwise rerun: {bitwise}"),
    )
}

fn kmeans_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst_rise = 0.0f64;
    let mut histories = 0;
    for trial in 0..30 {
        let n = rng.random_range(20..=200);
        let dim = rng.random_range(2..=8);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..dim).map(|_| rng.random_range(-5.0..5.0)).collect())
            .collect();
        let labels = (0..n).map(|i| format!("x{i}")).collect();
        let pts = LabeledVectors::new(labels, rows).unwrap();
        let params = KMeansParams {
            k: rng.random_range(2..=8),
            seed: trial,
            ..KMeansParams::default()
        };
        let c = kmeans(&pts, &params).map_err(|e| e.to_string())?;
        for w in c.history.windows(2) {
            worst_rise = worst_rise.max((w[1] - w[0]) / w[0].max(f64::MIN_POSITIVE));
        }
        histories += 1;
    }

    let mut recovered = 0;
    for seed in 0..10 {
        let (pts, truth) = blobs(40, 10, 25.0, 100 + seed);
        let c = kmeans(
            &pts,
            &KMeansParams {
                k: 3,
                seed,
                ..KMeansParams::default()
            },
        )
        .map_err(|e| e.to_string())?;
        recovered += same_partition(&c.assignment, &truth) as usize;
    }

    let hand = LabeledVectors::new(
        ["a", "b", "c", "d"].map(String::from).to_vec(),
        vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![10.0, 10.0], vec![10.0, 11.0]],
    )
    .unwrap();
    let inertia = kmeans(
        &hand,
        &KMeansParams {
            k: 2,
            ..KMeansParams::default()
        },
    )
    .map_err(|e| e.to_string())?
    .inertia;
    check(
        worst_rise <= 1e-12 && recovered == 10 && inertia == 1.0,
        format!(
            "{histories} runs, largest relative rise {worst_rise:.1e}; blobs recovered {recovered}/10; hand inertia {inertia}"
        ),
    )
}

fn fixture_config() -> (PipelineConfig, std::path::PathBuf) {
    let loaded = narraframe::pipeline::load_config(fixture_dir().join("config.json")).unwrap();
    (loaded.config, loaded.base_dir)
}

fn role_aggregation() -> Outcome {
    let path = fixture_dir().join("triples.jsonl");
    let raw = read_triples(&path);
    let long = raw.complete.iter().filter(|t| is_long(t, 3)).count();
    let expected = role_tables(&raw.complete, &fixture_role_settings());

    let (mut config, base) = fixture_config();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    config.output_dir = dir.path().to_path_buf();
    let bundle = run_pipeline(&config, &base, &[Stage::Roles]).map_err(|e| e.to_string())?;
    let mut mismatched = Vec::new();
    for (file, text) in &expected {
        let got = std::fs::read_to_string(dir.path().join(file)).map_err(|e| format!("{file}: {e}"))?;
        if &got != text {
            mismatched.push(*file);
        }
    }
    let stats = &bundle.manifest.stages[&Stage::Roles].stats;
    let stat = |k: &str| stats.get(k).and_then(|v| v.as_u64()).unwrap_or(u64::MAX) as usize;
    let counts_ok = stat("loaded") == raw.complete.len()
        && stat("invalid") == raw.invalid
        && stat("missing_roles") == raw.missing_roles
        && stat("kept") == raw.complete.len() - long;
    check(
        mismatched.is_empty() && counts_ok && long > 0,
        format!(
            "{} tables recounted, mismatched {mismatched:?}; {} triples, {long} with long roles removed, counts agree: {counts_ok}",
            expected.len(),
            raw.complete.len()
        ),
    )
}

fn defaults() -> Outcome {
    let c = PipelineConfig::default();
    let pairs = [
        ("log-odds top terms", c.logodds.top_terms, 40),
        ("tweets per microframe", c.frames.top_documents, 3),
        ("differential frames", c.frames.top_frames, 10),
        ("top verbs", c.verbs.top_verbs, 100),
        ("verb clusters", c.verbs.clusters, 15),
        ("embedding dimension", c.embedding.dim, 300),
        ("embedding epochs", c.embedding.epochs, 500),
    ];
    let wrong: Vec<String> = pairs
        .iter()
        .filter(|(_, got, want)| got != want)
        .map(|(name, got, want)| format!("{name}={got} (want {want})"))
        .collect();
    check(
        wrong.is_empty(),
        if wrong.is_empty() {
            format!("{} defaults", pairs.len())
        } else {
            wrong.join(", ")
        },
    )
}

fn read_dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .filter(|e| e.file_type().unwrap().is_file())
        .map(|e| {
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect()
}

fn end_to_end() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_narraframe");
    let config = fixture_dir().join("config.json");
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let run = |out: &Path| -> Result<Duration, String> {
        let start = Instant::now();
        let status = Command::new(bin)
            .args(["run", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(out)
            .output()
            .map_err(|e| e.to_string())?;
        if !status.status.success() {
            return Err(String::from_utf8_lossy(&status.stderr).into_owned());
        }
        Ok(start.elapsed())
    };
    let (first, second) = (dir.path().join("first"), dir.path().join("second"));
    let elapsed = run(&first)?;
    within(elapsed, 120.0)?;
    let a = read_dir_bytes(&first);
    run(&second)?;
    let b = read_dir_bytes(&second);
    run(&first)?;
    let again = read_dir_bytes(&first);

    let manifest = Manifest::load(&first).ok_or(format!("no readable {MANIFEST_FILE}"))?;
    let mut missing = Vec::new();
    for f in &manifest.files {
        match a.get(&f.path) {
            Some(bytes) if hex::encode(Sha256::digest(bytes)) == f.sha256 => {}
            _ => missing.push(f.path.clone()),
        }
    }
    let listed = manifest.files.len() + 1 == a.len();
    check(
        missing.is_empty() && listed && a == b && a == again && manifest.status == "complete",
        format!(
            "{} files in {:.2}s, all listed: {listed}, unverified {missing:?}, fresh rerun identical: {}, rerun in place identical: {}",
            a.len(),
            elapsed.as_secs_f64(),
            a == b,
            a == again
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("log-odds matches direct evaluation", log_odds_oracle),
        ("log-odds hand case", log_odds_hand_case),
        ("frame bias and intensity match per-word sums", frameaxis_bruteforce),
        ("co-occurrence equals brute-force counting", cooccurrence_exact),
        ("GloVe objective halves and vectors round-trip", glove_progress),
        ("UMAP separates planted blobs", umap_quality),
        ("k-means monotone, exact, hand case", kmeans_properties),
        ("role tables equal recounts", role_aggregation),
        ("default configuration constants", defaults),
        ("end-to-end run on the fixture", end_to_end),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {name} [{secs:.2}s]: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name} [{secs:.2}s]: {detail}");
            }
        }
    }
    println!("{} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
