//! Reference implementations written directly from the definitions, with
//! no code shared with the library. Used by the acceptance harness and the
//! fixture tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use serde_json::Value;

type ComboKey = (String, String, String);

pub fn fixture_dir() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

/// Smoothed log-odds ratio and its z-score for one word.
pub fn log_odds_direct(f_i: f64, n_i: f64, f_j: f64, n_j: f64, f_bg: f64, n_bg: f64) -> (f64, f64) {
    let odds_i = (f_i + f_bg) / (n_i + n_bg - f_i + f_bg);
    let odds_j = (f_j + f_bg) / (n_j + n_bg - f_j + f_bg);
    let s = odds_i.ln() - odds_j.ln();
    let sd = (1.0 / (f_i + f_bg) + 1.0 / (f_j + f_bg)).sqrt();
    (s, s / sd)
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let mut ab = 0.0;
    let mut aa = 0.0;
    let mut bb = 0.0;
    for k in 0..a.len() {
        ab += a[k] * b[k];
        aa += a[k] * a[k];
        bb += b[k] * b[k];
    }
    ab / (aa.sqrt() * bb.sqrt())
}

/// Per-token contributions of a token sequence to the axis `pos - neg`.
/// Tokens without a vector are skipped.
pub fn contributions(tokens: &[&str], vectors: &HashMap<String, Vec<f64>>, neg: &str, pos: &str) -> Vec<f64> {
    let axis: Vec<f64> = vectors[pos].iter().zip(&vectors[neg]).map(|(p, n)| p - n).collect();
    tokens
        .iter()
        .filter_map(|t| vectors.get(*t))
        .map(|v| cosine(v, &axis))
        .collect()
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Every pair of positions within `window` of each other on the
/// min-count-filtered sequence adds `1/distance` to both ordered cells.
pub fn cooccurrence_brute(docs: &[Vec<&str>], window: usize, min_count: u64) -> BTreeMap<(String, String), f64> {
    let mut freq: HashMap<&str, u64> = HashMap::new();
    for d in docs {
        for t in d {
            *freq.entry(t).or_default() += 1;
        }
    }
    let mut cells = BTreeMap::new();
    for d in docs {
        let kept: Vec<&str> = d.iter().copied().filter(|t| freq[t] >= min_count).collect();
        for i in 0..kept.len() {
            for j in i + 1..kept.len() {
                let dist = j - i;
                if dist > window {
                    break;
                }
                let w = 1.0 / dist as f64;
                *cells.entry((kept[i].to_string(), kept[j].to_string())).or_insert(0.0) += w;
                *cells.entry((kept[j].to_string(), kept[i].to_string())).or_insert(0.0) += w;
            }
        }
    }
    cells
}

/// Weighted least-squares objective over the nonzero cells.
#[allow(clippy::too_many_arguments)]
pub fn glove_objective(
    cells: &[(usize, usize, f64)],
    dim: usize,
    word: &[f64],
    context: &[f64],
    word_bias: &[f64],
    context_bias: &[f64],
    x_max: f64,
    alpha: f64,
) -> f64 {
    let mut total = 0.0;
    for &(i, j, x) in cells {
        let weight = if x < x_max { (x / x_max).powf(alpha) } else { 1.0 };
        let mut dot = 0.0;
        for k in 0..dim {
            dot += word[i * dim + k] * context[j * dim + k];
        }
        let err = dot + word_bias[i] + context_bias[j] - x.ln();
        total += weight * err * err;
    }
    total
}

/// Fraction of points whose cluster's majority label equals their own.
pub fn purity(assignment: &[usize], truth: &[usize]) -> f64 {
    let mut table: HashMap<usize, HashMap<usize, usize>> = HashMap::new();
    for (a, t) in assignment.iter().zip(truth) {
        *table.entry(*a).or_default().entry(*t).or_default() += 1;
    }
    let hits: usize = table.values().map(|m| m.values().max().copied().unwrap_or(0)).sum();
    hits as f64 / truth.len() as f64
}

/// Two labelings describe the same partition.
pub fn same_partition(a: &[usize], b: &[usize]) -> bool {
    let mut ab: HashMap<usize, usize> = HashMap::new();
    let mut ba: HashMap<usize, usize> = HashMap::new();
    a.iter()
        .zip(b)
        .all(|(x, y)| *ab.entry(*x).or_insert(*y) == *y && *ba.entry(*y).or_insert(*x) == *x)
}

#[derive(Debug, Clone)]
pub struct RawTriple {
    pub party: String,
    pub verb: String,
    pub agent: String,
    pub patient: String,
}

#[derive(Debug, Default)]
pub struct RawTriples {
    pub complete: Vec<RawTriple>,
    pub invalid: usize,
    pub missing_roles: usize,
}

fn text_field(v: &Value, key: &str) -> Option<String> {
    let s = v.get(key)?.as_str()?.trim().to_lowercase();
    (!s.is_empty()).then_some(s)
}

pub fn read_triples(path: &Path) -> RawTriples {
    let text = std::fs::read_to_string(path).unwrap();
    let mut out = RawTriples::default();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let Ok(v) = serde_json::from_str::<Value>(line) else {
            out.invalid += 1;
            continue;
        };
        let party = v.get("party").and_then(Value::as_str).map(str::to_string);
        let has_id = v.get("doc_id").is_some_and(Value::is_string);
        let verb = text_field(&v, "verb_lemma");
        let (Some(party), true, Some(verb)) = (party, has_id, verb) else {
            out.invalid += 1;
            continue;
        };
        if party != "D" && party != "R" {
            out.invalid += 1;
            continue;
        }
        match (text_field(&v, "agent"), text_field(&v, "patient")) {
            (Some(agent), Some(patient)) => out.complete.push(RawTriple {
                party,
                verb,
                agent,
                patient,
            }),
            _ => out.missing_roles += 1,
        }
    }
    out
}

pub fn word_count(s: &str) -> usize {
    s.split(' ').filter(|w| !w.is_empty()).count()
}

pub fn is_long(t: &RawTriple, max: usize) -> bool {
    word_count(&t.agent) > max || word_count(&t.patient) > max
}

fn ranked(counts: HashMap<String, u64>, n: usize) -> Vec<(String, u64)> {
    let mut v: Vec<(String, u64)> = counts.into_iter().collect();
    v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    v.truncate(n);
    v
}

pub struct RoleSettings {
    pub max_tokens: usize,
    pub top_combinations: usize,
    pub top_agents: usize,
    pub top_patients: usize,
    pub relationship_patients: usize,
    pub us: Vec<String>,
    pub them: Vec<String>,
    pub democrat_terms: Vec<String>,
    pub republican_terms: Vec<String>,
    pub verb_sets: Vec<(String, Vec<String>)>,
    pub merge: HashMap<String, String>,
}

pub fn category(agent: &str, party: &str, s: &RoleSettings) -> &'static str {
    if s.us.iter().any(|u| u == agent) {
        return "US";
    }
    if s.them.iter().any(|t| t == agent) {
        return "THEM";
    }
    let opposing = if party == "D" {
        &s.republican_terms
    } else {
        &s.democrat_terms
    };
    let padded = format!(" {} ", agent.split_whitespace().collect::<Vec<_>>().join(" "));
    let hit = opposing.iter().any(|term| {
        let term = term.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
        !term.is_empty() && padded.contains(&format!(" {term} "))
    });
    if hit {
        "OTHER_PARTY"
    } else {
        "OTHER"
    }
}

fn merged_patient(p: &str, merge: &HashMap<String, String>) -> Option<String> {
    let mut words: Vec<&str> = p.split_whitespace().collect();
    while words.len() > 1 && matches!(words[0], "the" | "a" | "an") {
        words.remove(0);
    }
    let base = words.join(" ");
    let out = merge.get(&base).cloned().unwrap_or(base);
    (!out.is_empty()).then_some(out)
}

/// The five role tables as TSV text, keyed by file name.
pub fn role_tables(triples: &[RawTriple], s: &RoleSettings) -> BTreeMap<&'static str, String> {
    let kept: Vec<&RawTriple> = triples.iter().filter(|t| !is_long(t, s.max_tokens)).collect();
    let parties = ["D", "R"];
    let mut tables = BTreeMap::new();

    let mut combos: HashMap<ComboKey, [u64; 2]> = HashMap::new();
    for t in &kept {
        let slot = combos
            .entry((t.agent.clone(), t.verb.clone(), t.patient.clone()))
            .or_insert([0, 0]);
        slot[if t.party == "D" { 0 } else { 1 }] += 1;
    }
    let mut out = String::from("direction\trank\tagent\tverb\tpatient\tcount_D\tcount_R\tdifference\n");
    for (direction, sign) in [("D>R", 1i64), ("R>D", -1i64)] {
        let mut rows: Vec<(&ComboKey, &[u64; 2])> = combos.iter().collect();
        rows.sort_by(|a, b| {
            let da = sign * (a.1[0] as i64 - a.1[1] as i64);
            let db = sign * (b.1[0] as i64 - b.1[1] as i64);
            db.cmp(&da)
                .then_with(|| (b.1[0] + b.1[1]).cmp(&(a.1[0] + a.1[1])))
                .then_with(|| a.0.cmp(b.0))
        });
        for (rank, (key, c)) in rows.into_iter().take(s.top_combinations).enumerate() {
            let _ = writeln!(
                out,
                "{direction}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                rank + 1,
                key.0,
                key.1,
                key.2,
                c[0],
                c[1],
                c[0] as i64 - c[1] as i64
            );
        }
    }
    tables.insert("roles_combinations.tsv", out);

    for (file, column, n, pick) in [
        ("roles_agents.tsv", "agent", s.top_agents, 0),
        ("roles_patients.tsv", "patient", s.top_patients, 1),
    ] {
        let mut out = format!("party\trank\t{column}\tcount\n");
        for p in parties {
            let mut counts: HashMap<String, u64> = HashMap::new();
            for t in kept.iter().filter(|t| t.party == p) {
                let key = if pick == 0 { &t.agent } else { &t.patient };
                *counts.entry(key.clone()).or_default() += 1;
            }
            for (rank, (k, c)) in ranked(counts, n).into_iter().enumerate() {
                let _ = writeln!(out, "{p}\t{}\t{k}\t{c}", rank + 1);
            }
        }
        tables.insert(file, out);
    }

    let categorized: Vec<(&RawTriple, &str)> = kept.iter().map(|t| (*t, category(&t.agent, &t.party, s))).collect();
    let mut out = String::from("party\tcategory\tcount\n");
    for p in parties {
        if !kept.iter().any(|t| t.party == p) {
            continue;
        }
        for c in ["US", "THEM", "OTHER_PARTY", "OTHER"] {
            let n = categorized.iter().filter(|(t, k)| t.party == p && *k == c).count();
            let _ = writeln!(out, "{p}\t{c}\t{n}");
        }
    }
    tables.insert("roles_memberships.tsv", out);

    let mut out = String::from("agent\tverb_set\tpatient\tparty\tweight\n");
    for (name, verbs) in &s.verb_sets {
        for c in ["US", "THEM"] {
            for p in parties {
                let mut counts: HashMap<String, u64> = HashMap::new();
                for (t, k) in &categorized {
                    if *k == c && t.party == p && verbs.contains(&t.verb) {
                        if let Some(m) = merged_patient(&t.patient, &s.merge) {
                            *counts.entry(m).or_default() += 1;
                        }
                    }
                }
                for (patient, w) in ranked(counts, s.relationship_patients) {
                    let _ = writeln!(out, "{c}\t{name}\t{patient}\t{p}\t{w}");
                }
            }
        }
    }
    tables.insert("relationships.tsv", out);
    tables
}

/// Role settings of the bundled fixture configuration.
pub fn fixture_role_settings() -> RoleSettings {
    let defaults = narraframe::pipeline::RolesConfig::default();
    let cfg: Value =
        serde_json::from_str(&std::fs::read_to_string(fixture_dir().join("config.json")).unwrap()).unwrap();
    let merge = cfg["roles"]["merge"]
        .as_object()
        .map(|m| {
            m.iter()
                .map(|(k, v)| (k.clone(), v.as_str().unwrap().to_string()))
                .collect()
        })
        .unwrap_or_default();
    RoleSettings {
        max_tokens: 3,
        top_combinations: 10,
        top_agents: 20,
        top_patients: 20,
        relationship_patients: 10,
        us: ["i", "we", "us", "our", "ours"].map(String::from).to_vec(),
        them: ["they", "their", "them"].map(String::from).to_vec(),
        democrat_terms: defaults.democrat_terms,
        republican_terms: defaults.republican_terms,
        verb_sets: vec![
            ("help".into(), vec!["help".into(), "save".into(), "protect".into()]),
            ("stop".into(), vec!["stop".into(), "slow".into(), "prevent".into()]),
            ("want".into(), vec!["want".into()]),
        ],
        merge,
    }
}
