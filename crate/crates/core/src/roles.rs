//! Agent–verb–Patient triples: loading, counting, differential tables and
//! us/them membership categorization.
//!
//! Triples arrive as line-delimited JSON produced by an external semantic
//! role labeler:
//!
//! ```text
//! {"doc_id": "t1", "party": "D", "sentence_idx": 0, "verb": "saving",
//!  "verb_lemma": "save", "agent": "we", "patient": "lives"}
//! ```
//!
//! `agent` or `patient` is omitted when the labeler found no such role.
//! Such records are valid but carry no relationship and are counted apart.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Party;

/// Longest agent or patient kept, in whitespace tokens.
pub const DEFAULT_MAX_ROLE_TOKENS: usize = 3;
/// Verbs kept per party for clustering.
pub const DEFAULT_TOP_VERBS: usize = 100;

pub const DEFAULT_US_TERMS: [&str; 5] = ["i", "we", "us", "our", "ours"];
pub const DEFAULT_THEM_TERMS: [&str; 3] = ["they", "their", "them"];

const ARTICLES: [&str; 3] = ["the", "a", "an"];

#[derive(Debug, Error)]
pub enum RolesError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RoleTriple {
    pub doc_id: String,
    pub party: Party,
    pub sentence_idx: u32,
    pub verb: String,
    pub verb_lemma: String,
    pub agent: String,
    pub patient: String,
    pub agent_token_count: usize,
    pub patient_token_count: usize,
}

impl RoleTriple {
    /// Builds a triple, lowercasing text fields and counting role tokens.
    pub fn new(doc_id: &str, party: Party, verb_lemma: &str, agent: &str, patient: &str) -> Self {
        let agent = agent.trim().to_lowercase();
        let patient = patient.trim().to_lowercase();
        RoleTriple {
            doc_id: doc_id.to_string(),
            party,
            sentence_idx: 0,
            verb: verb_lemma.trim().to_lowercase(),
            verb_lemma: verb_lemma.trim().to_lowercase(),
            agent_token_count: agent.split_whitespace().count(),
            patient_token_count: patient.split_whitespace().count(),
            agent,
            patient,
        }
    }
}

#[derive(Deserialize)]
struct TripleRecord {
    doc_id: String,
    party: String,
    #[serde(default)]
    sentence_idx: u32,
    #[serde(default)]
    verb: Option<String>,
    verb_lemma: Option<String>,
    #[serde(default)]
    agent: Option<String>,
    #[serde(default)]
    patient: Option<String>,
}

/// Result of [`load_triples`].
#[derive(Debug, Clone, Default)]
pub struct LoadedTriples {
    pub triples: Vec<RoleTriple>,
    /// Records that are not valid JSON, lack a verb, or name a party other than D/R.
    pub invalid: usize,
    /// Valid records without an agent or without a patient.
    pub missing_roles: usize,
}

fn nonblank(s: Option<String>) -> Option<String> {
    s.map(|s| s.trim().to_lowercase()).filter(|s| !s.is_empty())
}

/// Loads a triple record file.
pub fn load_triples(path: &Path) -> Result<LoadedTriples, RolesError> {
    let io_err = |source| RolesError::Io {
        path: path.to_path_buf(),
        source,
    };
    let reader = BufReader::new(File::open(path).map_err(io_err)?);
    let mut out = LoadedTriples::default();
    for line in reader.lines() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let Ok(rec) = serde_json::from_str::<TripleRecord>(&line) else {
            out.invalid += 1;
            continue;
        };
        let party = Party::from(rec.party.as_str());
        let Some(lemma) = nonblank(rec.verb_lemma) else {
            out.invalid += 1;
            continue;
        };
        if !matches!(party, Party::D | Party::R) {
            out.invalid += 1;
            continue;
        }
        let (Some(agent), Some(patient)) = (nonblank(rec.agent), nonblank(rec.patient)) else {
            out.missing_roles += 1;
            continue;
        };
        out.triples.push(RoleTriple {
            doc_id: rec.doc_id,
            party,
            sentence_idx: rec.sentence_idx,
            verb: nonblank(rec.verb).unwrap_or_else(|| lemma.clone()),
            agent_token_count: agent.split_whitespace().count(),
            patient_token_count: patient.split_whitespace().count(),
            verb_lemma: lemma,
            agent,
            patient,
        });
    }
    Ok(out)
}

/// Keeps triples whose agent and patient both have at most `max_tokens` tokens.
pub fn filter_triples(triples: &[RoleTriple], max_tokens: usize) -> Vec<RoleTriple> {
    triples
        .iter()
        .filter(|t| t.agent_token_count <= max_tokens && t.patient_token_count <= max_tokens)
        .cloned()
        .collect()
}

/// Triples of one party.
pub fn of_party<'a>(triples: &'a [RoleTriple], party: &Party) -> Vec<&'a RoleTriple> {
    triples.iter().filter(|t| &t.party == party).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Combination {
    pub agent: String,
    pub verb: String,
    pub patient: String,
}

impl fmt::Display for Combination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}, {}, {}", self.agent, self.verb, self.patient)
    }
}

/// Count of every (agent, verb lemma, patient) combination.
pub fn combination_frequencies<'a, I>(triples: I) -> BTreeMap<Combination, u64>
where
    I: IntoIterator<Item = &'a RoleTriple>,
{
    let mut counts = BTreeMap::new();
    for t in triples {
        let key = Combination {
            agent: t.agent.clone(),
            verb: t.verb_lemma.clone(),
            patient: t.patient.clone(),
        };
        *counts.entry(key).or_insert(0) += 1;
    }
    counts
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CombinationDiff {
    pub combination: Combination,
    pub count_a: u64,
    pub count_b: u64,
}

impl CombinationDiff {
    pub fn difference(&self) -> i64 {
        self.count_a as i64 - self.count_b as i64
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DifferentialCombinations {
    /// Largest `count_a - count_b` first.
    pub a_over_b: Vec<CombinationDiff>,
    /// Largest `count_b - count_a` first.
    pub b_over_a: Vec<CombinationDiff>,
}

/// The `k` combinations most over-used by each side. Ties are broken by
/// larger total count, then by combination order.
pub fn differential_combinations(
    a: &BTreeMap<Combination, u64>,
    b: &BTreeMap<Combination, u64>,
    k: usize,
) -> DifferentialCombinations {
    let keys: BTreeSet<&Combination> = a.keys().chain(b.keys()).collect();
    let rows: Vec<CombinationDiff> = keys
        .into_iter()
        .map(|c| CombinationDiff {
            combination: c.clone(),
            count_a: a.get(c).copied().unwrap_or(0),
            count_b: b.get(c).copied().unwrap_or(0),
        })
        .collect();
    let ranked = |sign: i64| {
        let mut v = rows.clone();
        v.sort_by(|x, y| {
            (sign * y.difference())
                .cmp(&(sign * x.difference()))
                .then((y.count_a + y.count_b).cmp(&(x.count_a + x.count_b)))
                .then(x.combination.cmp(&y.combination))
        });
        v.truncate(k);
        v
    };
    DifferentialCombinations {
        a_over_b: ranked(1),
        b_over_a: ranked(-1),
    }
}

/// Top `n` strings by count, ties broken lexicographically.
pub fn top_counts<'a, I>(items: I, n: usize) -> Vec<(String, u64)>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut counts: BTreeMap<&str, u64> = BTreeMap::new();
    for s in items {
        *counts.entry(s).or_insert(0) += 1;
    }
    let mut v: Vec<(String, u64)> = counts.into_iter().map(|(s, c)| (s.to_string(), c)).collect();
    v.sort_by(|x, y| y.1.cmp(&x.1).then(x.0.cmp(&y.0)));
    v.truncate(n);
    v
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentsPatients {
    pub agents: Vec<(String, u64)>,
    pub patients: Vec<(String, u64)>,
}

pub fn top_agents_patients<'a, I>(triples: I, n: usize) -> AgentsPatients
where
    I: IntoIterator<Item = &'a RoleTriple> + Clone,
{
    AgentsPatients {
        agents: top_counts(triples.clone().into_iter().map(|t| t.agent.as_str()), n),
        patients: top_counts(triples.into_iter().map(|t| t.patient.as_str()), n),
    }
}

/// The `n` most frequent verb lemmas, ties broken lexicographically.
pub fn top_verbs<'a, I>(triples: I, n: usize) -> Vec<String>
where
    I: IntoIterator<Item = &'a RoleTriple>,
{
    top_counts(triples.into_iter().map(|t| t.verb_lemma.as_str()), n)
        .into_iter()
        .map(|(v, _)| v)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MembershipCategory {
    Us,
    Them,
    OtherParty,
    Other,
}

impl MembershipCategory {
    pub const ALL: [MembershipCategory; 4] = [
        MembershipCategory::Us,
        MembershipCategory::Them,
        MembershipCategory::OtherParty,
        MembershipCategory::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MembershipCategory::Us => "US",
            MembershipCategory::Them => "THEM",
            MembershipCategory::OtherParty => "OTHER_PARTY",
            MembershipCategory::Other => "OTHER",
        }
    }
}

impl fmt::Display for MembershipCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Word lists used to categorize agents.
///
/// `party_terms` maps a party to the terms that refer to it; a triple from
/// one party is tested against the terms of the opposing party.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MembershipLists {
    pub us: BTreeSet<String>,
    pub them: BTreeSet<String>,
    pub party_terms: BTreeMap<Party, Vec<Vec<String>>>,
}

impl MembershipLists {
    pub fn new<S: AsRef<str>>(us: &[S], them: &[S], democrat_terms: &[S], republican_terms: &[S]) -> Self {
        let set = |v: &[S]| v.iter().map(|s| s.as_ref().trim().to_lowercase()).collect();
        let phrases = |v: &[S]| {
            v.iter()
                .map(|s| s.as_ref().split_whitespace().map(str::to_lowercase).collect::<Vec<_>>())
                .filter(|p: &Vec<String>| !p.is_empty())
                .collect()
        };
        MembershipLists {
            us: set(us),
            them: set(them),
            party_terms: BTreeMap::from([
                (Party::D, phrases(democrat_terms)),
                (Party::R, phrases(republican_terms)),
            ]),
        }
    }

    /// Category of `agent` in a triple written by `party`.
    ///
    /// US and THEM require an exact match of the whole agent; the other
    /// party matches when any of its terms occurs as a run of whole tokens.
    pub fn categorize(&self, agent: &str, party: &Party) -> MembershipCategory {
        if self.us.contains(agent) {
            return MembershipCategory::Us;
        }
        if self.them.contains(agent) {
            return MembershipCategory::Them;
        }
        let tokens: Vec<&str> = agent.split_whitespace().collect();
        let other = party.opponent().and_then(|p| self.party_terms.get(&p));
        let hit = other.is_some_and(|terms| {
            terms.iter().any(|term| {
                tokens
                    .windows(term.len())
                    .any(|w| w.iter().zip(term).all(|(a, b)| *a == b))
            })
        });
        if hit {
            MembershipCategory::OtherParty
        } else {
            MembershipCategory::Other
        }
    }
}

impl Default for MembershipLists {
    fn default() -> Self {
        MembershipLists::new::<&str>(&DEFAULT_US_TERMS, &DEFAULT_THEM_TERMS, &[], &[])
    }
}

pub fn categorize_memberships<'t>(
    triples: &'t [RoleTriple],
    lists: &MembershipLists,
) -> Vec<(&'t RoleTriple, MembershipCategory)> {
    triples
        .iter()
        .map(|t| (t, lists.categorize(&t.agent, &t.party)))
        .collect()
}

/// Per-party count of each category; every category is present.
pub fn category_counts(tagged: &[(&RoleTriple, MembershipCategory)]) -> BTreeMap<(Party, MembershipCategory), u64> {
    let mut counts = BTreeMap::new();
    let parties: BTreeSet<&Party> = tagged.iter().map(|(t, _)| &t.party).collect();
    for p in parties {
        for c in MembershipCategory::ALL {
            counts.insert((p.clone(), c), 0);
        }
    }
    for (t, c) in tagged {
        *counts.entry((t.party.clone(), *c)).or_insert(0) += 1;
    }
    counts
}

/// Normalization used before merging similar patients: leading articles
/// are dropped, then `merge` maps the result to a canonical form. A
/// mapping to the empty string removes the patient.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PatientMerge {
    pub merge: BTreeMap<String, String>,
}

impl PatientMerge {
    pub fn apply(&self, patient: &str) -> Option<String> {
        let mut words: Vec<&str> = patient.split_whitespace().collect();
        while words.len() > 1 && ARTICLES.contains(&words[0]) {
            words.remove(0);
        }
        let stripped = words.join(" ");
        let merged = self.merge.get(&stripped).cloned().unwrap_or(stripped);
        (!merged.is_empty()).then_some(merged)
    }
}

/// Top `n` merged patients per party among triples whose verb is in
/// `verbs` and whose agent falls in `category`.
pub fn patients_for_verbset(
    tagged: &[(&RoleTriple, MembershipCategory)],
    verbs: &BTreeSet<String>,
    category: MembershipCategory,
    merge: &PatientMerge,
    n: usize,
) -> BTreeMap<Party, Vec<(String, u64)>> {
    let mut per_party: BTreeMap<Party, Vec<String>> = BTreeMap::new();
    for (t, c) in tagged {
        if *c != category || !verbs.contains(&t.verb_lemma) {
            continue;
        }
        if let Some(p) = merge.apply(&t.patient) {
            per_party.entry(t.party.clone()).or_default().push(p);
        }
    }
    per_party
        .into_iter()
        .map(|(party, ps)| (party, top_counts(ps.iter().map(String::as_str), n)))
        .collect()
}

/// A named set of verb lemmas, e.g. `help` = {help, save, protect}.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerbSet {
    pub name: String,
    pub verbs: BTreeSet<String>,
}

/// One edge of a relationship diagram: agents of `category` act on `patient`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Relationship {
    pub category: MembershipCategory,
    pub verb_set: String,
    pub patient: String,
    pub party: Party,
    pub weight: u64,
}

/// Edges for every verb set and for the US and THEM categories.
pub fn relationships(
    tagged: &[(&RoleTriple, MembershipCategory)],
    sets: &[VerbSet],
    merge: &PatientMerge,
    n: usize,
) -> Vec<Relationship> {
    let mut out = Vec::new();
    for set in sets {
        for category in [MembershipCategory::Us, MembershipCategory::Them] {
            for (party, patients) in patients_for_verbset(tagged, &set.verbs, category, merge, n) {
                for (patient, weight) in patients {
                    out.push(Relationship {
                        category,
                        verb_set: set.name.clone(),
                        patient,
                        party: party.clone(),
                        weight,
                    });
                }
            }
        }
    }
    out
}

pub fn write_relationships_tsv<W: Write>(mut out: W, rels: &[Relationship]) -> io::Result<()> {
    writeln!(out, "agent\tverb_set\tpatient\tparty\tweight")?;
    for r in rels {
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}",
            r.category, r.verb_set, r.patient, r.party, r.weight
        )?;
    }
    Ok(())
}

pub fn write_combinations_tsv<W: Write>(
    mut out: W,
    diff: &DifferentialCombinations,
    label_a: &str,
    label_b: &str,
) -> io::Result<()> {
    writeln!(
        out,
        "direction\trank\tagent\tverb\tpatient\tcount_{label_a}\tcount_{label_b}\tdifference"
    )?;
    let sides = [
        (format!("{label_a}>{label_b}"), &diff.a_over_b),
        (format!("{label_b}>{label_a}"), &diff.b_over_a),
    ];
    for (direction, rows) in sides {
        for (i, r) in rows.iter().enumerate() {
            let c = &r.combination;
            writeln!(
                out,
                "{direction}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                i + 1,
                c.agent,
                c.verb,
                c.patient,
                r.count_a,
                r.count_b,
                r.difference()
            )?;
        }
    }
    Ok(())
}

/// Writes `party rank <column> count` rows.
pub fn write_ranked_tsv<W: Write>(
    mut out: W,
    column: &str,
    per_party: &[(Party, Vec<(String, u64)>)],
) -> io::Result<()> {
    writeln!(out, "party\trank\t{column}\tcount")?;
    for (party, rows) in per_party {
        for (i, (s, c)) in rows.iter().enumerate() {
            writeln!(out, "{party}\t{}\t{s}\t{c}", i + 1)?;
        }
    }
    Ok(())
}

pub fn write_memberships_tsv<W: Write>(
    mut out: W,
    counts: &BTreeMap<(Party, MembershipCategory), u64>,
) -> io::Result<()> {
    writeln!(out, "party\tcategory\tcount")?;
    for ((party, category), n) in counts {
        writeln!(out, "{party}\t{category}\t{n}")?;
    }
    Ok(())
}
