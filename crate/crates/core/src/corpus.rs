//! Tweet ingestion, tokenization and corpus partitioning.
//!
//! Archived tweets arrive as line-delimited JSON. Each record becomes a
//! [`Document`] whose text is tokenized on load; documents are grouped into
//! immutable [`CorpusPartition`]s that cache the term statistics every
//! downstream analysis needs.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::sync::LazyLock;

use chrono::{DateTime, Utc};
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Token every topic-keyword-bearing token is rewritten to.
pub const TOPIC_TOKEN: &str = "covid";

/// Default topic keywords.
pub const DEFAULT_TOPIC_KEYWORDS: [&str; 2] = ["covid", "coronavirus"];

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: no valid English records ({malformed} malformed, {non_english} non-English)")]
    NoRecords {
        path: PathBuf,
        malformed: usize,
        non_english: usize,
    },
    #[error("topic keyword set is empty")]
    EmptyKeywords,
    #[error("duplicate document id {0:?}")]
    DuplicateId(String),
}

/// Party affiliation of a tweet's author.
///
/// Only `D` and `R` take part in the analyses; anything else is kept at
/// ingestion time so it can be reported, then dropped by
/// [`partition_by_party`].
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Party {
    D,
    R,
    Other(String),
}

impl Party {
    pub fn as_str(&self) -> &str {
        match self {
            Party::D => "D",
            Party::R => "R",
            Party::Other(s) => s,
        }
    }

    /// The opposing major party, if this is one.
    pub fn opponent(&self) -> Option<Party> {
        match self {
            Party::D => Some(Party::R),
            Party::R => Some(Party::D),
            Party::Other(_) => None,
        }
    }
}

impl From<&str> for Party {
    fn from(s: &str) -> Self {
        match s {
            "D" => Party::D,
            "R" => Party::R,
            other => Party::Other(other.to_string()),
        }
    }
}

impl fmt::Display for Party {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for Party {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Party {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(Party::from(s.as_str()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Chamber {
    Senate,
    House,
    Governor,
    President,
    #[serde(other)]
    Other,
}

/// One tweet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub author: String,
    pub party: Party,
    pub chamber: Chamber,
    pub timestamp: DateTime<Utc>,
    pub lang: String,
    pub text: String,
    pub is_retweet: bool,
    #[serde(default, skip_serializing)]
    pub tokens: Vec<String>,
}

impl Document {
    /// Builds a document and tokenizes its text.
    pub fn new(id: impl Into<String>, party: Party, text: impl Into<String>) -> Self {
        let text = text.into();
        Document {
            id: id.into(),
            author: String::new(),
            party,
            chamber: Chamber::Other,
            timestamp: DateTime::<Utc>::UNIX_EPOCH,
            lang: "en".to_string(),
            tokens: tokenize(&text),
            text,
            is_retweet: false,
        }
    }
}

/// A named bag of documents with cached term statistics.
///
/// Partitions are immutable once built; `term_counts` and `total_tokens`
/// always agree with the documents' token lists.
#[derive(Debug, Clone)]
pub struct CorpusPartition {
    name: String,
    docs: Vec<Document>,
    term_counts: BTreeMap<String, u64>,
    total_tokens: u64,
}

impl CorpusPartition {
    pub fn new(name: impl Into<String>, docs: Vec<Document>) -> Self {
        let mut term_counts = BTreeMap::new();
        let mut total_tokens = 0u64;
        for doc in &docs {
            for tok in &doc.tokens {
                *term_counts.entry(tok.clone()).or_insert(0) += 1;
                total_tokens += 1;
            }
        }
        CorpusPartition {
            name: name.into(),
            docs,
            term_counts,
            total_tokens,
        }
    }

    /// Like [`CorpusPartition::new`] but rejects duplicate document ids.
    pub fn try_new(name: impl Into<String>, docs: Vec<Document>) -> Result<Self, CorpusError> {
        let mut seen = HashSet::with_capacity(docs.len());
        for doc in &docs {
            if !seen.insert(doc.id.as_str()) {
                return Err(CorpusError::DuplicateId(doc.id.clone()));
            }
        }
        Ok(Self::new(name, docs))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn docs(&self) -> &[Document] {
        &self.docs
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn term_counts(&self) -> &BTreeMap<String, u64> {
        &self.term_counts
    }

    /// Occurrences of `token` in this partition (0 when absent).
    pub fn count(&self, token: &str) -> u64 {
        self.term_counts.get(token).copied().unwrap_or(0)
    }

    pub fn total_tokens(&self) -> u64 {
        self.total_tokens
    }

    pub fn into_docs(self) -> Vec<Document> {
        self.docs
    }

    /// Rebuilds the partition after rewriting every document's tokens.
    pub fn map_tokens<F>(self, mut f: F) -> Self
    where
        F: FnMut(Vec<String>) -> Vec<String>,
    {
        let name = self.name;
        let docs = self
            .docs
            .into_iter()
            .map(|mut d| {
                d.tokens = f(std::mem::take(&mut d.tokens));
                d
            })
            .collect();
        Self::new(name, docs)
    }

    /// Concatenates partitions under a new name.
    pub fn union<'a, I>(name: impl Into<String>, parts: I) -> Self
    where
        I: IntoIterator<Item = &'a CorpusPartition>,
    {
        let docs = parts.into_iter().flat_map(|p| p.docs.iter().cloned()).collect();
        Self::new(name, docs)
    }
}

/// Counts reported by [`ingest_tweets`] next to the partition itself.
#[derive(Debug, Clone)]
pub struct Ingested {
    pub corpus: CorpusPartition,
    /// Lines that were not valid JSON or lacked a required field.
    pub malformed: usize,
    /// Well-formed records whose `lang` tag does not start with `en`.
    pub non_english: usize,
    /// Records dropped because their id was already seen.
    pub duplicates: usize,
}

/// Reads a line-delimited JSON tweet archive.
///
/// Only records whose `lang` tag begins with `en` are kept. Malformed lines
/// are skipped and counted; the first occurrence of an id wins.
pub fn ingest_tweets(path: impl AsRef<Path>) -> Result<Ingested, CorpusError> {
    let path = path.as_ref();
    let io_err = |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::open(path).map_err(io_err)?;
    let reader = BufReader::new(file);

    let mut docs = Vec::new();
    let mut seen = HashSet::new();
    let (mut malformed, mut non_english, mut duplicates) = (0, 0, 0);
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let mut doc: Document = match serde_json::from_str(&line) {
            Ok(doc) => doc,
            Err(e) => {
                log::warn!("{}:{}: skipping record: {e}", path.display(), lineno + 1);
                malformed += 1;
                continue;
            }
        };
        if doc.id.is_empty() {
            malformed += 1;
            continue;
        }
        if !doc.lang.to_ascii_lowercase().starts_with("en") {
            non_english += 1;
            continue;
        }
        if !seen.insert(doc.id.clone()) {
            duplicates += 1;
            continue;
        }
        doc.tokens = tokenize(&doc.text);
        docs.push(doc);
    }
    if malformed > 0 {
        log::warn!("{}: skipped {malformed} malformed records", path.display());
    }
    if docs.is_empty() {
        return Err(CorpusError::NoRecords {
            path: path.to_path_buf(),
            malformed,
            non_english,
        });
    }
    Ok(Ingested {
        corpus: CorpusPartition::new("all", docs),
        malformed,
        non_english,
        duplicates,
    })
}

static URL: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)(?:https?://|www\.)\S*").unwrap());
// Pictographs plus the joiners and selectors that glue emoji sequences together.
static EMOJI: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"[0-9#*]\u{FE0F}?\u{20E3}|[\p{Extended_Pictographic}\p{Regional_Indicator}\u{FE0E}\u{FE0F}\u{20E3}\u{200D}\u{1F3FB}-\u{1F3FF}]")
        .unwrap()
});
static WORD: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"[#@]?[\p{Alphabetic}\p{M}\p{Nd}_]+(?:['’\-][\p{Alphabetic}\p{M}\p{Nd}_]+)*").unwrap()
});

/// Splits tweet text into lowercase tokens.
///
/// URLs and emoji are dropped, `#hashtags` and `@mentions` stay whole, and
/// hyphens or apostrophes survive only between word characters
/// (`covid-19`, `don't`). Everything else that is not a letter, mark, digit
/// or underscore separates tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let lowered = text.to_lowercase();
    let no_urls = URL.replace_all(&lowered, " ");
    let cleaned = EMOJI.replace_all(&no_urls, " ");
    WORD.find_iter(&cleaned).map(|m| m.as_str().to_string()).collect()
}

/// A nonempty, lowercased set of topic keywords.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopicKeywords(BTreeSet<String>);

impl TopicKeywords {
    pub fn new<I, S>(keywords: I) -> Result<Self, CorpusError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let set: BTreeSet<String> = keywords
            .into_iter()
            .map(|k| k.as_ref().trim().to_lowercase())
            .filter(|k| !k.is_empty())
            .collect();
        if set.is_empty() {
            return Err(CorpusError::EmptyKeywords);
        }
        Ok(TopicKeywords(set))
    }

    /// True when `text` contains any keyword, ignoring case.
    pub fn matches(&self, text: &str) -> bool {
        let lowered = text.to_lowercase();
        self.0.iter().any(|k| lowered.contains(k.as_str()))
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }
}

impl Default for TopicKeywords {
    fn default() -> Self {
        Self::new(DEFAULT_TOPIC_KEYWORDS).unwrap()
    }
}

/// Replaces every token that contains a topic keyword with [`TOPIC_TOKEN`].
pub fn normalize_topic_tokens(tokens: Vec<String>, keywords: &TopicKeywords) -> Vec<String> {
    tokens
        .into_iter()
        .map(|t| {
            if keywords.matches(&t) {
                TOPIC_TOKEN.to_string()
            } else {
                t
            }
        })
        .collect()
}

/// Splits a corpus into (topical, background) by raw-text keyword match.
pub fn filter_topic(corpus: &CorpusPartition, keywords: &TopicKeywords) -> (CorpusPartition, CorpusPartition) {
    let (topical, background): (Vec<_>, Vec<_>) =
        corpus.docs().iter().cloned().partition(|d| keywords.matches(&d.text));
    (
        CorpusPartition::new(format!("{}-topical", corpus.name()), topical),
        CorpusPartition::new(format!("{}-background", corpus.name()), background),
    )
}

/// The two per-party partitions of a corpus.
#[derive(Debug, Clone)]
pub struct PartySplit {
    pub democrat: CorpusPartition,
    pub republican: CorpusPartition,
    /// Documents carrying any other party tag.
    pub excluded: usize,
}

impl PartySplit {
    pub fn get(&self, party: &Party) -> Option<&CorpusPartition> {
        match party {
            Party::D => Some(&self.democrat),
            Party::R => Some(&self.republican),
            Party::Other(_) => None,
        }
    }
}

/// Splits a corpus by party. Documents outside {D, R} are dropped with a warning.
pub fn partition_by_party(corpus: &CorpusPartition) -> PartySplit {
    let mut d = Vec::new();
    let mut r = Vec::new();
    let mut excluded = 0;
    for doc in corpus.docs() {
        match doc.party {
            Party::D => d.push(doc.clone()),
            Party::R => r.push(doc.clone()),
            Party::Other(ref p) => {
                log::warn!("document {} has party {p:?}; excluded", doc.id);
                excluded += 1;
            }
        }
    }
    PartySplit {
        democrat: CorpusPartition::new(format!("{}-D", corpus.name()), d),
        republican: CorpusPartition::new(format!("{}-R", corpus.name()), r),
        excluded,
    }
}
