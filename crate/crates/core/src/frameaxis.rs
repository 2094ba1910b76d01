//! Microframe scoring: document bias and intensity along antonym axes.
//!
//! A microframe is an antonym pair such as `public`/`private`; its axis is
//! the difference of the two pole vectors. Each word contributes the cosine
//! between its vector and the axis. A document's *bias* is the
//! count-weighted mean contribution of its words, and its *intensity* is the
//! count-weighted second moment of contributions around the baseline bias
//! of a background corpus.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::corpus::{CorpusPartition, Document};
use crate::embedding::{dot, norm, EmbeddingModel};

/// Frames listed per direction in a differential comparison.
pub const DEFAULT_TOP_FRAMES: usize = 10;
/// Highest-intensity documents shown per frame.
pub const DEFAULT_TOP_DOCUMENTS: usize = 3;

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("no usable antonym pairs ({oov} with out-of-vocabulary poles, {invalid} invalid lines)")]
    NoFrames { oov: usize, invalid: usize },
    #[error("pole {0:?} is not in the embedding vocabulary")]
    OutOfVocabulary(String),
    #[error("microframe poles must differ, got {0:?} twice")]
    SamePoles(String),
    #[error("zero-norm vector")]
    ZeroNorm,
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("no in-vocabulary tokens to score microframe {0}")]
    NoVocabularyTokens(String),
}

/// An antonym pair and its semantic axis `vector(pole_pos) - vector(pole_neg)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Microframe {
    pub pole_neg: String,
    pub pole_pos: String,
    axis: Vec<f64>,
    axis_norm: f64,
}

impl Microframe {
    pub fn new(model: &EmbeddingModel, pole_neg: &str, pole_pos: &str) -> Result<Self, FrameError> {
        if pole_neg == pole_pos {
            return Err(FrameError::SamePoles(pole_neg.to_string()));
        }
        let neg = model
            .vector(pole_neg)
            .ok_or_else(|| FrameError::OutOfVocabulary(pole_neg.to_string()))?;
        let pos = model
            .vector(pole_pos)
            .ok_or_else(|| FrameError::OutOfVocabulary(pole_pos.to_string()))?;
        let axis: Vec<f64> = pos.iter().zip(neg).map(|(p, n)| p - n).collect();
        Self::from_axis(pole_neg, pole_pos, axis)
    }

    pub fn from_axis(pole_neg: &str, pole_pos: &str, axis: Vec<f64>) -> Result<Self, FrameError> {
        let axis_norm = norm(&axis);
        if axis_norm == 0.0 || !axis_norm.is_finite() {
            return Err(FrameError::ZeroNorm);
        }
        Ok(Microframe {
            pole_neg: pole_neg.to_string(),
            pole_pos: pole_pos.to_string(),
            axis,
            axis_norm,
        })
    }

    /// `pole_neg/pole_pos`
    pub fn id(&self) -> String {
        format!("{}/{}", self.pole_neg, self.pole_pos)
    }

    pub fn axis(&self) -> &[f64] {
        &self.axis
    }

    /// The same pair with its poles exchanged; every contribution flips sign.
    pub fn swapped(&self) -> Self {
        Microframe {
            pole_neg: self.pole_pos.clone(),
            pole_pos: self.pole_neg.clone(),
            axis: self.axis.iter().map(|x| -x).collect(),
            axis_norm: self.axis_norm,
        }
    }

    fn contribution_unchecked(&self, v: &[f64], v_norm: f64) -> f64 {
        (dot(v, &self.axis) / (v_norm * self.axis_norm)).clamp(-1.0, 1.0)
    }
}

/// Cosine between a word vector and a frame axis, clamped to [-1, 1].
pub fn word_contribution(v: &[f64], axis: &[f64]) -> Result<f64, FrameError> {
    if v.len() != axis.len() {
        return Err(FrameError::DimensionMismatch(v.len(), axis.len()));
    }
    let (nv, na) = (norm(v), norm(axis));
    if nv == 0.0 || na == 0.0 {
        return Err(FrameError::ZeroNorm);
    }
    Ok((dot(v, axis) / (nv * na)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone)]
pub struct MicroframeSet {
    pub frames: Vec<Microframe>,
    /// Pairs with at least one pole missing from the model.
    pub skipped_oov: usize,
    /// Lines that were not two distinct tokens, or whose poles share a vector.
    pub skipped_invalid: usize,
}

/// Reads `pole_neg<TAB>pole_pos` lines and keeps pairs with both poles in
/// the model's vocabulary.
pub fn load_microframes(path: impl AsRef<Path>, model: &EmbeddingModel) -> Result<MicroframeSet, FrameError> {
    let path = path.as_ref();
    let io_err = |source| FrameError::Io {
        path: path.to_path_buf(),
        source,
    };
    let reader = BufReader::new(File::open(path).map_err(io_err)?);
    let mut frames = Vec::new();
    let (mut skipped_oov, mut skipped_invalid) = (0, 0);
    for line in reader.lines() {
        let line = line.map_err(io_err)?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
        let [neg, pos] = fields[..] else {
            skipped_invalid += 1;
            continue;
        };
        let (neg, pos) = (neg.to_lowercase(), pos.to_lowercase());
        match Microframe::new(model, &neg, &pos) {
            Ok(f) => frames.push(f),
            Err(FrameError::OutOfVocabulary(_)) => skipped_oov += 1,
            Err(_) => skipped_invalid += 1,
        }
    }
    if skipped_oov + skipped_invalid > 0 {
        log::info!(
            "{}: kept {} microframes, skipped {skipped_oov} out-of-vocabulary and {skipped_invalid} invalid pairs",
            path.display(),
            frames.len()
        );
    }
    if frames.is_empty() {
        return Err(FrameError::NoFrames {
            oov: skipped_oov,
            invalid: skipped_invalid,
        });
    }
    Ok(MicroframeSet {
        frames,
        skipped_oov,
        skipped_invalid,
    })
}

/// Corpus-level mean contribution used as the intensity baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineBias {
    pub frame: String,
    pub value: f64,
}

impl BaselineBias {
    pub fn negated(&self) -> Self {
        BaselineBias {
            frame: self.frame.clone(),
            value: -self.value,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameScore {
    pub doc_id: String,
    pub frame: String,
    pub bias: f64,
    pub intensity: f64,
}

/// Function words dropped from contribution sums by default.
pub const ENGLISH_STOPWORDS: &[&str] = &[
    "a",
    "about",
    "above",
    "after",
    "again",
    "against",
    "all",
    "am",
    "an",
    "and",
    "any",
    "are",
    "as",
    "at",
    "be",
    "because",
    "been",
    "before",
    "being",
    "below",
    "between",
    "both",
    "but",
    "by",
    "can",
    "could",
    "did",
    "do",
    "does",
    "doing",
    "down",
    "during",
    "each",
    "few",
    "for",
    "from",
    "further",
    "had",
    "has",
    "have",
    "having",
    "he",
    "her",
    "here",
    "hers",
    "herself",
    "him",
    "himself",
    "his",
    "how",
    "i",
    "if",
    "in",
    "into",
    "is",
    "it",
    "it's",
    "its",
    "itself",
    "just",
    "me",
    "more",
    "most",
    "my",
    "myself",
    "no",
    "nor",
    "not",
    "now",
    "of",
    "off",
    "on",
    "once",
    "only",
    "or",
    "other",
    "our",
    "ours",
    "ourselves",
    "out",
    "over",
    "own",
    "rt",
    "same",
    "she",
    "should",
    "so",
    "some",
    "such",
    "than",
    "that",
    "the",
    "their",
    "theirs",
    "them",
    "themselves",
    "then",
    "there",
    "these",
    "they",
    "this",
    "those",
    "through",
    "to",
    "too",
    "under",
    "until",
    "up",
    "very",
    "was",
    "we",
    "were",
    "what",
    "when",
    "where",
    "which",
    "while",
    "who",
    "whom",
    "why",
    "will",
    "with",
    "would",
    "you",
    "your",
    "yours",
    "yourself",
    "yourselves",
];

/// A document reduced to (model row, count) pairs in token order.
struct Bag<'m> {
    words: Vec<(&'m [f64], f64, u64)>,
}

/// Scores documents against microframes with one embedding model.
#[derive(Debug, Clone)]
pub struct FrameScorer<'m> {
    model: &'m EmbeddingModel,
    stopwords: HashSet<String>,
}

impl<'m> FrameScorer<'m> {
    /// A scorer that ignores [`ENGLISH_STOPWORDS`].
    pub fn new(model: &'m EmbeddingModel) -> Self {
        Self::with_stopwords(model, ENGLISH_STOPWORDS.iter().map(|s| s.to_string()))
    }

    pub fn with_stopwords<I: IntoIterator<Item = String>>(model: &'m EmbeddingModel, stopwords: I) -> Self {
        FrameScorer {
            model,
            stopwords: stopwords.into_iter().collect(),
        }
    }

    pub fn without_stopwords(model: &'m EmbeddingModel) -> Self {
        Self::with_stopwords(model, std::iter::empty())
    }

    pub fn model(&self) -> &'m EmbeddingModel {
        self.model
    }

    /// Scorable words of `tokens` with their counts. Stop words, unknown
    /// tokens and zero vectors are left out; iteration order is by token so
    /// results never depend on word order.
    fn bag<'t, I>(&self, tokens: I) -> Bag<'m>
    where
        I: IntoIterator<Item = &'t String>,
    {
        let mut counts: BTreeMap<&'t str, u64> = BTreeMap::new();
        for t in tokens {
            if !self.stopwords.contains(t) {
                *counts.entry(t.as_str()).or_insert(0) += 1;
            }
        }
        let words = counts
            .into_iter()
            .filter_map(|(t, n)| {
                let v = self.model.vector(t)?;
                let vn = norm(v);
                (vn > 0.0).then_some((v, vn, n))
            })
            .collect();
        Bag { words }
    }

    /// (bias, intensity) of one bag; `None` if the bag is empty.
    fn moments(&self, bag: &Bag<'_>, frame: &Microframe, baseline: Option<f64>) -> Option<(f64, f64)> {
        let total: u64 = bag.words.iter().map(|w| w.2).sum();
        if total == 0 {
            return None;
        }
        let (mut first, mut second) = (0.0, 0.0);
        for &(v, vn, n) in &bag.words {
            let c = frame.contribution_unchecked(v, vn);
            first += n as f64 * c;
            if let Some(b) = baseline {
                second += n as f64 * (c - b) * (c - b);
            }
        }
        Some((first / total as f64, second / total as f64))
    }

    /// Count-weighted mean contribution of the document's words, or `None`
    /// when none of them can be scored.
    pub fn document_bias(&self, doc: &Document, frame: &Microframe) -> Option<f64> {
        self.moments(&self.bag(&doc.tokens), frame, None).map(|m| m.0)
    }

    /// Count-weighted second moment of contributions around `baseline`.
    pub fn document_intensity(&self, doc: &Document, frame: &Microframe, baseline: &BaselineBias) -> Option<f64> {
        self.moments(&self.bag(&doc.tokens), frame, Some(baseline.value))
            .map(|m| m.1)
    }

    pub fn score(&self, doc: &Document, frame: &Microframe, baseline: &BaselineBias) -> Option<FrameScore> {
        let (bias, intensity) = self.moments(&self.bag(&doc.tokens), frame, Some(baseline.value))?;
        Some(FrameScore {
            doc_id: doc.id.clone(),
            frame: frame.id(),
            bias,
            intensity,
        })
    }

    /// Mean contribution over every scorable token of `background`.
    pub fn baseline_bias(&self, background: &CorpusPartition, frame: &Microframe) -> Result<BaselineBias, FrameError> {
        let bag = self.bag(background.docs().iter().flat_map(|d| &d.tokens));
        let (value, _) = self
            .moments(&bag, frame, None)
            .ok_or_else(|| FrameError::NoVocabularyTokens(frame.id()))?;
        Ok(BaselineBias {
            frame: frame.id(),
            value,
        })
    }

    /// Baselines for many frames, sharing one pass over the background.
    pub fn baselines(
        &self,
        background: &CorpusPartition,
        frames: &[Microframe],
    ) -> Result<Vec<BaselineBias>, FrameError> {
        let bag = self.bag(background.docs().iter().flat_map(|d| &d.tokens));
        frames
            .par_iter()
            .map(|f| {
                let (value, _) = self
                    .moments(&bag, f, None)
                    .ok_or_else(|| FrameError::NoVocabularyTokens(f.id()))?;
                Ok(BaselineBias { frame: f.id(), value })
            })
            .collect()
    }

    /// Scores of every scorable document in `corpus` for one frame, in
    /// document order.
    pub fn score_corpus(
        &self,
        corpus: &CorpusPartition,
        frame: &Microframe,
        baseline: &BaselineBias,
    ) -> Vec<FrameScore> {
        corpus
            .docs()
            .par_iter()
            .filter_map(|d| self.score(d, frame, baseline))
            .collect()
    }
}

/// Means of one frame over one corpus.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameMeans {
    pub bias: f64,
    pub intensity: f64,
    /// Documents that could be scored; documents with no scorable word are
    /// left out rather than counted as zero.
    pub documents: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameComparison {
    pub frame: String,
    pub pole_neg: String,
    pub pole_pos: String,
    pub a: FrameMeans,
    pub b: FrameMeans,
}

impl FrameComparison {
    /// Mean intensity in A minus mean intensity in B.
    pub fn difference(&self) -> f64 {
        self.a.intensity - self.b.intensity
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameDifferential {
    /// Frames most intensified in A relative to B.
    pub a_over_b: Vec<FrameComparison>,
    /// Frames most intensified in B relative to A.
    pub b_over_a: Vec<FrameComparison>,
}

fn corpus_means(scorer: &FrameScorer<'_>, bags: &[Bag<'_>], frame: &Microframe, baseline: f64) -> Option<FrameMeans> {
    let (mut bias, mut intensity, mut documents) = (0.0, 0.0, 0);
    for bag in bags {
        if let Some((b, i)) = scorer.moments(bag, frame, Some(baseline)) {
            bias += b;
            intensity += i;
            documents += 1;
        }
    }
    (documents > 0).then(|| FrameMeans {
        bias: bias / documents as f64,
        intensity: intensity / documents as f64,
        documents,
    })
}

/// Ranks frames by the difference in mean document intensity between two
/// corpora, weighting documents equally.
///
/// `baselines[i]` belongs to `frames[i]`. Frames that cannot be scored in
/// one of the corpora are skipped. Ties are ordered by frame id.
pub fn differential_microframes(
    scorer: &FrameScorer<'_>,
    corpus_a: &CorpusPartition,
    corpus_b: &CorpusPartition,
    frames: &[Microframe],
    baselines: &[BaselineBias],
    k: usize,
) -> FrameDifferential {
    assert_eq!(frames.len(), baselines.len(), "one baseline per frame");
    let bags_a: Vec<Bag<'_>> = corpus_a.docs().iter().map(|d| scorer.bag(&d.tokens)).collect();
    let bags_b: Vec<Bag<'_>> = corpus_b.docs().iter().map(|d| scorer.bag(&d.tokens)).collect();

    let comparisons: Vec<FrameComparison> = frames
        .par_iter()
        .zip(baselines)
        .filter_map(|(f, base)| {
            Some(FrameComparison {
                frame: f.id(),
                pole_neg: f.pole_neg.clone(),
                pole_pos: f.pole_pos.clone(),
                a: corpus_means(scorer, &bags_a, f, base.value)?,
                b: corpus_means(scorer, &bags_b, f, base.value)?,
            })
        })
        .collect();

    let ranked = |sign: f64| {
        let mut v = comparisons.clone();
        v.sort_by(|x, y| {
            (sign * y.difference())
                .total_cmp(&(sign * x.difference()))
                .then_with(|| x.frame.cmp(&y.frame))
        });
        v.truncate(k);
        v
    };
    FrameDifferential {
        a_over_b: ranked(1.0),
        b_over_a: ranked(-1.0),
    }
}

#[derive(Debug, Clone)]
pub struct ScoredDocument<'c> {
    pub doc: &'c Document,
    pub bias: f64,
    pub intensity: f64,
}

/// The `n` documents with the highest intensity for `frame`, ties by id.
pub fn top_documents<'c>(
    scorer: &FrameScorer<'_>,
    corpus: &'c CorpusPartition,
    frame: &Microframe,
    baseline: &BaselineBias,
    n: usize,
) -> Vec<ScoredDocument<'c>> {
    let mut scored: Vec<ScoredDocument<'c>> = corpus
        .docs()
        .par_iter()
        .filter_map(|doc| {
            let s = scorer.score(doc, frame, baseline)?;
            Some(ScoredDocument {
                doc,
                bias: s.bias,
                intensity: s.intensity,
            })
        })
        .collect();
    scored.sort_by(|a, b| {
        b.intensity
            .total_cmp(&a.intensity)
            .then_with(|| a.doc.id.cmp(&b.doc.id))
    });
    scored.truncate(n);
    scored
}

/// `doc_id frame bias intensity`
pub fn write_scores_tsv<W: Write>(mut out: W, scores: &[FrameScore]) -> io::Result<()> {
    writeln!(out, "doc_id\tframe\tbias\tintensity")?;
    for s in scores {
        writeln!(out, "{}\t{}\t{:.6}\t{:.6}", s.doc_id, s.frame, s.bias, s.intensity)?;
    }
    Ok(())
}

/// Writes both directions of a differential comparison. `label_a` and
/// `label_b` name the corpora in the header and `direction` column.
pub fn write_differential_tsv<W: Write>(
    mut out: W,
    diff: &FrameDifferential,
    label_a: &str,
    label_b: &str,
) -> io::Result<()> {
    writeln!(
        out,
        "direction\trank\tframe\tpole_neg\tpole_pos\tbias_{label_a}\tintensity_{label_a}\tbias_{label_b}\tintensity_{label_b}\tdifference"
    )?;
    let dirs = [
        (format!("{label_a}>{label_b}"), &diff.a_over_b),
        (format!("{label_b}>{label_a}"), &diff.b_over_a),
    ];
    for (dir, rows) in dirs {
        for (i, c) in rows.iter().enumerate() {
            writeln!(
                out,
                "{dir}\t{}\t{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
                i + 1,
                c.frame,
                c.pole_neg,
                c.pole_pos,
                c.a.bias,
                c.a.intensity,
                c.b.bias,
                c.b.intensity,
                c.difference()
            )?;
        }
    }
    Ok(())
}
