//! Party-characteristic terms via log-odds ratios with an informative
//! Dirichlet prior, plus dense-rank listing of terms both parties share.
//!
//! For a token `w` with count `f_i` in target corpus `i` (size `n_i`), `f_j`
//! in the comparison corpus `j` and `f_bg` in the background corpus:
//!
//! ```text
//! s = ln((f_i + f_bg) / (n_i + n_bg - f_i + f_bg))
//!   - ln((f_j + f_bg) / (n_j + n_bg - f_j + f_bg))
//! z = s / sqrt(1 / (f_i + f_bg) + 1 / (f_j + f_bg))
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::io::{self, Write};

use thiserror::Error;

use crate::corpus::CorpusPartition;

/// Number of top terms reported per party.
pub const DEFAULT_TOP_TERMS: usize = 40;

#[derive(Debug, Error)]
pub enum LogOddsError {
    #[error("background corpus has no tokens; the prior is undefined")]
    EmptyBackground,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TermScore {
    pub token: String,
    /// Log-odds ratio of the target versus the comparison corpus.
    pub s: f64,
    /// `s` scaled by its estimated standard deviation; `None` until
    /// [`z_scores`] has run.
    pub z: Option<f64>,
    pub f_i: u64,
    pub f_j: u64,
    pub f_bg: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogOddsResult {
    pub n_i: u64,
    pub n_j: u64,
    pub n_bg: u64,
    /// One entry per token, in token order.
    pub scores: Vec<TermScore>,
}

impl LogOddsResult {
    pub fn get(&self, token: &str) -> Option<&TermScore> {
        self.scores
            .binary_search_by(|s| s.token.as_str().cmp(token))
            .ok()
            .map(|i| &self.scores[i])
    }

    /// Writes `token s z f_i f_j f_bg` rows sorted by z descending.
    ///
    /// Rows without a z-score sort last and print an empty z column.
    pub fn write_tsv<W: Write>(&self, out: W) -> io::Result<()> {
        let mut rows: Vec<&TermScore> = self.scores.iter().collect();
        rows.sort_by(|a, b| by_z_desc(a, b));
        write_scores_tsv(out, rows)
    }
}

pub(crate) fn write_scores_tsv<'a, W, I>(mut out: W, rows: I) -> io::Result<()>
where
    W: Write,
    I: IntoIterator<Item = &'a TermScore>,
{
    writeln!(out, "token\ts\tz\tf_i\tf_j\tf_bg")?;
    for r in rows {
        let z = r.z.map(|z| format!("{z:.6}")).unwrap_or_default();
        writeln!(out, "{}\t{:.6}\t{}\t{}\t{}\t{}", r.token, r.s, z, r.f_i, r.f_j, r.f_bg)?;
    }
    Ok(())
}

fn by_z_desc(a: &TermScore, b: &TermScore) -> std::cmp::Ordering {
    let za = a.z.unwrap_or(f64::NEG_INFINITY);
    let zb = b.z.unwrap_or(f64::NEG_INFINITY);
    zb.total_cmp(&za).then_with(|| a.token.cmp(&b.token))
}

/// Log-odds of every token of `target` ∪ `other` against `other`, smoothed
/// by `background` counts.
///
/// Tokens whose smoothed count is zero on either side are left out; the
/// background prior is the only smoothing applied.
pub fn log_odds(
    target: &CorpusPartition,
    other: &CorpusPartition,
    background: &CorpusPartition,
) -> Result<LogOddsResult, LogOddsError> {
    let n_bg = background.total_tokens();
    if n_bg == 0 {
        return Err(LogOddsError::EmptyBackground);
    }
    let n_i = target.total_tokens();
    let n_j = other.total_tokens();

    let vocab: BTreeSet<&str> = target
        .term_counts()
        .keys()
        .chain(other.term_counts().keys())
        .map(String::as_str)
        .collect();

    let scores = vocab
        .into_iter()
        .filter_map(|token| {
            let f_i = target.count(token);
            let f_j = other.count(token);
            let f_bg = background.count(token);
            if f_i + f_bg == 0 || f_j + f_bg == 0 {
                return None;
            }
            let s = smoothed_log_odds(f_i, n_i, f_bg, n_bg) - smoothed_log_odds(f_j, n_j, f_bg, n_bg);
            Some(TermScore {
                token: token.to_string(),
                s,
                z: None,
                f_i,
                f_j,
                f_bg,
            })
        })
        .collect();

    Ok(LogOddsResult { n_i, n_j, n_bg, scores })
}

fn smoothed_log_odds(f: u64, n: u64, f_bg: u64, n_bg: u64) -> f64 {
    let (f, n, f_bg, n_bg) = (f as f64, n as f64, f_bg as f64, n_bg as f64);
    ((f + f_bg) / (n + n_bg - f + f_bg)).ln()
}

/// Fills in the z-score of every entry.
pub fn z_scores(mut result: LogOddsResult) -> LogOddsResult {
    for r in &mut result.scores {
        let var = 1.0 / (r.f_i + r.f_bg) as f64 + 1.0 / (r.f_j + r.f_bg) as f64;
        r.z = Some(r.s / var.sqrt());
    }
    result
}

/// [`log_odds`] followed by [`z_scores`].
pub fn weighted_log_odds(
    target: &CorpusPartition,
    other: &CorpusPartition,
    background: &CorpusPartition,
) -> Result<LogOddsResult, LogOddsError> {
    log_odds(target, other, background).map(z_scores)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopTerms {
    pub terms: Vec<TermScore>,
    /// Fewer than the requested number of tokens were eligible.
    pub short: bool,
}

impl TopTerms {
    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.terms.iter().map(|t| t.token.as_str())
    }

    pub fn write_tsv<W: Write>(&self, out: W) -> io::Result<()> {
        write_scores_tsv(out, &self.terms)
    }
}

/// The `k` highest-z tokens not in `exclusions`, ties broken by token.
///
/// Scores without a z value are ranked as if z were negative infinity.
pub fn top_terms(result: &LogOddsResult, k: usize, exclusions: &BTreeSet<String>) -> TopTerms {
    let mut eligible: Vec<&TermScore> = result
        .scores
        .iter()
        .filter(|s| !exclusions.contains(&s.token))
        .collect();
    eligible.sort_by(|a, b| by_z_desc(a, b));
    let short = eligible.len() < k;
    TopTerms {
        terms: eligible.into_iter().take(k).cloned().collect(),
        short,
    }
}

/// Dense ranks of token frequencies: the most frequent token gets 1, equal
/// counts share a rank and ranks have no gaps.
pub fn dense_ranks(counts: &BTreeMap<String, u64>) -> BTreeMap<&str, usize> {
    let distinct: BTreeSet<u64> = counts.values().copied().filter(|&c| c > 0).collect();
    let rank_of: BTreeMap<u64, usize> = distinct.iter().rev().enumerate().map(|(i, &c)| (c, i + 1)).collect();
    counts
        .iter()
        .filter(|(_, &c)| c > 0)
        .map(|(t, c)| (t.as_str(), rank_of[c]))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SharedTerm {
    pub token: String,
    /// Dense rank of this token in the shared listing.
    pub rank: usize,
    pub rank_i: usize,
    pub rank_j: usize,
    /// Dense rank in the background corpus; `None` when the token is absent there.
    pub rank_bg: Option<usize>,
}

/// Terms that both topical partitions use more than the background does,
/// ranked by the weaker of their two dense frequency ranks.
///
/// A token qualifies when its relative frequency in each topical partition
/// exceeds its relative frequency in `background`. Its sort key is
/// `max(rank_i, rank_j)`, so a term ranks high only when it is frequent in
/// both partitions. The returned `rank` is the dense rank of that key; ties
/// are listed by token. At most `k` terms are returned.
pub fn dense_rank_shared_terms(
    freq_i: &CorpusPartition,
    freq_j: &CorpusPartition,
    background: &CorpusPartition,
    k: usize,
) -> Vec<SharedTerm> {
    let ranks_i = dense_ranks(freq_i.term_counts());
    let ranks_j = dense_ranks(freq_j.term_counts());
    let ranks_bg = dense_ranks(background.term_counts());
    let rel = |p: &CorpusPartition, t: &str| {
        if p.total_tokens() == 0 {
            0.0
        } else {
            p.count(t) as f64 / p.total_tokens() as f64
        }
    };

    let mut keyed: Vec<(usize, &str)> = ranks_i
        .iter()
        .filter_map(|(&t, &ri)| {
            let rj = *ranks_j.get(t)?;
            let bg = rel(background, t);
            (rel(freq_i, t) > bg && rel(freq_j, t) > bg).then_some((ri.max(rj), t))
        })
        .collect();
    keyed.sort();

    let mut out = Vec::with_capacity(k.min(keyed.len()));
    let mut rank = 0;
    let mut last_key = None;
    for (key, token) in keyed.into_iter().take(k) {
        if last_key != Some(key) {
            rank += 1;
            last_key = Some(key);
        }
        out.push(SharedTerm {
            token: token.to_string(),
            rank,
            rank_i: ranks_i[token],
            rank_j: ranks_j[token],
            rank_bg: ranks_bg.get(token).copied(),
        });
    }
    out
}

/// Writes `rank token rank_i rank_j rank_bg` rows.
pub fn write_shared_terms_tsv<W: Write>(mut out: W, terms: &[SharedTerm]) -> io::Result<()> {
    writeln!(out, "rank\ttoken\trank_i\trank_j\trank_bg")?;
    for t in terms {
        let bg = t.rank_bg.map(|r| r.to_string()).unwrap_or_default();
        writeln!(out, "{}\t{}\t{}\t{}\t{}", t.rank, t.token, t.rank_i, t.rank_j, bg)?;
    }
    Ok(())
}
