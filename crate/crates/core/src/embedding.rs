//! Word vectors: co-occurrence counting, GloVe training, the plain-text
//! vector format and cosine nearest-neighbor queries.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::corpus::CorpusPartition;

pub const DEFAULT_DIM: usize = 300;
pub const DEFAULT_EPOCHS: usize = 500;
pub const DEFAULT_WINDOW: usize = 10;
pub const DEFAULT_MIN_COUNT: u64 = 5;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("corpus has no tokens")]
    EmptyCorpus,
    #[error("co-occurrence table is empty")]
    EmptyTable,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("training diverged: non-finite loss in epoch {epoch} (x = {value}, {cause})")]
    NonFinite {
        epoch: usize,
        value: f64,
        cause: &'static str,
    },
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: empty vector file")]
    EmptyFile { path: PathBuf },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("vector for {token:?} has {found} components, expected {expected}")]
    Dimension {
        token: String,
        expected: usize,
        found: usize,
    },
    #[error("vector for {0:?} has non-finite components")]
    NonFiniteVector(String),
    #[error("duplicate token {0:?}")]
    DuplicateToken(String),
    #[error("embedding model needs at least one token")]
    EmptyModel,
    #[error("token {0:?} is not in the vocabulary")]
    OutOfVocabulary(String),
    #[error("none of the seeds {0:?} is in the vocabulary")]
    NoSeedInVocabulary(Vec<String>),
}

/// One nonzero cell of the co-occurrence matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cooccurrence {
    pub row: u32,
    pub col: u32,
    pub value: f64,
}

/// Sparse symmetric co-occurrence counts weighted by inverse distance.
#[derive(Debug, Clone)]
pub struct CooccurrenceTable {
    vocab: Vec<String>,
    index: HashMap<String, u32>,
    entries: Vec<Cooccurrence>,
}

impl CooccurrenceTable {
    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn index_of(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    /// Nonzero cells sorted by (row, col). Both (a, b) and (b, a) are stored.
    pub fn entries(&self) -> &[Cooccurrence] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Weighted count for the ordered pair (a, b); zero when absent.
    pub fn get(&self, a: &str, b: &str) -> f64 {
        let (Some(r), Some(c)) = (self.index_of(a), self.index_of(b)) else {
            return 0.0;
        };
        self.entries
            .binary_search_by(|e| (e.row, e.col).cmp(&(r, c)))
            .map(|i| self.entries[i].value)
            .unwrap_or(0.0)
    }
}

/// Counts co-occurrences within `window` tokens, weighting each pair by
/// `1 / distance`.
///
/// Tokens seen fewer than `min_count` times in the corpus are removed
/// before windowing, so distances are measured on the filtered sequence.
/// Windows never cross document boundaries. Every pair of positions is
/// counted in both directions, which keeps the table symmetric.
pub fn build_cooccurrence(
    corpus: &CorpusPartition,
    window: usize,
    min_count: u64,
) -> Result<CooccurrenceTable, EmbeddingError> {
    if corpus.total_tokens() == 0 {
        return Err(EmbeddingError::EmptyCorpus);
    }
    if window == 0 {
        return Err(EmbeddingError::InvalidParameter("window must be positive".into()));
    }
    let vocab: Vec<String> = corpus
        .term_counts()
        .iter()
        .filter(|(_, &n)| n >= min_count)
        .map(|(t, _)| t.clone())
        .collect();
    let index: HashMap<String, u32> = vocab.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();

    let mut cells: HashMap<(u32, u32), f64> = HashMap::new();
    let mut ids = Vec::new();
    for doc in corpus.docs() {
        ids.clear();
        ids.extend(doc.tokens.iter().filter_map(|t| index.get(t).copied()));
        for (pos, &center) in ids.iter().enumerate() {
            for dist in 1..=window.min(pos) {
                let ctx = ids[pos - dist];
                let w = 1.0 / dist as f64;
                *cells.entry((ctx, center)).or_insert(0.0) += w;
                *cells.entry((center, ctx)).or_insert(0.0) += w;
            }
        }
    }

    let mut entries: Vec<Cooccurrence> = cells
        .into_iter()
        .map(|((row, col), value)| Cooccurrence { row, col, value })
        .collect();
    entries.sort_by_key(|e| (e.row, e.col));
    Ok(CooccurrenceTable { vocab, index, entries })
}

/// GloVe hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GloveParams {
    pub dim: usize,
    pub epochs: usize,
    pub x_max: f64,
    pub alpha: f64,
    pub learning_rate: f64,
    pub seed: u64,
    /// Worker threads. Results are reproducible only with a single worker.
    pub workers: usize,
}

impl Default for GloveParams {
    fn default() -> Self {
        GloveParams {
            dim: DEFAULT_DIM,
            epochs: DEFAULT_EPOCHS,
            x_max: 100.0,
            alpha: 0.75,
            learning_rate: 0.05,
            seed: 1,
            workers: 1,
        }
    }
}

impl GloveParams {
    /// Weighting function `(x / x_max)^alpha`, capped at 1.
    pub fn weight(&self, x: f64) -> f64 {
        if x < self.x_max {
            (x / self.x_max).powf(self.alpha)
        } else {
            1.0
        }
    }
}

/// Trained GloVe parameters: word vectors, context vectors and both bias terms.
#[derive(Debug, Clone, PartialEq)]
pub struct GloveParameters {
    pub dim: usize,
    pub vocab: Vec<String>,
    /// Row-major `vocab.len() × dim`.
    pub word: Vec<f64>,
    /// Row-major `vocab.len() × dim`.
    pub context: Vec<f64>,
    pub word_bias: Vec<f64>,
    pub context_bias: Vec<f64>,
}

impl GloveParameters {
    pub fn word_vector(&self, i: usize) -> &[f64] {
        &self.word[i * self.dim..(i + 1) * self.dim]
    }

    pub fn context_vector(&self, i: usize) -> &[f64] {
        &self.context[i * self.dim..(i + 1) * self.dim]
    }

    /// The final embedding: word plus context vector for each token.
    pub fn to_embedding(&self) -> Result<EmbeddingModel, EmbeddingError> {
        let rows = self
            .vocab
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let v = self
                    .word_vector(i)
                    .iter()
                    .zip(self.context_vector(i))
                    .map(|(w, c)| w + c)
                    .collect();
                (t.clone(), v)
            })
            .collect();
        EmbeddingModel::new(self.dim, rows)
    }
}

#[derive(Debug, Clone)]
pub struct GloveTraining {
    pub parameters: GloveParameters,
    /// Weighted squared error accumulated during each epoch's pass.
    pub epoch_losses: Vec<f64>,
}

impl GloveTraining {
    pub fn embedding(&self) -> Result<EmbeddingModel, EmbeddingError> {
        self.parameters.to_embedding()
    }
}

/// Parameter storage shared between workers. Relaxed atomics give
/// lock-free, unsynchronized updates; a single worker sees plain
/// sequential semantics.
struct SharedParams(Box<[AtomicU64]>);

impl SharedParams {
    fn new(values: impl IntoIterator<Item = f64>) -> Self {
        SharedParams(values.into_iter().map(|v| AtomicU64::new(v.to_bits())).collect())
    }

    #[inline]
    fn get(&self, i: usize) -> f64 {
        f64::from_bits(self.0[i].load(Ordering::Relaxed))
    }

    #[inline]
    fn set(&self, i: usize, v: f64) {
        self.0[i].store(v.to_bits(), Ordering::Relaxed)
    }

    fn snapshot(&self, range: std::ops::Range<usize>) -> Vec<f64> {
        range.map(|i| self.get(i)).collect()
    }
}

/// Layout: word rows, then context rows, each `dim + 1` wide with the bias last.
struct GloveState {
    dim: usize,
    vocab_len: usize,
    params: SharedParams,
    gradsq: SharedParams,
}

impl GloveState {
    fn word_row(&self, i: u32) -> usize {
        i as usize * (self.dim + 1)
    }

    fn context_row(&self, j: u32) -> usize {
        (self.vocab_len + j as usize) * (self.dim + 1)
    }

    fn snapshot(&self, vocab: &[String]) -> GloveParameters {
        let d = self.dim;
        let mut out = GloveParameters {
            dim: d,
            vocab: vocab.to_vec(),
            word: Vec::with_capacity(self.vocab_len * d),
            context: Vec::with_capacity(self.vocab_len * d),
            word_bias: Vec::with_capacity(self.vocab_len),
            context_bias: Vec::with_capacity(self.vocab_len),
        };
        for i in 0..self.vocab_len as u32 {
            let w = self.word_row(i);
            out.word.extend(self.params.snapshot(w..w + d));
            out.word_bias.push(self.params.get(w + d));
            let c = self.context_row(i);
            out.context.extend(self.params.snapshot(c..c + d));
            out.context_bias.push(self.params.get(c + d));
        }
        out
    }

    /// One AdaGrad step on a single cell; returns its weighted squared error.
    fn update(&self, cell: &Cooccurrence, hp: &GloveParams, scratch: &mut [f64]) -> Result<f64, &'static str> {
        let d = self.dim;
        let l1 = self.word_row(cell.row);
        let l2 = self.context_row(cell.col);
        let p = &self.params;
        let g = &self.gradsq;

        let mut diff = p.get(l1 + d) + p.get(l2 + d) - cell.value.ln();
        for k in 0..d {
            diff += p.get(l1 + k) * p.get(l2 + k);
        }
        let weighted = hp.weight(cell.value) * diff;
        if !diff.is_finite() || !weighted.is_finite() {
            return Err("non-finite residual");
        }
        let cost = weighted * diff;
        let step = hp.learning_rate * weighted;

        let (up1, up2) = scratch.split_at_mut(d);
        for k in 0..d {
            let t1 = step * p.get(l2 + k);
            let t2 = step * p.get(l1 + k);
            up1[k] = t1 / g.get(l1 + k).sqrt();
            up2[k] = t2 / g.get(l2 + k).sqrt();
            g.set(l1 + k, g.get(l1 + k) + t1 * t1);
            g.set(l2 + k, g.get(l2 + k) + t2 * t2);
        }
        if up1.iter().chain(up2.iter()).any(|u| !u.is_finite()) {
            return Err("non-finite gradient");
        }
        for k in 0..d {
            p.set(l1 + k, p.get(l1 + k) - up1[k]);
            p.set(l2 + k, p.get(l2 + k) - up2[k]);
        }
        p.set(l1 + d, p.get(l1 + d) - step / g.get(l1 + d).sqrt());
        p.set(l2 + d, p.get(l2 + d) - step / g.get(l2 + d).sqrt());
        g.set(l1 + d, g.get(l1 + d) + step * step);
        g.set(l2 + d, g.get(l2 + d) + step * step);
        Ok(cost)
    }
}

/// Fits GloVe vectors to a co-occurrence table.
pub fn train_glove(cooc: &CooccurrenceTable, params: &GloveParams) -> Result<GloveTraining, EmbeddingError> {
    train_glove_with(cooc, params, |_, _| {})
}

/// Like [`train_glove`], calling `observer(epoch, parameters)` after every
/// epoch (epochs count from 1).
pub fn train_glove_with<F>(
    cooc: &CooccurrenceTable,
    params: &GloveParams,
    mut observer: F,
) -> Result<GloveTraining, EmbeddingError>
where
    F: FnMut(usize, &GloveParameters),
{
    if cooc.is_empty() {
        return Err(EmbeddingError::EmptyTable);
    }
    if params.dim < 2 {
        return Err(EmbeddingError::InvalidParameter("dimension must be at least 2".into()));
    }
    if params.epochs == 0 || params.workers == 0 {
        return Err(EmbeddingError::InvalidParameter(
            "epochs and workers must be positive".into(),
        ));
    }
    if !(params.x_max > 0.0 && params.learning_rate > 0.0 && params.alpha.is_finite()) {
        return Err(EmbeddingError::InvalidParameter(
            "x_max and learning_rate must be positive".into(),
        ));
    }

    let vocab_len = cooc.vocab().len();
    let d = params.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let n_params = 2 * vocab_len * (d + 1);
    let state = GloveState {
        dim: d,
        vocab_len,
        params: SharedParams::new((0..n_params).map(|_| (rng.random::<f64>() - 0.5) / d as f64)),
        gradsq: SharedParams::new(std::iter::repeat_n(1.0, n_params)),
    };

    let mut order: Vec<usize> = (0..cooc.len()).collect();
    let mut epoch_losses = Vec::with_capacity(params.epochs);
    for epoch in 1..=params.epochs {
        order.shuffle(&mut rng);
        let loss = run_epoch(&state, cooc.entries(), &order, params)
            .map_err(|(value, cause)| EmbeddingError::NonFinite { epoch, value, cause })?;
        if !loss.is_finite() {
            return Err(EmbeddingError::NonFinite {
                epoch,
                value: loss,
                cause: "epoch loss",
            });
        }
        epoch_losses.push(loss);
        log::debug!("glove epoch {epoch}: loss {loss:.6}");
        observer(epoch, &state.snapshot(cooc.vocab()));
    }

    Ok(GloveTraining {
        parameters: state.snapshot(cooc.vocab()),
        epoch_losses,
    })
}

fn run_epoch(
    state: &GloveState,
    entries: &[Cooccurrence],
    order: &[usize],
    params: &GloveParams,
) -> Result<f64, (f64, &'static str)> {
    let pass = |chunk: &[usize]| -> Result<f64, (f64, &'static str)> {
        let mut scratch = vec![0.0; 2 * state.dim];
        let mut loss = 0.0;
        for &i in chunk {
            let cell = &entries[i];
            loss += state.update(cell, params, &mut scratch).map_err(|c| (cell.value, c))?;
        }
        Ok(loss)
    };
    if params.workers == 1 {
        return pass(order);
    }
    let chunk_len = order.len().div_ceil(params.workers);
    std::thread::scope(|s| {
        let handles: Vec<_> = order.chunks(chunk_len).map(|c| s.spawn(move || pass(c))).collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("glove worker panicked"))
            .sum()
    })
}

/// A token → vector map with a fixed dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel {
    dim: usize,
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    vectors: Vec<f64>,
    norms: Vec<f64>,
}

impl EmbeddingModel {
    /// Builds a model from `(token, vector)` rows, keeping their order.
    pub fn new(dim: usize, rows: Vec<(String, Vec<f64>)>) -> Result<Self, EmbeddingError> {
        if dim == 0 {
            return Err(EmbeddingError::InvalidParameter("dimension must be positive".into()));
        }
        if rows.is_empty() {
            return Err(EmbeddingError::EmptyModel);
        }
        let mut tokens = Vec::with_capacity(rows.len());
        let mut index = HashMap::with_capacity(rows.len());
        let mut vectors = Vec::with_capacity(rows.len() * dim);
        let mut norms = Vec::with_capacity(rows.len());
        for (token, v) in rows {
            if v.len() != dim {
                return Err(EmbeddingError::Dimension {
                    token,
                    expected: dim,
                    found: v.len(),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(EmbeddingError::NonFiniteVector(token));
            }
            if index.insert(token.clone(), tokens.len()).is_some() {
                return Err(EmbeddingError::DuplicateToken(token));
            }
            norms.push(norm(&v));
            vectors.extend(v);
            tokens.push(token);
        }
        Ok(EmbeddingModel {
            dim,
            tokens,
            index,
            vectors,
            norms,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn vector(&self, token: &str) -> Option<&[f64]> {
        self.index.get(token).map(|&i| self.row(i))
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    /// Writes the model in the plain-text vector format.
    ///
    /// Components use the shortest representation that parses back to the
    /// same `f64`, so a save/load round trip is bit-exact.
    pub fn write_text<W: Write>(&self, mut out: W) -> io::Result<()> {
        for (i, token) in self.tokens.iter().enumerate() {
            out.write_all(token.as_bytes())?;
            for x in self.row(i) {
                write!(out, " {x}")?;
            }
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), EmbeddingError> {
        let path = path.as_ref();
        let io_err = |source| EmbeddingError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
        self.write_text(&mut w).map_err(io_err)?;
        w.flush().map_err(io_err)
    }

    /// Top-`k` tokens by cosine similarity to `query`.
    ///
    /// A token query is excluded from its own results. Ties are ordered by
    /// token. Zero vectors have similarity 0 with everything.
    pub fn nearest_neighbors(&self, query: Query<'_>, k: usize) -> Result<Vec<Neighbor>, EmbeddingError> {
        let (qv, skip) = match query {
            Query::Token(t) => {
                let &i = self
                    .index
                    .get(t)
                    .ok_or_else(|| EmbeddingError::OutOfVocabulary(t.to_string()))?;
                (self.row(i), Some(i))
            }
            Query::Vector(v) => {
                if v.len() != self.dim {
                    return Err(EmbeddingError::Dimension {
                        token: "<query>".into(),
                        expected: self.dim,
                        found: v.len(),
                    });
                }
                (v, None)
            }
        };
        let qn = norm(qv);
        let mut scored: Vec<(f64, &str)> = (0..self.tokens.len())
            .filter(|&i| Some(i) != skip)
            .map(|i| {
                let denom = qn * self.norms[i];
                let sim = if denom > 0.0 { dot(qv, self.row(i)) / denom } else { 0.0 };
                (sim, self.tokens[i].as_str())
            })
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
        Ok(scored
            .into_iter()
            .take(k)
            .map(|(similarity, t)| Neighbor {
                token: t.to_string(),
                similarity,
            })
            .collect())
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Query<'a> {
    Token(&'a str),
    Vector(&'a [f64]),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Neighbor {
    pub token: String,
    pub similarity: f64,
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Reads the plain-text vector format: `token v1 ... vd` per line, no header.
///
/// The dimension comes from the first row; any row with a different number
/// of components is an error naming its line.
pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingModel, EmbeddingError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| EmbeddingError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let parse_err = |line: usize, message: String| EmbeddingError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };

    let mut rows = Vec::new();
    let mut dim = None;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|source| EmbeddingError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split_ascii_whitespace();
        let token = fields.next().unwrap_or_default().to_string();
        let v = fields
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|e| parse_err(lineno, format!("bad component {f:?}: {e}")))
            })
            .collect::<Result<Vec<f64>, _>>()?;
        let expected = *dim.get_or_insert(v.len());
        if v.is_empty() {
            return Err(parse_err(lineno, format!("no components for {token:?}")));
        }
        if v.len() != expected {
            return Err(parse_err(
                lineno,
                format!("{token:?} has {} components, expected {expected}", v.len()),
            ));
        }
        rows.push((token, v));
    }
    let Some(dim) = dim else {
        return Err(EmbeddingError::EmptyFile {
            path: path.to_path_buf(),
        });
    };
    EmbeddingModel::new(dim, rows)
}

/// Seeds plus each seed's `k` nearest neighbors, lowercased and
/// deduplicated, ordered by best similarity to any seed (seeds count as 1).
///
/// Seeds missing from the vocabulary are skipped; if all are missing the
/// call fails.
pub fn expand_party_terms(model: &EmbeddingModel, seeds: &[String], k: usize) -> Result<Vec<String>, EmbeddingError> {
    let mut best: BTreeMap<String, f64> = BTreeMap::new();
    let mut found = false;
    for seed in seeds {
        let seed = seed.to_lowercase();
        if !model.contains(&seed) {
            log::warn!("party seed {seed:?} is not in the embedding vocabulary");
            continue;
        }
        found = true;
        for n in model.nearest_neighbors(Query::Token(&seed), k)? {
            let e = best.entry(n.token.to_lowercase()).or_insert(f64::NEG_INFINITY);
            *e = e.max(n.similarity);
        }
        best.insert(seed, 1.0);
    }
    if !found {
        return Err(EmbeddingError::NoSeedInVocabulary(seeds.to_vec()));
    }
    let mut ranked: Vec<(String, f64)> = best.into_iter().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(ranked.into_iter().map(|(t, _)| t).collect())
}
