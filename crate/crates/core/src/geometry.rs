//! 2-D projection (UMAP), k-means clustering and projection quality.
//!
//! The UMAP implementation follows the reference algorithm with exact
//! nearest neighbors:
//!
//! 1. brute-force k-nearest-neighbor graph (Euclidean);
//! 2. per-point smoothing: `rho` is the distance to the nearest neighbor and
//!    `sigma` is found by bisection so that the memberships
//!    `exp(-(d - rho) / sigma)` sum to `log2(k)`;
//! 3. fuzzy union symmetrization `w + wᵀ - w∘wᵀ`;
//! 4. PCA initialisation scaled to a box of half-width 10;
//! 5. stochastic descent on the fuzzy cross-entropy with negative sampling,
//!    using the low-dimensional kernel `1 / (1 + a·d^(2b))` whose `a`, `b`
//!    are fitted to `min_dist` and `spread`.
//!
//! Every random choice comes from a seeded ChaCha generator and the layout
//! loop is sequential, so a fixed seed reproduces coordinates bit for bit.

use std::collections::BTreeMap;
use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::embedding::EmbeddingModel;

/// Default number of verb clusters.
pub const DEFAULT_VERB_CLUSTERS: usize = 15;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("need at least {needed} points, got {found}")]
    TooFewPoints { needed: usize, found: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("row {row} has {found} components, expected {expected}")]
    Dimension { row: usize, expected: usize, found: usize },
    #[error("row {0} has non-finite components")]
    NonFinite(usize),
    #[error("point counts differ: {0} vs {1}")]
    Mismatch(usize, usize),
}

/// Labeled points of equal dimension, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledVectors {
    labels: Vec<String>,
    dim: usize,
    data: Vec<f64>,
}

impl LabeledVectors {
    pub fn new(labels: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self, GeometryError> {
        if labels.len() != rows.len() {
            return Err(GeometryError::Mismatch(labels.len(), rows.len()));
        }
        let dim = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (row, v) in rows.into_iter().enumerate() {
            if v.len() != dim {
                return Err(GeometryError::Dimension {
                    row,
                    expected: dim,
                    found: v.len(),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(GeometryError::NonFinite(row));
            }
            data.extend(v);
        }
        Ok(LabeledVectors { labels, dim, data })
    }

    /// Vectors for `tokens` that exist in `model`, plus the tokens that do not.
    pub fn from_model<'a, I>(model: &EmbeddingModel, tokens: I) -> (Self, Vec<String>)
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut labels = Vec::new();
        let mut data = Vec::new();
        let mut missing = Vec::new();
        for t in tokens {
            match model.vector(t) {
                Some(v) => {
                    labels.push(t.to_string());
                    data.extend_from_slice(v);
                }
                None => missing.push(t.to_string()),
            }
        }
        (
            LabeledVectors {
                labels,
                dim: model.dim(),
                data,
            },
            missing,
        )
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct UmapParams {
    pub n_neighbors: usize,
    pub min_dist: f64,
    pub spread: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub negative_sample_rate: usize,
    pub seed: u64,
}

impl Default for UmapParams {
    fn default() -> Self {
        UmapParams {
            n_neighbors: 15,
            min_dist: 0.1,
            spread: 1.0,
            epochs: 200,
            learning_rate: 1.0,
            negative_sample_rate: 5,
            seed: 42,
        }
    }
}

/// 2-D coordinates for labeled points.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub labels: Vec<String>,
    pub coords: Vec<[f64; 2]>,
    pub params: UmapParams,
}

impl Projection {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn to_vectors(&self) -> LabeledVectors {
        LabeledVectors {
            labels: self.labels.clone(),
            dim: 2,
            data: self.coords.iter().flatten().copied().collect(),
        }
    }

    /// Writes `token x y cluster`; the cluster column is omitted without
    /// an assignment.
    pub fn write_tsv<W: Write>(&self, mut out: W, clusters: Option<&[usize]>) -> io::Result<()> {
        match clusters {
            Some(_) => writeln!(out, "token\tx\ty\tcluster")?,
            None => writeln!(out, "token\tx\ty")?,
        }
        for (i, (label, [x, y])) in self.labels.iter().zip(&self.coords).enumerate() {
            write!(out, "{label}\t{x:.6}\t{y:.6}")?;
            if let Some(c) = clusters {
                write!(out, "\t{}", c[i])?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Indices and distances of each point's `k` nearest other points, ties by index.
fn knn(points: &LabeledVectors, k: usize) -> Vec<Vec<(usize, f64)>> {
    (0..points.len())
        .into_par_iter()
        .map(|i| {
            let mut d: Vec<(usize, f64)> = (0..points.len())
                .filter(|&j| j != i)
                .map(|j| (j, sq_dist(points.row(i), points.row(j)).sqrt()))
                .collect();
            d.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            d.truncate(k);
            d
        })
        .collect()
}

/// Bisection for the per-point bandwidth, returning (rho, sigma).
fn smooth_distances(neighbors: &[(usize, f64)], mean_all: f64) -> (f64, f64) {
    const TOLERANCE: f64 = 1e-5;
    const MIN_SCALE: f64 = 1e-3;
    let target = (neighbors.len() as f64).log2();
    let rho = neighbors.iter().map(|n| n.1).find(|&d| d > 0.0).unwrap_or(0.0);
    let (mut lo, mut hi, mut mid) = (0.0f64, f64::INFINITY, 1.0f64);
    for _ in 0..64 {
        let psum: f64 = neighbors
            .iter()
            .map(|&(_, d)| {
                let gap = d - rho;
                if gap > 0.0 {
                    (-gap / mid).exp()
                } else {
                    1.0
                }
            })
            .sum();
        if (psum - target).abs() < TOLERANCE {
            break;
        }
        if psum > target {
            hi = mid;
            mid = (lo + hi) / 2.0;
        } else {
            lo = mid;
            mid = if hi.is_infinite() { mid * 2.0 } else { (lo + hi) / 2.0 };
        }
    }
    let mean_here = neighbors.iter().map(|n| n.1).sum::<f64>() / neighbors.len() as f64;
    let floor = MIN_SCALE * if rho > 0.0 { mean_here } else { mean_all };
    (rho, mid.max(floor))
}

/// Symmetric fuzzy graph as directed edges (both directions present).
fn fuzzy_graph(neighbors: &[Vec<(usize, f64)>]) -> Vec<(usize, usize, f64)> {
    let mean_all = {
        let all: Vec<f64> = neighbors.iter().flatten().map(|n| n.1).collect();
        all.iter().sum::<f64>() / all.len().max(1) as f64
    };
    let mut directed: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for (i, nbrs) in neighbors.iter().enumerate() {
        let (rho, sigma) = smooth_distances(nbrs, mean_all);
        for &(j, d) in nbrs {
            let w = if d - rho > 0.0 { (-(d - rho) / sigma).exp() } else { 1.0 };
            directed.insert((i, j), w);
        }
    }
    let mut sym: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for (&(i, j), &w) in &directed {
        let wt = directed.get(&(j, i)).copied().unwrap_or(0.0);
        let p = w + wt - w * wt;
        sym.insert((i, j), p);
        sym.insert((j, i), p);
    }
    sym.into_iter().map(|((i, j), p)| (i, j, p)).collect()
}

/// Least-squares fit of `1 / (1 + a·x^(2b))` to the target membership
/// curve defined by `spread` and `min_dist` (Levenberg–Marquardt).
pub fn fit_ab(spread: f64, min_dist: f64) -> (f64, f64) {
    let xs: Vec<f64> = (0..300).map(|i| 3.0 * spread * i as f64 / 299.0).collect();
    let ys: Vec<f64> = xs
        .iter()
        .map(|&x| {
            if x < min_dist {
                1.0
            } else {
                (-(x - min_dist) / spread).exp()
            }
        })
        .collect();
    let sse = |a: f64, b: f64| -> f64 {
        xs.iter()
            .zip(&ys)
            .map(|(&x, &y)| {
                let r = 1.0 / (1.0 + a * x.powf(2.0 * b)) - y;
                r * r
            })
            .sum()
    };
    let (mut a, mut b) = (1.0f64, 1.0f64);
    let mut lambda = 1e-3;
    let mut current = sse(a, b);
    for _ in 0..500 {
        let (mut jtj, mut jtr) = ([[0.0f64; 2]; 2], [0.0f64; 2]);
        for (&x, &y) in xs.iter().zip(&ys) {
            let u = if x > 0.0 { x.powf(2.0 * b) } else { 0.0 };
            let denom = (1.0 + a * u).powi(2);
            let ga = -u / denom;
            let gb = if x > 0.0 { -2.0 * a * u * x.ln() / denom } else { 0.0 };
            let r = 1.0 / (1.0 + a * u) - y;
            let g = [ga, gb];
            for p in 0..2 {
                jtr[p] += g[p] * r;
                for q in 0..2 {
                    jtj[p][q] += g[p] * g[q];
                }
            }
        }
        let m00 = jtj[0][0] * (1.0 + lambda);
        let m11 = jtj[1][1] * (1.0 + lambda);
        let det = m00 * m11 - jtj[0][1] * jtj[1][0];
        if det == 0.0 || !det.is_finite() {
            break;
        }
        let da = -(m11 * jtr[0] - jtj[0][1] * jtr[1]) / det;
        let db = -(m00 * jtr[1] - jtj[1][0] * jtr[0]) / det;
        let (na, nb) = (a + da, b + db);
        let candidate = if na > 0.0 && nb > 0.0 {
            sse(na, nb)
        } else {
            f64::INFINITY
        };
        if candidate < current {
            let gain = current - candidate;
            a = na;
            b = nb;
            current = candidate;
            lambda = (lambda / 10.0).max(1e-12);
            if gain < 1e-15 {
                break;
            }
        } else {
            lambda *= 10.0;
            if lambda > 1e12 {
                break;
            }
        }
    }
    (a, b)
}

/// Top-2 principal-component scores, scaled so the largest |coordinate| is 10.
fn pca_init(points: &LabeledVectors, rng: &mut ChaCha8Rng) -> Vec<[f64; 2]> {
    let (n, d) = (points.len(), points.dim());
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (m, x) in mean.iter_mut().zip(points.row(i)) {
            *m += x / n as f64;
        }
    }
    let centered: Vec<Vec<f64>> = (0..n)
        .map(|i| points.row(i).iter().zip(&mean).map(|(x, m)| x - m).collect())
        .collect();

    let mut components: Vec<Vec<f64>> = Vec::new();
    for _ in 0..2 {
        let mut v: Vec<f64> = (0..d).map(|_| rng.random::<f64>() - 0.5).collect();
        for _ in 0..300 {
            // v <- Xᵀ X v, then project out earlier components.
            let xv: Vec<f64> = centered
                .iter()
                .map(|r| r.iter().zip(&v).map(|(a, b)| a * b).sum())
                .collect();
            let mut next = vec![0.0; d];
            for (r, s) in centered.iter().zip(&xv) {
                for (nk, rk) in next.iter_mut().zip(r) {
                    *nk += rk * s;
                }
            }
            for c in &components {
                let proj: f64 = next.iter().zip(c).map(|(a, b)| a * b).sum();
                for (nk, ck) in next.iter_mut().zip(c) {
                    *nk -= proj * ck;
                }
            }
            let len = next.iter().map(|x| x * x).sum::<f64>().sqrt();
            if len == 0.0 {
                break;
            }
            next.iter_mut().for_each(|x| *x /= len);
            let delta: f64 = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).sum();
            v = next;
            if delta < 1e-12 {
                break;
            }
        }
        components.push(v);
    }

    let mut coords: Vec<[f64; 2]> = centered
        .iter()
        .map(|r| {
            let p = |c: &Vec<f64>| r.iter().zip(c).map(|(a, b)| a * b).sum::<f64>();
            [p(&components[0]), p(&components[1])]
        })
        .collect();
    let max_abs = coords.iter().flatten().fold(0.0f64, |m, x| m.max(x.abs()));
    if max_abs > 0.0 && max_abs.is_finite() {
        for c in coords.iter_mut().flatten() {
            *c *= 10.0 / max_abs;
        }
    } else {
        for c in coords.iter_mut().flatten() {
            *c = rng.random_range(-10.0..10.0);
        }
    }
    // Jitter separates duplicate points.
    for c in coords.iter_mut().flatten() {
        *c += (rng.random::<f64>() - 0.5) * 1e-4;
    }
    coords
}

fn clip(x: f64) -> f64 {
    x.clamp(-4.0, 4.0)
}

/// Projects labeled vectors to 2-D with UMAP.
pub fn project_umap(points: &LabeledVectors, params: &UmapParams) -> Result<Projection, GeometryError> {
    let n = points.len();
    let k = params.n_neighbors;
    if k < 2 {
        return Err(GeometryError::InvalidParameter("n_neighbors must be at least 2".into()));
    }
    if n < k + 1 {
        return Err(GeometryError::TooFewPoints {
            needed: k + 1,
            found: n,
        });
    }
    if params.epochs == 0 || params.min_dist < 0.0 || params.spread <= 0.0 || params.learning_rate <= 0.0 {
        return Err(GeometryError::InvalidParameter(
            "epochs, spread and learning_rate must be positive and min_dist non-negative".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let graph = fuzzy_graph(&knn(points, k));
    let (a, b) = fit_ab(params.spread, params.min_dist);

    let w_max = graph.iter().map(|e| e.2).fold(0.0f64, f64::max);
    let n_epochs = params.epochs as f64;
    let edges: Vec<(usize, usize, f64)> = graph
        .into_iter()
        .filter(|e| e.2 >= w_max / n_epochs)
        .map(|(i, j, w)| (i, j, n_epochs / (n_epochs * w / w_max)))
        .collect();

    let mut emb = pca_init(points, &mut rng);
    let neg_rate = params.negative_sample_rate as f64;
    let mut next_sample: Vec<f64> = edges.iter().map(|e| e.2).collect();
    let mut next_negative: Vec<f64> = edges.iter().map(|e| e.2 / neg_rate).collect();

    for epoch in 0..params.epochs {
        let e = epoch as f64;
        let alpha = params.learning_rate * (1.0 - e / n_epochs);
        for (idx, &(head, tail, per_sample)) in edges.iter().enumerate() {
            if next_sample[idx] > e {
                continue;
            }
            let (cur, other) = (emb[head], emb[tail]);
            let d2 = sq_dist(&cur, &other);
            let coeff = if d2 > 0.0 {
                -2.0 * a * b * d2.powf(b - 1.0) / (a * d2.powf(b) + 1.0)
            } else {
                0.0
            };
            for dim in 0..2 {
                let g = clip(coeff * (cur[dim] - other[dim])) * alpha;
                emb[head][dim] += g;
                emb[tail][dim] -= g;
            }
            next_sample[idx] += per_sample;

            let per_negative = per_sample / neg_rate;
            let n_neg = ((e - next_negative[idx]) / per_negative).floor().max(0.0) as usize;
            for _ in 0..n_neg {
                let other_idx = rng.random_range(0..n);
                if other_idx == head {
                    continue;
                }
                let (cur, other) = (emb[head], emb[other_idx]);
                let d2 = sq_dist(&cur, &other);
                let coeff = if d2 > 0.0 {
                    2.0 * b / ((0.001 + d2) * (a * d2.powf(b) + 1.0))
                } else {
                    0.0
                };
                for dim in 0..2 {
                    let g = if coeff > 0.0 {
                        clip(coeff * (cur[dim] - other[dim]))
                    } else {
                        4.0
                    };
                    emb[head][dim] += g * alpha;
                }
            }
            next_negative[idx] += n_neg as f64 * per_negative;
        }
    }

    if let Some(i) = emb.iter().position(|c| !c[0].is_finite() || !c[1].is_finite()) {
        return Err(GeometryError::NonFinite(i));
    }
    Ok(Projection {
        labels: points.labels().to_vec(),
        coords: emb,
        params: params.clone(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansParams {
    pub k: usize,
    pub restarts: usize,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for KMeansParams {
    fn default() -> Self {
        KMeansParams {
            k: DEFAULT_VERB_CLUSTERS,
            restarts: 10,
            max_iter: 300,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub labels: Vec<String>,
    /// Cluster id in `0..k` for every point.
    pub assignment: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Sum of squared distances from each point to its own centroid.
    pub inertia: f64,
    /// Inertia after each Lloyd iteration of the winning restart.
    pub history: Vec<f64>,
}

impl Clustering {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    /// Members of each cluster, by label.
    pub fn members(&self) -> Vec<Vec<&str>> {
        let mut out = vec![Vec::new(); self.k()];
        for (label, &c) in self.labels.iter().zip(&self.assignment) {
            out[c].push(label.as_str());
        }
        out
    }
}

/// Greedy k-means++ seeding: each new center is the best of several
/// D²-weighted candidates.
fn seed_centers(points: &LabeledVectors, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = points.len();
    let trials = 2 + (k as f64).ln().floor() as usize;
    let mut centers = vec![rng.random_range(0..n)];
    let mut closest: Vec<f64> = (0..n).map(|i| sq_dist(points.row(i), points.row(centers[0]))).collect();
    while centers.len() < k {
        let pot: f64 = closest.iter().sum();
        if pot <= 0.0 {
            // Every point sits on a center; fall back to unused indices.
            let next = (0..n).find(|i| !centers.contains(i)).unwrap_or(0);
            centers.push(next);
            continue;
        }
        let mut cumulative = Vec::with_capacity(n);
        let mut acc = 0.0;
        for &c in &closest {
            acc += c;
            cumulative.push(acc);
        }
        let mut best: Option<(f64, usize, Vec<f64>)> = None;
        for _ in 0..trials {
            let r = rng.random::<f64>() * pot;
            let cand = cumulative.partition_point(|&c| c <= r).min(n - 1);
            let updated: Vec<f64> = closest
                .iter()
                .enumerate()
                .map(|(i, &c)| c.min(sq_dist(points.row(i), points.row(cand))))
                .collect();
            let cand_pot: f64 = updated.iter().sum();
            if best.as_ref().is_none_or(|b| cand_pot < b.0) {
                best = Some((cand_pot, cand, updated));
            }
        }
        let (_, cand, updated) = best.expect("at least one trial");
        centers.push(cand);
        closest = updated;
    }
    centers
}

fn nearest_centroid(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = sq_dist(p, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn lloyd(
    points: &LabeledVectors,
    mut centroids: Vec<Vec<f64>>,
    max_iter: usize,
) -> (Vec<usize>, Vec<Vec<f64>>, Vec<f64>) {
    let (n, k, d) = (points.len(), centroids.len(), points.dim());
    let mut assignment: Vec<usize> = vec![usize::MAX; n];
    let mut history = Vec::new();
    for _ in 0..max_iter {
        let nearest: Vec<(usize, f64)> = (0..n)
            .into_par_iter()
            .map(|i| nearest_centroid(points.row(i), &centroids))
            .collect();
        let mut next: Vec<usize> = nearest.iter().map(|x| x.0).collect();
        if next == assignment {
            break;
        }

        // Refill empty clusters with the points farthest from their centroid.
        let mut sizes = vec![0usize; k];
        next.iter().for_each(|&c| sizes[c] += 1);
        let mut dists: Vec<f64> = nearest.iter().map(|x| x.1).collect();
        for empty in 0..k {
            if sizes[empty] > 0 {
                continue;
            }
            let far = (0..n)
                .filter(|&i| sizes[next[i]] > 1)
                .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)));
            if let Some(i) = far {
                sizes[next[i]] -= 1;
                next[i] = empty;
                sizes[empty] = 1;
                dists[i] = 0.0;
            }
        }
        assignment = next;

        let mut sums = vec![vec![0.0; d]; k];
        for (i, &c) in assignment.iter().enumerate() {
            for (s, x) in sums[c].iter_mut().zip(points.row(i)) {
                *s += x;
            }
        }
        for (c, sum) in sums.into_iter().enumerate() {
            if sizes[c] > 0 {
                centroids[c] = sum.into_iter().map(|s| s / sizes[c] as f64).collect();
            }
        }
        history.push(inertia(points, &assignment, &centroids));
    }
    (assignment, centroids, history)
}

fn inertia(points: &LabeledVectors, assignment: &[usize], centroids: &[Vec<f64>]) -> f64 {
    assignment
        .iter()
        .enumerate()
        .map(|(i, &c)| sq_dist(points.row(i), &centroids[c]))
        .sum()
}

/// Best-of-restarts k-means with greedy k-means++ seeding and Lloyd
/// iterations. Distances are Euclidean.
pub fn kmeans(points: &LabeledVectors, params: &KMeansParams) -> Result<Clustering, GeometryError> {
    let n = points.len();
    if params.k == 0 || params.restarts == 0 || params.max_iter == 0 {
        return Err(GeometryError::InvalidParameter(
            "k, restarts and max_iter must be positive".into(),
        ));
    }
    if n < params.k {
        return Err(GeometryError::TooFewPoints {
            needed: params.k,
            found: n,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut best: Option<Clustering> = None;
    for _ in 0..params.restarts {
        let centers = seed_centers(points, params.k, &mut rng);
        let init: Vec<Vec<f64>> = centers.iter().map(|&c| points.row(c).to_vec()).collect();
        let (assignment, centroids, history) = lloyd(points, init, params.max_iter);
        let total = inertia(points, &assignment, &centroids);
        if best.as_ref().is_none_or(|b| total < b.inertia) {
            best = Some(Clustering {
                labels: points.labels().to_vec(),
                assignment,
                centroids,
                inertia: total,
                history,
            });
        }
    }
    Ok(best.expect("restarts > 0"))
}

/// Trustworthiness of a 2-D projection: 1 minus the normalized rank
/// penalty of low-dimensional neighbors that are not high-dimensional
/// neighbors.
///
/// Requires `1 <= k < n` and `2n - 3k - 1 > 0` (the normalizer's domain).
pub fn trustworthiness(high: &LabeledVectors, low: &Projection, k: usize) -> Result<f64, GeometryError> {
    let n = high.len();
    if n != low.len() {
        return Err(GeometryError::Mismatch(n, low.len()));
    }
    if k == 0 || k >= n || 2 * n <= 3 * k + 1 {
        return Err(GeometryError::InvalidParameter(format!(
            "k = {k} is out of range for {n} points"
        )));
    }
    let low_vecs = low.to_vectors();
    let penalty: f64 = (0..n)
        .into_par_iter()
        .map(|i| {
            let order = |pts: &LabeledVectors| {
                let mut d: Vec<(usize, f64)> = (0..n)
                    .filter(|&j| j != i)
                    .map(|j| (j, sq_dist(pts.row(i), pts.row(j))))
                    .collect();
                d.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
                d.into_iter().map(|x| x.0).collect::<Vec<_>>()
            };
            let high_order = order(high);
            let mut rank = vec![0usize; n];
            for (r, &j) in high_order.iter().enumerate() {
                rank[j] = r + 1;
            }
            order(&low_vecs)
                .into_iter()
                .take(k)
                .map(|j| rank[j].saturating_sub(k) as f64)
                .sum::<f64>()
        })
        .sum();
    let (nf, kf) = (n as f64, k as f64);
    Ok(1.0 - 2.0 / (nf * kf * (2.0 * nf - 3.0 * kf - 1.0)) * penalty)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    pub(crate) fn blobs(per: usize, dim: usize, sep: f64, sigma: f64, seed: u64) -> (LabeledVectors, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, sigma).unwrap();
        let mut labels = Vec::new();
        let mut rows = Vec::new();
        let mut truth = Vec::new();
        for c in 0..3 {
            for i in 0..per {
                let row = (0..dim)
                    .map(|k| if k == c { sep } else { 0.0 } + normal.sample(&mut rng))
                    .collect();
                rows.push(row);
                labels.push(format!("b{c}_{i}"));
                truth.push(c);
            }
        }
        (LabeledVectors::new(labels, rows).unwrap(), truth)
    }

    fn points(rows: &[[f64; 2]]) -> LabeledVectors {
        LabeledVectors::new(
            (0..rows.len()).map(|i| format!("p{i}")).collect(),
            rows.iter().map(|r| r.to_vec()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn ab_fit_matches_reference_values() {
        let (a, b) = fit_ab(1.0, 0.1);
        assert!((a - 1.577).abs() < 0.01, "a = {a}");
        assert!((b - 0.895).abs() < 0.01, "b = {b}");
    }

    #[test]
    fn kmeans_hand_case() {
        let p = points(&[[0.0, 0.0], [0.0, 1.0], [10.0, 10.0], [10.0, 11.0]]);
        let c = kmeans(
            &p,
            &KMeansParams {
                k: 2,
                seed: 3,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(c.inertia, 1.0);
        assert_eq!(c.assignment[0], c.assignment[1]);
        assert_eq!(c.assignment[2], c.assignment[3]);
        assert_ne!(c.assignment[0], c.assignment[2]);
    }

    #[test]
    fn kmeans_k_equals_n() {
        let p = points(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [5.0, 5.0], [5.0, 5.0]]);
        let c = kmeans(
            &p,
            &KMeansParams {
                k: 5,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(c.inertia, 0.0);
        assert_eq!(
            kmeans(
                &p,
                &KMeansParams {
                    k: 6,
                    ..Default::default()
                }
            )
            .unwrap_err()
            .to_string(),
            "need at least 6 points, got 5"
        );
        assert_eq!(KMeansParams::default().k, 15);
    }

    #[test]
    fn kmeans_history_non_increasing() {
        let (p, _) = blobs(40, 5, 3.0, 1.5, 11);
        for seed in 0..5 {
            let c = kmeans(
                &p,
                &KMeansParams {
                    k: 6,
                    restarts: 1,
                    seed,
                    ..Default::default()
                },
            )
            .unwrap();
            for w in c.history.windows(2) {
                assert!(w[1] <= w[0] * (1.0 + 1e-12), "{:?}", c.history);
            }
            assert!((c.history.last().unwrap() - c.inertia).abs() < 1e-9 * c.inertia.max(1.0));
        }
    }

    fn partition_of(assignment: &[usize]) -> Vec<Vec<usize>> {
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, &c) in assignment.iter().enumerate() {
            groups.entry(c).or_default().push(i);
        }
        let mut v: Vec<Vec<usize>> = groups.into_values().collect();
        v.sort();
        v
    }

    #[test]
    fn kmeans_recovers_separated_blobs_for_every_seed() {
        let (p, truth) = blobs(30, 2, 20.0, 1.0, 5);
        for seed in 0..10 {
            let c = kmeans(
                &p,
                &KMeansParams {
                    k: 3,
                    restarts: 3,
                    seed,
                    ..Default::default()
                },
            )
            .unwrap();
            assert_eq!(partition_of(&c.assignment), partition_of(&truth));
        }
    }

    #[test]
    fn kmeans_is_permutation_invariant() {
        let (p, _) = blobs(20, 2, 20.0, 1.0, 8);
        let c = kmeans(
            &p,
            &KMeansParams {
                k: 3,
                seed: 1,
                ..Default::default()
            },
        )
        .unwrap();
        let perm: Vec<usize> = (0..p.len()).rev().collect();
        let rows: Vec<Vec<f64>> = perm.iter().map(|&i| p.row(i).to_vec()).collect();
        let labels: Vec<String> = perm.iter().map(|&i| p.labels()[i].clone()).collect();
        let q = LabeledVectors::new(labels, rows).unwrap();
        let d = kmeans(
            &q,
            &KMeansParams {
                k: 3,
                seed: 1,
                ..Default::default()
            },
        )
        .unwrap();
        let mut a: Vec<Vec<&str>> = c
            .members()
            .into_iter()
            .map(|mut m| {
                m.sort();
                m
            })
            .collect();
        let mut b: Vec<Vec<&str>> = d
            .members()
            .into_iter()
            .map(|mut m| {
                m.sort();
                m
            })
            .collect();
        a.sort();
        b.sort();
        assert_eq!(a, b);
    }

    #[test]
    fn trustworthiness_identity_is_one() {
        let (p, _) = blobs(20, 2, 5.0, 1.0, 2);
        let proj = Projection {
            labels: p.labels().to_vec(),
            coords: (0..p.len()).map(|i| [p.row(i)[0], p.row(i)[1]]).collect(),
            params: UmapParams::default(),
        };
        assert_eq!(trustworthiness(&p, &proj, 5).unwrap(), 1.0);
        assert!(trustworthiness(&p, &proj, p.len()).is_err());
    }

    #[test]
    fn umap_shape_errors_and_determinism() {
        let (p, _) = blobs(10, 8, 6.0, 1.0, 4);
        let params = UmapParams {
            n_neighbors: 5,
            epochs: 50,
            ..Default::default()
        };
        let a = project_umap(&p, &params).unwrap();
        assert_eq!(a.coords.len(), p.len());
        assert!(a.coords.iter().flatten().all(|x| x.is_finite()));
        let b = project_umap(&p, &params).unwrap();
        let bits = |pr: &Projection| pr.coords.iter().flatten().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));

        let small = UmapParams {
            n_neighbors: 30,
            ..Default::default()
        };
        assert!(matches!(
            project_umap(&p, &small),
            Err(GeometryError::TooFewPoints { .. })
        ));
    }

    fn purity(assignment: &[usize], truth: &[usize], k: usize) -> f64 {
        let mut table = vec![vec![0usize; 3]; k];
        for (&a, &t) in assignment.iter().zip(truth) {
            table[a][t] += 1;
        }
        table.iter().map(|row| *row.iter().max().unwrap()).sum::<usize>() as f64 / truth.len() as f64
    }

    #[test]
    fn umap_separates_blobs() {
        let (p, truth) = blobs(100, 50, 10.0, 1.0, 17);
        let proj = project_umap(&p, &UmapParams::default()).unwrap();
        let c = kmeans(
            &proj.to_vectors(),
            &KMeansParams {
                k: 3,
                seed: 1,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(purity(&c.assignment, &truth, 3) >= 0.9);
        let t = trustworthiness(&p, &proj, 15).unwrap();
        assert!(t >= 0.8, "trustworthiness {t}");

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut shuffled = proj.clone();
        use rand::seq::SliceRandom;
        shuffled.coords.shuffle(&mut rng);
        let s = trustworthiness(&p, &shuffled, 15).unwrap();
        assert!(s < 0.7, "shuffled {s}");
    }

    #[test]
    fn umap_tolerates_duplicates() {
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![(i / 4) as f64, 1.0, 0.0]).collect();
        let p = LabeledVectors::new((0..20).map(|i| format!("t{i}")).collect(), rows).unwrap();
        let proj = project_umap(
            &p,
            &UmapParams {
                n_neighbors: 5,
                epochs: 30,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(proj.coords.iter().flatten().all(|x| x.is_finite()));
    }

    #[test]
    fn projection_tsv() {
        let proj = Projection {
            labels: vec!["a".into(), "b".into()],
            coords: vec![[0.5, -1.0], [2.0, 3.25]],
            params: UmapParams::default(),
        };
        let mut buf = Vec::new();
        proj.write_tsv(&mut buf, Some(&[1, 0])).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "token\tx\ty\tcluster\na\t0.500000\t-1.000000\t1\nb\t2.000000\t3.250000\t0\n"
        );
    }
}
