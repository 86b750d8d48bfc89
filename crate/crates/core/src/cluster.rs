//! Clustering: k-means, Ward agglomerative, spectral, and BIRCH, plus
//! cluster-validity metrics (silhouette, Calinski–Harabasz,
//! Davies–Bouldin, adjusted Rand) and robustness statistics.
//!
//! Everything is deterministic given the seed; restarts derive
//! per-restart sub-seeds from the master seed.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("k={k} out of range for {n} rows")]
    KOutOfRange { k: usize, n: usize },
    #[error("quality metrics need at least 2 clusters")]
    SingleCluster,
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("nvar undefined for zero-mean series")]
    ZeroMean,
    #[error("empty input")]
    EmptyInput,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClusterAlgo {
    KMeans,
    Agglomerative,
    Spectral,
    Birch,
}

impl ClusterAlgo {
    pub const ALL: [ClusterAlgo; 4] = [
        ClusterAlgo::KMeans,
        ClusterAlgo::Agglomerative,
        ClusterAlgo::Spectral,
        ClusterAlgo::Birch,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            ClusterAlgo::KMeans => "KMEANS",
            ClusterAlgo::Agglomerative => "AGGLOMERATIVE",
            ClusterAlgo::Spectral => "SPECTRAL",
            ClusterAlgo::Birch => "BIRCH",
        }
    }

    pub fn from_tag(tag: &str) -> Option<ClusterAlgo> {
        ClusterAlgo::ALL.into_iter().find(|a| a.tag() == tag)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterResult {
    pub assignments: Vec<usize>,
    pub k: usize,
    /// Final within-cluster sum of squares (k-means and spectral).
    pub inertia: Option<f64>,
    pub seed: u64,
    /// Set when a disconnected spectral graph needed the epsilon patch.
    pub graph_patched: bool,
}

const KMEANS_RESTARTS: usize = 10;
const KMEANS_MAX_ITER: usize = 300;
const KMEANS_TOL: f64 = 1e-4;
const SPECTRAL_NEIGHBORS: usize = 10;
const SPECTRAL_EPS: f64 = 1e-8;
const BIRCH_THRESHOLD: f64 = 0.5;
const BIRCH_BRANCHING: usize = 50;

fn row(x: &DMatrix<f64>, i: usize) -> Vec<f64> {
    (0..x.ncols()).map(|j| x[(i, j)]).collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

pub fn cluster(
    algo: ClusterAlgo,
    x: &DMatrix<f64>,
    k: usize,
    seed: u64,
) -> Result<ClusterResult, ClusterError> {
    let n = x.nrows();
    if k < 2 || k > n {
        return Err(ClusterError::KOutOfRange { k, n });
    }
    match algo {
        ClusterAlgo::KMeans => {
            let (assignments, inertia) = kmeans(x, k, seed);
            Ok(ClusterResult {
                assignments,
                k,
                inertia: Some(inertia),
                seed,
                graph_patched: false,
            })
        }
        ClusterAlgo::Agglomerative => {
            let rows: Vec<Vec<f64>> = (0..n).map(|i| row(x, i)).collect();
            let assignments = ward(&rows, k);
            Ok(ClusterResult {
                assignments,
                k,
                inertia: None,
                seed,
                graph_patched: false,
            })
        }
        ClusterAlgo::Spectral => spectral(x, k, seed),
        ClusterAlgo::Birch => birch(x, k, seed),
    }
}

// -------------------------------------------------------------- k-means

/// k-means++ with restarts; returns the assignment with lowest inertia.
fn kmeans(x: &DMatrix<f64>, k: usize, seed: u64) -> (Vec<usize>, f64) {
    let mut best: Option<(Vec<usize>, f64)> = None;
    for restart in 0..KMEANS_RESTARTS {
        let sub_seed = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(restart as u64);
        let trace = kmeans_single(x, k, sub_seed);
        let (assignments, inertia) = trace.result;
        if best.as_ref().map_or(true, |(_, b)| inertia < *b) {
            best = Some((assignments, inertia));
        }
    }
    best.expect("at least one restart")
}

struct KMeansTrace {
    result: (Vec<usize>, f64),
    /// inertia after each Lloyd iteration (used by invariant tests)
    #[allow(dead_code)] // inspected by the convergence tests
    inertia_per_iter: Vec<f64>,
}

fn kmeans_single(x: &DMatrix<f64>, k: usize, seed: u64) -> KMeansTrace {
    let n = x.nrows();
    let rows: Vec<Vec<f64>> = (0..n).map(|i| row(x, i)).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);

    // k-means++ seeding
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    centers.push(rows[rng.gen_range(0..n)].clone());
    while centers.len() < k {
        let d2: Vec<f64> = rows
            .iter()
            .map(|r| {
                centers
                    .iter()
                    .map(|c| sq_dist(r, c))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.gen_range(0.0..total);
            let mut chosen = n - 1;
            for (i, d) in d2.iter().enumerate() {
                if target < *d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.gen_range(0..n)
        };
        centers.push(rows[next].clone());
    }

    let mut assignments = vec![0usize; n];
    let mut previous_inertia = f64::INFINITY;
    let mut trace = Vec::new();
    for _ in 0..KMEANS_MAX_ITER {
        // assign
        let mut inertia = 0.0;
        for (i, r) in rows.iter().enumerate() {
            let (mut best_c, mut best_d) = (0, f64::INFINITY);
            for (c, center) in centers.iter().enumerate() {
                let d = sq_dist(r, center);
                if d < best_d {
                    best_d = d;
                    best_c = c;
                }
            }
            assignments[i] = best_c;
            inertia += best_d;
        }
        trace.push(inertia);
        // update, reseeding empty clusters with the farthest point
        let p = x.ncols();
        let mut sums = vec![vec![0.0; p]; k];
        let mut counts = vec![0usize; k];
        for (i, r) in rows.iter().enumerate() {
            counts[assignments[i]] += 1;
            for j in 0..p {
                sums[assignments[i]][j] += r[j];
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                let farthest = (0..n)
                    .max_by(|&a, &b| {
                        sq_dist(&rows[a], &centers[assignments[a]])
                            .partial_cmp(&sq_dist(&rows[b], &centers[assignments[b]]))
                            .unwrap()
                    })
                    .unwrap();
                centers[c] = rows[farthest].clone();
                assignments[farthest] = c;
            } else {
                for j in 0..p {
                    centers[c][j] = sums[c][j] / counts[c] as f64;
                }
            }
        }
        if previous_inertia - inertia <= KMEANS_TOL {
            previous_inertia = inertia;
            break;
        }
        previous_inertia = inertia;
    }
    KMeansTrace {
        result: (assignments, previous_inertia),
        inertia_per_iter: trace,
    }
}

// ------------------------------------------------------- agglomerative

/// Ward-linkage agglomerative clustering, cut at k clusters.
/// Lance–Williams recurrence over squared Euclidean distances.
fn ward(rows: &[Vec<f64>], k: usize) -> Vec<usize> {
    let n = rows.len();
    let mut active: Vec<bool> = vec![true; n];
    let mut size: Vec<f64> = vec![1.0; n];
    let mut members: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    let mut d: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| sq_dist(&rows[i], &rows[j])).collect())
        .collect();
    let mut clusters = n;
    while clusters > k {
        // cheapest merge, ties to lowest index pair
        let (mut bi, mut bj, mut best) = (0, 0, f64::INFINITY);
        for i in 0..n {
            if !active[i] {
                continue;
            }
            for j in (i + 1)..n {
                if !active[j] {
                    continue;
                }
                // Ward merge cost between clusters i and j
                let cost = size[i] * size[j] / (size[i] + size[j]) * d[i][j];
                if cost < best {
                    best = cost;
                    bi = i;
                    bj = j;
                }
            }
        }
        // merge bj into bi
        let (ni, nj) = (size[bi], size[bj]);
        for m in 0..n {
            if !active[m] || m == bi || m == bj {
                continue;
            }
            let nm = size[m];
            let updated = ((ni + nm) * d[bi][m] + (nj + nm) * d[bj][m] - nm * d[bi][bj])
                / (ni + nj + nm);
            d[bi][m] = updated;
            d[m][bi] = updated;
        }
        size[bi] += size[bj];
        let moved = std::mem::take(&mut members[bj]);
        members[bi].extend(moved);
        active[bj] = false;
        clusters -= 1;
    }
    let mut assignments = vec![0usize; n];
    let mut next_id = 0;
    for i in 0..n {
        if active[i] {
            for &m in &members[i] {
                assignments[m] = next_id;
            }
            next_id += 1;
        }
    }
    assignments
}

// ------------------------------------------------------------ spectral

/// The normalized-Laplacian pipeline: 10-NN symmetric affinity,
/// L = D^{-1/2}(D - A)D^{-1/2}, k smallest eigenvectors row-normalized,
/// then k-means on the embedding.
fn spectral(x: &DMatrix<f64>, k: usize, seed: u64) -> Result<ClusterResult, ClusterError> {
    let n = x.nrows();
    let rows: Vec<Vec<f64>> = (0..n).map(|i| row(x, i)).collect();
    let mut affinity = DMatrix::zeros(n, n);
    let neighbors = SPECTRAL_NEIGHBORS.min(n - 1);
    for i in 0..n {
        let mut dists: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| (sq_dist(&rows[i], &rows[j]), j))
            .collect();
        dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for &(_, j) in dists.iter().take(neighbors) {
            affinity[(i, j)] = 1.0;
            affinity[(j, i)] = 1.0;
        }
    }
    let graph_patched = !is_connected(&affinity);
    if graph_patched {
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    affinity[(i, j)] += SPECTRAL_EPS;
                }
            }
        }
    }
    let degrees: Vec<f64> = (0..n).map(|i| affinity.row(i).sum()).collect();
    let mut laplacian = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let d = if i == j { degrees[i] } else { 0.0 };
            laplacian[(i, j)] = (d - affinity[(i, j)]) / (degrees[i].sqrt() * degrees[j].sqrt());
        }
    }
    // symmetrize against round-off before the eigensolve
    let laplacian = (&laplacian + laplacian.transpose()) * 0.5;
    let eigen = laplacian.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eigen.eigenvalues[a].partial_cmp(&eigen.eigenvalues[b]).unwrap());
    let mut embedding = DMatrix::zeros(n, k);
    for (col, &idx) in order.iter().take(k).enumerate() {
        for i in 0..n {
            embedding[(i, col)] = eigen.eigenvectors[(i, idx)];
        }
    }
    for i in 0..n {
        let norm: f64 = (0..k).map(|j| embedding[(i, j)].powi(2)).sum::<f64>().sqrt();
        if norm > 0.0 {
            for j in 0..k {
                embedding[(i, j)] /= norm;
            }
        }
    }
    let (assignments, inertia) = kmeans(&embedding, k, seed);
    Ok(ClusterResult {
        assignments,
        k,
        inertia: Some(inertia),
        seed,
        graph_patched,
    })
}

fn is_connected(affinity: &DMatrix<f64>) -> bool {
    let n = affinity.nrows();
    let mut seen = vec![false; n];
    let mut stack = vec![0usize];
    seen[0] = true;
    while let Some(i) = stack.pop() {
        for j in 0..n {
            if affinity[(i, j)] > 0.0 && !seen[j] {
                seen[j] = true;
                stack.push(j);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

// --------------------------------------------------------------- BIRCH

/// Clustering feature: count, linear sum, squared sum.
#[derive(Debug, Clone)]
struct Cf {
    n: f64,
    ls: Vec<f64>,
    ss: f64,
}

impl Cf {
    fn from_point(p: &[f64]) -> Cf {
        Cf {
            n: 1.0,
            ls: p.to_vec(),
            ss: p.iter().map(|v| v * v).sum(),
        }
    }

    fn merge(&self, other: &Cf) -> Cf {
        Cf {
            n: self.n + other.n,
            ls: self.ls.iter().zip(&other.ls).map(|(a, b)| a + b).collect(),
            ss: self.ss + other.ss,
        }
    }

    fn centroid(&self) -> Vec<f64> {
        self.ls.iter().map(|v| v / self.n).collect()
    }

    /// RMS radius of the member points around the centroid.
    fn radius(&self) -> f64 {
        let c2: f64 = self.centroid().iter().map(|v| v * v).sum();
        (self.ss / self.n - c2).max(0.0).sqrt()
    }
}

/// Single-pass CF-tree insertion (threshold 0.5, branching 50) followed
/// by Ward clustering of the leaf-subcluster centroids down to k.
fn birch(x: &DMatrix<f64>, k: usize, seed: u64) -> Result<ClusterResult, ClusterError> {
    let n = x.nrows();
    let rows: Vec<Vec<f64>> = (0..n).map(|i| row(x, i)).collect();
    // leaves[g] = CF of subcluster g; membership[i] = subcluster of row i
    let mut leaves: Vec<Cf> = Vec::new();
    let mut membership = vec![0usize; n];
    for (i, point) in rows.iter().enumerate() {
        let nearest = leaves
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| {
                sq_dist(&a.centroid(), point)
                    .partial_cmp(&sq_dist(&b.centroid(), point))
                    .unwrap()
            })
            .map(|(g, _)| g);
        match nearest {
            Some(g) => {
                let merged = leaves[g].merge(&Cf::from_point(point));
                if merged.radius() <= BIRCH_THRESHOLD {
                    leaves[g] = merged;
                    membership[i] = g;
                } else {
                    leaves.push(Cf::from_point(point));
                    membership[i] = leaves.len() - 1;
                }
            }
            None => {
                leaves.push(Cf::from_point(point));
                membership[i] = 0;
            }
        }
        // branching limit: condense the coarsest pair of subclusters
        while leaves.len() > BIRCH_BRANCHING {
            let (mut bi, mut bj, mut best) = (0, 1, f64::INFINITY);
            for a in 0..leaves.len() {
                for b in (a + 1)..leaves.len() {
                    let d = sq_dist(&leaves[a].centroid(), &leaves[b].centroid());
                    if d < best {
                        best = d;
                        bi = a;
                        bj = b;
                    }
                }
            }
            let merged = leaves[bi].merge(&leaves[bj]);
            leaves[bi] = merged;
            let last = leaves.len() - 1;
            leaves.swap_remove(bj);
            for m in membership.iter_mut() {
                if *m == bj {
                    *m = bi;
                } else if *m == last {
                    *m = bj;
                }
            }
        }
    }
    if leaves.len() < k {
        // too few subclusters to cut at k: cluster the raw points
        let assignments = ward(&rows, k);
        return Ok(ClusterResult {
            assignments,
            k,
            inertia: None,
            seed,
            graph_patched: false,
        });
    }
    let centroids: Vec<Vec<f64>> = leaves.iter().map(|cf| cf.centroid()).collect();
    let global = ward(&centroids, k);
    let assignments: Vec<usize> = membership.iter().map(|&g| global[g]).collect();
    Ok(ClusterResult {
        assignments,
        k,
        inertia: None,
        seed,
        graph_patched: false,
    })
}

// ------------------------------------------------------------- metrics

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityScores {
    pub silhouette: f64,
    pub calinski_harabasz: f64,
    pub davies_bouldin: f64,
}

/// Silhouette, Calinski–Harabasz, and Davies–Bouldin for a labeled
/// partition. Singleton clusters contribute silhouette 0.
pub fn cluster_quality(x: &DMatrix<f64>, labels: &[usize]) -> Result<QualityScores, ClusterError> {
    let n = x.nrows();
    if labels.len() != n {
        return Err(ClusterError::LengthMismatch {
            left: labels.len(),
            right: n,
        });
    }
    let k = labels.iter().copied().max().map_or(0, |m| m + 1);
    let sizes: Vec<usize> = (0..k).map(|c| labels.iter().filter(|&&l| l == c).count()).collect();
    if sizes.iter().filter(|&&s| s > 0).count() < 2 {
        return Err(ClusterError::SingleCluster);
    }
    let rows: Vec<Vec<f64>> = (0..n).map(|i| row(x, i)).collect();

    // silhouette
    let mut silhouette_sum = 0.0;
    for i in 0..n {
        if sizes[labels[i]] == 1 {
            continue; // convention: singleton term is 0
        }
        let mut mean_dist = vec![0.0; k];
        for j in 0..n {
            if i != j {
                mean_dist[labels[j]] += sq_dist(&rows[i], &rows[j]).sqrt();
            }
        }
        let a = mean_dist[labels[i]] / (sizes[labels[i]] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != labels[i] && sizes[c] > 0)
            .map(|c| mean_dist[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        silhouette_sum += (b - a) / a.max(b);
    }
    let silhouette = silhouette_sum / n as f64;

    // centroids
    let p = x.ncols();
    let mut centroids = vec![vec![0.0; p]; k];
    for i in 0..n {
        for j in 0..p {
            centroids[labels[i]][j] += rows[i][j];
        }
    }
    for c in 0..k {
        if sizes[c] > 0 {
            for j in 0..p {
                centroids[c][j] /= sizes[c] as f64;
            }
        }
    }
    let overall: Vec<f64> = (0..p)
        .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64)
        .collect();

    // Calinski-Harabasz
    let between: f64 = (0..k)
        .map(|c| sizes[c] as f64 * sq_dist(&centroids[c], &overall))
        .sum();
    let within: f64 = (0..n).map(|i| sq_dist(&rows[i], &centroids[labels[i]])).sum();
    let k_eff = sizes.iter().filter(|&&s| s > 0).count() as f64;
    let calinski_harabasz = if within > 0.0 {
        (between / (k_eff - 1.0)) / (within / (n as f64 - k_eff))
    } else {
        f64::INFINITY
    };

    // Davies-Bouldin
    let scatter: Vec<f64> = (0..k)
        .map(|c| {
            if sizes[c] == 0 {
                return 0.0;
            }
            (0..n)
                .filter(|&i| labels[i] == c)
                .map(|i| sq_dist(&rows[i], &centroids[c]).sqrt())
                .sum::<f64>()
                / sizes[c] as f64
        })
        .collect();
    let mut db_sum = 0.0;
    for a in 0..k {
        if sizes[a] == 0 {
            continue;
        }
        let worst = (0..k)
            .filter(|&b| b != a && sizes[b] > 0)
            .map(|b| (scatter[a] + scatter[b]) / sq_dist(&centroids[a], &centroids[b]).sqrt())
            .fold(0.0f64, f64::max);
        db_sum += worst;
    }
    let davies_bouldin = db_sum / k_eff;

    Ok(QualityScores {
        silhouette,
        calinski_harabasz,
        davies_bouldin,
    })
}

/// Adjusted Rand index from the pair-counting contingency formula.
pub fn adjusted_rand(y_true: &[usize], labels: &[usize]) -> Result<f64, ClusterError> {
    if y_true.len() != labels.len() {
        return Err(ClusterError::LengthMismatch {
            left: y_true.len(),
            right: labels.len(),
        });
    }
    let n = y_true.len();
    if n == 0 {
        return Err(ClusterError::EmptyInput);
    }
    let r = y_true.iter().max().unwrap() + 1;
    let c = labels.iter().max().unwrap() + 1;
    let mut table = vec![vec![0u64; c]; r];
    for (t, l) in y_true.iter().zip(labels) {
        table[*t][*l] += 1;
    }
    // integer pair counts throughout; a single final division keeps
    // rational results (like -1/2) exact in floating point
    let comb2 = |v: u128| v * v.saturating_sub(1) / 2;
    let sum_cells: u128 = table.iter().flatten().map(|&v| comb2(v as u128)).sum();
    let sum_rows: u128 = table
        .iter()
        .map(|row| comb2(row.iter().sum::<u64>() as u128))
        .sum();
    let sum_cols: u128 = (0..c)
        .map(|j| comb2(table.iter().map(|row| row[j]).sum::<u64>() as u128))
        .sum();
    let total = comb2(n as u128);
    // ARI = (total*index - rows*cols) / (total*(rows+cols)/2 - rows*cols)
    let numerator = 2 * total as i128 * sum_cells as i128 - 2 * (sum_rows * sum_cols) as i128;
    let denominator =
        total as i128 * (sum_rows + sum_cols) as i128 - 2 * (sum_rows * sum_cols) as i128;
    if denominator == 0 {
        return Ok(1.0); // both partitions trivial
    }
    Ok(numerator as f64 / denominator as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobustnessStats {
    pub mean: f64,
    pub variance: f64,
    /// Normalized variance: sample sd over mean.
    pub nvar: f64,
}

/// Sample mean/variance and NVar = sd/mean of a metric series.
pub fn robustness_stats(series: &[f64]) -> Result<RobustnessStats, ClusterError> {
    if series.is_empty() {
        return Err(ClusterError::EmptyInput);
    }
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    let variance = if series.len() > 1 {
        series.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    if mean == 0.0 && variance > 0.0 {
        return Err(ClusterError::ZeroMean);
    }
    let nvar = if variance == 0.0 { 0.0 } else { variance.sqrt() / mean };
    Ok(RobustnessStats {
        mean,
        variance,
        nvar,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn blobs3(per: usize) -> (DMatrix<f64>, Vec<usize>) {
        // inter-blob distance far above the within-blob spread
        let centers = [(0.0, 0.0), (30.0, 0.0), (0.0, 30.0)];
        let mut rows = Vec::new();
        let mut truth = Vec::new();
        for (c, (cx, cy)) in centers.iter().enumerate() {
            for i in 0..per {
                let angle = i as f64 * 2.399963; // golden-angle spread
                let radius = 0.5 * (i as f64 / per as f64);
                rows.push(vec![cx + radius * angle.cos(), cy + radius * angle.sin()]);
                truth.push(c);
            }
        }
        let data = DMatrix::from_fn(rows.len(), 2, |i, j| rows[i][j]);
        (data, truth)
    }

    #[test]
    fn all_algorithms_recover_separated_blobs() {
        let (x, truth) = blobs3(20);
        for algo in ClusterAlgo::ALL {
            let result = cluster(algo, &x, 3, 7).unwrap();
            let ari = adjusted_rand(&truth, &result.assignments).unwrap();
            assert_relative_eq!(ari, 1.0, epsilon = 1e-12);
            assert!(result.assignments.iter().all(|&a| a < 3));
            for c in 0..3 {
                assert!(result.assignments.contains(&c), "{} lost cluster {c}", algo.tag());
            }
        }
    }

    #[test]
    fn kmeans_with_k_equal_n_gives_zero_inertia() {
        let x = DMatrix::from_row_slice(4, 1, &[0.0, 5.0, 11.0, 20.0]);
        let result = cluster(ClusterAlgo::KMeans, &x, 4, 3).unwrap();
        assert_relative_eq!(result.inertia.unwrap(), 0.0);
        let mut sorted = result.assignments.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, vec![0, 1, 2, 3]);
    }

    fn rings(per: usize) -> (DMatrix<f64>, Vec<usize>) {
        let mut rows = Vec::new();
        let mut truth = Vec::new();
        for (c, radius) in [1.0, 6.0].iter().enumerate() {
            for i in 0..per {
                let angle = i as f64 / per as f64 * std::f64::consts::TAU;
                rows.push(vec![radius * angle.cos(), radius * angle.sin()]);
                truth.push(c);
            }
        }
        (DMatrix::from_fn(rows.len(), 2, |i, j| rows[i][j]), truth)
    }

    #[test]
    fn spectral_beats_kmeans_on_concentric_rings() {
        let (x, truth) = rings(60);
        let spectral = cluster(ClusterAlgo::Spectral, &x, 2, 5).unwrap();
        let km = cluster(ClusterAlgo::KMeans, &x, 2, 5).unwrap();
        let ari_spectral = adjusted_rand(&truth, &spectral.assignments).unwrap();
        let ari_kmeans = adjusted_rand(&truth, &km.assignments).unwrap();
        assert!(
            ari_spectral > ari_kmeans,
            "spectral {ari_spectral} <= kmeans {ari_kmeans}"
        );
        assert_relative_eq!(ari_spectral, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn spectral_flags_disconnected_graphs() {
        // two groups of 15: every point's 10 nearest neighbors stay in
        // its own group, so the affinity graph is disconnected and the
        // epsilon patch must kick in
        let mut values = Vec::new();
        let mut truth = Vec::new();
        for i in 0..15 {
            values.push(i as f64 * 0.1);
            truth.push(0usize);
        }
        for i in 0..15 {
            values.push(1000.0 + i as f64 * 0.1);
            truth.push(1usize);
        }
        let x = DMatrix::from_row_slice(30, 1, &values);
        let result = cluster(ClusterAlgo::Spectral, &x, 2, 1).unwrap();
        assert!(result.graph_patched, "disconnected graph must be flagged");
        let ari = adjusted_rand(&truth, &result.assignments).unwrap();
        assert_relative_eq!(ari, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn kmeans_inertia_never_increases_within_a_restart() {
        let (x, _) = blobs3(15);
        for seed in 0..5 {
            let trace = kmeans_single(&x, 3, seed);
            for w in trace.inertia_per_iter.windows(2) {
                assert!(w[1] <= w[0] + 1e-9, "inertia rose: {} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn algorithms_are_deterministic_given_seed() {
        let (x, _) = blobs3(12);
        for algo in ClusterAlgo::ALL {
            let a = cluster(algo, &x, 3, 99).unwrap();
            let b = cluster(algo, &x, 3, 99).unwrap();
            assert_eq!(a.assignments, b.assignments, "{}", algo.tag());
        }
    }

    #[test]
    fn silhouette_hand_computed_fixture() {
        let x = DMatrix::from_row_slice(4, 2, &[0.0, 0.0, 0.0, 1.0, 10.0, 0.0, 10.0, 1.0]);
        let labels = vec![0, 0, 1, 1];
        let q = cluster_quality(&x, &labels).unwrap();
        // a = 1, b = (10 + sqrt(101)) / 2 for every point by symmetry
        let b = (10.0 + 101.0f64.sqrt()) / 2.0;
        let expected = (b - 1.0) / b;
        assert_relative_eq!(q.silhouette, expected, epsilon = 1e-12);
        assert!(expected > 0.90 && expected < 0.91);
    }

    #[test]
    fn singleton_cluster_contributes_zero_silhouette() {
        let x = DMatrix::from_row_slice(3, 1, &[0.0, 0.2, 50.0]);
        let labels = vec![0, 0, 1];
        let q = cluster_quality(&x, &labels).unwrap();
        // hand computation: singleton term 0; the pair's terms dominate
        let s0 = (50.0 - 0.2) / 50.0f64.max(0.2);
        let s1 = (49.8 - 0.2) / 49.8f64.max(0.2);
        assert_relative_eq!(q.silhouette, (s0 + s1 + 0.0) / 3.0, epsilon = 1e-9);
    }

    #[test]
    fn davies_bouldin_diverges_as_clusters_approach() {
        let make = |sep: f64| {
            let x = DMatrix::from_row_slice(
                4,
                1,
                &[0.0, 1.0, sep, sep + 1.0],
            );
            cluster_quality(&x, &[0, 0, 1, 1]).unwrap().davies_bouldin
        };
        let wide = make(50.0);
        let mid = make(10.0);
        let tight = make(3.0);
        assert!(tight > mid && mid > wide, "{tight} {mid} {wide}");
    }

    #[test]
    fn calinski_harabasz_grows_with_separation() {
        let make = |sep: f64| {
            let x = DMatrix::from_row_slice(4, 1, &[0.0, 1.0, sep, sep + 1.0]);
            cluster_quality(&x, &[0, 0, 1, 1]).unwrap().calinski_harabasz
        };
        assert!(make(50.0) > make(10.0));
        assert!(make(10.0) > make(3.0));
    }

    #[test]
    fn quality_requires_two_clusters() {
        let x = DMatrix::from_row_slice(3, 1, &[0.0, 1.0, 2.0]);
        assert!(matches!(
            cluster_quality(&x, &[0, 0, 0]),
            Err(ClusterError::SingleCluster)
        ));
    }

    #[test]
    fn ari_identity_permutation_and_fixture() {
        let a = vec![0, 0, 1, 1, 2, 2];
        assert_relative_eq!(adjusted_rand(&a, &a).unwrap(), 1.0);
        // permuted ids leave ARI unchanged
        let permuted = vec![2, 2, 0, 0, 1, 1];
        assert_relative_eq!(adjusted_rand(&a, &permuted).unwrap(), 1.0);
        // contingency-table hand computation
        let ari = adjusted_rand(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap();
        assert_relative_eq!(ari, -0.5, epsilon = 1e-12);
    }

    #[test]
    fn robustness_stats_fixtures() {
        let constant = robustness_stats(&[4.0, 4.0, 4.0]).unwrap();
        assert_eq!(constant.variance, 0.0);
        assert_eq!(constant.nvar, 0.0);

        let pair = robustness_stats(&[1.0, 3.0]).unwrap();
        assert_relative_eq!(pair.mean, 2.0);
        assert_relative_eq!(pair.variance, 2.0);
        assert_relative_eq!(pair.nvar, 2.0f64.sqrt() / 2.0, epsilon = 1e-12);
        // invariant nvar * mean = sd
        assert_relative_eq!(pair.nvar * pair.mean, pair.variance.sqrt(), epsilon = 1e-9);

        // scale invariance of nvar
        let scaled = robustness_stats(&[3.0, 9.0]).unwrap();
        assert_relative_eq!(scaled.nvar, pair.nvar, epsilon = 1e-12);

        assert!(matches!(
            robustness_stats(&[-1.0, 1.0]),
            Err(ClusterError::ZeroMean)
        ));
    }

    #[test]
    fn k_out_of_range_is_rejected() {
        let x = DMatrix::from_row_slice(3, 1, &[0.0, 1.0, 2.0]);
        assert!(matches!(
            cluster(ClusterAlgo::KMeans, &x, 1, 0),
            Err(ClusterError::KOutOfRange { .. })
        ));
        assert!(matches!(
            cluster(ClusterAlgo::KMeans, &x, 4, 0),
            Err(ClusterError::KOutOfRange { .. })
        ));
    }
}
