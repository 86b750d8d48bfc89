//! Supervised classifiers with probability outputs, evaluation metrics,
//! and grid-search tuning.
//!
//! Eight algorithms share one interface: linear SVC (Pegasos subgradient
//! with a Platt-style sigmoid for probabilities), logistic regression,
//! Gaussian and Bernoulli naive Bayes, a CART decision tree, a random
//! forest, a one-hidden-layer MLP, and k-nearest neighbors. Everything
//! is deterministic given the spec seed.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fusion::{FeatureMatrix, Label};

#[derive(Debug, Error)]
pub enum LearnError {
    #[error("training labels contain a single class")]
    SingleClassTraining,
    #[error("non-finite feature value at row {row}, column {col}")]
    NonFiniteFeature { row: usize, col: usize },
    #[error("feature columns do not match the training fingerprint")]
    ColumnMismatch,
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("a class has fewer members than the {folds} requested folds")]
    FoldTooSmall { folds: usize },
    #[error("unknown hyperparameter {key:?} for {algo}")]
    UnknownHyperparameter { algo: String, key: String },
    #[error("training set is empty")]
    EmptyTraining,
    #[error("model io: {0}")]
    Io(#[from] std::io::Error),
    #[error("model serialization: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Algo {
    Svc,
    Lr,
    Gnb,
    Bnb,
    Dt,
    Rf,
    Mlp,
    Knn,
}

impl Algo {
    pub const ALL: [Algo; 8] = [
        Algo::Svc,
        Algo::Lr,
        Algo::Gnb,
        Algo::Bnb,
        Algo::Dt,
        Algo::Rf,
        Algo::Mlp,
        Algo::Knn,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Algo::Svc => "SVC",
            Algo::Lr => "LR",
            Algo::Gnb => "GNB",
            Algo::Bnb => "BNB",
            Algo::Dt => "DT",
            Algo::Rf => "RF",
            Algo::Mlp => "MLP",
            Algo::Knn => "KNN",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Algo> {
        Algo::ALL.into_iter().find(|a| a.tag() == tag)
    }

    /// Hyperparameter keys with their defaults. `max_depth` 0 means
    /// unlimited; boolean knobs use 0/1.
    fn defaults(self) -> &'static [(&'static str, f64)] {
        match self {
            Algo::Svc => &[("lambda", 1e-4), ("epochs", 20.0)],
            Algo::Lr => &[("lr", 0.1), ("l2", 1e-4), ("epochs", 1000.0)],
            Algo::Gnb => &[("var_smoothing", 1e-9)],
            Algo::Bnb => &[("binarize", 0.5), ("alpha", 1.0)],
            Algo::Dt => &[("max_depth", 0.0), ("min_split", 2.0)],
            Algo::Rf => &[
                ("n_trees", 100.0),
                ("max_depth", 0.0),
                ("min_split", 2.0),
                ("bootstrap", 1.0),
                ("max_features", 0.0), // 0 = floor(sqrt(p)), clamped to >= 1
            ],
            Algo::Mlp => &[("hidden", 100.0), ("lr", 1e-3), ("epochs", 200.0)],
            Algo::Knn => &[("k", 5.0)],
        }
    }
}

/// Algorithm choice plus hyperparameters and seed. Unknown keys are
/// rejected at construction time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierSpec {
    pub algo: Algo,
    pub hyper: BTreeMap<String, f64>,
    pub seed: u64,
}

impl ClassifierSpec {
    pub fn new(algo: Algo, seed: u64) -> ClassifierSpec {
        ClassifierSpec {
            algo,
            hyper: algo
                .defaults()
                .iter()
                .map(|(k, v)| (k.to_string(), *v))
                .collect(),
            seed,
        }
    }

    pub fn set(mut self, key: &str, value: f64) -> Result<ClassifierSpec, LearnError> {
        if !self.algo.defaults().iter().any(|(k, _)| *k == key) {
            return Err(LearnError::UnknownHyperparameter {
                algo: self.algo.tag().to_string(),
                key: key.to_string(),
            });
        }
        self.hyper.insert(key.to_string(), value);
        Ok(self)
    }

    fn get(&self, key: &str) -> f64 {
        self.hyper[key]
    }
}

/// One decision-tree node; leaves carry class-frequency probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    Leaf {
        proba: Vec<f64>,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
}

impl TreeNode {
    fn proba_for(&self, row: &[f64]) -> &[f64] {
        match self {
            TreeNode::Leaf { proba } => proba,
            TreeNode::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                if row[*feature] <= *threshold {
                    left.proba_for(row)
                } else {
                    right.proba_for(row)
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ModelParams {
    Dt {
        tree: TreeNode,
    },
    Rf {
        trees: Vec<TreeNode>,
    },
    Gnb {
        log_prior: Vec<f64>,
        mean: Vec<Vec<f64>>,
        var: Vec<Vec<f64>>,
    },
    Bnb {
        binarize: f64,
        log_prior: Vec<f64>,
        log_theta: Vec<Vec<f64>>,
        log_one_minus_theta: Vec<Vec<f64>>,
    },
    /// Shared by LR (sigmoid on the raw score) and SVC (Platt sigmoid
    /// on the margin).
    Linear {
        weights: Vec<f64>,
        bias: f64,
        platt: Option<(f64, f64)>,
    },
    Mlp {
        w1: Vec<Vec<f64>>,
        b1: Vec<f64>,
        w2: Vec<Vec<f64>>,
        b2: Vec<f64>,
    },
    Knn {
        x: Vec<Vec<f64>>,
        y: Vec<usize>,
        k: usize,
    },
}

/// A fitted classifier, serializable as versioned JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub version: u32,
    pub algo: Algo,
    /// Class list in lexicographic name order; probability columns
    /// follow this order.
    pub classes: Vec<Label>,
    /// Training column names; predict rejects differing inputs.
    pub fingerprint: Vec<String>,
    pub params: ModelParams,
}

pub const MODEL_FORMAT_VERSION: u32 = 1;

fn rows_of(x: &FeatureMatrix) -> Result<Vec<Vec<f64>>, LearnError> {
    let mut rows = Vec::with_capacity(x.n_rows());
    for i in 0..x.n_rows() {
        let mut row = Vec::with_capacity(x.n_cols());
        for j in 0..x.n_cols() {
            let v = x.data[(i, j)];
            if !v.is_finite() {
                return Err(LearnError::NonFiniteFeature { row: i, col: j });
            }
            row.push(v);
        }
        rows.push(row);
    }
    Ok(rows)
}

fn class_list(y: &[Label]) -> Result<Vec<Label>, LearnError> {
    let mut classes: Vec<Label> = Vec::new();
    for label in y {
        if !classes.contains(label) {
            classes.push(*label);
        }
    }
    classes.sort_by_key(|c| c.name());
    if classes.len() < 2 {
        return Err(LearnError::SingleClassTraining);
    }
    Ok(classes)
}

/// Fit a classifier. Deterministic for a fixed spec, seed, and data.
pub fn train(spec: &ClassifierSpec, x: &FeatureMatrix, y: &[Label]) -> Result<Model, LearnError> {
    if x.n_rows() != y.len() {
        return Err(LearnError::LengthMismatch {
            left: x.n_rows(),
            right: y.len(),
        });
    }
    if x.n_rows() < 2 {
        return Err(LearnError::EmptyTraining);
    }
    let classes = class_list(y)?;
    let rows = rows_of(x)?;
    let yi: Vec<usize> = y
        .iter()
        .map(|l| classes.iter().position(|c| c == l).unwrap())
        .collect();
    let n_classes = classes.len();
    let params = match spec.algo {
        Algo::Dt => ModelParams::Dt {
            tree: fit_tree(spec, &rows, &yi, n_classes, None),
        },
        Algo::Rf => ModelParams::Rf {
            trees: fit_forest(spec, &rows, &yi, n_classes),
        },
        Algo::Gnb => fit_gnb(spec, &rows, &yi, n_classes),
        Algo::Bnb => fit_bnb(spec, &rows, &yi, n_classes),
        Algo::Lr => fit_lr(spec, &rows, &yi),
        Algo::Svc => fit_svc(spec, &rows, &yi),
        Algo::Mlp => fit_mlp(spec, &rows, &yi, n_classes),
        Algo::Knn => ModelParams::Knn {
            x: rows.clone(),
            y: yi.clone(),
            k: (spec.get("k") as usize).max(1),
        },
    };
    Ok(Model {
        version: MODEL_FORMAT_VERSION,
        algo: spec.algo,
        classes,
        fingerprint: x.names.clone(),
        params,
    })
}

// ---------------------------------------------------------------- trees

struct TreeConfig {
    max_depth: usize, // 0 = unlimited
    min_split: usize,
    n_classes: usize,
    max_features: usize, // 0 = all
}

fn gini(counts: &[f64], total: f64) -> f64 {
    if total == 0.0 {
        return 0.0;
    }
    1.0 - counts.iter().map(|c| (c / total).powi(2)).sum::<f64>()
}

fn leaf(counts: &[f64]) -> TreeNode {
    let total: f64 = counts.iter().sum();
    TreeNode::Leaf {
        proba: counts.iter().map(|c| c / total).collect(),
    }
}

fn build_tree(
    rows: &[Vec<f64>],
    y: &[usize],
    idx: &[usize],
    depth: usize,
    cfg: &TreeConfig,
    rng: &mut Option<&mut ChaCha20Rng>,
) -> TreeNode {
    let mut counts = vec![0.0; cfg.n_classes];
    for &i in idx {
        counts[y[i]] += 1.0;
    }
    let total = idx.len() as f64;
    let parent_gini = gini(&counts, total);
    let depth_limited = cfg.max_depth > 0 && depth >= cfg.max_depth;
    if parent_gini == 0.0 || idx.len() < cfg.min_split || depth_limited {
        return leaf(&counts);
    }
    let p = rows[0].len();
    let features: Vec<usize> = match rng {
        Some(rng) if cfg.max_features > 0 && cfg.max_features < p => {
            let mut all: Vec<usize> = (0..p).collect();
            all.shuffle(*rng);
            let mut picked = all[..cfg.max_features].to_vec();
            picked.sort_unstable();
            picked
        }
        _ => (0..p).collect(),
    };

    // Best split: lowest weighted Gini; ties resolved by scan order
    // (lowest feature index, then lowest threshold).
    let mut best: Option<(f64, usize, f64)> = None;
    for &j in &features {
        let mut order: Vec<usize> = idx.to_vec();
        order.sort_by(|&a, &b| rows[a][j].partial_cmp(&rows[b][j]).unwrap());
        let mut left_counts = vec![0.0; cfg.n_classes];
        for w in 0..(order.len() - 1) {
            left_counts[y[order[w]]] += 1.0;
            let lo = rows[order[w]][j];
            let hi = rows[order[w + 1]][j];
            if lo == hi {
                continue;
            }
            let threshold = lo + (hi - lo) / 2.0;
            let n_left = (w + 1) as f64;
            let n_right = total - n_left;
            let right_counts: Vec<f64> = counts
                .iter()
                .zip(&left_counts)
                .map(|(c, l)| c - l)
                .collect();
            let weighted = (n_left * gini(&left_counts, n_left)
                + n_right * gini(&right_counts, n_right))
                / total;
            if best.map_or(true, |(score, _, _)| weighted < score) {
                best = Some((weighted, j, threshold));
            }
        }
    }
    let Some((score, feature, threshold)) = best else {
        return leaf(&counts);
    };
    // Zero-improvement splits are allowed (they can enable useful
    // splits deeper down, as in XOR); only regressions stop growth.
    if score > parent_gini {
        return leaf(&counts);
    }
    let (left_idx, right_idx): (Vec<usize>, Vec<usize>) =
        idx.iter().partition(|&&i| rows[i][feature] <= threshold);
    TreeNode::Split {
        feature,
        threshold,
        left: Box::new(build_tree(rows, y, &left_idx, depth + 1, cfg, rng)),
        right: Box::new(build_tree(rows, y, &right_idx, depth + 1, cfg, rng)),
    }
}

fn fit_tree(
    spec: &ClassifierSpec,
    rows: &[Vec<f64>],
    y: &[usize],
    n_classes: usize,
    mut rng: Option<&mut ChaCha20Rng>,
) -> TreeNode {
    let cfg = TreeConfig {
        max_depth: spec.get("max_depth") as usize,
        min_split: (spec.get("min_split") as usize).max(2),
        n_classes,
        max_features: spec
            .hyper
            .get("max_features")
            .map(|v| resolve_max_features(*v, rows[0].len()))
            .unwrap_or(0),
    };
    let idx: Vec<usize> = (0..rows.len()).collect();
    build_tree(rows, y, &idx, 0, &cfg, &mut rng)
}

fn resolve_max_features(raw: f64, p: usize) -> usize {
    if raw <= 0.0 {
        ((p as f64).sqrt().floor() as usize).max(1)
    } else {
        (raw as usize).min(p)
    }
}

fn fit_forest(
    spec: &ClassifierSpec,
    rows: &[Vec<f64>],
    y: &[usize],
    n_classes: usize,
) -> Vec<TreeNode> {
    let n_trees = (spec.get("n_trees") as usize).max(1);
    let bootstrap = spec.get("bootstrap") != 0.0;
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let n = rows.len();
    (0..n_trees)
        .map(|_| {
            let idx: Vec<usize> = if bootstrap {
                (0..n).map(|_| rng.gen_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            let cfg = TreeConfig {
                max_depth: spec.get("max_depth") as usize,
                min_split: (spec.get("min_split") as usize).max(2),
                n_classes,
                max_features: resolve_max_features(spec.get("max_features"), rows[0].len()),
            };
            let mut tree_rng = Some(&mut rng);
            build_tree(rows, y, &idx, 0, &cfg, &mut tree_rng)
        })
        .collect()
}

// ---------------------------------------------------------- naive Bayes

fn fit_gnb(spec: &ClassifierSpec, rows: &[Vec<f64>], y: &[usize], n_classes: usize) -> ModelParams {
    let p = rows[0].len();
    let n = rows.len() as f64;
    // overall max column variance scales the smoothing floor
    let mut overall_max_var = 0.0f64;
    for j in 0..p {
        let mean: f64 = rows.iter().map(|r| r[j]).sum::<f64>() / n;
        let var: f64 = rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
        overall_max_var = overall_max_var.max(var);
    }
    let floor = spec.get("var_smoothing") * overall_max_var.max(1.0);
    let mut log_prior = vec![0.0; n_classes];
    let mut mean = vec![vec![0.0; p]; n_classes];
    let mut var = vec![vec![0.0; p]; n_classes];
    for c in 0..n_classes {
        let members: Vec<&Vec<f64>> = rows
            .iter()
            .zip(y)
            .filter(|(_, &yc)| yc == c)
            .map(|(r, _)| r)
            .collect();
        let nc = members.len() as f64;
        log_prior[c] = (nc / n).ln();
        for j in 0..p {
            let m: f64 = members.iter().map(|r| r[j]).sum::<f64>() / nc;
            let v: f64 = members.iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / nc;
            mean[c][j] = m;
            var[c][j] = v + floor;
        }
    }
    ModelParams::Gnb {
        log_prior,
        mean,
        var,
    }
}

fn fit_bnb(spec: &ClassifierSpec, rows: &[Vec<f64>], y: &[usize], n_classes: usize) -> ModelParams {
    let p = rows[0].len();
    let alpha = spec.get("alpha");
    let binarize = spec.get("binarize");
    let mut log_prior = vec![0.0; n_classes];
    let mut log_theta = vec![vec![0.0; p]; n_classes];
    let mut log_one_minus_theta = vec![vec![0.0; p]; n_classes];
    let n = rows.len() as f64;
    for c in 0..n_classes {
        let members: Vec<&Vec<f64>> = rows
            .iter()
            .zip(y)
            .filter(|(_, &yc)| yc == c)
            .map(|(r, _)| r)
            .collect();
        let nc = members.len() as f64;
        log_prior[c] = (nc / n).ln();
        for j in 0..p {
            let ones = members.iter().filter(|r| r[j] >= binarize).count() as f64;
            let theta = (ones + alpha) / (nc + 2.0 * alpha);
            log_theta[c][j] = theta.ln();
            log_one_minus_theta[c][j] = (1.0 - theta).ln();
        }
    }
    ModelParams::Bnb {
        binarize,
        log_prior,
        log_theta,
        log_one_minus_theta,
    }
}

// ------------------------------------------------------- linear models

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn fit_lr(spec: &ClassifierSpec, rows: &[Vec<f64>], y: &[usize]) -> ModelParams {
    let p = rows[0].len();
    let n = rows.len() as f64;
    let lr = spec.get("lr");
    let l2 = spec.get("l2");
    let epochs = spec.get("epochs") as usize;
    let mut w = vec![0.0; p];
    let mut b = 0.0;
    for _ in 0..epochs {
        let mut gw = vec![0.0; p];
        let mut gb = 0.0;
        for (row, &yc) in rows.iter().zip(y) {
            let z = dot(&w, row) + b;
            let err = sigmoid(z) - yc as f64; // class index 1 is positive
            for j in 0..p {
                gw[j] += err * row[j];
            }
            gb += err;
        }
        for j in 0..p {
            w[j] -= lr * (gw[j] / n + l2 * w[j]);
        }
        b -= lr * gb / n;
    }
    ModelParams::Linear {
        weights: w,
        bias: b,
        platt: None,
    }
}

fn fit_svc(spec: &ClassifierSpec, rows: &[Vec<f64>], y: &[usize]) -> ModelParams {
    let p = rows[0].len();
    let lambda = spec.get("lambda");
    let epochs = spec.get("epochs") as usize;
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let mut w = vec![0.0; p];
    let mut b = 0.0;
    let mut t: u64 = 0;
    let cap = 1.0 / lambda.sqrt();
    let mut order: Vec<usize> = (0..rows.len()).collect();
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            t += 1;
            let eta = 1.0 / (lambda * t as f64);
            let yi = if y[i] == 1 { 1.0 } else { -1.0 };
            let margin = yi * (dot(&w, &rows[i]) + b);
            let decay = 1.0 - eta * lambda;
            for wj in w.iter_mut() {
                *wj *= decay;
            }
            b *= decay;
            if margin < 1.0 {
                for j in 0..p {
                    w[j] += eta * yi * rows[i][j];
                }
                b += eta * yi;
            }
            // projection onto the ball of radius 1/sqrt(lambda)
            let norm = (dot(&w, &w) + b * b).sqrt();
            if norm > cap {
                let shrink = cap / norm;
                for wj in w.iter_mut() {
                    *wj *= shrink;
                }
                b *= shrink;
            }
        }
    }
    // Platt-style sigmoid on training margins: p(class 1 | m) =
    // sigmoid(a*m + c). Margins are scale-normalized before the
    // cross-entropy fit so gradient descent stays stable; the scale is
    // folded back into the stored slope.
    let margins: Vec<f64> = rows.iter().map(|r| dot(&w, r) + b).collect();
    let scale = margins
        .iter()
        .fold(0.0f64, |acc, m| acc.max(m.abs()))
        .max(1e-12);
    let targets: Vec<f64> = y.iter().map(|&yc| yc as f64).collect();
    let (mut a, mut c) = (1.0, 0.0);
    let n = margins.len() as f64;
    for _ in 0..1000 {
        let mut ga = 0.0;
        let mut gc = 0.0;
        for (m, target) in margins.iter().zip(&targets) {
            let err = sigmoid(a * m / scale + c) - target;
            ga += err * m / scale;
            gc += err;
        }
        a -= 0.5 * ga / n;
        c -= 0.5 * gc / n;
    }
    ModelParams::Linear {
        weights: w,
        bias: b,
        platt: Some((a / scale, c)),
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

// ----------------------------------------------------------------- MLP

fn fit_mlp(spec: &ClassifierSpec, rows: &[Vec<f64>], y: &[usize], n_classes: usize) -> ModelParams {
    let p = rows[0].len();
    let hidden = (spec.get("hidden") as usize).max(1);
    let lr = spec.get("lr");
    let epochs = spec.get("epochs") as usize;
    let n = rows.len();
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let glorot = |fan_in: usize, fan_out: usize, rng: &mut ChaCha20Rng| {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        rng.gen_range(-limit..limit)
    };
    let mut w1: Vec<Vec<f64>> = (0..p)
        .map(|_| (0..hidden).map(|_| glorot(p, hidden, &mut rng)).collect())
        .collect();
    let mut b1 = vec![0.0; hidden];
    let mut w2: Vec<Vec<f64>> = (0..hidden)
        .map(|_| {
            (0..n_classes)
                .map(|_| glorot(hidden, n_classes, &mut rng))
                .collect()
        })
        .collect();
    let mut b2 = vec![0.0; n_classes];
    for _ in 0..epochs {
        let mut gw1 = vec![vec![0.0; hidden]; p];
        let mut gb1 = vec![0.0; hidden];
        let mut gw2 = vec![vec![0.0; n_classes]; hidden];
        let mut gb2 = vec![0.0; n_classes];
        for (row, &yc) in rows.iter().zip(y) {
            // forward
            let mut h = b1.clone();
            for (j, &xj) in row.iter().enumerate() {
                for k in 0..hidden {
                    h[k] += xj * w1[j][k];
                }
            }
            let act: Vec<f64> = h.iter().map(|v| v.max(0.0)).collect();
            let mut z = b2.clone();
            for (k, &ak) in act.iter().enumerate() {
                for c in 0..n_classes {
                    z[c] += ak * w2[k][c];
                }
            }
            let probs = softmax(&z);
            // backward
            let dz: Vec<f64> = probs
                .iter()
                .enumerate()
                .map(|(c, pc)| pc - if c == yc { 1.0 } else { 0.0 })
                .collect();
            for k in 0..hidden {
                for c in 0..n_classes {
                    gw2[k][c] += act[k] * dz[c];
                }
            }
            for c in 0..n_classes {
                gb2[c] += dz[c];
            }
            let dh: Vec<f64> = (0..hidden)
                .map(|k| {
                    if h[k] > 0.0 {
                        (0..n_classes).map(|c| dz[c] * w2[k][c]).sum()
                    } else {
                        0.0
                    }
                })
                .collect();
            for (j, &xj) in row.iter().enumerate() {
                for k in 0..hidden {
                    gw1[j][k] += xj * dh[k];
                }
            }
            for k in 0..hidden {
                gb1[k] += dh[k];
            }
        }
        let scale = lr / n as f64;
        for j in 0..p {
            for k in 0..hidden {
                w1[j][k] -= scale * gw1[j][k];
            }
        }
        for k in 0..hidden {
            b1[k] -= scale * gb1[k];
            for c in 0..n_classes {
                w2[k][c] -= scale * gw2[k][c];
            }
        }
        for c in 0..n_classes {
            b2[c] -= scale * gb2[c];
        }
    }
    ModelParams::Mlp { w1, b1, w2, b2 }
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

fn normalize_log(logs: &[f64]) -> Vec<f64> {
    softmax(logs)
}

// ---------------------------------------------------------- prediction

/// Per-row class probabilities; columns follow `model.classes`.
/// Every row sums to 1.
pub fn predict_proba(model: &Model, x: &FeatureMatrix) -> Result<Vec<Vec<f64>>, LearnError> {
    if model.fingerprint != x.names {
        return Err(LearnError::ColumnMismatch);
    }
    let rows = rows_of(x)?;
    let n_classes = model.classes.len();
    let out: Vec<Vec<f64>> = rows
        .iter()
        .map(|row| match &model.params {
            ModelParams::Dt { tree } => tree.proba_for(row).to_vec(),
            ModelParams::Rf { trees } => {
                let mut acc = vec![0.0; n_classes];
                for tree in trees {
                    for (a, p) in acc.iter_mut().zip(tree.proba_for(row)) {
                        *a += p;
                    }
                }
                let total: f64 = acc.iter().sum();
                acc.iter().map(|a| a / total).collect()
            }
            ModelParams::Gnb {
                log_prior,
                mean,
                var,
            } => {
                let logs: Vec<f64> = (0..n_classes)
                    .map(|c| {
                        log_prior[c]
                            + row
                                .iter()
                                .enumerate()
                                .map(|(j, &xj)| {
                                    let v = var[c][j];
                                    -0.5 * ((2.0 * std::f64::consts::PI * v).ln()
                                        + (xj - mean[c][j]).powi(2) / v)
                                })
                                .sum::<f64>()
                    })
                    .collect();
                normalize_log(&logs)
            }
            ModelParams::Bnb {
                binarize,
                log_prior,
                log_theta,
                log_one_minus_theta,
            } => {
                let logs: Vec<f64> = (0..n_classes)
                    .map(|c| {
                        log_prior[c]
                            + row
                                .iter()
                                .enumerate()
                                .map(|(j, &xj)| {
                                    if xj >= *binarize {
                                        log_theta[c][j]
                                    } else {
                                        log_one_minus_theta[c][j]
                                    }
                                })
                                .sum::<f64>()
                    })
                    .collect();
                normalize_log(&logs)
            }
            ModelParams::Linear {
                weights,
                bias,
                platt,
            } => {
                let score = dot(weights, row) + bias;
                let p1 = match platt {
                    Some((a, c)) => sigmoid(a * score + c),
                    None => sigmoid(score),
                };
                vec![1.0 - p1, p1]
            }
            ModelParams::Mlp { w1, b1, w2, b2 } => {
                let hidden = b1.len();
                let mut h = b1.clone();
                for (j, &xj) in row.iter().enumerate() {
                    for k in 0..hidden {
                        h[k] += xj * w1[j][k];
                    }
                }
                let mut z = b2.clone();
                for (k, hk) in h.iter().enumerate() {
                    let a = hk.max(0.0);
                    for c in 0..n_classes {
                        z[c] += a * w2[k][c];
                    }
                }
                softmax(&z)
            }
            ModelParams::Knn { x, y, k } => {
                let mut dists: Vec<(f64, usize)> = x
                    .iter()
                    .enumerate()
                    .map(|(i, xi)| {
                        let d: f64 = xi
                            .iter()
                            .zip(row)
                            .map(|(a, b)| (a - b).powi(2))
                            .sum();
                        (d, i)
                    })
                    .collect();
                dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let k = (*k).min(dists.len());
                let mut votes = vec![0.0; n_classes];
                for &(_, i) in dists.iter().take(k) {
                    votes[y[i]] += 1.0;
                }
                votes.iter().map(|v| v / k as f64).collect()
            }
        })
        .collect();
    Ok(out)
}

/// Argmax of `predict_proba`; probability ties go to the class earlier
/// in lexicographic order.
pub fn predict(model: &Model, x: &FeatureMatrix) -> Result<Vec<Label>, LearnError> {
    let proba = predict_proba(model, x)?;
    Ok(proba
        .iter()
        .map(|row| {
            let mut best = 0;
            for (c, p) in row.iter().enumerate() {
                if *p > row[best] {
                    best = c;
                }
            }
            model.classes[best]
        })
        .collect())
}

// ---------------------------------------------------------- evaluation

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub classes: Vec<Label>,
    pub per_class: Vec<ClassMetrics>,
    pub weighted_precision: f64,
    pub weighted_recall: f64,
    pub weighted_f1: f64,
    /// confusion[i][j] = rows with true class i predicted as class j.
    pub confusion: Vec<Vec<usize>>,
}

/// Per-class precision/recall/F1 plus support-weighted averages.
/// Zero-division (no predictions or no support for a class) scores 0.
pub fn evaluate(y_true: &[Label], y_pred: &[Label]) -> Result<Metrics, LearnError> {
    if y_true.len() != y_pred.len() {
        return Err(LearnError::LengthMismatch {
            left: y_true.len(),
            right: y_pred.len(),
        });
    }
    let mut classes: Vec<Label> = Vec::new();
    for l in y_true.iter().chain(y_pred) {
        if !classes.contains(l) {
            classes.push(*l);
        }
    }
    classes.sort_by_key(|c| c.name());
    let k = classes.len();
    let index = |l: &Label| classes.iter().position(|c| c == l).unwrap();
    let mut confusion = vec![vec![0usize; k]; k];
    for (t, p) in y_true.iter().zip(y_pred) {
        confusion[index(t)][index(p)] += 1;
    }
    let mut per_class = Vec::with_capacity(k);
    let n = y_true.len() as f64;
    let (mut wp, mut wr, mut wf) = (0.0, 0.0, 0.0);
    for c in 0..k {
        let tp = confusion[c][c] as f64;
        let support: usize = confusion[c].iter().sum();
        let predicted: usize = (0..k).map(|r| confusion[r][c]).sum();
        let precision = if predicted > 0 { tp / predicted as f64 } else { 0.0 };
        let recall = if support > 0 { tp / support as f64 } else { 0.0 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        wp += precision * support as f64 / n;
        wr += recall * support as f64 / n;
        wf += f1 * support as f64 / n;
        per_class.push(ClassMetrics {
            precision,
            recall,
            f1,
            support,
        });
    }
    Ok(Metrics {
        classes,
        per_class,
        weighted_precision: wp,
        weighted_recall: wr,
        weighted_f1: wf,
        confusion,
    })
}

// --------------------------------------------------------- grid search

/// Deterministic stratified fold assignment: within each class, rows
/// are dealt round-robin to folds in ascending index order.
pub fn stratified_folds(y: &[Label], folds: usize) -> Result<Vec<usize>, LearnError> {
    let classes = class_list(y).unwrap_or_else(|_| {
        let mut c: Vec<Label> = y.first().copied().into_iter().collect();
        c.dedup();
        c
    });
    for class in &classes {
        let count = y.iter().filter(|l| *l == class).count();
        if count < folds {
            return Err(LearnError::FoldTooSmall { folds });
        }
    }
    let mut assignment = vec![0usize; y.len()];
    for class in &classes {
        let mut next = 0;
        for (i, l) in y.iter().enumerate() {
            if l == class {
                assignment[i] = next % folds;
                next += 1;
            }
        }
    }
    Ok(assignment)
}

/// Exhaustive search over the cartesian product of the grid, scored by
/// stratified k-fold cross-validated weighted F1. Ties keep the first
/// grid point in deterministic (sorted-key, listed-value) order.
pub fn grid_search(
    spec: &ClassifierSpec,
    x: &FeatureMatrix,
    y: &[Label],
    grid: &BTreeMap<String, Vec<f64>>,
    folds: usize,
) -> Result<(BTreeMap<String, f64>, f64), LearnError> {
    if folds < 2 {
        return Err(LearnError::FoldTooSmall { folds });
    }
    let assignment = stratified_folds(y, folds)?;
    let keys: Vec<&String> = grid.keys().collect();
    let mut candidates: Vec<BTreeMap<String, f64>> = vec![BTreeMap::new()];
    for key in &keys {
        let mut expanded = Vec::new();
        for base in &candidates {
            for value in &grid[*key] {
                let mut point = base.clone();
                point.insert((*key).clone(), *value);
                expanded.push(point);
            }
        }
        candidates = expanded;
    }
    let mut best: Option<(BTreeMap<String, f64>, f64)> = None;
    for point in candidates {
        let mut candidate_spec = spec.clone();
        for (key, value) in &point {
            candidate_spec = candidate_spec.set(key, *value)?;
        }
        let mut total = 0.0;
        for fold in 0..folds {
            let train_idx: Vec<usize> =
                (0..y.len()).filter(|i| assignment[*i] != fold).collect();
            let test_idx: Vec<usize> =
                (0..y.len()).filter(|i| assignment[*i] == fold).collect();
            let (xt, yt) = subset(x, y, &train_idx);
            let (xv, yv) = subset(x, y, &test_idx);
            let model = train(&candidate_spec, &xt, &yt)?;
            let pred = predict(&model, &xv)?;
            total += evaluate(&yv, &pred)?.weighted_f1;
        }
        let score = total / folds as f64;
        if best.as_ref().map_or(true, |(_, s)| score > *s) {
            best = Some((point, score));
        }
    }
    Ok(best.expect("grid is nonempty"))
}

/// Row subset of a matrix/label pair, preserving order.
pub fn subset(x: &FeatureMatrix, y: &[Label], idx: &[usize]) -> (FeatureMatrix, Vec<Label>) {
    let data = nalgebra::DMatrix::from_fn(idx.len(), x.n_cols(), |i, j| x.data[(idx[i], j)]);
    (
        FeatureMatrix {
            names: x.names.clone(),
            kinds: x.kinds.clone(),
            data,
        },
        idx.iter().map(|&i| y[i]).collect(),
    )
}

// --------------------------------------------------------- persistence

pub fn save_model(model: &Model, path: &std::path::Path) -> Result<(), LearnError> {
    let json = serde_json::to_string_pretty(model)?;
    std::fs::write(path, json)?;
    Ok(())
}

pub fn load_model(path: &std::path::Path) -> Result<Model, LearnError> {
    let json = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&json)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::distributions::Distribution;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;
    use statrs::distribution::Normal as NormalDist;

    fn matrix(rows: &[Vec<f64>]) -> FeatureMatrix {
        let names = (0..rows[0].len()).map(|j| format!("f{j}")).collect();
        FeatureMatrix::from_rows(names, rows)
    }

    /// Two well-separated 2-D blobs.
    fn blobs(n_per: usize, seed: u64) -> (FeatureMatrix, Vec<Label>) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let noise = NormalDist::new(0.0, 0.3).unwrap();
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..(2 * n_per) {
            let class = i % 2;
            let center = if class == 0 { -2.0 } else { 2.0 };
            rows.push(vec![
                center + noise.sample(&mut rng),
                center + noise.sample(&mut rng),
            ]);
            labels.push(if class == 0 { Label::Normal } else { Label::Attacked });
        }
        (matrix(&rows), labels)
    }

    fn all_specs(seed: u64) -> Vec<ClassifierSpec> {
        Algo::ALL
            .into_iter()
            .map(|algo| {
                let spec = ClassifierSpec::new(algo, seed);
                match algo {
                    // keep the small unit-test problems fast
                    Algo::Rf => spec.set("n_trees", 20.0).unwrap(),
                    Algo::Mlp => spec.set("hidden", 16.0).unwrap(),
                    _ => spec,
                }
            })
            .collect()
    }

    #[test]
    fn every_algo_separates_linear_blobs() {
        let (x, y) = blobs(40, 7);
        for spec in all_specs(1) {
            let model = train(&spec, &x, &y).unwrap();
            let pred = predict(&model, &x).unwrap();
            let metrics = evaluate(&y, &pred).unwrap();
            assert!(
                metrics.weighted_f1 >= 0.95,
                "{} scored {}",
                spec.algo.tag(),
                metrics.weighted_f1
            );
        }
    }

    #[test]
    fn dt_fits_xor_perfectly() {
        let x = matrix(&[
            vec![0.0, 0.0],
            vec![0.0, 1.0],
            vec![1.0, 0.0],
            vec![1.0, 1.0],
        ]);
        let y = vec![Label::Normal, Label::Attacked, Label::Attacked, Label::Normal];
        let model = train(&ClassifierSpec::new(Algo::Dt, 0), &x, &y).unwrap();
        assert_eq!(predict(&model, &x).unwrap(), y);
    }

    #[test]
    fn gnb_on_separated_gaussians() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let noise = NormalDist::new(0.0, 1.0).unwrap();
        let make = |rng: &mut ChaCha20Rng, n: usize| -> (Vec<Vec<f64>>, Vec<Label>) {
            let mut rows = Vec::new();
            let mut labels = Vec::new();
            for i in 0..n {
                let (mu, label) = if i % 2 == 0 {
                    (-3.0, Label::Normal)
                } else {
                    (3.0, Label::Attacked)
                };
                rows.push(vec![mu + noise.sample(rng)]);
                labels.push(label);
            }
            (rows, labels)
        };
        let (train_rows, train_y) = make(&mut rng, 200);
        let (test_rows, test_y) = make(&mut rng, 200);
        let model = train(
            &ClassifierSpec::new(Algo::Gnb, 0),
            &matrix(&train_rows),
            &train_y,
        )
        .unwrap();
        let pred = predict(&model, &matrix(&test_rows)).unwrap();
        let metrics = evaluate(&test_y, &pred).unwrap();
        assert!(metrics.weighted_f1 >= 0.95, "got {}", metrics.weighted_f1);
    }

    #[test]
    fn probabilities_sum_to_one_for_every_algo() {
        let (x, y) = blobs(25, 9);
        for spec in all_specs(2) {
            let model = train(&spec, &x, &y).unwrap();
            for row in predict_proba(&model, &x).unwrap() {
                let sum: f64 = row.iter().sum();
                assert!(
                    (sum - 1.0).abs() <= 1e-9,
                    "{} row sums to {}",
                    spec.algo.tag(),
                    sum
                );
                assert!(row.iter().all(|p| *p >= 0.0));
            }
        }
    }

    #[test]
    fn knn_k1_is_certain_about_training_points() {
        let (x, y) = blobs(10, 4);
        let spec = ClassifierSpec::new(Algo::Knn, 0).set("k", 1.0).unwrap();
        let model = train(&spec, &x, &y).unwrap();
        let proba = predict_proba(&model, &x).unwrap();
        for (row, label) in proba.iter().zip(&y) {
            let idx = model.classes.iter().position(|c| c == label).unwrap();
            assert_eq!(row[idx], 1.0);
        }
    }

    #[test]
    fn svc_probability_is_monotone_in_margin() {
        let (x, y) = blobs(30, 5);
        let model = train(&ClassifierSpec::new(Algo::Svc, 1), &x, &y).unwrap();
        let ModelParams::Linear { weights, bias, .. } = &model.params else {
            panic!("svc stores linear params");
        };
        let proba = predict_proba(&model, &x).unwrap();
        let mut pairs: Vec<(f64, f64)> = (0..x.n_rows())
            .map(|i| {
                let margin: f64 =
                    (0..x.n_cols()).map(|j| weights[j] * x.data[(i, j)]).sum::<f64>() + bias;
                (margin, proba[i][1])
            })
            .collect();
        pairs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for w in pairs.windows(2) {
            assert!(w[1].1 >= w[0].1 - 1e-12, "calibration not monotone");
        }
    }

    #[test]
    fn evaluate_perfect_predictions() {
        let y = vec![Label::Normal, Label::Attacked, Label::Normal];
        let m = evaluate(&y, &y).unwrap();
        assert_eq!(m.weighted_f1, 1.0);
        assert_eq!(m.weighted_precision, 1.0);
        assert_eq!(m.weighted_recall, 1.0);
    }

    #[test]
    fn evaluate_single_class_predictions_on_balanced_truth() {
        let y_true = vec![Label::Normal, Label::Normal, Label::Attacked, Label::Attacked];
        let y_pred = vec![Label::Normal; 4];
        let m = evaluate(&y_true, &y_pred).unwrap();
        // classes sorted: [attacked, normal]
        assert_eq!(m.per_class[1].recall, 1.0);
        assert_eq!(m.per_class[0].recall, 0.0);
        assert_relative_eq!(m.weighted_recall, 0.5);
        // the unused class has undefined precision -> 0 by convention
        assert_eq!(m.per_class[0].precision, 0.0);
    }

    #[test]
    fn evaluate_hand_computed_confusion() {
        // attacked: TP=40 FN=20; normal: 30 correct, 10 predicted attacked
        let mut y_true = Vec::new();
        let mut y_pred = Vec::new();
        for _ in 0..40 {
            y_true.push(Label::Attacked);
            y_pred.push(Label::Attacked);
        }
        for _ in 0..20 {
            y_true.push(Label::Attacked);
            y_pred.push(Label::Normal);
        }
        for _ in 0..10 {
            y_true.push(Label::Normal);
            y_pred.push(Label::Attacked);
        }
        for _ in 0..30 {
            y_true.push(Label::Normal);
            y_pred.push(Label::Normal);
        }
        let m = evaluate(&y_true, &y_pred).unwrap();
        let attacked = &m.per_class[0];
        assert_relative_eq!(attacked.precision, 0.8, epsilon = 1e-12);
        assert_relative_eq!(attacked.recall, 2.0 / 3.0, epsilon = 1e-12);
        assert_relative_eq!(attacked.f1, 8.0 / 11.0, epsilon = 1e-12);
        assert_eq!(m.confusion[0][0], 40);
        assert_eq!(m.confusion[0][1], 20);
        assert_eq!(m.confusion[1][0], 10);
        assert_eq!(m.confusion[1][1], 30);
    }

    #[test]
    fn weighted_f1_matches_brute_force_on_random_pairs() {
        let mut rng = ChaCha20Rng::seed_from_u64(12);
        for _ in 0..20 {
            let n = 60;
            let draw = |rng: &mut ChaCha20Rng| {
                if rng.gen_bool(0.4) { Label::Attacked } else { Label::Normal }
            };
            let y_true: Vec<Label> = (0..n).map(|_| draw(&mut rng)).collect();
            let y_pred: Vec<Label> = (0..n).map(|_| draw(&mut rng)).collect();
            if y_true.iter().all(|l| *l == y_true[0]) {
                continue;
            }
            let m = evaluate(&y_true, &y_pred).unwrap();
            // independent confusion-matrix recomputation
            let mut expected = 0.0;
            for class in [Label::Attacked, Label::Normal] {
                let tp = y_true
                    .iter()
                    .zip(&y_pred)
                    .filter(|(t, p)| **t == class && **p == class)
                    .count() as f64;
                let fp = y_true
                    .iter()
                    .zip(&y_pred)
                    .filter(|(t, p)| **t != class && **p == class)
                    .count() as f64;
                let fn_ = y_true
                    .iter()
                    .zip(&y_pred)
                    .filter(|(t, p)| **t == class && **p != class)
                    .count() as f64;
                let support = tp + fn_;
                let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
                let recall = if support > 0.0 { tp / support } else { 0.0 };
                let f1 = if precision + recall > 0.0 {
                    2.0 * precision * recall / (precision + recall)
                } else {
                    0.0
                };
                expected += f1 * support / n as f64;
            }
            assert_relative_eq!(m.weighted_f1, expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn tree_methods_ignore_monotone_feature_transforms() {
        let (x, y) = blobs(30, 21);
        // strictly monotone per-feature transform
        let transformed = FeatureMatrix {
            names: x.names.clone(),
            kinds: x.kinds.clone(),
            data: nalgebra::DMatrix::from_fn(x.n_rows(), x.n_cols(), |i, j| {
                let v = x.data[(i, j)];
                if j == 0 { v.exp() } else { 3.0 * v + v.powi(3) }
            }),
        };
        for algo in [Algo::Dt, Algo::Rf] {
            let spec = match algo {
                Algo::Rf => ClassifierSpec::new(algo, 3).set("n_trees", 15.0).unwrap(),
                _ => ClassifierSpec::new(algo, 3),
            };
            let plain = predict(&train(&spec, &x, &y).unwrap(), &x).unwrap();
            let warped = predict(&train(&spec, &transformed, &y).unwrap(), &transformed).unwrap();
            assert_eq!(plain, warped, "{} not scale-invariant", algo.tag());
        }
    }

    #[test]
    fn identical_seed_reproduces_predictions_for_every_algo() {
        let (x, y) = blobs(20, 30);
        for spec in all_specs(77) {
            let a = predict_proba(&train(&spec, &x, &y).unwrap(), &x).unwrap();
            let b = predict_proba(&train(&spec, &x, &y).unwrap(), &x).unwrap();
            assert_eq!(a, b, "{} not deterministic", spec.algo.tag());
        }
    }

    #[test]
    fn single_tree_forest_without_bootstrap_equals_dt() {
        let (x, y) = blobs(25, 40);
        let dt = train(&ClassifierSpec::new(Algo::Dt, 0), &x, &y).unwrap();
        let rf_spec = ClassifierSpec::new(Algo::Rf, 0)
            .set("n_trees", 1.0)
            .unwrap()
            .set("bootstrap", 0.0)
            .unwrap()
            .set("max_features", x.n_cols() as f64)
            .unwrap();
        let rf = train(&rf_spec, &x, &y).unwrap();
        assert_eq!(
            predict_proba(&dt, &x).unwrap(),
            predict_proba(&rf, &x).unwrap()
        );
    }

    #[test]
    fn grid_of_one_point_returns_it() {
        let (x, y) = blobs(20, 50);
        let mut grid = BTreeMap::new();
        grid.insert("max_depth".to_string(), vec![3.0]);
        let (best, score) =
            grid_search(&ClassifierSpec::new(Algo::Dt, 0), &x, &y, &grid, 3).unwrap();
        assert_eq!(best["max_depth"], 3.0);
        assert!(score > 0.0);
    }

    #[test]
    fn grid_search_prefers_deep_trees_on_xor() {
        // XOR replicated so each class count supports 2 folds; shuffled
        // so the round-robin folds each contain every pattern
        let mut paired = Vec::new();
        for _ in 0..6 {
            for (a, b, l) in [
                (0.0, 0.0, Label::Normal),
                (0.0, 1.0, Label::Attacked),
                (1.0, 0.0, Label::Attacked),
                (1.0, 1.0, Label::Normal),
            ] {
                paired.push((vec![a, b], l));
            }
        }
        paired.shuffle(&mut ChaCha20Rng::seed_from_u64(8));
        let rows: Vec<Vec<f64>> = paired.iter().map(|(r, _)| r.clone()).collect();
        let y: Vec<Label> = paired.iter().map(|(_, l)| *l).collect();
        let x = matrix(&rows);
        let mut grid = BTreeMap::new();
        grid.insert("max_depth".to_string(), vec![1.0, 0.0]);
        let (best, _) = grid_search(&ClassifierSpec::new(Algo::Dt, 0), &x, &y, &grid, 2).unwrap();
        assert_eq!(best["max_depth"], 0.0, "depth-1 stump cannot fit xor");
        // reproducible
        let again = grid_search(&ClassifierSpec::new(Algo::Dt, 0), &x, &y, &grid, 2).unwrap();
        assert_eq!(grid_search(&ClassifierSpec::new(Algo::Dt, 0), &x, &y, &grid, 2).unwrap(), again);
    }

    #[test]
    fn model_json_round_trip_preserves_predictions() {
        let (x, y) = blobs(15, 60);
        let dir = tempfile::tempdir().unwrap();
        for spec in all_specs(5) {
            let model = train(&spec, &x, &y).unwrap();
            let path = dir.path().join(format!("{}.json", spec.algo.tag()));
            save_model(&model, &path).unwrap();
            let loaded = load_model(&path).unwrap();
            assert_eq!(loaded, model);
            assert_eq!(
                predict_proba(&loaded, &x).unwrap(),
                predict_proba(&model, &x).unwrap()
            );
        }
    }

    #[test]
    fn error_paths() {
        let (x, y) = blobs(10, 70);
        // single class
        let single = vec![Label::Normal; x.n_rows()];
        assert!(matches!(
            train(&ClassifierSpec::new(Algo::Dt, 0), &x, &single),
            Err(LearnError::SingleClassTraining)
        ));
        // non-finite feature
        let mut bad = x.clone();
        bad.data[(0, 0)] = f64::NAN;
        assert!(matches!(
            train(&ClassifierSpec::new(Algo::Gnb, 0), &bad, &y),
            Err(LearnError::NonFiniteFeature { .. })
        ));
        // fingerprint mismatch
        let model = train(&ClassifierSpec::new(Algo::Knn, 0), &x, &y).unwrap();
        let mut renamed = x.clone();
        renamed.names[0] = "other".into();
        assert!(matches!(
            predict(&model, &renamed),
            Err(LearnError::ColumnMismatch)
        ));
        // unknown hyperparameter
        assert!(matches!(
            ClassifierSpec::new(Algo::Knn, 0).set("gamma", 1.0),
            Err(LearnError::UnknownHyperparameter { .. })
        ));
        // fold too small
        let mut grid = BTreeMap::new();
        grid.insert("k".to_string(), vec![1.0]);
        assert!(matches!(
            grid_search(&ClassifierSpec::new(Algo::Knn, 0), &x, &y, &grid, 50),
            Err(LearnError::FoldTooSmall { .. })
        ));
        // length mismatch
        assert!(matches!(
            evaluate(&y, &y[..5]),
            Err(LearnError::LengthMismatch { .. })
        ));
    }
}
