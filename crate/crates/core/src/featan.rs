//! Feature analysis: Pearson correlation, PCA reduction via SVD, and
//! Shapiro–Wilk normality ranking with cutoff-based selection.
//!
//! "Shapiro ranking" is implemented as the per-feature Shapiro–Wilk W
//! statistic (Royston's approximation, valid for 3 <= n <= 5000);
//! features scoring at or above the cutoff are kept.

use nalgebra::DMatrix;
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::fusion::FeatureMatrix;

#[derive(Debug, Error)]
pub enum FeatAnError {
    #[error("need at least {need} rows, got {got}")]
    TooFewRows { need: usize, got: usize },
    #[error("matrix has no variance to decompose")]
    DegenerateMatrix,
    #[error("column is constant")]
    ConstantColumn,
}

/// Symmetric matrix of Pearson coefficients with provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    pub names: Vec<String>,
    pub r: DMatrix<f64>,
    /// Columns with zero variance; their off-diagonal entries are 0.
    pub constant: Vec<bool>,
}

/// Pearson correlation for every column pair. Constant columns get 0
/// off-diagonal by convention and are flagged.
pub fn pearson_matrix(x: &FeatureMatrix) -> Result<CorrelationMatrix, FeatAnError> {
    let n = x.n_rows();
    if n < 2 {
        return Err(FeatAnError::TooFewRows { need: 2, got: n });
    }
    let p = x.n_cols();
    let means: Vec<f64> = (0..p).map(|j| x.data.column(j).sum() / n as f64).collect();
    let sds: Vec<f64> = (0..p)
        .map(|j| {
            (0..n)
                .map(|i| (x.data[(i, j)] - means[j]).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    let constant: Vec<bool> = sds.iter().map(|&s| s == 0.0).collect();
    let mut r = DMatrix::identity(p, p);
    for a in 0..p {
        for b in (a + 1)..p {
            let value = if constant[a] || constant[b] {
                0.0
            } else {
                let cov: f64 = (0..n)
                    .map(|i| (x.data[(i, a)] - means[a]) * (x.data[(i, b)] - means[b]))
                    .sum();
                (cov / (sds[a] * sds[b])).clamp(-1.0, 1.0)
            };
            r[(a, b)] = value;
            r[(b, a)] = value;
        }
    }
    Ok(CorrelationMatrix {
        names: x.names.clone(),
        r,
        constant,
    })
}

/// Fitted PCA basis: column means, orthonormal components (p x k), and
/// the fraction of variance each component explains.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub means: Vec<f64>,
    pub components: DMatrix<f64>,
    pub explained_ratio: Vec<f64>,
}

impl PcaModel {
    pub fn n_components(&self) -> usize {
        self.components.ncols()
    }

    /// Project new rows onto the fitted basis.
    pub fn transform(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut centered = x.clone();
        for j in 0..centered.ncols() {
            let mean = self.means[j];
            for i in 0..centered.nrows() {
                centered[(i, j)] -= mean;
            }
        }
        &centered * &self.components
    }

    /// Map projected rows back into the original space.
    pub fn inverse_transform(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        let mut x = z * self.components.transpose();
        for j in 0..x.ncols() {
            for i in 0..x.nrows() {
                x[(i, j)] += self.means[j];
            }
        }
        x
    }
}

/// Fit PCA on the centered matrix via SVD and keep the smallest number
/// of components whose cumulative explained variance reaches the
/// threshold. Each component's largest-magnitude loading is flipped
/// positive so the basis is deterministic.
pub fn pca_fit_transform(
    x: &FeatureMatrix,
    variance_threshold: f64,
) -> Result<(PcaModel, DMatrix<f64>), FeatAnError> {
    let n = x.n_rows();
    if n < 2 {
        return Err(FeatAnError::TooFewRows { need: 2, got: n });
    }
    let p = x.n_cols();
    let means: Vec<f64> = (0..p).map(|j| x.data.column(j).sum() / n as f64).collect();
    let mut centered = x.data.clone();
    for j in 0..p {
        for i in 0..n {
            centered[(i, j)] -= means[j];
        }
    }
    let svd = centered.clone().svd(true, true);
    let v_t = svd.v_t.as_ref().expect("requested v_t");
    let total: f64 = svd.singular_values.iter().map(|s| s * s).sum();
    if total <= f64::EPSILON {
        return Err(FeatAnError::DegenerateMatrix);
    }
    // nalgebra returns singular values unsorted in some paths; order them.
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .partial_cmp(&svd.singular_values[a])
            .unwrap()
    });
    let mut cumulative = 0.0;
    let mut k = 0;
    let mut ratios = Vec::new();
    for &idx in &order {
        let ratio = svd.singular_values[idx].powi(2) / total;
        ratios.push(ratio);
        cumulative += ratio;
        k += 1;
        if cumulative >= variance_threshold {
            break;
        }
    }
    let mut components = DMatrix::zeros(p, k);
    for (col, &idx) in order.iter().take(k).enumerate() {
        for j in 0..p {
            components[(j, col)] = v_t[(idx, j)];
        }
        // deterministic orientation
        let mut pivot = 0;
        for j in 1..p {
            if components[(j, col)].abs() > components[(pivot, col)].abs() {
                pivot = j;
            }
        }
        if components[(pivot, col)] < 0.0 {
            for j in 0..p {
                components[(j, col)] = -components[(j, col)];
            }
        }
    }
    ratios.truncate(k);
    let model = PcaModel {
        means,
        components,
        explained_ratio: ratios,
    };
    let projected = &centered * &model.components;
    Ok((model, projected))
}

const MAX_SHAPIRO_N: usize = 5000;

/// Shapiro–Wilk W statistic (Royston's AS R94 approximation).
/// Samples longer than 5000 are thinned deterministically by even
/// strides before the test.
pub fn shapiro_w(sample: &[f64]) -> Result<f64, FeatAnError> {
    let thinned: Vec<f64>;
    let sample = if sample.len() > MAX_SHAPIRO_N {
        let n = sample.len();
        thinned = (0..MAX_SHAPIRO_N)
            .map(|i| sample[i * n / MAX_SHAPIRO_N])
            .collect();
        &thinned[..]
    } else {
        sample
    };
    let n = sample.len();
    if n < 3 {
        return Err(FeatAnError::TooFewRows { need: 3, got: n });
    }
    let mut x: Vec<f64> = sample.to_vec();
    x.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if x[0] == x[n - 1] {
        return Err(FeatAnError::ConstantColumn);
    }

    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    // Blom-type expected normal order statistics
    let m: Vec<f64> = (1..=n)
        .map(|i| normal.inverse_cdf((i as f64 - 0.375) / (n as f64 + 0.25)))
        .collect();
    let m_sum_sq: f64 = m.iter().map(|v| v * v).sum();
    let rsn = 1.0 / (n as f64).sqrt();
    let mut a = vec![0.0; n];
    if n <= 5 {
        if n == 3 {
            a[2] = (0.5f64).sqrt();
        } else {
            let c_n = m[n - 1] / m_sum_sq.sqrt();
            let a_n = c_n + poly(&[0.0, 0.221157, -0.147981, -2.071190, 4.434685, -2.706056], rsn);
            let phi = (m_sum_sq - 2.0 * m[n - 1].powi(2)) / (1.0 - 2.0 * a_n.powi(2));
            a[n - 1] = a_n;
            for i in 1..(n - 1) {
                a[i] = m[i] / phi.sqrt();
            }
        }
    } else {
        let c_n = m[n - 1] / m_sum_sq.sqrt();
        let c_n1 = m[n - 2] / m_sum_sq.sqrt();
        let a_n = c_n + poly(&[0.0, 0.221157, -0.147981, -2.071190, 4.434685, -2.706056], rsn);
        let a_n1 = c_n1 + poly(&[0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633], rsn);
        let phi = (m_sum_sq - 2.0 * m[n - 1].powi(2) - 2.0 * m[n - 2].powi(2))
            / (1.0 - 2.0 * a_n.powi(2) - 2.0 * a_n1.powi(2));
        a[n - 1] = a_n;
        a[n - 2] = a_n1;
        for i in 2..(n - 2) {
            a[i] = m[i] / phi.sqrt();
        }
    }
    for i in 0..(n / 2) {
        a[i] = -a[n - 1 - i];
    }

    let mean = x.iter().sum::<f64>() / n as f64;
    let ss: f64 = x.iter().map(|v| (v - mean).powi(2)).sum();
    let b: f64 = a.iter().zip(&x).map(|(ai, xi)| ai * xi).sum();
    Ok((b * b / ss).clamp(0.0, 1.0))
}

fn poly(coefs: &[f64], u: f64) -> f64 {
    coefs
        .iter()
        .enumerate()
        .map(|(k, c)| c * u.powi(k as i32))
        .sum()
}

/// Shapiro–Wilk W per column. Constant columns score 0, which the
/// default 0.7 cutoff always excludes.
pub fn shapiro_rank(x: &FeatureMatrix) -> Result<Vec<f64>, FeatAnError> {
    if x.n_rows() < 3 {
        return Err(FeatAnError::TooFewRows { need: 3, got: x.n_rows() });
    }
    (0..x.n_cols())
        .map(|j| {
            let col: Vec<f64> = (0..x.n_rows()).map(|i| x.data[(i, j)]).collect();
            match shapiro_w(&col) {
                Ok(w) => Ok(w),
                Err(FeatAnError::ConstantColumn) => Ok(0.0),
                Err(e) => Err(e),
            }
        })
        .collect()
}

/// Keep the columns scoring at or above the cutoff, in table order.
pub fn select_features(names: &[String], scores: &[f64], cutoff: f64) -> Vec<String> {
    names
        .iter()
        .zip(scores)
        .filter(|(_, &w)| w >= cutoff && w > 0.0)
        .map(|(name, _)| name.clone())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    /// Deterministic hash-style pseudo-random values, reproducible
    /// bit-for-bit in any IEEE-754 double implementation.
    fn hash_sample(n: usize, salt: f64) -> Vec<f64> {
        (0..n)
            .map(|i| {
                let v = ((i + 1) as f64 * 12.9898 + salt).sin() * 43758.5453;
                v - v.floor()
            })
            .collect()
    }

    fn matrix(cols: Vec<Vec<f64>>) -> FeatureMatrix {
        let names = (0..cols.len()).map(|j| format!("c{j}")).collect();
        let n = cols[0].len();
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| cols.iter().map(|c| c[i]).collect())
            .collect();
        FeatureMatrix::from_rows(names, &rows)
    }

    #[test]
    fn pearson_self_and_negation() {
        let x: Vec<f64> = hash_sample(50, 0.0);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        let m = matrix(vec![x.clone(), x.clone(), neg]);
        let corr = pearson_matrix(&m).unwrap();
        assert_relative_eq!(corr.r[(0, 0)], 1.0);
        assert_relative_eq!(corr.r[(0, 1)], 1.0, epsilon = 1e-12);
        assert_relative_eq!(corr.r[(0, 2)], -1.0, epsilon = 1e-12);
    }

    #[test]
    fn pearson_matches_direct_formula_oracle() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let cols: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..50).map(|_| rng.gen_range(-3.0..3.0)).collect())
            .collect();
        let m = matrix(cols.clone());
        let corr = pearson_matrix(&m).unwrap();
        for a in 0..5 {
            for b in 0..5 {
                let n = 50.0;
                let ma: f64 = cols[a].iter().sum::<f64>() / n;
                let mb: f64 = cols[b].iter().sum::<f64>() / n;
                let cov: f64 = cols[a]
                    .iter()
                    .zip(&cols[b])
                    .map(|(x, y)| (x - ma) * (y - mb))
                    .sum::<f64>()
                    / n;
                let sa = (cols[a].iter().map(|x| (x - ma).powi(2)).sum::<f64>() / n).sqrt();
                let sb = (cols[b].iter().map(|x| (x - mb).powi(2)).sum::<f64>() / n).sqrt();
                assert_relative_eq!(corr.r[(a, b)], cov / (sa * sb), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn pearson_constant_column_convention_and_psd() {
        let m = matrix(vec![hash_sample(40, 1.0), vec![4.0; 40], hash_sample(40, 2.0)]);
        let corr = pearson_matrix(&m).unwrap();
        assert!(corr.constant[1]);
        assert_eq!(corr.r[(0, 1)], 0.0);
        assert_eq!(corr.r[(1, 1)], 1.0);
        let eig = corr.r.clone().symmetric_eigen();
        assert!(eig.eigenvalues.iter().all(|&l| l > -1e-10));
    }

    #[test]
    fn pca_line_collapses_to_one_component() {
        let x: Vec<f64> = hash_sample(60, 4.0);
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let m = matrix(vec![x, y]);
        let (model, proj) = pca_fit_transform(&m, 0.95).unwrap();
        assert_eq!(model.n_components(), 1);
        assert_relative_eq!(model.explained_ratio[0], 1.0, epsilon = 1e-12);
        assert_eq!(proj.ncols(), 1);
    }

    #[test]
    fn pca_components_orthonormal_and_reconstruction_bounded() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let cols: Vec<Vec<f64>> = (0..6)
            .map(|j| {
                (0..80)
                    .map(|_| rng.gen_range(0.0..1.0) * (j as f64 + 1.0))
                    .collect()
            })
            .collect();
        let m = matrix(cols);
        let threshold = 0.95;
        let (model, proj) = pca_fit_transform(&m, threshold).unwrap();
        let gram = model.components.transpose() * &model.components;
        let identity = DMatrix::identity(gram.nrows(), gram.ncols());
        assert!((gram - identity).norm() < 1e-8, "components not orthonormal");
        let recon = model.inverse_transform(&proj);
        let err: f64 = (&recon - &m.data).map(|v| v * v).sum();
        let total: f64 = {
            let means: Vec<f64> =
                (0..6).map(|j| m.data.column(j).sum() / m.n_rows() as f64).collect();
            (0..m.n_rows())
                .map(|i| (0..6).map(|j| (m.data[(i, j)] - means[j]).powi(2)).sum::<f64>())
                .sum()
        };
        assert!(
            err <= (1.0 - threshold) * total + 1e-9,
            "reconstruction error {err} above bound {}",
            (1.0 - threshold) * total
        );
        // ratios non-increasing, sum <= 1
        assert!(model.explained_ratio.windows(2).all(|w| w[0] >= w[1] - 1e-12));
        assert!(model.explained_ratio.iter().sum::<f64>() <= 1.0 + 1e-12);
    }

    #[test]
    fn pca_spectrum_invariant_under_rotation() {
        let mut rng = ChaCha20Rng::seed_from_u64(23);
        let rows: Vec<Vec<f64>> = (0..60)
            .map(|_| (0..3).map(|j| rng.gen_range(0.0..1.0) * (j + 1) as f64).collect())
            .collect();
        let m = FeatureMatrix::from_rows(vec!["a".into(), "b".into(), "c".into()], &rows);
        // orthogonal rotation from QR of a random matrix
        let raw = DMatrix::from_fn(3, 3, |_, _| rng.gen_range(-1.0..1.0));
        let q = raw.qr().q();
        let rotated = FeatureMatrix {
            names: m.names.clone(),
            kinds: m.kinds.clone(),
            data: &m.data * &q,
        };
        let (a, _) = pca_fit_transform(&m, 1.0).unwrap();
        let (b, _) = pca_fit_transform(&rotated, 1.0).unwrap();
        for (ra, rb) in a.explained_ratio.iter().zip(&b.explained_ratio) {
            assert_relative_eq!(ra, rb, epsilon = 1e-8);
        }
    }

    #[test]
    fn pca_rejects_all_constant_input() {
        let m = matrix(vec![vec![1.0; 10], vec![2.0; 10]]);
        assert!(matches!(
            pca_fit_transform(&m, 0.95),
            Err(FeatAnError::DegenerateMatrix)
        ));
    }

    #[test]
    fn shapiro_matches_reference_implementation() {
        // Reference W values computed with an established SciPy
        // Shapiro-Wilk implementation on identical inputs.
        let cases: Vec<(Vec<f64>, f64)> = vec![
            (hash_sample(500, 0.0), 0.9596018358629286),
            (hash_sample(20, 7.0), 0.8109334697963934),
            (
                vec![0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0],
                0.6552710244620128,
            ),
            (hash_sample(4, 1.0), 0.6721714201104775),
        ];
        for (sample, reference) in cases {
            let w = shapiro_w(&sample).unwrap();
            assert_relative_eq!(w, reference, epsilon = 1e-4);
        }
    }

    #[test]
    fn shapiro_near_one_for_normal_sample() {
        // Smooth normal scores: as close to exactly normal as a finite
        // sample gets.
        let normal = Normal::new(0.0, 1.0).unwrap();
        let sample: Vec<f64> = (1..=500)
            .map(|i| normal.inverse_cdf(i as f64 / 501.0))
            .collect();
        assert!(shapiro_w(&sample).unwrap() > 0.99);
    }

    #[test]
    fn shapiro_two_point_mass_excluded_at_default_cutoff() {
        let sample: Vec<f64> = (0..100).map(|i| if i % 2 == 0 { 0.0 } else { 1.0 }).collect();
        let w = shapiro_w(&sample).unwrap();
        assert!(w < 0.7, "two-point W was {w}");
    }

    #[test]
    fn shapiro_thins_long_columns_deterministically() {
        let sample = hash_sample(12_000, 9.0);
        let w1 = shapiro_w(&sample).unwrap();
        let w2 = shapiro_w(&sample).unwrap();
        assert_eq!(w1, w2);
        assert!(w1 > 0.0 && w1 <= 1.0);
    }

    #[test]
    fn selection_is_monotone_in_cutoff() {
        let m = matrix(vec![
            hash_sample(200, 0.0),
            (1..=200)
                .map(|i| Normal::new(0.0, 1.0).unwrap().inverse_cdf(i as f64 / 201.0))
                .collect(),
            vec![1.0; 200],
            (0..200).map(|i| if i % 2 == 0 { 0.0 } else { 1.0 }).collect(),
        ]);
        let scores = shapiro_rank(&m).unwrap();
        assert_eq!(scores[2], 0.0);
        let all = select_features(&m.names, &scores, 0.0);
        assert_eq!(all.len(), 3, "constant column must be excluded even at cutoff 0");
        let mut previous = all.clone();
        for cutoff in [0.3, 0.5, 0.7, 0.9, 0.999] {
            let picked = select_features(&m.names, &scores, cutoff);
            assert!(
                picked.iter().all(|n| previous.contains(n)),
                "selection at cutoff {cutoff} is not a subset"
            );
            previous = picked;
        }
        let strict = select_features(&m.names, &scores, 0.7);
        assert!(strict.contains(&"c1".to_string()));
        assert!(!strict.contains(&"c3".to_string()));
    }
}
