//! Feature-split co-training: one classifier per view (cyber and
//! physical), each loop pseudo-labeling its most confident unlabeled
//! record per class, with score-fusion prediction across the views.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fusion::{FeatureMatrix, Label, FUSED_COLUMNS, N_CYBER_COLUMNS};
use crate::learn::{self, ClassifierSpec, LearnError, Model};

#[derive(Debug, Error)]
pub enum CotrainError {
    #[error("column {0:?} not found in the feature matrix")]
    ColumnNotFound(String),
    #[error("views must be disjoint and cover every column")]
    NotAPartition,
    #[error("labeled seed set contains a single class")]
    SingleClassSeed,
    #[error(transparent)]
    Learn(#[from] LearnError),
}

/// Disjoint column split into a cyber view and a physical view.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViewSplit {
    pub cyber: Vec<String>,
    pub physical: Vec<String>,
}

impl ViewSplit {
    /// The table's block structure: 19 cyber/security columns, then 9
    /// physical ones.
    pub fn default_split() -> ViewSplit {
        ViewSplit {
            cyber: FUSED_COLUMNS[..N_CYBER_COLUMNS]
                .iter()
                .map(|c| c.name.to_string())
                .collect(),
            physical: FUSED_COLUMNS[N_CYBER_COLUMNS..]
                .iter()
                .map(|c| c.name.to_string())
                .collect(),
        }
    }

    fn validate(&self, x: &FeatureMatrix) -> Result<(), CotrainError> {
        for name in self.cyber.iter().chain(&self.physical) {
            if !x.names.contains(name) {
                return Err(CotrainError::ColumnNotFound(name.clone()));
            }
        }
        let mut all: Vec<&String> = self.cyber.iter().chain(&self.physical).collect();
        all.sort();
        all.dedup();
        if all.len() != self.cyber.len() + self.physical.len() || all.len() != x.n_cols() {
            return Err(CotrainError::NotAPartition);
        }
        Ok(())
    }
}

/// Project a matrix onto the two views; row order is preserved.
pub fn split_views(
    x: &FeatureMatrix,
    split: &ViewSplit,
) -> Result<(FeatureMatrix, FeatureMatrix), CotrainError> {
    split.validate(x)?;
    let cyber = x
        .select(&split.cyber)
        .ok_or_else(|| CotrainError::ColumnNotFound(split.cyber[0].clone()))?;
    let physical = x
        .select(&split.physical)
        .ok_or_else(|| CotrainError::ColumnNotFound(split.physical[0].clone()))?;
    Ok((cyber, physical))
}

/// One co-training loop's bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoopRecord {
    pub loop_index: usize,
    pub pool_before: usize,
    pub pool_after: usize,
    pub added: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoModel {
    pub cyber: Model,
    pub physical: Model,
    pub split: ViewSplit,
    pub log: Vec<LoopRecord>,
}

pub const DEFAULT_MAX_LOOPS: usize = 50;

/// Fit the two per-view classifiers by co-training. Each loop both
/// classifiers pick their most confident unlabeled record per class
/// (ties to the lowest row index); the picks join the shared labeled
/// set with their pseudo-labels, conflicts resolved toward the higher
/// confidence (tie: the cyber classifier wins).
pub fn cotrain_fit(
    base: &ClassifierSpec,
    x_labeled: &FeatureMatrix,
    y_labeled: &[Label],
    x_unlabeled: &FeatureMatrix,
    split: &ViewSplit,
    max_loops: usize,
) -> Result<CoModel, CotrainError> {
    split.validate(x_labeled)?;
    {
        let mut classes: Vec<Label> = y_labeled.to_vec();
        classes.sort_by_key(|c| c.name());
        classes.dedup();
        if classes.len() < 2 {
            return Err(CotrainError::SingleClassSeed);
        }
    }

    // growing labeled set, as full rows
    let mut rows: Vec<Vec<f64>> = (0..x_labeled.n_rows())
        .map(|i| (0..x_labeled.n_cols()).map(|j| x_labeled.data[(i, j)]).collect())
        .collect();
    let mut labels = y_labeled.to_vec();
    let mut available: Vec<usize> = (0..x_unlabeled.n_rows()).collect();
    let mut log = Vec::new();

    let assemble = |rows: &[Vec<f64>], names: &[String]| {
        FeatureMatrix::from_rows(names.to_vec(), rows)
    };

    let mut loop_index = 0;
    loop {
        let full = assemble(&rows, &x_labeled.names);
        let (cy_x, phy_x) = split_views(&full, split)?;
        let cy_model = learn::train(base, &cy_x, &labels)?;
        let phy_model = learn::train(base, &phy_x, &labels)?;
        if available.is_empty() || loop_index >= max_loops {
            return Ok(CoModel {
                cyber: cy_model,
                physical: phy_model,
                split: split.clone(),
                log,
            });
        }

        let (un_cy, un_phy) = split_views(x_unlabeled, split)?;
        let cy_proba = learn::predict_proba(&cy_model, &un_cy)?;
        let phy_proba = learn::predict_proba(&phy_model, &un_phy)?;
        // candidate picks: (unlabeled row, pseudo-label, confidence,
        // cyber-selected flag)
        let mut picks: Vec<(usize, Label, f64, bool)> = Vec::new();
        for (proba, classes, is_cyber) in [
            (&cy_proba, &cy_model.classes, true),
            (&phy_proba, &phy_model.classes, false),
        ] {
            for (c, class) in classes.iter().enumerate() {
                let mut best: Option<(usize, f64)> = None;
                for &row_idx in &available {
                    let p = proba[row_idx][c];
                    // strict improvement keeps the lowest row index on ties
                    if best.map_or(true, |(_, bp)| p > bp) {
                        best = Some((row_idx, p));
                    }
                }
                if let Some((row_idx, p)) = best {
                    picks.push((row_idx, *class, p, is_cyber));
                }
            }
        }
        // resolve duplicate picks of the same row
        let mut resolved: Vec<(usize, Label)> = Vec::new();
        let mut chosen: std::collections::BTreeMap<usize, (Label, f64, bool)> =
            std::collections::BTreeMap::new();
        for (row_idx, label, confidence, is_cyber) in picks {
            match chosen.get(&row_idx) {
                None => {
                    chosen.insert(row_idx, (label, confidence, is_cyber));
                }
                Some(&(_, held_conf, held_cyber)) => {
                    let replace = confidence > held_conf
                        || (confidence == held_conf && is_cyber && !held_cyber);
                    if replace {
                        chosen.insert(row_idx, (label, confidence, is_cyber));
                    }
                }
            }
        }
        for (row_idx, (label, _, _)) in chosen {
            resolved.push((row_idx, label));
        }

        let pool_before = available.len();
        for &(row_idx, label) in &resolved {
            rows.push(
                (0..x_unlabeled.n_cols())
                    .map(|j| x_unlabeled.data[(row_idx, j)])
                    .collect(),
            );
            labels.push(label);
        }
        available.retain(|idx| !resolved.iter().any(|(r, _)| r == idx));
        log.push(LoopRecord {
            loop_index,
            pool_before,
            pool_after: available.len(),
            added: resolved.len(),
        });
        loop_index += 1;
    }
}

/// Score-fusion prediction: per-row sum of the two views' probability
/// vectors, renormalized; argmax with ties toward the class earlier in
/// lexicographic order.
pub fn cotrain_predict(
    model: &CoModel,
    x: &FeatureMatrix,
) -> Result<(Vec<Label>, Vec<Vec<f64>>), CotrainError> {
    let (cy_x, phy_x) = split_views(x, &model.split)?;
    let cy = learn::predict_proba(&model.cyber, &cy_x)?;
    let phy = learn::predict_proba(&model.physical, &phy_x)?;
    let mut fused = Vec::with_capacity(cy.len());
    let mut classes_pred = Vec::with_capacity(cy.len());
    for (a, b) in cy.iter().zip(&phy) {
        let mut row: Vec<f64> = a.iter().zip(b).map(|(x, y)| x + y).collect();
        let total: f64 = row.iter().sum();
        for v in row.iter_mut() {
            *v /= total;
        }
        let mut best = 0;
        for (c, p) in row.iter().enumerate() {
            if *p > row[best] {
                best = c;
            }
        }
        classes_pred.push(model.cyber.classes[best]);
        fused.push(row);
    }
    Ok((classes_pred, fused))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learn::Algo;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn table_matrix(n: usize) -> FeatureMatrix {
        let names: Vec<String> = FUSED_COLUMNS.iter().map(|c| c.name.to_string()).collect();
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..names.len()).map(|j| (i * 31 + j) as f64).collect())
            .collect();
        FeatureMatrix::from_rows(names, &rows)
    }

    #[test]
    fn default_split_is_19_plus_9() {
        let x = table_matrix(4);
        let split = ViewSplit::default_split();
        let (cy, phy) = split_views(&x, &split).unwrap();
        assert_eq!(cy.n_cols(), 19);
        assert_eq!(phy.n_cols(), 9);
        // recombining columns reproduces the original values
        for i in 0..4 {
            for (j, name) in x.names.iter().enumerate() {
                let from_view = if let Some(c) = cy.names.iter().position(|n| n == name) {
                    cy.data[(i, c)]
                } else {
                    let c = phy.names.iter().position(|n| n == name).unwrap();
                    phy.data[(i, c)]
                };
                assert_eq!(from_view, x.data[(i, j)]);
            }
        }
    }

    #[test]
    fn custom_even_odd_split_is_a_partition() {
        let x = table_matrix(3);
        let split = ViewSplit {
            cyber: x.names.iter().step_by(2).cloned().collect(),
            physical: x.names.iter().skip(1).step_by(2).cloned().collect(),
        };
        let (cy, phy) = split_views(&x, &split).unwrap();
        assert_eq!(cy.n_cols() + phy.n_cols(), x.n_cols());
        assert!(cy.names.iter().all(|n| !phy.names.contains(n)));
    }

    #[test]
    fn bad_splits_are_rejected() {
        let x = table_matrix(2);
        let missing = ViewSplit {
            cyber: vec!["No Such Column".into()],
            physical: x.names.clone(),
        };
        assert!(matches!(
            split_views(&x, &missing),
            Err(CotrainError::ColumnNotFound(_))
        ));
        let overlapping = ViewSplit {
            cyber: x.names.clone(),
            physical: vec![x.names[0].clone()],
        };
        assert!(matches!(
            split_views(&x, &overlapping),
            Err(CotrainError::NotAPartition)
        ));
    }

    /// 4-feature blobs where both views carry signal.
    fn two_view_blobs(n_per: usize, seed: u64) -> (FeatureMatrix, Vec<Label>) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let names: Vec<String> = (0..4).map(|j| format!("f{j}")).collect();
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..(2 * n_per) {
            let class = i % 2;
            let center = if class == 0 { -2.0 } else { 2.0 };
            rows.push((0..4).map(|_| center + rng.gen_range(-0.6..0.6)).collect());
            labels.push(if class == 0 { Label::Normal } else { Label::Attacked });
        }
        (FeatureMatrix::from_rows(names, &rows), labels)
    }

    fn blob_split() -> ViewSplit {
        ViewSplit {
            cyber: vec!["f0".into(), "f1".into()],
            physical: vec!["f2".into(), "f3".into()],
        }
    }

    #[test]
    fn empty_pool_reduces_to_plain_two_view_training() {
        let (x, y) = two_view_blobs(15, 3);
        let empty = FeatureMatrix::from_rows(x.names.clone(), &[]);
        let base = ClassifierSpec::new(Algo::Knn, 0);
        let co = cotrain_fit(&base, &x, &y, &empty, &blob_split(), DEFAULT_MAX_LOOPS).unwrap();
        assert!(co.log.is_empty(), "no loops should run with an empty pool");
        // identical to training each view directly
        let (cy_x, phy_x) = split_views(&x, &blob_split()).unwrap();
        let cy_direct = learn::train(&base, &cy_x, &y).unwrap();
        let phy_direct = learn::train(&base, &phy_x, &y).unwrap();
        assert_eq!(co.cyber, cy_direct);
        assert_eq!(co.physical, phy_direct);
    }

    #[test]
    fn small_pool_drains_and_is_logged() {
        let (x, y) = two_view_blobs(6, 5);
        let (pool, _) = two_view_blobs(2, 99);
        let base = ClassifierSpec::new(Algo::Knn, 0);
        let co = cotrain_fit(&base, &x, &y, &pool, &blob_split(), DEFAULT_MAX_LOOPS).unwrap();
        assert!(!co.log.is_empty());
        assert_eq!(co.log.last().unwrap().pool_after, 0, "pool must drain");
        for w in co.log.windows(2) {
            assert!(w[1].pool_before < w[0].pool_before, "pool must shrink");
        }
        for rec in &co.log {
            assert_eq!(rec.pool_before - rec.pool_after, rec.added);
            assert!(rec.added >= 1);
        }
    }

    #[test]
    fn cotraining_close_to_fully_supervised_on_blobs() {
        let (x, y) = two_view_blobs(45, 11);
        let (x_test, y_test) = two_view_blobs(30, 12);
        // 1:2 labeled:unlabeled split, stratified by construction
        let n = x.n_rows();
        let labeled_idx: Vec<usize> = (0..n / 3).collect();
        let unlabeled_idx: Vec<usize> = (n / 3..n).collect();
        let (xl, yl) = learn::subset(&x, &y, &labeled_idx);
        let (xu, _) = learn::subset(&x, &y, &unlabeled_idx);
        let base = ClassifierSpec::new(Algo::Gnb, 7);
        let co = cotrain_fit(&base, &xl, &yl, &xu, &blob_split(), DEFAULT_MAX_LOOPS).unwrap();
        let (pred, _) = cotrain_predict(&co, &x_test).unwrap();
        let co_f1 = learn::evaluate(&y_test, &pred).unwrap().weighted_f1;
        // fully supervised two-view baseline on all data with truth
        let full = cotrain_fit(
            &base,
            &x,
            &y,
            &FeatureMatrix::from_rows(x.names.clone(), &[]),
            &blob_split(),
            DEFAULT_MAX_LOOPS,
        )
        .unwrap();
        let (pred_full, _) = cotrain_predict(&full, &x_test).unwrap();
        let full_f1 = learn::evaluate(&y_test, &pred_full).unwrap().weighted_f1;
        assert!(
            (full_f1 - co_f1).abs() <= 0.1,
            "co-training {co_f1} vs supervised {full_f1}"
        );
    }

    #[test]
    fn fused_probabilities_normalize_and_commute() {
        let (x, y) = two_view_blobs(20, 21);
        let base = ClassifierSpec::new(Algo::Lr, 3);
        let empty = FeatureMatrix::from_rows(x.names.clone(), &[]);
        let co = cotrain_fit(&base, &x, &y, &empty, &blob_split(), DEFAULT_MAX_LOOPS).unwrap();
        let (pred, fused) = cotrain_predict(&co, &x).unwrap();
        for row in &fused {
            assert_relative_eq!(row.iter().sum::<f64>(), 1.0, epsilon = 1e-9);
        }
        // swapping the views cannot change the fused argmax
        let swapped = CoModel {
            cyber: co.physical.clone(),
            physical: co.cyber.clone(),
            split: ViewSplit {
                cyber: co.split.physical.clone(),
                physical: co.split.cyber.clone(),
            },
            log: Vec::new(),
        };
        let (pred_swapped, _) = cotrain_predict(&swapped, &x).unwrap();
        assert_eq!(pred, pred_swapped);
    }

    #[test]
    fn fusion_arithmetic_follows_the_average() {
        // (0.9,0.1) + (0.2,0.8) -> (0.55,0.45): first class wins
        let a = [0.9, 0.1];
        let b = [0.2, 0.8];
        let fused: Vec<f64> = a.iter().zip(&b).map(|(x, y)| (x + y) / 2.0).collect();
        assert_relative_eq!(fused[0], 0.55);
        assert_relative_eq!(fused[1], 0.45);
    }

    #[test]
    fn determinism_given_seed() {
        let (x, y) = two_view_blobs(12, 31);
        let (pool, _) = two_view_blobs(6, 32);
        let base = ClassifierSpec::new(Algo::Dt, 9);
        let a = cotrain_fit(&base, &x, &y, &pool, &blob_split(), DEFAULT_MAX_LOOPS).unwrap();
        let b = cotrain_fit(&base, &x, &y, &pool, &blob_split(), DEFAULT_MAX_LOOPS).unwrap();
        assert_eq!(a.log, b.log);
        let (pa, _) = cotrain_predict(&a, &x).unwrap();
        let (pb, _) = cotrain_predict(&b, &x).unwrap();
        assert_eq!(pa, pb);
    }

    #[test]
    fn single_class_seed_is_rejected() {
        let (x, _) = two_view_blobs(6, 41);
        let y = vec![Label::Normal; x.n_rows()];
        let (pool, _) = two_view_blobs(3, 42);
        let base = ClassifierSpec::new(Algo::Knn, 0);
        assert!(matches!(
            cotrain_fit(&base, &x, &y, &pool, &blob_split(), DEFAULT_MAX_LOOPS),
            Err(CotrainError::SingleClassSeed)
        ));
    }
}
