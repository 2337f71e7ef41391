mod common;

use ivep::metrics::{bic, fold_partition, kfold_cv, r_squared, selection_rates, CvNormalization};
use ivep::two_stage::{Dataset, LinearIvPredictor, Predict};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

struct Zero;

impl Predict for Zero {
    fn predict(&self, z: &DMatrix<f64>) -> DVector<f64> {
        DVector::zeros(z.nrows())
    }
}

proptest! {
    #[test]
    fn rates_match_counting(pairs in prop::collection::vec((any::<bool>(), any::<bool>()), 1..200)) {
        let truth: Vec<bool> = pairs.iter().map(|p| p.0).collect();
        let est: Vec<bool> = pairs.iter().map(|p| p.1).collect();
        let r = selection_rates(&truth, &est).unwrap();
        let pos = truth.iter().filter(|t| **t).count();
        let neg = truth.len() - pos;
        let fneg = pairs.iter().filter(|(t, e)| *t && !*e).count();
        let fpos = pairs.iter().filter(|(t, e)| !*t && *e).count();
        if pos > 0 {
            prop_assert_eq!(r.fnr, fneg as f64 / pos as f64);
        }
        if neg > 0 {
            prop_assert_eq!(r.fpr, fpos as f64 / neg as f64);
        }
        prop_assert_eq!(r.undefined, pos == 0 || neg == 0);
    }

    #[test]
    fn folds_partition_the_rows(n in 2usize..200, k in 2usize..10, seed in any::<u64>()) {
        prop_assume!(k <= n);
        let folds = fold_partition(n, k, seed).unwrap();
        prop_assert_eq!(folds.len(), k);
        let mut all: Vec<usize> = folds.iter().flatten().copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        prop_assert_eq!(&folds, &fold_partition(n, k, seed).unwrap());
    }
}

#[test]
fn rates_examples() {
    let r = selection_rates(&[true, true, false, false], &[true, false, true, false]).unwrap();
    assert_eq!((r.fnr, r.fpr), (0.5, 0.5));
    assert!(selection_rates(&[true], &[true, false]).is_err());
}

fn toy_data(n: usize, seed: u64) -> Dataset {
    let mut rng = common::rng(seed);
    let z = DMatrix::from_fn(n, 3, |i, j| ((i + j) % 3) as f64);
    let x = common::gaussian_matrix(&mut rng, n, 2);
    let y = common::gaussian_vector(&mut rng, n);
    Dataset::new(y, x, z).unwrap()
}

#[test]
fn zero_predictor_scores_the_total_square() {
    let data = toy_data(31, 1);
    let total = data.y.norm_squared();
    let cv = kfold_cv(&data, 3, |_| Ok(Zero), 7, CvNormalization::PerFold).unwrap();
    assert!((cv - total / 3.0).abs() < 1e-12 * total);
    let cv = kfold_cv(&data, 3, |_| Ok(Zero), 7, CvNormalization::PerObservation).unwrap();
    assert!((cv - total / 31.0).abs() < 1e-12 * total);
}

#[test]
fn exact_predictor_scores_zero() {
    let n = 24;
    let z = DMatrix::from_fn(n, 2, |i, j| ((i * (j + 2)) % 3) as f64);
    let gamma = DMatrix::from_row_slice(2, 1, &[0.5, -1.0]);
    let beta = DVector::from_element(1, 2.0);
    let y = &z * &gamma * &beta;
    let x = &z * &gamma;
    let data = Dataset::new(y, x, z).unwrap();
    let oracle = LinearIvPredictor {
        gamma,
        beta,
        z_means: DVector::zeros(2),
        y_mean: 0.0,
    };
    let cv = kfold_cv(&data, 4, |_| Ok(oracle.clone()), 3, CvNormalization::PerFold).unwrap();
    assert!(cv < 1e-24);
}

#[test]
fn fold_errors_name_the_fold() {
    let data = toy_data(12, 2);
    let mut calls = 0;
    let err = kfold_cv(
        &data,
        3,
        |_| {
            calls += 1;
            if calls == 2 {
                Err(ivep::Error::Numerical("boom".into()))
            } else {
                Ok(Zero)
            }
        },
        0,
        CvNormalization::PerFold,
    )
    .unwrap_err();
    assert!(matches!(err, ivep::Error::Fold { fold: 1, .. }));
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn r_squared_and_bic_formulas() {
    let y = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]);
    assert_eq!(r_squared(&y, &y).unwrap(), 1.0);
    assert_eq!(r_squared(&y, &DVector::from_element(4, 2.5)).unwrap(), 0.0);
    assert!(r_squared(&DVector::from_element(3, 1.0), &DVector::zeros(3)).is_err());

    // RSS = 10 with n = 10
    let y = DVector::from_element(10, 1.0);
    let pred = DVector::zeros(10);
    let b2 = bic(&y, &pred, 2).unwrap();
    assert!((b2 - 2.0 * 10f64.ln()).abs() < 1e-12);
    let b4 = bic(&y, &pred, 4).unwrap();
    assert!((b4 - b2 - 2.0 * 10f64.ln()).abs() < 1e-12);
    assert!(bic(&y, &y, 1).is_err());
}
