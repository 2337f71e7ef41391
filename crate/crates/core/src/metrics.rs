//! Selection rates, k-fold cross-validation, R² and BIC.

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::two_stage::{Dataset, Predict};

/// False negative and false positive rates of an estimated support.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionRates {
    pub fnr: f64,
    pub fpr: f64,
    pub true_nonzero: usize,
    pub true_zero: usize,
    /// Set when a denominator is zero and the corresponding rate is reported
    /// as 0.
    pub undefined: bool,
}

pub fn selection_rates(truth: &[bool], estimate: &[bool]) -> Result<SelectionRates> {
    if truth.len() != estimate.len() {
        return Err(Error::Domain(format!(
            "support lengths differ: truth {}, estimate {}",
            truth.len(),
            estimate.len()
        )));
    }
    let (mut missed, mut false_hits, mut nonzero) = (0usize, 0usize, 0usize);
    for (&t, &e) in truth.iter().zip(estimate) {
        match (t, e) {
            (true, false) => missed += 1,
            (false, true) => false_hits += 1,
            _ => {}
        }
        nonzero += t as usize;
    }
    let zero = truth.len() - nonzero;
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    Ok(SelectionRates {
        fnr: ratio(missed, nonzero),
        fpr: ratio(false_hits, zero),
        true_nonzero: nonzero,
        true_zero: zero,
        undefined: nonzero == 0 || zero == 0,
    })
}

/// Normalization of the summed held-out squared errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum CvNormalization {
    /// Divide by the number of folds.
    #[default]
    PerFold,
    /// Divide by the number of observations.
    PerObservation,
}

/// Seeded partition of `0..n` into `k` folds whose sizes differ by at most
/// one.
pub fn fold_partition(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::Domain(format!("need at least 2 folds, got {k}")));
    }
    if n < k {
        return Err(Error::Domain(format!("cannot split {n} observations into {k} folds")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = vec![Vec::with_capacity(n / k + 1); k];
    for (pos, i) in order.into_iter().enumerate() {
        folds[pos % k].push(i);
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

/// k-fold cross-validated squared prediction error.
///
/// For each fold the fitter sees the complementary rows and its predictor is
/// evaluated on the held-out instruments.
pub fn kfold_cv<P, F>(
    data: &Dataset,
    k: usize,
    mut fitter: F,
    seed: u64,
    normalization: CvNormalization,
) -> Result<f64>
where
    P: Predict,
    F: FnMut(&Dataset) -> Result<P>,
{
    let n = data.n();
    let folds = fold_partition(n, k, seed)?;
    let mut total = 0.0;
    for (f, held_out) in folds.iter().enumerate() {
        let mut in_fold = vec![false; n];
        for &i in held_out {
            in_fold[i] = true;
        }
        let train_idx: Vec<usize> = (0..n).filter(|&i| !in_fold[i]).collect();
        let predictor = fitter(&data.select_rows(&train_idx)).map_err(|e| Error::Fold {
            fold: f,
            source: Box::new(e),
        })?;
        let test = data.select_rows(held_out);
        let pred = predictor.predict(&test.z);
        total += (&test.y - pred).norm_squared();
    }
    Ok(match normalization {
        CvNormalization::PerFold => total / k as f64,
        CvNormalization::PerObservation => total / n as f64,
    })
}

fn check_lengths(y: &DVector<f64>, y_pred: &DVector<f64>) -> Result<()> {
    if y.len() != y_pred.len() || y.is_empty() {
        return Err(Error::Domain(format!(
            "response has {} entries, prediction has {}",
            y.len(),
            y_pred.len()
        )));
    }
    Ok(())
}

/// `1 - RSS / TSS`.
pub fn r_squared(y: &DVector<f64>, y_pred: &DVector<f64>) -> Result<f64> {
    check_lengths(y, y_pred)?;
    let mean = y.mean();
    let tss: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    if tss <= 0.0 {
        return Err(Error::Domain("R² undefined for a constant response".into()));
    }
    Ok(1.0 - (y - y_pred).norm_squared() / tss)
}

/// `n ln(RSS / n) + df ln n`.
pub fn bic(y: &DVector<f64>, y_pred: &DVector<f64>, df: usize) -> Result<f64> {
    check_lengths(y, y_pred)?;
    let rss = (y - y_pred).norm_squared();
    if rss <= 0.0 {
        return Err(Error::Domain("BIC undefined for a perfect fit (RSS = 0)".into()));
    }
    let n = y.len() as f64;
    Ok(n * (rss / n).ln() + df as f64 * n.ln())
}
