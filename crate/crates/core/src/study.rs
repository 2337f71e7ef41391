//! Monte-Carlo comparison of two-stage EP against the two-stage LASSO on
//! simulated data.

use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::baselines::two_stage_lasso;
use crate::ep::EpConfig;
use crate::error::Result;
use crate::hyperinit::{strategy1, Strategy1Options};
use crate::metrics::{kfold_cv, r_squared, selection_rates, CvNormalization};
use crate::simulate::{gen_dataset, NoiseScale, Truth};
use crate::two_stage::{fit, FitOptions, Predict};

/// Offset between a replicate's data seed and its fold-assignment seed.
pub const CV_SEED_OFFSET: u64 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub n: usize,
    pub reps: usize,
    pub seed: u64,
    pub folds: usize,
    pub ep: EpConfig,
    pub fit: FitOptions,
    pub strategy1: Strategy1Options,
    pub noise: NoiseScale,
}

/// Selection and prediction quality of one method on one replicate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MethodMetrics {
    pub fnr_beta: f64,
    pub fpr_beta: f64,
    pub fnr_gamma: f64,
    pub fpr_gamma: f64,
    /// CV error of the final estimates.
    pub cv: f64,
    /// Training R² of the final estimates.
    pub r2: f64,
    /// Wall-clock seconds for the full-data fit, initialization included.
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Replicate {
    pub index: usize,
    pub data_seed: u64,
    pub cv_seed: u64,
    pub ep: MethodMetrics,
    /// EP CV and R² computed from the dense posterior means.
    pub ep_cv_dense: f64,
    pub ep_r2_dense: f64,
    pub lasso: MethodMetrics,
    pub ep_stage1_converged: usize,
    pub ep_stage2_converged: bool,
}

/// Seeds used by replicate `r`.
pub fn replicate_seeds(seed: u64, r: usize) -> (u64, u64) {
    let data_seed = seed.wrapping_add(r as u64);
    (data_seed, data_seed.wrapping_add(CV_SEED_OFFSET))
}

/// Runs one replicate: simulate, fit both methods, score them.
pub fn run_replicate(truth: &Truth, cfg: &StudyConfig, r: usize) -> Result<Replicate> {
    let (data_seed, cv_seed) = replicate_seeds(cfg.seed, r);
    let data = gen_dataset(cfg.n, truth, data_seed, cfg.noise)?;
    let s1 = &cfg.strategy1;

    let start = Instant::now();
    let lasso = two_stage_lasso(&data, &s1.lambda1_grid, &s1.lambda2_grid, s1.criterion, s1.lasso)?;
    let lasso_secs = start.elapsed().as_secs_f64();

    let start = Instant::now();
    let init = strategy1(&data, s1)?;
    let ep_fit = fit(&data, &init.hyper, &cfg.ep, &cfg.fit)?;
    let ep_secs = start.elapsed().as_secs_f64();

    let lasso_beta: Vec<bool> = lasso.beta.iter().map(|b| *b != 0.0).collect();
    let lasso_gamma: Vec<bool> = lasso.gamma.iter().map(|g| *g != 0.0).collect();
    let truth_gamma: Vec<bool> = truth.gamma_support.iter().copied().collect();
    let ep_gamma: Vec<bool> = ep_fit.gamma_support.iter().copied().collect();

    let lasso_beta_rates = selection_rates(&truth.beta_support, &lasso_beta)?;
    let lasso_gamma_rates = selection_rates(&truth_gamma, &lasso_gamma)?;
    let ep_beta_rates = selection_rates(&truth.beta_support, &ep_fit.beta_support)?;
    let ep_gamma_rates = selection_rates(&truth_gamma, &ep_gamma)?;

    let lasso_cv = kfold_cv(
        &data,
        cfg.folds,
        |train| {
            two_stage_lasso(train, &s1.lambda1_grid, &s1.lambda2_grid, s1.criterion, s1.lasso)
                .map(|f| f.predictor())
        },
        cv_seed,
        CvNormalization::PerFold,
    )?;
    let ep_cv_for = |use_post: bool| {
        kfold_cv(
            &data,
            cfg.folds,
            |train| fit(train, &init.hyper, &cfg.ep, &cfg.fit).map(|f| f.predictor(use_post)),
            cv_seed,
            CvNormalization::PerFold,
        )
    };
    let ep_cv = ep_cv_for(true)?;
    let ep_cv_dense = ep_cv_for(false)?;

    let train_r2 = |pred: DVector<f64>| r_squared(&data.y, &pred);
    let ep_r2 = train_r2(ep_fit.predictor(true).predict(&data.z))?;
    let ep_r2_dense = train_r2(ep_fit.predictor(false).predict(&data.z))?;
    let lasso_r2 = train_r2(lasso.predictor().predict(&data.z))?;

    Ok(Replicate {
        index: r,
        data_seed,
        cv_seed,
        ep: MethodMetrics {
            fnr_beta: ep_beta_rates.fnr,
            fpr_beta: ep_beta_rates.fpr,
            fnr_gamma: ep_gamma_rates.fnr,
            fpr_gamma: ep_gamma_rates.fpr,
            cv: ep_cv,
            r2: ep_r2,
            seconds: ep_secs,
        },
        ep_cv_dense,
        ep_r2_dense,
        lasso: MethodMetrics {
            fnr_beta: lasso_beta_rates.fnr,
            fpr_beta: lasso_beta_rates.fpr,
            fnr_gamma: lasso_gamma_rates.fnr,
            fpr_gamma: lasso_gamma_rates.fpr,
            cv: lasso_cv,
            r2: lasso_r2,
            seconds: lasso_secs,
        },
        ep_stage1_converged: ep_fit.stage1_converged.iter().filter(|c| **c).count(),
        ep_stage2_converged: ep_fit.stage2_converged,
    })
}

/// Runs every replicate in order.
pub fn run_study(truth: &Truth, cfg: &StudyConfig) -> Result<Vec<Replicate>> {
    (0..cfg.reps).map(|r| run_replicate(truth, cfg, r)).collect()
}

/// Median (mean of the two central values for even lengths); NaN for an
/// empty slice.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    }
}
