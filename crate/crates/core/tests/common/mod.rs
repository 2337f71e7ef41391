#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

pub fn gaussian_vector(rng: &mut ChaCha8Rng, len: usize) -> DVector<f64> {
    DVector::from_fn(len, |_, _| StandardNormal.sample(rng))
}

pub fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..hi)
}

fn ln_gaussian_density(y: &DVector<f64>, cov: &DMatrix<f64>) -> (f64, DVector<f64>) {
    let n = y.len() as f64;
    let chol = cov.clone().cholesky().expect("SPD covariance");
    let alpha = chol.solve(y);
    let ln_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let ll = -0.5 * (n * (2.0 * std::f64::consts::PI).ln() + ln_det + y.dot(&alpha));
    (ll, alpha)
}

/// Exact posterior of the spike-and-slab linear model by summing over all
/// `2^d` supports. Returns posterior means and inclusion probabilities.
pub fn exact_spike_slab(
    design: &DMatrix<f64>,
    target: &DVector<f64>,
    noise_var: f64,
    slab_var: f64,
    prior: f64,
) -> (DVector<f64>, DVector<f64>) {
    let (n, d) = design.shape();
    assert!(d <= 16);
    let mut log_w = Vec::with_capacity(1 << d);
    let mut means = Vec::with_capacity(1 << d);
    for mask in 0u32..(1 << d) {
        let cols: Vec<usize> = (0..d).filter(|j| mask & (1 << j) != 0).collect();
        let k = cols.len();
        let ds = design.select_columns(&cols);
        let cov = &ds * ds.transpose() * slab_var + DMatrix::identity(n, n) * noise_var;
        let (ll, alpha) = ln_gaussian_density(target, &cov);
        let lp = k as f64 * prior.ln() + (d - k) as f64 * (1.0 - prior).ln();
        log_w.push(ll + lp);
        let sub = ds.transpose() * alpha * slab_var;
        let mut full = DVector::zeros(d);
        for (i, &j) in cols.iter().enumerate() {
            full[j] = sub[i];
        }
        means.push((mask, full));
    }
    let top = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = log_w.iter().map(|l| (l - top).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut mean = DVector::zeros(d);
    let mut incl = DVector::zeros(d);
    for (w, (mask, m)) in weights.iter().zip(&means) {
        let w = w / total;
        mean += m * w;
        for j in 0..d {
            if mask & (1 << j) != 0 {
                incl[j] += w;
            }
        }
    }
    (mean, incl)
}

/// Dense Gaussian posterior: `V = (D'D / s2 + S^-1)^-1`,
/// `m = V (D't / s2 + S^-1 mu)`.
pub fn dense_posterior(
    design: &DMatrix<f64>,
    prior_means: &DVector<f64>,
    prior_vars: &DVector<f64>,
    noise_var: f64,
    target: &DVector<f64>,
) -> (DVector<f64>, DVector<f64>) {
    let prec = design.transpose() * design / noise_var + DMatrix::from_diagonal(&prior_vars.map(|v| 1.0 / v));
    let cov = prec.cholesky().expect("SPD precision").inverse();
    let rhs = design.transpose() * target / noise_var + prior_means.component_div(prior_vars);
    (cov.diagonal(), &cov * rhs)
}

/// Plain OLS through the normal equations.
pub fn ols(design: &DMatrix<f64>, target: &DVector<f64>) -> DVector<f64> {
    let gram = design.transpose() * design;
    gram.cholesky().expect("full column rank").solve(&(design.transpose() * target))
}
