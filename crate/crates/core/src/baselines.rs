//! Frequentist baselines: cyclic coordinate-descent LASSO with information
//! criterion model selection, ridge regression, and the two-stage LASSO for
//! instrumental-variables regression.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::cholesky_lower;
use crate::two_stage::{Centering, Dataset, LinearIvPredictor};

/// Result of one LASSO solve.
#[derive(Debug, Clone, PartialEq)]
pub struct LassoSolution {
    pub coef: DVector<f64>,
    pub lambda: f64,
    /// Number of full coordinate sweeps.
    pub iters: usize,
    /// Largest violation of the subgradient optimality conditions.
    pub kkt_violation: f64,
}

impl LassoSolution {
    pub fn active_set_size(&self) -> usize {
        self.coef.iter().filter(|c| **c != 0.0).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
pub enum Criterion {
    Aic,
    Bic,
}

impl Criterion {
    /// `n ln(RSS / n) + penalty * df`, penalty 2 (AIC) or `ln n` (BIC).
    pub fn score(self, n: usize, rss: f64, df: usize) -> f64 {
        let nf = n as f64;
        let penalty = match self {
            Criterion::Aic => 2.0,
            Criterion::Bic => nf.ln(),
        };
        nf * (rss.max(f64::MIN_POSITIVE) / nf).ln() + penalty * df as f64
    }
}

/// How to build a LASSO penalty grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LambdaGrid {
    /// `len` log-spaced values from `lambda_max` down to `ratio * lambda_max`,
    /// where `lambda_max = max |D' t| / n` is computed per problem.
    Auto { len: usize, ratio: f64 },
    Fixed(Vec<f64>),
}

impl Default for LambdaGrid {
    fn default() -> Self {
        LambdaGrid::Auto {
            len: 50,
            ratio: 1e-3,
        }
    }
}

impl LambdaGrid {
    pub fn resolve(&self, design: &DMatrix<f64>, target: &DVector<f64>) -> Vec<f64> {
        match self {
            LambdaGrid::Fixed(v) => v.clone(),
            LambdaGrid::Auto { len, ratio } => {
                let lmax = lambda_max(design, target);
                if lmax <= 0.0 {
                    return vec![1.0];
                }
                log_spaced(lmax, lmax * ratio, *len)
            }
        }
    }
}

/// Smallest penalty at which the LASSO solution is identically zero.
pub fn lambda_max(design: &DMatrix<f64>, target: &DVector<f64>) -> f64 {
    let n = design.nrows() as f64;
    design.tr_mul(target).amax() / n
}

fn log_spaced(hi: f64, lo: f64, len: usize) -> Vec<f64> {
    match len {
        0 => Vec::new(),
        1 => vec![hi],
        _ => {
            let (a, b) = (hi.ln(), lo.ln());
            (0..len)
                .map(|i| (a + (b - a) * i as f64 / (len - 1) as f64).exp())
                .collect()
        }
    }
}

/// Excess over the threshold below which a coordinate is treated as
/// inactive, relative to the threshold.
const THRESHOLD_SLACK: f64 = 1e-10;

#[inline]
fn soft_threshold(x: f64, t: f64) -> f64 {
    let t_eff = t * (1.0 + THRESHOLD_SLACK);
    if x > t_eff {
        x - t
    } else if x < -t_eff {
        x + t
    } else {
        0.0
    }
}

/// `(1/2n) |t - D w|^2 + lambda |w|_1`
pub fn lasso_objective(design: &DMatrix<f64>, target: &DVector<f64>, coef: &DVector<f64>, lambda: f64) -> f64 {
    let n = design.nrows() as f64;
    let r = target - design * coef;
    0.5 * r.norm_squared() / n + lambda * coef.lp_norm(1)
}

/// Largest violation of the LASSO stationarity conditions at `coef`.
pub fn lasso_kkt_violation(
    design: &DMatrix<f64>,
    target: &DVector<f64>,
    coef: &DVector<f64>,
    lambda: f64,
) -> f64 {
    let residual = target - design * coef;
    kkt_from_residual(design, &residual, coef, lambda)
}

fn kkt_from_residual(design: &DMatrix<f64>, residual: &DVector<f64>, coef: &DVector<f64>, lambda: f64) -> f64 {
    let n = design.nrows() as f64;
    design
        .column_iter()
        .zip(coef.iter())
        .map(|(col, &w)| {
            let g = col.dot(residual) / n;
            if w != 0.0 {
                (g - lambda * w.signum()).abs()
            } else {
                (g.abs() - lambda).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

/// Cyclic coordinate descent for `(1/2n) |t - D w|^2 + lambda |w|_1`.
///
/// Stops once a sweep moves no coefficient by more than `tol` and the KKT
/// residual is at most `tol`.
pub fn lasso_cd(
    design: &DMatrix<f64>,
    target: &DVector<f64>,
    lambda: f64,
    tol: f64,
    max_iters: usize,
) -> Result<LassoSolution> {
    lasso_cd_from(design, target, lambda, tol, max_iters, None, |_| {})
}

/// [`lasso_cd`] with an optional warm start and a callback receiving the
/// objective after every sweep.
pub fn lasso_cd_from<F>(
    design: &DMatrix<f64>,
    target: &DVector<f64>,
    lambda: f64,
    tol: f64,
    max_iters: usize,
    warm: Option<&DVector<f64>>,
    mut on_sweep: F,
) -> Result<LassoSolution>
where
    F: FnMut(f64),
{
    let (n, d) = design.shape();
    if target.len() != n {
        return Err(Error::Dimension(format!(
            "design has {n} rows, target has {}",
            target.len()
        )));
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::Domain(format!("lasso penalty must be positive, got {lambda}")));
    }
    if tol.is_nan() || tol <= 0.0 {
        return Err(Error::Domain(format!("lasso tolerance must be positive, got {tol}")));
    }
    let nf = n as f64;
    let col_sq: Vec<f64> = design.column_iter().map(|c| c.norm_squared() / nf).collect();
    let mut coef = match warm {
        Some(w) if w.len() == d => w.clone(),
        Some(w) => {
            return Err(Error::Dimension(format!(
                "warm start has {} entries, expected {d}",
                w.len()
            )))
        }
        None => DVector::zeros(d),
    };
    let mut residual = target - design * &coef;
    let mut kkt = f64::INFINITY;
    let mut iters = 0;
    while iters < max_iters {
        iters += 1;
        let mut max_change = 0.0_f64;
        for j in 0..d {
            let old = coef[j];
            let new = if col_sq[j] > 0.0 {
                let col = design.column(j);
                let rho = col.dot(&residual) / nf + col_sq[j] * old;
                soft_threshold(rho, lambda) / col_sq[j]
            } else {
                0.0
            };
            let delta = new - old;
            if delta != 0.0 {
                residual.axpy(-delta, &design.column(j), 1.0);
                coef[j] = new;
                max_change = max_change.max(delta.abs());
            }
        }
        on_sweep(0.5 * residual.norm_squared() / nf + lambda * coef.lp_norm(1));
        if max_change < tol {
            kkt = kkt_from_residual(design, &residual, &coef, lambda);
            if kkt <= tol {
                break;
            }
        }
    }
    if !kkt.is_finite() || iters == max_iters {
        kkt = kkt_from_residual(design, &residual, &coef, lambda);
    }
    if kkt > 10.0 * tol {
        return Err(Error::Convergence {
            iters,
            residual: kkt,
        });
    }
    Ok(LassoSolution {
        coef,
        lambda,
        iters,
        kkt_violation: kkt,
    })
}

/// Solver settings shared by the LASSO routines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LassoSettings {
    pub tol: f64,
    pub max_iters: usize,
    /// Path selection ends at the first solution with more than
    /// `max_df_fraction * n` active coefficients; `None` scores the whole
    /// grid.
    pub max_df_fraction: Option<f64>,
}

impl Default for LassoSettings {
    fn default() -> Self {
        LassoSettings {
            tol: 1e-7,
            max_iters: 20_000,
            max_df_fraction: Some(0.5),
        }
    }
}

impl LassoSettings {
    /// Largest admissible active-set size for `n` observations.
    pub fn max_df(&self, n: usize) -> usize {
        match self.max_df_fraction {
            Some(f) => (f * n as f64).floor() as usize,
            None => usize::MAX,
        }
    }
}

/// A fitted LASSO path with criterion scores.
#[derive(Debug, Clone, PartialEq)]
pub struct LassoPath {
    /// Penalties in decreasing order.
    pub lambdas: Vec<f64>,
    pub solutions: Vec<LassoSolution>,
    pub scores: Vec<f64>,
    pub best: usize,
}

impl LassoPath {
    pub fn best(&self) -> &LassoSolution {
        &self.solutions[self.best]
    }

    pub fn into_best(mut self) -> LassoSolution {
        self.solutions.swap_remove(self.best)
    }
}

/// Fits the LASSO along `lambda_grid` (warm-started from the largest penalty
/// down) and picks the minimizer of the information criterion. Ties go to
/// the larger penalty. With a degrees-of-freedom cap the path is truncated
/// before the first solution above it; the largest penalty is always kept.
pub fn lasso_select(
    design: &DMatrix<f64>,
    target: &DVector<f64>,
    lambda_grid: &[f64],
    criterion: Criterion,
    settings: LassoSettings,
) -> Result<LassoPath> {
    if lambda_grid.is_empty() {
        return Err(Error::Domain("empty lambda grid".into()));
    }
    if let Some(bad) = lambda_grid.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
        return Err(Error::Domain(format!("lambda grid entries must be positive, got {bad}")));
    }
    let mut lambdas = lambda_grid.to_vec();
    lambdas.sort_by(|a, b| b.total_cmp(a));

    if let Some(f) = settings.max_df_fraction {
        if !(f > 0.0 && f.is_finite()) {
            return Err(Error::Config(format!("max_df_fraction must be positive, got {f}")));
        }
    }
    let n = design.nrows();
    let max_df = settings.max_df(n);
    let mut solutions = Vec::with_capacity(lambdas.len());
    let mut scores = Vec::with_capacity(lambdas.len());
    let mut best = 0;
    for i in 0..lambdas.len() {
        let warm = solutions.last().map(|s: &LassoSolution| &s.coef);
        let sol = lasso_cd_from(design, target, lambdas[i], settings.tol, settings.max_iters, warm, |_| {})?;
        if i > 0 && sol.active_set_size() > max_df {
            lambdas.truncate(i);
            break;
        }
        let rss = (target - design * &sol.coef).norm_squared();
        let score = criterion.score(n, rss, sol.active_set_size());
        if i == 0 || score < scores[best] {
            best = i;
        }
        scores.push(score);
        solutions.push(sol);
    }
    Ok(LassoPath {
        lambdas,
        solutions,
        scores,
        best,
    })
}

/// Ridge regression `(D'D + n lambda I) w = D' t`.
///
/// Uses the `n x n` dual system when `d > n` and `lambda > 0`.
pub fn ridge_solve(design: &DMatrix<f64>, target: &DVector<f64>, lambda: f64) -> Result<DVector<f64>> {
    let (n, d) = design.shape();
    if d > n && lambda > 0.0 {
        ridge_solve_dual(design, target, lambda)
    } else {
        ridge_solve_primal(design, target, lambda)
    }
}

fn check_ridge(design: &DMatrix<f64>, target: &DVector<f64>, lambda: f64) -> Result<()> {
    if target.len() != design.nrows() {
        return Err(Error::Dimension(format!(
            "design has {} rows, target has {}",
            design.nrows(),
            target.len()
        )));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Domain(format!("ridge penalty must be non-negative, got {lambda}")));
    }
    Ok(())
}

fn singular_ridge(min_pivot: f64) -> Error {
    Error::Numerical(format!(
        "ridge system is singular (minimum pivot {min_pivot:e}); use a positive ridge penalty"
    ))
}

/// Ridge via the `d x d` normal equations.
pub fn ridge_solve_primal(design: &DMatrix<f64>, target: &DVector<f64>, lambda: f64) -> Result<DVector<f64>> {
    check_ridge(design, target, lambda)?;
    let (n, d) = design.shape();
    if d == 0 {
        return Ok(DVector::zeros(0));
    }
    let mut gram = design.tr_mul(design);
    for i in 0..d {
        gram[(i, i)] += n as f64 * lambda;
    }
    let l = cholesky_lower(&gram).map_err(singular_ridge)?;
    let rhs = design.tr_mul(target);
    l.solve_lower_triangular(&rhs)
        .and_then(|z| l.tr_solve_lower_triangular(&z))
        .ok_or_else(|| singular_ridge(0.0))
}

/// Ridge via the `n x n` dual system `w = D' (D D' + n lambda I)^{-1} t`.
pub fn ridge_solve_dual(design: &DMatrix<f64>, target: &DVector<f64>, lambda: f64) -> Result<DVector<f64>> {
    check_ridge(design, target, lambda)?;
    let n = design.nrows();
    let mut kernel = design * design.transpose();
    for i in 0..n {
        kernel[(i, i)] += n as f64 * lambda;
    }
    let l = cholesky_lower(&kernel).map_err(singular_ridge)?;
    let alpha = l
        .solve_lower_triangular(target)
        .and_then(|z| l.tr_solve_lower_triangular(&z))
        .ok_or_else(|| singular_ridge(0.0))?;
    Ok(design.tr_mul(&alpha))
}

/// Two-stage LASSO estimates, in centered coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoStageLasso {
    /// `q x p` first-stage coefficients.
    pub gamma: DMatrix<f64>,
    pub beta: DVector<f64>,
    /// Selected first-stage penalty per column.
    pub lambda1: Vec<f64>,
    pub lambda2: f64,
    pub centering: Centering,
}

impl TwoStageLasso {
    pub fn predictor(&self) -> LinearIvPredictor {
        LinearIvPredictor::new(self.gamma.clone(), self.beta.clone(), &self.centering)
    }

    /// Fitted covariates `Z_c Gamma` on the centered training instruments.
    pub fn xhat(&self, centered_z: &DMatrix<f64>) -> DMatrix<f64> {
        centered_z * &self.gamma
    }
}

/// LASSO of each covariate column on the instruments (independently, in
/// parallel), then LASSO of the response on the fitted covariates. The data
/// are centered first.
pub fn two_stage_lasso(
    data: &Dataset,
    lambda1_grid: &LambdaGrid,
    lambda2_grid: &LambdaGrid,
    criterion: Criterion,
    settings: LassoSettings,
) -> Result<TwoStageLasso> {
    let (centered, centering) = data.centered();
    let p = centered.p();
    let z = &centered.z;
    let columns: Vec<LassoSolution> = (0..p)
        .into_par_iter()
        .map(|j| {
            let target = centered.x.column(j).into_owned();
            let grid = lambda1_grid.resolve(z, &target);
            lasso_select(z, &target, &grid, criterion, settings)
                .map(LassoPath::into_best)
                .map_err(|e| Error::Column {
                    column: j,
                    source: Box::new(e),
                })
        })
        .collect::<Result<_>>()?;
    let mut gamma = DMatrix::zeros(centered.q(), p);
    let mut lambda1 = Vec::with_capacity(p);
    for (j, sol) in columns.into_iter().enumerate() {
        gamma.set_column(j, &sol.coef);
        lambda1.push(sol.lambda);
    }
    let xhat = z * &gamma;
    let grid = lambda2_grid.resolve(&xhat, &centered.y);
    let stage2 = lasso_select(&xhat, &centered.y, &grid, criterion, settings)?.into_best();
    Ok(TwoStageLasso {
        gamma,
        beta: stage2.coef,
        lambda1,
        lambda2: stage2.lambda,
        centering,
    })
}
