//! Two-stage EP for the sparse instrumental-variables model
//!
//! ```text
//! y = X beta + e,    X = Z Gamma + E
//! ```
//!
//! Stage I regresses every covariate column on the instruments with an
//! independent EP run; Stage II regresses the response on the fitted
//! covariates `X_hat = Z Gamma_hat`. Both stages use spike-and-slab priors.
//! Sparse supports come from a quantile rule on the posterior exclusion
//! probabilities, and the selected coefficients are refit with ridge.
//!
//! All fitting happens on column-centered data; the means are stored so that
//! predictions can be made on the original scale.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::ridge_solve;
use crate::ep::{run_ep, EpConfig, MarginalPosterior};
use crate::error::{Error, Result};
use crate::numerics::{logistic, quantile_nearest_rank, Probability};

/// Response `y` (n), covariates `X` (n x p) and instruments `Z` (n x q).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub y: DVector<f64>,
    pub x: DMatrix<f64>,
    pub z: DMatrix<f64>,
}

/// Column means removed by [`Dataset::centered`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Centering {
    pub y_mean: f64,
    pub x_means: DVector<f64>,
    pub z_means: DVector<f64>,
}

fn column_means(m: &DMatrix<f64>) -> DVector<f64> {
    let n = m.nrows().max(1) as f64;
    DVector::from_iterator(m.ncols(), m.column_iter().map(|c| c.sum() / n))
}

fn subtract_column_means(m: &DMatrix<f64>, means: &DVector<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        col.add_scalar_mut(-means[j]);
    }
    out
}

impl Dataset {
    pub fn new(y: DVector<f64>, x: DMatrix<f64>, z: DMatrix<f64>) -> Result<Self> {
        let n = y.len();
        if x.nrows() != n || z.nrows() != n {
            return Err(Error::Dimension(format!(
                "y has {n} rows, X has {}, Z has {}",
                x.nrows(),
                z.nrows()
            )));
        }
        if n == 0 || x.ncols() == 0 || z.ncols() == 0 {
            return Err(Error::Dimension(format!(
                "empty dataset: n={n}, p={}, q={}",
                x.ncols(),
                z.ncols()
            )));
        }
        if y.iter().chain(x.iter()).chain(z.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Domain("dataset contains non-finite values".into()));
        }
        Ok(Dataset { y, x, z })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn q(&self) -> usize {
        self.z.ncols()
    }

    /// Copy with every column (and `y`) shifted to mean zero.
    pub fn centered(&self) -> (Dataset, Centering) {
        let centering = Centering {
            y_mean: self.y.mean(),
            x_means: column_means(&self.x),
            z_means: column_means(&self.z),
        };
        let data = Dataset {
            y: self.y.add_scalar(-centering.y_mean),
            x: subtract_column_means(&self.x, &centering.x_means),
            z: subtract_column_means(&self.z, &centering.z_means),
        };
        (data, centering)
    }

    /// Rows `idx` of every matrix, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Dataset {
        Dataset {
            y: DVector::from_iterator(idx.len(), idx.iter().map(|&i| self.y[i])),
            x: self.x.select_rows(idx),
            z: self.z.select_rows(idx),
        }
    }
}

/// Noise variances, slab variances and prior inclusion probabilities of
/// both stages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    /// Stage II noise variance.
    pub sigma0_sq: f64,
    /// Stage I noise variance.
    pub tau0_sq: f64,
    /// Slab variance for `beta`.
    pub nu0: f64,
    /// Slab variance for `Gamma`.
    pub omega0: f64,
    /// Prior inclusion probability for `beta`.
    pub p0: Probability,
    /// Prior inclusion probability for `Gamma`.
    pub pi0: Probability,
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("sigma0_sq", self.sigma0_sq),
            ("tau0_sq", self.tau0_sq),
            ("nu0", self.nu0),
            ("omega0", self.omega0),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    pub fn stage1_config(&self, base: &EpConfig) -> EpConfig {
        base.with_model(self.tau0_sq, self.omega0, self.pi0)
    }

    pub fn stage2_config(&self, base: &EpConfig) -> EpConfig {
        base.with_model(self.sigma0_sq, self.nu0, self.p0)
    }
}

/// Which first-stage coefficients build the Stage II design.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum XhatSource {
    /// Dense posterior means.
    #[default]
    Dense,
    /// Posterior means with non-selected entries zeroed.
    Sparse,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Penalty of the ridge post-estimation.
    pub lambda_ridge: f64,
    pub xhat: XhatSource,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            lambda_ridge: 1e-2,
            xhat: XhatSource::Dense,
        }
    }
}

/// Stage I output: one EP run per covariate column.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage1Fit {
    /// `q x p` posterior means.
    pub gamma_hat: DMatrix<f64>,
    /// `q x p` inclusion log-odds.
    pub gamma_u: DMatrix<f64>,
    pub converged: Vec<bool>,
    pub iters: Vec<usize>,
    pub max_delta: Vec<f64>,
}

/// Stage II output.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage2Fit {
    pub beta_hat: DVector<f64>,
    pub beta_u: DVector<f64>,
    pub converged: bool,
    pub iters: usize,
    pub max_delta: f64,
}

/// Everything produced by [`fit`]. Coefficients are in centered coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoStageFit {
    pub gamma_hat: DMatrix<f64>,
    pub beta_hat: DVector<f64>,
    pub gamma_u: DMatrix<f64>,
    pub beta_u: DVector<f64>,
    pub gamma_support: DMatrix<bool>,
    pub beta_support: Vec<bool>,
    /// Ridge refit on the selected supports, zero elsewhere.
    pub beta_post: DVector<f64>,
    pub gamma_post: DMatrix<f64>,
    pub stage1_converged: Vec<bool>,
    pub stage1_iters: Vec<usize>,
    pub stage1_max_delta: Vec<f64>,
    pub stage2_converged: bool,
    pub stage2_iters: usize,
    pub stage2_max_delta: f64,
    pub hyper: HyperParams,
    pub centering: Centering,
}

impl TwoStageFit {
    /// Plug-in predictor from either the dense posterior means or the
    /// post-estimates.
    pub fn predictor(&self, use_post: bool) -> LinearIvPredictor {
        if use_post {
            LinearIvPredictor::new(self.gamma_post.clone(), self.beta_post.clone(), &self.centering)
        } else {
            LinearIvPredictor::new(self.gamma_hat.clone(), self.beta_hat.clone(), &self.centering)
        }
    }

    pub fn beta_df(&self) -> usize {
        self.beta_support.iter().filter(|s| **s).count()
    }

    pub fn gamma_df(&self) -> usize {
        self.gamma_support.iter().filter(|s| **s).count()
    }
}

/// Anything that predicts the response from instruments.
pub trait Predict {
    fn predict(&self, z: &DMatrix<f64>) -> DVector<f64>;
}

/// `y_mean + (Z - z_means) Gamma beta`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearIvPredictor {
    pub gamma: DMatrix<f64>,
    pub beta: DVector<f64>,
    pub z_means: DVector<f64>,
    pub y_mean: f64,
}

impl LinearIvPredictor {
    pub fn new(gamma: DMatrix<f64>, beta: DVector<f64>, centering: &Centering) -> Self {
        LinearIvPredictor {
            gamma,
            beta,
            z_means: centering.z_means.clone(),
            y_mean: centering.y_mean,
        }
    }
}

impl Predict for LinearIvPredictor {
    fn predict(&self, z: &DMatrix<f64>) -> DVector<f64> {
        let effect = &self.gamma * &self.beta;
        let offset = self.y_mean - self.z_means.dot(&effect);
        (z * effect).add_scalar(offset)
    }
}

/// Row-major vectorization: rows of `m` laid end to end.
pub fn vec_row_major<T: nalgebra::Scalar + Copy>(m: &DMatrix<T>) -> Vec<T> {
    let mut out = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        out.extend(m.row(i).iter().copied());
    }
    out
}

/// Inverse of [`vec_row_major`].
pub fn unvec_row_major<T: nalgebra::Scalar + Copy>(v: &[T], rows: usize, cols: usize) -> Result<DMatrix<T>> {
    if v.len() != rows * cols {
        return Err(Error::Dimension(format!(
            "cannot reshape {} values into {rows}x{cols}",
            v.len()
        )));
    }
    Ok(DMatrix::from_row_slice(rows, cols, v))
}

/// Stage I: one independent EP run of each column of `x` on `z`
/// (noise `tau0_sq`, slab `omega0`, prior `pi0`). Columns run in parallel
/// on the current rayon pool; the result does not depend on scheduling.
pub fn stage1_fit(x: &DMatrix<f64>, z: &DMatrix<f64>, hyper: &HyperParams, cfg: &EpConfig) -> Result<Stage1Fit> {
    if x.nrows() != z.nrows() {
        return Err(Error::Dimension(format!(
            "X has {} rows, Z has {}",
            x.nrows(),
            z.nrows()
        )));
    }
    let stage_cfg = hyper.stage1_config(cfg);
    stage_cfg.validate()?;
    let runs: Vec<MarginalPosterior> = (0..x.ncols())
        .into_par_iter()
        .map(|j| {
            let target = x.column(j).into_owned();
            run_ep(z, &target, &stage_cfg).map_err(|e| Error::Column {
                column: j,
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;

    let (q, p) = (z.ncols(), x.ncols());
    let mut out = Stage1Fit {
        gamma_hat: DMatrix::zeros(q, p),
        gamma_u: DMatrix::zeros(q, p),
        converged: Vec::with_capacity(p),
        iters: Vec::with_capacity(p),
        max_delta: Vec::with_capacity(p),
    };
    for (j, run) in runs.into_iter().enumerate() {
        out.gamma_hat.set_column(j, &run.xi);
        out.gamma_u.set_column(j, &run.u);
        out.converged.push(run.converged);
        out.iters.push(run.iters);
        out.max_delta.push(run.max_delta);
    }
    Ok(out)
}

/// `X_hat = Z Gamma_hat`.
pub fn predict_covariates(z: &DMatrix<f64>, gamma_hat: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if z.ncols() != gamma_hat.nrows() {
        return Err(Error::Dimension(format!(
            "Z has {} columns, Gamma has {} rows",
            z.ncols(),
            gamma_hat.nrows()
        )));
    }
    Ok(z * gamma_hat)
}

/// Stage II: EP of `y` on `X_hat` (noise `sigma0_sq`, slab `nu0`, prior `p0`).
pub fn stage2_fit(y: &DVector<f64>, xhat: &DMatrix<f64>, hyper: &HyperParams, cfg: &EpConfig) -> Result<Stage2Fit> {
    let run = run_ep(xhat, y, &hyper.stage2_config(cfg))?;
    Ok(Stage2Fit {
        beta_hat: run.xi,
        beta_u: run.u,
        converged: run.converged,
        iters: run.iters,
        max_delta: run.max_delta,
    })
}

/// Support from inclusion log-odds: coordinate `j` is dropped iff its
/// exclusion probability `sigmoid(-u_j)` is strictly above the nearest-rank
/// `level`-quantile of all exclusion probabilities.
pub fn sparsify(u: &[f64], level: Probability) -> Result<Vec<bool>> {
    if u.iter().any(|x| !x.is_finite()) {
        return Err(Error::Domain("inclusion log-odds must be finite".into()));
    }
    let excl: Vec<f64> = u.iter().map(|&x| logistic(-x)).collect();
    let threshold = quantile_nearest_rank(&excl, level.value())?;
    Ok(excl.iter().map(|&e| e <= threshold).collect())
}

/// Ridge refit on the selected supports.
///
/// Each covariate column is regressed on its selected instruments; the
/// response is then regressed on the selected columns of the rebuilt
/// `Z Gamma_post`. Coefficients off-support are exactly zero.
pub fn post_estimate(
    data: &Dataset,
    beta_support: &[bool],
    gamma_support: &DMatrix<bool>,
    lambda_ridge: f64,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (q, p) = (data.q(), data.p());
    if beta_support.len() != p || gamma_support.shape() != (q, p) {
        return Err(Error::Dimension(format!(
            "supports are {} and {:?}, data has p={p}, q={q}",
            beta_support.len(),
            gamma_support.shape()
        )));
    }
    let mut gamma_post = DMatrix::zeros(q, p);
    for j in 0..p {
        let rows: Vec<usize> = (0..q).filter(|&i| gamma_support[(i, j)]).collect();
        if rows.is_empty() {
            continue;
        }
        let design = data.z.select_columns(&rows);
        let coef = ridge_solve(&design, &data.x.column(j).into_owned(), lambda_ridge)
            .map_err(|e| Error::Column {
                column: j,
                source: Box::new(e),
            })?;
        for (k, &i) in rows.iter().enumerate() {
            gamma_post[(i, j)] = coef[k];
        }
    }

    let mut beta_post = DVector::zeros(p);
    let cols: Vec<usize> = (0..p).filter(|&j| beta_support[j]).collect();
    if !cols.is_empty() {
        let xhat_post = &data.z * &gamma_post;
        let design = xhat_post.select_columns(&cols);
        let coef = ridge_solve(&design, &data.y, lambda_ridge)?;
        for (k, &j) in cols.iter().enumerate() {
            beta_post[j] = coef[k];
        }
    }
    Ok((beta_post, gamma_post))
}

/// The full two-stage procedure on centered data.
pub fn fit(data: &Dataset, hyper: &HyperParams, cfg: &EpConfig, opts: &FitOptions) -> Result<TwoStageFit> {
    hyper.validate()?;
    cfg.validate()?;
    let (centered, centering) = data.centered();
    let (q, p) = (data.q(), data.p());

    let stage1 = stage1_fit(&centered.x, &centered.z, hyper, cfg)?;
    let gamma_u_vec = vec_row_major(&stage1.gamma_u);
    let gamma_support = unvec_row_major(&sparsify(&gamma_u_vec, hyper.pi0)?, q, p)?;

    let xhat = match opts.xhat {
        XhatSource::Dense => predict_covariates(&centered.z, &stage1.gamma_hat)?,
        XhatSource::Sparse => {
            let masked = stage1
                .gamma_hat
                .zip_map(&gamma_support, |g, keep| if keep { g } else { 0.0 });
            predict_covariates(&centered.z, &masked)?
        }
    };
    let stage2 = stage2_fit(&centered.y, &xhat, hyper, cfg)?;
    let beta_support = sparsify(stage2.beta_u.as_slice(), hyper.p0)?;
    let (beta_post, gamma_post) = post_estimate(&centered, &beta_support, &gamma_support, opts.lambda_ridge)?;

    Ok(TwoStageFit {
        gamma_hat: stage1.gamma_hat,
        beta_hat: stage2.beta_hat,
        gamma_u: stage1.gamma_u,
        beta_u: stage2.beta_u,
        gamma_support,
        beta_support,
        beta_post,
        gamma_post,
        stage1_converged: stage1.converged,
        stage1_iters: stage1.iters,
        stage1_max_delta: stage1.max_delta,
        stage2_converged: stage2.converged,
        stage2_iters: stage2.iters,
        stage2_max_delta: stage2.max_delta,
        hyper: *hyper,
        centering,
    })
}

/// Plug-in prediction `Z_new Gamma beta` on the original scale.
pub fn predict_response(z_new: &DMatrix<f64>, fit: &TwoStageFit, use_post: bool) -> Result<DVector<f64>> {
    if z_new.ncols() != fit.gamma_hat.nrows() {
        return Err(Error::Dimension(format!(
            "Z has {} columns, model expects {}",
            z_new.ncols(),
            fit.gamma_hat.nrows()
        )));
    }
    Ok(fit.predictor(use_post).predict(z_new))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prob(p: f64) -> Probability {
        Probability::new(p).unwrap()
    }

    #[test]
    fn sparsify_examples() {
        assert_eq!(sparsify(&[0.3; 5], prob(0.2)).unwrap(), vec![true; 5]);
        assert_eq!(
            sparsify(&[2.0, -2.0, 0.0], prob(0.5)).unwrap(),
            vec![true, false, true]
        );
        assert!(sparsify(&[f64::NAN], prob(0.5)).is_err());
    }

    #[test]
    fn row_major_convention() {
        let m = DMatrix::from_row_slice(2, 3, &[1, 2, 3, 4, 5, 6]);
        assert_eq!(vec_row_major(&m), vec![1, 2, 3, 4, 5, 6]);
        assert_eq!(unvec_row_major(&[1, 2, 3, 4, 5, 6], 2, 3).unwrap(), m);
        assert!(unvec_row_major(&[1, 2], 2, 3).is_err());
    }

    #[test]
    fn predict_covariates_identity_instrument() {
        let g = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(predict_covariates(&DMatrix::identity(3, 3), &g).unwrap(), g);
        assert_eq!(
            predict_covariates(&DMatrix::from_element(4, 3, 1.5), &DMatrix::zeros(3, 2)).unwrap(),
            DMatrix::zeros(4, 2)
        );
        assert!(predict_covariates(&DMatrix::zeros(4, 2), &g).is_err());
    }

    #[test]
    fn predict_covariates_matches_hand_product() {
        let z = DMatrix::from_row_slice(3, 4, &[1., 0., 2., -1., 0., 1., 1., 1., 3., -2., 0., 0.5]);
        let g = DMatrix::from_row_slice(4, 2, &[1., 0., 0., 1., 2., -1., 0.5, 0.5]);
        let xhat = predict_covariates(&z, &g).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                let mut s = 0.0;
                for k in 0..4 {
                    s += z[(i, k)] * g[(k, j)];
                }
                assert_eq!(xhat[(i, j)], s);
            }
        }
    }

    #[test]
    fn dataset_validation() {
        let ok = Dataset::new(DVector::zeros(2), DMatrix::zeros(2, 1), DMatrix::zeros(2, 3));
        assert!(ok.is_ok());
        assert!(Dataset::new(DVector::zeros(3), DMatrix::zeros(2, 1), DMatrix::zeros(2, 3)).is_err());
        let mut x = DMatrix::zeros(2, 1);
        x[(0, 0)] = f64::INFINITY;
        assert!(Dataset::new(DVector::zeros(2), x, DMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn prediction_by_hand() {
        let centering = Centering {
            y_mean: 0.0,
            x_means: DVector::zeros(1),
            z_means: DVector::zeros(2),
        };
        let pred = LinearIvPredictor::new(
            DMatrix::from_row_slice(2, 1, &[1.0, 1.0]),
            DVector::from_element(1, 2.0),
            &centering,
        );
        let out = pred.predict(&DMatrix::from_row_slice(1, 2, &[1.0, 3.0]));
        assert_eq!(out[0], 8.0);
    }

    #[test]
    fn post_estimate_empty_support() {
        let data = Dataset::new(
            DVector::from_vec(vec![1.0, -1.0, 0.5]),
            DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]),
            DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]),
        )
        .unwrap();
        let (beta, gamma) =
            post_estimate(&data, &[false, false], &DMatrix::from_element(2, 2, true), 0.1).unwrap();
        assert_eq!(beta, DVector::zeros(2));
        assert!(gamma.iter().any(|g| *g != 0.0));
        let (_, gamma) =
            post_estimate(&data, &[true, false], &DMatrix::from_element(2, 2, false), 0.1).unwrap();
        assert_eq!(gamma, DMatrix::zeros(2, 2));
    }
}
