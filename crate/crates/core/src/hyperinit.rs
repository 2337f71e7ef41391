//! Hyperparameter initialization.
//!
//! Strategy I plugs a two-stage LASSO fit into closed-form estimates of all
//! six hyperparameters. Strategy II keeps the Strategy I variances and
//! searches the two inclusion priors on a grid by cross-validation.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::baselines::{two_stage_lasso, Criterion, LambdaGrid, LassoSettings, TwoStageLasso};
use crate::ep::EpConfig;
use crate::error::{Error, Result};
use crate::metrics::{kfold_cv, CvNormalization};
use crate::numerics::Probability;
use crate::two_stage::{fit, Dataset, FitOptions, HyperParams};

/// Floor applied to estimated noise variances.
pub const VARIANCE_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InitSource {
    StrategyI,
    StrategyII,
}

/// Cross-validation error over a `(p0, pi0)` grid. `cv[(a, b)]` belongs to
/// `p0_grid[a]` and `pi0_grid[b]`; failed cells hold `+inf`.
#[derive(Debug, Clone, PartialEq)]
pub struct CvSurface {
    pub p0_grid: Vec<f64>,
    pub pi0_grid: Vec<f64>,
    pub cv: DMatrix<f64>,
}

impl CvSurface {
    /// Cell with the smallest CV; ties go to the smaller `p0`, then the
    /// smaller `pi0`. NaN counts as `+inf`.
    pub fn argmin(&self) -> (usize, usize) {
        let key = |v: f64| if v.is_nan() { f64::INFINITY } else { v };
        let mut best = (0, 0);
        for a in 0..self.p0_grid.len() {
            for b in 0..self.pi0_grid.len() {
                let (ba, bb) = best;
                let (v, bv) = (key(self.cv[(a, b)]), key(self.cv[(ba, bb)]));
                let better = v < bv
                    || (v == bv
                        && (self.p0_grid[a], self.pi0_grid[b]) < (self.p0_grid[ba], self.pi0_grid[bb]));
                if better {
                    best = (a, b);
                }
            }
        }
        best
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitReport {
    pub hyper: HyperParams,
    /// Nonzero entries of the initial beta.
    pub df1: usize,
    /// Nonzero entries of the initial Gamma.
    pub df2: usize,
    pub source: InitSource,
    pub cv_surface: Option<CvSurface>,
    /// Degenerate estimates that were replaced by fallbacks.
    pub repairs: Vec<String>,
    /// Seed of the fold assignment (Strategy II only).
    pub seed: Option<u64>,
}

/// Divisor of the first-stage residual sum of squares when estimating
/// `tau0_sq`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
pub enum TauScale {
    /// `n * p`: mean squared residual per matrix entry.
    #[default]
    PerEntry,
    /// `n`: squared residual per row summed over all `p` columns.
    PerRow,
}

/// Settings of the initial two-stage LASSO.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Strategy1Options {
    pub lambda1_grid: LambdaGrid,
    pub lambda2_grid: LambdaGrid,
    pub criterion: Criterion,
    pub lasso: LassoSettings,
    pub tau_scale: TauScale,
}

impl Default for Strategy1Options {
    fn default() -> Self {
        Strategy1Options {
            lambda1_grid: LambdaGrid::default(),
            lambda2_grid: LambdaGrid::default(),
            criterion: Criterion::Bic,
            lasso: LassoSettings::default(),
            tau_scale: TauScale::default(),
        }
    }
}

fn inclusion_estimate(df: usize, total: usize) -> f64 {
    let total = total as f64;
    let raw = df as f64 / total;
    // df == total would put the prior at exactly 1
    raw.min(1.0 - 0.5 / total)
}

/// Closed-form hyperparameters from an already fitted two-stage LASSO.
///
/// `data` must be the dataset the LASSO was fitted on; residuals are taken
/// in centered coordinates, matching the fit.
pub fn hyper_from_lasso(data: &Dataset, init: &TwoStageLasso, tau_scale: TauScale) -> Result<InitReport> {
    let (centered, _) = data.centered();
    let (n, p, q) = (data.n(), data.p(), data.q());
    let df1 = init.beta.iter().filter(|b| **b != 0.0).count();
    let df2 = init.gamma.iter().filter(|g| **g != 0.0).count();
    let mut repairs = Vec::new();

    let xhat = init.xhat(&centered.z);
    let df_star = if df1 < n { (n - df1) as f64 } else { n as f64 / 2.0 };
    let mut sigma0_sq = (&centered.y - &xhat * &init.beta).norm_squared() / df_star;
    let tau_div = match tau_scale {
        TauScale::PerEntry => (n * p) as f64,
        TauScale::PerRow => n as f64,
    };
    let mut tau0_sq = (&centered.x - &xhat).norm_squared() / tau_div;
    if sigma0_sq < VARIANCE_FLOOR {
        repairs.push(format!("sigma0_sq {sigma0_sq:e} floored at {VARIANCE_FLOOR:e}"));
        sigma0_sq = VARIANCE_FLOOR;
    }
    if tau0_sq < VARIANCE_FLOOR {
        repairs.push(format!("tau0_sq {tau0_sq:e} floored at {VARIANCE_FLOOR:e}"));
        tau0_sq = VARIANCE_FLOOR;
    }

    let (nu0, p0) = if df1 == 0 {
        repairs.push("empty initial beta support: nu0 = 1, p0 = 1/p".into());
        (1.0, 1.0 / p as f64)
    } else {
        (
            init.beta.norm_squared() / df1 as f64,
            inclusion_estimate(df1, p),
        )
    };
    let (omega0, pi0) = if df2 == 0 {
        repairs.push("empty initial Gamma support: omega0 = 1, pi0 = 1/(pq)".into());
        (1.0, 1.0 / (p * q) as f64)
    } else {
        (
            init.gamma.norm_squared() / df2 as f64,
            inclusion_estimate(df2, p * q),
        )
    };
    if df1 == p || df2 == p * q {
        repairs.push("full initial support: inclusion prior pulled below 1".into());
    }

    let hyper = HyperParams {
        sigma0_sq,
        tau0_sq,
        nu0,
        omega0,
        p0: Probability::new(p0)?,
        pi0: Probability::new(pi0)?,
    };
    hyper.validate()?;
    Ok(InitReport {
        hyper,
        df1,
        df2,
        source: InitSource::StrategyI,
        cv_surface: None,
        repairs,
        seed: None,
    })
}

/// Strategy I: fit the two-stage LASSO and derive every hyperparameter from
/// it.
pub fn strategy1(data: &Dataset, opts: &Strategy1Options) -> Result<InitReport> {
    let init = two_stage_lasso(data, &opts.lambda1_grid, &opts.lambda2_grid, opts.criterion, opts.lasso)?;
    hyper_from_lasso(data, &init, opts.tau_scale)
}

/// Settings of the Strategy II search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Strategy2Options {
    pub p0_grid: Vec<f64>,
    pub pi0_grid: Vec<f64>,
    pub folds: usize,
    pub seed: u64,
    pub fit: FitOptions,
    /// Score cells with the ridge post-estimates instead of the dense means.
    pub use_post: bool,
    pub normalization: CvNormalization,
}

/// `0.1, 0.3, 0.5, 0.7, 0.9`
pub fn default_prior_grid() -> Vec<f64> {
    (0..5).map(|i| 0.1 + 0.2 * i as f64).collect()
}

impl Default for Strategy2Options {
    fn default() -> Self {
        Strategy2Options {
            p0_grid: default_prior_grid(),
            pi0_grid: default_prior_grid(),
            folds: 3,
            seed: 0,
            fit: FitOptions::default(),
            use_post: true,
            normalization: CvNormalization::PerFold,
        }
    }
}

/// Strategy II starting from a Strategy I report: the variances stay fixed
/// and `(p0, pi0)` is chosen by k-fold CV over the grid.
pub fn strategy2_from(
    data: &Dataset,
    base: &InitReport,
    cfg: &EpConfig,
    opts: &Strategy2Options,
) -> Result<InitReport> {
    if opts.p0_grid.is_empty() || opts.pi0_grid.is_empty() {
        return Err(Error::Config("prior grids must be non-empty".into()));
    }
    if opts.folds < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {}", opts.folds)));
    }
    let as_probs = |grid: &[f64], name: &str| {
        grid.iter()
            .map(|&v| {
                Probability::new(v).map_err(|_| Error::Config(format!("{name} grid value {v} is outside (0, 1)")))
            })
            .collect::<Result<Vec<_>>>()
    };
    let p0s = as_probs(&opts.p0_grid, "p0")?;
    let pi0s = as_probs(&opts.pi0_grid, "pi0")?;

    let cells: Vec<(usize, usize)> = (0..p0s.len())
        .flat_map(|a| (0..pi0s.len()).map(move |b| (a, b)))
        .collect();
    let values: Vec<f64> = cells
        .iter()
        .map(|&(a, b)| {
            let hyper = HyperParams {
                p0: p0s[a],
                pi0: pi0s[b],
                ..base.hyper
            };
            kfold_cv(
                data,
                opts.folds,
                |train| fit(train, &hyper, cfg, &opts.fit).map(|f| f.predictor(opts.use_post)),
                opts.seed,
                opts.normalization,
            )
            .unwrap_or(f64::INFINITY)
        })
        .collect();

    let mut cv = DMatrix::from_element(p0s.len(), pi0s.len(), f64::INFINITY);
    for (&(a, b), v) in cells.iter().zip(values) {
        cv[(a, b)] = v;
    }
    let surface = CvSurface {
        p0_grid: opts.p0_grid.clone(),
        pi0_grid: opts.pi0_grid.clone(),
        cv,
    };
    let (a, b) = surface.argmin();
    let mut repairs = base.repairs.clone();
    if !surface.cv[(a, b)].is_finite() {
        repairs.push("every grid cell failed".into());
    }
    Ok(InitReport {
        hyper: HyperParams {
            p0: p0s[a],
            pi0: pi0s[b],
            ..base.hyper
        },
        df1: base.df1,
        df2: base.df2,
        source: InitSource::StrategyII,
        cv_surface: Some(surface),
        repairs,
        seed: Some(opts.seed),
    })
}

/// Strategy II: Strategy I followed by the `(p0, pi0)` grid search.
pub fn strategy2_grid(
    data: &Dataset,
    s1: &Strategy1Options,
    cfg: &EpConfig,
    opts: &Strategy2Options,
) -> Result<InitReport> {
    let base = strategy1(data, s1)?;
    strategy2_from(data, &base, cfg, opts)
}
