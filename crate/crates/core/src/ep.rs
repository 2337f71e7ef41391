//! Expectation propagation for `target = D w + noise` with independent
//! spike-and-slab priors on the coefficients `w`.
//!
//! The joint density is split into three factors: the Gaussian likelihood
//! (site 1, approximated by independent Gaussians), the spike-and-slab prior
//! (site 2, Gaussian times Bernoulli) and the Bernoulli inclusion prior
//! (site 3). Site 3 is exact after the first refinement and never changes.
//! Sites 1 and 2 are refined from the same snapshot every iteration and then
//! damped jointly in natural-parameter space.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{logistic, logit, lowrank_posterior, Probability};

/// Model and solver settings for one EP run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpConfig {
    /// Observation noise variance.
    pub noise_var: f64,
    /// Slab variance of the spike-and-slab prior.
    pub slab_var: f64,
    /// Prior inclusion probability.
    pub incl_prior: Probability,
    /// Convergence threshold on the largest absolute site-parameter change.
    pub tol: f64,
    pub max_iters: usize,
    /// Damping schedule `max(damp_floor, damp_start * damp_decay^t)`.
    pub damp_start: f64,
    pub damp_decay: f64,
    pub damp_floor: f64,
    /// Replacement for non-positive (or overly large) site variances.
    pub var_clamp: f64,
    /// Variance of the flat site-1 initialization.
    pub flat_var: f64,
}

impl Default for EpConfig {
    fn default() -> Self {
        EpConfig {
            noise_var: 1.0,
            slab_var: 1.0,
            incl_prior: Probability::new(0.5).unwrap(),
            tol: 1e-4,
            max_iters: 100,
            damp_start: 0.95,
            damp_decay: 0.97,
            damp_floor: 0.1,
            var_clamp: 1e6,
            flat_var: 1e6,
        }
    }
}

impl EpConfig {
    /// Copy of `self` with the model-specific fields replaced.
    pub fn with_model(&self, noise_var: f64, slab_var: f64, incl_prior: Probability) -> Self {
        EpConfig {
            noise_var,
            slab_var,
            incl_prior,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("noise_var", self.noise_var),
            ("slab_var", self.slab_var),
            ("tol", self.tol),
            ("var_clamp", self.var_clamp),
            ("flat_var", self.flat_var),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be at least 1".into()));
        }
        if !(self.damp_start > 0.0 && self.damp_start <= 1.0) {
            return Err(Error::Config(format!(
                "damp_start must lie in (0, 1], got {}",
                self.damp_start
            )));
        }
        if !(self.damp_decay > 0.0 && self.damp_decay < 1.0) {
            return Err(Error::Config(format!(
                "damp_decay must lie in (0, 1), got {}",
                self.damp_decay
            )));
        }
        if !(self.damp_floor > 0.0 && self.damp_floor <= self.damp_start) {
            return Err(Error::Config(format!(
                "damp_floor must lie in (0, damp_start], got {}",
                self.damp_floor
            )));
        }
        Ok(())
    }

    /// Damping factor used at iteration `t` (0-based).
    pub fn damping(&self, t: usize) -> f64 {
        let decayed = self.damp_start * self.damp_decay.powi(t.min(i32::MAX as usize) as i32);
        decayed.max(self.damp_floor)
    }
}

/// Site parameters of one EP run.
///
/// `m1/v1` parameterize the Gaussian approximation of the likelihood,
/// `m2/v2/p2` the Gaussian-times-Bernoulli approximation of the prior and
/// `p3` the Bernoulli inclusion prior. `p2` and `p3` are log-odds.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteState {
    pub m1: DVector<f64>,
    pub v1: DVector<f64>,
    pub m2: DVector<f64>,
    pub v2: DVector<f64>,
    pub p2: DVector<f64>,
    pub p3: DVector<f64>,
    pub iter: usize,
}

impl SiteState {
    pub fn dim(&self) -> usize {
        self.m1.len()
    }

    /// Largest absolute change over `m1, v1, m2, v2, p2`.
    pub fn max_abs_change(&self, other: &SiteState) -> f64 {
        [
            (&self.m1, &other.m1),
            (&self.v1, &other.v1),
            (&self.m2, &other.m2),
            (&self.v2, &other.v2),
            (&self.p2, &other.p2),
        ]
        .iter()
        .flat_map(|(a, b)| a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max)
    }
}

/// Gaussian-times-Bernoulli approximation of the marginal posterior.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalPosterior {
    /// Posterior means.
    pub xi: DVector<f64>,
    /// Posterior variances.
    pub s2: DVector<f64>,
    /// Posterior inclusion log-odds.
    pub u: DVector<f64>,
    pub converged: bool,
    pub iters: usize,
    pub max_delta: f64,
}

impl MarginalPosterior {
    pub fn inclusion_probs(&self) -> DVector<f64> {
        self.u.map(logistic)
    }
}

/// Refined parameters of the prior site.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorSiteUpdate {
    pub m2: DVector<f64>,
    pub v2: DVector<f64>,
    pub p2: DVector<f64>,
}

/// Refined parameters of the likelihood site.
#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodSiteUpdate {
    pub m1: DVector<f64>,
    pub v1: DVector<f64>,
}

/// Noninformative starting point with the inclusion-prior site already at
/// its fixed value.
pub fn init_sites(d: usize, cfg: &EpConfig) -> Result<SiteState> {
    if d == 0 {
        return Err(Error::Domain("EP needs at least one coefficient".into()));
    }
    cfg.validate()?;
    Ok(SiteState {
        m1: DVector::zeros(d),
        v1: DVector::from_element(d, cfg.flat_var),
        m2: DVector::zeros(d),
        v2: DVector::from_element(d, cfg.slab_var),
        p2: DVector::zeros(d),
        p3: refine_f3(d, cfg)?,
        iter: 0,
    })
}

/// Inclusion-prior site: the constant log-odds of the prior inclusion
/// probability.
pub fn refine_f3(d: usize, cfg: &EpConfig) -> Result<DVector<f64>> {
    Ok(DVector::from_element(d, logit(cfg.incl_prior.value())?))
}

/// Moment-matching update of the prior site against the cavity formed by the
/// likelihood and inclusion sites.
///
/// Non-positive variances (and variances above `var_clamp`) are replaced by
/// `var_clamp`; the mean is then taken from the same formula with the clamped
/// variance, which keeps the site's precision-mean at its moment-matched
/// limit.
pub fn refine_f2(sites: &SiteState, cfg: &EpConfig) -> Result<PriorSiteUpdate> {
    let d = sites.dim();
    let slab = cfg.slab_var;
    let mut m2 = DVector::zeros(d);
    let mut v2 = DVector::zeros(d);
    let mut p2 = DVector::zeros(d);
    for j in 0..d {
        let m1 = sites.m1[j];
        let v1 = sites.v1[j];
        if !(v1 > 0.0 && v1.is_finite()) {
            return Err(Error::Numerical(format!(
                "likelihood-site variance {j} is {v1}"
            )));
        }
        let wide = v1 + slab;
        let log_odds =
            0.5 * v1.ln() - 0.5 * wide.ln() + 0.5 * m1 * m1 * (1.0 / v1 - 1.0 / wide);
        let incl = logistic(log_odds + sites.p3[j]);
        let excl = logistic(-log_odds - sites.p3[j]);
        let a = incl * m1 / wide + excl * m1 / v1;
        let b = incl * (m1 * m1 - v1 - slab) / (wide * wide)
            + excl * (m1 * m1 / (v1 * v1) - 1.0 / v1);
        let curvature = a * a - b;
        if !curvature.is_finite() || !log_odds.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite prior-site update at coefficient {j} (a^2 - b = {curvature})"
            )));
        }
        let mut var = if curvature > 0.0 {
            1.0 / curvature - v1
        } else {
            -1.0
        };
        if var.is_nan() || var <= 0.0 || var > cfg.var_clamp {
            var = cfg.var_clamp;
        }
        m2[j] = m1 - a * (var + v1);
        v2[j] = var;
        p2[j] = log_odds;
    }
    Ok(PriorSiteUpdate { m2, v2, p2 })
}

/// Update of the likelihood site: divide the current prior site out of the
/// Gaussian posterior computed by [`lowrank_posterior`].
pub fn refine_f1(
    sites: &SiteState,
    design: &DMatrix<f64>,
    target: &DVector<f64>,
    cfg: &EpConfig,
) -> Result<LikelihoodSiteUpdate> {
    let post = lowrank_posterior(design, &sites.m2, &sites.v2, cfg.noise_var, target)?;
    let d = sites.dim();
    let min_precision = 1.0 / cfg.var_clamp;
    let mut m1 = DVector::zeros(d);
    let mut v1 = DVector::zeros(d);
    for j in 0..d {
        let vjj = post.diag_cov[j];
        let precision = 1.0 / vjj - 1.0 / sites.v2[j];
        let var = if precision > min_precision {
            1.0 / precision
        } else {
            cfg.var_clamp
        };
        let mean = (post.mean[j] / vjj - sites.m2[j] / sites.v2[j]) * var;
        if !mean.is_finite() || !var.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite likelihood-site update at coefficient {j}"
            )));
        }
        m1[j] = mean;
        v1[j] = var;
    }
    Ok(LikelihoodSiteUpdate { m1, v1 })
}

fn damp_gaussian(
    m_old: f64,
    v_old: f64,
    m_new: f64,
    v_new: f64,
    eps: f64,
    var_clamp: f64,
) -> (f64, f64) {
    let precision = eps / v_new + (1.0 - eps) / v_old;
    let shift = eps * m_new / v_new + (1.0 - eps) * m_old / v_old;
    if precision > 0.0 {
        let v = (1.0 / precision).min(var_clamp);
        (shift * v, v)
    } else {
        (shift * var_clamp, var_clamp)
    }
}

/// Geometric interpolation `new^eps * old^(1-eps)` of the site factors,
/// i.e. a convex combination of natural parameters. `p3` is copied from
/// `old`; `iter` is taken from `new`.
pub fn damp_sites(old: &SiteState, new: &SiteState, eps: f64, var_clamp: f64) -> Result<SiteState> {
    if old.dim() != new.dim() {
        return Err(Error::Dimension(format!(
            "damping {} sites against {}",
            new.dim(),
            old.dim()
        )));
    }
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::Domain(format!("damping factor must lie in (0, 1], got {eps}")));
    }
    if eps == 1.0 {
        return Ok(SiteState {
            p3: old.p3.clone(),
            ..new.clone()
        });
    }
    let d = old.dim();
    let mut out = SiteState {
        m1: DVector::zeros(d),
        v1: DVector::zeros(d),
        m2: DVector::zeros(d),
        v2: DVector::zeros(d),
        p2: DVector::zeros(d),
        p3: old.p3.clone(),
        iter: new.iter,
    };
    for j in 0..d {
        (out.m1[j], out.v1[j]) =
            damp_gaussian(old.m1[j], old.v1[j], new.m1[j], new.v1[j], eps, var_clamp);
        (out.m2[j], out.v2[j]) =
            damp_gaussian(old.m2[j], old.v2[j], new.m2[j], new.v2[j], eps, var_clamp);
        out.p2[j] = eps * new.p2[j] + (1.0 - eps) * old.p2[j];
    }
    Ok(out)
}

/// Product of the three sites: posterior means, variances and inclusion
/// log-odds per coefficient.
pub fn marginal_posterior(sites: &SiteState) -> MarginalPosterior {
    let d = sites.dim();
    let mut xi = DVector::zeros(d);
    let mut s2 = DVector::zeros(d);
    for j in 0..d {
        let var = 1.0 / (1.0 / sites.v1[j] + 1.0 / sites.v2[j]);
        s2[j] = var;
        xi[j] = (sites.m1[j] / sites.v1[j] + sites.m2[j] / sites.v2[j]) * var;
    }
    MarginalPosterior {
        xi,
        s2,
        u: &sites.p2 + &sites.p3,
        converged: false,
        iters: sites.iter,
        max_delta: f64::INFINITY,
    }
}

/// Runs EP to convergence (or `max_iters`) and returns the marginal
/// posterior.
pub fn run_ep(design: &DMatrix<f64>, target: &DVector<f64>, cfg: &EpConfig) -> Result<MarginalPosterior> {
    run_ep_observed(design, target, cfg, |_, _| {})
}

/// [`run_ep`] with a callback invoked after every damped iteration with the
/// new state and the recorded change.
pub fn run_ep_observed<F>(
    design: &DMatrix<f64>,
    target: &DVector<f64>,
    cfg: &EpConfig,
    mut observe: F,
) -> Result<MarginalPosterior>
where
    F: FnMut(&SiteState, f64),
{
    let (n, d) = design.shape();
    if n == 0 || d == 0 {
        return Err(Error::Dimension(format!("empty design {n}x{d}")));
    }
    if target.len() != n {
        return Err(Error::Dimension(format!(
            "design has {n} rows, target has {}",
            target.len()
        )));
    }
    if design.iter().chain(target.iter()).any(|x| !x.is_finite()) {
        return Err(Error::Domain("EP inputs must be finite".into()));
    }

    let mut sites = init_sites(d, cfg)?;
    let mut max_delta = f64::INFINITY;
    let mut converged = false;
    while sites.iter < cfg.max_iters {
        let prior = refine_f2(&sites, cfg)?;
        let lik = refine_f1(&sites, design, target, cfg)?;
        let proposal = SiteState {
            m1: lik.m1,
            v1: lik.v1,
            m2: prior.m2,
            v2: prior.v2,
            p2: prior.p2,
            p3: sites.p3.clone(),
            iter: sites.iter + 1,
        };
        let next = damp_sites(&sites, &proposal, cfg.damping(sites.iter), cfg.var_clamp)?;
        max_delta = sites.max_abs_change(&next);
        if !max_delta.is_finite() {
            return Err(Error::Numerical(format!(
                "EP produced non-finite site parameters at iteration {}",
                next.iter
            )));
        }
        sites = next;
        observe(&sites, max_delta);
        if max_delta < cfg.tol {
            converged = true;
            break;
        }
    }

    let mut post = marginal_posterior(&sites);
    post.converged = converged;
    post.max_delta = max_delta;
    Ok(post)
}
