//! Scalar link functions, the nearest-rank quantile and the low-rank
//! Gaussian posterior solver shared by both EP stages.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// A probability strictly inside (0, 1).
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, serde::Serialize, serde::Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Probability(f64);

impl Probability {
    pub fn new(value: f64) -> Result<Self> {
        if value > 0.0 && value < 1.0 {
            Ok(Probability(value))
        } else {
            Err(Error::Domain(format!(
                "probability must lie strictly inside (0, 1), got {value}"
            )))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Probability {
    type Error = Error;

    fn try_from(value: f64) -> Result<Self> {
        Probability::new(value)
    }
}

impl From<Probability> for f64 {
    fn from(p: Probability) -> f64 {
        p.0
    }
}

/// Logistic function without the domain check, for hot loops whose inputs are
/// already known to be finite.
#[inline]
pub(crate) fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Standard logistic `1 / (1 + exp(-x))`.
///
/// Evaluated on the side that never exponentiates a positive number, so it is
/// accurate for |x| well past 700. Saturates to exactly 0 or 1 in the far
/// tails, which is why the return type is `f64` and not [`Probability`].
pub fn sigmoid(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::Domain(format!("sigmoid of non-finite value {x}")));
    }
    Ok(logistic(x))
}

/// Log-odds `ln(p / (1 - p))`.
pub fn logit(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!(
            "logit requires 0 < p < 1, got {p}"
        )));
    }
    Ok((p / (1.0 - p)).ln())
}

/// Nearest-rank quantile: the element at 1-based position `ceil(level * len)`
/// of the sorted vector, with `level = 0` mapping to the minimum.
pub fn quantile_nearest_rank(v: &[f64], level: f64) -> Result<f64> {
    if v.is_empty() {
        return Err(Error::Domain("quantile of an empty vector".into()));
    }
    if !(0.0..=1.0).contains(&level) {
        return Err(Error::Domain(format!(
            "quantile level must lie in [0, 1], got {level}"
        )));
    }
    if v.iter().any(|x| x.is_nan()) {
        return Err(Error::Domain("quantile of a vector containing NaN".into()));
    }
    let mut sorted = v.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = (level * sorted.len() as f64).ceil() as usize;
    Ok(sorted[rank.clamp(1, sorted.len()) - 1])
}

/// Lower Cholesky factor of a symmetric matrix.
///
/// On breakdown returns the offending pivot. A pivot counts as broken when it
/// falls below `n * eps * max|diag|`, so numerically singular matrices are
/// rejected rather than producing huge solves.
pub(crate) fn cholesky_lower(a: &DMatrix<f64>) -> std::result::Result<DMatrix<f64>, f64> {
    let n = a.nrows();
    let max_diag = a.diagonal().iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    let floor = n as f64 * f64::EPSILON * max_diag;
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut diag = a[(j, j)];
        for k in 0..j {
            diag -= l[(j, k)] * l[(j, k)];
        }
        if diag.is_nan() || diag <= floor {
            return Err(diag);
        }
        let ljj = diag.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(l)
}

/// Cholesky with a single retry: on failure, add `1e-10 * trace / n` to the
/// diagonal once and try again.
pub(crate) fn cholesky_with_jitter(k: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    match cholesky_lower(k) {
        Ok(l) => Ok(l),
        Err(_) => {
            let n = k.nrows();
            let jitter = 1e-10 * k.trace() / n as f64;
            let mut kj = k.clone();
            for i in 0..n {
                kj[(i, i)] += jitter;
            }
            cholesky_lower(&kj).map_err(|min_pivot| Error::NotPositiveDefinite { min_pivot })
        }
    }
}

/// Diagonal covariance and mean of a Gaussian posterior with a diagonal
/// Gaussian prior and a linear-Gaussian likelihood.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankPosterior {
    pub diag_cov: DVector<f64>,
    pub mean: DVector<f64>,
}

/// Posterior of `w` under prior `N(site_means, diag(site_vars))` and
/// likelihood `target ~ N(D w, noise_var I)`.
///
/// Works entirely through the `n x n` kernel `noise_var I + D S D'` (Woodbury),
/// so the cost is `O(n^2 d + n^3)` and the `d x d` covariance never exists.
pub fn lowrank_posterior(
    design: &DMatrix<f64>,
    site_means: &DVector<f64>,
    site_vars: &DVector<f64>,
    noise_var: f64,
    target: &DVector<f64>,
) -> Result<LowRankPosterior> {
    let (n, d) = design.shape();
    if site_means.len() != d || site_vars.len() != d || target.len() != n {
        return Err(Error::Dimension(format!(
            "design is {n}x{d}, site means {}, site variances {}, target {}",
            site_means.len(),
            site_vars.len(),
            target.len()
        )));
    }
    if !(noise_var > 0.0 && noise_var.is_finite()) {
        return Err(Error::Domain(format!(
            "noise variance must be positive and finite, got {noise_var}"
        )));
    }
    if let Some(j) = site_vars.iter().position(|&s| !(s > 0.0 && s.is_finite())) {
        return Err(Error::Domain(format!(
            "site variance {j} must be positive and finite, got {}",
            site_vars[j]
        )));
    }

    // D S, column-scaled.
    let mut ds = design.clone();
    for (j, mut col) in ds.column_iter_mut().enumerate() {
        col *= site_vars[j];
    }
    let mut kernel = &ds * design.transpose();
    for i in 0..n {
        kernel[(i, i)] += noise_var;
    }
    let l = cholesky_with_jitter(&kernel)?;

    // diag V_j = s_j - s_j^2 |L^{-1} d_j|^2
    let whitened = l
        .solve_lower_triangular(design)
        .ok_or_else(|| Error::Numerical("triangular solve failed".into()))?;
    let diag_cov = DVector::from_iterator(
        d,
        whitened.column_iter().enumerate().map(|(j, c)| {
            let s = site_vars[j];
            s - s * s * c.norm_squared()
        }),
    );

    // mean = S h - S D' K^{-1} D S h, with h = S^{-1} m + D' t / noise_var
    let dt = design.tr_mul(target);
    let sh = DVector::from_iterator(
        d,
        (0..d).map(|j| site_means[j] + site_vars[j] * dt[j] / noise_var),
    );
    let dsh = design * &sh;
    let solved = l
        .solve_lower_triangular(&dsh)
        .and_then(|z| l.tr_solve_lower_triangular(&z))
        .ok_or_else(|| Error::Numerical("triangular solve failed".into()))?;
    let back = design.tr_mul(&solved);
    let mean = DVector::from_iterator(d, (0..d).map(|j| sh[j] - site_vars[j] * back[j]));

    Ok(LowRankPosterior { diag_cov, mean })
}
