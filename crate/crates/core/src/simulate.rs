//! Synthetic genotype / expression / trait data with known sparse effects.
//!
//! Genotypes are Bernoulli with Beta(3, 7) success probabilities, expressions
//! are `0.1 + Z Gamma` plus Gaussian noise, and the trait is `1 + X beta`
//! plus Gaussian noise. Every draw comes from one seeded ChaCha8 stream in a
//! fixed order, so `(n, truth, seed)` determines the output bit for bit.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::two_stage::Dataset;

/// Name of the random generator recorded in dataset metadata.
pub const GENERATOR: &str = "rand_chacha::ChaCha8Rng(seed_from_u64)";

/// Ground-truth coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub beta: DVector<f64>,
    /// `q x p`
    pub gamma: DMatrix<f64>,
    pub beta_support: Vec<bool>,
    /// `q x p`
    pub gamma_support: DMatrix<bool>,
}

impl Truth {
    pub fn new(beta: DVector<f64>, gamma: DMatrix<f64>) -> Result<Self> {
        if beta.len() != gamma.ncols() {
            return Err(Error::Dimension(format!(
                "beta has {} entries, Gamma has {} columns",
                beta.len(),
                gamma.ncols()
            )));
        }
        let beta_support = beta.iter().map(|b| *b != 0.0).collect();
        let gamma_support = gamma.map(|g| g != 0.0);
        Ok(Truth {
            beta,
            gamma,
            beta_support,
            gamma_support,
        })
    }

    pub fn p(&self) -> usize {
        self.beta.len()
    }

    pub fn q(&self) -> usize {
        self.gamma.nrows()
    }
}

/// Block pattern with `p` covariates and `q` instruments: the first
/// `round(7p/300)` entries of beta are 1, the last `round(8p/300)` are -0.5;
/// the first row of Gamma is 0.01 and the last three rows are -0.005.
pub fn block_truth(p: usize, q: usize) -> Result<Truth> {
    if p == 0 || q < 4 {
        return Err(Error::Domain(format!(
            "block truth needs p >= 1 and q >= 4, got p={p}, q={q}"
        )));
    }
    let ones = ((7 * p) as f64 / 300.0).round().max(1.0) as usize;
    let halves = ((8 * p) as f64 / 300.0).round().max(1.0) as usize;
    if ones + halves > p {
        return Err(Error::Domain(format!("p={p} too small for the block pattern")));
    }
    let beta = DVector::from_fn(p, |j, _| {
        if j < ones {
            1.0
        } else if j >= p - halves {
            -0.5
        } else {
            0.0
        }
    });
    let gamma = DMatrix::from_fn(q, p, |i, _| {
        if i == 0 {
            0.01
        } else if i >= q - 3 {
            -0.005
        } else {
            0.0
        }
    });
    Truth::new(beta, gamma)
}

/// The reference design: p = 300, q = 400.
pub fn default_truth() -> Truth {
    block_truth(300, 400).expect("reference dimensions are valid")
}

/// Named problem sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
pub enum Preset {
    /// n = 50, p = 300, q = 400.
    Full,
    /// n = 50, p = 100, q = 120.
    Scaled,
    /// n = 50, p = 60, q = 80.
    Small,
}

impl Preset {
    /// `(n, p, q)`
    pub fn dims(self) -> (usize, usize, usize) {
        match self {
            Preset::Full => (50, 300, 400),
            Preset::Scaled => (50, 100, 120),
            Preset::Small => (50, 60, 80),
        }
    }

    pub fn truth(self) -> Truth {
        let (_, p, q) = self.dims();
        block_truth(p, q).expect("preset dimensions are valid")
    }
}

/// How the second parameter of the generating normals is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum NoiseScale {
    #[default]
    Variance,
    StdDev,
}

impl NoiseScale {
    fn std_dev(self, param: f64) -> f64 {
        match self {
            NoiseScale::Variance => param.sqrt(),
            NoiseScale::StdDev => param,
        }
    }
}

/// Genotypes and the Beta draws behind them.
#[derive(Debug, Clone, PartialEq)]
pub struct Genotypes {
    /// `n x q` matrix of 0/1.
    pub z: DMatrix<f64>,
    /// `n x q` success probabilities.
    pub probs: DMatrix<f64>,
}

fn draw_genotypes(rng: &mut ChaCha8Rng, n: usize, q: usize) -> Genotypes {
    let beta = Beta::new(3.0, 7.0).expect("valid Beta parameters");
    let mut z = DMatrix::zeros(n, q);
    let mut probs = DMatrix::zeros(n, q);
    for i in 0..n {
        for j in 0..q {
            let r: f64 = beta.sample(rng);
            probs[(i, j)] = r;
            z[(i, j)] = if rng.random::<f64>() < r { 1.0 } else { 0.0 };
        }
    }
    Genotypes { z, probs }
}

/// `n x q` genotype matrix: `r ~ Beta(3, 7)`, then `Z ~ Bernoulli(r)`,
/// drawn in row-major order.
pub fn gen_genotypes(n: usize, q: usize, seed: u64) -> Result<Genotypes> {
    if n == 0 || q == 0 {
        return Err(Error::Domain(format!("genotype matrix needs n, q >= 1, got {n}x{q}")));
    }
    Ok(draw_genotypes(&mut ChaCha8Rng::seed_from_u64(seed), n, q))
}

/// Full dataset under `truth`:
/// `X_ij ~ N(0.1 + Z_i Gamma_j, 0.1)`, `y_i ~ N(1 + X_i beta, 0.5)`.
pub fn gen_dataset(n: usize, truth: &Truth, seed: u64, scale: NoiseScale) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::Domain("dataset needs n >= 1".into()));
    }
    let (p, q) = (truth.p(), truth.q());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let Genotypes { z, .. } = draw_genotypes(&mut rng, n, q);

    let x_noise = Normal::new(0.0, scale.std_dev(0.1)).expect("valid normal");
    let mean_x = (&z * &truth.gamma).add_scalar(0.1);
    let mut x = DMatrix::zeros(n, p);
    for i in 0..n {
        for j in 0..p {
            x[(i, j)] = mean_x[(i, j)] + x_noise.sample(&mut rng);
        }
    }

    let y_noise = Normal::new(0.0, scale.std_dev(0.5)).expect("valid normal");
    let mean_y = (&x * &truth.beta).add_scalar(1.0);
    let y = DVector::from_iterator(n, mean_y.iter().map(|m| m + y_noise.sample(&mut rng)));
    Dataset::new(y, x, z)
}
