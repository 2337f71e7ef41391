//! The `ivep` command-line tool.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numerical error. Failures print a single line on stderr.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;
use serde::Serialize;

use crate::baselines::Criterion;
use crate::ep::EpConfig;
use crate::error::{Error, Result};
use crate::hyperinit::{
    default_prior_grid, strategy1, strategy2_from, CvSurface, InitReport, InitSource, Strategy1Options,
    Strategy2Options, TauScale,
};
use crate::io::{
    fmt_real, load_matrix_csv, load_table, load_vector_csv, numbered_header, save_matrix_csv,
    save_vector_csv, write_rows, MatrixKind,
};
use crate::metrics::{bic, r_squared};
use crate::numerics::Probability;
use crate::simulate::{gen_dataset, NoiseScale, Preset, Truth, GENERATOR};
use crate::study::{median, run_replicate, Replicate, StudyConfig};
use crate::two_stage::{fit, Dataset, FitOptions, HyperParams, Predict, TwoStageFit, XhatSource};

/// Above this many Gamma entries, gamma.csv lists selected entries only.
pub const DENSE_GAMMA_LIMIT: usize = 100_000;

#[derive(Debug, Parser)]
#[command(name = "ivep", version, about = "Two-stage EP for sparse instrumental-variables regression")]
pub struct Cli {
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate genotype, expression and trait matrices with known effects.
    Simulate(SimulateArgs),
    /// Fit two-stage EP to CSV matrices.
    Fit(FitArgs),
    /// Cross-validation surface over the (p0, pi0) grid.
    CvGrid(CvGridArgs),
    /// Replicated comparison of two-stage EP against the two-stage LASSO.
    Compare(CompareArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum NoiseArg {
    Variance,
    Sd,
}

impl From<NoiseArg> for NoiseScale {
    fn from(a: NoiseArg) -> Self {
        match a {
            NoiseArg::Variance => NoiseScale::Variance,
            NoiseArg::Sd => NoiseScale::StdDev,
        }
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum, default_value = "full")]
    pub preset: Preset,
    /// Override the preset sample size.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Read the second normal parameter as a variance or a standard deviation.
    #[arg(long, value_enum, default_value = "variance")]
    pub noise_scale: NoiseArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct EpArgs {
    /// EP convergence tolerance.
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    #[arg(long, default_value_t = 100)]
    pub max_iters: usize,
    /// Ridge penalty of the post-estimation.
    #[arg(long, default_value_t = 1e-2)]
    pub lambda_ridge: f64,
    /// Build the Stage II design from the sparsified Gamma instead of the dense one.
    #[arg(long)]
    pub sparse_xhat: bool,
    /// Model selection criterion of the initial two-stage LASSO.
    #[arg(long, value_enum, default_value = "bic")]
    pub criterion: Criterion,
    /// LASSO candidates may use at most this fraction of n active coefficients.
    #[arg(long, default_value_t = 0.5)]
    pub lasso_df_cap: f64,
    /// Score the whole LASSO grid regardless of active-set size.
    #[arg(long)]
    pub no_lasso_df_cap: bool,
    /// Divisor of the first-stage residual sum of squares for tau0_sq.
    #[arg(long, value_enum, default_value = "per-entry")]
    pub tau_scale: TauScale,
}

impl EpArgs {
    pub fn ep_config(&self) -> Result<EpConfig> {
        let cfg = EpConfig {
            tol: self.tol,
            max_iters: self.max_iters,
            ..EpConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn fit_options(&self) -> Result<FitOptions> {
        if !(self.lambda_ridge >= 0.0 && self.lambda_ridge.is_finite()) {
            return Err(Error::Config(format!(
                "--lambda-ridge must be non-negative, got {}",
                self.lambda_ridge
            )));
        }
        Ok(FitOptions {
            lambda_ridge: self.lambda_ridge,
            xhat: if self.sparse_xhat { XhatSource::Sparse } else { XhatSource::Dense },
        })
    }

    pub fn strategy1_options(&self) -> Result<Strategy1Options> {
        if !(self.lasso_df_cap > 0.0 && self.lasso_df_cap.is_finite()) {
            return Err(Error::Config(format!(
                "--lasso-df-cap must be positive, got {}",
                self.lasso_df_cap
            )));
        }
        let mut opts = Strategy1Options {
            criterion: self.criterion,
            tau_scale: self.tau_scale,
            ..Strategy1Options::default()
        };
        opts.lasso.max_df_fraction = (!self.no_lasso_df_cap).then_some(self.lasso_df_cap);
        Ok(opts)
    }
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Instrument (genotype) matrix, n x q, entries 0/1/2.
    #[arg(long)]
    pub z: PathBuf,
    /// Covariate (expression) matrix, n x p.
    #[arg(long)]
    pub x: PathBuf,
    /// Response vector, n x 1.
    #[arg(long)]
    pub y: PathBuf,
}

impl DataArgs {
    pub fn load(&self) -> Result<Dataset> {
        let z = load_matrix_csv(&self.z, MatrixKind::Genotype)?;
        let x = load_matrix_csv(&self.x, MatrixKind::Real)?;
        let y = load_vector_csv(&self.y)?;
        Dataset::new(y, x, z)
    }
}

#[derive(Debug, Clone, Args)]
pub struct GridArgs {
    /// Comma-separated p0 grid.
    #[arg(long, value_delimiter = ',')]
    pub grid_p0: Option<Vec<f64>>,
    /// Comma-separated pi0 grid.
    #[arg(long, value_delimiter = ',')]
    pub grid_pi0: Option<Vec<f64>>,
    #[arg(long, default_value_t = 3)]
    pub folds: usize,
    /// Score grid cells with the dense posterior means instead of the post-estimates.
    #[arg(long)]
    pub cv_dense: bool,
}

impl GridArgs {
    fn options(&self, seed: u64, fit: FitOptions) -> Strategy2Options {
        Strategy2Options {
            p0_grid: self.grid_p0.clone().unwrap_or_else(default_prior_grid),
            pi0_grid: self.grid_pi0.clone().unwrap_or_else(default_prior_grid),
            folds: self.folds,
            seed,
            fit,
            use_post: !self.cv_dense,
            ..Strategy2Options::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub out: PathBuf,
    /// Hyperparameter initialization strategy (1 or 2); explicit flags override it.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub strategy: Option<u8>,
    #[arg(long)]
    pub sigma0_sq: Option<f64>,
    #[arg(long)]
    pub tau0_sq: Option<f64>,
    #[arg(long)]
    pub nu0: Option<f64>,
    #[arg(long)]
    pub omega0: Option<f64>,
    #[arg(long)]
    pub p0: Option<f64>,
    #[arg(long)]
    pub pi0: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub ep: EpArgs,
    #[command(flatten)]
    pub grid: GridArgs,
}

#[derive(Debug, Args)]
pub struct CvGridArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub ep: EpArgs,
    #[command(flatten)]
    pub grid: GridArgs,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long, value_enum, default_value = "scaled")]
    pub preset: Preset,
    #[arg(long, default_value_t = 20)]
    pub reps: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 3)]
    pub folds: usize,
    #[arg(long, value_enum, default_value = "variance")]
    pub noise_scale: NoiseArg,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub ep: EpArgs,
}

/// Parses `std::env::args`, runs the command and returns the exit code.
pub fn main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("ivep: {}", e.to_string().replace('\n', " "));
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        // Fails only if a global pool already exists, which is harmless.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    match cli.command {
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Fit(a) => cmd_fit(&a),
        Command::CvGrid(a) => cmd_cv_grid(&a),
        Command::Compare(a) => cmd_compare(&a),
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut body = serde_json::to_string_pretty(value)?;
    body.push('\n');
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

fn header_refs(names: &[String]) -> Vec<&str> {
    names.iter().map(String::as_str).collect()
}

#[derive(Debug, Serialize)]
struct SimMeta {
    seed: u64,
    n: usize,
    p: usize,
    q: usize,
    preset: Preset,
    generator: &'static str,
    noise_scale: NoiseScale,
    beta_nonzero: usize,
    gamma_nonzero: usize,
}

/// Writes the nonzero truth entries as `matrix,row,col,value` triplets with
/// matrix 0 = beta (row = coefficient index, col = 0) and 1 = Gamma.
/// Indices are 0-based.
pub fn write_truth(path: &Path, truth: &Truth) -> Result<()> {
    let mut rows = Vec::new();
    for (j, b) in truth.beta.iter().enumerate() {
        if *b != 0.0 {
            rows.push(vec!["0".into(), j.to_string(), "0".into(), fmt_real(*b)]);
        }
    }
    for i in 0..truth.q() {
        for j in 0..truth.p() {
            let g = truth.gamma[(i, j)];
            if g != 0.0 {
                rows.push(vec!["1".into(), i.to_string(), j.to_string(), fmt_real(g)]);
            }
        }
    }
    write_rows(path, Some(&["matrix", "row", "col", "value"]), rows)
}

/// Inverse of [`write_truth`] for known dimensions.
pub fn read_truth(path: &Path, p: usize, q: usize) -> Result<Truth> {
    let table = load_matrix_csv(path, MatrixKind::Real)?;
    let mut beta = DVector::zeros(p);
    let mut gamma = nalgebra::DMatrix::zeros(q, p);
    for (r, row) in table.row_iter().enumerate() {
        let bad = |msg: &str| Error::Parse {
            path: path.to_path_buf(),
            row: r + 2,
            col: 1,
            msg: msg.into(),
        };
        if row.len() != 4 {
            return Err(bad("expected matrix,row,col,value"));
        }
        let (i, j) = (row[1] as usize, row[2] as usize);
        match row[0] as i64 {
            0 if i < p => beta[i] = row[3],
            1 if i < q && j < p => gamma[(i, j)] = row[3],
            _ => return Err(bad("index out of range")),
        }
    }
    Truth::new(beta, gamma)
}

pub fn cmd_simulate(a: &SimulateArgs) -> Result<()> {
    let (n0, p, q) = a.preset.dims();
    let n = a.n.unwrap_or(n0);
    let truth = a.preset.truth();
    let data = gen_dataset(n, &truth, a.seed, a.noise_scale.into())?;
    ensure_dir(&a.out)?;
    save_matrix_csv(&a.out.join("Z.csv"), &data.z, Some(&header_refs(&numbered_header("z", q))))?;
    save_matrix_csv(&a.out.join("X.csv"), &data.x, Some(&header_refs(&numbered_header("x", p))))?;
    save_vector_csv(&a.out.join("y.csv"), &data.y, "y")?;
    write_truth(&a.out.join("truth.csv"), &truth)?;
    write_json(
        &a.out.join("meta.json"),
        &SimMeta {
            seed: a.seed,
            n,
            p,
            q,
            preset: a.preset,
            generator: GENERATOR,
            noise_scale: a.noise_scale.into(),
            beta_nonzero: truth.beta_support.iter().filter(|s| **s).count(),
            gamma_nonzero: truth.gamma_support.iter().filter(|s| **s).count(),
        },
    )
}

fn explicit_hyper(a: &FitArgs) -> Option<HyperParams> {
    Some(HyperParams {
        sigma0_sq: a.sigma0_sq?,
        tau0_sq: a.tau0_sq?,
        nu0: a.nu0?,
        omega0: a.omega0?,
        p0: Probability::new(a.p0?).ok()?,
        pi0: Probability::new(a.pi0?).ok()?,
    })
}

fn config_probability(flag: &str, v: f64) -> Result<Probability> {
    Probability::new(v).map_err(|_| Error::Config(format!("--{flag} must lie in (0, 1), got {v}")))
}

/// Hyperparameters for `fit`: explicit flags alone when all six are given
/// without `--strategy`, otherwise the chosen strategy with explicit flags
/// overriding its estimates.
fn resolve_hyper(a: &FitArgs, data: &Dataset, cfg: &EpConfig, fit_opts: FitOptions) -> Result<(HyperParams, Option<InitReport>)> {
    for (flag, v) in [("p0", a.p0), ("pi0", a.pi0)] {
        if let Some(v) = v {
            config_probability(flag, v)?;
        }
    }
    if a.strategy.is_none() {
        if let Some(h) = explicit_hyper(a) {
            h.validate()?;
            return Ok((h, None));
        }
    }
    let base = strategy1(data, &a.ep.strategy1_options()?)?;
    let report = if a.strategy == Some(2) {
        strategy2_from(data, &base, cfg, &a.grid.options(a.seed, fit_opts))?
    } else {
        base
    };
    let mut h = report.hyper;
    if let Some(v) = a.sigma0_sq {
        h.sigma0_sq = v;
    }
    if let Some(v) = a.tau0_sq {
        h.tau0_sq = v;
    }
    if let Some(v) = a.nu0 {
        h.nu0 = v;
    }
    if let Some(v) = a.omega0 {
        h.omega0 = v;
    }
    if let Some(v) = a.p0 {
        h.p0 = config_probability("p0", v)?;
    }
    if let Some(v) = a.pi0 {
        h.pi0 = config_probability("pi0", v)?;
    }
    h.validate()?;
    Ok((h, Some(report)))
}

/// `index,xi,u,support,post` per coefficient.
pub fn write_beta(path: &Path, f: &TwoStageFit) -> Result<()> {
    let rows = (0..f.beta_hat.len()).map(|j| {
        vec![
            j.to_string(),
            fmt_real(f.beta_hat[j]),
            fmt_real(f.beta_u[j]),
            (f.beta_support[j] as u8).to_string(),
            fmt_real(f.beta_post[j]),
        ]
    });
    write_rows(path, Some(&["index", "xi", "u", "support", "post"]), rows)
}

/// `row,col,xi,u,support,post`; every entry when `q * p` is at most
/// [`DENSE_GAMMA_LIMIT`], selected entries only otherwise.
pub fn write_gamma(path: &Path, f: &TwoStageFit) -> Result<()> {
    let (q, p) = f.gamma_hat.shape();
    let dense = q * p <= DENSE_GAMMA_LIMIT;
    let mut rows = Vec::new();
    for i in 0..q {
        for j in 0..p {
            if dense || f.gamma_support[(i, j)] {
                rows.push(vec![
                    i.to_string(),
                    j.to_string(),
                    fmt_real(f.gamma_hat[(i, j)]),
                    fmt_real(f.gamma_u[(i, j)]),
                    (f.gamma_support[(i, j)] as u8).to_string(),
                    fmt_real(f.gamma_post[(i, j)]),
                ]);
            }
        }
    }
    write_rows(path, Some(&["row", "col", "xi", "u", "support", "post"]), rows)
}

/// `p0\pi0` header row with the pi0 grid, then one row per p0.
pub fn write_cv_surface(path: &Path, s: &CvSurface) -> Result<()> {
    let mut header = vec!["p0\\pi0".to_string()];
    header.extend(s.pi0_grid.iter().map(|v| fmt_real(*v)));
    let rows = s.p0_grid.iter().enumerate().map(|(a, p0)| {
        let mut row = vec![fmt_real(*p0)];
        row.extend((0..s.pi0_grid.len()).map(|b| fmt_real(s.cv[(a, b)])));
        row
    });
    write_rows(path, Some(&header_refs(&header)), rows)
}

/// Inverse of [`write_cv_surface`].
pub fn read_cv_surface(path: &Path) -> Result<CvSurface> {
    let table = load_table(path, MatrixKind::Extended)?;
    let bad = |msg: &str| Error::Parse {
        path: path.to_path_buf(),
        row: 1,
        col: 1,
        msg: msg.into(),
    };
    let header = table.header.ok_or_else(|| bad("missing header"))?;
    let pi0_grid = header[1..]
        .iter()
        .map(|h| h.parse::<f64>().map_err(|_| bad("non-numeric pi0 header")))
        .collect::<Result<Vec<_>>>()?;
    let v = table.values;
    if v.ncols() != pi0_grid.len() + 1 {
        return Err(bad("header and body widths differ"));
    }
    Ok(CvSurface {
        p0_grid: v.column(0).iter().copied().collect(),
        pi0_grid,
        cv: v.columns(1, v.ncols() - 1).into_owned(),
    })
}

#[derive(Debug, Serialize)]
struct InitSummary {
    source: InitSource,
    df1: usize,
    df2: usize,
    repairs: Vec<String>,
    seed: Option<u64>,
}

#[derive(Debug, Serialize)]
struct StageSummary {
    runs: usize,
    converged: usize,
    min_iters: usize,
    max_iters: usize,
    max_delta: f64,
}

#[derive(Debug, Serialize)]
struct FitDiagnostics {
    n: usize,
    p: usize,
    q: usize,
    hyper: HyperParams,
    init: Option<InitSummary>,
    stage1: StageSummary,
    stage2: StageSummary,
    beta_selected: usize,
    gamma_selected: usize,
    r2_post: Option<f64>,
    r2_dense: Option<f64>,
    bic_post: Option<f64>,
    bic_dense: Option<f64>,
    seconds: f64,
}

fn stage_summary(converged: &[bool], iters: &[usize], deltas: &[f64]) -> StageSummary {
    StageSummary {
        runs: converged.len(),
        converged: converged.iter().filter(|c| **c).count(),
        min_iters: iters.iter().copied().min().unwrap_or(0),
        max_iters: iters.iter().copied().max().unwrap_or(0),
        max_delta: deltas.iter().copied().fold(0.0, f64::max),
    }
}

pub fn cmd_fit(a: &FitArgs) -> Result<()> {
    let cfg = a.ep.ep_config()?;
    let fit_opts = a.ep.fit_options()?;
    let data = a.data.load()?;
    ensure_dir(&a.out)?;
    let start = Instant::now();
    let (hyper, report) = resolve_hyper(a, &data, &cfg, fit_opts)?;
    let f = fit(&data, &hyper, &cfg, &fit_opts)?;
    let seconds = start.elapsed().as_secs_f64();

    write_beta(&a.out.join("beta.csv"), &f)?;
    write_gamma(&a.out.join("gamma.csv"), &f)?;
    if let Some(surface) = report.as_ref().and_then(|r| r.cv_surface.as_ref()) {
        write_cv_surface(&a.out.join("cv_surface.csv"), surface)?;
    }

    let pred_post = f.predictor(true).predict(&data.z);
    let pred_dense = f.predictor(false).predict(&data.z);
    let df = f.beta_df();
    let diag = FitDiagnostics {
        n: data.n(),
        p: data.p(),
        q: data.q(),
        hyper,
        init: report.map(|r| InitSummary {
            source: r.source,
            df1: r.df1,
            df2: r.df2,
            repairs: r.repairs,
            seed: r.seed,
        }),
        stage1: stage_summary(&f.stage1_converged, &f.stage1_iters, &f.stage1_max_delta),
        stage2: stage_summary(&[f.stage2_converged], &[f.stage2_iters], &[f.stage2_max_delta]),
        beta_selected: df,
        gamma_selected: f.gamma_df(),
        r2_post: r_squared(&data.y, &pred_post).ok(),
        r2_dense: r_squared(&data.y, &pred_dense).ok(),
        bic_post: bic(&data.y, &pred_post, df).ok(),
        bic_dense: bic(&data.y, &pred_dense, df).ok(),
        seconds,
    };
    write_json(&a.out.join("diagnostics.json"), &diag)
}

#[derive(Debug, Serialize)]
struct GridResult {
    p0: f64,
    pi0: f64,
    cv: f64,
    hyper: HyperParams,
    df1: usize,
    df2: usize,
    folds: usize,
    seed: u64,
    repairs: Vec<String>,
}

pub fn cmd_cv_grid(a: &CvGridArgs) -> Result<()> {
    let cfg = a.ep.ep_config()?;
    let fit_opts = a.ep.fit_options()?;
    let opts = a.grid.options(a.seed, fit_opts);
    for v in opts.p0_grid.iter().chain(&opts.pi0_grid) {
        config_probability("grid", *v)?;
    }
    if opts.folds < 2 {
        return Err(Error::Config(format!("--folds must be at least 2, got {}", opts.folds)));
    }
    let data = a.data.load()?;
    ensure_dir(&a.out)?;
    let base = strategy1(&data, &a.ep.strategy1_options()?)?;
    let report = strategy2_from(&data, &base, &cfg, &opts)?;
    let surface = report.cv_surface.as_ref().expect("strategy II emits a surface");
    write_cv_surface(&a.out.join("cv_surface.csv"), surface)?;
    let (ia, ib) = surface.argmin();
    write_rows(
        &a.out.join("argmin.csv"),
        Some(&["p0", "pi0", "cv"]),
        [vec![
            fmt_real(surface.p0_grid[ia]),
            fmt_real(surface.pi0_grid[ib]),
            fmt_real(surface.cv[(ia, ib)]),
        ]],
    )?;
    write_json(
        &a.out.join("argmin.json"),
        &GridResult {
            p0: surface.p0_grid[ia],
            pi0: surface.pi0_grid[ib],
            cv: surface.cv[(ia, ib)],
            hyper: report.hyper,
            df1: report.df1,
            df2: report.df2,
            folds: opts.folds,
            seed: a.seed,
            repairs: report.repairs.clone(),
        },
    )
}

/// Deterministic per-replicate columns of `replicates.csv`.
pub const REPLICATE_COLUMNS: [&str; 19] = [
    "rep",
    "data_seed",
    "cv_seed",
    "ep_fnr_beta",
    "ep_fpr_beta",
    "ep_fnr_gamma",
    "ep_fpr_gamma",
    "ep_cv",
    "ep_cv_dense",
    "ep_r2",
    "ep_r2_dense",
    "lasso_fnr_beta",
    "lasso_fpr_beta",
    "lasso_fnr_gamma",
    "lasso_fpr_gamma",
    "lasso_cv",
    "lasso_r2",
    "ep_stage1_converged",
    "ep_stage2_converged",
];

fn replicate_row(r: &Replicate) -> Vec<f64> {
    vec![
        r.index as f64,
        r.data_seed as f64,
        r.cv_seed as f64,
        r.ep.fnr_beta,
        r.ep.fpr_beta,
        r.ep.fnr_gamma,
        r.ep.fpr_gamma,
        r.ep.cv,
        r.ep_cv_dense,
        r.ep.r2,
        r.ep_r2_dense,
        r.lasso.fnr_beta,
        r.lasso.fpr_beta,
        r.lasso.fnr_gamma,
        r.lasso.fpr_gamma,
        r.lasso.cv,
        r.lasso.r2,
        r.ep_stage1_converged as f64,
        r.ep_stage2_converged as u8 as f64,
    ]
}

fn int_or_real(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        fmt_real(v)
    }
}

/// Writes `replicates.csv`, `summary.csv` (medians of the metric columns),
/// `timings.csv` (wall-clock seconds, kept apart so the other tables are
/// reproducible byte for byte) and `meta.json`.
pub fn write_compare_tables(out: &Path, reps: &[Replicate], meta: &impl Serialize) -> Result<()> {
    let table: Vec<Vec<f64>> = reps.iter().map(replicate_row).collect();
    write_rows(
        &out.join("replicates.csv"),
        Some(&REPLICATE_COLUMNS),
        table.iter().map(|row| row.iter().map(|v| int_or_real(*v)).collect::<Vec<_>>()),
    )?;
    let metric_cols = 3..REPLICATE_COLUMNS.len() - 2;
    let medians: Vec<String> = metric_cols
        .clone()
        .map(|c| fmt_real(median(&table.iter().map(|row| row[c]).collect::<Vec<_>>())))
        .collect();
    write_rows(
        &out.join("summary.csv"),
        Some(&REPLICATE_COLUMNS[metric_cols]),
        [medians],
    )?;
    let mut timing_rows: Vec<Vec<String>> = reps
        .iter()
        .map(|r| vec![r.index.to_string(), fmt_real(r.ep.seconds), fmt_real(r.lasso.seconds)])
        .collect();
    let ep_times: Vec<f64> = reps.iter().map(|r| r.ep.seconds).collect();
    let lasso_times: Vec<f64> = reps.iter().map(|r| r.lasso.seconds).collect();
    timing_rows.push(vec!["-1".into(), fmt_real(median(&ep_times)), fmt_real(median(&lasso_times))]);
    write_rows(&out.join("timings.csv"), Some(&["rep", "ep_seconds", "lasso_seconds"]), timing_rows)?;
    write_json(&out.join("meta.json"), meta)
}

#[derive(Debug, Serialize)]
struct CompareMeta {
    preset: Preset,
    n: usize,
    p: usize,
    q: usize,
    reps: usize,
    seed: u64,
    data_seeds: Vec<u64>,
    cv_seeds: Vec<u64>,
    generator: &'static str,
    study: StudyConfig,
}

pub fn cmd_compare(a: &CompareArgs) -> Result<()> {
    if a.reps == 0 {
        return Err(Error::Config("--reps must be at least 1".into()));
    }
    if a.folds < 2 {
        return Err(Error::Config(format!("--folds must be at least 2, got {}", a.folds)));
    }
    let (n, p, q) = a.preset.dims();
    let study = StudyConfig {
        n,
        reps: a.reps,
        seed: a.seed,
        folds: a.folds,
        ep: a.ep.ep_config()?,
        fit: a.ep.fit_options()?,
        strategy1: a.ep.strategy1_options()?,
        noise: a.noise_scale.into(),
    };
    ensure_dir(&a.out)?;
    let truth = a.preset.truth();
    let mut reps = Vec::with_capacity(a.reps);
    for r in 0..a.reps {
        reps.push(run_replicate(&truth, &study, r)?);
    }
    let meta = CompareMeta {
        preset: a.preset,
        n,
        p,
        q,
        reps: a.reps,
        seed: a.seed,
        data_seeds: reps.iter().map(|r| r.data_seed).collect(),
        cv_seeds: reps.iter().map(|r| r.cv_seed).collect(),
        generator: GENERATOR,
        study,
    };
    write_compare_tables(&a.out, &reps, &meta)
}
