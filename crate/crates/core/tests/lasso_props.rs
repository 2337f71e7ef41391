mod common;

use ivep::baselines::{
    lambda_max, lasso_cd, lasso_cd_from, lasso_objective, lasso_select, ridge_solve, ridge_solve_dual,
    ridge_solve_primal, two_stage_lasso, Criterion, LambdaGrid, LassoSettings,
};
use ivep::simulate::{gen_dataset, NoiseScale, Preset};
use ivep::two_stage::Dataset;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

/// Stationarity residual computed from scratch.
fn kkt(design: &DMatrix<f64>, target: &DVector<f64>, w: &DVector<f64>, lambda: f64) -> f64 {
    let n = design.nrows() as f64;
    let mut worst: f64 = 0.0;
    for j in 0..design.ncols() {
        let mut g = 0.0;
        for i in 0..design.nrows() {
            let mut fit = 0.0;
            for k in 0..design.ncols() {
                fit += design[(i, k)] * w[k];
            }
            g += design[(i, j)] * (target[i] - fit);
        }
        g /= n;
        let v = if w[j] == 0.0 {
            (g.abs() - lambda).max(0.0)
        } else {
            (g - lambda * w[j].signum()).abs()
        };
        worst = worst.max(v);
    }
    worst
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn objective_never_increases(seed in any::<u64>(), n in 2usize..30, d in 1usize..40, frac in 0.01f64..1.0) {
        let mut rng = common::rng(seed);
        let design = common::gaussian_matrix(&mut rng, n, d);
        let target = common::gaussian_vector(&mut rng, n);
        let lambda = frac * lambda_max(&design, &target) + 1e-6;
        let start = lasso_objective(&design, &target, &DVector::zeros(d), lambda);
        let mut trace = vec![start];
        let sol = lasso_cd_from(&design, &target, lambda, 1e-9, 100_000, None, |obj| trace.push(obj)).unwrap();
        for w in trace.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-12 * (1.0 + w[0].abs()), "{} -> {}", w[0], w[1]);
        }
        prop_assert!(kkt(&design, &target, &sol.coef, lambda) <= 1e-6);
        prop_assert!(sol.kkt_violation <= 1e-6);
    }

    #[test]
    fn ridge_satisfies_normal_equations(seed in any::<u64>(), n in 2usize..25, d in 1usize..25, lambda in 1e-4f64..10.0) {
        let mut rng = common::rng(seed);
        let design = common::gaussian_matrix(&mut rng, n, d);
        let target = common::gaussian_vector(&mut rng, n);
        let w = ridge_solve(&design, &target, lambda).unwrap();
        let lhs = (design.transpose() * &design + DMatrix::identity(d, d) * (n as f64 * lambda)) * &w;
        let rhs = design.transpose() * &target;
        prop_assert!((lhs - &rhs).amax() <= 1e-8 * rhs.amax().max(1e-300));
    }

    #[test]
    fn primal_and_dual_agree(seed in any::<u64>(), n in 2usize..20, extra in 1usize..20, lambda in 1e-3f64..5.0) {
        let mut rng = common::rng(seed);
        let d = n + extra;
        let design = common::gaussian_matrix(&mut rng, n, d);
        let target = common::gaussian_vector(&mut rng, n);
        let a = ridge_solve_primal(&design, &target, lambda).unwrap();
        let b = ridge_solve_dual(&design, &target, lambda).unwrap();
        prop_assert!((a - b).amax() <= 1e-9);
    }
}

#[test]
fn scalar_soft_threshold() {
    let d = DMatrix::from_element(3, 1, 1.0);
    let t = DVector::from_element(3, 2.0);
    let sol = lasso_cd(&d, &t, 1.0, 1e-12, 100).unwrap();
    assert!((sol.coef[0] - 1.0).abs() < 1e-12);
}

#[test]
fn kill_radius() {
    let mut rng = common::rng(3);
    let d = common::gaussian_matrix(&mut rng, 10, 6);
    let t = common::gaussian_vector(&mut rng, 10);
    let lmax = (d.transpose() * &t).amax() / 10.0;
    assert!((lambda_max(&d, &t) - lmax).abs() < 1e-14);
    assert_eq!(lasso_cd(&d, &t, lmax, 1e-10, 100).unwrap().coef, DVector::zeros(6));
}

#[test]
fn ridge_edge_cases() {
    let t = DVector::from_vec(vec![1.0, -2.0, 3.0]);
    assert!((ridge_solve(&DMatrix::identity(3, 3), &t, 0.0).unwrap() - &t).amax() < 1e-14);
    assert!(ridge_solve(&DMatrix::identity(3, 3), &t, 1e12).unwrap().amax() < 1e-10);
    let singular = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0]);
    assert_eq!(ridge_solve(&singular, &t, 0.0).unwrap_err().exit_code(), 3);
}

#[test]
fn selection_scores_recompute() {
    let mut rng = common::rng(5);
    let d = common::gaussian_matrix(&mut rng, 30, 10);
    let t = &d.column(0) * 2.0 + common::gaussian_vector(&mut rng, 30);
    let grid = LambdaGrid::default().resolve(&d, &t);
    for crit in [Criterion::Aic, Criterion::Bic] {
        let path = lasso_select(&d, &t, &grid, crit, LassoSettings::default()).unwrap();
        let pen = match crit {
            Criterion::Aic => 2.0,
            Criterion::Bic => 30f64.ln(),
        };
        for (sol, score) in path.solutions.iter().zip(&path.scores) {
            let rss = (&t - &d * &sol.coef).norm_squared();
            let df = sol.coef.iter().filter(|c| **c != 0.0).count();
            let expect = 30.0 * (rss / 30.0).ln() + pen * df as f64;
            assert!((score - expect).abs() <= 1e-10 * expect.abs().max(1.0));
        }
        let best = path.scores.iter().copied().fold(f64::INFINITY, f64::min);
        assert_eq!(path.scores[path.best], best);
        assert_eq!(path.scores.iter().position(|s| *s == best), Some(path.best));
    }
}

#[test]
fn single_lambda_grid_returns_that_fit() {
    let mut rng = common::rng(6);
    let d = common::gaussian_matrix(&mut rng, 15, 4);
    let t = common::gaussian_vector(&mut rng, 15);
    let path = lasso_select(&d, &t, &[0.05], Criterion::Bic, LassoSettings::default()).unwrap();
    let direct = lasso_cd(&d, &t, 0.05, 1e-7, 20_000).unwrap();
    assert_eq!(path.best, 0);
    assert!((&path.best().coef - &direct.coef).amax() < 1e-6);
}

#[test]
fn df_cap_truncates_the_path() {
    let mut rng = common::rng(8);
    let d = common::gaussian_matrix(&mut rng, 20, 60);
    let t = common::gaussian_vector(&mut rng, 20);
    let grid = LambdaGrid::default().resolve(&d, &t);
    let settings = LassoSettings {
        max_df_fraction: Some(0.25),
        ..LassoSettings::default()
    };
    let path = lasso_select(&d, &t, &grid, Criterion::Bic, settings).unwrap();
    assert!(path.solutions.iter().all(|s| s.active_set_size() <= 5));
    assert!(path.lambdas.len() < grid.len());
    let full = lasso_select(&d, &t, &grid, Criterion::Bic, LassoSettings { max_df_fraction: None, ..settings }).unwrap();
    assert_eq!(full.lambdas.len(), grid.len());
}

#[test]
fn pure_noise_selects_nearly_nothing() {
    let mut hits = 0;
    for seed in 0..40 {
        let mut rng = common::rng(1000 + seed);
        let d = common::gaussian_matrix(&mut rng, 100, 10);
        let t = common::gaussian_vector(&mut rng, 100);
        let grid = LambdaGrid::default().resolve(&d, &t);
        let best = lasso_select(&d, &t, &grid, Criterion::Bic, LassoSettings::default()).unwrap().into_best();
        if best.active_set_size() <= 1 {
            hits += 1;
        }
    }
    assert!(hits >= 36, "{hits}/40");
}

#[test]
fn two_stage_lasso_extremes_and_determinism() {
    let data = gen_dataset(40, &Preset::Small.truth(), 4, NoiseScale::Variance).unwrap();
    let huge = LambdaGrid::Fixed(vec![1e6]);
    let fit = two_stage_lasso(&data, &huge, &huge, Criterion::Bic, LassoSettings::default()).unwrap();
    assert!(fit.gamma.iter().all(|g| *g == 0.0));
    assert!(fit.beta.iter().all(|b| *b == 0.0));

    let grid = LambdaGrid::default();
    let a = two_stage_lasso(&data, &grid, &grid, Criterion::Bic, LassoSettings::default()).unwrap();
    let b = two_stage_lasso(&data, &grid, &grid, Criterion::Bic, LassoSettings::default()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn two_stage_lasso_columns_are_separate_fits() {
    let data = gen_dataset(30, &Preset::Small.truth(), 9, NoiseScale::Variance).unwrap();
    let grid = LambdaGrid::default();
    let s = LassoSettings::default();
    let fit = two_stage_lasso(&data, &grid, &grid, Criterion::Bic, s).unwrap();
    let (c, _) = data.centered();
    for j in [0, 17, 59] {
        let t = c.x.column(j).into_owned();
        let g = grid.resolve(&c.z, &t);
        let alone = lasso_select(&c.z, &t, &g, Criterion::Bic, s).unwrap().into_best();
        assert_eq!(fit.gamma.column(j).into_owned(), alone.coef);
    }
    let sub = Dataset::new(data.y.clone(), data.x.columns(0, 5).into_owned(), data.z.clone()).unwrap();
    let fit_sub = two_stage_lasso(&sub, &grid, &grid, Criterion::Bic, s).unwrap();
    assert_eq!(fit_sub.gamma, fit.gamma.columns(0, 5).into_owned());
}
