//! Monte Carlo and property checks of the Newton optimizer and the
//! smoothing-parameter searches.

use nalgebra::DVector;
use pgmeta::grid::{build_grid_intercept, log_basis_matrix, ConstraintMatrix, DifferenceMatrix, RangeRule, DEFAULT_C};
use pgmeta::mixture::InterceptModel;
use pgmeta::optimizer::{
    default_lambda_grid, edf, maximize, NOISE_FLOOR, search, select_lambda_1d, select_lambda_2d, PenalizedModel, SearchConfig,
};
use pgmeta::regression::ShapeModel;
use pgmeta::sim::{gen_sim1, replication_rng, TrueDistribution};
use pgmeta::{Dataset, EffectRecord, NewtonConfig};
use rand::Rng;
use rand_distr::StandardNormal;

fn intercept_model(data: &Dataset, k: usize, lambda: f64) -> InterceptModel {
    let grid = build_grid_intercept(data, k, DEFAULT_C, &RangeRule::default()).unwrap();
    let log_phi = log_basis_matrix(&grid, &data.y(), &data.v(), &vec![0.0; data.n()]);
    InterceptModel::new(log_phi, ConstraintMatrix::new(k).unwrap(), &DifferenceMatrix::new(k, 3).unwrap(), lambda)
}

fn normal_data(n: usize, seed: u64) -> Dataset {
    gen_sim1(TrueDistribution::Normal, n, 0.8, &mut replication_rng(seed, 0)).unwrap()
}

#[test]
fn random_small_instances_converge_and_ascend() {
    for seed in 0..100 {
        let mut rng = replication_rng(1000 + seed, 0);
        let data = gen_sim1(TrueDistribution::Mixture, 50, 0.5, &mut rng).unwrap();
        let lambda = rng.random_range(-3.0f64..3.0).exp();
        let model = intercept_model(&data, 8, lambda);
        let init = DVector::from_fn(7, |_, _| rng.random_range(-0.5..0.5));
        let f0 = model.objective(&init).unwrap();
        let opt = maximize(&model, &init, &NewtonConfig::default()).unwrap();
        assert!(opt.diagnostics.converged, "seed {seed}");
        assert!(opt.diagnostics.grad_norm < 1e-8, "seed {seed}");
        assert!(opt.eval.penalized >= f0, "seed {seed}");
        let tr = &opt.diagnostics.trace;
        for w in tr.windows(2) {
            assert!(w[1] >= w[0] - NOISE_FLOOR * (1.0 + w[0].abs()), "seed {seed}: trace decreased");
        }
    }
}

#[test]
fn edf_at_zero_penalty_is_parameter_count() {
    for seed in 0..10 {
        let data = normal_data(50, seed);
        let model = intercept_model(&data, 8, 0.0);
        let opt = maximize(&model, &DVector::zeros(7), &NewtonConfig::default()).unwrap();
        let e = edf(&opt.eval.jp, &opt.eval.j).unwrap();
        assert!((e - 7.0).abs() < 1e-9, "{e}");
        let doubled = &opt.eval.j * 2.0;
        assert!((edf(&doubled, &opt.eval.j).unwrap() - 3.5).abs() < 1e-9);
    }
}

#[test]
fn edf_at_heavy_penalty_is_near_two() {
    for seed in 0..10 {
        let data = normal_data(400, seed);
        let model = intercept_model(&data, 26, 10f64.exp());
        let opt = maximize(&model, &DVector::zeros(25), &NewtonConfig::default()).unwrap();
        let e = edf(&opt.eval.jp, &opt.eval.j).unwrap();
        assert!((1.5..=3.0).contains(&e), "seed {seed}: edf {e}");
    }
}

#[test]
fn edf_is_monotone_in_lambda_on_normal_data() {
    for seed in 0..5 {
        let data = normal_data(200, 50 + seed);
        let model = intercept_model(&data, 23, 0.0);
        let res = select_lambda_1d(&model, &DVector::zeros(22), &default_lambda_grid(), &SearchConfig::default()).unwrap();
        // Fits run from the largest λ down, so EDF must not decrease.
        for w in res.fits.windows(2) {
            assert!(w[1].edf >= w[0].edf - 1e-6, "seed {seed}: {} then {}", w[0].edf, w[1].edf);
        }
    }
}

#[test]
fn warm_and_cold_starts_reach_same_optimum() {
    for seed in 0..5 {
        let data = gen_sim1(TrueDistribution::Mixture, 200, 0.8, &mut replication_rng(70 + seed, 0)).unwrap();
        let model = intercept_model(&data, 23, 0.0);
        let grid = default_lambda_grid();
        let warm = select_lambda_1d(&model, &DVector::zeros(22), &grid, &SearchConfig::default()).unwrap();
        let cold_cfg = SearchConfig { warm_start: false, ..SearchConfig::default() };
        let cold = select_lambda_1d(&model, &DVector::zeros(22), &grid, &cold_cfg).unwrap();
        for (w, c) in warm.fits.iter().zip(&cold.fits) {
            assert_eq!(w.lambda_alpha, c.lambda_alpha);
            let (fw, fc) = (w.optimum.as_ref().unwrap().eval.penalized, c.optimum.as_ref().unwrap().eval.penalized);
            assert!((fw - fc).abs() < 1e-6, "seed {seed} lambda {}: {fw} vs {fc}", w.lambda_alpha);
        }
    }
}

#[test]
fn heavy_smoothing_wins_aic_under_normality() {
    let (mut wins, total) = (0, 200);
    for seed in 0..total {
        let data = normal_data(400, 10_000 + seed);
        let model = intercept_model(&data, 26, 0.0);
        let res = select_lambda_1d(&model, &DVector::zeros(25), &[(-5f64).exp(), 5f64.exp()], &SearchConfig::default())
            .unwrap();
        let (heavy, light) = (&res.fits[0], &res.fits[1]);
        assert!(heavy.lambda_alpha > light.lambda_alpha);
        if heavy.aic < light.aic {
            wins += 1;
        }
    }
    assert!(wins as f64 >= 0.9 * total as f64, "{wins}/{total}");
}

#[test]
fn selected_lambda_depends_on_truth() {
    let grid = default_lambda_grid();
    let median = grid[grid.len() / 2];
    let (mut heavy, mut flexible, total) = (0, 0, 200);
    for seed in 0..total {
        let data = normal_data(400, 20_000 + seed);
        let res = select_lambda_1d(&intercept_model(&data, 26, 0.0), &DVector::zeros(25), &grid, &SearchConfig::default())
            .unwrap();
        if res.best().lambda_alpha >= median {
            heavy += 1;
        }
        let data = gen_sim1(TrueDistribution::Mixture, 400, 0.8, &mut replication_rng(30_000 + seed, 0)).unwrap();
        let res = select_lambda_1d(&intercept_model(&data, 26, 0.0), &DVector::zeros(25), &grid, &SearchConfig::default())
            .unwrap();
        if res.best().edf > 4.0 {
            flexible += 1;
        }
    }
    assert!(heavy as f64 >= 0.8 * total as f64, "normal truth: {heavy}/{total} at or above the median");
    assert!(flexible as f64 >= 0.8 * total as f64, "mixture truth: {flexible}/{total} with EDF > 4");
}

fn shape_data(n: usize, seed: u64) -> Dataset {
    let mut rng = replication_rng(seed, 0);
    let records = (0..n)
        .map(|i| {
            let z = if i % 2 == 0 { 0.0 } else { 1.0 };
            let v: f64 = rng.random_range(0.02..0.1);
            let th = TrueDistribution::Mixture.sample(&mut rng);
            let y = th + v.sqrt() * rng.sample::<f64, _>(StandardNormal);
            EffectRecord { y, v, x: vec![z], cluster: None }
        })
        .collect();
    Dataset::with_names(records, vec!["z".into()]).unwrap()
}

fn shape_model(data: &Dataset, k: usize) -> ShapeModel {
    let grid = build_grid_intercept(data, k, DEFAULT_C, &RangeRule::default()).unwrap();
    ShapeModel::new(&grid, &data.y(), &data.v(), data.covariate(0), &DifferenceMatrix::new(k, 3).unwrap(), 0.0, 0.0)
        .unwrap()
}

#[test]
fn null_shape_effect_selects_heaviest_gamma_penalty() {
    let grid = default_lambda_grid();
    let largest = grid.iter().copied().fold(f64::MIN, f64::max);
    let (mut hits, total) = (0, 200);
    for seed in 0..total {
        let data = shape_data(80, 40_000 + seed);
        let model = shape_model(&data, 10);
        let res = select_lambda_2d(&model, &DVector::zeros(18), &grid, &grid, &SearchConfig::default()).unwrap();
        if res.best().lambda_gamma == largest {
            hits += 1;
        }
    }
    assert!(hits as f64 >= 0.7 * total as f64, "{hits}/{total}");
}

#[test]
fn product_grid_edge_matches_one_dimensional_search() {
    let grid = default_lambda_grid();
    let largest = grid.iter().copied().fold(f64::MIN, f64::max);
    for seed in 0..5 {
        let data = shape_data(80, 50_000 + seed);
        let model = shape_model(&data, 10);
        let surface = select_lambda_2d(&model, &DVector::zeros(18), &grid, &grid, &SearchConfig::default()).unwrap();
        let mut desc = grid.clone();
        desc.sort_by(|a, b| b.total_cmp(a));
        let edge: Vec<(f64, f64)> = desc.iter().map(|&a| (a, largest)).collect();
        let line = search(&model, &DVector::zeros(18), &edge, &SearchConfig::default()).unwrap();
        for fit in &line.fits {
            let twin = surface
                .fits
                .iter()
                .find(|f| f.lambda_alpha == fit.lambda_alpha && f.lambda_gamma == largest)
                .unwrap();
            assert!((twin.aic - fit.aic).abs() < 1e-5, "seed {seed}: {} vs {}", twin.aic, fit.aic);
        }
    }
}
