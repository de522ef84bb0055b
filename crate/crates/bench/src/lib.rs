//! Fixtures shared by the benchmarks in `benches/`.

use nalgebra::{DMatrix, DVector};
use pgmeta::grid::{build_grid_intercept, default_k, log_basis_matrix, ConstraintMatrix, DifferenceMatrix, DEFAULT_C};
use pgmeta::mixture::InterceptModel;
use pgmeta::regression::LocationModel;
use pgmeta::sim::{gen_sim1, gen_sim2, replication_rng, TrueDistribution};
use pgmeta::{Dataset, RangeRule};

/// Simulation-1 mixture data with `n` studies at I² = 0.8.
pub fn mixture_data(n: usize, seed: u64) -> Dataset {
    gen_sim1(TrueDistribution::Mixture, n, 0.8, &mut replication_rng(seed, 0)).expect("valid scenario")
}

/// Intercept model on the default grid for `data`.
pub fn intercept_model(data: &Dataset, lambda: f64) -> InterceptModel {
    let k = default_k(data.n());
    let grid = build_grid_intercept(data, k, DEFAULT_C, &RangeRule::default()).expect("grid");
    let lp = log_basis_matrix(&grid, &data.y(), &data.v(), &vec![0.0; data.n()]);
    InterceptModel::new(lp, ConstraintMatrix::new(k).expect("k"), &DifferenceMatrix::new(k, 3).expect("d"), lambda)
}

/// Location model with one cluster-level covariate, `m` clusters.
pub fn location_model(m: usize, seed: u64, lambda: f64) -> LocationModel {
    let data = gen_sim2(m, 0.4, 0.5, &mut replication_rng(seed, 0)).expect("valid scenario");
    let k = default_k(data.n());
    let y = data.y();
    let (lo, hi) = y.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
    let grid = pgmeta::grid::Grid::from_range(lo, hi, k, DEFAULT_C).expect("grid");
    let x = DMatrix::from_column_slice(data.n(), 1, &data.covariate(0));
    LocationModel::new(grid, y, data.v(), x, &DifferenceMatrix::new(k, 3).expect("d"), lambda).expect("model")
}

/// Starting point with a mild deterministic pattern.
pub fn start(dim: usize) -> DVector<f64> {
    DVector::from_fn(dim, |i, _| 0.1 * ((i as f64) * 0.7).sin())
}
