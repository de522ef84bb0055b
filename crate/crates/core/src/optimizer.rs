//! Ridge-regularized Newton ascent on penalized log-likelihoods, effective
//! degrees of freedom, AIC, and smoothing-parameter grid searches.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// A penalized log-likelihood with analytic score and information.
pub trait PenalizedModel {
    /// Number of free parameters.
    fn dim(&self) -> usize;

    /// Penalized log-likelihood only.
    fn objective(&self, params: &DVector<f64>) -> Result<f64>;

    /// Objective together with first and second derivatives.
    fn evaluate(&self, params: &DVector<f64>) -> Result<Evaluation>;

    /// Sets the smoothing parameters. Models with a single penalty ignore
    /// `lambda_gamma`.
    fn set_smoothing(&mut self, lambda_alpha: f64, lambda_gamma: f64);
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    /// Unpenalized log-likelihood.
    pub loglik: f64,
    /// Penalized log-likelihood.
    pub penalized: f64,
    pub grad: DVector<f64>,
    /// Penalized observed information.
    pub jp: DMatrix<f64>,
    /// Unpenalized observed information.
    pub j: DMatrix<f64>,
    /// Per-record unpenalized score contributions (rows = records).
    pub scores: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonConfig {
    /// Convergence threshold on the ∞-norm of the gradient.
    pub grad_tol: f64,
    pub max_iter: usize,
    /// Initial (and minimum) ridge added to the information matrix.
    pub ridge_start: f64,
    /// Backtracking factor in (0, 1).
    pub step_shrink: f64,
    pub max_backtracks: usize,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self { grad_tol: 1e-8, max_iter: 100, ridge_start: 1e-8, step_shrink: 0.5, max_backtracks: 50 }
    }
}

impl NewtonConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.grad_tol > 0.0
            && self.max_iter > 0
            && self.ridge_start > 0.0
            && self.step_shrink > 0.0
            && self.step_shrink < 1.0
            && self.max_backtracks > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid Newton settings {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitDiagnostics {
    pub iterations: usize,
    pub grad_norm: f64,
    pub converged: bool,
    /// Penalized objective after each accepted step (first entry = start).
    pub trace: Vec<f64>,
    /// Ratio of extreme eigenvalues of `J_p` at the returned point.
    pub condition: f64,
}

#[derive(Debug, Clone)]
pub struct Optimum {
    pub params: DVector<f64>,
    pub eval: Evaluation,
    pub diagnostics: FitDiagnostics,
}

// Largest ridge tried before giving up on a step.
const RIDGE_CAP: f64 = 1e30;

/// Relative size of objective changes treated as evaluation noise.
pub const NOISE_FLOOR: f64 = 1e-10;

/// Maximizes a penalized log-likelihood from `init`.
///
/// Each iteration solves `(J_p + ρI)·step = grad` and backtracks until the
/// objective does not decrease (up to its own rounding level). Once the
/// predicted gain drops below [`NOISE_FLOOR`] a step is accepted when it
/// reduces the gradient instead. The ridge grows
/// tenfold when the factorization fails or no step is accepted and shrinks
/// tenfold after accepted full steps.
pub fn maximize<M: PenalizedModel + ?Sized>(model: &M, init: &DVector<f64>, config: &NewtonConfig) -> Result<Optimum> {
    config.validate()?;
    if init.len() != model.dim() {
        return Err(Error::Dimension(format!("init has {} entries, model has {}", init.len(), model.dim())));
    }
    if init.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical { iteration: 0, message: "initial parameters are not finite".into() });
    }
    let mut x = init.clone();
    let mut eval = model.evaluate(&x)?;
    check_finite(&eval, 0)?;
    let mut trace = vec![eval.penalized];
    let mut rho = config.ridge_start;
    let mut iterations = 0;
    let mut converged = eval.grad.amax() < config.grad_tol;

    while !converged && iterations < config.max_iter {
        let f0 = eval.penalized;
        let slack = 8.0 * f64::EPSILON * f0.abs();
        let mut accepted: Option<(DVector<f64>, f64, Option<Evaluation>)> = None;
        while accepted.is_none() && rho <= RIDGE_CAP {
            let mut a = eval.jp.clone();
            for k in 0..a.nrows() {
                a[(k, k)] += rho;
            }
            let Some(chol) = a.cholesky() else {
                rho *= 10.0;
                continue;
            };
            let step = chol.solve(&eval.grad);
            let predicted = eval.grad.dot(&step);
            let mut t = 1.0;
            for _ in 0..=config.max_backtracks {
                let trial = &x + &step * t;
                let f = model.objective(&trial)?;
                if f.is_nan() {
                    return Err(Error::Numerical {
                        iteration: iterations + 1,
                        message: "objective evaluated to NaN".into(),
                    });
                }
                if f >= f0 - slack {
                    accepted = Some((trial, t, None));
                    break;
                }
                // Near the optimum the predicted gain can fall below the
                // rounding noise of the objective; judge the step by the
                // gradient instead.
                if t * predicted <= NOISE_FLOOR * (1.0 + f0.abs()) {
                    let trial_eval = model.evaluate(&trial)?;
                    if trial_eval.grad.amax() < eval.grad.amax() && trial_eval.penalized.is_finite() {
                        accepted = Some((trial, t, Some(trial_eval)));
                    }
                    break;
                }
                t *= config.step_shrink;
            }
            if accepted.is_none() {
                rho *= 10.0;
            }
        }
        let Some((trial, t, trial_eval)) = accepted else {
            break;
        };
        if t == 1.0 {
            rho = (rho / 10.0).max(config.ridge_start);
        }
        iterations += 1;
        x = trial;
        eval = match trial_eval {
            Some(e) => e,
            None => model.evaluate(&x)?,
        };
        check_finite(&eval, iterations)?;
        trace.push(eval.penalized);
        converged = eval.grad.amax() < config.grad_tol;
    }

    let diagnostics = FitDiagnostics {
        iterations,
        grad_norm: eval.grad.amax(),
        converged,
        trace,
        condition: condition_number(&eval.jp),
    };
    Ok(Optimum { params: x, eval, diagnostics })
}

fn check_finite(eval: &Evaluation, iteration: usize) -> Result<()> {
    if !eval.penalized.is_finite() {
        return Err(Error::Numerical { iteration, message: format!("objective is {}", eval.penalized) });
    }
    if eval.grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numerical { iteration, message: "gradient is not finite".into() });
    }
    Ok(())
}

/// Ratio of largest to smallest eigenvalue of a symmetric matrix
/// (infinite when not positive definite).
pub fn condition_number(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 1.0;
    }
    let eig = a.clone().symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Solves `J_p·X = B`, preferring Cholesky.
pub fn solve_information(jp: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(chol) = jp.clone().cholesky() {
        return Ok(chol.solve(b));
    }
    jp.clone().lu().solve(b).filter(|x| x.iter().all(|v| v.is_finite())).ok_or_else(|| {
        Error::Singular("penalized information is singular; use a larger smoothing parameter or fewer components".into())
    })
}

/// Effective degrees of freedom `tr(J_p⁻¹ J)`, evaluated as
/// `q − tr(J_p⁻¹ (J_p − J))` so that an unpenalized fit gives exactly `q`.
pub fn edf(jp: &DMatrix<f64>, j: &DMatrix<f64>) -> Result<f64> {
    Ok(jp.nrows() as f64 - solve_information(jp, &(jp - j))?.trace())
}

/// `−2·loglik + 2·edf`, with the unpenalized log-likelihood.
pub fn aic(loglik: f64, edf: f64) -> f64 {
    -2.0 * loglik + 2.0 * edf
}

/// The default smoothing grid `e^-5, e^-4, …, e^5`.
pub fn default_lambda_grid() -> Vec<f64> {
    (-5..=5).map(|e| (e as f64).exp()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchConfig {
    pub newton: NewtonConfig,
    /// Start each fit at the previous optimum. When off, fits run in parallel.
    pub warm_start: bool,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self { newton: NewtonConfig::default(), warm_start: true }
    }
}

/// One fit within a smoothing-parameter search.
#[derive(Debug, Clone)]
pub struct LambdaFit {
    pub lambda_alpha: f64,
    pub lambda_gamma: f64,
    /// `None` when the fit failed outright.
    pub optimum: Option<Optimum>,
    pub edf: f64,
    pub aic: f64,
    pub error: Option<String>,
}

impl LambdaFit {
    /// Eligible for selection: converged with a finite AIC.
    pub fn usable(&self) -> bool {
        self.optimum.as_ref().is_some_and(|o| o.diagnostics.converged) && self.aic.is_finite()
    }
}

#[derive(Debug, Clone)]
pub struct LambdaSearchResult {
    /// Fits in the order they were run.
    pub fits: Vec<LambdaFit>,
    /// Index into `fits` of the AIC minimizer.
    pub selected: usize,
}

impl LambdaSearchResult {
    pub fn best(&self) -> &LambdaFit {
        &self.fits[self.selected]
    }

    pub fn best_optimum(&self) -> &Optimum {
        self.fits[self.selected].optimum.as_ref().expect("selected fit has an optimum")
    }
}

/// Fits every `(λ_α, λ_γ)` pair in `schedule` order and selects the AIC
/// minimizer among converged fits.
pub fn search<M>(model: &M, init: &DVector<f64>, schedule: &[(f64, f64)], config: &SearchConfig) -> Result<LambdaSearchResult>
where
    M: PenalizedModel + Clone + Sync,
{
    if schedule.is_empty() {
        return Err(Error::Config("smoothing-parameter grid is empty".into()));
    }
    if let Some(bad) = schedule.iter().find(|(a, g)| !(*a >= 0.0 && *g >= 0.0 && a.is_finite() && g.is_finite())) {
        return Err(Error::Config(format!("smoothing parameters must be finite and >= 0, got {bad:?}")));
    }
    let run = |la: f64, lg: f64, start: &DVector<f64>| -> LambdaFit {
        let mut m = model.clone();
        m.set_smoothing(la, lg);
        match maximize(&m, start, &config.newton) {
            Ok(opt) => {
                let (edf, aic, error) = match edf(&opt.eval.jp, &opt.eval.j) {
                    Ok(e) => (e, aic(opt.eval.loglik, e), None),
                    Err(err) => (f64::NAN, f64::NAN, Some(err.to_string())),
                };
                LambdaFit { lambda_alpha: la, lambda_gamma: lg, optimum: Some(opt), edf, aic, error }
            }
            Err(err) => LambdaFit {
                lambda_alpha: la,
                lambda_gamma: lg,
                optimum: None,
                edf: f64::NAN,
                aic: f64::NAN,
                error: Some(err.to_string()),
            },
        }
    };

    let fits: Vec<LambdaFit> = if config.warm_start {
        let mut out = Vec::with_capacity(schedule.len());
        let mut start = init.clone();
        for &(la, lg) in schedule {
            let fit = run(la, lg, &start);
            if let Some(opt) = fit.optimum.as_ref().filter(|o| o.diagnostics.converged) {
                start = opt.params.clone();
            }
            out.push(fit);
        }
        out
    } else {
        schedule.par_iter().map(|&(la, lg)| run(la, lg, init)).collect()
    };

    let selected = fits
        .iter()
        .enumerate()
        .filter(|(_, f)| f.usable())
        .min_by(|a, b| a.1.aic.total_cmp(&b.1.aic))
        .map(|(i, _)| i);
    match selected {
        Some(selected) => Ok(LambdaSearchResult { fits, selected }),
        None => {
            let detail: Vec<String> = fits
                .iter()
                .map(|f| {
                    let why = match (&f.error, &f.optimum) {
                        (Some(e), _) => e.clone(),
                        (None, Some(o)) => format!(
                            "not converged after {} iterations (|grad| = {:.3e})",
                            o.diagnostics.iterations, o.diagnostics.grad_norm
                        ),
                        (None, None) => "failed".into(),
                    };
                    format!("lambda=({:.4e}, {:.4e}): {why}", f.lambda_alpha, f.lambda_gamma)
                })
                .collect();
            Err(Error::NoConvergence(format!("every smoothing parameter failed; {}", detail.join("; "))))
        }
    }
}

/// One-dimensional search: largest λ first, warm-starting downward.
pub fn select_lambda_1d<M>(model: &M, init: &DVector<f64>, lambdas: &[f64], config: &SearchConfig) -> Result<LambdaSearchResult>
where
    M: PenalizedModel + Clone + Sync,
{
    let mut sorted = lambdas.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let schedule: Vec<(f64, f64)> = sorted.into_iter().map(|l| (l, 0.0)).collect();
    search(model, init, &schedule, config)
}

/// Product-grid search over `(λ_α, λ_γ)` in serpentine order: rows of
/// decreasing λ_α, alternating the direction of λ_γ so consecutive fits are
/// neighbours.
pub fn select_lambda_2d<M>(
    model: &M,
    init: &DVector<f64>,
    lambda_alpha: &[f64],
    lambda_gamma: &[f64],
    config: &SearchConfig,
) -> Result<LambdaSearchResult>
where
    M: PenalizedModel + Clone + Sync,
{
    search(model, init, &serpentine(lambda_alpha, lambda_gamma), config)
}

pub fn serpentine(lambda_alpha: &[f64], lambda_gamma: &[f64]) -> Vec<(f64, f64)> {
    let mut la = lambda_alpha.to_vec();
    la.sort_by(|a, b| b.total_cmp(a));
    let mut lg = lambda_gamma.to_vec();
    lg.sort_by(|a, b| b.total_cmp(a));
    let mut schedule = Vec::with_capacity(la.len() * lg.len());
    for (row, &a) in la.iter().enumerate() {
        if row % 2 == 0 {
            schedule.extend(lg.iter().map(|&g| (a, g)));
        } else {
            schedule.extend(lg.iter().rev().map(|&g| (a, g)));
        }
    }
    schedule
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Concave quadratic `−½(x−m)ᵀA(x−m)·(1+λ)`.
    #[derive(Clone)]
    struct Quadratic {
        a: DMatrix<f64>,
        m: DVector<f64>,
        lambda: f64,
    }

    impl PenalizedModel for Quadratic {
        fn dim(&self) -> usize {
            self.m.len()
        }
        fn objective(&self, x: &DVector<f64>) -> Result<f64> {
            let d = x - &self.m;
            Ok(-0.5 * d.dot(&(&self.a * &d)) * (1.0 + self.lambda))
        }
        fn evaluate(&self, x: &DVector<f64>) -> Result<Evaluation> {
            let d = x - &self.m;
            Ok(Evaluation {
                loglik: -0.5 * d.dot(&(&self.a * &d)),
                penalized: self.objective(x)?,
                grad: -(&self.a * &d) * (1.0 + self.lambda),
                jp: &self.a * (1.0 + self.lambda),
                j: self.a.clone(),
                scores: DMatrix::zeros(1, self.m.len()),
            })
        }
        fn set_smoothing(&mut self, la: f64, _: f64) {
            self.lambda = la;
        }
    }

    fn quad() -> Quadratic {
        Quadratic {
            a: DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]),
            m: DVector::from_vec(vec![1.0, -2.0]),
            lambda: 0.0,
        }
    }

    #[test]
    fn quadratic_converges_in_one_step() {
        let q = quad();
        // The default ridge perturbs the step by O(1e-8), which is just above
        // the gradient tolerance; a negligible ridge gives the exact step.
        let config = NewtonConfig { ridge_start: 1e-15, ..NewtonConfig::default() };
        let opt = maximize(&q, &DVector::zeros(2), &config).unwrap();
        assert!(opt.diagnostics.converged);
        assert_eq!(opt.diagnostics.iterations, 1);
        assert!((&opt.params - &q.m).amax() < 1e-7);
    }

    #[test]
    fn start_at_optimum_returns_immediately() {
        let q = quad();
        let opt = maximize(&q, &q.m, &NewtonConfig::default()).unwrap();
        assert_eq!(opt.diagnostics.iterations, 0);
        assert!(opt.diagnostics.converged);
    }

    #[test]
    fn rejects_non_finite_start() {
        let q = quad();
        let err = maximize(&q, &DVector::from_vec(vec![f64::NAN, 0.0]), &NewtonConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Numerical { iteration: 0, .. }));
    }

    #[test]
    fn edf_scalar_algebra() {
        let j = DMatrix::from_row_slice(3, 3, &[2.0, 0.5, 0.0, 0.5, 1.0, 0.2, 0.0, 0.2, 3.0]);
        assert!((edf(&j, &j).unwrap() - 3.0).abs() < 1e-12);
        assert!((edf(&(&j * 2.0), &j).unwrap() - 1.5).abs() < 1e-12);
    }

    #[test]
    fn edf_singular_information_errors() {
        let z = DMatrix::zeros(2, 2);
        assert!(matches!(edf(&z, &z), Err(Error::Singular(_))));
    }

    #[test]
    fn aic_arithmetic() {
        assert_eq!(aic(-100.0, 5.0), 210.0);
    }

    #[test]
    fn default_grid_is_eleven_points() {
        let g = default_lambda_grid();
        assert_eq!(g.len(), 11);
        assert!((g[0] - (-5f64).exp()).abs() < 1e-18);
        assert!((g[10] - 5f64.exp()).abs() < 1e-12);
    }

    #[test]
    fn single_point_search() {
        let q = quad();
        let res = select_lambda_1d(&q, &DVector::zeros(2), &[0.5], &SearchConfig::default()).unwrap();
        assert_eq!(res.fits.len(), 1);
        assert_eq!(res.best().lambda_alpha, 0.5);
    }

    #[test]
    fn serpentine_visits_neighbours() {
        let s = serpentine(&[1.0, 2.0], &[10.0, 20.0, 30.0]);
        assert_eq!(s, vec![(2.0, 30.0), (2.0, 20.0), (2.0, 10.0), (1.0, 10.0), (1.0, 20.0), (1.0, 30.0)]);
    }

    #[test]
    fn empty_grid_is_config_error() {
        assert!(matches!(
            select_lambda_1d(&quad(), &DVector::zeros(2), &[], &SearchConfig::default()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn invalid_newton_config() {
        let cfg = NewtonConfig { step_shrink: 1.5, ..Default::default() };
        assert!(maximize(&quad(), &DVector::zeros(2), &cfg).is_err());
    }
}
