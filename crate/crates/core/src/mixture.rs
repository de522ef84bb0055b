//! Intercept-only penalized Gaussian mixture: softmax weights,
//! responsibilities, penalized log-likelihood, score and observed information.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::grid::{ConstraintMatrix, DifferenceMatrix};
use crate::optimizer::{Evaluation, PenalizedModel};

/// Mixture weights on the probability simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureWeights(pub DVector<f64>);

impl MixtureWeights {
    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn vector(&self) -> &DVector<f64> {
        &self.0
    }

    /// Jacobian `∂w/∂a* = diag(w) − wwᵀ` of the softmax map.
    pub fn softmax_jacobian(&self) -> DMatrix<f64> {
        let w = &self.0;
        let mut j = -(w * w.transpose());
        for k in 0..w.len() {
            j[(k, k)] += w[k];
        }
        j
    }
}

/// Numerically stable softmax.
pub fn softmax(a: &DVector<f64>) -> DVector<f64> {
    let m = a.max();
    let mut e = a.map(|x| (x - m).exp());
    let s = e.sum();
    e /= s;
    e
}

/// `w = softmax(C·α)`.
pub fn softmax_weights(alpha: &[f64], c: &ConstraintMatrix) -> MixtureWeights {
    MixtureWeights(softmax(&c.expand(alpha)))
}

/// Responsibilities and marginal densities at the current weights.
#[derive(Debug, Clone)]
pub struct LikelihoodWorkspace {
    /// n×K, `q_ik = w_k φ_ik / f(y_i)`.
    pub q: DMatrix<f64>,
    /// `log f(y_i)`.
    pub log_f: DVector<f64>,
    pub loglik: f64,
}

impl LikelihoodWorkspace {
    pub fn marginal_density(&self) -> DVector<f64> {
        self.log_f.map(f64::exp)
    }
}

/// Responsibilities for common weights across records.
pub fn responsibilities(weights: &MixtureWeights, log_phi: &DMatrix<f64>) -> Result<LikelihoodWorkspace> {
    let log_w = weights.0.map(f64::ln);
    responsibilities_by_row(log_phi, |_| &log_w)
}

/// Responsibilities when each record has its own log-weights (shape model).
pub(crate) fn responsibilities_by_row<'a, F>(log_phi: &DMatrix<f64>, log_w: F) -> Result<LikelihoodWorkspace>
where
    F: Fn(usize) -> &'a DVector<f64>,
{
    let (n, k) = log_phi.shape();
    let mut q = DMatrix::zeros(n, k);
    let mut log_f = DVector::zeros(n);
    let mut buf = vec![0.0; k];
    let mut loglik = 0.0;
    for i in 0..n {
        let lw = log_w(i);
        let mut m = f64::NEG_INFINITY;
        for j in 0..k {
            buf[j] = lw[j] + log_phi[(i, j)];
            m = m.max(buf[j]);
        }
        if !m.is_finite() {
            return Err(Error::Support { record: i + 1 });
        }
        let mut s = 0.0;
        for b in buf.iter_mut() {
            *b = (*b - m).exp();
            s += *b;
        }
        for j in 0..k {
            q[(i, j)] = buf[j] / s;
        }
        log_f[i] = m + s.ln();
        loglik += log_f[i];
    }
    Ok(LikelihoodWorkspace { q, log_f, loglik })
}

/// `∑_i log ∑_k exp(log w_k + log φ_ik)` without building Q.
pub(crate) fn loglik_only(log_w: &DVector<f64>, log_phi: &DMatrix<f64>) -> Result<f64> {
    let (n, k) = log_phi.shape();
    let mut total = 0.0;
    for i in 0..n {
        let mut m = f64::NEG_INFINITY;
        for j in 0..k {
            m = m.max(log_w[j] + log_phi[(i, j)]);
        }
        if !m.is_finite() {
            return Err(Error::Support { record: i + 1 });
        }
        let s: f64 = (0..k).map(|j| (log_w[j] + log_phi[(i, j)] - m).exp()).sum();
        total += m + s.ln();
    }
    Ok(total)
}

/// `(λ/2)·a*ᵀ DᵀD a*` for a full-length coefficient vector.
pub fn penalty_value(full: &DVector<f64>, penalty: &DMatrix<f64>, lambda: f64) -> f64 {
    if lambda == 0.0 {
        return 0.0;
    }
    0.5 * lambda * full.dot(&(penalty * full))
}

/// Penalized log-likelihood `∑ log f(y_i) − (λ/2)·αᵀCᵀDᵀDCα`.
pub fn penalized_loglik(
    alpha: &[f64],
    log_phi: &DMatrix<f64>,
    lambda: f64,
    c: &ConstraintMatrix,
    d: &DifferenceMatrix,
) -> Result<f64> {
    let full = c.expand(alpha);
    let w = softmax(&full);
    let ll = loglik_only(&w.map(f64::ln), log_phi)?;
    Ok(ll - penalty_value(&full, &d.penalty(), lambda))
}

/// Score and information at one parameter value.
#[derive(Debug, Clone)]
pub struct ScoreInfo {
    pub grad: DVector<f64>,
    /// Penalized observed information `J_p`.
    pub jp: DMatrix<f64>,
    /// Unpenalized observed information `J`.
    pub j: DMatrix<f64>,
    /// Per-record unpenalized scores, n×(K−1).
    pub scores: DMatrix<f64>,
    pub loglik: f64,
    pub penalized: f64,
}

/// Penalized score and observed information for the intercept-only model.
pub fn score_and_information(
    alpha: &[f64],
    log_phi: &DMatrix<f64>,
    lambda: f64,
    c: &ConstraintMatrix,
    d: &DifferenceMatrix,
) -> Result<ScoreInfo> {
    InterceptModel::new(log_phi.clone(), *c, d, lambda).score_info(&DVector::from_column_slice(alpha))
}

/// `(A + Aᵀ)/2`
pub(crate) fn symmetrize(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let m = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = m;
            a[(j, i)] = m;
        }
    }
}

/// The intercept-only model at a fixed smoothing parameter.
#[derive(Debug, Clone)]
pub struct InterceptModel {
    log_phi: DMatrix<f64>,
    c: ConstraintMatrix,
    penalty: DMatrix<f64>,
    lambda: f64,
}

impl InterceptModel {
    pub fn new(log_phi: DMatrix<f64>, c: ConstraintMatrix, d: &DifferenceMatrix, lambda: f64) -> Self {
        Self { log_phi, c, penalty: d.penalty(), lambda }
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn set_lambda(&mut self, lambda: f64) {
        self.lambda = lambda;
    }

    pub fn log_phi(&self) -> &DMatrix<f64> {
        &self.log_phi
    }

    pub fn score_info(&self, alpha: &DVector<f64>) -> Result<ScoreInfo> {
        let c = &self.c;
        let n = self.log_phi.nrows() as f64;
        let full = c.expand(alpha.as_slice());
        let w = MixtureWeights(softmax(&full));
        let ws = responsibilities(&w, &self.log_phi)?;
        let q = &ws.q;

        let col_sums = DVector::from_iterator(q.ncols(), q.column_iter().map(|col| col.sum()));
        let resid = &col_sums - &w.0 * n;
        let pen_grad = &self.penalty * &full * self.lambda;
        let grad = c.reduce(&(&resid - &pen_grad));

        let mut info = q.tr_mul(q) - (&w.0 * w.0.transpose()) * n;
        for k in 0..info.nrows() {
            info[(k, k)] -= resid[k];
        }
        let mut j = c.reduce_matrix(&info);
        symmetrize(&mut j);
        let mut jp = c.reduce_matrix(&(info + &self.penalty * self.lambda));
        symmetrize(&mut jp);

        let mut dev = q.clone();
        for mut row in dev.row_iter_mut() {
            row -= w.0.transpose();
        }
        let scores = c.reduce_cols(&dev);

        let penalized = ws.loglik - penalty_value(&full, &self.penalty, self.lambda);
        Ok(ScoreInfo { grad, jp, j, scores, loglik: ws.loglik, penalized })
    }
}

impl PenalizedModel for InterceptModel {
    fn dim(&self) -> usize {
        self.c.free()
    }

    fn objective(&self, params: &DVector<f64>) -> Result<f64> {
        let full = self.c.expand(params.as_slice());
        let log_w = softmax(&full).map(f64::ln);
        Ok(loglik_only(&log_w, &self.log_phi)? - penalty_value(&full, &self.penalty, self.lambda))
    }

    fn evaluate(&self, params: &DVector<f64>) -> Result<Evaluation> {
        let si = self.score_info(params)?;
        Ok(Evaluation {
            loglik: si.loglik,
            penalized: si.penalized,
            grad: si.grad,
            jp: si.jp,
            j: si.j,
            scores: si.scores,
        })
    }

    fn set_smoothing(&mut self, lambda_alpha: f64, _lambda_gamma: f64) {
        self.lambda = lambda_alpha;
    }
}
