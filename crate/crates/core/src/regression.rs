//! Meta-regression extensions of the mixture model.
//!
//! The location-shifting model translates the whole mixture by `xᵀβ`; the
//! shape-morphing model lets a single covariate `z` tilt the softmax weights
//! through `α* + z·γ*`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::grid::{log_basis_matrix, ConstraintMatrix, DifferenceMatrix, Grid};
use crate::mixture::{
    loglik_only, penalty_value, responsibilities, responsibilities_by_row, softmax, symmetrize, MixtureWeights,
    ScoreInfo,
};
use crate::optimizer::{Evaluation, PenalizedModel};

/// Scaled residuals of the location model and their responsibility-weighted
/// row means.
#[derive(Debug, Clone)]
pub struct ScaledResiduals {
    /// n×K, `(y_i − μ_k − x_iᵀβ)/(τ_c² + v_i)`.
    pub rt: DMatrix<f64>,
    /// `r̄_i = ∑_k q_ik r̃_ik`.
    pub rbar: DVector<f64>,
}

/// Location-shifting model with parameters `η = (α, β)`.
#[derive(Debug, Clone)]
pub struct LocationModel {
    grid: Grid,
    y: Vec<f64>,
    v: Vec<f64>,
    x: DMatrix<f64>,
    c: ConstraintMatrix,
    penalty: DMatrix<f64>,
    lambda: f64,
}

impl LocationModel {
    pub fn new(
        grid: Grid,
        y: Vec<f64>,
        v: Vec<f64>,
        x: DMatrix<f64>,
        d: &DifferenceMatrix,
        lambda: f64,
    ) -> Result<Self> {
        let n = y.len();
        if v.len() != n || x.nrows() != n {
            return Err(Error::Dimension(format!(
                "location model: {n} effects, {} variances, {} design rows",
                v.len(),
                x.nrows()
            )));
        }
        if x.ncols() == 0 {
            return Err(Error::Dimension("location model needs at least one covariate".into()));
        }
        let c = ConstraintMatrix::new(grid.k())?;
        Ok(Self { grid, y, v, x, c, penalty: d.penalty(), lambda })
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn constraint(&self) -> &ConstraintMatrix {
        &self.c
    }

    fn split<'a>(&self, eta: &'a DVector<f64>) -> (&'a [f64], DVector<f64>) {
        let q = self.c.free();
        (&eta.as_slice()[..q], DVector::from_column_slice(&eta.as_slice()[q..]))
    }

    fn shift(&self, beta: &DVector<f64>) -> Vec<f64> {
        (&self.x * beta).iter().copied().collect()
    }

    /// Scaled residuals at `η`.
    pub fn scaled_residuals(&self, eta: &DVector<f64>) -> Result<ScaledResiduals> {
        let (alpha, beta) = self.split(eta);
        let shift = self.shift(&beta);
        let log_phi = log_basis_matrix(&self.grid, &self.y, &self.v, &shift);
        let w = MixtureWeights(softmax(&self.c.expand(alpha)));
        let ws = responsibilities(&w, &log_phi)?;
        Ok(self.residuals_with(&shift, &ws.q))
    }

    fn residuals_with(&self, shift: &[f64], q: &DMatrix<f64>) -> ScaledResiduals {
        let tc2 = self.grid.tau_c().powi(2);
        let mu = self.grid.mu();
        let rt = DMatrix::from_fn(self.y.len(), self.grid.k(), |i, k| {
            (self.y[i] - mu[k] - shift[i]) / (tc2 + self.v[i])
        });
        let rbar = DVector::from_fn(self.y.len(), |i, _| (0..self.grid.k()).map(|k| q[(i, k)] * rt[(i, k)]).sum());
        ScaledResiduals { rt, rbar }
    }

    /// Penalized score and information over `(α, β)`.
    pub fn score_info(&self, eta: &DVector<f64>) -> Result<ScoreInfo> {
        let (alpha, beta) = self.split(eta);
        let (n, p, kq) = (self.y.len(), self.p(), self.c.free());
        let shift = self.shift(&beta);
        let log_phi = log_basis_matrix(&self.grid, &self.y, &self.v, &shift);
        let full = self.c.expand(alpha);
        let w = MixtureWeights(softmax(&full));
        let ws = responsibilities(&w, &log_phi)?;
        let q = &ws.q;
        let res = self.residuals_with(&shift, q);
        let tc2 = self.grid.tau_c().powi(2);

        // α block, as in the intercept model.
        let col_sums = DVector::from_iterator(q.ncols(), q.column_iter().map(|col| col.sum()));
        let resid = &col_sums - &w.0 * n as f64;
        let grad_a = self.c.reduce(&(&resid - &self.penalty * &full * self.lambda));
        let mut info_aa = q.tr_mul(q) - (&w.0 * w.0.transpose()) * n as f64;
        for k in 0..info_aa.nrows() {
            info_aa[(k, k)] -= resid[k];
        }

        // β block.
        let grad_b = self.x.tr_mul(&res.rbar);
        let diag_b = DVector::from_fn(n, |i, _| {
            let m2: f64 = (0..self.grid.k()).map(|k| q[(i, k)] * res.rt[(i, k)].powi(2)).sum();
            1.0 / (tc2 + self.v[i]) - (m2 - res.rbar[i].powi(2))
        });
        let xd = DMatrix::from_fn(n, p, |i, j| self.x[(i, j)] * diag_b[i]);
        let info_bb = self.x.tr_mul(&xd);

        // Cross block: −∂²l/∂α*∂βᵀ = −[Q∘(R̃ − r̄1ᵀ)]ᵀX.
        let qr = DMatrix::from_fn(n, self.grid.k(), |i, k| q[(i, k)] * (res.rt[(i, k)] - res.rbar[i]));
        let info_ab = -self.c.reduce_rows(&qr.tr_mul(&self.x));

        let dim = kq + p;
        let mut j = DMatrix::zeros(dim, dim);
        j.view_mut((0, 0), (kq, kq)).copy_from(&self.c.reduce_matrix(&info_aa));
        j.view_mut((kq, kq), (p, p)).copy_from(&info_bb);
        j.view_mut((0, kq), (kq, p)).copy_from(&info_ab);
        j.view_mut((kq, 0), (p, kq)).copy_from(&info_ab.transpose());
        symmetrize(&mut j);
        let mut jp = j.clone();
        let pen = self.c.reduce_matrix(&self.penalty) * self.lambda;
        let mut block = jp.view_mut((0, 0), (kq, kq));
        block += &pen;
        symmetrize(&mut jp);

        let mut grad = DVector::zeros(dim);
        grad.rows_mut(0, kq).copy_from(&grad_a);
        grad.rows_mut(kq, p).copy_from(&grad_b);

        let mut scores = DMatrix::zeros(n, dim);
        for i in 0..n {
            for a in 0..kq {
                let k = if a < self.c.reference() { a } else { a + 1 };
                scores[(i, a)] = q[(i, k)] - w.0[k];
            }
            for b in 0..p {
                scores[(i, kq + b)] = res.rbar[i] * self.x[(i, b)];
            }
        }
        let penalized = ws.loglik - penalty_value(&full, &self.penalty, self.lambda);
        Ok(ScoreInfo { grad, jp, j, scores, loglik: ws.loglik, penalized })
    }
}

impl PenalizedModel for LocationModel {
    fn dim(&self) -> usize {
        self.c.free() + self.p()
    }

    fn objective(&self, eta: &DVector<f64>) -> Result<f64> {
        let (alpha, beta) = self.split(eta);
        let log_phi = log_basis_matrix(&self.grid, &self.y, &self.v, &self.shift(&beta));
        let full = self.c.expand(alpha);
        let ll = loglik_only(&softmax(&full).map(f64::ln), &log_phi)?;
        Ok(ll - penalty_value(&full, &self.penalty, self.lambda))
    }

    fn evaluate(&self, eta: &DVector<f64>) -> Result<Evaluation> {
        Ok(self.score_info(eta)?.into())
    }

    fn set_smoothing(&mut self, lambda_alpha: f64, _lambda_gamma: f64) {
        self.lambda = lambda_alpha;
    }
}

/// Shape-morphing model with parameters `η = (α, γ)` and one covariate `z`.
#[derive(Debug, Clone)]
pub struct ShapeModel {
    log_phi: DMatrix<f64>,
    z: Vec<f64>,
    c: ConstraintMatrix,
    penalty: DMatrix<f64>,
    lambda_alpha: f64,
    lambda_gamma: f64,
}

impl ShapeModel {
    pub fn new(
        grid: &Grid,
        y: &[f64],
        v: &[f64],
        z: Vec<f64>,
        d: &DifferenceMatrix,
        lambda_alpha: f64,
        lambda_gamma: f64,
    ) -> Result<Self> {
        if y.len() != v.len() || z.len() != y.len() {
            return Err(Error::Dimension(format!(
                "shape model: {} effects, {} variances, {} covariate values",
                y.len(),
                v.len(),
                z.len()
            )));
        }
        if let Some(i) = z.iter().position(|x| !x.is_finite()) {
            return Err(Error::validation(i + 1, "shape covariate is not finite"));
        }
        let log_phi = log_basis_matrix(grid, y, v, &vec![0.0; y.len()]);
        Ok(Self {
            log_phi,
            z,
            c: ConstraintMatrix::new(grid.k())?,
            penalty: d.penalty(),
            lambda_alpha,
            lambda_gamma,
        })
    }

    pub fn constraint(&self) -> &ConstraintMatrix {
        &self.c
    }

    fn split(&self, eta: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let q = self.c.free();
        (self.c.expand(&eta.as_slice()[..q]), self.c.expand(&eta.as_slice()[q..]))
    }

    fn log_weights(&self, a: &DVector<f64>, g: &DVector<f64>) -> Vec<DVector<f64>> {
        self.z
            .iter()
            .map(|&zi| {
                let lin = a + g * zi;
                let m = lin.max();
                let lse = m + lin.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
                lin.map(|x| x - lse)
            })
            .collect()
    }

    fn penalty_total(&self, a: &DVector<f64>, g: &DVector<f64>) -> f64 {
        penalty_value(a, &self.penalty, self.lambda_alpha) + penalty_value(g, &self.penalty, self.lambda_gamma)
    }

    /// Penalized score and information over `(α, γ)`.
    pub fn score_info(&self, eta: &DVector<f64>) -> Result<ScoreInfo> {
        let (a, g) = self.split(eta);
        let (n, k) = self.log_phi.shape();
        let kq = self.c.free();
        let log_w = self.log_weights(&a, &g);
        let ws = responsibilities_by_row(&self.log_phi, |i| &log_w[i])?;
        let q = &ws.q;
        let wm = DMatrix::from_fn(n, k, |i, j| log_w[i][j].exp());
        let diff = q - &wm;

        let z = &self.z;
        let z2: Vec<f64> = z.iter().map(|x| x * x).collect();
        let weighted_sum = |weights: &[f64]| -> DVector<f64> {
            DVector::from_fn(k, |j, _| (0..n).map(|i| weights[i] * diff[(i, j)]).sum())
        };
        let ones = vec![1.0; n];
        let r1 = weighted_sum(&ones);
        let rz = weighted_sum(z);
        let rz2 = weighted_sum(&z2);

        let grad_a = self.c.reduce(&(&r1 - &self.penalty * &a * self.lambda_alpha));
        let grad_g = self.c.reduce(&(&rz - &self.penalty * &g * self.lambda_gamma));

        // Q^T diag(s) Q − W^T diag(s) W − diag((Q − W)^T s)
        let block = |s: &[f64], r: &DVector<f64>| -> DMatrix<f64> {
            let qs = DMatrix::from_fn(n, k, |i, j| q[(i, j)] * s[i]);
            let wsm = DMatrix::from_fn(n, k, |i, j| wm[(i, j)] * s[i]);
            let mut m = q.tr_mul(&qs) - wm.tr_mul(&wsm);
            for j in 0..k {
                m[(j, j)] -= r[j];
            }
            m
        };
        let info_aa = self.c.reduce_matrix(&block(&ones, &r1));
        let info_gg = self.c.reduce_matrix(&block(&z2, &rz2));
        let info_ag = self.c.reduce_matrix(&block(z, &rz));

        let dim = 2 * kq;
        let mut j = DMatrix::zeros(dim, dim);
        j.view_mut((0, 0), (kq, kq)).copy_from(&info_aa);
        j.view_mut((kq, kq), (kq, kq)).copy_from(&info_gg);
        j.view_mut((0, kq), (kq, kq)).copy_from(&info_ag);
        j.view_mut((kq, 0), (kq, kq)).copy_from(&info_ag.transpose());
        symmetrize(&mut j);
        let pen = self.c.reduce_matrix(&self.penalty);
        let mut jp = j.clone();
        {
            let mut v = jp.view_mut((0, 0), (kq, kq));
            v += &pen * self.lambda_alpha;
        }
        {
            let mut v = jp.view_mut((kq, kq), (kq, kq));
            v += &pen * self.lambda_gamma;
        }
        symmetrize(&mut jp);

        let mut grad = DVector::zeros(dim);
        grad.rows_mut(0, kq).copy_from(&grad_a);
        grad.rows_mut(kq, kq).copy_from(&grad_g);

        let base = self.c.reduce_cols(&diff);
        let mut scores = DMatrix::zeros(n, dim);
        for i in 0..n {
            for a in 0..kq {
                scores[(i, a)] = base[(i, a)];
                scores[(i, kq + a)] = z[i] * base[(i, a)];
            }
        }
        let penalized = ws.loglik - self.penalty_total(&a, &g);
        Ok(ScoreInfo { grad, jp, j, scores, loglik: ws.loglik, penalized })
    }
}

impl PenalizedModel for ShapeModel {
    fn dim(&self) -> usize {
        2 * self.c.free()
    }

    fn objective(&self, eta: &DVector<f64>) -> Result<f64> {
        let (a, g) = self.split(eta);
        let log_w = self.log_weights(&a, &g);
        let mut total = 0.0;
        let k = self.log_phi.ncols();
        for (i, lw) in log_w.iter().enumerate() {
            let m = (0..k).map(|j| lw[j] + self.log_phi[(i, j)]).fold(f64::NEG_INFINITY, f64::max);
            if !m.is_finite() {
                return Err(Error::Support { record: i + 1 });
            }
            total += m + (0..k).map(|j| (lw[j] + self.log_phi[(i, j)] - m).exp()).sum::<f64>().ln();
        }
        Ok(total - self.penalty_total(&a, &g))
    }

    fn evaluate(&self, eta: &DVector<f64>) -> Result<Evaluation> {
        Ok(self.score_info(eta)?.into())
    }

    fn set_smoothing(&mut self, lambda_alpha: f64, lambda_gamma: f64) {
        self.lambda_alpha = lambda_alpha;
        self.lambda_gamma = lambda_gamma;
    }
}

impl From<ScoreInfo> for Evaluation {
    fn from(si: ScoreInfo) -> Self {
        Evaluation { loglik: si.loglik, penalized: si.penalized, grad: si.grad, jp: si.jp, j: si.j, scores: si.scores }
    }
}

/// Weights of the shape model at covariate value `z0`:
/// `softmax(α* + z0·γ*)`.
pub fn conditional_weights(alpha: &[f64], gamma: &[f64], z0: f64, c: &ConstraintMatrix) -> MixtureWeights {
    MixtureWeights(softmax(&(c.expand(alpha) + c.expand(gamma) * z0)))
}
