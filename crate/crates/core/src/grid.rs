//! Fixed component grid, basis density matrices, and the constraint and
//! difference matrices used by every mixture model.

use nalgebra::{DMatrix, DVector};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::normal;

/// Default ratio of the component SD to the grid spacing.
pub const DEFAULT_C: f64 = 2.0 / 3.0;
/// Default order of the difference penalty.
pub const DEFAULT_ORDER: usize = 3;
/// Normal-consistency factor for the median absolute deviation.
pub const MAD_SCALE: f64 = 1.4826;

/// Evenly spaced component means with a common component SD.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    mu: Vec<f64>,
    delta: f64,
    tau_c: f64,
    c: f64,
}

impl Grid {
    /// `k` means spaced evenly from `lower` to `upper` inclusive.
    pub fn from_range(lower: f64, upper: f64, k: usize, c: f64) -> Result<Self> {
        if k < DEFAULT_ORDER + 1 {
            return Err(Error::Dimension(format!("grid needs at least 4 components, got {k}")));
        }
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::Config(format!("component scale c must be > 0, got {c}")));
        }
        if !(lower.is_finite() && upper.is_finite() && upper > lower) {
            return Err(Error::InvalidData(format!("invalid grid range [{lower}, {upper}]")));
        }
        let delta = (upper - lower) / (k - 1) as f64;
        let mu = (0..k)
            .map(|j| if j + 1 == k { upper } else { lower + j as f64 * delta })
            .collect();
        Ok(Self { mu, delta, tau_c: c * delta, c })
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn k(&self) -> usize {
        self.mu.len()
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn tau_c(&self) -> f64 {
        self.tau_c
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn lower(&self) -> f64 {
        self.mu[0]
    }

    pub fn upper(&self) -> f64 {
        self.mu[self.mu.len() - 1]
    }

    /// Center of the grid range.
    pub fn center(&self) -> f64 {
        0.5 * (self.lower() + self.upper())
    }

    /// Component densities at `theta` for a mean offset `shift`.
    pub fn pdf_vector(&self, theta: f64, shift: f64) -> DVector<f64> {
        let var = self.tau_c * self.tau_c;
        DVector::from_iterator(self.k(), self.mu.iter().map(|&m| normal::pdf(theta, m + shift, var)))
    }

    /// Component CDFs `Φ((θ − μ_k − shift)/τ_c)`.
    pub fn cdf_vector(&self, theta: f64, shift: f64) -> DVector<f64> {
        DVector::from_iterator(
            self.k(),
            self.mu.iter().map(|&m| normal::std_cdf((theta - m - shift) / self.tau_c)),
        )
    }
}

/// Default number of components for `n` records: round(10·log10 n) in [8, 40].
pub fn default_k(n: usize) -> usize {
    let k = (10.0 * (n.max(1) as f64).log10()).round() as usize;
    k.clamp(8, 40)
}

/// Settings for the robust data-driven grid range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RangeRule {
    /// Padding in units of the robust heterogeneity SD.
    pub pad_factor: f64,
    /// Multiplier turning the raw MAD into an SD estimate.
    pub mad_scale: f64,
}

impl Default for RangeRule {
    fn default() -> Self {
        Self { pad_factor: 1.5, mad_scale: MAD_SCALE }
    }
}

/// Robust range `[lower, upper]` covering shrunken effects `y` with sampling
/// variances `v`.
pub fn robust_range(y: &[f64], v: &[f64], rule: &RangeRule) -> (f64, f64) {
    let center = median(y);
    let abs_dev: Vec<f64> = y.iter().map(|&yi| (yi - center).abs()).collect();
    let mad = rule.mad_scale * median(&abs_dev);
    let med_v = median(v);
    let tau2 = mad * mad - med_v;

    let (lo, hi, pad) = if tau2 > 0.0 {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for (&yi, &vi) in y.iter().zip(v) {
            let t = center + tau2 / (tau2 + vi) * (yi - center);
            lo = lo.min(t);
            hi = hi.max(t);
        }
        (lo, hi, rule.pad_factor * tau2.sqrt())
    } else {
        (center, center, rule.pad_factor * med_v.sqrt())
    };
    let (mut lower, mut upper) = (lo - pad, hi + pad);
    if !(upper > lower) {
        log::warn!("grid range collapsed at {center}; widening by 1.5*sqrt(median(v))");
        let w = 1.5 * med_v.sqrt().max(f64::MIN_POSITIVE);
        lower -= w;
        upper += w;
    }
    (lower, upper)
}

/// Grid for the intercept-only (and shape-morphing) model built from raw effects.
pub fn build_grid_intercept(dataset: &Dataset, k: usize, c: f64, rule: &RangeRule) -> Result<Grid> {
    let (lo, hi) = robust_range(&dataset.y(), &dataset.v(), rule);
    Grid::from_range(lo, hi, k, c)
}

/// Grid for the location-shifting model, built from weighted least squares
/// residuals. Returns the grid and the WLS coefficients.
pub fn build_grid_regression(
    dataset: &Dataset,
    x: &DMatrix<f64>,
    k: usize,
    c: f64,
    rule: &RangeRule,
) -> Result<(Grid, DVector<f64>)> {
    let y = dataset.y();
    let v = dataset.v();
    let beta = weighted_least_squares(x, &y, &v, dataset.covariate_names())?;
    let fitted = x * &beta;
    let resid: Vec<f64> = y.iter().zip(fitted.iter()).map(|(a, b)| a - b).collect();
    let (lo, hi) = robust_range(&resid, &v, rule);
    Ok((Grid::from_range(lo, hi, k, c)?, beta))
}

/// WLS regression of `y` on `x` with weights `1/v`. Rank deficiency is
/// reported by naming the first column that is a combination of earlier ones.
pub fn weighted_least_squares(
    x: &DMatrix<f64>,
    y: &[f64],
    v: &[f64],
    names: &[String],
) -> Result<DVector<f64>> {
    let (n, p) = x.shape();
    if y.len() != n || v.len() != n {
        return Err(Error::Dimension(format!("design has {n} rows, data has {}", y.len())));
    }
    let sw: Vec<f64> = v.iter().map(|vi| 1.0 / vi.sqrt()).collect();
    let xw = DMatrix::from_fn(n, p, |i, j| x[(i, j)] * sw[i]);
    let yw = DVector::from_iterator(n, y.iter().zip(&sw).map(|(a, b)| a * b));

    // Modified Gram-Schmidt to locate collinear columns by name.
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(p);
    for j in 0..p {
        let col = xw.column(j).into_owned();
        let scale = col.norm();
        let mut r = col;
        for q in &basis {
            let proj = q.dot(&r);
            r -= q * proj;
        }
        let rn = r.norm();
        if scale == 0.0 || rn <= 1e-10 * scale {
            let name = names.get(j).cloned().unwrap_or_else(|| format!("column {}", j + 1));
            return Err(Error::Singular(format!(
                "design matrix is rank deficient: '{name}' is zero or collinear with earlier columns"
            )));
        }
        basis.push(r / rn);
    }
    let qr = xw.qr();
    let qty = qr.q().transpose() * yw;
    qr.r()
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::Singular("weighted least squares system".into()))
}

/// Maps the K−1 free shape parameters to the full K-vector by inserting a
/// zero at the reference component `k0 = floor((K+1)/2)` (1-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConstraintMatrix {
    k: usize,
    k0: usize,
}

impl ConstraintMatrix {
    pub fn new(k: usize) -> Result<Self> {
        if k < 2 {
            return Err(Error::Dimension(format!("constraint needs K >= 2, got {k}")));
        }
        Ok(Self { k, k0: k.div_ceil(2) - 1 })
    }

    /// 0-based index of the reference component.
    pub fn reference(&self) -> usize {
        self.k0
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn free(&self) -> usize {
        self.k - 1
    }

    /// `C·a`
    pub fn expand(&self, a: &[f64]) -> DVector<f64> {
        debug_assert_eq!(a.len(), self.k - 1);
        let mut out = DVector::zeros(self.k);
        for (j, &val) in a.iter().enumerate() {
            out[self.full_index(j)] = val;
        }
        out
    }

    /// `Cᵀ·u`
    pub fn reduce(&self, u: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.k - 1, (0..self.k - 1).map(|j| u[self.full_index(j)]))
    }

    /// `Cᵀ·M·C`
    pub fn reduce_matrix(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let q = self.k - 1;
        DMatrix::from_fn(q, q, |a, b| m[(self.full_index(a), self.full_index(b))])
    }

    /// `Cᵀ·M` for a K×p matrix.
    pub fn reduce_rows(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(self.k - 1, m.ncols(), |a, b| m[(self.full_index(a), b)])
    }

    /// `M·C` for an r×K matrix.
    pub fn reduce_cols(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(m.nrows(), self.k - 1, |a, b| m[(a, self.full_index(b))])
    }

    /// Dense K×(K−1) matrix.
    pub fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.k, self.k - 1, |r, c| if r == self.full_index(c) { 1.0 } else { 0.0 })
    }

    #[inline]
    fn full_index(&self, free: usize) -> usize {
        if free < self.k0 {
            free
        } else {
            free + 1
        }
    }
}

/// Forward difference operator of order `d` on K coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct DifferenceMatrix {
    d: usize,
    matrix: DMatrix<f64>,
}

impl DifferenceMatrix {
    pub fn new(k: usize, d: usize) -> Result<Self> {
        if k <= d {
            return Err(Error::Dimension(format!(
                "difference order {d} needs more than {d} components, got {k}"
            )));
        }
        let mut m = DMatrix::<f64>::identity(k, k);
        for _ in 0..d {
            let r = m.nrows();
            m = DMatrix::from_fn(r - 1, k, |i, j| m[(i + 1, j)] - m[(i, j)]);
        }
        Ok(Self { d, matrix: m })
    }

    pub fn order(&self) -> usize {
        self.d
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// `DᵀD`
    pub fn penalty(&self) -> DMatrix<f64> {
        self.matrix.transpose() * &self.matrix
    }
}

/// Component log densities `log φ(y_i | μ_k + shift_i, τ_c² + v_i)` as an
/// n×K matrix.
pub fn log_basis_matrix(grid: &Grid, y: &[f64], v: &[f64], shift: &[f64]) -> DMatrix<f64> {
    let tc2 = grid.tau_c * grid.tau_c;
    DMatrix::from_fn(y.len(), grid.k(), |i, k| normal::log_pdf(y[i], grid.mu[k] + shift[i], tc2 + v[i]))
}

/// Density and log-density basis matrices for a dataset.
pub fn basis_matrices(grid: &Grid, dataset: &Dataset, shift: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
    let log_phi = log_basis_matrix(grid, &dataset.y(), &dataset.v(), shift);
    (log_phi.map(f64::exp), log_phi)
}

pub(crate) fn median(x: &[f64]) -> f64 {
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}
