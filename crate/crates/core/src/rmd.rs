//! Regularized minimum distance: `min ||theta||_1` subject to
//! `||g_hat(theta)||_inf <= lambda`.
//!
//! Linear moments are solved exactly as one LP in `(theta+, theta-)`.
//! Nonlinear moments are handled by sequential linearization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{check_finite, column_means, l1, linf, Matrix, Vector};
use crate::lp::{solve_lp, LinearProgram, LpStatus, Sense};

/// Relative tolerance used to decide that a linearization is exact.
const LINEAR_MODEL_TOL: f64 = 1e-12;
/// Feasibility slack accepted when certifying a nonlinear solution.
pub const CERTIFICATE_TOL: f64 = 1e-8;

/// Empirical moment model `g(X_i, theta)` with `m` moments and `p` parameters.
///
/// Implementations are read-only over their data and may be shared across threads.
pub trait ScoreModel: Sync {
    fn n(&self) -> usize;
    fn m(&self) -> usize;
    fn p(&self) -> usize;

    /// `n x m` matrix whose row `i` is `g(X_i, theta)`.
    fn scores(&self, theta: &Vector) -> Result<Matrix>;

    /// `m x p` Jacobian of `g_hat` at `theta`.
    fn jacobian(&self, theta: &Vector) -> Result<Matrix>;

    /// `g_hat(theta) = E_n g(X, theta)`.
    fn mean_score(&self, theta: &Vector) -> Result<Vector> {
        Ok(column_means(&self.scores(theta)?))
    }

    /// Affine representation when `g_hat` is linear in `theta`.
    fn linear_form(&self) -> Option<LinearScore> {
        None
    }
}

/// `g_hat(theta) = G_hat theta + g0_hat`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearScore {
    pub g_hat: Matrix,
    pub g0_hat: Vector,
}

impl LinearScore {
    pub fn new(g_hat: Matrix, g0_hat: Vector) -> Result<Self> {
        if g_hat.nrows() != g0_hat.len() {
            return Err(Error::dim(format!(
                "G_hat has {} rows but g0_hat has length {}",
                g_hat.nrows(),
                g0_hat.len()
            )));
        }
        if g_hat.ncols() == 0 || g_hat.nrows() == 0 {
            return Err(Error::dim("empty moment system"));
        }
        check_finite(g_hat.as_slice(), "G_hat")?;
        check_finite(g0_hat.as_slice(), "g0_hat")?;
        Ok(Self { g_hat, g0_hat })
    }

    pub fn eval(&self, theta: &Vector) -> Vector {
        &self.g_hat * theta + &self.g0_hat
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RmdStatus {
    Optimal,
    Infeasible,
    MaxIterations,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RmdConfig {
    pub lambda: f64,
    #[serde(default = "default_max_outer")]
    pub max_outer_iterations: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
}

fn default_max_outer() -> usize {
    50
}

fn default_tol() -> f64 {
    1e-8
}

impl RmdConfig {
    pub fn new(lambda: f64) -> Self {
        Self {
            lambda,
            max_outer_iterations: default_max_outer(),
            tol: default_tol(),
        }
    }

    fn validate(&self) -> Result<()> {
        check_lambda(self.lambda)?;
        if !(self.tol > 0.0) {
            return Err(Error::domain(format!(
                "tolerance must be positive, got {}",
                self.tol
            )));
        }
        if self.max_outer_iterations == 0 {
            return Err(Error::domain("need at least one outer iteration"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RmdResult {
    pub theta_hat: Vector,
    pub status: RmdStatus,
    pub iterations: usize,
    /// `max(||g_hat(theta_hat)||_inf - lambda, 0)`.
    pub slack: f64,
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda >= 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!(
            "lambda must be finite and nonnegative, got {lambda}"
        )))
    }
}

/// Solves the LP `min sum(theta+ + theta-)` s.t. `-lambda <= G (theta+ - theta-) + g0 <= lambda`.
/// Returns `None` when infeasible.
fn l1_min_box(g: &Matrix, g0: &Vector, lambda: f64) -> Result<Option<Vector>> {
    let (m, p) = g.shape();
    let a = Matrix::from_fn(2 * m, 2 * p, |r, c| {
        let v = g[(r % m, c % p)];
        if c < p {
            v
        } else {
            -v
        }
    });
    let mut rhs = Vec::with_capacity(2 * m);
    let mut senses = Vec::with_capacity(2 * m);
    for k in 0..m {
        rhs.push(lambda - g0[k]);
        senses.push(Sense::Le);
    }
    for k in 0..m {
        rhs.push(-lambda - g0[k]);
        senses.push(Sense::Ge);
    }
    let lp = LinearProgram::from_parts(vec![1.0; 2 * p], a, rhs, senses);
    let sol = solve_lp(&lp)?;
    match sol.status {
        LpStatus::Optimal => Ok(Some(Vector::from_fn(p, |j, _| sol.x[j] - sol.x[p + j]))),
        LpStatus::Infeasible => Ok(None),
        LpStatus::Unbounded => Err(Error::Singular("l1 objective reported unbounded".into())),
    }
}

/// Exact RMD for a linear score.
pub fn rmd_linear(score: &LinearScore, lambda: f64) -> Result<RmdResult> {
    check_lambda(lambda)?;
    let p = score.g_hat.ncols();
    Ok(match l1_min_box(&score.g_hat, &score.g0_hat, lambda)? {
        Some(theta) => {
            let slack = (linf(score.eval(&theta).as_slice()) - lambda).max(0.0);
            RmdResult {
                theta_hat: theta,
                status: RmdStatus::Optimal,
                iterations: 1,
                slack,
            }
        }
        None => RmdResult {
            theta_hat: Vector::zeros(p),
            status: RmdStatus::Infeasible,
            iterations: 1,
            slack: f64::INFINITY,
        },
    })
}

fn scale_of(m: &Matrix) -> f64 {
    1.0 + m.iter().fold(0.0_f64, |a, v| a.max(v.abs()))
}

/// RMD for a general score by repeated linearization at the current iterate.
///
/// Stops when consecutive iterates differ by less than `cfg.tol` in sup norm
/// and the true moments satisfy the constraint to within `CERTIFICATE_TOL`,
/// or as soon as the linearization reproduces the score exactly (then the next
/// LP would be identical).
pub fn rmd_nonlinear(
    score: &dyn ScoreModel,
    cfg: &RmdConfig,
    theta_init: &Vector,
) -> Result<RmdResult> {
    cfg.validate()?;
    if theta_init.len() != score.p() {
        return Err(Error::dim(format!(
            "theta_init has length {}, expected {}",
            theta_init.len(),
            score.p()
        )));
    }
    check_finite(theta_init.as_slice(), "theta_init")?;
    let lambda = cfg.lambda;
    let mut theta = theta_init.clone();
    let mut g_at = score.mean_score(&theta)?;
    let mut jac = score.jacobian(&theta)?;
    for it in 1..=cfg.max_outer_iterations {
        let offset = &g_at - &jac * &theta;
        let Some(next) = l1_min_box(&jac, &offset, lambda)? else {
            let slack = (linf(g_at.as_slice()) - lambda).max(0.0);
            return Ok(RmdResult {
                theta_hat: theta,
                status: RmdStatus::Infeasible,
                iterations: it,
                slack,
            });
        };
        let step = linf((&next - &theta).as_slice());
        let predicted = &jac * &next + &offset;
        let g_next = score.mean_score(&next)?;
        let jac_next = score.jacobian(&next)?;
        let slack = (linf(g_next.as_slice()) - lambda).max(0.0);
        let scale = scale_of(&jac) * (1.0 + linf(next.as_slice()));
        let exact_model = linf((&g_next - &predicted).as_slice()) <= LINEAR_MODEL_TOL * scale
            && (&jac_next - &jac)
                .iter()
                .all(|d| d.abs() <= LINEAR_MODEL_TOL * scale_of(&jac));
        theta = next;
        g_at = g_next;
        jac = jac_next;
        if (exact_model || step < cfg.tol) && slack <= CERTIFICATE_TOL {
            return Ok(RmdResult {
                theta_hat: theta,
                status: RmdStatus::Optimal,
                iterations: it,
                slack,
            });
        }
    }
    let slack = (linf(g_at.as_slice()) - lambda).max(0.0);
    Ok(RmdResult {
        theta_hat: theta,
        status: RmdStatus::MaxIterations,
        iterations: cfg.max_outer_iterations,
        slack,
    })
}

fn check_rows(rows: usize, what: &str, n: usize) -> Result<()> {
    if rows != n {
        return Err(Error::dim(format!("{what} has {rows} rows, expected {n}")));
    }
    Ok(())
}

/// Linear IV moments `g(X_i, theta) = (y_i - W_i' theta) Z_i`.
#[derive(Debug, Clone)]
pub struct IvScore {
    pub z: Matrix,
    pub w: Matrix,
    pub y: Vector,
}

impl IvScore {
    pub fn new(z: Matrix, w: Matrix, y: Vector) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(Error::dim("no observations"));
        }
        check_rows(z.nrows(), "Z", n)?;
        check_rows(w.nrows(), "W", n)?;
        check_finite(z.as_slice(), "Z")?;
        check_finite(w.as_slice(), "W")?;
        check_finite(y.as_slice(), "y")?;
        Ok(Self { z, w, y })
    }

    /// `G_hat = -E_n[Z W']`, `g0_hat = E_n[Y Z]`.
    pub fn linear(&self) -> LinearScore {
        let n = self.y.len() as f64;
        LinearScore {
            g_hat: -self.z.tr_mul(&self.w) / n,
            g0_hat: self.z.tr_mul(&self.y) / n,
        }
    }
}

impl ScoreModel for IvScore {
    fn n(&self) -> usize {
        self.y.len()
    }

    fn m(&self) -> usize {
        self.z.ncols()
    }

    fn p(&self) -> usize {
        self.w.ncols()
    }

    fn scores(&self, theta: &Vector) -> Result<Matrix> {
        if theta.len() != self.p() {
            return Err(Error::dim(
                "theta length differs from the number of regressors",
            ));
        }
        let resid = &self.y - &self.w * theta;
        let mut g = self.z.clone();
        for (i, mut row) in g.row_iter_mut().enumerate() {
            row *= resid[i];
        }
        Ok(g)
    }

    fn jacobian(&self, _theta: &Vector) -> Result<Matrix> {
        Ok(self.linear().g_hat)
    }

    fn mean_score(&self, theta: &Vector) -> Result<Vector> {
        if theta.len() != self.p() {
            return Err(Error::dim(
                "theta length differs from the number of regressors",
            ));
        }
        Ok(self.linear().eval(theta))
    }

    fn linear_form(&self) -> Option<LinearScore> {
        Some(self.linear())
    }
}

fn logistic(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Logistic-regression scores `g(X_i, theta) = W_i (y_i - Lambda(W_i' theta))`.
#[derive(Debug, Clone)]
pub struct LogisticScore {
    pub w: Matrix,
    pub y: Vector,
}

impl LogisticScore {
    pub fn new(w: Matrix, y: Vector) -> Result<Self> {
        if y.is_empty() {
            return Err(Error::dim("no observations"));
        }
        check_rows(w.nrows(), "W", y.len())?;
        check_finite(w.as_slice(), "W")?;
        if y.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::domain("logistic outcomes must be 0 or 1"));
        }
        Ok(Self { w, y })
    }

    fn index(&self, theta: &Vector) -> Result<Vector> {
        if theta.len() != self.w.ncols() {
            return Err(Error::dim(
                "theta length differs from the number of covariates",
            ));
        }
        Ok(&self.w * theta)
    }
}

impl ScoreModel for LogisticScore {
    fn n(&self) -> usize {
        self.y.len()
    }

    fn m(&self) -> usize {
        self.w.ncols()
    }

    fn p(&self) -> usize {
        self.w.ncols()
    }

    fn scores(&self, theta: &Vector) -> Result<Matrix> {
        let idx = self.index(theta)?;
        let mut g = self.w.clone();
        for (i, mut row) in g.row_iter_mut().enumerate() {
            row *= self.y[i] - logistic(idx[i]);
        }
        Ok(g)
    }

    /// `-E_n[Lambda'(W' theta) W W']`.
    fn jacobian(&self, theta: &Vector) -> Result<Matrix> {
        let idx = self.index(theta)?;
        let n = self.y.len();
        let mut weighted = self.w.clone();
        for (i, mut row) in weighted.row_iter_mut().enumerate() {
            let l = logistic(idx[i]);
            row *= l * (1.0 - l);
        }
        Ok(-weighted.tr_mul(&self.w) / n as f64)
    }
}

/// Dantzig selector: RMD with `G_hat = -E_n[W W']`, `g0_hat = E_n[Y W]`.
pub fn dantzig_regression(w: &Matrix, y: &Vector, lambda: f64) -> Result<RmdResult> {
    iv_rmd(w, w, y, lambda)
}

/// Linear IV RMD with `G_hat = -E_n[Z W']`, `g0_hat = E_n[Y Z]`.
pub fn iv_rmd(z: &Matrix, w: &Matrix, y: &Vector, lambda: f64) -> Result<RmdResult> {
    let score = IvScore::new(z.clone(), w.clone(), y.clone())?;
    rmd_linear(&score.linear(), lambda)
}

/// Largest number of (column subset, row subset) pairs examined.
pub const SPARSE_SV_BUDGET: f64 = 1e6;

fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Visits every `k`-subset of `0..n` in lexicographic order.
fn for_each_subset(n: usize, k: usize, mut visit: impl FnMut(&[usize])) {
    if k > n {
        return;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        visit(&idx);
        let mut i = k;
        while i > 0 && idx[i - 1] == n - k + i - 1 {
            i -= 1;
        }
        if i == 0 {
            return;
        }
        idx[i - 1] += 1;
        for t in i..k {
            idx[t] = idx[t - 1] + 1;
        }
    }
}

/// `(sigma_min(l), sigma_max(l))` over `l`-column and `l`-row submatrices of `G`.
///
/// Both extrema are attained at the largest admissible subset sizes, because
/// adding columns cannot raise the smallest singular value and adding rows
/// cannot lower it, while both additions can only raise the largest one.
/// Submatrices with fewer rows than columns have smallest singular value 0.
pub fn sparse_singular_values(g: &Matrix, l: usize) -> Result<(f64, f64)> {
    let (m, p) = g.shape();
    if l == 0 || m == 0 || p == 0 {
        return Err(Error::domain(
            "sparse singular values need l >= 1 and a nonempty matrix",
        ));
    }
    let h = l.min(p);
    let r = l.min(m);
    let pairs = binomial(p, h) * binomial(m, r);
    if pairs > SPARSE_SV_BUDGET {
        return Err(Error::Resource(format!(
            "{pairs:.0} submatrices exceed the brute-force budget of {SPARSE_SV_BUDGET:.0}"
        )));
    }
    let mut sigma_min = f64::INFINITY;
    let mut sigma_max = 0.0_f64;
    for_each_subset(p, h, |cols| {
        let mut best_min = 0.0_f64;
        for_each_subset(m, r, |rows| {
            let sub = Matrix::from_fn(r, h, |a, b| g[(rows[a], cols[b])]);
            let sv = sub.singular_values();
            let hi = sv.max();
            let lo = if r < h { 0.0 } else { sv.min() };
            best_min = best_min.max(lo);
            sigma_max = sigma_max.max(hi);
        });
        sigma_min = sigma_min.min(best_min);
    });
    Ok((sigma_min, sigma_max))
}

/// `s^{-1/q} mu_n`.
pub fn identifiability_lower_bound(s: usize, mu_n: f64, q: f64) -> Result<f64> {
    if s == 0 {
        return Err(Error::domain("s must be at least 1"));
    }
    if !(mu_n > 0.0 && mu_n < 1.0) {
        return Err(Error::domain(format!("mu_n must lie in (0,1), got {mu_n}")));
    }
    if q != 1.0 && q != 2.0 {
        return Err(Error::domain(format!("q must be 1 or 2, got {q}")));
    }
    Ok((s as f64).powf(-1.0 / q) * mu_n)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentifiabilityReport {
    /// `ceil(s / mu_n)`.
    pub l: usize,
    pub sigma_min_l: f64,
    pub sigma_max_l: f64,
    pub mu_n: f64,
    /// `sigma_min(l)^2 / sigma_max(l)^2`, compared against `c mu_n` for an unspecified `c`.
    pub sv_ratio: f64,
    pub bound_q1: f64,
    pub bound_q2: f64,
    /// Largest row l1 norm of `G`.
    pub l_n: f64,
    /// `||theta_0||_1` when the truth is supplied.
    pub k_l1: Option<f64>,
}

pub fn identifiability_report(
    g: &Matrix,
    s: usize,
    mu_n: f64,
    theta0: Option<&Vector>,
) -> Result<IdentifiabilityReport> {
    let bound_q1 = identifiability_lower_bound(s, mu_n, 1.0)?;
    let bound_q2 = identifiability_lower_bound(s, mu_n, 2.0)?;
    let l = (s as f64 / mu_n).ceil() as usize;
    let (sigma_min_l, sigma_max_l) = sparse_singular_values(g, l)?;
    let l_n = g
        .row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    Ok(IdentifiabilityReport {
        l,
        sigma_min_l,
        sigma_max_l,
        mu_n,
        sv_ratio: if sigma_max_l > 0.0 {
            (sigma_min_l / sigma_max_l).powi(2)
        } else {
            0.0
        },
        bound_q1,
        bound_q2,
        l_n,
        k_l1: theta0.map(|t| l1(t.as_slice())),
    })
}
