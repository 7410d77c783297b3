//! Double/debiased regularized GMM.
//!
//! Starting from an RMD estimate `theta_hat`, the moment-selection matrix
//! `gamma` (p x m, target `G' Omega^{-1}`) and the normalization `mu`
//! (p x p, target `(gamma G)^{-1}`) are estimated row by row through l1
//! programs. The update `theta_check = theta_hat - mu gamma g_hat(theta_hat)`
//! is approximately linear with influence scores `mu gamma g(X_i, theta_hat)`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{check_finite, column_means, l1, mat_linf, upper_quantile, Matrix, Vector};
use crate::lp::{solve_lp, LinearProgram, LpStatus, Sense};
use crate::mam::MamProblem;
use crate::rmd::{rmd_linear, rmd_nonlinear, RmdConfig, RmdResult, RmdStatus, ScoreModel};

/// Plug-in Jacobian (`m x p`) and moment covariance (`m x m`) at `theta_hat`.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmPlugins {
    pub g_hat: Matrix,
    pub omega_hat: Matrix,
}

impl GmmPlugins {
    pub fn new(g_hat: Matrix, omega_hat: Matrix) -> Result<Self> {
        let m = g_hat.nrows();
        if omega_hat.shape() != (m, m) {
            return Err(Error::dim(format!(
                "Omega_hat is {:?}, expected {m}x{m}",
                omega_hat.shape()
            )));
        }
        check_finite(g_hat.as_slice(), "G_hat")?;
        check_finite(omega_hat.as_slice(), "Omega_hat")?;
        let omega_hat = (&omega_hat + omega_hat.transpose()) * 0.5;
        Ok(Self { g_hat, omega_hat })
    }

    pub fn m(&self) -> usize {
        self.g_hat.nrows()
    }

    pub fn p(&self) -> usize {
        self.g_hat.ncols()
    }
}

/// `E_n[g g']`, symmetrized.
pub fn second_moment(scores: &Matrix) -> Matrix {
    let n = scores.nrows() as f64;
    let omega = scores.tr_mul(scores) / n;
    (&omega + omega.transpose()) * 0.5
}

/// `G_hat` from the score's Jacobian and `Omega_hat = E_n[g g']`, both at `theta_hat`.
pub fn plugin_g_omega(score: &dyn ScoreModel, theta_hat: &Vector) -> Result<GmmPlugins> {
    let g = score.scores(theta_hat)?;
    GmmPlugins::new(score.jacobian(theta_hat)?, second_moment(&g))
}

/// Penalties for the rows of `gamma`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum GammaPenalty {
    /// `||gamma_j Omega - G'_j||_inf <= lambda_j`.
    Fixed { lambda: Vec<f64> },
    /// `||gamma_j Omega - G'_j||_inf <= ||gamma_j||_1 l_omega / sqrt(n) + l_g / sqrt(n)`.
    Adaptive { l_omega: f64, l_g: f64, n: usize },
}

/// Penalties for the rows of `mu`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum MuPenalty {
    /// `||mu_j gamma G - e_j'||_inf <= lambda_j`.
    Fixed { lambda: Vec<f64> },
    /// `||mu_j gamma G - e_j'||_inf <= ||mu_j||_1 lambda_mu` with
    /// `lambda_mu = 2 g1 l_g / sqrt(n) + g1^2 l_omega / sqrt(n) + g1 max_j lambda_j^gamma`,
    /// `g1 = max_j ||gamma_j||_1`.
    Adaptive { l_omega: f64, l_g: f64, n: usize },
}

/// `lambda_bar = c n^{-1/2} Phi^{-1}(1 - 1/(p m n))`.
pub fn default_penalty_level(n: usize, p: usize, m: usize, c: f64) -> Result<f64> {
    let pmn = (p * m * n) as f64;
    if !(pmn > 1.0) {
        return Err(Error::domain("p m n must exceed 1"));
    }
    Ok(c * upper_quantile(1.0 / pmn)? / (n as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RowEstimate {
    /// One row per parameter.
    pub rows: Matrix,
    /// Effective bound on each row's sup-norm residual.
    pub penalties: Vec<f64>,
    pub status: Vec<LpStatus>,
    /// Rows replaced by zero after an infeasible program.
    pub fallback: Vec<usize>,
}

pub type GammaEstimate = RowEstimate;
pub type MuEstimate = RowEstimate;

/// Solves `min ||x||_1` s.t. `||x' A - b'||_inf <= slope ||x||_1 + level` for
/// `x` of length `A.nrows()`. With `slope > 0` the l1 norm is carried by an
/// auxiliary variable `t >= ||x||_1`, and the returned penalty is `slope t + level`.
fn l1_row(a: &Matrix, b: &[f64], slope: f64, level: f64) -> Result<(Vec<f64>, f64, LpStatus)> {
    let (k, q) = a.shape();
    let adaptive = slope > 0.0;
    let nv = 2 * k + usize::from(adaptive);
    let rows = 2 * q + usize::from(adaptive);
    let mut cons = Matrix::zeros(rows, nv);
    let mut rhs = Vec::with_capacity(rows);
    let mut senses = Vec::with_capacity(rows);
    for c in 0..q {
        for r in 0..k {
            cons[(c, r)] = a[(r, c)];
            cons[(c, k + r)] = -a[(r, c)];
            cons[(q + c, r)] = a[(r, c)];
            cons[(q + c, k + r)] = -a[(r, c)];
        }
        if adaptive {
            cons[(c, 2 * k)] = -slope;
            cons[(q + c, 2 * k)] = slope;
        }
        rhs.push(b[c] + level);
        senses.push(Sense::Le);
    }
    for c in 0..q {
        rhs.push(b[c] - level);
        senses.push(Sense::Ge);
    }
    let objective = if adaptive {
        for r in 0..2 * k {
            cons[(2 * q, r)] = 1.0;
        }
        cons[(2 * q, 2 * k)] = -1.0;
        rhs.push(0.0);
        senses.push(Sense::Le);
        let mut c = vec![0.0; nv];
        c[2 * k] = 1.0;
        c
    } else {
        vec![1.0; nv]
    };
    let sol = solve_lp(&LinearProgram::from_parts(objective, cons, rhs, senses))?;
    match sol.status {
        LpStatus::Optimal => {
            let x: Vec<f64> = (0..k).map(|r| sol.x[r] - sol.x[k + r]).collect();
            let penalty = if adaptive {
                slope * sol.x[2 * k] + level
            } else {
                level
            };
            Ok((x, penalty, LpStatus::Optimal))
        }
        status => Ok((vec![0.0; k], f64::NAN, status)),
    }
}

fn check_penalties(lambda: &[f64], p: usize) -> Result<()> {
    if lambda.len() != p {
        return Err(Error::dim(format!(
            "{} penalties for {p} rows",
            lambda.len()
        )));
    }
    if lambda.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
        return Err(Error::domain("penalties must be finite and nonnegative"));
    }
    Ok(())
}

fn solve_rows(
    a: &Matrix,
    p: usize,
    target: impl Fn(usize) -> Vec<f64>,
    bound: impl Fn(usize) -> (f64, f64),
    label: &str,
) -> Result<RowEstimate> {
    let mut rows = Matrix::zeros(p, a.nrows());
    let mut penalties = Vec::with_capacity(p);
    let mut status = Vec::with_capacity(p);
    let mut fallback = Vec::new();
    for j in 0..p {
        let (slope, level) = bound(j);
        let (x, pen, st) = l1_row(a, &target(j), slope, level)?;
        if st != LpStatus::Optimal {
            log::warn!("{label} row {j}: program {st:?}, using the zero row");
            fallback.push(j);
        }
        rows.row_mut(j).copy_from_slice(&x);
        penalties.push(pen);
        status.push(st);
    }
    Ok(RowEstimate {
        rows,
        penalties,
        status,
        fallback,
    })
}

/// Row-wise `min ||gamma_j||_1` with `||gamma_j Omega - G'_j||_inf` bounded per `penalty`.
pub fn estimate_gamma(plugins: &GmmPlugins, penalty: &GammaPenalty) -> Result<GammaEstimate> {
    estimate_gamma_with(plugins, &plugins.omega_hat, penalty)
}

/// As [`estimate_gamma`] but against a caller-supplied `omega` (for example
/// `E_n[Z Z']` under homoskedasticity, where the noise variance cancels).
pub fn estimate_gamma_with(
    plugins: &GmmPlugins,
    omega: &Matrix,
    penalty: &GammaPenalty,
) -> Result<GammaEstimate> {
    let (m, p) = (plugins.m(), plugins.p());
    if omega.shape() != (m, m) {
        return Err(Error::dim(format!(
            "omega is {:?}, expected {m}x{m}",
            omega.shape()
        )));
    }
    let g = &plugins.g_hat;
    let target = |j: usize| g.column(j).iter().copied().collect::<Vec<f64>>();
    match penalty {
        GammaPenalty::Fixed { lambda } => {
            check_penalties(lambda, p)?;
            solve_rows(omega, p, target, |j| (0.0, lambda[j]), "gamma")
        }
        GammaPenalty::Adaptive { l_omega, l_g, n } => {
            let root_n = (*n as f64).sqrt();
            let (slope, level) = (l_omega / root_n, l_g / root_n);
            if !(slope >= 0.0 && level >= 0.0 && slope.is_finite() && level.is_finite()) {
                return Err(Error::domain(
                    "adaptive scales must be finite and nonnegative",
                ));
            }
            solve_rows(omega, p, target, |_| (slope, level), "gamma")
        }
    }
}

/// Row-wise `min ||mu_j||_1` with `||mu_j gamma G - e_j'||_inf` bounded per `penalty`.
pub fn estimate_mu(
    gamma: &GammaEstimate,
    plugins: &GmmPlugins,
    penalty: &MuPenalty,
) -> Result<MuEstimate> {
    let p = plugins.p();
    if gamma.rows.shape() != (p, plugins.m()) {
        return Err(Error::dim("gamma shape does not match the plug-ins"));
    }
    let a = &gamma.rows * &plugins.g_hat;
    let target = |j: usize| {
        let mut e = vec![0.0; p];
        e[j] = 1.0;
        e
    };
    match penalty {
        MuPenalty::Fixed { lambda } => {
            check_penalties(lambda, p)?;
            solve_rows(&a, p, target, |j| (0.0, lambda[j]), "mu")
        }
        MuPenalty::Adaptive { l_omega, l_g, n } => {
            let root_n = (*n as f64).sqrt();
            let g1 = gamma
                .rows
                .row_iter()
                .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
                .fold(0.0, f64::max);
            let lg_max = gamma
                .penalties
                .iter()
                .filter(|v| v.is_finite())
                .fold(0.0_f64, |a, &b| a.max(b));
            let slope = 2.0 * g1 * l_g / root_n + g1 * g1 * l_omega / root_n + g1 * lg_max;
            if !(slope.is_finite() && slope >= 0.0) {
                return Err(Error::domain("adaptive mu penalty is not finite"));
            }
            // A zero slope makes the constraint an exact solve.
            solve_rows(&a, p, target, |_| (slope, 0.0), "mu")
        }
    }
}

/// `theta_hat - mu gamma g_hat`.
pub fn debias(
    theta_hat: &Vector,
    mu: &MuEstimate,
    gamma: &GammaEstimate,
    g_hat_at_theta: &Vector,
) -> Result<Vector> {
    let p = theta_hat.len();
    if mu.rows.shape() != (p, p)
        || gamma.rows.nrows() != p
        || gamma.rows.ncols() != g_hat_at_theta.len()
    {
        return Err(Error::dim("debias: inconsistent shapes"));
    }
    Ok(theta_hat - &mu.rows * (&gamma.rows * g_hat_at_theta))
}

/// `(G' Omega^{-1} G)^{-1}`, each inverse taken after adding `1e-10 tr/dim` to the diagonal.
pub fn asymptotic_variance(g: &Matrix, omega: &Matrix) -> Result<Matrix> {
    let m = g.nrows();
    if omega.shape() != (m, m) {
        return Err(Error::dim(format!(
            "Omega is {:?}, expected {m}x{m}",
            omega.shape()
        )));
    }
    let ridge = |a: &Matrix| {
        let k = a.nrows();
        let eps = 1e-10 * a.trace() / k as f64;
        a + Matrix::identity(k, k) * eps.max(0.0)
    };
    let omega_chol = ridge(omega)
        .cholesky()
        .ok_or_else(|| Error::Singular("Omega is not positive definite after ridge".into()))?;
    let info = g.tr_mul(&omega_chol.solve(g));
    let info = (&info + info.transpose()) * 0.5;
    let chol = ridge(&info).cholesky().ok_or_else(|| {
        Error::Singular("G' Omega^{-1} G is not positive definite after ridge".into())
    })?;
    Ok(chol.inverse())
}

/// Oracle-side inputs for the remainder diagnostics.
#[derive(Debug, Clone, Copy)]
pub struct RemainderInputs<'a> {
    pub mu: &'a Matrix,
    pub gamma: &'a Matrix,
    pub g_hat: &'a Matrix,
    pub g_tilde: &'a Matrix,
    pub theta_hat: &'a Vector,
    pub theta0: &'a Vector,
    pub g_hat_at_theta0: &'a Vector,
    pub gamma0: &'a Matrix,
    pub mu0: &'a Matrix,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RemainderReport {
    pub r1: f64,
    pub r2: f64,
    pub r3: f64,
}

fn max_row_l1(m: &Matrix) -> f64 {
    m.row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Bounds on the three remainder terms of `sqrt(n)(theta_check - theta_0)`:
///
/// * `r1 = sqrt(n) ||I - mu gamma G_hat||_inf ||theta_hat - theta_0||_1`
/// * `r2 = sqrt(n) max||mu_j||_1 max||gamma_j||_1 ||G_hat - G_tilde||_inf ||theta_hat - theta_0||_1`
/// * `r3 = max||mu_j||_1 max||gamma_j - gamma0_j||_1 ||sqrt(n) g(theta_0)||_inf
///   + max||mu_j - mu0_j||_1 max||gamma0_j||_1 ||sqrt(n) g(theta_0)||_inf`
pub fn remainder_bounds(x: &RemainderInputs<'_>) -> Result<RemainderReport> {
    let p = x.theta_hat.len();
    let m = x.g_hat.nrows();
    let shapes_ok = x.mu.shape() == (p, p)
        && x.gamma.shape() == (p, m)
        && x.g_hat.shape() == (m, p)
        && x.g_tilde.shape() == (m, p)
        && x.theta0.len() == p
        && x.g_hat_at_theta0.len() == m
        && x.gamma0.shape() == (p, m)
        && x.mu0.shape() == (p, p);
    if !shapes_ok {
        return Err(Error::dim("remainder_bounds: inconsistent shapes"));
    }
    let root_n = (x.n as f64).sqrt();
    let err_l1 = l1((x.theta_hat - x.theta0).as_slice());
    let mgg = x.mu * (x.gamma * x.g_hat);
    let r1 = root_n * mat_linf(&(Matrix::identity(p, p) - mgg)) * err_l1;
    let r2 =
        root_n * max_row_l1(x.mu) * max_row_l1(x.gamma) * mat_linf(&(x.g_hat - x.g_tilde)) * err_l1;
    let score_sup = root_n * x.g_hat_at_theta0.amax();
    let r3 = max_row_l1(x.mu) * max_row_l1(&(x.gamma - x.gamma0)) * score_sup
        + max_row_l1(&(x.mu - x.mu0)) * max_row_l1(x.gamma0) * score_sup;
    Ok(RemainderReport { r1, r2, r3 })
}

/// Statistic `sqrt(n) (xi - xi G mu gamma) g_hat` and its plug-in covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthogonalScoreStat {
    pub xi: Matrix,
    pub statistic: Vector,
    pub v_m_hat: Matrix,
}

pub fn orthogonal_score(
    xi: &Matrix,
    plugins: &GmmPlugins,
    mu: &MuEstimate,
    gamma: &GammaEstimate,
    g_hat_alpha_theta: &Vector,
    n: usize,
) -> Result<OrthogonalScoreStat> {
    let (m, p) = (plugins.m(), plugins.p());
    if xi.nrows() == 0 || xi.ncols() != m || g_hat_alpha_theta.len() != m {
        return Err(Error::dim(
            "orthogonal_score: xi must be p' x m with p' >= 1",
        ));
    }
    if mu.rows.shape() != (p, p) || gamma.rows.shape() != (p, m) {
        return Err(Error::dim(
            "orthogonal_score: mu or gamma has the wrong shape",
        ));
    }
    let a = xi - xi * (&plugins.g_hat * (&mu.rows * &gamma.rows));
    let statistic = (&a * g_hat_alpha_theta) * (n as f64).sqrt();
    let v = &a * &plugins.omega_hat * a.transpose();
    Ok(OrthogonalScoreStat {
        xi: xi.clone(),
        statistic,
        v_m_hat: (&v + v.transpose()) * 0.5,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DrgmmConfig {
    pub rmd: RmdConfig,
    pub gamma_penalty: GammaPenalty,
    pub mu_penalty: MuPenalty,
    /// Replaces `Omega_hat` in the gamma programs only.
    pub omega_for_gamma: Option<Matrix>,
    /// Starting point for nonlinear scores; zero when absent.
    pub theta_init: Option<Vector>,
}

#[derive(Debug, Clone)]
pub struct DrgmmResult {
    pub rmd: RmdResult,
    /// RMD estimate actually used (zero when the RMD program was infeasible).
    pub theta_hat: Vector,
    pub theta_check: Vector,
    pub plugins: GmmPlugins,
    pub gamma: GammaEstimate,
    pub mu: MuEstimate,
    /// `n x p`, row `i` is `mu gamma g(X_i, theta_hat)`.
    pub scores: Matrix,
    pub v_hat: Matrix,
    pub warnings: Vec<String>,
}

#[derive(Serialize)]
struct DrgmmExport<'a> {
    rmd_status: RmdStatus,
    rmd_iterations: usize,
    rmd_slack: f64,
    theta_hat: Vec<f64>,
    theta_check: Vec<f64>,
    v_hat_diag: Vec<f64>,
    gamma_penalties: &'a [f64],
    gamma_status: &'a [LpStatus],
    mu_penalties: &'a [f64],
    mu_status: &'a [LpStatus],
    warnings: &'a [String],
}

impl DrgmmResult {
    /// `(theta_check, scores)` as a many-approximate-means problem.
    pub fn to_mam(&self) -> Result<MamProblem> {
        MamProblem::new(self.theta_check.clone(), self.scores.clone())
    }

    pub fn write_json<W: Write>(&self, out: W) -> Result<()> {
        let finite = |v: &[f64]| {
            v.iter()
                .map(|x| if x.is_finite() { *x } else { -1.0 })
                .collect::<Vec<_>>()
        };
        let export = DrgmmExport {
            rmd_status: self.rmd.status,
            rmd_iterations: self.rmd.iterations,
            rmd_slack: if self.rmd.slack.is_finite() {
                self.rmd.slack
            } else {
                -1.0
            },
            theta_hat: self.theta_hat.iter().copied().collect(),
            theta_check: self.theta_check.iter().copied().collect(),
            v_hat_diag: self.v_hat.diagonal().iter().copied().collect(),
            gamma_penalties: &finite(&self.gamma.penalties),
            gamma_status: &self.gamma.status,
            mu_penalties: &finite(&self.mu.penalties),
            mu_status: &self.mu.status,
            warnings: &self.warnings,
        };
        serde_json::to_writer_pretty(out, &export)?;
        Ok(())
    }

    /// Scores as CSV with header `z1..zp`.
    pub fn write_scores_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record((1..=self.scores.ncols()).map(|j| format!("z{j}")))?;
        for row in self.scores.row_iter() {
            w.write_record(row.iter().map(|v| format!("{v:?}")))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// RMD, plug-ins, gamma, mu, debiasing, scores and variance in sequence.
pub fn drgmm_pipeline(score: &dyn ScoreModel, cfg: &DrgmmConfig) -> Result<DrgmmResult> {
    let p = score.p();
    let mut warnings = Vec::new();
    let rmd = match score.linear_form() {
        Some(lin) => rmd_linear(&lin, cfg.rmd.lambda),
        None => {
            let init = cfg.theta_init.clone().unwrap_or_else(|| Vector::zeros(p));
            rmd_nonlinear(score, &cfg.rmd, &init)
        }
    }
    .map_err(|e| e.at_stage("rmd"))?;
    let theta_hat = match rmd.status {
        RmdStatus::Infeasible => {
            warnings.push("rmd program infeasible; using theta_hat = 0".to_string());
            Vector::zeros(p)
        }
        RmdStatus::MaxIterations => {
            warnings.push(format!("rmd stopped after {} iterations", rmd.iterations));
            rmd.theta_hat.clone()
        }
        RmdStatus::Optimal => rmd.theta_hat.clone(),
    };
    let g_obs = score
        .scores(&theta_hat)
        .map_err(|e| e.at_stage("plug-ins"))?;
    let plugins = GmmPlugins::new(
        score
            .jacobian(&theta_hat)
            .map_err(|e| e.at_stage("plug-ins"))?,
        second_moment(&g_obs),
    )
    .map_err(|e| e.at_stage("plug-ins"))?;
    let omega = cfg.omega_for_gamma.as_ref().unwrap_or(&plugins.omega_hat);
    let gamma = estimate_gamma_with(&plugins, omega, &cfg.gamma_penalty)
        .map_err(|e| e.at_stage("gamma"))?;
    let mu = estimate_mu(&gamma, &plugins, &cfg.mu_penalty).map_err(|e| e.at_stage("mu"))?;
    for (name, est) in [("gamma", &gamma), ("mu", &mu)] {
        if !est.fallback.is_empty() {
            warnings.push(format!(
                "{name} rows {:?} infeasible; zero rows used",
                est.fallback
            ));
        }
    }
    let projection = &mu.rows * &gamma.rows;
    let scores = &g_obs * projection.transpose();
    let g_bar = column_means(&g_obs);
    let theta_check = debias(&theta_hat, &mu, &gamma, &g_bar).map_err(|e| e.at_stage("debias"))?;
    let v_hat = asymptotic_variance(&plugins.g_hat, &plugins.omega_hat)
        .map_err(|e| e.at_stage("variance"))?;
    Ok(DrgmmResult {
        rmd,
        theta_hat,
        theta_check,
        plugins,
        gamma,
        mu,
        scores,
        v_hat,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Rng;
    use crate::rmd::IvScore;
    use proptest::prelude::{prop, prop_assert, proptest, ProptestConfig};

    fn plugins(g: Matrix, omega: Matrix) -> GmmPlugins {
        GmmPlugins::new(g, omega).unwrap()
    }

    fn fixed(p: usize, v: f64) -> GammaPenalty {
        GammaPenalty::Fixed { lambda: vec![v; p] }
    }

    fn mu_fixed(p: usize, v: f64) -> MuPenalty {
        MuPenalty::Fixed { lambda: vec![v; p] }
    }

    #[test]
    fn plugin_omega_examples() {
        let g = Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(second_moment(&g), Matrix::identity(2, 2) * 0.5);
        let e1 = Matrix::from_fn(5, 3, |_, j| if j == 0 { 1.0 } else { 0.0 });
        let mut expect = Matrix::zeros(3, 3);
        expect[(0, 0)] = 1.0;
        assert_eq!(second_moment(&e1), expect);
    }

    #[test]
    fn linear_plugins_do_not_depend_on_theta() {
        let mut rng = Rng::new(1);
        let z = Matrix::from_fn(20, 3, |_, _| rng.normal());
        let w = Matrix::from_fn(20, 2, |_, _| rng.normal());
        let y = Vector::from_fn(20, |_, _| rng.normal());
        let s = IvScore::new(z, w, y).unwrap();
        let a = plugin_g_omega(&s, &Vector::zeros(2)).unwrap();
        let b = plugin_g_omega(&s, &Vector::from_row_slice(&[1.0, -3.0])).unwrap();
        assert_eq!(a.g_hat, b.g_hat);
    }

    #[test]
    fn gamma_exact_solves() {
        let g = Matrix::identity(2, 2);
        let est =
            estimate_gamma(&plugins(g.clone(), Matrix::identity(2, 2)), &fixed(2, 0.0)).unwrap();
        assert!((est.rows.clone() - Matrix::identity(2, 2)).amax() < 1e-12);
        let est = estimate_gamma(
            &plugins(g.clone(), Matrix::identity(2, 2) * 2.0),
            &fixed(2, 0.0),
        )
        .unwrap();
        assert!((est.rows.clone() - Matrix::identity(2, 2) * 0.5).amax() < 1e-12);
        let omega = Matrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let est = estimate_gamma(&plugins(g, omega), &fixed(2, 0.0)).unwrap();
        let oracle = Matrix::from_row_slice(2, 2, &[4.0 / 3.0, -2.0 / 3.0, -2.0 / 3.0, 4.0 / 3.0]);
        assert!((est.rows - oracle).amax() < 1e-12);
    }

    #[test]
    fn mu_examples() {
        let id = Matrix::identity(3, 3);
        let pl = plugins(id.clone(), id.clone());
        let gamma = estimate_gamma(&pl, &fixed(3, 0.0)).unwrap();
        let mu = estimate_mu(&gamma, &pl, &mu_fixed(3, 0.0)).unwrap();
        assert!((mu.rows - id.clone()).amax() < 1e-12);

        let pl2 = plugins(id.clone() * 2.0, id.clone() * 2.0);
        let mut g2 = gamma.clone();
        g2.rows = id.clone();
        let mu = estimate_mu(&g2, &pl2, &mu_fixed(3, 0.0)).unwrap();
        assert!((mu.rows - id.clone() * 0.5).amax() < 1e-12);

        let mu = estimate_mu(&gamma, &pl, &mu_fixed(3, 1.0)).unwrap();
        assert!(mu.rows.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn infeasible_rows_fall_back_to_zero() {
        // gamma G = 0 makes mu_j gamma G - e_j = -e_j whatever mu_j is.
        let pl = plugins(Matrix::zeros(2, 2), Matrix::identity(2, 2));
        let gamma = estimate_gamma(&pl, &fixed(2, 0.0)).unwrap();
        let mu = estimate_mu(&gamma, &pl, &mu_fixed(2, 0.5)).unwrap();
        assert_eq!(mu.fallback, vec![0, 1]);
        assert!(mu.status.iter().all(|s| *s == LpStatus::Infeasible));
        assert!(mu.rows.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn adaptive_rows_meet_their_reported_penalty() {
        let mut rng = Rng::new(2);
        let (m, p) = (6, 3);
        let a = Matrix::from_fn(m, m, |_, _| rng.normal());
        let omega = &a * a.transpose() / m as f64 + Matrix::identity(m, m);
        let g = Matrix::from_fn(m, p, |_, _| rng.normal());
        let pl = plugins(g, omega);
        let gamma = estimate_gamma(
            &pl,
            &GammaPenalty::Adaptive {
                l_omega: 0.5,
                l_g: 1.0,
                n: 100,
            },
        )
        .unwrap();
        for j in 0..p {
            assert_eq!(gamma.status[j], LpStatus::Optimal);
            let resid = gamma.rows.row(j) * &pl.omega_hat - pl.g_hat.column(j).transpose();
            assert!(resid.amax() <= gamma.penalties[j] + 1e-8);
            let norm: f64 = gamma.rows.row(j).iter().map(|v| v.abs()).sum();
            assert!(gamma.penalties[j] >= norm * 0.05 + 0.1 - 1e-12);
        }
        let mu = estimate_mu(
            &gamma,
            &pl,
            &MuPenalty::Adaptive {
                l_omega: 0.5,
                l_g: 1.0,
                n: 100,
            },
        )
        .unwrap();
        let gg = &gamma.rows * &pl.g_hat;
        for j in 0..p {
            if mu.status[j] == LpStatus::Optimal {
                let mut resid = mu.rows.row(j) * &gg;
                resid[j] -= 1.0;
                assert!(resid.amax() <= mu.penalties[j] + 1e-8);
            }
        }
    }

    #[test]
    fn debias_identities() {
        let id = Matrix::identity(2, 2);
        let pl = plugins(id.clone(), id.clone());
        let gamma = estimate_gamma(&pl, &fixed(2, 0.0)).unwrap();
        let mu = estimate_mu(&gamma, &pl, &mu_fixed(2, 0.0)).unwrap();
        let theta = Vector::from_row_slice(&[0.3, -0.7]);
        assert_eq!(
            debias(&theta, &mu, &gamma, &Vector::zeros(2)).unwrap(),
            theta
        );
        let mut zero_mu = mu.clone();
        zero_mu.rows.fill(0.0);
        assert_eq!(
            debias(
                &theta,
                &zero_mu,
                &gamma,
                &Vector::from_row_slice(&[5.0, 1.0])
            )
            .unwrap(),
            theta
        );
    }

    #[test]
    fn variance_examples() {
        let id = Matrix::identity(3, 3);
        assert!((asymptotic_variance(&id, &id).unwrap() - id.clone()).amax() < 1e-8);
        assert!((asymptotic_variance(&id, &(id.clone() * 4.0)).unwrap() - id * 4.0).amax() < 1e-8);
        let g = Matrix::from_column_slice(2, 1, &[1.0, 1.0]);
        let v = asymptotic_variance(&g, &Matrix::identity(2, 2)).unwrap();
        assert!((v[(0, 0)] - 0.5).abs() < 1e-8);
        let bad = Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(
            asymptotic_variance(&g, &bad),
            Err(Error::Singular(_))
        ));
    }

    #[test]
    fn remainder_examples() {
        let p = 2;
        let m = 3;
        let mut rng = Rng::new(3);
        let g = Matrix::from_fn(m, p, |_, _| rng.normal());
        let gamma = Matrix::from_fn(p, m, |_, _| rng.normal());
        let mu = (&gamma * &g).try_inverse().unwrap();
        let theta_hat = Vector::from_row_slice(&[0.1, 0.2]);
        let theta0 = Vector::zeros(2);
        let g0 = Vector::from_row_slice(&[0.01, -0.02, 0.03]);
        let r = remainder_bounds(&RemainderInputs {
            mu: &mu,
            gamma: &gamma,
            g_hat: &g,
            g_tilde: &g,
            theta_hat: &theta_hat,
            theta0: &theta0,
            g_hat_at_theta0: &g0,
            gamma0: &gamma,
            mu0: &mu,
            n: 100,
        })
        .unwrap();
        assert!(r.r1 < 1e-12);
        assert_eq!(r.r2, 0.0);
        assert_eq!(r.r3, 0.0);
    }

    #[test]
    fn orthogonal_score_examples() {
        let mut rng = Rng::new(4);
        let (m, p) = (3, 2);
        let g = Matrix::from_fn(m, p, |_, _| rng.normal());
        let a = Matrix::from_fn(m, m, |_, _| rng.normal());
        let pl = plugins(g, &a * a.transpose());
        let gamma = estimate_gamma(&pl, &fixed(p, 0.0)).unwrap();
        let mu = estimate_mu(&gamma, &pl, &mu_fixed(p, 0.0)).unwrap();
        let xi = Matrix::from_fn(1, m, |_, k| if k == 0 { 1.0 } else { 0.0 });
        let zero = orthogonal_score(&xi, &pl, &mu, &gamma, &Vector::zeros(m), 50).unwrap();
        assert!(zero.statistic.iter().all(|&v| v == 0.0));

        let mut no_mu = mu.clone();
        no_mu.rows.fill(0.0);
        let gh = Vector::from_row_slice(&[0.2, -0.1, 0.4]);
        let s = orthogonal_score(&xi, &pl, &no_mu, &gamma, &gh, 25).unwrap();
        assert!((s.statistic[0] - 5.0 * 0.2).abs() < 1e-15);
        assert!((s.v_m_hat[(0, 0)] - pl.omega_hat[(0, 0)]).abs() < 1e-12);

        // xi = gamma makes xi G mu gamma = xi when mu gamma G = I.
        let annihilated = orthogonal_score(&gamma.rows, &pl, &mu, &gamma, &gh, 25).unwrap();
        assert!(annihilated.statistic.amax() < 1e-9);
    }

    fn square_iv(n: usize, p: usize, seed: u64) -> IvScore {
        let mut rng = Rng::new(seed);
        let z = Matrix::from_fn(n, p, |_, _| rng.normal());
        let w = Matrix::from_fn(n, p, |i, j| {
            2.0 * z[(i, j)] + 0.3 * z[(i, (j + 1) % p)] + rng.normal()
        });
        let y = Vector::from_fn(n, |i, _| w[(i, 0)] + rng.normal());
        IvScore::new(z, w, y).unwrap()
    }

    #[test]
    fn exact_identification_reproduces_gmm() {
        let s = square_iv(200, 4, 5);
        let cfg = DrgmmConfig {
            rmd: RmdConfig::new(0.05),
            gamma_penalty: fixed(4, 0.0),
            mu_penalty: mu_fixed(4, 0.0),
            omega_for_gamma: None,
            theta_init: None,
        };
        let r = drgmm_pipeline(&s, &cfg).unwrap();
        let lin = s.linear();
        let direct = -lin.g_hat.clone().lu().solve(&lin.g0_hat).unwrap();
        assert!((r.theta_check.clone() - direct).amax() < 1e-8);
        let means = crate::linalg::column_means(&r.scores);
        assert!((&r.theta_hat - &r.theta_check - means).amax() < 1e-12);
        assert!(r.to_mam().is_ok());
    }

    #[test]
    fn export_formats() {
        let s = square_iv(30, 2, 6);
        let cfg = DrgmmConfig {
            rmd: RmdConfig::new(0.1),
            gamma_penalty: fixed(2, 0.0),
            mu_penalty: mu_fixed(2, 0.0),
            omega_for_gamma: None,
            theta_init: None,
        };
        let r = drgmm_pipeline(&s, &cfg).unwrap();
        let mut json = Vec::new();
        r.write_json(&mut json).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&json).unwrap();
        assert_eq!(v["theta_check"].as_array().unwrap().len(), 2);
        assert_eq!(v["mu_status"][0], "optimal");
        let mut csv = Vec::new();
        r.write_scores_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("z1,z2\n"));
        assert_eq!(text.lines().count(), 31);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn oracle_rows_bound_the_l1_norm(vals in prop::collection::vec(-1.0..1.0f64, 9), lam in 0.0..0.3f64) {
            // Omega = A A' + I and G arbitrary; the oracle row G'_j Omega^{-1}
            // is feasible for every penalty, so the solution is no larger in l1.
            let a = Matrix::from_fn(3, 3, |i, j| vals[i * 3 + j]);
            let omega = &a * a.transpose() + Matrix::identity(3, 3);
            let g = Matrix::from_fn(3, 2, |i, j| vals[(i + 2 * j) % 9] + if i == j { 2.0 } else { 0.0 });
            let pl = plugins(g.clone(), omega.clone());
            let gamma = estimate_gamma(&pl, &fixed(2, lam)).unwrap();
            let gamma0 = g.transpose() * omega.clone().try_inverse().unwrap();
            for j in 0..2 {
                let est: f64 = gamma.rows.row(j).iter().map(|v| v.abs()).sum();
                let oracle: f64 = gamma0.row(j).iter().map(|v| v.abs()).sum();
                prop_assert!(est <= oracle + 1e-8);
                let resid = gamma.rows.row(j) * &omega - g.column(j).transpose();
                prop_assert!(resid.amax() <= lam + 1e-8);
            }
            let gg = &gamma0 * &g;
            let mut oracle_gamma = gamma.clone();
            oracle_gamma.rows = gamma0.clone();
            let mu = estimate_mu(&oracle_gamma, &pl, &mu_fixed(2, lam)).unwrap();
            let mu0 = gg.try_inverse().unwrap();
            for j in 0..2 {
                let est: f64 = mu.rows.row(j).iter().map(|v| v.abs()).sum();
                let oracle: f64 = mu0.row(j).iter().map(|v| v.abs()).sum();
                prop_assert!(est <= oracle + 1e-8);
            }
        }
    }
}
