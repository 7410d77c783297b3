//! l1-regularized estimation of many means: `min ||theta||_1` subject to
//! `||theta_hat - theta||_inf <= lambda`, solved coordinatewise in closed form.

use serde::{Deserialize, Serialize};

use crate::bootstrap::{bootstrap_sup, lambda_hat, BootstrapConfig, Scheme};
use crate::error::{Error, Result};
use crate::linalg::{l1, upper_quantile, Rng, Vector};
use crate::mam::MamProblem;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SparsityModel {
    /// `theta_j = amplitude / j^{3/2}` for `j <= s`, zero afterwards.
    Exact {
        s: usize,
        #[serde(default = "default_es_amplitude")]
        amplitude: f64,
    },
    /// `theta_j = a_amp / j^decay`.
    Approximate { a_amp: f64, decay: f64 },
    /// Dense coefficients with `||theta||_1 <= budget`.
    Dense { budget: f64 },
}

fn default_es_amplitude() -> f64 {
    50.0
}

impl SparsityModel {
    pub fn exact(s: usize) -> Self {
        SparsityModel::Exact {
            s,
            amplitude: default_es_amplitude(),
        }
    }

    pub fn validate(&self, p: Option<usize>) -> Result<()> {
        match *self {
            SparsityModel::Exact { s, amplitude } => {
                if s == 0 || p.is_some_and(|p| s > p) {
                    return Err(Error::domain(format!("support size {s} outside [1, p]")));
                }
                if !amplitude.is_finite() {
                    return Err(Error::domain("amplitude must be finite"));
                }
            }
            SparsityModel::Approximate { a_amp, decay } => {
                if !(a_amp > 0.0 && decay > 0.5) {
                    return Err(Error::domain(format!(
                        "approximate sparsity needs A > 0 and a > 1/2, got A = {a_amp}, a = {decay}"
                    )));
                }
            }
            SparsityModel::Dense { budget } => {
                if !(budget > 0.0) {
                    return Err(Error::domain(format!(
                        "l1 budget must be positive, got {budget}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Regularized estimate with `|theta_tilde_j| <= |theta_hat_j|` and
/// `|theta_tilde_j - theta_hat_j| <= lambda`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegularizedEstimate {
    pub theta_tilde: Vector,
    pub lambda_used: f64,
    pub support: Vec<usize>,
}

fn check_level(x: f64, name: &str) -> Result<()> {
    if x >= 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!(
            "{name} must be a finite nonnegative number, got {x}"
        )))
    }
}

fn estimate(theta_tilde: Vector, lambda: f64) -> RegularizedEstimate {
    let support = (0..theta_tilde.len())
        .filter(|&j| theta_tilde[j] != 0.0)
        .collect();
    RegularizedEstimate {
        theta_tilde,
        lambda_used: lambda,
        support,
    }
}

/// `(|x| - lambda)_+ sign(x)` coordinatewise.
pub fn soft_threshold(theta_hat: &Vector, lambda: f64) -> Result<RegularizedEstimate> {
    check_level(lambda, "lambda")?;
    let t = theta_hat.map(|x| {
        let m = x.abs() - lambda;
        if m > 0.0 {
            m.copysign(x)
        } else {
            0.0
        }
    });
    Ok(estimate(t, lambda))
}

/// `x 1{|x| > rho}` coordinatewise.
pub fn selection_threshold(theta_hat: &Vector, rho: f64) -> Result<RegularizedEstimate> {
    check_level(rho, "rho")?;
    let t = theta_hat.map(|x| if x.abs() > rho { x } else { 0.0 });
    Ok(estimate(t, rho))
}

/// Penalty-level rules.
#[derive(Debug, Clone, Copy)]
pub enum LambdaRule<'a> {
    /// `n^{-1/2} Phi^{-1}(1 - alpha/(2p)) max_j (E_n Z_ij^2)^{1/2}`.
    SelfNormalized(&'a MamProblem),
    /// `sigma n^{-1/2} Phi^{-1}(1 - alpha/(2p))`.
    IdealNoise { n: usize, p: usize, sigma: f64 },
    /// Gaussian-bootstrap `lambda_hat(1 - alpha)` with unit weights, over `sqrt(n)`.
    Bootstrap(&'a MamProblem, BootstrapConfig),
}

pub fn select_lambda(rule: LambdaRule<'_>, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::domain(format!(
            "alpha must lie in (0,1), got {alpha}"
        )));
    }
    match rule {
        LambdaRule::SelfNormalized(prob) => {
            let crit = upper_quantile(alpha / (2.0 * prob.p() as f64))?;
            let max_sd = prob
                .second_moments()
                .into_iter()
                .fold(0.0_f64, |m, v| m.max(v.sqrt()));
            Ok(crit * max_sd / (prob.n() as f64).sqrt())
        }
        LambdaRule::IdealNoise { n, p, sigma } => {
            if n == 0 || p == 0 {
                return Err(Error::domain("n and p must be positive"));
            }
            check_level(sigma, "sigma")?;
            Ok(sigma * upper_quantile(alpha / (2.0 * p as f64))? / (n as f64).sqrt())
        }
        LambdaRule::Bootstrap(prob, cfg) => {
            if cfg.scheme != Scheme::Gaussian {
                return Err(Error::Config(
                    "bootstrap lambda uses the Gaussian scheme".into(),
                ));
            }
            let draws = bootstrap_sup(prob, &vec![1.0; prob.p()], &cfg)?;
            Ok(lambda_hat(&draws, alpha)? / (prob.n() as f64).sqrt())
        }
    }
}

/// Upper bound on `||theta_tilde - theta_0||_q` on the event
/// `||theta_hat - theta_0||_inf <= lambda`.
///
/// * exact: `2 s^{1/q} lambda`
/// * dense: `2 K^{1/q} lambda^{1 - 1/q}`
/// * approximate: `2 s^{1/q} lambda + 2 (2^{aq} s lambda^q / (aq - 1))^{1/q}`
///   with `s = ceil((A/lambda)^{1/a})`
pub fn theoretical_error_bound(model: &SparsityModel, lambda: f64, q: f64) -> Result<f64> {
    model.validate(None)?;
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::domain(format!(
            "lambda must be positive, got {lambda}"
        )));
    }
    if !(q >= 1.0 && q.is_finite()) {
        return Err(Error::domain(format!("q must be at least 1, got {q}")));
    }
    match *model {
        SparsityModel::Exact { s, .. } => Ok(2.0 * (s as f64).powf(1.0 / q) * lambda),
        SparsityModel::Dense { budget } => {
            Ok(2.0 * budget.powf(1.0 / q) * lambda.powf(1.0 - 1.0 / q))
        }
        SparsityModel::Approximate { a_amp, decay } => {
            if q * decay <= 1.0 {
                return Err(Error::domain(format!(
                    "need q > 1/a, got q = {q}, a = {decay}"
                )));
            }
            if lambda >= a_amp {
                return Err(Error::domain(format!(
                    "need lambda < A, got {lambda} >= {a_amp}"
                )));
            }
            let s = (a_amp / lambda).powf(1.0 / decay).ceil();
            let head = 2.0 * s.powf(1.0 / q) * lambda;
            let aq = decay * q;
            let tail = 2.0 * (2f64.powf(aq) * s * lambda.powf(q) / (aq - 1.0)).powf(1.0 / q);
            Ok(head + tail)
        }
    }
}

/// Coefficient vectors for the three sparsity models.
///
/// The dense model draws `K/(2p) + (K/(2p)) v_(j)` with `v_(j)` the sorted
/// standard exponentials, then rescales onto the l1 ball of radius `K` if needed.
pub fn generate_sparse_vector(model: &SparsityModel, p: usize, rng: &mut Rng) -> Result<Vector> {
    model.validate(Some(p))?;
    Ok(match *model {
        SparsityModel::Exact { s, amplitude } => Vector::from_fn(p, |j, _| {
            if j < s {
                amplitude / ((j + 1) as f64).powf(1.5)
            } else {
                0.0
            }
        }),
        SparsityModel::Approximate { a_amp, decay } => {
            Vector::from_fn(p, |j, _| a_amp / ((j + 1) as f64).powf(decay))
        }
        SparsityModel::Dense { budget } => {
            let mut v: Vec<f64> = (0..p).map(|_| rng.exp1()).collect();
            v.sort_by(f64::total_cmp);
            let base = budget / (2.0 * p as f64);
            let mut theta = Vector::from_iterator(p, v.iter().map(|x| base + base * x));
            let norm = l1(theta.as_slice());
            if norm > budget {
                theta *= budget / norm;
            }
            theta
        }
    })
}
