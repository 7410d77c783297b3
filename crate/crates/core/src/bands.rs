//! Simultaneous confidence rectangles for all coordinates of a MAM problem.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::bootstrap::{bootstrap_sup, lambda_hat, BootstrapConfig, Scheme, SupDraws};
use crate::error::{Error, Result};
use crate::linalg::{upper_quantile, Vector};
use crate::mam::MamProblem;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    /// `w_j = 1`.
    Unit,
    /// `w_j = (E_n[Z_ij^2])^{-1/2}`.
    InvSd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandMethod {
    GaussianBootstrap,
    EmpiricalBootstrap,
    ModerateDeviation,
}

/// Rectangle `[lower_j, upper_j]` centred at `theta_hat_j` with half-width
/// `lambda_used / (w_j sqrt(n))`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimultaneousBand {
    pub theta_hat: Vector,
    pub lower: Vector,
    pub upper: Vector,
    pub lambda_used: f64,
    pub weights: Vector,
    pub method: BandMethod,
    root_n: f64,
}

impl SimultaneousBand {
    fn centred(prob: &MamProblem, lambda: f64, weights: Vec<f64>, method: BandMethod) -> Self {
        let root_n = (prob.n() as f64).sqrt();
        let theta = prob.theta_hat().clone();
        let radius: Vec<f64> = weights.iter().map(|w| lambda / (w * root_n)).collect();
        let lower =
            Vector::from_iterator(theta.len(), theta.iter().zip(&radius).map(|(t, r)| t - r));
        let upper =
            Vector::from_iterator(theta.len(), theta.iter().zip(&radius).map(|(t, r)| t + r));
        Self {
            theta_hat: theta,
            lower,
            upper,
            lambda_used: lambda,
            weights: Vector::from_vec(weights),
            method,
            root_n,
        }
    }

    pub fn radius(&self, j: usize) -> f64 {
        self.lambda_used / (self.weights[j] * self.root_n)
    }

    /// Whether every coordinate of `theta` lies in its interval.
    pub fn covers(&self, theta: &Vector) -> bool {
        theta.len() == self.lower.len()
            && theta
                .iter()
                .enumerate()
                .all(|(j, &t)| self.lower[j] <= t && t <= self.upper[j])
    }

    /// CSV with columns `j, theta_hat, lower, upper, radius`; `j` is 1-based.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["j", "theta_hat", "lower", "upper", "radius"])?;
        for j in 0..self.lower.len() {
            w.write_record([
                (j + 1).to_string(),
                format!("{:?}", self.theta_hat[j]),
                format!("{:?}", self.lower[j]),
                format!("{:?}", self.upper[j]),
                format!("{:?}", self.radius(j)),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn band_weights(prob: &MamProblem, mode: WeightMode) -> Result<Vec<f64>> {
    match mode {
        WeightMode::Unit => Ok(vec![1.0; prob.p()]),
        WeightMode::InvSd => Ok(prob.scales()?.into_iter().map(|s| 1.0 / s).collect()),
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::domain(format!(
            "alpha must lie in (0,1), got {alpha}"
        )))
    }
}

/// Band built from precomputed sup draws, which must have been drawn with `weights`.
pub fn band_from_draws(
    prob: &MamProblem,
    draws: &SupDraws,
    weights: Vec<f64>,
    alpha: f64,
) -> Result<SimultaneousBand> {
    check_alpha(alpha)?;
    if weights.len() != prob.p() {
        return Err(Error::dim("weights length differs from p"));
    }
    let lambda = lambda_hat(draws, alpha)?;
    let method = match draws.scheme {
        Scheme::Gaussian => BandMethod::GaussianBootstrap,
        Scheme::Empirical => BandMethod::EmpiricalBootstrap,
    };
    Ok(SimultaneousBand::centred(prob, lambda, weights, method))
}

/// Bootstrap band: `theta_hat_j +- lambda_hat / (w_j sqrt(n))`.
pub fn simultaneous_intervals(
    prob: &MamProblem,
    alpha: f64,
    weight_mode: WeightMode,
    cfg: &BootstrapConfig,
) -> Result<SimultaneousBand> {
    check_alpha(alpha)?;
    let weights = band_weights(prob, weight_mode)?;
    let draws = bootstrap_sup(prob, &weights, cfg)?;
    band_from_draws(prob, &draws, weights, alpha)
}

/// Moderate-deviation band with radius `Phi^{-1}(1 - alpha/(2p)) sd_j / sqrt(n)`.
pub fn simultaneous_intervals_md(prob: &MamProblem, alpha: f64) -> Result<SimultaneousBand> {
    check_alpha(alpha)?;
    let weights = band_weights(prob, WeightMode::InvSd)?;
    let crit = upper_quantile(alpha / (2.0 * prob.p() as f64))?;
    Ok(SimultaneousBand::centred(
        prob,
        crit,
        weights,
        BandMethod::ModerateDeviation,
    ))
}
