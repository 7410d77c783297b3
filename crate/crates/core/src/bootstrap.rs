//! Multiplier and empirical bootstrap of the weighted sup statistic
//! `max_j |w_j n^{-1/2} sum_i e_i Z_ij|`.
//!
//! Draw `b` always uses the multiplier vector generated by `Rng::new(seed).fork(b)`,
//! so any draw can be reproduced in isolation and results do not depend on
//! how draws are grouped.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{empirical_quantile, upper_quantile, Matrix, Rng};
use crate::mam::MamProblem;

/// Number of draws whose multipliers are materialized together.
const BLOCK: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// i.i.d. standard normal multipliers.
    Gaussian,
    /// Multinomial(n; 1/n, ..., 1/n) counts minus one.
    Empirical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub scheme: Scheme,
    pub draws: usize,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            scheme: Scheme::Gaussian,
            draws: 1000,
            seed: 0,
        }
    }
}

impl BootstrapConfig {
    pub fn gaussian(draws: usize, seed: u64) -> Self {
        Self {
            scheme: Scheme::Gaussian,
            draws,
            seed,
        }
    }

    pub fn empirical(draws: usize, seed: u64) -> Self {
        Self {
            scheme: Scheme::Empirical,
            draws,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.draws == 0 {
            return Err(Error::Config("bootstrap needs at least one draw".into()));
        }
        Ok(())
    }
}

/// `B` realizations of the weighted sup statistic.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SupDraws {
    pub values: Vec<f64>,
    pub scheme: Scheme,
}

impl SupDraws {
    /// Single-column CSV with header `sup`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["sup"])?;
        for v in &self.values {
            w.write_record([format!("{v:?}")])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Writes the multipliers of draw `b` into `e` (length n).
pub(crate) fn fill_multipliers(scheme: Scheme, seed: u64, b: usize, e: &mut [f64]) {
    let mut rng = Rng::new(seed).fork(b as u64);
    match scheme {
        Scheme::Gaussian => rng.fill_normal(e),
        Scheme::Empirical => {
            let n = e.len();
            e.fill(-1.0);
            for _ in 0..n {
                e[rng.index(n)] += 1.0;
            }
        }
    }
}

/// Visits consecutive blocks of bootstrap coordinates. Each block is a
/// `k x p` matrix whose row `r` holds `n^{-1/2} sum_i e_i Z_ij` for draw `start + r`.
pub(crate) fn for_each_block(
    prob: &MamProblem,
    cfg: &BootstrapConfig,
    mut visit: impl FnMut(usize, &Matrix),
) -> Result<()> {
    cfg.validate()?;
    let n = prob.n();
    let inv_root_n = 1.0 / (n as f64).sqrt();
    let mut start = 0;
    while start < cfg.draws {
        let k = BLOCK.min(cfg.draws - start);
        // Column r holds the multipliers of draw start + r.
        let mut e = Matrix::zeros(n, k);
        for r in 0..k {
            let col = &mut e.as_mut_slice()[r * n..(r + 1) * n];
            fill_multipliers(cfg.scheme, cfg.seed, start + r, col);
        }
        let mut coords = e.tr_mul(prob.influence());
        coords *= inv_root_n;
        visit(start, &coords);
        start += k;
    }
    Ok(())
}

/// All `B x p` bootstrap coordinates `sqrt(n)(theta*_j - theta_hat_j)`.
pub fn bootstrap_coordinates(prob: &MamProblem, cfg: &BootstrapConfig) -> Result<Matrix> {
    let mut all = Matrix::zeros(cfg.draws, prob.p());
    for_each_block(prob, cfg, |start, block| {
        all.rows_mut(start, block.nrows()).copy_from(block);
    })?;
    Ok(all)
}

fn check_weights(prob: &MamProblem, weights: &[f64]) -> Result<()> {
    if weights.len() != prob.p() {
        return Err(Error::dim(format!(
            "weights have length {}, expected {}",
            weights.len(),
            prob.p()
        )));
    }
    if let Some(j) = weights.iter().position(|w| !(w.is_finite() && *w > 0.0)) {
        return Err(Error::domain(format!(
            "weight {j} must be positive and finite, got {}",
            weights[j]
        )));
    }
    Ok(())
}

/// Bootstrap law of `||sqrt(n) W (theta* - theta_hat)||_inf` under `cfg.scheme`.
pub fn bootstrap_sup(
    prob: &MamProblem,
    weights: &[f64],
    cfg: &BootstrapConfig,
) -> Result<SupDraws> {
    check_weights(prob, weights)?;
    let mut values = vec![0.0; cfg.draws];
    for_each_block(prob, cfg, |start, block| {
        for (r, row) in block.row_iter().enumerate() {
            values[start + r] = row
                .iter()
                .zip(weights)
                .fold(0.0_f64, |m, (v, w)| m.max((w * v).abs()));
        }
    })?;
    Ok(SupDraws {
        values,
        scheme: cfg.scheme,
    })
}

fn require_scheme(cfg: &BootstrapConfig, scheme: Scheme) -> Result<()> {
    if cfg.scheme != scheme {
        return Err(Error::Config(format!(
            "expected a {scheme:?} bootstrap configuration, got {:?}",
            cfg.scheme
        )));
    }
    Ok(())
}

/// Gaussian multiplier bootstrap of the weighted sup statistic.
pub fn gaussian_bootstrap_sup(
    prob: &MamProblem,
    weights: &[f64],
    cfg: &BootstrapConfig,
) -> Result<SupDraws> {
    require_scheme(cfg, Scheme::Gaussian)?;
    bootstrap_sup(prob, weights, cfg)
}

/// Empirical (multinomial-weight) bootstrap of the weighted sup statistic.
pub fn empirical_bootstrap_sup(
    prob: &MamProblem,
    weights: &[f64],
    cfg: &BootstrapConfig,
) -> Result<SupDraws> {
    require_scheme(cfg, Scheme::Empirical)?;
    bootstrap_sup(prob, weights, cfg)
}

/// `(1 - alpha)` quantile of the draws, ceiling order-statistic convention.
pub fn lambda_hat(draws: &SupDraws, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::domain(format!(
            "alpha must lie in (0,1), got {alpha}"
        )));
    }
    empirical_quantile(&draws.values, 1.0 - alpha)
}

/// `min(sigma_bar Phi^{-1}(1 - a/(2p)), sigma_bar sqrt(2 log(2p/a)))`.
pub fn gaussian_quantile_bound(sigma_bar: f64, p: usize, a: f64) -> Result<f64> {
    if !(sigma_bar > 0.0 && sigma_bar.is_finite()) {
        return Err(Error::domain(format!(
            "sigma_bar must be positive, got {sigma_bar}"
        )));
    }
    if p == 0 {
        return Err(Error::domain("p must be at least 1"));
    }
    if !(a > 0.0 && a < 1.0) {
        return Err(Error::domain(format!("a must lie in (0,1), got {a}")));
    }
    let tail = a / (2.0 * p as f64);
    let sharp = upper_quantile(tail)?;
    let loose = (2.0 * (2.0 * p as f64 / a).ln()).sqrt();
    Ok(sigma_bar * sharp.min(loose))
}
