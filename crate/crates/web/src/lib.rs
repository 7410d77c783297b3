//! Browser bindings for three interactive views: thresholding of a noisy
//! sparse vector, a simultaneous band on the `W eps` benchmark design, and the
//! Gaussian versus empirical bootstrap laws of the sup statistic.
//!
//! Every export returns a JSON string; failures come back as `{"error": ...}`.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use hdinfer::bands::{
    simultaneous_intervals, simultaneous_intervals_md, SimultaneousBand, WeightMode,
};
use hdinfer::bootstrap::{bootstrap_sup, lambda_hat, BootstrapConfig};
use hdinfer::dgp::figure1_dgp;
use hdinfer::linalg::Rng;
use hdinfer::regularized::{
    generate_sparse_vector, select_lambda, selection_threshold, soft_threshold, LambdaRule,
    SparsityModel,
};
use hdinfer::Vector;

/// Largest `p` accepted from the page; keeps a single call interactive.
const MAX_P: usize = 2000;
const MAX_N: usize = 2000;
const MAX_DRAWS: usize = 5000;

#[derive(Debug, Serialize)]
pub struct ThresholdView {
    pub theta0: Vec<f64>,
    pub theta_hat: Vec<f64>,
    pub soft: Vec<f64>,
    pub selection: Vec<f64>,
    pub lambda: f64,
    pub err_raw: f64,
    pub err_soft: f64,
    pub err_selection: f64,
}

#[derive(Debug, Serialize)]
pub struct BandView {
    pub theta0: Vec<f64>,
    pub theta_hat: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub lambda: f64,
    pub mean_radius: f64,
    pub md_mean_radius: f64,
    pub covers: bool,
}

#[derive(Debug, Serialize)]
pub struct SupLawView {
    /// Sorted draws, ready for an empirical CDF plot.
    pub gaussian: Vec<f64>,
    pub empirical: Vec<f64>,
    pub gaussian_quantile: f64,
    pub empirical_quantile: f64,
}

fn check_size(name: &str, v: usize, lo: usize, hi: usize) -> Result<(), String> {
    if (lo..=hi).contains(&v) {
        Ok(())
    } else {
        Err(format!("{name} must lie in [{lo}, {hi}], got {v}"))
    }
}

fn l2(a: &Vector, b: &Vector) -> f64 {
    (a - b).norm()
}

/// `theta_hat = theta0 + N(0, I)` with an exactly `s`-sparse `theta0`, then
/// both thresholding rules at the ideal level for unit noise.
pub fn threshold_view(
    p: usize,
    s: usize,
    amplitude: f64,
    alpha: f64,
    seed: u64,
) -> Result<ThresholdView, String> {
    check_size("p", p, 1, MAX_P)?;
    check_size("s", s, 0, p)?;
    let err = |e: hdinfer::Error| e.to_string();
    let mut rng = Rng::new(seed);
    let theta0 =
        generate_sparse_vector(&SparsityModel::Exact { s, amplitude }, p, &mut rng).map_err(err)?;
    let mut noise = rng.fork(1);
    let theta_hat = Vector::from_fn(p, |j, _| theta0[j] + noise.normal());
    let lambda = select_lambda(
        LambdaRule::IdealNoise {
            n: 1,
            p,
            sigma: 1.0,
        },
        alpha,
    )
    .map_err(err)?;
    let soft = soft_threshold(&theta_hat, lambda).map_err(err)?.theta_tilde;
    let selection = selection_threshold(&theta_hat, lambda)
        .map_err(err)?
        .theta_tilde;
    Ok(ThresholdView {
        err_raw: l2(&theta_hat, &theta0),
        err_soft: l2(&soft, &theta0),
        err_selection: l2(&selection, &theta0),
        theta0: theta0.as_slice().to_vec(),
        theta_hat: theta_hat.as_slice().to_vec(),
        soft: soft.as_slice().to_vec(),
        selection: selection.as_slice().to_vec(),
        lambda,
    })
}

/// Gaussian-bootstrap band on one benchmark sample, with the mean half-width of
/// the moderate-deviation band alongside for comparison.
pub fn band_view(
    n: usize,
    p: usize,
    alpha: f64,
    draws: usize,
    inv_sd: bool,
    seed: u64,
) -> Result<BandView, String> {
    check_size("n", n, 2, MAX_N)?;
    check_size("p", p, 1, MAX_P)?;
    check_size("draws", draws, 1, MAX_DRAWS)?;
    let err = |e: hdinfer::Error| e.to_string();
    let (prob, theta0) = figure1_dgp(n, p, seed).map_err(err)?;
    let mode = if inv_sd {
        WeightMode::InvSd
    } else {
        WeightMode::Unit
    };
    let cfg = BootstrapConfig::gaussian(draws, Rng::new(seed).fork(3).seed());
    let band = simultaneous_intervals(&prob, alpha, mode, &cfg).map_err(err)?;
    let md = simultaneous_intervals_md(&prob, alpha).map_err(err)?;
    let mean_radius = |b: &SimultaneousBand| (0..p).map(|j| b.radius(j)).sum::<f64>() / p as f64;
    Ok(BandView {
        covers: band.covers(&theta0),
        mean_radius: mean_radius(&band),
        md_mean_radius: mean_radius(&md),
        theta0: theta0.as_slice().to_vec(),
        theta_hat: band.theta_hat.as_slice().to_vec(),
        lower: band.lower.as_slice().to_vec(),
        upper: band.upper.as_slice().to_vec(),
        lambda: band.lambda_used,
    })
}

/// Both bootstrap laws of the unit-weight sup statistic on one benchmark sample.
pub fn sup_law_view(
    n: usize,
    p: usize,
    draws: usize,
    alpha: f64,
    seed: u64,
) -> Result<SupLawView, String> {
    check_size("n", n, 2, MAX_N)?;
    check_size("p", p, 1, MAX_P)?;
    check_size("draws", draws, 1, MAX_DRAWS)?;
    let err = |e: hdinfer::Error| e.to_string();
    let (prob, _) = figure1_dgp(n, p, seed).map_err(err)?;
    let weights = vec![1.0; p];
    let base = Rng::new(seed).fork(3).seed();
    let g = bootstrap_sup(&prob, &weights, &BootstrapConfig::gaussian(draws, base)).map_err(err)?;
    let e =
        bootstrap_sup(&prob, &weights, &BootstrapConfig::empirical(draws, base)).map_err(err)?;
    let gaussian_quantile = lambda_hat(&g, alpha).map_err(err)?;
    let empirical_quantile = lambda_hat(&e, alpha).map_err(err)?;
    let sorted = |mut v: Vec<f64>| {
        v.sort_by(f64::total_cmp);
        v
    };
    Ok(SupLawView {
        gaussian: sorted(g.values),
        empirical: sorted(e.values),
        gaussian_quantile,
        empirical_quantile,
    })
}

fn to_json<T: Serialize>(r: Result<T, String>) -> String {
    match r {
        Ok(v) => serde_json::to_string(&v).unwrap_or_else(|e| error_json(&e.to_string())),
        Err(e) => error_json(&e),
    }
}

fn error_json(msg: &str) -> String {
    serde_json::json!({ "error": msg }).to_string()
}

// Seeds cross the JS boundary as f64; integral values up to 2^53 are exact.
fn seed_from_js(seed: f64) -> u64 {
    seed.max(0.0) as u64
}

#[wasm_bindgen]
pub fn threshold(p: usize, s: usize, amplitude: f64, alpha: f64, seed: f64) -> String {
    to_json(threshold_view(p, s, amplitude, alpha, seed_from_js(seed)))
}

#[wasm_bindgen]
pub fn band(n: usize, p: usize, alpha: f64, draws: usize, inv_sd: bool, seed: f64) -> String {
    to_json(band_view(n, p, alpha, draws, inv_sd, seed_from_js(seed)))
}

#[wasm_bindgen]
pub fn sup_law(n: usize, p: usize, draws: usize, alpha: f64, seed: f64) -> String {
    to_json(sup_law_view(n, p, draws, alpha, seed_from_js(seed)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn soft_threshold_shrinks_towards_truth_on_strong_signals() {
        let v = threshold_view(200, 8, 50.0, 0.1, 3).unwrap();
        assert!(v.err_soft < v.err_raw);
        assert_eq!(v.soft.len(), 200);
        assert!(v
            .soft
            .iter()
            .zip(&v.theta_hat)
            .all(|(a, b)| a.abs() <= b.abs()));
    }

    #[test]
    fn band_is_centred_and_wider_with_smaller_alpha() {
        let wide = band_view(100, 20, 0.01, 300, false, 9).unwrap();
        let narrow = band_view(100, 20, 0.2, 300, false, 9).unwrap();
        assert!(wide.lambda > narrow.lambda);
        for j in 0..20 {
            let mid = 0.5 * (wide.lower[j] + wide.upper[j]);
            assert!((mid - wide.theta_hat[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn sup_laws_are_sorted_and_quantiles_are_draws() {
        let v = sup_law_view(80, 30, 200, 0.1, 4).unwrap();
        assert!(v.gaussian.windows(2).all(|w| w[0] <= w[1]));
        assert!(v.empirical.contains(&v.empirical_quantile));
        assert!(v.gaussian.contains(&v.gaussian_quantile));
    }

    #[test]
    fn out_of_range_inputs_are_reported_as_json_errors() {
        let s = band(1, 10, 0.05, 100, false, 0.0);
        let parsed: serde_json::Value = serde_json::from_str(&s).unwrap();
        assert!(parsed["error"].as_str().unwrap().contains("n must lie"));
        let s = threshold(10, 3, 5.0, 1.5, 0.0);
        assert!(s.contains("error"));
    }
}
