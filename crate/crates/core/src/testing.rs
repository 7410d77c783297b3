//! Multiple testing of `H_j: theta_j <= null_j` (one-sided) or
//! `H_j: theta_j = null_j` (two-sided) from self-normalized t-statistics.
//!
//! Index sets are 0-based and sorted.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::bootstrap::{bootstrap_coordinates, BootstrapConfig};
use crate::error::{Error, Result};
use crate::linalg::{sorted_quantile, upper_quantile, upper_tail, Vector};
use crate::mam::{t_statistics, MamProblem, TStats};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sidedness {
    /// Reject for large `t_j`.
    #[default]
    OneSided,
    /// Reject for large `|t_j|`, with Gaussian tail masses halved.
    TwoSided,
}

impl Sidedness {
    fn statistic(self, t: f64) -> f64 {
        match self {
            Sidedness::OneSided => t,
            Sidedness::TwoSided => t.abs(),
        }
    }

    fn tail_factor(self) -> f64 {
        match self {
            Sidedness::OneSided => 1.0,
            Sidedness::TwoSided => 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FwerMethod {
    Bonferroni,
    Holm,
    RomanoWolf,
}

/// One pass of a stepdown: the hypotheses still active and their critical value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Step {
    pub active: Vec<usize>,
    pub critical: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FwerResult {
    pub method: FwerMethod,
    pub rejected: Vec<usize>,
    pub steps: Vec<Step>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FdrResult {
    pub k_hat: usize,
    /// `t_(k_hat)`, or `+inf` when nothing is rejected.
    pub threshold: f64,
    pub rejected: Vec<usize>,
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

/// Generic stepdown. `critical(active)` must be weakly increasing in the
/// active set; each step rejects `stat_j > c` among active hypotheses.
fn stepdown(
    stats: &[f64],
    method: FwerMethod,
    mut critical: impl FnMut(&[usize]) -> Result<f64>,
) -> Result<FwerResult> {
    let mut active: Vec<usize> = (0..stats.len()).collect();
    let mut rejected = Vec::new();
    let mut steps = Vec::new();
    while !active.is_empty() {
        let c = critical(&active)?;
        steps.push(Step {
            active: active.clone(),
            critical: c,
        });
        let (hit, kept): (Vec<usize>, Vec<usize>) = active.iter().partition(|&&j| stats[j] > c);
        if hit.is_empty() {
            break;
        }
        rejected.extend(hit);
        active = kept;
    }
    rejected.sort_unstable();
    Ok(FwerResult {
        method,
        rejected,
        steps,
    })
}

fn oriented(t: &TStats, sided: Sidedness) -> Vec<f64> {
    t.values.iter().map(|&v| sided.statistic(v)).collect()
}

/// Single step with threshold `Phi^{-1}(1 - alpha/p)` (`alpha/(2p)` two-sided).
pub fn bonferroni(t: &TStats, alpha: f64, sided: Sidedness) -> Result<FwerResult> {
    check_alpha(alpha)?;
    let stats = oriented(t, sided);
    let c = upper_quantile(alpha / (sided.tail_factor() * stats.len() as f64))?;
    let rejected: Vec<usize> = (0..stats.len()).filter(|&j| stats[j] > c).collect();
    Ok(FwerResult {
        method: FwerMethod::Bonferroni,
        rejected,
        steps: vec![Step {
            active: (0..stats.len()).collect(),
            critical: c,
        }],
    })
}

/// Holm stepdown with `c_w = Phi^{-1}(1 - alpha/|w|)`.
pub fn holm_stepdown(t: &TStats, alpha: f64, sided: Sidedness) -> Result<FwerResult> {
    check_alpha(alpha)?;
    let stats = oriented(t, sided);
    let factor = sided.tail_factor();
    stepdown(&stats, FwerMethod::Holm, |active| {
        upper_quantile(alpha / (factor * active.len() as f64))
    })
}

/// Romano-Wolf stepdown. One `B x p` matrix of self-normalized bootstrap
/// coordinates is drawn once; `c_w` is the `(1 - alpha)` quantile of the
/// per-draw maximum over `w` (of absolute values when two-sided).
pub fn romano_wolf_stepdown(
    prob: &MamProblem,
    null_values: &Vector,
    alpha: f64,
    cfg: &BootstrapConfig,
    sided: Sidedness,
) -> Result<FwerResult> {
    check_alpha(alpha)?;
    let t = t_statistics(prob, null_values)?;
    let mut draws = bootstrap_coordinates(prob, cfg)?;
    for (j, mut col) in draws.column_iter_mut().enumerate() {
        let s = t.scale[j];
        for v in col.iter_mut() {
            *v = sided.statistic(*v / s);
        }
    }
    // Row-major copy so each draw's coordinates are contiguous.
    let b = draws.nrows();
    let p = draws.ncols();
    let rows: Vec<f64> = draws.transpose().as_slice().to_vec();
    let stats = oriented(&t, sided);
    let mut maxima = vec![0.0; b];
    stepdown(&stats, FwerMethod::RomanoWolf, |active| {
        for (r, m) in maxima.iter_mut().enumerate() {
            let row = &rows[r * p..(r + 1) * p];
            *m = active
                .iter()
                .fold(f64::NEG_INFINITY, |acc, &j| acc.max(row[j]));
        }
        let mut sorted = maxima.clone();
        sorted.sort_by(f64::total_cmp);
        Ok(sorted_quantile(&sorted, 1.0 - alpha))
    })
}

/// Benjamini-Hochberg step-up: `k_hat = max{j : 1 - Phi(t_(j)) <= alpha j / p}`
/// over the descending order statistics; rejects `t_j >= t_(k_hat)`.
pub fn benjamini_hochberg(t: &TStats, alpha: f64, sided: Sidedness) -> Result<FdrResult> {
    check_alpha(alpha)?;
    let stats = oriented(t, sided);
    let p = stats.len();
    let mut order: Vec<usize> = (0..p).collect();
    // Stable: ties keep index order.
    order.sort_by(|&a, &b| stats[b].total_cmp(&stats[a]));
    let factor = sided.tail_factor();
    let mut k_hat = 0;
    for (rank, &j) in order.iter().enumerate() {
        let k = rank + 1;
        if factor * upper_tail(stats[j]) <= alpha * k as f64 / p as f64 {
            k_hat = k;
        }
    }
    let threshold = if k_hat == 0 {
        f64::INFINITY
    } else {
        stats[order[k_hat - 1]]
    };
    let rejected = (0..p).filter(|&j| stats[j] >= threshold).collect();
    Ok(FdrResult {
        k_hat,
        threshold,
        rejected,
    })
}

/// Largest absolute uncentred correlation `E_n[Z_j Z_k] / (E_n Z_j^2 E_n Z_k^2)^{1/2}`
/// between distinct influence columns; `0` when `p = 1`.
pub fn max_column_correlation(prob: &MamProblem) -> Result<f64> {
    let scales = prob.scales()?;
    let z = prob.influence();
    let gram = z.tr_mul(z);
    let n = prob.n() as f64;
    let mut best = 0.0_f64;
    for j in 0..prob.p() {
        for k in 0..j {
            best = best.max((gram[(j, k)] / n / (scales[j] * scales[k])).abs());
        }
    }
    Ok(best)
}

/// Decision table row for the four procedures.
pub struct DecisionTable<'a> {
    pub t: &'a TStats,
    pub bonferroni: &'a FwerResult,
    pub holm: &'a FwerResult,
    pub romano_wolf: &'a FwerResult,
    pub bh: &'a FdrResult,
}

impl DecisionTable<'_> {
    /// CSV with columns `j, t, rejected_bonf, rejected_holm, rejected_rw, rejected_bh`;
    /// `j` is 1-based and decisions are 0/1.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let p = self.t.len();
        let flags = |set: &[usize]| {
            let mut f = vec![0u8; p];
            for &j in set {
                f[j] = 1;
            }
            f
        };
        let cols = [
            flags(&self.bonferroni.rejected),
            flags(&self.holm.rejected),
            flags(&self.romano_wolf.rejected),
            flags(&self.bh.rejected),
        ];
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "j",
            "t",
            "rejected_bonf",
            "rejected_holm",
            "rejected_rw",
            "rejected_bh",
        ])?;
        for j in 0..p {
            w.write_record([
                (j + 1).to_string(),
                format!("{:?}", self.t.values[j]),
                cols[0][j].to_string(),
                cols[1][j].to_string(),
                cols[2][j].to_string(),
                cols[3][j].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}
