//! Many approximate means: an estimate `theta_hat` together with the
//! estimated influence matrix whose row averages drive its first-order error.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{check_finite, column_second_moments, upper_quantile, Matrix, Vector};

/// Estimate vector plus its `n x p` estimated influence matrix.
///
/// The linearization remainder is never computed; only the estimates are held.
#[derive(Debug, Clone, PartialEq)]
pub struct MamProblem {
    theta_hat: Vector,
    influence: Matrix,
}

impl MamProblem {
    pub fn new(theta_hat: Vector, influence: Matrix) -> Result<Self> {
        if influence.ncols() != theta_hat.len() {
            return Err(Error::dim(format!(
                "influence has {} columns but theta_hat has length {}",
                influence.ncols(),
                theta_hat.len()
            )));
        }
        if theta_hat.is_empty() {
            return Err(Error::dim("theta_hat must be nonempty"));
        }
        if influence.nrows() < 2 {
            return Err(Error::dim(format!(
                "need at least 2 observations, got {}",
                influence.nrows()
            )));
        }
        check_finite(theta_hat.as_slice(), "theta_hat")?;
        check_finite(influence.as_slice(), "influence")?;
        Ok(Self {
            theta_hat,
            influence,
        })
    }

    pub fn theta_hat(&self) -> &Vector {
        &self.theta_hat
    }

    pub fn influence(&self) -> &Matrix {
        &self.influence
    }

    pub fn n(&self) -> usize {
        self.influence.nrows()
    }

    pub fn p(&self) -> usize {
        self.theta_hat.len()
    }

    /// `E_n[Z_ij^2]` per column.
    pub fn second_moments(&self) -> Vec<f64> {
        column_second_moments(&self.influence)
    }

    /// `(E_n[Z_ij^2])^{1/2}` per column; errors on the first zero column.
    pub fn scales(&self) -> Result<Vec<f64>> {
        self.second_moments()
            .into_iter()
            .enumerate()
            .map(|(j, m2)| {
                if m2 > 0.0 {
                    Ok(m2.sqrt())
                } else {
                    Err(Error::DegenerateColumn { column: j })
                }
            })
            .collect()
    }

    pub fn into_parts(self) -> (Vector, Matrix) {
        (self.theta_hat, self.influence)
    }
}

/// Self-normalized t-statistics and the scales used to form them.
#[derive(Debug, Clone, PartialEq)]
pub struct TStats {
    pub values: Vector,
    pub scale: Vector,
}

impl TStats {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// `t_j = sqrt(n) (theta_hat_j - null_j) / (E_n[Z_ij^2])^{1/2}`.
pub fn t_statistics(prob: &MamProblem, null_values: &Vector) -> Result<TStats> {
    if null_values.len() != prob.p() {
        return Err(Error::dim(format!(
            "null_values has length {}, expected {}",
            null_values.len(),
            prob.p()
        )));
    }
    check_finite(null_values.as_slice(), "null_values")?;
    let scale = Vector::from_vec(prob.scales()?);
    let root_n = (prob.n() as f64).sqrt();
    let values = Vector::from_iterator(
        prob.p(),
        (0..prob.p()).map(|j| root_n * (prob.theta_hat[j] - null_values[j]) / scale[j]),
    );
    Ok(TStats { values, scale })
}

/// `Phi^{-1}(1 - alpha / p)`.
pub fn moderate_deviation_critical(p: usize, alpha: f64) -> Result<f64> {
    if p == 0 {
        return Err(Error::domain("p must be at least 1"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::domain(format!(
            "alpha must lie in (0,1), got {alpha}"
        )));
    }
    upper_quantile(alpha / p as f64)
}

/// `sqrt(2 log(p n))`, the maximal-inequality threshold.
pub fn maximal_threshold(p: usize, n: f64) -> Result<f64> {
    let pn = p as f64 * n;
    if !(pn > 1.0) {
        return Err(Error::domain(format!("p*n must exceed 1, got {pn}")));
    }
    Ok((2.0 * pn.ln()).sqrt())
}

/// Largest absolute self-normalized statistic against zero nulls, with the
/// maximal-inequality threshold `sqrt(2 log(p n))`.
pub fn maximal_diagnostic(prob: &MamProblem) -> Result<(f64, f64)> {
    let t = t_statistics(prob, &Vector::zeros(prob.p()))?;
    let max_abs = t.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    Ok((max_abs, maximal_threshold(prob.p(), prob.n() as f64)?))
}

/// Empirical moment summaries of the influence columns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConditionMReport {
    pub min_second: f64,
    pub max_third_abs: f64,
    pub max_fourth: f64,
}

impl ConditionMReport {
    /// The scale-one lower bound on second moments is violated.
    pub fn low_variance(&self) -> bool {
        self.min_second < 1.0
    }
}

pub fn condition_m_diagnostics(prob: &MamProblem) -> ConditionMReport {
    let z = prob.influence();
    let n = z.nrows() as f64;
    let mut report = ConditionMReport {
        min_second: f64::INFINITY,
        max_third_abs: 0.0,
        max_fourth: 0.0,
    };
    for col in z.column_iter() {
        let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
        for &v in col.iter() {
            let a = v.abs();
            let a2 = a * a;
            m2 += a2;
            m3 += a2 * a;
            m4 += a2 * a2;
        }
        report.min_second = report.min_second.min(m2 / n);
        report.max_third_abs = report.max_third_abs.max(m3 / n);
        report.max_fourth = report.max_fourth.max(m4 / n);
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn problem(theta: &[f64], z_rows: &[&[f64]]) -> MamProblem {
        let p = theta.len();
        let z = Matrix::from_fn(z_rows.len(), p, |i, j| z_rows[i][j]);
        MamProblem::new(Vector::from_row_slice(theta), z).unwrap()
    }

    #[test]
    fn rejects_bad_shapes() {
        let z = Matrix::zeros(1, 2);
        assert!(matches!(
            MamProblem::new(Vector::zeros(2), z),
            Err(Error::Dimension(_))
        ));
        let z = Matrix::zeros(3, 2);
        assert!(MamProblem::new(Vector::zeros(3), z).is_err());
    }

    #[test]
    fn t_statistic_direct_formula() {
        // n = 4, E_n[Z^2] = 4, numerator 1: t = 2 * 1 / 2.
        let prob = problem(&[1.0], &[&[2.0], &[-2.0], &[2.0], &[-2.0]]);
        let t = t_statistics(&prob, &Vector::zeros(1)).unwrap();
        assert!((t.values[0] - 1.0).abs() < 1e-15);
        assert!((t.scale[0] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn t_statistics_vanish_at_the_estimate() {
        let prob = problem(&[0.3, -1.2], &[&[1.0, 2.0], &[-1.0, 0.5], &[0.2, -2.0]]);
        let t = t_statistics(&prob, prob.theta_hat()).unwrap();
        assert!(t.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_column_is_named() {
        let prob = problem(&[0.0, 0.0], &[&[1.0, 0.0], &[-1.0, 0.0]]);
        match t_statistics(&prob, &Vector::zeros(2)) {
            Err(Error::DegenerateColumn { column }) => assert_eq!(column, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn critical_values() {
        assert!((moderate_deviation_critical(1, 0.05).unwrap() - 1.6448536270).abs() < 1e-9);
        assert!((moderate_deviation_critical(100, 0.05).unwrap() - 3.2905267315).abs() < 1e-9);
        assert_eq!(moderate_deviation_critical(1, 0.5).unwrap(), 0.0);
        assert!(moderate_deviation_critical(0, 0.05).is_err());
        assert!(moderate_deviation_critical(3, 1.0).is_err());
    }

    #[test]
    fn maximal_thresholds() {
        let e = std::f64::consts::E;
        assert!((maximal_threshold(1, e).unwrap() - 2f64.sqrt()).abs() < 1e-12);
        assert!((maximal_threshold(100, 100.0).unwrap() - 4.29193).abs() < 1e-5);
        let prob = problem(&[0.0, 0.0], &[&[1.0, 2.0], &[-1.0, -2.0]]);
        let (max_t, _) = maximal_diagnostic(&prob).unwrap();
        assert_eq!(max_t, 0.0);
    }

    #[test]
    fn condition_m_moments() {
        let ones = problem(&[0.0, 0.0], &[&[1.0, 1.0], &[1.0, 1.0], &[1.0, 1.0]]);
        let r = condition_m_diagnostics(&ones);
        assert_eq!(
            (r.min_second, r.max_third_abs, r.max_fourth),
            (1.0, 1.0, 1.0)
        );
        assert!(!r.low_variance());

        let rad = problem(&[0.0], &[&[1.0], &[-1.0], &[-1.0], &[1.0]]);
        let r = condition_m_diagnostics(&rad);
        assert_eq!((r.min_second, r.max_fourth), (1.0, 1.0));

        let twice = problem(&[0.0], &[&[2.0], &[-2.0], &[-2.0], &[2.0]]);
        let r2 = condition_m_diagnostics(&twice);
        assert_eq!(
            (r2.min_second, r2.max_third_abs, r2.max_fourth),
            (
                4.0 * r.min_second,
                8.0 * r.max_third_abs,
                16.0 * r.max_fourth
            )
        );
    }

    fn arb_problem() -> impl Strategy<Value = (MamProblem, Vec<f64>)> {
        (2usize..8, 1usize..5).prop_flat_map(|(n, p)| {
            (
                prop::collection::vec(-3.0..3.0f64, p),
                prop::collection::vec(0.1..2.0f64, n * p),
                prop::collection::vec(prop::bool::ANY, n * p),
                prop::collection::vec(-1.0..1.0f64, p),
            )
                .prop_map(move |(theta, mag, sign, delta)| {
                    let z = Matrix::from_fn(n, p, |i, j| {
                        let k = i * p + j;
                        if sign[k] {
                            mag[k]
                        } else {
                            -mag[k]
                        }
                    });
                    (MamProblem::new(Vector::from_vec(theta), z).unwrap(), delta)
                })
        })
    }

    proptest! {
        #[test]
        fn shifting_nulls_shifts_t((prob, delta) in arb_problem()) {
            let zero = Vector::zeros(prob.p());
            let base = t_statistics(&prob, &zero).unwrap();
            let shifted = t_statistics(&prob, &Vector::from_vec(delta.clone())).unwrap();
            let root_n = (prob.n() as f64).sqrt();
            for j in 0..prob.p() {
                let expect = base.values[j] - root_n * delta[j] / base.scale[j];
                prop_assert!((shifted.values[j] - expect).abs() < 1e-9);
            }
        }

        #[test]
        fn column_scaling_divides_t((prob, _d) in arb_problem(), c in 0.1..10.0f64) {
            let zero = Vector::zeros(prob.p());
            let base = t_statistics(&prob, &zero).unwrap();
            let mut z = prob.influence().clone();
            z.column_mut(0).scale_mut(c);
            let scaled = MamProblem::new(prob.theta_hat().clone(), z).unwrap();
            let t = t_statistics(&scaled, &zero).unwrap();
            prop_assert!((t.values[0] - base.values[0] / c).abs() < 1e-9 * (1.0 + base.values[0].abs()));
        }

        #[test]
        fn critical_value_monotone(p in 1usize..500, alpha in 0.001..0.5f64) {
            let c = moderate_deviation_critical(p, alpha).unwrap();
            prop_assert!(moderate_deviation_critical(p + 1, alpha).unwrap() > c);
            prop_assert!(moderate_deviation_critical(p, alpha * 1.01).unwrap() < c);
        }
    }
}
