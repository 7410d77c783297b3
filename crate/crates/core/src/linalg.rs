//! Shared numerical substrate: dense vectors and matrices, norms, the
//! standard normal distribution, empirical quantiles and a splittable RNG.

use libm::erfc;
use nalgebra::{DMatrix, DVector};
use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

use crate::error::{Error, Result};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// Which vector norm to compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Norm {
    L1,
    L2,
    Linf,
}

pub fn norm(v: &[f64], which: Norm) -> Result<f64> {
    if v.is_empty() {
        return Err(Error::dim("norm of an empty vector"));
    }
    Ok(match which {
        Norm::L1 => v.iter().map(|x| x.abs()).sum(),
        Norm::L2 => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
        Norm::Linf => v.iter().fold(0.0_f64, |m, x| m.max(x.abs())),
    })
}

pub(crate) fn l1(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

pub(crate) fn linf(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// Entrywise max-abs norm of a matrix.
pub(crate) fn mat_linf(m: &Matrix) -> f64 {
    m.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

const SQRT_2: f64 = std::f64::consts::SQRT_2;

/// Φ(x) without input validation. NaN propagates.
pub(crate) fn phi(x: f64) -> f64 {
    if x == f64::INFINITY {
        return 1.0;
    }
    if x == f64::NEG_INFINITY {
        return 0.0;
    }
    0.5 * erfc(-x / SQRT_2)
}

/// 1 − Φ(x), accurate deep in the upper tail.
pub(crate) fn upper_tail(x: f64) -> f64 {
    if x == f64::INFINITY {
        return 0.0;
    }
    if x == f64::NEG_INFINITY {
        return 1.0;
    }
    0.5 * erfc(x / SQRT_2)
}

pub(crate) fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Standard normal CDF.
pub fn std_normal_cdf(x: f64) -> Result<f64> {
    if x.is_nan() {
        return Err(Error::domain("normal cdf of NaN"));
    }
    Ok(phi(x))
}

// Acklam's rational approximation, relative error ~1.2e-9, used as a seed.
const A: [f64; 6] = [
    -3.969_683_028_665_376e1,
    2.209_460_984_245_205e2,
    -2.759_285_104_469_687e2,
    1.383_577_518_672_69e2,
    -3.066_479_806_614_716e1,
    2.506_628_277_459_239,
];
const B: [f64; 5] = [
    -5.447_609_879_822_406e1,
    1.615_858_368_580_409e2,
    -1.556_989_798_598_866e2,
    6.680_131_188_771_972e1,
    -1.328_068_155_288_572e1,
];
const C: [f64; 6] = [
    -7.784_894_002_430_293e-3,
    -3.223_964_580_411_365e-1,
    -2.400_758_277_161_838,
    -2.549_732_539_343_734,
    4.374_664_141_464_968,
    2.938_163_982_698_783,
];
const D: [f64; 4] = [
    7.784_695_709_041_462e-3,
    3.224_671_290_700_398e-1,
    2.445_134_137_142_996,
    3.754_408_661_907_416,
];

fn acklam_seed(p: f64) -> f64 {
    const P_LOW: f64 = 0.02425;
    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    }
}

/// Lower-tail quantile refined against the upper or lower tail, whichever
/// side keeps the residual well conditioned.
fn refine(x: f64, p: f64) -> f64 {
    let density = std_normal_pdf(x);
    if density == 0.0 {
        return x;
    }
    let residual = if p > 0.5 {
        // Φ(x) − p = (1 − p) − Q(x)
        (1.0 - p) - upper_tail(x)
    } else {
        phi(x) - p
    };
    // Halley step: cubic convergence from a ~1e-9 seed.
    let u = residual / density;
    x - u / (1.0 + 0.5 * x * u)
}

/// Inverse standard normal CDF.
pub fn std_normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain(format!(
            "normal quantile needs 0 < p < 1, got {p}"
        )));
    }
    if p == 0.5 {
        return Ok(0.0);
    }
    let mut x = acklam_seed(p);
    for _ in 0..2 {
        x = refine(x, p);
    }
    Ok(x)
}

/// Φ⁻¹(1 − tail) computed without forming 1 − tail, for tiny tail masses.
pub(crate) fn upper_quantile(tail: f64) -> Result<f64> {
    if !(tail > 0.0 && tail < 1.0) {
        return Err(Error::domain(format!(
            "tail probability must lie in (0,1), got {tail}"
        )));
    }
    // Φ⁻¹(1 − t) = −Φ⁻¹(t)
    Ok(-std_normal_quantile(tail)?)
}

/// The ⌈B·level⌉-th order statistic of `samples` (conservative convention).
pub fn empirical_quantile(samples: &[f64], level: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::dim("empirical quantile of an empty sample"));
    }
    if !(level > 0.0 && level <= 1.0) {
        return Err(Error::domain(format!(
            "quantile level must lie in (0,1], got {level}"
        )));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted[order_index(sorted.len(), level)])
}

/// Zero-based index of the ⌈B·level⌉-th order statistic. A relative slack of
/// 1e-12 absorbs representation error in products such as 100·0.95.
pub(crate) fn order_index(len: usize, level: f64) -> usize {
    let b = len as f64;
    let k = (b * level - 1e-12 * b).ceil().max(1.0) as usize;
    k.min(len) - 1
}

/// Quantile of an already sorted sample.
pub(crate) fn sorted_quantile(sorted: &[f64], level: f64) -> f64 {
    sorted[order_index(sorted.len(), level)]
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seedable, splittable random stream backed by ChaCha8.
///
/// `fork(i)` derives a child stream from the parent seed and `i` alone, so
/// forks are reproducible no matter how much the parent has been consumed
/// or which worker evaluates them.
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn fork(&self, index: u64) -> Rng {
        Rng::new(splitmix64(
            self.seed ^ splitmix64(index.wrapping_add(0xA5A5_5A5A_D1B5_4A32)),
        ))
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn index(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn bernoulli(&mut self, prob: f64) -> bool {
        self.uniform() < prob
    }

    pub fn exp1(&mut self) -> f64 {
        Exp1.sample(&mut self.inner)
    }

    /// Student-t with `dof` degrees of freedom as N(0,1)/√(χ²_dof/dof).
    /// Integer `dof` only; χ² is a sum of squared normals.
    pub fn student_t(&mut self, dof: u32) -> f64 {
        let z = self.normal();
        let chi2: f64 = (0..dof).map(|_| self.normal().powi(2)).sum();
        z / (chi2 / dof as f64).sqrt()
    }

    pub fn fill_normal(&mut self, out: &mut [f64]) {
        for x in out {
            *x = self.normal();
        }
    }
}

impl RngCore for Rng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// Column-wise empirical second moments 𝔼ₙ[X²ᵢⱼ].
pub(crate) fn column_second_moments(m: &Matrix) -> Vec<f64> {
    let n = m.nrows() as f64;
    m.column_iter()
        .map(|c| c.iter().map(|x| x * x).sum::<f64>() / n)
        .collect()
}

/// Column means.
pub(crate) fn column_means(m: &Matrix) -> Vector {
    let n = m.nrows() as f64;
    Vector::from_iterator(m.ncols(), m.column_iter().map(|c| c.sum() / n))
}

pub(crate) fn check_finite(values: &[f64], what: &str) -> Result<()> {
    if let Some(i) = values.iter().position(|x| !x.is_finite()) {
        return Err(Error::domain(format!(
            "{what} has a non-finite entry at {i}"
        )));
    }
    Ok(())
}
