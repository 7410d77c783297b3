//! Seeded data-generating processes for Monte Carlo work.
//!
//! Randomness is laid out so that replications are reproducible in any
//! order: for a base seed `s`, design quantities held fixed across
//! replications come from `Rng::new(s).fork(0)`, the true parameter from
//! `fork(2)`, and replication `r` from `fork(1).fork(r)`.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_matrix_file, read_vector_file, write_matrix_csv};
use crate::linalg::{column_means, Matrix, Rng, Vector};
use crate::mam::MamProblem;
use crate::regularized::{generate_sparse_vector, SparsityModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Noise {
    Gaussian,
    /// Student-t rescaled to unit variance; needs `dof > 2`.
    StudentT {
        dof: u32,
    },
}

impl Default for Noise {
    fn default() -> Self {
        Noise::StudentT { dof: 4 }
    }
}

impl Noise {
    fn draw(&self, rng: &mut Rng) -> f64 {
        match *self {
            Noise::Gaussian => rng.normal(),
            Noise::StudentT { dof } => {
                rng.student_t(dof) * ((dof as f64 - 2.0) / dof as f64).sqrt()
            }
        }
    }
}

/// True parameter of a means-type design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MeanShift {
    #[default]
    Zero,
    /// The first `count` coordinates equal `size` standard errors, `size sd_j / sqrt(n)`.
    Signals { count: usize, size: f64 },
    /// Coefficients from a sparsity model (not rescaled).
    Sparse { model: SparsityModel },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Design {
    #[default]
    IdentityCov,
    /// `Cov(W_j, W_k) = rho^{|j-k|}`.
    Toeplitz { rho: f64 },
}

fn default_rho() -> f64 {
    0.5
}

/// Data-generating process; seeds are supplied when it is prepared.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case", deny_unknown_fields)]
pub enum DgpSpec {
    /// `Z_ij = W_ij eps_i`, `W_ij ~ U[0,1]` drawn once, `eps_i ~ t(4)`; `Z_hat = Z`.
    Figure1 {
        n: usize,
        p: usize,
        #[serde(default)]
        shift: MeanShift,
    },
    /// `X_i = theta_0 + eps_i` with iid unit-variance noise; `Z_hat = X - X_bar`.
    MeansModel {
        n: usize,
        p: usize,
        #[serde(default)]
        noise: Noise,
        #[serde(default)]
        shift: MeanShift,
    },
    /// `y = W theta_0 + sigma eps` with Gaussian rows of `W`.
    SparseLinear {
        n: usize,
        p: usize,
        model: SparsityModel,
        sigma: f64,
        #[serde(default)]
        design: Design,
    },
    /// `W = Z Pi + v`, `Pi_kk = pi`, `eps = sigma (rho u + sqrt(1 - rho^2) e)` where
    /// `u` averages the first-stage errors of the `s` active regressors.
    HomoskedasticIv {
        n: usize,
        p: usize,
        m: usize,
        s: usize,
        sigma: f64,
        pi: f64,
        #[serde(default = "default_rho")]
        rho: f64,
    },
    /// `P(Y = 1 | W) = Lambda(W' theta_0)` with standard Gaussian `W`.
    Logistic {
        n: usize,
        p: usize,
        model: SparsityModel,
    },
    /// `D ~ Bernoulli(gamma)`, `Y_ij = baseline + theta_0j D_i + N(0,1)`.
    RctOutcomes {
        n: usize,
        p: usize,
        gamma: f64,
        #[serde(default)]
        effects: Option<Vec<f64>>,
        #[serde(default)]
        baseline: f64,
    },
}

#[derive(Debug, Clone)]
pub enum Dataset {
    Mam {
        problem: MamProblem,
        theta0: Vector,
    },
    /// Linear or logistic regression of `y` on `W`.
    Regression {
        w: Matrix,
        y: Vector,
        theta0: Vector,
    },
    Iv {
        z: Matrix,
        w: Matrix,
        y: Vector,
        theta0: Vector,
    },
    Rct {
        y: Matrix,
        d: Vec<bool>,
        gamma: f64,
        theta0: Vector,
    },
}

fn positive(name: &str, v: usize) -> Result<()> {
    if v == 0 {
        Err(Error::Config(format!("{name} must be at least 1")))
    } else {
        Ok(())
    }
}

fn nonneg(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "{name} must be finite and nonnegative, got {v}"
        )))
    }
}

impl DgpSpec {
    pub fn n(&self) -> usize {
        match *self {
            DgpSpec::Figure1 { n, .. }
            | DgpSpec::MeansModel { n, .. }
            | DgpSpec::SparseLinear { n, .. }
            | DgpSpec::HomoskedasticIv { n, .. }
            | DgpSpec::Logistic { n, .. }
            | DgpSpec::RctOutcomes { n, .. } => n,
        }
    }

    pub fn p(&self) -> usize {
        match *self {
            DgpSpec::Figure1 { p, .. }
            | DgpSpec::MeansModel { p, .. }
            | DgpSpec::SparseLinear { p, .. }
            | DgpSpec::HomoskedasticIv { p, .. }
            | DgpSpec::Logistic { p, .. }
            | DgpSpec::RctOutcomes { p, .. } => p,
        }
    }

    /// Checks parameter validity; returns non-fatal warnings.
    pub fn validate(&self) -> Result<Vec<String>> {
        positive("n", self.n())?;
        positive("p", self.p())?;
        let p = self.p();
        let mut warnings = Vec::new();
        let check_shift = |shift: &MeanShift| match shift {
            MeanShift::Zero => Ok(()),
            MeanShift::Signals { count, size } => {
                if *count > p || !size.is_finite() {
                    Err(Error::Config(format!(
                        "signal count {count} exceeds p or size is not finite"
                    )))
                } else {
                    Ok(())
                }
            }
            MeanShift::Sparse { model } => model.validate(Some(p)),
        };
        match self {
            DgpSpec::Figure1 { shift, .. } => check_shift(shift)?,
            DgpSpec::MeansModel { noise, shift, .. } => {
                if let Noise::StudentT { dof } = noise {
                    if *dof <= 2 {
                        return Err(Error::Config(
                            "t noise needs more than 2 degrees of freedom".into(),
                        ));
                    }
                }
                check_shift(shift)?;
            }
            DgpSpec::SparseLinear {
                model,
                sigma,
                design,
                ..
            } => {
                model.validate(Some(p))?;
                nonneg("sigma", *sigma)?;
                if let Design::Toeplitz { rho } = design {
                    if !(rho.abs() < 1.0) {
                        return Err(Error::Config(format!(
                            "Toeplitz rho must lie in (-1,1), got {rho}"
                        )));
                    }
                }
            }
            DgpSpec::HomoskedasticIv {
                m,
                s,
                sigma,
                pi,
                rho,
                ..
            } => {
                positive("m", *m)?;
                if *s > p {
                    return Err(Error::Config(format!("s = {s} exceeds p = {p}")));
                }
                nonneg("sigma", *sigma)?;
                if !pi.is_finite() {
                    return Err(Error::Config("pi must be finite".into()));
                }
                if !(rho.abs() <= 1.0) {
                    return Err(Error::Config(format!("rho must lie in [-1,1], got {rho}")));
                }
                if *m < p {
                    warnings.push(format!("m = {m} < p = {p}: the model is under-identified"));
                }
            }
            DgpSpec::Logistic { model, .. } => model.validate(Some(p))?,
            DgpSpec::RctOutcomes {
                gamma,
                effects,
                baseline,
                ..
            } => {
                if !(*gamma > 0.0 && *gamma < 1.0) {
                    return Err(Error::Config(format!(
                        "gamma must lie in (0,1), got {gamma}"
                    )));
                }
                if effects
                    .as_ref()
                    .is_some_and(|e| e.len() != p || e.iter().any(|v| !v.is_finite()))
                {
                    return Err(Error::Config("effects must be p finite values".into()));
                }
                if !baseline.is_finite() {
                    return Err(Error::Config("baseline must be finite".into()));
                }
            }
        }
        for w in &warnings {
            log::warn!("{w}");
        }
        Ok(warnings)
    }

    /// Draws everything held fixed across replications.
    pub fn prepare(&self, seed: u64) -> Result<PreparedDgp> {
        self.validate()?;
        let base = Rng::new(seed);
        let (n, p) = (self.n(), self.p());
        let mut fixed_rng = base.fork(0);
        let mut theta_rng = base.fork(2);
        let (design, theta0) = match self {
            DgpSpec::Figure1 { shift, .. } => {
                let w = Matrix::from_fn(n, p, |_, _| fixed_rng.uniform());
                // Var(t4) = 2, so Var(Z_ij | W) averages to 2 E_n[W_ij^2].
                let sd: Vec<f64> = w
                    .column_iter()
                    .map(|c| (2.0 * c.norm_squared() / n as f64).sqrt())
                    .collect();
                let theta0 = shift_vector(shift, p, n, &sd, &mut theta_rng)?;
                (Some(w), theta0)
            }
            DgpSpec::MeansModel { shift, .. } => (
                None,
                shift_vector(shift, p, n, &vec![1.0; p], &mut theta_rng)?,
            ),
            DgpSpec::SparseLinear { model, .. } | DgpSpec::Logistic { model, .. } => {
                (None, generate_sparse_vector(model, p, &mut theta_rng)?)
            }
            DgpSpec::HomoskedasticIv { s, .. } => (
                None,
                Vector::from_fn(p, |j, _| if j < *s { 1.0 } else { 0.0 }),
            ),
            DgpSpec::RctOutcomes { effects, .. } => (
                None,
                effects
                    .as_ref()
                    .map_or_else(|| Vector::zeros(p), |e| Vector::from_column_slice(e)),
            ),
        };
        Ok(PreparedDgp {
            spec: self.clone(),
            replications: base.fork(1),
            design,
            theta0,
        })
    }
}

fn shift_vector(
    shift: &MeanShift,
    p: usize,
    n: usize,
    sd: &[f64],
    rng: &mut Rng,
) -> Result<Vector> {
    let root_n = (n as f64).sqrt();
    Ok(match shift {
        MeanShift::Zero => Vector::zeros(p),
        MeanShift::Signals { count, size } => Vector::from_fn(p, |j, _| {
            if j < *count {
                size * sd[j] / root_n
            } else {
                0.0
            }
        }),
        MeanShift::Sparse { model } => generate_sparse_vector(model, p, rng)?,
    })
}

/// A DGP with its fixed design drawn; replications are independent of call order.
#[derive(Debug, Clone)]
pub struct PreparedDgp {
    spec: DgpSpec,
    replications: Rng,
    design: Option<Matrix>,
    theta0: Vector,
}

impl PreparedDgp {
    pub fn spec(&self) -> &DgpSpec {
        &self.spec
    }

    pub fn theta0(&self) -> &Vector {
        &self.theta0
    }

    /// The fixed `W` of the `W eps` benchmark design.
    pub fn fixed_design(&self) -> Option<&Matrix> {
        self.design.as_ref()
    }

    pub fn generate(&self, rep: u64) -> Result<Dataset> {
        let mut rng = self.replications.fork(rep);
        let theta0 = self.theta0.clone();
        let (n, p) = (self.spec.n(), self.spec.p());
        match &self.spec {
            DgpSpec::Figure1 { .. } => {
                let w = self.design.as_ref().expect("benchmark design is prepared");
                let eps: Vec<f64> = (0..n).map(|_| rng.student_t(4)).collect();
                let z = Matrix::from_fn(n, p, |i, j| w[(i, j)] * eps[i]);
                let theta_hat = &theta0 + column_means(&z);
                Ok(Dataset::Mam {
                    problem: MamProblem::new(theta_hat, z)?,
                    theta0,
                })
            }
            DgpSpec::MeansModel { noise, .. } => {
                let mut eps = Matrix::zeros(n, p);
                for i in 0..n {
                    for j in 0..p {
                        eps[(i, j)] = noise.draw(&mut rng);
                    }
                }
                let means = column_means(&eps);
                let z = Matrix::from_fn(n, p, |i, j| eps[(i, j)] - means[j]);
                Ok(Dataset::Mam {
                    problem: MamProblem::new(&theta0 + means, z)?,
                    theta0,
                })
            }
            DgpSpec::SparseLinear { sigma, design, .. } => {
                let w = gaussian_design(n, p, design, &mut rng);
                let y = &w * &theta0 + Vector::from_fn(n, |_, _| sigma * rng.normal());
                Ok(Dataset::Regression { w, y, theta0 })
            }
            DgpSpec::HomoskedasticIv {
                m,
                s,
                sigma,
                pi,
                rho,
                ..
            } => {
                let m = *m;
                let z = Matrix::from_fn(n, m, |_, _| rng.normal());
                let v = Matrix::from_fn(n, p, |_, _| rng.normal());
                let w = &z * iv_first_stage(m, p, *pi) + &v;
                let root_s = (*s as f64).sqrt();
                let y_noise = Vector::from_fn(n, |i, _| {
                    let u = if *s == 0 {
                        0.0
                    } else {
                        (0..*s).map(|k| v[(i, k)]).sum::<f64>() / root_s
                    };
                    sigma * (rho * u + (1.0 - rho * rho).sqrt() * rng.normal())
                });
                let y = &w * &theta0 + y_noise;
                Ok(Dataset::Iv { z, w, y, theta0 })
            }
            DgpSpec::Logistic { .. } => {
                let w = Matrix::from_fn(n, p, |_, _| rng.normal());
                let index = &w * &theta0;
                let y = Vector::from_fn(n, |i, _| {
                    f64::from(u8::from(rng.bernoulli(logistic(index[i]))))
                });
                Ok(Dataset::Regression { w, y, theta0 })
            }
            DgpSpec::RctOutcomes {
                gamma, baseline, ..
            } => {
                let d: Vec<bool> = (0..n).map(|_| rng.bernoulli(*gamma)).collect();
                let y = Matrix::from_fn(n, p, |i, j| {
                    baseline + if d[i] { theta0[j] } else { 0.0 } + rng.normal()
                });
                Ok(Dataset::Rct {
                    y,
                    d,
                    gamma: *gamma,
                    theta0,
                })
            }
        }
    }
}

/// `figure1_dgp(n, p, seed)`: replication 0 of the `W eps` benchmark design with `theta_0 = 0`.
pub fn figure1_dgp(n: usize, p: usize, seed: u64) -> Result<(MamProblem, Vector)> {
    let spec = DgpSpec::Figure1 {
        n,
        p,
        shift: MeanShift::Zero,
    };
    match spec.prepare(seed)?.generate(0)? {
        Dataset::Mam { problem, theta0 } => Ok((problem, theta0)),
        _ => unreachable!("benchmark dgp yields a MAM dataset"),
    }
}

fn gaussian_design(n: usize, p: usize, design: &Design, rng: &mut Rng) -> Matrix {
    let mut w = Matrix::zeros(n, p);
    let rho = match design {
        Design::IdentityCov => 0.0,
        Design::Toeplitz { rho } => *rho,
    };
    let innov = (1.0 - rho * rho).sqrt();
    for i in 0..n {
        let mut prev = rng.normal();
        w[(i, 0)] = prev;
        for j in 1..p {
            prev = rho * prev + innov * rng.normal();
            w[(i, j)] = prev;
        }
    }
    w
}

/// `Pi` (m x p) with `Pi_kk = pi` for `k < min(m, p)`.
pub fn iv_first_stage(m: usize, p: usize, pi: f64) -> Matrix {
    Matrix::from_fn(m, p, |k, j| if k == j { pi } else { 0.0 })
}

/// Population targets of the homoskedastic IV design when `gamma` is fitted
/// against `E[Z Z'] = I`: `G = -Pi`, `gamma_0 = -Pi'`, `mu_0 = (Pi' Pi)^{-1}`.
pub fn iv_population(m: usize, p: usize, pi: f64) -> Result<(Matrix, Matrix, Matrix)> {
    let big_pi = iv_first_stage(m, p, pi);
    let mu0 = (big_pi.transpose() * &big_pi)
        .try_inverse()
        .ok_or_else(|| Error::Singular("Pi' Pi is singular".into()))?;
    Ok((-&big_pi, -big_pi.transpose(), mu0))
}

fn logistic(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Inverse-propensity estimates with influence values centred at the sample group means.
pub fn rct_problem(y: &Matrix, d: &[bool], gamma: f64) -> Result<MamProblem> {
    let (n, p) = y.shape();
    if d.len() != n {
        return Err(Error::dim("treatment indicator length differs from n"));
    }
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::domain(format!(
            "gamma must lie in (0,1), got {gamma}"
        )));
    }
    let treated = d.iter().filter(|&&x| x).count();
    if treated == 0 || treated == n {
        return Err(Error::domain("both treatment groups must be non-empty"));
    }
    let mut mean1 = vec![0.0; p];
    let mut mean0 = vec![0.0; p];
    for (i, &di) in d.iter().enumerate() {
        let target = if di { &mut mean1 } else { &mut mean0 };
        for j in 0..p {
            target[j] += y[(i, j)];
        }
    }
    mean1.iter_mut().for_each(|v| *v /= treated as f64);
    mean0.iter_mut().for_each(|v| *v /= (n - treated) as f64);
    let ipw = Matrix::from_fn(n, p, |i, j| {
        if d[i] {
            y[(i, j)] / gamma
        } else {
            -y[(i, j)] / (1.0 - gamma)
        }
    });
    let theta_hat = column_means(&ipw);
    let z = Matrix::from_fn(n, p, |i, j| {
        let (a, b) = if d[i] {
            (y[(i, j)] / gamma, 0.0)
        } else {
            (0.0, y[(i, j)] / (1.0 - gamma))
        };
        (a - mean1[j]) - (b - mean0[j])
    });
    MamProblem::new(theta_hat, z)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gamma: Option<f64>,
    roles: BTreeMap<String, String>,
}

impl Dataset {
    pub fn theta0(&self) -> &Vector {
        match self {
            Dataset::Mam { theta0, .. }
            | Dataset::Regression { theta0, .. }
            | Dataset::Iv { theta0, .. }
            | Dataset::Rct { theta0, .. } => theta0,
        }
    }

    /// The MAM view of means-type datasets.
    pub fn to_mam(&self) -> Result<MamProblem> {
        match self {
            Dataset::Mam { problem, .. } => Ok(problem.clone()),
            Dataset::Rct { y, d, gamma, .. } => rct_problem(y, d, *gamma),
            _ => Err(Error::Config(
                "dataset has no many-approximate-means view".into(),
            )),
        }
    }

    fn parts(&self) -> (&'static str, Vec<(&'static str, Matrix)>, Option<f64>) {
        let col = |v: &Vector| Matrix::from_column_slice(v.len(), 1, v.as_slice());
        match self {
            Dataset::Mam { problem, theta0 } => (
                "mam",
                vec![
                    ("theta_hat", col(problem.theta_hat())),
                    ("z_hat", problem.influence().clone()),
                    ("theta0", col(theta0)),
                ],
                None,
            ),
            Dataset::Regression { w, y, theta0 } => (
                "regression",
                vec![("w", w.clone()), ("y", col(y)), ("theta0", col(theta0))],
                None,
            ),
            Dataset::Iv { z, w, y, theta0 } => (
                "iv",
                vec![
                    ("z", z.clone()),
                    ("w", w.clone()),
                    ("y", col(y)),
                    ("theta0", col(theta0)),
                ],
                None,
            ),
            Dataset::Rct {
                y,
                d,
                gamma,
                theta0,
            } => (
                "rct",
                vec![
                    ("y", y.clone()),
                    (
                        "d",
                        Matrix::from_iterator(
                            d.len(),
                            1,
                            d.iter().map(|&b| f64::from(u8::from(b))),
                        ),
                    ),
                    ("theta0", col(theta0)),
                ],
                Some(*gamma),
            ),
        }
    }

    /// One headerless CSV per role plus `manifest.json`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let (kind, parts, gamma) = self.parts();
        let mut roles = BTreeMap::new();
        for (role, m) in parts {
            let file = format!("{role}.csv");
            write_matrix_csv(&m, File::create(dir.join(&file))?)?;
            roles.insert(role.to_string(), file);
        }
        let manifest = Manifest {
            kind: kind.to_string(),
            gamma,
            roles,
        };
        serde_json::to_writer_pretty(File::create(dir.join("manifest.json"))?, &manifest)?;
        Ok(())
    }

    pub fn read_dir(dir: &Path) -> Result<Self> {
        let manifest: Manifest = serde_json::from_reader(File::open(dir.join("manifest.json"))?)?;
        let path = |role: &str| -> Result<std::path::PathBuf> {
            manifest
                .roles
                .get(role)
                .map(|f| dir.join(f))
                .ok_or_else(|| Error::Config(format!("manifest lacks role {role}")))
        };
        let vector = |role: &str| read_vector_file(&path(role)?);
        let matrix = |role: &str| read_matrix_file(&path(role)?);
        match manifest.kind.as_str() {
            "mam" => Ok(Dataset::Mam {
                problem: MamProblem::new(vector("theta_hat")?, matrix("z_hat")?)?,
                theta0: vector("theta0")?,
            }),
            "regression" => Ok(Dataset::Regression {
                w: matrix("w")?,
                y: vector("y")?,
                theta0: vector("theta0")?,
            }),
            "iv" => Ok(Dataset::Iv {
                z: matrix("z")?,
                w: matrix("w")?,
                y: vector("y")?,
                theta0: vector("theta0")?,
            }),
            "rct" => Ok(Dataset::Rct {
                y: matrix("y")?,
                d: vector("d")?.iter().map(|&v| v != 0.0).collect(),
                gamma: manifest
                    .gamma
                    .ok_or_else(|| Error::Config("rct manifest needs gamma".into()))?,
                theta0: vector("theta0")?,
            }),
            other => Err(Error::Config(format!("unknown dataset kind {other}"))),
        }
    }
}
