//! Monte Carlo experiment runner behind the `hdinfer` binary.
//!
//! A run is a pure function of its configuration: replication `r` draws its
//! data from the DGP stream `r` and its bootstrap multipliers from a seed
//! derived from `(seed, r)`, so results do not depend on thread count or
//! scheduling. Aggregates are accumulated in replication order.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bands::{
    band_weights, simultaneous_intervals, simultaneous_intervals_md, SimultaneousBand, WeightMode,
};
use crate::bootstrap::{bootstrap_sup, gaussian_quantile_bound, BootstrapConfig, Scheme};
use crate::dgp::{iv_population, Dataset, DgpSpec, PreparedDgp};
use crate::drgmm::{
    default_penalty_level, drgmm_pipeline, remainder_bounds, DrgmmConfig, DrgmmResult,
    GammaPenalty, MuPenalty, RemainderInputs,
};
use crate::error::{Error, Result};
use crate::io::{read_mam_file, read_matrix_file, read_vector_file};
use crate::linalg::{upper_quantile, Matrix, Rng, Vector};
use crate::mam::{t_statistics, MamProblem};
use crate::rmd::{
    dantzig_regression, iv_rmd, rmd_nonlinear, IvScore, LogisticScore, RmdConfig, RmdResult,
    RmdStatus, ScoreModel,
};
use crate::testing::{
    benjamini_hochberg, bonferroni, holm_stepdown, romano_wolf_stepdown, DecisionTable, Sidedness,
};

pub const SCHEMA_VERSION: u32 = 1;

/// Stream indices under the base seed (the DGP uses 0, 1 and 2).
const BOOTSTRAP_STREAM: u64 = 3;
const PP_STREAM: u64 = 4;

fn one() -> usize {
    1
}

fn default_draws() -> usize {
    500
}

fn gaussian() -> Scheme {
    Scheme::Gaussian
}

fn unit() -> WeightMode {
    WeightMode::Unit
}

fn inv_sd() -> WeightMode {
    WeightMode::InvSd
}

fn half() -> f64 {
    0.5
}

fn yes() -> bool {
    true
}

fn pp_draws() -> usize {
    2000
}

fn pp_grid() -> usize {
    101
}

fn default_c() -> f64 {
    1.1
}

fn default_lambda_alpha() -> f64 {
    0.1
}

/// Bootstrap settings in a configuration; seeds are derived per replication.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BootstrapParams {
    #[serde(default = "gaussian")]
    pub scheme: Scheme,
    #[serde(default = "default_draws")]
    pub draws: usize,
}

impl Default for BootstrapParams {
    fn default() -> Self {
        Self {
            scheme: Scheme::Gaussian,
            draws: default_draws(),
        }
    }
}

impl BootstrapParams {
    fn config(&self, seed: u64) -> BootstrapConfig {
        BootstrapConfig {
            scheme: self.scheme,
            draws: self.draws,
            seed,
        }
    }
}

/// Penalty level of an RMD fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum LambdaSpec {
    Fixed {
        value: f64,
    },
    /// `c sigma n^{-1/2} Phi^{-1}(1 - alpha/(2m))`; `sigma` defaults to the DGP noise scale.
    Ideal {
        #[serde(default = "default_c")]
        c: f64,
        #[serde(default = "default_lambda_alpha")]
        alpha: f64,
        #[serde(default)]
        sigma: Option<f64>,
    },
}

impl LambdaSpec {
    fn resolve(&self, n: usize, m: usize, dgp_sigma: Option<f64>) -> Result<f64> {
        match *self {
            LambdaSpec::Fixed { value } => {
                if value.is_finite() && value >= 0.0 {
                    Ok(value)
                } else {
                    Err(Error::Config(format!(
                        "lambda must be finite and nonnegative, got {value}"
                    )))
                }
            }
            LambdaSpec::Ideal { c, alpha, sigma } => {
                let sigma = sigma
                    .or(dgp_sigma)
                    .ok_or_else(|| Error::Config("the ideal lambda rule needs sigma".into()))?;
                check_alpha(alpha)?;
                if !(c > 0.0 && sigma >= 0.0 && c.is_finite() && sigma.is_finite()) {
                    return Err(Error::Config(
                        "lambda constants must be finite, c > 0 and sigma >= 0".into(),
                    ));
                }
                Ok(c * sigma * upper_quantile(alpha / (2.0 * m as f64))? / (n as f64).sqrt())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandChoice {
    #[default]
    Bootstrap,
    ModerateDeviation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Experiment {
    /// Law of `||sqrt(n)(theta_hat - theta_0)||_inf` against its Gaussian limit
    /// and both bootstraps computed on one sample.
    PpData {
        #[serde(default = "pp_draws")]
        draws: usize,
        #[serde(default = "pp_grid")]
        grid_points: usize,
        #[serde(default)]
        sample_replication: u64,
    },
    /// Simultaneous coverage of `theta_0`.
    Coverage {
        alpha: f64,
        #[serde(default)]
        bootstrap: BootstrapParams,
        #[serde(default = "unit")]
        weight_mode: WeightMode,
        #[serde(default)]
        band: BandChoice,
    },
    /// Bonferroni, Holm, Romano-Wolf and BH against `theta_0 = 0`.
    Fwer {
        alpha: f64,
        #[serde(default)]
        bootstrap: BootstrapParams,
        #[serde(default)]
        sided: Sidedness,
    },
    /// Same procedures, reported for FDR and power.
    Fdr {
        alpha: f64,
        #[serde(default)]
        bootstrap: BootstrapParams,
        #[serde(default)]
        sided: Sidedness,
    },
    /// Estimation error of the RMD estimator.
    RmdRates { lambda: LambdaSpec },
    /// DRGMM intervals and bands in the linear IV model.
    DrgmmInference {
        alpha: f64,
        #[serde(default)]
        bootstrap: BootstrapParams,
        rmd_lambda: LambdaSpec,
        /// `c` in `lambda_bar = c n^{-1/2} Phi^{-1}(1 - 1/(pmn))`.
        #[serde(default = "half")]
        penalty_c: f64,
        /// Fit `gamma` against `E_n[Z Z']` instead of `E_n[g g']`.
        #[serde(default = "yes")]
        homoskedastic: bool,
        #[serde(default = "inv_sd")]
        weight_mode: WeightMode,
    },
    /// Band and decisions for an imported MAM problem (first row `theta_hat`, then `Z_hat`).
    Bands {
        input: PathBuf,
        alpha: f64,
        #[serde(default)]
        bootstrap: BootstrapParams,
        #[serde(default = "unit")]
        weight_mode: WeightMode,
        #[serde(default)]
        sided: Sidedness,
    },
    /// DRGMM on imported linear IV data.
    Estimate {
        z: PathBuf,
        w: PathBuf,
        y: PathBuf,
        alpha: f64,
        #[serde(default)]
        bootstrap: BootstrapParams,
        rmd_lambda: LambdaSpec,
        #[serde(default = "half")]
        penalty_c: f64,
        #[serde(default = "yes")]
        homoskedastic: bool,
        #[serde(default = "inv_sd")]
        weight_mode: WeightMode,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub replications: usize,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub dgp: Option<DgpSpec>,
    pub experiment: Experiment,
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "alpha must lie in (0,1), got {alpha}"
        )))
    }
}

fn check_draws(b: &BootstrapParams) -> Result<()> {
    if b.draws == 0 {
        Err(Error::Config("bootstrap needs at least one draw".into()))
    } else {
        Ok(())
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    /// Checks the configuration; returns non-fatal warnings.
    pub fn validate(&self) -> Result<Vec<String>> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.replications == 0 {
            return Err(Error::Config("replications must be at least 1".into()));
        }
        let simulated = !matches!(
            self.experiment,
            Experiment::Bands { .. } | Experiment::Estimate { .. }
        );
        let warnings = match (&self.dgp, simulated) {
            (Some(d), true) => d.validate()?,
            (None, true) => return Err(Error::Config("this experiment needs a dgp".into())),
            (Some(_), false) => {
                return Err(Error::Config(
                    "imported-data experiments take no dgp".into(),
                ))
            }
            (None, false) => {
                if self.replications != 1 {
                    return Err(Error::Config(
                        "imported-data experiments run one replication".into(),
                    ));
                }
                Vec::new()
            }
        };
        let is_mam = matches!(
            self.dgp,
            Some(
                DgpSpec::Figure1 { .. } | DgpSpec::MeansModel { .. } | DgpSpec::RctOutcomes { .. }
            )
        );
        match &self.experiment {
            Experiment::PpData {
                draws, grid_points, ..
            } => {
                if !matches!(
                    self.dgp,
                    Some(DgpSpec::Figure1 { .. } | DgpSpec::MeansModel { .. })
                ) {
                    return Err(Error::Config(
                        "pp_data needs the figure1 or means_model dgp".into(),
                    ));
                }
                if *draws == 0 || *grid_points < 2 {
                    return Err(Error::Config(
                        "pp_data needs draws >= 1 and grid_points >= 2".into(),
                    ));
                }
            }
            Experiment::Coverage {
                alpha, bootstrap, ..
            }
            | Experiment::Fwer {
                alpha, bootstrap, ..
            }
            | Experiment::Fdr {
                alpha, bootstrap, ..
            } => {
                check_alpha(*alpha)?;
                check_draws(bootstrap)?;
                if !is_mam {
                    return Err(Error::Config(
                        "this experiment needs a many-means dgp".into(),
                    ));
                }
            }
            Experiment::RmdRates { .. } => {
                if !matches!(
                    self.dgp,
                    Some(
                        DgpSpec::SparseLinear { .. }
                            | DgpSpec::HomoskedasticIv { .. }
                            | DgpSpec::Logistic { .. }
                    )
                ) {
                    return Err(Error::Config(
                        "rmd_rates needs a regression, IV or logistic dgp".into(),
                    ));
                }
            }
            Experiment::DrgmmInference {
                alpha,
                bootstrap,
                penalty_c,
                ..
            } => {
                check_alpha(*alpha)?;
                check_draws(bootstrap)?;
                check_penalty_c(*penalty_c)?;
                if !matches!(self.dgp, Some(DgpSpec::HomoskedasticIv { .. })) {
                    return Err(Error::Config(
                        "drgmm_inference needs the homoskedastic_iv dgp".into(),
                    ));
                }
            }
            Experiment::Bands {
                alpha, bootstrap, ..
            } => {
                check_alpha(*alpha)?;
                check_draws(bootstrap)?;
            }
            Experiment::Estimate {
                alpha,
                bootstrap,
                penalty_c,
                ..
            } => {
                check_alpha(*alpha)?;
                check_draws(bootstrap)?;
                check_penalty_c(*penalty_c)?;
            }
        }
        Ok(warnings)
    }
}

fn check_penalty_c(c: f64) -> Result<()> {
    if c.is_finite() && c >= 0.0 {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "penalty_c must be finite and nonnegative, got {c}"
        )))
    }
}

/// Per-replication metrics with mean and Monte Carlo standard error aggregates.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    pub seed: u64,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub warnings: Vec<Vec<String>>,
}

impl ResultTable {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }

    /// Column mean, summed in replication order.
    pub fn mean(&self, name: &str) -> Option<f64> {
        let col = self.column(name)?;
        Some(col.iter().sum::<f64>() / col.len() as f64)
    }

    /// `sd / sqrt(R)`; NaN for a single replication.
    pub fn se(&self, name: &str) -> Option<f64> {
        let col = self.column(name)?;
        let r = col.len() as f64;
        let mean = col.iter().sum::<f64>() / r;
        let ss: f64 = col.iter().map(|v| (v - mean).powi(2)).sum();
        Some((ss / (r - 1.0)).sqrt() / r.sqrt())
    }

    /// Header `replication, seed, warnings, <metrics>`, one row per
    /// replication, then `mean` and `se` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["replication".to_string(), "seed".into(), "warnings".into()];
        header.extend(self.columns.iter().cloned());
        w.write_record(&header)?;
        for (r, row) in self.rows.iter().enumerate() {
            let mut rec = vec![
                r.to_string(),
                self.seed.to_string(),
                self.warnings[r].len().to_string(),
            ];
            rec.extend(row.iter().map(|v| format!("{v:?}")));
            w.write_record(&rec)?;
        }
        let n_warn: Vec<f64> = self.warnings.iter().map(|w| w.len() as f64).collect();
        let r = n_warn.len() as f64;
        for label in ["mean", "se"] {
            let stat = |vals: &[f64]| {
                let mean = vals.iter().sum::<f64>() / r;
                if label == "mean" {
                    mean
                } else {
                    (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (r - 1.0)).sqrt()
                        / r.sqrt()
                }
            };
            let mut rec = vec![
                label.to_string(),
                self.seed.to_string(),
                format!("{:?}", stat(&n_warn)),
            ];
            for k in 0..self.columns.len() {
                let col: Vec<f64> = self.rows.iter().map(|row| row[k]).collect();
                rec.push(format!("{:?}", stat(&col)));
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Distribution functions compared in a P-P plot.
#[derive(Debug, Clone, PartialEq)]
pub struct PpData {
    /// One sup statistic per replication.
    pub empirical: Vec<f64>,
    pub gaussian_limit: Vec<f64>,
    pub gaussian_bootstrap: Vec<f64>,
    pub empirical_bootstrap: Vec<f64>,
    pub grid_points: usize,
}

fn ecdf(sorted: &[f64], x: f64) -> f64 {
    sorted.partition_point(|v| *v <= x) as f64 / sorted.len() as f64
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

impl PpData {
    /// `sup_x |F_emp(x) - F_approx(x)|` over `x` in `[lo, hi]`, evaluated at
    /// every jump of either function and at both endpoints.
    pub fn max_gap(empirical: &[f64], approx: &[f64], lo: f64, hi: f64) -> f64 {
        let (a, b) = (sorted(empirical), sorted(approx));
        let mut points: Vec<f64> = a
            .iter()
            .chain(&b)
            .copied()
            .filter(|x| *x >= lo && *x <= hi)
            .collect();
        points.push(lo);
        points.push(hi);
        points
            .iter()
            .map(|&x| (ecdf(&a, x) - ecdf(&b, x)).abs())
            .fold(0.0, f64::max)
    }

    /// Rows `(x, F_emp, F_limit, F_gauss_boot, F_emp_boot)` on an even grid over the pooled range.
    pub fn curve(&self) -> Vec<[f64; 5]> {
        let curves = [
            sorted(&self.empirical),
            sorted(&self.gaussian_limit),
            sorted(&self.gaussian_bootstrap),
            sorted(&self.empirical_bootstrap),
        ];
        let lo = curves.iter().map(|c| c[0]).fold(f64::INFINITY, f64::min);
        let hi = curves
            .iter()
            .map(|c| c[c.len() - 1])
            .fold(f64::NEG_INFINITY, f64::max);
        let g = self.grid_points;
        (0..g)
            .map(|k| {
                let x = lo + (hi - lo) * k as f64 / (g - 1) as f64;
                [
                    x,
                    ecdf(&curves[0], x),
                    ecdf(&curves[1], x),
                    ecdf(&curves[2], x),
                    ecdf(&curves[3], x),
                ]
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "x",
            "empirical",
            "gaussian_limit",
            "gaussian_bootstrap",
            "empirical_bootstrap",
        ])?;
        for row in self.curve() {
            w.write_record(row.iter().map(|v| format!("{v:?}")))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Owned decisions of the four testing procedures.
#[derive(Debug, Clone)]
pub struct Decisions {
    pub t: crate::mam::TStats,
    pub bonferroni: crate::testing::FwerResult,
    pub holm: crate::testing::FwerResult,
    pub romano_wolf: crate::testing::FwerResult,
    pub bh: crate::testing::FdrResult,
}

impl Decisions {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        DecisionTable {
            t: &self.t,
            bonferroni: &self.bonferroni,
            holm: &self.holm,
            romano_wolf: &self.romano_wolf,
            bh: &self.bh,
        }
        .write_csv(out)
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub config: ExperimentConfig,
    pub metrics: ResultTable,
    pub pp: Option<PpData>,
    pub decisions: Option<Decisions>,
    pub band: Option<SimultaneousBand>,
    pub drgmm: Option<DrgmmResult>,
}

impl ExperimentOutput {
    /// Writes `metrics.csv`, `config_echo.json` and whichever optional files apply.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        let mut create = |name: &str| -> Result<BufWriter<File>> {
            let path = dir.join(name);
            written.push(path.clone());
            Ok(BufWriter::new(File::create(path)?))
        };
        self.metrics.write_csv(create("metrics.csv")?)?;
        let mut echo = create("config_echo.json")?;
        serde_json::to_writer_pretty(&mut echo, &self.config)?;
        echo.write_all(b"\n")?;
        echo.flush()?;
        if let Some(pp) = &self.pp {
            pp.write_csv(create("pp_curve.csv")?)?;
        }
        if let Some(d) = &self.decisions {
            d.write_csv(create("decisions.csv")?)?;
        }
        if let Some(b) = &self.band {
            b.write_csv(create("bands.csv")?)?;
        }
        if let Some(r) = &self.drgmm {
            let mut f = create("drgmm.json")?;
            r.write_json(&mut f)?;
            f.write_all(b"\n")?;
            f.flush()?;
            r.write_scores_csv(create("scores.csv")?)?;
        }
        Ok(written)
    }
}

/// Runs `f` over replications `0..r`, in parallel when the feature is on.
/// Output order is replication order either way.
fn map_replications<T, F>(r: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..r as u64).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..r as u64).map(f).collect()
    }
}

fn bootstrap_seed(seed: u64, rep: u64) -> u64 {
    Rng::new(seed).fork(BOOTSTRAP_STREAM).fork(rep).seed()
}

fn flag(b: bool) -> f64 {
    f64::from(u8::from(b))
}

struct Replication {
    metrics: Vec<f64>,
    warnings: Vec<String>,
}

impl Replication {
    fn clean(metrics: Vec<f64>) -> Self {
        Self {
            metrics,
            warnings: Vec::new(),
        }
    }
}

fn collect_table(
    seed: u64,
    columns: Vec<String>,
    reps: Vec<Result<Replication>>,
) -> Result<ResultTable> {
    let mut rows = Vec::with_capacity(reps.len());
    let mut warnings = Vec::with_capacity(reps.len());
    for (r, rep) in reps.into_iter().enumerate() {
        let rep = rep.map_err(|e| Error::Config(format!("replication {r}: {e}")))?;
        for w in &rep.warnings {
            log::warn!("replication {r}: {w}");
        }
        rows.push(rep.metrics);
        warnings.push(rep.warnings);
    }
    Ok(ResultTable {
        seed,
        columns,
        rows,
        warnings,
    })
}

fn names(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

/// Runs the experiment on the current thread pool.
pub fn run(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    config.validate()?;
    match &config.experiment {
        Experiment::Bands { .. } => return run_bands(config),
        Experiment::Estimate { .. } => return run_estimate(config),
        _ => {}
    }
    let dgp = config
        .dgp
        .as_ref()
        .expect("validated")
        .prepare(config.seed)?;
    match &config.experiment {
        Experiment::PpData { .. } => run_pp(config, &dgp),
        Experiment::Coverage { .. } => run_coverage(config, &dgp),
        Experiment::Fwer { .. } | Experiment::Fdr { .. } => run_testing(config, &dgp),
        Experiment::RmdRates { .. } => run_rmd_rates(config, &dgp),
        Experiment::DrgmmInference { .. } => run_drgmm(config, &dgp),
        Experiment::Bands { .. } | Experiment::Estimate { .. } => unreachable!(),
    }
}

/// As [`run`], on a dedicated pool of `threads` workers when given.
pub fn run_with_threads(
    config: &ExperimentConfig,
    threads: Option<usize>,
) -> Result<ExperimentOutput> {
    #[cfg(feature = "parallel")]
    if let Some(k) = threads {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build()
            .map_err(|e| Error::Resource(e.to_string()))?;
        return pool.install(|| run(config));
    }
    #[cfg(not(feature = "parallel"))]
    let _ = threads;
    run(config)
}

fn mam_of(dgp: &PreparedDgp, rep: u64) -> Result<MamProblem> {
    dgp.generate(rep)?.to_mam()
}

fn output(config: &ExperimentConfig, metrics: ResultTable) -> ExperimentOutput {
    ExperimentOutput {
        config: config.clone(),
        metrics,
        pp: None,
        decisions: None,
        band: None,
        drgmm: None,
    }
}

/// Square-root factor `F` with `F'F / rows` equal to the covariance of
/// `sqrt(n)(theta_hat - theta_0)`, for designs where it is known.
fn limit_factor(dgp: &PreparedDgp) -> Result<Matrix> {
    match dgp.spec() {
        DgpSpec::Figure1 { .. } => Ok(dgp.fixed_design().expect("benchmark design") * 2f64.sqrt()),
        DgpSpec::MeansModel { p, .. } => Ok(Matrix::identity(*p, *p) * (*p as f64).sqrt()),
        _ => Err(Error::Config("no known Gaussian limit for this dgp".into())),
    }
}

fn run_pp(config: &ExperimentConfig, dgp: &PreparedDgp) -> Result<ExperimentOutput> {
    let Experiment::PpData {
        draws,
        grid_points,
        sample_replication,
    } = config.experiment
    else {
        unreachable!()
    };
    let theta0 = dgp.theta0().clone();
    let reps = map_replications(config.replications, |r| {
        let prob = mam_of(dgp, r)?;
        let root_n = (prob.n() as f64).sqrt();
        let stat = (prob.theta_hat() - &theta0).amax() * root_n;
        Ok(Replication::clean(vec![stat]))
    });
    let metrics = collect_table(config.seed, names(&["sup_stat"]), reps)?;
    let stream = Rng::new(config.seed).fork(PP_STREAM);
    let factor = limit_factor(dgp)?;
    let p = factor.ncols();
    let limit_problem = MamProblem::new(Vector::zeros(p), factor)?;
    let unit = vec![1.0; p];
    let gaussian_limit = bootstrap_sup(
        &limit_problem,
        &unit,
        &BootstrapConfig::gaussian(draws, stream.fork(0).seed()),
    )?;
    let sample = mam_of(dgp, sample_replication)?;
    let gb = bootstrap_sup(
        &sample,
        &unit,
        &BootstrapConfig::gaussian(draws, stream.fork(1).seed()),
    )?;
    let eb = bootstrap_sup(
        &sample,
        &unit,
        &BootstrapConfig::empirical(draws, stream.fork(2).seed()),
    )?;
    let mut out = output(config, metrics);
    out.pp = Some(PpData {
        empirical: out.metrics.column("sup_stat").expect("column exists"),
        gaussian_limit: gaussian_limit.values,
        gaussian_bootstrap: gb.values,
        empirical_bootstrap: eb.values,
        grid_points,
    });
    Ok(out)
}

fn run_coverage(config: &ExperimentConfig, dgp: &PreparedDgp) -> Result<ExperimentOutput> {
    let Experiment::Coverage {
        alpha,
        bootstrap,
        weight_mode,
        band,
    } = config.experiment
    else {
        unreachable!()
    };
    let theta0 = dgp.theta0().clone();
    let make_band = |prob: &MamProblem, r: u64| -> Result<SimultaneousBand> {
        match band {
            BandChoice::Bootstrap => simultaneous_intervals(
                prob,
                alpha,
                weight_mode,
                &bootstrap.config(bootstrap_seed(config.seed, r)),
            ),
            BandChoice::ModerateDeviation => simultaneous_intervals_md(prob, alpha),
        }
    };
    let reps = map_replications(config.replications, |r| {
        let prob = mam_of(dgp, r)?;
        let b = make_band(&prob, r)?;
        let weights = band_weights(&prob, weight_mode)?;
        let scales = prob.scales()?;
        let sigma_bar = scales
            .iter()
            .zip(&weights)
            .fold(0.0_f64, |m, (s, w)| m.max(s * w));
        let bound = gaussian_quantile_bound(sigma_bar, prob.p(), alpha)?;
        let max_radius = (0..prob.p()).map(|j| b.radius(j)).fold(0.0, f64::max);
        Ok(Replication::clean(vec![
            flag(b.covers(&theta0)),
            b.lambda_used,
            bound,
            flag(b.lambda_used <= bound),
            max_radius,
        ]))
    });
    let metrics = collect_table(
        config.seed,
        names(&[
            "covered",
            "lambda_used",
            "quantile_bound",
            "bound_holds",
            "max_radius",
        ]),
        reps,
    )?;
    let mut out = output(config, metrics);
    out.band = Some(make_band(&mam_of(dgp, 0)?, 0)?);
    Ok(out)
}

fn decide(
    prob: &MamProblem,
    alpha: f64,
    cfg: &BootstrapConfig,
    sided: Sidedness,
) -> Result<Decisions> {
    let null = Vector::zeros(prob.p());
    let t = t_statistics(prob, &null)?;
    Ok(Decisions {
        bonferroni: bonferroni(&t, alpha, sided)?,
        holm: holm_stepdown(&t, alpha, sided)?,
        romano_wolf: romano_wolf_stepdown(prob, &null, alpha, cfg, sided)?,
        bh: benjamini_hochberg(&t, alpha, sided)?,
        t,
    })
}

fn run_testing(config: &ExperimentConfig, dgp: &PreparedDgp) -> Result<ExperimentOutput> {
    let (Experiment::Fwer {
        alpha,
        bootstrap,
        sided,
    }
    | Experiment::Fdr {
        alpha,
        bootstrap,
        sided,
    }) = config.experiment
    else {
        unreachable!()
    };
    let theta0 = dgp.theta0().clone();
    let true_null: Vec<bool> = theta0
        .iter()
        .map(|&v| match sided {
            Sidedness::OneSided => v <= 0.0,
            Sidedness::TwoSided => v == 0.0,
        })
        .collect();
    let n_false = true_null.iter().filter(|t| !**t).count();
    let reps = map_replications(config.replications, |r| {
        let prob = mam_of(dgp, r)?;
        let d = decide(
            &prob,
            alpha,
            &bootstrap.config(bootstrap_seed(config.seed, r)),
            sided,
        )?;
        let false_rej = |set: &[usize]| set.iter().filter(|&&j| true_null[j]).count();
        let power = |set: &[usize]| {
            if n_false == 0 {
                f64::NAN
            } else {
                (set.len() - false_rej(set)) as f64 / n_false as f64
            }
        };
        let fdp = if d.bh.rejected.is_empty() {
            0.0
        } else {
            false_rej(&d.bh.rejected) as f64 / d.bh.rejected.len() as f64
        };
        let nested = d
            .bonferroni
            .rejected
            .iter()
            .all(|j| d.holm.rejected.contains(j));
        Ok(Replication::clean(vec![
            flag(false_rej(&d.bonferroni.rejected) > 0),
            flag(false_rej(&d.holm.rejected) > 0),
            flag(false_rej(&d.romano_wolf.rejected) > 0),
            flag(false_rej(&d.bh.rejected) > 0),
            d.bonferroni.rejected.len() as f64,
            d.holm.rejected.len() as f64,
            d.romano_wolf.rejected.len() as f64,
            d.bh.rejected.len() as f64,
            fdp,
            power(&d.holm.rejected),
            power(&d.romano_wolf.rejected),
            power(&d.bh.rejected),
            flag(nested),
        ]))
    });
    let metrics = collect_table(
        config.seed,
        names(&[
            "fwe_bonf",
            "fwe_holm",
            "fwe_rw",
            "fwe_bh",
            "rej_bonf",
            "rej_holm",
            "rej_rw",
            "rej_bh",
            "fdp_bh",
            "power_holm",
            "power_rw",
            "power_bh",
            "nested_bonf_holm",
        ]),
        reps,
    )?;
    let mut out = output(config, metrics);
    out.decisions = Some(decide(
        &mam_of(dgp, 0)?,
        alpha,
        &bootstrap.config(bootstrap_seed(config.seed, 0)),
        sided,
    )?);
    Ok(out)
}

fn dgp_sigma(spec: &DgpSpec) -> Option<f64> {
    match *spec {
        DgpSpec::SparseLinear { sigma, .. } | DgpSpec::HomoskedasticIv { sigma, .. } => Some(sigma),
        // |W_k (Y - Lambda)| has conditional sd at most 1/2 per unit-variance regressor.
        DgpSpec::Logistic { .. } => Some(0.5),
        _ => None,
    }
}

fn rmd_fit(ds: &Dataset, lambda: &LambdaSpec, sigma: Option<f64>) -> Result<RmdResult> {
    match ds {
        Dataset::Regression { w, y, .. } => {
            dantzig_regression(w, y, lambda.resolve(y.len(), w.ncols(), sigma)?)
        }
        Dataset::Iv { z, w, y, .. } => iv_rmd(z, w, y, lambda.resolve(y.len(), z.ncols(), sigma)?),
        _ => Err(Error::Config("dataset is not a regression".into())),
    }
}

fn run_rmd_rates(config: &ExperimentConfig, dgp: &PreparedDgp) -> Result<ExperimentOutput> {
    let Experiment::RmdRates { lambda } = config.experiment else {
        unreachable!()
    };
    let sigma = dgp_sigma(dgp.spec());
    let is_logistic = matches!(dgp.spec(), DgpSpec::Logistic { .. });
    let theta0 = dgp.theta0().clone();
    let reps = map_replications(config.replications, |r| {
        let ds = dgp.generate(r)?;
        let fit = if is_logistic {
            let Dataset::Regression { w, y, .. } = &ds else {
                unreachable!()
            };
            let score = LogisticScore::new(w.clone(), y.clone())?;
            let lam = lambda.resolve(score.n(), score.m(), sigma)?;
            rmd_nonlinear(&score, &RmdConfig::new(lam), &Vector::zeros(score.p()))?
        } else {
            rmd_fit(&ds, &lambda, sigma)?
        };
        let mut warnings = Vec::new();
        let theta_hat = match fit.status {
            RmdStatus::Infeasible => {
                warnings.push("rmd program infeasible; using theta_hat = 0".to_string());
                Vector::zeros(theta0.len())
            }
            RmdStatus::MaxIterations => {
                warnings.push("rmd reached the iteration limit".to_string());
                fit.theta_hat.clone()
            }
            RmdStatus::Optimal => fit.theta_hat.clone(),
        };
        let err = &theta_hat - &theta0;
        Ok(Replication {
            metrics: vec![
                err.iter().map(|v| v.abs()).sum(),
                err.norm(),
                err.amax(),
                flag(fit.status == RmdStatus::Infeasible),
                fit.iterations as f64,
            ],
            warnings,
        })
    });
    let metrics = collect_table(
        config.seed,
        names(&["err_l1", "err_l2", "err_linf", "infeasible", "iterations"]),
        reps,
    )?;
    Ok(output(config, metrics))
}

struct DrgmmSettings {
    alpha: f64,
    bootstrap: BootstrapParams,
    rmd_lambda: LambdaSpec,
    penalty_c: f64,
    homoskedastic: bool,
    weight_mode: WeightMode,
}

fn fit_drgmm(score: &IvScore, s: &DrgmmSettings, sigma: Option<f64>) -> Result<DrgmmResult> {
    let (n, m, p) = (score.n(), score.m(), score.p());
    let lam = s.rmd_lambda.resolve(n, m, sigma)?;
    let bar = default_penalty_level(n, p, m, s.penalty_c)?;
    let omega = s.homoskedastic.then(|| score.z.tr_mul(&score.z) / n as f64);
    drgmm_pipeline(
        score,
        &DrgmmConfig {
            rmd: RmdConfig::new(lam),
            gamma_penalty: GammaPenalty::Fixed {
                lambda: vec![bar; p],
            },
            mu_penalty: MuPenalty::Fixed {
                lambda: vec![2.0 * bar; p],
            },
            omega_for_gamma: omega,
            theta_init: None,
        },
    )
}

fn drgmm_band(res: &DrgmmResult, s: &DrgmmSettings, seed: u64) -> Result<SimultaneousBand> {
    simultaneous_intervals(
        &res.to_mam()?,
        s.alpha,
        s.weight_mode,
        &s.bootstrap.config(seed),
    )
}

fn run_drgmm(config: &ExperimentConfig, dgp: &PreparedDgp) -> Result<ExperimentOutput> {
    let Experiment::DrgmmInference {
        alpha,
        bootstrap,
        rmd_lambda,
        penalty_c,
        homoskedastic,
        weight_mode,
    } = config.experiment
    else {
        unreachable!()
    };
    let settings = DrgmmSettings {
        alpha,
        bootstrap,
        rmd_lambda,
        penalty_c,
        homoskedastic,
        weight_mode,
    };
    let DgpSpec::HomoskedasticIv {
        m, p, pi, sigma, ..
    } = *dgp.spec()
    else {
        unreachable!()
    };
    let (_, gamma0, mu0) = iv_population(m, p, pi)?;
    // Without the shortcut gamma targets G' (sigma^2 E[ZZ'])^{-1}.
    let scale = if homoskedastic { 1.0 } else { sigma * sigma };
    let (gamma0, mu0) = (gamma0 / scale, mu0 * scale);
    let theta0 = dgp.theta0().clone();
    let z_crit = upper_quantile(alpha / 2.0)?;
    let fit_rep = |r: u64| -> Result<(IvScore, DrgmmResult)> {
        let Dataset::Iv { z, w, y, .. } = dgp.generate(r)? else {
            unreachable!()
        };
        let score = IvScore::new(z, w, y)?;
        let res = fit_drgmm(&score, &settings, Some(sigma))?;
        Ok((score, res))
    };
    let reps = map_replications(config.replications, |r| {
        let (score, res) = fit_rep(r)?;
        let n = score.n();
        let root_n = (n as f64).sqrt();
        let band = drgmm_band(&res, &settings, bootstrap_seed(config.seed, r))?;
        let mut metrics = vec![flag(band.covers(&theta0))];
        for j in 0..p {
            let half = z_crit * (res.v_hat[(j, j)] / n as f64).sqrt();
            metrics.push(flag((res.theta_check[j] - theta0[j]).abs() <= half));
        }
        let g_tilde = score.jacobian(&theta0)?;
        let g_at_theta0 = score.mean_score(&theta0)?;
        let rem = remainder_bounds(&RemainderInputs {
            mu: &res.mu.rows,
            gamma: &res.gamma.rows,
            g_hat: &res.plugins.g_hat,
            g_tilde: &g_tilde,
            theta_hat: &res.theta_hat,
            theta0: &theta0,
            g_hat_at_theta0: &g_at_theta0,
            gamma0: &gamma0,
            mu0: &mu0,
            n,
        })?;
        let err = &res.theta_check - &theta0;
        metrics.extend([
            rem.r1,
            rem.r2,
            rem.r3,
            err.norm(),
            (&res.theta_hat - &theta0).norm(),
            flag(res.rmd.status == RmdStatus::Infeasible),
            (res.gamma.fallback.len() + res.mu.fallback.len()) as f64,
            root_n * err.amax(),
        ]);
        Ok(Replication {
            metrics,
            warnings: res.warnings.clone(),
        })
    });
    let mut columns = vec!["cover_band".to_string()];
    columns.extend((1..=p).map(|j| format!("cover_{j}")));
    columns.extend(names(&[
        "r1",
        "r2",
        "r3",
        "err_l2_check",
        "err_l2_rmd",
        "rmd_infeasible",
        "fallback_rows",
        "sup_stat",
    ]));
    let metrics = collect_table(config.seed, columns, reps)?;
    let (_, first) = fit_rep(0)?;
    let mut out = output(config, metrics);
    out.band = Some(drgmm_band(
        &first,
        &settings,
        bootstrap_seed(config.seed, 0),
    )?);
    out.drgmm = Some(first);
    Ok(out)
}

fn run_bands(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    let Experiment::Bands {
        ref input,
        alpha,
        bootstrap,
        weight_mode,
        sided,
    } = config.experiment
    else {
        unreachable!()
    };
    let prob = read_mam_file(input)?;
    let cfg = bootstrap.config(bootstrap_seed(config.seed, 0));
    let band = simultaneous_intervals(&prob, alpha, weight_mode, &cfg)?;
    let decisions = decide(&prob, alpha, &cfg, sided)?;
    let metrics = ResultTable {
        seed: config.seed,
        columns: names(&["lambda_used", "rej_bonf", "rej_holm", "rej_rw", "rej_bh"]),
        rows: vec![vec![
            band.lambda_used,
            decisions.bonferroni.rejected.len() as f64,
            decisions.holm.rejected.len() as f64,
            decisions.romano_wolf.rejected.len() as f64,
            decisions.bh.rejected.len() as f64,
        ]],
        warnings: vec![Vec::new()],
    };
    let mut out = output(config, metrics);
    out.band = Some(band);
    out.decisions = Some(decisions);
    Ok(out)
}

fn run_estimate(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    let Experiment::Estimate {
        ref z,
        ref w,
        ref y,
        alpha,
        bootstrap,
        rmd_lambda,
        penalty_c,
        homoskedastic,
        weight_mode,
    } = config.experiment
    else {
        unreachable!()
    };
    let settings = DrgmmSettings {
        alpha,
        bootstrap,
        rmd_lambda,
        penalty_c,
        homoskedastic,
        weight_mode,
    };
    let score = IvScore::new(
        read_matrix_file(z)?,
        read_matrix_file(w)?,
        read_vector_file(y)?,
    )?;
    let res = fit_drgmm(&score, &settings, None)?;
    let seed = bootstrap_seed(config.seed, 0);
    let band = drgmm_band(&res, &settings, seed)?;
    let decisions = decide(
        &res.to_mam()?,
        alpha,
        &bootstrap.config(seed),
        Sidedness::TwoSided,
    )?;
    let metrics = ResultTable {
        seed: config.seed,
        columns: names(&[
            "rmd_infeasible",
            "rmd_slack",
            "lambda_used",
            "fallback_rows",
        ]),
        rows: vec![vec![
            flag(res.rmd.status == RmdStatus::Infeasible),
            res.rmd.slack,
            band.lambda_used,
            (res.gamma.fallback.len() + res.mu.fallback.len()) as f64,
        ]],
        warnings: vec![res.warnings.clone()],
    };
    let mut out = output(config, metrics);
    out.band = Some(band);
    out.decisions = Some(decisions);
    out.drgmm = Some(res);
    Ok(out)
}
