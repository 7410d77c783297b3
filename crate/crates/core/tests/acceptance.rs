//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs with a plain `main` so the lines reach the terminal uncaptured.
//! Pass criterion numbers as arguments to run a subset, e.g.
//! `cargo test --test acceptance -- 4 12`.
//!
//! Failures are reported but only fail the process when
//! `HDINFER_ACCEPTANCE_STRICT=1`, so the rest of the workspace suite still runs.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::Command;
use std::time::Instant;

use hdinfer::drgmm::{drgmm_pipeline, DrgmmConfig, GammaPenalty, MuPenalty};
use hdinfer::experiment::{run, ExperimentConfig, ExperimentOutput, PpData};
use hdinfer::linalg::Rng;
use hdinfer::lp::{solve_lp, LinearProgram, LpStatus, Sense};
use hdinfer::regularized::{
    generate_sparse_vector, select_lambda, soft_threshold, LambdaRule, SparsityModel,
};
use hdinfer::rmd::{dantzig_regression, IvScore, RmdConfig};
use hdinfer::{Matrix, Vector};

type Verdict = (bool, String);

fn run_config(json: &str) -> ExperimentOutput {
    run(&ExperimentConfig::from_json(json).expect("config parses")).expect("experiment runs")
}

/// `sqrt(q (1 - q) / r)`.
fn binomial_se(q: f64, r: usize) -> f64 {
    (q * (1.0 - q) / r as f64).sqrt()
}

// ---------------------------------------------------------------- criterion 1

#[derive(Clone, Copy, PartialEq)]
enum Row {
    Le,
    Ge,
    Eq,
}

/// Minimum of `c'x` over the vertices of `{rows, x >= 0}`, by solving every
/// square subsystem of active constraints. `None` when there is no vertex.
fn vertex_minimum(c: &[f64], a: &Matrix, b: &[f64], senses: &[Row]) -> Option<f64> {
    let n = c.len();
    let mut rows: Vec<(Vec<f64>, f64, Row)> = (0..a.nrows())
        .map(|i| (a.row(i).iter().copied().collect(), b[i], senses[i]))
        .collect();
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        rows.push((e, 0.0, Row::Ge));
    }
    let total = rows.len();
    let mut best: Option<f64> = None;
    let mut subset: Vec<usize> = (0..n).collect();
    if n > total {
        return None;
    }
    loop {
        {
            let m = Matrix::from_fn(n, n, |r, k| rows[subset[r]].0[k]);
            let rhs = Vector::from_fn(n, |r, _| rows[subset[r]].1);
            if let Some(x) = m.lu().solve(&rhs) {
                let feasible = x.iter().all(|v| v.is_finite())
                    && rows.iter().all(|(row, bi, s)| {
                        let lhs: f64 = row.iter().zip(x.iter()).map(|(p, q)| p * q).sum();
                        let tol = 1e-9 * (1.0 + bi.abs());
                        match s {
                            Row::Le => lhs <= bi + tol,
                            Row::Ge => lhs >= bi - tol,
                            Row::Eq => (lhs - bi).abs() <= tol,
                        }
                    });
                if feasible {
                    let v: f64 = c.iter().zip(x.iter()).map(|(p, q)| p * q).sum();
                    best = Some(best.map_or(v, |b: f64| b.min(v)));
                }
            }
        }
        // Next n-subset of 0..total in lexicographic order.
        let mut i = n;
        loop {
            if i == 0 {
                return best;
            }
            i -= 1;
            if subset[i] < total - n + i {
                subset[i] += 1;
                for k in i + 1..n {
                    subset[k] = subset[k - 1] + 1;
                }
                break;
            }
        }
    }
}

/// Oracle status and value: infeasible without vertices; unbounded when the
/// recession cone section `{d >= 0, A d (sense) 0, sum d = 1}` has `c'd < 0`.
fn lp_oracle(c: &[f64], a: &Matrix, b: &[f64], senses: &[Row]) -> (LpStatus, f64) {
    let Some(value) = vertex_minimum(c, a, b, senses) else {
        return (LpStatus::Infeasible, f64::NAN);
    };
    let cone = a.clone().insert_row(a.nrows(), 1.0);
    let mut cone_rhs = vec![0.0; a.nrows()];
    cone_rhs.push(1.0);
    let mut cone_senses = senses.to_vec();
    cone_senses.push(Row::Eq);
    match vertex_minimum(c, &cone, &cone_rhs, &cone_senses) {
        Some(slope) if slope < -1e-9 => (LpStatus::Unbounded, f64::NAN),
        _ => (LpStatus::Optimal, value),
    }
}

fn criterion_1() -> Verdict {
    let mut rng = Rng::new(101);
    let mut mismatches = 0;
    let mut counts = [0usize; 3];
    let mut worst = 0.0_f64;
    for _ in 0..200 {
        let n = 1 + rng.index(6);
        let m = 1 + rng.index(6);
        let a = Matrix::from_fn(m, n, |_, _| (rng.uniform() * 10.0 - 4.0).round() / 2.0);
        let b: Vec<f64> = (0..m)
            .map(|_| (rng.uniform() * 12.0 - 3.0).round() / 2.0)
            .collect();
        let c: Vec<f64> = (0..n)
            .map(|_| (rng.uniform() * 10.0 - 5.0).round() / 2.0)
            .collect();
        let senses: Vec<Row> = (0..m)
            .map(|_| match rng.index(5) {
                0 | 1 => Row::Le,
                2 | 3 => Row::Ge,
                _ => Row::Eq,
            })
            .collect();
        let lp_senses = senses
            .iter()
            .map(|s| match s {
                Row::Le => Sense::Le,
                Row::Ge => Sense::Ge,
                Row::Eq => Sense::Eq,
            })
            .collect();
        let sol = solve_lp(&LinearProgram::from_parts(
            c.clone(),
            a.clone(),
            b.clone(),
            lp_senses,
        ))
        .expect("solves");
        let (status, value) = lp_oracle(&c, &a, &b, &senses);
        counts[match status {
            LpStatus::Optimal => 0,
            LpStatus::Infeasible => 1,
            LpStatus::Unbounded => 2,
        }] += 1;
        if sol.status != status {
            mismatches += 1;
        } else if status == LpStatus::Optimal {
            let gap = (sol.objective_value - value).abs();
            worst = worst.max(gap);
            if gap > 1e-7 {
                mismatches += 1;
            }
        }
    }
    (
        mismatches == 0,
        format!(
            "{mismatches} mismatches; optimal/infeasible/unbounded = {}/{}/{}; max value gap {worst:.1e}",
            counts[0], counts[1], counts[2]
        ),
    )
}

// ---------------------------------------------------------------- criterion 2

fn criterion_2() -> Verdict {
    let mut rng = Rng::new(202);
    let mut worst = 0.0_f64;
    for _ in 0..1000 {
        let theta = rng.normal() * 3.0;
        let lambda = rng.uniform() * 3.0;
        // min t+ + t-  s.t.  |t+ - t- - theta| <= lambda, t+, t- >= 0.
        let cons = Matrix::from_row_slice(2, 2, &[1.0, -1.0, 1.0, -1.0]);
        let lp = LinearProgram::from_parts(
            vec![1.0, 1.0],
            cons,
            vec![theta + lambda, theta - lambda],
            vec![Sense::Le, Sense::Ge],
        );
        let sol = solve_lp(&lp).expect("solves");
        let lp_value = sol.x[0] - sol.x[1];
        let soft = soft_threshold(&Vector::from_element(1, theta), lambda)
            .expect("valid")
            .theta_tilde[0];
        worst = worst.max((lp_value - soft).abs());
    }
    (
        worst <= 1e-8,
        format!("max |soft - LP| = {worst:.1e} over 1000 cases"),
    )
}

// ---------------------------------------------------------------- criterion 3

fn criterion_3() -> Verdict {
    let mut rng = Rng::new(303);
    let mut worst = 0.0_f64;
    for _ in 0..100 {
        let p = 2 + rng.index(7);
        let n = p + 5 + rng.index(30);
        let g = Matrix::from_fn(n, p, |_, _| rng.normal());
        let w = g.qr().q() * (n as f64).sqrt();
        let y = Vector::from_fn(n, |_, _| 2.0 * rng.normal());
        let lambda = 0.05 + rng.uniform();
        let fit = dantzig_regression(&w, &y, lambda).expect("solves");
        let moments = w.tr_mul(&y) / n as f64;
        let soft = soft_threshold(&moments, lambda).expect("valid").theta_tilde;
        worst = worst.max((fit.theta_hat - soft).amax());
    }
    (
        worst <= 1e-6,
        format!("max coordinate gap {worst:.1e} over 100 designs"),
    )
}

// ------------------------------------------------------------- criteria 4, 5

const COVERAGE_CONFIG: &str = r#"{
    "schema_version": 1, "seed": 20240401, "replications": 1000,
    "dgp": {"variant": "figure1", "n": 400, "p": 200},
    "experiment": {"kind": "coverage", "alpha": 0.05, "bootstrap": {"scheme": "gaussian", "draws": 500}, "weight_mode": "unit"}
}"#;

fn coverage_run() -> &'static ExperimentOutput {
    use std::sync::OnceLock;
    static OUT: OnceLock<ExperimentOutput> = OnceLock::new();
    OUT.get_or_init(|| run_config(COVERAGE_CONFIG))
}

fn criterion_4() -> Verdict {
    let m = &coverage_run().metrics;
    let cov = m.mean("covered").unwrap();
    let se = binomial_se(0.05, 1000);
    let (lo, hi) = (0.95 - 2.0 * se, 0.95 + 2.0 * se);
    (
        (lo..=hi).contains(&cov),
        format!("coverage {cov:.4}, accepted [{lo:.4}, {hi:.4}]"),
    )
}

fn criterion_5() -> Verdict {
    let share = coverage_run().metrics.mean("bound_holds").unwrap();
    (
        share >= 0.95,
        format!("bound holds in {:.1}% of replications", 100.0 * share),
    )
}

// ---------------------------------------------------------------- criterion 6

fn criterion_6() -> Verdict {
    let null = run_config(
        r#"{
        "schema_version": 1, "seed": 606, "replications": 2000,
        "dgp": {"variant": "figure1", "n": 400, "p": 50},
        "experiment": {"kind": "fwer", "alpha": 0.10, "bootstrap": {"draws": 500}}
    }"#,
    );
    let mixed = run_config(
        r#"{
        "schema_version": 1, "seed": 607, "replications": 500,
        "dgp": {"variant": "figure1", "n": 400, "p": 50, "shift": {"kind": "signals", "count": 10, "size": 3.0}},
        "experiment": {"kind": "fwer", "alpha": 0.10, "bootstrap": {"draws": 500}}
    }"#,
    );
    let m = &null.metrics;
    let cap = 0.10 + 2.0 * binomial_se(0.10, 2000);
    let fwe: Vec<(&str, f64)> = ["bonf", "holm", "rw"]
        .iter()
        .map(|k| (*k, m.mean(&format!("fwe_{k}")).unwrap()))
        .collect();
    let nested = m.mean("nested_bonf_holm").unwrap() == 1.0
        && mixed.metrics.mean("nested_bonf_holm").unwrap() == 1.0;
    let rw = mixed.metrics.mean("rej_rw").unwrap();
    let holm = mixed.metrics.mean("rej_holm").unwrap();
    let pass = fwe.iter().all(|(_, v)| *v <= cap) && nested && rw >= holm;
    (
        pass,
        format!(
            "FWER bonf/holm/rw = {:.4}/{:.4}/{:.4} (cap {cap:.4}); nesting in every replication: {nested}; mixed-null rejections rw {rw:.3} vs holm {holm:.3}",
            fwe[0].1, fwe[1].1, fwe[2].1
        ),
    )
}

// ---------------------------------------------------------------- criterion 7

fn criterion_7() -> Verdict {
    let size = 2.0 * (200f64).ln().sqrt();
    let out = run_config(&format!(
        r#"{{
        "schema_version": 1, "seed": 707, "replications": 2000,
        "dgp": {{"variant": "means_model", "n": 400, "p": 200, "shift": {{"kind": "signals", "count": 20, "size": {size}}}}},
        "experiment": {{"kind": "fdr", "alpha": 0.10, "bootstrap": {{"draws": 100}}}}
    }}"#
    ));
    let m = &out.metrics;
    let fdr = m.mean("fdp_bh").unwrap();
    let cap = 0.10 * 180.0 / 200.0 + 2.0 * m.se("fdp_bh").unwrap();
    let (bh, holm) = (m.mean("power_bh").unwrap(), m.mean("power_holm").unwrap());
    (
        fdr <= cap && bh > holm,
        format!("FDR {fdr:.4} (cap {cap:.4}); power BH {bh:.3} vs Holm {holm:.3}"),
    )
}

// ---------------------------------------------------------------- criterion 8

fn criterion_8() -> Verdict {
    let (p, s, reps) = (200, 8, 1000);
    let model = SparsityModel::Exact { s, amplitude: 50.0 };
    let mut rng = Rng::new(808);
    let theta0 = generate_sparse_vector(&model, p, &mut rng).unwrap();
    // theta_hat = theta_0 + N(0, I): unit noise, so n = 1 in the ideal rule.
    let lambda = select_lambda(
        LambdaRule::IdealNoise {
            n: 1,
            p,
            sigma: 1.0,
        },
        0.1,
    )
    .unwrap();
    let bound = 2.0 * (s as f64).sqrt() * lambda;
    let mut within = 0;
    let mut support_violations = 0;
    for r in 0..reps {
        let mut g = rng.fork(r);
        let noise = Vector::from_fn(p, |_, _| g.normal());
        let est = soft_threshold(&(&theta0 + &noise), lambda)
            .unwrap()
            .theta_tilde;
        if (&est - &theta0).norm() <= bound {
            within += 1;
        }
        if noise.amax() <= lambda && (s..p).any(|j| est[j] != 0.0) {
            support_violations += 1;
        }
    }
    let share = within as f64 / reps as f64;
    let floor = 0.90 - 2.0 * binomial_se(0.90, reps as usize);
    (
        share >= floor && support_violations == 0,
        format!("bound holds in {share:.3} (floor {floor:.3}); off-support violations {support_violations}"),
    )
}

// ---------------------------------------------------------------- criterion 9

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

fn criterion_9() -> Verdict {
    let config = |n: usize| {
        format!(
            r#"{{
            "schema_version": 1, "seed": 909, "replications": 200,
            "dgp": {{"variant": "sparse_linear", "n": {n}, "p": 100, "sigma": 1.0,
                     "model": {{"kind": "exact", "s": 5}}, "design": {{"kind": "identity_cov"}}}},
            "experiment": {{"kind": "rmd_rates", "lambda": {{"rule": "ideal", "c": 1.1, "alpha": 0.1}}}}
        }}"#
        )
    };
    let small = median(run_config(&config(400)).metrics.column("err_l2").unwrap());
    let large = median(run_config(&config(1600)).metrics.column("err_l2").unwrap());
    let ratio = small / large;
    (
        (1.6..=2.4).contains(&ratio),
        format!("median l2 error {small:.4} (n=400) / {large:.4} (n=1600) = {ratio:.3}"),
    )
}

// --------------------------------------------------------------- criterion 10

fn criterion_10() -> Verdict {
    let mut rng = Rng::new(1010);
    let mut worst = 0.0_f64;
    let mut failures = 0;
    for _ in 0..100 {
        let p = 1 + rng.index(6);
        let n = 10 * p + 20;
        let z = Matrix::from_fn(n, p, |_, _| rng.normal());
        let w = Matrix::from_fn(n, p, |i, j| z[(i, j)] + 0.5 * rng.normal());
        let y = Vector::from_fn(n, |_, _| rng.normal());
        // Direct solve of E_n[Z (y - W'theta)] = 0.
        let zw = z.tr_mul(&w) / n as f64;
        let zy = z.tr_mul(&y) / n as f64;
        let direct = zw.lu().solve(&zy).expect("full rank");
        let score = IvScore::new(z, w, y).unwrap();
        let cfg = DrgmmConfig {
            rmd: RmdConfig::new(0.1 * rng.uniform()),
            gamma_penalty: GammaPenalty::Fixed {
                lambda: vec![0.0; p],
            },
            mu_penalty: MuPenalty::Fixed {
                lambda: vec![0.0; p],
            },
            omega_for_gamma: None,
            theta_init: None,
        };
        match drgmm_pipeline(&score, &cfg) {
            Ok(r) => worst = worst.max((r.theta_check - direct).amax()),
            Err(_) => failures += 1,
        }
    }
    (
        worst <= 1e-8 && failures == 0,
        format!("max |theta_check - direct| = {worst:.1e}; pipeline errors {failures}"),
    )
}

// --------------------------------------------------------------- criterion 11

fn criterion_11() -> Verdict {
    let out = run_config(
        r#"{
        "schema_version": 1, "seed": 1111, "replications": 1000,
        "dgp": {"variant": "homoskedastic_iv", "n": 500, "p": 10, "m": 20, "s": 3, "sigma": 1.0, "pi": 1.0, "rho": 0.5},
        "experiment": {"kind": "drgmm_inference", "alpha": 0.05, "bootstrap": {"draws": 500},
                       "rmd_lambda": {"rule": "ideal", "c": 1.1, "alpha": 0.1}}
    }"#,
    );
    let m = &out.metrics;
    let se = binomial_se(0.05, 1000);
    let ok = |v: f64| (v - 0.95).abs() <= 2.0 * se;
    let per: Vec<f64> = (1..=10)
        .map(|j| m.mean(&format!("cover_{j}")).unwrap())
        .collect();
    let band = m.mean("cover_band").unwrap();
    let r2_max = m.column("r2").unwrap().into_iter().fold(0.0, f64::max);
    let off: Vec<String> = per
        .iter()
        .enumerate()
        .filter(|(_, v)| !ok(**v))
        .map(|(j, v)| format!("{}:{v:.3}", j + 1))
        .collect();
    let lo = per.iter().copied().fold(1.0, f64::min);
    let hi = per.iter().copied().fold(0.0, f64::max);
    (
        off.is_empty() && ok(band) && r2_max == 0.0,
        format!(
            "per-coordinate coverage in [{lo:.3}, {hi:.3}] (outside 0.95 +- {:.4}: {}); band {band:.3}; max r2 {r2_max:e}",
            2.0 * se,
            if off.is_empty() { "none".to_string() } else { off.join(" ") }
        ),
    )
}

// --------------------------------------------------------------- criterion 12

fn criterion_12() -> Verdict {
    let out = run_config(
        r#"{
        "schema_version": 1, "seed": 1212, "replications": 2000,
        "dgp": {"variant": "figure1", "n": 400, "p": 5000},
        "experiment": {"kind": "pp_data", "draws": 10000}
    }"#,
    );
    let pp = out.pp.as_ref().unwrap();
    let mut emp = pp.empirical.clone();
    emp.sort_by(f64::total_cmp);
    let lo = emp[(0.8 * emp.len() as f64).ceil() as usize - 1];
    let hi = emp[emp.len() - 1];
    let gb = PpData::max_gap(&pp.empirical, &pp.gaussian_bootstrap, lo, hi);
    let eb = PpData::max_gap(&pp.empirical, &pp.empirical_bootstrap, lo, hi);
    let gl = PpData::max_gap(&pp.empirical, &pp.gaussian_limit, lo, hi);
    (
        gb <= 0.03 && eb <= 0.03,
        format!("upper-tail gaps: gaussian bootstrap {gb:.4}, empirical bootstrap {eb:.4} (gaussian limit {gl:.4})"),
    )
}

// --------------------------------------------------------------- criterion 13

const DETERMINISM_CONFIGS: &[(&str, &str)] = &[
    (
        "pp_data",
        r#"{"schema_version":1,"seed":5,"replications":30,"dgp":{"variant":"figure1","n":50,"p":40},"experiment":{"kind":"pp_data","draws":200}}"#,
    ),
    (
        "coverage",
        r#"{"schema_version":1,"seed":5,"replications":20,"dgp":{"variant":"figure1","n":50,"p":20},"experiment":{"kind":"coverage","alpha":0.05,"bootstrap":{"scheme":"empirical","draws":100}}}"#,
    ),
    (
        "fwer",
        r#"{"schema_version":1,"seed":5,"replications":20,"dgp":{"variant":"rct_outcomes","n":60,"p":8,"gamma":0.5},"experiment":{"kind":"fwer","alpha":0.1,"bootstrap":{"draws":100},"sided":"two_sided"}}"#,
    ),
    (
        "fdr",
        r#"{"schema_version":1,"seed":5,"replications":20,"dgp":{"variant":"means_model","n":60,"p":30,"shift":{"kind":"signals","count":5,"size":4.0}},"experiment":{"kind":"fdr","alpha":0.1,"bootstrap":{"draws":50}}}"#,
    ),
    (
        "rmd_rates",
        r#"{"schema_version":1,"seed":5,"replications":6,"dgp":{"variant":"logistic","n":200,"p":5,"model":{"kind":"exact","s":2,"amplitude":1.0}},"experiment":{"kind":"rmd_rates","lambda":{"rule":"ideal"}}}"#,
    ),
    (
        "drgmm_inference",
        r#"{"schema_version":1,"seed":5,"replications":8,"dgp":{"variant":"homoskedastic_iv","n":120,"p":3,"m":5,"s":1,"sigma":1.0,"pi":1.0},"experiment":{"kind":"drgmm_inference","alpha":0.05,"bootstrap":{"draws":100},"rmd_lambda":{"rule":"ideal"}}}"#,
    ),
];

fn criterion_13() -> Verdict {
    let exe = env!("CARGO_BIN_EXE_hdinfer");
    let root = tempfile::tempdir().expect("temp dir");
    let mut differing = Vec::new();
    let mut files_compared = 0;
    for (name, json) in DETERMINISM_CONFIGS {
        let cfg = root.path().join(format!("{name}.json"));
        std::fs::write(&cfg, json).unwrap();
        let mut outputs = Vec::new();
        for (k, threads) in ["1", "4"].iter().enumerate() {
            let dir = root.path().join(format!("{name}-{k}"));
            let status = Command::new(exe)
                .args([
                    "run",
                    cfg.to_str().unwrap(),
                    "--threads",
                    threads,
                    "--out",
                    dir.to_str().unwrap(),
                ])
                .output()
                .expect("binary starts")
                .status;
            if !status.success() {
                differing.push(format!("{name}: exit {status}"));
            }
            let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(&dir)
                .map(|it| {
                    it.map(|e| {
                        let e = e.unwrap();
                        (
                            e.file_name().to_string_lossy().into_owned(),
                            std::fs::read(e.path()).unwrap(),
                        )
                    })
                    .collect()
                })
                .unwrap_or_default();
            files.sort();
            outputs.push(files);
        }
        files_compared += outputs[0].len();
        if outputs[0] != outputs[1] || outputs[0].is_empty() {
            differing.push(name.to_string());
        }
    }
    (
        differing.is_empty(),
        format!(
            "{} experiment kinds, {files_compared} files byte-compared across reruns with 1 and 4 threads; differing: {}",
            DETERMINISM_CONFIGS.len(),
            if differing.is_empty() { "none".into() } else { differing.join(", ") }
        ),
    )
}

type Criterion = (u32, &'static str, fn() -> Verdict);

fn main() {
    let criteria: [Criterion; 13] = [
        (1, "LP oracle equivalence", criterion_1),
        (2, "soft threshold equals the 1-D LP", criterion_2),
        (3, "orthonormal Dantzig equals soft threshold", criterion_3),
        (4, "simultaneous coverage on the W eps design", criterion_4),
        (
            5,
            "bootstrap quantile below the Gaussian bound",
            criterion_5,
        ),
        (6, "FWER control and stepdown ordering", criterion_6),
        (7, "FDR control and BH power", criterion_7),
        (
            8,
            "l2 error bound of the regularized estimator",
            criterion_8,
        ),
        (9, "RMD rate scaling", criterion_9),
        (10, "DRGMM exact-identification collapse", criterion_10),
        (
            11,
            "DRGMM inference in the homoskedastic IV model",
            criterion_11,
        ),
        (12, "P-P reproduction", criterion_12),
        (13, "determinism", criterion_13),
    ];
    let wanted: Vec<u32> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failed = Vec::new();
    for (id, name, f) in criteria {
        if !wanted.is_empty() && !wanted.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let (pass, detail) = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            (false, format!("panicked: {msg}"))
        });
        println!(
            "criterion {id:>2} {}: {name}: {detail} [{:.1}s]",
            if pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
        if !pass {
            failed.push(id);
        }
    }
    if !failed.is_empty() {
        println!("acceptance: failed criteria {failed:?}");
        if std::env::var_os("HDINFER_ACCEPTANCE_STRICT").is_some_and(|v| v == "1") {
            std::process::exit(1);
        }
        return;
    }
    println!("acceptance: all selected criteria passed");
}
