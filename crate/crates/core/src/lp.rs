//! Dense two-phase primal simplex.
//!
//! Every ℓ1-minimization in the crate (RMD, the Dantzig selector, the rows
//! of the moment-selection and inverse-Jacobian estimators) is expressed as
//! a [`LinearProgram`] and handed to [`solve_lp`]. Problems here have at most
//! a few thousand variables, so a dense tableau is adequate.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const FEASIBILITY_TOL: f64 = 1e-9;
pub const OPTIMALITY_TOL: f64 = 1e-9;
pub const PIVOT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

/// `minimize c'x  s.t.  A x (≤|≥|=) b,  lower ≤ x ≤ upper`.
///
/// Lower bounds default to zero and may be `-inf` (free variable); upper
/// bounds are optional.
#[derive(Debug, Clone)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub constraints: Matrix,
    pub rhs: Vec<f64>,
    pub senses: Vec<Sense>,
    pub lower: Vec<f64>,
    pub upper: Vec<Option<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub objective_value: f64,
}

impl LinearProgram {
    /// A program with no constraints and nonnegative variables.
    pub fn new(objective: Vec<f64>) -> Self {
        let n = objective.len();
        Self {
            objective,
            constraints: DMatrix::zeros(0, n),
            rhs: Vec::new(),
            senses: Vec::new(),
            lower: vec![0.0; n],
            upper: vec![None; n],
        }
    }

    pub fn from_parts(
        objective: Vec<f64>,
        constraints: Matrix,
        rhs: Vec<f64>,
        senses: Vec<Sense>,
    ) -> Self {
        let n = objective.len();
        Self {
            objective,
            constraints,
            rhs,
            senses,
            lower: vec![0.0; n],
            upper: vec![None; n],
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.rhs.len()
    }

    /// Appends one constraint row.
    pub fn push_constraint(&mut self, row: &[f64], sense: Sense, rhs: f64) {
        let n = self.num_vars();
        assert_eq!(row.len(), n, "constraint row length");
        let m = self.constraints.nrows();
        let mut grown = self.constraints.clone().resize_vertically(m + 1, 0.0);
        for (j, &a) in row.iter().enumerate() {
            grown[(m, j)] = a;
        }
        self.constraints = grown;
        self.rhs.push(rhs);
        self.senses.push(sense);
    }

    fn validate(&self) -> Result<()> {
        let n = self.num_vars();
        if self.constraints.ncols() != n {
            return Err(Error::dim(format!(
                "constraint matrix has {} columns, objective has {n}",
                self.constraints.ncols()
            )));
        }
        let m = self.constraints.nrows();
        if self.rhs.len() != m || self.senses.len() != m {
            return Err(Error::dim(format!(
                "{m} constraint rows but {} right-hand sides and {} senses",
                self.rhs.len(),
                self.senses.len()
            )));
        }
        if self.lower.len() != n || self.upper.len() != n {
            return Err(Error::dim(
                "bound vectors must match the number of variables",
            ));
        }
        let finite = self
            .objective
            .iter()
            .chain(self.rhs.iter())
            .chain(self.constraints.iter())
            .all(|x| x.is_finite());
        if !finite {
            return Err(Error::domain("linear program has non-finite data"));
        }
        for (j, (&lo, up)) in self.lower.iter().zip(&self.upper).enumerate() {
            if lo.is_nan() || lo == f64::INFINITY {
                return Err(Error::domain(format!(
                    "invalid lower bound for variable {j}"
                )));
            }
            if let Some(u) = up {
                if !u.is_finite() {
                    return Err(Error::domain(format!(
                        "invalid upper bound for variable {j}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// How an original variable maps onto nonnegative standard-form columns.
#[derive(Debug, Clone, Copy)]
enum VarMap {
    /// x = shift + y
    Shifted { col: usize, shift: f64 },
    /// x = y⁺ − y⁻
    Free { pos: usize, neg: usize },
}

/// Standard form `A y = b, y ≥ 0, b ≥ 0` with an identity-initialized basis.
struct StandardForm {
    rows: usize,
    /// first artificial column index; artificials occupy `art_start..cols_total`
    art_start: usize,
    cols_total: usize,
    a: Vec<f64>,
    b: Vec<f64>,
    cost: Vec<f64>,
    basis: Vec<usize>,
    map: Vec<VarMap>,
    obj_shift: f64,
}

fn to_standard_form(lp: &LinearProgram) -> StandardForm {
    let n = lp.num_vars();
    let mut map = Vec::with_capacity(n);
    let mut structural = 0usize;
    for &lo in &lp.lower {
        if lo == f64::NEG_INFINITY {
            map.push(VarMap::Free {
                pos: structural,
                neg: structural + 1,
            });
            structural += 2;
        } else {
            map.push(VarMap::Shifted {
                col: structural,
                shift: lo,
            });
            structural += 1;
        }
    }

    // Collect rows: original constraints followed by finite upper bounds.
    struct Row {
        coeffs: Vec<(usize, f64)>,
        sense: Sense,
        rhs: f64,
    }
    let mut rows: Vec<Row> = Vec::new();
    for i in 0..lp.num_constraints() {
        let mut coeffs = Vec::new();
        let mut rhs = lp.rhs[i];
        for (j, m) in map.iter().enumerate() {
            let a = lp.constraints[(i, j)];
            if a == 0.0 {
                continue;
            }
            match *m {
                VarMap::Shifted { col, shift } => {
                    coeffs.push((col, a));
                    rhs -= a * shift;
                }
                VarMap::Free { pos, neg } => {
                    coeffs.push((pos, a));
                    coeffs.push((neg, -a));
                }
            }
        }
        rows.push(Row {
            coeffs,
            sense: lp.senses[i],
            rhs,
        });
    }
    for (j, up) in lp.upper.iter().enumerate() {
        if let Some(u) = up {
            match map[j] {
                VarMap::Shifted { col, shift } => rows.push(Row {
                    coeffs: vec![(col, 1.0)],
                    sense: Sense::Le,
                    rhs: u - shift,
                }),
                VarMap::Free { pos, neg } => rows.push(Row {
                    coeffs: vec![(pos, 1.0), (neg, -1.0)],
                    sense: Sense::Le,
                    rhs: *u,
                }),
            }
        }
    }

    // Normalize to b ≥ 0.
    for r in rows.iter_mut() {
        if r.rhs < 0.0 {
            r.rhs = -r.rhs;
            for c in r.coeffs.iter_mut() {
                c.1 = -c.1;
            }
            r.sense = match r.sense {
                Sense::Le => Sense::Ge,
                Sense::Ge => Sense::Le,
                Sense::Eq => Sense::Eq,
            };
        }
    }

    let m = rows.len();
    let n_slack = rows.iter().filter(|r| r.sense != Sense::Eq).count();
    let n_art = rows.iter().filter(|r| r.sense != Sense::Le).count();
    let cols = structural + n_slack;
    let cols_total = cols + n_art;
    let mut a = vec![0.0; m * cols_total];
    let mut b = vec![0.0; m];
    let mut basis = vec![0usize; m];
    let mut slack = structural;
    let mut art = cols;
    for (i, r) in rows.iter().enumerate() {
        let row = &mut a[i * cols_total..(i + 1) * cols_total];
        for &(c, v) in &r.coeffs {
            row[c] += v;
        }
        b[i] = r.rhs;
        match r.sense {
            Sense::Le => {
                row[slack] = 1.0;
                basis[i] = slack;
                slack += 1;
            }
            Sense::Ge => {
                row[slack] = -1.0;
                slack += 1;
                row[art] = 1.0;
                basis[i] = art;
                art += 1;
            }
            Sense::Eq => {
                row[art] = 1.0;
                basis[i] = art;
                art += 1;
            }
        }
    }

    let mut cost = vec![0.0; cols_total];
    let mut obj_shift = 0.0;
    for (j, m) in map.iter().enumerate() {
        let c = lp.objective[j];
        match *m {
            VarMap::Shifted { col, shift } => {
                cost[col] = c;
                obj_shift += c * shift;
            }
            VarMap::Free { pos, neg } => {
                cost[pos] = c;
                cost[neg] = -c;
            }
        }
    }

    StandardForm {
        rows: m,
        art_start: cols,
        cols_total,
        a,
        b,
        cost,
        basis,
        map,
        obj_shift,
    }
}

/// Working tableau: constraint rows `[A | b]` plus a reduced-cost row.
struct Tableau {
    rows: usize,
    width: usize,
    t: Vec<f64>,
    /// reduced costs, length `width - 1`, followed by −(objective value)
    z: Vec<f64>,
    basis: Vec<usize>,
    /// columns allowed to enter the basis
    enterable: Vec<bool>,
}

enum Outcome {
    Optimal,
    Unbounded,
}

impl Tableau {
    fn rhs(&self, i: usize) -> f64 {
        self.t[i * self.width + self.width - 1]
    }

    fn at(&self, i: usize, j: usize) -> f64 {
        self.t[i * self.width + j]
    }

    /// Installs `cost` and prices out the current basis.
    fn set_cost(&mut self, cost: &[f64]) {
        let w = self.width;
        self.z.clear();
        self.z.extend_from_slice(cost);
        self.z.push(0.0);
        for i in 0..self.rows {
            let cb = cost[self.basis[i]];
            if cb != 0.0 {
                let row = &self.t[i * w..(i + 1) * w];
                for (zj, &aij) in self.z.iter_mut().zip(row) {
                    *zj -= cb * aij;
                }
            }
        }
    }

    fn pivot(&mut self, pr: usize, pc: usize) {
        let w = self.width;
        let inv = 1.0 / self.t[pr * w + pc];
        for v in &mut self.t[pr * w..(pr + 1) * w] {
            *v *= inv;
        }
        self.t[pr * w + pc] = 1.0;
        let (before, rest) = self.t.split_at_mut(pr * w);
        let (prow, after) = rest.split_at_mut(w);
        for row in before.chunks_exact_mut(w).chain(after.chunks_exact_mut(w)) {
            let f = row[pc];
            if f != 0.0 {
                for (x, &p) in row.iter_mut().zip(prow.iter()) {
                    *x -= f * p;
                }
                row[pc] = 0.0;
            }
        }
        let f = self.z[pc];
        if f != 0.0 {
            for (x, &p) in self.z.iter_mut().zip(prow.iter()) {
                *x -= f * p;
            }
            self.z[pc] = 0.0;
        }
        self.basis[pr] = pc;
    }

    /// Primal simplex from a feasible basis. Largest-coefficient pricing,
    /// switching to Bland's rule after `3·(rows + cols)` iterations.
    fn run(&mut self) -> Result<Outcome> {
        let ncols = self.width - 1;
        let bland_after = 3 * (self.rows + ncols);
        let hard_cap = 50 * (self.rows + ncols) + 10_000;
        let mut iter = 0usize;
        loop {
            let use_bland = iter >= bland_after;
            let mut enter = None;
            let mut best = -OPTIMALITY_TOL;
            for j in 0..ncols {
                if !self.enterable[j] {
                    continue;
                }
                let d = self.z[j];
                if d < best {
                    enter = Some(j);
                    if use_bland {
                        break;
                    }
                    best = d;
                }
            }
            let Some(pc) = enter else {
                return Ok(Outcome::Optimal);
            };

            // Ratio test; ties go to the lowest basic variable index.
            let mut best_ratio = f64::INFINITY;
            for i in 0..self.rows {
                let a = self.at(i, pc);
                if a > PIVOT_TOL {
                    best_ratio = best_ratio.min(self.rhs(i).max(0.0) / a);
                }
            }
            if best_ratio == f64::INFINITY {
                return Ok(Outcome::Unbounded);
            }
            let slack = 1e-12 * (1.0 + best_ratio);
            let pr = (0..self.rows)
                .filter(|&i| {
                    let a = self.at(i, pc);
                    a > PIVOT_TOL && self.rhs(i).max(0.0) / a <= best_ratio + slack
                })
                .min_by_key(|&i| self.basis[i])
                .expect("a row attains the minimum ratio");
            self.pivot(pr, pc);
            iter += 1;
            if iter > hard_cap {
                return Err(Error::Resource(format!(
                    "simplex exceeded {hard_cap} iterations"
                )));
            }
        }
    }
}

/// Solves `lp` with the two-phase primal simplex.
///
/// Infeasible and unbounded programs are reported through
/// [`LpSolution::status`]; only malformed input is an `Err`.
pub fn solve_lp(lp: &LinearProgram) -> Result<LpSolution> {
    lp.validate()?;
    let sf = to_standard_form(lp);
    let n_orig = lp.num_vars();
    let width = sf.cols_total + 1;
    let mut t = vec![0.0; sf.rows * width];
    for i in 0..sf.rows {
        t[i * width..i * width + sf.cols_total]
            .copy_from_slice(&sf.a[i * sf.cols_total..(i + 1) * sf.cols_total]);
        t[i * width + sf.cols_total] = sf.b[i];
    }
    let mut tab = Tableau {
        rows: sf.rows,
        width,
        t,
        z: Vec::with_capacity(width),
        basis: sf.basis.clone(),
        enterable: vec![true; sf.cols_total],
    };

    // Phase 1: drive the artificials to zero.
    if sf.art_start < sf.cols_total {
        let mut phase1 = vec![0.0; sf.cols_total];
        for c in &mut phase1[sf.art_start..] {
            *c = 1.0;
        }
        tab.set_cost(&phase1);
        tab.run()?;
        let infeasibility: f64 = (0..tab.rows)
            .filter(|&i| tab.basis[i] >= sf.art_start)
            .map(|i| tab.rhs(i))
            .sum();
        let scale = 1.0 + sf.b.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
        if infeasibility > FEASIBILITY_TOL * scale {
            return Ok(LpSolution {
                status: LpStatus::Infeasible,
                x: vec![f64::NAN; n_orig],
                objective_value: f64::NAN,
            });
        }
        // Pivot zero-level artificials out of the basis where possible.
        let mut redundant = Vec::new();
        for i in 0..tab.rows {
            if tab.basis[i] >= sf.art_start {
                let col = (0..sf.art_start)
                    .filter(|&j| tab.at(i, j).abs() > 1e-9)
                    .max_by(|&a, &b| tab.at(i, a).abs().total_cmp(&tab.at(i, b).abs()));
                match col {
                    Some(j) => tab.pivot(i, j),
                    None => redundant.push(i),
                }
            }
        }
        if !redundant.is_empty() {
            drop_rows(&mut tab, &redundant);
        }
        for c in &mut tab.enterable[sf.art_start..] {
            *c = false;
        }
    }

    tab.set_cost(&sf.cost);
    let outcome = tab.run()?;
    if let Outcome::Unbounded = outcome {
        return Ok(LpSolution {
            status: LpStatus::Unbounded,
            x: vec![f64::NAN; n_orig],
            objective_value: f64::NEG_INFINITY,
        });
    }

    let y = refined_basic_solution(&sf, &tab);
    let x: Vec<f64> = sf
        .map
        .iter()
        .map(|m| match *m {
            VarMap::Shifted { col, shift } => shift + y[col],
            VarMap::Free { pos, neg } => y[pos] - y[neg],
        })
        .collect();
    let objective_value = lp.objective.iter().zip(&x).map(|(c, v)| c * v).sum::<f64>();
    debug_assert!(objective_value.is_finite() || sf.obj_shift.is_nan());
    Ok(LpSolution {
        status: LpStatus::Optimal,
        x,
        objective_value,
    })
}

fn drop_rows(tab: &mut Tableau, rows: &[usize]) {
    let w = tab.width;
    let mut t = Vec::with_capacity(tab.t.len());
    let mut basis = Vec::with_capacity(tab.rows);
    for i in 0..tab.rows {
        if !rows.contains(&i) {
            t.extend_from_slice(&tab.t[i * w..(i + 1) * w]);
            basis.push(tab.basis[i]);
        }
    }
    tab.rows = basis.len();
    tab.t = t;
    tab.basis = basis;
}

/// Recomputes basic values by solving `B y_B = b` on the original data,
/// removing round-off accumulated over pivots. Falls back to the tableau
/// values when the basis matrix cannot be factorized.
fn refined_basic_solution(sf: &StandardForm, tab: &Tableau) -> Vec<f64> {
    let mut y = vec![0.0; sf.cols_total];
    for i in 0..tab.rows {
        y[tab.basis[i]] = tab.rhs(i).max(0.0);
    }
    let k = tab.rows;
    if k == 0 || k != sf.rows {
        return y;
    }
    let bmat = DMatrix::from_fn(k, k, |r, c| sf.a[r * sf.cols_total + tab.basis[c]]);
    let rhs = nalgebra::DVector::from_column_slice(&sf.b);
    if let Some(sol) = bmat.lu().solve(&rhs) {
        if sol.iter().all(|v| v.is_finite() && *v > -1e-7) {
            for (i, &col) in tab.basis.iter().enumerate() {
                y[col] = sol[i].max(0.0);
            }
        }
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_var(sense: Sense, rhs: f64) -> LinearProgram {
        let mut lp = LinearProgram::new(vec![1.0]);
        lp.push_constraint(&[1.0], sense, rhs);
        lp
    }

    #[test]
    fn binding_lower_constraint() {
        let sol = solve_lp(&single_var(Sense::Ge, 1.0)).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.x[0] - 1.0).abs() < 1e-12);
        assert!((sol.objective_value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn symmetric_vertex_set() {
        let mut lp = LinearProgram::new(vec![1.0, 1.0]);
        lp.push_constraint(&[1.0, 1.0], Sense::Ge, 1.0);
        let sol = solve_lp(&lp).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.objective_value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn contradictory_bounds_are_infeasible() {
        let sol = solve_lp(&single_var(Sense::Le, -1.0)).unwrap();
        assert_eq!(sol.status, LpStatus::Infeasible);
    }

    #[test]
    fn unbounded_direction() {
        let mut lp = LinearProgram::new(vec![-1.0, 0.0]);
        lp.push_constraint(&[0.0, 1.0], Sense::Le, 1.0);
        assert_eq!(solve_lp(&lp).unwrap().status, LpStatus::Unbounded);
    }

    #[test]
    fn free_variables_and_upper_bounds() {
        // min x s.t. x ≥ -3 (free variable), then with upper bound on y.
        let mut lp = LinearProgram::new(vec![1.0, -1.0]);
        lp.lower = vec![f64::NEG_INFINITY, 0.0];
        lp.upper = vec![None, Some(2.5)];
        lp.push_constraint(&[1.0, 0.0], Sense::Ge, -3.0);
        let sol = solve_lp(&lp).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.x[0] + 3.0).abs() < 1e-12);
        assert!((sol.x[1] - 2.5).abs() < 1e-12);
        assert!((sol.objective_value + 5.5).abs() < 1e-12);
    }

    #[test]
    fn redundant_equalities() {
        // x + y = 1 stated twice
        let mut lp = LinearProgram::new(vec![1.0, 2.0]);
        lp.push_constraint(&[1.0, 1.0], Sense::Eq, 1.0);
        lp.push_constraint(&[2.0, 2.0], Sense::Eq, 2.0);
        let sol = solve_lp(&lp).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.objective_value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let mut lp = LinearProgram::new(vec![1.0, 1.0]);
        lp.rhs.push(1.0);
        assert!(matches!(solve_lp(&lp), Err(Error::Dimension(_))));
    }

    #[test]
    fn empty_constraint_set() {
        let lp = LinearProgram::new(vec![1.0, 0.0]);
        let sol = solve_lp(&lp).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert_eq!(sol.x, vec![0.0, 0.0]);
    }
}
