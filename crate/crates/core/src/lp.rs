//! Dense two-phase simplex for the small LPs built by the relaxations.
//!
//! Problems are stated as `maximize cᵀx` subject to row constraints and
//! per-variable bounds. Internally every variable is shifted, reflected or
//! split so that the tableau only sees `y ≥ 0`. Entering and leaving
//! variables follow Bland's rule, so the method terminates on degenerate
//! problems. Once a basis is optimal the basic values are recomputed from
//! the original data to shed accumulated pivoting error.

use crate::error::{CertError, Result};
use crate::linalg::{dot, solve_dense, Matrix};

pub const PIVOT_TOL: f64 = 1e-9;
pub const FEAS_TOL: f64 = 1e-8;
const OPT_TOL: f64 = 1e-9;
const MAX_PIVOTS: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub row: Vec<f64>,
    pub sense: Sense,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpProblem {
    num_vars: usize,
    objective: Vec<f64>,
    constraints: Vec<Constraint>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpResult {
    Optimal { value: f64, point: Vec<f64> },
    Infeasible,
    Unbounded,
}

impl LpResult {
    pub fn status(&self) -> LpStatus {
        match self {
            LpResult::Optimal { .. } => LpStatus::Optimal,
            LpResult::Infeasible => LpStatus::Infeasible,
            LpResult::Unbounded => LpStatus::Unbounded,
        }
    }

    pub fn value(&self) -> Option<f64> {
        match self {
            LpResult::Optimal { value, .. } => Some(*value),
            _ => None,
        }
    }

    pub fn point(&self) -> Option<&[f64]> {
        match self {
            LpResult::Optimal { point, .. } => Some(point),
            _ => None,
        }
    }
}

impl LpProblem {
    /// A problem over `num_vars` free variables with zero objective.
    pub fn new(num_vars: usize) -> Self {
        Self {
            num_vars,
            objective: vec![0.0; num_vars],
            constraints: Vec::new(),
            lower: vec![f64::NEG_INFINITY; num_vars],
            upper: vec![f64::INFINITY; num_vars],
        }
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn objective(&self) -> &[f64] {
        &self.objective
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn bounds(&self, j: usize) -> (f64, f64) {
        (self.lower[j], self.upper[j])
    }

    pub fn set_objective(&mut self, c: Vec<f64>) {
        assert_eq!(c.len(), self.num_vars, "objective length");
        self.objective = c;
    }

    pub fn add_constraint(&mut self, row: Vec<f64>, sense: Sense, rhs: f64) {
        assert_eq!(row.len(), self.num_vars, "constraint row length");
        self.constraints.push(Constraint { row, sense, rhs });
    }

    /// Sets `lo ≤ x_j ≤ hi`; infinite values mean no bound on that side.
    pub fn set_bounds(&mut self, j: usize, lo: f64, hi: f64) {
        self.lower[j] = lo;
        self.upper[j] = hi;
    }

    pub fn objective_at(&self, x: &[f64]) -> f64 {
        dot(&self.objective, x)
    }

    /// Largest violation of any constraint or bound at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for c in &self.constraints {
            let lhs = dot(&c.row, x);
            let v = match c.sense {
                Sense::Le => lhs - c.rhs,
                Sense::Ge => c.rhs - lhs,
                Sense::Eq => (lhs - c.rhs).abs(),
            };
            worst = worst.max(v);
        }
        for j in 0..self.num_vars {
            worst = worst.max(self.lower[j] - x[j]).max(x[j] - self.upper[j]);
        }
        worst
    }

    fn validate(&self) -> Result<()> {
        let finite = self.objective.iter().all(|v| v.is_finite())
            && self
                .constraints
                .iter()
                .all(|c| c.rhs.is_finite() && c.row.iter().all(|v| v.is_finite()));
        if !finite {
            return Err(CertError::NonFinite("LP data".into()));
        }
        if self.lower.iter().any(|v| v.is_nan() || *v == f64::INFINITY)
            || self.upper.iter().any(|v| v.is_nan() || *v == f64::NEG_INFINITY)
        {
            return Err(CertError::InvalidArgument("invalid variable bound".into()));
        }
        Ok(())
    }
}

/// How an original variable is expressed through nonnegative columns:
/// `x = offset + Σ coef·y_col`.
struct VarMap {
    offset: f64,
    cols: Vec<(usize, f64)>,
}

struct StandardForm {
    maps: Vec<VarMap>,
    ncols: usize,
    /// Rows as (dense coefficients over y, sense, rhs).
    rows: Vec<(Vec<f64>, Sense, f64)>,
    cost: Vec<f64>,
}

fn standardize(p: &LpProblem) -> Option<StandardForm> {
    let mut maps = Vec::with_capacity(p.num_vars);
    let mut ncols = 0;
    let mut bound_rows: Vec<(usize, f64)> = Vec::new();
    for j in 0..p.num_vars {
        let (lo, hi) = (p.lower[j], p.upper[j]);
        if lo > hi {
            return None;
        }
        let map = if lo.is_finite() {
            if hi.is_finite() {
                bound_rows.push((ncols, hi - lo));
            }
            ncols += 1;
            VarMap {
                offset: lo,
                cols: vec![(ncols - 1, 1.0)],
            }
        } else if hi.is_finite() {
            ncols += 1;
            VarMap {
                offset: hi,
                cols: vec![(ncols - 1, -1.0)],
            }
        } else {
            ncols += 2;
            VarMap {
                offset: 0.0,
                cols: vec![(ncols - 2, 1.0), (ncols - 1, -1.0)],
            }
        };
        maps.push(map);
    }
    let mut rows = Vec::with_capacity(p.constraints.len() + bound_rows.len());
    for c in &p.constraints {
        let mut row = vec![0.0; ncols];
        let mut rhs = c.rhs;
        for (j, &a) in c.row.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            rhs -= a * maps[j].offset;
            for &(col, coef) in &maps[j].cols {
                row[col] += a * coef;
            }
        }
        rows.push((row, c.sense, rhs));
    }
    for (col, width) in bound_rows {
        let mut row = vec![0.0; ncols];
        row[col] = 1.0;
        rows.push((row, Sense::Le, width));
    }
    let mut cost = vec![0.0; ncols];
    for (j, &cj) in p.objective.iter().enumerate() {
        for &(col, coef) in &maps[j].cols {
            cost[col] += cj * coef;
        }
    }
    Some(StandardForm {
        maps,
        ncols,
        rows,
        cost,
    })
}

struct Tableau {
    /// Constraint rows followed by the objective row; last column is the rhs.
    t: Matrix,
    basis: Vec<usize>,
    /// Index of the original standard-form row each tableau row came from.
    row_origin: Vec<usize>,
    ncols: usize,
    first_artificial: usize,
}

impl Tableau {
    fn m(&self) -> usize {
        self.basis.len()
    }

    fn rhs_col(&self) -> usize {
        self.t.cols() - 1
    }

    fn pivot(&mut self, r: usize, col: usize) {
        let width = self.t.cols();
        let p = self.t[(r, col)];
        for j in 0..width {
            self.t[(r, j)] /= p;
        }
        self.t[(r, col)] = 1.0;
        let pivot_row = self.t.row(r).to_vec();
        for i in 0..self.t.rows() {
            if i == r {
                continue;
            }
            let f = self.t[(i, col)];
            if f == 0.0 {
                continue;
            }
            let row = self.t.row_mut(i);
            for j in 0..width {
                row[j] -= f * pivot_row[j];
            }
            row[col] = 0.0;
        }
        self.basis[r] = col;
    }

    /// Loads the objective row for `cost` (maximize) relative to the current basis.
    fn set_objective(&mut self, cost: &[f64]) {
        let m = self.m();
        let rhs = self.rhs_col();
        for j in 0..self.t.cols() {
            self.t[(m, j)] = if j < cost.len() { cost[j] } else { 0.0 };
        }
        self.t[(m, rhs)] = 0.0;
        for i in 0..m {
            let cb = cost.get(self.basis[i]).copied().unwrap_or(0.0);
            if cb == 0.0 {
                continue;
            }
            for j in 0..self.t.cols() {
                let v = self.t[(i, j)];
                self.t[(m, j)] -= cb * v;
            }
        }
        // The objective row holds reduced costs and, in the rhs slot, −value.
        for i in 0..m {
            self.t[(m, self.basis[i])] = 0.0;
        }
    }

    /// Runs Bland-rule pivots on columns `< allowed`. Returns false when unbounded.
    fn optimize(&mut self, allowed: usize) -> Result<bool> {
        let m = self.m();
        let rhs = self.rhs_col();
        for _ in 0..MAX_PIVOTS {
            let entering = (0..allowed).find(|&j| self.t[(m, j)] > OPT_TOL);
            let Some(col) = entering else {
                return Ok(true);
            };
            let mut best: Option<(usize, f64)> = None;
            for i in 0..m {
                let a = self.t[(i, col)];
                if a <= PIVOT_TOL {
                    continue;
                }
                let ratio = self.t[(i, rhs)].max(0.0) / a;
                best = match best {
                    None => Some((i, ratio)),
                    Some((bi, br)) => {
                        let tie = (ratio - br).abs() <= 1e-12 * (1.0 + br.abs());
                        if ratio < br && !tie || tie && self.basis[i] < self.basis[bi] {
                            Some((i, ratio))
                        } else {
                            Some((bi, br))
                        }
                    }
                };
            }
            match best {
                None => return Ok(false),
                Some((r, _)) => self.pivot(r, col),
            }
        }
        Err(CertError::LpNumerical("pivot limit reached".into()))
    }
}

pub fn solve_lp(problem: &LpProblem) -> Result<LpResult> {
    problem.validate()?;
    let Some(sf) = standardize(problem) else {
        return Ok(LpResult::Infeasible);
    };
    let m = sf.rows.len();
    let n = sf.ncols;

    // Column layout: structural | slack/surplus | artificial.
    let num_slack = sf.rows.iter().filter(|r| r.1 != Sense::Eq).count();
    let mut needs_art = Vec::with_capacity(m);
    for (_, sense, rhs) in &sf.rows {
        let flipped = *rhs < 0.0;
        let eff = match (sense, flipped) {
            (Sense::Le, false) | (Sense::Ge, true) => Sense::Le,
            (Sense::Ge, false) | (Sense::Le, true) => Sense::Ge,
            (Sense::Eq, _) => Sense::Eq,
        };
        needs_art.push(eff != Sense::Le);
    }
    let num_art = needs_art.iter().filter(|&&b| b).count();
    let first_art = n + num_slack;
    let total = first_art + num_art;

    let mut t = Matrix::zeros(m + 1, total + 1);
    let mut basis = vec![0; m];
    let mut slack = n;
    let mut art = first_art;
    let scale_b = sf.rows.iter().map(|r| r.2.abs()).fold(0.0, f64::max);
    for (i, (row, sense, rhs)) in sf.rows.iter().enumerate() {
        let sign = if *rhs < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n {
            t[(i, j)] = sign * row[j];
        }
        t[(i, total)] = sign * rhs;
        if *sense != Sense::Eq {
            let s = if *sense == Sense::Le { 1.0 } else { -1.0 };
            t[(i, slack)] = sign * s;
            if !needs_art[i] {
                basis[i] = slack;
            }
            slack += 1;
        }
        if needs_art[i] {
            t[(i, art)] = 1.0;
            basis[i] = art;
            art += 1;
        }
    }
    let mut tab = Tableau {
        t,
        basis,
        row_origin: (0..m).collect(),
        ncols: total,
        first_artificial: first_art,
    };

    if num_art > 0 {
        let mut phase1 = vec![0.0; total];
        for c in phase1.iter_mut().skip(first_art) {
            *c = -1.0;
        }
        tab.set_objective(&phase1);
        tab.optimize(total)?;
        let infeasibility = tab.t[(m, total)];
        if infeasibility > FEAS_TOL * (1.0 + scale_b) {
            return Ok(LpResult::Infeasible);
        }
        drive_out_artificials(&mut tab);
    }

    let mut cost = sf.cost.clone();
    cost.resize(tab.ncols, 0.0);
    tab.set_objective(&cost);
    if !tab.optimize(tab.first_artificial)? {
        return Ok(LpResult::Unbounded);
    }

    let y = basic_solution(&tab, &sf);
    let point: Vec<f64> = sf
        .maps
        .iter()
        .map(|map| map.offset + map.cols.iter().map(|&(c, k)| k * y[c]).sum::<f64>())
        .collect();
    let value = problem.objective_at(&point);
    check_feasible(problem, &point)?;
    Ok(LpResult::Optimal { value, point })
}

/// Pivots basic artificials out on any usable structural or slack column;
/// rows where that is impossible are redundant and get dropped.
fn drive_out_artificials(tab: &mut Tableau) {
    let mut r = 0;
    while r < tab.m() {
        if tab.basis[r] < tab.first_artificial {
            r += 1;
            continue;
        }
        let col = (0..tab.first_artificial)
            .filter(|&j| tab.t[(r, j)].abs() > PIVOT_TOL)
            .max_by(|&a, &b| tab.t[(r, a)].abs().total_cmp(&tab.t[(r, b)].abs()));
        match col {
            Some(j) => {
                tab.pivot(r, j);
                r += 1;
            }
            None => {
                let rows = tab.t.rows();
                let cols = tab.t.cols();
                let mut data = Vec::with_capacity((rows - 1) * cols);
                for i in (0..rows).filter(|&i| i != r) {
                    data.extend_from_slice(tab.t.row(i));
                }
                tab.t = Matrix::from_row_major(rows - 1, cols, data);
                tab.basis.remove(r);
                tab.row_origin.remove(r);
            }
        }
    }
}

/// Basic values recomputed as `B⁻¹ b` from the original standard-form rows.
fn basic_solution(tab: &Tableau, sf: &StandardForm) -> Vec<f64> {
    let m = tab.m();
    let rhs = tab.rhs_col();
    let mut y = vec![0.0; tab.ncols];
    for i in 0..m {
        y[tab.basis[i]] = tab.t[(i, rhs)];
    }
    if m > 0 {
        // Rebuild B from the unflipped rows; slack columns are numbered by
        // the order of inequality rows.
        let mut slack_col = vec![usize::MAX; sf.rows.len()];
        let mut next = sf.ncols;
        for (k, (_, sense, _)) in sf.rows.iter().enumerate() {
            if *sense != Sense::Eq {
                slack_col[k] = next;
                next += 1;
            }
        }
        let mut b_mat = Matrix::zeros(m, m);
        let mut b_rhs = vec![0.0; m];
        for (i, &orig) in tab.row_origin.iter().enumerate() {
            let (row, sense, r) = &sf.rows[orig];
            b_rhs[i] = *r;
            for (k, &col) in tab.basis.iter().enumerate() {
                b_mat[(i, k)] = if col < sf.ncols {
                    row[col]
                } else if col == slack_col[orig] {
                    if *sense == Sense::Le {
                        1.0
                    } else {
                        -1.0
                    }
                } else {
                    0.0
                };
            }
        }
        if let Some(refined) = solve_dense(&b_mat, &b_rhs, 1e-12) {
            for (k, &col) in tab.basis.iter().enumerate() {
                y[col] = refined[k];
            }
        }
    }
    for v in y.iter_mut() {
        if *v < 0.0 && *v > -FEAS_TOL {
            *v = 0.0;
        }
    }
    y
}

fn check_feasible(problem: &LpProblem, x: &[f64]) -> Result<()> {
    for (k, c) in problem.constraints.iter().enumerate() {
        let lhs = dot(&c.row, x);
        let scale = 1.0
            + c.rhs.abs()
            + c.row.iter().zip(x).map(|(a, v)| (a * v).abs()).sum::<f64>();
        let viol = match c.sense {
            Sense::Le => lhs - c.rhs,
            Sense::Ge => c.rhs - lhs,
            Sense::Eq => (lhs - c.rhs).abs(),
        };
        if viol > 10.0 * FEAS_TOL * scale {
            return Err(CertError::LpNumerical(format!(
                "constraint {k} violated by {viol:e} at returned vertex"
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_variable_bounded() {
        let mut p = LpProblem::new(1);
        p.set_objective(vec![1.0]);
        p.add_constraint(vec![1.0], Sense::Le, 3.0);
        p.add_constraint(vec![1.0], Sense::Ge, 0.0);
        let r = solve_lp(&p).unwrap();
        assert_eq!(r.value(), Some(3.0));
        assert_eq!(r.point(), Some(&[3.0][..]));
    }

    #[test]
    fn contradiction_is_infeasible() {
        let mut p = LpProblem::new(1);
        p.add_constraint(vec![1.0], Sense::Le, 0.0);
        p.add_constraint(vec![1.0], Sense::Ge, 1.0);
        assert_eq!(solve_lp(&p).unwrap().status(), LpStatus::Infeasible);
    }

    #[test]
    fn missing_upper_bound_is_unbounded() {
        let mut p = LpProblem::new(1);
        p.set_objective(vec![1.0]);
        p.set_bounds(0, 0.0, f64::INFINITY);
        assert_eq!(solve_lp(&p).unwrap().status(), LpStatus::Unbounded);
    }

    #[test]
    fn crossed_bounds_are_infeasible() {
        let mut p = LpProblem::new(2);
        p.set_bounds(1, 1.0, 0.0);
        assert_eq!(solve_lp(&p).unwrap().status(), LpStatus::Infeasible);
    }

    #[test]
    fn free_and_reflected_variables() {
        // max -x - y  s.t. x + y >= -3, x <= 5 (x free below), y free.
        let mut p = LpProblem::new(2);
        p.set_objective(vec![-1.0, -1.0]);
        p.add_constraint(vec![1.0, 1.0], Sense::Ge, -3.0);
        p.set_bounds(0, f64::NEG_INFINITY, 5.0);
        let r = solve_lp(&p).unwrap();
        assert!((r.value().unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn redundant_equalities() {
        // x + y = 1 stated twice, x - y = 0.
        let mut p = LpProblem::new(2);
        p.set_objective(vec![1.0, 2.0]);
        p.add_constraint(vec![1.0, 1.0], Sense::Eq, 1.0);
        p.add_constraint(vec![2.0, 2.0], Sense::Eq, 2.0);
        p.add_constraint(vec![1.0, -1.0], Sense::Eq, 0.0);
        let r = solve_lp(&p).unwrap();
        assert!((r.value().unwrap() - 1.5).abs() < 1e-12);
        let x = r.point().unwrap();
        assert!((x[0] - 0.5).abs() < 1e-12 && (x[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn degenerate_vertex_terminates() {
        // Classic cycling example (Beale) under Dantzig's rule.
        let mut p = LpProblem::new(4);
        p.set_objective(vec![0.75, -150.0, 0.02, -6.0]);
        p.add_constraint(vec![0.25, -60.0, -0.04, 9.0], Sense::Le, 0.0);
        p.add_constraint(vec![0.5, -90.0, -0.02, 3.0], Sense::Le, 0.0);
        p.add_constraint(vec![0.0, 0.0, 1.0, 0.0], Sense::Le, 1.0);
        for j in 0..4 {
            p.set_bounds(j, 0.0, f64::INFINITY);
        }
        let r = solve_lp(&p).unwrap();
        assert!((r.value().unwrap() - 0.05).abs() < 1e-12);
    }

    #[test]
    fn rejects_non_finite_data() {
        let mut p = LpProblem::new(1);
        p.add_constraint(vec![f64::NAN], Sense::Le, 1.0);
        assert!(matches!(solve_lp(&p), Err(CertError::NonFinite(_))));
    }

    #[test]
    fn repeated_solves_identical() {
        let mut p = LpProblem::new(3);
        p.set_objective(vec![1.0, 0.3, -0.7]);
        p.add_constraint(vec![1.0, 2.0, 1.0], Sense::Le, 4.0);
        p.add_constraint(vec![-1.0, 1.0, 3.0], Sense::Ge, -2.0);
        for j in 0..3 {
            p.set_bounds(j, -1.0, 2.0);
        }
        let a = solve_lp(&p).unwrap();
        let b = solve_lp(&p).unwrap();
        assert_eq!(a, b);
    }
}
