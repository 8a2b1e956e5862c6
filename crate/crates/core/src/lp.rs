//! Dense bounded-variable primal simplex.
//!
//! All relaxation solves go through this engine. It supports appending rows
//! (cuts) and changing column bounds (branching) with warm starts from a
//! previous basis, and it reports the pivot count, which the solver uses as
//! its deterministic work unit — so every tie-break below is by index and
//! repeated runs of the same input pivot identically.
//!
//! Internally each row `a^T x <sense> rhs` becomes `a^T x + s = rhs` with the
//! slack bounded by the sense (`<=`: s >= 0, `>=`: s <= 0, `=`: s = 0), and a
//! phase-1/phase-2 loop prices columns with Dantzig's rule, falling back to
//! Bland's rule after a run of degenerate pivots.

use crate::instance::Sense;
use crate::interval::Interval;
use crate::tol;
use thiserror::Error;

pub const DEFAULT_PIVOT_LIMIT: u64 = 50_000;
/// Steps shorter than this count as degenerate.
const DEGEN_EPS: f64 = 1e-11;
/// Consecutive degenerate pivots before switching to Bland's rule.
const BLAND_TRIGGER: u32 = 50;
/// Ratio-test ties within this window are broken by pivot magnitude.
const RATIO_TIE: f64 = 1e-10;
const MAX_REFACTORS: u32 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct LpRow {
    pub coeffs: Vec<f64>,
    pub sense: Sense,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpModel {
    pub objective: Vec<f64>,
    pub rows: Vec<LpRow>,
    pub bounds: Vec<Interval>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterLimit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Structural variable values at the final iterate.
    pub x: Vec<f64>,
    /// `c^T x` when optimal; +inf for infeasible, -inf for unbounded.
    pub objective: f64,
    pub pivots: u64,
}

/// Column statuses (structurals then slacks) describing a simplex basis.
/// The default (empty) basis acts like a cold start: the column count never
/// matches, so solvers fall back to the slack basis.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Basis {
    status: Vec<ColStatus>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ColStatus {
    Basic,
    AtLower,
    AtUpper,
    /// Nonbasic free column parked at zero.
    Free,
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
#[error("simplex basis degenerated beyond recovery")]
pub struct NumericsError;

impl LpModel {
    pub fn new(objective: Vec<f64>, bounds: Vec<Interval>) -> Self {
        assert_eq!(objective.len(), bounds.len());
        LpModel { objective, rows: Vec::new(), bounds }
    }

    pub fn n(&self) -> usize {
        self.objective.len()
    }

    /// Appends rows; an existing basis stays valid as a warm start because
    /// the new slacks extend it.
    pub fn add_rows(&mut self, rows: impl IntoIterator<Item = LpRow>) {
        for r in rows {
            assert_eq!(r.coeffs.len(), self.n(), "row dimension mismatch");
            assert!(r.rhs.is_finite());
            self.rows.push(r);
        }
    }

    pub fn set_bounds(&mut self, var: usize, bounds: Interval) {
        assert!(var < self.n(), "column index out of range");
        self.bounds[var] = bounds;
    }

    /// Solves with an optional warm-start basis. `Err` means the basis could
    /// not be kept numerically consistent even after refactoring; callers
    /// treat that like an iteration limit.
    pub fn solve(
        &self,
        warm: Option<&Basis>,
        pivot_limit: u64,
    ) -> Result<(LpSolution, Basis), NumericsError> {
        assert!(pivot_limit >= 1);
        let mut t = Tableau::build(self, warm);
        let mut pivots = 0u64;
        let mut degen_streak = 0u32;
        let mut bland = false;
        let mut refactors = 0u32;
        let status = loop {
            if pivots >= pivot_limit {
                break LpStatus::IterLimit;
            }
            let weights = t.infeasibility_weights();
            let phase1 = weights.iter().any(|&w| w != 0);
            let d = t.reduced_costs(phase1, &self.objective, &weights);
            match t.pick_entering(&d, bland) {
                None => {
                    if phase1 {
                        break LpStatus::Infeasible;
                    }
                    if t.primal_feasible(self) {
                        break LpStatus::Optimal;
                    }
                    // drift: rebuild from the current basis and keep going
                    if refactors >= MAX_REFACTORS {
                        return Err(NumericsError);
                    }
                    refactors += 1;
                    t.refactor(self);
                }
                Some((j, dir)) => {
                    match t.ratio_test(j, dir, phase1, bland) {
                        Step::Unbounded => {
                            if !phase1 {
                                break LpStatus::Unbounded;
                            }
                            // a violated bound is finite, so phase 1 always
                            // has a blocker; reaching here is numeric noise
                            if refactors >= MAX_REFACTORS {
                                return Err(NumericsError);
                            }
                            refactors += 1;
                            t.refactor(self);
                        }
                        Step::Flip(step) => {
                            t.flip(j);
                            pivots += 1;
                            track_degeneracy(step, &mut degen_streak, &mut bland);
                        }
                        Step::Pivot { row, step, leave_at_upper } => {
                            t.pivot(row, j, leave_at_upper);
                            pivots += 1;
                            track_degeneracy(step, &mut degen_streak, &mut bland);
                        }
                    }
                    t.recompute_basic_values();
                }
            }
        };
        let x = t.structural_values();
        let objective = match status {
            LpStatus::Infeasible => f64::INFINITY,
            LpStatus::Unbounded => f64::NEG_INFINITY,
            _ => dot_sparse(&self.objective, &x),
        };
        let solution = LpSolution { status, x, objective, pivots };
        Ok((solution, Basis { status: t.status }))
    }
}

fn track_degeneracy(step: f64, streak: &mut u32, bland: &mut bool) {
    if step <= DEGEN_EPS {
        *streak += 1;
        if *streak >= BLAND_TRIGGER {
            *bland = true;
        }
    } else {
        *streak = 0;
        *bland = false;
    }
}

fn dot_sparse(c: &[f64], x: &[f64]) -> f64 {
    c.iter().zip(x).map(|(a, b)| a * b).sum()
}

enum Step {
    Unbounded,
    /// Entering column travels to its opposite bound.
    Flip(f64),
    Pivot { row: usize, step: f64, leave_at_upper: bool },
}

struct Tableau {
    n: usize,
    n_total: usize,
    /// `B^{-1} A`, one Vec per row over all columns.
    a: Vec<Vec<f64>>,
    /// `B^{-1} b`.
    rhs: Vec<f64>,
    /// Basic column of each row.
    basis: Vec<usize>,
    status: Vec<ColStatus>,
    lb: Vec<f64>,
    ub: Vec<f64>,
    /// Values of the basic variables, row-aligned.
    xb: Vec<f64>,
}

impl Tableau {
    fn build(model: &LpModel, warm: Option<&Basis>) -> Tableau {
        let n = model.n();
        let m = model.rows.len();
        let n_total = n + m;
        let mut lb = Vec::with_capacity(n_total);
        let mut ub = Vec::with_capacity(n_total);
        for b in &model.bounds {
            lb.push(b.lo);
            ub.push(b.hi);
        }
        for r in &model.rows {
            let (l, u) = match r.sense {
                Sense::Le => (0.0, f64::INFINITY),
                Sense::Ge => (f64::NEG_INFINITY, 0.0),
                Sense::Eq => (0.0, 0.0),
            };
            lb.push(l);
            ub.push(u);
        }

        let default_status = |j: usize| {
            if lb[j].is_finite() {
                ColStatus::AtLower
            } else if ub[j].is_finite() {
                ColStatus::AtUpper
            } else {
                ColStatus::Free
            }
        };
        let mut status: Vec<ColStatus> = match warm {
            Some(basis) if basis.status.len() <= n_total => {
                let mut s = basis.status.clone();
                // slack extension for rows added since the basis was taken
                s.resize(n_total, ColStatus::Basic);
                s
            }
            _ => Vec::new(),
        };
        let slack_reset = |status: &mut Vec<ColStatus>| {
            status.clear();
            for j in 0..n {
                status.push(default_status(j));
            }
            for _ in 0..m {
                status.push(ColStatus::Basic);
            }
        };
        if status.is_empty() {
            slack_reset(&mut status);
        }
        // repair statuses that no longer match the bounds
        for j in 0..n_total {
            status[j] = match status[j] {
                ColStatus::Basic => ColStatus::Basic,
                ColStatus::AtLower if lb[j].is_finite() => ColStatus::AtLower,
                ColStatus::AtUpper if ub[j].is_finite() => ColStatus::AtUpper,
                ColStatus::Free if lb[j].is_infinite() && ub[j].is_infinite() => ColStatus::Free,
                _ => default_status(j),
            };
        }
        if status.iter().filter(|&&s| s == ColStatus::Basic).count() != m {
            slack_reset(&mut status);
        }

        let mut t = Tableau {
            n,
            n_total,
            a: Vec::new(),
            rhs: Vec::new(),
            basis: Vec::new(),
            status,
            lb,
            ub,
            xb: vec![0.0; m],
        };
        t.factorize(model);
        t.recompute_basic_values();
        t
    }

    /// Rebuilds `B^{-1}A` by Gauss-Jordan from the current statuses. Columns
    /// that turn out dependent are demoted to a bound and replaced by slacks.
    fn factorize(&mut self, model: &LpModel) {
        let m = model.rows.len();
        self.a = model
            .rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let mut row = Vec::with_capacity(self.n_total);
                row.extend_from_slice(&r.coeffs);
                row.resize(self.n_total, 0.0);
                row[self.n + i] = 1.0;
                row
            })
            .collect();
        self.rhs = model.rows.iter().map(|r| r.rhs).collect();
        self.basis = vec![usize::MAX; m];
        let mut assigned = vec![false; m];
        let basic_cols: Vec<usize> = (0..self.n_total)
            .filter(|&j| self.status[j] == ColStatus::Basic)
            .collect();
        for j in basic_cols {
            // unassigned row with the largest pivot entry, earliest on ties
            let mut best: Option<(usize, f64)> = None;
            for (i, row) in self.a.iter().enumerate() {
                if assigned[i] {
                    continue;
                }
                let mag = row[j].abs();
                if mag > best.map_or(tol::PIVOT_EPS.max(1e-9), |(_, b)| b) {
                    best = Some((i, mag));
                }
            }
            match best {
                Some((r, _)) => {
                    self.eliminate(r, j);
                    self.basis[r] = j;
                    assigned[r] = true;
                }
                None => {
                    // dependent column: park it on a bound instead
                    self.status[j] = if self.lb[j].is_finite() {
                        ColStatus::AtLower
                    } else if self.ub[j].is_finite() {
                        ColStatus::AtUpper
                    } else {
                        ColStatus::Free
                    };
                }
            }
        }
        for (r, &done) in assigned.iter().enumerate() {
            if !done {
                // own slack: untouched by other pivots, entry is still 1
                let j = self.n + r;
                self.status[j] = ColStatus::Basic;
                self.eliminate(r, j);
                self.basis[r] = j;
            }
        }
    }

    fn refactor(&mut self, model: &LpModel) {
        self.factorize(model);
        self.recompute_basic_values();
    }

    /// Scales row `r` to make column `j` a unit column.
    fn eliminate(&mut self, r: usize, j: usize) {
        let p = self.a[r][j];
        debug_assert!(p.abs() > tol::PIVOT_EPS);
        let inv = 1.0 / p;
        for v in &mut self.a[r] {
            *v *= inv;
        }
        self.a[r][j] = 1.0; // exact unit, not 0.999..
        self.rhs[r] *= inv;
        let pivot_row = std::mem::take(&mut self.a[r]);
        let pivot_rhs = self.rhs[r];
        for (i, row) in self.a.iter_mut().enumerate() {
            if i == r || row.is_empty() {
                continue;
            }
            let f = row[j];
            if f != 0.0 {
                for (v, p) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * p;
                }
                row[j] = 0.0;
                self.rhs[i] -= f * pivot_rhs;
            }
        }
        self.a[r] = pivot_row;
    }

    fn nonbasic_value(&self, j: usize) -> f64 {
        match self.status[j] {
            ColStatus::AtLower => self.lb[j],
            ColStatus::AtUpper => self.ub[j],
            ColStatus::Free => 0.0,
            ColStatus::Basic => unreachable!("basic column has no fixed value"),
        }
    }

    fn recompute_basic_values(&mut self) {
        for i in 0..self.a.len() {
            let mut v = self.rhs[i];
            for j in 0..self.n_total {
                if self.status[j] != ColStatus::Basic {
                    let nb = self.nonbasic_value(j);
                    if nb != 0.0 {
                        v -= self.a[i][j] * nb;
                    }
                }
            }
            self.xb[i] = v;
        }
    }

    /// Per-row infeasibility direction: -1 below its lower bound, +1 above
    /// its upper, 0 feasible.
    fn infeasibility_weights(&self) -> Vec<i8> {
        self.basis
            .iter()
            .zip(&self.xb)
            .map(|(&l, &x)| {
                if x < self.lb[l] - tol::LP_FEAS {
                    -1
                } else if x > self.ub[l] + tol::LP_FEAS {
                    1
                } else {
                    0
                }
            })
            .collect()
    }

    /// Reduced costs of all columns: phase 1 prices total infeasibility,
    /// phase 2 the true objective (structural costs only).
    fn reduced_costs(&self, phase1: bool, c: &[f64], weights: &[i8]) -> Vec<f64> {
        let mut d = vec![0.0; self.n_total];
        if phase1 {
            for (j, dj) in d.iter_mut().enumerate() {
                if self.status[j] == ColStatus::Basic {
                    continue;
                }
                let mut s = 0.0;
                for (i, &w) in weights.iter().enumerate() {
                    if w != 0 {
                        s -= w as f64 * self.a[i][j];
                    }
                }
                *dj = s;
            }
        } else {
            let cost = |j: usize| if j < self.n { c[j] } else { 0.0 };
            for (j, dj) in d.iter_mut().enumerate() {
                if self.status[j] == ColStatus::Basic {
                    continue;
                }
                let mut s = cost(j);
                for (i, &l) in self.basis.iter().enumerate() {
                    let cb = cost(l);
                    if cb != 0.0 {
                        s -= cb * self.a[i][j];
                    }
                }
                *dj = s;
            }
        }
        d
    }

    /// Entering column and direction (+1 up from lower, -1 down from upper).
    /// Dantzig by default, first-improving under Bland's rule.
    fn pick_entering(&self, d: &[f64], bland: bool) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64, f64)> = None; // (col, dir, score)
        for (j, &dj) in d.iter().enumerate() {
            if self.status[j] == ColStatus::Basic || self.ub[j] - self.lb[j] <= 0.0 {
                continue;
            }
            let dir = match self.status[j] {
                ColStatus::AtLower if dj < -tol::LP_OPT => 1.0,
                ColStatus::AtUpper if dj > tol::LP_OPT => -1.0,
                ColStatus::Free if dj.abs() > tol::LP_OPT => -dj.signum(),
                _ => continue,
            };
            if bland {
                return Some((j, dir));
            }
            let score = dj.abs();
            if best.is_none_or(|(_, _, s)| score > s) {
                best = Some((j, dir, score));
            }
        }
        best.map(|(j, dir, _)| (j, dir))
    }

    /// Finds the blocking event when column `j` moves in `dir`. In phase 1 a
    /// basic variable beyond a bound blocks at the bound it is returning to,
    /// and one drifting further from feasibility never blocks. Ties within
    /// `RATIO_TIE` prefer the bound flip, then the largest pivot magnitude,
    /// then the smallest row; under Bland's rule the smallest leaving column
    /// wins instead, which is what makes the anti-cycling guarantee work.
    fn ratio_test(&self, j: usize, dir: f64, phase1: bool, bland: bool) -> Step {
        struct Cand {
            row: usize,
            t: f64,
            mag: f64,
            leave_at_upper: bool,
            leaving_col: usize,
        }
        let mut cands: Vec<Cand> = Vec::new();
        for (i, row) in self.a.iter().enumerate() {
            let delta = -row[j] * dir;
            if delta.abs() <= tol::PIVOT_EPS {
                continue;
            }
            let l = self.basis[i];
            let x = self.xb[i];
            let target = if delta > 0.0 {
                if phase1 && x < self.lb[l] - tol::LP_FEAS {
                    self.lb[l]
                } else if phase1 && x > self.ub[l] + tol::LP_FEAS {
                    continue; // drifting further above; no breakpoint this side
                } else if self.ub[l].is_finite() {
                    self.ub[l]
                } else {
                    continue;
                }
            } else if phase1 && x > self.ub[l] + tol::LP_FEAS {
                self.ub[l]
            } else if phase1 && x < self.lb[l] - tol::LP_FEAS {
                continue;
            } else if self.lb[l].is_finite() {
                self.lb[l]
            } else {
                continue;
            };
            cands.push(Cand {
                row: i,
                t: ((target - x) / delta).max(0.0),
                mag: row[j].abs(),
                leave_at_upper: target == self.ub[l],
                leaving_col: l,
            });
        }
        let flip_t = self.ub[j] - self.lb[j]; // infinite for free columns
        let min_t = cands
            .iter()
            .map(|c| c.t)
            .fold(flip_t.min(f64::INFINITY), f64::min);
        if !min_t.is_finite() {
            return Step::Unbounded;
        }

        let flip_ties = flip_t <= min_t + RATIO_TIE;
        let tied = cands.iter().filter(|c| c.t <= min_t + RATIO_TIE);
        let pick = if bland {
            // smallest leaving column; the entering column itself counts for
            // the flip
            let best = tied.min_by_key(|c| c.leaving_col);
            match best {
                Some(c) if !(flip_ties && j < c.leaving_col) => Some(c),
                _ => None,
            }
        } else if flip_ties {
            None
        } else {
            tied.max_by(|a, b| {
                a.mag
                    .partial_cmp(&b.mag)
                    .unwrap()
                    .then(b.row.cmp(&a.row))
            })
        };
        match pick {
            Some(c) => Step::Pivot { row: c.row, step: c.t, leave_at_upper: c.leave_at_upper },
            None => Step::Flip(flip_t),
        }
    }

    fn flip(&mut self, j: usize) {
        self.status[j] = match self.status[j] {
            ColStatus::AtLower => ColStatus::AtUpper,
            ColStatus::AtUpper => ColStatus::AtLower,
            other => other,
        };
    }

    fn pivot(&mut self, r: usize, j: usize, leave_at_upper: bool) {
        let leaving = self.basis[r];
        self.status[leaving] = if leave_at_upper { ColStatus::AtUpper } else { ColStatus::AtLower };
        self.eliminate(r, j);
        self.basis[r] = j;
        self.status[j] = ColStatus::Basic;
    }

    fn structural_values(&self) -> Vec<f64> {
        let mut x = vec![0.0; self.n];
        for (j, xj) in x.iter_mut().enumerate() {
            if self.status[j] != ColStatus::Basic {
                *xj = self.nonbasic_value(j);
            }
        }
        for (i, &l) in self.basis.iter().enumerate() {
            if l < self.n {
                x[l] = self.xb[i];
            }
        }
        x
    }

    /// Checks the current iterate against the ORIGINAL model data.
    fn primal_feasible(&self, model: &LpModel) -> bool {
        let x = self.structural_values();
        for (xj, b) in x.iter().zip(&model.bounds) {
            if *xj < b.lo - tol::LP_FEAS || *xj > b.hi + tol::LP_FEAS {
                return false;
            }
        }
        for r in &model.rows {
            let act = dot_sparse(&r.coeffs, &x);
            let ok = match r.sense {
                Sense::Le => act <= r.rhs + tol::LP_FEAS,
                Sense::Ge => act >= r.rhs - tol::LP_FEAS,
                Sense::Eq => (act - r.rhs).abs() <= tol::LP_FEAS,
            };
            if !ok {
                return false;
            }
        }
        true
    }
}
