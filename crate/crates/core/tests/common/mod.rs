//! Shared oracles for the integration tests.
//!
//! Everything here recomputes reference answers from first principles —
//! exhaustive enumeration and dense linear algebra — without touching the
//! solver's own simplex, relaxation, or branch-and-bound code paths.

// each test target compiles its own copy and uses a different subset
#![allow(dead_code)]

use minlplab::instance::{Instance, Sense};
use minlplab::lp::LpModel;

/// Gaussian elimination with partial pivoting; `None` when singular.
pub fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let k = b.len();
    for col in 0..k {
        let piv = (col..k).max_by(|&i, &j| {
            a[i][col]
                .abs()
                .partial_cmp(&a[j][col].abs())
                .expect("finite coefficients")
        })?;
        if a[piv][col].abs() < 1e-9 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for i in col + 1..k {
            let (top, bottom) = a.split_at_mut(i);
            let f = bottom[0][col] / top[col][col];
            if f != 0.0 {
                for (t, &p) in bottom[0][col..].iter_mut().zip(&top[col][col..]) {
                    *t -= f * p;
                }
                b[i] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; k];
    for col in (0..k).rev() {
        let mut v = b[col];
        for c in col + 1..k {
            v -= a[col][c] * x[c];
        }
        x[col] = v / a[col][col];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

fn lp_point_feasible(model: &LpModel, x: &[f64], tol: f64) -> bool {
    for (xj, b) in x.iter().zip(&model.bounds) {
        if *xj < b.lo - tol || *xj > b.hi + tol {
            return false;
        }
    }
    for r in &model.rows {
        let act: f64 = r.coeffs.iter().zip(x).map(|(a, b)| a * b).sum();
        let ok = match r.sense {
            Sense::Le => act <= r.rhs + tol,
            Sense::Ge => act >= r.rhs - tol,
            Sense::Eq => (act - r.rhs).abs() <= tol,
        };
        if !ok {
            return false;
        }
    }
    true
}

/// Brute-force LP optimum by enumerating every candidate vertex: each choice
/// of k rows held at equality, k variables solved from them, and the
/// remaining variables pinned to a bound. Requires finite bounds; `None`
/// when no candidate is feasible (the LP is infeasible).
pub fn lp_vertex_optimum(model: &LpModel) -> Option<f64> {
    let n = model.n();
    let m = model.rows.len();
    assert!(n <= 12 && m <= 12, "oracle is exponential; keep it tiny");
    assert!(
        model.bounds.iter().all(|b| b.lo.is_finite() && b.hi.is_finite()),
        "oracle needs a bounded box"
    );
    let mut best: Option<f64> = None;
    let mut consider = |x: &[f64]| {
        if lp_point_feasible(model, x, 1e-7) {
            let obj: f64 = model.objective.iter().zip(x).map(|(c, v)| c * v).sum();
            best = Some(best.map_or(obj, |b: f64| b.min(obj)));
        }
    };
    for row_mask in 0u32..(1 << m) {
        let k = row_mask.count_ones();
        if k > n as u32 {
            continue;
        }
        let rows: Vec<usize> = (0..m).filter(|i| row_mask >> i & 1 == 1).collect();
        for var_mask in 0u32..(1 << n) {
            if var_mask.count_ones() != k {
                continue;
            }
            let solved: Vec<usize> = (0..n).filter(|j| var_mask >> j & 1 == 1).collect();
            let pinned: Vec<usize> = (0..n).filter(|j| var_mask >> j & 1 == 0).collect();
            for bound_mask in 0u32..(1 << pinned.len()) {
                let mut x = vec![0.0; n];
                for (b, &j) in pinned.iter().enumerate() {
                    x[j] = if bound_mask >> b & 1 == 1 {
                        model.bounds[j].hi
                    } else {
                        model.bounds[j].lo
                    };
                }
                if k == 0 {
                    consider(&x);
                    continue;
                }
                let a: Vec<Vec<f64>> = rows
                    .iter()
                    .map(|&r| solved.iter().map(|&j| model.rows[r].coeffs[j]).collect())
                    .collect();
                let b: Vec<f64> = rows
                    .iter()
                    .map(|&r| {
                        model.rows[r].rhs
                            - pinned
                                .iter()
                                .map(|&j| model.rows[r].coeffs[j] * x[j])
                                .sum::<f64>()
                    })
                    .collect();
                let Some(sol) = solve_dense(a, b) else { continue };
                for (&j, v) in solved.iter().zip(&sol) {
                    x[j] = *v;
                }
                consider(&x);
            }
        }
    }
    best
}

/// Maximum violation of bounds, linear rows, and nonlinear constraints of an
/// instance at a point, evaluated directly from the instance data. Domain
/// errors count as infinite violation.
pub fn instance_violation(inst: &Instance, x: &[f64]) -> f64 {
    let mut worst = 0.0f64;
    for (v, &xj) in inst.variables.iter().zip(x) {
        worst = worst.max(v.lb - xj).max(xj - v.ub);
        if v.is_integer {
            worst = worst.max((xj - xj.round()).abs());
        }
    }
    for r in &inst.linear_constraints {
        let act: f64 = r.terms.iter().map(|&(j, c)| c * x[j]).sum();
        let viol = match r.sense {
            Sense::Le => act - r.rhs,
            Sense::Ge => r.rhs - act,
            Sense::Eq => (act - r.rhs).abs(),
        };
        worst = worst.max(viol);
    }
    let mut scratch = minlplab::expr::EvalScratch::default();
    for c in &inst.nonlinear_constraints {
        match c.dag.eval(c.dag.single_root(), x, &mut scratch) {
            Ok(g) => worst = worst.max(g),
            Err(_) => return f64::INFINITY,
        }
    }
    worst
}

/// Linear objective value of an instance at a point.
pub fn instance_objective(inst: &Instance, x: &[f64]) -> f64 {
    inst.objective.iter().map(|&(j, c)| c * x[j]).sum()
}

/// Strict/relaxed reference minima of a tiny instance, computed by integer
/// enumeration plus dense continuous scanning. `strict` minimizes over
/// points violating nothing beyond 1e-9 — certainly-feasible values any
/// correct solver must match or beat (plus tolerance). `relaxed` minimizes
/// over a 1e-5 slack superset of every point the solver's own 1e-6
/// feasibility tolerance could accept — no correct solve may report an
/// objective below it (minus tolerance).
#[derive(Debug, Default, Clone, Copy)]
pub struct OracleMinimum {
    pub strict: Option<f64>,
    pub relaxed: Option<f64>,
}

pub const ORACLE_STRICT: f64 = 1e-9;
pub const ORACLE_RELAXED: f64 = 1e-5;
/// Base scan resolution for continuous variables.
pub const ORACLE_GRID_STEP: f64 = 1e-3;

impl OracleMinimum {
    fn offer(&mut self, violation: f64, objective: f64) {
        if violation <= ORACLE_STRICT {
            self.strict = Some(self.strict.map_or(objective, |b| b.min(objective)));
        }
        if violation <= ORACLE_RELAXED {
            self.relaxed = Some(self.relaxed.map_or(objective, |b| b.min(objective)));
        }
    }

    fn merge(&mut self, other: OracleMinimum) {
        if let Some(o) = other.strict {
            self.offer(0.0, o); // already certified strict
        }
        if let Some(o) = other.relaxed {
            if o < self.relaxed.unwrap_or(f64::INFINITY) {
                self.relaxed = Some(o);
            }
        }
    }

    /// Both minima exist and the slack band moves the optimum by less than
    /// half the comparison tolerance — the instance is numerically clean
    /// enough for a two-sided `|solver - strict| <= 1e-3` check.
    pub fn well_conditioned(&self) -> bool {
        matches!((self.strict, self.relaxed), (Some(s), Some(r)) if s - r <= 5e-4)
    }
}

/// Exhaustive minimum of a tiny instance: every integer lattice point is
/// enumerated, and the continuous remainder (at most three variables) is
/// scanned on a dense grid with constraint boundaries pinned down by
/// bisection. Objectives are linear, so each one-dimensional slice attains
/// its minimum at a box edge or a feasibility boundary — both of which the
/// scan hits almost exactly; grid resolution only matters for locating
/// feasible islands in the first place. Two- and three-dimensional scans
/// shrink adaptively around the best column to recover sub-grid precision.
pub fn minlp_grid_minimum(inst: &Instance) -> OracleMinimum {
    let mut ints = Vec::new();
    let mut conts = Vec::new();
    for (j, v) in inst.variables.iter().enumerate() {
        assert!(
            v.lb.is_finite() && v.ub.is_finite(),
            "oracle needs a bounded box (variable {})",
            v.name
        );
        if v.is_integer {
            ints.push(j);
        } else if v.ub - v.lb > 0.0 {
            conts.push(j);
        }
    }
    assert!(conts.len() <= 3, "oracle scans at most three continuous dims");
    let lattice: f64 =
        ints.iter().map(|&j| inst.variables[j].ub - inst.variables[j].lb + 1.0).product();
    assert!(lattice <= 5000.0, "integer lattice too large to enumerate");
    let mut x: Vec<f64> = inst.variables.iter().map(|v| v.lb).collect();
    let mut best = OracleMinimum::default();
    enumerate_ints(inst, &ints, &conts, 0, &mut x, &mut best);
    best
}

fn enumerate_ints(
    inst: &Instance,
    ints: &[usize],
    conts: &[usize],
    k: usize,
    x: &mut Vec<f64>,
    best: &mut OracleMinimum,
) {
    if k == ints.len() {
        match *conts {
            [] => best.offer(instance_violation(inst, x), instance_objective(inst, x)),
            [j] => {
                let (lo, hi) = (inst.variables[j].lb, inst.variables[j].ub);
                best.merge(scan_line(inst, x, j, lo, hi, ORACLE_GRID_STEP));
            }
            [j0, j1] => best.merge(scan_plane(inst, x, j0, j1, 240)),
            [j0, j1, j2] => best.merge(scan_volume(inst, x, j0, j1, j2)),
            _ => unreachable!("guarded above"),
        }
        return;
    }
    let j = ints[k];
    let lo = inst.variables[j].lb.ceil() as i64;
    let hi = inst.variables[j].ub.floor() as i64;
    for v in lo..=hi {
        x[j] = v as f64;
        enumerate_ints(inst, ints, conts, k + 1, x, best);
    }
}

/// Scans `x[j]` over `[lo, hi]`, offering every grid point and bisecting
/// every feasibility transition down to ~1e-12 for both slack thresholds.
/// Leaves `x[j]` unspecified on return.
fn scan_line(
    inst: &Instance,
    x: &mut [f64],
    j: usize,
    lo: f64,
    hi: f64,
    step: f64,
) -> OracleMinimum {
    let mut out = OracleMinimum::default();
    let w = hi - lo;
    if w <= 0.0 {
        x[j] = lo;
        out.offer(instance_violation(inst, x), instance_objective(inst, x));
        return out;
    }
    let steps = ((w / step).ceil() as usize).clamp(1, 60_000);
    let mut prev: Option<(f64, f64)> = None;
    for i in 0..=steps {
        let t = lo + w * i as f64 / steps as f64;
        x[j] = t;
        let v = instance_violation(inst, x);
        out.offer(v, instance_objective(inst, x));
        if let Some((pt, pv)) = prev {
            for thresh in [ORACLE_STRICT, ORACLE_RELAXED] {
                if (pv <= thresh) == (v <= thresh) {
                    continue;
                }
                let (mut t_ok, mut t_bad) = if pv <= thresh { (pt, t) } else { (t, pt) };
                for _ in 0..50 {
                    let mid = 0.5 * (t_ok + t_bad);
                    x[j] = mid;
                    if instance_violation(inst, x) <= thresh {
                        t_ok = mid;
                    } else {
                        t_bad = mid;
                    }
                }
                x[j] = t_ok;
                out.offer(instance_violation(inst, x), instance_objective(inst, x));
            }
        }
        prev = Some((t, v));
    }
    out
}

/// Exact one-dimensional scan of `x[j1]` with `x[j0]` fixed at `t`.
fn column(inst: &Instance, x: &mut Vec<f64>, j0: usize, t: f64, j1: usize) -> OracleMinimum {
    x[j0] = t;
    let (lo, hi) = (inst.variables[j1].lb, inst.variables[j1].ub);
    scan_line(inst, x, j1, lo, hi, ORACLE_GRID_STEP)
}

/// Key used to pick the most promising column: feasible objective first,
/// then (for columns that found nothing) how close they came to feasible.
fn column_key(inst: &Instance, x: &mut [f64], j1: usize, col: &OracleMinimum) -> f64 {
    if let Some(r) = col.relaxed {
        return r;
    }
    // infeasible column: rank by the smallest violation along a coarse probe
    // so refinement can still chase a feasible island
    let (lo, hi) = (inst.variables[j1].lb, inst.variables[j1].ub);
    let mut min_v = f64::INFINITY;
    for i in 0..=40 {
        x[j1] = lo + (hi - lo) * i as f64 / 40.0;
        min_v = min_v.min(instance_violation(inst, x));
    }
    1e6 + min_v // always sorts after any feasible column
}

/// Two-dimensional scan: columns of exact line scans over `x[j1]`, placed
/// uniformly over `x[j0]` (capped at `max_cols`), then shrunk adaptively
/// around the most promising columns until the column spacing is below
/// 2e-5.
fn scan_plane(
    inst: &Instance,
    x: &mut Vec<f64>,
    j0: usize,
    j1: usize,
    max_cols: usize,
) -> OracleMinimum {
    let (lo, hi) = (inst.variables[j0].lb, inst.variables[j0].ub);
    let w = hi - lo;
    let mut out = OracleMinimum::default();
    if w <= 0.0 {
        x[j0] = lo;
        let (l1, h1) = (inst.variables[j1].lb, inst.variables[j1].ub);
        return scan_line(inst, x, j1, l1, h1, ORACLE_GRID_STEP);
    }
    let cols = ((w / ORACLE_GRID_STEP).ceil() as usize).clamp(1, max_cols);
    let mut scored: Vec<(f64, f64)> = Vec::with_capacity(cols + 1); // (key, t)
    for i in 0..=cols {
        let t = lo + w * i as f64 / cols as f64;
        let col = column(inst, x, j0, t, j1);
        out.merge(col);
        scored.push((column_key(inst, x, j1, &col), t));
    }
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let spacing = w / cols as f64;
    if spacing <= 2e-5 {
        return out;
    }
    let best_key = scored[0].0;
    let margin = 0.2 * (1.0 + best_key.abs());
    let windows: Vec<f64> = scored
        .iter()
        .take(6)
        .filter(|(k, _)| *k <= best_key + margin)
        .map(|&(_, t)| t)
        .collect();
    for t_c in windows {
        let mut wlo = (t_c - spacing).max(lo);
        let mut whi = (t_c + spacing).min(hi);
        while whi - wlo > 2e-5 {
            let mut best_t = wlo;
            let mut best_k = f64::INFINITY;
            for i in 0..=16 {
                let t = wlo + (whi - wlo) * i as f64 / 16.0;
                let col = column(inst, x, j0, t, j1);
                out.merge(col);
                let k = column_key(inst, x, j1, &col);
                if k < best_k {
                    best_k = k;
                    best_t = t;
                }
            }
            let quarter = (whi - wlo) / 4.0;
            wlo = (best_t - quarter).max(lo);
            whi = (best_t + quarter).min(hi);
        }
    }
    out
}

/// Three-dimensional scan: coarse outer sweep over `x[j0]` of cheap
/// two-dimensional scans, then adaptive shrinking around the best outer
/// position. Kept affordable by capping the inner column counts.
fn scan_volume(
    inst: &Instance,
    x: &mut Vec<f64>,
    j0: usize,
    j1: usize,
    j2: usize,
) -> OracleMinimum {
    let (lo, hi) = (inst.variables[j0].lb, inst.variables[j0].ub);
    let w = hi - lo;
    let mut out = OracleMinimum::default();
    let outer = ((w / ORACLE_GRID_STEP).ceil() as usize).clamp(1, 48);
    let mut scored: Vec<(f64, f64)> = Vec::with_capacity(outer + 1);
    for i in 0..=outer {
        let t = lo + w * i as f64 / outer as f64;
        x[j0] = t;
        let plane = scan_plane(inst, x, j1, j2, 48);
        out.merge(plane);
        let key = plane.relaxed.unwrap_or(f64::INFINITY);
        scored.push((key, t));
    }
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let spacing = w / outer as f64;
    if spacing <= 1e-4 {
        return out;
    }
    let mut wlo = (scored[0].1 - spacing).max(lo);
    let mut whi = (scored[0].1 + spacing).min(hi);
    while whi - wlo > 1e-4 {
        let mut best_t = wlo;
        let mut best_k = f64::INFINITY;
        for i in 0..=10 {
            let t = wlo + (whi - wlo) * i as f64 / 10.0;
            x[j0] = t;
            let plane = scan_plane(inst, x, j1, j2, 48);
            out.merge(plane);
            let k = plane.relaxed.unwrap_or(f64::INFINITY);
            if k < best_k {
                best_k = k;
                best_t = t;
            }
        }
        let quarter = (whi - wlo) / 4.0;
        wlo = (best_t - quarter).max(lo);
        whi = (best_t + quarter).min(hi);
    }
    out
}
