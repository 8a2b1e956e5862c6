//! Linear relaxation of nonlinear constraints: envelope cuts separated at a
//! candidate point, plus the root loop that alternates LP solves with
//! separation rounds until the point stops moving or the round limit hits.
//!
//! Every nonlinear constraint is stored as `g(x) <= 0`, so a cut is an
//! affine underestimator `L` of `g` valid over the current variable box;
//! `L(x) <= 0` then keeps every feasible box point. Underestimators are
//! composed bottom-up through the DAG: tangents for convex atoms, secants
//! (chords) for concave ones, McCormick planes for products, and interval
//! bounds as constant forms of last resort. An atom that admits no affine
//! bound over its box — an unbounded product factor, a sign-mixed odd
//! power — leaves the constraint with no useful cut; such constraints are
//! reported back as still-violated pressure for spatial branching.

use crate::expr::{EvalScratch, ExprDag, Op};
use crate::instance::{Instance, Sense};
use crate::interval::Interval;
use crate::lp::{Basis, LpModel, LpRow, LpSolution, LpStatus, NumericsError, DEFAULT_PIVOT_LIMIT};
use crate::tol;

/// Separation rounds allowed while building the root relaxation.
pub const ROOT_CUT_ROUNDS: usize = 10;

/// Which envelope produced a cut. A composed cut can mix several atom
/// linearizations; the strongest structural claim wins (McCormick over
/// secant over tangent).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CutOrigin {
    TangentConvex,
    SecantConcave,
    McCormickBilinear,
}

/// One valid inequality `sum a_j x_j <= rhs` for the box it was separated
/// under. `row` is sorted by variable index and free of exact zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct Cut {
    pub row: Vec<(usize, f64)>,
    pub rhs: f64,
    pub origin: CutOrigin,
}

/// Result of one separation round at a fixed point.
#[derive(Debug, Clone, PartialEq)]
pub struct Separation {
    pub cuts: Vec<Cut>,
    /// Nonlinear constraints violated at the point that this round could not
    /// separate: unseparable atom, exhausted envelope (the best cut is not
    /// violated), or the point sits outside an atom's domain.
    pub uncut_violated: Vec<usize>,
}

/// Root relaxation after the cut loop: final model, everything added to it,
/// and the LP state needed to warm-start tree search from here.
#[derive(Debug, Clone, PartialEq)]
pub struct RootRelaxInfo {
    pub model: LpModel,
    pub cuts_added: Vec<Cut>,
    pub rounds: usize,
    pub lp_solution: LpSolution,
    pub basis: Basis,
    pub total_pivots: u64,
}

/// Spread of a cut's coefficient magnitudes, `log10(max|a| / min|a|)`;
/// zero for a single nonzero (and, defensively, for an empty row).
pub fn cut_coeff_spread(cut: &Cut) -> f64 {
    if cut.row.len() <= 1 {
        return 0.0;
    }
    let mut max_a = 0.0f64;
    let mut min_a = f64::INFINITY;
    for &(_, c) in &cut.row {
        max_a = max_a.max(c.abs());
        min_a = min_a.min(c.abs());
    }
    (max_a / min_a).log10()
}

/// LP over the instance variables with the objective and all linear rows,
/// bounded by `boxes`. Nonlinear constraints are dropped; cuts bring their
/// geometry back in.
pub fn base_lp_model(instance: &Instance, boxes: &[Interval]) -> LpModel {
    let n = instance.n();
    let mut objective = vec![0.0; n];
    for &(j, c) in &instance.objective {
        objective[j] = c;
    }
    let mut model = LpModel::new(objective, boxes.to_vec());
    model.add_rows(instance.linear_constraints.iter().map(|r| {
        let mut coeffs = vec![0.0; n];
        for &(j, c) in &r.terms {
            coeffs[j] = c;
        }
        LpRow { coeffs, sense: r.sense, rhs: r.rhs }
    }));
    model
}

/// Dense row for a cut, `sum a_j x_j <= rhs`.
pub fn cut_row(cut: &Cut, n: usize) -> LpRow {
    let mut coeffs = vec![0.0; n];
    for &(j, c) in &cut.row {
        coeffs[j] = c;
    }
    LpRow { coeffs, sense: Sense::Le, rhs: cut.rhs }
}

/// Solves the linear part, then alternates separation and warm re-solves
/// until no emitted cut is violated by more than [`tol::CUT_VIOL`] or
/// `round_limit` is reached. LP infeasibility or unboundedness ends the
/// loop and is reported through `lp_solution.status`.
pub fn build_root_relaxation(
    instance: &Instance,
    boxes: &[Interval],
    round_limit: usize,
) -> Result<RootRelaxInfo, NumericsError> {
    let mut model = base_lp_model(instance, boxes);
    let (mut sol, mut basis) = model.solve(None, DEFAULT_PIVOT_LIMIT)?;
    let mut total_pivots = sol.pivots;
    let mut cuts_added = Vec::new();
    let mut rounds = 0;
    while rounds < round_limit && sol.status == LpStatus::Optimal {
        let sep = separate_cuts(instance, &sol.x, boxes);
        if sep.cuts.is_empty() {
            break;
        }
        model.add_rows(sep.cuts.iter().map(|c| cut_row(c, instance.n())));
        cuts_added.extend(sep.cuts);
        let (s, b) = model.solve(Some(&basis), DEFAULT_PIVOT_LIMIT)?;
        total_pivots += s.pivots;
        sol = s;
        basis = b;
        rounds += 1;
    }
    Ok(RootRelaxInfo { model, cuts_added, rounds, lp_solution: sol, basis, total_pivots })
}

/// Emits at most one cut per nonlinear constraint violated at `point` by
/// more than [`tol::CUT_VIOL`]: the composed underestimator, kept only when
/// it is itself violated at `point` by more than the same threshold.
pub fn separate_cuts(instance: &Instance, point: &[f64], boxes: &[Interval]) -> Separation {
    let n = instance.n();
    let mut scratch = EvalScratch::default();
    let mut cuts = Vec::new();
    let mut uncut_violated = Vec::new();
    for (ci, con) in instance.nonlinear_constraints.iter().enumerate() {
        let root = con.dag.single_root();
        let g = match con.dag.eval(root, point, &mut scratch) {
            Ok(v) => v,
            // point outside an atom's domain: violated, nothing to linearize at
            Err(_) => {
                uncut_violated.push(ci);
                continue;
            }
        };
        if g <= tol::CUT_VIOL {
            continue;
        }
        if con.dag.forward_intervals(root, boxes, &mut scratch).is_err() {
            uncut_violated.push(ci);
            continue;
        }
        match underestimate_root(&con.dag, root, n, point, &scratch) {
            Some(u) if u.eval(point) > tol::CUT_VIOL => cuts.push(u.into_cut()),
            _ => uncut_violated.push(ci),
        }
    }
    Separation { cuts, uncut_violated }
}

const USED_TANGENT: u8 = 1;
const USED_SECANT: u8 = 2;
const USED_MCCORMICK: u8 = 4;

/// Dense affine function `coeffs . x + constant`, tagged with the envelope
/// kinds that went into it.
#[derive(Debug, Clone)]
struct Affine {
    coeffs: Vec<f64>,
    constant: f64,
    used: u8,
}

impl Affine {
    fn constant(n: usize, v: f64) -> Option<Affine> {
        v.is_finite().then(|| Affine { coeffs: vec![0.0; n], constant: v, used: 0 })
    }

    fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.coeffs.iter().zip(x).map(|(c, v)| c * v).sum::<f64>()
    }

    fn all_finite(&self) -> bool {
        self.constant.is_finite() && self.coeffs.iter().all(|c| c.is_finite())
    }

    fn into_cut(self) -> Cut {
        let origin = if self.used & USED_MCCORMICK != 0 {
            CutOrigin::McCormickBilinear
        } else if self.used & USED_SECANT != 0 {
            CutOrigin::SecantConcave
        } else {
            CutOrigin::TangentConvex
        };
        let row = self
            .coeffs
            .iter()
            .enumerate()
            .filter(|&(_, &c)| c != 0.0)
            .map(|(j, &c)| (j, c))
            .collect();
        Cut { row, rhs: -self.constant, origin }
    }
}

/// Substitutes a child's affine bounds into a univariate linearization
/// `s*a + c` of some atom, preserving the inequality direction: an
/// underestimator composes the child's underestimator when `s >= 0` and its
/// overestimator when `s < 0`; overestimators are symmetric.
fn scaled(
    n: usize,
    s: f64,
    c: f64,
    under: &Option<Affine>,
    over: &Option<Affine>,
    want_under: bool,
    used: u8,
) -> Option<Affine> {
    if !s.is_finite() || !c.is_finite() {
        return None;
    }
    if s == 0.0 {
        return Affine::constant(n, c).map(|mut a| {
            a.used = used;
            a
        });
    }
    let child = if (s >= 0.0) == want_under { under.as_ref()? } else { over.as_ref()? };
    let out = Affine {
        coeffs: child.coeffs.iter().map(|v| s * v).collect(),
        constant: s * child.constant + c,
        used: used | child.used,
    };
    out.all_finite().then_some(out)
}

fn add_forms(a: Option<Affine>, b: Option<Affine>) -> Option<Affine> {
    let (mut out, b) = (a?, b?);
    for (dst, src) in out.coeffs.iter_mut().zip(&b.coeffs) {
        *dst += *src;
    }
    out.constant += b.constant;
    out.used |= b.used;
    out.all_finite().then_some(out)
}

fn neg_form(f: &Option<Affine>) -> Option<Affine> {
    f.as_ref().map(|f| Affine {
        coeffs: f.coeffs.iter().map(|v| -v).collect(),
        constant: -f.constant,
        used: f.used,
    })
}

/// Chord of `f` over a bounded interval as `(slope, intercept)`; degenerates
/// to the constant `f(lo)` on a point interval.
fn chord(iv: Interval, f: impl Fn(f64) -> f64) -> Option<(f64, f64)> {
    if !iv.is_bounded() {
        return None;
    }
    let (flo, fhi) = (f(iv.lo), f(iv.hi));
    let w = iv.hi - iv.lo;
    if w <= 0.0 {
        return Some((0.0, flo));
    }
    let s = (fhi - flo) / w;
    Some((s, flo - s * iv.lo))
}

/// Keeps whichever form is tighter at `point`: larger for underestimators,
/// smaller for overestimators. Ties keep the incumbent.
fn tighter(
    best: Option<Affine>,
    cand: Option<Affine>,
    point: &[f64],
    want_under: bool,
) -> Option<Affine> {
    match (best, cand) {
        (None, c) => c,
        (b, None) => b,
        (Some(b), Some(c)) => {
            let (vb, vc) = (b.eval(point), c.eval(point));
            if (want_under && vc > vb) || (!want_under && vc < vb) {
                Some(c)
            } else {
                Some(b)
            }
        }
    }
}

/// One McCormick plane `sa*a + sb*b + c` with the children's affine bounds
/// substituted in.
#[allow(clippy::too_many_arguments)]
fn bilinear_plane(
    n: usize,
    sa: f64,
    a_under: &Option<Affine>,
    a_over: &Option<Affine>,
    sb: f64,
    b_under: &Option<Affine>,
    b_over: &Option<Affine>,
    c: f64,
    want_under: bool,
) -> Option<Affine> {
    if !c.is_finite() {
        return None;
    }
    let pa = scaled(n, sa, 0.0, a_under, a_over, want_under, USED_MCCORMICK)?;
    let pb = scaled(n, sb, c, b_under, b_over, want_under, USED_MCCORMICK)?;
    add_forms(Some(pa), Some(pb))
}

/// Composes the affine underestimator of the subgraph at `root`. Expects
/// `scratch` to hold point values and box intervals for `0..=root`. `None`
/// means not even a finite constant lower bound exists over the box.
fn underestimate_root(
    dag: &ExprDag,
    root: usize,
    n: usize,
    point: &[f64],
    scratch: &EvalScratch,
) -> Option<Affine> {
    let vals = &scratch.values;
    let ivs = &scratch.intervals;
    let mut under: Vec<Option<Affine>> = Vec::with_capacity(root + 1);
    let mut over: Vec<Option<Affine>> = Vec::with_capacity(root + 1);
    for i in 0..=root {
        let node = &dag.nodes()[i];
        // tangent points clamped into the box interval so a point sitting an
        // LP tolerance outside never picks a tangent from the wrong regime
        let (mut u, mut o): (Option<Affine>, Option<Affine>) = match node.op {
            Op::Const(c) => (Affine::constant(n, c), Affine::constant(n, c)),
            Op::Var(j) => {
                let mut f = Affine { coeffs: vec![0.0; n], constant: 0.0, used: 0 };
                f.coeffs[j] = 1.0;
                (Some(f.clone()), Some(f))
            }
            Op::Sum => {
                let fold = |want_under: bool| {
                    let forms = if want_under { &under } else { &over };
                    let mut acc = Affine::constant(n, 0.0);
                    for &c in &node.children {
                        acc = add_forms(acc, forms[c].clone());
                    }
                    acc
                };
                (fold(true), fold(false))
            }
            Op::Sub => {
                let (a, b) = (node.children[0], node.children[1]);
                (
                    add_forms(under[a].clone(), neg_form(&over[b])),
                    add_forms(over[a].clone(), neg_form(&under[b])),
                )
            }
            Op::Neg => {
                let a = node.children[0];
                (neg_form(&over[a]), neg_form(&under[a]))
            }
            Op::Mul => {
                let (a, b) = (node.children[0], node.children[1]);
                let (ia, ib) = (ivs[a], ivs[b]);
                let mut u = None;
                let mut o = None;
                // under planes: (a - pa)(b - pb) >= 0 at matching corners,
                // over planes: <= 0 at mixed corners; each plane reads
                // pa*b + pb*a - pa*pb
                for (pa, pb, want_under) in [
                    (ia.lo, ib.lo, true),
                    (ia.hi, ib.hi, true),
                    (ia.lo, ib.hi, false),
                    (ia.hi, ib.lo, false),
                ] {
                    if !(pa.is_finite() && pb.is_finite()) {
                        continue;
                    }
                    let cand = bilinear_plane(
                        n,
                        pb,
                        &under[a],
                        &over[a],
                        pa,
                        &under[b],
                        &over[b],
                        -pa * pb,
                        want_under,
                    );
                    if want_under {
                        u = tighter(u, cand, point, true);
                    } else {
                        o = tighter(o, cand, point, false);
                    }
                }
                (u, o)
            }
            Op::Square => {
                let a = node.children[0];
                let av = vals[a].clamp(ivs[a].lo, ivs[a].hi);
                let u = scaled(n, 2.0 * av, -av * av, &under[a], &over[a], true, USED_TANGENT);
                let o = chord(ivs[a], |v| v * v).and_then(|(s, c)| {
                    scaled(n, s, c, &under[a], &over[a], false, USED_SECANT)
                });
                (u, o)
            }
            Op::PowK(k) => {
                let a = node.children[0];
                let ia = ivs[a];
                let av = vals[a].clamp(ia.lo, ia.hi);
                let ki = k as i32;
                let tangent = |want_under: bool| {
                    let s = f64::from(k) * av.powi(ki - 1);
                    scaled(n, s, av.powi(ki) - s * av, &under[a], &over[a], want_under, USED_TANGENT)
                };
                let secant = |want_under: bool| {
                    chord(ia, |v| v.powi(ki)).and_then(|(s, c)| {
                        scaled(n, s, c, &under[a], &over[a], want_under, USED_SECANT)
                    })
                };
                if k % 2 == 0 {
                    (tangent(true), secant(false))
                } else if ia.lo >= 0.0 {
                    // convex piece of an odd power
                    (tangent(true), secant(false))
                } else if ia.hi <= 0.0 {
                    // concave piece
                    (secant(true), tangent(false))
                } else {
                    // sign-mixed box: no single tangent or chord bounds an
                    // odd power here, leave it to spatial branching
                    (None, None)
                }
            }
            Op::Exp => {
                let a = node.children[0];
                let av = vals[a].clamp(ivs[a].lo, ivs[a].hi);
                let s = av.exp();
                let u = scaled(n, s, s * (1.0 - av), &under[a], &over[a], true, USED_TANGENT);
                let o = chord(ivs[a], f64::exp).and_then(|(s, c)| {
                    scaled(n, s, c, &under[a], &over[a], false, USED_SECANT)
                });
                (u, o)
            }
            Op::Log => {
                let a = node.children[0];
                let ia = ivs[a];
                let av = vals[a].clamp(ia.lo, ia.hi);
                debug_assert!(av > 0.0, "point evaluation succeeded, so the log argument is positive");
                let u = if ia.lo > 0.0 {
                    chord(ia, f64::ln).and_then(|(s, c)| {
                        scaled(n, s, c, &under[a], &over[a], true, USED_SECANT)
                    })
                } else {
                    None
                };
                let o = scaled(n, av.recip(), av.ln() - 1.0, &under[a], &over[a], false, USED_TANGENT);
                (u, o)
            }
        };
        // last resort: the interval bound as a constant form, valid by
        // construction of the natural extension
        if u.is_none() {
            u = Affine::constant(n, ivs[i].lo);
        }
        if o.is_none() {
            o = Affine::constant(n, ivs[i].hi);
        }
        under.push(u);
        over.push(o);
    }
    under.pop().unwrap()
}
