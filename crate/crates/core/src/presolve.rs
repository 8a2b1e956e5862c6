//! Bound-tightening presolve.
//!
//! Runs up to ten rounds of: interval propagation through linear rows,
//! forward/backward interval propagation through each nonlinear DAG against
//! `g(x) <= 0`, inward rounding of integer bounds, and substitution of fixed
//! variables out of linear rows. Variables and constraints are never removed,
//! so `n` and `m` are stable; the summary reports how much is left.
//!
//! Every tightened bound is widened outward by a small relative epsilon, so
//! rounding error cannot cut off feasible points.

use crate::expr::{ExprDag, Op};
use crate::instance::{Instance, LinearConstraint, Sense};
use crate::interval::Interval;
use crate::tol;
use thiserror::Error;

const MAX_ROUNDS: usize = 10;
/// Bound changes at or below this do not count as progress.
const CONVERGENCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InfeasibleError {
    #[error("variable `{variable}`: domain is empty")]
    EmptyDomain { variable: String },
    #[error("constraint `{constraint}`: unsatisfiable over the variable domains")]
    Unsatisfiable { constraint: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PresolveSummary {
    /// Unfixed variables after presolve.
    pub n_tilde: usize,
    /// Nonzero coefficients across linear rows after substitution.
    pub m_tilde_nonzeros: usize,
    /// Variables with collapsed domains (input-fixed ones included).
    pub fixed_variables: usize,
    /// Rounds executed before convergence or the round limit.
    pub rounds: usize,
}

/// Outward slack applied to every tightened bound.
fn widen(iv: Interval) -> Interval {
    let slack = |v: f64| 1e-12 * (1.0 + v.abs());
    Interval::new(
        if iv.lo.is_finite() { iv.lo - slack(iv.lo) } else { iv.lo },
        if iv.hi.is_finite() { iv.hi + slack(iv.hi) } else { iv.hi },
    )
}

/// Hull of the (possibly empty) intersections of `child` with `s` and `-s`,
/// the backward image through an even power.
fn even_root_preimage(child: Interval, s: Interval) -> Option<Interval> {
    let pos = child.intersect(&s);
    let neg = child.intersect(&s.neg());
    match (pos, neg) {
        (Some(p), Some(n)) => Some(Interval::new(p.lo.min(n.lo), p.hi.max(n.hi))),
        (Some(p), None) => Some(p),
        (None, Some(n)) => Some(n),
        (None, None) => None,
    }
}

/// Sum of interval terms with explicit infinity counting, so that the sum
/// excluding any single term is cheap and well defined.
struct ExclusiveSums {
    finite_lo: f64,
    finite_hi: f64,
    neg_infs: usize,
    pos_infs: usize,
}

impl ExclusiveSums {
    fn new(terms: &[Interval]) -> Self {
        let mut s = ExclusiveSums {
            finite_lo: 0.0,
            finite_hi: 0.0,
            neg_infs: 0,
            pos_infs: 0,
        };
        for t in terms {
            if t.lo.is_finite() {
                s.finite_lo += t.lo;
            } else {
                s.neg_infs += 1;
            }
            if t.hi.is_finite() {
                s.finite_hi += t.hi;
            } else {
                s.pos_infs += 1;
            }
        }
        s
    }

    /// Interval of `sum of all terms except k`.
    fn except(&self, k: Interval) -> Interval {
        let lo = if self.neg_infs > usize::from(!k.lo.is_finite()) {
            f64::NEG_INFINITY
        } else {
            self.finite_lo - if k.lo.is_finite() { k.lo } else { 0.0 }
        };
        let hi = if self.pos_infs > usize::from(!k.hi.is_finite()) {
            f64::INFINITY
        } else {
            self.finite_hi - if k.hi.is_finite() { k.hi } else { 0.0 }
        };
        // the lo and hi accumulations round independently, so a sum that
        // cancels to ~0 can come out inverted by an ulp; the 1e-12 widening
        // every caller applies afterwards dwarfs that roundoff
        Interval::new(lo.min(hi), lo.max(hi))
    }
}

struct Engine {
    boxes: Vec<Interval>,
    /// Largest bound movement in the current round.
    round_change: f64,
}

impl Engine {
    fn tighten(&mut self, var: usize, allowed: Interval, who: &str) -> Result<(), InfeasibleError> {
        let old = self.boxes[var];
        let new = old
            .intersect(&widen(allowed))
            .ok_or_else(|| InfeasibleError::Unsatisfiable { constraint: who.to_string() })?;
        let delta = |a: f64, b: f64| {
            if a == b {
                0.0
            } else if a.is_finite() && b.is_finite() {
                (a - b).abs()
            } else {
                f64::INFINITY
            }
        };
        let change = delta(old.lo, new.lo).max(delta(old.hi, new.hi));
        if change > CONVERGENCE {
            self.round_change = self.round_change.max(change);
            self.boxes[var] = new;
        }
        Ok(())
    }

    /// One pass of interval propagation through a linear row.
    fn propagate_row(&mut self, row: &LinearConstraint) -> Result<(), InfeasibleError> {
        let allowed_row = match row.sense {
            Sense::Le => Interval::new(f64::NEG_INFINITY, row.rhs),
            Sense::Ge => Interval::new(row.rhs, f64::INFINITY),
            Sense::Eq => Interval::point(row.rhs),
        };
        if row.terms.is_empty() {
            let ok = match row.sense {
                Sense::Le => row.rhs >= -CONVERGENCE,
                Sense::Ge => row.rhs <= CONVERGENCE,
                Sense::Eq => row.rhs.abs() <= CONVERGENCE,
            };
            return if ok {
                Ok(())
            } else {
                Err(InfeasibleError::Unsatisfiable { constraint: row.name.clone() })
            };
        }
        let terms: Vec<Interval> = row
            .terms
            .iter()
            .map(|&(j, c)| self.boxes[j].scale(c))
            .collect();
        let sums = ExclusiveSums::new(&terms);
        for (&(j, c), &t) in row.terms.iter().zip(&terms) {
            if c == 0.0 {
                continue;
            }
            let rest = sums.except(t);
            // c * x_j must lie in allowed_row - rest
            let target = allowed_row.sub(&rest).scale(1.0 / c);
            self.tighten(j, target, &row.name)?;
        }
        Ok(())
    }

    /// Forward/backward interval pass of one DAG against `g(x) <= 0`.
    fn propagate_dag(&mut self, name: &str, dag: &ExprDag) -> Result<(), InfeasibleError> {
        let root = dag.single_root();
        let nodes = dag.nodes();
        let mut iv = vec![Interval::point(0.0); root + 1];
        for i in 0..=root {
            let n = &nodes[i];
            iv[i] = match n.op {
                Op::Const(c) => Interval::point(c),
                Op::Var(j) => self.boxes[j],
                Op::Sum => {
                    let mut acc = iv[n.children[0]];
                    for &c in &n.children[1..] {
                        acc = acc.add(&iv[c]);
                    }
                    acc
                }
                Op::Sub => iv[n.children[0]].sub(&iv[n.children[1]]),
                Op::Neg => iv[n.children[0]].neg(),
                Op::Mul => iv[n.children[0]].mul(&iv[n.children[1]]),
                Op::Square => iv[n.children[0]].square(),
                Op::PowK(k) => iv[n.children[0]].powi(k),
                Op::Exp => iv[n.children[0]].exp(),
                Op::Log => iv[n.children[0]].ln().ok_or_else(|| {
                    // log argument can never be positive: no point satisfies g
                    InfeasibleError::Unsatisfiable { constraint: name.to_string() }
                })?,
            };
        }
        if iv[root].lo > CONVERGENCE {
            return Err(InfeasibleError::Unsatisfiable { constraint: name.to_string() });
        }
        // clamp the root to g <= 0 (up to the tolerance already admitted)
        let r = iv[root];
        iv[root] = Interval::new(r.lo, r.hi.min(0.0).max(r.lo));

        fn shrink(
            iv: &mut [Interval],
            idx: usize,
            allowed: Interval,
            name: &str,
        ) -> Result<(), InfeasibleError> {
            match iv[idx].intersect(&widen(allowed)) {
                Some(next) => {
                    iv[idx] = next;
                    Ok(())
                }
                None => Err(InfeasibleError::Unsatisfiable { constraint: name.to_string() }),
            }
        }
        let empty = || InfeasibleError::Unsatisfiable { constraint: name.to_string() };
        for i in (0..=root).rev() {
            let n = &nodes[i];
            let p = iv[i];
            match n.op {
                Op::Const(_) | Op::Var(_) => {}
                Op::Sum => {
                    let terms: Vec<Interval> = n.children.iter().map(|&c| iv[c]).collect();
                    let sums = ExclusiveSums::new(&terms);
                    for (&c, &t) in n.children.iter().zip(&terms) {
                        shrink(&mut iv, c, p.sub(&sums.except(t)), name)?;
                    }
                }
                Op::Sub => {
                    let (a, b) = (n.children[0], n.children[1]);
                    let for_a = p.add(&iv[b]);
                    shrink(&mut iv, a, for_a, name)?;
                    let for_b = iv[a].sub(&p);
                    shrink(&mut iv, b, for_b, name)?;
                }
                Op::Neg => shrink(&mut iv, n.children[0], p.neg(), name)?,
                Op::Mul => {
                    let (a, b) = (n.children[0], n.children[1]);
                    let for_a = p.div(&iv[b]);
                    shrink(&mut iv, a, for_a, name)?;
                    let for_b = p.div(&iv[a]);
                    shrink(&mut iv, b, for_b, name)?;
                }
                Op::Square => {
                    let c = n.children[0];
                    let p_pos = p
                        .intersect(&Interval::new(0.0, f64::INFINITY))
                        .ok_or_else(empty)?;
                    let s = Interval::new(p_pos.lo.sqrt(), p_pos.hi.sqrt());
                    let allowed = even_root_preimage(iv[c], widen(s)).ok_or_else(empty)?;
                    shrink(&mut iv, c, allowed, name)?;
                }
                Op::PowK(k) if k % 2 == 0 => {
                    let c = n.children[0];
                    let p_pos = p
                        .intersect(&Interval::new(0.0, f64::INFINITY))
                        .ok_or_else(empty)?;
                    let inv = 1.0 / k as f64;
                    let s = Interval::new(p_pos.lo.powf(inv), p_pos.hi.powf(inv));
                    let allowed = even_root_preimage(iv[c], widen(s)).ok_or_else(empty)?;
                    shrink(&mut iv, c, allowed, name)?;
                }
                Op::PowK(k) => shrink(&mut iv, n.children[0], p.root_signed(k), name)?,
                Op::Exp => {
                    let c = n.children[0];
                    if p.hi <= 0.0 {
                        return Err(empty());
                    }
                    let lo = if p.lo > 0.0 { p.lo.ln() } else { f64::NEG_INFINITY };
                    shrink(&mut iv, c, Interval::new(lo, p.hi.ln()), name)?;
                }
                Op::Log => {
                    let c = n.children[0];
                    shrink(&mut iv, c, Interval::new(p.lo.exp(), p.hi.exp()), name)?;
                }
            }
        }
        for (i, n) in nodes.iter().enumerate().take(root + 1) {
            if let Op::Var(j) = n.op {
                self.tighten(j, iv[i], name)?;
            }
        }
        Ok(())
    }
}

/// Tightens bounds and substitutes fixed variables out of linear rows.
/// Returns a new instance plus the counts used by the feature extractor.
pub fn presolve(instance: &Instance) -> Result<(Instance, PresolveSummary), InfeasibleError> {
    let n = instance.n();
    let mut engine = Engine {
        boxes: instance.bounds_box(),
        round_change: 0.0,
    };
    let mut rows: Vec<LinearConstraint> = instance.linear_constraints.clone();
    let mut substituted = vec![false; n];
    let mut rounds = 0;
    for _ in 0..MAX_ROUNDS {
        rounds += 1;
        engine.round_change = 0.0;

        for row in &rows {
            engine.propagate_row(row)?;
        }
        for c in &instance.nonlinear_constraints {
            engine.propagate_dag(&c.name, &c.dag)?;
        }

        for (j, v) in instance.variables.iter().enumerate() {
            if !v.is_integer {
                continue;
            }
            let b = engine.boxes[j];
            let lo = if b.lo.is_finite() { (b.lo - tol::INT_FEAS).ceil() } else { b.lo };
            let hi = if b.hi.is_finite() { (b.hi + tol::INT_FEAS).floor() } else { b.hi };
            if lo > hi {
                return Err(InfeasibleError::EmptyDomain { variable: v.name.clone() });
            }
            if lo > b.lo || hi < b.hi {
                engine.round_change = engine
                    .round_change
                    .max((lo - b.lo).abs().max((hi - b.hi).abs()));
                engine.boxes[j] = Interval::new(lo, hi);
            }
        }

        // collapse near-point domains and substitute them out of the rows
        let mut newly_fixed = Vec::new();
        for (j, v) in instance.variables.iter().enumerate() {
            if substituted[j] {
                continue;
            }
            let b = engine.boxes[j];
            if b.width() <= CONVERGENCE {
                let value = if v.is_integer { b.midpoint().round() } else { b.midpoint() };
                engine.boxes[j] = Interval::point(value);
                substituted[j] = true;
                newly_fixed.push((j, value));
            }
        }
        if !newly_fixed.is_empty() {
            for row in &mut rows {
                let mut rhs = row.rhs;
                row.terms.retain(|&(j, c)| {
                    if let Some(&(_, value)) = newly_fixed.iter().find(|&&(f, _)| f == j) {
                        rhs -= c * value;
                        false
                    } else {
                        true
                    }
                });
                row.rhs = rhs;
            }
        }

        if engine.round_change <= CONVERGENCE && newly_fixed.is_empty() {
            break;
        }
    }

    let variables = instance
        .variables
        .iter()
        .zip(&engine.boxes)
        .map(|(v, b)| crate::instance::Variable {
            name: v.name.clone(),
            lb: b.lo,
            ub: b.hi,
            is_integer: v.is_integer,
        })
        .collect();
    let presolved = Instance::new(
        instance.name.clone(),
        variables,
        instance.objective.clone(),
        rows,
        instance.nonlinear_constraints.clone(),
    )
    .expect("presolve keeps the instance well formed");

    let fixed_variables = presolved.variables.iter().filter(|v| v.is_fixed()).count();
    let summary = PresolveSummary {
        n_tilde: n - fixed_variables,
        m_tilde_nonzeros: presolved
            .linear_constraints
            .iter()
            .map(|r| r.terms.len())
            .sum(),
        fixed_variables,
        rounds,
    };
    Ok((presolved, summary))
}
