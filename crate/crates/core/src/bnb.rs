//! Branch-and-bound over presolved instances: best-bound search with
//! warm-started LPs, one cut-separation round per node, integer and spatial
//! branching under three candidate-selection rules, and strong branching at
//! the root.
//!
//! A single solve is strictly sequential and every tie-break is by index,
//! so identical `(instance, rule, work_limit)` inputs reproduce the exact
//! same [`SolveStats`] — including `work`, the deterministic effort measure
//! `simplex pivots + 10 * nodes processed + strong-branching pivots` that
//! the dataset labels are built from.

use std::collections::BinaryHeap;

use thiserror::Error;

use crate::expr::EvalScratch;
use crate::instance::{Instance, Sense};
use crate::interval::Interval;
use crate::lp::{Basis, LpSolution, LpStatus, DEFAULT_PIVOT_LIMIT};
use crate::relax::{self, RootRelaxInfo, ROOT_CUT_ROUNDS};
use crate::tol;

/// Strong-branching budget: candidates per kind, and the pivot cap for each
/// child LP.
pub const SB_K_MAX: usize = 10;
pub const SB_PIVOT_CAP: u64 = 200;

/// Spatial branch points on half-infinite boxes are clamped to this radius.
const BRANCH_POINT_BOUND: f64 = 1e6;

/// Work charged per processed node on top of its simplex pivots.
const NODE_WORK: u64 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BranchRule {
    /// Branch on integer candidates whenever any exist.
    PreferInt,
    /// Best score over the union of both candidate kinds.
    Mixed,
    /// Branch spatially whenever a spatial candidate exists.
    PreferSpatial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CandidateKind {
    Integer,
    Spatial,
}

/// A variable the current node can branch on. `violation` is the
/// fractionality (integer) or the normalized constraint violation
/// `g/(1+g)` (spatial); `score` starts as the violation and is overwritten
/// with normalized strong-branching products at the root.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchCandidate {
    pub var: usize,
    pub kind: CandidateKind,
    pub violation: f64,
    pub score: f64,
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
#[error("no branching candidates to select from")]
pub struct EmptyCandidatesError;

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
#[error("both children would repeat the parent box")]
pub struct DegenerateBranchError;

/// Root strong-branching summary. The `avg_*` fields are `None` exactly
/// when the corresponding candidate set is empty.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RootSbStats {
    pub avg_rel_bnd_chng_int: Option<f64>,
    pub avg_rel_bnd_chng_spat: Option<f64>,
    pub avg_work_int: Option<f64>,
    pub avg_work_spat: Option<f64>,
    /// Spatial candidates with an infeasible strong-branching child: one of
    /// their half-domains can be discarded.
    pub spat_entities_fixed: usize,
    pub n_int_viols: usize,
    pub n_nonlin_viols: usize,
    /// Total pivots spent in strong-branching child LPs.
    pub sb_pivots: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    WorkLimit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveStats {
    pub status: SolveStatus,
    /// Best feasible objective found, if any.
    pub objective: Option<f64>,
    /// Pivots + 10 per processed node + strong-branching pivots.
    pub work: u64,
    /// Nodes processed, root included.
    pub nodes: u64,
    pub root: RootRelaxInfo,
    pub sb: RootSbStats,
}

/// Lists what the node can branch on at an optimal LP point. Integer
/// candidates are integral variables with fractionality above
/// [`tol::INT_FEAS`]; spatial candidates are the nonlinearly-participating
/// variables of each nonlinear constraint still violated beyond
/// [`tol::NL_FEAS`] after the caller's separation budget is exhausted (a
/// point outside an atom's domain counts as fully violated). Variables a
/// violated constraint only touches linearly are skipped: splitting their
/// domain leaves every product and square envelope exactly where it was.
/// Width guards keep unsplittable variables out: continuous boxes need more
/// than [`tol::MIN_SPATIAL_WIDTH`], integer boxes at least two integer
/// points.
pub fn detect_candidates(
    instance: &Instance,
    node_box: &[Interval],
    lp: &LpSolution,
) -> Vec<BranchCandidate> {
    debug_assert_eq!(lp.status, LpStatus::Optimal);
    let mut out = Vec::new();
    for (j, v) in instance.variables.iter().enumerate() {
        if !v.is_integer {
            continue;
        }
        let x = lp.x[j];
        let frac = (x - x.floor()).min(x.ceil() - x);
        if frac > tol::INT_FEAS {
            out.push(BranchCandidate {
                var: j,
                kind: CandidateKind::Integer,
                violation: frac,
                score: frac,
            });
        }
    }
    let mut spat_viol = vec![0.0f64; instance.n()];
    let mut scratch = EvalScratch::default();
    for con in &instance.nonlinear_constraints {
        let viol = match con.dag.eval(con.dag.single_root(), &lp.x, &mut scratch) {
            Ok(g) if g > tol::NL_FEAS => g / (1.0 + g),
            Ok(_) => continue,
            Err(_) => 1.0,
        };
        for j in con.dag.nonlinear_var_indices() {
            spat_viol[j] = spat_viol[j].max(viol);
        }
    }
    for (j, &viol) in spat_viol.iter().enumerate() {
        if viol == 0.0 {
            continue;
        }
        let b = node_box[j];
        let wide_enough = if instance.variables[j].is_integer {
            b.width() >= 0.999
        } else {
            b.width() > tol::MIN_SPATIAL_WIDTH
        };
        if wide_enough {
            out.push(BranchCandidate {
                var: j,
                kind: CandidateKind::Spatial,
                violation: viol,
                score: viol,
            });
        }
    }
    out
}

/// Best score under the rule's kind preference; ties go to the smallest
/// variable index, then to integer candidates (list order).
pub fn select_branching(
    rule: BranchRule,
    candidates: &[BranchCandidate],
) -> Result<BranchCandidate, EmptyCandidatesError> {
    let best = |kind: Option<CandidateKind>| -> Option<&BranchCandidate> {
        let mut best: Option<&BranchCandidate> = None;
        for c in candidates {
            if kind.is_some_and(|k| c.kind != k) {
                continue;
            }
            let better = match best {
                None => true,
                Some(b) => c.score > b.score || (c.score == b.score && c.var < b.var),
            };
            if better {
                best = Some(c);
            }
        }
        best
    };
    let picked = match rule {
        BranchRule::PreferInt => {
            best(Some(CandidateKind::Integer)).or_else(|| best(Some(CandidateKind::Spatial)))
        }
        BranchRule::PreferSpatial => {
            best(Some(CandidateKind::Spatial)).or_else(|| best(Some(CandidateKind::Integer)))
        }
        BranchRule::Mixed => best(None),
    };
    picked.cloned().ok_or(EmptyCandidatesError)
}

/// Child boxes for a branching decision. Integer branching cuts out the
/// fractional LP value via floor/ceil. Spatial branching splits at the LP
/// value clamped into the middle 60% of a bounded box, or shifted at least
/// one unit inside a half-infinite one; a spatial split of an integer-typed
/// variable lands on the floor/floor+1 pair around the branch point so both
/// children keep integral bounds.
pub fn branch(
    instance: &Instance,
    node_box: &[Interval],
    cand: &BranchCandidate,
    lp: &LpSolution,
) -> Result<(Vec<Interval>, Vec<Interval>), DegenerateBranchError> {
    let j = cand.var;
    let b = node_box[j];
    let x = lp.x[j];
    let (down_hi, up_lo) = match cand.kind {
        CandidateKind::Integer => (x.floor().clamp(b.lo, b.hi), x.ceil().clamp(b.lo, b.hi)),
        CandidateKind::Spatial => {
            let p = if b.is_bounded() {
                let w = b.width();
                x.clamp(b.lo + 0.2 * w, b.hi - 0.2 * w)
            } else {
                let mut p = x.clamp(-BRANCH_POINT_BOUND, BRANCH_POINT_BOUND);
                if b.lo.is_finite() {
                    p = p.max(b.lo + 1.0);
                }
                if b.hi.is_finite() {
                    p = p.min(b.hi - 1.0);
                }
                p
            };
            if !(b.lo < p && p < b.hi) {
                return Err(DegenerateBranchError);
            }
            if instance.variables[j].is_integer {
                let sf = p.floor().clamp(b.lo, b.hi - 1.0);
                (sf, sf + 1.0)
            } else {
                (p, p)
            }
        }
    };
    if !(down_hi < b.hi || up_lo > b.lo) {
        return Err(DegenerateBranchError);
    }
    let mut down = node_box.to_vec();
    let mut up = node_box.to_vec();
    down[j] = Interval::new(b.lo, down_hi);
    up[j] = Interval::new(up_lo, b.hi);
    Ok((down, up))
}

/// Strong branching at the root: for up to `k_max` candidates per kind in
/// decreasing violation order, solve both child LPs with `pivot_cap` and
/// average the relative dual-bound changes and pivot counts per kind. Each
/// candidate's `score` is overwritten with the product
/// `max(d_down, 1e-8) * max(d_up, 1e-8)`, normalized per kind to (0, 1] so
/// the Mixed rule can compare kinds; unprocessed candidates keep their
/// violation score. An infeasible child counts the full scale
/// `1 + |root objective|` as bound change; LP failures count zero but their
/// pivots are still charged.
pub fn strong_branch_root(
    instance: &Instance,
    root: &RootRelaxInfo,
    candidates: &mut [BranchCandidate],
    k_max: usize,
    pivot_cap: u64,
) -> RootSbStats {
    let root_obj = root.lp_solution.objective;
    let scale = 1.0 + root_obj.abs();
    let mut stats = RootSbStats {
        n_int_viols: candidates.iter().filter(|c| c.kind == CandidateKind::Integer).count(),
        n_nonlin_viols: candidates.iter().filter(|c| c.kind == CandidateKind::Spatial).count(),
        ..RootSbStats::default()
    };
    let mut model = root.model.clone();
    for kind in [CandidateKind::Integer, CandidateKind::Spatial] {
        let mut order: Vec<usize> = (0..candidates.len())
            .filter(|&i| candidates[i].kind == kind)
            .collect();
        if order.is_empty() {
            continue;
        }
        order.sort_by(|&a, &b| {
            candidates[b]
                .violation
                .total_cmp(&candidates[a].violation)
                .then(candidates[a].var.cmp(&candidates[b].var))
        });
        order.truncate(k_max);
        let mut rel_sum = 0.0;
        let mut work_sum = 0.0;
        let mut products: Vec<(usize, f64)> = Vec::with_capacity(order.len());
        for &ci in &order {
            let cand = &candidates[ci];
            let j = cand.var;
            let mut deltas = [0.0f64; 2];
            let mut pivots = [0u64; 2];
            let mut any_infeasible = false;
            if let Ok((down, up)) = branch(instance, &root.model.bounds, cand, &root.lp_solution) {
                for (side, child) in [down, up].iter().enumerate() {
                    model.set_bounds(j, child[j]);
                    match model.solve(Some(&root.basis), pivot_cap) {
                        Ok((sol, _)) => {
                            pivots[side] = sol.pivots;
                            deltas[side] = match sol.status {
                                LpStatus::Optimal => (sol.objective - root_obj).max(0.0),
                                LpStatus::Infeasible => {
                                    any_infeasible = true;
                                    scale
                                }
                                LpStatus::Unbounded | LpStatus::IterLimit => 0.0,
                            };
                        }
                        Err(_) => pivots[side] = pivot_cap,
                    }
                }
                model.set_bounds(j, root.model.bounds[j]);
            }
            rel_sum += deltas[0].min(deltas[1]) / scale;
            work_sum += (pivots[0] + pivots[1]) as f64 / 2.0;
            stats.sb_pivots += pivots[0] + pivots[1];
            if kind == CandidateKind::Spatial && any_infeasible {
                stats.spat_entities_fixed += 1;
            }
            products.push((ci, deltas[0].max(1e-8) * deltas[1].max(1e-8)));
        }
        let avg_rel = rel_sum / order.len() as f64;
        let avg_work = work_sum / order.len() as f64;
        match kind {
            CandidateKind::Integer => {
                stats.avg_rel_bnd_chng_int = Some(avg_rel);
                stats.avg_work_int = Some(avg_work);
            }
            CandidateKind::Spatial => {
                stats.avg_rel_bnd_chng_spat = Some(avg_rel);
                stats.avg_work_spat = Some(avg_work);
            }
        }
        let max_product = products.iter().fold(0.0f64, |m, &(_, p)| m.max(p));
        for (ci, p) in products {
            candidates[ci].score = p / max_product;
        }
    }
    stats
}

/// Objective of the rounded LP point when it is feasible to the whole
/// instance within `1e-6`-scale tolerances: integer values snap to the
/// nearest integer, everything is clamped into the variable bounds, then
/// linear rows and nonlinear constraints are re-checked.
fn rounded_incumbent(instance: &Instance, x: &[f64], scratch: &mut EvalScratch) -> Option<f64> {
    let mut xr = x.to_vec();
    for (j, v) in instance.variables.iter().enumerate() {
        if v.is_integer {
            xr[j] = xr[j].round();
        }
        xr[j] = xr[j].clamp(v.lb, v.ub);
    }
    for r in &instance.linear_constraints {
        let lhs: f64 = r.terms.iter().map(|&(j, c)| c * xr[j]).sum();
        let viol = match r.sense {
            Sense::Le => lhs - r.rhs,
            Sense::Ge => r.rhs - lhs,
            Sense::Eq => (lhs - r.rhs).abs(),
        };
        if viol > tol::NL_FEAS * (1.0 + r.rhs.abs()) {
            return None;
        }
    }
    for c in &instance.nonlinear_constraints {
        match c.dag.eval(c.dag.single_root(), &xr, scratch) {
            Ok(g) if g <= tol::NL_FEAS => {}
            _ => return None,
        }
    }
    Some(instance.objective.iter().map(|&(j, c)| c * xr[j]).sum())
}

/// Open node: its box, the dual bound inherited from the parent's final LP,
/// and the parent's basis (sized for the shared root rows) as a warm start.
struct Node {
    bound: f64,
    id: u64,
    boxes: Vec<Interval>,
    basis: Basis,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.id == other.id
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    // reversed so the max-heap pops the smallest bound, oldest node first
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        other.bound.total_cmp(&self.bound).then(other.id.cmp(&self.id))
    }
}

struct Search<'a> {
    instance: &'a Instance,
    rule: BranchRule,
    root_rows: usize,
    model: crate::lp::LpModel,
    heap: BinaryHeap<Node>,
    incumbent: Option<f64>,
    next_id: u64,
    nodes: u64,
    work: u64,
    scratch: EvalScratch,
}

impl Search<'_> {
    fn prunable(&self, bound: f64) -> bool {
        self.incumbent.is_some_and(|inc| bound >= inc - tol::PRUNE_GAP)
    }

    fn offer_incumbent(&mut self, x: &[f64]) {
        if let Some(v) = rounded_incumbent(self.instance, x, &mut self.scratch) {
            if self.incumbent.is_none_or(|inc| v < inc) {
                self.incumbent = Some(v);
            }
        }
    }

    fn push_children(&mut self, bound: f64, basis: &Basis, down: Vec<Interval>, up: Vec<Interval>) {
        for boxes in [down, up] {
            self.heap.push(Node { bound, id: self.next_id, boxes, basis: basis.clone() });
            self.next_id += 1;
        }
    }

    /// One node: warm LP, one separation round with a warm re-solve, then
    /// incumbent, prune, and branch. LP trouble (iteration limits, basis
    /// breakdown even after a cold retry) drops the node.
    fn process(&mut self, node: Node) {
        self.nodes += 1;
        self.work += NODE_WORK;
        self.model.rows.truncate(self.root_rows);
        self.model.bounds.copy_from_slice(&node.boxes);
        let solved = self
            .model
            .solve(Some(&node.basis), DEFAULT_PIVOT_LIMIT)
            .or_else(|_| self.model.solve(None, DEFAULT_PIVOT_LIMIT));
        let Ok((mut sol, basis)) = solved else { return };
        self.work += sol.pivots;
        if sol.status != LpStatus::Optimal {
            return; // infeasible is a prune; iteration trouble drops the node
        }
        let mut bound = node.bound.max(sol.objective);
        if self.prunable(bound) {
            return;
        }
        let sep = relax::separate_cuts(self.instance, &sol.x, &node.boxes);
        if !sep.cuts.is_empty() {
            self.model.add_rows(sep.cuts.iter().map(|c| relax::cut_row(c, self.instance.n())));
            let resolved = self
                .model
                .solve(Some(&basis), DEFAULT_PIVOT_LIMIT)
                .or_else(|_| self.model.solve(None, DEFAULT_PIVOT_LIMIT));
            let Ok((cut_sol, _)) = resolved else { return };
            self.work += cut_sol.pivots;
            if cut_sol.status != LpStatus::Optimal {
                return;
            }
            sol = cut_sol;
            bound = bound.max(sol.objective);
        }
        self.offer_incumbent(&sol.x);
        if self.prunable(bound) {
            return;
        }
        let candidates = detect_candidates(self.instance, &node.boxes, &sol);
        if candidates.is_empty() {
            // feasible points were already harvested; a still-violated node
            // with nothing left to split is below the width tolerances
            return;
        }
        let Ok(cand) = select_branching(self.rule, &candidates) else { return };
        let Ok((down, up)) = branch(self.instance, &node.boxes, &cand, &sol) else { return };
        self.push_children(bound, &basis, down, up);
    }
}

/// Solves a presolved instance to global optimality within tolerances, or
/// until `work` exceeds `work_limit`. The branching rule is fixed for the
/// whole tree; identical inputs give identical stats.
pub fn solve(instance: &Instance, rule: BranchRule, work_limit: u64) -> SolveStats {
    let boxes = instance.bounds_box();
    let root = match relax::build_root_relaxation(instance, &boxes, ROOT_CUT_ROUNDS) {
        Ok(r) => r,
        Err(_) => {
            // numerics breakdown before the tree even starts: report an
            // unfinished solve around a stub relaxation
            let model = relax::base_lp_model(instance, &boxes);
            let x: Vec<f64> = boxes.iter().map(|b| 0.0f64.clamp(b.lo, b.hi)).collect();
            let objective = model.objective.iter().zip(&x).map(|(c, v)| c * v).sum();
            let lp_solution =
                LpSolution { status: LpStatus::IterLimit, x, objective, pivots: 0 };
            return SolveStats {
                status: SolveStatus::WorkLimit,
                objective: None,
                work: NODE_WORK,
                nodes: 1,
                root: RootRelaxInfo {
                    model,
                    cuts_added: Vec::new(),
                    rounds: 0,
                    lp_solution,
                    basis: Basis::default(),
                    total_pivots: 0,
                },
                sb: RootSbStats::default(),
            };
        }
    };
    let mut work = root.total_pivots + NODE_WORK;
    let nodes = 1;
    let finish = |status, objective, work, nodes, sb| SolveStats {
        status,
        objective,
        work,
        nodes,
        root: root.clone(),
        sb,
    };
    match root.lp_solution.status {
        LpStatus::Infeasible => {
            return finish(SolveStatus::Infeasible, None, work, nodes, RootSbStats::default())
        }
        LpStatus::Unbounded | LpStatus::IterLimit => {
            return finish(SolveStatus::WorkLimit, None, work, nodes, RootSbStats::default())
        }
        LpStatus::Optimal => {}
    }
    let mut scratch = EvalScratch::default();
    let incumbent = rounded_incumbent(instance, &root.lp_solution.x, &mut scratch);
    let mut candidates = detect_candidates(instance, &boxes, &root.lp_solution);
    if candidates.is_empty() {
        let status = if incumbent.is_some() { SolveStatus::Optimal } else { SolveStatus::WorkLimit };
        return finish(status, incumbent, work, nodes, RootSbStats::default());
    }
    let sb = strong_branch_root(instance, &root, &mut candidates, SB_K_MAX, SB_PIVOT_CAP);
    work += sb.sb_pivots;
    let root_obj = root.lp_solution.objective;
    if incumbent.is_some_and(|inc| root_obj >= inc - tol::PRUNE_GAP) {
        return finish(SolveStatus::Optimal, incumbent, work, nodes, sb);
    }
    let mut search = Search {
        instance,
        rule,
        root_rows: root.model.rows.len(),
        model: root.model.clone(),
        heap: BinaryHeap::new(),
        incumbent,
        next_id: 0,
        nodes,
        work,
        scratch,
    };
    match select_branching(rule, &candidates)
        .map_err(|_| DegenerateBranchError)
        .and_then(|cand| branch(instance, &boxes, &cand, &root.lp_solution))
    {
        Ok((down, up)) => search.push_children(root_obj, &root.basis, down, up),
        Err(_) => {
            return finish(SolveStatus::WorkLimit, incumbent, work, nodes, sb);
        }
    }
    let mut hit_limit = false;
    while let Some(node) = search.heap.pop() {
        if search.work > work_limit {
            hit_limit = true;
            break;
        }
        if search.prunable(node.bound) {
            continue;
        }
        search.process(node);
    }
    let status = if hit_limit {
        SolveStatus::WorkLimit
    } else if search.incumbent.is_some() {
        SolveStatus::Optimal
    } else {
        SolveStatus::Infeasible
    };
    finish(status, search.incumbent, search.work, search.nodes, sb)
}
