//! Synthetic corpus generation and the labeled dataset pipeline.
//!
//! Four instance families cover the bilinear/indefinite-quadratic landscape
//! at desk scale. Each corpus member is solved under both competing rules
//! per permutation, the root features are measured once (root processing is
//! rule-independent), and the relative work becomes the regression label.
//! Everything is deterministic in the seeds, and the CSV artifact is byte
//! stable: rows are canonically ordered, so parallel measurement cannot
//! change the output.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::bnb::{self, BranchRule, SolveStatus};
use crate::features::{extract_features, RawFeatureVector, FEATURE_COUNT, FEATURE_NAMES};
use crate::instance::{Instance, LinearConstraint, NonlinearConstraint};
use crate::interval::Interval;
use crate::presolve::presolve;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Family {
    BilinearKnapsack,
    ConcaveMin,
    MixedQp,
    BoxQpInt,
}

impl Family {
    pub const ALL: [Family; 4] = [
        Family::BilinearKnapsack,
        Family::ConcaveMin,
        Family::MixedQp,
        Family::BoxQpInt,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Family::BilinearKnapsack => "bk",
            Family::ConcaveMin => "cm",
            Family::MixedQp => "mq",
            Family::BoxQpInt => "bq",
        }
    }

    pub fn from_tag(s: &str) -> Option<Family> {
        Family::ALL.into_iter().find(|f| f.tag() == s)
    }
}

/// One labeled measurement: an instance permutation solved under both rules.
#[derive(Debug, Clone, PartialEq)]
pub struct DataPoint {
    pub instance_id: String,
    pub permutation_seed: u64,
    /// Raw (unscaled) measurement; log compression happens at training time.
    pub features: RawFeatureVector,
    pub work_mixed: u64,
    pub work_preferint: u64,
    /// Recorded at measurement; absent on rows loaded back from CSV.
    pub nodes_mixed: Option<u64>,
    pub nodes_preferint: Option<u64>,
    pub status_mixed: SolveStatus,
    pub status_preferint: SolveStatus,
    /// One of the works was clipped to the limit when labeling.
    pub censored: bool,
    /// `log10((work_mixed+10)/(work_preferint+10))`; positive means Mixed
    /// was slower, so PreferInt is the better pick. `None` until labeling
    /// succeeds (both runs at the limit cannot be compared).
    pub label: Option<f64>,
}

/// A measurement that produced no row at all (presolve detected an
/// infeasible or otherwise broken permutation).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct SkippedRow {
    pub instance_id: String,
    pub permutation_seed: u64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Provenance {
    pub permutations: u64,
    pub work_limit: u64,
    pub skipped: Vec<SkippedRow>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub rows: Vec<DataPoint>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FilterCounts {
    pub root_solved: usize,
    pub both_work_limit: usize,
    pub kept: usize,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DatasetError {
    #[error("duplicate dataset row ({id}, permutation {seed})")]
    DuplicateRow { id: String, seed: u64 },
    #[error("csv line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("csv header does not match the dataset schema")]
    Header,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LabelOutcome {
    /// Both runs exhausted the budget; the pair carries no preference.
    Filtered,
    Labeled { value: f64, censored: bool },
}

/// Log-ratio label of a measured pair. A run that hit the work limit
/// contributes the limit itself (the true work is only known to be at least
/// that), and the row is marked censored; two limit hits are incomparable.
/// Computed as a difference of logs so swapping the arguments negates the
/// label exactly.
pub fn compute_label(
    work_mixed: u64,
    work_preferint: u64,
    status_mixed: SolveStatus,
    status_preferint: SolveStatus,
    work_limit: u64,
) -> LabelOutcome {
    let mixed_hit = status_mixed == SolveStatus::WorkLimit;
    let pref_hit = status_preferint == SolveStatus::WorkLimit;
    if mixed_hit && pref_hit {
        return LabelOutcome::Filtered;
    }
    let wm = if mixed_hit { work_limit } else { work_mixed };
    let wp = if pref_hit { work_limit } else { work_preferint };
    let value = ((wm + 10) as f64).log10() - ((wp + 10) as f64).log10();
    LabelOutcome::Labeled { value, censored: mixed_hit || pref_hit }
}

/// The rule a (predicted or true) label points at.
pub fn rule_for_label(label: f64) -> BranchRule {
    if label > 0.0 {
        BranchRule::PreferInt
    } else {
        BranchRule::Mixed
    }
}

// ---------------------------------------------------------------------------
// instance permutation

/// Deterministically reorders variables and constraint rows. Seed 0 is the
/// identity, so the canonical instance is always one of the permutations.
/// The instance name is hashed into the stream so equal-shaped instances
/// still get distinct reorderings.
pub fn permute_instance(inst: &Instance, seed: u64) -> Instance {
    if seed == 0 {
        return inst.clone();
    }
    let mut h = 0xcbf29ce484222325u64;
    for b in inst.name.bytes() {
        h = (h ^ b as u64).wrapping_mul(0x100000001b3);
    }
    let mut r = ChaCha8Rng::seed_from_u64(h ^ seed.wrapping_mul(0x9e3779b97f4a7c15));

    let n = inst.n();
    let mut order: Vec<usize> = (0..n).collect(); // order[new] = old
    order.shuffle(&mut r);
    let mut new_of_old = vec![0usize; n];
    for (new, &old) in order.iter().enumerate() {
        new_of_old[old] = new;
    }

    let remap = |terms: &[(usize, f64)]| {
        let mut t: Vec<(usize, f64)> =
            terms.iter().map(|&(j, c)| (new_of_old[j], c)).collect();
        t.sort_by_key(|&(j, _)| j);
        t
    };
    let mut linear_constraints: Vec<LinearConstraint> = inst
        .linear_constraints
        .iter()
        .map(|c| LinearConstraint {
            name: c.name.clone(),
            terms: remap(&c.terms),
            sense: c.sense,
            rhs: c.rhs,
        })
        .collect();
    let mut nonlinear_constraints: Vec<NonlinearConstraint> = inst
        .nonlinear_constraints
        .iter()
        .map(|c| NonlinearConstraint {
            name: c.name.clone(),
            dag: c.dag.remap_vars(&new_of_old),
        })
        .collect();
    linear_constraints.shuffle(&mut r);
    nonlinear_constraints.shuffle(&mut r);

    Instance {
        name: inst.name.clone(),
        variables: order.iter().map(|&old| inst.variables[old].clone()).collect(),
        objective: remap(&inst.objective),
        linear_constraints,
        nonlinear_constraints,
    }
}

// ---------------------------------------------------------------------------
// synthetic families

/// Deterministic instance for `(family, size, seed)`; `size` counts decision
/// variables, the epigraph auxiliary comes on top. Small sizes keep shapes
/// narrow on purpose (one decision continuous, short integer ranges) so
/// exhaustive oracles stay affordable there.
pub fn gen_synthetic(family: Family, size: usize, seed: u64) -> Instance {
    let text = gen_synthetic_text(family, size, seed);
    Instance::parse(&text)
        .unwrap_or_else(|e| panic!("generator bug ({family:?}, {size}, seed {seed}): {e}\n{text}"))
}

/// `bk04s000`-style identifier shared by the instance header and the file
/// name a corpus writer uses.
pub fn instance_name(family: Family, size: usize, seed: u64) -> String {
    format!("{}{:02}s{:03}", family.tag(), size, seed)
}

/// The same instance as [`gen_synthetic`], in source form — what a corpus
/// writer puts on disk.
pub fn gen_synthetic_text(family: Family, size: usize, seed: u64) -> String {
    assert!((3..=29).contains(&size), "family sizes use 3..=29 decision variables");
    let mut r = ChaCha8Rng::seed_from_u64(
        seed ^ ((size as u64) << 40) ^ (((family as u64) + 1) << 56),
    );
    let name = instance_name(family, size, seed);
    match family {
        Family::BilinearKnapsack => bilinear_knapsack(&mut r, &name, size),
        Family::ConcaveMin => concave_min(&mut r, &name, size),
        Family::MixedQp => mixed_qp(&mut r, &name, size),
        Family::BoxQpInt => box_qp_int(&mut r, &name, size),
    }
}

/// Deterministic mixed corpus cycling the four families over desk sizes.
pub fn standard_corpus(count: usize, base_seed: u64) -> Vec<Instance> {
    corpus_with(&Family::ALL, count, base_seed)
}

/// [`standard_corpus`] restricted to a family subset; the subset cycles in
/// the order given while sizes advance once per full cycle, so the all-family
/// call reproduces the standard corpus byte for byte.
pub fn corpus_with(families: &[Family], count: usize, base_seed: u64) -> Vec<Instance> {
    corpus_plan(families, count, base_seed)
        .into_iter()
        .map(|(f, size, seed)| gen_synthetic(f, size, seed))
        .collect()
}

/// The `(family, size, seed)` schedule behind [`corpus_with`], for callers
/// that want the source text or file names instead of parsed instances.
pub fn corpus_plan(families: &[Family], count: usize, base_seed: u64) -> Vec<(Family, usize, u64)> {
    assert!(!families.is_empty(), "corpus needs at least one family");
    let sizes = [4, 5, 6, 7, 8, 6, 5, 7];
    (0..count)
        .map(|i| {
            let family = families[i % families.len()];
            let size = sizes[(i / families.len()) % sizes.len()];
            (family, size, base_seed.wrapping_add(i as u64))
        })
        .collect()
}

fn decision_conts(r: &mut ChaCha8Rng, size: usize, roomy: std::ops::RangeInclusive<usize>) -> usize {
    if size <= 6 {
        1
    } else if size <= 8 {
        r.gen_range(1..=2)
    } else {
        r.gen_range(roomy)
    }
}

fn push_var(s: &mut String, name: &str, lo: f64, hi: f64, int: bool) {
    let kind = if int { "int" } else { "cont" };
    writeln!(s, "var {name} {lo} {hi} {kind}").unwrap();
}

fn quarter(r: &mut ChaCha8Rng, lo: i64, hi: i64) -> f64 {
    r.gen_range(lo..=hi) as f64 * 0.25
}

fn nonzero(r: &mut ChaCha8Rng, lo: i64, hi: i64) -> i64 {
    loop {
        let v = r.gen_range(lo..=hi);
        if v != 0 {
            return v;
        }
    }
}

/// `(a, b)` index pairs over product candidates, mixed-kind pairs included.
fn signed_product(
    r: &mut ChaCha8Rng,
    a: &str,
    b: &str,
    iv: Interval,
) -> (String, Interval) {
    if r.gen_bool(0.5) {
        (format!("(* {a} {b})"), iv)
    } else {
        (format!("(neg (* {a} {b}))"), iv.neg())
    }
}

fn sum_expr(terms: &[String]) -> String {
    if terms.len() == 1 {
        terms[0].clone()
    } else {
        format!("(+ {})", terms.join(" "))
    }
}

/// Integer knapsack with profit-bearing bilinear couplings in the epigraph.
fn bilinear_knapsack(r: &mut ChaCha8Rng, name: &str, size: usize) -> String {
    let n_cont = decision_conts(r, size, 1..=3);
    let n_int = size - n_cont;
    let int_ub: Vec<i64> = (0..n_int).map(|_| *[1, 1, 1, 2].choose(r).unwrap()).collect();
    let cont_ub: Vec<f64> = (0..n_cont).map(|_| quarter(r, 8, 16)).collect();
    let w_int: Vec<i64> = (0..n_int).map(|_| r.gen_range(1..=9)).collect();
    let w_cont: Vec<i64> = (0..n_cont).map(|_| r.gen_range(1..=4)).collect();
    let p_int: Vec<i64> = (0..n_int).map(|_| r.gen_range(1..=9)).collect();
    let p_cont: Vec<i64> = (0..n_cont).map(|_| r.gen_range(1..=4)).collect();

    let mut pairs: Vec<(String, String, Interval)> = Vec::new();
    for (i, &iu) in int_ub.iter().enumerate() {
        for (j, &cu) in cont_ub.iter().enumerate() {
            pairs.push((
                format!("x{i}"),
                format!("y{j}"),
                Interval::new(0.0, iu as f64).mul(&Interval::new(0.0, cu)),
            ));
        }
    }
    for a in 0..n_cont {
        for b in (a + 1)..n_cont {
            pairs.push((
                format!("y{a}"),
                format!("y{b}"),
                Interval::new(0.0, cont_ub[a]).mul(&Interval::new(0.0, cont_ub[b])),
            ));
        }
    }
    pairs.shuffle(r);
    let k = (1 + r.gen_range(0..=2)).min(pairs.len());
    let mut terms = Vec::new();
    let mut span = Interval::point(0.0);
    for (a, b, iv) in pairs.into_iter().take(k) {
        let (term, iv) = signed_product(r, &a, &b, iv);
        terms.push(term);
        span = span.add(&iv);
    }

    let mut s = format!("minlp {name}\n");
    for (i, &u) in int_ub.iter().enumerate() {
        push_var(&mut s, &format!("x{i}"), 0.0, u as f64, true);
    }
    for (j, &u) in cont_ub.iter().enumerate() {
        push_var(&mut s, &format!("y{j}"), 0.0, u, false);
    }
    push_var(&mut s, "t", span.lo.floor() - 1.0, span.hi.ceil() + 1.0, false);

    s.push_str("obj min :");
    for (i, &p) in p_int.iter().enumerate() {
        write!(s, " -{p} x{i}").unwrap();
    }
    for (j, &p) in p_cont.iter().enumerate() {
        write!(s, " -{p} y{j}").unwrap();
    }
    s.push_str(" 1 t\n");

    let total: f64 = w_int
        .iter()
        .zip(&int_ub)
        .map(|(&w, &u)| (w * u) as f64)
        .sum::<f64>()
        + w_cont.iter().zip(&cont_ub).map(|(&w, u)| w as f64 * u).sum::<f64>();
    let cap = (total * r.gen_range(0.35..0.6)).round().max(1.0);
    write!(s, "lin cap le {cap} :").unwrap();
    for (i, &w) in w_int.iter().enumerate() {
        write!(s, " {w} x{i}").unwrap();
    }
    for (j, &w) in w_cont.iter().enumerate() {
        write!(s, " {w} y{j}").unwrap();
    }
    s.push('\n');

    let binaries: Vec<usize> = (0..n_int).filter(|&i| int_ub[i] == 1).collect();
    if binaries.len() >= 2 && r.gen_bool(0.4) {
        writeln!(s, "lin conflict le 1 : 1 x{} 1 x{}", binaries[0], binaries[1]).unwrap();
    }

    writeln!(s, "nl epi le 0 : (- {} t)", sum_expr(&terms)).unwrap();
    s
}

/// Concave separable minimization over a budget polytope: the auxiliary sits
/// *under* a convex sum of squares and the objective pushes it up.
fn concave_min(r: &mut ChaCha8Rng, name: &str, size: usize) -> String {
    let n_cont = decision_conts(r, size, 2..=3);
    let n_int = size - n_cont;
    let centers: Vec<f64> = (0..n_cont).map(|_| quarter(r, 4, 12)).collect();
    let int_ub: Vec<i64> = (0..n_int).map(|_| r.gen_range(1..=3)).collect();
    let d: Vec<i64> = (0..n_int).map(|_| nonzero(r, -3, 3)).collect();
    let c: Vec<i64> = (0..n_cont).map(|_| r.gen_range(-2..=2)).collect();
    let a: Vec<i64> = (0..n_int).map(|_| r.gen_range(1..=3)).collect();
    let gamma = r.gen_range(1..=2);

    let mut s = format!("minlp {name}\n");
    for j in 0..n_cont {
        push_var(&mut s, &format!("y{j}"), 0.0, 4.0, false);
    }
    for (i, &u) in int_ub.iter().enumerate() {
        push_var(&mut s, &format!("x{i}"), 0.0, u as f64, true);
    }
    let t_hi: f64 = centers
        .iter()
        .map(|&m| m.powi(2).max((4.0 - m).powi(2)))
        .sum::<f64>()
        .ceil()
        + 1.0;
    push_var(&mut s, "t", 0.0, t_hi, false);

    s.push_str("obj min :");
    for (j, &cj) in c.iter().enumerate() {
        if cj != 0 {
            write!(s, " {cj} y{j}").unwrap();
        }
    }
    for (i, &di) in d.iter().enumerate() {
        write!(s, " {di} x{i}").unwrap();
    }
    writeln!(s, " -{gamma} t").unwrap();

    let total: f64 = 4.0 * n_cont as f64
        + a.iter().zip(&int_ub).map(|(&a, &u)| (a * u) as f64).sum::<f64>();
    let budget = (total * r.gen_range(0.45..0.65)).round().max(1.0);
    write!(s, "lin budget le {budget} :").unwrap();
    for j in 0..n_cont {
        write!(s, " 1 y{j}").unwrap();
    }
    for (i, &ai) in a.iter().enumerate() {
        write!(s, " {ai} x{i}").unwrap();
    }
    s.push('\n');

    if n_int >= 2 && r.gen_bool(0.3) {
        let cap: i64 = (int_ub[0] + int_ub[1]).div_euclid(2).max(1);
        writeln!(s, "lin pack le {cap} : 1 x0 1 x1").unwrap();
    }

    let sqs: Vec<String> = (0..n_cont)
        .map(|j| format!("(sq (- y{j} {}))", centers[j]))
        .collect();
    writeln!(s, "nl cave le 0 : (- t {})", sum_expr(&sqs)).unwrap();
    s
}

/// Indefinite quadratic epigraph over one or two linear rows.
fn mixed_qp(r: &mut ChaCha8Rng, name: &str, size: usize) -> String {
    let n_cont = decision_conts(r, size, 2..=4);
    let n_int = size - n_cont;
    let int_lo: Vec<i64> = (0..n_int).map(|_| *[-2, -1, 0, 0].choose(r).unwrap()).collect();
    let int_width: Vec<i64> = (0..n_int)
        .map(|_| if size <= 6 { r.gen_range(2..=3) } else { r.gen_range(2..=4) })
        .collect();
    let cont_box: Vec<(f64, f64)> = (0..n_cont)
        .map(|_| {
            let c = *[2.0, 3.0].choose(r).unwrap();
            if r.gen_bool(0.5) {
                (-c, c)
            } else {
                (0.0, c)
            }
        })
        .collect();

    let var_name = |v: usize| {
        if v < n_int {
            format!("x{v}")
        } else {
            format!("y{}", v - n_int)
        }
    };
    let var_iv = |v: usize| {
        if v < n_int {
            Interval::new(int_lo[v] as f64, (int_lo[v] + int_width[v]) as f64)
        } else {
            let (lo, hi) = cont_box[v - n_int];
            Interval::new(lo, hi)
        }
    };

    let mut terms = Vec::new();
    let mut span = Interval::point(0.0);
    for j in 0..n_cont {
        let iv = var_iv(n_int + j).square();
        if r.gen_bool(0.5) {
            terms.push(format!("(sq y{j})"));
            span = span.add(&iv);
        } else {
            terms.push(format!("(neg (sq y{j}))"));
            span = span.add(&iv.neg());
        }
    }
    for i in 0..n_int.min(2) {
        if r.gen_bool(0.4) {
            let iv = var_iv(i).square();
            if r.gen_bool(0.5) {
                terms.push(format!("(sq x{i})"));
                span = span.add(&iv);
            } else {
                terms.push(format!("(neg (sq x{i}))"));
                span = span.add(&iv.neg());
            }
        }
    }
    let mut pair_pool: Vec<(usize, usize)> = (0..size)
        .flat_map(|a| ((a + 1)..size).map(move |b| (a, b)))
        .collect();
    pair_pool.shuffle(r);
    for &(va, vb) in pair_pool.iter().take(r.gen_range(1..=2)) {
        let iv = var_iv(va).mul(&var_iv(vb));
        let (term, iv) = signed_product(r, &var_name(va), &var_name(vb), iv);
        terms.push(term);
        span = span.add(&iv);
    }

    let mut s = format!("minlp {name}\n");
    for i in 0..n_int {
        push_var(&mut s, &format!("x{i}"), int_lo[i] as f64, (int_lo[i] + int_width[i]) as f64, true);
    }
    for (j, &(lo, hi)) in cont_box.iter().enumerate() {
        push_var(&mut s, &format!("y{j}"), lo, hi, false);
    }
    push_var(&mut s, "t", span.lo.floor() - 1.0, span.hi.ceil() + 1.0, false);

    s.push_str("obj min : 1 t");
    for v in 0..size {
        let cv = r.gen_range(-3..=3);
        if cv != 0 {
            write!(s, " {} {}", cv, var_name(v)).unwrap();
        }
    }
    s.push('\n');

    for row in 0..r.gen_range(1..=2) {
        let mut members: Vec<usize> = (0..size).collect();
        members.shuffle(r);
        members.truncate(r.gen_range(2..=size.min(4)));
        members.sort_unstable();
        let mut row_iv = Interval::point(0.0);
        let coefs: Vec<i64> = members
            .iter()
            .map(|&v| {
                let cv = nonzero(r, -3, 3);
                row_iv = row_iv.add(&var_iv(v).scale(cv as f64));
                cv
            })
            .collect();
        let rhs =
            (row_iv.lo + r.gen_range(0.35..0.7) * (row_iv.hi - row_iv.lo) * 4.0).round() / 4.0;
        write!(s, "lin r{row} le {rhs} :").unwrap();
        for (v, cv) in members.iter().zip(&coefs) {
            write!(s, " {} {}", cv, var_name(*v)).unwrap();
        }
        s.push('\n');
    }

    writeln!(s, "nl quad le 0 : (- {} t)", sum_expr(&terms)).unwrap();
    s
}

/// Box-constrained indefinite quadratic with a heavy integer share and no
/// linear rows at all.
fn box_qp_int(r: &mut ChaCha8Rng, name: &str, size: usize) -> String {
    let n_cont = r.gen_range(0..=1usize);
    let n_int = size - n_cont;
    let int_lo: Vec<i64> = (0..n_int).map(|_| *[-1, 0, 0].choose(r).unwrap()).collect();
    let int_width: Vec<i64> = (0..n_int).map(|_| r.gen_range(1..=3)).collect();

    let var_name = |v: usize| {
        if v < n_int {
            format!("x{v}")
        } else {
            "y0".to_string()
        }
    };
    let var_iv = |v: usize| {
        if v < n_int {
            Interval::new(int_lo[v] as f64, (int_lo[v] + int_width[v]) as f64)
        } else {
            Interval::new(-2.0, 2.0)
        }
    };

    let mut terms = Vec::new();
    let mut span = Interval::point(0.0);
    for v in 0..size {
        if r.gen_bool(0.55) {
            let iv = var_iv(v).square();
            if r.gen_bool(0.5) {
                terms.push(format!("(sq {})", var_name(v)));
                span = span.add(&iv);
            } else {
                terms.push(format!("(neg (sq {}))", var_name(v)));
                span = span.add(&iv.neg());
            }
        }
    }
    let mut pair_pool: Vec<(usize, usize)> = (0..size)
        .flat_map(|a| ((a + 1)..size).map(move |b| (a, b)))
        .collect();
    pair_pool.shuffle(r);
    for &(va, vb) in pair_pool.iter().take(r.gen_range(1..=3).min(pair_pool.len())) {
        let iv = var_iv(va).mul(&var_iv(vb));
        let (term, iv) = signed_product(r, &var_name(va), &var_name(vb), iv);
        terms.push(term);
        span = span.add(&iv);
    }

    let mut s = format!("minlp {name}\n");
    for i in 0..n_int {
        push_var(&mut s, &format!("x{i}"), int_lo[i] as f64, (int_lo[i] + int_width[i]) as f64, true);
    }
    if n_cont == 1 {
        push_var(&mut s, "y0", -2.0, 2.0, false);
    }
    push_var(&mut s, "t", span.lo.floor() - 1.0, span.hi.ceil() + 1.0, false);

    s.push_str("obj min : 1 t");
    for v in 0..size {
        write!(s, " {} {}", nonzero(r, -3, 3), var_name(v)).unwrap();
    }
    s.push('\n');

    writeln!(s, "nl quad le 0 : (- {} t)", sum_expr(&terms)).unwrap();
    s
}

// ---------------------------------------------------------------------------
// measurement

/// Measures every `(instance, permutation)` pair under both rules. Rows are
/// independent and run in whatever rayon pool is installed; the output is
/// sorted by `(instance_id, permutation_seed)`, so the artifact does not
/// depend on scheduling.
pub fn generate_dataset(instances: &[Instance], permutations: u64, work_limit: u64) -> Dataset {
    assert!(permutations >= 1, "need at least one permutation");
    let jobs: Vec<(usize, u64)> = (0..instances.len())
        .flat_map(|i| (0..permutations).map(move |s| (i, s)))
        .collect();
    let results: Vec<Result<DataPoint, SkippedRow>> = jobs
        .par_iter()
        .map(|&(i, s)| measure_row(&instances[i], s, work_limit))
        .collect();

    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for r in results {
        match r {
            Ok(p) => rows.push(p),
            Err(s) => skipped.push(s),
        }
    }
    rows.sort_by(|a, b| {
        (a.instance_id.as_str(), a.permutation_seed)
            .cmp(&(b.instance_id.as_str(), b.permutation_seed))
    });
    skipped.sort();
    Dataset {
        rows,
        provenance: Provenance { permutations, work_limit, skipped },
    }
}

fn measure_row(
    inst: &Instance,
    permutation_seed: u64,
    work_limit: u64,
) -> Result<DataPoint, SkippedRow> {
    let permuted = permute_instance(inst, permutation_seed);
    let (pre, summary) = presolve(&permuted).map_err(|e| SkippedRow {
        instance_id: inst.name.clone(),
        permutation_seed,
        reason: format!("presolve: {e}"),
    })?;
    let mixed = bnb::solve(&pre, BranchRule::Mixed, work_limit);
    let pref = bnb::solve(&pre, BranchRule::PreferInt, work_limit);
    let features = extract_features(&pre, &summary, &mixed.root, &mixed.sb);
    let (label, censored) = match compute_label(
        mixed.work,
        pref.work,
        mixed.status,
        pref.status,
        work_limit,
    ) {
        LabelOutcome::Filtered => (None, false),
        LabelOutcome::Labeled { value, censored } => (Some(value), censored),
    };
    Ok(DataPoint {
        instance_id: inst.name.clone(),
        permutation_seed,
        features,
        work_mixed: mixed.work,
        work_preferint: pref.work,
        nodes_mixed: Some(mixed.nodes),
        nodes_preferint: Some(pref.nodes),
        status_mixed: mixed.status,
        status_preferint: pref.status,
        censored,
        label,
    })
}

/// Drops rows unusable for learning and reports why. Keeps every row where
/// both solves finished beyond the root with a comparable label.
pub fn filter_dataset(ds: &Dataset) -> Result<(Dataset, FilterCounts), DatasetError> {
    let mut seen = std::collections::BTreeSet::new();
    for p in &ds.rows {
        if !seen.insert((p.instance_id.clone(), p.permutation_seed)) {
            return Err(DatasetError::DuplicateRow {
                id: p.instance_id.clone(),
                seed: p.permutation_seed,
            });
        }
    }
    let mut counts = FilterCounts::default();
    let mut rows = Vec::new();
    for p in &ds.rows {
        if p.nodes_mixed == Some(1) || p.nodes_preferint == Some(1) {
            counts.root_solved += 1;
        } else if p.label.is_none() {
            counts.both_work_limit += 1;
        } else {
            counts.kept += 1;
            rows.push(p.clone());
        }
    }
    Ok((
        Dataset { rows, provenance: ds.provenance.clone() },
        counts,
    ))
}

// ---------------------------------------------------------------------------
// CSV artifact

fn status_str(s: SolveStatus) -> &'static str {
    match s {
        SolveStatus::Optimal => "OPTIMAL",
        SolveStatus::Infeasible => "INFEASIBLE",
        SolveStatus::WorkLimit => "WORK_LIMIT",
    }
}

fn status_parse(s: &str) -> Option<SolveStatus> {
    match s {
        "OPTIMAL" => Some(SolveStatus::Optimal),
        "INFEASIBLE" => Some(SolveStatus::Infeasible),
        "WORK_LIMIT" => Some(SolveStatus::WorkLimit),
        _ => None,
    }
}

/// Nine significant digits, enough to round-trip the pipeline's decisions
/// while keeping the artifact diff-friendly.
fn fmt_sig9(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    format!("{x:.8e}")
}

pub fn dataset_header() -> String {
    format!(
        "instance_id,permutation_seed,{},missing_mask,work_mixed,work_preferint,\
         status_mixed,status_preferint,censored,label",
        FEATURE_NAMES.join(",")
    )
}

pub fn write_csv(ds: &Dataset) -> String {
    let mut out = dataset_header();
    out.push('\n');
    for p in &ds.rows {
        write!(out, "{},{}", p.instance_id, p.permutation_seed).unwrap();
        for i in 0..FEATURE_COUNT {
            write!(out, ",{}", fmt_sig9(p.features.values[i])).unwrap();
        }
        let label = p.label.map(fmt_sig9).unwrap_or_default();
        writeln!(
            out,
            ",{},{},{},{},{},{},{}",
            p.features.missing_mask(),
            p.work_mixed,
            p.work_preferint,
            status_str(p.status_mixed),
            status_str(p.status_preferint),
            p.censored as u8,
            label,
        )
        .unwrap();
    }
    out
}

pub fn read_csv(text: &str) -> Result<Dataset, DatasetError> {
    // Leading `#` lines carry provenance and are skipped, as are blank lines.
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    match lines.next() {
        Some((_, h)) if h == dataset_header() => {}
        _ => return Err(DatasetError::Header),
    }
    let mut rows = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for (idx, line) in lines {
        let err = |msg: &str| DatasetError::Parse { line: idx + 1, msg: msg.to_string() };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != FEATURE_COUNT + 9 {
            return Err(err("wrong field count"));
        }
        let instance_id = f[0].to_string();
        let permutation_seed: u64 =
            f[1].parse().map_err(|_| err("bad permutation seed"))?;
        let mut features = RawFeatureVector {
            values: [0.0; FEATURE_COUNT],
            missing: [false; FEATURE_COUNT],
            scaled: false,
        };
        for i in 0..FEATURE_COUNT {
            features.values[i] =
                f[2 + i].parse().map_err(|_| err("bad feature value"))?;
        }
        let mask = f[2 + FEATURE_COUNT];
        if mask.len() != FEATURE_COUNT || mask.bytes().any(|b| b != b'0' && b != b'1') {
            return Err(err("bad missing mask"));
        }
        for (i, b) in mask.bytes().enumerate() {
            features.missing[i] = b == b'1';
        }
        let base = 3 + FEATURE_COUNT;
        let work_mixed: u64 = f[base].parse().map_err(|_| err("bad work"))?;
        let work_preferint: u64 = f[base + 1].parse().map_err(|_| err("bad work"))?;
        let status_mixed = status_parse(f[base + 2]).ok_or_else(|| err("bad status"))?;
        let status_preferint = status_parse(f[base + 3]).ok_or_else(|| err("bad status"))?;
        let censored = match f[base + 4] {
            "0" => false,
            "1" => true,
            _ => return Err(err("bad censored flag")),
        };
        let label = if f[base + 5].is_empty() {
            None
        } else {
            Some(f[base + 5].parse().map_err(|_| err("bad label"))?)
        };
        if !seen.insert((instance_id.clone(), permutation_seed)) {
            return Err(DatasetError::DuplicateRow { id: instance_id, seed: permutation_seed });
        }
        rows.push(DataPoint {
            instance_id,
            permutation_seed,
            features,
            work_mixed,
            work_preferint,
            nodes_mixed: None,
            nodes_preferint: None,
            status_mixed,
            status_preferint,
            censored,
            label,
        });
    }
    Ok(Dataset { rows, provenance: Provenance::default() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generators_are_deterministic_and_stay_in_shape() {
        for family in Family::ALL {
            for size in [4, 5, 6, 8] {
                for seed in [0u64, 7, 19] {
                    let a = gen_synthetic(family, size, seed);
                    let b = gen_synthetic(family, size, seed);
                    assert_eq!(a.write(), b.write(), "{family:?} {size} {seed}");
                    assert!(a.n() <= 30);
                    presolve(&a).unwrap_or_else(|e| {
                        panic!("{family:?} {size} {seed} does not presolve: {e}")
                    });
                    // a nonconvex piece is always present: a product, a
                    // concave square, or the under-side epigraph
                    let text = a.write();
                    assert!(
                        text.contains("(* ")
                            || text.contains("(neg (sq")
                            || text.contains(": (- t "),
                        "{family:?} {size} {seed} came out convex:\n{text}"
                    );
                    if size <= 6 {
                        let ints =
                            a.variables.iter().filter(|v| v.is_integer).count();
                        let conts = a.n() - ints;
                        assert!(ints <= 6, "{family:?} {size} {seed}: {ints} ints");
                        assert!(conts <= 3, "{family:?} {size} {seed}: {conts} conts");
                    }
                }
            }
        }
    }

    #[test]
    fn distinct_seeds_vary_the_shapes() {
        let widths: std::collections::BTreeSet<String> = (0..12)
            .map(|s| gen_synthetic(Family::MixedQp, 6, s).write())
            .collect();
        assert!(widths.len() >= 11, "seeds barely change mixed-qp shapes");
    }

    #[test]
    fn permutation_preserves_the_optimum() {
        let inst = gen_synthetic(Family::BilinearKnapsack, 5, 3);
        let (pre, _) = presolve(&inst).unwrap();
        let base = bnb::solve(&pre, BranchRule::Mixed, 5_000_000);
        assert_eq!(base.status, SolveStatus::Optimal);
        for seed in [1u64, 2] {
            let permuted = permute_instance(&inst, seed);
            assert_eq!(permuted.n(), inst.n());
            let mut names: Vec<&str> =
                permuted.variables.iter().map(|v| v.name.as_str()).collect();
            names.sort_unstable();
            let mut orig: Vec<&str> =
                inst.variables.iter().map(|v| v.name.as_str()).collect();
            orig.sort_unstable();
            assert_eq!(names, orig);

            let (pp, _) = presolve(&permuted).unwrap();
            let shuffled = bnb::solve(&pp, BranchRule::Mixed, 5_000_000);
            assert_eq!(shuffled.status, SolveStatus::Optimal);
            let a = base.objective.unwrap();
            let b = shuffled.objective.unwrap();
            assert!((a - b).abs() <= 1e-5 * (1.0 + a.abs()), "{a} vs {b}");
        }
        assert_eq!(permute_instance(&inst, 0).write(), inst.write());
    }

    #[test]
    fn labels_follow_the_shifted_work_ratio() {
        let opt = SolveStatus::Optimal;
        let lim = SolveStatus::WorkLimit;
        assert_eq!(
            compute_label(1000, 1000, opt, opt, 10_000),
            LabelOutcome::Labeled { value: 0.0, censored: false }
        );
        match compute_label(4040, 395, opt, opt, 10_000) {
            LabelOutcome::Labeled { value, censored } => {
                assert!((value - 1.0).abs() < 1e-12);
                assert!(!censored);
            }
            other => panic!("{other:?}"),
        }
        // swapping the works negates the label bit for bit
        for (a, b) in [(17, 912), (300, 4), (55_000, 54_999)] {
            let fwd = match compute_label(a, b, opt, opt, 100_000) {
                LabelOutcome::Labeled { value, .. } => value,
                other => panic!("{other:?}"),
            };
            let rev = match compute_label(b, a, opt, opt, 100_000) {
                LabelOutcome::Labeled { value, .. } => value,
                other => panic!("{other:?}"),
            };
            assert_eq!(fwd, -rev);
        }
        // a limit hit is clipped to the limit and flagged
        match compute_label(10_400, 200, lim, opt, 10_000) {
            LabelOutcome::Labeled { value, censored } => {
                assert!(censored);
                let expect = (10_010f64).log10() - (210f64).log10();
                assert!((value - expect).abs() < 1e-12);
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(compute_label(10_400, 10_100, lim, lim, 10_000), LabelOutcome::Filtered);

        assert_eq!(rule_for_label(0.3), BranchRule::PreferInt);
        assert_eq!(rule_for_label(0.0), BranchRule::Mixed);
        assert_eq!(rule_for_label(-0.2), BranchRule::Mixed);
    }

    #[test]
    fn measurement_rows_are_sorted_deterministic_and_complete() {
        let corpus = vec![
            gen_synthetic(Family::BoxQpInt, 4, 2),
            gen_synthetic(Family::ConcaveMin, 4, 1),
        ];
        let ds = generate_dataset(&corpus, 2, 50_000);
        assert_eq!(ds.rows.len() + ds.provenance.skipped.len(), 4);
        for w in ds.rows.windows(2) {
            assert!(
                (w[0].instance_id.as_str(), w[0].permutation_seed)
                    < (w[1].instance_id.as_str(), w[1].permutation_seed)
            );
        }
        for p in &ds.rows {
            assert!(p.nodes_mixed.is_some() && p.nodes_preferint.is_some());
            if let Some(l) = p.label {
                assert!(l.is_finite());
            }
        }
        let again = generate_dataset(&corpus, 2, 50_000);
        assert_eq!(ds, again);
    }

    #[test]
    fn thread_count_does_not_change_the_artifact() {
        let corpus = vec![
            gen_synthetic(Family::BilinearKnapsack, 4, 5),
            gen_synthetic(Family::MixedQp, 4, 6),
        ];
        let run = |threads: usize| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| write_csv(&generate_dataset(&corpus, 2, 40_000)))
        };
        assert_eq!(run(1), run(4));
    }

    fn stub_point(id: &str, seed: u64, nodes: u64, label: Option<f64>) -> DataPoint {
        DataPoint {
            instance_id: id.to_string(),
            permutation_seed: seed,
            features: RawFeatureVector {
                values: [0.25; FEATURE_COUNT],
                missing: [false; FEATURE_COUNT],
                scaled: false,
            },
            work_mixed: 120,
            work_preferint: 90,
            nodes_mixed: Some(nodes),
            nodes_preferint: Some(nodes),
            status_mixed: if label.is_none() {
                SolveStatus::WorkLimit
            } else {
                SolveStatus::Optimal
            },
            status_preferint: if label.is_none() {
                SolveStatus::WorkLimit
            } else {
                SolveStatus::Optimal
            },
            censored: false,
            label,
        }
    }

    #[test]
    fn filter_drops_root_solves_and_incomparable_rows() {
        let ds = Dataset {
            rows: vec![
                stub_point("a", 0, 5, Some(0.3)),
                stub_point("a", 1, 1, Some(0.1)),
                stub_point("b", 0, 7, None),
                stub_point("b", 1, 9, Some(-0.2)),
            ],
            provenance: Provenance::default(),
        };
        let (kept, counts) = filter_dataset(&ds).unwrap();
        assert_eq!(counts, FilterCounts { root_solved: 1, both_work_limit: 1, kept: 2 });
        assert_eq!(kept.rows.len(), 2);
        assert!(kept.rows.iter().all(|p| {
            p.label.is_some() && p.nodes_mixed != Some(1) && p.status_mixed == SolveStatus::Optimal
        }));

        let mut dup = ds.clone();
        dup.rows.push(stub_point("a", 0, 4, Some(0.5)));
        assert!(matches!(
            filter_dataset(&dup),
            Err(DatasetError::DuplicateRow { .. })
        ));
    }

    #[test]
    fn csv_round_trips_byte_for_byte() {
        let corpus = vec![
            gen_synthetic(Family::ConcaveMin, 4, 9),
            gen_synthetic(Family::BoxQpInt, 4, 11),
        ];
        let (ds, _) = filter_dataset(&generate_dataset(&corpus, 2, 50_000)).unwrap();
        let text = write_csv(&ds);
        assert!(text.starts_with("instance_id,permutation_seed,pct_quadr_elements,"));
        let reread = read_csv(&text).unwrap();
        assert_eq!(write_csv(&reread), text);
        assert_eq!(reread.rows.len(), ds.rows.len());
        for (a, b) in reread.rows.iter().zip(&ds.rows) {
            assert_eq!(a.instance_id, b.instance_id);
            assert_eq!(a.features.missing, b.features.missing);
            assert_eq!(a.status_mixed, b.status_mixed);
            assert_eq!(a.nodes_mixed, None);
        }

        assert_eq!(read_csv("instance_id,nope\n"), Err(DatasetError::Header));
        let mut broken = text.clone();
        broken.push_str("x,0,1,2\n");
        assert!(matches!(read_csv(&broken), Err(DatasetError::Parse { .. })));
    }

    #[test]
    fn standard_corpus_is_deterministic_with_unique_ids() {
        let c1 = standard_corpus(24, 100);
        let c2 = standard_corpus(24, 100);
        assert_eq!(c1.len(), 24);
        let names: std::collections::BTreeSet<&str> =
            c1.iter().map(|i| i.name.as_str()).collect();
        assert_eq!(names.len(), 24);
        for (a, b) in c1.iter().zip(&c2) {
            assert_eq!(a.write(), b.write());
        }
        for f in Family::ALL {
            assert!(c1.iter().any(|i| i.name.starts_with(f.tag())));
        }
    }
}
