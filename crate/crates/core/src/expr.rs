//! Factorable functions as expression DAGs.
//!
//! A DAG is a flat node list in topological order (children strictly before
//! parents). Nodes are operators, variable references, or constants. The
//! module provides point evaluation, natural interval extension, reverse-mode
//! gradients, and the structural counts consumed by the feature extractor.
//!
//! DAGs are immutable after construction and safe to share across threads;
//! all evaluation state lives in a caller-owned [`EvalScratch`].

use crate::interval::Interval;
use std::collections::BTreeMap;
use thiserror::Error;

/// Node operator. `Var` holds an instance variable index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Op {
    Const(f64),
    Var(usize),
    Sum,
    Sub,
    Neg,
    Mul,
    Square,
    /// Integer power, exponent >= 2.
    PowK(u32),
    Exp,
    Log,
}

impl Op {
    /// Expected child count; `None` for SUM (two or more).
    fn arity(&self) -> Option<usize> {
        match self {
            Op::Const(_) | Op::Var(_) => Some(0),
            Op::Neg | Op::Square | Op::PowK(_) | Op::Exp | Op::Log => Some(1),
            Op::Sub | Op::Mul => Some(2),
            Op::Sum => None,
        }
    }

    pub fn is_operator(&self) -> bool {
        !matches!(self, Op::Const(_) | Op::Var(_))
    }

    pub fn is_nonlinear(&self) -> bool {
        matches!(
            self,
            Op::Mul | Op::Square | Op::PowK(_) | Op::Exp | Op::Log
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExprNode {
    pub op: Op,
    pub children: Vec<usize>,
}

/// Expression DAG with one or more roots. Each root is the left-hand side of
/// one `g(x) <= 0` constraint.
#[derive(Debug, Clone, PartialEq)]
pub struct ExprDag {
    nodes: Vec<ExprNode>,
    roots: Vec<usize>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DagError {
    #[error("node {node}: child index {child} does not precede parent")]
    ChildOrder { node: usize, child: usize },
    #[error("node {node}: operator {op:?} expects {expected} children, got {got}")]
    Arity {
        node: usize,
        op: Op,
        expected: usize,
        got: usize,
    },
    #[error("node {node}: SUM needs at least 2 children, got {got}")]
    SumArity { node: usize, got: usize },
    #[error("node {node}: non-finite constant")]
    NonFiniteConst { node: usize },
    #[error("node {node}: integer power exponent must be >= 2, got {k}")]
    BadExponent { node: usize, k: u32 },
    #[error("node {node}: duplicate variable node for variable {var}")]
    DuplicateVar { node: usize, var: usize },
    #[error("root index {root} out of range")]
    BadRoot { root: usize },
}

/// Evaluation failure at a point or box.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum DomainError {
    #[error("log of non-positive argument at node {node}")]
    LogNonPositive { node: usize },
    #[error("non-finite intermediate at node {node}")]
    NonFinite { node: usize },
}

/// Reusable buffers for DAG evaluation.
#[derive(Debug, Default, Clone)]
pub struct EvalScratch {
    pub values: Vec<f64>,
    pub adjoints: Vec<f64>,
    pub intervals: Vec<Interval>,
}

impl ExprDag {
    pub fn new(nodes: Vec<ExprNode>, roots: Vec<usize>) -> Result<Self, DagError> {
        let dag = ExprDag { nodes, roots };
        dag.validate()?;
        Ok(dag)
    }

    pub fn nodes(&self) -> &[ExprNode] {
        &self.nodes
    }

    pub fn roots(&self) -> &[usize] {
        &self.roots
    }

    /// Root of a single-constraint DAG.
    pub fn single_root(&self) -> usize {
        debug_assert_eq!(self.roots.len(), 1);
        self.roots[0]
    }

    pub fn validate(&self) -> Result<(), DagError> {
        let mut seen_vars: BTreeMap<usize, usize> = BTreeMap::new();
        for (i, node) in self.nodes.iter().enumerate() {
            for &c in &node.children {
                if c >= i {
                    return Err(DagError::ChildOrder { node: i, child: c });
                }
            }
            match node.op.arity() {
                Some(a) if node.children.len() != a => {
                    return Err(DagError::Arity {
                        node: i,
                        op: node.op,
                        expected: a,
                        got: node.children.len(),
                    });
                }
                None if node.children.len() < 2 => {
                    return Err(DagError::SumArity {
                        node: i,
                        got: node.children.len(),
                    });
                }
                _ => {}
            }
            match node.op {
                Op::Const(v) if !v.is_finite() => {
                    return Err(DagError::NonFiniteConst { node: i });
                }
                Op::PowK(k) if k < 2 => {
                    return Err(DagError::BadExponent { node: i, k });
                }
                Op::Var(v) if seen_vars.insert(v, i).is_some() => {
                    return Err(DagError::DuplicateVar { node: i, var: v });
                }
                _ => {}
            }
        }
        for &r in &self.roots {
            if r >= self.nodes.len() {
                return Err(DagError::BadRoot { root: r });
            }
        }
        Ok(())
    }

    /// Distinct instance variables referenced by the DAG, ascending.
    pub fn var_indices(&self) -> Vec<usize> {
        let mut vars: Vec<usize> = self
            .nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Var(v) => Some(v),
                _ => None,
            })
            .collect();
        vars.sort_unstable();
        vars.dedup();
        vars
    }

    /// Distinct variables sitting somewhere under a nonlinear operator,
    /// ascending. A variable only ever touched by SUM/SUB/NEG contributes
    /// linearly: partitioning its domain cannot tighten any convex
    /// relaxation of this expression.
    pub fn nonlinear_var_indices(&self) -> Vec<usize> {
        // nodes are in topological order (children precede parents), so one
        // reverse sweep propagates the "under a nonlinear op" mark down
        let mut marked = vec![false; self.nodes.len()];
        for (i, n) in self.nodes.iter().enumerate().rev() {
            if n.op.is_nonlinear() || marked[i] {
                for &c in &n.children {
                    marked[c] = true;
                }
            }
        }
        let mut vars: Vec<usize> = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n.op {
                Op::Var(v) if marked[i] => Some(v),
                _ => None,
            })
            .collect();
        vars.sort_unstable();
        vars.dedup();
        vars
    }

    /// Fills `scratch.values` for nodes `0..=root`.
    pub fn forward_values(
        &self,
        root: usize,
        x: &[f64],
        scratch: &mut EvalScratch,
    ) -> Result<(), DomainError> {
        let vals = &mut scratch.values;
        vals.resize(root + 1, 0.0);
        for i in 0..=root {
            let node = &self.nodes[i];
            let v = match node.op {
                Op::Const(c) => c,
                Op::Var(j) => x[j],
                Op::Sum => node.children.iter().map(|&c| vals[c]).sum(),
                Op::Sub => vals[node.children[0]] - vals[node.children[1]],
                Op::Neg => -vals[node.children[0]],
                Op::Mul => vals[node.children[0]] * vals[node.children[1]],
                Op::Square => {
                    let u = vals[node.children[0]];
                    u * u
                }
                Op::PowK(k) => vals[node.children[0]].powi(k as i32),
                Op::Exp => vals[node.children[0]].exp(),
                Op::Log => {
                    let u = vals[node.children[0]];
                    if u <= 0.0 {
                        return Err(DomainError::LogNonPositive { node: i });
                    }
                    u.ln()
                }
            };
            if !v.is_finite() {
                return Err(DomainError::NonFinite { node: i });
            }
            vals[i] = v;
        }
        Ok(())
    }

    /// Point evaluation of the subgraph rooted at `root`.
    pub fn eval(&self, root: usize, x: &[f64], scratch: &mut EvalScratch) -> Result<f64, DomainError> {
        self.forward_values(root, x, scratch)?;
        Ok(scratch.values[root])
    }

    /// Fills `scratch.intervals` for nodes `0..=root` with the natural
    /// interval extension over `boxes`.
    pub fn forward_intervals(
        &self,
        root: usize,
        boxes: &[Interval],
        scratch: &mut EvalScratch,
    ) -> Result<(), DomainError> {
        let ivs = &mut scratch.intervals;
        ivs.resize(root + 1, Interval::point(0.0));
        for i in 0..=root {
            let node = &self.nodes[i];
            let v = match node.op {
                Op::Const(c) => Interval::point(c),
                Op::Var(j) => boxes[j],
                Op::Sum => {
                    let mut acc = ivs[node.children[0]];
                    for &c in &node.children[1..] {
                        acc = acc.add(&ivs[c]);
                    }
                    acc
                }
                Op::Sub => ivs[node.children[0]].sub(&ivs[node.children[1]]),
                Op::Neg => ivs[node.children[0]].neg(),
                Op::Mul => ivs[node.children[0]].mul(&ivs[node.children[1]]),
                Op::Square => ivs[node.children[0]].square(),
                Op::PowK(k) => ivs[node.children[0]].powi(k),
                Op::Exp => ivs[node.children[0]].exp(),
                Op::Log => ivs[node.children[0]]
                    .ln()
                    .ok_or(DomainError::LogNonPositive { node: i })?,
            };
            ivs[i] = v;
        }
        Ok(())
    }

    /// Enclosure of `{f(x) : x in boxes}`; overestimation is expected.
    pub fn interval_eval(
        &self,
        root: usize,
        boxes: &[Interval],
        scratch: &mut EvalScratch,
    ) -> Result<Interval, DomainError> {
        self.forward_intervals(root, boxes, scratch)?;
        Ok(scratch.intervals[root])
    }

    /// Reverse-mode gradient with respect to all `grad.len()` instance
    /// variables; entries for variables the DAG does not reference are zero.
    pub fn gradient(
        &self,
        root: usize,
        x: &[f64],
        grad: &mut [f64],
        scratch: &mut EvalScratch,
    ) -> Result<(), DomainError> {
        self.forward_values(root, x, scratch)?;
        let vals = &scratch.values;
        let adj = &mut scratch.adjoints;
        adj.clear();
        adj.resize(root + 1, 0.0);
        adj[root] = 1.0;
        grad.iter_mut().for_each(|g| *g = 0.0);
        for i in (0..=root).rev() {
            let a = adj[i];
            if a == 0.0 {
                continue;
            }
            let node = &self.nodes[i];
            match node.op {
                Op::Const(_) => {}
                Op::Var(j) => grad[j] += a,
                Op::Sum => {
                    for &c in &node.children {
                        adj[c] += a;
                    }
                }
                Op::Sub => {
                    adj[node.children[0]] += a;
                    adj[node.children[1]] -= a;
                }
                Op::Neg => adj[node.children[0]] -= a,
                Op::Mul => {
                    let (l, r) = (node.children[0], node.children[1]);
                    adj[l] += a * vals[r];
                    adj[r] += a * vals[l];
                }
                Op::Square => {
                    let c = node.children[0];
                    adj[c] += a * 2.0 * vals[c];
                }
                Op::PowK(k) => {
                    let c = node.children[0];
                    adj[c] += a * k as f64 * vals[c].powi(k as i32 - 1);
                }
                Op::Exp => {
                    let c = node.children[0];
                    adj[c] += a * vals[i];
                }
                Op::Log => {
                    let c = node.children[0];
                    adj[c] += a / vals[c];
                }
            }
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(DomainError::NonFinite { node: root });
        }
        Ok(())
    }

    /// Rewrites every variable reference `j` to `new_of_old[j]`, leaving the
    /// node order untouched.
    pub fn remap_vars(&self, new_of_old: &[usize]) -> ExprDag {
        let nodes = self
            .nodes
            .iter()
            .map(|n| ExprNode {
                op: match n.op {
                    Op::Var(j) => Op::Var(new_of_old[j]),
                    op => op,
                },
                children: n.children.clone(),
            })
            .collect();
        ExprDag { nodes, roots: self.roots.clone() }
    }

    /// Reorders nodes into post-order depth-first order from the roots
    /// (left-to-right children first), dropping unreachable nodes. Two DAGs
    /// describing the same expression tree compare equal after
    /// canonicalization regardless of construction order.
    pub fn canonical(&self) -> ExprDag {
        let mut remap = vec![usize::MAX; self.nodes.len()];
        let mut nodes = Vec::with_capacity(self.nodes.len());
        let mut stack: Vec<(usize, bool)> = Vec::new();
        for &r in &self.roots {
            stack.push((r, false));
            while let Some((i, expanded)) = stack.pop() {
                if remap[i] != usize::MAX {
                    continue;
                }
                if expanded {
                    let children = self.nodes[i]
                        .children
                        .iter()
                        .map(|&c| remap[c])
                        .collect();
                    remap[i] = nodes.len();
                    nodes.push(ExprNode { op: self.nodes[i].op, children });
                } else {
                    stack.push((i, true));
                    for &c in self.nodes[i].children.iter().rev() {
                        stack.push((c, false));
                    }
                }
            }
        }
        let roots = self.roots.iter().map(|&r| remap[r]).collect();
        ExprDag { nodes, roots }
    }

    pub fn operator_node_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.op.is_operator()).count()
    }

    pub fn nonlinear_operator_node_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.op.is_nonlinear()).count()
    }

    /// Quadratic operator nodes: SQUARE, POW 2, and MUL of two distinct
    /// subexpressions.
    pub fn quadratic_operator_node_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| match n.op {
                Op::Square | Op::PowK(2) => true,
                Op::Mul => n.children[0] != n.children[1],
                _ => false,
            })
            .count()
    }

    /// Degree-2 monomial occurrences: SQUARE, POW 2, and variable-times-
    /// variable MUL nodes.
    pub fn quadratic_element_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| match n.op {
                Op::Square | Op::PowK(2) => true,
                Op::Mul => {
                    let l = &self.nodes[n.children[0]].op;
                    let r = &self.nodes[n.children[1]].op;
                    matches!(l, Op::Var(_)) && matches!(r, Op::Var(_))
                }
                _ => false,
            })
            .count()
    }
}

/// Incremental DAG constructor. Variable nodes are interned so each instance
/// variable appears at most once; everything else is appended in post-order.
#[derive(Debug, Default)]
pub struct DagBuilder {
    nodes: Vec<ExprNode>,
    var_nodes: BTreeMap<usize, usize>,
}

impl DagBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, op: Op, children: Vec<usize>) -> usize {
        self.nodes.push(ExprNode { op, children });
        self.nodes.len() - 1
    }

    pub fn var(&mut self, index: usize) -> usize {
        if let Some(&n) = self.var_nodes.get(&index) {
            return n;
        }
        let n = self.push(Op::Var(index), vec![]);
        self.var_nodes.insert(index, n);
        n
    }

    pub fn constant(&mut self, v: f64) -> usize {
        self.push(Op::Const(v), vec![])
    }

    pub fn sum(&mut self, children: Vec<usize>) -> usize {
        self.push(Op::Sum, children)
    }

    pub fn sub(&mut self, a: usize, b: usize) -> usize {
        self.push(Op::Sub, vec![a, b])
    }

    pub fn neg(&mut self, a: usize) -> usize {
        self.push(Op::Neg, vec![a])
    }

    pub fn mul(&mut self, a: usize, b: usize) -> usize {
        self.push(Op::Mul, vec![a, b])
    }

    pub fn square(&mut self, a: usize) -> usize {
        self.push(Op::Square, vec![a])
    }

    pub fn powk(&mut self, a: usize, k: u32) -> usize {
        self.push(Op::PowK(k), vec![a])
    }

    pub fn exp(&mut self, a: usize) -> usize {
        self.push(Op::Exp, vec![a])
    }

    pub fn log(&mut self, a: usize) -> usize {
        self.push(Op::Log, vec![a])
    }

    pub fn finish(self, roots: Vec<usize>) -> Result<ExprDag, DagError> {
        ExprDag::new(self.nodes, roots)
    }
}
