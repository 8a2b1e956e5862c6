//! MINLP instances: `min c^T x` subject to linear rows, nonlinear
//! constraints `g(x) <= 0`, variable bounds, and integrality marks.
//!
//! Includes the line-oriented text format (parse + write, round-trip safe)
//! and seeded row/column permutation.
//!
//! Text format, one statement per line, `#` starts a comment:
//!
//! ```text
//! minlp <name>
//! var <name> <lb|-inf> <ub|+inf> <cont|int>
//! obj min : <coef> <var> [<coef> <var> ...]
//! lin <name> <le|ge|eq> <rhs> : <coef> <var> ...
//! nl <name> <le|ge|eq> <rhs> : <prefix-expr>
//! ```
//!
//! Prefix expressions are `(<op> <args...>)` with ops
//! `+ - neg * sq pow exp log`, numeric literals, and variable names;
//! `pow` takes an expression and an integer literal >= 2.

use crate::expr::{DagBuilder, ExprDag, Op};
use crate::interval::Interval;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

impl Sense {
    fn token(self) -> &'static str {
        match self {
            Sense::Le => "le",
            Sense::Ge => "ge",
            Sense::Eq => "eq",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Variable {
    pub name: String,
    pub lb: f64,
    pub ub: f64,
    pub is_integer: bool,
}

impl Variable {
    pub fn domain(&self) -> Interval {
        Interval::new(self.lb, self.ub)
    }

    pub fn is_fixed(&self) -> bool {
        self.lb >= self.ub
    }
}

/// Sparse linear row `sum coef_j * x_j  <sense>  rhs`. Terms are sorted by
/// variable index and free of duplicates.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearConstraint {
    pub name: String,
    pub terms: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

/// Nonlinear constraint in normalized `g(x) <= 0` form; the DAG has exactly
/// one root.
#[derive(Debug, Clone, PartialEq)]
pub struct NonlinearConstraint {
    pub name: String,
    pub dag: ExprDag,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub name: String,
    pub variables: Vec<Variable>,
    /// Sparse objective `min c^T x`, sorted by variable index.
    pub objective: Vec<(usize, f64)>,
    pub linear_constraints: Vec<LinearConstraint>,
    pub nonlinear_constraints: Vec<NonlinearConstraint>,
}

/// DAG structure counts over the union of all nonlinear constraints of one
/// instance. Variables fixed by presolve are not counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DagStats {
    pub operator_node_count: usize,
    pub nonlinear_operator_node_count: usize,
    pub quadratic_operator_node_count: usize,
    pub vars_in_dag: usize,
    pub int_vars_in_dag: usize,
    pub unbounded_vars_in_dag: usize,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ValidationError {
    #[error("unknown variable `{name}`")]
    UnknownVariable { name: String },
    #[error("invalid name `{name}`")]
    BadName { name: String },
    #[error("duplicate variable `{name}`")]
    DuplicateVariable { name: String },
    #[error("duplicate constraint `{name}`")]
    DuplicateConstraint { name: String },
    #[error("variable `{name}`: lower bound exceeds upper bound")]
    BadBounds { name: String },
    #[error("constraint `{name}`: non-finite coefficient or rhs")]
    NonFiniteCoefficient { name: String },
    #[error("constraint `{name}`: variable referenced twice")]
    DuplicateTerm { name: String },
    #[error("constraint `{name}`: variable index {index} out of range")]
    IndexOutOfRange { name: String, index: usize },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParseError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error(transparent)]
    Validation(#[from] ValidationError),
}

fn syntax(line: usize, msg: impl Into<String>) -> ParseError {
    ParseError::Syntax { line, msg: msg.into() }
}

/// `true` for tokens usable as variable/constraint names: identifier-shaped
/// and not mistakable for a number (so `inf` and friends are rejected).
fn is_valid_name(s: &str) -> bool {
    let mut chars = s.chars();
    let head_ok = matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_');
    head_ok
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
        && s.parse::<f64>().is_err()
}

fn parse_bound(tok: &str) -> Option<f64> {
    match tok {
        "-inf" => Some(f64::NEG_INFINITY),
        "+inf" | "inf" => Some(f64::INFINITY),
        _ => tok.parse::<f64>().ok().filter(|v| v.is_finite()),
    }
}

fn fmt_f64(v: f64) -> String {
    if v == f64::INFINITY {
        "+inf".to_string()
    } else if v == f64::NEG_INFINITY {
        "-inf".to_string()
    } else {
        format!("{v}")
    }
}

/// Sorts a sparse row by index; rejects duplicates, bad indices, and
/// non-finite coefficients.
fn normalize_terms(
    mut terms: Vec<(usize, f64)>,
    n: usize,
    owner: &str,
) -> Result<Vec<(usize, f64)>, ValidationError> {
    for &(j, c) in &terms {
        if j >= n {
            return Err(ValidationError::IndexOutOfRange {
                name: owner.to_string(),
                index: j,
            });
        }
        if !c.is_finite() {
            return Err(ValidationError::NonFiniteCoefficient { name: owner.to_string() });
        }
    }
    terms.sort_unstable_by_key(|&(j, _)| j);
    if terms.windows(2).any(|w| w[0].0 == w[1].0) {
        return Err(ValidationError::DuplicateTerm { name: owner.to_string() });
    }
    Ok(terms)
}

impl Instance {
    /// Validates and normalizes: rows sorted, DAGs canonicalized.
    pub fn new(
        name: String,
        variables: Vec<Variable>,
        objective: Vec<(usize, f64)>,
        linear_constraints: Vec<LinearConstraint>,
        nonlinear_constraints: Vec<NonlinearConstraint>,
    ) -> Result<Self, ValidationError> {
        let n = variables.len();
        let mut seen = std::collections::BTreeSet::new();
        for v in &variables {
            if !is_valid_name(&v.name) {
                return Err(ValidationError::BadName { name: v.name.clone() });
            }
            if !seen.insert(v.name.as_str()) {
                return Err(ValidationError::DuplicateVariable { name: v.name.clone() });
            }
            if v.lb > v.ub || v.lb.is_nan() || v.ub.is_nan() {
                return Err(ValidationError::BadBounds { name: v.name.clone() });
            }
        }
        let mut con_names = std::collections::BTreeSet::new();
        let objective = normalize_terms(objective, n, "obj")?;
        let mut lin = Vec::with_capacity(linear_constraints.len());
        for c in linear_constraints {
            let LinearConstraint { name, terms, sense, rhs } = c;
            if !is_valid_name(&name) {
                return Err(ValidationError::BadName { name });
            }
            if !con_names.insert(name.clone()) {
                return Err(ValidationError::DuplicateConstraint { name });
            }
            if !rhs.is_finite() {
                return Err(ValidationError::NonFiniteCoefficient { name });
            }
            let terms = normalize_terms(terms, n, &name)?;
            lin.push(LinearConstraint { name, terms, sense, rhs });
        }
        let mut nl = Vec::with_capacity(nonlinear_constraints.len());
        for c in nonlinear_constraints {
            if !is_valid_name(&c.name) {
                return Err(ValidationError::BadName { name: c.name });
            }
            if !con_names.insert(c.name.clone()) {
                return Err(ValidationError::DuplicateConstraint { name: c.name });
            }
            let dag = c.dag.canonical();
            if let Some(&j) = dag.var_indices().iter().find(|&&j| j >= n) {
                return Err(ValidationError::IndexOutOfRange { name: c.name, index: j });
            }
            nl.push(NonlinearConstraint { name: c.name, dag });
        }
        Ok(Instance {
            name,
            variables,
            objective,
            linear_constraints: lin,
            nonlinear_constraints: nl,
        })
    }

    pub fn n(&self) -> usize {
        self.variables.len()
    }

    pub fn m(&self) -> usize {
        self.linear_constraints.len() + self.nonlinear_constraints.len()
    }

    pub fn bounds_box(&self) -> Vec<Interval> {
        self.variables.iter().map(|v| v.domain()).collect()
    }

    /// DAG structure counts over all nonlinear constraints; fixed variables
    /// are skipped so the var counts stay comparable to the unfixed total.
    pub fn dag_stats(&self) -> DagStats {
        let mut stats = DagStats::default();
        let mut in_dag = vec![false; self.n()];
        for c in &self.nonlinear_constraints {
            stats.operator_node_count += c.dag.operator_node_count();
            stats.nonlinear_operator_node_count += c.dag.nonlinear_operator_node_count();
            stats.quadratic_operator_node_count += c.dag.quadratic_operator_node_count();
            for j in c.dag.var_indices() {
                in_dag[j] = true;
            }
        }
        for (j, v) in self.variables.iter().enumerate() {
            if !in_dag[j] || v.is_fixed() {
                continue;
            }
            stats.vars_in_dag += 1;
            if v.is_integer {
                stats.int_vars_in_dag += 1;
            }
            if !v.domain().is_bounded() {
                stats.unbounded_vars_in_dag += 1;
            }
        }
        stats
    }

    /// Total degree-2 monomial occurrences across all nonlinear constraints.
    pub fn quadratic_element_count(&self) -> usize {
        self.nonlinear_constraints
            .iter()
            .map(|c| c.dag.quadratic_element_count())
            .sum()
    }

    pub fn parse(text: &str) -> Result<Self, ParseError> {
        Parser::new(text).run()
    }

    pub fn write(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "minlp {}", self.name);
        for v in &self.variables {
            let _ = writeln!(
                out,
                "var {} {} {} {}",
                v.name,
                fmt_f64(v.lb),
                fmt_f64(v.ub),
                if v.is_integer { "int" } else { "cont" }
            );
        }
        if !self.objective.is_empty() {
            out.push_str("obj min :");
            for &(j, c) in &self.objective {
                let _ = write!(out, " {} {}", fmt_f64(c), self.variables[j].name);
            }
            out.push('\n');
        }
        for r in &self.linear_constraints {
            let _ = write!(out, "lin {} {} {} :", r.name, r.sense.token(), fmt_f64(r.rhs));
            for &(j, c) in &r.terms {
                let _ = write!(out, " {} {}", fmt_f64(c), self.variables[j].name);
            }
            out.push('\n');
        }
        for c in &self.nonlinear_constraints {
            let _ = write!(out, "nl {} le 0 : ", c.name);
            self.write_prefix(&c.dag, c.dag.single_root(), &mut out);
            out.push('\n');
        }
        out
    }

    fn write_prefix(&self, dag: &ExprDag, node: usize, out: &mut String) {
        let n = &dag.nodes()[node];
        match n.op {
            Op::Const(v) => out.push_str(&fmt_f64(v)),
            Op::Var(j) => out.push_str(&self.variables[j].name),
            _ => {
                let (tok, k) = match n.op {
                    Op::Sum => ("+", None),
                    Op::Sub => ("-", None),
                    Op::Neg => ("neg", None),
                    Op::Mul => ("*", None),
                    Op::Square => ("sq", None),
                    Op::PowK(k) => ("pow", Some(k)),
                    Op::Exp => ("exp", None),
                    Op::Log => ("log", None),
                    Op::Const(_) | Op::Var(_) => unreachable!(),
                };
                out.push('(');
                out.push_str(tok);
                for &c in &n.children {
                    out.push(' ');
                    self.write_prefix(dag, c, out);
                }
                if let Some(k) = k {
                    let _ = write!(out, " {k}");
                }
                out.push(')');
            }
        }
    }

    /// Reorders variables and constraints by a seeded shuffle, remapping all
    /// index references. Seed 0 is the identity. The optimization problem is
    /// unchanged; only the presentation order differs.
    pub fn permute(&self, seed: u64) -> Instance {
        if seed == 0 {
            return self.clone();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = self.n();
        // old index -> position in the shuffled order
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let mut new_of_old = vec![0usize; n];
        for (new, &old) in order.iter().enumerate() {
            new_of_old[old] = new;
        }
        let variables: Vec<Variable> =
            order.iter().map(|&old| self.variables[old].clone()).collect();
        let remap_terms = |terms: &[(usize, f64)]| {
            let mut t: Vec<(usize, f64)> =
                terms.iter().map(|&(j, c)| (new_of_old[j], c)).collect();
            t.sort_unstable_by_key(|&(j, _)| j);
            t
        };
        let objective = remap_terms(&self.objective);
        let mut linear_constraints: Vec<LinearConstraint> = self
            .linear_constraints
            .iter()
            .map(|r| LinearConstraint {
                name: r.name.clone(),
                terms: remap_terms(&r.terms),
                sense: r.sense,
                rhs: r.rhs,
            })
            .collect();
        linear_constraints.shuffle(&mut rng);
        let mut nonlinear_constraints: Vec<NonlinearConstraint> = self
            .nonlinear_constraints
            .iter()
            .map(|c| NonlinearConstraint {
                name: c.name.clone(),
                dag: c.dag.remap_vars(&new_of_old),
            })
            .collect();
        nonlinear_constraints.shuffle(&mut rng);
        Instance {
            name: self.name.clone(),
            variables,
            objective,
            linear_constraints,
            nonlinear_constraints,
        }
    }
}

struct Parser<'a> {
    text: &'a str,
    name: Option<String>,
    variables: Vec<Variable>,
    var_index: std::collections::BTreeMap<String, usize>,
    objective: Vec<(usize, f64)>,
    saw_objective: bool,
    linear: Vec<LinearConstraint>,
    nonlinear: Vec<NonlinearConstraint>,
}

impl<'a> Parser<'a> {
    fn new(text: &'a str) -> Self {
        Parser {
            text,
            name: None,
            variables: Vec::new(),
            var_index: std::collections::BTreeMap::new(),
            objective: Vec::new(),
            saw_objective: false,
            linear: Vec::new(),
            nonlinear: Vec::new(),
        }
    }

    fn run(mut self) -> Result<Instance, ParseError> {
        let text = self.text;
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (head, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
            let rest = rest.trim();
            match head {
                "minlp" => self.header(line_no, rest)?,
                "var" => self.var_line(line_no, rest)?,
                "obj" => self.obj_line(line_no, rest)?,
                "lin" => self.lin_line(line_no, rest)?,
                "nl" => self.nl_line(line_no, rest)?,
                other => return Err(syntax(line_no, format!("unknown statement `{other}`"))),
            }
        }
        let name = self
            .name
            .ok_or_else(|| syntax(1, "missing `minlp <name>` header"))?;
        Ok(Instance::new(
            name,
            self.variables,
            self.objective,
            self.linear,
            self.nonlinear,
        )?)
    }

    fn header(&mut self, line: usize, rest: &str) -> Result<(), ParseError> {
        if self.name.is_some() {
            return Err(syntax(line, "duplicate `minlp` header"));
        }
        if rest.is_empty() || rest.split_whitespace().count() != 1 {
            return Err(syntax(line, "expected `minlp <name>`"));
        }
        self.name = Some(rest.to_string());
        Ok(())
    }

    fn var_line(&mut self, line: usize, rest: &str) -> Result<(), ParseError> {
        let toks: Vec<&str> = rest.split_whitespace().collect();
        let [name, lb, ub, kind] = toks.as_slice() else {
            return Err(syntax(line, "expected `var <name> <lb> <ub> <cont|int>`"));
        };
        let lb = parse_bound(lb)
            .filter(|v| *v < f64::INFINITY)
            .ok_or_else(|| syntax(line, format!("bad lower bound `{lb}`")))?;
        let ub = parse_bound(ub)
            .filter(|v| *v > f64::NEG_INFINITY)
            .ok_or_else(|| syntax(line, format!("bad upper bound `{ub}`")))?;
        let is_integer = match *kind {
            "cont" => false,
            "int" => true,
            _ => return Err(syntax(line, format!("bad variable kind `{kind}`"))),
        };
        if self.var_index.contains_key(*name) {
            return Err(ValidationError::DuplicateVariable { name: name.to_string() }.into());
        }
        self.var_index.insert(name.to_string(), self.variables.len());
        self.variables.push(Variable {
            name: name.to_string(),
            lb,
            ub,
            is_integer,
        });
        Ok(())
    }

    fn lookup(&self, name: &str) -> Result<usize, ParseError> {
        self.var_index
            .get(name)
            .copied()
            .ok_or_else(|| ValidationError::UnknownVariable { name: name.to_string() }.into())
    }

    fn parse_terms(&self, line: usize, body: &str) -> Result<Vec<(usize, f64)>, ParseError> {
        let toks: Vec<&str> = body.split_whitespace().collect();
        if !toks.len().is_multiple_of(2) {
            return Err(syntax(line, "expected `<coef> <var>` pairs"));
        }
        let mut terms = Vec::with_capacity(toks.len() / 2);
        for pair in toks.chunks(2) {
            let coef: f64 = pair[0]
                .parse()
                .map_err(|_| syntax(line, format!("bad coefficient `{}`", pair[0])))?;
            terms.push((self.lookup(pair[1])?, coef));
        }
        Ok(terms)
    }

    fn obj_line(&mut self, line: usize, rest: &str) -> Result<(), ParseError> {
        if self.saw_objective {
            return Err(syntax(line, "duplicate objective"));
        }
        let Some((dir, body)) = rest.split_once(':') else {
            return Err(syntax(line, "expected `obj min : <terms>`"));
        };
        if dir.trim() != "min" {
            return Err(syntax(line, "only `min` objectives are supported"));
        }
        self.objective = self.parse_terms(line, body)?;
        self.saw_objective = true;
        Ok(())
    }

    fn con_head<'b>(
        &self,
        line: usize,
        rest: &'b str,
    ) -> Result<(String, Sense, f64, &'b str), ParseError> {
        let Some((head, body)) = rest.split_once(':') else {
            return Err(syntax(line, "expected `<name> <sense> <rhs> : ...`"));
        };
        let toks: Vec<&str> = head.split_whitespace().collect();
        let [name, sense, rhs] = toks.as_slice() else {
            return Err(syntax(line, "expected `<name> <sense> <rhs> : ...`"));
        };
        let sense = match *sense {
            "le" | "<=" => Sense::Le,
            "ge" | ">=" => Sense::Ge,
            "eq" | "=" | "==" => Sense::Eq,
            other => return Err(syntax(line, format!("bad sense `{other}`"))),
        };
        let rhs: f64 = rhs
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| syntax(line, format!("bad rhs `{rhs}`")))?;
        Ok((name.to_string(), sense, rhs, body))
    }

    fn lin_line(&mut self, line: usize, rest: &str) -> Result<(), ParseError> {
        let (name, sense, rhs, body) = self.con_head(line, rest)?;
        let terms = self.parse_terms(line, body)?;
        self.linear.push(LinearConstraint { name, terms, sense, rhs });
        Ok(())
    }

    fn nl_line(&mut self, line: usize, rest: &str) -> Result<(), ParseError> {
        let (name, sense, rhs, body) = self.con_head(line, rest)?;
        match sense {
            Sense::Le => {
                let dag = self.normalized_dag(line, body, rhs, false)?;
                self.nonlinear.push(NonlinearConstraint { name, dag });
            }
            Sense::Ge => {
                let dag = self.normalized_dag(line, body, rhs, true)?;
                self.nonlinear.push(NonlinearConstraint { name, dag });
            }
            Sense::Eq => {
                let le = self.normalized_dag(line, body, rhs, false)?;
                let ge = self.normalized_dag(line, body, rhs, true)?;
                self.nonlinear
                    .push(NonlinearConstraint { name: name.clone(), dag: le });
                self.nonlinear
                    .push(NonlinearConstraint { name: format!("{name}__ge"), dag: ge });
            }
        }
        Ok(())
    }

    /// Builds the `<= 0` root for `e <sense> rhs`: the le direction keeps
    /// `e - rhs`, the ge direction negates to `rhs - e`.
    fn normalized_dag(
        &self,
        line: usize,
        body: &str,
        rhs: f64,
        negate: bool,
    ) -> Result<ExprDag, ParseError> {
        let mut b = DagBuilder::new();
        let e = self.parse_prefix(line, body, &mut b)?;
        let root = match (negate, rhs != 0.0) {
            (false, false) => e,
            (false, true) => {
                let r = b.constant(rhs);
                b.sub(e, r)
            }
            (true, false) => b.neg(e),
            (true, true) => {
                let r = b.constant(rhs);
                b.sub(r, e)
            }
        };
        b.finish(vec![root])
            .map_err(|e| syntax(line, format!("invalid expression: {e}")))
    }

    /// Parses one prefix expression covering the whole body.
    fn parse_prefix(
        &self,
        line: usize,
        body: &str,
        b: &mut DagBuilder,
    ) -> Result<usize, ParseError> {
        let mut toks: Vec<String> = Vec::new();
        let mut cur = String::new();
        for ch in body.chars() {
            match ch {
                '(' | ')' => {
                    if !cur.is_empty() {
                        toks.push(std::mem::take(&mut cur));
                    }
                    toks.push(ch.to_string());
                }
                c if c.is_whitespace() => {
                    if !cur.is_empty() {
                        toks.push(std::mem::take(&mut cur));
                    }
                }
                c => cur.push(c),
            }
        }
        if !cur.is_empty() {
            toks.push(cur);
        }
        let mut pos = 0usize;
        let root = self.parse_expr(line, &toks, &mut pos, b)?;
        if pos != toks.len() {
            return Err(syntax(line, "trailing tokens after expression"));
        }
        Ok(root)
    }

    fn parse_expr(
        &self,
        line: usize,
        toks: &[String],
        pos: &mut usize,
        b: &mut DagBuilder,
    ) -> Result<usize, ParseError> {
        let Some(tok) = toks.get(*pos) else {
            return Err(syntax(line, "unexpected end of expression"));
        };
        *pos += 1;
        if tok != "(" {
            if tok == ")" {
                return Err(syntax(line, "unexpected `)`"));
            }
            if let Ok(v) = tok.parse::<f64>() {
                if !v.is_finite() {
                    return Err(syntax(line, format!("non-finite constant `{tok}`")));
                }
                return Ok(b.constant(v));
            }
            return Ok(b.var(self.lookup(tok)?));
        }
        let Some(op) = toks.get(*pos) else {
            return Err(syntax(line, "missing operator after `(`"));
        };
        let op = op.clone();
        *pos += 1;
        let mut args = Vec::new();
        // `pow` ends with its exponent literal; everything else with `)`
        loop {
            match toks.get(*pos) {
                None => return Err(syntax(line, "unbalanced parentheses")),
                Some(t) if t == ")" => {
                    *pos += 1;
                    break;
                }
                _ if op == "pow" && args.len() == 1 => {
                    let t = &toks[*pos];
                    let k: u32 = t
                        .parse()
                        .ok()
                        .filter(|&k| k >= 2)
                        .ok_or_else(|| {
                            syntax(line, format!("pow exponent must be an integer >= 2, got `{t}`"))
                        })?;
                    *pos += 1;
                    let node = b.powk(args[0], k);
                    match toks.get(*pos) {
                        Some(t) if t == ")" => *pos += 1,
                        _ => return Err(syntax(line, "expected `)` after pow exponent")),
                    }
                    return Ok(node);
                }
                _ => args.push(self.parse_expr(line, toks, pos, b)?),
            }
        }
        let check = |want: usize| -> Result<(), ParseError> {
            if args.len() != want {
                Err(syntax(
                    line,
                    format!("`{op}` takes {want} argument(s), got {}", args.len()),
                ))
            } else {
                Ok(())
            }
        };
        match op.as_str() {
            "+" => {
                if args.len() < 2 {
                    return Err(syntax(line, "`+` takes at least 2 arguments"));
                }
                Ok(b.sum(args))
            }
            "-" => {
                check(2)?;
                Ok(b.sub(args[0], args[1]))
            }
            "neg" => {
                check(1)?;
                Ok(b.neg(args[0]))
            }
            "*" => {
                check(2)?;
                Ok(b.mul(args[0], args[1]))
            }
            "sq" => {
                check(1)?;
                Ok(b.square(args[0]))
            }
            "exp" => {
                check(1)?;
                Ok(b.exp(args[0]))
            }
            "log" => {
                check(1)?;
                Ok(b.log(args[0]))
            }
            "pow" => Err(syntax(line, "`pow` takes an expression and an exponent")),
            other => Err(syntax(line, format!("unknown operator `{other}`"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_minimal() {
        let inst = Instance::parse("minlp tiny\nvar x 0 1 cont\n").unwrap();
        assert_eq!(inst.name, "tiny");
        assert_eq!(inst.n(), 1);
        assert_eq!(inst.m(), 0);
        assert!(inst.objective.is_empty());
    }

    #[test]
    fn parse_ge_normalizes_to_negated_root() {
        let text = "minlp t\nvar x 0 1 cont\nvar y 0 1 cont\nnl c1 ge 0 : (* x y)\n";
        let inst = Instance::parse(text).unwrap();
        assert_eq!(inst.nonlinear_constraints.len(), 1);
        let dag = &inst.nonlinear_constraints[0].dag;
        let root = dag.single_root();
        assert_eq!(dag.nodes()[root].op, Op::Neg);
        let mut sc = crate::expr::EvalScratch::default();
        // g(x) = -(x*y); at (2,3) -> -6
        assert_eq!(dag.eval(root, &[2.0, 3.0], &mut sc).unwrap(), -6.0);
    }

    #[test]
    fn parse_int_var_and_linear_row() {
        let text = "minlp t\nvar x 0 1 int\nlin r1 le 1 : 1 x\n";
        let inst = Instance::parse(text).unwrap();
        assert!(inst.variables[0].is_integer);
        assert_eq!(inst.linear_constraints.len(), 1);
        assert_eq!(inst.linear_constraints[0].terms, vec![(0, 1.0)]);
        let again = Instance::parse(&inst.write()).unwrap();
        assert_eq!(inst, again);
    }

    #[test]
    fn parse_eq_nonlinear_splits_into_two() {
        let text = "minlp t\nvar x 0 2 cont\nnl c eq 1 : (sq x)\n";
        let inst = Instance::parse(text).unwrap();
        assert_eq!(inst.nonlinear_constraints.len(), 2);
        assert_eq!(inst.nonlinear_constraints[0].name, "c");
        assert_eq!(inst.nonlinear_constraints[1].name, "c__ge");
        let mut sc = crate::expr::EvalScratch::default();
        for c in &inst.nonlinear_constraints {
            // at the feasible point x=1 both halves evaluate to 0
            let v = c.dag.eval(c.dag.single_root(), &[1.0], &mut sc).unwrap();
            assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn write_renders_infinite_bounds() {
        let text = "minlp t\nvar x -inf +inf cont\nobj min : 1 x\nnl c le 0 : (- (exp x) 10)\n";
        let inst = Instance::parse(text).unwrap();
        let written = inst.write();
        assert!(written.contains("var x -inf +inf cont"));
        assert_eq!(Instance::parse(&written).unwrap(), inst);
    }

    #[test]
    fn round_trip_with_rhs_folding() {
        let text = "minlp t\nvar x 0 5 cont\nvar y 1 4 int\n\
                    obj min : 2 x -1 y\n\
                    lin r1 ge -2.5 : 0.5 x -3 y\n\
                    lin r2 eq 1 : 1 x 1 y\n\
                    nl g1 le 2 : (+ (sq x) (* x y))\n\
                    nl g2 ge 1 : (log (+ 1 (sq y)))\n";
        let inst = Instance::parse(text).unwrap();
        let again = Instance::parse(&inst.write()).unwrap();
        assert_eq!(inst, again);
    }

    #[test]
    fn parse_rejects_unknown_variable() {
        let err = Instance::parse("minlp t\nvar x 0 1 cont\nlin r le 1 : 1 z\n").unwrap_err();
        assert!(matches!(
            err,
            ParseError::Validation(ValidationError::UnknownVariable { .. })
        ));
    }

    #[test]
    fn parse_reports_line_numbers() {
        let err = Instance::parse("minlp t\nvar x 0 1 cont\nnl c le 0 : (sq x\n").unwrap_err();
        match err {
            ParseError::Syntax { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn parse_rejects_bad_bounds() {
        let err = Instance::parse("minlp t\nvar x 2 1 cont\n").unwrap_err();
        assert!(matches!(
            err,
            ParseError::Validation(ValidationError::BadBounds { .. })
        ));
    }

    #[test]
    fn permute_seed_zero_is_identity() {
        let text = "minlp t\nvar a 0 1 cont\nvar b 0 2 int\nvar c 0 3 cont\n\
                    obj min : 1 a 2 b 3 c\nlin r le 1 : 1 a 1 c\nnl g le 0 : (- (sq b) 2)\n";
        let inst = Instance::parse(text).unwrap();
        assert_eq!(inst.permute(0), inst);
    }

    #[test]
    fn permute_is_deterministic_and_invertible() {
        let text = "minlp t\nvar a 0 1 cont\nvar b 0 2 int\nvar c -1 3 cont\n\
                    obj min : 1 a 2 b 3 c\n\
                    lin r1 le 1 : 1 a 1 c\nlin r2 ge 0 : 2 b -1 a\n\
                    nl g1 le 0 : (- (* a b) 1)\nnl g2 le 0 : (- (sq c) 4)\n";
        let inst = Instance::parse(text).unwrap();
        let p1 = inst.permute(1);
        let p2 = inst.permute(1);
        assert_eq!(p1, p2);
        assert_ne!(p1, inst, "seed 1 should actually move something");

        // invert by variable / constraint names
        let back_order: Vec<usize> = inst
            .variables
            .iter()
            .map(|v| p1.variables.iter().position(|w| w.name == v.name).unwrap())
            .collect();
        let mut inv = vec![0usize; inst.n()];
        for (orig, &permuted) in back_order.iter().enumerate() {
            // permuted index -> original index
            inv[permuted] = orig;
        }
        let restored_vars: Vec<Variable> = back_order
            .iter()
            .map(|&p| p1.variables[p].clone())
            .collect();
        assert_eq!(restored_vars, inst.variables);
        let mut restored_lin: Vec<LinearConstraint> = p1
            .linear_constraints
            .iter()
            .map(|r| {
                let mut terms: Vec<(usize, f64)> =
                    r.terms.iter().map(|&(j, c)| (inv[j], c)).collect();
                terms.sort_unstable_by_key(|&(j, _)| j);
                LinearConstraint { terms, ..r.clone() }
            })
            .collect();
        restored_lin.sort_by(|a, b| {
            let ka = inst.linear_constraints.iter().position(|c| c.name == a.name);
            let kb = inst.linear_constraints.iter().position(|c| c.name == b.name);
            ka.cmp(&kb)
        });
        assert_eq!(restored_lin, inst.linear_constraints);
    }

    #[test]
    fn permute_preserves_semantics() {
        let text = "minlp t\nvar a 0 1 cont\nvar b 0 2 int\n\
                    obj min : 1 a 2 b\nnl g le 0 : (- (+ (sq a) (sq b)) 2)\n";
        let inst = Instance::parse(text).unwrap();
        let perm = inst.permute(3);
        // evaluate g at a matched point under both orderings
        let point = |i: &Instance, a: f64, b: f64| {
            let mut x = vec![0.0; i.n()];
            for (j, v) in i.variables.iter().enumerate() {
                x[j] = if v.name == "a" { a } else { b };
            }
            x
        };
        let mut sc = crate::expr::EvalScratch::default();
        let g0 = &inst.nonlinear_constraints[0].dag;
        let g1 = &perm.nonlinear_constraints[0].dag;
        let v0 = g0.eval(g0.single_root(), &point(&inst, 0.5, 1.0), &mut sc).unwrap();
        let v1 = g1.eval(g1.single_root(), &point(&perm, 0.5, 1.0), &mut sc).unwrap();
        assert_eq!(v0, v1);
    }

    #[test]
    fn rejects_duplicate_row_term() {
        let err = Instance::parse("minlp t\nvar x 0 1 cont\nlin r le 1 : 1 x 2 x\n").unwrap_err();
        assert!(matches!(
            err,
            ParseError::Validation(ValidationError::DuplicateTerm { .. })
        ));
    }

    #[test]
    fn dag_stats_counts() {
        let text = "minlp t\nvar x 0 +inf int\nvar y 0 1 cont\nvar z 0 1 cont\n\
                    nl g1 le 0 : (- (* x y) 1)\nnl g2 le 0 : (- (exp x) 3)\n";
        let inst = Instance::parse(text).unwrap();
        let s = inst.dag_stats();
        assert_eq!(s.vars_in_dag, 2);
        assert_eq!(s.int_vars_in_dag, 1);
        assert_eq!(s.unbounded_vars_in_dag, 1);
        assert_eq!(s.quadratic_operator_node_count, 1);
        // two SUBs, one MUL, one EXP
        assert_eq!(s.operator_node_count, 4);
        assert_eq!(s.nonlinear_operator_node_count, 2);
    }

    #[test]
    fn dag_stats_empty() {
        let inst = Instance::parse("minlp t\nvar x 0 1 cont\n").unwrap();
        assert_eq!(inst.dag_stats(), DagStats::default());
    }
}
