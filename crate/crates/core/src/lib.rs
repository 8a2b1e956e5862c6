//! A small branch-and-bound solver for nonconvex mixed-integer nonlinear
//! programs, plus the machinery to learn which of its branching rules is
//! faster on a given instance.
//!
//! The solver side: factorable constraints as expression DAGs
//! ([`expr`]), interval presolve ([`presolve`]), a bounded-variable simplex
//! ([`lp`]), outer-approximation cuts ([`relax`]), and the branch-and-bound
//! loop itself ([`bnb`]) with pluggable branching rules.
//!
//! The learning side: root-node instance features ([`features`]), synthetic
//! instance generation and labeled dataset construction ([`datagen`]),
//! linear and forest regressors with feature-importance ranking ([`ml`]),
//! and shifted-geometric-mean evaluation of rule selectors ([`eval`]).

pub mod bnb;
pub mod datagen;
pub mod eval;
pub mod expr;
pub mod features;
pub mod instance;
pub mod lp;
pub mod ml;
pub mod presolve;
pub mod relax;
pub mod interval;
pub mod tol;
