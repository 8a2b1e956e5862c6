//! Numeric tolerances shared across the solver.

/// LP primal feasibility and bound tolerance.
pub const LP_FEAS: f64 = 1e-7;
/// LP reduced-cost optimality tolerance.
pub const LP_OPT: f64 = 1e-9;
/// A variable is integral when within this distance of an integer.
pub const INT_FEAS: f64 = 1e-6;
/// A nonlinear constraint is satisfied when g(x) <= this.
pub const NL_FEAS: f64 = 1e-6;
/// Minimum violation of a linearization before it is added as a cut.
pub const CUT_VIOL: f64 = 1e-6;
/// Relative gap at which a node is fathomed against the incumbent.
pub const PRUNE_GAP: f64 = 1e-9;
/// Boxes narrower than this are not split by spatial branching.
pub const MIN_SPATIAL_WIDTH: f64 = 1e-6;
/// Pivot tolerance: entries smaller in magnitude are treated as zero.
pub const PIVOT_EPS: f64 = 1e-10;
