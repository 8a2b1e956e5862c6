//! Root-node instance features and their train-time preprocessing.
//!
//! A feature vector is measured once per (instance, permutation) pair from
//! the presolved instance, its root relaxation, and the root strong-branching
//! probe; the columns follow [`FEATURE_NAMES`] everywhere a vector is stored
//! or serialized. Counting features get `log10(v + 1)` compression before
//! model fitting, and [`Preprocessor`] imputes missing entries with training
//! means and z-scores every column using training statistics only, so test
//! rows never leak into the normalization.

use std::ops::RangeInclusive;

use thiserror::Error;

use crate::bnb::RootSbStats;
use crate::instance::{Instance, Sense};
use crate::presolve::PresolveSummary;
use crate::relax::{cut_coeff_spread, RootRelaxInfo};

pub const FEATURE_COUNT: usize = 17;

/// Column order of every dataset row and model artifact.
pub const FEATURE_NAMES: [&str; FEATURE_COUNT] = [
    "pct_quadr_elements",
    "pct_int_vars",
    "pct_eq_cons",
    "pct_nonlin_cons",
    "n_int_viols",
    "n_nonlin_viols",
    "n_spat_branch_ent_fixed",
    "avg_work_sblp_int",
    "avg_work_sblp_spat",
    "avg_rel_bnd_chng_sblp_int",
    "avg_rel_bnd_chng_sblp_spat",
    "avg_coeff_spread_conv_cuts",
    "nodes_in_dag",
    "pct_vars_dag",
    "pct_vars_dag_unbnd",
    "pct_vars_dag_int",
    "pct_quadr_nodes_dag",
];

/// Columns carrying counts, pivot work, bound changes, and cut spreads — the
/// block whose heavy right tail gets `log10(v + 1)` compression. The share
/// features outside this block already live in [0, 1]-ish ranges.
const COMPRESSED_RANGE: RangeInclusive<usize> = 4..=11;

/// One measured vector in [`FEATURE_NAMES`] order. `missing[i]` marks
/// entries that could not be measured (no spatial candidate at the root, no
/// convexification cuts, ...); their `values[i]` slot holds `0.0` as a
/// placeholder until the preprocessor imputes it.
#[derive(Debug, Clone, PartialEq)]
pub struct RawFeatureVector {
    pub values: [f64; FEATURE_COUNT],
    pub missing: [bool; FEATURE_COUNT],
    /// Set once the counting block has been log-compressed.
    pub scaled: bool,
}

impl RawFeatureVector {
    /// `'0'`/`'1'` per column, `'1'` where the entry is missing.
    pub fn missing_mask(&self) -> String {
        self.missing.iter().map(|&m| if m { '1' } else { '0' }).collect()
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScaleError {
    #[error("feature `{name}` is negative ({value:e}), log10(v + 1) undefined")]
    NegativeValue { name: &'static str, value: f64 },
    #[error("feature vector was already log-compressed")]
    AlreadyScaled,
}

/// Measures all columns from the presolved instance and its root artifacts.
///
/// The instance must be the presolve output: presolve keeps every variable
/// and row in place (fixing and tightening happen through the bounds), so
/// the same object still carries the original totals `n` and `m` while
/// `summary` contributes the post-presolve sizes and `is_fixed` tells the
/// DAG counters which variables dropped out.
pub fn extract_features(
    instance: &Instance,
    summary: &PresolveSummary,
    root: &RootRelaxInfo,
    sb: &RootSbStats,
) -> RawFeatureVector {
    fn ratio(num: f64, den: f64) -> f64 {
        if den > 0.0 {
            num / den
        } else {
            0.0
        }
    }

    let n = instance.n() as f64;
    let m = instance.m() as f64;
    let n_tilde = summary.n_tilde as f64;

    let int_vars = instance
        .variables
        .iter()
        .filter(|v| v.is_integer && !v.is_fixed())
        .count() as f64;
    // An equality enters the normalized form either as a linear `eq` row or,
    // for nonlinear constraints, as a `g`/`g__ge` pair; the twin's suffix is
    // the surviving marker, so one twin counts one original equality.
    let eq_cons = instance
        .linear_constraints
        .iter()
        .filter(|r| r.sense == Sense::Eq)
        .count()
        + instance
            .nonlinear_constraints
            .iter()
            .filter(|c| c.name.ends_with("__ge"))
            .count();
    let dag = instance.dag_stats();
    let dag_nodes = dag.operator_node_count as f64;
    let dag_vars = dag.vars_in_dag as f64;

    let mut v = RawFeatureVector {
        values: [0.0; FEATURE_COUNT],
        missing: [false; FEATURE_COUNT],
        scaled: false,
    };
    let mut put_opt = |i: usize, val: Option<f64>| match val {
        Some(x) => v.values[i] = x,
        None => v.missing[i] = true,
    };
    put_opt(7, sb.avg_work_int);
    put_opt(8, sb.avg_work_spat);
    put_opt(9, sb.avg_rel_bnd_chng_int);
    put_opt(10, sb.avg_rel_bnd_chng_spat);
    put_opt(
        11,
        if root.cuts_added.is_empty() {
            None
        } else {
            let total: f64 = root.cuts_added.iter().map(cut_coeff_spread).sum();
            Some(total / root.cuts_added.len() as f64)
        },
    );

    v.values[0] = ratio(instance.quadratic_element_count() as f64, n);
    v.values[1] = ratio(int_vars, n_tilde);
    v.values[2] = ratio(eq_cons as f64, m);
    v.values[3] = ratio(instance.nonlinear_constraints.len() as f64, m);
    v.values[4] = sb.n_int_viols as f64;
    v.values[5] = sb.n_nonlin_viols as f64;
    v.values[6] = sb.spat_entities_fixed as f64;
    v.values[12] = ratio(dag_nodes, dag_nodes + summary.m_tilde_nonzeros as f64);
    v.values[13] = ratio(dag_vars, n_tilde);
    v.values[14] = ratio(dag.unbounded_vars_in_dag as f64, dag_vars);
    v.values[15] = ratio(dag.int_vars_in_dag as f64, dag_vars);
    v.values[16] = ratio(
        dag.quadratic_operator_node_count as f64,
        dag.nonlinear_operator_node_count as f64,
    );
    v
}

/// Replaces each counting-block entry `v` with `log10(v + 1)`; share
/// features and missing flags pass through untouched. Errors on a negative
/// entry and on a second application (the transform is not idempotent, so
/// compressing twice silently corrupts a dataset).
pub fn scale_features(raw: &RawFeatureVector) -> Result<RawFeatureVector, ScaleError> {
    if raw.scaled {
        return Err(ScaleError::AlreadyScaled);
    }
    let mut out = raw.clone();
    for i in COMPRESSED_RANGE {
        let value = raw.values[i];
        if value < 0.0 {
            return Err(ScaleError::NegativeValue {
                name: FEATURE_NAMES[i],
                value,
            });
        }
        out.values[i] = (value + 1.0).log10();
    }
    out.scaled = true;
    Ok(out)
}

/// Train-fitted imputation and z-scoring, applied to train and test alike.
/// Width-generic so experiment code can append extra columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Preprocessor {
    /// Per-column mean of the present training entries; 0 when the column
    /// was missing in every training row.
    pub impute: Vec<f64>,
    /// Post-imputation column means.
    pub mean: Vec<f64>,
    /// Post-imputation population standard deviations; constant columns are
    /// forced to 1 so they normalize to exactly zero.
    pub stddev: Vec<f64>,
    /// Columns whose training values were constant after imputation.
    pub flat: Vec<bool>,
    pub fitted_rows: usize,
}

pub fn fit_preprocessor(values: &[Vec<f64>], missing: &[Vec<bool>]) -> Preprocessor {
    assert!(!values.is_empty(), "cannot fit a preprocessor on zero rows");
    assert_eq!(values.len(), missing.len(), "row/mask count mismatch");
    let rows = values.len();
    let width = values[0].len();
    for (v, m) in values.iter().zip(missing) {
        assert_eq!(v.len(), width, "ragged feature row");
        assert_eq!(m.len(), width, "ragged missing mask");
    }

    let mut pre = Preprocessor {
        impute: vec![0.0; width],
        mean: vec![0.0; width],
        stddev: vec![1.0; width],
        flat: vec![false; width],
        fitted_rows: rows,
    };
    for d in 0..width {
        let mut present_sum = 0.0;
        let mut present_count = 0usize;
        for (v, m) in values.iter().zip(missing) {
            if !m[d] {
                present_sum += v[d];
                present_count += 1;
            }
        }
        if present_count > 0 {
            pre.impute[d] = present_sum / present_count as f64;
        }

        let imputed =
            |row: usize| if missing[row][d] { pre.impute[d] } else { values[row][d] };
        let mean = (0..rows).map(&imputed).sum::<f64>() / rows as f64;
        let var = (0..rows).map(|r| (imputed(r) - mean).powi(2)).sum::<f64>() / rows as f64;
        let sd = var.sqrt();
        pre.mean[d] = mean;
        if sd <= 1e-9 * (1.0 + mean.abs()) {
            pre.flat[d] = true;
        } else {
            pre.stddev[d] = sd;
        }
    }
    pre
}

impl Preprocessor {
    /// Pass-through statistics: zero shift, unit scale, nothing flagged
    /// flat. Lets matrix-level model fits run on columns that are already
    /// standardized (or deliberately left alone).
    pub fn identity(width: usize) -> Self {
        Preprocessor {
            impute: vec![0.0; width],
            mean: vec![0.0; width],
            stddev: vec![1.0; width],
            flat: vec![false; width],
            fitted_rows: 0,
        }
    }

    pub fn width(&self) -> usize {
        self.impute.len()
    }

    /// Imputes missing entries with the training means, then z-scores every
    /// column with the training statistics.
    pub fn apply(&self, values: &[f64], missing: &[bool]) -> Vec<f64> {
        assert_eq!(values.len(), self.width(), "feature width mismatch");
        assert_eq!(missing.len(), self.width(), "mask width mismatch");
        (0..self.width())
            .map(|d| {
                let x = if missing[d] { self.impute[d] } else { values[d] };
                (x - self.mean[d]) / self.stddev[d]
            })
            .collect()
    }
}
