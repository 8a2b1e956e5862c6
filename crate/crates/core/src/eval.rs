//! Metrics, dataset splitting, and the per-seed evaluation report.
//!
//! Work counters stand in for runtimes, aggregated as a shifted geometric
//! mean with shift 10 and reported relative to always running the default
//! rule. Splitting happens at the instance level by default: both
//! permutations of one instance are near-duplicates, so letting them
//! straddle the train/test boundary would leak.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::bnb::BranchRule;
use crate::datagen::{rule_for_label, DataPoint, Dataset};

/// Shift applied inside every geometric-mean aggregate, mirroring the label
/// shift.
pub const SGM_SHIFT: f64 = 10.0;

/// A row counts as "large" when the faster rule wins by more than this
/// factor.
pub const LARGE_LABEL_FACTOR: f64 = 4.0;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EvalError {
    #[error("empty input")]
    EmptyInput,
    #[error("length mismatch: {left} predictions vs {right} labels")]
    LengthMismatch { left: usize, right: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitMode {
    /// All permutations of one instance land on the same side.
    InstanceLevel,
    /// Plain row shuffle; permutations of one instance may straddle sides.
    RowLevel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub overall_accuracy: f64,
    pub large_label_accuracy: f64,
    pub sgm_predicted_ratio: f64,
    pub sgm_virtual_best_ratio: f64,
    pub sgm_per_rule_ratios: BTreeMap<BranchRule, f64>,
    pub n_test_rows: usize,
    pub seed: u64,
}

/// Shifted geometric mean `exp(mean(ln(x + shift))) - shift`, computed in
/// log space. A constant vector short-circuits to the constant, so the
/// degenerate cases (all zeros, single value) are exact.
pub fn sgm(values: &[f64], shift: f64) -> Result<f64, EvalError> {
    if values.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    for &v in values {
        assert!(v >= 0.0 && v.is_finite(), "sgm over nonnegative values only, got {v}");
    }
    if values.iter().all(|&v| v == values[0]) {
        return Ok(values[0]);
    }
    let mean =
        values.iter().map(|&v| (v + shift).ln()).sum::<f64>() / values.len() as f64;
    Ok(mean.exp() - shift)
}

/// Share of rows whose predicted sign matches the label sign. A zero label
/// carries no preference and counts correct for either prediction; the
/// prediction's decision boundary sits at 0 (strictly positive picks
/// PreferInt). `large_factor` restricts scoring to rows where one rule wins
/// by more than that factor; with no such rows the restriction is vacuous
/// and the accuracy reports 1.
pub fn accuracy(
    predictions: &[f64],
    labels: &[f64],
    large_factor: Option<f64>,
) -> Result<f64, EvalError> {
    if predictions.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            left: predictions.len(),
            right: labels.len(),
        });
    }
    let cutoff = large_factor.map(|f| f.log10()).unwrap_or(0.0);
    let mut scored = 0usize;
    let mut correct = 0usize;
    for (&p, &l) in predictions.iter().zip(labels) {
        if l.abs() <= cutoff && large_factor.is_some() {
            continue;
        }
        scored += 1;
        if l == 0.0 || (p > 0.0) == (l > 0.0) {
            correct += 1;
        }
    }
    if scored == 0 {
        return Ok(1.0);
    }
    Ok(correct as f64 / scored as f64)
}

/// Seeded train/test split, 80/20 by default via [`split`]. The shuffled
/// unit is the instance (or the row, in [`SplitMode::RowLevel`]); row order
/// within each side stays canonical. The train side always gets at least
/// one unit and never all of them.
pub fn split_with(
    ds: &Dataset,
    seed: u64,
    train_fraction: f64,
    mode: SplitMode,
) -> (Dataset, Dataset) {
    assert!(ds.rows.len() >= 5, "need at least 5 rows to split");
    assert!(
        (0.0..1.0).contains(&train_fraction) && train_fraction > 0.0,
        "train fraction must sit strictly between 0 and 1"
    );
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let in_train: Box<dyn Fn(usize) -> bool> = match mode {
        SplitMode::InstanceLevel => {
            let ids: BTreeSet<&str> =
                ds.rows.iter().map(|p| p.instance_id.as_str()).collect();
            let mut ids: Vec<&str> = ids.into_iter().collect();
            ids.shuffle(&mut r);
            let n_train =
                ((ids.len() as f64 * train_fraction).round() as usize).clamp(1, ids.len() - 1);
            let train: BTreeSet<String> =
                ids[..n_train].iter().map(|s| s.to_string()).collect();
            Box::new(move |row: usize| train.contains(&ds.rows[row].instance_id))
        }
        SplitMode::RowLevel => {
            let mut order: Vec<usize> = (0..ds.rows.len()).collect();
            order.shuffle(&mut r);
            let n_train = ((ds.rows.len() as f64 * train_fraction).round() as usize)
                .clamp(1, ds.rows.len() - 1);
            let train: BTreeSet<usize> = order[..n_train].iter().copied().collect();
            Box::new(move |row: usize| train.contains(&row))
        }
    };
    let mut train_rows = Vec::new();
    let mut test_rows = Vec::new();
    for (i, p) in ds.rows.iter().enumerate() {
        if in_train(i) {
            train_rows.push(p.clone());
        } else {
            test_rows.push(p.clone());
        }
    }
    (
        Dataset { rows: train_rows, provenance: ds.provenance.clone() },
        Dataset { rows: test_rows, provenance: ds.provenance.clone() },
    )
}

pub fn split(ds: &Dataset, seed: u64) -> (Dataset, Dataset) {
    split_with(ds, seed, 0.8, SplitMode::InstanceLevel)
}

/// Work-ratio aggregates for one set of per-row rule decisions.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioScores {
    /// sgm(work under the decided rule) / sgm(work under the default).
    pub predicted: f64,
    /// sgm(rowwise cheaper rule) / sgm(default) — the selector's floor.
    pub virtual_best: f64,
    pub per_rule: BTreeMap<BranchRule, f64>,
}

fn rule_work(p: &DataPoint, rule: BranchRule) -> f64 {
    match rule {
        BranchRule::Mixed => p.work_mixed as f64,
        BranchRule::PreferInt => p.work_preferint as f64,
        BranchRule::PreferSpatial => {
            panic!("datasets carry works for the two competing rules only")
        }
    }
}

pub fn sgm_runtime_score(
    decisions: &[BranchRule],
    rows: &[DataPoint],
    default_rule: BranchRule,
) -> RatioScores {
    assert_eq!(decisions.len(), rows.len(), "one decision per row");
    assert!(!rows.is_empty(), "cannot score zero rows");
    let agg = |works: Vec<f64>| sgm(&works, SGM_SHIFT).expect("nonempty by construction");
    let denom = agg(rows.iter().map(|p| rule_work(p, default_rule)).collect());
    let decided = agg(
        rows.iter()
            .zip(decisions)
            .map(|(p, &d)| rule_work(p, d))
            .collect(),
    );
    let best = agg(
        rows.iter()
            .map(|p| rule_work(p, BranchRule::Mixed).min(rule_work(p, BranchRule::PreferInt)))
            .collect(),
    );
    let mut per_rule = BTreeMap::new();
    for rule in [BranchRule::Mixed, BranchRule::PreferInt] {
        per_rule.insert(rule, agg(rows.iter().map(|p| rule_work(p, rule)).collect()) / denom);
    }
    let scores = RatioScores {
        predicted: decided / denom,
        virtual_best: best / denom,
        per_rule,
    };
    debug_assert!(scores.virtual_best <= scores.predicted + 1e-12);
    scores
}

/// Scores one model's predictions on labeled rows. All rows must carry a
/// label (the filter stage guarantees that for persisted datasets).
pub fn evaluate(predictions: &[f64], rows: &[DataPoint], seed: u64) -> EvalReport {
    let labels: Vec<f64> = rows
        .iter()
        .map(|p| p.label.expect("evaluate needs labeled rows"))
        .collect();
    let decisions: Vec<BranchRule> =
        predictions.iter().map(|&p| rule_for_label(p)).collect();
    let scores = sgm_runtime_score(&decisions, rows, BranchRule::Mixed);
    EvalReport {
        overall_accuracy: accuracy(predictions, &labels, None).expect("aligned above"),
        large_label_accuracy: accuracy(predictions, &labels, Some(LARGE_LABEL_FACTOR))
            .expect("aligned above"),
        sgm_predicted_ratio: scores.predicted,
        sgm_virtual_best_ratio: scores.virtual_best,
        sgm_per_rule_ratios: scores.per_rule,
        n_test_rows: rows.len(),
        seed,
    }
}

fn rule_label(rule: BranchRule) -> &'static str {
    match rule {
        BranchRule::Mixed => "mixed",
        BranchRule::PreferInt => "preferint",
        BranchRule::PreferSpatial => "preferspatial",
    }
}

/// Aligned two-column summary of a train/test report pair.
pub fn report_table(train: &EvalReport, test: &EvalReport) -> String {
    let mut rows: Vec<(String, String, String)> = vec![(
        "metric".to_string(),
        "train".to_string(),
        "test".to_string(),
    )];
    let mut push = |name: &str, a: f64, b: f64| {
        rows.push((name.to_string(), format!("{a:.4}"), format!("{b:.4}")));
    };
    push("accuracy_overall", train.overall_accuracy, test.overall_accuracy);
    push(
        "accuracy_large_label",
        train.large_label_accuracy,
        test.large_label_accuracy,
    );
    push("sgm_ratio_predicted", train.sgm_predicted_ratio, test.sgm_predicted_ratio);
    push(
        "sgm_ratio_virtual_best",
        train.sgm_virtual_best_ratio,
        test.sgm_virtual_best_ratio,
    );
    for (rule, a) in &train.sgm_per_rule_ratios {
        let b = test.sgm_per_rule_ratios.get(rule).copied().unwrap_or(f64::NAN);
        push(&format!("sgm_ratio_{}", rule_label(*rule)), *a, b);
    }
    rows.push((
        "rows".to_string(),
        train.n_test_rows.to_string(),
        test.n_test_rows.to_string(),
    ));

    let width: [usize; 3] = [0, 1, 2].map(|c| {
        rows.iter()
            .map(|r| [&r.0, &r.1, &r.2][c].len())
            .max()
            .unwrap()
    });
    let mut out = String::new();
    for (name, a, b) in &rows {
        writeln!(
            out,
            "{name:<w0$}  {a:>w1$}  {b:>w2$}",
            w0 = width[0],
            w1 = width[1],
            w2 = width[2]
        )
        .unwrap();
    }
    out
}

/// The same report pair as machine-readable CSV.
pub fn report_csv(train: &EvalReport, test: &EvalReport) -> String {
    let mut out = String::from("metric,train,test\n");
    let mut push = |name: &str, a: f64, b: f64| {
        writeln!(out, "{name},{a},{b}").unwrap();
    };
    push("accuracy_overall", train.overall_accuracy, test.overall_accuracy);
    push(
        "accuracy_large_label",
        train.large_label_accuracy,
        test.large_label_accuracy,
    );
    push("sgm_ratio_predicted", train.sgm_predicted_ratio, test.sgm_predicted_ratio);
    push(
        "sgm_ratio_virtual_best",
        train.sgm_virtual_best_ratio,
        test.sgm_virtual_best_ratio,
    );
    for (rule, a) in &train.sgm_per_rule_ratios {
        let b = test.sgm_per_rule_ratios.get(rule).copied().unwrap_or(f64::NAN);
        push(&format!("sgm_ratio_{}", rule_label(*rule)), *a, b);
    }
    writeln!(out, "rows,{},{}", train.n_test_rows, test.n_test_rows).unwrap();
    out
}
