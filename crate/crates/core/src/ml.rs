//! Regressors over root-node features: least squares, a depth-capped
//! random forest, importance rankings with cross-seed aggregation, and the
//! drop-one-feature-at-a-time reduction experiment.
//!
//! Both model kinds are trained on standardized matrices and carry their
//! preprocessor plus the ordered active-feature names, so a persisted model
//! can score a raw feature vector long after the training run is gone.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::datagen::{DataPoint, Dataset};
use crate::eval::{evaluate, split, EvalReport};
use crate::features::{
    fit_preprocessor, scale_features, Preprocessor, RawFeatureVector, ScaleError, FEATURE_NAMES,
};

/// Ridge weight added to the normal-equations diagonal when the plain
/// least-squares system is singular (duplicated or constant columns).
pub const RIDGE: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum MlError {
    #[error("cannot fit a model on zero rows")]
    DegenerateData,
    #[error("unknown feature `{0}`")]
    MissingFeature(String),
    #[error("rankings cover different feature sets")]
    MismatchedFeatureSet,
    #[error("normal equations stay singular even with the ridge term")]
    SingularSystem,
    #[error(transparent)]
    Scale(#[from] ScaleError),
    #[error("model text: {0}")]
    ModelFormat(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Linear,
    Forest,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    /// One weight per entry of `active_features`, in that order.
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub active_features: Vec<String>,
    pub preprocessor: Preprocessor,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    Split {
        /// Column index into the model's active features.
        feature: usize,
        /// Midpoint between two consecutive training values; `<=` goes left.
        threshold: f64,
        /// Weighted impurity decrease of this split, already divided by the
        /// bootstrap size. Kept on the node so importances survive
        /// serialization.
        decrease: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

/// Axis-aligned regression tree; `nodes[0]` is the root and children are
/// stored in pre-order (a split's left child is always the next node).
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn predict(&self, z: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                TreeNode::Leaf { value } => return *value,
                TreeNode::Split { feature, threshold, left, right, .. } => {
                    at = if z[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    /// Longest root-to-leaf path, counted in splits.
    pub fn depth(&self) -> usize {
        self.depth_below(0)
    }

    fn depth_below(&self, at: usize) -> usize {
        match &self.nodes[at] {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => {
                1 + self.depth_below(*left).max(self.depth_below(*right))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestModel {
    pub trees: Vec<Tree>,
    pub n_trees: usize,
    pub max_depth: usize,
    pub master_seed: u64,
    pub active_features: Vec<String>,
    pub preprocessor: Preprocessor,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Linear(LinearModel),
    Forest(ForestModel),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    /// Nodes with fewer rows than this become leaves without trying to
    /// split.
    pub min_split_size: usize,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig { n_trees: 100, max_depth: 5, min_split_size: 5 }
    }
}

/// Feature names ordered most important first. `scores` runs parallel to
/// `names`: per-model importances (|coefficient|, MDI) descend, while
/// aggregated positional score-sums ascend — in both cases the first entry
/// is the most important feature.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceRanking {
    pub names: Vec<String>,
    pub scores: Vec<f64>,
}

/// Gaussian elimination with partial pivoting; `None` when a pivot falls
/// under `tiny`.
fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>, tiny: f64) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        if a[pivot_row][col].abs() <= tiny {
            return None;
        }
        a.swap(col, pivot_row);
        b.swap(col, pivot_row);
        for row in col + 1..n {
            let (top, bottom) = a.split_at_mut(row);
            let pivot = &top[col];
            let target = &mut bottom[0];
            let factor = target[col] / pivot[col];
            if factor == 0.0 {
                continue;
            }
            for (t, &p) in target[col..].iter_mut().zip(&pivot[col..]) {
                *t -= factor * p;
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let tail: f64 = a[row][row + 1..].iter().zip(&x[row + 1..]).map(|(&c, &v)| c * v).sum();
        x[row] = (b[row] - tail) / a[row][row];
    }
    Some(x)
}

/// Ordinary least squares with intercept on an already-standardized design
/// matrix, solved through the normal equations. A singular system (after
/// imputation constant columns can slip through, and duplicated features
/// always do) retries with [`RIDGE`] added to the diagonal, which keeps the
/// fit defined and splits weight evenly over duplicated columns.
pub fn fit_linear(
    x: &[Vec<f64>],
    y: &[f64],
    active_features: Vec<String>,
    preprocessor: Preprocessor,
) -> Result<LinearModel, MlError> {
    if y.is_empty() {
        return Err(MlError::DegenerateData);
    }
    assert_eq!(x.len(), y.len(), "one label per design row");
    let d = active_features.len();
    assert!(x.iter().all(|r| r.len() == d), "design width must match the feature names");
    assert_eq!(preprocessor.width(), d, "preprocessor width must match the feature names");

    // gram = AᵀA and rhs = Aᵀy for A = [X | 1]
    let w = d + 1;
    let mut gram = vec![vec![0.0; w]; w];
    let mut rhs = vec![0.0; w];
    for (row, &yi) in x.iter().zip(y) {
        let aug = |j: usize| if j < d { row[j] } else { 1.0 };
        for i in 0..w {
            let ai = aug(i);
            for (j, g) in gram[i].iter_mut().enumerate() {
                *g += ai * aug(j);
            }
            rhs[i] += ai * yi;
        }
    }
    let scale = gram.iter().enumerate().map(|(i, r)| r[i]).fold(0.0f64, f64::max);
    let tiny = 1e-12 * (1.0 + scale);
    let beta = match dense_solve(gram.clone(), rhs.clone(), tiny) {
        Some(beta) => beta,
        None => {
            for (i, row) in gram.iter_mut().enumerate() {
                row[i] += RIDGE;
            }
            dense_solve(gram, rhs, 0.0).ok_or(MlError::SingularSystem)?
        }
    };
    Ok(LinearModel {
        intercept: beta[d],
        coefficients: beta[..d].to_vec(),
        active_features,
        preprocessor,
    })
}

/// Scratch state for growing one tree out of one bootstrap sample.
struct TreeGrower<'a> {
    x: &'a [Vec<f64>],
    y: &'a [f64],
    cfg: &'a ForestConfig,
    r: ChaCha8Rng,
    bootstrap_size: usize,
    nodes: Vec<TreeNode>,
}

impl TreeGrower<'_> {
    /// Grows one node over `rows` (bootstrap indices, duplicates and all)
    /// and returns its index. Nodes land in pre-order because the slot is
    /// claimed before the children recurse.
    fn grow(&mut self, rows: &[usize], depth: usize) -> usize {
        let n = rows.len();
        let mean = rows.iter().map(|&i| self.y[i]).sum::<f64>() / n as f64;
        let sse_here: f64 = rows.iter().map(|&i| (self.y[i] - mean).powi(2)).sum();
        if depth >= self.cfg.max_depth || n < self.cfg.min_split_size || sse_here <= 0.0 {
            self.nodes.push(TreeNode::Leaf { value: mean });
            return self.nodes.len() - 1;
        }

        let d = self.x[0].len();
        let mut subset: Vec<usize> = (0..d).collect();
        subset.shuffle(&mut self.r);
        subset.truncate(d.div_ceil(3));
        subset.sort_unstable();

        // best = (summed child SSE, feature, threshold); features ascend
        // and only a strict improvement replaces the incumbent, so ties
        // resolve to the lowest feature index and the earliest threshold
        let mut best: Option<(f64, usize, f64)> = None;
        let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(n);
        for &f in &subset {
            pairs.clear();
            pairs.extend(rows.iter().map(|&i| (self.x[i][f], self.y[i])));
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left_sum = 0.0;
            let mut left_sq = 0.0;
            let total_sum: f64 = pairs.iter().map(|p| p.1).sum();
            let total_sq: f64 = pairs.iter().map(|p| p.1 * p.1).sum();
            for k in 1..n {
                left_sum += pairs[k - 1].1;
                left_sq += pairs[k - 1].1 * pairs[k - 1].1;
                if pairs[k - 1].0 == pairs[k].0 {
                    continue;
                }
                let (rn, rsum, rsq) =
                    ((n - k) as f64, total_sum - left_sum, total_sq - left_sq);
                let sse =
                    (left_sq - left_sum * left_sum / k as f64) + (rsq - rsum * rsum / rn);
                if best.is_none_or(|(s, _, _)| sse < s) {
                    best = Some((sse, f, 0.5 * (pairs[k - 1].0 + pairs[k].0)));
                }
            }
        }
        let Some((child_sse, feature, threshold)) = best else {
            // every sampled feature is constant on these rows
            self.nodes.push(TreeNode::Leaf { value: mean });
            return self.nodes.len() - 1;
        };

        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) =
            rows.iter().partition(|&&i| self.x[i][feature] <= threshold);
        let slot = self.nodes.len();
        self.nodes.push(TreeNode::Leaf { value: mean });
        let left = self.grow(&left_rows, depth + 1);
        let right = self.grow(&right_rows, depth + 1);
        self.nodes[slot] = TreeNode::Split {
            feature,
            threshold,
            decrease: (sse_here - child_sse) / self.bootstrap_size as f64,
            left,
            right,
        };
        slot
    }
}

fn grow_tree(x: &[Vec<f64>], y: &[f64], cfg: &ForestConfig, seed: u64) -> Tree {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let n = y.len();
    let sample: Vec<usize> = (0..n).map(|_| r.gen_range(0..n)).collect();
    let mut grower = TreeGrower { x, y, cfg, r, bootstrap_size: n, nodes: Vec::new() };
    grower.grow(&sample, 0);
    Tree { nodes: grower.nodes }
}

/// Bagged regression trees: each tree draws its bootstrap and split
/// randomness from a seed taken off the master stream at its index, every
/// split considers ⌈d/3⌉ features, and candidate thresholds sit at
/// midpoints between consecutive sorted values. Fully determined by
/// (data, config, seed).
pub fn fit_forest(
    x: &[Vec<f64>],
    y: &[f64],
    cfg: &ForestConfig,
    master_seed: u64,
    active_features: Vec<String>,
    preprocessor: Preprocessor,
) -> Result<ForestModel, MlError> {
    if y.is_empty() {
        return Err(MlError::DegenerateData);
    }
    assert_eq!(x.len(), y.len(), "one label per design row");
    let d = active_features.len();
    assert!(x.iter().all(|r| r.len() == d), "design width must match the feature names");
    assert_eq!(preprocessor.width(), d, "preprocessor width must match the feature names");
    assert!(cfg.n_trees > 0, "a forest needs at least one tree");

    let mut master = ChaCha8Rng::seed_from_u64(master_seed);
    let tree_seeds: Vec<u64> = (0..cfg.n_trees).map(|_| master.gen()).collect();
    let trees: Vec<Tree> = tree_seeds.iter().map(|&s| grow_tree(x, y, cfg, s)).collect();
    Ok(ForestModel {
        n_trees: trees.len(),
        trees,
        max_depth: cfg.max_depth,
        master_seed,
        active_features,
        preprocessor,
    })
}

impl LinearModel {
    /// Scores one standardized row (same column order as the fit).
    pub fn predict_row(&self, z: &[f64]) -> f64 {
        self.intercept + self.coefficients.iter().zip(z).map(|(c, v)| c * v).sum::<f64>()
    }
}

impl ForestModel {
    /// Mean of the tree predictions on one standardized row.
    pub fn predict_row(&self, z: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict(z)).sum::<f64>() / self.trees.len() as f64
    }
}

impl Model {
    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Linear(_) => ModelKind::Linear,
            Model::Forest(_) => ModelKind::Forest,
        }
    }

    pub fn active_features(&self) -> &[String] {
        match self {
            Model::Linear(m) => &m.active_features,
            Model::Forest(m) => &m.active_features,
        }
    }

    pub fn preprocessor(&self) -> &Preprocessor {
        match self {
            Model::Linear(m) => &m.preprocessor,
            Model::Forest(m) => &m.preprocessor,
        }
    }
}

/// Scores a measured feature vector: log-compresses it when still raw,
/// gathers the model's active columns by name, standardizes them with the
/// model's own preprocessor, and runs the regressor. Positive output reads
/// as "the integer-first rule will be faster here".
pub fn predict(model: &Model, x: &RawFeatureVector) -> Result<f64, MlError> {
    let scaled;
    let x = if x.scaled {
        x
    } else {
        scaled = scale_features(x)?;
        &scaled
    };
    let mut values = Vec::with_capacity(model.active_features().len());
    let mut missing = Vec::with_capacity(model.active_features().len());
    for name in model.active_features() {
        let idx = FEATURE_NAMES
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| MlError::MissingFeature(name.clone()))?;
        values.push(x.values[idx]);
        missing.push(x.missing[idx]);
    }
    let z = model.preprocessor().apply(&values, &missing);
    Ok(match model {
        Model::Linear(m) => m.predict_row(&z),
        Model::Forest(m) => m.predict_row(&z),
    })
}

pub fn predict_rows(model: &Model, rows: &[DataPoint]) -> Result<Vec<f64>, MlError> {
    rows.iter().map(|p| predict(model, &p.features)).collect()
}

/// Full training pipeline on labeled rows: select the active columns,
/// log-compress, fit the imputing z-scorer on these rows, standardize, and
/// fit the regressor. `seed` drives the forest's randomness and is unused
/// for the linear kind.
pub fn train_model(
    rows: &[DataPoint],
    active: &[String],
    kind: ModelKind,
    seed: u64,
) -> Result<Model, MlError> {
    if rows.is_empty() {
        return Err(MlError::DegenerateData);
    }
    let idx: Vec<usize> = active
        .iter()
        .map(|name| {
            FEATURE_NAMES
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| MlError::MissingFeature(name.clone()))
        })
        .collect::<Result<_, _>>()?;
    let mut values = Vec::with_capacity(rows.len());
    let mut missing = Vec::with_capacity(rows.len());
    let mut y = Vec::with_capacity(rows.len());
    for p in rows {
        let s = if p.features.scaled { p.features.clone() } else { scale_features(&p.features)? };
        values.push(idx.iter().map(|&i| s.values[i]).collect::<Vec<f64>>());
        missing.push(idx.iter().map(|&i| s.missing[i]).collect::<Vec<bool>>());
        y.push(p.label.expect("training rows must be labeled"));
    }
    let prep = fit_preprocessor(&values, &missing);
    let x: Vec<Vec<f64>> =
        values.iter().zip(&missing).map(|(v, m)| prep.apply(v, m)).collect();
    match kind {
        ModelKind::Linear => fit_linear(&x, &y, active.to_vec(), prep).map(Model::Linear),
        ModelKind::Forest => {
            fit_forest(&x, &y, &ForestConfig::default(), seed, active.to_vec(), prep)
                .map(Model::Forest)
        }
    }
}

/// Per-feature importances, most important first. Linear models rank by
/// coefficient magnitude (meaningful because the design was standardized);
/// forests rank by mean decrease in impurity, normalized to sum 1 when any
/// split happened at all. Ties keep the active-feature order.
pub fn importance(model: &Model) -> ImportanceRanking {
    let (names, mut scores): (&[String], Vec<f64>) = match model {
        Model::Linear(m) => (&m.active_features, m.coefficients.iter().map(|c| c.abs()).collect()),
        Model::Forest(m) => {
            let mut mdi = vec![0.0; m.active_features.len()];
            for tree in &m.trees {
                for node in &tree.nodes {
                    if let TreeNode::Split { feature, decrease, .. } = node {
                        mdi[*feature] += decrease;
                    }
                }
            }
            (&m.active_features, mdi)
        }
    };
    if let Model::Forest(_) = model {
        let total: f64 = scores.iter().sum();
        if total > 0.0 {
            for s in &mut scores {
                *s /= total;
            }
        }
    }
    let mut order: Vec<usize> = (0..names.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    ImportanceRanking {
        names: order.iter().map(|&i| names[i].clone()).collect(),
        scores: order.iter().map(|&i| scores[i]).collect(),
    }
}

/// Borda-style aggregation: each ranking awards a feature its position
/// (0 for the most important), positions are summed across rankings, and
/// the output sorts by score-sum ascending with the name as tie-break.
/// Input order is irrelevant; every ranking must cover the same features.
pub fn aggregate_rankings(rankings: &[ImportanceRanking]) -> Result<ImportanceRanking, MlError> {
    assert!(!rankings.is_empty(), "nothing to aggregate");
    let mut sums: BTreeMap<&str, f64> = BTreeMap::new();
    for (pos, name) in rankings[0].names.iter().enumerate() {
        sums.insert(name, pos as f64);
    }
    for ranking in &rankings[1..] {
        if ranking.names.len() != sums.len() {
            return Err(MlError::MismatchedFeatureSet);
        }
        for (pos, name) in ranking.names.iter().enumerate() {
            match sums.get_mut(name.as_str()) {
                Some(s) => *s += pos as f64,
                None => return Err(MlError::MismatchedFeatureSet),
            }
        }
    }
    let mut entries: Vec<(&str, f64)> = sums.into_iter().collect();
    entries.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(b.0)));
    Ok(ImportanceRanking {
        names: entries.iter().map(|e| e.0.to_string()).collect(),
        scores: entries.iter().map(|e| e.1).collect(),
    })
}

/// One seed's worth of the evaluation protocol: split, train on the train
/// side, score the test side, and keep the model's importance ranking.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedOutcome {
    pub report: EvalReport,
    pub ranking: ImportanceRanking,
}

pub fn run_seed(
    ds: &Dataset,
    active: &[String],
    kind: ModelKind,
    seed: u64,
) -> Result<SeedOutcome, MlError> {
    let (train, test) = split(ds, seed);
    let model = train_model(&train.rows, active, kind, seed)?;
    let predictions = predict_rows(&model, &test.rows)?;
    Ok(SeedOutcome {
        report: evaluate(&predictions, &test.rows, seed),
        ranking: importance(&model),
    })
}

/// One dimension level of the reduction curve: seed-averaged metrics for
/// the models trained on `active`, and the feature the aggregate ranking
/// sends away before the next level (absent only at d = 1).
#[derive(Debug, Clone, PartialEq)]
pub struct ReductionRow {
    pub d: usize,
    pub accuracy: f64,
    pub accuracy_large: f64,
    pub sgm_ratio: f64,
    /// Sample standard deviation of the per-seed predicted ratios (0 when
    /// the level ran on a single seed); the spread belongs next to the mean
    /// because split luck moves the ratio by a few percent.
    pub sgm_ratio_std: f64,
    pub sgm_virtual_best: f64,
    pub active: Vec<String>,
    pub dropped: Option<String>,
}

/// Retrains while discarding the least important feature after every
/// level, from the full set down to a single survivor: per seed an 80/20
/// split, metrics averaged over seeds, rankings aggregated over seeds to
/// pick the drop. Seeds run in parallel but merge in order, so the curve
/// does not depend on the thread count.
pub fn feature_reduction_experiment(
    ds: &Dataset,
    kind: ModelKind,
    seeds: &[u64],
) -> Result<Vec<ReductionRow>, MlError> {
    assert!(!seeds.is_empty(), "need at least one seed");
    let mut active: Vec<String> = FEATURE_NAMES.iter().map(|s| s.to_string()).collect();
    let mut out = Vec::with_capacity(active.len());
    while !active.is_empty() {
        let outcomes: Vec<SeedOutcome> = seeds
            .par_iter()
            .map(|&s| run_seed(ds, &active, kind, s))
            .collect::<Result<_, _>>()?;
        let mean = |pick: fn(&EvalReport) -> f64| {
            outcomes.iter().map(|o| pick(&o.report)).sum::<f64>() / outcomes.len() as f64
        };
        let rankings: Vec<ImportanceRanking> =
            outcomes.iter().map(|o| o.ranking.clone()).collect();
        let aggregate = aggregate_rankings(&rankings)?;
        let dropped =
            if active.len() > 1 { aggregate.names.last().cloned() } else { None };
        let ratio_mean = mean(|r| r.sgm_predicted_ratio);
        let sgm_ratio_std = if outcomes.len() > 1 {
            let ss: f64 = outcomes
                .iter()
                .map(|o| (o.report.sgm_predicted_ratio - ratio_mean).powi(2))
                .sum();
            (ss / (outcomes.len() - 1) as f64).sqrt()
        } else {
            0.0
        };
        out.push(ReductionRow {
            d: active.len(),
            accuracy: mean(|r| r.overall_accuracy),
            accuracy_large: mean(|r| r.large_label_accuracy),
            sgm_ratio: ratio_mean,
            sgm_ratio_std,
            sgm_virtual_best: mean(|r| r.sgm_virtual_best_ratio),
            active: active.clone(),
            dropped: dropped.clone(),
        });
        match dropped {
            Some(name) => active.retain(|n| *n != name),
            None => break,
        }
    }
    Ok(out)
}

/// The reduction curve as CSV, one row per dimension level.
pub fn reduction_csv(rows: &[ReductionRow]) -> String {
    let mut out = String::from("d,acc,acc_large,sgm_ratio,sgm_ratio_std,sgm_virtual_best\n");
    for r in rows {
        writeln!(
            out,
            "{},{:.6},{:.6},{:.6},{:.6},{:.6}",
            r.d, r.accuracy, r.accuracy_large, r.sgm_ratio, r.sgm_ratio_std, r.sgm_virtual_best
        )
        .unwrap();
    }
    out
}

// --- text persistence ---------------------------------------------------
//
// `model v1` is a line-oriented format: header, active feature names,
// preprocessor constants, then the regressor (coefficients, or one
// pre-order dump per tree). Floats print in Rust's shortest round-trip
// form, so save → load → save reproduces the bytes.

fn dump_node(tree: &Tree, at: usize, out: &mut String) {
    match &tree.nodes[at] {
        TreeNode::Leaf { value } => writeln!(out, "leaf {value}").unwrap(),
        TreeNode::Split { feature, threshold, decrease, left, right } => {
            writeln!(out, "split {feature} {threshold} {decrease}").unwrap();
            dump_node(tree, *left, out);
            dump_node(tree, *right, out);
        }
    }
}

fn dump_floats(out: &mut String, label: &str, values: &[f64]) {
    out.push_str(label);
    for v in values {
        write!(out, " {v}").unwrap();
    }
    out.push('\n');
}

impl Model {
    pub fn to_text(&self) -> String {
        let mut out = String::from("model v1\n");
        let kind = match self {
            Model::Linear(_) => "linear",
            Model::Forest(_) => "forest",
        };
        writeln!(out, "kind {kind}").unwrap();
        writeln!(out, "features {}", self.active_features().len()).unwrap();
        for name in self.active_features() {
            writeln!(out, "{name}").unwrap();
        }
        let prep = self.preprocessor();
        writeln!(out, "preprocessor rows {}", prep.fitted_rows).unwrap();
        dump_floats(&mut out, "impute", &prep.impute);
        dump_floats(&mut out, "mean", &prep.mean);
        dump_floats(&mut out, "stddev", &prep.stddev);
        out.push_str("flat");
        for &f in &prep.flat {
            out.push_str(if f { " 1" } else { " 0" });
        }
        out.push('\n');
        match self {
            Model::Linear(m) => {
                writeln!(out, "intercept {}", m.intercept).unwrap();
                dump_floats(&mut out, "coefficients", &m.coefficients);
            }
            Model::Forest(m) => {
                writeln!(out, "trees {} depth {} seed {}", m.trees.len(), m.max_depth, m.master_seed)
                    .unwrap();
                for tree in &m.trees {
                    out.push_str("tree\n");
                    dump_node(tree, 0, &mut out);
                }
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Model, MlError> {
        let mut reader = LineReader { lines: text.lines() };
        if reader.next("the version line")? != "model v1" {
            return Err(bad("first line must be `model v1`".into()));
        }
        let kind_line = reader.next("the kind line")?;
        let kind = kind_line
            .strip_prefix("kind ")
            .ok_or_else(|| bad(format!("wanted `kind ...`, got `{kind_line}`")))?
            .to_string();
        let count_line = reader.next("the feature count")?;
        let d: usize = count_line
            .strip_prefix("features ")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad(format!("wanted `features N`, got `{count_line}`")))?;
        let mut active = Vec::with_capacity(d);
        for _ in 0..d {
            active.push(reader.next("a feature name")?.to_string());
        }

        let rows_line = reader.next("the preprocessor header")?;
        let fitted_rows: usize = rows_line
            .strip_prefix("preprocessor rows ")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad(format!("wanted `preprocessor rows N`, got `{rows_line}`")))?;
        let impute = reader.floats("impute", d)?;
        let mean = reader.floats("mean", d)?;
        let stddev = reader.floats("stddev", d)?;
        let flat_line = reader.next("the flat line")?;
        let flat: Vec<bool> = flat_line
            .strip_prefix("flat")
            .ok_or_else(|| bad(format!("wanted `flat ...`, got `{flat_line}`")))?
            .split_whitespace()
            .map(|t| match t {
                "0" => Ok(false),
                "1" => Ok(true),
                other => Err(bad(format!("flat entries are 0/1, got `{other}`"))),
            })
            .collect::<Result<_, _>>()?;
        if flat.len() != d {
            return Err(bad(format!("flat: {} values for {} features", flat.len(), d)));
        }
        let preprocessor = Preprocessor { impute, mean, stddev, flat, fitted_rows };

        match kind.as_str() {
            "linear" => {
                let int_line = reader.next("the intercept")?;
                let intercept: f64 = int_line
                    .strip_prefix("intercept ")
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| bad(format!("wanted `intercept V`, got `{int_line}`")))?;
                let coefficients = reader.floats("coefficients", d)?;
                Ok(Model::Linear(LinearModel {
                    coefficients,
                    intercept,
                    active_features: active,
                    preprocessor,
                }))
            }
            "forest" => {
                let header = reader.next("the forest header")?.to_string();
                let mut toks = header.split_whitespace();
                let mut field = |key: &str| {
                    if toks.next() != Some(key) {
                        return Err(bad(format!("forest header: wanted `{key}` in `{header}`")));
                    }
                    toks.next()
                        .and_then(|t| t.parse::<u64>().ok())
                        .ok_or_else(|| bad(format!("forest header: bad value after `{key}`")))
                };
                let n_trees = field("trees")? as usize;
                let max_depth = field("depth")? as usize;
                let master_seed = field("seed")?;
                let mut trees = Vec::with_capacity(n_trees);
                for _ in 0..n_trees {
                    if reader.next("a tree marker")? != "tree" {
                        return Err(bad("wanted a `tree` marker".into()));
                    }
                    let mut nodes = Vec::new();
                    parse_node(&mut reader, &mut nodes, d)?;
                    trees.push(Tree { nodes });
                }
                Ok(Model::Forest(ForestModel {
                    trees,
                    n_trees,
                    max_depth,
                    master_seed,
                    active_features: active,
                    preprocessor,
                }))
            }
            other => Err(bad(format!("unknown model kind `{other}`"))),
        }
    }
}

fn bad(msg: String) -> MlError {
    MlError::ModelFormat(msg)
}

struct LineReader<'a> {
    lines: std::str::Lines<'a>,
}

impl<'a> LineReader<'a> {
    /// Next content line; `#` comment lines and blank lines are skipped so
    /// saved models may carry a leading provenance block.
    fn next(&mut self, what: &str) -> Result<&'a str, MlError> {
        for line in self.lines.by_ref() {
            let line = line.trim_end();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            return Ok(line);
        }
        Err(bad(format!("unexpected end of text, wanted {what}")))
    }

    /// A `<label> v v v...` line with exactly `want` values.
    fn floats(&mut self, label: &str, want: usize) -> Result<Vec<f64>, MlError> {
        let line = self.next(label)?;
        let rest = line
            .strip_prefix(label)
            .ok_or_else(|| bad(format!("wanted `{label} ...`, got `{line}`")))?;
        let vals: Vec<f64> = rest
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| bad(format!("{label}: {e}")))?;
        if vals.len() != want {
            return Err(bad(format!("{label}: {} values for {} features", vals.len(), want)));
        }
        Ok(vals)
    }
}

fn parse_node(
    reader: &mut LineReader<'_>,
    nodes: &mut Vec<TreeNode>,
    width: usize,
) -> Result<usize, MlError> {
    let line = reader.next("a tree node")?;
    let toks: Vec<&str> = line.split_whitespace().collect();
    match toks.as_slice() {
        ["leaf", v] => {
            let value = v.parse().map_err(|e| bad(format!("leaf value: {e}")))?;
            nodes.push(TreeNode::Leaf { value });
            Ok(nodes.len() - 1)
        }
        ["split", f, t, dec] => {
            let feature: usize = f.parse().map_err(|e| bad(format!("split feature: {e}")))?;
            if feature >= width {
                return Err(bad(format!("split feature {feature} out of range for width {width}")));
            }
            let threshold: f64 = t.parse().map_err(|e| bad(format!("split threshold: {e}")))?;
            let decrease: f64 = dec.parse().map_err(|e| bad(format!("split decrease: {e}")))?;
            let slot = nodes.len();
            nodes.push(TreeNode::Leaf { value: 0.0 });
            let left = parse_node(reader, nodes, width)?;
            let right = parse_node(reader, nodes, width)?;
            nodes[slot] = TreeNode::Split { feature, threshold, decrease, left, right };
            Ok(slot)
        }
        _ => Err(bad(format!("unrecognized tree line `{line}`"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bnb::SolveStatus;
    use crate::datagen::Provenance;
    use crate::features::FEATURE_COUNT;

    fn names(d: usize) -> Vec<String> {
        (0..d).map(|i| format!("f{i}")).collect()
    }

    fn plain_linear_fit(x: &[Vec<f64>], y: &[f64]) -> LinearModel {
        let d = x[0].len();
        fit_linear(x, y, names(d), Preprocessor::identity(d)).unwrap()
    }

    /// Independent oracle: Cholesky factorization of the normal equations,
    /// no pivoting, nothing shared with the shipped elimination path.
    fn cholesky_least_squares(x: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
        let d = x[0].len();
        let w = d + 1;
        let mut a = vec![vec![0.0; w]; w];
        let mut b = vec![0.0; w];
        for (row, &yi) in x.iter().zip(y) {
            let aug = |j: usize| if j < d { row[j] } else { 1.0 };
            for i in 0..w {
                for (j, av) in a[i].iter_mut().enumerate() {
                    *av += aug(i) * aug(j);
                }
                b[i] += aug(i) * yi;
            }
        }
        let mut l = vec![vec![0.0; w]; w];
        for i in 0..w {
            for j in 0..=i {
                let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
                if i == j {
                    l[i][j] = (a[i][i] - s).sqrt();
                } else {
                    l[i][j] = (a[i][j] - s) / l[j][j];
                }
            }
        }
        let mut z = vec![0.0; w];
        for i in 0..w {
            let s: f64 = (0..i).map(|k| l[i][k] * z[k]).sum();
            z[i] = (b[i] - s) / l[i][i];
        }
        let mut beta = vec![0.0; w];
        for i in (0..w).rev() {
            let s: f64 = (i + 1..w).map(|k| l[k][i] * beta[k]).sum();
            beta[i] = (z[i] - s) / l[i][i];
        }
        beta
    }

    fn random_system(r: &mut ChaCha8Rng, n: usize, d: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
        let x: Vec<Vec<f64>> =
            (0..n).map(|_| (0..d).map(|_| r.gen_range(-2.0..2.0)).collect()).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|row| {
                row.iter().enumerate().map(|(j, v)| (j as f64 - 1.5) * v).sum::<f64>()
                    + r.gen_range(-0.5..0.5)
            })
            .collect();
        (x, y)
    }

    #[test]
    fn line_fit_recovers_slope_and_intercept() {
        let x = vec![vec![0.0], vec![1.0], vec![2.0]];
        let y = vec![1.0, 3.0, 5.0];
        let m = plain_linear_fit(&x, &y);
        assert!((m.coefficients[0] - 2.0).abs() < 1e-9);
        assert!((m.intercept - 1.0).abs() < 1e-9);
    }

    #[test]
    fn least_squares_matches_a_cholesky_oracle() {
        let mut r = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..100 {
            let n = r.gen_range(10..40);
            let d = r.gen_range(1..=8);
            let (x, y) = random_system(&mut r, n, d);
            let m = plain_linear_fit(&x, &y);
            let oracle = cholesky_least_squares(&x, &y);
            for (j, (got, want)) in m.coefficients.iter().zip(&oracle).enumerate() {
                assert!((got - want).abs() <= 1e-8, "coefficient {j}: {got} vs {want}");
            }
            assert!((m.intercept - oracle[d]).abs() <= 1e-8);
        }
    }

    #[test]
    fn residuals_are_orthogonal_to_the_design() {
        let mut r = ChaCha8Rng::seed_from_u64(42);
        let (x, y) = random_system(&mut r, 30, 5);
        let m = plain_linear_fit(&x, &y);
        for j in 0..5 {
            let dot: f64 = x
                .iter()
                .zip(&y)
                .map(|(row, &yi)| row[j] * (yi - m.predict_row(row)))
                .sum();
            assert!(dot.abs() <= 1e-6, "column {j} correlates with the residual: {dot:e}");
        }
    }

    #[test]
    fn duplicated_column_engages_the_ridge_fallback() {
        // x1 == x2, y consistent with coefficient 3 on their sum direction
        let base = [0.0, 1.0, 2.0, 3.0, 4.5];
        let x: Vec<Vec<f64>> = base.iter().map(|&v| vec![v, v]).collect();
        let y: Vec<f64> = base.iter().map(|&v| 3.0 * v + 0.5).collect();
        let m = plain_linear_fit(&x, &y);
        for (row, &yi) in x.iter().zip(&y) {
            assert!((m.predict_row(row) - yi).abs() <= 1e-6);
        }
        // the ridge shares the weight between the clones
        assert!((m.coefficients[0] - m.coefficients[1]).abs() <= 1e-6);
    }

    #[test]
    fn empty_training_sets_are_rejected() {
        assert!(matches!(
            fit_linear(&[], &[], names(2), Preprocessor::identity(2)),
            Err(MlError::DegenerateData)
        ));
        assert!(matches!(
            fit_forest(
                &[],
                &[],
                &ForestConfig::default(),
                1,
                names(2),
                Preprocessor::identity(2)
            ),
            Err(MlError::DegenerateData)
        ));
    }

    fn random_forest_data(seed: u64, n: usize, d: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<Vec<f64>> =
            (0..n).map(|_| (0..d).map(|_| r.gen_range(-1.0..1.0)).collect()).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|row| row[0] * 2.0 + row[1].powi(2) + r.gen_range(-0.1..0.1))
            .collect();
        (x, y)
    }

    #[test]
    fn constant_labels_make_single_leaf_trees() {
        let x: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, -(i as f64)]).collect();
        let y = vec![2.5; 20];
        let m = fit_forest(&x, &y, &ForestConfig::default(), 9, names(2), Preprocessor::identity(2))
            .unwrap();
        for tree in &m.trees {
            assert_eq!(tree.nodes.len(), 1);
            assert_eq!(tree.nodes[0], TreeNode::Leaf { value: 2.5 });
        }
        assert_eq!(m.predict_row(&[0.3, 0.4]), 2.5);
    }

    #[test]
    fn forest_depth_never_exceeds_the_cap() {
        let (x, y) = random_forest_data(7, 120, 4);
        let cfg = ForestConfig::default();
        let m = fit_forest(&x, &y, &cfg, 13, names(4), Preprocessor::identity(4)).unwrap();
        let deepest = m.trees.iter().map(Tree::depth).max().unwrap();
        assert!(deepest <= cfg.max_depth, "saw a tree of depth {deepest}");
        // the data is rich enough that the cap actually binds somewhere
        assert_eq!(deepest, cfg.max_depth);
    }

    #[test]
    fn forest_fit_is_deterministic_in_the_seed() {
        let (x, y) = random_forest_data(8, 60, 3);
        let cfg = ForestConfig { n_trees: 20, ..ForestConfig::default() };
        let a = fit_forest(&x, &y, &cfg, 5, names(3), Preprocessor::identity(3)).unwrap();
        let b = fit_forest(&x, &y, &cfg, 5, names(3), Preprocessor::identity(3)).unwrap();
        assert_eq!(a, b);
        let c = fit_forest(&x, &y, &cfg, 6, names(3), Preprocessor::identity(3)).unwrap();
        let probes: Vec<Vec<f64>> = (0..25)
            .map(|i| vec![(i as f64) / 12.0 - 1.0, ((i * 7) % 25) as f64 / 12.0 - 1.0, 0.1])
            .collect();
        assert!(probes.iter().any(|p| a.predict_row(p) != c.predict_row(p)));
    }

    #[test]
    fn forest_prediction_averages_the_trees() {
        let (x, y) = random_forest_data(3, 80, 3);
        let m = fit_forest(
            &x,
            &y,
            &ForestConfig { n_trees: 15, ..ForestConfig::default() },
            2,
            names(3),
            Preprocessor::identity(3),
        )
        .unwrap();
        let probe = [0.2, -0.4, 0.9];
        let by_hand: f64 =
            m.trees.iter().map(|t| t.predict(&probe)).sum::<f64>() / m.trees.len() as f64;
        assert!((m.predict_row(&probe) - by_hand).abs() <= 1e-12);
    }

    #[test]
    fn mdi_scores_sum_to_one_and_skip_unused_features() {
        let (x, mut y) = random_forest_data(11, 100, 3);
        // feature 2 is constant: nothing can ever split on it
        let x: Vec<Vec<f64>> =
            x.into_iter().map(|mut row| { row[2] = 0.77; row }).collect();
        y[0] += 1.0;
        let m = Model::Forest(
            fit_forest(&x, &y, &ForestConfig::default(), 21, names(3), Preprocessor::identity(3))
                .unwrap(),
        );
        let ranking = importance(&m);
        let total: f64 = ranking.scores.iter().sum();
        assert!((total - 1.0).abs() <= 1e-9, "MDI total {total}");
        let idx = ranking.names.iter().position(|n| n == "f2").unwrap();
        assert_eq!(ranking.scores[idx], 0.0);
        assert_eq!(ranking.names[idx], *ranking.names.last().unwrap());
    }

    #[test]
    fn linear_importance_ranks_by_coefficient_magnitude() {
        let m = Model::Linear(LinearModel {
            coefficients: vec![3.0, 0.0, -4.0],
            intercept: 1.0,
            active_features: vec!["a".into(), "b".into(), "c".into()],
            preprocessor: Preprocessor::identity(3),
        });
        let ranking = importance(&m);
        assert_eq!(ranking.names, vec!["c", "a", "b"]);
        assert_eq!(ranking.scores, vec![4.0, 3.0, 0.0]);
    }

    #[test]
    fn aggregate_rankings_follows_the_positional_scores() {
        let r1 = ImportanceRanking {
            names: vec!["a".into(), "b".into(), "c".into()],
            scores: vec![3.0, 2.0, 1.0],
        };
        let r2 = ImportanceRanking {
            names: vec!["a".into(), "c".into(), "b".into()],
            scores: vec![5.0, 4.0, 3.0],
        };
        let agg = aggregate_rankings(&[r1.clone(), r2.clone()]).unwrap();
        assert_eq!(agg.names, vec!["a", "b", "c"]);
        assert_eq!(agg.scores, vec![0.0, 3.0, 3.0]);
        // input order is irrelevant
        assert_eq!(aggregate_rankings(&[r2.clone(), r1.clone()]).unwrap(), agg);
        // a lone ranking comes back unchanged in order
        let solo = aggregate_rankings(std::slice::from_ref(&r1)).unwrap();
        assert_eq!(solo.names, r1.names);
        // a hundred copies change the scores, not the order
        let many = aggregate_rankings(&vec![r1.clone(); 100]).unwrap();
        assert_eq!(many.names, r1.names);
        assert_eq!(many.scores, vec![0.0, 100.0, 200.0]);

        let other = ImportanceRanking {
            names: vec!["a".into(), "b".into(), "d".into()],
            scores: vec![1.0, 1.0, 1.0],
        };
        assert!(matches!(
            aggregate_rankings(&[r1, other]),
            Err(MlError::MismatchedFeatureSet)
        ));
    }

    fn raw_vector(values: [f64; FEATURE_COUNT]) -> RawFeatureVector {
        RawFeatureVector { values, missing: [false; FEATURE_COUNT], scaled: false }
    }

    fn labeled_row(id: &str, features: [f64; FEATURE_COUNT], label: f64) -> DataPoint {
        DataPoint {
            instance_id: id.to_string(),
            permutation_seed: 0,
            features: raw_vector(features),
            work_mixed: if label > 0.0 { 200 } else { 90 },
            work_preferint: if label > 0.0 { 90 } else { 200 },
            nodes_mixed: Some(5),
            nodes_preferint: Some(5),
            status_mixed: SolveStatus::Optimal,
            status_preferint: SolveStatus::Optimal,
            censored: false,
            label: Some(label),
        }
    }

    /// Rows whose feature 0 tracks the label almost perfectly while the
    /// rest is noise — the pipeline must find it.
    fn label_aligned_dataset(n: usize, seed: u64) -> Dataset {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let rows = (0..n)
            .map(|i| {
                let label = if i % 2 == 0 {
                    r.gen_range(0.05..1.0)
                } else {
                    r.gen_range(-1.0..-0.05)
                };
                let mut f = [0.0; FEATURE_COUNT];
                for v in f.iter_mut() {
                    *v = r.gen_range(0.0..1.0);
                }
                f[0] = label + r.gen_range(-0.02..0.02);
                labeled_row(&format!("row{i:03}"), f, label)
            })
            .collect();
        Dataset { rows, provenance: Provenance::default() }
    }

    #[test]
    fn the_pipeline_finds_a_label_aligned_feature() {
        let ds = label_aligned_dataset(60, 1234);
        let active: Vec<String> = FEATURE_NAMES.iter().map(|s| s.to_string()).collect();
        let mut rankings = Vec::new();
        for seed in 1..=5 {
            let outcome = run_seed(&ds, &active, ModelKind::Linear, seed).unwrap();
            assert!(
                outcome.report.overall_accuracy >= 0.9,
                "seed {seed}: accuracy {}",
                outcome.report.overall_accuracy
            );
            assert!(
                outcome.report.sgm_virtual_best_ratio <= outcome.report.sgm_predicted_ratio
            );
            rankings.push(outcome.ranking);
        }
        let agg = aggregate_rankings(&rankings).unwrap();
        assert_eq!(agg.names[0], FEATURE_NAMES[0]);
    }

    #[test]
    fn predictions_key_on_feature_names_not_positions() {
        let ds = label_aligned_dataset(40, 99);
        let active: Vec<String> = FEATURE_NAMES.iter().map(|s| s.to_string()).collect();
        let model = match train_model(&ds.rows, &active, ModelKind::Linear, 0).unwrap() {
            Model::Linear(m) => m,
            Model::Forest(_) => unreachable!(),
        };
        // permute the model's columns coherently; predictions must not move
        let perm: Vec<usize> = (0..FEATURE_COUNT).map(|i| (i * 5 + 3) % FEATURE_COUNT).collect();
        let pick = |v: &[f64]| perm.iter().map(|&i| v[i]).collect::<Vec<f64>>();
        let shuffled = Model::Linear(LinearModel {
            coefficients: pick(&model.coefficients),
            intercept: model.intercept,
            active_features: perm.iter().map(|&i| model.active_features[i].clone()).collect(),
            preprocessor: Preprocessor {
                impute: pick(&model.preprocessor.impute),
                mean: pick(&model.preprocessor.mean),
                stddev: pick(&model.preprocessor.stddev),
                flat: perm.iter().map(|&i| model.preprocessor.flat[i]).collect(),
                fitted_rows: model.preprocessor.fitted_rows,
            },
        });
        let model = Model::Linear(model);
        for p in &ds.rows[..10] {
            let a = predict(&model, &p.features).unwrap();
            let b = predict(&shuffled, &p.features).unwrap();
            assert!((a - b).abs() <= 1e-12);
        }

        let unknown = Model::Linear(LinearModel {
            coefficients: vec![1.0],
            intercept: 0.0,
            active_features: vec!["no_such_feature".into()],
            preprocessor: Preprocessor::identity(1),
        });
        assert!(matches!(
            predict(&unknown, &ds.rows[0].features),
            Err(MlError::MissingFeature(name)) if name == "no_such_feature"
        ));
    }

    #[test]
    fn rescaling_a_feature_does_not_change_decisions() {
        // scaling a column before preprocessor fitting is absorbed by the
        // z-score; a power-of-two factor commutes with rounding exactly
        let ds = label_aligned_dataset(50, 7);
        let active: Vec<String> = FEATURE_NAMES.iter().map(|s| s.to_string()).collect();
        let mut scaled_ds = ds.clone();
        for p in &mut scaled_ds.rows {
            p.features.values[3] *= 4.0;
        }
        let (a, b) = (
            train_model(&ds.rows, &active, ModelKind::Linear, 0).unwrap(),
            train_model(&scaled_ds.rows, &active, ModelKind::Linear, 0).unwrap(),
        );
        for (p, q) in ds.rows.iter().zip(&scaled_ds.rows) {
            let pa = predict(&a, &p.features).unwrap();
            let pb = predict(&b, &q.features).unwrap();
            assert_eq!(pa, pb, "power-of-two rescale must be exactly absorbed");
        }

        let mut odd_ds = ds.clone();
        for p in &mut odd_ds.rows {
            p.features.values[3] *= 3.0;
        }
        let c = train_model(&odd_ds.rows, &active, ModelKind::Linear, 0).unwrap();
        for (p, q) in ds.rows.iter().zip(&odd_ds.rows) {
            let pa = predict(&a, &p.features).unwrap();
            let pc = predict(&c, &q.features).unwrap();
            assert!((pa - pc).abs() <= 1e-9);
        }
    }

    #[test]
    fn model_text_round_trips() {
        let ds = label_aligned_dataset(45, 31);
        let active: Vec<String> = FEATURE_NAMES.iter().map(|s| s.to_string()).collect();
        for kind in [ModelKind::Linear, ModelKind::Forest] {
            let model = train_model(&ds.rows, &active, kind, 17).unwrap();
            let text = model.to_text();
            let back = Model::from_text(&text).unwrap();
            assert_eq!(back, model);
            assert_eq!(back.to_text(), text, "second serialization drifted");
            for p in &ds.rows[..8] {
                assert_eq!(
                    predict(&model, &p.features).unwrap(),
                    predict(&back, &p.features).unwrap()
                );
            }
            if kind == ModelKind::Forest {
                assert_eq!(importance(&model), importance(&back));
            }
        }

        assert!(matches!(Model::from_text("model v2\n"), Err(MlError::ModelFormat(_))));
        assert!(Model::from_text("model v1\nkind cubist\nfeatures 0\n").is_err());
    }

    #[test]
    fn reduction_walks_from_all_features_to_one() {
        let ds = label_aligned_dataset(36, 55);
        let rows = feature_reduction_experiment(&ds, ModelKind::Linear, &[1, 2]).unwrap();
        assert_eq!(rows.len(), FEATURE_COUNT);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.d, FEATURE_COUNT - i);
            assert_eq!(row.active.len(), row.d);
            match &row.dropped {
                Some(name) => {
                    assert!(row.active.contains(name));
                    assert!(!rows[i + 1].active.contains(name));
                }
                None => assert_eq!(row.d, 1),
            }
        }
        // the informative feature outlasts every noise column
        assert_eq!(rows.last().unwrap().active, vec![FEATURE_NAMES[0].to_string()]);

        // seed-averaged metrics are the plain mean of per-seed runs
        let active: Vec<String> = FEATURE_NAMES.iter().map(|s| s.to_string()).collect();
        let by_hand: f64 = [1u64, 2]
            .iter()
            .map(|&s| run_seed(&ds, &active, ModelKind::Linear, s).unwrap().report.overall_accuracy)
            .sum::<f64>()
            / 2.0;
        assert!((rows[0].accuracy - by_hand).abs() <= 1e-12);

        // spread across seeds is finite and zero only if both seeds agreed
        for row in &rows {
            assert!(row.sgm_ratio_std.is_finite() && row.sgm_ratio_std >= 0.0);
        }

        let csv = reduction_csv(&rows);
        assert_eq!(
            csv.lines().next().unwrap(),
            "d,acc,acc_large,sgm_ratio,sgm_ratio_std,sgm_virtual_best"
        );
        assert_eq!(csv.lines().count(), FEATURE_COUNT + 1);
    }

    #[test]
    fn reduction_is_thread_count_invariant() {
        let ds = label_aligned_dataset(30, 77);
        let run = |threads: usize| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| feature_reduction_experiment(&ds, ModelKind::Linear, &[1, 2, 3]))
                .unwrap()
        };
        assert_eq!(run(1), run(4));
    }
}
