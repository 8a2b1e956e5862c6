//! `minlplab` — command-line front door for the solver and the
//! rule-selection pipeline: generate corpora, measure datasets, train and
//! score selectors, run the feature-reduction sweep, and solve single
//! instances.
//!
//! Every file the tool writes starts with a `#` provenance block echoing the
//! tool version and the semantic configuration, so an artifact can be
//! regenerated from its own header. `--jobs` is deliberately absent from
//! those blocks: it only changes scheduling, never bytes.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::builder::TypedValueParser;
use clap::{Parser, Subcommand, ValueEnum};

use minlplab::bnb::{self, BranchRule, SolveStatus};
use minlplab::datagen::{
    self, corpus_plan, filter_dataset, gen_synthetic_text, generate_dataset, instance_name,
    read_csv, write_csv, Dataset, Family,
};
use minlplab::eval::{self, split, SGM_SHIFT};
use minlplab::features::FEATURE_NAMES;
use minlplab::instance::Instance;
use minlplab::ml::{self, Model, ModelKind};
use minlplab::presolve::presolve;

#[derive(Parser)]
#[command(name = "minlplab", version, about = "Branch-and-bound mini-solver and branching-rule selection pipeline", disable_help_subcommand = true)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum RuleArg {
    #[value(name = "preferint")]
    PreferInt,
    #[value(name = "mixed")]
    Mixed,
    #[value(name = "preferspatial")]
    PreferSpatial,
}

impl From<RuleArg> for BranchRule {
    fn from(r: RuleArg) -> BranchRule {
        match r {
            RuleArg::PreferInt => BranchRule::PreferInt,
            RuleArg::Mixed => BranchRule::Mixed,
            RuleArg::PreferSpatial => BranchRule::PreferSpatial,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    #[value(name = "linear")]
    Linear,
    #[value(name = "forest")]
    Forest,
}

impl KindArg {
    fn kind(self) -> ModelKind {
        match self {
            KindArg::Linear => ModelKind::Linear,
            KindArg::Forest => ModelKind::Forest,
        }
    }

    fn tag(self) -> &'static str {
        match self {
            KindArg::Linear => "linear",
            KindArg::Forest => "forest",
        }
    }
}

// Comma-list flags parse to newtypes: a plain `Vec` field would make clap
// treat the flag as repeatable instead of single-valued.

/// `all` or a comma-separated subset of `bk,cm,mq,bq`; order matters
/// because the corpus cycles through it.
#[derive(Clone)]
struct FamilyList(Vec<Family>);

fn parse_families(s: &str) -> Result<FamilyList, String> {
    if s == "all" {
        return Ok(FamilyList(Family::ALL.to_vec()));
    }
    let mut out = Vec::new();
    for tag in s.split(',') {
        let f = Family::from_tag(tag)
            .ok_or_else(|| format!("unknown family `{tag}` (known: bk, cm, mq, bq, or `all`)"))?;
        if out.contains(&f) {
            return Err(format!("family `{tag}` listed twice"));
        }
        out.push(f);
    }
    Ok(FamilyList(out))
}

/// `lo..hi`, both ends included.
#[derive(Clone)]
struct SeedRange(Vec<u64>);

fn parse_seed_range(s: &str) -> Result<SeedRange, String> {
    let (lo, hi) = s
        .split_once("..")
        .ok_or_else(|| format!("expected `lo..hi` (inclusive), got `{s}`"))?;
    let lo: u64 = lo.trim().parse().map_err(|_| format!("bad range start `{lo}`"))?;
    let hi: u64 = hi.trim().parse().map_err(|_| format!("bad range end `{hi}`"))?;
    if lo > hi {
        return Err(format!("empty range `{s}`"));
    }
    Ok(SeedRange((lo..=hi).collect()))
}

/// `all` or a comma-separated subset of the canonical feature names.
#[derive(Clone)]
struct FeatureList(Vec<String>);

fn parse_features(s: &str) -> Result<FeatureList, String> {
    if s == "all" {
        return Ok(FeatureList(FEATURE_NAMES.iter().map(|n| n.to_string()).collect()));
    }
    let mut out = Vec::new();
    for name in s.split(',') {
        if !FEATURE_NAMES.contains(&name) {
            return Err(format!("unknown feature `{name}` (see `--features all`)"));
        }
        if out.iter().any(|n| n == name) {
            return Err(format!("feature `{name}` listed twice"));
        }
        out.push(name.to_string());
    }
    Ok(FeatureList(out))
}

fn families_parser() -> impl TypedValueParser {
    clap::builder::StringValueParser::new().try_map(|s| parse_families(&s))
}

fn seeds_parser() -> impl TypedValueParser {
    clap::builder::StringValueParser::new().try_map(|s| parse_seed_range(&s))
}

fn features_parser() -> impl TypedValueParser {
    clap::builder::StringValueParser::new().try_map(|s| parse_features(&s))
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve one instance file under a branching rule and print the stats.
    Solve {
        /// Instance in `.minlp` form.
        file: PathBuf,
        #[arg(long, value_enum)]
        rule: RuleArg,
        /// Deterministic work budget (pivots + node surcharge).
        #[arg(long, default_value_t = 200_000)]
        work_limit: u64,
    },
    /// Write a deterministic synthetic corpus as one `.minlp` file per instance.
    GenCorpus {
        /// `all` or comma-separated family tags (`bk,cm,mq,bq`); the corpus
        /// cycles through them in the order given.
        #[arg(long, default_value = "all", value_parser = families_parser())]
        families: FamilyList,
        #[arg(long)]
        count: usize,
        /// Base seed; instance i uses seed+i.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory (created if missing).
        #[arg(long)]
        out: PathBuf,
    },
    /// Measure every corpus instance under both rules and write the labeled CSV.
    MakeDataset {
        /// Directory of `.minlp` files.
        #[arg(long)]
        corpus: PathBuf,
        /// Permutations per instance (seed 0 = the canonical ordering).
        #[arg(long, default_value_t = 2)]
        permutations: u64,
        #[arg(long, default_value_t = 200_000)]
        work_limit: u64,
        #[arg(long)]
        out: PathBuf,
        /// Worker threads (0 = rayon default). Output bytes do not depend on this.
        #[arg(long, default_value_t = 0)]
        jobs: usize,
    },
    /// Fit a label regressor on the full dataset and save it as text.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        model: KindArg,
        /// Forest bootstrap seed (ignored by linear models).
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// `all` or a comma-separated feature subset.
        #[arg(long, default_value = "all", value_parser = features_parser())]
        features: FeatureList,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a saved model on a dataset split and print the report table.
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        /// Model file written by `train`.
        #[arg(long)]
        model: PathBuf,
        /// Instance-level 80/20 split seed.
        #[arg(long, default_value_t = 0)]
        split_seed: u64,
    },
    /// Retrain while dropping the least important feature per level; write the curve.
    Reduce {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        model_kind: KindArg,
        /// Split seeds as `lo..hi`, both ends included.
        #[arg(long, default_value = "1..20", value_parser = seeds_parser())]
        seeds: SeedRange,
        #[arg(long)]
        out: PathBuf,
        /// Worker threads (0 = rayon default). Output bytes do not depend on this.
        #[arg(long, default_value_t = 0)]
        jobs: usize,
    },
    /// Solve a corpus under all three rules and report per-rule shifted
    /// geometric means of work.
    CompareRules {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 200_000)]
        work_limit: u64,
    },
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Usage problems land on stderr with exit 2; --help/--version
            // are not errors.
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp
                | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = run(cli.cmd) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Solve { file, rule, work_limit } => cmd_solve(&file, rule.into(), work_limit),
        Cmd::GenCorpus { families, count, seed, out } => {
            cmd_gen_corpus(&families.0, count, seed, &out)
        }
        Cmd::MakeDataset { corpus, permutations, work_limit, out, jobs } => with_jobs(jobs, || {
            cmd_make_dataset(&corpus, permutations, work_limit, &out)
        }),
        Cmd::Train { data, model, seed, features, out } => {
            cmd_train(&data, model, seed, &features.0, &out)
        }
        Cmd::Evaluate { data, model, split_seed } => cmd_evaluate(&data, &model, split_seed),
        Cmd::Reduce { data, model_kind, seeds, out, jobs } => {
            with_jobs(jobs, || cmd_reduce(&data, model_kind, &seeds.0, &out))
        }
        Cmd::CompareRules { corpus, work_limit } => cmd_compare_rules(&corpus, work_limit),
    }
}

/// Runs `f` in a dedicated rayon pool of `jobs` threads, or in the default
/// pool when `jobs` is 0.
fn with_jobs(jobs: usize, f: impl FnOnce() -> Result<()> + Send) -> Result<()> {
    if jobs == 0 {
        return f();
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .context("building worker pool")?
        .install(f)
}

/// `# minlplab <version>` plus one `# key: value` line per entry. Goes in
/// front of every written artifact; parsers on the read side skip `#` lines.
fn provenance(command: &str, entries: &[(&str, String)]) -> String {
    let mut s = format!("# minlplab {}\n# command: {command}\n", env!("CARGO_PKG_VERSION"));
    for (k, v) in entries {
        writeln!(s, "# {k}: {v}").unwrap();
    }
    s
}

fn status_str(s: SolveStatus) -> &'static str {
    match s {
        SolveStatus::Optimal => "OPTIMAL",
        SolveStatus::Infeasible => "INFEASIBLE",
        SolveStatus::WorkLimit => "WORK_LIMIT",
    }
}

fn rule_str(r: BranchRule) -> &'static str {
    match r {
        BranchRule::PreferInt => "preferint",
        BranchRule::Mixed => "mixed",
        BranchRule::PreferSpatial => "preferspatial",
    }
}

// ---------------------------------------------------------------------------
// subcommands

fn cmd_solve(file: &Path, rule: BranchRule, work_limit: u64) -> Result<()> {
    let text = std::fs::read_to_string(file)
        .with_context(|| format!("reading {}", file.display()))?;
    let inst = Instance::parse(&text)
        .with_context(|| format!("parsing {}", file.display()))?;
    println!("instance  {} ({} vars, {} lin, {} nl)", inst.name, inst.n(),
        inst.linear_constraints.len(), inst.nonlinear_constraints.len());
    println!("rule      {}", rule_str(rule));

    let pre = match presolve(&inst) {
        Ok((pre, _)) => pre,
        Err(e) => {
            // Bound propagation alone proved the instance empty.
            println!("status    INFEASIBLE ({e})");
            return Ok(());
        }
    };
    let stats = bnb::solve(&pre, rule, work_limit);
    println!("status    {}", status_str(stats.status));
    match stats.objective {
        Some(v) => println!("objective {v}"),
        None => println!("objective none"),
    }
    println!("work      {}", stats.work);
    println!("nodes     {}", stats.nodes);
    println!("root      {} cuts in {} rounds, {} pivots",
        stats.root.cuts_added.len(), stats.root.rounds, stats.root.total_pivots);
    println!("root sb   {} int viols, {} nonlin viols, {} spatial entities fixed, {} pivots",
        stats.sb.n_int_viols, stats.sb.n_nonlin_viols, stats.sb.spat_entities_fixed,
        stats.sb.sb_pivots);
    Ok(())
}

fn cmd_gen_corpus(families: &[Family], count: usize, seed: u64, out: &Path) -> Result<()> {
    if count == 0 {
        bail!("--count must be at least 1");
    }
    std::fs::create_dir_all(out)
        .with_context(|| format!("creating {}", out.display()))?;
    let family_tags =
        families.iter().map(|f| f.tag()).collect::<Vec<_>>().join(",");
    let config = [
        ("families", family_tags),
        ("count", count.to_string()),
        ("seed", seed.to_string()),
    ];
    for (family, size, inst_seed) in corpus_plan(families, count, seed) {
        let name = instance_name(family, size, inst_seed);
        let mut text = provenance("gen-corpus", &config);
        writeln!(text, "# this instance: family {} size {size} seed {inst_seed}", family.tag())
            .unwrap();
        text.push_str(&gen_synthetic_text(family, size, inst_seed));
        let path = out.join(format!("{name}.minlp"));
        std::fs::write(&path, text)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    println!("wrote {} instances to {}", count, out.display());
    Ok(())
}

/// Loads every `*.minlp` file in lexicographic order.
fn read_corpus(dir: &Path) -> Result<Vec<Instance>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading corpus dir {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "minlp"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        bail!("no .minlp files in {}", dir.display());
    }
    paths
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading {}", p.display()))?;
            Instance::parse(&text).with_context(|| format!("parsing {}", p.display()))
        })
        .collect()
}

fn cmd_make_dataset(corpus: &Path, permutations: u64, work_limit: u64, out: &Path) -> Result<()> {
    if permutations == 0 {
        bail!("--permutations must be at least 1");
    }
    let instances = read_corpus(corpus)?;
    let ids: Vec<&str> = instances.iter().map(|i| i.name.as_str()).collect();
    let raw = generate_dataset(&instances, permutations, work_limit);
    let (ds, counts) = filter_dataset(&raw)?;

    let header = provenance(
        "make-dataset",
        &[
            ("corpus", corpus.display().to_string()),
            ("instances", ids.join(" ")),
            ("permutations", permutations.to_string()),
            ("work-limit", work_limit.to_string()),
            (
                "rows",
                format!(
                    "{} kept, {} root-solved, {} at work limit both ways, {} skipped",
                    counts.kept, counts.root_solved, counts.both_work_limit,
                    ds.provenance.skipped.len()
                ),
            ),
        ],
    );
    let body = write_csv(&ds);
    std::fs::write(out, header + &body)
        .with_context(|| format!("writing {}", out.display()))?;
    println!(
        "measured {} instances x {} permutations: kept {} rows ({} root-solved, {} censored-out, {} presolve-skipped)",
        instances.len(), permutations, counts.kept, counts.root_solved,
        counts.both_work_limit, ds.provenance.skipped.len()
    );
    println!("wrote {}", out.display());
    Ok(())
}

/// Dataset file -> labeled rows, with the checks every consumer needs.
fn load_dataset(path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let ds = read_csv(&text).with_context(|| format!("parsing {}", path.display()))?;
    if ds.rows.iter().any(|p| p.label.is_none()) {
        bail!("{} holds unlabeled rows; regenerate it with make-dataset", path.display());
    }
    Ok(ds)
}

fn cmd_train(data: &Path, kind: KindArg, seed: u64, features: &[String], out: &Path) -> Result<()> {
    let ds = load_dataset(data)?;
    let model = ml::train_model(&ds.rows, features, kind.kind(), seed)?;
    let header = provenance(
        "train",
        &[
            ("data", data.display().to_string()),
            ("model", kind.tag().to_string()),
            ("seed", seed.to_string()),
            ("features", features.join(",")),
            ("training-rows", ds.rows.len().to_string()),
        ],
    );
    std::fs::write(out, header + &model.to_text())
        .with_context(|| format!("writing {}", out.display()))?;
    println!(
        "trained {} model on {} rows x {} features; wrote {}",
        kind.tag(), ds.rows.len(), features.len(), out.display()
    );
    Ok(())
}

fn cmd_evaluate(data: &Path, model_path: &Path, split_seed: u64) -> Result<()> {
    let ds = load_dataset(data)?;
    if ds.rows.len() < 5 {
        bail!("{} has {} rows; need at least 5 to split", data.display(), ds.rows.len());
    }
    let text = std::fs::read_to_string(model_path)
        .with_context(|| format!("reading {}", model_path.display()))?;
    let model = Model::from_text(&text)
        .with_context(|| format!("parsing {}", model_path.display()))?;
    let (train, test) = split(&ds, split_seed);
    let score = |rows: &[datagen::DataPoint]| -> Result<eval::EvalReport> {
        let predictions = ml::predict_rows(&model, rows)?;
        Ok(eval::evaluate(&predictions, rows, split_seed))
    };
    let train_report = score(&train.rows)?;
    let test_report = score(&test.rows)?;
    println!(
        "{} model from {}, {} rows, split seed {}",
        match model.kind() { ModelKind::Linear => "linear", ModelKind::Forest => "forest" },
        model_path.display(), ds.rows.len(), split_seed
    );
    print!("{}", eval::report_table(&train_report, &test_report));
    Ok(())
}

fn cmd_reduce(data: &Path, kind: KindArg, seeds: &[u64], out: &Path) -> Result<()> {
    let ds = load_dataset(data)?;
    if ds.rows.len() < 5 {
        bail!("{} has {} rows; need at least 5 to split", data.display(), ds.rows.len());
    }
    let rows = ml::feature_reduction_experiment(&ds, kind.kind(), seeds)?;
    let header = provenance(
        "reduce",
        &[
            ("data", data.display().to_string()),
            ("model-kind", kind.tag().to_string()),
            (
                "seeds",
                format!("{}..{}", seeds.first().unwrap(), seeds.last().unwrap()),
            ),
            ("rows", ds.rows.len().to_string()),
        ],
    );
    std::fs::write(out, header + &ml::reduction_csv(&rows))
        .with_context(|| format!("writing {}", out.display()))?;
    let full = &rows[0];
    println!(
        "reduction over {} seeds: d={} sgm_ratio {:.4} (std {:.4}) -> d=1 survivor {}",
        seeds.len(), full.d, full.sgm_ratio, full.sgm_ratio_std,
        rows.last().unwrap().active[0]
    );
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_compare_rules(corpus: &Path, work_limit: u64) -> Result<()> {
    let instances = read_corpus(corpus)?;
    let rules = [BranchRule::Mixed, BranchRule::PreferInt, BranchRule::PreferSpatial];
    let mut works: Vec<Vec<f64>> = vec![Vec::new(); rules.len()];
    let mut at_limit = [0usize; 3];
    let mut skipped = 0usize;
    for inst in &instances {
        let pre = match presolve(inst) {
            Ok((pre, _)) => pre,
            Err(_) => {
                skipped += 1;
                continue;
            }
        };
        for (k, &rule) in rules.iter().enumerate() {
            let stats = bnb::solve(&pre, rule, work_limit);
            works[k].push(stats.work as f64);
            if stats.status == SolveStatus::WorkLimit {
                at_limit[k] += 1;
            }
        }
    }
    if works[0].is_empty() {
        bail!("every instance in {} presolved to infeasible", corpus.display());
    }
    let sgms: Vec<f64> = works
        .iter()
        .map(|w| eval::sgm(w, SGM_SHIFT).expect("nonempty"))
        .collect();
    println!(
        "{} instances ({} skipped as infeasible), work limit {}",
        works[0].len(), skipped, work_limit
    );
    println!("{:<14} {:>12} {:>16} {:>9}", "rule", "sgm_work", "ratio_vs_mixed", "at_limit");
    for (k, &rule) in rules.iter().enumerate() {
        println!(
            "{:<14} {:>12.2} {:>16.4} {:>9}",
            rule_str(rule), sgms[k], sgms[k] / sgms[0], at_limit[k]
        );
    }
    Ok(())
}
