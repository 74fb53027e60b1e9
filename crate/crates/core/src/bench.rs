//! Experiment orchestration: configuration, the synthetic and UCI protocols,
//! and report emission.
//!
//! Both techniques see the same folds. For fold `f` the models are trained on
//! the training rows outside `f` and evaluated on the fixed test set, so every
//! technique contributes one envelope report per fold.
//!
//! Configuration is flat `key = value` text; the same keys are accepted as
//! command-line overrides. See [`ExperimentConfig::set`] for the key list.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::data::{load_csv, make_folds, stratified_holdout, CsvSchema, Dataset};
use crate::envelope::{self, Estimate, EnvelopeReport, SweepRow, VoteMatrix};
use crate::error::{Error, Result};
use crate::forest::{build_forest, ConvergenceTrace, ForestConfig};
use crate::mcmc::{
    posterior_path_summary, ChangeRule, McmcConfig, MoveProbs, MoveStats, PathSummary, PosteriorPredictor,
    RulePool, SplitPrior, TraceRow,
};
use crate::rng::{self, tag};
use crate::synth;

pub const SCHEMA_VERSION: u32 = 1;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Technique {
    Bayes,
    Forest,
    Both,
}

impl Technique {
    fn runs_bayes(self) -> bool {
        matches!(self, Technique::Bayes | Technique::Both)
    }

    fn runs_forest(self) -> bool {
        matches!(self, Technique::Forest | Technique::Both)
    }
}

/// Pruning factor: fixed, or chosen from the training-set size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PMin {
    Fixed(usize),
    /// 30 when the training set has more than `large_above` rows, else 5.
    Auto { large_above: usize },
}

impl PMin {
    pub fn resolve(self, train_rows: usize) -> usize {
        match self {
            PMin::Fixed(p) => p,
            PMin::Auto { large_above } => {
                if train_rows > large_above {
                    30
                } else {
                    5
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub technique: Technique,
    pub mcmc: McmcConfig,
    pub forest: ForestConfig,
    pub p_min: PMin,
    pub fold_count: usize,
    pub gamma0: f64,
    /// Seed for folds and model randomness.
    pub seed: u64,
    /// Seed of the synthetic train/test draw.
    pub data_seed: u64,
    pub sweep: bool,
    pub output_dir: PathBuf,
    /// Directory holding `<name>.csv` files for the UCI protocol.
    pub uci_dir: PathBuf,
    pub full_scale: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            technique: Technique::Both,
            mcmc: McmcConfig::desk_scale(),
            forest: ForestConfig::default(),
            p_min: PMin::Auto { large_above: 400 },
            fold_count: 5,
            gamma0: 0.99,
            seed: 1,
            data_seed: synth::CANONICAL_SEED,
            sweep: true,
            output_dir: PathBuf::from("out"),
            uci_dir: PathBuf::from("data/uci"),
            full_scale: false,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<f64>> {
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    pub fn full_scale() -> Self {
        let mut cfg = Self::default();
        cfg.set("scale", "full").expect("known key");
        cfg
    }

    /// Sets one key. Recognised keys:
    ///
    /// `technique` (bayes|forest|both), `scale` (desk|full), `folds`,
    /// `gamma0`, `seed`, `data_seed`, `sweep`, `p_min` (auto|N),
    /// `p_min_large_above`, `output_dir`, `uci_dir`, `mcmc.burn_in`,
    /// `mcmc.post_burn_in`, `mcmc.sample_rate`, `mcmc.restarts`,
    /// `mcmc.move_probs` (b,d,cs,cr), `mcmc.alpha` (comma list),
    /// `mcmc.split_prior` (uniform | depth:gamma,delta), `mcmc.max_leaves`,
    /// `mcmc.rule_pool` (observed|admissible), `mcmc.change_rule` (prior|local),
    /// `forest.trees`, `forest.top_k`, `forest.validation_fraction`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key.trim() {
            "technique" => {
                self.technique = match value {
                    "bayes" => Technique::Bayes,
                    "forest" => Technique::Forest,
                    "both" => Technique::Both,
                    _ => return Err(Error::Config(format!("technique: unknown {value:?}"))),
                }
            }
            "scale" => {
                let (burn_in, post_burn_in, restarts, full) = match value {
                    "desk" => (500, 500, 10, false),
                    "full" => (2000, 2000, 50, true),
                    _ => return Err(Error::Config(format!("scale: unknown {value:?}"))),
                };
                self.mcmc.burn_in = burn_in;
                self.mcmc.post_burn_in = post_burn_in;
                self.mcmc.restarts = restarts;
                self.full_scale = full;
            }
            "folds" => self.fold_count = parse(key, value)?,
            "gamma0" => self.gamma0 = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "data_seed" => self.data_seed = parse(key, value)?,
            "sweep" => self.sweep = parse(key, value)?,
            "p_min" => {
                self.p_min = if value == "auto" {
                    PMin::Auto { large_above: 400 }
                } else {
                    PMin::Fixed(parse(key, value)?)
                }
            }
            "p_min_large_above" => {
                self.p_min = PMin::Auto {
                    large_above: parse(key, value)?,
                }
            }
            "output_dir" => self.output_dir = PathBuf::from(value),
            "uci_dir" => self.uci_dir = PathBuf::from(value),
            "mcmc.burn_in" => self.mcmc.burn_in = parse(key, value)?,
            "mcmc.post_burn_in" => self.mcmc.post_burn_in = parse(key, value)?,
            "mcmc.sample_rate" => self.mcmc.sample_rate = parse(key, value)?,
            "mcmc.restarts" => self.mcmc.restarts = parse(key, value)?,
            "mcmc.move_probs" => {
                let p = parse_list(key, value)?;
                if p.len() != 4 {
                    return Err(Error::Config("mcmc.move_probs needs 4 values".into()));
                }
                self.mcmc.move_probs = MoveProbs {
                    birth: p[0],
                    death: p[1],
                    change_split: p[2],
                    change_rule: p[3],
                };
            }
            "mcmc.alpha" => self.mcmc.alpha = Some(parse_list(key, value)?),
            "mcmc.split_prior" => {
                self.mcmc.split_prior = if value == "uniform" {
                    SplitPrior::Uniform
                } else if let Some(rest) = value.strip_prefix("depth:") {
                    let p = parse_list(key, rest)?;
                    if p.len() != 2 {
                        return Err(Error::Config("depth prior needs gamma,delta".into()));
                    }
                    SplitPrior::DepthPenalty {
                        gamma: p[0],
                        delta: p[1],
                    }
                } else {
                    return Err(Error::Config(format!("mcmc.split_prior: unknown {value:?}")));
                }
            }
            "mcmc.max_leaves" => self.mcmc.max_leaves = Some(parse(key, value)?),
            "mcmc.change_rule" => {
                self.mcmc.change_rule = match value {
                    "prior" => ChangeRule::Prior,
                    "local" => ChangeRule::Local,
                    _ => return Err(Error::Config(format!("mcmc.change_rule: unknown {value:?}"))),
                }
            }
            "mcmc.rule_pool" => {
                self.mcmc.rule_pool = match value {
                    "observed" => RulePool::Observed,
                    "admissible" => RulePool::Admissible,
                    _ => return Err(Error::Config(format!("mcmc.rule_pool: unknown {value:?}"))),
                }
            }
            "forest.trees" => self.forest.tree_count = parse(key, value)?,
            "forest.top_k" => self.forest.top_k = parse(key, value)?,
            "forest.validation_fraction" => self.forest.validation_fraction = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("config line {}: expected key = value", i + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    /// Every setting as `key = value` pairs that [`Self::set`] reads back.
    pub fn to_pairs(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put(
            "technique",
            match self.technique {
                Technique::Bayes => "bayes",
                Technique::Forest => "forest",
                Technique::Both => "both",
            }
            .into(),
        );
        put("scale", if self.full_scale { "full" } else { "desk" }.into());
        put("folds", self.fold_count.to_string());
        put("gamma0", self.gamma0.to_string());
        put("seed", self.seed.to_string());
        put("data_seed", self.data_seed.to_string());
        put("sweep", self.sweep.to_string());
        match self.p_min {
            PMin::Fixed(p) => put("p_min", p.to_string()),
            PMin::Auto { large_above } => put("p_min_large_above", large_above.to_string()),
        }
        put("output_dir", self.output_dir.display().to_string());
        put("uci_dir", self.uci_dir.display().to_string());
        let mp = &self.mcmc.move_probs;
        put("mcmc.burn_in", self.mcmc.burn_in.to_string());
        put("mcmc.post_burn_in", self.mcmc.post_burn_in.to_string());
        put("mcmc.sample_rate", self.mcmc.sample_rate.to_string());
        put("mcmc.restarts", self.mcmc.restarts.to_string());
        put(
            "mcmc.move_probs",
            fmt_list(&[mp.birth, mp.death, mp.change_split, mp.change_rule]),
        );
        if let Some(a) = &self.mcmc.alpha {
            put("mcmc.alpha", fmt_list(a));
        }
        put(
            "mcmc.split_prior",
            match self.mcmc.split_prior {
                SplitPrior::Uniform => "uniform".into(),
                SplitPrior::DepthPenalty { gamma, delta } => format!("depth:{gamma},{delta}"),
            },
        );
        put(
            "mcmc.rule_pool",
            match self.mcmc.rule_pool {
                RulePool::Observed => "observed",
                RulePool::Admissible => "admissible",
            }
            .into(),
        );
        put(
            "mcmc.change_rule",
            match self.mcmc.change_rule {
                ChangeRule::Prior => "prior",
                ChangeRule::Local => "local",
            }
            .into(),
        );
        if let Some(k) = self.mcmc.max_leaves {
            put("mcmc.max_leaves", k.to_string());
        }
        put("forest.trees", self.forest.tree_count.to_string());
        put("forest.top_k", self.forest.top_k.to_string());
        put(
            "forest.validation_fraction",
            self.forest.validation_fraction.to_string(),
        );
        m
    }

    pub fn to_text(&self) -> String {
        self.to_pairs()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.fold_count < 2 {
            return Err(Error::Config("folds must be >= 2".into()));
        }
        if !(self.gamma0 > 0.0 && self.gamma0 <= 1.0) {
            return Err(Error::Config(format!("gamma0 {} not in (0, 1]", self.gamma0)));
        }
        self.forest.validate()
    }

    fn check_gamma0(&self, class_count: usize) -> Result<()> {
        let floor = 1.0 / class_count as f64;
        if !(self.gamma0 > floor && self.gamma0 <= 1.0) {
            return Err(Error::Config(format!(
                "gamma0 {} not in (1/{class_count}, 1]",
                self.gamma0
            )));
        }
        Ok(())
    }
}

/// Bayesian results on one fold.
#[derive(Debug, Clone)]
pub struct BayesFold {
    pub report: EnvelopeReport,
    pub votes: VoteMatrix,
    pub stats: MoveStats,
    /// Per-chain traces, tagged with the chain index.
    pub traces: Vec<(usize, Vec<TraceRow>)>,
    pub paths: PathSummary,
    pub post_burn_in_log_lik_mean: f64,
    pub warnings: Vec<String>,
}

/// Forest results on one fold.
#[derive(Debug, Clone)]
pub struct ForestFold {
    pub report: EnvelopeReport,
    pub votes: VoteMatrix,
    pub trace: ConvergenceTrace,
    pub split_counts: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct DatasetOutcome {
    pub name: String,
    pub train_rows: usize,
    pub test_rows: usize,
    pub class_count: usize,
    pub feature_count: usize,
    pub p_min: usize,
    pub bayes: Vec<BayesFold>,
    pub forest: Vec<ForestFold>,
}

fn aggregate_or_single(reports: &[EnvelopeReport]) -> Result<EnvelopeReport> {
    match reports {
        [] => Err(Error::Config("no reports to aggregate".into())),
        [one] => Ok(one.clone()),
        many => envelope::aggregate(many),
    }
}

impl DatasetOutcome {
    pub fn bayes_aggregate(&self) -> Option<EnvelopeReport> {
        let r: Vec<_> = self.bayes.iter().map(|f| f.report.clone()).collect();
        aggregate_or_single(&r).ok()
    }

    pub fn forest_aggregate(&self) -> Option<EnvelopeReport> {
        let r: Vec<_> = self.forest.iter().map(|f| f.report.clone()).collect();
        aggregate_or_single(&r).ok()
    }

    /// Mean Bayesian split count over mean forest split count.
    pub fn size_ratio(&self) -> Option<f64> {
        let b = self.bayes_aggregate()?.tree_size?.mean;
        let f = self.forest_aggregate()?.tree_size?.mean;
        (f > 0.0).then(|| b / f)
    }

    pub fn bayes_stats(&self) -> MoveStats {
        let mut s = MoveStats::default();
        for f in &self.bayes {
            s.merge(&f.stats);
        }
        s
    }

    pub fn sweep(&self, bayes: bool) -> Result<Vec<SweepRow>> {
        let vms: Vec<VoteMatrix> = if bayes {
            self.bayes.iter().map(|f| f.votes.clone()).collect()
        } else {
            self.forest.iter().map(|f| f.votes.clone()).collect()
        };
        envelope::sweep(&vms, &envelope::default_grid())
    }
}

/// Fold-level model seeds, independent per technique and fold.
pub fn model_seed(seed: u64, technique_tag: u64, fold: usize) -> u64 {
    rng::derive_seed(rng::derive_seed(seed, technique_tag), fold as u64)
}

/// Runs the configured techniques over paired folds of `train`, evaluating on `test`.
pub fn run_dataset(name: &str, train: &Dataset, test: &Dataset, cfg: &ExperimentConfig) -> Result<DatasetOutcome> {
    cfg.validate()?;
    cfg.check_gamma0(train.class_count())?;
    let plan = make_folds(train, cfg.fold_count, rng::derive_seed(cfg.seed, tag::FOLDS))?;
    let p_min = cfg.p_min.resolve(train.n());
    let alpha = cfg.mcmc.alpha_for(train.class_count());

    let folds: Vec<(Option<BayesFold>, Option<ForestFold>)> = (0..cfg.fold_count)
        .into_par_iter()
        .map(|f| -> Result<_> {
            let fold_train = train.subset(&plan.train(f));
            let bayes = if cfg.technique.runs_bayes() {
                let mcmc = McmcConfig {
                    p_min,
                    seed: model_seed(cfg.seed, tag::BAYES, f),
                    ..cfg.mcmc.clone()
                };
                let run = crate::mcmc::run_restarts(&fold_train, &mcmc)?;
                let predictor = PosteriorPredictor::new(&run.samples, &alpha)?;
                let (probs, votes) = predictor.predict_dataset(test);
                let sizes: Vec<usize> = run.samples.iter().map(|s| s.tree.split_count()).collect();
                let report = envelope::evaluate(&votes, cfg.gamma0)
                    .with_tree_sizes(&sizes)
                    .with_soft_predictions(&probs, test.labels());
                Some(BayesFold {
                    report,
                    votes,
                    stats: run.stats(),
                    paths: posterior_path_summary(&run.samples)?,
                    post_burn_in_log_lik_mean: run.post_burn_in_log_lik_mean(mcmc.burn_in),
                    warnings: run.warnings().into_iter().map(String::from).collect(),
                    traces: run
                        .chains
                        .into_iter()
                        .map(|c| (c.run_index, c.trace))
                        .collect(),
                })
            } else {
                None
            };
            let forest = if cfg.technique.runs_forest() {
                let fc = ForestConfig {
                    p_min,
                    seed: model_seed(cfg.seed, tag::FOREST, f),
                    ..cfg.forest.clone()
                };
                let (forest, trace) = build_forest(&fold_train, test, &fc, &alpha)?;
                let (probs, votes) = forest.predict_dataset(test);
                let split_counts = forest.split_counts();
                let report = envelope::evaluate(&votes, cfg.gamma0)
                    .with_tree_sizes(&split_counts)
                    .with_soft_predictions(&probs, test.labels());
                Some(ForestFold {
                    report,
                    votes,
                    trace,
                    split_counts,
                })
            } else {
                None
            };
            Ok((bayes, forest))
        })
        .collect::<Result<_>>()?;

    let (bayes, forest): (Vec<_>, Vec<_>) = folds.into_iter().unzip();
    Ok(DatasetOutcome {
        name: name.to_string(),
        train_rows: train.n(),
        test_rows: test.n(),
        class_count: train.class_count(),
        feature_count: train.m(),
        p_min,
        bayes: bayes.into_iter().flatten().collect(),
        forest: forest.into_iter().flatten().collect(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub schema_version: u32,
    pub protocol: String,
    pub config: BTreeMap<String, String>,
    pub artifacts: Vec<String>,
    pub stage_seconds: BTreeMap<String, f64>,
    pub notices: Vec<String>,
}

impl RunManifest {
    fn new(protocol: &str, cfg: &ExperimentConfig) -> Self {
        Self {
            tool_version: TOOL_VERSION.to_string(),
            schema_version: SCHEMA_VERSION,
            protocol: protocol.to_string(),
            config: cfg.to_pairs(),
            artifacts: Vec::new(),
            stage_seconds: BTreeMap::new(),
            notices: Vec::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchRun {
    pub manifest: RunManifest,
    pub datasets: Vec<DatasetOutcome>,
    pub sweep: bool,
}

/// Canonical 250/1000 synthetic split, both techniques over paired folds.
pub fn run_synthetic_protocol(cfg: &ExperimentConfig) -> Result<BenchRun> {
    let mut manifest = RunManifest::new("synthetic", cfg);
    let t0 = Instant::now();
    let (train, test) = synth::canonical_split_with_seed(cfg.data_seed);
    manifest
        .stage_seconds
        .insert("generate".into(), t0.elapsed().as_secs_f64());
    let t1 = Instant::now();
    let outcome = run_dataset("synthetic", &train, &test, cfg)?;
    manifest
        .stage_seconds
        .insert("synthetic".into(), t1.elapsed().as_secs_f64());
    Ok(BenchRun {
        manifest,
        datasets: vec![outcome],
        sweep: cfg.sweep,
    })
}

/// A UCI problem with its train/test sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UciProblem {
    pub name: &'static str,
    pub classes: usize,
    pub features: usize,
    pub train: usize,
    pub test: usize,
}

pub const UCI_PROBLEMS: [UciProblem; 7] = [
    UciProblem { name: "ionosphere", classes: 2, features: 33, train: 200, test: 151 },
    UciProblem { name: "wisconsin", classes: 2, features: 9, train: 455, test: 228 },
    UciProblem { name: "image", classes: 7, features: 19, train: 210, test: 2100 },
    UciProblem { name: "votes", classes: 2, features: 16, train: 391, test: 44 },
    UciProblem { name: "sonar", classes: 2, features: 60, train: 138, test: 70 },
    UciProblem { name: "vehicle", classes: 4, features: 18, train: 564, test: 282 },
    UciProblem { name: "pima", classes: 2, features: 8, train: 512, test: 256 },
];

/// Splits `ds` into a training and a test set of the problem's sizes, or
/// holds out `test` rows when the row count differs.
pub fn uci_split(ds: &Dataset, problem: &UciProblem, seed: u64) -> Result<(Dataset, Dataset)> {
    let all: Vec<usize> = (0..ds.n()).collect();
    let split = stratified_holdout(ds, &all, problem.test.min(ds.n().saturating_sub(1)), seed)?;
    let train_rows = if split.train.len() > problem.train {
        // Keep exactly the listed training size.
        stratified_holdout(ds, &split.train, split.train.len() - problem.train, seed ^ 1)?.train
    } else {
        split.train
    };
    Ok((ds.subset(&train_rows), ds.subset(&split.holdout)))
}

/// Runs every UCI problem whose CSV is present in `cfg.uci_dir`.
pub fn run_uci_protocol(cfg: &ExperimentConfig) -> Result<BenchRun> {
    let mut manifest = RunManifest::new("uci", cfg);
    let mut datasets = Vec::new();
    for problem in &UCI_PROBLEMS {
        let path = cfg.uci_dir.join(format!("{}.csv", problem.name));
        if !path.exists() {
            manifest
                .notices
                .push(format!("skipped {}: {} not found", problem.name, path.display()));
            continue;
        }
        let schema_path = cfg.uci_dir.join(format!("{}.schema", problem.name));
        let schema = if schema_path.exists() {
            CsvSchema::from_file(&schema_path)?
        } else {
            CsvSchema::default()
        };
        let t = Instant::now();
        let ds = load_csv(&path, &schema)?;
        if ds.class_count() != problem.classes || ds.m() != problem.features {
            manifest.notices.push(format!(
                "{}: file has C={}, m={} (listed C={}, m={})",
                problem.name,
                ds.class_count(),
                ds.m(),
                problem.classes,
                problem.features
            ));
        }
        let (train, test) = uci_split(&ds, problem, rng::derive_seed(cfg.seed, tag::TEST_SPLIT))?;
        datasets.push(run_dataset(problem.name, &train, &test, cfg)?);
        manifest
            .stage_seconds
            .insert(problem.name.to_string(), t.elapsed().as_secs_f64());
    }
    Ok(BenchRun {
        manifest,
        datasets,
        sweep: cfg.sweep,
    })
}

#[derive(Serialize)]
struct BayesSummary<'a> {
    aggregate: EnvelopeReport,
    folds: Vec<&'a EnvelopeReport>,
    acceptance_rate: f64,
    post_burn_in_log_lik_mean: Estimate,
    distinct_trees_per_fold: Vec<usize>,
    warnings: Vec<&'a str>,
}

#[derive(Serialize)]
struct ForestSummary<'a> {
    aggregate: EnvelopeReport,
    folds: Vec<&'a EnvelopeReport>,
    best_validation_tree_accuracy: Estimate,
    final_ensemble_accuracy: Estimate,
}

#[derive(Serialize)]
struct DatasetSummary<'a> {
    name: &'a str,
    train_rows: usize,
    test_rows: usize,
    class_count: usize,
    feature_count: usize,
    p_min: usize,
    bayes: Option<BayesSummary<'a>>,
    forest: Option<ForestSummary<'a>>,
    size_ratio: Option<f64>,
}

#[derive(Serialize)]
struct Summary<'a> {
    schema: &'static str,
    schema_version: u32,
    protocol: &'a str,
    config: BTreeMap<&'a str, &'a str>,
    datasets: Vec<DatasetSummary<'a>>,
}

fn summarize(run: &BenchRun) -> Result<String> {
    let datasets = run
        .datasets
        .iter()
        .map(|d| DatasetSummary {
            name: &d.name,
            train_rows: d.train_rows,
            test_rows: d.test_rows,
            class_count: d.class_count,
            feature_count: d.feature_count,
            p_min: d.p_min,
            bayes: d.bayes_aggregate().map(|aggregate| BayesSummary {
                aggregate,
                folds: d.bayes.iter().map(|f| &f.report).collect(),
                acceptance_rate: d.bayes_stats().acceptance_rate(),
                post_burn_in_log_lik_mean: Estimate::from_values(
                    &d.bayes.iter().map(|f| f.post_burn_in_log_lik_mean).collect::<Vec<_>>(),
                ),
                distinct_trees_per_fold: d.bayes.iter().map(|f| f.paths.distinct_trees).collect(),
                warnings: d.bayes.iter().flat_map(|f| f.warnings.iter().map(String::as_str)).collect(),
            }),
            forest: d.forest_aggregate().map(|aggregate| ForestSummary {
                aggregate,
                folds: d.forest.iter().map(|f| &f.report).collect(),
                best_validation_tree_accuracy: Estimate::from_values(
                    &d.forest
                        .iter()
                        .map(|f| f.trace.best_validation_accuracy)
                        .collect::<Vec<_>>(),
                ),
                final_ensemble_accuracy: Estimate::from_values(
                    &d.forest
                        .iter()
                        .map(|f| *f.trace.ensemble_accuracy.last().unwrap_or(&0.0))
                        .collect::<Vec<_>>(),
                ),
            }),
            size_ratio: d.size_ratio(),
        })
        .collect();
    let summary = Summary {
        schema: "dtree-envelope/summary",
        schema_version: SCHEMA_VERSION,
        protocol: &run.manifest.protocol,
        // The output location is recorded in the manifest only, so moving a
        // run does not change its summary.
        config: run
            .manifest
            .config
            .iter()
            .filter(|(k, _)| k.as_str() != "output_dir")
            .map(|(k, v)| (k.as_str(), v.as_str()))
            .collect(),
        datasets,
    };
    let mut text = serde_json::to_string_pretty(&summary)
        .map_err(|e| Error::Config(format!("serializing summary: {e}")))?;
    text.push('\n');
    Ok(text)
}

fn fold_csv(reports: &[&EnvelopeReport]) -> String {
    let mut out = String::from("fold,accuracy,soft_accuracy,cc_rate,u_rate,ci_rate,size_mean,size_std\n");
    for (f, r) in reports.iter().enumerate() {
        let (sm, ss) = r.tree_size.map_or((f64::NAN, f64::NAN), |s| (s.mean, s.std));
        out.push_str(&format!(
            "{f},{},{},{},{},{},{sm},{ss}\n",
            r.accuracy.mean,
            r.soft_accuracy.map_or(f64::NAN, |s| s.mean),
            r.cc_rate.mean,
            r.u_rate.mean,
            r.ci_rate.mean
        ));
    }
    out
}

/// Per-restart MCMC trace (CSV), one row per recorded iteration.
pub fn trace_csv(traces: &[(usize, Vec<TraceRow>)]) -> String {
    let mut out = String::from("run,iteration,log_lik,split_count,move,valid,accepted\n");
    for (run, rows) in traces {
        for r in rows {
            out.push_str(&format!(
                "{run},{},{},{},{},{},{}\n",
                r.iteration,
                r.log_lik,
                r.split_count,
                r.kind,
                u8::from(r.valid),
                u8::from(r.accepted)
            ));
        }
    }
    out
}

/// Feature-path table (CSV) for a posterior summary.
pub fn paths_csv(paths: &PathSummary) -> String {
    let mut out = String::from("rank,path,split_count,count,weight\n");
    for (i, r) in paths.rows.iter().enumerate() {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            i + 1,
            r.path,
            r.split_count,
            r.count,
            r.weight
        ));
    }
    out
}

/// Split-count histogram (CSV).
pub fn histogram_csv(sizes: impl IntoIterator<Item = usize>) -> String {
    let mut h: BTreeMap<usize, usize> = BTreeMap::new();
    for s in sizes {
        *h.entry(s).or_insert(0) += 1;
    }
    let mut out = String::from("split_count,count\n");
    for (s, c) in h {
        out.push_str(&format!("{s},{c}\n"));
    }
    out
}

/// Writes the summary, per-fold tables, traces and sweeps under `dir`, then
/// `manifest.json` listing them. Everything except the manifest's timings is a
/// function of the configuration.
pub fn emit_report(run: &mut BenchRun, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files: Vec<(String, String)> = vec![("summary.json".into(), summarize(run)?)];
    for d in &run.datasets {
        let n = &d.name;
        if !d.bayes.is_empty() {
            let reports: Vec<_> = d.bayes.iter().map(|f| &f.report).collect();
            files.push((format!("{n}_bayes_folds.csv"), fold_csv(&reports)));
            for (f, fold) in d.bayes.iter().enumerate() {
                files.push((format!("{n}_bayes_trace_fold{f}.csv"), trace_csv(&fold.traces)));
                files.push((format!("{n}_bayes_paths_fold{f}.csv"), paths_csv(&fold.paths)));
                files.push((format!("{n}_bayes_votes_fold{f}.csv"), fold.votes.to_csv()));
            }
            files.push((
                format!("{n}_bayes_sizes.csv"),
                histogram_csv(d.bayes.iter().flat_map(|f| {
                    f.paths
                        .size_histogram
                        .iter()
                        .flat_map(|(&s, &c)| std::iter::repeat_n(s, c))
                })),
            ));
            if run.sweep {
                files.push((format!("{n}_bayes_sweep.csv"), envelope::sweep_csv(&d.sweep(true)?)));
            }
        }
        if !d.forest.is_empty() {
            let reports: Vec<_> = d.forest.iter().map(|f| &f.report).collect();
            files.push((format!("{n}_forest_folds.csv"), fold_csv(&reports)));
            for (f, fold) in d.forest.iter().enumerate() {
                files.push((format!("{n}_forest_convergence_fold{f}.csv"), fold.trace.to_csv()));
                files.push((format!("{n}_forest_votes_fold{f}.csv"), fold.votes.to_csv()));
            }
            files.push((
                format!("{n}_forest_sizes.csv"),
                histogram_csv(d.forest.iter().flat_map(|f| f.split_counts.iter().copied())),
            ));
            if run.sweep {
                files.push((format!("{n}_forest_sweep.csv"), envelope::sweep_csv(&d.sweep(false)?)));
            }
        }
    }
    let mut written = Vec::with_capacity(files.len() + 1);
    for (name, body) in &files {
        let path = dir.join(name);
        fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    run.manifest.artifacts = files.iter().map(|(n, _)| n.clone()).collect();
    let manifest = serde_json::to_string_pretty(&run.manifest)
        .map_err(|e| Error::Config(format!("serializing manifest: {e}")))?;
    let path = dir.join("manifest.json");
    fs::write(&path, manifest + "\n").map_err(|e| Error::io(&path, e))?;
    written.push(path);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trips_through_text() {
        let mut cfg = ExperimentConfig::default();
        cfg.apply_text(
            "technique = forest\nfolds = 3\nmcmc.move_probs = 0.2,0.2,0.1,0.5\n\
             mcmc.split_prior = depth:0.5,1\np_min = 7 # fixed\nforest.trees = 50\n",
        )
        .unwrap();
        assert_eq!(cfg.technique, Technique::Forest);
        assert_eq!(cfg.p_min, PMin::Fixed(7));
        let mut back = ExperimentConfig::default();
        back.apply_text(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn bad_config_keys() {
        let mut cfg = ExperimentConfig::default();
        assert!(cfg.set("nope", "1").unwrap_err().is_config());
        assert!(cfg.set("folds", "x").is_err());
        assert!(cfg.apply_text("folds 3").is_err());
    }

    #[test]
    fn full_scale_settings() {
        let cfg = ExperimentConfig::full_scale();
        assert_eq!(cfg.mcmc.restarts, 50);
        assert_eq!(cfg.mcmc.burn_in, 2000);
        assert_eq!(cfg.mcmc.post_burn_in, 2000);
        assert_eq!(cfg.forest.tree_count, 200);
    }

    #[test]
    fn p_min_rule() {
        let auto = PMin::Auto { large_above: 400 };
        assert_eq!(auto.resolve(250), 5);
        assert_eq!(auto.resolve(455), 30);
        assert_eq!(PMin::Fixed(3).resolve(1000), 3);
    }

    #[test]
    fn uci_sizes_honoured() {
        let n = 208;
        let rows: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64]).collect();
        let labels = (0..n).map(|i| i % 2).collect();
        let ds = Dataset::from_rows(&rows, labels, 2).unwrap();
        let sonar = UCI_PROBLEMS.iter().find(|p| p.name == "sonar").unwrap();
        let (train, test) = uci_split(&ds, sonar, 4).unwrap();
        assert_eq!((train.n(), test.n()), (138, 70));
    }
}
