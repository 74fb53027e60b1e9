//! Reversible-jump Metropolis-Hastings over classification trees.
//!
//! The sampler walks the space of binary trees with four moves: birth (split
//! a leaf), death (merge a split whose children are both leaves),
//! change-split (redraw feature and threshold of a split) and change-rule
//! (redraw only the threshold). Split features are drawn uniformly and
//! thresholds uniformly from the distinct observed values at the node.
//!
//! Leaf class probabilities are integrated out under a Dirichlet prior, so a
//! tree is scored by its multinomial-Dirichlet marginal likelihood. Birth and
//! death carry the dimension-matching ratio
//!
//! ```text
//! birth k -> k+1:  (d / b) * (k / Q(new)) * (S_k / S_{k+1})
//! death k -> k-1:  (b / d) * (Q(old) / (k - 1)) * (S_k / S_{k-1})
//! ```
//!
//! with `Q` the number of splits whose children are both leaves, counted on
//! the larger tree of the pair, and `S_k` the Catalan number. The change
//! moves draw from the prior and have unit ratio.
//!
//! Rather than one long chain, [`run_restarts`] runs many short independent
//! chains from random single-split trees and pools their post-burn-in samples.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use statrs::function::gamma::ln_gamma;

use crate::data::Dataset;
use crate::envelope::VoteMatrix;
use crate::error::{Error, Result};
use crate::rng;
use crate::tree::{argmax, DecisionTree, Node, NodeId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum MoveKind {
    Birth,
    Death,
    ChangeSplit,
    ChangeRule,
}

impl MoveKind {
    pub const ALL: [MoveKind; 4] = [
        MoveKind::Birth,
        MoveKind::Death,
        MoveKind::ChangeSplit,
        MoveKind::ChangeRule,
    ];

    /// Position in [`MoveKind::ALL`].
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MoveKind::Birth => "birth",
            MoveKind::Death => "death",
            MoveKind::ChangeSplit => "change_split",
            MoveKind::ChangeRule => "change_rule",
        }
    }
}

impl fmt::Display for MoveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MoveProbs {
    pub birth: f64,
    pub death: f64,
    pub change_split: f64,
    pub change_rule: f64,
}

impl Default for MoveProbs {
    fn default() -> Self {
        Self {
            birth: 0.1,
            death: 0.1,
            change_split: 0.1,
            change_rule: 0.7,
        }
    }
}

impl MoveProbs {
    pub fn of(&self, kind: MoveKind) -> f64 {
        match kind {
            MoveKind::Birth => self.birth,
            MoveKind::Death => self.death,
            MoveKind::ChangeSplit => self.change_split,
            MoveKind::ChangeRule => self.change_rule,
        }
    }

    fn validate(&self) -> Result<()> {
        let all = [self.birth, self.death, self.change_split, self.change_rule];
        if all.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
            return Err(Error::Config("move probabilities must be non-negative".into()));
        }
        let total: f64 = all.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("move probabilities sum to {total}, not 1")));
        }
        Ok(())
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> MoveKind {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for kind in MoveKind::ALL {
            acc += self.of(kind);
            if u < acc {
                return kind;
            }
        }
        // Rounding in the cumulative sum; fall back to the last move with mass.
        *MoveKind::ALL
            .iter()
            .rev()
            .find(|k| self.of(**k) > 0.0)
            .unwrap_or(&MoveKind::ChangeRule)
    }
}

/// Prior on where trees split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum SplitPrior {
    /// Every tree with the same number of leaves is equally likely.
    Uniform,
    /// A node at depth `d` splits with probability `gamma * (1 + d)^-delta`.
    DepthPenalty { gamma: f64, delta: f64 },
}

impl SplitPrior {
    fn split_probability(&self, depth: usize) -> f64 {
        match *self {
            SplitPrior::Uniform => 1.0,
            SplitPrior::DepthPenalty { gamma, delta } => gamma * (1.0 + depth as f64).powf(-delta),
        }
    }

    fn validate(&self) -> Result<()> {
        if let SplitPrior::DepthPenalty { gamma, delta } = *self {
            // The split probability is largest at the root.
            if !(gamma > 0.0 && gamma < 1.0) || !(delta >= 0.0) {
                return Err(Error::Config(format!(
                    "depth-penalty prior needs 0 < gamma < 1 and delta >= 0, got gamma={gamma}, delta={delta}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McmcConfig {
    pub move_probs: MoveProbs,
    pub burn_in: usize,
    pub post_burn_in: usize,
    pub sample_rate: usize,
    pub restarts: usize,
    /// Minimum training rows per leaf.
    pub p_min: usize,
    /// Dirichlet prior per class; `None` means all ones.
    pub alpha: Option<Vec<f64>>,
    pub split_prior: SplitPrior,
    /// Maximum leaf count; `None` means `n - 1`.
    pub max_leaves: Option<usize>,
    pub seed: u64,
    /// Drop the likelihood from the acceptance ratio, sampling the tree prior.
    pub prior_only: bool,
    pub rule_pool: RulePool,
    pub change_rule: ChangeRule,
}

/// How a change-rule move draws the new threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum ChangeRule {
    /// Uniformly from the node's rule pool.
    Prior,
    /// One step up or down the node's sorted rule pool, each with probability 1/2.
    #[default]
    Local,
}

/// Which thresholds a birth or change move draws from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum RulePool {
    /// Every distinct observed value at the node.
    #[default]
    Observed,
    /// Observed values leaving at least `p_min` rows on each side of the node.
    Admissible,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self::desk_scale()
    }
}

impl McmcConfig {
    /// 50 restarts of 2000 burn-in and 2000 post-burn-in iterations.
    pub fn full_scale() -> Self {
        Self {
            burn_in: 2000,
            post_burn_in: 2000,
            restarts: 50,
            ..Self::desk_scale()
        }
    }

    /// 10 restarts of 500 + 500 iterations.
    pub fn desk_scale() -> Self {
        Self {
            move_probs: MoveProbs::default(),
            burn_in: 500,
            post_burn_in: 500,
            sample_rate: 1,
            restarts: 10,
            p_min: 5,
            alpha: None,
            split_prior: SplitPrior::Uniform,
            max_leaves: None,
            seed: 1,
            prior_only: false,
            rule_pool: RulePool::default(),
            change_rule: ChangeRule::default(),
        }
    }

    pub fn alpha_for(&self, class_count: usize) -> Vec<f64> {
        self.alpha.clone().unwrap_or_else(|| vec![1.0; class_count])
    }

    pub fn max_leaves_for(&self, n: usize) -> usize {
        self.max_leaves.unwrap_or(n.saturating_sub(1)).max(1)
    }

    pub fn validate(&self, ds: &Dataset) -> Result<()> {
        self.move_probs.validate()?;
        self.split_prior.validate()?;
        if self.burn_in == 0 || self.post_burn_in == 0 {
            return Err(Error::Config("burn_in and post_burn_in must be >= 1".into()));
        }
        if self.sample_rate == 0 || self.restarts == 0 || self.p_min == 0 {
            return Err(Error::Config("sample_rate, restarts and p_min must be >= 1".into()));
        }
        if let Some(a) = &self.alpha {
            if a.len() != ds.class_count() || a.iter().any(|v| !(*v > 0.0)) {
                return Err(Error::Config(format!(
                    "alpha needs {} positive entries",
                    ds.class_count()
                )));
            }
        }
        if let Some(k) = self.max_leaves {
            if k == 0 || k > ds.n().saturating_sub(1).max(1) {
                return Err(Error::Config(format!(
                    "max_leaves must be in 1..={}",
                    ds.n().saturating_sub(1)
                )));
            }
        }
        Ok(())
    }
}

/// `ln S_k` for the Catalan number `S_k = C(2k, k) / (k + 1)`.
pub fn log_catalan(k: usize) -> f64 {
    assert!(k >= 1, "Catalan index must be >= 1");
    let k = k as f64;
    ln_gamma(2.0 * k + 1.0) - 2.0 * ln_gamma(k + 1.0) - (k + 1.0).ln()
}

/// Multinomial-Dirichlet log marginal likelihood of the fitted leaf counts:
///
/// `k [lnΓ(Σα) − Σ lnΓ(α_j)] + Σ_leaves [Σ_j lnΓ(m_ij + α_j) − lnΓ(n_i + Σα)]`
pub fn log_marginal_likelihood(tree: &DecisionTree, alpha: &[f64]) -> Result<f64> {
    let alpha_sum: f64 = alpha.iter().sum();
    let normalizer = ln_gamma(alpha_sum) - alpha.iter().map(|&a| ln_gamma(a)).sum::<f64>();
    let mut total = 0.0;
    for node in tree.nodes() {
        if let Node::Leaf { counts } = node {
            if counts.len() != alpha.len() {
                return Err(Error::UnfittedTree(alpha.len()));
            }
            total += normalizer;
            let mut n = 0usize;
            for (&m, &a) in counts.iter().zip(alpha) {
                total += ln_gamma(m as f64 + a);
                n += m;
            }
            total -= ln_gamma(n as f64 + alpha_sum);
        }
    }
    Ok(total)
}

/// Sorted distinct values of `feature` among `rows`.
pub fn valid_rules(ds: &Dataset, rows: &[usize], feature: usize) -> Vec<f64> {
    let mut v: Vec<f64> = rows.iter().map(|&i| ds.value(i, feature)).collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct MoveStats {
    pub proposed: [u64; 4],
    pub accepted: [u64; 4],
}

impl MoveStats {
    fn record(&mut self, kind: MoveKind, accepted: bool) {
        self.proposed[kind.index()] += 1;
        if accepted {
            self.accepted[kind.index()] += 1;
        }
    }

    pub fn total_proposed(&self) -> u64 {
        self.proposed.iter().sum()
    }

    pub fn total_accepted(&self) -> u64 {
        self.accepted.iter().sum()
    }

    /// Accepted over proposed, invalid proposals included in the denominator.
    pub fn acceptance_rate(&self) -> f64 {
        let p = self.total_proposed();
        if p == 0 {
            0.0
        } else {
            self.total_accepted() as f64 / p as f64
        }
    }

    pub fn merge(&mut self, other: &MoveStats) {
        for i in 0..4 {
            self.proposed[i] += other.proposed[i];
            self.accepted[i] += other.accepted[i];
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub tree: Arc<DecisionTree>,
    pub log_lik: f64,
    pub stats: MoveStats,
}

impl ChainState {
    /// Fits `tree` to `ds` and scores it.
    pub fn new(tree: DecisionTree, ds: &Dataset, alpha: &[f64]) -> Result<Self> {
        let tree = tree.refit_counts(ds);
        let log_lik = log_marginal_likelihood(&tree, alpha)?;
        Ok(Self {
            tree: Arc::new(tree),
            log_lik,
            stats: MoveStats::default(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub kind: MoveKind,
    /// `None` when the move is impossible or breaks `p_min` / `max_leaves`.
    pub tree: Option<DecisionTree>,
    pub log_proposal_ratio: f64,
    pub log_prior_ratio: f64,
}

impl Proposal {
    fn invalid(kind: MoveKind) -> Self {
        Self {
            kind,
            tree: None,
            log_proposal_ratio: f64::NEG_INFINITY,
            log_prior_ratio: 0.0,
        }
    }
}

fn birth_ratio(cfg: &McmcConfig, k: usize, prunable_new: usize) -> f64 {
    let mp = &cfg.move_probs;
    (mp.death / mp.birth).ln() + (k as f64).ln() - (prunable_new as f64).ln() + log_catalan(k)
        - log_catalan(k + 1)
}

fn death_ratio(cfg: &McmcConfig, k: usize, prunable_old: usize) -> f64 {
    let mp = &cfg.move_probs;
    (mp.birth / mp.death).ln() + (prunable_old as f64).ln() - ((k - 1) as f64).ln() + log_catalan(k)
        - log_catalan(k - 1)
}

/// Split-prior log ratio for a birth at a leaf of depth `d`.
fn birth_prior_ratio(prior: &SplitPrior, depth: usize) -> f64 {
    match prior {
        SplitPrior::Uniform => 0.0,
        _ => {
            let p = |d| prior.split_probability(d);
            p(depth).ln() + 2.0 * (1.0 - p(depth + 1)).ln() - (1.0 - p(depth)).ln()
        }
    }
}

/// Depth of the leaf that `larger` splits relative to `smaller`, if the two
/// trees differ by exactly one birth.
fn birth_site(smaller: &DecisionTree, larger: &DecisionTree) -> Option<usize> {
    fn walk(
        a: &DecisionTree,
        ai: NodeId,
        b: &DecisionTree,
        bi: NodeId,
        depth: usize,
        site: &mut Option<usize>,
    ) -> bool {
        match (a.node(ai), b.node(bi)) {
            (Node::Leaf { .. }, Node::Leaf { .. }) => true,
            (Node::Leaf { .. }, &Node::Split { left, right, .. }) => {
                let fresh = b.node(left).is_leaf() && b.node(right).is_leaf();
                if fresh && site.is_none() {
                    *site = Some(depth);
                    true
                } else {
                    false
                }
            }
            (
                &Node::Split {
                    feature: fa,
                    threshold: ta,
                    left: la,
                    right: ra,
                },
                &Node::Split {
                    feature: fb,
                    threshold: tb,
                    left: lb,
                    right: rb,
                },
            ) => {
                fa == fb
                    && ta == tb
                    && walk(a, la, b, lb, depth + 1, site)
                    && walk(a, ra, b, rb, depth + 1, site)
            }
            (Node::Split { .. }, Node::Leaf { .. }) => false,
        }
    }
    let mut site = None;
    let same_shape_apart_from_site = walk(smaller, smaller.root(), larger, larger.root(), 0, &mut site);
    if same_shape_apart_from_site {
        site
    } else {
        None
    }
}

fn same_shape(a: &DecisionTree, b: &DecisionTree) -> bool {
    let shape = |t: &DecisionTree| -> Vec<bool> { t.nodes().iter().map(Node::is_leaf).collect() };
    shape(a) == shape(b)
}

/// Log proposal ratio of a move from `old` to `new`.
pub fn proposal_log_ratio(
    kind: MoveKind,
    old: &DecisionTree,
    new: &DecisionTree,
    cfg: &McmcConfig,
) -> Result<f64> {
    let k = old.leaf_count();
    match kind {
        MoveKind::Birth => {
            birth_site(old, new).ok_or(Error::InconsistentMove("birth"))?;
            Ok(birth_ratio(cfg, k, new.prunable_splits()))
        }
        MoveKind::Death => {
            birth_site(new, old).ok_or(Error::InconsistentMove("death"))?;
            Ok(death_ratio(cfg, k, old.prunable_splits()))
        }
        MoveKind::ChangeSplit | MoveKind::ChangeRule => {
            if !same_shape(old, new) {
                return Err(Error::InconsistentMove("change"));
            }
            Ok(0.0)
        }
    }
}

/// Log ratio of the split-position prior between `new` and `old`.
pub fn split_prior_log_ratio(
    kind: MoveKind,
    old: &DecisionTree,
    new: &DecisionTree,
    cfg: &McmcConfig,
) -> Result<f64> {
    cfg.split_prior.validate()?;
    match kind {
        MoveKind::Birth => {
            let d = birth_site(old, new).ok_or(Error::InconsistentMove("birth"))?;
            Ok(birth_prior_ratio(&cfg.split_prior, d))
        }
        MoveKind::Death => {
            let d = birth_site(new, old).ok_or(Error::InconsistentMove("death"))?;
            Ok(-birth_prior_ratio(&cfg.split_prior, d))
        }
        MoveKind::ChangeSplit | MoveKind::ChangeRule => {
            if !same_shape(old, new) {
                return Err(Error::InconsistentMove("change"));
            }
            Ok(0.0)
        }
    }
}

fn pick<R: Rng + ?Sized, T: Copy>(rng: &mut R, items: &[T]) -> T {
    items[rng.random_range(0..items.len())]
}

/// Draws a move and builds the proposed tree, refitted to `ds`.
pub fn propose_move<R: Rng + ?Sized>(
    state: &ChainState,
    ds: &Dataset,
    cfg: &McmcConfig,
    rng: &mut R,
) -> Proposal {
    let kind = cfg.move_probs.draw(rng);
    let tree = state.tree.as_ref();
    let k = tree.leaf_count();
    let m = ds.m();

    let (new_tree, log_q, log_p) = match kind {
        MoveKind::Birth => {
            if k + 1 > cfg.max_leaves_for(ds.n()) {
                return Proposal::invalid(kind);
            }
            let leaf = pick(rng, &tree.leaf_ids());
            let rows = &tree.node_rows(ds)[leaf];
            if rows.is_empty() {
                return Proposal::invalid(kind);
            }
            let feature = rng.random_range(0..m);
            let rules = rule_pool(ds, rows, feature, cfg);
            if rules.is_empty() {
                return Proposal::invalid(kind);
            }
            let threshold = pick(rng, &rules);
            let new = tree.split_leaf(leaf, feature, threshold).refit_counts(ds);
            let depth = tree.depths()[leaf];
            let q = birth_ratio(cfg, k, new.prunable_splits());
            (new, q, birth_prior_ratio(&cfg.split_prior, depth))
        }
        MoveKind::Death => {
            if k == 1 {
                return Proposal::invalid(kind);
            }
            let prunable = tree.prunable_ids();
            let split = pick(rng, &prunable);
            let depth = tree.depths()[split];
            let new = tree.collapse(split).refit_counts(ds);
            let q = death_ratio(cfg, k, prunable.len());
            (new, q, -birth_prior_ratio(&cfg.split_prior, depth))
        }
        MoveKind::ChangeSplit | MoveKind::ChangeRule => {
            if k == 1 {
                return Proposal::invalid(kind);
            }
            let split = pick(rng, &tree.split_ids());
            let Node::Split { feature: old_feature, .. } = *tree.node(split) else {
                unreachable!("split_ids yields splits")
            };
            let feature = if kind == MoveKind::ChangeSplit {
                rng.random_range(0..m)
            } else {
                old_feature
            };
            let rows = &tree.node_rows(ds)[split];
            let rules = rule_pool(ds, rows, feature, cfg);
            if rules.is_empty() {
                return Proposal::invalid(kind);
            }
            let threshold = if kind == MoveKind::ChangeRule && cfg.change_rule == ChangeRule::Local {
                let Node::Split { threshold: old, .. } = *tree.node(split) else {
                    unreachable!("split_ids yields splits")
                };
                // Reflection at the ends would break symmetry; stepping off is rejected.
                let at = rules.partition_point(|&t| t < old);
                let next = if rng.random::<bool>() {
                    at.checked_sub(1)
                } else {
                    Some(at + usize::from(rules.get(at) == Some(&old)))
                };
                match next.and_then(|i| rules.get(i)) {
                    Some(&t) => t,
                    None => return Proposal::invalid(kind),
                }
            } else {
                pick(rng, &rules)
            };
            (tree.with_rule(split, feature, threshold).refit_counts(ds), 0.0, 0.0)
        }
    };

    if new_tree.min_leaf_n() < cfg.p_min {
        return Proposal::invalid(kind);
    }
    Proposal {
        kind,
        tree: Some(new_tree),
        log_proposal_ratio: log_q,
        log_prior_ratio: log_p,
    }
}

/// Thresholds a move may draw for `feature` at a node holding `rows`.
pub fn rule_pool(ds: &Dataset, rows: &[usize], feature: usize, cfg: &McmcConfig) -> Vec<f64> {
    match cfg.rule_pool {
        RulePool::Observed => valid_rules(ds, rows, feature),
        RulePool::Admissible => admissible_rules(ds, rows, feature, cfg.p_min),
    }
}

/// Distinct observed values `t` with at least `p_min` rows on both sides of `x <= t`.
pub fn admissible_rules(ds: &Dataset, rows: &[usize], feature: usize, p_min: usize) -> Vec<f64> {
    let mut v: Vec<f64> = rows.iter().map(|&i| ds.value(i, feature)).collect();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let mut out = Vec::new();
    for (i, &t) in v.iter().enumerate() {
        let last_of_run = i + 1 == n || v[i + 1] != t;
        if last_of_run && i + 1 >= p_min && n - (i + 1) >= p_min {
            out.push(t);
        }
    }
    out
}

/// Outcome of one Metropolis-Hastings transition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepRecord {
    pub kind: MoveKind,
    pub valid: bool,
    pub accepted: bool,
}

/// One transition: propose, then accept with probability
/// `min(1, exp(Δ log-lik + log proposal ratio + log prior ratio))`.
pub fn mh_step<R: Rng + ?Sized>(
    state: &mut ChainState,
    ds: &Dataset,
    cfg: &McmcConfig,
    alpha: &[f64],
    rng: &mut R,
) -> StepRecord {
    let proposal = propose_move(state, ds, cfg, rng);
    let kind = proposal.kind;
    let Some(tree) = proposal.tree else {
        state.stats.record(kind, false);
        return StepRecord {
            kind,
            valid: false,
            accepted: false,
        };
    };
    let log_lik = log_marginal_likelihood(&tree, alpha).expect("proposal is refitted");
    let delta = if cfg.prior_only {
        0.0
    } else {
        log_lik - state.log_lik
    };
    let log_accept = delta + proposal.log_proposal_ratio + proposal.log_prior_ratio;
    let accepted = log_accept >= 0.0 || rng.random::<f64>().ln() < log_accept;
    if accepted {
        state.tree = Arc::new(tree);
        state.log_lik = log_lik;
    }
    state.stats.record(kind, accepted);
    StepRecord {
        kind,
        valid: true,
        accepted,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSample {
    pub tree: Arc<DecisionTree>,
    pub run_index: usize,
    pub iteration: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    /// 1-based iteration within the chain.
    pub iteration: usize,
    pub log_lik: f64,
    pub split_count: usize,
    pub kind: MoveKind,
    pub valid: bool,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainRun {
    pub run_index: usize,
    pub samples: Vec<PosteriorSample>,
    pub trace: Vec<TraceRow>,
    pub stats: MoveStats,
    /// Set when no split satisfies `p_min` and the chain stayed at the root.
    pub warning: Option<String>,
}

/// Random valid single-split tree: feature uniform, threshold uniform among
/// the observed values, restricted to splits leaving `p_min` rows per side.
fn initial_tree<R: Rng + ?Sized>(ds: &Dataset, cfg: &McmcConfig, rng: &mut R) -> Option<DecisionTree> {
    let all: Vec<usize> = (0..ds.n()).collect();
    let mut options: Vec<(usize, f64, f64)> = Vec::new();
    for feature in 0..ds.m() {
        let rules = valid_rules(ds, &all, feature);
        let weight = 1.0 / rules.len() as f64;
        let mut sorted: Vec<f64> = all.iter().map(|&i| ds.value(i, feature)).collect();
        sorted.sort_by(f64::total_cmp);
        for t in rules {
            let left = sorted.partition_point(|&v| v <= t);
            if left >= cfg.p_min && ds.n() - left >= cfg.p_min {
                options.push((feature, t, weight));
            }
        }
    }
    if options.is_empty() || cfg.max_leaves_for(ds.n()) < 2 {
        return None;
    }
    let total: f64 = options.iter().map(|o| o.2).sum();
    let mut u = rng.random::<f64>() * total;
    let mut chosen = options[options.len() - 1];
    for o in &options {
        if u < o.2 {
            chosen = *o;
            break;
        }
        u -= o.2;
    }
    Some(DecisionTree::leaf().split_leaf(0, chosen.0, chosen.1))
}

/// One chain of `burn_in + post_burn_in` transitions, keeping every
/// `sample_rate`-th post-burn-in tree.
pub fn run_chain(ds: &Dataset, cfg: &McmcConfig, run_index: usize, seed: u64) -> Result<ChainRun> {
    cfg.validate(ds)?;
    ds.require_all_classes()?;
    let alpha = cfg.alpha_for(ds.class_count());
    let mut rng = rng::stream(seed);
    let (start, warning) = match initial_tree(ds, cfg, &mut rng) {
        Some(t) => (t, None),
        None => (
            DecisionTree::leaf(),
            Some(format!(
                "no split leaves {} rows on both sides; using the root-only model",
                cfg.p_min
            )),
        ),
    };
    let mut state = ChainState::new(start, ds, &alpha)?;
    let total = cfg.burn_in + cfg.post_burn_in;
    let mut trace = Vec::with_capacity(total);
    let mut samples = Vec::with_capacity(cfg.post_burn_in / cfg.sample_rate + 1);
    for iteration in 1..=total {
        let step = mh_step(&mut state, ds, cfg, &alpha, &mut rng);
        trace.push(TraceRow {
            iteration,
            log_lik: state.log_lik,
            split_count: state.tree.split_count(),
            kind: step.kind,
            valid: step.valid,
            accepted: step.accepted,
        });
        if iteration > cfg.burn_in && (iteration - cfg.burn_in) % cfg.sample_rate == 0 {
            samples.push(PosteriorSample {
                tree: Arc::clone(&state.tree),
                run_index,
                iteration,
            });
        }
    }
    Ok(ChainRun {
        run_index,
        samples,
        trace,
        stats: state.stats,
        warning,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RestartRun {
    /// Pooled samples ordered by (run_index, iteration).
    pub samples: Vec<PosteriorSample>,
    /// Per-chain traces and statistics; `samples` is emptied here.
    pub chains: Vec<ChainRun>,
}

impl RestartRun {
    pub fn stats(&self) -> MoveStats {
        let mut s = MoveStats::default();
        for c in &self.chains {
            s.merge(&c.stats);
        }
        s
    }

    pub fn warnings(&self) -> Vec<&str> {
        self.chains.iter().filter_map(|c| c.warning.as_deref()).collect()
    }

    /// Mean post-burn-in log likelihood over all chains.
    pub fn post_burn_in_log_lik_mean(&self, burn_in: usize) -> f64 {
        let vals: Vec<f64> = self
            .chains
            .iter()
            .flat_map(|c| c.trace.iter().filter(|r| r.iteration > burn_in).map(|r| r.log_lik))
            .collect();
        vals.iter().sum::<f64>() / vals.len().max(1) as f64
    }
}

/// Seed of restart chain `run_index`.
pub fn chain_seed(seed: u64, run_index: usize) -> u64 {
    rng::derive_seed(seed, run_index as u64)
}

/// Independent short chains from random starts, run in parallel and pooled.
pub fn run_restarts(ds: &Dataset, cfg: &McmcConfig) -> Result<RestartRun> {
    cfg.validate(ds)?;
    let mut chains = (0..cfg.restarts)
        .into_par_iter()
        .map(|r| run_chain(ds, cfg, r, chain_seed(cfg.seed, r)))
        .collect::<Result<Vec<_>>>()?;
    let mut samples = Vec::with_capacity(chains.iter().map(|c| c.samples.len()).sum());
    for c in &mut chains {
        samples.append(&mut c.samples);
    }
    Ok(RestartRun { samples, chains })
}

/// Posterior samples collapsed into runs of identical trees.
#[derive(Debug, Clone)]
pub struct PosteriorPredictor {
    trees: Vec<(Arc<DecisionTree>, u64)>,
    total: u64,
    alpha: Vec<f64>,
}

impl PosteriorPredictor {
    pub fn new(samples: &[PosteriorSample], alpha: &[f64]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::NoSamples);
        }
        let mut trees: Vec<(Arc<DecisionTree>, u64)> = Vec::new();
        for s in samples {
            match trees.last_mut() {
                Some((t, w)) if Arc::ptr_eq(t, &s.tree) => *w += 1,
                _ => trees.push((Arc::clone(&s.tree), 1)),
            }
        }
        Ok(Self {
            trees,
            total: samples.len() as u64,
            alpha: alpha.to_vec(),
        })
    }

    pub fn sample_count(&self) -> u64 {
        self.total
    }

    /// Averaged leaf predictive probabilities and hard-label vote counts.
    pub fn predict(&self, point: &[f64]) -> (Vec<f64>, Vec<u64>) {
        let c = self.alpha.len();
        let mut probs = vec![0.0; c];
        let mut votes = vec![0u64; c];
        for (tree, w) in &self.trees {
            let p = tree.predict_proba(point, &self.alpha);
            for (acc, v) in probs.iter_mut().zip(&p) {
                *acc += *w as f64 * v;
            }
            votes[argmax(&p)] += w;
        }
        for p in &mut probs {
            *p /= self.total as f64;
        }
        (probs, votes)
    }

    /// Predictions for every row of `ds`, in parallel.
    pub fn predict_dataset(&self, ds: &Dataset) -> (Vec<Vec<f64>>, VoteMatrix) {
        let out: Vec<(Vec<f64>, Vec<u64>)> = (0..ds.n())
            .into_par_iter()
            .map(|i| self.predict(ds.row(i)))
            .collect();
        let (probs, votes): (Vec<_>, Vec<_>) = out.into_iter().unzip();
        let vm = VoteMatrix::new(votes, ds.labels().to_vec(), ds.class_count())
            .expect("vote rows sum to the sample count");
        (probs, vm)
    }
}

/// Posterior predictive at `point`: mean leaf probabilities and vote histogram.
pub fn predict_average(
    samples: &[PosteriorSample],
    point: &[f64],
    alpha: &[f64],
) -> Result<(Vec<f64>, Vec<u64>)> {
    Ok(PosteriorPredictor::new(samples, alpha)?.predict(point))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathRow {
    pub feature_path: Vec<usize>,
    pub path: String,
    pub split_count: usize,
    pub count: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathSummary {
    /// Sorted by weight descending, then path.
    pub rows: Vec<PathRow>,
    /// Samples per split count.
    pub size_histogram: BTreeMap<usize, usize>,
    pub distinct_trees: usize,
    pub total: usize,
}

/// Groups samples by the pre-order feature path of their splits.
pub fn posterior_path_summary(samples: &[PosteriorSample]) -> Result<PathSummary> {
    if samples.is_empty() {
        return Err(Error::NoSamples);
    }
    let mut groups: HashMap<Vec<usize>, usize> = HashMap::new();
    let mut size_histogram = BTreeMap::new();
    let mut distinct: HashSet<String> = HashSet::new();
    let mut last: Option<&Arc<DecisionTree>> = None;
    for s in samples {
        let summary = s.tree.summarize();
        *groups.entry(summary.feature_path).or_insert(0) += 1;
        *size_histogram.entry(summary.split_count).or_insert(0) += 1;
        if !last.is_some_and(|l| Arc::ptr_eq(l, &s.tree)) {
            distinct.insert(s.tree.to_text());
            last = Some(&s.tree);
        }
    }
    let total = samples.len();
    let mut rows: Vec<PathRow> = groups
        .into_iter()
        .map(|(feature_path, count)| {
            let summary = crate::tree::TreeSummary {
                split_count: feature_path.len(),
                leaf_count: feature_path.len() + 1,
                depth: 0,
                feature_path,
            };
            PathRow {
                path: summary.path_string(),
                split_count: summary.split_count,
                feature_path: summary.feature_path,
                count,
                weight: count as f64 / total as f64,
            }
        })
        .collect();
    rows.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.feature_path.cmp(&b.feature_path)));
    Ok(PathSummary {
        rows,
        size_histogram,
        distinct_trees: distinct.len(),
        total,
    })
}
