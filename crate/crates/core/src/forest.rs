//! Randomized decision-tree ensembles.
//!
//! Each tree is grown greedily, but at every node the split is drawn uniformly
//! from the `top_k` candidates with the highest information gain instead of
//! taking the best one. Diversity comes only from that draw: every tree sees
//! the same induction rows.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::data::{split_validation, Dataset};
use crate::envelope::VoteMatrix;
use crate::error::{Error, Result};
use crate::rng;
use crate::tree::{argmax, DecisionTree, Node};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ForestConfig {
    pub tree_count: usize,
    pub top_k: usize,
    pub p_min: usize,
    /// Share of the training rows held out to rank single trees.
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            tree_count: 200,
            top_k: 20,
            p_min: 5,
            validation_fraction: 0.3,
            seed: 1,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tree_count == 0 || self.top_k == 0 || self.p_min == 0 {
            return Err(Error::Config("tree_count, top_k and p_min must be >= 1".into()));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::Config("validation_fraction must be in (0,1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SplitCandidate {
    pub feature: usize,
    pub threshold: f64,
    /// Information gain in bits.
    pub gain: f64,
}

fn entropy_bits(counts: &[usize], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum()
}

/// All splits at midpoints between consecutive distinct values that leave at
/// least `p_min` rows on each side, best gain first. Ties go to the lower
/// feature, then the lower threshold. Pure nodes have no candidates.
pub fn candidate_splits(ds: &Dataset, rows: &[usize], p_min: usize) -> Vec<SplitCandidate> {
    let c = ds.class_count();
    let n = rows.len();
    let mut parent = vec![0usize; c];
    for &i in rows {
        parent[ds.label(i)] += 1;
    }
    if n < 2 || parent.iter().filter(|&&k| k > 0).count() < 2 {
        return Vec::new();
    }
    let h_parent = entropy_bits(&parent, n);
    let mut out = Vec::new();
    let mut sorted = rows.to_vec();
    for feature in 0..ds.m() {
        sorted.sort_by(|&a, &b| ds.value(a, feature).total_cmp(&ds.value(b, feature)));
        let mut left = vec![0usize; c];
        for pos in 0..n - 1 {
            left[ds.label(sorted[pos])] += 1;
            let here = ds.value(sorted[pos], feature);
            let next = ds.value(sorted[pos + 1], feature);
            if here == next {
                continue;
            }
            let nl = pos + 1;
            let nr = n - nl;
            if nl < p_min || nr < p_min {
                continue;
            }
            let right: Vec<usize> = parent.iter().zip(&left).map(|(p, l)| p - l).collect();
            let gain = h_parent
                - (nl as f64 / n as f64) * entropy_bits(&left, nl)
                - (nr as f64 / n as f64) * entropy_bits(&right, nr);
            out.push(SplitCandidate {
                feature,
                threshold: 0.5 * (here + next),
                gain,
            });
        }
    }
    out.sort_by(|a, b| {
        b.gain
            .total_cmp(&a.gain)
            .then(a.feature.cmp(&b.feature))
            .then(a.threshold.total_cmp(&b.threshold))
    });
    out
}

/// Grows one tree on `rows`, picking each split uniformly among the best
/// `top_k` candidates. A node becomes a leaf when it is pure, holds fewer than
/// `2 * p_min` rows, or has no candidate.
pub fn grow_randomized_tree<R: Rng + ?Sized>(
    ds: &Dataset,
    rows: &[usize],
    top_k: usize,
    p_min: usize,
    rng: &mut R,
) -> DecisionTree {
    let mut nodes = Vec::new();
    grow_node(ds, rows.to_vec(), top_k, p_min, rng, &mut nodes);
    DecisionTree::from_nodes(nodes, 0).expect("grown arena is a tree")
}

fn grow_node<R: Rng + ?Sized>(
    ds: &Dataset,
    rows: Vec<usize>,
    top_k: usize,
    p_min: usize,
    rng: &mut R,
    nodes: &mut Vec<Node>,
) -> usize {
    let me = nodes.len();
    let mut counts = vec![0usize; ds.class_count()];
    for &i in &rows {
        counts[ds.label(i)] += 1;
    }
    nodes.push(Node::Leaf {
        counts: counts.clone(),
    });
    if rows.len() < 2 * p_min {
        return me;
    }
    let candidates = candidate_splits(ds, &rows, p_min);
    if candidates.is_empty() {
        return me;
    }
    let pool = top_k.min(candidates.len());
    let chosen = candidates[rng.random_range(0..pool)];
    let (l, r): (Vec<usize>, Vec<usize>) = rows
        .into_iter()
        .partition(|&i| ds.value(i, chosen.feature) <= chosen.threshold);
    let left = grow_node(ds, l, top_k, p_min, rng, nodes);
    let right = grow_node(ds, r, top_k, p_min, rng, nodes);
    nodes[me] = Node::Split {
        feature: chosen.feature,
        threshold: chosen.threshold,
        left,
        right,
    };
    me
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    pub trees: Vec<DecisionTree>,
    /// Accuracy of each tree on the validation rows.
    pub validation_accuracy: Vec<f64>,
    pub alpha: Vec<f64>,
}

impl Forest {
    pub fn predict_proba(&self, point: &[f64]) -> Vec<f64> {
        let mut acc = vec![0.0; self.alpha.len()];
        for t in &self.trees {
            for (a, p) in acc.iter_mut().zip(t.predict_proba(point, &self.alpha)) {
                *a += p;
            }
        }
        let n = self.trees.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        acc
    }

    pub fn votes(&self, point: &[f64]) -> Vec<u64> {
        forest_votes(self, point, &self.alpha)
    }

    /// Averaged probabilities and votes for every row of `ds`.
    pub fn predict_dataset(&self, ds: &Dataset) -> (Vec<Vec<f64>>, VoteMatrix) {
        let out: Vec<(Vec<f64>, Vec<u64>)> = (0..ds.n())
            .into_par_iter()
            .map(|i| (self.predict_proba(ds.row(i)), self.votes(ds.row(i))))
            .collect();
        let (probs, votes): (Vec<_>, Vec<_>) = out.into_iter().unzip();
        let vm = VoteMatrix::new(votes, ds.labels().to_vec(), ds.class_count())
            .expect("every tree votes once per point");
        (probs, vm)
    }

    pub fn split_counts(&self) -> Vec<usize> {
        self.trees.iter().map(DecisionTree::split_count).collect()
    }

    /// Index of the tree with the best validation accuracy (first on ties).
    pub fn best_validation_tree(&self) -> usize {
        argmax(&self.validation_accuracy)
    }

    /// Trees in text form, each preceded by `# tree <index>`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (i, t) in self.trees.iter().enumerate() {
            out.push_str(&format!("# tree {i}\n"));
            out.push_str(&t.to_text());
        }
        out
    }
}

/// Hard-label votes of every tree at `point`.
pub fn forest_votes(forest: &Forest, point: &[f64], alpha: &[f64]) -> Vec<u64> {
    let mut votes = vec![0u64; alpha.len()];
    for t in &forest.trees {
        votes[t.hard_label(point, alpha)] += 1;
    }
    votes
}

/// Accuracy curves of the ensemble on the evaluation set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceTrace {
    /// Accuracy of averaging trees `1..=t`, for each `t`.
    pub ensemble_accuracy: Vec<f64>,
    /// Accuracy of tree `t` alone.
    pub single_accuracy: Vec<f64>,
    /// Accuracy of the tree ranked best on the validation rows.
    pub best_validation_accuracy: f64,
    pub best_tree: usize,
}

impl ConvergenceTrace {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,p_e,p_s,p_slv\n");
        for (t, (e, s)) in self
            .ensemble_accuracy
            .iter()
            .zip(&self.single_accuracy)
            .enumerate()
        {
            out.push_str(&format!("{},{e},{s},{}\n", t + 1, self.best_validation_accuracy));
        }
        out
    }
}

fn accuracy(tree: &DecisionTree, ds: &Dataset, rows: impl Iterator<Item = usize>, alpha: &[f64]) -> f64 {
    let mut n = 0usize;
    let mut hit = 0usize;
    for i in rows {
        n += 1;
        if tree.hard_label(ds.row(i), alpha) == ds.label(i) {
            hit += 1;
        }
    }
    hit as f64 / n.max(1) as f64
}

/// Grows the ensemble on `train` and traces its accuracy on `eval`.
///
/// `train` is split into induction and validation rows; trees are grown on the
/// induction rows only, and the validation rows rank single trees.
pub fn build_forest(
    train: &Dataset,
    eval: &Dataset,
    cfg: &ForestConfig,
    alpha: &[f64],
) -> Result<(Forest, ConvergenceTrace)> {
    cfg.validate()?;
    if alpha.len() != train.class_count() || eval.class_count() != train.class_count() {
        return Err(Error::Config("class counts of alpha, train and eval differ".into()));
    }
    let all: Vec<usize> = (0..train.n()).collect();
    let split = split_validation(
        train,
        &all,
        cfg.validation_fraction,
        rng::derive_seed(cfg.seed, rng::tag::VALIDATION),
    )?;
    let trees: Vec<DecisionTree> = (0..cfg.tree_count)
        .into_par_iter()
        .map(|t| {
            let mut r = rng::stream(rng::derive_seed(cfg.seed, t as u64));
            grow_randomized_tree(train, &split.train, cfg.top_k, cfg.p_min, &mut r)
        })
        .collect();
    let validation_accuracy: Vec<f64> = trees
        .iter()
        .map(|t| accuracy(t, train, split.holdout.iter().copied(), alpha))
        .collect();
    let forest = Forest {
        trees,
        validation_accuracy,
        alpha: alpha.to_vec(),
    };

    let c = train.class_count();
    let mut cumulative = vec![vec![0.0; c]; eval.n()];
    let mut ensemble_accuracy = Vec::with_capacity(cfg.tree_count);
    let mut single_accuracy = Vec::with_capacity(cfg.tree_count);
    for t in &forest.trees {
        let mut single_hits = 0usize;
        let mut ensemble_hits = 0usize;
        for (i, acc) in cumulative.iter_mut().enumerate() {
            let p = t.predict_proba(eval.row(i), alpha);
            if argmax(&p) == eval.label(i) {
                single_hits += 1;
            }
            for (a, v) in acc.iter_mut().zip(&p) {
                *a += v;
            }
            if argmax(acc) == eval.label(i) {
                ensemble_hits += 1;
            }
        }
        single_accuracy.push(single_hits as f64 / eval.n() as f64);
        ensemble_accuracy.push(ensemble_hits as f64 / eval.n() as f64);
    }
    let best_tree = forest.best_validation_tree();
    let trace = ConvergenceTrace {
        ensemble_accuracy,
        best_validation_accuracy: single_accuracy[best_tree],
        single_accuracy,
        best_tree,
    };
    Ok((forest, trace))
}
