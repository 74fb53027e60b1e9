//! Independent oracles shared by the integration suites.
#![allow(dead_code)]

use dtree_envelope::data::Dataset;
use dtree_envelope::tree::{leaf_predictive, DecisionTree};
use num_bigint::BigUint;
use num_traits::{One, ToPrimitive};

pub fn factorial(n: u64) -> BigUint {
    (1..=n).fold(BigUint::one(), |acc, i| acc * i)
}

/// Natural log of an arbitrarily large integer.
pub fn big_ln(x: &BigUint) -> f64 {
    let bits = x.bits();
    if bits <= 1000 {
        return x.to_f64().expect("fits in f64").ln();
    }
    let shift = bits - 64;
    let top = (x >> shift).to_f64().expect("64 bits");
    top.ln() + shift as f64 * std::f64::consts::LN_2
}

/// Exact Catalan number (1/(k+1)) * C(2k, k).
pub fn catalan(k: u64) -> BigUint {
    factorial(2 * k) / (factorial(k) * factorial(k) * BigUint::from(k + 1))
}

/// Multinomial-Dirichlet marginal likelihood with integer priors, computed as
/// an exact rational with Γ(n) = (n-1)!, returned as a log.
pub fn exact_log_likelihood(leaf_counts: &[Vec<u64>], alpha: &[u64]) -> f64 {
    let a: u64 = alpha.iter().sum();
    let mut num = BigUint::one();
    let mut den = BigUint::one();
    for counts in leaf_counts {
        let n: u64 = counts.iter().sum();
        num *= factorial(a - 1);
        for (&m, &al) in counts.iter().zip(alpha) {
            num *= factorial(m + al - 1);
            den *= factorial(al - 1);
        }
        den *= factorial(n + a - 1);
    }
    big_ln(&num) - big_ln(&den)
}

/// One-feature dataset.
pub fn line(values: &[f64], labels: &[usize], classes: usize) -> Dataset {
    let rows: Vec<Vec<f64>> = values.iter().map(|&v| vec![v]).collect();
    Dataset::from_rows(&rows, labels.to_vec(), classes).expect("valid dataset")
}

/// Every tree on a one-feature dataset with distinct values and at most two
/// splits whose leaves all hold at least `p_min` rows, paired with its
/// unnormalised posterior weight
/// `L(T) * prod_splits 1 / N(node) * 1 / S_leaves`, where `N(node)` is the
/// number of distinct values reaching the split node.
pub fn enumerate_small_posterior(ds: &Dataset, p_min: usize, alpha: &[f64]) -> Vec<(DecisionTree, f64)> {
    let mut xs: Vec<f64> = (0..ds.n()).map(|i| ds.value(i, 0)).collect();
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    let lik = |t: &DecisionTree| -> f64 {
        let mut total = 0.0;
        for node in t.nodes() {
            if let dtree_envelope::tree::Node::Leaf { counts } = node {
                let a: f64 = alpha.iter().sum();
                let ni: usize = counts.iter().sum();
                total += statrs::function::gamma::ln_gamma(a)
                    - alpha.iter().map(|&x| statrs::function::gamma::ln_gamma(x)).sum::<f64>();
                total += counts
                    .iter()
                    .zip(alpha)
                    .map(|(&m, &al)| statrs::function::gamma::ln_gamma(m as f64 + al))
                    .sum::<f64>();
                total -= statrs::function::gamma::ln_gamma(ni as f64 + a);
            }
        }
        total.exp()
    };
    let catalan_f = |k: u64| catalan(k).to_f64().unwrap();
    let mut out = Vec::new();
    out.push({
        let t = DecisionTree::leaf().refit_counts(ds);
        let w = lik(&t) / catalan_f(1);
        (t, w)
    });
    // Left child takes xs[..=i].
    for i in 0..n {
        let left = i + 1;
        let right = n - left;
        if left < p_min || right < p_min {
            continue;
        }
        let one = DecisionTree::leaf().split_leaf(0, 0, xs[i]).refit_counts(ds);
        out.push((one.clone(), lik(&one) / (n as f64) / catalan_f(2)));
        let ids = one.leaf_ids();
        let (left_leaf, right_leaf) = (ids[0], ids[1]);
        for j in 0..i {
            let (a, b) = (j + 1, left - j - 1);
            if a >= p_min && b >= p_min {
                let t = one.split_leaf(left_leaf, 0, xs[j]).refit_counts(ds);
                out.push((t.clone(), lik(&t) / (n * left) as f64 / catalan_f(3)));
            }
        }
        for j in (i + 1)..n {
            let (a, b) = (j - i, n - j - 1);
            if a >= p_min && b >= p_min {
                let t = one.split_leaf(right_leaf, 0, xs[j]).refit_counts(ds);
                out.push((t.clone(), lik(&t) / (n * right) as f64 / catalan_f(3)));
            }
        }
    }
    out
}

/// Posterior predictive at `point` by exhaustive weighting.
pub fn oracle_predictive(trees: &[(DecisionTree, f64)], point: &[f64], alpha: &[f64]) -> Vec<f64> {
    let z: f64 = trees.iter().map(|(_, w)| w).sum();
    let mut p = vec![0.0; alpha.len()];
    for (t, w) in trees {
        let leaf = t.route(point);
        let dtree_envelope::tree::Node::Leaf { counts } = t.node(leaf) else {
            unreachable!()
        };
        for (acc, v) in p.iter_mut().zip(leaf_predictive(counts, alpha)) {
            *acc += w / z * v;
        }
    }
    p
}
