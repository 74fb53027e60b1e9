mod common;

use dtree_envelope::data::{make_folds, parse_csv, CsvSchema, Dataset};
use dtree_envelope::envelope::{self, consistency, VoteMatrix};
use dtree_envelope::forest::{build_forest, candidate_splits, grow_randomized_tree, ForestConfig};
use dtree_envelope::mcmc::{
    log_catalan, log_marginal_likelihood, mh_step, propose_move, run_chain, ChainState, McmcConfig,
    MoveKind, MoveProbs,
};
use dtree_envelope::rng;
use dtree_envelope::synth;
use dtree_envelope::tree::{leaf_predictive, DecisionTree};
use proptest::prelude::*;

fn dataset_strategy() -> impl Strategy<Value = Dataset> {
    (20usize..60, 1usize..4, 2usize..4).prop_flat_map(|(n, m, c)| {
        (
            prop::collection::vec(prop::collection::vec(-5.0f64..5.0, m), n),
            prop::collection::vec(0..c, n),
        )
            .prop_map(move |(rows, mut labels)| {
                // every class present
                for (j, l) in labels.iter_mut().take(c).enumerate() {
                    *l = j;
                }
                Dataset::from_rows(&rows, labels, c).unwrap()
            })
    })
}

fn votes_strategy() -> impl Strategy<Value = VoteMatrix> {
    (2usize..5, 1u64..40, 1usize..30).prop_flat_map(|(c, n, points)| {
        prop::collection::vec((prop::collection::vec(0..c, n as usize), 0..c), points).prop_map(
            move |rows| {
                let (per_point, targets): (Vec<Vec<usize>>, Vec<_>) = rows.into_iter().unzip();
                let by_classifier: Vec<Vec<usize>> = (0..n as usize)
                    .map(|k| per_point.iter().map(|p| p[k]).collect())
                    .collect();
                VoteMatrix::from_labels(&by_classifier, targets, c).unwrap()
            },
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn csv_round_trip(ds in dataset_strategy()) {
        let back = parse_csv(&ds.to_csv_string(), &CsvSchema::default()).unwrap();
        prop_assert_eq!(back.n(), ds.n());
        prop_assert_eq!(back.labels(), ds.labels());
        for i in 0..ds.n() {
            prop_assert_eq!(back.row(i), ds.row(i));
        }
    }

    #[test]
    fn folds_partition_rows(ds in dataset_strategy(), folds in 2usize..6, seed: u64) {
        let plan = make_folds(&ds, folds, seed).unwrap();
        let mut seen = vec![0; ds.n()];
        for f in 0..folds {
            for i in plan.holdout(f) {
                seen[i] += 1;
            }
            prop_assert_eq!(plan.holdout(f).len() + plan.train(f).len(), ds.n());
        }
        prop_assert!(seen.iter().all(|&s| s == 1));
        let sizes = plan.sizes();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }

    #[test]
    fn rates_sum_to_one_and_gamma_in_range(vm in votes_strategy(), g in 0.5f64..=1.0) {
        let c = vm.class_count() as f64;
        for row in vm.rows() {
            let (gamma, _) = consistency(row);
            prop_assert!(gamma >= 1.0 / c - 1e-12 && gamma <= 1.0);
        }
        let gamma0 = g.max(1.0 / c + 1e-9);
        let r = envelope::evaluate(&vm, gamma0);
        prop_assert!((r.cc_rate.mean + r.u_rate.mean + r.ci_rate.mean - 1.0).abs() < 1e-12);
        prop_assert!(r.ci_rate.two_sigma >= 0.0);
    }

    #[test]
    fn vote_share_invariant_under_scaling(vm in votes_strategy(), k in 1u64..5) {
        for row in vm.rows() {
            let scaled: Vec<u64> = row.iter().map(|v| v * k).collect();
            prop_assert_eq!(consistency(row), consistency(&scaled));
        }
    }

    #[test]
    fn sweep_is_monotone(vm in votes_strategy()) {
        prop_assume!(vm.class_count() == 2);
        let rows = envelope::sweep(&[vm.clone(), vm], &envelope::default_grid()).unwrap();
        prop_assert_eq!(rows.len(), 101);
        let acc = rows[0].cc_rate.mean + rows[0].ci_rate.mean;
        for w in rows.windows(2) {
            prop_assert!(w[1].u_rate.mean >= w[0].u_rate.mean);
            prop_assert!(w[1].ci_rate.mean <= w[0].ci_rate.mean);
        }
        prop_assert!(acc <= 1.0 + 1e-12);
    }

    #[test]
    fn single_classifier_is_always_confident(labels in prop::collection::vec(0usize..3, 1..30)) {
        let vm = VoteMatrix::from_labels(&[labels.clone()], labels.clone(), 3).unwrap();
        prop_assert_eq!(envelope::evaluate(&vm, 0.99).u_rate.mean, 0.0);
    }

    #[test]
    fn tree_text_round_trip(ds in dataset_strategy(), seed: u64) {
        let mut r = rng::stream(seed);
        let t = grow_randomized_tree(&ds, &(0..ds.n()).collect::<Vec<_>>(), 3, 2, &mut r);
        let back = DecisionTree::from_text(&t.to_text()).unwrap();
        prop_assert_eq!(back, t);
    }

    #[test]
    fn grown_trees_respect_p_min(ds in dataset_strategy(), p_min in 1usize..6, seed: u64) {
        let mut r = rng::stream(seed);
        let rows: Vec<usize> = (0..ds.n()).collect();
        let t = grow_randomized_tree(&ds, &rows, 20, p_min, &mut r);
        prop_assert!(t.min_leaf_n() >= p_min || t.leaf_count() == 1);
        let cands = candidate_splits(&ds, &rows, p_min);
        prop_assert!(cands.iter().all(|c| c.gain >= -1e-12));
        prop_assert!(cands.windows(2).all(|w| w[0].gain >= w[1].gain));
    }

    #[test]
    fn greedy_growth_ignores_seed(ds in dataset_strategy(), a: u64, b: u64) {
        let rows: Vec<usize> = (0..ds.n()).collect();
        let t1 = grow_randomized_tree(&ds, &rows, 1, 2, &mut rng::stream(a));
        let t2 = grow_randomized_tree(&ds, &rows, 1, 2, &mut rng::stream(b));
        prop_assert_eq!(t1, t2);
    }

    #[test]
    fn bayes_classify_ignores_weight_scale(x in -1.0f64..2.0, y in -1.0f64..2.0, k in 0.1f64..10.0) {
        let spec = synth::canonical_mixture();
        let mut scaled = spec.clone();
        for c in &mut scaled.components {
            c.weight *= k;
        }
        prop_assert_eq!(synth::bayes_classify(&spec, [x, y]).0, synth::bayes_classify(&scaled, [x, y]).0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn sampled_trees_respect_p_min_and_leaf_cap(ds in dataset_strategy(), p_min in 1usize..5, seed: u64) {
        let cfg = McmcConfig {
            burn_in: 50,
            post_burn_in: 100,
            p_min,
            max_leaves: Some(6),
            ..McmcConfig::desk_scale()
        };
        let run = run_chain(&ds, &cfg, 0, seed).unwrap();
        for s in &run.samples {
            prop_assert!(s.tree.min_leaf_n() >= p_min);
            prop_assert!(s.tree.leaf_count() <= 6);
            prop_assert_eq!(s.tree.split_count() + 1, s.tree.leaf_count());
        }
    }

    #[test]
    fn chain_log_lik_matches_recomputation(ds in dataset_strategy(), seed: u64) {
        let cfg = McmcConfig::desk_scale();
        let alpha = cfg.alpha_for(ds.class_count());
        let mut state = ChainState::new(DecisionTree::leaf(), &ds, &alpha).unwrap();
        let mut r = rng::stream(seed);
        for _ in 0..200 {
            mh_step(&mut state, &ds, &cfg, &alpha, &mut r);
            let fresh = log_marginal_likelihood(&state.tree.refit_counts(&ds), &alpha).unwrap();
            prop_assert!((fresh - state.log_lik).abs() < 1e-9);
        }
    }

    #[test]
    fn forest_probabilities_are_tree_means(ds in dataset_strategy(), seed: u64) {
        let cfg = ForestConfig { tree_count: 7, p_min: 2, seed, ..ForestConfig::default() };
        let alpha = vec![1.0; ds.class_count()];
        let (forest, _) = build_forest(&ds, &ds, &cfg, &alpha).unwrap();
        for i in 0..ds.n() {
            let got = forest.predict_proba(ds.row(i));
            let mut want = vec![0.0; alpha.len()];
            for t in &forest.trees {
                for (w, p) in want.iter_mut().zip(t.predict_proba(ds.row(i), &alpha)) {
                    *w += p / 7.0;
                }
            }
            for (g, w) in got.iter().zip(&want) {
                prop_assert!((g - w).abs() < 1e-12);
            }
            prop_assert_eq!(forest.votes(ds.row(i)).iter().sum::<u64>(), 7);
        }
    }
}

#[test]
fn catalan_recurrence() {
    for k in 2..=200 {
        let lhs = log_catalan(k) - log_catalan(k - 1);
        let rhs = ((2 * (2 * k - 1)) as f64).ln() - ((k + 1) as f64).ln();
        assert!((lhs - rhs).abs() < 1e-9, "k={k}");
    }
}

#[test]
fn catalan_k25() {
    let exact = common::catalan(25);
    assert!((log_catalan(25) - common::big_ln(&exact)).abs() < 1e-6);
    assert!((log_catalan(25) - 4.861_946_401_452e12f64.ln()).abs() < 1e-6);
}

#[test]
fn move_kind_frequencies() {
    let (train, _) = synth::canonical_split();
    let cfg = McmcConfig::desk_scale();
    let alpha = cfg.alpha_for(2);
    let state = ChainState::new(DecisionTree::leaf().split_leaf(0, 0, 0.0), &train, &alpha).unwrap();
    let mut r = rng::stream(3);
    let mut counts = [0usize; 4];
    let n = 10_000;
    for _ in 0..n {
        counts[propose_move(&state, &train, &cfg, &mut r).kind.index()] += 1;
    }
    let want = MoveProbs::default();
    for kind in MoveKind::ALL {
        let f = counts[kind.index()] as f64 / n as f64;
        assert!((f - want.of(kind)).abs() <= 0.02, "{kind}: {f}");
    }
}

#[test]
fn prior_only_change_moves_always_accepted() {
    let (train, _) = synth::canonical_split();
    let cfg = McmcConfig {
        prior_only: true,
        ..McmcConfig::desk_scale()
    };
    let alpha = cfg.alpha_for(2);
    let mut state = ChainState::new(DecisionTree::leaf(), &train, &alpha).unwrap();
    let mut r = rng::stream(4);
    let mut checked = 0;
    for _ in 0..5_000 {
        let rec = mh_step(&mut state, &train, &cfg, &alpha, &mut r);
        if rec.valid && matches!(rec.kind, MoveKind::ChangeRule | MoveKind::ChangeSplit) {
            assert!(rec.accepted);
            checked += 1;
        }
    }
    assert!(checked > 100);
}

#[test]
fn uniform_choice_among_three_candidates() {
    // Eight ordered rows with p_min 3 leave exactly three admissible midpoints,
    // and every child is too small to split again.
    let ds = common::line(&[1., 2., 3., 4., 5., 6., 7., 8.], &[0, 1, 0, 1, 0, 1, 0, 1], 2);
    let rows: Vec<usize> = (0..8).collect();
    assert_eq!(candidate_splits(&ds, &rows, 3).len(), 3);
    let mut r = rng::stream(5);
    let mut hits = std::collections::BTreeMap::new();
    let n = 10_000;
    for _ in 0..n {
        let t = grow_randomized_tree(&ds, &rows, 20, 3, &mut r);
        let dtree_envelope::tree::Node::Split { threshold, .. } = *t.node(t.root()) else {
            panic!("expected a split")
        };
        *hits.entry(threshold.to_bits()).or_insert(0usize) += 1;
    }
    assert_eq!(hits.len(), 3);
    for &c in hits.values() {
        assert!((c as f64 / n as f64 - 1.0 / 3.0).abs() <= 0.02);
    }
}

#[test]
fn single_sample_prediction_is_leaf_predictive() {
    let ds = common::line(&[1., 2., 3., 4.], &[0, 0, 1, 1], 2);
    let t = DecisionTree::leaf().split_leaf(0, 0, 2.0).refit_counts(&ds);
    let sample = dtree_envelope::mcmc::PosteriorSample {
        tree: std::sync::Arc::new(t.clone()),
        run_index: 0,
        iteration: 1,
    };
    let (p, v) = dtree_envelope::mcmc::predict_average(&[sample], &[1.5], &[1.0, 1.0]).unwrap();
    assert_eq!(p, leaf_predictive(&[2, 0], &[1.0, 1.0]));
    assert_eq!(v, vec![1, 0]);
}
