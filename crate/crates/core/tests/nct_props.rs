//! Properties of tree growth, criteria and leaf estimation.

use netcausal::design::JointExposure;
use netcausal::estimator::{effect_in, Constraint, Contrast, Relation, Selection};
use netcausal::nct::{
    composite_weights, estimate_leaves, fit, grow_tree, q_composite, q_single, split_clusters, Criterion,
    EstimandSet, NetworkCausalTree, ScoreContext, Split, TreeError, TreeParams,
};
use netcausal::simlab::{generate_scenario, generate_with_effects, ScenarioConfig, Scenario};
use netcausal::Dataset;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_config(clusters: usize, size: usize, p: f64) -> ScenarioConfig {
    ScenarioConfig {
        clusters,
        cluster_size: size,
        edge_prob: p,
        covariates: 4,
        reps: 1,
        ..ScenarioConfig::default()
    }
}

fn tau_only() -> EstimandSet {
    EstimandSet::new(vec![(Contrast::TREATMENT, 1.0)]).unwrap()
}

fn both() -> EstimandSet {
    EstimandSet::new(vec![(Contrast::TREATMENT, 0.5), (Contrast::SPILLOVER, 0.5)]).unwrap()
}

fn halves(ds: &Dataset, sel: &Selection, k: usize) -> [Selection; 2] {
    [
        sel.filter(ds, |r| ds.covariates(r)[k] <= 0.5),
        sel.filter(ds, |r| ds.covariates(r)[k] > 0.5),
    ]
}

#[test]
fn split_score_dominates_pooled_score() {
    let mut checked = 0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b): (f64, f64) = (rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0));
        let s = generate_with_effects(&small_config(6, 40, 0.06), seed, |x| {
            if x[0] == 0.0 {
                (a, -b)
            } else {
                (b, a)
            }
        })
        .unwrap();
        let ds = &s.dataset;
        let all = Selection::all(ds);
        let ctx = ScoreContext { honest: false, n_tr: ds.len(), n_est: ds.len(), min_size: 1 };
        let Ok(pooled) = q_single(ds, std::slice::from_ref(&all), Contrast::TREATMENT, &ctx) else {
            continue;
        };
        let Ok(split) = q_single(ds, &halves(ds, &all, 0), Contrast::TREATMENT, &ctx) else {
            continue;
        };
        assert!(split >= pooled - 1e-12, "seed {seed}: {split} < {pooled}");
        checked += 1;
    }
    assert!(checked >= 90, "only {checked} datasets had populated cells");
}

#[test]
fn identical_subleaf_effects_do_not_raise_honest_score() {
    // splitting on a covariate the effect ignores: first term moves only by noise,
    // the honest penalty never decreases
    let s = generate_with_effects(&small_config(10, 60, 0.04), 3, |_| (2.0, 0.0)).unwrap();
    let ds = &s.dataset;
    let all = Selection::all(ds);
    let ctx = ScoreContext { honest: true, n_tr: ds.len(), n_est: ds.len(), min_size: 1 };
    let parts = halves(ds, &all, 3);
    let v = |sel: &Selection| effect_in(ds, sel, Contrast::TREATMENT, 0.95).unwrap().variance;
    let pen = 2.0 / ds.len() as f64;
    let pooled_pen = pen * v(&all);
    let split_pen = pen * (v(&parts[0]) + v(&parts[1]));
    assert!(split_pen >= pooled_pen);
    let pooled = q_single(ds, std::slice::from_ref(&all), Contrast::TREATMENT, &ctx).unwrap();
    let split = q_single(ds, &parts, Contrast::TREATMENT, &ctx).unwrap();
    let jensen_gap = (split + split_pen) - (pooled + pooled_pen);
    assert!(jensen_gap >= -1e-12);
}

fn x3_fixture() -> Scenario {
    // 40 clusters of 20 units; only X3 moves the treatment effect
    generate_with_effects(&small_config(40, 20, 0.08), 77, |x| (if x[2] == 1.0 { 4.0 } else { 0.0 }, 0.0)).unwrap()
}

#[test]
fn first_split_found_by_brute_force_is_x3() {
    let s = x3_fixture();
    let ds = &s.dataset;
    assert!(ds.len() >= 150);
    let params = TreeParams {
        max_depth: 1,
        min_size: 3,
        criterion: Criterion::Single(Contrast::TREATMENT),
        ..TreeParams::default()
    };
    let split = split_clusters(ds, 0.5, 5).unwrap();
    let tree = grow_tree(ds, &split, &tau_only(), &params).unwrap();

    let train = split.training_rows(ds);
    let ctx = ScoreContext {
        honest: true,
        n_tr: train.len(),
        n_est: split.estimation_rows(ds).len(),
        min_size: 3,
    };
    let mut best: Option<(usize, f64)> = None;
    for k in 0..ds.covariate_count() {
        if let Ok(q) = q_single(ds, &halves(ds, &train, k), Contrast::TREATMENT, &ctx) {
            if best.is_none_or(|(_, b)| q > b) {
                best = Some((k, q));
            }
        }
    }
    assert_eq!(best.unwrap().0, 2);
    assert_eq!(tree.root().split, Some(Split { covariate: 2, cutoff: 0.5 }));
}

#[test]
fn min_size_violation_is_an_error() {
    let s = x3_fixture();
    let ds = &s.dataset;
    let all = Selection::all(ds);
    let ctx = ScoreContext { honest: false, n_tr: ds.len(), n_est: ds.len(), min_size: ds.len() };
    let err = q_single(ds, std::slice::from_ref(&all), Contrast::TREATMENT, &ctx).unwrap_err();
    assert!(matches!(err, TreeError::MinSizeViolated { .. }));
}

fn scenario(h: f64, seed: u64) -> Scenario {
    let cfg = ScenarioConfig { h, clusters: 30, ..ScenarioConfig::default() };
    generate_scenario(&cfg, seed).unwrap()
}

fn sim_params(criterion: Criterion) -> TreeParams {
    TreeParams { max_depth: 2, criterion, ..TreeParams::default() }
}

#[test]
fn composite_is_weighted_sum_of_single_criteria() {
    let s = scenario(1.1, 4);
    let ds = &s.dataset;
    let split = split_clusters(ds, 0.5, 1).unwrap();
    let train = split.training_rows(ds);
    let gamma = composite_weights(ds, &train, &both()).unwrap();
    for &(c, g) in &gamma {
        let root = effect_in(ds, &train, c, 0.95).unwrap().point;
        assert!((g - 0.5 / (root * root)).abs() < 1e-12);
    }
    let ctx = ScoreContext { honest: true, n_tr: train.len(), n_est: ds.len() - train.len(), min_size: 20 };
    let parts = halves(ds, &train, 0);
    let q = q_composite(ds, &parts, &gamma, &ctx).unwrap();
    let manual: f64 = gamma
        .iter()
        .map(|&(c, g)| g * q_single(ds, &parts, c, &ctx).unwrap())
        .sum();
    assert!((q - manual).abs() < 1e-12);
}

#[test]
fn zero_root_effect_rejected() {
    let s = generate_with_effects(&small_config(4, 30, 0.1), 2, |_| (0.0, 0.0)).unwrap();
    // constant outcomes: every HT contrast in the root need not be zero, so force Y = 0
    let ds = s.dataset.with_outcomes(vec![0.0; s.dataset.len()]).unwrap();
    let split = split_clusters(&ds, 0.5, 1).unwrap();
    let err = grow_tree(&ds, &split, &both(), &TreeParams { min_size: 1, ..TreeParams::default() }).unwrap_err();
    assert!(matches!(err, TreeError::ZeroRootEffect(_)));
}

#[test]
fn composite_needs_two_positive_weights() {
    let s = x3_fixture();
    let split = split_clusters(&s.dataset, 0.5, 1).unwrap();
    let err = grow_tree(&s.dataset, &split, &tau_only(), &TreeParams::default()).unwrap_err();
    assert!(matches!(err, TreeError::InvalidEstimands(_)));
}

#[test]
fn large_effect_recovers_true_structure() {
    let s = scenario(10.1, 8);
    let (_, tree) = fit(&s.dataset, &both(), &sim_params(Criterion::Composite), 3).unwrap();
    let root = tree.root().split.unwrap();
    let [l, r] = tree.root().children.unwrap();
    let second = 1 - root.covariate;
    assert!(root.covariate <= 1);
    assert_eq!(tree.nodes[l].split.unwrap().covariate, second);
    assert_eq!(tree.nodes[r].split.unwrap().covariate, second);
    let leaf = tree.predict_leaf(&[0.0; 10]).unwrap();
    let rule = netcausal::simlab::leaf_rule(&tree.leaf_of(leaf.id)).unwrap();
    assert_eq!(rule, vec![(0, 0), (1, 0)]);
    let tau = &leaf.estimates[0];
    assert!(tau.available && (tau.point.unwrap() - 10.1).abs() < 6.0 * tau.se.unwrap());
}

#[test]
fn boundary_values_route_left_and_missing_covariates_error() {
    let s = scenario(10.1, 8);
    let (_, tree) = fit(&s.dataset, &both(), &sim_params(Criterion::Composite), 3).unwrap();
    let split = tree.root().split.unwrap();
    let mut x = vec![0.0; 10];
    x[split.covariate] = split.cutoff;
    let leaf = tree.predict_leaf(&x).unwrap();
    let constraints = tree.leaf_of(leaf.id).constraints;
    assert_eq!(constraints[0], Constraint { covariate: split.covariate, relation: Relation::Le, cutoff: split.cutoff });
    assert!(matches!(tree.predict_leaf(&[0.0]), Err(TreeError::MissingCovariate(_))));
}

#[test]
fn partition_is_disjoint_and_exhaustive() {
    let s = scenario(5.1, 9);
    let params = TreeParams { max_depth: 3, ..TreeParams::default() };
    let (_, tree) = fit(&s.dataset, &both(), &params, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let leaves: Vec<_> = tree.leaves().map(|n| (n.id, tree.leaf_of(n.id))).collect();
    for _ in 0..2000 {
        let x: Vec<f64> = (0..10).map(|_| rng.random_range(0..2) as f64).collect();
        let hits: Vec<usize> = leaves.iter().filter(|(_, l)| l.contains(&x)).map(|(id, _)| *id).collect();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0], tree.predict_leaf(&x).unwrap().id);
    }
    assert!(tree.depth() <= 3);
    for leaf in tree.leaves() {
        assert!(leaf.train_cells.iter().all(|&n| n >= 20));
    }
}

#[test]
fn accepted_splits_improve_the_criterion() {
    let s = scenario(5.1, 10);
    let ds = &s.dataset;
    let params = TreeParams { max_depth: 3, criterion: Criterion::Single(Contrast::SPILLOVER), ..TreeParams::default() };
    let split = split_clusters(ds, 0.5, 2).unwrap();
    let tree = grow_tree(ds, &split, &both(), &params).unwrap();
    let train = split.training_rows(ds);
    let ctx = ScoreContext {
        honest: true,
        n_tr: train.len(),
        n_est: split.estimation_rows(ds).len(),
        min_size: 20,
    };
    let score = |ids: &[usize]| {
        let parts: Vec<Selection> = ids
            .iter()
            .map(|&id| {
                let l = tree.leaf_of(id);
                train.filter(ds, |r| l.contains(ds.covariates(r)))
            })
            .collect();
        q_single(ds, &parts, Contrast::SPILLOVER, &ctx).unwrap()
    };
    for node in tree.nodes.iter().filter(|n| !n.is_leaf()) {
        let [l, r] = node.children.unwrap();
        assert!(score(&[l, r]) > score(&[node.id]) + 1e-12);
    }
}

#[test]
fn depth_zero_is_root_only_with_whole_sample_estimates() {
    let s = scenario(1.1, 11);
    let ds = &s.dataset;
    let params = TreeParams { max_depth: 0, ..TreeParams::default() };
    let (split, tree) = fit(ds, &both(), &params, 4).unwrap();
    assert_eq!(tree.nodes.len(), 1);
    let est = split.estimation_rows(ds);
    for e in &tree.root().estimates {
        let whole = effect_in(ds, &est, e.contrast, 0.95).unwrap();
        assert_eq!(e.point, Some(whole.point));
        assert_eq!(e.se, Some(whole.std_error));
    }
}

#[test]
fn empty_estimation_cell_is_flagged_not_fatal() {
    let s = scenario(1.1, 12);
    let ds = &s.dataset;
    let split = split_clusters(ds, 0.5, 4).unwrap();
    let params = TreeParams { max_depth: 1, ..TreeParams::default() };
    let mut tree = grow_tree(ds, &split, &both(), &params).unwrap();
    // untreat estimation units in (1,0) until none remain; untreating can only
    // lower neighbours' exposure, so repeat to a fixed point
    let n = ds.network().unit_count();
    let mut w = vec![0u8; n];
    let mut y = vec![0.0; n];
    for r in 0..ds.len() {
        w[ds.units()[r]] = ds.treatment(r);
        y[ds.units()[r]] = ds.outcome(r);
    }
    let masked = loop {
        let m = ds.with_assignment(&w, &y).unwrap();
        let hits: Vec<usize> = split
            .estimation_rows(&m)
            .rows()
            .iter()
            .copied()
            .filter(|&r| m.condition(r) == JointExposure::C10)
            .collect();
        if hits.is_empty() {
            break m;
        }
        for r in hits {
            w[m.units()[r]] = 0;
        }
    };
    estimate_leaves(&mut tree, &masked, &split, 0.95).unwrap();
    let tau = &tree.root().estimates[0];
    assert_eq!(tau.contrast, Contrast::TREATMENT);
    assert!(!tau.available && tau.point.is_none() && tau.se.is_none());
    assert_eq!(tau.cells[JointExposure::C10.index()], 0);
    let delta = &tree.root().estimates[1];
    assert!(delta.available && delta.point.is_some());
}

#[test]
fn honesty_estimation_outcomes_do_not_move_splits() {
    for seed in 0..10u64 {
        let s = scenario(5.1, 100 + seed);
        let ds = &s.dataset;
        let params = sim_params(Criterion::Composite);
        let split = split_clusters(ds, 0.5, seed).unwrap();
        let tree = grow_tree(ds, &split, &both(), &params).unwrap();
        let est_rows = split.estimation_rows(ds).rows().to_vec();
        let mut permuted = est_rows.clone();
        permuted.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut y = ds.outcomes().to_vec();
        for (&a, &b) in est_rows.iter().zip(&permuted) {
            y[a] = ds.outcome(b);
        }
        let shuffled = ds.with_outcomes(y).unwrap();
        let tree2 = grow_tree(&shuffled, &split, &both(), &params).unwrap();
        assert_eq!(tree.structure(), tree2.structure());
    }
}

#[test]
fn fitting_is_deterministic_and_json_round_trips() {
    let s = scenario(5.1, 13);
    let params = TreeParams::default();
    let (_, a) = fit(&s.dataset, &both(), &params, 9).unwrap();
    let (_, b) = fit(&s.dataset, &both(), &params, 9).unwrap();
    assert_eq!(a.to_json(), b.to_json());
    let back = NetworkCausalTree::from_json(&a.to_json()).unwrap();
    assert_eq!(back, a);
    assert_eq!(back.to_json(), a.to_json());
}

#[test]
fn composite_argmax_invariant_to_outcome_scale() {
    let s = scenario(5.1, 14);
    let ds = &s.dataset;
    let scaled = ds.with_outcomes(ds.outcomes().iter().map(|y| 2.0 * y).collect()).unwrap();
    let params = TreeParams::default();
    let split = split_clusters(ds, 0.5, 3).unwrap();
    let a = grow_tree(ds, &split, &both(), &params).unwrap();
    let b = grow_tree(&scaled, &split, &both(), &params).unwrap();
    assert_eq!(a.structure(), b.structure());
}
