use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, Criterion};
use netcausal::design::{marginal_table, PairwiseEngine};
use netcausal::nct::{fit, grow_tree, split_clusters};
use netcausal::netgraph::{generate_er_clusters, UnitRef};
use netcausal::simlab::{default_estimands, run_replication, simulation_tree_params, RuleMatching};
use netcausal::{BernoulliDesign, Dataset, ExposureMapping, TreeParams};
use netcausal_bench::{default_config, default_scenario};

fn probabilities(c: &mut Criterion) {
    let design = BernoulliDesign::new(0.5).unwrap();
    let q1 = ExposureMapping::threshold(1).unwrap();
    c.bench_function("marginal_table/degree_40", |b| {
        b.iter(|| marginal_table(black_box(40), &design, &q1))
    });

    let net = generate_er_clusters(1, 24, 0.2, 3).unwrap();
    let (i, j) = (UnitRef { cluster: 0, node: 0 }, UnitRef { cluster: 0, node: 1 });
    let enumerate = PairwiseEngine::new(design, ExposureMapping::threshold(2).unwrap());
    c.bench_function("pairwise/enumeration_q2_n24", |b| b.iter(|| enumerate.table(&net, i, j)));
    let mut closed = PairwiseEngine::new(design, q1);
    closed.enumeration_cutoff = 0;
    c.bench_function("pairwise/closed_form_q1_n24", |b| b.iter(|| closed.table(&net, i, j)));
}

fn dataset(c: &mut Criterion) {
    let s = default_scenario(1.1, 1);
    let net = Arc::new(s.dataset.network().clone());
    let y: Vec<f64> = vec![0.0; net.unit_count()];
    let engine = *s.dataset.engine();
    c.bench_function("dataset/build_default", |b| {
        b.iter(|| Dataset::build(net.clone(), engine, &s.assignment, &y, &s.covariates).unwrap())
    });
}

fn trees(c: &mut Criterion) {
    let s = default_scenario(5.1, 2);
    let ds = &s.dataset;
    let split = split_clusters(ds, 0.5, 1).unwrap();
    let estimands = default_estimands();
    let depth2 = simulation_tree_params();
    c.bench_function("tree/grow_composite_depth2", |b| {
        b.iter(|| grow_tree(ds, &split, &estimands, &depth2).unwrap())
    });
    let depth3 = TreeParams::default();
    c.bench_function("tree/fit_composite_depth3", |b| b.iter(|| fit(ds, &estimands, &depth3, 1).unwrap()));
}

fn replication(c: &mut Criterion) {
    let cfg = default_config(5.1, 1);
    let estimands = default_estimands();
    let params = simulation_tree_params();
    let mut group = c.benchmark_group("simulation");
    group.sample_size(20);
    group.bench_function("replication_default", |b| {
        b.iter(|| run_replication(&cfg, &estimands, &params, RuleMatching::Exact, 0).unwrap())
    });
    group.finish();
}

criterion_group!(benches, probabilities, dataset, trees, replication);
criterion_main!(benches);
