//! Synthetic scenarios with known heterogeneous effects, Monte Carlo
//! replication and performance measures (bias, MSE, coverage, rule discovery).

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::design::{BernoulliDesign, DesignError, ExposureMapping, JointExposure, PairwiseEngine};
use crate::estimator::{Contrast, Covariates, Dataset, EstimatorError, Leaf, Relation};
use crate::nct::{
    estimate_leaves, grow_tree, split_clusters, Criterion, EstimandSet, NetworkCausalTree, TreeError, TreeParams,
};
use crate::netgraph::{drop_isolated, generate_er_clusters, generate_homophilous_clusters, NetworkError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("covariate correlation {0} outside [0, 1)")]
    InvalidRho(f64),
    #[error("invalid scenario configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Design(#[from] DesignError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Tree(#[from] TreeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub scenario: u8,
    pub h: f64,
    pub clusters: usize,
    pub cluster_size: usize,
    pub edge_prob: f64,
    pub alpha: f64,
    pub q: u32,
    pub covariates: usize,
    pub rho: f64,
    pub homophily: bool,
    pub reps: usize,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            scenario: 1,
            h: 1.1,
            clusters: 30,
            cluster_size: 100,
            edge_prob: 0.01,
            alpha: 0.5,
            q: 1,
            covariates: 10,
            rho: 0.0,
            homophily: false,
            reps: 100,
            seed: 1,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidConfig(m));
        if self.scenario != 1 && self.scenario != 2 {
            return bad(format!("scenario must be 1 or 2, got {}", self.scenario));
        }
        if self.covariates < 2 || (self.scenario == 2 && self.covariates < 3) {
            return bad(format!("scenario {} needs more covariates than {}", self.scenario, self.covariates));
        }
        if !(self.h.is_finite() && self.h >= 0.0) {
            return bad(format!("effect size h must be finite and nonnegative, got {}", self.h));
        }
        if self.clusters < 2 {
            return bad(format!("need at least 2 clusters, got {}", self.clusters));
        }
        if self.cluster_size == 0 {
            return bad("cluster size must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.edge_prob) {
            return bad(format!("edge probability {} outside [0, 1]", self.edge_prob));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha {} outside (0, 1)", self.alpha));
        }
        if self.q == 0 {
            return bad("exposure threshold q must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.rho) {
            return Err(SimError::InvalidRho(self.rho));
        }
        if self.reps == 0 {
            return bad("need at least one replication".into());
        }
        Ok(())
    }

    /// Probabilities `(p_base, p_same)` of the homophilous stand-in: links
    /// between units sharing X1 are three times as likely as across, with the
    /// average link probability kept at `edge_prob`.
    pub fn homophily_probs(&self) -> (f64, f64) {
        (0.5 * self.edge_prob, (1.5 * self.edge_prob).min(1.0))
    }
}

/// A rule is a conjunction `X_k = v` over binary covariates, sorted by `k`.
pub type Rule = Vec<(usize, u8)>;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GroundTruth {
    pub tau_rules: Vec<Rule>,
    pub delta_rules: Vec<Rule>,
}

impl GroundTruth {
    /// Distinct rules over both effects.
    pub fn all_rules(&self) -> Vec<Rule> {
        let mut v: Vec<Rule> = self.tau_rules.iter().chain(&self.delta_rules).cloned().collect();
        v.sort();
        v.dedup();
        v
    }
}

/// True `(τ(x), δ(x))` of a scenario.
pub fn true_effects(scenario: u8, h: f64, x: &[f64]) -> (f64, f64) {
    let (x1, x2) = (x[0] == 1.0, x[1] == 1.0);
    match scenario {
        1 => {
            let e = match (x1, x2) {
                (false, false) => h,
                (true, true) => -h,
                _ => 0.0,
            };
            (e, e)
        }
        _ => {
            let x3 = x[2] == 1.0;
            let tau = match (x1, x2) {
                (false, false) => h,
                (false, true) => 3.0 * h,
                _ => 0.0,
            };
            let delta = match (x1, x3) {
                (true, false) => h,
                (true, true) => 3.0 * h,
                _ => 0.0,
            };
            (tau, delta)
        }
    }
}

pub fn ground_truth(scenario: u8, h: f64) -> GroundTruth {
    if h == 0.0 {
        return GroundTruth::default();
    }
    match scenario {
        1 => {
            let rules = vec![vec![(0, 0), (1, 0)], vec![(0, 1), (1, 1)]];
            GroundTruth {
                tau_rules: rules.clone(),
                delta_rules: rules,
            }
        }
        _ => GroundTruth {
            tau_rules: vec![vec![(0, 0), (1, 0)], vec![(0, 0), (1, 1)]],
            delta_rules: vec![vec![(0, 1), (2, 0)], vec![(0, 1), (2, 1)]],
        },
    }
}

/// Seed of an independent substream: stream `id` of the generator keyed by
/// `master`.
pub fn derive_seed(master: u64, id: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(id);
    rng.next_u64()
}

/// Equicorrelated binary covariates (marginals 1/2) obtained by thresholding
/// Gaussians `Z_k = √ρ U + √(1−ρ) ε_k` at zero. Row-major, `n × p`.
pub fn correlated_binary_covariates(n: usize, p: usize, rho: f64, seed: u64) -> Result<Vec<f64>, SimError> {
    if !(0.0..1.0).contains(&rho) {
        return Err(SimError::InvalidRho(rho));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (a, b) = (rho.sqrt(), (1.0 - rho).sqrt());
    let mut out = Vec::with_capacity(n * p);
    for _ in 0..n {
        if rho == 0.0 {
            for _ in 0..p {
                out.push(rng.random_bool(0.5) as u8 as f64);
            }
        } else {
            let u: f64 = rng.sample(StandardNormal);
            for _ in 0..p {
                let e: f64 = rng.sample(StandardNormal);
                out.push(((a * u + b * e) > 0.0) as u8 as f64);
            }
        }
    }
    Ok(out)
}

/// One synthetic data set with its truth.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub dataset: Dataset,
    pub truth: GroundTruth,
    /// True `τ(x)` per dataset row.
    pub tau: Vec<f64>,
    /// True `δ(x)` per dataset row.
    pub delta: Vec<f64>,
    /// Potential outcomes per network unit, `00, 10, 01, 11` order.
    pub potential: Vec<[f64; 4]>,
    /// Treatment per network unit.
    pub assignment: Vec<u8>,
    /// Covariates per network unit.
    pub covariates: Covariates,
}

pub fn covariate_names(p: usize) -> Vec<String> {
    (1..=p).map(|k| format!("X{k}")).collect()
}

pub fn generate_scenario(config: &ScenarioConfig, seed: u64) -> Result<Scenario, SimError> {
    config.validate()?;
    let (scenario, h) = (config.scenario, config.h);
    let mut s = generate_with_effects(config, seed, |x| true_effects(scenario, h, x))?;
    s.truth = ground_truth(scenario, h);
    Ok(s)
}

/// Same data-generating process with arbitrary `x -> (τ(x), δ(x))`; the
/// returned ground truth is empty. `config.scenario` and `config.h` are
/// ignored.
pub fn generate_with_effects(
    config: &ScenarioConfig,
    seed: u64,
    effects: impl Fn(&[f64]) -> (f64, f64),
) -> Result<Scenario, SimError> {
    ScenarioConfig { scenario: 1, h: 0.0, covariates: config.covariates.max(2), ..*config }.validate()?;
    let (k, n, p) = (config.clusters, config.cluster_size, config.covariates);
    let x_all = correlated_binary_covariates(k * n, p, config.rho, derive_seed(seed, 1))?;
    let full = if config.homophily {
        let attribute: Vec<u8> = (0..k * n).map(|u| x_all[u * p] as u8).collect();
        let (p_base, p_same) = config.homophily_probs();
        generate_homophilous_clusters(k, n, p_base, p_same, &attribute, derive_seed(seed, 2))?
    } else {
        generate_er_clusters(k, n, config.edge_prob, derive_seed(seed, 2))?
    };
    let (network, removed) = drop_isolated(&full);
    let removed: Vec<usize> = removed.iter().map(|&u| full.global_index(u)).collect();
    let kept: Vec<usize> = (0..k * n).filter(|u| removed.binary_search(u).is_err()).collect();
    let x: Vec<f64> = kept
        .iter()
        .flat_map(|&u| x_all[u * p..(u + 1) * p].iter().copied())
        .collect();
    let covariates = Covariates::new(covariate_names(p), x);
    let units = network.unit_count();

    let design = BernoulliDesign::new(config.alpha)?;
    let mapping = ExposureMapping::threshold(config.q)?;
    let assignment = crate::design::assign_bernoulli(&network, &design, derive_seed(seed, 3));
    let exposures = crate::design::compute_exposures(&network, &assignment, &mapping)?;

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 4));
    let potential: Vec<[f64; 4]> = (0..units)
        .map(|u| {
            let (tau, delta) = effects(covariates.row(u));
            let y00: f64 = rng.sample(StandardNormal);
            let y11: f64 = rng.sample(StandardNormal);
            [y00, y00 + tau, y00 + delta, y11]
        })
        .collect();
    let outcomes: Vec<f64> = (0..units)
        .map(|u| potential[u][JointExposure::new(assignment[u], exposures[u]).index()])
        .collect();

    let engine = PairwiseEngine::new(design, mapping);
    let dataset = Dataset::build(Arc::new(network), engine, &assignment, &outcomes, &covariates)?;
    let (tau, delta) = dataset
        .units()
        .iter()
        .map(|&u| effects(covariates.row(u)))
        .unzip();
    Ok(Scenario {
        dataset,
        truth: GroundTruth::default(),
        tau,
        delta,
        potential,
        assignment,
        covariates,
    })
}

/// Rule-matching semantics for discovered leaves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RuleMatching {
    /// Leaf constraints equal the rule exactly.
    Exact,
    /// Leaf constraints include the rule (refinements count).
    Refinement,
}

/// Binary-covariate rule of a leaf; `None` if any constraint is not a
/// 0/1 threshold.
pub fn leaf_rule(leaf: &Leaf) -> Option<Rule> {
    let mut rule: Rule = leaf
        .constraints
        .iter()
        .map(|c| match c.relation {
            Relation::Le if (0.0..1.0).contains(&c.cutoff) => Some((c.covariate, 0)),
            Relation::Gt if (0.0..1.0).contains(&c.cutoff) => Some((c.covariate, 1)),
            Relation::Eq if c.cutoff == 0.0 || c.cutoff == 1.0 => Some((c.covariate, c.cutoff as u8)),
            _ => None,
        })
        .collect::<Option<_>>()?;
    rule.sort();
    Some(rule)
}

fn rule_matches(found: &Rule, truth: &Rule, matching: RuleMatching) -> bool {
    match matching {
        RuleMatching::Exact => found == truth,
        RuleMatching::Refinement => truth.iter().all(|t| found.contains(t)),
    }
}

/// Number of true rules recovered by some terminal leaf.
pub fn count_correct_rules(tree: &NetworkCausalTree, rules: &[Rule], matching: RuleMatching) -> usize {
    let found: Vec<Rule> = tree
        .leaves()
        .filter_map(|n| leaf_rule(&tree.leaf_of(n.id)))
        .collect();
    rules
        .iter()
        .filter(|r| found.iter().any(|f| rule_matches(f, r, matching)))
        .count()
}

/// Truth and (optional) interval estimate for one estimation unit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitScore {
    pub truth: f64,
    /// `(point, ci_low, ci_high)`; `None` when the leaf estimate is unavailable.
    pub estimate: Option<(f64, f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UnitMetrics {
    pub bias: f64,
    pub mse: f64,
    pub coverage: f64,
    pub units: usize,
    pub excluded: usize,
}

/// Bias `mean(truth − estimate)`, MSE and interval coverage over units with
/// an available estimate. `None` when no unit has one.
pub fn unit_metrics(scores: &[UnitScore]) -> Option<UnitMetrics> {
    let mut m = UnitMetrics::default();
    for s in scores {
        match s.estimate {
            Some((point, lo, hi)) => {
                let err = s.truth - point;
                m.bias += err;
                m.mse += err * err;
                m.coverage += (lo <= s.truth && s.truth <= hi) as u8 as f64;
                m.units += 1;
            }
            None => m.excluded += 1,
        }
    }
    if m.units == 0 {
        return None;
    }
    let n = m.units as f64;
    m.bias /= n;
    m.mse /= n;
    m.coverage /= n;
    Some(m)
}

/// Which effect a metric row refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Effect {
    Tau,
    Delta,
}

impl Effect {
    pub fn name(self) -> &'static str {
        match self {
            Self::Tau => "tau",
            Self::Delta => "delta",
        }
    }

    pub fn contrast(self) -> Contrast {
        match self {
            Self::Tau => Contrast::TREATMENT,
            Self::Delta => Contrast::SPILLOVER,
        }
    }
}

/// Per-replication observation of one true rule leaf.
#[derive(Debug, Clone, Copy, PartialEq)]
struct RuleLeafObs {
    estimate: Option<(f64, f64)>,
    metrics: Option<UnitMetrics>,
}

/// Everything kept from one replication.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationResult {
    pub id: usize,
    /// `(criterion label, rule set label) -> correct rules`.
    pub discovery: Vec<(String, String, usize)>,
    /// `(effect, rule label) -> observation` in discovered rule leaves.
    rule_leaves: Vec<(Effect, String, RuleLeafObs)>,
    /// Pooled over discovered true-rule leaves.
    pub rules: Vec<(Effect, Option<UnitMetrics>)>,
    /// Over all estimation units.
    pub all: Vec<(Effect, Option<UnitMetrics>)>,
}

pub fn rule_label(rule: &Rule, names: &[String]) -> String {
    rule.iter()
        .map(|&(k, v)| format!("{}={v}", names.get(k).cloned().unwrap_or_else(|| format!("x{k}"))))
        .collect::<Vec<_>>()
        .join("&")
}

/// Criteria grown in every replication: label and criterion.
pub fn replication_criteria() -> [(&'static str, Criterion); 3] {
    [
        ("composite", Criterion::Composite),
        ("single_tau", Criterion::Single(Contrast::TREATMENT)),
        ("single_delta", Criterion::Single(Contrast::SPILLOVER)),
    ]
}

/// Trees used in the replications. The simulation scores discovery by exact
/// rule matching, so the default depth is that of the true partitions.
pub fn simulation_tree_params() -> TreeParams {
    TreeParams {
        max_depth: 2,
        ..TreeParams::default()
    }
}

fn unit_scores(tree: &NetworkCausalTree, scenario: &Scenario, rows: &[usize], effect: Effect) -> Vec<UnitScore> {
    let idx = tree.contrasts.iter().position(|&c| c == effect.contrast());
    rows.iter()
        .map(|&r| {
            let truth = match effect {
                Effect::Tau => scenario.tau[r],
                Effect::Delta => scenario.delta[r],
            };
            let node = tree
                .predict_leaf(scenario.dataset.covariates(r))
                .expect("tree covariates come from the dataset");
            let estimate = idx
                .and_then(|i| node.estimates.get(i))
                .filter(|e| e.available)
                .map(|e| {
                    let [lo, hi] = e.ci.expect("available estimate has an interval");
                    (e.point.expect("available estimate has a point"), lo, hi)
                });
            UnitScore { truth, estimate }
        })
        .collect()
}

/// Runs one replication: generate, split, grow all criteria, estimate, score.
pub fn run_replication(
    config: &ScenarioConfig,
    estimands: &EstimandSet,
    params: &TreeParams,
    matching: RuleMatching,
    id: usize,
) -> Result<ReplicationResult, SimError> {
    let seed = derive_seed(config.seed, id as u64);
    let scenario = generate_scenario(config, seed)?;
    let ds = &scenario.dataset;
    let split = split_clusters(ds, params.training_fraction, derive_seed(seed, 5))?;
    let est_rows: Vec<usize> = split.estimation_rows(ds).rows().to_vec();
    let names = ds.covariate_names();
    let estimands = estimands.including(Contrast::TREATMENT).including(Contrast::SPILLOVER);

    let mut discovery = Vec::new();
    let mut composite = None;
    for (label, criterion) in replication_criteria() {
        let p = TreeParams { criterion, ..*params };
        let mut tree = grow_tree(ds, &split, &estimands, &p)?;
        for (set, rules) in [
            ("all", scenario.truth.all_rules()),
            ("tau", scenario.truth.tau_rules.clone()),
            ("delta", scenario.truth.delta_rules.clone()),
        ] {
            discovery.push((label.to_string(), set.to_string(), count_correct_rules(&tree, &rules, matching)));
        }
        if criterion == Criterion::Composite {
            estimate_leaves(&mut tree, ds, &split, params.level)?;
            composite = Some(tree);
        }
    }
    let tree = composite.expect("composite tree grown");

    let mut rule_leaves = Vec::new();
    let mut rules_metrics = Vec::new();
    let mut all_metrics = Vec::new();
    for effect in [Effect::Tau, Effect::Delta] {
        let truth_rules = match effect {
            Effect::Tau => &scenario.truth.tau_rules,
            Effect::Delta => &scenario.truth.delta_rules,
        };
        let cidx = tree.contrasts.iter().position(|&c| c == effect.contrast());
        let mut pooled_rows = Vec::new();
        for rule in truth_rules {
            let node = tree
                .leaves()
                .find(|n| leaf_rule(&tree.leaf_of(n.id)).is_some_and(|f| rule_matches(&f, rule, matching)));
            let Some(node) = node else { continue };
            let leaf = tree.leaf_of(node.id);
            let rows: Vec<usize> = est_rows
                .iter()
                .copied()
                .filter(|&r| leaf.contains(ds.covariates(r)))
                .collect();
            let estimate = cidx
                .and_then(|i| node.estimates.get(i))
                .filter(|e| e.available)
                .map(|e| (e.point.unwrap(), e.se.unwrap()));
            let metrics = unit_metrics(&unit_scores(&tree, &scenario, &rows, effect));
            rule_leaves.push((effect, rule_label(rule, names), RuleLeafObs { estimate, metrics }));
            pooled_rows.extend(rows);
        }
        rules_metrics.push((effect, unit_metrics(&unit_scores(&tree, &scenario, &pooled_rows, effect))));
        all_metrics.push((effect, unit_metrics(&unit_scores(&tree, &scenario, &est_rows, effect))));
    }
    Ok(ReplicationResult {
        id,
        discovery,
        rule_leaves,
        rules: rules_metrics,
        all: all_metrics,
    })
}

/// One row of the metrics table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub effect: String,
    pub h: f64,
    /// A true rule label, `rules` (pooled discovered rule leaves) or `all`.
    pub leaf: String,
    pub mean_est: Option<f64>,
    pub mean_se: Option<f64>,
    pub mse: Option<f64>,
    pub bias: Option<f64>,
    pub coverage: Option<f64>,
    /// Replications contributing to the averages.
    pub replications: usize,
    /// Estimation units without an available estimate, summed over replications.
    pub excluded_units: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscoveryRow {
    pub criterion: String,
    pub h: f64,
    pub rule_set: String,
    pub mean_correct_rules: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub h: f64,
    pub replications: usize,
    pub failures: usize,
    pub failure_messages: Vec<(usize, String)>,
    pub metrics: Vec<MetricRow>,
    pub discovery: Vec<DiscoveryRow>,
}

impl MetricsReport {
    pub fn failure_rate(&self) -> f64 {
        self.failures as f64 / self.replications.max(1) as f64
    }

    pub fn metric(&self, effect: &str, leaf: &str) -> Option<&MetricRow> {
        self.metrics.iter().find(|m| m.effect == effect && m.leaf == leaf)
    }

    pub fn discovery(&self, criterion: &str, rule_set: &str) -> Option<f64> {
        self.discovery
            .iter()
            .find(|d| d.criterion == criterion && d.rule_set == rule_set)
            .map(|d| d.mean_correct_rules)
    }
}

fn mean_of(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// `(point, se)` of a leaf and the unit metrics scored in it.
type LeafObservation = (Option<(f64, f64)>, Option<UnitMetrics>);

fn metric_row(effect: Effect, h: f64, leaf: String, obs: &[LeafObservation]) -> MetricRow {
    let ests: Vec<(f64, f64)> = obs.iter().filter_map(|o| o.0).collect();
    let ms: Vec<UnitMetrics> = obs.iter().filter_map(|o| o.1).collect();
    let pick = |f: fn(&UnitMetrics) -> f64| mean_of(&ms.iter().map(f).collect::<Vec<_>>());
    MetricRow {
        effect: effect.name().into(),
        h,
        leaf,
        mean_est: mean_of(&ests.iter().map(|e| e.0).collect::<Vec<_>>()),
        mean_se: mean_of(&ests.iter().map(|e| e.1).collect::<Vec<_>>()),
        mse: pick(|m| m.mse),
        bias: pick(|m| m.bias),
        coverage: pick(|m| m.coverage),
        replications: ms.len(),
        excluded_units: ms.iter().map(|m| m.excluded).sum(),
    }
}

/// Deterministic fold of replication results (sorted by id).
pub fn aggregate(config: &ScenarioConfig, results: Vec<Result<ReplicationResult, SimError>>) -> MetricsReport {
    let mut ok = Vec::new();
    let mut failure_messages = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(r) => ok.push(r),
            Err(e) => failure_messages.push((i, e.to_string())),
        }
    }
    ok.sort_by_key(|r| r.id);
    let h = config.h;
    let mut metrics = Vec::new();
    let truth = ground_truth(config.scenario, h);
    let names = covariate_names(config.covariates);
    for effect in [Effect::Tau, Effect::Delta] {
        let rules = match effect {
            Effect::Tau => &truth.tau_rules,
            Effect::Delta => &truth.delta_rules,
        };
        for rule in rules {
            let label = rule_label(rule, &names);
            let obs: Vec<_> = ok
                .iter()
                .flat_map(|r| r.rule_leaves.iter())
                .filter(|(e, l, _)| *e == effect && *l == label)
                .map(|(_, _, o)| (o.estimate, o.metrics))
                .collect();
            metrics.push(metric_row(effect, h, label, &obs));
        }
        for (leaf, pick) in [("rules", 0usize), ("all", 1)] {
            let obs: Vec<_> = ok
                .iter()
                .map(|r| {
                    let src = if pick == 0 { &r.rules } else { &r.all };
                    (None, src.iter().find(|(e, _)| *e == effect).and_then(|(_, m)| *m))
                })
                .collect();
            metrics.push(metric_row(effect, h, leaf.into(), &obs));
        }
    }
    let mut sums: BTreeMap<(usize, String, String), (f64, usize)> = BTreeMap::new();
    for r in &ok {
        for (pos, (crit, set, count)) in r.discovery.iter().enumerate() {
            let e = sums.entry((pos, crit.clone(), set.clone())).or_insert((0.0, 0));
            e.0 += *count as f64;
            e.1 += 1;
        }
    }
    let discovery = sums
        .into_iter()
        .map(|((_, criterion, rule_set), (s, n))| DiscoveryRow {
            criterion,
            h,
            rule_set,
            mean_correct_rules: s / n as f64,
        })
        .collect();
    MetricsReport {
        h,
        replications: config.reps,
        failures: failure_messages.len(),
        failure_messages,
        metrics,
        discovery,
    }
}

/// Runs `config.reps` replications in parallel on the current rayon pool.
/// Results do not depend on the pool size.
pub fn run_replications(
    config: &ScenarioConfig,
    estimands: &EstimandSet,
    params: &TreeParams,
    matching: RuleMatching,
) -> Result<MetricsReport, SimError> {
    config.validate()?;
    let results: Vec<_> = (0..config.reps)
        .into_par_iter()
        .map(|id| run_replication(config, estimands, params, matching, id))
        .collect();
    Ok(aggregate(config, results))
}

/// Default composite estimand set: treatment and spillover, equal weights.
pub fn default_estimands() -> EstimandSet {
    EstimandSet::new(vec![(Contrast::TREATMENT, 0.5), (Contrast::SPILLOVER, 0.5)]).expect("valid weights")
}
