//! Treatment assignment, threshold exposure mapping and exposure probabilities
//! under unit-level Bernoulli randomization.
//!
//! Marginal probabilities use the closed-form binomial tail. Pairwise
//! probabilities dispatch on the overlap of the two units' dependency sets
//! (the unit itself plus its out-neighbors):
//!
//! * disjoint sets or different clusters: product of marginals;
//! * overlapping sets with a joint support of at most
//!   [`PairwiseEngine::enumeration_cutoff`] nodes: exhaustive enumeration;
//! * larger supports: a closed inclusion–exclusion form when `q = 1`,
//!   otherwise a seeded Monte Carlo estimate that carries its standard error.

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, RwLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netgraph::{ClusteredNetwork, UnitRef};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DesignError {
    #[error("assignment probability {0} outside [0, 1]")]
    InvalidAlpha(f64),
    #[error("exposure threshold must be at least 1")]
    InvalidThreshold,
    #[error("condition {condition} has zero probability for a unit of degree {degree}")]
    PositivityViolation { condition: JointExposure, degree: usize },
    #[error("assignment vector has {got} entries, network has {expected} units")]
    AssignmentLength { expected: usize, got: usize },
}

/// Joint individual treatment and binary network exposure `(w, g)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct JointExposure {
    pub w: u8,
    pub g: u8,
}

impl JointExposure {
    pub const C00: Self = Self { w: 0, g: 0 };
    pub const C10: Self = Self { w: 1, g: 0 };
    pub const C01: Self = Self { w: 0, g: 1 };
    pub const C11: Self = Self { w: 1, g: 1 };

    /// All four conditions in table order `00, 10, 01, 11`.
    pub const ALL: [Self; 4] = [Self::C00, Self::C10, Self::C01, Self::C11];

    pub fn new(w: u8, g: u8) -> Self {
        debug_assert!(w <= 1 && g <= 1);
        Self { w, g }
    }

    /// Position in the `00, 10, 01, 11` ordering.
    pub fn index(self) -> usize {
        (self.w + 2 * self.g) as usize
    }

    pub fn from_index(idx: usize) -> Self {
        Self::ALL[idx]
    }
}

impl fmt::Display for JointExposure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.w, self.g)
    }
}

/// `G = 1` iff at least `threshold` out-neighbors are treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExposureMapping {
    threshold: u32,
}

impl ExposureMapping {
    pub fn threshold(q: u32) -> Result<Self, DesignError> {
        if q == 0 {
            return Err(DesignError::InvalidThreshold);
        }
        Ok(Self { threshold: q })
    }

    pub fn q(&self) -> u32 {
        self.threshold
    }

    pub fn exposure(&self, treated_neighbors: usize) -> u8 {
        (treated_neighbors >= self.threshold as usize) as u8
    }
}

impl Default for ExposureMapping {
    fn default() -> Self {
        Self { threshold: 1 }
    }
}

/// Independent Bernoulli assignment with unit-level probability `alpha`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BernoulliDesign {
    alpha: f64,
}

impl BernoulliDesign {
    pub fn new(alpha: f64) -> Result<Self, DesignError> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(DesignError::InvalidAlpha(alpha));
        }
        Ok(Self { alpha })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    fn treatment_probability(&self, w: u8) -> f64 {
        if w == 1 {
            self.alpha
        } else {
            1.0 - self.alpha
        }
    }
}

pub fn assign_bernoulli(network: &ClusteredNetwork, design: &BernoulliDesign, seed: u64) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..network.unit_count())
        .map(|_| rng.random_bool(design.alpha()) as u8)
        .collect()
}

/// Network exposure of every unit given a full assignment vector (global order).
pub fn compute_exposures(
    network: &ClusteredNetwork,
    assignment: &[u8],
    mapping: &ExposureMapping,
) -> Result<Vec<u8>, DesignError> {
    if assignment.len() != network.unit_count() {
        return Err(DesignError::AssignmentLength {
            expected: network.unit_count(),
            got: assignment.len(),
        });
    }
    Ok(network
        .units()
        .map(|u| {
            let base = network.global_index(UnitRef { cluster: u.cluster, node: 0 });
            let treated = network
                .out_neighbors(u)
                .iter()
                .filter(|&&j| assignment[base + j] == 1)
                .count();
            mapping.exposure(treated)
        })
        .collect())
}

/// Whether `(w, g)` is impossible for a unit of the given degree. Decided
/// structurally so that underflow never masquerades as a positivity failure.
pub fn is_structural_zero(degree: usize, design: &BernoulliDesign, mapping: &ExposureMapping, c: JointExposure) -> bool {
    let a = design.alpha();
    let reachable = degree >= mapping.q() as usize;
    (c.w == 1 && a == 0.0)
        || (c.w == 0 && a == 1.0)
        || (c.g == 1 && (!reachable || a == 0.0))
        || (c.g == 0 && a == 1.0 && reachable)
}

/// Splits global unit indices into (eligible, excluded) by positivity over all
/// four conditions.
pub fn positivity_filter(
    network: &ClusteredNetwork,
    mapping: &ExposureMapping,
    design: &BernoulliDesign,
) -> (Vec<usize>, Vec<usize>) {
    let mut eligible = Vec::new();
    let mut excluded = Vec::new();
    for (g, u) in network.units().enumerate() {
        let degree = network.degree(u);
        if JointExposure::ALL
            .iter()
            .any(|&c| is_structural_zero(degree, design, mapping, c))
        {
            excluded.push(g);
        } else {
            eligible.push(g);
        }
    }
    (eligible, excluded)
}

/// `(P(X < q), P(X >= q))` for `X ~ Binomial(n, p)`, summed in log space.
pub fn binomial_tails(n: usize, p: f64, q: usize) -> (f64, f64) {
    if n < q {
        return (1.0, 0.0);
    }
    if p <= 0.0 {
        return (1.0, 0.0);
    }
    if p >= 1.0 {
        return (0.0, 1.0);
    }
    let ln_p = p.ln();
    let ln_1mp = (-p).ln_1p();
    let log_pmf = |l: usize, ln_choose: f64| ln_choose + l as f64 * ln_p + (n - l) as f64 * ln_1mp;

    let mut ln_choose = 0.0;
    let mut lower = 0.0;
    for l in 0..q {
        lower += log_pmf(l, ln_choose).exp();
        ln_choose += ((n - l) as f64).ln() - ((l + 1) as f64).ln();
    }
    if lower <= 0.5 {
        return (lower, 1.0 - lower);
    }
    // upper tail is the small one: sum it directly
    let mut upper = 0.0;
    for l in q..=n {
        upper += log_pmf(l, ln_choose).exp();
        if l < n {
            ln_choose += ((n - l) as f64).ln() - ((l + 1) as f64).ln();
        }
    }
    (1.0 - upper, upper)
}

/// All four marginal probabilities, in `00, 10, 01, 11` order, without
/// positivity checks.
pub fn marginal_table(degree: usize, design: &BernoulliDesign, mapping: &ExposureMapping) -> [f64; 4] {
    let (lower, upper) = binomial_tails(degree, design.alpha(), mapping.q() as usize);
    let mut out = [0.0; 4];
    for c in JointExposure::ALL {
        let exposure = if c.g == 1 { upper } else { lower };
        out[c.index()] = design.treatment_probability(c.w) * exposure;
    }
    out
}

/// Closed-form `π(w, g)` for a unit of the given degree.
pub fn marginal_probability(
    degree: usize,
    design: &BernoulliDesign,
    mapping: &ExposureMapping,
    c: JointExposure,
) -> Result<f64, DesignError> {
    if is_structural_zero(degree, design, mapping, c) {
        return Err(DesignError::PositivityViolation { condition: c, degree });
    }
    Ok(marginal_table(degree, design, mapping)[c.index()])
}

/// True iff the dependency sets `N_i ∪ {i}` and `N_j ∪ {j}` intersect.
pub fn dependency_overlap(network: &ClusteredNetwork, _mapping: &ExposureMapping, i: UnitRef, j: UnitRef) -> bool {
    if i.cluster != j.cluster {
        return false;
    }
    if i == j {
        return true;
    }
    let ni = network.out_neighbors(i);
    let nj = network.out_neighbors(j);
    if ni.binary_search(&j.node).is_ok() || nj.binary_search(&i.node).is_ok() {
        return true;
    }
    // both sorted
    let (mut a, mut b) = (0, 0);
    while a < ni.len() && b < nj.len() {
        match ni[a].cmp(&nj[b]) {
            std::cmp::Ordering::Less => a += 1,
            std::cmp::Ordering::Greater => b += 1,
            std::cmp::Ordering::Equal => return true,
        }
    }
    false
}

/// How a pairwise table was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PairwiseMethod {
    SameUnit,
    Independent,
    Enumeration,
    InclusionExclusion,
    MonteCarlo,
}

impl fmt::Display for PairwiseMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::SameUnit => "same_unit",
            Self::Independent => "independent",
            Self::Enumeration => "enumeration",
            Self::InclusionExclusion => "inclusion_exclusion",
            Self::MonteCarlo => "monte_carlo",
        };
        f.write_str(s)
    }
}

/// `probs[a][b] = P((W_i, G_i) = a, (W_j, G_j) = b)` with conditions indexed
/// by [`JointExposure::index`].
#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseTable {
    pub probs: [[f64; 4]; 4],
    pub method: PairwiseMethod,
    /// Monte Carlo standard errors, when the table is an estimate.
    pub std_errors: Option<[[f64; 4]; 4]>,
}

impl PairwiseTable {
    pub fn get(&self, a: JointExposure, b: JointExposure) -> f64 {
        self.probs[a.index()][b.index()]
    }

    pub fn transposed(&self) -> Self {
        let mut probs = [[0.0; 4]; 4];
        let mut ses = self.std_errors.map(|_| [[0.0; 4]; 4]);
        for a in 0..4 {
            for b in 0..4 {
                probs[b][a] = self.probs[a][b];
                if let (Some(dst), Some(src)) = (ses.as_mut(), self.std_errors.as_ref()) {
                    dst[b][a] = src[a][b];
                }
            }
        }
        Self {
            probs,
            method: self.method,
            std_errors: ses,
        }
    }

    pub fn is_exact(&self) -> bool {
        self.method != PairwiseMethod::MonteCarlo
    }
}

/// Pairwise-probability calculator with configurable dispatch thresholds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairwiseEngine {
    pub design: BernoulliDesign,
    pub mapping: ExposureMapping,
    /// Largest joint support enumerated exhaustively.
    pub enumeration_cutoff: usize,
    pub monte_carlo_draws: usize,
    pub monte_carlo_seed: u64,
}

impl PairwiseEngine {
    pub const DEFAULT_CUTOFF: usize = 25;
    pub const DEFAULT_DRAWS: usize = 100_000;

    pub fn new(design: BernoulliDesign, mapping: ExposureMapping) -> Self {
        Self {
            design,
            mapping,
            enumeration_cutoff: Self::DEFAULT_CUTOFF,
            monte_carlo_draws: Self::DEFAULT_DRAWS,
            monte_carlo_seed: 0x6e63_7470,
        }
    }

    pub fn table(&self, network: &ClusteredNetwork, i: UnitRef, j: UnitRef) -> PairwiseTable {
        if i == j {
            let m = marginal_table(network.degree(i), &self.design, &self.mapping);
            let mut probs = [[0.0; 4]; 4];
            for a in 0..4 {
                probs[a][a] = m[a];
            }
            return PairwiseTable {
                probs,
                method: PairwiseMethod::SameUnit,
                std_errors: None,
            };
        }
        if !dependency_overlap(network, &self.mapping, i, j) {
            let mi = marginal_table(network.degree(i), &self.design, &self.mapping);
            let mj = marginal_table(network.degree(j), &self.design, &self.mapping);
            let mut probs = [[0.0; 4]; 4];
            for a in 0..4 {
                for b in 0..4 {
                    probs[a][b] = mi[a] * mj[b];
                }
            }
            return PairwiseTable {
                probs,
                method: PairwiseMethod::Independent,
                std_errors: None,
            };
        }
        let support = JointSupport::new(network, i, j);
        if support.nodes.len() <= self.enumeration_cutoff {
            support.enumerate(&self.design, &self.mapping)
        } else if self.mapping.q() == 1 {
            support.inclusion_exclusion(&self.design)
        } else {
            let seed = self.monte_carlo_seed ^ ((i.cluster as u64) << 40) ^ ((i.node as u64) << 20) ^ j.node as u64;
            support.monte_carlo(&self.design, &self.mapping, self.monte_carlo_draws, seed)
        }
    }
}

/// Joint support `N_i ∪ N_j ∪ {i, j}` of two same-cluster units, in local
/// node ids.
struct JointSupport {
    nodes: Vec<usize>,
    i_pos: usize,
    j_pos: usize,
    ni: Vec<usize>,
    nj: Vec<usize>,
}

impl JointSupport {
    fn new(network: &ClusteredNetwork, i: UnitRef, j: UnitRef) -> Self {
        let ni = network.out_neighbors(i);
        let nj = network.out_neighbors(j);
        let mut nodes: Vec<usize> = ni.iter().chain(nj).copied().chain([i.node, j.node]).collect();
        nodes.sort_unstable();
        nodes.dedup();
        let pos = |n: usize| nodes.binary_search(&n).unwrap();
        Self {
            i_pos: pos(i.node),
            j_pos: pos(j.node),
            ni: ni.iter().map(|&n| pos(n)).collect(),
            nj: nj.iter().map(|&n| pos(n)).collect(),
            nodes,
        }
    }

    fn enumerate(&self, design: &BernoulliDesign, mapping: &ExposureMapping) -> PairwiseTable {
        let size = self.nodes.len();
        let a = design.alpha();
        let weight: Vec<f64> = (0..=size)
            .map(|k| a.powi(k as i32) * (1.0 - a).powi((size - k) as i32))
            .collect();
        let mask_i: u64 = self.ni.iter().map(|&p| 1u64 << p).sum();
        let mask_j: u64 = self.nj.iter().map(|&p| 1u64 << p).sum();
        let q = mapping.q();
        let mut probs = [[0.0; 4]; 4];
        for m in 0u64..(1u64 << size) {
            let wi = (m >> self.i_pos) & 1;
            let wj = (m >> self.j_pos) & 1;
            let gi = ((m & mask_i).count_ones() >= q) as u64;
            let gj = ((m & mask_j).count_ones() >= q) as u64;
            probs[(wi + 2 * gi) as usize][(wj + 2 * gj) as usize] += weight[m.count_ones() as usize];
        }
        PairwiseTable {
            probs,
            method: PairwiseMethod::Enumeration,
            std_errors: None,
        }
    }

    /// Exact form for `q = 1`: with `W_i`, `W_j` fixed, `G_i = 0` iff no
    /// treated node in the free part of `N_i`, and the joint law follows from
    /// inclusion–exclusion over the free, shared and private neighbor sets.
    fn inclusion_exclusion(&self, design: &BernoulliDesign) -> PairwiseTable {
        let free = |set: &[usize]| -> Vec<usize> {
            set.iter()
                .copied()
                .filter(|&p| p != self.i_pos && p != self.j_pos)
                .collect()
        };
        let fi = free(&self.ni);
        let fj = free(&self.nj);
        let shared = fi.iter().filter(|p| fj.contains(p)).count() as i32;
        let only_i = fi.len() as i32 - shared;
        let only_j = fj.len() as i32 - shared;
        let j_in_ni = self.ni.contains(&self.j_pos);
        let i_in_nj = self.nj.contains(&self.i_pos);

        let a = design.alpha();
        let z = 1.0 - a;
        let mut probs = [[0.0; 4]; 4];
        for wi in 0..2u8 {
            for wj in 0..2u8 {
                let forced_i = j_in_ni && wj == 1;
                let forced_j = i_in_nj && wi == 1;
                let p0i = if forced_i { 0.0 } else { z.powi(only_i + shared) };
                let p0j = if forced_j { 0.0 } else { z.powi(only_j + shared) };
                let p00 = if forced_i || forced_j {
                    0.0
                } else {
                    z.powi(only_i + only_j + shared)
                };
                let g00 = p00;
                let g01 = p0i - p00;
                let g10 = p0j - p00;
                let g11 = ((1.0 - p0i) - (p0j - p00)).max(0.0);
                let pw = design.treatment_probability(wi) * design.treatment_probability(wj);
                for (gi, gj, v) in [(0u8, 0u8, g00), (0, 1, g01), (1, 0, g10), (1, 1, g11)] {
                    let ci = JointExposure::new(wi, gi).index();
                    let cj = JointExposure::new(wj, gj).index();
                    probs[ci][cj] = pw * v;
                }
            }
        }
        PairwiseTable {
            probs,
            method: PairwiseMethod::InclusionExclusion,
            std_errors: None,
        }
    }

    fn monte_carlo(&self, design: &BernoulliDesign, mapping: &ExposureMapping, draws: usize, seed: u64) -> PairwiseTable {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut counts = [[0usize; 4]; 4];
        let mut w = vec![0u8; self.nodes.len()];
        let q = mapping.q() as usize;
        for _ in 0..draws {
            for slot in w.iter_mut() {
                *slot = rng.random_bool(design.alpha()) as u8;
            }
            let gi = (self.ni.iter().filter(|&&p| w[p] == 1).count() >= q) as u8;
            let gj = (self.nj.iter().filter(|&&p| w[p] == 1).count() >= q) as u8;
            let ci = JointExposure::new(w[self.i_pos], gi).index();
            let cj = JointExposure::new(w[self.j_pos], gj).index();
            counts[ci][cj] += 1;
        }
        let n = draws.max(1) as f64;
        let mut probs = [[0.0; 4]; 4];
        let mut ses = [[0.0; 4]; 4];
        for a in 0..4 {
            for b in 0..4 {
                let p = counts[a][b] as f64 / n;
                probs[a][b] = p;
                ses[a][b] = (p * (1.0 - p) / n).sqrt();
            }
        }
        PairwiseTable {
            probs,
            method: PairwiseMethod::MonteCarlo,
            std_errors: Some(ses),
        }
    }
}

/// One pairwise probability with its provenance.
pub fn pairwise_probability(
    network: &ClusteredNetwork,
    design: &BernoulliDesign,
    mapping: &ExposureMapping,
    i: UnitRef,
    j: UnitRef,
    ci: JointExposure,
    cj: JointExposure,
) -> (f64, PairwiseMethod) {
    let table = PairwiseEngine::new(*design, *mapping).table(network, i, j);
    (table.get(ci, cj), table.method)
}

/// Marginal table for every unit plus memoized pairwise queries.
///
/// Pure function of (network, design, mapping); the cache is safe for
/// concurrent readers.
#[derive(Debug)]
pub struct ProbabilityTable {
    network: Arc<ClusteredNetwork>,
    engine: PairwiseEngine,
    marginals: Vec<[f64; 4]>,
    cache: RwLock<HashMap<(usize, usize), PairwiseTable>>,
}

impl ProbabilityTable {
    pub fn new(network: Arc<ClusteredNetwork>, engine: PairwiseEngine) -> Self {
        let marginals = network
            .units()
            .map(|u| marginal_table(network.degree(u), &engine.design, &engine.mapping))
            .collect();
        Self {
            network,
            engine,
            marginals,
            cache: RwLock::new(HashMap::new()),
        }
    }

    pub fn network(&self) -> &ClusteredNetwork {
        &self.network
    }

    pub fn engine(&self) -> &PairwiseEngine {
        &self.engine
    }

    /// Marginals of a unit by global index, `00, 10, 01, 11` order.
    pub fn marginal(&self, unit: usize) -> [f64; 4] {
        self.marginals[unit]
    }

    pub fn marginals(&self) -> &[[f64; 4]] {
        &self.marginals
    }

    pub fn pairwise(&self, i: usize, j: usize) -> PairwiseTable {
        let key = (i.min(j), i.max(j));
        let cached = self.cache.read().expect("cache poisoned").get(&key).cloned();
        let table = match cached {
            Some(t) => t,
            None => {
                let t = self
                    .engine
                    .table(&self.network, self.network.unit_at(key.0), self.network.unit_at(key.1));
                self.cache.write().expect("cache poisoned").insert(key, t.clone());
                t
            }
        };
        if i <= j {
            table
        } else {
            table.transposed()
        }
    }
}
