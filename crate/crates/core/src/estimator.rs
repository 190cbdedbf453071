//! Horvitz–Thompson estimators of leaf-specific average potential outcomes
//! and causal contrasts, with conservative variance and covariance estimators.
//!
//! All sums run over a [`Selection`] of dataset rows (a leaf, possibly
//! restricted to a subset of clusters). Only same-cluster pairs with
//! overlapping dependency sets are visited by the pair loops; every other pair
//! has `π_ij = π_i π_j` and contributes exactly zero.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::design::{
    compute_exposures, positivity_filter, DesignError, JointExposure, PairwiseEngine, PairwiseMethod,
};
use crate::netgraph::{ClusteredNetwork, UnitRef};
use crate::stats::normal_quantile;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimatorError {
    #[error("no unit in the leaf has exposure condition {0}")]
    EmptyCell(JointExposure),
    #[error("leaf has no members")]
    EmptyLeaf,
    #[error("confidence level {0} outside (0, 1)")]
    InvalidLevel(f64),
    #[error("{what} has {got} entries, expected {expected}")]
    LengthMismatch { what: &'static str, expected: usize, got: usize },
    #[error("treatment of unit {unit} is {value}, expected 0 or 1")]
    InvalidTreatment { unit: usize, value: u8 },
    #[error(transparent)]
    Design(#[from] DesignError),
}

/// Causal contrast between two exposure conditions. Serialized as its
/// four-digit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Contrast {
    pub treated: JointExposure,
    pub control: JointExposure,
}

impl Contrast {
    /// Main treatment effect `(1,0) − (0,0)`.
    pub const TREATMENT: Self = Self::new(JointExposure::C10, JointExposure::C00);
    /// Main spillover effect `(0,1) − (0,0)`.
    pub const SPILLOVER: Self = Self::new(JointExposure::C01, JointExposure::C00);
    pub const TREATMENT_EXPOSED: Self = Self::new(JointExposure::C11, JointExposure::C01);
    pub const SPILLOVER_TREATED: Self = Self::new(JointExposure::C11, JointExposure::C10);
    pub const OVERALL: Self = Self::new(JointExposure::C11, JointExposure::C00);

    /// The five supported contrasts, in canonical order.
    pub const ALL: [Self; 5] = [
        Self::TREATMENT,
        Self::SPILLOVER,
        Self::TREATMENT_EXPOSED,
        Self::SPILLOVER_TREATED,
        Self::OVERALL,
    ];

    pub const fn new(treated: JointExposure, control: JointExposure) -> Self {
        Self { treated, control }
    }

    /// Four-digit code `w g w' g'`, e.g. `"1000"`.
    pub fn code(&self) -> String {
        format!(
            "{}{}{}{}",
            self.treated.w, self.treated.g, self.control.w, self.control.g
        )
    }

    pub fn from_code(code: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.code() == code)
    }
}

impl From<Contrast> for String {
    fn from(c: Contrast) -> Self {
        c.code()
    }
}

impl TryFrom<String> for Contrast {
    type Error = String;

    fn try_from(code: String) -> Result<Self, Self::Error> {
        Self::from_code(&code).ok_or_else(|| format!("unknown contrast code {code:?}"))
    }
}

impl fmt::Display for Contrast {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.code())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CovariateKind {
    Binary,
    Numeric,
}

/// Row-major covariate matrix with names and kinds.
#[derive(Debug, Clone, PartialEq)]
pub struct Covariates {
    pub names: Vec<String>,
    pub kinds: Vec<CovariateKind>,
    /// `values[unit * p + k]`
    pub values: Vec<f64>,
}

impl Covariates {
    /// Kinds are inferred: a column is binary iff every value is 0 or 1.
    pub fn new(names: Vec<String>, values: Vec<f64>) -> Self {
        let p = names.len();
        let kinds = (0..p)
            .map(|k| {
                let binary = values
                    .iter()
                    .skip(k)
                    .step_by(p.max(1))
                    .all(|&v| v == 0.0 || v == 1.0);
                if binary {
                    CovariateKind::Binary
                } else {
                    CovariateKind::Numeric
                }
            })
            .collect();
        Self { names, kinds, values }
    }

    pub fn width(&self) -> usize {
        self.names.len()
    }

    pub fn rows(&self) -> usize {
        if self.names.is_empty() {
            0
        } else {
            self.values.len() / self.names.len()
        }
    }

    pub fn row(&self, unit: usize) -> &[f64] {
        let p = self.width();
        &self.values[unit * p..(unit + 1) * p]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    Le,
    Gt,
    Eq,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub covariate: usize,
    pub relation: Relation,
    pub cutoff: f64,
}

impl Constraint {
    pub fn holds(&self, x: &[f64]) -> bool {
        let v = x[self.covariate];
        match self.relation {
            Relation::Le => v <= self.cutoff,
            Relation::Gt => v > self.cutoff,
            Relation::Eq => v == self.cutoff,
        }
    }

    pub fn render(&self, names: &[String]) -> String {
        let op = match self.relation {
            Relation::Le => "<=",
            Relation::Gt => ">",
            Relation::Eq => "==",
        };
        let name = names
            .get(self.covariate)
            .cloned()
            .unwrap_or_else(|| format!("x{}", self.covariate));
        format!("{name}{op}{}", self.cutoff)
    }
}

/// Conjunction of covariate constraints.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Leaf {
    pub constraints: Vec<Constraint>,
}

impl Leaf {
    pub fn root() -> Self {
        Self::default()
    }

    pub fn with(&self, c: Constraint) -> Self {
        debug_assert!(self.constraints.iter().all(|o| o.covariate != c.covariate));
        let mut constraints = self.constraints.clone();
        constraints.push(c);
        Self { constraints }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.constraints.iter().all(|c| c.holds(x))
    }

    pub fn render(&self, names: &[String]) -> String {
        if self.constraints.is_empty() {
            return "all".into();
        }
        self.constraints
            .iter()
            .map(|c| c.render(names))
            .collect::<Vec<_>>()
            .join(" & ")
    }
}

/// Pairwise table between a row and one of its dependent partners, oriented
/// `probs[own condition][partner condition]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Partner {
    pub row: usize,
    pub probs: [[f64; 4]; 4],
    pub approximate: bool,
}

/// Observed data on the positivity-eligible units of a clustered network,
/// together with their exposure probabilities.
#[derive(Debug, Clone)]
pub struct Dataset {
    network: Arc<ClusteredNetwork>,
    engine: PairwiseEngine,
    /// Global unit index of each row.
    units: Vec<usize>,
    excluded: Vec<usize>,
    cluster: Vec<usize>,
    w: Vec<u8>,
    g: Vec<u8>,
    y: Vec<f64>,
    names: Vec<String>,
    kinds: Vec<CovariateKind>,
    x: Vec<f64>,
    marginals: Vec<[f64; 4]>,
    partners: Arc<Vec<Vec<Partner>>>,
}

impl Dataset {
    /// Computes exposures, drops positivity violators and precomputes the
    /// pairwise tables of every dependent same-cluster pair of rows.
    /// `assignment`, `outcomes` and `covariates` are indexed by global unit.
    pub fn build(
        network: Arc<ClusteredNetwork>,
        engine: PairwiseEngine,
        assignment: &[u8],
        outcomes: &[f64],
        covariates: &Covariates,
    ) -> Result<Self, EstimatorError> {
        let n = network.unit_count();
        check_len("assignment", n, assignment.len())?;
        check_len("outcomes", n, outcomes.len())?;
        if covariates.width() > 0 {
            check_len("covariate rows", n, covariates.rows())?;
        }
        if let Some(unit) = assignment.iter().position(|&w| w > 1) {
            return Err(EstimatorError::InvalidTreatment {
                unit,
                value: assignment[unit],
            });
        }
        let exposures = compute_exposures(&network, assignment, &engine.mapping)?;
        let (eligible, excluded) = positivity_filter(&network, &engine.mapping, &engine.design);

        let mut row_of = vec![usize::MAX; n];
        for (r, &u) in eligible.iter().enumerate() {
            row_of[u] = r;
        }
        let p = covariates.width();
        let cluster = eligible.iter().map(|&u| network.unit_at(u).cluster).collect();
        let marginals = eligible
            .iter()
            .map(|&u| crate::design::marginal_table(network.degree(network.unit_at(u)), &engine.design, &engine.mapping))
            .collect();
        let x = eligible
            .iter()
            .flat_map(|&u| covariates.values[u * p..(u + 1) * p].iter().copied())
            .collect();
        let partners = dependent_partners(&network, &engine, &eligible, &row_of);
        Ok(Self {
            engine,
            units: eligible.clone(),
            excluded,
            cluster,
            w: eligible.iter().map(|&u| assignment[u]).collect(),
            g: eligible.iter().map(|&u| exposures[u]).collect(),
            y: eligible.iter().map(|&u| outcomes[u]).collect(),
            names: covariates.names.clone(),
            kinds: covariates.kinds.clone(),
            x,
            marginals,
            partners: Arc::new(partners),
            network,
        })
    }

    /// Same network, design and covariates under a new assignment and outcome
    /// vector (global unit order). Pairwise tables are shared, not recomputed.
    pub fn with_assignment(&self, assignment: &[u8], outcomes: &[f64]) -> Result<Self, EstimatorError> {
        let n = self.network.unit_count();
        check_len("assignment", n, assignment.len())?;
        check_len("outcomes", n, outcomes.len())?;
        if let Some(unit) = assignment.iter().position(|&w| w > 1) {
            return Err(EstimatorError::InvalidTreatment {
                unit,
                value: assignment[unit],
            });
        }
        let exposures = compute_exposures(&self.network, assignment, &self.engine.mapping)?;
        let mut out = self.clone();
        out.w = self.units.iter().map(|&u| assignment[u]).collect();
        out.g = self.units.iter().map(|&u| exposures[u]).collect();
        out.y = self.units.iter().map(|&u| outcomes[u]).collect();
        Ok(out)
    }

    /// Replaces the outcomes of the eligible rows (row order).
    pub fn with_outcomes(&self, y: Vec<f64>) -> Result<Self, EstimatorError> {
        check_len("outcomes", self.len(), y.len())?;
        let mut out = self.clone();
        out.y = y;
        Ok(out)
    }

    pub fn network(&self) -> &ClusteredNetwork {
        &self.network
    }

    pub fn network_arc(&self) -> Arc<ClusteredNetwork> {
        self.network.clone()
    }

    pub fn engine(&self) -> &PairwiseEngine {
        &self.engine
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    /// Global unit indices of the eligible rows.
    pub fn units(&self) -> &[usize] {
        &self.units
    }

    /// Global unit indices removed by the positivity filter.
    pub fn excluded(&self) -> &[usize] {
        &self.excluded
    }

    pub fn unit_ref(&self, row: usize) -> UnitRef {
        self.network.unit_at(self.units[row])
    }

    pub fn cluster(&self, row: usize) -> usize {
        self.cluster[row]
    }

    pub fn treatment(&self, row: usize) -> u8 {
        self.w[row]
    }

    pub fn exposure(&self, row: usize) -> u8 {
        self.g[row]
    }

    pub fn condition(&self, row: usize) -> JointExposure {
        JointExposure::new(self.w[row], self.g[row])
    }

    pub fn outcome(&self, row: usize) -> f64 {
        self.y[row]
    }

    pub fn outcomes(&self) -> &[f64] {
        &self.y
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.names
    }

    pub fn covariate_kinds(&self) -> &[CovariateKind] {
        &self.kinds
    }

    pub fn covariate_count(&self) -> usize {
        self.names.len()
    }

    pub fn covariates(&self, row: usize) -> &[f64] {
        let p = self.names.len();
        &self.x[row * p..(row + 1) * p]
    }

    pub fn marginal(&self, row: usize, c: JointExposure) -> f64 {
        self.marginals[row][c.index()]
    }

    pub fn partners(&self, row: usize) -> &[Partner] {
        &self.partners[row]
    }

    /// True if any pairwise table is a Monte Carlo estimate.
    pub fn has_approximate_pairs(&self) -> bool {
        self.partners.iter().flatten().any(|p| p.approximate)
    }
}

fn check_len(what: &'static str, expected: usize, got: usize) -> Result<(), EstimatorError> {
    if expected != got {
        return Err(EstimatorError::LengthMismatch { what, expected, got });
    }
    Ok(())
}

/// Rows `j ≠ i` whose dependency set meets that of `i`: the union of `{m}`
/// and the in-neighbors of `m` over `m ∈ N_i ∪ {i}`.
fn dependent_partners(
    network: &ClusteredNetwork,
    engine: &PairwiseEngine,
    eligible: &[usize],
    row_of: &[usize],
) -> Vec<Vec<Partner>> {
    let incoming: Vec<Vec<Vec<usize>>> = network
        .clusters()
        .iter()
        .map(|block| {
            let mut inc = vec![Vec::new(); block.len()];
            for (src, outs) in block.out.iter().enumerate() {
                for &dst in outs {
                    inc[dst].push(src);
                }
            }
            inc
        })
        .collect();
    eligible
        .par_iter()
        .map(|&gi| {
            let ui = network.unit_at(gi);
            let base = network.cluster_range(ui.cluster).start;
            let inc = &incoming[ui.cluster];
            let mut cand: Vec<usize> = Vec::new();
            for &m in network.out_neighbors(ui).iter().chain(std::iter::once(&ui.node)) {
                cand.push(m);
                cand.extend_from_slice(&inc[m]);
            }
            cand.sort_unstable();
            cand.dedup();
            cand.into_iter()
                .filter(|&node| node != ui.node && row_of[base + node] != usize::MAX)
                .map(|node| {
                    let table = engine.table(network, ui, UnitRef { cluster: ui.cluster, node });
                    Partner {
                        row: row_of[base + node],
                        probs: table.probs,
                        approximate: table.method == PairwiseMethod::MonteCarlo,
                    }
                })
                .collect()
        })
        .collect()
}

/// A set of dataset rows with O(1) membership.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    rows: Vec<usize>,
    mask: Vec<bool>,
}

impl Selection {
    pub fn all(ds: &Dataset) -> Self {
        Self::from_rows(ds, (0..ds.len()).collect())
    }

    pub fn from_rows(ds: &Dataset, mut rows: Vec<usize>) -> Self {
        rows.sort_unstable();
        rows.dedup();
        let mut mask = vec![false; ds.len()];
        for &r in &rows {
            mask[r] = true;
        }
        Self { rows, mask }
    }

    pub fn leaf(ds: &Dataset, leaf: &Leaf) -> Self {
        Self::from_rows(ds, (0..ds.len()).filter(|&r| leaf.contains(ds.covariates(r))).collect())
    }

    /// Members satisfying a row predicate.
    pub fn filter(&self, ds: &Dataset, keep: impl Fn(usize) -> bool) -> Self {
        Self::from_rows(ds, self.rows.iter().copied().filter(|&r| keep(r)).collect())
    }

    pub fn rows(&self) -> &[usize] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn contains(&self, row: usize) -> bool {
        self.mask[row]
    }

    pub fn cell_counts(&self, ds: &Dataset) -> [usize; 4] {
        let mut n = [0; 4];
        for &r in &self.rows {
            n[ds.condition(r).index()] += 1;
        }
        n
    }
}

/// Raw Horvitz–Thompson mean; `point` is the HT sum over `N(ℓ)` even when no
/// unit matches (then 0).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellEstimate {
    pub point: f64,
    pub matched: usize,
}

pub fn cell_estimate(ds: &Dataset, sel: &Selection, c: JointExposure) -> CellEstimate {
    let mut sum = 0.0;
    let mut matched = 0;
    for &r in sel.rows() {
        if ds.condition(r) == c {
            sum += ds.outcome(r) / ds.marginal(r, c);
            matched += 1;
        }
    }
    let point = if sel.is_empty() { 0.0 } else { sum / sel.len() as f64 };
    CellEstimate { point, matched }
}

/// Components of the variance estimator of a leaf mean, each already divided
/// by `N(ℓ)²`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct VarianceParts {
    pub within: f64,
    pub cross: f64,
    pub correction: f64,
}

impl VarianceParts {
    pub fn total(&self) -> f64 {
        self.within + self.cross + self.correction
    }
}

pub fn variance_parts(ds: &Dataset, sel: &Selection, c: JointExposure) -> VarianceParts {
    let ci = c.index();
    let mut parts = VarianceParts::default();
    for &i in sel.rows() {
        if ds.condition(i) != c {
            continue;
        }
        let pi = ds.marginal(i, c);
        let yi = ds.outcome(i);
        parts.within += (1.0 - pi) * (yi / pi).powi(2);
        let mut zero_pairs = 0usize;
        for partner in ds.partners(i) {
            let j = partner.row;
            if !sel.contains(j) {
                continue;
            }
            let pij = partner.probs[ci][ci];
            if pij <= 0.0 {
                zero_pairs += 1;
                continue;
            }
            if ds.condition(j) != c {
                continue;
            }
            let pj = ds.marginal(j, c);
            parts.cross += (pij - pi * pj) / pij * yi * ds.outcome(j) / (pi * pj);
        }
        parts.correction += yi * yi / pi * zero_pairs as f64;
    }
    let n2 = (sel.len() as f64).powi(2);
    if n2 > 0.0 {
        parts.within /= n2;
        parts.cross /= n2;
        parts.correction /= n2;
    }
    parts
}

/// Covariance estimator of two leaf means: `first − correction`, each divided
/// by `N(ℓ)²`. The correction runs over ordered pairs with zero joint
/// probability, the unit paired with itself included.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CovarianceParts {
    pub first: f64,
    pub correction: f64,
}

impl CovarianceParts {
    pub fn total(&self) -> f64 {
        self.first - self.correction
    }
}

pub fn covariance_parts(ds: &Dataset, sel: &Selection, a: JointExposure, b: JointExposure) -> CovarianceParts {
    debug_assert_ne!(a, b);
    let (ai, bi) = (a.index(), b.index());
    let mut parts = CovarianceParts::default();
    for &i in sel.rows() {
        let ci = ds.condition(i);
        if ci == a {
            let pi = ds.marginal(i, a);
            let yi = ds.outcome(i);
            // self pair: P(i in a, i in b) = 0
            let mut zero_pairs = 1usize;
            for partner in ds.partners(i) {
                let j = partner.row;
                if !sel.contains(j) {
                    continue;
                }
                let pij = partner.probs[ai][bi];
                if pij <= 0.0 {
                    zero_pairs += 1;
                    continue;
                }
                if ds.condition(j) != b {
                    continue;
                }
                let pj = ds.marginal(j, b);
                parts.first += (pij - pi * pj) / pij * yi * ds.outcome(j) / (pi * pj);
            }
            parts.correction += yi * yi / (2.0 * pi) * zero_pairs as f64;
        } else if ci == b {
            let pj = ds.marginal(i, b);
            let yj = ds.outcome(i);
            let mut zero_pairs = 1usize;
            for partner in ds.partners(i) {
                if sel.contains(partner.row) && partner.probs[bi][ai] <= 0.0 {
                    zero_pairs += 1;
                }
            }
            parts.correction += yj * yj / (2.0 * pj) * zero_pairs as f64;
        }
    }
    let n2 = (sel.len() as f64).powi(2);
    if n2 > 0.0 {
        parts.first /= n2;
        parts.correction /= n2;
    }
    parts
}

/// Unclamped pieces of the effect variance `V̂_a + V̂_b − 2Ĉ`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EffectVarianceParts {
    pub treated: VarianceParts,
    pub control: VarianceParts,
    pub covariance: CovarianceParts,
}

impl EffectVarianceParts {
    pub fn total(&self) -> f64 {
        self.treated.total() + self.control.total() - 2.0 * self.covariance.total()
    }
}

pub fn effect_variance_parts(ds: &Dataset, sel: &Selection, contrast: Contrast) -> EffectVarianceParts {
    EffectVarianceParts {
        treated: variance_parts(ds, sel, contrast.treated),
        control: variance_parts(ds, sel, contrast.control),
        covariance: covariance_parts(ds, sel, contrast.treated, contrast.control),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectEstimate {
    pub contrast: Contrast,
    pub point: f64,
    pub variance: f64,
    pub std_error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Units per condition, `00, 10, 01, 11` order.
    pub n_cell: [usize; 4],
    /// The raw variance estimate was negative and has been set to 0.
    pub variance_clamped: bool,
    /// Some pairwise probability came from Monte Carlo.
    pub approximate: bool,
}

pub fn leaf_mean(ds: &Dataset, leaf: &Leaf, c: JointExposure) -> Result<(f64, usize), EstimatorError> {
    leaf_mean_in(ds, &Selection::leaf(ds, leaf), c)
}

pub fn leaf_mean_in(ds: &Dataset, sel: &Selection, c: JointExposure) -> Result<(f64, usize), EstimatorError> {
    if sel.is_empty() {
        return Err(EstimatorError::EmptyLeaf);
    }
    let est = cell_estimate(ds, sel, c);
    if est.matched == 0 {
        return Err(EstimatorError::EmptyCell(c));
    }
    Ok((est.point, est.matched))
}

pub fn leaf_mean_variance(ds: &Dataset, leaf: &Leaf, c: JointExposure) -> Result<f64, EstimatorError> {
    let sel = Selection::leaf(ds, leaf);
    leaf_mean_in(ds, &sel, c)?;
    Ok(variance_parts(ds, &sel, c).total().max(0.0))
}

pub fn leaf_effect(ds: &Dataset, leaf: &Leaf, contrast: Contrast) -> Result<EffectEstimate, EstimatorError> {
    effect_in(ds, &Selection::leaf(ds, leaf), contrast, 0.95)
}

/// Effect estimate over an arbitrary row selection with a `level` normal CI.
pub fn effect_in(ds: &Dataset, sel: &Selection, contrast: Contrast, level: f64) -> Result<EffectEstimate, EstimatorError> {
    let z = z_value(level)?;
    let (mu_t, _) = leaf_mean_in(ds, sel, contrast.treated)?;
    let (mu_c, _) = leaf_mean_in(ds, sel, contrast.control)?;
    let raw = effect_variance_parts(ds, sel, contrast).total();
    let variance = raw.max(0.0);
    let point = mu_t - mu_c;
    let se = variance.sqrt();
    let approximate = sel
        .rows()
        .iter()
        .any(|&r| ds.partners(r).iter().any(|p| p.approximate && sel.contains(p.row)));
    Ok(EffectEstimate {
        contrast,
        point,
        variance,
        std_error: se,
        ci_low: point - z * se,
        ci_high: point + z * se,
        n_cell: sel.cell_counts(ds),
        variance_clamped: raw < 0.0,
        approximate,
    })
}

fn z_value(level: f64) -> Result<f64, EstimatorError> {
    if !(level > 0.0 && level < 1.0) {
        return Err(EstimatorError::InvalidLevel(level));
    }
    Ok(normal_quantile(0.5 + level / 2.0))
}

pub fn confidence_interval(estimate: &EffectEstimate, level: f64) -> Result<(f64, f64), EstimatorError> {
    let z = z_value(level)?;
    Ok((
        estimate.point - z * estimate.std_error,
        estimate.point + z * estimate.std_error,
    ))
}
