//! Network causal trees: honest recursive partitioning of the covariate space
//! driven by single-contrast or composite heterogeneity criteria.
//!
//! Growth uses only training clusters. A node's contribution to the criterion
//! for contrast `c` is
//!
//! ```text
//! N(ℓ)/N_tr · τ̂_c(ℓ)²  −  [honest] (1/N_tr + 1/N_est) · V̂(τ̂_c(ℓ))
//! ```
//!
//! so a split is scored by its local gain over the parent. The composite
//! criterion weights each contrast by `γ_c = ω_c / τ̂_c(root)²`, fixed at the
//! root.

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use crate::estimator::Contrast;
use crate::estimator::{
    effect_in, CovariateKind, Dataset, EffectEstimate, EstimatorError, Leaf, Relation, Selection,
};
use crate::estimator::Constraint;

/// Minimum improvement for a split to be accepted.
pub const SPLIT_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TreeError {
    #[error("need at least 2 clusters for an honest split, got {0}")]
    TooFewClusters(usize),
    #[error("training fraction {0} outside (0, 1)")]
    InvalidFraction(f64),
    #[error("leaf has {count} training units in cell {cell}, minimum is {min}")]
    MinSizeViolated { cell: String, count: usize, min: usize },
    #[error("whole-sample estimate of contrast {0} is zero; composite weights undefined")]
    ZeroRootEffect(Contrast),
    #[error("invalid estimand set: {0}")]
    InvalidEstimands(String),
    #[error("covariate vector has no entry {0}")]
    MissingCovariate(usize),
    #[error("malformed tree: {0}")]
    Malformed(String),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
}

/// Contrasts of interest with their criterion weights `ω`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimandSet {
    entries: Vec<(Contrast, f64)>,
}

impl EstimandSet {
    pub fn new(mut entries: Vec<(Contrast, f64)>) -> Result<Self, TreeError> {
        if entries.is_empty() {
            return Err(TreeError::InvalidEstimands("no contrasts".into()));
        }
        entries.sort_by_key(|(c, _)| Contrast::ALL.iter().position(|a| a == c));
        for pair in entries.windows(2) {
            if pair[0].0 == pair[1].0 {
                return Err(TreeError::InvalidEstimands(format!("contrast {} listed twice", pair[0].0)));
            }
        }
        for &(c, w) in &entries {
            if !(0.0..=1.0).contains(&w) {
                return Err(TreeError::InvalidEstimands(format!("weight {w} of {c} outside [0, 1]")));
            }
        }
        if entries.iter().all(|&(_, w)| w == 0.0) {
            return Err(TreeError::InvalidEstimands("all weights are zero".into()));
        }
        Ok(Self { entries })
    }

    /// Parses `w1000=0.5,w0100=0.5`.
    pub fn parse(spec: &str) -> Result<Self, TreeError> {
        let mut entries = Vec::new();
        for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| TreeError::InvalidEstimands(format!("expected wCODE=value, got {part:?}")))?;
            let code = key.trim().strip_prefix('w').unwrap_or(key.trim());
            let contrast = Contrast::from_code(code)
                .ok_or_else(|| TreeError::InvalidEstimands(format!("unknown contrast {key:?}")))?;
            let weight: f64 = value
                .trim()
                .parse()
                .map_err(|_| TreeError::InvalidEstimands(format!("bad weight {value:?}")))?;
            entries.push((contrast, weight));
        }
        Self::new(entries)
    }

    pub fn contrasts(&self) -> Vec<Contrast> {
        self.entries.iter().map(|&(c, _)| c).collect()
    }

    pub fn entries(&self) -> &[(Contrast, f64)] {
        &self.entries
    }

    pub fn weight(&self, c: Contrast) -> f64 {
        self.entries
            .iter()
            .find(|(d, _)| *d == c)
            .map_or(0.0, |&(_, w)| w)
    }

    pub fn positive(&self) -> Vec<(Contrast, f64)> {
        self.entries.iter().copied().filter(|&(_, w)| w > 0.0).collect()
    }

    /// The set with `c` appended (weight 0) if missing.
    pub fn including(&self, c: Contrast) -> Self {
        if self.entries.iter().any(|(d, _)| *d == c) {
            return self.clone();
        }
        let mut entries = self.entries.clone();
        entries.push((c, 0.0));
        Self::new(entries).expect("adding a zero weight keeps the set valid")
    }

    pub fn render(&self) -> String {
        self.entries
            .iter()
            .map(|(c, w)| format!("w{c}={w}"))
            .collect::<Vec<_>>()
            .join(",")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Criterion {
    Single(Contrast),
    Composite,
}

impl Criterion {
    /// `single:1000` or `composite`.
    pub fn parse(s: &str) -> Result<Self, TreeError> {
        let s = s.trim();
        if s == "composite" {
            return Ok(Self::Composite);
        }
        let code = s
            .strip_prefix("single:")
            .ok_or_else(|| TreeError::InvalidEstimands(format!("unknown criterion {s:?}")))?;
        let code = code.strip_prefix('w').unwrap_or(code);
        Contrast::from_code(code)
            .map(Self::Single)
            .ok_or_else(|| TreeError::InvalidEstimands(format!("unknown contrast {code:?}")))
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Single(c) => write!(f, "single:{c}"),
            Self::Composite => f.write_str("composite"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_size: usize,
    pub honest: bool,
    pub criterion: Criterion,
    pub training_fraction: f64,
    pub level: f64,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            max_depth: 3,
            min_size: 20,
            honest: true,
            criterion: Criterion::Composite,
            training_fraction: 0.5,
            level: 0.95,
        }
    }
}

/// Cluster-level partition into training and estimation samples.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HonestSplit {
    pub training: Vec<usize>,
    pub estimation: Vec<usize>,
    pub seed: u64,
}

impl HonestSplit {
    pub fn is_training(&self, cluster: usize) -> bool {
        self.training.binary_search(&cluster).is_ok()
    }

    pub fn training_rows(&self, ds: &Dataset) -> Selection {
        Selection::from_rows(ds, (0..ds.len()).filter(|&r| self.is_training(ds.cluster(r))).collect())
    }

    pub fn estimation_rows(&self, ds: &Dataset) -> Selection {
        Selection::from_rows(ds, (0..ds.len()).filter(|&r| !self.is_training(ds.cluster(r))).collect())
    }
}

/// Random split of the network's clusters; `⌈fraction·K⌉` go to training.
pub fn split_clusters(ds: &Dataset, fraction: f64, seed: u64) -> Result<HonestSplit, TreeError> {
    split_cluster_ids(ds.network().cluster_count(), fraction, seed)
}

pub fn split_cluster_ids(k: usize, fraction: f64, seed: u64) -> Result<HonestSplit, TreeError> {
    if k < 2 {
        return Err(TreeError::TooFewClusters(k));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(TreeError::InvalidFraction(fraction));
    }
    let n_tr = ((fraction * k as f64).ceil() as usize).clamp(1, k - 1);
    let mut ids: Vec<usize> = (0..k).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut training = ids[..n_tr].to_vec();
    let mut estimation = ids[n_tr..].to_vec();
    training.sort_unstable();
    estimation.sort_unstable();
    Ok(HonestSplit {
        training,
        estimation,
        seed,
    })
}

/// Sample sizes and rules shared by every criterion evaluation of one grow.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreContext {
    pub honest: bool,
    pub n_tr: usize,
    pub n_est: usize,
    pub min_size: usize,
}

impl ScoreContext {
    fn penalty(&self) -> f64 {
        if self.honest {
            1.0 / self.n_tr as f64 + 1.0 / self.n_est.max(1) as f64
        } else {
            0.0
        }
    }
}

fn check_min_size(ds: &Dataset, leaf: &Selection, min_size: usize) -> Result<(), TreeError> {
    let counts = leaf.cell_counts(ds);
    for (idx, &count) in counts.iter().enumerate() {
        if count < min_size || count == 0 {
            return Err(TreeError::MinSizeViolated {
                cell: crate::design::JointExposure::from_index(idx).to_string(),
                count,
                min: min_size,
            });
        }
    }
    Ok(())
}

/// One leaf's contribution to the single-contrast criterion.
fn leaf_term(ds: &Dataset, leaf: &Selection, contrast: Contrast, ctx: &ScoreContext) -> Result<f64, TreeError> {
    let est = effect_in(ds, leaf, contrast, 0.95)?;
    let mut term = leaf.len() as f64 / ctx.n_tr as f64 * est.point * est.point;
    if ctx.honest {
        term -= ctx.penalty() * est.variance;
    }
    Ok(term)
}

/// Single-contrast criterion of a partition of the training sample (larger
/// is better).
pub fn q_single(ds: &Dataset, partition: &[Selection], contrast: Contrast, ctx: &ScoreContext) -> Result<f64, TreeError> {
    let mut q = 0.0;
    for leaf in partition {
        check_min_size(ds, leaf, ctx.min_size)?;
        q += leaf_term(ds, leaf, contrast, ctx)?;
    }
    Ok(q)
}

/// Composite weights `γ_c = ω_c / τ̂_c(root)²` over positive-weight contrasts.
pub fn composite_weights(ds: &Dataset, root: &Selection, estimands: &EstimandSet) -> Result<Vec<(Contrast, f64)>, TreeError> {
    estimands
        .positive()
        .into_iter()
        .map(|(c, w)| {
            let est = effect_in(ds, root, c, 0.95)?;
            if est.point == 0.0 || !est.point.is_finite() {
                return Err(TreeError::ZeroRootEffect(c));
            }
            Ok((c, w / (est.point * est.point)))
        })
        .collect()
}

pub fn q_composite(ds: &Dataset, partition: &[Selection], gamma: &[(Contrast, f64)], ctx: &ScoreContext) -> Result<f64, TreeError> {
    let mut q = 0.0;
    for &(c, g) in gamma {
        q += g * q_single(ds, partition, c, ctx)?;
    }
    Ok(q)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub covariate: usize,
    pub cutoff: f64,
}

/// Effect estimate as stored in a tree node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeafEstimate {
    pub contrast: Contrast,
    pub point: Option<f64>,
    pub se: Option<f64>,
    pub ci: Option<[f64; 2]>,
    pub cells: [usize; 4],
    pub available: bool,
    pub variance_clamped: bool,
    pub approximate: bool,
}

impl LeafEstimate {
    fn from_result(contrast: Contrast, cells: [usize; 4], r: Result<EffectEstimate, EstimatorError>) -> Self {
        match r {
            Ok(e) => Self {
                contrast,
                point: Some(e.point),
                se: Some(e.std_error),
                ci: Some([e.ci_low, e.ci_high]),
                cells,
                available: true,
                variance_clamped: e.variance_clamped,
                approximate: e.approximate,
            },
            Err(_) => Self {
                contrast,
                point: None,
                se: None,
                ci: None,
                cells,
                available: false,
                variance_clamped: false,
                approximate: false,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub id: usize,
    pub depth: usize,
    pub parent: Option<usize>,
    pub split: Option<Split>,
    pub children: Option<[usize; 2]>,
    /// Training-sample cell counts.
    pub train_cells: [usize; 4],
    /// Training-sample estimates, aligned with the tree's contrasts.
    pub train_points: Vec<Option<f64>>,
    /// Estimation-sample estimates; empty until [`estimate_leaves`] runs.
    pub estimates: Vec<LeafEstimate>,
}

impl TreeNode {
    pub fn is_leaf(&self) -> bool {
        self.children.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkCausalTree {
    pub covariates: Vec<String>,
    pub kinds: Vec<CovariateKind>,
    pub contrasts: Vec<Contrast>,
    pub nodes: Vec<TreeNode>,
}

impl NetworkCausalTree {
    pub fn root(&self) -> &TreeNode {
        &self.nodes[0]
    }

    pub fn leaves(&self) -> impl Iterator<Item = &TreeNode> {
        self.nodes.iter().filter(|n| n.is_leaf())
    }

    pub fn depth(&self) -> usize {
        self.nodes.iter().map(|n| n.depth).max().unwrap_or(0)
    }

    /// Constraints on the path from the root to `id`.
    pub fn leaf_of(&self, id: usize) -> Leaf {
        let mut constraints = Vec::new();
        let mut cur = id;
        while let Some(parent) = self.nodes[cur].parent {
            let p = &self.nodes[parent];
            let split = p.split.expect("parent has a split");
            let [left, _] = p.children.expect("parent has children");
            constraints.push(Constraint {
                covariate: split.covariate,
                relation: if left == cur { Relation::Le } else { Relation::Gt },
                cutoff: split.cutoff,
            });
            cur = parent;
        }
        constraints.reverse();
        Leaf { constraints }
    }

    /// Terminal node containing `x`; values equal to a cutoff go left.
    pub fn predict_leaf(&self, x: &[f64]) -> Result<&TreeNode, TreeError> {
        let mut node = self.root();
        while let (Some(split), Some([l, r])) = (node.split, node.children) {
            let v = *x.get(split.covariate).ok_or(TreeError::MissingCovariate(split.covariate))?;
            if v.is_nan() {
                return Err(TreeError::MissingCovariate(split.covariate));
            }
            node = &self.nodes[if v <= split.cutoff { l } else { r }];
        }
        Ok(node)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("tree serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, TreeError> {
        let tree: Self = serde_json::from_str(s).map_err(|e| TreeError::Malformed(e.to_string()))?;
        tree.validate()?;
        Ok(tree)
    }

    fn validate(&self) -> Result<(), TreeError> {
        if self.nodes.is_empty() {
            return Err(TreeError::Malformed("no nodes".into()));
        }
        for (i, n) in self.nodes.iter().enumerate() {
            if n.id != i {
                return Err(TreeError::Malformed(format!("node {i} has id {}", n.id)));
            }
            if n.split.is_some() != n.children.is_some() {
                return Err(TreeError::Malformed(format!("node {i}: split without children")));
            }
            if let Some(children) = n.children {
                for c in children {
                    if c >= self.nodes.len() || self.nodes[c].parent != Some(i) {
                        return Err(TreeError::Malformed(format!("node {i}: bad child {c}")));
                    }
                }
            }
        }
        Ok(())
    }

    /// Structure only: splits and topology, ignoring payloads.
    pub fn structure(&self) -> Vec<(Option<Split>, Option<[usize; 2]>)> {
        self.nodes.iter().map(|n| (n.split, n.children)).collect()
    }
}

/// Candidate cutoffs of a covariate within a node's training rows.
fn candidate_cutoffs(ds: &Dataset, rows: &[usize], k: usize) -> Vec<f64> {
    if ds.covariate_kinds()[k] == CovariateKind::Binary {
        return vec![0.5];
    }
    let mut vals: Vec<f64> = rows.iter().map(|&r| ds.covariates(r)[k]).collect();
    vals.sort_by(f64::total_cmp);
    vals.dedup();
    vals.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
}

struct Grower<'a> {
    ds: &'a Dataset,
    ctx: ScoreContext,
    /// Criterion contrasts with their multipliers.
    gamma: Vec<(Contrast, f64)>,
    contrasts: Vec<Contrast>,
    max_depth: usize,
    nodes: Vec<TreeNode>,
}

impl Grower<'_> {
    fn score(&self, leaf: &Selection) -> Result<f64, TreeError> {
        check_min_size(self.ds, leaf, self.ctx.min_size)?;
        let mut s = 0.0;
        for &(c, g) in &self.gamma {
            s += g * leaf_term(self.ds, leaf, c, &self.ctx)?;
        }
        Ok(s)
    }

    fn push(&mut self, sel: &Selection, depth: usize, parent: Option<usize>) -> usize {
        let id = self.nodes.len();
        let train_points = self
            .contrasts
            .iter()
            .map(|&c| effect_in(self.ds, sel, c, 0.95).ok().map(|e| e.point))
            .collect();
        self.nodes.push(TreeNode {
            id,
            depth,
            parent,
            split: None,
            children: None,
            train_cells: sel.cell_counts(self.ds),
            train_points,
            estimates: Vec::new(),
        });
        id
    }

    fn grow(&mut self, id: usize, sel: Selection, used: Vec<usize>) {
        let depth = self.nodes[id].depth;
        if depth >= self.max_depth {
            return;
        }
        let Ok(parent_score) = self.score(&sel) else {
            return;
        };
        let candidates: Vec<Split> = (0..self.ds.covariate_count())
            .filter(|k| !used.contains(k))
            .flat_map(|k| {
                candidate_cutoffs(self.ds, sel.rows(), k)
                    .into_iter()
                    .map(move |cutoff| Split { covariate: k, cutoff })
            })
            .collect();
        let ds = self.ds;
        let evaluated: Vec<Option<f64>> = candidates
            .par_iter()
            .map(|s| {
                let (l, r) = partition(ds, &sel, *s);
                Some(self.score(&l).ok()? + self.score(&r).ok()?)
            })
            .collect();
        let mut best: Option<(Split, f64)> = None;
        for (s, v) in candidates.iter().zip(evaluated) {
            if let Some(v) = v {
                let gain = v - parent_score;
                if gain > SPLIT_TOLERANCE && best.is_none_or(|(_, b)| gain > b) {
                    best = Some((*s, gain));
                }
            }
        }
        let Some((split, _)) = best else {
            return;
        };
        let (l, r) = partition(ds, &sel, split);
        let left = self.push(&l, depth + 1, Some(id));
        let right = self.push(&r, depth + 1, Some(id));
        self.nodes[id].split = Some(split);
        self.nodes[id].children = Some([left, right]);
        let mut used = used;
        used.push(split.covariate);
        self.grow(left, l, used.clone());
        self.grow(right, r, used);
    }
}

fn partition(ds: &Dataset, sel: &Selection, s: Split) -> (Selection, Selection) {
    let (l, r): (Vec<usize>, Vec<usize>) = sel
        .rows()
        .iter()
        .partition(|&&row| ds.covariates(row)[s.covariate] <= s.cutoff);
    (Selection::from_rows(ds, l), Selection::from_rows(ds, r))
}

/// Greedy depth-first growth on the training clusters.
pub fn grow_tree(
    ds: &Dataset,
    split: &HonestSplit,
    estimands: &EstimandSet,
    params: &TreeParams,
) -> Result<NetworkCausalTree, TreeError> {
    let train = split.training_rows(ds);
    let est = split.estimation_rows(ds);
    let ctx = ScoreContext {
        honest: params.honest,
        n_tr: train.len().max(1),
        n_est: est.len().max(1),
        min_size: params.min_size,
    };
    let (gamma, estimands) = match params.criterion {
        Criterion::Single(c) => (vec![(c, 1.0)], estimands.including(c)),
        Criterion::Composite => {
            if estimands.positive().len() < 2 {
                return Err(TreeError::InvalidEstimands(
                    "composite criterion needs at least two positive weights".into(),
                ));
            }
            if train.is_empty() {
                return Err(EstimatorError::EmptyLeaf.into());
            }
            (composite_weights(ds, &train, estimands)?, estimands.clone())
        }
    };
    let mut grower = Grower {
        ds,
        ctx,
        gamma,
        contrasts: estimands.contrasts(),
        max_depth: params.max_depth,
        nodes: Vec::new(),
    };
    let root = grower.push(&train, 0, None);
    grower.grow(root, train, Vec::new());
    Ok(NetworkCausalTree {
        covariates: ds.covariate_names().to_vec(),
        kinds: ds.covariate_kinds().to_vec(),
        contrasts: estimands.contrasts(),
        nodes: grower.nodes,
    })
}

/// Fills every node's estimates from the estimation clusters; empty cells
/// leave the estimate flagged unavailable.
pub fn estimate_leaves(tree: &mut NetworkCausalTree, ds: &Dataset, split: &HonestSplit, level: f64) -> Result<(), TreeError> {
    if !(level > 0.0 && level < 1.0) {
        return Err(EstimatorError::InvalidLevel(level).into());
    }
    let est = split.estimation_rows(ds);
    let leaves: Vec<Leaf> = (0..tree.nodes.len()).map(|id| tree.leaf_of(id)).collect();
    let contrasts = tree.contrasts.clone();
    let payloads: Vec<Vec<LeafEstimate>> = leaves
        .par_iter()
        .map(|leaf| {
            let sel = est.filter(ds, |r| leaf.contains(ds.covariates(r)));
            let cells = sel.cell_counts(ds);
            contrasts
                .iter()
                .map(|&c| LeafEstimate::from_result(c, cells, effect_in(ds, &sel, c, level)))
                .collect()
        })
        .collect();
    for (node, p) in tree.nodes.iter_mut().zip(payloads) {
        node.estimates = p;
    }
    Ok(())
}

/// Split clusters, grow on training, estimate on the rest.
pub fn fit(ds: &Dataset, estimands: &EstimandSet, params: &TreeParams, seed: u64) -> Result<(HonestSplit, NetworkCausalTree), TreeError> {
    let split = split_clusters(ds, params.training_fraction, seed)?;
    let mut tree = grow_tree(ds, &split, estimands, params)?;
    estimate_leaves(&mut tree, ds, &split, params.level)?;
    Ok((split, tree))
}
