//! Clustered networks: block-diagonal directed adjacency over `K` clusters.
//!
//! Every edge lives inside one cluster. Undirected inputs are stored as two
//! directed edges. A unit's neighborhood is its set of out-neighbors.
//!
//! Node labels are treated as globally unique identifiers: the first time a
//! label is seen it is bound to a cluster, and any later edge placing it in a
//! different cluster is rejected.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("edge {src} -> {dst} crosses clusters ({src_cluster} vs {dst_cluster})")]
    CrossClusterEdge {
        src: String,
        dst: String,
        src_cluster: String,
        dst_cluster: String,
    },
    #[error("self-loop on node {0}")]
    SelfLoop(String),
    #[error("edge probability {0} outside [0, 1]")]
    InvalidProbability(f64),
    #[error("homophily requires p_base <= p_same (got {p_base} > {p_same})")]
    InvertedHomophily { p_base: f64, p_same: f64 },
    #[error("attribute vector has {got} entries, network needs {expected}")]
    AttributeLengthMismatch { expected: usize, got: usize },
    #[error("edge references unknown node {node} in cluster {cluster}")]
    UnknownNode { cluster: String, node: String },
    #[error("cluster size must be at least 1")]
    EmptyCluster,
}

/// Position of a unit: cluster index and node index local to the cluster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct UnitRef {
    pub cluster: usize,
    pub node: usize,
}

/// One diagonal block of the global adjacency matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterBlock {
    pub label: String,
    pub node_labels: Vec<String>,
    /// Sorted, deduplicated out-neighbors per local node.
    pub out: Vec<Vec<usize>>,
}

impl ClusterBlock {
    pub fn len(&self) -> usize {
        self.node_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node_labels.is_empty()
    }

    pub fn edge_count(&self) -> usize {
        self.out.iter().map(Vec::len).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Neighborhood {
    pub unit: UnitRef,
    pub members: Vec<UnitRef>,
    pub degree: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClusteredNetwork {
    clusters: Vec<ClusterBlock>,
    offsets: Vec<usize>,
}

impl ClusteredNetwork {
    /// Assembles a network from blocks, sorting and deduplicating adjacency.
    /// Self-loops are rejected.
    pub fn from_blocks(mut clusters: Vec<ClusterBlock>) -> Result<Self, NetworkError> {
        for block in &mut clusters {
            for (i, nbrs) in block.out.iter_mut().enumerate() {
                nbrs.sort_unstable();
                nbrs.dedup();
                if nbrs.binary_search(&i).is_ok() {
                    return Err(NetworkError::SelfLoop(block.node_labels[i].clone()));
                }
            }
        }
        let mut offsets = Vec::with_capacity(clusters.len() + 1);
        let mut acc = 0;
        for block in &clusters {
            offsets.push(acc);
            acc += block.len();
        }
        offsets.push(acc);
        Ok(Self { clusters, offsets })
    }

    pub fn clusters(&self) -> &[ClusterBlock] {
        &self.clusters
    }

    pub fn cluster_count(&self) -> usize {
        self.clusters.len()
    }

    pub fn unit_count(&self) -> usize {
        self.offsets.last().copied().unwrap_or(0)
    }

    pub fn edge_count(&self) -> usize {
        self.clusters.iter().map(ClusterBlock::edge_count).sum()
    }

    /// Global index of a unit (clusters laid out back to back).
    pub fn global_index(&self, unit: UnitRef) -> usize {
        self.offsets[unit.cluster] + unit.node
    }

    pub fn unit_at(&self, global: usize) -> UnitRef {
        let cluster = match self.offsets.binary_search(&global) {
            Ok(mut c) => {
                // skip empty clusters sharing the same offset
                while self.offsets[c + 1] == global {
                    c += 1;
                }
                c
            }
            Err(c) => c - 1,
        };
        UnitRef {
            cluster,
            node: global - self.offsets[cluster],
        }
    }

    pub fn cluster_range(&self, cluster: usize) -> std::ops::Range<usize> {
        self.offsets[cluster]..self.offsets[cluster + 1]
    }

    pub fn units(&self) -> impl Iterator<Item = UnitRef> + '_ {
        self.clusters.iter().enumerate().flat_map(|(c, b)| {
            (0..b.len()).map(move |node| UnitRef { cluster: c, node })
        })
    }

    pub fn out_neighbors(&self, unit: UnitRef) -> &[usize] {
        &self.clusters[unit.cluster].out[unit.node]
    }

    pub fn degree(&self, unit: UnitRef) -> usize {
        self.out_neighbors(unit).len()
    }

    pub fn neighborhood(&self, unit: UnitRef) -> Neighborhood {
        let members: Vec<UnitRef> = self
            .out_neighbors(unit)
            .iter()
            .map(|&node| UnitRef {
                cluster: unit.cluster,
                node,
            })
            .collect();
        Neighborhood {
            unit,
            degree: members.len(),
            members,
        }
    }

    pub fn label(&self, unit: UnitRef) -> (&str, &str) {
        let block = &self.clusters[unit.cluster];
        (&block.label, &block.node_labels[unit.node])
    }

    pub fn has_edge(&self, cluster: usize, src: usize, dst: usize) -> bool {
        self.clusters[cluster].out[src].binary_search(&dst).is_ok()
    }

    /// True when every edge has its reverse.
    pub fn is_symmetric(&self) -> bool {
        self.clusters.iter().enumerate().all(|(c, b)| {
            b.out
                .iter()
                .enumerate()
                .all(|(i, nbrs)| nbrs.iter().all(|&j| self.has_edge(c, j, i)))
        })
    }

    /// Whether a node has any incident edge (in or out).
    fn incident_flags(block: &ClusterBlock) -> Vec<bool> {
        let mut touched = vec![false; block.len()];
        for (i, nbrs) in block.out.iter().enumerate() {
            if !nbrs.is_empty() {
                touched[i] = true;
            }
            for &j in nbrs {
                touched[j] = true;
            }
        }
        touched
    }
}

/// One `cluster,src,dst` row of an edge list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeRow {
    pub cluster: String,
    pub src: String,
    pub dst: String,
}

impl EdgeRow {
    pub fn new(cluster: impl Into<String>, src: impl Into<String>, dst: impl Into<String>) -> Self {
        Self {
            cluster: cluster.into(),
            src: src.into(),
            dst: dst.into(),
        }
    }
}

/// Incremental construction of a [`ClusteredNetwork`] from labelled nodes
/// and edges. Clusters and nodes keep their first-seen order.
#[derive(Debug, Default)]
pub struct NetworkBuilder {
    cluster_index: HashMap<String, usize>,
    node_index: HashMap<String, UnitRef>,
    blocks: Vec<ClusterBlock>,
    duplicates: usize,
    strict_nodes: bool,
}

impl NetworkBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// After this call, edges may only reference nodes already added.
    pub fn freeze_nodes(&mut self) {
        self.strict_nodes = true;
    }

    fn cluster(&mut self, label: &str) -> usize {
        if let Some(&c) = self.cluster_index.get(label) {
            return c;
        }
        let c = self.blocks.len();
        self.blocks.push(ClusterBlock {
            label: label.to_string(),
            node_labels: Vec::new(),
            out: Vec::new(),
        });
        self.cluster_index.insert(label.to_string(), c);
        c
    }

    /// Registers a node; returns its position. Re-adding is a no-op unless the
    /// cluster differs.
    pub fn add_node(&mut self, cluster: &str, node: &str) -> Result<UnitRef, NetworkError> {
        if let Some(&unit) = self.node_index.get(node) {
            let bound = &self.blocks[unit.cluster].label;
            if bound != cluster {
                return Err(NetworkError::CrossClusterEdge {
                    src: node.to_string(),
                    dst: node.to_string(),
                    src_cluster: bound.clone(),
                    dst_cluster: cluster.to_string(),
                });
            }
            return Ok(unit);
        }
        if self.strict_nodes {
            return Err(NetworkError::UnknownNode {
                cluster: cluster.to_string(),
                node: node.to_string(),
            });
        }
        let c = self.cluster(cluster);
        let block = &mut self.blocks[c];
        let unit = UnitRef {
            cluster: c,
            node: block.node_labels.len(),
        };
        block.node_labels.push(node.to_string());
        block.out.push(Vec::new());
        self.node_index.insert(node.to_string(), unit);
        Ok(unit)
    }

    fn resolve(&mut self, cluster: &str, node: &str) -> Result<UnitRef, NetworkError> {
        match self.node_index.get(node) {
            Some(&unit) => Ok(unit),
            None => self.add_node(cluster, node),
        }
    }

    pub fn add_edge(&mut self, row: &EdgeRow, directed: bool) -> Result<(), NetworkError> {
        if row.src == row.dst {
            return Err(NetworkError::SelfLoop(row.src.clone()));
        }
        let s = self.resolve(&row.cluster, &row.src)?;
        let d = self.resolve(&row.cluster, &row.dst)?;
        let row_cluster = self.cluster_index.get(&row.cluster).copied();
        if s.cluster != d.cluster || row_cluster != Some(s.cluster) {
            let name = |u: UnitRef| self.blocks[u.cluster].label.clone();
            let (src_cluster, dst_cluster) = if s.cluster != d.cluster {
                (name(s), name(d))
            } else {
                (name(s), row.cluster.clone())
            };
            return Err(NetworkError::CrossClusterEdge {
                src: row.src.clone(),
                dst: row.dst.clone(),
                src_cluster,
                dst_cluster,
            });
        }
        let block = &mut self.blocks[s.cluster];
        if block.out[s.node].contains(&d.node) {
            self.duplicates += 1;
        } else {
            block.out[s.node].push(d.node);
        }
        if !directed && !block.out[d.node].contains(&s.node) {
            block.out[d.node].push(s.node);
        }
        Ok(())
    }

    pub fn duplicates(&self) -> usize {
        self.duplicates
    }

    pub fn build(self) -> Result<ClusteredNetwork, NetworkError> {
        ClusteredNetwork::from_blocks(self.blocks)
    }
}

/// Result of edge-list ingestion.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeListBuild {
    pub network: ClusteredNetwork,
    /// Repeated rows, ignored.
    pub duplicates: usize,
}

pub fn build_from_edge_list(rows: &[EdgeRow], directed: bool) -> Result<EdgeListBuild, NetworkError> {
    let mut builder = NetworkBuilder::new();
    for row in rows {
        builder.add_edge(row, directed)?;
    }
    let duplicates = builder.duplicates();
    Ok(EdgeListBuild {
        network: builder.build()?,
        duplicates,
    })
}

fn check_probability(p: f64) -> Result<(), NetworkError> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(NetworkError::InvalidProbability(p))
    }
}

/// Per-cluster generator stream: same master seed, one stream per cluster.
pub(crate) fn cluster_rng(seed: u64, cluster: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(cluster as u64);
    rng
}

fn generate_blocks<F>(k: usize, n: usize, seed: u64, mut edge_prob: F) -> Result<ClusteredNetwork, NetworkError>
where
    F: FnMut(usize, usize, usize) -> f64,
{
    if n == 0 {
        return Err(NetworkError::EmptyCluster);
    }
    let mut blocks = Vec::with_capacity(k);
    for c in 0..k {
        let mut rng = cluster_rng(seed, c);
        let mut out = vec![Vec::new(); n];
        for u in 0..n {
            for v in (u + 1)..n {
                if rng.random_bool(edge_prob(c, u, v)) {
                    out[u].push(v);
                    out[v].push(u);
                }
            }
        }
        blocks.push(ClusterBlock {
            label: c.to_string(),
            node_labels: (0..n).map(|i| (c * n + i).to_string()).collect(),
            out,
        });
    }
    ClusteredNetwork::from_blocks(blocks)
}

/// `k` independent undirected Erdős–Rényi graphs on `n` nodes each.
///
/// Node labels are the global integers `cluster * n + node`, cluster labels
/// are `0..k`.
pub fn generate_er_clusters(k: usize, n: usize, p: f64, seed: u64) -> Result<ClusteredNetwork, NetworkError> {
    check_probability(p)?;
    generate_blocks(k, n, seed, |_, _, _| p)
}

/// Inhomogeneous Bernoulli graph: a within-cluster pair is linked with
/// probability `p_same` when the binary attribute matches, `p_base` otherwise.
/// `attribute` is indexed by global unit position (`cluster * n + node`).
pub fn generate_homophilous_clusters(
    k: usize,
    n: usize,
    p_base: f64,
    p_same: f64,
    attribute: &[u8],
    seed: u64,
) -> Result<ClusteredNetwork, NetworkError> {
    check_probability(p_base)?;
    check_probability(p_same)?;
    if p_base > p_same {
        return Err(NetworkError::InvertedHomophily { p_base, p_same });
    }
    if attribute.len() != k * n {
        return Err(NetworkError::AttributeLengthMismatch {
            expected: k * n,
            got: attribute.len(),
        });
    }
    generate_blocks(k, n, seed, |c, u, v| {
        if attribute[c * n + u] == attribute[c * n + v] {
            p_same
        } else {
            p_base
        }
    })
}

/// Drops nodes with no incident edge. Returns the pruned network and the
/// removed units (positions in the input network).
pub fn drop_isolated(network: &ClusteredNetwork) -> (ClusteredNetwork, Vec<UnitRef>) {
    let mut removed = Vec::new();
    let mut blocks = Vec::with_capacity(network.cluster_count());
    for (c, block) in network.clusters().iter().enumerate() {
        let keep = ClusteredNetwork::incident_flags(block);
        let mut remap = vec![usize::MAX; block.len()];
        let mut next = 0;
        for (i, &k) in keep.iter().enumerate() {
            if k {
                remap[i] = next;
                next += 1;
            } else {
                removed.push(UnitRef { cluster: c, node: i });
            }
        }
        let node_labels = block
            .node_labels
            .iter()
            .zip(&keep)
            .filter(|(_, &k)| k)
            .map(|(l, _)| l.clone())
            .collect();
        let out = block
            .out
            .iter()
            .zip(&keep)
            .filter(|(_, &k)| k)
            .map(|(nbrs, _)| nbrs.iter().map(|&j| remap[j]).collect())
            .collect();
        blocks.push(ClusterBlock {
            label: block.label.clone(),
            node_labels,
            out,
        });
    }
    // remapping is monotone, adjacency stays sorted
    let pruned = ClusteredNetwork::from_blocks(blocks).expect("pruning cannot introduce self-loops");
    (pruned, removed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(spec: &[(&str, &str, &str)]) -> Vec<EdgeRow> {
        spec.iter().map(|&(c, s, d)| EdgeRow::new(c, s, d)).collect()
    }

    #[test]
    fn empty_edge_list_gives_empty_network() {
        let built = build_from_edge_list(&[], true).unwrap();
        assert_eq!(built.network.cluster_count(), 0);
        assert_eq!(built.network.unit_count(), 0);
    }

    #[test]
    fn single_directed_edge() {
        let net = build_from_edge_list(&rows(&[("1", "a", "b")]), true).unwrap().network;
        let a = UnitRef { cluster: 0, node: 0 };
        let b = UnitRef { cluster: 0, node: 1 };
        assert_eq!(net.neighborhood(a).members, vec![b]);
        assert_eq!(net.neighborhood(b).degree, 0);
    }

    #[test]
    fn path_and_triangle_degrees() {
        let net = build_from_edge_list(
            &rows(&[("1", "a", "b"), ("1", "b", "c"), ("2", "x", "y"), ("2", "y", "z"), ("2", "z", "x")]),
            false,
        )
        .unwrap()
        .network;
        let degrees: Vec<usize> = net.units().map(|u| net.degree(u)).collect();
        assert_eq!(degrees, vec![1, 2, 1, 2, 2, 2]);
        assert!(net.is_symmetric());
    }

    #[test]
    fn ingestion_errors() {
        assert_eq!(
            build_from_edge_list(&rows(&[("1", "a", "a")]), true).unwrap_err(),
            NetworkError::SelfLoop("a".into())
        );
        let err = build_from_edge_list(&rows(&[("1", "a", "b"), ("2", "b", "c")]), true).unwrap_err();
        assert!(matches!(err, NetworkError::CrossClusterEdge { .. }));
        let built = build_from_edge_list(&rows(&[("1", "a", "b"), ("1", "a", "b")]), true).unwrap();
        assert_eq!(built.duplicates, 1);
        assert_eq!(built.network.edge_count(), 1);
    }

    #[test]
    fn frozen_builder_rejects_unknown_nodes() {
        let mut b = NetworkBuilder::new();
        b.add_node("1", "a").unwrap();
        b.freeze_nodes();
        let err = b.add_edge(&EdgeRow::new("1", "a", "zz"), true).unwrap_err();
        assert!(matches!(err, NetworkError::UnknownNode { .. }));
    }

    #[test]
    fn er_extremes() {
        let empty = generate_er_clusters(2, 3, 0.0, 1).unwrap();
        assert_eq!(empty.unit_count(), 6);
        assert_eq!(empty.edge_count(), 0);
        let full = generate_er_clusters(1, 3, 1.0, 1).unwrap();
        assert_eq!(full.edge_count(), 6);
        assert!(full.units().all(|u| full.degree(u) == 2));
        assert_eq!(
            generate_er_clusters(1, 3, 1.5, 1).unwrap_err(),
            NetworkError::InvalidProbability(1.5)
        );
    }

    #[test]
    fn er_is_deterministic_per_seed() {
        let a = generate_er_clusters(5, 40, 0.05, 99).unwrap();
        let b = generate_er_clusters(5, 40, 0.05, 99).unwrap();
        let c = generate_er_clusters(5, 40, 0.05, 100).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn homophily_extremes() {
        let attr = [0u8, 1, 0, 1, 1];
        let net = generate_homophilous_clusters(1, 5, 0.0, 1.0, &attr, 3).unwrap();
        for u in 0..5 {
            for v in 0..5 {
                if u != v {
                    assert_eq!(net.has_edge(0, u, v), attr[u] == attr[v]);
                }
            }
        }
        let err = generate_homophilous_clusters(1, 5, 0.1, 0.2, &attr[..3], 3).unwrap_err();
        assert!(matches!(err, NetworkError::AttributeLengthMismatch { .. }));
        let err = generate_homophilous_clusters(1, 5, 0.3, 0.2, &attr, 3).unwrap_err();
        assert!(matches!(err, NetworkError::InvertedHomophily { .. }));
    }

    #[test]
    fn homophily_with_equal_probabilities_matches_er() {
        let attr: Vec<u8> = (0..300).map(|i| (i % 3 == 0) as u8).collect();
        let h = generate_homophilous_clusters(3, 100, 0.02, 0.02, &attr, 7).unwrap();
        let er = generate_er_clusters(3, 100, 0.02, 7).unwrap();
        assert_eq!(h, er);
    }

    #[test]
    fn drop_isolated_small() {
        let mut b = NetworkBuilder::new();
        for n in ["a", "b", "c"] {
            b.add_node("1", n).unwrap();
        }
        b.add_edge(&EdgeRow::new("1", "a", "c"), false).unwrap();
        let net = b.build().unwrap();
        let (kept, removed) = drop_isolated(&net);
        assert_eq!(kept.unit_count(), 2);
        assert_eq!(removed, vec![UnitRef { cluster: 0, node: 1 }]);
        assert!(kept.has_edge(0, 0, 1) && kept.has_edge(0, 1, 0));

        let (again, removed_again) = drop_isolated(&kept);
        assert_eq!(again, kept);
        assert!(removed_again.is_empty());
    }

    #[test]
    fn unit_at_round_trips() {
        let net = generate_er_clusters(4, 7, 0.3, 5).unwrap();
        for (g, u) in net.units().enumerate() {
            assert_eq!(net.global_index(u), g);
            assert_eq!(net.unit_at(g), u);
        }
    }
}
