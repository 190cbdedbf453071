//! Brute-force randomization oracles for small networks.
//!
//! These enumerate every assignment vector directly and share no code with
//! the closed forms in [`crate::design`]; tests use them as ground truth.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::design::{BernoulliDesign, ExposureMapping, JointExposure, PairwiseEngine};
use crate::estimator::{Covariates, Dataset, Selection};
use crate::netgraph::{drop_isolated, ClusterBlock, ClusteredNetwork};

/// Exact exposure distribution of one cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterEnumeration {
    /// `marginals[i][c]`
    pub marginals: Vec<[f64; 4]>,
    /// `joint[i * n + j][a][b]`
    pub joint: Vec<[[f64; 4]; 4]>,
}

/// Enumerates all `2^n` assignments of a cluster (`n ≤ 20`).
pub fn enumerate_cluster(block: &ClusterBlock, alpha: f64, q: u32) -> ClusterEnumeration {
    let n = block.len();
    assert!(n <= 20, "cluster too large to enumerate");
    let mut marginals = vec![[0.0; 4]; n];
    let mut joint = vec![[[0.0; 4]; 4]; n * n];
    let mut cond = vec![0usize; n];
    for m in 0u32..(1 << n) {
        let mut p = 1.0;
        for i in 0..n {
            p *= if (m >> i) & 1 == 1 { alpha } else { 1.0 - alpha };
        }
        for i in 0..n {
            let w = (m >> i) & 1;
            let treated = block.out[i].iter().filter(|&&j| (m >> j) & 1 == 1).count() as u32;
            let g = (treated >= q) as u32;
            cond[i] = (w + 2 * g) as usize;
        }
        for i in 0..n {
            marginals[i][cond[i]] += p;
            for j in 0..n {
                joint[i * n + j][cond[i]][cond[j]] += p;
            }
        }
    }
    ClusterEnumeration { marginals, joint }
}

/// A dataset over a small network together with every assignment vector,
/// its design probability and the resulting dataset.
#[derive(Debug, Clone)]
pub struct RandomizationFixture {
    pub base: Dataset,
    /// Potential outcomes per network unit, `00, 10, 01, 11` order.
    pub potential: Vec<[f64; 4]>,
    pub draws: Vec<(f64, Dataset)>,
}

impl RandomizationFixture {
    pub fn new(
        network: ClusteredNetwork,
        design: BernoulliDesign,
        mapping: ExposureMapping,
        potential: Vec<[f64; 4]>,
        covariates: Covariates,
    ) -> Self {
        let n = network.unit_count();
        assert!(n <= 16, "network too large to enumerate");
        let alpha = design.alpha();
        let engine = PairwiseEngine::new(design, mapping);
        let base = Dataset::build(Arc::new(network), engine, &vec![0; n], &vec![0.0; n], &covariates)
            .expect("valid fixture");
        let draws = (0u32..(1 << n))
            .map(|m| {
                let w: Vec<u8> = (0..n).map(|i| ((m >> i) & 1) as u8).collect();
                let ones = m.count_ones() as i32;
                let p = alpha.powi(ones) * (1.0 - alpha).powi(n as i32 - ones);
                let g = direct_exposures(base.network(), &w, mapping.q());
                let y: Vec<f64> = (0..n)
                    .map(|i| potential[i][JointExposure::new(w[i], g[i]).index()])
                    .collect();
                (p, base.with_assignment(&w, &y).expect("valid assignment"))
            })
            .collect();
        Self { base, potential, draws }
    }

    /// Finite-population mean of `Y(c)` over the selected rows.
    pub fn true_mean(&self, sel: &Selection, c: JointExposure) -> f64 {
        sel.rows()
            .iter()
            .map(|&r| self.potential[self.base.units()[r]][c.index()])
            .sum::<f64>()
            / sel.len() as f64
    }

    /// Design expectation of a statistic.
    pub fn expectation(&self, stat: impl Fn(&Dataset) -> f64) -> f64 {
        self.draws.iter().map(|(p, ds)| p * stat(ds)).sum()
    }

    /// `(Var[x], E[v])` for a statistic `x` and its variance estimator `v`.
    pub fn variance_and_expected_estimate(&self, stat: impl Fn(&Dataset) -> (f64, f64)) -> (f64, f64) {
        let (mut m1, mut m2, mut ev) = (0.0, 0.0, 0.0);
        for (p, ds) in &self.draws {
            let (x, v) = stat(ds);
            m1 += p * x;
            m2 += p * x * x;
            ev += p * v;
        }
        (m2 - m1 * m1, ev)
    }

    /// Row sets to test: the whole sample and the two halves on the first
    /// covariate (when non-empty).
    pub fn leaves(&self) -> Vec<Vec<usize>> {
        let ds = &self.base;
        let mut v = vec![(0..ds.len()).collect::<Vec<_>>()];
        if ds.covariate_count() > 0 {
            for cut in [0.0, 1.0] {
                let rows: Vec<usize> = (0..ds.len()).filter(|&r| ds.covariates(r)[0] == cut).collect();
                if !rows.is_empty() {
                    v.push(rows);
                }
            }
        }
        v
    }
}

fn direct_exposures(network: &ClusteredNetwork, w: &[u8], q: u32) -> Vec<u8> {
    network
        .units()
        .map(|u| {
            let base = network.cluster_range(u.cluster).start;
            let treated = network.out_neighbors(u).iter().filter(|&&j| w[base + j] == 1).count() as u32;
            (treated >= q) as u8
        })
        .collect()
}

/// Random fixture with at most `max_units` units in one or two clusters,
/// random potential outcomes and one binary covariate.
pub fn random_fixture(seed: u64, max_units: usize) -> RandomizationFixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let network = loop {
        let k = rng.random_range(1..=2usize);
        let sizes: Vec<usize> = (0..k).map(|_| rng.random_range(3..=max_units / k)).collect();
        let p = rng.random_range(0.25..0.6);
        let blocks = sizes
            .iter()
            .enumerate()
            .map(|(c, &n)| {
                let mut out = vec![Vec::new(); n];
                for u in 0..n {
                    for v in (u + 1)..n {
                        if rng.random_bool(p) {
                            out[u].push(v);
                            out[v].push(u);
                        }
                    }
                }
                ClusterBlock {
                    label: format!("c{c}"),
                    node_labels: (0..n).map(|i| format!("c{c}n{i}")).collect(),
                    out,
                }
            })
            .collect();
        let (net, _) = drop_isolated(&ClusteredNetwork::from_blocks(blocks).expect("valid blocks"));
        if net.unit_count() >= 2 && net.clusters().iter().all(|b| !b.is_empty()) {
            break net;
        }
    };
    let n = network.unit_count();
    let alpha = [0.3, 0.5, 0.7][rng.random_range(0..3)];
    let potential = (0..n)
        .map(|_| {
            let base: f64 = rng.random_range(-2.0..2.0);
            [
                base,
                base + rng.random_range(-1.0..3.0),
                base + rng.random_range(-2.0..2.0),
                rng.random_range(-3.0..3.0),
            ]
        })
        .collect();
    let x = (0..n).map(|_| rng.random_range(0..2) as f64).collect();
    RandomizationFixture::new(
        network,
        BernoulliDesign::new(alpha).expect("valid alpha"),
        ExposureMapping::threshold(1).expect("valid q"),
        potential,
        Covariates::new(vec!["X1".into()], x),
    )
}
