//! Heterogeneous treatment and spillover effects on clustered networks.
//!
//! * [`netgraph`]: clustered network storage, builders and generators
//! * [`design`]: Bernoulli assignment, threshold exposures, exposure probabilities
//! * [`estimator`]: Horvitz–Thompson leaf estimators with conservative variances
//! * [`nct`]: network causal trees with honest splitting
//! * [`simlab`]: Monte Carlo scenarios and scoring
//! * [`io`]: CSV readers and writers
//! * [`oracle`]: brute-force randomization oracles for small networks
//! * [`stats`]: normal quantiles and number formatting

pub mod design;
pub mod estimator;
pub mod io;
pub mod nct;
pub mod oracle;
pub mod netgraph;
pub mod simlab;
pub mod stats;

pub use design::{
    BernoulliDesign, DesignError, ExposureMapping, JointExposure, PairwiseEngine, PairwiseMethod, PairwiseTable,
    ProbabilityTable,
};
pub use estimator::{Contrast, Covariates, Dataset, EffectEstimate, EstimatorError, Leaf};
pub use nct::{Criterion, EstimandSet, NetworkCausalTree, TreeError, TreeParams};
pub use simlab::{MetricsReport, ScenarioConfig, SimError};
pub use netgraph::{ClusteredNetwork, NetworkError, UnitRef};
