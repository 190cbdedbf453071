//! The `nct` batch front end: `simulate`, `analyze` and `probs`.

pub mod config;

use std::collections::HashMap;
use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use netcausal::io::{self as nio, IoError};
use netcausal::nct::fit;
use netcausal::netgraph::{build_from_edge_list, EdgeRow};
use netcausal::simlab::{default_estimands, run_replications, simulation_tree_params, RuleMatching};
use netcausal::{
    BernoulliDesign, ClusteredNetwork, Dataset, DesignError, EstimatorError, ExposureMapping, NetworkError,
    PairwiseEngine, ProbabilityTable, ScenarioConfig, SimError, TreeError, TreeParams, UnitRef,
};
use thiserror::Error;

use config::{any, at_least, in_range, ConfigError, Manifest, Settings};

pub const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "+", env!("NCT_COMMIT"));

/// Replication failure rate above which `simulate` exits with status 3.
pub const MAX_FAILURE_RATE: f64 = 0.10;

#[derive(Debug, Parser)]
#[command(name = "nct", version = VERSION, about = "Network causal trees on clustered networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Monte Carlo study on synthetic clustered networks.
    Simulate(Opts),
    /// Grow an honest tree on an edge list and node table.
    Analyze(Opts),
    /// Dump marginal (and optionally pairwise) exposure probabilities.
    Probs(Opts),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate(_) => "simulate",
            Command::Analyze(_) => "analyze",
            Command::Probs(_) => "probs",
        }
    }

    fn opts(&self) -> &Opts {
        match self {
            Command::Simulate(o) | Command::Analyze(o) | Command::Probs(o) => o,
        }
    }
}

/// All values are kept as text so that file and flag values share one
/// validation path.
#[derive(Debug, Args, Default)]
pub struct Opts {
    /// `key = value` config file; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Simulation scenario (1 or 2).
    #[arg(long)]
    pub scenario: Option<String>,
    /// Effect size(s), comma-separated.
    #[arg(long)]
    pub h: Option<String>,
    #[arg(long)]
    pub clusters: Option<String>,
    #[arg(long)]
    pub cluster_size: Option<String>,
    #[arg(long)]
    pub edge_prob: Option<String>,
    /// Bernoulli treatment probability.
    #[arg(long)]
    pub alpha: Option<String>,
    /// Exposure threshold: exposed when at least q out-neighbours are treated.
    #[arg(long)]
    pub q: Option<String>,
    /// Number of binary covariates.
    #[arg(long)]
    pub covariates: Option<String>,
    /// Covariate equicorrelation.
    #[arg(long)]
    pub rho: Option<String>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub homophily: Option<String>,
    #[arg(long)]
    pub reps: Option<String>,
    /// Master seed.
    #[arg(long)]
    pub seed: Option<String>,
    #[arg(long)]
    pub max_depth: Option<String>,
    /// Minimum training units per exposure cell in every leaf.
    #[arg(long)]
    pub min_size: Option<String>,
    /// Composite weights, e.g. `w1000=0.5,w0100=0.5`.
    #[arg(long)]
    pub weights: Option<String>,
    /// `composite` or `single:<contrast>`.
    #[arg(long)]
    pub criterion: Option<String>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub honest: Option<String>,
    /// Share of clusters used to grow the tree.
    #[arg(long)]
    pub training_fraction: Option<String>,
    /// Confidence level of leaf intervals.
    #[arg(long)]
    pub level: Option<String>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    pub jobs: Option<String>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<String>,
    /// Edge list `cluster,src,dst`.
    #[arg(long)]
    pub edges: Option<String>,
    /// Node table `cluster,node,w,y,<covariates>`.
    #[arg(long)]
    pub nodes: Option<String>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub directed: Option<String>,
    /// Pairs `cluster,i,j` for the pairwise dump.
    #[arg(long)]
    pub pairs: Option<String>,
}

impl Opts {
    fn flags(&self) -> [(&'static str, Option<&str>); 25] {
        [
            ("scenario", self.scenario.as_deref()),
            ("h", self.h.as_deref()),
            ("clusters", self.clusters.as_deref()),
            ("cluster_size", self.cluster_size.as_deref()),
            ("edge_prob", self.edge_prob.as_deref()),
            ("alpha", self.alpha.as_deref()),
            ("q", self.q.as_deref()),
            ("covariates", self.covariates.as_deref()),
            ("rho", self.rho.as_deref()),
            ("homophily", self.homophily.as_deref()),
            ("reps", self.reps.as_deref()),
            ("seed", self.seed.as_deref()),
            ("max_depth", self.max_depth.as_deref()),
            ("min_size", self.min_size.as_deref()),
            ("weights", self.weights.as_deref()),
            ("criterion", self.criterion.as_deref()),
            ("honest", self.honest.as_deref()),
            ("training_fraction", self.training_fraction.as_deref()),
            ("level", self.level.as_deref()),
            ("jobs", self.jobs.as_deref()),
            ("out", self.out.as_deref()),
            ("edges", self.edges.as_deref()),
            ("nodes", self.nodes.as_deref()),
            ("directed", self.directed.as_deref()),
            ("pairs", self.pairs.as_deref()),
        ]
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("input error: {0}")]
    Input(#[from] IoError),
    #[error("input error: {0}")]
    Network(#[from] NetworkError),
    #[error("unknown node {node:?} in cluster {cluster:?}")]
    UnknownNode { cluster: String, node: String },
    #[error(transparent)]
    Design(#[from] DesignError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("{failed} of {reps} replications failed at h = {h}")]
    Failures { h: f64, failed: usize, reps: usize },
    #[error("cannot start worker pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Failures { .. } => 3,
            _ => 1,
        }
    }
}

fn file_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::File { path: path.to_path_buf(), source }
}

/// Parses arguments and runs; returns the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn settings(opts: &Opts) -> Result<Settings, CliError> {
    let mut s = match &opts.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|source| {
                ConfigError {
                    origin: config::Origin::Flag,
                    key: "config".into(),
                    message: format!("cannot read {}: {source}", path.display()),
                }
            })?;
            Settings::parse_file(path, &text)?
        }
        None => Settings::default(),
    };
    for (k, v) in opts.flags() {
        s.set_flag(k, v);
    }
    Ok(s)
}

pub fn run(command: &Command) -> Result<(), CliError> {
    let s = settings(command.opts())?;
    let jobs: usize = s.get("jobs", 0, any)?;
    let out = s.required_path("out")?;
    match command {
        Command::Simulate(_) => {
            let plan = SimulatePlan::from_settings(&s)?;
            let pool = pool(jobs)?;
            pool.install(|| plan.run(&out))
        }
        Command::Analyze(_) => {
            let plan = AnalyzePlan::from_settings(&s)?;
            let pool = pool(jobs)?;
            pool.install(|| plan.run(&out))
        }
        Command::Probs(_) => {
            let plan = ProbsPlan::from_settings(&s)?;
            let pool = pool(jobs)?;
            pool.install(|| plan.run(&out))
        }
    }
    .map(|()| eprintln!("{}: outputs written to {}", command.name(), out.display()))
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool, CliError> {
    Ok(rayon::ThreadPoolBuilder::new().num_threads(jobs).build()?)
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, CliError> {
    fs::create_dir_all(dir).map_err(file_err(dir))?;
    let path = dir.join(name);
    Ok(BufWriter::new(File::create(&path).map_err(file_err(&path))?))
}

fn write_text(dir: &Path, name: &str, text: &str) -> Result<(), CliError> {
    let mut w = create(dir, name)?;
    let path = dir.join(name);
    w.write_all(text.as_bytes()).map_err(file_err(&path))?;
    w.flush().map_err(file_err(&path))
}

fn bool_check(_: &bool) -> Result<(), String> {
    Ok(())
}

fn tree_params(s: &Settings, default_depth: usize) -> Result<TreeParams, CliError> {
    let d = TreeParams::default();
    Ok(TreeParams {
        max_depth: s.get("max_depth", default_depth, any)?,
        min_size: s.get("min_size", d.min_size, at_least(1))?,
        honest: s.get("honest", d.honest, bool_check)?,
        criterion: s.criterion()?,
        training_fraction: s.get("training_fraction", d.training_fraction, in_range(0.0, 1.0, false))?,
        level: s.get("level", d.level, in_range(0.0, 1.0, false))?,
    })
}

fn push_tree_params(m: &mut Manifest, p: &TreeParams) {
    m.push("max_depth", p.max_depth);
    m.push("min_size", p.min_size);
    m.push("honest", p.honest);
    m.push("training_fraction", p.training_fraction);
    m.push("level", p.level);
}

fn design(s: &Settings, alpha_required: bool) -> Result<(BernoulliDesign, ExposureMapping), CliError> {
    if alpha_required && s.raw("alpha").is_none() {
        return Err(s.error("alpha", "required: the design cannot be inferred from data").into());
    }
    let alpha = s.get("alpha", 0.5, in_range(0.0, 1.0, false))?;
    let q: u32 = s.get("q", 1, at_least(1))?;
    let design = BernoulliDesign::new(alpha).map_err(|e| s.error("alpha", e.to_string()))?;
    let mapping = ExposureMapping::threshold(q).map_err(|e| s.error("q", e.to_string()))?;
    Ok((design, mapping))
}

pub struct SimulatePlan {
    pub configs: Vec<ScenarioConfig>,
    pub params: TreeParams,
    pub estimands: netcausal::EstimandSet,
}

impl SimulatePlan {
    pub fn from_settings(s: &Settings) -> Result<Self, CliError> {
        let d = ScenarioConfig::default();
        let scenario: u8 = s.get("scenario", d.scenario, |v| {
            if *v == 1 || *v == 2 {
                Ok(())
            } else {
                Err(format!("scenario must be 1 or 2, got {v}"))
            }
        })?;
        let min_covariates = if scenario == 2 { 3 } else { 2 };
        let base = ScenarioConfig {
            scenario,
            h: d.h,
            clusters: s.get("clusters", d.clusters, at_least(2))?,
            cluster_size: s.get("cluster_size", d.cluster_size, at_least(1))?,
            edge_prob: s.get("edge_prob", d.edge_prob, in_range(0.0, 1.0, true))?,
            alpha: s.get("alpha", d.alpha, in_range(0.0, 1.0, false))?,
            q: s.get("q", d.q, at_least(1))?,
            covariates: s.get("covariates", d.covariates, at_least(min_covariates))?,
            rho: s.get("rho", d.rho, |&v: &f64| {
                if (0.0..1.0).contains(&v) {
                    Ok(())
                } else {
                    Err(format!("value {v} outside [0, 1)"))
                }
            })?,
            homophily: s.get("homophily", d.homophily, bool_check)?,
            reps: s.get("reps", d.reps, at_least(1))?,
            seed: s.get("seed", d.seed, any)?,
        };
        let configs: Vec<ScenarioConfig> = s
            .h_values(&[d.h])?
            .into_iter()
            .map(|h| ScenarioConfig { h, ..base })
            .collect();
        for c in &configs {
            c.validate().map_err(|e| s.error("config", e.to_string()))?;
        }
        let params = tree_params(s, simulation_tree_params().max_depth)?;
        let estimands = s.estimands(default_estimands())?;
        Ok(Self { configs, params, estimands })
    }

    pub fn manifest(&self) -> Manifest {
        let c = &self.configs[0];
        let mut m = Manifest::default();
        m.push("version", VERSION);
        m.push("command", "simulate");
        m.push("seed", c.seed);
        m.push("scenario", c.scenario);
        let hs: Vec<String> = self.configs.iter().map(|c| c.h.to_string()).collect();
        m.push("h", hs.join(","));
        m.push("clusters", c.clusters);
        m.push("cluster_size", c.cluster_size);
        m.push("edge_prob", c.edge_prob);
        m.push("alpha", c.alpha);
        m.push("q", c.q);
        m.push("covariates", c.covariates);
        m.push("rho", c.rho);
        m.push("homophily", c.homophily);
        m.push("reps", c.reps);
        m.push("weights", self.estimands.render());
        push_tree_params(&mut m, &self.params);
        m
    }

    pub fn run(&self, out: &Path) -> Result<(), CliError> {
        let mut reports = Vec::new();
        for c in &self.configs {
            let report = run_replications(c, &self.estimands, &self.params, RuleMatching::Exact)?;
            for (id, msg) in &report.failure_messages {
                eprintln!("h = {}: replication {id} failed: {msg}", c.h);
            }
            reports.push(report);
        }
        nio::write_metrics(create(out, "metrics.csv")?, &reports)?;
        nio::write_discovery(create(out, "discovery.csv")?, &reports)?;
        nio::write_discovery_by_effect(create(out, "discovery_by_effect.csv")?, &reports)?;
        write_text(out, "manifest.txt", &self.manifest().render())?;
        if let Some(r) = reports.iter().find(|r| r.failure_rate() > MAX_FAILURE_RATE) {
            return Err(CliError::Failures {
                h: r.h,
                failed: r.failures,
                reps: r.replications,
            });
        }
        Ok(())
    }
}

fn read_file(path: &Path) -> Result<File, CliError> {
    File::open(path).map_err(file_err(path))
}

fn load_network(
    edges_path: &Path,
    nodes_path: Option<&Path>,
    directed: bool,
) -> Result<(ClusteredNetwork, Option<nio::Assembled>), CliError> {
    let label = edges_path.display().to_string();
    let edges: Vec<EdgeRow> = nio::read_edge_list(read_file(edges_path)?, &label)?;
    match nodes_path {
        Some(np) => {
            let nlabel = np.display().to_string();
            let table = nio::read_node_table(read_file(np)?, &nlabel)?;
            let assembled = nio::assemble(&table, &edges, directed, &nlabel)?;
            Ok((assembled.network.clone(), Some(assembled)))
        }
        None => Ok((build_from_edge_list(&edges, directed)?.network, None)),
    }
}

pub struct AnalyzePlan {
    pub edges: PathBuf,
    pub nodes: PathBuf,
    pub directed: bool,
    pub design: BernoulliDesign,
    pub mapping: ExposureMapping,
    pub seed: u64,
    pub params: TreeParams,
    pub estimands: netcausal::EstimandSet,
}

impl AnalyzePlan {
    pub fn from_settings(s: &Settings) -> Result<Self, CliError> {
        let (design, mapping) = design(s, true)?;
        Ok(Self {
            edges: s.required_path("edges")?,
            nodes: s.required_path("nodes")?,
            directed: s.get("directed", true, bool_check)?,
            design,
            mapping,
            seed: s.get("seed", ScenarioConfig::default().seed, any)?,
            params: tree_params(s, TreeParams::default().max_depth)?,
            estimands: s.estimands(default_estimands())?,
        })
    }

    pub fn manifest(&self) -> Manifest {
        let mut m = Manifest::default();
        m.push("version", VERSION);
        m.push("command", "analyze");
        m.push("seed", self.seed);
        m.push("edges", self.edges.display());
        m.push("nodes", self.nodes.display());
        m.push("directed", self.directed);
        m.push("alpha", self.design.alpha());
        m.push("q", self.mapping.q());
        m.push("weights", self.estimands.render());
        m.push("criterion", self.params.criterion);
        push_tree_params(&mut m, &self.params);
        m
    }

    pub fn run(&self, out: &Path) -> Result<(), CliError> {
        let (_, assembled) = load_network(&self.edges, Some(&self.nodes), self.directed)?;
        let a = assembled.expect("node table given");
        if a.duplicate_edges > 0 {
            eprintln!("ignored {} duplicate edge rows", a.duplicate_edges);
        }
        let engine = PairwiseEngine::new(self.design, self.mapping);
        let ds = Dataset::build(Arc::new(a.network), engine, &a.assignment, &a.outcomes, &a.covariates)?;
        eprintln!(
            "positivity: excluded {} of {} units",
            ds.excluded().len(),
            ds.network().unit_count()
        );
        let (_, tree) = fit(&ds, &self.estimands, &self.params, self.seed)?;
        write_text(out, "tree.json", &(tree.to_json() + "\n"))?;
        nio::write_leaf_estimates(create(out, "leaf_estimates.csv")?, &tree)?;
        nio::write_excluded(create(out, "excluded.csv")?, ds.network(), ds.excluded())?;
        write_text(out, "manifest.txt", &self.manifest().render())
    }
}

pub struct ProbsPlan {
    pub edges: PathBuf,
    pub nodes: Option<PathBuf>,
    pub pairs: Option<PathBuf>,
    pub directed: bool,
    pub design: BernoulliDesign,
    pub mapping: ExposureMapping,
    pub seed: u64,
}

impl ProbsPlan {
    pub fn from_settings(s: &Settings) -> Result<Self, CliError> {
        let (design, mapping) = design(s, true)?;
        Ok(Self {
            edges: s.required_path("edges")?,
            nodes: s.optional_path("nodes"),
            pairs: s.optional_path("pairs"),
            directed: s.get("directed", true, bool_check)?,
            design,
            mapping,
            seed: s.get("seed", ScenarioConfig::default().seed, any)?,
        })
    }

    pub fn manifest(&self) -> Manifest {
        let mut m = Manifest::default();
        m.push("version", VERSION);
        m.push("command", "probs");
        m.push("seed", self.seed);
        m.push("edges", self.edges.display());
        if let Some(n) = &self.nodes {
            m.push("nodes", n.display());
        }
        if let Some(p) = &self.pairs {
            m.push("pairs", p.display());
        }
        m.push("directed", self.directed);
        m.push("alpha", self.design.alpha());
        m.push("q", self.mapping.q());
        m
    }

    pub fn run(&self, out: &Path) -> Result<(), CliError> {
        let (network, _) = load_network(&self.edges, self.nodes.as_deref(), self.directed)?;
        let mut engine = PairwiseEngine::new(self.design, self.mapping);
        engine.monte_carlo_seed = self.seed;
        let table = ProbabilityTable::new(Arc::new(network), engine);
        nio::write_marginals(create(out, "probs.csv")?, table.network(), table.marginals())?;
        if let Some(pairs_path) = &self.pairs {
            let pairs = nio::read_pairs(read_file(pairs_path)?, &pairs_path.display().to_string())?;
            let net = table.network();
            let index: HashMap<(&str, &str), UnitRef> = net.units().map(|u| (net.label(u), u)).collect();
            let lookup = |c: &str, n: &str| {
                index.get(&(c, n)).copied().ok_or_else(|| CliError::UnknownNode {
                    cluster: c.into(),
                    node: n.into(),
                })
            };
            let mut rows = Vec::with_capacity(pairs.len());
            for (c, i, j) in pairs {
                let (ui, uj) = (lookup(&c, &i)?, lookup(&c, &j)?);
                let t = table.pairwise(net.global_index(ui), net.global_index(uj));
                rows.push((c, i, j, t));
            }
            nio::write_pairwise(create(out, "pairwise.csv")?, &rows)?;
        }
        write_text(out, "manifest.txt", &self.manifest().render())
    }
}
