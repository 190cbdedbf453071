use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use netcausal::design::{compute_exposures, JointExposure};
use netcausal::io::{write_edge_list, write_node_table};
use netcausal::nct::fit;
use netcausal::netgraph::{ClusterBlock, ClusteredNetwork};
use netcausal::oracle::enumerate_cluster;
use netcausal::simlab::{default_estimands, generate_scenario};
use netcausal::{Covariates, ExposureMapping, NetworkCausalTree, ScenarioConfig, TreeParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

fn nct(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nct")).args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join(name)).unwrap()
}

#[test]
fn minimal_simulation_writes_all_files() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("sim");
    let o = nct(&["simulate", "--clusters", "4", "--reps", "2", "--seed", "7", "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for f in ["metrics.csv", "discovery.csv", "discovery_by_effect.csv", "manifest.txt"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let manifest = read(&out, "manifest.txt");
    assert!(manifest.lines().any(|l| l == "seed = 7"));
    assert!(manifest.lines().any(|l| l.starts_with("version = ")));
    assert!(read(&out, "metrics.csv").starts_with("effect,h,leaf,mean_est,mean_se,mse,bias,coverage"));
    assert!(read(&out, "discovery.csv").starts_with("criterion,h,mean_correct_rules\n"));
}

#[test]
fn invalid_rho_is_a_config_error_naming_the_field() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("run.cfg");
    fs::write(&cfg, "clusters = 4\nrho = 1.2\n").unwrap();
    let o = nct(&["simulate", "--config", p(&cfg), "--out", p(&tmp.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("run.cfg:2: field `rho`"), "{err}");

    let o = nct(&["simulate", "--rho", "1.2", "--out", p(&tmp.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("`rho`"));
    assert!(!tmp.path().join("o").exists());
}

#[test]
fn flags_override_config_file() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("run.cfg");
    fs::write(&cfg, "clusters = 4\nreps = 1\nrho = 1.2\n").unwrap();
    let out = tmp.path().join("o");
    let o = nct(&["simulate", "--config", p(&cfg), "--rho", "0.2", "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(read(&out, "manifest.txt").contains("rho = 0.2\n"));
}

#[test]
fn unknown_keys_and_bad_values_exit_2() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("run.cfg");
    fs::write(&cfg, "clusterz = 4\n").unwrap();
    let o = nct(&["simulate", "--config", p(&cfg), "--out", p(tmp.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("run.cfg:1: field `clusterz`"));
    let o = nct(&["simulate", "--alpha", "1.5", "--out", p(tmp.path())]);
    assert_eq!(o.status.code(), Some(2));
    let o = nct(&["simulate", "--scenario", "2", "--covariates", "2", "--out", p(tmp.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("`covariates`"));
    let o = nct(&["analyze", "--edges", "e.csv", "--nodes", "n.csv", "--out", p(tmp.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("`alpha`"));
}

struct Files {
    _dir: TempDir,
    edges: PathBuf,
    nodes: PathBuf,
    root: PathBuf,
}

fn export(network: &ClusteredNetwork, w: &[u8], y: &[f64], x: &Covariates) -> Files {
    let dir = TempDir::new().unwrap();
    let edges = dir.path().join("edges.csv");
    let nodes = dir.path().join("nodes.csv");
    write_edge_list(fs::File::create(&edges).unwrap(), network).unwrap();
    write_node_table(fs::File::create(&nodes).unwrap(), network, w, y, x).unwrap();
    let root = dir.path().to_path_buf();
    Files { _dir: dir, edges, nodes, root }
}

fn analyze(f: &Files, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["analyze", "--edges", p(&f.edges), "--nodes", p(&f.nodes), "--alpha", "0.5", "--out", p(out)];
    args.extend_from_slice(extra);
    nct(&args)
}

fn scenario_files(seed: u64) -> (Files, netcausal::simlab::Scenario) {
    let cfg = ScenarioConfig { h: 5.1, reps: 1, ..ScenarioConfig::default() };
    let s = generate_scenario(&cfg, seed).unwrap();
    let net = s.dataset.network();
    let g = compute_exposures(net, &s.assignment, &ExposureMapping::threshold(1).unwrap()).unwrap();
    let y: Vec<f64> = (0..net.unit_count())
        .map(|u| s.potential[u][JointExposure::new(s.assignment[u], g[u]).index()])
        .collect();
    (export(net, &s.assignment, &y, &s.covariates), s)
}

#[test]
fn exported_scenario_gives_in_memory_tree() {
    let (files, s) = scenario_files(21);
    let out = files.root.join("out");
    let o = analyze(&files, &out, &["--seed", "4", "--directed", "false"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let (_, tree) = fit(&s.dataset, &default_estimands(), &TreeParams::default(), 4).unwrap();
    assert_eq!(read(&out, "tree.json"), tree.to_json() + "\n");
    let leaf_csv = read(&out, "leaf_estimates.csv");
    assert!(leaf_csv.starts_with("leaf_id,constraints,contrast,point,se,ci_low,ci_high,n_00,n_10,n_01,n_11\n"));
    assert_eq!(leaf_csv.lines().count(), 1 + 2 * tree.leaves().count());
    assert!(read(&out, "excluded.csv").starts_with("cluster,node,degree\n"));

    // undirected export lists both directions, so directed ingestion agrees
    let out2 = files.root.join("out2");
    assert_eq!(analyze(&files, &out2, &["--seed", "4"]).status.code(), Some(0));
    assert_eq!(read(&out2, "tree.json"), read(&out, "tree.json"));
}

#[test]
fn treatment_outside_zero_one_is_a_schema_error() {
    let tmp = TempDir::new().unwrap();
    let edges = tmp.path().join("e.csv");
    let nodes = tmp.path().join("n.csv");
    fs::write(&edges, "cluster,src,dst\nc,a,b\n").unwrap();
    fs::write(&nodes, "cluster,node,w,y,x1\nc,a,1,0.5,0\nc,b,2,1.0,1\n").unwrap();
    let o = nct(&["analyze", "--edges", p(&edges), "--nodes", p(&nodes), "--alpha", "0.5", "--out", p(tmp.path())]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("line 3") && err.contains("`w`"), "{err}");

    fs::write(&nodes, "cluster,node,y\nc,a,1\n").unwrap();
    let o = nct(&["analyze", "--edges", p(&edges), "--nodes", p(&nodes), "--alpha", "0.5", "--out", p(tmp.path())]);
    assert!(stderr(&o).contains("missing column `w`"));

    fs::write(&nodes, "cluster,node,w,y\nc,a,1,0.5\n").unwrap();
    let o = nct(&["analyze", "--edges", p(&edges), "--nodes", p(&nodes), "--alpha", "0.5", "--out", p(tmp.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("unknown node b"), "{}", stderr(&o));
}

/// 47 clusters of directed friendship-like links with binary covariates.
fn village_fixture(seed: u64) -> Files {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut blocks = Vec::new();
    for c in 0..47 {
        let n = rng.random_range(30..70);
        let out = (0..n)
            .map(|i| {
                let k = rng.random_range(1..=3);
                let mut v: Vec<usize> = Vec::new();
                while v.len() < k {
                    let j = rng.random_range(0..n);
                    if j != i && !v.contains(&j) {
                        v.push(j);
                    }
                }
                v.sort_unstable();
                v
            })
            .collect();
        blocks.push(ClusterBlock {
            label: format!("village{c}"),
            node_labels: (0..n).map(|i| format!("v{c}_{i}")).collect(),
            out,
        });
    }
    let network = ClusteredNetwork::from_blocks(blocks).unwrap();
    let units = network.unit_count();
    let p = 6;
    let x: Vec<f64> = (0..units * p).map(|_| rng.random_range(0..2) as f64).collect();
    let w: Vec<u8> = (0..units).map(|_| rng.random_bool(0.5) as u8).collect();
    let g = compute_exposures(&network, &w, &ExposureMapping::threshold(1).unwrap()).unwrap();
    let y: Vec<f64> = (0..units)
        .map(|u| {
            let het = if x[u * p] == 1.0 { 2.0 } else { 0.0 };
            rng.random_range(-1.0..1.0) + het * w[u] as f64 + 0.5 * g[u] as f64
        })
        .collect();
    let names = (1..=p).map(|k| format!("x{k}")).collect();
    export(&network, &w, &y, &Covariates::new(names, x))
}

#[test]
fn directed_village_fixture_runs() {
    let files = village_fixture(3);
    let out = files.root.join("out");
    let o = analyze(&files, &out, &["--q", "1", "--max-depth", "3", "--min-size", "20"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let tree = NetworkCausalTree::from_json(&read(&out, "tree.json")).unwrap();
    assert!(tree.depth() <= 3);
    assert!(tree.nodes.len() > 1);
    assert!(stderr(&o).contains("positivity: excluded 0 of"));
}

#[test]
fn probs_for_a_single_edge() {
    let tmp = TempDir::new().unwrap();
    let edges = tmp.path().join("e.csv");
    let pairs = tmp.path().join("pairs.csv");
    fs::write(&edges, "cluster,src,dst\nk,a,b\nk,b,c\n").unwrap();
    fs::write(&pairs, "cluster,i,j\nk,a,b\nk,a,c\n").unwrap();
    let out = tmp.path().join("o");
    let o = nct(&[
        "probs", "--edges", p(&edges), "--directed", "false", "--alpha", "0.5", "--q", "1", "--pairs", p(&pairs),
        "--out", p(&out),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let probs = read(&out, "probs.csv");
    let mut lines = probs.lines();
    assert_eq!(lines.next(), Some("cluster,node,degree,pi_00,pi_10,pi_01,pi_11"));
    let rows: Vec<Vec<String>> = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    assert_eq!(rows.len(), 3);
    let a = &rows[0];
    assert_eq!((a[1].as_str(), a[2].as_str(), a[6].as_str()), ("a", "1", "0.25"));
    for r in &rows {
        let s: f64 = r[3..].iter().map(|v| v.parse::<f64>().unwrap()).sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    let net = netcausal::netgraph::build_from_edge_list(
        &[
            netcausal::netgraph::EdgeRow::new("k", "a", "b"),
            netcausal::netgraph::EdgeRow::new("k", "b", "c"),
        ],
        false,
    )
    .unwrap()
    .network;
    let truth = enumerate_cluster(&net.clusters()[0], 0.5, 1);
    let pw = read(&out, "pairwise.csv");
    let mut seen = 0;
    for line in pw.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let j = if f[2] == "b" { 1 } else { 2 };
        let a = JointExposure::from_index(idx(f[4]));
        let b = JointExposure::from_index(idx(f[5]));
        let v: f64 = f[6].parse().unwrap();
        assert!((v - truth.joint[j][a.index()][b.index()]).abs() < 1e-12, "{line}");
        seen += 1;
    }
    assert_eq!(seen, 32);
}

fn idx(wg: &str) -> usize {
    let b = wg.as_bytes();
    (b[0] - b'0') as usize + 2 * (b[1] - b'0') as usize
}

#[test]
fn unknown_pair_node_is_reported() {
    let tmp = TempDir::new().unwrap();
    let edges = tmp.path().join("e.csv");
    let pairs = tmp.path().join("pairs.csv");
    fs::write(&edges, "cluster,src,dst\nk,a,b\n").unwrap();
    fs::write(&pairs, "cluster,i,j\nk,a,z\n").unwrap();
    let o = nct(&["probs", "--edges", p(&edges), "--alpha", "0.5", "--pairs", p(&pairs), "--out", p(tmp.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("\"z\""));
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn outputs_identical_across_worker_counts() {
    let tmp = TempDir::new().unwrap();
    let base = ["simulate", "--clusters", "6", "--reps", "4", "--h", "5.1"];
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert_eq!(nct(&[&base[..], &["--jobs", "1", "--out", p(&a)]].concat()).status.code(), Some(0));
    assert_eq!(nct(&[&base[..], &["--jobs", "8", "--out", p(&b)]].concat()).status.code(), Some(0));
    assert_eq!(dir_bytes(&a), dir_bytes(&b));

    let files = village_fixture(5);
    let a = files.root.join("a");
    let b = files.root.join("b");
    assert_eq!(analyze(&files, &a, &["--jobs", "1"]).status.code(), Some(0));
    assert_eq!(analyze(&files, &b, &["--jobs", "8"]).status.code(), Some(0));
    assert_eq!(dir_bytes(&a), dir_bytes(&b));
}

#[test]
fn manifest_reproduces_the_run() {
    let tmp = TempDir::new().unwrap();
    let a = tmp.path().join("a");
    let o = nct(&["simulate", "--clusters", "5", "--reps", "2", "--h", "0.1,10.1", "--rho", "0.25", "--out", p(&a)]);
    assert_eq!(o.status.code(), Some(0));
    let b = tmp.path().join("b");
    let o = nct(&["simulate", "--config", p(&a.join("manifest.txt")), "--out", p(&b)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(dir_bytes(&a), dir_bytes(&b));

    let files = village_fixture(6);
    let a = files.root.join("a");
    assert_eq!(analyze(&files, &a, &["--seed", "11", "--criterion", "single:0100"]).status.code(), Some(0));
    let b = files.root.join("b");
    let o = nct(&["analyze", "--config", p(&a.join("manifest.txt")), "--out", p(&b)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(dir_bytes(&a), dir_bytes(&b));
}
