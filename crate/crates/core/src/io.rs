//! CSV ingestion and artifact writers.

use std::collections::HashMap;
use std::io::{Read, Write};

use thiserror::Error;

use crate::design::{JointExposure, PairwiseTable};
use crate::estimator::Covariates;
use crate::nct::NetworkCausalTree;
use crate::netgraph::{ClusteredNetwork, EdgeRow, NetworkBuilder, NetworkError, UnitRef};
use crate::simlab::MetricsReport;
use crate::stats::fmt_sig;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{file}: line {line}: {message}")]
    Schema { file: String, line: usize, message: String },
    #[error("{file}: {source}")]
    Csv {
        file: String,
        #[source]
        source: csv::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Network(#[from] NetworkError),
}

fn schema(file: &str, line: usize, message: impl Into<String>) -> IoError {
    IoError::Schema {
        file: file.into(),
        line,
        message: message.into(),
    }
}

fn csv_err(file: &str) -> impl Fn(csv::Error) -> IoError + '_ {
    move |source| IoError::Csv { file: file.into(), source }
}

fn column(headers: &csv::StringRecord, name: &str, file: &str) -> Result<usize, IoError> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| schema(file, 1, format!("missing column `{name}`")))
}

/// Reads `cluster,src,dst`. `file` only labels diagnostics.
pub fn read_edge_list<R: Read>(reader: R, file: &str) -> Result<Vec<EdgeRow>, IoError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(csv_err(file))?.clone();
    let (c, s, d) = (
        column(&headers, "cluster", file)?,
        column(&headers, "src", file)?,
        column(&headers, "dst", file)?,
    );
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err(file))?;
        let get = |k: usize| rec.get(k).unwrap_or("").to_string();
        let row = EdgeRow::new(get(c), get(s), get(d));
        if row.cluster.is_empty() || row.src.is_empty() || row.dst.is_empty() {
            return Err(schema(file, i + 2, "empty cluster, src or dst"));
        }
        rows.push(row);
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeRow {
    pub cluster: String,
    pub node: String,
    pub w: u8,
    pub y: f64,
    pub x: Vec<f64>,
}

/// Parsed `cluster,node,w,y,<covariates...>` table.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeTable {
    pub covariate_names: Vec<String>,
    pub rows: Vec<NodeRow>,
}

pub fn read_node_table<R: Read>(reader: R, file: &str) -> Result<NodeTable, IoError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(csv_err(file))?.clone();
    let fixed = ["cluster", "node", "w", "y"];
    let idx: Vec<usize> = fixed
        .iter()
        .map(|n| column(&headers, n, file))
        .collect::<Result<_, _>>()?;
    let cov_cols: Vec<usize> = (0..headers.len()).filter(|k| !idx.contains(k)).collect();
    let covariate_names = cov_cols.iter().map(|&k| headers[k].trim().to_string()).collect();
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(csv_err(file))?;
        let field = |k: usize| rec.get(k).unwrap_or("");
        let w = match field(idx[2]) {
            "0" => 0,
            "1" => 1,
            other => return Err(schema(file, line, format!("column `w` must be 0 or 1, got {other:?}"))),
        };
        let num = |k: usize, name: &str| -> Result<f64, IoError> {
            let v: f64 = field(k)
                .parse()
                .map_err(|_| schema(file, line, format!("column `{name}` is not a number: {:?}", field(k))))?;
            if !v.is_finite() {
                return Err(schema(file, line, format!("column `{name}` is not finite")));
            }
            Ok(v)
        };
        let y = num(idx[3], "y")?;
        let x = cov_cols
            .iter()
            .map(|&k| num(k, headers[k].trim()))
            .collect::<Result<_, _>>()?;
        rows.push(NodeRow {
            cluster: field(idx[0]).to_string(),
            node: field(idx[1]).to_string(),
            w,
            y,
            x,
        });
    }
    Ok(NodeTable { covariate_names, rows })
}

/// Network plus unit-level data in global unit order.
#[derive(Debug, Clone)]
pub struct Assembled {
    pub network: ClusteredNetwork,
    pub assignment: Vec<u8>,
    pub outcomes: Vec<f64>,
    pub covariates: Covariates,
    pub duplicate_edges: usize,
}

/// Nodes come from the node table (in file order); edges naming an absent
/// node are rejected.
pub fn assemble(nodes: &NodeTable, edges: &[EdgeRow], directed: bool, file: &str) -> Result<Assembled, IoError> {
    let mut builder = NetworkBuilder::new();
    let mut seen = HashMap::new();
    for (i, row) in nodes.rows.iter().enumerate() {
        if seen.insert(row.node.clone(), i).is_some() {
            return Err(schema(file, i + 2, format!("node {:?} listed twice", row.node)));
        }
        builder.add_node(&row.cluster, &row.node)?;
    }
    builder.freeze_nodes();
    for e in edges {
        builder.add_edge(e, directed)?;
    }
    let duplicate_edges = builder.duplicates();
    let network = builder.build()?;
    let n = network.unit_count();
    let p = nodes.covariate_names.len();
    let mut assignment = vec![0; n];
    let mut outcomes = vec![0.0; n];
    let mut values = vec![0.0; n * p];
    for g in 0..n {
        let (_, label) = network.label(network.unit_at(g));
        let row = &nodes.rows[seen[label]];
        assignment[g] = row.w;
        outcomes[g] = row.y;
        values[g * p..(g + 1) * p].copy_from_slice(&row.x);
    }
    Ok(Assembled {
        network,
        assignment,
        outcomes,
        covariates: Covariates::new(nodes.covariate_names.clone(), values),
        duplicate_edges,
    })
}

/// Writes every directed out-edge as `cluster,src,dst`.
pub fn write_edge_list<W: Write>(out: W, network: &ClusteredNetwork) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["cluster", "src", "dst"]).map_err(csv_err("edges"))?;
    for u in network.units() {
        let (cluster, src) = network.label(u);
        for &j in network.out_neighbors(u) {
            let (_, dst) = network.label(UnitRef { cluster: u.cluster, node: j });
            w.write_record([cluster, src, dst]).map_err(csv_err("edges"))?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes `cluster,node,w,y,<covariates>`; numbers in shortest round-trip form.
pub fn write_node_table<W: Write>(
    out: W,
    network: &ClusteredNetwork,
    assignment: &[u8],
    outcomes: &[f64],
    covariates: &Covariates,
) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["cluster".to_string(), "node".into(), "w".into(), "y".into()];
    header.extend(covariates.names.iter().cloned());
    w.write_record(&header).map_err(csv_err("nodes"))?;
    for (g, u) in network.units().enumerate() {
        let (cluster, node) = network.label(u);
        let mut rec = vec![cluster.to_string(), node.to_string(), assignment[g].to_string(), outcomes[g].to_string()];
        rec.extend(covariates.row(g).iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(csv_err("nodes"))?;
    }
    w.flush()?;
    Ok(())
}

/// `cluster,node,degree,pi_00,pi_10,pi_01,pi_11`.
pub fn write_marginals<W: Write>(out: W, network: &ClusteredNetwork, marginals: &[[f64; 4]]) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["cluster", "node", "degree", "pi_00", "pi_10", "pi_01", "pi_11"])
        .map_err(csv_err("probs"))?;
    for (g, u) in network.units().enumerate() {
        let (cluster, node) = network.label(u);
        let mut rec = vec![cluster.to_string(), node.to_string(), network.degree(u).to_string()];
        rec.extend(marginals[g].iter().map(|&p| fmt_sig(p)));
        w.write_record(&rec).map_err(csv_err("probs"))?;
    }
    w.flush()?;
    Ok(())
}

/// `cluster,node,degree` for units dropped by the positivity filter
/// (`excluded` holds global unit indices).
pub fn write_excluded<W: Write>(out: W, network: &ClusteredNetwork, excluded: &[usize]) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["cluster", "node", "degree"]).map_err(csv_err("excluded"))?;
    for &g in excluded {
        let u = network.unit_at(g);
        let (cluster, node) = network.label(u);
        w.write_record([cluster, node, &network.degree(u).to_string()])
            .map_err(csv_err("excluded"))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `cluster,i,j` pairs of node labels.
pub fn read_pairs<R: Read>(reader: R, file: &str) -> Result<Vec<(String, String, String)>, IoError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(csv_err(file))?.clone();
    let (c, i, j) = (
        column(&headers, "cluster", file)?,
        column(&headers, "i", file)?,
        column(&headers, "j", file)?,
    );
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err(file))?;
        let get = |k: usize| rec.get(k).unwrap_or("").to_string();
        out.push((get(c), get(i), get(j)));
    }
    Ok(out)
}

/// Long format: one row per pair and pair of conditions.
pub fn write_pairwise<W: Write>(out: W, rows: &[(String, String, String, PairwiseTable)]) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["cluster", "i", "j", "method", "wg_i", "wg_j", "probability", "std_error"])
        .map_err(csv_err("pairwise"))?;
    for (cluster, i, j, t) in rows {
        for a in JointExposure::ALL {
            for b in JointExposure::ALL {
                let se = t
                    .std_errors
                    .map(|s| fmt_sig(s[a.index()][b.index()]))
                    .unwrap_or_default();
                w.write_record([
                    cluster.as_str(),
                    i,
                    j,
                    &t.method.to_string(),
                    &format!("{}{}", a.w, a.g),
                    &format!("{}{}", b.w, b.g),
                    &fmt_sig(t.get(a, b)),
                    &se,
                ])
                .map_err(csv_err("pairwise"))?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_sig).unwrap_or_else(|| "NA".into())
}

/// `leaf_id,constraints,contrast,point,se,ci_low,ci_high,n_00,n_10,n_01,n_11`
/// for terminal nodes.
pub fn write_leaf_estimates<W: Write>(out: W, tree: &NetworkCausalTree) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "leaf_id", "constraints", "contrast", "point", "se", "ci_low", "ci_high", "n_00", "n_10", "n_01", "n_11",
    ])
    .map_err(csv_err("leaf_estimates"))?;
    for node in tree.leaves() {
        let leaf = tree.leaf_of(node.id).render(&tree.covariates);
        for e in &node.estimates {
            let mut rec = vec![
                node.id.to_string(),
                leaf.clone(),
                e.contrast.code(),
                opt(e.point),
                opt(e.se),
                opt(e.ci.map(|c| c[0])),
                opt(e.ci.map(|c| c[1])),
            ];
            rec.extend(e.cells.iter().map(|n| n.to_string()));
            w.write_record(&rec).map_err(csv_err("leaf_estimates"))?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `effect,h,leaf,mean_est,mean_se,mse,bias,coverage,replications,excluded_units`.
pub fn write_metrics<W: Write>(out: W, reports: &[MetricsReport]) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "effect",
        "h",
        "leaf",
        "mean_est",
        "mean_se",
        "mse",
        "bias",
        "coverage",
        "replications",
        "excluded_units",
    ])
    .map_err(csv_err("metrics"))?;
    for r in reports {
        for m in &r.metrics {
            w.write_record([
                m.effect.clone(),
                fmt_sig(m.h),
                m.leaf.clone(),
                opt(m.mean_est),
                opt(m.mean_se),
                opt(m.mse),
                opt(m.bias),
                opt(m.coverage),
                m.replications.to_string(),
                m.excluded_units.to_string(),
            ])
            .map_err(csv_err("metrics"))?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `criterion,h,mean_correct_rules` over the union of all true rules.
pub fn write_discovery<W: Write>(out: W, reports: &[MetricsReport]) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["criterion", "h", "mean_correct_rules"])
        .map_err(csv_err("discovery"))?;
    for r in reports {
        for d in r.discovery.iter().filter(|d| d.rule_set == "all") {
            w.write_record([d.criterion.clone(), fmt_sig(d.h), fmt_sig(d.mean_correct_rules)])
                .map_err(csv_err("discovery"))?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `criterion,h,rule_set,mean_correct_rules` with per-effect rule sets.
pub fn write_discovery_by_effect<W: Write>(out: W, reports: &[MetricsReport]) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["criterion", "h", "rule_set", "mean_correct_rules"])
        .map_err(csv_err("discovery_by_effect"))?;
    for r in reports {
        for d in &r.discovery {
            w.write_record([d.criterion.clone(), fmt_sig(d.h), d.rule_set.clone(), fmt_sig(d.mean_correct_rules)])
                .map_err(csv_err("discovery_by_effect"))?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn node_table_rejects_bad_treatment() {
        let data = "cluster,node,w,y,x1\n1,a,0,1.5,0\n1,b,2,0.3,1\n";
        let err = read_node_table(data.as_bytes(), "nodes.csv").unwrap_err();
        assert!(matches!(err, IoError::Schema { line: 3, .. }), "{err}");
        assert!(err.to_string().contains("`w`"));
    }

    #[test]
    fn node_table_requires_columns() {
        let err = read_node_table("cluster,node,y\n".as_bytes(), "nodes.csv").unwrap_err();
        assert!(err.to_string().contains("missing column `w`"));
    }

    #[test]
    fn edge_list_requires_columns() {
        let err = read_edge_list("cluster,from,to\n1,a,b\n".as_bytes(), "edges.csv").unwrap_err();
        assert!(err.to_string().contains("missing column `src`"));
    }

    #[test]
    fn unknown_node_in_edges() {
        let nodes = read_node_table("cluster,node,w,y\n1,a,0,0\n1,b,1,0\n".as_bytes(), "n").unwrap();
        let edges = read_edge_list("cluster,src,dst\n1,a,c\n".as_bytes(), "e").unwrap();
        let err = assemble(&nodes, &edges, true, "n").unwrap_err();
        assert!(matches!(err, IoError::Network(NetworkError::UnknownNode { .. })));
    }

    #[test]
    fn export_round_trip() {
        let net = crate::netgraph::generate_er_clusters(3, 6, 0.4, 2).unwrap();
        let n = net.unit_count();
        let w: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        let y: Vec<f64> = (0..n).map(|i| i as f64 / 7.0 - 0.3).collect();
        let cov = Covariates::new(vec!["a".into(), "b".into()], (0..2 * n).map(|i| (i % 3) as f64).collect());
        let mut e = Vec::new();
        let mut nt = Vec::new();
        write_edge_list(&mut e, &net).unwrap();
        write_node_table(&mut nt, &net, &w, &y, &cov).unwrap();
        let edges = read_edge_list(e.as_slice(), "e").unwrap();
        let nodes = read_node_table(nt.as_slice(), "n").unwrap();
        let a = assemble(&nodes, &edges, true, "n").unwrap();
        assert_eq!(a.network, net);
        assert_eq!(a.assignment, w);
        assert_eq!(a.outcomes, y);
        assert_eq!(a.covariates, cov);
    }
}
