//! Heterogeneous graph data model, dataset ingestion, and meta-path
//! adjacency algebra.
//!
//! A dataset directory holds `schema.json` (node/edge types, target type,
//! meta-path definitions, class count), one `features_<type>.csv` per node
//! type, one `edges_<type>.csv` per edge type, and optionally `labels.csv`
//! and `splits.json`. Node ids are dense, 0-based per type, assigned by file
//! row order.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One typed edge relation with declared endpoint types.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeSet {
    pub name: String,
    pub src_type: String,
    pub dst_type: String,
    pub pairs: Vec<(usize, usize)>,
}

/// A meta-path over node types, starting and ending at the target type.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaPath {
    pub name: String,
    /// Node types visited, length >= 3, first == last == target type.
    pub node_sequence: Vec<String>,
    /// Edge type names connecting consecutive node types.
    pub edge_sequence: Vec<String>,
}

/// Boolean meta-path reachability among target nodes. The diagonal is
/// always true: a node is its own meta-path neighbor, so attention softmax
/// rows are never empty.
#[derive(Debug, Clone)]
pub struct MetaPathAdjacency {
    pub meta_path: MetaPath,
    pub adjacency: Array2<bool>,
}

/// Train/validation/test node ids for one labeled-nodes-per-class setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSplit {
    pub split_size: usize,
    pub train_ids: Vec<usize>,
    pub val_ids: Vec<usize>,
    pub test_ids: Vec<usize>,
}

/// Typed nodes, typed edges, per-type feature matrices, the target node
/// type, and optional labels plus evaluation splits.
#[derive(Debug, Clone)]
pub struct HeterogeneousGraph {
    pub node_types: Vec<String>,
    pub node_counts: BTreeMap<String, usize>,
    pub edges: Vec<EdgeSet>,
    pub features: BTreeMap<String, Array2<f64>>,
    pub target_type: String,
    pub num_classes: usize,
    pub meta_paths: Vec<MetaPath>,
    /// Class id per target node, where known.
    pub labels: Vec<Option<usize>>,
    pub splits: Vec<LabelSplit>,
}

impl HeterogeneousGraph {
    pub fn target_count(&self) -> usize {
        self.node_counts[&self.target_type]
    }

    pub fn target_features(&self) -> &Array2<f64> {
        &self.features[&self.target_type]
    }

    pub fn feature_dim(&self) -> usize {
        self.target_features().ncols()
    }

    pub fn edge_set(&self, name: &str) -> Option<&EdgeSet> {
        self.edges.iter().find(|e| e.name == name)
    }

    pub fn split(&self, split_size: usize) -> Option<&LabelSplit> {
        self.splits.iter().find(|s| s.split_size == split_size)
    }

    /// Labels as a dense vector; errors if any target node is unlabeled.
    pub fn dense_labels(&self) -> Result<Vec<usize>> {
        self.labels
            .iter()
            .enumerate()
            .map(|(i, l)| {
                l.ok_or_else(|| Error::InvalidData(format!("target node {i} has no label")))
            })
            .collect()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct SchemaNodeType {
    name: String,
    count: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct SchemaEdgeType {
    name: String,
    src: String,
    dst: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct SchemaMetaPath {
    name: String,
    edges: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Schema {
    node_types: Vec<SchemaNodeType>,
    edge_types: Vec<SchemaEdgeType>,
    target_type: String,
    num_classes: usize,
    meta_paths: Vec<SchemaMetaPath>,
}

fn read_to_string(path: &Path) -> Result<String> {
    if !path.exists() {
        return Err(Error::MissingFile {
            path: path.to_path_buf(),
        });
    }
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Resolve a meta-path's node sequence from its edge-type sequence. Edge
/// types may be traversed in either direction; each step must touch the
/// current node type.
pub fn resolve_meta_path(
    name: &str,
    edge_names: &[String],
    edges: &[EdgeSet],
    target_type: &str,
) -> Result<MetaPath> {
    if edge_names.len() < 2 {
        return Err(Error::InvalidData(format!(
            "meta-path '{name}': needs at least 2 edge types, got {}",
            edge_names.len()
        )));
    }
    let mut node_sequence = vec![target_type.to_string()];
    let mut current = target_type.to_string();
    for edge_name in edge_names {
        let edge = edges
            .iter()
            .find(|e| &e.name == edge_name)
            .ok_or_else(|| {
                Error::InvalidData(format!(
                    "meta-path '{name}' references unknown edge type '{edge_name}'"
                ))
            })?;
        let next = if edge.src_type == current {
            edge.dst_type.clone()
        } else if edge.dst_type == current {
            edge.src_type.clone()
        } else {
            return Err(Error::InvalidData(format!(
                "meta-path '{name}': edge type '{edge_name}' ({} -- {}) does not touch '{current}'",
                edge.src_type, edge.dst_type
            )));
        };
        node_sequence.push(next.clone());
        current = next;
    }
    if current != target_type {
        return Err(Error::InvalidData(format!(
            "meta-path '{name}' must end at target type '{target_type}', ends at '{current}'"
        )));
    }
    Ok(MetaPath {
        name: name.to_string(),
        node_sequence,
        edge_sequence: edge_names.to_vec(),
    })
}

fn parse_features(path: &Path, expected_rows: usize, type_name: &str) -> Result<Array2<f64>> {
    let text = read_to_string(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|tok| {
                tok.trim().parse::<f64>().map_err(|_| Error::Parse {
                    path: path.to_path_buf(),
                    line: lineno + 1,
                    message: format!("invalid float '{}'", tok.trim()),
                })
            })
            .collect::<Result<_>>()?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: lineno + 1,
                    message: format!("expected {} columns, found {}", first.len(), row.len()),
                });
            }
        }
        for (col, v) in row.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: lineno + 1,
                    message: format!("non-finite feature value in column {col}"),
                });
            }
        }
        rows.push(row);
    }
    if rows.len() != expected_rows {
        return Err(Error::ShapeMismatch {
            path: path.to_path_buf(),
            entity: type_name.to_string(),
            expected: expected_rows,
            found: rows.len(),
        });
    }
    let dim = rows.first().map_or(0, |r| r.len());
    let mut m = Array2::zeros((rows.len(), dim));
    for (i, row) in rows.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            m[[i, j]] = *v;
        }
    }
    Ok(m)
}

fn parse_edges(
    path: &Path,
    name: &str,
    src_type: &str,
    dst_type: &str,
    src_count: usize,
    dst_count: usize,
) -> Result<EdgeSet> {
    let text = read_to_string(path)?;
    let mut pairs = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut it = line.split(',');
        let parse_id = |tok: Option<&str>| -> Result<usize> {
            tok.and_then(|t| t.trim().parse::<usize>().ok())
                .ok_or_else(|| Error::Parse {
                    path: path.to_path_buf(),
                    line: lineno + 1,
                    message: format!("expected 'src,dst' integers, got '{line}'"),
                })
        };
        let src = parse_id(it.next())?;
        let dst = parse_id(it.next())?;
        if src >= src_count {
            return Err(Error::DanglingEdge {
                path: path.to_path_buf(),
                line: lineno + 1,
                node_id: src,
                node_type: src_type.to_string(),
                count: src_count,
            });
        }
        if dst >= dst_count {
            return Err(Error::DanglingEdge {
                path: path.to_path_buf(),
                line: lineno + 1,
                node_id: dst,
                node_type: dst_type.to_string(),
                count: dst_count,
            });
        }
        pairs.push((src, dst));
    }
    Ok(EdgeSet {
        name: name.to_string(),
        src_type: src_type.to_string(),
        dst_type: dst_type.to_string(),
        pairs,
    })
}

fn parse_labels(path: &Path, target_count: usize, num_classes: usize) -> Result<Vec<Option<usize>>> {
    let mut labels = vec![None; target_count];
    if !path.exists() {
        return Ok(labels);
    }
    let text = read_to_string(path)?;
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut it = line.split(',');
        let bad = || Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            message: format!("expected 'node_id,class_id', got '{line}'"),
        };
        let node: usize = it.next().and_then(|t| t.trim().parse().ok()).ok_or_else(bad)?;
        let class: usize = it.next().and_then(|t| t.trim().parse().ok()).ok_or_else(bad)?;
        if node >= target_count {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                message: format!("label node id {node} out of range (target count {target_count})"),
            });
        }
        if class >= num_classes {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                message: format!("class id {class} out of range (num_classes {num_classes})"),
            });
        }
        labels[node] = Some(class);
    }
    Ok(labels)
}

fn parse_splits(path: &Path, target_count: usize) -> Result<Vec<LabelSplit>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = read_to_string(path)?;
    let raw: BTreeMap<String, BTreeMap<String, Vec<usize>>> =
        serde_json::from_str(&text).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            source: e,
        })?;
    let mut splits = Vec::new();
    for (size, parts) in raw {
        let split_size: usize = size.parse().map_err(|_| {
            Error::InvalidData(format!("splits.json: split size '{size}' is not an integer"))
        })?;
        let get = |key: &str| -> Result<Vec<usize>> {
            parts.get(key).cloned().ok_or_else(|| {
                Error::InvalidData(format!("splits.json: split '{size}' missing '{key}'"))
            })
        };
        let split = LabelSplit {
            split_size,
            train_ids: get("train")?,
            val_ids: get("val")?,
            test_ids: get("test")?,
        };
        validate_split(&split, target_count)?;
        splits.push(split);
    }
    splits.sort_by_key(|s| s.split_size);
    Ok(splits)
}

fn validate_split(split: &LabelSplit, target_count: usize) -> Result<()> {
    let sets = [
        ("train", &split.train_ids),
        ("val", &split.val_ids),
        ("test", &split.test_ids),
    ];
    let mut seen: HashSet<usize> = HashSet::new();
    for (name, ids) in sets {
        for &id in ids {
            if id >= target_count {
                return Err(Error::InvalidData(format!(
                    "split {}: {name} id {id} out of range",
                    split.split_size
                )));
            }
            if !seen.insert(id) {
                return Err(Error::InvalidData(format!(
                    "split {}: id {id} appears in more than one of train/val/test",
                    split.split_size
                )));
            }
        }
    }
    Ok(())
}

/// Load a dataset directory into a validated graph. Deterministic: node ids
/// follow file row order.
pub fn load_dataset(data_dir: &Path) -> Result<HeterogeneousGraph> {
    let schema_path = data_dir.join("schema.json");
    let schema: Schema = serde_json::from_str(&read_to_string(&schema_path)?).map_err(|e| {
        Error::Json {
            path: schema_path.clone(),
            source: e,
        }
    })?;

    let mut node_counts = BTreeMap::new();
    let mut node_types = Vec::new();
    for nt in &schema.node_types {
        node_types.push(nt.name.clone());
        node_counts.insert(nt.name.clone(), nt.count);
    }
    if !node_counts.contains_key(&schema.target_type) {
        return Err(Error::InvalidData(format!(
            "target type '{}' is not a declared node type",
            schema.target_type
        )));
    }

    let mut features = BTreeMap::new();
    for nt in &schema.node_types {
        let path = data_dir.join(format!("features_{}.csv", nt.name));
        features.insert(nt.name.clone(), parse_features(&path, nt.count, &nt.name)?);
    }

    let mut edges = Vec::new();
    for et in &schema.edge_types {
        let src_count = *node_counts.get(&et.src).ok_or_else(|| {
            Error::InvalidData(format!(
                "edge type '{}': unknown src node type '{}'",
                et.name, et.src
            ))
        })?;
        let dst_count = *node_counts.get(&et.dst).ok_or_else(|| {
            Error::InvalidData(format!(
                "edge type '{}': unknown dst node type '{}'",
                et.name, et.dst
            ))
        })?;
        let path = data_dir.join(format!("edges_{}.csv", et.name));
        edges.push(parse_edges(&path, &et.name, &et.src, &et.dst, src_count, dst_count)?);
    }

    if node_types.len() + edges.len() <= 2 {
        eprintln!(
            "warning: {} node type(s) + {} edge type(s) <= 2; input is homogeneous",
            node_types.len(),
            edges.len()
        );
    }

    let mut meta_paths = Vec::new();
    for mp in &schema.meta_paths {
        meta_paths.push(resolve_meta_path(
            &mp.name,
            &mp.edges,
            &edges,
            &schema.target_type,
        )?);
    }

    let target_count = node_counts[&schema.target_type];
    let labels = parse_labels(&data_dir.join("labels.csv"), target_count, schema.num_classes)?;
    let splits = parse_splits(&data_dir.join("splits.json"), target_count)?;

    Ok(HeterogeneousGraph {
        node_types,
        node_counts,
        edges,
        features,
        target_type: schema.target_type,
        num_classes: schema.num_classes,
        meta_paths,
        labels,
        splits,
    })
}

/// Write a graph back out in the on-disk dataset format.
pub fn write_dataset(graph: &HeterogeneousGraph, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let schema = Schema {
        node_types: graph
            .node_types
            .iter()
            .map(|n| SchemaNodeType {
                name: n.clone(),
                count: graph.node_counts[n],
            })
            .collect(),
        edge_types: graph
            .edges
            .iter()
            .map(|e| SchemaEdgeType {
                name: e.name.clone(),
                src: e.src_type.clone(),
                dst: e.dst_type.clone(),
            })
            .collect(),
        target_type: graph.target_type.clone(),
        num_classes: graph.num_classes,
        meta_paths: graph
            .meta_paths
            .iter()
            .map(|m| SchemaMetaPath {
                name: m.name.clone(),
                edges: m.edge_sequence.clone(),
            })
            .collect(),
    };
    let write = |name: &str, contents: String| -> Result<()> {
        let path = out_dir.join(name);
        fs::write(&path, contents).map_err(|e| Error::io(&path, e))
    };
    write(
        "schema.json",
        serde_json::to_string_pretty(&schema).expect("schema serializes"),
    )?;

    for name in &graph.node_types {
        let m = &graph.features[name];
        let mut text = String::new();
        for row in m.rows() {
            let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            text.push_str(&cells.join(","));
            text.push('\n');
        }
        write(&format!("features_{name}.csv"), text)?;
    }
    for edge in &graph.edges {
        let mut text = String::new();
        for (s, d) in &edge.pairs {
            text.push_str(&format!("{s},{d}\n"));
        }
        write(&format!("edges_{}.csv", edge.name), text)?;
    }
    let mut label_text = String::new();
    for (i, l) in graph.labels.iter().enumerate() {
        if let Some(c) = l {
            label_text.push_str(&format!("{i},{c}\n"));
        }
    }
    write("labels.csv", label_text)?;

    let mut splits = BTreeMap::new();
    for s in &graph.splits {
        let mut parts = BTreeMap::new();
        parts.insert("train".to_string(), s.train_ids.clone());
        parts.insert("val".to_string(), s.val_ids.clone());
        parts.insert("test".to_string(), s.test_ids.clone());
        splits.insert(s.split_size.to_string(), parts);
    }
    write(
        "splits.json",
        serde_json::to_string_pretty(&splits).expect("splits serialize"),
    )?;
    Ok(())
}

/// Reachability among target nodes along one meta-path: entry (i, j) is true
/// iff some chain of edge instances follows the path's edge types from i to
/// j. Equivalent to the boolean product of per-step incidence matrices,
/// OR-ed with the identity.
pub fn meta_path_adjacency(
    graph: &HeterogeneousGraph,
    meta_path: &MetaPath,
) -> Result<MetaPathAdjacency> {
    let n_target = graph.target_count();

    // Per step: neighbor lists in traversal direction.
    let mut step_neighbors: Vec<Vec<Vec<usize>>> = Vec::new();
    let mut current_type = graph.target_type.clone();
    for edge_name in &meta_path.edge_sequence {
        let edge = graph.edge_set(edge_name).ok_or_else(|| {
            Error::InvalidData(format!(
                "meta-path '{}' references unknown edge type '{edge_name}'",
                meta_path.name
            ))
        })?;
        let (forward, next_type) = if edge.src_type == current_type {
            (true, edge.dst_type.clone())
        } else if edge.dst_type == current_type {
            (false, edge.src_type.clone())
        } else {
            return Err(Error::InvalidData(format!(
                "meta-path '{}': edge type '{edge_name}' does not touch '{current_type}'",
                meta_path.name
            )));
        };
        let from_count = graph.node_counts[&current_type];
        let mut nbrs = vec![Vec::new(); from_count];
        for &(s, d) in &edge.pairs {
            if forward {
                nbrs[s].push(d);
            } else {
                nbrs[d].push(s);
            }
        }
        step_neighbors.push(nbrs);
        current_type = next_type;
    }

    let mut adjacency = Array2::from_elem((n_target, n_target), false);
    let mut frontier: Vec<usize> = Vec::new();
    let mut next: Vec<usize> = Vec::new();
    let mut mark = vec![false; graph.node_counts.values().copied().max().unwrap_or(0).max(n_target)];
    for i in 0..n_target {
        frontier.clear();
        frontier.push(i);
        for nbrs in &step_neighbors {
            next.clear();
            for &u in frontier.iter() {
                for &v in &nbrs[u] {
                    if !mark[v] {
                        mark[v] = true;
                        next.push(v);
                    }
                }
            }
            for &v in &next {
                mark[v] = false;
            }
            std::mem::swap(&mut frontier, &mut next);
        }
        for &j in frontier.iter() {
            adjacency[[i, j]] = true;
        }
        adjacency[[i, i]] = true;
    }

    Ok(MetaPathAdjacency {
        meta_path: meta_path.clone(),
        adjacency,
    })
}

/// All meta-path adjacencies of a graph, in declaration order.
pub fn all_adjacencies(graph: &HeterogeneousGraph) -> Result<Vec<MetaPathAdjacency>> {
    graph
        .meta_paths
        .iter()
        .map(|mp| meta_path_adjacency(graph, mp))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn toy_graph(edges_ap: Vec<(usize, usize)>) -> HeterogeneousGraph {
        let mut node_counts = BTreeMap::new();
        node_counts.insert("author".to_string(), 3);
        node_counts.insert("paper".to_string(), 2);
        let mut features = BTreeMap::new();
        features.insert("author".to_string(), Array2::zeros((3, 4)));
        features.insert("paper".to_string(), Array2::zeros((2, 4)));
        let edges = vec![EdgeSet {
            name: "writes".to_string(),
            src_type: "author".to_string(),
            dst_type: "paper".to_string(),
            pairs: edges_ap,
        }];
        let meta_paths = vec![resolve_meta_path(
            "APA",
            &["writes".to_string(), "writes".to_string()],
            &edges,
            "author",
        )
        .unwrap()];
        HeterogeneousGraph {
            node_types: vec!["author".to_string(), "paper".to_string()],
            node_counts,
            edges,
            features,
            target_type: "author".to_string(),
            num_classes: 2,
            meta_paths,
            labels: vec![None; 3],
            splits: Vec::new(),
        }
    }

    #[test]
    fn shared_intermediate_node_makes_targets_adjacent() {
        let g = toy_graph(vec![(0, 0), (1, 0)]);
        let adj = meta_path_adjacency(&g, &g.meta_paths[0]).unwrap().adjacency;
        assert!(adj[[0, 1]] && adj[[1, 0]]);
        assert!(!adj[[0, 2]] && !adj[[2, 0]]);
        for i in 0..3 {
            assert!(adj[[i, i]], "diagonal must be true");
        }
    }

    #[test]
    fn no_shared_intermediates_gives_identity_adjacency() {
        let g = toy_graph(vec![(0, 0), (1, 1)]);
        let adj = meta_path_adjacency(&g, &g.meta_paths[0]).unwrap().adjacency;
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(adj[[i, j]], i == j);
            }
        }
    }

    #[test]
    fn empty_edges_gives_identity_adjacency() {
        let g = toy_graph(vec![]);
        let adj = meta_path_adjacency(&g, &g.meta_paths[0]).unwrap().adjacency;
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(adj[[i, j]], i == j);
            }
        }
    }

    #[test]
    fn unknown_edge_type_is_an_error() {
        let g = toy_graph(vec![(0, 0)]);
        let bad = MetaPath {
            name: "bad".to_string(),
            node_sequence: vec!["author".into(), "paper".into(), "author".into()],
            edge_sequence: vec!["cites".into(), "writes".into()],
        };
        assert!(meta_path_adjacency(&g, &bad).is_err());
    }

    /// Brute-force oracle: explicit enumeration of path instances.
    fn enumerate_paths(g: &HeterogeneousGraph, mp: &MetaPath) -> Array2<bool> {
        let n = g.target_count();
        let mut out = Array2::from_elem((n, n), false);
        // direction-resolved edge lookup per step
        let mut steps: Vec<(bool, &EdgeSet)> = Vec::new();
        let mut cur = g.target_type.clone();
        for ename in &mp.edge_sequence {
            let e = g.edge_set(ename).unwrap();
            if e.src_type == cur {
                steps.push((true, e));
                cur = e.dst_type.clone();
            } else {
                steps.push((false, e));
                cur = e.src_type.clone();
            }
        }
        fn walk(
            steps: &[(bool, &EdgeSet)],
            depth: usize,
            node: usize,
            start: usize,
            out: &mut Array2<bool>,
        ) {
            if depth == steps.len() {
                out[[start, node]] = true;
                return;
            }
            let (forward, e) = steps[depth];
            for &(s, d) in &e.pairs {
                let (from, to) = if forward { (s, d) } else { (d, s) };
                if from == node {
                    walk(steps, depth + 1, to, start, out);
                }
            }
        }
        for i in 0..n {
            walk(&steps, 0, i, i, &mut out);
            out[[i, i]] = true;
        }
        out
    }

    #[test]
    fn adjacency_matches_brute_force_enumeration_on_random_hins() {
        let mut rng = StdRng::seed_from_u64(99);
        for trial in 0..20 {
            let n_a = rng.gen_range(2..8);
            let n_p = rng.gen_range(1..6);
            let mut pairs = Vec::new();
            for a in 0..n_a {
                for p in 0..n_p {
                    if rng.gen_bool(0.3) {
                        pairs.push((a, p));
                    }
                }
            }
            let mut g = toy_graph(pairs);
            g.node_counts.insert("author".into(), n_a);
            g.node_counts.insert("paper".into(), n_p);
            g.features.insert("author".into(), Array2::zeros((n_a, 4)));
            g.features.insert("paper".into(), Array2::zeros((n_p, 4)));
            g.labels = vec![None; n_a];
            let adj = meta_path_adjacency(&g, &g.meta_paths[0]).unwrap().adjacency;
            let oracle = enumerate_paths(&g, &g.meta_paths[0]);
            assert_eq!(adj, oracle, "trial {trial} disagrees with enumeration");
        }
    }

    #[test]
    fn palindromic_meta_path_adjacency_is_symmetric() {
        let mut rng = StdRng::seed_from_u64(5);
        for _ in 0..10 {
            let mut pairs = Vec::new();
            for a in 0..6 {
                for p in 0..4 {
                    if rng.gen_bool(0.4) {
                        pairs.push((a, p));
                    }
                }
            }
            let mut g = toy_graph(pairs);
            g.node_counts.insert("author".into(), 6);
            g.node_counts.insert("paper".into(), 4);
            g.features.insert("author".into(), Array2::zeros((6, 4)));
            g.features.insert("paper".into(), Array2::zeros((4, 4)));
            g.labels = vec![None; 6];
            let adj = meta_path_adjacency(&g, &g.meta_paths[0]).unwrap().adjacency;
            assert_eq!(adj, adj.t().to_owned());
        }
    }

    #[test]
    fn write_then_load_round_trips() {
        let mut g = toy_graph(vec![(0, 0), (1, 0), (2, 1)]);
        g.labels = vec![Some(0), Some(1), Some(0)];
        let mut feats = Array2::zeros((3, 4));
        feats[[0, 0]] = 0.125;
        feats[[2, 3]] = -3.5e-7;
        g.features.insert("author".into(), feats);
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&g, dir.path()).unwrap();
        let loaded = load_dataset(dir.path()).unwrap();
        assert_eq!(loaded.node_types, g.node_types);
        assert_eq!(loaded.node_counts, g.node_counts);
        assert_eq!(loaded.edges, g.edges);
        assert_eq!(loaded.features, g.features);
        assert_eq!(loaded.target_type, g.target_type);
        assert_eq!(loaded.num_classes, g.num_classes);
        assert_eq!(loaded.meta_paths, g.meta_paths);
        assert_eq!(loaded.labels, g.labels);
        assert_eq!(loaded.splits, g.splits);
    }

    #[test]
    fn load_is_deterministic() {
        let g = toy_graph(vec![(0, 1), (1, 0), (2, 1)]);
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&g, dir.path()).unwrap();
        let a = load_dataset(dir.path()).unwrap();
        let b = load_dataset(dir.path()).unwrap();
        assert_eq!(a.features, b.features);
        assert_eq!(a.edges, b.edges);
    }

    #[test]
    fn loader_reports_missing_file_and_dangling_edge() {
        let g = toy_graph(vec![(0, 0)]);
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&g, dir.path()).unwrap();
        std::fs::remove_file(dir.path().join("features_paper.csv")).unwrap();
        match load_dataset(dir.path()) {
            Err(Error::MissingFile { path }) => {
                assert!(path.ends_with("features_paper.csv"));
            }
            other => panic!("expected MissingFile, got {other:?}"),
        }

        let dir2 = tempfile::tempdir().unwrap();
        write_dataset(&g, dir2.path()).unwrap();
        std::fs::write(dir2.path().join("edges_writes.csv"), "0,0\n7,1\n").unwrap();
        match load_dataset(dir2.path()) {
            Err(Error::DanglingEdge { line, node_id, .. }) => {
                assert_eq!(line, 2);
                assert_eq!(node_id, 7);
            }
            other => panic!("expected DanglingEdge, got {other:?}"),
        }
    }

    #[test]
    fn loader_rejects_feature_row_count_mismatch_and_nan() {
        let g = toy_graph(vec![(0, 0)]);
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&g, dir.path()).unwrap();
        std::fs::write(dir.path().join("features_author.csv"), "0,0,0,0\n1,1,1,1\n").unwrap();
        match load_dataset(dir.path()) {
            Err(Error::ShapeMismatch { expected, found, .. }) => {
                assert_eq!((expected, found), (3, 2));
            }
            other => panic!("expected ShapeMismatch, got {other:?}"),
        }
        std::fs::write(
            dir.path().join("features_author.csv"),
            "0,0,0,0\n1,NaN,1,1\n2,2,2,2\n",
        )
        .unwrap();
        match load_dataset(dir.path()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected Parse error, got {other:?}"),
        }
    }
}
