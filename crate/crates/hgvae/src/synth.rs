//! Planted-partition synthetic heterogeneous graphs for desk-scale
//! verification.
//!
//! Target nodes get class-correlated Gaussian features. Each relation draws
//! a planted partition over target pairs (probability `p_in` within a class,
//! `p_out` across) and realizes every drawn pair through a dedicated
//! auxiliary node, so the induced meta-path adjacency reproduces the planted
//! partition exactly and its in-class edge fraction concentrates on
//! p_in / (p_in + (C-1) * p_out).

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hin::{self, EdgeSet, HeterogeneousGraph, LabelSplit};
use crate::rng::{rng_for, Stream};

/// Generator parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_classes: usize,
    pub nodes_per_class: usize,
    /// Number of auxiliary node types; one relation and one meta-path each.
    pub aux_types: usize,
    /// Within-class link probability per relation.
    pub p_in: f64,
    /// Cross-class link probability per relation.
    pub p_out: f64,
    pub feature_dim: usize,
    /// Standard deviation of per-node feature noise.
    pub noise: f64,
    /// Norm of each class's mean feature vector.
    pub class_separation: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_classes: 4,
            nodes_per_class: 100,
            aux_types: 2,
            p_in: 0.15,
            p_out: 0.02,
            feature_dim: 64,
            noise: 1.0,
            class_separation: 1.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: SyntheticSpec = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::Config("need at least 2 classes".into()));
        }
        if self.nodes_per_class == 0 {
            return Err(Error::Config("need at least 1 node per class".into()));
        }
        if self.aux_types < 2 {
            return Err(Error::Config(
                "need at least 2 auxiliary node types for a heterogeneous graph".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.p_in) || !(0.0..=1.0).contains(&self.p_out) {
            return Err(Error::Config("link probabilities must be in [0, 1]".into()));
        }
        if self.p_in <= self.p_out {
            return Err(Error::Config(format!(
                "planted signal requires p_in ({}) > p_out ({})",
                self.p_in, self.p_out
            )));
        }
        if self.feature_dim < self.n_classes {
            return Err(Error::Config(format!(
                "feature_dim {} must be >= n_classes {}",
                self.feature_dim, self.n_classes
            )));
        }
        if self.noise < 0.0 || self.class_separation < 0.0 {
            return Err(Error::Config("noise and separation must be >= 0".into()));
        }
        Ok(())
    }

    pub fn target_count(&self) -> usize {
        self.n_classes * self.nodes_per_class
    }
}

/// Aux-node feature width (auxiliary features are format filler; the model
/// attends over target features only).
const AUX_FEATURE_DIM: usize = 4;

/// Label-split sizes emitted when the per-class node count permits.
const SPLIT_SIZES: [usize; 3] = [20, 40, 60];

/// Build the graph in memory.
pub fn generate(spec: &SyntheticSpec) -> Result<HeterogeneousGraph> {
    spec.validate()?;
    let mut rng = rng_for(spec.seed, Stream::Synthetic, 0);
    let n = spec.target_count();
    let classes: Vec<usize> = (0..n).map(|i| i / spec.nodes_per_class).collect();

    // class-correlated target features: mean = separation * e_class
    let mut target_features = Array2::zeros((n, spec.feature_dim));
    for i in 0..n {
        for j in 0..spec.feature_dim {
            let mean = if j == classes[i] {
                spec.class_separation
            } else {
                0.0
            };
            target_features[[i, j]] =
                mean + spec.noise * rng.sample::<f64, _>(StandardNormal);
        }
    }

    let mut node_types = vec!["target".to_string()];
    let mut node_counts = BTreeMap::new();
    node_counts.insert("target".to_string(), n);
    let mut features = BTreeMap::new();
    features.insert("target".to_string(), target_features);
    let mut edges = Vec::new();
    let mut schema_meta_paths = Vec::new();

    for k in 0..spec.aux_types {
        let aux_name = format!("aux{k}");
        let edge_name = format!("link{k}");
        let mut pairs: Vec<(usize, usize)> = Vec::new();
        let mut aux_count = 0usize;
        for i in 0..n {
            for j in (i + 1)..n {
                let p = if classes[i] == classes[j] {
                    spec.p_in
                } else {
                    spec.p_out
                };
                if rng.gen::<f64>() < p {
                    pairs.push((i, aux_count));
                    pairs.push((j, aux_count));
                    aux_count += 1;
                }
            }
        }
        // every aux node is referenced by construction, but an empty
        // relation still needs one node so the feature file is well formed
        if aux_count == 0 {
            aux_count = 1;
        }
        let aux_features = Array2::from_shape_fn((aux_count, AUX_FEATURE_DIM), |_| {
            0.01 * rng.sample::<f64, _>(StandardNormal)
        });
        node_types.push(aux_name.clone());
        node_counts.insert(aux_name.clone(), aux_count);
        features.insert(aux_name.clone(), aux_features);
        edges.push(EdgeSet {
            name: edge_name.clone(),
            src_type: "target".to_string(),
            dst_type: aux_name,
            pairs,
        });
        schema_meta_paths.push((format!("mp{k}"), vec![edge_name.clone(), edge_name]));
    }

    let meta_paths = schema_meta_paths
        .iter()
        .map(|(name, edge_seq)| hin::resolve_meta_path(name, edge_seq, &edges, "target"))
        .collect::<Result<Vec<_>>>()?;

    let labels: Vec<Option<usize>> = classes.iter().map(|&c| Some(c)).collect();
    let splits = make_splits(spec, &classes, &mut rng)?;

    Ok(HeterogeneousGraph {
        node_types,
        node_counts,
        edges,
        features,
        target_type: "target".to_string(),
        num_classes: spec.n_classes,
        meta_paths,
        labels,
        splits,
    })
}

/// Per split size: `size` labeled train nodes per class, then
/// val = test = min(1000, remaining / 2), all drawn without replacement.
fn make_splits(
    spec: &SyntheticSpec,
    classes: &[usize],
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<Vec<LabelSplit>> {
    let n = classes.len();
    let mut splits = Vec::new();
    for &size in &SPLIT_SIZES {
        if size + 2 > spec.nodes_per_class {
            continue; // this split size is infeasible for the class size
        }
        let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); spec.n_classes];
        for (i, &c) in classes.iter().enumerate() {
            per_class[c].push(i);
        }
        let mut train = Vec::new();
        let mut rest = Vec::new();
        for ids in per_class.iter_mut() {
            ids.shuffle(rng);
            train.extend_from_slice(&ids[..size]);
            rest.extend_from_slice(&ids[size..]);
        }
        rest.shuffle(rng);
        let half = (n - train.len()) / 2;
        let eval_size = half.min(1000);
        if eval_size == 0 {
            continue;
        }
        train.sort_unstable();
        let mut val = rest[..eval_size].to_vec();
        let mut test = rest[eval_size..2 * eval_size].to_vec();
        val.sort_unstable();
        test.sort_unstable();
        splits.push(LabelSplit {
            split_size: size,
            train_ids: train,
            val_ids: val,
            test_ids: test,
        });
    }
    if splits.is_empty() {
        return Err(Error::Config(format!(
            "spec infeasible: no split size in {SPLIT_SIZES:?} fits {} nodes per class",
            spec.nodes_per_class
        )));
    }
    Ok(splits)
}

/// Generate and write the on-disk dataset directory.
pub fn gen_synthetic(spec: &SyntheticSpec, out_dir: &Path) -> Result<HeterogeneousGraph> {
    let graph = generate(spec)?;
    hin::write_dataset(&graph, out_dir)?;
    Ok(graph)
}
