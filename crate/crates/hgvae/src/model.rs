//! Learnable state and tape assembly of the forward passes.
//!
//! The model holds a learnable mask token, one attention-layer encoder,
//! two posterior heads (mean and log-variance), and an attention-layer
//! decoder mapping the latent space back to feature space. Forward passes
//! are recorded on a [`Tape`]; parameter traversal order is fixed by the
//! `visit` methods and shared by the optimizer and checkpoints.

use std::sync::Arc;

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;

use crate::config::Config;
use crate::error::Result;
use crate::han::{han_layer, Activation, HanLayerNodes, HanLayerParams};
use crate::hin::HeterogeneousGraph;
use crate::masking::{mask_indicator, zero_masked_rows, MaskPlan};
use crate::rng::{rng_for, Stream};
use crate::tape::{NodeId, Tape};

/// All learnable parameters.
#[derive(Debug, Clone)]
pub struct ModelState {
    /// 1 x F_s learnable token substituted for masked rows.
    pub mask_token: Array2<f64>,
    /// F_s -> hidden.
    pub encoder: HanLayerParams,
    /// hidden -> hidden, row-standardized into the posterior mean.
    pub mu_head: HanLayerParams,
    /// hidden -> hidden, row-standardized and clamped into log-variance.
    pub logvar_head: HanLayerParams,
    /// hidden -> F_s reconstruction.
    pub decoder: HanLayerParams,
    pub feature_dim: usize,
    pub hidden_dim: usize,
}

impl ModelState {
    pub fn init(graph: &HeterogeneousGraph, cfg: &Config) -> Result<Self> {
        let f_s = graph.feature_dim();
        let d = cfg.model.hidden_dim;
        let n_paths = graph.meta_paths.len();
        let activation = Activation::parse(&cfg.model.activation)?;
        let mut rng = rng_for(cfg.train.seed, Stream::ParamInit, 0);
        let sem = cfg.model.semantic_dim;
        let dropout = cfg.model.dropout;
        let encoder = HanLayerParams::init(
            n_paths,
            f_s,
            d,
            cfg.model.heads,
            sem,
            dropout,
            activation,
            &mut rng,
        )?;
        let mu_head = HanLayerParams::init(
            n_paths,
            d,
            d,
            cfg.model.heads,
            sem,
            dropout,
            activation,
            &mut rng,
        )?;
        let logvar_head = HanLayerParams::init(
            n_paths,
            d,
            d,
            cfg.model.heads,
            sem,
            dropout,
            activation,
            &mut rng,
        )?;
        // decoder is single-head: F_s need not divide the head count
        let decoder =
            HanLayerParams::init(n_paths, d, f_s, 1, sem, dropout, activation, &mut rng)?;
        Ok(ModelState {
            mask_token: Array2::zeros((1, f_s)),
            encoder,
            mu_head,
            logvar_head,
            decoder,
            feature_dim: f_s,
            hidden_dim: d,
        })
    }

    pub fn visit(&self, f: &mut impl FnMut(&str, &Array2<f64>)) {
        f("mask_token", &self.mask_token);
        self.encoder.visit("enc", f);
        self.mu_head.visit("mu", f);
        self.logvar_head.visit("logvar", f);
        self.decoder.visit("dec", f);
    }

    pub fn visit_mut(&mut self, f: &mut impl FnMut(&str, &mut Array2<f64>)) {
        f("mask_token", &mut self.mask_token);
        self.encoder.visit_mut("enc", f);
        self.mu_head.visit_mut("mu", f);
        self.logvar_head.visit_mut("logvar", f);
        self.decoder.visit_mut("dec", f);
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, m| n += m.len());
        n
    }

    /// Record every parameter as a tape leaf.
    pub fn leaves(&self, tape: &mut Tape) -> ModelNodes {
        ModelNodes {
            mask_token: tape.leaf(self.mask_token.clone()),
            encoder: self.encoder.leaves(tape),
            mu_head: self.mu_head.leaves(tape),
            logvar_head: self.logvar_head.leaves(tape),
            decoder: self.decoder.leaves(tape),
        }
    }
}

/// Tape leaves mirroring [`ModelState`], in the same traversal order.
pub struct ModelNodes {
    pub mask_token: NodeId,
    pub encoder: HanLayerNodes,
    pub mu_head: HanLayerNodes,
    pub logvar_head: HanLayerNodes,
    pub decoder: HanLayerNodes,
}

impl ModelNodes {
    pub fn visit(&self, f: &mut impl FnMut(&str, NodeId)) {
        f("mask_token", self.mask_token);
        self.encoder.visit("enc", f);
        self.mu_head.visit("mu", f);
        self.logvar_head.visit("logvar", f);
        self.decoder.visit("dec", f);
    }
}

/// Masked feature matrix on the tape: the original features with masked
/// rows zeroed enter as a constant; the token is routed onto the masked
/// rows through an indicator product so its gradient accumulates over all
/// masked rows.
pub fn masked_features_node(
    tape: &mut Tape,
    features: &Array2<f64>,
    plan: &MaskPlan,
    token: NodeId,
) -> NodeId {
    let base = tape.leaf(zero_masked_rows(features, plan));
    let indicator = tape.leaf(mask_indicator(features.nrows(), plan));
    let token_rows = tape.matmul(indicator, token);
    tape.add(base, token_rows)
}

/// Anchor and positive tape nodes from two stochastic encoder passes.
pub struct EncodedViews {
    pub h1: NodeId,
    pub h2: NodeId,
}

/// One encoder pass. Dropout (input features and attention weights) is
/// active iff an rng is supplied.
pub fn encode_node(
    tape: &mut Tape,
    x: NodeId,
    adjacencies: &[Arc<Array2<bool>>],
    encoder: &HanLayerNodes,
    rng: Option<&mut ChaCha8Rng>,
) -> NodeId {
    han_layer(tape, x, adjacencies, encoder, rng).h
}

/// Two encoder passes over the same input with independent dropout draws:
/// the anchor and positive views.
pub fn make_views(
    tape: &mut Tape,
    x: NodeId,
    adjacencies: &[Arc<Array2<bool>>],
    encoder: &HanLayerNodes,
    anchor_rng: &mut ChaCha8Rng,
    positive_rng: &mut ChaCha8Rng,
) -> EncodedViews {
    let h1 = encode_node(tape, x, adjacencies, encoder, Some(anchor_rng));
    let h2 = encode_node(tape, x, adjacencies, encoder, Some(positive_rng));
    EncodedViews { h1, h2 }
}

/// Deterministic embedding: masking disabled, dropout off.
pub fn embed(
    state: &ModelState,
    graph: &HeterogeneousGraph,
    adjacencies: &[Arc<Array2<bool>>],
) -> Array2<f64> {
    let mut tape = Tape::new();
    let x = tape.leaf(graph.target_features().clone());
    let encoder = state.encoder.leaves(&mut tape);
    let h = encode_node(&mut tape, x, adjacencies, &encoder, None);
    tape.value(h).clone()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hin;
    use crate::masking::plan_mask;
    use ndarray::array;
    use std::collections::BTreeMap;

    fn tiny_graph(n_target: usize, f_s: usize) -> HeterogeneousGraph {
        let mut node_counts = BTreeMap::new();
        node_counts.insert("t".to_string(), n_target);
        node_counts.insert("a".to_string(), n_target);
        let mut features = BTreeMap::new();
        features.insert(
            "t".to_string(),
            Array2::from_shape_fn((n_target, f_s), |(i, j)| ((i * 7 + j * 3) % 5) as f64 - 2.0),
        );
        features.insert("a".to_string(), Array2::zeros((n_target, 2)));
        let pairs: Vec<(usize, usize)> = (0..n_target)
            .flat_map(|i| vec![(i, i), (i, (i + 1) % n_target)])
            .collect();
        let edges = vec![hin::EdgeSet {
            name: "ta".to_string(),
            src_type: "t".to_string(),
            dst_type: "a".to_string(),
            pairs,
        }];
        let meta_paths = vec![hin::resolve_meta_path(
            "TAT",
            &["ta".to_string(), "ta".to_string()],
            &edges,
            "t",
        )
        .unwrap()];
        HeterogeneousGraph {
            node_types: vec!["t".to_string(), "a".to_string()],
            node_counts,
            edges,
            features,
            target_type: "t".to_string(),
            num_classes: 2,
            meta_paths,
            labels: vec![None; n_target],
            splits: Vec::new(),
        }
    }

    fn small_config() -> Config {
        let mut cfg = Config::default();
        cfg.model.hidden_dim = 8;
        cfg.model.semantic_dim = 4;
        cfg
    }

    #[test]
    fn masked_rows_carry_token_gradient() {
        let features = array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0], [7.0, 8.0]];
        let plan = plan_mask(4, 0.5, 3, 0).unwrap();
        let token_value = array![[0.25, -0.5]];

        let mut tape = Tape::new();
        let token = tape.leaf(token_value.clone());
        let x_tilde = masked_features_node(&mut tape, &features, &plan, token);

        let v = tape.value(x_tilde).clone();
        for i in 0..4 {
            if plan.masked_ids.contains(&i) {
                assert_eq!(v.row(i).to_vec(), vec![0.25, -0.5]);
            } else {
                assert_eq!(v.row(i), features.row(i));
            }
        }

        let s = tape.sum_all(x_tilde);
        let grads = tape.backward(s);
        let g = grads.wrt(&tape, token);
        // gradient accumulates once per masked row
        assert_eq!(g, Array2::from_elem((1, 2), plan.masked_ids.len() as f64));
    }

    #[test]
    fn embed_is_deterministic_and_finite_for_random_state() {
        let graph = tiny_graph(6, 4);
        let cfg = small_config();
        let state = ModelState::init(&graph, &cfg).unwrap();
        let adjs: Vec<Arc<Array2<bool>>> = hin::all_adjacencies(&graph)
            .unwrap()
            .into_iter()
            .map(|a| Arc::new(a.adjacency))
            .collect();
        let e1 = embed(&state, &graph, &adjs);
        let e2 = embed(&state, &graph, &adjs);
        assert_eq!(e1, e2);
        assert_eq!(e1.dim(), (6, 8));
        assert!(e1.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn views_differ_under_dropout_and_coincide_without() {
        let graph = tiny_graph(6, 4);
        let mut cfg = small_config();
        cfg.model.dropout = 0.5;
        let state = ModelState::init(&graph, &cfg).unwrap();
        let adjs: Vec<Arc<Array2<bool>>> = hin::all_adjacencies(&graph)
            .unwrap()
            .into_iter()
            .map(|a| Arc::new(a.adjacency))
            .collect();

        let mut tape = Tape::new();
        let x = tape.leaf(graph.target_features().clone());
        let nodes = state.leaves(&mut tape);
        let mut rng1 = rng_for(1, Stream::DropoutAnchor, 0);
        let mut rng2 = rng_for(1, Stream::DropoutPositive, 0);
        let views = make_views(&mut tape, x, &adjs, &nodes.encoder, &mut rng1, &mut rng2);
        let h1 = tape.value(views.h1).clone();
        let h2 = tape.value(views.h2).clone();
        assert_eq!(h1.dim(), h2.dim());
        assert!(
            h1.iter().zip(h2.iter()).any(|(a, b)| a != b),
            "independent dropout draws must differ"
        );

        // rate 0: stochastic pass equals deterministic pass
        let mut cfg0 = small_config();
        cfg0.model.dropout = 0.0;
        let state0 = ModelState::init(&graph, &cfg0).unwrap();
        let mut tape0 = Tape::new();
        let x0 = tape0.leaf(graph.target_features().clone());
        let nodes0 = state0.leaves(&mut tape0);
        let mut r1 = rng_for(2, Stream::DropoutAnchor, 0);
        let mut r2 = rng_for(2, Stream::DropoutPositive, 0);
        let v0 = make_views(&mut tape0, x0, &adjs, &nodes0.encoder, &mut r1, &mut r2);
        let a = tape0.value(v0.h1).clone();
        let b = tape0.value(v0.h2).clone();
        let diff = (&a - &b).mapv(f64::abs).sum();
        assert!(diff < 1e-12);
    }

    #[test]
    fn fixed_seed_pair_reproduces_views() {
        let graph = tiny_graph(5, 3);
        let mut cfg = small_config();
        cfg.model.dropout = 0.4;
        let state = ModelState::init(&graph, &cfg).unwrap();
        let adjs: Vec<Arc<Array2<bool>>> = hin::all_adjacencies(&graph)
            .unwrap()
            .into_iter()
            .map(|a| Arc::new(a.adjacency))
            .collect();

        let run = || -> (Array2<f64>, Array2<f64>) {
            let mut tape = Tape::new();
            let x = tape.leaf(graph.target_features().clone());
            let nodes = state.leaves(&mut tape);
            let mut rng1 = rng_for(9, Stream::DropoutAnchor, 4);
            let mut rng2 = rng_for(9, Stream::DropoutPositive, 4);
            let views = make_views(&mut tape, x, &adjs, &nodes.encoder, &mut rng1, &mut rng2);
            (tape.value(views.h1).clone(), tape.value(views.h2).clone())
        };
        let (a1, a2) = run();
        let (b1, b2) = run();
        assert_eq!(a1, b1);
        assert_eq!(a2, b2);
    }

    #[test]
    fn init_is_seed_deterministic() {
        let graph = tiny_graph(4, 4);
        let cfg = small_config();
        let a = ModelState::init(&graph, &cfg).unwrap();
        let b = ModelState::init(&graph, &cfg).unwrap();
        let mut equal = true;
        a.visit(&mut |name, m| {
            b.visit(&mut |name2, m2| {
                if name == name2 && m != m2 {
                    equal = false;
                }
            });
        });
        assert!(equal);
        assert!(a.param_count() > 0);
    }
}
