//! Hierarchical attention over meta-paths: node-level attention within each
//! meta-path adjacency, semantic-level attention across meta-paths.
//!
//! One layer projects input features per meta-path (and per head), scores
//! node pairs with an additive attention vector, softmaxes the scores over
//! each node's meta-path neighborhood, aggregates projected neighbor
//! features, and finally fuses the per-path embeddings with a softmax over
//! per-path importance scores. The same layer shape serves as encoder,
//! posterior head, and decoder.

use std::sync::Arc;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tape::{NodeId, Tape};

/// Slope of the LeakyReLU applied to raw attention scores.
pub const ATTN_LEAKY_SLOPE: f64 = 0.2;

/// Output nonlinearity of a layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Elu,
    Identity,
}

impl Activation {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "elu" => Ok(Activation::Elu),
            "identity" | "linear" => Ok(Activation::Identity),
            other => Err(Error::Config(format!("unknown activation '{other}'"))),
        }
    }

    fn apply(self, tape: &mut Tape, x: NodeId) -> NodeId {
        match self {
            Activation::Elu => tape.elu(x, 1.0),
            Activation::Identity => x,
        }
    }
}

/// One attention head for one meta-path.
#[derive(Debug, Clone)]
pub struct HeadParams {
    /// Projection, d_in x d_head.
    pub w: Array2<f64>,
    /// Source half of the additive attention vector, d_head x 1.
    pub a_src: Array2<f64>,
    /// Destination half, d_head x 1.
    pub a_dst: Array2<f64>,
}

/// Shared semantic-attention parameters of a layer.
#[derive(Debug, Clone)]
pub struct SemanticParams {
    /// d_out x d_sem.
    pub w: Array2<f64>,
    /// 1 x d_sem.
    pub b: Array2<f64>,
    /// d_sem x 1.
    pub q: Array2<f64>,
}

/// All parameters of one hierarchical attention layer: per-meta-path,
/// per-head node attention plus shared semantic attention.
#[derive(Debug, Clone)]
pub struct HanLayerParams {
    /// paths[p][h] is head h for meta-path p.
    pub paths: Vec<Vec<HeadParams>>,
    pub semantic: SemanticParams,
    pub in_dim: usize,
    pub out_dim: usize,
    pub dropout: f64,
    pub activation: Activation,
}

fn xavier(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-bound..bound))
}

impl HanLayerParams {
    /// Xavier-uniform init; one head set per meta-path, shared semantic head.
    pub fn init(
        n_paths: usize,
        in_dim: usize,
        out_dim: usize,
        heads: usize,
        sem_dim: usize,
        dropout: f64,
        activation: Activation,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if n_paths == 0 {
            return Err(Error::Config("layer needs at least one meta-path".into()));
        }
        if out_dim % heads != 0 {
            return Err(Error::Config(format!(
                "out_dim {out_dim} not divisible by heads {heads}"
            )));
        }
        let d_head = out_dim / heads;
        let paths = (0..n_paths)
            .map(|_| {
                (0..heads)
                    .map(|_| HeadParams {
                        w: xavier(rng, in_dim, d_head),
                        a_src: xavier(rng, d_head, 1),
                        a_dst: xavier(rng, d_head, 1),
                    })
                    .collect()
            })
            .collect();
        let semantic = SemanticParams {
            w: xavier(rng, out_dim, sem_dim),
            b: Array2::zeros((1, sem_dim)),
            q: xavier(rng, sem_dim, 1),
        };
        Ok(HanLayerParams {
            paths,
            semantic,
            in_dim,
            out_dim,
            dropout,
            activation,
        })
    }

    pub fn visit(&self, prefix: &str, f: &mut impl FnMut(&str, &Array2<f64>)) {
        for (p, heads) in self.paths.iter().enumerate() {
            for (h, head) in heads.iter().enumerate() {
                f(&format!("{prefix}.path{p}.head{h}.w"), &head.w);
                f(&format!("{prefix}.path{p}.head{h}.a_src"), &head.a_src);
                f(&format!("{prefix}.path{p}.head{h}.a_dst"), &head.a_dst);
            }
        }
        f(&format!("{prefix}.sem.w"), &self.semantic.w);
        f(&format!("{prefix}.sem.b"), &self.semantic.b);
        f(&format!("{prefix}.sem.q"), &self.semantic.q);
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut impl FnMut(&str, &mut Array2<f64>)) {
        for (p, heads) in self.paths.iter_mut().enumerate() {
            for (h, head) in heads.iter_mut().enumerate() {
                f(&format!("{prefix}.path{p}.head{h}.w"), &mut head.w);
                f(&format!("{prefix}.path{p}.head{h}.a_src"), &mut head.a_src);
                f(&format!("{prefix}.path{p}.head{h}.a_dst"), &mut head.a_dst);
            }
        }
        f(&format!("{prefix}.sem.w"), &mut self.semantic.w);
        f(&format!("{prefix}.sem.b"), &mut self.semantic.b);
        f(&format!("{prefix}.sem.q"), &mut self.semantic.q);
    }

    /// Record every parameter as a tape leaf, preserving structure.
    pub fn leaves(&self, tape: &mut Tape) -> HanLayerNodes {
        let paths = self
            .paths
            .iter()
            .map(|heads| {
                heads
                    .iter()
                    .map(|h| HeadNodes {
                        w: tape.leaf(h.w.clone()),
                        a_src: tape.leaf(h.a_src.clone()),
                        a_dst: tape.leaf(h.a_dst.clone()),
                    })
                    .collect()
            })
            .collect();
        HanLayerNodes {
            paths,
            sem_w: tape.leaf(self.semantic.w.clone()),
            sem_b: tape.leaf(self.semantic.b.clone()),
            sem_q: tape.leaf(self.semantic.q.clone()),
            dropout: self.dropout,
            activation: self.activation,
        }
    }
}

/// Tape leaves mirroring [`HanLayerParams`].
pub struct HanLayerNodes {
    pub paths: Vec<Vec<HeadNodes>>,
    pub sem_w: NodeId,
    pub sem_b: NodeId,
    pub sem_q: NodeId,
    pub dropout: f64,
    pub activation: Activation,
}

pub struct HeadNodes {
    pub w: NodeId,
    pub a_src: NodeId,
    pub a_dst: NodeId,
}

impl HanLayerNodes {
    pub fn visit(&self, prefix: &str, f: &mut impl FnMut(&str, NodeId)) {
        for (p, heads) in self.paths.iter().enumerate() {
            for (h, head) in heads.iter().enumerate() {
                f(&format!("{prefix}.path{p}.head{h}.w"), head.w);
                f(&format!("{prefix}.path{p}.head{h}.a_src"), head.a_src);
                f(&format!("{prefix}.path{p}.head{h}.a_dst"), head.a_dst);
            }
        }
        f(&format!("{prefix}.sem.w"), self.sem_w);
        f(&format!("{prefix}.sem.b"), self.sem_b);
        f(&format!("{prefix}.sem.q"), self.sem_q);
    }
}

/// Bernoulli keep-mask scaled by 1/(1-rate); multiplying by it is inverted
/// dropout.
pub fn dropout_mask(rng: &mut ChaCha8Rng, rows: usize, cols: usize, rate: f64) -> Array2<f64> {
    let keep = 1.0 - rate;
    Array2::from_shape_fn((rows, cols), |_| {
        if rng.gen::<f64>() < rate {
            0.0
        } else {
            1.0 / keep
        }
    })
}

/// Output of one layer forward: fused embedding, per-path semantic weights,
/// and the per-path post-softmax attention matrices (for inspection).
pub struct LayerOutput {
    pub h: NodeId,
    /// P x 1 softmax weights over meta-paths.
    pub beta: NodeId,
    pub attention: Vec<NodeId>,
    pub path_embeddings: Vec<NodeId>,
}

/// Node-level attention for one meta-path (all heads, concatenated).
/// Returns the activated path embedding and each head's attention matrix.
pub fn node_level_attention(
    tape: &mut Tape,
    x: NodeId,
    adjacency: &Arc<Array2<bool>>,
    heads: &[HeadNodes],
    activation: Activation,
    dropout: f64,
    rng: Option<&mut ChaCha8Rng>,
) -> (NodeId, Vec<NodeId>) {
    let n = tape.value(x).nrows();
    assert_eq!(adjacency.dim(), (n, n), "adjacency must be n x n over inputs");
    let mut head_outputs = Vec::with_capacity(heads.len());
    let mut attn_nodes = Vec::with_capacity(heads.len());
    // One attention-dropout mask per head, drawn up front so an optional
    // borrow of the rng suffices.
    let attn_masks: Option<Vec<Arc<Array2<f64>>>> = rng.map(|r| {
        (0..heads.len())
            .map(|_| Arc::new(dropout_mask(r, n, n, dropout)))
            .collect()
    });
    for (k, head) in heads.iter().enumerate() {
        let projected = tape.matmul(x, head.w);
        let f_src = tape.matmul(projected, head.a_src);
        let f_dst = tape.matmul(projected, head.a_dst);
        let scores = tape.pairwise_add(f_src, f_dst);
        let scores = tape.leaky_relu(scores, ATTN_LEAKY_SLOPE);
        let attn = tape.masked_softmax_rows(scores, adjacency.clone());
        attn_nodes.push(attn);
        let attn = match &attn_masks {
            Some(masks) => tape.mul_const(attn, masks[k].clone()),
            None => attn,
        };
        head_outputs.push(tape.matmul(attn, projected));
    }
    let combined = if head_outputs.len() == 1 {
        head_outputs[0]
    } else {
        tape.concat_cols(&head_outputs)
    };
    (activation.apply(tape, combined), attn_nodes)
}

/// Semantic-level attention: per-path scalar importance scores softmaxed
/// into weights beta, output is the beta-weighted sum of path embeddings.
pub fn semantic_attention(
    tape: &mut Tape,
    path_embeddings: &[NodeId],
    sem_w: NodeId,
    sem_b: NodeId,
    sem_q: NodeId,
) -> (NodeId, NodeId) {
    assert!(!path_embeddings.is_empty(), "semantic attention needs >= 1 path");
    let scores: Vec<NodeId> = path_embeddings
        .iter()
        .map(|&h| {
            let proj = tape.matmul(h, sem_w);
            let shifted = tape.add_row_vec(proj, sem_b);
            let act = tape.tanh(shifted);
            let per_node = tape.matmul(act, sem_q);
            tape.mean_all(per_node)
        })
        .collect();
    let stacked = tape.stack_scalars(&scores);
    let beta = tape.softmax_col(stacked);
    let mut fused: Option<NodeId> = None;
    for (p, &h) in path_embeddings.iter().enumerate() {
        let b_p = tape.get_element(beta, p, 0);
        let weighted = tape.scale_by_scalar(h, b_p);
        fused = Some(match fused {
            Some(acc) => tape.add(acc, weighted),
            None => weighted,
        });
    }
    (fused.expect("at least one path"), beta)
}

/// Full layer forward: optional input-feature dropout, node-level attention
/// per meta-path (with attention dropout), then semantic fusion.
///
/// With `rng = None` the pass is deterministic; dropout masks are drawn only
/// when an rng is supplied.
pub fn han_layer(
    tape: &mut Tape,
    x: NodeId,
    adjacencies: &[Arc<Array2<bool>>],
    layer: &HanLayerNodes,
    mut rng: Option<&mut ChaCha8Rng>,
) -> LayerOutput {
    assert_eq!(
        adjacencies.len(),
        layer.paths.len(),
        "one adjacency per configured meta-path"
    );
    let x = match rng.as_deref_mut() {
        Some(r) => {
            let (n, d) = tape.value(x).dim();
            let mask = Arc::new(dropout_mask(r, n, d, layer.dropout));
            tape.mul_const(x, mask)
        }
        None => x,
    };
    let mut path_embeddings = Vec::new();
    let mut attention = Vec::new();
    for (p, adj) in adjacencies.iter().enumerate() {
        let (h, attn) = node_level_attention(
            tape,
            x,
            adj,
            &layer.paths[p],
            layer.activation,
            layer.dropout,
            rng.as_deref_mut(),
        );
        path_embeddings.push(h);
        attention.extend(attn);
    }
    let (h, beta) = semantic_attention(tape, &path_embeddings, layer.sem_w, layer.sem_b, layer.sem_q);
    LayerOutput {
        h,
        beta,
        attention,
        path_embeddings,
    }
}
