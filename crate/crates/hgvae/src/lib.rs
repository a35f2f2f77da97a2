//! Generative self-supervised learning on heterogeneous graphs.
//!
//! A variational autoencoder over meta-path attention encoders whose latent
//! representation is refined by a contrastive task with progressively
//! generated hard negatives, plus the downstream evaluation protocol
//! (linear-probe classification, k-means clustering) and a synthetic
//! heterogeneous-graph generator for desk-scale verification.
//!
//! Module map:
//! - [`hin`]: typed graph data model, dataset ingestion, meta-path adjacency
//! - [`masking`]: target-attribute masking with a learnable token
//! - [`han`]: node-level and semantic-level attention encoder/decoder
//! - [`vi`]: approximate posterior, reparameterized sampling, KL term
//! - [`pnsg`]: progressive negative sample generation
//! - [`loss`]: InfoNCE, scaled cosine reconstruction errors, combined loss
//! - [`model`]: parameter containers and tape assembly of forward passes
//! - [`train`]: full-batch training loop, optimizer, checkpoints
//! - [`eval`]: linear probe, F1 scores, k-means, NMI/ARI, embedding export
//! - [`synth`]: planted-partition synthetic heterogeneous graphs
//! - [`config`]: run configuration and resolution
//! - [`tape`]: reverse-mode autodiff engine everything above runs on

pub mod config;
pub mod error;
pub mod eval;
pub mod han;
pub mod hin;
pub mod loss;
pub mod masking;
pub mod model;
pub mod pnsg;
pub mod rng;
pub mod synth;
pub mod tape;
pub mod train;
pub mod vi;

pub use error::{Error, Result};
