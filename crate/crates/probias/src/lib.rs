//! ProBias: a long-tail multi-label text classifier built around a
//! directed bipartite graph encoder whose attention is biased by binned
//! conditional co-occurrence probabilities between rare and common
//! labels, feeding a per-label attention head over chunked documents.

pub mod binning;
pub mod config;
pub mod corpus;
pub mod doc_encoder;
pub mod embedder;
pub mod error;
pub mod graph;
pub mod graph_encoder;
pub mod label_attention;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod stats;
pub mod synthetic;
pub mod train;

pub use error::{Error, Result};
