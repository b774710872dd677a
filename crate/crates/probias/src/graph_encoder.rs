//! Directed bipartite graph encoder: probability-biased masked
//! multi-head attention from common to rare codes, plus shared
//! feed-forward refinement over all codes.

use rand_chacha::ChaCha20Rng;

use crate::config::ModelMode;
use crate::error::Result;
use crate::graph::BipartiteGraph;
use crate::nn::{xavier_uniform, ParamId, ParamSet, Tensor, Var, WatchedParams};

/// Which nodes attend to which, flattened for the encoder. Queries are
/// the nodes with at least one open key (isolated nodes bypass); keys
/// are the common set in directed modes and all codes in MI mode.
#[derive(Clone, Debug)]
pub struct AttentionLayout {
    pub n_labels: usize,
    /// global label ids of the attending nodes
    pub query_global: Vec<usize>,
    /// global label ids of the key/value nodes
    pub key_global: Vec<usize>,
    /// query x key edge mask
    pub mask: Vec<bool>,
    /// bin index per (query, key) pair; aligned with `mask`
    pub phi: Vec<usize>,
    pub bins: usize,
}

impl AttentionLayout {
    /// Directed layout: non-isolated rare nodes query the common set.
    pub fn directed(graph: &BipartiteGraph, n_labels: usize) -> Self {
        let n_common = graph.n_common();
        let mut query_global = Vec::new();
        let mut mask = Vec::new();
        let mut phi = Vec::new();
        for (i, &rare_label) in graph.partition.rare_ids.iter().enumerate() {
            if graph.isolated_rare[i] {
                continue;
            }
            query_global.push(rare_label);
            mask.extend_from_slice(&graph.mask[i * n_common..(i + 1) * n_common]);
            phi.extend_from_slice(&graph.phi.indices[i * n_common..(i + 1) * n_common]);
        }
        AttentionLayout {
            n_labels,
            query_global,
            key_global: graph.partition.common_ids.clone(),
            mask,
            phi,
            bins: graph.phi.bin_count,
        }
    }

    /// Symmetric layout for MI mode: every node with a co-occurring
    /// partner queries all codes. No bias indices are used.
    pub fn symmetric(mi_mask: &[bool], n_labels: usize, bins: usize) -> Self {
        let mut query_global = Vec::new();
        let mut mask = Vec::new();
        for i in 0..n_labels {
            let row = &mi_mask[i * n_labels..(i + 1) * n_labels];
            if row.iter().any(|&m| m) {
                query_global.push(i);
                mask.extend_from_slice(row);
            }
        }
        let phi = vec![0; mask.len()];
        AttentionLayout {
            n_labels,
            query_global,
            key_global: (0..n_labels).collect(),
            mask,
            phi,
            bins,
        }
    }

    pub fn for_mode(
        mode: ModelMode,
        graph: &BipartiteGraph,
        mi_mask: &[bool],
        n_labels: usize,
    ) -> Self {
        if mode.symmetric() {
            AttentionLayout::symmetric(mi_mask, n_labels, graph.phi.bin_count)
        } else {
            AttentionLayout::directed(graph, n_labels)
        }
    }
}

#[derive(Clone, Debug)]
pub struct GraphEncoderConfig {
    pub d: usize,
    pub d_attn: usize,
    pub heads: usize,
    pub bins: usize,
    pub layers: usize,
    pub ffn_hidden: usize,
    pub dropout: f64,
}

struct GraphLayer {
    wr: ParamId,
    wc: ParamId,
    wv: ParamId,
    watt: ParamId,
    /// heads x (bins+1) learnable scalars, flattened; zero-initialized so
    /// CE starts exactly at DI
    bias: ParamId,
    ln1_gain: ParamId,
    ln1_shift: ParamId,
    ffn_w1: ParamId,
    ffn_b1: ParamId,
    ffn_w2: ParamId,
    ffn_b2: ParamId,
    ln2_gain: ParamId,
    ln2_shift: ParamId,
}

pub struct GraphEncoder {
    pub cfg: GraphEncoderConfig,
    layers: Vec<GraphLayer>,
}

impl GraphEncoder {
    pub fn new(cfg: GraphEncoderConfig, params: &mut ParamSet, rng: &mut ChaCha20Rng) -> Self {
        assert!(cfg.d_attn % cfg.heads == 0, "d_attn must divide into heads");
        let layers = (0..cfg.layers)
            .map(|l| GraphLayer {
                wr: params.add(format!("graph.layer{l}.wr"), xavier_uniform(cfg.d, cfg.d_attn, rng)),
                wc: params.add(format!("graph.layer{l}.wc"), xavier_uniform(cfg.d, cfg.d_attn, rng)),
                wv: params.add(format!("graph.layer{l}.wv"), xavier_uniform(cfg.d, cfg.d_attn, rng)),
                watt: params.add(
                    format!("graph.layer{l}.watt"),
                    xavier_uniform(cfg.d_attn, cfg.d, rng),
                ),
                bias: params.add(
                    format!("graph.layer{l}.bias"),
                    Tensor::zeros(vec![cfg.heads * (cfg.bins + 1)]),
                ),
                ln1_gain: params.add(format!("graph.layer{l}.ln1.gain"), Tensor::ones(vec![cfg.d])),
                ln1_shift: params.add(format!("graph.layer{l}.ln1.shift"), Tensor::zeros(vec![cfg.d])),
                ffn_w1: params.add(
                    format!("graph.layer{l}.ffn.w1"),
                    xavier_uniform(cfg.d, cfg.ffn_hidden, rng),
                ),
                ffn_b1: params.add(
                    format!("graph.layer{l}.ffn.b1"),
                    Tensor::zeros(vec![cfg.ffn_hidden]),
                ),
                ffn_w2: params.add(
                    format!("graph.layer{l}.ffn.w2"),
                    xavier_uniform(cfg.ffn_hidden, cfg.d, rng),
                ),
                ffn_b2: params.add(format!("graph.layer{l}.ffn.b2"), Tensor::zeros(vec![cfg.d])),
                ln2_gain: params.add(format!("graph.layer{l}.ln2.gain"), Tensor::ones(vec![cfg.d])),
                ln2_shift: params.add(format!("graph.layer{l}.ln2.shift"), Tensor::zeros(vec![cfg.d])),
            })
            .collect();
        GraphEncoder { cfg, layers }
    }

    /// Biased masked multi-head attention for one layer: query rows
    /// gathered from `x`, output mixed through W_att. Returns
    /// n_query x d (empty layouts yield no output; callers skip).
    pub fn attention(
        &self,
        layer: usize,
        x: &Var,
        layout: &AttentionLayout,
        use_bias: bool,
        watched: &WatchedParams,
    ) -> Result<Var> {
        let lp = &self.layers[layer];
        let heads = self.cfg.heads;
        let dk = self.cfg.d_attn / heads;
        let q_in = x.gather_rows(&layout.query_global);
        let k_in = x.gather_rows(&layout.key_global);
        let q = q_in.matmul(watched.var(lp.wr));
        let k = k_in.matmul(watched.var(lp.wc));
        let v = k_in.matmul(watched.var(lp.wv));
        let mut head_outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let r = h * dk..(h + 1) * dk;
            let mut logits = q
                .slice_cols(r.clone())
                .matmul_nt(&k.slice_cols(r.clone()))
                .scale(1.0 / (dk as f64).sqrt());
            if use_bias {
                let base = h * (layout.bins + 1);
                let idx: Vec<usize> = layout.phi.iter().map(|&p| base + p).collect();
                let bias = watched.var(lp.bias).gather_flat(
                    &idx,
                    vec![layout.query_global.len(), layout.key_global.len()],
                );
                logits = logits.add(&bias);
            }
            let attn = logits.softmax_masked(&layout.mask)?;
            head_outs.push(attn.matmul(&v.slice_cols(r)));
        }
        Ok(Var::concat_cols(&head_outs).matmul(watched.var(lp.watt)))
    }

    /// Full encoder: attention update on attending nodes (zeros
    /// elsewhere), residual + norm, then shared feed-forward refinement
    /// on all codes, per layer.
    pub fn forward(
        &self,
        v: &Var,
        layout: &AttentionLayout,
        use_bias: bool,
        watched: &WatchedParams,
        mut rng: Option<&mut ChaCha20Rng>,
    ) -> Result<Var> {
        let n = layout.n_labels;
        let mut x = v.clone();
        for l in 0..self.layers.len() {
            let lp = &self.layers[l];
            let x1 = if layout.query_global.is_empty() {
                x.layer_norm(watched.var(lp.ln1_gain), watched.var(lp.ln1_shift), 1e-5)
            } else {
                let mixed = self.attention(l, &x, layout, use_bias, watched)?;
                let mut update = mixed.scatter_rows(&layout.query_global, n);
                if let Some(rng) = rng.as_deref_mut() {
                    update = update.dropout(self.cfg.dropout, rng);
                }
                x.add(&update)
                    .layer_norm(watched.var(lp.ln1_gain), watched.var(lp.ln1_shift), 1e-5)
            };
            let mut ffn = x1
                .matmul(watched.var(lp.ffn_w1))
                .add_row_broadcast(watched.var(lp.ffn_b1))
                .tanh()
                .matmul(watched.var(lp.ffn_w2))
                .add_row_broadcast(watched.var(lp.ffn_b2));
            if let Some(rng) = rng.as_deref_mut() {
                ffn = ffn.dropout(self.cfg.dropout, rng);
            }
            x = x1
                .add(&ffn)
                .layer_norm(watched.var(lp.ln2_gain), watched.var(lp.ln2_shift), 1e-5);
        }
        Ok(x)
    }
}
