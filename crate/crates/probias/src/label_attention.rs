//! Co-occurrence-infused multi-label attention: per-label attention over
//! chunk tokens, code-specific chunk representations, and biaffine
//! max-pooled prediction.

use crate::corpus::Chunk;
use crate::error::{Error, Result};
use crate::nn::{xavier_uniform, ParamId, ParamSet, Var, WatchedParams};
use rand_chacha::ChaCha20Rng;

#[derive(Clone, Debug)]
pub struct LabelAttentionConfig {
    pub d: usize,
    pub heads: usize,
}

pub struct LabelAttention {
    pub cfg: LabelAttentionConfig,
    wq: ParamId,
    wk: ParamId,
    /// shared biaffine matrix
    w: ParamId,
}

impl LabelAttention {
    pub fn new(cfg: LabelAttentionConfig, params: &mut ParamSet, rng: &mut ChaCha20Rng) -> Self {
        assert!(cfg.d % cfg.heads == 0, "d must divide into heads");
        let wq = params.add("label_attn.wq", xavier_uniform(cfg.d, cfg.d, rng));
        let wk = params.add("label_attn.wk", xavier_uniform(cfg.d, cfg.d, rng));
        let w = params.add("label_attn.biaffine", xavier_uniform(cfg.d, cfg.d, rng));
        LabelAttention { cfg, wq, wk, w }
    }

    /// Code-specific representation of one chunk: per-head attention of
    /// every code over the chunk's real tokens, heads concatenated.
    /// Returns N x d.
    pub fn chunk_representation(
        &self,
        code_features: &Var,
        token_matrix: &Var,
        chunk: &Chunk,
        watched: &WatchedParams,
    ) -> Result<Var> {
        if chunk.real_len() == 0 {
            return Err(Error::data(format!(
                "chunk {} of {} has no real tokens",
                chunk.chunk_index, chunk.doc_id
            )));
        }
        let heads = self.cfg.heads;
        let dk = self.cfg.d / heads;
        let n = code_features.shape()[0];
        let t_len = chunk.pad_mask.len();
        // pad positions are closed for every code's softmax row
        let mut mask = vec![false; n * t_len];
        for i in 0..n {
            for t in 0..t_len {
                mask[i * t_len + t] = chunk.pad_mask[t];
            }
        }
        let q = code_features.matmul(watched.var(self.wq));
        let k = token_matrix.matmul(watched.var(self.wk)).tanh();
        let mut head_outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let r = h * dk..(h + 1) * dk;
            let logits = q.slice_cols(r.clone()).matmul_nt(&k.slice_cols(r.clone()));
            let alpha = logits.softmax_masked(&mask)?;
            head_outs.push(alpha.matmul(&token_matrix.slice_cols(r)));
        }
        Ok(Var::concat_cols(&head_outs))
    }

    /// Per-label probabilities: biaffine score of each chunk
    /// representation against the code features, max-pooled over chunks,
    /// squashed by sigmoid. `chunk_reps` holds one N x d matrix per chunk.
    pub fn predict(
        &self,
        chunk_reps: &[Var],
        code_features: &Var,
        watched: &WatchedParams,
    ) -> Result<Var> {
        if chunk_reps.is_empty() {
            return Err(Error::data("prediction requires at least one chunk"));
        }
        // (W V_i) for every code, as rows
        let projected = code_features.matmul_nt(watched.var(self.w));
        let scores: Vec<Var> = chunk_reps
            .iter()
            .map(|r| r.rowwise_dot(&projected))
            .collect();
        Ok(Var::stack_rows(&scores).max_axis0().sigmoid())
    }
}

/// Convenience used by tests and the model: full head over a document's
/// chunks.
pub fn predict_document(
    attn: &LabelAttention,
    code_features: &Var,
    token_matrices: &[Var],
    chunks: &[Chunk],
    watched: &WatchedParams,
    _rng: Option<&mut ChaCha20Rng>,
) -> Result<Var> {
    let reps = token_matrices
        .iter()
        .zip(chunks)
        .map(|(h, c)| attn.chunk_representation(code_features, h, c, watched))
        .collect::<Result<Vec<_>>>()?;
    attn.predict(&reps, code_features, watched)
}
