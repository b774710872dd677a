//! Chunk encoder: trainable token embeddings plus sinusoidal positions,
//! followed by a configurable number of self-attention blocks (0 blocks
//! leaves the rows as embedding + position).

use rand_chacha::ChaCha20Rng;

use crate::corpus::Chunk;
use crate::error::{Error, Result};
use crate::nn::{xavier_uniform, ParamId, ParamSet, Tape, Tensor, Var, WatchedParams};

#[derive(Clone, Debug)]
pub struct DocEncoderConfig {
    pub vocab_size: usize,
    pub d: usize,
    pub n_blocks: usize,
    pub heads: usize,
    pub ffn_hidden: usize,
    pub dropout: f64,
    /// disable to get pure bag-of-embedding rows (used by equivariance tests)
    pub positional: bool,
}

struct EncoderBlock {
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    wo: ParamId,
    ln1_gain: ParamId,
    ln1_shift: ParamId,
    ffn_w1: ParamId,
    ffn_b1: ParamId,
    ffn_w2: ParamId,
    ffn_b2: ParamId,
    ln2_gain: ParamId,
    ln2_shift: ParamId,
}

pub struct DocEncoder {
    pub cfg: DocEncoderConfig,
    embedding: ParamId,
    blocks: Vec<EncoderBlock>,
}

impl DocEncoder {
    pub fn new(cfg: DocEncoderConfig, params: &mut ParamSet, rng: &mut ChaCha20Rng) -> Self {
        assert!(cfg.d % cfg.heads == 0, "d must divide into heads");
        let embedding = params.add(
            "doc.embedding",
            xavier_uniform(cfg.vocab_size, cfg.d, rng),
        );
        let blocks = (0..cfg.n_blocks)
            .map(|b| EncoderBlock {
                wq: params.add(format!("doc.block{b}.wq"), xavier_uniform(cfg.d, cfg.d, rng)),
                wk: params.add(format!("doc.block{b}.wk"), xavier_uniform(cfg.d, cfg.d, rng)),
                wv: params.add(format!("doc.block{b}.wv"), xavier_uniform(cfg.d, cfg.d, rng)),
                wo: params.add(format!("doc.block{b}.wo"), xavier_uniform(cfg.d, cfg.d, rng)),
                ln1_gain: params.add(format!("doc.block{b}.ln1.gain"), Tensor::ones(vec![cfg.d])),
                ln1_shift: params.add(format!("doc.block{b}.ln1.shift"), Tensor::zeros(vec![cfg.d])),
                ffn_w1: params.add(
                    format!("doc.block{b}.ffn.w1"),
                    xavier_uniform(cfg.d, cfg.ffn_hidden, rng),
                ),
                ffn_b1: params.add(format!("doc.block{b}.ffn.b1"), Tensor::zeros(vec![cfg.ffn_hidden])),
                ffn_w2: params.add(
                    format!("doc.block{b}.ffn.w2"),
                    xavier_uniform(cfg.ffn_hidden, cfg.d, rng),
                ),
                ffn_b2: params.add(format!("doc.block{b}.ffn.b2"), Tensor::zeros(vec![cfg.d])),
                ln2_gain: params.add(format!("doc.block{b}.ln2.gain"), Tensor::ones(vec![cfg.d])),
                ln2_shift: params.add(format!("doc.block{b}.ln2.shift"), Tensor::zeros(vec![cfg.d])),
            })
            .collect();
        DocEncoder {
            cfg,
            embedding,
            blocks,
        }
    }

    /// T_chunk x d token representation matrix for one chunk. Pass `rng`
    /// only in training mode; without it dropout is disabled and the
    /// forward is deterministic.
    pub fn forward(
        &self,
        chunk: &Chunk,
        _tape: &Tape,
        watched: &WatchedParams,
        mut rng: Option<&mut ChaCha20Rng>,
    ) -> Result<Var> {
        let d = self.cfg.d;
        let t_len = chunk.token_ids.len();
        let ids: Vec<usize> = chunk
            .token_ids
            .iter()
            .map(|&t| {
                let t = t as usize;
                if t >= self.cfg.vocab_size {
                    Err(Error::data(format!(
                        "token id {t} out of vocab range {}",
                        self.cfg.vocab_size
                    )))
                } else {
                    Ok(t)
                }
            })
            .collect::<Result<_>>()?;
        let mut x = watched.var(self.embedding).gather_rows(&ids);
        if self.cfg.positional {
            x = x.add_const(&sinusoidal_positions(t_len, d));
        }

        let heads = self.cfg.heads;
        let dk = d / heads;
        // keys are open iff the position holds a real token
        let mut key_mask = vec![false; t_len * t_len];
        for i in 0..t_len {
            for j in 0..t_len {
                key_mask[i * t_len + j] = chunk.pad_mask[j];
            }
        }

        for block in &self.blocks {
            let q = x.matmul(watched.var(block.wq));
            let k = x.matmul(watched.var(block.wk));
            let v = x.matmul(watched.var(block.wv));
            let mut head_outs = Vec::with_capacity(heads);
            for h in 0..heads {
                let r = h * dk..(h + 1) * dk;
                let logits = q
                    .slice_cols(r.clone())
                    .matmul_nt(&k.slice_cols(r.clone()))
                    .scale(1.0 / (dk as f64).sqrt());
                let attn = logits.softmax_masked(&key_mask)?;
                head_outs.push(attn.matmul(&v.slice_cols(r)));
            }
            let mut mixed = Var::concat_cols(&head_outs).matmul(watched.var(block.wo));
            if let Some(rng) = rng.as_deref_mut() {
                mixed = mixed.dropout(self.cfg.dropout, rng);
            }
            let x1 = x
                .add(&mixed)
                .layer_norm(watched.var(block.ln1_gain), watched.var(block.ln1_shift), 1e-5);
            let mut ffn = x1
                .matmul(watched.var(block.ffn_w1))
                .add_row_broadcast(watched.var(block.ffn_b1))
                .tanh()
                .matmul(watched.var(block.ffn_w2))
                .add_row_broadcast(watched.var(block.ffn_b2));
            if let Some(rng) = rng.as_deref_mut() {
                ffn = ffn.dropout(self.cfg.dropout, rng);
            }
            x = x1
                .add(&ffn)
                .layer_norm(watched.var(block.ln2_gain), watched.var(block.ln2_shift), 1e-5);
        }
        Ok(x)
    }
}

/// Standard sinusoidal position signal, T x d.
pub fn sinusoidal_positions(t_len: usize, d: usize) -> Tensor {
    let mut data = vec![0.0; t_len * d];
    for pos in 0..t_len {
        for i in 0..d {
            let angle = pos as f64 / 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
            data[pos * d + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::new(vec![t_len, d], data)
}
