//! Assembles the full classifier: corpus-derived graph artifacts, frozen
//! initial code features, and the trainable encoder stack.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::binning::{assign_bin_indices, compute_bin_boundaries, PhiMatrix};
use crate::config::{ModelMode, TrainConfig};
use crate::corpus::{chunk_document, truncate_document, Corpus, Document};
use crate::doc_encoder::{DocEncoder, DocEncoderConfig};
use crate::embedder::{DescriptionCache, FrozenHashEmbedder};
use crate::error::{Error, Result};
use crate::graph::{build_graph, build_mi_mask, BipartiteGraph};
use crate::graph_encoder::{AttentionLayout, GraphEncoder, GraphEncoderConfig};
use crate::label_attention::{LabelAttention, LabelAttentionConfig};
use crate::nn::{ParamSet, Tape, Var, WatchedParams, BCE_EPS};
use crate::stats::{conditional_prob_matrix, count_label_stats, partition_labels, LabelStats};

/// Seed for the frozen description embedder; fixed so code features are
/// a pure function of their text.
pub const FROZEN_EMBEDDER_SEED: u64 = 0x9e3779b97f4a7c15;

/// Corpus statistics and graph structure shared by every model instance
/// trained on the same corpus and config.
#[derive(Clone, Debug)]
pub struct GraphArtifacts {
    pub stats: LabelStats,
    pub graph: BipartiteGraph,
    pub mi_mask: Vec<bool>,
}

pub fn build_artifacts(corpus: &Corpus, cfg: &TrainConfig) -> Result<GraphArtifacts> {
    let stats = count_label_stats(&corpus.train, corpus.n_labels())?;
    let partition = partition_labels(&stats, cfg.rare_threshold);
    let prob = conditional_prob_matrix(&stats, &partition);
    // An all-zero matrix means no rare-common co-occurrence at all: fall
    // back to mask-only attention (every bin index 0, attention masked
    // everywhere, so all rare nodes bypass).
    let phi = match compute_bin_boundaries(&prob, cfg.bins) {
        Ok(bb) => assign_bin_indices(&prob, &bb),
        Err(_) => PhiMatrix {
            n_rare: prob.n_rare,
            n_common: prob.n_common,
            indices: vec![0; prob.n_rare * prob.n_common],
            bin_count: cfg.bins,
        },
    };
    let graph = build_graph(&partition, &prob, &phi)?;
    let mi_mask = build_mi_mask(&stats);
    Ok(GraphArtifacts {
        stats,
        graph,
        mi_mask,
    })
}

/// Per-label input texts: code names, or descriptions in CE_des mode
/// (cache text when present, otherwise the offline stub).
pub fn label_texts(corpus: &Corpus, mode: ModelMode, cache: Option<&DescriptionCache>) -> Vec<String> {
    corpus
        .label_names
        .iter()
        .map(|(code, name)| {
            if mode.uses_descriptions() {
                if let Some(hit) = cache.and_then(|c| c.get(code)) {
                    hit.text.clone()
                } else {
                    crate::embedder::stub_description(code, name)
                }
            } else {
                name.clone()
            }
        })
        .collect()
}

/// Small fixed instance for gradient verification: d=8, 4 common and 3
/// rare labels, one graph layer, and a 2-chunk document, deterministic
/// mode. Returns the model and the probe document.
pub fn reference_gradcheck_instance() -> Result<(ProBiasModel, Document)> {
    use std::collections::BTreeSet;

    let label_names: Vec<(String, String)> = ["C0", "C1", "C2", "C3", "R0", "R1", "R2"]
        .iter()
        .map(|c| (c.to_string(), format!("condition {c}")))
        .collect();
    let token_vocab: Vec<String> = (0..10)
        .map(|i| match i {
            0 => crate::corpus::PAD_TOKEN.to_string(),
            1 => crate::corpus::UNK_TOKEN.to_string(),
            i => format!("w{i}"),
        })
        .collect();
    let mk = |id: &str, tokens: &[u32], labels: &[usize]| Document {
        id: id.to_string(),
        tokens: tokens.to_vec(),
        label_ids: labels.iter().copied().collect::<BTreeSet<_>>(),
    };
    let train = vec![
        mk("d1", &[2, 3, 4], &[0, 1]),
        mk("d2", &[3, 5, 6], &[0, 2]),
        mk("d3", &[4, 6, 7], &[1, 3]),
        mk("d4", &[2, 7, 8], &[2, 3]),
        mk("d5", &[2, 3, 4, 5, 6, 7, 8, 9], &[4, 0, 1]),
        mk("d6", &[5, 8, 9], &[5, 2]),
        mk("d7", &[3, 4, 9], &[6, 3, 0]),
    ];
    let corpus = Corpus {
        label_names,
        token_vocab,
        train,
        dev: Vec::new(),
        test: Vec::new(),
    };
    let cfg = TrainConfig {
        d: 8,
        heads: 4,
        bins: 3,
        graph_layers: 1,
        doc_blocks: 1,
        ffn_hidden: 8,
        chunk_len: 6,
        overlap: 2,
        max_tokens: 32,
        rare_threshold: 2,
        dropout: 0.0,
        mode: ModelMode::Ce,
        seed: 7,
        ..TrainConfig::default()
    };
    let artifacts = build_artifacts(&corpus, &cfg)?;
    let probe = corpus.train[4].clone();
    let mut model = ProBiasModel::new(&corpus, &artifacts, &cfg, None)?;
    // a nonzero bias table so the gather path is exercised away from init
    if let Some(p) = model
        .params
        .iter_mut()
        .find(|p| p.name == "graph.layer0.bias")
    {
        for (i, v) in p.value.data_mut().iter_mut().enumerate() {
            *v = 0.05 * (i as f64 % 7.0 - 3.0);
        }
    }
    Ok((model, probe))
}

pub struct ProBiasModel {
    pub cfg: TrainConfig,
    pub params: ParamSet,
    pub doc_encoder: DocEncoder,
    pub graph_encoder: GraphEncoder,
    pub label_attn: LabelAttention,
    /// N x d frozen initial code features
    pub code_features: crate::nn::Tensor,
    pub layout: AttentionLayout,
    pub n_labels: usize,
}

impl ProBiasModel {
    pub fn new(
        corpus: &Corpus,
        artifacts: &GraphArtifacts,
        cfg: &TrainConfig,
        cache: Option<&DescriptionCache>,
    ) -> Result<Self> {
        cfg.validate()?;
        let n_labels = corpus.n_labels();
        let embedder = FrozenHashEmbedder::new(cfg.d, FROZEN_EMBEDDER_SEED);
        let texts = label_texts(corpus, cfg.mode, cache);
        let code_features = embedder.embed_all(&texts);

        let layout =
            AttentionLayout::for_mode(cfg.mode, &artifacts.graph, &artifacts.mi_mask, n_labels);

        let mut params = ParamSet::new();
        let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
        let doc_encoder = DocEncoder::new(
            DocEncoderConfig {
                vocab_size: corpus.vocab_size(),
                d: cfg.d,
                n_blocks: cfg.doc_blocks,
                heads: cfg.heads,
                ffn_hidden: cfg.ffn_hidden,
                dropout: cfg.dropout,
                positional: true,
            },
            &mut params,
            &mut rng,
        );
        let graph_encoder = GraphEncoder::new(
            GraphEncoderConfig {
                d: cfg.d,
                d_attn: cfg.d,
                heads: cfg.heads,
                bins: cfg.bins,
                layers: cfg.graph_layers,
                ffn_hidden: cfg.ffn_hidden,
                dropout: cfg.dropout,
            },
            &mut params,
            &mut rng,
        );
        let label_attn = LabelAttention::new(
            LabelAttentionConfig {
                d: cfg.d,
                heads: cfg.heads,
            },
            &mut params,
            &mut rng,
        );
        Ok(ProBiasModel {
            cfg: cfg.clone(),
            params,
            doc_encoder,
            graph_encoder,
            label_attn,
            code_features,
            layout,
            n_labels,
        })
    }

    pub fn targets(&self, doc: &Document) -> Vec<f64> {
        let mut y = vec![0.0; self.n_labels];
        for &l in &doc.label_ids {
            y[l] = 1.0;
        }
        y
    }

    /// Full forward for one document: chunk encode, graph encode, label
    /// attention, prediction. Training mode iff `rng` is given.
    pub fn forward_doc(
        &self,
        doc: &Document,
        tape: &Tape,
        watched: &WatchedParams,
        mut rng: Option<&mut ChaCha20Rng>,
    ) -> Result<Var> {
        let doc = truncate_document(doc, self.cfg.max_tokens);
        let chunks = chunk_document(&doc, self.cfg.chunk_len, self.cfg.overlap)?;
        let mut token_matrices = Vec::with_capacity(chunks.len());
        for chunk in &chunks {
            token_matrices.push(
                self.doc_encoder
                    .forward(chunk, tape, watched, rng.as_deref_mut())?,
            );
        }
        let v0 = tape.constant(self.code_features.clone());
        let vg = self.graph_encoder.forward(
            &v0,
            &self.layout,
            self.cfg.mode.uses_bias(),
            watched,
            rng.as_deref_mut(),
        )?;
        crate::label_attention::predict_document(
            &self.label_attn,
            &vg,
            &token_matrices,
            &chunks,
            watched,
            rng,
        )
    }

    /// Forward plus BCE loss against the document's gold labels.
    pub fn loss_doc(
        &self,
        doc: &Document,
        tape: &Tape,
        watched: &WatchedParams,
        rng: Option<&mut ChaCha20Rng>,
    ) -> Result<(Var, Var)> {
        let yhat = self.forward_doc(doc, tape, watched, rng)?;
        let loss = yhat.bce_loss(&self.targets(doc), BCE_EPS)?;
        Ok((yhat, loss))
    }

    /// Max relative error of analytic vs central-difference gradients
    /// over every parameter, on one document in deterministic mode.
    pub fn gradient_check(&mut self, doc: &Document, h: f64) -> Result<f64> {
        let cfg = self.cfg.clone();
        if cfg.dropout != 0.0 {
            return Err(Error::numeric(
                "gradient check requires deterministic mode (dropout 0)",
            ));
        }
        let doc_encoder = &self.doc_encoder;
        let graph_encoder = &self.graph_encoder;
        let label_attn = &self.label_attn;
        let code_features = self.code_features.clone();
        let layout = self.layout.clone();
        let n_labels = self.n_labels;
        let targets = {
            let mut y = vec![0.0; n_labels];
            for &l in &doc.label_ids {
                y[l] = 1.0;
            }
            y
        };
        let forward = |tape: &Tape, params: &ParamSet| {
            let watched = params.watch(tape);
            let doc = truncate_document(doc, cfg.max_tokens);
            let chunks = chunk_document(&doc, cfg.chunk_len, cfg.overlap)?;
            let mut token_matrices = Vec::with_capacity(chunks.len());
            for chunk in &chunks {
                token_matrices.push(doc_encoder.forward(chunk, tape, &watched, None)?);
            }
            let v0 = tape.constant(code_features.clone());
            let vg = graph_encoder.forward(&v0, &layout, cfg.mode.uses_bias(), &watched, None)?;
            let yhat = crate::label_attention::predict_document(
                label_attn,
                &vg,
                &token_matrices,
                &chunks,
                &watched,
                None,
            )?;
            let loss = yhat.bce_loss(&targets, BCE_EPS)?;
            Ok((loss, watched))
        };
        crate::nn::finite_diff_check(&mut self.params, h, &forward)
    }

    /// Deterministic evaluation scores for a list of documents.
    pub fn score_docs(&self, docs: &[Document]) -> Result<Vec<Vec<f64>>> {
        docs.iter()
            .map(|doc| {
                let tape = Tape::new();
                let watched = self.params.watch(&tape);
                let yhat = self.forward_doc(doc, &tape, &watched, None)?;
                yhat.value().check_finite("prediction vector")?;
                Ok(yhat.value().data().to_vec())
            })
            .collect()
    }
}
