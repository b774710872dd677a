//! Training loop (BCE + AdamW + gradient accumulation + early stopping
//! on dev Macro-F1), evaluation, and the ablation harness.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

use crate::config::{ModelMode, TrainConfig};
use crate::corpus::{Corpus, Document};
use crate::embedder::DescriptionCache;
use crate::error::{Error, Result};
use crate::metrics::{compute_metrics, Metrics};
use crate::model::{build_artifacts, GraphArtifacts, ProBiasModel};
use crate::nn::{AdamW, AdamWConfig, ParamSet, Tape};

#[derive(Clone, Debug)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev: Metrics,
}

impl EpochRecord {
    pub fn history_header() -> String {
        format!("epoch,train_loss,{}", Metrics::csv_header())
    }

    pub fn history_row(&self) -> String {
        format!("{},{:.6},{}", self.epoch, self.train_loss, self.dev.csv_row())
    }
}

pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    /// parameters of the best dev Macro-F1 epoch (initial parameters if
    /// no epoch ran)
    pub best_params: ParamSet,
    pub best_epoch: Option<usize>,
    pub best_dev_macro_f1: f64,
}

impl TrainOutcome {
    pub fn history_text(&self) -> String {
        let mut out = EpochRecord::history_header();
        out.push('\n');
        for rec in &self.history {
            out.push_str(&rec.history_row());
            out.push('\n');
        }
        out
    }
}

/// Train a model for `cfg.epochs` epochs with early stopping after
/// `cfg.patience` epochs without dev Macro-F1 improvement (patience 0
/// disables early stopping).
pub fn train(
    cfg: &TrainConfig,
    corpus: &Corpus,
    artifacts: &GraphArtifacts,
    cache: Option<&DescriptionCache>,
) -> Result<(ProBiasModel, TrainOutcome)> {
    let mut model = ProBiasModel::new(corpus, artifacts, cfg, cache)?;
    let rare_ids = model_rare_ids(artifacts);

    let accum_docs = cfg.batch_size * cfg.grad_accum;
    let steps_per_epoch = corpus.train.len().div_ceil(accum_docs);
    let total_steps = if cfg.linear_decay {
        cfg.epochs * steps_per_epoch
    } else {
        0
    };
    let mut optimizer = AdamW::new(
        AdamWConfig {
            lr: cfg.lr,
            weight_decay: cfg.weight_decay,
            total_steps,
            ..AdamWConfig::default()
        },
        &model.params,
    );

    // dropout stream, independent of the init stream
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed.wrapping_add(0x5eed));

    let mut history = Vec::new();
    let mut best_params = model.params.clone();
    let mut best_epoch = None;
    let mut best_dev = f64::NEG_INFINITY;
    let mut epochs_since_best = 0usize;

    for epoch in 1..=cfg.epochs {
        let mut epoch_loss = 0.0;
        let mut pending = 0usize;
        model.params.zero_grads();
        for (doc_idx, doc) in corpus.train.iter().enumerate() {
            let tape = Tape::new();
            let watched = model.params.watch(&tape);
            let (_, loss) = model.loss_doc(doc, &tape, &watched, Some(&mut rng))?;
            let loss_val = loss.item();
            if !loss_val.is_finite() {
                return Err(Error::numeric(format!(
                    "non-finite loss at epoch {epoch}, document {doc_idx} ({})",
                    doc.id
                )));
            }
            epoch_loss += loss_val;
            let grads = loss.backward();
            model.params.accumulate_grads(&watched, &grads);
            pending += 1;
            if pending == accum_docs {
                optimizer.step(&mut model.params, 1.0 / pending as f64);
                model.params.zero_grads();
                pending = 0;
            }
        }
        if pending > 0 {
            optimizer.step(&mut model.params, 1.0 / pending as f64);
            model.params.zero_grads();
        }
        let train_loss = epoch_loss / corpus.train.len().max(1) as f64;

        let dev = evaluate(&model, &corpus.dev, cfg.threshold, &rare_ids)?;
        let dev_macro = dev.macro_f1;
        history.push(EpochRecord {
            epoch,
            train_loss,
            dev,
        });

        if dev_macro > best_dev {
            best_dev = dev_macro;
            best_epoch = Some(epoch);
            best_params = model.params.clone();
            epochs_since_best = 0;
        } else {
            epochs_since_best += 1;
            if cfg.patience > 0 && epochs_since_best >= cfg.patience {
                break;
            }
        }
    }

    let outcome = TrainOutcome {
        history,
        best_params,
        best_epoch,
        best_dev_macro_f1: if best_dev.is_finite() { best_dev } else { 0.0 },
    };
    Ok((model, outcome))
}

pub fn model_rare_ids(artifacts: &GraphArtifacts) -> Vec<usize> {
    artifacts.graph.partition.rare_ids.clone()
}

pub fn evaluate(
    model: &ProBiasModel,
    docs: &[Document],
    threshold: f64,
    rare_ids: &[usize],
) -> Result<Metrics> {
    let scores = model.score_docs(docs)?;
    let gold: Vec<Vec<bool>> = docs
        .iter()
        .map(|d| {
            (0..model.n_labels)
                .map(|l| d.label_ids.contains(&l))
                .collect()
        })
        .collect();
    compute_metrics(&scores, &gold, threshold, rare_ids)
}

#[derive(Clone, Debug)]
pub struct AblationRow {
    pub mode: ModelMode,
    pub seed: u64,
    pub split: String,
    pub metrics: Metrics,
    pub history: Vec<EpochRecord>,
}

impl AblationRow {
    pub fn csv_header() -> String {
        format!("mode,seed,split,{}", Metrics::csv_header())
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{}",
            self.mode,
            self.seed,
            self.split,
            self.metrics.csv_row()
        )
    }
}

/// Trains every ablation mode with each seed (identical seeds across
/// modes) and evaluates the best checkpoint on the test split. Runs are
/// independent, so they execute in parallel.
pub fn run_ablation(
    base: &TrainConfig,
    corpus: &Corpus,
    seeds: &[u64],
    cache: Option<&DescriptionCache>,
) -> Result<Vec<AblationRow>> {
    let artifacts = build_artifacts(corpus, base)?;
    let jobs: Vec<(ModelMode, u64)> = ModelMode::ALL
        .iter()
        .flat_map(|&m| seeds.iter().map(move |&s| (m, s)))
        .collect();
    let mut rows: Vec<AblationRow> = jobs
        .par_iter()
        .map(|&(mode, seed)| -> Result<AblationRow> {
            let mut cfg = base.clone();
            cfg.mode = mode;
            cfg.seed = seed;
            let (mut model, outcome) = train(&cfg, corpus, &artifacts, cache)?;
            model.params = outcome.best_params.clone();
            let metrics = evaluate(
                &model,
                &corpus.test,
                cfg.threshold,
                &model_rare_ids(&artifacts),
            )?;
            Ok(AblationRow {
                mode,
                seed,
                split: "test".to_string(),
                metrics,
                history: outcome.history,
            })
        })
        .collect::<Result<_>>()?;
    // deterministic output order regardless of scheduling
    rows.sort_by_key(|r| {
        (
            ModelMode::ALL.iter().position(|&m| m == r.mode).unwrap(),
            r.seed,
        )
    });
    Ok(rows)
}
