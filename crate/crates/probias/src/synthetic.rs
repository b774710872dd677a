//! Deterministic synthetic long-tail corpus generator.
//!
//! Labels are laid out commons first, then rares. Each label owns a
//! disjoint set of signal tokens injected into every document that
//! carries it. A document draws one primary label from a power-law
//! distribution over label ranks; when the primary is rare, each planted
//! link (rare, common, p) independently attaches the common label with
//! probability p. Planted attachments are the only mechanism coupling
//! rare and common labels, so empirical conditional frequencies converge
//! to the planted probabilities.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Document, PAD_TOKEN, UNK_TOKEN};
use crate::error::{Error, Result};

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct PlantedLink {
    /// Rare label index in [0, n_rare).
    pub rare: usize,
    /// Common label index in [0, n_common).
    pub common: usize,
    /// Conditional attachment probability in (0, 1].
    pub prob: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct SyntheticSpec {
    pub n_common: usize,
    pub n_rare: usize,
    pub vocab_size: usize,
    pub n_train: usize,
    pub n_dev: usize,
    pub n_test: usize,
    pub power_law_exponent: f64,
    pub planted_links: Vec<PlantedLink>,
    pub signal_tokens_per_label: usize,
    pub noise_token_rate: f64,
    pub rng_seed: u64,
}

impl SyntheticSpec {
    pub fn n_labels(&self) -> usize {
        self.n_common + self.n_rare
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_common == 0 || self.n_rare == 0 {
            return Err(Error::config("n_common and n_rare must be positive"));
        }
        if self.n_train == 0 {
            return Err(Error::config("n_train must be positive"));
        }
        if self.signal_tokens_per_label == 0 {
            return Err(Error::config("signal_tokens_per_label must be positive"));
        }
        if self.power_law_exponent <= 0.0 {
            return Err(Error::config("power_law_exponent must be positive"));
        }
        if !(0.0..1.0).contains(&self.noise_token_rate) {
            return Err(Error::config("noise_token_rate must be in [0,1)"));
        }
        for link in &self.planted_links {
            if link.rare >= self.n_rare || link.common >= self.n_common {
                return Err(Error::config(format!(
                    "planted link ({}, {}) out of range",
                    link.rare, link.common
                )));
            }
            if !(link.prob > 0.0 && link.prob <= 1.0) {
                return Err(Error::config(format!(
                    "planted probability {} not in (0,1]",
                    link.prob
                )));
            }
        }
        let needed_signal = 2 + self.n_labels() * self.signal_tokens_per_label;
        let needed_noise = if self.noise_token_rate > 0.0 { 1 } else { 0 };
        if self.vocab_size < needed_signal + needed_noise {
            return Err(Error::config(format!(
                "vocab_size {} too small for disjoint signal sets ({} needed)",
                self.vocab_size,
                needed_signal + needed_noise
            )));
        }
        Ok(())
    }
}

/// First signal token id of label `l` (after the pad/unk reserves).
fn signal_base(spec: &SyntheticSpec, label: usize) -> usize {
    2 + label * spec.signal_tokens_per_label
}

pub fn generate_synthetic_corpus(spec: &SyntheticSpec) -> Result<Corpus> {
    spec.validate()?;
    let n_labels = spec.n_labels();

    let mut token_vocab = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
    for l in 0..n_labels {
        for j in 0..spec.signal_tokens_per_label {
            token_vocab.push(format!("s{l}x{j}"));
        }
    }
    let noise_start = token_vocab.len() as u32;
    let mut i = 0;
    while token_vocab.len() < spec.vocab_size {
        token_vocab.push(format!("n{i}"));
        i += 1;
    }
    let n_noise_tokens = spec.vocab_size as u32 - noise_start;

    let mut label_names = Vec::with_capacity(n_labels);
    for c in 0..spec.n_common {
        label_names.push((format!("C{c:03}"), format!("common condition {c:03}")));
    }
    for r in 0..spec.n_rare {
        label_names.push((format!("R{r:03}"), format!("rare condition {r:03}")));
    }

    // power-law weights over label ranks, commons first
    let weights: Vec<f64> = (0..n_labels)
        .map(|k| ((k + 1) as f64).powf(-spec.power_law_exponent))
        .collect();
    let total: f64 = weights.iter().sum();
    let cumulative: Vec<f64> = weights
        .iter()
        .scan(0.0, |acc, w| {
            *acc += w / total;
            Some(*acc)
        })
        .collect();

    let mut rng = ChaCha20Rng::seed_from_u64(spec.rng_seed);
    let make_split = |name: &str, count: usize, rng: &mut ChaCha20Rng| -> Vec<Document> {
        (0..count)
            .map(|k| {
                let u: f64 = rng.gen();
                let primary = cumulative.partition_point(|&c| c < u).min(n_labels - 1);
                let mut label_ids = BTreeSet::new();
                label_ids.insert(primary);
                if primary >= spec.n_common {
                    let rare_idx = primary - spec.n_common;
                    for link in &spec.planted_links {
                        if link.rare == rare_idx && rng.gen::<f64>() < link.prob {
                            label_ids.insert(link.common);
                        }
                    }
                }
                let mut tokens: Vec<u32> = Vec::new();
                for &l in &label_ids {
                    let base = signal_base(spec, l);
                    for j in 0..spec.signal_tokens_per_label {
                        tokens.push((base + j) as u32);
                    }
                }
                if spec.noise_token_rate > 0.0 {
                    let n_signal = tokens.len() as f64;
                    let n_noise = (spec.noise_token_rate / (1.0 - spec.noise_token_rate)
                        * n_signal)
                        .round() as usize;
                    for _ in 0..n_noise {
                        tokens.push(noise_start + rng.gen_range(0..n_noise_tokens));
                    }
                }
                // Fisher-Yates
                for i in (1..tokens.len()).rev() {
                    let j = rng.gen_range(0..=i);
                    tokens.swap(i, j);
                }
                Document {
                    id: format!("{name}-{k:05}"),
                    tokens,
                    label_ids,
                }
            })
            .collect()
    };

    let train = make_split("train", spec.n_train, &mut rng);
    let dev = make_split("dev", spec.n_dev, &mut rng);
    let test = make_split("test", spec.n_test, &mut rng);

    Ok(Corpus {
        label_names,
        token_vocab,
        train,
        dev,
        test,
    })
}
