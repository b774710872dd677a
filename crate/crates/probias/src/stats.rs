//! Label frequencies, pairwise co-occurrence counts, the common/rare
//! partition, and the conditional probability matrix. Statistics come
//! from the training split only.

use std::collections::BTreeMap;

use crate::corpus::Document;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct LabelStats {
    pub n_labels: usize,
    /// per-label document counts over the training split
    pub freq: Vec<usize>,
    /// unordered pair (a < b) -> number of documents containing both
    pub cooc: BTreeMap<(usize, usize), usize>,
    pub n_train_docs: usize,
}

impl LabelStats {
    pub fn cooc_count(&self, a: usize, b: usize) -> usize {
        let key = if a < b { (a, b) } else { (b, a) };
        self.cooc.get(&key).copied().unwrap_or(0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelPartition {
    /// ascending label indices with train frequency >= threshold
    pub common_ids: Vec<usize>,
    /// ascending label indices with train frequency < threshold
    pub rare_ids: Vec<usize>,
    pub threshold: usize,
}

impl LabelPartition {
    pub fn n_common(&self) -> usize {
        self.common_ids.len()
    }
    pub fn n_rare(&self) -> usize {
        self.rare_ids.len()
    }
}

/// Dense N_r x N_c matrix of P(common_j | rare_i); rows follow
/// `rare_ids` order, columns `common_ids` order.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbMatrix {
    pub n_rare: usize,
    pub n_common: usize,
    pub values: Vec<f64>,
}

impl ProbMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n_common + j]
    }

    pub fn nonzero_count(&self) -> usize {
        self.values.iter().filter(|&&v| v > 0.0).count()
    }
}

pub fn count_label_stats(train_docs: &[Document], n_labels: usize) -> Result<LabelStats> {
    if train_docs.is_empty() {
        return Err(Error::data("empty training split"));
    }
    let mut freq = vec![0usize; n_labels];
    let mut cooc: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for doc in train_docs {
        let labels: Vec<usize> = doc.label_ids.iter().copied().collect();
        for &l in &labels {
            freq[l] += 1;
        }
        for (i, &a) in labels.iter().enumerate() {
            for &b in &labels[i + 1..] {
                // BTreeSet iteration is ascending, so a < b
                *cooc.entry((a, b)).or_insert(0) += 1;
            }
        }
    }
    Ok(LabelStats {
        n_labels,
        freq,
        cooc,
        n_train_docs: train_docs.len(),
    })
}

/// A label is rare iff its train frequency is strictly below `threshold`.
/// Labels absent from training (frequency 0) are rare.
pub fn partition_labels(stats: &LabelStats, threshold: usize) -> LabelPartition {
    assert!(threshold >= 1, "threshold must be at least 1");
    let mut common_ids = Vec::new();
    let mut rare_ids = Vec::new();
    for (l, &f) in stats.freq.iter().enumerate() {
        if f >= threshold {
            common_ids.push(l);
        } else {
            rare_ids.push(l);
        }
    }
    LabelPartition {
        common_ids,
        rare_ids,
        threshold,
    }
}

/// Entry (i,j) = cooc(rare_i, common_j) / freq(rare_i). Rows for rare
/// labels with zero train frequency are all-zero.
pub fn conditional_prob_matrix(stats: &LabelStats, part: &LabelPartition) -> ProbMatrix {
    let n_rare = part.n_rare();
    let n_common = part.n_common();
    let mut values = vec![0.0; n_rare * n_common];
    for (i, &r) in part.rare_ids.iter().enumerate() {
        let fr = stats.freq[r];
        if fr == 0 {
            continue;
        }
        for (j, &c) in part.common_ids.iter().enumerate() {
            let n = stats.cooc_count(r, c);
            if n > 0 {
                values[i * n_common + j] = n as f64 / fr as f64;
            }
        }
    }
    ProbMatrix {
        n_rare,
        n_common,
        values,
    }
}
