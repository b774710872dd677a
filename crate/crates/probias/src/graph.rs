//! The directed bipartite graph: common→rare edges derived from nonzero
//! conditional probabilities, with bin indices attached. Also builds the
//! symmetric all-pairs mask used by the MI ablation mode.

use crate::binning::PhiMatrix;
use crate::error::{Error, Result};
use crate::stats::{LabelPartition, LabelStats, ProbMatrix};

#[derive(Clone, Debug)]
pub struct BipartiteGraph {
    pub partition: LabelPartition,
    pub phi: PhiMatrix,
    /// N_r x N_c, true = edge exists (the pair co-occurs in training)
    pub mask: Vec<bool>,
    /// true where a rare label's mask row is all false
    pub isolated_rare: Vec<bool>,
}

impl BipartiteGraph {
    pub fn n_rare(&self) -> usize {
        self.partition.n_rare()
    }

    pub fn n_common(&self) -> usize {
        self.partition.n_common()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.mask[i * self.n_common() + j]
    }

    pub fn edge_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

pub fn build_graph(
    part: &LabelPartition,
    p: &ProbMatrix,
    phi: &PhiMatrix,
) -> Result<BipartiteGraph> {
    let (n_rare, n_common) = (part.n_rare(), part.n_common());
    if p.n_rare != n_rare || p.n_common != n_common {
        return Err(Error::shape(format!(
            "probability matrix {}x{} vs partition {}x{}",
            p.n_rare, p.n_common, n_rare, n_common
        )));
    }
    if phi.n_rare != n_rare || phi.n_common != n_common {
        return Err(Error::shape(format!(
            "phi matrix {}x{} vs partition {}x{}",
            phi.n_rare, phi.n_common, n_rare, n_common
        )));
    }
    let mask: Vec<bool> = p.values.iter().map(|&v| v > 0.0).collect();
    let isolated_rare: Vec<bool> = (0..n_rare)
        .map(|i| !mask[i * n_common..(i + 1) * n_common].iter().any(|&m| m))
        .collect();
    Ok(BipartiteGraph {
        partition: part.clone(),
        phi: phi.clone(),
        mask,
        isolated_rare,
    })
}

/// Symmetric N x N co-occurrence mask over all label pairs, for the MI
/// ablation mode. Nodes with no co-occurring partner have an all-false
/// row and bypass attention, like isolated rare nodes in the directed
/// graph.
pub fn build_mi_mask(stats: &LabelStats) -> Vec<bool> {
    let n = stats.n_labels;
    let mut mask = vec![false; n * n];
    for (&(a, b), &count) in &stats.cooc {
        if count > 0 {
            mask[a * n + b] = true;
            mask[b * n + a] = true;
        }
    }
    mask
}
