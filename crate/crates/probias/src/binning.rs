//! Quantile binning of the conditional probability matrix into bias bin
//! indices. Zeros are excluded from quantile estimation and always land
//! in bin 0; exact 1.0 gets the dedicated top bin B. Non-one values are
//! clamped into [0, B-1], so a bias table needs exactly B+1 rows.

use crate::error::{Error, Result};
use crate::stats::ProbMatrix;

#[derive(Clone, Debug, PartialEq)]
pub struct BinBoundaries {
    /// 0.0 followed by the B+1 quantile points of the nonzero entries;
    /// non-decreasing, length B+2.
    pub boundaries: Vec<f64>,
    pub bin_count: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PhiMatrix {
    pub n_rare: usize,
    pub n_common: usize,
    /// indices in [0, B]
    pub indices: Vec<usize>,
    pub bin_count: usize,
}

impl PhiMatrix {
    pub fn get(&self, i: usize, j: usize) -> usize {
        self.indices[i * self.n_common + j]
    }
}

/// Quantile at level `q` by linear interpolation between closest order
/// statistics of ascending-sorted `sorted`.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * q;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if lo + 1 >= n {
        sorted[n - 1]
    } else {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    }
}

pub fn compute_bin_boundaries(p: &ProbMatrix, bins: usize) -> Result<BinBoundaries> {
    assert!(bins >= 1, "bin count must be at least 1");
    let mut nonzero: Vec<f64> = p.values.iter().copied().filter(|&v| v != 0.0).collect();
    if nonzero.is_empty() {
        return Err(Error::data(
            "all-zero probability matrix: no co-occurrence exists",
        ));
    }
    nonzero.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut boundaries = Vec::with_capacity(bins + 2);
    boundaries.push(0.0);
    for k in 0..=bins {
        boundaries.push(quantile(&nonzero, k as f64 / bins as f64));
    }
    Ok(BinBoundaries {
        boundaries,
        bin_count: bins,
    })
}

/// Bin index for one probability under right-inclusive bucketing.
pub fn bin_index(value: f64, bb: &BinBoundaries) -> usize {
    let b = bb.bin_count;
    if value == 1.0 {
        return b;
    }
    let count = bb.boundaries.partition_point(|&x| x <= value);
    count.saturating_sub(1).min(b - 1)
}

pub fn assign_bin_indices(p: &ProbMatrix, bb: &BinBoundaries) -> PhiMatrix {
    PhiMatrix {
        n_rare: p.n_rare,
        n_common: p.n_common,
        indices: p.values.iter().map(|&v| bin_index(v, bb)).collect(),
        bin_count: bb.bin_count,
    }
}
