//! Evaluation metrics for long-tail multi-label classification.
//!
//! Macro averages skip labels with no gold positives in the evaluated
//! split (their F1 is undefined); AUC additionally requires at least one
//! negative. Ties in AUC get mean ranks; ties in top-k ranking break by
//! ascending label index for determinism.

use crate::error::{Error, Result};

pub const PRECISION_AT: [usize; 3] = [5, 8, 15];

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Metrics {
    pub macro_auc: f64,
    pub micro_auc: f64,
    pub macro_f1: f64,
    pub micro_f1: f64,
    pub rare_macro_f1: f64,
    /// keyed in PRECISION_AT order: P@5, P@8, P@15
    pub precision_at: [f64; 3],
}

impl Metrics {
    pub fn csv_header() -> &'static str {
        "macro_auc,micro_auc,macro_f1,micro_f1,rare_macro_f1,p@5,p@8,p@15"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            self.macro_auc,
            self.micro_auc,
            self.macro_f1,
            self.micro_f1,
            self.rare_macro_f1,
            self.precision_at[0],
            self.precision_at[1],
            self.precision_at[2],
        )
    }
}

#[derive(Clone, Copy, Debug, Default)]
struct Confusion {
    tp: usize,
    fp: usize,
    fn_: usize,
    pos: usize,
    neg: usize,
}

fn f1(c: &Confusion) -> f64 {
    let denom = 2 * c.tp + c.fp + c.fn_;
    if denom == 0 {
        0.0
    } else {
        2.0 * c.tp as f64 / denom as f64
    }
}

/// AUC as the Mann-Whitney rank statistic with mean ranks on ties.
/// `items` is (score, is_positive); requires >=1 positive and >=1
/// negative (checked by the caller).
fn rank_auc(items: &mut Vec<(f64, bool)>) -> f64 {
    items.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let n = items.len();
    let mut rank_sum_pos = 0.0;
    let mut n_pos = 0usize;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j < n && items[j].0 == items[i].0 {
            j += 1;
        }
        // ranks i+1 ..= j, averaged over the tie group
        let mean_rank = (i + 1 + j) as f64 / 2.0;
        for item in &items[i..j] {
            if item.1 {
                rank_sum_pos += mean_rank;
                n_pos += 1;
            }
        }
        i = j;
    }
    let n_neg = n - n_pos;
    (rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0) / (n_pos as f64 * n_neg as f64)
}

/// `scores` and `gold` are docs x labels; `rare_ids` selects the labels
/// counted in the rare-only macro F1.
pub fn compute_metrics(
    scores: &[Vec<f64>],
    gold: &[Vec<bool>],
    threshold: f64,
    rare_ids: &[usize],
) -> Result<Metrics> {
    if scores.len() != gold.len() {
        return Err(Error::shape("score and gold row counts differ"));
    }
    if scores.is_empty() {
        return Err(Error::data("no documents to evaluate"));
    }
    let n_labels = scores[0].len();
    for (s, g) in scores.iter().zip(gold) {
        if s.len() != n_labels || g.len() != n_labels {
            return Err(Error::shape("ragged score or gold rows"));
        }
    }
    if !gold.iter().any(|g| g.iter().any(|&v| v)) {
        return Err(Error::data("no gold positives in the evaluated split"));
    }

    let mut conf = vec![Confusion::default(); n_labels];
    for (s, g) in scores.iter().zip(gold) {
        for l in 0..n_labels {
            let pred = s[l] >= threshold;
            let is_pos = g[l];
            if is_pos {
                conf[l].pos += 1;
                if pred {
                    conf[l].tp += 1;
                } else {
                    conf[l].fn_ += 1;
                }
            } else {
                conf[l].neg += 1;
                if pred {
                    conf[l].fp += 1;
                }
            }
        }
    }

    let macro_f1_over = |ids: &mut dyn Iterator<Item = usize>| -> f64 {
        let mut total = 0.0;
        let mut count = 0usize;
        for l in ids {
            if conf[l].pos > 0 {
                total += f1(&conf[l]);
                count += 1;
            }
        }
        if count == 0 {
            0.0
        } else {
            total / count as f64
        }
    };
    let macro_f1 = macro_f1_over(&mut (0..n_labels));
    let rare_macro_f1 = macro_f1_over(&mut rare_ids.iter().copied());

    let (tp, fp, fn_) = conf.iter().fold((0, 0, 0), |(a, b, c), x| {
        (a + x.tp, b + x.fp, c + x.fn_)
    });
    let micro_f1 = f1(&Confusion {
        tp,
        fp,
        fn_,
        pos: 0,
        neg: 0,
    });

    let mut macro_auc_sum = 0.0;
    let mut macro_auc_count = 0usize;
    for l in 0..n_labels {
        if conf[l].pos == 0 || conf[l].neg == 0 {
            continue;
        }
        let mut items: Vec<(f64, bool)> = scores
            .iter()
            .zip(gold)
            .map(|(s, g)| (s[l], g[l]))
            .collect();
        macro_auc_sum += rank_auc(&mut items);
        macro_auc_count += 1;
    }
    let macro_auc = if macro_auc_count == 0 {
        0.0
    } else {
        macro_auc_sum / macro_auc_count as f64
    };

    let mut pooled: Vec<(f64, bool)> = Vec::with_capacity(scores.len() * n_labels);
    for (s, g) in scores.iter().zip(gold) {
        for l in 0..n_labels {
            pooled.push((s[l], g[l]));
        }
    }
    let has_pos = pooled.iter().any(|p| p.1);
    let has_neg = pooled.iter().any(|p| !p.1);
    let micro_auc = if has_pos && has_neg {
        rank_auc(&mut pooled)
    } else {
        0.0
    };

    let mut precision_at = [0.0; 3];
    for (ki, &k) in PRECISION_AT.iter().enumerate() {
        let mut total = 0.0;
        for (s, g) in scores.iter().zip(gold) {
            let mut order: Vec<usize> = (0..n_labels).collect();
            order.sort_by(|&a, &b| {
                s[b].partial_cmp(&s[a]).unwrap().then(a.cmp(&b))
            });
            let hits = order.iter().take(k).filter(|&&l| g[l]).count();
            total += hits as f64 / k as f64;
        }
        precision_at[ki] = total / scores.len() as f64;
    }

    Ok(Metrics {
        macro_auc,
        micro_auc,
        macro_f1,
        micro_f1,
        rare_macro_f1,
        precision_at,
    })
}
