//! End-to-end acceptance suite. Each test prints one summary line on
//! success (visible with --nocapture) and enforces its wall-clock budget.

use std::collections::BTreeSet;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use probias::binning::{assign_bin_indices, compute_bin_boundaries, PhiMatrix};
use probias::config::{ModelMode, TrainConfig};
use probias::corpus::{Corpus, Document};
use probias::graph::{build_graph, BipartiteGraph};
use probias::graph_encoder::{AttentionLayout, GraphEncoder, GraphEncoderConfig};
use probias::metrics::compute_metrics;
use probias::model::{build_artifacts, reference_gradcheck_instance, ProBiasModel};
use probias::nn::{checkpoint, ParamSet, Tape, Tensor};
use probias::stats::{
    conditional_prob_matrix, count_label_stats, partition_labels, LabelPartition, ProbMatrix,
};
use probias::synthetic::{generate_synthetic_corpus, PlantedLink, SyntheticSpec};
use probias::train::{run_ablation, train};

fn random_docs(rng: &mut ChaCha20Rng, n_labels: usize, n_docs: usize) -> Vec<Document> {
    (0..n_docs)
        .map(|k| {
            let n = rng.gen_range(1..=4.min(n_labels));
            let mut labels = BTreeSet::new();
            while labels.len() < n {
                labels.insert(rng.gen_range(0..n_labels));
            }
            Document {
                id: format!("d-{k:05}"),
                tokens: vec![2],
                label_ids: labels,
            }
        })
        .collect()
}

/// Criterion 1: the conditional probability matrix matches a brute-force
/// oracle on 100 random corpora, to 1e-12, within 5 seconds.
#[test]
fn acceptance_1_probability_matrix_oracle() {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for seed in 0..100u64 {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let n_labels = rng.gen_range(4..20);
        let n_docs = rng.gen_range(5..120);
        let docs = random_docs(&mut rng, n_labels, n_docs);
        let threshold = rng.gen_range(1..10);
        let stats = count_label_stats(&docs, n_labels).unwrap();
        let part = partition_labels(&stats, threshold);
        let p = conditional_prob_matrix(&stats, &part);
        for (i, &r) in part.rare_ids.iter().enumerate() {
            for (j, &c) in part.common_ids.iter().enumerate() {
                // oracle: count both-and-rare documents directly
                let nr = docs.iter().filter(|d| d.label_ids.contains(&r)).count();
                let nrc = docs
                    .iter()
                    .filter(|d| d.label_ids.contains(&r) && d.label_ids.contains(&c))
                    .count();
                let want = if nr == 0 { 0.0 } else { nrc as f64 / nr as f64 };
                worst = worst.max((p.get(i, j) - want).abs());
            }
        }
        // partition respects the strict threshold on both sides
        for &c in &part.common_ids {
            assert!(stats.freq[c] >= threshold);
        }
        for &r in &part.rare_ids {
            assert!(stats.freq[r] < threshold);
        }
    }
    let elapsed = start.elapsed();
    assert!(worst <= 1e-12, "worst deviation {worst:e}");
    assert!(elapsed.as_secs_f64() < 5.0, "took {elapsed:?}");
    println!(
        "acceptance 1 (probability matrix oracle, 100 corpora): pass — max |diff| {worst:.1e}, {elapsed:.2?}"
    );
}

/// Criterion 2: quantile binning properties hold over 1000 random
/// matrices, and bins stay balanced on a large distinct sample, within
/// 10 seconds.
#[test]
fn acceptance_2_binning_properties() {
    let start = Instant::now();
    let mut rng = ChaCha20Rng::seed_from_u64(0x6060);
    for _ in 0..1000 {
        let n = rng.gen_range(2..40);
        let bins = rng.gen_range(1..12);
        let values: Vec<f64> = (0..n)
            .map(|_| match rng.gen_range(0..4) {
                0 => 0.0,
                1 => 1.0,
                _ => rng.gen_range(0.0..1.0),
            })
            .collect();
        let p = ProbMatrix {
            n_rare: 1,
            n_common: n,
            values: values.clone(),
        };
        if values.iter().all(|&v| v == 0.0) {
            assert!(compute_bin_boundaries(&p, bins).is_err());
            continue;
        }
        let bb = compute_bin_boundaries(&p, bins).unwrap();
        assert!(bb.boundaries.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(bb.boundaries.len(), bins + 2);
        let phi = assign_bin_indices(&p, &bb);
        let mut pairs: Vec<(f64, usize)> =
            values.iter().copied().zip(phi.indices.iter().copied()).collect();
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        for w in pairs.windows(2) {
            assert!(w[0].1 <= w[1].1, "bin index must be monotone in probability");
        }
        for (&v, &i) in values.iter().zip(&phi.indices) {
            assert!(i <= bins);
            assert_eq!(i == bins, v == 1.0, "top bin reserved for exact certainty");
            if v == 0.0 {
                assert_eq!(i, 0, "zeros always land in bin 0");
            }
        }
    }
    // balance: 10k distinct values over 10 bins; the clamp folds the top
    // decile into bin 9 and bin 0 keeps only sub-minimum values
    let values: Vec<f64> = (0..10_000).map(|_| rng.gen_range(1e-9..1.0f64)).collect();
    let p = ProbMatrix {
        n_rare: 100,
        n_common: 100,
        values,
    };
    let bb = compute_bin_boundaries(&p, 10).unwrap();
    let phi = assign_bin_indices(&p, &bb);
    let mut counts = vec![0usize; 11];
    for &i in &phi.indices {
        counts[i] += 1;
    }
    for b in 1..9 {
        assert!((800..=1200).contains(&counts[b]), "bin {b}: {}", counts[b]);
    }
    assert!((1700..=2300).contains(&counts[9]), "bin 9: {}", counts[9]);
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 10.0, "took {elapsed:?}");
    println!("acceptance 2 (quantile binning, 1000 matrices): pass — {elapsed:.2?}");
}

fn random_graph(seed: u64) -> (BipartiteGraph, usize) {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let n_common = rng.gen_range(2..8);
    let n_rare = rng.gen_range(1..10);
    let part = LabelPartition {
        common_ids: (0..n_common).collect(),
        rare_ids: (n_common..n_common + n_rare).collect(),
        threshold: 5,
    };
    let values: Vec<f64> = (0..n_rare * n_common)
        .map(|_| {
            if rng.gen::<f64>() < 0.45 {
                0.0
            } else {
                rng.gen::<f64>()
            }
        })
        .collect();
    let p = ProbMatrix {
        n_rare,
        n_common,
        values,
    };
    let bins = rng.gen_range(1..8);
    let phi = match compute_bin_boundaries(&p, bins) {
        Ok(bb) => assign_bin_indices(&p, &bb),
        Err(_) => PhiMatrix {
            n_rare,
            n_common,
            indices: vec![0; n_rare * n_common],
            bin_count: bins,
        },
    };
    (build_graph(&part, &p, &phi).unwrap(), n_common + n_rare)
}

/// Criterion 3: on 200 random graphs, attention rows are probability
/// distributions restricted to the edge set, and information flows only
/// from common to rare codes.
#[test]
fn acceptance_3_attention_invariants() {
    let start = Instant::now();
    let mut checked_rows = 0usize;
    for seed in 0..200u64 {
        let (graph, n_labels) = random_graph(seed);
        let layout = AttentionLayout::directed(&graph, n_labels);
        let nq = layout.query_global.len();
        let nk = layout.key_global.len();
        if nq == 0 {
            continue;
        }
        let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x55aa);
        let tape = Tape::new();
        let logits: Vec<f64> = (0..nq * nk).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let attn = tape
            .leaf(Tensor::new(vec![nq, nk], logits))
            .softmax_masked(&layout.mask)
            .unwrap();
        for i in 0..nq {
            let row = attn.value().row(i);
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() <= 1e-6, "row sum {sum} at graph {seed}");
            for (j, &a) in row.iter().enumerate() {
                if !layout.mask[i * nk + j] {
                    assert_eq!(a, 0.0, "mass off the edge set at graph {seed}");
                }
            }
            checked_rows += 1;
        }

        // directionality on a sample of graphs: perturbing a rare input
        // row leaves every common output row untouched
        if seed % 10 != 0 {
            continue;
        }
        let d = 8;
        let mut params = ParamSet::new();
        let mut prng = ChaCha20Rng::seed_from_u64(seed ^ 0x77);
        let enc = GraphEncoder::new(
            GraphEncoderConfig {
                d,
                d_attn: d,
                heads: 2,
                bins: graph.phi.bin_count,
                layers: 1,
                ffn_hidden: d,
                dropout: 0.0,
            },
            &mut params,
            &mut prng,
        );
        let base = Tensor::new(
            vec![n_labels, d],
            (0..n_labels * d).map(|_| prng.gen_range(-1.0..1.0)).collect(),
        );
        let mut perturbed = base.clone();
        let rare_row = layout.query_global[0];
        perturbed.set2(rare_row, 0, perturbed.get2(rare_row, 0) + 0.5);
        let run = |x: &Tensor| {
            let tape = Tape::new();
            let watched = params.watch(&tape);
            enc.forward(&tape.constant(x.clone()), &layout, true, &watched, None)
                .unwrap()
                .value()
                .clone()
        };
        let (a, b) = (run(&base), run(&perturbed));
        for &c in &layout.key_global {
            for j in 0..d {
                assert!(
                    (a.get2(c, j) - b.get2(c, j)).abs() <= 1e-12,
                    "graph {seed}: common row {c} reacted to a rare input"
                );
            }
        }
    }
    assert!(checked_rows > 100, "fixtures produced too few query rows");
    let elapsed = start.elapsed();
    println!(
        "acceptance 3 (attention invariants, 200 graphs, {checked_rows} rows): pass — {elapsed:.2?}"
    );
}

/// Criterion 4: analytic gradients of the full model match central
/// differences to 1e-4 relative error on the reference instance, within
/// 60 seconds.
#[test]
fn acceptance_4_end_to_end_gradient_check() {
    let start = Instant::now();
    let (mut model, probe) = reference_gradcheck_instance().unwrap();
    let err = model.gradient_check(&probe, 1e-5).unwrap();
    let elapsed = start.elapsed();
    assert!(err < 1e-4, "max relative error {err:e}");
    assert!(elapsed.as_secs_f64() < 60.0, "took {elapsed:?}");
    println!("acceptance 4 (end-to-end gradient check): pass — max rel err {err:.2e}, {elapsed:.2?}");
}

fn small_synthetic() -> Corpus {
    let spec = SyntheticSpec {
        n_common: 4,
        n_rare: 5,
        vocab_size: 30,
        n_train: 80,
        n_dev: 16,
        n_test: 16,
        power_law_exponent: 1.0,
        planted_links: (0..5)
            .map(|r| PlantedLink {
                rare: r,
                common: r % 4,
                prob: 0.8,
            })
            .collect(),
        signal_tokens_per_label: 2,
        noise_token_rate: 0.25,
        rng_seed: 29,
    };
    generate_synthetic_corpus(&spec).unwrap()
}

/// Criterion 5: with a zero-initialized bias table the full CE model is
/// numerically identical to DI before any training step.
#[test]
fn acceptance_5_ce_reduces_to_di_at_init() {
    let corpus = small_synthetic();
    let mut cfg = TrainConfig {
        d: 16,
        heads: 4,
        bins: 5,
        doc_blocks: 1,
        ffn_hidden: 16,
        chunk_len: 16,
        overlap: 4,
        max_tokens: 64,
        rare_threshold: 10,
        dropout: 0.0,
        seed: 12,
        ..TrainConfig::default()
    };
    let artifacts = build_artifacts(&corpus, &cfg).unwrap();
    cfg.mode = ModelMode::Ce;
    let ce = ProBiasModel::new(&corpus, &artifacts, &cfg, None).unwrap();
    cfg.mode = ModelMode::Di;
    let di = ProBiasModel::new(&corpus, &artifacts, &cfg, None).unwrap();
    let sa = ce.score_docs(&corpus.test).unwrap();
    let sb = di.score_docs(&corpus.test).unwrap();
    let mut worst = 0.0f64;
    for (ra, rb) in sa.iter().zip(&sb) {
        for (a, b) in ra.iter().zip(rb) {
            worst = worst.max((a - b).abs());
        }
    }
    assert!(worst <= 1e-12, "max score gap {worst:e}");
    println!("acceptance 5 (CE == DI at init): pass — max |gap| {worst:.1e}");
}

/// Criterion 6: the metric stack reproduces independently computed
/// values on a frozen fixture to 1e-9.
#[test]
fn acceptance_6_metrics_reference_fixture() {
    let scores = vec![
        vec![0.91, 0.12, 0.55, 0.50, 0.07, 0.33],
        vec![0.84, 0.40, 0.50, 0.50, 0.22, 0.18],
        vec![0.10, 0.95, 0.61, 0.07, 0.50, 0.41],
        vec![0.77, 0.88, 0.12, 0.50, 0.50, 0.29],
        vec![0.66, 0.08, 0.50, 0.44, 0.13, 0.62],
        vec![0.09, 0.73, 0.07, 0.81, 0.36, 0.05],
        vec![0.58, 0.67, 0.45, 0.50, 0.71, 0.50],
        vec![0.30, 0.21, 0.68, 0.12, 0.55, 0.14],
        vec![0.49, 0.56, 0.33, 0.75, 0.09, 0.27],
        vec![0.88, 0.35, 0.50, 0.06, 0.48, 0.71],
    ];
    let gold: Vec<Vec<bool>> = [
        [1, 0, 1, 0, 0, 0],
        [1, 0, 0, 1, 0, 0],
        [0, 1, 1, 0, 0, 0],
        [1, 1, 0, 0, 1, 0],
        [1, 0, 1, 0, 0, 0],
        [0, 1, 0, 1, 0, 0],
        [0, 1, 0, 0, 1, 0],
        [0, 0, 1, 0, 1, 0],
        [1, 1, 0, 1, 0, 0],
        [1, 0, 0, 0, 0, 0],
    ]
    .iter()
    .map(|r| r.iter().map(|&v| v == 1).collect())
    .collect();
    let m = compute_metrics(&scores, &gold, 0.5, &[2, 3, 4, 5]).unwrap();
    let checks = [
        ("macro AUC", m.macro_auc, 0.964285714286),
        ("micro AUC", m.micro_auc, 0.946275946276),
        ("macro F1", m.macro_f1, 0.831428571429),
        ("micro F1", m.micro_f1, 0.784313725490),
        ("rare macro F1", m.rare_macro_f1, 0.774603174603),
        ("P@5", m.precision_at[0], 0.42),
        ("P@8", m.precision_at[1], 0.2625),
        ("P@15", m.precision_at[2], 0.14),
    ];
    for (name, got, want) in checks {
        assert!((got - want).abs() < 1e-9, "{name}: {got} vs {want}");
    }
    println!("acceptance 6 (metrics reference fixture): pass — 8 values within 1e-9");
}

/// The long-tail corpus used by the ablation study: a heavy rare mass
/// (shallow power law), two signal tokens per label, and six weak
/// spurious links per rare label alongside one strong one.
fn ablation_spec() -> SyntheticSpec {
    let mut links = Vec::new();
    for r in 0..45 {
        let strong = r % 12;
        links.push(PlantedLink {
            rare: r,
            common: strong,
            prob: 0.9,
        });
        for j in 1..=6 {
            links.push(PlantedLink {
                rare: r,
                common: (strong + j) % 12,
                prob: 0.3,
            });
        }
    }
    links.sort_by_key(|l| (l.rare, l.common));
    SyntheticSpec {
        n_common: 12,
        n_rare: 45,
        vocab_size: 236,
        n_train: 2000,
        n_dev: 200,
        n_test: 400,
        power_law_exponent: 0.8,
        planted_links: links,
        signal_tokens_per_label: 2,
        noise_token_rate: 0.3,
        rng_seed: 42,
    }
}

fn ablation_config() -> TrainConfig {
    TrainConfig {
        epochs: 12,
        d: 16,
        heads: 4,
        bins: 10,
        graph_layers: 1,
        doc_blocks: 0,
        ffn_hidden: 32,
        chunk_len: 32,
        overlap: 0,
        max_tokens: 64,
        rare_threshold: 35,
        dropout: 0.0,
        patience: 0,
        lr: 0.003,
        threshold: 0.4,
        ..TrainConfig::default()
    }
}

/// Criterion 7: the full ablation over five seeds separates the biased
/// model from the mask-only symmetric baseline by at least 0.05 mean
/// rare Macro-F1, every run's training loss decreases from epoch 1 to
/// epoch 5, and the whole study stays under 15 minutes.
#[test]
fn acceptance_7_ablation_study() {
    let start = Instant::now();
    let corpus = generate_synthetic_corpus(&ablation_spec()).unwrap();
    let cfg = ablation_config();
    let artifacts = build_artifacts(&corpus, &cfg).unwrap();
    assert!(
        artifacts.graph.partition.n_common() >= 10,
        "corpus must yield a usable common set, got {}",
        artifacts.graph.partition.n_common()
    );
    assert!(
        artifacts.graph.partition.n_rare() >= 40,
        "corpus must yield a long tail, got {}",
        artifacts.graph.partition.n_rare()
    );

    let seeds = [0u64, 1, 2, 3, 4];
    let rows = run_ablation(&cfg, &corpus, &seeds, None).unwrap();
    assert_eq!(rows.len(), ModelMode::ALL.len() * seeds.len());

    let mut means = Vec::new();
    for &mode in ModelMode::ALL.iter() {
        let vals: Vec<f64> = rows
            .iter()
            .filter(|r| r.mode == mode)
            .map(|r| r.metrics.rare_macro_f1)
            .collect();
        assert_eq!(vals.len(), seeds.len());
        means.push((mode, vals.iter().sum::<f64>() / vals.len() as f64));
    }
    let mean_of = |m: ModelMode| means.iter().find(|(mm, _)| *mm == m).unwrap().1;
    let (mi, ce) = (mean_of(ModelMode::Mi), mean_of(ModelMode::Ce));

    for row in &rows {
        let e1 = row.history.iter().find(|h| h.epoch == 1).unwrap().train_loss;
        let e5 = row.history.iter().find(|h| h.epoch == 5).unwrap().train_loss;
        assert!(
            e5 < e1,
            "{} seed {}: loss did not fall ({e1:.4} -> {e5:.4})",
            row.mode,
            row.seed
        );
    }

    let elapsed = start.elapsed();
    assert!(
        ce >= mi + 0.05,
        "probability bias must beat the symmetric baseline: CE {ce:.4} vs MI {mi:.4}"
    );
    assert!(elapsed.as_secs_f64() < 900.0, "ablation took {elapsed:?}");
    let detail: Vec<String> = means
        .iter()
        .map(|(m, v)| format!("{m} {v:.3}"))
        .collect();
    println!(
        "acceptance 7 (ablation, 5 seeds x {} modes): pass — rare Macro-F1 {}; gap {:.3}; {elapsed:.0?}",
        ModelMode::ALL.len(),
        detail.join(", "),
        ce - mi
    );
}

/// Criterion 8: identical config and seed reproduce the training run
/// byte for byte — same epoch history and identical checkpoint files.
#[test]
fn acceptance_8_reproducibility() {
    let corpus = small_synthetic();
    let cfg = TrainConfig {
        epochs: 2,
        d: 16,
        heads: 4,
        bins: 5,
        doc_blocks: 1,
        ffn_hidden: 16,
        chunk_len: 16,
        overlap: 4,
        max_tokens: 64,
        rare_threshold: 10,
        dropout: 0.1,
        seed: 33,
        patience: 0,
        ..TrainConfig::default()
    };
    let artifacts = build_artifacts(&corpus, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut blobs = Vec::new();
    let mut histories = Vec::new();
    for run in 0..2 {
        let (_, outcome) = train(&cfg, &corpus, &artifacts, None).unwrap();
        let ckpt = dir.path().join(format!("run{run}"));
        checkpoint::save(&outcome.best_params, &ckpt).unwrap();
        blobs.push((
            std::fs::read(ckpt.join("params.bin")).unwrap(),
            std::fs::read(ckpt.join("manifest.tsv")).unwrap(),
        ));
        histories.push(outcome.history_text());
    }
    assert_eq!(histories[0], histories[1], "histories diverged");
    assert_eq!(blobs[0].1, blobs[1].1, "checkpoint manifests diverged");
    assert_eq!(blobs[0].0, blobs[1].0, "checkpoint weights diverged");
    println!(
        "acceptance 8 (reproducibility): pass — {} history bytes and {} weight bytes identical",
        histories[0].len(),
        blobs[0].0.len()
    );
}
