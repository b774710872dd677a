use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use probias::binning::{assign_bin_indices, compute_bin_boundaries};
use probias::config::{ModelMode, RunConfig};
use probias::corpus::{load_corpus, save_corpus};
use probias::embedder::{fetch_description, DescriptionCache, FetchMode, LlmConfig};
use probias::metrics::Metrics;
use probias::model::{build_artifacts, reference_gradcheck_instance, ProBiasModel};
use probias::nn::checkpoint::{self, write_atomic};
use probias::stats::{conditional_prob_matrix, count_label_stats, partition_labels};
use probias::train::{evaluate, model_rare_ids, run_ablation, train, AblationRow};
use probias::{Error, Result};

#[derive(Parser)]
#[command(name = "probias", version, about = "Long-tail multi-label coder with probability-biased bipartite graph attention")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flag overrides mirroring config keys; flags win over the config file.
#[derive(Args, Clone, Default)]
struct Overrides {
    #[arg(long)]
    bins: Option<usize>,
    #[arg(long)]
    graph_layers: Option<usize>,
    #[arg(long)]
    rare_threshold: Option<usize>,
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    chunk_len: Option<usize>,
    #[arg(long)]
    overlap: Option<usize>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus bundle from the [synthetic] config table
    GenCorpus {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Dump label frequencies, co-occurrence counts, and the conditional probability matrix
    Stats {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        over: Overrides,
    },
    /// Build the directed bipartite graph: edge list, bin boundaries, and a phi histogram
    BuildGraph {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        over: Overrides,
    },
    /// Generate or fetch label descriptions into a cache file
    Describe {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_parser = parse_fetch_mode, default_value = "stub")]
        mode: FetchMode,
        #[arg(long)]
        cache: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// fall back to the offline stub when a remote fetch fails
        #[arg(long)]
        allow_stub_fallback: bool,
    },
    /// Train a model and write history, metrics, and the best checkpoint
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        cache: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        over: Overrides,
    },
    /// Evaluate a saved checkpoint on a split
    Eval {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        cache: Option<PathBuf>,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        over: Overrides,
    },
    /// Run the four-mode ablation over several seeds
    Ablate {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        cache: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        over: Overrides,
    },
    /// Finite-difference gradient verification on a small fixed instance
    Gradcheck {
        #[arg(long, default_value_t = 1e-5)]
        h: f64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
}

fn parse_fetch_mode(s: &str) -> std::result::Result<FetchMode, String> {
    match s {
        "stub" => Ok(FetchMode::Stub),
        "remote" => Ok(FetchMode::Remote),
        other => Err(format!("unknown describe mode {other} (expected stub|remote)")),
    }
}

fn load_run_config(path: &Option<PathBuf>, over: &Overrides) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let t = &mut cfg.train;
    if let Some(v) = over.bins {
        t.bins = v;
    }
    if let Some(v) = over.graph_layers {
        t.graph_layers = v;
    }
    if let Some(v) = over.rare_threshold {
        t.rare_threshold = v;
    }
    if let Some(ref v) = over.mode {
        t.mode = v.parse::<ModelMode>()?;
    }
    if let Some(v) = over.seed {
        t.seed = v;
    }
    if let Some(v) = over.chunk_len {
        t.chunk_len = v;
    }
    if let Some(v) = over.overlap {
        t.overlap = v;
    }
    if let Some(v) = over.threshold {
        t.threshold = v;
    }
    if let Some(v) = over.epochs {
        t.epochs = v;
    }
    if let Some(v) = over.lr {
        t.lr = v;
    }
    if let Some(v) = over.dropout {
        t.dropout = v;
    }
    t.validate()?;
    Ok(cfg)
}

fn load_cache(path: &Option<PathBuf>) -> Result<Option<DescriptionCache>> {
    match path {
        Some(p) => Ok(Some(DescriptionCache::load(p)?)),
        None => Ok(None),
    }
}

/// Copy the effective config into the output dir for provenance.
fn persist_config(cfg: &RunConfig, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    cfg.save(&out.join("config.toml"))
}

fn cmd_gen_corpus(config: &Path, out: &Path) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let spec = cfg
        .synthetic
        .as_ref()
        .ok_or_else(|| Error::config("config has no [synthetic] table"))?;
    let corpus = probias::synthetic::generate_synthetic_corpus(spec)?;
    save_corpus(&corpus, out)?;
    persist_config(&cfg, out)?;
    println!(
        "wrote corpus: {} labels, {} train / {} dev / {} test docs, vocab {}",
        corpus.n_labels(),
        corpus.train.len(),
        corpus.dev.len(),
        corpus.test.len(),
        corpus.vocab_size()
    );
    Ok(())
}

fn cmd_stats(corpus_dir: &Path, cfg: &RunConfig, out: &Path) -> Result<()> {
    let corpus = load_corpus(corpus_dir)?;
    let stats = count_label_stats(&corpus.train, corpus.n_labels())?;
    let part = partition_labels(&stats, cfg.train.rare_threshold);
    let prob = conditional_prob_matrix(&stats, &part);

    let mut freq_csv = String::from("code,frequency,partition\n");
    for (l, (code, _)) in corpus.label_names.iter().enumerate() {
        let kind = if part.rare_ids.contains(&l) { "rare" } else { "common" };
        freq_csv.push_str(&format!("{code},{},{kind}\n", stats.freq[l]));
    }

    let mut prob_csv = String::from("rare_code,common_code,count,probability\n");
    for (i, &r) in part.rare_ids.iter().enumerate() {
        for (j, &c) in part.common_ids.iter().enumerate() {
            prob_csv.push_str(&format!(
                "{},{},{},{}\n",
                corpus.label_names[r].0,
                corpus.label_names[c].0,
                stats.cooc_count(r, c),
                prob.get(i, j)
            ));
        }
    }

    std::fs::create_dir_all(out)?;
    write_atomic(&out.join("label_freq.csv"), freq_csv.as_bytes())?;
    write_atomic(&out.join("prob_matrix.csv"), prob_csv.as_bytes())?;
    persist_config(cfg, out)?;
    println!(
        "stats: {} common, {} rare labels over {} train docs; {} nonzero pairs",
        part.n_common(),
        part.n_rare(),
        stats.n_train_docs,
        prob.nonzero_count()
    );
    Ok(())
}

fn cmd_build_graph(corpus_dir: &Path, cfg: &RunConfig, out: &Path) -> Result<()> {
    let corpus = load_corpus(corpus_dir)?;
    let stats = count_label_stats(&corpus.train, corpus.n_labels())?;
    let part = partition_labels(&stats, cfg.train.rare_threshold);
    let prob = conditional_prob_matrix(&stats, &part);
    let bb = compute_bin_boundaries(&prob, cfg.train.bins)?;
    let phi = assign_bin_indices(&prob, &bb);

    let mut edges = String::from("rare_code,common_code,probability,phi\n");
    let mut hist = vec![0usize; bb.bin_count + 1];
    for (i, &r) in part.rare_ids.iter().enumerate() {
        for (j, &c) in part.common_ids.iter().enumerate() {
            let p = prob.get(i, j);
            if p > 0.0 {
                let b = phi.get(i, j);
                hist[b] += 1;
                edges.push_str(&format!(
                    "{},{},{},{}\n",
                    corpus.label_names[r].0, corpus.label_names[c].0, p, b
                ));
            }
        }
    }
    let mut bounds = String::from("index,boundary\n");
    for (i, b) in bb.boundaries.iter().enumerate() {
        bounds.push_str(&format!("{i},{b}\n"));
    }
    let mut hist_csv = String::from("phi,count\n");
    for (b, n) in hist.iter().enumerate() {
        hist_csv.push_str(&format!("{b},{n}\n"));
    }

    std::fs::create_dir_all(out)?;
    write_atomic(&out.join("graph_edges.csv"), edges.as_bytes())?;
    write_atomic(&out.join("bin_boundaries.csv"), bounds.as_bytes())?;
    write_atomic(&out.join("phi_histogram.csv"), hist_csv.as_bytes())?;
    persist_config(cfg, out)?;
    println!(
        "graph: {} directed edges over {} rare x {} common labels, {} bins",
        hist.iter().sum::<usize>(),
        part.n_rare(),
        part.n_common(),
        bb.bin_count
    );
    Ok(())
}

fn cmd_describe(
    corpus_dir: &Path,
    mode: FetchMode,
    cache_path: &Path,
    config: &Option<PathBuf>,
    allow_stub_fallback: bool,
) -> Result<()> {
    let corpus = load_corpus(corpus_dir)?;
    let llm = match config {
        Some(p) => RunConfig::load(p)?.llm.unwrap_or_default(),
        None => LlmConfig::default(),
    };
    let mut cache = DescriptionCache::load(cache_path)?;
    let mut fetched = 0usize;
    for (code, name) in &corpus.label_names {
        let entry = fetch_description(code, name, mode, &llm, &mut cache, allow_stub_fallback)?;
        if entry.source != probias::embedder::DescriptionSource::Cache {
            fetched += 1;
        }
    }
    cache.save(cache_path)?;
    println!(
        "descriptions: {} labels, {} newly fetched, cache {}",
        corpus.n_labels(),
        fetched,
        cache_path.display()
    );
    Ok(())
}

fn metrics_csv(mode: ModelMode, seed: u64, split: &str, m: &Metrics) -> String {
    format!(
        "mode,seed,split,{}\n{},{},{},{}\n",
        Metrics::csv_header(),
        mode,
        seed,
        split,
        m.csv_row()
    )
}

fn cmd_train(
    corpus_dir: &Path,
    cfg: &RunConfig,
    cache: Option<&DescriptionCache>,
    out: &Path,
) -> Result<()> {
    let corpus = load_corpus(corpus_dir)?;
    let artifacts = build_artifacts(&corpus, &cfg.train)?;
    let started = Instant::now();
    let (mut model, outcome) = train(&cfg.train, &corpus, &artifacts, cache)?;
    model.params = outcome.best_params.clone();

    std::fs::create_dir_all(out)?;
    write_atomic(&out.join("history.csv"), outcome.history_text().as_bytes())?;
    checkpoint::save(&model.params, &out.join("checkpoint"))?;
    let rare_ids = model_rare_ids(&artifacts);
    let test = evaluate(&model, &corpus.test, cfg.train.threshold, &rare_ids)?;
    write_atomic(
        &out.join("metrics.csv"),
        metrics_csv(cfg.train.mode, cfg.train.seed, "test", &test).as_bytes(),
    )?;
    persist_config(cfg, out)?;
    println!(
        "trained {} epochs in {:.1}s; best dev Macro-F1 {:.4} at epoch {}; test Macro-F1 {:.4}, rare Macro-F1 {:.4}",
        outcome.history.len(),
        started.elapsed().as_secs_f64(),
        outcome.best_dev_macro_f1,
        outcome.best_epoch.map_or_else(|| "-".to_string(), |e| e.to_string()),
        test.macro_f1,
        test.rare_macro_f1
    );
    Ok(())
}

fn cmd_eval(
    corpus_dir: &Path,
    cfg: &RunConfig,
    cache: Option<&DescriptionCache>,
    ckpt: &Path,
    split: &str,
    out: &Path,
) -> Result<()> {
    let corpus = load_corpus(corpus_dir)?;
    let docs = corpus
        .split(split)
        .ok_or_else(|| Error::config(format!("unknown split {split} (expected train|dev|test)")))?
        .to_vec();
    let artifacts = build_artifacts(&corpus, &cfg.train)?;
    let mut model = ProBiasModel::new(&corpus, &artifacts, &cfg.train, cache)?;
    checkpoint::load(&mut model.params, ckpt)?;
    let metrics = evaluate(&model, &docs, cfg.train.threshold, &model_rare_ids(&artifacts))?;
    std::fs::create_dir_all(out)?;
    write_atomic(
        &out.join("metrics.csv"),
        metrics_csv(cfg.train.mode, cfg.train.seed, split, &metrics).as_bytes(),
    )?;
    persist_config(cfg, out)?;
    println!(
        "{split}: macro_auc {:.4} micro_auc {:.4} macro_f1 {:.4} micro_f1 {:.4} rare_macro_f1 {:.4}",
        metrics.macro_auc, metrics.micro_auc, metrics.macro_f1, metrics.micro_f1, metrics.rare_macro_f1
    );
    Ok(())
}

fn cmd_ablate(
    corpus_dir: &Path,
    cfg: &RunConfig,
    cache: Option<&DescriptionCache>,
    n_seeds: u64,
    out: &Path,
) -> Result<()> {
    if n_seeds == 0 {
        return Err(Error::config("--seeds must be positive"));
    }
    let corpus = load_corpus(corpus_dir)?;
    let seeds: Vec<u64> = (0..n_seeds).map(|k| cfg.train.seed + k).collect();
    let started = Instant::now();
    let rows = run_ablation(&cfg.train, &corpus, &seeds, cache)?;

    let mut csv = AblationRow::csv_header();
    csv.push('\n');
    for row in &rows {
        csv.push_str(&row.csv_row());
        csv.push('\n');
    }
    std::fs::create_dir_all(out)?;
    write_atomic(&out.join("ablation.csv"), csv.as_bytes())?;
    let mut histories = String::from("mode,seed,epoch,train_loss\n");
    for row in &rows {
        for rec in &row.history {
            histories.push_str(&format!(
                "{},{},{},{:.6}\n",
                row.mode, row.seed, rec.epoch, rec.train_loss
            ));
        }
    }
    write_atomic(&out.join("ablation_history.csv"), histories.as_bytes())?;
    persist_config(cfg, out)?;

    for mode in ModelMode::ALL {
        let vals: Vec<f64> = rows
            .iter()
            .filter(|r| r.mode == mode)
            .map(|r| r.metrics.rare_macro_f1)
            .collect();
        let mean = vals.iter().sum::<f64>() / vals.len().max(1) as f64;
        println!("{mode}: mean rare Macro-F1 {mean:.4} over {} seeds", vals.len());
    }
    println!(
        "ablation: {} runs in {:.1}s -> {}",
        rows.len(),
        started.elapsed().as_secs_f64(),
        out.join("ablation.csv").display()
    );
    Ok(())
}

fn cmd_gradcheck(h: f64, tolerance: f64) -> Result<()> {
    let (mut model, doc) = reference_gradcheck_instance()?;
    let err = model.gradient_check(&doc, h)?;
    println!("max relative gradient error: {err:.3e} (tolerance {tolerance:.1e})");
    if err < tolerance {
        Ok(())
    } else {
        Err(Error::numeric(format!(
            "gradient check failed: {err:.3e} >= {tolerance:.1e}"
        )))
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenCorpus { config, out } => cmd_gen_corpus(&config, &out),
        Command::Stats { corpus, config, out, over } => {
            let cfg = load_run_config(&config, &over)?;
            cmd_stats(&corpus, &cfg, &out)
        }
        Command::BuildGraph { corpus, config, out, over } => {
            let cfg = load_run_config(&config, &over)?;
            cmd_build_graph(&corpus, &cfg, &out)
        }
        Command::Describe { corpus, mode, cache, config, allow_stub_fallback } => {
            cmd_describe(&corpus, mode, &cache, &config, allow_stub_fallback)
        }
        Command::Train { corpus, config, cache, out, over } => {
            let cfg = load_run_config(&config, &over)?;
            let cache = load_cache(&cache)?;
            cmd_train(&corpus, &cfg, cache.as_ref(), &out)
        }
        Command::Eval { corpus, config, cache, checkpoint, split, out, over } => {
            let cfg = load_run_config(&config, &over)?;
            let cache = load_cache(&cache)?;
            cmd_eval(&corpus, &cfg, cache.as_ref(), &checkpoint, &split, &out)
        }
        Command::Ablate { corpus, config, cache, seeds, out, over } => {
            let cfg = load_run_config(&config, &over)?;
            let cache = load_cache(&cache)?;
            cmd_ablate(&corpus, &cfg, cache.as_ref(), seeds, &out)
        }
        Command::Gradcheck { h, tolerance } => cmd_gradcheck(h, tolerance),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help/--version exit 0; anything else is a usage error
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e {
                Error::Config(_) => 1,
                Error::Data(_) | Error::Io(_) => 2,
                Error::Numeric(_) | Error::Shape(_) => 3,
            };
            ExitCode::from(code)
        }
    }
}
