//! Subcommand implementations: synth, index, search, train, eval, report.
//!
//! Conventions shared by every command:
//! - outputs go into a directory that must not exist unless `--force`;
//! - the fully resolved configuration is recorded as `manifest.json` in the
//!   output directory;
//! - everything is byte-reproducible from (inputs, flags, seed).

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, ValueEnum};
use serde::Serialize;

use rankparity_core::bm25::{build_index, load_index, save_index, BM25Params};
use rankparity_core::corpus::{
    generate_synthetic, load_corpus, load_qrels, load_queries, save_corpus, save_qrels,
    save_queries, split, Corpus, Qrels, SynthConfig,
};
use rankparity_core::dense::{embed_corpus, load_model, save_model, search_dense, EncoderModel};
use rankparity_core::losses::{train, AlignLoss, LossConfig};
use rankparity_core::metrics::{
    fairness_report, language_correlation_matrix, mrr_at_k, recall_at_k, write_matrix_csv,
    write_per_language_csv, Run,
};
use rankparity_core::trec::{read_run_dir, read_run_files, write_run_files};

fn parse_fraction(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("not a number: {s:?}"))?;
    if !(0.0..=1.0).contains(&v) {
        return Err(format!("must be in [0, 1], got {v}"));
    }
    Ok(v)
}

/// Create the output directory, refusing to touch an existing path without
/// `--force`.
fn prepare_out_dir(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        bail!(
            "output path {} already exists (pass --force to overwrite)",
            path.display()
        );
    }
    std::fs::create_dir_all(path)
        .with_context(|| format!("creating output directory {}", path.display()))?;
    Ok(())
}

fn write_manifest<T: Serialize>(dir: &Path, manifest: &T) -> Result<()> {
    let path = dir.join("manifest.json");
    let mut w = BufWriter::new(File::create(&path)?);
    serde_json::to_writer_pretty(&mut w, manifest)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

/// Generate a synthetic multilingual benchmark (corpus, parallel queries,
/// qrels), optionally split into train/dev/test.
#[derive(Debug, Clone, Args, Serialize)]
pub struct SynthArgs {
    /// Number of query/document languages.
    #[arg(long, default_value_t = 4)]
    pub langs: usize,
    /// Number of distinct query ids.
    #[arg(long, default_value_t = 50)]
    pub queries: usize,
    /// Relevant documents generated per query id.
    #[arg(long, default_value_t = 4)]
    pub docs_per_query: usize,
    /// Vocabulary size per language.
    #[arg(long, default_value_t = 100)]
    pub vocab_size: usize,
    /// Fraction of each language's vocabulary shared across languages.
    #[arg(long, value_parser = parse_fraction, default_value_t = 0.3)]
    pub overlap: f64,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Optional train/dev/test ratios, e.g. "0.8,0.1,0.1".
    #[arg(long)]
    pub split: Option<String>,
    /// Seed for the split shuffle (defaults to --seed).
    #[arg(long)]
    pub split_seed: Option<u64>,
    #[arg(short, long)]
    pub out: PathBuf,
    /// Overwrite an existing output directory.
    #[arg(long, default_value_t = false)]
    pub force: bool,
}

#[derive(Serialize)]
struct SynthManifest<'a> {
    command: &'static str,
    args: &'a SynthArgs,
    documents: usize,
    query_ids: usize,
    languages: usize,
    judgments: usize,
    partitions: Option<Vec<PartCounts>>,
}

#[derive(Serialize)]
struct PartCounts {
    name: &'static str,
    documents: usize,
    query_ids: usize,
    judgments: usize,
}

fn write_triple(dir: &Path, corpus: &Corpus, queries: &rankparity_core::corpus::ParallelQuerySet, qrels: &Qrels) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    save_corpus(dir.join("corpus.jsonl"), corpus)?;
    save_queries(dir.join("queries.tsv"), queries)?;
    save_qrels(dir.join("qrels.txt"), qrels)?;
    Ok(())
}

pub fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        num_languages: args.langs,
        num_queries: args.queries,
        docs_per_query: args.docs_per_query,
        vocab_size: args.vocab_size,
        lexical_overlap: args.overlap,
        seed: args.seed,
    };
    let (corpus, queries, qrels) = generate_synthetic(&cfg)?;
    prepare_out_dir(&args.out, args.force)?;

    let partitions = match &args.split {
        None => {
            write_triple(&args.out, &corpus, &queries, &qrels)?;
            None
        }
        Some(spec) => {
            let parts: Vec<f64> = spec
                .split(',')
                .map(|p| p.trim().parse::<f64>().map_err(|_| anyhow!("bad ratio {p:?}")))
                .collect::<Result<_>>()?;
            let [r0, r1, r2]: [f64; 3] = parts
                .try_into()
                .map_err(|_| anyhow!("--split needs exactly 3 comma-separated ratios"))?;
            let seed = args.split_seed.unwrap_or(args.seed);
            let [train, dev, test] = split(&corpus, &queries, &qrels, (r0, r1, r2), seed)?;
            let mut counts = Vec::new();
            for (name, part) in [("train", &train), ("dev", &dev), ("test", &test)] {
                write_triple(&args.out.join(name), &part.0, &part.1, &part.2)?;
                counts.push(PartCounts {
                    name,
                    documents: part.0.len(),
                    query_ids: part.1.num_queries(),
                    judgments: part.2.len(),
                });
            }
            Some(counts)
        }
    };

    write_manifest(
        &args.out,
        &SynthManifest {
            command: "synth",
            args,
            documents: corpus.len(),
            query_ids: queries.num_queries(),
            languages: queries.num_languages(),
            judgments: qrels.len(),
            partitions,
        },
    )?;
    println!(
        "synth: {} documents, {} query ids x {} languages, {} judgments -> {}",
        corpus.len(),
        queries.num_queries(),
        queries.num_languages(),
        qrels.len(),
        args.out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// index
// ---------------------------------------------------------------------------

/// Build and persist a BM25 inverted index.
#[derive(Debug, Clone, Args, Serialize)]
pub struct IndexArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value_t = 0.9)]
    pub k1: f64,
    #[arg(long, value_parser = parse_fraction, default_value_t = 0.4)]
    pub b: f64,
    #[arg(short, long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = false)]
    pub force: bool,
}

#[derive(Serialize)]
struct IndexManifest<'a> {
    command: &'static str,
    args: &'a IndexArgs,
    documents: usize,
    terms: usize,
    avg_doc_len: f64,
}

pub fn cmd_index(args: &IndexArgs) -> Result<()> {
    let corpus = load_corpus(&args.corpus)
        .with_context(|| format!("loading corpus {}", args.corpus.display()))?;
    let index = build_index(&corpus, BM25Params { k1: args.k1, b: args.b })?;
    prepare_out_dir(&args.out, args.force)?;
    save_index(args.out.join("index.bin"), &index)?;
    write_manifest(
        &args.out,
        &IndexManifest {
            command: "index",
            args,
            documents: index.num_docs(),
            terms: index.num_terms(),
            avg_doc_len: index.avg_doc_len(),
        },
    )?;
    println!(
        "index: {} documents, {} terms, avg length {} -> {}",
        index.num_docs(),
        index.num_terms(),
        index.avg_doc_len(),
        args.out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// search
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RankerKind {
    Bm25,
    Dense,
}

/// Run retrieval for every query and write one TREC run file per query
/// language.
#[derive(Debug, Clone, Args, Serialize)]
pub struct SearchArgs {
    #[arg(long, value_enum)]
    pub ranker: RankerKind,
    /// Index directory or index.bin file (BM25 ranker).
    #[arg(long)]
    pub index: Option<PathBuf>,
    /// Model checkpoint (dense ranker).
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Corpus to embed (dense ranker).
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub queries: PathBuf,
    /// Result list cutoff.
    #[arg(long, default_value_t = 100)]
    pub k: usize,
    /// Run tag (defaults to the ranker name).
    #[arg(long)]
    pub tag: Option<String>,
    #[arg(short, long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = false)]
    pub force: bool,
}

#[derive(Serialize)]
struct SearchManifest<'a> {
    command: &'static str,
    args: &'a SearchArgs,
    lists: usize,
    languages: usize,
    files: Vec<String>,
}

pub fn cmd_search(args: &SearchArgs) -> Result<()> {
    let queries = load_queries(&args.queries)
        .with_context(|| format!("loading queries {}", args.queries.display()))?;
    let tag = args.tag.clone().unwrap_or_else(|| {
        match args.ranker {
            RankerKind::Bm25 => "bm25",
            RankerKind::Dense => "dense",
        }
        .to_string()
    });

    let mut run = Run::new(tag);
    match args.ranker {
        RankerKind::Bm25 => {
            let index_path = args
                .index
                .as_ref()
                .ok_or_else(|| anyhow!("--index is required with --ranker bm25"))?;
            let index_file = if index_path.is_dir() {
                index_path.join("index.bin")
            } else {
                index_path.clone()
            };
            let index = load_index(&index_file)
                .with_context(|| format!("loading index {}", index_file.display()))?;
            let lists: Vec<_> = queries.iter().collect();
            let results = run_parallel(&lists, |q| {
                rankparity_core::bm25::search(&index, q, args.k)
            })?;
            for list in results {
                run.insert(list)?;
            }
        }
        RankerKind::Dense => {
            let model_path = args
                .model
                .as_ref()
                .ok_or_else(|| anyhow!("--model is required with --ranker dense"))?;
            let corpus_path = args
                .corpus
                .as_ref()
                .ok_or_else(|| anyhow!("--corpus is required with --ranker dense"))?;
            let model = load_model(model_path)
                .with_context(|| format!("loading model {}", model_path.display()))?;
            let corpus = load_corpus(corpus_path)
                .with_context(|| format!("loading corpus {}", corpus_path.display()))?;
            let embeddings = embed_corpus(&model, &corpus);
            let lists: Vec<_> = queries.iter().collect();
            let results = run_parallel(&lists, |q| search_dense(&model, q, &embeddings, args.k))?;
            for list in results {
                run.insert(list)?;
            }
        }
    }

    prepare_out_dir(&args.out, args.force)?;
    let files = write_run_files(&run, &args.out)?;
    write_manifest(
        &args.out,
        &SearchManifest {
            command: "search",
            args,
            lists: run.len(),
            languages: run.languages().len(),
            files: files
                .iter()
                .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
                .collect(),
        },
    )?;
    println!(
        "search: {} lists over {} languages -> {}",
        run.len(),
        run.languages().len(),
        args.out.display()
    );
    Ok(())
}

/// Independent per-query retrieval; parallel under the ambient rayon pool,
/// with results in input order either way.
fn run_parallel<T: Sync, R: Send>(
    items: &[T],
    f: impl Fn(&T) -> rankparity_core::Result<R> + Sync + Send,
) -> Result<Vec<R>> {
    use rayon::prelude::*;
    let results: Vec<rankparity_core::Result<R>> = items.par_iter().map(f).collect();
    results
        .into_iter()
        .collect::<rankparity_core::Result<Vec<R>>>()
        .map_err(Into::into)
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// Retrieval loss only.
    Vanilla,
    /// Joint loss with the MSE alignment baseline.
    Mse,
    /// Joint loss with the KL-divergence alignment term.
    Lakda,
}

impl From<LossKind> for AlignLoss {
    fn from(kind: LossKind) -> Self {
        match kind {
            LossKind::Vanilla => AlignLoss::None,
            LossKind::Mse => AlignLoss::Mse,
            LossKind::Lakda => AlignLoss::Lakda,
        }
    }
}

/// Train the dense encoder and write a checkpoint plus a step-level CSV log.
#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long)]
    pub qrels: PathBuf,
    #[arg(long, value_enum, default_value_t = LossKind::Lakda)]
    pub loss: LossKind,
    /// Alignment weight in the joint loss.
    #[arg(long, value_parser = parse_fraction, default_value_t = 0.5)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1e-10)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 50.0)]
    pub learning_rate: f64,
    /// Explicit negatives sampled per query.
    #[arg(long, default_value_t = 0)]
    pub negatives: usize,
    /// Disable in-batch negatives.
    #[arg(long, default_value_t = false)]
    pub no_in_batch: bool,
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    #[arg(long, default_value_t = 4096)]
    pub hash_buckets: usize,
    #[arg(long, default_value_t = 0)]
    pub hash_seed: u64,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(short, long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = false)]
    pub force: bool,
}

#[derive(Serialize)]
struct TrainManifest<'a> {
    command: &'static str,
    args: &'a TrainArgs,
    steps: usize,
    final_loss_dpr: Option<f64>,
    final_loss_align: Option<f64>,
    final_loss_joint: Option<f64>,
    final_mean_parallel_cosine: Option<f64>,
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let corpus = load_corpus(&args.corpus)
        .with_context(|| format!("loading corpus {}", args.corpus.display()))?;
    let queries = load_queries(&args.queries)
        .with_context(|| format!("loading queries {}", args.queries.display()))?;
    let (qrels, warnings) = load_qrels(&args.qrels)
        .with_context(|| format!("loading qrels {}", args.qrels.display()))?;
    for w in warnings {
        log::warn!("{w}");
    }

    let cfg = LossConfig {
        alpha: args.alpha,
        epsilon: args.epsilon,
        negatives_per_query: args.negatives,
        use_in_batch_negatives: !args.no_in_batch,
        learning_rate: args.learning_rate,
        epochs: args.epochs,
        batch_size: args.batch_size,
        seed: args.seed,
        align: args.loss.into(),
    };
    let model = EncoderModel::random(args.dim, args.hash_buckets, args.hash_seed, args.seed);
    let (trained, log) = train(&model, &corpus, &queries, &qrels, &cfg)?;

    prepare_out_dir(&args.out, args.force)?;
    save_model(args.out.join("model.bin"), &trained)?;
    let mut w = BufWriter::new(File::create(args.out.join("training_log.csv"))?);
    log.write_csv(&mut w)?;
    w.flush()?;

    let last = log.steps.last();
    write_manifest(
        &args.out,
        &TrainManifest {
            command: "train",
            args,
            steps: log.steps.len(),
            final_loss_dpr: last.map(|s| s.loss_dpr),
            final_loss_align: last.map(|s| s.loss_align),
            final_loss_joint: last.map(|s| s.loss_joint),
            final_mean_parallel_cosine: last.map(|s| s.mean_parallel_cosine),
        },
    )?;
    if let Some(s) = last {
        println!(
            "train[{}]: {} steps, final loss_dpr={} loss_align={} loss_joint={} mean_parallel_cosine={}",
            cfg.align, log.steps.len(), s.loss_dpr, s.loss_align, s.loss_joint, s.mean_parallel_cosine
        );
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

/// Evaluate run files: per-language MRR/Recall/MRC plus the fairness
/// matrices.
#[derive(Debug, Clone, Args, Serialize)]
pub struct EvalArgs {
    /// Run files, or a directory containing *.run files.
    #[arg(long, num_args = 1.., required = true)]
    pub runs: Vec<PathBuf>,
    #[arg(long)]
    pub qrels: PathBuf,
    /// Corpus (resolves document languages for the language matrix).
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub k_mrr: usize,
    #[arg(long, default_value_t = 5)]
    pub k_mrc: usize,
    /// Tolerate run qids that have no judgments (they are skipped in
    /// MRR/Recall instead of failing).
    #[arg(long, default_value_t = false)]
    pub allow_partial: bool,
    #[arg(short, long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = false)]
    pub force: bool,
}

#[derive(Serialize)]
struct EvalManifest<'a> {
    command: &'static str,
    args: &'a EvalArgs,
    lists: usize,
    languages: usize,
    unjudged_qids_skipped: usize,
}

pub fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let run = if args.runs.len() == 1 && args.runs[0].is_dir() {
        read_run_dir(&args.runs[0])?
    } else {
        read_run_files(&args.runs)?
    };
    let (qrels, warnings) = load_qrels(&args.qrels)
        .with_context(|| format!("loading qrels {}", args.qrels.display()))?;
    for w in warnings {
        log::warn!("{w}");
    }
    let corpus = load_corpus(&args.corpus)
        .with_context(|| format!("loading corpus {}", args.corpus.display()))?;

    // Retrieval metrics only see judged qids; unjudged ones are an input
    // mismatch unless --allow-partial.
    let unjudged: BTreeSet<String> = run
        .qids()
        .into_iter()
        .filter(|qid| !qrels.has_qid(qid))
        .collect();
    if !unjudged.is_empty() && !args.allow_partial {
        bail!(
            "{} run qid(s) have no judgments (e.g. {:?}); pass --allow-partial to skip them",
            unjudged.len(),
            unjudged.iter().next().unwrap()
        );
    }
    let judged_run = run.filter(|l| !unjudged.contains(l.qid()));
    if judged_run.is_empty() {
        bail!("no judged queries in run");
    }

    let report = fairness_report(&run, args.k_mrc)?;
    let (mlangs, lang_matrix) = language_correlation_matrix(&run, &corpus, args.k_mrr)?;

    // Emission-time sanity: symmetry and row stochasticity.
    for i in 0..report.languages.len() {
        for j in 0..report.languages.len() {
            let (a, b) = (report.matrix[i][j], report.matrix[j][i]);
            if let (Some(a), Some(b)) = (a, b) {
                if (a - b).abs() > 1e-12 {
                    bail!("mrc matrix asymmetry at ({i}, {j}): {a} vs {b}");
                }
            }
        }
    }
    for (i, row) in lang_matrix.iter().enumerate() {
        let sum: f64 = row.iter().sum();
        if sum != 0.0 && (sum - 1.0).abs() > 1e-12 {
            bail!("language matrix row {} sums to {sum}", mlangs[i]);
        }
    }

    // Per-language rows over the judged sub-run.
    let mut rows = Vec::new();
    for lang in run.languages() {
        let sub = judged_run.filter(|l| l.qlang() == &lang);
        let (mrr, recall) = if sub.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            (mrr_at_k(&sub, &qrels, args.k_mrr)?, recall_at_k(&sub, &qrels, args.k_mrr))
        };
        rows.push((lang.clone(), mrr, recall, report.mrc.get(&lang).copied()));
    }

    prepare_out_dir(&args.out, args.force)?;
    let mut w = BufWriter::new(File::create(args.out.join("metrics.csv"))?);
    write_per_language_csv(&mut w, &rows, 1.0)?;
    w.flush()?;
    let mut w = BufWriter::new(File::create(args.out.join("metrics_x100.csv"))?);
    write_per_language_csv(&mut w, &rows, 100.0)?;
    w.flush()?;
    let mut w = BufWriter::new(File::create(args.out.join("mrc_matrix.csv"))?);
    write_matrix_csv(&mut w, &report.languages, &report.matrix)?;
    w.flush()?;
    let mut w = BufWriter::new(File::create(args.out.join("language_matrix.csv"))?);
    let wrapped: Vec<Vec<Option<f64>>> = lang_matrix
        .iter()
        .map(|row| row.iter().map(|&v| Some(v)).collect())
        .collect();
    write_matrix_csv(&mut w, &mlangs, &wrapped)?;
    w.flush()?;
    let mut w = BufWriter::new(File::create(args.out.join("per_query_rc.csv"))?);
    writeln!(w, "qid,lang,rc")?;
    for ((qid, lang), rc) in &report.per_query_rc {
        writeln!(w, "{qid},{lang},{rc}")?;
    }
    w.flush()?;

    write_manifest(
        &args.out,
        &EvalManifest {
            command: "eval",
            args,
            lists: run.len(),
            languages: run.languages().len(),
            unjudged_qids_skipped: unjudged.len(),
        },
    )?;
    println!(
        "eval: {} lists, {} languages -> {}",
        run.len(),
        run.languages().len(),
        args.out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

/// Bundle eval outputs and training telemetry into one plot-ready directory
/// of CSVs.
#[derive(Debug, Clone, Args, Serialize)]
pub struct ReportArgs {
    /// An eval output directory.
    #[arg(long)]
    pub eval: PathBuf,
    /// Training log CSVs to compare (repeatable).
    #[arg(long = "train-log", num_args = 0..)]
    pub train_logs: Vec<PathBuf>,
    #[arg(short, long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = false)]
    pub force: bool,
}

#[derive(Serialize)]
struct ReportManifest<'a> {
    command: &'static str,
    args: &'a ReportArgs,
    copied: Vec<String>,
    similarity_curves: Option<String>,
}

pub fn cmd_report(args: &ReportArgs) -> Result<()> {
    const EVAL_FILES: [&str; 5] = [
        "metrics.csv",
        "metrics_x100.csv",
        "mrc_matrix.csv",
        "language_matrix.csv",
        "per_query_rc.csv",
    ];
    let mut missing: Vec<String> = EVAL_FILES
        .iter()
        .map(|f| args.eval.join(f))
        .filter(|p| !p.exists())
        .map(|p| p.display().to_string())
        .collect();
    missing.extend(
        args.train_logs
            .iter()
            .filter(|p| !p.exists())
            .map(|p| p.display().to_string()),
    );
    if !missing.is_empty() {
        bail!("missing inputs: {}", missing.join(", "));
    }

    prepare_out_dir(&args.out, args.force)?;
    let mut copied = Vec::new();
    for name in EVAL_FILES {
        std::fs::copy(args.eval.join(name), args.out.join(name))?;
        copied.push(name.to_string());
    }

    let similarity_curves = if args.train_logs.is_empty() {
        None
    } else {
        let mut curves: Vec<(String, Vec<String>)> = Vec::new();
        for path in &args.train_logs {
            let stem = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "log".into());
            let label = if stem == "training_log" {
                // training_log.csv inside a train output dir: label by dir.
                path.parent()
                    .and_then(|p| p.file_name())
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or(stem)
            } else {
                stem
            };
            let text = std::fs::read_to_string(path)?;
            let mut values = Vec::new();
            for (i, line) in text.lines().enumerate() {
                if i == 0 {
                    if !line.starts_with("step,") {
                        bail!("{}: not a training log CSV", path.display());
                    }
                    continue;
                }
                let cos = line
                    .rsplit(',')
                    .next()
                    .ok_or_else(|| anyhow!("{}: malformed line {}", path.display(), i + 1))?;
                values.push(cos.to_string());
            }
            curves.push((label, values));
        }
        let name = "parallel_similarity.csv";
        let mut w = BufWriter::new(File::create(args.out.join(name))?);
        write!(w, "step")?;
        for (label, _) in &curves {
            write!(w, ",{label}")?;
        }
        writeln!(w)?;
        let rows = curves.iter().map(|(_, v)| v.len()).max().unwrap_or(0);
        for i in 0..rows {
            write!(w, "{i}")?;
            for (_, values) in &curves {
                match values.get(i) {
                    Some(v) => write!(w, ",{v}")?,
                    None => write!(w, ",")?,
                }
            }
            writeln!(w)?;
        }
        w.flush()?;
        Some(name.to_string())
    };

    write_manifest(
        &args.out,
        &ReportManifest {
            command: "report",
            args,
            copied,
            similarity_curves,
        },
    )?;
    println!("report: bundle -> {}", args.out.display());
    Ok(())
}
