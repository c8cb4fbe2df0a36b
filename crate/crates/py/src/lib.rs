//! Python bindings: the corpus model, BM25 and dense retrieval, the
//! training losses, and the fairness metrics, driven from Python
//! in-process.
//!
//! Usage from Python:
//!
//!     import rankparity as rp
//!     corpus, queries, qrels = rp.generate_synthetic(langs=4, queries=50)
//!     index = rp.Bm25Index.build(corpus)
//!     run = rp.Run("bm25")
//!     for qid, lang, text in queries.items():
//!         run.add_list(qid, lang, index.search(qid, lang, text, k=100))
//!     print(rp.mrc_at_k(run, 5))

use std::collections::BTreeMap;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use rankparity_core::corpus as core_corpus;
use rankparity_core::corpus::{Document, LanguageCode, Query, SynthConfig};
use rankparity_core::dense::{self, EncoderModel};
use rankparity_core::losses::{self, AlignLoss, LossConfig};
use rankparity_core::metrics;
use rankparity_core::trec;
use rankparity_core::Error;

fn to_py_err(e: Error) -> PyErr {
    match e {
        Error::Io(io) => PyIOError::new_err(io.to_string()),
        Error::UndefinedCorrelation(msg) => PyValueError::new_err(format!("undefined correlation: {msg}")),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn parse_lang(code: &str) -> PyResult<LanguageCode> {
    LanguageCode::new(code).map_err(to_py_err)
}

/// Immutable multilingual document collection.
#[pyclass(name = "Corpus")]
struct PyCorpus {
    inner: core_corpus::Corpus,
}

#[pymethods]
impl PyCorpus {
    #[new]
    fn new() -> Self {
        PyCorpus {
            inner: core_corpus::Corpus::new(),
        }
    }

    fn add(&mut self, id: &str, lang: &str, text: &str) -> PyResult<()> {
        self.inner
            .push(Document::new(id, parse_lang(lang)?, text))
            .map_err(to_py_err)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyCorpus {
            inner: core_corpus::load_corpus(path).map_err(to_py_err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        core_corpus::save_corpus(path, &self.inner).map_err(to_py_err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn languages(&self) -> Vec<String> {
        self.inner.languages().iter().map(|l| l.to_string()).collect()
    }

    fn doc_lang(&self, id: &str) -> Option<String> {
        self.inner.get(id).map(|d| d.lang.to_string())
    }

    fn doc_text(&self, id: &str) -> Option<String> {
        self.inner.get(id).map(|d| d.text.clone())
    }

    fn doc_ids(&self) -> Vec<String> {
        self.inner.iter().map(|d| d.id.clone()).collect()
    }
}

/// Parallel queries grouped by query id.
#[pyclass(name = "QuerySet")]
struct PyQuerySet {
    inner: core_corpus::ParallelQuerySet,
}

#[pymethods]
impl PyQuerySet {
    #[new]
    fn new() -> Self {
        PyQuerySet {
            inner: core_corpus::ParallelQuerySet::new(),
        }
    }

    fn add(&mut self, qid: &str, lang: &str, text: &str) -> PyResult<()> {
        self.inner
            .push(Query::new(qid, parse_lang(lang)?, text))
            .map_err(to_py_err)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyQuerySet {
            inner: core_corpus::load_queries(path).map_err(to_py_err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        core_corpus::save_queries(path, &self.inner).map_err(to_py_err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn num_queries(&self) -> usize {
        self.inner.num_queries()
    }

    fn num_languages(&self) -> usize {
        self.inner.num_languages()
    }

    fn languages(&self) -> Vec<String> {
        self.inner.languages().iter().map(|l| l.to_string()).collect()
    }

    fn qids(&self) -> Vec<String> {
        self.inner.qids()
    }

    /// All (qid, lang, text) rows.
    fn items(&self) -> Vec<(String, String, String)> {
        self.inner
            .iter()
            .map(|q| (q.qid.clone(), q.lang.to_string(), q.text.clone()))
            .collect()
    }

    fn text(&self, qid: &str, lang: &str) -> PyResult<Option<String>> {
        Ok(self
            .inner
            .get(qid, &parse_lang(lang)?)
            .map(|q| q.text.clone()))
    }

    /// Check the qid x language grid: returns (complete, missing cells).
    fn validate(&self) -> (bool, Vec<(String, String)>) {
        let report = core_corpus::validate_parallel(&self.inner);
        (
            report.complete,
            report
                .missing
                .into_iter()
                .map(|(q, l)| (q, l.to_string()))
                .collect(),
        )
    }
}

/// Relevance judgments.
#[pyclass(name = "Qrels")]
struct PyQrels {
    inner: core_corpus::Qrels,
}

#[pymethods]
impl PyQrels {
    #[new]
    fn new() -> Self {
        PyQrels {
            inner: core_corpus::Qrels::new(),
        }
    }

    fn set(&mut self, qid: &str, docid: &str, grade: u32) {
        self.inner.set(qid, docid, grade);
    }

    /// Load a TREC qrels file; returns (qrels, warnings).
    #[staticmethod]
    fn load(path: &str) -> PyResult<(Self, Vec<String>)> {
        let (inner, warnings) = core_corpus::load_qrels(path).map_err(to_py_err)?;
        Ok((PyQrels { inner }, warnings))
    }

    fn save(&self, path: &str) -> PyResult<()> {
        core_corpus::save_qrels(path, &self.inner).map_err(to_py_err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn grade(&self, qid: &str, docid: &str) -> Option<u32> {
        self.inner.grade(qid, docid)
    }

    fn is_relevant(&self, qid: &str, docid: &str) -> bool {
        self.inner.is_relevant(qid, docid)
    }

    fn relevant_docs(&self, qid: &str) -> Vec<String> {
        self.inner
            .relevant_docs(qid)
            .into_iter()
            .map(String::from)
            .collect()
    }
}

/// Generate the deterministic synthetic benchmark.
#[pyfunction]
#[pyo3(signature = (langs=4, queries=50, docs_per_query=4, vocab_size=100, overlap=0.3, seed=7))]
fn generate_synthetic(
    langs: usize,
    queries: usize,
    docs_per_query: usize,
    vocab_size: usize,
    overlap: f64,
    seed: u64,
) -> PyResult<(PyCorpus, PyQuerySet, PyQrels)> {
    let cfg = SynthConfig {
        num_languages: langs,
        num_queries: queries,
        docs_per_query,
        vocab_size,
        lexical_overlap: overlap,
        seed,
    };
    let (corpus, qs, qrels) = core_corpus::generate_synthetic(&cfg).map_err(to_py_err)?;
    Ok((
        PyCorpus { inner: corpus },
        PyQuerySet { inner: qs },
        PyQrels { inner: qrels },
    ))
}

/// Split by qid into train/dev/test triples.
#[pyfunction]
#[pyo3(signature = (corpus, queries, qrels, ratios=(0.8, 0.1, 0.1), seed=7))]
fn split_collection(
    corpus: &PyCorpus,
    queries: &PyQuerySet,
    qrels: &PyQrels,
    ratios: (f64, f64, f64),
    seed: u64,
) -> PyResult<Vec<(PyCorpus, PyQuerySet, PyQrels)>> {
    let parts = core_corpus::split(&corpus.inner, &queries.inner, &qrels.inner, ratios, seed)
        .map_err(to_py_err)?;
    Ok(parts
        .into_iter()
        .map(|(c, q, r)| {
            (
                PyCorpus { inner: c },
                PyQuerySet { inner: q },
                PyQrels { inner: r },
            )
        })
        .collect())
}

/// Unicode word segmentation + NFC + lowercasing.
#[pyfunction]
fn tokenize(text: &str, lang: &str) -> PyResult<Vec<String>> {
    Ok(rankparity_core::bm25::tokenize(text, &parse_lang(lang)?)
        .tokens()
        .to_vec())
}

/// BM25 inverted index.
#[pyclass(name = "Bm25Index")]
struct PyBm25Index {
    inner: rankparity_core::bm25::InvertedIndex,
}

#[pymethods]
impl PyBm25Index {
    #[staticmethod]
    #[pyo3(signature = (corpus, k1=0.9, b=0.4))]
    fn build(corpus: &PyCorpus, k1: f64, b: f64) -> PyResult<Self> {
        let index = rankparity_core::bm25::build_index(
            &corpus.inner,
            rankparity_core::bm25::BM25Params { k1, b },
        )
        .map_err(to_py_err)?;
        Ok(PyBm25Index { inner: index })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyBm25Index {
            inner: rankparity_core::bm25::load_index(path).map_err(to_py_err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        rankparity_core::bm25::save_index(path, &self.inner).map_err(to_py_err)
    }

    fn num_docs(&self) -> usize {
        self.inner.num_docs()
    }

    fn avg_doc_len(&self) -> f64 {
        self.inner.avg_doc_len()
    }

    /// Score one document for a query string.
    fn score(&self, query_text: &str, lang: &str, docid: &str) -> PyResult<f64> {
        let tokens = rankparity_core::bm25::tokenize(query_text, &parse_lang(lang)?);
        rankparity_core::bm25::bm25_score(&self.inner, &tokens, docid).map_err(to_py_err)
    }

    /// Top-k retrieval; returns (docid, score) pairs.
    #[pyo3(signature = (qid, lang, text, k=100))]
    fn search(&self, qid: &str, lang: &str, text: &str, k: usize) -> PyResult<Vec<(String, f64)>> {
        let query = Query::new(qid, parse_lang(lang)?, text);
        let list = rankparity_core::bm25::search(&self.inner, &query, k).map_err(to_py_err)?;
        Ok(list.entries().to_vec())
    }
}

/// Trainable hashed character n-gram encoder.
#[pyclass(name = "Encoder")]
struct PyEncoder {
    inner: EncoderModel,
}

#[pymethods]
impl PyEncoder {
    /// Gaussian random initialization, deterministic in `seed`.
    #[staticmethod]
    #[pyo3(signature = (dim=64, hash_buckets=4096, hash_seed=0, seed=7))]
    fn random(dim: usize, hash_buckets: usize, hash_seed: u64, seed: u64) -> Self {
        PyEncoder {
            inner: EncoderModel::random(dim, hash_buckets, hash_seed, seed),
        }
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyEncoder {
            inner: dense::load_model(path).map_err(to_py_err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        dense::save_model(path, &self.inner).map_err(to_py_err)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn hash_buckets(&self) -> usize {
        self.inner.hash_buckets()
    }

    fn encode(&self, text: &str, lang: &str) -> PyResult<Vec<f64>> {
        Ok(self.inner.encode(text, &parse_lang(lang)?))
    }

    /// Sparse L1-normalized features as (bucket, weight) pairs.
    fn featurize(&self, text: &str, lang: &str) -> PyResult<Vec<(u32, f64)>> {
        Ok(self.inner.featurize(text, &parse_lang(lang)?).iter().collect())
    }
}

/// Dense document embeddings in corpus order.
#[pyclass(name = "Embeddings")]
struct PyEmbeddings {
    inner: dense::EmbeddingMatrix,
}

#[pymethods]
impl PyEmbeddings {
    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }
}

/// Embed every corpus document.
#[pyfunction]
fn embed_corpus(model: &PyEncoder, corpus: &PyCorpus) -> PyEmbeddings {
    PyEmbeddings {
        inner: dense::embed_corpus(&model.inner, &corpus.inner),
    }
}

/// Exhaustive dense top-k; returns (docid, score) pairs.
#[pyfunction]
#[pyo3(signature = (model, embeddings, qid, lang, text, k=100))]
fn search_dense(
    model: &PyEncoder,
    embeddings: &PyEmbeddings,
    qid: &str,
    lang: &str,
    text: &str,
    k: usize,
) -> PyResult<Vec<(String, f64)>> {
    let query = Query::new(qid, parse_lang(lang)?, text);
    let list =
        dense::search_dense(&model.inner, &query, &embeddings.inner, k).map_err(to_py_err)?;
    Ok(list.entries().to_vec())
}

/// A family of ranked lists keyed by (qid, query language).
#[pyclass(name = "Run")]
struct PyRun {
    inner: metrics::Run,
}

#[pymethods]
impl PyRun {
    #[new]
    #[pyo3(signature = (tag="run"))]
    fn new(tag: &str) -> Self {
        PyRun {
            inner: metrics::Run::new(tag),
        }
    }

    /// Insert one ranked list of (docid, score) pairs, scores non-increasing.
    fn add_list(&mut self, qid: &str, lang: &str, entries: Vec<(String, f64)>) -> PyResult<()> {
        let list = metrics::RankedList::new(qid.to_string(), parse_lang(lang)?, entries)
            .map_err(to_py_err)?;
        self.inner.insert(list).map_err(to_py_err)
    }

    #[getter]
    fn tag(&self) -> String {
        self.inner.tag().to_string()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn languages(&self) -> Vec<String> {
        self.inner.languages().iter().map(|l| l.to_string()).collect()
    }

    fn qids(&self) -> Vec<String> {
        self.inner.qids()
    }

    /// Write one TREC run file per query language; returns the paths.
    fn save(&self, dir: &str) -> PyResult<Vec<String>> {
        let paths = trec::write_run_files(&self.inner, dir).map_err(to_py_err)?;
        Ok(paths.iter().map(|p| p.display().to_string()).collect())
    }

    /// Read every *.run file in a directory.
    #[staticmethod]
    fn load_dir(dir: &str) -> PyResult<Self> {
        Ok(PyRun {
            inner: trec::read_run_dir(dir).map_err(to_py_err)?,
        })
    }
}

/// Tie-robust Spearman rank correlation.
#[pyfunction]
fn spearman(x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
    metrics::spearman(&x, &y).map_err(to_py_err)
}

/// KL divergence sum(p_b * log(p_b / (p_a + epsilon))).
#[pyfunction]
#[pyo3(signature = (p_b, p_a, epsilon=1e-10))]
fn kl_divergence(p_b: Vec<f64>, p_a: Vec<f64>, epsilon: f64) -> PyResult<f64> {
    losses::kl_divergence(&p_b, &p_a, epsilon).map_err(to_py_err)
}

/// Numerically stable softmax.
#[pyfunction]
fn softmax(scores: Vec<f64>) -> PyResult<Vec<f64>> {
    losses::softmax(&scores).map_err(to_py_err)
}

/// Rank correlation between two top-k docid lists (union pairing, absent
/// rank k+1, tie-corrected Spearman).
#[pyfunction]
fn rank_correlation(a: Vec<String>, b: Vec<String>, k: usize) -> PyResult<f64> {
    let as_list = |docs: &[String], l: &str| {
        let entries = docs
            .iter()
            .enumerate()
            .map(|(i, d)| (d.clone(), (docs.len() - i) as f64))
            .collect();
        metrics::RankedList::new("q".into(), LanguageCode::new(l).unwrap(), entries)
    };
    let list_a = as_list(&a, "aa").map_err(to_py_err)?;
    let list_b = as_list(&b, "ab").map_err(to_py_err)?;
    metrics::rank_correlation_at_k(&list_a, &list_b, k).map_err(to_py_err)
}

/// Mean reciprocal rank at cutoff k over all lists in the run.
#[pyfunction]
fn mrr_at_k(run: &PyRun, qrels: &PyQrels, k: usize) -> PyResult<f64> {
    metrics::mrr_at_k(&run.inner, &qrels.inner, k).map_err(to_py_err)
}

/// Mean recall at cutoff k (queries without relevant docs are skipped).
#[pyfunction]
fn recall_at_k(run: &PyRun, qrels: &PyQrels, k: usize) -> f64 {
    metrics::recall_at_k(&run.inner, &qrels.inner, k)
}

/// Per-language mean rank correlation, raw in [-1, 1].
#[pyfunction]
fn mrc_at_k(run: &PyRun, k: usize) -> PyResult<BTreeMap<String, f64>> {
    Ok(metrics::mrc_at_k(&run.inner, k)
        .map_err(to_py_err)?
        .into_iter()
        .map(|(l, v)| (l.to_string(), v))
        .collect())
}

/// Language-pair matrix: (languages, rows); undefined cells are None.
#[pyfunction]
fn mrc_matrix(run: &PyRun, k: usize) -> PyResult<(Vec<String>, Vec<Vec<Option<f64>>>)> {
    let (langs, matrix) = metrics::mrc_matrix(&run.inner, k).map_err(to_py_err)?;
    Ok((langs.iter().map(|l| l.to_string()).collect(), matrix))
}

/// Query-language x document-language fractions over the top-k results.
#[pyfunction]
fn language_correlation_matrix(
    run: &PyRun,
    corpus: &PyCorpus,
    k: usize,
) -> PyResult<(Vec<String>, Vec<Vec<f64>>)> {
    let (langs, matrix) =
        metrics::language_correlation_matrix(&run.inner, &corpus.inner, k).map_err(to_py_err)?;
    Ok((langs.iter().map(|l| l.to_string()).collect(), matrix))
}

/// Train the encoder; returns (trained encoder, log rows), each row being
/// (step, epoch, loss_dpr, loss_align, loss_joint, mean_parallel_cosine).
#[pyfunction]
#[pyo3(signature = (
    model, corpus, queries, qrels, loss="lakda", alpha=0.5, epsilon=1e-10,
    negatives=0, in_batch_negatives=true, learning_rate=50.0, epochs=200,
    batch_size=16, seed=7
))]
#[allow(clippy::too_many_arguments)]
fn train(
    model: &PyEncoder,
    corpus: &PyCorpus,
    queries: &PyQuerySet,
    qrels: &PyQrels,
    loss: &str,
    alpha: f64,
    epsilon: f64,
    negatives: usize,
    in_batch_negatives: bool,
    learning_rate: f64,
    epochs: usize,
    batch_size: usize,
    seed: u64,
) -> PyResult<(PyEncoder, Vec<(usize, usize, f64, f64, f64, f64)>)> {
    let align = match loss {
        "vanilla" => AlignLoss::None,
        "mse" => AlignLoss::Mse,
        "lakda" => AlignLoss::Lakda,
        other => {
            return Err(PyValueError::new_err(format!(
                "loss must be vanilla, mse, or lakda; got {other:?}"
            )))
        }
    };
    let cfg = LossConfig {
        alpha,
        epsilon,
        negatives_per_query: negatives,
        use_in_batch_negatives: in_batch_negatives,
        learning_rate,
        epochs,
        batch_size,
        seed,
        align,
    };
    let (trained, log) = losses::train(
        &model.inner,
        &corpus.inner,
        &queries.inner,
        &qrels.inner,
        &cfg,
    )
    .map_err(to_py_err)?;
    let rows = log
        .steps
        .iter()
        .map(|s| {
            (
                s.step,
                s.epoch,
                s.loss_dpr,
                s.loss_align,
                s.loss_joint,
                s.mean_parallel_cosine,
            )
        })
        .collect();
    Ok((PyEncoder { inner: trained }, rows))
}

#[pymodule]
fn rankparity(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyCorpus>()?;
    m.add_class::<PyQuerySet>()?;
    m.add_class::<PyQrels>()?;
    m.add_class::<PyBm25Index>()?;
    m.add_class::<PyEncoder>()?;
    m.add_class::<PyEmbeddings>()?;
    m.add_class::<PyRun>()?;
    m.add_function(wrap_pyfunction!(generate_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(split_collection, m)?)?;
    m.add_function(wrap_pyfunction!(tokenize, m)?)?;
    m.add_function(wrap_pyfunction!(embed_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(search_dense, m)?)?;
    m.add_function(wrap_pyfunction!(spearman, m)?)?;
    m.add_function(wrap_pyfunction!(kl_divergence, m)?)?;
    m.add_function(wrap_pyfunction!(softmax, m)?)?;
    m.add_function(wrap_pyfunction!(rank_correlation, m)?)?;
    m.add_function(wrap_pyfunction!(mrr_at_k, m)?)?;
    m.add_function(wrap_pyfunction!(recall_at_k, m)?)?;
    m.add_function(wrap_pyfunction!(mrc_at_k, m)?)?;
    m.add_function(wrap_pyfunction!(mrc_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(language_correlation_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    Ok(())
}
