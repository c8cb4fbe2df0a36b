//! Data model and ingestion for multilingual retrieval collections.
//!
//! Owns the document corpus, parallel query sets, relevance judgments,
//! deterministic train/dev/test splitting, and a synthetic benchmark
//! generator with controllable cross-language lexical overlap.
//!
//! File formats:
//! - corpus: JSON lines, one object per line
//!   `{"id": "...", "lang": "..", "text": "...", "meta": {...}}` (meta optional)
//! - queries: TSV `qid<TAB>lang<TAB>text`, UTF-8, no header
//! - qrels: TREC format `qid 0 docid rel`, whitespace separated

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Language family tags for the languages this toolkit knows about.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum LanguageFamily {
    Germanic,
    Romance,
    Slavic,
    Uralic,
    Baltic,
    Hellenic,
    Semitic,
    Celtic,
}

impl fmt::Display for LanguageFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

/// The 24 EU parliamentary languages grouped by family. The synthetic
/// generator draws language codes from this list in order, and
/// [`LanguageCode::new`] uses it to tag known codes with their family.
pub const KNOWN_LANGUAGES: &[(&str, LanguageFamily)] = &[
    ("en", LanguageFamily::Germanic),
    ("de", LanguageFamily::Germanic),
    ("nl", LanguageFamily::Germanic),
    ("sv", LanguageFamily::Germanic),
    ("da", LanguageFamily::Germanic),
    ("fr", LanguageFamily::Romance),
    ("es", LanguageFamily::Romance),
    ("ro", LanguageFamily::Romance),
    ("it", LanguageFamily::Romance),
    ("pt", LanguageFamily::Romance),
    ("pl", LanguageFamily::Slavic),
    ("hr", LanguageFamily::Slavic),
    ("bg", LanguageFamily::Slavic),
    ("sk", LanguageFamily::Slavic),
    ("sl", LanguageFamily::Slavic),
    ("cs", LanguageFamily::Slavic),
    ("hu", LanguageFamily::Uralic),
    ("fi", LanguageFamily::Uralic),
    ("et", LanguageFamily::Uralic),
    ("lt", LanguageFamily::Baltic),
    ("lv", LanguageFamily::Baltic),
    ("el", LanguageFamily::Hellenic),
    ("mt", LanguageFamily::Semitic),
    ("ga", LanguageFamily::Celtic),
];

/// Two-letter lowercase ISO-639-1-shaped language code with an optional
/// family tag.
///
/// Identity (equality, ordering, hashing) is on the code alone; the family
/// is informational. Any `[a-z]{2}` code is accepted, not just the 24 known
/// ones.
#[derive(Debug, Clone)]
pub struct LanguageCode {
    code: [u8; 2],
    family: Option<LanguageFamily>,
}

impl LanguageCode {
    /// Parse and validate a code. Known codes get their family tag filled in.
    pub fn new(code: &str) -> Result<Self> {
        let bytes = code.as_bytes();
        if bytes.len() != 2 || !bytes.iter().all(|b| b.is_ascii_lowercase()) {
            return Err(Error::InvalidLanguageCode(code.to_string()));
        }
        let family = KNOWN_LANGUAGES
            .iter()
            .find(|(c, _)| *c == code)
            .map(|(_, f)| *f);
        Ok(LanguageCode {
            code: [bytes[0], bytes[1]],
            family,
        })
    }

    pub fn as_str(&self) -> &str {
        std::str::from_utf8(&self.code).expect("code is ASCII")
    }

    pub fn family(&self) -> Option<LanguageFamily> {
        self.family
    }

    /// Override the family tag (used by family-structured synthetic setups).
    pub fn with_family(mut self, family: LanguageFamily) -> Self {
        self.family = Some(family);
        self
    }
}

impl PartialEq for LanguageCode {
    fn eq(&self, other: &Self) -> bool {
        self.code == other.code
    }
}
impl Eq for LanguageCode {}
impl PartialOrd for LanguageCode {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for LanguageCode {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.code.cmp(&other.code)
    }
}
impl std::hash::Hash for LanguageCode {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.code.hash(state);
    }
}

impl fmt::Display for LanguageCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LanguageCode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        LanguageCode::new(s)
    }
}

impl Serialize for LanguageCode {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for LanguageCode {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        LanguageCode::new(&s).map_err(D::Error::custom)
    }
}

/// One document in a multilingual collection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub lang: LanguageCode,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<BTreeMap<String, String>>,
}

impl Document {
    pub fn new(id: impl Into<String>, lang: LanguageCode, text: impl Into<String>) -> Self {
        Document {
            id: id.into(),
            lang,
            text: text.into(),
            meta: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::InvalidConfig("document id must be nonempty".into()));
        }
        if self.text.is_empty() {
            return Err(Error::InvalidConfig(format!(
                "document {:?} has empty text",
                self.id
            )));
        }
        Ok(())
    }
}

/// One query surface form. Parallel queries share a qid across languages.
#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub qid: String,
    pub lang: LanguageCode,
    pub text: String,
}

impl Query {
    pub fn new(qid: impl Into<String>, lang: LanguageCode, text: impl Into<String>) -> Self {
        Query {
            qid: qid.into(),
            lang,
            text: text.into(),
        }
    }
}

/// Immutable, insertion-ordered document collection keyed by document id.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    docs: Vec<Document>,
    by_id: HashMap<String, usize>,
}

impl Corpus {
    pub fn new() -> Self {
        Self::default()
    }

    /// Append a document, rejecting duplicate ids and empty text.
    pub fn push(&mut self, doc: Document) -> Result<()> {
        doc.validate()?;
        if self.by_id.contains_key(&doc.id) {
            return Err(Error::InvalidConfig(format!(
                "duplicate document id {:?}",
                doc.id
            )));
        }
        self.by_id.insert(doc.id.clone(), self.docs.len());
        self.docs.push(doc);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&Document> {
        self.by_id.get(id).map(|&i| &self.docs[i])
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Document> {
        self.docs.iter()
    }

    pub fn docs(&self) -> &[Document] {
        &self.docs
    }

    /// Sorted set of languages present in the collection.
    pub fn languages(&self) -> Vec<LanguageCode> {
        let set: BTreeSet<LanguageCode> = self.docs.iter().map(|d| d.lang.clone()).collect();
        set.into_iter().collect()
    }
}

/// Queries grouped by qid with one surface form per language per qid.
#[derive(Debug, Clone, Default)]
pub struct ParallelQuerySet {
    queries: Vec<Query>,
    by_key: HashMap<(String, LanguageCode), usize>,
    languages: BTreeSet<LanguageCode>,
}

impl ParallelQuerySet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Append a query, rejecting duplicate (qid, lang) pairs and empty text.
    pub fn push(&mut self, query: Query) -> Result<()> {
        if query.text.is_empty() {
            return Err(Error::InvalidConfig(format!(
                "query ({}, {}) has empty text",
                query.qid, query.lang
            )));
        }
        let key = (query.qid.clone(), query.lang.clone());
        if self.by_key.contains_key(&key) {
            return Err(Error::InvalidConfig(format!(
                "duplicate query ({}, {})",
                query.qid, query.lang
            )));
        }
        self.languages.insert(query.lang.clone());
        self.by_key.insert(key, self.queries.len());
        self.queries.push(query);
        Ok(())
    }

    pub fn get(&self, qid: &str, lang: &LanguageCode) -> Option<&Query> {
        self.by_key
            .get(&(qid.to_string(), lang.clone()))
            .map(|&i| &self.queries[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = &Query> {
        self.queries.iter()
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    /// Sorted set of languages observed across all queries (L).
    pub fn languages(&self) -> Vec<LanguageCode> {
        self.languages.iter().cloned().collect()
    }

    /// Sorted distinct qids (N = count).
    pub fn qids(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.queries.iter().map(|q| q.qid.as_str()).collect();
        set.into_iter().map(String::from).collect()
    }

    pub fn num_queries(&self) -> usize {
        self.qids().len()
    }

    pub fn num_languages(&self) -> usize {
        self.languages.len()
    }

    /// Sorted languages available for one qid.
    pub fn languages_for_qid(&self, qid: &str) -> Vec<LanguageCode> {
        let mut langs: Vec<LanguageCode> = self
            .queries
            .iter()
            .filter(|q| q.qid == qid)
            .map(|q| q.lang.clone())
            .collect();
        langs.sort();
        langs
    }
}

/// Relevance judgments: (qid, docid) -> grade. A document is relevant iff
/// its grade is >= 1.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Qrels {
    judgments: BTreeMap<(String, String), u32>,
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    /// Insert or overwrite a judgment; returns the previous grade if any.
    pub fn set(&mut self, qid: &str, docid: &str, grade: u32) -> Option<u32> {
        self.judgments
            .insert((qid.to_string(), docid.to_string()), grade)
    }

    pub fn grade(&self, qid: &str, docid: &str) -> Option<u32> {
        self.judgments
            .get(&(qid.to_string(), docid.to_string()))
            .copied()
    }

    pub fn is_relevant(&self, qid: &str, docid: &str) -> bool {
        self.grade(qid, docid).is_some_and(|g| g >= 1)
    }

    /// Sorted docids relevant (grade >= 1) to a qid.
    pub fn relevant_docs(&self, qid: &str) -> Vec<&str> {
        self.judgments
            .range((qid.to_string(), String::new())..)
            .take_while(|((q, _), _)| q == qid)
            .filter(|(_, &g)| g >= 1)
            .map(|((_, d), _)| d.as_str())
            .collect()
    }

    /// Whether the qid has any judgment line at all (relevant or not).
    pub fn has_qid(&self, qid: &str) -> bool {
        self.judgments
            .range((qid.to_string(), String::new())..)
            .take_while(|((q, _), _)| q == qid)
            .next()
            .is_some()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, u32)> {
        self.judgments.iter().map(|((q, d), &g)| (q.as_str(), d.as_str(), g))
    }

    pub fn len(&self) -> usize {
        self.judgments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.judgments.is_empty()
    }
}

// ---------------------------------------------------------------------------
// Loading and writing
// ---------------------------------------------------------------------------

/// Load a corpus from a JSON-lines file. Blank lines are skipped; the file
/// order becomes the insertion order.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let file = File::open(path)?;
    read_corpus(BufReader::new(file), &path.display().to_string())
}

pub fn read_corpus<R: BufRead>(reader: R, path: &str) -> Result<Corpus> {
    let mut corpus = Corpus::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: Document = serde_json::from_str(&line)
            .map_err(|e| Error::parse(path, lineno, format!("malformed JSON: {e}")))?;
        doc.validate()
            .map_err(|e| Error::parse(path, lineno, e.to_string()))?;
        if corpus.get(&doc.id).is_some() {
            return Err(Error::parse(
                path,
                lineno,
                format!("duplicate document id {:?}", doc.id),
            ));
        }
        corpus.push(doc).map_err(|e| Error::parse(path, lineno, e.to_string()))?;
    }
    Ok(corpus)
}

/// Write a corpus as canonical JSON lines in insertion order.
pub fn write_corpus<W: Write>(mut w: W, corpus: &Corpus) -> Result<()> {
    for doc in corpus.iter() {
        serde_json::to_writer(&mut w, doc).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn save_corpus(path: impl AsRef<Path>, corpus: &Corpus) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_corpus(&mut w, corpus)?;
    w.flush()?;
    Ok(())
}

/// Load queries from a TSV file with lines `qid<TAB>lang<TAB>text`.
pub fn load_queries(path: impl AsRef<Path>) -> Result<ParallelQuerySet> {
    let path = path.as_ref();
    let file = File::open(path)?;
    read_queries(BufReader::new(file), &path.display().to_string())
}

pub fn read_queries<R: BufRead>(reader: R, path: &str) -> Result<ParallelQuerySet> {
    let mut set = ParallelQuerySet::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let mut cols = line.splitn(3, '\t');
        let (qid, lang, text) = match (cols.next(), cols.next(), cols.next()) {
            (Some(q), Some(l), Some(t)) => (q, l, t),
            _ => {
                return Err(Error::parse(
                    path,
                    lineno,
                    "expected 3 tab-separated columns: qid, lang, text",
                ))
            }
        };
        let lang = LanguageCode::new(lang).map_err(|e| Error::parse(path, lineno, e.to_string()))?;
        set.push(Query::new(qid, lang, text))
            .map_err(|e| Error::parse(path, lineno, e.to_string()))?;
    }
    Ok(set)
}

/// Write queries as canonical TSV sorted by (qid, lang).
pub fn write_queries<W: Write>(mut w: W, set: &ParallelQuerySet) -> Result<()> {
    let mut rows: Vec<&Query> = set.iter().collect();
    rows.sort_by(|a, b| a.qid.cmp(&b.qid).then_with(|| a.lang.cmp(&b.lang)));
    for q in rows {
        writeln!(w, "{}\t{}\t{}", q.qid, q.lang, q.text)?;
    }
    Ok(())
}

pub fn save_queries(path: impl AsRef<Path>, set: &ParallelQuerySet) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_queries(&mut w, set)?;
    w.flush()?;
    Ok(())
}

/// Load qrels from a TREC-format file (`qid 0 docid rel`). Later duplicate
/// (qid, docid) lines override earlier ones; each override produces a
/// warning string.
pub fn load_qrels(path: impl AsRef<Path>) -> Result<(Qrels, Vec<String>)> {
    let path = path.as_ref();
    let file = File::open(path)?;
    read_qrels(BufReader::new(file), &path.display().to_string())
}

pub fn read_qrels<R: BufRead>(reader: R, path: &str) -> Result<(Qrels, Vec<String>)> {
    let mut qrels = Qrels::new();
    let mut warnings = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() != 4 {
            return Err(Error::parse(
                path,
                lineno,
                format!("expected 4 whitespace-separated fields, got {}", cols.len()),
            ));
        }
        let rel: i64 = cols[3]
            .parse()
            .map_err(|_| Error::parse(path, lineno, format!("non-integer relevance {:?}", cols[3])))?;
        if rel < 0 {
            return Err(Error::parse(
                path,
                lineno,
                format!("negative relevance {rel}"),
            ));
        }
        if let Some(old) = qrels.set(cols[0], cols[2], rel as u32) {
            warnings.push(format!(
                "{path}:{lineno}: duplicate judgment ({}, {}): overriding grade {old} with {rel}",
                cols[0], cols[2]
            ));
        }
    }
    Ok((qrels, warnings))
}

/// Write qrels in canonical TREC form sorted by (qid, docid).
pub fn write_qrels<W: Write>(mut w: W, qrels: &Qrels) -> Result<()> {
    for (qid, docid, grade) in qrels.iter() {
        writeln!(w, "{qid} 0 {docid} {grade}")?;
    }
    Ok(())
}

pub fn save_qrels(path: impl AsRef<Path>, qrels: &Qrels) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_qrels(&mut w, qrels)?;
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Parallel-grid validation
// ---------------------------------------------------------------------------

/// Result of checking a query set against the full qid x language grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    /// True iff no cell of the grid is missing.
    pub complete: bool,
    /// Missing (qid, lang) cells, sorted.
    pub missing: Vec<(String, LanguageCode)>,
    /// Set when the query set was empty (vacuously complete).
    pub empty: bool,
}

/// List every (qid, lang) cell missing from the full qid x language grid.
pub fn validate_parallel(set: &ParallelQuerySet) -> ValidationReport {
    if set.is_empty() {
        return ValidationReport {
            complete: true,
            missing: Vec::new(),
            empty: true,
        };
    }
    let mut missing = Vec::new();
    for qid in set.qids() {
        for lang in set.languages() {
            if set.get(&qid, &lang).is_none() {
                missing.push((qid.clone(), lang));
            }
        }
    }
    ValidationReport {
        complete: missing.is_empty(),
        missing,
        empty: false,
    }
}

// ---------------------------------------------------------------------------
// Synthetic benchmark generation
// ---------------------------------------------------------------------------

/// Configuration for the synthetic multilingual benchmark generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub num_languages: usize,
    pub num_queries: usize,
    pub docs_per_query: usize,
    /// Vocabulary size per language.
    pub vocab_size: usize,
    /// Fraction of each language's vocabulary drawn from a shared
    /// cross-language vocabulary.
    pub lexical_overlap: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_languages: 4,
            num_queries: 50,
            docs_per_query: 4,
            vocab_size: 100,
            lexical_overlap: 0.3,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_languages < 2 {
            return Err(Error::InvalidConfig("num_languages must be >= 2".into()));
        }
        if self.num_queries < 1 || self.docs_per_query < 1 || self.vocab_size < 1 {
            return Err(Error::InvalidConfig(
                "num_queries, docs_per_query, and vocab_size must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.lexical_overlap) {
            return Err(Error::InvalidConfig(format!(
                "lexical_overlap must be in [0, 1], got {}",
                self.lexical_overlap
            )));
        }
        Ok(())
    }
}

/// Topic tokens per query.
const TOKENS_PER_TOPIC: usize = 8;
/// Noise tokens appended to every document.
const NOISE_PER_DOC: usize = 12;
/// How many of a topic's tokens a distractor document reuses.
const DISTRACTOR_TOPIC_TOKENS: usize = 4;

/// Language codes used by the generator: the 24 known languages first, then
/// remaining two-letter codes in lexicographic order. Returned sorted.
fn synth_languages(n: usize) -> Vec<LanguageCode> {
    let mut codes: Vec<LanguageCode> = KNOWN_LANGUAGES
        .iter()
        .take(n)
        .map(|(c, _)| LanguageCode::new(c).unwrap())
        .collect();
    if n > KNOWN_LANGUAGES.len() {
        let known: BTreeSet<&str> = KNOWN_LANGUAGES.iter().map(|(c, _)| *c).collect();
        'outer: for a in b'a'..=b'z' {
            for b in b'a'..=b'z' {
                if codes.len() >= n {
                    break 'outer;
                }
                let code = String::from_utf8(vec![a, b]).unwrap();
                if !known.contains(code.as_str()) {
                    codes.push(LanguageCode::new(&code).unwrap());
                }
            }
        }
    }
    codes.sort();
    codes
}

/// Generate a deterministic synthetic benchmark.
///
/// Each qid gets one topic (a set of abstract token ids) and one query per
/// language. An abstract id renders as a shared token `xx_t####` when it
/// falls in the shared fraction of the vocabulary, else as a language-private
/// token `{lang}_t####`. Relevant documents contain the full topic plus
/// noise; distractors reuse part of another topic. Qrels mark exactly the
/// relevant documents with grade 1.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<(Corpus, ParallelQuerySet, Qrels)> {
    cfg.validate()?;
    let languages = synth_languages(cfg.num_languages);
    let num_langs = languages.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let shared = ((cfg.lexical_overlap * cfg.vocab_size as f64).round() as usize).min(cfg.vocab_size);
    let render = |lang: &LanguageCode, id: usize| -> String {
        if id < shared {
            format!("xx_t{id:04}")
        } else {
            format!("{}_t{id:04}", lang.as_str())
        }
    };

    // One topic (distinct abstract ids) per qid.
    let tokens_per_topic = TOKENS_PER_TOPIC.min(cfg.vocab_size);
    let mut topics: Vec<Vec<usize>> = Vec::with_capacity(cfg.num_queries);
    for _ in 0..cfg.num_queries {
        let picked = rand::seq::index::sample(&mut rng, cfg.vocab_size, tokens_per_topic);
        topics.push(picked.into_vec());
    }

    let mut queries = ParallelQuerySet::new();
    for (i, topic) in topics.iter().enumerate() {
        let qid = format!("q{i:04}");
        for lang in &languages {
            let text: Vec<String> = topic.iter().map(|&t| render(lang, t)).collect();
            queries.push(Query::new(&qid, lang.clone(), text.join(" ")))?;
        }
    }

    let mut corpus = Corpus::new();
    let mut qrels = Qrels::new();
    for (i, topic) in topics.iter().enumerate() {
        let qid = format!("q{i:04}");
        for m in 0..cfg.docs_per_query {
            let lang = &languages[(i + m) % num_langs];
            let docid = format!("d{i:04}r{m}");
            let mut tokens: Vec<String> = topic.iter().map(|&t| render(lang, t)).collect();
            for _ in 0..NOISE_PER_DOC {
                tokens.push(render(lang, rng.random_range(0..cfg.vocab_size)));
            }
            tokens.shuffle(&mut rng);
            corpus.push(Document::new(&docid, lang.clone(), tokens.join(" ")))?;
            qrels.set(&qid, &docid, 1);
        }
    }

    // Distractors: one per relevant document, reusing part of a random topic.
    let reused = DISTRACTOR_TOPIC_TOKENS.min(tokens_per_topic);
    let n_distractors = cfg.num_queries * cfg.docs_per_query;
    for n in 0..n_distractors {
        let lang = &languages[n % num_langs];
        let topic = &topics[rng.random_range(0..topics.len())];
        let mut take = topic.clone();
        take.shuffle(&mut rng);
        take.truncate(reused);
        let mut tokens: Vec<String> = take.iter().map(|&t| render(lang, t)).collect();
        for _ in 0..(NOISE_PER_DOC + tokens_per_topic - reused) {
            tokens.push(render(lang, rng.random_range(0..cfg.vocab_size)));
        }
        tokens.shuffle(&mut rng);
        corpus.push(Document::new(format!("x{n:04}"), lang.clone(), tokens.join(" ")))?;
    }

    Ok((corpus, queries, qrels))
}

// ---------------------------------------------------------------------------
// Deterministic splitting
// ---------------------------------------------------------------------------

/// One partition of a split collection.
pub type SplitPart = (Corpus, ParallelQuerySet, Qrels);

/// Split by qid into train/dev/test. Every document relevant to a qid
/// travels with that qid's partition; documents relevant to qids that land
/// in different partitions stay with the first owning qid (the conflicting
/// judgments are dropped with a warning). Distractor documents are assigned
/// proportionally to the ratios.
pub fn split(
    corpus: &Corpus,
    queries: &ParallelQuerySet,
    qrels: &Qrels,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<[SplitPart; 3]> {
    let (r0, r1, r2) = ratios;
    if r0 <= 0.0 || r1 <= 0.0 || r2 <= 0.0 {
        return Err(Error::InvalidConfig("split ratios must be positive".into()));
    }
    if (r0 + r1 + r2 - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidConfig(format!(
            "split ratios must sum to 1, got {}",
            r0 + r1 + r2
        )));
    }
    let qids = queries.qids();
    if qids.len() < 3 {
        return Err(Error::InvalidConfig(format!(
            "need at least 3 qids to form 3 partitions, got {}",
            qids.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shuffled = qids.clone();
    shuffled.shuffle(&mut rng);
    let counts = largest_remainder(shuffled.len(), &[r0, r1, r2]);

    let mut part_of_qid: HashMap<&str, usize> = HashMap::new();
    let mut offset = 0;
    for (part, &count) in counts.iter().enumerate() {
        for qid in &shuffled[offset..offset + count] {
            part_of_qid.insert(qid.as_str(), part);
        }
        offset += count;
    }

    // Owning qids per relevant document, in sorted qid order.
    let mut owners: HashMap<&str, Vec<&str>> = HashMap::new();
    for (qid, docid, grade) in qrels.iter() {
        if grade >= 1 {
            owners.entry(docid).or_default().push(qid);
        }
    }

    let mut part_of_doc: HashMap<&str, usize> = HashMap::new();
    let mut distractors: Vec<&str> = Vec::new();
    for doc in corpus.iter() {
        match owners.get(doc.id.as_str()) {
            Some(qids) => {
                // qrels iteration is sorted, so the first owner is the
                // lexicographically first qid.
                let parts: BTreeSet<usize> = qids
                    .iter()
                    .filter_map(|q| part_of_qid.get(q).copied())
                    .collect();
                if parts.len() > 1 {
                    log::warn!(
                        "document {:?} is relevant to qids in multiple partitions; keeping it with qid {:?}",
                        doc.id,
                        qids[0]
                    );
                }
                if let Some(&part) = part_of_qid.get(qids[0]) {
                    part_of_doc.insert(doc.id.as_str(), part);
                } else {
                    distractors.push(doc.id.as_str());
                }
            }
            None => distractors.push(doc.id.as_str()),
        }
    }
    distractors.shuffle(&mut rng);
    let dcounts = largest_remainder(distractors.len(), &[r0, r1, r2]);
    let mut offset = 0;
    for (part, &count) in dcounts.iter().enumerate() {
        for docid in &distractors[offset..offset + count] {
            part_of_doc.insert(docid, part);
        }
        offset += count;
    }

    let mut out: Vec<SplitPart> = (0..3)
        .map(|_| (Corpus::new(), ParallelQuerySet::new(), Qrels::new()))
        .collect();
    for doc in corpus.iter() {
        if let Some(&part) = part_of_doc.get(doc.id.as_str()) {
            out[part].0.push(doc.clone())?;
        }
    }
    for query in queries.iter() {
        if let Some(&part) = part_of_qid.get(query.qid.as_str()) {
            out[part].1.push(query.clone())?;
        }
    }
    for (qid, docid, grade) in qrels.iter() {
        let (Some(&qpart), Some(&dpart)) = (part_of_qid.get(qid), part_of_doc.get(docid)) else {
            continue;
        };
        if qpart == dpart {
            out[qpart].2.set(qid, docid, grade);
        } else if grade >= 1 {
            log::warn!("dropping cross-partition judgment ({qid}, {docid})");
        }
    }

    let mut it = out.into_iter();
    Ok([it.next().unwrap(), it.next().unwrap(), it.next().unwrap()])
}

/// Integer apportionment by the largest-remainder method; ties go to the
/// earlier partition.
fn largest_remainder(total: usize, ratios: &[f64]) -> Vec<usize> {
    let mut counts: Vec<usize> = ratios.iter().map(|r| (r * total as f64).floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut remainders: Vec<(usize, f64)> = ratios
        .iter()
        .enumerate()
        .map(|(i, r)| (i, r * total as f64 - counts[i] as f64))
        .collect();
    remainders.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    for k in 0..(total - assigned) {
        counts[remainders[k % remainders.len()].0] += 1;
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn lang(code: &str) -> LanguageCode {
        LanguageCode::new(code).unwrap()
    }

    #[test]
    fn language_code_shape() {
        assert!(LanguageCode::new("en").is_ok());
        assert!(LanguageCode::new("mt").is_ok());
        assert!(LanguageCode::new("EN").is_err());
        assert!(LanguageCode::new("eng").is_err());
        assert!(LanguageCode::new("e1").is_err());
        assert!(LanguageCode::new("").is_err());
    }

    #[test]
    fn language_code_family() {
        assert_eq!(lang("en").family(), Some(LanguageFamily::Germanic));
        assert_eq!(lang("mt").family(), Some(LanguageFamily::Semitic));
        assert_eq!(lang("zz").family(), None);
    }

    #[test]
    fn load_corpus_three_lines() {
        let data = concat!(
            r#"{"id": "d1", "lang": "en", "text": "hello"}"#, "\n",
            r#"{"id": "d2", "lang": "de", "text": "hallo"}"#, "\n",
            r#"{"id": "d3", "lang": "fr", "text": "salut", "meta": {"author": "x"}}"#, "\n",
        );
        let corpus = read_corpus(Cursor::new(data), "test").unwrap();
        assert_eq!(corpus.len(), 3);
        assert_eq!(corpus.get("d3").unwrap().meta.as_ref().unwrap()["author"], "x");
    }

    #[test]
    fn load_corpus_duplicate_id_names_id_and_line() {
        let data = concat!(
            r#"{"id": "d0", "lang": "en", "text": "a"}"#, "\n",
            r#"{"id": "d1", "lang": "en", "text": "b"}"#, "\n",
            r#"{"id": "d2", "lang": "en", "text": "c"}"#, "\n",
            r#"{"id": "d3", "lang": "en", "text": "d"}"#, "\n",
            r#"{"id": "d1", "lang": "de", "text": "e"}"#, "\n",
        );
        let err = read_corpus(Cursor::new(data), "test").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("d1"), "{msg}");
        assert!(msg.contains(":5:"), "{msg}");
    }

    #[test]
    fn load_corpus_empty_file() {
        let corpus = read_corpus(Cursor::new(""), "test").unwrap();
        assert_eq!(corpus.len(), 0);
    }

    #[test]
    fn load_corpus_malformed_json_names_line() {
        let data = "{\"id\": \"d1\", \"lang\": \"en\", \"text\": \"a\"}\nnot json\n";
        let err = read_corpus(Cursor::new(data), "test").unwrap_err();
        assert!(err.to_string().contains(":2:"), "{err}");
    }

    #[test]
    fn load_corpus_bad_lang_code() {
        let data = r#"{"id": "d1", "lang": "english", "text": "a"}"#;
        let err = read_corpus(Cursor::new(data), "test").unwrap_err();
        assert!(err.to_string().contains("language"), "{err}");
    }

    #[test]
    fn load_queries_groups_and_sorts_languages() {
        let data = "q1\ten\tcats\nq1\tde\tkatzen\nq1\tfr\tchats\nq2\ten\tdogs\nq2\tde\thunde\nq2\tfr\tchiens\n";
        let set = read_queries(Cursor::new(data), "test").unwrap();
        assert_eq!(set.num_queries(), 2);
        assert_eq!(set.num_languages(), 3);
        assert_eq!(
            set.languages(),
            vec![lang("de"), lang("en"), lang("fr")]
        );
    }

    #[test]
    fn load_queries_duplicate_pair() {
        let data = "q7\tde\teins\nq7\tde\tzwei\n";
        let err = read_queries(Cursor::new(data), "test").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("q7") && msg.contains("de"), "{msg}");
    }

    #[test]
    fn load_queries_too_few_columns() {
        let err = read_queries(Cursor::new("q1\ten\n"), "test").unwrap_err();
        assert!(err.to_string().contains("3 tab-separated"), "{err}");
    }

    #[test]
    fn load_queries_single_language_ok() {
        let set = read_queries(Cursor::new("q1\ten\tcats\n"), "test").unwrap();
        assert_eq!(set.num_languages(), 1);
    }

    #[test]
    fn load_qrels_basic_and_overrides() {
        let (qrels, warnings) = read_qrels(Cursor::new("q1 0 d1 1\n"), "test").unwrap();
        assert_eq!(qrels.grade("q1", "d1"), Some(1));
        assert!(warnings.is_empty());

        let (qrels, warnings) =
            read_qrels(Cursor::new("q1 0 d1 2\nq1 0 d1 0\n"), "test").unwrap();
        assert_eq!(qrels.grade("q1", "d1"), Some(0));
        assert_eq!(warnings.len(), 1);
        assert!(!qrels.is_relevant("q1", "d1"));
    }

    #[test]
    fn load_qrels_rejects_negative_and_non_integer() {
        assert!(read_qrels(Cursor::new("q1 0 d1 -1\n"), "test").is_err());
        assert!(read_qrels(Cursor::new("q1 0 d1 one\n"), "test").is_err());
    }

    #[test]
    fn validate_parallel_full_grid() {
        let mut set = ParallelQuerySet::new();
        for qid in ["q1", "q2"] {
            for l in ["en", "de", "fr"] {
                set.push(Query::new(qid, lang(l), "t")).unwrap();
            }
        }
        let report = validate_parallel(&set);
        assert!(report.complete);
        assert!(report.missing.is_empty());
        assert!(!report.empty);
    }

    #[test]
    fn validate_parallel_missing_cell() {
        let mut set = ParallelQuerySet::new();
        for (qid, l) in [("q1", "en"), ("q1", "fr"), ("q2", "en")] {
            set.push(Query::new(qid, lang(l), "t")).unwrap();
        }
        let report = validate_parallel(&set);
        assert!(!report.complete);
        assert_eq!(report.missing, vec![("q2".to_string(), lang("fr"))]);
    }

    #[test]
    fn validate_parallel_empty_set() {
        let report = validate_parallel(&ParallelQuerySet::new());
        assert!(report.complete);
        assert!(report.empty);
    }

    #[test]
    fn synthetic_counts() {
        let cfg = SynthConfig {
            num_languages: 4,
            num_queries: 50,
            docs_per_query: 4,
            ..SynthConfig::default()
        };
        let (corpus, queries, qrels) = generate_synthetic(&cfg).unwrap();
        assert_eq!(queries.num_queries(), 50);
        assert_eq!(queries.num_languages(), 4);
        assert_eq!(qrels.iter().filter(|&(_, _, g)| g >= 1).count(), 200);
        // relevant + one distractor per relevant
        assert_eq!(corpus.len(), 400);
    }

    #[test]
    fn synthetic_deterministic() {
        let cfg = SynthConfig::default();
        let (c1, q1, r1) = generate_synthetic(&cfg).unwrap();
        let (c2, q2, r2) = generate_synthetic(&cfg).unwrap();
        let mut b1 = Vec::new();
        let mut b2 = Vec::new();
        write_corpus(&mut b1, &c1).unwrap();
        write_corpus(&mut b2, &c2).unwrap();
        assert_eq!(b1, b2);
        let mut t1 = Vec::new();
        let mut t2 = Vec::new();
        write_queries(&mut t1, &q1).unwrap();
        write_queries(&mut t2, &q2).unwrap();
        assert_eq!(t1, t2);
        assert_eq!(r1, r2);
    }

    #[test]
    fn synthetic_zero_overlap_private_vocabularies_disjoint() {
        let cfg = SynthConfig {
            lexical_overlap: 0.0,
            ..SynthConfig::default()
        };
        let (corpus, queries, _) = generate_synthetic(&cfg).unwrap();
        // Scan every generated token per language; assert pairwise disjoint.
        let mut vocab: BTreeMap<LanguageCode, BTreeSet<String>> = BTreeMap::new();
        for doc in corpus.iter() {
            let entry = vocab.entry(doc.lang.clone()).or_default();
            entry.extend(doc.text.split(' ').map(String::from));
        }
        for q in queries.iter() {
            let entry = vocab.entry(q.lang.clone()).or_default();
            entry.extend(q.text.split(' ').map(String::from));
        }
        let langs: Vec<_> = vocab.keys().cloned().collect();
        for i in 0..langs.len() {
            for j in (i + 1)..langs.len() {
                assert!(
                    vocab[&langs[i]].is_disjoint(&vocab[&langs[j]]),
                    "languages {} and {} share tokens",
                    langs[i],
                    langs[j]
                );
            }
        }
    }

    #[test]
    fn split_counts_and_disjointness() {
        let cfg = SynthConfig {
            num_queries: 10,
            ..SynthConfig::default()
        };
        let (corpus, queries, qrels) = generate_synthetic(&cfg).unwrap();
        let [train, dev, test] = split(&corpus, &queries, &qrels, (0.8, 0.1, 0.1), 3).unwrap();
        assert_eq!(train.1.num_queries(), 8);
        assert_eq!(dev.1.num_queries(), 1);
        assert_eq!(test.1.num_queries(), 1);

        let tq: BTreeSet<_> = train.1.qids().into_iter().collect();
        let dq: BTreeSet<_> = dev.1.qids().into_iter().collect();
        let eq: BTreeSet<_> = test.1.qids().into_iter().collect();
        assert!(tq.is_disjoint(&dq) && tq.is_disjoint(&eq) && dq.is_disjoint(&eq));

        // Relevant judgments stay within their partition's corpus.
        for part in [&train, &dev, &test] {
            for (qid, docid, grade) in part.2.iter() {
                assert!(part.1.qids().iter().any(|q| q == qid));
                if grade >= 1 {
                    assert!(part.0.get(docid).is_some());
                }
            }
        }
        // No relevant doc crosses partitions.
        let td: BTreeSet<_> = train.0.iter().map(|d| d.id.clone()).collect();
        let dd: BTreeSet<_> = dev.0.iter().map(|d| d.id.clone()).collect();
        let ed: BTreeSet<_> = test.0.iter().map(|d| d.id.clone()).collect();
        assert!(td.is_disjoint(&dd) && td.is_disjoint(&ed) && dd.is_disjoint(&ed));
        // All documents assigned somewhere.
        assert_eq!(td.len() + dd.len() + ed.len(), corpus.len());
    }

    #[test]
    fn split_too_few_qids() {
        let cfg = SynthConfig {
            num_queries: 2,
            ..SynthConfig::default()
        };
        let (corpus, queries, qrels) = generate_synthetic(&cfg).unwrap();
        assert!(split(&corpus, &queries, &qrels, (0.8, 0.1, 0.1), 3).is_err());
    }

    #[test]
    fn split_rejects_bad_ratios() {
        let cfg = SynthConfig {
            num_queries: 10,
            ..SynthConfig::default()
        };
        let (corpus, queries, qrels) = generate_synthetic(&cfg).unwrap();
        assert!(split(&corpus, &queries, &qrels, (0.8, 0.1, 0.2), 3).is_err());
        assert!(split(&corpus, &queries, &qrels, (1.0, 0.0, 0.0), 3).is_err());
    }

    #[test]
    fn corpus_roundtrip_canonical() {
        let cfg = SynthConfig {
            num_queries: 5,
            ..SynthConfig::default()
        };
        let (corpus, queries, qrels) = generate_synthetic(&cfg).unwrap();

        let mut bytes = Vec::new();
        write_corpus(&mut bytes, &corpus).unwrap();
        let reloaded = read_corpus(Cursor::new(&bytes), "mem").unwrap();
        let mut bytes2 = Vec::new();
        write_corpus(&mut bytes2, &reloaded).unwrap();
        assert_eq!(bytes, bytes2);

        let mut t = Vec::new();
        write_queries(&mut t, &queries).unwrap();
        let reloaded = read_queries(Cursor::new(&t), "mem").unwrap();
        let mut t2 = Vec::new();
        write_queries(&mut t2, &reloaded).unwrap();
        assert_eq!(t, t2);

        let mut r = Vec::new();
        write_qrels(&mut r, &qrels).unwrap();
        let (reloaded, w) = read_qrels(Cursor::new(&r), "mem").unwrap();
        assert!(w.is_empty());
        assert_eq!(reloaded, qrels);
    }
}
