//! Inverted index construction and BM25 ranked retrieval.
//!
//! This is the traditional lexical baseline ranker. Scoring uses the
//! Lucene-style non-negative idf `ln(1 + (N - df + 0.5) / (df + 0.5))`, and
//! documents matching no query term are excluded from results.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use unicode_normalization::UnicodeNormalization;
use unicode_segmentation::UnicodeSegmentation;

use crate::corpus::{Corpus, LanguageCode, Query};
use crate::error::{Error, Result};
use crate::metrics::RankedList;

/// BM25 scoring parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BM25Params {
    /// Term-frequency saturation.
    pub k1: f64,
    /// Length normalization in [0, 1].
    pub b: f64,
}

impl Default for BM25Params {
    fn default() -> Self {
        BM25Params { k1: 0.9, b: 0.4 }
    }
}

impl BM25Params {
    pub fn validate(&self) -> Result<()> {
        if self.k1.is_nan() || self.k1 < 0.0 {
            return Err(Error::InvalidConfig(format!("k1 must be >= 0, got {}", self.k1)));
        }
        if !(0.0..=1.0).contains(&self.b) {
            return Err(Error::InvalidConfig(format!("b must be in [0, 1], got {}", self.b)));
        }
        Ok(())
    }
}

/// Ordered, normalized tokens produced by the analyzer.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenStream {
    tokens: Vec<String>,
}

impl TokenStream {
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, String> {
        self.tokens.iter()
    }
}

impl From<TokenStream> for Vec<String> {
    fn from(ts: TokenStream) -> Self {
        ts.tokens
    }
}

/// Text analyzer: NFC normalization, Unicode word segmentation, lowercasing,
/// and optional per-language stopword removal.
#[derive(Debug, Clone, Default)]
pub struct Analyzer {
    stopwords: HashMap<LanguageCode, HashSet<String>>,
}

impl Analyzer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_stopwords(mut self, lang: LanguageCode, words: impl IntoIterator<Item = String>) -> Self {
        self.stopwords.entry(lang).or_default().extend(words);
        self
    }

    pub fn tokenize(&self, text: &str, lang: &LanguageCode) -> TokenStream {
        let normalized: String = text.nfc().collect();
        let stop = self.stopwords.get(lang);
        let tokens = normalized
            .unicode_words()
            .map(|w| w.to_lowercase())
            .filter(|w| !w.is_empty())
            .filter(|w| stop.is_none_or(|s| !s.contains(w)))
            .collect();
        TokenStream { tokens }
    }
}

/// Tokenize with the default analyzer (no stopwords).
pub fn tokenize(text: &str, lang: &LanguageCode) -> TokenStream {
    Analyzer::new().tokenize(text, lang)
}

/// One posting list entry: document index and term frequency.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Posting {
    pub doc: u32,
    pub tf: u32,
}

/// Immutable inverted index with the statistics BM25 needs.
#[derive(Debug, Clone, PartialEq)]
pub struct InvertedIndex {
    params: BM25Params,
    postings: BTreeMap<String, Vec<Posting>>,
    doc_ids: Vec<String>,
    doc_langs: Vec<LanguageCode>,
    doc_lengths: Vec<u32>,
    by_id: HashMap<String, u32>,
    total_len: u64,
}

impl InvertedIndex {
    pub fn num_docs(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn avg_doc_len(&self) -> f64 {
        self.total_len as f64 / self.doc_ids.len() as f64
    }

    pub fn doc_len(&self, docid: &str) -> Option<u32> {
        self.by_id.get(docid).map(|&i| self.doc_lengths[i as usize])
    }

    pub fn doc_lang(&self, docid: &str) -> Option<&LanguageCode> {
        self.by_id.get(docid).map(|&i| &self.doc_langs[i as usize])
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn params(&self) -> BM25Params {
        self.params
    }

    pub fn num_terms(&self) -> usize {
        self.postings.len()
    }

    fn idf(&self, df: usize) -> f64 {
        let n = self.num_docs() as f64;
        let df = df as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }
}

/// Build an index over a nonempty corpus. Postings follow document insertion
/// order; the build is deterministic.
pub fn build_index(corpus: &Corpus, params: BM25Params) -> Result<InvertedIndex> {
    params.validate()?;
    if corpus.is_empty() {
        return Err(Error::EmptyInput("cannot index an empty corpus".into()));
    }
    let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
    let mut doc_ids = Vec::with_capacity(corpus.len());
    let mut doc_langs = Vec::with_capacity(corpus.len());
    let mut doc_lengths = Vec::with_capacity(corpus.len());
    let mut by_id = HashMap::with_capacity(corpus.len());
    let mut total_len: u64 = 0;

    for (i, doc) in corpus.iter().enumerate() {
        let tokens = tokenize(&doc.text, &doc.lang);
        let mut counts: BTreeMap<&String, u32> = BTreeMap::new();
        for tok in tokens.iter() {
            *counts.entry(tok).or_insert(0) += 1;
        }
        for (term, tf) in counts {
            postings.entry(term.clone()).or_default().push(Posting {
                doc: i as u32,
                tf,
            });
        }
        total_len += tokens.len() as u64;
        doc_lengths.push(tokens.len() as u32);
        by_id.insert(doc.id.clone(), i as u32);
        doc_ids.push(doc.id.clone());
        doc_langs.push(doc.lang.clone());
    }

    Ok(InvertedIndex {
        params,
        postings,
        doc_ids,
        doc_langs,
        doc_lengths,
        by_id,
        total_len,
    })
}

/// BM25 score of one document for a query token stream. The sum runs over
/// distinct query terms; a term absent from the document contributes 0.
pub fn bm25_score(index: &InvertedIndex, query_tokens: &TokenStream, docid: &str) -> Result<f64> {
    let Some(&doc_idx) = index.by_id.get(docid) else {
        return Err(Error::UnknownDocId(docid.to_string()));
    };
    let len = index.doc_lengths[doc_idx as usize] as f64;
    let avg = index.avg_doc_len();
    let BM25Params { k1, b } = index.params;
    let terms: BTreeSet<&String> = query_tokens.iter().collect();
    let mut score = 0.0;
    for term in terms {
        let Some(plist) = index.postings.get(term) else {
            continue;
        };
        let Ok(pos) = plist.binary_search_by_key(&doc_idx, |p| p.doc) else {
            continue;
        };
        let tf = plist[pos].tf as f64;
        let idf = index.idf(plist.len());
        score += idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * len / avg));
    }
    Ok(score)
}

/// Top-k retrieval: descending score, ties broken by ascending docid,
/// zero-score documents excluded. The result may be shorter than k.
pub fn search(index: &InvertedIndex, query: &Query, k: usize) -> Result<RankedList> {
    if k == 0 {
        return Err(Error::InvalidConfig("k must be >= 1".into()));
    }
    let tokens = tokenize(&query.text, &query.lang);
    let terms: BTreeSet<&String> = tokens.iter().collect();
    let BM25Params { k1, b } = index.params;
    let avg = index.avg_doc_len();

    let mut scores = vec![0.0f64; index.num_docs()];
    let mut matched = vec![false; index.num_docs()];
    for term in terms {
        let Some(plist) = index.postings.get(term) else {
            continue;
        };
        let idf = index.idf(plist.len());
        for p in plist {
            let len = index.doc_lengths[p.doc as usize] as f64;
            let tf = p.tf as f64;
            scores[p.doc as usize] += idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * len / avg));
            matched[p.doc as usize] = true;
        }
    }

    let mut hits: Vec<(u32, f64)> = (0..index.num_docs() as u32)
        .filter(|&i| matched[i as usize])
        .map(|i| (i, scores[i as usize]))
        .collect();
    hits.sort_by(|a, b| {
        b.1.total_cmp(&a.1)
            .then_with(|| index.doc_ids[a.0 as usize].cmp(&index.doc_ids[b.0 as usize]))
    });
    hits.truncate(k);

    let entries = hits
        .into_iter()
        .map(|(i, s)| (index.doc_ids[i as usize].clone(), s))
        .collect();
    RankedList::new(query.qid.clone(), query.lang.clone(), entries)
}

// ---------------------------------------------------------------------------
// Persistence: single versioned binary file
// ---------------------------------------------------------------------------

const INDEX_MAGIC: &[u8; 4] = b"RPIX";
const INDEX_VERSION: u32 = 1;

fn write_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    w.write_u32::<LittleEndian>(s.len() as u32)?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_str<R: Read>(r: &mut R, path: &str) -> Result<String> {
    let len = r.read_u32::<LittleEndian>()? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| Error::BadFormat {
        path: path.to_string(),
        msg: "non-UTF-8 string".into(),
    })
}

/// Persist the index; [`load_index`] restores it with bit-equal statistics.
pub fn save_index(path: impl AsRef<Path>, index: &InvertedIndex) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(INDEX_MAGIC)?;
    w.write_u32::<LittleEndian>(INDEX_VERSION)?;
    w.write_u64::<LittleEndian>(index.params.k1.to_bits())?;
    w.write_u64::<LittleEndian>(index.params.b.to_bits())?;
    w.write_u32::<LittleEndian>(index.doc_ids.len() as u32)?;
    for i in 0..index.doc_ids.len() {
        write_str(&mut w, &index.doc_ids[i])?;
        w.write_all(index.doc_langs[i].as_str().as_bytes())?;
        w.write_u32::<LittleEndian>(index.doc_lengths[i])?;
    }
    w.write_u64::<LittleEndian>(index.postings.len() as u64)?;
    for (term, plist) in &index.postings {
        write_str(&mut w, term)?;
        w.write_u32::<LittleEndian>(plist.len() as u32)?;
        for p in plist {
            w.write_u32::<LittleEndian>(p.doc)?;
            w.write_u32::<LittleEndian>(p.tf)?;
        }
    }
    w.write_u64::<LittleEndian>(index.total_len)?;
    w.flush()?;
    Ok(())
}

pub fn load_index(path: impl AsRef<Path>) -> Result<InvertedIndex> {
    let path_str = path.as_ref().display().to_string();
    let bad = |msg: &str| Error::BadFormat {
        path: path_str.clone(),
        msg: msg.into(),
    };
    let mut r = BufReader::new(File::open(&path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != INDEX_MAGIC {
        return Err(bad("bad magic"));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != INDEX_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let k1 = f64::from_bits(r.read_u64::<LittleEndian>()?);
    let b = f64::from_bits(r.read_u64::<LittleEndian>()?);
    let n_docs = r.read_u32::<LittleEndian>()? as usize;
    let mut doc_ids = Vec::with_capacity(n_docs);
    let mut doc_langs = Vec::with_capacity(n_docs);
    let mut doc_lengths = Vec::with_capacity(n_docs);
    let mut by_id = HashMap::with_capacity(n_docs);
    for i in 0..n_docs {
        let id = read_str(&mut r, &path_str)?;
        let mut lang_bytes = [0u8; 2];
        r.read_exact(&mut lang_bytes)?;
        let lang = LanguageCode::new(std::str::from_utf8(&lang_bytes).map_err(|_| bad("bad lang"))?)
            .map_err(|e| bad(&e.to_string()))?;
        let len = r.read_u32::<LittleEndian>()?;
        by_id.insert(id.clone(), i as u32);
        doc_ids.push(id);
        doc_langs.push(lang);
        doc_lengths.push(len);
    }
    let n_terms = r.read_u64::<LittleEndian>()? as usize;
    let mut postings = BTreeMap::new();
    for _ in 0..n_terms {
        let term = read_str(&mut r, &path_str)?;
        let n = r.read_u32::<LittleEndian>()? as usize;
        let mut plist = Vec::with_capacity(n);
        for _ in 0..n {
            let doc = r.read_u32::<LittleEndian>()?;
            let tf = r.read_u32::<LittleEndian>()?;
            plist.push(Posting { doc, tf });
        }
        postings.insert(term, plist);
    }
    let total_len = r.read_u64::<LittleEndian>()?;
    Ok(InvertedIndex {
        params: BM25Params { k1, b },
        postings,
        doc_ids,
        doc_langs,
        doc_lengths,
        by_id,
        total_len,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Document;

    fn lang(code: &str) -> LanguageCode {
        LanguageCode::new(code).unwrap()
    }

    fn corpus_of(docs: &[(&str, &str, &str)]) -> Corpus {
        let mut corpus = Corpus::new();
        for (id, l, text) in docs {
            corpus.push(Document::new(*id, lang(l), *text)).unwrap();
        }
        corpus
    }

    #[test]
    fn tokenize_casefolds_and_segments() {
        let ts = tokenize("The QUICK fox", &lang("en"));
        assert_eq!(ts.tokens(), ["the", "quick", "fox"]);
    }

    #[test]
    fn tokenize_empty() {
        assert!(tokenize("", &lang("en")).is_empty());
    }

    #[test]
    fn tokenize_greek() {
        // Checked against Unicode UAX-29 word segmentation: two words,
        // lowercased with combining accents NFC-composed.
        let ts = tokenize("Καλημέρα κόσμε", &lang("el"));
        assert_eq!(ts.tokens(), ["καλημέρα", "κόσμε"]);
    }

    #[test]
    fn tokenize_nfc_normalizes_decomposed_input() {
        // "é" as e + COMBINING ACUTE ACCENT must equal the composed form.
        let decomposed = "Cafe\u{0301}";
        let composed = "Café";
        assert_eq!(
            tokenize(decomposed, &lang("fr")),
            tokenize(composed, &lang("fr"))
        );
    }

    #[test]
    fn tokenize_drops_punctuation_and_whitespace() {
        let ts = tokenize("a-b, c! (d)", &lang("en"));
        for tok in ts.iter() {
            assert!(!tok.is_empty());
            assert!(!tok.chars().any(char::is_whitespace));
        }
    }

    #[test]
    fn analyzer_stopwords() {
        let analyzer =
            Analyzer::new().with_stopwords(lang("en"), ["the".to_string(), "a".to_string()]);
        let ts = analyzer.tokenize("The quick fox", &lang("en"));
        assert_eq!(ts.tokens(), ["quick", "fox"]);
        // Stopwords are per-language.
        let ts = analyzer.tokenize("The quick fox", &lang("de"));
        assert_eq!(ts.tokens(), ["the", "quick", "fox"]);
    }

    #[test]
    fn build_index_stats() {
        let corpus = corpus_of(&[("d", "en", "a a b")]);
        let index = build_index(&corpus, BM25Params::default()).unwrap();
        assert_eq!(index.num_docs(), 1);
        assert_eq!(index.doc_len("d"), Some(3));
        assert_eq!(index.avg_doc_len(), 3.0);
        assert_eq!(index.postings["a"], vec![Posting { doc: 0, tf: 2 }]);
        assert_eq!(index.postings["b"], vec![Posting { doc: 0, tf: 1 }]);
    }

    #[test]
    fn build_index_avg_len() {
        let corpus = corpus_of(&[("d1", "en", "a b"), ("d2", "en", "a b c d")]);
        let index = build_index(&corpus, BM25Params::default()).unwrap();
        assert_eq!(index.avg_doc_len(), 3.0);
    }

    #[test]
    fn build_index_rejects_empty_corpus() {
        assert!(build_index(&Corpus::new(), BM25Params::default()).is_err());
    }

    #[test]
    fn build_index_deterministic() {
        let corpus = corpus_of(&[("d1", "en", "a b c"), ("d2", "de", "b c d")]);
        let i1 = build_index(&corpus, BM25Params::default()).unwrap();
        let i2 = build_index(&corpus, BM25Params::default()).unwrap();
        assert_eq!(i1, i2);
    }

    #[test]
    fn posting_tf_sums_to_doc_length() {
        let corpus = corpus_of(&[("d1", "en", "a a b c"), ("d2", "en", "c c c")]);
        let index = build_index(&corpus, BM25Params::default()).unwrap();
        for doc in 0..index.num_docs() as u32 {
            let total: u32 = index
                .postings
                .values()
                .flat_map(|plist| plist.iter().filter(|p| p.doc == doc).map(|p| p.tf))
                .sum();
            assert_eq!(total, index.doc_lengths[doc as usize]);
        }
    }

    #[test]
    fn bm25_score_hand_computed() {
        // Two docs of one term each; query "x" on d1: df=1, tf=1, len=avglen
        // => idf = ln(1 + 1.5/1.5) = ln 2, tf part = (k1+1)/(1+k1) = 1.
        let corpus = corpus_of(&[("d1", "en", "x"), ("d2", "en", "y")]);
        let index = build_index(&corpus, BM25Params::default()).unwrap();
        let tokens = tokenize("x", &lang("en"));
        let score = bm25_score(&index, &tokens, "d1").unwrap();
        assert!((score - std::f64::consts::LN_2).abs() < 1e-12, "{score}");
        assert_eq!(bm25_score(&index, &tokens, "d2").unwrap(), 0.0);
    }

    #[test]
    fn bm25_score_unknown_doc() {
        let corpus = corpus_of(&[("d1", "en", "x")]);
        let index = build_index(&corpus, BM25Params::default()).unwrap();
        assert!(bm25_score(&index, &tokenize("x", &lang("en")), "nope").is_err());
    }

    #[test]
    fn bm25_k1_saturation_bounds() {
        // With tf=1 and len=avglen, doubling k1 keeps the score positive and
        // below previous * (k1'+1)/(k1+1).
        let corpus = corpus_of(&[("d1", "en", "x y"), ("d2", "en", "y z")]);
        let tokens = tokenize("x", &lang("en"));
        let mut prev_k1 = 0.9;
        let mut prev = {
            let index = build_index(&corpus, BM25Params { k1: prev_k1, b: 0.4 }).unwrap();
            bm25_score(&index, &tokens, "d1").unwrap()
        };
        for _ in 0..4 {
            let k1 = prev_k1 * 2.0;
            let index = build_index(&corpus, BM25Params { k1, b: 0.4 }).unwrap();
            let score = bm25_score(&index, &tokens, "d1").unwrap();
            assert!(score > 0.0);
            assert!(score < prev * (k1 + 1.0) / (prev_k1 + 1.0));
            prev = score;
            prev_k1 = k1;
        }
    }

    #[test]
    fn search_excludes_zero_scores_and_orders() {
        let corpus = corpus_of(&[
            ("d1", "en", "cat dog"),
            ("d2", "en", "cat cat"),
            ("d3", "en", "bird"),
        ]);
        let index = build_index(&corpus, BM25Params::default()).unwrap();
        let list = search(&index, &Query::new("q1", lang("en"), "cat"), 10).unwrap();
        let ids: Vec<&str> = list.entries().iter().map(|(d, _)| d.as_str()).collect();
        // d2 has higher tf; d3 does not match at all.
        assert_eq!(ids, ["d2", "d1"]);
    }

    #[test]
    fn search_no_match_is_empty() {
        let corpus = corpus_of(&[("d1", "en", "cat")]);
        let index = build_index(&corpus, BM25Params::default()).unwrap();
        let list = search(&index, &Query::new("q1", lang("en"), "zebra"), 5).unwrap();
        assert!(list.entries().is_empty());
    }

    #[test]
    fn search_ties_break_by_ascending_docid() {
        let corpus = corpus_of(&[("db", "en", "cat"), ("da", "en", "cat")]);
        let index = build_index(&corpus, BM25Params::default()).unwrap();
        let list = search(&index, &Query::new("q1", lang("en"), "cat"), 5).unwrap();
        let ids: Vec<&str> = list.entries().iter().map(|(d, _)| d.as_str()).collect();
        assert_eq!(ids, ["da", "db"]);
    }

    #[test]
    fn search_k_larger_than_matches() {
        let corpus = corpus_of(&[("d1", "en", "cat"), ("d2", "en", "dog")]);
        let index = build_index(&corpus, BM25Params::default()).unwrap();
        let list = search(&index, &Query::new("q1", lang("en"), "cat dog"), 100).unwrap();
        assert_eq!(list.entries().len(), 2);
    }

    #[test]
    fn index_roundtrip_bit_equal() {
        let corpus = corpus_of(&[
            ("d1", "en", "cat dog mouse"),
            ("d2", "de", "katze hund"),
            ("d3", "el", "καλημέρα κόσμε"),
        ]);
        let index = build_index(&corpus, BM25Params::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("index.bin");
        save_index(&path, &index).unwrap();
        let loaded = load_index(&path).unwrap();
        assert_eq!(index, loaded);
        assert_eq!(index.avg_doc_len().to_bits(), loaded.avg_doc_len().to_bits());
    }
}
