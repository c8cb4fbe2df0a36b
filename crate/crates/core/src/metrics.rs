//! Retrieval-quality metrics (MRR@k, Recall@k) and language-fairness
//! metrics: per-query rank correlation between parallel queries' result
//! lists, the per-language MRC@k mean, the language-pair MRC matrix, and the
//! query-language/document-language correlation matrix.
//!
//! Rank correlation between two top-k lists pairs documents over the union
//! of the two top-k sets: a document's rank is its 1-indexed position where
//! present and k+1 where absent (all absent documents tied), and the
//! tie-corrected Spearman coefficient (Pearson on midranks) is applied.
//! When the two sets coincide this reduces to textbook Spearman.

use std::collections::{BTreeMap, BTreeSet};

use crate::corpus::{Corpus, LanguageCode, Qrels};
use crate::error::{Error, Result};

/// An ordered retrieval result for one (qid, query language) pair.
///
/// Invariants: scores non-increasing, docids unique, ascending docid within
/// equal scores.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    qid: String,
    qlang: LanguageCode,
    entries: Vec<(String, f64)>,
}

impl RankedList {
    pub fn new(qid: String, qlang: LanguageCode, entries: Vec<(String, f64)>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for window in entries.windows(2) {
            let (ref d0, s0) = window[0];
            let (ref d1, s1) = window[1];
            if s1 > s0 {
                return Err(Error::InvalidConfig(format!(
                    "ranked list for ({qid}): scores must be non-increasing ({d1} above {d0})"
                )));
            }
            if s1 == s0 && d1 <= d0 {
                return Err(Error::InvalidConfig(format!(
                    "ranked list for ({qid}): equal scores must order docids ascending ({d0} vs {d1})"
                )));
            }
        }
        for (docid, score) in &entries {
            if !score.is_finite() {
                return Err(Error::NonFinite(format!("score of {docid} in ({qid})")));
            }
            if !seen.insert(docid.clone()) {
                return Err(Error::InvalidConfig(format!(
                    "ranked list for ({qid}): duplicate docid {docid:?}"
                )));
            }
        }
        Ok(RankedList { qid, qlang, entries })
    }

    pub fn qid(&self) -> &str {
        &self.qid
    }

    pub fn qlang(&self) -> &LanguageCode {
        &self.qlang
    }

    pub fn entries(&self) -> &[(String, f64)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Docids of the top-k prefix.
    pub fn top_k(&self, k: usize) -> Vec<&str> {
        self.entries.iter().take(k).map(|(d, _)| d.as_str()).collect()
    }
}

/// A family of ranked lists keyed by (qid, query language).
#[derive(Debug, Clone, Default)]
pub struct Run {
    tag: String,
    lists: BTreeMap<(String, LanguageCode), RankedList>,
}

impl Run {
    pub fn new(tag: impl Into<String>) -> Self {
        Run {
            tag: tag.into(),
            lists: BTreeMap::new(),
        }
    }

    pub fn tag(&self) -> &str {
        &self.tag
    }

    /// Insert a list; each (qid, qlang) may appear at most once.
    pub fn insert(&mut self, list: RankedList) -> Result<()> {
        let key = (list.qid.clone(), list.qlang.clone());
        if self.lists.contains_key(&key) {
            return Err(Error::InvalidConfig(format!(
                "duplicate ranked list for ({}, {})",
                key.0, key.1
            )));
        }
        self.lists.insert(key, list);
        Ok(())
    }

    pub fn get(&self, qid: &str, qlang: &LanguageCode) -> Option<&RankedList> {
        self.lists.get(&(qid.to_string(), qlang.clone()))
    }

    pub fn iter(&self) -> impl Iterator<Item = &RankedList> {
        self.lists.values()
    }

    pub fn len(&self) -> usize {
        self.lists.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lists.is_empty()
    }

    /// Sorted set of query languages present.
    pub fn languages(&self) -> Vec<LanguageCode> {
        let set: BTreeSet<LanguageCode> = self.lists.keys().map(|(_, l)| l.clone()).collect();
        set.into_iter().collect()
    }

    /// Sorted set of qids present.
    pub fn qids(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.lists.keys().map(|(q, _)| q.as_str()).collect();
        set.into_iter().map(String::from).collect()
    }

    /// Collect lists into a run, rejecting duplicate (qid, qlang) pairs.
    pub fn from_lists(
        tag: impl Into<String>,
        lists: impl IntoIterator<Item = RankedList>,
    ) -> Result<Run> {
        let mut run = Run::new(tag);
        for list in lists {
            run.insert(list)?;
        }
        Ok(run)
    }

    /// Retain only lists passing the predicate.
    pub fn filter<F: Fn(&RankedList) -> bool>(&self, keep: F) -> Run {
        let mut out = Run::new(self.tag.clone());
        for list in self.iter() {
            if keep(list) {
                out.insert(list.clone()).expect("filtered run cannot collide");
            }
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Retrieval quality
// ---------------------------------------------------------------------------

/// Reciprocal rank of the first relevant document within the top k
/// (1-indexed); 0 when none is retrieved.
pub fn reciprocal_rank(list: &RankedList, qrels: &Qrels, k: usize) -> f64 {
    for (pos, (docid, _)) in list.entries.iter().take(k).enumerate() {
        if qrels.is_relevant(&list.qid, docid) {
            return 1.0 / (pos + 1) as f64;
        }
    }
    0.0
}

/// Mean reciprocal rank over all (qid, qlang) pairs present in the run.
pub fn mrr_at_k(run: &Run, qrels: &Qrels, k: usize) -> Result<f64> {
    if run.is_empty() {
        return Err(Error::EmptyInput("mrr over an empty run".into()));
    }
    let sum: f64 = run.iter().map(|list| reciprocal_rank(list, qrels, k)).sum();
    Ok(sum / run.len() as f64)
}

/// Mean over queries of |relevant ∩ top-k| / |relevant|. Queries with no
/// relevant documents are skipped with a warning.
pub fn recall_at_k(run: &Run, qrels: &Qrels, k: usize) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for list in run.iter() {
        let relevant = qrels.relevant_docs(&list.qid);
        if relevant.is_empty() {
            log::warn!(
                "recall: query ({}, {}) has no relevant documents; skipping",
                list.qid,
                list.qlang
            );
            continue;
        }
        let top: BTreeSet<&str> = list.top_k(k).into_iter().collect();
        let hit = relevant.iter().filter(|d| top.contains(*d)).count();
        sum += hit as f64 / relevant.len() as f64;
        n += 1;
    }
    if n == 0 {
        log::warn!("recall: no scorable queries in run");
        return 0.0;
    }
    sum / n as f64
}

// ---------------------------------------------------------------------------
// Rank correlation
// ---------------------------------------------------------------------------

/// Midranks (average ranks, 1-based) of a value vector; tied values share
/// the mean of their positional ranks.
fn midranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && values[order[j]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            ranks[idx] = rank;
        }
        i = j;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation(
            "zero variance in rank vector".into(),
        ));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Spearman rank correlation in its tie-robust form: Pearson correlation of
/// the midrank vectors. For tie-free inputs it equals
/// `1 - 6 Σd² / (n (n² - 1))`.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::UndefinedCorrelation(format!(
            "need at least 2 points, got {}",
            x.len()
        )));
    }
    pearson(&midranks(x), &midranks(y))
}

/// Rank correlation between two top-k lists for the same qid.
///
/// Documents are paired over the union of the two top-k docid sets; a
/// document absent from one list ranks k+1 there (all absent documents
/// tied). Identical top-k sequences return 1.0 before any variance check;
/// degenerate unions surface [`Error::UndefinedCorrelation`] so callers can
/// skip the pair.
pub fn rank_correlation_at_k(a: &RankedList, b: &RankedList, k: usize) -> Result<f64> {
    if a.qid != b.qid {
        return Err(Error::QidMismatch {
            a: a.qid.clone(),
            b: b.qid.clone(),
        });
    }
    if k == 0 {
        return Err(Error::InvalidConfig("k must be >= 1".into()));
    }
    let top_a = a.top_k(k);
    let top_b = b.top_k(k);
    if top_a == top_b {
        return if top_a.is_empty() {
            Err(Error::UndefinedCorrelation(format!(
                "both top-{k} lists empty for qid {}",
                a.qid
            )))
        } else {
            Ok(1.0)
        };
    }
    let pos_a: BTreeMap<&str, usize> = top_a.iter().enumerate().map(|(i, d)| (*d, i + 1)).collect();
    let pos_b: BTreeMap<&str, usize> = top_b.iter().enumerate().map(|(i, d)| (*d, i + 1)).collect();
    let union: BTreeSet<&str> = top_a.iter().chain(top_b.iter()).copied().collect();
    let absent = (k + 1) as f64;
    let ranks_a: Vec<f64> = union
        .iter()
        .map(|d| pos_a.get(d).map_or(absent, |&p| p as f64))
        .collect();
    let ranks_b: Vec<f64> = union
        .iter()
        .map(|d| pos_b.get(d).map_or(absent, |&p| p as f64))
        .collect();
    spearman(&ranks_a, &ranks_b)
}

/// Mean rank correlation of language `a` against every other language with
/// a list for this qid. Undefined pair correlations are skipped and the
/// divisor reduced; erroring when no pair is defined.
pub fn rc_for_language(run: &Run, qid: &str, lang_a: &LanguageCode, k: usize) -> Result<f64> {
    let Some(list_a) = run.get(qid, lang_a) else {
        return Err(Error::EmptyInput(format!("no list for ({qid}, {lang_a})")));
    };
    let mut sum = 0.0;
    let mut n = 0usize;
    for lang_b in run.languages() {
        if &lang_b == lang_a {
            continue;
        }
        let Some(list_b) = run.get(qid, &lang_b) else {
            continue;
        };
        match rank_correlation_at_k(list_a, list_b, k) {
            Ok(rc) => {
                sum += rc;
                n += 1;
            }
            Err(Error::UndefinedCorrelation(msg)) => {
                log::debug!("skipping undefined pair ({qid}, {lang_a}, {lang_b}): {msg}");
            }
            Err(e) => return Err(e),
        }
    }
    if n == 0 {
        return Err(Error::UndefinedCorrelation(format!(
            "no defined language pair for ({qid}, {lang_a})"
        )));
    }
    Ok(sum / n as f64)
}

/// MRC@k per language: the mean over qids (with a defined value) of the
/// per-query mean rank correlation against all other languages. Values are
/// raw in [-1, 1]; multiply by 100 only at the report layer.
pub fn mrc_at_k(run: &Run, k: usize) -> Result<BTreeMap<LanguageCode, f64>> {
    if run.languages().len() < 2 {
        return Err(Error::InvalidConfig(
            "fairness evaluation needs at least 2 query languages".into(),
        ));
    }
    let mut out = BTreeMap::new();
    for lang in run.languages() {
        let mut sum = 0.0;
        let mut n = 0usize;
        for qid in run.qids() {
            if run.get(&qid, &lang).is_none() {
                continue;
            }
            match rc_for_language(run, &qid, &lang, k) {
                Ok(rc) => {
                    sum += rc;
                    n += 1;
                }
                Err(Error::UndefinedCorrelation(_)) => {}
                Err(e) => return Err(e),
            }
        }
        if n > 0 {
            out.insert(lang, sum / n as f64);
        }
    }
    Ok(out)
}

/// An L x L matrix (cells may be undefined) with its language axis labels.
pub type LabeledMatrix = (Vec<LanguageCode>, Vec<Vec<Option<f64>>>);

/// Language-pair matrix: cell (a, b) is the mean over qids of the pair rank
/// correlation. Symmetric with the diagonal fixed at 1; cells with no
/// defined qid are `None`.
pub fn mrc_matrix(run: &Run, k: usize) -> Result<LabeledMatrix> {
    let langs = run.languages();
    if langs.len() < 2 {
        return Err(Error::InvalidConfig(
            "fairness evaluation needs at least 2 query languages".into(),
        ));
    }
    let l = langs.len();
    let mut matrix = vec![vec![None; l]; l];
    for (i, matrix_row) in matrix.iter_mut().enumerate() {
        matrix_row[i] = Some(1.0);
    }
    for i in 0..l {
        for j in (i + 1)..l {
            let mut sum = 0.0;
            let mut n = 0usize;
            for qid in run.qids() {
                let (Some(la), Some(lb)) = (run.get(&qid, &langs[i]), run.get(&qid, &langs[j]))
                else {
                    continue;
                };
                match rank_correlation_at_k(la, lb, k) {
                    Ok(rc) => {
                        sum += rc;
                        n += 1;
                    }
                    Err(Error::UndefinedCorrelation(_)) => {}
                    Err(e) => return Err(e),
                }
            }
            if n > 0 {
                let mean = sum / n as f64;
                matrix[i][j] = Some(mean);
                matrix[j][i] = Some(mean);
            }
        }
    }
    Ok((langs, matrix))
}

/// Query-language x document-language matrix: cell (qlang, dlang) is the
/// fraction of top-k retrieved documents, pooled over all queries in qlang,
/// whose language is dlang. Rows sum to 1 (or 0 for languages with no
/// retrieved documents). The language set is the union of run query
/// languages and corpus document languages.
pub fn language_correlation_matrix(
    run: &Run,
    corpus: &Corpus,
    k: usize,
) -> Result<(Vec<LanguageCode>, Vec<Vec<f64>>)> {
    let mut lang_set: BTreeSet<LanguageCode> = run.languages().into_iter().collect();
    lang_set.extend(corpus.languages());
    let langs: Vec<LanguageCode> = lang_set.into_iter().collect();
    let idx: BTreeMap<&LanguageCode, usize> = langs.iter().enumerate().map(|(i, l)| (l, i)).collect();

    let mut counts = vec![vec![0u64; langs.len()]; langs.len()];
    for list in run.iter() {
        let qi = idx[&list.qlang];
        for docid in list.top_k(k) {
            let Some(doc) = corpus.get(docid) else {
                return Err(Error::UnknownDocId(docid.to_string()));
            };
            counts[qi][idx[&doc.lang]] += 1;
        }
    }
    let matrix = counts
        .into_iter()
        .map(|row| {
            let total: u64 = row.iter().sum();
            if total == 0 {
                vec![0.0; row.len()]
            } else {
                row.into_iter().map(|c| c as f64 / total as f64).collect()
            }
        })
        .collect();
    Ok((langs, matrix))
}

// ---------------------------------------------------------------------------
// Fairness report
// ---------------------------------------------------------------------------

/// Per-language MRC values, the language-pair matrix, and per-query RC
/// values for one run family.
#[derive(Debug, Clone)]
pub struct FairnessReport {
    pub k: usize,
    pub languages: Vec<LanguageCode>,
    pub mrc: BTreeMap<LanguageCode, f64>,
    pub matrix: Vec<Vec<Option<f64>>>,
    pub per_query_rc: BTreeMap<(String, LanguageCode), f64>,
}

impl FairnessReport {
    /// Mean MRC over the languages that have a defined value.
    pub fn mean_mrc(&self) -> Option<f64> {
        if self.mrc.is_empty() {
            return None;
        }
        Some(self.mrc.values().sum::<f64>() / self.mrc.len() as f64)
    }
}

/// Compute the full fairness report for a run family at cutoff k.
pub fn fairness_report(run: &Run, k: usize) -> Result<FairnessReport> {
    let (languages, matrix) = mrc_matrix(run, k)?;
    let mrc = mrc_at_k(run, k)?;
    let mut per_query_rc = BTreeMap::new();
    for qid in run.qids() {
        for lang in run.languages() {
            if run.get(&qid, &lang).is_none() {
                continue;
            }
            match rc_for_language(run, &qid, &lang, k) {
                Ok(rc) => {
                    per_query_rc.insert((qid.clone(), lang.clone()), rc);
                }
                Err(Error::UndefinedCorrelation(_)) => {}
                Err(e) => return Err(e),
            }
        }
    }
    for value in mrc.values() {
        debug_assert!((-1.0..=1.0).contains(value));
    }
    Ok(FairnessReport {
        k,
        languages,
        mrc,
        matrix,
        per_query_rc,
    })
}

// ---------------------------------------------------------------------------
// CSV emission
// ---------------------------------------------------------------------------

/// Write an L x L matrix with language-code headers. `None` cells are left
/// empty.
pub fn write_matrix_csv<W: std::io::Write>(
    mut w: W,
    langs: &[LanguageCode],
    matrix: &[Vec<Option<f64>>],
) -> Result<()> {
    write!(w, "lang")?;
    for l in langs {
        write!(w, ",{l}")?;
    }
    writeln!(w)?;
    for (i, row) in matrix.iter().enumerate() {
        write!(w, "{}", langs[i])?;
        for cell in row {
            match cell {
                Some(v) => write!(w, ",{v}")?,
                None => write!(w, ",")?,
            }
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Write the per-language metric CSV `lang,mrr,recall,mrc`. A `scale` of
/// 100 produces the x100 report convention.
pub fn write_per_language_csv<W: std::io::Write>(
    mut w: W,
    rows: &[(LanguageCode, f64, f64, Option<f64>)],
    scale: f64,
) -> Result<()> {
    writeln!(w, "lang,mrr,recall,mrc")?;
    for (lang, mrr, recall, mrc) in rows {
        match mrc {
            Some(m) => writeln!(w, "{lang},{},{},{}", mrr * scale, recall * scale, m * scale)?,
            None => writeln!(w, "{lang},{},{},", mrr * scale, recall * scale)?,
        }
    }
    Ok(())
}
