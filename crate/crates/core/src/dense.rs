//! Toy trainable bi-encoder with exact dot-product retrieval.
//!
//! Texts are featurized as L1-normalized hashed character 3-gram counts and
//! projected through a single trainable matrix shared by queries and
//! documents. Everything runs in f64 so analytic gradients can be verified
//! against finite differences.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::bm25::tokenize;
use crate::corpus::{Corpus, LanguageCode, Query};
use crate::error::{Error, Result};
use crate::metrics::RankedList;

/// Character n-gram width of the featurizer.
const NGRAM: usize = 3;
/// Standard deviation of random projection entries.
const INIT_STD: f64 = 1.0;

/// Sparse L1-normalized feature vector; indices are sorted and unique.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseFeatures {
    pub indices: Vec<u32>,
    pub values: Vec<f64>,
}

impl SparseFeatures {
    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.indices.iter().copied().zip(self.values.iter().copied())
    }
}

/// Seeded FNV-1a over the bytes of an n-gram. Stable across platforms.
fn fnv1a64(bytes: &[u8], seed: u64) -> u64 {
    let mut h = 0xcbf29ce484222325u64 ^ seed;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Trainable linear encoder over hashed character n-grams. One shared tower
/// encodes both queries and documents.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderModel {
    dim: usize,
    hash_buckets: usize,
    hash_seed: u64,
    /// hash_buckets x dim, row-major.
    projection: Vec<f64>,
}

impl EncoderModel {
    pub const DEFAULT_DIM: usize = 64;
    pub const DEFAULT_HASH_BUCKETS: usize = 4096;

    /// All-zero projection (useful for tests; every embedding is zero).
    pub fn zeros(dim: usize, hash_buckets: usize, hash_seed: u64) -> Self {
        EncoderModel {
            dim,
            hash_buckets,
            hash_seed,
            projection: vec![0.0; hash_buckets * dim],
        }
    }

    /// Gaussian random projection, deterministic in `init_seed`.
    pub fn random(dim: usize, hash_buckets: usize, hash_seed: u64, init_seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(init_seed);
        let projection = (0..hash_buckets * dim)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * INIT_STD
            })
            .collect();
        EncoderModel {
            dim,
            hash_buckets,
            hash_seed,
            projection,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn hash_buckets(&self) -> usize {
        self.hash_buckets
    }

    pub fn hash_seed(&self) -> u64 {
        self.hash_seed
    }

    pub fn projection(&self) -> &[f64] {
        &self.projection
    }

    pub fn projection_mut(&mut self) -> &mut [f64] {
        &mut self.projection
    }

    pub fn num_params(&self) -> usize {
        self.projection.len()
    }

    /// Hashed character 3-gram features of the tokenized text, L1-normalized
    /// by total n-gram count. Tokens shorter than the n-gram width
    /// contribute themselves as a single gram. Empty text gives a zero
    /// vector.
    pub fn featurize(&self, text: &str, lang: &LanguageCode) -> SparseFeatures {
        let tokens = tokenize(text, lang);
        let mut counts: BTreeMap<u32, u64> = BTreeMap::new();
        let mut total = 0u64;
        for token in tokens.iter() {
            let chars: Vec<char> = token.chars().collect();
            let mut bump = |gram: &str| {
                let bucket = (fnv1a64(gram.as_bytes(), self.hash_seed)
                    % self.hash_buckets as u64) as u32;
                *counts.entry(bucket).or_insert(0) += 1;
                total += 1;
            };
            if chars.len() < NGRAM {
                bump(token);
            } else {
                for window in chars.windows(NGRAM) {
                    bump(&window.iter().collect::<String>());
                }
            }
        }
        if total == 0 {
            return SparseFeatures::default();
        }
        let mut indices = Vec::with_capacity(counts.len());
        let mut values = Vec::with_capacity(counts.len());
        for (bucket, count) in counts {
            indices.push(bucket);
            values.push(count as f64 / total as f64);
        }
        SparseFeatures { indices, values }
    }

    /// Embed a pre-computed feature vector: projectionᵀ · features.
    pub fn encode_features(&self, features: &SparseFeatures) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (bucket, value) in features.iter() {
            let row = &self.projection[bucket as usize * self.dim..(bucket as usize + 1) * self.dim];
            for (o, &p) in out.iter_mut().zip(row) {
                *o += value * p;
            }
        }
        out
    }

    /// Embed a text. Pure in (parameters, text).
    pub fn encode(&self, text: &str, lang: &LanguageCode) -> Vec<f64> {
        self.encode_features(&self.featurize(text, lang))
    }
}

/// Dense embeddings for a document collection, rows in corpus order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    dim: usize,
    doc_ids: Vec<String>,
    data: Vec<f64>,
}

impl EmbeddingMatrix {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

/// Embed every document; deterministic, rows follow corpus order.
pub fn embed_corpus(model: &EncoderModel, corpus: &Corpus) -> EmbeddingMatrix {
    let rows: Vec<Vec<f64>> = corpus
        .docs()
        .par_iter()
        .map(|doc| model.encode(&doc.text, &doc.lang))
        .collect();
    let mut data = Vec::with_capacity(rows.len() * model.dim());
    for row in rows {
        data.extend(row);
    }
    EmbeddingMatrix {
        dim: model.dim(),
        doc_ids: corpus.iter().map(|d| d.id.clone()).collect(),
        data,
    }
}

/// Dot products of a query vector against every row, preserving row order.
pub fn score_all(qvec: &[f64], docs: &EmbeddingMatrix) -> Result<Vec<f64>> {
    if qvec.len() != docs.dim {
        return Err(Error::DimensionMismatch {
            expected: docs.dim,
            got: qvec.len(),
        });
    }
    Ok((0..docs.len())
        .map(|i| dot(qvec, docs.row(i)))
        .collect())
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Exact exhaustive top-k by descending dot product over all documents,
/// ties broken by ascending docid. No zero-score exclusion.
pub fn search_dense(
    model: &EncoderModel,
    query: &Query,
    docs: &EmbeddingMatrix,
    k: usize,
) -> Result<RankedList> {
    if k == 0 {
        return Err(Error::InvalidConfig("k must be >= 1".into()));
    }
    let qvec = model.encode(&query.text, &query.lang);
    let scores = score_all(&qvec, docs)?;
    let mut order: Vec<usize> = (0..docs.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then_with(|| docs.doc_ids[a].cmp(&docs.doc_ids[b]))
    });
    order.truncate(k);
    let entries = order
        .into_iter()
        .map(|i| (docs.doc_ids[i].clone(), scores[i]))
        .collect();
    RankedList::new(query.qid.clone(), query.lang.clone(), entries)
}

// ---------------------------------------------------------------------------
// Checkpointing
// ---------------------------------------------------------------------------

const CHECKPOINT_MAGIC: &[u8; 4] = b"RPCK";
const CHECKPOINT_VERSION: u32 = 1;

/// Save the model; the round-trip through [`load_model`] is bit-exact.
pub fn save_model(path: impl AsRef<Path>, model: &EncoderModel) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_u32::<LittleEndian>(CHECKPOINT_VERSION)?;
    w.write_u64::<LittleEndian>(model.dim as u64)?;
    w.write_u64::<LittleEndian>(model.hash_buckets as u64)?;
    w.write_u64::<LittleEndian>(model.hash_seed)?;
    for &v in &model.projection {
        w.write_u64::<LittleEndian>(v.to_bits())?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<EncoderModel> {
    let path_str = path.as_ref().display().to_string();
    let bad = |msg: &str| Error::BadFormat {
        path: path_str.clone(),
        msg: msg.into(),
    };
    let mut r = BufReader::new(File::open(&path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(bad("bad magic"));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != CHECKPOINT_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let dim = r.read_u64::<LittleEndian>()? as usize;
    let hash_buckets = r.read_u64::<LittleEndian>()? as usize;
    let hash_seed = r.read_u64::<LittleEndian>()?;
    let mut projection = Vec::with_capacity(hash_buckets * dim);
    for _ in 0..hash_buckets * dim {
        projection.push(f64::from_bits(r.read_u64::<LittleEndian>()?));
    }
    Ok(EncoderModel {
        dim,
        hash_buckets,
        hash_seed,
        projection,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Document;

    fn lang(code: &str) -> LanguageCode {
        LanguageCode::new(code).unwrap()
    }

    #[test]
    fn featurize_empty_text_is_zero_vector() {
        let model = EncoderModel::zeros(8, 64, 0);
        let f = model.featurize("", &lang("en"));
        assert_eq!(f.nnz(), 0);
        assert_eq!(model.encode("", &lang("en")), vec![0.0; 8]);
    }

    #[test]
    fn featurize_pure() {
        let model = EncoderModel::random(8, 64, 0, 1);
        let a = model.featurize("hello world", &lang("en"));
        let b = model.featurize("hello world", &lang("en"));
        assert_eq!(a, b);
    }

    #[test]
    fn featurize_abcd_two_grams() {
        // "abcd" -> {abc, bcd}; with a large bucket space the two grams do
        // not collide and each carries weight 0.5.
        let model = EncoderModel::zeros(4, 1 << 20, 0);
        let f = model.featurize("abcd", &lang("en"));
        assert_eq!(f.nnz(), 2);
        assert_eq!(f.values, vec![0.5, 0.5]);
    }

    #[test]
    fn featurize_l1_normalized() {
        let model = EncoderModel::zeros(4, 4096, 0);
        let f = model.featurize("the quick brown fox jumps", &lang("en"));
        let sum: f64 = f.values.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn featurize_short_token_is_single_gram() {
        let model = EncoderModel::zeros(4, 1 << 20, 0);
        let f = model.featurize("ab", &lang("en"));
        assert_eq!(f.nnz(), 1);
        assert_eq!(f.values, vec![1.0]);
    }

    #[test]
    fn encode_zero_projection_gives_zero() {
        let model = EncoderModel::zeros(8, 64, 0);
        assert_eq!(model.encode("anything at all", &lang("en")), vec![0.0; 8]);
    }

    #[test]
    fn encode_is_linear_in_features() {
        let model = EncoderModel::random(8, 256, 0, 2);
        let f = model.featurize("scaling check", &lang("en"));
        let base = model.encode_features(&f);
        let scaled = SparseFeatures {
            indices: f.indices.clone(),
            values: f.values.iter().map(|v| v * 2.5).collect(),
        };
        let out = model.encode_features(&scaled);
        for (a, b) in base.iter().zip(&out) {
            assert!((a * 2.5 - b).abs() < 1e-12);
        }
    }

    #[test]
    fn score_all_identity_matrix() {
        let docs = EmbeddingMatrix {
            dim: 2,
            doc_ids: vec!["d1".into(), "d2".into()],
            data: vec![1.0, 0.0, 0.0, 1.0],
        };
        assert_eq!(score_all(&[1.0, 2.0], &docs).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn score_all_dim_mismatch() {
        let docs = EmbeddingMatrix {
            dim: 2,
            doc_ids: vec!["d1".into()],
            data: vec![1.0, 0.0],
        };
        assert!(score_all(&[1.0, 2.0, 3.0], &docs).is_err());
    }

    #[test]
    fn score_all_orthogonal_is_zero() {
        let docs = EmbeddingMatrix {
            dim: 2,
            doc_ids: vec!["d1".into(), "d2".into()],
            data: vec![0.0, 1.0, 0.0, -2.0],
        };
        assert_eq!(score_all(&[1.0, 0.0], &docs).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn embed_corpus_rows_and_locality() {
        let model = EncoderModel::random(8, 256, 0, 3);
        let mut corpus = Corpus::new();
        corpus.push(Document::new("d1", lang("en"), "alpha beta")).unwrap();
        corpus.push(Document::new("d2", lang("en"), "gamma delta")).unwrap();
        let base = embed_corpus(&model, &corpus);
        assert_eq!(base.len(), 2);
        assert_eq!(base, embed_corpus(&model, &corpus));

        let mut changed = Corpus::new();
        changed.push(Document::new("d1", lang("en"), "alpha beta")).unwrap();
        changed.push(Document::new("d2", lang("en"), "something else")).unwrap();
        let after = embed_corpus(&model, &changed);
        assert_eq!(base.row(0), after.row(0));
        assert_ne!(base.row(1), after.row(1));
    }

    #[test]
    fn embed_empty_corpus() {
        let model = EncoderModel::zeros(4, 64, 0);
        let m = embed_corpus(&model, &Corpus::new());
        assert!(m.is_empty());
    }

    #[test]
    fn search_dense_full_order_and_ties() {
        let model = EncoderModel::zeros(2, 64, 0);
        // Duplicate embeddings tie; order must be ascending docid.
        let docs = EmbeddingMatrix {
            dim: 2,
            doc_ids: vec!["db".into(), "da".into(), "dc".into()],
            data: vec![1.0, 0.0, 1.0, 0.0, -1.0, 0.0],
        };
        // Zero model encodes the query to zero: all scores zero, pure
        // docid order, and no zero-exclusion.
        let list = search_dense(&model, &Query::new("q", lang("en"), "x"), &docs, 10).unwrap();
        let ids: Vec<&str> = list.entries().iter().map(|(d, _)| d.as_str()).collect();
        assert_eq!(ids, ["da", "db", "dc"]);
    }

    #[test]
    fn search_dense_top1_matches_argmax() {
        let model = EncoderModel::random(8, 256, 0, 4);
        let mut corpus = Corpus::new();
        for (id, text) in [("d1", "red green"), ("d2", "blue sky"), ("d3", "red sky")] {
            corpus.push(Document::new(id, lang("en"), text)).unwrap();
        }
        let docs = embed_corpus(&model, &corpus);
        let query = Query::new("q", lang("en"), "red sky");
        let list = search_dense(&model, &query, &docs, 1).unwrap();
        let qvec = model.encode(&query.text, &query.lang);
        let scores = score_all(&qvec, &docs).unwrap();
        let argmax = (0..scores.len())
            .max_by(|&a, &b| scores[a].total_cmp(&scores[b]))
            .unwrap();
        assert_eq!(list.entries()[0].0, docs.doc_ids()[argmax]);
    }

    #[test]
    fn checkpoint_roundtrip_bit_exact() {
        let model = EncoderModel::random(16, 512, 99, 5);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        save_model(&path, &model).unwrap();
        let loaded = load_model(&path).unwrap();
        assert_eq!(model.dim, loaded.dim);
        assert_eq!(model.hash_buckets, loaded.hash_buckets);
        assert_eq!(model.hash_seed, loaded.hash_seed);
        for (a, b) in model.projection.iter().zip(&loaded.projection) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
