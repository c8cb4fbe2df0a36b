//! Training objectives with analytic gradients, a finite-difference
//! verifier, and the gradient-descent training loop with parallel-query
//! similarity telemetry.
//!
//! Three objectives are available: the contrastive retrieval loss over a
//! positive document and its negatives, an embedding MSE baseline between
//! parallel queries, and the KL-divergence alignment loss that matches the
//! two queries' score distributions over the batch document set. The joint
//! loss is `(1 - alpha) * retrieval + alpha * alignment`.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Corpus, Document, ParallelQuerySet, Qrels, Query};
use crate::dense::{dot, EncoderModel, SparseFeatures};
use crate::error::{Error, Result};

/// Which alignment term the joint loss uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlignLoss {
    /// Retrieval loss only.
    None,
    /// Mean squared error between parallel query embeddings.
    Mse,
    /// KL-divergence alignment of score distributions.
    Lakda,
}

impl std::fmt::Display for AlignLoss {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AlignLoss::None => write!(f, "vanilla"),
            AlignLoss::Mse => write!(f, "mse"),
            AlignLoss::Lakda => write!(f, "lakda"),
        }
    }
}

/// Loss and training-loop configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    /// Weight of the alignment term in the joint loss, in [0, 1].
    pub alpha: f64,
    /// Stabilizer added to the anchor distribution inside the KL log.
    pub epsilon: f64,
    /// Explicit hard negatives sampled per query.
    pub negatives_per_query: usize,
    /// Reuse other items' positives as negatives.
    pub use_in_batch_negatives: bool,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub align: AlignLoss,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            alpha: 0.5,
            epsilon: 1e-10,
            negatives_per_query: 0,
            use_in_batch_negatives: true,
            learning_rate: 50.0,
            epochs: 200,
            batch_size: 16,
            seed: 7,
            align: AlignLoss::Lakda,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidConfig(format!(
                "alpha must be in [0, 1], got {}",
                self.alpha
            )));
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(Error::InvalidConfig("epsilon must be positive".into()));
        }
        if self.learning_rate.is_nan() || self.learning_rate < 0.0 {
            return Err(Error::InvalidConfig("learning_rate must be >= 0".into()));
        }
        if self.epochs < 1 {
            return Err(Error::InvalidConfig("epochs must be >= 1".into()));
        }
        if self.use_in_batch_negatives && self.batch_size < 2 {
            return Err(Error::InvalidConfig(
                "batch_size must be >= 2 with in-batch negatives".into(),
            ));
        }
        Ok(())
    }
}

/// One training example: a query, its positive document, optional explicit
/// negatives, and one sampled parallel query (same qid, different language).
#[derive(Debug, Clone)]
pub struct BatchItem {
    pub query: Query,
    pub positive: Document,
    pub negatives: Vec<Document>,
    pub parallel: Option<Query>,
}

/// A batch of training examples.
#[derive(Debug, Clone)]
pub struct TrainingBatch {
    items: Vec<BatchItem>,
}

impl TrainingBatch {
    pub fn new(items: Vec<BatchItem>) -> Result<Self> {
        for item in &items {
            if let Some(par) = &item.parallel {
                if par.qid != item.query.qid {
                    return Err(Error::InvalidConfig(format!(
                        "parallel query qid {:?} differs from anchor qid {:?}",
                        par.qid, item.query.qid
                    )));
                }
                if par.lang == item.query.lang {
                    return Err(Error::InvalidConfig(format!(
                        "parallel query for {:?} must differ in language",
                        item.query.qid
                    )));
                }
            }
        }
        Ok(TrainingBatch { items })
    }

    pub fn items(&self) -> &[BatchItem] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Parameter gradients, same shape as the model projection.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    dim: usize,
    data: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(model: &EncoderModel) -> Self {
        Gradients {
            dim: model.dim(),
            data: vec![0.0; model.num_params()],
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Accumulate `scale * outer(features, upstream)`; embeddings are linear
    /// in the projection, so this is the exact parameter gradient of any
    /// loss expressed through an embedding.
    fn add_outer(&mut self, features: &SparseFeatures, upstream: &[f64], scale: f64) {
        for (bucket, value) in features.iter() {
            let row = &mut self.data[bucket as usize * self.dim..(bucket as usize + 1) * self.dim];
            for (g, &u) in row.iter_mut().zip(upstream) {
                *g += scale * value * u;
            }
        }
    }

    /// self += scale * other
    fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
    }

    fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }
}

/// Numerically stable softmax with max-subtraction. Entries are positive
/// and sum to 1 within 1e-12.
pub fn softmax(scores: &[f64]) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::EmptyInput("softmax of an empty vector".into()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("softmax input".into()));
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|&s| (s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// KL divergence `Σ p_b[j] · log(p_b[j] / (p_a[j] + epsilon))` with the
/// convention 0·log 0 = 0. `epsilon` is added to the reference (denominator)
/// side only.
pub fn kl_divergence(p_b: &[f64], p_a: &[f64], epsilon: f64) -> Result<f64> {
    if p_b.len() != p_a.len() {
        return Err(Error::DimensionMismatch {
            expected: p_b.len(),
            got: p_a.len(),
        });
    }
    let mut sum = 0.0;
    for (&pb, &pa) in p_b.iter().zip(p_a) {
        if pb > 0.0 {
            sum += pb * (pb / (pa + epsilon)).ln();
        }
    }
    Ok(sum)
}

// ---------------------------------------------------------------------------
// Encoded batch cache
// ---------------------------------------------------------------------------

struct EncodedText {
    feat: SparseFeatures,
    emb: Vec<f64>,
}

struct EncodedItem {
    qid: String,
    query: EncodedText,
    pos_docid: String,
    positive: EncodedText,
    negatives: Vec<(String, EncodedText)>,
    parallel: Option<EncodedText>,
}

fn encode_text(model: &EncoderModel, text: &str, lang: &crate::corpus::LanguageCode) -> EncodedText {
    let feat = model.featurize(text, lang);
    let emb = model.encode_features(&feat);
    EncodedText { feat, emb }
}

fn encode_batch(model: &EncoderModel, batch: &TrainingBatch) -> Vec<EncodedItem> {
    batch
        .items()
        .iter()
        .map(|item| EncodedItem {
            qid: item.query.qid.clone(),
            query: encode_text(model, &item.query.text, &item.query.lang),
            pos_docid: item.positive.id.clone(),
            positive: encode_text(model, &item.positive.text, &item.positive.lang),
            negatives: item
                .negatives
                .iter()
                .map(|d| (d.id.clone(), encode_text(model, &d.text, &d.lang)))
                .collect(),
            parallel: item
                .parallel
                .as_ref()
                .map(|q| encode_text(model, &q.text, &q.lang)),
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Retrieval (contrastive) loss
// ---------------------------------------------------------------------------

/// Contrastive negative log-likelihood of each positive among its
/// candidates. Per-item candidates are the item's own positive, its explicit
/// negatives, and (when enabled) the other items' positives. In-batch
/// candidates from items sharing the anchor's qid are skipped: a parallel
/// query's positive is relevant to the anchor as well, so contrasting
/// against it would push the query away from its own relevant documents.
/// Duplicate docids are also skipped.
pub fn dpr_loss(
    batch: &TrainingBatch,
    model: &EncoderModel,
    use_in_batch_negatives: bool,
) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("loss over an empty batch".into()));
    }
    let encoded = encode_batch(model, batch);
    let n = encoded.len() as f64;
    let mut loss = 0.0;
    let mut grads = Gradients::zeros_like(model);

    for (i, item) in encoded.iter().enumerate() {
        // Candidate index 0 is always the positive.
        let mut cands: Vec<(&str, &EncodedText)> = vec![(item.pos_docid.as_str(), &item.positive)];
        let mut seen: BTreeSet<&str> = BTreeSet::new();
        seen.insert(item.pos_docid.as_str());
        for (docid, enc) in &item.negatives {
            if seen.insert(docid) {
                cands.push((docid, enc));
            }
        }
        if use_in_batch_negatives {
            for (j, other) in encoded.iter().enumerate() {
                if j != i && other.qid != item.qid && seen.insert(other.pos_docid.as_str()) {
                    cands.push((other.pos_docid.as_str(), &other.positive));
                }
            }
        }
        if cands.len() < 2 {
            return Err(Error::DegenerateBatch(format!(
                "item {i} has no negatives in scope (enable in-batch negatives or add explicit ones)"
            )));
        }

        let sims: Vec<f64> = cands.iter().map(|(_, d)| dot(&item.query.emb, &d.emb)).collect();
        let max = sims.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + sims.iter().map(|&s| (s - max).exp()).sum::<f64>().ln();
        loss += (lse - sims[0]) / n;

        let probs: Vec<f64> = sims.iter().map(|&s| (s - lse).exp()).collect();
        let mut q_upstream = vec![0.0; model.dim()];
        for (c, (_, doc)) in cands.iter().enumerate() {
            let w = (probs[c] - if c == 0 { 1.0 } else { 0.0 }) / n;
            for (u, &d) in q_upstream.iter_mut().zip(&doc.emb) {
                *u += w * d;
            }
            grads.add_outer(&doc.feat, &item.query.emb, w);
        }
        grads.add_outer(&item.query.feat, &q_upstream, 1.0);
    }

    Ok((loss, grads))
}

// ---------------------------------------------------------------------------
// MSE alignment baseline
// ---------------------------------------------------------------------------

/// Mean over items (with a parallel query) of the per-coordinate mean
/// squared difference between the two query embeddings.
pub fn mse_loss(batch: &TrainingBatch, model: &EncoderModel) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("loss over an empty batch".into()));
    }
    let encoded = encode_batch(model, batch);
    let mut grads = Gradients::zeros_like(model);
    let pairs: Vec<&EncodedItem> = encoded.iter().filter(|e| e.parallel.is_some()).collect();
    if pairs.is_empty() {
        log::debug!("mse_loss: batch has no parallel queries; loss is 0");
        return Ok((0.0, grads));
    }
    let n = pairs.len() as f64;
    let dim = model.dim() as f64;
    let mut loss = 0.0;
    for item in pairs {
        let par = item.parallel.as_ref().unwrap();
        let diff: Vec<f64> = item
            .query
            .emb
            .iter()
            .zip(&par.emb)
            .map(|(a, b)| a - b)
            .collect();
        loss += diff.iter().map(|d| d * d).sum::<f64>() / dim / n;
        let upstream: Vec<f64> = diff.iter().map(|d| 2.0 * d / dim / n).collect();
        grads.add_outer(&item.query.feat, &upstream, 1.0);
        grads.add_outer(&par.feat, &upstream, -1.0);
    }
    Ok((loss, grads))
}

// ---------------------------------------------------------------------------
// KL-divergence alignment loss
// ---------------------------------------------------------------------------

/// The shared document set for the alignment loss: the batch's positives
/// followed by its explicit negatives, deduplicated by docid.
fn batch_documents(encoded: &[EncodedItem]) -> Vec<(&str, &EncodedText)> {
    let mut docs: Vec<(&str, &EncodedText)> = Vec::new();
    let mut seen: BTreeSet<&str> = BTreeSet::new();
    for item in encoded {
        if seen.insert(item.pos_docid.as_str()) {
            docs.push((item.pos_docid.as_str(), &item.positive));
        }
    }
    for item in encoded {
        for (docid, enc) in &item.negatives {
            if seen.insert(docid) {
                docs.push((docid, enc));
            }
        }
    }
    docs
}

/// Mean KL divergence between the parallel query's and the anchor query's
/// softmax score distributions over the batch document set. Gradients flow
/// through both distributions and into the document embeddings.
pub fn lakda_loss(
    batch: &TrainingBatch,
    model: &EncoderModel,
    epsilon: f64,
) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("loss over an empty batch".into()));
    }
    let encoded = encode_batch(model, batch);
    let docs = batch_documents(&encoded);
    if docs.len() < 2 {
        return Err(Error::DegenerateBatch(format!(
            "alignment needs a document set of size >= 2, got {}",
            docs.len()
        )));
    }
    let mut grads = Gradients::zeros_like(model);
    let pairs: Vec<&EncodedItem> = encoded.iter().filter(|e| e.parallel.is_some()).collect();
    if pairs.is_empty() {
        log::debug!("lakda_loss: batch has no parallel queries; loss is 0");
        return Ok((0.0, grads));
    }
    let n = pairs.len() as f64;
    let mut loss = 0.0;

    for item in pairs {
        let par = item.parallel.as_ref().unwrap();
        let sim_a: Vec<f64> = docs.iter().map(|(_, d)| dot(&item.query.emb, &d.emb)).collect();
        let sim_b: Vec<f64> = docs.iter().map(|(_, d)| dot(&par.emb, &d.emb)).collect();
        let p_a = softmax(&sim_a)?;
        let p_b = softmax(&sim_b)?;
        let kl = kl_divergence(&p_b, &p_a, epsilon)?;
        loss += kl / n;

        // d kl / d sim_b[c] = p_b[c] (log(p_b[c]/(p_a[c]+eps)) - kl)
        // d kl / d sim_a[c] = p_a[c] (Σ_j p_a[j] p_b[j]/(p_a[j]+eps)
        //                              - p_b[c]/(p_a[c]+eps))
        let inner: f64 = p_a
            .iter()
            .zip(&p_b)
            .map(|(&pa, &pb)| pa * pb / (pa + epsilon))
            .sum();
        let ds_b: Vec<f64> = p_b
            .iter()
            .zip(&p_a)
            .map(|(&pb, &pa)| {
                if pb > 0.0 {
                    pb * ((pb / (pa + epsilon)).ln() - kl) / n
                } else {
                    0.0
                }
            })
            .collect();
        let ds_a: Vec<f64> = p_a
            .iter()
            .zip(&p_b)
            .map(|(&pa, &pb)| pa * (inner - pb / (pa + epsilon)) / n)
            .collect();

        let mut up_q = vec![0.0; model.dim()];
        let mut up_par = vec![0.0; model.dim()];
        for (c, (_, doc)) in docs.iter().enumerate() {
            for ((uq, up), &d) in up_q.iter_mut().zip(up_par.iter_mut()).zip(&doc.emb) {
                *uq += ds_a[c] * d;
                *up += ds_b[c] * d;
            }
            let mut up_doc = vec![0.0; model.dim()];
            for ((u, &q), &p) in up_doc.iter_mut().zip(&item.query.emb).zip(&par.emb) {
                *u = ds_a[c] * q + ds_b[c] * p;
            }
            grads.add_outer(&doc.feat, &up_doc, 1.0);
        }
        grads.add_outer(&item.query.feat, &up_q, 1.0);
        grads.add_outer(&par.feat, &up_par, 1.0);
    }

    Ok((loss, grads))
}

// ---------------------------------------------------------------------------
// Joint loss
// ---------------------------------------------------------------------------

/// Joint loss value with its components, for telemetry.
#[derive(Debug, Clone, Copy)]
pub struct JointLossParts {
    pub joint: f64,
    pub retrieval: f64,
    pub alignment: f64,
}

/// `(1 - alpha) * retrieval + alpha * alignment`, with the alignment term
/// selected by `cfg.align`. With `AlignLoss::None` the result is exactly the
/// retrieval loss.
pub fn joint_loss(
    batch: &TrainingBatch,
    model: &EncoderModel,
    cfg: &LossConfig,
) -> Result<(f64, Gradients)> {
    let (parts, grads) = joint_loss_parts(batch, model, cfg)?;
    Ok((parts.joint, grads))
}

pub fn joint_loss_parts(
    batch: &TrainingBatch,
    model: &EncoderModel,
    cfg: &LossConfig,
) -> Result<(JointLossParts, Gradients)> {
    cfg.validate()?;
    let (retrieval, mut grads) = dpr_loss(batch, model, cfg.use_in_batch_negatives)?;
    let (alignment, align_grads) = match cfg.align {
        AlignLoss::None => {
            return Ok((
                JointLossParts {
                    joint: retrieval,
                    retrieval,
                    alignment: 0.0,
                },
                grads,
            ))
        }
        AlignLoss::Mse => mse_loss(batch, model)?,
        AlignLoss::Lakda => lakda_loss(batch, model, cfg.epsilon)?,
    };
    let joint = (1.0 - cfg.alpha) * retrieval + cfg.alpha * alignment;
    grads.scale(1.0 - cfg.alpha);
    grads.add_scaled(&align_grads, cfg.alpha);
    Ok((
        JointLossParts {
            joint,
            retrieval,
            alignment,
        },
        grads,
    ))
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

/// One telemetry record per optimization step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub loss_dpr: f64,
    pub loss_align: f64,
    pub loss_joint: f64,
    /// Mean cosine similarity between each item's anchor and parallel query
    /// embeddings (0 when the batch has no parallel pairs).
    pub mean_parallel_cosine: f64,
    /// Mean raw dot product of the same pairs; kept in the in-memory log
    /// only, the CSV carries the bounded cosine.
    pub mean_parallel_dot: f64,
}

/// Step-by-step training telemetry.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    pub steps: Vec<StepRecord>,
}

impl TrainingLog {
    /// CSV emission: `step,epoch,loss_dpr,loss_align,loss_joint,mean_parallel_cosine`.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "step,epoch,loss_dpr,loss_align,loss_joint,mean_parallel_cosine")?;
        for s in &self.steps {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                s.step, s.epoch, s.loss_dpr, s.loss_align, s.loss_joint, s.mean_parallel_cosine
            )?;
        }
        Ok(())
    }

    pub fn final_mean_parallel_cosine(&self) -> Option<f64> {
        self.steps.last().map(|s| s.mean_parallel_cosine)
    }

    /// Mean parallel cosine per step, smoothed by a trailing moving average
    /// over `window` steps.
    pub fn smoothed_parallel_cosine(&self, window: usize) -> Vec<f64> {
        let raw: Vec<f64> = self.steps.iter().map(|s| s.mean_parallel_cosine).collect();
        let window = window.max(1);
        raw.iter()
            .enumerate()
            .map(|(i, _)| {
                let lo = i.saturating_sub(window - 1);
                let slice = &raw[lo..=i];
                slice.iter().sum::<f64>() / slice.len() as f64
            })
            .collect()
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot(a, b) / (na * nb)
}

/// Train with plain full-gradient descent per batch. Deterministic given
/// `cfg.seed`: shuffling, positive/negative sampling, and parallel-language
/// sampling all derive from it, and the sampler is reseeded with the master
/// seed at the start of every epoch (so with learning_rate = 0 the loss
/// sequence repeats identically across epochs). Parallel queries are
/// sampled (and their cosine logged) for every loss kind; items whose qid
/// has no other language skip the alignment term with one logged warning.
pub fn train(
    model: &EncoderModel,
    corpus: &Corpus,
    queries: &ParallelQuerySet,
    qrels: &Qrels,
    cfg: &LossConfig,
) -> Result<(EncoderModel, TrainingLog)> {
    cfg.validate()?;
    // Trainable items: queries with at least one relevant document present
    // in the corpus.
    let mut skeleton: Vec<(&Query, Vec<&str>)> = Vec::new();
    let mut lonely_qids: BTreeSet<&str> = BTreeSet::new();
    for query in queries.iter() {
        let docids: Vec<&str> = qrels
            .relevant_docs(&query.qid)
            .into_iter()
            .filter(|d| corpus.get(d).is_some())
            .collect();
        if docids.is_empty() {
            log::warn!(
                "skipping query ({}, {}): no relevant documents in corpus",
                query.qid,
                query.lang
            );
            continue;
        }
        if queries.languages_for_qid(&query.qid).len() < 2 {
            lonely_qids.insert(&query.qid);
        }
        skeleton.push((query, docids));
    }
    if skeleton.is_empty() {
        return Err(Error::EmptyInput("no trainable queries".into()));
    }
    if !lonely_qids.is_empty() {
        log::warn!(
            "{} qid(s) have a single language; their items skip the alignment term",
            lonely_qids.len()
        );
    }
    skeleton.sort_by(|a, b| (&a.0.qid, &a.0.lang).cmp(&(&b.0.qid, &b.0.lang)));

    let all_docs = corpus.docs();
    let mut model = model.clone();
    let mut log = TrainingLog::default();
    let batch_size = cfg.batch_size.max(1);
    let mut step = 0usize;

    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut order: Vec<usize> = (0..skeleton.len()).collect();
        order.shuffle(&mut rng);

        for chunk in order.chunks(batch_size) {
            if chunk.len() < 2 && cfg.negatives_per_query == 0 && cfg.use_in_batch_negatives {
                log::debug!("dropping trailing batch of size {}", chunk.len());
                continue;
            }
            let mut items = Vec::with_capacity(chunk.len());
            for &idx in chunk {
                let (query, docids) = &skeleton[idx];
                let positive = corpus
                    .get(docids[rng.random_range(0..docids.len())])
                    .expect("relevant doc present")
                    .clone();
                let mut negatives = Vec::with_capacity(cfg.negatives_per_query);
                let mut guard = 0;
                while negatives.len() < cfg.negatives_per_query && guard < 1000 {
                    let cand = &all_docs[rng.random_range(0..all_docs.len())];
                    guard += 1;
                    if !qrels.is_relevant(&query.qid, &cand.id) {
                        negatives.push(cand.clone());
                    }
                }
                let others: Vec<_> = queries
                    .languages_for_qid(&query.qid)
                    .into_iter()
                    .filter(|l| l != &query.lang)
                    .collect();
                let parallel = if others.is_empty() {
                    None
                } else {
                    let lang = &others[rng.random_range(0..others.len())];
                    queries.get(&query.qid, lang).cloned()
                };
                items.push(BatchItem {
                    query: (*query).clone(),
                    positive,
                    negatives,
                    parallel,
                });
            }
            let batch = TrainingBatch::new(items)?;
            let (parts, grads) = joint_loss_parts(&batch, &model, cfg)?;

            // Telemetry before the update, from the same embeddings the
            // loss saw.
            let mut cos_sum = 0.0;
            let mut dot_sum = 0.0;
            let mut pairs = 0usize;
            for item in batch.items() {
                if let Some(par) = &item.parallel {
                    let qa = model.encode(&item.query.text, &item.query.lang);
                    let qb = model.encode(&par.text, &par.lang);
                    cos_sum += cosine(&qa, &qb);
                    dot_sum += dot(&qa, &qb);
                    pairs += 1;
                }
            }
            let (mean_cos, mean_dot) = if pairs == 0 {
                (0.0, 0.0)
            } else {
                (cos_sum / pairs as f64, dot_sum / pairs as f64)
            };

            for (p, &g) in model.projection_mut().iter_mut().zip(grads.as_slice()) {
                *p -= cfg.learning_rate * g;
            }

            log.steps.push(StepRecord {
                step,
                epoch,
                loss_dpr: parts.retrieval,
                loss_align: parts.alignment,
                loss_joint: parts.joint,
                mean_parallel_cosine: mean_cos,
                mean_parallel_dot: mean_dot,
            });
            step += 1;
        }
    }

    Ok((model, log))
}

// ---------------------------------------------------------------------------
// Finite-difference verification
// ---------------------------------------------------------------------------

/// Central finite differences on an arbitrary scalar function of a parameter
/// vector, over the given coordinates. Returns the max relative error with
/// denominator `max(|analytic|, |numeric|, 1e-8)`.
pub fn finite_diff_check_fn<F>(
    f: F,
    params: &mut [f64],
    analytic: &[f64],
    step: f64,
    coords: &[usize],
) -> Result<f64>
where
    F: Fn(&[f64]) -> f64,
{
    if step.is_nan() || step <= 0.0 {
        return Err(Error::InvalidConfig("finite-difference step must be positive".into()));
    }
    let mut max_err = 0.0f64;
    for &c in coords {
        let orig = params[c];
        params[c] = orig + step;
        let up = f(params);
        params[c] = orig - step;
        let down = f(params);
        params[c] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite(format!("loss at perturbed coordinate {c}")));
        }
        let numeric = (up - down) / (2.0 * step);
        let denom = analytic[c].abs().max(numeric.abs()).max(1e-8);
        max_err = max_err.max((analytic[c] - numeric).abs() / denom);
    }
    Ok(max_err)
}

/// Default number of coordinates the model-level checker probes.
pub const FD_CHECK_COORDS: usize = 200;

/// Verify a loss's analytic gradient against central finite differences.
/// Checks every parameter coordinate when the model is small; otherwise a
/// seeded sample of at least [`FD_CHECK_COORDS`] coordinates, biased toward
/// coordinates with nonzero analytic gradient.
pub fn finite_diff_check<F>(
    loss: F,
    model: &EncoderModel,
    step: f64,
    seed: u64,
) -> Result<f64>
where
    F: Fn(&EncoderModel) -> Result<(f64, Gradients)>,
{
    let (_, grads) = loss(model)?;
    let analytic = grads.as_slice().to_vec();
    let total = analytic.len();

    let coords: Vec<usize> = if total <= FD_CHECK_COORDS {
        (0..total).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut nonzero: Vec<usize> = (0..total).filter(|&i| analytic[i] != 0.0).collect();
        nonzero.shuffle(&mut rng);
        nonzero.truncate(FD_CHECK_COORDS);
        let mut picked: BTreeSet<usize> = nonzero.into_iter().collect();
        while picked.len() < FD_CHECK_COORDS {
            picked.insert(rng.random_range(0..total));
        }
        picked.into_iter().collect()
    };

    let mut scratch = model.clone();
    let mut max_err = 0.0f64;
    for c in coords {
        let orig = scratch.projection()[c];
        scratch.projection_mut()[c] = orig + step;
        let (up, _) = loss(&scratch)?;
        scratch.projection_mut()[c] = orig - step;
        let (down, _) = loss(&scratch)?;
        scratch.projection_mut()[c] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite(format!("loss at perturbed coordinate {c}")));
        }
        let numeric = (up - down) / (2.0 * step);
        let denom = analytic[c].abs().max(numeric.abs()).max(1e-8);
        max_err = max_err.max((analytic[c] - numeric).abs() / denom);
    }
    Ok(max_err)
}
