//! Structural checks on the fairness aggregation: the per-language MRC and
//! the language-pair matrix against a direct recomputation from pair
//! correlations, and the family-overlap ordering the matrix is meant to
//! surface.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rankparity_core::bm25::{build_index, search, BM25Params};
use rankparity_core::corpus::{Corpus, Document, LanguageCode, ParallelQuerySet, Query};
use rankparity_core::metrics::{
    mrc_at_k, mrc_matrix, rank_correlation_at_k, rc_for_language, RankedList, Run,
};
use rankparity_core::Error;

fn lang(code: &str) -> LanguageCode {
    LanguageCode::new(code).unwrap()
}

/// Random run family over at most 5 languages and 10 qids.
fn random_run(rng: &mut ChaCha8Rng) -> Run {
    let langs = ["de", "en", "fr", "it", "pl"];
    let n_langs = rng.random_range(2..=5usize);
    let n_qids = rng.random_range(1..=10usize);
    let pool: Vec<String> = (0..12).map(|i| format!("d{i:02}")).collect();
    let mut run = Run::new("random");
    for q in 0..n_qids {
        for l in langs.iter().take(n_langs) {
            // Some (qid, lang) cells are deliberately missing.
            if rng.random_bool(0.15) {
                continue;
            }
            let mut docs = pool.clone();
            docs.shuffle(rng);
            docs.truncate(rng.random_range(0..=8usize));
            let entries = docs
                .iter()
                .enumerate()
                .map(|(i, d)| (d.clone(), (docs.len() - i) as f64))
                .collect();
            run.insert(RankedList::new(format!("q{q}"), lang(l), entries).unwrap())
                .unwrap();
        }
    }
    run
}

/// The per-language MRC, its per-query values, and every matrix cell must
/// equal a direct recomputation over all pair correlations.
#[test]
fn mrc_aggregation_matches_direct_recomputation() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for trial in 0..200 {
        let run = random_run(&mut rng);
        if run.languages().len() < 2 {
            continue;
        }
        let k = rng.random_range(1..=5usize);

        // Direct per-(qid, lang) mean over other languages.
        let mut per_query: BTreeMap<(String, LanguageCode), f64> = BTreeMap::new();
        for qid in run.qids() {
            for a in run.languages() {
                let Some(list_a) = run.get(&qid, &a) else {
                    continue;
                };
                let mut sum = 0.0;
                let mut n = 0usize;
                for b in run.languages() {
                    if a == b {
                        continue;
                    }
                    let Some(list_b) = run.get(&qid, &b) else {
                        continue;
                    };
                    match rank_correlation_at_k(list_a, list_b, k) {
                        Ok(rc) => {
                            sum += rc;
                            n += 1;
                        }
                        Err(Error::UndefinedCorrelation(_)) => {}
                        Err(e) => panic!("{e}"),
                    }
                }
                if n > 0 {
                    per_query.insert((qid.clone(), a.clone()), sum / n as f64);
                }
            }
        }

        // rc_for_language agrees cell by cell.
        for ((qid, a), want) in &per_query {
            let got = rc_for_language(&run, qid, a, k).unwrap();
            assert!((got - want).abs() < 1e-12, "trial {trial}: rc {got} vs {want}");
        }

        // mrc_at_k equals the mean of defined per-query values.
        let mrc = mrc_at_k(&run, k).unwrap();
        for a in run.languages() {
            let values: Vec<f64> = per_query
                .iter()
                .filter(|((_, l), _)| l == &a)
                .map(|(_, v)| *v)
                .collect();
            match mrc.get(&a) {
                Some(got) => {
                    let want = values.iter().sum::<f64>() / values.len() as f64;
                    assert!(
                        (got - want).abs() < 1e-12,
                        "trial {trial}: mrc({a}) {got} vs {want}"
                    );
                }
                None => assert!(values.is_empty(), "trial {trial}: {a} should be absent"),
            }
        }

        // Matrix cells equal the mean of pair correlations over qids.
        let (langs, matrix) = mrc_matrix(&run, k).unwrap();
        for (i, a) in langs.iter().enumerate() {
            for (j, b) in langs.iter().enumerate() {
                if i == j {
                    assert_eq!(matrix[i][j], Some(1.0));
                    continue;
                }
                let mut sum = 0.0;
                let mut n = 0usize;
                for qid in run.qids() {
                    let (Some(la), Some(lb)) = (run.get(&qid, a), run.get(&qid, b)) else {
                        continue;
                    };
                    match rank_correlation_at_k(la, lb, k) {
                        Ok(rc) => {
                            sum += rc;
                            n += 1;
                        }
                        Err(Error::UndefinedCorrelation(_)) => {}
                        Err(e) => panic!("{e}"),
                    }
                }
                match matrix[i][j] {
                    Some(got) => {
                        assert!(n > 0);
                        let want = sum / n as f64;
                        assert!((got - want).abs() < 1e-12, "cell ({a},{b}): {got} vs {want}");
                    }
                    None => assert_eq!(n, 0),
                }
            }
        }
    }
}

/// Corpus whose languages share vocabulary in tiers: a small global pool,
/// a larger family pool, and private tokens. Same construction as the
/// shipping generator, with the extra family tier.
fn family_tiered_benchmark() -> (Corpus, ParallelQuerySet) {
    // en, de Germanic; fr, es Romance.
    let languages = [("en", "ger"), ("de", "ger"), ("fr", "rom"), ("es", "rom")];
    const VOCAB: usize = 40;
    const GLOBAL: usize = 4; // ids [0, 4) shared by everyone
    const FAMILY: usize = 16; // ids [4, 16) shared within a family
    let render = |lang: &str, family: &str, id: usize| -> String {
        if id < GLOBAL {
            format!("xx1t{id:03}")
        } else if id < FAMILY {
            format!("{family}1t{id:03}")
        } else {
            format!("{lang}1t{id:03}")
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut corpus = Corpus::new();
    let mut queries = ParallelQuerySet::new();
    for q in 0..30 {
        let topic = rand::seq::index::sample(&mut rng, VOCAB, 8).into_vec();
        let qid = format!("q{q:03}");
        for (l, fam) in languages {
            let text: Vec<String> = topic.iter().map(|&t| render(l, fam, t)).collect();
            queries.push(Query::new(&qid, lang(l), text.join(" "))).unwrap();
        }
        for (m, (l, fam)) in languages.iter().enumerate() {
            let mut tokens: Vec<String> = topic.iter().map(|&t| render(l, fam, t)).collect();
            for _ in 0..12 {
                tokens.push(render(l, fam, rng.random_range(0..VOCAB)));
            }
            tokens.shuffle(&mut rng);
            corpus
                .push(Document::new(format!("d{q:03}r{m}"), lang(l), tokens.join(" ")))
                .unwrap();
        }
    }
    (corpus, queries)
}

/// Languages sharing a family tier produce more consistent rankings than
/// cross-family pairs.
#[test]
fn family_tiered_overlap_orders_the_matrix() {
    let (corpus, queries) = family_tiered_benchmark();
    let index = build_index(&corpus, BM25Params::default()).unwrap();
    let mut run = Run::new("bm25");
    for q in queries.iter() {
        run.insert(search(&index, q, 100).unwrap()).unwrap();
    }
    let (langs, matrix) = mrc_matrix(&run, 5).unwrap();

    let family_of = |l: &LanguageCode| match l.as_str() {
        "en" | "de" => "ger",
        _ => "rom",
    };
    let mut within = Vec::new();
    let mut across = Vec::new();
    for i in 0..langs.len() {
        for j in (i + 1)..langs.len() {
            let cell = matrix[i][j].expect("every pair defined");
            if family_of(&langs[i]) == family_of(&langs[j]) {
                within.push(cell);
            } else {
                across.push(cell);
            }
        }
    }
    assert_eq!(within.len(), 2);
    assert_eq!(across.len(), 4);
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(
        mean(&within) > mean(&across),
        "within-family mean {} not above cross-family mean {}",
        mean(&within),
        mean(&across)
    );
}
