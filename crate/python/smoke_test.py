#!/usr/bin/env python3
"""Smoke test for the rankparity Python extension.

Build the extension first:

    cargo build --release -p rankparity-py

then run this script from the repository root:

    python3 python/smoke_test.py
"""

import math
import shutil
import sys
import tempfile
from pathlib import Path


def locate_extension():
    root = Path(__file__).resolve().parent.parent
    candidates = [
        root / "target" / "release" / "librankparity.so",
        root / "target" / "debug" / "librankparity.so",
        root / "target" / "release" / "librankparity.dylib",
        root / "target" / "debug" / "librankparity.dylib",
    ]
    built = [p for p in candidates if p.exists()]
    if not built:
        sys.exit(
            "extension not built; run `cargo build --release -p rankparity-py` first"
        )
    # Prefer the most recently built artifact.
    return max(built, key=lambda p: p.stat().st_mtime)


def import_module():
    lib = locate_extension()
    staging = Path(tempfile.mkdtemp(prefix="rankparity_py_"))
    suffix = ".so" if lib.suffix == ".so" else ".so"  # CPython loads .so on mac too
    shutil.copy2(lib, staging / f"rankparity{suffix}")
    sys.path.insert(0, str(staging))
    import rankparity

    return rankparity


def approx(a, b, tol=1e-9):
    assert abs(a - b) <= tol, f"{a} != {b} (tol {tol})"


def main():
    rp = import_module()

    # Tokenization.
    assert rp.tokenize("The QUICK fox", "en") == ["the", "quick", "fox"]
    assert rp.tokenize("", "en") == []
    assert rp.tokenize("Καλημέρα κόσμε", "el") == ["καλημέρα", "κόσμε"]

    # Metric spot checks.
    approx(rp.spearman([1.0, 2.0, 3.0], [2.0, 1.0, 3.0]), 0.5)
    approx(rp.spearman([1.0, 2.0, 3.0], [3.0, 2.0, 1.0]), -1.0)
    approx(rp.kl_divergence([1.0, 0.0], [0.5, 0.5], 0.0), math.log(2.0))
    p = rp.softmax([1000.0, 1000.0 + math.log(3.0)])
    approx(p[0], 0.25, 1e-12)
    approx(p[1], 0.75, 1e-12)
    approx(rp.rank_correlation(["a", "b", "c"], ["a", "b", "c"], 3), 1.0)
    approx(rp.rank_correlation(["a1", "a2", "a3"], ["b1", "b2", "b3"], 3), -27.0 / 31.0)

    # Synthetic benchmark + BM25.
    corpus, queries, qrels = rp.generate_synthetic(
        langs=3, queries=12, docs_per_query=2, vocab_size=60, overlap=0.3, seed=11
    )
    assert len(corpus) == 48  # relevant + distractors
    assert queries.num_queries() == 12 and queries.num_languages() == 3
    complete, missing = queries.validate()
    assert complete and not missing

    index = rp.Bm25Index.build(corpus)
    assert index.num_docs() == 48
    bm25_run = rp.Run("bm25")
    for qid, lang, text in queries.items():
        bm25_run.add_list(qid, lang, index.search(qid, lang, text, k=50))
    bm25_mrr = rp.mrr_at_k(bm25_run, qrels, 50)
    bm25_mrc = rp.mrc_at_k(bm25_run, 5)
    assert 0.0 <= bm25_mrr <= 1.0
    assert all(-1.0 <= v <= 1.0 for v in bm25_mrc.values())

    # Dense training with the KL alignment loss (tiny budget).
    model = rp.Encoder.random(dim=32, hash_buckets=1024, hash_seed=0, seed=11)
    trained, log = rp.train(
        model, corpus, queries, qrels,
        loss="lakda", epochs=40, batch_size=8, learning_rate=20.0, seed=11,
    )
    assert len(log) > 0
    first_joint = log[0][4]
    last_joint = log[-1][4]
    assert last_joint < first_joint, f"joint loss did not fall: {first_joint} -> {last_joint}"

    emb = rp.embed_corpus(trained, corpus)
    assert len(emb) == len(corpus) and emb.dim == 32
    dense_run = rp.Run("dense")
    for qid, lang, text in queries.items():
        dense_run.add_list(qid, lang, rp.search_dense(trained, emb, qid, lang, text, k=50))
    dense_mrc = rp.mrc_at_k(dense_run, 5)
    mean_bm25 = sum(bm25_mrc.values()) / len(bm25_mrc)
    mean_dense = sum(dense_mrc.values()) / len(dense_mrc)
    assert mean_dense > mean_bm25, f"dense MRC {mean_dense} not above bm25 {mean_bm25}"

    # Language matrix rows are stochastic.
    langs, matrix = rp.language_correlation_matrix(bm25_run, corpus, 50)
    for row in matrix:
        s = sum(row)
        assert s == 0.0 or abs(s - 1.0) < 1e-12

    # File round-trips through a scratch directory.
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        corpus.save(str(tmp / "corpus.jsonl"))
        queries.save(str(tmp / "queries.tsv"))
        qrels.save(str(tmp / "qrels.txt"))
        corpus2 = rp.Corpus.load(str(tmp / "corpus.jsonl"))
        assert len(corpus2) == len(corpus)
        qrels2, warnings = rp.Qrels.load(str(tmp / "qrels.txt"))
        assert not warnings and len(qrels2) == len(qrels)

        dense_run.save(str(tmp / "runs"))
        reread = rp.Run.load_dir(str(tmp / "runs"))
        assert len(reread) == len(dense_run)
        assert reread.languages() == dense_run.languages()

        trained.save(str(tmp / "model.bin"))
        reloaded = rp.Encoder.load(str(tmp / "model.bin"))
        assert reloaded.encode("check", "en") == trained.encode("check", "en")

    print("rankparity python smoke test: OK")
    print(f"  bm25 mean MRC@5  = {mean_bm25:+.4f}")
    print(f"  dense mean MRC@5 = {mean_dense:+.4f}")


if __name__ == "__main__":
    main()
