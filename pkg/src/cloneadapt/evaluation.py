"""Retrieval measurement: MAP@R, BM25 and whitening baselines, NMI curves."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .embedding import EmbeddingMatrix, embed, normalize_rows
from .lexing import content_tokens, lex, profile_for


class EvalError(ValueError):
    pass


@dataclass
class EvalReport:
    map_at_r: float
    per_query_ap: list
    baseline: str = "embedding"
    skipped_singletons: int = 0
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "baseline": self.baseline,
            "map_at_r": self.map_at_r,
            "num_queries": len(self.per_query_ap),
            "skipped_singletons": self.skipped_singletons,
            "per_query_ap": self.per_query_ap,
            "config": self.config,
        }


def _rank_others(scores: np.ndarray, query: int) -> list[int]:
    """Indices ranked by descending score, ties to lower index; query excluded."""
    order = sorted(
        (j for j in range(scores.size) if j != query),
        key=lambda j: (-scores[j], j),
    )
    return order


def map_at_r_from_scores(score_fn, labels, baseline: str = "embedding") -> EvalReport:
    """Generic MAP@R given a per-query score function over all items.

    For query q with R = class size - 1:
    AP@R = (1/R) * sum_{n=1..R} hit(n) * precision@n over the top-R ranking.
    """
    labels = np.asarray(labels)
    n = labels.size
    class_sizes = {lab: int((labels == lab).sum()) for lab in np.unique(labels)}
    aps = []
    skipped = 0
    for q in range(n):
        R = class_sizes[labels[q]] - 1
        if R < 1:
            skipped += 1
            continue
        ranked = _rank_others(score_fn(q), q)[:R]
        hits = 0
        ap = 0.0
        for rank, j in enumerate(ranked, start=1):
            if labels[j] == labels[q]:
                hits += 1
                ap += hits / rank
        aps.append(ap / R)
    if skipped:
        warnings.warn(f"{skipped} singleton-class program(s) skipped as queries")
    if not aps:
        raise EvalError("no valid queries (all classes singleton)")
    return EvalReport(float(np.mean(aps)), aps, baseline, skipped)


def map_at_r(embeddings: EmbeddingMatrix, labels) -> EvalReport:
    """MAP@R of cosine-similarity retrieval over unit-norm embeddings."""
    if len(labels) != embeddings.vectors.shape[0]:
        raise EvalError("labels length mismatch")
    S = embeddings.vectors @ embeddings.vectors.T
    return map_at_r_from_scores(lambda q: S[q], labels)


def zero_shot_eval(head, features, ids, labels) -> EvalReport:
    """Embed with the given head and score retrieval; no target training."""
    emb = embed(features, head, ids)
    rep = map_at_r(emb, labels)
    rep.baseline = "zero_shot"
    return rep


def bm25_scores(docs: list[list[str]], k1: float = 1.2, b: float = 0.75) -> np.ndarray:
    """Pairwise Okapi BM25 score matrix: entry [q, d] scores document d for
    the token multiset of q. Diagonal is not special-cased."""
    n = len(docs)
    df: dict[str, int] = {}
    for doc in docs:
        for term in set(doc):
            df[term] = df.get(term, 0) + 1
    avgdl = np.mean([len(d) for d in docs]) if n else 0.0
    idf = {
        t: math.log((n - dfi + 0.5) / (dfi + 0.5) + 1.0) for t, dfi in df.items()
    }
    tfs = []
    for doc in docs:
        tf: dict[str, int] = {}
        for t in doc:
            tf[t] = tf.get(t, 0) + 1
        tfs.append(tf)
    S = np.zeros((n, n))
    for q in range(n):
        q_terms = tfs[q]
        for d in range(n):
            tf = tfs[d]
            dl = len(docs[d])
            score = 0.0
            for t in q_terms:
                f = tf.get(t, 0)
                if f == 0:
                    continue
                denom = f + k1 * (1 - b + b * dl / avgdl)
                score += idf[t] * f * (k1 + 1) / denom
            S[q, d] = score
    return S


def bm25_eval(corpus, labels, k1: float = 1.2, b: float = 0.75) -> EvalReport:
    """Okapi BM25 retrieval baseline over lexer content tokens."""
    docs = [
        content_tokens(lex(p.source, profile_for(p.language)))
        for p in corpus.programs
    ]
    S = bm25_scores(docs, k1=k1, b=b)
    rep = map_at_r_from_scores(lambda q: S[q], labels, baseline="bm25")
    rep.config = {"k1": k1, "b": b}
    return rep


def whiten(embeddings: EmbeddingMatrix) -> EmbeddingMatrix:
    """Whitening baseline: center, map sample covariance to identity via
    symmetric inverse square root, then re-normalize rows."""
    V = embeddings.vectors
    n, d = V.shape
    if n <= d:
        raise EvalError(f"whitening needs N > d, got N={n}, d={d}")
    mu = V.mean(axis=0)
    Xc = V - mu
    cov = Xc.T @ Xc / n
    evals, evecs = np.linalg.eigh(cov)
    floored = np.maximum(evals, 1e-10)
    if (evals < 1e-10).any():
        warnings.warn("rank-deficient covariance; eigenvalues floored at 1e-10")
    W = evecs @ np.diag(1.0 / np.sqrt(floored)) @ evecs.T
    white = Xc @ W
    return EmbeddingMatrix(normalize_rows(white), list(embeddings.ids))


def whitened_matrix(embeddings: EmbeddingMatrix) -> np.ndarray:
    """Pre-renormalization whitened vectors (for covariance checks)."""
    V = embeddings.vectors
    mu = V.mean(axis=0)
    Xc = V - mu
    cov = Xc.T @ Xc / V.shape[0]
    evals, evecs = np.linalg.eigh(cov)
    W = evecs @ np.diag(1.0 / np.sqrt(np.maximum(evals, 1e-10))) @ evecs.T
    return Xc @ W


def nmi_curve(run_report) -> list[tuple[int, float]]:
    """(epoch, NMI) rows from a RunReport with labels available."""
    rows = []
    for ep in run_report.epochs:
        if ep.get("nmi") is None:
            raise EvalError("run report lacks NMI values (no labels sidecar)")
        rows.append((ep["epoch"], ep["nmi"]))
    return rows
