"""Program embeddings: hashed base features, a trainable two-layer relu
projection head, and the contrastive losses with analytic gradients."""

from __future__ import annotations

import json
import struct
import warnings
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

EMBED_MAGIC = b"ADEM"
EMBED_VERSION = 1


class EmbeddingError(ValueError):
    pass


@dataclass
class BaseFeatures:
    matrix: np.ndarray  # N x F, float64
    source: str = "hashed_tokens"  # or "precomputed_file"

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def __len__(self):
        return self.matrix.shape[0]


@dataclass
class ProjectionHead:
    """Two-layer MLP with relu: x = normalize(W2.T @ relu(W1.T f + b1) + b2)."""

    W1: np.ndarray  # F x H
    b1: np.ndarray  # H
    W2: np.ndarray  # H x d
    b2: np.ndarray  # d

    @property
    def in_dim(self):
        return self.W1.shape[0]

    @property
    def hidden_dim(self):
        return self.W1.shape[1]

    @property
    def out_dim(self):
        return self.W2.shape[1]

    @classmethod
    def init_random(cls, F: int, H: int | None = None, d: int = 128, seed: int = 0):
        if H is None:
            H = int(np.clip(2 * F, 128, 1024))
        if not (H >= d >= 2):
            raise EmbeddingError(f"need H >= d >= 2, got H={H}, d={d}")
        rng = np.random.default_rng(seed)
        W1 = rng.normal(0, np.sqrt(2.0 / F), size=(F, H))
        W2 = rng.normal(0, np.sqrt(2.0 / H), size=(H, d))
        return cls(W1, np.zeros(H), W2, np.zeros(d))

    def copy(self) -> "ProjectionHead":
        return ProjectionHead(
            self.W1.copy(), self.b1.copy(), self.W2.copy(), self.b2.copy()
        )

    def params(self):
        return [self.W1, self.b1, self.W2, self.b2]

    def save(self, path) -> None:
        """Checkpoint: magic "ADHD", u32 version, dims, f64 LE parameters."""
        with open(path, "wb") as fh:
            fh.write(b"ADHD")
            fh.write(struct.pack("<I", 1))
            F, H = self.W1.shape
            d = self.W2.shape[1]
            fh.write(struct.pack("<QQQ", F, H, d))
            for p in self.params():
                fh.write(np.ascontiguousarray(p, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path) -> "ProjectionHead":
        with open(path, "rb") as fh:
            if fh.read(4) != b"ADHD":
                raise EmbeddingError(f"{path}: bad checkpoint magic")
            (version,) = struct.unpack("<I", fh.read(4))
            if version != 1:
                raise EmbeddingError(f"{path}: unsupported version {version}")
            F, H, d = struct.unpack("<QQQ", fh.read(24))
            read = lambda shape: np.frombuffer(
                fh.read(8 * int(np.prod(shape))), dtype="<f8"
            ).reshape(shape).copy()
            return cls(read((F, H)), read((H,)), read((H, d)), read((d,)))


@dataclass
class EmbeddingMatrix:
    vectors: np.ndarray  # N x d, rows unit norm
    ids: list[str]

    def __post_init__(self):
        norms = np.linalg.norm(self.vectors, axis=1)
        if not np.allclose(norms, 1.0, atol=1e-6):
            raise EmbeddingError("embedding rows must be unit norm")


def normalize_rows(X: np.ndarray, fallback_basis: bool = True) -> np.ndarray:
    """L2-normalize rows; rows with norm < 1e-12 become e1 (deterministic)."""
    X = np.asarray(X, dtype=np.float64)
    norms = np.linalg.norm(X, axis=1, keepdims=True)
    tiny = norms[:, 0] < 1e-12
    if tiny.any():
        if not fallback_basis:
            raise EmbeddingError("zero-norm row")
        warnings.warn(f"{int(tiny.sum())} zero-norm row(s) mapped to e1")
        X = X.copy()
        X[tiny] = 0.0
        X[tiny, 0] = 1.0
        norms = np.linalg.norm(X, axis=1, keepdims=True)
    return X / norms


def _hash_bucket(term: str, F: int, seed: int) -> int:
    return zlib.crc32(f"{seed}:{term}".encode("utf-8")) % F


def featurize_hashed(corpus, F: int = 512, seed: int = 0) -> BaseFeatures:
    """Hashed unigram+bigram counts of content tokens, L2-normalized rows."""
    from .lexing import content_tokens, lex, profile_for

    if F < 64:
        raise EmbeddingError(f"F must be >= 64, got {F}")
    mat = np.zeros((len(corpus.programs), F), dtype=np.float64)
    for i, prog in enumerate(corpus.programs):
        toks = content_tokens(lex(prog.source, profile_for(prog.language)))
        if not toks:
            warnings.warn(f"program {prog.id!r} has no content tokens; zero row")
            continue
        for t in toks:
            mat[i, _hash_bucket(t, F, seed)] += 1.0
        for a, b in zip(toks, toks[1:]):
            mat[i, _hash_bucket(f"{a}\x00{b}", F, seed)] += 1.0
        norm = np.linalg.norm(mat[i])
        if norm > 0:
            mat[i] /= norm
    return BaseFeatures(mat, "hashed_tokens")


def write_embeddings(path, vectors: np.ndarray, ids: list[str]) -> None:
    """Write the portable embedding format: "ADEM", version, n, d, f32 LE data
    plus a <path>.ids.jsonl sidecar."""
    vectors = np.asarray(vectors)
    n, d = vectors.shape
    if len(ids) != n:
        raise EmbeddingError("ids length does not match row count")
    with open(path, "wb") as fh:
        fh.write(EMBED_MAGIC)
        fh.write(struct.pack("<I", EMBED_VERSION))
        fh.write(struct.pack("<QQ", n, d))
        fh.write(np.ascontiguousarray(vectors, dtype="<f4").tobytes())
    sidecar = Path(str(path) + ".ids.jsonl")
    with open(sidecar, "w", encoding="utf-8", newline="\n") as fh:
        for row, pid in enumerate(ids):
            fh.write(json.dumps({"row": row, "id": pid}) + "\n")


def read_embedding_file(path) -> tuple[np.ndarray, list[str]]:
    """Read an "ADEM" file and its ids sidecar; returns (float64 matrix, ids)."""
    with open(path, "rb") as fh:
        if fh.read(4) != EMBED_MAGIC:
            raise EmbeddingError(f"{path}: bad magic")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != EMBED_VERSION:
            raise EmbeddingError(f"{path}: unsupported version {version}")
        n, d = struct.unpack("<QQ", fh.read(16))
        payload = fh.read()
    expected = n * d * 4
    if len(payload) != expected:
        raise EmbeddingError(
            f"{path}: payload has {len(payload)} bytes, header implies {expected}"
        )
    mat = np.frombuffer(payload, dtype="<f4").reshape(n, d).astype(np.float64)
    sidecar = Path(str(path) + ".ids.jsonl")
    if not sidecar.exists():
        raise EmbeddingError(f"missing ids sidecar {sidecar}")
    ids: list[str] = [None] * n
    count = 0
    with open(sidecar, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            ids[rec["row"]] = rec["id"]
            count += 1
    if count != n or any(i is None for i in ids):
        raise EmbeddingError(f"{sidecar}: sidecar rows ({count}) != header n ({n})")
    return mat, ids


def load_precomputed(path, corpus) -> BaseFeatures:
    """Load exporter output, aligning rows to corpus order by id."""
    mat, ids = read_embedding_file(path)
    index = {pid: row for row, pid in enumerate(ids)}
    rows = []
    for prog in corpus.programs:
        if prog.id not in index:
            raise EmbeddingError(f"id {prog.id!r} missing from {path}")
        rows.append(index[prog.id])
    return BaseFeatures(mat[rows], "precomputed_file")


def _forward(features: np.ndarray, head: ProjectionHead):
    """Forward pass keeping intermediates for backprop."""
    A = features @ head.W1 + head.b1  # N x H
    Hrelu = np.maximum(A, 0.0)
    Z = Hrelu @ head.W2 + head.b2  # N x d
    norms = np.linalg.norm(Z, axis=1, keepdims=True)
    tiny = norms[:, 0] < 1e-12
    Zsafe = Z.copy()
    if tiny.any():
        warnings.warn(f"{int(tiny.sum())} zero-norm embedding(s) mapped to e1")
        Zsafe[tiny] = 0.0
        Zsafe[tiny, 0] = 1.0
        norms = np.linalg.norm(Zsafe, axis=1, keepdims=True)
    X = Zsafe / norms
    return A, Hrelu, Z, X, norms, tiny


def embed(features: BaseFeatures, head: ProjectionHead, ids: list[str]) -> EmbeddingMatrix:
    if features.dim != head.in_dim:
        raise EmbeddingError(
            f"feature dim {features.dim} != head input dim {head.in_dim}"
        )
    *_, X, _, _ = _forward(features.matrix, head)
    return EmbeddingMatrix(X, list(ids))


def _backward(features, head, A, Hrelu, Z, X, norms, tiny, dX):
    """Backprop dL/dX through normalization and the MLP; returns grad list."""
    # through normalization: dZ = (dX - (dX . x) x) / ||z||
    proj = np.sum(dX * X, axis=1, keepdims=True)
    dZ = (dX - proj * X) / norms
    dZ[tiny] = 0.0  # fallback rows are constants
    dW2 = Hrelu.T @ dZ
    db2 = dZ.sum(axis=0)
    dH = dZ @ head.W2.T
    dA = dH * (A > 0.0)
    dW1 = features.T @ dA
    db1 = dA.sum(axis=0)
    return [dW1, db1, dW2, db2]


def contrastive_loss_and_grad(
    features: np.ndarray,
    head: ProjectionHead,
    positives: list[list[int]],
    negatives: list[list[int]],
    tau: float,
):
    """Loss of the adaptive contrastive objective and its analytic gradients.

    loss = -sum_i sum_{j in P_i} log( e^{s_ij/tau} /
           (e^{s_ij/tau} + sum_{k in N_i} e^{s_ik/tau}) )
    with s the cosine similarity of the embedded rows. Anchors with an empty
    positive or negative set are skipped (error if all are skipped).
    """
    if tau <= 0:
        raise EmbeddingError(f"tau must be positive, got {tau}")
    features = np.asarray(features, dtype=np.float64)
    A, Hrelu, Z, X, norms, tiny = _forward(features, head)
    S = X @ X.T

    loss = 0.0
    dS = np.zeros_like(S)
    active = 0
    for i, (P, N) in enumerate(zip(positives, negatives)):
        if not P or not N:
            if P or N:
                warnings.warn(f"anchor {i} skipped: empty positive or negative set")
            continue
        active += 1
        neg_logits = S[i, N] / tau
        for j in P:
            logits = np.concatenate(([S[i, j] / tau], neg_logits))
            m = logits.max()
            lse = m + np.log(np.exp(logits - m).sum())
            loss += lse - logits[0]
            # d(lse - logits[0]) / d logits = softmax - e0
            soft = np.exp(logits - lse)
            dS[i, j] += (soft[0] - 1.0) / tau
            np.add.at(dS[i], N, soft[1:] / tau)
    if active == 0:
        raise EmbeddingError("no anchor had both positives and negatives")

    # s_ij depends on rows i and j: dX = dS @ X + dS.T @ X
    dX = dS @ X + dS.T @ X
    grads = _backward(features, head, A, Hrelu, Z, X, norms, tiny, dX)
    return loss, grads


def infonce_source_loss(
    features: np.ndarray, head: ProjectionHead, labels: list[int], tau: float
):
    """Supervised InfoNCE over a labeled batch: positives are same-label
    members, negatives the rest."""
    labels = np.asarray(labels)
    n = len(labels)
    positives, negatives = [], []
    for i in range(n):
        same = (labels == labels[i]).nonzero()[0]
        positives.append([j for j in same.tolist() if j != i])
        negatives.append((labels != labels[i]).nonzero()[0].tolist())
    return contrastive_loss_and_grad(features, head, positives, negatives, tau)


class Adam:
    """Adam optimizer over a ProjectionHead's parameter list."""

    def __init__(self, head: ProjectionHead, lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.head = head
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in head.params()]
        self.v = [np.zeros_like(p) for p in head.params()]
        self.t = 0

    def step(self, grads) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for p, g, m, v in zip(self.head.params(), grads, self.m, self.v):
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            mhat = m / (1 - b1**self.t)
            vhat = v / (1 - b2**self.t)
            p -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


def featurize_source(source: str, language: str, F: int, seed: int) -> np.ndarray:
    """Hashed feature row for a single program source (matches featurize_hashed)."""
    from .lexing import content_tokens, lex, profile_for

    row = np.zeros(F, dtype=np.float64)
    toks = content_tokens(lex(source, profile_for(language)))
    for t in toks:
        row[_hash_bucket(t, F, seed)] += 1.0
    for a, b in zip(toks, toks[1:]):
        row[_hash_bucket(f"{a}\x00{b}", F, seed)] += 1.0
    norm = np.linalg.norm(row)
    if norm > 0:
        row /= norm
    return row
