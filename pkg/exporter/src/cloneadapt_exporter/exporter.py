"""Batch inference over a corpus with a pretrained transformer encoder,
writing raw (un-normalized) f32 vectors in the engine's portable binary
format. The core engine is the single point of normalization."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from cloneadapt.embedding import (
    EMBED_MAGIC,
    EMBED_VERSION,
    read_embedding_file,
    write_embeddings,
)

POOLINGS = ("cls", "mean")


class ExportError(RuntimeError):
    pass


class ModelLoadError(ExportError):
    """The encoder could not be loaded (maps to exit code 3)."""


@dataclass
class ExportJob:
    corpus_path: str
    model_name: str
    output_path: str
    pooling: str = "cls"
    max_sequence_length: int = 512
    batch_size: int = 8

    def __post_init__(self):
        if self.pooling not in POOLINGS:
            raise ExportError(f"pooling must be one of {POOLINGS}")
        if self.max_sequence_length < 8:
            raise ExportError("max_sequence_length too small")
        if self.batch_size < 1:
            raise ExportError("batch_size must be positive")


@dataclass
class ExportSummary:
    n_programs: int
    dim: int
    truncated: int
    pooling: str
    model_name: str


def _load_encoder(model_name: str):
    try:
        import torch  # noqa: F401
        from transformers import AutoModel, AutoTokenizer

        tokenizer = AutoTokenizer.from_pretrained(model_name)
        model = AutoModel.from_pretrained(model_name)
    except Exception as e:
        raise ModelLoadError(f"could not load encoder {model_name!r}: {e}") from e
    model.eval()
    return tokenizer, model


def export(job: ExportJob) -> ExportSummary:
    """Embed every program and write the vectors + ids sidecar.

    Row i holds the pooled last-layer hidden state of program i: the first
    token's state for cls pooling, the attention-masked mean for mean
    pooling. Vectors are written raw; no normalization happens here.
    """
    import torch

    from cloneadapt.corpus import load_corpus

    corpus = load_corpus(job.corpus_path, "target")
    tokenizer, model = _load_encoder(job.model_name)
    # never ask for more positions than the encoder supports
    max_length = min(
        job.max_sequence_length,
        int(getattr(model.config, "max_position_embeddings", job.max_sequence_length)),
    )

    rows = []
    truncated = 0
    sources = [p.source for p in corpus.programs]
    with torch.no_grad():
        for start in range(0, len(sources), job.batch_size):
            chunk = sources[start : start + job.batch_size]
            full = tokenizer(chunk, truncation=False)["input_ids"]
            truncated += sum(len(seq) > max_length for seq in full)
            enc = tokenizer(
                chunk,
                padding=True,
                truncation=True,
                max_length=max_length,
                return_tensors="pt",
            )
            out = model(**enc).last_hidden_state  # B x T x D
            if job.pooling == "cls":
                pooled = out[:, 0, :]
            else:
                mask = enc["attention_mask"].unsqueeze(-1).to(out.dtype)
                pooled = (out * mask).sum(dim=1) / mask.sum(dim=1).clamp(min=1)
            rows.append(pooled.cpu().numpy().astype(np.float32))

    vectors = np.vstack(rows)
    write_embeddings(job.output_path, vectors, corpus.ids)
    return ExportSummary(
        n_programs=len(corpus),
        dim=int(vectors.shape[1]),
        truncated=truncated,
        pooling=job.pooling,
        model_name=job.model_name,
    )


@dataclass
class VerifyReport:
    ok: bool
    n: int = 0
    dim: int = 0
    problems: list = field(default_factory=list)


def verify(path) -> VerifyReport:
    """Re-read an exported file: magic/version/dims, finite values, and id
    sidecar alignment are all checked."""
    problems = []
    try:
        mat, ids = read_embedding_file(path)
    except Exception as e:
        return VerifyReport(False, problems=[str(e)])
    bad_rows = np.flatnonzero(~np.isfinite(mat).all(axis=1))
    for r in bad_rows:
        problems.append(f"row {int(r)} (id {ids[int(r)]!r}) has non-finite values")
    if len(set(ids)) != len(ids):
        problems.append("duplicate ids in sidecar")
    return VerifyReport(not problems, n=mat.shape[0], dim=mat.shape[1],
                        problems=problems)


__all__ = [
    "EMBED_MAGIC",
    "EMBED_VERSION",
    "ExportError",
    "ExportJob",
    "ExportSummary",
    "ModelLoadError",
    "VerifyReport",
    "export",
    "verify",
]
