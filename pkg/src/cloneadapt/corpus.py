"""Program corpora: loading, validation, splitting, on-disk JSONL format."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

# Canonical key order for JSONL records.
_RECORD_KEYS = ("id", "language", "label", "source")


class CorpusError(ValueError):
    """Malformed or inconsistent corpus data."""


@dataclass(frozen=True)
class Program:
    """One source-code snippet with identity and optional functionality label."""

    id: str
    language: str
    source: str
    label: int | None = None

    def __post_init__(self):
        if not self.source.strip():
            raise CorpusError(f"program {self.id!r}: empty source")
        if self.label is not None and self.label < 0:
            raise CorpusError(f"program {self.id!r}: negative label")


@dataclass
class Corpus:
    """Ordered collection of programs in a single language."""

    programs: list[Program]
    language: str
    role: str  # "source" or "target"

    def __post_init__(self):
        if self.role not in ("source", "target"):
            raise CorpusError(f"invalid role {self.role!r}")
        seen = set()
        for p in self.programs:
            if p.id in seen:
                raise CorpusError(f"duplicate program id {p.id!r}")
            seen.add(p.id)
            if p.language != self.language:
                raise CorpusError(
                    f"program {p.id!r} has language {p.language!r}, "
                    f"corpus is {self.language!r}"
                )
            if self.role == "source" and p.label is None:
                raise CorpusError(f"source corpus program {p.id!r} lacks a label")

    def __len__(self):
        return len(self.programs)

    def __iter__(self):
        return iter(self.programs)

    @property
    def ids(self) -> list[str]:
        return [p.id for p in self.programs]

    @property
    def labels(self) -> list[int | None]:
        return [p.label for p in self.programs]

    def is_labeled(self) -> bool:
        return all(p.label is not None for p in self.programs)

    def subset(self, indices, role: str | None = None) -> "Corpus":
        return Corpus(
            [self.programs[i] for i in indices], self.language, role or self.role
        )

    def unlabeled_view(self) -> "UnlabeledCorpusView":
        return UnlabeledCorpusView(self)


class UnlabeledCorpusView:
    """Label-free view of a corpus handed to the adaptation trainer.

    Deliberately exposes no label accessor: evaluation code receives the
    underlying corpus, the trainer receives only this view.
    """

    def __init__(self, corpus: Corpus):
        self._programs = [
            Program(p.id, p.language, p.source, None) for p in corpus.programs
        ]
        self.language = corpus.language

    def __len__(self):
        return len(self._programs)

    def __iter__(self):
        return iter(self._programs)

    @property
    def programs(self) -> list[Program]:
        return self._programs

    @property
    def ids(self) -> list[str]:
        return [p.id for p in self._programs]


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.6
    valid_fraction: float = 0.2
    test_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        fracs = (self.train_fraction, self.valid_fraction, self.test_fraction)
        if not all(0 < f < 1 for f in fracs):
            raise CorpusError(f"split fractions must be in (0,1), got {fracs}")
        if abs(sum(fracs) - 1.0) > 1e-9:
            raise CorpusError(f"split fractions must sum to 1, got {sum(fracs)}")


def load_corpus(path, role: str) -> Corpus:
    """Read a JSONL corpus file. role="source" requires every record labeled."""
    programs = []
    language = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise CorpusError(f"{path}:{lineno}: malformed JSON: {e}") from e
            try:
                prog = Program(
                    id=rec["id"],
                    language=rec["language"],
                    source=rec["source"],
                    label=rec.get("label"),
                )
            except KeyError as e:
                raise CorpusError(f"{path}:{lineno}: missing key {e}") from e
            except CorpusError as e:
                raise CorpusError(f"{path}:{lineno}: {e}") from e
            if language is None:
                language = prog.language
            programs.append(prog)
    if language is None:
        raise CorpusError(f"{path}: empty corpus file")
    try:
        return Corpus(programs, language, role)
    except CorpusError as e:
        raise CorpusError(f"{path}: {e}") from e


def write_corpus(corpus: Corpus, path) -> None:
    """Write JSONL with canonical key order; UTF-8, LF line endings."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for p in corpus.programs:
            rec = {"id": p.id, "language": p.language}
            if p.label is not None:
                rec["label"] = p.label
            rec["source"] = p.source
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def split_corpus(corpus: Corpus, spec: SplitSpec) -> tuple[Corpus, Corpus, Corpus]:
    """Label-stratified train/valid/test split, deterministic under the seed."""
    if not corpus.is_labeled():
        raise CorpusError("split_corpus requires a fully labeled corpus")
    rng = np.random.default_rng(spec.seed)
    by_label: dict[int, list[int]] = {}
    for i, p in enumerate(corpus.programs):
        by_label.setdefault(p.label, []).append(i)

    train_idx, valid_idx, test_idx = [], [], []
    for label in sorted(by_label):
        idx = np.array(by_label[label])
        rng.shuffle(idx)
        n = len(idx)
        if n < 3:
            warnings.warn(
                f"label {label} has only {n} member(s); assigning all to train"
            )
            train_idx.extend(idx.tolist())
            continue
        n_valid = max(1, round(n * spec.valid_fraction))
        n_test = max(1, round(n * spec.test_fraction))
        n_train = n - n_valid - n_test
        if n_train < 1:
            n_train, n_valid, n_test = n - 2, 1, 1
        train_idx.extend(idx[:n_train].tolist())
        valid_idx.extend(idx[n_train : n_train + n_valid].tolist())
        test_idx.extend(idx[n_train + n_valid :].tolist())

    return (
        corpus.subset(sorted(train_idx)),
        corpus.subset(sorted(valid_idx)),
        corpus.subset(sorted(test_idx)),
    )


def halve_target(corpus: Corpus, seed: int) -> tuple[Corpus, Corpus]:
    """Randomly split a target corpus into two disjoint halves."""
    if corpus.role != "target":
        raise CorpusError("halve_target requires a target corpus")
    n = len(corpus)
    if n < 2:
        raise CorpusError(f"cannot halve a corpus of size {n}")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    cut = (n + 1) // 2
    first = sorted(perm[:cut].tolist())
    second = sorted(perm[cut:].tolist())
    return corpus.subset(first), corpus.subset(second)
