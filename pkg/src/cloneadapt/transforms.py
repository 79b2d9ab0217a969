"""Semantic-preserving program transformations.

Identifier renaming (normalization / randomization) is built in; back
translation and code rewriting go through an external HTTP provider with
an on-disk cache and renaming fallback.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import requests

from .corpus import Corpus, Program
from .lexing import (
    KIND_COMMENT,
    KIND_IDENTIFIER,
    KIND_WHITESPACE,
    LexerProfile,
    identifier_occurrences,
    lex,
    profile_for,
)

log = logging.getLogger(__name__)

PROVIDER_KINDS = ("identifier_renaming", "back_translation", "code_rewrite")


class TransformError(RuntimeError):
    pass


@dataclass(frozen=True)
class TransformProvider:
    kind: str = "identifier_renaming"
    endpoint: str | None = None
    pivot_language: str | None = None
    seed: int = 0
    timeout: float = 30.0

    def __post_init__(self):
        if self.kind not in PROVIDER_KINDS:
            raise TransformError(f"unknown provider kind {self.kind!r}")
        if self.kind != "identifier_renaming" and not self.endpoint:
            raise TransformError(f"provider kind {self.kind!r} requires an endpoint")


@dataclass(frozen=True)
class TransformedProgram:
    anchor_id: str
    variant_source: str
    provider_kind: str
    cached: bool = False
    fallback: bool = False


def _classify_identifiers(tokens) -> tuple[list[str], list[str]]:
    """Split identifier names into function-like and variable-like pools,
    each in first-occurrence order.

    An identifier is function-like when its first occurrence is immediately
    followed (ignoring whitespace/comments) by "(".
    """
    func_names: list[str] = []
    var_names: list[str] = []
    seen: set[str] = set()
    for idx, tok in enumerate(tokens):
        if tok.kind != KIND_IDENTIFIER or tok.text in seen:
            continue
        seen.add(tok.text)
        nxt = None
        for follower in tokens[idx + 1 :]:
            if follower.kind not in (KIND_WHITESPACE, KIND_COMMENT):
                nxt = follower
                break
        if nxt is not None and nxt.text.startswith("("):
            func_names.append(tok.text)
        else:
            var_names.append(tok.text)
    return func_names, var_names


def _apply_renaming(source: str, tokens, mapping: dict[str, str]) -> str:
    parts = []
    for tok in tokens:
        if tok.kind == KIND_IDENTIFIER and tok.text in mapping:
            parts.append(mapping[tok.text])
        else:
            parts.append(tok.text)
    return "".join(parts)


def rename_normalize(source: str, profile: LexerProfile) -> str:
    """Rename variables to var_1..var_m and functions to func_1..func_m by
    order of first occurrence. Idempotent."""
    tokens = lex(source, profile)
    func_names, var_names = _classify_identifiers(tokens)
    mapping = {name: f"func_{i+1}" for i, name in enumerate(func_names)}
    mapping.update({name: f"var_{i+1}" for i, name in enumerate(var_names)})
    return _apply_renaming(source, tokens, mapping)


def collect_name_pool(corpus) -> list[str]:
    """De-duplicated, keyword-filtered, sorted identifier names of a corpus."""
    names: set[str] = set()
    for prog in corpus.programs:
        profile = profile_for(prog.language)
        tokens = lex(prog.source, profile)
        names.update(identifier_occurrences(tokens).keys())
    return sorted(names)


def rename_randomize(
    source: str, profile: LexerProfile, pool: list[str], seed: int
) -> str:
    """Map each distinct identifier to a distinct name sampled from the pool.

    Injective within the program; deterministic under the seed. When the
    pool is smaller than the identifier count, original names fill the gap.
    """
    if not pool:
        raise TransformError("empty name pool")
    tokens = lex(source, profile)
    occ = identifier_occurrences(tokens)
    names = sorted(occ, key=lambda n: occ[n][0])  # first-occurrence order
    if not names:
        return source
    rng = np.random.default_rng(seed)
    usable = [p for p in pool if p not in profile.keywords]
    if not usable:
        raise TransformError("name pool contains only keywords")
    take = min(len(names), len(usable))
    chosen = [usable[i] for i in rng.choice(len(usable), size=take, replace=False)]
    targets = list(chosen)
    # pool exhausted: keep original names for the excess, preserving injectivity
    used = set(targets)
    for name in names[take:]:
        cand, i = name, 0
        while cand in used:
            i += 1
            cand = f"{name}_r{i}"
        targets.append(cand)
        used.add(cand)
    mapping = dict(zip(names, targets))
    return _apply_renaming(source, tokens, mapping)


class TransformCache:
    """On-disk cache for external transformation results."""

    def __init__(self, root=None):
        root = root or os.environ.get("CLONE_ADAPT_CACHE") or ".cloneadapt-cache"
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def _path(self, key: str) -> Path:
        return self.root / f"{key}.json"

    @staticmethod
    def key(source: str, kind: str, pivot: str | None) -> str:
        h = hashlib.sha256()
        h.update(source.encode("utf-8"))
        h.update(f"|{kind}|{pivot or ''}".encode("utf-8"))
        return h.hexdigest()

    def get(self, key: str) -> str | None:
        p = self._path(key)
        if p.exists():
            return json.loads(p.read_text(encoding="utf-8"))["variant"]
        return None

    def put(self, key: str, variant: str) -> None:
        tmp = self._path(key).with_suffix(".tmp")
        tmp.write_text(json.dumps({"variant": variant}), encoding="utf-8")
        tmp.replace(self._path(key))


def _anchor_seed(provider_seed: int, anchor_id: str, salt: int = 0) -> int:
    h = hashlib.sha256(f"{provider_seed}|{salt}|{anchor_id}".encode()).digest()
    return int.from_bytes(h[:8], "little")


def _rename_variant(anchor: Program, seed: int, pool: list[str] | None) -> str:
    profile = profile_for(anchor.language)
    rng = np.random.default_rng(seed)
    use_normalize = (not pool) or rng.random() < 0.5
    if use_normalize:
        return rename_normalize(anchor.source, profile)
    return rename_randomize(anchor.source, profile, pool, seed + 1)


def transform(
    anchor: Program,
    provider: TransformProvider,
    cache: TransformCache | None = None,
    pool: list[str] | None = None,
    salt: int = 0,
) -> TransformedProgram:
    """Produce a semantically equivalent variant of the anchor program.

    Renaming picks one of {normalize, randomize} with a seeded coin.
    External kinds POST to the provider endpoint; failures fall back to
    renaming. `salt` varies the seeded choice, e.g. per epoch.
    """
    seed = _anchor_seed(provider.seed, anchor.id, salt)
    if provider.kind == "identifier_renaming":
        return TransformedProgram(
            anchor.id, _rename_variant(anchor, seed, pool), provider.kind
        )

    cache = cache or TransformCache()
    key = TransformCache.key(anchor.source, provider.kind, provider.pivot_language)
    hit = cache.get(key)
    if hit is not None:
        return TransformedProgram(anchor.id, hit, provider.kind, cached=True)

    mode = "back_translation" if provider.kind == "back_translation" else "rewrite"
    body = {
        "source": anchor.source,
        "language": anchor.language,
        "pivot": provider.pivot_language or "python",
        "mode": mode,
    }
    try:
        resp = requests.post(
            provider.endpoint.rstrip("/") + "/translate",
            json=body,
            timeout=provider.timeout,
        )
        resp.raise_for_status()
        variant = resp.json()["variant"]
        if not isinstance(variant, str) or not variant.strip():
            raise TransformError("provider returned an empty variant")
    except Exception as e:  # network, HTTP, JSON, schema failures all fall back
        log.warning("provider failed for %s (%s); falling back to renaming",
                    anchor.id, e)
        return TransformedProgram(
            anchor.id,
            _rename_variant(anchor, seed, pool),
            "identifier_renaming",
            fallback=True,
        )
    cache.put(key, variant)
    return TransformedProgram(anchor.id, variant, provider.kind)
