"""Synthetic cross-lingual transfer task generator.

Builds a labeled source corpus (C-style surface syntax) and a target corpus
(Rust-style surface syntax) over the same functionality classes. The class
signal lives in adjacent pairs of string-literal "stems": every program
contains the same stem multiset (so bag-of-words retrieval is blind), but
each class pairs the stems differently. Target classes keep half of the
source pairing and re-pair the rest language-specifically, so zero-shot
transfer is partial and in-language adaptation has headroom.
"""

from __future__ import annotations

import numpy as np

from .corpus import Corpus, Program

N_STEMS = 24
PAIRS_PER_CLASS = N_STEMS // 2

_STEMS = [
    "qv", "rk", "zl", "mp", "xt", "gd", "bh", "wn", "fs", "cj", "ty", "ue",
    "od", "la", "ni", "sp", "vg", "hr", "km", "ez", "ib", "wx", "uf", "qa",
]

_NOISE_TAGS = [
    f"{a}{b}" for a in "jkpqwxyz" for b in "0345689"
]

_NOISE_NAMES = [
    f"{a}{b}" for a in ("tmp", "acc", "cnt", "val", "res", "buf", "idx",
                        "sum", "ptr", "len", "pos", "arg")
    for b in ("one", "two", "red", "blu", "top", "low")
]


def _greedy_matching(stems: list[str], used: set, rng) -> list[tuple[str, str]]:
    """Pair up stems avoiding ordered pairs already in `used`."""
    for _attempt in range(500):
        order = list(stems)
        rng.shuffle(order)
        pairs = []
        remaining = list(order)
        ok = True
        while remaining:
            a = remaining.pop(0)
            partner = None
            for b in remaining:
                if (a, b) not in used:
                    partner = b
                    break
            if partner is None:
                ok = False
                break
            remaining.remove(partner)
            pairs.append((a, partner))
        if ok:
            return pairs
    raise RuntimeError("could not construct a fresh stem pairing")


def _class_pairings(n_classes: int, shared_pairs: int, seed: int):
    """Per-class stem pairings for source and target languages."""
    rng = np.random.default_rng(seed)
    used: set = set()
    src, tgt = [], []
    for _c in range(n_classes):
        pairs_a = _greedy_matching(_STEMS, used, rng)
        used.update(pairs_a)
        shared = pairs_a[:shared_pairs]
        rest_stems = [s for p in pairs_a[shared_pairs:] for s in p]
        pairs_b_specific = _greedy_matching(rest_stems, used, rng)
        used.update(pairs_b_specific)
        src.append(pairs_a)
        tgt.append(shared + pairs_b_specific)
    return src, tgt


def _pick_pairs(pairs, rng, n_use):
    """Use a random subset of the class pairs; leftover stems appear alone."""
    order = list(pairs)
    rng.shuffle(order)
    used = order[:n_use]
    leftovers = [s for p in order[n_use:] for s in p]
    rng.shuffle(leftovers)
    return used, leftovers


def _render_c(pairs, rng, n_use, local_tags) -> str:
    fname = _NOISE_NAMES[int(rng.integers(len(_NOISE_NAMES)))]
    v = [_NOISE_NAMES[int(rng.integers(len(_NOISE_NAMES)))] for _ in range(3)]
    lines = [f"int {fname}(int {v[0]}) {{", f"    int {v[1]} = 0;"]
    order, leftovers = _pick_pairs(pairs, rng, n_use)
    for s in leftovers:
        lines.append(f'    mark({v[0]}, "{s}");')
    for a, b in order:
        lines.append(f'    {v[1]} = hash("{a}" "{b}");')
        if rng.random() < 0.4:
            lines.append(
                f"    {v[2]} = {v[0]} + {int(rng.integers(10))};"
            )
        tag = local_tags[int(rng.integers(3))]
        lines.append(f'    log({v[2]}, "{tag}");')
    lines.append(f"    return {v[1]};")
    lines.append("}")
    return "\n".join(lines)


def _render_rust(pairs, rng, n_use, local_tags) -> str:
    fname = _NOISE_NAMES[int(rng.integers(len(_NOISE_NAMES)))]
    v = [_NOISE_NAMES[int(rng.integers(len(_NOISE_NAMES)))] for _ in range(3)]
    lines = [
        f"fn {fname}({v[0]}: i64) -> i64 {{",
        f"    let mut {v[1]} = 0;",
    ]
    order, leftovers = _pick_pairs(pairs, rng, n_use)
    for s in leftovers:
        lines.append(f'    mark({v[0]}, "{s}");')
    for a, b in order:
        lines.append(f'    {v[1]} = hash("{a}" "{b}");')
        if rng.random() < 0.4:
            lines.append(
                f"    let {v[2]} = {v[0]} + {int(rng.integers(10))};"
            )
        tag = local_tags[int(rng.integers(3))]
        lines.append(f'    log({v[2]}, "{tag}");')
    lines.append(f"    {v[1]}")
    lines.append("}")
    return "\n".join(lines)


def make_transfer_task(
    n_classes: int = 20,
    per_class: int = 20,
    per_class_target: int | None = None,
    pairs_per_program: int = PAIRS_PER_CLASS,
    shared_pairs: int = 8,
    seed: int = 0,
) -> tuple[Corpus, Corpus]:
    """Build (source, target) corpora for the synthetic transfer experiment.

    Both corpora are fully labeled; the trainer must only ever see the
    target through an unlabeled view. The target corpus can be larger per
    class so that discovered clusters exceed the top-k neighborhood size.
    """
    if per_class_target is None:
        per_class_target = per_class
    src_pairs, tgt_pairs = _class_pairings(n_classes, shared_pairs, seed)
    rng = np.random.default_rng(seed + 1)
    src_programs, tgt_programs = [], []
    for c in range(n_classes):
        # two tag dialects per class: tight subclusters that clustering may
        # split; only discovered positives can pull them back together
        dialects = [
            [_NOISE_TAGS[int(rng.integers(len(_NOISE_TAGS)))] for _ in range(3)]
            for _ in range(2)
        ]
        for i in range(per_class):
            src_programs.append(
                Program(
                    f"c_{c:02d}_{i:02d}", "c",
                    _render_c(src_pairs[c], rng, pairs_per_program, dialects[i % 2]),
                    c,
                )
            )
        for i in range(per_class_target):
            tgt_programs.append(
                Program(
                    f"rs_{c:02d}_{i:02d}", "rust",
                    _render_rust(tgt_pairs[c], rng, pairs_per_program, dialects[i % 2]),
                    c,
                )
            )
    return (
        Corpus(src_programs, "c", "source"),
        Corpus(tgt_programs, "rust", "target"),
    )
