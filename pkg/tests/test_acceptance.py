"""End-to-end acceptance gate.

Each criterion prints a single [PASS]/[FAIL] line with its measured values.
The transfer experiment (3 seeds x 3 ablation arms + cluster-count study) is
computed once in a module fixture and shared by the criteria that need it.
"""

import time
import warnings

import numpy as np
import pytest

from cloneadapt.corpus import SplitSpec, split_corpus
from cloneadapt.embedding import (
    ProjectionHead,
    contrastive_loss_and_grad,
    featurize_hashed,
    infonce_source_loss,
    normalize_rows,
)
from cloneadapt.embedding import EmbeddingMatrix
from cloneadapt.evaluation import bm25_eval, map_at_r, whitened_matrix, zero_shot_eval
from cloneadapt.lexing import KIND_IDENTIFIER, lex, profile_for
from cloneadapt.synth import make_transfer_task
from cloneadapt.trainer import AdaptConfig, Schedule, adapt, alpha_at, train_source
from cloneadapt.transforms import TransformCache, rename_normalize, rename_randomize

SEEDS = (0, 1, 2)

# task-scale knobs for the desk-scale synthetic experiment; the adaptation
# schedule itself keeps the reference defaults (k=16, alpha0=0.8, sigma=0.1)
BASE = dict(C=20, feature_dim=4096, hidden_dim=256, embed_dim=64, tau=0.2)
SOURCE_KW = dict(epochs=100, batch_anchors=40, learning_rate=3e-3)
ADAPT_KW = dict(epochs=6, batch_anchors=8, learning_rate=1e-3)


def criterion(name, ok, detail=""):
    print(f"\n[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    assert ok, f"{name}: {detail}"


def _run_seed(seed):
    t0 = time.time()
    src, tgt = make_transfer_task(per_class_target=96, seed=seed)
    s_train, s_valid, _ = split_corpus(src, SplitSpec(seed=seed))
    t_train, _, t_test = split_corpus(tgt, SplitSpec(seed=seed))

    scfg = AdaptConfig(**BASE, seed=seed, **SOURCE_KW)
    head = train_source(s_train, scfg, valid_corpus=s_valid)

    test_feats = featurize_hashed(t_test, BASE["feature_dim"], seed)
    test_labels = [p.label for p in t_test.programs]
    zs = zero_shot_eval(head, test_feats, t_test.ids, test_labels).map_at_r
    bm = bm25_eval(t_test, test_labels).map_at_r

    view = t_train.unlabeled_view()
    train_labels = [p.label for p in t_train.programs]

    def run_arm(**overrides):
        cfg = AdaptConfig(**{**BASE, **overrides}, seed=seed, **ADAPT_KW)
        adapted, report = adapt(head, view, cfg, eval_labels=train_labels)
        score = zero_shot_eval(adapted, test_feats, t_test.ids, test_labels).map_at_r
        return score, report

    full, full_report = run_arm()
    transfer_elapsed = time.time() - t0  # source + baselines + the full arm

    arms = {"full": (full, full_report)}
    arms["no_adapt"] = run_arm(ablation="no_adapt")
    arms["no_trans"] = run_arm(ablation="no_trans")

    out = {
        "zero_shot": zs,
        "bm25": bm,
        "arms": arms,
        "transfer_elapsed": transfer_elapsed,
    }
    if seed == 0:
        out["c_study"] = {
            C: run_arm(C=C)[0] for C in (BASE["C"] // 2, BASE["C"] * 2)
        }
    return out


@pytest.fixture(scope="module")
def runs():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return {seed: _run_seed(seed) for seed in SEEDS}


# --- gradient correctness ---------------------------------------------------

def _numeric_grads(loss_fn, head, h=1e-5):
    grads = []
    for p in head.params():
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            orig = p[idx]
            p[idx] = orig + h
            up = loss_fn()
            p[idx] = orig - h
            down = loss_fn()
            p[idx] = orig
            g[idx] = (up - down) / (2 * h)
            it.iternext()
        grads.append(g)
    return grads


def test_gradient_correctness():
    t0 = time.time()
    worst = 0.0
    for case in range(100):
        r = np.random.default_rng(case)
        n, F, H, d = 6, 6, 5, 4
        feats = r.normal(size=(n, F))
        head = ProjectionHead.init_random(F, H, d, seed=case)
        head.b1 = r.normal(0, 0.1, H)
        head.b2 = r.normal(0, 0.1, d)
        if case % 2 == 0:
            P, N = [], []
            for i in range(n):
                others = [j for j in range(n) if j != i]
                r.shuffle(others)
                cut = int(r.integers(1, n - 1))
                P.append(others[:cut])
                N.append(others[cut:])
            loss_fn = lambda: contrastive_loss_and_grad(feats, head, P, N, 0.3)[0]
            _, grads = contrastive_loss_and_grad(feats, head, P, N, 0.3)
        else:
            labels = r.integers(0, 3, size=n).tolist()
            while len(set(labels)) < 2 or min(labels.count(l) for l in set(labels)) < 2:
                labels = r.integers(0, 3, size=n).tolist()
            loss_fn = lambda: infonce_source_loss(feats, head, labels, 0.3)[0]
            _, grads = infonce_source_loss(feats, head, labels, 0.3)
        num = _numeric_grads(loss_fn, head)
        a = np.concatenate([g.ravel() for g in grads])
        b = np.concatenate([g.ravel() for g in num])
        err = np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
        worst = max(worst, err)
    elapsed = time.time() - t0
    criterion(
        "gradient correctness",
        worst < 1e-4 and elapsed < 30,
        f"max relative error {worst:.2e} over 100 instances in {elapsed:.1f}s",
    )


# --- MAP@R oracle -----------------------------------------------------------

def _oracle_map_at_r(S, labels):
    labels = list(labels)
    n = len(labels)
    aps = []
    for q in range(n):
        R = labels.count(labels[q]) - 1
        if R < 1:
            continue
        ranked = sorted((j for j in range(n) if j != q),
                        key=lambda j: (-S[q][j], j))[:R]
        hits, ap = 0, 0.0
        for rank, j in enumerate(ranked, 1):
            if labels[j] == labels[q]:
                hits += 1
                ap += hits / rank
        aps.append(ap / R)
    return aps


def test_map_at_r_oracle_equivalence():
    t0 = time.time()
    mismatches = 0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for case in range(200):
            r = np.random.default_rng(1000 + case)
            n = int(r.integers(5, 201))
            labels = r.integers(0, max(2, n // 6), size=n).tolist()
            V = normalize_rows(r.normal(size=(n, 8)))
            emb = EmbeddingMatrix(V, [str(i) for i in range(n)])
            S = V @ V.T
            oracle_aps = _oracle_map_at_r(S, labels)
            if not oracle_aps:
                continue
            rep = map_at_r(emb, labels)
            if rep.per_query_ap != oracle_aps:
                mismatches += 1
            if rep.map_at_r != float(np.mean(oracle_aps)):
                mismatches += 1
    elapsed = time.time() - t0
    criterion(
        "MAP@R oracle equivalence",
        mismatches == 0 and elapsed < 10,
        f"{mismatches} mismatches over 200 instances in {elapsed:.1f}s",
    )


# --- preference schedule ----------------------------------------------------

def test_preference_schedule_values():
    s = Schedule(alpha0=0.8, sigma=0.1, T_total=100)
    expected = {0: 0.8, 10: 0.8, 11: 0.8 * 0.89, 50: 0.40, 100: 0.0}
    worst = max(abs(alpha_at(s, t) - v) for t, v in expected.items())
    criterion(
        "decaying preference schedule",
        worst <= 1e-12,
        f"max deviation {worst:.2e} at grid points {sorted(expected)}",
    )


# --- synthetic transfer -----------------------------------------------------

def test_synthetic_transfer(runs):
    details, ok = [], True
    total_elapsed = sum(runs[s]["transfer_elapsed"] for s in SEEDS)
    for seed in SEEDS:
        r = runs[seed]
        full = r["arms"]["full"][0]
        gain = full - r["zero_shot"]
        seed_ok = gain >= 0.10 and r["zero_shot"] > r["bm25"]
        ok &= seed_ok
        details.append(
            f"seed{seed} bm25={r['bm25']:.3f} zs={r['zero_shot']:.3f} "
            f"adapted={full:.3f} gain={gain * 100:+.1f}pts"
        )
    ok &= total_elapsed < 300
    criterion(
        "synthetic cross-lingual transfer",
        ok,
        "; ".join(details) + f"; elapsed {total_elapsed:.0f}s (< 300s)",
    )


def test_nmi_trend(runs):
    details, ok = [], True
    for seed in SEEDS:
        epochs = runs[seed]["arms"]["full"][1].epochs
        first, last = epochs[0]["nmi"], epochs[-1]["nmi"]
        ok &= last > first
        details.append(f"seed{seed} {first:.3f}->{last:.3f}")
    criterion("NMI trend (final > first epoch)", ok, "; ".join(details))


def test_ablation_ordering(runs):
    details, wins = [], 0
    for seed in SEEDS:
        arms = runs[seed]["arms"]
        full = arms["full"][0]
        na, nt = arms["no_adapt"][0], arms["no_trans"][0]
        win = full >= na and full >= nt
        wins += win
        details.append(
            f"seed{seed} full={full:.4f} no_adapt={na:.4f} no_trans={nt:.4f}"
            f" {'ok' if win else 'inverted'}"
        )
    criterion(
        "ablation ordering (>= 2 of 3 seeds)",
        wins >= 2,
        f"{wins}/3 seeds; " + "; ".join(details),
    )


def test_cluster_count_robustness(runs):
    r = runs[0]
    full = r["arms"]["full"][0]
    deltas = {C: abs(m - full) for C, m in r["c_study"].items()}
    ok = all(d <= 0.05 for d in deltas.values())
    criterion(
        "cluster-count robustness (C/2, 2C within 5 points)",
        ok,
        f"C={BASE['C']}: {full:.3f}; " + "; ".join(
            f"C={C}: {r['c_study'][C]:.3f} (delta {d * 100:.1f}pts)"
            for C, d in sorted(deltas.items())
        ),
    )


# --- transformation safety --------------------------------------------------

def _fuzz_program(r):
    language = ["c", "rust", "python", "javascript", "go", "ruby"][
        int(r.integers(6))
    ]
    profile = profile_for(language)
    idents = [f"v{r.integers(1000)}x{i}" for i in range(int(r.integers(2, 8)))]
    kw = sorted(profile.keywords)
    pieces = []
    for _ in range(int(r.integers(3, 20))):
        roll = r.random()
        if roll < 0.35:
            pieces.append(idents[int(r.integers(len(idents)))])
        elif roll < 0.5:
            pieces.append(kw[int(r.integers(len(kw)))])
        elif roll < 0.62:
            pieces.append(str(int(r.integers(10000))))
        elif roll < 0.74:
            pieces.append('"s%d \\" esc"' % r.integers(100))
        elif roll < 0.82:
            marker = profile.line_comments[0]
            pieces.append(f"{marker} note {r.integers(100)}\n")
        elif roll < 0.9:
            pieces.append(["+", "=", "==", "&&", "(", ")", ";", "{", "}"][
                int(r.integers(9))
            ])
        else:
            pieces.append(f"{idents[0]}({idents[-1]})")
    return language, " ".join(pieces) + " end"


def _structure(source, profile):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        toks = lex(source, profile)
    return (
        [t.kind for t in toks],
        [t.text for t in toks if t.kind != KIND_IDENTIFIER],
    )


def test_transformation_safety():
    pool = [f"pool{i}" for i in range(40)]
    violations = 0
    r = np.random.default_rng(99)
    for i in range(1000):
        language, source = _fuzz_program(r)
        profile = profile_for(language)
        ref = _structure(source, profile)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            norm = rename_normalize(source, profile)
            rand = rename_randomize(source, profile, pool, seed=i)
            norm2 = rename_normalize(norm, profile)
        if _structure(norm, profile) != ref:
            violations += 1
        if _structure(rand, profile) != ref:
            violations += 1
        if norm2 != norm:
            violations += 1
    criterion(
        "transformation safety fuzz",
        violations == 0,
        f"{violations} violations over 1000 programs x "
        "{normalize, randomize, idempotence}",
    )


# --- determinism ------------------------------------------------------------

def test_determinism(tmp_path):
    src, tgt = make_transfer_task(
        n_classes=5, per_class=8, per_class_target=14, seed=0
    )
    cfg = dict(C=5, seed=0, feature_dim=256, hidden_dim=64, embed_dim=16, tau=0.2)
    head = train_source(src, AdaptConfig(**cfg, epochs=3, batch_anchors=10))
    cache = TransformCache(tmp_path / "cache")
    outputs = []
    for tag in ("first", "second"):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            adapted, report = adapt(
                head, tgt.unlabeled_view(), AdaptConfig(**cfg, epochs=3), cache=cache
            )
        path = tmp_path / f"{tag}.ckpt"
        adapted.save(path)
        outputs.append((path.read_bytes(), report.to_json().encode()))
    same = outputs[0] == outputs[1]
    criterion(
        "determinism (byte-identical checkpoint + run report)",
        same,
        f"checkpoint bytes equal: {outputs[0][0] == outputs[1][0]}, "
        f"report bytes equal: {outputs[0][1] == outputs[1][1]}",
    )


# --- whitening --------------------------------------------------------------

def test_whitening_covariance():
    r = np.random.default_rng(7)
    raw = r.normal(size=(1000, 8)) @ r.normal(size=(8, 8)) + 1.0
    emb = EmbeddingMatrix(normalize_rows(raw), [str(i) for i in range(1000)])
    W = whitened_matrix(emb)
    Wc = W - W.mean(axis=0)
    cov = Wc.T @ Wc / W.shape[0]
    dev = float(np.abs(cov - np.eye(8)).max())
    criterion(
        "whitening covariance identity",
        dev < 1e-6,
        f"max abs deviation from identity {dev:.2e} (N=1000, d=8)",
    )
