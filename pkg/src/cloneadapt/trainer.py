"""Training orchestration: supervised source training and the adaptive
target-language loop with decaying transformed/discovered preference."""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field, asdict

import numpy as np

from .corpus import Corpus, UnlabeledCorpusView
from .discovery import ContrastAssignment, discover_positives, spherical_kmeans, clustering_nmi
from .embedding import (
    Adam,
    BaseFeatures,
    ProjectionHead,
    contrastive_loss_and_grad,
    embed,
    featurize_hashed,
    featurize_source,
    infonce_source_loss,
)
from .transforms import TransformCache, TransformProvider, collect_name_pool, transform


class TrainerError(ValueError):
    pass


class BatchError(TrainerError):
    pass


class ProviderAbort(RuntimeError):
    """Raised when external transformation fails for too many anchors."""


@dataclass(frozen=True)
class Schedule:
    alpha0: float = 0.8
    sigma: float = 0.1
    T_total: int = 1

    def __post_init__(self):
        if not (0.0 <= self.alpha0 <= 1.0):
            raise TrainerError(f"alpha0 must be in [0,1], got {self.alpha0}")
        if not (0.0 <= self.sigma <= 1.0):
            raise TrainerError(f"sigma must be in [0,1], got {self.sigma}")
        if self.T_total < 1:
            raise TrainerError("T_total must be positive")


def alpha_at(schedule: Schedule, t: int) -> float:
    """Preference for the transformed contrast at step t: constant alpha0 on
    the initial sigma-fraction of steps, then alpha0 * (1 - t/T_total)."""
    frac = t / schedule.T_total
    if frac <= schedule.sigma:
        return schedule.alpha0
    return schedule.alpha0 * (1.0 - frac)


@dataclass
class AdaptConfig:
    C: int | None = None
    k: int = 16
    tau: float = 0.05
    batch_anchors: int = 8
    epochs: int = 10
    learning_rate: float = 1e-3
    seed: int = 0
    alpha0: float = 0.8
    sigma: float = 0.1
    feature_dim: int = 512
    hidden_dim: int | None = None
    embed_dim: int = 128
    ablation: str = "full"  # full | no_adapt | no_trans
    provider: TransformProvider = field(default_factory=TransformProvider)

    def __post_init__(self):
        if self.ablation not in ("full", "no_adapt", "no_trans"):
            raise TrainerError(f"unknown ablation {self.ablation!r}")
        if self.epochs < 1:
            raise TrainerError("epochs must be >= 1")
        if self.tau <= 0:
            raise TrainerError("tau must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["provider"] = {
            "kind": self.provider.kind,
            "endpoint": self.provider.endpoint,
            "pivot_language": self.provider.pivot_language,
            "seed": self.provider.seed,
        }
        return d


@dataclass
class RunReport:
    epochs: list = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(
            {"epochs": self.epochs, "config": self.config}, sort_keys=True
        )


@dataclass
class BatchPlan:
    anchors: list  # program indices (into the half)
    rows: np.ndarray  # 2b x F feature rows: anchors then positives
    positives: list  # per-anchor in-batch row index lists
    negatives: list
    origins: list  # "transformed" | "discovered" per anchor


def sample_positive(anchor_pos, contrast_positives, alpha_t, rng, transform_row):
    """Choose the positive contrast: transformed with probability alpha_t,
    else uniform over the discovered set. Empty discovered set forces the
    transformed branch; returns (feature_row_or_index, origin)."""
    use_transformed = (not contrast_positives) or (rng.random() < alpha_t)
    if use_transformed:
        return transform_row(anchor_pos), "transformed"
    pick = contrast_positives[int(rng.integers(len(contrast_positives)))]
    return pick, "discovered"


def build_batch(
    batch_anchors: list,
    contrast: ContrastAssignment,
    positive_rows: list,
    anchor_features: np.ndarray,
    origins: list,
) -> BatchPlan:
    """Assemble the 2b-row batch with in-batch positive/negative index sets.

    positive_rows[i] is the feature row of the sampled positive for anchor i.
    In-batch positives of anchor i: its own sampled positive, plus any other
    batch anchor from the same cluster that is in i's discovered top-k set.
    Negatives: batch anchors from other clusters and their sampled positives.
    """
    b = len(batch_anchors)
    cl = contrast.cluster_of
    if len({int(cl[a]) for a in batch_anchors}) < 2:
        raise BatchError("all batch anchors share one cluster")
    rows = np.vstack([anchor_features[batch_anchors], np.vstack(positive_rows)])
    positives, negatives = [], []
    for i, a in enumerate(batch_anchors):
        topk = set(contrast.positives[a])
        P = [b + i]
        N = []
        for j, other in enumerate(batch_anchors):
            if j == i:
                continue
            if cl[other] == cl[a]:
                if other in topk:
                    P.append(j)
            else:
                N.append(j)
                N.append(b + j)
        positives.append(P)
        negatives.append(N)
    return BatchPlan(list(batch_anchors), rows, positives, negatives, list(origins))


def _label_balanced_batches(labels, batch_size, rng):
    """Yield batches of batch_size/2 labels x 2 programs each."""
    by_label = {}
    for i, lab in enumerate(labels):
        by_label.setdefault(lab, []).append(i)
    usable = {}
    for lab, idx in by_label.items():
        if len(idx) < 2:
            warnings.warn(f"label {lab} has < 2 members; excluded from batches")
            continue
        usable[lab] = idx
    if len(usable) < 2:
        raise TrainerError("need at least 2 labels with >= 2 members")
    labels_order = sorted(usable)
    n_labels_per_batch = max(2, batch_size // 2)
    perm = rng.permutation(len(labels_order))
    for start in range(0, len(perm) - 1, n_labels_per_batch):
        chunk = perm[start : start + n_labels_per_batch]
        if len(chunk) < 2:
            continue
        batch = []
        for li in chunk:
            idx = usable[labels_order[li]]
            take = rng.choice(len(idx), size=2, replace=False)
            batch.extend(idx[t] for t in take)
        yield batch


def train_source(
    corpus: Corpus,
    config: AdaptConfig,
    valid_corpus: Corpus | None = None,
    features: BaseFeatures | None = None,
    valid_features: BaseFeatures | None = None,
) -> ProjectionHead:
    """Supervised InfoNCE training on the labeled source corpus.

    Returns the head with the best validation MAP@R when a validation corpus
    is given, else the final head. Deterministic under config.seed.
    """
    from .evaluation import map_at_r  # local import to avoid a cycle

    if not corpus.is_labeled():
        raise TrainerError("train_source requires a labeled corpus")
    if features is None:
        features = featurize_hashed(corpus, config.feature_dim, config.seed)
    head = ProjectionHead.init_random(
        features.dim, config.hidden_dim, config.embed_dim, config.seed
    )
    opt = Adam(head, lr=config.learning_rate)
    rng = np.random.default_rng(config.seed)
    labels = [p.label for p in corpus.programs]

    best_head = None
    best_score = -1.0
    if valid_corpus is not None and valid_features is None:
        valid_features = featurize_hashed(valid_corpus, config.feature_dim, config.seed)

    for _epoch in range(config.epochs):
        for batch in _label_balanced_batches(labels, config.batch_anchors, rng):
            rows = features.matrix[batch]
            batch_labels = [labels[i] for i in batch]
            _, grads = infonce_source_loss(rows, head, batch_labels, config.tau)
            opt.step(grads)
        if valid_corpus is not None:
            emb = embed(valid_features, head, valid_corpus.ids)
            score = map_at_r(emb, [p.label for p in valid_corpus.programs]).map_at_r
            if score > best_score:
                best_score = score
                best_head = head.copy()

    return best_head if best_head is not None else head


def _halve_indices(n: int, seed: int) -> tuple[list, list]:
    if n < 2:
        raise TrainerError(f"cannot halve {n} programs")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    cut = (n + 1) // 2
    return sorted(perm[:cut].tolist()), sorted(perm[cut:].tolist())


def adapt(
    head: ProjectionHead,
    target: UnlabeledCorpusView,
    config: AdaptConfig,
    eval_labels: list | None = None,
    features: BaseFeatures | None = None,
    cache: TransformCache | None = None,
    valid_features: BaseFeatures | None = None,
    valid_ids: list | None = None,
    valid_labels: list | None = None,
) -> tuple[ProjectionHead, RunReport]:
    """Adaptive contrastive refinement on the unlabeled target corpus.

    Alternates between two random halves of the corpus; rediscovers contrasts
    (spherical k-means + top-k neighborhood) once per epoch; mixes transformed
    and discovered positives per the decay schedule. `eval_labels` is an
    evaluation-only sidecar used to record per-epoch NMI; the trainer never
    uses it for training decisions.
    """
    from .evaluation import map_at_r  # local import to avoid a cycle
    from .embedding import EmbeddingMatrix

    if not isinstance(target, UnlabeledCorpusView):
        raise TrainerError("adapt requires an unlabeled corpus view")
    if config.C is None:
        raise TrainerError("config.C (cluster count) is required for adaptation")

    head = head.copy()
    n = len(target)
    if features is None:
        features = featurize_hashed(target, config.feature_dim, config.seed)
    half1, half2 = _halve_indices(n, config.seed)
    if min(len(half1), len(half2)) < config.C:
        raise TrainerError(
            f"half size {min(len(half1), len(half2))} < C={config.C}; use a smaller C"
        )

    b = config.batch_anchors
    steps_per_epoch = math.ceil(len(half1) / b)
    T_total = config.epochs * steps_per_epoch
    schedule = Schedule(config.alpha0, config.sigma, T_total)

    pool = collect_name_pool(target)
    opt = Adam(head, lr=config.learning_rate)
    rng = np.random.default_rng(config.seed + 1)
    report = RunReport(config=config.to_dict())
    programs = target.programs
    t = 0

    best_head, best_score = None, -1.0

    for epoch in range(1, config.epochs + 1):
        half = half1 if epoch % 2 == 1 else half2
        half = list(half)
        half_features = features.matrix[half]

        emb = EmbeddingMatrix(
            embed(BaseFeatures(half_features), head, [programs[i].id for i in half]).vectors,
            [programs[i].id for i in half],
        )
        clusters = spherical_kmeans(emb, config.C, seed=config.seed + epoch)
        contrast = discover_positives(emb, clusters, config.k)

        nmi = None
        if eval_labels is not None:
            nmi = clustering_nmi(
                clusters.cluster_of, [eval_labels[i] for i in half]
            )

        # anchors with a singleton cluster (empty discovered set) are excluded
        anchor_pool = [j for j in range(len(half)) if contrast.positives[j]]
        if len(anchor_pool) < 2:
            raise TrainerError("too few usable anchors (all clusters singleton)")

        def transform_row(local_idx, _epoch=epoch):
            prog = programs[half[local_idx]]
            variant = transform(prog, config.provider, cache, pool, salt=_epoch)
            row = featurize_source(
                variant.variant_source, prog.language, config.feature_dim, config.seed
            )
            return row, variant.fallback

        losses = []
        fallbacks = 0
        origin_counts = {"transformed": 0, "discovered": 0}
        alpha_start = None
        alpha_end = None
        perm = rng.permutation(len(anchor_pool))
        order = [anchor_pool[i] for i in perm]

        for start in range(0, len(order), b):
            batch_anchors = order[start : start + b]
            if len(batch_anchors) < 2:
                continue
            cl = contrast.cluster_of
            retries = 0
            while len({int(cl[a]) for a in batch_anchors}) < 2:
                retries += 1
                if retries > 20:
                    raise BatchError("could not assemble a multi-cluster batch")
                pick = rng.choice(len(anchor_pool), size=len(batch_anchors), replace=False)
                batch_anchors = [anchor_pool[i] for i in pick]

            if config.ablation == "no_adapt":
                a_t = config.alpha0
            elif config.ablation == "no_trans":
                a_t = 0.0
            else:
                a_t = alpha_at(schedule, t)
            if alpha_start is None:
                alpha_start = a_t
            alpha_end = a_t

            pos_rows, origins, kept = [], [], []
            for i in batch_anchors:
                chosen, origin = sample_positive(
                    i, contrast.positives[i], a_t, rng, lambda j: j
                )
                if origin == "transformed":
                    try:
                        row, fb = transform_row(i)
                    except Exception:
                        continue  # skip anchor on transform failure
                    if fb:
                        fallbacks += 1
                    pos_rows.append(row)
                else:
                    pos_rows.append(half_features[chosen])
                origins.append(origin)
                origin_counts[origin] += 1
                kept.append(i)
            if len(kept) < 2 or len({int(cl[a]) for a in kept}) < 2:
                t += 1
                continue

            plan = build_batch(kept, contrast, pos_rows, half_features, origins)
            loss, grads = contrastive_loss_and_grad(
                plan.rows, head, plan.positives, plan.negatives, config.tau
            )
            opt.step(grads)
            losses.append(loss / len(kept))
            t += 1

        if fallbacks > 0.5 * len(order):
            raise ProviderAbort(
                f"epoch {epoch}: provider fell back for {fallbacks}/{len(order)} anchors"
            )

        report.epochs.append(
            {
                "epoch": epoch,
                "half": 1 if epoch % 2 == 1 else 2,
                "mean_loss": float(np.mean(losses)) if losses else 0.0,
                "alpha_start": alpha_start,
                "alpha_end": alpha_end,
                "nmi": nmi,
                "fallbacks": fallbacks,
                "origin_transformed": origin_counts["transformed"],
                "origin_discovered": origin_counts["discovered"],
            }
        )

        if valid_features is not None and valid_labels is not None:
            emb_v = embed(valid_features, head, valid_ids or [str(i) for i in range(len(valid_labels))])
            score = map_at_r(emb_v, valid_labels).map_at_r
            if score > best_score:
                best_score, best_head = score, head.copy()

    if best_head is not None:
        return best_head, report
    return head, report


def sweep_alpha0(
    head: ProjectionHead,
    target: UnlabeledCorpusView,
    config: AdaptConfig,
    grid: list,
    eval_fn,
    ablations: tuple = ("full", "no_adapt"),
    cache: TransformCache | None = None,
) -> list:
    """Sensitivity study over the initial transformed-contrast preference.

    Runs adapt once per (alpha0, ablation) grid cell and scores each adapted
    head with eval_fn(head) -> MAP@R. Failed cells are recorded with an error
    message and the sweep continues. Returns a list of row dicts.
    """
    rows = []
    for a0 in grid:
        if not (0.0 <= a0 <= 1.0):
            raise TrainerError(f"alpha0 grid value {a0} outside [0,1]")
        for ablation in ablations:
            cfg = AdaptConfig(**{**config.to_dict(), "provider": config.provider,
                                 "alpha0": float(a0), "ablation": ablation})
            row = {"alpha0": float(a0), "ablation": ablation}
            try:
                adapted, rep = adapt(head, target, cfg, cache=cache)
                row["map_at_r"] = float(eval_fn(adapted))
                row["origin_transformed"] = sum(
                    e["origin_transformed"] for e in rep.epochs
                )
                row["origin_discovered"] = sum(
                    e["origin_discovered"] for e in rep.epochs
                )
            except Exception as e:
                row["error"] = str(e)
            rows.append(row)
    return rows
