"""Command-line entry point: corpus ingestion, training, adaptation,
evaluation, contrast inspection, and sensitivity sweeps.

Exit codes: 0 success, 1 data/validation error, 2 usage error,
3 external provider failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from collections import Counter
from pathlib import Path

import numpy as np

from .corpus import Corpus, CorpusError, load_corpus
from .discovery import clustering_nmi, discover_positives, spherical_kmeans
from .embedding import (
    EmbeddingError,
    ProjectionHead,
    embed,
    featurize_hashed,
)
from .evaluation import EvalError, bm25_eval, map_at_r, whiten
from .trainer import (
    AdaptConfig,
    ProviderAbort,
    TrainerError,
    adapt,
    sweep_alpha0,
    train_source,
)
from .transforms import TransformCache, TransformError, TransformProvider

EXIT_OK = 0
EXIT_DATA = 1
EXIT_USAGE = 2
EXIT_PROVIDER = 3

_TRANSFORM_KINDS = {
    "ir": "identifier_renaming",
    "bt": "back_translation",
    "cr": "code_rewrite",
}


class UsageError(Exception):
    pass


def _read_config_file(path) -> dict:
    """key=value per line, '#' comments; values parsed as JSON when possible."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        key, _, value = line.partition("=")
        key = key.strip().replace("-", "_")
        value = value.strip()
        try:
            out[key] = json.loads(value)
        except json.JSONDecodeError:
            out[key] = value
    return out


def _merge_config(args, keys: list) -> dict:
    """Config-file values first, explicit CLI flags win."""
    merged = {}
    if getattr(args, "config", None):
        file_cfg = _read_config_file(args.config)
        for k in keys:
            if k in file_cfg:
                merged[k] = file_cfg[k]
    for k in keys:
        v = getattr(args, k, None)
        if v is not None:
            merged[k] = v
    return merged


class RunDir:
    """Run artifact directory; the config snapshot lands before any training."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.mkdir(parents=True, exist_ok=True)

    def snapshot(self, config: dict) -> None:
        stamp = {"written_at": time.strftime("%Y-%m-%dT%H:%M:%S"), "config": config}
        (self.path / "config.json").write_text(
            json.dumps(stamp, indent=2, sort_keys=True), encoding="utf-8"
        )

    def file(self, name: str) -> Path:
        return self.path / name


def _build_adapt_config(args, provider=None) -> AdaptConfig:
    keys = [
        "clusters", "k", "tau", "batch", "epochs", "lr", "seed",
        "alpha0", "sigma", "feature_dim", "hidden_dim", "embed_dim", "ablation",
    ]
    merged = _merge_config(args, keys)
    ablation = str(merged.get("ablation", "full")).replace("-", "_")
    kwargs = dict(
        C=merged.get("clusters"),
        k=int(merged.get("k", 16)),
        tau=float(merged.get("tau", 0.05)),
        batch_anchors=int(merged.get("batch", 8)),
        epochs=int(merged.get("epochs", 10)),
        learning_rate=float(merged.get("lr", 1e-3)),
        seed=int(merged.get("seed", 0)),
        alpha0=float(merged.get("alpha0", 0.8)),
        sigma=float(merged.get("sigma", 0.1)),
        feature_dim=int(merged.get("feature_dim", 512)),
        embed_dim=int(merged.get("embed_dim", 128)),
        ablation=ablation,
    )
    if merged.get("hidden_dim") is not None:
        kwargs["hidden_dim"] = int(merged["hidden_dim"])
    if kwargs["C"] is not None:
        kwargs["C"] = int(kwargs["C"])
    if provider is not None:
        kwargs["provider"] = provider
    return AdaptConfig(**kwargs)


def _provider_from_args(args) -> TransformProvider:
    kind = _TRANSFORM_KINDS.get(args.transform)
    if kind is None:
        raise UsageError(f"unknown transform {args.transform!r}")
    if kind != "identifier_renaming" and not args.provider_url:
        raise UsageError(f"--transform {args.transform} requires --provider-url")
    return TransformProvider(
        kind=kind,
        endpoint=args.provider_url,
        pivot_language=args.pivot,
        seed=args.seed or 0,
    )


def cmd_ingest(args) -> int:
    corpus = load_corpus(args.corpus, args.role)
    langs = Counter(p.language for p in corpus.programs)
    labels = Counter(p.label for p in corpus.programs if p.label is not None)
    print(f"corpus: {args.corpus}")
    print(f"programs: {len(corpus)}  role: {args.role}  language: {corpus.language}")
    print(f"labeled: {sum(labels.values())}  distinct labels: {len(labels)}")
    for lang, n in sorted(langs.items()):
        print(f"  language {lang}: {n}")
    if args.stats:
        for lab, n in sorted(labels.items()):
            print(f"  label {lab}: {'#' * n} {n}")
    return EXIT_OK


def cmd_train_source(args) -> int:
    corpus = load_corpus(args.corpus, "source")
    config = _build_adapt_config(args)
    run = RunDir(args.run_dir)
    run.snapshot({"command": "train-source", **config.to_dict()})
    head = train_source(corpus, config)
    out = run.file("source_head.ckpt")
    head.save(out)
    print(f"checkpoint written: {out}")
    return EXIT_OK


def cmd_adapt(args) -> int:
    corpus = load_corpus(args.corpus, "target")
    provider = _provider_from_args(args)
    config = _build_adapt_config(args, provider)
    if config.C is None:
        raise UsageError("--clusters is required for adapt")
    head = ProjectionHead.load(args.checkpoint)
    run = RunDir(args.run_dir)
    run.snapshot({"command": "adapt", **config.to_dict()})
    cache = TransformCache(run.file("transform-cache")) if args.cache is None \
        else TransformCache(args.cache)
    labels = [p.label for p in corpus.programs]
    sidecar = labels if corpus.is_labeled() else None
    adapted, report = adapt(
        head, corpus.unlabeled_view(), config, eval_labels=sidecar, cache=cache
    )
    out = run.file("adapted_head.ckpt")
    adapted.save(out)
    run.file("run_report.json").write_text(report.to_json(), encoding="utf-8")
    if sidecar is not None:
        with open(run.file("nmi_curve.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "nmi"])
            for ep in report.epochs:
                w.writerow([ep["epoch"], ep["nmi"]])
    print(f"checkpoint written: {out}")
    print(f"run report written: {run.file('run_report.json')}")
    return EXIT_OK


def _eval_report(args):
    corpus = load_corpus(args.corpus, args.role)
    if not corpus.is_labeled():
        raise CorpusError("evaluation requires a labeled corpus")
    labels = [p.label for p in corpus.programs]
    if args.baseline == "bm25":
        return bm25_eval(corpus, labels)
    if not args.checkpoint:
        raise UsageError(f"--baseline {args.baseline} requires --checkpoint")
    head = ProjectionHead.load(args.checkpoint)
    features = featurize_hashed(corpus, head.in_dim, args.seed or 0)
    emb = embed(features, head, corpus.ids)
    if args.baseline == "whiten":
        emb = whiten(emb)
    rep = map_at_r(emb, labels)
    rep.baseline = args.baseline
    return rep


def cmd_eval(args) -> int:
    rep = _eval_report(args)
    payload = rep.to_dict()
    _validate_report(payload)
    text = json.dumps(payload, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    print(f"{rep.baseline} MAP@R: {rep.map_at_r:.4f} "
          f"({payload['num_queries']} queries, "
          f"{rep.skipped_singletons} singletons skipped)")
    return EXIT_OK


def _validate_report(payload: dict) -> None:
    try:
        import jsonschema
    except ImportError:
        return
    from importlib import resources

    schema = json.loads(
        resources.files("cloneadapt.schemas")
        .joinpath("eval_report.schema.json")
        .read_text(encoding="utf-8")
    )
    jsonschema.validate(payload, schema)


def cmd_discover(args) -> int:
    corpus = load_corpus(args.corpus, args.role)
    head = ProjectionHead.load(args.checkpoint)
    features = featurize_hashed(corpus, head.in_dim, args.seed or 0)
    emb = embed(features, head, corpus.ids)
    clusters = spherical_kmeans(emb, int(args.clusters), seed=args.seed or 0)
    contrast = discover_positives(emb, clusters, int(args.k))
    sizes = np.bincount(clusters.cluster_of, minlength=int(args.clusters))
    report = {
        "cluster_sizes": sizes.tolist(),
        "nmi": clustering_nmi(clusters.cluster_of, [p.label for p in corpus.programs])
        if corpus.is_labeled() else None,
    }
    out = sys.stdout if not args.out else open(args.out, "w", encoding="utf-8")
    try:
        out.write(json.dumps(report) + "\n")
        for i, prog in enumerate(corpus.programs):
            out.write(json.dumps({
                "anchor": prog.id,
                "positives": [corpus.programs[j].id for j in contrast.positives[i]],
            }) + "\n")
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_OK


def cmd_sweep(args) -> int:
    corpus = load_corpus(args.corpus, "target")
    if not corpus.is_labeled():
        raise CorpusError("sweep scoring requires a labeled corpus")
    provider = _provider_from_args(args)
    config = _build_adapt_config(args, provider)
    if config.C is None:
        raise UsageError("--clusters is required for sweep")
    head = ProjectionHead.load(args.checkpoint)
    run = RunDir(args.run_dir)
    run.snapshot({"command": "sweep", **config.to_dict(),
                  "alpha_grid": args.alpha_grid, "c_study": args.c_study})
    labels = [p.label for p in corpus.programs]
    features = featurize_hashed(corpus, config.feature_dim, config.seed)
    view = corpus.unlabeled_view()

    def score(h) -> float:
        return map_at_r(embed(features, h, corpus.ids), labels).map_at_r

    if args.alpha_grid:
        grid = [float(x) for x in args.alpha_grid.split(",")]
        path = run.file("alpha0_sweep.csv")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["alpha0", "ablation", "map_at_r", "origin_transformed",
                        "origin_discovered", "error"])
            fh.flush()
            for row in sweep_alpha0(head, view, config, grid, score):
                w.writerow([row["alpha0"], row["ablation"],
                            row.get("map_at_r", ""), row.get("origin_transformed", ""),
                            row.get("origin_discovered", ""), row.get("error", "")])
                fh.flush()  # interrupted sweeps keep completed cells
        print(f"alpha0 sweep written: {path}")

    if args.c_study:
        variants = {"half": max(2, config.C // 2), "double": 2 * config.C}
        wanted = [v.strip() for v in args.c_study.split(",")]
        path = run.file("c_study.csv")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["variant", "clusters", "map_at_r", "error"])
            fh.flush()
            for name in ["base"] + wanted:
                C = config.C if name == "base" else variants[name]
                cfg = AdaptConfig(**{**config.to_dict(), "provider": provider, "C": C})
                try:
                    adapted, _ = adapt(head, view, cfg)
                    w.writerow([name, C, score(adapted), ""])
                except Exception as e:
                    w.writerow([name, C, "", str(e)])
                fh.flush()
        print(f"cluster-count study written: {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cloneadapt",
        description="Cross-lingual code clone retrieval: source training, "
        "unsupervised target adaptation, evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, role_default="target"):
        p.add_argument("--corpus", required=True, help="JSONL corpus file")
        p.add_argument("--role", default=role_default, choices=["source", "target"])
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--config", default=None,
                       help="key=value config file; CLI flags take precedence")

    p = sub.add_parser("ingest", help="validate and summarize a corpus")
    common(p)
    p.add_argument("--stats", action="store_true", help="per-label histogram")
    p.set_defaults(func=cmd_ingest)

    def train_flags(p):
        p.add_argument("--epochs", type=int, default=None)
        p.add_argument("--tau", type=float, default=None)
        p.add_argument("--lr", type=float, default=None)
        p.add_argument("--batch", type=int, default=None)
        p.add_argument("--feature-dim", dest="feature_dim", type=int, default=None)
        p.add_argument("--hidden-dim", dest="hidden_dim", type=int, default=None)
        p.add_argument("--embed-dim", dest="embed_dim", type=int, default=None)

    p = sub.add_parser("train-source", help="supervised contrastive source training")
    common(p, role_default="source")
    train_flags(p)
    p.add_argument("--run-dir", dest="run_dir", required=True)
    p.set_defaults(func=cmd_train_source, clusters=None, k=None, alpha0=None,
                   sigma=None, ablation=None)

    def adapt_flags(p):
        train_flags(p)
        p.add_argument("--checkpoint", required=True, help="source head checkpoint")
        p.add_argument("--clusters", type=int, default=None, help="cluster count C")
        p.add_argument("--k", type=int, default=None, help="top-k neighborhood size")
        p.add_argument("--alpha0", type=float, default=None)
        p.add_argument("--sigma", type=float, default=None)
        p.add_argument("--transform", default="ir", choices=["ir", "bt", "cr"])
        p.add_argument("--provider-url", dest="provider_url", default=None)
        p.add_argument("--pivot", default=None, help="pivot language for bt")
        p.add_argument("--cache", default=None, help="transform cache directory")
        p.add_argument("--run-dir", dest="run_dir", required=True)

    p = sub.add_parser("adapt", help="unsupervised target-language adaptation")
    common(p)
    adapt_flags(p)
    p.add_argument("--ablation", default=None,
                   choices=["full", "no-adapt", "no-trans"])
    p.set_defaults(func=cmd_adapt)

    p = sub.add_parser("eval", help="retrieval evaluation")
    common(p)
    p.add_argument("--baseline", default="zero_shot",
                   choices=["zero_shot", "adapted", "bm25", "whiten"])
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--out", default=None, help="JSON report path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("discover", help="inspect clusters and contrast sets")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--clusters", type=int, required=True)
    p.add_argument("--k", type=int, default=16)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_discover)

    p = sub.add_parser("sweep", help="alpha0 grid and cluster-count studies")
    common(p)
    adapt_flags(p)
    p.add_argument("--alpha-grid", dest="alpha_grid", default=None,
                   help="comma-separated alpha0 values")
    p.add_argument("--c-study", dest="c_study", default=None,
                   help="comma-separated subset of {half,double}")
    p.set_defaults(func=cmd_sweep, ablation=None)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except ProviderAbort as e:
        print(f"provider failure: {e}", file=sys.stderr)
        return EXIT_PROVIDER
    except (CorpusError, EmbeddingError, EvalError, TrainerError,
            TransformError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
