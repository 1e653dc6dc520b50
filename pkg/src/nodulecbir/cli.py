"""Command-line front end for the full pipeline.

Subcommands: synth, train, embed, query, evaluate, cluster, tsne. Every
command is a pure function of its input files, flags and seeds; reruns
with identical arguments write byte-identical outputs. Failures exit
nonzero with a single line ``error[<category>]: <message>`` on stderr.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import io
from .data import Dataset, NoduleRecord, generate_synthetic
from .errors import ArgumentError, CbirError, ConfigError, UnknownIdError, UsageError
from .evaluate import DEFAULT_K_LIST, DEFAULT_PRECISION_KS, build_report
from .head import Embedding, HeadConfig, embed_all, train
from .index import METRICS, build_index, query_top_k
from .tsne import TsneConfig, color_by_malignancy, tsne
from .ward import top_splits_summary, ward_cluster

DEFAULT_SEED = 42
DEFAULT_QUERY_K = 4  # retrieval beyond four results adds little for a reader


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        raise UsageError(message)


def _parse_k_list(text: str) -> tuple[int, ...]:
    try:
        ks = tuple(int(part) for part in text.split(","))
    except ValueError:
        raise UsageError(f"--k-list must be comma-separated integers, got {text!r}")
    if not ks or any(k < 1 for k in ks):
        raise UsageError("--k-list values must be positive")
    return ks


def _head_config(args: argparse.Namespace, input_dim: int) -> HeadConfig:
    return HeadConfig(
        input_dim=input_dim,
        hidden_dim=args.hidden,
        learning_rate=args.lr,
        epochs=args.epochs,
        batch_size=args.batch,
        seed=args.seed,
    )


def _add_head_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--hidden", type=int, default=64, help="hidden layer width")
    parser.add_argument("--lr", type=float, default=1e-3, help="learning rate")
    parser.add_argument("--epochs", type=int, default=200, help="training epochs")
    parser.add_argument("--batch", type=int, default=32, help="mini-batch size")


def _load_dataset(args: argparse.Namespace) -> Dataset:
    dataset, report = io.load_dataset(args.annotations, args.features)
    print(
        f"loaded {report.kept} nodules "
        f"({report.dropped} dropped by the annotation-count filter)"
    )
    return dataset


def _sample_embeddings(
    embeddings: list[Embedding], sample: int | None, seed: int
) -> list[Embedding]:
    """Seeded subsample, kept in ascending nodule-id order."""
    embeddings = sorted(embeddings, key=lambda e: e.nodule_id)
    if sample is None or sample >= len(embeddings):
        return embeddings
    if sample < 1:
        raise ArgumentError("--sample must be at least 1")
    rng = np.random.default_rng(seed)
    chosen = sorted(rng.choice(len(embeddings), size=sample, replace=False))
    return [embeddings[int(i)] for i in chosen]


def cmd_synth(args: argparse.Namespace) -> int:
    dataset = generate_synthetic(
        n_nodules=args.n,
        feature_dim=args.dim,
        doctors_per_nodule=args.doctors,
        noise_sigma=args.sigma,
        seed=args.seed,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seeds = {"generator": args.seed}
    annotations = out / "annotations.jsonl"
    features = out / "features.jsonl"
    io.write_annotations(annotations, dataset.records, dataset.provenance, seeds)
    io.write_features(
        features, dataset.records, dataset.feature_dim, dataset.provenance, seeds
    )
    print(f"wrote {len(dataset)} records to {annotations} and {features}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    dataset = _load_dataset(args)
    config = _head_config(args, dataset.feature_dim)
    # epochs=0 persists the seeded initialization; train reports its loss.
    model, report = train(dataset, config)
    io.write_model(args.model, model)
    print(f"final training loss {report.final_loss:.6f}; wrote model to {args.model}")
    return 0


def cmd_embed(args: argparse.Namespace) -> int:
    dataset = _load_dataset(args)
    model = io.read_model(args.model)
    if model.config.input_dim != dataset.feature_dim:
        raise ConfigError(
            f"model expects {model.config.input_dim}-dim features, "
            f"dataset has {dataset.feature_dim}"
        )
    embeddings = embed_all(model, dataset)
    io.write_embeddings(
        args.embeddings,
        embeddings,
        seeds={"model": model.config.seed},
        provenance=dataset.provenance,
    )
    print(f"wrote {len(embeddings)} embeddings to {args.embeddings}")
    return 0


def cmd_query(args: argparse.Namespace) -> int:
    embeddings, _ = io.read_embeddings(args.embeddings)
    records, _ = io.read_annotations(args.annotations)
    by_id = {e.nodule_id: e for e in embeddings}
    if args.query_id not in by_id:
        raise UnknownIdError(f"unknown query id {args.query_id!r}")
    query = by_id[args.query_id]
    record_map = {r.nodule_id: r for r in records}
    if args.query_id not in record_map:
        raise UnknownIdError(f"query id {args.query_id!r} has no annotations")
    index = build_index(embeddings, record_map, metric=args.metric)
    exclude_scan = record_map[args.query_id].scan_id if args.exclude_same_scan else None
    result = query_top_k(
        index, query, args.k, exclude={args.query_id}, exclude_scan=exclude_scan
    )
    query_record = record_map[args.query_id]
    consensus = query_record.consensus()
    print(
        f"query {args.query_id} ({query_record.malignancy}; consensus "
        + " ".join(f"{v:.2f}" for v in consensus.values)
        + ")"
    )
    header = f"{'rank':>4}  {'nodule_id':<14} {'distance':>10}  "
    header += "subtlety sphericity margin lobulation malignancy  class"
    print(header)
    for rank, (nid, dist) in enumerate(result.neighbors, start=1):
        entry = index.entry(nid)
        ratings = " ".join(f"{v:8.2f}" for v in entry.consensus.values)
        print(f"{rank:>4}  {nid:<14} {dist:>10.4f}  {ratings}  {entry.malignancy}")
    if result.truncated:
        print(f"(only {len(result.neighbors)} eligible entries for k={args.k})")
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    dataset = _load_dataset(args)
    config = _head_config(args, dataset.feature_dim)
    pretrained = io.read_model(args.model) if args.model else None
    if pretrained is not None and pretrained.config.input_dim != dataset.feature_dim:
        raise ConfigError(
            f"model expects {pretrained.config.input_dim}-dim features, "
            f"dataset has {dataset.feature_dim}"
        )
    report = build_report(
        dataset,
        config,
        n_folds=args.folds,
        k_list=args.k_list,
        precision_ks=DEFAULT_PRECISION_KS,
        seed=args.seed,
        metric=args.metric,
        pretrained=pretrained,
    )
    files = io.write_report(args.out, report)
    io.write_run_manifest(
        args.out,
        "evaluate",
        files,
        seeds=report.seeds,
        provenance=dataset.provenance,
    )
    for name, stats in report.methods.items():
        line = f"{name:<10} dissent {stats.dissent_mean:.4f} +/- {stats.dissent_std:.4f}"
        if stats.precision is not None:
            line += f"  precision {stats.precision:.4f}"
        print(line)
    print(f"mean precision over k in {list(report.precision_ks)}: {report.mean_precision:.4f}")
    print(f"wrote report files to {args.out}")
    return 0


def _load_analysis_inputs(
    args: argparse.Namespace,
) -> tuple[list[Embedding], dict[str, NoduleRecord]]:
    embeddings, _ = io.read_embeddings(args.embeddings)
    records, _ = io.read_annotations(args.annotations)
    record_map = {r.nodule_id: r for r in records}
    sampled = _sample_embeddings(embeddings, args.sample, args.seed)
    return sampled, record_map


def cmd_cluster(args: argparse.Namespace) -> int:
    sampled, record_map = _load_analysis_inputs(args)
    matrix = np.stack([e.values for e in sampled])
    dendrogram = ward_cluster(matrix)
    records = [record_map[e.nodule_id] for e in sampled]
    summary = top_splits_summary(dendrogram, records, depth=args.depth)
    files = io.write_dendrogram(args.out, dendrogram, summary)
    io.write_run_manifest(args.out, "cluster", files, seeds={"sample": args.seed})
    print(
        f"clustered {len(sampled)} embeddings; wrote merge list and "
        f"top-{args.depth} split summary to {args.out}"
    )
    return 0


def cmd_tsne(args: argparse.Namespace) -> int:
    sampled, record_map = _load_analysis_inputs(args)
    config = TsneConfig(perplexity=args.perplexity, seed=args.seed)
    result = tsne(sampled, config)
    points = color_by_malignancy(result.points, record_map)
    files = io.write_projection(args.out, points)
    io.write_run_manifest(
        args.out, "tsne", files, seeds={"projection": args.seed, "sample": args.seed}
    )
    print(f"projected {len(points)} embeddings; wrote projection to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="nodulecbir", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", help="generate a synthetic dataset")
    synth.add_argument("--n", type=int, default=1200, help="number of nodules")
    synth.add_argument("--dim", type=int, default=128, help="feature dimension")
    synth.add_argument("--doctors", type=int, default=4, choices=(3, 4))
    synth.add_argument("--sigma", type=float, default=0.5, help="reader noise std")
    synth.add_argument("--seed", type=int, default=DEFAULT_SEED)
    synth.add_argument("--out", default=".", help="output directory")
    synth.set_defaults(func=cmd_synth)

    train_p = sub.add_parser("train", help="train the regression head")
    train_p.add_argument("--annotations", required=True)
    train_p.add_argument("--features", required=True)
    train_p.add_argument("--model", default="model.json", help="model output path")
    train_p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    _add_head_flags(train_p)
    train_p.set_defaults(func=cmd_train)

    embed = sub.add_parser("embed", help="extract embeddings with a trained model")
    embed.add_argument("--annotations", required=True)
    embed.add_argument("--features", required=True)
    embed.add_argument("--model", required=True)
    embed.add_argument("--embeddings", default="embeddings.jsonl", help="output path")
    embed.set_defaults(func=cmd_embed)

    query = sub.add_parser("query", help="top-k similar nodules for a query id")
    query.add_argument("--embeddings", required=True)
    query.add_argument("--annotations", required=True)
    query.add_argument("--query-id", required=True)
    query.add_argument("--k", type=int, default=DEFAULT_QUERY_K)
    query.add_argument("--metric", choices=METRICS, default="euclidean")
    query.add_argument("--exclude-same-scan", action="store_true")
    query.set_defaults(func=cmd_query)

    evaluate = sub.add_parser("evaluate", help="full cross-validated evaluation")
    evaluate.add_argument("--annotations", required=True)
    evaluate.add_argument("--features", required=True)
    evaluate.add_argument("--out", default="evaluation", help="output directory")
    evaluate.add_argument("--model", default=None, help="optional pretrained model")
    evaluate.add_argument("--folds", type=int, default=5)
    evaluate.add_argument(
        "--k-list", type=_parse_k_list, default=DEFAULT_K_LIST, metavar="A,B,C"
    )
    evaluate.add_argument("--metric", choices=METRICS, default="euclidean")
    evaluate.add_argument("--seed", type=int, default=DEFAULT_SEED)
    _add_head_flags(evaluate)
    evaluate.set_defaults(func=cmd_evaluate)

    cluster = sub.add_parser("cluster", help="hierarchical clustering of embeddings")
    cluster.add_argument("--embeddings", required=True)
    cluster.add_argument("--annotations", required=True)
    cluster.add_argument("--out", default="clustering", help="output directory")
    cluster.add_argument("--sample", type=int, default=None, help="subsample size")
    cluster.add_argument("--depth", type=int, default=3, help="splits to summarize")
    cluster.add_argument("--seed", type=int, default=DEFAULT_SEED)
    cluster.set_defaults(func=cmd_cluster)

    tsne_p = sub.add_parser("tsne", help="2-D projection of embeddings")
    tsne_p.add_argument("--embeddings", required=True)
    tsne_p.add_argument("--annotations", required=True)
    tsne_p.add_argument("--out", default="projection", help="output directory")
    tsne_p.add_argument("--perplexity", type=float, default=30.0)
    tsne_p.add_argument("--sample", type=int, default=None, help="subsample size")
    tsne_p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    tsne_p.set_defaults(func=cmd_tsne)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error[usage]: {exc}", file=sys.stderr)
        return 2
    except CbirError as exc:
        print(f"error[{exc.category}]: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error[io]: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
