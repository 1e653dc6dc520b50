"""Versioned, full-precision file formats for the pipeline.

Line-delimited JSON for datasets and embeddings (first line is a manifest
record naming the format and version), a single JSON document for models
and reports, and plain CSV for plot data. Floats are serialized in
shortest round-trip decimal form, so write-then-read reproduces values
exactly and identical runs produce byte-identical files.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .data import (
    CHARACTERISTICS,
    Dataset,
    FilterReport,
    NoduleRecord,
    RatingVector,
    SCALE_RAW,
    filter_dataset,
)
from .errors import FormatError, JoinError
from .evaluate import EvaluationReport
from .head import Embedding, HeadConfig, HeadModel
from .tsne import ProjectedPoint
from .ward import Dendrogram, SplitSummary

TOOL_VERSION = "nodulecbir 0.1.0"

FORMAT_ANNOTATIONS = "nodulecbir/annotations"
FORMAT_FEATURES = "nodulecbir/features"
FORMAT_EMBEDDINGS = "nodulecbir/embeddings"
FORMAT_MODEL = "nodulecbir/head-model"
FORMAT_REPORT = "nodulecbir/report"
FORMAT_RUN_MANIFEST = "nodulecbir/run-manifest"
FORMAT_VERSION = 1


def _manifest(fmt: str, **extra: object) -> dict:
    record = {"format": fmt, "version": FORMAT_VERSION, "tool": TOOL_VERSION}
    record.update({k: v for k, v in extra.items() if v is not None})
    return record


def _check_manifest(record: dict, expected: str, path: Path) -> dict:
    if record.get("format") != expected:
        raise FormatError(
            f"{path}: expected format {expected!r}, found {record.get('format')!r}"
        )
    if record.get("version") != FORMAT_VERSION:
        raise FormatError(
            f"{path}: unknown {expected} version {record.get('version')!r} "
            f"(this tool reads version {FORMAT_VERSION})"
        )
    return record


def _dump(obj: object) -> str:
    return json.dumps(obj, sort_keys=True)


def _write_jsonl(path: Path, manifest: dict, rows: Sequence[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(_dump(manifest) + "\n")
        for row in rows:
            fh.write(_dump(row) + "\n")


def _read_jsonl(path: Path, expected: str) -> tuple[dict, list[dict]]:
    path = Path(path)
    with open(path, "r", encoding="utf-8") as fh:
        lines = [line for line in fh if line.strip()]
    if not lines:
        raise FormatError(f"{path}: empty file")
    try:
        parsed = [json.loads(line) for line in lines]
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON line ({exc})") from None
    manifest = _check_manifest(parsed[0], expected, path)
    return manifest, parsed[1:]


def write_annotations(
    path: str | Path,
    records: Sequence[NoduleRecord],
    provenance: str | None = None,
    seeds: Mapping[str, int] | None = None,
) -> None:
    rows = [
        {
            "nodule_id": r.nodule_id,
            "scan_id": r.scan_id,
            "ratings": [list(map(float, a.values)) for a in r.annotations],
        }
        for r in records
    ]
    manifest = _manifest(
        FORMAT_ANNOTATIONS,
        provenance=provenance,
        seeds=dict(seeds) if seeds else None,
    )
    _write_jsonl(Path(path), manifest, rows)


def read_annotations(path: str | Path) -> tuple[list[NoduleRecord], dict]:
    """Records without feature vectors (pair with :func:`read_features`)."""
    manifest, rows = _read_jsonl(Path(path), FORMAT_ANNOTATIONS)
    records = []
    for row in rows:
        records.append(
            NoduleRecord(
                nodule_id=str(row["nodule_id"]),
                scan_id=str(row["scan_id"]),
                annotations=tuple(
                    RatingVector(np.asarray(r, dtype=np.float64), SCALE_RAW)
                    for r in row["ratings"]
                ),
            )
        )
    return records, manifest


def write_features(
    path: str | Path,
    records: Sequence[NoduleRecord],
    feature_dim: int,
    provenance: str | None = None,
    seeds: Mapping[str, int] | None = None,
) -> None:
    rows = [
        {"nodule_id": r.nodule_id, "values": list(map(float, r.feature))}
        for r in records
    ]
    manifest = _manifest(
        FORMAT_FEATURES,
        feature_dim=feature_dim,
        provenance=provenance,
        seeds=dict(seeds) if seeds else None,
    )
    _write_jsonl(Path(path), manifest, rows)


def read_features(path: str | Path) -> tuple[dict[str, np.ndarray], int, dict]:
    manifest, rows = _read_jsonl(Path(path), FORMAT_FEATURES)
    feature_dim = int(manifest.get("feature_dim", 0))
    features: dict[str, np.ndarray] = {}
    for row in rows:
        values = np.asarray(row["values"], dtype=np.float64)
        if feature_dim == 0:
            feature_dim = values.shape[0]
        if values.shape != (feature_dim,):
            raise FormatError(
                f"{path}: feature of {row['nodule_id']!r} has length "
                f"{values.shape[0]}, expected {feature_dim}"
            )
        features[str(row["nodule_id"])] = values
    return features, feature_dim, manifest


def load_dataset(
    annotations_path: str | Path, features_path: str | Path
) -> tuple[Dataset, FilterReport]:
    """Join the two files on nodule id and apply the annotation-count filter."""
    records, ann_manifest = read_annotations(annotations_path)
    features, _, _ = read_features(features_path)
    record_ids = {r.nodule_id for r in records}
    if record_ids != set(features):
        missing = sorted(record_ids - set(features))[:3]
        extra = sorted(set(features) - record_ids)[:3]
        raise JoinError(
            f"annotations and features disagree on nodule ids "
            f"(missing features for {missing}, unmatched features {extra})"
        )
    full = [
        NoduleRecord(
            nodule_id=r.nodule_id,
            scan_id=r.scan_id,
            annotations=r.annotations,
            feature=features[r.nodule_id],
        )
        for r in records
    ]
    provenance = ann_manifest.get("provenance", "real")
    return filter_dataset(full, provenance=provenance)


def write_embeddings(
    path: str | Path,
    embeddings: Sequence[Embedding],
    seeds: Mapping[str, int] | None = None,
    provenance: str | None = None,
) -> None:
    rows = [
        {"nodule_id": e.nodule_id, "values": list(map(float, e.values))}
        for e in embeddings
    ]
    manifest = _manifest(
        FORMAT_EMBEDDINGS,
        provenance=provenance,
        seeds=dict(seeds) if seeds else None,
    )
    _write_jsonl(Path(path), manifest, rows)


def read_embeddings(path: str | Path) -> tuple[list[Embedding], dict]:
    manifest, rows = _read_jsonl(Path(path), FORMAT_EMBEDDINGS)
    return [
        Embedding(str(row["nodule_id"]), np.asarray(row["values"], dtype=np.float64))
        for row in rows
    ], manifest


def write_model(path: str | Path, model: HeadModel) -> None:
    config = model.config
    doc = _manifest(FORMAT_MODEL)
    doc["config"] = {
        "input_dim": config.input_dim,
        "hidden_dim": config.hidden_dim,
        "learning_rate": config.learning_rate,
        "epochs": config.epochs,
        "batch_size": config.batch_size,
        "seed": config.seed,
        "embed_post_activation": config.embed_post_activation,
    }
    doc["dims"] = {
        "input": config.input_dim,
        "hidden": config.hidden_dim,
        "embed": config.embed_dim,
        "output": config.output_dim,
    }
    doc["layers"] = {
        name: list(map(float, getattr(model, name).ravel()))
        for name in ("w1", "b1", "w2", "b2", "w3", "b3")
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(doc, sort_keys=True, indent=1) + "\n")


def read_model(path: str | Path) -> HeadModel:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from None
    _check_manifest(doc, FORMAT_MODEL, path)
    config = HeadConfig(**doc["config"])
    shapes = {
        "w1": (config.hidden_dim, config.input_dim),
        "b1": (config.hidden_dim,),
        "w2": (config.embed_dim, config.hidden_dim),
        "b2": (config.embed_dim,),
        "w3": (config.output_dim, config.embed_dim),
        "b3": (config.output_dim,),
    }
    layers = {
        name: np.asarray(doc["layers"][name], dtype=np.float64).reshape(shape)
        for name, shape in shapes.items()
    }
    return HeadModel(config=config, **layers)


def _write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence[object]]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])


def write_report(out_dir: str | Path, report: EvaluationReport) -> dict[str, str]:
    """Emit report.json, per-method dissent CSVs and the log-normal fit table.

    Returns a mapping of relative file name to format tag, for the run
    manifest.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files: dict[str, str] = {}

    doc = _manifest(FORMAT_REPORT)
    doc["report"] = report.as_dict()
    (out / "report.json").write_text(
        json.dumps(doc, sort_keys=True, indent=1) + "\n", encoding="utf-8"
    )
    files["report.json"] = f"{FORMAT_REPORT}@{FORMAT_VERSION}"

    for method, samples in report.dissent_samples.items():
        name = f"dissent_{method}.csv"
        _write_csv(
            out / name,
            ("method", "subject", "nodule_id", "dissent"),
            [(method, s.subject, s.nodule_id, s.score) for s in samples],
        )
        files[name] = f"csv/dissent@{FORMAT_VERSION}"

    fit_rows = []
    for method, stats in report.methods.items():
        fit = stats.lognormal
        if fit is not None:
            fit_rows.append((method, fit.mu, fit.sigma, fit.n_samples))
    _write_csv(
        out / "lognormal_fits.csv",
        ("method", "mu", "sigma", "n_samples"),
        fit_rows,
    )
    files["lognormal_fits.csv"] = f"csv/lognormal-fits@{FORMAT_VERSION}"
    return files


def write_dendrogram(
    out_dir: str | Path, dendrogram: Dendrogram, summary: SplitSummary
) -> dict[str, str]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(
        out / "merges.csv",
        ("merge", "cluster_a", "cluster_b", "height", "size"),
        [
            (t, m.cluster_a, m.cluster_b, m.height, m.size)
            for t, m in enumerate(dendrogram.merges)
        ],
    )
    splits = [
        {
            "parent": split.parent,
            "height": split.height,
            "sides": [
                {
                    "cluster": side.cluster,
                    "n_members": len(side.nodule_ids),
                    "nodule_ids": list(side.nodule_ids),
                    "mean_rating": {
                        name: float(side.mean_rating.values[i])
                        for i, name in enumerate(CHARACTERISTICS)
                    },
                }
                for side in split.sides
            ],
        }
        for split in summary.splits
    ]
    (out / "splits.json").write_text(
        json.dumps({"splits": splits}, sort_keys=True, indent=1) + "\n",
        encoding="utf-8",
    )
    return {
        "merges.csv": f"csv/merges@{FORMAT_VERSION}",
        "splits.json": f"json/splits@{FORMAT_VERSION}",
    }


def write_projection(out_dir: str | Path, points: Sequence[ProjectedPoint]) -> dict[str, str]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(
        out / "projection.csv",
        ("nodule_id", "x", "y", "malignancy"),
        [(p.nodule_id, p.x, p.y, p.malignancy or "") for p in points],
    )
    return {"projection.csv": f"csv/projection@{FORMAT_VERSION}"}


def write_run_manifest(
    out_dir: str | Path,
    command: str,
    files: Mapping[str, str],
    seeds: Mapping[str, int] | None = None,
    provenance: str | None = None,
) -> None:
    doc = _manifest(
        FORMAT_RUN_MANIFEST,
        command=command,
        files=dict(sorted(files.items())),
        seeds=dict(seeds) if seeds else None,
        provenance=provenance,
    )
    (Path(out_dir) / "manifest.json").write_text(
        json.dumps(doc, sort_keys=True, indent=1) + "\n", encoding="utf-8"
    )
