"""End-to-end experiment protocols: the p x n mixture sweep with random and
full-pool baselines, the two-corpus diversity comparison, and report I/O.

Grid cells are independent jobs executed on a bounded worker pool; results
are keyed by cell so completion order never affects the report.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from .classifier import TrainConfig, evaluate, standardize, train_softmax
from .corpus import Manifest, split_manifest
from .diversity import (
    DiversityComparison,
    Embedding2D,
    compare_sets,
    mds_embed,
    pairwise_distances,
    pca_spectrum,
)
from .errors import ValidationError
from .gist import DescriptorSet, GistParams, batch_descriptors, params_hash
from .partition import MixtureSpec, sample_mixture, sample_random, split_similar_diverse
from .seeding import derive_seed

log = logging.getLogger(__name__)

TOP_K_EIGEN = 10


@dataclass(frozen=True)
class SweepConfig:
    p_grid: tuple[float, ...] = (0.0, 0.25, 0.5, 0.75, 1.0)
    n_grid: tuple[int, ...] = (25, 50, 100, 200)
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    include_random: bool = True
    include_full: bool = True

    def __post_init__(self):
        if not self.p_grid or not self.n_grid or not self.seeds:
            raise ValidationError("p_grid, n_grid, and seeds must be non-empty")
        if any(not (0.0 <= p <= 1.0) for p in self.p_grid):
            raise ValidationError("every p must lie in [0, 1]")
        if any(n < 1 for n in self.n_grid):
            raise ValidationError("every n must be >= 1")


@dataclass(frozen=True)
class CellResult:
    kind: str  # "mixture" | "random" | "original"
    p: float | None
    n: int
    seed: int
    accuracy: float
    mean_pair_dist: float
    eig10_sum: float

    @property
    def p_key(self) -> str:
        return repr(float(self.p)) if self.kind == "mixture" else self.kind


@dataclass(frozen=True)
class AggregateRow:
    p_key: str
    n: int
    mean_accuracy: float
    std_accuracy: float


@dataclass
class ExperimentReport:
    cells: list[CellResult]
    aggregates: list[AggregateRow]
    config: dict
    version: str = __version__
    created: str = ""

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "created": self.created,
            "config": self.config,
            "cells": [asdict(c) for c in self.cells],
            "aggregates": [asdict(a) for a in self.aggregates],
        }

    @staticmethod
    def from_dict(payload: dict) -> "ExperimentReport":
        return ExperimentReport(
            cells=[CellResult(**c) for c in payload["cells"]],
            aggregates=[AggregateRow(**a) for a in payload["aggregates"]],
            config=payload["config"],
            version=payload["version"],
            created=payload["created"],
        )

    def accuracy(self, p_key: str, n: int) -> float:
        """Mean accuracy of one aggregate cell."""
        for row in self.aggregates:
            if row.p_key == p_key and row.n == n:
                return row.mean_accuracy
        raise ValidationError(f"no aggregate for p={p_key}, n={n}")


def _subset_stats(dset: DescriptorSet) -> tuple[float, float]:
    dm = pairwise_distances(dset)
    spectrum = pca_spectrum(dset, TOP_K_EIGEN)
    return dm.mean(), spectrum.top_sum()


def run_mixture_sweep(
    train_manifest: Manifest,
    test_manifest: Manifest,
    params: GistParams,
    sweep: SweepConfig,
    train_cfg: TrainConfig,
    cache_dir: str | Path | None = None,
    threads: int | None = None,
    progress: Callable[[int, int], None] | None = None,
) -> ExperimentReport:
    """Train/evaluate one classifier per (p, n, seed) mixture cell.

    Descriptors are computed once (optionally cached) and the class partition
    once; each cell samples its subset, standardizes with subset statistics,
    trains, and evaluates on the fixed test set. Deterministic for a given
    configuration at any thread count.
    """
    train_m = split_manifest(train_manifest, "train")
    test_m = split_manifest(test_manifest, "test")
    if not test_m.records:
        raise ValidationError("test split is empty")
    if not train_m.records:
        raise ValidationError("train split is empty")

    train_desc = batch_descriptors(
        train_m, params, descriptor_cache_path(cache_dir, params, train_m))
    test_desc = batch_descriptors(
        test_m, params, descriptor_cache_path(cache_dir, params, test_m))
    labels_by_id = {rec.id: rec.class_label for rec in train_m.records}
    test_labels = [rec.class_label for rec in test_m.records]

    partition = split_similar_diverse(train_desc, train_m)
    _validate_pools(partition, sweep)

    per_class = train_m.by_class(split="train")
    full_n = min(len(v) for v in per_class.values())

    jobs: list[tuple] = []
    for p in sweep.p_grid:
        for n in sweep.n_grid:
            for seed in sweep.seeds:
                jobs.append(("mixture", float(p), int(n), int(seed)))
    if sweep.include_random:
        for n in sweep.n_grid:
            for seed in sweep.seeds:
                jobs.append(("random", None, int(n), int(seed)))
    if sweep.include_full:
        for seed in sweep.seeds:
            jobs.append(("original", None, full_n, int(seed)))

    def run_cell(job: tuple) -> CellResult:
        kind, p, n, seed = job
        if kind == "mixture":
            subset = sample_mixture(partition, train_m,
                                    MixtureSpec(p=p, n_per_class=n, seed=seed))
        elif kind == "random":
            subset = sample_random(train_m, n, seed)
        else:
            subset = train_m
        ids = [rec.id for rec in subset.records]
        sub_desc = train_desc.subset(ids)
        mean_dist, eig_sum = _subset_stats(sub_desc)
        sub_std, [test_std], _, _ = standardize(sub_desc, [test_desc])
        cell_cfg = TrainConfig(
            learning_rate=train_cfg.learning_rate, epochs=train_cfg.epochs,
            batch_size=train_cfg.batch_size, l2=train_cfg.l2,
            seed=derive_seed(train_cfg.seed, seed),
        )
        model = train_softmax(sub_std, [labels_by_id[i] for i in ids],
                              cell_cfg, classes=train_m.classes)
        result = evaluate(model, test_std, test_labels)
        return CellResult(kind=kind, p=p, n=n, seed=seed,
                          accuracy=result.top1_accuracy,
                          mean_pair_dist=mean_dist, eig10_sum=eig_sum)

    width = threads if threads and threads > 0 else (os.cpu_count() or 1)
    results: dict[int, CellResult] = {}
    if width == 1:
        for idx, job in enumerate(jobs):
            results[idx] = run_cell(job)
            if progress is not None:
                progress(len(results), len(jobs))
    else:
        with ThreadPoolExecutor(max_workers=width) as pool:
            futures = {pool.submit(run_cell, job): idx for idx, job in enumerate(jobs)}
            for future, idx in futures.items():
                results[idx] = future.result()
                if progress is not None:
                    progress(len(results), len(jobs))

    cells = [results[i] for i in range(len(jobs))]
    config = {
        "gist_params": asdict(params),
        "sweep": asdict(sweep),
        "train": asdict(train_cfg),
    }
    return ExperimentReport(
        cells=cells,
        aggregates=_aggregate(cells),
        config=json.loads(json.dumps(config)),  # canonical JSON types for roundtrip
        created=datetime.now(timezone.utc).isoformat(),
    )


def _validate_pools(partition, sweep: SweepConfig) -> None:
    max_n = max(sweep.n_grid)
    for class_name, (n_sim, n_div) in partition.per_class_counts.items():
        for p in sweep.p_grid:
            k = int(np.floor(p * max_n + 0.5))
            if k > n_sim or (max_n - k) > n_div:
                raise ValidationError(
                    f"pools too small for p={p}, n={max_n} in class {class_name!r} "
                    f"(similar {n_sim}, diverse {n_div})"
                )


def _aggregate(cells: list[CellResult]) -> list[AggregateRow]:
    groups: dict[tuple[str, int], list[float]] = {}
    order: list[tuple[str, int]] = []
    for cell in cells:
        key = (cell.p_key, cell.n)
        if key not in groups:
            groups[key] = []
            order.append(key)
        groups[key].append(cell.accuracy)
    rows = []
    for key in order:
        acc = np.asarray(groups[key])
        rows.append(AggregateRow(p_key=key[0], n=key[1],
                                 mean_accuracy=float(acc.mean()),
                                 std_accuracy=float(acc.std())))
    return rows


def descriptor_cache_path(cache_dir, params: GistParams, manifest: Manifest) -> Path | None:
    """Cache file name derived from the params hash and the manifest's id list."""
    if cache_dir is None:
        return None
    digest = hashlib.sha256("\n".join(rec.id for rec in manifest.records)
                            .encode("utf-8")).hexdigest()[:12]
    return Path(cache_dir) / f"gist_{params_hash(params)}_{digest}.gstc"


def run_diversity_comparison(
    manifest_a: Manifest,
    manifest_b: Manifest,
    params: GistParams,
    out_dir: str | Path,
    bins: int = 30,
    top_k: int = 10,
    names: tuple[str, str] = ("a", "b"),
    cache_dir: str | Path | None = None,
) -> tuple[DiversityComparison, dict[str, Path]]:
    """Full diversity pipeline for two corpora: descriptors, shared-range
    histograms, eigen-spectra, and per-set MDS embeddings, written as CSVs."""
    if not manifest_a.records or not manifest_b.records:
        raise ValidationError("both manifests must be non-empty")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    desc_a = batch_descriptors(
        manifest_a, params, descriptor_cache_path(cache_dir, params, manifest_a))
    desc_b = batch_descriptors(
        manifest_b, params, descriptor_cache_path(cache_dir, params, manifest_b))
    comparison = compare_sets(desc_a, desc_b, bins=bins, k=top_k, names=names)

    paths: dict[str, Path] = {}
    for name, manifest, dset, hist, spectrum in (
        (names[0], manifest_a, desc_a, comparison.histograms[0], comparison.spectra[0]),
        (names[1], manifest_b, desc_b, comparison.histograms[1], comparison.spectra[1]),
    ):
        paths[f"histogram_{name}"] = write_histogram_csv(
            hist, out_dir / f"histogram_{name}.csv")
        paths[f"spectrum_{name}"] = write_spectrum_csv(
            spectrum, out_dir / f"spectrum_{name}.csv")
        if len(dset) >= 3:
            embedding = mds_embed(pairwise_distances(dset), ids=dset.ids)
            paths[f"embedding_{name}"] = write_embedding_csv(
                embedding, manifest, out_dir / f"embedding_{name}.csv")
    comparison_path = out_dir / "comparison.json"
    comparison_path.write_text(json.dumps(comparison.to_dict(), indent=2),
                               encoding="utf-8")
    paths["comparison"] = comparison_path
    return comparison, paths


def write_histogram_csv(hist, path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_lo", "bin_hi", "count"])
        for i in range(hist.counts.shape[0]):
            writer.writerow([repr(float(hist.bin_edges[i])),
                             repr(float(hist.bin_edges[i + 1])),
                             int(hist.counts[i])])
    return path


def write_spectrum_csv(spectrum, path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["rank", "eigenvalue"])
        for i, value in enumerate(spectrum.eigenvalues, start=1):
            writer.writerow([i, repr(float(value))])
    return path


def write_embedding_csv(embedding: Embedding2D, manifest: Manifest,
                        path: str | Path) -> Path:
    by_id = {rec.id: rec for rec in manifest.records}
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "x", "y", "size_fraction", "class"])
        for i, image_id in enumerate(embedding.ids):
            rec = by_id.get(image_id)
            size = "" if rec is None or rec.size_fraction is None else repr(rec.size_fraction)
            cls = "" if rec is None else rec.class_label
            writer.writerow([image_id, repr(float(embedding.coords[i, 0])),
                             repr(float(embedding.coords[i, 1])), size, cls])
    return path


def write_report(report: ExperimentReport, out_dir: str | Path) -> dict[str, Path]:
    """Emit cells.csv, aggregate.csv, and report.json.

    cells.csv carries no timestamp, so identical configurations produce
    byte-identical files; the timestamp lives in report.json metadata.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths: dict[str, Path] = {}

    cells_path = out_dir / "cells.csv"
    with cells_path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["p", "n", "seed", "accuracy", "mean_pair_dist", "eig10_sum"])
        for cell in report.cells:
            writer.writerow([cell.p_key, cell.n, cell.seed, repr(cell.accuracy),
                             repr(cell.mean_pair_dist), repr(cell.eig10_sum)])
    paths["cells"] = cells_path

    agg_path = out_dir / "aggregate.csv"
    with agg_path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["p", "n", "mean_accuracy", "std_accuracy"])
        for row in report.aggregates:
            writer.writerow([row.p_key, row.n, repr(row.mean_accuracy),
                             repr(row.std_accuracy)])
    paths["aggregate"] = agg_path

    report_path = out_dir / "report.json"
    report_path.write_text(json.dumps(report.to_dict(), indent=2), encoding="utf-8")
    paths["report"] = report_path
    return paths


def read_report(path: str | Path) -> ExperimentReport:
    return ExperimentReport.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
