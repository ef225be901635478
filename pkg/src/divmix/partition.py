"""Similar/diverse partitioning of each class by distance to its medoid, and
class-balanced mixture sampling with a controlled similar fraction p."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import ImageRecord, Manifest
from .diversity import condensed_distances, squareform, DistanceMatrix
from .errors import ValidationError
from .gist import DescriptorSet
from .seeding import keyed_rng

SIMILAR = "similar"
DIVERSE = "diverse"


@dataclass(frozen=True)
class PartitionLabels:
    assignment: dict[str, str]  # image id -> SIMILAR | DIVERSE
    per_class_counts: dict[str, tuple[int, int]]  # class -> (n_similar, n_diverse)
    medoid_distance: dict[str, float]  # image id -> GIST distance to class medoid


@dataclass(frozen=True)
class MixtureSpec:
    p: float
    n_per_class: int
    seed: int

    def __post_init__(self):
        if not (0.0 <= self.p <= 1.0):
            raise ValidationError(f"p must be in [0, 1], got {self.p}")
        if self.n_per_class < 1:
            raise ValidationError("n_per_class must be >= 1")


def split_similar_diverse(dset: DescriptorSet, manifest: Manifest) -> PartitionLabels:
    """Label each train image similar or diverse within its class.

    The class medoid minimizes summed GIST distance to the class (ties to the
    earliest manifest position); images are ranked by distance to the medoid
    and the closest ceil(m/2) are similar, the rest diverse, ties again broken
    by manifest order.
    """
    row_index = {image_id: i for i, image_id in enumerate(dset.ids)}
    assignment: dict[str, str] = {}
    counts: dict[str, tuple[int, int]] = {}
    med_dist: dict[str, float] = {}
    for class_name, members in manifest.by_class(split="train").items():
        m = len(members)
        if m < 2:
            raise ValidationError(f"class {class_name!r} has {m} train images; need >= 2")
        try:
            rows = [row_index[rec.id] for rec in members]
        except KeyError as exc:
            raise ValidationError(
                f"train record {exc.args[0]!r} has no descriptor row"
            ) from exc
        x = dset.matrix[rows].astype(np.float64)
        dist = squareform(DistanceMatrix(n=m, condensed=condensed_distances(x)))
        medoid = int(np.argmin(dist.sum(axis=1)))  # first minimum = manifest order
        to_medoid = dist[medoid]
        order = np.argsort(to_medoid, kind="stable")
        n_similar = (m + 1) // 2
        for rank, idx in enumerate(order):
            rec = members[int(idx)]
            assignment[rec.id] = SIMILAR if rank < n_similar else DIVERSE
            med_dist[rec.id] = float(to_medoid[int(idx)])
        counts[class_name] = (n_similar, m - n_similar)
    return PartitionLabels(assignment=assignment, per_class_counts=counts,
                           medoid_distance=med_dist)


def _round_half_up(value: float) -> int:
    return int(math.floor(value + 0.5))


def _pool_prefix(pool: list[ImageRecord], take: int, *keys: int) -> list[ImageRecord]:
    # Fixed permutation per pool per seed; prefixes nest as `take` grows, so
    # moving p by 1/n swaps exactly one record between pools.
    perm = keyed_rng(*keys).permutation(len(pool))
    return [pool[int(i)] for i in perm[:take]]


def sample_mixture(partition: PartitionLabels, manifest: Manifest,
                   spec: MixtureSpec) -> Manifest:
    """Class-balanced subset with round(p * n) similar and the rest diverse.

    Draws are without replacement from per-(seed, class, pool) permutation
    prefixes; output records keep manifest order within each class.
    """
    picked: list[ImageRecord] = []
    for class_idx, (class_name, members) in enumerate(manifest.by_class(split="train").items()):
        similar_pool = [r for r in members if partition.assignment.get(r.id) == SIMILAR]
        diverse_pool = [r for r in members if partition.assignment.get(r.id) == DIVERSE]
        k = _round_half_up(spec.p * spec.n_per_class)
        need_diverse = spec.n_per_class - k
        if k > len(similar_pool):
            raise ValidationError(
                f"class {class_name!r}: similar pool has {len(similar_pool)} images, "
                f"need {k} (short {k - len(similar_pool)})"
            )
        if need_diverse > len(diverse_pool):
            raise ValidationError(
                f"class {class_name!r}: diverse pool has {len(diverse_pool)} images, "
                f"need {need_diverse} (short {need_diverse - len(diverse_pool)})"
            )
        chosen = (_pool_prefix(similar_pool, k, spec.seed, class_idx, 0)
                  + _pool_prefix(diverse_pool, need_diverse, spec.seed, class_idx, 1))
        order = {rec.id: i for i, rec in enumerate(members)}
        chosen.sort(key=lambda rec: order[rec.id])
        picked.extend(chosen)
    return Manifest(records=tuple(picked), classes=manifest.classes)


def sample_random(manifest: Manifest, n_per_class: int, seed: int) -> Manifest:
    """Uniform class-balanced subset of the train split, without replacement."""
    if n_per_class < 1:
        raise ValidationError("n_per_class must be >= 1")
    picked: list[ImageRecord] = []
    for class_idx, (class_name, members) in enumerate(manifest.by_class(split="train").items()):
        if n_per_class > len(members):
            raise ValidationError(
                f"class {class_name!r} has {len(members)} train images, need {n_per_class}"
            )
        chosen = _pool_prefix(members, n_per_class, seed, class_idx)
        order = {rec.id: i for i, rec in enumerate(members)}
        chosen.sort(key=lambda rec: order[rec.id])
        picked.extend(chosen)
    return Manifest(records=tuple(picked), classes=manifest.classes)


def write_partition_csv(partition: PartitionLabels, manifest: Manifest,
                        path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "class", "subset", "medoid_distance"])
        for rec in manifest.records:
            if rec.id in partition.assignment:
                writer.writerow([
                    rec.id, rec.class_label,
                    partition.assignment[rec.id],
                    repr(partition.medoid_distance[rec.id]),
                ])
    return path
