"""Distributional diversity of descriptor sets: all-pairs distance histograms,
PCA eigen-spectra, and classical 2-D MDS embeddings."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ValidationError
from .gist import DescriptorSet
from .linalg import symmetric_eigh


@dataclass(frozen=True)
class DistanceMatrix:
    """Condensed all-pairs Euclidean distances: pair (i, j), i < j, lives at
    index i*n - i*(i+1)/2 + (j - i - 1)."""

    n: int
    condensed: np.ndarray  # float64, length n(n-1)/2

    def __post_init__(self):
        expected = self.n * (self.n - 1) // 2
        if self.condensed.shape != (expected,):
            raise ValidationError(
                f"condensed length {self.condensed.shape[0]} != n(n-1)/2 = {expected}"
            )
        if expected and (not np.all(np.isfinite(self.condensed)) or self.condensed.min() < 0.0):
            raise ValidationError("distances must be finite and >= 0")

    def max(self) -> float:
        return float(self.condensed.max()) if self.condensed.size else 0.0

    def mean(self) -> float:
        return float(self.condensed.mean()) if self.condensed.size else 0.0

    def median(self) -> float:
        return float(np.median(self.condensed)) if self.condensed.size else 0.0


@dataclass(frozen=True)
class Histogram:
    bin_edges: np.ndarray
    counts: np.ndarray
    total: int

    def __post_init__(self):
        if self.counts.shape[0] != self.bin_edges.shape[0] - 1:
            raise ValidationError("counts length must be edges length - 1")
        if int(self.counts.sum()) != self.total:
            raise ValidationError("histogram total must equal sum of counts")


@dataclass(frozen=True)
class EigenSpectrum:
    eigenvalues: np.ndarray  # descending, non-negative
    total_variance: float

    def __post_init__(self):
        ev = self.eigenvalues
        if ev.size and (np.any(np.diff(ev) > 0.0) or ev.min() < 0.0):
            raise ValidationError("eigenvalues must be descending and non-negative")
        if ev.sum() > self.total_variance * (1.0 + 1e-6) + 1e-30:
            raise ValidationError("top eigenvalues exceed the total variance")

    def top_sum(self) -> float:
        return float(self.eigenvalues.sum())


@dataclass(frozen=True)
class Embedding2D:
    ids: tuple[str, ...]
    coords: np.ndarray  # (n, 2), centered on the origin
    stress: float

    def __post_init__(self):
        if self.coords.shape != (len(self.ids), 2):
            raise ValidationError("coords must be n x 2")
        if not np.all(np.isfinite(self.coords)) or self.stress < 0.0:
            raise ValidationError("coords and stress must be finite and non-negative")


@dataclass(frozen=True)
class DiversityComparison:
    names: tuple[str, str]
    mean_distance: tuple[float, float]
    median_distance: tuple[float, float]
    spectra: tuple[EigenSpectrum, EigenSpectrum]
    histograms: tuple[Histogram, Histogram]
    eigen_dominance: tuple[bool, ...]  # per index: spectrum_a[i] > spectrum_b[i]

    def to_dict(self) -> dict:
        return {
            "names": list(self.names),
            "mean_distance": {self.names[0]: self.mean_distance[0],
                              self.names[1]: self.mean_distance[1]},
            "median_distance": {self.names[0]: self.median_distance[0],
                                self.names[1]: self.median_distance[1]},
            "eigenvalues": {self.names[0]: self.spectra[0].eigenvalues.tolist(),
                            self.names[1]: self.spectra[1].eigenvalues.tolist()},
            "total_variance": {self.names[0]: self.spectra[0].total_variance,
                               self.names[1]: self.spectra[1].total_variance},
            "eigen_dominance": list(self.eigen_dominance),
        }


def condensed_index(n: int, i: int, j: int) -> int:
    if not (0 <= i < j < n):
        raise ValidationError(f"need 0 <= i < j < n, got i={i}, j={j}, n={n}")
    return i * n - i * (i + 1) // 2 + (j - i - 1)


def condensed_distances(matrix: np.ndarray) -> np.ndarray:
    """Condensed Euclidean distances of the rows, computed in 64-bit."""
    x = np.asarray(matrix, dtype=np.float64)
    n = x.shape[0]
    parts = [np.sqrt(((x[i + 1:] - x[i]) ** 2).sum(axis=1)) for i in range(n - 1)]
    if not parts:
        return np.zeros(0)
    return np.concatenate(parts)


def squareform(dm: DistanceMatrix) -> np.ndarray:
    full = np.zeros((dm.n, dm.n))
    idx = np.triu_indices(dm.n, k=1)
    full[idx] = dm.condensed
    return full + full.T


def pairwise_distances(dset: DescriptorSet) -> DistanceMatrix:
    """All-pairs Euclidean distances over the descriptor rows."""
    n = len(dset)
    if n < 2:
        raise ValidationError(f"need at least 2 rows, got {n}")
    return DistanceMatrix(n=n, condensed=condensed_distances(dset.matrix))


def distance_histogram(
    dm: DistanceMatrix,
    bins: int,
    value_range: tuple[float, float] | None = None,
) -> Histogram:
    """Equal-width histogram; bins are right-open except the last, which is
    closed (numpy convention). Default range is [0, max distance]."""
    if bins < 1:
        raise ValidationError("bins must be >= 1")
    if value_range is None:
        hi = dm.max()
        value_range = (0.0, hi if hi > 0.0 else 1.0)
    lo, hi = value_range
    if lo >= hi:
        raise ValidationError(f"histogram range must satisfy lo < hi, got ({lo}, {hi})")
    counts, edges = np.histogram(dm.condensed, bins=bins, range=(lo, hi))
    return Histogram(bin_edges=edges, counts=counts, total=int(counts.sum()))


def pca_spectrum(dset: DescriptorSet, k: int = 10) -> EigenSpectrum:
    """Top-k covariance eigenvalues (divisor n, population convention).

    Solves whichever of the covariance (dim x dim) or Gram (n x n) problem is
    smaller; they share nonzero eigenvalues.
    """
    if k < 1:
        raise ValidationError("k must be >= 1")
    x = np.asarray(dset.matrix, dtype=np.float64)
    n, dim = x.shape
    if n < 2:
        raise ValidationError(f"need at least 2 rows, got {n}")
    xc = x - x.mean(axis=0)
    if n > dim:
        cov = (xc.T @ xc) / n
        values, _ = symmetric_eigh(cov, want_vectors=False)
    else:
        gram = (xc @ xc.T) / n
        values, _ = symmetric_eigh(gram, want_vectors=False)
    total_variance = float((xc * xc).sum() / n)
    values = np.maximum(values[::-1], 0.0)  # descending, clamp tiny negatives
    k = min(k, dim)
    if values.shape[0] < k:
        values = np.concatenate([values, np.zeros(k - values.shape[0])])
    return EigenSpectrum(eigenvalues=values[:k].copy(), total_variance=total_variance)


def mds_embed(dm: DistanceMatrix, ids: Sequence[str] | None = None) -> Embedding2D:
    """Classical (Torgerson) MDS to 2-D.

    Double-center -D^2/2, take the top-2 eigenpairs, scale eigenvectors by
    sqrt(eigenvalue) (negatives clamped to 0). Sign convention: the
    largest-magnitude entry of each coordinate column is positive. Stress is
    sqrt(sum (d_hat - d)^2 / sum d^2), 0 for all-zero input distances.
    """
    n = dm.n
    if n < 3:
        raise ValidationError(f"need at least 3 points, got {n}")
    if ids is None:
        ids = tuple(str(i) for i in range(n))
    elif len(ids) != n:
        raise ValidationError("id count must match distance matrix size")
    d2 = squareform(dm) ** 2
    row_mean = d2.mean(axis=1, keepdims=True)
    col_mean = d2.mean(axis=0, keepdims=True)
    b = -0.5 * (d2 - row_mean - col_mean + d2.mean())
    values, vectors = symmetric_eigh(b, want_vectors=True)
    top = np.maximum(values[[-1, -2]], 0.0)
    coords = vectors[:, [-1, -2]] * np.sqrt(top)[None, :]
    for col in range(2):
        pivot = int(np.argmax(np.abs(coords[:, col])))
        if coords[pivot, col] < 0.0:
            coords[:, col] = -coords[:, col]
    coords = coords - coords.mean(axis=0)
    reproduced = condensed_distances(coords)
    denom = float((dm.condensed**2).sum())
    if denom == 0.0:
        stress = 0.0
    else:
        stress = float(np.sqrt(((reproduced - dm.condensed) ** 2).sum() / denom))
    return Embedding2D(ids=tuple(ids), coords=coords, stress=stress)


def compare_sets(
    a: DescriptorSet,
    b: DescriptorSet,
    bins: int = 30,
    k: int = 10,
    names: tuple[str, str] = ("a", "b"),
) -> DiversityComparison:
    """Side-by-side diversity statistics over a shared histogram range."""
    if a.params_hash != b.params_hash:
        raise ValidationError(
            f"descriptor sets use different params ({a.params_hash} vs {b.params_hash})"
        )
    dm_a = pairwise_distances(a)
    dm_b = pairwise_distances(b)
    hi = max(dm_a.max(), dm_b.max())
    value_range = (0.0, hi if hi > 0.0 else 1.0)
    hist_a = distance_histogram(dm_a, bins, value_range)
    hist_b = distance_histogram(dm_b, bins, value_range)
    spec_a = pca_spectrum(a, k)
    spec_b = pca_spectrum(b, k)
    width = min(spec_a.eigenvalues.shape[0], spec_b.eigenvalues.shape[0])
    dominance = tuple(
        bool(spec_a.eigenvalues[i] > spec_b.eigenvalues[i]) for i in range(width)
    )
    return DiversityComparison(
        names=names,
        mean_distance=(dm_a.mean(), dm_b.mean()),
        median_distance=(dm_a.median(), dm_b.median()),
        spectra=(spec_a, spec_b),
        histograms=(hist_a, hist_b),
        eigen_dominance=dominance,
    )
