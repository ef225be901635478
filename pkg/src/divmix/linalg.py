"""Dense symmetric eigensolver: Householder tridiagonalization followed by
implicit-shift QL iteration.

Kept in-tree so spectra and embeddings are reproducible bit-for-bit across
platforms and can be cross-checked against an independent library solver in
the tests. Sizes here are modest (a few thousand at most), where the O(n^3)
reduction dominated by BLAS-level numpy work is entirely adequate.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import RunError, ValidationError

_MAX_QL_SWEEPS = 50


def tridiagonalize(a: np.ndarray, accumulate: bool = True):
    """Reduce symmetric `a` to tridiagonal form T with A = Q T Q^T.

    Returns (d, e, q): diagonal d (n), subdiagonal e (n-1), and orthogonal q
    (or None when accumulate is False).
    """
    a = np.array(a, dtype=np.float64)
    n = a.shape[0]
    if a.ndim != 2 or a.shape[1] != n:
        raise ValidationError("matrix must be square")
    q = np.eye(n) if accumulate else None
    for k in range(n - 2):
        x = a[k + 1:, k]
        norm_x = np.linalg.norm(x)
        if norm_x == 0.0:
            continue
        alpha = -math.copysign(norm_x, x[0])
        v = x.copy()
        v[0] -= alpha
        vnorm = np.linalg.norm(v)
        if vnorm == 0.0:
            continue
        v /= vnorm
        sub = a[k + 1:, k + 1:]
        w = sub @ v
        c = float(v @ w)
        sub -= 2.0 * np.outer(v, w) + 2.0 * np.outer(w, v) - 4.0 * c * np.outer(v, v)
        a[k + 1, k] = alpha
        a[k + 2:, k] = 0.0
        a[k, k + 1:] = a[k + 1:, k]
        if q is not None:
            q[:, k + 1:] -= 2.0 * np.outer(q[:, k + 1:] @ v, v)
    d = np.diag(a).copy()
    e = np.diag(a, -1).copy() if n > 1 else np.zeros(0)
    return d, e, q


def ql_implicit(d: np.ndarray, e: np.ndarray, q: np.ndarray | None = None):
    """Eigen-decompose a symmetric tridiagonal matrix in place.

    `d` is the diagonal, `e` the subdiagonal (length n-1). When `q` is given
    the rotations are accumulated so its columns become eigenvectors of the
    original matrix. Returns (values ascending, vectors or None).
    """
    n = d.shape[0]
    d = d.astype(np.float64, copy=True)
    work = np.zeros(n)
    work[:n - 1] = e
    eps = np.finfo(np.float64).eps
    # Absolute deflation floor: without it, rank-deficient inputs leave a
    # trailing block of O(eps * ||A||) noise whose entries never pass a purely
    # relative negligibility test and the iteration stalls.
    floor = eps * float(np.max(np.abs(d)) + (np.max(np.abs(work)) if n > 1 else 0.0))

    for l in range(n):
        sweeps = 0
        while True:
            m = l
            while m < n - 1:
                dd = abs(d[m]) + abs(d[m + 1])
                if abs(work[m]) <= eps * dd + floor:
                    break
                m += 1
            if m == l:
                break
            sweeps += 1
            if sweeps > _MAX_QL_SWEEPS:
                raise RunError("QL iteration failed to converge")
            g = (d[l + 1] - d[l]) / (2.0 * work[l])
            r = math.hypot(g, 1.0)
            g = d[m] - d[l] + work[l] / (g + math.copysign(r, g))
            s = 1.0
            c = 1.0
            p = 0.0
            for i in range(m - 1, l - 1, -1):
                f = s * work[i]
                b = c * work[i]
                r = math.hypot(f, g)
                work[i + 1] = r
                if r == 0.0:
                    d[i + 1] -= p
                    work[m] = 0.0
                    break
                s = f / r
                c = g / r
                g = d[i + 1] - p
                r = (d[i] - g) * s + 2.0 * c * b
                p = s * r
                d[i + 1] = g + p
                g = c * r - b
                if q is not None:
                    col_i = q[:, i].copy()
                    col_j = q[:, i + 1].copy()
                    q[:, i + 1] = s * col_i + c * col_j
                    q[:, i] = c * col_i - s * col_j
            else:
                d[l] -= p
                work[l] = g
                work[m] = 0.0

    order = np.argsort(d, kind="stable")
    values = d[order]
    vectors = q[:, order] if q is not None else None
    return values, vectors


def symmetric_eigh(a: np.ndarray, want_vectors: bool = True):
    """Eigenvalues (ascending) and optionally eigenvectors of a symmetric matrix."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValidationError("matrix must be square")
    n = a.shape[0]
    if n == 0:
        raise ValidationError("matrix must be non-empty")
    if n == 1:
        value = np.array([float(a[0, 0])])
        return (value, np.ones((1, 1))) if want_vectors else (value, None)
    d, e, q = tridiagonalize(a, accumulate=want_vectors)
    return ql_implicit(d, e, q)
