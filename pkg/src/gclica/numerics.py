"""Seeded randomness and the small amount of dense linear algebra the
pipeline relies on.

Random draws come from numpy's PCG64 bit generator keyed by a
``SeedSequence(seed, spawn_key=stream)``.  PCG64 output is specified by
algorithm, so equal (seed, stream) pairs give equal raw streams on every
platform.  Singular values come from LAPACK ``gesdd`` through
``numpy.linalg.svd``; eigendecompositions from ``syevd`` through
``numpy.linalg.eigh``.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import DegenerateDataError, InvalidInputError

DEFAULT_RANK_TOL = 1e-6


class SeededRng:
    """A reproducible random stream identified by ``(seed, stream)``.

    ``stream`` is a tuple of non-negative integers; children append their
    index, so two children of one parent never share a key.
    """

    def __init__(self, seed: int, stream: Sequence[int] = ()):
        seed = int(seed)
        if seed < 0 or seed >= 2**64:
            raise InvalidInputError(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = seed
        self.stream = tuple(int(s) for s in stream)
        ss = np.random.SeedSequence(seed, spawn_key=self.stream)
        self.gen = np.random.Generator(np.random.PCG64(ss))

    def child(self, index: int) -> "SeededRng":
        return SeededRng(self.seed, self.stream + (int(index),))

    def split(self, count: int) -> list["SeededRng"]:
        return [self.child(i) for i in range(count)]

    def __repr__(self):
        return f"SeededRng(seed={self.seed}, stream={self.stream})"

    # thin pass-throughs for the draws used across the package
    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.gen.normal(loc, scale, size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.gen.uniform(low, high, size)

    def laplace(self, loc=0.0, scale=1.0, size=None):
        return self.gen.laplace(loc, scale, size)

    def integers(self, low, high=None, size=None):
        return self.gen.integers(low, high, size)

    def permutation(self, x):
        return self.gen.permutation(x)


def as_rng(rng) -> SeededRng:
    if isinstance(rng, SeededRng):
        return rng
    return SeededRng(int(rng))


def _check_matrix(m) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.size == 0:
        raise InvalidInputError(f"expected a nonempty 2-D matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise InvalidInputError("matrix contains non-finite entries")
    return m


def singular_values(m) -> np.ndarray:
    return np.linalg.svd(_check_matrix(m), compute_uv=False)


def numerical_rank(m, rel_tol: float = DEFAULT_RANK_TOL) -> int:
    """Count singular values above ``rel_tol`` times the largest one."""
    if not 0.0 < rel_tol < 1.0:
        raise InvalidInputError(f"rel_tol must lie in (0, 1), got {rel_tol}")
    sv = singular_values(m)
    if sv[0] == 0.0:
        return 0
    return int(np.sum(sv > rel_tol * sv[0]))


def condition_number(m) -> float:
    """sigma_max / sigma_min, or ``inf`` when the matrix is singular to
    working precision (sigma_min <= size * eps * sigma_max)."""
    m = _check_matrix(m)
    if m.shape[0] != m.shape[1]:
        raise InvalidInputError(f"condition_number needs a square matrix, got {m.shape}")
    sv = np.linalg.svd(m, compute_uv=False)
    if sv[0] == 0.0 or sv[-1] <= max(m.shape) * np.finfo(float).eps * sv[0]:
        return float("inf")
    return float(sv[0] / sv[-1])


def whiten(data, min_eig: float = 1e-12):
    """PCA whitening.

    Returns ``(whitened, transform, mean)`` with
    ``whitened = (data - mean) @ transform.T`` and identity empirical
    covariance (normalised by T).  ``transform = diag(d**-1/2) @ E.T`` with
    eigenvalues in descending order and each eigenvector's largest-magnitude
    entry made positive, so the result is a fixed function of the data.
    """
    data = _check_matrix(data)
    T, n = data.shape
    if T <= n:
        raise InvalidInputError(f"whitening needs more rows than columns, got {data.shape}")
    mean = data.mean(axis=0)
    centered = data - mean
    cov = centered.T @ centered / T
    d, E = np.linalg.eigh(cov)
    d, E = d[::-1], E[:, ::-1]
    if d[-1] <= min_eig * max(d[0], 1e-300) or d[-1] <= 0.0:
        raise DegenerateDataError(
            f"sample covariance is singular (smallest eigenvalue {d[-1]:.3g})")
    pivot = np.argmax(np.abs(E), axis=0)
    E = E * np.sign(E[pivot, np.arange(n)])
    transform = (E / np.sqrt(d)).T
    whitened = centered @ transform.T
    return whitened, transform, mean


def empirical_cov(data) -> np.ndarray:
    data = np.asarray(data, dtype=float)
    c = data - data.mean(axis=0)
    return c.T @ c / data.shape[0]


def finite_diff_grad(f: Callable[[np.ndarray], float], x, eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar field."""
    if eps <= 0:
        raise InvalidInputError("eps must be positive")
    x = np.array(x, dtype=float, copy=True)
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    g = np.empty_like(x)
    for i in range(x.size):
        orig = x.flat[i]
        x.flat[i] = orig + eps
        fp = float(f(x[0] if scalar else x))
        x.flat[i] = orig - eps
        fm = float(f(x[0] if scalar else x))
        x.flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise FloatingPointError(f"non-finite function value near coordinate {i}")
        g.flat[i] = (fp - fm) / (2 * eps)
    return g[0] if scalar else g
