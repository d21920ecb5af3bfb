"""Symmetric fixed-point FastICA, used to remove the linear indeterminacy
left in learned features."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateDataError, InvalidInputError
from .numerics import as_rng, whiten


@dataclass
class FastIcaConfig:
    nonlinearity: str = "tanh"
    max_iters: int = 500
    tol: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if self.nonlinearity not in ("tanh", "cube"):
            raise InvalidInputError(f"contrast must be 'tanh' or 'cube', got {self.nonlinearity!r}")
        if self.tol <= 0:
            raise InvalidInputError("tol must be positive")
        if self.max_iters < 1:
            raise InvalidInputError("max_iters must be >= 1")


@dataclass
class UnmixResult:
    components: np.ndarray
    rotation: np.ndarray
    whitening: np.ndarray
    mean: np.ndarray
    converged: bool
    iters: int

    @property
    def unmixing(self):
        return self.rotation @ self.whitening

    def transform(self, features):
        return (np.asarray(features, dtype=float) - self.mean) @ self.unmixing.T


def _sym_decorrelate(W):
    # W <- (W W^T)^(-1/2) W
    s, u = np.linalg.eigh(W @ W.T)
    s = np.clip(s, np.finfo(float).tiny, None)
    return (u / np.sqrt(s)) @ u.T @ W


def _contrast(name, y):
    if name == "tanh":
        g = np.tanh(y)
        return g, (1.0 - g ** 2).mean(axis=0)
    return y ** 3, (3.0 * y ** 2).mean(axis=0)


def fastica(features, cfg: FastIcaConfig | None = None) -> UnmixResult:
    """Whiten, then iterate w <- E[z g(w.z)] - E[g'(w.z)] w for all rows of
    the rotation at once, followed by symmetric decorrelation.

    Stops when max_i |1 - |<w_i, w_i_old>|| < tol.  The starting rotation is
    a random orthogonal matrix drawn from ``cfg.seed``.
    """
    cfg = cfg or FastIcaConfig()
    F = np.asarray(features, dtype=float)
    if F.ndim != 2:
        raise InvalidInputError("features must be a 2-D matrix")
    T, n = F.shape
    if T <= 10 * n:
        raise InvalidInputError(f"FastICA needs T > 10 n rows, got {T} for n={n}")
    try:
        Z, K, mean = whiten(F)
    except DegenerateDataError as exc:
        raise DegenerateDataError(f"degenerate features: {exc}") from exc

    rng = as_rng(cfg.seed)
    W = _sym_decorrelate(rng.normal(size=(n, n)))
    converged = False
    it = 0
    for it in range(1, cfg.max_iters + 1):
        Y = Z @ W.T
        g, gp = _contrast(cfg.nonlinearity, Y)
        W_new = _sym_decorrelate(g.T @ Z / T - gp[:, None] * W)
        change = np.max(np.abs(np.abs(np.sum(W_new * W, axis=1)) - 1.0))
        W = W_new
        if change < cfg.tol:
            converged = True
            break
    S = Z @ W.T
    return UnmixResult(components=S, rotation=W, whitening=K, mean=mean,
                       converged=converged, iters=it)
