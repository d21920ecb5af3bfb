"""Two-class data for contrastive nonlinear ICA.

Class 1 holds the observed pairs (x(t), u(t)); class 0 holds the same x rows
paired with u(pi(t)) for a uniform random permutation pi.  Both classes
therefore share the x marginal and the u marginal exactly, and a classifier
can only succeed by exploiting the dependence between x and u.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InvalidInputError, StrategyMismatchError
from .numerics import as_rng
from .synthdata import SourceDataset

KINDS = ("time-index", "segment-label", "history", "combined", "class-label", "spatial-grid")


@dataclass(frozen=True)
class AuxStrategy:
    kind: str
    one_hot: bool = True
    lag: int = 1
    k: int = 2
    separate_permutation: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidInputError(f"unknown auxiliary strategy {self.kind!r}; expected one of {KINDS}")
        if self.kind in ("history", "combined") and self.lag < 1:
            raise InvalidInputError(f"lag must be >= 1, got {self.lag}")
        if self.kind == "class-label" and self.k < 2:
            raise InvalidInputError(f"class-label strategy needs k >= 2, got {self.k}")

    def to_dict(self):
        return {"kind": self.kind, "one_hot": self.one_hot, "lag": self.lag, "k": self.k,
                "separate_permutation": self.separate_permutation}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class ContrastiveSet:
    """Rows ``[:T']`` are true pairs (label 1), rows ``[T':]`` permuted pairs.

    ``perm`` has shape (T',) or, for the separately-randomised combined
    strategy, (2, T') with one row per auxiliary block.
    """
    x: np.ndarray
    u: np.ndarray
    labels: np.ndarray
    perm: np.ndarray
    u_pos: np.ndarray
    time_index: np.ndarray
    strategy: AuxStrategy
    n_classes: int | None = None
    split: int | None = None  # column where the second permuted block starts
    meta: dict = field(default_factory=dict)

    @property
    def n_pairs(self):
        return self.u_pos.shape[0]

    def __len__(self):
        return self.x.shape[0]


def _onehot(idx, K):
    out = np.zeros((idx.size, K))
    out[np.arange(idx.size), idx] = 1.0
    return out


def aux_values(ds: SourceDataset, strategy: AuxStrategy):
    """Auxiliary matrix for the rows that have one, and those row indices.

    Returns ``(u, rows, n_classes, split)``; ``split`` marks the boundary
    between the history and time blocks of the combined strategy.
    """
    if ds.X is None:
        raise StrategyMismatchError("dataset has no observations X; mix it first")
    T = ds.T
    kind = strategy.kind
    rows = np.arange(T)
    n_classes = None
    split = None
    if kind == "time-index":
        u = (np.arange(1, T + 1) / T)[:, None]
    elif kind == "spatial-grid":
        if ds.generator != "grid":
            raise StrategyMismatchError("spatial-grid strategy needs a grid dataset")
        u = ds.U.copy()
    elif kind in ("segment-label", "class-label"):
        if kind == "segment-label" and ds.generator != "segmented":
            raise StrategyMismatchError("segment-label strategy needs a segmented dataset")
        if "labels" in ds.extras:
            idx = np.asarray(ds.extras["labels"], dtype=int)
            K = int(idx.max()) + 1
        elif ds.generator == "segmented":
            idx = ds.U[:, 0].astype(int)
            K = ds.spec["n_segments"]
        else:
            raise StrategyMismatchError("class-label strategy needs labels or a segmented dataset")
        if kind == "class-label" and K != strategy.k:
            raise StrategyMismatchError(f"strategy declares k={strategy.k} classes, dataset has {K}")
        n_classes = K
        u = _onehot(idx, K) if strategy.one_hot else idx[:, None].astype(float)
    elif kind in ("history", "combined"):
        lag = strategy.lag
        if T <= lag:
            raise StrategyMismatchError(f"need more than lag={lag} rows, got {T}")
        rows = np.arange(lag, T)
        hist = np.hstack([ds.X[rows - j] for j in range(1, lag + 1)])
        if kind == "combined":
            split = hist.shape[1]
            u = np.hstack([hist, ((rows + 1) / T)[:, None]])
        else:
            u = hist
        return u, rows, n_classes, split
    else:  # pragma: no cover - guarded by AuxStrategy
        raise InvalidInputError(kind)
    return u, rows, n_classes, split


def _draw_perm(Tp, strategy, split, rng):
    if strategy.kind == "combined" and strategy.separate_permutation:
        return np.vstack([rng.permutation(Tp), rng.permutation(Tp)])
    return rng.permutation(Tp)


def _permuted(u_pos, perm, split):
    if perm.ndim == 1:
        return u_pos[perm]
    return np.hstack([u_pos[perm[0], :split], u_pos[perm[1], split:]])


def build_pairs(ds: SourceDataset, strategy: AuxStrategy, rng) -> ContrastiveSet:
    rng = as_rng(rng)
    u_pos, rows, n_classes, split = aux_values(ds, strategy)
    Tp = rows.size
    if Tp == 1:
        warnings.warn("a single pair: negatives equal positives", RuntimeWarning, stacklevel=2)
    perm = _draw_perm(Tp, strategy, split, rng)
    x_pos = ds.X[rows]
    return ContrastiveSet(
        x=np.vstack([x_pos, x_pos]),
        u=np.vstack([u_pos, _permuted(u_pos, perm, split)]),
        labels=np.concatenate([np.ones(Tp), np.zeros(Tp)]),
        perm=perm, u_pos=u_pos, time_index=rows, strategy=strategy,
        n_classes=n_classes, split=split,
    )


def resample_negatives(cs: ContrastiveSet, rng) -> ContrastiveSet:
    """Fresh permutation for the negative class; positives untouched."""
    rng = as_rng(rng)
    Tp = cs.n_pairs
    if Tp == 1:
        warnings.warn("a single pair: negatives equal positives", RuntimeWarning, stacklevel=2)
    perm = _draw_perm(Tp, cs.strategy, cs.split, rng)
    u = cs.u.copy()
    u[Tp:] = _permuted(cs.u_pos, perm, cs.split)
    return replace(cs, u=u, perm=perm)


def minibatches(cs: ContrastiveSet, batch: int, rng) -> list:
    """Stratified shuffle: positives and negatives are shuffled separately
    and interleaved, then cut into consecutive slices of ``batch`` rows."""
    N = len(cs)
    if not 1 <= batch <= N:
        raise InvalidInputError(f"batch must lie in [1, {N}], got {batch}")
    rng = as_rng(rng)
    Tp = cs.n_pairs
    pos = rng.permutation(Tp)
    neg = Tp + rng.permutation(Tp)
    order = np.empty(N, dtype=int)
    order[0::2] = pos
    order[1::2] = neg
    return [order[i:i + batch] for i in range(0, N, batch)]
