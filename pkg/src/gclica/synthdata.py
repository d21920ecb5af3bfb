"""Synthetic nonlinear ICA data: independent sources whose distributions
depend on an observed auxiliary variable, pushed through a random
invertible leaky-ReLU network.

Three source generators are provided:

* ``gen_grid_scale_mixture``: Laplace sources on a 2-D grid, scale-modulated
  by Gaussian blobs; the auxiliary variable is the grid coordinate.
* ``gen_segmented_sources``: Laplace time series whose scale is constant
  inside equal-length segments; the auxiliary variable is the segment.
* ``gen_ar_sources``: first-order autoregressive sources with Laplace
  innovations; ``rho=0`` gives i.i.d. sources.

Every dataset carries a JSON-able ``spec`` from which ``regenerate`` rebuilds
S, X and U bit-exactly.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, GenerationFailureError, InvalidInputError
from .numerics import SeededRng, as_rng, condition_number

LAPLACE_UNIT_SCALE = 1.0 / np.sqrt(2.0)
DATA_MAGIC = b"GCLDATA1"


@dataclass
class MixingNet:
    weights: list
    slope: float = 0.2
    condition_bound: float = 10.0

    @property
    def n(self):
        return self.weights[0].shape[1]

    @property
    def n_layers(self):
        return len(self.weights)

    def condition_numbers(self):
        return [condition_number(W) for W in self.weights]

    def __call__(self, S):
        return apply_mixing(self, S)


def leaky_relu(z, slope):
    return np.where(z > 0, z, slope * z)


def apply_mixing(net: MixingNet, S) -> np.ndarray:
    """Row-wise x = f(s): leaky-ReLU after every layer except the last."""
    y = np.asarray(S, dtype=float)
    if y.ndim != 2 or y.shape[1] != net.n:
        raise InvalidInputError(f"mixing expects {net.n} columns, got shape {y.shape}")
    last = len(net.weights) - 1
    for l, W in enumerate(net.weights):
        y = y @ W.T
        if l < last:
            y = leaky_relu(y, net.slope)
    return y


def _random_orthogonal(n, rng: SeededRng):
    q, r = np.linalg.qr(rng.normal(size=(n, n)))
    return q * np.sign(np.diag(r))


def gen_mixing_net(n: int, condition_bound: float = 10.0, rng=0, n_layers: int = 3,
                   slope: float = 0.2, max_retries: int = 1000) -> MixingNet:
    """Random square leaky-ReLU network with well-conditioned layers.

    Each layer is a Gaussian matrix with unit-norm columns, redrawn until its
    condition number is at most ``condition_bound``.  A bound of 1 admits only
    orthogonal matrices, which are then drawn directly (Haar via QR).
    """
    if n < 1:
        raise InvalidInputError(f"n must be >= 1, got {n}")
    if condition_bound < 1:
        raise InvalidInputError(f"condition_bound must be >= 1, got {condition_bound}")
    if n_layers < 1:
        raise InvalidInputError(f"n_layers must be >= 1, got {n_layers}")
    rng = as_rng(rng)
    weights = []
    for _ in range(n_layers):
        if condition_bound <= 1.0 + 1e-12:
            weights.append(_random_orthogonal(n, rng))
            continue
        for _attempt in range(max_retries):
            W = rng.normal(size=(n, n))
            W /= np.linalg.norm(W, axis=0, keepdims=True)
            if condition_number(W) <= condition_bound:
                weights.append(W)
                break
        else:
            raise GenerationFailureError(
                f"no {n}x{n} layer with condition number <= {condition_bound} "
                f"in {max_retries} draws")
    return MixingNet(weights=weights, slope=slope, condition_bound=float(condition_bound))


@dataclass
class VarianceField:
    """Per-source scale modulator sigma_i(u) >= floor > 0.

    ``kind='blobs'``: floor + sum_b amp * exp(-|u - c|^2 / (2 w^2)) with
    centers of shape (n, B, 2).  ``kind='segments'``: a (K, n) table of
    per-segment values.
    """
    kind: str
    floor: float = 0.0
    centers: np.ndarray | None = None
    widths: np.ndarray | None = None
    amplitudes: np.ndarray | None = None
    values: np.ndarray | None = None

    def __call__(self, u):
        u = np.asarray(u)
        if self.kind == "segments":
            return self.values[np.asarray(u, dtype=int).ravel()]
        d2 = ((u[:, None, None, :] - self.centers[None]) ** 2).sum(-1)
        bumps = self.amplitudes[None] * np.exp(-d2 / (2 * self.widths[None] ** 2))
        return self.floor + bumps.sum(-1)


@dataclass
class SourceDataset:
    S: np.ndarray
    U: np.ndarray
    spec: dict
    X: np.ndarray | None = None
    mixing: MixingNet | None = None
    variance: VarianceField | None = None
    extras: dict = field(default_factory=dict)

    @property
    def n(self):
        return self.S.shape[1]

    @property
    def m(self):
        return self.U.shape[1]

    @property
    def T(self):
        return self.S.shape[0]

    @property
    def generator(self):
        return self.spec["generator"]

    def segment_onehot(self):
        if self.generator != "segmented":
            raise InvalidInputError("one-hot segments exist only for segmented datasets")
        K = self.spec["n_segments"]
        idx = self.U[:, 0].astype(int)
        out = np.zeros((self.T, K))
        out[np.arange(self.T), idx] = 1.0
        return out

    def with_mixing(self, net: MixingNet, mixing_spec: dict | None = None) -> "SourceDataset":
        spec = dict(self.spec)
        if mixing_spec is not None:
            spec["mixing"] = mixing_spec
        return SourceDataset(S=self.S, U=self.U, spec=spec, X=apply_mixing(net, self.S),
                             mixing=net, variance=self.variance, extras=self.extras)


def _rng_record(rng: SeededRng):
    return {"seed": rng.seed, "stream": list(rng.stream)}


def gen_grid_scale_mixture(n: int = 5, grid_side: int = 256, blobs_per_source: int = 4,
                           rng=0, floor: float = 0.3, amplitude_range=(0.5, 2.0),
                           width_range=(0.05, 0.2)) -> SourceDataset:
    """s_i(xi, eta) = sigma_i(xi, eta) * z_i with z_i standardised Laplace.

    U holds the grid coordinates in [0, 1]^2 (row-major over the grid).
    Blob centres are uniform on the bounded square.
    """
    if n < 2:
        raise InvalidInputError(f"n must be >= 2, got {n}")
    if grid_side < 2:
        raise InvalidInputError(f"grid_side must be >= 2, got {grid_side}")
    if blobs_per_source < 1:
        raise InvalidInputError(f"blobs_per_source must be >= 1, got {blobs_per_source}")
    rng = as_rng(rng)
    record = _rng_record(rng)
    centers = rng.uniform(0.0, 1.0, size=(n, blobs_per_source, 2))
    widths = rng.uniform(width_range[0], width_range[1], size=(n, blobs_per_source))
    amps = rng.uniform(amplitude_range[0], amplitude_range[1], size=(n, blobs_per_source))
    field_ = VarianceField("blobs", floor=floor, centers=centers, widths=widths, amplitudes=amps)

    ax = np.arange(grid_side) / (grid_side - 1)
    xi, eta = np.meshgrid(ax, ax, indexing="ij")
    U = np.column_stack([xi.ravel(), eta.ravel()])
    sigma = field_(U)
    Z = rng.laplace(0.0, LAPLACE_UNIT_SCALE, size=sigma.shape)
    spec = {
        "generator": "grid", "n": n, "grid_side": grid_side,
        "blobs_per_source": blobs_per_source, "floor": floor,
        "amplitude_range": list(amplitude_range), "width_range": list(width_range),
        "rng": record,
        "blobs": {"centers": centers.tolist(), "widths": widths.tolist(),
                  "amplitudes": amps.tolist()},
    }
    return SourceDataset(S=sigma * Z, U=U, spec=spec, variance=field_)


def segment_index(T: int, n_segments: int) -> np.ndarray:
    """Segment label of every time point; the last segment absorbs T % K."""
    L = T // n_segments
    return np.minimum(np.arange(T) // L, n_segments - 1)


def gen_segmented_sources(n: int = 5, T: int = 2**16, n_segments: int = 64, rng=0,
                          sigma_range=(0.2, 3.0), log_sigma_scale: float = 1.0) -> SourceDataset:
    """Laplace sources with a per-segment standard deviation.

    The scales come from a random one-hidden-layer tanh network applied to a
    Gaussian embedding of each segment: log sigma_i(k) = W2 tanh(W1 e_k + b1),
    clipped to ``sigma_range``.  ``n_segments=1`` gives a single segment with
    unit scale (stationary sources).
    """
    if n < 1:
        raise InvalidInputError(f"n must be >= 1, got {n}")
    if n_segments < 1 or n_segments > T:
        raise InvalidInputError(f"n_segments must lie in [1, T={T}], got {n_segments}")
    rng = as_rng(rng)
    record = _rng_record(rng)
    hidden = 2 * n
    emb = rng.normal(size=(n_segments, n))
    W1 = rng.normal(size=(hidden, n))
    b1 = rng.normal(size=hidden)
    W2 = rng.normal(size=(n, hidden)) * (log_sigma_scale / np.sqrt(hidden))
    log_sigma = np.tanh(emb @ W1.T + b1) @ W2.T
    if n_segments == 1:
        log_sigma = np.zeros_like(log_sigma)
    sig = np.clip(np.exp(log_sigma), sigma_range[0], sigma_range[1])
    field_ = VarianceField("segments", values=sig, floor=float(sigma_range[0]))

    labels = segment_index(T, n_segments)
    Z = rng.laplace(0.0, LAPLACE_UNIT_SCALE, size=(T, n))
    S = sig[labels] * Z
    spec = {
        "generator": "segmented", "n": n, "T": T, "n_segments": n_segments,
        "sigma_range": list(sigma_range), "log_sigma_scale": log_sigma_scale,
        "rng": record,
    }
    return SourceDataset(S=S, U=labels[:, None].astype(float), spec=spec, variance=field_)


def _ar_map(name):
    if name == "identity":
        return lambda v: v
    if name == "tanh":
        return np.tanh
    raise InvalidInputError(f"unknown AR nonlinearity {name!r}")


def gen_ar_sources(n: int = 5, T: int = 2**16, rng=0, nonlinearity: str = "identity",
                   rho=None) -> SourceDataset:
    """s_i(t) = rho_i * g(s_i(t-1)) + e_i(t), e standardised Laplace, s(0) = e(0).

    ``g`` is ``identity`` or ``tanh``.  ``rho`` defaults to uniform draws in
    [0.5, 0.9]; pass 0 for i.i.d. sources.  U is the time index t/T; the
    history pairing is formed later from the mixed observations.
    """
    if T < 2:
        raise InvalidInputError(f"T must be >= 2, got {T}")
    rng = as_rng(rng)
    record = _rng_record(rng)
    # drawn even when rho is given, so replay with the recorded rho keeps the stream
    drawn = rng.uniform(0.5, 0.9, size=n)
    rho = drawn if rho is None else rho
    rho = np.broadcast_to(np.asarray(rho, dtype=float), (n,)).copy()
    g = _ar_map(nonlinearity)
    E = rng.laplace(0.0, LAPLACE_UNIT_SCALE, size=(T, n))
    S = np.empty_like(E)
    S[0] = E[0]
    if np.any(rho != 0):
        for t in range(1, T):
            S[t] = rho * g(S[t - 1]) + E[t]
    else:
        S[1:] = E[1:]
    U = (np.arange(1, T + 1) / T)[:, None]
    spec = {"generator": "ar", "n": n, "T": T, "nonlinearity": nonlinearity,
            "rho": rho.tolist(), "rng": record}
    return SourceDataset(S=S, U=U, spec=spec)


# -- replay -------------------------------------------------------------------

def _rng_from_record(rec):
    return SeededRng(rec["seed"], rec["stream"])


def regenerate(spec: dict) -> SourceDataset:
    """Rebuild a dataset (sources and, when recorded, mixing) from its spec."""
    gen = spec.get("generator")
    rng = _rng_from_record(spec["rng"])
    if gen == "grid":
        ds = gen_grid_scale_mixture(spec["n"], spec["grid_side"], spec["blobs_per_source"], rng,
                                    floor=spec["floor"],
                                    amplitude_range=tuple(spec["amplitude_range"]),
                                    width_range=tuple(spec["width_range"]))
    elif gen == "segmented":
        ds = gen_segmented_sources(spec["n"], spec["T"], spec["n_segments"], rng,
                                   sigma_range=tuple(spec["sigma_range"]),
                                   log_sigma_scale=spec["log_sigma_scale"])
    elif gen == "ar":
        ds = gen_ar_sources(spec["n"], spec["T"], rng, spec["nonlinearity"], rho=spec["rho"])
    else:
        raise InvalidInputError(f"unknown generator {gen!r}")
    mix = spec.get("mixing")
    if mix is not None:
        net = gen_mixing_net(ds.n, mix["condition_bound"], _rng_from_record(mix["rng"]),
                             n_layers=mix["n_layers"], slope=mix["slope"])
        ds = ds.with_mixing(net, mix)
    return ds


def mix_dataset(ds: SourceDataset, rng, n_layers: int = 3, condition_bound: float = 10.0,
                slope: float = 0.2) -> SourceDataset:
    rng = as_rng(rng)
    mix_spec = {"n_layers": n_layers, "condition_bound": condition_bound, "slope": slope,
                "rng": _rng_record(rng)}
    net = gen_mixing_net(ds.n, condition_bound, rng, n_layers=n_layers, slope=slope)
    return ds.with_mixing(net, mix_spec)


# -- persistence --------------------------------------------------------------

def write_container(path, arrays: dict, magic: bytes = DATA_MAGIC):
    """magic | uint32 count | count x (uint64 rows, uint64 cols) | float64 data.

    Arrays are written column-major, little-endian.
    """
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(struct.pack("<I", len(arrays)))
        for a in arrays.values():
            a = np.atleast_2d(np.asarray(a, dtype=float))
            fh.write(struct.pack("<QQ", *a.shape))
        for a in arrays.values():
            a = np.atleast_2d(np.asarray(a, dtype="<f8"))
            fh.write(np.asfortranarray(a).tobytes(order="F"))


def read_container(path, names, magic: bytes = DATA_MAGIC):
    raw = Path(path).read_bytes()
    if raw[:len(magic)] != magic:
        raise FormatError(f"{path}: missing {magic.decode()} header")
    pos = len(magic)
    (count,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    if count != len(names):
        raise FormatError(f"{path}: expected {len(names)} arrays, found {count}")
    shapes = []
    for _ in range(count):
        shapes.append(struct.unpack_from("<QQ", raw, pos))
        pos += 16
    out = {}
    for name, (r, c) in zip(names, shapes):
        nbytes = 8 * r * c
        buf = np.frombuffer(raw, dtype="<f8", count=r * c, offset=pos)
        out[name] = buf.reshape((r, c), order="F").astype(float)
        pos += nbytes
    if pos != len(raw):
        raise FormatError(f"{path}: {len(raw) - pos} trailing bytes")
    return out


def save_dataset(ds: SourceDataset, path, extra_meta: dict | None = None):
    """Write ``path`` (binary arrays) and ``path + '.json'`` (spec sidecar)."""
    path = Path(path)
    arrays = {"S": ds.S, "X": ds.X if ds.X is not None else np.zeros((ds.T, 0)), "U": ds.U}
    if ds.mixing is not None:
        for l, W in enumerate(ds.mixing.weights):
            arrays[f"W{l}"] = W
    write_container(path, arrays)
    meta = dict(extra_meta or {})
    meta.update({
        "format": DATA_MAGIC.decode(),
        "array_order": list(arrays),
        "arrays": {k: list(np.atleast_2d(v).shape) for k, v in arrays.items()},
        "spec": ds.spec,
    })
    Path(str(path) + ".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return path


def load_dataset(path) -> SourceDataset:
    path = Path(path)
    try:
        meta = json.loads(Path(str(path) + ".json").read_text())
        names = list(meta["array_order"])
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise FormatError(f"{path}: unreadable sidecar: {exc}") from None
    arrays = read_container(path, names)
    spec = meta["spec"]
    X = arrays["X"] if arrays["X"].shape[1] else None
    mixing = None
    wnames = [k for k in names if k.startswith("W")]
    if wnames:
        mix = spec.get("mixing", {})
        mixing = MixingNet([arrays[k] for k in wnames], slope=mix.get("slope", 0.2),
                           condition_bound=mix.get("condition_bound", 10.0))
    return SourceDataset(S=arrays["S"], U=arrays["U"], spec=spec, X=X, mixing=mixing)
