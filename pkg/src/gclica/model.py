"""Feature network and regression heads with hand-written gradients.

The regression function is r(x, u) and the posterior of the "true pair"
class is sigmoid(r).  Two head forms are available:

* ``GeneralHead``: r = sum_i psi_i(h_i(x), u), one small softplus MLP per
  component, with no weights shared across components.
* ``ExpFamHead``: r = h~(x) . v(u) + a(h(x)) + b(u), where v and b are
  per-segment tables and a is a one-hidden-layer MLP.

Parameters live in plain ``dict``s of numpy arrays; gradients use the same
keys.  Subgradient conventions: maxout picks the lowest index among ties and
d|z|/dz at 0 is +1.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError, InvalidInputError
from .numerics import as_rng

MODEL_MAGIC = b"GCLMODEL1"


def softplus(z):
    return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=float)))


def softplus_and_slope(z):
    """softplus(z) and its derivative sigmoid(z) from one exponential."""
    e = np.exp(-np.abs(z))
    sp = np.maximum(z, 0.0) + np.log1p(e)
    inv = 1.0 / (1.0 + e)
    sig = np.where(z >= 0, inv, e * inv)
    return sp, sig


def _sign(z):
    return np.where(z >= 0, 1.0, -1.0)


class FeatureNet:
    """x -> |W_L maxout(... maxout(W_1 x + b_1) ...) + b_L|.

    ``hidden`` is the number of maxout units per hidden layer (default 2n);
    each unit takes the max over a group of two pre-activations.  ``depth``
    counts the maxout layers (default 2, i.e. three weight layers); depth 0
    gives h = |W x + b|.
    """

    def __init__(self, n, hidden=None, rng=0, init_scale=1.0, depth=2):
        self.n = int(n)
        self.hidden = int(hidden or 2 * n)
        self.depth = int(depth)
        rng = as_rng(rng)
        H = self.hidden
        self.params = {}
        fan_in = self.n
        for l in range(1, self.depth + 1):
            self.params[f"f_W{l}"] = rng.normal(size=(2 * H, fan_in)) * init_scale / np.sqrt(fan_in)
            self.params[f"f_b{l}"] = np.zeros(2 * H)
            fan_in = H
        L = self.depth + 1
        self.params[f"f_W{L}"] = rng.normal(size=(self.n, fan_in)) * init_scale / np.sqrt(fan_in)
        self.params[f"f_b{L}"] = np.zeros(self.n)
        self.weight_keys = tuple(f"f_W{l}" for l in range(1, L + 1))

    def config(self):
        return {"n": self.n, "hidden": self.hidden, "depth": self.depth}

    @staticmethod
    def _maxout(z):
        g = z.reshape(z.shape[0], -1, 2)
        idx = np.argmax(g, axis=2)
        return np.take_along_axis(g, idx[..., None], axis=2)[..., 0], idx

    def forward(self, x, cache=False):
        p = self.params
        a = np.asarray(x, dtype=float)
        acts, idxs = [a], []
        for l in range(1, self.depth + 1):
            a, idx = self._maxout(a @ p[f"f_W{l}"].T + p[f"f_b{l}"])
            acts.append(a)
            idxs.append(idx)
        L = self.depth + 1
        z = a @ p[f"f_W{L}"].T + p[f"f_b{L}"]
        h = np.abs(z)
        if cache:
            return h, (acts, idxs, z)
        return h

    def pattern(self, x):
        """Active maxout branches and output signs; constant between ties."""
        _, (_, idxs, z) = self.forward(x, cache=True)
        return (*idxs, z >= 0)

    @staticmethod
    def _maxout_back(da, idx):
        B, H = da.shape
        dz = np.zeros((B, H, 2))
        np.put_along_axis(dz, idx[..., None], da[..., None], axis=2)
        return dz.reshape(B, 2 * H)

    def backward(self, dh, cache, grads):
        p = self.params
        acts, idxs, z = cache
        L = self.depth + 1
        dz = dh * _sign(z)
        for l in range(L, 0, -1):
            grads[f"f_W{l}"] = dz.T @ acts[l - 1]
            grads[f"f_b{l}"] = dz.sum(0)
            da = dz @ p[f"f_W{l}"]
            if l > 1:
                dz = self._maxout_back(da, idxs[l - 2])
        return da


class GeneralHead:
    """r = sum_i psi_i(h_i, u); psi_i: R^(1+m) -> R, two softplus layers."""

    kind = "general"
    weight_keys = ("g_W1", "g_W2", "g_w3")

    def __init__(self, n, m, width=32, rng=0):
        self.n, self.m, self.width = int(n), int(m), int(width)
        rng = as_rng(rng)
        d, W = 1 + self.m, self.width
        self.params = {
            "g_W1": rng.normal(size=(n, d, W)) / np.sqrt(d),
            "g_b1": np.zeros((n, W)),
            "g_W2": rng.normal(size=(n, W, W)) / np.sqrt(W),
            "g_b2": np.zeros((n, W)),
            "g_w3": rng.normal(size=(n, W)) / np.sqrt(W),
            "g_b3": np.zeros(n),
        }

    def config(self):
        return {"kind": self.kind, "n": self.n, "m": self.m, "width": self.width}

    def _inputs(self, h, u):
        B = h.shape[0]
        z = np.empty((self.n, B, 1 + self.m))
        z[:, :, 0] = h.T
        z[:, :, 1:] = u[None, :, :]
        return z

    def terms(self, h, u, cache=False):
        """Per-component psi_i values, shape (B, n)."""
        p = self.params
        h = np.atleast_2d(np.asarray(h, dtype=float))
        u = np.atleast_2d(np.asarray(u, dtype=float))
        if h.shape[1] != self.n or u.shape[1] != self.m:
            raise InvalidInputError(
                f"general head expects h width {self.n} and u width {self.m}, "
                f"got {h.shape[1]} and {u.shape[1]}")
        z = self._inputs(h, u)
        g1, s1 = softplus_and_slope(z @ p["g_W1"] + p["g_b1"][:, None, :])
        g2, s2 = softplus_and_slope(g1 @ p["g_W2"] + p["g_b2"][:, None, :])
        out = (g2 @ p["g_w3"][:, :, None])[:, :, 0].T + p["g_b3"]
        if cache:
            return out, (z, s1, g1, s2, g2)
        return out

    def forward(self, h, u, cache=False):
        if cache:
            out, c = self.terms(h, u, cache=True)
            return out.sum(1), c
        return self.terms(h, u).sum(1)

    def backward(self, dr, cache, grads):
        p = self.params
        z, s1, g1, s2, g2 = cache
        grads["g_w3"] = dr @ g2
        grads["g_b3"] = np.full(self.n, dr.sum())
        da2 = dr[None, :, None] * p["g_w3"][:, None, :] * s2
        grads["g_W2"] = g1.transpose(0, 2, 1) @ da2
        grads["g_b2"] = da2.sum(1)
        da1 = (da2 @ p["g_W2"].transpose(0, 2, 1)) * s1
        grads["g_W1"] = z.transpose(0, 2, 1) @ da1
        grads["g_b1"] = da1.sum(1)
        dz = da1 @ p["g_W1"].transpose(0, 2, 1)
        return dz[:, :, 0].T


class ExpFamHead:
    """r = h~(x) . v(seg) + a(h) + b(seg).

    h~ stacks the powers h_i, h_i^2, ..., h_i^k per component (h~ = h when
    k = 1).  The segment is read from u: a single column holds the integer
    index, wider u is taken as one-hot.
    """

    kind = "expfam"
    weight_keys = ("e_v", "e_aW1", "e_aw2")

    def __init__(self, n, n_segments, k=1, a_width=32, rng=0):
        self.n, self.K, self.k, self.a_width = int(n), int(n_segments), int(k), int(a_width)
        rng = as_rng(rng)
        A = self.a_width
        self.params = {
            "e_v": rng.normal(size=(self.K, self.n * self.k)) * 0.1,
            "e_b": np.zeros(self.K),
            "e_aW1": rng.normal(size=(A, n)) / np.sqrt(n),
            "e_ab1": np.zeros(A),
            "e_aw2": rng.normal(size=A) / np.sqrt(A),
            "e_ab2": np.zeros(1),
        }

    def config(self):
        return {"kind": self.kind, "n": self.n, "n_segments": self.K, "k": self.k,
                "a_width": self.a_width}

    def segments(self, u):
        u = np.atleast_2d(np.asarray(u, dtype=float))
        if u.shape[1] == 1:
            idx = np.rint(u[:, 0]).astype(int)
        else:
            if u.shape[1] != self.K:
                raise InvalidInputError(f"one-hot u must have {self.K} columns, got {u.shape[1]}")
            idx = np.argmax(u, axis=1)
        if idx.size and (idx.min() < 0 or idx.max() >= self.K):
            raise InvalidInputError(
                f"segment index outside v-table of {self.K} rows: {idx.min()}..{idx.max()}")
        return idx

    def expand(self, h):
        if self.k == 1:
            return h
        powers = np.stack([h ** (j + 1) for j in range(self.k)], axis=2)
        return powers.reshape(h.shape[0], self.n * self.k)

    def a_net(self, h, cache=False):
        p = self.params
        hid, slope = softplus_and_slope(h @ p["e_aW1"].T + p["e_ab1"])
        a = hid @ p["e_aw2"] + p["e_ab2"][0]
        if cache:
            return a, (slope, hid)
        return a

    def forward(self, h, u, cache=False):
        p = self.params
        h = np.atleast_2d(np.asarray(h, dtype=float))
        if h.shape[1] != self.n:
            raise InvalidInputError(f"expfam head expects h width {self.n}, got {h.shape[1]}")
        seg = self.segments(u)
        ht = self.expand(h)
        a, ac = self.a_net(h, cache=True)
        r = np.sum(ht * p["e_v"][seg], axis=1) + a + p["e_b"][seg]
        if cache:
            return r, (h, seg, ht, ac)
        return r

    def backward(self, dr, cache, grads):
        p = self.params
        h, seg, ht, (slope, hid) = cache
        K = self.K
        weighted = dr[:, None] * ht
        grads["e_v"] = np.stack(
            [np.bincount(seg, weights=weighted[:, c], minlength=K) for c in range(ht.shape[1])],
            axis=1)
        grads["e_b"] = np.bincount(seg, weights=dr, minlength=K).astype(float)
        dht = dr[:, None] * p["e_v"][seg]
        if self.k == 1:
            dh = dht
        else:
            dht = dht.reshape(h.shape[0], self.n, self.k)
            coef = np.stack([(j + 1) * h ** j for j in range(self.k)], axis=2)
            dh = (dht * coef).sum(2)
        grads["e_aw2"] = hid.T @ dr
        grads["e_ab2"] = np.array([dr.sum()])
        dpre = dr[:, None] * p["e_aw2"] * slope
        grads["e_aW1"] = dpre.T @ h
        grads["e_ab1"] = dpre.sum(0)
        return dh + dpre @ p["e_aW1"]


class Model:
    """Feature network plus head; owns the combined parameter dict."""

    def __init__(self, feature: FeatureNet, head, meta=None):
        self.feature = feature
        self.head = head
        self.meta = dict(meta or {})

    @property
    def params(self):
        out = dict(self.feature.params)
        out.update(self.head.params)
        return out

    @property
    def weight_keys(self):
        return self.feature.weight_keys + self.head.weight_keys

    def keys(self):
        return list(self.feature.params) + list(self.head.params)

    def _owner(self, key):
        return self.feature.params if key in self.feature.params else self.head.params

    def set_param(self, key, value):
        owner = self._owner(key)
        owner[key] = np.asarray(value, dtype=float).reshape(owner[key].shape)

    def features(self, x):
        return self.feature.forward(x)

    def forward(self, x, u):
        return self.head.forward(self.feature.forward(x), u)

    def posterior(self, x, u):
        return sigmoid(self.forward(x, u))

    def pattern(self, x):
        return self.feature.pattern(x)

    def penalty(self, l2):
        p = self.params
        return 0.5 * l2 * sum(float(np.sum(p[k] ** 2)) for k in self.weight_keys)

    def loss(self, x, u, labels, l2=0.0):
        r = self.forward(x, u)
        y = np.asarray(labels, dtype=float)
        return float(np.mean(softplus(r) - y * r)) + self.penalty(l2)

    def loss_and_grad(self, x, u, labels, l2=0.0):
        """Mean binary cross-entropy + 0.5 * l2 * sum of squared weights."""
        h, fcache = self.feature.forward(x, cache=True)
        r, hcache = self.head.forward(h, u, cache=True)
        y = np.asarray(labels, dtype=float)
        B = y.size
        loss = float(np.mean(softplus(r) - y * r)) + self.penalty(l2)
        dr = (sigmoid(r) - y) / B
        grads = {}
        dh = self.head.backward(dr, hcache, grads)
        self.feature.backward(dh, fcache, grads)
        if l2:
            p = self.params
            for k in self.weight_keys:
                grads[k] = grads[k] + l2 * p[k]
        return loss, grads, r

    # flat views for gradient checking and checkpoints
    def get_flat(self):
        p = self.params
        return np.concatenate([p[k].ravel() for k in self.keys()])

    def set_flat(self, flat):
        flat = np.asarray(flat, dtype=float)
        pos = 0
        for k in self.keys():
            owner = self._owner(k)
            size = owner[k].size
            owner[k] = flat[pos:pos + size].reshape(owner[k].shape).copy()
            pos += size
        if pos != flat.size:
            raise InvalidInputError(f"flat vector has {flat.size} entries, model has {pos}")

    def flat_grad(self, grads):
        return np.concatenate([grads[k].ravel() for k in self.keys()])

    def param_index(self):
        """(key, flat offset, size) for every parameter block."""
        out, pos = [], 0
        for k in self.keys():
            size = self._owner(k)[k].size
            out.append((k, pos, size))
            pos += size
        return out

    def param_norm(self):
        return float(np.sqrt(np.sum(self.get_flat() ** 2)))

    def copy(self):
        m = build_model(self.config(), rng=0)
        m.set_flat(self.get_flat())
        m.meta = dict(self.meta)
        return m

    def config(self):
        return {"feature": self.feature.config(), "head": self.head.config()}


def build_model(cfg, rng=0, init_scale=1.0) -> Model:
    """``cfg = {"feature": {...}, "head": {"kind": ..., ...}}``."""
    rng = as_rng(rng)
    f, h = cfg["feature"], dict(cfg["head"])
    feature = FeatureNet(f["n"], f.get("hidden"), rng.child(0), init_scale=init_scale,
                         depth=f.get("depth", 2))
    kind = h.pop("kind")
    if kind == "general":
        head = GeneralHead(h["n"], h["m"], h.get("width", 32), rng.child(1))
    elif kind == "expfam":
        head = ExpFamHead(h["n"], h["n_segments"], h.get("k", 1), h.get("a_width", 32), rng.child(1))
    else:
        raise InvalidInputError(f"unknown head kind {kind!r}")
    return Model(feature, head)


def save_model(model: Model, path, header=None):
    """magic | uint32 header length | JSON header | float64 parameters."""
    meta = {"format": MODEL_MAGIC.decode(), "architecture": model.config(),
            "blocks": [[k, list(model._owner(k)[k].shape)] for k in model.keys()]}
    meta.update(model.meta)
    meta.update(header or {})
    blob = json.dumps(meta, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(model.get_flat().astype("<f8").tobytes())
    return Path(path)


def load_model(path) -> Model:
    raw = Path(path).read_bytes()
    if raw[:len(MODEL_MAGIC)] != MODEL_MAGIC:
        raise FormatError(f"{path}: missing {MODEL_MAGIC.decode()} header")
    pos = len(MODEL_MAGIC)
    (hlen,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    meta = json.loads(raw[pos:pos + hlen])
    pos += hlen
    flat = np.frombuffer(raw, dtype="<f8", offset=pos).astype(float)
    model = build_model(meta["architecture"], rng=0)
    model.set_flat(flat)
    model.meta = {k: v for k, v in meta.items() if k not in ("format", "architecture", "blocks")}
    return model
