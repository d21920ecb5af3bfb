"""Numerical checks of the identifiability conditions for conditionally
independent sources with log-density q_i(s_i, u).

Families come in two flavours.  ``ExpFamily`` is the closed form

    q_i(s, u) = log Q_i(s) + sum_j qt_ij(s) * lambda_ij(u) - log Z_i(u)

with statistics and modulators drawn from a small catalogue and exact
derivatives.  ``BlackBoxFamily`` wraps any evaluator of q_i and
differentiates numerically.

"Exists u_0..u_2n" is searched for by Monte Carlo: one full-rank draw is a
witness, while zero successes only means none was found in the trials run.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, InapplicableStrategyError, InvalidInputError
from .numerics import DEFAULT_RANK_TOL, as_rng, condition_number, singular_values

SENSITIVITY_TOLS = (1e-4, 1e-6, 1e-8)
STEP_FIRST = 1e-4
STEP_SECOND = 1e-3
STEP_U = 1e-4


# -- statistic catalogue ------------------------------------------------------

class Statistic:
    """coef * phi(s) with derivatives up to third order."""

    def __init__(self, tag, coef=1.0, p=None):
        if tag not in ("poly", "abs", "tanh", "log-cosh"):
            raise InvalidInputError(f"unknown statistic tag {tag!r}")
        if tag == "poly" and (p is None or int(p) != p or p < 0):
            raise InvalidInputError(f"poly statistic needs a non-negative integer p, got {p!r}")
        self.tag, self.coef, self.p = tag, float(coef), None if p is None else int(p)

    def to_dict(self):
        d = {"tag": self.tag, "coef": self.coef}
        if self.tag == "poly":
            d["p"] = self.p
        return d

    def __call__(self, s, order=0):
        s = np.asarray(s, dtype=float)
        c = self.coef
        if self.tag == "poly":
            p = self.p
            fac = 1.0
            for i in range(order):
                fac *= p - i
            if fac == 0.0:
                return np.zeros_like(s)
            return c * fac * s ** (p - order)
        if self.tag == "abs":
            if order == 0:
                return c * np.abs(s)
            if order == 1:
                return c * np.where(s >= 0, 1.0, -1.0)
            return np.zeros_like(s)
        t = np.tanh(s)
        if self.tag == "tanh":
            vals = (t, 1 - t ** 2, -2 * t * (1 - t ** 2), -2 * (1 - t ** 2) * (1 - 3 * t ** 2))
        else:  # log-cosh
            vals = (np.logaddexp(s, -s) - np.log(2.0), t, 1 - t ** 2, -2 * t * (1 - t ** 2))
        return c * vals[order]


# -- modulators ---------------------------------------------------------------

class Modulator:
    """lambda(u): per-segment table or a smooth expression of continuous u.

    kinds: ``table`` (values per segment), ``constant`` (value),
    ``linear`` (w . u + c), ``sin`` (amp * sin(freq * u[dim] + phase)),
    ``rbf`` (sum_b amp_b * exp(-|u - c_b|^2 / (2 width^2))).
    """

    def __init__(self, kind, **kw):
        self.kind = kind
        self.kw = kw
        if kind == "table":
            self.values = np.asarray(kw["values"], dtype=float)
        elif kind == "constant":
            self.value = float(kw["value"])
        elif kind == "linear":
            self.w = np.atleast_1d(np.asarray(kw["w"], dtype=float))
            self.c = float(kw.get("c", 0.0))
        elif kind == "sin":
            self.amp = float(kw.get("amp", 1.0))
            self.freq = float(kw["freq"])
            self.phase = float(kw.get("phase", 0.0))
            self.dim = int(kw.get("dim", 0))
        elif kind == "rbf":
            self.centers = np.atleast_2d(np.asarray(kw["centers"], dtype=float))
            self.amps = np.atleast_1d(np.asarray(kw["amps"], dtype=float))
            self.width = float(kw["width"])
        else:
            raise InvalidInputError(f"unknown modulator kind {kind!r}")

    @property
    def discrete(self):
        return self.kind == "table"

    def to_dict(self):
        d = {"kind": self.kind}
        for k, v in self.kw.items():
            d[k] = v.tolist() if isinstance(v, np.ndarray) else v
        return d

    def __call__(self, u):
        u = np.atleast_1d(np.asarray(u, dtype=float))
        if self.kind == "table":
            idx = int(round(u[0]))
            if not 0 <= idx < self.values.size:
                raise InvalidInputError(f"segment {idx} outside table of {self.values.size}")
            return float(self.values[idx])
        if self.kind == "constant":
            return self.value
        if self.kind == "linear":
            return float(self.w @ u[:self.w.size] + self.c)
        if self.kind == "sin":
            return float(self.amp * np.sin(self.freq * u[self.dim] + self.phase))
        d2 = np.sum((u[None, :self.centers.shape[1]] - self.centers) ** 2, axis=1)
        return float(np.sum(self.amps * np.exp(-d2 / (2 * self.width ** 2))))

    def grad(self, u, j):
        """d lambda / d u_j."""
        u = np.atleast_1d(np.asarray(u, dtype=float))
        if self.kind == "table":
            raise InapplicableStrategyError("per-segment modulators have no u-derivative")
        if self.kind == "constant":
            return 0.0
        if self.kind == "linear":
            return float(self.w[j]) if j < self.w.size else 0.0
        if self.kind == "sin":
            if j != self.dim:
                return 0.0
            return float(self.amp * self.freq * np.cos(self.freq * u[self.dim] + self.phase))
        if j >= self.centers.shape[1]:
            return 0.0
        diff = u[None, :self.centers.shape[1]] - self.centers
        e = self.amps * np.exp(-np.sum(diff ** 2, axis=1) / (2 * self.width ** 2))
        return float(np.sum(-e * diff[:, j]) / self.width ** 2)


# -- families -----------------------------------------------------------------

@dataclass
class UDomain:
    """``segments``: u is an integer label in [0, K); ``box``: u in [0, 1]^dim."""
    kind: str
    K: int | None = None
    dim: int = 1

    def sample(self, count, rng, distinct=True):
        if self.kind == "segments":
            if distinct and count <= self.K:
                idx = rng.permutation(self.K)[:count]
            else:
                idx = rng.integers(0, self.K, size=count)
            return idx[:, None].astype(float)
        return rng.uniform(0.0, 1.0, size=(count, self.dim))

    def to_dict(self):
        return {"kind": self.kind, "K": self.K} if self.kind == "segments" else \
            {"kind": self.kind, "dim": self.dim}


class ConditionalFamily:
    """Base: subclasses provide ``dq(i, s, u, order)`` and ``dq_du(i, s, u, order, j)``."""

    n: int
    domain: UDomain

    @property
    def discrete(self):
        return self.domain.kind == "segments"

    def sample_u(self, count, rng, distinct=True):
        return self.domain.sample(count, rng, distinct)


class ExpFamily(ConditionalFamily):
    """Closed-form conditionally exponential family of order k.

    ``stats[i][j]`` and ``lams[i][j]`` are the sufficient statistics and
    modulators; ``base[i]`` lists statistics summed into log Q_i and
    ``log_partition[i]`` is an optional modulator for log Z_i(u).
    """

    def __init__(self, stats, lams, domain: UDomain, base=None, log_partition=None,
                 check_independence=True, rng=0):
        self.n = len(stats)
        if self.n < 1:
            raise InvalidInputError("a family needs at least one component")
        ks = {len(row) for row in stats}
        if len(ks) != 1:
            raise InvalidInputError("all components must have the same order k")
        self.k = ks.pop()
        if self.k < 1:
            raise InvalidInputError("order k must be >= 1")
        if [len(r) for r in lams] != [self.k] * self.n:
            raise InvalidInputError("modulator table must be n x k like the statistics")
        self.stats, self.lams, self.domain = stats, lams, domain
        self.base = base or [[] for _ in range(self.n)]
        self.log_partition = log_partition or [None] * self.n
        if check_independence:
            self._check_independence(as_rng(rng))

    def _check_independence(self, rng, points=10_000):
        s = rng.uniform(-3.0, 3.0, size=points)
        for i, row in enumerate(self.stats):
            G = np.column_stack([st(s) for st in row])
            from .numerics import numerical_rank
            if not np.any(G) or numerical_rank(G) < self.k:
                raise InvalidInputError(
                    f"statistics of component {i} are not linearly independent "
                    f"(sampled rank below k={self.k})")

    def lambdas(self, u):
        return np.array([[lam(u) for lam in row] for row in self.lams])

    def q(self, i, s, u):
        val = sum(st(s) for st in self.base[i]) + sum(
            st(s) * lam(u) for st, lam in zip(self.stats[i], self.lams[i]))
        if self.log_partition[i] is not None:
            val = val - self.log_partition[i](u)
        return val

    def dq(self, i, s, u, order):
        val = sum(st(s, order) for st in self.base[i]) + sum(
            st(s, order) * lam(u) for st, lam in zip(self.stats[i], self.lams[i]))
        return float(val)

    def dq_du(self, i, s, u, order, j):
        return float(sum(st(s, order) * lam.grad(u, j)
                         for st, lam in zip(self.stats[i], self.lams[i])))

    def to_dict(self):
        return {
            "n": self.n, "k": self.k, "u": self.domain.to_dict(),
            "components": [
                {"stats": [st.to_dict() for st in self.stats[i]],
                 "modulators": [lam.to_dict() for lam in self.lams[i]],
                 "base": [st.to_dict() for st in self.base[i]],
                 **({"log_partition": self.log_partition[i].to_dict()}
                    if self.log_partition[i] is not None else {})}
                for i in range(self.n)],
        }


class BlackBoxFamily(ConditionalFamily):
    """``fn(i, s, u) -> q_i(s, u)``; derivatives by central differences."""

    def __init__(self, fn, n, domain: UDomain, step_first=STEP_FIRST, step_second=STEP_SECOND,
                 step_u=STEP_U):
        self.fn, self.n, self.domain = fn, int(n), domain
        self.h1, self.h2, self.hu = step_first, step_second, step_u

    @classmethod
    def from_family(cls, fam: ExpFamily, **kw):
        return cls(fam.q, fam.n, fam.domain, **kw)

    def dq(self, i, s, u, order):
        f = self.fn
        if order == 0:
            return float(f(i, s, u))
        if order == 1:
            h = self.h1
            return float((f(i, s + h, u) - f(i, s - h, u)) / (2 * h))
        if order == 2:
            h = self.h2
            return float((f(i, s + h, u) - 2 * f(i, s, u) + f(i, s - h, u)) / h ** 2)
        raise InvalidInputError("black-box families differentiate up to order 2 in s")

    def dq_du(self, i, s, u, order, j):
        if self.discrete:
            raise InapplicableStrategyError("u-derivatives need continuous u")
        u = np.atleast_1d(np.asarray(u, dtype=float))
        e = np.zeros_like(u)
        e[j] = self.hu
        return (self.dq(i, s, u + e, order) - self.dq(i, s, u - e, order)) / (2 * self.hu)


def _check_finite(vec, what):
    if not np.all(np.isfinite(vec)):
        raise FloatingPointError(f"non-finite derivative in {what}")
    return vec


def w_vector(fam: ConditionalFamily, y, u) -> np.ndarray:
    """(dq_1/ds, ..., dq_n/ds, d2q_1/ds2, ..., d2q_n/ds2) at s = y."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if y.size != fam.n:
        raise InvalidInputError(f"y must have {fam.n} entries, got {y.size}")
    first = [fam.dq(i, y[i], u, 1) for i in range(fam.n)]
    second = [fam.dq(i, y[i], u, 2) for i in range(fam.n)]
    return _check_finite(np.array(first + second), "w_vector")


def w_tilde(fam: ConditionalFamily, y, u, j) -> np.ndarray:
    """Mixed derivatives d2q_i/(ds du_j) and d3q_i/(ds2 du_j)."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    first = [fam.dq_du(i, y[i], u, 1, j) for i in range(fam.n)]
    second = [fam.dq_du(i, y[i], u, 2, j) for i in range(fam.n)]
    return _check_finite(np.array(first + second), "w_tilde")


@dataclass
class VariabilityVerdict:
    rank_achieved: int
    rank_required: int
    n_trials: int
    successes: int
    witness: list | None
    rel_tol: float
    sensitivity: dict = field(default_factory=dict)
    check: str = "variability"

    @property
    def holds(self):
        return self.successes > 0

    def to_dict(self):
        d = asdict(self)
        d["holds"] = self.holds
        d["sensitivity"] = {f"{k:g}": v for k, v in self.sensitivity.items()}
        d["statement"] = ("witness found" if self.holds else
                          f"no witness found in {self.n_trials} trials")
        return d


def _verdict(mats, us, required, rel_tol, check):
    svs = []
    for M in mats:
        sv = singular_values(M) if np.any(M) else np.zeros(min(M.shape))
        svs.append(sv)

    def ranks(tol):
        return [0 if sv[0] == 0 else int(np.sum(sv > tol * sv[0])) for sv in svs]

    main = ranks(rel_tol)
    succ = [r == required for r in main]
    witness = None
    if any(succ):
        w = us[succ.index(True)]
        witness = np.asarray(w).tolist()
    sens = {tol: int(sum(r == required for r in ranks(tol))) for tol in SENSITIVITY_TOLS}
    return VariabilityVerdict(rank_achieved=int(max(main)), rank_required=required,
                              n_trials=len(mats), successes=int(sum(succ)), witness=witness,
                              rel_tol=rel_tol, sensitivity=sens, check=check)


def check_variability(fam: ConditionalFamily, y, n_trials=100, rng=0,
                      rel_tol=DEFAULT_RANK_TOL) -> VariabilityVerdict:
    """Per trial draw u_0..u_2n (distinct segments when u is discrete) and
    test the rank of the 2n x 2n matrix of rows w(y, u_j) - w(y, u_0)."""
    if n_trials < 1:
        raise InvalidInputError("n_trials must be >= 1")
    rng = as_rng(rng)
    n2 = 2 * fam.n
    mats, us = [], []
    for _ in range(n_trials):
        U = fam.sample_u(n2 + 1, rng)
        W = np.array([w_vector(fam, y, u) for u in U])
        mats.append(W[1:] - W[0])
        us.append(U)
    return _verdict(mats, us, n2, rel_tol, "variability")


def check_alt_variability(fam: ConditionalFamily, y, j=0, n_trials=100, rng=0,
                          rel_tol=DEFAULT_RANK_TOL) -> VariabilityVerdict:
    """Rank of the 2n x 2n matrix of w~(y, u_1..u_2n), w~ built from the
    mixed derivatives with respect to auxiliary coordinate j."""
    if fam.discrete:
        raise InapplicableStrategyError("the alternative condition needs continuous u")
    if not 0 <= j < fam.domain.dim:
        raise InvalidInputError(f"auxiliary coordinate {j} outside 0..{fam.domain.dim - 1}")
    rng = as_rng(rng)
    n2 = 2 * fam.n
    mats, us = [], []
    for _ in range(n_trials):
        U = fam.sample_u(n2, rng)
        mats.append(np.array([w_tilde(fam, y, u, j) for u in U]))
        us.append(U)
    return _verdict(mats, us, n2, rel_tol, "alt-variability")


def lambda_bar(fam: ExpFamily, u_points) -> np.ndarray:
    """nk x nk matrix; row (i, j) holds lambda_ij(u_l) - lambda_ij(u_0), l = 1..nk."""
    if not isinstance(fam, ExpFamily):
        raise InvalidInputError("lambda_bar needs a closed-form conditionally exponential family")
    pts = [np.atleast_1d(np.asarray(p, dtype=float)) for p in u_points]
    nk = fam.n * fam.k
    if len(pts) != nk + 1:
        raise InvalidInputError(f"need exactly nk+1 = {nk + 1} points, got {len(pts)}")
    L = np.array([fam.lambdas(p).ravel() for p in pts])  # (nk+1, nk)
    return (L[1:] - L[0]).T


@dataclass
class LambdaBarVerdict:
    n_draws: int
    invertible: int
    condition_numbers: list

    def to_dict(self):
        return {"check": "lambda-bar", "n_draws": self.n_draws, "invertible": self.invertible,
                "condition_numbers": [c if np.isfinite(c) else "inf" for c in self.condition_numbers]}


def check_lambda_bar(fam: ExpFamily, n_draws=100, rng=0) -> LambdaBarVerdict:
    """Condition number of lambda_bar at nk+1 random (distinct, if discrete) u's."""
    rng = as_rng(rng)
    nk = fam.n * fam.k
    conds = [condition_number(lambda_bar(fam, fam.sample_u(nk + 1, rng)))
             for _ in range(n_draws)]
    return LambdaBarVerdict(n_draws, int(np.sum(np.isfinite(conds))), [float(c) for c in conds])


def check_expfam_consistency_form(fam: ExpFamily, n_samples=1000, rng=0, fraction=0.99,
                                  tol=1e-8) -> dict:
    """Whether the vectors (qt_ij'(s), qt_ij''(s)), j = 1..k, are not all
    proportional, tested at sampled s in [-3, 3]: they are non-proportional
    at s when the 2 x k matrix they form has rank 2."""
    if not isinstance(fam, ExpFamily):
        raise InvalidInputError("the order check needs a closed-form family")
    rng = as_rng(rng)
    s = rng.uniform(-3.0, 3.0, size=n_samples)
    comps = []
    for i in range(fam.n):
        if fam.k == 1:
            comps.append({"component": i, "non_proportional_fraction": 0.0, "pass": False})
            continue
        d1 = np.stack([st(s, 1) for st in fam.stats[i]], axis=1)
        d2 = np.stack([st(s, 2) for st in fam.stats[i]], axis=1)
        ok = 0
        for a, b in zip(d1, d2):
            M = np.vstack([a, b])
            sv = np.linalg.svd(M, compute_uv=False)
            ok += bool(sv[0] > 0 and sv[1] > tol * sv[0])
        frac = ok / n_samples
        comps.append({"component": i, "non_proportional_fraction": frac, "pass": frac >= fraction})
    report = {"check": "order", "k": fam.k, "components": comps,
              "pass": all(c["pass"] for c in comps)}
    if fam.k == 1:
        report["statement"] = "order-1: Assumption of Variability impossible"
    return report


# -- construction helpers -----------------------------------------------------

def gaussian_variance_family(n, K, rng=0, sigma_range=(0.2, 3.0)) -> ExpFamily:
    """k = 1: q_i = -s^2 / (2 sigma_i(u)^2), per-segment random sigma."""
    rng = as_rng(rng)
    sig = rng.uniform(*sigma_range, size=(n, K))
    stats = [[Statistic("poly", 1.0, p=2)] for _ in range(n)]
    lams = [[Modulator("table", values=-0.5 / sig[i] ** 2)] for i in range(n)]
    return ExpFamily(stats, lams, UDomain("segments", K=K))


def random_segment_family(n, K, stat_specs, rng=0, low=-1.0, high=1.0) -> ExpFamily:
    """Shared statistics per component with independent uniform per-segment
    modulators; ``stat_specs`` is a list of (tag, p) pairs."""
    rng = as_rng(rng)
    stats = [[Statistic(tag, 1.0, p=p) for tag, p in stat_specs] for _ in range(n)]
    lams = [[Modulator("table", values=rng.uniform(low, high, size=K)) for _ in stat_specs]
            for _ in range(n)]
    return ExpFamily(stats, lams, UDomain("segments", K=K))


def random_smooth_family(n, stat_specs, rng=0, n_bumps=30, width=0.03) -> ExpFamily:
    """Continuous scalar u in [0, 1]; each modulator an RBF sum with random
    centres and amplitudes."""
    rng = as_rng(rng)
    stats = [[Statistic(tag, 1.0, p=p) for tag, p in stat_specs] for _ in range(n)]
    lams = [[Modulator("rbf", centers=rng.uniform(0, 1, size=(n_bumps, 1)),
                       amps=rng.normal(size=n_bumps), width=width) for _ in stat_specs]
            for _ in range(n)]
    return ExpFamily(stats, lams, UDomain("box", dim=1))


# -- JSON family documents ----------------------------------------------------

def _req(d, key, path):
    if not isinstance(d, dict) or key not in d:
        raise ConfigError(f"missing required key {key!r}", path=path)
    return d[key]


def _parse_stat(d, path):
    tag = _req(d, "tag", path)
    try:
        return Statistic(tag, d.get("coef", 1.0), d.get("p"))
    except InvalidInputError as exc:
        raise ConfigError(str(exc), path=f"{path}.tag") from None


def _parse_modulator(d, path, domain, rng):
    kind = _req(d, "kind", path)
    kw = {k: v for k, v in d.items() if k != "kind"}
    if kind == "table" and "values" not in kw:
        rnd = _req(d, "random", path)
        if domain.kind != "segments":
            raise ConfigError("table modulators need a segments domain", path=path)
        kw = {"values": rng.uniform(rnd.get("low", -1.0), rnd.get("high", 1.0),
                                    size=domain.K).tolist()}
    if kind == "table" and domain.kind == "segments" and len(kw["values"]) != domain.K:
        raise ConfigError(f"table has {len(kw['values'])} values, domain has K={domain.K}",
                          path=f"{path}.values")
    try:
        return Modulator(kind, **kw)
    except (InvalidInputError, KeyError, TypeError) as exc:
        raise ConfigError(f"bad modulator: {exc}", path=path) from None


def family_from_dict(doc, rng=None) -> ExpFamily:
    """Parse a family document.  Table modulators may give ``values`` or
    ``random: {low, high}`` (drawn from ``seed`` in the document)."""
    if not isinstance(doc, dict):
        raise ConfigError("family document must be an object", path="$")
    rng = as_rng(doc.get("seed", 0) if rng is None else rng)
    udoc = _req(doc, "u", "$")
    ukind = _req(udoc, "kind", "$.u")
    if ukind == "segments":
        K = _req(udoc, "K", "$.u")
        if not isinstance(K, int) or K < 1:
            raise ConfigError("K must be a positive integer", path="$.u.K")
        domain = UDomain("segments", K=K)
    elif ukind == "box":
        domain = UDomain("box", dim=int(udoc.get("dim", 1)))
    else:
        raise ConfigError(f"unknown u kind {ukind!r}", path="$.u.kind")
    comps = _req(doc, "components", "$")
    if not isinstance(comps, list) or not comps:
        raise ConfigError("components must be a nonempty list", path="$.components")
    stats, lams, base, logz = [], [], [], []
    for i, c in enumerate(comps):
        p = f"$.components[{i}]"
        st = _req(c, "stats", p)
        md = _req(c, "modulators", p)
        if not isinstance(st, list) or not isinstance(md, list) or len(st) != len(md):
            raise ConfigError("stats and modulators must be lists of equal length", path=p)
        stats.append([_parse_stat(s, f"{p}.stats[{j}]") for j, s in enumerate(st)])
        lams.append([_parse_modulator(m, f"{p}.modulators[{j}]", domain, rng)
                     for j, m in enumerate(md)])
        base.append([_parse_stat(s, f"{p}.base[{j}]") for j, s in enumerate(c.get("base", []))])
        lz = c.get("log_partition")
        logz.append(None if lz is None else _parse_modulator(lz, f"{p}.log_partition", domain, rng))
    if "k" in doc and any(len(r) != doc["k"] for r in stats):
        raise ConfigError(f"every component must have k={doc['k']} statistics", path="$.k")
    try:
        return ExpFamily(stats, lams, domain, base=base, log_partition=logz)
    except InvalidInputError as exc:
        raise ConfigError(str(exc), path="$.components") from None


def load_family(path) -> ExpFamily:
    try:
        doc = json.loads(open(path).read())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}", path="$") from None
    return family_from_dict(doc)
