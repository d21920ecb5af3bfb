"""Minibatch training of the pair discriminator, plus gradient checking."""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .contrastive import ContrastiveSet, minibatches, resample_negatives
from .errors import InvalidInputError, TrainingDivergenceError
from .model import Model
from .numerics import SeededRng

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 60
    batch: int = 512
    lr: float = 1e-3
    l2: float = 1e-4
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    resample_negatives: bool = True
    seed: int = 0

    def __post_init__(self):
        # lr = 0 is accepted: it is the identity on the parameters
        if self.lr < 0:
            raise InvalidInputError(f"learning rate must be >= 0, got {self.lr}")
        if self.batch < 2 or self.batch % 2:
            raise InvalidInputError(f"batch must be even and >= 2, got {self.batch}")
        if self.epochs < 0:
            raise InvalidInputError(f"epochs must be >= 0, got {self.epochs}")
        if self.l2 < 0:
            raise InvalidInputError(f"l2 must be >= 0, got {self.l2}")
        if self.optimizer not in ("adam", "sgd"):
            raise InvalidInputError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")

    def to_dict(self):
        return asdict(self)


@dataclass
class TrainTrace:
    epoch: list = field(default_factory=list)
    loss: list = field(default_factory=list)
    accuracy: list = field(default_factory=list)
    param_norm: list = field(default_factory=list)
    seconds: list = field(default_factory=list)
    initial_loss: float = float("nan")
    initial_accuracy: float = float("nan")
    final_loss: float = float("nan")
    final_accuracy: float = float("nan")
    warning: str | None = None

    def record(self, epoch, loss, acc, norm, secs):
        self.epoch.append(epoch)
        self.loss.append(loss)
        self.accuracy.append(acc)
        self.param_norm.append(norm)
        self.seconds.append(secs)

    def to_csv(self, path, header_line=None):
        with open(path, "w", newline="") as fh:
            if header_line:
                fh.write(f"# {header_line}\n")
            w = csv.writer(fh)
            w.writerow(["epoch", "loss", "accuracy", "param_norm", "seconds"])
            for row in zip(self.epoch, self.loss, self.accuracy, self.param_norm, self.seconds):
                w.writerow([row[0], repr(row[1]), repr(row[2]), repr(row[3]), f"{row[4]:.3f}"])


class Adam:
    def __init__(self, keys_shapes, lr, beta1, beta2, eps):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros(s) for k, s in keys_shapes}
        self.v = {k: np.zeros(s) for k, s in keys_shapes}
        self.t = 0

    def steps(self, grads):
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        out = {}
        for k, g in grads.items():
            m, v = self.m[k], self.v[k]
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            out[k] = self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return out


def evaluate(model: Model, cs: ContrastiveSet, l2=0.0, chunk=65536):
    """Full-set loss (with penalty) and accuracy."""
    r = np.concatenate([model.forward(cs.x[i:i + chunk], cs.u[i:i + chunk])
                        for i in range(0, len(cs), chunk)])
    y = cs.labels
    loss = float(np.mean(np.logaddexp(0.0, r) - y * r)) + model.penalty(l2)
    acc = float(np.mean((r > 0) == (y > 0.5)))
    return loss, acc


def train(model: Model, cs: ContrastiveSet, cfg: TrainConfig, progress=None):
    """Fit in place; returns ``(model, trace)``.

    Epoch e shuffles with stream (seed, 2e+1) and, from the second epoch on,
    redraws the negative-class permutation with stream (seed, 2e).  The
    recorded per-epoch loss and accuracy are averages over that epoch's
    minibatches.
    """
    if cs.x.shape[1] != model.feature.n:
        raise InvalidInputError(f"model expects x width {model.feature.n}, data has {cs.x.shape[1]}")
    rng = SeededRng(cfg.seed)
    keys = model.keys()
    params = model.params
    opt = Adam([(k, params[k].shape) for k in keys], cfg.lr, cfg.beta1, cfg.beta2,
               cfg.adam_eps) if cfg.optimizer == "adam" else None

    trace = TrainTrace()
    trace.initial_loss, trace.initial_accuracy = evaluate(model, cs, cfg.l2)
    if not np.isfinite(trace.initial_loss):
        raise TrainingDivergenceError("initial loss is not finite", epoch=0)
    limit = 10.0 * trace.initial_loss

    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        if cfg.resample_negatives and epoch > 1:
            cs = resample_negatives(cs, rng.child(2 * epoch))
        tot_loss = tot_correct = tot_rows = 0.0
        for idx in minibatches(cs, cfg.batch, rng.child(2 * epoch + 1)):
            loss, grads, r = model.loss_and_grad(cs.x[idx], cs.u[idx], cs.labels[idx], cfg.l2)
            if not np.isfinite(loss):
                raise TrainingDivergenceError(f"non-finite loss in epoch {epoch}", epoch=epoch)
            tot_loss += loss * idx.size
            tot_correct += np.sum((r > 0) == (cs.labels[idx] > 0.5))
            tot_rows += idx.size
            if cfg.lr == 0.0:
                continue
            if opt is not None:
                upd = opt.steps(grads)
            else:
                upd = {k: cfg.lr * g for k, g in grads.items()}
            for k in keys:
                model.set_param(k, model.params[k] - upd[k])
        ep_loss = tot_loss / tot_rows
        if not np.isfinite(ep_loss) or ep_loss > limit:
            raise TrainingDivergenceError(
                f"loss {ep_loss:.4g} in epoch {epoch} exceeds 10x initial {trace.initial_loss:.4g}",
                epoch=epoch)
        trace.record(epoch, ep_loss, tot_correct / tot_rows, model.param_norm(),
                     time.perf_counter() - t0)
        if progress is not None:
            progress(epoch, ep_loss, tot_correct / tot_rows)
        log.debug("epoch %d loss %.5f acc %.4f", epoch, ep_loss, tot_correct / tot_rows)

    trace.final_loss, trace.final_accuracy = evaluate(model, cs, cfg.l2)
    if cfg.epochs and not trace.final_loss <= trace.initial_loss:
        trace.warning = "final loss above initial loss"
    return model, trace


@dataclass
class GradCheckReport:
    max_rel_err: float
    n_checked: int
    n_excluded: int
    eps: float
    coords: list
    rel_errs: list

    def to_dict(self):
        return asdict(self)


def _rel_err(a, b, floor=1e-8):
    return abs(a - b) / max(abs(a), abs(b), floor)


def grad_check(model: Model, cs: ContrastiveSet, n_points: int = 100, eps: float = 1e-5,
               rng=0, rows: int = 64, l2: float = 1e-4) -> GradCheckReport:
    """Compare analytic and central-difference derivatives at random
    parameter coordinates on a random subset of rows.

    A coordinate is excluded when moving it by +-eps changes any maxout
    branch or output sign on the subset (a tie lies within eps).  Relative
    error is |a - f| / max(|a|, |f|, 1e-8).
    """
    if n_points < 1:
        raise InvalidInputError("n_points must be >= 1")
    rng = SeededRng(rng) if not isinstance(rng, SeededRng) else rng
    sel = np.sort(rng.permutation(len(cs))[:min(rows, len(cs))])
    x, u, y = cs.x[sel], cs.u[sel], cs.labels[sel]
    theta = model.get_flat()
    _, grads, _ = model.loss_and_grad(x, u, y, l2)
    analytic = model.flat_grad(grads)
    base = model.pattern(x)
    coords = rng.permutation(theta.size)[:min(n_points, theta.size)]

    def same(p):
        return all(np.array_equal(a, b) for a, b in zip(p, base))

    errs, kept, excluded = [], [], 0
    try:
        for c in coords:
            vals = []
            tie = False
            for sgn in (1.0, -1.0):
                t = theta.copy()
                t[c] += sgn * eps
                model.set_flat(t)
                if not same(model.pattern(x)):
                    tie = True
                    break
                vals.append(model.loss(x, u, y, l2))
            if tie:
                excluded += 1
                continue
            fd = (vals[0] - vals[1]) / (2 * eps)
            errs.append(_rel_err(analytic[c], fd))
            kept.append(int(c))
    finally:
        model.set_flat(theta)
    return GradCheckReport(max_rel_err=float(max(errs)) if errs else float("nan"),
                           n_checked=len(errs), n_excluded=excluded, eps=eps,
                           coords=kept, rel_errs=[float(e) for e in errs])
