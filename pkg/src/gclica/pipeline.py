"""End-to-end experiments: configuration, single runs and sweeps.

A run is fully determined by its configuration and one seed.  Its ID is a
hash of both, and everything written to ``<output_dir>/<run_id>/`` except
``record.json`` (which holds wall-clock timestamps) is a pure function of
that pair.

Random streams of a run with seed ``s``::

    (s, 1, 0)  sources        (s, 1, 1)  mixing network
    (s, 1, 2)  pair building  (s, 1, 3)  model initialisation
    (s, 2e), (s, 2e+1)        per-epoch negatives and batches (trainer)
"""
from __future__ import annotations

import copy
import csv
import hashlib
import inspect
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .contrastive import AuxStrategy, build_pairs
from .errors import (ConfigError, DegenerateColumnError, DegenerateDataError, EvaluationError,
                     GclError)
from .evalmetrics import VARIANTS, mcc
from .linear_ica import FastIcaConfig, fastica
from .model import Model, build_model, load_model, save_model
from .numerics import SeededRng
from .synthdata import (SourceDataset, gen_ar_sources, gen_grid_scale_mixture,
                        gen_segmented_sources, mix_dataset)
from .trainer import TrainConfig, train

METHODS = ("proposed", "proposed_with_ica", "control")
GENERATORS = ("grid", "segmented", "ar")
DATA_STREAM = 1
_GENERATOR_FNS = {"grid": gen_grid_scale_mixture, "segmented": gen_segmented_sources,
                  "ar": gen_ar_sources}

DEFAULT_CONFIG = {
    "generator": {"kind": "segmented", "n": 5, "T": 2**16, "n_segments": 64,
                  "mixing": {"n_layers": 3, "condition_bound": 10.0, "slope": 0.2}},
    "strategy": {"kind": "segment-label", "one_hot": False},
    "model": {"head": "expfam", "k": 1, "width": 32, "a_width": 32, "hidden": None,
              "depth": 2, "init_scale": 1.0},
    "train": {"epochs": 60, "batch": 512, "lr": 1e-3, "l2": 1e-4, "optimizer": "adam",
              "resample_negatives": True},
    "eval": {"variant": "abs-truth", "apply_fastica": True, "contrast": "tanh",
             "control": True},
    "seeds": [1],
    "output_dir": "runs",
}


def _merge(base, over, path="$"):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if k not in base:
            raise ConfigError("unknown key", path=f"{path}.{k}")
        if k == "generator":
            # generator keys depend on the kind, so the section is taken whole
            if not isinstance(v, dict):
                raise ConfigError("must be an object", path=f"{path}.{k}")
            out[k] = copy.deepcopy(v)
            out[k].setdefault("mixing", copy.deepcopy(base[k]["mixing"]))
        elif isinstance(base[k], dict) and isinstance(v, dict):
            out[k] = _merge(base[k], v, f"{path}.{k}")
        else:
            out[k] = copy.deepcopy(v)
    return out


def _int(d, key, path, low=None):
    v = d.get(key)
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"must be an integer, got {v!r}", path=f"{path}.{key}")
    if low is not None and v < low:
        raise ConfigError(f"must be >= {low}, got {v}", path=f"{path}.{key}")
    return v


@dataclass
class ExperimentConfig:
    """Validated experiment configuration; see ``DEFAULT_CONFIG`` for the schema."""
    generator: dict
    strategy: dict
    model: dict
    train: dict
    eval: dict
    seeds: list
    output_dir: str

    @classmethod
    def from_dict(cls, doc):
        if not isinstance(doc, dict):
            raise ConfigError("configuration must be a JSON object", path="$")
        full = _merge(DEFAULT_CONFIG, doc)
        cfg = cls(**full)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path):
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}", path="$") from None
        except OSError as exc:
            raise ConfigError(f"cannot read configuration: {exc}", path="$") from None
        return cls.from_dict(doc)

    def to_dict(self):
        return {"generator": self.generator, "strategy": self.strategy, "model": self.model,
                "train": self.train, "eval": self.eval, "seeds": list(self.seeds),
                "output_dir": self.output_dir}

    def validate(self):
        g = self.generator
        kind = g.get("kind")
        if kind not in GENERATORS:
            raise ConfigError(f"must be one of {GENERATORS}, got {kind!r}", path="$.generator.kind")
        accepted = set(inspect.signature(_GENERATOR_FNS[kind]).parameters) - {"rng"}
        for key in g:
            if key not in accepted | {"kind", "mixing"}:
                raise ConfigError(f"not a parameter of the {kind} generator",
                                  path=f"$.generator.{key}")
        _int(g, "n", "$.generator", low=2 if kind == "grid" else 1)
        if kind == "grid":
            _int(g, "grid_side", "$.generator", low=2)
            if "blobs_per_source" in g:
                _int(g, "blobs_per_source", "$.generator", low=1)
        else:
            T = _int(g, "T", "$.generator", low=2)
            if kind == "segmented":
                K = _int(g, "n_segments", "$.generator", low=1)
                if K > T:
                    raise ConfigError(f"n_segments={K} exceeds T={T}", path="$.generator.n_segments")
        mix = g.get("mixing")
        if mix is not None:
            if not isinstance(mix, dict):
                raise ConfigError("must be an object or null", path="$.generator.mixing")
            _int(mix, "n_layers", "$.generator.mixing", low=1)
        try:
            AuxStrategy.from_dict(self.strategy)
        except (TypeError, GclError) as exc:
            raise ConfigError(str(exc), path="$.strategy") from None
        if self.model.get("head") not in ("general", "expfam"):
            raise ConfigError(f"must be 'general' or 'expfam', got {self.model.get('head')!r}",
                              path="$.model.head")
        if self.model["head"] == "expfam" and self.strategy.get("kind") not in (
                "segment-label", "class-label"):
            raise ConfigError("the exponential-family head needs segment or class labels",
                              path="$.model.head")
        try:
            self.train_config(0)
        except (TypeError, GclError) as exc:
            raise ConfigError(str(exc), path="$.train") from None
        if self.eval.get("variant") not in VARIANTS:
            raise ConfigError(f"must be one of {VARIANTS}", path="$.eval.variant")
        if self.eval.get("contrast") not in ("tanh", "cube"):
            raise ConfigError("must be 'tanh' or 'cube'", path="$.eval.contrast")
        if not isinstance(self.seeds, list) or not self.seeds:
            raise ConfigError("must be a nonempty list of integers", path="$.seeds")
        for i, s in enumerate(self.seeds):
            if isinstance(s, bool) or not isinstance(s, int) or s < 0:
                raise ConfigError(f"must be a non-negative integer, got {s!r}", path=f"$.seeds[{i}]")

    def train_config(self, seed):
        return TrainConfig(seed=seed, **self.train)

    def hash(self):
        """Hash of everything that affects results (output_dir excluded)."""
        d = self.to_dict()
        d.pop("output_dir")
        return _digest(d)

    def run_id(self, seed):
        d = self.to_dict()
        d.pop("output_dir")
        d.pop("seeds")
        return _digest({"config": d, "seed": int(seed)})

    def with_value(self, dotted, value):
        d = copy.deepcopy(self.to_dict())
        node = d
        keys = dotted.split(".")
        for k in keys[:-1]:
            if not isinstance(node.get(k), dict):
                raise ConfigError("not a configuration section", path="$." + dotted)
            node = node[k]
        node[keys[-1]] = value
        return ExperimentConfig.from_dict(d)


def _digest(obj):
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


# -- stages -------------------------------------------------------------------

def _staged(stage, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except GclError as exc:
        if not getattr(exc, "stage", None):
            exc.stage = stage
        raise


def synthesize(cfg: ExperimentConfig, seed: int) -> SourceDataset:
    g = dict(cfg.generator)
    rng = SeededRng(seed, (DATA_STREAM,))
    kind = g.pop("kind")
    mix = g.pop("mixing", None)
    ds = _GENERATOR_FNS[kind](rng=rng.child(0), **g)
    if mix is None:
        # no mixing: observations are the sources themselves
        return replace(ds, X=ds.S.copy())
    return mix_dataset(ds, rng.child(1), **mix)


def _model_config(cfg: ExperimentConfig, ds: SourceDataset, cs):
    m = cfg.model
    feature = {"n": ds.n, "hidden": m.get("hidden"), "depth": m.get("depth", 2)}
    if m["head"] == "expfam":
        head = {"kind": "expfam", "n": ds.n, "n_segments": cs.n_classes, "k": m.get("k", 1),
                "a_width": m.get("a_width", 32)}
    else:
        head = {"kind": "general", "n": ds.n, "m": cs.u.shape[1], "width": m.get("width", 32)}
    return {"feature": feature, "head": head}


def init_model(cfg: ExperimentConfig, ds: SourceDataset, cs, seed) -> Model:
    rng = SeededRng(seed, (DATA_STREAM,)).child(3)
    return build_model(_model_config(cfg, ds, cs), rng, init_scale=cfg.model.get("init_scale", 1.0))


def score_features(features, truth, variant, apply_fastica=True, contrast="tanh", seed=0):
    """Reports for raw features and, optionally, after FastICA.

    Returns ``(raw_report, ica_report_or_None, ica_result_or_None)``.
    """
    try:
        raw = mcc(features, truth, variant)
        if not apply_fastica:
            return raw, None, None
        ica = fastica(features, FastIcaConfig(nonlinearity=contrast, seed=seed))
        return raw, mcc(ica.components, truth, variant), ica
    except (DegenerateDataError, DegenerateColumnError) as exc:
        raise EvaluationError(str(exc) if "degenerate" in str(exc) else f"degenerate features: {exc}") from exc


def _method_entry(rep, extra_variants=None):
    d = rep.to_dict()
    if extra_variants:
        d["other_variants"] = extra_variants
    return d


def _other_variants(est, truth, chosen):
    out = {}
    for v in VARIANTS:
        if v != chosen:
            try:
                out[v] = float(mcc(est, truth, v).mcc)
            except DegenerateColumnError:
                out[v] = None
    return out


@dataclass
class RunRecord:
    run_id: str
    config_hash: str
    seed: int
    config: dict
    run_dir: str
    trace_path: str
    report_path: str
    checkpoint_path: str
    started: str
    finished: str
    summary: dict = field(default_factory=dict)

    def to_dict(self):
        return dict(self.__dict__)

    @property
    def report(self):
        return json.loads(Path(self.report_path).read_text())


def _now():
    return time.strftime("%Y-%m-%dT%H:%M:%S%z")


def _write_json(path, header, body):
    doc = dict(header)
    doc.update(body)
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def build_report(cfg: ExperimentConfig, seed, ds, model, trace=None, control_model=None):
    """Evaluation document for a trained model (deterministic, no timings)."""
    ev = cfg.eval
    variant, apply, contrast = ev["variant"], ev["apply_fastica"], ev["contrast"]
    feats = model.features(ds.X)
    raw, ica_rep, ica = score_features(feats, ds.S, variant, apply, contrast, seed)
    methods = {"proposed": _method_entry(raw, _other_variants(feats, ds.S, variant))}
    if ica_rep is not None:
        methods["proposed_with_ica"] = _method_entry(
            ica_rep, _other_variants(ica.components, ds.S, variant))
        methods["proposed_with_ica"]["fastica"] = {"converged": bool(ica.converged),
                                                   "iterations": int(ica.iters)}
    if control_model is not None:
        cf = control_model.features(ds.X)
        c_raw, c_ica, _ = score_features(cf, ds.S, variant, apply, contrast, seed)
        methods["control"] = _method_entry(c_ica if c_ica is not None else c_raw)
        methods["control"]["description"] = ("untrained network" +
                                             (" + FastICA" if c_ica is not None else ""))
    body = {"variant": variant, "methods": methods,
            "mcc": {k: float(v["mcc"]) for k, v in methods.items()}}
    if trace is not None:
        body["training"] = {
            "epochs": len(trace.epoch),
            "initial_loss": trace.initial_loss, "final_loss": trace.final_loss,
            "initial_accuracy": trace.initial_accuracy, "final_accuracy": trace.final_accuracy,
            "warning": trace.warning,
        }
    return body


def run_single(cfg: ExperimentConfig, seed: int, output_dir=None, progress=None,
               figures=True) -> RunRecord:
    """synth -> pairs -> train -> features -> FastICA -> MCC, persisted."""
    started = _now()
    out_root = Path(output_dir or cfg.output_dir)
    rid = cfg.run_id(seed)
    chash = cfg.hash()
    run_dir = out_root / rid
    run_dir.mkdir(parents=True, exist_ok=True)
    header = {"config_hash": chash, "run_id": rid, "seed": int(seed)}

    ds = _staged("synth", synthesize, cfg, seed)
    strategy = AuxStrategy.from_dict(cfg.strategy)
    cs = _staged("pairs", build_pairs, ds, strategy, SeededRng(seed, (DATA_STREAM,)).child(2))
    model = _staged("model", init_model, cfg, ds, cs, seed)
    control = model.copy() if cfg.eval.get("control", True) else None
    model, trace = _staged("train", train, model, cs, cfg.train_config(seed), progress)
    body = _staged("eval", build_report, cfg, seed, ds, model, trace, control)

    (run_dir / "config.json").write_text(
        json.dumps({"config_hash": chash, "seed": int(seed), "config": cfg.to_dict()}, indent=2) + "\n")
    trace_path = run_dir / "trace.csv"
    trace.to_csv(trace_path, header_line=f"config {chash} run {rid} seed {seed}")
    ckpt = run_dir / "model.gclm"
    save_model(model, ckpt, header={"config_hash": chash, "run_id": rid, "seed": int(seed)})
    report_path = run_dir / "report.json"
    _write_json(report_path, header, body)
    if figures:
        from .plotting import plot_trace
        plot_trace(trace, run_dir / "trace.png", title=f"run {rid} (config {chash})")
    rec = RunRecord(run_id=rid, config_hash=chash, seed=int(seed), config=cfg.to_dict(),
                    run_dir=str(run_dir), trace_path=str(trace_path),
                    report_path=str(report_path), checkpoint_path=str(ckpt),
                    started=started, finished=_now(), summary=body["mcc"])
    _write_json(run_dir / "record.json", header, rec.to_dict())
    return rec


def evaluate_checkpoint(run_dir, variant=None):
    """Rebuild a run's data from its stored config and score its checkpoint."""
    run_dir = Path(run_dir)
    try:
        stored = json.loads((run_dir / "config.json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read run configuration: {exc}", path="$") from None
    cfg = ExperimentConfig.from_dict(stored["config"])
    if variant is not None:
        cfg = cfg.with_value("eval.variant", variant)
    seed = int(stored["seed"])
    model = load_model(run_dir / "model.gclm")
    ds = _staged("synth", synthesize, cfg, seed)
    body = _staged("eval", build_report, cfg, seed, ds, model)
    header = {"config_hash": stored["config_hash"], "run_id": run_dir.name, "seed": seed}
    out = dict(header)
    out.update(body)
    return out


# -- runs over several seeds and sweeps -----------------------------------------

CSV_FIELDS = ("method", "strategy", "segments", "seed", "mcc")


def _segments(cfg):
    return cfg.generator.get("n_segments", "")


def _rows(cfg, rec_or_summary, seed):
    summary = rec_or_summary
    return [{"method": m, "strategy": cfg.strategy["kind"], "segments": _segments(cfg),
             "seed": seed, "mcc": repr(float(summary[m]))}
            for m in METHODS if m in summary]


def write_csv(path, header_line, rows, fields=CSV_FIELDS):
    with open(path, "w", newline="") as fh:
        fh.write(f"# {header_line}\n")
        w = csv.DictWriter(fh, fieldnames=list(fields), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow(r)


def run_experiment(cfg: ExperimentConfig, output_dir=None, seeds=None, progress=None,
                   figures=True):
    """One run per seed; writes ``runs.csv`` with a row per (method, seed)."""
    out_root = Path(output_dir or cfg.output_dir)
    seeds = list(seeds if seeds is not None else cfg.seeds)
    records = [run_single(cfg, s, out_root, progress, figures) for s in seeds]
    rows = [r for rec in records for r in _rows(cfg, rec.summary, rec.seed)]
    write_csv(out_root / "runs.csv", f"config {cfg.hash()}", rows)
    return records


def _sweep_cell(args):
    cfg_dict, axis, value, seed, out_root, figures = args
    cfg = ExperimentConfig.from_dict(cfg_dict).with_value(axis, value)
    try:
        rec = run_single(cfg, seed, out_root, figures=figures)
        return {"value": value, "seed": seed, "ok": True, "summary": rec.summary,
                "run_id": rec.run_id, "error": None}
    except GclError as exc:
        return {"value": value, "seed": seed, "ok": False, "summary": {},
                "run_id": cfg.run_id(seed),
                "error": f"[{getattr(exc, 'stage', '?')}] {type(exc).__name__}: {exc}"}


@dataclass
class SweepResult:
    config_hash: str
    axis: str
    values: list
    cells: list
    csv_path: str
    plot_path: str
    figure_path: str | None

    @property
    def failures(self):
        return [c for c in self.cells if not c["ok"]]


def _sort_key(v):
    return (0, v, "") if isinstance(v, (int, float)) else (1, 0, str(v))


def sweep(cfg: ExperimentConfig, axis="generator.n_segments", values=(10, 50, 100, 300),
          output_dir=None, jobs=1, seeds=None, figures=True) -> SweepResult:
    """One run per (axis value, seed); failed cells are recorded and skipped.

    Writes ``sweep.csv`` (method, strategy, segments, seed, mcc) and the
    gnuplot data file ``sweep.dat`` with, per axis value, mean and standard
    deviation over seeds for each method.
    """
    out_root = Path(output_dir or cfg.output_dir)
    out_root.mkdir(parents=True, exist_ok=True)
    seeds = list(seeds if seeds is not None else cfg.seeds)
    values = list(values)
    for v in values:
        cfg.with_value(axis, v)  # validate every cell before starting
    chash = cfg.hash()
    tasks = [(cfg.to_dict(), axis, v, s, str(out_root), figures) for v in values for s in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            cells = list(pool.map(_sweep_cell, tasks))
    else:
        cells = [_sweep_cell(t) for t in tasks]
    cells.sort(key=lambda c: (_sort_key(c["value"]), c["seed"]))

    rows, failures = [], []
    for c in cells:
        cell_cfg = cfg.with_value(axis, c["value"])
        if c["ok"]:
            for r in _rows(cell_cfg, c["summary"], c["seed"]):
                if axis != "generator.n_segments":
                    r["segments"] = c["value"]
                rows.append(r)
        else:
            failures.append(c)
    header = f"config {chash} sweep {axis} values {' '.join(map(str, values))}"
    csv_path = out_root / "sweep.csv"
    write_csv(csv_path, header, rows)
    if failures:
        write_csv(out_root / "sweep_failures.csv", header,
                  [{"value": f["value"], "seed": f["seed"], "run_id": f["run_id"],
                    "error": f["error"]} for f in failures],
                  fields=("value", "seed", "run_id", "error"))

    plot_path = out_root / "sweep.dat"
    stats = sweep_stats(cells, sorted(set(values), key=_sort_key))
    with open(plot_path, "w") as fh:
        fh.write(f"# {header}\n")
        cols = ["x"] + [f"{m}_{s}" for m in METHODS for s in ("mean", "std")] + ["n_ok"]
        fh.write("# " + " ".join(cols) + "\n")
        for v, per in stats:
            parts = [str(v)]
            for m in METHODS:
                mean, sd = per.get(m, (float("nan"), float("nan")))
                parts += [f"{mean:.6f}", f"{sd:.6f}"]
            parts.append(str(per["n_ok"]))
            fh.write(" ".join(parts) + "\n")
    fig = None
    if figures:
        from .plotting import plot_sweep
        fig = out_root / "sweep.png"
        plot_sweep(stats, fig, xlabel=axis.split(".")[-1], title=f"config {chash}",
                   cells=cells)
    return SweepResult(chash, axis, values, cells, str(csv_path), str(plot_path),
                       None if fig is None else str(fig))


def sweep_stats(cells, values):
    """Per axis value: {method: (mean, std over seeds)} and the success count."""
    out = []
    for v in values:
        ok = [c for c in cells if c["value"] == v and c["ok"]]
        per = {"n_ok": len(ok)}
        for m in METHODS:
            xs = [c["summary"][m] for c in ok if m in c["summary"]]
            if xs:
                per[m] = (float(np.mean(xs)), float(np.std(xs)))
        out.append((v, per))
    return out
