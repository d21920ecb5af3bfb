"""Command line entry point: ``gclica <subcommand> ...``.

Exit status: 0 ok, 2 configuration error, 3 data error, 4 training
divergence, 5 degenerate evaluation.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

from .errors import ConfigError, GclError

log = logging.getLogger("gclica")


def _load_config(args):
    from .pipeline import ExperimentConfig
    if args.config is None:
        return ExperimentConfig.from_dict({})
    return ExperimentConfig.load(args.config)


def _seeds(args, cfg):
    return [args.seed] if args.seed is not None else list(cfg.seeds)


def _emit(text, out=None):
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _csv_text(rows, fields, header_line=None):
    buf = io.StringIO()
    if header_line:
        buf.write(f"# {header_line}\n")
    w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    for r in rows:
        w.writerow(r)
    return buf.getvalue()


# -- subcommands ----------------------------------------------------------------

def cmd_synth(args):
    from .pipeline import synthesize
    from .synthdata import save_dataset
    cfg = _load_config(args)
    seed = _seeds(args, cfg)[0]
    if not args.out:
        raise ConfigError("synth needs --out FILE", path="--out")
    ds = synthesize(cfg, seed)
    path = save_dataset(ds, args.out, extra_meta={"config_hash": cfg.hash(), "seed": seed})
    log.info("wrote %s (T=%d, n=%d)", path, ds.T, ds.n)
    print(path)
    return 0


def _progress(epoch, loss, acc):
    log.info("epoch %d loss %.5f accuracy %.4f", epoch, loss, acc)


def cmd_run(args):
    from .pipeline import CSV_FIELDS, METHODS, run_experiment
    cfg = _load_config(args)
    out = args.out or cfg.output_dir
    records = run_experiment(cfg, out, _seeds(args, cfg), progress=_progress,
                             figures=not args.no_figures)
    if args.format == "json":
        print(json.dumps([r.to_dict() for r in records], indent=2))
    else:
        rows = [{"method": m, "strategy": cfg.strategy["kind"],
                 "segments": cfg.generator.get("n_segments", ""), "seed": r.seed,
                 "mcc": f"{r.summary[m]:.6f}"}
                for r in records for m in METHODS if m in r.summary]
        sys.stdout.write(_csv_text(rows, list(CSV_FIELDS), f"config {cfg.hash()}"))
    return 0


def _parse_values(text):
    vals = []
    for tok in text.split(","):
        tok = tok.strip()
        try:
            vals.append(int(tok))
        except ValueError:
            try:
                vals.append(float(tok))
            except ValueError:
                vals.append(tok)
    return vals


def cmd_sweep(args):
    from .pipeline import sweep
    cfg = _load_config(args)
    res = sweep(cfg, args.axis, _parse_values(args.values), args.out or cfg.output_dir,
                jobs=args.jobs, seeds=_seeds(args, cfg), figures=not args.no_figures)
    for f in res.failures:
        log.warning("cell %s=%s seed %s failed: %s", args.axis, f["value"], f["seed"], f["error"])
    if args.format == "json":
        print(json.dumps({"config_hash": res.config_hash, "axis": res.axis, "values": res.values,
                          "csv": res.csv_path, "plot_data": res.plot_path,
                          "figure": res.figure_path, "cells": res.cells}, indent=2))
    else:
        sys.stdout.write(Path(res.csv_path).read_text())
    return 0


def _floats(text, name):
    try:
        return [float(t) for t in text.split(",")]
    except ValueError:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}", path=name) from None


def cmd_theory(args):
    import numpy as np
    from . import theorycheck as tc
    fam = tc.load_family(args.family)
    y = np.full(fam.n, 0.5) if args.y is None else np.array(_floats(args.y, "--y"))
    if y.size == 1:
        y = np.full(fam.n, y[0])
    seed = 0 if args.seed is None else args.seed
    if args.check == "variability":
        verdict = tc.check_variability(fam, y, args.trials, seed, args.rel_tol).to_dict()
    elif args.check == "alt-variability":
        verdict = tc.check_alt_variability(fam, y, args.coord, args.trials, seed,
                                           args.rel_tol).to_dict()
    elif args.check == "lambda-bar":
        verdict = tc.check_lambda_bar(fam, args.trials, seed).to_dict()
    else:
        verdict = tc.check_expfam_consistency_form(fam, rng=seed)
    verdict = {"family": str(args.family), "n": fam.n, "k": fam.k, **verdict}
    if args.format == "csv":
        flat = {k: v for k, v in verdict.items() if not isinstance(v, (list, dict))}
        text = _csv_text([flat], list(flat))
    else:
        text = json.dumps(verdict, indent=2) + "\n"
    _emit(text, args.out)
    return 0


def cmd_grad_check(args):
    from .contrastive import AuxStrategy, build_pairs
    from .numerics import SeededRng
    from .pipeline import DATA_STREAM, init_model, synthesize
    from .trainer import grad_check
    cfg = _load_config(args)
    seed = _seeds(args, cfg)[0]
    ds = synthesize(cfg, seed)
    cs = build_pairs(ds, AuxStrategy.from_dict(cfg.strategy),
                     SeededRng(seed, (DATA_STREAM,)).child(2))
    model = init_model(cfg, ds, cs, seed)
    rep = grad_check(model, cs, args.points, args.eps, rng=seed, rows=args.rows,
                     l2=cfg.train.get("l2", 1e-4))
    d = {"config_hash": cfg.hash(), "seed": seed, "head": cfg.model["head"],
         "max_rel_err": rep.max_rel_err, "n_checked": rep.n_checked,
         "n_excluded": rep.n_excluded, "eps": rep.eps, "pass": rep.max_rel_err <= args.tol}
    if args.format == "csv":
        text = _csv_text([d], list(d), f"config {cfg.hash()}")
    else:
        d["coords"], d["rel_errs"] = rep.coords, rep.rel_errs
        text = json.dumps(d, indent=2) + "\n"
    _emit(text, args.out)
    return 0 if d["pass"] else 5


def cmd_eval(args):
    from .pipeline import evaluate_checkpoint
    rep = evaluate_checkpoint(args.run_dir, args.variant)
    if args.format == "csv":
        rows = [{"method": m, "variant": rep["variant"], "mcc": f"{v:.6f}"}
                for m, v in rep["mcc"].items()]
        text = _csv_text(rows, ["method", "variant", "mcc"], f"config {rep['config_hash']}")
    else:
        text = json.dumps(rep, indent=2) + "\n"
    _emit(text, args.out)
    return 0


# -- parser ---------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="gclica", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="count", default=0,
                   help="more logging (-v info, -vv debug)")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_help="output directory"):
        sp.add_argument("--config", help="experiment configuration (JSON)")
        sp.add_argument("--seed", type=int, help="single seed overriding the config's list")
        sp.add_argument("--out", help=out_help)
        sp.add_argument("--format", choices=("csv", "json"), default="csv")

    sp = sub.add_parser("synth", help="generate and save a dataset")
    common(sp, "dataset file to write")
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("run", help="train and evaluate, one run per seed")
    common(sp)
    sp.add_argument("--no-figures", action="store_true", help="skip PNG rendering")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("sweep", help="run a grid over one configuration value")
    common(sp)
    sp.add_argument("--axis", default="generator.n_segments",
                    help="dotted configuration key to vary (default: generator.n_segments)")
    sp.add_argument("--values", default="10,50,100,300", help="comma-separated axis values")
    sp.add_argument("--jobs", type=int, default=1, help="worker processes")
    sp.add_argument("--no-figures", action="store_true", help="skip PNG rendering")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("theory", help="check identifiability conditions of a family")
    sp.add_argument("--family", required=True, help="family document (JSON)")
    sp.add_argument("--check", default="variability",
                    choices=("variability", "alt-variability", "lambda-bar", "order"))
    sp.add_argument("--trials", type=int, default=100)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--y", help="evaluation point, one value or n comma-separated values")
    sp.add_argument("--coord", type=int, default=0, help="u coordinate for alt-variability")
    sp.add_argument("--rel-tol", type=float, default=1e-6)
    sp.add_argument("--out", help="file for the verdict (default stdout)")
    sp.add_argument("--format", choices=("csv", "json"), default="json")
    sp.set_defaults(func=cmd_theory)

    sp = sub.add_parser("grad-check", help="compare analytic and numerical gradients")
    common(sp, "file for the report (default stdout)")
    sp.add_argument("--points", type=int, default=100)
    sp.add_argument("--eps", type=float, default=1e-5)
    sp.add_argument("--rows", type=int, default=64)
    sp.add_argument("--tol", type=float, default=1e-4)
    sp.set_defaults(func=cmd_grad_check)

    sp = sub.add_parser("eval", help="re-evaluate a stored run's checkpoint")
    sp.add_argument("run_dir", help="directory written by 'gclica run'")
    sp.add_argument("--variant", choices=("raw", "absolute-value", "abs-truth"))
    sp.add_argument("--out", help="file for the report (default stdout)")
    sp.add_argument("--format", choices=("csv", "json"), default="json")
    sp.set_defaults(func=cmd_eval)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except GclError as exc:
        stage = getattr(exc, "stage", None)
        tag = f"[{stage}] " if stage else ""
        print(f"gclica {args.command}: {tag}{type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"gclica {args.command}: {exc}", file=sys.stderr)
        return ConfigError.exit_code


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(main())
