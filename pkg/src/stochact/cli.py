"""Command-line front-end: ``stochact {gradcheck,train,experiment,report}``."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .core import derive_seed
from .ensemble import accuracy
from .errors import StochactError
from .experiment import (emit_report, load_config, materialize, member_spec, plan_method, report_from_raw,
                         run_experiment, text_table)
from .gradcheck import run_suite
from .model import mini_convnet, predict_proba, save_model
from .training import TrainConfig, train_model, write_loss_curve


def _apply_overrides(cfg, args):
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out = args.out
    if args.jobs is not None:
        cfg.jobs = args.jobs
    return cfg


def cmd_gradcheck(args) -> int:
    results = run_suite(args.points, args.configs, seed=args.seed or 0)
    for r in results:
        print(f"{'ok  ' if r.ok else 'FAIL'} {r.ident:<34} {r.target:<6} n={r.points:<5} max_rel={r.max_rel_error:.2e}")
    bad = [r for r in results if not r.ok]
    print(f"{len(results) - len(bad)}/{len(results)} checks passed")
    return 1 if bad else 0


def cmd_train(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    dcfg = next((d for d in cfg.datasets if d.name == args.dataset), None) if args.dataset else cfg.datasets[0]
    if dcfg is None:
        raise StochactError(f"dataset {args.dataset!r} not in config")
    method = args.method or cfg.methods[0]
    x, y, split = materialize(dcfg, cfg.seed, cfg.base_dir)
    tr, te = split.train_indices(0), split.test_indices(0)
    base = mini_convnet(x.shape[1:], int(y.max()) + 1, cfg.backbone.widths, cfg.backbone.hidden,
                        padding=cfg.backbone.padding)
    seed = derive_seed(cfg.seed, dcfg.name, method, 0, 0)
    spec = member_spec(plan_method(method)[0], base, seed)
    tcfg = TrainConfig(**{**asdict(cfg.train), "seed": seed, "augmentation": cfg.train.augmentation})
    state, history = train_model(spec, x[tr], y[tr], tcfg)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    save_model(state, out / "model.sact")
    write_loss_curve(history, out / "loss_curve.csv")
    acc = accuracy(np.argmax(predict_proba(state, x[te]), axis=1), y[te])
    print(f"{dcfg.name} {method} seed={seed} test_acc={acc:.4f} -> {out}")
    return 0


def cmd_experiment(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    report, raw = run_experiment(cfg, progress=(lambda s: print(s, file=sys.stderr)) if args.verbose else None)
    emit_report(report, cfg.out, raw)
    print(text_table(report), end="")
    return 0


def cmd_report(args) -> int:
    src = Path(args.results)
    raw = json.loads((src / "results.json" if src.is_dir() else src).read_text())
    report = report_from_raw(raw)
    emit_report(report, args.out or (src if src.is_dir() else src.parent), raw)
    print(text_table(report), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="stochact", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", required=True, help="YAML experiment config")
        p.add_argument("--seed", type=int, default=None, help="master seed (overrides config)")
        p.add_argument("--out", default=None, help="output directory (overrides config)")
        p.add_argument("--jobs", type=int, default=None, help="parallel member trainings")

    p = sub.add_parser("gradcheck", help="finite-difference check of every activation")
    common(p, config=False)
    p.add_argument("--points", type=int, default=1000)
    p.add_argument("--configs", type=int, default=200)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("train", help="train one model and save it")
    common(p)
    p.add_argument("--method", default=None, help="method name (first member is trained)")
    p.add_argument("--dataset", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("experiment", help="run the full protocol and write the report")
    common(p)
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("report", help="re-render report files from stored results")
    p.add_argument("results", help="results.json or the directory containing it")
    common(p, config=False)
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except StochactError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
