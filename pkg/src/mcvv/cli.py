"""Command-line entry point.

Subcommands: gen-data, train, kfold, eval, gradcheck, ablate. Every run
config key is a flag; a --config file supplies the base values and flags
override it. Exit codes: 0 success, 1 usage error, 2 verification failure,
3 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import fields
from multiprocessing import Pool
from pathlib import Path

import numpy as np

from mcvv import train as TR
from mcvv.config import RunConfig, UsageError
from mcvv.data import Cohort, generate_synthetic_cohort, plan_folds
from mcvv.metrics import compute_metrics
from mcvv.model import Model, full_model_gradcheck, load_checkpoint, save_checkpoint

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VERIFY = 2
EXIT_IO = 3

GRADCHECK_TOLERANCE = 1e-4
ABLATION_T_VALUES = (2, 4, 8)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=str, default=None,
                        help="key = value config file (flags override it)")
    for f in fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        parser.add_argument(flag, dest=f"cfg_{f.name}", type=str, default=None,
                            metavar="V", help=f"(default: {f.default})")


def _resolve_config(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    overrides = {f.name: getattr(args, f"cfg_{f.name}")
                 for f in fields(RunConfig)
                 if getattr(args, f"cfg_{f.name}", None) is not None}
    cfg.apply(overrides)
    return cfg


def _load_cohort(data: str) -> Cohort:
    path = Path(data)
    manifest = path / "manifest.csv" if path.is_dir() else path
    if not manifest.exists():
        raise UsageError(f"no manifest at {manifest}")
    return Cohort(manifest)


def _write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


# -- commands -------------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    cfg = _resolve_config(args)
    manifest = generate_synthetic_cohort(cfg.cohort_spec(), args.out)
    print(manifest)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    cohort = _load_cohort(args.data)
    plan = plan_folds(cohort.subject_ids(), cfg.l_fold, seed=cfg.seed)
    if not 0 <= args.fold < plan.k:
        raise UsageError(f"fold {args.fold} out of range (k={plan.k})")
    result = TR.train_fold(cohort, plan, args.fold, cfg.model_config(), cfg.train_config())

    out_dir = Path(args.out)
    _write_json(out_dir / "report.json",
                {"config": cfg.to_dict(), "report": result.report.to_dict()})
    save_checkpoint(result.model, out_dir)
    cfg.write(out_dir / "config.cfg")
    print(out_dir / "report.json")
    return EXIT_OK


def cmd_kfold(args) -> int:
    cfg = _resolve_config(args)
    cohort = _load_cohort(args.data)
    result = TR.run_kfold(cohort, cfg.model_config(), cfg.train_config())
    payload = {
        "config": cfg.to_dict(),
        "folds": [fr.report.to_dict() for fr in result.folds],
        "pooled": result.pooled.to_dict(),
    }
    out = Path(args.out)
    _write_json(out, payload)
    print(out)
    return EXIT_OK


def cmd_eval(args) -> int:
    ckpt = Path(args.checkpoint)
    cfg = RunConfig.from_file(ckpt / "config.cfg")
    cohort = _load_cohort(args.data)
    model = Model(cfg.model_config(), seed=cfg.seed)
    load_checkpoint(model, ckpt)
    scores, labels, correct, total = TR.evaluate_subjects(model, cohort,
                                                          cohort.subject_ids())
    ordered = list(scores)
    report = compute_metrics([scores[s] for s in ordered],
                             [labels[s] for s in ordered],
                             clip_accuracy=correct / total if total else None)
    payload = {"config": cfg.to_dict(), "report": report.to_dict()}
    out = Path(args.out)
    _write_json(out, payload)
    print(out)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    err, n_params = full_model_gradcheck(seed=args.seed)
    print(f"parameters: {n_params}")
    print(f"max relative error: {err:.6e}")
    if err > GRADCHECK_TOLERANCE:
        print(f"FAIL: exceeds {GRADCHECK_TOLERANCE:.0e}", file=sys.stderr)
        return EXIT_VERIFY
    print(f"PASS: within {GRADCHECK_TOLERANCE:.0e}")
    return EXIT_OK


def _ablate_cell(payload: tuple) -> dict:
    base, data, t_value, head, loss, seeds = payload
    cfg = RunConfig()
    cfg.apply({k: v for k, v in base.items()})
    cohort = _load_cohort(data)
    subject_accs, clip_accs, f1s = [], [], []
    for seed in range(seeds):
        cfg.apply({"t": str(t_value), "head": head, "loss": loss, "seed": str(seed)})
        plan = plan_folds(cohort.subject_ids(), cfg.l_fold, seed=cfg.seed)
        result = TR.train_fold(cohort, plan, 0, cfg.model_config(), cfg.train_config())
        subject_accs.append(result.report.accuracy)
        clip_accs.append(result.report.clip_accuracy)
        f1s.append(result.report.f1 if result.report.f1 is not None else float("nan"))
    return {
        "t": t_value, "head": head, "loss": loss,
        "subject_accuracy": float(np.median(subject_accs)),
        "clip_accuracy": float(np.median(clip_accs)),
        "f1": float(np.median(f1s)),
    }


def cmd_ablate(args) -> int:
    cfg = _resolve_config(args)
    for t_value in ABLATION_T_VALUES:
        if cfg.clip_len % t_value:
            raise UsageError(f"clip_len {cfg.clip_len} not divisible by t={t_value}")
    base = {k: str(v) for k, v in cfg.to_dict().items()}
    cells = [(base, args.data, t_value, head, loss, args.seeds)
             for t_value in ABLATION_T_VALUES
             for head in TR.HEAD_MODES
             for loss in TR.LOSS_MODES]
    if args.workers > 1:
        with Pool(args.workers) as pool:
            rows = pool.map(_ablate_cell, cells)
    else:
        rows = [_ablate_cell(c) for c in cells]

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["t", "head", "loss",
                                                "subject_accuracy", "clip_accuracy", "f1"])
        writer.writeheader()
        writer.writerows(rows)
    print(out)
    return EXIT_OK


# -- dispatch ------------------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="mcvv", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[], help="generate a synthetic cohort")
    p.add_argument("--out", required=True, help="output dataset directory")
    _add_config_flags(p)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train one fold, emit report + checkpoint")
    p.add_argument("--data", required=True, help="dataset dir or manifest.csv")
    p.add_argument("--fold", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("kfold", help="train every fold, emit pooled report")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="output report path (json)")
    _add_config_flags(p)
    p.set_defaults(func=cmd_kfold)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a manifest")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="verify model gradients by central differences")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("ablate", help="run the t/head/loss ablation grid, emit CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--seeds", type=int, default=1, help="seeds per cell (median reported)")
    p.add_argument("--workers", type=int, default=1, help="parallel worker processes")
    _add_config_flags(p)
    p.set_defaults(func=cmd_ablate)

    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
