"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
1 anything else.
"""
from __future__ import annotations

import argparse
import logging
import sys

from ..trainer import NumericalError
from .experiment import ConfigError, Experiment, load_config

EXIT_OK, EXIT_OTHER, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("ups")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key (repeatable)")
    p.add_argument("--out", help="output directory (overrides out_dir)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ups", description="Unified PDE operator: data, training and evaluation")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, help_ in [
        ("gen", "generate and cache every data split"),
        ("stage1", "embedding pretraining (alignment + task loss)"),
        ("stage2", "fine-tune the full model on the task loss"),
        ("eval", "one-step test nRMSE per training family"),
        ("baseline", "train a single-family FNO per training family"),
        ("run", "the whole pipeline"),
    ]:
        _add_common(sub.add_parser(name, help=help_))
    p = sub.add_parser("fewshot", help="zero/few-shot transfer to held-out families")
    _add_common(p)
    p.add_argument("--k", type=int, action="append", required=True, help="adaptation trajectories (repeatable)")
    p = sub.add_parser("superres", help="zero-shot evaluation on a finer grid")
    _add_common(p)
    p.add_argument("--m", type=int, action="append", required=True, help="test resolution (repeatable)")
    p = sub.add_parser("rollout", help="autoregressive rollout error")
    _add_common(p)
    p.add_argument("--steps", type=int, required=True)
    p = sub.add_parser("gradcheck", help="finite-difference check of every primitive and the toy model")
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--no-model", action="store_true", help="skip the toy model check")
    return ap


def _gradcheck(args) -> int:
    from .gradsuite import gradient_suite

    results = gradient_suite(include_model=not args.no_model)
    bad = 0
    for r in results:
        ok = r.worst < args.tol
        bad += not ok
        print(f"{'PASS' if ok else 'FAIL'}  {r.name:<18} rel_err={r.worst:.2e}  ({r.seconds:.2f}s)")
    print(f"{len(results) - bad}/{len(results)} passed")
    return EXIT_OK if bad == 0 else EXIT_NUMERIC


def _dispatch(args) -> int:
    if args.command == "gradcheck":
        return _gradcheck(args)
    overrides = list(args.set)
    if args.out:
        overrides.append(f"out_dir={args.out}")
    for flag, key in (("k", "fewshot_k"), ("m", "superres_m")):
        if getattr(args, flag, None):
            overrides.append(f"{key}={','.join(map(str, getattr(args, flag)))}")
    cfg = load_config(args.config, overrides)
    exp = Experiment(cfg, fresh=args.command == "run")
    cmd = args.command
    if cmd == "gen":
        exp.generate()
    elif cmd == "stage1":
        exp.stage1()
    elif cmd == "stage2":
        exp.stage2()
    elif cmd == "eval":
        for f, v in exp.evaluate(exp.trained_model()).items():
            print(f"{f}: nRMSE {v:.6g}")
    elif cmd == "fewshot":
        for (f, variant, k), v in exp.fewshot(exp.trained_model(), args.k).items():
            print(f"{f}{' (' + variant + ')' if variant else ''} k={k}: nRMSE {v:.6g}")
    elif cmd == "superres":
        for (f, m), v in exp.superres(exp.trained_model(), args.m).items():
            print(f"{f} m={m}: nRMSE {v:.6g}")
    elif cmd == "rollout":
        for f, per_step in exp.rollout(exp.trained_model(), args.steps).items():
            print(f"{f}: step 1 nRMSE {per_step[0]:.6g}, step {len(per_step)} nRMSE {per_step[-1]:.6g}")
    elif cmd == "baseline":
        for f, v in exp.baseline().items():
            print(f"{f}: FNO nRMSE {v:.6g}")
    elif cmd == "run":
        exp.run()
        print(f"report written to {exp.out / 'report.csv'}")
    if cmd in ("stage1", "stage2"):
        exp.write_audit()
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return _dispatch(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except Exception as exc:  # partial artifacts stay on disk
        log.exception("failed")
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_OTHER


if __name__ == "__main__":
    sys.exit(main())
