"""``grbm-infomax`` command-line tool.

Exit status: 0 success, 2 configuration or argument error, 3 numeric failure,
4 missing or unreadable artifact.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from ..errors import (CapabilityError, ConfigError, ContractViolation, FormatError, MissingArtifact, NumericFailure,
                      ResolutionError)
from . import commands
from .config import load
from .store import RunLock

EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_MISSING = 4
OUT_ROOT_ENV = "GRBM_OUT_ROOT"


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="key = value config file")
    common.add_argument("--seed", type=int, metavar="U64", help="overrides the 'seed' key")
    common.add_argument("--out", metavar="DIR", help=f"run directory (relative paths resolve under ${OUT_ROOT_ENV})")
    common.add_argument("--threads", type=int, metavar="COUNT", help="BLAS thread limit")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key")

    p = argparse.ArgumentParser(prog="grbm-infomax", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("toy", parents=[common], help="two-dimensional mixture experiment with the exact gradient")
    t = sub.add_parser("train", parents=[common], help="train a GRBM on whitened image patches")
    t.add_argument("--resume", action="store_true", help="continue from the last saved training state")
    s = sub.add_parser("select-stop", parents=[common], help="pick the early-stopping checkpoint")
    s.add_argument("--theta", type=float, metavar="REAL", help="overrides 'stop.theta'")
    for name, text in (("features", "encode train and test images"), ("classify", "train and score the L2-SVM")):
        f = sub.add_parser(name, parents=[common], help=text)
        f.add_argument("--checkpoint", metavar="ID", help="checkpoint id (default: the one selected by --theta)")
        f.add_argument("--theta", type=float, metavar="REAL", help="overrides 'stop.theta'")
    sub.add_parser("pipeline", parents=[common], help="train, select, encode and classify end to end")
    sub.add_parser("verify", parents=[common], help="oracle checks on seeded tiny models")
    return p


def _out_dir(arg) -> Path:
    root = os.environ.get(OUT_ROOT_ENV)
    path = Path(arg or "run")
    if root and not path.is_absolute():
        path = Path(root) / path
    return path


def _overrides(args) -> dict:
    out = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        out[key.strip()] = value.strip()
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("--seed must be non-negative")
        out["seed"] = str(args.seed)
    if getattr(args, "theta", None) is not None:
        out["stop.theta"] = repr(args.theta)
    return out


def _dispatch(args, run: commands.Run) -> int:
    cmd = args.command
    if cmd == "toy":
        return commands.cmd_toy(run)
    if cmd == "train":
        return commands.cmd_train(run, resume=args.resume)
    if cmd == "select-stop":
        return commands.cmd_select_stop(run, run.cfg["stop.theta"])
    if cmd in ("features", "classify"):
        ckpt = args.checkpoint or commands.select_checkpoint(run, run.cfg["stop.theta"])[1]
        return commands.cmd_features(run, ckpt) if cmd == "features" else commands.cmd_classify(run, ckpt)
    if cmd == "pipeline":
        return commands.cmd_pipeline(run)
    return commands.cmd_verify(run)


def _run(args) -> int:
    from threadpoolctl import threadpool_limits

    cfg = load(args.config, _overrides(args))
    if args.threads is not None and args.threads < 1:
        raise ConfigError("--threads must be positive")
    out = _out_dir(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with RunLock(out):
        cfg.write(out / "config.txt")
        run = commands.Run(cfg, out)
        if args.threads is None:
            return _dispatch(args, run)
        with threadpool_limits(limits=args.threads):
            return _dispatch(args, run)


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = _parser().parse_args(argv)
    try:
        return _run(args)
    except (ConfigError, ContractViolation, CapabilityError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericFailure as exc:
        where = f" (epoch {exc.epoch}, batch {exc.batch})" if exc.epoch is not None else ""
        print(f"numeric failure{where}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (MissingArtifact, ResolutionError, FormatError) as exc:
        print(f"missing artifact: {exc}", file=sys.stderr)
        return EXIT_MISSING
