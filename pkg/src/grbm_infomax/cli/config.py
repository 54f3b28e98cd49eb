"""Flat ``key = value`` run configuration.

Every key has a typed default; a config file may override any subset and
unknown keys are rejected.  The resolved document (all keys, sorted) is what
gets archived and hashed.
"""

from __future__ import annotations

import hashlib
import math
from pathlib import Path

from ..errors import ConfigError


def _floats(text: str) -> tuple:
    return tuple(float(x) for x in text.replace(",", " ").split())


def _ints(text: str) -> tuple:
    return tuple(int(x) for x in text.replace(",", " ").split())


def _optional_floats(text: str):
    return None if text.strip().lower() in ("", "none") else _floats(text)


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _optional_float(text: str):
    return None if text.strip().lower() in ("", "none") else float(text)


def _optional_int(text: str):
    return None if text.strip().lower() in ("", "none", "auto") else int(text)


def _choice(*options):
    def parse(text: str) -> str:
        text = text.strip()
        if text not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return text
    return parse


def _str(text: str) -> str:
    return text.strip()


# key -> (parser, default)
SCHEMA = {
    "seed": (int, 0),

    "data.source": (_choice("synthetic", "cifar"), "synthetic"),
    "data.cifar_dir": (_str, ""),
    "data.n_train_images": (int, 2000),
    "data.n_test_images": (int, 1000),
    "data.rf_size": (int, 6),
    "data.n_patches": (int, 100000),
    "data.contrast_eps": (float, 10.0 / 255.0 ** 2),
    "data.zca_eps": (float, 0.01),

    "train.n_hidden": (int, 64),
    "train.learning_rate": (float, 0.003),
    "train.epochs": (int, 80),
    "train.batch_size": (int, 100),
    "train.algorithm": (_choice("pcd", "cd", "exact"), "pcd"),
    "train.k": (int, 1),
    "train.n_chains": (_optional_int, None),
    "train.momentum": (float, 0.0),
    "train.sigma": (float, 0.7),
    "train.weight_std": (float, 0.01),
    "train.sparsity_target": (_optional_float, 0.03),
    "train.sparsity_strength": (float, 0.3),
    "train.checkpoint_every": (_optional_int, None),
    "train.ami_eval_size": (int, 10000),
    "train.ami_window": (int, 1),

    "encode.scheme": (_choice("soft", "conditional"), "soft"),
    "encode.threshold": (float, 0.25),
    "encode.stride": (int, 1),

    "svm.C": (float, 35.0),
    "svm.tol": (float, 1e-8),
    "svm.max_iter": (int, 10000),

    "stop.theta": (float, 0.0),
    "stop.thetas": (_floats, (-1.5, -0.7, 0.0, 0.7, 1.5)),

    "pipeline.cross_validate": (_bool, False),
    "cv.rho": (_floats, (0.01, 0.02, 0.03, 0.04, 0.05, 0.06)),
    "cv.lambda": (_floats, (0.1, 0.2, 0.3, 0.4, 0.5)),
    "cv.C": (_floats, (35.0, 75.0, 150.0, 300.0)),
    "cv.t": (_floats, (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7)),
    "cv.folds": (int, 5),

    "toy.n_samples": (int, 1000),
    "toy.epochs": (int, 2000),
    "toy.n_hidden": (int, 4),
    "toy.sigma": (float, 0.9),
    "toy.learning_rate": (float, 0.3),
    "toy.snapshots": (_ints, (0, 10, 140, 2000)),
    "toy.weights": (_optional_floats, None),
    "toy.means": (_optional_floats, None),
    "toy.covariances": (_optional_floats, None),

    "plot.ami_constant": (float, 0.0),

    "verify.n_models": (int, 50),
}


def _format(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


class RunConfig(dict):
    """Resolved configuration: every schema key present, values typed."""

    def text(self) -> str:
        return "".join(f"{k} = {_format(self[k])}\n" for k in sorted(self))

    @property
    def hash(self) -> str:
        return hashlib.sha256(self.text().encode()).hexdigest()

    def write(self, path) -> None:
        Path(path).write_text(f"# config_hash = {self.hash}\n" + self.text())


def parse_lines(lines, source="<config>") -> dict:
    out = {}
    for n, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{n}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"{source}:{n}: unknown key {key!r}")
        if key in out:
            raise ConfigError(f"{source}:{n}: duplicate key {key!r}")
        out[key] = value
    return out


def resolve(overrides: dict | None = None) -> RunConfig:
    """Defaults overlaid with string ``overrides``; each value is parsed and checked."""
    cfg = RunConfig({k: default for k, (_, default) in SCHEMA.items()})
    for key, value in (overrides or {}).items():
        if key not in SCHEMA:
            raise ConfigError(f"unknown key {key!r}")
        parser = SCHEMA[key][0]
        try:
            cfg[key] = parser(value) if isinstance(value, str) else value
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}") from None
    _check(cfg)
    return cfg


def load(path=None, overrides: dict | None = None) -> RunConfig:
    values = {}
    if path is not None:
        try:
            text = Path(path).read_text()
        except FileNotFoundError:
            raise ConfigError(f"{path}: config file not found") from None
        values = parse_lines(text.splitlines(), str(path))
    values.update(overrides or {})
    return resolve(values)


def _check(cfg: RunConfig) -> None:
    positive = ["data.rf_size", "train.n_hidden", "train.learning_rate", "train.batch_size", "train.k",
                "train.sigma", "train.ami_eval_size", "train.ami_window", "encode.stride", "svm.C",
                "svm.max_iter", "toy.n_samples", "toy.n_hidden", "toy.sigma", "toy.learning_rate",
                "data.contrast_eps", "data.zca_eps", "cv.folds", "verify.n_models"]
    for key in positive:
        if not cfg[key] > 0:
            raise ConfigError(f"{key} must be positive, got {cfg[key]}")
    for key in ("train.epochs", "toy.epochs", "data.n_patches", "data.n_train_images", "data.n_test_images",
                "train.momentum", "train.sparsity_strength", "train.weight_std"):
        if cfg[key] < 0:
            raise ConfigError(f"{key} must be non-negative, got {cfg[key]}")
    if not 0 <= cfg["train.momentum"] < 1:
        raise ConfigError("train.momentum must be in [0, 1)")
    target = cfg["train.sparsity_target"]
    if target is not None and not 0 < target < 1:
        raise ConfigError("train.sparsity_target must be in (0, 1)")
    if cfg["data.rf_size"] > 32:
        raise ConfigError("data.rf_size must be at most 32")
    if cfg["data.source"] == "cifar" and not cfg["data.cifar_dir"]:
        raise ConfigError("data.cifar_dir is required when data.source = cifar")
    for key in ("stop.theta", "plot.ami_constant", "encode.threshold"):
        if not math.isfinite(cfg[key]):
            raise ConfigError(f"{key} must be finite")
    if any(not math.isfinite(t) for t in cfg["stop.thetas"]):
        raise ConfigError("stop.thetas must be finite")
    for key, size in (("toy.weights", 4), ("toy.means", 8), ("toy.covariances", 16)):
        if cfg[key] is not None and len(cfg[key]) != size:
            raise ConfigError(f"{key} needs {size} numbers, got {len(cfg[key])}")
    for key in ("cv.rho", "cv.lambda", "cv.C", "cv.t"):
        if len(cfg[key]) == 0:
            raise ConfigError(f"{key} must list at least one value")


def checkpoint_every(cfg: RunConfig) -> int:
    """Every epoch for runs of at most 100 epochs, otherwise about 100 checkpoints."""
    if cfg["train.checkpoint_every"] is not None:
        return cfg["train.checkpoint_every"]
    epochs = cfg["train.epochs"]
    return 1 if epochs <= 100 else -(-epochs // 100)
