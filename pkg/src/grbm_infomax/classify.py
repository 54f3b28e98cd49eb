"""One-vs-rest linear L2-SVM (squared hinge) and grid cross-validation."""

from __future__ import annotations

import itertools
import json
import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from .errors import ContractViolation

log = logging.getLogger(__name__)


class StratificationError(ContractViolation):
    """A cross-validation fold is missing one of the classes."""


@dataclass
class LinearSvmModel:
    weights: np.ndarray  # (n_classes, dim), in standardized feature space
    biases: np.ndarray
    C: float
    feature_mean: np.ndarray
    feature_std: np.ndarray
    objective_history: list = field(default_factory=list, repr=False, compare=False)

    @property
    def n_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.weights.shape[1]

    def decision_function(self, features) -> np.ndarray:
        X = np.asarray(features, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.dim:
            raise ContractViolation(f"features must have shape (n, {self.dim}), got {X.shape}")
        return ((X - self.feature_mean) / self.feature_std) @ self.weights.T + self.biases


def squared_hinge_objective(w, b, X, y, C) -> float:
    margin = np.maximum(0.0, 1.0 - y * (X @ w + b))
    return 0.5 * float(w @ w) + C * float(margin @ margin)


def _binary_l2svm(X, y, C, tol, max_iter):
    """Gradient descent with Barzilai-Borwein trial steps and Armijo backtracking."""
    n, d = X.shape
    theta = np.zeros(d + 1)

    def obj_grad(th):
        w, b = th[:d], th[d]
        slack = np.maximum(0.0, 1.0 - y * (X @ w + b))
        f = 0.5 * w @ w + C * slack @ slack
        coef = -2.0 * C * slack * y
        g = np.empty(d + 1)
        g[:d] = w + X.T @ coef
        g[d] = coef.sum()
        return f, g

    f, g = obj_grad(theta)
    history = [f]
    step = 1.0 / (1.0 + 2.0 * C * (np.einsum("ij,ij->", X, X) + n))
    prev_theta = prev_g = None
    for _ in range(max_iter):
        if prev_theta is not None:
            s, yk = theta - prev_theta, g - prev_g
            sy = s @ yk
            if sy > 0:
                step = (s @ s) / sy
        gg = g @ g
        if gg == 0.0:
            break
        while True:
            cand = theta - step * g
            f_new, g_new = obj_grad(cand)
            if f_new <= f - 1e-4 * step * gg or step < 1e-300:
                break
            step *= 0.5
        prev_theta, prev_g = theta, g
        decrease = f - f_new
        theta, f, g = cand, f_new, g_new
        history.append(f)
        if decrease <= tol * max(abs(f), 1e-300):
            break
    return theta[:d], theta[d], history


def train_l2svm(features, labels, C: float, tol: float = 1e-8, max_iter: int = 10_000) -> LinearSvmModel:
    """Fit one squared-hinge classifier per class on standardized features.

    Labels are class ids 0..K-1; K is the largest id plus one.
    """
    X = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if X.ndim != 2 or len(X) != len(labels) or len(X) == 0:
        raise ContractViolation("features must be (n, dim) with one label per row")
    if labels.min() < 0:
        raise ContractViolation("class ids must be non-negative")
    if len(np.unique(labels)) < 2:
        raise ContractViolation("an SVM needs at least two classes")
    if not C > 0:
        raise ContractViolation("C must be positive")
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std[std == 0] = 1.0
    Z = (X - mean) / std
    K = int(labels.max()) + 1
    weights = np.zeros((K, Z.shape[1]))
    biases = np.zeros(K)
    history = []
    for c in range(K):
        y = np.where(labels == c, 1.0, -1.0)
        weights[c], biases[c], hist = _binary_l2svm(Z, y, C, tol, max_iter)
        history.append(hist)
    return LinearSvmModel(weights, biases, float(C), mean, std, history)


def predict(model: LinearSvmModel, features) -> np.ndarray:
    """Class with the highest one-vs-rest score (lowest id on ties)."""
    return np.argmax(model.decision_function(features), axis=1)


def accuracy(model: LinearSvmModel, features, labels) -> float:
    labels = np.asarray(labels)
    if len(labels) == 0:
        raise ContractViolation("cannot score an empty set")
    return 100.0 * float(np.mean(predict(model, features) == labels))


# ---------------------------------------------------------------------------
# cross-validation


def _steps(lo, hi, step):
    return [round(x, 10) for x in np.arange(lo, hi + step / 2, step)]


@dataclass
class CvGrid:
    rho_values: Sequence[float] = field(default_factory=lambda: _steps(0.01, 0.06, 0.01))
    lambda_values: Sequence[float] = field(default_factory=lambda: _steps(0.1, 0.5, 0.1))
    C_values: Sequence[float] = (35.0, 75.0, 150.0, 300.0)
    threshold_values: Sequence[float] = field(default_factory=lambda: _steps(0.1, 0.7, 0.1))
    folds: int = 5

    def __post_init__(self):
        if self.folds < 2:
            raise ContractViolation("need at least 2 folds")
        for name in ("rho_values", "lambda_values", "C_values", "threshold_values"):
            if len(getattr(self, name)) == 0:
                raise ContractViolation(f"{name} must be non-empty")

    def combinations(self):
        """(rho, lambda, C, t) in rho-major order."""
        return list(itertools.product(self.rho_values, self.lambda_values, self.C_values, self.threshold_values))


@dataclass
class PipelineHooks:
    """``fit(train_indices, rho, lam)`` builds a representation from training rows only;
    ``encode(rep, indices, t)`` turns rows into features with soft threshold ``t``."""

    fit: Callable[[np.ndarray, float, float], Any]
    encode: Callable[[Any, np.ndarray, float], np.ndarray]


@dataclass
class CvResult:
    best: tuple
    mean_scores: dict
    table: list

    def to_json(self) -> str:
        return json.dumps({
            "best": dict(zip(("rho", "lambda", "C", "t"), self.best)),
            "table": self.table,
        }, indent=1)


def stratified_folds(labels, n_folds: int, seed) -> list:
    """Validation index arrays; each class is dealt round-robin after a seeded shuffle."""
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    folds = [[] for _ in range(n_folds)]
    offset = 0
    for c in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == c))
        for j, i in enumerate(idx):
            folds[(offset + j) % n_folds].append(i)
        offset += len(idx)
    classes = set(np.unique(labels).tolist())
    out = []
    for f, members in enumerate(folds):
        members = np.sort(np.array(members, dtype=np.int64))
        missing = classes - set(labels[members].tolist())
        if missing:
            raise StratificationError(f"fold {f} has no examples of class(es) {sorted(missing)}")
        out.append(members)
    return out


def cross_validate(labels, grid: CvGrid, hooks: PipelineHooks, seed=0) -> CvResult:
    """Score every grid point by mean validation accuracy over stratified folds.

    The best point is the first in grid order among those with the highest mean.
    """
    labels = np.asarray(labels, dtype=np.int64)
    folds = stratified_folds(labels, grid.folds, seed)
    everything = np.arange(len(labels))
    scores = {}
    for f, val_idx in enumerate(folds):
        train_idx = np.setdiff1d(everything, val_idx)
        for rho, lam in itertools.product(grid.rho_values, grid.lambda_values):
            rep = hooks.fit(train_idx, rho, lam)
            for t in grid.threshold_values:
                Xtr = hooks.encode(rep, train_idx, t)
                Xva = hooks.encode(rep, val_idx, t)
                for C in grid.C_values:
                    model = train_l2svm(Xtr, labels[train_idx], C)
                    scores[(f, rho, lam, C, t)] = accuracy(model, Xva, labels[val_idx])
            log.info("fold %d rho=%g lambda=%g done", f, rho, lam)
    table = []
    mean_scores = {}
    for combo in grid.combinations():
        per_fold = [scores[(f, *combo)] for f in range(grid.folds)]
        mean_scores[combo] = float(np.mean(per_fold))
        for f, s in enumerate(per_fold):
            table.append({"fold": f, "rho": combo[0], "lambda": combo[1], "C": combo[2],
                          "t": combo[3], "accuracy": s})
    best = None
    for combo, s in mean_scores.items():
        if best is None or s > mean_scores[best]:
            best = combo
    return CvResult(best, mean_scores, table)
