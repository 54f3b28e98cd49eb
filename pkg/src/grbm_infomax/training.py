"""Epoch-based GRBM training with per-epoch AMI/FED monitoring and checkpointing."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import infomax
from .core import (CD, PCD, Exact, GradientEstimate, GrbmParams, PersistentChains, TrainConfig,
                   apply_update, cd_gradient, fed, hidden_conditional, pcd_gradient,
                   sparsity_adjustment)
from .errors import ContractViolation, NumericFailure, ResolutionError

log = logging.getLogger(__name__)

# sub-stream tags for SeedSequence([seed, tag, ...])
_SHUFFLE, _CHAINS, _EVAL = 0, 1, 2


class MemoryCheckpointStore:
    """In-process checkpoint store keyed by ``"epoch-NNNN"``."""

    def __init__(self):
        self._items = {}

    def save(self, epoch: int, params: GrbmParams, ami: float) -> str:
        key = f"epoch-{epoch:04d}"
        self._items[key] = params.copy()
        return key

    def load(self, checkpoint_id: str) -> GrbmParams:
        try:
            return self._items[checkpoint_id].copy()
        except KeyError:
            raise ResolutionError(f"checkpoint {checkpoint_id!r} not in store") from None

    def __contains__(self, checkpoint_id) -> bool:
        return checkpoint_id in self._items

    def __len__(self) -> int:
        return len(self._items)


@dataclass
class TrainState:
    """Everything beyond the parameters needed to resume a run bit-identically."""

    epoch: int
    velocity: GradientEstimate
    chains: Optional[PersistentChains] = None


@dataclass
class TrainResult:
    params: GrbmParams
    trace: infomax.AmiTrace
    metrics: list = field(default_factory=list)
    state: Optional[TrainState] = None


def epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng([seed, _SHUFFLE, epoch])


def evaluation_subset(dataset: np.ndarray, size: int, seed: int) -> np.ndarray:
    """Fixed, seed-determined rows used to evaluate AMI every epoch."""
    if len(dataset) <= size:
        return dataset
    idx = np.random.default_rng([seed, _EVAL]).choice(len(dataset), size=size, replace=False)
    return dataset[np.sort(idx)]


def epoch_metrics(params: GrbmParams, eval_set: np.ndarray, heldout=None) -> dict:
    report = infomax.unit_mutual_information(params, eval_set)
    return {
        "ami": report.ami,
        "fed": None if heldout is None else fed(params, eval_set, heldout),
        "mean_abs_weight": float(np.abs(params.W).mean()),
        "sparsity_mean": float(hidden_conditional(params, eval_set).mean()),
        "filter_norm_mean": float(params.filter_norms().mean()),
    }


def _negative_phase_gradient(params, batch, cfg: TrainConfig, rng, chains):
    alg = cfg.algorithm
    if isinstance(alg, CD):
        return cd_gradient(params, batch, alg.k, rng)
    if isinstance(alg, PCD):
        return pcd_gradient(params, batch, chains, alg.k)
    if isinstance(alg, Exact):
        from .oracle import exact_gradient
        return exact_gradient(params, batch)
    raise ContractViolation(f"unknown training algorithm {alg!r}")


def initial_state(params: GrbmParams, dataset: np.ndarray, cfg: TrainConfig) -> TrainState:
    chains = None
    if isinstance(cfg.algorithm, PCD):
        n = cfg.algorithm.n_chains or cfg.batch_size
        start = np.random.default_rng([cfg.seed, _CHAINS]).choice(len(dataset), size=n)
        chains = PersistentChains.create(params, n, np.random.SeedSequence([cfg.seed, _CHAINS]),
                                         init=dataset[start])
    return TrainState(0, GradientEstimate.zeros_like(params), chains)


def train(params: GrbmParams, dataset, cfg: TrainConfig, *, store=None,
          on_epoch: Optional[Callable[[dict, GrbmParams], None]] = None,
          on_checkpoint: Optional[Callable[[TrainState], None]] = None,
          heldout=None, state: Optional[TrainState] = None) -> TrainResult:
    """Train for ``cfg.epochs`` epochs (counted from ``state.epoch`` when resuming).

    Epoch 0 (the initial parameters) is always evaluated and logged, so an
    uninterrupted run produces ``epochs + 1`` metric records.  Checkpoints go to
    ``store`` every ``cfg.checkpoint_every`` epochs and at the final epoch;
    ``on_checkpoint`` then receives the live :class:`TrainState` so callers can
    persist what a resume needs.
    """
    dataset = np.asarray(dataset, dtype=np.float64)
    if dataset.ndim != 2 or dataset.shape[1] != params.N:
        raise ContractViolation(f"dataset rows must have length {params.N}")
    if len(dataset) == 0:
        raise ContractViolation("dataset is empty")
    store = MemoryCheckpointStore() if store is None else store
    eval_set = evaluation_subset(dataset, cfg.ami_eval_size, cfg.seed)
    trace = infomax.AmiTrace()
    metrics = []
    final_epoch = (state.epoch if state else 0) + cfg.epochs

    def record(epoch, p):
        m = epoch_metrics(p, eval_set, heldout)
        ckpt = None
        if epoch % cfg.checkpoint_every == 0 or epoch == final_epoch:
            ckpt = store.save(epoch, p, m["ami"])
        row = {"epoch": epoch, **m, "checkpoint_id": ckpt}
        trace.append(epoch, m["ami"], ckpt)
        metrics.append(row)
        if on_epoch is not None:
            on_epoch(row, p)
        if ckpt is not None and on_checkpoint is not None:
            on_checkpoint(state)

    if state is None:
        state = initial_state(params, dataset, cfg)
        record(0, params)
    n = len(dataset)
    n_batches = -(-n // cfg.batch_size)
    for epoch in range(state.epoch + 1, final_epoch + 1):
        rng = epoch_rng(cfg.seed, epoch)
        order = rng.permutation(n)
        last_good = params
        for bi in range(n_batches):
            batch = dataset[order[bi * cfg.batch_size:(bi + 1) * cfg.batch_size]]
            try:
                grad = _negative_phase_gradient(params, batch, cfg, rng, state.chains)
                if cfg.sparsity is not None:
                    grad = grad + sparsity_adjustment(params, batch, cfg.sparsity)
                params = apply_update(params, grad, cfg, state.velocity)
            except NumericFailure as exc:
                log.error("numeric failure at epoch %d batch %d: %s", epoch, bi, exc)
                raise NumericFailure(f"{exc} at epoch {epoch}, batch {bi}",
                                     last_good=last_good, epoch=epoch, batch=bi) from exc
        state.epoch = epoch
        record(epoch, params)
    return TrainResult(params, trace, metrics, state)
