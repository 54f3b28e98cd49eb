"""Approximated mutual information (AMI) and the AMI-peak early stopping rule.

AMI is the sum over hidden units of I(H_i; D), each term computed exactly from
the activation probabilities on a dataset in O(|D| M) time.  All entropies are
in nats.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import GrbmParams, hidden_conditional
from .errors import ContractViolation, ResolutionError

ENTROPY_EPS = 1e-12
LN2 = math.log(2.0)


def binary_entropy(p) -> np.ndarray:
    p = np.clip(np.asarray(p, dtype=np.float64), ENTROPY_EPS, 1.0 - ENTROPY_EPS)
    return -(p * np.log(p) + (1.0 - p) * np.log1p(-p))


def _data(params: GrbmParams, dataset) -> np.ndarray:
    dataset = np.asarray(dataset, dtype=np.float64)
    if dataset.ndim == 1:
        dataset = dataset[None, :]
    if dataset.ndim != 2 or len(dataset) == 0:
        raise ContractViolation("dataset must be a non-empty 2-D array")
    if dataset.shape[1] != params.N:
        raise ContractViolation(f"dataset rows must have length {params.N}, got {dataset.shape[1]}")
    return dataset


@dataclass
class MutualInfoReport:
    per_unit_mi: np.ndarray
    per_unit_marginal_entropy: np.ndarray
    per_unit_conditional_entropy: np.ndarray
    ami: float
    unit_order: np.ndarray

    def informative_units(self, threshold: float = 0.02) -> np.ndarray:
        """Indices of units whose MI exceeds ``threshold`` nats."""
        return np.flatnonzero(self.per_unit_mi > threshold)

    def to_json(self) -> str:
        return json.dumps({
            "ami": self.ami,
            "per_unit_mi": self.per_unit_mi.tolist(),
            "per_unit_marginal_entropy": self.per_unit_marginal_entropy.tolist(),
            "per_unit_conditional_entropy": self.per_unit_conditional_entropy.tolist(),
            "unit_order": self.unit_order.tolist(),
        })


def unit_activation_marginal(params: GrbmParams, dataset) -> np.ndarray:
    """p(H_i = 1) averaged over the empirical data distribution."""
    return hidden_conditional(params, _data(params, dataset)).mean(axis=0)


def unit_mutual_information(params: GrbmParams, dataset, chunk_size: int = 8192) -> MutualInfoReport:
    dataset = _data(params, dataset)
    n = len(dataset)
    p_sum = np.zeros(params.M)
    cond_sum = np.zeros(params.M)
    for start in range(0, n, chunk_size):
        p = hidden_conditional(params, dataset[start:start + chunk_size])
        p_sum += p.sum(axis=0)
        cond_sum += binary_entropy(p).sum(axis=0)
    marginal = binary_entropy(p_sum / n)
    conditional = cond_sum / n
    mi = np.maximum(marginal - conditional, 0.0)
    return MutualInfoReport(
        per_unit_mi=mi,
        per_unit_marginal_entropy=marginal,
        per_unit_conditional_entropy=conditional,
        ami=float(mi.sum()),
        unit_order=np.argsort(mi, kind="stable"),
    )


def ami(params: GrbmParams, dataset) -> float:
    return unit_mutual_information(params, dataset).ami


# ---------------------------------------------------------------------------
# traces and early stopping


@dataclass
class TraceEntry:
    epoch: int
    ami: float
    checkpoint_id: Optional[str] = None


@dataclass
class AmiTrace:
    entries: list = field(default_factory=list)

    def append(self, epoch: int, value: float, checkpoint_id: Optional[str] = None) -> None:
        if self.entries and epoch <= self.entries[-1].epoch:
            raise ContractViolation("trace epochs must be strictly increasing")
        if not math.isfinite(value):
            raise ContractViolation(f"AMI at epoch {epoch} is not finite")
        self.entries.append(TraceEntry(int(epoch), float(value), checkpoint_id))

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def epochs(self) -> np.ndarray:
        return np.array([e.epoch for e in self.entries], dtype=np.int64)

    @property
    def values(self) -> np.ndarray:
        return np.array([e.ami for e in self.entries], dtype=np.float64)

    @property
    def peak_value(self) -> float:
        return float(self.values.max())

    @property
    def peak_epoch(self) -> int:
        return int(self.epochs[int(np.argmax(self.values))])

    def smoothed(self, window: int) -> "AmiTrace":
        """Trailing moving average over ``window`` entries (window 1 is a copy)."""
        if window < 1:
            raise ContractViolation("smoothing window must be >= 1")
        vals = self.values
        out = AmiTrace()
        for i, e in enumerate(self.entries):
            out.append(e.epoch, float(vals[max(0, i - window + 1):i + 1].mean()), e.checkpoint_id)
        return out

    @classmethod
    def from_records(cls, records) -> "AmiTrace":
        trace = cls()
        for r in records:
            trace.append(r["epoch"], r["ami"], r.get("checkpoint_id"))
        return trace


@dataclass(frozen=True)
class StopCriterion:
    theta: float = 0.0

    def __post_init__(self):
        if not math.isfinite(self.theta):
            raise ContractViolation("theta must be finite")


def ami_bar(trace: AmiTrace, constant: float = 0.0) -> np.ndarray:
    """Reflected trace ``-AMI + constant`` (its argmin is the AMI peak)."""
    if len(trace) == 0:
        raise ContractViolation("trace is empty")
    return -trace.values + constant


def signed_loss(values) -> np.ndarray:
    """Loss of AMI relative to its peak, negated before the peak epoch.

    R(T) = max AMI - AMI(T); the result is R(T) * sign(T - argmin R), with
    sign(0) = 0 and the earliest minimiser used on ties.
    """
    values = np.asarray(values, dtype=np.float64)
    loss = values.max() - values
    t_min = int(np.argmin(loss))
    return loss * np.sign(np.arange(len(values)) - t_min)


def early_stop_index(trace: AmiTrace, criterion: StopCriterion):
    """Epoch and checkpoint id whose signed AMI loss is closest to ``criterion.theta``."""
    if len(trace) == 0:
        raise ContractViolation("trace is empty")
    r = signed_loss(trace.values)
    idx = int(np.argmin(np.abs(r - criterion.theta)))
    entry = trace.entries[idx]
    if entry.checkpoint_id is None:
        raise ResolutionError(
            f"no checkpoint stored for epoch {entry.epoch} (theta={criterion.theta}); "
            "re-run training with a denser checkpoint_every"
        )
    return entry.epoch, entry.checkpoint_id


def select_parameters(trace: AmiTrace, criterion: StopCriterion, store) -> GrbmParams:
    """Load the checkpointed parameters chosen by :func:`early_stop_index`."""
    _, checkpoint_id = early_stop_index(trace, criterion)
    return store.load(checkpoint_id)
