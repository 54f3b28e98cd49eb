"""Gaussian-Bernoulli RBM: parameters, conditionals, Gibbs sampling and gradients.

Energy convention (sigma is fixed, only W, a, b are learned)::

    E(v, h) = sum_j (v_j - b_j)^2 / (2 sigma_j^2) - sum_i a_i h_i
              - sum_ij (v_j / sigma_j^2) w_ij h_i

so that ``p(h_i = 1 | v) = logistic(a_i + sum_j w_ij v_j / sigma_j^2)`` and
``p(v | h) = N(b + W^T h, diag(sigma^2))``.

Arrays are float64 throughout.  Functions taking ``v`` accept either a single
visible vector of length N or a batch of shape (B, N) and return matching shapes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
from scipy.special import expit

from .errors import ContractViolation, NumericFailure


@dataclass
class GrbmParams:
    """All GRBM parameters; W has one row (filter) per hidden unit."""

    W: np.ndarray
    a: np.ndarray
    b: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        self.W = np.array(self.W, dtype=np.float64, ndmin=2)
        self.a = np.array(self.a, dtype=np.float64).reshape(-1)
        self.b = np.array(self.b, dtype=np.float64).reshape(-1)
        self.sigma = np.array(self.sigma, dtype=np.float64).reshape(-1)
        M, N = self.W.shape
        if M < 1 or N < 1:
            raise ContractViolation(f"need M >= 1 and N >= 1, got W of shape {self.W.shape}")
        if self.a.shape != (M,) or self.b.shape != (N,) or self.sigma.shape != (N,):
            raise ContractViolation(
                f"shape mismatch: W {self.W.shape}, a {self.a.shape}, "
                f"b {self.b.shape}, sigma {self.sigma.shape}"
            )
        if not (np.all(np.isfinite(self.W)) and np.all(np.isfinite(self.a))
                and np.all(np.isfinite(self.b)) and np.all(np.isfinite(self.sigma))):
            raise NumericFailure("GRBM parameters contain non-finite entries")
        if np.any(self.sigma <= 0):
            raise ContractViolation("sigma must be strictly positive")

    @property
    def M(self) -> int:
        return self.W.shape[0]

    @property
    def N(self) -> int:
        return self.W.shape[1]

    @property
    def var(self) -> np.ndarray:
        return self.sigma ** 2

    def copy(self) -> "GrbmParams":
        return GrbmParams(self.W.copy(), self.a.copy(), self.b.copy(), self.sigma.copy())

    def filter_norms(self) -> np.ndarray:
        return np.linalg.norm(self.W, axis=1)

    def identical_to(self, other: "GrbmParams") -> bool:
        """Bitwise equality of every array."""
        return all(
            x.shape == y.shape and x.tobytes() == y.tobytes()
            for x, y in zip((self.W, self.a, self.b, self.sigma),
                            (other.W, other.a, other.b, other.sigma))
        )


def init_params(M: int, N: int, rng, sigma=1.0, weight_std: float = 0.01) -> GrbmParams:
    """Small Gaussian weights, zero biases, constant (or given) sigma."""
    rng = np.random.default_rng(rng)
    W = weight_std * rng.standard_normal((M, N))
    sig = np.broadcast_to(np.asarray(sigma, dtype=np.float64), (N,)).copy()
    return GrbmParams(W, np.zeros(M), np.zeros(N), sig)


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class CD:
    k: int = 1

    def __post_init__(self):
        if self.k < 1:
            raise ContractViolation("CD requires k >= 1")


@dataclass(frozen=True)
class PCD:
    k: int = 1
    n_chains: Optional[int] = None  # None -> batch_size

    def __post_init__(self):
        if self.k < 1:
            raise ContractViolation("PCD requires k >= 1")
        if self.n_chains is not None and self.n_chains < 1:
            raise ContractViolation("PCD requires n_chains >= 1")


@dataclass(frozen=True)
class Exact:
    """Exact likelihood gradient by enumeration (tiny models only)."""


Algorithm = Union[CD, PCD, Exact]


@dataclass(frozen=True)
class SparsityConfig:
    target: float
    strength: float
    apply_to_weights: bool = False

    def __post_init__(self):
        if not 0.0 < self.target < 1.0:
            raise ContractViolation(f"sparsity target must lie in (0, 1), got {self.target}")
        if self.strength < 0:
            raise ContractViolation(f"sparsity strength must be >= 0, got {self.strength}")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.003
    epochs: int = 80
    batch_size: int = 100
    algorithm: Algorithm = field(default_factory=PCD)
    sparsity: Optional[SparsityConfig] = None
    momentum: float = 0.0
    seed: int = 0
    checkpoint_every: int = 1
    ami_eval_size: int = 10_000
    ami_window: int = 1

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ContractViolation("learning_rate must be > 0")
        if self.epochs < 0:
            raise ContractViolation("epochs must be >= 0")
        if self.batch_size < 1:
            raise ContractViolation("batch_size must be >= 1")
        if self.checkpoint_every < 1:
            raise ContractViolation("checkpoint_every must be >= 1")
        if not 0.0 <= self.momentum < 1.0:
            raise ContractViolation("momentum must lie in [0, 1)")
        if self.ami_window < 1:
            raise ContractViolation("ami_window must be >= 1")


@dataclass
class GradientEstimate:
    dW: np.ndarray
    da: np.ndarray
    db: np.ndarray

    @classmethod
    def zeros_like(cls, params: GrbmParams) -> "GradientEstimate":
        return cls(np.zeros_like(params.W), np.zeros_like(params.a), np.zeros_like(params.b))

    def __add__(self, other: "GradientEstimate") -> "GradientEstimate":
        return GradientEstimate(self.dW + other.dW, self.da + other.da, self.db + other.db)

    def scaled(self, c: float) -> "GradientEstimate":
        return GradientEstimate(c * self.dW, c * self.da, c * self.db)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.dW)) and np.all(np.isfinite(self.da))
                    and np.all(np.isfinite(self.db)))

    def copy(self) -> "GradientEstimate":
        return GradientEstimate(self.dW.copy(), self.da.copy(), self.db.copy())


# ---------------------------------------------------------------------------
# conditionals and sampling


def _visible(params: GrbmParams, v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != params.N or v.ndim not in (1, 2):
        raise ContractViolation(f"expected visible vector(s) of length {params.N}, got shape {v.shape}")
    return v


def _hidden(params: GrbmParams, h) -> np.ndarray:
    h = np.asarray(h, dtype=np.float64)
    if h.shape[-1] != params.M or h.ndim not in (1, 2):
        raise ContractViolation(f"expected hidden vector(s) of length {params.M}, got shape {h.shape}")
    return h


def hidden_input(params: GrbmParams, v) -> np.ndarray:
    """Pre-activation a_i + sum_j w_ij v_j / sigma_j^2."""
    v = _visible(params, v)
    return (v / params.var) @ params.W.T + params.a


def hidden_conditional(params: GrbmParams, v) -> np.ndarray:
    """p(H_i = 1 | v) for every hidden unit."""
    return expit(hidden_input(params, v))


def visible_conditional(params: GrbmParams, h):
    """Mean and variance of the Gaussian p(v | h)."""
    h = _hidden(params, h)
    mean = h @ params.W + params.b
    var = np.broadcast_to(params.var, mean.shape).copy()
    return mean, var


def sample_hidden(params: GrbmParams, v, rng: np.random.Generator) -> np.ndarray:
    p = hidden_conditional(params, v)
    return (rng.random(p.shape) < p).astype(np.float64)


def sample_visible(params: GrbmParams, h, rng: np.random.Generator) -> np.ndarray:
    mean, _ = visible_conditional(params, h)
    return mean + params.sigma * rng.standard_normal(mean.shape)


# ---------------------------------------------------------------------------
# gradients


def _batch(params: GrbmParams, batch) -> np.ndarray:
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim == 1:
        batch = batch[None, :]
    if batch.ndim != 2 or batch.shape[1] != params.N:
        raise ContractViolation(f"batch must have shape (B, {params.N}), got {batch.shape}")
    if batch.shape[0] < 1:
        raise ContractViolation("batch must contain at least one case")
    return batch


def _statistics_difference(params, v_pos, ph_pos, v_neg, ph_neg) -> GradientEstimate:
    """Mean positive minus mean negative sufficient statistics.

    The 1/sigma^2 factors make this the exact log-likelihood gradient when the
    negative phase is drawn from the model.
    """
    var = params.var
    dW = (ph_pos.T @ v_pos / v_pos.shape[0] - ph_neg.T @ v_neg / v_neg.shape[0]) / var
    da = ph_pos.mean(axis=0) - ph_neg.mean(axis=0)
    db = (v_pos.mean(axis=0) - v_neg.mean(axis=0)) / var
    return GradientEstimate(dW, da, db)


def _check_finite(grad: GradientEstimate, where: str) -> GradientEstimate:
    if not grad.is_finite():
        raise NumericFailure(f"non-finite gradient ({where})")
    return grad


def gibbs_chain(params: GrbmParams, v, k: int, rng: np.random.Generator):
    """Run k full v -> h -> v sweeps; returns the final visible states."""
    for _ in range(k):
        h = sample_hidden(params, v, rng)
        v = sample_visible(params, h, rng)
    return v


def cd_gradient(params: GrbmParams, batch, k: int, rng: np.random.Generator) -> GradientEstimate:
    """CD-k estimate of the log-likelihood gradient averaged over ``batch``."""
    if k < 1:
        raise ContractViolation("k must be >= 1")
    batch = _batch(params, batch)
    ph_pos = hidden_conditional(params, batch)
    h = (rng.random(ph_pos.shape) < ph_pos).astype(np.float64)
    v = sample_visible(params, h, rng)
    for _ in range(k - 1):
        v = gibbs_chain(params, v, 1, rng)
    ph_neg = hidden_conditional(params, v)
    return _check_finite(_statistics_difference(params, batch, ph_pos, v, ph_neg), "cd_gradient")


class PersistentChains:
    """Fantasy particles for PCD; chain ``i`` is only ever advanced by ``streams[i]``."""

    def __init__(self, states, streams):
        states = np.array(states, dtype=np.float64, ndmin=2)
        if states.shape[0] < 1:
            raise ContractViolation("need at least one persistent chain")
        if len(streams) != states.shape[0]:
            raise ContractViolation("one RNG stream per chain is required")
        if not np.all(np.isfinite(states)):
            raise NumericFailure("persistent chain states are not finite")
        self.states = states
        self.streams = list(streams)

    @classmethod
    def create(cls, params: GrbmParams, n_chains: int, seed, init=None) -> "PersistentChains":
        """Start chains from ``init`` rows (e.g. data) or from p(v | h=0)."""
        if n_chains < 1:
            raise ContractViolation("n_chains must be >= 1")
        seq = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        streams = [np.random.Generator(np.random.PCG64(s)) for s in seq.spawn(n_chains)]
        if init is not None:
            init = np.array(init, dtype=np.float64, ndmin=2)
            states = init[np.arange(n_chains) % init.shape[0]].copy()
        else:
            states = np.stack([params.b + params.sigma * g.standard_normal(params.N) for g in streams])
        return cls(states, streams)

    @property
    def n_chains(self) -> int:
        return self.states.shape[0]

    def advance(self, params: GrbmParams, k: int) -> None:
        """Advance every chain k Gibbs sweeps in place."""
        M, N = params.M, params.N
        u = np.empty((k, self.n_chains, M))
        z = np.empty((k, self.n_chains, N))
        for c, g in enumerate(self.streams):
            u[:, c, :] = g.random((k, M))
            z[:, c, :] = g.standard_normal((k, N))
        v = self.states
        for step in range(k):
            h = (u[step] < hidden_conditional(params, v)).astype(np.float64)
            mean, _ = visible_conditional(params, h)
            v = mean + params.sigma * z[step]
        if not np.all(np.isfinite(v)):
            raise NumericFailure("persistent chains diverged")
        self.states = v

    def get_state(self) -> dict:
        return {"states": self.states.copy(),
                "streams": [g.bit_generator.state for g in self.streams]}

    @classmethod
    def from_state(cls, state: dict) -> "PersistentChains":
        streams = []
        for s in state["streams"]:
            g = np.random.Generator(np.random.PCG64())
            g.bit_generator.state = s
            streams.append(g)
        return cls(state["states"], streams)


def pcd_gradient(params: GrbmParams, batch, chains: PersistentChains, k: int) -> GradientEstimate:
    """PCD-k gradient; advances ``chains`` in place and uses them as the negative phase."""
    if k < 1:
        raise ContractViolation("k must be >= 1")
    batch = _batch(params, batch)
    if chains.states.shape[1] != params.N:
        raise ContractViolation("chain dimension does not match the model")
    ph_pos = hidden_conditional(params, batch)
    chains.advance(params, k)
    v_neg = chains.states
    ph_neg = hidden_conditional(params, v_neg)
    return _check_finite(_statistics_difference(params, batch, ph_pos, v_neg, ph_neg), "pcd_gradient")


def sparsity_adjustment(params: GrbmParams, batch, cfg: SparsityConfig) -> GradientEstimate:
    """Pull batch-mean hidden activations q_i towards the target: da_i = strength * (target - q_i)."""
    batch = _batch(params, batch)
    p = hidden_conditional(params, batch)
    gap = cfg.target - p.mean(axis=0)
    grad = GradientEstimate.zeros_like(params)
    grad.da = cfg.strength * gap
    if cfg.apply_to_weights:
        # chain rule through the logistic: d q_i / d w_ij = mean p_i (1 - p_i) v_j / sigma_j^2
        slope = (p * (1.0 - p)).T @ (batch / params.var) / batch.shape[0]
        grad.dW = cfg.strength * gap[:, None] * slope
    return grad


def apply_update(params: GrbmParams, grad: GradientEstimate, cfg: TrainConfig,
                 velocity: GradientEstimate) -> GrbmParams:
    """Momentum SGD ascent step; ``velocity`` is updated in place, sigma is never touched."""
    if grad.dW.shape != params.W.shape or grad.da.shape != params.a.shape or grad.db.shape != params.b.shape:
        raise ContractViolation("gradient dimensions do not match the parameters")
    mu, lr = cfg.momentum, cfg.learning_rate
    velocity.dW = mu * velocity.dW + lr * grad.dW
    velocity.da = mu * velocity.da + lr * grad.da
    velocity.db = mu * velocity.db + lr * grad.db
    W = params.W + velocity.dW
    a = params.a + velocity.da
    b = params.b + velocity.db
    if not (np.all(np.isfinite(W)) and np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise NumericFailure("parameter update produced non-finite values")
    return GrbmParams(W, a, b, params.sigma.copy())


# ---------------------------------------------------------------------------
# free energy


def free_energy(params: GrbmParams, v):
    """F(v) with exp(-F(v)) proportional to the marginal p(v)."""
    v = _visible(params, v)
    quad = (((v - params.b) ** 2) / (2.0 * params.var)).sum(axis=-1)
    softplus = np.logaddexp(0.0, hidden_input(params, v)).sum(axis=-1)
    out = quad - softplus
    return float(out) if np.ndim(out) == 0 else out


def fed(params: GrbmParams, train_set, test_set) -> float:
    """Mean free energy of ``test_set`` minus that of ``train_set``."""
    train_set = np.asarray(train_set, dtype=np.float64)
    test_set = np.asarray(test_set, dtype=np.float64)
    if len(train_set) == 0 or len(test_set) == 0:
        raise ContractViolation("free energy difference needs non-empty train and test sets")
    return float(np.mean(free_energy(params, test_set)) - np.mean(free_energy(params, train_set)))
